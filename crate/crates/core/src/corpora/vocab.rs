use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;
pub const RESERVED: [&str; 4] = ["<pad>", "<unk>", "<s>", "</s>"];

pub const DEFAULT_MAX_VOCAB: usize = 75_000;

/// Token ↔ index mapping with four reserved slots at the front.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    id_of: HashMap<String, usize>,
    token_of: Vec<String>,
    max_size: usize,
}

impl Vocabulary {
    fn with_tokens(tokens: Vec<String>, max_size: usize) -> Result<Self> {
        if max_size < RESERVED.len() + 1 {
            return Err(Error::Validation(format!(
                "vocabulary max_size must be at least {}, got {max_size}",
                RESERVED.len() + 1
            )));
        }
        let mut token_of: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        token_of.extend(tokens);
        if token_of.len() > max_size {
            return Err(Error::Validation(format!(
                "{} tokens exceed max_size {max_size}",
                token_of.len()
            )));
        }
        let mut id_of = HashMap::with_capacity(token_of.len());
        for (i, t) in token_of.iter().enumerate() {
            if id_of.insert(t.clone(), i).is_some() {
                return Err(Error::Validation(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Vocabulary {
            id_of,
            token_of,
            max_size,
        })
    }

    pub fn len(&self) -> usize {
        self.token_of.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn max_size(&self) -> usize {
        self.max_size
    }

    pub fn id(&self, token: &str) -> usize {
        self.id_of.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.id_of.contains_key(token)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.token_of.get(id).map(String::as_str)
    }

    /// Unknown tokens map to UNK; `add_boundaries` wraps in BOS … EOS.
    pub fn encode<S: AsRef<str>>(&self, sentence: &[S], add_boundaries: bool) -> Vec<usize> {
        let mut out = Vec::with_capacity(sentence.len() + 2);
        if add_boundaries {
            out.push(BOS);
        }
        out.extend(sentence.iter().map(|t| self.id(t.as_ref())));
        if add_boundaries {
            out.push(EOS);
        }
        out
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .map(|&i| self.token(i).unwrap_or(RESERVED[UNK]).to_string())
            .collect()
    }

    /// One token per line, reserved tokens first, max size on the first line.
    pub fn to_text(&self) -> String {
        let mut s = format!("{}\n", self.max_size);
        for t in &self.token_of[RESERVED.len()..] {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let max_size = lines
            .next()
            .and_then(|l| l.trim().parse().ok())
            .ok_or_else(|| Error::format("<vocabulary>", "first line must hold max_size"))?;
        Self::with_tokens(lines.map(str::to_string).collect(), max_size)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text).map_err(|e| match e {
            Error::Format { message, .. } => Error::format(path, message),
            other => other,
        })
    }
}

/// Keeps the `max_size − 4` most frequent tokens; frequency ties go to the
/// lexicographically smaller token.
pub fn build_vocab<'a, I, S>(sentences: I, max_size: usize) -> Result<Vocabulary>
where
    I: IntoIterator<Item = &'a [S]>,
    S: AsRef<str> + 'a,
{
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for sentence in sentences {
        for tok in sentence {
            let tok = tok.as_ref();
            if RESERVED.contains(&tok) {
                continue;
            }
            *counts.entry(tok).or_default() += 1;
        }
    }
    let mut ranked: Vec<(&str, u64)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let room = max_size.saturating_sub(RESERVED.len());
    let tokens = ranked
        .into_iter()
        .take(room)
        .map(|(t, _)| t.to_string())
        .collect();
    Vocabulary::with_tokens(tokens, max_size)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn frequency_cut() {
        let corpus = [toks("a b a c"), toks("b a")];
        let v = build_vocab(corpus.iter().map(Vec::as_slice), 6).unwrap();
        assert_eq!(v.len(), 6);
        assert!(v.contains("a") && v.contains("b") && !v.contains("c"));
        assert_eq!(v.id("a"), 4);
        assert_eq!(v.id("b"), 5);
    }

    #[test]
    fn lexicographic_tie_break() {
        let corpus = [toks("b a b a")];
        let v = build_vocab(corpus.iter().map(Vec::as_slice), 5).unwrap();
        assert!(v.contains("a"));
        assert!(!v.contains("b"));
    }

    #[test]
    fn max_size_validated() {
        let corpus: [Vec<String>; 0] = [];
        assert!(build_vocab(corpus.iter().map(Vec::as_slice), 4).is_err());
        assert!(build_vocab(corpus.iter().map(Vec::as_slice), 5).is_ok());
    }

    #[test]
    fn encode_examples() {
        let corpus = [toks("x y")];
        let v = build_vocab(corpus.iter().map(Vec::as_slice), 10).unwrap();
        assert_eq!(v.encode(&toks("y unseen"), false), vec![v.id("y"), UNK]);
        let empty: [&str; 0] = [];
        assert_eq!(v.encode(&empty, true), vec![BOS, EOS]);
        assert_eq!(v.decode(&v.encode(&toks("x y x"), false)), toks("x y x"));
    }

    #[test]
    fn text_round_trip() {
        let corpus = [toks("the cat sat on the mat")];
        let v = build_vocab(corpus.iter().map(Vec::as_slice), 100).unwrap();
        assert_eq!(Vocabulary::from_text(&v.to_text()).unwrap(), v);
    }

    proptest! {
        #[test]
        fn known_tokens_round_trip(words in proptest::collection::vec("[a-e]{1,3}", 1..30), max in 5usize..20) {
            let v = build_vocab(std::iter::once(words.as_slice()), max).unwrap();
            prop_assert!(v.len() <= max);
            let known: Vec<&String> = words.iter().filter(|w| v.contains(w)).collect();
            let ids = v.encode(&known, false);
            let back = v.decode(&ids);
            prop_assert!(back.iter().zip(&known).all(|(a, b)| a == *b));
        }
    }
}
