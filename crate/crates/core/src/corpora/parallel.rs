use std::path::Path;

use serde::{Deserialize, Serialize};

use super::vocab::Vocabulary;
use crate::error::{Error, Result};

/// Filter applied to training pairs: either side longer than this is dropped.
pub const DEFAULT_MAX_TRAIN_LEN: usize = 50;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParallelExample {
    pub source_tokens: Vec<String>,
    pub target_tokens: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ParallelStats {
    pub read: usize,
    pub kept: usize,
    pub dropped_too_long: usize,
}

/// A pair as index sequences, without boundary tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedPair {
    pub source: Vec<usize>,
    pub target: Vec<usize>,
}

pub(crate) fn tokenize(line: &str) -> Vec<String> {
    line.split_whitespace().map(str::to_string).collect()
}

pub(crate) fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(|l| l.trim_end_matches('\r').to_string()).collect())
}

/// Loads two aligned files. With `max_len`, pairs where either side has
/// more than `max_len` tokens are dropped; without it every pair is kept.
pub fn load_parallel(
    source_path: &Path,
    target_path: &Path,
    max_len: Option<usize>,
) -> Result<(Vec<ParallelExample>, ParallelStats)> {
    let src = read_lines(source_path)?;
    let tgt = read_lines(target_path)?;
    if src.len() != tgt.len() {
        return Err(Error::Alignment {
            source_path: source_path.to_path_buf(),
            source_lines: src.len(),
            target_path: target_path.to_path_buf(),
            target_lines: tgt.len(),
        });
    }
    let mut stats = ParallelStats::default();
    let mut out = Vec::with_capacity(src.len());
    for (i, (s, t)) in src.iter().zip(&tgt).enumerate() {
        let (s, t) = (tokenize(s), tokenize(t));
        for (toks, path) in [(&s, source_path), (&t, target_path)] {
            if toks.is_empty() {
                return Err(Error::format(path, format!("line {} is empty", i + 1)));
            }
        }
        stats.read += 1;
        if max_len.is_some_and(|m| s.len() > m || t.len() > m) {
            stats.dropped_too_long += 1;
            continue;
        }
        stats.kept += 1;
        out.push(ParallelExample {
            source_tokens: s,
            target_tokens: t,
        });
    }
    Ok((out, stats))
}

pub fn encode_parallel(
    examples: &[ParallelExample],
    source_vocab: &Vocabulary,
    target_vocab: &Vocabulary,
) -> Vec<EncodedPair> {
    examples
        .iter()
        .map(|ex| EncodedPair {
            source: source_vocab.encode(&ex.source_tokens, false),
            target: target_vocab.encode(&ex.target_tokens, false),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;

    fn write(dir: &Path, name: &str, lines: &[String]) -> std::path::PathBuf {
        let p = dir.join(name);
        let mut f = std::fs::File::create(&p).unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        p
    }

    fn sentence(n: usize) -> String {
        (0..n).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ")
    }

    #[test]
    fn length_filter_boundaries() {
        let dir = tempfile::tempdir().unwrap();
        let s = write(dir.path(), "s", &[sentence(51), sentence(50), sentence(80)]);
        let t = write(dir.path(), "t", &[sentence(3), sentence(50), sentence(2)]);
        let (ex, stats) = load_parallel(&s, &t, Some(50)).unwrap();
        assert_eq!(ex.len(), 1);
        assert_eq!(ex[0].source_tokens.len(), 50);
        assert_eq!(stats, ParallelStats { read: 3, kept: 1, dropped_too_long: 2 });

        let (ex, stats) = load_parallel(&s, &t, None).unwrap();
        assert_eq!(ex.len(), 3);
        assert_eq!(ex[2].source_tokens.len(), 80);
        assert_eq!(stats.dropped_too_long, 0);
    }

    #[test]
    fn alignment_and_format_errors() {
        let dir = tempfile::tempdir().unwrap();
        let s = write(dir.path(), "s", &["a b".into(), "c".into()]);
        let t = write(dir.path(), "t", &["x".into()]);
        match load_parallel(&s, &t, None).unwrap_err() {
            Error::Alignment { source_lines, target_lines, .. } => {
                assert_eq!((source_lines, target_lines), (2, 1))
            }
            e => panic!("{e}"),
        }
        let t = write(dir.path(), "t2", &["x".into(), "".into()]);
        let err = load_parallel(&s, &t, None).unwrap_err();
        assert!(matches!(&err, Error::Format { message, .. } if message.contains("line 2")), "{err}");
    }

    proptest! {
        #[test]
        fn raising_max_len_never_drops_kept_pairs(
            lens in proptest::collection::vec((1usize..30, 1usize..30), 1..20),
            lo in 1usize..30,
            extra in 0usize..10,
        ) {
            let dir = tempfile::tempdir().unwrap();
            let s = write(dir.path(), "s", &lens.iter().map(|l| sentence(l.0)).collect::<Vec<_>>());
            let t = write(dir.path(), "t", &lens.iter().map(|l| sentence(l.1)).collect::<Vec<_>>());
            let (small, _) = load_parallel(&s, &t, Some(lo)).unwrap();
            let (big, _) = load_parallel(&s, &t, Some(lo + extra)).unwrap();
            // Order-preserving subsequence check.
            let mut it = big.iter();
            for ex in &small {
                prop_assert!(it.any(|b| b == ex));
            }
        }
    }
}
