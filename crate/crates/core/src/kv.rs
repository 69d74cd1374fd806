//! Line-oriented `key = value` documents with optional `[section]` headers.
//! `#` starts a comment line. Keys before the first header live in the root
//! section, named `""`.

use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KvSection {
    pub name: String,
    entries: Vec<(String, String)>,
}

impl KvSection {
    pub fn new(name: impl Into<String>) -> Self {
        KvSection {
            name: name.into(),
            entries: Vec::new(),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .rev()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    /// Replaces an existing key or appends a new one.
    pub fn set(&mut self, key: impl Into<String>, value: impl Display) {
        let key = key.into();
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| *k == key) {
            Some(slot) => slot.1 = value,
            None => self.entries.push((key, value)),
        }
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn parse<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        self.get(key)
            .map(|v| {
                v.parse::<T>().map_err(|e| {
                    Error::Validation(format!("[{}] {key} = {v:?}: {e}", self.name))
                })
            })
            .transpose()
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: Display,
    {
        self.parse(key)?.ok_or_else(|| {
            Error::Validation(format!("[{}] is missing required key {key:?}", self.name))
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KvDocument {
    sections: Vec<KvSection>,
}

impl KvDocument {
    pub fn new() -> Self {
        KvDocument {
            sections: vec![KvSection::new("")],
        }
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut doc = KvDocument::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                if name.trim().is_empty() {
                    return Err(Error::format(origin, format!("line {}: empty section name", i + 1)));
                }
                doc.section_mut(name.trim());
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::format(
                    origin,
                    format!("line {}: expected key = value", i + 1),
                ));
            };
            let section = doc.sections.last_mut().expect("root section");
            section.entries.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(doc)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn root(&self) -> &KvSection {
        &self.sections[0]
    }

    pub fn root_mut(&mut self) -> &mut KvSection {
        &mut self.sections[0]
    }

    pub fn section(&self, name: &str) -> Option<&KvSection> {
        self.sections.iter().find(|s| s.name == name)
    }

    /// Returns the named section, creating it at the end if absent.
    pub fn section_mut(&mut self, name: &str) -> &mut KvSection {
        match self.sections.iter().position(|s| s.name == name) {
            Some(i) => {
                // Re-opened sections keep appending to the original.
                let s = self.sections.remove(i);
                self.sections.push(s);
            }
            None => self.sections.push(KvSection::new(name)),
        }
        self.sections.last_mut().expect("just pushed")
    }

    /// Sections whose name starts with `prefix.`, with the suffix.
    pub fn sections_with_prefix<'a>(
        &'a self,
        prefix: &'a str,
    ) -> impl Iterator<Item = (&'a str, &'a KvSection)> + 'a {
        self.sections.iter().filter_map(move |s| {
            s.name
                .strip_prefix(prefix)
                .and_then(|rest| rest.strip_prefix('.'))
                .map(|rest| (rest, s))
        })
    }

    pub fn sections(&self) -> &[KvSection] {
        &self.sections
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for s in &self.sections {
            if s.name.is_empty() && s.entries.is_empty() {
                continue;
            }
            if !s.name.is_empty() {
                if !out.is_empty() {
                    out.push('\n');
                }
                out.push_str(&format!("[{}]\n", s.name));
            }
            for (k, v) in &s.entries {
                out.push_str(&format!("{k} = {v}\n"));
            }
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render()).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_render() {
        let text = "# run\nseed = 7\n\n[nmt]\nd = 16\nlayers=2\n[dataset.dpr]\nscheme = two_way\n";
        let doc = KvDocument::parse(text, Path::new("x")).unwrap();
        assert_eq!(doc.root().get("seed"), Some("7"));
        assert_eq!(doc.section("nmt").unwrap().require::<usize>("layers").unwrap(), 2);
        let ds: Vec<_> = doc.sections_with_prefix("dataset").map(|(n, _)| n).collect();
        assert_eq!(ds, ["dpr"]);
        let again = KvDocument::parse(&doc.render(), Path::new("x")).unwrap();
        assert_eq!(again, doc);
    }

    #[test]
    fn bad_line_names_line_number() {
        let err = KvDocument::parse("a = 1\nnonsense\n", Path::new("cfg")).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn typed_lookup_errors() {
        let doc = KvDocument::parse("[nmt]\nd = lots\n", Path::new("x")).unwrap();
        let nmt = doc.section("nmt").unwrap();
        assert!(matches!(nmt.require::<usize>("d"), Err(Error::Validation(_))));
        assert!(matches!(nmt.require::<usize>("layers"), Err(Error::Validation(_))));
    }
}
