use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::parallel::{read_lines, tokenize};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelScheme {
    TwoWay,
    ThreeWay,
}

impl LabelScheme {
    pub fn labels(self) -> &'static [&'static str] {
        match self {
            LabelScheme::TwoWay => &["entailed", "not_entailed"],
            LabelScheme::ThreeWay => &["entailment", "neutral", "contradiction"],
        }
    }

    pub fn num_labels(self) -> usize {
        self.labels().len()
    }

    pub fn label_index(self, name: &str) -> Option<usize> {
        self.labels().iter().position(|l| *l == name)
    }

    pub fn label_name(self, index: usize) -> Option<&'static str> {
        self.labels().get(index).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            LabelScheme::TwoWay => "two_way",
            LabelScheme::ThreeWay => "three_way",
        }
    }
}

impl FromStr for LabelScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two_way" | "2" => Ok(LabelScheme::TwoWay),
            "three_way" | "3" => Ok(LabelScheme::ThreeWay),
            other => Err(Error::Validation(format!("unknown label scheme {other:?}"))),
        }
    }
}

impl fmt::Display for LabelScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TagMatch {
    Same,
    Different,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(Error::Validation(format!("unknown split {other:?}"))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NliMeta {
    pub attribute: Option<String>,
    pub tag_match: Option<TagMatch>,
    pub genre: Option<String>,
    pub split: Option<Split>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NliExample {
    pub context: Vec<String>,
    pub hypothesis: Vec<String>,
    /// Index into the dataset's [`LabelScheme`].
    pub label: usize,
    pub meta: NliMeta,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitStats {
    pub count: u64,
    pub label_histogram: BTreeMap<String, u64>,
}

/// Row counts and label histograms keyed by split name. Rows without a
/// split column are counted under `"unsplit"`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub splits: BTreeMap<String, SplitStats>,
}

pub const UNSPLIT: &str = "unsplit";

impl DatasetStats {
    pub fn from_examples(examples: &[NliExample], scheme: LabelScheme) -> Self {
        let mut splits: BTreeMap<String, SplitStats> = BTreeMap::new();
        for ex in examples {
            let key = ex.meta.split.map_or(UNSPLIT, Split::name);
            let entry = splits.entry(key.to_string()).or_insert_with(|| SplitStats {
                count: 0,
                label_histogram: scheme.labels().iter().map(|l| (l.to_string(), 0)).collect(),
            });
            entry.count += 1;
            let name = scheme.label_name(ex.label).expect("validated at load");
            *entry.label_histogram.entry(name.to_string()).or_default() += 1;
        }
        DatasetStats { splits }
    }

    pub fn count(&self, split: &str) -> u64 {
        self.splits.get(split).map_or(0, |s| s.count)
    }
}

const MANDATORY: [&str; 3] = ["context", "hypothesis", "label"];

/// Reads a headered TSV. Mandatory columns: `context`, `hypothesis`,
/// `label`; optional: `attribute`, `tag_match`, `genre`, `split`. Other
/// columns are ignored. Examples keep file order.
pub fn load_nli(path: &Path, scheme: LabelScheme) -> Result<(Vec<NliExample>, DatasetStats)> {
    let lines = read_lines(path)?;
    let Some(header) = lines.first() else {
        return Err(Error::format(path, "missing header row"));
    };
    let columns: Vec<&str> = header.split('\t').map(str::trim).collect();
    let col = |name: &str| columns.iter().position(|c| *c == name);
    for name in MANDATORY {
        if col(name).is_none() {
            return Err(Error::format(path, format!("missing mandatory column {name:?}")));
        }
    }
    let (ci, hi, li) = (col("context").unwrap(), col("hypothesis").unwrap(), col("label").unwrap());
    let (ai, ti, gi, si) = (col("attribute"), col("tag_match"), col("genre"), col("split"));

    let mut examples = Vec::with_capacity(lines.len().saturating_sub(1));
    for (n, line) in lines.iter().enumerate().skip(1) {
        let row = n + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != columns.len() {
            return Err(Error::format(
                path,
                format!("row {row} has {} fields, header has {}", fields.len(), columns.len()),
            ));
        }
        let opt = |i: Option<usize>| i.map(|i| fields[i].trim()).filter(|v| !v.is_empty());
        let context = tokenize(fields[ci]);
        let hypothesis = tokenize(fields[hi]);
        if context.is_empty() || hypothesis.is_empty() {
            return Err(Error::format(path, format!("row {row} has an empty sentence")));
        }
        let raw = fields[li].trim();
        let label = scheme.label_index(raw).ok_or_else(|| {
            Error::Label(format!(
                "{}: row {row}: label {raw:?} is not in the {scheme} scheme {:?}",
                path.display(),
                scheme.labels()
            ))
        })?;
        let tag_match = match opt(ti) {
            None => None,
            Some("same") => Some(TagMatch::Same),
            Some("different") => Some(TagMatch::Different),
            Some(other) => {
                return Err(Error::format(
                    path,
                    format!("row {row}: tag_match must be same or different, got {other:?}"),
                ))
            }
        };
        let split = opt(si)
            .map(|s| s.parse::<Split>())
            .transpose()
            .map_err(|e| Error::format(path, format!("row {row}: {e}")))?;
        examples.push(NliExample {
            context,
            hypothesis,
            label,
            meta: NliMeta {
                attribute: opt(ai).map(str::to_string),
                tag_match,
                genre: opt(gi).map(str::to_string),
                split,
            },
        });
    }
    let stats = DatasetStats::from_examples(&examples, scheme);
    Ok((examples, stats))
}

/// A loaded NLI dataset with optional per-split files merged into one list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NliDataset {
    pub id: String,
    pub scheme: LabelScheme,
    pub examples: Vec<NliExample>,
}

impl NliDataset {
    /// One file whose `split` column assigns every row.
    pub fn load(id: impl Into<String>, path: &Path, scheme: LabelScheme) -> Result<Self> {
        let (examples, _) = load_nli(path, scheme)?;
        Ok(NliDataset {
            id: id.into(),
            scheme,
            examples,
        })
    }

    /// Separate files per split; the file decides the split of its rows.
    pub fn load_splits(
        id: impl Into<String>,
        files: &[(Split, &Path)],
        scheme: LabelScheme,
    ) -> Result<Self> {
        let mut examples = Vec::new();
        for &(split, path) in files {
            let (mut part, _) = load_nli(path, scheme)?;
            for ex in &mut part {
                ex.meta.split = Some(split);
            }
            examples.extend(part);
        }
        Ok(NliDataset {
            id: id.into(),
            scheme,
            examples,
        })
    }

    pub fn stats(&self) -> DatasetStats {
        DatasetStats::from_examples(&self.examples, self.scheme)
    }

    /// Row ids (positions in `examples`) belonging to `split`.
    pub fn split_rows(&self, split: Split) -> Vec<usize> {
        self.examples
            .iter()
            .enumerate()
            .filter(|(_, ex)| ex.meta.split == Some(split))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn require_split(&self, split: Split) -> Result<Vec<usize>> {
        let rows = self.split_rows(split);
        if rows.is_empty() {
            return Err(Error::Input(format!(
                "dataset {:?} has no {split} split",
                self.id
            )));
        }
        Ok(rows)
    }
}
