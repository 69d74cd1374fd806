use std::path::{Path, PathBuf};

use crate::corpora::{LabelScheme, Split};
use crate::error::{Error, Result};
use crate::kv::{KvDocument, KvSection};
use crate::probe::{ProbeConfig, ProbeKind};
use crate::repr::{Combiner, RepScheme};
use crate::seq2seq::{NmtConfig, Profile};

const ROOT_KEYS: [&str; 6] = ["seed", "out", "profile", "scheme", "combiner", "probe"];
const ENCODER_KEYS: [&str; 4] = ["train_source", "train_target", "dev_source", "dev_target"];

/// Command-line values that win over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub scheme: Option<RepScheme>,
    pub combiner: Option<Combiner>,
    pub probe: Option<ProbeKind>,
    pub profile: Option<Profile>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderSpec {
    pub name: String,
    pub train_source: PathBuf,
    pub train_target: PathBuf,
    pub dev_source: PathBuf,
    pub dev_target: PathBuf,
}

impl EncoderSpec {
    pub fn files(&self) -> [(&'static str, &Path); 4] {
        [
            ("train_source", &self.train_source),
            ("train_target", &self.train_target),
            ("dev_source", &self.dev_source),
            ("dev_target", &self.dev_target),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetFiles {
    /// One file with a `split` column.
    Combined(PathBuf),
    Splits(Vec<(Split, PathBuf)>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub name: String,
    pub scheme: LabelScheme,
    pub files: DatasetFiles,
}

impl DatasetSpec {
    pub fn files(&self) -> Vec<(String, &Path)> {
        match &self.files {
            DatasetFiles::Combined(p) => vec![("file".to_string(), p.as_path())],
            DatasetFiles::Splits(v) => v.iter().map(|(s, p)| (s.name().to_string(), p.as_path())).collect(),
        }
    }
}

/// Everything a run needs. Built only through [`RunConfig::from_document`],
/// which checks every path and name before returning.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub profile: Profile,
    pub nmt: NmtConfig,
    pub probe: ProbeConfig,
    pub scheme: RepScheme,
    pub combiner: Combiner,
    pub encoders: Vec<EncoderSpec>,
    pub datasets: Vec<DatasetSpec>,
    pub matrix_encoders: Vec<String>,
    pub matrix_datasets: Vec<String>,
}

fn invalid(msg: String) -> Error {
    Error::Validation(msg)
}

fn names_list(s: &str) -> Vec<String> {
    s.split(',').map(str::trim).filter(|n| !n.is_empty()).map(str::to_string).collect()
}

impl RunConfig {
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self> {
        if !path.is_file() {
            return Err(invalid(format!("config file {} does not exist", path.display())));
        }
        let doc = KvDocument::load(path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_document(&doc, &base, overrides)
    }

    /// Relative paths resolve against `base`.
    pub fn from_document(doc: &KvDocument, base: &Path, overrides: &Overrides) -> Result<Self> {
        let root = doc.root();
        if let Some((k, _)) = root.entries().find(|(k, _)| !ROOT_KEYS.contains(k)) {
            return Err(invalid(format!("unknown top-level key {k:?}")));
        }
        for s in doc.sections() {
            let known = ["", "nmt", "probe", "matrix"].contains(&s.name.as_str())
                || s.name.starts_with("encoder.")
                || s.name.starts_with("dataset.");
            if !known {
                return Err(invalid(format!("unknown section [{}]", s.name)));
            }
        }
        let resolve = |p: &str| -> Result<PathBuf> {
            let p = base.join(p);
            if !p.exists() {
                return Err(invalid(format!("path {} does not exist", p.display())));
            }
            Ok(p)
        };

        let seed = match overrides.seed {
            Some(s) => s,
            None => root.parse("seed")?.ok_or_else(|| invalid("seed is mandatory (config key seed or --seed)".into()))?,
        };
        let out = match &overrides.out {
            Some(o) => o.clone(),
            None => base.join(root.get("out").unwrap_or("out")),
        };
        let profile = match overrides.profile {
            Some(p) => p,
            None => root.parse("profile")?.unwrap_or(Profile::Desk),
        };
        let mut nmt = NmtConfig::for_profile(profile);
        if let Some(s) = doc.section("nmt") {
            nmt.apply_kv(s)?;
        }
        nmt.validate()?;

        let mut probe = ProbeConfig::default();
        if let Some(k) = root.parse("probe")? {
            probe.kind = k;
        }
        if let Some(s) = doc.section("probe") {
            probe.apply_kv(s)?;
        }
        if let Some(k) = overrides.probe {
            probe.kind = k;
        }
        probe.validate()?;

        let scheme = match overrides.scheme {
            Some(s) => s,
            None => root.parse("scheme")?.unwrap_or(RepScheme::ConcatLast),
        };
        let combiner = match overrides.combiner {
            Some(c) => c,
            None => root.parse("combiner")?.unwrap_or(Combiner::Concat),
        };

        let mut encoders = Vec::new();
        for (name, s) in doc.sections_with_prefix("encoder") {
            check_keys(s, &ENCODER_KEYS)?;
            let path = |k: &str| -> Result<PathBuf> { resolve(&s.require::<String>(k)?) };
            encoders.push(EncoderSpec {
                name: name.to_string(),
                train_source: path("train_source")?,
                train_target: path("train_target")?,
                dev_source: path("dev_source")?,
                dev_target: path("dev_target")?,
            });
        }
        let mut datasets = Vec::new();
        for (name, s) in doc.sections_with_prefix("dataset") {
            check_keys(s, &["scheme", "file", "train", "dev", "test"])?;
            let scheme: LabelScheme = s.require("scheme")?;
            let splits: Vec<(Split, PathBuf)> = Split::ALL
                .iter()
                .filter_map(|sp| s.get(sp.name()).map(|p| resolve(p).map(|p| (*sp, p))))
                .collect::<Result<_>>()?;
            let files = match (s.get("file"), splits.is_empty()) {
                (Some(f), true) => DatasetFiles::Combined(resolve(f)?),
                (None, false) => DatasetFiles::Splits(splits),
                (Some(_), false) => return Err(invalid(format!("[{}] sets both file and per-split paths", s.name))),
                (None, true) => return Err(invalid(format!("[{}] needs file or train/dev/test paths", s.name))),
            };
            datasets.push(DatasetSpec { name: name.to_string(), scheme, files });
        }
        for (kind, names) in [("encoder", encoders.iter().map(|e| &e.name).collect::<Vec<_>>()), ("dataset", datasets.iter().map(|d| &d.name).collect())] {
            for (i, n) in names.iter().enumerate() {
                if n.is_empty() || n.contains(['/', '\\']) || n.contains("..") {
                    return Err(invalid(format!("{kind} name {n:?} is not usable as a directory name")));
                }
                if names[..i].contains(n) {
                    return Err(invalid(format!("{kind} {n:?} declared twice")));
                }
            }
        }

        let (mut matrix_encoders, mut matrix_datasets): (Vec<String>, Vec<String>) = (
            encoders.iter().map(|e| e.name.clone()).collect(),
            datasets.iter().map(|d| d.name.clone()).collect(),
        );
        if let Some(m) = doc.section("matrix") {
            check_keys(m, &["encoders", "datasets"])?;
            if let Some(v) = m.get("encoders") {
                matrix_encoders = names_list(v);
            }
            if let Some(v) = m.get("datasets") {
                matrix_datasets = names_list(v);
            }
        }
        let cfg = RunConfig {
            seed,
            out,
            profile,
            nmt,
            probe,
            scheme,
            combiner,
            encoders,
            datasets,
            matrix_encoders,
            matrix_datasets,
        };
        for e in &cfg.matrix_encoders {
            cfg.encoder(e)?;
        }
        for d in &cfg.matrix_datasets {
            cfg.dataset(d)?;
        }
        Ok(cfg)
    }

    pub fn encoder(&self, name: &str) -> Result<&EncoderSpec> {
        self.encoders
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| invalid(format!("no [encoder.{name}] section")))
    }

    pub fn dataset(&self, name: &str) -> Result<&DatasetSpec> {
        self.datasets
            .iter()
            .find(|d| d.name == name)
            .ok_or_else(|| invalid(format!("no [dataset.{name}] section")))
    }

    /// The settings that influence results, with files named by content
    /// hash rather than path. `out` is deliberately absent.
    pub fn canonical(&self, file_hash: &mut dyn FnMut(&Path) -> Result<String>) -> Result<KvDocument> {
        let mut doc = KvDocument::new();
        let root = doc.root_mut();
        root.set("seed", self.seed);
        root.set("profile", self.profile);
        root.set("scheme", self.scheme);
        root.set("combiner", self.combiner);
        self.nmt.write_kv(doc.section_mut("nmt"));
        self.probe.write_kv(doc.section_mut("probe"));
        for e in &self.encoders {
            let s = doc.section_mut(&format!("encoder.{}", e.name));
            for (k, p) in e.files() {
                s.set(k, file_hash(p)?);
            }
        }
        for d in &self.datasets {
            let s = doc.section_mut(&format!("dataset.{}", d.name));
            s.set("scheme", d.scheme);
            for (k, p) in d.files() {
                s.set(k, file_hash(p)?);
            }
        }
        let m = doc.section_mut("matrix");
        m.set("encoders", self.matrix_encoders.join(","));
        m.set("datasets", self.matrix_datasets.join(","));
        Ok(doc)
    }
}

fn check_keys(s: &KvSection, allowed: &[&str]) -> Result<()> {
    match s.entries().find(|(k, _)| !allowed.contains(k)) {
        Some((k, _)) => Err(invalid(format!("[{}] has unknown key {k:?}", s.name))),
        None => Ok(()),
    }
}
