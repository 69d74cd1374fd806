use std::path::{Path, PathBuf};

use super::model::{ModelShape, Seq2Seq};
use super::NmtConfig;
use crate::error::{Error, Result};
use crate::kv::KvDocument;
use crate::numerics::{decode_params, encode_params, ParamStore};

/// A trained model: parameters plus the settings and dev score that selected it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ParamStore<f32>,
    pub config: NmtConfig,
    /// Dev perplexity at `step`.
    pub dev_metric: f64,
    pub step: usize,
    pub seed: u64,
}

/// `model.sprb` → `model.sprb.cfg`
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".cfg");
    PathBuf::from(s)
}

impl Checkpoint {
    pub fn model(&self) -> Result<Seq2Seq> {
        Seq2Seq::from_store(&self.params, ModelShape::from(&self.config))
    }

    pub fn sidecar(&self) -> KvDocument {
        let mut doc = KvDocument::new();
        let root = doc.root_mut();
        root.set("seed", self.seed);
        root.set("step", self.step);
        root.set("dev_metric", "perplexity");
        root.set("dev_perplexity", self.dev_metric);
        self.config.write_kv(doc.section_mut("nmt"));
        doc
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        encode_params(&self.params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))?;
        self.sidecar().save(&sidecar_path(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let params = decode_params(&bytes).map_err(|e| match e {
            Error::Format { message, .. } => Error::format(path, message),
            other => other,
        })?;
        let side = sidecar_path(path);
        let doc = KvDocument::load(&side)?;
        let root = doc.root();
        let nmt = doc
            .section("nmt")
            .ok_or_else(|| Error::format(&side, "missing [nmt] section"))?;
        let ck = Checkpoint {
            params,
            config: NmtConfig::from_kv(nmt)?,
            dev_metric: root.require("dev_perplexity")?,
            step: root.require("step")?,
            seed: root.require("seed")?,
        };
        ck.model()?;
        Ok(ck)
    }
}
