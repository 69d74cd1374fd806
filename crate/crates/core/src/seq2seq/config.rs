use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::kv::KvSection;
use crate::numerics::OptimizerKind;

/// Architecture and training settings of a translation model.
#[derive(Debug, Clone, PartialEq)]
pub struct NmtConfig {
    /// Embedding and LSTM state size.
    pub d: usize,
    /// Encoder depth; the decoder uses the same depth.
    pub layers: usize,
    pub src_vocab_size: usize,
    pub tgt_vocab_size: usize,
    pub max_train_len: Option<usize>,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    /// Learning rate multiplier applied when dev perplexity fails to improve.
    pub lr_decay: f64,
    pub clip_norm: f64,
    pub batch_size: usize,
    pub eval_every: usize,
    pub patience: usize,
    pub max_steps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    Desk,
    Paper,
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            other => Err(Error::Validation(format!("unknown profile {other:?}"))),
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Profile::Desk => "desk",
            Profile::Paper => "paper",
        })
    }
}

impl Profile {
    /// `(d, layers, vocabulary cap)`
    pub fn shape(self) -> (usize, usize, usize) {
        match self {
            Profile::Desk => (16, 2, 2000),
            Profile::Paper => (500, 4, 75_000),
        }
    }
}

impl Default for NmtConfig {
    fn default() -> Self {
        Self::for_profile(Profile::Desk)
    }
}

impl NmtConfig {
    pub fn for_profile(profile: Profile) -> Self {
        let (d, layers, vocab) = profile.shape();
        NmtConfig {
            d,
            layers,
            src_vocab_size: vocab,
            tgt_vocab_size: vocab,
            max_train_len: Some(crate::corpora::DEFAULT_MAX_TRAIN_LEN),
            optimizer: OptimizerKind::Sgd,
            learning_rate: 1.0,
            lr_decay: 0.5,
            clip_norm: 5.0,
            batch_size: 32,
            eval_every: 200,
            patience: 3,
            max_steps: 20_000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Validation(m));
        if self.d == 0 || self.layers == 0 {
            return fail(format!("d and layers must be ≥ 1 (d={}, layers={})", self.d, self.layers));
        }
        if self.src_vocab_size < 5 || self.tgt_vocab_size < 5 {
            return fail("vocabulary sizes must be ≥ 5".into());
        }
        if self.batch_size == 0 || self.eval_every == 0 {
            return fail("batch_size and eval_every must be ≥ 1".into());
        }
        if !(0.0..).contains(&self.learning_rate) || self.clip_norm.is_nan() || self.clip_norm <= 0.0 || self.lr_decay.is_nan() || self.lr_decay <= 0.0 {
            return fail("learning_rate ≥ 0, clip_norm > 0 and lr_decay > 0 are required".into());
        }
        Ok(())
    }

    pub fn write_kv(&self, s: &mut KvSection) {
        s.set("d", self.d);
        s.set("layers", self.layers);
        s.set("src_vocab_size", self.src_vocab_size);
        s.set("tgt_vocab_size", self.tgt_vocab_size);
        s.set(
            "max_train_len",
            self.max_train_len.map_or("none".to_string(), |m| m.to_string()),
        );
        s.set("optimizer", self.optimizer.name());
        s.set("learning_rate", self.learning_rate);
        s.set("lr_decay", self.lr_decay);
        s.set("clip_norm", self.clip_norm);
        s.set("batch_size", self.batch_size);
        s.set("eval_every", self.eval_every);
        s.set("patience", self.patience);
        s.set("max_steps", self.max_steps);
    }

    /// Overrides fields present in `s`; absent keys keep their value.
    pub fn apply_kv(&mut self, s: &KvSection) -> Result<()> {
        macro_rules! field {
            ($key:literal, $field:ident) => {
                if let Some(v) = s.parse($key)? {
                    self.$field = v;
                }
            };
        }
        field!("d", d);
        field!("layers", layers);
        field!("src_vocab_size", src_vocab_size);
        field!("tgt_vocab_size", tgt_vocab_size);
        field!("learning_rate", learning_rate);
        field!("lr_decay", lr_decay);
        field!("clip_norm", clip_norm);
        field!("batch_size", batch_size);
        field!("eval_every", eval_every);
        field!("patience", patience);
        field!("max_steps", max_steps);
        if let Some(v) = s.get("max_train_len") {
            self.max_train_len = match v {
                "none" => None,
                n => Some(n.parse().map_err(|_| {
                    Error::Validation(format!("max_train_len must be an integer or none, got {n:?}"))
                })?),
            };
        }
        if let Some(v) = s.get("optimizer") {
            self.optimizer = match v {
                "sgd" => OptimizerKind::Sgd,
                "adam" => OptimizerKind::adam(),
                other => return Err(Error::Validation(format!("unknown optimizer {other:?}"))),
            };
        }
        Ok(())
    }

    pub fn from_kv(s: &KvSection) -> Result<Self> {
        let mut c = NmtConfig::default();
        c.apply_kv(s)?;
        c.validate()?;
        Ok(c)
    }
}
