//! Softmax classifiers over frozen pair features.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::corpora::LabelScheme;
use crate::error::{Error, Result};
use crate::kv::{KvDocument, KvSection};
use crate::numerics::{
    decode_params, encode_params, glorot_uniform, seeded_rng, softmax, Graph, OptimizerKind, OptimizerState,
    ParamId, ParamStore, Real, Tensor, Var,
};
use crate::seq2seq::sidecar_path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeKind {
    Linear,
    Mlp,
}

impl FromStr for ProbeKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(ProbeKind::Linear),
            "mlp" => Ok(ProbeKind::Mlp),
            other => Err(Error::Validation(format!("unknown probe kind {other:?}"))),
        }
    }
}

impl fmt::Display for ProbeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProbeKind::Linear => "linear",
            ProbeKind::Mlp => "mlp",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeConfig {
    pub kind: ProbeKind,
    /// Width of each ReLU layer. Ignored by the linear probe.
    pub hidden_size: usize,
    /// Number of hidden layers of the MLP.
    pub depth: usize,
    pub scheme: LabelScheme,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            kind: ProbeKind::Linear,
            hidden_size: 500,
            depth: 1,
            scheme: LabelScheme::TwoWay,
            optimizer: OptimizerKind::adam(),
            learning_rate: 1e-3,
            weight_decay: 0.0,
            batch_size: 64,
            max_epochs: 100,
            patience: 5,
            seed: 0,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kind == ProbeKind::Mlp && (self.hidden_size == 0 || self.depth == 0) {
            return Err(Error::Validation(format!(
                "mlp probe needs hidden_size ≥ 1 and depth ≥ 1 (got {} and {})",
                self.hidden_size, self.depth
            )));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Validation("probe batch_size and max_epochs must be ≥ 1".into()));
        }
        if !(0.0..).contains(&self.learning_rate) || !(0.0..).contains(&self.weight_decay) {
            return Err(Error::Validation("probe learning_rate and weight_decay must be ≥ 0".into()));
        }
        Ok(())
    }

    /// Layer widths from input to logits.
    pub fn widths(&self, input_dim: usize) -> Vec<usize> {
        let mut w = vec![input_dim];
        if self.kind == ProbeKind::Mlp {
            w.extend(std::iter::repeat_n(self.hidden_size, self.depth));
        }
        w.push(self.scheme.num_labels());
        w
    }

    pub fn write_kv(&self, s: &mut KvSection) {
        s.set("kind", self.kind);
        s.set("hidden_size", self.hidden_size);
        s.set("depth", self.depth);
        s.set("scheme", self.scheme);
        s.set("optimizer", self.optimizer.name());
        s.set("learning_rate", self.learning_rate);
        s.set("weight_decay", self.weight_decay);
        s.set("batch_size", self.batch_size);
        s.set("max_epochs", self.max_epochs);
        s.set("patience", self.patience);
        s.set("seed", self.seed);
    }

    pub fn apply_kv(&mut self, s: &KvSection) -> Result<()> {
        macro_rules! field {
            ($key:literal, $field:ident) => {
                if let Some(v) = s.parse($key)? {
                    self.$field = v;
                }
            };
        }
        field!("kind", kind);
        field!("hidden_size", hidden_size);
        field!("depth", depth);
        field!("scheme", scheme);
        field!("learning_rate", learning_rate);
        field!("weight_decay", weight_decay);
        field!("batch_size", batch_size);
        field!("max_epochs", max_epochs);
        field!("patience", patience);
        field!("seed", seed);
        if let Some(v) = s.get("optimizer") {
            self.optimizer = match v {
                "sgd" => OptimizerKind::Sgd,
                "adam" => OptimizerKind::adam(),
                other => return Err(Error::Validation(format!("unknown optimizer {other:?}"))),
            };
        }
        Ok(())
    }
}

/// Parameter handles of a probe: one `(weight, bias)` per layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProbeLayout {
    pub layers: Vec<(ParamId, ParamId)>,
}

impl ProbeLayout {
    pub fn init<T: Real>(store: &mut ParamStore<T>, rng: &mut crate::numerics::Rng, widths: &[usize]) -> Result<Self> {
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                Ok((
                    store.add(format!("probe.l{i}.w"), glorot_uniform(rng, w[0], w[1])?)?,
                    store.add(format!("probe.l{i}.b"), Tensor::zeros(vec![w[1]])?)?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ProbeLayout { layers })
    }

    pub fn from_store<T: Real>(store: &ParamStore<T>, widths: &[usize]) -> Result<Self> {
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                Ok((
                    store.expect(&format!("probe.l{i}.w"), &[w[0], w[1]])?,
                    store.expect(&format!("probe.l{i}.b"), &[w[1]])?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        if store.len() != 2 * layers.len() {
            return Err(Error::Compatibility(format!(
                "probe file holds {} parameters, expected {}",
                store.len(),
                2 * layers.len()
            )));
        }
        Ok(ProbeLayout { layers })
    }

    /// Logits for a batch `x` of shape `[B, input_dim]`.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            let (wv, bv) = (g.param(store, w), g.param(store, b));
            h = g.affine(h, wv, bv)?;
            if i + 1 < self.layers.len() {
                h = g.relu(h);
            }
        }
        Ok(h)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeModel {
    pub params: ParamStore<f32>,
    pub layout: ProbeLayout,
    pub config: ProbeConfig,
    pub input_dim: usize,
    /// Free-form provenance written to the sidecar (e.g. feature hashes).
    pub provenance: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeLog {
    pub epoch_losses: Vec<f64>,
    pub dev_accuracies: Vec<f64>,
    pub best_epoch: usize,
}

/// Features and gold label indices of one split.
#[derive(Debug, Clone, Copy)]
pub struct LabeledSet<'a> {
    pub features: &'a [Vec<f32>],
    pub labels: &'a [usize],
}

fn check_set(set: &LabeledSet<'_>, dim: usize, scheme: LabelScheme, what: &str) -> Result<()> {
    if set.features.len() != set.labels.len() {
        return Err(Error::Shape(format!(
            "{what}: {} feature rows but {} labels",
            set.features.len(),
            set.labels.len()
        )));
    }
    if let Some(i) = set.features.iter().position(|f| f.len() != dim) {
        return Err(Error::Shape(format!(
            "{what}: row {i} has width {}, expected {dim}",
            set.features[i].len()
        )));
    }
    if let Some(i) = set.labels.iter().position(|&y| y >= scheme.num_labels()) {
        return Err(Error::Label(format!(
            "{what}: row {i} has label index {} outside the {} scheme",
            set.labels[i], scheme
        )));
    }
    Ok(())
}

fn batch_tensor<T: Real>(rows: &[&Vec<f32>], dim: usize) -> Result<Tensor<T>> {
    let data = rows.iter().flat_map(|r| r.iter().map(|&v| T::lit(v as f64))).collect();
    Tensor::matrix(rows.len(), dim, data)
}

pub fn train_probe(train: LabeledSet<'_>, dev: LabeledSet<'_>, config: &ProbeConfig) -> Result<(ProbeModel, ProbeLog)> {
    config.validate()?;
    let input_dim = train
        .features
        .first()
        .map(Vec::len)
        .ok_or_else(|| Error::Input("probe training set is empty".into()))?;
    if dev.features.is_empty() {
        return Err(Error::Input("probe dev set is empty".into()));
    }
    check_set(&train, input_dim, config.scheme, "train")?;
    check_set(&dev, input_dim, config.scheme, "dev")?;

    let mut rng = seeded_rng(config.seed);
    let mut params = ParamStore::<f32>::new();
    let layout = ProbeLayout::init(&mut params, &mut rng, &config.widths(input_dim))?;
    let mut opt = OptimizerState::<f32>::new(config.optimizer, config.learning_rate).with_weight_decay(config.weight_decay);
    let mut model = ProbeModel {
        params: params.clone(),
        layout,
        config: config.clone(),
        input_dim,
        provenance: BTreeMap::new(),
    };
    let mut log = ProbeLog { epoch_losses: Vec::new(), dev_accuracies: Vec::new(), best_epoch: 0 };
    let mut best: Option<(f64, ParamStore<f32>)> = None;
    let mut bad = 0;
    let mut order: Vec<usize> = (0..train.features.len()).collect();

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let rows: Vec<&Vec<f32>> = chunk.iter().map(|&i| &train.features[i]).collect();
            let gold: Vec<Option<usize>> = chunk.iter().map(|&i| Some(train.labels[i])).collect();
            let mut g = Graph::new();
            let x = g.input(batch_tensor(&rows, input_dim)?)?;
            let logits = model.layout.forward(&mut g, &params, x)?;
            let loss = g.cross_entropy(logits, &gold)?;
            let value = g.scalar(loss) as f64;
            if !value.is_finite() {
                return Err(Error::NonFinite(format!("probe loss at epoch {epoch}")));
            }
            total += value * chunk.len() as f64;
            g.backward(loss, &mut params)?;
            opt.step(&mut params)?;
        }
        log.epoch_losses.push(total / order.len() as f64);

        model.params = params.clone();
        let preds = model.predict_batch(dev.features)?;
        let correct = preds.iter().zip(dev.labels).filter(|(p, y)| p == y).count();
        let acc = correct as f64 / dev.labels.len() as f64;
        log.dev_accuracies.push(acc);
        if best.as_ref().is_none_or(|(b, _)| acc > *b) {
            best = Some((acc, params.clone()));
            log.best_epoch = epoch;
            bad = 0;
        } else {
            bad += 1;
            if bad >= config.patience {
                break;
            }
        }
    }
    model.params = best.expect("at least one epoch").1;
    Ok((model, log))
}

impl ProbeModel {
    fn check_dim(&self, f: &[f32]) -> Result<()> {
        if f.len() != self.input_dim {
            return Err(Error::Shape(format!(
                "feature width {} does not match probe input {}",
                f.len(),
                self.input_dim
            )));
        }
        Ok(())
    }

    fn logits(&self, rows: &[&Vec<f32>]) -> Result<Tensor<f32>> {
        let mut g = Graph::new();
        let x = g.input(batch_tensor(rows, self.input_dim)?)?;
        let out = self.layout.forward(&mut g, &self.params, x)?;
        Ok(g.value(out).clone())
    }

    /// Label distribution for one feature vector.
    pub fn predict(&self, feature: &[f32]) -> Result<Vec<f64>> {
        self.check_dim(feature)?;
        let row = feature.to_vec();
        let logits = self.logits(&[&row])?;
        let as64: Vec<f64> = logits.data().iter().map(|&v| v as f64).collect();
        Ok(softmax(&Tensor::vector(as64)?)?.into_data())
    }

    /// Argmax labels, lowest index on ties.
    pub fn predict_batch(&self, features: &[Vec<f32>]) -> Result<Vec<usize>> {
        if let Some(f) = features.iter().find(|f| f.len() != self.input_dim) {
            self.check_dim(f)?;
        }
        let mut out = Vec::with_capacity(features.len());
        for chunk in features.chunks(256) {
            let rows: Vec<&Vec<f32>> = chunk.iter().collect();
            let logits = self.logits(&rows)?;
            out.extend((0..chunk.len()).map(|r| crate::seq2seq::argmax(logits.row(r))));
        }
        Ok(out)
    }

    pub fn sidecar(&self) -> KvDocument {
        let mut doc = KvDocument::new();
        doc.root_mut().set("input_dim", self.input_dim);
        self.config.write_kv(doc.section_mut("probe"));
        let prov = doc.section_mut("provenance");
        for (k, v) in &self.provenance {
            prov.set(k.as_str(), v);
        }
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
        let params = decode_params(&bytes)?;
        let side = sidecar_path(path);
        let doc = KvDocument::load(&side)?;
        let mut config = ProbeConfig::default();
        config.apply_kv(doc.section("probe").ok_or_else(|| Error::format(&side, "missing [probe] section"))?)?;
        config.validate()?;
        let input_dim: usize = doc.root().require("input_dim")?;
        let layout = ProbeLayout::from_store(&params, &config.widths(input_dim))?;
        let provenance = doc
            .section("provenance")
            .map(|s| s.entries().map(|(k, v)| (k.to_string(), v.to_string())).collect())
            .unwrap_or_default();
        Ok(ProbeModel { params, layout, config, input_dim, provenance })
    }
}

/// Two Gaussian blobs centred at `±offset` along a random direction.
#[doc(hidden)]
pub fn gaussian_blobs(n: usize, dim: usize, offset: f32, seed: u64) -> (Vec<Vec<f32>>, Vec<usize>) {
    let mut rng = seeded_rng(seed);
    let normal = |rng: &mut crate::numerics::Rng| {
        // Box-Muller
        let u1: f32 = rng.gen_range(f32::EPSILON..1.0);
        let u2: f32 = rng.gen();
        (-2.0 * u1.ln()).sqrt() * (std::f32::consts::TAU * u2).cos()
    };
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for i in 0..n {
        let y = i % 2;
        let sign = if y == 1 { 1.0 } else { -1.0 };
        let mut x: Vec<f32> = (0..dim).map(|_| 0.3 * normal(&mut rng)).collect();
        x[0] += sign * offset;
        xs.push(x);
        ys.push(y);
    }
    (xs, ys)
}
