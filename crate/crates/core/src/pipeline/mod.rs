//! Subcommand logic: content-hash caching of checkpoints, dumps and probes,
//! plus run manifests. Every artifact lives under the run's `out` directory.

mod config;

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

pub use config::{DatasetFiles, DatasetSpec, EncoderSpec, Overrides, RunConfig};

use crate::corpora::{build_vocab, encode_parallel, load_parallel, NliDataset, ParallelStats, Split, Vocabulary};
use crate::error::{Error, Result};
use crate::evalreport::{
    breakdown_by_attribute, breakdown_table, emit_report, length_buckets, partition_eval, run_matrix_with, train_on,
    DatasetFeatures, EncoderFeatures, EvalResult, ExperimentReport, LengthTable, PartitionTable, ReportFormat,
    SplitBaseline, BUCKET_MAX_EDGE, BUCKET_WIDTH, SCHEME_MISMATCH,
};
use crate::kv::KvSection;
use crate::probe::{ProbeConfig, ProbeModel};
use crate::repr::{combine_concat, combine_infersent, encode_sentences, index_path, Combiner, RepDump};
use crate::seq2seq::{train_nmt, Checkpoint, Seq2Seq, TrainLog};

const EXTRACT_BATCH: usize = 64;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Sub-seed for one named consumer of the run seed.
pub fn derive_seed(seed: u64, parts: &[&str]) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for p in parts {
        h.update([0]);
        h.update(p.as_bytes());
    }
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("32-byte digest"))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn key_path(artifact: &Path) -> PathBuf {
    let mut s = artifact.as_os_str().to_owned();
    s.push(".key");
    PathBuf::from(s)
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CacheStats {
    pub hits: usize,
    pub misses: usize,
}

/// Written to `out/manifests/<command>.json`. Holds no paths or times.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Manifest {
    pub command: String,
    pub seed: u64,
    pub config_hash: String,
    pub inputs: BTreeMap<String, String>,
}

pub struct EncoderArtifacts {
    pub name: String,
    pub checkpoint: Checkpoint,
    pub model: Seq2Seq,
    pub src_vocab: Vocabulary,
    pub tgt_vocab: Vocabulary,
    /// Hash of the checkpoint file.
    pub hash: String,
    pub src_vocab_hash: String,
}

pub struct SplitDumps {
    pub split: Split,
    pub context: RepDump,
    pub hypothesis: RepDump,
    pub context_hash: String,
    pub hypothesis_hash: String,
}

pub struct Extraction {
    pub encoder: String,
    pub dataset: String,
    pub splits: Vec<SplitDumps>,
}

impl Extraction {
    pub fn split(&self, split: Split) -> Option<&SplitDumps> {
        self.splits.iter().find(|s| s.split == split)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EncoderSummary {
    pub name: String,
    pub checkpoint_hash: String,
    pub step: usize,
    pub dev_perplexity: f64,
    pub src_vocab: usize,
    pub tgt_vocab: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ExtractSummary {
    pub encoder: String,
    pub dataset: String,
    pub scheme: String,
    pub dim: usize,
    pub records: BTreeMap<Split, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeSummary {
    pub encoder: String,
    pub dataset: String,
    pub input_dim: usize,
    pub dev: EvalResult,
}

/// Owns the run configuration and the memo of file hashes.
pub struct Workspace {
    pub config: RunConfig,
    pub stats: CacheStats,
    file_hashes: HashMap<PathBuf, String>,
    datasets: HashMap<String, (NliDataset, String)>,
}

impl Workspace {
    pub fn new(config: RunConfig) -> Self {
        Workspace { config, stats: CacheStats::default(), file_hashes: HashMap::new(), datasets: HashMap::new() }
    }

    pub fn out(&self) -> &Path {
        &self.config.out
    }

    pub fn file_hash(&mut self, path: &Path) -> Result<String> {
        if let Some(h) = self.file_hashes.get(path) {
            return Ok(h.clone());
        }
        let h = sha256_hex(&read(path)?);
        self.file_hashes.insert(path.to_path_buf(), h.clone());
        Ok(h)
    }

    pub fn config_hash(&mut self) -> Result<String> {
        let cfg = self.config.clone();
        let doc = cfg.canonical(&mut |p| self.file_hash(p))?;
        Ok(sha256_hex(doc.render().as_bytes()))
    }

    pub fn write_manifest(&mut self, command: &str, encoders: &[&str], datasets: &[&str]) -> Result<Manifest> {
        let mut inputs = BTreeMap::new();
        for &e in encoders {
            let spec = self.config.encoder(e)?.clone();
            for (k, p) in spec.files() {
                inputs.insert(format!("encoder.{e}.{k}"), self.file_hash(p)?);
            }
        }
        for &d in datasets {
            let spec = self.config.dataset(d)?.clone();
            for (k, p) in spec.files() {
                inputs.insert(format!("dataset.{d}.{k}"), self.file_hash(p)?);
            }
        }
        let m = Manifest { command: command.to_string(), seed: self.config.seed, config_hash: self.config_hash()?, inputs };
        write(&self.out().join("manifests").join(format!("{command}.json")), to_json(&m))?;
        Ok(m)
    }

    /// True when every artifact exists and the stored key matches.
    fn cache_lookup(&mut self, what: &str, artifacts: &[&Path], key: &str) -> bool {
        let hit = artifacts.iter().all(|p| p.is_file())
            && std::fs::read_to_string(key_path(artifacts[0])).is_ok_and(|k| k.trim() == key);
        if hit {
            self.stats.hits += 1;
            log::info!("cache hit: {what}");
        } else {
            self.stats.misses += 1;
            log::info!("cache miss: {what}");
        }
        hit
    }

    fn cache_store(artifact: &Path, key: &str) -> Result<()> {
        write(&key_path(artifact), format!("{key}\n"))
    }

    pub fn encoder_dir(&self, name: &str) -> PathBuf {
        self.out().join("encoders").join(name)
    }

    pub fn checkpoint_path(&self, name: &str) -> PathBuf {
        self.encoder_dir(name).join("model.sprb")
    }

    /// Trains the encoder unless an up-to-date checkpoint exists, then loads it.
    pub fn encoder(&mut self, name: &str) -> Result<EncoderArtifacts> {
        let spec = self.config.encoder(name)?.clone();
        let nmt = self.config.nmt.clone();
        let seed = derive_seed(self.config.seed, &["nmt", name]);
        let dir = self.encoder_dir(name);
        let (model_path, src_path, tgt_path) = (dir.join("model.sprb"), dir.join("src.vocab"), dir.join("tgt.vocab"));

        let mut key = format!("nmt-v1\nseed={seed}\n");
        for (k, p) in spec.files() {
            let _ = writeln!(key, "{k}={}", self.file_hash(p)?);
        }
        let mut sec = KvSection::new("nmt");
        nmt.write_kv(&mut sec);
        for (k, v) in sec.entries() {
            let _ = writeln!(key, "{k}={v}");
        }
        let key = sha256_hex(key.as_bytes());

        let sidecar = crate::seq2seq::sidecar_path(&model_path);
        if !self.cache_lookup(&format!("encoder {name}"), &[&model_path, &sidecar, &src_path, &tgt_path], &key) {
            let (train, stats) = load_parallel(&spec.train_source, &spec.train_target, nmt.max_train_len)?;
            let (dev, _) = load_parallel(&spec.dev_source, &spec.dev_target, None)?;
            log::info!("encoder {name}: {} of {} training pairs kept", stats.kept, stats.read);
            let sv = build_vocab(train.iter().map(|e| e.source_tokens.as_slice()), nmt.src_vocab_size)?;
            let tv = build_vocab(train.iter().map(|e| e.target_tokens.as_slice()), nmt.tgt_vocab_size)?;
            let mut cfg = nmt.clone();
            cfg.src_vocab_size = sv.len();
            cfg.tgt_vocab_size = tv.len();
            let (ck, log) = train_nmt(&encode_parallel(&train, &sv, &tv), &encode_parallel(&dev, &sv, &tv), &cfg, seed)?;
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            ck.save(&model_path)?;
            sv.save(&src_path)?;
            tv.save(&tgt_path)?;
            #[derive(Serialize)]
            struct Log<'a> {
                data: ParallelStats,
                #[serde(flatten)]
                log: &'a TrainLog,
            }
            write(&dir.join("train_log.json"), to_json(&Log { data: stats, log: &log }))?;
            Self::cache_store(&model_path, &key)?;
        }

        let checkpoint = Checkpoint::load(&model_path)?;
        let src_vocab = Vocabulary::load(&src_path)?;
        let tgt_vocab = Vocabulary::load(&tgt_path)?;
        if checkpoint.config.src_vocab_size != src_vocab.len() || checkpoint.config.tgt_vocab_size != tgt_vocab.len() {
            return Err(Error::Compatibility(format!(
                "encoder {name}: checkpoint expects vocabularies of {}/{} but {} and {} hold {}/{}",
                checkpoint.config.src_vocab_size,
                checkpoint.config.tgt_vocab_size,
                src_path.display(),
                tgt_path.display(),
                src_vocab.len(),
                tgt_vocab.len()
            )));
        }
        let model = checkpoint.model()?;
        Ok(EncoderArtifacts {
            name: name.to_string(),
            model,
            src_vocab,
            tgt_vocab,
            hash: sha256_hex(&read(&model_path)?),
            src_vocab_hash: sha256_hex(&read(&src_path)?),
            checkpoint,
        })
    }

    /// The dataset and a hash over its scheme and files.
    pub fn dataset(&mut self, name: &str) -> Result<(NliDataset, String)> {
        if let Some(d) = self.datasets.get(name) {
            return Ok(d.clone());
        }
        let spec = self.config.dataset(name)?.clone();
        let data = match &spec.files {
            DatasetFiles::Combined(p) => NliDataset::load(name, p, spec.scheme)?,
            DatasetFiles::Splits(v) => {
                let files: Vec<(Split, &Path)> = v.iter().map(|(s, p)| (*s, p.as_path())).collect();
                NliDataset::load_splits(name, &files, spec.scheme)?
            }
        };
        let mut text = format!("scheme={}\n", spec.scheme);
        for (k, p) in spec.files() {
            let _ = writeln!(text, "{k}={}", self.file_hash(p)?);
        }
        let entry = (data, sha256_hex(text.as_bytes()));
        self.datasets.insert(name.to_string(), entry.clone());
        Ok(entry)
    }

    fn dump_paths(&self, enc: &str, ds: &str, split: Split) -> (PathBuf, PathBuf) {
        let dir = self.out().join("dumps").join(enc).join(ds);
        (dir.join(format!("{split}.context.sprr")), dir.join(format!("{split}.hypothesis.sprr")))
    }

    /// Dumps for every split the dataset has. The train split drops rows
    /// whose context or hypothesis exceeds the training length filter.
    pub fn extract(&mut self, enc: &str, ds: &str) -> Result<Extraction> {
        let art = self.encoder(enc)?;
        let (data, dhash) = self.dataset(ds)?;
        let scheme = self.config.scheme;
        let max_len = self.config.nmt.max_train_len;
        let mut splits = Vec::new();
        for split in Split::ALL {
            let mut rows = data.split_rows(split);
            if rows.is_empty() {
                continue;
            }
            let filter = if split == Split::Train { max_len } else { None };
            if let Some(m) = filter {
                rows.retain(|&r| data.examples[r].context.len() <= m && data.examples[r].hypothesis.len() <= m);
                if rows.is_empty() {
                    return Err(Error::Input(format!("dataset {ds}: no train rows within {m} tokens")));
                }
            }
            let (ctx_path, hyp_path) = self.dump_paths(enc, ds, split);
            let key = sha256_hex(
                format!(
                    "dump-v1\nencoder={}\nsrc_vocab={}\ndataset={dhash}\nsplit={split}\nscheme={scheme}\nfilter={filter:?}\n",
                    art.hash, art.src_vocab_hash
                )
                .as_bytes(),
            );
            let (ci, hi) = (index_path(&ctx_path), index_path(&hyp_path));
            if !self.cache_lookup(&format!("dump {enc}/{ds}/{split}"), &[&ctx_path, &ci, &hyp_path, &hi], &key) {
                for (path, hypothesis) in [(&ctx_path, false), (&hyp_path, true)] {
                    let sentences: Vec<Vec<usize>> = rows
                        .iter()
                        .map(|&r| {
                            let ex = &data.examples[r];
                            art.src_vocab.encode(if hypothesis { &ex.hypothesis } else { &ex.context }, false)
                        })
                        .collect();
                    let reps = encode_sentences(&art.model, &art.checkpoint.params, &sentences, scheme, EXTRACT_BATCH)?;
                    if let Some(dir) = path.parent() {
                        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                    }
                    RepDump::from_reps(&reps, rows.clone())?.save(path)?;
                }
                Self::cache_store(&ctx_path, &key)?;
            }
            let hash_dump = |p: &Path| -> Result<String> {
                let mut bytes = read(p)?;
                bytes.extend(read(&index_path(p))?);
                Ok(sha256_hex(&bytes))
            };
            splits.push(SplitDumps {
                split,
                context: RepDump::load(&ctx_path)?,
                hypothesis: RepDump::load(&hyp_path)?,
                context_hash: hash_dump(&ctx_path)?,
                hypothesis_hash: hash_dump(&hyp_path)?,
            });
        }
        Ok(Extraction { encoder: enc.to_string(), dataset: ds.to_string(), splits })
    }

    /// Pair features and gold labels for one split's dumps.
    pub fn features(&self, data: &NliDataset, dumps: &SplitDumps) -> Result<(Vec<Vec<f32>>, Vec<usize>)> {
        let (c, h) = (&dumps.context, &dumps.hypothesis);
        if c.scheme != h.scheme || c.dim != h.dim || c.row_ids != h.row_ids {
            return Err(Error::Compatibility(format!(
                "{} context and hypothesis dumps disagree on scheme, width or rows",
                dumps.split
            )));
        }
        let combine = match self.config.combiner {
            Combiner::Concat => combine_concat,
            Combiner::InferSent => combine_infersent,
        };
        let mut x = Vec::with_capacity(c.len());
        let mut y = Vec::with_capacity(c.len());
        for (i, &r) in c.row_ids.iter().enumerate() {
            let ex = data.examples.get(r).ok_or_else(|| {
                Error::Compatibility(format!("dump row {r} is outside dataset {} ({} rows)", data.id, data.examples.len()))
            })?;
            x.push(combine(&c.vectors[i], &h.vectors[i])?.vector);
            y.push(ex.label);
        }
        Ok((x, y))
    }

    fn provenance(&self, art: &EncoderArtifacts, dhash: &str, ext: &Extraction) -> Result<BTreeMap<String, String>> {
        let mut p = BTreeMap::new();
        p.insert("encoder".to_string(), art.hash.clone());
        p.insert("dataset".to_string(), dhash.to_string());
        p.insert("scheme".to_string(), self.config.scheme.to_string());
        p.insert("combiner".to_string(), self.config.combiner.to_string());
        for split in [Split::Train, Split::Dev] {
            let d = ext
                .split(split)
                .ok_or_else(|| Error::Input(format!("dataset {} has no {split} split", ext.dataset)))?;
            p.insert(format!("{split}.context"), d.context_hash.clone());
            p.insert(format!("{split}.hypothesis"), d.hypothesis_hash.clone());
        }
        Ok(p)
    }

    pub fn probe_path(&self, enc: &str, ds: &str) -> PathBuf {
        self.out().join("probes").join(enc).join(ds).join("probe.sprb")
    }

    fn probe_config(&self, enc: &str, ds: &str) -> ProbeConfig {
        ProbeConfig { seed: derive_seed(self.config.seed, &["probe", enc, ds]), ..self.config.probe.clone() }
    }

    fn fit_probe(&mut self, enc: &str, feats: &DatasetFeatures, provenance: BTreeMap<String, String>) -> Result<ProbeModel> {
        let ds = feats.id.as_str();
        let cfg = ProbeConfig { scheme: feats.scheme, ..self.probe_config(enc, ds) };
        let path = self.probe_path(enc, ds);
        let mut key = String::from("probe-v1\n");
        for (k, v) in &provenance {
            let _ = writeln!(key, "{k}={v}");
        }
        let mut sec = KvSection::new("probe");
        cfg.write_kv(&mut sec);
        for (k, v) in sec.entries() {
            let _ = writeln!(key, "probe.{k}={v}");
        }
        let key = sha256_hex(key.as_bytes());
        let sidecar = crate::seq2seq::sidecar_path(&path);
        if !self.cache_lookup(&format!("probe {enc}/{ds}"), &[&path, &sidecar], &key) {
            let mut probe = train_on(feats, &cfg)?;
            probe.provenance = provenance;
            if let Some(dir) = path.parent() {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            probe.save(&path)?;
            Self::cache_store(&path, &key)?;
        }
        ProbeModel::load(&path)
    }

    fn dataset_features(&mut self, enc: &str, ds: &str) -> Result<(DatasetFeatures, BTreeMap<String, String>, Extraction)> {
        let art = self.encoder(enc)?;
        let (data, dhash) = self.dataset(ds)?;
        let ext = self.extract(enc, ds)?;
        let prov = self.provenance(&art, &dhash, &ext)?;
        let split = |s: Split| ext.split(s).map(|d| self.features(&data, d)).transpose();
        let feats = DatasetFeatures {
            id: ds.to_string(),
            scheme: data.scheme,
            train: split(Split::Train)?,
            dev: split(Split::Dev)?,
            test: split(Split::Test)?,
        };
        Ok((feats, prov, ext))
    }

    pub fn cmd_train_nmt(&mut self, names: &[String]) -> Result<Vec<EncoderSummary>> {
        let names = self.names_or_all(names, true)?;
        let mut out = Vec::new();
        for n in &names {
            let a = self.encoder(n)?;
            out.push(EncoderSummary {
                name: n.clone(),
                checkpoint_hash: a.hash,
                step: a.checkpoint.step,
                dev_perplexity: a.checkpoint.dev_metric,
                src_vocab: a.src_vocab.len(),
                tgt_vocab: a.tgt_vocab.len(),
            });
        }
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        self.write_manifest("train-nmt", &refs, &[])?;
        Ok(out)
    }

    fn names_or_all(&self, names: &[String], encoders: bool) -> Result<Vec<String>> {
        if names.is_empty() {
            return Ok(if encoders {
                self.config.encoders.iter().map(|e| e.name.clone()).collect()
            } else {
                self.config.datasets.iter().map(|d| d.name.clone()).collect()
            });
        }
        for n in names {
            if encoders {
                self.config.encoder(n)?;
            } else {
                self.config.dataset(n)?;
            }
        }
        Ok(names.to_vec())
    }

    pub fn cmd_extract(&mut self, enc: &str, ds: &str) -> Result<ExtractSummary> {
        self.config.encoder(enc)?;
        self.config.dataset(ds)?;
        let ext = self.extract(enc, ds)?;
        self.write_manifest("extract", &[enc], &[ds])?;
        let first = ext.splits.first().ok_or_else(|| Error::Input(format!("dataset {ds} has no rows in any split")))?;
        Ok(ExtractSummary {
            encoder: enc.to_string(),
            dataset: ds.to_string(),
            scheme: first.context.scheme.to_string(),
            dim: first.context.dim,
            records: ext.splits.iter().map(|s| (s.split, s.context.len())).collect(),
        })
    }

    pub fn cmd_train_probe(&mut self, enc: &str, ds: &str) -> Result<ProbeSummary> {
        self.config.encoder(enc)?;
        self.config.dataset(ds)?;
        let (feats, prov, _) = self.dataset_features(enc, ds)?;
        let probe = self.fit_probe(enc, &feats, prov)?;
        let (dx, dy) = feats.dev.as_ref().expect("fit_probe requires dev");
        let dev = EvalResult::from_predictions(ds, &probe.predict_batch(dx)?, dy, feats.scheme)?;
        self.write_manifest("train-probe", &[enc], &[ds])?;
        Ok(ProbeSummary { encoder: enc.to_string(), dataset: ds.to_string(), input_dim: probe.input_dim, dev })
    }

    /// Tests a probe trained by `cmd_train_probe` on another dataset's test split.
    pub fn cmd_evaluate(&mut self, enc: &str, train: &str, test: &str) -> Result<EvalResult> {
        self.config.encoder(enc)?;
        let train_scheme = self.config.dataset(train)?.scheme;
        let test_scheme = self.config.dataset(test)?.scheme;
        if train_scheme != test_scheme {
            return Err(Error::Compatibility(format!(
                "{SCHEME_MISMATCH}: probe trained on {train} ({train_scheme}) cannot be tested on {test} ({test_scheme})"
            )));
        }
        let path = self.probe_path(enc, train);
        if !path.is_file() {
            return Err(Error::Input(format!("no probe at {}; run train-probe first", path.display())));
        }
        let probe = ProbeModel::load(&path)?;
        let art = self.encoder(enc)?;
        let (_, dhash) = self.dataset(train)?;
        let ext = self.extract(enc, train)?;
        for (k, v) in self.provenance(&art, &dhash, &ext)? {
            if probe.provenance.get(&k) != Some(&v) {
                return Err(Error::Compatibility(format!(
                    "probe {} was trained on a different {k} than the current artifacts; retrain it",
                    path.display()
                )));
            }
        }
        let (data, _) = self.dataset(test)?;
        let ext = self.extract(enc, test)?;
        let dumps = ext.split(Split::Test).ok_or_else(|| Error::Input(format!("dataset {test} has no test split")))?;
        let (x, y) = self.features(&data, dumps)?;
        if x.first().is_some_and(|v| v.len() != probe.input_dim) {
            return Err(Error::Compatibility(format!(
                "probe expects {} features but {test} gives {}",
                probe.input_dim,
                x[0].len()
            )));
        }
        let result = EvalResult::from_predictions(test, &probe.predict_batch(&x)?, &y, data.scheme)?;
        write(&self.out().join("eval").join(enc).join(format!("{train}__{test}.json")), to_json(&result))?;
        self.write_manifest("evaluate", &[enc], &[train, test])?;
        Ok(result)
    }

    fn baselines_of(data: &NliDataset) -> Result<Vec<SplitBaseline>> {
        let majority = |golds: &[usize]| -> Result<EvalResult> {
            let r = EvalResult::from_predictions(&data.id, golds, golds, data.scheme)?;
            Ok(EvalResult { correct: r.majority_count, ..r })
        };
        let mut out = Vec::new();
        for split in Split::ALL {
            let rows = data.split_rows(split);
            if rows.is_empty() {
                continue;
            }
            let golds: Vec<usize> = rows.iter().map(|&r| data.examples[r].label).collect();
            let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
            for &r in &rows {
                if let Some(a) = &data.examples[r].meta.attribute {
                    groups.entry(a).or_default().push(data.examples[r].label);
                }
            }
            let per_attribute = groups
                .into_iter()
                .map(|(a, g)| Ok((a.to_string(), EvalResult { dataset: a.to_string(), ..majority(&g)? })))
                .collect::<Result<_>>()?;
            out.push(SplitBaseline { dataset: data.id.clone(), split: split.to_string(), result: majority(&golds)?, per_attribute });
        }
        Ok(out)
    }

    pub fn cmd_baseline(&mut self, ds: &str) -> Result<Vec<SplitBaseline>> {
        let (data, _) = self.dataset(ds)?;
        let out = Self::baselines_of(&data)?;
        if out.is_empty() {
            return Err(Error::Input(format!("dataset {ds} has no rows assigned to a split")));
        }
        self.write_manifest("baseline", &[], &[ds])?;
        Ok(out)
    }

    /// Full encoder × dataset matrix plus per-dataset analyses, written to
    /// `out/report.json` and `out/report.txt`.
    pub fn cmd_matrix(&mut self) -> Result<ExperimentReport> {
        let encs = self.config.matrix_encoders.clone();
        let dss = self.config.matrix_datasets.clone();
        if encs.is_empty() || dss.is_empty() {
            return Err(Error::Validation("matrix needs at least one encoder and one dataset".into()));
        }
        let mut report = ExperimentReport::new(self.config.seed);
        for ds in &dss {
            let (data, hash) = self.dataset(ds)?;
            for split in Split::ALL {
                data.require_split(split)?;
            }
            report.dataset_hashes.insert(ds.clone(), hash);
            report.baselines.extend(Self::baselines_of(&data)?);
        }

        let mut features = Vec::new();
        let mut provenance = BTreeMap::new();
        for enc in &encs {
            let art = self.encoder(enc)?;
            report.encoders.insert(enc.clone(), art.hash);
            let mut datasets = Vec::new();
            for ds in &dss {
                let (f, p, _) = self.dataset_features(enc, ds)?;
                provenance.insert((enc.clone(), ds.clone()), p);
                datasets.push(f);
            }
            features.push(EncoderFeatures { encoder: enc.clone(), datasets });
        }
        let mut probes = BTreeMap::new();
        let probe_cfg = self.config.probe.clone();
        report.matrix = Some(run_matrix_with(&features, &probe_cfg, &mut |enc, feats, _| {
            let p = self.fit_probe(enc, feats, provenance[&(enc.to_string(), feats.id.clone())].clone())?;
            probes.insert((enc.to_string(), feats.id.clone()), p.clone());
            Ok(p)
        })?);

        for (di, ds) in dss.iter().enumerate() {
            let (data, _) = self.dataset(ds)?;
            let rows = data.split_rows(Split::Test);
            let golds: Vec<usize> = rows.iter().map(|&r| data.examples[r].label).collect();
            let attrs: Vec<Option<String>> = rows.iter().map(|&r| data.examples[r].meta.attribute.clone()).collect();
            let tags: Vec<_> = rows.iter().map(|&r| data.examples[r].meta.tag_match).collect();
            let lengths: Vec<usize> = rows.iter().map(|&r| data.examples[r].context.len()).collect();
            let mut per_attr = Vec::new();
            let mut parts = Vec::new();
            let mut buckets = Vec::new();
            for (ei, enc) in encs.iter().enumerate() {
                let (x, _) = features[ei].datasets[di].test.as_ref().expect("required above");
                let preds = probes[&(enc.clone(), ds.clone())].predict_batch(x)?;
                if attrs.iter().all(Option::is_some) {
                    per_attr.push((enc.clone(), breakdown_by_attribute(&preds, &golds, &attrs, data.scheme)?));
                }
                if tags.iter().all(Option::is_some) {
                    parts.push(partition_eval(&preds, &golds, &tags, data.scheme)?);
                }
                buckets.push(length_buckets(&preds, &golds, &lengths, BUCKET_WIDTH, BUCKET_MAX_EDGE, data.scheme)?);
            }
            if !per_attr.is_empty() {
                report.breakdowns.push(breakdown_table(ds, &per_attr)?);
            }
            if !parts.is_empty() {
                report.partitions.push(PartitionTable { dataset: ds.clone(), encoders: encs.clone(), partitions: parts });
            }
            report.length_buckets.push(LengthTable { dataset: ds.clone(), encoders: encs.clone(), buckets });
        }

        let flags = [
            ("dev_metric", "perplexity".to_string()),
            ("dropout", "none".to_string()),
            ("probe_selection", "dev accuracy".to_string()),
            ("profile", self.config.profile.to_string()),
            ("scheme", self.config.scheme.to_string()),
            ("combiner", self.config.combiner.to_string()),
            ("probe", self.config.probe.kind.to_string()),
        ];
        report.flags = flags.into_iter().map(|(k, v)| (k.to_string(), v)).collect();

        emit_report(&report, ReportFormat::Structured, &self.out().join("report.json"))?;
        emit_report(&report, ReportFormat::Text, &self.out().join("report.txt"))?;
        let (e, d): (Vec<&str>, Vec<&str>) = (encs.iter().map(String::as_str).collect(), dss.iter().map(String::as_str).collect());
        self.write_manifest("matrix", &e, &d)?;
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_differ_by_name() {
        let a = derive_seed(1, &["nmt", "en"]);
        assert_eq!(a, derive_seed(1, &["nmt", "en"]));
        assert_ne!(a, derive_seed(1, &["nmt", "fr"]));
        assert_ne!(a, derive_seed(2, &["nmt", "en"]));
        assert_ne!(derive_seed(1, &["ab", "c"]), derive_seed(1, &["a", "bc"]));
    }

    #[test]
    fn sha_matches_known_vector() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }
}
