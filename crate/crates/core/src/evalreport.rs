//! Accuracy bookkeeping and the report tables.
//!
//! Every accuracy is held as an exact `(correct, total)` pair; division only
//! happens when rendering.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpora::{LabelScheme, TagMatch};
use crate::error::{Error, Result};
use crate::probe::{train_probe, LabeledSet, ProbeConfig};

pub const SCHEMA_VERSION: u32 = 1;
pub const SCHEME_MISMATCH: &str = "scheme mismatch";

pub fn accuracy(preds: &[usize], golds: &[usize]) -> Result<f64> {
    let correct = count_correct(preds, golds)?;
    if golds.is_empty() {
        return Err(Error::Input("accuracy of an empty prediction set".into()));
    }
    Ok(correct as f64 / golds.len() as f64)
}

fn count_correct(preds: &[usize], golds: &[usize]) -> Result<u64> {
    if preds.len() != golds.len() {
        return Err(Error::Input(format!(
            "{} predictions for {} gold labels",
            preds.len(),
            golds.len()
        )));
    }
    Ok(preds.iter().zip(golds).filter(|(p, g)| p == g).count() as u64)
}

/// Most frequent label and its count; ties go to the lexicographically
/// smallest label.
pub fn majority(histogram: &BTreeMap<String, u64>) -> Option<(&str, u64)> {
    let mut best: Option<(&str, u64)> = None;
    for (label, &count) in histogram {
        if best.is_none_or(|(_, c)| count > c) {
            best = Some((label, count));
        }
    }
    best
}

pub fn majority_baseline(histogram: &BTreeMap<String, u64>) -> Result<(f64, String)> {
    let total: u64 = histogram.values().sum();
    match majority(histogram) {
        Some((label, count)) if total > 0 => Ok((count as f64 / total as f64, label.to_string())),
        _ => Err(Error::Input("majority baseline of an empty histogram".into())),
    }
}

pub fn histogram(golds: &[usize], scheme: LabelScheme) -> BTreeMap<String, u64> {
    let mut h = BTreeMap::new();
    for &g in golds {
        let name = scheme.label_name(g).map_or_else(|| g.to_string(), str::to_string);
        *h.entry(name).or_insert(0) += 1;
    }
    h
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalResult {
    pub dataset: String,
    pub n: u64,
    pub correct: u64,
    /// Count of the majority gold label within this set.
    pub majority_count: u64,
    pub majority_label: Option<String>,
}

impl EvalResult {
    pub fn from_predictions(dataset: &str, preds: &[usize], golds: &[usize], scheme: LabelScheme) -> Result<Self> {
        let correct = count_correct(preds, golds)?;
        let hist = histogram(golds, scheme);
        let (label, count) = majority(&hist).map_or((None, 0), |(l, c)| (Some(l.to_string()), c));
        Ok(EvalResult {
            dataset: dataset.to_string(),
            n: golds.len() as u64,
            correct,
            majority_count: count,
            majority_label: label,
        })
    }

    /// `None` for an empty set.
    pub fn accuracy(&self) -> Option<f64> {
        (self.n > 0).then(|| self.correct as f64 / self.n as f64)
    }

    pub fn majority_baseline(&self) -> Option<f64> {
        (self.n > 0).then(|| self.majority_count as f64 / self.n as f64)
    }

    pub fn beats_majority(&self) -> bool {
        self.n > 0 && self.correct > self.majority_count
    }
}

/// One-decimal percentage, or `-` when undefined.
pub fn pct(v: Option<f64>) -> String {
    v.map_or("-".to_string(), |a| format!("{:.1}", 100.0 * a))
}

/// Probe features for one dataset as seen through one encoder.
#[derive(Debug, Clone)]
pub struct DatasetFeatures {
    pub id: String,
    pub scheme: LabelScheme,
    pub train: Option<(Vec<Vec<f32>>, Vec<usize>)>,
    pub dev: Option<(Vec<Vec<f32>>, Vec<usize>)>,
    pub test: Option<(Vec<Vec<f32>>, Vec<usize>)>,
}

#[derive(Debug, Clone)]
pub struct EncoderFeatures {
    pub encoder: String,
    pub datasets: Vec<DatasetFeatures>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CellStatus {
    Filled { result: EvalResult },
    Skipped { reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatrixCell {
    pub encoder: String,
    pub train: String,
    pub test: String,
    #[serde(flatten)]
    pub status: CellStatus,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatrixReport {
    pub encoders: Vec<String>,
    pub rows: Vec<String>,
    pub columns: Vec<String>,
    /// Ordered by encoder, then row, then column.
    pub cells: Vec<MatrixCell>,
    /// Majority baseline of each test set, keyed by dataset.
    pub baselines: BTreeMap<String, EvalResult>,
}

impl MatrixReport {
    pub fn filled(&self) -> usize {
        self.cells.iter().filter(|c| matches!(c.status, CellStatus::Filled { .. })).count()
    }

    pub fn skipped(&self) -> usize {
        self.cells.len() - self.filled()
    }

    pub fn cell(&self, encoder: &str, train: &str, test: &str) -> Option<&MatrixCell> {
        self.cells.iter().find(|c| c.encoder == encoder && c.train == train && c.test == test)
    }
}

/// Produces the probe for one encoder and training set.
pub type ProbeFn<'a> = dyn FnMut(&str, &DatasetFeatures, &ProbeConfig) -> Result<crate::probe::ProbeModel> + 'a;

/// Default probe trainer used by [`run_matrix`].
pub fn train_on(ds: &DatasetFeatures, config: &ProbeConfig) -> Result<crate::probe::ProbeModel> {
    let (tx, ty) = ds
        .train
        .as_ref()
        .ok_or_else(|| Error::Input(format!("dataset {} has no train split", ds.id)))?;
    let (dx, dy) = ds
        .dev
        .as_ref()
        .ok_or_else(|| Error::Input(format!("dataset {} has no dev split", ds.id)))?;
    let cfg = ProbeConfig { scheme: ds.scheme, ..config.clone() };
    Ok(train_probe(LabeledSet { features: tx, labels: ty }, LabeledSet { features: dx, labels: dy }, &cfg)?.0)
}

/// Trains one probe per encoder × training set and evaluates it on every test
/// set with the same label scheme. Other pairs are recorded as skipped.
pub fn run_matrix(encoders: &[EncoderFeatures], config: &ProbeConfig) -> Result<MatrixReport> {
    run_matrix_with(encoders, config, &mut |_, ds, cfg| train_on(ds, cfg))
}

/// As [`run_matrix`] with a caller-supplied trainer, e.g. one backed by a cache.
pub fn run_matrix_with(encoders: &[EncoderFeatures], config: &ProbeConfig, trainer: &mut ProbeFn<'_>) -> Result<MatrixReport> {
    let first = encoders.first().ok_or_else(|| Error::Input("matrix with no encoders".into()))?;
    let ids: Vec<String> = first.datasets.iter().map(|d| d.id.clone()).collect();
    for e in encoders {
        let these: Vec<&String> = e.datasets.iter().map(|d| &d.id).collect();
        if these != ids.iter().collect::<Vec<_>>() {
            return Err(Error::Input(format!("encoder {} covers a different dataset list", e.encoder)));
        }
        if let Some(ds) = e.datasets.iter().find(|d| d.test.is_none()) {
            return Err(Error::Input(format!("dataset {} has no test split", ds.id)));
        }
    }
    let mut baselines = BTreeMap::new();
    for ds in &first.datasets {
        let (_, y) = ds.test.as_ref().expect("checked above");
        let r = EvalResult::from_predictions(&ds.id, y, y, ds.scheme)?;
        baselines.insert(ds.id.clone(), EvalResult { correct: r.majority_count, ..r });
    }
    let mut cells = Vec::new();
    for enc in encoders {
        for train in &enc.datasets {
            let probe = trainer(&enc.encoder, train, config)?;
            for test in &enc.datasets {
                let status = if test.scheme != train.scheme {
                    CellStatus::Skipped { reason: SCHEME_MISMATCH.to_string() }
                } else {
                    let (x, y) = test.test.as_ref().expect("checked above");
                    let preds = probe.predict_batch(x)?;
                    CellStatus::Filled { result: EvalResult::from_predictions(&test.id, &preds, y, test.scheme)? }
                };
                cells.push(MatrixCell {
                    encoder: enc.encoder.clone(),
                    train: train.id.clone(),
                    test: test.id.clone(),
                    status,
                });
            }
        }
    }
    Ok(MatrixReport {
        encoders: encoders.iter().map(|e| e.encoder.clone()).collect(),
        rows: ids.clone(),
        columns: ids,
        cells,
        baselines,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BreakdownReport {
    /// One result per attribute, sorted by attribute name.
    pub attributes: BTreeMap<String, EvalResult>,
}

pub fn breakdown_by_attribute(
    preds: &[usize],
    golds: &[usize],
    attributes: &[Option<String>],
    scheme: LabelScheme,
) -> Result<BreakdownReport> {
    if preds.len() != golds.len() || attributes.len() != golds.len() {
        return Err(Error::Input(format!(
            "{} predictions, {} golds and {} attributes",
            preds.len(),
            golds.len(),
            attributes.len()
        )));
    }
    let mut groups: BTreeMap<&str, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
    for (i, attr) in attributes.iter().enumerate() {
        let a = attr.as_deref().ok_or_else(|| Error::Input(format!("row {i} has no attribute")))?;
        let g = groups.entry(a).or_default();
        g.0.push(preds[i]);
        g.1.push(golds[i]);
    }
    let attributes = groups
        .into_iter()
        .map(|(a, (p, g))| Ok((a.to_string(), EvalResult::from_predictions(a, &p, &g, scheme)?)))
        .collect::<Result<_>>()?;
    Ok(BreakdownReport { attributes })
}

/// Per-attribute accuracies of several encoders side by side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakdownRow {
    pub attribute: String,
    pub n: u64,
    pub majority: Option<f64>,
    /// Accuracy per encoder, in the table's encoder order.
    pub accuracies: Vec<Option<f64>>,
    pub average: Option<f64>,
    /// Every encoder beats this attribute's majority baseline.
    pub all_beat_majority: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakdownTable {
    pub dataset: String,
    pub encoders: Vec<String>,
    pub rows: Vec<BreakdownRow>,
}

pub fn breakdown_table(dataset: &str, per_encoder: &[(String, BreakdownReport)]) -> Result<BreakdownTable> {
    let Some((_, first)) = per_encoder.first() else {
        return Err(Error::Input("breakdown table with no encoders".into()));
    };
    let mut rows = Vec::new();
    for (attr, base) in &first.attributes {
        let results: Vec<&EvalResult> = per_encoder
            .iter()
            .map(|(e, b)| {
                b.attributes
                    .get(attr)
                    .ok_or_else(|| Error::Input(format!("encoder {e} has no {attr:?} breakdown")))
            })
            .collect::<Result<_>>()?;
        let accuracies: Vec<Option<f64>> = results.iter().map(|r| r.accuracy()).collect();
        let total_correct: u64 = results.iter().map(|r| r.correct).sum();
        let total_n: u64 = results.iter().map(|r| r.n).sum();
        rows.push(BreakdownRow {
            attribute: attr.clone(),
            n: base.n,
            majority: base.majority_baseline(),
            accuracies,
            average: (total_n > 0).then(|| total_correct as f64 / total_n as f64),
            all_beat_majority: results.iter().all(|r| r.beats_majority()),
        });
    }
    Ok(BreakdownTable {
        dataset: dataset.to_string(),
        encoders: per_encoder.iter().map(|(e, _)| e.clone()).collect(),
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionReport {
    /// Omitted when no example falls in the partition.
    pub same: Option<EvalResult>,
    pub different: Option<EvalResult>,
}

pub fn partition_eval(
    preds: &[usize],
    golds: &[usize],
    flags: &[Option<TagMatch>],
    scheme: LabelScheme,
) -> Result<PartitionReport> {
    if preds.len() != golds.len() || flags.len() != golds.len() {
        return Err(Error::Input("predictions, golds and partition flags differ in length".into()));
    }
    let mut parts: [(Vec<usize>, Vec<usize>); 2] = Default::default();
    for (i, f) in flags.iter().enumerate() {
        let f = f.ok_or_else(|| Error::Input(format!("row {i} has no tag_match flag")))?;
        let slot = &mut parts[(f == TagMatch::Different) as usize];
        slot.0.push(preds[i]);
        slot.1.push(golds[i]);
    }
    let make = |name: &str, (p, g): &(Vec<usize>, Vec<usize>)| -> Result<Option<EvalResult>> {
        if g.is_empty() {
            Ok(None)
        } else {
            EvalResult::from_predictions(name, p, g, scheme).map(Some)
        }
    };
    Ok(PartitionReport {
        same: make("same", &parts[0])?,
        different: make("different", &parts[1])?,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LengthBucket {
    pub lo: usize,
    /// Exclusive; `None` for the overflow bucket.
    pub hi: Option<usize>,
    pub result: EvalResult,
}

impl LengthBucket {
    pub fn label(&self) -> String {
        match self.hi {
            Some(hi) => format!("{}-{}", self.lo, hi),
            None => format!("{}+", self.lo),
        }
    }
}

pub const BUCKET_WIDTH: usize = 10;
pub const BUCKET_MAX_EDGE: usize = 80;

/// Buckets `[0,w), [w,2w), …` up to `max_edge`, then one overflow bucket.
/// Empty buckets report `n = 0`.
pub fn length_buckets(
    preds: &[usize],
    golds: &[usize],
    lengths: &[usize],
    width: usize,
    max_edge: usize,
    scheme: LabelScheme,
) -> Result<Vec<LengthBucket>> {
    if width == 0 || !max_edge.is_multiple_of(width) {
        return Err(Error::Validation(format!("bucket width {width} must divide max edge {max_edge}")));
    }
    if preds.len() != golds.len() || lengths.len() != golds.len() {
        return Err(Error::Input("predictions, golds and lengths differ in length".into()));
    }
    let count = max_edge / width + 1;
    let mut groups = vec![(Vec::new(), Vec::new()); count];
    for i in 0..golds.len() {
        let b = (lengths[i] / width).min(count - 1);
        groups[b].0.push(preds[i]);
        groups[b].1.push(golds[i]);
    }
    groups
        .into_iter()
        .enumerate()
        .map(|(b, (p, g))| {
            let lo = b * width;
            let hi = (b + 1 < count).then_some(lo + width);
            let mut bucket = LengthBucket { lo, hi, result: EvalResult::from_predictions("", &p, &g, scheme)? };
            bucket.result.dataset = bucket.label();
            Ok(bucket)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionTable {
    pub dataset: String,
    pub encoders: Vec<String>,
    pub partitions: Vec<PartitionReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthTable {
    pub dataset: String,
    pub encoders: Vec<String>,
    pub buckets: Vec<Vec<LengthBucket>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitBaseline {
    pub dataset: String,
    pub split: String,
    pub result: EvalResult,
    pub per_attribute: BTreeMap<String, EvalResult>,
}

/// The structured run report. Field order is the serialization order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub seed: u64,
    /// Settings the results depend on, including every open choice made by
    /// this toolkit.
    pub flags: BTreeMap<String, String>,
    pub encoders: BTreeMap<String, String>,
    pub dataset_hashes: BTreeMap<String, String>,
    pub baselines: Vec<SplitBaseline>,
    pub matrix: Option<MatrixReport>,
    pub breakdowns: Vec<BreakdownTable>,
    pub partitions: Vec<PartitionTable>,
    pub length_buckets: Vec<LengthTable>,
    /// Filled in by hand; never computed.
    pub external_baselines: BTreeMap<String, String>,
}

impl ExperimentReport {
    pub fn new(seed: u64) -> Self {
        ExperimentReport {
            schema_version: SCHEMA_VERSION,
            seed,
            flags: BTreeMap::new(),
            encoders: BTreeMap::new(),
            dataset_hashes: BTreeMap::new(),
            baselines: Vec::new(),
            matrix: None,
            breakdowns: Vec::new(),
            partitions: Vec::new(),
            length_buckets: Vec::new(),
            external_baselines: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Structured,
    Text,
}

pub fn to_json(report: &ExperimentReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}

pub fn from_json(text: &str) -> Result<ExperimentReport> {
    serde_json::from_str(text).map_err(|e| Error::Validation(format!("report does not parse: {e}")))
}

pub fn emit_report(report: &ExperimentReport, format: ReportFormat, path: &Path) -> Result<()> {
    let text = match format {
        ReportFormat::Structured => to_json(report),
        ReportFormat::Text => render_text(report),
    };
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn table(out: &mut String, header: &[String], rows: &[Vec<String>]) {
    let cols = header.len();
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |out: &mut String, cells: &[String]| {
        let parts: Vec<String> = (0..cols)
            .map(|i| {
                let c = cells.get(i).map_or("", String::as_str);
                let pad = widths[i] - c.chars().count();
                if i == 0 {
                    format!("{c}{}", " ".repeat(pad))
                } else {
                    format!("{}{c}", " ".repeat(pad))
                }
            })
            .collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(out, header);
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    line(out, &rule);
    for r in rows {
        line(out, r);
    }
    out.push('\n');
}

pub fn render_matrix(m: &MatrixReport) -> String {
    let mut out = String::new();
    let mut header = vec!["train \\ test".to_string()];
    for c in &m.columns {
        for e in &m.encoders {
            header.push(format!("{c}/{e}"));
        }
    }
    let mut rows = vec![{
        let mut r = vec!["MAJ".to_string()];
        for c in &m.columns {
            for _ in &m.encoders {
                r.push(pct(m.baselines.get(c).and_then(EvalResult::accuracy)));
            }
        }
        r
    }];
    for train in &m.rows {
        let mut r = vec![train.clone()];
        for c in &m.columns {
            for e in &m.encoders {
                r.push(match m.cell(e, train, c).map(|c| &c.status) {
                    Some(CellStatus::Filled { result }) => pct(result.accuracy()),
                    _ => "skip".to_string(),
                });
            }
        }
        rows.push(r);
    }
    table(&mut out, &header, &rows);
    out
}

pub fn render_text(report: &ExperimentReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "schema {}  seed {}\n", report.schema_version, report.seed);
    if !report.flags.is_empty() {
        let rows: Vec<Vec<String>> = report.flags.iter().map(|(k, v)| vec![k.clone(), v.clone()]).collect();
        table(&mut out, &["setting".into(), "value".into()], &rows);
    }
    if !report.baselines.is_empty() {
        let rows: Vec<Vec<String>> = report
            .baselines
            .iter()
            .map(|b| {
                vec![
                    b.dataset.clone(),
                    b.split.clone(),
                    b.result.n.to_string(),
                    b.result.majority_label.clone().unwrap_or_default(),
                    pct(b.result.accuracy()),
                ]
            })
            .collect();
        table(&mut out, &["dataset".into(), "split".into(), "n".into(), "majority".into(), "MAJ".into()], &rows);
    }
    if let Some(m) = &report.matrix {
        out.push_str("accuracy (rows: train, columns: test/encoder)\n");
        out.push_str(&render_matrix(m));
    }
    for b in &report.breakdowns {
        let _ = writeln!(out, "{} by attribute (* = every encoder beats MAJ)", b.dataset);
        let mut header = vec!["attribute".to_string(), "n".into(), "MAJ".into()];
        header.extend(b.encoders.iter().cloned());
        header.push("avg".into());
        let rows: Vec<Vec<String>> = b
            .rows
            .iter()
            .map(|r| {
                let mut row = vec![
                    format!("{}{}", r.attribute, if r.all_beat_majority { " *" } else { "" }),
                    r.n.to_string(),
                    pct(r.majority),
                ];
                row.extend(r.accuracies.iter().map(|a| pct(*a)));
                row.push(pct(r.average));
                row
            })
            .collect();
        table(&mut out, &header, &rows);
    }
    for p in &report.partitions {
        let _ = writeln!(out, "{} by tag match", p.dataset);
        let mut header = vec!["partition".to_string()];
        header.extend(p.encoders.iter().cloned());
        let pick = |f: fn(&PartitionReport) -> &Option<EvalResult>| -> Vec<String> {
            p.partitions.iter().map(|r| pct(f(r).as_ref().and_then(EvalResult::accuracy))).collect()
        };
        let mut same = vec!["Same Tag".to_string()];
        same.extend(pick(|r| &r.same));
        let mut diff = vec!["Different Tag".to_string()];
        diff.extend(pick(|r| &r.different));
        table(&mut out, &header, &[same, diff]);
    }
    for l in &report.length_buckets {
        let _ = writeln!(out, "{} by context length", l.dataset);
        let mut header = vec!["length".to_string()];
        header.extend(l.encoders.iter().cloned());
        header.push("total".into());
        let Some(first) = l.buckets.first() else { continue };
        let rows: Vec<Vec<String>> = (0..first.len())
            .map(|i| {
                let mut r = vec![first[i].label()];
                r.extend(l.buckets.iter().map(|b| pct(b[i].result.accuracy())));
                r.push(first[i].result.n.to_string());
                r
            })
            .collect();
        table(&mut out, &header, &rows);
    }
    out.push_str("external baselines\n");
    if report.external_baselines.is_empty() {
        out.push_str("(none)\n");
    }
    for (k, v) in &report.external_baselines {
        let _ = writeln!(out, "{k}: {v}");
    }
    out
}
