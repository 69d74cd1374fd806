//! One test per acceptance criterion. Each writes a PASS/FAIL line straight
//! to stdout so the summary survives output capture.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use nmtprobe::corpora::{EncodedPair, LabelScheme, TagMatch};
use nmtprobe::diagnostics::{gradcheck_suite, GRADCHECK_TOLERANCE};
use nmtprobe::evalreport::{
    breakdown_by_attribute, histogram, length_buckets, majority_baseline, partition_eval, CellStatus, SCHEME_MISMATCH,
};
use nmtprobe::numerics::{seeded_rng, ParamStore};
use nmtprobe::pipeline::{Overrides, RunConfig, Workspace};
use nmtprobe::probe::{gaussian_blobs, train_probe, LabeledSet, ProbeConfig, ProbeKind};
use nmtprobe::repr::{combine, combine_concat, encode_sentences, extract, Combiner, RepScheme};
use nmtprobe::seq2seq::{train_nmt, ModelShape, NmtConfig, Profile, Seq2Seq};
use rand::Rng;

const GRADCHECK_BUDGET: Duration = Duration::from_secs(120);
const COPY_MIN_ACCURACY: f64 = 0.95;
const COPY_MAX_STEPS: usize = 3000;
const COPY_BUDGET: Duration = Duration::from_secs(600);
const SENSITIVITY_MIN_GAP: f64 = 0.10;

fn line(n: u32, ok: bool, what: &str, detail: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "acceptance {n} {}: {what} ({detail})", if ok { "PASS" } else { "FAIL" });
}

#[test]
fn c1_gradient_correctness() {
    let t = Instant::now();
    let seeds: Vec<u64> = (0..10).collect();
    let suite = gradcheck_suite(&seeds, None).unwrap();
    let elapsed = t.elapsed();
    let worst = suite.components.iter().map(|c| c.max_relative_error).fold(0.0, f64::max);
    let ok = suite.passed() && suite.components.len() == 6 && elapsed < GRADCHECK_BUDGET;
    line(1, ok, "gradcheck over 6 components x 10 seeds", &format!("worst {worst:.2e} < {GRADCHECK_TOLERANCE:e}, {elapsed:.1?}"));
    assert!(ok, "{}", suite.render());
}

fn copy_pairs(n: usize, rng: &mut impl Rng) -> Vec<EncodedPair> {
    (0..n)
        .map(|_| {
            let len = rng.gen_range(3..=8);
            let s: Vec<usize> = (0..len).map(|_| rng.gen_range(4..30)).collect();
            EncodedPair { source: s.clone(), target: s }
        })
        .collect()
}

#[test]
fn c2_copy_task_learnability() {
    let mut rng = seeded_rng(0);
    let train = copy_pairs(1000, &mut rng);
    let dev = copy_pairs(50, &mut rng);
    let held = copy_pairs(100, &mut rng);
    let config = NmtConfig {
        d: 16,
        layers: 2,
        src_vocab_size: 30,
        tgt_vocab_size: 30,
        eval_every: 250,
        patience: 100,
        max_steps: COPY_MAX_STEPS,
        ..NmtConfig::default()
    };
    let t = Instant::now();
    let (ck, log) = train_nmt(&train, &dev, &config, 1).unwrap();
    let model = ck.model().unwrap();
    let (mut right, mut total) = (0, 0);
    for p in &held {
        let out = model.greedy_decode(&ck.params, &p.source, 2 * p.source.len() + 2).unwrap();
        total += p.target.len();
        right += p.target.iter().enumerate().filter(|(i, y)| out.get(*i) == Some(y)).count();
    }
    let elapsed = t.elapsed();
    let acc = right as f64 / total as f64;
    let steps = log.losses.len();
    let ok = acc >= COPY_MIN_ACCURACY && steps <= COPY_MAX_STEPS && elapsed < COPY_BUDGET;
    line(2, ok, "copy task greedy token accuracy", &format!("{acc:.4} >= {COPY_MIN_ACCURACY}, {steps} steps, {elapsed:.1?}"));
    assert!(ok);
}

fn pairs_of(features: &[Vec<f32>], split: usize) -> Vec<Vec<f32>> {
    features.iter().map(|f| combine_concat(&f[..split], &f[split..]).unwrap().vector).collect()
}

fn xor_set(n: usize, seed: u64) -> (Vec<Vec<f32>>, Vec<usize>) {
    let mut rng = seeded_rng(seed);
    let mut x = Vec::new();
    let mut y = Vec::new();
    for i in 0..n {
        let (a, b) = ((i % 2) as f32 * 2.0 - 1.0, ((i / 2) % 2) as f32 * 2.0 - 1.0);
        let jitter = |rng: &mut nmtprobe::numerics::Rng| rng.gen_range(-0.2f32..0.2);
        let (ca, cb) = (a + jitter(&mut rng), b + jitter(&mut rng));
        x.push(combine_concat(&[ca], &[cb]).unwrap().vector);
        y.push(((a > 0.0) != (b > 0.0)) as usize);
    }
    (x, y)
}

fn accuracy(preds: &[usize], golds: &[usize]) -> f64 {
    preds.iter().zip(golds).filter(|(p, g)| p == g).count() as f64 / golds.len() as f64
}

#[test]
fn c3_probe_sanity() {
    let (tx, ty) = gaussian_blobs(400, 8, 2.0, 1);
    let (dx, dy) = gaussian_blobs(200, 8, 2.0, 2);
    let (tx, dx) = (pairs_of(&tx, 4), pairs_of(&dx, 4));
    let cfg = ProbeConfig { kind: ProbeKind::Linear, learning_rate: 0.05, max_epochs: 50, patience: 50, seed: 3, ..ProbeConfig::default() };
    let (_, log) = train_probe(LabeledSet { features: &tx, labels: &ty }, LabeledSet { features: &dx, labels: &dy }, &cfg).unwrap();
    let first_perfect = log.dev_accuracies.iter().position(|&a| a == 1.0).map(|e| e + 1);
    let separable_ok = first_perfect.is_some_and(|e| e <= 50);

    let (xt, yt) = xor_set(400, 4);
    let (xd, yd) = xor_set(200, 5);
    let (xe, ye) = xor_set(400, 6);
    let run = |kind| {
        let cfg = ProbeConfig { kind, hidden_size: 16, learning_rate: 0.01, seed: 7, ..ProbeConfig::default() };
        let (m, _) = train_probe(LabeledSet { features: &xt, labels: &yt }, LabeledSet { features: &xd, labels: &yd }, &cfg).unwrap();
        accuracy(&m.predict_batch(&xe).unwrap(), &ye)
    };
    let (lin, mlp) = (run(ProbeKind::Linear), run(ProbeKind::Mlp));
    let xor_ok = lin <= 0.75 && mlp >= lin;
    let ok = separable_ok && xor_ok;
    line(
        3,
        ok,
        "separable dev 1.0 within 50 epochs; MLP >= linear on XOR",
        &format!("perfect at epoch {first_perfect:?}; xor linear {lin:.3} <= 0.75, mlp {mlp:.3}"),
    );
    assert!(ok);
}

#[test]
fn c4_paper_shape_contract() {
    let mut config = NmtConfig::for_profile(Profile::Paper);
    config.src_vocab_size = 40;
    config.tgt_vocab_size = 40;
    let mut params = ParamStore::<f32>::new();
    let model = Seq2Seq::init(&mut params, &mut seeded_rng(0), ModelShape::from(&config)).unwrap();
    let enc = model.encode(&params, &[4, 9, 17, 5, 30]).unwrap();
    let concat_last = extract(&enc, RepScheme::ConcatLast).unwrap();
    let maxpool = extract(&enc, RepScheme::MaxPool).unwrap();
    let other = extract(&model.encode(&params, &[6, 7]).unwrap(), RepScheme::ConcatLast).unwrap();
    let dims = (
        concat_last.vector.len(),
        maxpool.vector.len(),
        combine(Combiner::Concat, &concat_last, &other).unwrap().vector.len(),
        combine(Combiner::InferSent, &concat_last, &other).unwrap().vector.len(),
    );
    let ok = config.d == 500 && config.layers == 4 && dims == (1000, 1000, 2000, 4000);
    line(4, ok, "d=500 sentence / concat / infersent widths", &format!("{dims:?} == (1000, 1000, 2000, 4000)"));
    assert!(ok);
}

/// Brute-force majority: scan labels in order, keep the first maximum.
fn oracle_majority(golds: &[usize], scheme: LabelScheme) -> (u64, String) {
    let mut names: Vec<&str> = scheme.labels().to_vec();
    names.sort();
    let mut best = (0u64, String::new());
    for name in names {
        let idx = scheme.label_index(name).unwrap();
        let c = golds.iter().filter(|&&g| g == idx).count() as u64;
        if c > best.0 {
            best = (c, name.to_string());
        }
    }
    best
}

fn oracle_correct(preds: &[usize], golds: &[usize], keep: impl Fn(usize) -> bool) -> (u64, u64) {
    let mut n = 0;
    let mut c = 0;
    for i in 0..golds.len() {
        if keep(i) {
            n += 1;
            if preds[i] == golds[i] {
                c += 1;
            }
        }
    }
    (n, c)
}

#[test]
fn c5_bookkeeping_exactness() {
    let mut rng = seeded_rng(99);
    let mut mismatches = Vec::new();
    let mut checks = 0;
    for round in 0..40 {
        let scheme = if round % 2 == 0 { LabelScheme::TwoWay } else { LabelScheme::ThreeWay };
        let k = scheme.num_labels();
        let n = rng.gen_range(1..120);
        let mut golds: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
        if round % 4 < 2 {
            // force an exact tie between the first two labels
            golds = (0..2 * (n / 2).max(1)).map(|i| i % 2).collect();
        }
        let n = golds.len();
        let preds: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
        let attrs: Vec<Option<String>> = (0..n).map(|_| Some(["b", "a", "c"][rng.gen_range(0..3)].to_string())).collect();
        let tags: Vec<Option<TagMatch>> = (0..n).map(|_| Some(if rng.gen_bool(0.3) { TagMatch::Different } else { TagMatch::Same })).collect();
        let edges = [0, 9, 10, 19, 20, 79, 80, 81, 200];
        let lengths: Vec<usize> = (0..n).map(|i| if i < edges.len() { edges[i] } else { rng.gen_range(0..100) }).collect();

        let hist = histogram(&golds, scheme);
        let (acc, label) = majority_baseline(&hist).unwrap();
        let (mc, ml) = oracle_majority(&golds, scheme);
        checks += 1;
        if label != ml || acc != mc as f64 / n as f64 {
            mismatches.push(format!("round {round}: majority {label} {acc} vs {ml} {mc}"));
        }

        let b = breakdown_by_attribute(&preds, &golds, &attrs, scheme).unwrap();
        for a in ["a", "b", "c"] {
            let (on, oc) = oracle_correct(&preds, &golds, |i| attrs[i].as_deref() == Some(a));
            checks += 1;
            match b.attributes.get(a) {
                Some(r) if (r.n, r.correct) == (on, oc) => {}
                None if on == 0 => {}
                other => mismatches.push(format!("round {round}: attribute {a}: {other:?} vs ({on}, {oc})")),
            }
        }
        if b.attributes.keys().map(String::as_str).collect::<Vec<_>>().windows(2).any(|w| w[0] >= w[1]) {
            mismatches.push(format!("round {round}: attribute rows unsorted"));
        }

        let p = partition_eval(&preds, &golds, &tags, scheme).unwrap();
        for (flag, got) in [(TagMatch::Same, &p.same), (TagMatch::Different, &p.different)] {
            let (on, oc) = oracle_correct(&preds, &golds, |i| tags[i] == Some(flag));
            checks += 1;
            let got = got.as_ref().map(|r| (r.n, r.correct));
            if got != (on > 0).then_some((on, oc)) {
                mismatches.push(format!("round {round}: partition {flag:?}: {got:?} vs ({on}, {oc})"));
            }
        }

        let buckets = length_buckets(&preds, &golds, &lengths, 10, 80, scheme).unwrap();
        if buckets.len() != 9 || buckets[8].label() != "80+" || buckets[1].label() != "10-20" {
            mismatches.push(format!("round {round}: bucket layout"));
        }
        for (bi, bucket) in buckets.iter().enumerate() {
            let lo = bi * 10;
            let keep = |i: usize| if bi == 8 { lengths[i] >= 80 } else { lengths[i] >= lo && lengths[i] < lo + 10 };
            let (on, oc) = oracle_correct(&preds, &golds, keep);
            checks += 1;
            if (bucket.result.n, bucket.result.correct) != (on, oc) {
                mismatches.push(format!("round {round}: bucket {}: ({}, {}) vs ({on}, {oc})", bucket.label(), bucket.result.n, bucket.result.correct));
            }
        }
    }
    let ok = mismatches.is_empty();
    line(5, ok, "baseline / attribute / partition / length tables vs recount", &format!("{checks} tables, {} mismatches", mismatches.len()));
    assert!(ok, "{mismatches:#?}");
}

#[test]
fn c6_matrix_protocol() {
    const EXPECTED_FILLED: usize = 18;
    const EXPECTED_SKIPPED: usize = 12;
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::write(dir.path(), &common::Fixture { encoders: 2, two_way: 3, three_way: 1, ..common::Fixture::default() });
    let mut ws = Workspace::new(RunConfig::load(&cfg, &Overrides::default()).unwrap());
    let m = ws.cmd_matrix().unwrap().matrix.unwrap();
    let marked = m
        .cells
        .iter()
        .filter(|c| matches!(&c.status, CellStatus::Skipped { reason } if reason == SCHEME_MISMATCH))
        .count();
    let (filled, skipped, total) = (m.filled(), m.skipped(), m.cells.len());
    let ok = filled == EXPECTED_FILLED && skipped == EXPECTED_SKIPPED && marked == skipped;
    line(
        6,
        ok,
        "2 encoders x (3 two-way + 1 three-way) matrix",
        &format!("{filled} filled (expected {EXPECTED_FILLED}), {skipped} skipped (expected {EXPECTED_SKIPPED}), {marked} marked, {total} cells"),
    );
    assert_eq!(total, filled + skipped);
    assert!(ok);
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    walkdir::WalkDir::new(root)
        .into_iter()
        .map(Result::unwrap)
        .filter(|e| e.file_type().is_file())
        .map(|e| (e.path().strip_prefix(root).unwrap().to_path_buf(), std::fs::read(e.path()).unwrap()))
        .collect()
}

#[test]
fn c7_end_to_end_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::write(dir.path(), &common::Fixture { encoders: 2, ..common::Fixture::default() });
    let run = |name: &str| {
        let out = dir.path().join(name);
        let mut ws = Workspace::new(RunConfig::load(&cfg, &Overrides { out: Some(out.clone()), ..Overrides::default() }).unwrap());
        ws.cmd_train_nmt(&[]).unwrap();
        ws.cmd_matrix().unwrap();
        tree(&out)
    };
    let (a, b) = (run("a"), run("b"));
    let differing: Vec<&PathBuf> = a.keys().filter(|k| b.get(*k) != a.get(*k)).collect();
    let kinds = |ext: &str| a.keys().filter(|k| k.to_string_lossy().ends_with(ext)).count();
    let (checkpoints, dumps) = (kinds("model.sprb"), kinds(".sprr"));
    let ok = differing.is_empty() && a.len() == b.len() && checkpoints == 2 && dumps > 0 && a.contains_key(Path::new("report.json"));
    line(
        7,
        ok,
        "two seeded runs are byte-identical",
        &format!("{} files ({checkpoints} checkpoints, {dumps} dumps, report.json), {} differ", a.len(), differing.len()),
    );
    assert!(ok, "{differing:?}");
}

fn sentence(rng: &mut impl Rng, lo: usize, hi: usize, vocab: usize) -> Vec<usize> {
    let n = rng.gen_range(lo..=hi);
    (0..n).map(|_| rng.gen_range(4..vocab)).collect()
}

/// Source ids 4..28 come in synonym pairs (4+2k, 5+2k) that both translate to
/// target 4+k. The NLI label depends on the meaning of the first context
/// token; probes see one synonym during training and the other at test.
fn sensitivity_gap(seed: u64) -> (f64, f64) {
    let mut rng = seeded_rng(100 + seed);
    let pair = |rng: &mut nmtprobe::numerics::Rng| {
        let s = sentence(rng, 5, 15, 28);
        let t = s.iter().map(|&x| 4 + (x - 4) / 2).collect();
        EncodedPair { source: s, target: t }
    };
    let train: Vec<_> = (0..1000).map(|_| pair(&mut rng)).collect();
    let dev: Vec<_> = (0..50).map(|_| pair(&mut rng)).collect();
    let config = NmtConfig {
        d: 16,
        layers: 2,
        src_vocab_size: 28,
        tgt_vocab_size: 16,
        eval_every: 250,
        patience: 100,
        max_steps: 1500,
        ..NmtConfig::default()
    };
    let (ck, _) = train_nmt(&train, &dev, &config, seed).unwrap();
    let trained = ck.model().unwrap();
    let mut random_params = ParamStore::<f32>::new();
    let random = Seq2Seq::init(&mut random_params, &mut seeded_rng(seed), ModelShape::from(&config)).unwrap();

    let mut nli = |n: usize, synonym: usize| {
        let (mut ctx, mut hyp, mut y) = (Vec::new(), Vec::new(), Vec::new());
        for _ in 0..n {
            let mut s = sentence(&mut rng, 5, 12, 28);
            let k = rng.gen_range(0..12usize);
            s[0] = 4 + 2 * k + synonym;
            ctx.push(s);
            hyp.push(sentence(&mut rng, 3, 6, 28));
            y.push((k < 6) as usize);
        }
        (ctx, hyp, y)
    };
    let (tr, de, te) = (nli(800, 0), nli(200, 0), nli(400, 1));
    let probe_cfg = ProbeConfig { kind: ProbeKind::Linear, learning_rate: 0.01, max_epochs: 100, seed, ..ProbeConfig::default() };
    let mut accs = Vec::new();
    for (model, params) in [(&trained, &ck.params), (&random, &random_params)] {
        let feats = |d: &(Vec<Vec<usize>>, Vec<Vec<usize>>, Vec<usize>)| -> Vec<Vec<f32>> {
            let c = encode_sentences(model, params, &d.0, RepScheme::ConcatLast, 64).unwrap();
            let h = encode_sentences(model, params, &d.1, RepScheme::ConcatLast, 64).unwrap();
            c.iter().zip(&h).map(|(a, b)| combine_concat(&a.vector, &b.vector).unwrap().vector).collect()
        };
        let (fx, dx, tx) = (feats(&tr), feats(&de), feats(&te));
        let (probe, _) = train_probe(LabeledSet { features: &fx, labels: &tr.2 }, LabeledSet { features: &dx, labels: &de.2 }, &probe_cfg).unwrap();
        accs.push(accuracy(&probe.predict_batch(&tx).unwrap(), &te.2));
    }
    (accs[0], accs[1])
}

#[test]
fn c8_encoder_sensitivity() {
    let results: Vec<(f64, f64)> = (0..5).map(sensitivity_gap).collect();
    let gap = results.iter().map(|(t, r)| t - r).sum::<f64>() / results.len() as f64;
    let ok = gap >= SENSITIVITY_MIN_GAP;
    let per: Vec<String> = results.iter().map(|(t, r)| format!("{t:.3}/{r:.3}")).collect();
    line(8, ok, "trained vs random encoder probe accuracy, 5 seeds", &format!("mean gap {gap:.3} >= {SENSITIVITY_MIN_GAP}; trained/random {}", per.join(" ")));
    assert!(ok);
}
