//! Tiny on-disk corpora and run configs shared by the integration tests.
#![allow(dead_code)]

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nmtprobe::numerics::seeded_rng;
use rand::Rng;

pub struct Fixture {
    pub encoders: usize,
    pub two_way: usize,
    pub three_way: usize,
    /// Rows per split: (train, dev, test).
    pub rows: (usize, usize, usize),
    pub pairs: usize,
    pub extra: String,
}

impl Default for Fixture {
    fn default() -> Self {
        Fixture { encoders: 1, two_way: 2, three_way: 1, rows: (30, 12, 16), pairs: 60, extra: String::new() }
    }
}

fn sentence(rng: &mut impl Rng, lo: usize, hi: usize) -> String {
    let n = rng.gen_range(lo..=hi);
    (0..n).map(|_| format!("w{}", rng.gen_range(0..12))).collect::<Vec<_>>().join(" ")
}

pub fn two_way_name(i: usize) -> String {
    format!("bin{i}")
}

pub fn three_way_name(i: usize) -> String {
    format!("tri{i}")
}

pub fn encoder_name(i: usize) -> String {
    format!("enc{i}")
}

/// Writes corpora plus `run.cfg` under `dir` and returns the config path.
pub fn write(dir: &Path, f: &Fixture) -> PathBuf {
    let mut rng = seeded_rng(42);
    let mut cfg = String::from("seed = 11\n\n[nmt]\nd = 4\nlayers = 1\nbatch_size = 16\neval_every = 10\nmax_steps = 20\n\n[probe]\nmax_epochs = 3\n\n");
    cfg.push_str(&f.extra);
    for e in 0..f.encoders {
        let name = encoder_name(e);
        for (split, n) in [("train", f.pairs), ("dev", 10)] {
            let (mut s, mut t) = (String::new(), String::new());
            for i in 0..n {
                let src = if i == 0 && split == "train" { sentence(&mut rng, 55, 60) } else { sentence(&mut rng, 2, 8) };
                let tgt: Vec<String> = src.split(' ').rev().map(|w| w.replace('w', "t")).collect();
                let _ = writeln!(s, "{src}");
                let _ = writeln!(t, "{}", tgt.join(" "));
            }
            std::fs::write(dir.join(format!("{name}.{split}.src")), s).unwrap();
            std::fs::write(dir.join(format!("{name}.{split}.tgt")), t).unwrap();
        }
        let _ = write!(
            cfg,
            "[encoder.{name}]\ntrain_source = {name}.train.src\ntrain_target = {name}.train.tgt\ndev_source = {name}.dev.src\ndev_target = {name}.dev.tgt\n\n"
        );
    }
    let sets: Vec<(String, &[&str])> = (0..f.two_way)
        .map(|i| (two_way_name(i), &["entailed", "not_entailed"][..]))
        .chain((0..f.three_way).map(|i| (three_way_name(i), &["entailment", "neutral", "contradiction"][..])))
        .collect();
    for (k, (name, labels)) in sets.iter().enumerate() {
        let mut text = String::from("context\thypothesis\tlabel\tattribute\ttag_match\tsplit\n");
        for (split, n) in [("train", f.rows.0), ("dev", f.rows.1), ("test", f.rows.2)] {
            for i in 0..n {
                let long = split != "dev" && i == 1;
                let ctx = if long { sentence(&mut rng, 81, 85) } else { sentence(&mut rng, 3, 25) };
                let hyp = sentence(&mut rng, 2, 6);
                let label = labels[(i + k) % labels.len()];
                let attr = ["sentient", "volitional", "aware"][i % 3];
                let tag = if i % 4 == 0 { "different" } else { "same" };
                let _ = writeln!(text, "{ctx}\t{hyp}\t{label}\t{attr}\t{tag}\t{split}");
            }
        }
        let scheme = if labels.len() == 2 { "two_way" } else { "three_way" };
        std::fs::write(dir.join(format!("{name}.tsv")), text).unwrap();
        let _ = write!(cfg, "[dataset.{name}]\nscheme = {scheme}\nfile = {name}.tsv\n\n");
    }
    let path = dir.join("run.cfg");
    std::fs::write(&path, cfg).unwrap();
    path
}
