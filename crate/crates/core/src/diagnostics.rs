//! Finite-difference checks of every differentiable component.

use rand::Rng as _;
use serde::Serialize;

use crate::corpora::{EncodedPair, LabelScheme};
use crate::error::Result;
use crate::numerics::{grad_check, seeded_rng, GradCheckOptions, Graph, ParamStore, Rng, Tensor, Var};
use crate::probe::{ProbeConfig, ProbeKind, ProbeLayout};
use crate::seq2seq::{AdditiveAttention, LstmCell, ModelShape, Seq2Seq};

/// Pass threshold on the maximum relative error.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

pub const COMPONENTS: [&str; 6] = ["lstm_cell", "bilstm_layer", "attention", "decoder_step", "linear_probe", "mlp_probe"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComponentCheck {
    pub component: String,
    pub seeds: Vec<u64>,
    pub max_relative_error: f64,
    pub worst_param: Option<String>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckSuite {
    pub tolerance: f64,
    pub components: Vec<ComponentCheck>,
}

impl GradcheckSuite {
    pub fn passed(&self) -> bool {
        self.components.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<&str> {
        self.components.iter().filter(|c| !c.passed).map(|c| c.component.as_str()).collect()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for c in &self.components {
            out.push_str(&format!(
                "{:<14} {:>10.3e}  {}\n",
                c.component,
                c.max_relative_error,
                if c.passed { "ok" } else { "FAIL" }
            ));
        }
        out
    }
}

fn uniform(rng: &mut Rng, rows: usize, cols: usize) -> Tensor<f64> {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("positive dims")
}

/// `Σ coeff ⊙ v` with fixed random coefficients, so every output unit matters.
fn project(g: &mut Graph<f64>, v: Var, coeff: &Tensor<f64>) -> Result<Var> {
    let c = g.input(coeff.clone())?;
    let m = g.mul(v, c)?;
    Ok(g.sum(m))
}

type Forward = Box<dyn Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>>;

struct Case {
    store: ParamStore<f64>,
    forward: Forward,
}

fn build(component: &str, seed: u64) -> Result<Case> {
    let mut rng = seeded_rng(seed);
    let mut store = ParamStore::<f64>::new();
    let forward: Forward = match component {
        "lstm_cell" => {
            let cell = LstmCell::register(&mut store, &mut rng, "cell", 3, 4)?;
            let (x, h, c) = (uniform(&mut rng, 2, 3), uniform(&mut rng, 2, 4), uniform(&mut rng, 2, 4));
            let (kh, kc) = (uniform(&mut rng, 2, 4), uniform(&mut rng, 2, 4));
            Box::new(move |g, p| {
                let (xv, hv, cv) = (g.input(x.clone())?, g.input(h.clone())?, g.input(c.clone())?);
                let (h2, c2) = cell.step(g, p, xv, hv, cv)?;
                let a = project(g, h2, &kh)?;
                let b = project(g, c2, &kc)?;
                g.add(a, b)
            })
        }
        "bilstm_layer" => {
            let shape = ModelShape { d: 3, layers: 2, src_vocab_size: 9, tgt_vocab_size: 6 };
            let model = Seq2Seq::init(&mut store, &mut rng, shape)?;
            let sents: Vec<Vec<usize>> = vec![vec![4, 5, 8, 6], vec![7, 4]];
            let coeff: Vec<Tensor<f64>> = (0..4).map(|_| uniform(&mut rng, 2, 6)).collect();
            Box::new(move |g, p| {
                let refs: Vec<&[usize]> = sents.iter().map(Vec::as_slice).collect();
                let enc = model.encode_graph(g, p, &refs)?;
                let top = enc.layers.last().expect("layers");
                let mut terms = Vec::new();
                for (t, k) in coeff.iter().enumerate() {
                    let both = g.concat(&[top.forward_h[t], top.backward_h[t]])?;
                    terms.push(project(g, both, k)?);
                }
                g.add_n(&terms)
            })
        }
        "attention" => {
            let att = AdditiveAttention::register(&mut store, &mut rng, "attn", 3, 4, 5)?;
            let values: Vec<Tensor<f64>> = (0..3).map(|_| uniform(&mut rng, 2, 4)).collect();
            let query = uniform(&mut rng, 2, 3);
            let (kc, kw) = (uniform(&mut rng, 2, 4), uniform(&mut rng, 2, 3));
            Box::new(move |g, p| {
                let vals = values.iter().map(|v| g.input(v.clone())).collect::<Result<Vec<_>>>()?;
                let mem = att.memory(g, p, &vals, vec![vec![true; 3], vec![true, true, false]])?;
                let q = g.input(query.clone())?;
                let (ctx, w) = att.attend(g, p, q, &mem)?;
                let a = project(g, ctx, &kc)?;
                let b = project(g, w, &kw)?;
                g.add(a, b)
            })
        }
        "decoder_step" => {
            let shape = ModelShape { d: 3, layers: 2, src_vocab_size: 9, tgt_vocab_size: 7 };
            let model = Seq2Seq::init(&mut store, &mut rng, shape)?;
            let pairs = [
                EncodedPair { source: vec![4, 5, 6], target: vec![5, 6] },
                EncodedPair { source: vec![8], target: vec![4, 6, 5] },
            ];
            Box::new(move |g, p| {
                let refs: Vec<&EncodedPair> = pairs.iter().collect();
                Ok(model.batch_loss(g, p, &refs)?.mean)
            })
        }
        "linear_probe" | "mlp_probe" => {
            let kind = if component == "mlp_probe" { ProbeKind::Mlp } else { ProbeKind::Linear };
            let cfg = ProbeConfig { kind, hidden_size: 6, scheme: LabelScheme::ThreeWay, ..ProbeConfig::default() };
            let layout = ProbeLayout::init(&mut store, &mut rng, &cfg.widths(5))?;
            let x = uniform(&mut rng, 4, 5);
            let gold: Vec<Option<usize>> = (0..4).map(|_| Some(rng.gen_range(0..3))).collect();
            Box::new(move |g, p| {
                let xv = g.input(x.clone())?;
                let logits = layout.forward(g, p, xv)?;
                g.cross_entropy(logits, &gold)
            })
        }
        other => return Err(crate::Error::Validation(format!("unknown gradcheck component {other:?}"))),
    };
    Ok(Case { store, forward })
}

/// Runs every component over `seeds`. With `corrupt`, that component's
/// loss is scaled by a factor read from its first parameter as a constant,
/// so its analytic gradient is wrong.
pub fn gradcheck_suite(seeds: &[u64], corrupt: Option<&str>) -> Result<GradcheckSuite> {
    let mut components = Vec::new();
    for name in COMPONENTS {
        let mut worst = 0.0f64;
        let mut worst_param = None;
        for &seed in seeds {
            let Case { mut store, forward } = build(name, seed)?;
            let corrupted = corrupt == Some(name);
            let first = store.ids().next().expect("component has parameters");
            let report = grad_check(
                &mut store,
                |g, p| {
                    let loss = forward(g, p)?;
                    if !corrupted {
                        return Ok(loss);
                    }
                    let s: f64 = p.tensor(first).data().iter().sum();
                    let factor = g.input(Tensor::matrix(1, 1, vec![1.0 + s])?)?;
                    g.mul(loss, factor)
                },
                GradCheckOptions { seed, ..GradCheckOptions::default() },
            )?;
            let e = report.max_relative_error();
            if e > worst || worst_param.is_none() {
                worst = worst.max(e);
                worst_param = report.worst().map(|w| w.name.clone());
            }
        }
        components.push(ComponentCheck {
            component: name.to_string(),
            seeds: seeds.to_vec(),
            max_relative_error: worst,
            worst_param,
            passed: worst < GRADCHECK_TOLERANCE,
        });
    }
    Ok(GradcheckSuite { tolerance: GRADCHECK_TOLERANCE, components })
}
