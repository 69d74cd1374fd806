//! Central finite-difference check of graph gradients, run in `f64`.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::params::ParamStore;
use crate::error::{Error, Result};

/// Denominator floor for relative error, so entries whose true gradient
/// is numerically zero are compared on an absolute scale instead.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Entries sampled per parameter; `None` checks every entry.
    pub max_entries_per_param: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            eps: 1e-5,
            max_entries_per_param: Some(64),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub entries_checked: usize,
    pub max_relative_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn max_relative_error(&self) -> f64 {
        self.params
            .iter()
            .map(|p| p.max_relative_error)
            .fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&ParamCheck> {
        self.params
            .iter()
            .max_by(|a, b| a.max_relative_error.total_cmp(&b.max_relative_error))
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR)
}

fn evaluate<F>(forward: &F, params: &ParamStore<f64>) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>,
{
    let mut g = Graph::new();
    let loss = forward(&mut g, params)?;
    if g.value(loss).len() != 1 {
        return Err(Error::Check("forward must return a scalar".into()));
    }
    Ok(g.scalar(loss))
}

/// Compares backward gradients of `forward` against
/// `(f(p + eps) − f(p − eps)) / (2·eps)` on sampled entries of every
/// trainable parameter.
pub fn grad_check<F>(
    params: &mut ParamStore<f64>,
    forward: F,
    options: GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>,
{
    params.clear_grads();
    let mut g = Graph::new();
    let loss = forward(&mut g, params)?;
    let base = g.scalar(loss);
    g.backward(loss, params)?;

    let again = evaluate(&forward, params)?;
    if again.to_bits() != base.to_bits() {
        return Err(Error::Check(format!(
            "forward is not deterministic: {base} then {again}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let ids: Vec<_> = params.ids().collect();
    let mut report = Vec::new();
    for id in ids {
        if !params.get(id).trainable {
            continue;
        }
        let analytic = params
            .tensor(id)
            .grad()
            .map(<[f64]>::to_vec)
            .ok_or_else(|| Error::Check(format!("no gradient for {}", params.get(id).name)))?;
        let n = analytic.len();
        let entries: Vec<usize> = match options.max_entries_per_param {
            Some(k) if k < n => {
                let mut e = sample(&mut rng, n, k).into_vec();
                e.sort_unstable();
                e
            }
            _ => (0..n).collect(),
        };
        let mut worst = 0.0f64;
        for &i in &entries {
            let original = params.tensor(id).data()[i];
            params.tensor_mut(id).data_mut()[i] = original + options.eps;
            let plus = evaluate(&forward, params)?;
            params.tensor_mut(id).data_mut()[i] = original - options.eps;
            let minus = evaluate(&forward, params)?;
            params.tensor_mut(id).data_mut()[i] = original;
            let numeric = (plus - minus) / (2.0 * options.eps);
            let err = relative_error(analytic[i], numeric);
            if !err.is_finite() {
                return Err(Error::Check(format!(
                    "non-finite comparison for {} entry {i}",
                    params.get(id).name
                )));
            }
            worst = worst.max(err);
        }
        report.push(ParamCheck {
            name: params.get(id).name.clone(),
            entries_checked: entries.len(),
            max_relative_error: worst,
        });
    }
    params.clear_grads();
    Ok(GradCheckReport { params: report })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{glorot_uniform, Tensor};
    use std::cell::Cell;

    #[test]
    fn passes_on_small_mlp() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::<f64>::new();
        let w1 = store.add("w1", glorot_uniform(&mut rng, 4, 5).unwrap()).unwrap();
        let b1 = store.add("b1", Tensor::vector(vec![0.1; 5]).unwrap()).unwrap();
        let w2 = store.add("w2", glorot_uniform(&mut rng, 5, 3).unwrap()).unwrap();
        let x = Tensor::matrix(2, 4, vec![0.5, -1.0, 0.3, 0.9, -0.2, 0.4, 1.1, -0.7]).unwrap();
        let report = grad_check(
            &mut store,
            |g, p| {
                let xv = g.input(x.clone())?;
                let (w1, b1, w2) = (g.param(p, w1), g.param(p, b1), g.param(p, w2));
                let h = g.affine(xv, w1, b1)?;
                let h = g.tanh(h);
                let logits = g.matmul(h, w2)?;
                g.cross_entropy(logits, &[Some(2), Some(0)])
            },
            GradCheckOptions::default(),
        )
        .unwrap();
        assert_eq!(report.params.len(), 3);
        assert!(report.max_relative_error() < 1e-6, "{report:?}");
    }

    #[test]
    fn detects_nondeterministic_forward() {
        let mut store = ParamStore::<f64>::new();
        let w = store.add("w", Tensor::scalar(1.0)).unwrap();
        let calls = Cell::new(0.0);
        let err = grad_check(
            &mut store,
            |g, p| {
                calls.set(calls.get() + 1.0);
                let wv = g.param(p, w);
                let k = g.input(Tensor::matrix(1, 1, vec![calls.get()]).unwrap())?;
                let y = g.mul(wv, k)?;
                Ok(g.sum(y))
            },
            GradCheckOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Check(_)));
    }

    #[test]
    fn detects_wrong_gradient() {
        // The second factor enters as a constant, so backward sees half the slope.
        let mut store = ParamStore::<f64>::new();
        let w = store.add("w", Tensor::vector(vec![0.8, -1.2]).unwrap()).unwrap();
        let report = grad_check(
            &mut store,
            |g, p| {
                let wv = g.param(p, w);
                let frozen = g.input(p.tensor(w).clone())?;
                let sq = g.mul(wv, frozen)?;
                Ok(g.sum(sq))
            },
            GradCheckOptions::default(),
        )
        .unwrap();
        assert!((report.max_relative_error() - 0.5).abs() < 1e-6);
    }
}
