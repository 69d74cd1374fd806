use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{glorot_uniform, Graph, ParamId, ParamStore, Real, Tensor, Var};

/// Additive scoring `vᵀ tanh(W_q·query + W_k·state + b)` over encoder states.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AdditiveAttention {
    pub w_query: ParamId,
    pub w_key: ParamId,
    pub bias: ParamId,
    pub score: ParamId,
    pub query_size: usize,
    pub key_size: usize,
    pub hidden_size: usize,
}

/// Encoder states with their key projections, computed once per batch.
#[derive(Debug, Clone)]
pub struct AttentionMemory {
    pub values: Vec<Var>,
    keys: Vec<Var>,
    /// `mask[b][j]`: position `j` is a real token of row `b`.
    pub mask: Vec<Vec<bool>>,
}

impl AdditiveAttention {
    pub fn register<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        prefix: &str,
        query_size: usize,
        key_size: usize,
        hidden_size: usize,
    ) -> Result<Self> {
        Ok(AdditiveAttention {
            w_query: store.add(format!("{prefix}.w_query"), glorot_uniform(rng, query_size, hidden_size)?)?,
            w_key: store.add(format!("{prefix}.w_key"), glorot_uniform(rng, key_size, hidden_size)?)?,
            bias: store.add(format!("{prefix}.bias"), Tensor::zeros(vec![hidden_size])?)?,
            score: store.add(format!("{prefix}.score"), glorot_uniform(rng, hidden_size, 1)?)?,
            query_size,
            key_size,
            hidden_size,
        })
    }

    pub fn from_store<T: Real>(
        store: &ParamStore<T>,
        prefix: &str,
        query_size: usize,
        key_size: usize,
        hidden_size: usize,
    ) -> Result<Self> {
        Ok(AdditiveAttention {
            w_query: store.expect(&format!("{prefix}.w_query"), &[query_size, hidden_size])?,
            w_key: store.expect(&format!("{prefix}.w_key"), &[key_size, hidden_size])?,
            bias: store.expect(&format!("{prefix}.bias"), &[hidden_size])?,
            score: store.expect(&format!("{prefix}.score"), &[hidden_size, 1])?,
            query_size,
            key_size,
            hidden_size,
        })
    }

    pub fn memory<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        values: &[Var],
        mask: Vec<Vec<bool>>,
    ) -> Result<AttentionMemory> {
        if values.is_empty() {
            return Err(Error::Input("attention over no encoder states".into()));
        }
        let wk = g.param(store, self.w_key);
        let keys = values
            .iter()
            .map(|&v| g.matmul(v, wk))
            .collect::<Result<Vec<_>>>()?;
        Ok(AttentionMemory {
            values: values.to_vec(),
            keys,
            mask,
        })
    }

    /// Returns the context `[B, key_size]` and the weights `[B, n]`.
    pub fn attend<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        query: Var,
        memory: &AttentionMemory,
    ) -> Result<(Var, Var)> {
        let wq = g.param(store, self.w_query);
        let b = g.param(store, self.bias);
        let v = g.param(store, self.score);
        let q = g.matmul(query, wq)?;
        let q = g.add_bias(q, b)?;
        let mut scores = Vec::with_capacity(memory.keys.len());
        for &k in &memory.keys {
            let pre = g.add(k, q)?;
            let act = g.tanh(pre);
            scores.push(g.matmul(act, v)?);
        }
        let scores = g.concat(&scores)?;
        let all_real = memory.mask.iter().all(|row| row.iter().all(|&m| m));
        let mask = (!all_real).then_some(memory.mask.as_slice());
        let weights = g.softmax_rows(scores, mask)?;
        let context = g.weighted_sum(weights, &memory.values)?;
        Ok((context, weights))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{grad_check, seeded_rng, GradCheckOptions};

    fn setup(seed: u64) -> (ParamStore<f64>, AdditiveAttention) {
        let mut store = ParamStore::<f64>::new();
        let att = AdditiveAttention::register(&mut store, &mut seeded_rng(seed), "att", 3, 4, 5).unwrap();
        (store, att)
    }

    fn states(n: usize) -> Vec<Tensor<f64>> {
        (0..n)
            .map(|j| Tensor::matrix(1, 4, (0..4).map(|k| ((j * 4 + k) as f64 * 0.37).sin()).collect()).unwrap())
            .collect()
    }

    fn run(store: &ParamStore<f64>, att: &AdditiveAttention, n: usize) -> (Vec<f64>, Vec<f64>) {
        let mut g = Graph::new();
        let vals: Vec<Var> = states(n).into_iter().map(|t| g.input(t).unwrap()).collect();
        let mem = att.memory(&mut g, store, &vals, vec![vec![true; n]]).unwrap();
        let q = g.input(Tensor::vector(vec![0.2, -0.4, 0.9]).unwrap()).unwrap();
        let (ctx, w) = att.attend(&mut g, store, q, &mem).unwrap();
        (g.value(ctx).data().to_vec(), g.value(w).data().to_vec())
    }

    #[test]
    fn weights_are_a_distribution() {
        let (store, att) = setup(0);
        let (_, w) = run(&store, &att, 6);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(w.iter().all(|&x| x > 0.0));
    }

    #[test]
    fn single_state_gets_all_weight() {
        let (store, att) = setup(1);
        let (ctx, w) = run(&store, &att, 1);
        assert_eq!(w, vec![1.0]);
        assert_eq!(ctx, states(1)[0].data().to_vec());
    }

    #[test]
    fn zero_score_vector_gives_mean() {
        let (mut store, att) = setup(2);
        store.tensor_mut(att.score).data_mut().iter_mut().for_each(|v| *v = 0.0);
        let n = 4;
        let (ctx, w) = run(&store, &att, n);
        assert!(w.iter().all(|&x| (x - 0.25).abs() < 1e-15));
        let s = states(n);
        for k in 0..4 {
            let mean = s.iter().map(|t| t.data()[k]).sum::<f64>() / n as f64;
            assert!((ctx[k] - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_memory_is_input_error() {
        let (store, att) = setup(3);
        let mut g = Graph::<f64>::new();
        assert!(matches!(att.memory(&mut g, &store, &[], vec![]), Err(Error::Input(_))));
    }

    #[test]
    fn gradient_check_with_padding_mask() {
        let (mut store, att) = setup(5);
        let report = grad_check(
            &mut store,
            |g, p| {
                let vals = (0..3)
                    .map(|j| {
                        let data = (0..8).map(|k| ((j * 8 + k) as f64 * 0.61).cos()).collect();
                        g.input(Tensor::matrix(2, 4, data)?)
                    })
                    .collect::<Result<Vec<_>>>()?;
                let mem = att.memory(g, p, &vals, vec![vec![true; 3], vec![true, true, false]])?;
                let q = g.input(Tensor::matrix(2, 3, vec![0.1, 0.5, -0.3, 0.7, -0.2, 0.4])?)?;
                let (ctx, w) = att.attend(g, p, q, &mem)?;
                let a = g.sum(ctx);
                let w2 = g.mul(w, w)?;
                let b = g.sum(w2);
                g.add(a, b)
            },
            GradCheckOptions::default(),
        )
        .unwrap();
        assert!(report.max_relative_error() < 1e-4, "{report:?}");
    }
}
