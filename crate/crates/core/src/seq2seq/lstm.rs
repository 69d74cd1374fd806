use rand::Rng;

use crate::error::Result;
use crate::numerics::{glorot_uniform, Graph, ParamId, ParamStore, Real, Tensor, Var};

/// One LSTM cell. Gate blocks in the fused weights are ordered
/// input, forget, candidate, output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LstmCell {
    pub w_input: ParamId,
    pub w_hidden: ParamId,
    pub bias: ParamId,
    pub input_size: usize,
    pub hidden_size: usize,
}

pub const FORGET_BIAS_INIT: f64 = 1.0;

impl LstmCell {
    pub fn register<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        prefix: &str,
        input_size: usize,
        hidden_size: usize,
    ) -> Result<Self> {
        let d = hidden_size;
        let w_input = store.add(format!("{prefix}.w_input"), glorot_uniform(rng, input_size, 4 * d)?)?;
        let w_hidden = store.add(format!("{prefix}.w_hidden"), glorot_uniform(rng, d, 4 * d)?)?;
        let mut b = vec![T::zero(); 4 * d];
        b[d..2 * d].iter_mut().for_each(|v| *v = T::lit(FORGET_BIAS_INIT));
        let bias = store.add(format!("{prefix}.bias"), Tensor::vector(b)?)?;
        Ok(LstmCell {
            w_input,
            w_hidden,
            bias,
            input_size,
            hidden_size,
        })
    }

    pub fn from_store<T: Real>(
        store: &ParamStore<T>,
        prefix: &str,
        input_size: usize,
        hidden_size: usize,
    ) -> Result<Self> {
        let d = hidden_size;
        Ok(LstmCell {
            w_input: store.expect(&format!("{prefix}.w_input"), &[input_size, 4 * d])?,
            w_hidden: store.expect(&format!("{prefix}.w_hidden"), &[d, 4 * d])?,
            bias: store.expect(&format!("{prefix}.bias"), &[4 * d])?,
            input_size,
            hidden_size,
        })
    }

    /// `c' = f⊙c + i⊙g`, `h' = o⊙tanh(c')` with sigmoid gates and tanh candidate.
    pub fn step<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
        h: Var,
        c: Var,
    ) -> Result<(Var, Var)> {
        let d = self.hidden_size;
        let wx = g.param(store, self.w_input);
        let wh = g.param(store, self.w_hidden);
        let b = g.param(store, self.bias);
        let zx = g.matmul(x, wx)?;
        let zh = g.matmul(h, wh)?;
        let z = g.add(zx, zh)?;
        let z = g.add_bias(z, b)?;
        let i = g.slice_cols(z, 0, d)?;
        let f = g.slice_cols(z, d, d)?;
        let cand = g.slice_cols(z, 2 * d, d)?;
        let o = g.slice_cols(z, 3 * d, d)?;
        let i = g.sigmoid(i);
        let f = g.sigmoid(f);
        let cand = g.tanh(cand);
        let o = g.sigmoid(o);
        let keep = g.mul(f, c)?;
        let write = g.mul(i, cand)?;
        let c_next = g.add(keep, write)?;
        let squashed = g.tanh(c_next);
        let h_next = g.mul(o, squashed)?;
        Ok((h_next, c_next))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{grad_check, seeded_rng, sigmoid, GradCheckOptions};

    /// Gate-by-gate scalar evaluation of one step for a single row.
    fn scalar_oracle(
        wx: &Tensor<f64>,
        wh: &Tensor<f64>,
        b: &Tensor<f64>,
        x: &[f64],
        h: &[f64],
        c: &[f64],
    ) -> (Vec<f64>, Vec<f64>) {
        let d = h.len();
        let pre = |gate: usize, j: usize| {
            let col = gate * d + j;
            let mut s = b.data()[col];
            for (p, xp) in x.iter().enumerate() {
                s += xp * wx.get2(p, col);
            }
            for (p, hp) in h.iter().enumerate() {
                s += hp * wh.get2(p, col);
            }
            s
        };
        let mut h2 = vec![0.0; d];
        let mut c2 = vec![0.0; d];
        for j in 0..d {
            let i = sigmoid(pre(0, j));
            let f = sigmoid(pre(1, j));
            let g = pre(2, j).tanh();
            let o = sigmoid(pre(3, j));
            c2[j] = f * c[j] + i * g;
            h2[j] = o * c2[j].tanh();
        }
        (h2, c2)
    }

    fn run_step(store: &ParamStore<f64>, cell: &LstmCell, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut g = Graph::new();
        let xv = g.input(Tensor::vector(x.to_vec()).unwrap()).unwrap();
        let hv = g.input(Tensor::vector(h.to_vec()).unwrap()).unwrap();
        let cv = g.input(Tensor::vector(c.to_vec()).unwrap()).unwrap();
        let (h2, c2) = cell.step(&mut g, store, xv, hv, cv).unwrap();
        (g.value(h2).data().to_vec(), g.value(c2).data().to_vec())
    }

    #[test]
    fn zero_everything_gives_zero_state() {
        let mut store = ParamStore::<f64>::new();
        let cell = LstmCell::register(&mut store, &mut seeded_rng(0), "cell", 3, 2).unwrap();
        for id in store.ids().collect::<Vec<_>>() {
            store.tensor_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let (h, c) = run_step(&store, &cell, &[0.0; 3], &[0.0; 2], &[0.0; 2]);
        assert_eq!(h, vec![0.0, 0.0]);
        assert_eq!(c, vec![0.0, 0.0]);
    }

    #[test]
    fn saturated_forget_gate_retains_memory() {
        let mut store = ParamStore::<f64>::new();
        let cell = LstmCell::register(&mut store, &mut seeded_rng(1), "cell", 2, 2).unwrap();
        for id in [cell.w_input, cell.w_hidden] {
            store.tensor_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let b = store.tensor_mut(cell.bias).data_mut();
        b.iter_mut().for_each(|v| *v = 0.0);
        b[2] = 40.0;
        b[3] = 40.0;
        b[0] = -40.0;
        b[1] = -40.0;
        let (_, c) = run_step(&store, &cell, &[0.3, -0.2], &[0.1, 0.1], &[25.0, 30.0]);
        assert!((c[0] - 25.0).abs() < 1e-9 && (c[1] - 30.0).abs() < 1e-9, "{c:?}");
    }

    #[test]
    fn matches_scalar_oracle() {
        let mut store = ParamStore::<f64>::new();
        let cell = LstmCell::register(&mut store, &mut seeded_rng(2), "cell", 3, 4).unwrap();
        let x = [0.4, -0.7, 0.2];
        let h = [0.1, -0.3, 0.05, 0.6];
        let c = [0.9, -0.4, 0.2, -1.1];
        let (h2, c2) = run_step(&store, &cell, &x, &h, &c);
        let (eh, ec) = scalar_oracle(
            store.tensor(cell.w_input),
            store.tensor(cell.w_hidden),
            store.tensor(cell.bias),
            &x,
            &h,
            &c,
        );
        for j in 0..4 {
            assert!((h2[j] - eh[j]).abs() < 1e-6);
            assert!((c2[j] - ec[j]).abs() < 1e-6);
        }
    }

    #[test]
    fn forget_bias_starts_at_one() {
        let mut store = ParamStore::<f32>::new();
        let cell = LstmCell::register(&mut store, &mut seeded_rng(0), "c", 2, 3).unwrap();
        assert_eq!(store.tensor(cell.bias).data(), &[0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn gradient_check() {
        let mut store = ParamStore::<f64>::new();
        let cell = LstmCell::register(&mut store, &mut seeded_rng(4), "cell", 3, 4).unwrap();
        let report = grad_check(
            &mut store,
            |g, p| {
                let x = g.input(Tensor::matrix(2, 3, vec![0.5, -0.1, 0.3, 0.2, 0.8, -0.6])?)?;
                let h = g.input(Tensor::matrix(2, 4, vec![0.1, 0.2, -0.3, 0.4, 0.0, -0.1, 0.2, 0.3])?)?;
                let c = g.input(Tensor::matrix(2, 4, vec![0.5, -0.5, 0.1, 0.0, 0.3, 0.2, -0.2, 0.9])?)?;
                let (h2, c2) = cell.step(g, p, x, h, c)?;
                let both = g.mul(h2, c2)?;
                Ok(g.sum(both))
            },
            GradCheckOptions::default(),
        )
        .unwrap();
        assert!(report.max_relative_error() < 1e-4, "{report:?}");
    }
}
