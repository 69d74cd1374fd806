//! Tape-based reverse-mode differentiation over 2-D tensors.
//!
//! Every forward operation appends a node holding its value. `backward`
//! walks the tape once in reverse and accumulates gradients into the
//! [`ParamStore`] the parameters were read from. A graph is single-use:
//! build a fresh one for every forward pass.

use std::collections::HashMap;

use super::ops::{matmul_kernel, neg_log_softmax, softmax_row, Activation};
use super::params::{ParamId, ParamStore};
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Act(Var, Activation),
    Concat(Vec<Var>),
    Slice { input: Var, start: usize },
    Gather { table: Var, indices: Vec<usize> },
    Select { mask: Vec<bool>, a: Var, b: Var },
    Scale(Var, T),
    Sum(Var),
    AddN(Vec<Var>),
    Softmax(Var),
    WeightedSum { weights: Var, states: Vec<Var> },
    CrossEntropy { logits: Var, gold: Vec<Option<usize>>, probs: Vec<T>, scale: T },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

#[derive(Debug)]
pub struct Graph<T: Real = f32> {
    nodes: Vec<Node<T>>,
    param_vars: HashMap<ParamId, Var>,
    consumed: bool,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn as_matrix<T: Real>(t: Tensor<T>) -> Tensor<T> {
    if t.rank() == 2 {
        t
    } else {
        let (r, c) = (t.rows(), t.cols());
        t.reshape(vec![r, c]).expect("same element count")
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            param_vars: HashMap::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let t = &self.nodes[v.0].value;
        (t.rows(), t.cols())
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value.data()[0]
    }

    /// A constant input. Rank-1 tensors become a single row.
    pub fn input(&mut self, t: Tensor<T>) -> Result<Var> {
        t.ensure_finite("graph input")?;
        let mut t = as_matrix(t);
        t.clear_grad();
        Ok(self.push(t, Op::Leaf))
    }

    /// Reads a parameter into the graph; repeated reads share one node.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let mut t = as_matrix(store.tensor(id).clone());
        t.clear_grad();
        let v = self.push(t, Op::Param(id));
        self.param_vars.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let ((m, k), (k2, n)) = (self.dims(a), self.dims(b));
        if k != k2 {
            return Err(Error::Shape(format!(
                "matmul of [{m}, {k}] by [{k2}, {n}]"
            )));
        }
        let out = matmul_kernel(self.value(a).data(), self.value(b).data(), m, k, n);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b)))
    }

    fn zip_same(&mut self, a: Var, b: Var, what: &str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (da, db) = (self.dims(a), self.dims(b));
        if da != db {
            return Err(Error::Shape(format!("{what} of {da:?} and {db:?}")));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::matrix(da.0, da.1, data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same(a, b, "add", |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b)))
    }

    /// Broadcasts a `[1, n]` bias over every row of `a`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let ((r, c), (br, bc)) = (self.dims(a), self.dims(bias));
        if br != 1 || bc != c {
            return Err(Error::Shape(format!(
                "bias [{br}, {bc}] for rows of width {c}"
            )));
        }
        let b = self.value(bias).data().to_vec();
        let mut data = self.value(a).data().to_vec();
        for row in data.chunks_mut(c) {
            row.iter_mut().zip(&b).for_each(|(x, &y)| *x = *x + y);
        }
        Ok(self.push(Tensor::matrix(r, c, data)?, Op::AddBias(a, bias)))
    }

    pub fn activate(&mut self, a: Var, kind: Activation) -> Var {
        let t = self.value(a).map(|v| kind.apply(v));
        self.push(t, Op::Act(a, kind))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.activate(a, Activation::Tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.activate(a, Activation::Sigmoid)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.activate(a, Activation::Relu)
    }

    /// `a · w + b`.
    pub fn affine(&mut self, a: Var, w: Var, b: Var) -> Result<Var> {
        let z = self.matmul(a, w)?;
        self.add_bias(z, b)
    }

    /// Column-wise concatenation of equally tall blocks.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::Shape("concat of nothing".into()));
        };
        let rows = self.dims(first).0;
        let mut width = 0;
        for &p in parts {
            let (r, c) = self.dims(p);
            if r != rows {
                return Err(Error::Shape(format!("concat of {rows} and {r} rows")));
            }
            width += c;
        }
        let mut data = Vec::with_capacity(rows * width);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        Ok(self.push(Tensor::matrix(rows, width, data)?, Op::Concat(parts.to_vec())))
    }

    /// Columns `start..start + width`.
    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Result<Var> {
        let (r, c) = self.dims(a);
        if width == 0 || start + width > c {
            return Err(Error::Shape(format!(
                "columns {start}..{} of width {c}",
                start + width
            )));
        }
        let src = self.value(a);
        let mut data = Vec::with_capacity(r * width);
        for i in 0..r {
            data.extend_from_slice(&src.row(i)[start..start + width]);
        }
        Ok(self.push(Tensor::matrix(r, width, data)?, Op::Slice { input: a, start }))
    }

    /// Row lookup: output row `i` is `table[indices[i]]`.
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let (v, d) = self.dims(table);
        if indices.is_empty() {
            return Err(Error::Shape("gather of no rows".into()));
        }
        let src = self.value(table);
        let mut data = Vec::with_capacity(indices.len() * d);
        for (row, &i) in indices.iter().enumerate() {
            if i >= v {
                return Err(Error::Label(format!(
                    "row {row}: index {i} outside table of {v} entries"
                )));
            }
            data.extend_from_slice(src.row(i));
        }
        let t = Tensor::matrix(indices.len(), d, data)?;
        Ok(self.push(
            t,
            Op::Gather {
                table,
                indices: indices.to_vec(),
            },
        ))
    }

    /// Row `i` comes from `a` where `mask[i]`, else from `b`.
    pub fn select_rows(&mut self, mask: &[bool], a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.dims(a);
        if self.dims(b) != (r, c) || mask.len() != r {
            return Err(Error::Shape(format!(
                "select of {:?} and {:?} with {} mask rows",
                (r, c),
                self.dims(b),
                mask.len()
            )));
        }
        let mut data = Vec::with_capacity(r * c);
        for (i, &m) in mask.iter().enumerate() {
            let src = if m { a } else { b };
            data.extend_from_slice(self.value(src).row(i));
        }
        Ok(self.push(
            Tensor::matrix(r, c, data)?,
            Op::Select {
                mask: mask.to_vec(),
                a,
                b,
            },
        ))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let t = self.value(a).map(|v| v * c);
        self.push(t, Op::Scale(a, c))
    }

    /// Sum of all entries as a `[1, 1]` node.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum();
        self.push(
            Tensor::matrix(1, 1, vec![s]).expect("1x1"),
            Op::Sum(a),
        )
    }

    pub fn add_n(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::Shape("sum of nothing".into()));
        };
        let dims = self.dims(first);
        let mut acc = self.value(first).data().to_vec();
        for &p in &parts[1..] {
            if self.dims(p) != dims {
                return Err(Error::Shape(format!(
                    "add_n of {dims:?} and {:?}",
                    self.dims(p)
                )));
            }
            acc.iter_mut()
                .zip(self.value(p).data())
                .for_each(|(x, &y)| *x = *x + y);
        }
        Ok(self.push(Tensor::matrix(dims.0, dims.1, acc)?, Op::AddN(parts.to_vec())))
    }

    /// Row-wise softmax. With a mask, excluded entries receive exactly zero
    /// probability; every row must keep at least one entry.
    pub fn softmax_rows(&mut self, a: Var, mask: Option<&[Vec<bool>]>) -> Result<Var> {
        let (r, c) = self.dims(a);
        if let Some(m) = mask {
            if m.len() != r || m.iter().any(|row| row.len() != c || !row.contains(&true)) {
                return Err(Error::Shape(format!(
                    "softmax mask does not fit [{r}, {c}] or masks a whole row"
                )));
            }
        }
        let mut data = self.value(a).data().to_vec();
        for (i, row) in data.chunks_mut(c).enumerate() {
            softmax_row(row, mask.map(|m| m[i].as_slice()));
        }
        Ok(self.push(Tensor::matrix(r, c, data)?, Op::Softmax(a)))
    }

    /// `out[b] = Σ_j weights[b, j] · states[j][b]`.
    pub fn weighted_sum(&mut self, weights: Var, states: &[Var]) -> Result<Var> {
        let (b, n) = self.dims(weights);
        if states.len() != n || n == 0 {
            return Err(Error::Shape(format!(
                "{} states for {n} weights per row",
                states.len()
            )));
        }
        let k = self.dims(states[0]).1;
        for &s in states {
            if self.dims(s) != (b, k) {
                return Err(Error::Shape(format!(
                    "state {:?} in weighted sum over [{b}, {k}]",
                    self.dims(s)
                )));
            }
        }
        let w = self.value(weights).data();
        let mut out = vec![T::zero(); b * k];
        for (j, &s) in states.iter().enumerate() {
            let sv = self.value(s).data();
            for row in 0..b {
                let wj = w[row * n + j];
                for col in 0..k {
                    out[row * k + col] = out[row * k + col] + wj * sv[row * k + col];
                }
            }
        }
        Ok(self.push(
            Tensor::matrix(b, k, out)?,
            Op::WeightedSum {
                weights,
                states: states.to_vec(),
            },
        ))
    }

    fn cross_entropy_scaled(&mut self, logits: Var, gold: &[Option<usize>], mean: bool) -> Result<Var> {
        let (r, c) = self.dims(logits);
        if gold.len() != r {
            return Err(Error::Shape(format!(
                "{} gold labels for {r} logit rows",
                gold.len()
            )));
        }
        let lv = self.value(logits);
        let mut probs = lv.data().to_vec();
        let mut total = T::zero();
        let mut count = 0usize;
        for (i, g) in gold.iter().enumerate() {
            let Some(g) = *g else { continue };
            if g >= c {
                return Err(Error::Label(format!(
                    "row {i}: gold index {g} outside {c} classes"
                )));
            }
            total = total + neg_log_softmax(lv.row(i), g);
            count += 1;
        }
        for row in probs.chunks_mut(c) {
            softmax_row(row, None);
        }
        let scale = if mean {
            if count == 0 {
                return Err(Error::Shape("cross entropy over no gold rows".into()));
            }
            T::one() / T::lit(count as f64)
        } else {
            T::one()
        };
        let t = Tensor::matrix(1, 1, vec![total * scale])?;
        Ok(self.push(
            t,
            Op::CrossEntropy {
                logits,
                gold: gold.to_vec(),
                probs,
                scale,
            },
        ))
    }

    /// Mean negative log-likelihood over rows whose gold is `Some`.
    pub fn cross_entropy(&mut self, logits: Var, gold: &[Option<usize>]) -> Result<Var> {
        self.cross_entropy_scaled(logits, gold, true)
    }

    /// Summed negative log-likelihood over rows whose gold is `Some`.
    pub fn cross_entropy_sum(&mut self, logits: Var, gold: &[Option<usize>]) -> Result<Var> {
        self.cross_entropy_scaled(logits, gold, false)
    }

    /// Populates gradients of the scalar `loss` on every parameter read into
    /// this graph. Trainable parameters of `store` that the loss does not
    /// reach receive zero gradients.
    pub fn backward(&mut self, loss: Var, store: &mut ParamStore<T>) -> Result<()> {
        if self.consumed {
            return Err(Error::State(
                "backward already ran on this graph; run a fresh forward pass".into(),
            ));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got {:?}",
                self.value(loss).shape()
            )));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => {
                    store.tensor_mut(*id).accumulate_grad(&g)?;
                }
                Op::MatMul(a, b) => {
                    let (m, k) = self.dims(*a);
                    let n = self.dims(*b).1;
                    let av = self.value(*a).data();
                    let bv = self.value(*b).data();
                    // dA = dC · Bᵀ
                    let mut da = vec![T::zero(); m * k];
                    for r in 0..m {
                        for p in 0..k {
                            let mut s = T::zero();
                            for c in 0..n {
                                s = s + g[r * n + c] * bv[p * n + c];
                            }
                            da[r * k + p] = s;
                        }
                    }
                    // dB = Aᵀ · dC
                    let mut db = vec![T::zero(); k * n];
                    for r in 0..m {
                        for p in 0..k {
                            let a_rp = av[r * k + p];
                            if a_rp == T::zero() {
                                continue;
                            }
                            for c in 0..n {
                                db[p * n + c] = db[p * n + c] + a_rp * g[r * n + c];
                            }
                        }
                    }
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    let neg = g.iter().map(|&v| -v).collect();
                    accumulate(&mut grads, *a, g);
                    accumulate(&mut grads, *b, neg);
                }
                Op::Mul(a, b) => {
                    let av = self.value(*a).data();
                    let bv = self.value(*b).data();
                    let da = g.iter().zip(bv).map(|(&x, &y)| x * y).collect();
                    let db = g.iter().zip(av).map(|(&x, &y)| x * y).collect();
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::AddBias(a, bias) => {
                    let c = self.dims(*a).1;
                    let mut db = vec![T::zero(); c];
                    for row in g.chunks(c) {
                        db.iter_mut().zip(row).for_each(|(x, &y)| *x = *x + y);
                    }
                    accumulate(&mut grads, *a, g);
                    accumulate(&mut grads, *bias, db);
                }
                Op::Act(a, kind) => {
                    let x = self.value(*a).data();
                    let y = node.value.data();
                    let da = g
                        .iter()
                        .zip(x.iter().zip(y))
                        .map(|(&gv, (&xv, &yv))| gv * kind.derivative(xv, yv))
                        .collect();
                    accumulate(&mut grads, *a, da);
                }
                Op::Concat(parts) => {
                    let rows = node.value.rows();
                    let width = node.value.cols();
                    let mut offset = 0;
                    for &p in parts {
                        let c = self.dims(p).1;
                        let mut dp = Vec::with_capacity(rows * c);
                        for r in 0..rows {
                            dp.extend_from_slice(&g[r * width + offset..r * width + offset + c]);
                        }
                        accumulate(&mut grads, p, dp);
                        offset += c;
                    }
                }
                Op::Slice { input, start } => {
                    let (r, c) = self.dims(*input);
                    let w = node.value.cols();
                    let mut di = vec![T::zero(); r * c];
                    for row in 0..r {
                        di[row * c + start..row * c + start + w]
                            .copy_from_slice(&g[row * w..(row + 1) * w]);
                    }
                    accumulate(&mut grads, *input, di);
                }
                Op::Gather { table, indices } => {
                    let (v, d) = self.dims(*table);
                    let mut dt = vec![T::zero(); v * d];
                    for (row, &idx) in indices.iter().enumerate() {
                        for col in 0..d {
                            dt[idx * d + col] = dt[idx * d + col] + g[row * d + col];
                        }
                    }
                    accumulate(&mut grads, *table, dt);
                }
                Op::Select { mask, a, b } => {
                    let c = node.value.cols();
                    let mut da = vec![T::zero(); g.len()];
                    let mut db = vec![T::zero(); g.len()];
                    for (row, &m) in mask.iter().enumerate() {
                        let dst = if m { &mut da } else { &mut db };
                        dst[row * c..(row + 1) * c].copy_from_slice(&g[row * c..(row + 1) * c]);
                    }
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Scale(a, c) => {
                    let da = g.iter().map(|&v| v * *c).collect();
                    accumulate(&mut grads, *a, da);
                }
                Op::Sum(a) => {
                    let n = self.value(*a).len();
                    accumulate(&mut grads, *a, vec![g[0]; n]);
                }
                Op::AddN(parts) => {
                    for &p in parts {
                        accumulate(&mut grads, p, g.clone());
                    }
                }
                Op::Softmax(a) => {
                    let c = node.value.cols();
                    let y = node.value.data();
                    let mut da = vec![T::zero(); y.len()];
                    for (r, (yr, gr)) in y.chunks(c).zip(g.chunks(c)).enumerate() {
                        let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                        for j in 0..c {
                            da[r * c + j] = yr[j] * (gr[j] - dot);
                        }
                    }
                    accumulate(&mut grads, *a, da);
                }
                Op::WeightedSum { weights, states } => {
                    let (b, n) = self.dims(*weights);
                    let k = node.value.cols();
                    let w = self.value(*weights).data();
                    let mut dw = vec![T::zero(); b * n];
                    for (j, &s) in states.iter().enumerate() {
                        let sv = self.value(s).data();
                        let mut ds = vec![T::zero(); b * k];
                        for row in 0..b {
                            let mut dot = T::zero();
                            let wj = w[row * n + j];
                            for col in 0..k {
                                let gv = g[row * k + col];
                                dot = dot + gv * sv[row * k + col];
                                ds[row * k + col] = wj * gv;
                            }
                            dw[row * n + j] = dot;
                        }
                        accumulate(&mut grads, s, ds);
                    }
                    accumulate(&mut grads, *weights, dw);
                }
                Op::CrossEntropy {
                    logits,
                    gold,
                    probs,
                    scale,
                } => {
                    let c = self.dims(*logits).1;
                    let up = g[0] * *scale;
                    let mut dl = vec![T::zero(); probs.len()];
                    for (row, gi) in gold.iter().enumerate() {
                        let Some(gi) = *gi else { continue };
                        for j in 0..c {
                            let onehot = if j == gi { T::one() } else { T::zero() };
                            dl[row * c + j] = up * (probs[row * c + j] - onehot);
                        }
                    }
                    accumulate(&mut grads, *logits, dl);
                }
            }
        }

        for p in store.iter_mut() {
            if p.trainable && p.tensor.grad().is_none() {
                let zeros = vec![T::zero(); p.tensor.len()];
                p.tensor.set_grad(zeros)?;
            }
        }
        Ok(())
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Vec<T>>], v: Var, delta: Vec<T>) {
    match &mut grads[v.0] {
        Some(g) => g.iter_mut().zip(&delta).for_each(|(a, &b)| *a = *a + b),
        slot @ None => *slot = Some(delta),
    }
}
