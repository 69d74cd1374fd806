//! Eager tensor operations. The graph in [`super::graph`] reuses these
//! kernels for its forward pass.

use serde::{Deserialize, Serialize};

use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Sigmoid,
    Relu,
}

impl Activation {
    pub fn apply<T: Real>(self, x: T) -> T {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
            Activation::Relu => {
                if x > T::zero() {
                    x
                } else {
                    T::zero()
                }
            }
        }
    }

    /// Derivative expressed through input `x` and output `y`.
    /// relu'(0) is 0.
    pub fn derivative<T: Real>(self, x: T, y: T) -> T {
        match self {
            Activation::Tanh => T::one() - y * y,
            Activation::Sigmoid => y * (T::one() - y),
            Activation::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
        }
    }
}

/// Logistic function, evaluated on the branch that cannot overflow.
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `out[m×n] = a[m×k] · b[k×n]`, all row-major.
pub(crate) fn matmul_kernel<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o = *o + aip * bv;
            }
        }
    }
    out
}

/// Softmax of one row in place; entries with `mask[j] == false` get zero mass.
pub(crate) fn softmax_row<T: Real>(row: &mut [T], mask: Option<&[bool]>) {
    let keep = |j: usize| mask.is_none_or(|m| m[j]);
    let mut max = T::neg_infinity();
    for (j, &v) in row.iter().enumerate() {
        if keep(j) && v > max {
            max = v;
        }
    }
    let mut total = T::zero();
    for (j, v) in row.iter_mut().enumerate() {
        if keep(j) {
            *v = (*v - max).exp();
            total = total + *v;
        } else {
            *v = T::zero();
        }
    }
    for v in row.iter_mut() {
        *v = *v / total;
    }
}

pub fn matmul<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows() {
        return Err(Error::Shape(format!(
            "matmul of {:?} by {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    Tensor::matrix(m, n, matmul_kernel(a.data(), b.data(), m, k, n))
}

pub fn softmax<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    if x.is_empty() {
        return Err(Error::Shape("softmax of an empty tensor".into()));
    }
    x.ensure_finite("softmax input")?;
    let mut out = x.clone();
    out.clear_grad();
    let cols = out.cols();
    for row in out.data_mut().chunks_mut(cols) {
        softmax_row(row, None);
    }
    Ok(out)
}

pub fn activation<T: Real>(x: &Tensor<T>, kind: Activation) -> Result<Tensor<T>> {
    x.ensure_finite("activation input")?;
    Ok(x.map(|v| kind.apply(v)))
}

/// Mean negative log-probability of the gold class in each row of `logits`.
pub fn cross_entropy<T: Real>(logits: &Tensor<T>, gold: &[usize]) -> Result<T> {
    if logits.rows() != gold.len() {
        return Err(Error::Shape(format!(
            "{} gold labels for logits of shape {:?}",
            gold.len(),
            logits.shape()
        )));
    }
    logits.ensure_finite("cross_entropy logits")?;
    let classes = logits.cols();
    let mut total = T::zero();
    for (r, &g) in gold.iter().enumerate() {
        if g >= classes {
            return Err(Error::Label(format!(
                "row {r}: gold index {g} outside {classes} classes"
            )));
        }
        total = total + neg_log_softmax(logits.row(r), g);
    }
    Ok(total / T::lit(gold.len() as f64))
}

/// `-log softmax(row)[gold]` via log-sum-exp.
pub(crate) fn neg_log_softmax<T: Real>(row: &[T], gold: usize) -> T {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
    lse - row[gold]
}
