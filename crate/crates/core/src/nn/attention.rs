//! Multi-head scaled dot-product self-attention.
//!
//! Heads are contiguous `dim / heads` column blocks of the projected Q, K and V
//! rows. There is no positional term inside attention, so permuting the input
//! tokens permutes the output tokens identically.

use alloc::vec;
use alloc::vec::Vec;

use super::act::{softmax_rows, softmax_rows_backward};
use super::linear::linear;
use crate::error::{shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tokens;

/// Projection weights, each `dim x dim` stored `(out, in)`, with biases.
#[derive(Debug, Clone, Copy)]
pub struct AttentionWeights<'a, T> {
    pub q_weight: &'a [T],
    pub q_bias: &'a [T],
    pub k_weight: &'a [T],
    pub k_bias: &'a [T],
    pub v_weight: &'a [T],
    pub v_bias: &'a [T],
    pub o_weight: &'a [T],
    pub o_bias: &'a [T],
}

/// Intermediates kept for the backward pass.
#[derive(Debug, Clone)]
pub struct AttentionCore<T> {
    pub batch: usize,
    pub len: usize,
    pub dim: usize,
    pub heads: usize,
    /// Softmax weights, `(batch, heads, len, len)`.
    pub probs: Vec<T>,
    /// Per-head outputs laid side by side, `(batch * len, dim)`.
    pub context: Vec<T>,
}

fn check_heads(dim: usize, heads: usize) -> Result<usize> {
    if heads == 0 || !dim.is_multiple_of(heads) {
        return Err(shape_err!("dim {dim} not divisible by {heads} heads"));
    }
    Ok(dim / heads)
}

/// `softmax(Q K^T / sqrt(d_head)) V` per batch element and head.
pub fn attention_core<T: Scalar>(
    q: &[T],
    k: &[T],
    v: &[T],
    batch: usize,
    len: usize,
    dim: usize,
    heads: usize,
) -> Result<AttentionCore<T>> {
    let dh = check_heads(dim, heads)?;
    if [q.len(), k.len(), v.len()] != [batch * len * dim; 3] {
        return Err(shape_err!("attention inputs do not match {batch}x{len}x{dim}"));
    }
    let scale = T::one() / T::from_usize(dh).unwrap().sqrt();
    let mut probs = vec![T::zero(); batch * heads * len * len];
    let mut context = vec![T::zero(); batch * len * dim];
    for b in 0..batch {
        let base = b * len * dim;
        for h in 0..heads {
            let off = base + h * dh;
            let s = &mut probs[(b * heads + h) * len * len..(b * heads + h + 1) * len * len];
            T::gemm(len, dh, len, scale, &q[off..], dim, 1, &k[off..], 1, dim, T::zero(), s, len, 1);
            softmax_rows(s, len);
            T::gemm(len, len, dh, T::one(), s, len, 1, &v[off..], dim, 1, T::zero(), &mut context[off..], dim, 1);
        }
    }
    Ok(AttentionCore { batch, len, dim, heads, probs, context })
}

/// Returns `(dq, dk, dv)` given the gradient of the context rows.
pub fn attention_core_backward<T: Scalar>(
    core: &AttentionCore<T>,
    q: &[T],
    k: &[T],
    v: &[T],
    dcontext: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let AttentionCore { batch, len, dim, heads, .. } = *core;
    let dh = dim / heads;
    let scale = T::one() / T::from_usize(dh).unwrap().sqrt();
    let mut dq = vec![T::zero(); q.len()];
    let mut dk = vec![T::zero(); k.len()];
    let mut dv = vec![T::zero(); v.len()];
    let mut ds = vec![T::zero(); len * len];
    for b in 0..batch {
        let base = b * len * dim;
        for h in 0..heads {
            let off = base + h * dh;
            let p = &core.probs[(b * heads + h) * len * len..(b * heads + h + 1) * len * len];
            // dV = P^T dC
            T::gemm(len, len, dh, T::one(), p, 1, len, &dcontext[off..], dim, 1, T::zero(), &mut dv[off..], dim, 1);
            // dP = dC V^T
            T::gemm(len, dh, len, T::one(), &dcontext[off..], dim, 1, &v[off..], 1, dim, T::zero(), &mut ds, len, 1);
            softmax_rows_backward(p, &mut ds, len);
            // dQ = dS K * scale, dK = dS^T Q * scale
            T::gemm(len, len, dh, scale, &ds, len, 1, &k[off..], dim, 1, T::zero(), &mut dq[off..], dim, 1);
            T::gemm(len, len, dh, scale, &ds, 1, len, &q[off..], dim, 1, T::zero(), &mut dk[off..], dim, 1);
        }
    }
    (dq, dk, dv)
}

/// Full multi-head attention: projections, per-head attention, output projection.
pub fn multi_head_attention<T: Scalar>(x: &Tokens<T>, w: &AttentionWeights<'_, T>, heads: usize) -> Result<Tokens<T>> {
    let (rows, d) = (x.rows(), x.dim);
    let q = linear(&x.data, rows, d, w.q_weight, Some(w.q_bias), d)?;
    let k = linear(&x.data, rows, d, w.k_weight, Some(w.k_bias), d)?;
    let v = linear(&x.data, rows, d, w.v_weight, Some(w.v_bias), d)?;
    let core = attention_core(&q, &k, &v, x.batch, x.len, d, heads)?;
    let out = linear(&core.context, rows, d, w.o_weight, Some(w.o_bias), d)?;
    Tokens::from_vec(x.batch, x.len, d, out)
}
