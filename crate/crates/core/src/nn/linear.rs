//! Row-wise affine maps `y = x W^T + b` with `W` stored `(out, in)`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Result};
use crate::scalar::{matmul, matmul_nt, matmul_tn, Scalar};

pub fn linear<T: Scalar>(
    x: &[T],
    rows: usize,
    in_dim: usize,
    weight: &[T],
    bias: Option<&[T]>,
    out_dim: usize,
) -> Result<Vec<T>> {
    if x.len() != rows * in_dim || weight.len() != out_dim * in_dim {
        return Err(shape_err!(
            "linear {rows}x{in_dim} -> {out_dim} with {} inputs and {} weights",
            x.len(),
            weight.len()
        ));
    }
    let mut y = vec![T::zero(); rows * out_dim];
    matmul_nt(x, weight, &mut y, rows, in_dim, out_dim, false);
    if let Some(bias) = bias {
        if bias.len() != out_dim {
            return Err(shape_err!("linear bias has {} values, expected {out_dim}", bias.len()));
        }
        for row in y.chunks_mut(out_dim) {
            row.iter_mut().zip(bias).for_each(|(v, b)| *v += *b);
        }
    }
    Ok(y)
}

/// Accumulates `dW += dy^T x`, `db += colsum(dy)` and returns `dx = dy W`.
#[allow(clippy::too_many_arguments)]
pub fn linear_backward<T: Scalar>(
    x: &[T],
    rows: usize,
    in_dim: usize,
    weight: &[T],
    out_dim: usize,
    dy: &[T],
    dweight: &mut [T],
    dbias: Option<&mut [T]>,
) -> Vec<T> {
    matmul_tn(dy, x, dweight, out_dim, rows, in_dim, true);
    if let Some(dbias) = dbias {
        for row in dy.chunks(out_dim) {
            dbias.iter_mut().zip(row).for_each(|(d, g)| *d += *g);
        }
    }
    let mut dx = vec![T::zero(); rows * in_dim];
    matmul(dy, weight, &mut dx, rows, out_dim, in_dim, false);
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_and_backward_small() {
        let x = [1.0f64, 2.0];
        let w = [1.0f64, 0.0, 0.0, 1.0, 1.0, 1.0];
        let y = linear(&x, 1, 2, &w, Some(&[0.0, 0.0, 1.0]), 3).unwrap();
        assert_eq!(y, vec![1.0, 2.0, 4.0]);
        let mut dw = [0.0; 6];
        let mut db = [0.0; 3];
        let dx = linear_backward(&x, 1, 2, &w, 3, &[1.0, 1.0, 1.0], &mut dw, Some(&mut db));
        assert_eq!(dx, vec![2.0, 2.0]);
        assert_eq!(dw, [1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        assert_eq!(db, [1.0; 3]);
    }
}
