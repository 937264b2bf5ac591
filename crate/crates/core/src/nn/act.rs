//! Elementwise activations and row softmax.

use crate::scalar::Scalar;

#[inline]
pub fn relu<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x
    } else {
        T::zero()
    }
}

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Exact GELU: `x * Phi(x)`.
#[inline]
pub fn gelu<T: Scalar>(x: T) -> T {
    let half = T::from_f64_lossy(0.5);
    let inv_sqrt2 = T::from_f64_lossy(core::f64::consts::FRAC_1_SQRT_2);
    half * x * (T::one() + (x * inv_sqrt2).erf())
}

/// d gelu / dx = `Phi(x) + x * phi(x)`.
#[inline]
pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let half = T::from_f64_lossy(0.5);
    let inv_sqrt2 = T::from_f64_lossy(core::f64::consts::FRAC_1_SQRT_2);
    let inv_sqrt_2pi = T::from_f64_lossy(0.398_942_280_401_432_7);
    let cdf = half * (T::one() + (x * inv_sqrt2).erf());
    let pdf = inv_sqrt_2pi * (-half * x * x).exp();
    cdf + x * pdf
}

pub fn relu_inplace<T: Scalar>(v: &mut [T]) {
    v.iter_mut().for_each(|x| *x = relu(*x));
}

/// Masks `grad` where the ReLU output was not positive.
pub fn relu_backward_inplace<T: Scalar>(out: &[T], grad: &mut [T]) {
    for (g, o) in grad.iter_mut().zip(out) {
        if *o <= T::zero() {
            *g = T::zero();
        }
    }
}

/// In-place numerically stable softmax of each `width`-long row.
pub fn softmax_rows<T: Scalar>(v: &mut [T], width: usize) {
    for row in v.chunks_mut(width) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for x in row.iter_mut() {
            *x = (*x - max).exp();
            sum += *x;
        }
        row.iter_mut().for_each(|x| *x /= sum);
    }
}

/// Backward of a row softmax: `ds = p * (dp - <dp, p>)`, written into `dp`.
pub fn softmax_rows_backward<T: Scalar>(p: &[T], dp: &mut [T], width: usize) {
    for (prow, drow) in p.chunks(width).zip(dp.chunks_mut(width)) {
        let dot: T = prow.iter().zip(drow.iter()).map(|(a, b)| *a * *b).sum();
        for (d, pv) in drow.iter_mut().zip(prow) {
            *d = *pv * (*d - dot);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn scalar_values() {
        assert_eq!(relu(-2.0f64), 0.0);
        assert_eq!(relu(3.0f64), 3.0);
        assert_eq!(sigmoid(0.0f64), 0.5);
        assert!(sigmoid(-800.0f64) >= 0.0 && sigmoid(800.0f64) <= 1.0);
        assert!((gelu(1.0f64) - 0.841_344_746_068_542_9).abs() < 1e-12);
    }

    #[test]
    fn softmax_rows_normalize() {
        let mut v = vec![0.0f64, 0.0, 1.0, 2.0, 3.0, -1000.0];
        softmax_rows(&mut v, 2);
        assert_eq!(&v[..2], &[0.5, 0.5]);
        for row in v.chunks(2) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn gelu_grad_matches_difference() {
        for &x in &[-3.0f64, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn softmax_backward_matches_difference() {
        let logits = [0.3f64, -1.2, 0.8];
        let r = [1.0f64, -2.0, 0.5];
        let f = |z: &[f64]| {
            let mut p = z.to_vec();
            softmax_rows(&mut p, 3);
            p.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>()
        };
        let mut p = logits.to_vec();
        softmax_rows(&mut p, 3);
        let mut g = r.to_vec();
        softmax_rows_backward(&p, &mut g, 3);
        for i in 0..3 {
            let mut zp = logits;
            zp[i] += 1e-6;
            let mut zm = logits;
            zm[i] -= 1e-6;
            assert!(((f(&zp) - f(&zm)) / 2e-6 - g[i]).abs() < 1e-8);
        }
    }
}
