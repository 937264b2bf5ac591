//! Batch normalization over NCHW channels and layer normalization over rows.

use alloc::vec;
use alloc::vec::Vec;

use super::Mode;
use crate::error::{shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;
/// Weight of the previous running statistic in each update.
pub const BN_MOMENTUM: f64 = 0.9;
pub const LN_EPS: f64 = 1e-5;

/// Per-channel batch statistics observed in train mode (biased variance).
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Scalar> BatchNormStats<T> {
    /// `running = m * running + (1 - m) * batch`.
    pub fn blend_into(&self, running_mean: &mut [T], running_var: &mut [T]) {
        let m = T::from_f64_lossy(BN_MOMENTUM);
        let one_m = T::one() - m;
        for (r, b) in running_mean.iter_mut().zip(&self.mean) {
            *r = m * *r + one_m * *b;
        }
        for (r, b) in running_var.iter_mut().zip(&self.var) {
            *r = m * *r + one_m * *b;
        }
    }
}

#[derive(Debug, Clone)]
pub struct BatchNormCache<T> {
    pub xhat: Tensor<T>,
    pub inv_std: Vec<T>,
    pub mode: Mode,
}

pub fn batch_norm<T: Scalar>(
    x: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    running_mean: &[T],
    running_var: &[T],
    mode: Mode,
) -> Result<(Tensor<T>, BatchNormCache<T>, Option<BatchNormStats<T>>)> {
    let c = x.c;
    if [gamma.len(), beta.len(), running_mean.len(), running_var.len()] != [c; 4] {
        return Err(shape_err!("batch norm parameters do not match {c} channels"));
    }
    let p = x.plane();
    let count = x.n * p;
    if count == 0 {
        return Err(shape_err!("batch norm over an empty batch"));
    }
    let eps = T::from_f64_lossy(BN_EPS);
    let (mean, var, stats) = match mode {
        Mode::Train => {
            let inv_count = T::one() / T::from_usize(count).unwrap();
            let mut mean = vec![T::zero(); c];
            let mut var = vec![T::zero(); c];
            for ch in 0..c {
                let mut s = T::zero();
                for b in 0..x.n {
                    s += x.data[(b * c + ch) * p..(b * c + ch + 1) * p].iter().copied().sum::<T>();
                }
                let mu = s * inv_count;
                let mut ss = T::zero();
                for b in 0..x.n {
                    for v in &x.data[(b * c + ch) * p..(b * c + ch + 1) * p] {
                        let d = *v - mu;
                        ss += d * d;
                    }
                }
                mean[ch] = mu;
                var[ch] = ss * inv_count;
            }
            let stats = BatchNormStats { mean: mean.clone(), var: var.clone() };
            (mean, var, Some(stats))
        }
        Mode::Eval => (running_mean.to_vec(), running_var.to_vec(), None),
    };
    let inv_std: Vec<T> = var.iter().map(|v| T::one() / (*v + eps).sqrt()).collect();
    let mut xhat = Tensor::zeros(x.n, c, x.h, x.w);
    let mut y = Tensor::zeros(x.n, c, x.h, x.w);
    for b in 0..x.n {
        for ch in 0..c {
            let range = (b * c + ch) * p..(b * c + ch + 1) * p;
            let (mu, is, g, bt) = (mean[ch], inv_std[ch], gamma[ch], beta[ch]);
            for ((xh, yv), xv) in
                xhat.data[range.clone()].iter_mut().zip(y.data[range.clone()].iter_mut()).zip(&x.data[range])
            {
                *xh = (*xv - mu) * is;
                *yv = g * *xh + bt;
            }
        }
    }
    Ok((y, BatchNormCache { xhat, inv_std, mode }, stats))
}

/// Accumulates `dgamma`, `dbeta` and returns the input gradient.
pub fn batch_norm_backward<T: Scalar>(
    cache: &BatchNormCache<T>,
    gamma: &[T],
    dy: &Tensor<T>,
    dgamma: &mut [T],
    dbeta: &mut [T],
) -> Tensor<T> {
    let xhat = &cache.xhat;
    let (c, p) = (xhat.c, xhat.plane());
    let count = T::from_usize(xhat.n * p).unwrap();
    let mut dx = Tensor::zeros(xhat.n, c, xhat.h, xhat.w);
    for ch in 0..c {
        let mut sum_dy = T::zero();
        let mut sum_dy_xhat = T::zero();
        for b in 0..xhat.n {
            let range = (b * c + ch) * p..(b * c + ch + 1) * p;
            for (g, xh) in dy.data[range.clone()].iter().zip(&xhat.data[range]) {
                sum_dy += *g;
                sum_dy_xhat += *g * *xh;
            }
        }
        dgamma[ch] += sum_dy_xhat;
        dbeta[ch] += sum_dy;
        let scale = gamma[ch] * cache.inv_std[ch];
        for b in 0..xhat.n {
            let range = (b * c + ch) * p..(b * c + ch + 1) * p;
            let it = dx.data[range.clone()].iter_mut().zip(&dy.data[range.clone()]).zip(&xhat.data[range]);
            match cache.mode {
                Mode::Eval => {
                    for ((d, g), _) in it {
                        *d = scale * *g;
                    }
                }
                Mode::Train => {
                    for ((d, g), xh) in it {
                        *d = scale * (*g - (sum_dy + *xh * sum_dy_xhat) / count);
                    }
                }
            }
        }
    }
    dx
}

#[derive(Debug, Clone)]
pub struct LayerNormCache<T> {
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
    pub dim: usize,
}

/// Normalizes each `dim`-long row to zero mean and unit variance, then applies
/// `gamma` and `beta`.
pub fn layer_norm<T: Scalar>(x: &[T], dim: usize, gamma: &[T], beta: &[T]) -> Result<(Vec<T>, LayerNormCache<T>)> {
    if dim == 0 || !x.len().is_multiple_of(dim) || gamma.len() != dim || beta.len() != dim {
        return Err(shape_err!("layer norm over dim {dim} with {} values", x.len()));
    }
    let eps = T::from_f64_lossy(LN_EPS);
    let inv_dim = T::one() / T::from_usize(dim).unwrap();
    let rows = x.len() / dim;
    let mut xhat = vec![T::zero(); x.len()];
    let mut y = vec![T::zero(); x.len()];
    let mut inv_std = vec![T::zero(); rows];
    for r in 0..rows {
        let row = &x[r * dim..(r + 1) * dim];
        let mu = row.iter().copied().sum::<T>() * inv_dim;
        let var = row.iter().map(|v| (*v - mu) * (*v - mu)).sum::<T>() * inv_dim;
        let is = T::one() / (var + eps).sqrt();
        inv_std[r] = is;
        for i in 0..dim {
            let xh = (row[i] - mu) * is;
            xhat[r * dim + i] = xh;
            y[r * dim + i] = gamma[i] * xh + beta[i];
        }
    }
    Ok((y, LayerNormCache { xhat, inv_std, dim }))
}

pub fn layer_norm_backward<T: Scalar>(
    cache: &LayerNormCache<T>,
    gamma: &[T],
    dy: &[T],
    dgamma: &mut [T],
    dbeta: &mut [T],
) -> Vec<T> {
    let dim = cache.dim;
    let n = T::from_usize(dim).unwrap();
    let mut dx = vec![T::zero(); dy.len()];
    for (r, (g_row, xh_row)) in dy.chunks(dim).zip(cache.xhat.chunks(dim)).enumerate() {
        let mut sum_dxh = T::zero();
        let mut sum_dxh_xh = T::zero();
        for i in 0..dim {
            dgamma[i] += g_row[i] * xh_row[i];
            dbeta[i] += g_row[i];
            let dxh = g_row[i] * gamma[i];
            sum_dxh += dxh;
            sum_dxh_xh += dxh * xh_row[i];
        }
        let is = cache.inv_std[r];
        for i in 0..dim {
            let dxh = g_row[i] * gamma[i];
            dx[r * dim + i] = is * (dxh - (sum_dxh + xh_row[i] * sum_dxh_xh) / n);
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
        (0..len).map(|_| rng.random::<f64>() * 4.0 - 1.0).collect()
    }

    #[test]
    fn train_mode_hits_gamma_beta_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::from_vec(4, 2, 3, 3, random(&mut rng, 72)).unwrap();
        let gamma = [2.0, 0.5];
        let beta = [-1.0, 3.0];
        let (y, _, stats) = batch_norm(&x, &gamma, &beta, &[0.0; 2], &[1.0; 2], Mode::Train).unwrap();
        assert!(stats.is_some());
        for ch in 0..2 {
            let vals: Vec<f64> = (0..4).flat_map(|b| y.data[(b * 2 + ch) * 9..(b * 2 + ch + 1) * 9].to_vec()).collect();
            let mean = vals.iter().sum::<f64>() / 36.0;
            let std = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 36.0).sqrt();
            assert!((mean - beta[ch]).abs() < 1e-5);
            assert!((std - gamma[ch]).abs() < 1e-5);
        }
    }

    #[test]
    fn eval_mode_uses_running_stats() {
        let x = Tensor::from_vec(1, 1, 1, 3, vec![1.0f64, -2.0, 3.0]).unwrap();
        let (y, _, stats) = batch_norm(&x, &[1.0], &[0.0], &[0.0], &[1.0], Mode::Eval).unwrap();
        assert!(stats.is_none());
        let s = (1.0f64 + 1e-5).sqrt();
        for (a, b) in y.data.iter().zip(&x.data) {
            assert!((a - b / s).abs() < 1e-15);
        }
    }

    #[test]
    fn running_stats_blend() {
        let stats = BatchNormStats { mean: vec![1.0f64], var: vec![3.0] };
        let mut rm = [0.0];
        let mut rv = [1.0];
        stats.blend_into(&mut rm, &mut rv);
        assert!((rm[0] - 0.1).abs() < 1e-15);
        assert!((rv[0] - 1.2).abs() < 1e-15);
    }

    #[test]
    fn batch_norm_backward_matches_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for mode in [Mode::Train, Mode::Eval] {
            let x = Tensor::from_vec(3, 2, 2, 2, random(&mut rng, 24)).unwrap();
            let r = random(&mut rng, 24);
            let gamma = [1.3, -0.4];
            let beta = [0.2, 0.1];
            let rm = [0.1, -0.2];
            let rv = [0.8, 1.5];
            let f = |x: &Tensor<f64>| {
                let (y, _, _) = batch_norm(x, &gamma, &beta, &rm, &rv, mode).unwrap();
                y.data.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>()
            };
            let (_, cache, _) = batch_norm(&x, &gamma, &beta, &rm, &rv, mode).unwrap();
            let dy = Tensor::from_vec(3, 2, 2, 2, r.clone()).unwrap();
            let mut dg = [0.0; 2];
            let mut db = [0.0; 2];
            let dx = batch_norm_backward(&cache, &gamma, &dy, &mut dg, &mut db);
            for i in 0..24 {
                let mut xp = x.clone();
                xp.data[i] += 1e-6;
                let mut xm = x.clone();
                xm.data[i] -= 1e-6;
                let fd = (f(&xp) - f(&xm)) / 2e-6;
                assert!((fd - dx.data[i]).abs() < 1e-7, "{mode:?} dx[{i}]");
            }
        }
    }

    #[test]
    fn layer_norm_examples() {
        let (y, _) = layer_norm(&[1.0f64, 1.0, 1.0], 3, &[1.0; 3], &[0.0; 3]).unwrap();
        assert_eq!(y, vec![0.0; 3]);
        let (y, _) = layer_norm(&[-1.0f64, 1.0], 2, &[1.0; 2], &[0.0; 2]).unwrap();
        assert!((y[0] + 1.0).abs() < 1e-5 && (y[1] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn layer_norm_backward_matches_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random(&mut rng, 12);
        let r = random(&mut rng, 12);
        let gamma = [0.5, 1.5, -1.0, 2.0];
        let beta = [0.0, 0.1, 0.2, 0.3];
        let f = |x: &[f64]| {
            let (y, _) = layer_norm(x, 4, &gamma, &beta).unwrap();
            y.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>()
        };
        let (_, cache) = layer_norm(&x, 4, &gamma, &beta).unwrap();
        let mut dg = [0.0; 4];
        let mut db = [0.0; 4];
        let dx = layer_norm_backward(&cache, &gamma, &r, &mut dg, &mut db);
        for i in 0..12 {
            let mut xp = x.clone();
            xp[i] += 1e-6;
            let mut xm = x.clone();
            xm[i] -= 1e-6;
            assert!(((f(&xp) - f(&xm)) / 2e-6 - dx[i]).abs() < 1e-7);
        }
    }
}
