//! 2-D cross-correlation via im2col + GEMM.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Result};
use crate::scalar::{matmul, matmul_nt, matmul_tn, Scalar};
use crate::tensor::Tensor;

/// Square-kernel convolution geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_c: usize,
    pub out_c: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
    pub fn new(in_c: usize, out_c: usize, k: usize, stride: usize, pad: usize) -> Self {
        Self { in_c, out_c, k, stride, pad }
    }

    pub fn weight_len(&self) -> usize {
        self.out_c * self.in_c * self.k * self.k
    }

    /// `floor((dim + 2 pad - k) / stride) + 1`.
    pub fn out_dim(&self, dim: usize) -> Option<usize> {
        let padded = dim + 2 * self.pad;
        if padded < self.k || self.stride == 0 {
            return None;
        }
        Some((padded - self.k) / self.stride + 1)
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    fn check(&self, x: &Tensor<impl Scalar>, weight_len: usize) -> Result<(usize, usize)> {
        if x.c != self.in_c {
            return Err(shape_err!("conv expects {} input channels, got {}", self.in_c, x.c));
        }
        if weight_len != self.weight_len() {
            return Err(shape_err!(
                "conv weight has {weight_len} values, expected {}x{}x{}x{}",
                self.out_c,
                self.in_c,
                self.k,
                self.k
            ));
        }
        match (self.out_dim(x.h), self.out_dim(x.w)) {
            (Some(oh), Some(ow)) => Ok((oh, ow)),
            _ => Err(shape_err!("conv input {}x{} smaller than kernel {}", x.h, x.w, self.k)),
        }
    }
}

/// Unfolds image `b` of `x` into `cols` as a `(in_c*k*k) x (oh*ow)` block
/// whose rows are `stride` apart.
fn im2col<T: Scalar>(
    x: &Tensor<T>,
    b: usize,
    g: &ConvGeometry,
    oh: usize,
    ow: usize,
    cols: &mut [T],
    row_stride: usize,
) {
    let (h, w, k) = (x.h, x.w, g.k);
    let img = x.image(b);
    for ci in 0..g.in_c {
        let plane = &img[ci * h * w..(ci + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let dst = &mut cols[row * row_stride..row * row_stride + oh * ow];
                for oy in 0..oh {
                    let drow = &mut dst[oy * ow..(oy + 1) * ow];
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        drow.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, d) in drow.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        *d = if ix >= 0 && ix < w as isize { src[ix as usize] } else { T::zero() };
                    }
                }
            }
        }
    }
}

/// Folds a column block back onto image `b` of `dx`, accumulating overlaps.
fn col2im<T: Scalar>(
    cols: &[T],
    row_stride: usize,
    g: &ConvGeometry,
    oh: usize,
    ow: usize,
    dx: &mut Tensor<T>,
    b: usize,
) {
    let (h, w, k) = (dx.h, dx.w, g.k);
    let base = b * g.in_c * h * w;
    for ci in 0..g.in_c {
        let plane = &mut dx.data[base + ci * h * w..base + (ci + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let src = &cols[row * row_stride..row * row_stride + oh * ow];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let drow = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < w as isize {
                            drow[ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Builds the `(in_c*k*k) x (n*oh*ow)` column matrix for the whole batch.
fn batch_cols<T: Scalar>(x: &Tensor<T>, g: &ConvGeometry, oh: usize, ow: usize) -> Vec<T> {
    let p = oh * ow;
    let kdim = g.in_c * g.k * g.k;
    let np = x.n * p;
    let mut cols = vec![T::zero(); kdim * np];
    for b in 0..x.n {
        im2col(x, b, g, oh, ow, &mut cols[b * p..], np);
    }
    cols
}

/// Gathers a pointwise input into channel-major `(in_c) x (n*h*w)` form.
fn channel_major<T: Scalar>(x: &Tensor<T>) -> Vec<T> {
    let p = x.plane();
    let np = x.n * p;
    let mut out = vec![T::zero(); x.c * np];
    for b in 0..x.n {
        for c in 0..x.c {
            out[c * np + b * p..c * np + (b + 1) * p]
                .copy_from_slice(&x.data[(b * x.c + c) * p..(b * x.c + c + 1) * p]);
        }
    }
    out
}

/// Cross-correlation of `x` with `weight` (shape `out_c x in_c x k x k`).
pub fn conv2d<T: Scalar>(x: &Tensor<T>, weight: &[T], bias: Option<&[T]>, g: &ConvGeometry) -> Result<Tensor<T>> {
    let (oh, ow) = g.check(x, weight.len())?;
    if let Some(bias) = bias {
        if bias.len() != g.out_c {
            return Err(shape_err!("conv bias has {} values, expected {}", bias.len(), g.out_c));
        }
    }
    let p = oh * ow;
    let np = x.n * p;
    let kdim = g.in_c * g.k * g.k;
    let cols = if g.is_pointwise() { channel_major(x) } else { batch_cols(x, g, oh, ow) };
    let mut y = vec![T::zero(); g.out_c * np];
    matmul(weight, &cols, &mut y, g.out_c, kdim, np, false);

    let mut out = Tensor::zeros(x.n, g.out_c, oh, ow);
    for b in 0..x.n {
        for oc in 0..g.out_c {
            let dst = &mut out.data[(b * g.out_c + oc) * p..(b * g.out_c + oc + 1) * p];
            dst.copy_from_slice(&y[oc * np + b * p..oc * np + (b + 1) * p]);
            if let Some(bias) = bias {
                let bv = bias[oc];
                dst.iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    Ok(out)
}

/// Backward pass of [`conv2d`].
///
/// Accumulates into `dweight` (and `dbias` when present) and returns the input
/// gradient when `need_dx` is set.
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &[T],
    dy: &Tensor<T>,
    g: &ConvGeometry,
    dweight: &mut [T],
    dbias: Option<&mut [T]>,
    need_dx: bool,
) -> Result<Option<Tensor<T>>> {
    let (oh, ow) = g.check(x, weight.len())?;
    if dy.dims() != [x.n, g.out_c, oh, ow] {
        return Err(shape_err!("conv output grad {:?} vs expected {:?}", dy.dims(), [x.n, g.out_c, oh, ow]));
    }
    let p = oh * ow;
    let np = x.n * p;
    let kdim = g.in_c * g.k * g.k;

    // dy in channel-major (out_c x n*p) form
    let dy_cm = channel_major(dy);
    if let Some(dbias) = dbias {
        for (oc, db) in dbias.iter_mut().enumerate() {
            *db += dy_cm[oc * np..(oc + 1) * np].iter().copied().sum::<T>();
        }
    }

    let pointwise = g.is_pointwise();
    let cols = if pointwise { channel_major(x) } else { batch_cols(x, g, oh, ow) };
    matmul_nt(&dy_cm, &cols, dweight, g.out_c, np, kdim, true);
    drop(cols);

    if !need_dx {
        return Ok(None);
    }
    let mut dcols = vec![T::zero(); kdim * np];
    matmul_tn(weight, &dy_cm, &mut dcols, kdim, g.out_c, np, false);
    let mut dx = Tensor::zeros(x.n, x.c, x.h, x.w);
    if pointwise {
        for b in 0..x.n {
            for c in 0..x.c {
                dx.data[(b * x.c + c) * p..(b * x.c + c + 1) * p]
                    .copy_from_slice(&dcols[c * np + b * p..c * np + (b + 1) * p]);
            }
        }
    } else {
        for b in 0..x.n {
            col2im(&dcols[b * p..], np, g, oh, ow, &mut dx, b);
        }
    }
    Ok(Some(dx))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(rng: &mut ChaCha8Rng, n: usize, c: usize, h: usize, w: usize) -> Tensor<f64> {
        let data = (0..n * c * h * w).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        Tensor::from_vec(n, c, h, w, data).unwrap()
    }

    /// Direct nested-loop cross-correlation.
    fn naive_conv(x: &Tensor<f64>, wt: &[f64], bias: &[f64], g: &ConvGeometry) -> Tensor<f64> {
        let oh = g.out_dim(x.h).unwrap();
        let ow = g.out_dim(x.w).unwrap();
        let mut out = Tensor::zeros(x.n, g.out_c, oh, ow);
        for b in 0..x.n {
            for oc in 0..g.out_c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = bias[oc];
                        for ic in 0..g.in_c {
                            for ki in 0..g.k {
                                for kj in 0..g.k {
                                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                                    let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                                    if iy < 0 || ix < 0 || iy >= x.h as isize || ix >= x.w as isize {
                                        continue;
                                    }
                                    acc += wt[((oc * g.in_c + ic) * g.k + ki) * g.k + kj]
                                        * x.at(b, ic, iy as usize, ix as usize);
                                }
                            }
                        }
                        let i = out.idx(b, oc, oy, ox);
                        out.data[i] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn identity_kernel_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_tensor(&mut rng, 2, 1, 5, 4);
        let y = conv2d(&x, &[1.0], None, &ConvGeometry::new(1, 1, 1, 1, 0)).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn ones_kernel_sums_neighbourhood() {
        let x = Tensor::filled(1, 1, 5, 5, 2.0f64);
        let y = conv2d(&x, &[1.0; 9], None, &ConvGeometry::new(1, 1, 3, 1, 1)).unwrap();
        assert_eq!(y.at(0, 0, 2, 2), 18.0);
        // corner sees a 2x2 window
        assert_eq!(y.at(0, 0, 0, 0), 8.0);
    }

    #[test]
    fn stem_shape() {
        let g = ConvGeometry::new(3, 64, 7, 2, 3);
        assert_eq!(g.out_dim(256), Some(128));
        let x = Tensor::<f32>::zeros(1, 3, 32, 32);
        let y = conv2d(&x, &vec![0.0; g.weight_len()], None, &g).unwrap();
        assert_eq!(y.dims(), [1, 64, 16, 16]);
    }

    #[test]
    fn rejects_channel_mismatch() {
        let x = Tensor::<f32>::zeros(1, 2, 4, 4);
        let g = ConvGeometry::new(3, 1, 1, 1, 0);
        assert!(conv2d(&x, &[0.0; 3], None, &g).is_err());
    }

    #[test]
    fn matches_naive_for_varied_geometry() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for &(k, s, p) in &[(3, 1, 1), (3, 2, 1), (1, 2, 0), (7, 2, 3), (1, 1, 0)] {
            let g = ConvGeometry::new(3, 4, k, s, p);
            let x = random_tensor(&mut rng, 2, 3, 9, 8);
            let wt: Vec<f64> = (0..g.weight_len()).map(|_| rng.random::<f64>() - 0.5).collect();
            let bias: Vec<f64> = (0..4).map(|_| rng.random::<f64>()).collect();
            let fast = conv2d(&x, &wt, Some(&bias), &g).unwrap();
            let slow = naive_conv(&x, &wt, &bias, &g);
            assert_eq!(fast.dims(), slow.dims());
            for (a, b) in fast.data.iter().zip(&slow.data) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &(k, s, p) in &[(3, 2, 1), (1, 1, 0), (3, 1, 1)] {
            let g = ConvGeometry::new(2, 3, k, s, p);
            let x = random_tensor(&mut rng, 2, 2, 6, 5);
            let wt: Vec<f64> = (0..g.weight_len()).map(|_| rng.random::<f64>() - 0.5).collect();
            let bias = vec![0.1, -0.2, 0.3];
            let y = conv2d(&x, &wt, Some(&bias), &g).unwrap();
            let r = random_tensor(&mut rng, y.n, y.c, y.h, y.w);
            // loss = <r, y>
            let loss = |x: &Tensor<f64>, wt: &[f64]| -> f64 {
                let y = conv2d(x, wt, Some(&bias), &g).unwrap();
                y.data.iter().zip(&r.data).map(|(a, b)| a * b).sum()
            };
            let mut dw = vec![0.0; wt.len()];
            let mut db = vec![0.0; 3];
            let dx = conv2d_backward(&x, &wt, &r, &g, &mut dw, Some(&mut db), true).unwrap().unwrap();
            let h = 1e-6;
            for i in (0..x.data.len()).step_by(7) {
                let mut xp = x.clone();
                xp.data[i] += h;
                let mut xm = x.clone();
                xm.data[i] -= h;
                let fd = (loss(&xp, &wt) - loss(&xm, &wt)) / (2.0 * h);
                assert!((fd - dx.data[i]).abs() < 1e-7, "dx[{i}]");
            }
            for i in 0..wt.len() {
                let mut wp = wt.clone();
                wp[i] += h;
                let mut wm = wt.clone();
                wm[i] -= h;
                let fd = (loss(&x, &wp) - loss(&x, &wm)) / (2.0 * h);
                assert!((fd - dw[i]).abs() < 1e-7, "dw[{i}]");
            }
            let bsum: f64 =
                r.data[..r.plane()].iter().sum::<f64>() + r.data[3 * r.plane()..4 * r.plane()].iter().sum::<f64>();
            assert!((db[0] - bsum).abs() < 1e-12);
        }
    }
}
