//! Nearest-neighbour and bilinear upsampling, and channel concatenation.

use crate::error::{shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Nearest-neighbour x2 upsampling: `[[a]] -> [[a, a], [a, a]]`.
pub fn upsample2x<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let (h, w) = (x.h, x.w);
    let mut out = Tensor::zeros(x.n, x.c, 2 * h, 2 * w);
    for plane in 0..x.n * x.c {
        let src = &x.data[plane * h * w..(plane + 1) * h * w];
        let dst = &mut out.data[plane * 4 * h * w..(plane + 1) * 4 * h * w];
        for y in 0..2 * h {
            let srow = &src[(y / 2) * w..(y / 2 + 1) * w];
            for (xx, d) in dst[y * 2 * w..(y + 1) * 2 * w].iter_mut().enumerate() {
                *d = srow[xx / 2];
            }
        }
    }
    out
}

/// Sums each 2x2 block of `dy`.
pub fn upsample2x_backward<T: Scalar>(dy: &Tensor<T>) -> Tensor<T> {
    let (h, w) = (dy.h / 2, dy.w / 2);
    let mut dx = Tensor::zeros(dy.n, dy.c, h, w);
    for plane in 0..dy.n * dy.c {
        let src = &dy.data[plane * 4 * h * w..(plane + 1) * 4 * h * w];
        let dst = &mut dx.data[plane * h * w..(plane + 1) * h * w];
        for y in 0..2 * h {
            for xx in 0..2 * w {
                dst[(y / 2) * w + xx / 2] += src[y * 2 * w + xx];
            }
        }
    }
    dx
}

/// Source taps of output index `o` for x2 bilinear upsampling with
/// half-pixel centres: `src = o / 2 - 1/4`, clamped at the edges.
#[inline]
fn bilinear_taps(o: usize, n: usize) -> [(usize, f64); 2] {
    let k = o / 2;
    if o.is_multiple_of(2) {
        [(k.saturating_sub(1), 0.25), (k, 0.75)]
    } else {
        [(k, 0.75), ((k + 1).min(n - 1), 0.25)]
    }
}

/// Bilinear x2 upsampling (half-pixel centres, edge clamp). Rows of
/// `[0, 4]` become `[0, 1, 3, 4]`.
pub fn bilinear2x<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let (h, w) = (x.h, x.w);
    let mut out = Tensor::zeros(x.n, x.c, 2 * h, 2 * w);
    let col_taps: alloc::vec::Vec<_> = (0..2 * w).map(|o| bilinear_taps(o, w)).collect();
    for plane in 0..x.n * x.c {
        let src = &x.data[plane * h * w..(plane + 1) * h * w];
        let dst = &mut out.data[plane * 4 * h * w..(plane + 1) * 4 * h * w];
        for oy in 0..2 * h {
            let [(y0, wy0), (y1, wy1)] = bilinear_taps(oy, h);
            let (r0, r1) = (&src[y0 * w..(y0 + 1) * w], &src[y1 * w..(y1 + 1) * w]);
            for (ox, d) in dst[oy * 2 * w..(oy + 1) * 2 * w].iter_mut().enumerate() {
                let [(x0, wx0), (x1, wx1)] = col_taps[ox];
                let v = wy0 * (wx0 * r0[x0].as_f64() + wx1 * r0[x1].as_f64())
                    + wy1 * (wx0 * r1[x0].as_f64() + wx1 * r1[x1].as_f64());
                *d = T::from_f64_lossy(v);
            }
        }
    }
    out
}

/// Adjoint of [`bilinear2x`].
pub fn bilinear2x_backward<T: Scalar>(dy: &Tensor<T>) -> Tensor<T> {
    let (h, w) = (dy.h / 2, dy.w / 2);
    let mut dx = Tensor::zeros(dy.n, dy.c, h, w);
    let col_taps: alloc::vec::Vec<_> = (0..2 * w).map(|o| bilinear_taps(o, w)).collect();
    for plane in 0..dy.n * dy.c {
        let src = &dy.data[plane * 4 * h * w..(plane + 1) * 4 * h * w];
        let dst = &mut dx.data[plane * h * w..(plane + 1) * h * w];
        for oy in 0..2 * h {
            for (y, wy) in bilinear_taps(oy, h) {
                for (ox, g) in src[oy * 2 * w..(oy + 1) * 2 * w].iter().enumerate() {
                    for (x, wx) in col_taps[ox] {
                        dst[y * w + x] += T::from_f64_lossy(wy * wx) * *g;
                    }
                }
            }
        }
    }
    dx
}

/// Concatenates along channels: `a` first, then `b`.
pub fn concat_channels<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.n != b.n || a.h != b.h || a.w != b.w {
        return Err(shape_err!("concat {:?} with {:?}", a.dims(), b.dims()));
    }
    let p = a.plane();
    let mut out = Tensor::zeros(a.n, a.c + b.c, a.h, a.w);
    for n in 0..a.n {
        let dst = &mut out.data[n * (a.c + b.c) * p..(n + 1) * (a.c + b.c) * p];
        dst[..a.c * p].copy_from_slice(a.image(n));
        dst[a.c * p..].copy_from_slice(b.image(n));
    }
    Ok(out)
}

/// Inverse of [`concat_channels`]: splits after `first_c` channels.
pub fn split_channels<T: Scalar>(x: &Tensor<T>, first_c: usize) -> (Tensor<T>, Tensor<T>) {
    let p = x.plane();
    let second_c = x.c - first_c;
    let mut a = Tensor::zeros(x.n, first_c, x.h, x.w);
    let mut b = Tensor::zeros(x.n, second_c, x.h, x.w);
    for n in 0..x.n {
        let src = x.image(n);
        a.data[n * first_c * p..(n + 1) * first_c * p].copy_from_slice(&src[..first_c * p]);
        b.data[n * second_c * p..(n + 1) * second_c * p].copy_from_slice(&src[first_c * p..]);
    }
    (a, b)
}
