//! Max pooling with implicit `-inf` padding.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Pools `x` with a `k x k` window. Returns the output and, per output element,
/// the flat index into `x.data` of the selected input.
pub fn max_pool2d<T: Scalar>(x: &Tensor<T>, k: usize, stride: usize, pad: usize) -> Result<(Tensor<T>, Vec<u32>)> {
    if k == 0 || stride == 0 || x.h + 2 * pad < k || x.w + 2 * pad < k || pad >= k {
        return Err(shape_err!("max pool k={k} s={stride} p={pad} over {}x{}", x.h, x.w));
    }
    let oh = (x.h + 2 * pad - k) / stride + 1;
    let ow = (x.w + 2 * pad - k) / stride + 1;
    let mut out = Tensor::zeros(x.n, x.c, oh, ow);
    let mut argmax = vec![0u32; out.data.len()];
    for plane_idx in 0..x.n * x.c {
        let base = plane_idx * x.plane();
        for oy in 0..oh {
            let y0 = (oy * stride) as isize - pad as isize;
            for ox in 0..ow {
                let x0 = (ox * stride) as isize - pad as isize;
                let mut best = T::neg_infinity();
                let mut best_i = 0usize;
                for dy in 0..k as isize {
                    let iy = y0 + dy;
                    if iy < 0 || iy >= x.h as isize {
                        continue;
                    }
                    for dx in 0..k as isize {
                        let ix = x0 + dx;
                        if ix < 0 || ix >= x.w as isize {
                            continue;
                        }
                        let i = base + iy as usize * x.w + ix as usize;
                        if x.data[i] > best {
                            best = x.data[i];
                            best_i = i;
                        }
                    }
                }
                let o = plane_idx * oh * ow + oy * ow + ox;
                out.data[o] = best;
                argmax[o] = best_i as u32;
            }
        }
    }
    Ok((out, argmax))
}

pub fn max_pool2d_backward<T: Scalar>(input_dims: [usize; 4], argmax: &[u32], dy: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = input_dims;
    let mut dx = Tensor::zeros(n, c, h, w);
    for (g, i) in dy.data.iter().zip(argmax) {
        dx.data[*i as usize] += *g;
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_input_stays_constant() {
        let x = Tensor::filled(1, 2, 6, 6, 1.5f32);
        let (y, _) = max_pool2d(&x, 3, 2, 1).unwrap();
        assert_eq!(y.dims(), [1, 2, 3, 3]);
        assert!(y.data.iter().all(|v| *v == 1.5));
    }

    #[test]
    fn single_hot_pixel() {
        let mut x = Tensor::zeros(1, 1, 4, 4);
        x.data[0] = 9.0f64;
        let (y, _) = max_pool2d(&x, 3, 2, 1).unwrap();
        assert_eq!(y.data, vec![9.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn halves_even_dims() {
        let x = Tensor::<f32>::zeros(1, 1, 128, 128);
        assert_eq!(max_pool2d(&x, 3, 2, 1).unwrap().0.dims(), [1, 1, 64, 64]);
    }

    #[test]
    fn gradient_routes_to_argmax() {
        let x = Tensor::from_vec(1, 1, 2, 2, vec![1.0f64, 4.0, 2.0, 3.0]).unwrap();
        let (y, am) = max_pool2d(&x, 3, 2, 1).unwrap();
        assert_eq!(y.data, vec![4.0]);
        let dx = max_pool2d_backward(x.dims(), &am, &Tensor::filled(1, 1, 1, 1, 2.0));
        assert_eq!(dx.data, vec![0.0, 2.0, 0.0, 0.0]);
    }
}
