//! Dense batch tensors in NCHW layout and token sequences.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Result};
use crate::scalar::Scalar;

/// A 4-D tensor laid out as (batch, channels, height, width), row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self { n, c, h, w, data: vec![T::zero(); n * c * h * w] }
    }

    pub fn filled(n: usize, c: usize, h: usize, w: usize, value: T) -> Self {
        Self { n, c, h, w, data: vec![value; n * c * h * w] }
    }

    pub fn from_vec(n: usize, c: usize, h: usize, w: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != n * c * h * w {
            return Err(shape_err!("{} values for a {n}x{c}x{h}x{w} tensor", data.len()));
        }
        Ok(Self { n, c, h, w, data })
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    #[inline]
    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    #[inline]
    pub fn idx(&self, b: usize, c: usize, y: usize, x: usize) -> usize {
        ((b * self.c + c) * self.h + y) * self.w + x
    }

    #[inline]
    pub fn at(&self, b: usize, c: usize, y: usize, x: usize) -> T {
        self.data[self.idx(b, c, y, x)]
    }

    /// Slice of one image (all channels).
    pub fn image(&self, b: usize) -> &[T] {
        let len = self.c * self.plane();
        &self.data[b * len..(b + 1) * len]
    }

    pub fn same_dims(&self, other: &Self) -> bool {
        self.dims() == other.dims()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if !self.same_dims(other) {
            return Err(shape_err!("add {:?} + {:?}", self.dims(), other.dims()));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            n: self.n,
            c: self.c,
            h: self.h,
            w: self.w,
            data: self.data.iter().map(|v| U::from_f64_lossy(v.as_f64())).collect(),
        }
    }
}

/// A batch of token sequences: (batch, tokens, dim), row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tokens<T> {
    pub batch: usize,
    pub len: usize,
    pub dim: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Tokens<T> {
    pub fn zeros(batch: usize, len: usize, dim: usize) -> Self {
        Self { batch, len, dim, data: vec![T::zero(); batch * len * dim] }
    }

    pub fn from_vec(batch: usize, len: usize, dim: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != batch * len * dim {
            return Err(shape_err!("{} values for {batch}x{len}x{dim} tokens", data.len()));
        }
        Ok(Self { batch, len, dim, data })
    }

    pub fn rows(&self) -> usize {
        self.batch * self.len
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.batch, self.len, self.dim]
    }

    /// Flattens an NCHW map into (batch, h*w, c) tokens, row-major over pixels.
    pub fn from_map(map: &Tensor<T>) -> Self {
        let (n, c, p) = (map.n, map.c, map.plane());
        let mut out = Self::zeros(n, p, c);
        for b in 0..n {
            for ch in 0..c {
                let src = &map.data[(b * c + ch) * p..(b * c + ch + 1) * p];
                for (t, v) in src.iter().enumerate() {
                    out.data[(b * p + t) * c + ch] = *v;
                }
            }
        }
        out
    }

    /// Inverse of [`Tokens::from_map`].
    pub fn to_map(&self, h: usize, w: usize) -> Result<Tensor<T>> {
        if h * w != self.len {
            return Err(shape_err!("{} tokens cannot fill a {h}x{w} map", self.len));
        }
        let (n, c, p) = (self.batch, self.dim, self.len);
        let mut out = Tensor::zeros(n, c, h, w);
        for b in 0..n {
            for t in 0..p {
                let row = &self.data[(b * p + t) * c..(b * p + t + 1) * c];
                for (ch, v) in row.iter().enumerate() {
                    out.data[(b * c + ch) * p + t] = *v;
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn token_map_roundtrip() {
        let data: Vec<f32> = (0..2 * 3 * 2 * 2).map(|v| v as f32).collect();
        let map = Tensor::from_vec(2, 3, 2, 2, data).unwrap();
        let toks = Tokens::from_map(&map);
        assert_eq!(toks.dims(), [2, 4, 3]);
        // token 1 of image 0 holds pixel (0, 1) of each channel
        assert_eq!(&toks.data[3..6], &[1.0, 5.0, 9.0]);
        assert_eq!(toks.to_map(2, 2).unwrap(), map);
    }

    #[test]
    fn from_vec_rejects_bad_length() {
        assert!(Tensor::<f32>::from_vec(1, 1, 2, 2, vec![0.0; 3]).is_err());
    }
}
