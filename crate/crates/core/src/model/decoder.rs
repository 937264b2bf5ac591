//! Four-block upsampling decoder fed by the encoder skips.

use alloc::format;
use alloc::vec::Vec;

use super::layers::{check_finite, relu_backward, relu_forward, BatchNorm, Conv, Fwd};
use super::params::{Grads, ParamStore, Registry};
use super::ModelConfig;
use crate::error::Result;
use crate::nn::conv::ConvGeometry;
use crate::nn::norm::BatchNormCache;
use crate::nn::resample::{concat_channels, split_channels, upsample2x, upsample2x_backward};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Upsample x2, concatenate the skip, conv3x3, BN, ReLU.
#[derive(Debug, Clone)]
pub struct DecoderBlock {
    conv: Conv,
    bn: BatchNorm,
    up_channels: usize,
}

pub struct DecoderBlockCache<T> {
    cat: Tensor<T>,
    bn: BatchNormCache<T>,
    out: Tensor<T>,
}

impl DecoderBlock {
    pub fn new(reg: &mut Registry, prefix: &str, up_c: usize, skip_c: usize, out_c: usize) -> Self {
        Self {
            conv: Conv::new(reg, &format!("{prefix}.conv"), ConvGeometry::new(up_c + skip_c, out_c, 3, 1, 1), false),
            bn: BatchNorm::new(reg, &format!("{prefix}.bn"), out_c),
            up_channels: up_c,
        }
    }

    pub fn forward<T: Scalar>(
        &self,
        f: &mut Fwd<'_, T>,
        x: &Tensor<T>,
        skip: &Tensor<T>,
    ) -> Result<(Tensor<T>, DecoderBlockCache<T>)> {
        let cat = concat_channels(&upsample2x(x), skip)?;
        let h = self.conv.forward(f, &cat)?;
        let (h, bn) = self.bn.forward(f, &h)?;
        let out = relu_forward(f, h);
        Ok((out.clone(), DecoderBlockCache { cat, bn, out }))
    }

    /// Returns gradients for the block input and the skip.
    pub fn backward<T: Scalar>(
        &self,
        params: &ParamStore<T>,
        cache: &DecoderBlockCache<T>,
        dout: Tensor<T>,
        grads: &mut Grads<T>,
    ) -> Result<(Tensor<T>, Tensor<T>)> {
        let dh = self.bn.backward(params, &cache.bn, &relu_backward(&cache.out, dout), grads);
        let dcat = self.conv.backward(params, &cache.cat, &dh, grads, true)?.expect("dx requested");
        let (dup, dskip) = split_channels(&dcat, self.up_channels);
        Ok((upsample2x_backward(&dup), dskip))
    }
}

#[derive(Debug, Clone)]
pub struct Decoder {
    blocks: [DecoderBlock; 4],
}

pub struct DecoderCache<T> {
    blocks: Vec<DecoderBlockCache<T>>,
}

impl Decoder {
    pub fn new(reg: &mut Registry, cfg: &ModelConfig) -> Self {
        let ew = cfg.encoder_widths;
        let dw = cfg.decoder_widths;
        // skips consumed deepest first: S4 (layer3), S3, S2, S1 (stem)
        let skip_c = [ew[3], ew[2], ew[1], ew[0]];
        let up_c = [ew[4], dw[0], dw[1], dw[2]];
        let blocks =
            core::array::from_fn(|i| DecoderBlock::new(reg, &format!("decoder.block{i}"), up_c[i], skip_c[i], dw[i]));
        Self { blocks }
    }

    /// `skips` ordered S1..S4; returns the H/2 feature map and per-block outputs' shapes via the cache.
    pub fn forward<T: Scalar>(
        &self,
        f: &mut Fwd<'_, T>,
        bridge_out: &Tensor<T>,
        skips: &[Tensor<T>; 4],
    ) -> Result<(Tensor<T>, DecoderCache<T>)> {
        let mut cur = bridge_out.clone();
        let mut caches = Vec::with_capacity(4);
        for (i, block) in self.blocks.iter().enumerate() {
            let (out, cache) = block.forward(f, &cur, &skips[3 - i])?;
            check_finite(&out.data, &format!("decoder.block{i}"))?;
            caches.push(cache);
            cur = out;
        }
        Ok((cur, DecoderCache { blocks: caches }))
    }

    pub fn block_dims<T>(cache: &DecoderCache<T>) -> Vec<[usize; 4]> {
        cache.blocks.iter().map(|c| [c.out.n, c.out.c, c.out.h, c.out.w]).collect()
    }

    /// Returns the gradient for the bridge output and for S1..S4.
    pub fn backward<T: Scalar>(
        &self,
        params: &ParamStore<T>,
        cache: &DecoderCache<T>,
        dout: Tensor<T>,
        grads: &mut Grads<T>,
    ) -> Result<(Tensor<T>, [Tensor<T>; 4])> {
        let mut d = dout;
        let mut dskips: [Option<Tensor<T>>; 4] = Default::default();
        for (i, (block, bc)) in self.blocks.iter().zip(&cache.blocks).enumerate().rev() {
            let (dx, dskip) = block.backward(params, bc, d, grads)?;
            dskips[3 - i] = Some(dskip);
            d = dx;
        }
        Ok((d, dskips.map(|s| s.expect("every skip receives a gradient"))))
    }
}
