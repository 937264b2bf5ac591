//! ResNet-34 style residual encoder with four skip taps.

use alloc::format;
use alloc::vec::Vec;

use super::layers::{max_pool_forward, relu_backward, relu_forward, BatchNorm, Conv, Fwd};
use super::params::{Grads, ParamStore, Registry};
use super::ModelConfig;
use crate::error::Result;
use crate::nn::conv::ConvGeometry;
use crate::nn::norm::BatchNormCache;
use crate::nn::pool::max_pool2d_backward;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// conv3x3(stride) - BN - ReLU - conv3x3 - BN, plus identity or 1x1
/// projection shortcut, then ReLU.
#[derive(Debug, Clone)]
pub struct BasicBlock {
    conv1: Conv,
    bn1: BatchNorm,
    conv2: Conv,
    bn2: BatchNorm,
    downsample: Option<(Conv, BatchNorm)>,
}

pub struct BlockCache<T> {
    x: Tensor<T>,
    bn1: BatchNormCache<T>,
    a1: Tensor<T>,
    bn2: BatchNormCache<T>,
    down_bn: Option<BatchNormCache<T>>,
    out: Tensor<T>,
}

impl BasicBlock {
    pub fn new(reg: &mut Registry, prefix: &str, in_c: usize, out_c: usize, stride: usize) -> Self {
        let conv1 = Conv::new(reg, &format!("{prefix}.conv1"), ConvGeometry::new(in_c, out_c, 3, stride, 1), false);
        let bn1 = BatchNorm::new(reg, &format!("{prefix}.bn1"), out_c);
        let conv2 = Conv::new(reg, &format!("{prefix}.conv2"), ConvGeometry::new(out_c, out_c, 3, 1, 1), false);
        let bn2 = BatchNorm::new(reg, &format!("{prefix}.bn2"), out_c);
        let downsample = (stride != 1 || in_c != out_c).then(|| {
            (
                Conv::new(
                    reg,
                    &format!("{prefix}.downsample.conv"),
                    ConvGeometry::new(in_c, out_c, 1, stride, 0),
                    false,
                ),
                BatchNorm::new(reg, &format!("{prefix}.downsample.bn"), out_c),
            )
        });
        Self { conv1, bn1, conv2, bn2, downsample }
    }

    pub fn forward<T: Scalar>(&self, f: &mut Fwd<'_, T>, x: Tensor<T>) -> Result<(Tensor<T>, BlockCache<T>)> {
        let h1 = self.conv1.forward(f, &x)?;
        let (h1, bn1) = self.bn1.forward(f, &h1)?;
        let a1 = relu_forward(f, h1);
        let h2 = self.conv2.forward(f, &a1)?;
        let (mut sum, bn2) = self.bn2.forward(f, &h2)?;
        let down_bn = match &self.downsample {
            Some((conv, bn)) => {
                let s = conv.forward(f, &x)?;
                let (s, cache) = bn.forward(f, &s)?;
                sum.add_assign(&s)?;
                Some(cache)
            }
            None => {
                sum.add_assign(&x)?;
                None
            }
        };
        let out = relu_forward(f, sum);
        Ok((out.clone(), BlockCache { x, bn1, a1, bn2, down_bn, out }))
    }

    pub fn backward<T: Scalar>(
        &self,
        params: &ParamStore<T>,
        cache: &BlockCache<T>,
        dout: Tensor<T>,
        grads: &mut Grads<T>,
    ) -> Result<Tensor<T>> {
        let dsum = relu_backward(&cache.out, dout);
        let dh2 = self.bn2.backward(params, &cache.bn2, &dsum, grads);
        let da1 = self.conv2.backward(params, &cache.a1, &dh2, grads, true)?.expect("dx requested");
        let dh1 = self.bn1.backward(params, &cache.bn1, &relu_backward(&cache.a1, da1), grads);
        let mut dx = self.conv1.backward(params, &cache.x, &dh1, grads, true)?.expect("dx requested");
        match (&self.downsample, &cache.down_bn) {
            (Some((conv, bn)), Some(bn_cache)) => {
                let ds = bn.backward(params, bn_cache, &dsum, grads);
                let dshort = conv.backward(params, &cache.x, &ds, grads, true)?.expect("dx requested");
                dx.add_assign(&dshort)?;
            }
            _ => dx.add_assign(&dsum)?,
        }
        Ok(dx)
    }
}

/// Outputs of the encoder.
pub struct EncoderOutput<T> {
    pub bridge_in: Tensor<T>,
    /// S1 (stem, H/2), S2 (layer1, H/4), S3 (layer2, H/8), S4 (layer3, H/16).
    pub skips: [Tensor<T>; 4],
}

pub struct EncoderCache<T> {
    input: Tensor<T>,
    stem_bn: BatchNormCache<T>,
    s1: Tensor<T>,
    pool_argmax: Vec<u32>,
    stages: [Vec<BlockCache<T>>; 4],
}

#[derive(Debug, Clone)]
pub struct Encoder {
    stem_conv: Conv,
    stem_bn: BatchNorm,
    stages: [Vec<BasicBlock>; 4],
}

impl Encoder {
    pub fn new(reg: &mut Registry, cfg: &ModelConfig) -> Self {
        let w = cfg.encoder_widths;
        let stem_conv = Conv::new(reg, "encoder.stem.conv", ConvGeometry::new(cfg.in_channels, w[0], 7, 2, 3), false);
        let stem_bn = BatchNorm::new(reg, "encoder.stem.bn", w[0]);
        let stages = core::array::from_fn(|s| {
            let (in_c, out_c) = (w[s], w[s + 1]);
            (0..cfg.encoder_block_counts[s])
                .map(|b| {
                    let stride = if s > 0 && b == 0 { 2 } else { 1 };
                    let block_in = if b == 0 { in_c } else { out_c };
                    BasicBlock::new(reg, &format!("encoder.layer{}.block{b}", s + 1), block_in, out_c, stride)
                })
                .collect()
        });
        Self { stem_conv, stem_bn, stages }
    }

    pub fn forward<T: Scalar>(&self, f: &mut Fwd<'_, T>, x: &Tensor<T>) -> Result<(EncoderOutput<T>, EncoderCache<T>)> {
        let h = self.stem_conv.forward(f, x)?;
        let (h, stem_bn) = self.stem_bn.forward(f, &h)?;
        let s1 = relu_forward(f, h);
        let (mut cur, pool_argmax) = max_pool_forward(f, &s1, 3, 2, 1)?;
        let mut taps: Vec<Tensor<T>> = Vec::with_capacity(4);
        let mut caches: [Vec<BlockCache<T>>; 4] = Default::default();
        for (stage, blocks) in self.stages.iter().enumerate() {
            for block in blocks {
                let (out, cache) = block.forward(f, cur)?;
                caches[stage].push(cache);
                cur = out;
            }
            if stage < 3 {
                taps.push(cur.clone());
            }
        }
        let mut taps = taps.into_iter();
        let skips = [s1.clone(), taps.next().unwrap(), taps.next().unwrap(), taps.next().unwrap()];
        let cache = EncoderCache { input: x.clone(), stem_bn, s1, pool_argmax, stages: caches };
        Ok((EncoderOutput { bridge_in: cur, skips }, cache))
    }

    /// `dskips` are the gradients reaching S1..S4 from the decoder.
    pub fn backward<T: Scalar>(
        &self,
        params: &ParamStore<T>,
        cache: &EncoderCache<T>,
        dbridge_in: Tensor<T>,
        dskips: [Tensor<T>; 4],
        grads: &mut Grads<T>,
    ) -> Result<()> {
        let [ds1, ds2, ds3, ds4] = dskips;
        // gradient reaching the output of stages 0..3 from the decoder
        let taps = [&ds2, &ds3, &ds4];
        let mut d = dbridge_in;
        for stage in (0..4).rev() {
            if stage < 3 {
                d.add_assign(taps[stage])?;
            }
            for (block, bc) in self.stages[stage].iter().zip(&cache.stages[stage]).rev() {
                d = block.backward(params, bc, d, grads)?;
            }
        }
        let mut ds = max_pool2d_backward(cache.s1.dims(), &cache.pool_argmax, &d);
        ds.add_assign(&ds1)?;
        let dh = self.stem_bn.backward(params, &cache.stem_bn, &relu_backward(&cache.s1, ds), grads);
        self.stem_conv.backward(params, &cache.input, &dh, grads, false)?;
        Ok(())
    }
}
