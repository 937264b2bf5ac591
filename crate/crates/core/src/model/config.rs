use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture hyper-parameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Square input side in pixels; a multiple of 32.
    pub input_hw: usize,
    pub in_channels: usize,
    /// Stem width followed by the widths of the four residual stages.
    pub encoder_widths: [usize; 5],
    pub encoder_block_counts: [usize; 4],
    /// Transformer layers in the bridge; 0 bypasses the bridge entirely.
    pub bridge_layers: usize,
    pub d_model: usize,
    pub num_heads: usize,
    pub mlp_ratio: usize,
    pub decoder_widths: [usize; 4],
    pub out_channels: usize,
}

impl ModelConfig {
    /// Full-width ResNet-34 encoder with the default bridge.
    pub fn new(input_hw: usize) -> Self {
        Self {
            input_hw,
            in_channels: 3,
            encoder_widths: [64, 64, 128, 256, 512],
            encoder_block_counts: [3, 4, 6, 3],
            bridge_layers: 4,
            d_model: 512,
            num_heads: 8,
            mlp_ratio: 2,
            decoder_widths: [256, 128, 64, 32],
            out_channels: 1,
        }
    }

    /// Every channel width (and `d_model`) divided by `divisor`.
    pub fn scaled(input_hw: usize, divisor: usize) -> Self {
        let base = Self::new(input_hw);
        Self {
            encoder_widths: base.encoder_widths.map(|w| (w / divisor).max(1)),
            decoder_widths: base.decoder_widths.map(|w| (w / divisor).max(1)),
            d_model: (base.d_model / divisor).max(1),
            ..base
        }
    }

    /// The small double-precision gradient-check configuration.
    pub fn tiny() -> Self {
        Self { bridge_layers: 1, d_model: 32, num_heads: 2, ..Self::scaled(32, 8) }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: alloc::string::String| Err(Error::InvalidConfig(msg));
        if self.input_hw == 0 || !self.input_hw.is_multiple_of(32) {
            return fail(alloc::format!("input_hw {} is not a positive multiple of 32", self.input_hw));
        }
        if self.in_channels != 3 {
            return fail(alloc::format!("in_channels must be 3, got {}", self.in_channels));
        }
        if self.out_channels != 1 {
            return fail(alloc::format!("out_channels must be 1, got {}", self.out_channels));
        }
        if self.encoder_widths.contains(&0) || self.decoder_widths.contains(&0) {
            return fail("channel widths must be positive".into());
        }
        if self.encoder_block_counts.contains(&0) {
            return fail("every residual stage needs at least one block".into());
        }
        if self.bridge_layers > 0 {
            if self.num_heads == 0 || !self.d_model.is_multiple_of(self.num_heads) {
                return fail(alloc::format!("d_model {} not divisible by num_heads {}", self.d_model, self.num_heads));
            }
            if self.mlp_ratio == 0 {
                return fail("mlp_ratio must be positive".into());
            }
        }
        Ok(())
    }

    /// Side of the bridge feature map (`input_hw / 32`).
    pub fn bridge_hw(&self) -> usize {
        self.input_hw / 32
    }

    pub fn bridge_tokens(&self) -> usize {
        self.bridge_hw() * self.bridge_hw()
    }
}
