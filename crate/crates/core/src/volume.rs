//! CTA volumes, binary masks and slice normalization.
//!
//! Voxels are stored slice-major: index `(z * height + y) * width + x`, with
//! `z` increasing from the superior (thoracic aorta) end towards the feet.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeMeta {
    pub patient_id: String,
    pub height: usize,
    pub width: usize,
    pub num_slices: usize,
    /// Millimetres per voxel along (x, y, z).
    pub spacing_mm: [f64; 3],
}

impl VolumeMeta {
    pub fn new(patient_id: impl Into<String>, num_slices: usize, height: usize, width: usize) -> Self {
        Self { patient_id: patient_id.into(), height, width, num_slices, spacing_mm: [1.0; 3] }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.num_slices == 0 {
            return Err(Error::InvalidConfig(alloc::format!(
                "volume dims must be positive, got {}x{}x{}",
                self.num_slices,
                self.height,
                self.width
            )));
        }
        if self.spacing_mm.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::InvalidConfig(alloc::format!("spacing must be positive, got {:?}", self.spacing_mm)));
        }
        Ok(())
    }

    pub fn voxel_count(&self) -> usize {
        self.num_slices * self.height * self.width
    }

    pub fn slice_len(&self) -> usize {
        self.height * self.width
    }

    pub fn same_dims(&self, other: &Self) -> bool {
        (self.num_slices, self.height, self.width) == (other.num_slices, other.height, other.width)
    }
}

/// Signed 16-bit HU voxels.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub meta: VolumeMeta,
    pub voxels: Vec<i16>,
}

impl Volume {
    pub fn new(meta: VolumeMeta, voxels: Vec<i16>) -> Result<Self> {
        meta.validate()?;
        if voxels.len() != meta.voxel_count() {
            return Err(Error::SizeMismatch(alloc::format!(
                "{} voxels for {} expected",
                voxels.len(),
                meta.voxel_count()
            )));
        }
        Ok(Self { meta, voxels })
    }

    pub fn slice(&self, z: usize) -> &[i16] {
        let len = self.meta.slice_len();
        &self.voxels[z * len..(z + 1) * len]
    }
}

/// Binary {0, 1} voxel labels.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskVolume {
    pub meta: VolumeMeta,
    pub voxels: Vec<u8>,
}

impl MaskVolume {
    pub fn new(meta: VolumeMeta, voxels: Vec<u8>) -> Result<Self> {
        meta.validate()?;
        if voxels.len() != meta.voxel_count() {
            return Err(Error::SizeMismatch(alloc::format!(
                "{} mask voxels for {} expected",
                voxels.len(),
                meta.voxel_count()
            )));
        }
        if let Some((index, &value)) = voxels.iter().enumerate().find(|(_, v)| **v > 1) {
            return Err(Error::InvalidLabel { index, value });
        }
        Ok(Self { meta, voxels })
    }

    pub fn empty(meta: VolumeMeta) -> Self {
        let n = meta.voxel_count();
        Self { meta, voxels: alloc::vec![0; n] }
    }

    pub fn slice(&self, z: usize) -> &[u8] {
        let len = self.meta.slice_len();
        &self.voxels[z * len..(z + 1) * len]
    }

    pub fn count(&self) -> usize {
        self.voxels.iter().map(|v| *v as usize).sum()
    }
}

/// Intensity window mapped linearly onto [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HuWindow {
    pub lo: f64,
    pub hi: f64,
}

impl HuWindow {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi) {
            return Err(Error::InvalidConfig(alloc::format!("HU window needs lo < hi, got [{lo}, {hi}]")));
        }
        Ok(Self { lo, hi })
    }

    #[inline]
    pub fn apply(&self, v: f64) -> f64 {
        ((v - self.lo) / (self.hi - self.lo)).clamp(0.0, 1.0)
    }

    /// Grey level in 0..=255, used for overlays.
    pub fn grey(&self, v: i16) -> u8 {
        (self.apply(v as f64) * 255.0).round() as u8
    }
}

impl Default for HuWindow {
    /// Soft tissue through contrast-enhanced lumen and calcification.
    fn default() -> Self {
        Self { lo: -100.0, hi: 900.0 }
    }
}

/// `clamp((v - lo) / (hi - lo), 0, 1)` per voxel.
pub fn normalize_slice<T: Scalar>(slice: &[i16], window: &HuWindow) -> Vec<T> {
    slice.iter().map(|v| T::from_f64_lossy(window.apply(*v as f64))).collect()
}

/// Three identical channels of a normalized slice, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput<T> {
    pub height: usize,
    pub width: usize,
    pub values: Vec<T>,
}

impl<T: Scalar> ModelInput<T> {
    pub const CHANNELS: usize = 3;

    pub fn channel(&self, c: usize) -> &[T] {
        let len = self.height * self.width;
        &self.values[c * len..(c + 1) * len]
    }
}

/// Replicates a normalized grey slice into the three input channels.
pub fn to_model_input<T: Scalar>(norm_slice: &[T], height: usize, width: usize) -> Result<ModelInput<T>> {
    if norm_slice.len() != height * width {
        return Err(Error::DimensionMismatch(alloc::format!(
            "{} values for a {height}x{width} slice",
            norm_slice.len()
        )));
    }
    if norm_slice.iter().any(|v| !(*v >= T::zero() && *v <= T::one())) {
        return Err(Error::InvalidConfig("model input values must lie in [0, 1]".into()));
    }
    let mut values = Vec::with_capacity(3 * norm_slice.len());
    for _ in 0..ModelInput::<T>::CHANNELS {
        values.extend_from_slice(norm_slice);
    }
    Ok(ModelInput { height, width, values })
}

/// Stacks equally sized inputs into an `(n, 3, h, w)` batch.
pub fn stack_inputs<T: Scalar>(inputs: &[ModelInput<T>]) -> Result<Tensor<T>> {
    let first = inputs.first().ok_or(Error::EmptyDataset)?;
    let (h, w) = (first.height, first.width);
    let mut data = Vec::with_capacity(inputs.len() * 3 * h * w);
    for inp in inputs {
        if (inp.height, inp.width) != (h, w) {
            return Err(Error::DimensionMismatch("inputs in a batch differ in size".into()));
        }
        data.extend_from_slice(&inp.values);
    }
    Tensor::from_vec(inputs.len(), 3, h, w, data)
}

/// Builds the model input tensor for a set of slices of one volume.
pub fn slices_to_batch<T: Scalar>(volume: &Volume, zs: &[usize], window: &HuWindow) -> Result<Tensor<T>> {
    let (h, w) = (volume.meta.height, volume.meta.width);
    let inputs = zs
        .iter()
        .map(|&z| to_model_input(&normalize_slice::<T>(volume.slice(z), window), h, w))
        .collect::<Result<Vec<_>>>()?;
    stack_inputs(&inputs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn normalize_endpoints_midpoint_and_clamp() {
        let win = HuWindow::new(-100.0, 900.0).unwrap();
        let out: Vec<f64> = normalize_slice(&[-100, 900, 400, 1400, -3000], &win);
        assert_eq!(out, vec![0.0, 1.0, 0.5, 1.0, 0.0]);
    }

    #[test]
    fn window_requires_order() {
        assert!(HuWindow::new(5.0, 5.0).is_err());
    }

    #[test]
    fn model_input_replicates_channels() {
        let inp = to_model_input(&[0.5f32; 6], 2, 3).unwrap();
        assert_eq!(inp.values.len(), 18);
        assert_eq!(inp.channel(0), inp.channel(1));
        assert_eq!(inp.channel(1), inp.channel(2));
        assert!(inp.values.iter().all(|v| *v == 0.5));
    }

    #[test]
    fn full_resolution_input_shape() {
        let inp = to_model_input(&vec![0.25f32; 512 * 512], 512, 512).unwrap();
        let t = stack_inputs(&[inp]).unwrap();
        assert_eq!(t.dims(), [1, 3, 512, 512]);
    }

    #[test]
    fn mask_rejects_label_two() {
        let meta = VolumeMeta::new("p", 1, 2, 2);
        assert_eq!(MaskVolume::new(meta, vec![0, 1, 2, 0]), Err(Error::InvalidLabel { index: 2, value: 2 }));
    }

    #[test]
    fn volume_rejects_wrong_count() {
        let meta = VolumeMeta::new("p", 2, 2, 2);
        assert!(matches!(Volume::new(meta, vec![0; 7]), Err(Error::SizeMismatch(_))));
    }
}
