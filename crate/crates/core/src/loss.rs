//! Training loss (binary cross-entropy plus soft Jaccard) and overlap metrics.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::volume::MaskVolume;

/// Probabilities are clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]` inside the BCE term.
pub const BCE_CLAMP: f64 = 1e-7;
/// Default additive smoothing of the soft Jaccard ratio.
pub const JACCARD_EPS: f64 = 1.0;

fn check_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::ShapeMismatch(alloc::format!("{a} predictions vs {b} targets")));
    }
    Ok(())
}

/// Mean of `-[y ln p + (1 - y) ln(1 - p)]` over all elements.
pub fn bce_loss<T: Scalar>(p: &[T], y: &[T]) -> Result<f64> {
    check_len(p.len(), y.len())?;
    if p.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = p
        .iter()
        .zip(y)
        .map(|(p, y)| {
            let p = p.as_f64().clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            let y = y.as_f64();
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum();
    Ok(sum / p.len() as f64)
}

struct JaccardSums {
    inter: f64,
    sum_p: f64,
    sum_y: f64,
}

fn jaccard_sums<T: Scalar>(p: &[T], y: &[T]) -> JaccardSums {
    let mut s = JaccardSums { inter: 0.0, sum_p: 0.0, sum_y: 0.0 };
    for (p, y) in p.iter().zip(y) {
        let (p, y) = (p.as_f64(), y.as_f64());
        s.inter += p * y;
        s.sum_p += p;
        s.sum_y += y;
    }
    s
}

/// `1 - (sum p*y + eps) / (sum p + sum y - sum p*y + eps)` over the whole batch.
pub fn soft_jaccard_loss<T: Scalar>(p: &[T], y: &[T], eps: f64) -> Result<f64> {
    check_len(p.len(), y.len())?;
    let s = jaccard_sums(p, y);
    let union = s.sum_p + s.sum_y - s.inter;
    Ok(1.0 - (s.inter + eps) / (union + eps))
}

/// Unit-weighted sum of [`bce_loss`] and [`soft_jaccard_loss`].
pub fn bcej_loss<T: Scalar>(p: &[T], y: &[T]) -> Result<f64> {
    Ok(bce_loss(p, y)? + soft_jaccard_loss(p, y, JACCARD_EPS)?)
}

/// BCEJ value together with its gradient with respect to `p`.
///
/// Where the BCE clamp is active the BCE term contributes no gradient.
pub fn bcej_loss_and_grad<T: Scalar>(p: &[T], y: &[T], eps: f64) -> Result<(f64, Vec<T>)> {
    check_len(p.len(), y.len())?;
    if p.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let loss = bce_loss(p, y)? + soft_jaccard_loss(p, y, eps)?;
    let s = jaccard_sums(p, y);
    let union_e = s.sum_p + s.sum_y - s.inter + eps;
    let inter_e = s.inter + eps;
    let inv_n = 1.0 / p.len() as f64;
    let grad = p
        .iter()
        .zip(y)
        .map(|(pv, yv)| {
            let (pr, y) = (pv.as_f64(), yv.as_f64());
            let bce = if (BCE_CLAMP..=1.0 - BCE_CLAMP).contains(&pr) {
                (-y / pr + (1.0 - y) / (1.0 - pr)) * inv_n
            } else {
                0.0
            };
            let jac = -(y * union_e - inter_e * (1.0 - y)) / (union_e * union_e);
            T::from_f64_lossy(bce + jac)
        })
        .collect();
    Ok((loss, grad))
}

/// 1 where `p >= threshold`, else 0.
pub fn binarize<T: Scalar>(p: &[T], threshold: f64) -> Vec<u8> {
    p.iter().map(|v| u8::from(v.as_f64() >= threshold)).collect()
}

/// What a metric reports when prediction and ground truth are both empty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmptyPolicy {
    /// Correctly predicting absence scores 1.0.
    #[default]
    Perfect,
    /// Report NaN; aggregates skip such entries.
    Skip,
}

/// Cardinalities of a prediction/ground-truth pair.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Overlap {
    pub pred: u64,
    pub truth: u64,
    pub inter: u64,
}

impl Overlap {
    pub fn of(pred: &[u8], truth: &[u8]) -> Result<Self> {
        check_len(pred.len(), truth.len())?;
        let mut o = Self::default();
        for (p, t) in pred.iter().zip(truth) {
            let (p, t) = (*p != 0, *t != 0);
            o.pred += p as u64;
            o.truth += t as u64;
            o.inter += (p && t) as u64;
        }
        Ok(o)
    }

    pub fn merge(&mut self, other: Overlap) {
        self.pred += other.pred;
        self.truth += other.truth;
        self.inter += other.inter;
    }

    pub fn union(&self) -> u64 {
        self.pred + self.truth - self.inter
    }

    fn empty_value(policy: EmptyPolicy) -> f64 {
        match policy {
            EmptyPolicy::Perfect => 1.0,
            EmptyPolicy::Skip => f64::NAN,
        }
    }

    pub fn iou_with(&self, policy: EmptyPolicy) -> f64 {
        match self.union() {
            0 => Self::empty_value(policy),
            u => self.inter as f64 / u as f64,
        }
    }

    pub fn dice_with(&self, policy: EmptyPolicy) -> f64 {
        match self.pred + self.truth {
            0 => Self::empty_value(policy),
            s => 2.0 * self.inter as f64 / s as f64,
        }
    }

    pub fn iou(&self) -> f64 {
        self.iou_with(EmptyPolicy::Perfect)
    }

    pub fn dice(&self) -> f64 {
        self.dice_with(EmptyPolicy::Perfect)
    }
}

/// `|P ∩ G| / |P ∪ G|`, 1.0 when both are empty.
pub fn iou_metric(pred: &[u8], gt: &[u8]) -> Result<f64> {
    Ok(Overlap::of(pred, gt)?.iou())
}

/// `2 |P ∩ G| / (|P| + |G|)`, 1.0 when both are empty.
pub fn dice_metric(pred: &[u8], gt: &[u8]) -> Result<f64> {
    Ok(Overlap::of(pred, gt)?.dice())
}

fn volume_overlap(pred: &MaskVolume, gt: &MaskVolume) -> Result<Overlap> {
    if !pred.meta.same_dims(&gt.meta) {
        return Err(Error::DimensionMismatch(alloc::format!(
            "prediction {}x{}x{} vs truth {}x{}x{}",
            pred.meta.num_slices,
            pred.meta.height,
            pred.meta.width,
            gt.meta.num_slices,
            gt.meta.height,
            gt.meta.width
        )));
    }
    Overlap::of(&pred.voxels, &gt.voxels)
}

/// Dice over every voxel of the volume at once.
pub fn patient_dice(pred: &MaskVolume, gt: &MaskVolume) -> Result<f64> {
    Ok(volume_overlap(pred, gt)?.dice())
}

pub fn patient_iou(pred: &MaskVolume, gt: &MaskVolume) -> Result<f64> {
    Ok(volume_overlap(pred, gt)?.iou())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientMetrics {
    pub patient_id: String,
    pub dice: f64,
    pub iou: f64,
    pub n_slices: usize,
}

impl PatientMetrics {
    pub fn compute(pred: &MaskVolume, gt: &MaskVolume) -> Result<Self> {
        let o = volume_overlap(pred, gt)?;
        Ok(Self { patient_id: gt.meta.patient_id.clone(), dice: o.dice(), iou: o.iou(), n_slices: gt.meta.num_slices })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_patient: Vec<PatientMetrics>,
    pub mean_dice: f64,
    pub mean_iou: f64,
    pub seed: u64,
    pub config_sha256: String,
}

fn mean_finite(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.filter(|v| v.is_finite()).fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

impl MetricsReport {
    pub fn from_entries(per_patient: Vec<PatientMetrics>, seed: u64, config_sha256: String) -> Self {
        let mean_dice = mean_finite(per_patient.iter().map(|p| p.dice));
        let mean_iou = mean_finite(per_patient.iter().map(|p| p.iou));
        Self { per_patient, mean_dice, mean_iou, seed, config_sha256 }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::VolumeMeta;
    use alloc::vec;
    use core::f64::consts::LN_2;
    use proptest::prelude::*;

    #[test]
    fn bce_examples() {
        assert!((bce_loss(&[0.5f64; 4], &[1.0, 0.0, 1.0, 1.0]).unwrap() - LN_2).abs() < 1e-12);
        let exact = bce_loss(&[1.0f64, 0.0], &[1.0, 0.0]).unwrap();
        assert!((exact - 1e-7).abs() < 1e-12);
        assert!((bce_loss(&[0.9f64], &[1.0]).unwrap() - 0.105_360_515_657_826_3).abs() < 1e-12);
    }

    #[test]
    fn jaccard_examples() {
        assert_eq!(soft_jaccard_loss(&[1.0f64, 0.0, 1.0], &[1.0, 0.0, 1.0], 1.0).unwrap(), 0.0);
        let j = soft_jaccard_loss(&vec![0.5f64; 1000], &vec![1.0; 1000], 1.0).unwrap();
        assert!((j - (1.0 - 501.0 / 1001.0)).abs() < 1e-12);
        assert_eq!(soft_jaccard_loss(&[0.0f64; 5], &[0.0; 5], 1.0).unwrap(), 0.0);
    }

    #[test]
    fn bcej_examples() {
        let l = bcej_loss(&vec![0.5f64; 1000], &vec![1.0; 1000]).unwrap();
        assert!((l - (LN_2 + 1.0 - 501.0 / 1001.0)).abs() < 1e-12);
        let l = bcej_loss(&[1.0f64, 0.0], &[1.0, 0.0]).unwrap();
        assert!((l - 1e-7).abs() < 1e-12);
    }

    #[test]
    fn binarize_threshold_inclusive() {
        assert_eq!(binarize(&[0.5f64, 0.4999, 1.0, 0.0], 0.5), vec![1, 0, 1, 0]);
    }

    #[test]
    fn metric_examples() {
        let gt = [1u8, 1, 0, 0];
        assert_eq!(iou_metric(&gt, &gt).unwrap(), 1.0);
        assert_eq!(dice_metric(&gt, &gt).unwrap(), 1.0);
        assert_eq!(iou_metric(&[0, 0, 1, 1], &gt).unwrap(), 0.0);
        assert!((iou_metric(&[0, 1, 1, 0], &gt).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(dice_metric(&[0, 1, 1, 0], &gt).unwrap(), 0.5);
        assert_eq!(dice_metric(&[0, 0], &[0, 0]).unwrap(), 1.0);
        assert!(Overlap::default().dice_with(EmptyPolicy::Skip).is_nan());
        assert!(dice_metric(&[0], &[0, 1]).is_err());
    }

    #[test]
    fn patient_dice_example() {
        let meta = VolumeMeta::new("p", 4, 16, 16);
        let mut gt = vec![0u8; 1024];
        let mut pred = vec![0u8; 1024];
        gt[..100].iter_mut().for_each(|v| *v = 1);
        pred[10..110].iter_mut().for_each(|v| *v = 1);
        let gt = MaskVolume::new(meta.clone(), gt).unwrap();
        let pred = MaskVolume::new(meta.clone(), pred).unwrap();
        assert!((patient_dice(&pred, &gt).unwrap() - 0.9).abs() < 1e-15);
        assert_eq!(patient_dice(&MaskVolume::empty(meta.clone()), &gt).unwrap(), 0.0);
        let other = MaskVolume::empty(VolumeMeta::new("q", 3, 16, 16));
        assert!(matches!(patient_dice(&other, &gt), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn report_means() {
        let mk = |d, i| PatientMetrics { patient_id: "x".into(), dice: d, iou: i, n_slices: 1 };
        let r = MetricsReport::from_entries(vec![mk(1.0, 1.0), mk(0.5, 0.25)], 3, String::new());
        assert_eq!(r.mean_dice, 0.75);
        assert_eq!(r.mean_iou, 0.625);
    }

    #[test]
    fn grad_matches_difference() {
        let p = [0.2f64, 0.7, 0.55, 0.01, 0.9];
        let y = [0.0f64, 1.0, 1.0, 0.0, 0.0];
        let (_, g) = bcej_loss_and_grad(&p, &y, 1.0).unwrap();
        for i in 0..p.len() {
            let mut a = p;
            a[i] += 1e-6;
            let mut b = p;
            b[i] -= 1e-6;
            let fd = (bcej_loss(&a, &y).unwrap() - bcej_loss(&b, &y).unwrap()) / 2e-6;
            assert!((fd - g[i]).abs() < 1e-7, "{i}: {fd} vs {}", g[i]);
        }
    }

    fn masks() -> impl Strategy<Value = (Vec<u8>, Vec<u8>)> {
        (1usize..64).prop_flat_map(|n| (prop::collection::vec(0u8..2, n), prop::collection::vec(0u8..2, n)))
    }

    proptest! {
        #[test]
        fn metrics_symmetric_and_bounded((a, b) in masks()) {
            let d = dice_metric(&a, &b).unwrap();
            let i = iou_metric(&a, &b).unwrap();
            prop_assert_eq!(d, dice_metric(&b, &a).unwrap());
            prop_assert_eq!(i, iou_metric(&b, &a).unwrap());
            prop_assert!((0.0..=1.0).contains(&d) && (0.0..=1.0).contains(&i));
            prop_assert!((d - 2.0 * i / (1.0 + i)).abs() < 1e-12);
        }

        #[test]
        fn binarized_jaccard_tracks_iou((a, b) in masks(), eps in 1e-9f64..1e-3) {
            let p: Vec<f64> = a.iter().map(|v| *v as f64).collect();
            let y: Vec<f64> = b.iter().map(|v| *v as f64).collect();
            let o = Overlap::of(&a, &b).unwrap();
            prop_assume!(o.union() > 0);
            let soft = soft_jaccard_loss(&p, &y, eps).unwrap();
            let hard = 1.0 - o.iou();
            prop_assert!((soft - hard).abs() <= eps / o.union() as f64 + 1e-15);
        }

        #[test]
        fn losses_finite_and_non_negative(
            pairs in prop::collection::vec((0.0f64..=1.0, 0u8..2), 1..50)
        ) {
            let p: Vec<f64> = pairs.iter().map(|v| v.0).collect();
            let y: Vec<f64> = pairs.iter().map(|v| v.1 as f64).collect();
            let (l, g) = bcej_loss_and_grad(&p, &y, 1.0).unwrap();
            prop_assert!(l.is_finite() && l >= 0.0);
            prop_assert!(l >= soft_jaccard_loss(&p, &y, 1.0).unwrap());
            prop_assert!(g.iter().all(|v| v.is_finite()));
        }
    }
}
