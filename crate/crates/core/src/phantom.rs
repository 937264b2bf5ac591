//! Synthetic CTA phantoms: a trunk vessel that bifurcates into two straight
//! branches, with optional occluded segments and bone decoys.
//!
//! Geometry is hard-edged: a voxel belongs to a tube cross-section when the
//! distance from its integer `(x, y)` centre to the section centre is strictly
//! less than the radius. Noise is additive Gaussian drawn from ChaCha8 seeded
//! with `seed`, where voxel `i = (z * height + y) * width + x` reads the stream
//! from word position `16 * i`, so every voxel's noise is independent of
//! generation order.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{MaskVolume, Volume, VolumeMeta};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intensities {
    pub background: f64,
    pub lumen: f64,
    pub occluded_lumen: f64,
    pub bone: f64,
}

impl Default for Intensities {
    fn default() -> Self {
        Self { background: 40.0, lumen: 350.0, occluded_lumen: 45.0, bone: 900.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskExtent {
    /// Only the trunk above the bifurcation is labelled.
    ToBifurcation,
    /// Trunk and both branches down to the last slice.
    ToEnd,
}

/// A static bone disk present on slices `contact_z_range[0]..contact_z_range[1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoneDecoy {
    pub center_xy: [f64; 2],
    pub radius_px: f64,
    pub contact_z_range: [usize; 2],
}

impl BoneDecoy {
    fn contains(&self, x: f64, y: f64, z: usize) -> bool {
        let [z0, z1] = self.contact_z_range;
        if z < z0 || z >= z1 {
            return false;
        }
        let (dx, dy) = (x - self.center_xy[0], y - self.center_xy[1]);
        dx * dx + dy * dy < self.radius_px * self.radius_px
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub patient_id: String,
    /// (num_slices, height, width)
    pub dims: [usize; 3],
    pub seed: u64,
    pub entry_xy: [f64; 2],
    pub trunk_radius_px: f64,
    pub branch_radius_px: f64,
    pub bifurcation_z: usize,
    pub branch_half_angle_deg: f64,
    pub occlusion_z_range: Option<[usize; 2]>,
    pub bone_decoys: Vec<BoneDecoy>,
    pub intensities: Intensities,
    pub noise_sigma: f64,
    pub mask_extent: MaskExtent,
}

impl PhantomSpec {
    /// Defaults: trunk entering at the slice centre, bifurcating half way down.
    pub fn new(patient_id: impl Into<String>, num_slices: usize, height: usize, width: usize, seed: u64) -> Self {
        Self {
            patient_id: patient_id.into(),
            dims: [num_slices, height, width],
            seed,
            entry_xy: [(width / 2) as f64, (height / 2) as f64],
            trunk_radius_px: 10.0,
            branch_radius_px: 3.0,
            bifurcation_z: num_slices / 2,
            branch_half_angle_deg: 15.0,
            occlusion_z_range: None,
            bone_decoys: Vec::new(),
            intensities: Intensities::default(),
            noise_sigma: 15.0,
            mask_extent: MaskExtent::ToEnd,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [n, h, w] = self.dims;
        let fail = |msg: String| Err(Error::SpecInvalid(msg));
        if n == 0 || h == 0 || w == 0 {
            return fail(alloc::format!("dims must be positive, got {:?}", self.dims));
        }
        if self.bifurcation_z >= n {
            return fail(alloc::format!("bifurcation_z {} outside 0..{n}", self.bifurcation_z));
        }
        if !(self.trunk_radius_px >= 0.0) || !(self.branch_radius_px >= 0.0) {
            return fail("radii must be non-negative".into());
        }
        if !(self.noise_sigma >= 0.0) || !self.branch_half_angle_deg.is_finite() {
            return fail("noise sigma and branch angle must be finite and non-negative".into());
        }
        if let Some([z0, z1]) = self.occlusion_z_range {
            if z0 > z1 || z1 > n {
                return fail(alloc::format!("occlusion range [{z0}, {z1}) outside [0, {n})"));
            }
        }
        for bone in &self.bone_decoys {
            let [z0, z1] = bone.contact_z_range;
            if !(bone.radius_px > 0.0) || z0 > z1 || z1 > n {
                return fail(alloc::format!("bad bone decoy {bone:?}"));
            }
        }
        Ok(())
    }

    pub fn meta(&self) -> VolumeMeta {
        let [n, h, w] = self.dims;
        VolumeMeta::new(self.patient_id.clone(), n, h, w)
    }

    /// Lateral offset of each branch centre from the entry point on slice `z`.
    pub fn branch_offset(&self, z: usize) -> f64 {
        let dz = z.saturating_sub(self.bifurcation_z) as f64;
        self.branch_half_angle_deg.to_radians().tan() * dz
    }

    /// A bone disk that overlaps the right branch by `overlap_px` around the
    /// middle of `z_range`.
    pub fn bone_touching_branch(&self, z_range: [usize; 2], radius_px: f64, overlap_px: f64) -> BoneDecoy {
        let mid = (z_range[0] + z_range[1]) / 2;
        let branch_x = self.entry_xy[0] + self.branch_offset(mid);
        BoneDecoy {
            center_xy: [branch_x + self.branch_radius_px + radius_px - overlap_px, self.entry_xy[1]],
            radius_px,
            contact_z_range: z_range,
        }
    }

    fn in_mask_extent(&self, z: usize) -> bool {
        match self.mask_extent {
            MaskExtent::ToBifurcation => z < self.bifurcation_z,
            MaskExtent::ToEnd => true,
        }
    }

    fn occluded(&self, z: usize) -> bool {
        matches!(self.occlusion_z_range, Some([z0, z1]) if z >= z0 && z < z1)
    }
}

/// One circular tube cross-section on a slice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Section {
    pub x: f64,
    pub y: f64,
    pub radius: f64,
}

impl Section {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.x, y - self.y);
        dx * dx + dy * dy < self.radius * self.radius
    }
}

/// Tube cross-sections on slice `z`: the trunk above the bifurcation, two
/// branches from it onwards.
pub fn centerline_at(spec: &PhantomSpec, z: usize) -> Result<Vec<Section>> {
    let num_slices = spec.dims[0];
    if z >= num_slices {
        return Err(Error::OutOfRange { z, num_slices });
    }
    let [ex, ey] = spec.entry_xy;
    if z < spec.bifurcation_z {
        return Ok(vec![Section { x: ex, y: ey, radius: spec.trunk_radius_px }]);
    }
    let off = spec.branch_offset(z);
    let r = spec.branch_radius_px;
    Ok(vec![Section { x: ex - off, y: ey, radius: r }, Section { x: ex + off, y: ey, radius: r }])
}

/// Renders the phantom volume and its ground-truth mask.
pub fn generate(spec: &PhantomSpec) -> Result<(Volume, MaskVolume)> {
    spec.validate()?;
    let [n, h, w] = spec.dims;
    let mut voxels = vec![0i16; n * h * w];
    let mut mask = vec![0u8; n * h * w];
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let hu = spec.intensities;
    for z in 0..n {
        let sections = centerline_at(spec, z)?;
        let lumen = if spec.occluded(z) { hu.occluded_lumen } else { hu.lumen };
        let labelled = spec.in_mask_extent(z);
        for y in 0..h {
            for x in 0..w {
                let i = (z * h + y) * w + x;
                let (fx, fy) = (x as f64, y as f64);
                let in_bone = spec.bone_decoys.iter().any(|b| b.contains(fx, fy, z));
                let in_vessel = sections.iter().any(|s| s.contains(fx, fy));
                let base = if in_bone {
                    hu.bone
                } else if in_vessel {
                    lumen
                } else {
                    hu.background
                };
                let noise = if spec.noise_sigma > 0.0 {
                    rng.set_word_pos(16 * i as u128);
                    let g: f64 = rng.sample(StandardNormal);
                    g * spec.noise_sigma
                } else {
                    0.0
                };
                voxels[i] = (base + noise).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16;
                mask[i] = u8::from(in_vessel && !in_bone && labelled);
            }
        }
    }
    let meta = spec.meta();
    Ok((Volume::new(meta.clone(), voxels)?, MaskVolume::new(meta, mask)?))
}
