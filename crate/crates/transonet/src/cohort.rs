//! Seeded families of phantom patients for the phantom studies.
//!
//! Every patient gets its own geometry (entry point, radii, bifurcation depth,
//! branch angle) and noise seed, drawn from one ChaCha8 stream per cohort so a
//! cohort is fully determined by `(kind, count, size, seed)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use transonet_core::phantom::{MaskExtent, PhantomSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CohortKind {
    /// Clean phantoms, only the trunk above the bifurcation labelled.
    TrunkOnly,
    /// Trunk and thin branches to the last slice; some patients carry an
    /// occluded segment or a bone disk touching a branch.
    FullExtent,
    /// Full extent, every patient occluded, no bone.
    Occluded,
}

/// Per-patient geometry drawn around the phantom defaults.
fn base_spec(id: String, size: usize, rng: &mut ChaCha8Rng) -> PhantomSpec {
    let mut spec = PhantomSpec::new(id, size, size, size, rng.random());
    let c = size as f64 / 2.0;
    let jitter = size as f64 / 12.0;
    spec.entry_xy = [c + rng.random_range(-jitter..jitter), c + rng.random_range(-jitter..jitter)];
    spec.trunk_radius_px = rng.random_range(8.0..12.0) * size as f64 / 64.0;
    spec.branch_radius_px = rng.random_range(2.5..3.5);
    spec.bifurcation_z = rng.random_range(size * 3 / 8..size * 5 / 8);
    spec.branch_half_angle_deg = rng.random_range(10.0..20.0);
    spec
}

fn add_occlusion(spec: &mut PhantomSpec, rng: &mut ChaCha8Rng) {
    let n = spec.dims[0];
    let len = rng.random_range(n / 16..n / 8).max(1);
    let z0 = rng.random_range(n / 4..n - n / 4 - len);
    spec.occlusion_z_range = Some([z0, z0 + len]);
}

fn add_bone(spec: &mut PhantomSpec, rng: &mut ChaCha8Rng) {
    let n = spec.dims[0];
    let below = n - spec.bifurcation_z;
    let z0 = spec.bifurcation_z + rng.random_range(below / 4..below / 2);
    let z1 = (z0 + rng.random_range(n / 16..n / 8).max(2)).min(n);
    let radius = rng.random_range(4.0..7.0) * spec.dims[1] as f64 / 64.0;
    let bone = spec.bone_touching_branch([z0, z1], radius, 1.5);
    spec.bone_decoys.push(bone);
}

/// `count` phantom specs named `{prefix}{index:02}`.
pub fn cohort(kind: CohortKind, prefix: &str, count: usize, size: usize, seed: u64) -> Vec<PhantomSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let mut spec = base_spec(format!("{prefix}{i:02}"), size, &mut rng);
            // decide every optional feature up front so the stream position
            // does not depend on earlier patients' choices
            let (occlude, bone): (bool, bool) = (rng.random(), rng.random());
            match kind {
                CohortKind::TrunkOnly => spec.mask_extent = MaskExtent::ToBifurcation,
                CohortKind::FullExtent => {
                    if occlude {
                        add_occlusion(&mut spec, &mut rng);
                    }
                    if bone {
                        add_bone(&mut spec, &mut rng);
                    }
                }
                CohortKind::Occluded => add_occlusion(&mut spec, &mut rng),
            }
            spec
        })
        .collect()
}

/// A full-extent phantom with a bone disk pressed against the right branch,
/// for the bone-merge comparison. The disk is large enough that the merged
/// region is over four times the two-branch area of the slice above.
pub fn bone_contact_spec(id: &str, size: usize, seed: u64) -> PhantomSpec {
    let mut spec = PhantomSpec::new(id, size, size, size, seed);
    spec.trunk_radius_px = 10.0 * size as f64 / 64.0;
    spec.bifurcation_z = size / 2;
    let n = size;
    let z0 = n / 2 + n / 8;
    spec.bone_decoys.push(spec.bone_touching_branch([z0, z0 + n / 8], 9.0 * size as f64 / 64.0, 2.0));
    spec
}
