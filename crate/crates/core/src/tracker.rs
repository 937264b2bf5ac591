//! Intensity-window object tracking, slice to slice.
//!
//! The region on slice `z` is every in-window connected component that
//! overlaps the region of slice `z - 1`. Once a slice comes back empty the
//! object is lost for good: later slices are never re-acquired.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{MaskVolume, Volume};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Connectivity {
    Four,
    Eight,
}

impl Connectivity {
    pub fn from_count(n: u8) -> Result<Self> {
        match n {
            4 => Ok(Self::Four),
            8 => Ok(Self::Eight),
            _ => Err(Error::InvalidConfig(format!("connectivity must be 4 or 8, got {n}"))),
        }
    }

    fn offsets(self) -> &'static [(isize, isize)] {
        const FOUR: [(isize, isize); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];
        const EIGHT: [(isize, isize); 8] = [(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)];
        match self {
            Self::Four => &FOUR,
            Self::Eight => &EIGHT,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackerConfig {
    pub t_lo: i16,
    pub t_hi: i16,
    /// `(x, y)` on slice 0.
    pub seed_point: (usize, usize),
    pub min_overlap_px: usize,
    /// Area ratio between consecutive slices above which a bone merge is suspected.
    pub max_area_growth: f64,
    pub connectivity: Connectivity,
}

impl TrackerConfig {
    pub fn new(t_lo: i16, t_hi: i16, seed_point: (usize, usize)) -> Self {
        Self { t_lo, t_hi, seed_point, min_overlap_px: 1, max_area_growth: 4.0, connectivity: Connectivity::Eight }
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_lo >= self.t_hi {
            return Err(Error::InvalidConfig(format!(
                "tracker window needs t_lo < t_hi, got [{}, {}]",
                self.t_lo, self.t_hi
            )));
        }
        if self.min_overlap_px == 0 || !(self.max_area_growth > 0.0) {
            return Err(Error::InvalidConfig(String::from("min_overlap_px and max_area_growth must be positive")));
        }
        Ok(())
    }

    fn in_window(&self, v: i16) -> bool {
        self.t_lo <= v && v <= self.t_hi
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackEventKind {
    Lost,
    BoneMergeSuspect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackEvent {
    pub z: usize,
    pub kind: TrackEventKind,
    pub detail: String,
}

/// Union of the in-window components of `slice` that overlap `seed_mask` by at
/// least `cfg.min_overlap_px` pixels, as a 0/1 mask.
pub fn connected_region(slice: &[i16], width: usize, cfg: &TrackerConfig, seed_mask: &[u8]) -> Result<Vec<u8>> {
    if slice.len() != seed_mask.len() || width == 0 || !slice.len().is_multiple_of(width) {
        return Err(Error::ShapeMismatch(format!(
            "slice of {} pixels (width {width}) vs seed mask of {}",
            slice.len(),
            seed_mask.len()
        )));
    }
    let height = slice.len() / width;
    let mut region = vec![0u8; slice.len()];
    let mut visited = vec![false; slice.len()];
    let mut queue = VecDeque::new();
    let mut component = Vec::new();
    for start in 0..slice.len() {
        if seed_mask[start] == 0 || visited[start] || !cfg.in_window(slice[start]) {
            continue;
        }
        visited[start] = true;
        queue.push_back(start);
        component.clear();
        let mut overlap = 0usize;
        while let Some(i) = queue.pop_front() {
            component.push(i);
            overlap += usize::from(seed_mask[i] != 0);
            let (x, y) = ((i % width) as isize, (i / width) as isize);
            for &(dx, dy) in cfg.connectivity.offsets() {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= width as isize || ny >= height as isize {
                    continue;
                }
                let j = ny as usize * width + nx as usize;
                if !visited[j] && cfg.in_window(slice[j]) {
                    visited[j] = true;
                    queue.push_back(j);
                }
            }
        }
        if overlap >= cfg.min_overlap_px {
            for &i in &component {
                region[i] = 1;
            }
        }
    }
    Ok(region)
}

/// Tracks from the seed pixel on slice 0 through the whole volume.
pub fn track_volume(volume: &Volume, cfg: &TrackerConfig) -> Result<(MaskVolume, Vec<TrackEvent>)> {
    cfg.validate()?;
    let meta = &volume.meta;
    let (w, h) = (meta.width, meta.height);
    let (sx, sy) = cfg.seed_point;
    if sx >= w || sy >= h {
        return Err(Error::InvalidConfig(format!("seed point ({sx}, {sy}) outside {w}x{h} slice")));
    }
    let seed_value = volume.slice(0)[sy * w + sx];
    if !cfg.in_window(seed_value) {
        return Err(Error::SeedOutOfWindow { x: sx, y: sy, value: seed_value });
    }

    let plane = meta.slice_len();
    let mut out = vec![0u8; meta.voxel_count()];
    let mut events = Vec::new();
    let mut prev = vec![0u8; plane];
    prev[sy * w + sx] = 1;
    let mut prev_area = 0usize;
    for z in 0..meta.num_slices {
        let region = connected_region(volume.slice(z), w, cfg, &prev)?;
        let area = region.iter().filter(|&&v| v != 0).count();
        if area == 0 {
            events.push(TrackEvent {
                z,
                kind: TrackEventKind::Lost,
                detail: format!(
                    "no in-window pixels connected to the {prev_area}-pixel region of slice {}",
                    z.saturating_sub(1)
                ),
            });
            break;
        }
        if z > 0 && area as f64 > cfg.max_area_growth * prev_area as f64 {
            events.push(TrackEvent {
                z,
                kind: TrackEventKind::BoneMergeSuspect,
                detail: format!("region grew from {prev_area} to {area} pixels"),
            });
        }
        out[z * plane..(z + 1) * plane].copy_from_slice(&region);
        prev = region;
        prev_area = area;
    }
    Ok((MaskVolume::new(meta.clone(), out)?, events))
}
