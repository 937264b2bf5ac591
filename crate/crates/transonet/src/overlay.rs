//! Binary PPM (P6) overlays: the windowed slice in grey with mask pixels'
//! red channel set to 255.

use std::fs;
use std::path::Path;

use transonet_core::volume::HuWindow;

use crate::error::{Error, Result};

pub fn overlay_ppm(slice: &[i16], mask: &[u8], width: usize, height: usize, window: &HuWindow) -> Result<Vec<u8>> {
    if slice.len() != width * height || mask.len() != slice.len() {
        return Err(Error::InvalidArgument(format!(
            "overlay of {width}x{height} needs {} pixels, got slice {} and mask {}",
            width * height,
            slice.len(),
            mask.len()
        )));
    }
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.reserve(3 * slice.len());
    for (&v, &m) in slice.iter().zip(mask) {
        let g = window.grey(v);
        out.extend_from_slice(&[if m != 0 { 255 } else { g }, g, g]);
    }
    Ok(out)
}

pub fn write_overlay(
    path: &Path,
    slice: &[i16],
    mask: &[u8],
    width: usize,
    height: usize,
    window: &HuWindow,
) -> Result<()> {
    let bytes = overlay_ppm(slice, mask, width, height, window)?;
    fs::write(path, bytes).map_err(Error::io(path))
}
