//! The on-disk volume format: a directory holding `meta.json`, `volume.raw`
//! (little-endian int16, slice-major) and optionally `mask.raw` (one byte per
//! voxel, 0 or 1).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use transonet_core::train::Patient;
use transonet_core::volume::{MaskVolume, Volume, VolumeMeta};

use crate::error::{Error, Result};

pub const META_FILE: &str = "meta.json";
pub const VOLUME_FILE: &str = "volume.raw";
pub const MASK_FILE: &str = "mask.raw";
pub const VOXEL_DTYPE: &str = "int16-le";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct MetaFile {
    patient_id: String,
    height: usize,
    width: usize,
    num_slices: usize,
    spacing_mm: [f64; 3],
    dtype: String,
}

pub fn read_meta(dir: &Path) -> Result<VolumeMeta> {
    let path = dir.join(META_FILE);
    let text = fs::read_to_string(&path).map_err(Error::io(&path))?;
    let parse_err = |msg: String| Error::MetaParseError { path: path.clone(), msg };
    let file: MetaFile = serde_json::from_str(&text).map_err(|e| parse_err(e.to_string()))?;
    if file.dtype != VOXEL_DTYPE {
        return Err(parse_err(format!("dtype {:?}, expected {VOXEL_DTYPE:?}", file.dtype)));
    }
    let meta = VolumeMeta {
        patient_id: file.patient_id,
        height: file.height,
        width: file.width,
        num_slices: file.num_slices,
        spacing_mm: file.spacing_mm,
    };
    meta.validate().map_err(|e| parse_err(e.to_string()))?;
    Ok(meta)
}

pub fn write_meta(meta: &VolumeMeta, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(Error::io(dir))?;
    let file = MetaFile {
        patient_id: meta.patient_id.clone(),
        height: meta.height,
        width: meta.width,
        num_slices: meta.num_slices,
        spacing_mm: meta.spacing_mm,
        dtype: VOXEL_DTYPE.into(),
    };
    let path = dir.join(META_FILE);
    fs::write(&path, serde_json::to_string_pretty(&file)? + "\n").map_err(Error::io(&path))
}

fn read_raw(path: PathBuf, expected: u64) -> Result<Vec<u8>> {
    let bytes = fs::read(&path).map_err(Error::io(&path))?;
    if bytes.len() as u64 != expected {
        return Err(Error::SizeMismatch { path, expected, found: bytes.len() as u64 });
    }
    Ok(bytes)
}

pub fn load_volume(dir: &Path) -> Result<Volume> {
    let meta = read_meta(dir)?;
    let bytes = read_raw(dir.join(VOLUME_FILE), 2 * meta.voxel_count() as u64)?;
    let voxels = bytes.chunks_exact(2).map(|b| i16::from_le_bytes([b[0], b[1]])).collect();
    Ok(Volume::new(meta, voxels)?)
}

/// Writes `meta.json` and `volume.raw`.
pub fn save_volume(volume: &Volume, dir: &Path) -> Result<()> {
    write_meta(&volume.meta, dir)?;
    let bytes: Vec<u8> = volume.voxels.iter().flat_map(|v| v.to_le_bytes()).collect();
    let path = dir.join(VOLUME_FILE);
    fs::write(&path, bytes).map_err(Error::io(&path))
}

pub fn load_mask(dir: &Path) -> Result<MaskVolume> {
    let meta = read_meta(dir)?;
    let path = dir.join(MASK_FILE);
    let bytes = read_raw(path.clone(), meta.voxel_count() as u64)?;
    if let Some((index, &value)) = bytes.iter().enumerate().find(|(_, b)| **b > 1) {
        return Err(Error::InvalidLabel { path, index, value });
    }
    Ok(MaskVolume::new(meta, bytes)?)
}

/// Writes `meta.json` and `mask.raw`.
pub fn save_mask(mask: &MaskVolume, dir: &Path) -> Result<()> {
    write_meta(&mask.meta, dir)?;
    let path = dir.join(MASK_FILE);
    fs::write(&path, &mask.voxels).map_err(Error::io(&path))
}

pub fn load_patient(dir: &Path) -> Result<Patient> {
    Ok(Patient::new(load_volume(dir)?, load_mask(dir)?)?)
}

pub fn save_patient(patient: &Patient, dir: &Path) -> Result<()> {
    save_volume(&patient.volume, dir)?;
    save_mask(&patient.mask, dir)
}

/// Patient directories directly below `root` (those with a `meta.json`), sorted by name.
pub fn patient_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs = Vec::new();
    for entry in fs::read_dir(root).map_err(Error::io(root))? {
        let path = entry.map_err(Error::io(root))?.path();
        if path.join(META_FILE).is_file() {
            dirs.push(path);
        }
    }
    dirs.sort();
    Ok(dirs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_voxel_volume() {
        let dir = tempfile::tempdir().unwrap();
        write_meta(&VolumeMeta::new("one", 1, 1, 1), dir.path()).unwrap();
        fs::write(dir.path().join(VOLUME_FILE), 100i16.to_le_bytes()).unwrap();
        assert_eq!(load_volume(dir.path()).unwrap().voxels, vec![100]);
    }

    #[test]
    fn short_raw_file() {
        let dir = tempfile::tempdir().unwrap();
        write_meta(&VolumeMeta::new("big", 500, 512, 512), dir.path()).unwrap();
        fs::write(dir.path().join(VOLUME_FILE), [0u8; 10]).unwrap();
        match load_volume(dir.path()) {
            Err(Error::SizeMismatch { expected, found, .. }) => {
                assert_eq!((expected, found), (2 * 500 * 512 * 512, 10));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn zero_mask_file_layout() {
        let dir = tempfile::tempdir().unwrap();
        let mask = MaskVolume::empty(VolumeMeta::new("m", 2, 4, 4));
        save_mask(&mask, dir.path()).unwrap();
        assert_eq!(fs::read(dir.path().join(MASK_FILE)).unwrap(), vec![0u8; 32]);
        assert!(dir.path().join(META_FILE).is_file());
        assert_eq!(load_mask(dir.path()).unwrap(), mask);
    }

    #[test]
    fn label_two_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        save_mask(&MaskVolume::empty(VolumeMeta::new("m", 1, 2, 2)), dir.path()).unwrap();
        fs::write(dir.path().join(MASK_FILE), [0u8, 1, 2, 0]).unwrap();
        assert!(matches!(load_mask(dir.path()), Err(Error::InvalidLabel { index: 2, value: 2, .. })));
    }

    #[test]
    fn missing_and_malformed_meta() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_volume(dir.path()), Err(Error::MissingFile(_))));
        fs::write(dir.path().join(META_FILE), "{\"patient_id\": 3}").unwrap();
        assert!(matches!(load_volume(dir.path()), Err(Error::MetaParseError { .. })));
        let meta = r#"{"patient_id":"x","height":2,"width":2,"num_slices":1,"spacing_mm":[1,1,1],"dtype":"uint8"}"#;
        fs::write(dir.path().join(META_FILE), meta).unwrap();
        assert!(matches!(load_volume(dir.path()), Err(Error::MetaParseError { .. })));
        let zero = r#"{"patient_id":"x","height":0,"width":2,"num_slices":1,"spacing_mm":[1,1,1],"dtype":"int16-le"}"#;
        fs::write(dir.path().join(META_FILE), zero).unwrap();
        assert!(matches!(load_volume(dir.path()), Err(Error::MetaParseError { .. })));
    }

    #[test]
    fn meta_json_fields() {
        let dir = tempfile::tempdir().unwrap();
        let mut meta = VolumeMeta::new("p7", 3, 4, 5);
        meta.spacing_mm = [0.7, 0.7, 1.25];
        write_meta(&meta, dir.path()).unwrap();
        let v: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join(META_FILE)).unwrap()).unwrap();
        assert_eq!(v["dtype"], "int16-le");
        assert_eq!(v["num_slices"], 3);
        assert_eq!(v["height"], 4);
        assert_eq!(v["width"], 5);
        assert_eq!(v["spacing_mm"][2], 1.25);
        assert_eq!(read_meta(dir.path()).unwrap(), meta);
    }
}
