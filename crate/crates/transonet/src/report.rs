//! JSON reports, run logs and the effective-config record every command writes.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use transonet_core::train::RunLog;

use crate::error::{Error, Result};

/// Hex SHA-256 of the compact JSON form of `config`.
///
/// Objects serialize with sorted keys, so equal configs hash equally.
pub fn config_sha256(config: &impl Serialize) -> Result<String> {
    let value = serde_json::to_value(config)?;
    let digest = Sha256::digest(serde_json::to_vec(&value)?);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    ensure_parent(path)?;
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).map_err(Error::io(path))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(Error::io(path))?;
    serde_json::from_str(&text).map_err(|e| Error::MetaParseError { path: path.to_path_buf(), msg: e.to_string() })
}

/// One JSON object per epoch, each carrying the run seed.
pub fn write_run_log(path: &Path, log: &RunLog) -> Result<()> {
    ensure_parent(path)?;
    let mut out = Vec::new();
    for e in &log.epochs {
        let mut line = serde_json::to_value(e)?;
        line["seed"] = log.seed.into();
        if log.best_epoch == e.epoch {
            line["best"] = true.into();
        }
        serde_json::to_writer(&mut out, &line)?;
        out.push(b'\n');
    }
    let mut file = fs::File::create(path).map_err(Error::io(path))?;
    file.write_all(&out).map_err(Error::io(path))
}

/// Command name and every resolved option, enough to rerun the command.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct EffectiveConfig {
    pub command: String,
    pub config: serde_json::Value,
    pub config_sha256: String,
}

impl EffectiveConfig {
    pub fn new(command: &str, config: &impl Serialize) -> Result<Self> {
        Ok(Self {
            command: command.into(),
            config: serde_json::to_value(config)?,
            config_sha256: config_sha256(config)?,
        })
    }
}

/// `effective_config.json` inside `dir`.
pub fn effective_config_path(dir: &Path) -> PathBuf {
    dir.join("effective_config.json")
}

/// `<stem>.config.json` next to a report file.
pub fn sibling_config_path(report: &Path) -> PathBuf {
    let stem = report.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "report".into());
    report.with_file_name(format!("{stem}.config.json"))
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent().filter(|p| !p.as_os_str().is_empty()) {
        Some(parent) => fs::create_dir_all(parent).map_err(Error::io(parent)),
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use transonet_core::train::EpochRecord;

    #[test]
    fn sha256_of_empty_object() {
        // sha256("{}")
        let expected = "44136fa355b3678a1146ad16f7e8649e94fb4fc21fe77e8310c060f61caaff8a";
        assert_eq!(config_sha256(&serde_json::json!({})).unwrap(), expected);
    }

    #[test]
    fn sha_ignores_field_order() {
        let a = serde_json::json!({"b": 1, "a": [1, 2]});
        let b: serde_json::Value = serde_json::from_str(r#"{"a": [1, 2], "b": 1}"#).unwrap();
        assert_eq!(config_sha256(&a).unwrap(), config_sha256(&b).unwrap());
        assert_ne!(config_sha256(&a).unwrap(), config_sha256(&serde_json::json!({"b": 2})).unwrap());
    }

    #[test]
    fn run_log_has_one_line_per_epoch() {
        let dir = tempfile::tempdir().unwrap();
        let rec = |epoch| EpochRecord { epoch, train_loss: 0.5, train_iou: 0.25, val_iou: None };
        let log = RunLog { seed: 9, epochs: vec![rec(1), rec(2)], best_epoch: 2, ..RunLog::default() };
        let path = dir.path().join("train_log.jsonl");
        write_run_log(&path, &log).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0]["epoch"], 1);
        assert_eq!(lines[1]["seed"], 9);
        assert_eq!(lines[1]["best"], true);
        assert!(lines[0]["val_iou"].is_null());
    }

    #[test]
    fn sibling_config_name() {
        assert_eq!(sibling_config_path(Path::new("out/eval.json")), PathBuf::from("out/eval.config.json"));
    }
}
