//! Command-line front end. Every subcommand records its resolved options in an
//! effective-config JSON next to its outputs.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use transonet_core::folds::make_folds;
use transonet_core::gradcheck::{grad_check, GradCheckOptions};
use transonet_core::model::{Checkpoint, ModelConfig};
use transonet_core::phantom::{generate, BoneDecoy, MaskExtent, PhantomSpec};
use transonet_core::tracker::{track_volume, TrackerConfig};
use transonet_core::train::{cross_validate, evaluate, train_with, Patient, TrainConfig};
use transonet_core::volume::MaskVolume;

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::error::{Error, Result};
use crate::overlay::write_overlay;
use crate::report::{
    effective_config_path, read_json, sibling_config_path, write_json, write_run_log, EffectiveConfig,
};
use crate::volume_io::{load_patient, load_volume, patient_dirs, save_mask, save_patient, META_FILE};

#[derive(Debug, Parser)]
#[command(
    name = "transonet",
    version,
    about = "Vessel segmentation on CT volumes: phantoms, training, evaluation, tracking"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic CT volume with its vessel mask.
    Phantom(PhantomArgs),
    /// Train a model on labelled volumes.
    Train(TrainArgs),
    /// Score a checkpoint on labelled volumes.
    Eval(EvalArgs),
    /// Segment one volume with a checkpoint.
    Predict(PredictArgs),
    /// Patient-level cross-validation.
    Xval(XvalArgs),
    /// Threshold-and-connectivity tracking baseline.
    Track(TrackArgs),
    /// Compare analytic and finite-difference gradients on the tiny model.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtentArg {
    ToBifurcation,
    ToEnd,
}

impl From<ExtentArg> for MaskExtent {
    fn from(e: ExtentArg) -> Self {
        match e {
            ExtentArg::ToBifurcation => MaskExtent::ToBifurcation,
            ExtentArg::ToEnd => MaskExtent::ToEnd,
        }
    }
}

/// Half-open slice range written `z0:z1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ZRange(pub [usize; 2]);

impl FromStr for ZRange {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (a, b) = s.split_once(':').ok_or_else(|| format!("expected z0:z1, got {s:?}"))?;
        let parse = |t: &str| t.trim().parse::<usize>().map_err(|e| format!("bad slice index {t:?}: {e}"));
        Ok(Self([parse(a)?, parse(b)?]))
    }
}

/// Bone decoy written `x,y,r,z0:z1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoneArg(pub BoneDecoy);

impl FromStr for BoneArg {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let parts: Vec<&str> = s.split(',').collect();
        let [x, y, r, z] = parts[..] else {
            return Err(format!("expected x,y,r,z0:z1, got {s:?}"));
        };
        let num = |t: &str| t.trim().parse::<f64>().map_err(|e| format!("bad number {t:?}: {e}"));
        Ok(Self(BoneDecoy {
            center_xy: [num(x)?, num(y)?],
            radius_px: num(r)?,
            contact_z_range: z.parse::<ZRange>()?.0,
        }))
    }
}

/// Pixel written `x,y`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Point(pub (usize, usize));

impl FromStr for Point {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (a, b) = s.split_once(',').ok_or_else(|| format!("expected x,y, got {s:?}"))?;
        let parse = |t: &str| t.trim().parse::<usize>().map_err(|e| format!("bad coordinate {t:?}: {e}"));
        Ok(Self((parse(a)?, parse(b)?)))
    }
}

#[derive(Debug, Args)]
pub struct PhantomArgs {
    /// Output patient directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 64)]
    pub slices: usize,
    /// Slice height and width; vessel radii scale with it (defaults are for 64).
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, value_name = "Z0:Z1")]
    pub occlusion: Option<ZRange>,
    /// May be repeated.
    #[arg(long, value_name = "X,Y,R,Z0:Z1")]
    pub bone: Vec<BoneArg>,
    #[arg(long, value_enum, default_value_t = ExtentArg::ToEnd)]
    pub mask_extent: ExtentArg,
    /// Defaults to the output directory's name.
    #[arg(long)]
    pub patient_id: Option<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Patient directory, or a directory of patient directories. May be repeated.
    #[arg(long, required = true)]
    pub data: Vec<PathBuf>,
    /// Validation patients, same forms as --data.
    #[arg(long)]
    pub val: Vec<PathBuf>,
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub hyper: HyperArgs,
}

/// Options shared by train and xval; unset ones fall back to the config file.
#[derive(Debug, Args, Default)]
pub struct HyperArgs {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Model input side; defaults to the data's slice size.
    #[arg(long)]
    pub input_size: Option<usize>,
    #[arg(long)]
    pub bridge_layers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long, required = true)]
    pub data: Vec<PathBuf>,
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Directory holding meta.json and volume.raw.
    #[arg(long)]
    pub volume: PathBuf,
    /// Directory for the predicted mask.raw and meta.json.
    #[arg(long)]
    pub out: PathBuf,
    /// Write one PPM overlay per slice here.
    #[arg(long)]
    pub overlay_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
}

#[derive(Debug, Args)]
pub struct XvalArgs {
    /// Directory of patient directories.
    #[arg(long)]
    pub data_root: PathBuf,
    /// Excluded-group sizes, e.g. 3,3,3,2.
    #[arg(long, value_delimiter = ',', default_value = "3,3,3,2")]
    pub folds: Vec<usize>,
    /// Validation patients taken from the front of each excluded group.
    #[arg(long, default_value_t = 1)]
    pub val_per_fold: usize,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub report: PathBuf,
    #[command(flatten)]
    pub hyper: HyperArgs,
}

#[derive(Debug, Args)]
pub struct TrackArgs {
    #[arg(long)]
    pub volume: PathBuf,
    /// Seed pixel on slice 0.
    #[arg(long, value_name = "X,Y")]
    pub seed_point: Point,
    #[arg(long, allow_hyphen_values = true)]
    pub t_lo: i16,
    #[arg(long, allow_hyphen_values = true)]
    pub t_hi: i16,
    /// Directory for the tracked mask.raw and meta.json.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub events: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub samples: usize,
    /// Write the report here instead of standard output.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

/// Outcome of one invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct CommandResult {
    /// 0 success, 1 validation or usage error, 2 runtime failure.
    pub exit_code: i32,
    pub report_path: Option<PathBuf>,
    /// Diagnostic (or help text) for the error stream; set iff the exit code is nonzero,
    /// or when help was requested.
    pub message: Option<String>,
    /// Text for standard output.
    pub stdout: Option<String>,
}

/// Parses `argv` (program name first) and runs the subcommand.
pub fn dispatch<I, T>(argv: I) -> CommandResult
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            return if code == 0 {
                CommandResult { exit_code: 0, report_path: None, message: None, stdout: Some(text) }
            } else {
                CommandResult { exit_code: 1, report_path: None, message: Some(text), stdout: None }
            };
        }
    };
    match run(cli.command) {
        Ok((report_path, stdout)) => CommandResult { exit_code: 0, report_path, message: None, stdout },
        Err(e) => CommandResult {
            exit_code: if e.is_validation() { 1 } else { 2 },
            report_path: None,
            message: Some(format!("error: {e}")),
            stdout: None,
        },
    }
}

type Outcome = (Option<PathBuf>, Option<String>);

fn run(cmd: Command) -> Result<Outcome> {
    match cmd {
        Command::Phantom(a) => phantom(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval(a),
        Command::Predict(a) => predict(a),
        Command::Xval(a) => xval(a),
        Command::Track(a) => track(a),
        Command::Gradcheck(a) => gradcheck(a),
    }
}

fn phantom(a: PhantomArgs) -> Result<Outcome> {
    let id = match a.patient_id {
        Some(id) => id,
        None => a
            .out
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .ok_or_else(|| Error::InvalidArgument(format!("cannot name a patient after {}", a.out.display())))?,
    };
    let mut spec = PhantomSpec::new(id, a.slices, a.size, a.size, a.seed);
    // radii and entry point follow the slice size; defaults are for 64 px
    let scale = a.size as f64 / 64.0;
    spec.trunk_radius_px *= scale;
    spec.branch_radius_px = (spec.branch_radius_px * scale).max(1.5);
    spec.occlusion_z_range = a.occlusion.map(|r| r.0);
    spec.bone_decoys = a.bone.iter().map(|b| b.0).collect();
    spec.mask_extent = a.mask_extent.into();
    let (volume, mask) = generate(&spec)?;
    save_patient(&Patient::new(volume, mask)?, &a.out)?;
    write_json(&a.out.join("phantom.json"), &spec)?;
    write_json(&effective_config_path(&a.out), &EffectiveConfig::new("phantom", &spec)?)?;
    Ok((Some(a.out.join(META_FILE)), None))
}

/// Model and training options as read from `--config` and echoed into reports.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Full architecture; built from `input_size`/`width_divisor` when absent.
    pub model: Option<ModelConfig>,
    pub input_size: Option<usize>,
    /// Channel widths of the standard model divided by this (1 = full width).
    pub width_divisor: Option<usize>,
    pub bridge_layers: Option<usize>,
    pub train: TrainConfig,
}

/// What a train or xval run actually used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedRun {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

fn read_run_config(path: Option<&Path>) -> Result<RunConfig> {
    let Some(path) = path else { return Ok(RunConfig::default()) };
    let value: serde_json::Value = read_json(path)?;
    // an emitted effective config can be fed back as is
    let inner = match value.get("config") {
        Some(c) if value.get("command").is_some() => c.clone(),
        _ => value,
    };
    serde_json::from_value(inner).map_err(|e| Error::MetaParseError { path: path.to_path_buf(), msg: e.to_string() })
}

fn resolve(file: RunConfig, h: &HyperArgs, data_hw: usize) -> Result<ResolvedRun> {
    let mut train = file.train;
    if let Some(v) = h.epochs {
        train.epochs = v;
    }
    if let Some(v) = h.batch_size {
        train.batch_size = v;
    }
    if let Some(v) = h.lr {
        train.learning_rate = v;
    }
    if let Some(v) = h.seed {
        train.seed = v;
    }
    let hw = h.input_size.or(file.input_size);
    let mut model = match file.model {
        Some(m) => m,
        None => ModelConfig::scaled(hw.unwrap_or(data_hw), file.width_divisor.unwrap_or(1)),
    };
    if let Some(hw) = hw {
        model.input_hw = hw;
    }
    if let Some(l) = h.bridge_layers.or(file.bridge_layers) {
        model.bridge_layers = l;
    }
    model.validate()?;
    train.validate()?;
    Ok(ResolvedRun { model, train })
}

/// Expands each path into patient directories: itself if it holds a
/// meta.json, otherwise its patient subdirectories.
fn expand_patients(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if p.join(META_FILE).is_file() {
            out.push(p.clone());
        } else {
            let dirs = patient_dirs(p)?;
            if dirs.is_empty() {
                return Err(Error::InvalidArgument(format!("{} holds no patient directories", p.display())));
            }
            out.extend(dirs);
        }
    }
    Ok(out)
}

fn load_patients(dirs: &[PathBuf]) -> Result<Vec<Patient>> {
    dirs.iter().map(|d| load_patient(d)).collect()
}

#[derive(Serialize)]
struct TrainRecord<'a> {
    data: &'a [PathBuf],
    val: &'a [PathBuf],
    out: &'a Path,
    #[serde(flatten)]
    run: &'a ResolvedRun,
}

fn train_cmd(a: TrainArgs) -> Result<Outcome> {
    let train_dirs = expand_patients(&a.data)?;
    let val_dirs = expand_patients(&a.val)?;
    let train_set = load_patients(&train_dirs)?;
    let val_set = load_patients(&val_dirs)?;
    let run = resolve(read_run_config(a.config.as_deref())?, &a.hyper, train_set[0].volume.meta.height)?;

    let record = TrainRecord { data: &train_dirs, val: &val_dirs, out: &a.out, run: &run };
    let effective = EffectiveConfig::new("train", &record)?;
    std::fs::create_dir_all(&a.out).map_err(Error::io(&a.out))?;
    write_json(&effective_config_path(&a.out), &effective)?;

    let start = Instant::now();
    let every = run.train.checkpoint_every;
    let mut periodic_err = None;
    let (mut ckpt, mut log) = train_with(&run.model, &run.train, &train_set, &val_set, |rec, params| {
        eprintln!(
            "epoch {} loss {:.5} train_iou {:.4}{}",
            rec.epoch,
            rec.train_loss,
            rec.train_iou,
            rec.val_iou.map(|v| format!(" val_iou {v:.4}")).unwrap_or_default()
        );
        if every > 0 && rec.epoch % every == 0 && periodic_err.is_none() {
            let snapshot = Checkpoint {
                config: run.model.clone(),
                params: params.clone(),
                meta: transonet_core::model::CheckpointMeta {
                    seed: run.train.seed,
                    epoch: rec.epoch,
                    train_loss: Some(rec.train_loss),
                    val_iou: rec.val_iou,
                },
            };
            let path = a.out.join(format!("epoch_{:04}.tonc", rec.epoch));
            if let Err(e) = save_checkpoint(&snapshot, &path) {
                periodic_err = Some(e);
            }
        }
    })?;
    if let Some(e) = periodic_err {
        return Err(e);
    }
    log.wall_clock_s = Some(start.elapsed().as_secs_f64());
    ckpt.meta.seed = run.train.seed;
    let ckpt_path = a.out.join("checkpoint.tonc");
    save_checkpoint(&ckpt, &ckpt_path)?;
    write_run_log(&a.out.join("train_log.jsonl"), &log)?;
    Ok((Some(ckpt_path), None))
}

fn eval(a: EvalArgs) -> Result<Outcome> {
    check_threshold(a.threshold)?;
    let ckpt = load_checkpoint(&a.ckpt)?;
    let dirs = expand_patients(&a.data)?;
    let patients = load_patients(&dirs)?;

    #[derive(Serialize)]
    struct EvalRecord<'a> {
        ckpt: &'a Path,
        data: &'a [PathBuf],
        report: &'a Path,
        threshold: f64,
        model: &'a ModelConfig,
        hu_window: transonet_core::volume::HuWindow,
    }
    let window = TrainConfig::default().hu_window;
    let record = EvalRecord {
        ckpt: &a.ckpt,
        data: &dirs,
        report: &a.report,
        threshold: a.threshold,
        model: &ckpt.config,
        hu_window: window,
    };
    let effective = EffectiveConfig::new("eval", &record)?;
    write_json(&sibling_config_path(&a.report), &effective)?;

    let mut report = evaluate(&ckpt, &patients, &window, a.threshold)?;
    report.config_sha256 = effective.config_sha256;
    write_json(&a.report, &report)?;
    Ok((Some(a.report), None))
}

fn check_threshold(t: f64) -> Result<()> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("threshold must lie in [0, 1], got {t}")))
    }
}

fn predict(a: PredictArgs) -> Result<Outcome> {
    check_threshold(a.threshold)?;
    let ckpt = load_checkpoint(&a.ckpt)?;
    let net = ckpt.network()?;
    let volume = load_volume(&a.volume)?;
    let window = TrainConfig::default().hu_window;

    #[derive(Serialize)]
    struct PredictRecord<'a> {
        ckpt: &'a Path,
        volume: &'a Path,
        out: &'a Path,
        overlay_dir: Option<&'a Path>,
        threshold: f64,
        model: &'a ModelConfig,
        hu_window: transonet_core::volume::HuWindow,
    }
    let record = PredictRecord {
        ckpt: &a.ckpt,
        volume: &a.volume,
        out: &a.out,
        overlay_dir: a.overlay_dir.as_deref(),
        threshold: a.threshold,
        model: &ckpt.config,
        hu_window: window,
    };
    let effective = EffectiveConfig::new("predict", &record)?;

    let mask = net.segment_volume(&ckpt.params, &volume, &window, a.threshold, 8)?;
    save_mask(&mask, &a.out)?;
    crate::volume_io::write_meta(&mask.meta, &a.out)?;
    write_json(&effective_config_path(&a.out), &effective)?;
    if let Some(dir) = &a.overlay_dir {
        write_overlays(dir, &volume, &mask, &window)?;
    }
    Ok((Some(a.out.join(crate::volume_io::MASK_FILE)), None))
}

/// One `slice_NNNN.ppm` per slice.
pub fn write_overlays(
    dir: &Path,
    volume: &transonet_core::volume::Volume,
    mask: &MaskVolume,
    window: &transonet_core::volume::HuWindow,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
    let m = &volume.meta;
    for z in 0..m.num_slices {
        let path = dir.join(format!("slice_{z:04}.ppm"));
        write_overlay(&path, volume.slice(z), mask.slice(z), m.width, m.height, window)?;
    }
    Ok(())
}

fn xval(a: XvalArgs) -> Result<Outcome> {
    let dirs = patient_dirs(&a.data_root)?;
    if dirs.is_empty() {
        return Err(Error::InvalidArgument(format!("{} holds no patient directories", a.data_root.display())));
    }
    let patients = load_patients(&dirs)?;
    let run = resolve(read_run_config(a.config.as_deref())?, &a.hyper, patients[0].volume.meta.height)?;
    let ids: Vec<&str> = patients.iter().map(Patient::id).collect();
    let plan = make_folds(&ids, &a.folds, a.val_per_fold)?;

    #[derive(Serialize)]
    struct XvalRecord<'a> {
        data_root: &'a Path,
        folds: &'a [usize],
        val_per_fold: usize,
        report: &'a Path,
        #[serde(flatten)]
        run: &'a ResolvedRun,
    }
    let record = XvalRecord {
        data_root: &a.data_root,
        folds: &a.folds,
        val_per_fold: a.val_per_fold,
        report: &a.report,
        run: &run,
    };
    let effective = EffectiveConfig::new("xval", &record)?;
    write_json(&sibling_config_path(&a.report), &effective)?;
    let dir = a.report.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    write_json(&dir.join("folds.json"), &plan)?;

    let mut cv = cross_validate(&run.model, &run.train, &patients, &a.folds, a.val_per_fold)?;
    for f in &mut cv.folds {
        f.report.config_sha256 = effective.config_sha256.clone();
        write_run_log(&dir.join(format!("train_log_fold{}.jsonl", f.fold)), &f.log)?;
    }

    #[derive(Serialize)]
    struct XvalReport<'a> {
        #[serde(flatten)]
        cv: &'a transonet_core::train::CrossValidation,
        seed: u64,
        config_sha256: &'a str,
    }
    write_json(&a.report, &XvalReport { cv: &cv, seed: run.train.seed, config_sha256: &effective.config_sha256 })?;
    Ok((Some(a.report), None))
}

fn track(a: TrackArgs) -> Result<Outcome> {
    let volume = load_volume(&a.volume)?;
    let cfg = TrackerConfig::new(a.t_lo, a.t_hi, a.seed_point.0);

    #[derive(Serialize)]
    struct TrackRecord<'a> {
        volume: &'a Path,
        out: &'a Path,
        events: &'a Path,
        tracker: &'a TrackerConfig,
    }
    let effective = EffectiveConfig::new(
        "track",
        &TrackRecord { volume: &a.volume, out: &a.out, events: &a.events, tracker: &cfg },
    )?;

    let (mask, events) = track_volume(&volume, &cfg)?;
    save_mask(&mask, &a.out)?;
    crate::volume_io::write_meta(&mask.meta, &a.out)?;
    write_json(&effective_config_path(&a.out), &effective)?;
    write_json(&a.events, &events)?;
    Ok((Some(a.events), None))
}

fn gradcheck(a: GradcheckArgs) -> Result<Outcome> {
    if a.tol.is_nan() || a.tol <= 0.0 || a.samples == 0 {
        return Err(Error::InvalidArgument("--tol must be positive and --samples at least 1".into()));
    }
    let opts = GradCheckOptions { n_samples: a.samples, tol: a.tol, ..Default::default() };
    let model = ModelConfig::tiny();

    #[derive(Serialize)]
    struct GradRecord<'a> {
        model: &'a ModelConfig,
        options: &'a GradCheckOptions,
        seed: u64,
    }
    let effective = EffectiveConfig::new("gradcheck", &GradRecord { model: &model, options: &opts, seed: a.seed })?;
    let report = grad_check(&model, a.seed, &opts)?;

    #[derive(Serialize)]
    struct GradOutput<'a> {
        #[serde(flatten)]
        report: &'a transonet_core::gradcheck::GradCheckReport,
        config_sha256: &'a str,
    }
    let out = GradOutput { report: &report, config_sha256: &effective.config_sha256 };
    let failed = (!report.pass).then(|| {
        format!("gradient check failed: max relative error {:.3e} at {}", report.max_rel_err, report.worst_param)
    });
    let outcome = match &a.report {
        Some(path) => {
            write_json(&sibling_config_path(path), &effective)?;
            write_json(path, &out)?;
            (Some(path.clone()), None)
        }
        None => {
            // no output location: the effective config travels with the report
            let value = serde_json::json!({ "report": out, "effective_config": effective });
            (None, Some(serde_json::to_string_pretty(&value)?))
        }
    };
    match failed {
        Some(msg) => Err(Error::CheckFailed(msg)),
        None => Ok(outcome),
    }
}
