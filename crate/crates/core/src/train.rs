//! Training loop, evaluation and cross-validation.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::folds::{make_folds, FoldPlan};
use crate::loss::{bcej_loss_and_grad, binarize, MetricsReport, Overlap, PatientMetrics, JACCARD_EPS};
use crate::model::{Checkpoint, CheckpointMeta, ModelConfig, ParamStore, TransONet};
use crate::nn::Mode;
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::tensor::Tensor;
use crate::volume::{normalize_slice, HuWindow, MaskVolume, Volume};

/// A CT volume with its ground-truth mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Patient {
    pub volume: Volume,
    pub mask: MaskVolume,
}

impl Patient {
    pub fn new(volume: Volume, mask: MaskVolume) -> Result<Self> {
        if !volume.meta.same_dims(&mask.meta) {
            return Err(Error::DimensionMismatch(format!(
                "volume {} and its mask differ in size",
                volume.meta.patient_id
            )));
        }
        Ok(Self { volume, mask })
    }

    pub fn id(&self) -> &str {
        &self.volume.meta.patient_id
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub hu_window: HuWindow,
    pub shuffle: bool,
    /// Passed to the epoch observer; 0 disables periodic checkpoints.
    pub checkpoint_every: usize,
    /// Probability threshold for IoU bookkeeping and segmentation.
    pub threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            learning_rate: adam.learning_rate,
            beta1: adam.beta1,
            beta2: adam.beta2,
            adam_eps: adam.eps,
            batch_size: 8,
            epochs: 20,
            seed: 0,
            hu_window: HuWindow::default(),
            shuffle: true,
            checkpoint_every: 0,
            threshold: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig { learning_rate: self.learning_rate, beta1: self.beta1, beta2: self.beta2, eps: self.adam_eps }
    }

    pub fn validate(&self) -> Result<()> {
        self.adam().validate()?;
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig(String::from("batch_size must be at least 1")));
        }
        if !(self.hu_window.lo < self.hu_window.hi) {
            return Err(Error::InvalidConfig(String::from("HU window needs lo < hi")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based epoch number.
    pub epoch: usize,
    pub train_loss: f64,
    /// IoU of thresholded train-mode predictions over the epoch's slices.
    pub train_iou: f64,
    /// Mean eval-mode IoU over validation patients, if any.
    pub val_iou: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub seed: u64,
    pub epochs: Vec<EpochRecord>,
    /// Loss of every optimizer step, in order.
    pub step_losses: Vec<f64>,
    /// Epoch whose parameters were kept (0 = initialization).
    pub best_epoch: usize,
    /// Filled in by callers that have a clock.
    pub wall_clock_s: Option<f64>,
}

/// Pooled, pre-normalized training slices.
struct SliceSet {
    hw: usize,
    inputs: Vec<Vec<f32>>,
    targets: Vec<Vec<f32>>,
}

impl SliceSet {
    fn new(patients: &[Patient], hw: usize, window: &HuWindow) -> Result<Self> {
        let mut inputs = Vec::new();
        let mut targets = Vec::new();
        for p in patients {
            check_dims(&p.volume, hw)?;
            for z in 0..p.volume.meta.num_slices {
                inputs.push(normalize_slice::<f32>(p.volume.slice(z), window));
                targets.push(p.mask.slice(z).iter().map(|&v| f32::from(v)).collect());
            }
        }
        Ok(Self { hw, inputs, targets })
    }

    fn batch(&self, idx: &[usize]) -> Result<(Tensor<f32>, Vec<f32>)> {
        let plane = self.hw * self.hw;
        let mut x = Vec::with_capacity(idx.len() * 3 * plane);
        let mut y = Vec::with_capacity(idx.len() * plane);
        for &i in idx {
            for _ in 0..3 {
                x.extend_from_slice(&self.inputs[i]);
            }
            y.extend_from_slice(&self.targets[i]);
        }
        Ok((Tensor::from_vec(idx.len(), 3, self.hw, self.hw, x)?, y))
    }
}

fn check_dims(volume: &Volume, hw: usize) -> Result<()> {
    if volume.meta.height != hw || volume.meta.width != hw {
        return Err(Error::DimensionMismatch(format!(
            "patient {} has {}x{} slices, model expects {hw}x{hw}",
            volume.meta.patient_id, volume.meta.height, volume.meta.width
        )));
    }
    Ok(())
}

/// Trains from `init_params(model_cfg, seed)` and keeps the parameters with the
/// best validation IoU (the last epoch's when there are no validation patients).
pub fn train(
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    train_patients: &[Patient],
    val_patients: &[Patient],
) -> Result<(Checkpoint, RunLog)> {
    train_with(model_cfg, train_cfg, train_patients, val_patients, |_, _| {})
}

/// [`train`] with an observer called after every epoch with the record and
/// the current parameters.
pub fn train_with<F>(
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    train_patients: &[Patient],
    val_patients: &[Patient],
    mut on_epoch: F,
) -> Result<(Checkpoint, RunLog)>
where
    F: FnMut(&EpochRecord, &ParamStore<f32>),
{
    train_cfg.validate()?;
    let net = TransONet::new(model_cfg.clone())?;
    let data = SliceSet::new(train_patients, model_cfg.input_hw, &train_cfg.hu_window)?;
    if data.inputs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    for p in val_patients {
        check_dims(&p.volume, model_cfg.input_hw)?;
    }

    let mut params: ParamStore<f32> = net.init_params(train_cfg.seed);
    let mut state = AdamState::new(&params);
    let adam = train_cfg.adam();
    let mut rng = ChaCha8Rng::seed_from_u64(train_cfg.seed ^ 0x5851_f42d_4c95_7f2d);
    let mut order: Vec<usize> = (0..data.inputs.len()).collect();
    let mut log = RunLog { seed: train_cfg.seed, ..RunLog::default() };
    let mut best: Option<(f64, ParamStore<f32>, CheckpointMeta)> = None;

    for epoch in 1..=train_cfg.epochs {
        if train_cfg.shuffle {
            order.shuffle(&mut rng);
        }
        let mut loss_sum = 0.0;
        let mut overlap = Overlap::default();
        for chunk in order.chunks(train_cfg.batch_size) {
            let (x, y) = data.batch(chunk)?;
            let pass = net.forward(&params, &x, Mode::Train)?;
            let (loss, dp) = bcej_loss_and_grad(&pass.probs.data, &y, JACCARD_EPS)?;
            let dprobs = Tensor::from_vec(x.n, 1, x.h, x.w, dp)?;
            let grads = net.backward(&params, &pass, &dprobs)?;
            adam_step(&mut params, &grads, &mut state, &adam)?;
            for update in &pass.stats {
                update.apply(&mut params);
            }
            let truth: Vec<u8> = y.iter().map(|&v| u8::from(v > 0.5)).collect();
            overlap.merge(Overlap::of(&binarize(&pass.probs.data, train_cfg.threshold), &truth)?);
            loss_sum += loss * chunk.len() as f64;
            log.step_losses.push(loss);
        }
        let val_iou = if val_patients.is_empty() {
            None
        } else {
            let mut sum = 0.0;
            for p in val_patients {
                sum += PatientMetrics::compute(&segment(&net, &params, p, train_cfg)?, &p.mask)?.iou;
            }
            Some(sum / val_patients.len() as f64)
        };
        let record =
            EpochRecord { epoch, train_loss: loss_sum / data.inputs.len() as f64, train_iou: overlap.iou(), val_iou };
        on_epoch(&record, &params);
        let meta = CheckpointMeta {
            seed: train_cfg.seed,
            epoch,
            train_loss: Some(record.train_loss),
            val_iou: record.val_iou,
        };
        let score = record.val_iou.unwrap_or(f64::NEG_INFINITY);
        let improves = match &best {
            None => true,
            Some((b, _, _)) => val_patients.is_empty() || score > *b,
        };
        if improves {
            best = Some((score, params.clone(), meta));
        }
        log.epochs.push(record);
    }

    let (params, meta) = match best {
        Some((_, p, m)) => (p, m),
        None => (params, CheckpointMeta { seed: train_cfg.seed, ..CheckpointMeta::default() }),
    };
    log.best_epoch = meta.epoch;
    Ok((Checkpoint { config: model_cfg.clone(), params, meta }, log))
}

fn segment(net: &TransONet, params: &ParamStore<f32>, p: &Patient, cfg: &TrainConfig) -> Result<MaskVolume> {
    net.segment_volume(params, &p.volume, &cfg.hu_window, cfg.threshold, cfg.batch_size)
}

/// Segments every patient with the checkpoint and scores it against the ground truth.
/// `config_sha256` is left empty for the caller to fill in.
pub fn evaluate(ckpt: &Checkpoint, patients: &[Patient], window: &HuWindow, threshold: f64) -> Result<MetricsReport> {
    let net = ckpt.network()?;
    let mut entries = Vec::with_capacity(patients.len());
    for p in patients {
        let pred = net.segment_volume(&ckpt.params, &p.volume, window, threshold, 8)?;
        entries.push(PatientMetrics::compute(&pred, &p.mask)?);
    }
    Ok(MetricsReport::from_entries(entries, ckpt.meta.seed, String::new()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldOutcome {
    pub fold: usize,
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
    pub test_ids: Vec<String>,
    pub report: MetricsReport,
    pub log: RunLog,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValidation {
    pub plan: FoldPlan,
    pub folds: Vec<FoldOutcome>,
    /// Mean of the per-fold mean Dice values.
    pub mean_dice: f64,
    pub mean_iou: f64,
}

/// Trains and evaluates one model per fold. Fold `k` trains with seed
/// `train_cfg.seed + k`.
pub fn cross_validate(
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    patients: &[Patient],
    fold_sizes: &[usize],
    val_per_fold: usize,
) -> Result<CrossValidation> {
    if patients.len() < 4 {
        return Err(Error::InvalidConfig(format!(
            "cross-validation needs at least 4 patients, got {}",
            patients.len()
        )));
    }
    let ids: Vec<&str> = patients.iter().map(Patient::id).collect();
    let plan = make_folds(&ids, fold_sizes, val_per_fold)?;
    let pick = |names: &[String]| -> Vec<Patient> {
        names.iter().filter_map(|n| patients.iter().find(|p| p.id() == n.as_str())).cloned().collect()
    };
    let mut folds = Vec::with_capacity(plan.folds.len());
    for (k, fold) in plan.folds.iter().enumerate() {
        let cfg = TrainConfig { seed: train_cfg.seed.wrapping_add(k as u64), ..train_cfg.clone() };
        let (train_set, val_set, test_set) = (pick(&fold.train_ids), pick(&fold.val_ids), pick(&fold.test_ids));
        if test_set.iter().any(|t| train_set.iter().any(|p| p.id() == t.id())) {
            return Err(Error::InvalidConfig(format!("fold {k} leaks a test patient into training")));
        }
        let (ckpt, log) = train(model_cfg, &cfg, &train_set, &val_set)?;
        let report = evaluate(&ckpt, &test_set, &cfg.hu_window, cfg.threshold)?;
        folds.push(FoldOutcome {
            fold: k,
            train_ids: fold.train_ids.clone(),
            val_ids: fold.val_ids.clone(),
            test_ids: fold.test_ids.clone(),
            report,
            log,
        });
    }
    let n = folds.len() as f64;
    let mean_dice = folds.iter().map(|f| f.report.mean_dice).sum::<f64>() / n;
    let mean_iou = folds.iter().map(|f| f.report.mean_iou).sum::<f64>() / n;
    Ok(CrossValidation { plan, folds, mean_dice, mean_iou })
}
