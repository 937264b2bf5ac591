//! Finite-difference verification of the analytic model gradient.
//!
//! The loss is BCEJ of a train-mode forward pass on a random batch, in `f64`.
//! Each sampled scalar parameter is nudged by a relative step and a
//! five-point central difference is compared against backprop.
//!
//! A perturbation that flips a ReLU or max-pool decision puts a kink inside
//! the difference quotient. By default the perturbed passes replay the base
//! pass's ReLU masks and pool winners, so the quotient differentiates the same
//! piecewise-smooth branch that backprop does. With `pin_routing` off, draws
//! whose region hash changes are discarded and redrawn instead.
//!
//! The batch has to be large enough that the 1x1 deepest stage of a 32 px
//! input still sees real batch variance; with two images BN there behaves
//! almost like a sign function and no practical step size is small enough.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{bcej_loss, bcej_loss_and_grad, JACCARD_EPS};
use crate::model::{ModelConfig, ParamStore, Role, Routing, TransONet};
use crate::nn::Mode;
use crate::tensor::Tensor;

/// Relative finite-difference step; the step is `REL_STEP * max(|theta|, STEP_FLOOR)`.
pub const REL_STEP: f64 = 1e-3;
pub const STEP_FLOOR: f64 = 1.0;
/// Absolute floor in the relative-error denominator.
pub const ERR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradCheckOptions {
    pub n_samples: usize,
    pub tol: f64,
    pub batch: usize,
    /// Double the analytic gradient of the sample with the largest magnitude
    /// (negative control: the check must then fail).
    pub corrupt: bool,
    /// Replay the base pass's ReLU masks and max-pool winners in the perturbed
    /// passes, so the difference quotient never straddles a kink. When false,
    /// kink-crossing draws are detected by region hash and redrawn.
    pub pin_routing: bool,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { n_samples: 100, tol: 1e-4, batch: 16, corrupt: false, pin_routing: true }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradSample {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub pass: bool,
    /// `name[index]` of the sample with the largest relative error.
    pub worst_param: String,
    pub tol: f64,
    pub seed: u64,
    pub samples: Vec<GradSample>,
    /// Draws rejected because the perturbation crossed a ReLU/max-pool kink.
    pub skipped_kinks: usize,
}

impl GradCheckReport {
    /// Number of checked samples whose parameter name starts with `prefix`.
    pub fn count_prefix(&self, prefix: &str) -> usize {
        self.samples.iter().filter(|s| s.name.starts_with(prefix)).count()
    }
}

pub fn relative_error(a: f64, f: f64) -> f64 {
    (a - f).abs() / a.abs().max(f.abs()).max(ERR_FLOOR)
}

/// Parameter groups that always receive at least one sample before the
/// remaining draws are spread uniformly over trainable tensors.
const REQUIRED_GROUPS: [&str; 8] = [
    "encoder.stem.",
    "encoder.layer",
    "bridge.proj_in.",
    "bridge.pos_embed",
    "bridge.layer0.attn.",
    "bridge.layer0.mlp.",
    "decoder.",
    "head.",
];

/// Images with a random offset, a few Gaussian blobs and mild noise, so deep
/// features differ between images and batch statistics stay well away from
/// the BN epsilon.
fn probe_images(rng: &mut ChaCha8Rng, n: usize, channels: usize, hw: usize) -> Result<Tensor<f64>> {
    let mut data = Vec::with_capacity(n * channels * hw * hw);
    for _ in 0..n {
        let offset = rng.random_range(0.0..0.5);
        let blobs: Vec<[f64; 4]> = (0..3)
            .map(|_| {
                let s = hw as f64;
                [
                    rng.random_range(0.0..s),
                    rng.random_range(0.0..s),
                    rng.random_range(0.1..0.3) * s,
                    rng.random_range(-0.5..1.0),
                ]
            })
            .collect();
        for _ in 0..channels {
            for y in 0..hw {
                for x in 0..hw {
                    let mut v = offset + 0.05 * rng.random::<f64>();
                    for [cx, cy, r, a] in &blobs {
                        let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                        v += a * libm::exp(-d2 / (2.0 * r * r));
                    }
                    data.push(v);
                }
            }
        }
    }
    Tensor::from_vec(n, channels, hw, hw, data)
}

pub fn grad_check(cfg: &ModelConfig, seed: u64, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let net = TransONet::new(cfg.clone())?;
    let mut params: ParamStore<f64> = net.init_params(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);

    let hw = cfg.input_hw;
    let n = opts.batch.max(1);
    let x = probe_images(&mut rng, n, cfg.in_channels, hw)?;
    let y: Vec<f64> = (0..n * hw * hw).map(|_| if rng.random::<f64>() < 0.3 { 1.0 } else { 0.0 }).collect();

    let mode = Mode::Train;
    let routing = if opts.pin_routing { Routing::Record } else { Routing::Free };
    let pass = net.forward_routed(&params, &x, mode, routing)?;
    let gates = pass.gates.clone();
    let (_, dp) = bcej_loss_and_grad(&pass.probs.data, &y, JACCARD_EPS)?;
    let dprobs = Tensor::from_vec(n, 1, hw, hw, dp)?;
    let grads = net.backward(&params, &pass, &dprobs)?;
    let base_hash = pass.region_hash;

    let trainable: Vec<usize> =
        params.tensors().iter().enumerate().filter(|(_, t)| t.role == Role::Trainable).map(|(i, _)| i).collect();
    for &ti in &trainable {
        if grads.get(crate::model::ParamId(ti)).iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient { name: params.tensors()[ti].name.clone() });
        }
    }

    let loss_at = |params: &ParamStore<f64>| -> Result<(f64, u64)> {
        let routing = if opts.pin_routing { Routing::Replay(&gates) } else { Routing::Free };
        let p = net.forward_routed(params, &x, mode, routing)?;
        Ok((bcej_loss(&p.probs.data, &y)?, p.region_hash))
    };

    let mut forced: Vec<usize> = Vec::new();
    for g in REQUIRED_GROUPS {
        if let Some(&ti) = trainable.iter().find(|&&ti| params.tensors()[ti].name.starts_with(g)) {
            forced.push(ti);
        }
    }

    let mut samples = Vec::with_capacity(opts.n_samples);
    let mut skipped = 0usize;
    let mut attempts = 0usize;
    while samples.len() < opts.n_samples {
        attempts += 1;
        if attempts > opts.n_samples * 50 + 100 {
            return Err(Error::InvalidConfig(String::from(
                "gradient check could not find enough kink-free parameters",
            )));
        }
        let ti = match forced.get(samples.len()) {
            Some(&ti) => ti,
            None => trainable[rng.random_range(0..trainable.len())],
        };
        let len = params.tensors()[ti].data.len();
        let idx = rng.random_range(0..len);
        let theta = params.tensors()[ti].data[idx];
        let h = REL_STEP * theta.abs().max(STEP_FLOOR);

        let mut at = |offset: f64| -> Result<(f64, u64)> {
            params.tensors_mut()[ti].data[idx] = theta + offset;
            loss_at(&params)
        };
        let (l1p, h1p) = at(h)?;
        let (l1m, h1m) = at(-h)?;
        let (l2p, h2p) = at(2.0 * h)?;
        let (l2m, h2m) = at(-2.0 * h)?;
        params.tensors_mut()[ti].data[idx] = theta;
        if !opts.pin_routing && [h1p, h1m, h2p, h2m].iter().any(|&x| x != base_hash) {
            skipped += 1;
            continue;
        }
        // five-point stencil: O(h^4) truncation lets h stay large enough to
        // keep cancellation error out of small gradients
        let numeric = (8.0 * (l1p - l1m) - (l2p - l2m)) / (12.0 * h);
        let analytic = grads.get(crate::model::ParamId(ti))[idx];
        samples.push(GradSample {
            name: params.tensors()[ti].name.clone(),
            index: idx,
            analytic,
            numeric,
            rel_err: relative_error(analytic, numeric),
        });
    }

    if opts.corrupt {
        if let Some(s) = samples.iter_mut().max_by(|a, b| a.analytic.abs().total_cmp(&b.analytic.abs())) {
            s.analytic *= 2.0;
            s.rel_err = relative_error(s.analytic, s.numeric);
        }
    }

    let worst = samples.iter().max_by(|a, b| a.rel_err.total_cmp(&b.rel_err));
    let max_rel_err = worst.map_or(0.0, |s| s.rel_err);
    let worst_param = worst.map_or_else(String::new, |s| format!("{}[{}]", s.name, s.index));
    Ok(GradCheckReport {
        max_rel_err,
        pass: max_rel_err <= opts.tol,
        worst_param,
        tol: opts.tol,
        seed,
        samples,
        skipped_kinks: skipped,
    })
}
