//! The TransONet network: residual encoder, transformer bridge, decoder and
//! sigmoid head, with whole-volume inference.
//!
//! Shape table for an `H x H` input (channels after `@`):
//!
//! | stage            | output                 |
//! |------------------|------------------------|
//! | stem (S1)        | `H/2  @ w0`            |
//! | layer1 (S2)      | `H/4  @ w1`            |
//! | layer2 (S3)      | `H/8  @ w2`            |
//! | layer3 (S4)      | `H/16 @ w3`            |
//! | layer4 (bridge)  | `H/32 @ w4`            |
//! | decoder blocks   | `H/16 .. H/2 @ d0..d3` |
//! | head (bilinear)  | `H @ 1`                |

pub mod bridge;
pub mod config;
pub mod decoder;
pub mod encoder;
pub mod layers;
pub mod params;

use alloc::string::String;
use alloc::vec::Vec;

pub use bridge::{Bridge, TransformerLayer};
pub use config::ModelConfig;
pub use decoder::Decoder;
pub use encoder::Encoder;
pub use layers::{Fwd, Gate, Routing, StatUpdate};
pub use params::{Grads, Init, ParamId, ParamSpec, ParamStore, Registry, Role};

use self::bridge::BridgeCache;
use self::decoder::DecoderCache;
use self::encoder::EncoderCache;
use self::layers::{check_finite, Conv};
use crate::error::{Error, Result};
use crate::loss::binarize;
use crate::nn::act::sigmoid;
use crate::nn::conv::ConvGeometry;
use crate::nn::resample::{bilinear2x, bilinear2x_backward};
use crate::nn::Mode;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::volume::{slices_to_batch, HuWindow, MaskVolume, Volume};

/// Vessels cover a few percent of a CTA slice; starting the output bias at
/// the log-odds of a 5% foreground prior saves the optimizer from having to
/// walk every background logit down from zero.
pub const HEAD_PRIOR: f64 = 0.05;
/// `ln(HEAD_PRIOR / (1 - HEAD_PRIOR))`.
pub const HEAD_BIAS_INIT: f64 = -2.944_438_979_166_440_4;

/// Stage name and `[n, c, h, w]` of every intermediate of one forward pass.
pub type ShapeTrace = Vec<(String, [usize; 4])>;

/// Everything the backward pass needs from a forward pass.
pub struct ForwardPass<T> {
    /// Sigmoid probabilities, `(n, 1, H, W)`.
    pub probs: Tensor<T>,
    /// Batch statistics to blend into BN running buffers after a train step.
    pub stats: Vec<StatUpdate<T>>,
    /// Hash of the piecewise-linear region the pass ran in.
    pub region_hash: u64,
    /// ReLU/max-pool decisions, filled only under [`Routing::Record`].
    pub gates: Vec<Gate>,
    pub trace: ShapeTrace,
    encoder: EncoderCache<T>,
    bridge: Option<BridgeCache<T>>,
    decoder: DecoderCache<T>,
    head_in: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct TransONet {
    config: ModelConfig,
    manifest: Vec<ParamSpec>,
    encoder: Encoder,
    bridge: Option<Bridge>,
    decoder: Decoder,
    head: Conv,
}

impl TransONet {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut reg = Registry::default();
        let encoder = Encoder::new(&mut reg, &config);
        let bridge = Bridge::new(&mut reg, &config);
        let decoder = Decoder::new(&mut reg, &config);
        let head = Conv::with_bias_init(
            &mut reg,
            "head.conv",
            ConvGeometry::new(config.decoder_widths[3], config.out_channels, 1, 1, 0),
            Some(Init::Constant(HEAD_BIAS_INIT)),
        );
        Ok(Self { config, manifest: reg.into_specs(), encoder, bridge, decoder, head })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Names, shapes and init rules of every parameter tensor, in store order.
    pub fn manifest(&self) -> &[ParamSpec] {
        &self.manifest
    }

    pub fn init_params<T: Scalar>(&self, seed: u64) -> ParamStore<T> {
        ParamStore::init(&self.manifest, seed)
    }

    fn check_input<T: Scalar>(&self, x: &Tensor<T>) -> Result<()> {
        let hw = self.config.input_hw;
        if x.c != self.config.in_channels || x.h != hw || x.w != hw || x.n == 0 {
            return Err(Error::ShapeMismatch(alloc::format!(
                "model expects (n, {}, {hw}, {hw}), got {:?}",
                self.config.in_channels,
                x.dims()
            )));
        }
        Ok(())
    }

    pub fn forward<T: Scalar>(&self, params: &ParamStore<T>, x: &Tensor<T>, mode: Mode) -> Result<ForwardPass<T>> {
        self.forward_routed(params, x, mode, Routing::Free)
    }

    /// Forward pass that records or replays the ReLU/max-pool decisions.
    pub fn forward_routed<T: Scalar>(
        &self,
        params: &ParamStore<T>,
        x: &Tensor<T>,
        mode: Mode,
        routing: Routing<'_>,
    ) -> Result<ForwardPass<T>> {
        self.check_input(x)?;
        params.check_manifest(&self.manifest)?;
        let mut f = Fwd::new(params, mode).with_routing(routing);
        let mut trace: ShapeTrace = Vec::new();
        let mut note = |name: &str, t: &Tensor<T>| trace.push((String::from(name), t.dims()));
        note("input", x);

        let (enc, encoder) = self.encoder.forward(&mut f, x)?;
        for (name, s) in ["skip1", "skip2", "skip3", "skip4"].iter().zip(&enc.skips) {
            note(name, s);
        }
        note("bridge_in", &enc.bridge_in);
        check_finite(&enc.bridge_in.data, "encoder")?;

        let (bridge_out, bridge) = match &self.bridge {
            Some(b) => {
                let (out, cache) = b.forward(&mut f, &enc.bridge_in)?;
                (out, Some(cache))
            }
            None => (enc.bridge_in.clone(), None),
        };
        note("bridge_out", &bridge_out);
        check_finite(&bridge_out.data, "bridge")?;

        let (dec_out, decoder) = self.decoder.forward(&mut f, &bridge_out, &enc.skips)?;
        for (i, dims) in Decoder::block_dims(&decoder).into_iter().enumerate() {
            trace.push((alloc::format!("decoder{i}"), dims));
        }
        // bilinear upsampling commutes with the 1x1 conv (its weights sum to
        // one), so the conv runs at H/2 and only the logits are upsampled
        let head_in = dec_out;
        let mut probs = bilinear2x(&self.head.forward(&f, &head_in)?);
        probs.data.iter_mut().for_each(|v| *v = sigmoid(*v));
        check_finite(&probs.data, "head")?;
        trace.push((String::from("output"), probs.dims()));

        Ok(ForwardPass {
            probs,
            stats: f.stats,
            region_hash: f.region_hash,
            gates: f.gates,
            trace,
            encoder,
            bridge,
            decoder,
            head_in,
        })
    }

    /// Eval-mode probabilities.
    pub fn predict<T: Scalar>(&self, params: &ParamStore<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward(params, x, Mode::Eval)?.probs)
    }

    /// Gradients of a scalar loss given `dprobs`, its gradient w.r.t. the probabilities.
    pub fn backward<T: Scalar>(
        &self,
        params: &ParamStore<T>,
        pass: &ForwardPass<T>,
        dprobs: &Tensor<T>,
    ) -> Result<Grads<T>> {
        if !pass.probs.same_dims(dprobs) {
            return Err(Error::ShapeMismatch(alloc::format!(
                "probability grad {:?} vs output {:?}",
                dprobs.dims(),
                pass.probs.dims()
            )));
        }
        let mut grads = Grads::zeros_like(params);
        let mut dlogits = dprobs.clone();
        for (d, p) in dlogits.data.iter_mut().zip(&pass.probs.data) {
            *d *= *p * (T::one() - *p);
        }
        let dlogits = bilinear2x_backward(&dlogits);
        let ddec = self.head.backward(params, &pass.head_in, &dlogits, &mut grads, true)?.expect("dx requested");
        let (dbridge_out, dskips) = self.decoder.backward(params, &pass.decoder, ddec, &mut grads)?;
        let dbridge_in = match (&self.bridge, &pass.bridge) {
            (Some(b), Some(cache)) => b.backward(params, cache, dbridge_out, &mut grads)?,
            _ => dbridge_out,
        };
        self.encoder.backward(params, &pass.encoder, dbridge_in, dskips, &mut grads)?;
        Ok(grads)
    }

    /// Encoder stage alone: `(bridge_in, [S1, S2, S3, S4])`.
    pub fn encoder_forward<T: Scalar>(
        &self,
        params: &ParamStore<T>,
        x: &Tensor<T>,
        mode: Mode,
    ) -> Result<(Tensor<T>, [Tensor<T>; 4])> {
        self.check_input(x)?;
        let mut f = Fwd::new(params, mode);
        let (out, _) = self.encoder.forward(&mut f, x)?;
        Ok((out.bridge_in, out.skips))
    }

    /// Bridge stage alone; the identity when there are no transformer layers.
    pub fn bridge_forward<T: Scalar>(
        &self,
        params: &ParamStore<T>,
        bridge_in: &Tensor<T>,
        mode: Mode,
    ) -> Result<Tensor<T>> {
        match &self.bridge {
            Some(b) => Ok(b.forward(&mut Fwd::new(params, mode), bridge_in)?.0),
            None => Ok(bridge_in.clone()),
        }
    }

    pub fn decoder_forward<T: Scalar>(
        &self,
        params: &ParamStore<T>,
        bridge_out: &Tensor<T>,
        skips: &[Tensor<T>; 4],
        mode: Mode,
    ) -> Result<Tensor<T>> {
        Ok(self.decoder.forward(&mut Fwd::new(params, mode), bridge_out, skips)?.0)
    }

    /// Slice-by-slice eval-mode segmentation of a whole volume, `batch` slices at a time.
    pub fn segment_volume<T: Scalar>(
        &self,
        params: &ParamStore<T>,
        volume: &Volume,
        window: &HuWindow,
        threshold: f64,
        batch: usize,
    ) -> Result<MaskVolume> {
        let probs = self.volume_probabilities(params, volume, window, batch)?;
        MaskVolume::new(volume.meta.clone(), binarize(&probs, threshold))
    }

    /// Eval-mode probability for every voxel of `volume`.
    pub fn volume_probabilities<T: Scalar>(
        &self,
        params: &ParamStore<T>,
        volume: &Volume,
        window: &HuWindow,
        batch: usize,
    ) -> Result<Vec<T>> {
        let hw = self.config.input_hw;
        if volume.meta.height != hw || volume.meta.width != hw {
            return Err(Error::DimensionMismatch(alloc::format!(
                "volume slices are {}x{}, model expects {hw}x{hw}",
                volume.meta.height,
                volume.meta.width
            )));
        }
        let zs: Vec<usize> = (0..volume.meta.num_slices).collect();
        let mut out = Vec::with_capacity(volume.meta.voxel_count());
        for chunk in zs.chunks(batch.max(1)) {
            let x = slices_to_batch::<T>(volume, chunk, window)?;
            out.extend_from_slice(&self.predict(params, &x)?.data);
        }
        Ok(out)
    }
}

/// Training metadata stored with a checkpoint.
#[derive(Debug, Clone, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CheckpointMeta {
    pub seed: u64,
    /// Epoch the parameters come from (0 = initialization).
    pub epoch: usize,
    pub train_loss: Option<f64>,
    pub val_iou: Option<f64>,
}

/// A model configuration with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ParamStore<f32>,
    pub meta: CheckpointMeta,
}

impl Checkpoint {
    pub fn network(&self) -> Result<TransONet> {
        let net = TransONet::new(self.config.clone())?;
        self.params.check_manifest(net.manifest())?;
        Ok(net)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{generate, PhantomSpec};
    use alloc::vec;

    fn input(n: usize, hw: usize) -> Tensor<f32> {
        let data = (0..n * 3 * hw * hw).map(|i| ((i * 7919) % 1000) as f32 / 1000.0).collect();
        Tensor::from_vec(n, 3, hw, hw, data).unwrap()
    }

    fn dims_of(trace: &ShapeTrace, stage: &str) -> [usize; 4] {
        trace.iter().find(|(s, _)| s == stage).unwrap().1
    }

    #[test]
    fn shape_trace_at_64() {
        let net = TransONet::new(ModelConfig::new(64)).unwrap();
        let params = net.init_params::<f32>(0);
        let pass = net.forward(&params, &input(1, 64), Mode::Eval).unwrap();
        let t = &pass.trace;
        assert_eq!(dims_of(t, "skip1"), [1, 64, 32, 32]);
        assert_eq!(dims_of(t, "skip2"), [1, 64, 16, 16]);
        assert_eq!(dims_of(t, "skip3"), [1, 128, 8, 8]);
        assert_eq!(dims_of(t, "skip4"), [1, 256, 4, 4]);
        assert_eq!(dims_of(t, "bridge_in"), [1, 512, 2, 2]);
        assert_eq!(dims_of(t, "bridge_out"), [1, 512, 2, 2]);
        assert_eq!(dims_of(t, "decoder0"), [1, 256, 4, 4]);
        assert_eq!(dims_of(t, "decoder1"), [1, 128, 8, 8]);
        assert_eq!(dims_of(t, "decoder2"), [1, 64, 16, 16]);
        assert_eq!(dims_of(t, "decoder3"), [1, 32, 32, 32]);
        assert_eq!(dims_of(t, "output"), [1, 1, 64, 64]);
        let (lo, hi) = pass.probs.data.iter().fold((1.0f32, 0.0f32), |(l, h), &p| (l.min(p), h.max(p)));
        assert!(lo >= 0.0 && hi <= 1.0);
        // batch statistics keep an untrained network away from saturation
        let train = net.forward(&params, &input(2, 64), Mode::Train).unwrap();
        assert!(train.probs.data.iter().all(|&p| p > 1e-3 && p < 1.0 - 1e-3));
    }

    #[test]
    fn manifest_uses_documented_names() {
        let net = TransONet::new(ModelConfig::tiny()).unwrap();
        let names: Vec<&str> = net.manifest().iter().map(|s| s.name.as_str()).collect();
        for n in [
            "encoder.stem.conv.weight",
            "encoder.layer3.block5.bn2.running_var",
            "encoder.layer2.block0.downsample.conv.weight",
            "bridge.pos_embed",
            "bridge.layer0.attn.q.weight",
            "decoder.block2.conv.weight",
            "head.conv.weight",
            "head.conv.bias",
        ] {
            assert!(names.contains(&n), "{n} missing");
        }
        let mut sorted = names.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), names.len());
    }

    #[test]
    fn init_is_seeded() {
        let net = TransONet::new(ModelConfig::tiny()).unwrap();
        let a = net.init_params::<f32>(4);
        assert_eq!(a, net.init_params::<f32>(4));
        assert_ne!(a, net.init_params::<f32>(5));
        assert_eq!(a.by_name("bridge.pos_embed").unwrap().data.iter().filter(|v| **v != 0.0).count(), 0);
        assert!(a.by_name("encoder.stem.bn.running_var").unwrap().data.iter().all(|v| *v == 1.0));
        assert!((HEAD_BIAS_INIT - libm::log(HEAD_PRIOR / (1.0 - HEAD_PRIOR))).abs() < 1e-15);
        assert_eq!(a.by_name("head.conv.bias").unwrap().data, vec![HEAD_BIAS_INIT as f32]);
    }

    #[test]
    fn zero_bridge_layers_pass_features_through() {
        let mut cfg = ModelConfig::tiny();
        cfg.bridge_layers = 0;
        let net = TransONet::new(cfg).unwrap();
        assert!(net.manifest().iter().all(|s| !s.name.starts_with("bridge.")));
        let params = net.init_params::<f32>(1);
        let (bridge_in, _) = net.encoder_forward(&params, &input(2, 32), Mode::Eval).unwrap();
        let out = net.bridge_forward(&params, &bridge_in, Mode::Eval).unwrap();
        assert_eq!(out, bridge_in);
        let probs = net.predict(&params, &input(2, 32)).unwrap();
        assert_eq!(probs.dims(), [2, 1, 32, 32]);
    }

    #[test]
    fn eval_forward_is_deterministic() {
        let net = TransONet::new(ModelConfig::tiny()).unwrap();
        let params = net.init_params::<f32>(2);
        let x = input(2, 32);
        let a = net.predict(&params, &x).unwrap();
        let b = net.predict(&params, &x).unwrap();
        assert_eq!(
            a.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn stage_functions_compose_to_the_full_model() {
        let net = TransONet::new(ModelConfig::tiny()).unwrap();
        let params = net.init_params::<f64>(3);
        let x = input(1, 32).cast::<f64>();
        let (bridge_in, skips) = net.encoder_forward(&params, &x, Mode::Eval).unwrap();
        let bridged = net.bridge_forward(&params, &bridge_in, Mode::Eval).unwrap();
        let dec = net.decoder_forward(&params, &bridged, &skips, Mode::Eval).unwrap();
        assert_eq!(dec.dims(), [1, 4, 16, 16]);
        assert!(net.predict(&params, &x).unwrap().all_finite());
    }

    #[test]
    fn wrong_input_shape_is_rejected() {
        let net = TransONet::new(ModelConfig::tiny()).unwrap();
        let params = net.init_params::<f32>(0);
        assert!(matches!(net.predict(&params, &input(1, 64)), Err(Error::ShapeMismatch(_))));
        let bad = Tensor::<f32>::zeros(1, 1, 32, 32);
        assert!(net.predict(&params, &bad).is_err());
    }

    #[test]
    fn foreign_params_are_rejected() {
        let net = TransONet::new(ModelConfig::tiny()).unwrap();
        let other = TransONet::new(ModelConfig::scaled(32, 4)).unwrap();
        let params = other.init_params::<f32>(0);
        assert!(matches!(net.predict(&params, &input(1, 32)), Err(Error::ManifestMismatch(_))));
    }

    #[test]
    fn segment_volume_contract() {
        let net = TransONet::new(ModelConfig::tiny()).unwrap();
        let params = net.init_params::<f32>(0);
        let (vol, _) = generate(&PhantomSpec::new("p", 3, 32, 32, 1)).unwrap();
        let win = HuWindow::default();
        let mask = net.segment_volume(&params, &vol, &win, 0.5, 2).unwrap();
        assert!(mask.meta.same_dims(&vol.meta));
        let none = net.segment_volume(&params, &vol, &win, 1.0, 2).unwrap();
        assert_eq!(none.count(), 0);
        let (wide, _) = generate(&PhantomSpec::new("w", 2, 64, 64, 1)).unwrap();
        assert!(matches!(net.segment_volume(&params, &wide, &win, 0.5, 2), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn backward_rejects_mismatched_gradient() {
        let net = TransONet::new(ModelConfig::tiny()).unwrap();
        let params = net.init_params::<f32>(0);
        let pass = net.forward(&params, &input(1, 32), Mode::Train).unwrap();
        let wrong = Tensor::<f32>::zeros(2, 1, 32, 32);
        assert!(net.backward(&params, &pass, &wrong).is_err());
        let ok = Tensor::filled(1, 1, 32, 32, 1.0f32);
        let grads = net.backward(&params, &pass, &ok).unwrap();
        assert!(grads.buffers().iter().flatten().all(|g| g.is_finite()));
        let _ = vec![0u8];
    }
}
