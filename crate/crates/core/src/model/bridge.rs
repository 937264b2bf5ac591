//! Transformer bridge between the encoder and decoder.
//!
//! The `h x w x C` bridge input is flattened to `h*w` tokens, projected to
//! `d_model`, given learned positional embeddings and passed through pre-norm
//! transformer layers. A final layer norm and a projection back to `C`
//! channels are followed by reshaping to `h x w x C`, a per-pixel layer norm
//! over channels and a 3x3 convolution with ReLU.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::layers::{relu_backward, relu_forward, Conv, Fwd, LayerNorm, Linear};
use super::params::{Grads, Init, ParamId, ParamStore, Registry, Role};
use super::ModelConfig;
use crate::error::{shape_err, Result};
use crate::nn::act::{gelu, gelu_grad};
use crate::nn::attention::{attention_core, attention_core_backward, AttentionCore};
use crate::nn::conv::ConvGeometry;
use crate::nn::norm::LayerNormCache;
use crate::scalar::Scalar;
use crate::tensor::{Tensor, Tokens};

const TRANSFORMER_INIT: Init = Init::Normal { std: 0.02 };

/// Pre-norm layer: `y = x + MHA(LN(x))`, `out = y + MLP(LN(y))`.
#[derive(Debug, Clone)]
pub struct TransformerLayer {
    ln1: LayerNorm,
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    ln2: LayerNorm,
    fc1: Linear,
    fc2: Linear,
    heads: usize,
    dim: usize,
}

pub struct TransformerCache<T> {
    batch: usize,
    len: usize,
    ln1: LayerNormCache<T>,
    ln1_out: Vec<T>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    core: AttentionCore<T>,
    ln2: LayerNormCache<T>,
    ln2_out: Vec<T>,
    hidden: Vec<T>,
    activated: Vec<T>,
}

impl TransformerLayer {
    pub fn new(reg: &mut Registry, prefix: &str, dim: usize, heads: usize, mlp_ratio: usize) -> Self {
        let lin = |reg: &mut Registry, name: &str, i, o| {
            Linear::new(reg, &format!("{prefix}.{name}"), i, o, TRANSFORMER_INIT)
        };
        Self {
            ln1: LayerNorm::new(reg, &format!("{prefix}.ln1"), dim),
            q: lin(reg, "attn.q", dim, dim),
            k: lin(reg, "attn.k", dim, dim),
            v: lin(reg, "attn.v", dim, dim),
            o: lin(reg, "attn.o", dim, dim),
            ln2: LayerNorm::new(reg, &format!("{prefix}.ln2"), dim),
            fc1: lin(reg, "mlp.fc1", dim, mlp_ratio * dim),
            fc2: lin(reg, "mlp.fc2", mlp_ratio * dim, dim),
            heads,
            dim,
        }
    }

    pub fn forward<T: Scalar>(&self, f: &Fwd<'_, T>, x: &Tokens<T>) -> Result<(Tokens<T>, TransformerCache<T>)> {
        if x.dim != self.dim {
            return Err(shape_err!("transformer layer expects dim {}, got {}", self.dim, x.dim));
        }
        let (ln1_out, ln1) = self.ln1.forward(f, &x.data)?;
        let q = self.q.forward(f, &ln1_out)?;
        let k = self.k.forward(f, &ln1_out)?;
        let v = self.v.forward(f, &ln1_out)?;
        let core = attention_core(&q, &k, &v, x.batch, x.len, self.dim, self.heads)?;
        let attn = self.o.forward(f, &core.context)?;
        let y: Vec<T> = x.data.iter().zip(&attn).map(|(a, b)| *a + *b).collect();
        let (ln2_out, ln2) = self.ln2.forward(f, &y)?;
        let hidden = self.fc1.forward(f, &ln2_out)?;
        let activated: Vec<T> = hidden.iter().map(|v| gelu(*v)).collect();
        let mlp = self.fc2.forward(f, &activated)?;
        let out: Vec<T> = y.iter().zip(&mlp).map(|(a, b)| *a + *b).collect();
        let cache = TransformerCache {
            batch: x.batch,
            len: x.len,
            ln1,
            ln1_out,
            q,
            k,
            v,
            core,
            ln2,
            ln2_out,
            hidden,
            activated,
        };
        Ok((Tokens::from_vec(x.batch, x.len, self.dim, out)?, cache))
    }

    pub fn backward<T: Scalar>(
        &self,
        params: &ParamStore<T>,
        c: &TransformerCache<T>,
        dout: &[T],
        grads: &mut Grads<T>,
    ) -> Vec<T> {
        // MLP branch
        let dact = self.fc2.backward(params, &c.activated, dout, grads);
        let dhidden: Vec<T> = dact.iter().zip(&c.hidden).map(|(d, h)| *d * gelu_grad(*h)).collect();
        let dln2 = self.fc1.backward(params, &c.ln2_out, &dhidden, grads);
        let dy_mlp = self.ln2.backward(params, &c.ln2, &dln2, grads);
        let dy: Vec<T> = dout.iter().zip(&dy_mlp).map(|(a, b)| *a + *b).collect();
        // attention branch
        let dcontext = self.o.backward(params, &c.core.context, &dy, grads);
        let (dq, dk, dv) = attention_core_backward(&c.core, &c.q, &c.k, &c.v, &dcontext);
        let mut dln1 = self.q.backward(params, &c.ln1_out, &dq, grads);
        for (a, b) in dln1.iter_mut().zip(self.k.backward(params, &c.ln1_out, &dk, grads)) {
            *a += b;
        }
        for (a, b) in dln1.iter_mut().zip(self.v.backward(params, &c.ln1_out, &dv, grads)) {
            *a += b;
        }
        let dx_attn = self.ln1.backward(params, &c.ln1, &dln1, grads);
        debug_assert_eq!(dx_attn.len(), c.batch * c.len * self.dim);
        dy.iter().zip(&dx_attn).map(|(a, b)| *a + *b).collect()
    }
}

#[derive(Debug, Clone)]
pub struct Bridge {
    proj_in: Linear,
    pos_embed: ParamId,
    layers: Vec<TransformerLayer>,
    norm: LayerNorm,
    proj_out: Linear,
    out_norm: LayerNorm,
    conv: Conv,
    hw: usize,
    channels: usize,
    d_model: usize,
}

pub struct BridgeCache<T> {
    tokens_in: Vec<T>,
    layers: Vec<TransformerCache<T>>,
    norm: LayerNormCache<T>,
    normed: Vec<T>,
    out_norm: LayerNormCache<T>,
    conv_in: Tensor<T>,
    out: Tensor<T>,
    batch: usize,
}

impl Bridge {
    /// `None` when the config has no transformer layers.
    pub fn new(reg: &mut Registry, cfg: &ModelConfig) -> Option<Self> {
        if cfg.bridge_layers == 0 {
            return None;
        }
        let c = cfg.encoder_widths[4];
        let d = cfg.d_model;
        let proj_in = Linear::kaiming(reg, "bridge.proj_in", c, d);
        let pos_embed = reg.add("bridge.pos_embed".into(), vec![cfg.bridge_tokens(), d], Init::Zeros, Role::Trainable);
        let layers = (0..cfg.bridge_layers)
            .map(|i| TransformerLayer::new(reg, &format!("bridge.layer{i}"), d, cfg.num_heads, cfg.mlp_ratio))
            .collect();
        let norm = LayerNorm::new(reg, "bridge.norm", d);
        let proj_out = Linear::kaiming(reg, "bridge.proj_out", d, c);
        let out_norm = LayerNorm::new(reg, "bridge.out_norm", c);
        let conv = Conv::new(reg, "bridge.conv", ConvGeometry::new(c, c, 3, 1, 1), true);
        Some(Self {
            proj_in,
            pos_embed,
            layers,
            norm,
            proj_out,
            out_norm,
            conv,
            hw: cfg.bridge_hw(),
            channels: c,
            d_model: d,
        })
    }

    pub fn forward<T: Scalar>(&self, f: &mut Fwd<'_, T>, x: &Tensor<T>) -> Result<(Tensor<T>, BridgeCache<T>)> {
        if x.c != self.channels || x.h != self.hw || x.w != self.hw {
            return Err(shape_err!("bridge expects {}x{}x{}, got {:?}", self.hw, self.hw, self.channels, x.dims()));
        }
        let tokens_in = Tokens::from_map(x);
        let (batch, len) = (tokens_in.batch, tokens_in.len);
        let mut t = self.proj_in.forward(f, &tokens_in.data)?;
        let pos = f.params.get(self.pos_embed);
        for row_block in t.chunks_mut(len * self.d_model) {
            row_block.iter_mut().zip(pos).for_each(|(a, p)| *a += *p);
        }
        let mut cur = Tokens::from_vec(batch, len, self.d_model, t)?;
        let mut layer_caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (next, cache) = layer.forward(f, &cur)?;
            layer_caches.push(cache);
            cur = next;
        }
        let (normed, norm) = self.norm.forward(f, &cur.data)?;
        let projected = self.proj_out.forward(f, &normed)?;
        let (on, out_norm) = self.out_norm.forward(f, &projected)?;
        let conv_in = Tokens::from_vec(batch, len, self.channels, on)?.to_map(self.hw, self.hw)?;
        let out = relu_forward(f, self.conv.forward(f, &conv_in)?);
        let cache = BridgeCache {
            tokens_in: tokens_in.data,
            layers: layer_caches,
            norm,
            normed,
            out_norm,
            conv_in,
            out: out.clone(),
            batch,
        };
        Ok((out, cache))
    }

    pub fn backward<T: Scalar>(
        &self,
        params: &ParamStore<T>,
        cache: &BridgeCache<T>,
        dout: Tensor<T>,
        grads: &mut Grads<T>,
    ) -> Result<Tensor<T>> {
        let dconv = relu_backward(&cache.out, dout);
        let dmap = self.conv.backward(params, &cache.conv_in, &dconv, grads, true)?.expect("dx requested");
        let dtok = Tokens::from_map(&dmap);
        let dproj = self.out_norm.backward(params, &cache.out_norm, &dtok.data, grads);
        let dnormed = self.proj_out.backward(params, &cache.normed, &dproj, grads);
        let mut d = self.norm.backward(params, &cache.norm, &dnormed, grads);
        for (layer, lc) in self.layers.iter().zip(&cache.layers).rev() {
            d = layer.backward(params, lc, &d, grads);
        }
        let len = self.hw * self.hw;
        {
            let dpos = grads.get_mut(self.pos_embed);
            for row_block in d.chunks(len * self.d_model) {
                dpos.iter_mut().zip(row_block).for_each(|(a, g)| *a += *g);
            }
        }
        let dtokens_in = self.proj_in.backward(params, &cache.tokens_in, &d, grads);
        Tokens::from_vec(cache.batch, len, self.channels, dtokens_in)?.to_map(self.hw, self.hw)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::params::Grads;
    use crate::nn::Mode;

    fn layer_with_params(zero_outputs: bool) -> (TransformerLayer, ParamStore<f64>) {
        let mut reg = Registry::default();
        let layer = TransformerLayer::new(&mut reg, "t", 8, 2, 2);
        let mut params = ParamStore::init(&reg.into_specs(), 3);
        if zero_outputs {
            for name in ["t.attn.o.weight", "t.attn.o.bias", "t.mlp.fc2.weight", "t.mlp.fc2.bias"] {
                params.by_name_mut(name).unwrap().data.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        (layer, params)
    }

    fn tokens() -> Tokens<f64> {
        Tokens::from_vec(2, 3, 8, (0..48).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap()
    }

    #[test]
    fn zero_output_projections_give_identity() {
        let (layer, params) = layer_with_params(true);
        let f = Fwd::new(&params, Mode::Eval);
        let x = tokens();
        let (y, cache) = layer.forward(&f, &x).unwrap();
        assert_eq!(y.data, x.data);
        // residual paths still pass the gradient straight through
        let mut grads = Grads::zeros_like(&params);
        let dout: Vec<f64> = (0..48).map(|i| i as f64).collect();
        let dx = layer.backward(&params, &cache, &dout, &mut grads);
        assert_eq!(dx, dout);
    }

    #[test]
    fn layer_mixes_tokens() {
        let (layer, params) = layer_with_params(false);
        let f = Fwd::new(&params, Mode::Eval);
        let x = tokens();
        let (y, _) = layer.forward(&f, &x).unwrap();
        // changing the last token of the first image moves the first token's output
        let mut x2 = x.clone();
        x2.data[2 * 8] += 1.0;
        let (y2, _) = layer.forward(&f, &x2).unwrap();
        assert!((0..8).any(|i| (y.data[i] - y2.data[i]).abs() > 1e-9));
        // the second image is untouched
        assert_eq!(&y.data[24..], &y2.data[24..]);
    }

    #[test]
    fn rejects_wrong_dim() {
        let (layer, params) = layer_with_params(false);
        let f = Fwd::new(&params, Mode::Eval);
        assert!(layer.forward(&f, &Tokens::<f64>::zeros(1, 2, 6)).is_err());
    }
}
