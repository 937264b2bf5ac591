//! Parameter-bound wrappers over the [`nn`](crate::nn) kernels.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::params::{Grads, Init, ParamId, ParamStore, Registry, Role};
use crate::error::Result;
use crate::nn::conv::{conv2d, conv2d_backward, ConvGeometry};
use crate::nn::linear::{linear, linear_backward};
use crate::nn::norm::{
    batch_norm, batch_norm_backward, layer_norm, layer_norm_backward, BatchNormCache, BatchNormStats, LayerNormCache,
};
use crate::nn::Mode;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Batch statistics to fold into a BN layer's running buffers.
#[derive(Debug, Clone)]
pub struct StatUpdate<T> {
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub stats: BatchNormStats<T>,
}

impl<T: Scalar> StatUpdate<T> {
    pub fn apply(&self, params: &mut ParamStore<T>) {
        let mut mean = params.get(self.running_mean).to_vec();
        let mut var = params.get(self.running_var).to_vec();
        self.stats.blend_into(&mut mean, &mut var);
        params.get_mut(self.running_mean).copy_from_slice(&mean);
        params.get_mut(self.running_var).copy_from_slice(&var);
    }
}

/// One piecewise-linear routing decision: which ReLU outputs were active, or
/// which input each max-pool output selected.
#[derive(Debug, Clone, PartialEq)]
pub enum Gate {
    Relu(Vec<bool>),
    Pool(Vec<u32>),
}

/// How a forward pass treats ReLU and max-pool decisions.
#[derive(Debug, Clone, Copy, Default)]
pub enum Routing<'a> {
    /// Decide from the values, nothing kept.
    #[default]
    Free,
    /// Decide from the values and keep every decision.
    Record,
    /// Reuse the decisions of an earlier pass, in order.
    Replay(&'a [Gate]),
}

/// State threaded through a forward pass.
pub struct Fwd<'a, T> {
    pub params: &'a ParamStore<T>,
    pub mode: Mode,
    pub stats: Vec<StatUpdate<T>>,
    /// FNV-1a hash over every piecewise-linear branch taken (ReLU signs, pool
    /// winners); two passes with equal hashes lie in the same linear region.
    pub region_hash: u64,
    pub routing: Routing<'a>,
    pub gates: Vec<Gate>,
    cursor: usize,
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

impl<'a, T: Scalar> Fwd<'a, T> {
    pub fn new(params: &'a ParamStore<T>, mode: Mode) -> Self {
        Self {
            params,
            mode,
            stats: Vec::new(),
            region_hash: FNV_OFFSET,
            routing: Routing::Free,
            gates: Vec::new(),
            cursor: 0,
        }
    }

    pub fn with_routing(mut self, routing: Routing<'a>) -> Self {
        self.routing = routing;
        self
    }

    /// The next replayed decision, if replaying.
    pub fn next_gate(&mut self) -> Option<&'a Gate> {
        match self.routing {
            Routing::Replay(gates) => {
                let g = gates.get(self.cursor);
                self.cursor += 1;
                g
            }
            _ => None,
        }
    }

    #[inline]
    fn mix(&mut self, v: u64) {
        self.region_hash = (self.region_hash ^ v).wrapping_mul(FNV_PRIME);
    }

    pub fn record_relu(&mut self, out: &[T]) {
        let mut word = 0u64;
        for (i, v) in out.iter().enumerate() {
            word = (word << 1) | u64::from(*v > T::zero());
            if i % 64 == 63 {
                self.mix(word);
                word = 0;
            }
        }
        self.mix(word);
    }

    pub fn record_argmax(&mut self, idx: &[u32]) {
        for i in idx {
            self.mix(u64::from(*i));
        }
    }
}

pub fn relu_forward<T: Scalar>(f: &mut Fwd<'_, T>, mut x: Tensor<T>) -> Tensor<T> {
    match f.next_gate() {
        Some(Gate::Relu(mask)) if mask.len() == x.data.len() => {
            for (v, on) in x.data.iter_mut().zip(mask) {
                if !on {
                    *v = T::zero();
                }
            }
        }
        _ => crate::nn::act::relu_inplace(&mut x.data),
    }
    f.record_relu(&x.data);
    if matches!(f.routing, Routing::Record) {
        f.gates.push(Gate::Relu(x.data.iter().map(|v| *v > T::zero()).collect()));
    }
    x
}

/// Max pooling that honours [`Routing`].
pub fn max_pool_forward<T: Scalar>(
    f: &mut Fwd<'_, T>,
    x: &Tensor<T>,
    k: usize,
    stride: usize,
    pad: usize,
) -> Result<(Tensor<T>, Vec<u32>)> {
    let (mut out, mut argmax) = crate::nn::pool::max_pool2d(x, k, stride, pad)?;
    if let Some(Gate::Pool(fixed)) = f.next_gate() {
        if fixed.len() == argmax.len() {
            for (o, &i) in out.data.iter_mut().zip(fixed) {
                *o = x.data[i as usize];
            }
            argmax.clone_from(fixed);
        }
    }
    f.record_argmax(&argmax);
    if matches!(f.routing, Routing::Record) {
        f.gates.push(Gate::Pool(argmax.clone()));
    }
    Ok((out, argmax))
}

pub fn relu_backward<T: Scalar>(out: &Tensor<T>, mut dy: Tensor<T>) -> Tensor<T> {
    crate::nn::act::relu_backward_inplace(&out.data, &mut dy.data);
    dy
}

#[derive(Debug, Clone)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub geom: ConvGeometry,
}

impl Conv {
    pub fn new(reg: &mut Registry, prefix: &str, geom: ConvGeometry, bias: bool) -> Self {
        Self::with_bias_init(reg, prefix, geom, bias.then_some(Init::Zeros))
    }

    /// A conv whose bias (if any) starts from `bias_init` instead of zero.
    pub fn with_bias_init(reg: &mut Registry, prefix: &str, geom: ConvGeometry, bias_init: Option<Init>) -> Self {
        let fan_in = geom.in_c * geom.k * geom.k;
        let weight = reg.add(
            format!("{prefix}.weight"),
            vec![geom.out_c, geom.in_c, geom.k, geom.k],
            Init::KaimingUniform { fan_in },
            Role::Trainable,
        );
        let bias = bias_init.map(|init| reg.add(format!("{prefix}.bias"), vec![geom.out_c], init, Role::Trainable));
        Self { weight, bias, geom }
    }

    pub fn forward<T: Scalar>(&self, f: &Fwd<'_, T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        conv2d(x, f.params.get(self.weight), self.bias.map(|b| f.params.get(b)), &self.geom)
    }

    pub fn backward<T: Scalar>(
        &self,
        params: &ParamStore<T>,
        x: &Tensor<T>,
        dy: &Tensor<T>,
        grads: &mut Grads<T>,
        need_dx: bool,
    ) -> Result<Option<Tensor<T>>> {
        let w = params.get(self.weight);
        match self.bias {
            Some(b) => {
                let (dw, db) = grads.pair_mut(self.weight, b);
                conv2d_backward(x, w, dy, &self.geom, dw, Some(db), need_dx)
            }
            None => conv2d_backward(x, w, dy, &self.geom, grads.get_mut(self.weight), None, need_dx),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm {
    pub fn new(reg: &mut Registry, prefix: &str, channels: usize) -> Self {
        let c = vec![channels];
        Self {
            gamma: reg.add(format!("{prefix}.weight"), c.clone(), Init::Ones, Role::Trainable),
            beta: reg.add(format!("{prefix}.bias"), c.clone(), Init::Zeros, Role::Trainable),
            running_mean: reg.add(format!("{prefix}.running_mean"), c.clone(), Init::Zeros, Role::Buffer),
            running_var: reg.add(format!("{prefix}.running_var"), c, Init::Ones, Role::Buffer),
        }
    }

    pub fn forward<T: Scalar>(&self, f: &mut Fwd<'_, T>, x: &Tensor<T>) -> Result<(Tensor<T>, BatchNormCache<T>)> {
        let p = f.params;
        let (y, cache, stats) = batch_norm(
            x,
            p.get(self.gamma),
            p.get(self.beta),
            p.get(self.running_mean),
            p.get(self.running_var),
            f.mode,
        )?;
        if let Some(stats) = stats {
            f.stats.push(StatUpdate { running_mean: self.running_mean, running_var: self.running_var, stats });
        }
        Ok((y, cache))
    }

    pub fn backward<T: Scalar>(
        &self,
        params: &ParamStore<T>,
        cache: &BatchNormCache<T>,
        dy: &Tensor<T>,
        grads: &mut Grads<T>,
    ) -> Tensor<T> {
        let (dg, db) = grads.pair_mut(self.gamma, self.beta);
        batch_norm_backward(cache, params.get(self.gamma), dy, dg, db)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub dim: usize,
}

impl LayerNorm {
    pub fn new(reg: &mut Registry, prefix: &str, dim: usize) -> Self {
        Self {
            gamma: reg.add(format!("{prefix}.weight"), vec![dim], Init::Ones, Role::Trainable),
            beta: reg.add(format!("{prefix}.bias"), vec![dim], Init::Zeros, Role::Trainable),
            dim,
        }
    }

    pub fn forward<T: Scalar>(&self, f: &Fwd<'_, T>, x: &[T]) -> Result<(Vec<T>, LayerNormCache<T>)> {
        layer_norm(x, self.dim, f.params.get(self.gamma), f.params.get(self.beta))
    }

    pub fn backward<T: Scalar>(
        &self,
        params: &ParamStore<T>,
        cache: &LayerNormCache<T>,
        dy: &[T],
        grads: &mut Grads<T>,
    ) -> Vec<T> {
        let (dg, db) = grads.pair_mut(self.gamma, self.beta);
        layer_norm_backward(cache, params.get(self.gamma), dy, dg, db)
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(reg: &mut Registry, prefix: &str, in_dim: usize, out_dim: usize, init: Init) -> Self {
        Self {
            weight: reg.add(format!("{prefix}.weight"), vec![out_dim, in_dim], init, Role::Trainable),
            bias: reg.add(format!("{prefix}.bias"), vec![out_dim], Init::Zeros, Role::Trainable),
            in_dim,
            out_dim,
        }
    }

    pub fn kaiming(reg: &mut Registry, prefix: &str, in_dim: usize, out_dim: usize) -> Self {
        Self::new(reg, prefix, in_dim, out_dim, Init::KaimingUniform { fan_in: in_dim })
    }

    pub fn forward<T: Scalar>(&self, f: &Fwd<'_, T>, x: &[T]) -> Result<Vec<T>> {
        let rows = x.len() / self.in_dim.max(1);
        linear(x, rows, self.in_dim, f.params.get(self.weight), Some(f.params.get(self.bias)), self.out_dim)
    }

    pub fn backward<T: Scalar>(&self, params: &ParamStore<T>, x: &[T], dy: &[T], grads: &mut Grads<T>) -> Vec<T> {
        let rows = x.len() / self.in_dim;
        let (dw, db) = grads.pair_mut(self.weight, self.bias);
        linear_backward(x, rows, self.in_dim, params.get(self.weight), self.out_dim, dy, dw, Some(db))
    }
}

/// Fails with [`Error::NonFiniteActivation`](crate::Error::NonFiniteActivation)
/// naming `stage` if any value is NaN or infinite.
pub fn check_finite<T: Scalar>(values: &[T], stage: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(crate::Error::NonFiniteActivation { stage: String::from(stage) })
    }
}
