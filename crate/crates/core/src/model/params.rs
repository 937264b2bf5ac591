//! Named parameter tensors, their manifest and initialization.
//!
//! Names follow `<part>.<sub-part>...<tensor>`, for example
//! `encoder.stem.conv.weight`, `encoder.layer2.block0.downsample.bn.running_var`,
//! `bridge.layer0.attn.q.weight`, `decoder.block2.conv.weight` and
//! `head.conv.bias`.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// `U(-sqrt(6 / fan_in), sqrt(6 / fan_in))`.
    KaimingUniform {
        fan_in: usize,
    },
    Normal {
        std: f64,
    },
    Zeros,
    Ones,
    /// Every element set to the given value.
    Constant(f64),
}

/// Trainable parameters receive gradients; buffers (BN running statistics) do not.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Trainable,
    Buffer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
    pub role: Role,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Collects parameter specs while an architecture is assembled.
#[derive(Debug, Default)]
pub struct Registry {
    specs: Vec<ParamSpec>,
}

impl Registry {
    pub fn add(&mut self, name: String, shape: Vec<usize>, init: Init, role: Role) -> ParamId {
        self.specs.push(ParamSpec { name, shape, init, role });
        ParamId(self.specs.len() - 1)
    }

    pub fn into_specs(self) -> Vec<ParamSpec> {
        self.specs
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub role: Role,
    pub data: Vec<T>,
}

/// Parameter tensors in manifest order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    tensors: Vec<ParamTensor<T>>,
    index: BTreeMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    /// Zero-filled store following `manifest`.
    pub fn zeros(manifest: &[ParamSpec]) -> Self {
        let tensors = manifest
            .iter()
            .map(|s| ParamTensor {
                name: s.name.clone(),
                shape: s.shape.clone(),
                role: s.role,
                data: vec![T::zero(); s.numel()],
            })
            .collect();
        Self::from_tensors(tensors)
    }

    fn from_tensors(tensors: Vec<ParamTensor<T>>) -> Self {
        let index = tensors.iter().enumerate().map(|(i, t)| (t.name.clone(), i)).collect();
        Self { tensors, index }
    }

    /// Initializes every tensor per its [`Init`] rule from one seeded stream.
    ///
    /// Values are drawn in `f64` so stores of different precision built from the
    /// same seed agree up to rounding.
    pub fn init(manifest: &[ParamSpec], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = Self::zeros(manifest);
        for (t, spec) in store.tensors.iter_mut().zip(manifest) {
            match spec.init {
                Init::KaimingUniform { fan_in } => {
                    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
                    for v in &mut t.data {
                        *v = T::from_f64_lossy(rng.random_range(-bound..bound));
                    }
                }
                Init::Normal { std } => {
                    let dist = Normal::new(0.0, std).expect("positive std");
                    for v in &mut t.data {
                        *v = T::from_f64_lossy(dist.sample(&mut rng));
                    }
                }
                Init::Zeros => {}
                Init::Ones => t.data.iter_mut().for_each(|v| *v = T::one()),
                Init::Constant(c) => t.data.iter_mut().for_each(|v| *v = T::from_f64_lossy(c)),
            }
        }
        store
    }

    /// Builds a store from named tensors, which must match `manifest` exactly.
    pub fn from_named(manifest: &[ParamSpec], mut named: BTreeMap<String, (Vec<usize>, Vec<T>)>) -> Result<Self> {
        let mut tensors = Vec::with_capacity(manifest.len());
        for spec in manifest {
            let (shape, data) = named
                .remove(&spec.name)
                .ok_or_else(|| Error::ManifestMismatch(alloc::format!("missing tensor {}", spec.name)))?;
            if shape != spec.shape || data.len() != spec.numel() {
                return Err(Error::ManifestMismatch(alloc::format!(
                    "{} has shape {:?}, expected {:?}",
                    spec.name,
                    shape,
                    spec.shape
                )));
            }
            tensors.push(ParamTensor { name: spec.name.clone(), shape, role: spec.role, data });
        }
        if let Some(extra) = named.keys().next() {
            return Err(Error::ManifestMismatch(alloc::format!("unexpected tensor {extra}")));
        }
        Ok(Self::from_tensors(tensors))
    }

    /// Checks names, order and shapes against `manifest`.
    pub fn check_manifest(&self, manifest: &[ParamSpec]) -> Result<()> {
        if self.tensors.len() != manifest.len() {
            return Err(Error::ManifestMismatch(alloc::format!(
                "{} tensors, manifest lists {}",
                self.tensors.len(),
                manifest.len()
            )));
        }
        for (t, s) in self.tensors.iter().zip(manifest) {
            if t.name != s.name || t.shape != s.shape {
                return Err(Error::ManifestMismatch(alloc::format!(
                    "{} {:?} vs manifest {} {:?}",
                    t.name,
                    t.shape,
                    s.name,
                    s.shape
                )));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn get(&self, id: ParamId) -> &[T] {
        &self.tensors[id.0].data
    }

    #[inline]
    pub fn get_mut(&mut self, id: ParamId) -> &mut [T] {
        &mut self.tensors[id.0].data
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|i| ParamId(*i))
    }

    pub fn by_name(&self, name: &str) -> Option<&ParamTensor<T>> {
        self.index.get(name).map(|i| &self.tensors[*i])
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut ParamTensor<T>> {
        self.index.get(name).copied().map(move |i| &mut self.tensors[i])
    }

    pub fn tensors(&self) -> &[ParamTensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [ParamTensor<T>] {
        &mut self.tensors
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        let tensors = self
            .tensors
            .iter()
            .map(|t| ParamTensor {
                name: t.name.clone(),
                shape: t.shape.clone(),
                role: t.role,
                data: t.data.iter().map(|v| U::from_f64_lossy(v.as_f64())).collect(),
            })
            .collect();
        ParamStore::from_tensors(tensors)
    }
}

/// Gradient buffers aligned with a [`ParamStore`]; buffers stay empty.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads<T> {
    bufs: Vec<Vec<T>>,
}

impl<T: Scalar> Grads<T> {
    pub fn zeros_like(params: &ParamStore<T>) -> Self {
        let bufs = params
            .tensors()
            .iter()
            .map(|t| match t.role {
                Role::Trainable => vec![T::zero(); t.data.len()],
                Role::Buffer => Vec::new(),
            })
            .collect();
        Self { bufs }
    }

    #[inline]
    pub fn get(&self, id: ParamId) -> &[T] {
        &self.bufs[id.0]
    }

    #[inline]
    pub fn get_mut(&mut self, id: ParamId) -> &mut [T] {
        &mut self.bufs[id.0]
    }

    /// Two distinct gradient buffers at once.
    pub fn pair_mut(&mut self, a: ParamId, b: ParamId) -> (&mut [T], &mut [T]) {
        assert_ne!(a, b, "pair_mut needs distinct ids");
        if a.0 < b.0 {
            let (lo, hi) = self.bufs.split_at_mut(b.0);
            (&mut lo[a.0], &mut hi[0])
        } else {
            let (lo, hi) = self.bufs.split_at_mut(a.0);
            (&mut hi[0], &mut lo[b.0])
        }
    }

    pub fn buffers(&self) -> &[Vec<T>] {
        &self.bufs
    }

    pub fn buffers_mut(&mut self) -> &mut [Vec<T>] {
        &mut self.bufs
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest() -> Vec<ParamSpec> {
        let mut r = Registry::default();
        r.add("a.weight".into(), vec![2, 3], Init::KaimingUniform { fan_in: 3 }, Role::Trainable);
        r.add("a.bias".into(), vec![2], Init::Zeros, Role::Trainable);
        r.add("a.var".into(), vec![2], Init::Ones, Role::Buffer);
        r.add("b.weight".into(), vec![4], Init::Normal { std: 0.02 }, Role::Trainable);
        r.into_specs()
    }

    #[test]
    fn init_is_deterministic_and_seed_sensitive() {
        let m = manifest();
        let a = ParamStore::<f32>::init(&m, 1);
        assert_eq!(a, ParamStore::<f32>::init(&m, 1));
        assert_ne!(a, ParamStore::<f32>::init(&m, 2));
        let bound = (6.0f32 / 3.0).sqrt();
        assert!(a.get(ParamId(0)).iter().all(|v| v.abs() <= bound));
        assert_eq!(a.get(ParamId(1)), &[0.0, 0.0]);
        assert_eq!(a.get(ParamId(2)), &[1.0, 1.0]);
        a.check_manifest(&m).unwrap();
    }

    #[test]
    fn from_named_rejects_missing_and_extra() {
        let m = manifest();
        let store = ParamStore::<f64>::init(&m, 0);
        let mut named: BTreeMap<_, _> =
            store.tensors().iter().map(|t| (t.name.clone(), (t.shape.clone(), t.data.clone()))).collect();
        assert_eq!(ParamStore::from_named(&m, named.clone()).unwrap(), store);
        named.insert("extra".into(), (vec![1], vec![0.0]));
        assert!(matches!(ParamStore::from_named(&m, named.clone()), Err(Error::ManifestMismatch(_))));
        named.remove("extra");
        named.remove("a.bias");
        assert!(matches!(ParamStore::from_named(&m, named), Err(Error::ManifestMismatch(_))));
    }

    #[test]
    fn grads_skip_buffers() {
        let store = ParamStore::<f32>::init(&manifest(), 0);
        let mut g = Grads::zeros_like(&store);
        assert!(g.get(ParamId(2)).is_empty());
        let (a, b) = g.pair_mut(ParamId(3), ParamId(0));
        assert_eq!((a.len(), b.len()), (4, 6));
    }
}
