//! Trainable parameters, batch-norm buffers, and the forward context that binds them to a tape.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::real::Real;
use crate::tape::{BnSettings, RunningStats, Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StatsId(usize);

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter<F> {
    pub name: String,
    pub value: Tensor<F>,
    pub grad: Option<Vec<F>>,
    pub momentum: Vec<F>,
    /// Frozen parameters are fed to the tape without gradient.
    pub trainable: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedStats<F> {
    pub name: String,
    pub stats: RunningStats<F>,
}

/// Owns every parameter and running-statistics buffer of a model.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<F> {
    params: Vec<Parameter<F>>,
    stats: Vec<NamedStats<F>>,
}

impl<F: Real> ParamStore<F> {
    pub fn new() -> Self {
        Self { params: Vec::new(), stats: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<F>, trainable: bool) -> ParamId {
        let momentum = vec![F::zero(); value.numel()];
        self.params.push(Parameter { name: name.into(), value, grad: None, momentum, trainable });
        ParamId(self.params.len() - 1)
    }

    /// Uniform in `[-bound, bound]`.
    pub fn add_uniform(&mut self, name: impl Into<String>, shape: &[usize], bound: f64, rng: &mut impl Rng) -> ParamId {
        let t = Tensor::from_fn(shape, |_| F::of(rng.random_range(-bound..=bound)));
        self.add(name, t, true)
    }

    pub fn add_stats(&mut self, name: impl Into<String>, channels: usize) -> StatsId {
        self.stats.push(NamedStats { name: name.into(), stats: RunningStats::new(channels) });
        StatsId(self.stats.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Parameter<F> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<F> {
        &mut self.params[id.0]
    }

    pub fn stats(&self, id: StatsId) -> &RunningStats<F> {
        &self.stats[id.0].stats
    }

    pub fn stats_mut(&mut self, id: StatsId) -> &mut RunningStats<F> {
        &mut self.stats[id.0].stats
    }

    pub fn params(&self) -> &[Parameter<F>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter<F>] {
        &mut self.params
    }

    pub fn all_stats(&self) -> &[NamedStats<F>] {
        &self.stats
    }

    pub fn all_stats_mut(&mut self) -> &mut [NamedStats<F>] {
        &mut self.stats
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Copy of the store in another precision (momentum and grads dropped).
    pub fn cast<G: Real>(&self) -> ParamStore<G> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Parameter {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    grad: None,
                    momentum: vec![G::zero(); p.value.numel()],
                    trainable: p.trainable,
                })
                .collect(),
            stats: self
                .stats
                .iter()
                .map(|s| NamedStats {
                    name: s.name.clone(),
                    stats: RunningStats {
                        mean: s.stats.mean.iter().map(|&v| G::of(v.as_f64())).collect(),
                        var: s.stats.var.iter().map(|&v| G::of(v.as_f64())).collect(),
                    },
                })
                .collect(),
        }
    }

    /// Overwrites values of parameters and stats from another store with identical layout.
    pub fn load_values(&mut self, other: &ParamStore<F>) -> Result<()> {
        if other.params.len() != self.params.len() || other.stats.len() != self.stats.len() {
            return Err(invalid!("parameter layout differs"));
        }
        for (dst, src) in self.params.iter_mut().zip(&other.params) {
            if dst.name != src.name || dst.value.shape() != src.value.shape() {
                return Err(invalid!("parameter {} does not match {} {:?}", dst.name, src.name, src.value.shape()));
            }
            dst.value = src.value.clone();
        }
        for (dst, src) in self.stats.iter_mut().zip(&other.stats) {
            if dst.name != src.name || dst.stats.mean.len() != src.stats.mean.len() {
                return Err(invalid!("stats {} does not match {}", dst.name, src.name));
            }
            dst.stats = src.stats.clone();
        }
        Ok(())
    }
}

/// One forward pass: a fresh tape plus the parameter bindings made on it.
pub struct Ctx<'s, F: Real> {
    pub tape: Tape<F>,
    store: &'s mut ParamStore<F>,
    training: bool,
    bn_eps: f64,
    bn_momentum: f64,
    bound: Vec<Option<Var>>,
}

impl<'s, F: Real> Ctx<'s, F> {
    pub fn new(store: &'s mut ParamStore<F>, training: bool) -> Self {
        let n = store.params.len();
        Self { tape: Tape::new(), store, training, bn_eps: 1e-5, bn_momentum: 0.1, bound: vec![None; n] }
    }

    pub fn training(&self) -> bool {
        self.training
    }

    pub fn store(&self) -> &ParamStore<F> {
        self.store
    }

    /// Tape variable for a parameter, created on first use.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let p = &self.store.params[id.0];
        let v = self.tape.leaf(p.value.clone(), p.trainable);
        self.bound[id.0] = Some(v);
        v
    }

    pub fn batch_norm(&mut self, x: Var, gamma: ParamId, beta: ParamId, stats: StatsId) -> Result<Var> {
        let (g, b) = (self.param(gamma), self.param(beta));
        let settings = BnSettings { eps: self.bn_eps, momentum: self.bn_momentum, training: self.training };
        self.tape.batch_norm(x, g, b, &mut self.store.stats[stats.0].stats, settings)
    }

    /// Backpropagates `loss` and accumulates into each bound trainable parameter's `grad`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let mut grads = self.tape.backward(loss)?;
        for (i, b) in self.bound.iter().enumerate() {
            let Some(v) = b else { continue };
            let p = &mut self.store.params[i];
            if !p.trainable {
                continue;
            }
            let g = grads.take(*v).unwrap_or_else(|| vec![F::zero(); p.value.numel()]);
            match &mut p.grad {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &x)| *a += x),
                None => p.grad = Some(g),
            }
        }
        Ok(())
    }
}

impl<F: Real> core::fmt::Debug for Ctx<'_, F> {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("Ctx").field("nodes", &self.tape.len()).field("training", &self.training).finish()
    }
}

pub(crate) fn state_err(msg: String) -> Error {
    Error::State(msg)
}
