//! Parameterized building blocks shared by the learners and the network.

use alloc::format;

use rand::Rng;

use crate::error::Result;
use crate::param::{Ctx, ParamId, ParamStore, StatsId};
use crate::real::Real;
use crate::tape::Var;
use crate::tensor::Tensor;

/// Fan-in scaled uniform bound.
pub fn init_bound(fan_in: usize) -> f64 {
    1.0 / num_traits::Float::sqrt(fan_in.max(1) as f64)
}

/// t×1 convolution without bias (every conv here feeds a batch norm).
#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new<F: Real>(
        store: &mut ParamStore<F>,
        name: &str,
        c_in: usize,
        c_out: usize,
        kt: usize,
        stride: usize,
        pad: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = store.add_uniform(format!("{name}.weight"), &[c_out, c_in, kt, 1], init_bound(c_in * kt), rng);
        Self { weight, stride, pad }
    }

    pub fn forward<F: Real>(&self, ctx: &mut Ctx<'_, F>, x: Var) -> Result<Var> {
        let w = ctx.param(self.weight);
        ctx.tape.conv2d(x, w, self.stride, self.pad)
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub stats: StatsId,
}

impl BatchNorm {
    pub fn new<F: Real>(store: &mut ParamStore<F>, name: &str, channels: usize) -> Self {
        let gamma = store.add(format!("{name}.gamma"), Tensor::full(&[channels], F::one()), true);
        let beta = store.add(format!("{name}.beta"), Tensor::zeros(&[channels]), true);
        let stats = store.add_stats(name, channels);
        Self { gamma, beta, stats }
    }

    pub fn forward<F: Real>(&self, ctx: &mut Ctx<'_, F>, x: Var) -> Result<Var> {
        ctx.batch_norm(x, self.gamma, self.beta, self.stats)
    }
}

/// Conv → BN → optional ReLU.
#[derive(Clone, Debug)]
pub struct ConvBn {
    pub conv: Conv,
    pub bn: BatchNorm,
    pub relu: bool,
}

impl ConvBn {
    #[allow(clippy::too_many_arguments)]
    pub fn new<F: Real>(
        store: &mut ParamStore<F>,
        name: &str,
        c_in: usize,
        c_out: usize,
        kt: usize,
        stride: usize,
        pad: usize,
        relu: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let conv = Conv::new(store, &format!("{name}.conv"), c_in, c_out, kt, stride, pad, rng);
        let bn = BatchNorm::new(store, &format!("{name}.bn"), c_out);
        Self { conv, bn, relu }
    }

    pub fn pointwise<F: Real>(store: &mut ParamStore<F>, name: &str, c_in: usize, c_out: usize, relu: bool, rng: &mut impl Rng) -> Self {
        Self::new(store, name, c_in, c_out, 1, 1, 0, relu, rng)
    }

    pub fn forward<F: Real>(&self, ctx: &mut Ctx<'_, F>, x: Var) -> Result<Var> {
        let h = self.conv.forward(ctx, x)?;
        let h = self.bn.forward(ctx, h)?;
        Ok(if self.relu { ctx.tape.relu(h) } else { h })
    }
}

/// `y = x · W + b` over `[B, in]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<F: Real>(store: &mut ParamStore<F>, name: &str, d_in: usize, d_out: usize, rng: &mut impl Rng) -> Self {
        let weight = store.add_uniform(format!("{name}.weight"), &[d_in, d_out], init_bound(d_in), rng);
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[d_out]), true);
        Self { weight, bias }
    }

    pub fn forward<F: Real>(&self, ctx: &mut Ctx<'_, F>, x: Var) -> Result<Var> {
        let (w, b) = (ctx.param(self.weight), ctx.param(self.bias));
        let y = ctx.tape.matmul(x, w)?;
        ctx.tape.add_bias(y, b, 1)
    }
}
