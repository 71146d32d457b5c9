use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{dim_err, Error, Result};
use crate::graph::{SkeletonLayout, TopologySet};
use crate::nn::{BatchNorm, Linear};
use crate::param::{Ctx, ParamStore};
use crate::real::Real;
use crate::tape::Var;

use super::config::{LayerShape, ModelConfig};
use super::layer::DynamicGConvLayer;

/// Stacked Dynamic GConv layers, global pooling and a linear classifier.
///
/// Parameters live in a [`ParamStore`]; the model only holds their ids.
/// Input is `[B·M, C, T, N]` with the `M` persons of a sample adjacent.
#[derive(Clone, Debug)]
pub struct DynamicGcn<F> {
    config: ModelConfig,
    layout: SkeletonLayout,
    plan: Vec<LayerShape>,
    data_bn: BatchNorm,
    layers: Vec<DynamicGConvLayer<F>>,
    classifier: Linear,
}

/// Logits plus per-layer observations from one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    pub logits: Var,
    /// Output shape of every layer, after any projection.
    pub layer_shapes: Vec<Vec<usize>>,
    /// Learned per-sample adjacency `[B·M, N, N]` of every layer with a learner.
    pub graphs: Vec<Option<Var>>,
}

impl<F: Real> DynamicGcn<F> {
    /// Builds the model for `config.layout` (a built-in layout name).
    pub fn from_config(config: &ModelConfig, store: &mut ParamStore<F>, rng: &mut impl Rng) -> Result<Self> {
        let layout = SkeletonLayout::builtin(&config.layout)?;
        Self::new(config, layout, store, rng)
    }

    pub fn new(config: &ModelConfig, layout: SkeletonLayout, store: &mut ParamStore<F>, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let plan = config.layer_plan(layout.n_joints());
        let data_bn = BatchNorm::new(store, "data_bn", config.in_channels * layout.n_joints());
        let mut layers = Vec::with_capacity(plan.len());
        for (i, &shape) in plan.iter().enumerate() {
            let name = format!("layer{}", i + 1);
            let topo = if shape.n_in == layout.n_joints() {
                TopologySet::new(&layout, config.alpha_degree, store, &name)?
            } else {
                TopologySet::self_loops(shape.n_in, config.alpha_degree, store, &name)?
            };
            layers.push(DynamicGConvLayer::new(store, &name, config, shape, topo, rng)?);
        }
        let c_last = plan.last().map(|s| s.c_out).unwrap_or(config.in_channels);
        let classifier = Linear::new(store, "classifier", c_last, config.n_classes, rng);
        Ok(Self { config: config.clone(), layout, plan, data_bn, layers, classifier })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &SkeletonLayout {
        &self.layout
    }

    pub fn plan(&self) -> &[LayerShape] {
        &self.plan
    }

    pub fn layers(&self) -> &[DynamicGConvLayer<F>] {
        &self.layers
    }

    /// Expected input shape for `batch` samples.
    pub fn input_shape(&self, batch: usize) -> [usize; 4] {
        [batch * self.config.persons, self.config.in_channels, self.config.frames, self.layout.n_joints()]
    }

    pub fn forward(&self, ctx: &mut Ctx<'_, F>, x: Var) -> Result<Var> {
        Ok(self.forward_traced(ctx, x)?.logits)
    }

    pub fn forward_traced(&self, ctx: &mut Ctx<'_, F>, x: Var) -> Result<ForwardTrace> {
        let s = ctx.tape.shape(x).to_vec();
        let m = self.config.persons;
        let want = self.input_shape(1);
        if s.len() != 4 || s[1..] != want[1..] || s[0] == 0 || s[0] % m != 0 {
            return Err(Error::Config(format!(
                "input {:?} does not match the model: expected [B*{m}, {}, {}, {}]",
                s, want[1], want[2], want[3]
            )));
        }
        let (bm, c, t, n) = (s[0], s[1], s[2], s[3]);
        // BN over (C, N) jointly, statistics over batch and time.
        let h = ctx.tape.permute(x, &[0, 1, 3, 2])?;
        let h = ctx.tape.reshape(h, &[bm, c * n, t])?;
        let h = self.data_bn.forward(ctx, h)?;
        let h = ctx.tape.reshape(h, &[bm, c, n, t])?;
        let mut h = ctx.tape.permute(h, &[0, 1, 3, 2])?;

        let mut layer_shapes = Vec::with_capacity(self.layers.len());
        let mut graphs = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let o = layer.forward(ctx, h)?;
            h = o.out;
            layer_shapes.push(ctx.tape.shape(h).to_vec());
            graphs.push(o.graph);
        }
        let pooled = ctx.tape.mean_pool_global(h)?;
        let pooled = if m > 1 {
            let ch = ctx.tape.shape(pooled)[1];
            let r = ctx.tape.reshape(pooled, &[bm / m, m, ch])?;
            ctx.tape.mean_axis(r, 1)?
        } else {
            pooled
        };
        let logits = self.classifier.forward(ctx, pooled)?;
        Ok(ForwardTrace { logits, layer_shapes, graphs })
    }
}

/// Elementwise sum of per-stream logits.
pub fn ensemble_logits<F: Real>(logit_sets: &[crate::Tensor<F>]) -> Result<crate::Tensor<F>> {
    let first = logit_sets.first().ok_or_else(|| Error::Validation("no logits to ensemble".into()))?;
    let mut acc = first.clone();
    for l in &logit_sets[1..] {
        if l.shape() != acc.shape() {
            return Err(dim_err!("logit shapes differ: {:?} vs {:?}", acc.shape(), l.shape()));
        }
        for (a, &b) in acc.data_mut().iter_mut().zip(l.data()) {
            *a += b;
        }
    }
    Ok(acc)
}
