use alloc::format;

use rand::Rng;

use crate::error::{dim_err, Result};
use crate::graph::TopologySet;
use crate::learners::TopologyLearner;
use crate::nn::{init_bound, BatchNorm, ConvBn};
use crate::param::{Ctx, ParamId, ParamStore};
use crate::real::Real;
use crate::tape::Var;
use crate::tensor::Tensor;

use super::config::{LayerShape, ModelConfig};

/// Learnable `N_i × N_{i+1}` joint projection.
#[derive(Clone, Debug)]
pub struct ProjectionP {
    pub matrix: ParamId,
    pub n_in: usize,
    pub n_out: usize,
}

impl ProjectionP {
    pub fn new<F: Real>(store: &mut ParamStore<F>, name: &str, n_in: usize, n_out: usize, trainable: bool, rng: &mut impl Rng) -> Self {
        let b = init_bound(n_in);
        let t = Tensor::from_fn(&[n_in, n_out], |_| F::of(rng.random_range(-b..=b)));
        let matrix = store.add(format!("{name}.matrix"), t, trainable);
        Self { matrix, n_in, n_out }
    }
}

/// `X̃ = X·P` along the joint axis of `[B, C, T, N_i]`.
pub fn joint_aggregate<F: Real>(ctx: &mut Ctx<'_, F>, x: Var, p: &ProjectionP) -> Result<Var> {
    let s = ctx.tape.shape(x).to_vec();
    if s.len() != 4 || s[3] != p.n_in {
        return Err(dim_err!("projection expects {} joints, input is {:?}", p.n_in, s));
    }
    let pm = ctx.param(p.matrix);
    let xr = ctx.tape.reshape(x, &[s[0], s[1] * s[2], s[3]])?;
    let y = ctx.tape.matmul(xr, pm)?;
    ctx.tape.reshape(y, &[s[0], s[1], s[2], p.n_out])
}

/// Aggregates `x: [B, C, T, N]` over joints with one graph `[N, N]`, per-sample
/// graphs `[B, N, N]`, or K stacked graphs `[K, N, N]` (`stacked = true`, giving
/// `[B, K·C, T, N]`). Row `i` of a graph holds the weights joint `i` receives.
pub fn graph_aggregate<F: Real>(ctx: &mut Ctx<'_, F>, x: Var, g: Var, stacked: bool) -> Result<Var> {
    let s = ctx.tape.shape(x).to_vec();
    let gs = ctx.tape.shape(g).to_vec();
    if s.len() != 4 || gs.len() < 2 || gs[gs.len() - 1] != s[3] || gs[gs.len() - 2] != s[3] {
        return Err(dim_err!("graph {:?} does not match joints of input {:?}", gs, s));
    }
    let (b, c, t, n) = (s[0], s[1], s[2], s[3]);
    let gt = match gs.len() {
        2 => ctx.tape.permute(g, &[1, 0])?,
        3 => ctx.tape.permute(g, &[0, 2, 1])?,
        _ => return Err(dim_err!("graph must be rank 2 or 3, got {:?}", gs)),
    };
    if stacked {
        let k = gs[0];
        let xr = ctx.tape.reshape(x, &[b, 1, c * t, n])?;
        let y = ctx.tape.matmul(xr, gt)?; // [B,K,CT,N]
        ctx.tape.reshape(y, &[b, k * c, t, n])
    } else {
        if gs.len() == 3 && gs[0] != b {
            return Err(dim_err!("per-sample graphs {:?} do not match batch of input {:?}", gs, s));
        }
        let xr = ctx.tape.reshape(x, &[b, c * t, n])?;
        let y = ctx.tape.matmul(xr, gt)?;
        ctx.tape.reshape(y, &[b, c, t, n])
    }
}

/// `Y = Y_dynamic + λ·Y_static`.
pub fn fuse<F: Real>(ctx: &mut Ctx<'_, F>, y_dynamic: Var, y_static: Var, lambda_static: f64) -> Result<Var> {
    let s = ctx.tape.scale(y_static, F::of(lambda_static));
    ctx.tape.add(y_dynamic, s)
}

/// One Dynamic GConv layer: static + learned-topology graph convolution, TC-block, shortcut.
#[derive(Clone, Debug)]
pub struct DynamicGConvLayer<F> {
    pub shape: LayerShape,
    pub topo: TopologySet<F>,
    /// `[C_out, K·C_in, 1, 1]`: the K static kernels side by side.
    pub static_kernel: ParamId,
    /// `[C_out, C_in, 1, 1]`, present with a learner.
    pub dynamic_kernel: Option<ParamId>,
    pub learner: Option<TopologyLearner>,
    pub lambda_static: f64,
    pub gc_bn: BatchNorm,
    pub tc: ConvBn,
    pub shortcut: Option<ConvBn>,
    pub projection: Option<ProjectionP>,
}

/// Intermediate values of one layer forward.
#[derive(Clone, Copy, Debug)]
pub struct LayerOutput {
    pub out: Var,
    /// Predicted per-sample adjacency, when the layer has a learner.
    pub graph: Option<Var>,
    /// Output before the joint projection.
    pub pre_projection: Var,
}

impl<F: Real> DynamicGConvLayer<F> {
    pub fn new(
        store: &mut ParamStore<F>,
        name: &str,
        cfg: &ModelConfig,
        shape: LayerShape,
        topo: TopologySet<F>,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if topo.n_joints() != shape.n_in {
            return Err(dim_err!("topology has {} joints, layer expects {}", topo.n_joints(), shape.n_in));
        }
        let k = topo.k();
        let static_kernel =
            store.add_uniform(format!("{name}.static.weight"), &[shape.c_out, k * shape.c_in, 1, 1], init_bound(shape.c_in), rng);
        let learner = TopologyLearner::build(
            cfg.learner,
            store,
            &format!("{name}.learner"),
            shape.c_in,
            shape.t_in,
            shape.n_in,
            cfg.cen_final_relu,
            rng,
        );
        let dynamic_kernel = learner.as_ref().map(|_| {
            store.add_uniform(format!("{name}.dynamic.weight"), &[shape.c_out, shape.c_in, 1, 1], init_bound(shape.c_in), rng)
        });
        let gc_bn = BatchNorm::new(store, &format!("{name}.gc_bn"), shape.c_out);
        let pad = cfg.tc_kernel / 2;
        let tc = ConvBn::new(store, &format!("{name}.tc"), shape.c_out, shape.c_out, cfg.tc_kernel, shape.stride, pad, false, rng);
        let shortcut = (!shape.identity_shortcut())
            .then(|| ConvBn::new(store, &format!("{name}.shortcut"), shape.c_in, shape.c_out, 1, shape.stride, 0, false, rng));
        let projection = shape
            .has_projection()
            .then(|| ProjectionP::new(store, &format!("{name}.projection"), shape.n_in, shape.n_out, cfg.projection_trainable, rng));
        Ok(Self { shape, topo, static_kernel, dynamic_kernel, learner, lambda_static: cfg.lambda_static, gc_bn, tc, shortcut, projection })
    }

    /// `Σ_k (G_physical,k + G_mask,k) X W_k`.
    pub fn static_branch(&self, ctx: &mut Ctx<'_, F>, x: Var) -> Result<Var> {
        let g = self.topo.graphs(ctx)?;
        let agg = graph_aggregate(ctx, x, g, true)?;
        let w = ctx.param(self.static_kernel);
        ctx.tape.conv2d(agg, w, 1, 0)
    }

    /// `G_global X W′` with one graph per sample.
    pub fn dynamic_branch(&self, ctx: &mut Ctx<'_, F>, x: Var, g: Var) -> Result<Var> {
        let kernel = self.dynamic_kernel.ok_or_else(|| dim_err!("layer has no dynamic branch"))?;
        let agg = graph_aggregate(ctx, x, g, false)?;
        let w = ctx.param(kernel);
        ctx.tape.conv2d(agg, w, 1, 0)
    }

    pub fn forward(&self, ctx: &mut Ctx<'_, F>, x: Var) -> Result<LayerOutput> {
        let s = ctx.tape.shape(x).to_vec();
        let want = [self.shape.c_in, self.shape.t_in, self.shape.n_in];
        if s.len() != 4 || s[1..] != want {
            return Err(dim_err!("layer expects [B, {}, {}, {}], got {:?}", want[0], want[1], want[2], s));
        }
        let y_static = self.static_branch(ctx, x)?;
        let (y, graph) = match &self.learner {
            Some(learner) => {
                let g = learner.forward(ctx, x)?;
                let y_dyn = self.dynamic_branch(ctx, x, g)?;
                (fuse(ctx, y_dyn, y_static, self.lambda_static)?, Some(g))
            }
            None => (ctx.tape.scale(y_static, F::of(self.lambda_static)), None),
        };
        let y = self.gc_bn.forward(ctx, y)?;
        let y = ctx.tape.relu(y);
        let y = self.tc.forward(ctx, y)?;
        let res = match &self.shortcut {
            Some(sc) => sc.forward(ctx, x)?,
            None => x,
        };
        let y = ctx.tape.add(y, res)?;
        let y = ctx.tape.relu(y);
        let out = match &self.projection {
            Some(p) => joint_aggregate(ctx, y, p)?,
            None => y,
        };
        Ok(LayerOutput { out, graph, pre_projection: y })
    }
}
