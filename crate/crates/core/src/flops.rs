//! Analytical operation counts.
//!
//! Counts are 2 × multiply-adds per sample over convolutions, adjacency
//! products, projections and the classifier. Normalization, activations,
//! pooling and residual additions are tallied separately as minor ops and are
//! not part of the totals.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{dim_err, Error, Result};
use crate::graph::{SkeletonLayout, NUM_CONFIGS};
use crate::learners::{LearnerKind, NonLocalParams};
use crate::model::ModelConfig;

/// `2·C_in·C_out·k_t·k_n·T_out·N_out` for `in_shape = [C_in, T, N]` and
/// `kernel_shape = [C_out, C_in, k_t, k_n]`; padding applies to time only.
pub fn count_conv_flops(in_shape: [usize; 3], kernel_shape: [usize; 4], stride: usize, pad: usize) -> Result<u64> {
    let [c_in, t, n] = in_shape;
    let [c_out, kc, kt, kn] = kernel_shape;
    if kc != c_in {
        return Err(dim_err!("kernel expects {kc} input channels, input has {c_in}"));
    }
    if in_shape.contains(&0) || kernel_shape.contains(&0) || stride == 0 {
        return Err(dim_err!("zero-sized convolution: input {:?}, kernel {:?}, stride {stride}", in_shape, kernel_shape));
    }
    if kt > t + 2 * pad || kn > n {
        return Err(dim_err!("kernel {:?} larger than padded input {:?}", kernel_shape, in_shape));
    }
    let t_out = (t + 2 * pad - kt) / stride + 1;
    let n_out = n - kn + 1;
    Ok(2 * (c_in * c_out * kt * kn * t_out * n_out) as u64)
}

/// `matrices · 2·N²·C·T`: products of `matrices` adjacency matrices with a `[C, T, N]` map.
pub fn count_graph_mult_flops(n: usize, c: usize, t: usize, matrices: usize) -> u64 {
    (matrices * 2 * n * n * c * t) as u64
}

fn conv1(c_in: usize, c_out: usize, positions: usize) -> u64 {
    (2 * c_in * c_out * positions) as u64
}

/// Costs attributed to one named layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerCost {
    pub name: String,
    /// `[C, T, N]` entering the layer.
    pub input_shape: [usize; 3],
    pub output_shape: [usize; 3],
    /// Named terms summing to `flops`.
    pub parts: Vec<(&'static str, u64)>,
    pub flops: u64,
    pub minor_ops: u64,
}

impl LayerCost {
    fn new(name: String, input_shape: [usize; 3], output_shape: [usize; 3]) -> Self {
        Self { name, input_shape, output_shape, parts: Vec::new(), flops: 0, minor_ops: 0 }
    }

    fn add(&mut self, part: &'static str, flops: u64) {
        self.parts.push((part, flops));
        self.flops += flops;
    }

    pub fn part(&self, name: &str) -> u64 {
        self.parts.iter().filter(|(p, _)| *p == name).map(|&(_, f)| f).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CostReport {
    pub layers: Vec<LayerCost>,
    /// Per-sample multiplier applied to every count (persons per sample).
    pub bodies: usize,
    pub include_learner: bool,
    pub total: u64,
    pub minor_ops: u64,
}

/// Cost of `config` on its built-in layout. `include_cen` adds the topology
/// learner and the dynamic branch it feeds.
pub fn count_model_flops(config: &ModelConfig, include_cen: bool) -> Result<CostReport> {
    let layout = SkeletonLayout::builtin(&config.layout)?;
    count_model_flops_for(config, layout.n_joints(), include_cen)
}

pub fn count_model_flops_for(config: &ModelConfig, joints: usize, include_cen: bool) -> Result<CostReport> {
    config.validate()?;
    if joints == 0 {
        return Err(Error::Config("joint count must be positive".into()));
    }
    let m = config.persons as u64;
    let mut layers = Vec::new();
    let (c0, t0) = (config.in_channels, config.frames);

    let mut data_bn = LayerCost::new("data_bn".into(), [c0, t0, joints], [c0, t0, joints]);
    data_bn.minor_ops = 2 * (c0 * t0 * joints) as u64;
    layers.push(data_bn);

    let plan = config.layer_plan(joints);
    for (i, s) in plan.iter().enumerate() {
        let (c, co, t, to, n) = (s.c_in, s.c_out, s.t_in, s.t_out, s.n_in);
        let mut l = LayerCost::new(format!("layer{}", i + 1), [c, t, n], [co, to, s.n_out]);
        l.add("static_graph", count_graph_mult_flops(n, c, t, NUM_CONFIGS));
        l.add("static_conv", conv1(NUM_CONFIGS * c, co, t * n));
        let learner = include_cen && config.learner != LearnerKind::None;
        if learner {
            add_learner_terms(&mut l, config.learner, c, t, n);
            l.add("dynamic_graph", count_graph_mult_flops(n, c, t, 1));
            l.add("dynamic_conv", conv1(c, co, t * n));
        }
        l.add("tc", count_conv_flops([co, t, n], [co, co, config.tc_kernel, 1], s.stride, config.tc_kernel / 2)?);
        if !s.identity_shortcut() {
            l.add("shortcut", count_conv_flops([c, t, n], [co, c, 1, 1], s.stride, 0)?);
        }
        if s.has_projection() {
            l.add("projection", (2 * co * to * n * s.n_out) as u64);
        }
        let gc = (co * t * n) as u64;
        let out = (co * to * n) as u64;
        // BN + ReLU after fusion, TC BN, residual add, ReLU.
        let mut minor = 3 * gc + 2 * out + 2 * out;
        if learner {
            minor += 2 * gc + 3 * (n * n) as u64;
        }
        if !s.identity_shortcut() {
            minor += 2 * out;
        }
        l.minor_ops = minor;
        layers.push(l);
    }

    let last = plan.last().expect("validated config has layers");
    let mut head = LayerCost::new("classifier".into(), [last.c_out, last.t_out, last.n_out], [config.n_classes, 1, 1]);
    head.add("linear", (2 * last.c_out * config.n_classes) as u64);
    head.minor_ops = (last.c_out * last.t_out * last.n_out) as u64;
    layers.push(head);

    for l in &mut layers {
        for p in &mut l.parts {
            p.1 *= m;
        }
        l.flops *= m;
        l.minor_ops *= m;
    }
    let total = layers.iter().map(|l| l.flops).sum();
    let minor_ops = layers.iter().map(|l| l.minor_ops).sum();
    Ok(CostReport { layers, bodies: config.persons, include_learner: include_cen, total, minor_ops })
}

fn add_learner_terms(l: &mut LayerCost, kind: LearnerKind, c: usize, t: usize, n: usize) {
    let nn = n * n;
    match kind {
        LearnerKind::Cen | LearnerKind::CenSymmetric => {
            l.add("cen_conv_c", conv1(c, 1, t * n));
            l.add("cen_conv_t", conv1(t, 1, n));
            l.add("cen_conv_n", conv1(n, nn, 1));
        }
        LearnerKind::CenFeature => {
            l.add("cen_conv_t", conv1(t, 1, c * n));
            l.add("cen_conv_n", conv1(n, 1, c));
            l.add("cen_conv_c", conv1(c, nn, 1));
        }
        LearnerKind::CenTemporal => {
            l.add("cen_conv_c", conv1(c, 1, t * n));
            l.add("cen_conv_n", conv1(n, 1, t));
            l.add("cen_conv_t", conv1(t, nn, 1));
        }
        LearnerKind::NonLocal => {
            let e = NonLocalParams::default_embed(c);
            l.add("nonlocal_embed", 2 * conv1(c, e, t * n));
            l.add("nonlocal_affinity", (2 * nn * e) as u64);
        }
        LearnerKind::None => {}
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OverheadRow {
    pub name: String,
    pub base: u64,
    pub other: u64,
    pub delta: i128,
    /// `(other − base) / base`, 0 when both are 0.
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OverheadReport {
    pub rows: Vec<OverheadRow>,
    pub total: OverheadRow,
}

fn row(name: String, base: u64, other: u64) -> OverheadRow {
    let delta = other as i128 - base as i128;
    let ratio = if base == 0 { if other == 0 { 0.0 } else { f64::INFINITY } } else { delta as f64 / base as f64 };
    OverheadRow { name, base, other, delta, ratio }
}

/// Per-layer and total change from `a` to `b`.
pub fn overhead_report(a: &CostReport, b: &CostReport) -> Result<OverheadReport> {
    let names = |r: &CostReport| r.layers.iter().map(|l| l.name.clone()).collect::<Vec<_>>();
    if names(a) != names(b) {
        return Err(Error::Validation(format!("reports cover different layers: {:?} vs {:?}", names(a), names(b))));
    }
    let rows = a.layers.iter().zip(&b.layers).map(|(x, y)| row(x.name.clone(), x.flops, y.flops)).collect();
    Ok(OverheadReport { rows, total: row("total".into(), a.total, b.total) })
}
