use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::graph::DEFAULT_ALPHA_DEGREE;
use crate::learners::LearnerKind;

/// Architecture hyperparameters of a Dynamic GCN.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(deny_unknown_fields))]
pub struct ModelConfig {
    /// Built-in layout name (`ntu25`, `openpose18`).
    pub layout: String,
    pub in_channels: usize,
    /// Input frames after resizing.
    pub frames: usize,
    /// Persons per sample, folded into the batch axis.
    pub persons: usize,
    /// Output channels per layer.
    pub channels: Vec<usize>,
    /// Temporal stride per layer.
    pub strides: Vec<usize>,
    /// Temporal kernel size of the TC-block (odd).
    pub tc_kernel: usize,
    /// Weight of the static branch in `Y = Y_dynamic + λ·Y_static`.
    pub lambda_static: f64,
    pub learner: LearnerKind,
    /// ReLU after the final context-encoder convolution.
    pub cen_final_relu: bool,
    /// Joint aggregation rate; `N_{i+1} = round(alpha_agg · N_i)`.
    pub alpha_agg: f64,
    /// 1-based layer numbers followed by a joint projection.
    pub aggregate_after: Vec<usize>,
    pub projection_trainable: bool,
    pub alpha_degree: f64,
    pub n_classes: usize,
}

/// Static shape facts about one layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerShape {
    pub c_in: usize,
    pub c_out: usize,
    pub t_in: usize,
    pub t_out: usize,
    pub n_in: usize,
    /// Joint count after the optional projection.
    pub n_out: usize,
    pub stride: usize,
}

impl LayerShape {
    pub fn has_projection(&self) -> bool {
        self.n_out != self.n_in
    }

    pub fn identity_shortcut(&self) -> bool {
        self.c_in == self.c_out && self.stride == 1
    }
}

pub fn aggregated_joints(n: usize, alpha: f64) -> usize {
    (num_traits::Float::round(alpha * n as f64) as usize).max(1)
}

impl ModelConfig {
    /// 10 layers on NTU-style input: 25 joints, 64 frames, 60 classes.
    pub fn ntu_like() -> Self {
        Self {
            layout: "ntu25".to_string(),
            in_channels: 3,
            frames: 64,
            persons: 1,
            channels: vec![64, 64, 64, 64, 128, 128, 128, 256, 256, 256],
            strides: vec![1, 1, 1, 1, 2, 1, 1, 2, 1, 1],
            tc_kernel: 9,
            lambda_static: 1.0,
            learner: LearnerKind::Cen,
            cen_final_relu: true,
            alpha_agg: 0.6,
            aggregate_after: vec![5, 8],
            projection_trainable: true,
            alpha_degree: DEFAULT_ALPHA_DEGREE,
            n_classes: 60,
        }
    }

    /// Same network on OpenPose-18 input: 150 frames, 400 classes.
    pub fn kinetics_like() -> Self {
        Self { layout: "openpose18".to_string(), frames: 150, n_classes: 400, ..Self::ntu_like() }
    }

    /// Two small layers for quick runs.
    pub fn smoke() -> Self {
        Self {
            layout: "ntu25".to_string(),
            frames: 16,
            persons: 1,
            channels: vec![8, 16],
            strides: vec![1, 2],
            aggregate_after: vec![],
            n_classes: 2,
            ..Self::ntu_like()
        }
    }

    /// Four layers (16/16/32/32) used for the synthetic benchmarks.
    pub fn reduced(n_classes: usize, frames: usize) -> Self {
        Self {
            frames,
            persons: 1,
            channels: vec![16, 16, 32, 32],
            strides: vec![1, 1, 2, 1],
            aggregate_after: vec![],
            n_classes,
            ..Self::ntu_like()
        }
    }

    /// One layer, 3 → 4 channels, on a three-joint chain over 4 frames.
    pub fn toy() -> Self {
        Self {
            layout: "chain3".to_string(),
            frames: 4,
            persons: 1,
            channels: vec![4],
            strides: vec![1],
            aggregate_after: vec![],
            n_classes: 2,
            ..Self::ntu_like()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "ntu-like" => Ok(Self::ntu_like()),
            "kinetics-like" => Ok(Self::kinetics_like()),
            "smoke" => Ok(Self::smoke()),
            "toy" => Ok(Self::toy()),
            other => Err(Error::Config(alloc::format!("unknown preset '{other}' (ntu-like, kinetics-like, smoke, toy)"))),
        }
    }

    pub fn num_layers(&self) -> usize {
        self.channels.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.channels.is_empty() {
            return bad("at least one layer is required");
        }
        if self.strides.len() != self.channels.len() {
            return bad("strides and channels must have one entry per layer");
        }
        if self.channels.contains(&0) || self.strides.contains(&0) {
            return bad("channels and strides must be positive");
        }
        if self.tc_kernel % 2 == 0 {
            return bad("tc_kernel must be odd");
        }
        if !(self.alpha_agg > 0.0 && self.alpha_agg <= 1.0) {
            return bad("alpha_agg must lie in (0, 1]");
        }
        if self.aggregate_after.iter().any(|&l| l == 0 || l > self.channels.len()) {
            return bad("aggregate_after entries must be layer numbers in 1..=layers");
        }
        if !(self.lambda_static >= 0.0) {
            return bad("lambda_static must be nonnegative");
        }
        if self.learner == LearnerKind::None && self.lambda_static == 0.0 {
            return bad("with no topology learner lambda_static must be positive");
        }
        if self.in_channels == 0 || self.frames == 0 || self.persons == 0 || self.n_classes == 0 {
            return bad("in_channels, frames, persons and n_classes must be positive");
        }
        if !(self.alpha_degree > 0.0) {
            return bad("alpha_degree must be positive");
        }
        Ok(())
    }

    /// Per-layer shapes for an input skeleton of `joints` joints.
    pub fn layer_plan(&self, joints: usize) -> Vec<LayerShape> {
        let pad = self.tc_kernel / 2;
        let (mut c, mut t, mut n) = (self.in_channels, self.frames, joints);
        let mut plan = Vec::with_capacity(self.channels.len());
        for (i, (&c_out, &stride)) in self.channels.iter().zip(&self.strides).enumerate() {
            let t_out = (t + 2 * pad - self.tc_kernel) / stride + 1;
            let n_out = if self.aggregate_after.contains(&(i + 1)) { aggregated_joints(n, self.alpha_agg) } else { n };
            plan.push(LayerShape { c_in: c, c_out, t_in: t, t_out, n_in: n, n_out, stride });
            (c, t, n) = (c_out, t_out, n_out);
        }
        plan
    }
}
