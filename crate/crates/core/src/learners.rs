//! Per-sample adjacency predictors.
//!
//! The context-encoding network squeezes two of the three feature-map axes
//! with 1×1 convolutions and then treats the remaining axis as channels of a
//! final 1×1 convolution that emits all N² adjacency entries at once, so every
//! entry sees the whole squeezed context. Which axis survives to the end is
//! the [`CenVariant`]. Rows of the result are L2-normalized.

use alloc::format;

use rand::Rng;

use crate::error::{dim_err, Result};
use crate::nn::{Conv, ConvBn};
use crate::param::{Ctx, ParamStore};
use crate::real::Real;
use crate::tape::Var;

pub const L2_EPS: f64 = 1e-6;

/// Which axis is kept as channels for the final N→N² style mapping.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(rename_all = "kebab-case"))]
pub enum CenVariant {
    /// Squeeze features and time, map joints to N².
    Joint,
    /// Squeeze time and joints, map features to N².
    Feature,
    /// Squeeze features and joints, map time to N².
    Temporal,
}

/// Topology learner selection for a layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(rename_all = "kebab-case"))]
pub enum LearnerKind {
    /// Static topology only.
    None,
    Cen,
    /// Undirected variant: symmetrized before row normalization.
    CenSymmetric,
    CenFeature,
    CenTemporal,
    NonLocal,
}

impl LearnerKind {
    pub fn is_cen(self) -> bool {
        matches!(self, Self::Cen | Self::CenSymmetric | Self::CenFeature | Self::CenTemporal)
    }
}

#[derive(Clone, Debug)]
pub struct CenParams {
    pub variant: CenVariant,
    pub symmetric: bool,
    pub channels: usize,
    pub frames: usize,
    pub joints: usize,
    pub conv_c: ConvBn,
    pub conv_t: ConvBn,
    pub conv_n: ConvBn,
}

impl CenParams {
    /// `final_relu` controls the activation after the last convolution.
    #[allow(clippy::too_many_arguments)]
    pub fn new<F: Real>(
        store: &mut ParamStore<F>,
        name: &str,
        variant: CenVariant,
        symmetric: bool,
        channels: usize,
        frames: usize,
        joints: usize,
        final_relu: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let nn = joints * joints;
        let (c_out, t_out, n_out) = match variant {
            CenVariant::Joint => (1, 1, nn),
            CenVariant::Feature => (nn, 1, 1),
            CenVariant::Temporal => (1, nn, 1),
        };
        let mut mk = |tag: &str, c_in, c_out, last: bool| {
            ConvBn::pointwise(store, &format!("{name}.conv_{tag}"), c_in, c_out, !last || final_relu, rng)
        };
        let conv_c = mk("c", channels, c_out, variant == CenVariant::Feature);
        let conv_t = mk("t", frames, t_out, variant == CenVariant::Temporal);
        let conv_n = mk("n", joints, n_out, variant == CenVariant::Joint);
        Self { variant, symmetric, channels, frames, joints, conv_c, conv_t, conv_n }
    }

    /// Returns the adjacency before and after row normalization, both `[B, N, N]`.
    pub fn forward_parts<F: Real>(&self, ctx: &mut Ctx<'_, F>, x: Var) -> Result<(Var, Var)> {
        let s = ctx.tape.shape(x).to_vec();
        if s.len() != 4 || s[1] != self.channels || s[2] != self.frames || s[3] != self.joints {
            return Err(dim_err!(
                "context encoder built for [B, {}, {}, {}] received {:?}",
                self.channels,
                self.frames,
                self.joints,
                s
            ));
        }
        let tp = |ctx: &mut Ctx<'_, F>, v, axes: &[usize]| ctx.tape.permute(v, axes);
        let h = match self.variant {
            CenVariant::Joint => {
                let h = self.conv_c.forward(ctx, x)?; // [B,1,T,N]
                let h = tp(ctx, h, &[0, 2, 1, 3])?; // [B,T,1,N]
                let h = self.conv_t.forward(ctx, h)?; // [B,1,1,N]
                let h = tp(ctx, h, &[0, 3, 1, 2])?; // [B,N,1,1]
                self.conv_n.forward(ctx, h)? // [B,N²,1,1]
            }
            CenVariant::Feature => {
                let h = tp(ctx, x, &[0, 2, 1, 3])?; // [B,T,C,N]
                let h = self.conv_t.forward(ctx, h)?; // [B,1,C,N]
                let h = tp(ctx, h, &[0, 3, 2, 1])?; // [B,N,C,1]
                let h = self.conv_n.forward(ctx, h)?; // [B,1,C,1]
                let h = tp(ctx, h, &[0, 2, 1, 3])?; // [B,C,1,1]
                self.conv_c.forward(ctx, h)?
            }
            CenVariant::Temporal => {
                let h = self.conv_c.forward(ctx, x)?; // [B,1,T,N]
                let h = tp(ctx, h, &[0, 3, 2, 1])?; // [B,N,T,1]
                let h = self.conv_n.forward(ctx, h)?; // [B,1,T,1]
                let h = tp(ctx, h, &[0, 2, 1, 3])?; // [B,T,1,1]
                self.conv_t.forward(ctx, h)?
            }
        };
        let n = self.joints;
        let mut a = ctx.tape.reshape(h, &[s[0], n, n])?;
        if self.symmetric {
            a = ctx.tape.symmetrize(a)?;
        }
        let out = ctx.tape.l2_row_normalize(a, F::of(L2_EPS));
        Ok((a, out))
    }

    pub fn forward<F: Real>(&self, ctx: &mut Ctx<'_, F>, x: Var) -> Result<Var> {
        Ok(self.forward_parts(ctx, x)?.1)
    }

    /// Number of weights in the final N² -producing kernel.
    pub fn final_kernel_weights(&self) -> usize {
        let nn = self.joints * self.joints;
        nn * match self.variant {
            CenVariant::Joint => self.joints,
            CenVariant::Feature => self.channels,
            CenVariant::Temporal => self.frames,
        }
    }
}

/// Embedded-similarity baseline: row softmax of `θ(X̄)ᵀ φ(X̄)` with X̄ the temporal mean.
#[derive(Clone, Debug)]
pub struct NonLocalParams {
    pub theta: Conv,
    pub phi: Conv,
    pub embed: usize,
}

impl NonLocalParams {
    pub fn default_embed(channels: usize) -> usize {
        (channels / 4).max(4)
    }

    pub fn new<F: Real>(store: &mut ParamStore<F>, name: &str, channels: usize, embed: usize, rng: &mut impl Rng) -> Self {
        let theta = Conv::new(store, &format!("{name}.theta"), channels, embed, 1, 1, 0, rng);
        let phi = Conv::new(store, &format!("{name}.phi"), channels, embed, 1, 1, 0, rng);
        Self { theta, phi, embed }
    }

    pub fn forward<F: Real>(&self, ctx: &mut Ctx<'_, F>, x: Var) -> Result<Var> {
        let th = self.theta.forward(ctx, x)?;
        let ph = self.phi.forward(ctx, x)?;
        let th = ctx.tape.mean_axis(th, 2)?; // [B,Ce,N]
        let ph = ctx.tape.mean_axis(ph, 2)?;
        let tht = ctx.tape.permute(th, &[0, 2, 1])?; // [B,N,Ce]
        let s = ctx.tape.matmul(tht, ph)?; // [B,N,N]
        Ok(ctx.tape.row_softmax(s))
    }
}

#[derive(Clone, Debug)]
pub enum TopologyLearner {
    Cen(CenParams),
    NonLocal(NonLocalParams),
}

impl TopologyLearner {
    /// `None` for [`LearnerKind::None`].
    #[allow(clippy::too_many_arguments)]
    pub fn build<F: Real>(
        kind: LearnerKind,
        store: &mut ParamStore<F>,
        name: &str,
        channels: usize,
        frames: usize,
        joints: usize,
        final_relu: bool,
        rng: &mut impl Rng,
    ) -> Option<Self> {
        let cen = |variant, symmetric, store: &mut ParamStore<F>, rng: &mut _| {
            Some(Self::Cen(CenParams::new(store, name, variant, symmetric, channels, frames, joints, final_relu, rng)))
        };
        match kind {
            LearnerKind::None => None,
            LearnerKind::Cen => cen(CenVariant::Joint, false, store, rng),
            LearnerKind::CenSymmetric => cen(CenVariant::Joint, true, store, rng),
            LearnerKind::CenFeature => cen(CenVariant::Feature, false, store, rng),
            LearnerKind::CenTemporal => cen(CenVariant::Temporal, false, store, rng),
            LearnerKind::NonLocal => Some(Self::NonLocal(NonLocalParams::new(
                store,
                name,
                channels,
                NonLocalParams::default_embed(channels),
                rng,
            ))),
        }
    }

    pub fn forward<F: Real>(&self, ctx: &mut Ctx<'_, F>, x: Var) -> Result<Var> {
        match self {
            Self::Cen(p) => p.forward(ctx, x),
            Self::NonLocal(p) => p.forward(ctx, x),
        }
    }
}
