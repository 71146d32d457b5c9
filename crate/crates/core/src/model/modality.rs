use alloc::string::String;

use crate::error::{dim_err, Error, Result};
use crate::graph::SkeletonLayout;
use crate::real::Real;
use crate::tensor::Tensor;

/// Input stream of the four-stream ensemble.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(rename_all = "kebab-case"))]
pub enum Modality {
    Joint,
    Bone,
    JointMotion,
    BoneMotion,
}

impl Modality {
    pub const ALL: [Modality; 4] = [Modality::Joint, Modality::Bone, Modality::JointMotion, Modality::BoneMotion];

    pub fn name(self) -> &'static str {
        match self {
            Modality::Joint => "joint",
            Modality::Bone => "bone",
            Modality::JointMotion => "joint-motion",
            Modality::BoneMotion => "bone-motion",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(String::from("unknown modality '") + s + "' (joint, bone, joint-motion, bone-motion)"))
    }

    /// Derives this stream from joint coordinates `[..., T, N]`.
    pub fn apply<F: Real>(self, joints: &Tensor<F>, layout: &SkeletonLayout) -> Result<Tensor<F>> {
        match self {
            Modality::Joint => Ok(joints.clone()),
            Modality::Bone => derive_bone(joints, layout),
            Modality::JointMotion => derive_motion(joints),
            Modality::BoneMotion => derive_motion(&derive_bone(joints, layout)?),
        }
    }
}

fn split_tn(shape: &[usize]) -> Result<(usize, usize, usize)> {
    if shape.len() < 2 {
        return Err(dim_err!("expected [..., T, N], got {:?}", shape));
    }
    let r = shape.len();
    Ok((shape[..r - 2].iter().product(), shape[r - 2], shape[r - 1]))
}

/// Bone vectors `J_target − J_source` stored at the target joint; the center stays zero.
/// Works on any tensor whose last two axes are `[T, N]`.
pub fn derive_bone<F: Real>(joints: &Tensor<F>, layout: &SkeletonLayout) -> Result<Tensor<F>> {
    let (outer, t, n) = split_tn(joints.shape())?;
    if n != layout.n_joints() {
        return Err(dim_err!("input has {n} joints, layout '{}' has {}", layout.name(), layout.n_joints()));
    }
    let src = joints.data();
    let mut out = Tensor::zeros(joints.shape());
    let dst = out.data_mut();
    for row in 0..outer * t {
        let base = row * n;
        for &(s, tg) in layout.bone_pairs() {
            dst[base + tg] = src[base + tg] - src[base + s];
        }
    }
    Ok(out)
}

/// `M^t = X^{t+1} − X^t`, with the final frame zero. Last two axes are `[T, N]`.
pub fn derive_motion<F: Real>(x: &Tensor<F>) -> Result<Tensor<F>> {
    let (outer, t, n) = split_tn(x.shape())?;
    let src = x.data();
    let mut out = Tensor::zeros(x.shape());
    let dst = out.data_mut();
    for o in 0..outer {
        for f in 0..t.saturating_sub(1) {
            let a = (o * t + f) * n;
            for j in 0..n {
                dst[a + j] = src[a + n + j] - src[a + j];
            }
        }
    }
    Ok(out)
}
