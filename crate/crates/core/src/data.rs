//! Skeleton sequences, temporal resizing, coordinate normalization and the
//! procedural dataset.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::graph::SkeletonLayout;
use crate::real::Real;
use crate::tensor::Tensor;

pub const MAX_PERSONS: usize = 2;

/// `T` frames of `M` persons × `N` joints × `D` values, row-major in that order.
#[derive(Clone, Debug, PartialEq)]
pub struct SkeletonSequence {
    pub id: String,
    pub layout: String,
    pub label: usize,
    /// The last value of each joint is a detection score rather than a coordinate.
    pub confidence: bool,
    frames: usize,
    persons: usize,
    joints: usize,
    dims: usize,
    data: Vec<f32>,
}

impl SkeletonSequence {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        id: impl Into<String>,
        layout: impl Into<String>,
        label: usize,
        confidence: bool,
        [frames, persons, joints, dims]: [usize; 4],
        data: Vec<f32>,
    ) -> Result<Self> {
        if frames == 0 || persons == 0 || joints == 0 || dims == 0 {
            return Err(Error::Validation(format!("empty sequence shape T={frames} M={persons} N={joints} D={dims}")));
        }
        if persons > MAX_PERSONS {
            return Err(Error::Validation(format!("{persons} persons exceeds the maximum of {MAX_PERSONS}")));
        }
        if confidence && dims < 2 {
            return Err(Error::Validation("a confidence channel needs at least one coordinate beside it".into()));
        }
        let want = frames * persons * joints * dims;
        if data.len() != want {
            return Err(Error::Validation(format!("expected {want} values for T={frames} M={persons} N={joints} D={dims}, got {}", data.len())));
        }
        Ok(Self { id: id.into(), layout: layout.into(), label, confidence, frames, persons, joints, dims, data })
    }

    /// `[T, M, N, D]`.
    pub fn shape(&self) -> [usize; 4] {
        [self.frames, self.persons, self.joints, self.dims]
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn persons(&self) -> usize {
        self.persons
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    fn offset(&self, t: usize, m: usize, n: usize) -> usize {
        ((t * self.persons + m) * self.joints + n) * self.dims
    }

    pub fn joint(&self, t: usize, m: usize, n: usize) -> &[f32] {
        let o = self.offset(t, m, n);
        &self.data[o..o + self.dims]
    }

    /// Channels that are spatial coordinates.
    pub fn spatial_dims(&self) -> usize {
        self.dims - usize::from(self.confidence)
    }

    /// Pads with all-zero persons up to `persons`; more persons than that is an error.
    pub fn with_persons(&self, persons: usize) -> Result<Self> {
        if persons < self.persons {
            return Err(Error::Validation(format!("sequence has {} persons, model takes {persons}", self.persons)));
        }
        let mut data = vec![0.0; self.frames * persons * self.joints * self.dims];
        let block = self.joints * self.dims;
        for t in 0..self.frames {
            let src = &self.data[t * self.persons * block..(t + 1) * self.persons * block];
            data[t * persons * block..t * persons * block + src.len()].copy_from_slice(src);
        }
        Self::new(self.id.clone(), self.layout.clone(), self.label, self.confidence, [self.frames, persons, self.joints, self.dims], data)
    }

    /// Model layout `[M, D, T, N]`.
    pub fn to_tensor<F: Real>(&self) -> Tensor<F> {
        let [t, m, n, d] = self.shape();
        Tensor::from_fn(&[m, d, t, n], |ix| F::of(f64::from(self.data[self.offset(ix[2], ix[0], ix[3]) + ix[1]])))
    }
}

/// Linear interpolation onto `target` evenly spaced instants spanning the sequence.
pub fn resize_sequence(seq: &SkeletonSequence, target: usize) -> Result<SkeletonSequence> {
    if target == 0 {
        return Err(Error::Validation("target length must be positive".into()));
    }
    let [t, m, n, d] = seq.shape();
    let frame = m * n * d;
    let mut data = Vec::with_capacity(target * frame);
    for i in 0..target {
        let pos = if target == 1 { 0.0 } else { (i * (t - 1)) as f64 / (target - 1) as f64 };
        let lo = (pos as usize).min(t - 1);
        let hi = (lo + 1).min(t - 1);
        let w = (pos - lo as f64) as f32;
        let (a, b) = (&seq.data[lo * frame..(lo + 1) * frame], &seq.data[hi * frame..(hi + 1) * frame]);
        if w == 0.0 {
            data.extend_from_slice(a);
        } else {
            data.extend(a.iter().zip(b).map(|(&x, &y)| x + (y - x) * w));
        }
    }
    SkeletonSequence::new(seq.id.clone(), seq.layout.clone(), seq.label, seq.confidence, [target, m, n, d], data)
}

/// Subtracts the center joint of the first person in the first frame from every
/// coordinate; a confidence channel is left as is.
pub fn normalize_coords(seq: &SkeletonSequence, layout: &SkeletonLayout) -> Result<SkeletonSequence> {
    if layout.n_joints() != seq.joints {
        return Err(Error::Validation(format!("sequence has {} joints, layout '{}' has {}", seq.joints, layout.name(), layout.n_joints())));
    }
    let spatial = seq.spatial_dims();
    let origin: Vec<f32> = seq.joint(0, 0, layout.center())[..spatial].to_vec();
    let mut out = seq.clone();
    for joint in out.data.chunks_mut(seq.dims) {
        for (v, o) in joint.iter_mut().zip(&origin) {
            *v -= o;
        }
    }
    Ok(out)
}

/// Parameters of the procedural dataset.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(deny_unknown_fields))]
pub struct SynthSpec {
    pub n_classes: usize,
    pub samples_per_class: usize,
    pub layout: String,
    pub frames: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self { n_classes: 5, samples_per_class: 60, layout: "ntu25".into(), frames: 32, noise_sigma: 0.05, seed: 0 }
    }
}

/// Motion recipe of one class.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassProgram {
    pub joints: Vec<usize>,
    /// Oscillation cycles over the sequence.
    pub cycles: f64,
    /// Unit direction and phase lag per moving joint.
    pub directions: Vec<[f64; 3]>,
    pub lags: Vec<f64>,
}

const AMPLITUDE: f64 = 0.5;

fn unit(rng: &mut impl Rng) -> [f64; 3] {
    loop {
        let v = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0f64)];
        let r = num_traits::Float::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
        if r > 0.2 && r <= 1.0 {
            return [v[0] / r, v[1] / r, v[2] / r];
        }
    }
}

/// Rest pose: joints laid out along the breadth-first tree from the center.
pub fn rest_pose(layout: &SkeletonLayout, rng: &mut impl Rng) -> Vec<[f64; 3]> {
    let mut pose = vec![[0.0; 3]; layout.n_joints()];
    let mut order: Vec<(usize, usize)> = layout.bone_pairs().to_vec();
    let depth = layout.hop_distances();
    order.sort_by_key(|&(_, t)| depth[t]);
    for (s, t) in order {
        let d = unit(rng);
        pose[t] = [pose[s][0] + 0.3 * d[0], pose[s][1] + 0.3 * d[1], pose[s][2] + 0.3 * d[2]];
    }
    pose
}

/// Class programs: each class moves its own window of a seeded joint permutation
/// with a class-specific rate.
pub fn class_programs(spec: &SynthSpec, layout: &SkeletonLayout) -> Vec<ClassProgram> {
    let n = layout.n_joints();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(1);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    let k = (n / spec.n_classes).clamp(2, 6).min(n);
    (0..spec.n_classes)
        .map(|c| {
            let joints: Vec<usize> = (0..k).map(|i| perm[(c * k + i) % n]).collect();
            let directions = joints.iter().map(|_| unit(&mut rng)).collect();
            let lags = joints.iter().map(|_| rng.random_range(0.0..core::f64::consts::PI)).collect();
            ClassProgram { joints, cycles: 1.0 + (c % 4) as f64 * 0.5, directions, lags }
        })
        .collect()
}

/// Deterministic dataset of `n_classes · samples_per_class` single-person sequences.
pub fn synth_generate(spec: &SynthSpec) -> Result<Vec<SkeletonSequence>> {
    if spec.n_classes < 2 {
        return Err(Error::Validation("at least two classes are required".into()));
    }
    if spec.samples_per_class == 0 || spec.frames == 0 {
        return Err(Error::Validation("samples_per_class and frames must be positive".into()));
    }
    if !(spec.noise_sigma >= 0.0 && spec.noise_sigma.is_finite()) {
        return Err(Error::Validation("noise_sigma must be a finite nonnegative number".into()));
    }
    let layout = SkeletonLayout::builtin(&spec.layout)?;
    let n = layout.n_joints();
    let mut pose_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let rest = rest_pose(&layout, &mut pose_rng);
    let programs = class_programs(spec, &layout);
    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::Validation(format!("noise: {e}")))?;
    let mut out = Vec::with_capacity(spec.n_classes * spec.samples_per_class);
    for (c, prog) in programs.iter().enumerate() {
        for s in 0..spec.samples_per_class {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(2 + (c * spec.samples_per_class + s) as u64);
            let phase = rng.random_range(0.0..core::f64::consts::TAU);
            let mut data = Vec::with_capacity(spec.frames * n * 3);
            for t in 0..spec.frames {
                let tau = t as f64 / spec.frames as f64;
                for (j, r) in rest.iter().enumerate() {
                    let mut p = *r;
                    if let Some(i) = prog.joints.iter().position(|&q| q == j) {
                        let a = AMPLITUDE * libm::sin(core::f64::consts::TAU * prog.cycles * tau + phase + prog.lags[i]);
                        for (pd, dd) in p.iter_mut().zip(prog.directions[i]) {
                            *pd += a * dd;
                        }
                    }
                    for v in p {
                        let e = if spec.noise_sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                        data.push((v + e) as f32);
                    }
                }
            }
            let id = format!("c{c:03}_s{s:04}");
            out.push(SkeletonSequence::new(id, spec.layout.clone(), c, false, [spec.frames, 1, n, 3], data)?);
        }
    }
    Ok(out)
}

/// Per-class split: a seeded `test_fraction` of each class goes to the test side.
pub fn train_test_split(samples: Vec<SkeletonSequence>, test_fraction: f64, seed: u64) -> Result<(Vec<SkeletonSequence>, Vec<SkeletonSequence>)> {
    if !(0.0..=1.0).contains(&test_fraction) {
        return Err(Error::Validation("test_fraction must lie in [0, 1]".into()));
    }
    let n_classes = samples.iter().map(|s| s.label + 1).max().unwrap_or(0);
    let mut by_class: Vec<Vec<SkeletonSequence>> = vec![Vec::new(); n_classes];
    for s in samples {
        by_class[s.label].push(s);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for mut class in by_class {
        class.shuffle(&mut rng);
        let k = num_traits::Float::round(class.len() as f64 * test_fraction) as usize;
        let rest = class.split_off(k);
        test.extend(class);
        train.extend(rest);
    }
    Ok((train, test))
}
