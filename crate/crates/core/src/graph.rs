//! Skeleton layouts, spatial-configuration partitions and normalized static adjacencies.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{dim_err, invalid, Result};
use crate::param::{Ctx, ParamId, ParamStore};
use crate::real::Real;
use crate::tape::Var;
use crate::tensor::Tensor;

/// Number of spatial configurations: self, centripetal, centrifugal.
pub const NUM_CONFIGS: usize = 3;
pub const DEFAULT_ALPHA_DEGREE: f64 = 0.001;

const NTU25: &str = include_str!("../data/ntu25.layout");
const OPENPOSE18: &str = include_str!("../data/openpose18.layout");

/// Joint graph of one skeleton convention.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SkeletonLayout {
    name: String,
    n_joints: usize,
    edges: Vec<(usize, usize)>,
    center: usize,
    /// (source, target)
    bone_pairs: Vec<(usize, usize)>,
}

impl SkeletonLayout {
    /// Validated layout. With `bone_pairs = None` bones point from each joint's
    /// parent in the breadth-first tree rooted at `center` to the joint.
    pub fn new(
        name: impl Into<String>,
        n_joints: usize,
        center: usize,
        edges: Vec<(usize, usize)>,
        bone_pairs: Option<Vec<(usize, usize)>>,
    ) -> Result<Self> {
        let name = name.into();
        if n_joints == 0 {
            return Err(invalid!("layout {name}: needs at least one joint"));
        }
        if center >= n_joints {
            return Err(invalid!("layout {name}: center {center} out of range for {n_joints} joints"));
        }
        let mut seen = Vec::with_capacity(edges.len());
        for &(a, b) in &edges {
            if a >= n_joints || b >= n_joints {
                return Err(invalid!("layout {name}: edge ({a}, {b}) out of range for {n_joints} joints"));
            }
            if a == b {
                return Err(invalid!("layout {name}: self-loop edge ({a}, {b})"));
            }
            let key = (a.min(b), a.max(b));
            if seen.contains(&key) {
                return Err(invalid!("layout {name}: duplicate edge ({a}, {b})"));
            }
            seen.push(key);
        }
        let mut layout = Self { name, n_joints, edges, center, bone_pairs: Vec::new() };
        let (dist, parent) = layout.bfs();
        if let Some(j) = dist.iter().position(|d| d.is_none()) {
            return Err(invalid!("layout {}: graph is disconnected (joint {j} unreachable from center)", layout.name));
        }
        layout.bone_pairs = match bone_pairs {
            Some(b) => b,
            None => (0..n_joints).filter(|&j| j != center).map(|j| (parent[j].expect("connected"), j)).collect(),
        };
        layout.validate_bones()?;
        Ok(layout)
    }

    fn validate_bones(&self) -> Result<()> {
        let mut covered = vec![false; self.n_joints];
        for &(s, t) in &self.bone_pairs {
            if s >= self.n_joints || t >= self.n_joints {
                return Err(invalid!("layout {}: bone ({s} -> {t}) out of range", self.name));
            }
            if t == self.center {
                return Err(invalid!("layout {}: bone ({s} -> {t}) targets the center joint", self.name));
            }
            if core::mem::replace(&mut covered[t], true) {
                return Err(invalid!("layout {}: duplicate bone target {t}", self.name));
            }
        }
        if let Some(j) = (0..self.n_joints).find(|&j| j != self.center && !covered[j]) {
            return Err(invalid!("layout {}: joint {j} is not the target of any bone", self.name));
        }
        Ok(())
    }

    /// Built-in conventions: `ntu25`, `openpose18`, and the three-joint `chain3` for toy runs.
    pub fn builtin(name: &str) -> Result<Self> {
        match name {
            "ntu25" => Self::parse(NTU25),
            "openpose18" => Self::parse(OPENPOSE18),
            "chain3" => Self::new("chain3", 3, 1, vec![(0, 1), (1, 2)], None),
            other => Err(invalid!("unknown skeleton layout '{other}' (expected ntu25, openpose18 or chain3)")),
        }
    }

    /// Parses the line-oriented layout format:
    ///
    /// ```text
    /// # comment
    /// name <identifier>
    /// joints <count>
    /// center <index>
    /// edge <a> <b>          (undirected, repeatable)
    /// bone <source> <target> (optional, repeatable)
    /// ```
    pub fn parse(text: &str) -> Result<Self> {
        let (mut name, mut joints, mut center) = (None, None, None);
        let (mut edges, mut bones) = (Vec::new(), Vec::new());
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let toks: Vec<&str> = line.split_whitespace().collect();
            let num = |i: usize| -> Result<usize> {
                toks.get(i)
                    .ok_or_else(|| invalid!("line {}: '{}' is missing an argument", lineno + 1, toks[0]))?
                    .parse::<usize>()
                    .map_err(|e| invalid!("line {}: {e}", lineno + 1))
            };
            let expect = |n: usize| -> Result<()> {
                if toks.len() != n {
                    return Err(invalid!("line {}: '{}' takes {} argument(s)", lineno + 1, toks[0], n - 1));
                }
                Ok(())
            };
            match toks[0] {
                "name" => {
                    expect(2)?;
                    name = Some(toks[1].to_string());
                }
                "joints" => {
                    expect(2)?;
                    joints = Some(num(1)?);
                }
                "center" => {
                    expect(2)?;
                    center = Some(num(1)?);
                }
                "edge" => {
                    expect(3)?;
                    edges.push((num(1)?, num(2)?));
                }
                "bone" => {
                    expect(3)?;
                    bones.push((num(1)?, num(2)?));
                }
                other => return Err(invalid!("line {}: unknown record '{other}'", lineno + 1)),
            }
        }
        let joints = joints.ok_or_else(|| invalid!("layout is missing a 'joints' record"))?;
        let center = center.ok_or_else(|| invalid!("layout is missing a 'center' record"))?;
        let name = name.unwrap_or_else(|| "custom".to_string());
        Self::new(name, joints, center, edges, (!bones.is_empty()).then_some(bones))
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("name {}\njoints {}\ncenter {}\n", self.name, self.n_joints, self.center);
        for (a, b) in &self.edges {
            s += &format!("edge {a} {b}\n");
        }
        for (a, b) in &self.bone_pairs {
            s += &format!("bone {a} {b}\n");
        }
        s
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn n_joints(&self) -> usize {
        self.n_joints
    }

    pub fn center(&self) -> usize {
        self.center
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn bone_pairs(&self) -> &[(usize, usize)] {
        &self.bone_pairs
    }

    fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n_joints];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        for l in &mut adj {
            l.sort_unstable();
        }
        adj
    }

    fn bfs(&self) -> (Vec<Option<usize>>, Vec<Option<usize>>) {
        let adj = self.neighbors();
        let mut dist = vec![None; self.n_joints];
        let mut parent = vec![None; self.n_joints];
        let mut queue = VecDeque::from([self.center]);
        dist[self.center] = Some(0);
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if dist[v].is_none() {
                    dist[v] = Some(dist[u].unwrap() + 1);
                    parent[v] = Some(u);
                    queue.push_back(v);
                }
            }
        }
        (dist, parent)
    }

    /// Hop count from every joint to the center.
    pub fn hop_distances(&self) -> Vec<usize> {
        self.bfs().0.into_iter().map(|d| d.expect("validated connected")).collect()
    }
}

/// Binary matrices `[3, N, N]`: identity, centripetal, centrifugal.
///
/// Entry `[k][i][j] = 1` means joint `i` aggregates from neighbor `j`. A neighbor
/// at equal or smaller hop distance to the center is centripetal, a farther one
/// centrifugal.
pub fn partition_spatial_configs(layout: &SkeletonLayout) -> Tensor<f64> {
    let n = layout.n_joints();
    let dist = layout.hop_distances();
    let mut a = Tensor::zeros(&[NUM_CONFIGS, n, n]);
    for i in 0..n {
        a.set(&[0, i, i], 1.0);
    }
    for &(u, v) in layout.edges() {
        for (i, j) in [(u, v), (v, u)] {
            let k = if dist[j] <= dist[i] { 1 } else { 2 };
            a.set(&[k, i, j], 1.0);
        }
    }
    a
}

/// `Λ^{-1/2} A Λ^{-1/2}` with `Λ_ii = Σ_j A_ij + alpha` for a square `A`.
pub fn normalize_adjacency(a: &Tensor<f64>, alpha_degree: f64) -> Result<Tensor<f64>> {
    let s = a.shape();
    if s.len() != 2 || s[0] != s[1] {
        return Err(dim_err!("adjacency must be square, got {:?}", s));
    }
    if !(alpha_degree > 0.0) {
        return Err(invalid!("alpha_degree must be positive, got {alpha_degree}"));
    }
    if let Some(v) = a.data().iter().find(|v| !(**v >= 0.0)) {
        return Err(invalid!("adjacency entries must be nonnegative, found {v}"));
    }
    let n = s[0];
    let d: Vec<f64> = (0..n)
        .map(|i| {
            let deg: f64 = a.data()[i * n..(i + 1) * n].iter().sum();
            1.0 / num_traits::Float::sqrt(deg + alpha_degree)
        })
        .collect();
    // d_i·d_j first: multiplication order then cannot break symmetry.
    Ok(Tensor::from_fn(&[n, n], |ix| (d[ix[0]] * d[ix[1]]) * a.get(ix)))
}

/// Frozen normalized configurations plus a trainable additive mask.
#[derive(Clone, Debug)]
pub struct TopologySet<F> {
    configs: Tensor<F>,
    mask: ParamId,
    alpha_degree: f64,
}

impl<F: Real> TopologySet<F> {
    /// Mask starts at zero so the initial topology is the physical one.
    pub fn new(layout: &SkeletonLayout, alpha_degree: f64, store: &mut ParamStore<F>, name: &str) -> Result<Self> {
        Self::from_raw_configs(&partition_spatial_configs(layout), alpha_degree, store, name)
    }

    /// Joints produced by a projection have no skeleton: only the self
    /// connections are fixed, the other configurations are left to the mask.
    pub fn self_loops(n: usize, alpha_degree: f64, store: &mut ParamStore<F>, name: &str) -> Result<Self> {
        let raw = Tensor::from_fn(&[NUM_CONFIGS, n, n], |ix| if ix[0] == 0 && ix[1] == ix[2] { 1.0 } else { 0.0 });
        Self::from_raw_configs(&raw, alpha_degree, store, name)
    }

    /// Normalizes each unnormalized `[K, N, N]` configuration.
    pub fn from_raw_configs(raw: &Tensor<f64>, alpha_degree: f64, store: &mut ParamStore<F>, name: &str) -> Result<Self> {
        let s = raw.shape();
        if s.len() != 3 || s[1] != s[2] {
            return Err(dim_err!("configurations must be [K, N, N], got {:?}", s));
        }
        let (k_all, n) = (s[0], s[1]);
        let mut configs = Tensor::zeros(&[k_all, n, n]);
        for k in 0..k_all {
            let slice = Tensor::new(&[n, n], raw.data()[k * n * n..(k + 1) * n * n].to_vec())?;
            let norm = normalize_adjacency(&slice, alpha_degree)?;
            for (dst, &v) in configs.data_mut()[k * n * n..(k + 1) * n * n].iter_mut().zip(norm.data()) {
                *dst = F::of(v);
            }
        }
        let mask = store.add(format!("{name}.mask"), Tensor::zeros(&[k_all, n, n]), true);
        Ok(Self { configs, mask, alpha_degree })
    }

    pub fn configs(&self) -> &Tensor<F> {
        &self.configs
    }

    pub fn mask(&self) -> ParamId {
        self.mask
    }

    pub fn alpha_degree(&self) -> f64 {
        self.alpha_degree
    }

    pub fn n_joints(&self) -> usize {
        self.configs.shape()[1]
    }

    pub fn k(&self) -> usize {
        self.configs.shape()[0]
    }

    /// `configs[k] + mask[k]` as a plain matrix.
    pub fn static_topology(&self, store: &ParamStore<F>, k: usize) -> Result<Tensor<F>> {
        if k >= self.k() {
            return Err(invalid!("configuration index {k} out of range for K = {}", self.k()));
        }
        let n = self.n_joints();
        let m = store.get(self.mask).value.data();
        let c = self.configs.data();
        Tensor::new(&[n, n], (k * n * n..(k + 1) * n * n).map(|i| c[i] + m[i]).collect())
    }

    /// All K combined graphs `[K, N, N]` on the tape.
    pub fn graphs(&self, ctx: &mut Ctx<'_, F>) -> Result<Var> {
        let c = ctx.tape.constant(self.configs.clone());
        let m = ctx.param(self.mask);
        ctx.tape.add(c, m)
    }
}
