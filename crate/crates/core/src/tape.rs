//! Reverse-mode automatic differentiation over a linear operation record.
//!
//! Every operation appends a node holding its output value together with what
//! its backward rule needs. Nodes are only ever appended, so the record is in
//! topological order by construction and `backward` is a single reverse sweep.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{dim_err, invalid, Error, Result};
use crate::kernels::{self, ConvGeom};
use crate::real::Real;
use crate::tensor::{numel, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Batch-norm running statistics, updated in place by training-mode forwards.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats<F> {
    pub mean: Vec<F>,
    pub var: Vec<F>,
}

impl<F: Real> RunningStats<F> {
    pub fn new(channels: usize) -> Self {
        Self { mean: vec![F::zero(); channels], var: vec![F::one(); channels] }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BnSettings {
    pub eps: f64,
    pub momentum: f64,
    pub training: bool,
}

impl Default for BnSettings {
    fn default() -> Self {
        Self { eps: 1e-5, momentum: 0.1, training: false }
    }
}

#[derive(Debug)]
struct MatmulPlan {
    m: usize,
    k: usize,
    n: usize,
    /// (a offset, b offset) per output batch entry
    offsets: Vec<(usize, usize)>,
}

#[derive(Debug)]
enum Op<F> {
    Leaf,
    MatMul { a: Var, b: Var, plan: MatmulPlan },
    Conv { x: Var, w: Var, geom: ConvGeom },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<F>, inv_std: Vec<F>, training: bool, outer: usize, ch: usize, inner: usize },
    Relu { x: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, s: F },
    AddBias { x: Var, bias: Var, outer: usize, ch: usize, inner: usize },
    Permute { x: Var, axes: Vec<usize> },
    Reshape { x: Var },
    MeanAxis { x: Var, outer: usize, len: usize, inner: usize },
    Sum { x: Var },
    SoftmaxCe { logits: Var, labels: Vec<usize>, probs: Vec<F>, classes: usize },
    L2RowNorm { x: Var, eps: F, norms: Vec<F>, row: usize },
    Symmetrize { x: Var, n: usize },
    RowSoftmax { x: Var, row: usize },
}

#[derive(Debug)]
struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    requires_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Grads<F> {
    grads: Vec<Option<Vec<F>>>,
}

impl<F: Real> Grads<F> {
    pub fn get(&self, v: Var) -> Option<&[F]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<F>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

#[derive(Debug, Default)]
pub struct Tape<F> {
    nodes: Vec<Node<F>>,
}

fn same_shape<F: Real>(what: &str, a: &Tensor<F>, b: &Tensor<F>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(dim_err!("{what}: shapes {:?} and {:?} differ", a.shape(), b.shape()));
    }
    Ok(())
}

impl<F: Real> Tape<F> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn leaf(&mut self, value: Tensor<F>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        self.leaf(value, false)
    }

    /// Batched matrix product `[.., m, k] · [.., k, n]` with broadcast leading dimensions.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() < 2 || sb.len() < 2 {
            return Err(dim_err!("matmul needs rank >= 2 operands, got {:?} and {:?}", sa, sb));
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (k2, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if k != k2 {
            return Err(dim_err!("matmul inner dimensions differ: {:?} · {:?}", sa, sb));
        }
        let (la, lb) = (&sa[..sa.len() - 2], &sb[..sb.len() - 2]);
        let rank = la.len().max(lb.len());
        let pad = |s: &[usize]| -> Vec<usize> {
            let mut v = vec![1; rank - s.len()];
            v.extend_from_slice(s);
            v
        };
        let (pa, pb) = (pad(la), pad(lb));
        let mut batch = Vec::with_capacity(rank);
        for i in 0..rank {
            let d = match (pa[i], pb[i]) {
                (x, y) if x == y => x,
                (1, y) => y,
                (x, 1) => x,
                _ => return Err(dim_err!("matmul batch dimensions not broadcastable: {:?} · {:?}", sa, sb)),
            };
            batch.push(d);
        }
        let (astr, bstr) = (crate::tensor::strides(&pa), crate::tensor::strides(&pb));
        let count = numel(&batch).max(1);
        let mut offsets = Vec::with_capacity(count);
        let mut idx = vec![0usize; rank];
        for _ in 0..count {
            let (mut ao, mut bo) = (0, 0);
            for i in 0..rank {
                if pa[i] != 1 {
                    ao += idx[i] * astr[i];
                }
                if pb[i] != 1 {
                    bo += idx[i] * bstr[i];
                }
            }
            offsets.push((ao * m * k, bo * k * n));
            for ax in (0..rank).rev() {
                idx[ax] += 1;
                if idx[ax] < batch[ax] {
                    break;
                }
                idx[ax] = 0;
            }
        }
        let mut out = vec![F::zero(); count * m * n];
        {
            let (ad, bd) = (self.value(a).data(), self.value(b).data());
            for (bi, &(ao, bo)) in offsets.iter().enumerate() {
                kernels::gemm_acc(&ad[ao..ao + m * k], &bd[bo..bo + k * n], &mut out[bi * m * n..(bi + 1) * m * n], m, k, n);
            }
        }
        let mut shape = batch;
        shape.extend_from_slice(&[m, n]);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(&shape, out)?, Op::MatMul { a, b, plan: MatmulPlan { m, k, n, offsets } }, rg))
    }

    /// Cross-correlation of `x: [B, C, T, N]` with `w: [C_out, C, kt, 1]` along time.
    pub fn conv2d(&mut self, x: Var, w: Var, stride_t: usize, pad_t: usize) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 4 || sw.len() != 4 {
            return Err(dim_err!("conv2d expects rank-4 input and kernel, got {:?} and {:?}", sx, sw));
        }
        if sw[1] != sx[1] {
            return Err(dim_err!("conv2d channel mismatch: input {:?}, kernel {:?}", sx, sw));
        }
        if sw[3] != 1 {
            return Err(dim_err!("conv2d supports t×1 kernels only, got kernel {:?}", sw));
        }
        if stride_t == 0 {
            return Err(invalid!("conv2d stride must be >= 1"));
        }
        let padded = sx[2] + 2 * pad_t;
        if sw[2] > padded {
            return Err(dim_err!("conv2d kernel {:?} larger than padded input {:?} (pad {pad_t})", sw, sx));
        }
        let geom = ConvGeom {
            batch: sx[0],
            c_in: sx[1],
            c_out: sw[0],
            t_in: sx[2],
            t_out: (padded - sw[2]) / stride_t + 1,
            n: sx[3],
            kt: sw[2],
            stride: stride_t,
            pad: pad_t,
        };
        let mut out = vec![F::zero(); geom.batch * geom.c_out * geom.t_out * geom.n];
        kernels::conv_forward(&geom, self.value(x).data(), self.value(w).data(), &mut out);
        let t = Tensor::new(&[geom.batch, geom.c_out, geom.t_out, geom.n], out)?;
        let rg = self.rg(&[x, w]);
        Ok(self.push(t, Op::Conv { x, w, geom }, rg))
    }

    /// Per-channel normalization of `x: [B, C, ...]`. Training mode normalizes
    /// with batch statistics and folds them into `stats`; eval mode uses `stats`.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: &mut RunningStats<F>,
        settings: BnSettings,
    ) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        if sx.len() < 2 {
            return Err(dim_err!("batch_norm expects [B, C, ...], got {:?}", sx));
        }
        let (outer, ch) = (sx[0], sx[1]);
        let inner = numel(&sx[2..]);
        for (what, v) in [("gamma", gamma), ("beta", beta)] {
            if self.value(v).numel() != ch {
                return Err(dim_err!("batch_norm {what} has {} entries, input {:?} has {ch} channels", self.value(v).numel(), sx));
            }
        }
        if stats.mean.len() != ch || stats.var.len() != ch {
            return Err(dim_err!("batch_norm running stats sized {} for {ch} channels", stats.mean.len()));
        }
        let eps = F::of(settings.eps);
        let xd = self.value(x).data();
        let count = outer * inner;
        let mut inv_std = vec![F::zero(); ch];
        let mut mean = vec![F::zero(); ch];
        if settings.training {
            let cnt = F::of(count as f64);
            let mut var = vec![F::zero(); ch];
            for c in 0..ch {
                let mut s = F::zero();
                for b in 0..outer {
                    let base = (b * ch + c) * inner;
                    s += xd[base..base + inner].iter().copied().sum::<F>();
                }
                let mu = s / cnt;
                let mut v = F::zero();
                for b in 0..outer {
                    let base = (b * ch + c) * inner;
                    for &e in &xd[base..base + inner] {
                        v += (e - mu) * (e - mu);
                    }
                }
                mean[c] = mu;
                var[c] = v / cnt;
                inv_std[c] = F::one() / (var[c] + eps).sqrt();
            }
            let mom = F::of(settings.momentum);
            let unbias = if count > 1 { cnt / (cnt - F::one()) } else { F::one() };
            for c in 0..ch {
                stats.mean[c] = (F::one() - mom) * stats.mean[c] + mom * mean[c];
                stats.var[c] = (F::one() - mom) * stats.var[c] + mom * var[c] * unbias;
            }
        } else {
            for c in 0..ch {
                mean[c] = stats.mean[c];
                inv_std[c] = F::one() / (stats.var[c] + eps).sqrt();
            }
        }
        let (g, bt) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![F::zero(); xd.len()];
        let mut out = vec![F::zero(); xd.len()];
        for b in 0..outer {
            for c in 0..ch {
                let base = (b * ch + c) * inner;
                for i in base..base + inner {
                    let h = (xd[i] - mean[c]) * inv_std[c];
                    xhat[i] = h;
                    out[i] = g[c] * h + bt[c];
                }
            }
        }
        let t = Tensor::new(&sx, out)?;
        let rg = self.rg(&[x, gamma, beta]);
        Ok(self.push(
            t,
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, training: settings.training, outer, ch, inner },
            rg,
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x).map(|v| if v > F::zero() { v } else { F::zero() });
        let rg = self.rg(&[x]);
        self.push(t, Op::Relu { x }, rg)
    }

    fn zip(&mut self, what: &str, a: Var, b: Var, f: impl Fn(F, F) -> F) -> Result<Tensor<F>> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape(what, ta, tb)?;
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip("add", a, b, |x, y| x + y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::Add { a, b }, rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip("sub", a, b, |x, y| x - y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::Sub { a, b }, rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip("mul", a, b, |x, y| x * y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::Mul { a, b }, rg))
    }

    pub fn scale(&mut self, x: Var, s: F) -> Var {
        let t = self.value(x).map(|v| v * s);
        let rg = self.rg(&[x]);
        self.push(t, Op::Scale { x, s }, rg)
    }

    /// Adds a 1-D `bias` broadcast along `axis` of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var, axis: usize) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        if axis >= sx.len() || self.value(bias).numel() != sx[axis] {
            return Err(dim_err!("bias of {} entries cannot broadcast along axis {axis} of {:?}", self.value(bias).numel(), sx));
        }
        let (outer, ch, inner) = (numel(&sx[..axis]), sx[axis], numel(&sx[axis + 1..]));
        let mut out = self.value(x).data().to_vec();
        let bd = self.value(bias).data();
        for o in 0..outer {
            for c in 0..ch {
                let base = (o * ch + c) * inner;
                for v in &mut out[base..base + inner] {
                    *v += bd[c];
                }
            }
        }
        let rg = self.rg(&[x, bias]);
        Ok(self.push(Tensor::new(&sx, out)?, Op::AddBias { x, bias, outer, ch, inner }, rg))
    }

    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let mut seen = vec![false; sx.len()];
        if axes.len() != sx.len() || axes.iter().any(|&a| a >= sx.len() || core::mem::replace(&mut seen[a], true)) {
            return Err(dim_err!("permute axes {:?} invalid for shape {:?}", axes, sx));
        }
        let out_shape: Vec<usize> = axes.iter().map(|&a| sx[a]).collect();
        let mut out = vec![F::zero(); self.value(x).numel()];
        kernels::permute(self.value(x).data(), &sx, axes, &mut out);
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(&out_shape, out)?, Op::Permute { x, axes: axes.to_vec() }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::Reshape { x }, rg))
    }

    /// Mean over one axis; the axis is removed from the shape (rank-1 inputs give shape `[1]`).
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        if axis >= sx.len() {
            return Err(dim_err!("mean axis {axis} out of range for {:?}", sx));
        }
        let (outer, len, inner) = (numel(&sx[..axis]), sx[axis], numel(&sx[axis + 1..]));
        let xd = self.value(x).data();
        let mut out = vec![F::zero(); outer * inner];
        let inv = F::one() / F::of(len as f64);
        for o in 0..outer {
            for l in 0..len {
                kernels::axpy(inv, &xd[(o * len + l) * inner..(o * len + l + 1) * inner], &mut out[o * inner..(o + 1) * inner]);
            }
        }
        let mut shape: Vec<usize> = sx.iter().enumerate().filter(|&(i, _)| i != axis).map(|(_, &d)| d).collect();
        if shape.is_empty() {
            shape.push(1);
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(&shape, out)?, Op::MeanAxis { x, outer, len, inner }, rg))
    }

    /// Global average over every axis after the first two: `[B, C, ...] -> [B, C]`.
    pub fn mean_pool_global(&mut self, x: Var) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        if sx.len() < 3 {
            return Err(dim_err!("mean_pool_global expects [B, C, ...], got {:?}", sx));
        }
        let r = self.reshape(x, &[sx[0], sx[1], numel(&sx[2..])])?;
        self.mean_axis(r, 2)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum::<F>();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Sum { x }, rg)
    }

    /// Mean over the batch of `-log softmax(logits)[label]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let sl = self.shape(logits).to_vec();
        if sl.len() != 2 || sl[0] != labels.len() {
            return Err(dim_err!("cross entropy expects logits [B, K] with B = {} labels, got {:?}", labels.len(), sl));
        }
        let (bsz, classes) = (sl[0], sl[1]);
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(invalid!("label {bad} out of range for {classes} classes"));
        }
        let ld = self.value(logits).data();
        let mut probs = vec![F::zero(); ld.len()];
        let mut loss = F::zero();
        for b in 0..bsz {
            let row = &ld[b * classes..(b + 1) * classes];
            let mx = row.iter().copied().fold(F::neg_infinity(), F::max);
            let mut z = F::zero();
            for (p, &v) in probs[b * classes..(b + 1) * classes].iter_mut().zip(row) {
                *p = (v - mx).libm_exp();
                z += *p;
            }
            for p in &mut probs[b * classes..(b + 1) * classes] {
                *p /= z;
            }
            loss += z.libm_ln() + mx - row[labels[b]];
        }
        loss /= F::of(bsz as f64);
        if !loss.is_finite() {
            return Err(Error::Numeric(alloc::format!("non-finite cross-entropy loss {loss}")));
        }
        let rg = self.rg(&[logits]);
        Ok(self.push(Tensor::scalar(loss), Op::SoftmaxCe { logits, labels: labels.to_vec(), probs, classes }, rg))
    }

    /// Divides each row (last axis) by `max(‖row‖₂, eps)`.
    pub fn l2_row_normalize(&mut self, x: Var, eps: F) -> Var {
        let sx = self.shape(x).to_vec();
        let row = *sx.last().expect("non-empty shape");
        let xd = self.value(x).data();
        let mut out = vec![F::zero(); xd.len()];
        let mut norms = Vec::with_capacity(xd.len() / row);
        for (src, dst) in xd.chunks(row).zip(out.chunks_mut(row)) {
            let nrm = kernels::dot(src, src).sqrt();
            let d = nrm.max(eps);
            for (o, &v) in dst.iter_mut().zip(src) {
                *o = v / d;
            }
            norms.push(nrm);
        }
        let rg = self.rg(&[x]);
        self.push(Tensor::new(&sx, out).expect("same shape"), Op::L2RowNorm { x, eps, norms, row }, rg)
    }

    /// `(A + Aᵀ) / 2` over the last two (square) axes.
    pub fn symmetrize(&mut self, x: Var) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let r = sx.len();
        if r < 2 || sx[r - 1] != sx[r - 2] {
            return Err(dim_err!("symmetrize expects [.., N, N], got {:?}", sx));
        }
        let n = sx[r - 1];
        let out = symmetrize_buf(self.value(x).data(), n);
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(&sx, out)?, Op::Symmetrize { x, n }, rg))
    }

    /// Softmax over the last axis.
    pub fn row_softmax(&mut self, x: Var) -> Var {
        let sx = self.shape(x).to_vec();
        let row = *sx.last().expect("non-empty shape");
        let xd = self.value(x).data();
        let mut out = vec![F::zero(); xd.len()];
        for (src, dst) in xd.chunks(row).zip(out.chunks_mut(row)) {
            let mx = src.iter().copied().fold(F::neg_infinity(), F::max);
            let mut z = F::zero();
            for (o, &v) in dst.iter_mut().zip(src) {
                *o = (v - mx).libm_exp();
                z += *o;
            }
            for o in dst.iter_mut() {
                *o /= z;
            }
        }
        let rg = self.rg(&[x]);
        self.push(Tensor::new(&sx, out).expect("same shape"), Op::RowSoftmax { x, row }, rg)
    }

    /// Reverse sweep from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Grads<F>> {
        if self.value(loss).numel() != 1 {
            return Err(dim_err!("backward needs a scalar loss, got shape {:?}", self.shape(loss)));
        }
        let mut grads: Vec<Option<Vec<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![F::one()]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(dy) = grads[i].take() else { continue };
            self.backward_node(node, &dy, &mut grads);
            grads[i] = Some(dy);
        }
        Ok(Grads { grads })
    }

    fn backward_node(&self, node: &Node<F>, dy: &[F], grads: &mut [Option<Vec<F>>]) {
        // Gradient buffer for `v`, or `None` if `v` does not need one.
        macro_rules! g {
            ($v:expr) => {{
                let v: Var = $v;
                if self.nodes[v.0].requires_grad {
                    let len = self.nodes[v.0].value.numel();
                    Some(grads[v.0].get_or_insert_with(|| vec![F::zero(); len]).as_mut_slice())
                } else {
                    None
                }
            }};
        }
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, plan } => {
                let (m, k, n) = (plan.m, plan.k, plan.n);
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                if let Some(ga) = g!(*a) {
                    for (bi, &(ao, bo)) in plan.offsets.iter().enumerate() {
                        kernels::gemm_nt_acc(&dy[bi * m * n..(bi + 1) * m * n], &bd[bo..bo + k * n], &mut ga[ao..ao + m * k], m, n, k);
                    }
                }
                if let Some(gb) = g!(*b) {
                    for (bi, &(ao, bo)) in plan.offsets.iter().enumerate() {
                        kernels::gemm_tn_acc(&ad[ao..ao + m * k], &dy[bi * m * n..(bi + 1) * m * n], &mut gb[bo..bo + k * n], m, k, n);
                    }
                }
            }
            Op::Conv { x, w, geom } => {
                let (xd, wd) = (self.value(*x).data(), self.value(*w).data());
                // x and w are distinct nodes, so split the borrow.
                let mut gw_buf = g!(*w).map(|s| s.to_vec());
                kernels::conv_backward(geom, xd, wd, dy, g!(*x), gw_buf.as_deref_mut());
                if let (Some(buf), Some(gw)) = (gw_buf, g!(*w)) {
                    gw.copy_from_slice(&buf);
                }
            }
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, training, outer, ch, inner } => {
                let (outer, ch, inner) = (*outer, *ch, *inner);
                let gd = self.value(*gamma).data();
                let mut sum_dy = vec![F::zero(); ch];
                let mut sum_dy_xhat = vec![F::zero(); ch];
                for b in 0..outer {
                    for c in 0..ch {
                        let base = (b * ch + c) * inner;
                        sum_dy[c] += dy[base..base + inner].iter().copied().sum::<F>();
                        sum_dy_xhat[c] += kernels::dot(&dy[base..base + inner], &xhat[base..base + inner]);
                    }
                }
                if let Some(gg) = g!(*gamma) {
                    for c in 0..ch {
                        gg[c] += sum_dy_xhat[c];
                    }
                }
                if let Some(gb) = g!(*beta) {
                    for c in 0..ch {
                        gb[c] += sum_dy[c];
                    }
                }
                if let Some(gx) = g!(*x) {
                    let cnt = F::of((outer * inner) as f64);
                    for b in 0..outer {
                        for c in 0..ch {
                            let base = (b * ch + c) * inner;
                            let scale = gd[c] * inv_std[c];
                            if *training {
                                let (m1, m2) = (sum_dy[c] / cnt, sum_dy_xhat[c] / cnt);
                                for i in base..base + inner {
                                    gx[i] += scale * (dy[i] - m1 - xhat[i] * m2);
                                }
                            } else {
                                kernels::axpy(scale, &dy[base..base + inner], &mut gx[base..base + inner]);
                            }
                        }
                    }
                }
            }
            Op::Relu { x } => {
                let xd = self.value(*x).data();
                if let Some(gx) = g!(*x) {
                    for i in 0..dy.len() {
                        if xd[i] > F::zero() {
                            gx[i] += dy[i];
                        }
                    }
                }
            }
            Op::Add { a, b } => {
                if let Some(ga) = g!(*a) {
                    kernels::axpy(F::one(), dy, ga);
                }
                if let Some(gb) = g!(*b) {
                    kernels::axpy(F::one(), dy, gb);
                }
            }
            Op::Sub { a, b } => {
                if let Some(ga) = g!(*a) {
                    kernels::axpy(F::one(), dy, ga);
                }
                if let Some(gb) = g!(*b) {
                    kernels::axpy(-F::one(), dy, gb);
                }
            }
            Op::Mul { a, b } => {
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                if let Some(ga) = g!(*a) {
                    for i in 0..dy.len() {
                        ga[i] += dy[i] * bd[i];
                    }
                }
                if let Some(gb) = g!(*b) {
                    for i in 0..dy.len() {
                        gb[i] += dy[i] * ad[i];
                    }
                }
            }
            Op::Scale { x, s } => {
                if let Some(gx) = g!(*x) {
                    kernels::axpy(*s, dy, gx);
                }
            }
            Op::AddBias { x, bias, outer, ch, inner } => {
                if let Some(gx) = g!(*x) {
                    kernels::axpy(F::one(), dy, gx);
                }
                if let Some(gb) = g!(*bias) {
                    for o in 0..*outer {
                        for c in 0..*ch {
                            let base = (o * ch + c) * inner;
                            gb[c] += dy[base..base + inner].iter().copied().sum::<F>();
                        }
                    }
                }
            }
            Op::Permute { x, axes } => {
                if let Some(gx) = g!(*x) {
                    let mut inv = vec![0; axes.len()];
                    for (j, &a) in axes.iter().enumerate() {
                        inv[a] = j;
                    }
                    let mut tmp = vec![F::zero(); dy.len()];
                    kernels::permute(dy, node.value.shape(), &inv, &mut tmp);
                    kernels::axpy(F::one(), &tmp, gx);
                }
            }
            Op::Reshape { x } => {
                if let Some(gx) = g!(*x) {
                    kernels::axpy(F::one(), dy, gx);
                }
            }
            Op::MeanAxis { x, outer, len, inner } => {
                if let Some(gx) = g!(*x) {
                    let inv = F::one() / F::of(*len as f64);
                    for o in 0..*outer {
                        for l in 0..*len {
                            let dst = &mut gx[(o * len + l) * inner..(o * len + l + 1) * inner];
                            kernels::axpy(inv, &dy[o * inner..(o + 1) * inner], dst);
                        }
                    }
                }
            }
            Op::Sum { x } => {
                if let Some(gx) = g!(*x) {
                    for v in gx.iter_mut() {
                        *v += dy[0];
                    }
                }
            }
            Op::SoftmaxCe { logits, labels, probs, classes } => {
                if let Some(gl) = g!(*logits) {
                    let scale = dy[0] / F::of(labels.len() as f64);
                    for (b, &lab) in labels.iter().enumerate() {
                        for c in 0..*classes {
                            let i = b * classes + c;
                            let t = if c == lab { F::one() } else { F::zero() };
                            gl[i] += scale * (probs[i] - t);
                        }
                    }
                }
            }
            Op::L2RowNorm { x, eps, norms, row } => {
                let yd = node.value.data();
                if let Some(gx) = g!(*x) {
                    for (r, &nrm) in norms.iter().enumerate() {
                        let s = r * row..(r + 1) * row;
                        if nrm > *eps {
                            let proj = kernels::dot(&yd[s.clone()], &dy[s.clone()]);
                            for i in s {
                                gx[i] += (dy[i] - yd[i] * proj) / nrm;
                            }
                        } else {
                            kernels::axpy(F::one() / *eps, &dy[s.clone()], &mut gx[s]);
                        }
                    }
                }
            }
            Op::Symmetrize { x, n } => {
                if let Some(gx) = g!(*x) {
                    kernels::axpy(F::one(), &symmetrize_buf(dy, *n), gx);
                }
            }
            Op::RowSoftmax { x, row } => {
                let yd = node.value.data();
                if let Some(gx) = g!(*x) {
                    for r in 0..yd.len() / row {
                        let s = r * row..(r + 1) * row;
                        let proj = kernels::dot(&yd[s.clone()], &dy[s.clone()]);
                        for i in s {
                            gx[i] += yd[i] * (dy[i] - proj);
                        }
                    }
                }
            }
        }
    }
}

fn symmetrize_buf<F: Real>(x: &[F], n: usize) -> Vec<F> {
    let half = F::of(0.5);
    let mut out = vec![F::zero(); x.len()];
    for (src, dst) in x.chunks(n * n).zip(out.chunks_mut(n * n)) {
        for i in 0..n {
            for j in 0..n {
                dst[i * n + j] = (src[i * n + j] + src[j * n + i]) * half;
            }
        }
    }
    out
}
