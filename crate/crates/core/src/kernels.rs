//! Raw loops behind the differentiable operations. All buffers are row-major.

use alloc::vec;
use alloc::vec::Vec;

use crate::real::Real;

#[inline(always)]
pub(crate) fn axpy<F: Real>(alpha: F, x: &[F], y: &mut [F]) {
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv += alpha * xv;
    }
}

#[inline]
pub(crate) fn dot<F: Real>(x: &[F], y: &[F]) -> F {
    let mut acc = F::zero();
    for (&a, &b) in x.iter().zip(y) {
        acc += a * b;
    }
    acc
}

const MR: usize = 4;
const NR: usize = 16;

/// `c[i·ldc + j] += Σ_p a[i·lda + p] · b[p·ldb + j]` for `i < m`, `j < n`, `p < k`.
///
/// Register-blocked over 4×16 tiles of `c`; remainders fall back to plain loops.
pub(crate) fn gemm<F: Real>(m: usize, n: usize, k: usize, a: &[F], lda: usize, b: &[F], ldb: usize, c: &mut [F], ldc: usize) {
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    #[cfg(all(feature = "std", target_arch = "x86_64"))]
    if has_avx2() {
        // SAFETY: the CPU supports the enabled features.
        unsafe { gemm_avx2(m, n, k, a, lda, b, ldb, c, ldc) };
        return;
    }
    gemm_body(m, n, k, a, lda, b, ldb, c, ldc);
}

#[cfg(all(feature = "std", target_arch = "x86_64"))]
fn has_avx2() -> bool {
    use core::sync::atomic::{AtomicU8, Ordering};
    static STATE: AtomicU8 = AtomicU8::new(0);
    match STATE.load(Ordering::Relaxed) {
        1 => true,
        2 => false,
        _ => {
            let yes = std::is_x86_feature_detected!("avx2");
            STATE.store(if yes { 1 } else { 2 }, Ordering::Relaxed);
            yes
        }
    }
}

#[cfg(all(feature = "std", target_arch = "x86_64"))]
#[target_feature(enable = "avx2")]
unsafe fn gemm_avx2<F: Real>(m: usize, n: usize, k: usize, a: &[F], lda: usize, b: &[F], ldb: usize, c: &mut [F], ldc: usize) {
    gemm_body(m, n, k, a, lda, b, ldb, c, ldc);
}

#[inline(always)]
fn gemm_body<F: Real>(m: usize, n: usize, k: usize, a: &[F], lda: usize, b: &[F], ldb: usize, c: &mut [F], ldc: usize) {
    debug_assert!(a.len() >= (m - 1) * lda + k && b.len() >= (k - 1) * ldb + n && c.len() >= (m - 1) * ldc + n);
    let mut i = 0;
    while i + MR <= m {
        let mut j = 0;
        while j + NR <= n {
            let mut acc = [[F::zero(); NR]; MR];
            let rows: [&[F]; MR] = core::array::from_fn(|r| &a[(i + r) * lda..(i + r) * lda + k]);
            for p in 0..k {
                let brow: &[F; NR] = b[p * ldb + j..p * ldb + j + NR].try_into().expect("NR values");
                for (row, ar) in acc.iter_mut().zip(&rows) {
                    let av = ar[p];
                    for q in 0..NR {
                        row[q] += av * brow[q];
                    }
                }
            }
            for (r, row) in acc.iter().enumerate() {
                let cr = &mut c[(i + r) * ldc + j..(i + r) * ldc + j + NR];
                for q in 0..NR {
                    cr[q] += row[q];
                }
            }
            j += NR;
        }
        if j < n {
            for r in 0..MR {
                let arow = &a[(i + r) * lda..(i + r) * lda + k];
                let cr = &mut c[(i + r) * ldc + j..(i + r) * ldc + n];
                for (p, &av) in arow.iter().enumerate() {
                    axpy(av, &b[p * ldb + j..p * ldb + n], cr);
                }
            }
        }
        i += MR;
    }
    for ii in i..m {
        let arow = &a[ii * lda..ii * lda + k];
        let cr = &mut c[ii * ldc..ii * ldc + n];
        for (p, &av) in arow.iter().enumerate() {
            axpy(av, &b[p * ldb..p * ldb + n], cr);
        }
    }
}

/// `[rows × cols]` (row stride `ld`) into a contiguous `[cols × rows]`.
pub(crate) fn transpose<F: Real>(x: &[F], rows: usize, cols: usize, ld: usize) -> Vec<F> {
    let mut out = vec![F::zero(); rows * cols];
    for r in 0..rows {
        for (c, &v) in x[r * ld..r * ld + cols].iter().enumerate() {
            out[c * rows + r] = v;
        }
    }
    out
}

/// c[m×n] += a[m×k] · b[k×n]
pub(crate) fn gemm_acc<F: Real>(a: &[F], b: &[F], c: &mut [F], m: usize, k: usize, n: usize) {
    gemm(m, n, k, a, k, b, n, c, n);
}

/// c[m×k] += a[m×n] · b[k×n]ᵀ
pub(crate) fn gemm_nt_acc<F: Real>(a: &[F], b: &[F], c: &mut [F], m: usize, n: usize, k: usize) {
    let bt = transpose(b, k, n, n);
    gemm(m, k, n, a, n, &bt, k, c, k);
}

/// c[k×n] += a[m×k]ᵀ · b[m×n]
pub(crate) fn gemm_tn_acc<F: Real>(a: &[F], b: &[F], c: &mut [F], m: usize, k: usize, n: usize) {
    let at = transpose(a, m, k, k);
    gemm(k, n, m, &at, m, b, n, c, n);
}

/// Geometry of a t×1 convolution over [B, C, T, N].
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub t_in: usize,
    pub t_out: usize,
    pub n: usize,
    pub kt: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    /// Output rows `[lo, hi)` whose input row `to*stride + dt - pad` is in range.
    #[inline]
    fn valid_rows(&self, dt: usize) -> (usize, usize) {
        let shift = dt as isize - self.pad as isize;
        let s = self.stride as isize;
        let lo = if shift >= 0 { 0 } else { ((-shift) + s - 1) / s };
        let max_in = self.t_in as isize - 1 - shift;
        let hi = if max_in < 0 { 0 } else { (max_in / s + 1).min(self.t_out as isize) };
        (lo as usize, hi.max(lo) as usize)
    }

    #[inline]
    fn in_row(&self, to: usize, dt: usize) -> usize {
        to * self.stride + dt - self.pad
    }
}

pub(crate) fn conv_forward<F: Real>(g: &ConvGeom, x: &[F], w: &[F], y: &mut [F]) {
    let (n, ti, to_) = (g.n, g.t_in, g.t_out);
    let (xs, ys) = (g.c_in * ti * n, g.c_out * to_ * n);
    for dt in 0..g.kt {
        let (lo, hi) = g.valid_rows(dt);
        if lo >= hi {
            continue;
        }
        let wd = tap(g, w, dt);
        let len = (hi - lo) * n;
        for b in 0..g.batch {
            let yb = &mut y[b * ys + lo * n..(b + 1) * ys];
            if g.stride == 1 {
                let r0 = g.in_row(lo, dt);
                gemm(g.c_out, len, g.c_in, &wd, g.c_in, &x[b * xs + r0 * n..(b + 1) * xs], ti * n, yb, to_ * n);
            } else {
                let packed = gather_rows(g, &x[b * xs..(b + 1) * xs], dt, lo, hi);
                gemm(g.c_out, len, g.c_in, &wd, g.c_in, &packed, len, yb, to_ * n);
            }
        }
    }
}

/// Kernel tap `dt` as a contiguous `[C_out × C_in]` matrix.
fn tap<F: Real>(g: &ConvGeom, w: &[F], dt: usize) -> Vec<F> {
    (0..g.c_out * g.c_in).map(|i| w[i * g.kt + dt]).collect()
}

/// Input rows read by tap `dt` for output rows `[lo, hi)`, as `[C_in × (hi−lo)·N]`.
fn gather_rows<F: Real>(g: &ConvGeom, xb: &[F], dt: usize, lo: usize, hi: usize) -> Vec<F> {
    let (n, ti) = (g.n, g.t_in);
    let len = (hi - lo) * n;
    let mut out = vec![F::zero(); g.c_in * len];
    for ci in 0..g.c_in {
        for (k, to) in (lo..hi).enumerate() {
            let r = g.in_row(to, dt);
            out[ci * len + k * n..ci * len + (k + 1) * n].copy_from_slice(&xb[(ci * ti + r) * n..(ci * ti + r + 1) * n]);
        }
    }
    out
}

/// Accumulates input and kernel gradients; either may be skipped.
pub(crate) fn conv_backward<F: Real>(
    g: &ConvGeom,
    x: &[F],
    w: &[F],
    dy: &[F],
    mut dx: Option<&mut [F]>,
    mut dw: Option<&mut [F]>,
) {
    let (n, ti, to_) = (g.n, g.t_in, g.t_out);
    let (xs, ys) = (g.c_in * ti * n, g.c_out * to_ * n);
    for dt in 0..g.kt {
        let (lo, hi) = g.valid_rows(dt);
        if lo >= hi {
            continue;
        }
        let len = (hi - lo) * n;
        let wt = dx.is_some().then(|| transpose(&tap(g, w, dt), g.c_out, g.c_in, g.c_in));
        let mut dw_tap = vec![F::zero(); if dw.is_some() { g.c_out * g.c_in } else { 0 }];
        for b in 0..g.batch {
            let dyb = &dy[b * ys + lo * n..(b + 1) * ys];
            let xb = &x[b * xs..(b + 1) * xs];
            if let Some(dx) = dx.as_deref_mut() {
                let wt = wt.as_deref().expect("built when dx is requested");
                let dxb = &mut dx[b * xs..(b + 1) * xs];
                if g.stride == 1 {
                    let r0 = g.in_row(lo, dt);
                    gemm(g.c_in, len, g.c_out, wt, g.c_out, dyb, to_ * n, &mut dxb[r0 * n..], ti * n);
                } else {
                    let mut packed = vec![F::zero(); g.c_in * len];
                    gemm(g.c_in, len, g.c_out, wt, g.c_out, dyb, to_ * n, &mut packed, len);
                    for ci in 0..g.c_in {
                        for (k, to) in (lo..hi).enumerate() {
                            let r = g.in_row(to, dt);
                            axpy(F::one(), &packed[ci * len + k * n..ci * len + (k + 1) * n], &mut dxb[(ci * ti + r) * n..(ci * ti + r + 1) * n]);
                        }
                    }
                }
            }
            if dw.is_some() {
                // dW_tap += dY · Xᵀ over the valid rows.
                let xt = if g.stride == 1 {
                    let r0 = g.in_row(lo, dt);
                    transpose(&xb[r0 * n..], g.c_in, len, ti * n)
                } else {
                    transpose(&gather_rows(g, xb, dt, lo, hi), g.c_in, len, len)
                };
                gemm(g.c_out, g.c_in, len, dyb, to_ * n, &xt, g.c_in, &mut dw_tap, g.c_in);
            }
        }
        if let Some(dw) = dw.as_deref_mut() {
            for (i, v) in dw_tap.into_iter().enumerate() {
                dw[i * g.kt + dt] += v;
            }
        }
    }
}

/// Permutes a row-major buffer of `shape` by `axes`; `out[j] = x[..]` with out axis `j` = input axis `axes[j]`.
pub(crate) fn permute<F: Real>(x: &[F], shape: &[usize], axes: &[usize], out: &mut [F]) {
    let rank = shape.len();
    let in_strides = crate::tensor::strides(shape);
    let out_shape: alloc::vec::Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let src_strides: alloc::vec::Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let mut idx = alloc::vec![0usize; rank];
    let mut src = 0usize;
    let last = rank - 1;
    let (inner, inner_stride) = (out_shape[last], src_strides[last]);
    let mut o = 0;
    while o < out.len() {
        for i in 0..inner {
            out[o + i] = x[src + i * inner_stride];
        }
        o += inner;
        // advance the outer index odometer
        let mut ax = last;
        while ax > 0 {
            ax -= 1;
            idx[ax] += 1;
            src += src_strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            src -= src_strides[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
}
