//! Dense row-major tensors over `f32` (training) or `f64` (gradient checks),
//! plus the pure kernels shared by the autodiff graph and the cached
//! inference path.
//!
//! Operations are pure functions on immutable values; nothing here mutates
//! its inputs, so tensors can be shared freely across threads.

use crate::error::{Error, Result};
use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

/// Element type of a [`Tensor`]: `f32` for training, `f64` for verification.
pub trait Scalar:
    Copy
    + Send
    + Sync
    + Debug
    + PartialOrd
    + PartialEq
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + 'static
{
    const ZERO: Self;
    const ONE: Self;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn sqrt(self) -> Self;
    fn abs(self) -> Self;
    fn is_finite(self) -> bool;
    fn maximum(self, other: Self) -> Self;
    fn recip(self) -> Self;

    /// C = alpha * A*B + beta * C with explicit strides (row, col) per matrix.
    ///
    /// # Safety
    /// Pointers must be valid for the given dimensions and strides.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

macro_rules! impl_scalar {
    ($t:ty, $gemm:path) => {
        impl Scalar for $t {
            const ZERO: Self = 0.0;
            const ONE: Self = 1.0;

            #[inline(always)]
            fn from_f64(v: f64) -> Self {
                v as $t
            }
            #[inline(always)]
            fn to_f64(self) -> f64 {
                self as f64
            }
            #[inline(always)]
            fn exp(self) -> Self {
                self.exp()
            }
            #[inline(always)]
            fn sqrt(self) -> Self {
                self.sqrt()
            }
            #[inline(always)]
            fn abs(self) -> Self {
                self.abs()
            }
            #[inline(always)]
            fn is_finite(self) -> bool {
                <$t>::is_finite(self)
            }
            #[inline(always)]
            fn maximum(self, other: Self) -> Self {
                if self > other {
                    self
                } else {
                    other
                }
            }
            #[inline(always)]
            fn recip(self) -> Self {
                1.0 / self
            }

            #[inline]
            unsafe fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: *const Self,
                rsa: isize,
                csa: isize,
                b: *const Self,
                rsb: isize,
                csb: isize,
                beta: Self,
                c: *mut Self,
                rsc: isize,
                csc: isize,
            ) {
                $gemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);

/// Dense row-major tensor. `product(shape) == data.len()` always holds.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<S: Scalar = f32> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![S::ZERO; n] }
    }

    pub fn filled(shape: &[usize], v: S) -> Self {
        let n = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![v; n] }
    }

    pub fn scalar(v: S) -> Self {
        Tensor { shape: vec![], data: vec![v] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<S>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::ShapeMismatch {
                op: "from_vec",
                detail: format!("shape {:?} needs {} elements, got {}", shape, n, data.len()),
            });
        }
        Ok(Tensor { shape: shape.to_vec(), data })
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> S) -> Self {
        let n: usize = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: (0..n).map(|i| f(i)).collect() }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1 && self.shape.is_empty()
    }

    pub fn scalar_value(&self) -> S {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    /// Same data, new shape. Element count must match.
    pub fn reshaped(&self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                detail: format!("{:?} -> {:?}", self.shape, shape),
            });
        }
        Ok(Tensor { shape: shape.to_vec(), data: self.data.clone() })
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    /// Rows-by-last-axis view parameters: (row count, row length).
    pub fn rows(&self) -> (usize, usize) {
        let last = *self.shape.last().unwrap_or(&1);
        (self.data.len() / last.max(1), last)
    }

    pub fn assert_finite(&self, what: &str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(what.to_string()))
        }
    }

    pub fn to_f64_tensor(&self) -> Tensor<f64> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|v| v.to_f64()).collect() }
    }

    pub fn from_f64_tensor(t: &Tensor<f64>) -> Self {
        Tensor { shape: t.shape.clone(), data: t.data.iter().map(|&v| S::from_f64(v)).collect() }
    }
}

fn shape_err(op: &'static str, a: &[usize], b: &[usize]) -> Error {
    Error::ShapeMismatch { op, detail: format!("lhs {:?} vs rhs {:?}", a, b) }
}

/// (m,k) x (k,n) -> (m,n)
pub fn matmul<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    if a.shape().len() != 2 || b.shape().len() != 2 || a.shape()[1] != b.shape()[0] {
        return Err(shape_err("matmul", a.shape(), b.shape()));
    }
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let n = b.shape()[1];
    let mut out = Tensor::zeros(&[m, n]);
    unsafe {
        S::gemm(
            m,
            k,
            n,
            S::ONE,
            a.data().as_ptr(),
            k as isize,
            1,
            b.data().as_ptr(),
            n as isize,
            1,
            S::ZERO,
            out.data_mut().as_mut_ptr(),
            n as isize,
            1,
        );
    }
    Ok(out)
}

/// (m,k) x (n,k)^T -> (m,n)
pub fn matmul_nt<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    if a.shape().len() != 2 || b.shape().len() != 2 || a.shape()[1] != b.shape()[1] {
        return Err(shape_err("matmul_nt", a.shape(), b.shape()));
    }
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let n = b.shape()[0];
    let mut out = Tensor::zeros(&[m, n]);
    unsafe {
        S::gemm(
            m,
            k,
            n,
            S::ONE,
            a.data().as_ptr(),
            k as isize,
            1,
            b.data().as_ptr(),
            1,
            k as isize,
            S::ZERO,
            out.data_mut().as_mut_ptr(),
            n as isize,
            1,
        );
    }
    Ok(out)
}

/// (m,k)^T x (m,n) -> (k,n)
pub fn matmul_tn<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    if a.shape().len() != 2 || b.shape().len() != 2 || a.shape()[0] != b.shape()[0] {
        return Err(shape_err("matmul_tn", a.shape(), b.shape()));
    }
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let n = b.shape()[1];
    let mut out = Tensor::zeros(&[k, n]);
    unsafe {
        S::gemm(
            k,
            m,
            n,
            S::ONE,
            a.data().as_ptr(),
            1,
            k as isize,
            b.data().as_ptr(),
            n as isize,
            1,
            S::ZERO,
            out.data_mut().as_mut_ptr(),
            n as isize,
            1,
        );
    }
    Ok(out)
}

/// Batched matmul on rank-3 tensors: (b,m,k) x (b,k,n) -> (b,m,n), or with
/// `transpose_b` set, (b,m,k) x (b,n,k)^T -> (b,m,n).
pub fn bmm<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>, transpose_b: bool) -> Result<Tensor<S>> {
    let (sa, sb) = (a.shape(), b.shape());
    let ok = sa.len() == 3
        && sb.len() == 3
        && sa[0] == sb[0]
        && if transpose_b { sa[2] == sb[2] } else { sa[2] == sb[1] };
    if !ok {
        return Err(shape_err(if transpose_b { "bmm_nt" } else { "bmm" }, sa, sb));
    }
    let (batch, m, k) = (sa[0], sa[1], sa[2]);
    let n = if transpose_b { sb[1] } else { sb[2] };
    let mut out: Tensor<S> = Tensor::zeros(&[batch, m, n]);
    let (rsb, csb) = if transpose_b { (1isize, k as isize) } else { (n as isize, 1isize) };
    for i in 0..batch {
        unsafe {
            S::gemm(
                m,
                k,
                n,
                S::ONE,
                a.data().as_ptr().add(i * m * k),
                k as isize,
                1,
                b.data().as_ptr().add(i * k * n),
                rsb,
                csb,
                S::ZERO,
                out.data_mut().as_mut_ptr().add(i * m * n),
                n as isize,
                1,
            );
        }
    }
    Ok(out)
}

pub fn ewise<S: Scalar>(
    op: &'static str,
    a: &Tensor<S>,
    b: &Tensor<S>,
    f: impl Fn(S, S) -> S,
) -> Result<Tensor<S>> {
    if a.shape() != b.shape() {
        return Err(shape_err(op, a.shape(), b.shape()));
    }
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Ok(Tensor { shape: a.shape().to_vec(), data })
}

pub fn add<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    ewise("add", a, b, |x, y| x + y)
}

pub fn sub<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    ewise("sub", a, b, |x, y| x - y)
}

pub fn mul<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    ewise("mul", a, b, |x, y| x * y)
}

/// (..., n) + (n,) broadcast along the last axis. The only broadcasting rule
/// in the op set; everything else requires explicit reshapes.
pub fn add_bias<S: Scalar>(a: &Tensor<S>, bias: &Tensor<S>) -> Result<Tensor<S>> {
    let n = *a.shape().last().unwrap_or(&0);
    if bias.shape().len() != 1 || bias.shape()[0] != n {
        return Err(shape_err("add_bias", a.shape(), bias.shape()));
    }
    let mut out = a.clone();
    for row in out.data_mut().chunks_mut(n) {
        for (o, &b) in row.iter_mut().zip(bias.data()) {
            *o += b;
        }
    }
    Ok(out)
}

/// Numerically-stable softmax over the last axis.
pub fn softmax_last<S: Scalar>(a: &Tensor<S>) -> Tensor<S> {
    let (_, n) = a.rows();
    let mut out = a.clone();
    if n == 0 {
        return out;
    }
    for row in out.data_mut().chunks_mut(n) {
        let mut m = row[0];
        for &v in row.iter() {
            m = m.maximum(v);
        }
        let mut denom = S::ZERO;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            denom += *v;
        }
        let inv = denom.recip();
        for v in row.iter_mut() {
            *v = *v * inv;
        }
    }
    out
}

/// RMS normalization over the last axis with a learned gain:
/// `y = x / sqrt(mean(x^2) + eps) * gain`. Returns `(y, inv_rms)` where
/// `inv_rms` holds one value per row (used by the backward pass).
pub fn rmsnorm_rows<S: Scalar>(
    x: &Tensor<S>,
    gain: &Tensor<S>,
    eps: S,
) -> Result<(Tensor<S>, Vec<S>)> {
    let (rows, n) = x.rows();
    if gain.shape().len() != 1 || gain.shape()[0] != n || n == 0 {
        return Err(shape_err("rmsnorm", x.shape(), gain.shape()));
    }
    let mut out = x.clone();
    let mut inv = Vec::with_capacity(rows);
    let nf = S::from_f64(n as f64);
    for row in out.data_mut().chunks_mut(n) {
        let mut ms = S::ZERO;
        for &v in row.iter() {
            ms += v * v;
        }
        let r = (ms / nf + eps).sqrt().recip();
        inv.push(r);
        for (v, &g) in row.iter_mut().zip(gain.data()) {
            *v = *v * r * g;
        }
    }
    Ok((out, inv))
}

pub fn silu<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    x.map(|v| v * sigmoid_s(v))
}

pub fn sigmoid<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    x.map(sigmoid_s)
}

#[inline]
pub fn sigmoid_s<S: Scalar>(v: S) -> S {
    (S::ONE + (-v).exp()).recip()
}

/// Rotary position embedding over the last axis of a (batch, seq, dim)
/// tensor; consecutive pairs (2i, 2i+1) are rotated by pos * theta^(-2i/dim).
/// `positions` has one entry per sequence index. `inverse` applies the
/// opposite rotation (used by the backward pass).
pub fn rope<S: Scalar>(
    x: &Tensor<S>,
    positions: &[usize],
    theta: f64,
    inverse: bool,
) -> Result<Tensor<S>> {
    let s = x.shape();
    if s.len() != 3 || s[2] % 2 != 0 || s[1] != positions.len() {
        return Err(Error::ShapeMismatch {
            op: "rope",
            detail: format!("shape {:?}, {} positions (dim must be even)", s, positions.len()),
        });
    }
    let (b, t, d) = (s[0], s[1], s[2]);
    let half = d / 2;
    // Precompute per (position, pair) angles once; shared across the batch.
    let mut cos_sin = Vec::with_capacity(t * half);
    for &p in positions {
        for i in 0..half {
            let freq = theta.powf(-2.0 * i as f64 / d as f64);
            let ang = p as f64 * freq;
            let (sin, cos) = ang.sin_cos();
            let sin = if inverse { -sin } else { sin };
            cos_sin.push((S::from_f64(cos), S::from_f64(sin)));
        }
    }
    let mut out = x.clone();
    let data = out.data_mut();
    for bi in 0..b {
        for ti in 0..t {
            let base = (bi * t + ti) * d;
            for i in 0..half {
                let (cos, sin) = cos_sin[ti * half + i];
                let e = data[base + 2 * i];
                let o = data[base + 2 * i + 1];
                data[base + 2 * i] = e * cos - o * sin;
                data[base + 2 * i + 1] = e * sin + o * cos;
            }
        }
    }
    Ok(out)
}

/// Arbitrary axis permutation (copying).
pub fn permute<S: Scalar>(x: &Tensor<S>, perm: &[usize]) -> Result<Tensor<S>> {
    let s = x.shape();
    let rank = s.len();
    let mut seen = vec![false; rank];
    if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
        return Err(Error::ShapeMismatch { op: "permute", detail: format!("perm {:?} on {:?}", perm, s) });
    }
    let new_shape: Vec<usize> = perm.iter().map(|&p| s[p]).collect();
    let mut in_strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * s[i + 1];
    }
    let perm_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut out = Tensor::zeros(&new_shape);
    let mut idx = vec![0usize; rank];
    let numel = x.numel();
    let out_data = out.data_mut();
    let in_data = x.data();
    for flat in 0..numel {
        let mut src = 0;
        for (i, &stride) in perm_strides.iter().enumerate() {
            src += idx[i] * stride;
        }
        out_data[flat] = in_data[src];
        for i in (0..rank).rev() {
            idx[i] += 1;
            if idx[i] < new_shape[i] {
                break;
            }
            idx[i] = 0;
        }
    }
    Ok(out)
}

pub fn concat<S: Scalar>(parts: &[&Tensor<S>], axis: usize) -> Result<Tensor<S>> {
    let first = parts.first().ok_or(Error::ShapeMismatch {
        op: "concat",
        detail: "no inputs".into(),
    })?;
    let rank = first.shape().len();
    if axis >= rank {
        return Err(Error::ShapeMismatch { op: "concat", detail: format!("axis {} rank {}", axis, rank) });
    }
    let mut axis_total = 0;
    for p in parts {
        if p.shape().len() != rank
            || p.shape().iter().enumerate().any(|(i, &e)| i != axis && e != first.shape()[i])
        {
            return Err(shape_err("concat", first.shape(), p.shape()));
        }
        axis_total += p.shape()[axis];
    }
    let mut shape = first.shape().to_vec();
    shape[axis] = axis_total;
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let mut out = Tensor::zeros(&shape);
    let mut offset = 0;
    for p in parts {
        let pa = p.shape()[axis];
        for o in 0..outer {
            let src = &p.data()[o * pa * inner..(o + 1) * pa * inner];
            let dst_start = (o * axis_total + offset) * inner;
            out.data_mut()[dst_start..dst_start + pa * inner].copy_from_slice(src);
        }
        offset += pa;
    }
    Ok(out)
}

/// Contiguous range along one axis.
pub fn slice<S: Scalar>(x: &Tensor<S>, axis: usize, start: usize, len: usize) -> Result<Tensor<S>> {
    let s = x.shape();
    if axis >= s.len() || start + len > s[axis] {
        return Err(Error::ShapeMismatch {
            op: "slice",
            detail: format!("axis {} range {}..{} on {:?}", axis, start, start + len, s),
        });
    }
    let mut shape = s.to_vec();
    shape[axis] = len;
    let outer: usize = s[..axis].iter().product();
    let inner: usize = s[axis + 1..].iter().product();
    let mut out = Tensor::zeros(&shape);
    for o in 0..outer {
        let src_start = (o * s[axis] + start) * inner;
        let dst_start = o * len * inner;
        out.data_mut()[dst_start..dst_start + len * inner]
            .copy_from_slice(&x.data()[src_start..src_start + len * inner]);
    }
    Ok(out)
}

pub fn sum_all<S: Scalar>(x: &Tensor<S>) -> S {
    let mut acc = S::ZERO;
    for &v in x.data() {
        acc += v;
    }
    acc
}

/// Cross-attention pooling with a content-canonical reduction order:
/// `q` is (nq, d) shared queries, `k`/`v` are (batch, nk, d). Returns
/// (output (batch, nq, d), softmax weights (batch, nq, nk)).
///
/// Within each batch element the kv set is visited in an order sorted by the
/// key (then value) row contents, so permuting the kv set leaves the output
/// bit-identical.
pub fn attn_pool_forward<S: Scalar>(
    q: &Tensor<S>,
    k: &Tensor<S>,
    v: &Tensor<S>,
) -> Result<(Tensor<S>, Tensor<S>)> {
    let (qs, ks, vs) = (q.shape(), k.shape(), v.shape());
    let ok = qs.len() == 2 && ks.len() == 3 && ks == vs && qs[1] == ks[2];
    if !ok {
        return Err(Error::ShapeMismatch {
            op: "attn_pool",
            detail: format!("q {:?}, k {:?}, v {:?}", qs, ks, vs),
        });
    }
    let (nq, d) = (qs[0], qs[1]);
    let (b, nk) = (ks[0], ks[1]);
    let scale = S::from_f64(1.0 / (d as f64).sqrt());

    let mut weights = Tensor::zeros(&[b, nq, nk]);
    let mut out = Tensor::zeros(&[b, nq, d]);
    for bi in 0..b {
        let kv_base = bi * nk * d;
        let row_cmp = |x: usize, y: usize| -> std::cmp::Ordering {
            let kx = &k.data()[kv_base + x * d..kv_base + (x + 1) * d];
            let ky = &k.data()[kv_base + y * d..kv_base + (y + 1) * d];
            for (a, b) in kx.iter().zip(ky) {
                if let Some(o) = a.partial_cmp(b) {
                    if o != std::cmp::Ordering::Equal {
                        return o;
                    }
                }
            }
            let vx = &v.data()[kv_base + x * d..kv_base + (x + 1) * d];
            let vy = &v.data()[kv_base + y * d..kv_base + (y + 1) * d];
            for (a, b) in vx.iter().zip(vy) {
                if let Some(o) = a.partial_cmp(b) {
                    if o != std::cmp::Ordering::Equal {
                        return o;
                    }
                }
            }
            std::cmp::Ordering::Equal
        };
        let mut perm: Vec<usize> = (0..nk).collect();
        perm.sort_by(|&x, &y| row_cmp(x, y));
        for qi in 0..nq {
            let qrow = &q.data()[qi * d..(qi + 1) * d];
            let mut max_logit = S::from_f64(f64::NEG_INFINITY);
            let mut logits = vec![S::ZERO; nk];
            for &j in &perm {
                let krow = &k.data()[kv_base + j * d..kv_base + (j + 1) * d];
                let mut dot = S::ZERO;
                for (a, b) in qrow.iter().zip(krow) {
                    dot += *a * *b;
                }
                let l = dot * scale;
                logits[j] = l;
                max_logit = max_logit.maximum(l);
            }
            let mut denom = S::ZERO;
            let mut acc = vec![S::ZERO; d];
            for &j in &perm {
                let e = (logits[j] - max_logit).exp();
                weights.data_mut()[(bi * nq + qi) * nk + j] = e;
                denom += e;
                let vrow = &v.data()[kv_base + j * d..kv_base + (j + 1) * d];
                for (a, &vv) in acc.iter_mut().zip(vrow) {
                    *a += e * vv;
                }
            }
            let inv = denom.recip();
            for w in weights.data_mut()[(bi * nq + qi) * nk..(bi * nq + qi + 1) * nk].iter_mut() {
                *w = *w * inv;
            }
            let out_row = &mut out.data_mut()[(bi * nq + qi) * d..(bi * nq + qi + 1) * d];
            for (o, &a) in out_row.iter_mut().zip(&acc) {
                *o = a * inv;
            }
        }
    }
    Ok((out, weights))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_identity() {
        let eye = Tensor::from_vec(&[3, 3], vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap();
        let a = Tensor::<f32>::from_fn(&[3, 3], |i| i as f32 * 0.5 - 2.0);
        assert_eq!(matmul(&eye, &a).unwrap(), a);
        assert_eq!(matmul(&a, &eye).unwrap(), a);
    }

    #[test]
    fn matmul_shapes_reject() {
        let a = Tensor::<f32>::zeros(&[2, 3]);
        let b = Tensor::<f32>::zeros(&[2, 3]);
        let err = matmul(&a, &b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("matmul") && msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn matmul_transposes_agree() {
        let a = Tensor::<f64>::from_fn(&[4, 3], |i| (i as f64).sin());
        let b = Tensor::<f64>::from_fn(&[3, 5], |i| (i as f64 * 0.7).cos());
        let c = matmul(&a, &b).unwrap();
        // A*B via matmul_nt with B^T materialized.
        let bt = permute(&b, &[1, 0]).unwrap();
        let c2 = matmul_nt(&a, &bt).unwrap();
        for (x, y) in c.data().iter().zip(c2.data()) {
            assert!((x - y).abs() < 1e-12);
        }
        let at = permute(&a, &[1, 0]).unwrap();
        let c3 = matmul_tn(&at, &b).unwrap();
        for (x, y) in c.data().iter().zip(c3.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_length_one_axis_is_one() {
        let x = Tensor::from_vec(&[3, 1], vec![-5.0f32, 0.0, 7.5]).unwrap();
        let y = softmax_last(&x);
        for &v in y.data() {
            assert_eq!(v, 1.0);
        }
    }

    #[test]
    fn rmsnorm_hand_value() {
        // x = [3,4], gain 1, eps 0: rms = sqrt(12.5), y = [0.848528, 1.131371]
        let x = Tensor::from_vec(&[2], vec![3.0f64, 4.0]).unwrap();
        let g = Tensor::filled(&[2], 1.0);
        let (y, _) = rmsnorm_rows(&x, &g, 0.0).unwrap();
        assert!((y.data()[0] - 0.848528).abs() < 1e-6);
        assert!((y.data()[1] - 1.131371).abs() < 1e-6);
    }

    #[test]
    fn concat_slice_round_trip() {
        let a = Tensor::<f32>::from_fn(&[2, 3], |i| i as f32);
        let b = Tensor::<f32>::from_fn(&[2, 2], |i| 100.0 + i as f32);
        let c = concat(&[&a, &b], 1).unwrap();
        assert_eq!(c.shape(), &[2, 5]);
        assert_eq!(slice(&c, 1, 0, 3).unwrap(), a);
        assert_eq!(slice(&c, 1, 3, 2).unwrap(), b);
    }

    #[test]
    fn permute_round_trip() {
        let x = Tensor::<f32>::from_fn(&[2, 3, 4], |i| i as f32);
        let y = permute(&x, &[2, 0, 1]).unwrap();
        assert_eq!(y.shape(), &[4, 2, 3]);
        let z = permute(&y, &[1, 2, 0]).unwrap();
        assert_eq!(z, x);
    }

    #[test]
    fn rope_inverse_round_trip() {
        let x = Tensor::<f64>::from_fn(&[2, 5, 8], |i| (i as f64 * 0.13).sin());
        let pos: Vec<usize> = (3..8).collect();
        let y = rope(&x, &pos, 10000.0, false).unwrap();
        let back = rope(&y, &pos, 10000.0, true).unwrap();
        for (a, b) in x.data().iter().zip(back.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn bmm_matches_loop() {
        let a = Tensor::<f64>::from_fn(&[3, 2, 4], |i| (i as f64 * 0.3).sin());
        let b = Tensor::<f64>::from_fn(&[3, 4, 5], |i| (i as f64 * 0.17).cos());
        let c = bmm(&a, &b, false).unwrap();
        for bi in 0..3 {
            for m in 0..2 {
                for n in 0..5 {
                    let mut acc = 0.0;
                    for k in 0..4 {
                        acc += a.data()[bi * 8 + m * 4 + k] * b.data()[bi * 20 + k * 5 + n];
                    }
                    assert!((c.data()[bi * 10 + m * 5 + n] - acc).abs() < 1e-12);
                }
            }
        }
        // transpose_b path agrees with materialized transpose
        let bt = permute(&b, &[0, 2, 1]).unwrap();
        let c2 = bmm(&a, &bt, true).unwrap();
        for (x, y) in c.data().iter().zip(c2.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
