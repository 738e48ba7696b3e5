//! Compute kernels shared by the f32 graph and the f64 replay oracle.
//!
//! Everything is written once over [`Real`] so the gradient-check replay can
//! re-execute a recorded graph in f64 without a second kernel implementation.
//! Dense matrix products go through `matrixmultiply`; the rest is plain loops.

/// Log-space floor applied by [`log_floored`], per the mixture-NLL contract:
/// log(0) becomes -1e9 instead of -inf/NaN.
pub const LOG_FLOOR: f64 = -1e9;

/// Minimal float abstraction: f32 for training, f64 for oracle replay.
pub trait Real:
    Copy
    + PartialOrd
    + std::fmt::Debug
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + std::ops::Div<Output = Self>
    + std::ops::Neg<Output = Self>
    + std::ops::AddAssign
{
    const ZERO: Self;
    const ONE: Self;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn tanh(self) -> Self;
    fn maximum(self, other: Self) -> Self;
    fn is_finite_v(self) -> bool;
    /// c = op(a) x op(b) with optional transposes; all matrices row-major.
    /// `a` is m x k after transposition, `b` is k x n after transposition.
    fn gemm(m: usize, k: usize, n: usize, a: &[Self], at: bool, b: &[Self], bt: bool, c: &mut [Self]);
}

macro_rules! impl_real {
    ($t:ty, $gemm:path) => {
        impl Real for $t {
            const ZERO: Self = 0.0;
            const ONE: Self = 1.0;
            #[inline]
            fn from_f64(v: f64) -> Self {
                v as $t
            }
            #[inline]
            fn to_f64(self) -> f64 {
                self as f64
            }
            #[inline]
            fn exp(self) -> Self {
                self.exp()
            }
            #[inline]
            fn ln(self) -> Self {
                self.ln()
            }
            #[inline]
            fn sqrt(self) -> Self {
                self.sqrt()
            }
            #[inline]
            fn tanh(self) -> Self {
                self.tanh()
            }
            #[inline]
            fn maximum(self, other: Self) -> Self {
                self.max(other)
            }
            #[inline]
            fn is_finite_v(self) -> bool {
                self.is_finite()
            }
            fn gemm(m: usize, k: usize, n: usize, a: &[Self], at: bool, b: &[Self], bt: bool, c: &mut [Self]) {
                assert_eq!(a.len(), m * k, "gemm lhs size");
                assert_eq!(b.len(), k * n, "gemm rhs size");
                assert_eq!(c.len(), m * n, "gemm out size");
                let (rsa, csa) = if at { (1, m as isize) } else { (k as isize, 1) };
                let (rsb, csb) = if bt { (1, k as isize) } else { (n as isize, 1) };
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        0.0,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }
        }
    };
}

impl_real!(f32, matrixmultiply::sgemm);
impl_real!(f64, matrixmultiply::dgemm);

/// Split a shape into (outer, axis length, inner) extents for lane iteration.
/// Element (o, a, i) lives at `(o * len + a) * inner + i`.
pub fn lanes(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let len = shape[axis];
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, len, inner)
}

pub fn matmul<F: Real>(a: &[F], b: &[F], m: usize, k: usize, n: usize) -> Vec<F> {
    let mut c = vec![F::ZERO; m * n];
    F::gemm(m, k, n, a, false, b, false, &mut c);
    c
}

/// Numerically stable log-sum-exp over `axis`, keeping the axis as size 1.
pub fn logsumexp_axis<F: Real>(x: &[F], shape: &[usize], axis: usize) -> Vec<F> {
    let (outer, len, inner) = lanes(shape, axis);
    let mut out = vec![F::ZERO; outer * inner];
    for o in 0..outer {
        for i in 0..inner {
            let at = |a: usize| x[(o * len + a) * inner + i];
            let mut m = at(0);
            for a in 1..len {
                m = m.maximum(at(a));
            }
            let mut s = F::ZERO;
            for a in 0..len {
                s += (at(a) - m).exp();
            }
            out[o * inner + i] = m + s.ln();
        }
    }
    out
}

/// Softmax over `axis`: max-subtracted exponentials normalized by their sum.
/// The division (rather than exp(x - logsumexp)) keeps lane sums at 1 within
/// one ulp even for inputs around 1e3, where the rounded lse would not.
pub fn softmax_axis<F: Real>(x: &[F], shape: &[usize], axis: usize) -> Vec<F> {
    let (outer, len, inner) = lanes(shape, axis);
    let mut out = vec![F::ZERO; x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |a: usize| (o * len + a) * inner + i;
            let mut m = x[at(0)];
            for a in 1..len {
                m = m.maximum(x[at(a)]);
            }
            let mut s = F::ZERO;
            for a in 0..len {
                let e = (x[at(a)] - m).exp();
                out[at(a)] = e;
                s += e;
            }
            for a in 0..len {
                out[at(a)] = out[at(a)] / s;
            }
        }
    }
    out
}

/// Normalize each lane along `axis` to zero mean / unit variance (biased).
pub fn layer_norm_axis<F: Real>(x: &[F], shape: &[usize], axis: usize, eps: f64) -> Vec<F> {
    let (outer, len, inner) = lanes(shape, axis);
    let n = F::from_f64(len as f64);
    let eps = F::from_f64(eps);
    let mut out = vec![F::ZERO; x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |a: usize| x[(o * len + a) * inner + i];
            let mut mean = F::ZERO;
            for a in 0..len {
                mean += at(a);
            }
            mean = mean / n;
            let mut var = F::ZERO;
            for a in 0..len {
                let d = at(a) - mean;
                var += d * d;
            }
            var = var / n;
            let inv = F::ONE / (var + eps).sqrt();
            for a in 0..len {
                let idx = (o * len + a) * inner + i;
                out[idx] = (x[idx] - mean) * inv;
            }
        }
    }
    out
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// GELU, tanh approximation.
pub fn gelu<F: Real>(x: &[F]) -> Vec<F> {
    let c = F::from_f64(GELU_C);
    let a = F::from_f64(GELU_A);
    let half = F::from_f64(0.5);
    x.iter()
        .map(|&v| half * v * (F::ONE + (c * (v + a * v * v * v)).tanh()))
        .collect()
}

/// d/dx of the tanh-approximated GELU, evaluated elementwise at `x`.
pub fn gelu_grad<F: Real>(x: &[F]) -> Vec<F> {
    let c = F::from_f64(GELU_C);
    let a = F::from_f64(GELU_A);
    let half = F::from_f64(0.5);
    let three = F::from_f64(3.0);
    x.iter()
        .map(|&v| {
            let u = c * (v + a * v * v * v);
            let t = u.tanh();
            let sech2 = F::ONE - t * t;
            half * (F::ONE + t) + half * v * sech2 * c * (F::ONE + three * a * v * v)
        })
        .collect()
}

/// log with the contract floor: max(ln(max(x, 0)), LOG_FLOOR). No NaN for x <= 0.
pub fn log_floored<F: Real>(x: &[F]) -> Vec<F> {
    let floor = F::from_f64(LOG_FLOOR);
    x.iter()
        .map(|&v| {
            if v <= F::ZERO {
                floor
            } else {
                v.ln().maximum(floor)
            }
        })
        .collect()
}

/// Elementwise sqrt, clamped at zero so downstream stays NaN-free.
pub fn sqrt_clamped<F: Real>(x: &[F]) -> Vec<F> {
    x.iter()
        .map(|&v| if v <= F::ZERO { F::ZERO } else { v.sqrt() })
        .collect()
}

pub fn reduce_axis<F: Real>(x: &[F], shape: &[usize], axis: usize, mean: bool) -> Vec<F> {
    let (outer, len, inner) = lanes(shape, axis);
    let n = F::from_f64(len as f64);
    let mut out = vec![F::ZERO; outer * inner];
    for o in 0..outer {
        for i in 0..inner {
            let mut s = F::ZERO;
            for a in 0..len {
                s += x[(o * len + a) * inner + i];
            }
            out[o * inner + i] = if mean { s / n } else { s };
        }
    }
    out
}

pub fn concat_axis<F: Real>(parts: &[&[F]], shapes: &[&[usize]], axis: usize) -> Vec<F> {
    let (outer, _, inner) = lanes(shapes[0], axis);
    let total_len: usize = shapes.iter().map(|s| s[axis]).sum();
    let mut out = vec![F::ZERO; outer * total_len * inner];
    let mut offset = 0;
    for (part, shape) in parts.iter().zip(shapes) {
        let len = shape[axis];
        for o in 0..outer {
            for a in 0..len {
                let src = (o * len + a) * inner;
                let dst = (o * total_len + offset + a) * inner;
                out[dst..dst + inner].copy_from_slice(&part[src..src + inner]);
            }
        }
        offset += len;
    }
    out
}

pub fn slice_axis<F: Real>(x: &[F], shape: &[usize], axis: usize, start: usize, len: usize) -> Vec<F> {
    let (outer, full, inner) = lanes(shape, axis);
    let mut out = vec![F::ZERO; outer * len * inner];
    for o in 0..outer {
        for a in 0..len {
            let src = (o * full + start + a) * inner;
            let dst = (o * len + a) * inner;
            out[dst..dst + inner].copy_from_slice(&x[src..src + inner]);
        }
    }
    out
}

/// Multi-head scaled dot-product attention over row-major sequences.
/// q: nq x d, k/v: nk x d, d divisible by heads. Per head:
/// softmax(q kᵀ / sqrt(d/heads)) v, head outputs concatenated feature-wise.
pub fn attention<F: Real>(q: &[F], k: &[F], v: &[F], nq: usize, nk: usize, d: usize, heads: usize) -> Vec<F> {
    let dh = d / heads;
    let scale = F::from_f64(1.0 / (dh as f64).sqrt());
    let mut out = vec![F::ZERO; nq * d];
    let mut qh = vec![F::ZERO; nq * dh];
    let mut kh = vec![F::ZERO; nk * dh];
    let mut vh = vec![F::ZERO; nk * dh];
    let mut oh = vec![F::ZERO; nq * dh];
    for h in 0..heads {
        copy_head_block(q, &mut qh, nq, d, h * dh, dh);
        copy_head_block(k, &mut kh, nk, d, h * dh, dh);
        copy_head_block(v, &mut vh, nk, d, h * dh, dh);
        let mut scores = vec![F::ZERO; nq * nk];
        F::gemm(nq, dh, nk, &qh, false, &kh, true, &mut scores);
        for s in scores.iter_mut() {
            *s = *s * scale;
        }
        let probs = softmax_axis(&scores, &[nq, nk], 1);
        F::gemm(nq, nk, dh, &probs, false, &vh, false, &mut oh);
        write_head_block(&oh, &mut out, nq, d, h * dh, dh);
    }
    out
}

pub fn copy_head_block<F: Real>(src: &[F], dst: &mut [F], rows: usize, d: usize, col0: usize, width: usize) {
    for r in 0..rows {
        dst[r * width..(r + 1) * width].copy_from_slice(&src[r * d + col0..r * d + col0 + width]);
    }
}

pub fn write_head_block<F: Real>(src: &[F], dst: &mut [F], rows: usize, d: usize, col0: usize, width: usize) {
    for r in 0..rows {
        dst[r * d + col0..r * d + col0 + width].copy_from_slice(&src[r * width..(r + 1) * width]);
    }
}
