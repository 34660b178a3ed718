//! Raw numeric kernels shared by the tape's forward and backward rules.

use crate::error::{Error, Result};

/// `c = alpha * op(a) * op(b) + beta * c` for row-major buffers.
///
/// `a` is `m×k` (or `k×m` when `trans_a`), `b` is `k×n` (or `n×k` when `trans_b`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    c: &mut [f64],
    beta: f64,
) {
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: the slices hold at least m*k, k*n and m*n elements and the strides
    // describe row-major (or transposed row-major) layouts inside them.
    unsafe {
        matrixmultiply::dgemm(
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
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Splits `shape` around `axis` into (outer, len, inner) extents.
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Result shape of numpy-style broadcasting of `a` against `b`.
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let ndim = a.len().max(b.len());
    let mut out = vec![0; ndim];
    for i in 0..ndim {
        let da = if i + a.len() >= ndim { a[i + a.len() - ndim] } else { 1 };
        let db = if i + b.len() >= ndim { b[i + b.len() - ndim] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => {
                return Err(Error::dim(format!("cannot broadcast {a:?} with {b:?}")));
            }
        };
    }
    Ok(out)
}

/// Strides of `shape` aligned to `out` (right-aligned) with zeros on broadcast axes.
fn aligned_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let offset = out.len() - shape.len();
    let mut strides = vec![0; out.len()];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        strides[i + offset] = if shape[i] == 1 { 0 } else { acc };
        acc *= shape[i];
    }
    strides
}

/// Flat source index into `shape` for every element of `out`, in row-major order.
pub(crate) fn broadcast_index(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let strides = aligned_strides(shape, out);
    let numel: usize = out.iter().product();
    let mut idx = vec![0usize; out.len()];
    let mut flat = Vec::with_capacity(numel);
    let mut cur = 0usize;
    for _ in 0..numel {
        flat.push(cur);
        for ax in (0..out.len()).rev() {
            idx[ax] += 1;
            cur += strides[ax];
            if idx[ax] < out[ax] {
                break;
            }
            cur -= strides[ax] * out[ax];
            idx[ax] = 0;
        }
    }
    flat
}

/// How an operand maps onto a broadcast output.
pub(crate) enum Bcast {
    Same,
    /// The operand equals the trailing `len` elements, repeated.
    Suffix(usize),
    General(Vec<usize>),
}

pub(crate) fn bcast_plan(shape: &[usize], out: &[usize]) -> Bcast {
    if shape == out {
        return Bcast::Same;
    }
    let first = shape.iter().position(|&d| d != 1).unwrap_or(shape.len());
    let stripped = &shape[first..];
    if out.ends_with(stripped) {
        Bcast::Suffix(stripped.iter().product())
    } else {
        Bcast::General(broadcast_index(shape, out))
    }
}

impl Bcast {
    #[inline]
    pub(crate) fn src(&self, i: usize) -> usize {
        match self {
            Bcast::Same => i,
            Bcast::Suffix(len) => i % len,
            Bcast::General(map) => map[i],
        }
    }
}

/// Sums `grad` (shaped like the broadcast output) back down to `numel` source elements.
pub(crate) fn reduce_to(grad: &[f64], plan: &Bcast, numel: usize) -> Vec<f64> {
    match plan {
        Bcast::Same => grad.to_vec(),
        Bcast::Suffix(len) => {
            let mut out = vec![0.0; *len];
            for chunk in grad.chunks_exact(*len) {
                for (o, g) in out.iter_mut().zip(chunk) {
                    *o += g;
                }
            }
            out
        }
        Bcast::General(map) => {
            let mut out = vec![0.0; numel];
            for (g, &s) in grad.iter().zip(map) {
                out[s] += g;
            }
            out
        }
    }
}

/// Applies a permutation of axes to row-major data.
pub(crate) fn permute(data: &[f64], shape: &[usize], perm: &[usize]) -> (Vec<usize>, Vec<f64>) {
    let ndim = shape.len();
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let mut in_strides = vec![1usize; ndim];
    for i in (0..ndim.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut out = Vec::with_capacity(data.len());
    let mut idx = vec![0usize; ndim];
    let mut cur = 0usize;
    for _ in 0..data.len() {
        out.push(data[cur]);
        for ax in (0..ndim).rev() {
            idx[ax] += 1;
            cur += strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            cur -= strides[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    (out_shape, out)
}

pub(crate) fn inverse_perm(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

/// Numerically stable softmax over the middle extent of an (outer, len, inner) view.
pub(crate) fn softmax(data: &[f64], outer: usize, len: usize, inner: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let mut max = f64::NEG_INFINITY;
            for j in 0..len {
                max = max.max(data[base + j * inner]);
            }
            let mut total = 0.0;
            for j in 0..len {
                let e = (data[base + j * inner] - max).exp();
                out[base + j * inner] = e;
                total += e;
            }
            for j in 0..len {
                out[base + j * inner] /= total;
            }
        }
    }
    out
}

pub(crate) fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4;
    let inner = C * (x + 0.044715 * x * x * x);
    let t = inner.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * 0.044715 * x * x)
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}
