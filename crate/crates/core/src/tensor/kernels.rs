use crate::scalar::{lit, Scalar};

/// `out[m×n] += a[m×k] · b[k×n]`, all row-major.
pub fn matmul_into<S: Scalar>(a: &[S], b: &[S], out: &mut [S], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        let arow = &a[i * k..(i + 1) * k];
        for (p, &av) in arow.iter().enumerate() {
            if av == S::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m×n] += a[m×k] · b[n×k]ᵀ`.
pub(crate) fn matmul_bt_into<S: Scalar>(a: &[S], b: &[S], out: &mut [S], m: usize, k: usize, n: usize) {
    // row-times-row dot products do not vectorize; an explicit transpose does
    let bt = transpose2(b, n, k);
    matmul_into(a, &bt, out, m, k, n);
}

/// `out[k×n] += a[m×k]ᵀ · b[m×n]`.
pub(crate) fn matmul_at_into<S: Scalar>(a: &[S], b: &[S], out: &mut [S], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av == S::zero() {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

pub(crate) fn transpose2<S: Scalar>(a: &[S], rows: usize, cols: usize) -> Vec<S> {
    let mut out = vec![S::zero(); a.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// Tanh-approximated GELU.
#[inline]
pub fn gelu_scalar<S: Scalar>(x: S) -> S {
    let c: S = lit(GELU_C);
    let k: S = lit(0.044715);
    let half: S = lit(0.5);
    half * x * (S::one() + (c * (x + k * x * x * x)).tanh())
}

#[inline]
pub(crate) fn gelu_grad<S: Scalar>(x: S) -> S {
    let c: S = lit(GELU_C);
    let k: S = lit(0.044715);
    let half: S = lit(0.5);
    let three: S = lit(3.0);
    let u = c * (x + k * x * x * x);
    let t = u.tanh();
    let du = c * (S::one() + three * k * x * x);
    half * (S::one() + t) + half * x * (S::one() - t * t) * du
}

/// im2col for 1-D convolution: input `[cin, t_in]` to columns `[cin*k, t_out]`.
pub(crate) fn im2col<S: Scalar>(
    x: &[S],
    cin: usize,
    t_in: usize,
    k: usize,
    stride: usize,
    pad: usize,
    t_out: usize,
) -> Vec<S> {
    let mut cols = vec![S::zero(); cin * k * t_out];
    for c in 0..cin {
        let xrow = &x[c * t_in..(c + 1) * t_in];
        for kk in 0..k {
            let crow = &mut cols[(c * k + kk) * t_out..(c * k + kk + 1) * t_out];
            for (t, slot) in crow.iter_mut().enumerate() {
                let pos = (t * stride + kk) as isize - pad as isize;
                if pos >= 0 && (pos as usize) < t_in {
                    *slot = xrow[pos as usize];
                }
            }
        }
    }
    cols
}

pub(crate) fn col2im_add<S: Scalar>(
    cols: &[S],
    dx: &mut [S],
    cin: usize,
    t_in: usize,
    k: usize,
    stride: usize,
    pad: usize,
    t_out: usize,
) {
    for c in 0..cin {
        for kk in 0..k {
            let crow = &cols[(c * k + kk) * t_out..(c * k + kk + 1) * t_out];
            for (t, &v) in crow.iter().enumerate() {
                let pos = (t * stride + kk) as isize - pad as isize;
                if pos >= 0 && (pos as usize) < t_in {
                    dx[c * t_in + pos as usize] += v;
                }
            }
        }
    }
}
