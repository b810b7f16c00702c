//! Raw loops behind the graph ops. Row-parallel where rows are independent.

use super::tensor::Scalar;
use crate::par;

/// Valid output range `[t0, t1)` for a tap at offset `shift` over length `len`.
#[inline]
fn tap_range(shift: isize, len: usize) -> (usize, usize) {
    let t0 = ((-shift).max(0) as usize).min(len);
    let t1 = (len as isize - shift).clamp(0, len as isize) as usize;
    (t0, t1.max(t0))
}

/// `y[o,t] = b[o] + Σ_i Σ_k w[o,i,k] · x[i, t + k − pad]`, zero outside `[0, len)`.
///
/// Accumulation order per output element is bias, then input channel, then tap, so a
/// window of the sequence reproduces the full-sequence values bit for bit wherever all
/// taps fall inside the window.
#[allow(clippy::too_many_arguments)]
pub fn conv1d_forward<T: Scalar>(
    x: &[T],
    cin: usize,
    len: usize,
    w: &[T],
    cout: usize,
    k: usize,
    b: &[T],
    pad: usize,
) -> Vec<T> {
    let mut out = vec![T::zero(); cout * len];
    par::for_each_row(&mut out, len, |o, row| {
        row.fill(b[o]);
        for i in 0..cin {
            let xr = &x[i * len..(i + 1) * len];
            for kk in 0..k {
                let wv = w[(o * cin + i) * k + kk];
                let shift = kk as isize - pad as isize;
                let (t0, t1) = tap_range(shift, len);
                if t0 == t1 {
                    continue;
                }
                let src = &xr[(t0 as isize + shift) as usize..(t1 as isize + shift) as usize];
                for (y, &xv) in row[t0..t1].iter_mut().zip(src) {
                    *y = *y + wv * xv;
                }
            }
        }
    });
    out
}

/// Gradients of [`conv1d_forward`] with respect to input, weight and bias.
#[allow(clippy::too_many_arguments)]
pub fn conv1d_backward<T: Scalar>(
    x: &[T],
    cin: usize,
    len: usize,
    w: &[T],
    cout: usize,
    k: usize,
    pad: usize,
    dy: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let mut dx = vec![T::zero(); cin * len];
    par::for_each_row(&mut dx, len, |i, row| {
        for o in 0..cout {
            let dyr = &dy[o * len..(o + 1) * len];
            for kk in 0..k {
                let wv = w[(o * cin + i) * k + kk];
                let shift = kk as isize - pad as isize;
                let (t0, t1) = tap_range(shift, len);
                if t0 == t1 {
                    continue;
                }
                let dst = &mut row[(t0 as isize + shift) as usize..(t1 as isize + shift) as usize];
                for (d, &g) in dst.iter_mut().zip(&dyr[t0..t1]) {
                    *d = *d + wv * g;
                }
            }
        }
    });

    let mut dw = vec![T::zero(); cout * cin * k];
    par::for_each_row(&mut dw, cin * k, |o, row| {
        let dyr = &dy[o * len..(o + 1) * len];
        for i in 0..cin {
            let xr = &x[i * len..(i + 1) * len];
            for kk in 0..k {
                let shift = kk as isize - pad as isize;
                let (t0, t1) = tap_range(shift, len);
                if t0 == t1 {
                    continue;
                }
                let src = &xr[(t0 as isize + shift) as usize..(t1 as isize + shift) as usize];
                let mut acc = T::zero();
                for (&g, &xv) in dyr[t0..t1].iter().zip(src) {
                    acc = acc + g * xv;
                }
                row[i * k + kk] = acc;
            }
        }
    });

    let db = (0..cout)
        .map(|o| dy[o * len..(o + 1) * len].iter().copied().sum())
        .collect();
    (dx, dw, db)
}

/// `a[m×p] · b[p×n]`.
pub fn matmul<T: Scalar>(a: &[T], b: &[T], m: usize, p: usize, n: usize) -> Vec<T> {
    debug_assert_eq!(a.len(), m * p);
    let mut out = vec![T::zero(); m * n];
    par::for_each_row(&mut out, n, |r, row| {
        for q in 0..p {
            let av = a[r * p + q];
            for (y, &bv) in row.iter_mut().zip(&b[q * n..(q + 1) * n]) {
                *y = *y + av * bv;
            }
        }
    });
    out
}

pub fn transpose<T: Scalar>(a: &[T], r: usize, c: usize) -> Vec<T> {
    let mut out = vec![T::zero(); r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a[i * c + j];
        }
    }
    out
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// Row softmax. The normaliser sums in ascending order, so permuting columns permutes the
/// output exactly.
pub fn softmax_rows<T: Scalar>(x: &[T], cols: usize) -> Vec<T> {
    let mut out = x.to_vec();
    let mut sorted = Vec::with_capacity(cols);
    for row in out.chunks_mut(cols) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        for v in row.iter_mut() {
            *v = (*v - m).exp();
        }
        sorted.clear();
        sorted.extend_from_slice(row);
        sorted.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
        let s = sorted.iter().fold(T::zero(), |a, &b| a + b);
        for v in row.iter_mut() {
            *v = *v / s;
        }
    }
    out
}
