//! Raw numeric kernels shared by the tape's forward and backward passes.
//!
//! Everything operates on flat row-major `f64` buffers. Broadcasting is
//! restricted to size-1 axes (leading axes are implicitly size 1).

use super::TensorError;

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Row-major strides for a shape.
pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut out = vec![0; shape.len()];
    let mut acc = 1;
    for (i, &d) in shape.iter().enumerate().rev() {
        out[i] = acc;
        acc *= d;
    }
    out
}

/// Shape of `a op b` under size-1 broadcasting, aligned from the trailing axis.
pub fn broadcast_shape(
    op: &'static str,
    a: &[usize],
    b: &[usize],
) -> Result<Vec<usize>, TensorError> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        if da == db || da == 1 || db == 1 {
            out[i] = da.max(db);
        } else {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: a.to_vec(),
                rhs: b.to_vec(),
            });
        }
    }
    Ok(out)
}

/// Strides of an operand viewed through a broadcast output shape
/// (zero stride on broadcast axes).
fn broadcast_strides(out_shape: &[usize], op_shape: &[usize]) -> Vec<usize> {
    let rank = out_shape.len();
    let nat = strides(op_shape);
    let pad = rank - op_shape.len();
    let mut out = vec![0; rank];
    for i in 0..rank {
        if i >= pad && op_shape[i - pad] != 1 {
            out[i] = nat[i - pad];
        }
    }
    out
}

/// Visits every element of the broadcast output in row-major order, yielding
/// `(out_flat, a_flat, b_flat)` index triples.
pub fn for_each_broadcast<F: FnMut(usize, usize, usize)>(
    out_shape: &[usize],
    a_shape: &[usize],
    b_shape: &[usize],
    mut f: F,
) {
    let n = numel(out_shape);
    if n == 0 {
        return;
    }
    let rank = out_shape.len();
    if rank == 0 {
        f(0, 0, 0);
        return;
    }
    let sa = broadcast_strides(out_shape, a_shape);
    let sb = broadcast_strides(out_shape, b_shape);
    let mut counter = vec![0usize; rank];
    let (mut ia, mut ib) = (0usize, 0usize);
    for io in 0..n {
        f(io, ia, ib);
        // increment the multi-index with carry
        for axis in (0..rank).rev() {
            counter[axis] += 1;
            ia += sa[axis];
            ib += sb[axis];
            if counter[axis] < out_shape[axis] {
                break;
            }
            counter[axis] = 0;
            ia -= sa[axis] * out_shape[axis];
            ib -= sb[axis] * out_shape[axis];
        }
    }
}

pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for l in 0..k {
            let av = a[i * k + l];
            if av == 0.0 {
                continue;
            }
            let row = &b[l * n..(l + 1) * n];
            let dst = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                dst[j] += av * row[j];
            }
        }
    }
    out
}

/// "Same"-padded sliding dot product: signal `[c_in, t]`, kernel
/// `[c_out, c_in, w]`, output `[c_out, t]`. The left pad is `(w - 1) / 2`.
pub fn conv1d_same(
    signal: &[f64],
    kernel: &[f64],
    c_in: usize,
    t: usize,
    c_out: usize,
    w: usize,
) -> Vec<f64> {
    let pad = (w - 1) / 2;
    let mut out = vec![0.0; c_out * t];
    for o in 0..c_out {
        for c in 0..c_in {
            let ker = &kernel[(o * c_in + c) * w..(o * c_in + c + 1) * w];
            let sig = &signal[c * t..(c + 1) * t];
            let dst = &mut out[o * t..(o + 1) * t];
            for (dw, &kv) in ker.iter().enumerate() {
                if kv == 0.0 {
                    continue;
                }
                // out[i] += sig[i + dw - pad] * kv over valid range
                let lo = pad.saturating_sub(dw);
                let hi = (t + pad).saturating_sub(dw).min(t);
                for i in lo..hi {
                    dst[i] += sig[i + dw - pad] * kv;
                }
            }
        }
    }
    out
}

/// Adjoints of `conv1d_same` w.r.t. signal and kernel.
pub fn conv1d_same_backward(
    grad_out: &[f64],
    signal: &[f64],
    kernel: &[f64],
    c_in: usize,
    t: usize,
    c_out: usize,
    w: usize,
    grad_signal: Option<&mut [f64]>,
    grad_kernel: Option<&mut [f64]>,
) {
    let pad = (w - 1) / 2;
    if let Some(gs) = grad_signal {
        for o in 0..c_out {
            let g = &grad_out[o * t..(o + 1) * t];
            for c in 0..c_in {
                let ker = &kernel[(o * c_in + c) * w..(o * c_in + c + 1) * w];
                let dst = &mut gs[c * t..(c + 1) * t];
                for (dw, &kv) in ker.iter().enumerate() {
                    if kv == 0.0 {
                        continue;
                    }
                    let lo = pad.saturating_sub(dw);
                    let hi = (t + pad).saturating_sub(dw).min(t);
                    for i in lo..hi {
                        dst[i + dw - pad] += g[i] * kv;
                    }
                }
            }
        }
    }
    if let Some(gk) = grad_kernel {
        for o in 0..c_out {
            let g = &grad_out[o * t..(o + 1) * t];
            for c in 0..c_in {
                let sig = &signal[c * t..(c + 1) * t];
                let dst = &mut gk[(o * c_in + c) * w..(o * c_in + c + 1) * w];
                for (dw, gslot) in dst.iter_mut().enumerate() {
                    let lo = pad.saturating_sub(dw);
                    let hi = (t + pad).saturating_sub(dw).min(t);
                    let mut acc = 0.0;
                    for i in lo..hi {
                        acc += g[i] * sig[i + dw - pad];
                    }
                    *gslot += acc;
                }
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Stable log(sum(exp(v))) over a slice.
pub fn logsumexp_slice(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}
