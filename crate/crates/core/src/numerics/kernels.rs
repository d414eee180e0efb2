//! Row-oriented f64 kernels shared by the taped forward pass and the cached
//! inference path.
//!
//! Every output element is accumulated in a fixed order that does not depend
//! on how many rows are processed at once, so a single-row call and a batched
//! call produce bitwise identical results.

/// `out[m×n] = a[m×k] · b[k×n]`.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    out.fill(0.0);
    let mut i = 0;
    while i + 4 <= m {
        let (o0, rest) = out[i * n..(i + 4) * n].split_at_mut(n);
        let (o1, rest) = rest.split_at_mut(n);
        let (o2, o3) = rest.split_at_mut(n);
        let a0 = &a[i * k..(i + 1) * k];
        let a1 = &a[(i + 1) * k..(i + 2) * k];
        let a2 = &a[(i + 2) * k..(i + 3) * k];
        let a3 = &a[(i + 3) * k..(i + 4) * k];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let (s0, s1, s2, s3) = (a0[p], a1[p], a2[p], a3[p]);
            for j in 0..n {
                let bj = brow[j];
                o0[j] += s0 * bj;
                o1[j] += s1 * bj;
                o2[j] += s2 * bj;
                o3[j] += s3 * bj;
            }
        }
        i += 4;
    }
    while i < m {
        let orow = &mut out[i * n..(i + 1) * n];
        let arow = &a[i * k..(i + 1) * k];
        for p in 0..k {
            let s = arow[p];
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bj) in orow.iter_mut().zip(brow) {
                *o += s * bj;
            }
        }
        i += 1;
    }
}

/// `out[n×m] = aᵀ` for `a[m×n]`.
pub fn transpose(a: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}

/// `acc[k×n] += a[m×k]ᵀ · d[m×n]`.
pub fn matmul_at_acc(a: &[f64], d: &[f64], m: usize, k: usize, n: usize, acc: &mut [f64]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let drow = &d[i * n..(i + 1) * n];
        for p in 0..k {
            let s = arow[p];
            let accrow = &mut acc[p * n..(p + 1) * n];
            for (o, &dj) in accrow.iter_mut().zip(drow) {
                *o += s * dj;
            }
        }
    }
}

pub const RMS_EPS: f64 = 1e-5;

/// Normalises one row and scales by `gain`; returns the inverse RMS.
pub fn rms_norm_row(x: &[f64], gain: &[f64], out: &mut [f64]) -> f64 {
    let ms = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    let inv = 1.0 / (ms + RMS_EPS).sqrt();
    for ((o, &xi), &g) in out.iter_mut().zip(x).zip(gain) {
        *o = xi * inv * g;
    }
    inv
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Causal attention for query row `t` against key/value rows `0..=t`.
///
/// `qkv_row` holds the query (first `d` entries of a fused `[q|k|v]` row);
/// `keys`/`values` are row-major `[(t+1)×d]` views into the cache.
/// Probabilities for each head are written to `probs[h*(t+1)..]`.
pub fn attention_row(
    q: &[f64],
    keys: &[f64],
    values: &[f64],
    key_stride: usize,
    t: usize,
    heads: usize,
    probs: &mut [f64],
    out: &mut [f64],
) {
    let d = out.len();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let len = t + 1;
    out.fill(0.0);
    for h in 0..heads {
        let qh = &q[h * dh..(h + 1) * dh];
        let p = &mut probs[h * len..(h + 1) * len];
        let mut max = f64::NEG_INFINITY;
        for (u, pu) in p.iter_mut().enumerate() {
            let kh = &keys[u * key_stride + h * dh..u * key_stride + (h + 1) * dh];
            let s = qh.iter().zip(kh).map(|(a, b)| a * b).sum::<f64>() * scale;
            *pu = s;
            if s > max {
                max = s;
            }
        }
        let mut z = 0.0;
        for pu in p.iter_mut() {
            *pu = (*pu - max).exp();
            z += *pu;
        }
        let oh = &mut out[h * dh..(h + 1) * dh];
        for (u, pu) in p.iter_mut().enumerate() {
            *pu /= z;
            let vh = &values[u * key_stride + h * dh..u * key_stride + (h + 1) * dh];
            for (o, &vj) in oh.iter_mut().zip(vh) {
                *o += *pu * vj;
            }
        }
    }
}

/// Stable log-softmax of one row.
pub fn log_softmax_row(x: &[f64], out: &mut [f64]) {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = x.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
    for (o, &v) in out.iter_mut().zip(x) {
        *o = v - lse;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_rows_match_single_row_bitwise() {
        let (m, k, n) = (7, 5, 9);
        let a: Vec<f64> = (0..m * k)
            .map(|i| ((i * 37 % 11) as f64 - 5.0) * 0.31)
            .collect();
        let b: Vec<f64> = (0..k * n)
            .map(|i| ((i * 17 % 13) as f64 - 6.0) * 0.17)
            .collect();
        let mut full = vec![0.0; m * n];
        matmul(&a, &b, m, k, n, &mut full);
        for i in 0..m {
            let mut row = vec![0.0; n];
            matmul(&a[i * k..(i + 1) * k], &b, 1, k, n, &mut row);
            assert_eq!(row.as_slice(), &full[i * n..(i + 1) * n]);
        }
    }

    #[test]
    fn matmul_matches_naive() {
        let (m, k, n) = (3, 4, 2);
        let a: Vec<f64> = (0..m * k).map(|i| i as f64).collect();
        let b: Vec<f64> = (0..k * n).map(|i| 1.0 - i as f64).collect();
        let mut out = vec![0.0; m * n];
        matmul(&a, &b, m, k, n, &mut out);
        for i in 0..m {
            for j in 0..n {
                let want: f64 = (0..k).map(|p| a[i * k + p] * b[p * n + j]).sum();
                assert!((out[i * n + j] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gelu_grad_matches_difference() {
        for &x in &[-3.0, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }
}
