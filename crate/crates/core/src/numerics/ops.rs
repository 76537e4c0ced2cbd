//! Attention and normalization primitives with their adjoints.

use super::matrix::{dot, Matrix};

/// Column-wise causal softmax: column `j` is a distribution over rows `0..=j`.
pub fn softmax_columns_causal(s: &Matrix) -> Matrix {
    assert_eq!(s.rows(), s.cols(), "causal softmax needs a square matrix");
    let n = s.rows();
    let mut p = Matrix::zeros(n, n);
    for j in 0..n {
        let mx = (0..=j).map(|i| s[(i, j)]).fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for i in 0..=j {
            let e = (s[(i, j)] - mx).exp();
            p[(i, j)] = e;
            z += e;
        }
        for i in 0..=j {
            p[(i, j)] /= z;
        }
    }
    p
}

/// Adjoint of [`softmax_columns_causal`] given its output `p`.
pub fn softmax_columns_causal_backward(p: &Matrix, dp: &Matrix) -> Matrix {
    let n = p.rows();
    let mut ds = Matrix::zeros(n, n);
    for j in 0..n {
        let inner: f64 = (0..=j).map(|i| p[(i, j)] * dp[(i, j)]).sum();
        for i in 0..=j {
            ds[(i, j)] = p[(i, j)] * (dp[(i, j)] - inner);
        }
    }
    ds
}

/// Plain softmax of a vector.
pub fn softmax(x: &[f64]) -> Vec<f64> {
    let mx = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - mx).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

pub fn log_softmax(x: &[f64]) -> Vec<f64> {
    let mx = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lz = x.iter().map(|v| (v - mx).exp()).sum::<f64>().ln() + mx;
    x.iter().map(|v| v - lz).collect()
}

/// `P⊥x`: subtract the mean.
pub fn center(x: &[f64]) -> Vec<f64> {
    let mean = x.iter().sum::<f64>() / x.len().max(1) as f64;
    x.iter().map(|v| v - mean).collect()
}

/// `LN_C(x) = P⊥x / max(‖P⊥x‖, C)`; zero when `C = 0` and `P⊥x = 0`.
pub fn layernorm_c(x: &[f64], c: f64) -> Vec<f64> {
    let p = center(x);
    let n = dot(&p, &p).sqrt();
    let denom = n.max(c);
    if denom == 0.0 {
        return vec![0.0; x.len()];
    }
    p.into_iter().map(|v| v / denom).collect()
}

/// Adjoint of [`layernorm_c`] at `x` for output cotangent `dy`.
pub fn layernorm_c_backward(x: &[f64], c: f64, dy: &[f64]) -> Vec<f64> {
    let p = center(x);
    let n = dot(&p, &p).sqrt();
    let dp: Vec<f64> = if n > c {
        let y: Vec<f64> = p.iter().map(|v| v / n).collect();
        let yd = dot(&y, dy);
        dy.iter().zip(&y).map(|(d, yv)| (d - yv * yd) / n).collect()
    } else if c > 0.0 {
        dy.iter().map(|d| d / c).collect()
    } else {
        vec![0.0; x.len()]
    };
    center(&dp)
}

/// Column-wise [`layernorm_c`]; also returns per-column norms of `P⊥x`.
pub fn layernorm_columns(x: &Matrix, c: f64) -> Matrix {
    let (m, n) = x.shape();
    let mut out = Matrix::zeros(m, n);
    if m == 0 {
        return out;
    }
    let mut col = vec![0.0; m];
    for j in 0..n {
        for (i, v) in col.iter_mut().enumerate() {
            *v = x[(i, j)];
        }
        let y = layernorm_c(&col, c);
        for i in 0..m {
            out[(i, j)] = y[i];
        }
    }
    out
}

pub fn layernorm_columns_backward(x: &Matrix, c: f64, dy: &Matrix) -> Matrix {
    let (m, n) = x.shape();
    let mut dx = Matrix::zeros(m, n);
    let mut col = vec![0.0; m];
    let mut dcol = vec![0.0; m];
    for j in 0..n {
        for i in 0..m {
            col[i] = x[(i, j)];
            dcol[i] = dy[(i, j)];
        }
        let g = layernorm_c_backward(&col, c, &dcol);
        for i in 0..m {
            dx[(i, j)] = g[i];
        }
    }
    dx
}

pub fn relu(x: f64) -> f64 {
    x.max(0.0)
}
