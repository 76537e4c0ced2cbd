//! Small dense linear algebra: norms, QR, least squares, orthonormal bases.

use super::matrix::{dot, norm2, Matrix};
use super::rng::Rng;
use crate::error::{input, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Norms {
    pub frobenius: f64,
    pub spectral: f64,
    /// Largest Euclidean norm over columns.
    pub one_two: f64,
}

pub fn norms(a: &Matrix) -> Norms {
    Norms { frobenius: a.frobenius_sq().sqrt(), spectral: spectral_norm(a), one_two: one_two_norm(a) }
}

pub fn one_two_norm(a: &Matrix) -> f64 {
    (0..a.cols()).map(|j| norm2(&a.column(j))).fold(0.0, f64::max)
}

/// Largest singular value by power iteration on `AᵀA` (relative tolerance 1e-8).
pub fn spectral_norm(a: &Matrix) -> f64 {
    if a.rows() == 0 || a.cols() == 0 || a.max_abs() == 0.0 {
        return 0.0;
    }
    let ata = a.t_matmul(a);
    let n = ata.rows();
    // Deterministic start with weight on every coordinate.
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + 0.1 * ((i * 7919) % 13) as f64).collect();
    let nv = norm2(&v);
    v.iter_mut().for_each(|x| *x /= nv);
    let mut lambda = 0.0;
    for _ in 0..10_000 {
        let w = ata.matvec(&v);
        let nw = norm2(&w);
        if nw == 0.0 {
            return 0.0;
        }
        let next = dot(&v, &w);
        v = w.into_iter().map(|x| x / nw).collect();
        if (next - lambda).abs() <= 1e-8 * next.abs().max(1e-300) {
            lambda = next;
            break;
        }
        lambda = next;
    }
    // One Rayleigh refinement.
    let w = ata.matvec(&v);
    dot(&v, &w).max(lambda).max(0.0).sqrt()
}

/// Thin QR by modified Gram-Schmidt with one reorthogonalization pass.
/// Returns `(Q, R)` with `Q` m×n orthonormal columns; fails if a column is
/// dependent on its predecessors (relative tolerance `tol`).
pub fn qr(a: &Matrix, tol: f64) -> Result<(Matrix, Matrix)> {
    let (m, n) = a.shape();
    if n > m {
        return input(format!("qr of a {m}x{n} matrix cannot have full column rank"));
    }
    let scale = a.max_abs().max(1e-300);
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut r = Matrix::zeros(n, n);
    for j in 0..n {
        let mut v = a.column(j);
        for _pass in 0..2 {
            for (i, qi) in q.iter().enumerate() {
                let c = dot(qi, &v);
                r[(i, j)] += c;
                v.iter_mut().zip(qi).for_each(|(x, y)| *x -= c * y);
            }
        }
        let nv = norm2(&v);
        if nv <= tol * scale {
            return input(format!("column {j} is linearly dependent (residual {nv:.3e})"));
        }
        r[(j, j)] = nv;
        q.push(v.into_iter().map(|x| x / nv).collect());
    }
    Ok((Matrix::from_columns(&q)?, r))
}

/// Solves the upper-triangular system `R x = b`.
fn back_substitute(r: &Matrix, b: &[f64]) -> Vec<f64> {
    let n = r.rows();
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|j| r[(i, j)] * x[j]).sum();
        x[i] = (b[i] - s) / r[(i, i)];
    }
    x
}

/// Minimum-norm `W` with `W E = O`, for `E` of full column rank. Returns `W`
/// and the residual `max |W E − O|`.
pub fn solve_right(e: &Matrix, o: &Matrix) -> Result<(Matrix, f64)> {
    if e.cols() != o.cols() {
        return input("solve_right: E and O must have the same column count");
    }
    let (q, r) = qr(e, 1e-10)?;
    // W = O R⁻¹ Qᵀ: solve Rᵀ zᵢ = oᵢ row by row of O.
    let rt = r.transpose();
    let n = r.rows();
    let mut z = Matrix::zeros(o.rows(), n);
    for i in 0..o.rows() {
        let b = o.row(i);
        let mut x = vec![0.0; n];
        for a in 0..n {
            let s: f64 = (0..a).map(|j| rt[(a, j)] * x[j]).sum();
            x[a] = (b[a] - s) / rt[(a, a)];
        }
        z.row_mut(i).copy_from_slice(&x);
    }
    let w = z.matmul_t(&q);
    let resid = w.matmul(e).sub(o).max_abs();
    Ok((w, resid))
}

/// Solves the square system `A x = b` by Gaussian elimination with partial pivoting.
pub fn solve(a: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    let n = a.rows();
    if a.cols() != n || b.len() != n {
        return input("solve: shape mismatch");
    }
    let mut m = a.clone();
    let mut x = b.to_vec();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| m[(i, c)].abs().total_cmp(&m[(j, c)].abs())).unwrap();
        if m[(p, c)].abs() < 1e-300 {
            return input("solve: singular matrix");
        }
        if p != c {
            for j in 0..n {
                let t = m[(c, j)];
                m[(c, j)] = m[(p, j)];
                m[(p, j)] = t;
            }
            x.swap(c, p);
        }
        for i in c + 1..n {
            let f = m[(i, c)] / m[(c, c)];
            if f != 0.0 {
                for j in c..n {
                    m[(i, j)] -= f * m[(c, j)];
                }
                x[i] -= f * x[c];
            }
        }
    }
    Ok(back_substitute(&m, &x))
}

/// Numerical rank via QR with column pivoting on a copy.
pub fn rank(a: &Matrix, tol: f64) -> usize {
    let mut cols: Vec<Vec<f64>> = (0..a.cols()).map(|j| a.column(j)).collect();
    let scale = a.max_abs().max(1e-300);
    let mut r = 0;
    loop {
        let Some((best, nb)) = cols
            .iter()
            .enumerate()
            .map(|(i, c)| (i, norm2(c)))
            .max_by(|x, y| x.1.total_cmp(&y.1))
        else {
            return r;
        };
        if nb <= tol * scale {
            return r;
        }
        let q: Vec<f64> = cols.swap_remove(best).into_iter().map(|x| x / nb).collect();
        for c in cols.iter_mut() {
            let d = dot(&q, c);
            c.iter_mut().zip(&q).for_each(|(x, y)| *x -= d * y);
        }
        r += 1;
    }
}

/// Projects `v` onto the orthogonal complement of the orthonormal set `basis`
/// (two passes for stability).
pub fn project_out(v: &mut [f64], basis: &[Vec<f64>]) {
    for _ in 0..2 {
        for b in basis {
            let c = dot(b, v);
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
        }
    }
}

/// Orthonormal basis of `span(vectors)`, dropping dependent directions.
pub fn orthonormalize(vectors: &[Vec<f64>], tol: f64) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::new();
    for v in vectors {
        let scale = norm2(v);
        if scale == 0.0 {
            continue;
        }
        let mut w = v.clone();
        project_out(&mut w, &out);
        let n = norm2(&w);
        if n > tol * scale {
            out.push(w.into_iter().map(|x| x / n).collect());
        }
    }
    out
}

/// `count` random orthonormal vectors orthogonal to the orthonormal set `avoid`.
pub fn random_orthonormal_complement(
    dim: usize,
    avoid: &[Vec<f64>],
    count: usize,
    rng: &mut Rng,
) -> Result<Vec<Vec<f64>>> {
    if avoid.len() + count > dim {
        return input(format!("need {count} directions beyond {} in R^{dim}", avoid.len()));
    }
    let mut fixed = avoid.to_vec();
    let mut out = Vec::with_capacity(count);
    let mut tries = 0;
    while out.len() < count {
        tries += 1;
        if tries > 100 * (count + 1) {
            return input("could not draw complement directions");
        }
        let mut v: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
        project_out(&mut v, &fixed);
        let n = norm2(&v);
        if n > 1e-6 {
            let u: Vec<f64> = v.into_iter().map(|x| x / n).collect();
            fixed.push(u.clone());
            out.push(u);
        }
    }
    Ok(out)
}
