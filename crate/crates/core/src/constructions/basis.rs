//! Orthonormal directions avoiding a readout vector `v` and the all-ones vector.

use crate::error::{capacity, input, Result};
use crate::numerics::linalg::{orthonormalize, random_orthonormal_complement};
use crate::numerics::{dot, norm2, Rng};

#[derive(Clone, Debug, PartialEq)]
pub struct BasisSet {
    /// `m − 2` orthonormal vectors, each orthogonal to `v` and to `1`.
    pub vectors: Vec<Vec<f64>>,
    /// Unit readout direction; `vᵀx ≠ 0` for every input difference `x`.
    pub v: Vec<f64>,
    pub ones: Vec<f64>,
}

impl BasisSet {
    /// `Σ b_j b_jᵀ x`.
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        for b in &self.vectors {
            let c = dot(b, x);
            out.iter_mut().zip(b).for_each(|(o, bi)| *o += c * bi);
        }
        out
    }
}

/// Unit `v` with `|vᵀx|` bounded away from zero over `diffs` (best of seeded
/// candidates).
pub fn readout_direction(diffs: &[Vec<f64>], m: usize, rng: &mut Rng) -> Result<(Vec<f64>, f64)> {
    let mut best: Option<(Vec<f64>, f64)> = None;
    for _ in 0..256 {
        let v = rng.unit_vector(m);
        let worst = diffs.iter().map(|x| dot(&v, x).abs() / norm2(x)).fold(f64::INFINITY, f64::min);
        if best.as_ref().is_none_or(|(_, w)| worst > *w) {
            best = Some((v, worst));
        }
    }
    let (v, worst) = best.expect("candidates drawn");
    if !(worst > 0.0) && !diffs.is_empty() {
        return input("no readout direction separates the inputs");
    }
    Ok((v, worst))
}

pub fn subspace_basis(diffs: &[Vec<f64>], m: usize, rng: &mut Rng) -> Result<BasisSet> {
    if m < 3 {
        return capacity(format!("subspace basis needs m ≥ 3, got {m}"));
    }
    if diffs.iter().any(|x| x.len() != m || norm2(x) == 0.0) {
        return input("difference vectors must be nonzero and of length m");
    }
    let (v, _) = readout_direction(diffs, m, rng)?;
    let ones = vec![1.0 / (m as f64).sqrt(); m];
    let fixed = orthonormalize(&[ones.clone(), v.clone()], 1e-9);
    if fixed.len() < 2 {
        return input("readout direction is parallel to the all-ones vector");
    }
    let vectors = random_orthonormal_complement(m, &fixed, m - 2, rng)?;
    Ok(BasisSet { vectors, v, ones })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_example() {
        let b = subspace_basis(&[vec![1.0, -1.0, 0.0, 0.0]], 4, &mut Rng::seed(1)).unwrap();
        assert_eq!(b.vectors.len(), 2);
        for u in &b.vectors {
            assert!((norm2(u) - 1.0).abs() <= 1e-12);
            assert!(dot(u, &b.ones).abs() <= 1e-12);
            assert!(dot(u, &b.v).abs() <= 1e-12);
        }
        assert!(dot(&b.vectors[0], &b.vectors[1]).abs() <= 1e-12);
    }

    #[test]
    fn inputs_leave_the_span() {
        let mut r = Rng::seed(2);
        let diffs: Vec<Vec<f64>> = (0..20).map(|_| (0..9).map(|_| r.normal()).collect()).collect();
        let b = subspace_basis(&diffs, 9, &mut r).unwrap();
        assert_eq!(b.vectors.len(), 7);
        for x in &diffs {
            let p = b.project(x);
            let defect: f64 = p.iter().zip(x).map(|(a, c)| (a - c) * (a - c)).sum::<f64>().sqrt();
            assert!(defect > 0.0);
        }
    }

    #[test]
    fn too_small() {
        assert!(matches!(subspace_basis(&[], 2, &mut Rng::seed(3)), Err(crate::Error::Capacity(_))));
        assert!(subspace_basis(&[vec![0.0; 4]], 4, &mut Rng::seed(3)).is_err());
    }
}
