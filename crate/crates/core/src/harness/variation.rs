//! Pairwise attention variation across seeds and its random baseline.

use crate::error::{input, Result};
use crate::numerics::{Matrix, Rng};
use serde::Serialize;

/// `‖A₁ − A₂‖²_F`.
pub fn attention_variation(a: &Matrix, b: &Matrix) -> Result<f64> {
    if a.shape() != b.shape() {
        return input(format!("pattern shapes differ: {:?} vs {:?}", a.shape(), b.shape()));
    }
    Ok(a.sub(b).frobenius_sq())
}

/// Uniform draw from the probability simplex of dimension `n`.
fn simplex(n: usize, rng: &mut Rng) -> Vec<f64> {
    let e: Vec<f64> = (0..n).map(|_| rng.exponential()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// Column `j` is uniform on the simplex over keys `0..=j`; entries below
/// the causal boundary are zero.
pub fn random_causal_pattern(n: usize, rng: &mut Rng) -> Matrix {
    let mut a = Matrix::zeros(n, n);
    for j in 0..n {
        for (i, v) in simplex(j + 1, rng).into_iter().enumerate() {
            a[(i, j)] = v;
        }
    }
    a
}

/// Every row uniform on the full simplex (no masking).
pub fn random_row_stochastic(n: usize, rng: &mut Rng) -> Matrix {
    let mut a = Matrix::zeros(n, n);
    for i in 0..n {
        a.row_mut(i).copy_from_slice(&simplex(n, rng));
    }
    a
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub std: f64,
    /// Standard error of the mean.
    pub sem: f64,
}

impl Estimate {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = if xs.len() > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
        Estimate { mean, std: var.sqrt(), sem: (var / n).sqrt() }
    }
}

/// Monte-Carlo variation between independent random patterns of one size,
/// under both normalization conventions.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RandomBaseline {
    pub size: usize,
    pub pairs: usize,
    /// Causally masked, column-stochastic: the shape of measured patterns.
    pub causal: Estimate,
    /// Unmasked, row-stochastic.
    pub row_stochastic: Estimate,
}

pub fn random_baseline(size: usize, pairs: usize, rng: &mut Rng) -> RandomBaseline {
    let mut draw = |f: fn(usize, &mut Rng) -> Matrix| -> Estimate {
        let xs: Vec<f64> = (0..pairs).map(|_| f(size, rng).sub(&f(size, rng)).frobenius_sq()).collect();
        Estimate::of(&xs)
    };
    let causal = draw(random_causal_pattern);
    let row_stochastic = draw(random_row_stochastic);
    RandomBaseline { size, pairs, causal, row_stochastic }
}

/// Symmetric table of pairwise variations (zero diagonal) and the mean over
/// distinct pairs.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VariationTable {
    pub table: Vec<Vec<f64>>,
    pub mean: f64,
    pub std: f64,
}

pub fn variation_table(patterns: &[Matrix]) -> Result<VariationTable> {
    let n = patterns.len();
    if n < 2 {
        return input("variation needs at least two patterns");
    }
    let mut table = vec![vec![0.0; n]; n];
    let mut pairs = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            let v = attention_variation(&patterns[i], &patterns[j])?;
            table[i][j] = v;
            table[j][i] = v;
            pairs.push(v);
        }
    }
    let e = Estimate::of(&pairs);
    Ok(VariationTable { table, mean: e.mean, std: e.std })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `E‖a − b‖² = 4/(n+1) − 2/n` for independent uniform draws on the
    /// `n`-simplex, from `E a_i² = 2/(n(n+1))`.
    fn simplex_pair(n: usize) -> f64 {
        let n = n as f64;
        4.0 / (n + 1.0) - 2.0 / n
    }

    #[test]
    fn examples() {
        let i2 = Matrix::identity(2);
        let anti = Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert_eq!(attention_variation(&i2, &i2).unwrap(), 0.0);
        assert_eq!(attention_variation(&i2, &anti).unwrap(), 4.0);
        assert!(attention_variation(&i2, &Matrix::identity(3)).is_err());
        let mut r = Rng::seed(1);
        for _ in 0..20 {
            let (a, b) = (random_causal_pattern(5, &mut r), random_causal_pattern(5, &mut r));
            assert_eq!(attention_variation(&a, &b).unwrap(), attention_variation(&b, &a).unwrap());
        }
    }

    #[test]
    fn random_patterns_are_stochastic() {
        let mut r = Rng::seed(2);
        let a = random_causal_pattern(6, &mut r);
        for j in 0..6 {
            assert!((a.column(j).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!((j + 1..6).all(|i| a[(i, j)] == 0.0));
        }
        let b = random_row_stochastic(6, &mut r);
        assert!((0..6).all(|i| (b.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12));
    }

    #[test]
    fn baseline_matches_closed_form() {
        let b = random_baseline(17, 20_000, &mut Rng::seed(3));
        let causal: f64 = (1..=17).map(simplex_pair).sum();
        let rows = 17.0 * simplex_pair(17);
        assert!((b.causal.mean - causal).abs() < 4.0 * b.causal.sem, "{} vs {causal}", b.causal.mean);
        assert!((b.row_stochastic.mean - rows).abs() < 4.0 * b.row_stochastic.sem);
    }

    #[test]
    fn table_is_symmetric_with_zero_diagonal() {
        let mut r = Rng::seed(4);
        let ps: Vec<Matrix> = (0..5).map(|_| random_causal_pattern(4, &mut r)).collect();
        let t = variation_table(&ps).unwrap();
        for i in 0..5 {
            assert_eq!(t.table[i][i], 0.0);
            for j in 0..5 {
                assert_eq!(t.table[i][j], t.table[j][i]);
            }
        }
        let same = variation_table(&[ps[0].clone(), ps[0].clone(), ps[0].clone()]).unwrap();
        assert_eq!(same.mean, 0.0);
    }
}
