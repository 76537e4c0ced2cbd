use super::mask::PruneMask;
use crate::error::{approx, input, Result};
use crate::numerics::Matrix;
use serde::Serialize;

/// `d` surviving entries `(rows[i], cols[i])`, each in `(½, 1)`, with rows and
/// columns strictly increasing; the submatrix on these rows and columns is
/// diagonal.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiagonalSelection {
    #[serde(skip)]
    pub mask: PruneMask,
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
    pub values: Vec<f64>,
}

/// Rows come from the top half and columns from the bottom half, each cut
/// into `d` contiguous bands; band pair `i` contributes its largest entry
/// in `(½, 1)`.
pub fn prune_diagonal_submatrix(w: &Matrix, d: usize) -> Result<DiagonalSelection> {
    let n = w.rows();
    if w.cols() != n {
        return input("diagonal pruning needs a square matrix");
    }
    let top = n.div_ceil(2);
    let bottom = n - top;
    if d == 0 || top < d || bottom < d {
        return input(format!("a {n}×{n} matrix cannot host {d} disjoint bands per half"));
    }
    let band = |len: usize, i: usize| (i * len / d, (i + 1) * len / d);
    let mut mask = PruneMask::none(n, n);
    let (mut rows, mut cols, mut values) = (vec![], vec![], vec![]);
    for i in 0..d {
        let (r0, r1) = band(top, i);
        let (c0, c1) = band(bottom, i);
        let mut best: Option<(usize, usize, f64)> = None;
        for r in r0..r1 {
            for c in top + c0..top + c1 {
                let v = w[(r, c)];
                if v > 0.5 && v < 1.0 && best.is_none_or(|b| v > b.2) {
                    best = Some((r, c, v));
                }
            }
        }
        let Some((r, c, v)) = best else {
            return approx(format!("band {i} (rows {r0}..{r1}) has no entry in (1/2, 1)"));
        };
        mask.set(r, c, true);
        rows.push(r);
        cols.push(c);
        values.push(v);
    }
    Ok(DiagonalSelection { mask, rows, cols, values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;
    use crate::pruning::linear::random_uniform;

    #[test]
    fn planted_diagonal_is_recovered() {
        let mut w = Matrix::filled(8, 8, 0.1);
        let planted = [(0, 4, 0.9), (1, 5, 0.8), (2, 6, 0.7), (3, 7, 0.6)];
        for &(r, c, v) in &planted {
            w[(r, c)] = v;
        }
        let s = prune_diagonal_submatrix(&w, 4).unwrap();
        assert_eq!(s.rows, vec![0, 1, 2, 3]);
        assert_eq!(s.cols, vec![4, 5, 6, 7]);
        assert_eq!(s.values, vec![0.9, 0.8, 0.7, 0.6]);
        assert_eq!(s.mask.kept(), 4);
    }

    #[test]
    fn random_matrices_mostly_succeed() {
        let mut ok = 0;
        for seed in 0..200 {
            let w = random_uniform(64, 64, &mut Rng::seed(seed));
            if let Ok(s) = prune_diagonal_submatrix(&w, 4) {
                assert_eq!(s.mask.kept(), 4);
                assert!(s.rows.iter().all(|r| !s.cols.contains(r)));
                assert!(s.rows.windows(2).all(|p| p[0] < p[1]) && s.cols.windows(2).all(|p| p[0] < p[1]));
                assert!(s.values.iter().all(|&v| v > 0.5 && v < 1.0));
                let sub = s.mask.apply(&w).unwrap().select_columns(&s.cols);
                for (i, &r) in s.rows.iter().enumerate() {
                    for j in 0..4 {
                        assert_eq!(sub[(r, j)] != 0.0, i == j);
                    }
                }
                ok += 1;
            }
        }
        assert!(ok >= 190, "{ok}/200");
    }

    #[test]
    fn empty_band_is_a_report() {
        let w = Matrix::filled(8, 8, 0.2);
        assert!(matches!(prune_diagonal_submatrix(&w, 2), Err(crate::Error::Approximation(_))));
    }
}
