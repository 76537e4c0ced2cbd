//! Dense matrices, the attention/normalization primitives, reverse-mode
//! gradients and Adam. Everything is `f64`.

pub mod adam;
pub mod linalg;
pub mod matrix;
pub mod ops;
pub mod rng;
pub mod tape;

pub use adam::{AdamConfig, AdamState};
pub use linalg::{norms, one_two_norm, spectral_norm, Norms};
pub use matrix::{dot, norm2, Matrix};
pub use ops::{layernorm_c, softmax_columns_causal};
pub use rng::Rng;
pub use tape::{Block, Gradients, Tape, Var};

use crate::error::{input, Result};

/// Checked `a · b`.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols() != b.rows() {
        return input(format!("matmul {:?} · {:?}", a.shape(), b.shape()));
    }
    Ok(a.matmul(b))
}

/// Checked `a + b`.
pub fn add(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.shape() != b.shape() {
        return input(format!("add {:?} + {:?}", a.shape(), b.shape()));
    }
    Ok(a.add(b))
}

/// Checked column slice `[start, end)`.
pub fn slice_columns(a: &Matrix, start: usize, end: usize) -> Result<Matrix> {
    if start > end || end > a.cols() {
        return input(format!("columns {start}..{end} of a {}-column matrix", a.cols()));
    }
    Ok(a.slice_columns(start, end))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_examples() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![5.0, 6.0], vec![7.0, 8.0]]).unwrap();
        let want = Matrix::from_rows(&[vec![19.0, 22.0], vec![43.0, 50.0]]).unwrap();
        assert_eq!(matmul(&a, &b).unwrap(), want);
        assert_eq!(matmul(&Matrix::identity(2), &a).unwrap(), a);
        assert_eq!(matmul(&a, &Matrix::zeros(2, 3)).unwrap(), Matrix::zeros(2, 3));
        assert!(matmul(&a, &Matrix::zeros(3, 1)).is_err());
        assert!(add(&a, &Matrix::zeros(1, 2)).is_err());
        assert!(slice_columns(&a, 1, 3).is_err());
    }

    #[test]
    fn transposed_products_agree() {
        let mut r = Rng::seed(9);
        let a = Matrix::from_fn(5, 3, |_, _| r.normal());
        let b = Matrix::from_fn(5, 4, |_, _| r.normal());
        let c = Matrix::from_fn(4, 3, |_, _| r.normal());
        assert!(a.t_matmul(&b).sub(&a.transpose().matmul(&b)).max_abs() < 1e-14);
        assert!(a.matmul_t(&c).sub(&a.matmul(&c.transpose())).max_abs() < 1e-14);
    }

    #[test]
    fn concat_and_slice() {
        let a = Matrix::from_fn(2, 3, |i, j| (i * 3 + j) as f64);
        let b = Matrix::from_fn(1, 3, |_, j| -(j as f64));
        let s = Matrix::concat_rows(&[&a, &b]).unwrap();
        assert_eq!(s.shape(), (3, 3));
        assert_eq!(s.row(2), &[0.0, -1.0, -2.0]);
        let c = Matrix::concat_cols(&[&a, &a]).unwrap();
        assert_eq!(c.slice_columns(3, 6), a);
        assert!(Matrix::concat_rows(&[&a, &Matrix::zeros(1, 2)]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use crate::numerics::rng::Rng;

        proptest! {
            #[test]
            fn matmul_is_associative(seed in any::<u64>(), n in 1usize..6, m in 1usize..6, p in 1usize..6, q in 1usize..6) {
                let mut r = Rng::seed(seed);
                let a = Matrix::from_fn(n, m, |_, _| r.normal());
                let b = Matrix::from_fn(m, p, |_, _| r.normal());
                let c = Matrix::from_fn(p, q, |_, _| r.normal());
                let lhs = a.matmul(&b).matmul(&c);
                let rhs = a.matmul(&b.matmul(&c));
                prop_assert!(lhs.sub(&rhs).max_abs() < 1e-10);
            }

            #[test]
            fn spectral_bounded_by_frobenius(seed in any::<u64>(), n in 1usize..7, m in 1usize..7) {
                let mut r = Rng::seed(seed);
                let a = Matrix::from_fn(n, m, |_, _| r.normal());
                let nr = norms(&a);
                prop_assert!(nr.spectral <= nr.frobenius + 1e-9);
                prop_assert!(nr.one_two <= nr.spectral + 1e-6);
                prop_assert!(nr.frobenius <= (n.min(m) as f64).sqrt() * nr.spectral + 1e-6);
            }
        }
    }
}
