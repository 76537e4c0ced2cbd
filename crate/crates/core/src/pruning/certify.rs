use crate::numerics::{norm2, Matrix, Rng};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApproxNorm {
    /// Euclidean norm of a vector (a single column).
    Vec2,
    /// Largest column norm.
    OneTwo,
}

impl ApproxNorm {
    pub fn of(self, x: &Matrix) -> f64 {
        match self {
            ApproxNorm::Vec2 => norm2(x.data()),
            ApproxNorm::OneTwo => (0..x.cols()).map(|j| norm2(&x.column(j))).fold(0.0, f64::max),
        }
    }
}

/// Passes iff `max_error ≤ epsilon`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApproxCertificate {
    pub epsilon: f64,
    pub samples: usize,
    /// Largest `‖f(x) − g(x)‖ / ‖x‖` seen.
    pub max_error: f64,
    pub norm: ApproxNorm,
    pub passed: bool,
}

impl ApproxCertificate {
    pub fn new(epsilon: f64, samples: usize, max_error: f64, norm: ApproxNorm) -> Self {
        ApproxCertificate { epsilon, samples, max_error, norm, passed: max_error <= epsilon }
    }
}

/// Samples inputs from `domain` and records the worst relative error;
/// zero-norm inputs are skipped.
pub fn certify_epsilon(
    f: impl Fn(&Matrix) -> Matrix,
    g: impl Fn(&Matrix) -> Matrix,
    epsilon: f64,
    norm: ApproxNorm,
    mut domain: impl FnMut() -> Matrix,
    samples: usize,
) -> ApproxCertificate {
    let mut worst = 0.0f64;
    let mut used = 0;
    for _ in 0..samples {
        let x = domain();
        let nx = norm.of(&x);
        if nx == 0.0 {
            continue;
        }
        used += 1;
        worst = worst.max(norm.of(&f(&x).sub(&g(&x))) / nx);
    }
    ApproxCertificate::new(epsilon, used, worst, norm)
}

/// Inputs for vector certificates: `samples` uniform unit vectors followed by
/// `±e_i`.
pub fn unit_sphere_and_basis(dim: usize, samples: usize, rng: &mut Rng) -> Vec<Matrix> {
    let mut out: Vec<Matrix> = (0..samples).map(|_| Matrix::col_vector(&rng.unit_vector(dim))).collect();
    for i in 0..dim {
        for s in [1.0, -1.0] {
            let mut e = vec![0.0; dim];
            e[i] = s;
            out.push(Matrix::col_vector(&e));
        }
    }
    out
}

/// Certificate over a fixed list of inputs.
pub fn certify_on(
    f: impl Fn(&Matrix) -> Matrix,
    g: impl Fn(&Matrix) -> Matrix,
    epsilon: f64,
    norm: ApproxNorm,
    inputs: &[Matrix],
) -> ApproxCertificate {
    let mut it = inputs.iter();
    certify_epsilon(f, g, epsilon, norm, || it.next().expect("sample count matches").clone(), inputs.len())
}
