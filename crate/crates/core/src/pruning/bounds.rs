//! Randomized checks of the inequalities the approximation argument rests on.

use crate::numerics::linalg::spectral_norm;
use crate::numerics::ops::{layernorm_c, softmax};
use crate::numerics::{norm2, Matrix, Rng};
use serde::Serialize;
use serde_json::{json, Value};

/// Floating-point slack on every comparison.
pub const SLACK: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundCheck {
    pub name: String,
    pub trials: usize,
    pub violations: usize,
    /// Largest `lhs − rhs` seen (negative when every trial holds).
    pub worst_margin: f64,
    /// First violating instance.
    pub counterexample: Option<Value>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundsReport {
    pub checks: Vec<BoundCheck>,
}

impl BoundsReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.violations == 0)
    }
}

fn vec_of(rng: &mut Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.normal() * scale).collect()
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn run(name: &str, trials: usize, rng: &mut Rng, mut trial: impl FnMut(&mut Rng) -> (f64, f64, Value)) -> BoundCheck {
    let mut check = BoundCheck { name: name.into(), trials, violations: 0, worst_margin: f64::NEG_INFINITY, counterexample: None };
    for _ in 0..trials {
        let (lhs, rhs, instance) = trial(rng);
        let margin = lhs - rhs;
        check.worst_margin = check.worst_margin.max(margin);
        if !(lhs <= rhs + SLACK * (1.0 + rhs.abs())) {
            check.violations += 1;
            if check.counterexample.is_none() {
                check.counterexample = Some(json!({ "lhs": lhs, "rhs": rhs, "instance": instance }));
            }
        }
    }
    check
}

/// `Σ|softmax(x) − softmax(y)| ≤ exp(2ε) − 1` when `‖x − y‖∞ ≤ ε`.
pub fn check_softmax(trials: usize, rng: &mut Rng) -> BoundCheck {
    run("softmax_l1", trials, rng, |r| {
        let n = 1 + r.below(16);
        let eps = if r.below(10) == 0 { 0.0 } else { r.uniform() * 2.0 };
        let x = vec_of(r, n, 3.0);
        let y: Vec<f64> = x.iter().map(|v| v + r.uniform_in(-eps, eps)).collect();
        let lhs: f64 = softmax(&x).iter().zip(softmax(&y)).map(|(a, b)| (a - b).abs()).sum();
        (lhs, (2.0 * eps).exp() - 1.0, json!({ "x": x, "y": y, "eps": eps }))
    })
}

/// `‖LN_C(x) − LN_C(y)‖ ≤ 2‖x − y‖/C`.
pub fn check_layernorm(trials: usize, rng: &mut Rng) -> BoundCheck {
    run("layernorm_lipschitz", trials, rng, |r| {
        let n = 2 + r.below(15);
        let c = [1.0, 0.1 + r.uniform() * 2.0][r.below(2)];
        // Scales straddle C so every case of the definition is hit.
        let sx = c * r.uniform() * 2.0;
        let x = vec_of(r, n, sx);
        let y = if r.below(2) == 0 {
            let sy = c * r.uniform() * 2.0;
            vec_of(r, n, sy)
        } else {
            x.iter().map(|v| v + r.normal() * 0.01 * c).collect()
        };
        let lhs = norm2(&sub(&layernorm_c(&x, c), &layernorm_c(&y, c)));
        (lhs, 2.0 * norm2(&sub(&x, &y)) / c, json!({ "x": x, "y": y, "c": c }))
    })
}

/// Normalized directions of `a + r` and `b + r` are `ε`-close once
/// `‖r‖ ≥ r₀(4/ε + 1)`, `r₀ = max(‖a‖, ‖b‖)`.
pub fn check_geometric(trials: usize, rng: &mut Rng) -> BoundCheck {
    run("geometric_radius", trials, rng, |r| {
        let n = 1 + r.below(12);
        let eps = 0.01 + r.uniform() * 2.0;
        let (sa, sb) = (r.uniform() * 3.0, r.uniform() * 3.0);
        let a = vec_of(r, n, sa);
        let b = vec_of(r, n, sb);
        let r0 = norm2(&a).max(norm2(&b));
        let radius = r0 * (4.0 / eps + 1.0) * (1.0 + r.exponential() * [0.0, 0.1, 1.0][r.below(3)]);
        let dir = r.unit_vector(n);
        let rv: Vec<f64> = dir.iter().map(|v| v * radius).collect();
        let unit = |v: Vec<f64>| {
            let s = norm2(&v);
            v.into_iter().map(|x| x / s).collect::<Vec<f64>>()
        };
        let ar = unit(a.iter().zip(&rv).map(|(x, y)| x + y).collect());
        let br = unit(b.iter().zip(&rv).map(|(x, y)| x + y).collect());
        (norm2(&sub(&ar, &br)), eps, json!({ "a": a, "b": b, "r": rv, "eps": eps }))
    })
}

/// `f₂∘f₁` approximates `g₂∘g₁` within `ε₂·λ₁ + ε₁·λ₂ + ε₁ε₂`, where
/// `‖g₁(x)‖ ≤ λ₁‖x‖` and `g₂` is `λ₂`-Lipschitz.
pub fn check_error_composition(trials: usize, rng: &mut Rng) -> BoundCheck {
    run("error_composition", trials, rng, |r| {
        let n = 1 + r.below(6);
        let mat = |r: &mut Rng, s: f64| Matrix::from_fn(n, n, |_, _| r.normal() * s);
        let a1 = mat(r, 1.0);
        let a2 = mat(r, 1.0);
        // g₁ = ReLU∘A₁ grows by ‖A₁‖; g₂ = A₂ is ‖A₂‖-Lipschitz.
        let (l1, l2) = (spectral_norm(&a1), spectral_norm(&a2));
        let e1m = mat(r, 0.3);
        let e2m = mat(r, 0.3);
        let (e1, e2) = (spectral_norm(&e1m), spectral_norm(&e2m));
        let sx = 1.0 + r.uniform() * 3.0;
        let x = vec_of(r, n, sx);
        let g1 = |x: &[f64]| a1.matvec(x).into_iter().map(|v| v.max(0.0)).collect::<Vec<f64>>();
        let f1: Vec<f64> = g1(&x).iter().zip(e1m.matvec(&x)).map(|(a, b)| a + b).collect();
        let f2: Vec<f64> = a2.matvec(&f1).iter().zip(e2m.matvec(&f1)).map(|(a, b)| a + b).collect();
        let g = a2.matvec(&g1(&x));
        let lhs = norm2(&sub(&f2, &g));
        (lhs, (e2 * l1 + e1 * l2 + e1 * e2) * norm2(&x), json!({ "x": x, "eps1": e1, "eps2": e2, "lambda1": l1, "lambda2": l2 }))
    })
}

/// `LN_C([P⊥x; 0]) = [LN_C(x); 0]` exactly up to rounding.
pub fn check_padded_layernorm(trials: usize, rng: &mut Rng) -> BoundCheck {
    run("padded_layernorm", trials, rng, |r| {
        let n = 1 + r.below(10);
        let pad = 1 + r.below(10);
        let c = r.uniform() * 2.0;
        let sx = r.uniform() * 4.0;
        let x = vec_of(r, n, sx);
        let mut big = crate::numerics::ops::center(&x);
        big.resize(n + pad, 0.0);
        let mut want = layernorm_c(&x, c);
        want.resize(n + pad, 0.0);
        let err = sub(&layernorm_c(&big, c), &want).iter().fold(0.0f64, |a, v| a.max(v.abs()));
        (err, 1e-12, json!({ "x": x, "pad": pad, "c": c }))
    })
}

pub fn verify_bounds(trials: usize, rng: &mut Rng) -> BoundsReport {
    BoundsReport {
        checks: vec![
            check_softmax(trials, rng),
            check_layernorm(trials, rng),
            check_geometric(trials, rng),
            check_error_composition(trials, rng),
            check_padded_layernorm(trials, rng),
        ],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_violations() {
        let rep = verify_bounds(10_000, &mut Rng::seed(1));
        for c in &rep.checks {
            assert_eq!(c.violations, 0, "{}: {:?}", c.name, c.counterexample);
        }
        assert!(rep.passed());
    }

    #[test]
    fn softmax_at_equal_inputs() {
        let x = [0.3, -1.0, 2.0];
        let lhs: f64 = softmax(&x).iter().zip(softmax(&x)).map(|(a, b)| (a - b).abs()).sum();
        assert_eq!(lhs, 0.0);
        assert_eq!((2.0f64 * 0.0).exp() - 1.0, 0.0);
    }

    #[test]
    fn a_false_bound_is_caught() {
        let c = run("false", 10, &mut Rng::seed(2), |r| (1.0 + r.uniform(), 1.0, json!(null)));
        assert_eq!(c.violations, 10);
        assert!(c.counterexample.is_some());
    }
}
