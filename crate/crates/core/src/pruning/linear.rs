//! Pruning random two-layer networks into a target linear map, and random
//! four-layer ReLU networks into a target two-layer ReLU network.
//!
//! Each hidden neuron keeps a single input coordinate `l` (neurons are dealt
//! round-robin over inputs). With ReLU, a neuron with positive weight carries
//! `w·ReLU(x_l)` and one with negative weight carries `|w|·ReLU(−x_l)`, so each
//! target coefficient `W[j,l]` is matched twice, once per sign pool, by a
//! subset sum over the products `W2[j,i]·W1[i,l]`.

use super::certify::{certify_on, unit_sphere_and_basis, ApproxCertificate, ApproxNorm};
use super::mask::PruneMask;
use super::subset_sum::{subset_sum_best, SEARCH_BUDGET};
use crate::error::{approx, capacity, input, Result};
use crate::numerics::linalg::spectral_norm;
use crate::numerics::{Matrix, Rng};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HiddenActivation {
    Relu,
    Identity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PruneConfig {
    /// Width rule `h ≥ c·m·ln(m·m′/ε)`.
    pub width_constant: f64,
    /// Random unit vectors per certificate (each also used negated).
    pub cert_samples: usize,
    pub search_budget: usize,
    /// A coefficient search stops once its error is below this fraction of
    /// the per-coefficient tolerance; 0 searches the whole budget.
    pub stop_fraction: f64,
}

impl Default for PruneConfig {
    fn default() -> Self {
        PruneConfig { width_constant: 4.0, cert_samples: 1000, search_budget: SEARCH_BUDGET, stop_fraction: 1e-3 }
    }
}

pub fn required_width(m: usize, m_out: usize, epsilon: f64, c: f64) -> usize {
    let arg = (m * m_out) as f64 / epsilon;
    (c * m as f64 * arg.ln().max(1.0)).ceil() as usize
}

pub fn random_uniform(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.uniform_in(-1.0, 1.0))
}

/// `x ↦ W2 σ(W1 x)` column-wise.
pub fn two_layer(w1: &Matrix, w2: &Matrix, act: HiddenActivation, x: &Matrix) -> Matrix {
    let mut h = w1.matmul(x);
    if act == HiddenActivation::Relu {
        h = h.map(|v| v.max(0.0));
    }
    w2.matmul(&h)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LinearPruning {
    #[serde(skip)]
    pub m1: PruneMask,
    #[serde(skip)]
    pub m2: PruneMask,
    #[serde(skip)]
    pub w1: Matrix,
    #[serde(skip)]
    pub w2: Matrix,
    pub activation: HiddenActivation,
    /// Largest error over all matched coefficients.
    pub coefficient_error: f64,
    /// `coefficient_error·√(m·m′)`, a bound on the relative error over all inputs.
    pub error_bound: f64,
    pub kept: usize,
    pub certificate: ApproxCertificate,
}

impl LinearPruning {
    pub fn eval(&self, x: &Matrix) -> Matrix {
        two_layer(&self.w1, &self.w2, self.activation, x)
    }
}

pub fn prune_to_linear(
    target: &Matrix,
    w1: &Matrix,
    w2: &Matrix,
    activation: HiddenActivation,
    epsilon: f64,
    config: &PruneConfig,
    rng: &mut Rng,
) -> Result<LinearPruning> {
    let (m_out, m) = target.shape();
    let h = w1.rows();
    if w1.cols() != m || w2.shape() != (m_out, h) {
        return input(format!("shapes: target {m_out}×{m}, W1 {:?}, W2 {:?}", w1.shape(), w2.shape()));
    }
    if !(epsilon > 0.0) || !target.is_finite() {
        return input("epsilon must be positive and the target finite");
    }
    let need = required_width(m, m_out, epsilon, config.width_constant);
    if h < need {
        return capacity(format!("hidden width {h} is below the required {need}"));
    }
    // Per-coefficient slack: each output sums at most Σ_l |x_l| ≤ √m ‖x‖ errors.
    let delta = epsilon / (2.0 * ((m * m_out) as f64).sqrt());
    let mut m1 = PruneMask::none(h, m);
    let mut m2 = PruneMask::none(m_out, h);
    let mut worst = 0.0f64;
    for l in 0..m {
        let group: Vec<usize> = (l..h).step_by(m).filter(|&i| w1[(i, l)] != 0.0).collect();
        let pools: Vec<Vec<usize>> = match activation {
            HiddenActivation::Relu => vec![
                group.iter().copied().filter(|&i| w1[(i, l)] > 0.0).collect(),
                group.iter().copied().filter(|&i| w1[(i, l)] < 0.0).collect(),
            ],
            HiddenActivation::Identity => vec![group.clone()],
        };
        for j in 0..m_out {
            let want = target[(j, l)];
            for (branch, pool) in pools.iter().enumerate() {
                let vals: Vec<f64> = pool.iter().map(|&i| w2[(j, i)] * w1[(i, l)]).collect();
                let (pick, err) = subset_sum_best(&vals, want, delta * config.stop_fraction, config.search_budget);
                if err > delta {
                    return approx(format!(
                        "coefficient ({j},{l}) = {want}, {} pool of {}: error {err:e} above {delta:e}",
                        if branch == 0 { "positive" } else { "negative" },
                        pool.len()
                    ));
                }
                worst = worst.max(err);
                for p in pick {
                    m1.set(pool[p], l, true);
                    m2.set(j, pool[p], true);
                }
            }
        }
    }
    let pw1 = m1.apply(w1)?;
    let pw2 = m2.apply(w2)?;
    let mut inputs = unit_sphere_and_basis(m, config.cert_samples, rng);
    let negated: Vec<Matrix> = inputs[..config.cert_samples].iter().map(|x| x.scale(-1.0)).collect();
    inputs.extend(negated);
    let certificate =
        certify_on(|x| two_layer(&pw1, &pw2, activation, x), |x| target.matmul(x), epsilon, ApproxNorm::Vec2, &inputs);
    let kept = m1.kept() + m2.kept();
    let error_bound = worst * ((m * m_out) as f64).sqrt();
    Ok(LinearPruning { m1, m2, w1: pw1, w2: pw2, activation, coefficient_error: worst, error_bound, kept, certificate })
}

/// Random four-layer ReLU network `L4 ReLU(L3 ReLU(L2 ReLU(L1 x)))`.
#[derive(Clone, Debug, PartialEq)]
pub struct FourLayer {
    pub layers: [Matrix; 4],
}

impl FourLayer {
    pub fn random(input: usize, width: usize, rng: &mut Rng) -> Self {
        FourLayer {
            layers: [
                random_uniform(width, input, rng),
                random_uniform(width, width, rng),
                random_uniform(width, width, rng),
                random_uniform(input, width, rng),
            ],
        }
    }

    pub fn eval(&self, x: &Matrix) -> Matrix {
        let mut h = x.clone();
        for (i, w) in self.layers.iter().enumerate() {
            h = w.matmul(&h);
            if i < 3 {
                h = h.map(|v| v.max(0.0));
            }
        }
        h
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MlpPruning {
    #[serde(skip)]
    pub masks: [PruneMask; 4],
    #[serde(skip)]
    pub pruned: FourLayer,
    /// Per-stage target `ε/8`.
    pub stage_epsilon: f64,
    pub stage_certificates: [ApproxCertificate; 2],
    /// `‖W1‖·B2 + ‖W2‖·B1 + B1·B2` from the stage error bounds `B1`, `B2`;
    /// at most `4√2·ε₀ + ε₀²`.
    pub composed_bound: f64,
    pub certificate: ApproxCertificate,
}

fn embed_mask(small: &PruneMask, rows: usize, cols: usize, row0: usize, col0: usize) -> PruneMask {
    let mut out = PruneMask::none(rows, cols);
    for i in 0..small.rows() {
        for j in 0..small.cols() {
            if small.get(i, j) {
                out.set(row0 + i, col0 + j, true);
            }
        }
    }
    out
}

/// Target `x ↦ W2 ReLU(W1 x)` with `‖W1‖₂, ‖W2‖₂ ≤ 2√2`.
pub fn prune_to_mlp(
    t1: &Matrix,
    t2: &Matrix,
    random: &FourLayer,
    epsilon: f64,
    config: &PruneConfig,
    rng: &mut Rng,
) -> Result<MlpPruning> {
    let (w, n) = t1.shape();
    let cap = 2.0 * 2f64.sqrt() + 1e-12;
    if t2.shape() != (n, w) {
        return input(format!("target layers {:?} and {:?} do not chain {n} → {w} → {n}", t1.shape(), t2.shape()));
    }
    if spectral_norm(t1) > cap || spectral_norm(t2) > cap {
        return input("target layers must have spectral norm at most 2√2");
    }
    let [l1, l2, l3, l4] = &random.layers;
    let wide = l1.rows();
    if l1.cols() != n || l2.shape() != (wide, wide) || l3.shape() != (wide, wide) || l4.shape() != (n, wide) {
        return input("random network does not match the target's input dimension");
    }
    if wide < w {
        return capacity(format!("random width {wide} is below the target width {w}"));
    }
    let e0 = epsilon / 8.0;
    let stage = |name: &str, r: Result<LinearPruning>| r.map_err(|e| crate::Error::Approximation(format!("stage {name}: {e}")));
    // Stage 1: rows 0..w of L2 over L1 approximate W1.
    let s1 = stage("1", prune_to_linear(t1, l1, &l2.slice_rows(0, w), HiddenActivation::Relu, e0, config, rng))?;
    // Stage 2: columns 0..w of L3 with L4 approximate W2.
    let s2 = stage("2", prune_to_linear(t2, &l3.slice_columns(0, w), l4, HiddenActivation::Relu, e0, config, rng))?;
    let masks = [
        s1.m1.clone(),
        embed_mask(&s1.m2, wide, wide, 0, 0),
        embed_mask(&s2.m1, wide, wide, 0, 0),
        s2.m2.clone(),
    ];
    let pruned = FourLayer {
        layers: [masks[0].apply(l1)?, masks[1].apply(l2)?, masks[2].apply(l3)?, masks[3].apply(l4)?],
    };
    let (b1, b2) = (s1.error_bound, s2.error_bound);
    let composed_bound = spectral_norm(t1) * b2 + spectral_norm(t2) * b1 + b1 * b2;
    let mut inputs = unit_sphere_and_basis(n, config.cert_samples, rng);
    let negated: Vec<Matrix> = inputs[..config.cert_samples].iter().map(|x| x.scale(-1.0)).collect();
    inputs.extend(negated);
    let certificate = certify_on(
        |x| pruned.eval(x),
        |x| t2.matmul(&t1.matmul(x).map(|v| v.max(0.0))),
        epsilon,
        ApproxNorm::Vec2,
        &inputs,
    );
    Ok(MlpPruning {
        masks,
        pruned,
        stage_epsilon: e0,
        stage_certificates: [s1.certificate, s2.certificate],
        composed_bound,
        certificate,
    })
}
