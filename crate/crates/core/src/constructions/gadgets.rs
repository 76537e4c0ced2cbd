//! Two-layer ReLU gadgets `x ↦ W₂ ReLU(W₁ x + b₁) + b₂`.

use crate::error::{input, Result};
use crate::numerics::linalg::spectral_norm;
use crate::numerics::{dot, Matrix, Rng};
use crate::transformer::params::Dense;

#[derive(Clone, Debug, PartialEq)]
pub struct GadgetMlp {
    pub hidden: Dense,
    pub out: Dense,
}

impl GadgetMlp {
    pub fn in_dim(&self) -> usize {
        self.hidden.in_dim()
    }

    pub fn width(&self) -> usize {
        self.hidden.out_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.out.out_dim()
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let h: Vec<f64> = self.hidden.apply(x).into_iter().map(|v| v.max(0.0)).collect();
        self.out.apply(&h)
    }

    /// Largest `|pre-activation|` over the box `[0, bound]^n` (attained at a corner).
    pub fn preactivation_bound(&self, bound: f64) -> f64 {
        let w = &self.hidden.w;
        (0..w.rows())
            .map(|i| {
                let b = self.hidden.b[(i, 0)];
                let pos: f64 = w.row(i).iter().filter(|&&v| v > 0.0).sum::<f64>() * bound;
                let neg: f64 = w.row(i).iter().filter(|&&v| v < 0.0).sum::<f64>() * bound;
                (b + pos).abs().max((b + neg).abs())
            })
            .fold(0.0, f64::max)
    }
}

/// Scalar positions `s_i` with outputs `y_i`: width `2n`, exact at every `s_i`,
/// constant beyond the extreme points.
fn interpolate_1d(s: &[f64], ys: &[Vec<f64>]) -> Result<(Vec<f64>, Matrix, f64)> {
    let n = s.len();
    let p = ys.first().map_or(0, |y| y.len());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| s[a].total_cmp(&s[b]));
    let mut gap = f64::INFINITY;
    for w in order.windows(2) {
        gap = gap.min(s[w[1]] - s[w[0]]);
    }
    if gap <= 0.0 {
        return input("interpolation points must be distinct");
    }
    let gamma = if n > 1 { gap / 2.0 } else { 1.0 };
    // z_i = y_i/γ − 2 Σ_{j<i} z_j, per output coordinate.
    let mut z = Matrix::zeros(p, n);
    let mut acc = vec![0.0; p];
    for (rank, &i) in order.iter().enumerate() {
        for c in 0..p {
            let zi = ys[i][c] / gamma - 2.0 * acc[c];
            z[(c, rank)] = zi;
            acc[c] += zi;
        }
    }
    let sorted: Vec<f64> = order.iter().map(|&i| s[i]).collect();
    Ok((sorted, z, gamma))
}

/// Exact interpolant along a fixed direction `w`.
pub fn interpolating_mlp_along(points: &[(Vec<f64>, Vec<f64>)], w: &[f64]) -> Result<GadgetMlp> {
    if points.is_empty() {
        return input("interpolation needs at least one point");
    }
    let d = points[0].0.len();
    let p = points[0].1.len();
    if w.len() != d || points.iter().any(|(x, y)| x.len() != d || y.len() != p) {
        return input("interpolation points have inconsistent dimensions");
    }
    let s: Vec<f64> = points.iter().map(|(x, _)| dot(w, x)).collect();
    let ys: Vec<Vec<f64>> = points.iter().map(|(_, y)| y.clone()).collect();
    let (sorted, z, gamma) = interpolate_1d(&s, &ys)?;
    let n = sorted.len();
    let mut hw = Matrix::zeros(2 * n, d);
    let mut hb = vec![0.0; 2 * n];
    let mut ow = Matrix::zeros(p, 2 * n);
    for (r, &si) in sorted.iter().enumerate() {
        for c in 0..d {
            hw[(2 * r, c)] = w[c];
            hw[(2 * r + 1, c)] = w[c];
        }
        hb[2 * r] = gamma - si;
        hb[2 * r + 1] = -gamma - si;
        for c in 0..p {
            ow[(c, 2 * r)] = z[(c, r)];
            ow[(c, 2 * r + 1)] = -z[(c, r)];
        }
    }
    Ok(GadgetMlp { hidden: Dense::new(hw, hb), out: Dense::new(ow, vec![0.0; p]) })
}

/// Unit direction with the widest minimum gap between projected points,
/// chosen from seeded random candidates.
pub fn separating_direction(xs: &[Vec<f64>], rng: &mut Rng, candidates: usize) -> Result<(Vec<f64>, f64)> {
    let d = xs.first().map_or(0, |x| x.len());
    let mut best: Option<(Vec<f64>, f64)> = None;
    for _ in 0..candidates.max(1) {
        let w = rng.unit_vector(d);
        let mut s: Vec<f64> = xs.iter().map(|x| dot(&w, x)).collect();
        s.sort_by(f64::total_cmp);
        let gap = s.windows(2).map(|p| p[1] - p[0]).fold(f64::INFINITY, f64::min);
        if best.as_ref().is_none_or(|(_, g)| gap > *g) {
            best = Some((w, gap));
        }
    }
    let (w, gap) = best.expect("at least one candidate");
    if xs.len() > 1 && !(gap > 0.0) {
        return input("points are not pairwise distinct");
    }
    Ok((w, gap))
}

/// Width-`2n` exact interpolant of `n` distinct points (vector outputs share
/// the hidden units).
pub fn interpolating_mlp(points: &[(Vec<f64>, Vec<f64>)], rng: &mut Rng) -> Result<GadgetMlp> {
    if points.is_empty() {
        return input("interpolation needs at least one point");
    }
    let xs: Vec<Vec<f64>> = points.iter().map(|(x, _)| x.clone()).collect();
    for i in 0..xs.len() {
        for j in 0..i {
            if xs[i] == xs[j] {
                return input(format!("duplicate interpolation input at {j} and {i}"));
            }
        }
    }
    let (w, _) = separating_direction(&xs, rng, 64)?;
    interpolating_mlp_along(points, &w)
}

/// `f(x ⊕ y) = x_y` for `x ∈ [0, M]^n`, `y ∈ 1..=n`; `f(x ⊕ 0) = M`.
pub fn indexing_mlp(n: usize, m: f64) -> Result<GadgetMlp> {
    if !(m > 0.0) || n == 0 {
        return input("indexing needs n ≥ 1 and M > 0");
    }
    let mut hw = Matrix::zeros(2 * n, n + 1);
    let mut hb = vec![0.0; 2 * n];
    let mut ow = Matrix::zeros(1, 2 * n);
    for i in 1..=n {
        let r = 2 * (i - 1);
        hw[(r, i - 1)] = 1.0;
        hw[(r, n)] = m;
        hb[r] = -m * i as f64;
        hw[(r + 1, i - 1)] = 1.0;
        hw[(r + 1, n)] = m;
        hb[r + 1] = -m * (i + 1) as f64;
        ow[(0, r)] = 1.0;
        ow[(0, r + 1)] = -1.0;
    }
    // The −M(y − 1) term rides on the output layer through a unit that holds y.
    let mut hw2 = Matrix::zeros(2 * n + 1, n + 1);
    hw2.write_block(0, 0, &hw);
    hw2[(2 * n, n)] = 1.0;
    let mut hb2 = hb;
    hb2.push(0.0);
    let mut ow2 = Matrix::zeros(1, 2 * n + 1);
    ow2.write_block(0, 0, &ow);
    ow2[(0, 2 * n)] = -m;
    Ok(GadgetMlp { hidden: Dense::new(hw2, hb2), out: Dense::new(ow2, vec![m]) })
}

/// Returns `i` when `x_i > M` is the only nonzero entry; always within `[0, n(n+1)/2]`.
pub fn argmax_mlp(n: usize, m: f64) -> Result<GadgetMlp> {
    if !(m > 0.0) || n == 0 {
        return input("argmax needs n ≥ 1 and M > 0");
    }
    let mut hw = Matrix::zeros(2 * n, n);
    let mut hb = vec![0.0; 2 * n];
    let mut ow = Matrix::zeros(1, 2 * n);
    for i in 0..n {
        hw[(2 * i, i)] = 1.0;
        hw[(2 * i + 1, i)] = 1.0;
        hb[2 * i + 1] = -m;
        ow[(0, 2 * i)] = (i + 1) as f64 / m;
        ow[(0, 2 * i + 1)] = -((i + 1) as f64) / m;
    }
    Ok(GadgetMlp { hidden: Dense::new(hw, hb), out: Dense::new(ow, vec![0.0]) })
}

/// `f(k ⊕ x) = f_k(x)` for integer `k ∈ 1..=K` and `x ∈ [0, M]^n`.
///
/// Each gadget unit `p` appears twice, as `ReLU(p + S(y−k))` and
/// `ReLU(p + S(y−k) − S/2)` with `S > 2·max|p|`; their difference is 0 below
/// `k`, `ReLU(p)` at `k` and `S/2` above. `K − 1` ramps `ReLU(y − k)` remove
/// the saturated contributions. Width `2Σm_k + K − 1`.
pub fn choose_function_mlp(gadgets: &[GadgetMlp], m: f64) -> Result<GadgetMlp> {
    let kk = gadgets.len();
    if kk == 0 || !(m >= 0.0) {
        return input("choose needs at least one gadget and M ≥ 0");
    }
    let n = gadgets[0].in_dim();
    let p = gadgets[0].out_dim();
    if gadgets.iter().any(|g| g.in_dim() != n || g.out_dim() != p) {
        return input("gadgets disagree on input or output dimension");
    }
    let bound = gadgets.iter().map(|g| g.preactivation_bound(m)).fold(0.0, f64::max);
    let s = 2.0 * (bound + 1.0);
    let width: usize = gadgets.iter().map(|g| 2 * g.width()).sum::<usize>() + kk - 1;
    let mut hw = Matrix::zeros(width, n + 1);
    let mut hb = vec![0.0; width];
    let mut ow = Matrix::zeros(p, width);
    let mut row = 0;
    // Σ_i a_{k,i} per gadget.
    let mut a_sum: Vec<Vec<f64>> = Vec::with_capacity(kk);
    for (k0, g) in gadgets.iter().enumerate() {
        let k = (k0 + 1) as f64;
        let mut sum = vec![0.0; p];
        for i in 0..g.width() {
            for shift in [0.0, s / 2.0] {
                for c in 0..n {
                    hw[(row, c + 1)] = g.hidden.w[(i, c)];
                }
                hw[(row, 0)] = s;
                hb[row] = g.hidden.b[(i, 0)] - s * k - shift;
                let sign = if shift == 0.0 { 1.0 } else { -1.0 };
                for o in 0..p {
                    ow[(o, row)] = sign * g.out.w[(o, i)];
                }
                row += 1;
            }
            for (o, acc) in sum.iter_mut().enumerate() {
                *acc += g.out.w[(o, i)];
            }
        }
        a_sum.push(sum);
    }
    // Ramps ReLU(y − k) for k = 1..K−1 with coefficients c_k, plus output bias c_0.
    let mut c = vec![vec![0.0; p]; kk];
    let c0: Vec<f64> = gadgets[0].out.b.data().to_vec();
    for kp in 2..=kk {
        for o in 0..p {
            let mut rhs = gadgets[kp - 1].out.b[(o, 0)] - c0[o];
            for k in 1..kp {
                rhs -= s / 2.0 * a_sum[k - 1][o];
            }
            for k in 1..kp - 1 {
                rhs -= c[k][o] * (kp - k) as f64;
            }
            c[kp - 1][o] = rhs;
        }
    }
    for k in 1..kk {
        hw[(row, 0)] = 1.0;
        hb[row] = -(k as f64);
        for o in 0..p {
            ow[(o, row)] = c[k][o];
        }
        row += 1;
    }
    debug_assert_eq!(row, width);
    Ok(GadgetMlp { hidden: Dense::new(hw, hb), out: Dense::new(ow, c0) })
}

/// `f(x) = Wx` exactly through `[I, −I] ReLU([W; −W] x)`; requires `‖W‖₂ ≤ 2`.
pub fn exact_linear_mlp(w: &Matrix) -> Result<GadgetMlp> {
    if spectral_norm(w) > 2.0 + 1e-12 {
        return input("exact linear gadget needs spectral norm at most 2");
    }
    let (r, c) = w.shape();
    let mut hw = Matrix::zeros(2 * r, c);
    hw.write_block(0, 0, w);
    hw.write_block(r, 0, &w.scale(-1.0));
    let mut ow = Matrix::zeros(r, 2 * r);
    for i in 0..r {
        ow[(i, i)] = 1.0;
        ow[(i, r + i)] = -1.0;
    }
    Ok(GadgetMlp { hidden: Dense::new(hw, vec![0.0; 2 * r]), out: Dense::new(ow, vec![0.0; r]) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolation_examples() {
        let g = interpolating_mlp(&[(vec![0.0], vec![1.0]), (vec![1.0], vec![3.0])], &mut Rng::seed(1)).unwrap();
        assert!((g.eval(&[0.0])[0] - 1.0).abs() < 1e-12);
        assert!((g.eval(&[1.0])[0] - 3.0).abs() < 1e-12);
        assert_eq!(g.width(), 4);
        let one = interpolating_mlp(&[(vec![0.3, -2.0], vec![7.0, -1.0])], &mut Rng::seed(2)).unwrap();
        assert_eq!(one.eval(&[0.3, -2.0]), vec![7.0, -1.0]);
        let dup = interpolating_mlp(&[(vec![1.0], vec![0.0]), (vec![1.0], vec![2.0])], &mut Rng::seed(3));
        assert!(dup.is_err());
    }

    #[test]
    fn interpolation_is_exact_on_random_points() {
        let mut r = Rng::seed(4);
        let pts: Vec<(Vec<f64>, Vec<f64>)> =
            (0..30).map(|_| ((0..5).map(|_| r.normal()).collect(), (0..3).map(|_| r.normal() * 4.0).collect())).collect();
        let g = interpolating_mlp(&pts, &mut r).unwrap();
        assert_eq!(g.width(), 60);
        for (x, y) in &pts {
            for (a, b) in g.eval(x).iter().zip(y) {
                assert!((a - b).abs() <= 1e-9, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn indexing_examples() {
        let g = indexing_mlp(3, 10.0).unwrap();
        assert!((g.eval(&[5.0, 7.0, 9.0, 2.0])[0] - 7.0).abs() < 1e-12);
        assert_eq!(g.eval(&[0.0, 0.0, 0.0, 3.0])[0], 0.0);
        assert_eq!(g.eval(&[4.0, 1.0, 2.0, 0.0])[0], 10.0);
        let mut r = Rng::seed(5);
        for _ in 0..100 {
            let x: Vec<f64> = (0..4).map(|_| r.uniform() * 6.0).collect();
            let y = 1 + r.below(4);
            let mut inp = x.clone();
            inp.push(y as f64);
            assert!((indexing_mlp(4, 6.0).unwrap().eval(&inp)[0] - x[y - 1]).abs() < 1e-12);
        }
    }

    #[test]
    fn argmax_examples() {
        let g = argmax_mlp(3, 1.0).unwrap();
        assert_eq!(g.eval(&[0.0, 3.5, 0.0])[0], 2.0);
        assert_eq!(argmax_mlp(4, 1.0).unwrap().eval(&[7.0, 0.0, 0.0, 0.0])[0], 1.0);
        let mut r = Rng::seed(6);
        for i in 0..6 {
            let mut x = vec![0.0; 6];
            x[i] = 0.8 + r.uniform() * 5.0;
            assert!((argmax_mlp(6, 0.8).unwrap().eval(&x)[0] - (i + 1) as f64).abs() <= 1e-12);
        }
        // Arbitrary inputs stay within [0, n(n+1)/2].
        for _ in 0..50 {
            let x: Vec<f64> = (0..6).map(|_| r.normal() * 3.0).collect();
            let v = argmax_mlp(6, 0.8).unwrap().eval(&x)[0];
            assert!((0.0..=21.0 + 1e-12).contains(&v));
        }
    }

    fn constant(v: f64) -> GadgetMlp {
        GadgetMlp {
            hidden: Dense::new(Matrix::zeros(1, 2), vec![0.0]),
            out: Dense::new(Matrix::zeros(1, 1), vec![v]),
        }
    }

    #[test]
    fn choose_examples() {
        let f = interpolating_mlp(&[(vec![0.0, 1.0], vec![2.0]), (vec![1.0, 0.0], vec![-1.0])], &mut Rng::seed(7)).unwrap();
        let one = choose_function_mlp(std::slice::from_ref(&f), 1.0).unwrap();
        for x in [[0.0, 1.0], [1.0, 0.0], [0.5, 0.5]] {
            assert!((one.eval(&[1.0, x[0], x[1]])[0] - f.eval(&x)[0]).abs() < 1e-12);
        }
        let two = choose_function_mlp(&[constant(10.0), constant(20.0)], 1.0).unwrap();
        assert!((two.eval(&[1.0, 0.3, 0.2])[0] - 10.0).abs() < 1e-12);
        assert!((two.eval(&[2.0, 0.3, 0.2])[0] - 20.0).abs() < 1e-12);
    }

    #[test]
    fn choose_selects_among_random_gadgets() {
        let mut r = Rng::seed(8);
        let gadgets: Vec<GadgetMlp> = (0..3)
            .map(|_| {
                let w = Matrix::from_fn(2, 4, |_, _| r.normal() * 0.4);
                exact_linear_mlp(&w).unwrap()
            })
            .collect();
        let m = 3.0;
        let ch = choose_function_mlp(&gadgets, m).unwrap();
        assert_eq!(ch.width(), 2 * 3 * 4 + 2);
        for _ in 0..100 {
            let k = 1 + r.below(3);
            let x: Vec<f64> = (0..4).map(|_| r.uniform() * m).collect();
            let mut inp = vec![k as f64];
            inp.extend(&x);
            for (a, b) in ch.eval(&inp).iter().zip(gadgets[k - 1].eval(&x)) {
                assert!((a - b).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn exact_linear_examples() {
        let mut r = Rng::seed(9);
        let id = exact_linear_mlp(&Matrix::identity(3)).unwrap();
        let x = [0.3, -1.2, 2.0];
        assert_eq!(id.eval(&x), x.to_vec());
        assert_eq!(exact_linear_mlp(&Matrix::zeros(3, 3)).unwrap().eval(&x), vec![0.0; 3]);
        let mut w = Matrix::from_fn(4, 4, |_, _| r.normal());
        w = w.scale(1.9 / spectral_norm(&w));
        let g = exact_linear_mlp(&w).unwrap();
        assert!(spectral_norm(&g.hidden.w) <= 2.0 * 2f64.sqrt() + 1e-9);
        assert!(spectral_norm(&g.out.w) <= 2.0 * 2f64.sqrt() + 1e-9);
        for _ in 0..100 {
            let x: Vec<f64> = (0..4).map(|_| r.normal()).collect();
            for (a, b) in g.eval(&x).iter().zip(w.matvec(&x)) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
        assert!(exact_linear_mlp(&Matrix::identity(2).scale(3.0)).is_err());
    }

    proptest::proptest! {
        #[test]
        fn interpolation_hits_every_point(seed in 0u64..1000, n in 1usize..12, d in 1usize..5) {
            let mut r = Rng::seed(seed);
            let pts: Vec<(Vec<f64>, Vec<f64>)> =
                (0..n).map(|_| ((0..d).map(|_| r.normal()).collect(), vec![r.normal() * 3.0])).collect();
            let g = interpolating_mlp(&pts, &mut r).unwrap();
            proptest::prop_assert_eq!(g.width(), 2 * n);
            for (x, y) in &pts {
                proptest::prop_assert!((g.eval(x)[0] - y[0]).abs() <= 1e-9);
            }
        }

        #[test]
        fn indexing_reads_the_selected_entry(seed in 0u64..1000, n in 1usize..8) {
            let mut r = Rng::seed(seed);
            let m = 1.0 + r.uniform() * 10.0;
            let g = indexing_mlp(n, m).unwrap();
            let mut x: Vec<f64> = (0..n).map(|_| r.uniform() * m).collect();
            let y = 1 + r.below(n);
            let want = x[y - 1];
            x.push(y as f64);
            proptest::prop_assert!((g.eval(&x)[0] - want).abs() <= 1e-9);
        }
    }
}
