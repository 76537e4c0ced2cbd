//! Subset sums: exact meet-in-the-middle for small pools, branch-and-bound
//! with a node budget otherwise.

use crate::error::{approx, Result};

/// Pools up to this size are solved exactly.
pub const EXACT_LIMIT: usize = 24;
/// Node budget of the branch-and-bound search.
pub const SEARCH_BUDGET: usize = 10_000;

/// Indices (ascending) whose values sum to `target` within `eps`.
pub fn subset_sum_select(pool: &[f64], target: f64, eps: f64) -> Result<Vec<usize>> {
    let (idx, err) = subset_sum_best(pool, target, eps, SEARCH_BUDGET);
    if err <= eps {
        Ok(idx)
    } else {
        approx(format!("best subset misses target {target} by {err:e} (tolerance {eps:e}, pool of {})", pool.len()))
    }
}

/// Best subset found, stopping early once the error is at most `stop`.
/// Returns sorted indices and `|Σ − target|`.
pub fn subset_sum_best(pool: &[f64], target: f64, stop: f64, budget: usize) -> (Vec<usize>, f64) {
    if target.abs() <= stop {
        return (vec![], target.abs());
    }
    let pos: f64 = pool.iter().filter(|&&v| v > 0.0).sum();
    let neg: f64 = pool.iter().filter(|&&v| v < 0.0).sum();
    if target > pos + stop || target < neg - stop {
        // Clamp to the nearest reachable extreme.
        let take: Vec<usize> = (0..pool.len()).filter(|&i| if target > 0.0 { pool[i] > 0.0 } else { pool[i] < 0.0 }).collect();
        let s: f64 = take.iter().map(|&i| pool[i]).sum();
        return (take, (s - target).abs());
    }
    let (mut idx, err) = if pool.len() <= EXACT_LIMIT { meet_in_middle(pool, target) } else { branch_and_bound(pool, target, stop, budget) };
    idx.sort_unstable();
    (idx, err)
}

fn all_sums(vals: &[(usize, f64)]) -> Vec<(f64, u32)> {
    let n = vals.len();
    let mut out = Vec::with_capacity(1 << n);
    for mask in 0u32..(1u32 << n) {
        let s = (0..n).filter(|&b| mask >> b & 1 == 1).map(|b| vals[b].1).sum();
        out.push((s, mask));
    }
    out
}

fn meet_in_middle(pool: &[f64], target: f64) -> (Vec<usize>, f64) {
    let items: Vec<(usize, f64)> = pool.iter().copied().enumerate().collect();
    let (left, right) = items.split_at(items.len() / 2);
    let ls = all_sums(left);
    let mut rs = all_sums(right);
    rs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut best = (f64::INFINITY, 0u32, 0u32);
    for &(s, lm) in &ls {
        let want = target - s;
        let at = rs.partition_point(|x| x.0 < want);
        for j in [at.wrapping_sub(1), at] {
            if let Some(&(r, rm)) = rs.get(j) {
                let err = (s + r - target).abs();
                if err < best.0 {
                    best = (err, lm, rm);
                }
            }
        }
    }
    let mut idx: Vec<usize> = (0..left.len()).filter(|&b| best.1 >> b & 1 == 1).map(|b| left[b].0).collect();
    idx.extend((0..right.len()).filter(|&b| best.2 >> b & 1 == 1).map(|b| right[b].0));
    (idx, best.0)
}

struct Search<'a> {
    vals: &'a [(usize, f64)],
    /// Sums of positive / negative values from position `i` on.
    pos_tail: Vec<f64>,
    neg_tail: Vec<f64>,
    stop: f64,
    nodes: usize,
    budget: usize,
    chosen: Vec<usize>,
    best: (f64, Vec<usize>),
}

impl Search<'_> {
    fn run(&mut self, i: usize, residual: f64) {
        let err = residual.abs();
        if err < self.best.0 {
            self.best = (err, self.chosen.clone());
        }
        if self.best.0 <= self.stop || i == self.vals.len() || self.nodes >= self.budget {
            return;
        }
        // The rest of the pool can move the sum within [neg_tail, pos_tail].
        if residual - self.best.0 > self.pos_tail[i] || residual + self.best.0 < self.neg_tail[i] {
            return;
        }
        self.nodes += 1;
        let (id, v) = self.vals[i];
        let take_first = (residual - v).abs() < err;
        for take in [take_first, !take_first] {
            if take {
                self.chosen.push(id);
                self.run(i + 1, residual - v);
                self.chosen.pop();
            } else {
                self.run(i + 1, residual);
            }
            if self.best.0 <= self.stop || self.nodes >= self.budget {
                return;
            }
        }
    }
}

/// Greedy descent on the residual (largest magnitudes first) with
/// backtracking until `budget` nodes are spent.
fn branch_and_bound(pool: &[f64], target: f64, stop: f64, budget: usize) -> (Vec<usize>, f64) {
    let mut vals: Vec<(usize, f64)> = pool.iter().copied().enumerate().filter(|(_, v)| *v != 0.0).collect();
    vals.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()));
    let n = vals.len();
    let mut pos_tail = vec![0.0; n + 1];
    let mut neg_tail = vec![0.0; n + 1];
    for i in (0..n).rev() {
        pos_tail[i] = pos_tail[i + 1] + vals[i].1.max(0.0);
        neg_tail[i] = neg_tail[i + 1] + vals[i].1.min(0.0);
    }
    let mut s = Search { vals: &vals, pos_tail, neg_tail, stop, nodes: 0, budget, chosen: vec![], best: (target.abs(), vec![]) };
    s.run(0, target);
    (s.best.1, s.best.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    #[test]
    fn examples() {
        assert_eq!(subset_sum_select(&[0.5, -0.3, 0.2], 0.7, 1e-12).unwrap(), vec![0, 2]);
        assert_eq!(subset_sum_select(&[0.5, -0.3, 0.2], 0.0, 1e-12).unwrap(), Vec::<usize>::new());
        assert!(matches!(subset_sum_select(&[0.1, 0.2], 5.0, 1e-3), Err(crate::Error::Approximation(_))));
    }

    #[test]
    fn exact_search_finds_the_optimum() {
        let mut r = Rng::seed(3);
        for _ in 0..20 {
            let pool: Vec<f64> = (0..14).map(|_| r.uniform_in(-1.0, 1.0)).collect();
            let target = r.uniform_in(-1.0, 1.0);
            let (idx, err) = subset_sum_best(&pool, target, 0.0, SEARCH_BUDGET);
            let brute = (0u32..1 << 14)
                .map(|m| ((0..14).filter(|&b| m >> b & 1 == 1).map(|b| pool[b]).sum::<f64>() - target).abs())
                .fold(f64::INFINITY, f64::min);
            assert!((err - brute).abs() <= 1e-12);
            let s: f64 = idx.iter().map(|&i| pool[i]).sum();
            assert!(((s - target).abs() - err).abs() <= 1e-12);
        }
    }

    #[test]
    fn large_pools_succeed() {
        let mut ok = 0;
        for seed in 0..100 {
            let mut r = Rng::seed(seed);
            let pool: Vec<f64> = (0..200).map(|_| r.uniform_in(-1.0, 1.0)).collect();
            if let Ok(idx) = subset_sum_select(&pool, 0.37, 1e-3) {
                let s: f64 = idx.iter().map(|&i| pool[i]).sum();
                assert!((s - 0.37).abs() <= 1e-3);
                ok += 1;
            }
        }
        assert!(ok >= 99, "{ok}/100");
    }
}
