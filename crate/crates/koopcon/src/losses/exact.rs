//! Unregularized optimal transport for tiny balanced instances.
//!
//! With uniform weights and n == n' the OT polytope's vertices are
//! permutation matrices, so the exact optimum is a minimum-cost perfect
//! matching. Solved by the O(n^3) Hungarian algorithm. This is reference
//! machinery for validating the entropic solver, not a training path;
//! instance size is capped accordingly.

use crate::error::{Error, Result};
use crate::losses::sinkhorn::squared_dist_matrix;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const MAX_ORACLE_POINTS: usize = 10;

/// Exact OT objective between equal-sized uniform point clouds:
/// `min_perm (1/n) sum_i ||y_i - y'_perm(i)||^2`.
pub fn exact_ot_oracle<S: Scalar>(y: &Tensor<S>, yp: &Tensor<S>) -> Result<f64> {
    let (sy, sp) = (y.shape(), yp.shape());
    if sy.len() != 2 || sp.len() != 2 || sy[1] != sp[1] {
        return Err(Error::shape("exact_ot_oracle", sy, sp));
    }
    if sy[0] != sp[0] {
        return Err(Error::contract(
            "exact_ot_oracle",
            "point clouds must have equal cardinality",
        ));
    }
    let n = sy[0];
    if n == 0 || n > MAX_ORACLE_POINTS {
        return Err(Error::contract(
            "exact_ot_oracle",
            format!("supports 1..={MAX_ORACLE_POINTS} points, got {n}"),
        ));
    }
    let cost_t = squared_dist_matrix(y, yp)?;
    let cost: Vec<f64> = cost_t.data().iter().map(|c| c.as_f64()).collect();
    let (total, _) = assignment_min_cost(&cost, n);
    Ok(total / n as f64)
}

/// Minimum-cost perfect matching on a dense n x n cost matrix (row-major).
/// Returns the total cost and the assigned column for each row.
pub(crate) fn assignment_min_cost(cost: &[f64], n: usize) -> (f64, Vec<usize>) {
    debug_assert_eq!(cost.len(), n * n);
    // Hungarian algorithm in the potentials/augmenting-path form. Arrays are
    // 1-based; index 0 is the virtual unmatched column.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut p = vec![0usize; n + 1]; // p[j]: row matched to column j, 0 = free
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0usize; n];
    for j in 1..=n {
        if p[j] > 0 {
            assign[p[j] - 1] = j - 1;
        }
    }
    let total = (0..n).map(|i| cost[i * n + assign[i]]).sum();
    (total, assign)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    /// Ground truth by trying every permutation.
    fn brute_force(cost: &[f64], n: usize) -> f64 {
        fn rec(cost: &[f64], n: usize, row: usize, used: &mut [bool], acc: f64, best: &mut f64) {
            if row == n {
                *best = best.min(acc);
                return;
            }
            for j in 0..n {
                if !used[j] {
                    used[j] = true;
                    rec(cost, n, row + 1, used, acc + cost[row * n + j], best);
                    used[j] = false;
                }
            }
        }
        let mut best = f64::INFINITY;
        rec(cost, n, 0, &mut vec![false; n], 0.0, &mut best);
        best
    }

    #[test]
    fn matching_agrees_with_exhaustive_enumeration() {
        let mut rng = Rng::new(31);
        for n in 1..=7 {
            for _ in 0..20 {
                let cost: Vec<f64> = (0..n * n).map(|_| rng.range(0.0, 10.0)).collect();
                let (got, assign) = assignment_min_cost(&cost, n);
                let want = brute_force(&cost, n);
                assert!((got - want).abs() < 1e-9, "n={n}: {got} vs {want}");
                let mut seen = vec![false; n];
                for &j in &assign {
                    assert!(!seen[j], "assignment must be a permutation");
                    seen[j] = true;
                }
                let recomputed: f64 = (0..n).map(|i| cost[i * n + assign[i]]).sum();
                assert!((recomputed - got).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn crossing_pairs_resolve_to_the_identity_matching() {
        // Cost [[0,1],[1,0]]: picking the diagonal costs 0.
        let y = Tensor::from_vec(&[2, 1], vec![0.0f64, 1.0]).expect("y");
        let yp = Tensor::from_vec(&[2, 1], vec![0.0, 1.0]).expect("yp");
        assert_eq!(exact_ot_oracle(&y, &yp).expect("oracle"), 0.0);
    }

    #[test]
    fn anti_identity_costs_force_the_swap() {
        let y = Tensor::from_vec(&[2, 1], vec![0.0f64, 1.0]).expect("y");
        let yp = Tensor::from_vec(&[2, 1], vec![1.0, 0.0]).expect("yp");
        // Swapped matching is free; identity would cost (1 + 1)/2.
        assert_eq!(exact_ot_oracle(&y, &yp).expect("oracle"), 0.0);
    }

    #[test]
    fn oracle_normalizes_by_cardinality() {
        // {0,1} vs {2,3}: best matching 0->2, 1->3, cost (4+4)/2 = 4.
        let y = Tensor::from_vec(&[2, 1], vec![0.0f64, 1.0]).expect("y");
        let yp = Tensor::from_vec(&[2, 1], vec![2.0, 3.0]).expect("yp");
        assert!((exact_ot_oracle(&y, &yp).expect("oracle") - 4.0).abs() < 1e-12);
    }

    #[test]
    fn oracle_rejects_out_of_scope_instances() {
        let y = Tensor::<f64>::zeros(&[11, 2]);
        assert!(exact_ot_oracle(&y, &y.clone()).is_err(), "too many points");
        let a = Tensor::<f64>::zeros(&[3, 2]);
        let b = Tensor::<f64>::zeros(&[4, 2]);
        assert!(exact_ot_oracle(&a, &b).is_err(), "unbalanced clouds");
    }
}
