//! Exact minimum-cost bipartite matching (shortest augmenting paths with
//! potentials), plus a radius-capped point matcher built on top of it.

use crate::model::{vec3_dist, Vec3};

/// Minimum-cost assignment of every row to a distinct column.
///
/// `cost(i, j)` is evaluated lazily; `n` must be at most `m`. Returns the
/// column assigned to each row. Runs in `O(n^2 m)`.
pub fn min_cost_assignment(n: usize, m: usize, cost: impl Fn(usize, usize) -> f64) -> Vec<usize> {
    assert!(n <= m, "assignment needs at least as many columns as rows");
    // 1-indexed arrays; p[j] is the row matched to column j, 0 if free.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
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
        // augment along the found path
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![usize::MAX; n];
    for j in 1..=m {
        if p[j] != 0 {
            row_to_col[p[j] - 1] = j - 1;
        }
    }
    debug_assert!(row_to_col.iter().all(|&c| c != usize::MAX));
    row_to_col
}

/// Outcome of radius-capped point matching.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchResult {
    /// Matched index pairs `(left, right)`.
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_left: Vec<usize>,
    pub unmatched_right: Vec<usize>,
}

/// Matches two point sets one-to-one, first maximizing the number of pairs
/// within `radius`, then minimizing their total distance.
///
/// Implemented as a square assignment with one dummy column per left point:
/// dummy cost `M = (n + 1) * radius + 1` dominates any sum of real pair
/// distances, and pairs beyond the radius cost `10 M` so they are never
/// preferred over a dummy.
pub fn match_points(left: &[Vec3], right: &[Vec3], radius: f64) -> MatchResult {
    assert!(radius > 0.0 && radius.is_finite());
    let n = left.len();
    let m = right.len();
    if n == 0 || m == 0 {
        return MatchResult {
            pairs: Vec::new(),
            unmatched_left: (0..n).collect(),
            unmatched_right: (0..m).collect(),
        };
    }
    let dummy = (n as f64 + 1.0) * radius + 1.0;
    let forbidden = 10.0 * dummy;
    let cost = |i: usize, j: usize| {
        if j < m {
            let d = vec3_dist(left[i], right[j]);
            if d <= radius {
                d
            } else {
                forbidden
            }
        } else {
            dummy
        }
    };
    let row_to_col = min_cost_assignment(n, m + n, cost);
    let mut pairs = Vec::new();
    let mut unmatched_left = Vec::new();
    let mut right_used = vec![false; m];
    for (i, &j) in row_to_col.iter().enumerate() {
        if j < m && vec3_dist(left[i], right[j]) <= radius {
            pairs.push((i, j));
            right_used[j] = true;
        } else {
            unmatched_left.push(i);
        }
    }
    let unmatched_right = (0..m).filter(|&j| !right_used[j]).collect();
    MatchResult {
        pairs,
        unmatched_left,
        unmatched_right,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    /// Exhaustive assignment minimum over all row-to-column injections.
    fn brute_force_min(n: usize, m: usize, cost: &dyn Fn(usize, usize) -> f64) -> f64 {
        fn rec(
            i: usize,
            n: usize,
            m: usize,
            used: &mut Vec<bool>,
            cost: &dyn Fn(usize, usize) -> f64,
        ) -> f64 {
            if i == n {
                return 0.0;
            }
            let mut best = f64::INFINITY;
            for j in 0..m {
                if !used[j] {
                    used[j] = true;
                    let v = cost(i, j) + rec(i + 1, n, m, used, cost);
                    if v < best {
                        best = v;
                    }
                    used[j] = false;
                }
            }
            best
        }
        rec(0, n, m, &mut vec![false; m], cost)
    }

    #[test]
    fn matches_brute_force_on_random_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..200 {
            let n = rng.random_range(1..=6);
            let m = rng.random_range(n..=7);
            let costs: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..m).map(|_| rng.random_range(0.0..10.0)).collect())
                .collect();
            let assignment = min_cost_assignment(n, m, |i, j| costs[i][j]);
            let total: f64 = assignment.iter().enumerate().map(|(i, &j)| costs[i][j]).sum();
            let expected = brute_force_min(n, m, &|i, j| costs[i][j]);
            assert!(
                (total - expected).abs() < 1e-9,
                "trial {trial}: got {total}, brute force {expected}"
            );
            // columns must be distinct
            let mut seen = vec![false; m];
            for &j in &assignment {
                assert!(!seen[j]);
                seen[j] = true;
            }
        }
    }

    #[test]
    fn prefers_more_pairs_over_shorter_total() {
        // Greedy would grab the center point for the left row (distance 1)
        // and leave the right row unmatched; the optimum pairs both.
        let left = vec![[0.0, 0.0, 0.0], [0.0, 0.0, 2.0]];
        let right = vec![[0.0, 0.0, 1.0], [0.0, 0.0, 9.0]];
        let res = match_points(&left, &right, 10.0);
        assert_eq!(res.pairs.len(), 2);
        assert_eq!(res.pairs, vec![(0, 0), (1, 1)]);
    }

    #[test]
    fn radius_cap_leaves_far_points_unmatched() {
        let left = vec![[0.0, 0.0, 0.0], [0.0, 0.0, 100.0]];
        let right = vec![[0.0, 0.0, 1.0]];
        let res = match_points(&left, &right, 15.0);
        assert_eq!(res.pairs, vec![(0, 0)]);
        assert_eq!(res.unmatched_left, vec![1]);
        assert!(res.unmatched_right.is_empty());
    }

    #[test]
    fn empty_sides() {
        let res = match_points(&[], &[[0.0; 3]], 15.0);
        assert!(res.pairs.is_empty());
        assert_eq!(res.unmatched_right, vec![0]);
        let res = match_points(&[[0.0; 3]], &[], 15.0);
        assert!(res.pairs.is_empty());
        assert_eq!(res.unmatched_left, vec![0]);
    }

    #[test]
    fn matching_is_deterministic_under_ties() {
        // two equidistant choices: the lower column index wins
        let left = vec![[0.0; 3]];
        let right = vec![[0.0, 0.0, 1.0], [0.0, 0.0, -1.0]];
        let res = match_points(&left, &right, 15.0);
        assert_eq!(res.pairs, vec![(0, 0)]);
    }
}
