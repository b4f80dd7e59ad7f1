//! Dense Hungarian (Kuhn-Munkres / Jonker-Volgenant style) assignment.
//!
//! Shortest-augmenting-path formulation with row/column potentials, O(n³) on a
//! dense cost matrix. Exact up to f64 arithmetic, which is what the transport
//! oracles need.

/// Minimum-cost perfect matching on an n×n cost matrix (row-major).
/// Returns (assignment row → column, total cost).
pub fn solve(cost: &[f64], n: usize) -> (Vec<usize>, f64) {
    assert_eq!(cost.len(), n * n, "cost matrix must be n×n");
    if n == 0 {
        return (Vec::new(), 0.0);
    }
    // 1-based potentials; p[j] = row matched to column j, 0 = unmatched.
    let mut u = vec![0.0_f64; n + 1];
    let mut v = vec![0.0_f64; n + 1];
    let mut p = vec![0_usize; n + 1];
    let mut way = vec![0_usize; n + 1];

    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0_usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0_usize;
            for j in 1..=n {
                if !used[j] {
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

    let mut row_to_col = vec![0_usize; n];
    for j in 1..=n {
        if p[j] > 0 {
            row_to_col[p[j] - 1] = j - 1;
        }
    }
    let total: f64 = (0..n).map(|i| cost[i * n + row_to_col[i]]).sum();
    (row_to_col, total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_force(cost: &[f64], n: usize) -> f64 {
        fn permute(rest: &mut Vec<usize>, chosen: &mut Vec<usize>, best: &mut f64, cost: &[f64], n: usize) {
            if rest.is_empty() {
                let c: f64 = chosen.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum();
                if c < *best {
                    *best = c;
                }
                return;
            }
            for k in 0..rest.len() {
                let j = rest.remove(k);
                chosen.push(j);
                permute(rest, chosen, best, cost, n);
                chosen.pop();
                rest.insert(k, j);
            }
        }
        let mut best = f64::INFINITY;
        permute(&mut (0..n).collect(), &mut Vec::new(), &mut best, cost, n);
        best
    }

    #[test]
    fn matches_brute_force_on_random_matrices() {
        use rand::Rng;
        let mut rng = crate::rng::seeded(17);
        for n in 1..=6 {
            for _ in 0..20 {
                let cost: Vec<f64> = (0..n * n).map(|_| rng.gen_range(0.0..10.0)).collect();
                let (asg, total) = solve(&cost, n);
                let mut sorted = asg.clone();
                sorted.sort_unstable();
                assert_eq!(sorted, (0..n).collect::<Vec<_>>());
                let expect = brute_force(&cost, n);
                assert!((total - expect).abs() < 1e-12, "n={n}: {total} vs {expect}");
            }
        }
    }
}
