//! Exact linear-assignment solver: shortest augmenting path with dual
//! potentials (Jonker-Volgenant style), O(n³) worst case, exact on f64
//! costs with no scaling or regularization.

use crate::error::{Error, Result};

/// Solve the square assignment problem on a row-major cost matrix.
/// Returns `perm` with row i matched to column `perm[i]`, minimizing the
/// total cost.
pub fn solve_square(n: usize, cost: &[f64]) -> Result<Vec<usize>> {
    if cost.len() != n * n {
        return Err(Error::Shape(format!(
            "cost matrix must have {}x{} entries, got {}",
            n,
            n,
            cost.len()
        )));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    if cost.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite assignment cost".into()));
    }

    const UNSET: usize = usize::MAX;
    let mut u = vec![0.0f64; n]; // row potentials
    let mut v = vec![0.0f64; n]; // column potentials
    let mut col4row = vec![UNSET; n];
    let mut row4col = vec![UNSET; n];
    let mut shortest = vec![0.0f64; n];
    let mut path = vec![UNSET; n];
    let mut remaining = vec![0usize; n];
    let mut in_sr = vec![false; n];
    let mut in_sc = vec![false; n];

    for cur_row in 0..n {
        for x in shortest.iter_mut() {
            *x = f64::INFINITY;
        }
        for x in in_sr.iter_mut() {
            *x = false;
        }
        for x in in_sc.iter_mut() {
            *x = false;
        }
        for (idx, r) in remaining.iter_mut().enumerate() {
            *r = idx;
        }
        let mut n_remaining = n;
        let mut min_val = 0.0f64;
        let mut i = cur_row;
        let sink;
        loop {
            in_sr[i] = true;
            let row = &cost[i * n..(i + 1) * n];
            let mut lowest = f64::INFINITY;
            let mut index = UNSET;
            for it in 0..n_remaining {
                let j = remaining[it];
                let r = min_val + row[j] - u[i] - v[j];
                if r < shortest[j] {
                    path[j] = i;
                    shortest[j] = r;
                }
                // prefer an unassigned sink on ties so augmentation terminates
                if shortest[j] < lowest
                    || (shortest[j] == lowest && row4col[j] == UNSET)
                {
                    lowest = shortest[j];
                    index = it;
                }
            }
            min_val = lowest;
            if !min_val.is_finite() {
                return Err(Error::Numeric("assignment problem infeasible".into()));
            }
            let j = remaining[index];
            if row4col[j] == UNSET {
                sink = j;
                break;
            }
            i = row4col[j];
            in_sc[j] = true;
            n_remaining -= 1;
            remaining.swap(index, n_remaining);
        }

        u[cur_row] += min_val;
        for r in 0..n {
            if in_sr[r] && r != cur_row {
                u[r] += min_val - shortest[col4row[r]];
            }
        }
        for j in 0..n {
            if in_sc[j] {
                v[j] -= min_val - shortest[j];
            }
        }

        let mut j = sink;
        loop {
            let r = path[j];
            row4col[j] = r;
            std::mem::swap(&mut col4row[r], &mut j);
            if r == cur_row {
                break;
            }
        }
    }
    Ok(col4row)
}

/// Total cost of a permutation on a row-major cost matrix.
pub fn permutation_cost(n: usize, cost: &[f64], perm: &[usize]) -> f64 {
    perm.iter()
        .enumerate()
        .map(|(i, &j)| cost[i * n + j])
        .sum()
}

/// Exhaustive minimum over all permutations; for oracle tests only (n ≤ 8).
pub fn brute_force_min(n: usize, cost: &[f64]) -> f64 {
    assert!(n <= 8, "factorial brute force limited to n <= 8");
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = f64::INFINITY;
    permute(&mut perm, 0, &mut |p| {
        let c = permutation_cost(n, cost, p);
        if c < best {
            best = c;
        }
    });
    best
}

fn permute(perm: &mut Vec<usize>, k: usize, visit: &mut impl FnMut(&[usize])) {
    if k == perm.len() {
        visit(perm);
        return;
    }
    for i in k..perm.len() {
        perm.swap(k, i);
        permute(perm, k + 1, visit);
        perm.swap(k, i);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn two_by_two() {
        // diagonal costs 0+0=0 beat the off-diagonal 1+1
        let cost = vec![0.0, 1.0, 1.0, 0.0];
        let perm = solve_square(2, &cost).unwrap();
        assert_eq!(perm, vec![0, 1]);
    }

    #[test]
    fn forced_permutation() {
        let cost = vec![
            10.0, 0.0, 10.0, //
            10.0, 10.0, 0.0, //
            0.0, 10.0, 10.0,
        ];
        let perm = solve_square(3, &cost).unwrap();
        assert_eq!(perm, vec![1, 2, 0]);
    }

    #[test]
    fn matches_brute_force_on_random_instances() {
        let mut rng = crate::rng::SeedStream::new(55).rng("lap", 0);
        for n in [2usize, 3, 4, 5, 6] {
            for _ in 0..30 {
                let cost: Vec<f64> = (0..n * n).map(|_| rng.gen_range(0.0..10.0)).collect();
                let perm = solve_square(n, &cost).unwrap();
                // valid permutation
                let mut seen = vec![false; n];
                for &j in &perm {
                    assert!(!seen[j]);
                    seen[j] = true;
                }
                let got = permutation_cost(n, &cost, &perm);
                let want = brute_force_min(n, &cost);
                assert!((got - want).abs() <= 1e-10, "n={n}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn handles_ties() {
        let cost = vec![1.0; 16];
        let perm = solve_square(4, &cost).unwrap();
        let mut seen = vec![false; 4];
        for &j in &perm {
            assert!(!seen[j]);
            seen[j] = true;
        }
        assert_eq!(permutation_cost(4, &cost, &perm), 4.0);
    }

    #[test]
    fn rejects_non_finite() {
        assert!(solve_square(1, &[f64::NAN]).is_err());
    }
}
