//! Dense linear assignment (Jonker–Volgenant shortest augmenting path).
//!
//! Column reduction, reduction transfer and two rounds of augmenting row
//! reduction seed the dual prices; the remaining free rows are augmented one
//! at a time with a Dijkstra scan over reduced costs. Exact up to floating
//! point rounding.

const NONE: usize = usize::MAX;

/// Solves min Σ_i cost[i, σ(i)] over permutations σ for a row-major `n × n`
/// matrix. Returns `row_to_col`.
pub fn solve(n: usize, cost: &[f64]) -> Vec<usize> {
    assert_eq!(cost.len(), n * n, "cost matrix must be n x n");
    match n {
        0 => return Vec::new(),
        1 => return vec![0],
        _ => {}
    }
    let c = |i: usize, j: usize| cost[i * n + j];

    let mut v = vec![0.0f64; n];
    let mut rowsol = vec![NONE; n];
    let mut colsol = vec![NONE; n];
    let mut matches = vec![0u32; n];

    // Column reduction, scanning columns in reverse.
    for j in (0..n).rev() {
        let mut min = c(0, j);
        let mut imin = 0;
        for i in 1..n {
            let h = c(i, j);
            if h < min {
                min = h;
                imin = i;
            }
        }
        v[j] = min;
        matches[imin] += 1;
        if matches[imin] == 1 {
            rowsol[imin] = j;
            colsol[j] = imin;
        } else if v[j] < v[rowsol[imin]] {
            let j1 = rowsol[imin];
            rowsol[imin] = j;
            colsol[j] = imin;
            colsol[j1] = NONE;
        } else {
            colsol[j] = NONE;
        }
    }

    // Reduction transfer.
    let mut free = Vec::with_capacity(n);
    for i in 0..n {
        if matches[i] == 0 {
            free.push(i);
        } else if matches[i] == 1 {
            let j1 = rowsol[i];
            let mut min = f64::INFINITY;
            for j in 0..n {
                if j != j1 {
                    let h = c(i, j) - v[j];
                    if h < min {
                        min = h;
                    }
                }
            }
            v[j1] -= min;
        }
    }

    // Augmenting row reduction, two passes. The step budget guards against
    // float-induced cycling; rows left over go to the augmentation phase.
    let mut budget = 64 * n + 1024;
    for _ in 0..2 {
        let prev = free.len();
        let mut k = 0;
        let mut kept = 0;
        while k < prev {
            if budget == 0 {
                // Carry unprocessed rows over.
                for idx in k..prev {
                    free[kept] = free[idx];
                    kept += 1;
                }
                break;
            }
            budget -= 1;
            let i = free[k];
            k += 1;
            let mut umin = c(i, 0) - v[0];
            let mut j1 = 0;
            let mut j2 = NONE;
            let mut usubmin = f64::INFINITY;
            for j in 1..n {
                let h = c(i, j) - v[j];
                if h < usubmin {
                    if h >= umin {
                        usubmin = h;
                        j2 = j;
                    } else {
                        usubmin = umin;
                        umin = h;
                        j2 = j1;
                        j1 = j;
                    }
                }
            }
            let mut i0 = colsol[j1];
            if umin < usubmin {
                v[j1] -= usubmin - umin;
            } else if i0 != NONE && j2 != NONE {
                j1 = j2;
                i0 = colsol[j2];
            }
            rowsol[i] = j1;
            colsol[j1] = i;
            if i0 != NONE {
                if umin < usubmin {
                    k -= 1;
                    free[k] = i0;
                } else {
                    free[kept] = i0;
                    kept += 1;
                }
            }
        }
        free.truncate(kept);
        if budget == 0 {
            break;
        }
    }

    // Augmentation.
    let mut d = vec![0.0f64; n];
    let mut pred = vec![0usize; n];
    let mut collist: Vec<usize> = (0..n).collect();
    for &freerow in &free {
        for j in 0..n {
            d[j] = c(freerow, j) - v[j];
            pred[j] = freerow;
            collist[j] = j;
        }
        let mut low = 0usize;
        let mut up = 0usize;
        let mut last = 0usize; // number of columns whose distance is final
        let mut min = 0.0;
        let mut endofpath = NONE;
        loop {
            if up == low {
                last = low;
                min = d[collist[up]];
                up += 1;
                // The scan range is fixed at entry; `up` only tracks the
                // minimum block inside it.
                #[allow(clippy::mut_range_bound)]
                for k in up..n {
                    let j = collist[k];
                    let h = d[j];
                    if h <= min {
                        if h < min {
                            up = low;
                            min = h;
                        }
                        collist[k] = collist[up];
                        collist[up] = j;
                        up += 1;
                    }
                }
                for &j in &collist[low..up] {
                    if colsol[j] == NONE {
                        endofpath = j;
                        break;
                    }
                }
            }
            if endofpath != NONE {
                break;
            }
            let j1 = collist[low];
            low += 1;
            let i = colsol[j1];
            let h = c(i, j1) - v[j1] - min;
            let mut k = up;
            while k < n {
                let j = collist[k];
                let v2 = c(i, j) - v[j] - h;
                if v2 < d[j] {
                    pred[j] = i;
                    if v2 == min {
                        if colsol[j] == NONE {
                            endofpath = j;
                            break;
                        }
                        collist[k] = collist[up];
                        collist[up] = j;
                        up += 1;
                    }
                    d[j] = v2;
                }
                k += 1;
            }
            if endofpath != NONE {
                break;
            }
        }
        for &j1 in &collist[..last] {
            v[j1] += d[j1] - min;
        }
        loop {
            let i = pred[endofpath];
            colsol[endofpath] = i;
            std::mem::swap(&mut endofpath, &mut rowsol[i]);
            if i == freerow {
                break;
            }
        }
    }
    rowsol
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// O(n^3) Hungarian method with potentials; independent reference.
    fn hungarian(n: usize, cost: &[f64]) -> f64 {
        let inf = f64::INFINITY;
        let mut u = vec![0.0; n + 1];
        let mut v = vec![0.0; n + 1];
        let mut p = vec![0usize; n + 1];
        let mut way = vec![0usize; n + 1];
        for i in 1..=n {
            p[0] = i;
            let mut j0 = 0;
            let mut minv = vec![inf; n + 1];
            let mut used = vec![false; n + 1];
            loop {
                used[j0] = true;
                let i0 = p[j0];
                let mut delta = inf;
                let mut j1 = 0;
                for j in 1..=n {
                    if !used[j] {
                        let cur = cost[(i0 - 1) * n + j - 1] - u[i0] - v[j];
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
        (1..=n).map(|j| cost[(p[j] - 1) * n + j - 1]).sum()
    }

    fn total(n: usize, cost: &[f64], sol: &[usize]) -> f64 {
        sol.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum()
    }

    fn is_permutation(sol: &[usize]) -> bool {
        let mut seen = vec![false; sol.len()];
        sol.iter().all(|&j| j < sol.len() && !std::mem::replace(&mut seen[j], true))
    }

    #[test]
    fn agrees_with_hungarian_on_random_dense_costs() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..60 {
            let n = 1 + trial % 40;
            let cost: Vec<f64> = (0..n * n).map(|_| rng.random::<f64>()).collect();
            let sol = solve(n, &cost);
            assert!(is_permutation(&sol));
            let reference = hungarian(n, &cost);
            assert!((total(n, &cost, &sol) - reference).abs() < 1e-9, "n = {n}");
        }
    }

    #[test]
    fn handles_ties_and_integer_costs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in [2, 3, 5, 17, 64] {
            let cost: Vec<f64> = (0..n * n).map(|_| rng.random_range(0..4) as f64).collect();
            let sol = solve(n, &cost);
            assert!(is_permutation(&sol));
            assert_eq!(total(n, &cost, &sol), hungarian(n, &cost));
        }
        let zeros = vec![0.0; 36];
        assert!(is_permutation(&solve(6, &zeros)));
    }

    #[test]
    fn zero_diagonal_gives_identity() {
        let n = 9;
        let cost: Vec<f64> = (0..n * n)
            .map(|k| ((k / n) as f64 - (k % n) as f64).abs())
            .collect();
        assert_eq!(solve(n, &cost), (0..n).collect::<Vec<_>>());
    }
}
