//! Transportation problem with arbitrary weights, solved as min-cost flow by
//! successive shortest paths on the complete bipartite graph.
//!
//! Dijkstra runs on reduced costs (Johnson potentials) over the dense
//! residual graph: forward arcs i→j always exist, backward arcs j→i exist
//! while flow is positive.

const MASS_TOL: f64 = 1e-15;

/// Returns the dense flow matrix (row-major `n × m`).
pub fn solve(supply: &[f64], demand: &[f64], cost: &[f64]) -> Vec<f64> {
    let n = supply.len();
    let m = demand.len();
    assert_eq!(cost.len(), n * m);
    let c = |i: usize, j: usize| cost[i * m + j];

    let mut flow = vec![0.0f64; n * m];
    let mut sup = supply.to_vec();
    let mut dem = demand.to_vec();
    let mut pot_s = vec![0.0f64; n];
    let mut pot_t = vec![0.0f64; m];

    let mut dist_s = vec![0.0f64; n];
    let mut dist_t = vec![0.0f64; m];
    let mut done_s = vec![false; n];
    let mut done_t = vec![false; m];
    // pred_t[j] = source reached j; pred_s[i] = sink whose backward arc reached i
    let mut pred_t = vec![usize::MAX; m];
    let mut pred_s = vec![usize::MAX; n];

    loop {
        if !sup.iter().any(|&s| s > MASS_TOL) || !dem.iter().any(|&d| d > MASS_TOL) {
            break;
        }
        for i in 0..n {
            dist_s[i] = if sup[i] > MASS_TOL { 0.0 } else { f64::INFINITY };
            done_s[i] = false;
            pred_s[i] = usize::MAX;
        }
        for j in 0..m {
            dist_t[j] = f64::INFINITY;
            done_t[j] = false;
            pred_t[j] = usize::MAX;
        }
        let target = loop {
            // Pick the closest unsettled node; sources win ties, then lower index.
            let mut best = f64::INFINITY;
            let mut pick: Option<(bool, usize)> = None;
            for i in 0..n {
                if !done_s[i] && dist_s[i] < best {
                    best = dist_s[i];
                    pick = Some((true, i));
                }
            }
            for j in 0..m {
                if !done_t[j] && dist_t[j] < best {
                    best = dist_t[j];
                    pick = Some((false, j));
                }
            }
            let Some((is_source, u)) = pick else {
                break None;
            };
            if is_source {
                done_s[u] = true;
                for j in 0..m {
                    if done_t[j] {
                        continue;
                    }
                    let rc = (c(u, j) + pot_s[u] - pot_t[j]).max(0.0);
                    let nd = best + rc;
                    if nd < dist_t[j] {
                        dist_t[j] = nd;
                        pred_t[j] = u;
                    }
                }
            } else {
                done_t[u] = true;
                if dem[u] > MASS_TOL {
                    break Some(u);
                }
                for i in 0..n {
                    if done_s[i] || flow[i * m + u] <= MASS_TOL {
                        continue;
                    }
                    let rc = (-c(i, u) + pot_t[u] - pot_s[i]).max(0.0);
                    let nd = best + rc;
                    if nd < dist_s[i] {
                        dist_s[i] = nd;
                        pred_s[i] = u;
                    }
                }
            }
        };
        let Some(target) = target else { break };
        let bound = dist_t[target];
        for i in 0..n {
            pot_s[i] += dist_s[i].min(bound);
        }
        for j in 0..m {
            pot_t[j] += dist_t[j].min(bound);
        }

        // Bottleneck along the alternating path.
        let mut delta = dem[target];
        let mut j = target;
        let start = loop {
            let i = pred_t[j];
            match pred_s[i] {
                usize::MAX => break i,
                jb => {
                    delta = delta.min(flow[i * m + jb]);
                    j = jb;
                }
            }
        };
        delta = delta.min(sup[start]);

        let mut j = target;
        loop {
            let i = pred_t[j];
            flow[i * m + j] += delta;
            match pred_s[i] {
                usize::MAX => break,
                jb => {
                    flow[i * m + jb] -= delta;
                    if flow[i * m + jb] < MASS_TOL {
                        flow[i * m + jb] = 0.0;
                    }
                    j = jb;
                }
            }
        }
        sup[start] -= delta;
        dem[target] -= delta;
    }
    flow
}
