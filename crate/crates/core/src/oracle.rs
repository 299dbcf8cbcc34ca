//! Exact Held-Karp solvers for small closed tours and fixed-endpoint paths.
//!
//! Both run a backward bitmask DP (`cost-to-go[mask][last]`) and rebuild the
//! solution forwards, always taking the lowest-index successor whose value
//! matches the optimum. That makes the result the lexicographically smallest
//! optimal order, up to a 1e-9 tolerance on floating ties.

use crate::decompose::SubProblem;
use crate::error::{Error, Result};
use crate::instance::{OpenPath, Tour, TspInstance};

/// Largest node count accepted by the exact solvers.
pub const MAX_EXACT_NODES: usize = 16;

const TIE_EPS: f64 = 1e-9;

/// Minimum-cost order over `interior` starting at `start` and ending at `end`
/// (`end == start` gives a cycle). Returns the interior visiting order.
fn solve(dist: &dyn Fn(usize, usize) -> f64, start: usize, end: usize, interior: &[usize]) -> Vec<usize> {
    let m = interior.len();
    if m == 0 {
        return Vec::new();
    }
    let full = (1usize << m) - 1;
    // go[mask * m + j]: cheapest way to finish from interior[j] once `mask`
    // (which includes j) has been visited.
    let mut go = vec![f64::INFINITY; (full + 1) * m];
    for j in 0..m {
        go[full * m + j] = dist(interior[j], end);
    }
    for mask in (1..full).rev() {
        for j in 0..m {
            if mask >> j & 1 == 0 {
                continue;
            }
            let mut best = f64::INFINITY;
            for k in 0..m {
                if mask >> k & 1 == 1 {
                    continue;
                }
                let c = dist(interior[j], interior[k]) + go[(mask | 1 << k) * m + k];
                if c < best {
                    best = c;
                }
            }
            go[mask * m + j] = best;
        }
    }

    let mut order = Vec::with_capacity(m);
    let mut mask = 0usize;
    let mut cur = start;
    for _ in 0..m {
        // candidates sorted by node id so the first near-optimal one wins
        let mut cands: Vec<(usize, usize)> =
            (0..m).filter(|&k| mask >> k & 1 == 0).map(|k| (interior[k], k)).collect();
        cands.sort_unstable();
        let value = |k: usize| dist(cur, interior[k]) + go[(mask | 1 << k) * m + k];
        let best = cands.iter().map(|&(_, k)| value(k)).fold(f64::INFINITY, f64::min);
        let &(node, k) = cands
            .iter()
            .find(|&&(_, k)| value(k) <= best + TIE_EPS)
            .expect("some candidate attains the minimum");
        order.push(node);
        mask |= 1 << k;
        cur = node;
    }
    order
}

/// Optimal closed tour. Node 0 is fixed first to quotient out rotations.
pub fn held_karp_tour(instance: &TspInstance) -> Result<(Tour, f64)> {
    let n = instance.n();
    if n > MAX_EXACT_NODES {
        return Err(Error::TooLarge { n, limit: MAX_EXACT_NODES });
    }
    let interior: Vec<usize> = (1..n).collect();
    let mut order = vec![0];
    order.extend(solve(&|a, b| instance.cost(a, b), 0, 0, &interior));
    let len = instance.cycle_cost(&order);
    Ok((Tour::new(order), len))
}

/// Optimal source→target Hamiltonian path over the sub-problem's nodes.
pub fn held_karp_path(sub: &SubProblem, instance: &TspInstance) -> Result<(OpenPath, f64)> {
    let m = sub.len();
    if m > MAX_EXACT_NODES {
        return Err(Error::TooLarge { n: m, limit: MAX_EXACT_NODES });
    }
    let interior: Vec<usize> =
        sub.nodes.iter().copied().filter(|&v| v != sub.source && v != sub.target).collect();
    let mut order = vec![sub.source];
    order.extend(solve(&|a, b| instance.cost(a, b), sub.source, sub.target, &interior));
    order.push(sub.target);
    let len = instance.path_cost(&order);
    Ok((OpenPath::new(order), len))
}
