//! Reference tours for benchmarking.
//!
//! Nearest-neighbor construction followed by 2-opt and Or-opt local search
//! over k-NN candidate lists with don't-look bits, then an iterated local
//! search with segment-swap kicks. It only exists to produce strong
//! reference tours for gap reporting on instances far beyond exact reach;
//! the hierarchical solver never calls it.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::instance::{Tour, TspInstance};
use crate::spatial::{build_knn, KnnGraph, VisitIndex};

#[derive(Debug, Clone, Copy)]
pub struct ReferenceConfig {
    pub candidates: usize,
    /// Number of perturbation rounds after the first local optimum.
    pub kicks: usize,
    pub seed: u64,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        Self { candidates: 10, kicks: 0, seed: 0 }
    }
}

const EPS: f64 = 1e-10;

struct Search<'a> {
    inst: &'a TspInstance,
    knn: KnnGraph,
    order: Vec<usize>,
    pos: Vec<usize>,
    queue: VecDeque<usize>,
    queued: Vec<bool>,
    scratch: Vec<usize>,
}

impl<'a> Search<'a> {
    fn n(&self) -> usize {
        self.order.len()
    }

    #[inline]
    fn d(&self, a: usize, b: usize) -> f64 {
        self.inst.cost(a, b)
    }

    #[inline]
    fn succ(&self, v: usize) -> usize {
        self.order[(self.pos[v] + 1) % self.n()]
    }

    #[inline]
    fn pred(&self, v: usize) -> usize {
        self.order[(self.pos[v] + self.n() - 1) % self.n()]
    }

    fn push(&mut self, v: usize) {
        if !self.queued[v] {
            self.queued[v] = true;
            self.queue.push_back(v);
        }
    }

    fn reindex(&mut self) {
        for (i, &v) in self.order.iter().enumerate() {
            self.pos[v] = i;
        }
    }

    /// Reverses the cyclic run from node `from` forward to node `to`
    /// (or its complement, which yields the same cycle).
    fn reverse(&mut self, from: usize, to: usize) {
        let n = self.n();
        let (mut i, mut j) = (self.pos[from], self.pos[to]);
        let mut len = (j + n - i) % n + 1;
        if 2 * len > n {
            let (ni, nj) = ((j + 1) % n, (i + n - 1) % n);
            i = ni;
            j = nj;
            len = n - len;
        }
        for _ in 0..len / 2 {
            self.order.swap(i, j);
            self.pos[self.order[i]] = i;
            self.pos[self.order[j]] = j;
            i = (i + 1) % n;
            j = (j + n - 1) % n;
        }
    }

    fn try_two_opt(&mut self, a: usize) -> bool {
        for dir in 0..2 {
            let an = if dir == 0 { self.succ(a) } else { self.pred(a) };
            let base = self.d(a, an);
            for idx in 0..self.knn.neighbors(a).len() {
                let c = self.knn.neighbors(a)[idx];
                let g1 = base - self.d(a, c);
                if g1 <= EPS {
                    break;
                }
                let cn = if dir == 0 { self.succ(c) } else { self.pred(c) };
                if cn == a || c == an {
                    continue;
                }
                let gain = g1 + self.d(c, cn) - self.d(an, cn);
                if gain > EPS {
                    if dir == 0 {
                        self.reverse(an, c);
                    } else {
                        self.reverse(a, cn);
                    }
                    for v in [a, an, c, cn] {
                        self.push(v);
                    }
                    return true;
                }
            }
        }
        false
    }

    /// Moves a segment of 1..=3 nodes starting at `a` next to a candidate.
    fn try_or_opt(&mut self, a: usize) -> bool {
        let n = self.n();
        for seg_len in 1..=3usize {
            if n < seg_len + 4 {
                break;
            }
            let first = a;
            let last = self.order[(self.pos[a] + seg_len - 1) % n];
            let p = self.pred(first);
            let nx = self.succ(last);
            let removal = self.d(p, first) + self.d(last, nx) - self.d(p, nx);
            if removal <= EPS {
                continue;
            }
            let in_seg = |s: &Self, v: usize| (s.pos[v] + n - s.pos[first]) % n < seg_len;
            for end in [first, last] {
                for idx in 0..self.knn.neighbors(end).len() {
                    let c = self.knn.neighbors(end)[idx];
                    if self.d(end, c) >= removal {
                        break;
                    }
                    if in_seg(self, c) {
                        continue;
                    }
                    for (u, w) in [(c, self.succ(c)), (self.pred(c), c)] {
                        if in_seg(self, u) || in_seg(self, w) {
                            continue;
                        }
                        let base = self.d(u, w);
                        let fwd = self.d(u, first) + self.d(last, w) - base;
                        let rev = self.d(u, last) + self.d(first, w) - base;
                        let (add, reversed) = if rev < fwd { (rev, true) } else { (fwd, false) };
                        if removal - add > EPS {
                            self.move_segment(first, seg_len, u, reversed);
                            for v in [p, nx, first, last, u, w] {
                                self.push(v);
                            }
                            return true;
                        }
                    }
                }
            }
        }
        false
    }

    /// Rebuilds the order as `nx .. u, segment, w .. p`.
    fn move_segment(&mut self, first: usize, seg_len: usize, u: usize, reversed: bool) {
        let n = self.n();
        let start = self.pos[first];
        let mut seg: Vec<usize> = (0..seg_len).map(|i| self.order[(start + i) % n]).collect();
        if reversed {
            seg.reverse();
        }
        self.scratch.clear();
        let mut i = (start + seg_len) % n;
        loop {
            let v = self.order[i];
            self.scratch.push(v);
            if v == u {
                break;
            }
            i = (i + 1) % n;
        }
        self.scratch.extend_from_slice(&seg);
        let mut i = (self.pos[u] + 1) % n;
        while i != start {
            self.scratch.push(self.order[i]);
            i = (i + 1) % n;
        }
        std::mem::swap(&mut self.order, &mut self.scratch);
        self.reindex();
    }

    fn local_search(&mut self) {
        while let Some(a) = self.queue.pop_front() {
            self.queued[a] = false;
            if self.try_two_opt(a) || self.try_or_opt(a) {
                self.push(a);
            }
        }
    }

    fn length(&self) -> f64 {
        self.inst.cycle_cost(&self.order)
    }
}

fn nearest_neighbor_order(instance: &TspInstance) -> Vec<usize> {
    let mut idx = VisitIndex::new(instance);
    let mut cur = instance.depot();
    idx.mark_visited(cur);
    let mut order = vec![cur];
    while order.len() < instance.n() {
        cur = idx.nearest_unvisited(instance.point(cur)).expect("unvisited nodes remain");
        idx.mark_visited(cur);
        order.push(cur);
    }
    order
}

/// Builds a reference tour starting at the depot.
pub fn reference_tour(instance: &TspInstance, cfg: &ReferenceConfig) -> Result<Tour> {
    let n = instance.n();
    let order = nearest_neighbor_order(instance);
    if n < 5 {
        return Ok(Tour::new(order));
    }
    let mut s = Search {
        inst: instance,
        knn: build_knn(instance, cfg.candidates)?,
        order,
        pos: vec![0; n],
        queue: (0..n).collect(),
        queued: vec![true; n],
        scratch: Vec::with_capacity(n),
    };
    s.reindex();
    s.local_search();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best = s.order.clone();
    let mut best_len = s.length();
    let window = 50.min(n / 2).max(4);
    for _ in 0..cfg.kicks {
        // segment swap A B C D -> A C B D inside a local window
        let i = rng.gen_range(0..n);
        let mut cuts = [rng.gen_range(1..window), rng.gen_range(1..window), rng.gen_range(1..window)];
        cuts.sort_unstable();
        if cuts[0] == cuts[1] || cuts[1] == cuts[2] {
            continue;
        }
        let rot: Vec<usize> = (0..n).map(|k| s.order[(i + k) % n]).collect();
        let (a, b, c) = (cuts[0], cuts[1], cuts[2]);
        let mut next = Vec::with_capacity(n);
        next.extend_from_slice(&rot[..a]);
        next.extend_from_slice(&rot[b..c]);
        next.extend_from_slice(&rot[a..b]);
        next.extend_from_slice(&rot[c..]);
        s.order = next;
        s.reindex();
        for k in [0, a - 1, a, b - 1, b, c - 1, c % n, n - 1] {
            s.push(rot[k]);
        }
        s.local_search();
        let len = s.length();
        if len < best_len - EPS {
            best_len = len;
            best.clone_from(&s.order);
        } else {
            s.order.clone_from(&best);
            s.reindex();
        }
    }
    let start = best.iter().position(|&v| v == instance.depot()).expect("depot present");
    best.rotate_left(start);
    Ok(Tour::new(best))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::generate_uniform;
    use crate::oracle::held_karp_tour;

    #[test]
    fn valid_and_close_to_optimal_on_small_instances() {
        let mut total_gap = 0.0;
        for seed in 0..20 {
            let inst = generate_uniform(12, seed).unwrap();
            let t = reference_tour(&inst, &ReferenceConfig { kicks: 50, ..Default::default() }).unwrap();
            t.validate(12).unwrap();
            assert_eq!(t.order[0], 0);
            let (_, opt) = held_karp_tour(&inst).unwrap();
            let len = inst.cycle_cost(&t.order);
            assert!(len >= opt - 1e-9);
            total_gap += (len - opt) / opt;
        }
        assert!(total_gap / 20.0 < 0.01, "mean gap {}", total_gap / 20.0);
    }

    #[test]
    fn large_instance_quality() {
        let inst = generate_uniform(1000, 1).unwrap();
        let nn = nearest_neighbor_order(&inst);
        let t = reference_tour(&inst, &ReferenceConfig { kicks: 2000, ..Default::default() }).unwrap();
        t.validate(1000).unwrap();
        let len = inst.cycle_cost(&t.order);
        // well below nearest neighbor and near the asymptotic 0.7124 * sqrt(n * A)
        assert!(len < 0.85 * inst.cycle_cost(&nn));
        assert!(len < 0.7124 * (1000f64).sqrt() * 1.08, "{len}");
    }

    #[test]
    fn tiny_instances() {
        for n in 2..6 {
            let inst = generate_uniform(n, 3).unwrap();
            reference_tour(&inst, &ReferenceConfig::default()).unwrap().validate(n).unwrap();
        }
    }
}
