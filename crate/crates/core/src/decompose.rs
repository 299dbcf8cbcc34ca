//! Partial-tour state, sub-problem generation and solution merging.
//!
//! The partial solution is always a closed cycle over the visited nodes. A
//! sub-problem is a set of unvisited nodes gathered by breadth-first search
//! on the k-NN graph plus a contiguous fragment of the cycle; its endpoints
//! are the fragment extremes. Merging replaces the fragment by the solved
//! open path, which keeps both junction edges and yields a larger cycle.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::{OpenPath, Point, Tour, TspInstance};
use crate::spatial::{KnnGraph, NodeIndex, VisitIndex};

const NONE: usize = usize::MAX;

/// Sub-problem generation knobs, including the two generation ablations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecomposeConfig {
    /// Maximum sub-problem size (new nodes plus fragment).
    pub sub_length: usize,
    /// Maximum number of new (unvisited) nodes per sub-problem.
    pub max_new: usize,
    /// When false the fragment is reduced to the two nodes of one edge.
    pub use_fragment: bool,
    /// When false new nodes are the nearest unvisited nodes by plain distance
    /// instead of a breadth-first expansion over the k-NN graph.
    pub use_knn: bool,
}

impl Default for DecomposeConfig {
    fn default() -> Self {
        Self { sub_length: 200, max_new: 190, use_fragment: true, use_knn: true }
    }
}

impl DecomposeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_new == 0 || self.max_new + 2 > self.sub_length {
            return Err(Error::InvalidArgument(format!(
                "need 1 <= max_new <= sub_length - 2, got max_new={} sub_length={}",
                self.max_new, self.sub_length
            )));
        }
        Ok(())
    }
}

/// Closed cycle over the visited subset with O(1) neighbor lookup.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartialTour {
    succ: Vec<usize>,
    pred: Vec<usize>,
    len: usize,
    anchor: usize,
}

impl PartialTour {
    /// Degenerate two-node cycle `a -> b -> a`.
    pub fn pair(n: usize, a: NodeIndex, b: NodeIndex) -> Self {
        assert!(a != b && a < n && b < n);
        let mut succ = vec![NONE; n];
        let mut pred = vec![NONE; n];
        succ[a] = b;
        succ[b] = a;
        pred[a] = b;
        pred[b] = a;
        Self { succ, pred, len: 2, anchor: a }
    }

    /// Builds a cycle following `order`.
    pub fn from_cycle(n: usize, order: &[NodeIndex]) -> Result<Self> {
        if order.len() < 2 {
            return Err(Error::InvalidArgument("a partial tour needs 2 nodes".into()));
        }
        let mut succ = vec![NONE; n];
        let mut pred = vec![NONE; n];
        for (i, &v) in order.iter().enumerate() {
            if v >= n || succ[v] != NONE {
                return Err(Error::Validation(format!("bad or repeated node {v}")));
            }
            let w = order[(i + 1) % order.len()];
            succ[v] = w;
        }
        for &v in order {
            pred[succ[v]] = v;
        }
        Ok(Self { succ, pred, len: order.len(), anchor: order[0] })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn capacity(&self) -> usize {
        self.succ.len()
    }

    pub fn is_complete(&self) -> bool {
        self.len == self.succ.len()
    }

    #[inline]
    pub fn contains(&self, v: NodeIndex) -> bool {
        self.succ[v] != NONE
    }

    #[inline]
    pub fn succ(&self, v: NodeIndex) -> Option<NodeIndex> {
        Some(self.succ[v]).filter(|&s| s != NONE)
    }

    #[inline]
    pub fn pred(&self, v: NodeIndex) -> Option<NodeIndex> {
        Some(self.pred[v]).filter(|&s| s != NONE)
    }

    pub fn anchor(&self) -> NodeIndex {
        self.anchor
    }

    /// Visited nodes in cycle order starting from `start`.
    pub fn order_from(&self, start: NodeIndex) -> Vec<NodeIndex> {
        assert!(self.contains(start), "start node not in tour");
        let mut out = Vec::with_capacity(self.len);
        let mut v = start;
        for _ in 0..self.len {
            out.push(v);
            v = self.succ[v];
        }
        out
    }

    pub fn order(&self) -> Vec<NodeIndex> {
        self.order_from(self.anchor)
    }

    /// Closed cycle length (a two-node cycle counts its edge twice).
    pub fn length(&self, instance: &TspInstance) -> f64 {
        let mut total = 0.0;
        let mut v = self.anchor;
        for _ in 0..self.len {
            let w = self.succ[v];
            total += instance.cost(v, w);
            v = w;
        }
        total
    }

    /// Walks the cycle and checks that it is a single loop over exactly the
    /// member set with consistent predecessor links.
    pub fn validate(&self) -> Result<()> {
        let members = self.succ.iter().filter(|&&s| s != NONE).count();
        if members != self.len {
            return Err(Error::Validation(format!("{members} linked nodes, len {}", self.len)));
        }
        let mut v = self.anchor;
        for step in 0..self.len {
            let w = self.succ[v];
            if w == NONE || self.pred[w] != v {
                return Err(Error::Validation(format!("broken link at {v} (step {step})")));
            }
            v = w;
            if v == self.anchor && step + 1 != self.len {
                return Err(Error::Validation("cycle closes early".into()));
            }
        }
        if v != self.anchor {
            return Err(Error::Validation("cycle does not close".into()));
        }
        Ok(())
    }

    /// Contiguous segment of `min(old_length, len)` nodes around `center`,
    /// with `(L - 1) / 2` predecessors before it, in tour orientation.
    pub fn select_fragment(&self, center: NodeIndex, old_length: usize) -> Result<Vec<NodeIndex>> {
        if !self.contains(center) {
            return Err(Error::Validation(format!("fragment center {center} is not visited")));
        }
        let size = old_length.max(2).min(self.len);
        let mut start = center;
        for _ in 0..(size - 1) / 2 {
            start = self.pred[start];
        }
        let mut out = Vec::with_capacity(size);
        let mut v = start;
        for _ in 0..size {
            out.push(v);
            v = self.succ[v];
        }
        Ok(out)
    }

    /// Complete tour oriented from `start`.
    pub fn to_tour(&self, start: NodeIndex) -> Result<Tour> {
        if !self.is_complete() {
            return Err(Error::Validation(format!(
                "tour covers {} of {} nodes",
                self.len,
                self.capacity()
            )));
        }
        Ok(Tour::new(self.order_from(start)))
    }
}

/// Node subset with fixed endpoints handed to a lower-level solver.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubProblem {
    /// Fragment nodes (in tour order) followed by the new nodes.
    pub nodes: Vec<NodeIndex>,
    pub source: NodeIndex,
    pub target: NodeIndex,
    pub fragment_len: usize,
}

impl SubProblem {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn fragment(&self) -> &[NodeIndex] {
        &self.nodes[..self.fragment_len]
    }

    pub fn new_nodes(&self) -> &[NodeIndex] {
        &self.nodes[self.fragment_len..]
    }

    /// A standalone sub-problem (no fragment semantics): `nodes` must contain
    /// both endpoints.
    pub fn standalone(nodes: Vec<NodeIndex>, source: NodeIndex, target: NodeIndex) -> Result<Self> {
        if source == target || !nodes.contains(&source) || !nodes.contains(&target) {
            return Err(Error::InvalidArgument("endpoints must be distinct members".into()));
        }
        let mut rest: Vec<NodeIndex> =
            nodes.into_iter().filter(|&v| v != source && v != target).collect();
        let mut all = vec![source, target];
        all.append(&mut rest);
        Ok(Self { nodes: all, source, target, fragment_len: 2 })
    }

    /// Checks that `path` is a source→target Hamiltonian path over `nodes`.
    pub fn check_path(&self, path: &OpenPath) -> Result<()> {
        if path.order.len() != self.nodes.len() {
            return Err(Error::Validation(format!(
                "path has {} nodes, sub-problem has {}",
                path.order.len(),
                self.nodes.len()
            )));
        }
        let mut a = path.order.clone();
        let mut b = self.nodes.clone();
        a.sort_unstable();
        b.sort_unstable();
        if a != b {
            return Err(Error::Validation("path node set differs from sub-problem".into()));
        }
        if a.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Validation("path repeats a node".into()));
        }
        if path.source() != self.source || path.target() != self.target {
            return Err(Error::Validation(format!(
                "path runs {}→{}, expected {}→{}",
                path.source(),
                path.target(),
                self.source,
                self.target
            )));
        }
        Ok(())
    }
}

/// Replaces the sub-problem's fragment inside `tour` with `path`.
pub fn merge_subsolution(tour: &mut PartialTour, sub: &SubProblem, path: &OpenPath) -> Result<()> {
    sub.check_path(path)?;
    let frag = sub.fragment();
    // The fragment must still be a contiguous run of the cycle.
    for w in frag.windows(2) {
        if tour.succ(w[0]) != Some(w[1]) {
            return Err(Error::Validation("fragment is not contiguous in the tour".into()));
        }
    }
    if sub.new_nodes().iter().any(|&v| tour.contains(v)) {
        return Err(Error::Validation("sub-problem new node already visited".into()));
    }
    let before = tour.pred[frag[0]];
    let after = tour.succ[frag[frag.len() - 1]];
    for w in path.order.windows(2) {
        tour.succ[w[0]] = w[1];
        tour.pred[w[1]] = w[0];
    }
    let (first, last) = (path.source(), path.target());
    tour.pred[first] = before;
    tour.succ[before] = first;
    tour.succ[last] = after;
    tour.pred[after] = last;
    tour.len += sub.new_nodes().len();
    Ok(())
}

/// Upper-level reward `L(before) - L(after)`.
pub fn step_reward(instance: &TspInstance, before: &PartialTour, after: &PartialTour) -> f64 {
    before.length(instance) - after.length(instance)
}

/// Drives one hierarchical construction: owns the partial tour and the
/// visitation index, produces sub-problems for chosen coordinates and merges
/// their solutions back.
#[derive(Debug, Clone)]
pub struct Decomposer<'a> {
    instance: &'a TspInstance,
    knn: &'a KnnGraph,
    config: DecomposeConfig,
    tour: PartialTour,
    index: VisitIndex,
    stamp: Vec<u32>,
    epoch: u32,
}

impl<'a> Decomposer<'a> {
    /// Starts from the depot and its nearest neighbor as a two-node cycle.
    pub fn new(instance: &'a TspInstance, knn: &'a KnnGraph, config: DecomposeConfig) -> Result<Self> {
        config.validate()?;
        if knn.len() != instance.n() {
            return Err(Error::InvalidArgument("k-NN graph built for another instance".into()));
        }
        let depot = instance.depot();
        let first = knn.neighbors(depot)[0];
        let mut index = VisitIndex::new(instance);
        index.mark_visited(depot);
        index.mark_visited(first);
        Ok(Self {
            instance,
            knn,
            config,
            tour: PartialTour::pair(instance.n(), depot, first),
            index,
            stamp: vec![0; instance.n()],
            epoch: 0,
        })
    }

    pub fn instance(&self) -> &'a TspInstance {
        self.instance
    }

    pub fn config(&self) -> &DecomposeConfig {
        &self.config
    }

    pub fn tour(&self) -> &PartialTour {
        &self.tour
    }

    pub fn visits(&self) -> &VisitIndex {
        &self.index
    }

    pub fn is_complete(&self) -> bool {
        self.tour.is_complete()
    }

    /// Sub-problem for the upper-level action `coord`.
    pub fn generate(&mut self, coord: Point) -> Result<SubProblem> {
        if self.is_complete() {
            return Err(Error::EmptyDomain("tour already complete"));
        }
        let cfg = self.config;
        let center = self.index.nearest_unvisited(coord)?;
        let anchor = self.index.nearest_visited(center)?;

        let new_nodes = if cfg.use_knn {
            self.bfs_new_nodes(anchor, center, cfg.max_new)
        } else {
            self.index.k_nearest_unvisited(self.instance.point(anchor), cfg.max_new)
        };
        let old_length = if cfg.use_fragment { cfg.sub_length - new_nodes.len() } else { 2 };
        let fragment = self.tour.select_fragment(anchor, old_length)?;
        let (source, target) = (fragment[0], fragment[fragment.len() - 1]);
        let fragment_len = fragment.len();
        let mut nodes = fragment;
        nodes.extend_from_slice(&new_nodes);
        Ok(SubProblem { nodes, source, target, fragment_len })
    }

    fn bfs_new_nodes(&mut self, anchor: NodeIndex, center: NodeIndex, max_new: usize) -> Vec<NodeIndex> {
        self.epoch += 1;
        let epoch = self.epoch;
        let mut out = Vec::with_capacity(max_new);
        let mut queue = std::collections::VecDeque::new();
        queue.push_back(anchor);
        self.stamp[anchor] = epoch;
        let mut seeded = false;
        loop {
            while let Some(v) = queue.pop_front() {
                for &w in self.knn.neighbors(v) {
                    if out.len() == max_new {
                        return out;
                    }
                    if self.stamp[w] != epoch && !self.index.is_visited(w) {
                        self.stamp[w] = epoch;
                        queue.push_back(w);
                        out.push(w);
                    }
                }
            }
            // Anchor neighborhood exhausted without any new node: restart
            // from the chosen unvisited node itself.
            if !out.is_empty() || seeded {
                return out;
            }
            seeded = true;
            self.stamp[center] = epoch;
            out.push(center);
            queue.push_back(center);
        }
    }

    /// Splices a solved path into the tour and returns the step reward.
    pub fn merge(&mut self, sub: &SubProblem, path: &OpenPath) -> Result<f64> {
        let before = self.tour.length(self.instance);
        merge_subsolution(&mut self.tour, sub, path)?;
        for &v in sub.new_nodes() {
            self.index.mark_visited(v);
        }
        Ok(before - self.tour.length(self.instance))
    }

    /// Finished tour starting at the depot.
    pub fn into_tour(self) -> Result<Tour> {
        self.tour.to_tour(self.instance.depot())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::generate_uniform;
    use crate::spatial::build_knn;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn identity_path(sub: &SubProblem) -> OpenPath {
        // Fragment stays in place, new nodes go between its first two nodes.
        let mut order = vec![sub.source];
        order.extend_from_slice(sub.new_nodes());
        order.extend_from_slice(&sub.fragment()[1..]);
        OpenPath::new(order)
    }

    #[test]
    fn fragment_centering() {
        // a..e = 0..4
        let t = PartialTour::from_cycle(5, &[0, 1, 2, 3, 4]).unwrap();
        assert_eq!(t.select_fragment(2, 3).unwrap(), vec![1, 2, 3]);
        assert_eq!(t.select_fragment(2, 4).unwrap(), vec![1, 2, 3, 4]);
        assert_eq!(t.select_fragment(0, 2).unwrap(), vec![0, 1]);
        assert_eq!(t.select_fragment(0, 3).unwrap(), vec![4, 0, 1]);
        // clamped to the whole cycle
        assert_eq!(t.select_fragment(2, 99).unwrap(), vec![0, 1, 2, 3, 4]);
        let big = PartialTour::from_cycle(9, &[0, 1, 2, 3, 4]).unwrap();
        assert!(big.select_fragment(7, 3).is_err());
    }

    #[test]
    fn init_uses_nearest_neighbor_of_depot() {
        let inst = TspInstance::new(
            vec![Point::new(0.0, 0.0), Point::new(1.0, 1.0), Point::new(0.1, 0.0)],
            0,
        )
        .unwrap();
        let knn = build_knn(&inst, 40).unwrap();
        let d = Decomposer::new(&inst, &knn, DecomposeConfig::default()).unwrap();
        assert_eq!(d.tour().order(), vec![0, 2]);
        assert!((d.tour().length(&inst) - 0.2).abs() < 1e-15);

        let big = generate_uniform(1000, 17).unwrap();
        let knn = build_knn(&big, 40).unwrap();
        let d = Decomposer::new(&big, &knn, DecomposeConfig::default()).unwrap();
        let scan = (1..1000)
            .min_by(|&a, &b| big.cost(0, a).partial_cmp(&big.cost(0, b)).unwrap())
            .unwrap();
        assert_eq!(d.tour().order(), vec![0, scan]);
    }

    #[test]
    fn two_nodes_complete_immediately() {
        let inst = generate_uniform(2, 1).unwrap();
        let knn = build_knn(&inst, 40).unwrap();
        let mut d = Decomposer::new(&inst, &knn, DecomposeConfig::default()).unwrap();
        assert!(d.is_complete());
        assert!(d.generate(Point::new(0.5, 0.5)).is_err());
        assert_eq!(d.into_tour().unwrap().order.len(), 2);
    }

    #[test]
    fn first_subproblem_respects_max_new() {
        let inst = generate_uniform(1000, 5).unwrap();
        let knn = build_knn(&inst, 40).unwrap();
        let mut d = Decomposer::new(&inst, &knn, DecomposeConfig::default()).unwrap();
        let sub = d.generate(Point::new(0.3, 0.7)).unwrap();
        assert_eq!(sub.new_nodes().len(), 190);
        assert_eq!(sub.fragment().len(), 2);
        assert!(sub.len() <= 200);
        let path = identity_path(&sub);
        d.merge(&sub, &path).unwrap();
        assert_eq!(d.tour().len(), 192);
        d.tour().validate().unwrap();
    }

    #[test]
    fn isolated_cluster_exhausts_bfs() {
        // 20 visited nodes along the bottom, 5 unvisited nodes in a far corner.
        let mut pts: Vec<Point> = (0..20).map(|i| Point::new(i as f64 / 20.0, 0.0)).collect();
        for i in 0..5 {
            pts.push(Point::new(0.95 + i as f64 * 0.01, 1.0));
        }
        let inst = TspInstance::new(pts, 0).unwrap();
        let knn = build_knn(&inst, 4).unwrap();
        let cfg = DecomposeConfig { sub_length: 12, max_new: 10, ..Default::default() };
        let mut d = Decomposer::new(&inst, &knn, cfg).unwrap();
        // Visit the whole bottom row first.
        while (0..20).any(|i| !d.visits().is_visited(i)) {
            let sub = d.generate(Point::new(0.5, 0.0)).unwrap();
            let p = identity_path(&sub);
            d.merge(&sub, &p).unwrap();
        }
        assert!((20..25).all(|i| !d.visits().is_visited(i)));
        let sub = d.generate(Point::new(1.0, 1.0)).unwrap();
        // the nearest visited node's k-NN holds only bottom-row nodes, so the
        // expansion restarts from the corner and collects the whole cluster
        assert_eq!(sub.new_nodes().len(), 5);
        assert_eq!(sub.fragment().len(), 7);
        let p = identity_path(&sub);
        d.merge(&sub, &p).unwrap();
        assert!(d.is_complete());
    }

    /// Independent restatement of the breadth-first expansion.
    fn reference_bfs(
        inst: &TspInstance,
        knn: &KnnGraph,
        visited: &[bool],
        coord: Point,
        max_new: usize,
    ) -> Vec<usize> {
        let n = inst.n();
        let argmin = |f: &dyn Fn(usize) -> bool, p: Point| {
            (0..n)
                .filter(|&j| f(j))
                .min_by(|&a, &b| {
                    (p.dist2(&inst.point(a)), a).partial_cmp(&(p.dist2(&inst.point(b)), b)).unwrap()
                })
                .unwrap()
        };
        let vc = argmin(&|j| !visited[j], coord);
        let vb = argmin(&|j| visited[j] && j != vc, inst.point(vc));
        let mut sel = visited.to_vec();
        let mut out = vec![];
        let mut q = std::collections::VecDeque::from([vb]);
        'outer: while let Some(v) = q.pop_front() {
            for &w in knn.neighbors(v) {
                if out.len() == max_new {
                    break 'outer;
                }
                if !sel[w] {
                    sel[w] = true;
                    q.push_back(w);
                    out.push(w);
                }
            }
        }
        out
    }

    #[test]
    fn subproblems_match_reference_bfs_mid_solve() {
        let inst = generate_uniform(1000, 23).unwrap();
        let knn = build_knn(&inst, 40).unwrap();
        let mut d = Decomposer::new(&inst, &knn, DecomposeConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        while !d.is_complete() {
            let coord = Point::new(rng.gen(), rng.gen());
            let visited: Vec<bool> = (0..1000).map(|i| d.visits().is_visited(i)).collect();
            let want = reference_bfs(&inst, &knn, &visited, coord, 190);
            let sub = d.generate(coord).unwrap();
            if !want.is_empty() {
                assert_eq!(sub.new_nodes(), &want[..]);
            }
            assert!(sub.len() <= 200);
            let p = identity_path(&sub);
            d.merge(&sub, &p).unwrap();
            d.tour().validate().unwrap();
        }
        let tour = d.into_tour().unwrap();
        tour.validate(1000).unwrap();
        assert_eq!(tour.order[0], 0);
    }

    #[test]
    fn identity_splice_and_rewards() {
        let inst = generate_uniform(30, 2).unwrap();
        let mut t = PartialTour::from_cycle(30, &[0, 3, 7, 9, 12]).unwrap();
        let before = t.clone();
        let sub = SubProblem { nodes: vec![3, 7, 9], source: 3, target: 9, fragment_len: 3 };
        merge_subsolution(&mut t, &sub, &OpenPath::new(vec![3, 7, 9])).unwrap();
        assert_eq!(t, before);
        assert_eq!(step_reward(&inst, &before, &t), 0.0);

        // insert 20 between 7 and 9 and reverse the middle
        let sub = SubProblem { nodes: vec![3, 7, 9, 20], source: 3, target: 9, fragment_len: 3 };
        merge_subsolution(&mut t, &sub, &OpenPath::new(vec![3, 20, 7, 9])).unwrap();
        t.validate().unwrap();
        assert_eq!(t.order_from(0), vec![0, 3, 20, 7, 9, 12]);
        let r = step_reward(&inst, &before, &t);
        let expect = inst.cycle_cost(&[0, 3, 7, 9, 12]) - inst.cycle_cost(&[0, 3, 20, 7, 9, 12]);
        assert!((r - expect).abs() < 1e-12);
    }

    #[test]
    fn merge_rejects_bad_paths() {
        let mut t = PartialTour::from_cycle(10, &[0, 1, 2, 3]).unwrap();
        let sub = SubProblem { nodes: vec![1, 2, 5], source: 1, target: 2, fragment_len: 2 };
        assert!(merge_subsolution(&mut t, &sub, &OpenPath::new(vec![1, 2, 5])).is_err());
        assert!(merge_subsolution(&mut t, &sub, &OpenPath::new(vec![1, 6, 2])).is_err());
        assert!(merge_subsolution(&mut t, &sub, &OpenPath::new(vec![1, 5, 5, 2])).is_err());
        merge_subsolution(&mut t, &sub, &OpenPath::new(vec![1, 5, 2])).unwrap();
        assert_eq!(t.order_from(0), vec![0, 1, 5, 2, 3]);
    }

    #[test]
    fn whole_cycle_fragment_closes() {
        let mut t = PartialTour::pair(6, 0, 4);
        let frag = t.select_fragment(4, 10).unwrap();
        assert_eq!(frag, vec![4, 0]);
        let sub = SubProblem { nodes: vec![4, 0, 1, 2], source: 4, target: 0, fragment_len: 2 };
        merge_subsolution(&mut t, &sub, &OpenPath::new(vec![4, 2, 1, 0])).unwrap();
        t.validate().unwrap();
        assert_eq!(t.order_from(0), vec![0, 4, 2, 1]);
    }

    #[test]
    fn ablated_generation_modes() {
        let inst = generate_uniform(500, 31).unwrap();
        let knn = build_knn(&inst, 40).unwrap();
        for (use_fragment, use_knn) in [(false, true), (true, false), (false, false)] {
            let cfg = DecomposeConfig { use_fragment, use_knn, ..Default::default() };
            let mut d = Decomposer::new(&inst, &knn, cfg).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            while !d.is_complete() {
                let sub = d.generate(Point::new(rng.gen(), rng.gen())).unwrap();
                if !use_fragment {
                    assert_eq!(sub.fragment().len(), 2);
                }
                let p = identity_path(&sub);
                d.merge(&sub, &p).unwrap();
            }
            d.into_tour().unwrap().validate(500).unwrap();
        }
    }

    proptest! {
        #[test]
        fn fragment_is_contiguous_and_holds_center(
            len in 2usize..40, center_pick in 0usize..1000, want in 2usize..50, seed in 0u64..1000
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut order: Vec<usize> = (0..60).collect();
            for i in (1..60).rev() {
                order.swap(i, rng.gen_range(0..=i));
            }
            order.truncate(len);
            let t = PartialTour::from_cycle(60, &order).unwrap();
            let center = order[center_pick % len];
            let frag = t.select_fragment(center, want).unwrap();
            prop_assert_eq!(frag.len(), want.min(len));
            prop_assert!(frag.contains(&center));
            for w in frag.windows(2) {
                prop_assert_eq!(t.succ(w[0]), Some(w[1]));
            }
            let pos = frag.iter().position(|&v| v == center).unwrap();
            prop_assert_eq!(pos, (frag.len() - 1) / 2);
        }

        #[test]
        fn rewards_telescope(seed in 0u64..200, n in 3usize..300) {
            let inst = generate_uniform(n, seed).unwrap();
            let knn = build_knn(&inst, 10).unwrap();
            let cfg = DecomposeConfig { sub_length: 12, max_new: 8, ..Default::default() };
            let mut d = Decomposer::new(&inst, &knn, cfg).unwrap();
            let init = d.tour().length(&inst);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut total = 0.0;
            while !d.is_complete() {
                let sub = d.generate(Point::new(rng.gen(), rng.gen())).unwrap();
                prop_assert!(sub.new_nodes().len() >= 1);
                let p = identity_path(&sub);
                total += d.merge(&sub, &p).unwrap();
                d.tour().validate().unwrap();
            }
            let tour = d.into_tour().unwrap();
            let fin = inst.cycle_cost(&tour.order);
            prop_assert!((total - (init - fin)).abs() < 1e-9);
        }
    }
}
