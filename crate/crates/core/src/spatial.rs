//! Exact k-NN graph and visitation-aware nearest-node queries.
//!
//! Both structures bucket the unit square into a uniform grid and search
//! rings of cells outwards from the query, stopping once the ring's lower
//! distance bound exceeds the current answer. Ties are always broken towards
//! the lower node index.

use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::instance::{Point, TspInstance};

pub type NodeIndex = usize;

/// Per-node lists of the `k` nearest other nodes, ascending by distance.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnGraph {
    k: usize,
    neighbors: Vec<Vec<NodeIndex>>,
}

impl KnnGraph {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn neighbors(&self, i: NodeIndex) -> &[NodeIndex] {
        &self.neighbors[i]
    }

    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }
}

/// Bit set over node indices with a cached population count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VisitMask {
    words: Vec<u64>,
    len: usize,
    count: usize,
}

impl VisitMask {
    pub fn new(len: usize) -> Self {
        Self { words: vec![0; len.div_ceil(64)], len, count: 0 }
    }

    #[inline]
    pub fn contains(&self, i: NodeIndex) -> bool {
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    /// Sets bit `i`; returns whether it was newly set.
    pub fn insert(&mut self, i: NodeIndex) -> bool {
        let w = &mut self.words[i / 64];
        let bit = 1u64 << (i % 64);
        if *w & bit != 0 {
            return false;
        }
        *w |= bit;
        self.count += 1;
        true
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn is_full(&self) -> bool {
        self.count == self.len
    }
}

#[derive(Debug, Clone, Copy)]
struct Grid {
    side: usize,
    cell: f64,
}

impl Grid {
    fn for_count(n: usize, per_cell: f64) -> Self {
        let side = ((n as f64 / per_cell).sqrt().ceil() as usize).clamp(1, 1024);
        Self { side, cell: 1.0 / side as f64 }
    }

    #[inline]
    fn coord(&self, v: f64) -> usize {
        ((v * self.side as f64) as isize).clamp(0, self.side as isize - 1) as usize
    }

    #[inline]
    fn cell_of(&self, p: &Point) -> (usize, usize) {
        (self.coord(p.x), self.coord(p.y))
    }

    #[inline]
    fn id(&self, cx: usize, cy: usize) -> usize {
        cy * self.side + cx
    }

    /// Lower bound on the distance from `p` to any cell in ring `r` around
    /// the cell `(cx, cy)` (ring 0 is the cell itself).
    fn ring_bound(&self, p: &Point, (cx, cy): (usize, usize), r: usize) -> f64 {
        if r == 0 {
            return 0.0;
        }
        let lo_x = p.x - cx as f64 * self.cell;
        let hi_x = (cx + 1) as f64 * self.cell - p.x;
        let lo_y = p.y - cy as f64 * self.cell;
        let hi_y = (cy + 1) as f64 * self.cell - p.y;
        let margin = lo_x.min(hi_x).min(lo_y).min(hi_y).max(0.0);
        ((r - 1) as f64 * self.cell + margin - 1e-12).max(0.0)
    }

    /// Calls `f` with each in-bounds cell id of ring `r`.
    fn ring(&self, (cx, cy): (usize, usize), r: usize, mut f: impl FnMut(usize)) {
        let (cx, cy, r, s) = (cx as isize, cy as isize, r as isize, self.side as isize);
        let inb = |v: isize| (0..s).contains(&v);
        if r == 0 {
            f(self.id(cx as usize, cy as usize));
            return;
        }
        for x in (cx - r)..=(cx + r) {
            if !inb(x) {
                continue;
            }
            for y in [cy - r, cy + r] {
                if inb(y) {
                    f(self.id(x as usize, y as usize));
                }
            }
        }
        for y in (cy - r + 1)..=(cy + r - 1) {
            if !inb(y) {
                continue;
            }
            for x in [cx - r, cx + r] {
                if inb(x) {
                    f(self.id(x as usize, y as usize));
                }
            }
        }
    }

    fn max_ring(&self) -> usize {
        self.side
    }
}

#[derive(PartialEq, PartialOrd)]
struct Cand(f64, NodeIndex);

impl Eq for Cand {}

impl Ord for Cand {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.partial_cmp(other).expect("finite distances")
    }
}

/// Builds the exact k-NN graph of an instance.
pub fn build_knn(instance: &TspInstance, k: usize) -> Result<KnnGraph> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let n = instance.n();
    let k_eff = k.min(n - 1);
    let pts = instance.nodes();
    let grid = Grid::for_count(n, 2.0);
    let mut buckets = vec![Vec::<u32>::new(); grid.side * grid.side];
    for (i, p) in pts.iter().enumerate() {
        let (cx, cy) = grid.cell_of(p);
        buckets[grid.id(cx, cy)].push(i as u32);
    }

    let mut neighbors = Vec::with_capacity(n);
    let mut heap: BinaryHeap<Cand> = BinaryHeap::with_capacity(k_eff + 1);
    for (i, p) in pts.iter().enumerate() {
        heap.clear();
        let home = grid.cell_of(p);
        for r in 0..=grid.max_ring() {
            if heap.len() == k_eff {
                let lb = grid.ring_bound(p, home, r);
                if lb * lb > heap.peek().expect("non-empty").0 {
                    break;
                }
            }
            grid.ring(home, r, |cell| {
                for &j in &buckets[cell] {
                    let j = j as usize;
                    if j == i {
                        continue;
                    }
                    let c = Cand(p.dist2(&pts[j]), j);
                    if heap.len() < k_eff {
                        heap.push(c);
                    } else if c < *heap.peek().expect("non-empty") {
                        heap.pop();
                        heap.push(c);
                    }
                }
            });
        }
        let mut list: Vec<Cand> = heap.drain().collect();
        list.sort_unstable();
        neighbors.push(list.into_iter().map(|c| c.1).collect());
    }
    Ok(KnnGraph { k: k_eff, neighbors })
}

/// Grid bucket index that keeps visited and unvisited nodes in separate
/// per-cell lists, so nearest queries restricted to either state only touch
/// matching nodes.
#[derive(Debug, Clone)]
pub struct VisitIndex {
    points: Vec<Point>,
    grid: Grid,
    mask: VisitMask,
    /// `cells[state][cell]` where state 0 = unvisited, 1 = visited.
    cells: [Vec<Vec<u32>>; 2],
    /// Position of each node inside its current cell list.
    slot: Vec<u32>,
    cell_of: Vec<u32>,
}

impl VisitIndex {
    /// All nodes start unvisited.
    pub fn new(instance: &TspInstance) -> Self {
        let n = instance.n();
        let grid = Grid::for_count(n, 2.0);
        let mut unvisited = vec![Vec::new(); grid.side * grid.side];
        let mut slot = vec![0; n];
        let mut cell_of = vec![0; n];
        for (i, p) in instance.nodes().iter().enumerate() {
            let (cx, cy) = grid.cell_of(p);
            let id = grid.id(cx, cy);
            slot[i] = unvisited[id].len() as u32;
            cell_of[i] = id as u32;
            unvisited[id].push(i as u32);
        }
        Self {
            points: instance.nodes().to_vec(),
            grid,
            mask: VisitMask::new(n),
            cells: [unvisited, vec![Vec::new(); grid.side * grid.side]],
            slot,
            cell_of,
        }
    }

    pub fn mask(&self) -> &VisitMask {
        &self.mask
    }

    pub fn is_visited(&self, i: NodeIndex) -> bool {
        self.mask.contains(i)
    }

    /// Moves a node into the visited lists. No-op if already visited.
    pub fn mark_visited(&mut self, i: NodeIndex) {
        if !self.mask.insert(i) {
            return;
        }
        let cell = self.cell_of[i] as usize;
        let list = &mut self.cells[0][cell];
        let pos = self.slot[i] as usize;
        list.swap_remove(pos);
        if let Some(&moved) = list.get(pos) {
            self.slot[moved as usize] = pos as u32;
        }
        let dst = &mut self.cells[1][cell];
        self.slot[i] = dst.len() as u32;
        dst.push(i as u32);
    }

    fn nearest_in(&self, p: &Point, state: usize, exclude: Option<NodeIndex>) -> Option<NodeIndex> {
        let home = self.grid.cell_of(p);
        let mut best: Option<Cand> = None;
        for r in 0..=self.grid.max_ring() {
            if let Some(b) = &best {
                let lb = self.grid.ring_bound(p, home, r);
                if lb * lb > b.0 {
                    break;
                }
            }
            self.grid.ring(home, r, |cell| {
                for &j in &self.cells[state][cell] {
                    let j = j as usize;
                    if Some(j) == exclude {
                        continue;
                    }
                    let c = Cand(p.dist2(&self.points[j]), j);
                    if best.as_ref().map_or(true, |b| c < *b) {
                        best = Some(c);
                    }
                }
            });
        }
        best.map(|c| c.1)
    }

    /// Unvisited node closest to `coord`; ties go to the lower index.
    pub fn nearest_unvisited(&self, coord: Point) -> Result<NodeIndex> {
        self.nearest_in(&coord, 0, None).ok_or(Error::EmptyDomain("every node is visited"))
    }

    /// Visited node closest to node `i`, excluding `i` itself.
    pub fn nearest_visited(&self, i: NodeIndex) -> Result<NodeIndex> {
        self.nearest_in(&self.points[i], 1, Some(i)).ok_or(Error::EmptyDomain("no visited node"))
    }

    /// Up to `k` unvisited nodes closest to `coord`, ascending by distance.
    pub fn k_nearest_unvisited(&self, coord: Point, k: usize) -> Vec<NodeIndex> {
        if k == 0 {
            return Vec::new();
        }
        let home = self.grid.cell_of(&coord);
        let mut heap: BinaryHeap<Cand> = BinaryHeap::with_capacity(k + 1);
        for r in 0..=self.grid.max_ring() {
            if heap.len() == k {
                let lb = self.grid.ring_bound(&coord, home, r);
                if lb * lb > heap.peek().expect("non-empty").0 {
                    break;
                }
            }
            self.grid.ring(home, r, |cell| {
                for &j in &self.cells[0][cell] {
                    let c = Cand(coord.dist2(&self.points[j as usize]), j as usize);
                    if heap.len() < k {
                        heap.push(c);
                    } else if c < *heap.peek().expect("non-empty") {
                        heap.pop();
                        heap.push(c);
                    }
                }
            });
        }
        let mut list: Vec<Cand> = heap.into_vec();
        list.sort_unstable();
        list.into_iter().map(|c| c.1).collect()
    }
}
