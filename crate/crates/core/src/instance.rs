use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point in the plane. Instance coordinates live in the unit square.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    #[inline]
    pub fn dist2(&self, other: &Point) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }

    #[inline]
    pub fn dist(&self, other: &Point) -> f64 {
        self.dist2(other).sqrt()
    }
}

/// A Euclidean TSP instance over the unit square with a designated depot.
#[derive(Debug, Clone, PartialEq)]
pub struct TspInstance {
    nodes: Vec<Point>,
    depot: usize,
}

impl TspInstance {
    pub fn new(nodes: Vec<Point>, depot: usize) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "an instance needs at least 2 nodes, got {}",
                nodes.len()
            )));
        }
        if depot >= nodes.len() {
            return Err(Error::InvalidArgument(format!(
                "depot {depot} out of range for {} nodes",
                nodes.len()
            )));
        }
        if let Some((i, p)) = nodes
            .iter()
            .enumerate()
            .find(|(_, p)| !(0.0..=1.0).contains(&p.x) || !(0.0..=1.0).contains(&p.y))
        {
            return Err(Error::Validation(format!(
                "node {i} at ({}, {}) lies outside the unit square",
                p.x, p.y
            )));
        }
        Ok(Self { nodes, depot })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.nodes.len()
    }

    #[inline]
    pub fn depot(&self) -> usize {
        self.depot
    }

    #[inline]
    pub fn nodes(&self) -> &[Point] {
        &self.nodes
    }

    #[inline]
    pub fn point(&self, i: usize) -> Point {
        self.nodes[i]
    }

    /// Euclidean traverse cost between two nodes.
    #[inline]
    pub fn cost(&self, i: usize, j: usize) -> f64 {
        self.nodes[i].dist(&self.nodes[j])
    }

    /// Returns a copy with a different depot.
    pub fn with_depot(&self, depot: usize) -> Result<Self> {
        Self::new(self.nodes.clone(), depot)
    }

    /// Length of the closed cycle visiting `order` (no validation).
    pub fn cycle_cost(&self, order: &[usize]) -> f64 {
        match order.len() {
            0 | 1 => 0.0,
            m => self.path_cost(order) + self.cost(order[m - 1], order[0]),
        }
    }

    /// Length of the open path visiting `order` (no validation).
    pub fn path_cost(&self, order: &[usize]) -> f64 {
        order.windows(2).map(|w| self.cost(w[0], w[1])).sum()
    }
}

/// A Hamiltonian cycle given as a node order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tour {
    pub order: Vec<usize>,
}

impl Tour {
    pub fn new(order: Vec<usize>) -> Self {
        Self { order }
    }

    /// Checks that the order is a permutation of `0..n`.
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.order.len() != n {
            return Err(Error::Validation(format!(
                "tour has {} entries, instance has {n} nodes",
                self.order.len()
            )));
        }
        let mut seen = vec![false; n];
        for &v in &self.order {
            if v >= n {
                return Err(Error::Validation(format!("node {v} out of range")));
            }
            if std::mem::replace(&mut seen[v], true) {
                return Err(Error::Validation(format!("node {v} visited twice")));
            }
        }
        Ok(())
    }
}

/// A Hamiltonian path over a node subset with fixed first and last nodes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpenPath {
    pub order: Vec<usize>,
}

impl OpenPath {
    pub fn new(order: Vec<usize>) -> Self {
        Self { order }
    }

    pub fn source(&self) -> usize {
        self.order[0]
    }

    pub fn target(&self) -> usize {
        self.order[self.order.len() - 1]
    }

    /// Checks distinctness, bounds and (optionally) the endpoints.
    pub fn validate(&self, n: usize, endpoints: Option<(usize, usize)>) -> Result<()> {
        if self.order.len() < 2 {
            return Err(Error::Validation("a path needs at least 2 nodes".into()));
        }
        let mut seen = std::collections::HashSet::with_capacity(self.order.len());
        for &v in &self.order {
            if v >= n {
                return Err(Error::Validation(format!("node {v} out of range")));
            }
            if !seen.insert(v) {
                return Err(Error::Validation(format!("node {v} repeated in path")));
            }
        }
        if let Some((s, t)) = endpoints {
            if self.source() != s || self.target() != t {
                return Err(Error::Validation(format!(
                    "path runs {}→{}, expected {s}→{t}",
                    self.source(),
                    self.target()
                )));
            }
        }
        Ok(())
    }
}

/// Closed tour length: sum of consecutive costs plus the closing edge.
pub fn tour_length(instance: &TspInstance, tour: &Tour) -> Result<f64> {
    tour.validate(instance.n())?;
    Ok(instance.cycle_cost(&tour.order))
}

/// Open path length: consecutive costs only.
pub fn path_length(instance: &TspInstance, path: &OpenPath) -> Result<f64> {
    path.validate(instance.n(), None)?;
    Ok(instance.path_cost(&path.order))
}

/// Uniform random instance in the unit square, depot at node 0.
pub fn generate_uniform(n: usize, seed: u64) -> Result<TspInstance> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("n must be at least 2, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nodes = (0..n).map(|_| Point::new(rng.gen::<f64>(), rng.gen::<f64>())).collect();
    TspInstance::new(nodes, 0)
}
