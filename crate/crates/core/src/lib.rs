//! Core data model and combinatorial machinery for hierarchical TSP solving.
//!
//! The crate covers everything that does not involve a learned model:
//! instances and tours, file formats, the k-NN graph and visitation-aware
//! nearest queries, the partial-tour decomposer, node featurization for the
//! upper policy, non-learned heuristics and exact Held-Karp oracles.

pub mod decompose;
pub mod error;
pub mod heuristics;
pub mod instance;
pub mod io;
pub mod oracle;
pub mod pixel;
pub mod reference;
pub mod spatial;

pub use decompose::{DecomposeConfig, PartialTour, SubProblem};
pub use error::{Error, Result};
pub use instance::{OpenPath, Point, Tour, TspInstance};
pub use spatial::{KnnGraph, NodeIndex, VisitMask};
