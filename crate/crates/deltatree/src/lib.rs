//! DeltaTree: a concurrent, locality-aware ordered set.
//!
//! The set is a tree of fixed-capacity containers (ΔNodes). Each container
//! stores a leaf-oriented binary search tree in a contiguous block laid out
//! in van Emde Boas order, so a search touches O(log_B N) memory blocks for
//! any block size B up to the container capacity, without knowing B.
//! Containers are linked by pointers and restructured independently:
//! searches are wait-free, inserts and deletes are non-blocking to each
//! other and synchronize with per-container maintenance (rebalance, expand,
//! merge) through a test-and-set lock and an in-flight operation counter.
//!
//! The crate also ships the measurement side: a cold-cache memory-transfer
//! simulator ([`cache_sim`]), a sequential model plus a linearizability
//! checker ([`oracle`]), and a synchrobench-style workload harness
//! ([`mod@bench`]) behind the `deltatree-bench` / `deltatree-sim` binaries.

pub mod bench;
pub mod cache_sim;
pub mod concurrent_tree;
pub mod delta_node;
pub mod maintenance;
pub mod oracle;
mod search;
pub mod veb_layout;

pub use concurrent_tree::{OpResult, Thresholds, Universe};
pub use delta_node::{DeltaParams, EMPTY, MAX_KEY};

use thiserror::Error;

/// Errors surfaced by fallible constructors and the measurement tooling.
#[derive(Debug, Error)]
pub enum Error {
    #[error("height {0} out of range (expected 1..=32)")]
    HeightOutOfRange(u32),
    #[error("UB must be 2^H - 1 for some H >= 1, got {0}")]
    BadCapacity(u64),
    #[error("buffer capacity must be >= 1")]
    BadBufferCapacity,
    #[error("UB {0} too small for a tree (need UB >= 3)")]
    CapacityTooSmall(u64),
    #[error("container allocation failed")]
    Alloc,
    #[error("curve fit needs >= 3 distinct block sizes, got {0}")]
    DegenerateFit(usize),
    #[error("invalid workload: {0}")]
    InvalidWorkload(String),
}

pub type Result<T> = std::result::Result<T, Error>;
