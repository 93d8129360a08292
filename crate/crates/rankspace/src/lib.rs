//! Budget-constrained rank allocation and rank-space search for low-rank
//! adapters.
//!
//! Freezing a weight matrix `W0` and training a low-rank update `U * V^T`
//! leaves one discrete knob per layer: the adapter rank. This crate explores
//! the space of per-layer rank vectors under a parameter budget:
//!
//! - [`lowrank`] — dense SVD, best rank-r truncation, parameter counting;
//! - [`importance`] — singular-energy importance scores, proportional rank
//!   allocation, regularized low-rank fitting;
//! - [`search`] — coarse grid and fine windowed greedy sweeps over rank
//!   vectors, with full evaluation history;
//! - [`objectives`] — pluggable evaluators, from a closed-form spectral-tail
//!   model to a small multi-task trainer on synthetic data;
//! - [`oracle`] — exhaustive and dynamic-programming reference solvers that
//!   certify the greedy results at desk scale.
//!
//! All numerics are generic over the scalar type via [`scalar::Real`];
//! `f64` aliases are exported at the crate root.

pub mod error;
pub mod history;
pub mod importance;
pub mod lowrank;
pub mod matrix;
pub mod objectives;
pub mod oracle;
pub mod rank;
mod rng;
pub mod scalar;
pub mod search;

pub use error::Error;
pub use history::{ExplorationHistory, HistoryEntry, Phase};
pub use lowrank::{LayerSpec, LowRankFactors, Spectrum, Svd};
pub use matrix::Matrix;
pub use rank::RankVector;
pub use scalar::Real;

/// `f64` aliases for the common case.
pub type Matrix64 = Matrix<f64>;
pub type Spectrum64 = Spectrum<f64>;
pub type LowRankFactors64 = LowRankFactors<f64>;
pub type Svd64 = Svd<f64>;
pub type HistoryEntry64 = HistoryEntry<f64>;
pub type ExplorationHistory64 = ExplorationHistory<f64>;
