//! Bundle adjustment with a Student's-t MAP objective.
//!
//! The crate provides a calibrated pinhole camera model, a control network
//! container with JSON persistence, Gaussian and Student's-t objectives, a
//! Levenberg-Marquardt style solver over the sparse Schur-complement normal
//! equations, a sigma-edit outlier baseline, a synthetic orbital-strip scene
//! generator, evaluation metrics, and a Monte Carlo benchmark harness.

pub mod bench;
pub mod geometry;
pub mod network;
pub mod metrics;
pub mod objective;
pub mod outlier;
pub mod simgen;
pub mod solver;

pub use geometry::{CameraPose, Intrinsics, WorldPoint};
pub use network::ControlNetwork;
pub use objective::ObjectiveKind;
