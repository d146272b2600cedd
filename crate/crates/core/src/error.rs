//! Error types shared across the engine.

use thiserror::Error;

/// Errors produced by grid loading, spectral solvers, and risk estimation.
#[derive(Debug, Error)]
pub enum Error {
    /// The input document could not be parsed at all.
    #[error("parse error: {0}")]
    Parse(String),

    /// The input parsed but violates a model invariant. The message names
    /// the violated invariant.
    #[error("validation error: {0}")]
    Validation(String),

    /// A numerical routine failed (singular system, non-diagonalizable
    /// matrix, failed convergence).
    #[error("numerical error: {0}")]
    Numerical(String),

    /// Too many eigenvalue gaps fell below the degeneracy tolerance for a
    /// first-order spectral update to be trustworthy. Callers should fall
    /// back to an exact decomposition.
    #[error("degeneracy-dominated perturbation: {zeroed} of {total} gap entries below tolerance")]
    DegeneracyDominated { zeroed: usize, total: usize },

    /// Two trajectories were combined but their sampling grids differ.
    #[error("trajectory grid mismatch: {0}")]
    TrajectoryMismatch(String),

    /// No sample in a cross-entropy batch reached the elite threshold.
    #[error("empty elite set at threshold {threshold}: increase the batch size or lower gamma")]
    EmptyElite { threshold: f64 },

    /// A sampled scenario has zero density under the proposal it was drawn
    /// from. The absolute-continuity floor makes this unreachable; hitting
    /// it means the proposal parameters were corrupted.
    #[error("scenario on line {line} has zero proposal density; absolute-continuity floor violated")]
    ZeroDensity { line: usize },

    /// Filesystem failure while reading or writing an artifact.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
