//! Dynamic N-1 contingency screening for transmission grids.
//!
//! The engine solves the linearized swing dynamics of a grid under line
//! faults by spectral methods, accelerates per-contingency evaluation with
//! a multi-step eigenvalue perturbation scheme, and estimates rare
//! line-overload probabilities with Monte Carlo and cross-entropy adaptive
//! importance sampling.
//!
//! The main entry points are [`grid::Grid`] for the static network,
//! [`dynamics::GridDynamics`] for trajectory solvers sharing one base
//! eigendecomposition, [`indicators`] for overload metrics, and
//! [`risk`] for the probabilistic screening pipeline.

pub mod dynamics;
pub mod error;
pub mod fault;
pub mod grid;
pub mod indicators;
pub mod report;
pub mod risk;
pub mod spectral;
pub mod synthetic;

pub use dynamics::{
    propagate, reference_integrate, relative_error, sample_times, swing_energy, GridDynamics,
    MethodLabel, SolveMethod, SolverMeta, Trajectory,
};
pub use error::{Error, Result};
pub use fault::{
    build_perturbation, FaultKind, FaultScenario, NominalLaw, Perturbation, ScenarioBatch,
    ScenarioLaw,
};
pub use grid::{Bus, BusKind, Grid, Line, StateSystem};
pub use indicators::{
    classify_risk, global_overload, in_safety_polytope, line_overload, overload_result,
    LineOverload, OverloadResult, RiskThresholds, RiskZone,
};
pub use report::{
    artifact_header, bench_from_csv, bench_to_csv, bench_to_jsonl, config_hash,
    error_sweep_from_csv, error_sweep_to_csv, overload_to_csv, prep_from_csv, prep_to_csv,
    read_trajectory_bin, risk_rows_from_csv, risk_to_csv, risk_to_jsonl, risk_to_text,
    screen_from_csv, screen_to_csv, screen_to_jsonl, split_header, trajectory_from_csv,
    trajectory_to_csv, write_trajectory_bin, BenchRecord, ScreenMatrix,
};
pub use risk::{
    ce_optimize, estimate_report, is_estimate, mc_estimate, n1plus, CeConfig, CeDiagnostics,
    CeIteration, EstimateMethod, GridOverloadScorer, LineRisk, MethodName, OverloadScore,
    ProposalParams, RiskConfig, RiskEstimate, RiskReport, ScenarioScorer, SimulationConfig,
    Target,
};
pub use spectral::{
    eigendecompose, perturb_first_order, perturb_multistep, reciprocal_gap_matrix, GapInverse,
    MultistepSpectrum, Provenance, SpectralDecomposition,
};
