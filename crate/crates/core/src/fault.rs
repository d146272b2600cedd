//! Fault scenarios, the rank-one state-matrix perturbation they induce, and
//! the scenario sampling laws used by the risk engine.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Fault type on a transmission line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    /// Full de-energization: the line's stiffness drops to zero.
    ThreePhase,
    /// One phase lost: the remaining two phases carry 2/3 of the nominal
    /// stiffness under the balanced approximation.
    SinglePhase,
}

impl FaultKind {
    /// Multiplier applied to the faulted line's stiffness while the fault
    /// is active.
    pub fn beta_factor(self) -> f64 {
        match self {
            FaultKind::ThreePhase => 0.0,
            FaultKind::SinglePhase => 2.0 / 3.0,
        }
    }
}

/// One sampled contingency: which line faults, how, and for how long.
///
/// The fault onset is fixed at t = 0 with the system at equilibrium; the
/// field is kept for the record format.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaultScenario {
    /// Faulted line index, or `None` for the no-fault scenario.
    pub line: Option<usize>,
    pub kind: FaultKind,
    /// Fault duration τ in seconds, nonnegative.
    pub tau: f64,
    #[serde(default)]
    pub onset: f64,
}

impl FaultScenario {
    pub fn new(line: usize, kind: FaultKind, tau: f64) -> Self {
        FaultScenario {
            line: Some(line),
            kind,
            tau,
            onset: 0.0,
        }
    }

    /// The scenario with no fault at all.
    pub fn none() -> Self {
        FaultScenario {
            line: None,
            kind: FaultKind::ThreePhase,
            tau: 0.0,
            onset: 0.0,
        }
    }

    /// Stiffness multiplier for the faulted line; 1.0 when no line faults.
    pub fn beta_factor(&self) -> f64 {
        match self.line {
            Some(_) => self.kind.beta_factor(),
            None => 1.0,
        }
    }

    pub fn validate(&self, grid: &Grid) -> Result<()> {
        if self.tau < 0.0 {
            return Err(Error::Validation(format!(
                "negative fault duration tau = {}",
                self.tau
            )));
        }
        if let Some(line) = self.line {
            if line >= grid.line_count() {
                return Err(Error::Validation(format!("unknown line index {line}")));
            }
        }
        Ok(())
    }
}

/// The state-matrix change `δA = a·V` induced by a fault. `V` is rank one:
/// `V = column · rowᵀ`, nonzero only in the upper-right block rows and
/// columns touching the faulted line's endpoints.
#[derive(Debug, Clone)]
pub struct Perturbation {
    /// Dimensionless scale `a`; `build_perturbation` returns 1 and callers
    /// subdivide it.
    pub scale: f64,
    /// Left rank-one factor (length 2n), supported on the velocity rows of
    /// the two endpoints.
    pub column: DVector<f64>,
    /// Right rank-one factor (length 2n), supported on the phase columns of
    /// the two endpoints.
    pub row: DVector<f64>,
}

impl Perturbation {
    /// The zero perturbation for a no-fault scenario.
    pub fn zero(dim: usize) -> Self {
        Perturbation {
            scale: 1.0,
            column: DVector::zeros(dim),
            row: DVector::zeros(dim),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.column.amax() == 0.0 || self.row.amax() == 0.0
    }

    /// Materializes the dense 2n×2n matrix `V`.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        &self.column * self.row.transpose()
    }
}

/// Builds the perturbation for a scenario so that `A₀ + 1·V` equals the
/// state matrix of the grid with the faulted line's stiffness scaled by the
/// fault factor (a three-phase fault removes the line entirely).
pub fn build_perturbation(grid: &Grid, scenario: &FaultScenario) -> Result<Perturbation> {
    scenario.validate(grid)?;
    let n = grid.bus_count();
    let dim = 2 * n;
    let line_idx = match scenario.line {
        Some(idx) => idx,
        None => return Ok(Perturbation::zero(dim)),
    };
    let line = grid
        .line(line_idx)
        .ok_or_else(|| Error::Validation(format!("unknown line index {line_idx}")))?;
    let factor = scenario.kind.beta_factor();
    // L_f − L = (factor − 1)·β·(e_i − e_j)(e_i − e_j)ᵀ; the upper-right
    // block of A is −M⁻¹L, so V = (1 − factor)·β·M⁻¹(e_i − e_j) ⊗ (e_i − e_j)
    // with the second factor living on the phase columns.
    let strength = (1.0 - factor) * line.stiffness;
    let (i, j) = (line.from, line.to);
    let mut column = DVector::zeros(dim);
    column[i] = strength / grid.buses()[i].inertia;
    column[j] = -strength / grid.buses()[j].inertia;
    let mut row = DVector::zeros(dim);
    row[n + i] = 1.0;
    row[n + j] = -1.0;
    Ok(Perturbation {
        scale: 1.0,
        column,
        row,
    })
}

// ---------------------------------------------------------------------------
// Scenario distributions
// ---------------------------------------------------------------------------

/// The nominal fault law: a categorical line choice and one shared
/// exponential duration rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NominalLaw {
    /// Per-line selection probabilities, summing to one.
    pub line_weights: Vec<f64>,
    /// Exponential rate λ of the fault duration (mean duration 1/λ).
    pub rate: f64,
}

impl NominalLaw {
    /// Uniform line choice with a shared duration rate.
    pub fn uniform(line_count: usize, rate: f64) -> Result<Self> {
        if line_count == 0 {
            return Err(Error::Validation("nominal law over zero lines".into()));
        }
        NominalLaw {
            line_weights: vec![1.0 / line_count as f64; line_count],
            rate,
        }
        .validated()
    }

    fn validated(self) -> Result<Self> {
        if !(self.rate > 0.0) {
            return Err(Error::Validation(format!(
                "nonpositive duration rate {}",
                self.rate
            )));
        }
        check_probability_vector(&self.line_weights)?;
        Ok(self)
    }

    /// Density of `(α, τ)` under the nominal law: `w_α · λ · e^{−λτ}`.
    /// The no-fault scenario has zero density.
    pub fn density(&self, scenario: &FaultScenario) -> Result<f64> {
        density_impl(&self.line_weights, |_| self.rate, scenario)
    }

    /// The same law expressed in the per-line parametric proposal family.
    pub fn to_scenario_law(&self) -> ScenarioLaw {
        ScenarioLaw {
            line_probs: self.line_weights.clone(),
            duration_rates: vec![self.rate; self.line_weights.len()],
        }
    }

    pub fn sample<R: Rng>(&self, kind: FaultKind, rng: &mut R) -> FaultScenario {
        sample_impl(&self.line_weights, |_| self.rate, kind, rng)
    }
}

/// The parametric proposal family `q_ν(α, τ) = φ_α · λ_α · e^{−λ_α τ}` with
/// `ν = (φ_α, λ_α | α)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioLaw {
    /// Per-line categorical weights φ, summing to one.
    pub line_probs: Vec<f64>,
    /// Per-line exponential duration rates λ_α, all positive.
    pub duration_rates: Vec<f64>,
}

impl ScenarioLaw {
    pub fn new(line_probs: Vec<f64>, duration_rates: Vec<f64>) -> Result<Self> {
        if line_probs.len() != duration_rates.len() {
            return Err(Error::Validation(
                "proposal weights and rates have different lengths".into(),
            ));
        }
        check_probability_vector(&line_probs)?;
        for (idx, &rate) in duration_rates.iter().enumerate() {
            if !(rate > 0.0) {
                return Err(Error::Validation(format!(
                    "nonpositive duration rate {rate} on line {idx}"
                )));
            }
        }
        Ok(ScenarioLaw {
            line_probs,
            duration_rates,
        })
    }

    pub fn line_count(&self) -> usize {
        self.line_probs.len()
    }

    /// Density of `(α, τ)`: `φ_α · λ_α · e^{−λ_α τ}`.
    pub fn density(&self, scenario: &FaultScenario) -> Result<f64> {
        density_impl(&self.line_probs, |a| self.duration_rates[a], scenario)
    }

    /// Draws one scenario: the line from φ, then the duration from that
    /// line's exponential law. Reproducible given the rng state.
    pub fn sample<R: Rng>(&self, kind: FaultKind, rng: &mut R) -> FaultScenario {
        sample_impl(&self.line_probs, |a| self.duration_rates[a], kind, rng)
    }
}

fn check_probability_vector(weights: &[f64]) -> Result<()> {
    for (idx, &w) in weights.iter().enumerate() {
        if !(w >= 0.0) {
            return Err(Error::Validation(format!(
                "negative probability weight {w} at line {idx}"
            )));
        }
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Validation(format!(
            "line weights sum to {total}, not 1"
        )));
    }
    Ok(())
}

fn density_impl(
    weights: &[f64],
    rate_of: impl Fn(usize) -> f64,
    scenario: &FaultScenario,
) -> Result<f64> {
    if scenario.tau < 0.0 {
        return Err(Error::Validation(format!(
            "negative fault duration tau = {}",
            scenario.tau
        )));
    }
    let line = match scenario.line {
        Some(line) => line,
        None => return Ok(0.0),
    };
    if line >= weights.len() {
        return Err(Error::Validation(format!("unknown line index {line}")));
    }
    let rate = rate_of(line);
    Ok(weights[line] * rate * (-rate * scenario.tau).exp())
}

fn sample_impl<R: Rng>(
    weights: &[f64],
    rate_of: impl Fn(usize) -> f64,
    kind: FaultKind,
    rng: &mut R,
) -> FaultScenario {
    // Draw order is fixed (line, then duration) so batches replay
    // deterministically from a seed.
    let u: f64 = rng.gen();
    let mut cumulative = 0.0;
    let mut line = weights.len() - 1;
    for (idx, &w) in weights.iter().enumerate() {
        cumulative += w;
        if u < cumulative {
            line = idx;
            break;
        }
    }
    let rate = rate_of(line);
    let v: f64 = rng.gen();
    let tau = -(1.0 - v).ln() / rate;
    FaultScenario::new(line, kind, tau)
}

/// A batch of sampled scenarios with the header needed for deterministic
/// replay.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioBatch {
    pub seed: u64,
    pub law: ScenarioLaw,
    pub kind: FaultKind,
    pub scenarios: Vec<FaultScenario>,
}

impl ScenarioBatch {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario batch serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("scenario batch: {e}")))
    }
}
