//! Piecewise-constant linear-ODE trajectory solvers: exact modal,
//! perturbative modal, and a Runge–Kutta reference oracle.
//!
//! The dynamics are `ẋ = A(t)x + P` with `A(t) = A₀ + V` while the fault is
//! active on `[0, τ]` and `A₀` afterwards. The modal solvers evaluate the
//! closed-form solution `x(t) = U(e^{Λt}ξ₀ + φ₁(Λ, t)·U⁻¹P)` per segment;
//! one base decomposition of `A₀` is computed per grid and reused across
//! all contingencies.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fault::{build_perturbation, FaultScenario};
use crate::grid::{Grid, StateSystem};
use crate::spectral::{eigendecompose, perturb_multistep, SpectralDecomposition};

type C64 = Complex<f64>;

/// Below `|λt| = PHI_SERIES_THRESHOLD` the φ₁ function is evaluated by a
/// four-term Taylor series, which removes the λ = 0 singularity (the
/// uniform-phase mode, plus the extra null mode when a three-phase fault
/// splits the graph).
pub const PHI_SERIES_THRESHOLD: f64 = 1e-4;

/// Solver selection for the faulted interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMethod {
    /// Eigendecompose the faulted matrix per contingency.
    Exact,
    /// Multi-step first-order update of the shared base decomposition.
    Perturbative { steps: usize },
}

/// Which solver actually produced a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodLabel {
    Exact,
    Perturbative { steps: usize },
    Reference,
}

impl From<SolveMethod> for MethodLabel {
    fn from(m: SolveMethod) -> Self {
        match m {
            SolveMethod::Exact => MethodLabel::Exact,
            SolveMethod::Perturbative { steps } => MethodLabel::Perturbative { steps },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolverMeta {
    pub method: MethodLabel,
    /// True when a degeneracy-dominated perturbative solve was silently
    /// escalated to the exact method.
    pub escalated: bool,
}

/// A time-sampled state history over `[0, T]` with the fault timeline
/// annotation. `times` is the uniform grid plus τ inserted as an explicit
/// sample so overload integration never straddles the switch.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub scenario: FaultScenario,
    pub meta: SolverMeta,
}

impl Trajectory {
    /// State dimension 2n.
    pub fn dim(&self) -> usize {
        self.states.first().map_or(0, |s| s.len())
    }

    pub fn bus_count(&self) -> usize {
        self.dim() / 2
    }

    /// Phase angle of bus `i` at sample `k`.
    pub fn phase(&self, k: usize, i: usize) -> f64 {
        self.states[k][self.bus_count() + i]
    }

    /// Phase velocity of bus `i` at sample `k`.
    pub fn velocity(&self, k: usize, i: usize) -> f64 {
        self.states[k][i]
    }

    pub fn end_time(&self) -> f64 {
        *self.times.last().unwrap_or(&0.0)
    }
}

/// The uniform sampling grid over `[0, t_end]` with `tau` inserted as an
/// explicit sample when it falls strictly inside the window.
pub fn sample_times(t_end: f64, dt: f64, tau: Option<f64>) -> Vec<f64> {
    let tol = 1e-12 * t_end.max(1.0);
    let mut times = Vec::new();
    let mut k = 0usize;
    loop {
        let t = k as f64 * dt;
        if t >= t_end - tol {
            break;
        }
        times.push(t);
        k += 1;
    }
    times.push(t_end);
    if let Some(tau) = tau {
        if tau > tol && tau < t_end - tol {
            match times.binary_search_by(|t| t.total_cmp(&tau)) {
                Ok(_) => {}
                Err(pos) => {
                    let near_prev = pos > 0 && (tau - times[pos - 1]).abs() <= tol;
                    let near_next = pos < times.len() && (times[pos] - tau).abs() <= tol;
                    if !near_prev && !near_next {
                        times.insert(pos, tau);
                    }
                }
            }
        }
    }
    times
}

/// `e^{λt}` and `φ₁(λ, t) = (e^{λt} − 1)/λ` for one mode, with the Taylor
/// fallback near `λt = 0`.
pub(crate) fn mode_response(lambda: C64, t: f64) -> (C64, C64) {
    let z = lambda * t;
    let exp_z = z.exp();
    let phi = if z.norm() < PHI_SERIES_THRESHOLD {
        let t_c = C64::new(t, 0.0);
        t_c * (C64::ONE + z * 0.5 + z * z / 6.0 + z * z * z / 24.0)
    } else {
        (exp_z - C64::ONE) / lambda
    };
    (exp_z, phi)
}

/// `U⁻¹·v` for a real vector, exploiting sparsity of `v`.
pub(crate) fn left_apply(dec: &SpectralDecomposition, v: &DVector<f64>) -> DVector<C64> {
    let k = dec.dim();
    let mut out = DVector::zeros(k);
    for j in 0..k {
        let vj = v[j];
        if vj != 0.0 {
            for i in 0..k {
                out[i] += dec.left_inverse[(i, j)] * vj;
            }
        }
    }
    out
}

/// Modal coordinates of a start state and forcing: `ξ₀ = U⁻¹x`, `g = U⁻¹P`.
pub(crate) fn modal_coefficients(
    dec: &SpectralDecomposition,
    start: &DVector<f64>,
    forcing: &DVector<f64>,
) -> (DVector<C64>, DVector<C64>) {
    (left_apply(dec, start), left_apply(dec, forcing))
}

/// Modal coordinates at elapsed time `t`: `ξ(t) = e^{Λt}ξ₀ + φ₁(Λ, t)g`.
pub(crate) fn xi_at(
    values: &DVector<C64>,
    xi0: &DVector<C64>,
    g: &DVector<C64>,
    t: f64,
) -> DVector<C64> {
    let k = values.len();
    let mut xi = DVector::zeros(k);
    for m in 0..k {
        let (exp_z, phi) = mode_response(values[m], t);
        xi[m] = exp_z * xi0[m] + phi * g[m];
    }
    xi
}

/// Real state at elapsed time `t`: `Re(U(e^{Λt}ξ₀ + φ₁(Λ, t)g))`. The
/// imaginary residue of the reconstruction is discarded.
pub(crate) fn modal_state(
    dec: &SpectralDecomposition,
    xi0: &DVector<C64>,
    g: &DVector<C64>,
    t: f64,
) -> DVector<f64> {
    let k = dec.dim();
    let xi = xi_at(&dec.eigenvalues, xi0, g, t);
    let mut out = DVector::zeros(k);
    for m in 0..k {
        if xi[m] != C64::ZERO {
            for i in 0..k {
                out[i] += (dec.right_vectors[(i, m)] * xi[m]).re;
            }
        }
    }
    out
}

/// Evaluates the modal solution `x(t)` for a single decomposition: the
/// closed-form propagator of `ẋ = Ax + P` from `x_start` over duration `t`.
pub fn propagate(
    dec: &SpectralDecomposition,
    x_start: &DVector<f64>,
    forcing: &DVector<f64>,
    t: f64,
) -> DVector<f64> {
    assert!(t >= 0.0, "propagation time must be nonnegative");
    if t == 0.0 {
        return x_start.clone();
    }
    let (xi0, g) = modal_coefficients(dec, x_start, forcing);
    modal_state(dec, &xi0, &g, t)
}

/// Trajectory solvers for one grid, sharing a single eigendecomposition of
/// the nominal state matrix across all contingencies. Immutable and safe to
/// share across worker threads.
#[derive(Debug, Clone)]
pub struct GridDynamics {
    grid: Grid,
    system: StateSystem,
    base: SpectralDecomposition,
}

impl GridDynamics {
    /// Builds the state system and decomposes `A₀` once.
    pub fn new(grid: &Grid) -> Result<Self> {
        let system = grid.state_system()?;
        let base = eigendecompose(&system.matrix)?;
        Ok(GridDynamics {
            grid: grid.clone(),
            system,
            base,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn system(&self) -> &StateSystem {
        &self.system
    }

    /// The shared decomposition of the nominal state matrix.
    pub fn base(&self) -> &SpectralDecomposition {
        &self.base
    }

    /// Dense faulted state matrix `A₀ + V` for a scenario.
    pub fn faulted_matrix(&self, scenario: &FaultScenario) -> Result<DMatrix<f64>> {
        let perturbation = build_perturbation(&self.grid, scenario)?;
        Ok(assemble_faulted_matrix(&self.system.matrix, &perturbation))
    }

    /// Spectral decomposition of the faulted matrix by the requested
    /// method. A degeneracy-dominated perturbative solve silently escalates
    /// to the exact method; the flag reports that escalation.
    pub fn faulted_decomposition(
        &self,
        scenario: &FaultScenario,
        method: SolveMethod,
    ) -> Result<(SpectralDecomposition, bool)> {
        scenario.validate(&self.grid)?;
        if scenario.line.is_none() {
            return Ok((self.base.clone(), false));
        }
        match method {
            SolveMethod::Exact => Ok((eigendecompose(&self.faulted_matrix(scenario)?)?, false)),
            SolveMethod::Perturbative { steps } => {
                let perturbation = build_perturbation(&self.grid, scenario)?;
                match perturb_multistep(&self.base, &perturbation, steps) {
                    Ok(dec) => Ok((dec, false)),
                    Err(Error::DegeneracyDominated { .. }) => {
                        Ok((eigendecompose(&self.faulted_matrix(scenario)?)?, true))
                    }
                    Err(e) => Err(e),
                }
            }
        }
    }

    /// Solves the two-interval dynamics from equilibrium: the faulted
    /// spectrum on `[0, τ]`, the cached nominal spectrum on `(τ, T]`.
    /// Durations beyond `T` keep the fault active for the whole window.
    pub fn solve_piecewise(
        &self,
        scenario: &FaultScenario,
        t_end: f64,
        dt: f64,
        method: SolveMethod,
    ) -> Result<Trajectory> {
        scenario.validate(&self.grid)?;
        check_time_grid(t_end, dt)?;
        let (fault_dec, escalated) = self.faulted_decomposition(scenario, method)?;
        let trajectory =
            self.solve_with_decomposition(&fault_dec, scenario, t_end, dt, method.into())?;
        Ok(Trajectory {
            meta: SolverMeta {
                method: method.into(),
                escalated,
            },
            ..trajectory
        })
    }

    /// Same as [`solve_piecewise`](Self::solve_piecewise) but with a caller
    /// supplied faulted decomposition, so ensembles can reuse one
    /// decomposition per faulted line.
    pub fn solve_with_decomposition(
        &self,
        fault_dec: &SpectralDecomposition,
        scenario: &FaultScenario,
        t_end: f64,
        dt: f64,
        label: MethodLabel,
    ) -> Result<Trajectory> {
        scenario.validate(&self.grid)?;
        check_time_grid(t_end, dt)?;
        let x0 = &self.system.equilibrium;
        let forcing = &self.system.forcing;
        let tau = effective_tau(scenario, t_end);
        let times = sample_times(t_end, dt, (tau > 0.0).then_some(tau));

        let (xi_fault, g_fault) = modal_coefficients(fault_dec, x0, forcing);
        let x_tau = if tau > 0.0 {
            modal_state(fault_dec, &xi_fault, &g_fault, tau)
        } else {
            x0.clone()
        };
        let (xi_post, g_post) = modal_coefficients(&self.base, &x_tau, forcing);

        let states = times
            .iter()
            .map(|&t| {
                if t <= tau {
                    if tau > 0.0 {
                        modal_state(fault_dec, &xi_fault, &g_fault, t)
                    } else {
                        x0.clone()
                    }
                } else {
                    modal_state(&self.base, &xi_post, &g_post, t - tau)
                }
            })
            .collect();

        Ok(Trajectory {
            times,
            states,
            scenario: *scenario,
            meta: SolverMeta {
                method: label,
                escalated: false,
            },
        })
    }

    /// Free response of the nominal system from an arbitrary start state;
    /// used for dissipation and superposition checks.
    pub fn free_response(&self, start: &DVector<f64>, t_end: f64, dt: f64) -> Result<Trajectory> {
        check_time_grid(t_end, dt)?;
        let times = sample_times(t_end, dt, None);
        let (xi0, g) = modal_coefficients(&self.base, start, &self.system.forcing);
        let states = times
            .iter()
            .map(|&t| modal_state(&self.base, &xi0, &g, t))
            .collect();
        Ok(Trajectory {
            times,
            states,
            scenario: FaultScenario::none(),
            meta: SolverMeta {
                method: MethodLabel::Exact,
                escalated: false,
            },
        })
    }

    /// Solves an ensemble of scenarios in parallel with deterministic
    /// output ordering.
    pub fn solve_ensemble(
        &self,
        scenarios: &[FaultScenario],
        t_end: f64,
        dt: f64,
        method: SolveMethod,
    ) -> Result<Vec<Trajectory>> {
        scenarios
            .par_iter()
            .map(|sc| self.solve_piecewise(sc, t_end, dt, method))
            .collect()
    }
}

/// `A₀ + V` assembled by adding the rank-one perturbation's few nonzero
/// entries in place.
pub(crate) fn assemble_faulted_matrix(
    nominal: &DMatrix<f64>,
    perturbation: &crate::fault::Perturbation,
) -> DMatrix<f64> {
    let mut a = nominal.clone();
    for (i, &ci) in perturbation.column.iter().enumerate() {
        if ci != 0.0 {
            for (j, &rj) in perturbation.row.iter().enumerate() {
                if rj != 0.0 {
                    a[(i, j)] += ci * rj;
                }
            }
        }
    }
    a
}

fn check_time_grid(t_end: f64, dt: f64) -> Result<()> {
    if !(t_end > 0.0) {
        return Err(Error::Validation(format!(
            "simulation horizon T = {t_end} must be positive"
        )));
    }
    if !(dt > 0.0) || dt > t_end {
        return Err(Error::Validation(format!(
            "time step dt = {dt} must lie in (0, T]"
        )));
    }
    Ok(())
}

pub(crate) fn effective_tau(scenario: &FaultScenario, t_end: f64) -> f64 {
    if scenario.line.is_none() || scenario.beta_factor() == 1.0 {
        0.0
    } else {
        scenario.tau.min(t_end)
    }
}

/// Classical fixed-step fourth-order integration of `ẋ = A(t)x + P` with
/// `A` switching at τ (the grid places a sample exactly at τ, so no step
/// straddles the switch). Serves as the independent oracle for the modal
/// solvers.
pub fn reference_integrate(
    grid: &Grid,
    scenario: &FaultScenario,
    t_end: f64,
    dt: f64,
) -> Result<Trajectory> {
    scenario.validate(grid)?;
    check_time_grid(t_end, dt)?;
    let system = grid.state_system()?;
    let dim = system.matrix.nrows();
    let perturbation = build_perturbation(grid, scenario)?;
    let a_fault = assemble_faulted_matrix(&system.matrix, &perturbation);
    let a_nominal = &system.matrix;
    let forcing = &system.forcing;

    let stiffness_estimate = infinity_norm(&a_fault).max(infinity_norm(a_nominal));
    if stiffness_estimate > 0.0 && dt > 0.2 / stiffness_estimate {
        log::warn!(
            "reference integrator step {dt} exceeds 0.2/max|λ| estimate {:.3e}; accuracy degraded",
            0.2 / stiffness_estimate
        );
    }

    let tau = effective_tau(scenario, t_end);
    let times = sample_times(t_end, dt, (tau > 0.0).then_some(tau));

    let mut states = Vec::with_capacity(times.len());
    let mut x = system.equilibrium.clone();
    states.push(x.clone());
    let mut k1 = DVector::zeros(dim);
    let mut k2 = DVector::zeros(dim);
    let mut k3 = DVector::zeros(dim);
    let mut k4 = DVector::zeros(dim);
    let mut stage = DVector::zeros(dim);

    for w in times.windows(2) {
        let (t0, t1) = (w[0], w[1]);
        let h = t1 - t0;
        let a = if t0 < tau { &a_fault } else { a_nominal };

        k1.copy_from(forcing);
        k1.gemv(1.0, a, &x, 1.0);

        stage.copy_from(&x);
        stage.axpy(0.5 * h, &k1, 1.0);
        k2.copy_from(forcing);
        k2.gemv(1.0, a, &stage, 1.0);

        stage.copy_from(&x);
        stage.axpy(0.5 * h, &k2, 1.0);
        k3.copy_from(forcing);
        k3.gemv(1.0, a, &stage, 1.0);

        stage.copy_from(&x);
        stage.axpy(h, &k3, 1.0);
        k4.copy_from(forcing);
        k4.gemv(1.0, a, &stage, 1.0);

        x.axpy(h / 6.0, &k1, 1.0);
        x.axpy(h / 3.0, &k2, 1.0);
        x.axpy(h / 3.0, &k3, 1.0);
        x.axpy(h / 6.0, &k4, 1.0);
        states.push(x.clone());
    }

    Ok(Trajectory {
        times,
        states,
        scenario: *scenario,
        meta: SolverMeta {
            method: MethodLabel::Reference,
            escalated: false,
        },
    })
}

fn infinity_norm(a: &DMatrix<f64>) -> f64 {
    (0..a.nrows())
        .map(|i| (0..a.ncols()).map(|j| a[(i, j)].abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Maximum over sample times of `‖x_a(t) − x_b(t)‖₂ / max(‖x_b(t)‖₂, ε)`
/// with `ε = 1e-12`. Requires identical sampling grids.
pub fn relative_error(a: &Trajectory, b: &Trajectory) -> Result<f64> {
    if a.times.len() != b.times.len() || a.dim() != b.dim() {
        return Err(Error::TrajectoryMismatch(format!(
            "{}×{} vs {}×{} samples",
            a.times.len(),
            a.dim(),
            b.times.len(),
            b.dim()
        )));
    }
    let tol = 1e-9;
    for (ta, tb) in a.times.iter().zip(&b.times) {
        if (ta - tb).abs() > tol {
            return Err(Error::TrajectoryMismatch(format!(
                "sample times differ: {ta} vs {tb}"
            )));
        }
    }
    const FLOOR: f64 = 1e-12;
    let mut worst = 0.0f64;
    for (xa, xb) in a.states.iter().zip(&b.states) {
        let err = (xa - xb).norm() / xb.norm().max(FLOOR);
        worst = worst.max(err);
    }
    Ok(worst)
}

/// The quadratic form `θ̇ᵀMθ̇ + θᵀLθ`; non-increasing along free responses
/// of an unforced grid.
pub fn swing_energy(grid: &Grid, state: &DVector<f64>) -> f64 {
    let n = grid.bus_count();
    let l = grid.laplacian();
    let mut kinetic = 0.0;
    for i in 0..n {
        kinetic += grid.buses()[i].inertia * state[i] * state[i];
    }
    let mut potential = 0.0;
    for i in 0..n {
        for j in 0..n {
            potential += state[n + i] * l[(i, j)] * state[n + j];
        }
    }
    kinetic + potential
}
