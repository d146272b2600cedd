//! Monte Carlo and cross-entropy importance-sampling estimation of
//! overload exceedance probabilities, and the end-to-end screening kernel.
//!
//! The estimators are generic over a [`ScenarioScorer`], which maps one
//! fault scenario to its overload indicators. The production scorer shares
//! one base eigendecomposition, precomputes the faulted spectrum per line,
//! and evaluates line flows mode-by-mode without materializing full
//! trajectories; it is checked against the trajectory-plus-indicator path
//! in tests.

use nalgebra::DVector;
use num_complex::Complex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    effective_tau, left_apply, sample_times, xi_at, GridDynamics, SolveMethod,
};
use crate::error::{Error, Result};
use crate::fault::{build_perturbation, FaultKind, FaultScenario, NominalLaw, ScenarioLaw};
use crate::grid::Grid;
use crate::indicators::{classify_risk, RiskThresholds, RiskZone};
use crate::spectral::{eigendecompose, MultistepSpectrum, SpectralDecomposition};

type C64 = Complex<f64>;

/// What an estimate targets: the global indicator or one line's indicator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Global,
    Line(usize),
}

/// Overload indicators of one scenario: seconds of violation per line and
/// their monitored sum.
#[derive(Debug, Clone, PartialEq)]
pub struct OverloadScore {
    pub per_line: Vec<f64>,
    pub global: f64,
}

impl OverloadScore {
    pub fn value(&self, target: Target) -> f64 {
        match target {
            Target::Global => self.global,
            Target::Line(l) => self.per_line[l],
        }
    }
}

/// Maps a fault scenario to its overload indicators. Implementations must
/// be pure: the same scenario always scores identically.
pub trait ScenarioScorer: Sync {
    fn line_count(&self) -> usize;
    fn score(&self, scenario: &FaultScenario) -> Result<OverloadScore>;
}

fn batch_scores<S: ScenarioScorer + ?Sized>(
    scorer: &S,
    scenarios: &[FaultScenario],
) -> Result<Vec<OverloadScore>> {
    scenarios.par_iter().map(|sc| scorer.score(sc)).collect()
}

fn batch_target_scores<S: ScenarioScorer + ?Sized>(
    scorer: &S,
    scenarios: &[FaultScenario],
    target: Target,
) -> Result<Vec<f64>> {
    scenarios
        .par_iter()
        .map(|sc| scorer.score(sc).map(|s| s.value(target)))
        .collect()
}

// ---------------------------------------------------------------------------
// Production scorer
// ---------------------------------------------------------------------------

/// Simulation window and solver used when scoring scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub kind: FaultKind,
    pub t_end: f64,
    pub dt: f64,
    pub method: SolveMethod,
}

/// Faulted spectrum held either dense (exact method or escalated) or in
/// the factored multi-step form that amortizes the shared base
/// decomposition across contingencies.
enum FaultSpectrum {
    Dense(SpectralDecomposition),
    Factored(MultistepSpectrum),
}

impl FaultSpectrum {
    fn eigenvalues(&self) -> &DVector<C64> {
        match self {
            FaultSpectrum::Dense(d) => &d.eigenvalues,
            FaultSpectrum::Factored(f) => f.eigenvalues(),
        }
    }

    fn left_apply(&self, v: &DVector<f64>) -> DVector<C64> {
        match self {
            FaultSpectrum::Dense(d) => left_apply(d, v),
            FaultSpectrum::Factored(f) => f.left_apply(v),
        }
    }

    /// `Re(Ū·ξ)`.
    fn reconstruct_state(&self, xi: &DVector<C64>) -> DVector<f64> {
        match self {
            FaultSpectrum::Dense(d) => {
                let k = d.dim();
                let mut out = DVector::zeros(k);
                for m in 0..k {
                    if xi[m] != C64::ZERO {
                        for i in 0..k {
                            out[i] += (d.right_vectors[(i, m)] * xi[m]).re;
                        }
                    }
                }
                out
            }
            FaultSpectrum::Factored(f) => f.reconstruct_state(xi),
        }
    }

    /// `Σ coeff·(row of Ū)` for sparse row combinations.
    fn combine_rows(&self, terms: &[(usize, f64)]) -> Vec<C64> {
        match self {
            FaultSpectrum::Dense(d) => {
                let k = d.dim();
                let mut w = vec![C64::ZERO; k];
                for &(r, c) in terms {
                    for (j, wj) in w.iter_mut().enumerate() {
                        *wj += d.right_vectors[(r, j)] * c;
                    }
                }
                w
            }
            FaultSpectrum::Factored(f) => f.combine_rows(terms).iter().copied().collect(),
        }
    }
}

struct LineFaultCache {
    /// Faulted-interval spectrum and modal data: ξ₀ = Ū⁻¹x₀, g = Ū⁻¹P.
    spectrum: FaultSpectrum,
    xi0: DVector<C64>,
    g: DVector<C64>,
    /// Per grid line, the complex flow row β_eff·(Ū[n+i,·] − Ū[n+j,·]);
    /// the faulted line's stiffness carries the fault factor.
    rows: Vec<Vec<C64>>,
    escalated: bool,
}

/// Scores scenarios on a grid by evaluating line flows directly in the
/// modal bases of the faulted and nominal intervals. One faulted
/// decomposition is cached per line at construction, so each scenario costs
/// only per-sample flow evaluations.
pub struct GridOverloadScorer {
    dynamics: GridDynamics,
    config: SimulationConfig,
    per_line: Vec<LineFaultCache>,
    nominal_rows: Vec<Vec<C64>>,
    nominal_xi0: DVector<C64>,
    nominal_g: DVector<C64>,
    limits: Vec<f64>,
    monitored: Vec<bool>,
    escalations: usize,
}

/// Per grid line, the complex flow row `β·(U[n+i,·] − U[n+j,·])`; faulted
/// variants scale the faulted line's stiffness by its fault factor.
fn flow_rows(
    grid: &Grid,
    dec: &SpectralDecomposition,
    fault: Option<(usize, FaultKind)>,
) -> Vec<Vec<C64>> {
    let n = grid.bus_count();
    let k = dec.dim();
    grid.lines()
        .iter()
        .enumerate()
        .map(|(idx, line)| {
            let beta = match fault {
                Some((faulted, kind)) if faulted == idx => line.stiffness * kind.beta_factor(),
                _ => line.stiffness,
            };
            (0..k)
                .map(|m| {
                    (dec.right_vectors[(n + line.from, m)] - dec.right_vectors[(n + line.to, m)])
                        * beta
                })
                .collect()
        })
        .collect()
}

impl GridOverloadScorer {
    pub fn new(grid: &Grid, config: SimulationConfig) -> Result<Self> {
        if !(config.t_end > 0.0) || !(config.dt > 0.0) || config.dt > config.t_end {
            return Err(Error::Validation(format!(
                "invalid simulation window T = {}, dt = {}",
                config.t_end, config.dt
            )));
        }
        let dynamics = GridDynamics::new(grid)?;
        let x0 = &dynamics.system().equilibrium;
        let forcing = &dynamics.system().forcing;
        let n = grid.bus_count();
        let mut per_line = Vec::with_capacity(grid.line_count());
        let mut escalations = 0;
        for line_idx in 0..grid.line_count() {
            let scenario = FaultScenario::new(line_idx, config.kind, config.t_end);
            let (spectrum, escalated) = match config.method {
                SolveMethod::Exact => (
                    FaultSpectrum::Dense(eigendecompose(&dynamics.faulted_matrix(&scenario)?)?),
                    false,
                ),
                SolveMethod::Perturbative { steps } => {
                    let perturbation = build_perturbation(grid, &scenario)?;
                    match MultistepSpectrum::new(dynamics.base(), &perturbation, steps) {
                        Ok(f) => (FaultSpectrum::Factored(f), false),
                        Err(Error::DegeneracyDominated { .. }) => (
                            FaultSpectrum::Dense(eigendecompose(
                                &dynamics.faulted_matrix(&scenario)?,
                            )?),
                            true,
                        ),
                        Err(e) => return Err(e),
                    }
                }
            };
            if escalated {
                escalations += 1;
            }
            let rows = grid
                .lines()
                .iter()
                .enumerate()
                .map(|(idx, line)| {
                    let beta = if idx == line_idx {
                        line.stiffness * config.kind.beta_factor()
                    } else {
                        line.stiffness
                    };
                    spectrum.combine_rows(&[(n + line.from, beta), (n + line.to, -beta)])
                })
                .collect();
            let xi0 = spectrum.left_apply(x0);
            let g = spectrum.left_apply(forcing);
            per_line.push(LineFaultCache {
                spectrum,
                xi0,
                g,
                rows,
                escalated,
            });
        }
        let nominal_rows = flow_rows(grid, dynamics.base(), None);
        let nominal_xi0 = left_apply(dynamics.base(), x0);
        let nominal_g = left_apply(dynamics.base(), forcing);
        let limits = grid.lines().iter().map(|l| l.limit).collect();
        let monitored = grid.lines().iter().map(|l| l.monitored).collect();
        Ok(GridOverloadScorer {
            dynamics,
            config,
            per_line,
            nominal_rows,
            nominal_xi0,
            nominal_g,
            limits,
            monitored,
            escalations,
        })
    }

    pub fn dynamics(&self) -> &GridDynamics {
        &self.dynamics
    }

    pub fn config(&self) -> &SimulationConfig {
        &self.config
    }

    /// Number of lines whose perturbative decomposition escalated to exact
    /// during cache construction.
    pub fn escalations(&self) -> usize {
        self.escalations
    }

    /// True when any cached faulted decomposition was produced with an
    /// escalation.
    pub fn line_escalated(&self, line: usize) -> bool {
        self.per_line[line].escalated
    }

    /// Accumulates per-line violation seconds over one modal segment.
    ///
    /// Modes with a usable `1/λ` are folded into per-line constants:
    /// `flow_ℓ(t) = Re(Σ_m ρ_ℓm·e^{λ_m t}) + κ_ℓ` with `ρ_ℓm = r_ℓm(ξ₀_m +
    /// g_m/λ_m)` and `κ_ℓ = Re(Σ_m −r_ℓm g_m/λ_m)`; near-null modes keep
    /// the φ₁ series. The per-sample exponentials advance by one complex
    /// multiply on the uniform part of the grid.
    fn march(
        &self,
        eigenvalues: &DVector<C64>,
        rows: &[Vec<C64>],
        xi0: &DVector<C64>,
        g: &DVector<C64>,
        samples: &[(f64, f64)],
        acc: &mut [f64],
    ) {
        if samples.is_empty() {
            return;
        }
        let k = eigenvalues.len();
        let dt = self.config.dt;
        let lines = rows.len();

        // Mode split: |λ|·T below the series threshold keeps the series
        // form of the trajectory solvers; everything else uses 1/λ.
        let series_mode: Vec<bool> = (0..k)
            .map(|m| eigenvalues[m].norm() * self.config.t_end < crate::dynamics::PHI_SERIES_THRESHOLD)
            .collect();
        let mut rho = vec![C64::ZERO; lines * k];
        let mut kappa = vec![0.0f64; lines];
        for (l, row) in rows.iter().enumerate() {
            for m in 0..k {
                if series_mode[m] {
                    continue;
                }
                let inv_lambda = eigenvalues[m].inv();
                let c1 = xi0[m] + g[m] * inv_lambda;
                rho[l * k + m] = row[m] * c1;
                kappa[l] -= (row[m] * g[m] * inv_lambda).re;
            }
        }

        let step: Vec<C64> = (0..k).map(|m| (eigenvalues[m] * dt).exp()).collect();
        let mut exp_t = vec![C64::ONE; k];
        let mut prev_elapsed = f64::NEG_INFINITY;
        let grid_tol = 1e-9 * dt;

        for &(elapsed, width) in samples {
            if (elapsed - prev_elapsed - dt).abs() <= grid_tol {
                for m in 0..k {
                    exp_t[m] *= step[m];
                }
            } else {
                for m in 0..k {
                    exp_t[m] = (eigenvalues[m] * elapsed).exp();
                }
            }
            prev_elapsed = elapsed;

            for l in 0..lines {
                let mut flow = kappa[l];
                let base = l * k;
                for m in 0..k {
                    if !series_mode[m] {
                        let r = rho[base + m];
                        let e = exp_t[m];
                        flow += r.re * e.re - r.im * e.im;
                    }
                }
                for m in 0..k {
                    if series_mode[m] {
                        let z = eigenvalues[m] * elapsed;
                        let phi = elapsed
                            * (C64::ONE + z * 0.5 + z * z / 6.0 + z * z * z / 24.0);
                        let xi = exp_t[m] * xi0[m] + phi * g[m];
                        flow += (rows[l][m] * xi).re;
                    }
                }
                if flow.abs() > self.limits[l] {
                    acc[l] += width;
                }
            }
        }
    }
}

impl ScenarioScorer for GridOverloadScorer {
    fn line_count(&self) -> usize {
        self.limits.len()
    }

    fn score(&self, scenario: &FaultScenario) -> Result<OverloadScore> {
        scenario.validate(self.dynamics.grid())?;
        if scenario.line.is_some() && scenario.kind != self.config.kind {
            return Err(Error::Validation(format!(
                "scorer caches are built for {:?} faults, scenario has {:?}",
                self.config.kind, scenario.kind
            )));
        }
        let t_end = self.config.t_end;
        let tau = effective_tau(scenario, t_end);
        let times = sample_times(t_end, self.config.dt, (tau > 0.0).then_some(tau));

        let mut fault_samples = Vec::new();
        let mut post_samples = Vec::new();
        for w in times.windows(2) {
            let (t0, t1) = (w[0], w[1]);
            if t0 < tau {
                fault_samples.push((t0, t1 - t0));
            } else {
                post_samples.push((t0 - tau, t1 - t0));
            }
        }

        let mut acc = vec![0.0; self.limits.len()];
        if tau > 0.0 {
            let cache = &self.per_line[scenario.line.expect("tau > 0 implies a faulted line")];
            self.march(
                cache.spectrum.eigenvalues(),
                &cache.rows,
                &cache.xi0,
                &cache.g,
                &fault_samples,
                &mut acc,
            );
            let xi_tau = xi_at(cache.spectrum.eigenvalues(), &cache.xi0, &cache.g, tau);
            let x_tau = cache.spectrum.reconstruct_state(&xi_tau);
            let xi_post = left_apply(self.dynamics.base(), &x_tau);
            self.march(
                &self.dynamics.base().eigenvalues,
                &self.nominal_rows,
                &xi_post,
                &self.nominal_g,
                &post_samples,
                &mut acc,
            );
        } else {
            self.march(
                &self.dynamics.base().eigenvalues,
                &self.nominal_rows,
                &self.nominal_xi0,
                &self.nominal_g,
                &post_samples,
                &mut acc,
            );
        }

        let global = acc
            .iter()
            .zip(&self.monitored)
            .filter(|(_, &m)| m)
            .map(|(s, _)| s)
            .sum();
        Ok(OverloadScore {
            per_line: acc,
            global,
        })
    }
}

// ---------------------------------------------------------------------------
// Estimators
// ---------------------------------------------------------------------------

/// How an exceedance probability was estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateMethod {
    Mc,
    Ce,
}

/// One exceedance-probability estimate with its standard error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskEstimate {
    pub target: Target,
    pub gamma: f64,
    pub q_hat: f64,
    pub stderr: f64,
    pub samples: usize,
    pub method: EstimateMethod,
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma >= 0.0) {
        return Err(Error::Validation(format!(
            "threshold gamma = {gamma} must be nonnegative"
        )));
    }
    Ok(())
}

/// Plain Monte Carlo estimate of `Q = P[S_target ≥ γ]` under the nominal
/// law: the empirical exceedance frequency with its binomial standard
/// error. Deterministic given the seed.
pub fn mc_estimate<S: ScenarioScorer + ?Sized>(
    scorer: &S,
    nominal: &NominalLaw,
    kind: FaultKind,
    gamma: f64,
    n: usize,
    target: Target,
    seed: u64,
) -> Result<RiskEstimate> {
    check_gamma(gamma)?;
    if n == 0 {
        return Err(Error::Validation("sample count must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scenarios: Vec<FaultScenario> = (0..n).map(|_| nominal.sample(kind, &mut rng)).collect();
    let scores = batch_target_scores(scorer, &scenarios, target)?;
    let hits = scores.iter().filter(|&&s| s >= gamma).count();
    let q_hat = hits as f64 / n as f64;
    let stderr = (q_hat * (1.0 - q_hat) / n as f64).sqrt();
    Ok(RiskEstimate {
        target,
        gamma,
        q_hat,
        stderr,
        samples: n,
        method: EstimateMethod::Mc,
    })
}

/// Cross-entropy iteration controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CeConfig {
    /// Elite fraction ρ: the threshold is the (1−ρ)-quantile of the batch
    /// scores, capped at γ.
    pub rho: f64,
    /// Scenarios per iteration (at least 100).
    pub n_per_iter: usize,
    /// Parameter smoothing `ν ← s·ν_MLE + (1−s)·ν_prev`.
    pub smoothing: f64,
    /// Absolute-continuity floor: final weights are mixed with the nominal
    /// weights, `φ ← (1−ε)·φ + ε·w`.
    pub epsilon_mix: f64,
    pub max_iterations: usize,
    /// Stop when the largest relative parameter change drops below this.
    pub param_tol: f64,
}

impl Default for CeConfig {
    fn default() -> Self {
        CeConfig {
            rho: 0.1,
            n_per_iter: 1000,
            smoothing: 0.7,
            epsilon_mix: 0.01,
            max_iterations: 50,
            param_tol: 1e-3,
        }
    }
}

/// Diagnostics of one cross-entropy iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CeIteration {
    pub threshold: f64,
    pub elite_count: usize,
    /// Effective sample size of the elite weights.
    pub ess: f64,
    pub max_rel_change: f64,
    pub min_phi: f64,
    pub degenerate_weights: bool,
}

/// A fitted proposal with its iteration history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalParams {
    pub law: ScenarioLaw,
    pub history: Vec<CeIteration>,
}

impl ProposalParams {
    pub fn iterations(&self) -> usize {
        self.history.len()
    }
}

fn quantile_index(n: usize, rho: f64) -> usize {
    let idx = ((1.0 - rho) * n as f64).ceil() as usize;
    idx.saturating_sub(1).min(n - 1)
}

/// Fits the proposal by iterated elite-weighted maximum likelihood:
/// sample a batch from the current proposal, cap the batch quantile at γ,
/// reweight the elite set by nominal-to-proposal density ratios, and apply
/// the closed-form exponential-family update with smoothing and the
/// absolute-continuity floor. The elite threshold never decreases.
pub fn ce_optimize<S: ScenarioScorer + ?Sized>(
    scorer: &S,
    nominal: &NominalLaw,
    kind: FaultKind,
    gamma: f64,
    target: Target,
    config: &CeConfig,
    seed: u64,
) -> Result<ProposalParams> {
    check_gamma(gamma)?;
    if !(config.rho > 0.0 && config.rho < 1.0) {
        return Err(Error::Validation(format!(
            "elite fraction rho = {} outside (0, 1)",
            config.rho
        )));
    }
    if config.n_per_iter < 100 {
        return Err(Error::Validation(format!(
            "n_per_iter = {} below the minimum of 100",
            config.n_per_iter
        )));
    }
    if !(config.smoothing > 0.0 && config.smoothing <= 1.0) {
        return Err(Error::Validation(format!(
            "smoothing {} outside (0, 1]",
            config.smoothing
        )));
    }
    if !(config.epsilon_mix >= 0.0 && config.epsilon_mix < 1.0) {
        return Err(Error::Validation(format!(
            "epsilon_mix {} outside [0, 1)",
            config.epsilon_mix
        )));
    }
    let line_count = scorer.line_count();
    if nominal.line_weights.len() != line_count {
        return Err(Error::Validation(format!(
            "nominal law covers {} lines, scorer has {line_count}",
            nominal.line_weights.len()
        )));
    }

    let mut law = nominal.to_scenario_law();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut history: Vec<CeIteration> = Vec::new();
    let mut threshold_prev = f64::NEG_INFINITY;
    let n = config.n_per_iter;

    for _ in 0..config.max_iterations {
        let scenarios: Vec<FaultScenario> = (0..n).map(|_| law.sample(kind, &mut rng)).collect();
        let scores = batch_target_scores(scorer, &scenarios, target)?;

        let mut sorted = scores.clone();
        sorted.sort_by(f64::total_cmp);
        let quantile = sorted[quantile_index(n, config.rho)];
        let threshold = gamma.min(quantile.max(threshold_prev));

        let mut elite: Vec<(usize, f64)> = Vec::new();
        for (i, &s) in scores.iter().enumerate() {
            if s >= threshold {
                let p = nominal.density(&scenarios[i])?;
                let q = law.density(&scenarios[i])?;
                if q <= 0.0 {
                    return Err(Error::ZeroDensity {
                        line: scenarios[i].line.unwrap_or(usize::MAX),
                    });
                }
                elite.push((i, p / q));
            }
        }
        if elite.is_empty() {
            return Err(Error::EmptyElite { threshold });
        }

        let total_w: f64 = elite.iter().map(|(_, w)| w).sum();
        let sum_w2: f64 = elite.iter().map(|(_, w)| w * w).sum();
        let ess = if sum_w2 > 0.0 {
            total_w * total_w / sum_w2
        } else {
            0.0
        };
        let degenerate_weights = ess < 0.01 * n as f64;
        if degenerate_weights {
            log::warn!(
                "cross-entropy elite weights are degenerate: ESS {ess:.1} of {n} samples"
            );
        }

        // Closed-form weighted MLE of the categorical × exponential family.
        let mut weight_on_line = vec![0.0f64; line_count];
        let mut weighted_tau = vec![0.0f64; line_count];
        for &(i, w) in &elite {
            let line = scenarios[i].line.expect("sampled scenarios carry a line");
            weight_on_line[line] += w;
            weighted_tau[line] += w * scenarios[i].tau;
        }

        let s = config.smoothing;
        let mut phi = vec![0.0f64; line_count];
        let mut rates = vec![0.0f64; line_count];
        for l in 0..line_count {
            let phi_mle = if total_w > 0.0 {
                weight_on_line[l] / total_w
            } else {
                law.line_probs[l]
            };
            phi[l] = s * phi_mle + (1.0 - s) * law.line_probs[l];
            let rate_mle = if weighted_tau[l] > 0.0 {
                weight_on_line[l] / weighted_tau[l]
            } else {
                // No elite mass (or only zero durations) on this line:
                // keep its previous rate.
                law.duration_rates[l]
            };
            rates[l] = s * rate_mle + (1.0 - s) * law.duration_rates[l];
        }
        // Absolute-continuity floor by mixing with the nominal weights.
        let eps = config.epsilon_mix;
        for l in 0..line_count {
            phi[l] = (1.0 - eps) * phi[l] + eps * nominal.line_weights[l];
        }
        let norm: f64 = phi.iter().sum();
        for p in &mut phi {
            *p /= norm;
        }

        let mut max_rel_change = 0.0f64;
        for l in 0..line_count {
            let dp = (phi[l] - law.line_probs[l]).abs() / law.line_probs[l].max(1e-12);
            let dr = (rates[l] - law.duration_rates[l]).abs() / law.duration_rates[l].max(1e-12);
            max_rel_change = max_rel_change.max(dp).max(dr);
        }

        law = ScenarioLaw::new(phi, rates)?;
        let min_phi = law.line_probs.iter().copied().fold(f64::INFINITY, f64::min);
        history.push(CeIteration {
            threshold,
            elite_count: elite.len(),
            ess,
            max_rel_change,
            min_phi,
            degenerate_weights,
        });
        threshold_prev = threshold;

        if max_rel_change < config.param_tol {
            break;
        }
    }

    Ok(ProposalParams { law, history })
}

/// Importance-sampling estimate of `Q = P[S_target ≥ γ]` with scenarios
/// drawn from the proposal and weighted by exact nominal-to-proposal
/// density ratios. The standard error comes from the empirical variance of
/// the weighted indicator.
pub fn is_estimate<S: ScenarioScorer + ?Sized>(
    scorer: &S,
    proposal: &ScenarioLaw,
    nominal: &NominalLaw,
    kind: FaultKind,
    gamma: f64,
    n: usize,
    target: Target,
    seed: u64,
) -> Result<RiskEstimate> {
    check_gamma(gamma)?;
    if n == 0 {
        return Err(Error::Validation("sample count must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scenarios: Vec<FaultScenario> = (0..n).map(|_| proposal.sample(kind, &mut rng)).collect();
    let scores = batch_target_scores(scorer, &scenarios, target)?;
    let mut weighted = Vec::with_capacity(n);
    for (sc, s) in scenarios.iter().zip(&scores) {
        let y = if *s >= gamma {
            let q = proposal.density(sc)?;
            if q <= 0.0 {
                return Err(Error::ZeroDensity {
                    line: sc.line.unwrap_or(usize::MAX),
                });
            }
            nominal.density(sc)? / q
        } else {
            0.0
        };
        weighted.push(y);
    }
    let (q_hat, stderr) = mean_and_stderr(&weighted);
    Ok(RiskEstimate {
        target,
        gamma,
        q_hat,
        stderr,
        samples: n,
        method: EstimateMethod::Ce,
    })
}

fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / (n as f64 - 1.0);
    (mean, (var / n as f64).sqrt())
}

// ---------------------------------------------------------------------------
// End-to-end kernel
// ---------------------------------------------------------------------------

/// Solver name in configuration documents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodName {
    Exact,
    Perturbative,
}

/// Configuration of the screening pipeline. Field names match the
/// configuration document keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskConfig {
    /// Exceedance threshold γ in seconds.
    pub gamma: f64,
    #[serde(default = "defaults::rho")]
    pub rho: f64,
    #[serde(default = "defaults::n_per_iter")]
    pub n_per_iter: usize,
    #[serde(default = "defaults::n_final")]
    pub n_final: usize,
    /// Nominal exponential rate of fault durations.
    #[serde(default = "defaults::lambda_nominal")]
    pub lambda_nominal: f64,
    #[serde(default = "defaults::fault_kind")]
    pub fault_kind: FaultKind,
    #[serde(rename = "T", default = "defaults::t_end")]
    pub t_end: f64,
    #[serde(default = "defaults::dt")]
    pub dt: f64,
    #[serde(default = "defaults::method")]
    pub method: MethodName,
    /// Step count for the perturbative method.
    #[serde(default = "defaults::m")]
    pub m: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "defaults::epsilon_mix")]
    pub epsilon_mix: f64,
    #[serde(default = "defaults::smoothing")]
    pub smoothing: f64,
    /// Re-run the cross-entropy fit per line instead of reusing the global
    /// proposal (slower).
    #[serde(default)]
    pub per_line_reoptimize: bool,
    #[serde(default)]
    pub thresholds: RiskThresholds,
}

mod defaults {
    use super::{FaultKind, MethodName};
    pub fn rho() -> f64 {
        0.1
    }
    pub fn n_per_iter() -> usize {
        1000
    }
    pub fn n_final() -> usize {
        2000
    }
    pub fn lambda_nominal() -> f64 {
        0.1
    }
    pub fn fault_kind() -> FaultKind {
        FaultKind::ThreePhase
    }
    pub fn t_end() -> f64 {
        20.0
    }
    pub fn dt() -> f64 {
        0.01
    }
    pub fn method() -> MethodName {
        MethodName::Perturbative
    }
    pub fn m() -> usize {
        10
    }
    pub fn epsilon_mix() -> f64 {
        0.01
    }
    pub fn smoothing() -> f64 {
        0.7
    }
}

impl RiskConfig {
    pub fn new(gamma: f64) -> Self {
        RiskConfig {
            gamma,
            rho: defaults::rho(),
            n_per_iter: defaults::n_per_iter(),
            n_final: defaults::n_final(),
            lambda_nominal: defaults::lambda_nominal(),
            fault_kind: defaults::fault_kind(),
            t_end: defaults::t_end(),
            dt: defaults::dt(),
            method: defaults::method(),
            m: defaults::m(),
            seed: 0,
            epsilon_mix: defaults::epsilon_mix(),
            smoothing: defaults::smoothing(),
            per_line_reoptimize: false,
            thresholds: RiskThresholds::default(),
        }
    }

    pub fn solve_method(&self) -> SolveMethod {
        match self.method {
            MethodName::Exact => SolveMethod::Exact,
            MethodName::Perturbative => SolveMethod::Perturbative { steps: self.m },
        }
    }

    pub fn simulation(&self) -> SimulationConfig {
        SimulationConfig {
            kind: self.fault_kind,
            t_end: self.t_end,
            dt: self.dt,
            method: self.solve_method(),
        }
    }

    pub fn ce(&self) -> CeConfig {
        CeConfig {
            rho: self.rho,
            n_per_iter: self.n_per_iter,
            smoothing: self.smoothing,
            epsilon_mix: self.epsilon_mix,
            ..CeConfig::default()
        }
    }

    /// Canonical serialization used for the configuration hash.
    pub fn canonical(&self) -> String {
        serde_json::to_string(self).expect("config serialization cannot fail")
    }
}

/// One line's risk entry in the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineRisk {
    pub line: usize,
    pub from: usize,
    pub to: usize,
    pub q_hat: f64,
    pub stderr: f64,
    pub zone: RiskZone,
}

/// Cross-entropy diagnostics carried in the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CeDiagnostics {
    pub iterations: usize,
    pub final_law: ScenarioLaw,
    pub history: Vec<CeIteration>,
}

/// Wall-clock breakdown; excluded from the canonical report bytes so
/// fixed-seed runs stay byte-identical.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Timing {
    pub setup_seconds: f64,
    pub ce_seconds: f64,
    pub estimate_seconds: f64,
    pub total_seconds: f64,
}

/// Per-line exceedance probabilities with zones, diagnostics, and the full
/// reproducibility header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub version: String,
    pub seed: u64,
    pub config_hash: String,
    pub gamma: f64,
    pub method: EstimateMethod,
    pub global: RiskEstimate,
    pub lines: Vec<LineRisk>,
    pub ce: CeDiagnostics,
    /// Perturbative-to-exact fallbacks during scorer construction.
    pub escalations: usize,
    #[serde(skip, default)]
    pub timing: Timing,
}

/// Runs the full screening kernel: one cross-entropy fit against the
/// global indicator, then per-line exceedance estimates from a final batch
/// drawn under the fitted proposal.
pub fn n1plus(grid: &Grid, config: &RiskConfig) -> Result<RiskReport> {
    estimate_report(grid, config, EstimateMethod::Ce)
}

/// Shared pipeline behind [`n1plus`] and the plain Monte Carlo comparison
/// mode: `Mc` draws the final batch from the nominal law with unit
/// weights, `Ce` from the fitted proposal with density-ratio weights.
pub fn estimate_report(
    grid: &Grid,
    config: &RiskConfig,
    method: EstimateMethod,
) -> Result<RiskReport> {
    check_gamma(config.gamma)?;
    if config.n_final == 0 {
        return Err(Error::Validation("sample count must be at least 1".into()));
    }
    let start = std::time::Instant::now();
    let scorer = GridOverloadScorer::new(grid, config.simulation())?;
    let nominal = NominalLaw::uniform(grid.line_count(), config.lambda_nominal)?;
    let setup_seconds = start.elapsed().as_secs_f64();

    let ce_start = std::time::Instant::now();
    let proposal = match method {
        EstimateMethod::Ce => ce_optimize(
            &scorer,
            &nominal,
            config.fault_kind,
            config.gamma,
            Target::Global,
            &config.ce(),
            config.seed,
        )?,
        EstimateMethod::Mc => ProposalParams {
            law: nominal.to_scenario_law(),
            history: Vec::new(),
        },
    };
    let ce_seconds = ce_start.elapsed().as_secs_f64();

    let estimate_start = std::time::Instant::now();
    // Final batch: drawn once from the working law; every per-line
    // estimate reuses the same weighted scores.
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x5EED_F1A1));
    let scenarios: Vec<FaultScenario> = (0..config.n_final)
        .map(|_| proposal.law.sample(config.fault_kind, &mut rng))
        .collect();
    let scores = batch_scores(&scorer, &scenarios)?;
    let mut ratios = Vec::with_capacity(scenarios.len());
    for sc in &scenarios {
        let q = proposal.law.density(sc)?;
        if q <= 0.0 {
            return Err(Error::ZeroDensity {
                line: sc.line.unwrap_or(usize::MAX),
            });
        }
        ratios.push(nominal.density(sc)? / q);
    }

    let estimate_for = |target: Target| -> RiskEstimate {
        let weighted: Vec<f64> = scores
            .iter()
            .zip(&ratios)
            .map(|(s, w)| if s.value(target) >= config.gamma { *w } else { 0.0 })
            .collect();
        let (q_hat, stderr) = mean_and_stderr(&weighted);
        RiskEstimate {
            target,
            gamma: config.gamma,
            q_hat,
            stderr,
            samples: scenarios.len(),
            method,
        }
    };

    let global = estimate_for(Target::Global);
    let mut lines = Vec::with_capacity(grid.line_count());
    for l in 0..grid.line_count() {
        let est = if config.per_line_reoptimize && method == EstimateMethod::Ce {
            let line_seed = config.seed.wrapping_add(1 + l as u64);
            let line_proposal = ce_optimize(
                &scorer,
                &nominal,
                config.fault_kind,
                config.gamma,
                Target::Line(l),
                &config.ce(),
                line_seed,
            )?;
            is_estimate(
                &scorer,
                &line_proposal.law,
                &nominal,
                config.fault_kind,
                config.gamma,
                config.n_final,
                Target::Line(l),
                line_seed.wrapping_add(0x5EED_F1A1),
            )?
        } else {
            estimate_for(Target::Line(l))
        };
        let q = est.q_hat.clamp(0.0, 1.0);
        let zone = classify_risk(q, &config.thresholds)?;
        let line = &grid.lines()[l];
        lines.push(LineRisk {
            line: l,
            from: line.from,
            to: line.to,
            q_hat: est.q_hat,
            stderr: est.stderr,
            zone,
        });
    }
    let estimate_seconds = estimate_start.elapsed().as_secs_f64();

    let iterations = proposal.iterations();
    Ok(RiskReport {
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: config.seed,
        config_hash: crate::report::config_hash(&config.canonical()),
        gamma: config.gamma,
        method,
        global,
        lines,
        ce: CeDiagnostics {
            iterations,
            final_law: proposal.law,
            history: proposal.history,
        },
        escalations: scorer.escalations(),
        timing: Timing {
            setup_seconds,
            ce_seconds,
            estimate_seconds,
            total_seconds: start.elapsed().as_secs_f64(),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::reference_integrate;
    use crate::indicators::overload_result;
    use crate::synthetic;

    /// Analytic toy family: `S(α, τ) = τ` on line 0, `S ≡ 0` elsewhere.
    /// The global indicator equals the line-0 indicator, so
    /// `P[S ≥ γ] = φ₀-weighted exponential tail`.
    struct TauScorer {
        lines: usize,
    }

    impl ScenarioScorer for TauScorer {
        fn line_count(&self) -> usize {
            self.lines
        }
        fn score(&self, scenario: &FaultScenario) -> Result<OverloadScore> {
            let mut per_line = vec![0.0; self.lines];
            if let Some(line) = scenario.line {
                if line == 0 {
                    per_line[0] = scenario.tau;
                }
            }
            let global = per_line[0];
            Ok(OverloadScore { per_line, global })
        }
    }

    #[test]
    fn grid_scorer_matches_trajectory_indicators() {
        let grid = synthetic::ring_grid(4);
        let config = SimulationConfig {
            kind: FaultKind::ThreePhase,
            t_end: 6.0,
            dt: 0.02,
            method: SolveMethod::Exact,
        };
        let scorer = GridOverloadScorer::new(&grid, config).unwrap();
        let dynamics = GridDynamics::new(&grid).unwrap();
        for line in 0..grid.line_count() {
            for tau in [0.0, 0.3, 1.7, 9.0] {
                let sc = FaultScenario::new(line, FaultKind::ThreePhase, tau);
                let fast = scorer.score(&sc).unwrap();
                let traj = dynamics
                    .solve_piecewise(&sc, 6.0, 0.02, SolveMethod::Exact)
                    .unwrap();
                let slow = overload_result(&traj, &grid);
                for l in 0..grid.line_count() {
                    let a = fast.per_line[l];
                    let b = slow.per_line[l].seconds;
                    assert!(
                        (a - b).abs() <= 0.02 + 1e-9,
                        "line {l} fault ({line}, τ={tau}): fast {a} vs trajectory {b}"
                    );
                }
                assert!((fast.global - slow.global).abs() <= 0.1 + 1e-9);
            }
        }
    }

    #[test]
    fn grid_scorer_matches_reference_integration() {
        // End-to-end: the fast scorer against RK4 trajectories.
        let grid = synthetic::stressed_triangle();
        let config = SimulationConfig {
            kind: FaultKind::ThreePhase,
            t_end: 8.0,
            dt: 0.01,
            method: SolveMethod::Exact,
        };
        let scorer = GridOverloadScorer::new(&grid, config).unwrap();
        for tau in [0.5, 3.0, 6.5] {
            let sc = FaultScenario::new(0, FaultKind::ThreePhase, tau);
            let fast = scorer.score(&sc).unwrap();
            let traj = reference_integrate(&grid, &sc, 8.0, 0.01).unwrap();
            let slow = overload_result(&traj, &grid);
            for l in 0..grid.line_count() {
                assert!(
                    (fast.per_line[l] - slow.per_line[l].seconds).abs() <= 0.03 + 1e-9,
                    "line {l} τ={tau}: {} vs {}",
                    fast.per_line[l],
                    slow.per_line[l].seconds
                );
            }
        }
    }

    #[test]
    fn mc_trivial_cases() {
        let scorer = TauScorer { lines: 2 };
        let nominal = NominalLaw::uniform(2, 0.5).unwrap();
        // γ = 0: S ≥ 0 always, so Q̂ = 1.
        let est = mc_estimate(
            &scorer,
            &nominal,
            FaultKind::ThreePhase,
            0.0,
            500,
            Target::Global,
            1,
        )
        .unwrap();
        assert_eq!(est.q_hat, 1.0);
        assert_eq!(est.stderr, 0.0);

        // Negative γ is rejected.
        assert!(mc_estimate(
            &scorer,
            &nominal,
            FaultKind::ThreePhase,
            -1.0,
            500,
            Target::Global,
            1
        )
        .is_err());

        // Impossible event on line 1 (S ≡ 0 there, γ > 0).
        let est = mc_estimate(
            &scorer,
            &nominal,
            FaultKind::ThreePhase,
            5.0,
            500,
            Target::Line(1),
            1,
        )
        .unwrap();
        assert_eq!(est.q_hat, 0.0);
    }

    #[test]
    fn mc_recovers_exponential_tail() {
        // S = τ on line 0 drawn with probability 1/2: Q = 0.5·e^{−λγ}.
        let scorer = TauScorer { lines: 2 };
        let nominal = NominalLaw::uniform(2, 0.1).unwrap();
        let gamma = 10.0;
        let expected = 0.5 * (-0.1f64 * gamma).exp();
        let est = mc_estimate(
            &scorer,
            &nominal,
            FaultKind::ThreePhase,
            gamma,
            100_000,
            Target::Global,
            7,
        )
        .unwrap();
        assert!(
            (est.q_hat - expected).abs() <= 3.0 * est.stderr,
            "Q̂ = {} vs expected {expected} (stderr {})",
            est.q_hat,
            est.stderr
        );
    }

    #[test]
    fn ce_on_single_line_keeps_unit_weight() {
        let scorer = TauScorer { lines: 1 };
        let nominal = NominalLaw::uniform(1, 0.2).unwrap();
        let proposal = ce_optimize(
            &scorer,
            &nominal,
            FaultKind::ThreePhase,
            8.0,
            Target::Global,
            &CeConfig {
                n_per_iter: 400,
                ..CeConfig::default()
            },
            3,
        )
        .unwrap();
        assert_eq!(proposal.law.line_probs, vec![1.0]);
        // Durations are tilted longer: the fitted rate drops below nominal.
        assert!(proposal.law.duration_rates[0] < nominal.rate);
    }

    #[test]
    fn ce_tilts_toward_the_contributing_line() {
        let scorer = TauScorer { lines: 2 };
        let nominal = NominalLaw::uniform(2, 0.1).unwrap();
        let config = CeConfig {
            n_per_iter: 2000,
            ..CeConfig::default()
        };
        let proposal = ce_optimize(
            &scorer,
            &nominal,
            FaultKind::ThreePhase,
            25.0,
            Target::Global,
            &config,
            11,
        )
        .unwrap();
        let phi0 = proposal.law.line_probs[0];
        assert!(
            phi0 > 0.9,
            "proposal mass on the contributing line is only {phi0}"
        );
        // The floor keeps the other line reachable.
        let floor = config.epsilon_mix * 0.5;
        assert!(proposal.law.line_probs[1] >= floor * (1.0 - 1e-9));
        // Longer durations favored.
        assert!(proposal.law.duration_rates[0] < nominal.rate);
        // φ floor held at every iteration.
        for iter in &proposal.history {
            assert!(iter.min_phi >= floor * (1.0 - 1e-9));
        }
    }

    #[test]
    fn ce_thresholds_cap_and_monotone() {
        let scorer = TauScorer { lines: 2 };
        let nominal = NominalLaw::uniform(2, 0.5).unwrap();
        // γ below the batch median: the cap triggers immediately.
        let proposal = ce_optimize(
            &scorer,
            &nominal,
            FaultKind::ThreePhase,
            1e-9,
            Target::Global,
            &CeConfig {
                n_per_iter: 500,
                ..CeConfig::default()
            },
            5,
        )
        .unwrap();
        assert!((proposal.history[0].threshold - 1e-9).abs() < 1e-15);

        // Thresholds never decrease on a harder target.
        let proposal = ce_optimize(
            &scorer,
            &nominal,
            FaultKind::ThreePhase,
            20.0,
            Target::Global,
            &CeConfig {
                n_per_iter: 500,
                ..CeConfig::default()
            },
            5,
        )
        .unwrap();
        let mut prev = f64::NEG_INFINITY;
        for iter in &proposal.history {
            assert!(iter.threshold >= prev - 1e-12);
            prev = iter.threshold;
        }
    }

    #[test]
    fn is_estimate_with_nominal_proposal_equals_mc() {
        let scorer = TauScorer { lines: 2 };
        let nominal = NominalLaw::uniform(2, 0.1).unwrap();
        let gamma = 5.0;
        let mc = mc_estimate(
            &scorer,
            &nominal,
            FaultKind::ThreePhase,
            gamma,
            20_000,
            Target::Global,
            9,
        )
        .unwrap();
        let is = is_estimate(
            &scorer,
            &nominal.to_scenario_law(),
            &nominal,
            FaultKind::ThreePhase,
            gamma,
            20_000,
            Target::Global,
            9,
        )
        .unwrap();
        // Same seed, same family, unit weights: identical sampling path.
        assert_eq!(mc.q_hat, is.q_hat);
    }

    #[test]
    fn is_estimate_recovers_tail_with_reduced_variance() {
        let scorer = TauScorer { lines: 2 };
        let nominal = NominalLaw::uniform(2, 0.1).unwrap();
        let gamma = 10.0;
        let expected = 0.5 * (-0.1f64 * gamma).exp();
        let proposal = ce_optimize(
            &scorer,
            &nominal,
            FaultKind::ThreePhase,
            gamma,
            Target::Global,
            &CeConfig {
                n_per_iter: 1000,
                ..CeConfig::default()
            },
            13,
        )
        .unwrap();
        let n = 20_000;
        let is = is_estimate(
            &scorer,
            &proposal.law,
            &nominal,
            FaultKind::ThreePhase,
            gamma,
            n,
            Target::Global,
            17,
        )
        .unwrap();
        assert!(
            (is.q_hat - expected).abs() <= 3.0 * is.stderr.max(1e-12),
            "IS Q̂ = {} vs {expected} (stderr {})",
            is.q_hat,
            is.stderr
        );
        let mc = mc_estimate(
            &scorer,
            &nominal,
            FaultKind::ThreePhase,
            gamma,
            n,
            Target::Global,
            17,
        )
        .unwrap();
        assert!(
            is.stderr < mc.stderr,
            "IS stderr {} not below MC stderr {}",
            is.stderr,
            mc.stderr
        );
    }

    #[test]
    fn is_estimator_is_unbiased_over_seeds() {
        // Mean over independent seeds deviates from the analytic value by
        // less than 3 standard errors of the mean.
        let scorer = TauScorer { lines: 2 };
        let nominal = NominalLaw::uniform(2, 0.1).unwrap();
        let gamma = 15.0;
        let expected = 0.5 * (-0.1f64 * gamma).exp();
        let proposal = ce_optimize(
            &scorer,
            &nominal,
            FaultKind::ThreePhase,
            gamma,
            Target::Global,
            &CeConfig::default(),
            23,
        )
        .unwrap();
        let estimates: Vec<f64> = (0..200)
            .map(|seed| {
                is_estimate(
                    &scorer,
                    &proposal.law,
                    &nominal,
                    FaultKind::ThreePhase,
                    gamma,
                    500,
                    Target::Global,
                    1000 + seed,
                )
                .unwrap()
                .q_hat
            })
            .collect();
        let (mean, sem) = mean_and_stderr(&estimates);
        assert!(
            (mean - expected).abs() < 3.0 * sem,
            "mean {mean} vs {expected} (sem {sem})"
        );
    }

    #[test]
    fn pipeline_line_estimate_matches_large_mc_oracle() {
        // Two-bus fixture with a tight limit: the kernel's per-line Q̂
        // agrees with a large plain-MC ground truth within 3 combined
        // standard errors.
        let grid = synthetic::tight_two_bus(1.05);
        let mut config = RiskConfig::new(1.0);
        config.t_end = 8.0;
        config.dt = 0.02;
        config.lambda_nominal = 0.4;
        config.n_per_iter = 500;
        config.n_final = 3000;
        config.seed = 33;
        let report = n1plus(&grid, &config).unwrap();
        let line = &report.lines[0];

        let scorer = GridOverloadScorer::new(&grid, config.simulation()).unwrap();
        let nominal = NominalLaw::uniform(1, config.lambda_nominal).unwrap();
        let truth = mc_estimate(
            &scorer,
            &nominal,
            config.fault_kind,
            config.gamma,
            200_000,
            Target::Line(0),
            99,
        )
        .unwrap();
        assert!(
            truth.q_hat > 1e-3,
            "fixture produces no overload events (Q = {})",
            truth.q_hat
        );
        let combined = 3.0 * (line.stderr + truth.stderr);
        assert!(
            (line.q_hat - truth.q_hat).abs() <= combined,
            "kernel Q̂ {} vs MC ground truth {} (3σ = {combined})",
            line.q_hat,
            truth.q_hat
        );
    }

    #[test]
    fn ce_beats_mc_at_equal_total_budget_on_rare_events() {
        // Event with Q ≈ 2.5e-3: at the same total sample budget
        // (cross-entropy iterations included) the weighted estimator's
        // standard error is at most 1/√5 of the plain MC standard error.
        let scorer = TauScorer { lines: 2 };
        let nominal = NominalLaw::uniform(2, 0.1).unwrap();
        let gamma = 60.0;
        let expected = 0.5 * (-0.1f64 * gamma).exp();
        assert!((1e-4..1e-2).contains(&expected));

        let budget = 20_000usize;
        let ce_config = CeConfig {
            n_per_iter: 1000,
            max_iterations: 8,
            ..CeConfig::default()
        };
        let proposal = ce_optimize(
            &scorer,
            &nominal,
            FaultKind::ThreePhase,
            gamma,
            Target::Global,
            &ce_config,
            71,
        )
        .unwrap();
        let spent = proposal.iterations() * ce_config.n_per_iter;
        assert!(spent < budget, "CE spent the whole budget: {spent}");
        let is = is_estimate(
            &scorer,
            &proposal.law,
            &nominal,
            FaultKind::ThreePhase,
            gamma,
            budget - spent,
            Target::Global,
            72,
        )
        .unwrap();
        let mc = mc_estimate(
            &scorer,
            &nominal,
            FaultKind::ThreePhase,
            gamma,
            budget,
            Target::Global,
            73,
        )
        .unwrap();
        assert!(
            (is.q_hat - expected).abs() <= 3.0 * is.stderr.max(1e-12),
            "IS off target: {} vs {expected}",
            is.q_hat
        );
        assert!(
            is.stderr <= mc.stderr / 5f64.sqrt(),
            "IS stderr {} not ≤ MC stderr {} / √5",
            is.stderr,
            mc.stderr
        );
    }

    #[test]
    fn report_pipeline_runs_and_is_deterministic() {
        let grid = synthetic::stressed_triangle();
        let mut config = RiskConfig::new(2.0);
        config.t_end = 8.0;
        config.dt = 0.05;
        config.lambda_nominal = 0.5;
        config.n_per_iter = 300;
        config.n_final = 400;
        config.seed = 21;
        let a = n1plus(&grid, &config).unwrap();
        let b = n1plus(&grid, &config).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
        assert_eq!(a.lines.len(), grid.line_count());
        assert!(a.global.q_hat >= 0.0);
    }

    #[test]
    fn generous_limits_give_all_green() {
        // Limits far above anything the dynamics can produce.
        let base = synthetic::ring_grid(4);
        let lines: Vec<crate::grid::Line> = base
            .lines()
            .iter()
            .map(|l| {
                let mut l = l.clone();
                l.limit = 1e6;
                l
            })
            .collect();
        let grid = Grid::new(base.buses().to_vec(), lines, base.reference_bus()).unwrap();
        let mut config = RiskConfig::new(0.5);
        config.t_end = 5.0;
        config.dt = 0.05;
        config.n_per_iter = 150;
        config.n_final = 200;
        let report = n1plus(&grid, &config).unwrap();
        assert_eq!(report.global.q_hat, 0.0);
        for line in &report.lines {
            assert_eq!(line.q_hat, 0.0);
            assert_eq!(line.zone, RiskZone::Green);
        }
    }

    #[test]
    fn flat_scores_converge_to_nominal_without_empty_elite() {
        // Targeting line 1 where S ≡ 0: the capped threshold stays at the
        // zero quantile, every sample is elite with unit weight, and the
        // fit settles at the nominal law instead of erroring.
        let scorer = TauScorer { lines: 2 };
        let nominal = NominalLaw::uniform(2, 0.5).unwrap();
        let proposal = ce_optimize(
            &scorer,
            &nominal,
            FaultKind::ThreePhase,
            4.0,
            Target::Line(1),
            &CeConfig {
                n_per_iter: 200,
                max_iterations: 5,
                ..CeConfig::default()
            },
            2,
        )
        .unwrap();
        assert!(proposal.iterations() >= 1);
        for (phi, w) in proposal
            .law
            .line_probs
            .iter()
            .zip(&nominal.line_weights)
        {
            assert!((phi - w).abs() < 0.05, "law drifted from nominal: {phi} vs {w}");
        }
    }

    #[test]
    fn config_round_trips_through_json() {
        let config = RiskConfig::new(5.0);
        let text = serde_json::to_string(&config).unwrap();
        let parsed: RiskConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(config, parsed);
        // Minimal document relies on defaults.
        let parsed: RiskConfig = serde_json::from_str(r#"{"gamma": 2.5}"#).unwrap();
        assert_eq!(parsed.gamma, 2.5);
        assert_eq!(parsed.rho, 0.1);
        assert_eq!(parsed.t_end, 20.0);
    }
}
