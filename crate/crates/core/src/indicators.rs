//! Overload metrics, safety-polytope membership, and risk-zone
//! classification.
//!
//! The line overload indicator measures the total time during `[0, T]`
//! that a line's linearized flow `β_ij(t)(θ_i − θ_j)` exceeds its limit,
//! by a rectangle rule on the trajectory samples: a violating sample
//! counts for the width of the interval it opens. The faulted line uses
//! its reduced stiffness while the fault is active.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::dynamics::Trajectory;
use crate::error::{Error, Result};
use crate::grid::Grid;

/// Overload measure of one line with its violating intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineOverload {
    pub line: usize,
    /// Seconds of violation accumulated over the window.
    pub seconds: f64,
    /// Disjoint violating intervals, each within `[0, T]`.
    pub intervals: Vec<(f64, f64)>,
}

/// Per-line and global overload measures of one trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverloadResult {
    pub per_line: Vec<LineOverload>,
    /// Sum of the per-line measures over monitored lines.
    pub global: f64,
}

impl OverloadResult {
    pub fn line_seconds(&self, line: usize) -> f64 {
        self.per_line[line].seconds
    }
}

/// Effective stiffness of a line at sample time `t` for the trajectory's
/// scenario: the fault factor applies to the faulted line while the fault
/// is active.
fn beta_at(traj: &Trajectory, grid: &Grid, line: usize, t: f64) -> f64 {
    let nominal = grid.lines()[line].stiffness;
    match traj.scenario.line {
        Some(faulted) if faulted == line => {
            let tau = traj.scenario.tau.min(traj.end_time());
            if t < tau {
                nominal * traj.scenario.beta_factor()
            } else {
                nominal
            }
        }
        _ => nominal,
    }
}

/// Full overload accounting for every line of the grid in one pass.
pub fn overload_result(traj: &Trajectory, grid: &Grid) -> OverloadResult {
    let n = grid.bus_count();
    assert_eq!(traj.dim(), 2 * n, "trajectory dimension does not match grid");
    let mut per_line = Vec::with_capacity(grid.line_count());
    for (idx, line) in grid.lines().iter().enumerate() {
        let mut seconds = 0.0;
        let mut intervals: Vec<(f64, f64)> = Vec::new();
        for (k, w) in traj.times.windows(2).enumerate() {
            let (t0, t1) = (w[0], w[1]);
            let state = &traj.states[k];
            let flow =
                beta_at(traj, grid, idx, t0) * (state[n + line.from] - state[n + line.to]);
            if flow.abs() > line.limit {
                seconds += t1 - t0;
                match intervals.last_mut() {
                    Some(last) if last.1 == t0 => last.1 = t1,
                    _ => intervals.push((t0, t1)),
                }
            }
        }
        per_line.push(LineOverload {
            line: idx,
            seconds,
            intervals,
        });
    }
    let global = global_from_per_line(&per_line, grid);
    OverloadResult { per_line, global }
}

fn global_from_per_line(per_line: &[LineOverload], grid: &Grid) -> f64 {
    let monitored: Vec<&LineOverload> = per_line
        .iter()
        .filter(|l| grid.lines()[l.line].monitored)
        .collect();
    if monitored.is_empty() {
        log::warn!("no monitored lines; global overload indicator defined as 0");
        return 0.0;
    }
    monitored.iter().map(|l| l.seconds).sum()
}

/// Seconds during which `|β_ij(t)(θ_i − θ_j)| > p̄_ij` for one line.
pub fn line_overload(traj: &Trajectory, line: usize, grid: &Grid) -> f64 {
    assert!(line < grid.line_count(), "unknown line index {line}");
    overload_result(traj, grid).per_line[line].seconds
}

/// Sum of line overloads over the monitored set.
pub fn global_overload(traj: &Trajectory, grid: &Grid) -> f64 {
    overload_result(traj, grid).global
}

/// True iff every line's flow under the phase vector stays within its
/// limit.
pub fn in_safety_polytope(theta: &DVector<f64>, grid: &Grid) -> bool {
    grid.lines()
        .iter()
        .all(|l| (l.stiffness * (theta[l.from] - theta[l.to])).abs() <= l.limit)
}

/// Qualitative zone of an exceedance probability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskZone {
    /// Critical risk.
    Red,
    /// Moderate risk.
    Yellow,
    /// Low risk.
    Green,
}

impl std::fmt::Display for RiskZone {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RiskZone::Red => write!(f, "red"),
            RiskZone::Yellow => write!(f, "yellow"),
            RiskZone::Green => write!(f, "green"),
        }
    }
}

impl std::str::FromStr for RiskZone {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "red" => Ok(RiskZone::Red),
            "yellow" => Ok(RiskZone::Yellow),
            "green" => Ok(RiskZone::Green),
            other => Err(Error::Parse(format!("unknown risk zone {other:?}"))),
        }
    }
}

/// Zone boundaries: red above `red`, yellow in `[yellow, red]`, green
/// below `yellow`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskThresholds {
    pub red: f64,
    pub yellow: f64,
}

impl Default for RiskThresholds {
    fn default() -> Self {
        RiskThresholds {
            red: 0.10,
            yellow: 0.05,
        }
    }
}

/// Classifies an exceedance probability into a zone: `Q > 0.10` red,
/// `0.05 ≤ Q ≤ 0.10` yellow, `Q < 0.05` green under the default
/// thresholds.
pub fn classify_risk(q: f64, thresholds: &RiskThresholds) -> Result<RiskZone> {
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::Validation(format!(
            "probability {q} outside [0, 1]"
        )));
    }
    if q > thresholds.red {
        Ok(RiskZone::Red)
    } else if q >= thresholds.yellow {
        Ok(RiskZone::Yellow)
    } else {
        Ok(RiskZone::Green)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{sample_times, MethodLabel, SolverMeta};
    use crate::fault::{FaultKind, FaultScenario};
    use crate::synthetic;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Builds a trajectory on the two-bus fixture whose single line sees the
    /// given flow profile (flow = β·(θ₀ − θ₁) with β = 1).
    fn trajectory_with_flow(profile: impl Fn(f64) -> f64, t_end: f64, dt: f64) -> Trajectory {
        let times = sample_times(t_end, dt, None);
        let states = times
            .iter()
            .map(|&t| {
                let mut x = DVector::zeros(4);
                x[2] = profile(t);
                x[3] = 0.0;
                x
            })
            .collect();
        Trajectory {
            times,
            states,
            scenario: FaultScenario::none(),
            meta: SolverMeta {
                method: MethodLabel::Exact,
                escalated: false,
            },
        }
    }

    #[test]
    fn always_violating_profile_measures_full_window() {
        // |flow| ≡ 2·p̄ = 4 over [0, 10].
        let grid = synthetic::two_bus();
        let traj = trajectory_with_flow(|_| 4.0, 10.0, 0.1);
        let s = line_overload(&traj, 0, &grid);
        assert!((s - 10.0).abs() < 1e-9);
        let result = overload_result(&traj, &grid);
        assert_eq!(result.per_line[0].intervals, vec![(0.0, 10.0)]);
    }

    #[test]
    fn never_violating_profile_measures_zero() {
        let grid = synthetic::two_bus();
        let traj = trajectory_with_flow(|_| 1.5, 10.0, 0.1);
        assert_eq!(line_overload(&traj, 0, &grid), 0.0);
    }

    #[test]
    fn step_profile_measures_the_step() {
        // Violates exactly on [2, 5): expected measure 3 within Δt.
        let grid = synthetic::two_bus();
        let dt = 0.01;
        let traj = trajectory_with_flow(|t| if (2.0..5.0).contains(&t) { 3.0 } else { 0.5 }, 10.0, dt);
        let s = line_overload(&traj, 0, &grid);
        assert!(
            (s - 3.0).abs() <= dt + 1e-12,
            "step measure {s} not within Δt of 3"
        );
        let result = overload_result(&traj, &grid);
        assert_eq!(result.per_line[0].intervals.len(), 1);
        let (start, end) = result.per_line[0].intervals[0];
        assert!((start - 2.0).abs() <= dt + 1e-12);
        assert!((end - 5.0).abs() <= dt + 1e-12);
    }

    #[test]
    fn global_sums_monitored_lines_only() {
        let mut grid = synthetic::ring_grid(4);
        // Trajectory with a large phase spread violating several lines.
        let dynamics = crate::dynamics::GridDynamics::new(&grid).unwrap();
        let scenario = FaultScenario::new(0, FaultKind::ThreePhase, 1.0);
        let traj = dynamics
            .solve_piecewise(&scenario, 5.0, 0.01, crate::dynamics::SolveMethod::Exact)
            .unwrap();
        let all = overload_result(&traj, &grid);
        let manual: f64 = all.per_line.iter().map(|l| l.seconds).sum();
        assert!((all.global - manual).abs() < 1e-12, "additivity violated");

        // Un-monitor one line; it should drop out of the global sum.
        grid = {
            let mut lines = grid.lines().to_vec();
            lines[1].monitored = false;
            Grid::new(grid.buses().to_vec(), lines, grid.reference_bus()).unwrap()
        };
        let partial = overload_result(&traj, &grid);
        let expected: f64 = partial
            .per_line
            .iter()
            .filter(|l| l.line != 1)
            .map(|l| l.seconds)
            .sum();
        assert!((partial.global - expected).abs() < 1e-12);
    }

    #[test]
    fn empty_monitored_set_is_zero() {
        let base = synthetic::two_bus();
        let mut lines = base.lines().to_vec();
        lines[0].monitored = false;
        let grid = Grid::new(base.buses().to_vec(), lines, 0).unwrap();
        let traj = trajectory_with_flow(|_| 10.0, 1.0, 0.1);
        assert_eq!(global_overload(&traj, &grid), 0.0);
        assert!(line_overload(&traj, 0, &grid) > 0.0);
    }

    #[test]
    fn faulted_line_uses_reduced_stiffness_during_fault() {
        // Phase spread of 2.4 with β = 1, p̄ = 2: violating nominally, but a
        // single-phase fault scales the flow to 1.6 < 2 during [0, τ].
        let grid = synthetic::two_bus();
        let dt = 0.1;
        let tau = 1.0;
        let mut traj = trajectory_with_flow(|_| 2.4, 3.0, dt);
        traj.scenario = FaultScenario::new(0, FaultKind::SinglePhase, tau);
        traj.times = sample_times(3.0, dt, Some(tau));
        traj.states = traj
            .times
            .iter()
            .map(|_| {
                let mut x = DVector::zeros(4);
                x[2] = 2.4;
                x
            })
            .collect();
        let s = line_overload(&traj, 0, &grid);
        assert!(
            (s - 2.0).abs() <= dt + 1e-12,
            "only the post-fault 2 s should violate, got {s}"
        );
    }

    #[test]
    fn monotone_in_limit() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let grid = synthetic::ring_grid(4);
        let dynamics = crate::dynamics::GridDynamics::new(&grid).unwrap();
        for trial in 0..20 {
            let line = rng.gen_range(0..grid.line_count());
            let tau = rng.gen_range(0.1..2.0);
            let scenario = FaultScenario::new(line, FaultKind::ThreePhase, tau);
            let traj = dynamics
                .solve_piecewise(&scenario, 6.0, 0.02, crate::dynamics::SolveMethod::Exact)
                .unwrap();
            let factor = 1.0 + rng.gen_range(0.0..1.5);
            for target in 0..grid.line_count() {
                let raised = {
                    let mut lines = grid.lines().to_vec();
                    lines[target].limit *= factor;
                    Grid::new(grid.buses().to_vec(), lines, grid.reference_bus()).unwrap()
                };
                let before = line_overload(&traj, target, &grid);
                let after = line_overload(&traj, target, &raised);
                assert!(
                    after <= before + 1e-12,
                    "trial {trial}: raising p̄ on line {target} increased S: {before} -> {after}"
                );
            }
        }
    }

    #[test]
    fn refining_the_grid_moves_the_measure_by_at_most_crossings_times_dt() {
        // Profile with 4 threshold crossings; halving Δt changes S by at
        // most 4·Δt.
        let grid = synthetic::two_bus();
        let profile = |t: f64| {
            if (1.3..4.1).contains(&t) || (6.7..7.9).contains(&t) {
                3.0
            } else {
                0.5
            }
        };
        let measure = |dt: f64| {
            let traj = trajectory_with_flow(profile, 10.0, dt);
            line_overload(&traj, 0, &grid)
        };
        let coarse = measure(0.02);
        let fine = measure(0.01);
        assert!(
            (coarse - fine).abs() <= 4.0 * 0.02 + 1e-12,
            "refinement moved S from {coarse} to {fine}"
        );
    }

    #[test]
    fn polytope_membership() {
        let grid = synthetic::ring_grid(5);
        let theta0 = grid.steady_state().unwrap();
        assert!(in_safety_polytope(&theta0, &grid));
        assert!(in_safety_polytope(&DVector::zeros(5), &grid));

        // Two-bus with β = 1, p̄ = 1: θ = (0, −1.5) has |flow| = 1.5 > 1.
        let tight = synthetic::tight_two_bus(1.0);
        let theta = DVector::from_vec(vec![0.0, -1.5]);
        assert!(!in_safety_polytope(&theta, &tight));
    }

    #[test]
    fn risk_zones() {
        let t = RiskThresholds::default();
        assert_eq!(classify_risk(0.12, &t).unwrap(), RiskZone::Red);
        assert_eq!(classify_risk(0.07, &t).unwrap(), RiskZone::Yellow);
        assert_eq!(classify_risk(0.10, &t).unwrap(), RiskZone::Yellow);
        assert_eq!(classify_risk(0.05, &t).unwrap(), RiskZone::Yellow);
        assert_eq!(classify_risk(0.0, &t).unwrap(), RiskZone::Green);
        assert!(classify_risk(-0.1, &t).is_err());
        assert!(classify_risk(1.1, &t).is_err());
        assert!(classify_risk(f64::NAN, &t).is_err());
    }
}
