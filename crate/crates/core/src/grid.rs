//! Grid graph, weighted Laplacian, equilibrium, and the first-order state
//! system for the linearized swing dynamics.
//!
//! All quantities are per-unit, time in seconds, phases in radians. The
//! state vector is `x = (θ̇; θ)` of dimension `2n`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the net injection balance `Σ p_i = 0` at load time.
pub const BALANCE_TOL: f64 = 1e-9;

/// Residual tolerance on the equilibrium solve `L θ₀ = p`.
pub const STEADY_STATE_TOL: f64 = 1e-10;

/// Version tag written to and required from grid documents.
pub const GRID_FORMAT: &str = "n1plus-grid/1";

/// Bus role in the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BusKind {
    Generator,
    Load,
}

/// A bus with rotor dynamics parameters and a fixed net injection.
#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    pub id: usize,
    pub kind: BusKind,
    /// Inertia constant m_i (s²·pu), strictly positive.
    pub inertia: f64,
    /// Damping coefficient d_i (s·pu), strictly positive.
    pub damping: f64,
    /// Net injection p_i (pu): positive generation, negative load.
    pub injection: f64,
    /// Voltage magnitude V_i (pu), strictly positive. Defaults to 1.0.
    pub voltage: f64,
}

/// A transmission line between two buses.
#[derive(Debug, Clone, PartialEq)]
pub struct Line {
    pub from: usize,
    pub to: usize,
    /// Line susceptance B_ij (pu).
    pub susceptance: f64,
    /// Effective stiffness β_ij = V_i·V_j·B_ij (pu), strictly positive.
    pub stiffness: f64,
    /// Phase-flow safety limit p̄_ij (pu), strictly positive.
    pub limit: f64,
    /// Whether the line belongs to the monitored set of the global
    /// overload indicator.
    pub monitored: bool,
}

impl Line {
    /// Unordered endpoint pair with the smaller id first.
    pub fn endpoints(&self) -> (usize, usize) {
        if self.from <= self.to {
            (self.from, self.to)
        } else {
            (self.to, self.from)
        }
    }
}

/// A validated static network. Immutable after construction; safe to share
/// read-only across worker threads.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    buses: Vec<Bus>,
    lines: Vec<Line>,
    reference_bus: usize,
}

/// The companion-form restatement of the swing dynamics:
/// `ẋ = A₀ x + P` with `x = (θ̇; θ)`.
#[derive(Debug, Clone)]
pub struct StateSystem {
    /// The 2n×2n state matrix `[[−M⁻¹D, −M⁻¹L], [I, 0]]`.
    pub matrix: DMatrix<f64>,
    /// The constant forcing `(M⁻¹p; 0)`.
    pub forcing: DVector<f64>,
    /// The equilibrium state `(0; θ₀)`; a fixed point of the dynamics.
    pub equilibrium: DVector<f64>,
}

// ---------------------------------------------------------------------------
// On-disk schema
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct BusDoc {
    id: usize,
    kind: BusKind,
    m: f64,
    d: f64,
    p: f64,
    #[serde(rename = "V", skip_serializing_if = "Option::is_none")]
    voltage: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct LineDoc {
    from: usize,
    to: usize,
    #[serde(rename = "B", skip_serializing_if = "Option::is_none")]
    susceptance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    beta: Option<f64>,
    limit: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    monitored: Option<bool>,
}

#[derive(Serialize, Deserialize)]
struct GridDoc {
    format: String,
    buses: Vec<BusDoc>,
    lines: Vec<LineDoc>,
    reference_bus: usize,
}

impl Grid {
    /// Validates and constructs a grid. Every invariant violation is
    /// reported with the name of the broken invariant.
    pub fn new(buses: Vec<Bus>, lines: Vec<Line>, reference_bus: usize) -> Result<Self> {
        if buses.is_empty() {
            return Err(Error::Validation("grid has no buses".into()));
        }
        let n = buses.len();
        for (pos, bus) in buses.iter().enumerate() {
            if bus.id != pos {
                return Err(Error::Validation(format!(
                    "bus ids must be consecutive 0-based indices: position {pos} has id {}",
                    bus.id
                )));
            }
            if !(bus.inertia > 0.0) {
                return Err(Error::Validation(format!(
                    "nonpositive parameter: bus {} inertia m = {}",
                    bus.id, bus.inertia
                )));
            }
            if !(bus.damping > 0.0) {
                return Err(Error::Validation(format!(
                    "nonpositive parameter: bus {} damping d = {}",
                    bus.id, bus.damping
                )));
            }
            if !(bus.voltage > 0.0) {
                return Err(Error::Validation(format!(
                    "nonpositive parameter: bus {} voltage V = {}",
                    bus.id, bus.voltage
                )));
            }
        }
        let mut seen_pairs = std::collections::BTreeSet::new();
        for (idx, line) in lines.iter().enumerate() {
            if line.from >= n || line.to >= n {
                return Err(Error::Validation(format!(
                    "line {idx} references unknown bus ({}, {})",
                    line.from, line.to
                )));
            }
            if line.from == line.to {
                return Err(Error::Validation(format!(
                    "self-loop: line {idx} connects bus {} to itself",
                    line.from
                )));
            }
            if !seen_pairs.insert(line.endpoints()) {
                return Err(Error::Validation(format!(
                    "parallel lines between buses {} and {}; pre-merge them into one",
                    line.from, line.to
                )));
            }
            if !(line.stiffness > 0.0) {
                return Err(Error::Validation(format!(
                    "nonpositive parameter: line {idx} stiffness beta = {}",
                    line.stiffness
                )));
            }
            if !(line.limit > 0.0) {
                return Err(Error::Validation(format!(
                    "nonpositive parameter: line {idx} limit = {}",
                    line.limit
                )));
            }
        }
        if reference_bus >= n {
            return Err(Error::Validation(format!(
                "reference bus {reference_bus} does not exist"
            )));
        }
        let imbalance: f64 = buses.iter().map(|b| b.injection).sum();
        if imbalance.abs() > BALANCE_TOL {
            return Err(Error::Validation(format!(
                "injections unbalanced: sum p = {imbalance:e} exceeds tolerance {BALANCE_TOL:e}"
            )));
        }
        let grid = Grid {
            buses,
            lines,
            reference_bus,
        };
        if !grid.is_connected() {
            return Err(Error::Validation("disconnected graph".into()));
        }
        Ok(grid)
    }

    /// Parses a grid document from JSON text and validates it.
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: GridDoc =
            serde_json::from_str(text).map_err(|e| Error::Parse(format!("grid document: {e}")))?;
        if doc.format != GRID_FORMAT {
            return Err(Error::Parse(format!(
                "unsupported grid format {:?}; expected {GRID_FORMAT:?}",
                doc.format
            )));
        }
        let buses: Vec<Bus> = doc
            .buses
            .iter()
            .map(|b| Bus {
                id: b.id,
                kind: b.kind,
                inertia: b.m,
                damping: b.d,
                injection: b.p,
                voltage: b.voltage.unwrap_or(1.0),
            })
            .collect();
        let mut lines = Vec::with_capacity(doc.lines.len());
        for (idx, l) in doc.lines.iter().enumerate() {
            let (vi, vj) = match (buses.get(l.from), buses.get(l.to)) {
                (Some(a), Some(b)) => (a.voltage, b.voltage),
                _ => {
                    return Err(Error::Validation(format!(
                        "line {idx} references unknown bus ({}, {})",
                        l.from, l.to
                    )))
                }
            };
            let (susceptance, stiffness) = match (l.susceptance, l.beta) {
                (Some(b), None) => (b, vi * vj * b),
                (None, Some(beta)) => (beta / (vi * vj), beta),
                (Some(_), Some(_)) => {
                    return Err(Error::Parse(format!(
                        "line {idx} specifies both B and beta; exactly one is required"
                    )))
                }
                (None, None) => {
                    return Err(Error::Parse(format!(
                        "line {idx} specifies neither B nor beta; exactly one is required"
                    )))
                }
            };
            lines.push(Line {
                from: l.from,
                to: l.to,
                susceptance,
                stiffness,
                limit: l.limit,
                monitored: l.monitored.unwrap_or(true),
            });
        }
        Grid::new(buses, lines, doc.reference_bus)
    }

    /// Loads and validates a grid document from a file.
    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    /// Serializes the grid back to its document form. Loading the result
    /// reproduces the grid bit-identically.
    pub fn to_json(&self) -> String {
        let doc = GridDoc {
            format: GRID_FORMAT.to_string(),
            buses: self
                .buses
                .iter()
                .map(|b| BusDoc {
                    id: b.id,
                    kind: b.kind,
                    m: b.inertia,
                    d: b.damping,
                    p: b.injection,
                    voltage: Some(b.voltage),
                })
                .collect(),
            lines: self
                .lines
                .iter()
                .map(|l| LineDoc {
                    from: l.from,
                    to: l.to,
                    susceptance: None,
                    beta: Some(l.stiffness),
                    limit: l.limit,
                    monitored: Some(l.monitored),
                })
                .collect(),
            reference_bus: self.reference_bus,
        };
        serde_json::to_string_pretty(&doc).expect("grid document serialization cannot fail")
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn bus_count(&self) -> usize {
        self.buses.len()
    }

    pub fn line_count(&self) -> usize {
        self.lines.len()
    }

    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }

    pub fn lines(&self) -> &[Line] {
        &self.lines
    }

    pub fn line(&self, idx: usize) -> Option<&Line> {
        self.lines.get(idx)
    }

    pub fn reference_bus(&self) -> usize {
        self.reference_bus
    }

    fn is_connected(&self) -> bool {
        let n = self.buses.len();
        let mut adjacency = vec![Vec::new(); n];
        for line in &self.lines {
            adjacency[line.from].push(line.to);
            adjacency[line.to].push(line.from);
        }
        let mut visited = vec![false; n];
        let mut stack = vec![0usize];
        visited[0] = true;
        let mut count = 1;
        while let Some(i) = stack.pop() {
            for &j in &adjacency[i] {
                if !visited[j] {
                    visited[j] = true;
                    count += 1;
                    stack.push(j);
                }
            }
        }
        count == n
    }

    /// The weighted graph Laplacian: `L_ii = Σ_j β_ij`, `L_ij = −β_ij` on
    /// lines, zero elsewhere. Symmetric with zero row sums.
    pub fn laplacian(&self) -> DMatrix<f64> {
        let n = self.buses.len();
        let mut l = DMatrix::zeros(n, n);
        for line in &self.lines {
            let (i, j) = (line.from, line.to);
            let beta = line.stiffness;
            l[(i, i)] += beta;
            l[(j, j)] += beta;
            l[(i, j)] -= beta;
            l[(j, i)] -= beta;
        }
        l
    }

    /// Injection vector p.
    pub fn injections(&self) -> DVector<f64> {
        DVector::from_iterator(self.buses.len(), self.buses.iter().map(|b| b.injection))
    }

    /// Inertia diagonal m.
    pub fn inertias(&self) -> DVector<f64> {
        DVector::from_iterator(self.buses.len(), self.buses.iter().map(|b| b.inertia))
    }

    /// Damping diagonal d.
    pub fn dampings(&self) -> DVector<f64> {
        DVector::from_iterator(self.buses.len(), self.buses.iter().map(|b| b.damping))
    }

    /// Pre-fault equilibrium phases: solves `L θ₀ = p` on the reduced
    /// system with the reference bus removed, then re-embeds with
    /// `θ₀(reference) = 0`.
    ///
    /// The full Laplacian is singular (zero row sums), so the solve is done
    /// on the (n−1)-dimensional reduced system, which is nonsingular for a
    /// connected grid.
    pub fn steady_state(&self) -> Result<DVector<f64>> {
        let n = self.buses.len();
        let p = self.injections();
        if n == 1 {
            return Ok(DVector::zeros(1));
        }
        let l = self.laplacian();
        let keep: Vec<usize> = (0..n).filter(|&i| i != self.reference_bus).collect();
        let mut reduced = DMatrix::zeros(n - 1, n - 1);
        let mut rhs = DVector::zeros(n - 1);
        for (r, &i) in keep.iter().enumerate() {
            rhs[r] = p[i];
            for (c, &j) in keep.iter().enumerate() {
                reduced[(r, c)] = l[(i, j)];
            }
        }
        let solved = reduced
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Numerical("singular reduced Laplacian system".into()))?;
        let mut theta = DVector::zeros(n);
        for (r, &i) in keep.iter().enumerate() {
            theta[i] = solved[r];
        }
        let residual = (&l * &theta - &p).amax();
        if residual > STEADY_STATE_TOL {
            return Err(Error::Numerical(format!(
                "steady-state residual {residual:e} exceeds {STEADY_STATE_TOL:e}"
            )));
        }
        Ok(theta)
    }

    /// Builds the companion-form state system. `matrix` has blocks
    /// `[[−M⁻¹D, −M⁻¹L], [I, 0]]`, `forcing = (M⁻¹p; 0)`, and
    /// `equilibrium = (0; θ₀)` satisfies `matrix·equilibrium + forcing = 0`.
    pub fn state_system(&self) -> Result<StateSystem> {
        let n = self.buses.len();
        let l = self.laplacian();
        let theta0 = self.steady_state()?;

        let mut a = DMatrix::zeros(2 * n, 2 * n);
        for i in 0..n {
            let m_inv = 1.0 / self.buses[i].inertia;
            a[(i, i)] = -self.buses[i].damping * m_inv;
            for j in 0..n {
                a[(i, n + j)] = -l[(i, j)] * m_inv;
            }
            a[(n + i, i)] = 1.0;
        }

        let mut forcing = DVector::zeros(2 * n);
        let mut equilibrium = DVector::zeros(2 * n);
        for i in 0..n {
            forcing[i] = self.buses[i].injection / self.buses[i].inertia;
            equilibrium[n + i] = theta0[i];
        }

        Ok(StateSystem {
            matrix: a,
            forcing,
            equilibrium,
        })
    }

    /// The state matrix of the grid with line `line_idx`'s stiffness scaled
    /// by `factor` (1.0 = nominal, 0.0 = line removed); an independent
    /// rebuild used to cross-check fault perturbations.
    #[cfg(test)]
    pub(crate) fn state_matrix_with_scaled_line(
        &self,
        line_idx: usize,
        factor: f64,
    ) -> Result<DMatrix<f64>> {
        let line = self
            .line(line_idx)
            .ok_or_else(|| Error::Validation(format!("unknown line index {line_idx}")))?;
        let n = self.buses.len();
        let mut a = self.state_system()?.matrix;
        let delta = (factor - 1.0) * line.stiffness;
        let (i, j) = (line.from, line.to);
        // L_faulted = L + delta·(e_i−e_j)(e_i−e_j)ᵀ, entering the upper-right
        // block as −M⁻¹ΔL.
        a[(i, n + i)] -= delta / self.buses[i].inertia;
        a[(i, n + j)] += delta / self.buses[i].inertia;
        a[(j, n + j)] -= delta / self.buses[j].inertia;
        a[(j, n + i)] += delta / self.buses[j].inertia;
        Ok(a)
    }
}
