//! Deterministic synthetic grids used by tests, benchmarks, and examples.
//!
//! Parameters are intentionally heterogeneous (varied inertia, damping, and
//! stiffness) so state matrices have well-separated spectra, and every
//! fixture keeps its equilibrium flows inside the line limits.

use crate::grid::{Bus, BusKind, Grid, Line};

fn bus(id: usize, inertia: f64, damping: f64, injection: f64) -> Bus {
    Bus {
        id,
        kind: if injection >= 0.0 {
            BusKind::Generator
        } else {
            BusKind::Load
        },
        inertia,
        damping,
        injection,
        voltage: 1.0,
    }
}

fn line(from: usize, to: usize, stiffness: f64, limit: f64) -> Line {
    Line {
        from,
        to,
        susceptance: stiffness,
        stiffness,
        limit,
        monitored: true,
    }
}

/// The minimal two-bus fixture: β = 1, p = (+1, −1), m = d = 1, p̄ = 2.
pub fn two_bus() -> Grid {
    Grid::new(
        vec![bus(0, 1.0, 1.0, 1.0), bus(1, 1.0, 1.0, -1.0)],
        vec![line(0, 1, 1.0, 2.0)],
        0,
    )
    .expect("two-bus fixture is valid")
}

/// Two-bus fixture with a tight flow limit, used for rare-event estimation
/// checks where post-fault swings must actually violate the limit.
pub fn tight_two_bus(limit: f64) -> Grid {
    Grid::new(
        vec![bus(0, 1.0, 0.4, 1.0), bus(1, 1.2, 0.5, -1.0)],
        vec![line(0, 1, 1.0, limit)],
        0,
    )
    .expect("tight two-bus fixture is valid")
}

/// Ring of `n` buses with uniform stiffness and zero injections.
pub fn uniform_ring(n: usize, stiffness: f64) -> Grid {
    let buses = (0..n).map(|i| bus(i, 1.0, 1.0, 0.0)).collect();
    let lines = (0..n)
        .map(|i| line(i, (i + 1) % n, stiffness, 10.0))
        .collect();
    Grid::new(buses, lines, 0).expect("uniform ring is valid")
}

/// Ring with zero injections but heterogeneous machine parameters; the
/// equilibrium is the origin, which makes energy accounting exact.
pub fn zero_injection_ring(n: usize) -> Grid {
    let buses = (0..n)
        .map(|i| bus(i, inertia_at(i), damping_at(i), 0.0))
        .collect();
    let lines = (0..n)
        .map(|i| line(i, (i + 1) % n, stiffness_at(i), 10.0))
        .collect();
    Grid::new(buses, lines, 0).expect("zero-injection ring is valid")
}

fn inertia_at(i: usize) -> f64 {
    0.8 + 0.12 * (((i * 3 + 1) % 5) as f64)
}

fn damping_at(i: usize) -> f64 {
    0.6 + 0.11 * (((i * 5 + 2) % 4) as f64)
}

fn stiffness_at(i: usize) -> f64 {
    1.1 + 0.17 * (((i * 2 + 1) % 6) as f64)
}

fn raw_injection_at(i: usize, n: usize) -> f64 {
    // Alternate generation and load around the ring.
    let magnitude = 0.35 + 0.05 * ((i % 3) as f64);
    if i % 2 == 0 {
        magnitude
    } else if i + 1 == n && n % 2 == 1 {
        0.0
    } else {
        -magnitude
    }
}

fn balanced_injections(n: usize) -> Vec<f64> {
    let mut p: Vec<f64> = (0..n).map(|i| raw_injection_at(i, n)).collect();
    let mean = p.iter().sum::<f64>() / n as f64;
    for v in &mut p {
        *v -= mean;
    }
    p
}

/// Resizes limits so the equilibrium flows sit inside them with `margin`
/// headroom, with an absolute floor of 0.8 pu.
fn with_feasible_limits(buses: Vec<Bus>, mut lines: Vec<Line>, margin: f64) -> Grid {
    let provisional = Grid::new(buses.clone(), lines.clone(), 0).expect("provisional grid");
    let theta = provisional
        .steady_state()
        .expect("fixture equilibrium solve");
    for l in &mut lines {
        let flow = (l.stiffness * (theta[l.from] - theta[l.to])).abs();
        l.limit = (flow * margin).max(0.8);
    }
    Grid::new(buses, lines, 0).expect("fixture with feasible limits")
}

/// Heterogeneous ring of `n ≥ 3` buses with balanced injections. Deleting
/// any single line keeps the graph connected.
pub fn ring_grid(n: usize) -> Grid {
    assert!(n >= 3 || n == 2, "ring needs at least 3 buses");
    if n == 2 {
        return two_bus();
    }
    let p = balanced_injections(n);
    let buses: Vec<Bus> = (0..n)
        .map(|i| bus(i, inertia_at(i), damping_at(i), p[i]))
        .collect();
    let lines: Vec<Line> = (0..n)
        .map(|i| line(i, (i + 1) % n, stiffness_at(i), 1.0))
        .collect();
    with_feasible_limits(buses, lines, 2.0)
}

/// Ring plus two chords: a 2-edge-connected meshed fixture. With `n = 10`
/// this is the 12-line screening fixture used throughout the test suite.
pub fn meshed_grid(n: usize) -> Grid {
    assert!(n >= 6, "meshed fixture needs at least 6 buses");
    let p = balanced_injections(n);
    let buses: Vec<Bus> = (0..n)
        .map(|i| bus(i, inertia_at(i), damping_at(i), p[i]))
        .collect();
    let mut lines: Vec<Line> = (0..n)
        .map(|i| line(i, (i + 1) % n, stiffness_at(i), 1.0))
        .collect();
    lines.push(line(0, n / 2, stiffness_at(n) * 0.8, 1.0));
    lines.push(line(n / 4, 3 * n / 4, stiffness_at(n + 1) * 0.9, 1.0));
    with_feasible_limits(buses, lines, 2.0)
}

/// Densely meshed 10-bus, 25-line fixture whose spectral gaps stay wide
/// along every single-line fault homotopy, so the multi-step expansion
/// converges uniformly across all line deletions. Used for error-vs-step
/// pattern studies; parameters are frozen literals.
pub fn perturbation_study_grid() -> Grid {
    let spec: [(f64, f64, f64); 10] = [
        (0.7473965650594245, 2.747233622977178, 0.34683500906460807),
        (1.6579318086847683, 2.4740587838979833, -0.36471895215130007),
        (1.8518205353067216, 1.288212120239248, 0.4388668351954747),
        (1.2984973832887388, 1.3797576031321348, -0.4558917081518581),
        (0.9232183496064383, 2.8640409886407268, 0.41845858249347073),
        (0.7250278303454583, 2.743655732942278, -0.2815438667923322),
        (0.7220807951582473, 1.6494876621239858, 0.43066467913425016),
        (0.7847922883044511, 1.81854034333034, -0.5219894623154504),
        (1.9034072472481982, 2.101617116749137, 0.2613525826624994),
        (0.8146013914887632, 1.628143675380503, -0.2720336991393625),
    ];
    let buses: Vec<Bus> = spec
        .iter()
        .enumerate()
        .map(|(i, &(m, d, p))| bus(i, m, d, p))
        .collect();
    let edges: [(usize, usize, f64); 25] = [
        (0, 1, 2.0663893305729353),
        (1, 2, 2.2406277613726147),
        (2, 3, 2.491949902458626),
        (3, 4, 2.111376402160721),
        (4, 5, 2.1116198524104646),
        (5, 6, 4.271539696567005),
        (6, 7, 3.007161367857775),
        (7, 8, 1.715449093431428),
        (8, 9, 1.7815328188349464),
        (9, 0, 2.986438206245526),
        (0, 2, 1.703202887553132),
        (1, 3, 2.0077461177058007),
        (2, 4, 1.6679453075464612),
        (3, 5, 1.5074821504309026),
        (4, 6, 1.327489951895185),
        (5, 7, 1.9788553013908827),
        (6, 8, 2.1172964319925445),
        (7, 9, 2.313849847474121),
        (8, 0, 1.1813602090947735),
        (9, 1, 2.3001966869720265),
        (0, 5, 1.9938920530264692),
        (1, 6, 1.6825292527310471),
        (2, 7, 1.7763974713634494),
        (3, 8, 1.3419923241620932),
        (4, 9, 1.8676739421899298),
    ];
    let lines: Vec<Line> = edges
        .iter()
        .map(|&(from, to, stiffness)| line(from, to, stiffness, 10.0))
        .collect();
    Grid::new(buses, lines, 0).expect("perturbation study grid is valid")
}

/// Stressed triangle `0 — 1 — 2 — 0`: losing line 0 reroutes bus 0's
/// export over line 2, holding it above its limit for the fault duration,
/// so the global overload ramps roughly linearly in τ. Faults on the other
/// lines stay within limits. Used for rare-event estimation studies.
pub fn stressed_triangle() -> Grid {
    let buses = vec![
        bus(0, 1.0, 0.8, 1.0),
        bus(1, 1.2, 0.9, -0.6),
        bus(2, 0.9, 0.7, -0.4),
    ];
    let lines = vec![
        // 0—1: carries most of the export; generous limit.
        line(0, 1, 1.5, 1.3),
        // 1—2: lightly loaded.
        line(1, 2, 1.2, 0.9),
        // 2—0: nominal flow ≈ 0.39, rerouted flow ≈ 1.0 during a fault on
        // line 0; the limit sits between the two.
        line(2, 0, 1.4, 0.8),
    ];
    Grid::new(buses, lines, 0).expect("stressed triangle fixture is valid")
}
