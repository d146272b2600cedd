//! End-to-end demo on a synthetic grid: screen every line, then estimate
//! rare overload probabilities with the cross-entropy pipeline.

use n1plus_core::*;

fn main() -> Result<()> {
    let grid = synthetic::stressed_triangle();
    println!(
        "grid: {} buses, {} lines",
        grid.bus_count(),
        grid.line_count()
    );

    // Deterministic N-1 sweep at a fixed fault duration.
    let sim = SimulationConfig {
        kind: FaultKind::ThreePhase,
        t_end: 11.0,
        dt: 0.02,
        method: SolveMethod::Perturbative { steps: 10 },
    };
    let scorer = GridOverloadScorer::new(&grid, sim)?;
    for line in 0..grid.line_count() {
        let score = scorer.score(&FaultScenario::new(line, FaultKind::ThreePhase, 4.0))?;
        println!("fault on line {line}: global overload {:.3} s", score.global);
    }

    // Rare-event screening: P[S >= gamma] per line.
    let mut config = RiskConfig::new(9.5);
    config.lambda_nominal = 0.5;
    config.t_end = 11.0;
    config.dt = 0.02;
    config.n_per_iter = 500;
    config.n_final = 2000;
    config.seed = 7;
    let report = n1plus(&grid, &config)?;
    print!("{}", risk_to_text(&report));
    Ok(())
}
