//! End-to-end tests of the `n1plus` binary: exit codes, emitted artifacts,
//! determinism, and cross-command consistency.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::atomic::{AtomicUsize, Ordering};

use n1plus_core::{
    bench_from_csv, error_sweep_from_csv, risk_rows_from_csv, screen_from_csv, split_header,
    synthetic, trajectory_from_csv, Grid,
};

static DIR_COUNTER: AtomicUsize = AtomicUsize::new(0);

fn work_dir(tag: &str) -> PathBuf {
    let id = DIR_COUNTER.fetch_add(1, Ordering::SeqCst);
    let dir = std::env::temp_dir().join(format!(
        "n1plus-cli-test-{}-{tag}-{id}",
        std::process::id()
    ));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_grid(dir: &Path, grid: &Grid) -> PathBuf {
    let path = dir.join("grid.json");
    grid.save(&path).unwrap();
    path
}

fn n1plus(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_n1plus"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

fn stderr(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

#[test]
fn validate_accepts_good_grid_and_rejects_bad() {
    let dir = work_dir("validate");
    let grid_path = write_grid(&dir, &synthetic::ring_grid(4));
    let ok = n1plus(&["validate", "--grid", grid_path.to_str().unwrap()]);
    assert!(ok.status.success(), "stderr: {}", stderr(&ok));
    assert!(stdout(&ok).contains("4 buses"));

    // Unbalanced injections must be named in the failure.
    let bad = dir.join("bad.json");
    let text = std::fs::read_to_string(&grid_path)
        .unwrap()
        .replacen("-0.4", "-0.3", 1);
    std::fs::write(&bad, text).unwrap();
    let out = n1plus(&["validate", "--grid", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(
        stderr(&out).contains("injections unbalanced"),
        "stderr: {}",
        stderr(&out)
    );
}

#[test]
fn missing_grid_file_is_a_usage_error() {
    let out = n1plus(&["validate", "--grid", "/nonexistent/grid.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(
        stderr(&out).contains("grid file not found"),
        "stderr: {}",
        stderr(&out)
    );
}

#[test]
fn simulate_writes_parseable_artifacts() {
    let dir = work_dir("simulate");
    let grid = synthetic::ring_grid(4);
    let grid_path = write_grid(&dir, &grid);
    let out = n1plus(&[
        "simulate",
        "--grid",
        grid_path.to_str().unwrap(),
        "--line",
        "1",
        "--kind",
        "three-phase",
        "--tau",
        "0.5",
        "--T",
        "5",
        "--dt",
        "0.05",
        "--out-dir",
        dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    assert!(stdout(&out).contains("global overload"));

    let text = std::fs::read_to_string(dir.join("trajectory.csv")).unwrap();
    let traj = trajectory_from_csv(&text).unwrap();
    assert_eq!(traj.scenario.line, Some(1));
    assert_eq!(traj.bus_count(), 4);
    assert!((traj.end_time() - 5.0).abs() < 1e-9);
    // Round trip is lossless.
    let reparsed = trajectory_from_csv(&n1plus_core::trajectory_to_csv(&traj)).unwrap();
    assert_eq!(reparsed, traj);

    let (header, _) = split_header(&text);
    assert!(!header.is_empty());
}

#[test]
fn simulate_rejects_negative_duration_and_unknown_line() {
    let dir = work_dir("simulate-bad");
    let grid_path = write_grid(&dir, &synthetic::ring_grid(4));
    let out = n1plus(&[
        "simulate",
        "--grid",
        grid_path.to_str().unwrap(),
        "--line",
        "0",
        "--tau",
        "-1",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("negative fault duration"));

    let out = n1plus(&[
        "simulate",
        "--grid",
        grid_path.to_str().unwrap(),
        "--line",
        "99",
        "--tau",
        "0.5",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("unknown line"));
}

#[test]
fn screen_emits_square_matrix_consistent_with_simulate() {
    let dir = work_dir("screen");
    let grid = synthetic::ring_grid(4);
    let grid_path = write_grid(&dir, &grid);
    let shared = [
        "--grid",
        grid_path.to_str().unwrap(),
        "--T",
        "6",
        "--dt",
        "0.02",
        "--out-dir",
        dir.to_str().unwrap(),
    ];
    let mut args = vec![
        "screen",
        "--kind",
        "three-phase",
        "--tau",
        "0.5",
        "--solver",
        "exact",
    ];
    args.extend_from_slice(&shared);
    let out = n1plus(&args);
    assert!(out.status.success(), "stderr: {}", stderr(&out));

    let matrix_text = std::fs::read_to_string(dir.join("screen_matrix.csv")).unwrap();
    let screen = screen_from_csv(&matrix_text).unwrap();
    assert_eq!(screen.line_count(), 4);
    assert!(screen.matrix.iter().all(|row| row.len() == 4));
    assert!(dir.join("critical_lines.csv").exists());

    // Row k equals what simulate reports for a fault on line k.
    for line in 0..4 {
        let sim_dir = work_dir(&format!("screen-sim-{line}"));
        let line_arg = line.to_string();
        let mut args = vec![
            "simulate",
            "--line",
            &line_arg,
            "--kind",
            "three-phase",
            "--tau",
            "0.5",
            "--solver",
            "exact",
            "--grid",
            grid_path.to_str().unwrap(),
            "--T",
            "6",
            "--dt",
            "0.02",
            "--out-dir",
        ];
        args.push(sim_dir.to_str().unwrap());
        let out = n1plus(&args);
        assert!(out.status.success(), "stderr: {}", stderr(&out));
        let overload_text = std::fs::read_to_string(sim_dir.join("overload.csv")).unwrap();
        let (_, body) = split_header(&overload_text);
        for row in body.iter().skip(1) {
            let fields: Vec<&str> = row.split(',').collect();
            if fields[0] == "global" {
                continue;
            }
            let monitored: usize = fields[0].parse().unwrap();
            let seconds: f64 = fields[1].parse().unwrap();
            let matrix_value = screen.matrix[line][monitored];
            assert!(
                (seconds - matrix_value).abs() <= 1e-9,
                "screen[{line}][{monitored}] = {matrix_value} but simulate measured {seconds}"
            );
        }
    }
}

#[test]
fn screen_with_generous_limits_is_all_zero() {
    let dir = work_dir("screen-slack");
    let base = synthetic::ring_grid(4);
    let lines: Vec<n1plus_core::Line> = base
        .lines()
        .iter()
        .map(|l| {
            let mut l = l.clone();
            l.limit = 1e6;
            l
        })
        .collect();
    let grid = Grid::new(base.buses().to_vec(), lines, base.reference_bus()).unwrap();
    let grid_path = write_grid(&dir, &grid);
    let out = n1plus(&[
        "screen",
        "--grid",
        grid_path.to_str().unwrap(),
        "--tau",
        "1.0",
        "--T",
        "5",
        "--dt",
        "0.05",
        "--out-dir",
        dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let screen =
        screen_from_csv(&std::fs::read_to_string(dir.join("screen_matrix.csv")).unwrap()).unwrap();
    for row in &screen.matrix {
        assert!(row.iter().all(|s| *s == 0.0));
    }
}

#[test]
fn estimate_is_deterministic_and_validates_flags() {
    let dir_a = work_dir("estimate-a");
    let dir_b = work_dir("estimate-b");
    let grid = synthetic::stressed_triangle();
    let grid_path = write_grid(&dir_a, &grid);

    let run = |out_dir: &Path| {
        n1plus(&[
            "estimate",
            "--grid",
            grid_path.to_str().unwrap(),
            "--method",
            "ce",
            "--gamma",
            "3",
            "--lambda",
            "0.5",
            "--n-per-iter",
            "200",
            "--n",
            "300",
            "--seed",
            "7",
            "--T",
            "8",
            "--dt",
            "0.05",
            "--out-dir",
            out_dir.to_str().unwrap(),
        ])
    };
    let a = run(&dir_a);
    assert!(a.status.success(), "stderr: {}", stderr(&a));
    let b = run(&dir_b);
    assert!(b.status.success(), "stderr: {}", stderr(&b));

    let risk_a = std::fs::read(dir_a.join("risk.csv")).unwrap();
    let risk_b = std::fs::read(dir_b.join("risk.csv")).unwrap();
    assert_eq!(risk_a, risk_b, "risk tables differ between identical runs");
    // stdout (the text table) is deterministic too.
    assert_eq!(stdout(&a), stdout(&b).replace(&dir_b.display().to_string(), &dir_a.display().to_string()));

    let rows = risk_rows_from_csv(&String::from_utf8(risk_a).unwrap()).unwrap();
    assert_eq!(rows.len(), grid.line_count());

    // Invalid sample count.
    let out = n1plus(&[
        "estimate",
        "--grid",
        grid_path.to_str().unwrap(),
        "--method",
        "mc",
        "--gamma",
        "3",
        "--n",
        "0",
    ]);
    assert_eq!(out.status.code(), Some(2));

    // Negative gamma.
    let out = n1plus(&[
        "estimate",
        "--grid",
        grid_path.to_str().unwrap(),
        "--gamma",
        "-2",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn estimate_mc_and_ce_agree_on_the_stressed_fixture() {
    let dir_mc = work_dir("estimate-mc");
    let dir_ce = work_dir("estimate-ce");
    let grid = synthetic::stressed_triangle();
    let grid_path = write_grid(&dir_mc, &grid);
    let shared = [
        "--grid",
        grid_path.to_str().unwrap(),
        "--gamma",
        "4",
        "--lambda",
        "0.5",
        "--T",
        "11",
        "--dt",
        "0.05",
        "--seed",
        "11",
    ];

    let mut args = vec!["estimate", "--method", "mc", "--n", "4000"];
    args.extend_from_slice(&shared);
    args.extend_from_slice(&["--out-dir", dir_mc.to_str().unwrap()]);
    let mc = n1plus(&args);
    assert!(mc.status.success(), "stderr: {}", stderr(&mc));

    let mut args = vec![
        "estimate",
        "--method",
        "ce",
        "--n",
        "2000",
        "--n-per-iter",
        "400",
    ];
    args.extend_from_slice(&shared);
    args.extend_from_slice(&["--out-dir", dir_ce.to_str().unwrap()]);
    let ce = n1plus(&args);
    assert!(ce.status.success(), "stderr: {}", stderr(&ce));

    let parse_global = |dir: &Path| {
        let text = std::fs::read_to_string(dir.join("risk.csv")).unwrap();
        let (header, _) = split_header(&text);
        let line = header
            .iter()
            .find(|l| l.contains("global_q="))
            .expect("global line present");
        let q: f64 = line
            .split("global_q=")
            .nth(1)
            .unwrap()
            .split_whitespace()
            .next()
            .unwrap()
            .parse()
            .unwrap();
        let s: f64 = line
            .split("global_stderr=")
            .nth(1)
            .unwrap()
            .split_whitespace()
            .next()
            .unwrap()
            .parse()
            .unwrap();
        (q, s)
    };
    let (q_mc, s_mc) = parse_global(&dir_mc);
    let (q_ce, s_ce) = parse_global(&dir_ce);
    assert!(
        (q_mc - q_ce).abs() <= 3.0 * (s_mc + s_ce).max(1e-9),
        "MC {q_mc}±{s_mc} vs CE {q_ce}±{s_ce} disagree"
    );
}

#[test]
fn estimate_emits_json_lines_when_asked() {
    let dir = work_dir("estimate-jsonl");
    let grid_path = write_grid(&dir, &synthetic::stressed_triangle());
    let out = n1plus(&[
        "estimate",
        "--grid",
        grid_path.to_str().unwrap(),
        "--gamma",
        "3",
        "--lambda",
        "0.5",
        "--n-per-iter",
        "150",
        "--n",
        "150",
        "--T",
        "6",
        "--dt",
        "0.1",
        "--format",
        "json-lines",
        "--out-dir",
        dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let text = std::fs::read_to_string(dir.join("risk.jsonl")).unwrap();
    let mut lines = text.lines();
    let header: serde_json::Value = serde_json::from_str(lines.next().unwrap()).unwrap();
    assert_eq!(header["kind"], "risk_header");
    assert_eq!(lines.count(), 3);
}

#[test]
fn screen_honors_json_lines_format() {
    let dir = work_dir("screen-jsonl");
    let grid_path = write_grid(&dir, &synthetic::ring_grid(4));
    let out = n1plus(&[
        "screen",
        "--grid",
        grid_path.to_str().unwrap(),
        "--tau",
        "0.5",
        "--T",
        "4",
        "--dt",
        "0.05",
        "--format",
        "json-lines",
        "--out-dir",
        dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let text = std::fs::read_to_string(dir.join("screen_matrix.jsonl")).unwrap();
    let mut lines = text.lines();
    let header: serde_json::Value = serde_json::from_str(lines.next().unwrap()).unwrap();
    assert_eq!(header["artifact"], "screen");
    let row: serde_json::Value = serde_json::from_str(lines.next().unwrap()).unwrap();
    assert_eq!(row["faulted_line"], 0);
    assert_eq!(row["overload_seconds"].as_array().unwrap().len(), 4);
}

#[test]
fn bench_reports_error_pattern() {
    let dir = work_dir("bench");
    let grid_path = write_grid(&dir, &synthetic::ring_grid(4));
    let out = n1plus(&[
        "bench",
        "--grid",
        grid_path.to_str().unwrap(),
        "--m-list",
        "10,100",
        "--taus",
        "0.3,0.8",
        "--reps",
        "3",
        "--warmup",
        "1",
        "--T",
        "4",
        "--dt",
        "0.05",
        "--out-dir",
        dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));

    let records =
        bench_from_csv(&std::fs::read_to_string(dir.join("bench.csv")).unwrap()).unwrap();
    let exact = records.iter().find(|r| r.method == "exact").unwrap();
    assert_eq!(exact.max_rel_error, 0.0);
    assert_eq!(exact.scenarios, 8);
    assert!(records.iter().any(|r| r.method == "reference"));
    for r in &records {
        assert!(r.mean_seconds > 0.0);
        assert!(r.per_contingency_seconds > 0.0);
    }

    let sweep =
        error_sweep_from_csv(&std::fs::read_to_string(dir.join("error_vs_m.csv")).unwrap())
            .unwrap();
    let err_10 = sweep.iter().find(|(m, _)| *m == 10).unwrap().1;
    let err_100 = sweep.iter().find(|(m, _)| *m == 100).unwrap().1;
    assert!(
        err_10 > err_100,
        "error at m=10 ({err_10:.3e}) should exceed error at m=100 ({err_100:.3e})"
    );

    // The spectral-preparation table shows the amortization pattern:
    // small m beats per-contingency exact re-decomposition.
    let prep =
        n1plus_core::prep_from_csv(&std::fs::read_to_string(dir.join("spectral_prep.csv")).unwrap())
            .unwrap();
    let exact_prep = prep.iter().find(|(m, _)| m == "exact").unwrap().1;
    let m10_prep = prep
        .iter()
        .find(|(m, _)| m == "perturbative(10)")
        .unwrap()
        .1;
    assert!(
        m10_prep < exact_prep,
        "perturbative(10) prep {m10_prep:.3e}s not below exact {exact_prep:.3e}s"
    );
}
