//! CSV / JSON-lines emitters and their inverse parsers, plus the header
//! conventions shared by every artifact the engine writes.
//!
//! Float fields are printed with Rust's shortest round-trip formatting, so
//! parsing an emitted document reproduces the original values bit for bit.

use std::io::{Read, Write};

use nalgebra::DVector;

use crate::dynamics::{MethodLabel, SolverMeta, Trajectory};
use crate::error::{Error, Result};
use crate::fault::{FaultKind, FaultScenario};
use crate::indicators::OverloadResult;
use crate::risk::{LineRisk, RiskReport};

/// FNV-1a hash of a canonical configuration string, printed in headers so
/// outputs are traceable to the exact run configuration.
pub fn config_hash(canonical: &str) -> String {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in canonical.as_bytes() {
        hash ^= u64::from(*byte);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{hash:016x}")
}

/// Standard comment header for emitted files.
pub fn artifact_header(kind: &str, seed: u64, hash: &str) -> String {
    format!(
        "# n1plus {} {kind} seed={seed} config={hash}\n",
        env!("CARGO_PKG_VERSION")
    )
}

/// Splits an emitted document into comment header lines and body lines.
pub fn split_header(text: &str) -> (Vec<&str>, Vec<&str>) {
    let mut header = Vec::new();
    let mut body = Vec::new();
    for line in text.lines() {
        if line.starts_with('#') {
            header.push(line);
        } else if !line.trim().is_empty() {
            body.push(line);
        }
    }
    (header, body)
}

pub(crate) fn parse_f64(field: &str, context: &str) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| Error::Parse(format!("{context}: bad float {field:?}")))
}

pub(crate) fn parse_usize(field: &str, context: &str) -> Result<usize> {
    field
        .trim()
        .parse::<usize>()
        .map_err(|_| Error::Parse(format!("{context}: bad integer {field:?}")))
}

// ---------------------------------------------------------------------------
// Trajectory CSV
// ---------------------------------------------------------------------------

fn kind_token(kind: FaultKind) -> &'static str {
    match kind {
        FaultKind::ThreePhase => "three_phase",
        FaultKind::SinglePhase => "single_phase",
    }
}

fn parse_kind(token: &str) -> Result<FaultKind> {
    match token {
        "three_phase" => Ok(FaultKind::ThreePhase),
        "single_phase" => Ok(FaultKind::SinglePhase),
        other => Err(Error::Parse(format!("unknown fault kind {other:?}"))),
    }
}

fn method_token(label: MethodLabel) -> String {
    match label {
        MethodLabel::Exact => "exact".to_string(),
        MethodLabel::Perturbative { steps } => format!("perturbative({steps})"),
        MethodLabel::Reference => "reference".to_string(),
    }
}

fn parse_method(token: &str) -> Result<MethodLabel> {
    if token == "exact" {
        return Ok(MethodLabel::Exact);
    }
    if token == "reference" {
        return Ok(MethodLabel::Reference);
    }
    if let Some(inner) = token
        .strip_prefix("perturbative(")
        .and_then(|s| s.strip_suffix(')'))
    {
        return Ok(MethodLabel::Perturbative {
            steps: parse_usize(inner, "method")?,
        });
    }
    Err(Error::Parse(format!("unknown solver method {token:?}")))
}

/// Wide CSV export: `t`, then one phase-velocity column per bus, then one
/// phase column per bus. Metadata rides in `#` comment lines.
pub fn trajectory_to_csv(traj: &Trajectory) -> String {
    let n = traj.bus_count();
    let mut out = String::new();
    out.push_str(&format!("# n1plus {} trajectory\n", env!("CARGO_PKG_VERSION")));
    let line = match traj.scenario.line {
        Some(l) => l as i64,
        None => -1,
    };
    out.push_str(&format!(
        "# scenario line={line} kind={} tau={} onset={}\n",
        kind_token(traj.scenario.kind),
        traj.scenario.tau,
        traj.scenario.onset
    ));
    out.push_str(&format!(
        "# method {} escalated={}\n",
        method_token(traj.meta.method),
        traj.meta.escalated
    ));
    out.push('t');
    for i in 0..n {
        out.push_str(&format!(",omega_{i}"));
    }
    for i in 0..n {
        out.push_str(&format!(",theta_{i}"));
    }
    out.push('\n');
    for (k, t) in traj.times.iter().enumerate() {
        out.push_str(&format!("{t}"));
        for v in traj.states[k].iter() {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}

/// Parses a trajectory CSV produced by [`trajectory_to_csv`], including
/// the scenario and solver metadata.
pub fn trajectory_from_csv(text: &str) -> Result<Trajectory> {
    let mut scenario: Option<FaultScenario> = None;
    let mut meta: Option<SolverMeta> = None;
    for line in text.lines().filter(|l| l.starts_with('#')) {
        if let Some(rest) = line.strip_prefix("# scenario ") {
            let mut fields = std::collections::BTreeMap::new();
            for kv in rest.split_whitespace() {
                if let Some((key, value)) = kv.split_once('=') {
                    fields.insert(key.to_string(), value.to_string());
                }
            }
            let get = |k: &str| {
                fields
                    .get(k)
                    .ok_or_else(|| Error::Parse(format!("trajectory header missing {k}")))
            };
            let line_idx: i64 = get("line")?
                .parse()
                .map_err(|_| Error::Parse("bad line index".into()))?;
            scenario = Some(FaultScenario {
                line: (line_idx >= 0).then_some(line_idx as usize),
                kind: parse_kind(get("kind")?)?,
                tau: parse_f64(get("tau")?, "tau")?,
                onset: parse_f64(get("onset")?, "onset")?,
            });
        } else if let Some(rest) = line.strip_prefix("# method ") {
            let mut parts = rest.split_whitespace();
            let method = parse_method(
                parts
                    .next()
                    .ok_or_else(|| Error::Parse("empty method header".into()))?,
            )?;
            let escalated = parts
                .next()
                .and_then(|t| t.strip_prefix("escalated="))
                .map(|t| t == "true")
                .unwrap_or(false);
            meta = Some(SolverMeta { method, escalated });
        }
    }
    let scenario =
        scenario.ok_or_else(|| Error::Parse("trajectory CSV lacks a scenario header".into()))?;
    let meta = meta.ok_or_else(|| Error::Parse("trajectory CSV lacks a method header".into()))?;

    let (_, body) = split_header(text);
    let mut rows = body.iter();
    let header = rows
        .next()
        .ok_or_else(|| Error::Parse("trajectory CSV has no column header".into()))?;
    let columns = header.split(',').count();
    if columns < 3 || (columns - 1) % 2 != 0 {
        return Err(Error::Parse(format!(
            "trajectory CSV has {columns} columns; expected 1 + 2n"
        )));
    }
    let dim = columns - 1;
    let mut times = Vec::new();
    let mut states = Vec::new();
    for row in rows {
        let mut fields = row.split(',');
        let t = parse_f64(
            fields
                .next()
                .ok_or_else(|| Error::Parse("empty trajectory row".into()))?,
            "time",
        )?;
        let values: Vec<f64> = fields
            .map(|f| parse_f64(f, "state"))
            .collect::<Result<_>>()?;
        if values.len() != dim {
            return Err(Error::Parse(format!(
                "trajectory row has {} state entries; expected {dim}",
                values.len()
            )));
        }
        times.push(t);
        states.push(DVector::from_vec(values));
    }
    Ok(Trajectory {
        times,
        states,
        scenario,
        meta,
    })
}

// ---------------------------------------------------------------------------
// Trajectory binary fixture format
// ---------------------------------------------------------------------------

const TRAJECTORY_MAGIC: &[u8; 8] = b"N1PTRAJ1";

/// Compact binary trajectory fixture: magic, dimensions, scenario, solver
/// label, then raw little-endian `f64` samples.
pub fn write_trajectory_bin<W: Write>(traj: &Trajectory, mut w: W) -> Result<()> {
    w.write_all(TRAJECTORY_MAGIC)?;
    let dim = traj.dim() as u64;
    let samples = traj.times.len() as u64;
    w.write_all(&dim.to_le_bytes())?;
    w.write_all(&samples.to_le_bytes())?;
    let line: i64 = traj.scenario.line.map_or(-1, |l| l as i64);
    w.write_all(&line.to_le_bytes())?;
    w.write_all(&[match traj.scenario.kind {
        FaultKind::ThreePhase => 0u8,
        FaultKind::SinglePhase => 1u8,
    }])?;
    w.write_all(&traj.scenario.tau.to_le_bytes())?;
    w.write_all(&traj.scenario.onset.to_le_bytes())?;
    let (method, steps) = match traj.meta.method {
        MethodLabel::Exact => (0u8, 0u64),
        MethodLabel::Perturbative { steps } => (1u8, steps as u64),
        MethodLabel::Reference => (2u8, 0u64),
    };
    w.write_all(&[method])?;
    w.write_all(&steps.to_le_bytes())?;
    w.write_all(&[traj.meta.escalated as u8])?;
    for t in &traj.times {
        w.write_all(&t.to_le_bytes())?;
    }
    for state in &traj.states {
        for v in state.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_trajectory_bin<R: Read>(mut r: R) -> Result<Trajectory> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != TRAJECTORY_MAGIC {
        return Err(Error::Parse("not a trajectory fixture file".into()));
    }
    let mut u64_buf = [0u8; 8];
    let mut read_u64 = |r: &mut R| -> Result<u64> {
        r.read_exact(&mut u64_buf)?;
        Ok(u64::from_le_bytes(u64_buf))
    };
    let dim = read_u64(&mut r)? as usize;
    let samples = read_u64(&mut r)? as usize;
    let mut i64_buf = [0u8; 8];
    r.read_exact(&mut i64_buf)?;
    let line = i64::from_le_bytes(i64_buf);
    let mut byte = [0u8; 1];
    r.read_exact(&mut byte)?;
    let kind = match byte[0] {
        0 => FaultKind::ThreePhase,
        1 => FaultKind::SinglePhase,
        other => return Err(Error::Parse(format!("bad fault kind byte {other}"))),
    };
    let mut f64_buf = [0u8; 8];
    let mut read_f64 = |r: &mut R| -> Result<f64> {
        r.read_exact(&mut f64_buf)?;
        Ok(f64::from_le_bytes(f64_buf))
    };
    let tau = read_f64(&mut r)?;
    let onset = read_f64(&mut r)?;
    r.read_exact(&mut byte)?;
    let method_byte = byte[0];
    let mut steps_buf = [0u8; 8];
    r.read_exact(&mut steps_buf)?;
    let steps = u64::from_le_bytes(steps_buf) as usize;
    let method = match method_byte {
        0 => MethodLabel::Exact,
        1 => MethodLabel::Perturbative { steps },
        2 => MethodLabel::Reference,
        other => return Err(Error::Parse(format!("bad method byte {other}"))),
    };
    r.read_exact(&mut byte)?;
    let escalated = byte[0] != 0;

    let mut times = Vec::with_capacity(samples);
    let mut buf = [0u8; 8];
    for _ in 0..samples {
        r.read_exact(&mut buf)?;
        times.push(f64::from_le_bytes(buf));
    }
    let mut states = Vec::with_capacity(samples);
    for _ in 0..samples {
        let mut state = DVector::zeros(dim);
        for i in 0..dim {
            r.read_exact(&mut buf)?;
            state[i] = f64::from_le_bytes(buf);
        }
        states.push(state);
    }
    Ok(Trajectory {
        times,
        states,
        scenario: FaultScenario {
            line: (line >= 0).then_some(line as usize),
            kind,
            tau,
            onset,
        },
        meta: SolverMeta { method, escalated },
    })
}

// ---------------------------------------------------------------------------
// Overload and risk tables
// ---------------------------------------------------------------------------

/// Overload report CSV: one row per line with its measure and intervals.
pub fn overload_to_csv(result: &OverloadResult) -> String {
    let mut out = String::from("line,seconds,intervals\n");
    for l in &result.per_line {
        let intervals = l
            .intervals
            .iter()
            .map(|(a, b)| format!("{a}..{b}"))
            .collect::<Vec<_>>()
            .join(";");
        out.push_str(&format!("{},{},{}\n", l.line, l.seconds, intervals));
    }
    out.push_str(&format!("global,{},\n", result.global));
    out
}

/// Risk table CSV with the reproducibility header: line, Q̂, standard
/// error, zone.
pub fn risk_to_csv(report: &RiskReport) -> String {
    let mut out = artifact_header("risk", report.seed, &report.config_hash);
    out.push_str(&format!(
        "# gamma={} method={:?} global_q={} global_stderr={} escalations={} ce_iterations={}\n",
        report.gamma,
        report.method,
        report.global.q_hat,
        report.global.stderr,
        report.escalations,
        report.ce.iterations
    ));
    out.push_str("line,from,to,q_hat,stderr,zone\n");
    for l in &report.lines {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            l.line, l.from, l.to, l.q_hat, l.stderr, l.zone
        ));
    }
    out
}

/// Parses the body rows of a risk table CSV.
pub fn risk_rows_from_csv(text: &str) -> Result<Vec<LineRisk>> {
    let (_, body) = split_header(text);
    let mut rows = body.iter();
    let header = rows
        .next()
        .ok_or_else(|| Error::Parse("risk CSV has no header".into()))?;
    if *header != "line,from,to,q_hat,stderr,zone" {
        return Err(Error::Parse(format!("unexpected risk header {header:?}")));
    }
    rows.map(|row| {
        let fields: Vec<&str> = row.split(',').collect();
        if fields.len() != 6 {
            return Err(Error::Parse(format!("risk row has {} fields", fields.len())));
        }
        Ok(LineRisk {
            line: parse_usize(fields[0], "line")?,
            from: parse_usize(fields[1], "from")?,
            to: parse_usize(fields[2], "to")?,
            q_hat: parse_f64(fields[3], "q_hat")?,
            stderr: parse_f64(fields[4], "stderr")?,
            zone: fields[5].parse()?,
        })
    })
    .collect()
}

/// Human-readable risk table (deterministic; excludes wall-clock timing).
pub fn risk_to_text(report: &RiskReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "n1plus risk report (seed {}, config {})\n",
        report.seed, report.config_hash
    ));
    out.push_str(&format!(
        "gamma = {} s, method = {:?}, ce iterations = {}, escalations = {}\n",
        report.gamma, report.method, report.ce.iterations, report.escalations
    ));
    out.push_str(&format!(
        "global: Q = {:.6e} ± {:.2e} ({} samples)\n",
        report.global.q_hat, report.global.stderr, report.global.samples
    ));
    out.push_str(&format!(
        "{:>5} {:>5} {:>3} {:>13} {:>10} {:>7}\n",
        "line", "from", "to", "q_hat", "stderr", "zone"
    ));
    for l in &report.lines {
        out.push_str(&format!(
            "{:>5} {:>5} {:>3} {:>13.6e} {:>10.2e} {:>7}\n",
            l.line, l.from, l.to, l.q_hat, l.stderr, l.zone
        ));
    }
    out
}

/// JSON-lines form of the risk report: one header object then one object
/// per line.
pub fn risk_to_jsonl(report: &RiskReport) -> String {
    let mut out = String::new();
    let header = serde_json::json!({
        "kind": "risk_header",
        "version": report.version,
        "seed": report.seed,
        "config_hash": report.config_hash,
        "gamma": report.gamma,
        "method": report.method,
        "global_q_hat": report.global.q_hat,
        "global_stderr": report.global.stderr,
        "samples": report.global.samples,
        "ce_iterations": report.ce.iterations,
        "escalations": report.escalations,
    });
    out.push_str(&header.to_string());
    out.push('\n');
    for l in &report.lines {
        out.push_str(&serde_json::to_string(l).expect("line risk serializes"));
        out.push('\n');
    }
    out
}

// ---------------------------------------------------------------------------
// Screening matrix
// ---------------------------------------------------------------------------

/// N-1 sweep result: `matrix[f][m]` is monitored line `m`'s overload
/// seconds when line `f` faults.
#[derive(Debug, Clone, PartialEq)]
pub struct ScreenMatrix {
    pub matrix: Vec<Vec<f64>>,
}

impl ScreenMatrix {
    pub fn line_count(&self) -> usize {
        self.matrix.len()
    }

    /// Total overload accumulated on each monitored line across all
    /// faults, ranked descending; the tie-breaker is the line index.
    pub fn ranked_lines(&self) -> Vec<(usize, f64)> {
        let n = self.line_count();
        let mut totals = vec![0.0f64; n];
        for row in &self.matrix {
            for (m, s) in row.iter().enumerate() {
                totals[m] += s;
            }
        }
        let mut ranked: Vec<(usize, f64)> = totals.into_iter().enumerate().collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        ranked
    }
}

pub fn screen_to_csv(screen: &ScreenMatrix) -> String {
    let n = screen.line_count();
    let mut out = String::from("faulted_line");
    for m in 0..n {
        out.push_str(&format!(",S_{m}"));
    }
    out.push('\n');
    for (f, row) in screen.matrix.iter().enumerate() {
        out.push_str(&format!("{f}"));
        for s in row {
            out.push_str(&format!(",{s}"));
        }
        out.push('\n');
    }
    out
}

/// JSON-lines form of the screen matrix: one object per faulted line.
pub fn screen_to_jsonl(screen: &ScreenMatrix) -> String {
    let mut out = String::new();
    for (f, row) in screen.matrix.iter().enumerate() {
        let obj = serde_json::json!({ "faulted_line": f, "overload_seconds": row });
        out.push_str(&obj.to_string());
        out.push('\n');
    }
    out
}

pub fn screen_from_csv(text: &str) -> Result<ScreenMatrix> {
    let (_, body) = split_header(text);
    let mut rows = body.iter();
    let header = rows
        .next()
        .ok_or_else(|| Error::Parse("screen CSV has no header".into()))?;
    let columns = header.split(',').count();
    let mut matrix = Vec::new();
    for row in rows {
        let fields: Vec<&str> = row.split(',').collect();
        if fields.len() != columns {
            return Err(Error::Parse(format!(
                "screen row has {} fields; expected {columns}",
                fields.len()
            )));
        }
        matrix.push(
            fields[1..]
                .iter()
                .map(|f| parse_f64(f, "screen entry"))
                .collect::<Result<Vec<f64>>>()?,
        );
    }
    Ok(ScreenMatrix { matrix })
}

// ---------------------------------------------------------------------------
// Benchmark records
// ---------------------------------------------------------------------------

/// One benchmark row: wall time of an ensemble pass and the accuracy of
/// the method against the exact solution.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BenchRecord {
    /// `exact`, `perturbative(m)`, or `reference`.
    pub method: String,
    /// Contingencies evaluated per repetition.
    pub scenarios: usize,
    /// Mean ensemble wall time over the repetitions (s).
    pub mean_seconds: f64,
    /// Standard deviation of the ensemble wall time (s).
    pub std_seconds: f64,
    /// Mean time per contingency (s).
    pub per_contingency_seconds: f64,
    /// Max relative trajectory error against the exact method.
    pub max_rel_error: f64,
}

pub fn bench_to_csv(records: &[BenchRecord]) -> String {
    let mut out =
        String::from("method,scenarios,mean_s,std_s,per_contingency_s,max_rel_error\n");
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.method,
            r.scenarios,
            r.mean_seconds,
            r.std_seconds,
            r.per_contingency_seconds,
            r.max_rel_error
        ));
    }
    out
}

/// JSON-lines form of the benchmark table.
pub fn bench_to_jsonl(records: &[BenchRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("bench record serializes"));
        out.push('\n');
    }
    out
}

pub fn bench_from_csv(text: &str) -> Result<Vec<BenchRecord>> {
    let (_, body) = split_header(text);
    let mut rows = body.iter();
    let header = rows
        .next()
        .ok_or_else(|| Error::Parse("bench CSV has no header".into()))?;
    if *header != "method,scenarios,mean_s,std_s,per_contingency_s,max_rel_error" {
        return Err(Error::Parse(format!("unexpected bench header {header:?}")));
    }
    rows.map(|row| {
        let fields: Vec<&str> = row.split(',').collect();
        if fields.len() != 6 {
            return Err(Error::Parse(format!(
                "bench row has {} fields",
                fields.len()
            )));
        }
        Ok(BenchRecord {
            method: fields[0].to_string(),
            scenarios: parse_usize(fields[1], "scenarios")?,
            mean_seconds: parse_f64(fields[2], "mean_s")?,
            std_seconds: parse_f64(fields[3], "std_s")?,
            per_contingency_seconds: parse_f64(fields[4], "per_contingency_s")?,
            max_rel_error: parse_f64(fields[5], "max_rel_error")?,
        })
    })
    .collect()
}

/// Spectral-preparation timing CSV: per-contingency cost of producing a
/// usable faulted spectrum by each route.
pub fn prep_to_csv(rows: &[(String, f64)]) -> String {
    let mut out = String::from("method,per_contingency_s\n");
    for (method, seconds) in rows {
        out.push_str(&format!("{method},{seconds}\n"));
    }
    out
}

pub fn prep_from_csv(text: &str) -> Result<Vec<(String, f64)>> {
    let (_, body) = split_header(text);
    body.iter()
        .skip(1)
        .map(|row| {
            let (method, seconds) = row
                .split_once(',')
                .ok_or_else(|| Error::Parse(format!("bad prep row {row:?}")))?;
            Ok((method.to_string(), parse_f64(seconds, "per_contingency_s")?))
        })
        .collect()
}

/// The error-vs-step-count sweep CSV.
pub fn error_sweep_to_csv(points: &[(usize, f64)]) -> String {
    let mut out = String::from("m,max_rel_error\n");
    for (m, err) in points {
        out.push_str(&format!("{m},{err}\n"));
    }
    out
}

pub fn error_sweep_from_csv(text: &str) -> Result<Vec<(usize, f64)>> {
    let (_, body) = split_header(text);
    body.iter()
        .skip(1)
        .map(|row| {
            let (m, err) = row
                .split_once(',')
                .ok_or_else(|| Error::Parse(format!("bad sweep row {row:?}")))?;
            Ok((parse_usize(m, "m")?, parse_f64(err, "max_rel_error")?))
        })
        .collect()
}
