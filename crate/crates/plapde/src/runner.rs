//! Run orchestration: execute a configured scenario, persist the manifest
//! and report CSVs, reload artifacts and compare runs.
//!
//! Determinism contract: identical configurations produce bit-identical
//! CSVs on the same platform. Summation orders are fixed, all randomness is
//! seeded from the configuration, and floats render with 17 significant
//! digits.

use crate::auditor::{
    self, ds_class_report, gronwall_bound, hyperbolic_energy_audit, parabolic_pairing,
    parabolic_series, rhs_bound_check, EstimateReport, PNormParams, Verdict,
};
use crate::config::{parse_config, ConfigError, ReportKind, RunConfig};
use crate::problem::{Mode, SolverError, Trajectory};
use crate::{hyperbolic, parabolic};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Audit(#[from] auditor::AuditError),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("incompatible artifacts: {0}")]
    Incompatible(String),
    #[error("artifact {0} has no manifest.txt")]
    NotAnArtifact(PathBuf),
}

impl RunError {
    /// Process exit code: 2 for solver aborts and machine trouble, 3 for
    /// configuration/compatibility problems. Audit failures are code 1 but
    /// are not errors (the run completes).
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) | RunError::Incompatible(_) | RunError::NotAnArtifact(_) => 3,
            _ => 2,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// A completed (or aborted) run on disk.
#[derive(Debug)]
pub struct RunArtifact {
    pub dir: PathBuf,
    pub config: RunConfig,
    pub report: EstimateReport,
    pub wall: Duration,
    pub failed_verdicts: Vec<String>,
}

fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

/// Execute a configured run: solve, audit, persist. Solver aborts still
/// write a manifest naming the failure before returning the error.
pub fn run_scenario(cfg: &RunConfig) -> Result<RunArtifact, RunError> {
    let started = Instant::now();
    let (spec, solver_cfg) = cfg.to_problem()?;
    let dir = cfg.out_dir.join(&cfg.label);
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;

    let solved: Result<Trajectory, SolverError> = match cfg.mode {
        Mode::Parabolic => parabolic::solve(&spec, &solver_cfg),
        Mode::Hyperbolic | Mode::Integro => hyperbolic::solve(&spec, &solver_cfg),
    };
    let traj = match solved {
        Ok(t) => t,
        Err(err) => {
            write_manifest(&dir, cfg, started.elapsed(), Some(&err), &[])?;
            return Err(err.into());
        }
    };

    let pnorm = cfg
        .pnorm
        .map(|(alpha, beta, zero)| PNormParams::new(alpha, beta, zero))
        .transpose()?;

    let mut report = match cfg.mode {
        Mode::Parabolic => parabolic_series(&traj, &spec, pnorm.as_ref())?,
        _ => EstimateReport {
            times: traj.times[..traj.step_count()].to_vec(),
            ..Default::default()
        },
    };

    for kind in &cfg.reports {
        match kind {
            ReportKind::Pairing => {
                let pairing = parabolic_pairing(&traj, &spec)?;
                report.scalars.push(("pairing_lhs".to_string(), pairing.lhs));
                report.scalars.push(("pairing_rhs".to_string(), pairing.rhs));
                report
                    .scalars
                    .push(("pairing_rel_gap".to_string(), pairing.rel_gap));
            }
            ReportKind::RhsBound => {
                let bound = rhs_bound_check(&traj, &spec, cfg.bound_eps, cfg.bound_eps1)?;
                report.scalars.push(("rhs_bound_lhs".to_string(), bound.lhs));
                report.scalars.push(("rhs_bound_rhs".to_string(), bound.rhs));
                report.verdicts.push(Verdict {
                    name: "rhs_bound".to_string(),
                    pass: bound.holds,
                    margin: bound.margin,
                });
            }
            ReportKind::DsClass => {
                report.merge(ds_class_report(&traj, &spec, pnorm.as_ref())?);
            }
            ReportKind::Energy => {
                let audit = hyperbolic_energy_audit(&traj, &spec)?;
                if report.times.is_empty() {
                    report.times = audit.times.clone();
                }
                report.merge(EstimateReport {
                    times: audit.times.clone(),
                    series: vec![
                        ("hyper_energy".to_string(), audit.energy.clone()),
                        ("kinetic".to_string(), audit.kinetic.clone()),
                        ("potential".to_string(), audit.potential.clone()),
                    ],
                    scalars: vec![("source_bound".to_string(), audit.source_bound)],
                    verdicts: vec![Verdict {
                        name: "energy_inequality_per_step".to_string(),
                        pass: audit.all_ok,
                        margin: 0.0,
                    }],
                });
            }
            ReportKind::Gronwall => {
                let gw = gronwall_bound(&traj, &spec)?;
                if report.times.is_empty() {
                    report.times = traj.times[..traj.step_count()].to_vec();
                }
                report.merge(EstimateReport {
                    times: traj.times[..traj.step_count()].to_vec(),
                    series: vec![(
                        "gronwall_bound".to_string(),
                        gw.series[..traj.step_count()].to_vec(),
                    )],
                    scalars: vec![
                        ("gronwall_sup".to_string(), gw.sup),
                        ("gronwall_constant".to_string(), gw.constant),
                        ("gronwall_lambda".to_string(), gw.lambda),
                    ],
                    verdicts: vec![Verdict {
                        name: "gronwall".to_string(),
                        pass: gw.holds,
                        margin: gw.constant - gw.sup,
                    }],
                });
            }
        }
    }

    let failed_verdicts: Vec<String> = report
        .verdicts
        .iter()
        .filter(|v| !v.pass)
        .map(|v| v.name.clone())
        .collect();

    let wall = started.elapsed();
    write_manifest(&dir, cfg, wall, None, &failed_verdicts)?;
    write_series_csv(&dir, &report)?;
    write_scalars_csv(&dir, &report)?;
    write_verdicts_csv(&dir, &report)?;
    if cfg.snapshots {
        write_snapshots_csv(&dir, cfg, &traj)?;
    }

    Ok(RunArtifact {
        dir,
        config: cfg.clone(),
        report,
        wall,
        failed_verdicts,
    })
}

fn write_manifest(
    dir: &Path,
    cfg: &RunConfig,
    wall: Duration,
    abort: Option<&SolverError>,
    failed: &[String],
) -> Result<(), RunError> {
    let path = dir.join("manifest.txt");
    let mut out = String::new();
    out.push_str(&format!("# plapde {}\n", env!("CARGO_PKG_VERSION")));
    out.push_str(&format!("# wall_time_s = {:.3}\n", wall.as_secs_f64()));
    match abort {
        Some(err) => out.push_str(&format!("# aborted: {err}\n")),
        None if failed.is_empty() => out.push_str("# status: ok\n"),
        None => out.push_str(&format!("# status: audit failures: {}\n", failed.join(","))),
    }
    out.push_str(&cfg.render());
    fs::write(&path, out).map_err(io_err(&path))
}

fn write_series_csv(dir: &Path, report: &EstimateReport) -> Result<(), RunError> {
    let path = dir.join("series.csv");
    let mut f = fs::File::create(&path).map_err(io_err(&path))?;
    let mut header = vec!["t".to_string()];
    header.extend(report.series.iter().map(|(n, _)| n.clone()));
    writeln!(f, "{}", header.join(",")).map_err(io_err(&path))?;
    for (k, t) in report.times.iter().enumerate() {
        let mut row = vec![fmt17(*t)];
        for (_, values) in &report.series {
            row.push(fmt17(values[k]));
        }
        writeln!(f, "{}", row.join(",")).map_err(io_err(&path))?;
    }
    Ok(())
}

fn write_scalars_csv(dir: &Path, report: &EstimateReport) -> Result<(), RunError> {
    let path = dir.join("scalars.csv");
    let mut f = fs::File::create(&path).map_err(io_err(&path))?;
    writeln!(f, "name,value").map_err(io_err(&path))?;
    for (name, value) in &report.scalars {
        writeln!(f, "{name},{}", fmt17(*value)).map_err(io_err(&path))?;
    }
    Ok(())
}

fn write_verdicts_csv(dir: &Path, report: &EstimateReport) -> Result<(), RunError> {
    let path = dir.join("verdicts.csv");
    let mut f = fs::File::create(&path).map_err(io_err(&path))?;
    writeln!(f, "name,pass,margin").map_err(io_err(&path))?;
    for v in &report.verdicts {
        writeln!(f, "{},{},{}", v.name, v.pass, fmt17(v.margin)).map_err(io_err(&path))?;
    }
    Ok(())
}

fn write_snapshots_csv(dir: &Path, cfg: &RunConfig, traj: &Trajectory) -> Result<(), RunError> {
    let path = dir.join("snapshots.csv");
    let mut f = fs::File::create(&path).map_err(io_err(&path))?;
    let n = traj.states[0].values().len();
    let mut header = vec!["t".to_string()];
    header.extend((0..n).map(|j| format!("n{j}")));
    writeln!(f, "{}", header.join(",")).map_err(io_err(&path))?;
    let last = traj.states.len() - 1;
    for (k, state) in traj.states.iter().enumerate() {
        if k % cfg.snapshot_stride != 0 && k != last {
            continue;
        }
        let mut row = vec![fmt17(traj.times[k])];
        row.extend(state.values().iter().map(|v| fmt17(*v)));
        writeln!(f, "{}", row.join(",")).map_err(io_err(&path))?;
    }
    Ok(())
}

/// An artifact read back from disk.
#[derive(Debug)]
pub struct LoadedArtifact {
    pub dir: PathBuf,
    pub config: RunConfig,
    pub times: Vec<f64>,
    pub series: Vec<(String, Vec<f64>)>,
    pub snapshots: Option<(Vec<f64>, Vec<Vec<f64>>)>,
}

pub fn load_artifact(dir: &Path) -> Result<LoadedArtifact, RunError> {
    let manifest_path = dir.join("manifest.txt");
    if !manifest_path.exists() {
        return Err(RunError::NotAnArtifact(dir.to_path_buf()));
    }
    let manifest = fs::read_to_string(&manifest_path).map_err(io_err(&manifest_path))?;
    let config = parse_config(&manifest)?;

    let series_path = dir.join("series.csv");
    let text = fs::read_to_string(&series_path).map_err(io_err(&series_path))?;
    let (times, series) = parse_series_csv(&text)
        .ok_or_else(|| RunError::Incompatible(format!("malformed {}", series_path.display())))?;

    let snapshots_path = dir.join("snapshots.csv");
    let snapshots = if snapshots_path.exists() {
        let text = fs::read_to_string(&snapshots_path).map_err(io_err(&snapshots_path))?;
        parse_matrix_csv(&text)
    } else {
        None
    };

    Ok(LoadedArtifact {
        dir: dir.to_path_buf(),
        config,
        times,
        series,
        snapshots,
    })
}

type NamedSeries = Vec<(String, Vec<f64>)>;

fn parse_series_csv(text: &str) -> Option<(Vec<f64>, NamedSeries)> {
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next()?.split(',').collect();
    if header.first() != Some(&"t") {
        return None;
    }
    let mut times = Vec::new();
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); header.len() - 1];
    for line in lines {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != header.len() {
            return None;
        }
        times.push(cells[0].parse().ok()?);
        for (j, cell) in cells[1..].iter().enumerate() {
            columns[j].push(cell.parse().ok()?);
        }
    }
    let series = header[1..]
        .iter()
        .map(|n| n.to_string())
        .zip(columns)
        .collect();
    Some((times, series))
}

fn parse_matrix_csv(text: &str) -> Option<(Vec<f64>, Vec<Vec<f64>>)> {
    let mut lines = text.lines();
    let _header = lines.next()?;
    let mut times = Vec::new();
    let mut rows = Vec::new();
    for line in lines {
        let mut cells = line.split(',');
        times.push(cells.next()?.parse().ok()?);
        let row: Option<Vec<f64>> = cells.map(|c| c.parse().ok()).collect();
        rows.push(row?);
    }
    Some((times, rows))
}

/// Per-series gaps between two artifacts at their shared times.
#[derive(Debug)]
pub struct DiffReport {
    pub shared_times: usize,
    pub series: Vec<SeriesGap>,
    pub snapshot_gap: Option<SeriesGap>,
}

#[derive(Debug)]
pub struct SeriesGap {
    pub name: String,
    pub max_gap: f64,
    pub l2_gap: f64,
}

impl std::fmt::Display for DiffReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "compared at {} shared times", self.shared_times)?;
        for s in &self.series {
            writeln!(
                f,
                "  {:<16} max {:>12.5e}  l2 {:>12.5e}",
                s.name, s.max_gap, s.l2_gap
            )?;
        }
        if let Some(s) = &self.snapshot_gap {
            writeln!(
                f,
                "  {:<16} max {:>12.5e}  l2 {:>12.5e}",
                "states", s.max_gap, s.l2_gap
            )?;
        }
        Ok(())
    }
}

/// Matching time indices within an absolute tolerance; `b` may be a
/// refinement of `a`.
fn shared_time_indices(a: &[f64], b: &[f64]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut j = 0;
    for (i, ta) in a.iter().enumerate() {
        while j < b.len() && b[j] < ta - 1e-12 {
            j += 1;
        }
        if j < b.len() && (b[j] - ta).abs() <= 1e-12 {
            out.push((i, j));
        }
    }
    out
}

pub fn compare_runs(a: &LoadedArtifact, b: &LoadedArtifact) -> Result<DiffReport, RunError> {
    if a.config.nodes != b.config.nodes
        || a.config.low != b.config.low
        || a.config.high != b.config.high
    {
        return Err(RunError::Incompatible(
            "runs use different grids".to_string(),
        ));
    }
    let pairs = shared_time_indices(&a.times, &b.times);
    if pairs.is_empty() {
        return Err(RunError::Incompatible(
            "runs share no time points".to_string(),
        ));
    }
    // weight each shared sample by the span it represents
    let dt_weight = |k: usize| -> f64 {
        if pairs.len() < 2 {
            return 1.0;
        }
        if k + 1 < pairs.len() {
            a.times[pairs[k + 1].0] - a.times[pairs[k].0]
        } else {
            a.times[pairs[k].0] - a.times[pairs[k - 1].0]
        }
    };

    let mut series = Vec::new();
    for (name, va) in &a.series {
        if let Some(vb) = b.series.iter().find(|(n, _)| n == name).map(|(_, v)| v) {
            let mut max_gap = 0.0_f64;
            let mut l2 = 0.0;
            for (k, (i, j)) in pairs.iter().enumerate() {
                let d = (va[*i] - vb[*j]).abs();
                max_gap = max_gap.max(d);
                l2 += d * d * dt_weight(k);
            }
            series.push(SeriesGap {
                name: name.clone(),
                max_gap,
                l2_gap: l2.sqrt(),
            });
        }
    }

    let snapshot_gap = match (&a.snapshots, &b.snapshots) {
        (Some((ta, rows_a)), Some((tb, rows_b))) => {
            let pairs = shared_time_indices(ta, tb);
            let node_weight: f64 = a
                .config
                .nodes
                .iter()
                .zip(a.config.low.iter().zip(a.config.high.iter()))
                .map(|(n, (lo, hi))| (hi - lo) / (*n as f64 - 1.0))
                .product();
            let mut max_gap = 0.0_f64;
            let mut l2 = 0.0;
            for (k, (i, j)) in pairs.iter().enumerate() {
                if rows_a[*i].len() != rows_b[*j].len() {
                    return Err(RunError::Incompatible(
                        "snapshot rows have different node counts".to_string(),
                    ));
                }
                let w = if pairs.len() < 2 {
                    1.0
                } else if k + 1 < pairs.len() {
                    ta[pairs[k + 1].0] - ta[pairs[k].0]
                } else {
                    ta[pairs[k].0] - ta[pairs[k - 1].0]
                };
                let mut row_sq = 0.0;
                for (va, vb) in rows_a[*i].iter().zip(rows_b[*j].iter()) {
                    let d = (va - vb).abs();
                    max_gap = max_gap.max(d);
                    row_sq += d * d * node_weight;
                }
                l2 += row_sq * w;
            }
            Some(SeriesGap {
                name: "states".to_string(),
                max_gap,
                l2_gap: l2.sqrt(),
            })
        }
        _ => None,
    };

    Ok(DiffReport {
        shared_times: pairs.len(),
        series,
        snapshot_gap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;

    fn zero_run_config(dir: &Path) -> RunConfig {
        let text = format!(
            "\
label = zero
mode = parabolic
p = 3
T = 0.01
grid.nodes = 17
data.u0 = constant(0)
data.h = 0
solver.dt = 1e-3
audit.reports = pairing,rhs_bound
output.dir = {}
output.snapshots = true
output.snapshot_stride = 2
",
            dir.display()
        );
        parse_config(&text).unwrap()
    }

    #[test]
    fn zero_run_produces_zero_artifacts_and_passes() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = zero_run_config(tmp.path());
        let artifact = run_scenario(&cfg).unwrap();
        assert!(artifact.failed_verdicts.is_empty());
        let loaded = load_artifact(&artifact.dir).unwrap();
        for (name, values) in &loaded.series {
            assert!(values.iter().all(|v| *v == 0.0), "{name} not zero");
        }
        assert!(loaded.snapshots.is_some());
    }

    #[test]
    fn reruns_are_bit_identical() {
        let tmp = tempfile::tempdir().unwrap();
        let text = format!(
            "\
label = determinism
mode = hyperbolic
p = 3
T = 0.02
grid.nodes = 33
data.u0 = manufactured(wave_p3)
data.u1 = manufactured(wave_p3)
data.h = manufactured(wave_p3)
solver.dt = 5e-4
output.dir = {}
output.snapshots = true
",
            tmp.path().display()
        );
        let cfg = parse_config(&text).unwrap();
        let a = run_scenario(&cfg).unwrap();
        let series_a = fs::read(a.dir.join("series.csv")).unwrap();
        let snaps_a = fs::read(a.dir.join("snapshots.csv")).unwrap();
        let b = run_scenario(&cfg).unwrap();
        let series_b = fs::read(b.dir.join("series.csv")).unwrap();
        let snaps_b = fs::read(b.dir.join("snapshots.csv")).unwrap();
        assert_eq!(series_a, series_b);
        assert_eq!(snaps_a, snaps_b);
    }

    #[test]
    fn manifest_round_trips_the_configuration() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = zero_run_config(tmp.path());
        let artifact = run_scenario(&cfg).unwrap();
        let loaded = load_artifact(&artifact.dir).unwrap();
        assert_eq!(loaded.config, cfg);
    }

    #[test]
    fn compare_run_with_itself_is_zero() {
        let tmp = tempfile::tempdir().unwrap();
        let mut cfg = zero_run_config(tmp.path());
        cfg.u0 = crate::config::DataSpec::CosineMode(vec![1]);
        let artifact = run_scenario(&cfg).unwrap();
        let loaded = load_artifact(&artifact.dir).unwrap();
        let diff = compare_runs(&loaded, &loaded).unwrap();
        assert!(diff.series.iter().all(|s| s.max_gap == 0.0 && s.l2_gap == 0.0));
        assert_eq!(diff.snapshot_gap.as_ref().unwrap().max_gap, 0.0);
    }

    #[test]
    fn compare_rejects_different_grids() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg_a = zero_run_config(tmp.path());
        let mut cfg_b = zero_run_config(tmp.path());
        cfg_b.label = "other".to_string();
        cfg_b.nodes = vec![33];
        let a = run_scenario(&cfg_a).unwrap();
        let b = run_scenario(&cfg_b).unwrap();
        let la = load_artifact(&a.dir).unwrap();
        let lb = load_artifact(&b.dir).unwrap();
        assert!(matches!(
            compare_runs(&la, &lb),
            Err(RunError::Incompatible(_))
        ));
    }

    #[test]
    fn solver_abort_writes_manifest_with_failure() {
        let tmp = tempfile::tempdir().unwrap();
        let text = format!(
            "\
label = unstable
mode = hyperbolic
p = 2
p2_diagnostic = true
T = 0.5
grid.nodes = 65
data.u0 = cosine_mode(1)
data.u1 = constant(0)
solver.dt = 0.02
output.dir = {}
",
            tmp.path().display()
        );
        let cfg = parse_config(&text).unwrap();
        let err = run_scenario(&cfg).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        let manifest = fs::read_to_string(tmp.path().join("unstable/manifest.txt")).unwrap();
        assert!(manifest.contains("aborted"), "manifest: {manifest}");
        assert!(manifest.contains("stability guard"), "manifest: {manifest}");
    }

    #[test]
    fn refinement_times_are_matched() {
        let a = [0.0, 0.1, 0.2];
        let b = [0.0, 0.05, 0.1, 0.15, 0.2];
        let pairs = shared_time_indices(&a, &b);
        assert_eq!(pairs, vec![(0, 0), (1, 2), (2, 4)]);
    }
}
