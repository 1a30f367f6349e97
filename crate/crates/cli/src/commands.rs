//! `verify`, `timing` and `families` subcommands.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use transfer_gp::families::Family;
use transfer_gp::oracles::{run_verification, timing_sweep, TimingConfig, TimingReport, TimingStage, VerificationReport, VerifyScope};
use transfer_gp::ModelKind;

use crate::error::{io_err, CliError, Result};

/// Runs each scope once, in the given order.
pub fn verify(scopes: &[VerifyScope], seed: u64) -> Result<VerificationReport> {
    let mut seen = Vec::new();
    let mut report = VerificationReport::default();
    for s in scopes {
        if !seen.contains(s) {
            seen.push(*s);
            report.checks.extend(run_verification(*s, seed)?.checks);
        }
    }
    Ok(report)
}

fn list<T>(value: &str, parse: impl Fn(&str) -> Result<T>) -> Result<Vec<T>> {
    value.split(',').map(str::trim).filter(|s| !s.is_empty()).map(parse).collect()
}

fn number(key: &str, v: &str) -> Result<usize> {
    v.trim().parse().map_err(|_| CliError::Config(format!("{key}: '{v}' is not a non-negative integer")))
}

/// Reads a grid from a TOML file, or from an inline spec such as
/// `kinds=hgp,shgp;source_points=200,400;target_points=100;reps=5`.
pub fn parse_timing_grid(spec: &str) -> Result<TimingConfig> {
    let path = Path::new(spec);
    let cfg: TimingConfig = if path.is_file() {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        toml::from_str(&text).map_err(|e| CliError::Config(e.to_string()))?
    } else {
        let mut cfg = TimingConfig::new(Vec::new(), Vec::new(), 0, 0);
        let mut have = (false, false, false, false);
        for part in spec.split(';').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("expected key=value, found '{part}'")))?;
            match k.trim() {
                "kinds" => {
                    cfg.kinds = list(v, |s| s.parse::<ModelKind>().map_err(CliError::from))?;
                    have.0 = true;
                }
                "source_points" => {
                    cfg.source_points = list(v, |s| number("source_points", s))?;
                    have.1 = true;
                }
                "target_points" => {
                    cfg.target_points = number("target_points", v)?;
                    have.2 = true;
                }
                "reps" => {
                    cfg.reps = number("reps", v)?;
                    have.3 = true;
                }
                "stages" => cfg.stages = list(v, |s| s.parse::<TimingStage>().map_err(CliError::from))?,
                "seed" => cfg.seed = v.trim().parse().map_err(|_| CliError::Config(format!("seed: '{v}' is not an integer")))?,
                other => return Err(CliError::Config(format!("unknown timing key '{other}'"))),
            }
        }
        if !(have.0 && have.1 && have.2 && have.3) {
            return Err(CliError::Config("timing grid needs kinds, source_points, target_points and reps".into()));
        }
        cfg
    };
    cfg.validate()?;
    Ok(cfg)
}

/// CSV with columns `kind,stage,n_s,N_s,N_t,rep,ms`.
pub fn timing_csv(report: &TimingReport) -> String {
    let mut out = String::from("kind,stage,n_s,N_s,N_t,rep,ms\n");
    for r in &report.records {
        let _ = writeln!(out, "{},{},{},{},{},{},{}", r.kind, r.stage, r.n_sources, r.n_source_points, r.n_target_points, r.rep, r.ms);
    }
    out
}

/// Slope per kind and stage, steepest last.
pub fn slope_table(report: &TimingReport) -> String {
    let mut fits: Vec<_> = report.slopes.iter().collect();
    fits.sort_by(|a, b| a.stage.cmp(&b.stage).then(a.slope.total_cmp(&b.slope)));
    let mut out = String::from("kind,stage,slope,min_ms\n");
    for f in fits {
        let pts: Vec<String> = f.points.iter().map(|(n, ms)| format!("{n}:{ms:.4}")).collect();
        let _ = writeln!(out, "{},{},{:.3},{}", f.kind, f.stage, f.slope, pts.join(" "));
    }
    out
}

/// Runs the sweep; writes `timing.csv` and `timing_slopes.csv` into `out`.
pub fn timing(cfg: &TimingConfig, out: Option<&Path>) -> Result<TimingReport> {
    let report = timing_sweep(cfg)?;
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let p = dir.join("timing.csv");
        fs::write(&p, timing_csv(&report)).map_err(io_err(&p))?;
        let p = dir.join("timing_slopes.csv");
        fs::write(&p, slope_table(&report)).map_err(io_err(&p))?;
    }
    Ok(report)
}

pub fn families_list() -> String {
    let mut out = String::new();
    for f in Family::ALL {
        let bounds: Vec<String> = f.bounds().iter().map(|(lo, hi)| format!("[{lo}, {hi}]")).collect();
        let params: Vec<String> = f.parameter_ranges().iter().map(|(n, lo, hi)| format!("{n} in [{lo}, {hi}]")).collect();
        let _ = writeln!(out, "{:<10} dim {}  box {}  parameters: {}", f.name(), f.dim(), bounds.join(" x "), params.join(", "));
    }
    out
}
