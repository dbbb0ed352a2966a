//! Config-driven pipeline behind the `corrspec` binary. Every command
//! computes its artifacts in memory first, so nothing is written when a run
//! fails.

pub mod config;
pub mod plot;
pub mod selftest;

use std::fmt::Write as _;
use std::path::Path;

use corrspec::covariance_kernel::spectral_kernel;
use corrspec::harness::{
    derive_seed, run_concentration, run_limit_comparison, run_universality, sample_spectrum, EnsembleKind,
};
use corrspec::limit_solver::{invert_stieltjes, LimitEquation};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use config::{Command, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Validation(String),
    #[error("numerical failure: {0}")]
    Numeric(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Io(_) => 1,
        }
    }
}

impl From<corrspec::Error> for CliError {
    fn from(e: corrspec::Error) -> Self {
        use corrspec::Error::*;
        match e {
            Dimension(_) | Model(_) | Plan(_) | Domain(_) | Condition(_) | UnsupportedModel(_) | InvalidCovariance { .. } => {
                CliError::Validation(e.to_string())
            }
            Embedding { .. } | Numeric(_) | Convergence { .. } | Class { .. } | SupportCoverage { .. } | Internal(_) => {
                CliError::Numeric(e.to_string())
            }
        }
    }
}

/// Named file contents produced by a command.
pub type Artifacts = Vec<(String, String)>;

fn json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

pub fn config_hash(cfg: &RunConfig) -> String {
    hex::encode(Sha256::digest(serde_json::to_vec(cfg).expect("config serializes")))
}

/// Runs the configured command and returns its artifacts.
pub fn execute(cfg: &RunConfig) -> Result<Artifacts, CliError> {
    match cfg.command {
        Command::Simulate => simulate(cfg),
        Command::Solve => solve(cfg),
        Command::Compare => {
            let report = run_limit_comparison(&cfg.experiment()?)?;
            let mut out = vec![("report.json".to_string(), json(&report))];
            out.extend(plot::emit_comparison(&report));
            Ok(out)
        }
        Command::Universality => {
            let report = run_universality(&cfg.experiment()?)?;
            let mut csv = String::from("n,re_z,im_z,gap,standard_error\n");
            for s in &report.sizes {
                for p in &s.points {
                    let _ = writeln!(csv, "{},{},{},{},{}", s.n, p.z.re, p.z.im, p.gap, p.standard_error);
                }
            }
            Ok(vec![("report.json".into(), json(&report)), ("gap_vs_n.csv".into(), csv)])
        }
        Command::Concentration => {
            let exp = cfg.experiment()?;
            let settings = cfg
                .concentration
                .as_ref()
                .ok_or_else(|| CliError::Validation("concentration needs a `concentration` block with `k` and `radii`".into()))?;
            let report = run_concentration(&exp, settings.k, &settings.radii)?;
            let mut out = vec![("report.json".to_string(), json(&report))];
            out.extend(plot::emit_concentration(&report));
            Ok(out)
        }
        Command::Selftest => {
            let report = selftest::run();
            if report.iter().any(|c| !c.pass) {
                let failed: Vec<&str> = report.iter().filter(|c| !c.pass).map(|c| c.name).collect();
                return Err(CliError::Numeric(format!("selftest checks failed: {}", failed.join(", "))));
            }
            Ok(vec![("selftest.json".into(), json(&report))])
        }
    }
}

fn simulate(cfg: &RunConfig) -> Result<Artifacts, CliError> {
    let exp = cfg.experiment()?;
    let mut out = Artifacts::new();
    let mut stieltjes = String::from("n,replicate,re_z,im_z,re_s,im_s\n");
    for &n in &exp.sizes {
        let spectra = (0..exp.replicates)
            .into_par_iter()
            .map(|r| sample_spectrum(&exp.model, exp.ensemble, n, derive_seed(exp.seed, "simulate", "model", n, r)))
            .collect::<corrspec::Result<Vec<_>>>()?;
        for (r, spec) in spectra.iter().enumerate() {
            let mut buf = Vec::new();
            spec.write_csv(&mut buf).map_err(|e| CliError::Io(e.to_string()))?;
            out.push((format!("spectrum_n{n}_r{r}.csv"), String::from_utf8(buf).expect("utf8")));
            for &z in &exp.z_points {
                let s = spec.stieltjes(z)?;
                let _ = writeln!(stieltjes, "{n},{r},{},{},{},{}", z.re, z.im, s.re, s.im);
            }
        }
    }
    out.push(("stieltjes.csv".into(), stieltjes));
    Ok(out)
}

fn solve(cfg: &RunConfig) -> Result<Artifacts, CliError> {
    cfg.solver.validate()?;
    let gamma = match (&cfg.gamma, &cfg.model) {
        (Some(g), None) => g.clone(),
        (None, Some(m)) => m.analytic_gamma()?,
        _ => return Err(CliError::Validation("solve needs exactly one of `gamma` or `model`".into())),
    };
    let kernel = spectral_kernel(&gamma, cfg.solver.grid_size)?;
    let equation = match cfg.ensemble {
        EnsembleKind::Wigner { .. } => LimitEquation::symmetric(&kernel),
        EnsembleKind::Gram { ratio } => LimitEquation::gram(&kernel, ratio)?,
    };
    if cfg.z_points.iter().any(|z| !(z.im > 0.0)) {
        return Err(CliError::Validation("z_points need Im z > 0".into()));
    }
    let points = cfg
        .z_points
        .par_iter()
        .map(|&z| equation.solve(z, &cfg.solver, None))
        .collect::<corrspec::Result<Vec<_>>>()?;
    let mut csv = String::from("re_z,im_z,re_s,im_s,iterations,residual\n");
    for p in &points {
        let _ = writeln!(csv, "{},{},{},{},{},{}", p.z.re, p.z.im, p.s.re, p.s.im, p.iterations, p.residual);
    }
    let mut out = vec![("stieltjes.csv".to_string(), csv)];
    if let Some(grid) = cfg.energies {
        if grid.count < 2 || !(grid.max > grid.min) {
            return Err(CliError::Validation("energies need count >= 2 and max > min".into()));
        }
        let line = equation.solve_line(&grid.points(), cfg.eta, &cfg.solver)?;
        let mut buf = Vec::new();
        line.write_csv(&mut buf).map_err(|e| CliError::Io(e.to_string()))?;
        out.push(("limit_solution.csv".into(), String::from_utf8(buf).expect("utf8")));
        let density = invert_stieltjes(&line, cfg.eta)?;
        let mut buf = Vec::new();
        density.cdf.write_csv(&mut buf).map_err(|e| CliError::Io(e.to_string()))?;
        out.push(("limit_cdf.csv".into(), String::from_utf8(buf).expect("utf8")));
    }
    Ok(out)
}

#[derive(Debug, Serialize)]
struct ArtifactEntry<'a> {
    name: &'a str,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    core_version: &'static str,
    command: Command,
    config_hash: String,
    seed: u64,
    threads: usize,
    config: &'a RunConfig,
    artifacts: Vec<ArtifactEntry<'a>>,
}

/// Writes the artifacts and `manifest.json` into `out_dir`.
pub fn write_artifacts(out_dir: &Path, cfg: &RunConfig, artifacts: &Artifacts, threads: usize) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::Io(format!("{}: {e}", out_dir.display()));
    std::fs::create_dir_all(out_dir).map_err(io)?;
    for (name, contents) in artifacts {
        std::fs::write(out_dir.join(name), contents).map_err(io)?;
    }
    let manifest = Manifest {
        tool: "corrspec",
        version: env!("CARGO_PKG_VERSION"),
        core_version: corrspec::VERSION,
        command: cfg.command,
        config_hash: config_hash(cfg),
        seed: cfg.seed,
        threads,
        config: cfg,
        artifacts: artifacts
            .iter()
            .map(|(name, contents)| ArtifactEntry {
                name,
                sha256: hex::encode(Sha256::digest(contents.as_bytes())),
            })
            .collect(),
    };
    std::fs::write(out_dir.join("manifest.json"), json(&manifest)).map_err(io)?;
    Ok(())
}

/// The `S(z)` rows of a `stieltjes.csv`.
pub fn parse_stieltjes_csv(text: &str) -> Vec<(Complex64, Complex64)> {
    text.lines()
        .skip(1)
        .filter_map(|l| {
            let v: Vec<f64> = l.split(',').take(4).filter_map(|x| x.parse().ok()).collect();
            (v.len() == 4).then(|| (Complex64::new(v[0], v[1]), Complex64::new(v[2], v[3])))
        })
        .collect()
}
