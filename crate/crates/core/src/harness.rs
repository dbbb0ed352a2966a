//! Seeded Monte Carlo experiments: universality against the Gaussian-matched
//! field, convergence of empirical spectra to the solver limit, and tail
//! frequencies of `S(z)` against the exponential concentration bound.
//!
//! Every replicate draws its field from a seed derived from
//! `(base seed, experiment, role, size, replicate)`, replicates run on the
//! rayon pool and are reduced in replicate order, so reports do not depend
//! on the number of threads.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::covariance_kernel::{check_conditions, spectral_kernel};
use crate::ensembles::{build_gram, build_wigner, WignerMode};
use crate::field_models::FieldModel;
use crate::limit_solver::{invert_stieltjes, LimitEquation, SolverConfig};
use crate::spectral_empirics::{kolmogorov_distance, levy_distance, DistributionFunction, EmpiricalSpectrum};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnsembleKind {
    Wigner {
        #[serde(default)]
        mode: WignerMode,
    },
    /// `N × p` data matrix with `p = round(N / ratio)`.
    Gram { ratio: f64 },
}

impl EnsembleKind {
    /// Shape of the field patch for matrix size `n`.
    pub fn patch_shape(&self, n: usize) -> (usize, usize) {
        match *self {
            EnsembleKind::Wigner { .. } => (n, n),
            EnsembleKind::Gram { ratio } => (n, ((n as f64 / ratio).round() as usize).max(1)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationSettings {
    /// Declared dependence range `K`.
    pub k: usize,
    pub radii: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: FieldModel,
    pub ensemble: EnsembleKind,
    /// Matrix orders `n` (Wigner) or row counts `N` (Gram), ascending.
    pub sizes: Vec<usize>,
    pub replicates: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_z_points")]
    pub z_points: Vec<Complex64>,
    #[serde(default)]
    pub solver: SolverConfig,
    /// Imaginary part used for Stieltjes inversion.
    #[serde(default = "default_eta")]
    pub eta: f64,
    /// Largest acceptable Lévy distance at the largest size.
    #[serde(default = "default_levy_threshold")]
    pub levy_threshold: f64,
    #[serde(default)]
    pub concentration: Option<ConcentrationSettings>,
}

fn default_z_points() -> Vec<Complex64> {
    vec![Complex64::i()]
}

fn default_eta() -> f64 {
    1e-3
}

fn default_levy_threshold() -> f64 {
    0.05
}

impl ExperimentConfig {
    pub fn new(model: FieldModel, ensemble: EnsembleKind, sizes: Vec<usize>, replicates: usize, seed: u64) -> Self {
        Self {
            model,
            ensemble,
            sizes,
            replicates,
            seed,
            z_points: default_z_points(),
            solver: SolverConfig::default(),
            eta: default_eta(),
            levy_threshold: default_levy_threshold(),
            concentration: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.solver.validate()?;
        if self.replicates == 0 {
            return Err(Error::Model("replicates must be at least 1".into()));
        }
        if self.sizes.is_empty() || self.sizes.contains(&0) {
            return Err(Error::Dimension("sizes must be a non-empty list of positive integers".into()));
        }
        if self.sizes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Dimension("sizes must be strictly ascending".into()));
        }
        if let EnsembleKind::Gram { ratio } = self.ensemble {
            if !(ratio > 0.0 && ratio.is_finite()) {
                return Err(Error::Model(format!("aspect ratio must be positive, got {ratio}")));
            }
        }
        if self.z_points.is_empty() || self.z_points.iter().any(|z| !(z.im > 0.0)) {
            return Err(Error::Domain("z points must be non-empty with Im z > 0".into()));
        }
        if !(self.eta > 0.0) {
            return Err(Error::Domain("eta must be positive".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

/// Seed of one replicate, independent of scheduling.
pub fn derive_seed(base: u64, experiment: &str, role: &str, size: usize, replicate: usize) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    h.update(experiment.as_bytes());
    h.update([0]);
    h.update(role.as_bytes());
    h.update([0]);
    h.update((size as u64).to_le_bytes());
    h.update((replicate as u64).to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

/// Eigenvalues of one ensemble realization of `model`.
pub fn sample_spectrum(model: &FieldModel, ensemble: EnsembleKind, n: usize, seed: u64) -> Result<EmpiricalSpectrum> {
    let (rows, cols) = ensemble.patch_shape(n);
    let patch = model.sample(rows, cols, seed)?;
    match ensemble {
        EnsembleKind::Wigner { mode } => build_wigner(&patch, mode)?.spectrum(),
        EnsembleKind::Gram { .. } => build_gram(&patch)?.spectrum(),
    }
}

fn replicate_spectra(cfg: &ExperimentConfig, model: &FieldModel, experiment: &str, role: &str, n: usize) -> Result<Vec<EmpiricalSpectrum>> {
    (0..cfg.replicates)
        .into_par_iter()
        .map(|r| sample_spectrum(model, cfg.ensemble, n, derive_seed(cfg.seed, experiment, role, n, r)))
        .collect()
}

fn transforms(spectra: &[EmpiricalSpectrum], z: Complex64) -> Result<Vec<Complex64>> {
    spectra.iter().map(|s| s.stieltjes(z)).collect()
}

fn mean(values: &[Complex64]) -> Complex64 {
    values.iter().sum::<Complex64>() / values.len() as f64
}

/// Unbiased variance `E|S - mean|²`, zero for a single replicate.
fn variance(values: &[Complex64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    values.iter().map(|v| (v - m).norm_sqr()).sum::<f64>() / (values.len() - 1) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniversalityPoint {
    pub z: Complex64,
    pub mean_s_x: Complex64,
    pub mean_s_g: Complex64,
    /// `|mean S_X(z) - mean S_G(z)|`.
    pub gap: f64,
    /// Standard error of the difference of the two means.
    pub standard_error: f64,
    /// `|S_X(z) - mean S_G(z)|` per replicate.
    pub replicate_gaps: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniversalitySize {
    pub n: usize,
    pub points: Vec<UniversalityPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniversalityReport {
    pub config_hash: String,
    pub seed: u64,
    pub sizes: Vec<UniversalitySize>,
    /// Per z point: every gap is at most the previous one plus twice its
    /// own standard error.
    pub gap_decreasing: Vec<bool>,
}

/// Compares the model's ensemble with the ensemble of its Gaussian-matched field.
pub fn run_universality(cfg: &ExperimentConfig) -> Result<UniversalityReport> {
    cfg.validate()?;
    let matched = match &cfg.model {
        FieldModel::GaussianMatched { .. } => cfg.model.clone(),
        other => other.gaussian_matched().map_err(|e| Error::UnsupportedModel(e.to_string()))?,
    };
    let r = cfg.replicates as f64;
    let mut sizes = Vec::with_capacity(cfg.sizes.len());
    for &n in &cfg.sizes {
        let x = replicate_spectra(cfg, &cfg.model, "universality", "model", n)?;
        let g = replicate_spectra(cfg, &matched, "universality", "gaussian", n)?;
        let mut points = Vec::with_capacity(cfg.z_points.len());
        for &z in &cfg.z_points {
            let sx = transforms(&x, z)?;
            let sg = transforms(&g, z)?;
            let (mx, mg) = (mean(&sx), mean(&sg));
            points.push(UniversalityPoint {
                z,
                mean_s_x: mx,
                mean_s_g: mg,
                gap: (mx - mg).norm(),
                standard_error: (variance(&sx) / r + variance(&sg) / r).sqrt(),
                replicate_gaps: sx.iter().map(|s| (s - mg).norm()).collect(),
            });
        }
        log::info!("universality n = {n}: gap at {} = {:.3e}", points[0].z, points[0].gap);
        sizes.push(UniversalitySize { n, points });
    }
    let gap_decreasing = (0..cfg.z_points.len())
        .map(|i| {
            sizes
                .windows(2)
                .all(|w| w[1].points[i].gap <= w[0].points[i].gap + 2.0 * w[1].points[i].standard_error)
        })
        .collect();
    Ok(UniversalityReport {
        config_hash: cfg.hash(),
        seed: cfg.seed,
        sizes,
        gap_decreasing,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitComparisonSize {
    pub n: usize,
    pub levy: f64,
    pub kolmogorov: f64,
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitComparisonReport {
    pub config_hash: String,
    pub seed: u64,
    pub sizes: Vec<LimitComparisonSize>,
    pub eta: f64,
    /// Trapezoid mass of the solver density before renormalization.
    pub solver_mass: f64,
    pub energies: Vec<f64>,
    pub solver_density: Vec<f64>,
    /// Pooled eigenvalues at the largest size, for density overlays.
    #[serde(skip)]
    pub largest_spectrum: Option<EmpiricalSpectrum>,
    pub levy_threshold: f64,
    pub within_threshold: bool,
}

/// Energy grid with spacing `η` covering `[lo, hi]`.
pub fn energy_grid(lo: f64, hi: f64, eta: f64) -> Vec<f64> {
    let steps = ((hi - lo) / eta).ceil().max(1.0) as usize;
    let h = (hi - lo) / steps as f64;
    (0..=steps).map(|i| lo + i as f64 * h).collect()
}

/// The solver's limit equation for `cfg`, checking the structural conditions.
pub fn limit_equation(cfg: &ExperimentConfig) -> Result<LimitEquation> {
    let gamma = cfg.model.analytic_gamma()?;
    let report = check_conditions(&gamma);
    if !report.abs_sum.is_finite() {
        return Err(Error::Condition("covariance is not absolutely summable".into()));
    }
    let kernel = spectral_kernel(&gamma, cfg.solver.grid_size)?;
    match cfg.ensemble {
        EnsembleKind::Wigner { .. } => {
            if !report.symmetric_exchange {
                return Err(Error::Condition(
                    "the symmetric-ensemble limit needs gamma(k, l) = gamma(l, k)".into(),
                ));
            }
            Ok(LimitEquation::symmetric(&kernel))
        }
        EnsembleKind::Gram { ratio } => LimitEquation::gram(&kernel, ratio),
    }
}

/// Distances between the replicate-averaged empirical CDF and the solver CDF.
pub fn run_limit_comparison(cfg: &ExperimentConfig) -> Result<LimitComparisonReport> {
    cfg.validate()?;
    let equation = limit_equation(cfg)?;
    let mut pooled = Vec::with_capacity(cfg.sizes.len());
    for &n in &cfg.sizes {
        let spectra = replicate_spectra(cfg, &cfg.model, "limit", "model", n)?;
        pooled.push(EmpiricalSpectrum::pooled(&spectra)?);
    }
    let lo = pooled.iter().map(|s| s.min()).fold(f64::INFINITY, f64::min);
    let hi = pooled.iter().map(|s| s.max()).fold(f64::NEG_INFINITY, f64::max);
    let margin = 0.5 + 0.25 * (hi - lo);
    let energies = energy_grid(lo - margin, hi + margin, cfg.eta);
    let solution = equation.solve_line(&energies, cfg.eta, &cfg.solver)?;
    let density = invert_stieltjes(&solution, cfg.eta)?;

    let sizes: Vec<LimitComparisonSize> = cfg
        .sizes
        .iter()
        .zip(&pooled)
        .map(|(&n, spec)| {
            let emp = DistributionFunction::step(spec.clone());
            LimitComparisonSize {
                n,
                levy: levy_distance(&emp, &density.cdf),
                kolmogorov: kolmogorov_distance(&emp, &density.cdf),
                min_eigenvalue: spec.min(),
                max_eigenvalue: spec.max(),
            }
        })
        .collect();
    for s in &sizes {
        log::info!("limit comparison n = {}: Lévy {:.4}, Kolmogorov {:.4}", s.n, s.levy, s.kolmogorov);
    }
    let within_threshold = sizes.last().is_some_and(|s| s.levy <= cfg.levy_threshold);
    Ok(LimitComparisonReport {
        config_hash: cfg.hash(),
        seed: cfg.seed,
        sizes,
        eta: cfg.eta,
        solver_mass: density.mass,
        energies: density.energies,
        solver_density: density.density,
        largest_spectrum: pooled.pop(),
        levy_threshold: cfg.levy_threshold,
        within_threshold,
    })
}

/// `4 exp(-n r² v² / (2560 K))`.
pub fn concentration_bound(n: usize, r: f64, v: f64, k: usize) -> f64 {
    4.0 * (-(n as f64) * r * r * v * v / (2560.0 * k as f64)).exp()
}

/// Smallest `k/R` with `P(Bin(R, b) ≤ k) ≥ level`, minus `b`: the one-sided
/// upper confidence slack of an observed frequency when the true
/// probability is `b`.
pub fn binomial_slack(b: f64, replicates: usize, level: f64) -> f64 {
    if b >= 1.0 {
        return 0.0;
    }
    let n = replicates;
    let b = b.max(0.0);
    if b == 0.0 {
        return 0.0;
    }
    let (lb, lq) = (b.ln(), (-b).ln_1p());
    let mut log_choose = 0.0;
    let mut cdf = 0.0;
    for k in 0..=n {
        if k > 0 {
            log_choose += ((n - k + 1) as f64).ln() - (k as f64).ln();
        }
        cdf += (log_choose + k as f64 * lb + (n - k) as f64 * lq).exp();
        if cdf >= level {
            return (k as f64 / n as f64 - b).max(0.0);
        }
    }
    1.0 - b
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailPoint {
    pub n: usize,
    pub r: f64,
    /// Fraction of replicates with `|S - mean S| ≥ r`.
    pub frequency: f64,
    pub bound: f64,
    pub slack: f64,
    pub within_bound: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationReport {
    pub config_hash: String,
    pub seed: u64,
    pub z: Complex64,
    pub k: usize,
    pub tails: Vec<TailPoint>,
    /// `(n, std S(z))`.
    pub std: Vec<(usize, f64)>,
    /// Least-squares slope of `log std` against `log n`; `None` for a single size.
    pub decay_exponent: Option<f64>,
    pub all_within_bound: bool,
}

/// Smallest dependence range the model guarantees.
pub fn required_dependence(model: &FieldModel) -> Result<usize> {
    match model.innovation_radius() {
        Some(m) => Ok((2 * m as usize).max(1)),
        None => Ok((model.analytic_gamma()?.radius() as usize).max(1)),
    }
}

fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Tail frequencies of `S(z)` at the first configured `z`, against the bound
/// with `V_f = 2/v`. `K = 0` is treated as `K = 1`.
pub fn run_concentration(cfg: &ExperimentConfig, k: usize, radii: &[f64]) -> Result<ConcentrationReport> {
    cfg.validate()?;
    let z = cfg.z_points[0];
    let k = k.max(1);
    let required = required_dependence(&cfg.model)?;
    if k < required {
        return Err(Error::Model(format!(
            "declared K = {k} but the model is only {required}-dependent"
        )));
    }
    if radii.iter().any(|&r| !(r >= 0.0)) {
        return Err(Error::Model("radii must be nonnegative".into()));
    }
    let mut tails = Vec::new();
    let mut std = Vec::new();
    for &n in &cfg.sizes {
        let spectra = replicate_spectra(cfg, &cfg.model, "concentration", "model", n)?;
        let s = transforms(&spectra, z)?;
        let m = mean(&s);
        let dev: Vec<f64> = s.iter().map(|v| (v - m).norm()).collect();
        for &r in radii {
            let frequency = dev.iter().filter(|&&d| d >= r).count() as f64 / dev.len() as f64;
            let bound = concentration_bound(n, r, z.im, k);
            let slack = binomial_slack(bound, cfg.replicates, 0.99);
            tails.push(TailPoint {
                n,
                r,
                frequency,
                bound,
                slack,
                within_bound: frequency <= bound + slack,
            });
        }
        let sd = variance(&s).sqrt();
        log::info!("concentration n = {n}: std S = {sd:.4e}");
        std.push((n, sd));
    }
    let decay_exponent = (std.len() >= 2).then(|| {
        let xs: Vec<f64> = std.iter().map(|&(n, _)| (n as f64).ln()).collect();
        let ys: Vec<f64> = std.iter().map(|&(_, s)| s.ln()).collect();
        slope(&xs, &ys)
    });
    let all_within_bound = tails.iter().all(|t| t.within_bound);
    Ok(ConcentrationReport {
        config_hash: cfg.hash(),
        seed: cfg.seed,
        z,
        k,
        tails,
        std,
        decay_exponent,
        all_within_bound,
    })
}
