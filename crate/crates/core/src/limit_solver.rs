//! Self-consistent equations for the limiting Stieltjes transform.
//!
//! * symmetric ensembles: `h(x,z) = (-z - ∫ f(x,y) h(y,z) dy)^{-1}`
//! * Gram ensembles: `h(x,z) = (-z + ∫ f(x,s) / (1 + c ∫ f(u,s) h(u,z) du) ds)^{-1}`
//! * separable covariances: the scalar equation
//!   `h(z) = ∫ λ dυ(λ) / (-z - λ h(z))`, `S(z) = ∫ dυ(λ) / (-z - λ h(z))`
//!
//! and `S(z) = ∫₀¹ h(x,z) dx` for the first two. All three are solved by
//! damped fixed-point iteration, started from the free solution `-1/z` and
//! carried down from `Im z = 2` along a decreasing `η` path.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariance_kernel::SpectralKernel;
use crate::spectral_empirics::DistributionFunction;
use crate::{Error, Result};

/// Asymmetry of `f(x,y) - f(y,x)` above which symmetrization is reported.
pub const KERNEL_ASYMMETRY_WARNING: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Grid size `M` used when a kernel is built for the solver.
    pub grid_size: usize,
    /// Damping `α ∈ (0, 1]`: `h ← (1-α) h + α T(h)`.
    pub damping: f64,
    /// Stop when the sup-norm change of `h` drops below this.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Decreasing imaginary parts visited before the target `Im z`.
    pub eta_path: Vec<f64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            grid_size: 256,
            damping: 0.5,
            tolerance: 1e-9,
            max_iterations: 10_000,
            eta_path: vec![2.0, 1.0, 0.5, 0.25, 0.1, 0.05, 0.02, 0.01, 0.005],
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid_size < 8 {
            return Err(Error::Model(format!("grid size {} below 8", self.grid_size)));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::Model(format!("damping {} outside (0, 1]", self.damping)));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::Model("tolerance must be positive".into()));
        }
        if self.eta_path.iter().any(|&e| !(e > 0.0)) || self.eta_path.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(Error::Model("eta path must be positive and strictly decreasing".into()));
        }
        Ok(())
    }
}

/// Solution of one equation at one spectral parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedPoint {
    pub z: Complex64,
    /// `h(x_i, z)` on the grid; a single value for the separable equation.
    pub h: Vec<Complex64>,
    pub s: Complex64,
    pub iterations: usize,
    /// `sup |h - T(h)|` at the returned iterate.
    pub residual: f64,
}

/// Low-rank factorization `F/M ≈ U Vᵀ` of the sampled kernel, so each
/// quadrature `(1/M) Σ_j f(x_i, y_j) h_j` costs `O(M r)`.
#[derive(Debug, Clone)]
struct KernelOperator {
    u: DMatrix<f64>,
    v: DMatrix<f64>,
}

impl KernelOperator {
    fn new(kernel: &SpectralKernel) -> Self {
        let m = kernel.grid_size();
        let scaled = kernel.values() / m as f64;
        if let Some(factor) = kernel.factor() {
            let col = DVector::from_column_slice(factor);
            let u = DMatrix::from_columns(&[col.clone() / m as f64]);
            let v = DMatrix::from_columns(&[col]);
            // keep the factor only if it reproduces the samples
            if (&u * v.transpose() - &scaled).amax() <= 1e-13 * scaled.amax().max(f64::MIN_POSITIVE) {
                return Self { u, v };
            }
        }
        let svd = scaled.clone().svd(true, true);
        let (Some(left), Some(right_t)) = (svd.u, svd.v_t) else {
            return Self {
                u: scaled,
                v: DMatrix::identity(m, m),
            };
        };
        let smax = svd.singular_values.max();
        let keep: Vec<usize> = (0..svd.singular_values.len())
            .filter(|&i| svd.singular_values[i] > 1e-14 * smax)
            .collect();
        let u = DMatrix::from_fn(m, keep.len(), |i, c| left[(i, keep[c])] * svd.singular_values[keep[c]]);
        let v = DMatrix::from_fn(m, keep.len(), |j, c| right_t[(keep[c], j)]);
        Self { u, v }
    }

    fn rank(&self) -> usize {
        self.u.ncols()
    }

    // out_i = (1/M) Σ_j f(x_i, y_j) h_j
    fn apply(&self, h: &[Complex64], out: &mut [Complex64], tmp: &mut [Complex64]) {
        Self::apply_factors(&self.u, &self.v, h, out, tmp);
    }

    // out_j = (1/M) Σ_i f(x_i, y_j) h_i
    fn apply_transpose(&self, h: &[Complex64], out: &mut [Complex64], tmp: &mut [Complex64]) {
        Self::apply_factors(&self.v, &self.u, h, out, tmp);
    }

    fn apply_factors(left: &DMatrix<f64>, right: &DMatrix<f64>, h: &[Complex64], out: &mut [Complex64], tmp: &mut [Complex64]) {
        let r = left.ncols();
        for c in 0..r {
            let col = right.column(c);
            tmp[c] = col.iter().zip(h).map(|(&a, &b)| b * a).sum();
        }
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = Complex64::new(0.0, 0.0);
            for c in 0..r {
                acc += tmp[c] * left[(i, c)];
            }
            *o = acc;
        }
    }
}

/// Atomic measure `υ = Σ w_i δ_{λ_i}`: the law of `f(x)` for `x` uniform on `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralMeasureOnLine {
    atoms: Vec<(f64, f64)>,
}

impl SpectralMeasureOnLine {
    pub fn from_atoms(atoms: impl IntoIterator<Item = (f64, f64)>) -> Result<Self> {
        let mut atoms: Vec<(f64, f64)> = atoms.into_iter().filter(|&(_, w)| w != 0.0).collect();
        if atoms.is_empty() {
            return Err(Error::Model("measure has no atoms".into()));
        }
        if atoms.iter().any(|&(l, w)| !l.is_finite() || !(w > 0.0)) {
            return Err(Error::Model("atoms need finite locations and positive weights".into()));
        }
        let total: f64 = atoms.iter().map(|a| a.1).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Model(format!("measure has total mass {total}, expected 1")));
        }
        atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(Self { atoms })
    }

    pub fn point_mass(lambda: f64) -> Self {
        Self {
            atoms: vec![(lambda, 1.0)],
        }
    }

    /// Law of the grid samples `f(x_i)`, each with weight `1/M`.
    pub fn from_samples(samples: &[f64]) -> Result<Self> {
        let w = 1.0 / samples.len() as f64;
        Self::from_atoms(samples.iter().map(|&l| (l, w)))
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    /// `υ(t) = mass of {λ < t}`.
    pub fn cdf(&self, t: f64) -> f64 {
        self.atoms.iter().filter(|a| a.0 < t).map(|a| a.1).sum()
    }

    fn first_moment(&self) -> f64 {
        self.atoms.iter().map(|&(l, w)| l * w).sum()
    }
}

/// One of the three self-consistent equations, ready to be solved.
#[derive(Debug, Clone)]
pub enum LimitEquation {
    Symmetric(KernelEquation),
    Gram { kernel: KernelEquation, ratio: f64 },
    Separable(SpectralMeasureOnLine),
}

#[derive(Debug, Clone)]
pub struct KernelEquation {
    operator: KernelOperator,
    grid_size: usize,
}

impl KernelEquation {
    pub fn rank(&self) -> usize {
        self.operator.rank()
    }
}

impl LimitEquation {
    /// Symmetric-ensemble equation; an exchange-asymmetric kernel is replaced
    /// by `(f + fᵀ)/2` with a warning.
    pub fn symmetric(kernel: &SpectralKernel) -> Self {
        let asym = kernel.exchange_asymmetry();
        let kernel = if asym > 0.0 {
            if asym > KERNEL_ASYMMETRY_WARNING {
                log::warn!("kernel not exchange-symmetric (max |f(x,y) - f(y,x)| = {asym:e}); symmetrizing");
            }
            kernel.symmetrized()
        } else {
            kernel.clone()
        };
        Self::Symmetric(KernelEquation {
            operator: KernelOperator::new(&kernel),
            grid_size: kernel.grid_size(),
        })
    }

    pub fn gram(kernel: &SpectralKernel, ratio: f64) -> Result<Self> {
        if !(ratio > 0.0 && ratio.is_finite()) {
            return Err(Error::Model(format!("aspect ratio must be positive, got {ratio}")));
        }
        Ok(Self::Gram {
            kernel: KernelEquation {
                operator: KernelOperator::new(kernel),
                grid_size: kernel.grid_size(),
            },
            ratio,
        })
    }

    pub fn separable(measure: SpectralMeasureOnLine) -> Self {
        Self::Separable(measure)
    }

    fn unknowns(&self) -> usize {
        match self {
            Self::Symmetric(k) | Self::Gram { kernel: k, .. } => k.grid_size,
            Self::Separable(_) => 1,
        }
    }

    fn initial(&self, z: Complex64) -> Vec<Complex64> {
        match self {
            Self::Separable(m) => vec![-m.first_moment() / z],
            _ => vec![-1.0 / z; self.unknowns()],
        }
    }

    /// Applies the fixed-point map `T` to `h`.
    fn map(&self, z: Complex64, h: &[Complex64], out: &mut [Complex64], work: &mut Workspace) {
        match self {
            Self::Symmetric(k) => {
                k.operator.apply(h, out, &mut work.rank);
                for o in out.iter_mut() {
                    *o = 1.0 / (-z - *o);
                }
            }
            Self::Gram { kernel, ratio } => {
                kernel.operator.apply_transpose(h, &mut work.grid, &mut work.rank);
                for g in work.grid.iter_mut() {
                    *g = 1.0 / (1.0 + *ratio * *g);
                }
                kernel.operator.apply(&work.grid, out, &mut work.rank);
                for o in out.iter_mut() {
                    *o = 1.0 / (-z + *o);
                }
            }
            Self::Separable(m) => {
                let hz = h[0];
                out[0] = m.atoms.iter().map(|&(l, w)| w * l / (-z - l * hz)).sum();
            }
        }
    }

    fn transform(&self, z: Complex64, h: &[Complex64]) -> Complex64 {
        match self {
            Self::Separable(m) => m.atoms.iter().map(|&(l, w)| w / (-z - l * h[0])).sum(),
            // periodic trapezoid = mean over the grid
            _ => h.iter().sum::<Complex64>() / h.len() as f64,
        }
    }

    fn check_class(&self, z: Complex64, h: &[Complex64], margin: f64) -> Result<()> {
        if let Self::Separable(m) = self {
            // υ concentrated at 0 forces h ≡ 0
            if m.atoms.iter().all(|a| a.0 == 0.0) {
                return Ok(());
            }
        }
        for (index, v) in h.iter().enumerate() {
            if !(z.im * v.im > 0.0) || !v.re.is_finite() {
                return Err(Error::Class {
                    index,
                    im_z: z.im,
                    im_h: v.im,
                });
            }
            if let Self::Symmetric(_) | Self::Gram { .. } = self {
                if z.im.abs() * v.norm() > 1.0 + margin {
                    return Err(Error::Class {
                        index,
                        im_z: z.im,
                        im_h: v.im,
                    });
                }
            }
        }
        Ok(())
    }

    /// Damped iteration at a single `z`, from `start` (or `-1/z`).
    pub fn iterate(&self, z: Complex64, cfg: &SolverConfig, start: Option<&[Complex64]>) -> Result<FixedPoint> {
        if !(z.im > 0.0) {
            return Err(Error::Domain(format!("need Im z > 0, got {z}")));
        }
        let n = self.unknowns();
        let mut h: Vec<Complex64> = match start {
            Some(s) if s.len() == n => s.to_vec(),
            Some(s) => {
                return Err(Error::Dimension(format!("warm start has {} values, expected {n}", s.len())));
            }
            None => self.initial(z),
        };
        let mut work = Workspace::new(n, self);
        let mut next = vec![Complex64::new(0.0, 0.0); n];
        let alpha = cfg.damping;
        let mut change = f64::INFINITY;
        let mut iterations = 0;
        while iterations < cfg.max_iterations {
            self.map(z, &h, &mut next, &mut work);
            iterations += 1;
            change = 0.0;
            for (hi, ti) in h.iter_mut().zip(&next) {
                let step = alpha * (ti - *hi);
                change = change.max(step.norm());
                *hi += step;
            }
            if !change.is_finite() {
                break;
            }
            if change < cfg.tolerance {
                break;
            }
        }
        self.map(z, &h, &mut next, &mut work);
        let residual = h.iter().zip(&next).fold(0.0f64, |r, (a, b)| r.max((a - b).norm()));
        if !(change < cfg.tolerance) || !(residual < 10.0 * cfg.tolerance) {
            return Err(Error::Convergence {
                iterations,
                residual,
            });
        }
        self.check_class(z, &h, 1e-6)?;
        let s = self.transform(z, &h);
        Ok(FixedPoint {
            z,
            h,
            s,
            iterations,
            residual,
        })
    }

    /// Solves at `z`, either from a warm start or by continuation along the
    /// configured `η` path (entries above `Im z`, at fixed `Re z`).
    pub fn solve(&self, z: Complex64, cfg: &SolverConfig, warm_start: Option<&[Complex64]>) -> Result<FixedPoint> {
        cfg.validate()?;
        if !(z.im > 0.0) {
            return Err(Error::Domain(format!("need Im z > 0, got {z}")));
        }
        if let Some(w) = warm_start {
            return self.iterate(z, cfg, Some(w));
        }
        let mut current: Option<Vec<Complex64>> = None;
        let mut total = 0;
        for &eta in cfg.eta_path.iter().filter(|&&e| e > z.im) {
            let fp = self.iterate(Complex64::new(z.re, eta), cfg, current.as_deref())?;
            total += fp.iterations;
            current = Some(fp.h);
        }
        let mut fp = self.iterate(z, cfg, current.as_deref())?;
        fp.iterations += total;
        Ok(fp)
    }

    /// Solves on the line `E + iη` for every energy. The first point of each
    /// chunk is reached by continuation, the rest warm-start from their left
    /// neighbour. Chunks run in parallel.
    pub fn solve_line(&self, energies: &[f64], eta: f64, cfg: &SolverConfig) -> Result<LimitSolution> {
        cfg.validate()?;
        if !(eta > 0.0) {
            return Err(Error::Domain(format!("need η > 0, got {eta}")));
        }
        const CHUNK: usize = 64;
        let chunks: Vec<Result<Vec<FixedPoint>>> = energies
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut out: Vec<FixedPoint> = Vec::with_capacity(chunk.len());
                for &e in chunk {
                    let z = Complex64::new(e, eta);
                    let warm = out.last().map(|fp| fp.h.as_slice());
                    let fp = match warm {
                        Some(w) => self.iterate(z, cfg, Some(w))?,
                        None => self.solve(z, cfg, None)?,
                    };
                    out.push(fp);
                }
                Ok(out)
            })
            .collect();
        let mut points = Vec::with_capacity(energies.len());
        for c in chunks {
            points.extend(c?);
        }
        Ok(LimitSolution { eta, points })
    }
}

struct Workspace {
    grid: Vec<Complex64>,
    rank: Vec<Complex64>,
}

impl Workspace {
    fn new(n: usize, eq: &LimitEquation) -> Self {
        let r = match eq {
            LimitEquation::Symmetric(k) | LimitEquation::Gram { kernel: k, .. } => k.rank(),
            LimitEquation::Separable(_) => 0,
        };
        Self {
            grid: vec![Complex64::new(0.0, 0.0); n],
            rank: vec![Complex64::new(0.0, 0.0); r.max(1)],
        }
    }
}

/// Fixed point of `h = (-z - ∫ f h)^{-1}` with `S = ∫ h`.
pub fn solve_kp(kernel: &SpectralKernel, z: Complex64, cfg: &SolverConfig, warm_start: Option<&[Complex64]>) -> Result<FixedPoint> {
    LimitEquation::symmetric(kernel).solve(z, cfg, warm_start)
}

/// Fixed point of the Gram equation with aspect ratio `c = N/p`.
pub fn solve_gram_limit(
    kernel: &SpectralKernel,
    c: f64,
    z: Complex64,
    cfg: &SolverConfig,
    warm_start: Option<&[Complex64]>,
) -> Result<FixedPoint> {
    LimitEquation::gram(kernel, c)?.solve(z, cfg, warm_start)
}

/// Scalar fixed point for a separable covariance; `h` holds the single value `h(z)`.
pub fn solve_separable(measure: &SpectralMeasureOnLine, z: Complex64, cfg: &SolverConfig) -> Result<FixedPoint> {
    LimitEquation::separable(measure.clone()).solve(z, cfg, None)
}

/// Solutions along a horizontal line `Im z = η`.
#[derive(Debug, Clone, PartialEq)]
pub struct LimitSolution {
    pub eta: f64,
    pub points: Vec<FixedPoint>,
}

impl LimitSolution {
    pub fn energies(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.z.re).collect()
    }

    pub fn transforms(&self) -> Vec<Complex64> {
        self.points.iter().map(|p| p.s).collect()
    }

    /// CSV with columns `E,eta,re_s,im_s,density`.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "E,eta,re_s,im_s,density")?;
        for p in &self.points {
            writeln!(
                w,
                "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
                p.z.re,
                p.z.im,
                p.s.re,
                p.s.im,
                p.s.im / PI
            )?;
        }
        Ok(())
    }
}

/// Density `Im S(E + iη)/π` and its cumulative distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityEstimate {
    pub energies: Vec<f64>,
    pub density: Vec<f64>,
    /// Trapezoid mass before renormalization.
    pub mass: f64,
    pub cdf: DistributionFunction,
}

/// Stieltjes–Perron inversion. The CDF is the cumulative trapezoid of the
/// density, renormalized to end at 1 when the mass lies in `[0.97, 1.03]`.
pub fn invert_stieltjes(solution: &LimitSolution, eta: f64) -> Result<DensityEstimate> {
    if solution.points.len() < 2 {
        return Err(Error::Dimension("inversion needs at least two energies".into()));
    }
    if solution
        .points
        .iter()
        .any(|p| (p.z.im - eta).abs() > 1e-12 * eta.max(1.0))
    {
        return Err(Error::Domain(format!("solution is not on the line Im z = {eta}")));
    }
    let energies = solution.energies();
    let density: Vec<f64> = solution.points.iter().map(|p| p.s.im / PI).collect();
    let mut cumulative = Vec::with_capacity(energies.len());
    let mut acc = 0.0;
    cumulative.push(0.0);
    for i in 1..energies.len() {
        acc += 0.5 * (density[i] + density[i - 1]) * (energies[i] - energies[i - 1]);
        cumulative.push(acc);
    }
    let mass = acc;
    if !(0.97..=1.03).contains(&mass) {
        return Err(Error::SupportCoverage { mass });
    }
    let f: Vec<f64> = cumulative.iter().map(|c| (c / mass).min(1.0)).collect();
    let cdf = DistributionFunction::linear(energies.clone(), f)?;
    Ok(DensityEstimate {
        energies,
        density,
        mass,
        cdf,
    })
}

/// Laws with closed-form Stieltjes transforms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum ReferenceLaw {
    /// Semicircle on `[-2σ, 2σ]`.
    Semicircle { variance: f64 },
    /// Limit of `(1/p) 𝒳𝒳ᵀ` with i.i.d. entries of variance `σ²` and `N/p → c`.
    MarchenkoPastur { ratio: f64, variance: f64 },
}

fn herglotz_root(a: Complex64, b: Complex64, c: Complex64, z: Complex64, measure_on_half_line: bool) -> Result<Complex64> {
    // roots of a m² + b m + c = 0
    let disc = (b * b - 4.0 * a * c).sqrt();
    let roots = [(-b + disc) / (2.0 * a), (-b - disc) / (2.0 * a)];
    let admissible = |m: &Complex64| m.im > 0.0 && (!measure_on_half_line || (z * m).im >= -1e-12 * m.norm());
    let mut ok = roots.iter().filter(|m| admissible(m));
    match (ok.next(), ok.next()) {
        (Some(&m), None) => Ok(m),
        (Some(&m1), Some(&m2)) => Ok(if m1.im >= m2.im { m1 } else { m2 }),
        _ => Err(Error::Internal(format!("no Herglotz root at z = {z}: {roots:?}"))),
    }
}

pub fn reference_stieltjes(law: ReferenceLaw, z: Complex64) -> Result<Complex64> {
    if !(z.im > 0.0) {
        return Err(Error::Domain(format!("need Im z > 0, got {z}")));
    }
    let one = Complex64::new(1.0, 0.0);
    match law {
        ReferenceLaw::Semicircle { variance } => {
            if !(variance > 0.0) {
                return Err(Error::Model("semicircle variance must be positive".into()));
            }
            // σ² s² + z s + 1 = 0
            herglotz_root(Complex64::new(variance, 0.0), z, one, z, false)
        }
        ReferenceLaw::MarchenkoPastur { ratio, variance } => {
            if !(ratio > 0.0 && variance > 0.0) {
                return Err(Error::Model("Marchenko–Pastur ratio and variance must be positive".into()));
            }
            // unit variance: c w m² + (w - 1 + c) m + 1 = 0 at w = z/σ², then rescale
            let w = z / variance;
            let m = herglotz_root(ratio * w, w - 1.0 + ratio, one, w, true)?;
            Ok(m / variance)
        }
    }
}
