//! Eigenvalues, empirical spectral distributions, Stieltjes transforms and
//! distances between distribution functions.

use std::io::Write;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::ensembles::{SymmetricEnsemble, SymmetricMatrix};
use crate::{Error, Result};

/// Sorted eigenvalues `λ_1 ≤ … ≤ λ_n` of a symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalSpectrum {
    eigenvalues: Vec<f64>,
}

impl EmpiricalSpectrum {
    pub fn new(mut eigenvalues: Vec<f64>) -> Result<Self> {
        if eigenvalues.is_empty() {
            return Err(Error::Dimension("empty spectrum".into()));
        }
        if eigenvalues.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite eigenvalue".into()));
        }
        eigenvalues.sort_by(f64::total_cmp);
        Ok(Self { eigenvalues })
    }

    /// Pools several spectra into one; its CDF is the mean of their CDFs
    /// when all have the same order.
    pub fn pooled<'a>(spectra: impl IntoIterator<Item = &'a EmpiricalSpectrum>) -> Result<Self> {
        Self::new(spectra.into_iter().flat_map(|s| s.eigenvalues.iter().copied()).collect())
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn max(&self) -> f64 {
        self.eigenvalues[self.eigenvalues.len() - 1]
    }

    /// `F(x) = #{λ_i ≤ x} / n`.
    pub fn cdf(&self, x: f64) -> f64 {
        self.eigenvalues.partition_point(|&l| l <= x) as f64 / self.len() as f64
    }

    pub fn stieltjes(&self, z: Complex64) -> Result<Complex64> {
        stieltjes_of_spectrum(self, z)
    }

    /// Single-column CSV with a header line.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "eigenvalue")?;
        for l in &self.eigenvalues {
            writeln!(w, "{l:.17e}")?;
        }
        Ok(())
    }
}

/// Full symmetric eigensolve (values only), validated by the trace identity.
pub fn eigenvalues<M: SymmetricMatrix + ?Sized>(ensemble: &M) -> Result<EmpiricalSpectrum> {
    matrix_eigenvalues(ensemble.matrix())
}

pub fn matrix_eigenvalues(a: &DMatrix<f64>) -> Result<EmpiricalSpectrum> {
    let n = a.nrows();
    if n == 0 || n != a.ncols() {
        return Err(Error::Dimension(format!("expected a non-empty square matrix, got {}x{}", a.nrows(), a.ncols())));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("matrix has non-finite entries".into()));
    }
    let values = a.symmetric_eigenvalues();
    let sum: f64 = values.iter().sum();
    let trace = a.trace();
    let max_abs = a.amax();
    let tol = 1e-9 * n as f64 * max_abs.max(f64::MIN_POSITIVE);
    if (sum - trace).abs() > tol {
        return Err(Error::Numeric(format!(
            "eigensolver failed the trace check: Σλ = {sum}, tr = {trace}"
        )));
    }
    EmpiricalSpectrum::new(values.iter().copied().collect())
}

/// `S(z) = (1/n) Σ 1/(λ_i - z)` for `Im z > 0`.
pub fn stieltjes_of_spectrum(spectrum: &EmpiricalSpectrum, z: Complex64) -> Result<Complex64> {
    if !(z.im > 0.0) {
        return Err(Error::Domain(format!("Stieltjes transform needs Im z > 0, got {z}")));
    }
    let sum: Complex64 = spectrum.eigenvalues.iter().map(|&l| 1.0 / (l - z)).sum();
    Ok(sum / spectrum.len() as f64)
}

/// A distribution function on ℝ.
#[derive(Debug, Clone, PartialEq)]
pub enum DistributionFunction {
    /// Right-continuous step function of an empirical spectrum.
    Step(EmpiricalSpectrum),
    /// Linear interpolant of `(x_i, F_i)`; zero left of `x_0`, one from `x_last` on.
    Linear { x: Vec<f64>, f: Vec<f64> },
}

impl DistributionFunction {
    pub fn linear(x: Vec<f64>, f: Vec<f64>) -> Result<Self> {
        if x.len() != f.len() || x.len() < 2 {
            return Err(Error::Dimension("CDF grid needs at least two matching points".into()));
        }
        if x.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Dimension("CDF grid must be strictly increasing".into()));
        }
        if f.windows(2).any(|w| w[1] < w[0]) || f[0] < 0.0 || *f.last().unwrap() > 1.0 + 1e-12 {
            return Err(Error::Numeric("CDF values must be nondecreasing in [0, 1]".into()));
        }
        Ok(Self::Linear { x, f })
    }

    pub fn step(spectrum: EmpiricalSpectrum) -> Self {
        Self::Step(spectrum)
    }

    /// Right-continuous value `F(x)`.
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            Self::Step(s) => s.cdf(t),
            Self::Linear { x, f } => {
                if t < x[0] {
                    return 0.0;
                }
                let last = x.len() - 1;
                if t >= x[last] {
                    return 1.0;
                }
                let i = x.partition_point(|&v| v <= t) - 1;
                let w = (t - x[i]) / (x[i + 1] - x[i]);
                f[i] + w * (f[i + 1] - f[i])
            }
        }
    }

    /// Left limit `F(x⁻)`.
    pub fn eval_left(&self, t: f64) -> f64 {
        match self {
            Self::Step(s) => s.eigenvalues.partition_point(|&l| l < t) as f64 / s.len() as f64,
            Self::Linear { x, f } => {
                if t <= x[0] {
                    return 0.0;
                }
                let last = x.len() - 1;
                if t > x[last] {
                    return 1.0;
                }
                if t == x[last] {
                    return f[last];
                }
                self.eval(t)
            }
        }
    }

    /// Points where the function may fail to be linear.
    pub fn breakpoints(&self) -> &[f64] {
        match self {
            Self::Step(s) => s.eigenvalues(),
            Self::Linear { x, .. } => x,
        }
    }

    /// Two-column CSV `x,F` on the breakpoints.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "x,F")?;
        match self {
            Self::Step(s) => {
                let n = s.len() as f64;
                for (i, l) in s.eigenvalues.iter().enumerate() {
                    writeln!(w, "{l:.17e},{:.17e}", (i + 1) as f64 / n)?;
                }
            }
            Self::Linear { x, f } => {
                for (a, b) in x.iter().zip(f) {
                    writeln!(w, "{a:.17e},{b:.17e}")?;
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceKind {
    Levy,
    Kolmogorov,
}

/// Absolute tolerance of the Lévy bisection.
pub const LEVY_TOLERANCE: f64 = 1e-6;

pub fn distribution_distance(f: &DistributionFunction, g: &DistributionFunction, kind: DistanceKind) -> f64 {
    match kind {
        DistanceKind::Levy => levy_distance(f, g),
        DistanceKind::Kolmogorov => kolmogorov_distance(f, g),
    }
}

/// `sup_x |F(x) - G(x)|`, attained at a breakpoint or as a left limit there.
pub fn kolmogorov_distance(f: &DistributionFunction, g: &DistributionFunction) -> f64 {
    f.breakpoints()
        .iter()
        .chain(g.breakpoints())
        .fold(0.0f64, |d, &x| {
            d.max((f.eval(x) - g.eval(x)).abs())
                .max((f.eval_left(x) - g.eval_left(x)).abs())
        })
}

// G(x) ≤ F(x + ε) + ε and F(x - ε) - ε ≤ G(x) for all x. Both differences are
// linear between the merged breakpoints, so checking values and left limits
// at those points covers every x.
fn levy_sandwich_holds(f: &DistributionFunction, g: &DistributionFunction, eps: f64) -> bool {
    let upper = |x: f64| {
        g.eval(x) <= f.eval(x + eps) + eps && g.eval_left(x) <= f.eval_left(x + eps) + eps
    };
    let lower = |x: f64| {
        f.eval(x - eps) - eps <= g.eval(x) && f.eval_left(x - eps) - eps <= g.eval_left(x)
    };
    g.breakpoints().iter().all(|&x| upper(x) && lower(x))
        && f.breakpoints().iter().all(|&b| upper(b - eps) && lower(b + eps))
}

/// Lévy distance by bisection on `ε ∈ [0, 1]`; the sandwich always holds at 1.
pub fn levy_distance(f: &DistributionFunction, g: &DistributionFunction) -> f64 {
    if levy_sandwich_holds(f, g, 0.0) {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    while hi - lo > LEVY_TOLERANCE {
        let mid = 0.5 * (lo + hi);
        if levy_sandwich_holds(f, g, mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Result of the trace comparison inequality
/// `|S_A(z) - S_B(z)|² ≤ Tr((A - B)²) / (n |Im z|⁴)` for normalized matrices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceComparison {
    pub gap: f64,
    pub bound: f64,
}

pub fn trace_comparison_bound(a: &SymmetricEnsemble, b: &SymmetricEnsemble, z: Complex64) -> Result<TraceComparison> {
    let n = a.order();
    if n != b.order() {
        return Err(Error::Dimension(format!("orders differ: {n} vs {}", b.order())));
    }
    if z.im == 0.0 {
        return Err(Error::Domain("trace comparison needs Im z ≠ 0".into()));
    }
    // S(conj z) = conj S(z)
    let zu = if z.im > 0.0 { z } else { z.conj() };
    let sa = eigenvalues(a)?.stieltjes(zu)?;
    let sb = eigenvalues(b)?.stieltjes(zu)?;
    let gap = (sa - sb).norm_sqr();
    let diff = a.matrix() - b.matrix();
    let bound = diff.norm_squared() / (n as f64 * z.im.powi(4));
    if gap > bound + 1e-12 {
        return Err(Error::Internal(format!("trace comparison violated: {gap:e} > {bound:e}")));
    }
    Ok(TraceComparison { gap, bound })
}
