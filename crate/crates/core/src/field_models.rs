//! Finite patches of stationary random fields on ℤ².
//!
//! Every sampler is a pure function of `(model, shape, seed)`. Innovations
//! `ξ_{i,j}` are addressed by lattice site: the value at a site depends only on
//! the seed and the site, never on the window being drawn. Two models sampled
//! with the same seed therefore share their innovations, which is what makes
//! `X - X^{(m)}` comparisons meaningful.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::covariance_kernel::CovarianceFunction;
use crate::{Error, Lag, Result};

/// Law of the i.i.d. innovations, before scaling to the declared variance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Innovation {
    StandardGaussian,
    Rademacher,
    CenteredUniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InnovationSpec {
    pub distribution: Innovation,
    #[serde(default = "unit_variance")]
    pub variance: f64,
}

fn unit_variance() -> f64 {
    1.0
}

impl InnovationSpec {
    pub fn new(distribution: Innovation, variance: f64) -> Result<Self> {
        let spec = Self {
            distribution,
            variance,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn gaussian() -> Self {
        Self {
            distribution: Innovation::StandardGaussian,
            variance: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.variance.is_finite() && self.variance > 0.0) {
            return Err(Error::Model(format!(
                "innovation variance must be positive and finite, got {}",
                self.variance
            )));
        }
        Ok(())
    }

    // Maps two uniforms in [0, 1) to one draw. Exactly two uniforms per site
    // keep the generator addressable by column.
    fn transform(&self, u1: f64, u2: f64) -> f64 {
        let sd = self.variance.sqrt();
        match self.distribution {
            Innovation::StandardGaussian => {
                let r = (-2.0 * (1.0 - u1).ln()).sqrt();
                sd * r * (2.0 * PI * u2).cos()
            }
            Innovation::Rademacher => {
                if u1 < 0.5 {
                    -sd
                } else {
                    sd
                }
            }
            // uniform on [-a, a] has variance a²/3
            Innovation::CenteredUniform => sd * 3f64.sqrt() * (2.0 * u1 - 1.0),
        }
    }
}

/// A finite rectangular window `X_{origin + (r, c)}` of a field.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldPatch {
    pub origin: Lag,
    pub values: DMatrix<f64>,
}

impl FieldPatch {
    pub fn new(origin: Lag, values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::Dimension("patch must be non-empty".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("patch contains non-finite values".into()));
        }
        Ok(Self { origin, values })
    }

    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn cols(&self) -> usize {
        self.values.ncols()
    }

    pub fn is_square(&self) -> bool {
        self.rows() == self.cols()
    }

    /// Sub-window with the given local offset and shape.
    pub fn sub_patch(&self, row: usize, col: usize, rows: usize, cols: usize) -> Result<Self> {
        if row + rows > self.rows() || col + cols > self.cols() || rows == 0 || cols == 0 {
            return Err(Error::Dimension(format!(
                "sub-patch {rows}x{cols} at ({row},{col}) exceeds {}x{}",
                self.rows(),
                self.cols()
            )));
        }
        Ok(Self {
            origin: (self.origin.0 + row as i64, self.origin.1 + col as i64),
            values: self.values.view((row, col), (rows, cols)).into_owned(),
        })
    }
}

fn check_shape(rows: usize, cols: usize) -> Result<()> {
    if rows == 0 || cols == 0 {
        return Err(Error::Dimension(format!(
            "patch dimensions must be positive, got {rows}x{cols}"
        )));
    }
    Ok(())
}

const COLUMN_BASE: i128 = 1 << 40;

/// Innovations `ξ_{i,j}` on the absolute window
/// `[row0, row0 + rows) × [col0, col0 + cols)`.
struct InnovationWindow {
    row0: i64,
    col0: i64,
    values: DMatrix<f64>,
}

impl InnovationWindow {
    fn draw(spec: &InnovationSpec, seed: u64, row0: i64, col0: i64, rows: usize, cols: usize) -> Self {
        let mut values = DMatrix::zeros(rows, cols);
        // one ChaCha stream per lattice row, four 32-bit words per site
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for r in 0..rows {
            rng.set_stream((row0 + r as i64) as u64);
            rng.set_word_pos((4 * (col0 as i128 + COLUMN_BASE)) as u128);
            for c in 0..cols {
                let u1: f64 = rng.random();
                let u2: f64 = rng.random();
                values[(r, c)] = spec.transform(u1, u2);
            }
        }
        Self { row0, col0, values }
    }

    #[inline]
    fn at(&self, i: i64, j: i64) -> f64 {
        self.values[((i - self.row0) as usize, (j - self.col0) as usize)]
    }
}

/// Draws `rows × cols` i.i.d. innovations at origin `(0, 0)`.
pub fn sample_innovations(spec: &InnovationSpec, rows: usize, cols: usize, seed: u64) -> Result<FieldPatch> {
    check_shape(rows, cols)?;
    spec.validate()?;
    let window = InnovationWindow::draw(spec, seed, 0, 0, rows, cols);
    FieldPatch::new((0, 0), window.values)
}

fn bounding_box<'a>(offsets: impl Iterator<Item = &'a Lag>) -> Option<(Lag, Lag)> {
    offsets.fold(None, |acc, &(k, l)| match acc {
        None => Some(((k, l), (k, l))),
        Some(((k0, l0), (k1, l1))) => Some(((k0.min(k), l0.min(l)), (k1.max(k), l1.max(l)))),
    })
}

/// Coefficients `a_{k,ℓ}` of `X_{i,j} = Σ a_{k,ℓ} ξ_{k+i, ℓ+j}`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "Vec<LinearTerm>", into = "Vec<LinearTerm>")]
pub struct LinearCoefficients {
    terms: BTreeMap<Lag, f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearTerm {
    pub offset: Lag,
    pub value: f64,
}

impl From<Vec<LinearTerm>> for LinearCoefficients {
    fn from(terms: Vec<LinearTerm>) -> Self {
        terms.into_iter().map(|t| (t.offset, t.value)).collect()
    }
}

impl From<LinearCoefficients> for Vec<LinearTerm> {
    fn from(c: LinearCoefficients) -> Self {
        c.terms
            .into_iter()
            .map(|(offset, value)| LinearTerm { offset, value })
            .collect()
    }
}

impl FromIterator<(Lag, f64)> for LinearCoefficients {
    /// Repeated offsets accumulate; exact zeros are dropped.
    fn from_iter<I: IntoIterator<Item = (Lag, f64)>>(iter: I) -> Self {
        let mut terms = BTreeMap::new();
        for (lag, value) in iter {
            *terms.entry(lag).or_insert(0.0) += value;
        }
        terms.retain(|_, v| *v != 0.0);
        Self { terms }
    }
}

impl LinearCoefficients {
    /// Product form `a_{k,ℓ} = a_k a_ℓ` from one-dimensional coefficients.
    pub fn separable(a: &[(i64, f64)]) -> Self {
        a.iter()
            .flat_map(|&(k, ak)| a.iter().map(move |&(l, al)| ((k, l), ak * al)))
            .collect()
    }

    pub fn get(&self, lag: Lag) -> f64 {
        self.terms.get(&lag).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (Lag, f64)> + '_ {
        self.terms.iter().map(|(&k, &v)| (k, v))
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        self.iter().map(|(k, v)| (k, v * factor)).collect()
    }

    /// Largest `max(|k|, |ℓ|)` over the support.
    pub fn radius(&self) -> u64 {
        self.terms
            .keys()
            .map(|&(k, l)| k.unsigned_abs().max(l.unsigned_abs()))
            .max()
            .unwrap_or(0)
    }

    pub fn truncate_to_window(&self, m: WindowParameter) -> Self {
        let m = m.0 as i64;
        Self {
            terms: self
                .terms
                .iter()
                .filter(|(&(k, l), _)| k.abs() <= m && l.abs() <= m)
                .map(|(&k, &v)| (k, v))
                .collect(),
        }
    }

    /// `Σ_{outside [-m,m]²} a²`, the squared L² distance to the truncation per unit variance.
    pub fn truncation_mass(&self, m: WindowParameter) -> f64 {
        let m = m.0 as i64;
        self.terms
            .iter()
            .filter(|(&(k, l), _)| k.abs() > m || l.abs() > m)
            .map(|(_, v)| v * v)
            .sum()
    }
}

/// Second-order Volterra coefficients:
/// `X_k = Σ_u a_u ξ_{k-u} + Σ_{u≠v} b_{u,v} ξ_{k-u} ξ_{k-v}`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "VolterraRepr", into = "VolterraRepr")]
pub struct VolterraCoefficients {
    linear: BTreeMap<Lag, f64>,
    quadratic: BTreeMap<(Lag, Lag), f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct VolterraRepr {
    #[serde(default)]
    linear: Vec<LinearTerm>,
    #[serde(default)]
    quadratic: Vec<QuadraticTerm>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadraticTerm {
    pub u: Lag,
    pub v: Lag,
    pub value: f64,
}

impl TryFrom<VolterraRepr> for VolterraCoefficients {
    type Error = Error;

    fn try_from(r: VolterraRepr) -> Result<Self> {
        Self::new(
            r.linear.into_iter().map(|t| (t.offset, t.value)),
            r.quadratic.into_iter().map(|t| ((t.u, t.v), t.value)),
        )
    }
}

impl From<VolterraCoefficients> for VolterraRepr {
    fn from(c: VolterraCoefficients) -> Self {
        Self {
            linear: c
                .linear
                .into_iter()
                .map(|(offset, value)| LinearTerm { offset, value })
                .collect(),
            quadratic: c
                .quadratic
                .into_iter()
                .map(|((u, v), value)| QuadraticTerm { u, v, value })
                .collect(),
        }
    }
}

impl VolterraCoefficients {
    /// Fails with a model error when some `b_{u,u}` is nonzero.
    pub fn new(
        linear: impl IntoIterator<Item = (Lag, f64)>,
        quadratic: impl IntoIterator<Item = ((Lag, Lag), f64)>,
    ) -> Result<Self> {
        let mut a = BTreeMap::new();
        for (lag, value) in linear {
            *a.entry(lag).or_insert(0.0) += value;
        }
        a.retain(|_, v: &mut f64| *v != 0.0);
        let mut b = BTreeMap::new();
        for (pair, value) in quadratic {
            *b.entry(pair).or_insert(0.0) += value;
        }
        b.retain(|_, v: &mut f64| *v != 0.0);
        let out = Self {
            linear: a,
            quadratic: b,
        };
        out.validate()?;
        Ok(out)
    }

    /// Product form `a_u = a_{u1} a_{u2}`, `b_{u,v} = b_{u1,v1} b_{u2,v2}` from
    /// one-dimensional coefficients. `b_{i,i}` must vanish.
    pub fn separable(a: &[(i64, f64)], b: &[((i64, i64), f64)]) -> Result<Self> {
        if let Some(((i, _), _)) = b.iter().find(|((i, j), v)| i == j && *v != 0.0) {
            return Err(Error::Model(format!("one-dimensional b_{{{i},{i}}} must be zero")));
        }
        let linear = a
            .iter()
            .flat_map(|&(u1, a1)| a.iter().map(move |&(u2, a2)| ((u1, u2), a1 * a2)));
        let quadratic = b.iter().flat_map(|&((u1, v1), b1)| {
            b.iter()
                .map(move |&((u2, v2), b2)| (((u1, u2), (v1, v2)), b1 * b2))
        });
        Self::new(linear, quadratic)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(((u, _), v)) = self.quadratic.iter().find(|((u, v), _)| u == v) {
            return Err(Error::Model(format!(
                "quadratic coefficient on the diagonal b_{{{u:?},{u:?}}} = {v}; the quadratic part would not be centered"
            )));
        }
        Ok(())
    }

    pub fn linear(&self) -> impl Iterator<Item = (Lag, f64)> + '_ {
        self.linear.iter().map(|(&k, &v)| (k, v))
    }

    pub fn quadratic(&self) -> impl Iterator<Item = ((Lag, Lag), f64)> + '_ {
        self.quadratic.iter().map(|(&k, &v)| (k, v))
    }

    pub fn b(&self, u: Lag, v: Lag) -> f64 {
        self.quadratic.get(&(u, v)).copied().unwrap_or(0.0)
    }

    pub fn is_empty(&self) -> bool {
        self.linear.is_empty() && self.quadratic.is_empty()
    }

    fn offsets(&self) -> impl Iterator<Item = &Lag> {
        self.linear
            .keys()
            .chain(self.quadratic.keys().flat_map(|(u, v)| [u, v]))
    }

    pub fn radius(&self) -> u64 {
        self.offsets()
            .map(|&(k, l)| k.unsigned_abs().max(l.unsigned_abs()))
            .max()
            .unwrap_or(0)
    }

    pub fn truncate_to_window(&self, m: WindowParameter) -> Self {
        let m = m.0 as i64;
        let inside = |&(k, l): &Lag| k.abs() <= m && l.abs() <= m;
        Self {
            linear: self
                .linear
                .iter()
                .filter(|(u, _)| inside(u))
                .map(|(&k, &v)| (k, v))
                .collect(),
            quadratic: self
                .quadratic
                .iter()
                .filter(|((u, v), _)| inside(u) && inside(v))
                .map(|(&k, &v)| (k, v))
                .collect(),
        }
    }
}

/// Half-width `m` of the innovation window `[-m, m]²` of the m-dependent approximation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WindowParameter(pub u32);

/// `X_{i,j} = Σ a_{k,ℓ} ξ_{k+i, ℓ+j}` on the patch `[0, rows) × [0, cols)`.
pub fn sample_linear_field(
    coeffs: &LinearCoefficients,
    spec: &InnovationSpec,
    rows: usize,
    cols: usize,
    seed: u64,
) -> Result<FieldPatch> {
    check_shape(rows, cols)?;
    spec.validate()?;
    let ((kmin, lmin), (kmax, lmax)) = bounding_box(coeffs.terms.keys())
        .ok_or_else(|| Error::Model("linear filter has empty support".into()))?;
    let window = InnovationWindow::draw(
        spec,
        seed,
        kmin,
        lmin,
        rows + (kmax - kmin) as usize,
        cols + (lmax - lmin) as usize,
    );
    let terms: Vec<(Lag, f64)> = coeffs.iter().collect();
    let values = DMatrix::from_fn(rows, cols, |r, c| {
        let (i, j) = (r as i64, c as i64);
        terms
            .iter()
            .map(|&((k, l), a)| a * window.at(i + k, j + l))
            .sum()
    });
    FieldPatch::new((0, 0), values)
}

/// `X_k = Σ a_u ξ_{k-u} + Σ b_{u,v} ξ_{k-u} ξ_{k-v}` on `[0, rows) × [0, cols)`.
pub fn sample_volterra_field(
    coeffs: &VolterraCoefficients,
    spec: &InnovationSpec,
    rows: usize,
    cols: usize,
    seed: u64,
) -> Result<FieldPatch> {
    check_shape(rows, cols)?;
    spec.validate()?;
    coeffs.validate()?;
    let Some(((kmin, lmin), (kmax, lmax))) = bounding_box(coeffs.offsets()) else {
        return Err(Error::Model("Volterra expansion has empty support".into()));
    };
    // sites k - u for k in the patch
    let window = InnovationWindow::draw(
        spec,
        seed,
        -kmax,
        -lmax,
        rows + (kmax - kmin) as usize,
        cols + (lmax - lmin) as usize,
    );
    let linear: Vec<(Lag, f64)> = coeffs.linear().collect();
    let quadratic: Vec<((Lag, Lag), f64)> = coeffs.quadratic().collect();
    let values = DMatrix::from_fn(rows, cols, |r, c| {
        let (i, j) = (r as i64, c as i64);
        let lin: f64 = linear
            .iter()
            .map(|&((u1, u2), a)| a * window.at(i - u1, j - u2))
            .sum();
        let quad: f64 = quadratic
            .iter()
            .map(|&(((u1, u2), (v1, v2)), b)| b * window.at(i - u1, j - u2) * window.at(i - v1, j - v2))
            .sum();
        lin + quad
    });
    FieldPatch::new((0, 0), values)
}

// Smallest 2^a 3^b 5^c ≥ n.
fn smooth_size(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for p in [2, 3, 5] {
            while r % p == 0 {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

// In-place 2-D FFT of a row-major t1 × t2 array.
fn fft2(data: &mut [Complex64], t1: usize, t2: usize, planner: &mut FftPlanner<f64>) {
    let row_fft = planner.plan_fft_forward(t2);
    for row in data.chunks_exact_mut(t2) {
        row_fft.process(row);
    }
    let col_fft = planner.plan_fft_forward(t1);
    let mut column = vec![Complex64::new(0.0, 0.0); t1];
    for c in 0..t2 {
        for r in 0..t1 {
            column[r] = data[r * t2 + c];
        }
        col_fft.process(&mut column);
        for r in 0..t1 {
            data[r * t2 + c] = column[r];
        }
    }
}

/// Relative tolerance on negative circulant eigenvalues attributed to rounding.
pub const EMBEDDING_TOLERANCE: f64 = 1e-10;

/// Centered stationary Gaussian patch with covariance `gamma`, synthesised
/// by circulant embedding on a torus of side at least `2·(patch side + R)`.
pub fn sample_gaussian_matched_field(
    gamma: &CovarianceFunction,
    rows: usize,
    cols: usize,
    seed: u64,
) -> Result<FieldPatch> {
    check_shape(rows, cols)?;
    let radius = gamma.radius() as usize;
    let t1 = smooth_size(2 * (rows + radius));
    let t2 = smooth_size(2 * (cols + radius));

    let mut spectrum = vec![Complex64::new(0.0, 0.0); t1 * t2];
    for ((k, l), g) in gamma.iter() {
        let r = k.rem_euclid(t1 as i64) as usize;
        let c = l.rem_euclid(t2 as i64) as usize;
        spectrum[r * t2 + c] += g;
    }
    let mut planner = FftPlanner::new();
    fft2(&mut spectrum, t1, t2, &mut planner);

    let max = spectrum.iter().map(|s| s.re).fold(f64::NEG_INFINITY, f64::max);
    let min = spectrum.iter().map(|s| s.re).fold(f64::INFINITY, f64::min);
    if min < -EMBEDDING_TOLERANCE * max.abs().max(f64::MIN_POSITIVE) {
        return Err(Error::Embedding {
            min_eigenvalue: min,
            max_eigenvalue: max,
        });
    }

    let scale = 1.0 / (t1 * t2) as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut noise: Vec<Complex64> = spectrum
        .iter()
        .map(|lambda| {
            let amp = (lambda.re.max(0.0) * scale).sqrt();
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            Complex64::new(amp * re, amp * im)
        })
        .collect();
    fft2(&mut noise, t1, t2, &mut planner);

    let values = DMatrix::from_fn(rows, cols, |r, c| noise[r * t2 + c].re);
    FieldPatch::new((0, 0), values)
}

/// Generative description of a stationary field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FieldModel {
    Iid {
        innovation: InnovationSpec,
    },
    Linear {
        coefficients: LinearCoefficients,
        innovation: InnovationSpec,
    },
    Volterra {
        coefficients: VolterraCoefficients,
        innovation: InnovationSpec,
    },
    GaussianMatched {
        gamma: CovarianceFunction,
    },
}

impl FieldModel {
    pub fn sample(&self, rows: usize, cols: usize, seed: u64) -> Result<FieldPatch> {
        match self {
            FieldModel::Iid { innovation } => sample_innovations(innovation, rows, cols, seed),
            FieldModel::Linear {
                coefficients,
                innovation,
            } => sample_linear_field(coefficients, innovation, rows, cols, seed),
            FieldModel::Volterra {
                coefficients,
                innovation,
            } => sample_volterra_field(coefficients, innovation, rows, cols, seed),
            FieldModel::GaussianMatched { gamma } => sample_gaussian_matched_field(gamma, rows, cols, seed),
        }
    }

    /// Covariance function in closed form, when the model provides one.
    pub fn analytic_gamma(&self) -> Result<CovarianceFunction> {
        use crate::covariance_kernel::{gamma_from_linear, gamma_from_volterra};
        match self {
            FieldModel::Iid { innovation } => Ok(CovarianceFunction::white(innovation.variance)),
            FieldModel::Linear {
                coefficients,
                innovation,
            } => Ok(gamma_from_linear(coefficients, innovation.variance)),
            FieldModel::Volterra {
                coefficients,
                innovation,
            } => gamma_from_volterra(coefficients, innovation.variance),
            FieldModel::GaussianMatched { gamma } => Ok(gamma.clone()),
        }
    }

    /// The Gaussian field sharing this model's covariance.
    pub fn gaussian_matched(&self) -> Result<FieldModel> {
        Ok(FieldModel::GaussianMatched {
            gamma: self.analytic_gamma()?,
        })
    }

    /// Radius of the innovation window each value depends on, `None` for
    /// Gaussian-matched fields (their dependence range is that of `gamma`).
    pub fn innovation_radius(&self) -> Option<u64> {
        match self {
            FieldModel::Iid { .. } => Some(0),
            FieldModel::Linear { coefficients, .. } => Some(coefficients.radius()),
            FieldModel::Volterra { coefficients, .. } => Some(coefficients.radius()),
            FieldModel::GaussianMatched { .. } => None,
        }
    }

    /// Coefficient truncation; the identity for i.i.d. and Gaussian-matched models.
    pub fn truncate_to_window(&self, m: WindowParameter) -> FieldModel {
        match self {
            FieldModel::Linear {
                coefficients,
                innovation,
            } => FieldModel::Linear {
                coefficients: coefficients.truncate_to_window(m),
                innovation: *innovation,
            },
            FieldModel::Volterra {
                coefficients,
                innovation,
            } => FieldModel::Volterra {
                coefficients: coefficients.truncate_to_window(m),
                innovation: *innovation,
            },
            other => other.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            FieldModel::Iid { innovation } => innovation.validate(),
            FieldModel::Linear {
                coefficients,
                innovation,
            } => {
                if coefficients.is_empty() {
                    return Err(Error::Model("linear filter has empty support".into()));
                }
                innovation.validate()
            }
            FieldModel::Volterra {
                coefficients,
                innovation,
            } => {
                coefficients.validate()?;
                innovation.validate()
            }
            FieldModel::GaussianMatched { gamma } => gamma.validate(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lag_covariance(p: &FieldPatch, dk: usize, dl: usize) -> f64 {
        let (rows, cols) = (p.rows() - dk, p.cols() - dl);
        let mut s = 0.0;
        for r in 0..rows {
            for c in 0..cols {
                s += p.values[(r, c)] * p.values[(r + dk, c + dl)];
            }
        }
        s / (rows * cols) as f64
    }

    fn spec(d: Innovation) -> InnovationSpec {
        InnovationSpec::new(d, 1.0).unwrap()
    }

    #[test]
    fn rademacher_support() {
        let p = sample_innovations(&spec(Innovation::Rademacher), 2, 2, 7).unwrap();
        assert!(p.values.iter().all(|&v| v == 1.0 || v == -1.0));
        let p = sample_innovations(&InnovationSpec::new(Innovation::Rademacher, 4.0).unwrap(), 8, 8, 7).unwrap();
        assert!(p.values.iter().all(|&v| v.abs() == 2.0));
    }

    #[test]
    fn innovations_deterministic() {
        for d in [Innovation::Rademacher, Innovation::StandardGaussian, Innovation::CenteredUniform] {
            let a = sample_innovations(&spec(d), 5, 9, 11).unwrap();
            let b = sample_innovations(&spec(d), 5, 9, 11).unwrap();
            assert_eq!(a, b);
            let c = sample_innovations(&spec(d), 5, 9, 12).unwrap();
            assert_ne!(a, c);
        }
    }

    #[test]
    fn gaussian_sample_variance() {
        let p = sample_innovations(&spec(Innovation::StandardGaussian), 512, 512, 3).unwrap();
        let n = (512 * 512) as f64;
        let mean = p.values.sum() / n;
        let var = p.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((var - 1.0).abs() < 3.0 * (2.0 / n).sqrt(), "var = {var}");
        assert!(mean.abs() < 4.0 / n.sqrt());
    }

    #[test]
    fn uniform_variance_matches_declared() {
        let s = InnovationSpec::new(Innovation::CenteredUniform, 2.5).unwrap();
        let p = sample_innovations(&s, 300, 300, 5).unwrap();
        let n = p.values.len() as f64;
        let var = p.values.iter().map(|v| v * v).sum::<f64>() / n;
        // Var(U²) = 9/5 σ⁴ - σ⁴ for the scaled uniform
        let se = (0.8f64 * 2.5 * 2.5 / n).sqrt();
        assert!((var - 2.5).abs() < 5.0 * se, "var = {var}");
        let bound = (3.0f64 * 2.5).sqrt();
        assert!(p.values.iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn nonpositive_dimensions_rejected() {
        let s = spec(Innovation::StandardGaussian);
        assert!(matches!(sample_innovations(&s, 0, 3, 1), Err(Error::Dimension(_))));
        assert!(matches!(sample_innovations(&s, 3, 0, 1), Err(Error::Dimension(_))));
    }

    #[test]
    fn innovations_are_site_addressed() {
        let s = spec(Innovation::StandardGaussian);
        let big = InnovationWindow::draw(&s, 9, -3, -5, 10, 12);
        let small = InnovationWindow::draw(&s, 9, 1, 2, 3, 4);
        for i in 1..4 {
            for j in 2..6 {
                assert_eq!(big.at(i, j), small.at(i, j));
            }
        }
    }

    #[test]
    fn identity_filter_returns_innovations() {
        let s = spec(Innovation::CenteredUniform);
        let coeffs: LinearCoefficients = [((0, 0), 1.0)].into_iter().collect();
        let x = sample_linear_field(&coeffs, &s, 17, 9, 21).unwrap();
        let xi = sample_innovations(&s, 17, 9, 21).unwrap();
        assert_eq!(x.values, xi.values);
    }

    #[test]
    fn linear_filter_lag_covariance() {
        let coeffs: LinearCoefficients = [((0, 0), 1.0), ((1, 0), 0.5)].into_iter().collect();
        let x = sample_linear_field(&coeffs, &InnovationSpec::gaussian(), 512, 512, 5).unwrap();
        // γ_{1,0} = Σ a_{u,v} a_{u+1,v} = 0.5
        let g10 = lag_covariance(&x, 1, 0);
        assert!((g10 - 0.5).abs() < 0.02, "{g10}");
        let g01 = lag_covariance(&x, 0, 1);
        assert!(g01.abs() < 0.02, "{g01}");
    }

    #[test]
    fn linear_filter_is_linear() {
        let s = spec(Innovation::Rademacher);
        let coeffs: LinearCoefficients = [((0, 0), 1.0), ((1, -2), 0.3), ((-1, 1), -0.7)].into_iter().collect();
        let x = sample_linear_field(&coeffs, &s, 20, 30, 8).unwrap();
        let y = sample_linear_field(&coeffs.scaled(2.0), &s, 20, 30, 8).unwrap();
        assert_eq!(y.values, x.values * 2.0);
    }

    #[test]
    fn linear_filter_boundary_is_exact() {
        // compare a corner value with the direct sum over innovations
        let s = spec(Innovation::StandardGaussian);
        let coeffs: LinearCoefficients = [((0, 0), 1.0), ((2, -1), 0.25), ((-1, 3), 0.5)].into_iter().collect();
        let x = sample_linear_field(&coeffs, &s, 4, 4, 13).unwrap();
        let w = InnovationWindow::draw(&s, 13, -5, -5, 20, 20);
        for (r, c) in [(0, 0), (3, 0), (0, 3), (3, 3)] {
            let direct: f64 = coeffs.iter().map(|((k, l), a)| a * w.at(r + k, c + l)).sum();
            assert!((x.values[(r as usize, c as usize)] - direct).abs() < 1e-15);
        }
    }

    #[test]
    fn empty_linear_support_rejected() {
        let coeffs = LinearCoefficients::default();
        assert!(matches!(
            sample_linear_field(&coeffs, &InnovationSpec::gaussian(), 4, 4, 1),
            Err(Error::Model(_))
        ));
    }

    #[test]
    fn volterra_degenerates_to_innovations() {
        let s = spec(Innovation::Rademacher);
        let coeffs = VolterraCoefficients::new([((0, 0), 1.0)], []).unwrap();
        let x = sample_volterra_field(&coeffs, &s, 13, 7, 4).unwrap();
        let xi = sample_innovations(&s, 13, 7, 4).unwrap();
        assert_eq!(x.values, xi.values);
    }

    #[test]
    fn volterra_quadratic_variance() {
        let coeffs = VolterraCoefficients::new([], [(((0, 0), (1, 0)), 1.0)]).unwrap();
        let x = sample_volterra_field(&coeffs, &InnovationSpec::gaussian(), 512, 512, 17).unwrap();
        let n = x.values.len() as f64;
        let mean = x.values.sum() / n;
        let var = lag_covariance(&x, 0, 0);
        // Var(ξ₁ξ₂)=1, Var((ξ₁ξ₂)²)=8; neighbours add covariance to the squared terms
        assert!((var - 1.0).abs() < 0.03, "{var}");
        assert!(mean.abs() < 0.02, "{mean}");
        assert!(lag_covariance(&x, 1, 0).abs() < 0.02);
    }

    #[test]
    fn volterra_deterministic() {
        let coeffs = VolterraCoefficients::new([((0, 1), 0.5)], [(((0, 0), (1, 0)), 1.0), (((1, 1), (0, -1)), -0.3)]).unwrap();
        let s = spec(Innovation::CenteredUniform);
        let a = sample_volterra_field(&coeffs, &s, 9, 11, 99).unwrap();
        let b = sample_volterra_field(&coeffs, &s, 9, 11, 99).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn volterra_diagonal_rejected() {
        let err = VolterraCoefficients::new([], [(((1, 0), (1, 0)), 1.0)]).unwrap_err();
        assert!(matches!(err, Error::Model(_)));
        let json = r#"{"quadratic":[{"u":[0,0],"v":[0,0],"value":2.0}]}"#;
        assert!(serde_json::from_str::<VolterraCoefficients>(json).is_err());
        assert!(VolterraCoefficients::separable(&[], &[((1, 1), 1.0)]).is_err());
    }

    #[test]
    fn truncation_inside_window_is_identity() {
        let coeffs: LinearCoefficients = [((0, 0), 1.0), ((1, -1), 0.2), ((-2, 2), 0.1)].into_iter().collect();
        assert_eq!(coeffs.truncate_to_window(WindowParameter(2)), coeffs);
        assert_eq!(coeffs.truncate_to_window(WindowParameter(5)), coeffs);
    }

    #[test]
    fn truncation_to_single_site() {
        let coeffs: LinearCoefficients = [((0, 0), 1.0), ((3, 0), 1.0)].into_iter().collect();
        let expected: LinearCoefficients = [((0, 0), 1.0)].into_iter().collect();
        assert_eq!(coeffs.truncate_to_window(WindowParameter(0)), expected);
    }

    #[test]
    fn volterra_truncation_drops_pairs_with_an_outside_index() {
        let coeffs = VolterraCoefficients::new(
            [((0, 0), 1.0), ((2, 0), 1.0)],
            [(((0, 0), (1, 0)), 1.0), (((0, 0), (0, 2)), 1.0)],
        )
        .unwrap();
        let t = coeffs.truncate_to_window(WindowParameter(1));
        assert_eq!(t.linear().collect::<Vec<_>>(), vec![((0, 0), 1.0)]);
        assert_eq!(t.quadratic().collect::<Vec<_>>(), vec![(((0, 0), (1, 0)), 1.0)]);
    }

    #[test]
    fn truncation_error_matches_outside_mass() {
        let coeffs: LinearCoefficients = [((0, 0), 1.0), ((1, 0), 0.5), ((2, 1), 0.4), ((0, -3), 0.3)]
            .into_iter()
            .collect();
        let m = WindowParameter(1);
        let s = InnovationSpec::new(Innovation::Rademacher, 2.0).unwrap();
        let x = sample_linear_field(&coeffs, &s, 400, 400, 31).unwrap();
        let xm = sample_linear_field(&coeffs.truncate_to_window(m), &s, 400, 400, 31).unwrap();
        let d = &x.values - &xm.values;
        let mse = d.iter().map(|v| v * v).sum::<f64>() / d.len() as f64;
        let expected = 2.0 * coeffs.truncation_mass(m);
        assert!((expected - 0.5).abs() < 1e-12);
        assert!((mse - expected).abs() < 0.02, "{mse} vs {expected}");
    }

    #[test]
    fn smooth_sizes() {
        assert_eq!(smooth_size(7), 8);
        assert_eq!(smooth_size(1026), 1080);
        assert_eq!(smooth_size(11), 12);
    }

    #[test]
    fn white_gaussian_matched_field() {
        let gamma = CovarianceFunction::white(1.0);
        let g = sample_gaussian_matched_field(&gamma, 256, 256, 2).unwrap();
        assert!((lag_covariance(&g, 0, 0) - 1.0).abs() < 0.03);
        assert!(lag_covariance(&g, 1, 0).abs() < 0.02);
        assert!(lag_covariance(&g, 0, 1).abs() < 0.02);
        assert!(lag_covariance(&g, 1, 1).abs() < 0.02);
    }

    #[test]
    fn gaussian_matched_lag_covariance() {
        let coeffs: LinearCoefficients = [((0, 0), 1.0), ((1, 0), 0.5)].into_iter().collect();
        let gamma = crate::covariance_kernel::gamma_from_linear(&coeffs, 1.0);
        let g = sample_gaussian_matched_field(&gamma, 512, 512, 4).unwrap();
        assert!((lag_covariance(&g, 1, 0) - 0.5).abs() < 0.02);
        assert!((lag_covariance(&g, 0, 0) - 1.25).abs() < 0.03);
        assert!(lag_covariance(&g, 0, 1).abs() < 0.02);
        assert!(lag_covariance(&g, 2, 0).abs() < 0.02);
    }

    #[test]
    fn invalid_covariance_fails_embedding() {
        // |γ_{1,0}| > γ_{0,0} is not a covariance
        let gamma = CovarianceFunction::from_lags([((0, 0), 1.0), ((1, 0), 2.0)]).unwrap();
        match sample_gaussian_matched_field(&gamma, 16, 16, 1) {
            Err(Error::Embedding { min_eigenvalue, .. }) => assert!(min_eigenvalue < -1.0),
            other => panic!("expected embedding error, got {other:?}"),
        }
    }

    #[test]
    fn model_json_round_trip() {
        let m = FieldModel::Volterra {
            coefficients: VolterraCoefficients::new([((0, 0), 1.0)], [(((0, 0), (1, 0)), 1.0)]).unwrap(),
            innovation: spec(Innovation::Rademacher),
        };
        let s = serde_json::to_string(&m).unwrap();
        assert_eq!(serde_json::from_str::<FieldModel>(&s).unwrap(), m);
        let json = r#"{"kind":"linear","coefficients":[{"offset":[0,0],"value":1.0}],
                       "innovation":{"distribution":"centered_uniform"}}"#;
        let m: FieldModel = serde_json::from_str(json).unwrap();
        assert!(matches!(m, FieldModel::Linear { innovation, .. } if innovation.variance == 1.0));
    }
}
