//! Covariance functions `γ_{k,ℓ} = E(X_{0,0} X_{k,ℓ})`, their structural
//! checks, and the spectral kernel
//! `f(x, y) = Σ γ_{k,j} e^{-2πi(kx + jy)}` sampled on a periodic grid.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::de::{self, Deserializer, MapAccess, Visitor};
use serde::ser::{SerializeMap, Serializer};
use serde::{Deserialize, Serialize};

use crate::field_models::{FieldPatch, LinearCoefficients, VolterraCoefficients};
use crate::{Error, Lag, Result};

/// Tolerance for exact structural comparisons of stored covariance values.
pub const STRUCTURE_TOLERANCE: f64 = 1e-12;
/// Relative tolerance of the rank-one separability test.
pub const SEPARABILITY_TOLERANCE: f64 = 1e-8;
/// Relative level below which negative kernel samples count as rounding.
pub const KERNEL_NEGATIVITY_TOLERANCE: f64 = 1e-10;

/// Finitely supported covariance function on ℤ², stored densely on
/// `[-R, R]²`. Lags outside the square are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceFunction {
    radius: usize,
    values: Vec<f64>,
}

impl CovarianceFunction {
    pub fn zeros(radius: usize) -> Self {
        let side = 2 * radius + 1;
        Self {
            radius,
            values: vec![0.0; side * side],
        }
    }

    /// `γ_{0,0} = σ²`, every other lag zero.
    pub fn white(variance: f64) -> Self {
        let mut g = Self::zeros(0);
        g.values[0] = variance;
        g
    }

    /// Builds from explicit lags. A lag whose mirror `(-k, -ℓ)` is absent gets
    /// the mirror filled in; lags given twice must agree.
    pub fn from_lags(lags: impl IntoIterator<Item = (Lag, f64)>) -> Result<Self> {
        let given: BTreeMap<Lag, f64> = lags.into_iter().collect();
        let radius = given
            .keys()
            .map(|&(k, l)| k.unsigned_abs().max(l.unsigned_abs()))
            .max()
            .unwrap_or(0) as usize;
        let mut g = Self::zeros(radius);
        for (&(k, l), &v) in &given {
            if let Some(&mirror) = given.get(&(-k, -l)) {
                if (mirror - v).abs() > STRUCTURE_TOLERANCE * v.abs().max(1.0) {
                    return Err(Error::Model(format!(
                        "covariance not symmetric: γ({k},{l}) = {v} but γ({},{}) = {mirror}",
                        -k, -l
                    )));
                }
            }
            g.set((k, l), v);
            g.set((-k, -l), v);
        }
        g.validate()?;
        Ok(g)
    }

    fn index(&self, (k, l): Lag) -> Option<usize> {
        let r = self.radius as i64;
        if k.abs() > r || l.abs() > r {
            return None;
        }
        let side = 2 * r + 1;
        Some(((k + r) * side + (l + r)) as usize)
    }

    pub fn get(&self, lag: Lag) -> f64 {
        self.index(lag).map_or(0.0, |i| self.values[i])
    }

    fn set(&mut self, lag: Lag, v: f64) {
        let i = self.index(lag).expect("lag inside radius");
        self.values[i] = v;
    }

    fn add(&mut self, lag: Lag, v: f64) {
        let i = self.index(lag).expect("lag inside radius");
        self.values[i] += v;
    }

    pub fn radius(&self) -> u64 {
        self.radius as u64
    }

    pub fn variance(&self) -> f64 {
        self.get((0, 0))
    }

    /// All lags in `[-R, R]²` with their values, zeros included.
    pub fn iter(&self) -> impl Iterator<Item = (Lag, f64)> + '_ {
        let r = self.radius as i64;
        (-r..=r)
            .flat_map(move |k| (-r..=r).map(move |l| (k, l)))
            .map(move |lag| (lag, self.get(lag)))
    }

    pub fn abs_sum(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Checks `γ_{k,ℓ} = γ_{-k,-ℓ}`, `γ_{0,0} ≥ 0` and finiteness.
    pub fn validate(&self) -> Result<()> {
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Model("covariance has non-finite values".into()));
        }
        if self.variance() < 0.0 {
            return Err(Error::Model(format!("negative variance γ(0,0) = {}", self.variance())));
        }
        let tol = STRUCTURE_TOLERANCE * self.max_abs().max(1.0);
        for ((k, l), v) in self.iter() {
            if (v - self.get((-k, -l))).abs() > tol {
                return Err(Error::Model(format!("covariance not symmetric at lag ({k},{l})")));
            }
        }
        Ok(())
    }

    /// Drops trailing zero rings so the radius is the true support radius.
    fn compact(mut self) -> Self {
        while self.radius > 0 {
            let r = self.radius as i64;
            let ring_zero = self
                .iter()
                .filter(|&((k, l), _)| k.abs() == r || l.abs() == r)
                .all(|(_, v)| v == 0.0);
            if !ring_zero {
                break;
            }
            let mut smaller = Self::zeros(self.radius - 1);
            for (lag, v) in self.iter() {
                if smaller.index(lag).is_some() {
                    smaller.set(lag, v);
                }
            }
            self = smaller;
        }
        self
    }
}

impl Serialize for CovarianceFunction {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let nonzero: Vec<_> = self.iter().filter(|(_, v)| *v != 0.0).collect();
        let mut map = serializer.serialize_map(Some(nonzero.len()))?;
        for ((k, l), v) in nonzero {
            map.serialize_entry(&format!("{k},{l}"), &v)?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for CovarianceFunction {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct LagMap;

        impl<'de> Visitor<'de> for LagMap {
            type Value = CovarianceFunction;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a map from \"k,l\" lag keys to covariance values")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut access: A) -> std::result::Result<Self::Value, A::Error> {
                let mut lags = Vec::new();
                while let Some((key, value)) = access.next_entry::<String, f64>()? {
                    let lag = parse_lag(&key).ok_or_else(|| de::Error::custom(format!("bad lag key {key:?}")))?;
                    lags.push((lag, value));
                }
                CovarianceFunction::from_lags(lags).map_err(de::Error::custom)
            }
        }

        deserializer.deserialize_map(LagMap)
    }
}

fn parse_lag(key: &str) -> Option<Lag> {
    let (k, l) = key.split_once(',')?;
    Some((k.trim().parse().ok()?, l.trim().parse().ok()?))
}

/// `γ_{k,j} = σ² Σ_{u,v} a_{u,v} a_{u+k,v+j}`, by exact finite summation.
pub fn gamma_from_linear(coeffs: &LinearCoefficients, sigma2: f64) -> CovarianceFunction {
    let terms: Vec<(Lag, f64)> = coeffs.iter().collect();
    let radius = terms
        .iter()
        .flat_map(|&(p, _)| terms.iter().map(move |&(q, _)| (q.0 - p.0).unsigned_abs().max((q.1 - p.1).unsigned_abs())))
        .max()
        .unwrap_or(0) as usize;
    let mut g = CovarianceFunction::zeros(radius);
    for &(p, ap) in &terms {
        for &(q, aq) in &terms {
            g.add((q.0 - p.0, q.1 - p.1), sigma2 * ap * aq);
        }
    }
    g
}

/// Covariance of the second-order Volterra field:
/// `γ_k = σ² Σ_u a_u a_{u+k} + σ⁴ Σ_{u,v} b_{u,v}(b_{u+k,v+k} + b_{v+k,u+k})`.
pub fn gamma_from_volterra(coeffs: &VolterraCoefficients, sigma2: f64) -> Result<CovarianceFunction> {
    coeffs.validate()?;
    let mut lags: BTreeMap<Lag, f64> = BTreeMap::new();
    let linear: Vec<(Lag, f64)> = coeffs.linear().collect();
    for &(p, ap) in &linear {
        for &(q, aq) in &linear {
            *lags.entry((q.0 - p.0, q.1 - p.1)).or_insert(0.0) += sigma2 * ap * aq;
        }
    }
    let sigma4 = sigma2 * sigma2;
    let quadratic: Vec<((Lag, Lag), f64)> = coeffs.quadratic().collect();
    for &((u, v), b) in &quadratic {
        for &((u2, v2), b2) in &quadratic {
            // (u2, v2) = (u + k, v + k)
            let k = (u2.0 - u.0, u2.1 - u.1);
            if (v2.0 - v.0, v2.1 - v.1) == k {
                *lags.entry(k).or_insert(0.0) += sigma4 * b * b2;
            }
            // (u2, v2) = (v + k, u + k)
            let k = (u2.0 - v.0, u2.1 - v.1);
            if (v2.0 - u.0, v2.1 - u.1) == k {
                *lags.entry(k).or_insert(0.0) += sigma4 * b * b2;
            }
        }
    }
    if lags.is_empty() {
        return Ok(CovarianceFunction::zeros(0));
    }
    let radius = lags
        .keys()
        .map(|&(k, l)| k.unsigned_abs().max(l.unsigned_abs()))
        .max()
        .unwrap_or(0) as usize;
    let mut g = CovarianceFunction::zeros(radius);
    for (lag, v) in lags {
        g.add(lag, v);
    }
    // the two sums are symmetric up to summation order; make it exact
    let sym = g.clone();
    for (lag, v) in sym.iter() {
        g.set(lag, 0.5 * (v + sym.get((-lag.0, -lag.1))));
    }
    Ok(g.compact())
}

/// Lag covariances of a patch with biased normalization (every lag divided
/// by `rows·cols`), which keeps the estimate positive semidefinite. The field
/// is assumed centered.
pub fn gamma_empirical(patch: &FieldPatch, max_lag: usize) -> Result<CovarianceFunction> {
    let (rows, cols) = (patch.rows(), patch.cols());
    if 2 * max_lag >= rows.min(cols) {
        return Err(Error::Dimension(format!(
            "max_lag {max_lag} must be below half of the smaller patch side ({rows}x{cols})"
        )));
    }
    let x = &patch.values;
    let total = (rows * cols) as f64;
    let mut g = CovarianceFunction::zeros(max_lag);
    let m = max_lag as i64;
    for k in 0..=m {
        for l in -m..=m {
            if k == 0 && l < 0 {
                continue;
            }
            let (c0, c1) = if l >= 0 { (0, cols as i64 - l) } else { (-l, cols as i64) };
            let mut s = 0.0;
            for r in 0..(rows as i64 - k) {
                for c in c0..c1 {
                    s += x[(r as usize, c as usize)] * x[((r + k) as usize, (c + l) as usize)];
                }
            }
            let v = s / total;
            g.set((k, l), v);
            g.set((-k, -l), v);
        }
    }
    Ok(g)
}

/// Samples of `f(x, y)` on the periodic grid `x_i = i/M`, `y_j = j/M`.
/// In the separable case `f(x, y) = f₁(x) f₁(y)` and `factor` holds `f₁`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralKernel {
    values: DMatrix<f64>,
    factor: Option<Vec<f64>>,
}

impl SpectralKernel {
    pub fn from_values(values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() != values.ncols() || values.nrows() == 0 {
            return Err(Error::Dimension(format!(
                "kernel grid must be square and non-empty, got {}x{}",
                values.nrows(),
                values.ncols()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("kernel has non-finite samples".into()));
        }
        Ok(Self { values, factor: None })
    }

    /// `f ≡ value` on an `m × m` grid.
    pub fn constant(m: usize, value: f64) -> Self {
        Self {
            values: DMatrix::from_element(m, m, value),
            factor: (value >= 0.0).then(|| vec![value.sqrt(); m]),
        }
    }

    /// Kernel `f₁(x) f₁(y)` from one-dimensional grid samples.
    pub fn separable(factor: Vec<f64>) -> Result<Self> {
        let m = factor.len();
        if m == 0 {
            return Err(Error::Dimension("empty separable factor".into()));
        }
        let values = DMatrix::from_fn(m, m, |i, j| factor[i] * factor[j]);
        let mut k = Self::from_values(values)?;
        k.factor = Some(factor);
        Ok(k)
    }

    pub fn grid_size(&self) -> usize {
        self.values.nrows()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn factor(&self) -> Option<&[f64]> {
        self.factor.as_deref()
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[(i, j)]
    }

    /// Largest `|f(x,y) - f(y,x)|` over the grid.
    pub fn exchange_asymmetry(&self) -> f64 {
        let m = self.grid_size();
        let mut worst = 0.0f64;
        for i in 0..m {
            for j in 0..i {
                worst = worst.max((self.values[(i, j)] - self.values[(j, i)]).abs());
            }
        }
        worst
    }

    /// `(f + fᵀ)/2`.
    pub fn symmetrized(&self) -> Self {
        let values = (&self.values + self.values.transpose()) * 0.5;
        Self {
            values,
            factor: self.factor.clone(),
        }
    }

    /// Rectangle-rule Fourier coefficient `(1/M²) Σ f(x_i, y_j) e^{2πi(kx_i + ℓy_j)}`.
    pub fn fourier_coefficient(&self, (k, l): Lag) -> Complex64 {
        let m = self.grid_size();
        let mut s = Complex64::new(0.0, 0.0);
        for i in 0..m {
            for j in 0..m {
                let phase = 2.0 * PI * ((k * i as i64) as f64 + (l * j as i64) as f64) / m as f64;
                s += self.values[(i, j)] * Complex64::from_polar(1.0, phase);
            }
        }
        s / (m * m) as f64
    }

    pub fn mean(&self) -> f64 {
        self.values.mean()
    }
}

// e^{-2πi k i / M} for i in 0..M and k in [-R, R]
fn phase_table(m: usize, radius: i64) -> DMatrix<Complex64> {
    DMatrix::from_fn(m, (2 * radius + 1) as usize, |i, kk| {
        let k = kk as i64 - radius;
        let t = ((k * i as i64).rem_euclid(m as i64)) as f64 / m as f64;
        Complex64::from_polar(1.0, -2.0 * PI * t)
    })
}

fn clamp_kernel(values: &mut DMatrix<f64>) -> Result<()> {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    if min < -KERNEL_NEGATIVITY_TOLERANCE * max.abs().max(f64::MIN_POSITIVE) {
        return Err(Error::InvalidCovariance {
            min_value: min,
            max_value: max,
        });
    }
    values.iter_mut().for_each(|v| *v = v.max(0.0));
    Ok(())
}

/// Samples the truncated Fourier series of `gamma` on an `m × m` grid.
/// Requires `m ≥ 2(2R + 1)`.
pub fn spectral_kernel(gamma: &CovarianceFunction, m: usize) -> Result<SpectralKernel> {
    gamma.validate()?;
    let radius = gamma.radius() as i64;
    let needed = 2 * (2 * radius as usize + 1);
    if m < needed {
        return Err(Error::Dimension(format!(
            "kernel grid {m} below the Nyquist size {needed} for support radius {radius}"
        )));
    }
    let side = (2 * radius + 1) as usize;
    let coeffs = DMatrix::from_fn(side, side, |a, b| {
        Complex64::new(gamma.get((a as i64 - radius, b as i64 - radius)), 0.0)
    });
    let phases = phase_table(m, radius);
    let complex = &phases * coeffs * phases.transpose();

    let limit = STRUCTURE_TOLERANCE * gamma.abs_sum().max(f64::MIN_POSITIVE) * 10.0;
    let worst_imag = complex.iter().fold(0.0f64, |w, c| w.max(c.im.abs()));
    if worst_imag > limit {
        log::warn!("spectral kernel imaginary residue {worst_imag:e} exceeds {limit:e}; discarded");
    }
    let mut values = complex.map(|c| c.re);
    clamp_kernel(&mut values)?;

    let mut kernel = SpectralKernel::from_values(values)?;
    if let Some(factor) = check_conditions(gamma).separable_factor() {
        kernel.factor = Some(factor_samples(factor, m));
    }
    Ok(kernel)
}

/// `f₁(x_i) = Σ_k V(k) e^{2πikx_i}` for an even factor `V` indexed from `-R`.
fn factor_samples(factor: &SeparableFactor, m: usize) -> Vec<f64> {
    let r = factor.radius as i64;
    (0..m)
        .map(|i| {
            (-r..=r)
                .map(|k| factor.value(k) * (2.0 * PI * (k * i as i64) as f64 / m as f64).cos())
                .sum()
        })
        .collect()
}

/// Rank-one factor `γ_{ℓ,k} = V(ℓ) V(k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparableFactor {
    pub radius: u64,
    /// `V(-R), …, V(R)`, normalised so the largest entry is positive.
    pub values: Vec<f64>,
    pub even: bool,
}

impl SeparableFactor {
    pub fn value(&self, k: i64) -> f64 {
        let r = self.radius as i64;
        if k.abs() > r {
            0.0
        } else {
            self.values[(k + r) as usize]
        }
    }

    /// The Fourier series `f₁(x) = Σ_k V(k) e^{2πikx}` on an `m`-point grid.
    pub fn grid_samples(&self, m: usize) -> Vec<f64> {
        factor_samples(self, m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub abs_sum: f64,
    pub symmetric_exchange: bool,
    pub separable: Option<SeparableFactor>,
}

impl ConditionReport {
    /// The even rank-one factor, when one exists.
    pub fn separable_factor(&self) -> Option<&SeparableFactor> {
        self.separable.as_ref().filter(|f| f.even)
    }
}

/// Reports summability, exchange symmetry `γ_{k,ℓ} = γ_{ℓ,k}`, and any
/// rank-one factorization `γ_{ℓ,k} = V(ℓ)V(k)`.
pub fn check_conditions(gamma: &CovarianceFunction) -> ConditionReport {
    let scale = gamma.max_abs();
    let exch_tol = STRUCTURE_TOLERANCE * scale.max(1.0);
    let symmetric_exchange = gamma
        .iter()
        .all(|((k, l), v)| (v - gamma.get((l, k))).abs() <= exch_tol);
    ConditionReport {
        abs_sum: gamma.abs_sum(),
        symmetric_exchange,
        separable: rank_one_factor(gamma),
    }
}

fn rank_one_factor(gamma: &CovarianceFunction) -> Option<SeparableFactor> {
    let r = gamma.radius() as i64;
    let scale = gamma.max_abs();
    let tol = SEPARABILITY_TOLERANCE * scale.max(f64::MIN_POSITIVE);
    // pivot on the largest diagonal entry γ_{k,k} = V(k)²
    let (pivot, diag) = (-r..=r)
        .map(|k| (k, gamma.get((k, k))))
        .fold((0, f64::NEG_INFINITY), |best, c| if c.1 > best.1 { c } else { best });
    let values: Vec<f64> = if scale == 0.0 {
        vec![0.0; (2 * r + 1) as usize]
    } else {
        if diag <= 0.0 {
            return None;
        }
        let root = diag.sqrt();
        (-r..=r).map(|k| gamma.get((k, pivot)) / root).collect()
    };
    let v = |k: i64| values[(k + r) as usize];
    for k in -r..=r {
        for l in -r..=r {
            if (gamma.get((k, l)) - v(k) * v(l)).abs() > tol {
                return None;
            }
        }
    }
    let even = (-r..=r).all(|k| (v(k) - v(-k)).abs() <= SEPARABILITY_TOLERANCE * scale.sqrt().max(f64::MIN_POSITIVE));
    Some(SeparableFactor {
        radius: r as u64,
        values,
        even,
    })
}
