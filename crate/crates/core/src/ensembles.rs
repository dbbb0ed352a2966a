//! Matrices assembled from field patches: the normalized symmetric
//! (Wigner-type) matrix, the Gram matrix, the Gram-to-symmetric embedding,
//! and the truncated / blanked / blocked matrices of the block Lindeberg
//! argument together with their deterministic bounds.

use std::f64::consts::{PI, SQRT_2};

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::field_models::FieldPatch;
use crate::spectral_empirics::{eigenvalues, EmpiricalSpectrum};
use crate::{Error, Result};

/// Access to the dense symmetric matrix behind an ensemble.
pub trait SymmetricMatrix {
    fn matrix(&self) -> &DMatrix<f64>;

    fn order(&self) -> usize {
        self.matrix().nrows()
    }
}

impl SymmetricMatrix for DMatrix<f64> {
    fn matrix(&self) -> &DMatrix<f64> {
        self
    }
}

/// Scaling applied to the raw entries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Entries divided by `√n`, `n` the order.
    SqrtOrder,
    /// Entries divided by `√p` (Gram embedding); the `√n` scaling is suppressed.
    SqrtColumns { p: usize },
    /// Stored as given.
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WignerMode {
    /// Entry `(i, j)` for `j ≤ i` is the patch value, mirrored above the diagonal.
    #[default]
    LowerTriangle,
    /// Entry `(k, ℓ)` is `(P_{k,ℓ} + P_{ℓ,k}) / √2`.
    SymmetrizedAverage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricEnsemble {
    matrix: DMatrix<f64>,
    normalization: Normalization,
}

impl SymmetricMatrix for SymmetricEnsemble {
    fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }
}

fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != m.ncols() || m.nrows() == 0 {
        return Err(Error::Dimension(format!("expected a non-empty square matrix, got {}x{}", m.nrows(), m.ncols())));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("matrix has non-finite entries".into()));
    }
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            if m[(i, j)].to_bits() != m[(j, i)].to_bits() {
                return Err(Error::Numeric(format!("matrix not exactly symmetric at ({i},{j})")));
            }
        }
    }
    Ok(())
}

impl SymmetricEnsemble {
    /// Wraps an already-scaled matrix; symmetry must be exact.
    pub fn from_matrix(matrix: DMatrix<f64>, normalization: Normalization) -> Result<Self> {
        check_symmetric(&matrix)?;
        Ok(Self { matrix, normalization })
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    pub fn spectrum(&self) -> Result<EmpiricalSpectrum> {
        eigenvalues(self)
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.matrix
    }

    /// Row-major CSV dump.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        for row in self.matrix.row_iter() {
            let line: Vec<String> = row.iter().map(|v| format!("{v:.17e}")).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        Ok(())
    }
}

/// `𝕏_n = n^{-1/2} X_n` from a square patch.
pub fn build_wigner(patch: &FieldPatch, mode: WignerMode) -> Result<SymmetricEnsemble> {
    if !patch.is_square() {
        return Err(Error::Dimension(format!(
            "symmetric ensemble needs a square patch, got {}x{}",
            patch.rows(),
            patch.cols()
        )));
    }
    let n = patch.rows();
    let scale = 1.0 / (n as f64).sqrt();
    let p = &patch.values;
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = match mode {
                WignerMode::LowerTriangle => p[(i, j)] * scale,
                WignerMode::SymmetrizedAverage => (p[(i, j)] + p[(j, i)]) / SQRT_2 * scale,
            };
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    Ok(SymmetricEnsemble {
        matrix: m,
        normalization: Normalization::SqrtOrder,
    })
}

/// `B_N = (1/p) 𝒳 𝒳ᵀ` for an `N × p` data matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct GramEnsemble {
    matrix: DMatrix<f64>,
    columns: usize,
}

impl SymmetricMatrix for GramEnsemble {
    fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }
}

impl GramEnsemble {
    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn columns(&self) -> usize {
        self.columns
    }

    /// `c = N / p`.
    pub fn aspect(&self) -> f64 {
        self.rows() as f64 / self.columns as f64
    }

    pub fn spectrum(&self) -> Result<EmpiricalSpectrum> {
        eigenvalues(self)
    }
}

pub fn build_gram(patch: &FieldPatch) -> Result<GramEnsemble> {
    let x = &patch.values;
    let p = patch.cols();
    let mut m = (x * x.transpose()) / p as f64;
    // the product is symmetric up to rounding; mirror the lower triangle
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            m[(j, i)] = m[(i, j)];
        }
    }
    Ok(GramEnsemble { matrix: m, columns: p })
}

/// The order-`(N + p)` symmetric matrix `p^{-1/2} [[0, 𝒳ᵀ], [𝒳, 0]]` whose
/// squared nonzero eigenvalues are those of `B_N`.
pub fn embed_gram_symmetric(patch: &FieldPatch) -> Result<SymmetricEnsemble> {
    let (rows, p) = (patch.rows(), patch.cols());
    let n = rows + p;
    let scale = 1.0 / (p as f64).sqrt();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..rows {
        for j in 0..p {
            let v = patch.values[(i, j)] * scale;
            m[(p + i, j)] = v;
            m[(j, p + i)] = v;
        }
    }
    Ok(SymmetricEnsemble {
        matrix: m,
        normalization: Normalization::SqrtColumns { p },
    })
}

/// `S_B(z) = z^{-1/2} (n / 2N) S_X(z^{1/2}) + (p - N)/(2Nz)`, the Gram
/// transform recovered from the Stieltjes transform `s_embedded` of the
/// embedding (a function evaluated at `√z`).
pub fn gram_stieltjes_from_embedding(
    s_embedded: impl Fn(Complex64) -> Result<Complex64>,
    rows: usize,
    columns: usize,
    z: Complex64,
) -> Result<Complex64> {
    if !(z.im > 0.0) {
        return Err(Error::Domain(format!("need Im z > 0, got {z}")));
    }
    let (big_n, p) = (rows as f64, columns as f64);
    let n = big_n + p;
    let root = z.sqrt();
    Ok(n / (2.0 * big_n) * s_embedded(root)? / root + (p - big_n) / (2.0 * big_n * z))
}

/// Block structure for the blanking / blocking comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockingPlan {
    pub n: usize,
    /// Side of the big blocks.
    pub p: usize,
    /// Dependence range (gap width).
    pub k: usize,
    /// Truncation level `τ_n`; entries with `|X| > τ√n` are dropped.
    pub tau: f64,
}

impl BlockingPlan {
    pub fn new(n: usize, p: usize, k: usize, tau: f64) -> Result<Self> {
        let plan = Self { n, p, k, tau };
        plan.validate()?;
        Ok(plan)
    }

    /// `τ_n = n^{-1/4}`, `p_n = ⌊n^{1/3}⌋` (raised to `K + 1` when needed).
    pub fn with_defaults(n: usize, k: usize) -> Result<Self> {
        let p = ((n as f64).cbrt().floor() as usize).max(k + 1);
        Self::new(n, p, k, (n as f64).powf(-0.25))
    }

    pub fn validate(&self) -> Result<()> {
        if self.p <= self.k {
            return Err(Error::Plan(format!("block side p = {} must exceed K = {}", self.p, self.k)));
        }
        if 3 * (self.p + self.k) > self.n {
            return Err(Error::Plan(format!(
                "p + K = {} exceeds n/3 for n = {}",
                self.p + self.k,
                self.n
            )));
        }
        if !(self.tau > 0.0) {
            return Err(Error::Plan(format!("truncation level must be positive, got {}", self.tau)));
        }
        Ok(())
    }

    /// `q = ⌊n / (p + K)⌋ - 1`.
    pub fn q(&self) -> usize {
        self.n / (self.p + self.k) - 1
    }

    /// `m = n - q(p + K) - p`.
    pub fn remainder(&self) -> usize {
        self.n - self.q() * (self.p + self.k) - self.p
    }

    /// Zero-based start of block `I_ℓ`, `ℓ = 0..=q`.
    pub fn block_start(&self, l: usize) -> usize {
        l * (self.p + self.k)
    }

    /// Block index of a row, if it lies in some `I_ℓ`.
    pub fn block_of(&self, row: usize) -> Option<usize> {
        let l = row / (self.p + self.k);
        (l <= self.q() && row - self.block_start(l) < self.p).then_some(l)
    }

    /// `2(qK + m)`.
    pub fn rank_bound(&self) -> usize {
        2 * (self.q() * self.k + self.remainder())
    }
}

/// How `E(X 1_{|X| ≤ τ√n})` is obtained for recentering truncated entries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Recentering {
    /// Known truncated mean, in the units of the raw (unnormalized) field.
    Analytic(f64),
    /// Sample mean of the truncated entries over the lower triangle.
    Empirical,
}

/// The three auxiliary matrices, all in normalized scale.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockedMatrices {
    pub truncated: DMatrix<f64>,
    pub blanked: DMatrix<f64>,
    pub blocked: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockingReport {
    pub plan: BlockingPlan,
    pub q: usize,
    pub remainder: usize,
    pub rank_difference: usize,
    pub rank_bound: usize,
    /// `|S_{X̄}(z) - S_{X̂}(z)|`.
    pub blanking_gap: f64,
    /// `(Tr((X̄ - X̂)²) / (n v⁴))^{1/2}` in normalized scale.
    pub blanking_bound: f64,
    /// `|S_{X̂}(z) - S_{X̃}(z)|`.
    pub blocking_gap: f64,
    /// `π rank(X̂ - X̃) / (v n)`.
    pub blocking_bound: f64,
}

/// Builds the truncated, blanked and blocked matrices from a `√n`-normalized
/// symmetric ensemble.
pub fn blocked_matrices(ensemble: &SymmetricEnsemble, plan: &BlockingPlan, recentering: Recentering) -> Result<BlockedMatrices> {
    let n = ensemble.order();
    if plan.n != n {
        return Err(Error::Plan(format!("plan is for n = {}, matrix has order {n}", plan.n)));
    }
    plan.validate()?;
    let sqrt_n = (n as f64).sqrt();
    let x = ensemble.matrix();

    // |X| ≤ τ√n is |entry| ≤ τ in normalized scale
    let keep = |v: f64| if v.abs() <= plan.tau { v } else { 0.0 };
    let shift = if plan.tau.is_infinite() {
        0.0
    } else {
        match recentering {
            Recentering::Analytic(mean) => mean / sqrt_n,
            Recentering::Empirical => {
                let mut s = 0.0;
                for i in 0..n {
                    for j in 0..=i {
                        s += keep(x[(i, j)]);
                    }
                }
                s / (n * (n + 1) / 2) as f64
            }
        }
    };
    let truncated = x.map(|v| keep(v) - shift);

    let mut blanked = truncated.clone();
    for l in 0..=plan.q() {
        let s = plan.block_start(l);
        blanked.view_mut((s, s), (plan.p, plan.p)).fill(0.0);
    }

    let mut blocked = DMatrix::zeros(n, n);
    for k in 1..=plan.q() {
        for l in 0..k {
            let (r, c) = (plan.block_start(k), plan.block_start(l));
            let block = truncated.view((r, c), (plan.p, plan.p)).into_owned();
            blocked.view_mut((r, c), (plan.p, plan.p)).copy_from(&block);
            blocked.view_mut((c, r), (plan.p, plan.p)).copy_from(&block.transpose());
        }
    }
    Ok(BlockedMatrices {
        truncated,
        blanked,
        blocked,
    })
}

/// Numerical rank from the singular values, relative tolerance `n·ε·σ_max`.
pub fn numerical_rank(m: &DMatrix<f64>) -> usize {
    if m.iter().all(|&v| v == 0.0) {
        return 0;
    }
    let sv = m.singular_values();
    let max = sv.max();
    let tol = m.nrows().max(m.ncols()) as f64 * f64::EPSILON * max * 16.0;
    sv.iter().filter(|&&s| s > tol).count()
}

fn stieltjes_of(m: &DMatrix<f64>, z: Complex64) -> Result<Complex64> {
    eigenvalues(m)?.stieltjes(z)
}

/// Checks the rank bound `rank(X̂ - X̃) ≤ 2(qK + m)` and the two Stieltjes
/// comparison bounds at `z`.
pub fn lindeberg_decomposition_check(
    ensemble: &SymmetricEnsemble,
    plan: &BlockingPlan,
    recentering: Recentering,
    z: Complex64,
) -> Result<BlockingReport> {
    if !(z.im > 0.0) {
        return Err(Error::Domain(format!("need Im z > 0, got {z}")));
    }
    let mats = blocked_matrices(ensemble, plan, recentering)?;
    let n = ensemble.order() as f64;
    let v = z.im;

    let rank_difference = numerical_rank(&(&mats.blanked - &mats.blocked));
    let rank_bound = plan.rank_bound();
    if rank_difference > rank_bound {
        return Err(Error::Internal(format!(
            "rank(X̂ - X̃) = {rank_difference} exceeds 2(qK + m) = {rank_bound}"
        )));
    }

    let s_trunc = stieltjes_of(&mats.truncated, z)?;
    let s_blank = stieltjes_of(&mats.blanked, z)?;
    let s_block = stieltjes_of(&mats.blocked, z)?;

    let blanking_gap = (s_trunc - s_blank).norm();
    let blanking_bound = ((&mats.truncated - &mats.blanked).norm_squared() / (n * v.powi(4))).sqrt();
    let blocking_gap = (s_blank - s_block).norm();
    let blocking_bound = PI * rank_difference as f64 / (v * n);
    for (gap, bound, what) in [
        (blanking_gap, blanking_bound, "blanking"),
        (blocking_gap, blocking_bound, "blocking"),
    ] {
        if gap > bound + 1e-12 {
            return Err(Error::Internal(format!("{what} gap {gap:e} exceeds its bound {bound:e}")));
        }
    }

    Ok(BlockingReport {
        plan: *plan,
        q: plan.q(),
        remainder: plan.remainder(),
        rank_difference,
        rank_bound,
        blanking_gap,
        blanking_bound,
        blocking_gap,
        blocking_bound,
    })
}
