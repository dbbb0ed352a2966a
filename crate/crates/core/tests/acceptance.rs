//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::time::{Duration, Instant};

use corrspec::covariance_kernel::{check_conditions, gamma_from_linear, gamma_from_volterra, spectral_kernel, CovarianceFunction, SpectralKernel};
use corrspec::ensembles::*;
use corrspec::field_models::*;
use corrspec::harness::*;
use corrspec::limit_solver::*;
use corrspec::spectral_empirics::trace_comparison_bound;
use corrspec::Result;
use nalgebra::DMatrix;
use num_bigint::BigInt;
use num_traits::Zero;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Result<Outcome> {
    Ok(Outcome { pass, detail })
}

fn energy_line(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    (0..count).map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64).collect()
}

fn max_deviation(solution: &LimitSolution, law: ReferenceLaw) -> Result<f64> {
    let mut worst = 0.0f64;
    for p in &solution.points {
        worst = worst.max((p.s - reference_stieltjes(law, p.z)?).norm());
    }
    Ok(worst)
}

fn semicircle_recovery() -> Result<Outcome> {
    let start = Instant::now();
    let cfg = SolverConfig::default();
    let mut worst = 0.0f64;
    for var in [1.0, 2.0] {
        let sigma = f64::sqrt(var);
        let eq = LimitEquation::symmetric(&SpectralKernel::constant(cfg.grid_size, var));
        let line = eq.solve_line(&energy_line(-3.0 * sigma - 1.0, 3.0 * sigma + 1.0, 101), 0.05, &cfg)?;
        worst = worst.max(max_deviation(&line, ReferenceLaw::Semicircle { variance: var })?);
    }
    let elapsed = start.elapsed();
    outcome(
        worst <= 1e-6 && elapsed <= Duration::from_secs(10),
        format!("max |dS| = {worst:.2e} (tol 1e-6), {:.2} s (limit 10 s)", elapsed.as_secs_f64()),
    )
}

fn marchenko_pastur_recovery() -> Result<Outcome> {
    let start = Instant::now();
    let cfg = SolverConfig::default();
    let mut worst = 0.0f64;
    for c in [0.5, 1.0, 2.0] {
        let eq = LimitEquation::gram(&SpectralKernel::constant(cfg.grid_size, 1.0), c)?;
        let edge = (1.0 + f64::sqrt(c)).powi(2);
        let line = eq.solve_line(&energy_line(-1.0, edge + 1.0, 101), 0.05, &cfg)?;
        worst = worst.max(max_deviation(&line, ReferenceLaw::MarchenkoPastur { ratio: c, variance: 1.0 })?);
    }
    let elapsed = start.elapsed();
    outcome(
        worst <= 1e-6 && elapsed <= Duration::from_secs(10),
        format!("max |dS| = {worst:.2e} (tol 1e-6), {:.2} s (limit 10 s)", elapsed.as_secs_f64()),
    )
}

fn separable_route_consistency() -> Result<Outcome> {
    let cfg = SolverConfig::default();
    let v = [(-1, 0.25), (0, 1.0), (1, 0.25)];
    let gamma = CovarianceFunction::from_lags(v.iter().flat_map(|&(s, a)| v.iter().map(move |&(t, b)| ((s, t), a * b))))?;
    let report = check_conditions(&gamma);
    let Some(factor) = report.separable_factor() else {
        return outcome(false, "rank-one factor not detected".into());
    };
    let kernel = spectral_kernel(&gamma, cfg.grid_size)?;
    let measure = SpectralMeasureOnLine::from_samples(&factor.grid_samples(cfg.grid_size))?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let z = Complex64::new(rng.random_range(-3.0..3.0), rng.random_range(0.05..2.0));
        let a = solve_kp(&kernel, z, &cfg, None)?.s;
        let b = solve_separable(&measure, z, &cfg)?.s;
        worst = worst.max((a - b).norm());
    }
    outcome(worst <= 1e-5, format!("max |S_kernel - S_separable| = {worst:.2e} over 20 z (tol 1e-5)"))
}

fn white() -> FieldModel {
    FieldModel::Iid {
        innovation: InnovationSpec::gaussian(),
    }
}

fn esd_convergence() -> Result<Outcome> {
    let start = Instant::now();
    let cfg = ExperimentConfig::new(white(), EnsembleKind::Wigner { mode: WignerMode::LowerTriangle }, vec![256, 1024], 10, 41);
    let rep = run_limit_comparison(&cfg)?;
    let (small, large) = (rep.sizes[0].levy, rep.sizes[1].levy);
    let elapsed = start.elapsed();
    outcome(
        large <= 0.05 && large < small && elapsed <= Duration::from_secs(300),
        format!(
            "Levy n=256: {small:.4}, n=1024: {large:.4} (tol 0.05, must decrease), mass {:.4}, {:.1} s",
            rep.solver_mass,
            elapsed.as_secs_f64()
        ),
    )
}

fn gram_esd_convergence() -> Result<Outcome> {
    let cfg = ExperimentConfig::new(white(), EnsembleKind::Gram { ratio: 1.0 }, vec![1024], 10, 43);
    let rep = run_limit_comparison(&cfg)?;
    let levy = rep.sizes[0].levy;
    outcome(levy <= 0.05, format!("Levy N=1024: {levy:.4} (tol 0.05), mass {:.4}", rep.solver_mass))
}

fn universality() -> Result<Outcome> {
    let model = FieldModel::Volterra {
        coefficients: VolterraCoefficients::new([], [(((0, 0), (1, 0)), 1.0)])?,
        innovation: InnovationSpec::gaussian(),
    };
    let cfg = ExperimentConfig::new(model, EnsembleKind::Wigner { mode: WignerMode::LowerTriangle }, vec![128, 512], 20, 47);
    let rep = run_universality(&cfg)?;
    let (a, b) = (&rep.sizes[0].points[0], &rep.sizes[1].points[0]);
    outcome(
        b.gap <= a.gap + 2.0 * b.standard_error && b.gap <= 0.05,
        format!(
            "gap n=128: {:.4} (se {:.4}), n=512: {:.4} (se {:.4}); need gap512 <= gap128 + 2 se and <= 0.05",
            a.gap, a.standard_error, b.gap, b.standard_error
        ),
    )
}

fn embedding_identity() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let (rows, cols) = (rng.random_range(1..=20), rng.random_range(1..=20));
        let patch = FieldPatch::new((0, 0), DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-2.0..2.0)))?;
        let gram = build_gram(&patch)?.spectrum()?;
        let emb = embed_gram_symmetric(&patch)?.spectrum()?;
        for _ in 0..10 {
            let z = Complex64::new(rng.random_range(-3.0..5.0), rng.random_range(0.01..3.0));
            let lhs = gram.stieltjes(z)?;
            let rhs = gram_stieltjes_from_embedding(|w| emb.stieltjes(w), rows, cols, z)?;
            worst = worst.max((lhs - rhs).norm());
        }
    }
    outcome(worst <= 1e-9, format!("max deviation {worst:.2e} over 50 instances x 10 z (tol 1e-9)"))
}

fn random_symmetric(n: usize, rng: &mut ChaCha8Rng) -> Result<SymmetricEnsemble> {
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = rng.random_range(-1.0..1.0);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    SymmetricEnsemble::from_matrix(m, Normalization::None)
}

fn trace_lemma() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut violations = 0;
    for _ in 0..1000 {
        let n = rng.random_range(4..=32);
        let a = random_symmetric(n, &mut rng)?;
        let b = random_symmetric(n, &mut rng)?;
        let z = Complex64::new(rng.random_range(-3.0..3.0), rng.random_range(0.05..2.0));
        match trace_comparison_bound(&a, &b, z) {
            Ok(t) if t.gap <= t.bound + 1e-12 => {}
            _ => violations += 1,
        }
    }
    outcome(violations == 0, format!("{violations} violations over 1000 pairs"))
}

fn blocking_bounds() -> Result<Outcome> {
    let plans = [
        (12, 3, 1),
        (30, 5, 2),
        (60, 8, 3),
        (15, 4, 1),
        (18, 3, 0),
        (21, 4, 2),
        (24, 5, 1),
        (27, 4, 3),
        (33, 6, 2),
        (36, 7, 4),
        (40, 5, 0),
        (42, 9, 3),
        (45, 6, 4),
        (48, 10, 2),
        (50, 7, 1),
        (54, 12, 5),
        (63, 9, 6),
        (66, 11, 4),
        (72, 8, 2),
        (80, 13, 6),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut failures = Vec::new();
    for &(n, p, k) in &plans {
        let patch = FieldPatch::new((0, 0), DMatrix::from_fn(n, n, |_, _| rng.random_range(-5i32..=5) as f64))?;
        let ens = build_wigner(&patch, WignerMode::LowerTriangle)?;
        let plan = BlockingPlan::new(n, p, k, f64::INFINITY)?;
        let mats = blocked_matrices(&ens, &plan, Recentering::Empirical)?;
        // exact rank over the rationals: scale back to integers
        let diff = (&mats.blanked - &mats.blocked) * (n as f64).sqrt();
        let rank = exact_rank(&diff);
        if rank > plan.rank_bound() {
            failures.push(format!("(n={n}, p={p}, K={k}): rank {rank} > {}", plan.rank_bound()));
        }
    }
    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            format!("rank(X^ - X~) <= 2(qK + m) on {} integer instances", plans.len())
        } else {
            failures.join("; ")
        },
    )
}

/// Rank by Bareiss fraction-free elimination in exact integer arithmetic.
fn exact_rank(m: &DMatrix<f64>) -> usize {
    let mut a: Vec<Vec<BigInt>> = (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| BigInt::from(m[(i, j)].round() as i64)).collect())
        .collect();
    let (rows, cols) = (a.len(), a[0].len());
    let mut prev = BigInt::from(1);
    let mut rank = 0;
    for c in 0..cols {
        let Some(pivot) = (rank..rows).find(|&r| !a[r][c].is_zero()) else {
            continue;
        };
        a.swap(rank, pivot);
        for r in rank + 1..rows {
            for j in c + 1..cols {
                let v = (&a[rank][c] * &a[r][j] - &a[r][c] * &a[rank][j]) / &prev;
                a[r][j] = v;
            }
            a[r][c] = BigInt::zero();
        }
        prev = a[rank][c].clone();
        rank += 1;
    }
    rank
}

fn concentration() -> Result<Outcome> {
    let start = Instant::now();
    let full = FieldModel::Linear {
        coefficients: LinearCoefficients::separable(&[(-2, 0.1), (-1, 0.3), (0, 1.0), (1, 0.3), (2, 0.1)]),
        innovation: InnovationSpec::gaussian(),
    };
    let model = full.truncate_to_window(WindowParameter(1));
    let cfg = ExperimentConfig::new(model, EnsembleKind::Wigner { mode: WignerMode::LowerTriangle }, vec![128, 256, 512], 200, 53);
    let rep = run_concentration(&cfg, 2, &[0.05, 0.1, 0.2])?;
    let exponent = rep.decay_exponent.unwrap_or(f64::NAN);
    let max_freq = rep.tails.iter().map(|t| t.frequency).fold(0.0, f64::max);
    let std: Vec<String> = rep.std.iter().map(|(n, s)| format!("{n}:{s:.2e}")).collect();
    outcome(
        rep.all_within_bound && (-0.7..=-0.3).contains(&exponent),
        format!(
            "tails within bound + 99% slack: {} (max frequency {max_freq:.3}); std {}; exponent {exponent:.3} (need [-0.7, -0.3]); {:.1} s",
            rep.all_within_bound,
            std.join(" "),
            start.elapsed().as_secs_f64()
        ),
    )
}

fn corpus() -> Result<Vec<(&'static str, CovarianceFunction)>> {
    let two_point: LinearCoefficients = [((0, 0), 1.0), ((1, 0), 0.5)].into_iter().collect();
    let wide: LinearCoefficients = [((0, 0), 1.0), ((2, -1), 0.4), ((-1, 3), -0.25), ((1, 1), 0.7)].into_iter().collect();
    Ok(vec![
        ("white", CovarianceFunction::white(1.0)),
        ("two-point linear", gamma_from_linear(&two_point, 1.0)),
        ("separable linear", gamma_from_linear(&LinearCoefficients::separable(&[(-1, 0.25), (0, 1.0), (1, 0.25)]), 1.0)),
        ("wide linear", gamma_from_linear(&wide, 2.0)),
        (
            "truncated linear",
            gamma_from_linear(&LinearCoefficients::separable(&[(-2, 0.1), (-1, 0.3), (0, 1.0), (1, 0.3), (2, 0.1)]).truncate_to_window(WindowParameter(1)), 1.0),
        ),
        ("single quadratic volterra", gamma_from_volterra(&VolterraCoefficients::new([], [(((0, 0), (1, 0)), 1.0)])?, 1.0)?),
        (
            "mixed volterra",
            gamma_from_volterra(&VolterraCoefficients::new([((0, 0), 0.8), ((0, 1), 0.3)], [(((0, 0), (1, 1)), 0.6), (((1, 0), (0, -1)), -0.4)])?, 1.5)?,
        ),
        ("separable volterra", gamma_from_volterra(&VolterraCoefficients::separable(&[(0, 1.0), (1, 0.5)], &[((0, 1), 0.7), ((1, -1), 0.2)])?, 1.0)?),
    ])
}

fn kernel_round_trip() -> Result<Outcome> {
    let mut worst = 0.0f64;
    let mut count = 0;
    for (_, gamma) in corpus()? {
        let r = gamma.radius() as usize;
        for m in [2 * (2 * r + 1), 64] {
            let kernel = spectral_kernel(&gamma, m)?;
            let rr = r as i64;
            for k in -rr..=rr {
                for l in -rr..=rr {
                    let c = kernel.fourier_coefficient((k, l));
                    worst = worst.max((c.re - gamma.get((k, l))).abs()).max(c.im.abs());
                }
            }
        }
        count += 1;
    }
    outcome(worst <= 1e-10, format!("max lag error {worst:.2e} over {count} models (tol 1e-10)"))
}

fn main() {
    let criteria: [(&str, fn() -> Result<Outcome>); 11] = [
        ("semicircle recovery", semicircle_recovery),
        ("Marchenko-Pastur recovery", marchenko_pastur_recovery),
        ("separable route consistency", separable_route_consistency),
        ("ESD convergence, symmetric", esd_convergence),
        ("ESD convergence, Gram", gram_esd_convergence),
        ("universality", universality),
        ("Gram embedding identity", embedding_identity),
        ("trace comparison", trace_lemma),
        ("blocking rank bounds", blocking_bounds),
        ("concentration", concentration),
        ("gamma/kernel round trip", kernel_round_trip),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let line = match run() {
            Ok(o) => {
                if !o.pass {
                    failed += 1;
                }
                format!("{}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail)
            }
            Err(e) => {
                failed += 1;
                format!("FAIL: error {e}")
            }
        };
        println!("criterion {:>2} [{name}] {line}", i + 1);
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
