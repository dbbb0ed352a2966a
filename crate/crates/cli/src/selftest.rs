//! Quick in-process checks of exact identities, run by the `selftest` command.

use corrspec::covariance_kernel::{gamma_from_linear, spectral_kernel, CovarianceFunction, SpectralKernel};
use corrspec::ensembles::{build_gram, build_wigner, SymmetricMatrix, WignerMode};
use corrspec::field_models::*;
use corrspec::harness::concentration_bound;
use corrspec::limit_solver::{reference_stieltjes, solve_kp, ReferenceLaw, SolverConfig};
use corrspec::spectral_empirics::{levy_distance, DistributionFunction, EmpiricalSpectrum};
use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::Serialize;

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub pass: bool,
}

fn rademacher_support() -> corrspec::Result<bool> {
    let spec = InnovationSpec::new(Innovation::Rademacher, 1.0)?;
    let p = sample_innovations(&spec, 2, 2, 7)?;
    Ok(p.values.iter().all(|&v| v == 1.0 || v == -1.0))
}

fn sampler_determinism() -> corrspec::Result<bool> {
    let spec = InnovationSpec::gaussian();
    Ok(sample_innovations(&spec, 5, 4, 3)? == sample_innovations(&spec, 5, 4, 3)?)
}

fn identity_filter() -> corrspec::Result<bool> {
    let spec = InnovationSpec::gaussian();
    let coeffs: LinearCoefficients = [((0, 0), 1.0)].into_iter().collect();
    Ok(sample_linear_field(&coeffs, &spec, 6, 5, 9)?.values == sample_innovations(&spec, 6, 5, 9)?.values)
}

fn linearity() -> corrspec::Result<bool> {
    let spec = InnovationSpec::gaussian();
    let coeffs: LinearCoefficients = [((0, 0), 1.0), ((1, 0), 0.5)].into_iter().collect();
    let a = sample_linear_field(&coeffs, &spec, 6, 6, 2)?;
    let b = sample_linear_field(&coeffs.scaled(2.0), &spec, 6, 6, 2)?;
    Ok(b.values == a.values * 2.0)
}

fn white_gamma() -> corrspec::Result<bool> {
    let g = gamma_from_linear(&[((0, 0), 1.0)].into_iter().collect(), 1.0);
    Ok(g.get((0, 0)) == 1.0 && g.iter().filter(|&(l, _)| l != (0, 0)).all(|(_, v)| v == 0.0))
}

fn constant_kernel() -> corrspec::Result<bool> {
    let k = spectral_kernel(&CovarianceFunction::white(2.5), 8)?;
    Ok(k.values().iter().all(|&v| (v - 2.5).abs() < 1e-14))
}

fn stieltjes_hand_values() -> corrspec::Result<bool> {
    let i = Complex64::i();
    let a = EmpiricalSpectrum::new(vec![0.0])?.stieltjes(i)?;
    let b = EmpiricalSpectrum::new(vec![-1.0, 1.0])?.stieltjes(i)?;
    Ok((a - i).norm() < 1e-15 && (b - i / 2.0).norm() < 1e-15)
}

fn levy_self_distance() -> corrspec::Result<bool> {
    let f = DistributionFunction::step(EmpiricalSpectrum::new(vec![0.3, -1.0, 2.0])?);
    Ok(levy_distance(&f, &f) == 0.0)
}

fn gram_scalar() -> corrspec::Result<bool> {
    let p = FieldPatch::new((0, 0), DMatrix::from_element(1, 1, 3.0))?;
    Ok(build_gram(&p)?.matrix()[(0, 0)] == 9.0)
}

fn wigner_diagonal() -> corrspec::Result<bool> {
    let p = FieldPatch::new((0, 0), DMatrix::from_diagonal(&nalgebra::dvector![4.0, -2.0, 1.0, 3.0]))?;
    let s = build_wigner(&p, WignerMode::LowerTriangle)?.spectrum()?;
    Ok(s.eigenvalues() == [-1.0, 0.5, 1.5, 2.0])
}

fn zero_kernel_solution() -> corrspec::Result<bool> {
    let z = Complex64::new(0.3, 0.4);
    let cfg = SolverConfig {
        grid_size: 8,
        ..SolverConfig::default()
    };
    let fp = solve_kp(&SpectralKernel::constant(8, 0.0), z, &cfg, None)?;
    Ok((fp.s + 1.0 / z).norm() < 1e-8)
}

fn semicircle_at_i() -> corrspec::Result<bool> {
    let s = reference_stieltjes(ReferenceLaw::Semicircle { variance: 1.0 }, Complex64::i())?;
    Ok((s - Complex64::new(0.0, (5f64.sqrt() - 1.0) / 2.0)).norm() < 1e-15)
}

fn vacuous_bound() -> corrspec::Result<bool> {
    Ok(concentration_bound(256, 0.0, 1.0, 1) == 4.0)
}

pub fn run() -> Vec<Check> {
    let checks: [(&'static str, fn() -> corrspec::Result<bool>); 13] = [
        ("rademacher_support", rademacher_support),
        ("sampler_determinism", sampler_determinism),
        ("identity_filter", identity_filter),
        ("linearity", linearity),
        ("white_gamma", white_gamma),
        ("constant_kernel", constant_kernel),
        ("stieltjes_hand_values", stieltjes_hand_values),
        ("levy_self_distance", levy_self_distance),
        ("gram_scalar", gram_scalar),
        ("wigner_diagonal", wigner_diagonal),
        ("zero_kernel_solution", zero_kernel_solution),
        ("semicircle_at_i", semicircle_at_i),
        ("vacuous_bound", vacuous_bound),
    ];
    checks
        .iter()
        .map(|&(name, f)| {
            let pass = f().unwrap_or(false);
            if !pass {
                log::error!("selftest check {name} failed");
            }
            Check { name, pass }
        })
        .collect()
}
