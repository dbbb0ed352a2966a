//! CSV plot data: density overlays, distance against size, tail frequency
//! against radius.

use std::fmt::Write as _;

use corrspec::harness::{ConcentrationReport, LimitComparisonReport, LimitComparisonSize, TailPoint};

pub const MIN_BINS: usize = 32;

/// Freedman–Diaconis bin count `range / (2 IQR n^{-1/3})`, at least [`MIN_BINS`].
pub fn freedman_diaconis_bins(sorted: &[f64]) -> usize {
    let n = sorted.len();
    if n < 2 {
        return MIN_BINS;
    }
    let q = |p: f64| {
        let h = p * (n - 1) as f64;
        let (i, f) = (h.floor() as usize, h - h.floor());
        sorted[i] + f * (sorted[(i + 1).min(n - 1)] - sorted[i])
    };
    let iqr = q(0.75) - q(0.25);
    let range = sorted[n - 1] - sorted[0];
    if !(iqr > 0.0) || !(range > 0.0) {
        return MIN_BINS;
    }
    let width = 2.0 * iqr / (n as f64).cbrt();
    ((range / width).ceil() as usize).max(MIN_BINS)
}

fn interpolate(x: &[f64], y: &[f64], t: f64) -> f64 {
    if x.is_empty() || t < x[0] || t > x[x.len() - 1] {
        return 0.0;
    }
    let i = x.partition_point(|&v| v <= t).min(x.len() - 1).max(1);
    let (x0, x1) = (x[i - 1], x[i]);
    if x1 == x0 {
        return y[i];
    }
    y[i - 1] + (y[i] - y[i - 1]) * (t - x0) / (x1 - x0)
}

/// Columns `E,empirical,solver`: the histogram density of the pooled
/// eigenvalues at the bin centres, padded by three empty bins on each side,
/// next to the solver density interpolated there.
pub fn density_overlay_csv(eigenvalues: &[f64], energies: &[f64], density: &[f64]) -> String {
    let mut out = String::from("E,empirical,solver\n");
    if eigenvalues.is_empty() {
        return out;
    }
    let mut sorted = eigenvalues.to_vec();
    sorted.sort_by(f64::total_cmp);
    let bins = freedman_diaconis_bins(&sorted);
    let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 / bins as f64 };
    let mut counts = vec![0usize; bins];
    for &v in &sorted {
        counts[(((v - lo) / width) as usize).min(bins - 1)] += 1;
    }
    let n = sorted.len() as f64;
    const PAD: i64 = 3;
    for b in -PAD..bins as i64 + PAD {
        let centre = lo + (b as f64 + 0.5) * width;
        let emp = if (0..bins as i64).contains(&b) {
            counts[b as usize] as f64 / (n * width)
        } else {
            0.0
        };
        let _ = writeln!(out, "{centre},{emp},{}", interpolate(energies, density, centre));
    }
    out
}

pub fn distance_csv(sizes: &[LimitComparisonSize]) -> String {
    let mut out = String::from("n,levy,kolmogorov\n");
    for s in sizes {
        let _ = writeln!(out, "{},{},{}", s.n, s.levy, s.kolmogorov);
    }
    out
}

pub fn tail_csv(tails: &[TailPoint]) -> String {
    let mut out = String::from("n,r,frequency,bound,slack\n");
    for t in tails {
        let _ = writeln!(out, "{},{},{},{},{}", t.n, t.r, t.frequency, t.bound, t.slack);
    }
    out
}

pub fn std_csv(std: &[(usize, f64)]) -> String {
    let mut out = String::from("n,std\n");
    for (n, s) in std {
        let _ = writeln!(out, "{n},{s}");
    }
    out
}

/// Plot files for a limit comparison, `(file name, contents)`.
pub fn emit_comparison(report: &LimitComparisonReport) -> Vec<(String, String)> {
    let eig = report.largest_spectrum.as_ref().map(|s| s.eigenvalues()).unwrap_or(&[]);
    vec![
        ("density_overlay.csv".into(), density_overlay_csv(eig, &report.energies, &report.solver_density)),
        ("distance_vs_n.csv".into(), distance_csv(&report.sizes)),
    ]
}

pub fn emit_concentration(report: &ConcentrationReport) -> Vec<(String, String)> {
    vec![
        ("tail_vs_r.csv".into(), tail_csv(&report.tails)),
        ("std_vs_n.csv".into(), std_csv(&report.std)),
    ]
}
