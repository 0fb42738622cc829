#![allow(dead_code)]

use lfdr_core::basis::{Basis, BasisSpec};
use lfdr_core::density::{fit_mixture_density, fit_with_basis, MixtureDensityFit};
use lfdr_core::ingest::{bin_z_values, BinOptions, BinnedCounts, ZSample};
use lfdr_core::simulate::{generate, SimModel};

/// Bin centers at -4.05, -3.95, ..., 7.35: none falls on +-2.
pub fn grid_options() -> BinOptions {
    BinOptions { k_bins: 115, range: Some((-4.05, 7.35)), clip: false }
}

pub fn draw(seed: u64) -> (ZSample, BinnedCounts) {
    let z = generate(&SimModel::exact_null(), seed).unwrap();
    let h = bin_z_values(&z, &grid_options()).unwrap();
    (z, h)
}

pub fn fit(h: &BinnedCounts) -> MixtureDensityFit {
    fit_mixture_density(h, BasisSpec::default()).unwrap()
}

/// Refit with `y_l` moved by `dy`, keeping the basis fixed.
pub fn refit(h: &BinnedCounts, basis: &Basis, l: usize, dy: f64) -> MixtureDensityFit {
    let mut c = h.counts.clone();
    c[l] += dy;
    fit_with_basis(&h.with_counts(c), basis.clone()).unwrap()
}

/// Central difference of a vector-valued map of the counts in coordinate `l`.
pub fn central_difference(h: &BinnedCounts, l: usize, step: f64, g: impl Fn(&BinnedCounts) -> Vec<f64>) -> Vec<f64> {
    let shifted = |s: f64| {
        let mut c = h.counts.clone();
        c[l] += s;
        g(&h.with_counts(c))
    };
    let (p, m) = (shifted(step), shifted(-step));
    p.iter().zip(&m).map(|(a, b)| (a - b) / (2.0 * step)).collect()
}

/// Largest column-wise relative error `max|a - b| / max|b|`.
pub fn column_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    analytic.iter().zip(numeric).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())) / scale
}

/// Composite Simpson's rule with `n` (even) panels.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}
