//! Power diagnostics: nonnull counts, the expected nonnull fdr, the nonnull
//! c.d.f. of fdr, and sample-size projections.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::basis::BasisSpec;
use crate::density::{fit_mixture_density, MixtureDensityFit};
use crate::error::{FdrError, Result};
use crate::fdr::local_fdr_bins;
use crate::ingest::BinnedCounts;
use crate::null::NullModel;

/// `(1 - fdr(x_k)) y_k`, or `(1 - fdr(x_k)) nu_k` when `smoothed`.
pub fn nonnull_counts(fit: &MixtureDensityFit, per_bin_fdr: &[f64], smoothed: bool) -> Vec<f64> {
    let y = if smoothed { &fit.expected_counts } else { &fit.counts };
    y.iter().zip(per_bin_fdr).map(|(y, f)| (1.0 - f) * y).collect()
}

/// Expected fdr under the estimated nonnull density.
pub fn efdr1(fit: &MixtureDensityFit, per_bin_fdr: &[f64]) -> Result<f64> {
    let (mut num, mut den) = (0.0, 0.0);
    for (f, d) in per_bin_fdr.iter().zip(&fit.fitted_density) {
        num += f * (1.0 - f) * d;
        den += (1.0 - f) * d;
    }
    if !(den > 0.0) {
        return Err(FdrError::NoNonnullMass);
    }
    Ok(num / den)
}

/// Default grid `t = 0.01, 0.02, ..., 1.00`.
pub fn default_t_grid() -> Vec<f64> {
    (1..=100).map(|i| i as f64 / 100.0).collect()
}

/// Nonnull c.d.f. of fdr, from the smoothed nonnull counts.
pub fn nonnull_cdf(fit: &MixtureDensityFit, per_bin_fdr: &[f64], t_grid: &[f64]) -> Result<Vec<(f64, f64)>> {
    let y1 = nonnull_counts(fit, per_bin_fdr, true);
    let total: f64 = y1.iter().sum();
    if !(total > 0.0) {
        return Err(FdrError::NoNonnullMass);
    }
    Ok(t_grid
        .iter()
        .map(|&t| {
            let s: f64 = y1.iter().zip(per_bin_fdr).filter(|(_, f)| **f <= t).map(|(y, _)| y).sum();
            (t, s / total)
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProjectionMode {
    /// Nonnull counts move from `x` to `sqrt(c) x`.
    Crude,
    /// Nonnull counts move by `sqrt(c) mu + d (x - mu)`, matching the mean and
    /// variance of a combined statistic from `c` replicates.
    Adjusted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub c: f64,
    pub efdr1: f64,
    pub warnings: Vec<String>,
}

/// Per-side moments of the smoothed nonnull counts used by the adjusted map.
#[derive(Debug, Clone, Copy, PartialEq)]
struct SideMoments {
    mass: f64,
    mean: f64,
    spread2: f64,
}

fn side_moments(x: &[f64], y1: &[f64], take: impl Fn(f64) -> bool, sigma2: f64) -> SideMoments {
    let (mut m, mut s1, mut s2) = (0.0, 0.0, 0.0);
    for (&x, &y) in x.iter().zip(y1) {
        if take(x) {
            m += y;
            s1 += y * x;
            s2 += y * x * x;
        }
    }
    if m <= 0.0 {
        return SideMoments { mass: 0.0, mean: 0.0, spread2: 0.0 };
    }
    let mean = s1 / m;
    let var = (s2 / m - mean * mean).max(0.0);
    SideMoments { mass: m, mean, spread2: (var - sigma2).max(0.0) }
}

/// Add `mass` at position `x` to a grid starting at `first` with spacing `w`,
/// split linearly between the two nearest centers.
fn deposit(counts: &mut [f64], first: f64, w: f64, x: f64, mass: f64) {
    let pos = (x - first) / w;
    let last = counts.len() - 1;
    if pos <= 0.0 {
        counts[0] += mass;
    } else if pos >= last as f64 {
        counts[last] += mass;
    } else {
        let j = pos.floor() as usize;
        let frac = pos - j as f64;
        counts[j] += mass * (1.0 - frac);
        counts[j + 1] += mass * frac;
    }
}

/// Synthetic histogram for a study `c` times larger: null counts stay put,
/// smoothed nonnull counts are moved outward on each side of zero. The grid
/// is extended with the same spacing to hold the moved counts.
pub fn projected_histogram(
    fit: &MixtureDensityFit,
    per_bin_fdr: &[f64],
    null: &NullModel,
    c: f64,
    mode: ProjectionMode,
) -> Result<(BinnedCounts, Vec<String>)> {
    if !(c >= 1.0) {
        return Err(FdrError::InvalidConfig(format!("projection factor c = {c} must be >= 1")));
    }
    let x = &fit.centers;
    let w = fit.width;
    let y1 = nonnull_counts(fit, per_bin_fdr, true);
    let y0: Vec<f64> = fit.expected_counts.iter().zip(&y1).map(|(n, a)| n - a).collect();
    let rc = c.sqrt();
    let sigma2 = null.sigma0 * null.sigma0;
    let mut warnings = Vec::new();

    let sides = [
        (side_moments(x, &y1, |v| v < 0.0, sigma2), "left"),
        (side_moments(x, &y1, |v| v >= 0.0, sigma2), "right"),
    ];
    for (m, name) in &sides {
        if m.mass <= 0.0 {
            let msg = format!("no nonnull mass on the {name} side; that side is not projected");
            warn!("{msg}");
            warnings.push(msg);
        }
    }
    let dest = |v: f64| -> f64 {
        let m = if v < 0.0 { sides[0].0 } else { sides[1].0 };
        match mode {
            ProjectionMode::Crude => rc * v,
            ProjectionMode::Adjusted => {
                let tot = m.spread2 + sigma2;
                let d = (c - (c - 1.0) * sigma2 / tot).max(0.0).sqrt();
                rc * m.mean + d * (v - m.mean)
            }
        }
    };

    let (mut lo, mut hi) = (x[0], x[x.len() - 1]);
    for (&v, &a) in x.iter().zip(&y1) {
        if a > 0.0 {
            let t = dest(v);
            lo = lo.min(t);
            hi = hi.max(t);
        }
    }
    let pad_lo = ((x[0] - lo) / w - 1e-9).ceil().max(0.0) as usize;
    let pad_hi = ((hi - x[x.len() - 1]) / w - 1e-9).ceil().max(0.0) as usize;
    let first = x[0] - pad_lo as f64 * w;
    let mut counts = vec![0.0; x.len() + pad_lo + pad_hi];
    for (k, (&v, (&a, &b))) in x.iter().zip(y1.iter().zip(&y0)).enumerate() {
        counts[k + pad_lo] += b;
        if a > 0.0 {
            deposit(&mut counts, first, w, dest(v), a);
        }
    }
    Ok((BinnedCounts::from_counts(first, w, counts)?, warnings))
}

/// Projected expected nonnull fdr for a study `c` times larger, keeping the
/// null model fixed.
pub fn sample_size_projection(
    fit: &MixtureDensityFit,
    per_bin_fdr: &[f64],
    null: &NullModel,
    c: f64,
    mode: ProjectionMode,
) -> Result<Projection> {
    let (hist, warnings) = projected_histogram(fit, per_bin_fdr, null, c, mode)?;
    let spec: BasisSpec = fit.basis.spec;
    let refit = fit_mixture_density(&hist, spec)?;
    let fdr = local_fdr_bins(&refit, null);
    Ok(Projection { c, efdr1: efdr1(&refit, &fdr)?, warnings })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerReport {
    /// Smoothed nonnull counts.
    pub nonnull_counts: Vec<f64>,
    /// Observed nonnull counts `(1 - fdr) y`.
    pub nonnull_counts_raw: Vec<f64>,
    pub null_counts: Vec<f64>,
    pub efdr1: f64,
    pub g1_curve: Vec<(f64, f64)>,
    pub p1_hat: f64,
    pub projections: Vec<Projection>,
}

pub fn power_report(
    fit: &MixtureDensityFit,
    per_bin_fdr: &[f64],
    null: &NullModel,
    factors: &[f64],
    mode: ProjectionMode,
) -> Result<PowerReport> {
    let y1 = nonnull_counts(fit, per_bin_fdr, true);
    let null_counts = fit.expected_counts.iter().zip(&y1).map(|(n, a)| n - a).collect();
    let projections = factors
        .iter()
        .map(|&c| sample_size_projection(fit, per_bin_fdr, null, c, mode))
        .collect::<Result<Vec<_>>>()?;
    Ok(PowerReport {
        nonnull_counts_raw: nonnull_counts(fit, per_bin_fdr, false),
        nonnull_counts: y1,
        null_counts,
        efdr1: efdr1(fit, per_bin_fdr)?,
        g1_curve: nonnull_cdf(fit, per_bin_fdr, &default_t_grid())?,
        p1_hat: 1.0 - null.capped_p0(),
        projections,
    })
}
