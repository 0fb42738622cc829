//! Local and tail-area false discovery rates.
//!
//! Tail areas are taken over the binning range, for both the null and the
//! mixture: `Fdr(z) = p0 [F0(z) - F0(L)] / [F(z) - F(L)]` with `L` the lower
//! edge of the grid (mirrored for the right tail). The parametric mixture
//! c.d.f. carries no mass outside the grid, so the null has to be truncated
//! the same way for `Fdr` to be the `f`-weighted average of `fdr`.

use serde::{Deserialize, Serialize};

use crate::density::MixtureDensityFit;
use crate::error::{FdrError, Result};
use crate::null::NullModel;

pub const DEFAULT_THRESHOLD: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Side {
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TailMode {
    /// Denominator from the fitted mixture density.
    Parametric,
    /// Denominator from the empirical c.d.f. of the z-values.
    Empirical,
}

/// `fdr(z) = min(1, p0 f0(z) / f(z))` with the capped `p0`.
pub fn local_fdr_at(fit: &MixtureDensityFit, null: &NullModel, z: f64) -> f64 {
    (null.log_subdensity(z) - fit.log_density(z)).exp().min(1.0)
}

/// Uncapped `p0 f0(z) / f(z)` with the raw `p0`.
pub fn local_fdr_ratio(fit: &MixtureDensityFit, null: &NullModel, z: f64) -> f64 {
    (null.log_subdensity_raw(z) - fit.log_density(z)).exp()
}

/// Local fdr at every bin center.
pub fn local_fdr_bins(fit: &MixtureDensityFit, null: &NullModel) -> Vec<f64> {
    fit.centers.iter().map(|&x| local_fdr_at(fit, null, x)).collect()
}

/// Local fdr at every bin center and at every case.
pub fn local_fdr(fit: &MixtureDensityFit, null: &NullModel, z: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let cases = z.iter().map(|&v| local_fdr_at(fit, null, v)).collect();
    (local_fdr_bins(fit, null), cases)
}

/// Parametric tail `Fdr` at `z`, uncapped. `None` when the mixture tail
/// mass is zero.
pub fn tail_fdr_ratio(fit: &MixtureDensityFit, null: &NullModel, side: Side, z: f64) -> Option<f64> {
    let (lo, hi) = (fit.lower_edge(), fit.upper_edge());
    let z = z.clamp(lo, hi);
    let (num, den) = match side {
        Side::Left => (null.null_interval(lo, z), fit.cdf(z)),
        Side::Right => (null.null_interval(z, hi), fit.sf(z)),
    };
    (den > 0.0).then(|| null.capped_p0() * num / den)
}

/// Parametric tail `Fdr` at `z`, capped at 1.
pub fn tail_fdr_at(fit: &MixtureDensityFit, null: &NullModel, side: Side, z: f64) -> Option<f64> {
    tail_fdr_ratio(fit, null, side, z).map(|v| v.min(1.0))
}

/// Empirical tail `Fdr` at `z`: `N p0 F0(z) / #{z_i <= z}` (mirrored on the
/// right). `sorted` must be the full sample in ascending order. `None` when
/// no case lies in the tail.
pub fn empirical_tail_fdr_at(null: &NullModel, sorted: &[f64], side: Side, z: f64) -> Option<f64> {
    let n = sorted.len() as f64;
    let (null_tail, count) = match side {
        Side::Left => (null.null_cdf(z), sorted.partition_point(|&v| v <= z)),
        Side::Right => (1.0 - null.null_cdf(z), sorted.len() - sorted.partition_point(|&v| v < z)),
    };
    (count > 0).then(|| (n * null.capped_p0() * null_tail / count as f64).min(1.0))
}

/// Tail `Fdr` at every bin center. `sorted_z` is needed for the empirical mode.
pub fn tail_fdr(
    fit: &MixtureDensityFit,
    null: &NullModel,
    side: Side,
    mode: TailMode,
    sorted_z: &[f64],
) -> Vec<Option<f64>> {
    fit.centers
        .iter()
        .map(|&x| match mode {
            TailMode::Parametric => tail_fdr_at(fit, null, side, x),
            TailMode::Empirical => empirical_tail_fdr_at(null, sorted_z, side, x),
        })
        .collect()
}

/// Tail `Fdr` with both the null and the mixture replaced by bin sums,
/// `sum_{l <= k} p0 f0(x_l) / sum_{l <= k} f(x_l)`. This is the version whose
/// derivative the tail-area influence formula describes.
pub fn tail_fdr_discrete(fit: &MixtureDensityFit, null: &NullModel, side: Side) -> Vec<f64> {
    let k = fit.k();
    let f0: Vec<f64> = fit.centers.iter().map(|&x| null.log_subdensity_raw(x).exp()).collect();
    let mut out = vec![0.0; k];
    let (mut a, mut b) = (0.0, 0.0);
    let order: Box<dyn Iterator<Item = usize>> = match side {
        Side::Left => Box::new(0..k),
        Side::Right => Box::new((0..k).rev()),
    };
    for i in order {
        a += f0[i];
        b += fit.fitted_density[i];
        out[i] = a / b;
    }
    out
}

/// Invert the Lehmann log-odds relation
/// `log(fdr / (1 - fdr)) = log(Fdr / (1 - Fdr)) + log(1 / alpha)`.
pub fn lehmann_relation(tail: f64, alpha: f64) -> Result<f64> {
    if !(tail > 0.0 && tail < 1.0) {
        return Err(FdrError::InvalidInput(format!("Fdr = {tail} must lie in (0, 1)")));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(FdrError::InvalidInput(format!("alpha = {alpha} must lie in (0, 1]")));
    }
    let odds = tail / (1.0 - tail) / alpha;
    Ok(odds / (1.0 + odds))
}

/// `alpha` implied by a pair `(fdr, Fdr)` under the Lehmann alternative.
pub fn lehmann_alpha(local: f64, tail: f64) -> Option<f64> {
    if local > 0.0 && local < 1.0 && tail > 0.0 && tail < 1.0 {
        Some((tail / (1.0 - tail)) / (local / (1.0 - local)))
    } else {
        None
    }
}

/// Storey-style q-values: the smallest tail `Fdr` over all tail regions on
/// the case's side of zero that contain it. Cases with `z < 0` use the left
/// tail.
pub fn q_values(z: &[f64], left: &[f64], right: &[f64]) -> Vec<f64> {
    let mut q = vec![1.0; z.len()];
    let mut idx: Vec<usize> = (0..z.len()).collect();
    idx.sort_by(|&a, &b| z[a].total_cmp(&z[b]));
    // Running minimum from zero outward: a left-tail region (-inf, w]
    // contains z whenever w >= z.
    let mut run = f64::INFINITY;
    for &i in idx.iter().rev().filter(|&&i| z[i] < 0.0) {
        run = run.min(left[i]);
        q[i] = run.min(1.0);
    }
    run = f64::INFINITY;
    for &i in idx.iter().filter(|&&i| z[i] >= 0.0) {
        run = run.min(right[i]);
        q[i] = run.min(1.0);
    }
    q
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSummary {
    pub threshold: f64,
    pub n_left: usize,
    pub n_right: usize,
    /// Posterior odds of nonnull at the threshold, `(1 - t) / t`.
    pub posterior_odds: f64,
    /// Smallest Bayes factor `f1 / f0` consistent with the threshold when the
    /// prior odds are at most `1/9` (i.e. `p0 >= 0.9`).
    pub bayes_factor_bound: f64,
    /// Same bound with the estimated `p0`.
    pub bayes_factor_estimated: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdrReport {
    pub threshold: f64,
    pub per_bin_fdr: Vec<f64>,
    pub per_case_fdr: Vec<f64>,
    pub fdr_left: Vec<Option<f64>>,
    pub fdr_right: Vec<Option<f64>>,
    pub empirical_left: Vec<Option<f64>>,
    pub empirical_right: Vec<Option<f64>>,
    pub case_fdr_left: Vec<f64>,
    pub case_fdr_right: Vec<f64>,
    pub q_values: Vec<f64>,
    /// Case indices with `fdr <= threshold`, split by the sign of `z`.
    pub flagged_left: Vec<usize>,
    pub flagged_right: Vec<usize>,
    /// Lehmann `alpha` at the innermost flagged case of each tail.
    pub lehmann_alpha_left: Option<f64>,
    pub lehmann_alpha_right: Option<f64>,
    pub summary: ThresholdSummary,
}

/// Compute the full set of rates for a sample.
pub fn fdr_report(fit: &MixtureDensityFit, null: &NullModel, z: &[f64], threshold: f64) -> Result<FdrReport> {
    let mut sorted = z.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (per_bin_fdr, per_case_fdr) = local_fdr(fit, null, z);
    let case_fdr_left: Vec<f64> =
        z.iter().map(|&v| tail_fdr_at(fit, null, Side::Left, v).unwrap_or(1.0)).collect();
    let case_fdr_right: Vec<f64> =
        z.iter().map(|&v| tail_fdr_at(fit, null, Side::Right, v).unwrap_or(1.0)).collect();
    let q_values = q_values(z, &case_fdr_left, &case_fdr_right);
    let mut report = FdrReport {
        threshold,
        fdr_left: tail_fdr(fit, null, Side::Left, TailMode::Parametric, &sorted),
        fdr_right: tail_fdr(fit, null, Side::Right, TailMode::Parametric, &sorted),
        empirical_left: tail_fdr(fit, null, Side::Left, TailMode::Empirical, &sorted),
        empirical_right: tail_fdr(fit, null, Side::Right, TailMode::Empirical, &sorted),
        per_bin_fdr,
        per_case_fdr,
        case_fdr_left,
        case_fdr_right,
        q_values,
        flagged_left: Vec::new(),
        flagged_right: Vec::new(),
        lehmann_alpha_left: None,
        lehmann_alpha_right: None,
        summary: ThresholdSummary {
            threshold,
            n_left: 0,
            n_right: 0,
            posterior_odds: 0.0,
            bayes_factor_bound: 0.0,
            bayes_factor_estimated: 0.0,
        },
    };
    threshold_report(&mut report, z, null, threshold)?;
    Ok(report)
}

/// Flag cases with `fdr <= threshold` and fill in the threshold summary.
pub fn threshold_report(report: &mut FdrReport, z: &[f64], null: &NullModel, threshold: f64) -> Result<()> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(FdrError::InvalidConfig(format!("threshold {threshold} must lie in (0, 1)")));
    }
    report.threshold = threshold;
    report.flagged_left.clear();
    report.flagged_right.clear();
    for (i, (&v, &f)) in z.iter().zip(&report.per_case_fdr).enumerate() {
        if f <= threshold {
            if v < 0.0 {
                report.flagged_left.push(i);
            } else {
                report.flagged_right.push(i);
            }
        }
    }
    let boundary = |idx: &[usize], tails: &[f64], left: bool| {
        let inner = idx.iter().copied().max_by(|&a, &b| {
            let (x, y) = if left { (z[a], z[b]) } else { (z[b], z[a]) };
            x.total_cmp(&y)
        })?;
        lehmann_alpha(report.per_case_fdr[inner], tails[inner])
    };
    report.lehmann_alpha_left = boundary(&report.flagged_left, &report.case_fdr_left, true);
    report.lehmann_alpha_right = boundary(&report.flagged_right, &report.case_fdr_right, false);
    let odds = (1.0 - threshold) / threshold;
    let p0 = null.capped_p0();
    report.summary = ThresholdSummary {
        threshold,
        n_left: report.flagged_left.len(),
        n_right: report.flagged_right.len(),
        posterior_odds: odds,
        bayes_factor_bound: odds * 0.9 / 0.1,
        bayes_factor_estimated: if p0 < 1.0 { odds * p0 / (1.0 - p0) } else { f64::INFINITY },
    };
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::null::{NullMeta, NullMethod};

    fn theoretical(p0: f64) -> NullModel {
        NullModel {
            delta0: 0.0,
            sigma0: 1.0,
            p0,
            method: NullMethod::Theoretical,
            meta: NullMeta::Central { bins: vec![], central_fraction: 0.25, coefficients: vec![] },
            warnings: vec![],
        }
    }

    #[test]
    fn lehmann_examples() {
        assert!((lehmann_relation(0.1, 1.0).unwrap() - 0.1).abs() < 1e-15);
        assert!((lehmann_relation(0.1, 0.5).unwrap() - 2.0 / 11.0).abs() < 1e-15);
        assert!(lehmann_relation(0.0, 0.5).is_err());
        assert!(lehmann_relation(0.3, 0.0).is_err());
        let a = lehmann_alpha(2.0 / 11.0, 0.1).unwrap();
        assert!((a - 0.5).abs() < 1e-14);
    }

    #[test]
    fn empirical_tail_counts_cases() {
        let null = theoretical(0.932);
        let mut z: Vec<f64> = (0..6005).map(|i| -3.0 + 6.0 * i as f64 / 6005.0).collect();
        z.extend((0..28).map(|i| 3.3 + 0.05 * i as f64));
        z.sort_by(f64::total_cmp);
        let v = empirical_tail_fdr_at(&null, &z, Side::Right, 3.3).unwrap();
        let expect = 6033.0 * 0.932 * crate::special::norm_sf(3.3) / 28.0;
        assert!((v - expect).abs() < 1e-12);
        assert!((v - 0.097).abs() < 1e-3);
        assert!(empirical_tail_fdr_at(&null, &z, Side::Right, 9.0).is_none());
    }

    #[test]
    fn q_values_are_monotone_in_each_tail() {
        let z = [-3.0, -2.0, -1.0, 0.5, 2.0, 3.0];
        let left = [0.2, 0.1, 0.5, 1.0, 1.0, 1.0];
        let right = [1.0, 1.0, 1.0, 0.6, 0.3, 0.4];
        let q = q_values(&z, &left, &right);
        assert_eq!(q, vec![0.1, 0.1, 0.5, 0.6, 0.3, 0.3]);
    }
}
