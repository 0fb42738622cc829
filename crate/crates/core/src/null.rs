//! Null distribution estimation: the theoretical N(0, 1) null, central
//! matching, and truncated-normal maximum likelihood.
//!
//! All three produce a normal null `N(delta0, sigma0^2)` and a null
//! proportion `p0`. A raw `p0 > 1` is kept (it says something about the
//! histogram) but everything downstream uses [`NullModel::capped_p0`].

use log::warn;
use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::density::MixtureDensityFit;
use crate::error::{FdrError, Result, Stage};
use crate::ingest::{BinnedCounts, ZSample};
use crate::special::{norm_interval, norm_log_pdf_ms, norm_pdf, LN_SQRT_2PI};

/// Default fraction trimmed from each side of the histogram to pick the
/// central bins (the central 50% of the counts are kept).
pub const DEFAULT_CENTRAL_FRACTION: f64 = 0.25;
/// Default half-width of the zero interval for MLE fitting.
pub const DEFAULT_X0: f64 = 2.0;
pub const MIN_CENTRAL_BINS: usize = 5;
pub const MIN_MLE_CASES: f64 = 25.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NullMethod {
    Theoretical,
    CentralMatching,
    Mle,
}

impl std::fmt::Display for NullMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            NullMethod::Theoretical => "theoretical",
            NullMethod::CentralMatching => "central-matching",
            NullMethod::Mle => "mle",
        })
    }
}

/// How a null model was obtained; the accuracy formulas need this.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum NullMeta {
    /// Least-squares fit of `log f0+` to `log f` over the central bins.
    /// `coefficients` are `(b0, b1, b2)` for central matching and the single
    /// intercept for the theoretical null.
    Central {
        bins: Vec<usize>,
        central_fraction: f64,
        coefficients: Vec<f64>,
    },
    Mle {
        x0: f64,
        /// Cases inside `[-x0, x0]`.
        n0: f64,
        n_total: f64,
        /// Mean and mean square of the cases inside `[-x0, x0]`.
        y1: f64,
        y2: f64,
        iterations: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullModel {
    pub delta0: f64,
    pub sigma0: f64,
    /// Raw estimate; may exceed 1.
    pub p0: f64,
    pub method: NullMethod,
    pub meta: NullMeta,
    pub warnings: Vec<String>,
}

impl NullModel {
    pub fn capped_p0(&self) -> f64 {
        self.p0.min(1.0)
    }

    /// `log(p0 * f0(z))` with the capped `p0`.
    pub fn log_subdensity(&self, z: f64) -> f64 {
        self.capped_p0().ln() + norm_log_pdf_ms(z, self.delta0, self.sigma0)
    }

    /// `log(p0 * f0(z))` with the raw `p0`.
    pub fn log_subdensity_raw(&self, z: f64) -> f64 {
        self.p0.ln() + norm_log_pdf_ms(z, self.delta0, self.sigma0)
    }

    /// Null c.d.f. `F0(z)`.
    pub fn null_cdf(&self, z: f64) -> f64 {
        crate::special::norm_cdf((z - self.delta0) / self.sigma0)
    }

    /// Null probability of `[a, b]`.
    pub fn null_interval(&self, a: f64, b: f64) -> f64 {
        norm_interval((a - self.delta0) / self.sigma0, (b - self.delta0) / self.sigma0)
    }

    fn finish(mut self) -> Self {
        if self.p0 > 1.0 {
            let msg = format!(
                "{} null gives p0 = {:.4} > 1; capped at 1 for fdr computation",
                self.method, self.p0
            );
            warn!("{msg}");
            self.warnings.push(msg);
        }
        self
    }
}

/// Central bins: those whose centers lie between the `fraction` and
/// `1 - fraction` count-weighted quantiles.
pub fn central_bins(counts: &[f64], centers: &[f64], fraction: f64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction < 0.5) {
        return Err(FdrError::InvalidConfig(format!(
            "central fraction {fraction} must lie in (0, 0.5)"
        )));
    }
    let total: f64 = counts.iter().map(|c| c.max(0.0)).sum();
    let quantile = |q: f64| {
        let mut acc = 0.0;
        for (x, y) in centers.iter().zip(counts) {
            acc += y.max(0.0);
            if acc >= q * total {
                return *x;
            }
        }
        centers[centers.len() - 1]
    };
    let lo = quantile(fraction);
    let hi = quantile(1.0 - fraction);
    let bins: Vec<usize> = centers
        .iter()
        .enumerate()
        .filter(|(_, &x)| x >= lo && x <= hi)
        .map(|(k, _)| k)
        .collect();
    if bins.len() < MIN_CENTRAL_BINS {
        return Err(FdrError::InvalidConfig(format!(
            "only {} central bins between z = {lo:.3} and {hi:.3}; need {MIN_CENTRAL_BINS}",
            bins.len()
        )));
    }
    Ok(bins)
}

/// Map the quadratic `log f0+(z) = b0 + b1 z + b2 z^2` to `(delta0, sigma0, p0)`.
pub fn quadratic_to_null(b: [f64; 3]) -> Result<(f64, f64, f64)> {
    let [b0, b1, b2] = b;
    if !(b2 < 0.0) {
        return Err(FdrError::NoNullPeak { beta2: b2 });
    }
    let sigma0 = (-2.0 * b2).powf(-0.5);
    let delta0 = b1 * sigma0 * sigma0;
    let log_p0 =
        b0 + 0.5 * (delta0 * delta0 / (sigma0 * sigma0) + (2.0 * std::f64::consts::PI * sigma0 * sigma0).ln());
    Ok((delta0, sigma0, log_p0.exp()))
}

fn ols(x0: &DMatrix<f64>, target: &DVector<f64>) -> Result<DVector<f64>> {
    let qr = x0.clone().qr();
    let r = qr.r();
    let qtb = qr.q().tr_mul(target);
    r.solve_upper_triangular(&qtb).ok_or_else(|| FdrError::Conditioning {
        stage: Stage::Null,
        detail: "central least-squares system is singular".into(),
    })
}

/// Central matching with the central bins chosen from `central_fraction`.
pub fn central_matching(fit: &MixtureDensityFit, central_fraction: f64) -> Result<NullModel> {
    let bins = central_bins(&fit.counts, &fit.centers, central_fraction)?;
    central_matching_on(fit, &bins, central_fraction)
}

/// Central matching over an explicit set of central bins.
pub fn central_matching_on(
    fit: &MixtureDensityFit,
    bins: &[usize],
    central_fraction: f64,
) -> Result<NullModel> {
    if bins.len() < 3 {
        return Err(FdrError::InvalidConfig("central matching needs at least 3 bins".into()));
    }
    let x0 = DMatrix::from_fn(bins.len(), 3, |i, j| fit.centers[bins[i]].powi(j as i32));
    let target = DVector::from_iterator(bins.len(), bins.iter().map(|&k| fit.fitted_density[k].ln()));
    let g = ols(&x0, &target)?;
    let coef = [g[0], g[1], g[2]];
    let (delta0, sigma0, p0) = quadratic_to_null(coef)?;
    Ok(NullModel {
        delta0,
        sigma0,
        p0,
        method: NullMethod::CentralMatching,
        meta: NullMeta::Central {
            bins: bins.to_vec(),
            central_fraction,
            coefficients: coef.to_vec(),
        },
        warnings: Vec::new(),
    }
    .finish())
}

/// Theoretical N(0, 1) null with `p0` from the central bins: the
/// central-matching regression with slope and curvature fixed at the N(0, 1)
/// values, leaving only the intercept free.
pub fn theoretical_null(fit: &MixtureDensityFit, central_fraction: f64) -> Result<NullModel> {
    let bins = central_bins(&fit.counts, &fit.centers, central_fraction)?;
    Ok(theoretical_null_on(fit, &bins, central_fraction))
}

pub fn theoretical_null_on(fit: &MixtureDensityFit, bins: &[usize], central_fraction: f64) -> NullModel {
    let log_p0 = bins
        .iter()
        .map(|&k| {
            let x = fit.centers[k];
            fit.fitted_density[k].ln() + 0.5 * x * x + LN_SQRT_2PI
        })
        .sum::<f64>()
        / bins.len() as f64;
    NullModel {
        delta0: 0.0,
        sigma0: 1.0,
        p0: log_p0.exp(),
        method: NullMethod::Theoretical,
        meta: NullMeta::Central {
            bins: bins.to_vec(),
            central_fraction,
            coefficients: vec![log_p0],
        },
        warnings: Vec::new(),
    }
    .finish()
}

/// Moments of the standard normal and of `N(delta0, sigma0^2)` truncated to
/// `[-x0, x0]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncatedMoments {
    /// Standardized truncation bounds.
    pub a: f64,
    pub b: f64,
    /// `h[p] = int_a^b z^p phi(z) dz`, `p = 0..=4`.
    pub h: [f64; 5],
    /// `e[p] = E[Z^p | -x0 <= Z <= x0]` for `Z ~ N(delta0, sigma0^2)`; `e[0] = 1`.
    pub e: [f64; 5],
}

pub fn truncated_moments(delta0: f64, sigma0: f64, x0: f64) -> TruncatedMoments {
    let a = (-x0 - delta0) / sigma0;
    let b = (x0 - delta0) / sigma0;
    let (pa, pb) = (norm_pdf(a), norm_pdf(b));
    let mut h = [0.0; 5];
    h[0] = norm_interval(a, b);
    h[1] = pa - pb;
    for p in 2..5 {
        let q = (p - 1) as i32;
        h[p] = -(b.powi(q) * pb - a.powi(q) * pa) + (p - 1) as f64 * h[p - 2];
    }
    let mut e = [0.0; 5];
    for p in 0..5 {
        // E[(delta0 + sigma0 Z)^p] over the standardized truncation.
        let mut s = 0.0;
        for j in 0..=p {
            s += binomial(p, j) * delta0.powi((p - j) as i32) * sigma0.powi(j as i32) * h[j];
        }
        e[p] = s / h[0];
    }
    TruncatedMoments { a, b, h, e }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

impl TruncatedMoments {
    /// Covariance of `(Z, Z^2)` for one truncated observation.
    pub fn sufficient_cov(&self) -> Matrix2<f64> {
        let e = &self.e;
        let c12 = e[3] - e[1] * e[2];
        Matrix2::new(e[2] - e[1] * e[1], c12, c12, e[4] - e[2] * e[2])
    }
}

pub const MLE_MAX_ITER: usize = 200;
pub const MLE_TOL: f64 = 1e-10;

/// Truncated-normal MLE from raw z-values.
pub fn mle_fit(z: &ZSample, x0: f64) -> Result<NullModel> {
    let inside: Vec<f64> = z.values().iter().copied().filter(|v| v.abs() <= x0).collect();
    let w = vec![1.0; inside.len()];
    mle_fit_weighted(&inside, &w, z.len() as f64, x0)
}

/// Truncated-normal MLE treating each bin's count as located at its center.
pub fn mle_fit_binned(counts: &BinnedCounts, x0: f64) -> Result<NullModel> {
    let (pts, w): (Vec<f64>, Vec<f64>) = counts
        .centers
        .iter()
        .zip(&counts.counts)
        .filter(|(x, _)| x.abs() <= x0)
        .map(|(x, y)| (*x, *y))
        .unzip();
    mle_fit_weighted(&pts, &w, counts.n_total, x0)
}

/// Weighted truncated-normal MLE. `points` must lie in `[-x0, x0]`;
/// `n_total` is the number of cases overall.
///
/// The truncated normal is a two-parameter exponential family in the natural
/// parameters `(delta0 / sigma0^2, -1 / (2 sigma0^2))` with sufficient
/// statistics `(z, z^2)`, so Newton's method in those coordinates solves the
/// moment equations `E(delta0, sigma0) = (Y1, Y2)`.
pub fn mle_fit_weighted(points: &[f64], weights: &[f64], n_total: f64, x0: f64) -> Result<NullModel> {
    if !(x0 > 0.0) {
        return Err(FdrError::InvalidConfig(format!("x0 = {x0} must be positive")));
    }
    let n0: f64 = weights.iter().sum();
    if n0 < MIN_MLE_CASES {
        return Err(FdrError::InvalidInput(format!(
            "{n0} cases inside [-{x0}, {x0}]; MLE fitting needs at least {MIN_MLE_CASES}"
        )));
    }
    if points.iter().any(|p| p.abs() > x0) {
        return Err(FdrError::InvalidInput("MLE point outside [-x0, x0]".into()));
    }
    let y1 = points.iter().zip(weights).map(|(z, w)| w * z).sum::<f64>() / n0;
    let y2 = points.iter().zip(weights).map(|(z, w)| w * z * z).sum::<f64>() / n0;
    let ybar = Vector2::new(y1, y2);

    let loglik = |d: f64, s: f64| {
        // Mean log-likelihood per case inside the interval.
        let m = truncated_moments(d, s, x0);
        let v = (y2 - 2.0 * d * y1 + d * d) / (s * s);
        -0.5 * v - LN_SQRT_2PI - s.ln() - m.h[0].ln()
    };
    let natural = |d: f64, s: f64| Vector2::new(d / (s * s), -0.5 / (s * s));
    let from_natural = |eta: Vector2<f64>| {
        let s2 = -0.5 / eta[1];
        (eta[0] * s2, s2.sqrt())
    };

    let mut delta = y1;
    let mut sigma = (y2 - y1 * y1).max(1e-12).sqrt();
    let mut ll = loglik(delta, sigma);
    let mut trace = vec![-ll];
    let mut converged = false;
    let mut iterations = 0;
    for it in 0..MLE_MAX_ITER {
        iterations = it + 1;
        let m = truncated_moments(delta, sigma, x0);
        let grad = ybar - Vector2::new(m.e[1], m.e[2]);
        let cov = m.sufficient_cov();
        let step = cov.try_inverse().ok_or_else(|| FdrError::Conditioning {
            stage: Stage::Null,
            detail: "truncated-normal covariance is singular".into(),
        })? * grad;
        let eta = natural(delta, sigma);
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..50 {
            let cand = eta + step * t;
            if cand[1] < 0.0 {
                let (d, s) = from_natural(cand);
                let l = loglik(d, s);
                if l.is_finite() && l >= ll - 1e-15 * ll.abs() {
                    let change = (d - delta).abs().max((s - sigma).abs());
                    delta = d;
                    sigma = s;
                    ll = l;
                    moved = true;
                    if change < MLE_TOL {
                        converged = true;
                    }
                    break;
                }
            }
            t *= 0.5;
        }
        trace.push(-ll);
        if sigma < 1e-3 {
            return Err(FdrError::DegenerateNull { sigma0: sigma });
        }
        if converged {
            break;
        }
        if !moved {
            // Stalled at machine precision; accept if the moment equations hold.
            converged = grad.amax() < 1e-8;
            break;
        }
    }
    if !converged {
        return Err(FdrError::NonConvergence {
            stage: Stage::Null,
            iterations,
            last_objective: -ll,
            trace,
            last_iterate: vec![delta, sigma],
        });
    }
    let m = truncated_moments(delta, sigma, x0);
    let theta = n0 / n_total;
    Ok(NullModel {
        delta0: delta,
        sigma0: sigma,
        p0: theta / m.h[0],
        method: NullMethod::Mle,
        meta: NullMeta::Mle { x0, n0, n_total, y1, y2, iterations },
        warnings: Vec::new(),
    }
    .finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::BasisSpec;
    use crate::density::fit_mixture_density;

    #[test]
    fn moments_odd_symmetry_and_h0() {
        let m = truncated_moments(0.0, 1.0, 2.0);
        assert!(m.h[1].abs() < 1e-16);
        assert!(m.h[3].abs() < 1e-15);
        assert!((m.h[0] - 0.954_499_736_103_641_6).abs() < 1e-14);
        assert_eq!(m.e[0], 1.0);
    }

    #[test]
    fn quadratic_map_round_trip() {
        let (d, s, p): (f64, f64, f64) = (-0.3, 0.8, 0.93);
        let b2 = -0.5 / (s * s);
        let b1 = d / (s * s);
        let b0 = p.ln() - 0.5 * (d * d / (s * s) + (2.0 * std::f64::consts::PI * s * s).ln());
        let (d2, s2, p2) = quadratic_to_null([b0, b1, b2]).unwrap();
        assert!((d - d2).abs() < 1e-14 && (s - s2).abs() < 1e-14 && (p - p2).abs() < 1e-14);
        assert!(matches!(quadratic_to_null([0.0, 0.0, 0.1]), Err(FdrError::NoNullPeak { .. })));
    }

    fn pure_null_fit(p0: f64) -> MixtureDensityFit {
        // Counts whose Poisson fit with a quadratic basis is exactly p0 * phi on
        // the central part and the same shape elsewhere.
        let k = 41;
        let w = 0.2;
        let counts: Vec<f64> = (0..k)
            .map(|i| {
                let x = -4.0 + i as f64 * w;
                10_000.0 * w * norm_pdf(x)
            })
            .collect();
        let h = BinnedCounts::from_counts(-4.0, w, counts).unwrap();
        let mut fit = fit_mixture_density(&h, BasisSpec::polynomial(2)).unwrap();
        // Replace the fitted values by exact p0 * phi.
        fit.fitted_density = fit.centers.iter().map(|&x| p0 * norm_pdf(x)).collect();
        fit
    }

    #[test]
    fn central_matching_recovers_exact_quadratic() {
        let fit = pure_null_fit(0.87);
        let n = central_matching(&fit, DEFAULT_CENTRAL_FRACTION).unwrap();
        assert!(n.delta0.abs() < 1e-12, "{}", n.delta0);
        assert!((n.sigma0 - 1.0).abs() < 1e-12);
        assert!((n.p0 - 0.87).abs() < 1e-12);
        let t = theoretical_null(&fit, DEFAULT_CENTRAL_FRACTION).unwrap();
        assert!((t.p0 - 0.87).abs() < 1e-12);
        assert_eq!((t.delta0, t.sigma0), (0.0, 1.0));
    }

    #[test]
    fn p0_above_one_warns() {
        let fit = pure_null_fit(1.18);
        let t = theoretical_null(&fit, DEFAULT_CENTRAL_FRACTION).unwrap();
        assert!((t.p0 - 1.18).abs() < 1e-12);
        assert_eq!(t.capped_p0(), 1.0);
        assert_eq!(t.warnings.len(), 1);
    }

    #[test]
    fn too_few_central_bins() {
        let centers: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let mut counts = vec![0.0; 20];
        counts[10] = 100.0;
        assert!(matches!(
            central_bins(&counts, &centers, 0.25),
            Err(FdrError::InvalidConfig(_))
        ));
    }

    #[test]
    fn mle_requires_enough_cases() {
        let z = ZSample::new(vec![0.1; 10]).unwrap();
        assert!(mle_fit(&z, 2.0).is_err());
    }
}
