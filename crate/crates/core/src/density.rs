//! Mixture density estimation by Poisson regression on histogram counts
//! (Lindsey's method).
//!
//! With `nu_k = exp(X beta)_k` the expected count in bin `k`, maximizing the
//! Poisson likelihood `sum_k y_k log nu_k - nu_k` gives an exponential-family
//! density `f(z) = exp(basis(z) . beta) / (N * width)`; the intercept absorbs
//! both the normalizing constant and the `N * width` offset.

use log::debug;
use nalgebra::{DMatrix, DVector};

use crate::basis::{Basis, BasisSpec};
use crate::error::{FdrError, Result, Stage};
use crate::ingest::BinnedCounts;
use crate::quad;

pub const MAX_IRLS_ITER: usize = 200;
/// Convergence requires every score component below this.
pub const SCORE_TOL: f64 = 1e-8;
/// ... and a relative change in the objective below this.
pub const REL_OBJECTIVE_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct MixtureDensityFit {
    pub basis: Basis,
    pub coefficients: DVector<f64>,
    /// `K x m` design, row `k` is the basis at `x_k`.
    pub design: DMatrix<f64>,
    pub centers: Vec<f64>,
    pub counts: Vec<f64>,
    pub width: f64,
    pub n_total: f64,
    /// `f(x_k)`.
    pub fitted_density: Vec<f64>,
    /// `nu_k = N * width * f(x_k)`.
    pub expected_counts: Vec<f64>,
    /// `G = X' diag(nu) X`.
    pub information: DMatrix<f64>,
    pub converged: bool,
    pub deviance: f64,
    pub iterations: usize,
    pub deviance_trace: Vec<f64>,
    /// Largest absolute component of `X'(y - nu)` at the returned estimate.
    pub max_score: f64,
    log_offset: f64,
    /// Cumulative density mass at each bin's lower edge, plus the total at the end.
    edge_cdf: Vec<f64>,
}

/// A density value with a flag for evaluation outside the fitted grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityValue {
    pub value: f64,
    pub extrapolated: bool,
}

fn objective(y: &[f64], eta: &DVector<f64>) -> f64 {
    // Negative Poisson log-likelihood without the y-only terms.
    eta.iter().zip(y).map(|(e, yk)| e.exp() - yk * e).sum()
}

fn poisson_deviance(y: &[f64], nu: &[f64]) -> f64 {
    2.0 * y
        .iter()
        .zip(nu)
        .map(|(&yk, &nk)| {
            if yk > 0.0 {
                yk * (yk / nk).ln() - (yk - nk)
            } else {
                nk - yk
            }
        })
        .sum::<f64>()
}

/// Fit the mixture density to binned counts.
pub fn fit_mixture_density(counts: &BinnedCounts, spec: BasisSpec) -> Result<MixtureDensityFit> {
    let basis = Basis::for_counts(spec, counts)?;
    fit_with_basis(counts, basis)
}

/// Fit with a basis whose transform and knots are already fixed.
pub fn fit_with_basis(counts: &BinnedCounts, basis: Basis) -> Result<MixtureDensityFit> {
    let m = basis.n_columns();
    let positive = counts.counts.iter().filter(|&&c| c > 0.0).count();
    if positive < m {
        return Err(FdrError::InvalidInput(format!(
            "{positive} nonempty bins for a {m}-parameter density"
        )));
    }
    if !(counts.n_total > 0.0) {
        return Err(FdrError::InvalidInput("histogram has no mass".into()));
    }
    let x = basis.design(&counts.centers)?;
    let y = &counts.counts;
    let k = y.len();
    let yv = DVector::from_column_slice(y);

    // Start from a weighted least-squares fit to log(y + 1/2).
    let mu0: Vec<f64> = y.iter().map(|v| v.max(0.0) + 0.5).collect();
    let work = DVector::from_iterator(k, mu0.iter().zip(y).map(|(m, v)| m.ln() + (v - m) / m));
    let mut beta = weighted_ls(&x, &DVector::from_vec(mu0), &work)?;

    let mut eta = &x * &beta;
    let mut obj = objective(y, &eta);
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut max_score = f64::INFINITY;
    let mut rel_change = f64::INFINITY;

    for it in 0..MAX_IRLS_ITER {
        iterations = it + 1;
        let nu = eta.map(f64::exp);
        let score = x.tr_mul(&(&yv - &nu));
        max_score = score.amax();
        let dev = poisson_deviance(y, nu.as_slice());
        trace.push(dev);
        debug!("irls iter {it}: deviance {dev:.10e} max score {max_score:.3e}");
        if !dev.is_finite() {
            break;
        }
        if max_score < SCORE_TOL && rel_change < REL_OBJECTIVE_TOL {
            converged = true;
            break;
        }
        // Newton step for the canonical link: G delta = X'(y - nu).
        let step = weighted_ls(&x, &nu, &(&yv - &nu).component_div(&nu))?;
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand = &beta + &step * t;
            let cand_eta = &x * &cand;
            let cand_obj = objective(y, &cand_eta);
            if cand_obj.is_finite() && cand_obj <= obj + 1e-12 * obj.abs().max(1.0) {
                rel_change = (obj - cand_obj).abs() / obj.abs().max(1.0);
                beta = cand;
                eta = cand_eta;
                obj = cand_obj;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            // No descent left at machine precision.
            if max_score < SCORE_TOL {
                converged = true;
            }
            break;
        }
    }

    let nu = eta.map(f64::exp);
    if !nu.iter().all(|v| v.is_finite() && *v > 0.0) || max_score > 1e-4 * counts.n_total.max(1.0) {
        return Err(FdrError::NonConvergence {
            stage: Stage::Density,
            iterations,
            last_objective: trace.last().copied().unwrap_or(f64::NAN),
            trace,
            last_iterate: beta.iter().copied().collect(),
        });
    }
    if !converged {
        log::warn!(
            "density fit stopped after {iterations} iterations with max score {max_score:.3e}"
        );
    }

    let information = weighted_gram(&x, &nu);
    let log_offset = (counts.n_total * counts.width).ln();
    let deviance = trace.last().copied().unwrap_or(f64::NAN);
    let mut fit = MixtureDensityFit {
        basis,
        coefficients: beta,
        design: x,
        centers: counts.centers.clone(),
        counts: y.clone(),
        width: counts.width,
        n_total: counts.n_total,
        fitted_density: Vec::new(),
        expected_counts: nu.iter().copied().collect(),
        information,
        converged,
        deviance,
        iterations,
        deviance_trace: trace,
        max_score,
        log_offset,
        edge_cdf: Vec::new(),
    };
    fit.fitted_density = fit.centers.iter().map(|&z| fit.density(z)).collect();
    fit.edge_cdf = fit.build_edge_cdf();
    Ok(fit)
}

/// Solve the weighted least-squares problem `min || W^{1/2} (r - X b) ||`
/// through a QR factorization of `W^{1/2} X`.
fn weighted_ls(x: &DMatrix<f64>, w: &DVector<f64>, r: &DVector<f64>) -> Result<DVector<f64>> {
    let sw = w.map(f64::sqrt);
    let mut xw = x.clone();
    for (i, s) in sw.iter().enumerate() {
        xw.row_mut(i).scale_mut(*s);
    }
    let rw = r.component_mul(&sw);
    let qr = xw.qr();
    let q = qr.q();
    let rr = qr.r();
    let qtb = q.tr_mul(&rw);
    let diag_max = rr.diagonal().amax();
    if rr.diagonal().iter().any(|d| d.abs() <= 1e-13 * diag_max) {
        return Err(FdrError::Conditioning {
            stage: Stage::Density,
            detail: "weighted Gram matrix is singular".into(),
        });
    }
    rr.solve_upper_triangular(&qtb).ok_or_else(|| FdrError::Conditioning {
        stage: Stage::Density,
        detail: "triangular solve failed".into(),
    })
}

/// `X' diag(w) X`.
pub(crate) fn weighted_gram(x: &DMatrix<f64>, w: &DVector<f64>) -> DMatrix<f64> {
    let mut xw = x.clone();
    for (i, wi) in w.iter().enumerate() {
        xw.row_mut(i).scale_mut(*wi);
    }
    let g = x.tr_mul(&xw);
    (&g + g.transpose()) * 0.5
}

impl MixtureDensityFit {
    /// Number of bins.
    pub fn k(&self) -> usize {
        self.centers.len()
    }

    pub fn lower_edge(&self) -> f64 {
        self.centers[0] - 0.5 * self.width
    }

    pub fn upper_edge(&self) -> f64 {
        self.centers[self.k() - 1] + 0.5 * self.width
    }

    /// `log f(z)`.
    pub fn log_density(&self, z: f64) -> f64 {
        let mut row = vec![0.0; self.basis.n_columns()];
        self.basis.row_into(z, &mut row);
        let eta: f64 = row.iter().zip(self.coefficients.iter()).map(|(a, b)| a * b).sum();
        eta - self.log_offset
    }

    /// `f(z)`.
    pub fn density(&self, z: f64) -> f64 {
        self.log_density(z).exp()
    }

    /// `f(z)` with an extrapolation flag for `z` more than one bin width
    /// outside the grid of centers.
    pub fn eval_density(&self, z: f64) -> DensityValue {
        let extrapolated =
            z < self.centers[0] - self.width || z > self.centers[self.k() - 1] + self.width;
        DensityValue { value: self.density(z), extrapolated }
    }

    /// `log f(x_k)` for every bin.
    pub fn log_fitted(&self) -> Vec<f64> {
        self.fitted_density.iter().map(|f| f.ln()).collect()
    }

    fn build_edge_cdf(&self) -> Vec<f64> {
        let lo = self.lower_edge();
        let mut cdf = Vec::with_capacity(self.k() + 1);
        let mut acc = 0.0;
        cdf.push(0.0);
        for k in 0..self.k() {
            let a = lo + k as f64 * self.width;
            acc += quad::integrate(|z| self.density(z), a, a + self.width, 1e-14);
            cdf.push(acc);
        }
        cdf
    }

    /// Parametric mixture c.d.f. `F(z)`, taking the mass below the grid as 0.
    pub fn cdf(&self, z: f64) -> f64 {
        let lo = self.lower_edge();
        if z <= lo {
            return 0.0;
        }
        if z >= self.upper_edge() {
            return self.edge_cdf[self.k()];
        }
        let k = (((z - lo) / self.width).floor() as usize).min(self.k() - 1);
        let a = lo + k as f64 * self.width;
        self.edge_cdf[k] + quad::integrate(|t| self.density(t), a, z, 1e-14)
    }

    /// Upper tail `1 - F(z)` over the grid, i.e. the mass between `z` and the upper edge.
    pub fn sf(&self, z: f64) -> f64 {
        (self.edge_cdf[self.k()] - self.cdf(z)).max(0.0)
    }

    /// Total mass on the grid (within quadrature error of 1).
    pub fn total_mass(&self) -> f64 {
        self.edge_cdf[self.k()]
    }

    /// `X'(y - nu)`.
    pub fn score(&self) -> DVector<f64> {
        let r = DVector::from_iterator(
            self.k(),
            self.counts.iter().zip(&self.expected_counts).map(|(y, n)| y - n),
        );
        self.design.tr_mul(&r)
    }

    /// `G^{-1}`.
    pub fn information_inverse(&self) -> Result<DMatrix<f64>> {
        self.information
            .clone()
            .cholesky()
            .map(|c| c.inverse())
            .ok_or_else(|| FdrError::Conditioning {
                stage: Stage::Density,
                detail: "information matrix is not positive definite".into(),
            })
    }
}

/// Same as [`fit_mixture_density`] when a caller wants to fail on a stalled fit.
pub fn fit_converged(counts: &BinnedCounts, spec: BasisSpec) -> Result<MixtureDensityFit> {
    let fit = fit_mixture_density(counts, spec)?;
    if !fit.converged {
        return Err(FdrError::NonConvergence {
            stage: Stage::Density,
            iterations: fit.iterations,
            last_objective: fit.deviance,
            trace: fit.deviance_trace.clone(),
            last_iterate: fit.coefficients.iter().copied().collect(),
        });
    }
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::special::norm_pdf;

    fn normal_hist(n: f64, k: usize, lo: f64, hi: f64) -> BinnedCounts {
        let w = (hi - lo) / (k - 1) as f64;
        let counts = (0..k)
            .map(|i| (n * w * norm_pdf(lo + i as f64 * w)).round())
            .collect();
        BinnedCounts::from_counts(lo, w, counts).unwrap()
    }

    #[test]
    fn score_equations_and_normalization() {
        let h = normal_hist(5000.0, 60, -4.0, 4.0);
        for spec in [BasisSpec::polynomial(7), BasisSpec::natural_spline(7)] {
            let fit = fit_mixture_density(&h, spec).unwrap();
            assert!(fit.converged, "{spec:?} max score {}", fit.max_score);
            assert!(fit.score().amax() < 1e-6);
            let norm: f64 = fit.fitted_density.iter().sum::<f64>() * fit.width;
            assert!((norm - 1.0).abs() < 1e-3);
            assert!(fit.fitted_density.iter().all(|&f| f > 0.0));
            assert!(fit.information.clone().cholesky().is_some());
        }
    }

    #[test]
    fn density_matches_fitted_values_at_nodes() {
        let h = normal_hist(3000.0, 41, -4.0, 4.0);
        let fit = fit_mixture_density(&h, BasisSpec::natural_spline(5)).unwrap();
        for (k, &x) in fit.centers.iter().enumerate() {
            assert_eq!(fit.density(x), fit.fitted_density[k]);
        }
        assert!(!fit.eval_density(0.0).extrapolated);
        assert!(fit.eval_density(4.25).extrapolated);
    }

    #[test]
    fn cdf_limits_and_symmetry() {
        let h = normal_hist(10000.0, 41, -4.0, 4.0);
        let fit = fit_mixture_density(&h, BasisSpec::polynomial(4)).unwrap();
        assert_eq!(fit.cdf(-10.0), 0.0);
        assert!((fit.cdf(10.0) - 1.0).abs() < 1e-3);
        assert!((fit.cdf(0.0) - 0.5).abs() < 1e-3);
    }

    #[test]
    fn too_few_nonempty_bins() {
        let mut c = vec![0.0; 20];
        c[3] = 5.0;
        c[4] = 9.0;
        let h = BinnedCounts::from_counts(-2.0, 0.2, c).unwrap();
        let err = fit_mixture_density(&h, BasisSpec::polynomial(3)).unwrap_err();
        assert!(matches!(err, FdrError::InvalidInput(_)));
    }
}
