//! Delta-method accuracy for log fdr, log Fdr and the null parameters.
//!
//! Every estimate here is a smooth function of the histogram counts `y`, so
//! its standard error follows from the influence matrix `d estimate / dy`
//! and `cov(y) = diag(nu)`. Both the null subdensity and the mixture density
//! are normalized by `N = sum(y)`; that common `-1/N` term cancels in every
//! fdr ratio and is left out of the log-density influences below.

use log::warn;
use nalgebra::{DMatrix, DVector, Matrix2, Matrix3, Vector2};
use serde::{Deserialize, Serialize};

use crate::density::MixtureDensityFit;
use crate::error::{FdrError, Result, Stage};
use crate::fdr::Side;
use crate::null::{truncated_moments, NullMeta, NullMethod, NullModel};

/// Influence of a K-vector of log rates with respect to the K counts.
#[derive(Debug, Clone, PartialEq)]
pub struct InfluenceMatrix {
    pub matrix: DMatrix<f64>,
    pub method: NullMethod,
    pub grid: Vec<f64>,
}

fn conditioning(detail: &str) -> FdrError {
    FdrError::Conditioning { stage: Stage::Accuracy, detail: detail.into() }
}

fn inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    m.clone().try_inverse().ok_or_else(|| conditioning(&format!("{what} is singular")))
}

/// `d log f(x_k) / dy_l = (X G^{-1} X')_{kl}`.
pub fn density_influence(fit: &MixtureDensityFit) -> Result<DMatrix<f64>> {
    let gi = fit.information_inverse()?;
    Ok(&fit.design * gi * fit.design.transpose())
}

/// Pieces of the central least-squares fit: the central bins, the full null
/// design `X0` and `P = G0~^{-1} X0~' X~`, so that `d gamma = P G^{-1} X' dy`.
struct CentralParts {
    x0: DMatrix<f64>,
    p: DMatrix<f64>,
}

fn central_parts(fit: &MixtureDensityFit, bins: &[usize], m0: usize) -> Result<CentralParts> {
    let k = fit.k();
    let x0 = DMatrix::from_fn(k, m0, |i, j| fit.centers[i].powi(j as i32));
    let x0t = DMatrix::from_fn(bins.len(), m0, |i, j| x0[(bins[i], j)]);
    let xt = DMatrix::from_fn(bins.len(), fit.design.ncols(), |i, j| fit.design[(bins[i], j)]);
    let g0 = x0t.transpose() * &x0t;
    let g0i = inverse(&g0, "central Gram matrix")?;
    Ok(CentralParts { p: g0i * x0t.transpose() * xt, x0 })
}

fn central_meta(null: &NullModel) -> Result<(&[usize], usize)> {
    match &null.meta {
        NullMeta::Central { bins, coefficients, .. } => Ok((bins, coefficients.len())),
        NullMeta::Mle { .. } => Err(FdrError::InvalidConfig(
            "central-matching accuracy requested for an MLE null".into(),
        )),
    }
}

/// `A = X0 G0~^{-1} X0~' X~ - X` for central matching (or the theoretical
/// null, where `X0` is a column of ones).
pub fn a_matrix(fit: &MixtureDensityFit, null: &NullModel) -> Result<DMatrix<f64>> {
    let (bins, m0) = central_meta(null)?;
    let cp = central_parts(fit, bins, m0)?;
    Ok(&cp.x0 * &cp.p - &fit.design)
}

/// Influence of `log fdr` for central matching or the theoretical null,
/// `A G^{-1} X'`.
pub fn influence_cm(fit: &MixtureDensityFit, null: &NullModel) -> Result<InfluenceMatrix> {
    let a = a_matrix(fit, null)?;
    let gi = fit.information_inverse()?;
    Ok(InfluenceMatrix {
        matrix: a * gi * fit.design.transpose(),
        method: null.method,
        grid: fit.centers.clone(),
    })
}

/// Covariance of `log fdr` for central matching, `A G^{-1} A'`.
pub fn cov_log_fdr_cm(fit: &MixtureDensityFit, null: &NullModel) -> Result<DMatrix<f64>> {
    let a = a_matrix(fit, null)?;
    let gi = fit.information_inverse()?;
    Ok(symmetrize(&a * gi * a.transpose()))
}

/// Terms of the MLE influence shared by the log-fdr and parameter forms.
struct MleParts {
    /// Bins inside `[-x0, x0]`.
    inside: Vec<bool>,
    n0: f64,
    n_total: f64,
    y: Vector2<f64>,
    /// `J Cov1^{-1}`: derivative of `(delta0, sigma0)` with respect to `(Y1, Y2)`.
    jc: Matrix2<f64>,
    h: [f64; 5],
}

fn mle_parts(fit: &MixtureDensityFit, null: &NullModel) -> Result<MleParts> {
    let NullMeta::Mle { x0, n0, n_total, y1, y2, .. } = null.meta else {
        return Err(FdrError::InvalidConfig("MLE accuracy requested for a central null".into()));
    };
    let (d, s) = (null.delta0, null.sigma0);
    let m = truncated_moments(d, s, x0);
    let cov1 = m.sufficient_cov();
    let ci = cov1.try_inverse().ok_or_else(|| conditioning("truncated-normal covariance is singular"))?;
    // Inverse Jacobian of the natural parameters (d / s^2, -1 / (2 s^2)).
    let j = Matrix2::new(1.0, 2.0 * d, 0.0, s) * (s * s);
    Ok(MleParts {
        inside: fit.centers.iter().map(|x| x.abs() <= x0).collect(),
        n0,
        n_total,
        y: Vector2::new(y1, y2),
        jc: j * ci,
        h: m.h,
    })
}

impl MleParts {
    /// `d (delta0, sigma0) / dy_l`.
    fn dparams(&self, x: f64) -> Vector2<f64> {
        self.jc * (Vector2::new(x, x * x) - self.y) / self.n0
    }
}

/// `d log f0+(x_k) / dy_l` for the MLE null, without the `-1/N` term.
fn null_influence_mle(fit: &MixtureDensityFit, null: &NullModel) -> Result<DMatrix<f64>> {
    let mp = mle_parts(fit, null)?;
    let (d, s) = (null.delta0, null.sigma0);
    let h = mp.h;
    let k = fit.k();
    let u: Vec<Vector2<f64>> = fit
        .centers
        .iter()
        .map(|&x| {
            let r = (x - d) / s;
            Vector2::new(r - h[1] / h[0], r * r - 1.0 - (h[2] - h[0]) / h[0]) / s
        })
        .collect();
    let mut out = DMatrix::zeros(k, k);
    for l in 0..k {
        if !mp.inside[l] {
            continue;
        }
        let dp = mp.dparams(fit.centers[l]);
        for (kk, uk) in u.iter().enumerate() {
            out[(kk, l)] = 1.0 / mp.n0 + uk.dot(&dp);
        }
    }
    Ok(out)
}

/// `d log f0+(x_k) / dy_l` for any null method, without the `-1/N` term.
pub fn null_influence(fit: &MixtureDensityFit, null: &NullModel) -> Result<DMatrix<f64>> {
    match null.meta {
        NullMeta::Mle { .. } => null_influence_mle(fit, null),
        NullMeta::Central { .. } => {
            let (bins, m0) = central_meta(null)?;
            let cp = central_parts(fit, bins, m0)?;
            let gi = fit.information_inverse()?;
            Ok(&cp.x0 * &cp.p * gi * fit.design.transpose())
        }
    }
}

/// Influence of `log fdr` for MLE fitting.
pub fn influence_mle(fit: &MixtureDensityFit, null: &NullModel) -> Result<InfluenceMatrix> {
    Ok(InfluenceMatrix {
        matrix: null_influence_mle(fit, null)? - density_influence(fit)?,
        method: null.method,
        grid: fit.centers.clone(),
    })
}

/// Influence of `log fdr` for whichever method produced `null`.
pub fn influence(fit: &MixtureDensityFit, null: &NullModel) -> Result<InfluenceMatrix> {
    match null.meta {
        NullMeta::Mle { .. } => influence_mle(fit, null),
        NullMeta::Central { .. } => influence_cm(fit, null),
    }
}

/// Cumulative weights `S_{kl} = w_l / sum_{j <= k} w_j` for `l <= k` (left)
/// or the mirror image over `l >= k` (right).
pub fn tail_weights(w: &[f64], side: Side) -> DMatrix<f64> {
    let k = w.len();
    let mut s = DMatrix::zeros(k, k);
    match side {
        Side::Left => {
            let mut acc = 0.0;
            for i in 0..k {
                acc += w[i];
                for l in 0..=i {
                    s[(i, l)] = w[l] / acc;
                }
            }
        }
        Side::Right => {
            let mut acc = 0.0;
            for i in (0..k).rev() {
                acc += w[i];
                for l in i..k {
                    s[(i, l)] = w[l] / acc;
                }
            }
        }
    }
    s
}

/// Influence of the discrete tail rates `log Fdr(x_k)`: `S0 dl0+ - S dl`.
/// For central matching this is `B G^{-1} X'` with
/// `B = S0 X0 G0~^{-1} X0~' X~ - S X`.
pub fn influence_tail(fit: &MixtureDensityFit, null: &NullModel, side: Side) -> Result<InfluenceMatrix> {
    let f0: Vec<f64> = fit.centers.iter().map(|&x| null.log_subdensity_raw(x).exp()).collect();
    let s0 = tail_weights(&f0, side);
    let s = tail_weights(&fit.fitted_density, side);
    let matrix = s0 * null_influence(fit, null)? - s * density_influence(fit)?;
    Ok(InfluenceMatrix { matrix, method: null.method, grid: fit.centers.clone() })
}

/// `B` of the tail-area form, central matching only.
pub fn b_matrix(fit: &MixtureDensityFit, null: &NullModel, side: Side) -> Result<DMatrix<f64>> {
    let (bins, m0) = central_meta(null)?;
    let cp = central_parts(fit, bins, m0)?;
    let f0: Vec<f64> = fit.centers.iter().map(|&x| null.log_subdensity_raw(x).exp()).collect();
    let s0 = tail_weights(&f0, side);
    let s = tail_weights(&fit.fitted_density, side);
    Ok(s0 * &cp.x0 * &cp.p - s * &fit.design)
}

/// Covariance of `log Fdr` over the bins. Central matching uses
/// `B G^{-1} B'`; MLE uses the influence matrix with `cov(y) = diag(nu)`.
pub fn cov_log_tail(fit: &MixtureDensityFit, null: &NullModel, side: Side) -> Result<DMatrix<f64>> {
    match null.meta {
        NullMeta::Central { .. } => {
            let b = b_matrix(fit, null, side)?;
            let gi = fit.information_inverse()?;
            Ok(symmetrize(&b * gi * b.transpose()))
        }
        NullMeta::Mle { .. } => Ok(sandwich(&influence_tail(fit, null, side)?.matrix, &fit.expected_counts)),
    }
}

/// `L diag(nu) L'`.
pub fn sandwich(l: &DMatrix<f64>, nu: &[f64]) -> DMatrix<f64> {
    let nu = DVector::from_column_slice(nu);
    let mut ln = l.clone();
    for (j, mut col) in ln.column_iter_mut().enumerate() {
        col *= nu[j];
    }
    symmetrize(ln * l.transpose())
}

/// Covariance of `log fdr` for any method.
pub fn cov_log_fdr(fit: &MixtureDensityFit, null: &NullModel) -> Result<DMatrix<f64>> {
    match null.meta {
        NullMeta::Central { .. } => cov_log_fdr_cm(fit, null),
        NullMeta::Mle { .. } => Ok(sandwich(&influence_mle(fit, null)?.matrix, &fit.expected_counts)),
    }
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// Variance spectrum of `log fdr(z)`: `S_k = (d log fdr(z) / dy_k)^2 nu_k`,
/// using the influence row of the bin nearest `z`. Returns `(S, sd)`.
pub fn variance_spectrum(infl: &InfluenceMatrix, fit: &MixtureDensityFit, z: f64) -> (Vec<f64>, f64) {
    let row = nearest(&infl.grid, z);
    let s: Vec<f64> = (0..fit.k())
        .map(|k| infl.matrix[(row, k)].powi(2) * fit.expected_counts[k])
        .collect();
    let sd = s.iter().sum::<f64>().sqrt();
    (s, sd)
}

fn nearest(grid: &[f64], z: f64) -> usize {
    let mut best = 0;
    for (i, g) in grid.iter().enumerate() {
        if (g - z).abs() < (grid[best] - z).abs() {
            best = i;
        }
    }
    best
}

/// Check symmetry and positive semi-definiteness to `tol` (relative to the
/// largest eigenvalue).
pub fn check_psd(m: &DMatrix<f64>, tol: f64) -> Result<()> {
    let asym = (m - m.transpose()).amax();
    let scale = m.amax().max(f64::MIN_POSITIVE);
    if asym > tol * scale {
        return Err(conditioning(&format!("covariance asymmetric by {asym:.3e}")));
    }
    let eig = m.clone().symmetric_eigen();
    let min = eig.eigenvalues.min();
    let max = eig.eigenvalues.max().max(0.0);
    if min < -tol * max.max(1.0) {
        return Err(conditioning(&format!("covariance has eigenvalue {min:.3e}")));
    }
    Ok(())
}

/// Covariance of `(p0, delta0, sigma0)` with standard deviations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamCovariance {
    pub cov: [[f64; 3]; 3],
    pub sd: [f64; 3],
    pub warnings: Vec<String>,
}

fn finish_params(mut cov: Matrix3<f64>) -> ParamCovariance {
    let mut warnings = Vec::new();
    for i in 0..3 {
        if cov[(i, i)] < 0.0 {
            let msg = format!("negative variance {:.3e} for parameter {i} clipped to 0", cov[(i, i)]);
            warn!("{msg}");
            warnings.push(msg);
            cov[(i, i)] = 0.0;
        }
    }
    let c = symmetrize_3(cov);
    ParamCovariance {
        cov: [
            [c[(0, 0)], c[(0, 1)], c[(0, 2)]],
            [c[(1, 0)], c[(1, 1)], c[(1, 2)]],
            [c[(2, 0)], c[(2, 1)], c[(2, 2)]],
        ],
        sd: [c[(0, 0)].sqrt(), c[(1, 1)].sqrt(), c[(2, 2)].sqrt()],
        warnings,
    }
}

fn symmetrize_3(m: Matrix3<f64>) -> Matrix3<f64> {
    (m + m.transpose()) * 0.5
}

/// Jacobian of `(b0, b1, b2) -> (log p0, delta0, sigma0)` for the quadratic
/// `log f0+(z) = b0 + b1 z + b2 z^2`.
pub fn quadratic_jacobian(delta0: f64, sigma0: f64) -> Matrix3<f64> {
    let (d, s) = (delta0, sigma0);
    Matrix3::new(
        1.0, d, s * s + d * d,
        0.0, s * s, 2.0 * d * s * s,
        0.0, 0.0, s * s * s,
    )
}

/// `D = Jac G0~^{-1} X0~' X~` (rows `log p0, delta0, sigma0`), padded with
/// zero rows for the theoretical null.
fn d_matrix(fit: &MixtureDensityFit, null: &NullModel) -> Result<DMatrix<f64>> {
    let (bins, m0) = central_meta(null)?;
    let cp = central_parts(fit, bins, m0)?;
    let m = fit.design.ncols();
    let mut d = DMatrix::zeros(3, m);
    if m0 == 3 {
        let jac = quadratic_jacobian(null.delta0, null.sigma0);
        let jd = DMatrix::from_fn(3, 3, |i, j| jac[(i, j)]);
        d.copy_from(&(jd * &cp.p));
    } else {
        d.row_mut(0).copy_from(&cp.p.row(0));
    }
    Ok(d)
}

/// Covariance of `(p0, delta0, sigma0)` for central matching:
/// `D G^{-1} D' - E` on the `(log p0, delta0, sigma0)` scale with
/// `E_11 = 1/N`, then rescaled to `p0`.
pub fn cov_params_cm(fit: &MixtureDensityFit, null: &NullModel) -> Result<ParamCovariance> {
    let d = d_matrix(fit, null)?;
    let gi = fit.information_inverse()?;
    let c = &d * gi * d.transpose();
    let mut cov = Matrix3::from_fn(|i, j| c[(i, j)]);
    cov[(0, 0)] -= 1.0 / fit.n_total;
    Ok(finish_params(to_p0_scale(cov, null.p0)))
}

fn to_p0_scale(mut cov: Matrix3<f64>, p0: f64) -> Matrix3<f64> {
    for j in 0..3 {
        cov[(0, j)] *= p0;
        cov[(j, 0)] *= p0;
    }
    cov
}

/// Covariance of `(p0, delta0, sigma0)` for MLE fitting, `a b a'` with
/// `b = diag(theta (1 - theta) / N, J Cov1^{-1} J' / N0)` and `a` the
/// Jacobian of `(theta, delta0, sigma0) -> (p0, delta0, sigma0)`.
pub fn cov_params_mle(null: &NullModel) -> Result<ParamCovariance> {
    let NullMeta::Mle { x0, n0, n_total, .. } = null.meta else {
        return Err(FdrError::InvalidConfig("MLE accuracy requested for a central null".into()));
    };
    let (d, s, p0) = (null.delta0, null.sigma0, null.p0);
    let m = truncated_moments(d, s, x0);
    let h = m.h;
    let ci = m
        .sufficient_cov()
        .try_inverse()
        .ok_or_else(|| conditioning("truncated-normal covariance is singular"))?;
    let j = Matrix2::new(1.0, 2.0 * d, 0.0, s) * (s * s);
    let ds = j * ci * j.transpose() / n0;
    let theta = n0 / n_total;
    let mut b = Matrix3::zeros();
    b[(0, 0)] = theta * (1.0 - theta) / n_total;
    for r in 0..2 {
        for c in 0..2 {
            b[(r + 1, c + 1)] = ds[(r, c)];
        }
    }
    let scale = -p0 / (s * h[0]);
    let a = Matrix3::new(
        1.0 / h[0], scale * h[1], scale * (h[2] - h[0]),
        0.0, 1.0, 0.0,
        0.0, 0.0, 1.0,
    );
    Ok(finish_params(a * b * a.transpose()))
}

pub fn cov_params(fit: &MixtureDensityFit, null: &NullModel) -> Result<ParamCovariance> {
    match null.meta {
        NullMeta::Central { .. } => cov_params_cm(fit, null),
        NullMeta::Mle { .. } => cov_params_mle(null),
    }
}

/// Influence of `(p0, delta0, sigma0)` on the counts, `3 x K`, including
/// the dependence of `N` on `y`.
pub fn param_influence(fit: &MixtureDensityFit, null: &NullModel) -> Result<DMatrix<f64>> {
    let k = fit.k();
    match null.meta {
        NullMeta::Central { .. } => {
            let d = d_matrix(fit, null)?;
            let gi = fit.information_inverse()?;
            let mut l = d * gi * fit.design.transpose();
            for c in 0..k {
                // log f = X beta - log(N delta) shifts every log f by -1/N.
                l[(0, c)] -= 1.0 / fit.n_total;
            }
            for c in 0..k {
                l[(0, c)] *= null.p0;
            }
            Ok(l)
        }
        NullMeta::Mle { .. } => {
            let mp = mle_parts(fit, null)?;
            let h = mp.h;
            let (s, p0) = (null.sigma0, null.p0);
            let mut l = DMatrix::zeros(3, k);
            for c in 0..k {
                let (dp, dtheta) = if mp.inside[c] {
                    (mp.dparams(fit.centers[c]), 1.0 / mp.n0 - 1.0 / mp.n_total)
                } else {
                    (Vector2::zeros(), -1.0 / mp.n_total)
                };
                let dlogh = (h[1] * dp[0] + (h[2] - h[0]) * dp[1]) / (s * h[0]);
                l[(0, c)] = p0 * (dtheta - dlogh);
                l[(1, c)] = dp[0];
                l[(2, c)] = dp[1];
            }
            Ok(l)
        }
    }
}

/// Everything the report needs from the accuracy module.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub method: NullMethod,
    pub sd_log_fdr: Vec<f64>,
    pub sd_log_fdr_left: Vec<f64>,
    pub sd_log_fdr_right: Vec<f64>,
    pub params: ParamCovariance,
}

pub fn accuracy_report(fit: &MixtureDensityFit, null: &NullModel) -> Result<AccuracyReport> {
    let diag_sd = |m: &DMatrix<f64>| (0..m.nrows()).map(|i| m[(i, i)].max(0.0).sqrt()).collect();
    Ok(AccuracyReport {
        method: null.method,
        sd_log_fdr: diag_sd(&cov_log_fdr(fit, null)?),
        sd_log_fdr_left: diag_sd(&cov_log_tail(fit, null, Side::Left)?),
        sd_log_fdr_right: diag_sd(&cov_log_tail(fit, null, Side::Right)?),
        params: cov_params(fit, null)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tail_weights_are_triangular_and_normalized() {
        let w = [1.0, 2.0, 3.0, 4.0];
        let s = tail_weights(&w, Side::Left);
        for i in 0..4 {
            assert!((s.row(i).sum() - 1.0).abs() < 1e-15);
            for l in i + 1..4 {
                assert_eq!(s[(i, l)], 0.0);
            }
        }
        let r = tail_weights(&w, Side::Right);
        assert_eq!(r[(3, 3)], 1.0);
        assert_eq!(r[(2, 1)], 0.0);
    }

    #[test]
    fn quadratic_jacobian_matches_finite_differences() {
        let b = [-0.9, 0.2, -0.6];
        let map = |b: [f64; 3]| {
            let (d, s, p) = crate::null::quadratic_to_null(b).unwrap();
            [p.ln(), d, s]
        };
        let (d, s, _) = crate::null::quadratic_to_null(b).unwrap();
        let jac = quadratic_jacobian(d, s);
        for j in 0..3 {
            let h = 1e-6;
            let mut bp = b;
            let mut bm = b;
            bp[j] += h;
            bm[j] -= h;
            let (fp, fm) = (map(bp), map(bm));
            for i in 0..3 {
                let fd = (fp[i] - fm[i]) / (2.0 * h);
                let rel = (fd - jac[(i, j)]).abs() / jac[(i, j)].abs().max(1e-3);
                assert!(rel < 1e-6, "({i},{j}) fd {fd} analytic {}", jac[(i, j)]);
            }
        }
    }

    #[test]
    fn psd_check() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        assert!(check_psd(&m, 1e-8).is_ok());
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(check_psd(&bad, 1e-8).is_err());
    }
}
