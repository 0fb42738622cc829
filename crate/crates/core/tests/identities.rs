//! Exact identities the estimates satisfy.

mod common;

use common::{draw, fit, simpson};
use lfdr_core::accuracy::{
    a_matrix, check_psd, cov_log_fdr, cov_log_fdr_cm, cov_log_tail, cov_params, influence, influence_cm,
    sandwich, variance_spectrum,
};
use lfdr_core::fdr::{lehmann_alpha, lehmann_relation, local_fdr_ratio, tail_fdr_ratio, Side};
use lfdr_core::null::{central_matching, mle_fit, theoretical_null, truncated_moments, NullMeta};
use nalgebra::{DMatrix, DVector};

#[test]
fn tail_fdr_is_the_average_of_local_fdr() {
    let (_, h) = draw(21);
    let f = fit(&h);
    let null = central_matching(&f, 0.25).unwrap();
    assert!(null.p0 < 1.0);
    let (lo, hi) = (f.lower_edge(), f.upper_edge());
    for &z in &[-2.0, -1.0, 0.0, 1.5, 2.5, 3.5] {
        let num = simpson(|t| local_fdr_ratio(&f, &null, t) * f.density(t), lo, z, 4000);
        let den = simpson(|t| f.density(t), lo, z, 4000);
        let left = tail_fdr_ratio(&f, &null, Side::Left, z).unwrap();
        assert!((left - num / den).abs() < 1e-4, "left at {z}: {left} vs {}", num / den);

        let num = simpson(|t| local_fdr_ratio(&f, &null, t) * f.density(t), z, hi, 4000);
        let den = simpson(|t| f.density(t), z, hi, 4000);
        let right = tail_fdr_ratio(&f, &null, Side::Right, z).unwrap();
        assert!((right - num / den).abs() < 1e-4, "right at {z}: {right} vs {}", num / den);
    }
}

#[test]
fn lehmann_relation_inverts_exactly() {
    for &tail in &[0.01, 0.1, 0.35, 0.8] {
        for &alpha in &[0.05, 0.3, 0.7, 1.0] {
            let local = lehmann_relation(tail, alpha).unwrap();
            let back = lehmann_alpha(local, tail).unwrap();
            assert!((back - alpha).abs() < 1e-12 * alpha.max(1.0));
        }
    }
    assert!((lehmann_relation(0.2, 1.0).unwrap() - 0.2).abs() < 1e-15);
}

#[test]
fn density_is_normalized_and_solves_the_score_equations() {
    for seed in [22, 23, 24] {
        let (_, h) = draw(seed);
        let f = fit(&h);
        assert!((f.total_mass() - 1.0).abs() < 1e-3, "mass {}", f.total_mass());
        let riemann: f64 = f.fitted_density.iter().sum::<f64>() * f.width;
        assert!((riemann - 1.0).abs() < 1e-9, "bin sum {riemann}");
        let score = f.score();
        assert!(score.amax() < 1e-6, "score {}", score.amax());
        let resid = DVector::from_iterator(f.k(), f.counts.iter().zip(&f.expected_counts).map(|(y, n)| y - n));
        assert!((f.design.transpose() * resid).amax() < 1e-6);
    }
}

#[test]
fn mle_matches_truncated_moments() {
    let (z, _) = draw(25);
    let null = mle_fit(&z, 2.0).unwrap();
    let NullMeta::Mle { y1, y2, x0, .. } = null.meta else { panic!("not an MLE null") };
    let m = truncated_moments(null.delta0, null.sigma0, x0);
    assert!((m.e[1] - y1).abs() < 1e-8);
    assert!((m.e[2] - y2).abs() < 1e-8);
}

#[test]
fn central_matching_influence_is_homogeneous() {
    // Scaling y scales nu without changing fdr, so A G^{-1} X' nu = 0.
    let (_, h) = draw(26);
    let f = fit(&h);
    for null in [central_matching(&f, 0.25).unwrap(), theoretical_null(&f, 0.25).unwrap()] {
        let a = a_matrix(&f, &null).unwrap();
        let gi = f.information_inverse().unwrap();
        let nu = DVector::from_column_slice(&f.expected_counts);
        let v = &a * gi * f.design.transpose() * nu;
        assert!(v.amax() < 1e-8, "{}: {}", null.method, v.amax());
    }
}

#[test]
fn covariance_forms_agree() {
    let (_, h) = draw(27);
    let f = fit(&h);
    let null = central_matching(&f, 0.25).unwrap();
    let direct = cov_log_fdr_cm(&f, &null).unwrap();
    let l = influence_cm(&f, &null).unwrap();
    let via_l = sandwich(&l.matrix, &f.expected_counts);
    let diff: DMatrix<f64> = &direct - &via_l;
    assert!(diff.amax() < 1e-8 * direct.amax().max(1.0), "{}", diff.amax());
}

#[test]
fn variance_spectrum_sums_to_the_variance() {
    let (z, h) = draw(28);
    let f = fit(&h);
    for null in [central_matching(&f, 0.25).unwrap(), mle_fit(&z, 2.0).unwrap()] {
        let infl = influence(&f, &null).unwrap();
        let cov = cov_log_fdr(&f, &null).unwrap();
        for &x in &[1.45, 2.95, 4.05] {
            let (s, sd) = variance_spectrum(&infl, &f, x);
            let k = h.nearest_bin(x);
            let total: f64 = s.iter().sum();
            assert!((total - cov[(k, k)]).abs() < 1e-10 * cov[(k, k)].max(1e-12));
            assert!((sd * sd - total).abs() < 1e-12 * total.max(1.0));
        }
    }
}

#[test]
fn covariances_are_symmetric_psd() {
    let (z, h) = draw(29);
    let f = fit(&h);
    let nulls = [
        central_matching(&f, 0.25).unwrap(),
        theoretical_null(&f, 0.25).unwrap(),
        mle_fit(&z, 2.0).unwrap(),
    ];
    for null in &nulls {
        check_psd(&cov_log_fdr(&f, null).unwrap(), 1e-8).unwrap();
        for side in [Side::Left, Side::Right] {
            check_psd(&cov_log_tail(&f, null, side).unwrap(), 1e-8).unwrap();
        }
        let p = cov_params(&f, null).unwrap();
        let m = DMatrix::from_fn(3, 3, |i, j| p.cov[i][j]);
        check_psd(&m, 1e-8).unwrap();
    }
}
