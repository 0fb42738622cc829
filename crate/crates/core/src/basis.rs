//! Exponential-family bases for log-density fitting.
//!
//! Both bases work on the standardized coordinate `u = (z - center) / scale`,
//! where `center` and `scale` are the mean and standard deviation of the bin
//! centers. Raw powers of `z` up to degree 7 are too ill-conditioned to use
//! directly.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{FdrError, Result, Stage};
use crate::ingest::BinnedCounts;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BasisKind {
    Polynomial,
    NaturalSpline,
}

/// Where the interior knots of a natural spline go.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KnotPlacement {
    /// Equally spaced quantiles of the bin-center grid (equally spaced knots).
    Grid,
    /// Equally spaced quantiles of the count-weighted z distribution.
    Counts,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasisSpec {
    pub kind: BasisKind,
    /// Number of non-intercept columns; the design has `df + 1` columns.
    pub df: usize,
    pub knots: KnotPlacement,
}

impl Default for BasisSpec {
    fn default() -> Self {
        Self {
            kind: BasisKind::NaturalSpline,
            df: 7,
            knots: KnotPlacement::Grid,
        }
    }
}

impl BasisSpec {
    pub fn polynomial(df: usize) -> Self {
        Self { kind: BasisKind::Polynomial, df, knots: KnotPlacement::Grid }
    }

    pub fn natural_spline(df: usize) -> Self {
        Self { kind: BasisKind::NaturalSpline, df, knots: KnotPlacement::Grid }
    }

    pub fn n_columns(&self) -> usize {
        self.df + 1
    }
}

/// A basis with its conditioning transform and knots fixed, so it can be
/// evaluated anywhere on the real line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Basis {
    pub spec: BasisSpec,
    pub center: f64,
    pub scale: f64,
    /// Natural-spline knots in `u` units (boundary knots included); empty for polynomials.
    pub knots: Vec<f64>,
}

impl Basis {
    /// Fix the transform and knots for a histogram.
    pub fn for_counts(spec: BasisSpec, counts: &BinnedCounts) -> Result<Self> {
        if spec.df < 2 {
            return Err(FdrError::InvalidConfig(format!(
                "basis degrees of freedom {} < 2",
                spec.df
            )));
        }
        let x = &counts.centers;
        let k = x.len() as f64;
        let center = x.iter().sum::<f64>() / k;
        let scale = (x.iter().map(|v| (v - center).powi(2)).sum::<f64>() / k).sqrt();
        if !(scale > 0.0) {
            return Err(FdrError::InvalidInput("bin centers have zero spread".into()));
        }
        let mut basis = Self { spec, center, scale, knots: Vec::new() };
        if spec.kind == BasisKind::NaturalSpline {
            let lo = x[0];
            let hi = x[x.len() - 1];
            let mut knots = vec![lo];
            for j in 1..spec.df {
                let q = j as f64 / spec.df as f64;
                let v = match spec.knots {
                    KnotPlacement::Grid => lo + q * (hi - lo),
                    KnotPlacement::Counts => continuous_weighted_quantile(counts, q),
                };
                knots.push(v.clamp(lo, hi));
            }
            knots.push(hi);
            for w in knots.windows(2) {
                if !(w[1] > w[0]) {
                    return Err(FdrError::Conditioning {
                        stage: Stage::Density,
                        detail: format!("coincident spline knots at z = {:.4}", w[0]),
                    });
                }
            }
            basis.knots = knots.iter().map(|v| (v - center) / scale).collect();
        }
        Ok(basis)
    }

    pub fn n_columns(&self) -> usize {
        self.spec.n_columns()
    }

    #[inline]
    pub fn to_u(&self, z: f64) -> f64 {
        (z - self.center) / self.scale
    }

    /// Basis row at `z`, written into `row` (length `n_columns`).
    pub fn row_into(&self, z: f64, row: &mut [f64]) {
        let u = self.to_u(z);
        match self.spec.kind {
            BasisKind::Polynomial => {
                let mut p = 1.0;
                for r in row.iter_mut() {
                    *r = p;
                    p *= u;
                }
            }
            BasisKind::NaturalSpline => {
                // Truncated-power form of the natural cubic spline basis:
                // 1, u, d_j(u) - d_{K-2}(u) with
                // d_j(u) = ((u - k_j)^3_+ - (u - k_last)^3_+) / (k_last - k_j).
                let kn = &self.knots;
                let last = kn[kn.len() - 1];
                let d = |j: usize| {
                    let a = (u - kn[j]).max(0.0).powi(3);
                    let b = (u - last).max(0.0).powi(3);
                    (a - b) / (last - kn[j])
                };
                row[0] = 1.0;
                row[1] = u;
                let pen = d(kn.len() - 2);
                for j in 0..kn.len() - 2 {
                    row[j + 2] = d(j) - pen;
                }
            }
        }
    }

    pub fn row(&self, z: f64) -> Vec<f64> {
        let mut r = vec![0.0; self.n_columns()];
        self.row_into(z, &mut r);
        r
    }

    /// `K x m` design matrix over `centers`, checked for full column rank.
    pub fn design(&self, centers: &[f64]) -> Result<DMatrix<f64>> {
        let m = self.n_columns();
        let mut x = DMatrix::zeros(centers.len(), m);
        let mut row = vec![0.0; m];
        for (i, &z) in centers.iter().enumerate() {
            self.row_into(z, &mut row);
            for j in 0..m {
                x[(i, j)] = row[j];
            }
        }
        check_rank(&x)?;
        Ok(x)
    }
}

/// Build the design matrix for `spec` on a histogram's bin centers.
pub fn build_basis(spec: BasisSpec, counts: &BinnedCounts) -> Result<(Basis, DMatrix<f64>)> {
    let basis = Basis::for_counts(spec, counts)?;
    let x = basis.design(&counts.centers)?;
    Ok((basis, x))
}

/// Modified Gram-Schmidt; errors naming the first column that is (nearly) in
/// the span of the earlier ones.
fn check_rank(x: &DMatrix<f64>) -> Result<()> {
    if x.nrows() < x.ncols() {
        return Err(FdrError::Conditioning {
            stage: Stage::Density,
            detail: format!("{} bins for {} basis columns", x.nrows(), x.ncols()),
        });
    }
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(x.ncols());
    for j in 0..x.ncols() {
        let mut v: Vec<f64> = x.column(j).iter().copied().collect();
        let norm0 = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        for qi in &q {
            let dot: f64 = qi.iter().zip(&v).map(|(a, b)| a * b).sum();
            for (vk, qk) in v.iter_mut().zip(qi) {
                *vk -= dot * qk;
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm0 == 0.0 || norm / norm0 < 1e-10 {
            return Err(FdrError::Conditioning {
                stage: Stage::Density,
                detail: format!("design column {j} is linearly dependent on columns 0..{j}"),
            });
        }
        q.push(v.into_iter().map(|a| a / norm).collect());
    }
    Ok(())
}

/// Quantile of the histogram treating each bin's mass as uniform over the bin.
fn continuous_weighted_quantile(h: &BinnedCounts, q: f64) -> f64 {
    let total: f64 = h.counts.iter().map(|c| c.max(0.0)).sum();
    let target = q * total;
    let mut acc = 0.0;
    for (k, c) in h.counts.iter().enumerate() {
        let c = c.max(0.0);
        if c > 0.0 && acc + c >= target {
            let frac = (target - acc) / c;
            return h.centers[k] - 0.5 * h.width + frac * h.width;
        }
        acc += c;
    }
    h.upper_edge()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(k: usize, lo: f64, hi: f64) -> BinnedCounts {
        let w = (hi - lo) / (k - 1) as f64;
        let counts = (0..k)
            .map(|i| {
                let x = lo + i as f64 * w;
                (1000.0 * (-0.5 * x * x).exp()).round()
            })
            .collect();
        BinnedCounts::from_counts(lo, w, counts).unwrap()
    }

    #[test]
    fn quadratic_polynomial_on_symmetric_grid() {
        let h = grid(21, -2.0, 2.0);
        let (b, x) = build_basis(BasisSpec::polynomial(2), &h).unwrap();
        assert_eq!(x.ncols(), 3);
        assert!(b.center.abs() < 1e-12);
        assert!(x.column(1).sum().abs() < 1e-12);
        assert!(x.column(0).iter().all(|&v| v == 1.0));
    }

    #[test]
    fn degree_seven_on_41_centers() {
        let h = grid(41, -4.0, 4.0);
        let (_, x) = build_basis(BasisSpec::polynomial(7), &h).unwrap();
        assert_eq!((x.nrows(), x.ncols()), (41, 8));
        let (_, x) = build_basis(BasisSpec::natural_spline(7), &h).unwrap();
        assert_eq!((x.nrows(), x.ncols()), (41, 8));
    }

    #[test]
    fn natural_spline_is_linear_outside_boundary_knots() {
        let h = grid(41, -4.0, 4.0);
        let b = Basis::for_counts(BasisSpec::natural_spline(5), &h).unwrap();
        for j in 0..b.n_columns() {
            let f = |z: f64| b.row(z)[j];
            for &(a, c) in &[(5.0, 6.0), (-7.0, -5.5)] {
                let mid = f(0.5 * (a + c));
                assert!((mid - 0.5 * (f(a) + f(c))).abs() < 1e-9, "column {j}");
            }
        }
    }

    #[test]
    fn natural_spline_has_continuous_second_derivative() {
        let h = grid(41, -4.0, 4.0);
        let b = Basis::for_counts(BasisSpec::natural_spline(7), &h).unwrap();
        let e = 1e-4;
        for &kn in &b.knots[1..b.knots.len() - 1] {
            let z = kn * b.scale + b.center;
            for j in 0..b.n_columns() {
                let f = |z: f64| b.row(z)[j];
                let left = (f(z - 2.0 * e) - 2.0 * f(z - e) + f(z)) / (e * e);
                let right = (f(z) - 2.0 * f(z + e) + f(z + 2.0 * e)) / (e * e);
                assert!((left - right).abs() < 1e-2, "jump at knot {kn}, column {j}");
            }
        }
    }

    #[test]
    fn too_few_bins_is_conditioning_error() {
        let h = BinnedCounts::from_counts(0.0, 1.0, vec![1.0; 10]).unwrap();
        let err = build_basis(BasisSpec::polynomial(10), &h).unwrap_err();
        assert!(matches!(err, FdrError::Conditioning { .. }));
    }

    #[test]
    fn rank_check_names_column() {
        let mut x = DMatrix::from_fn(12, 3, |i, j| (i as f64).powi(j as i32));
        x.set_column(2, &(x.column(0) * 2.0 + x.column(1)));
        let err = check_rank(&x).unwrap_err();
        assert!(err.to_string().contains("column 2"), "{err}");
    }

    #[test]
    fn count_knots_follow_mass() {
        let h = grid(81, -4.0, 8.0);
        let spec = BasisSpec { knots: KnotPlacement::Counts, ..BasisSpec::natural_spline(4) };
        let b = Basis::for_counts(spec, &h).unwrap();
        let z: Vec<f64> = b.knots.iter().map(|u| u * b.scale + b.center).collect();
        assert!((z[2]).abs() < 0.1, "median knot {z:?}");
        assert!(z[1] < 0.0 && z[3] > 0.0);
    }
}
