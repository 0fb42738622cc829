//! One-shot analysis of a vector of test statistics: binning, density fit,
//! all three null estimates, rates, accuracy and power diagnostics.

use std::path::PathBuf;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::accuracy::{accuracy_report, cov_params, AccuracyReport, ParamCovariance};
use crate::basis::{BasisKind, BasisSpec};
use crate::density::{fit_mixture_density, MixtureDensityFit};
use crate::error::{FdrError, Result};
use crate::fdr::{fdr_report, FdrReport, DEFAULT_THRESHOLD};
use crate::ingest::{bin_z_values, BinOptions, BinnedCounts, ZSample, DEFAULT_BINS};
use crate::null::{
    central_matching, mle_fit, theoretical_null, NullMethod, NullModel, DEFAULT_CENTRAL_FRACTION,
    DEFAULT_X0,
};
use crate::power::{power_report, PowerReport, ProjectionMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StatKind {
    Z,
    /// Student t, converted to z through the t and normal c.d.f.s.
    T,
}

/// Every knob of an analysis run. Serialized verbatim into the summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    pub input: PathBuf,
    /// CSV column holding the statistics; `None` reads one number per line.
    pub column: Option<String>,
    pub stat: StatKind,
    /// Degrees of freedom, required when `stat` is `t`.
    pub df: Option<u32>,
    pub bins: usize,
    /// First and last bin centers; the data span when `None`.
    pub range: Option<(f64, f64)>,
    pub basis: BasisKind,
    pub basis_df: usize,
    pub null: NullMethod,
    pub x0: f64,
    pub central_fraction: f64,
    pub threshold: f64,
    pub project: Vec<f64>,
    pub projection_mode: ProjectionMode,
    pub out: PathBuf,
    pub seed: u64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            input: PathBuf::new(),
            column: None,
            stat: StatKind::Z,
            df: None,
            bins: DEFAULT_BINS,
            range: None,
            basis: BasisKind::NaturalSpline,
            basis_df: 7,
            null: NullMethod::Mle,
            x0: DEFAULT_X0,
            central_fraction: DEFAULT_CENTRAL_FRACTION,
            threshold: DEFAULT_THRESHOLD,
            project: Vec::new(),
            projection_mode: ProjectionMode::Crude,
            out: PathBuf::from("lfdr-out"),
            seed: 1,
        }
    }
}

impl AnalysisConfig {
    pub fn basis_spec(&self) -> BasisSpec {
        match self.basis {
            BasisKind::Polynomial => BasisSpec::polynomial(self.basis_df),
            BasisKind::NaturalSpline => BasisSpec::natural_spline(self.basis_df),
        }
    }

    pub fn bin_options(&self) -> BinOptions {
        BinOptions { k_bins: self.bins, range: self.range, clip: false }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stat == StatKind::T && self.df.is_none() {
            return Err(FdrError::InvalidConfig("t statistics need --df".into()));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(FdrError::InvalidConfig(format!("threshold {} must lie in (0, 1)", self.threshold)));
        }
        if !(self.central_fraction > 0.0 && self.central_fraction < 0.5) {
            return Err(FdrError::InvalidConfig(format!(
                "central fraction {} must lie in (0, 0.5)",
                self.central_fraction
            )));
        }
        if !(self.x0 > 0.0) {
            return Err(FdrError::InvalidConfig(format!("x0 = {} must be positive", self.x0)));
        }
        if let Some(c) = self.project.iter().find(|c| !(**c >= 1.0)) {
            return Err(FdrError::InvalidConfig(format!("projection factor {c} must be >= 1")));
        }
        Ok(())
    }

    /// Convert raw statistics to z-values according to `stat`.
    pub fn to_z(&self, values: Vec<f64>) -> Result<ZSample> {
        match self.stat {
            StatKind::Z => ZSample::new(values),
            StatKind::T => ZSample::from_t(&values, self.df.unwrap_or(0)),
        }
    }
}

/// One null estimate with its delta-method standard errors, or the reason it failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullEstimate {
    pub method: NullMethod,
    pub model: Option<NullModel>,
    pub params: Option<ParamCovariance>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Analysis {
    pub z: ZSample,
    pub hist: BinnedCounts,
    pub fit: MixtureDensityFit,
    pub estimates: Vec<NullEstimate>,
    /// The null used for the rates below.
    pub null: NullModel,
    pub fdr: FdrReport,
    pub accuracy: AccuracyReport,
    pub power: PowerReport,
    pub warnings: Vec<String>,
}

fn estimate(method: NullMethod, fit: &MixtureDensityFit, z: &ZSample, cfg: &AnalysisConfig) -> Result<NullModel> {
    match method {
        NullMethod::Theoretical => theoretical_null(fit, cfg.central_fraction),
        NullMethod::CentralMatching => central_matching(fit, cfg.central_fraction),
        NullMethod::Mle => mle_fit(z, cfg.x0),
    }
}

/// Run the whole pipeline on `z`. Fails only if the selected null or a
/// downstream stage fails; the other null methods are reported as errors.
pub fn analyze_sample(z: ZSample, cfg: &AnalysisConfig) -> Result<Analysis> {
    cfg.validate()?;
    let mut warnings: Vec<String> = z.warnings().to_vec();
    let hist = bin_z_values(&z, &cfg.bin_options())?;
    if hist.n_excluded > 0 {
        warnings.push(format!("{} z-values outside the binning range were excluded", hist.n_excluded));
    }
    let fit = fit_mixture_density(&hist, cfg.basis_spec())?;
    if !fit.converged {
        warnings.push(format!("density fit stopped after {} iterations without converging", fit.iterations));
    }

    let mut estimates = Vec::new();
    let mut chosen = None;
    for method in [NullMethod::Theoretical, NullMethod::CentralMatching, NullMethod::Mle] {
        match estimate(method, &fit, &z, cfg) {
            Ok(model) => {
                let params = cov_params(&fit, &model);
                let (params, err) = match params {
                    Ok(p) => (Some(p), None),
                    Err(e) => (None, Some(e.to_string())),
                };
                warnings.extend(model.warnings.iter().map(|w| format!("{method}: {w}")));
                if method == cfg.null {
                    chosen = Some(model.clone());
                }
                estimates.push(NullEstimate { method, model: Some(model), params, error: err });
            }
            Err(e) => {
                if method == cfg.null {
                    return Err(e);
                }
                let msg = format!("{method} null failed: {e}");
                warn!("{msg}");
                warnings.push(msg);
                estimates.push(NullEstimate { method, model: None, params: None, error: Some(e.to_string()) });
            }
        }
    }
    let null = chosen.expect("selected null is always estimated");

    let fdr = fdr_report(&fit, &null, z.values(), cfg.threshold)?;
    let accuracy = accuracy_report(&fit, &null)?;
    let power = power_report(&fit, &fdr.per_bin_fdr, &null, &cfg.project, cfg.projection_mode)?;
    for p in &power.projections {
        warnings.extend(p.warnings.iter().map(|w| format!("projection c = {}: {w}", p.c)));
    }
    warnings.extend(accuracy.params.warnings.iter().cloned());
    Ok(Analysis { z, hist, fit, estimates, null, fdr, accuracy, power, warnings })
}

impl Analysis {
    /// sd of log fdr at each case, taken from the nearest bin.
    pub fn case_sd_log_fdr(&self) -> Vec<f64> {
        self.z
            .values()
            .iter()
            .map(|&v| self.accuracy.sd_log_fdr[self.hist.nearest_bin(v)])
            .collect()
    }

    pub fn is_flagged(&self) -> Vec<bool> {
        let mut f = vec![false; self.z.len()];
        for &i in self.fdr.flagged_left.iter().chain(&self.fdr.flagged_right) {
            f[i] = true;
        }
        f
    }
}
