//! Simulation models with known two-class structure and the replication
//! studies built on them.
//!
//! Replication `r` draws from a ChaCha stream selected by `r`, so a study is
//! reproducible for a given seed no matter how rayon schedules it.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::accuracy::{cov_log_fdr_cm, cov_params_cm, cov_params_mle};
use crate::basis::BasisSpec;
use crate::density::fit_mixture_density;
use crate::error::{FdrError, Result};
use crate::fdr::{local_fdr_bins, local_fdr_ratio, tail_fdr_ratio, Side};
use crate::ingest::{bin_z_values, BinOptions, ZSample};
use crate::null::{central_matching, mle_fit, theoretical_null, DEFAULT_CENTRAL_FRACTION, DEFAULT_X0};
use crate::power::efdr1;
use crate::quad::integrate;
use crate::special::{norm_pdf_ms, norm_quantile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimKind {
    /// Nulls exactly N(0, 1).
    ExactNull,
    /// Null means jittered by N(0, 0.5^2).
    JitteredNull,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimModel {
    pub kind: SimKind,
    pub n: usize,
    pub p0: f64,
    pub nonnull_mean: f64,
    pub nonnull_mean_sd: f64,
    pub null_jitter_sd: f64,
    /// Nonnull means on the quantile grid `mean + sd * Phi^{-1}((i - 0.5) / n1)`
    /// instead of random draws.
    pub deterministic_grid: bool,
}

impl SimModel {
    pub fn exact_null() -> Self {
        Self {
            kind: SimKind::ExactNull,
            n: 1500,
            p0: 0.9,
            nonnull_mean: 3.0,
            nonnull_mean_sd: 1.0,
            null_jitter_sd: 0.0,
            deterministic_grid: true,
        }
    }

    pub fn jittered_null() -> Self {
        Self {
            kind: SimKind::JitteredNull,
            null_jitter_sd: 0.5,
            deterministic_grid: false,
            ..Self::exact_null()
        }
    }

    pub fn n_null(&self) -> usize {
        (self.p0 * self.n as f64).round() as usize
    }

    /// Null sd and nonnull `(mean, sd)` of the marginal z distributions.
    pub fn components(&self) -> (f64, f64, f64) {
        let s0 = (1.0 + self.null_jitter_sd.powi(2)).sqrt();
        let s1 = (1.0 + self.nonnull_mean_sd.powi(2)).sqrt();
        (s0, self.nonnull_mean, s1)
    }

    /// Nonnull means on the deterministic quantile grid.
    pub fn mean_grid(&self) -> Vec<f64> {
        let n1 = self.n - self.n_null();
        (1..=n1)
            .map(|i| self.nonnull_mean + self.nonnull_mean_sd * norm_quantile((i as f64 - 0.5) / n1 as f64))
            .collect()
    }
}

/// Random stream for replication `rep` of a study seeded with `seed`.
pub fn replication_rng(seed: u64, rep: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep);
    rng
}

/// Draw one sample: `n_null` nulls followed by the nonnull cases.
pub fn generate_with(model: &SimModel, rng: &mut impl Rng) -> Result<ZSample> {
    let n0 = model.n_null();
    let mut z = Vec::with_capacity(model.n);
    for _ in 0..n0 {
        let mu = model.null_jitter_sd * rng.sample::<f64, _>(StandardNormal);
        z.push(mu + rng.sample::<f64, _>(StandardNormal));
    }
    if model.deterministic_grid {
        for mu in model.mean_grid() {
            z.push(mu + rng.sample::<f64, _>(StandardNormal));
        }
    } else {
        for _ in n0..model.n {
            let mu = model.nonnull_mean + model.nonnull_mean_sd * rng.sample::<f64, _>(StandardNormal);
            z.push(mu + rng.sample::<f64, _>(StandardNormal));
        }
    }
    ZSample::new(z)
}

pub fn generate(model: &SimModel, seed: u64) -> Result<ZSample> {
    generate_with(model, &mut replication_rng(seed, 0))
}

/// True local fdr of the model.
pub fn true_fdr(model: &SimModel, z: f64) -> f64 {
    let (s0, m1, s1) = model.components();
    let a = model.p0 * norm_pdf_ms(z, 0.0, s0);
    let b = (1.0 - model.p0) * norm_pdf_ms(z, m1, s1);
    a / (a + b)
}

/// True expected nonnull fdr, `int fdr(z) f1(z) dz`.
pub fn true_efdr1(model: &SimModel) -> f64 {
    let (_, m1, s1) = model.components();
    integrate(|z| true_fdr(model, z) * norm_pdf_ms(z, m1, s1), m1 - 12.0 * s1, m1 + 12.0 * s1, 1e-13)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StudyTable {
    T1,
    T3,
    T4,
}

impl std::str::FromStr for StudyTable {
    type Err = FdrError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "1" | "T1" | "t1" => Ok(Self::T1),
            "3" | "T3" | "t3" => Ok(Self::T3),
            "4" | "T4" | "t4" => Ok(Self::T4),
            _ => Err(FdrError::InvalidConfig(format!("unknown study table {s}; use 1, 3 or 4"))),
        }
    }
}

/// Pipeline settings shared by every replication.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub model: SimModel,
    pub bins: BinOptions,
    pub basis: BasisSpec,
    pub x0: f64,
    pub central_fraction: f64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            model: SimModel::exact_null(),
            // Spacing 0.1 puts bin centers on the evaluation points.
            bins: BinOptions { k_bins: 115, range: Some((-4.0, 7.4)), clip: false },
            basis: BasisSpec::default(),
            x0: DEFAULT_X0,
            central_fraction: DEFAULT_CENTRAL_FRACTION,
        }
    }
}

pub const T4_POINTS: [f64; 6] = [1.5, 2.0, 2.5, 3.0, 3.5, 4.0];

/// Everything recorded from one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Replication {
    pub efdr1_theo: f64,
    pub p1_theo: f64,
    pub efdr1_emp: f64,
    pub p1_emp: f64,
    /// `(delta0, sigma0, p0)` and formula sds.
    pub cm: [f64; 3],
    pub cm_sd: [f64; 3],
    pub mle: [f64; 3],
    pub mle_sd: [f64; 3],
    /// At [`T4_POINTS`]: `log fdr`, formula sd, `log Fdr` (right tail).
    pub theo_log_fdr: Vec<f64>,
    pub theo_formula: Vec<f64>,
    pub theo_log_tail: Vec<f64>,
    pub emp_log_fdr: Vec<f64>,
    pub emp_formula: Vec<f64>,
    pub emp_log_tail: Vec<f64>,
}

fn nearest_bin(centers: &[f64], z: f64) -> usize {
    let w = centers[1] - centers[0];
    (((z - centers[0]) / w).round().max(0.0) as usize).min(centers.len() - 1)
}

/// Run the full pipeline on one sample.
pub fn replicate(z: &ZSample, cfg: &StudyConfig) -> Result<Replication> {
    let hist = bin_z_values(z, &cfg.bins)?;
    let fit = fit_mixture_density(&hist, cfg.basis)?;
    let theo = theoretical_null(&fit, cfg.central_fraction)?;
    let cm = central_matching(&fit, cfg.central_fraction)?;
    let mle = mle_fit(z, cfg.x0)?;

    let efdr1_theo = efdr1(&fit, &local_fdr_bins(&fit, &theo))?;
    let efdr1_emp = efdr1(&fit, &local_fdr_bins(&fit, &cm))?;
    let cm_cov = cov_params_cm(&fit, &cm)?;
    let mle_cov = cov_params_mle(&mle)?;

    let theo_cov = cov_log_fdr_cm(&fit, &theo)?;
    let emp_cov = cov_log_fdr_cm(&fit, &cm)?;
    let at = |cov: &nalgebra::DMatrix<f64>| -> Vec<f64> {
        T4_POINTS
            .iter()
            .map(|&p| {
                let k = nearest_bin(&fit.centers, p);
                cov[(k, k)].max(0.0).sqrt()
            })
            .collect()
    };
    let log_fdr = |null| T4_POINTS.iter().map(|&p| local_fdr_ratio(&fit, null, p).ln()).collect();
    let log_tail = |null| {
        T4_POINTS
            .iter()
            .map(|&p| tail_fdr_ratio(&fit, null, Side::Right, p).map_or(f64::NAN, f64::ln))
            .collect()
    };
    Ok(Replication {
        efdr1_theo,
        p1_theo: 1.0 - theo.capped_p0(),
        efdr1_emp,
        p1_emp: 1.0 - cm.capped_p0(),
        cm: [cm.delta0, cm.sigma0, cm.p0],
        cm_sd: [cm_cov.sd[1], cm_cov.sd[2], cm_cov.sd[0]],
        mle: [mle.delta0, mle.sigma0, mle.p0],
        mle_sd: [mle_cov.sd[1], mle_cov.sd[2], mle_cov.sd[0]],
        theo_log_fdr: log_fdr(&theo),
        theo_formula: at(&theo_cov),
        theo_log_tail: log_tail(&theo),
        emp_log_fdr: log_fdr(&cm),
        emp_formula: at(&emp_cov),
        emp_log_tail: log_tail(&cm),
    })
}

/// Run `reps` replications in parallel. Failed replications are dropped and
/// their errors returned alongside the successes.
pub fn run_replications(cfg: &StudyConfig, reps: usize, seed: u64) -> (Vec<Replication>, Vec<(usize, String)>) {
    let results: Vec<(usize, Result<Replication>)> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = replication_rng(seed, r as u64);
            let out = generate_with(&cfg.model, &mut rng).and_then(|z| replicate(&z, cfg));
            (r, out)
        })
        .collect();
    let mut ok = Vec::with_capacity(reps);
    let mut dropped = Vec::new();
    for (r, res) in results {
        match res {
            Ok(v) => ok.push(v),
            Err(e) => {
                log::warn!("replication {r} dropped: {e}");
                dropped.push((r, e.to_string()));
            }
        }
    }
    (ok, dropped)
}

/// A table of study results: named rows of numbers under named columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub table: StudyTable,
    pub reps: usize,
    pub seed: u64,
    pub dropped: Vec<(usize, String)>,
    pub columns: Vec<String>,
    pub rows: Vec<(String, Vec<f64>)>,
    /// Oracle value of the expected nonnull fdr (Table 1 only).
    pub true_efdr1: Option<f64>,
}

impl StudyResult {
    pub fn cell(&self, row: &str, col: &str) -> Option<f64> {
        let c = self.columns.iter().position(|n| n == col)?;
        self.rows.iter().find(|(r, _)| r == row).map(|(_, v)| v[c])
    }

    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec![String::new()];
        header.extend(self.columns.iter().cloned());
        out.write_record(&header)?;
        for (name, vals) in &self.rows {
            let mut rec = vec![name.clone()];
            rec.extend(vals.iter().map(|v| format_sig(*v, 6)));
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_csv_file(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// Format with `sig` significant digits.
pub fn format_sig(v: f64, sig: usize) -> String {
    if !v.is_finite() {
        return if v.is_nan() { "NA".into() } else if v > 0.0 { "Inf".into() } else { "-Inf".into() };
    }
    if v == 0.0 {
        return "0".into();
    }
    let mag = v.abs().log10().floor() as i32;
    if !(-5..=15).contains(&mag) {
        return format!("{:.*e}", sig - 1, v);
    }
    let dec = (sig as i32 - 1 - mag).max(0) as usize;
    let s = format!("{v:.dec$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

pub fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (m, var.sqrt())
}

/// Summarize replications into the layout of the requested table.
pub fn summarize(table: StudyTable, model: &SimModel, reps: &[Replication]) -> (Vec<String>, Vec<(String, Vec<f64>)>) {
    let col = |f: &dyn Fn(&Replication) -> f64| reps.iter().map(f).collect::<Vec<f64>>();
    match table {
        StudyTable::T1 => {
            let cols = [
                col(&|r| r.efdr1_theo),
                col(&|r| r.p1_theo),
                col(&|r| r.efdr1_emp),
                col(&|r| r.p1_emp),
            ];
            let stats: Vec<(f64, f64)> = cols.iter().map(|c| mean_sd(c)).collect();
            let names = ["theoretical_efdr1", "theoretical_p1", "empirical_efdr1", "empirical_p1"];
            (
                names.iter().map(|s| s.to_string()).collect(),
                vec![
                    ("Mean".into(), stats.iter().map(|s| s.0).collect()),
                    ("Stdev".into(), stats.iter().map(|s| s.1).collect()),
                    ("Coefvar".into(), stats.iter().map(|s| s.1 / s.0).collect()),
                ],
            )
        }
        StudyTable::T3 => {
            let names = ["delta0", "sigma0", "p0"];
            let rows = (0..3)
                .map(|i| {
                    let (cm_m, cm_s) = mean_sd(&col(&|r| r.cm[i]));
                    let (cm_f, _) = mean_sd(&col(&|r| r.cm_sd[i]));
                    let (ml_m, ml_s) = mean_sd(&col(&|r| r.mle[i]));
                    let (ml_f, _) = mean_sd(&col(&|r| r.mle_sd[i]));
                    (names[i].to_string(), vec![cm_m, cm_s, cm_f, ml_m, ml_s, ml_f])
                })
                .collect();
            let cols = ["cm_mean", "cm_stdev", "cm_formula", "mle_mean", "mle_stdev", "mle_formula"];
            (cols.iter().map(|s| s.to_string()).collect(), rows)
        }
        StudyTable::T4 => {
            let rows = T4_POINTS
                .iter()
                .enumerate()
                .map(|(i, &z)| {
                    let sd = |f: &dyn Fn(&Replication) -> f64| mean_sd(&col(f)).1;
                    let mean = |f: &dyn Fn(&Replication) -> f64| mean_sd(&col(f)).0;
                    (
                        format!("{z:.1}"),
                        vec![
                            true_fdr(model, z),
                            sd(&|r| r.theo_log_fdr[i]),
                            mean(&|r| r.theo_formula[i]),
                            sd(&|r| r.theo_log_tail[i]),
                            sd(&|r| r.emp_log_fdr[i]),
                            mean(&|r| r.emp_formula[i]),
                            sd(&|r| r.emp_log_tail[i]),
                        ],
                    )
                })
                .collect();
            let cols = [
                "fdr",
                "theoretical_local",
                "theoretical_formula",
                "theoretical_tail",
                "empirical_local",
                "empirical_formula",
                "empirical_tail",
            ];
            (cols.iter().map(|s| s.to_string()).collect(), rows)
        }
    }
}

/// Run one of the replication studies.
pub fn run_study(table: StudyTable, reps: usize, seed: u64, cfg: &StudyConfig) -> Result<StudyResult> {
    if reps < 2 {
        return Err(FdrError::InvalidConfig(format!("{reps} replications; need at least 2")));
    }
    if reps < 50 {
        log::warn!("{reps} replications is below the 50 recommended for stable summaries");
    }
    let (ok, dropped) = run_replications(cfg, reps, seed);
    if ok.len() < 2 {
        return Err(FdrError::InvalidInput(format!("only {} replications succeeded", ok.len())));
    }
    let (columns, rows) = summarize(table, &cfg.model, &ok);
    Ok(StudyResult {
        table,
        reps,
        seed,
        dropped,
        columns,
        rows,
        true_efdr1: (table == StudyTable::T1).then(|| true_efdr1(&cfg.model)),
    })
}

/// Mean fitted fdr curves over replications of `cfg.model` on `grid`, for the
/// central-matching and theoretical nulls.
pub fn mean_fdr_curves(cfg: &StudyConfig, reps: usize, seed: u64, grid: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let curves: Vec<Result<(Vec<f64>, Vec<f64>)>> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let z = generate_with(&cfg.model, &mut replication_rng(seed, r as u64))?;
            let hist = bin_z_values(&z, &cfg.bins)?;
            let fit = fit_mixture_density(&hist, cfg.basis)?;
            let cm = central_matching(&fit, cfg.central_fraction)?;
            let th = theoretical_null(&fit, cfg.central_fraction)?;
            let f = |n| grid.iter().map(|&g| crate::fdr::local_fdr_at(&fit, n, g)).collect();
            Ok((f(&cm), f(&th)))
        })
        .collect();
    let ok: Vec<_> = curves.into_iter().filter_map(|c| c.ok()).collect();
    if ok.is_empty() {
        return Err(FdrError::InvalidInput("no replication succeeded".into()));
    }
    let n = ok.len() as f64;
    let avg = |sel: fn(&(Vec<f64>, Vec<f64>)) -> &Vec<f64>| {
        (0..grid.len()).map(|i| ok.iter().map(|c| sel(c)[i]).sum::<f64>() / n).collect()
    };
    Ok((avg(|c| &c.0), avg(|c| &c.1)))
}
