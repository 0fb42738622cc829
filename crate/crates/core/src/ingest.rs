//! Test statistics in, binned z-value histogram out.

use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{FdrError, Result};
use crate::special;

/// Below this many cases local fdr estimates are unreliable.
pub const MIN_RECOMMENDED_CASES: usize = 200;

/// Default number of histogram bins.
pub const DEFAULT_BINS: usize = 120;

/// A validated vector of z-values.
#[derive(Debug, Clone, PartialEq)]
pub struct ZSample {
    values: Vec<f64>,
    warnings: Vec<String>,
}

impl ZSample {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(FdrError::InvalidInput(format!("z-value {i} is not finite ({v})")));
        }
        let mut warnings = Vec::new();
        if values.len() < MIN_RECOMMENDED_CASES {
            let msg = format!(
                "only {} cases; local fdr estimation wants at least {MIN_RECOMMENDED_CASES}",
                values.len()
            );
            warn!("{msg}");
            warnings.push(msg);
        }
        Ok(Self { values, warnings })
    }

    /// Transform t statistics with `df` degrees of freedom to z-values.
    pub fn from_t(t: &[f64], df: u32) -> Result<Self> {
        let z = t
            .iter()
            .map(|&t| special::t_to_z(t, df))
            .collect::<Result<Vec<_>>>()?;
        Self::new(z)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }
}

/// Histogram of z-values on an equally spaced grid of bin centers.
///
/// Counts are stored as `f64`: observed histograms hold integers, but
/// perturbed and projected histograms carry fractional counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinnedCounts {
    pub centers: Vec<f64>,
    pub counts: Vec<f64>,
    pub width: f64,
    /// Sum of the counts, i.e. cases inside the binning range.
    pub n_total: f64,
    /// Cases that fell outside the range and were dropped.
    pub n_excluded: usize,
}

/// Options for [`bin_z_values`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinOptions {
    pub k_bins: usize,
    /// First and last bin centers. Defaults to the data span padded by one
    /// bin width on each side.
    pub range: Option<(f64, f64)>,
    /// Assign out-of-range values to the end bins instead of dropping them.
    pub clip: bool,
}

impl Default for BinOptions {
    fn default() -> Self {
        Self {
            k_bins: DEFAULT_BINS,
            range: None,
            clip: false,
        }
    }
}

impl BinnedCounts {
    /// Build a histogram from explicit counts on the grid `first_center + k * width`.
    pub fn from_counts(first_center: f64, width: f64, counts: Vec<f64>) -> Result<Self> {
        if !(width > 0.0) || !width.is_finite() {
            return Err(FdrError::InvalidInput(format!("bin width {width} must be positive")));
        }
        if counts.len() < 10 {
            return Err(FdrError::InvalidInput(format!(
                "{} bins; at least 10 are required",
                counts.len()
            )));
        }
        if counts.iter().any(|c| !c.is_finite()) {
            return Err(FdrError::InvalidInput("non-finite bin count".into()));
        }
        let centers = (0..counts.len())
            .map(|k| first_center + k as f64 * width)
            .collect();
        let n_total = counts.iter().sum();
        Ok(Self {
            centers,
            counts,
            width,
            n_total,
            n_excluded: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn lower_edge(&self) -> f64 {
        self.centers[0] - 0.5 * self.width
    }

    pub fn upper_edge(&self) -> f64 {
        self.centers[self.len() - 1] + 0.5 * self.width
    }

    /// Index of the bin whose center is closest to `z` (clamped to the grid).
    pub fn nearest_bin(&self, z: f64) -> usize {
        let k = ((z - self.centers[0]) / self.width).round();
        k.clamp(0.0, (self.len() - 1) as f64) as usize
    }

    /// Bin containing `z`, or `None` outside `[lower_edge, upper_edge]`.
    pub fn bin_of(&self, z: f64) -> Option<usize> {
        let lo = self.lower_edge();
        if z < lo || z > self.upper_edge() {
            return None;
        }
        let k = ((z - lo) / self.width).floor() as usize;
        Some(k.min(self.len() - 1))
    }

    /// Same grid with different counts.
    pub fn with_counts(&self, counts: Vec<f64>) -> Self {
        assert_eq!(counts.len(), self.len());
        let n_total = counts.iter().sum();
        Self {
            centers: self.centers.clone(),
            counts,
            width: self.width,
            n_total,
            n_excluded: 0,
        }
    }

    /// Count-weighted quantile of the bin centers (lower quantile of the
    /// step distribution putting mass `counts[k]` at `centers[k]`).
    pub fn weighted_quantile(&self, q: f64) -> f64 {
        let target = q * self.n_total;
        let mut acc = 0.0;
        for (x, y) in self.centers.iter().zip(&self.counts) {
            acc += y.max(0.0);
            if acc >= target {
                return *x;
            }
        }
        self.centers[self.len() - 1]
    }
}

/// Bin a z sample on an equally spaced grid.
pub fn bin_z_values(z: &ZSample, opts: &BinOptions) -> Result<BinnedCounts> {
    if z.is_empty() {
        return Err(FdrError::InvalidInput("empty sample".into()));
    }
    let k = opts.k_bins;
    if k < 10 {
        return Err(FdrError::InvalidConfig(format!("k_bins = {k}; at least 10 required")));
    }
    let (lo, hi) = match opts.range {
        Some((lo, hi)) => {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(FdrError::InvalidConfig(format!("invalid range [{lo}, {hi}]")));
            }
            (lo, hi)
        }
        None => {
            let (min, max) = z
                .values()
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
            if min == max {
                return Err(FdrError::DegenerateHistogram(format!("all z-values equal {min}")));
            }
            // K centers from min - width to max + width.
            let width = (max - min) / (k - 3) as f64;
            (min - width, max + width)
        }
    };
    let width = (hi - lo) / (k - 1) as f64;
    let mut counts = vec![0.0; k];
    let mut hist = BinnedCounts {
        centers: (0..k).map(|i| lo + i as f64 * width).collect(),
        counts: Vec::new(),
        width,
        n_total: 0.0,
        n_excluded: 0,
    };
    let mut excluded = 0usize;
    for &v in z.values() {
        match hist.bin_of(v) {
            Some(i) => counts[i] += 1.0,
            None if opts.clip => {
                let i = if v < lo { 0 } else { k - 1 };
                counts[i] += 1.0;
            }
            None => excluded += 1,
        }
    }
    if excluded > 0 {
        warn!("{excluded} z-values outside [{:.4}, {:.4}] were excluded", lo - width / 2.0, hi + width / 2.0);
    }
    hist.n_total = counts.iter().sum();
    hist.counts = counts;
    hist.n_excluded = excluded;
    Ok(hist)
}


/// Result of reading a statistics file.
#[derive(Debug, Clone, Default)]
pub struct ParsedInput {
    pub values: Vec<f64>,
    /// `(1-based line number, offending text)` for rows that did not parse.
    pub bad_rows: Vec<(usize, String)>,
}

impl ParsedInput {
    pub fn bad_fraction(&self) -> f64 {
        let total = self.values.len() + self.bad_rows.len();
        if total == 0 {
            0.0
        } else {
            self.bad_rows.len() as f64 / total as f64
        }
    }
}

/// Read statistics from a plain-text file (one number per line, `#` comments
/// and blank lines ignored) or, when `column` is given, from a named CSV column.
pub fn read_statistics(path: &Path, column: Option<&str>) -> Result<ParsedInput> {
    match column {
        Some(col) => read_csv_column(path, col),
        None => {
            let text = std::fs::read_to_string(path)?;
            Ok(parse_plain(&text))
        }
    }
}

pub fn parse_plain(text: &str) -> ParsedInput {
    let mut out = ParsedInput::default();
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        match t.parse::<f64>() {
            Ok(v) if v.is_finite() => out.values.push(v),
            _ => out.bad_rows.push((i + 1, t.to_string())),
        }
    }
    out
}

fn read_csv_column(path: &Path, column: &str) -> Result<ParsedInput> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let idx = rdr
        .headers()?
        .iter()
        .position(|h| h == column)
        .ok_or_else(|| FdrError::InvalidInput(format!("column '{column}' not found")))?;
    let mut out = ParsedInput::default();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let field = rec.get(idx).unwrap_or("");
        match field.parse::<f64>() {
            Ok(v) if v.is_finite() => out.values.push(v),
            _ => out.bad_rows.push((i + 2, field.to_string())),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(v: Vec<f64>) -> ZSample {
        ZSample::new(v).unwrap()
    }

    #[test]
    fn hiv_style_grid() {
        let z = sample((0..500).map(|i| -3.0 + 6.0 * i as f64 / 499.0).collect());
        let h = bin_z_values(&z, &BinOptions { k_bins: 41, range: Some((-4.0, 4.0)), clip: false }).unwrap();
        assert!((h.width - 0.2).abs() < 1e-12);
        for (k, c) in h.centers.iter().enumerate() {
            assert!((c - (-4.0 + 0.2 * k as f64)).abs() < 1e-12);
        }
        assert_eq!(h.n_total, 500.0);
        assert_eq!(h.counts[0], 0.0);
    }

    #[test]
    fn default_range_keeps_everything() {
        let z = sample((0..1500).map(|i| ((i * 7919) % 1500) as f64 / 100.0 - 7.0).collect());
        let h = bin_z_values(&z, &BinOptions::default()).unwrap();
        assert_eq!(h.len(), DEFAULT_BINS);
        assert_eq!(h.n_total, 1500.0);
        assert_eq!(h.n_excluded, 0);
    }

    #[test]
    fn out_of_range_excluded_or_clipped() {
        let mut v: Vec<f64> = (0..300).map(|i| (i as f64 / 300.0) - 0.5).collect();
        v.push(9.0);
        v.push(-9.0);
        let z = sample(v);
        let opts = BinOptions { k_bins: 20, range: Some((-1.0, 1.0)), clip: false };
        let h = bin_z_values(&z, &opts).unwrap();
        assert_eq!(h.n_total, 300.0);
        assert_eq!(h.n_excluded, 2);
        let h = bin_z_values(&z, &BinOptions { clip: true, ..opts }).unwrap();
        assert_eq!(h.n_total, 302.0);
        assert_eq!(h.counts[0], 1.0);
        assert_eq!(h.counts[19], 1.0);
    }

    #[test]
    fn errors() {
        assert!(ZSample::new(vec![1.0, f64::NAN]).is_err());
        let empty = ZSample::new(vec![]).unwrap();
        assert!(matches!(bin_z_values(&empty, &BinOptions::default()), Err(FdrError::InvalidInput(_))));
        let same = sample(vec![1.5; 300]);
        assert!(matches!(
            bin_z_values(&same, &BinOptions::default()),
            Err(FdrError::DegenerateHistogram(_))
        ));
        let z = sample(vec![0.0, 1.0]);
        assert!(bin_z_values(&z, &BinOptions { k_bins: 5, ..Default::default() }).is_err());
        assert!(bin_z_values(&z, &BinOptions { range: Some((1.0, 1.0)), ..Default::default() }).is_err());
    }

    #[test]
    fn small_sample_warns() {
        let z = sample(vec![0.1, 0.2]);
        assert_eq!(z.warnings().len(), 1);
    }

    #[test]
    fn plain_parsing_collects_bad_rows() {
        let p = parse_plain("# header\n1.5\n\n-2\nabc\n3e-1\n");
        assert_eq!(p.values, vec![1.5, -2.0, 0.3]);
        assert_eq!(p.bad_rows, vec![(5, "abc".to_string())]);
    }
}
