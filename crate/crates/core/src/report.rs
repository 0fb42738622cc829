//! Output files for an analysis: `cases.csv`, `summary.json` and `plot.svg`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::analysis::{Analysis, AnalysisConfig, NullEstimate};
use crate::error::Result;
use crate::fdr::ThresholdSummary;
use crate::null::NullMethod;
use crate::power::Projection;
use crate::simulate::format_sig;

pub const CASES_FILE: &str = "cases.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const PLOT_FILE: &str = "plot.svg";

#[derive(Debug, Serialize)]
struct Histogram {
    bins: usize,
    first_center: f64,
    width: f64,
    n_in_range: f64,
    n_excluded: usize,
}

#[derive(Debug, Serialize)]
struct DensityFit {
    converged: bool,
    iterations: usize,
    deviance: f64,
    max_score: f64,
}

#[derive(Debug, Serialize)]
struct Summary<'a> {
    config: &'a AnalysisConfig,
    n_cases: usize,
    histogram: Histogram,
    density: DensityFit,
    null_method: NullMethod,
    nulls: &'a [NullEstimate],
    efdr1: f64,
    p1_hat: f64,
    g1: &'a [(f64, f64)],
    threshold: &'a ThresholdSummary,
    flagged_left: usize,
    flagged_right: usize,
    lehmann_alpha_left: Option<f64>,
    lehmann_alpha_right: Option<f64>,
    projections: &'a [Projection],
    warnings: &'a [String],
}

pub fn cases_csv(a: &Analysis) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["index", "z", "fdr", "Fdr_left", "Fdr_right", "sd_log_fdr", "flagged"])?;
    let sd = a.case_sd_log_fdr();
    let flagged = a.is_flagged();
    for (i, &z) in a.z.values().iter().enumerate() {
        w.write_record([
            (i + 1).to_string(),
            format_sig(z, 6),
            format_sig(a.fdr.per_case_fdr[i], 6),
            format_sig(a.fdr.case_fdr_left[i], 6),
            format_sig(a.fdr.case_fdr_right[i], 6),
            format_sig(sd[i], 6),
            flagged[i].to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn summary_json(a: &Analysis, cfg: &AnalysisConfig) -> Result<String> {
    let s = Summary {
        config: cfg,
        n_cases: a.z.len(),
        histogram: Histogram {
            bins: a.hist.len(),
            first_center: a.hist.centers[0],
            width: a.hist.width,
            n_in_range: a.hist.n_total,
            n_excluded: a.hist.n_excluded,
        },
        density: DensityFit {
            converged: a.fit.converged,
            iterations: a.fit.iterations,
            deviance: a.fit.deviance,
            max_score: a.fit.max_score,
        },
        null_method: a.null.method,
        nulls: &a.estimates,
        efdr1: a.power.efdr1,
        p1_hat: a.power.p1_hat,
        g1: &a.power.g1_curve,
        threshold: &a.fdr.summary,
        flagged_left: a.fdr.flagged_left.len(),
        flagged_right: a.fdr.flagged_right.len(),
        lehmann_alpha_left: a.fdr.lehmann_alpha_left,
        lehmann_alpha_right: a.fdr.lehmann_alpha_right,
        projections: &a.power.projections,
        warnings: &a.warnings,
    };
    let mut out = serde_json::to_string_pretty(&s)?;
    out.push('\n');
    Ok(out)
}

const W: f64 = 760.0;
const H: f64 = 480.0;
const MARGIN: (f64, f64, f64, f64) = (60.0, 30.0, 50.0, 60.0); // left, top, bottom, right

/// Scale applied to the nonnull bars drawn below the axis. `None` picks a
/// divisor so the tallest bar reaches a quarter of the largest count.
fn nonnull_divisor(counts: &[f64], nonnull: &[f64], fixed: Option<f64>) -> f64 {
    if let Some(d) = fixed {
        return d;
    }
    let ymax = counts.iter().cloned().fold(0.0, f64::max);
    let nmax = nonnull.iter().cloned().fold(0.0, f64::max);
    if nmax <= 0.0 || ymax <= 0.0 {
        return 1.0;
    }
    (4.0 * nmax / ymax).max(1.0).ceil()
}

/// Static SVG: histogram, scaled null density, fdr curve on a right-hand
/// [0, 1] axis, and nonnull counts drawn below zero.
pub fn plot_svg(a: &Analysis, divisor: Option<f64>) -> String {
    let x = &a.hist.centers;
    let y = &a.hist.counts;
    let w = a.hist.width;
    let nonnull = &a.power.nonnull_counts;
    let div = nonnull_divisor(y, nonnull, divisor);
    let (ml, mt, mb, mr) = MARGIN;
    let (pw, ph) = (W - ml - mr, H - mt - mb);

    let null_counts: Vec<f64> =
        x.iter().map(|&v| a.hist.n_total * w * a.null.log_subdensity(v).exp()).collect();
    let ymax = y.iter().chain(&null_counts).cloned().fold(1.0, f64::max) * 1.05;
    let ymin = -nonnull.iter().cloned().fold(0.0, f64::max) / div * 1.05 - 0.02 * ymax;
    let (x0, x1) = (x[0] - w / 2.0, x[x.len() - 1] + w / 2.0);
    let sx = |v: f64| ml + (v - x0) / (x1 - x0) * pw;
    let sy = |v: f64| mt + (ymax - v) / (ymax - ymin) * ph;
    let sf = |f: f64| mt + (1.0 - f) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>"#);

    let bw = pw * w / (x1 - x0);
    for (k, &c) in x.iter().enumerate() {
        let left = sx(c - w / 2.0);
        if y[k] > 0.0 {
            let _ = writeln!(
                s,
                r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#c8d4e3" stroke="#7f93ad" stroke-width="0.5"/>"##,
                left,
                sy(y[k]),
                bw,
                sy(0.0) - sy(y[k])
            );
        }
        if nonnull[k] > 0.0 {
            let _ = writeln!(
                s,
                r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#d9534f"/>"##,
                left,
                sy(0.0),
                bw,
                sy(-nonnull[k] / div) - sy(0.0)
            );
        }
    }

    let path = |pts: &mut dyn Iterator<Item = (f64, f64)>| {
        let mut p = String::new();
        for (i, (px, py)) in pts.enumerate() {
            let _ = write!(p, "{}{:.2},{:.2} ", if i == 0 { "M" } else { "L" }, px, py);
        }
        p
    };
    let null_path = path(&mut x.iter().zip(&null_counts).map(|(&v, &c)| (sx(v), sy(c))));
    let _ = writeln!(s, r##"<path d="{null_path}" fill="none" stroke="#2a6f2a" stroke-width="2" stroke-dasharray="6,3"/>"##);
    let fdr_path = path(&mut x.iter().zip(&a.fdr.per_bin_fdr).map(|(&v, &f)| (sx(v), sf(f))));
    let _ = writeln!(s, r##"<path d="{fdr_path}" fill="none" stroke="#1f3b99" stroke-width="2"/>"##);

    // Axes.
    let _ = writeln!(s, r##"<line x1="{ml}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black"/>"##, sy(0.0), ml + pw, sy(0.0));
    let _ = writeln!(s, r##"<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{:.2}" stroke="black"/>"##, mt + ph);
    let _ = writeln!(s, r##"<line x1="{:.2}" y1="{mt}" x2="{:.2}" y2="{:.2}" stroke="#1f3b99"/>"##, ml + pw, ml + pw, mt + ph);
    let (t0, t1) = (x0.ceil() as i64, x1.floor() as i64);
    for t in t0..=t1 {
        let px = sx(t as f64);
        let _ = writeln!(s, r##"<line x1="{px:.2}" y1="{:.2}" x2="{px:.2}" y2="{:.2}" stroke="black"/>"##, mt + ph, mt + ph + 5.0);
        let _ = writeln!(s, r##"<text x="{px:.2}" y="{:.2}" text-anchor="middle">{t}</text>"##, mt + ph + 18.0);
    }
    let step = nice_step(ymax);
    let mut t = 0.0;
    while t <= ymax {
        let py = sy(t);
        let _ = writeln!(s, r##"<line x1="{:.2}" y1="{py:.2}" x2="{ml}" y2="{py:.2}" stroke="black"/>"##, ml - 5.0);
        let _ = writeln!(s, r##"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##, ml - 8.0, py + 4.0, format_sig(t, 4));
        t += step;
    }
    for f in [0.0, 0.2, 0.4, 0.6, 0.8, 1.0] {
        let py = sf(f);
        let _ = writeln!(s, r##"<text x="{:.2}" y="{:.2}" fill="#1f3b99">{f:.1}</text>"##, ml + pw + 6.0, py + 4.0);
    }
    let _ = writeln!(s, r##"<text x="{:.2}" y="{:.2}" text-anchor="middle">z</text>"##, ml + pw / 2.0, H - 12.0);
    let _ = writeln!(s, r##"<text x="14" y="{:.2}" transform="rotate(-90 14 {:.2})" text-anchor="middle">count</text>"##, mt + ph / 2.0, mt + ph / 2.0);

    let legend = [
        ("#c8d4e3", "z histogram"),
        ("#2a6f2a", &format!("null {} (p0 = {:.3})", a.null.method, a.null.capped_p0()) as &str),
        ("#1f3b99", "fdr (right axis)"),
        ("#d9534f", &format!("nonnull counts / {}", format_sig(div, 4)) as &str),
    ];
    for (i, (color, label)) in legend.iter().enumerate() {
        let ly = mt + 10.0 + 16.0 * i as f64;
        let lx = ml + pw - 230.0;
        let _ = writeln!(s, r##"<rect x="{lx:.2}" y="{:.2}" width="12" height="10" fill="{color}"/>"##, ly - 9.0);
        let _ = writeln!(s, r##"<text x="{:.2}" y="{ly:.2}">{label}</text>"##, lx + 18.0);
    }
    s.push_str("</svg>\n");
    s
}

fn nice_step(max: f64) -> f64 {
    let raw = max / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let r = raw / mag;
    let m = if r < 1.5 { 1.0 } else if r < 3.5 { 2.0 } else if r < 7.5 { 5.0 } else { 10.0 };
    m * mag
}

/// Write `files` into `dir` so that either all of them appear or none do.
pub fn write_all(dir: &Path, files: &[(&str, String)]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let tmp: Vec<PathBuf> = files.iter().map(|(n, _)| dir.join(format!(".{n}.partial"))).collect();
    let cleanup = |upto: usize| {
        for p in &tmp[..upto] {
            let _ = fs::remove_file(p);
        }
    };
    for (i, ((_, body), path)) in files.iter().zip(&tmp).enumerate() {
        if let Err(e) = fs::write(path, body) {
            cleanup(i + 1);
            return Err(e.into());
        }
    }
    let mut done = Vec::new();
    for ((name, _), path) in files.iter().zip(&tmp) {
        let dest = dir.join(name);
        fs::rename(path, &dest)?;
        done.push(dest);
    }
    Ok(done)
}

/// Render and write the three report files.
pub fn write_report(a: &Analysis, cfg: &AnalysisConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    let files = [
        (CASES_FILE, cases_csv(a)?),
        (SUMMARY_FILE, summary_json(a, cfg)?),
        (PLOT_FILE, plot_svg(a, None)),
    ];
    write_all(dir, &files)
}
