//! `lfdr`: local false discovery rate analysis from the command line.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{error, info};

use lfdr_core::analysis::{analyze_sample, AnalysisConfig, StatKind};
use lfdr_core::basis::BasisKind;
use lfdr_core::ingest::read_statistics;
use lfdr_core::null::NullMethod;
use lfdr_core::power::ProjectionMode;
use lfdr_core::report::{write_all, write_report};
use lfdr_core::simulate::{format_sig, run_study, StudyConfig, StudyTable};
use lfdr_core::FdrError;

/// Largest tolerated fraction of unparseable input rows.
const MAX_BAD_FRACTION: f64 = 0.01;

#[derive(Parser, Debug)]
#[command(name = "lfdr", version, about = "Local false discovery rates for large-scale testing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Estimate fdr for a file of statistics and write cases.csv, summary.json and plot.svg.
    Analyze {
        #[command(flatten)]
        input: InputArgs,
        /// Sample-size factors to project, e.g. 1.5,2,3.
        #[arg(long, value_delimiter = ',')]
        project: Vec<f64>,
        #[arg(long, default_value = "lfdr-out")]
        out: PathBuf,
    },
    /// Run a replication study and write its summary table as CSV.
    Simulate {
        /// 1, 3 or 4.
        #[arg(long)]
        table: StudyTable,
        #[arg(long, default_value_t = 100)]
        reps: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Output CSV file; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Projected expected nonnull fdr for studies `c` times larger.
    Project {
        #[command(flatten)]
        input: InputArgs,
        /// Comma-separated factors, each >= 1.
        #[arg(long = "c", value_delimiter = ',', required = true)]
        factors: Vec<f64>,
        #[arg(long, value_enum, default_value_t = ModeArg::Crude)]
        mode: ModeArg,
        /// Directory for projection.csv; standard output only when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct InputArgs {
    #[arg(long)]
    input: PathBuf,
    /// CSV column name; without it the file holds one number per line.
    #[arg(long)]
    column: Option<String>,
    #[arg(long, value_enum, default_value_t = StatArg::Z)]
    stat: StatArg,
    /// Degrees of freedom for t statistics.
    #[arg(long)]
    df: Option<u32>,
    #[arg(long, default_value_t = lfdr_core::ingest::DEFAULT_BINS)]
    bins: usize,
    /// First and last bin centers, LO:HI.
    #[arg(long, value_parser = parse_range, allow_hyphen_values = true)]
    range: Option<(f64, f64)>,
    #[arg(long, value_enum, default_value_t = BasisArg::Nspline)]
    basis: BasisArg,
    #[arg(long, default_value_t = 7)]
    basis_df: usize,
    #[arg(long, value_enum, default_value_t = NullArg::Mle)]
    null: NullArg,
    #[arg(long, default_value_t = lfdr_core::null::DEFAULT_X0)]
    x0: f64,
    /// Fraction of the count distribution trimmed from each side for central matching.
    #[arg(long, default_value_t = lfdr_core::null::DEFAULT_CENTRAL_FRACTION)]
    pct0: f64,
    #[arg(long, default_value_t = lfdr_core::fdr::DEFAULT_THRESHOLD)]
    threshold: f64,
    /// Recorded in the summary; the analysis itself is deterministic.
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum StatArg {
    Z,
    T,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum BasisArg {
    Poly,
    Nspline,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum NullArg {
    Theoretical,
    Cm,
    Mle,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum ModeArg {
    Crude,
    Adjusted,
}

fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(':').ok_or_else(|| format!("expected LO:HI, got '{s}'"))?;
    let lo: f64 = a.trim().parse().map_err(|_| format!("bad lower bound '{a}'"))?;
    let hi: f64 = b.trim().parse().map_err(|_| format!("bad upper bound '{b}'"))?;
    if !(lo < hi) {
        return Err(format!("range {lo}:{hi} is empty"));
    }
    Ok((lo, hi))
}

/// Failure with the process exit code it maps to.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Data(String),
    Numerical(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Numerical(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Numerical(m) => m,
        }
    }
}

impl From<FdrError> for Failure {
    fn from(e: FdrError) -> Self {
        let msg = match e.stage() {
            Some(stage) => format!("{stage}: {e}"),
            None => e.to_string(),
        };
        match e {
            FdrError::InvalidConfig(_) => Failure::Usage(msg),
            _ if e.is_numerical() => Failure::Numerical(msg),
            _ => Failure::Data(msg),
        }
    }
}

fn build_config(a: &InputArgs, project: Vec<f64>, mode: ProjectionMode, out: PathBuf) -> AnalysisConfig {
    AnalysisConfig {
        input: a.input.clone(),
        column: a.column.clone(),
        stat: match a.stat {
            StatArg::Z => StatKind::Z,
            StatArg::T => StatKind::T,
        },
        df: a.df,
        bins: a.bins,
        range: a.range,
        basis: match a.basis {
            BasisArg::Poly => BasisKind::Polynomial,
            BasisArg::Nspline => BasisKind::NaturalSpline,
        },
        basis_df: a.basis_df,
        null: match a.null {
            NullArg::Theoretical => NullMethod::Theoretical,
            NullArg::Cm => NullMethod::CentralMatching,
            NullArg::Mle => NullMethod::Mle,
        },
        x0: a.x0,
        central_fraction: a.pct0,
        threshold: a.threshold,
        project,
        projection_mode: mode,
        out,
        seed: a.seed,
    }
}

fn load(cfg: &AnalysisConfig) -> Result<lfdr_core::analysis::Analysis, Failure> {
    cfg.validate()?;
    if !cfg.input.is_file() {
        return Err(Failure::Usage(format!("input file {} not found", cfg.input.display())));
    }
    let parsed = read_statistics(&cfg.input, cfg.column.as_deref())?;
    for (line, text) in parsed.bad_rows.iter().take(20) {
        error!("line {line}: cannot parse '{text}'");
    }
    if parsed.values.is_empty() {
        return Err(Failure::Usage(format!("{} holds no statistics", cfg.input.display())));
    }
    if parsed.bad_fraction() > MAX_BAD_FRACTION {
        return Err(Failure::Data(format!(
            "{} of {} rows did not parse (limit {:.0}%)",
            parsed.bad_rows.len(),
            parsed.values.len() + parsed.bad_rows.len(),
            100.0 * MAX_BAD_FRACTION
        )));
    }
    let z = cfg.to_z(parsed.values)?;
    Ok(analyze_sample(z, cfg)?)
}

fn analyze(input: InputArgs, project: Vec<f64>, out: PathBuf) -> Result<(), Failure> {
    let cfg = build_config(&input, project, ProjectionMode::Crude, out);
    let a = load(&cfg)?;
    let files = write_report(&a, &cfg, &cfg.out)?;
    println!(
        "{} cases, null {} (delta0 {:.4}, sigma0 {:.4}, p0 {:.4}); {} flagged at fdr <= {} ({} left, {} right); Efdr1 {:.3}",
        a.z.len(),
        a.null.method,
        a.null.delta0,
        a.null.sigma0,
        a.null.p0,
        a.fdr.flagged_left.len() + a.fdr.flagged_right.len(),
        cfg.threshold,
        a.fdr.flagged_left.len(),
        a.fdr.flagged_right.len(),
        a.power.efdr1
    );
    for f in files {
        info!("wrote {}", f.display());
    }
    Ok(())
}

fn simulate(table: StudyTable, reps: usize, seed: u64, out: Option<&Path>) -> Result<(), Failure> {
    let res = run_study(table, reps, seed, &StudyConfig::default())?;
    match out {
        Some(p) => res.write_csv_file(p)?,
        None => res.write_csv(std::io::stdout().lock())?,
    }
    if let Some(t) = res.true_efdr1 {
        info!("true Efdr1 = {t:.4}");
    }
    if !res.dropped.is_empty() {
        for (rep, msg) in &res.dropped {
            error!("replication {rep} dropped: {msg}");
        }
        return Err(Failure::Numerical(format!("{} of {reps} replications dropped", res.dropped.len())));
    }
    Ok(())
}

fn project(input: InputArgs, factors: Vec<f64>, mode: ModeArg, out: Option<PathBuf>) -> Result<(), Failure> {
    let mode = match mode {
        ModeArg::Crude => ProjectionMode::Crude,
        ModeArg::Adjusted => ProjectionMode::Adjusted,
    };
    let cfg = build_config(&input, factors, mode, out.clone().unwrap_or_default());
    let a = load(&cfg)?;
    let mut csv = String::from("c,efdr1\n");
    for p in &a.power.projections {
        csv.push_str(&format!("{},{}\n", format_sig(p.c, 6), format_sig(p.efdr1, 6)));
    }
    print!("{csv}");
    if let Some(dir) = out {
        write_all(&dir, &[("projection.csv", csv)])?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Analyze { input, project: p, out } => analyze(input, p, out),
        Command::Simulate { table, reps, seed, out } => simulate(table, reps, seed, out.as_deref()),
        Command::Project { input, factors, mode, out } => project(input, factors, mode, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn range_parsing() {
        assert_eq!(parse_range("-4:7.4").unwrap(), (-4.0, 7.4));
        assert!(parse_range("3:1").is_err());
        assert!(parse_range("3").is_err());
    }

    #[test]
    fn config_errors_are_usage() {
        let f: Failure = FdrError::InvalidConfig("x".into()).into();
        assert_eq!(f.code(), 1);
        let f: Failure = FdrError::NoNullPeak { beta2: 1.0 }.into();
        assert_eq!(f.code(), 3);
        let f: Failure = FdrError::InvalidInput("x".into()).into();
        assert_eq!(f.code(), 2);
    }
}
