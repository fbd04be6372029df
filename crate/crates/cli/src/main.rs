//! Command-line front end wiring ingestion, synthesis, planning, the
//! experiment harness, and report rendering into one binary.
//!
//! Exit codes: 0 success; 2 configuration error (bad flags, bad config
//! file, invalid factor table); 3 data error (unreadable or malformed
//! inputs, degenerate correlation); 4 experiment finished but some runs
//! failed (their records carry failure tags in the results CSV).

mod config;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use pricecast::harness::{
    self, render_correlation_csv, render_correlation_interpretation, ReportFormat,
};
use pricecast::ingest::{self, PriceSeries, SplitSpec};
use pricecast::models::Architecture;
use pricecast::oed::{self, FactorTable};
use pricecast::synth::{self, SynthKind, SynthSpec};

use config::ConfigFile;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
    #[error("{0} of {1} runs failed; see the results CSV status column")]
    PartialFailures(usize, usize),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::PartialFailures(..) => 4,
        }
    }
}

#[derive(Parser)]
#[command(
    name = "pricecast",
    version,
    about = "Train small forecasting networks on sliding windows and measure how little their error metrics say about price direction"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate price CSVs and report integrity plus a persistence estimate
    Ingest {
        /// CSV file or directory of CSVs
        #[arg(long)]
        data: PathBuf,
        /// Optional report CSV path
        #[arg(long)]
        out: Option<PathBuf>,
        /// Screening threshold on the scaling-fit R² (advisory)
        #[arg(long, default_value_t = 0.9)]
        fit_r2_threshold: f64,
    },
    /// Generate deterministic synthetic series as input CSVs
    Synth {
        /// random_walk | trending | mean_reverting | sine_plus_noise | mirrored_pair
        #[arg(long, conflicts_with = "battery")]
        kind: Option<String>,
        #[arg(long)]
        length: Option<usize>,
        #[arg(long, default_value_t = 0.0)]
        drift: f64,
        #[arg(long, default_value_t = 1.0)]
        noise: f64,
        #[arg(long)]
        seed: Option<u64>,
        /// Emit the standard 24-series battery instead of one series
        #[arg(long)]
        battery: bool,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
    },
    /// Emit the 16-row orthogonal experiment plan
    Plan {
        /// Factor table TOML; omit for the default levels
        #[arg(long)]
        factors: Option<PathBuf>,
        /// Plan CSV path; stdout if omitted
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the full study: train, evaluate, detect divergences, correlate
    Experiment {
        /// Directory of input CSVs
        #[arg(long)]
        data: Option<PathBuf>,
        /// Use the built-in synthetic battery instead of --data
        #[arg(long)]
        battery: bool,
        /// train_end,test_start,test_end (ISO dates)
        #[arg(long)]
        split: Option<String>,
        /// Base seed; every run's seed derives from it
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        factors: Option<PathBuf>,
        /// Comma-separated list: mlp,rnn,lstm,gru,birnn,bilstm
        #[arg(long)]
        arch: Option<String>,
        /// Worker threads; output bytes do not depend on this
        #[arg(long)]
        jobs: Option<usize>,
        /// best-per-stock | all-runs
        #[arg(long)]
        pooling: Option<String>,
        /// csv | md
        #[arg(long)]
        format: Option<String>,
        /// MAE gap at or under which opposite directions count as a conflict
        #[arg(long)]
        gap_threshold: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// TOML config file; flags override its values
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Correlation matrix from an existing results CSV
    Correlate {
        #[arg(long)]
        results: PathBuf,
        /// best-per-stock | all-runs
        #[arg(long)]
        pooling: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-render report files from an existing results CSV
    Report {
        #[arg(long)]
        results: PathBuf,
        /// csv | md
        #[arg(long)]
        format: Option<String>,
        #[arg(long, default_value_t = 0.01)]
        gap_threshold: f64,
        /// best-per-stock | all-runs
        #[arg(long)]
        pooling: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Ingest {
            data,
            out,
            fit_r2_threshold,
        } => cmd_ingest(&data, out.as_deref(), fit_r2_threshold),
        Command::Synth {
            kind,
            length,
            drift,
            noise,
            seed,
            battery,
            out,
        } => cmd_synth(kind, length, drift, noise, seed, battery, &out),
        Command::Plan { factors, out } => cmd_plan(factors.as_deref(), out.as_deref()),
        Command::Experiment {
            data,
            battery,
            split,
            seed,
            factors,
            arch,
            jobs,
            pooling,
            format,
            gap_threshold,
            out,
            config,
        } => cmd_experiment(ExperimentArgs {
            data,
            battery,
            split,
            seed,
            factors,
            arch,
            jobs,
            pooling,
            format,
            gap_threshold,
            out,
            config,
        }),
        Command::Correlate {
            results,
            pooling,
            out,
        } => cmd_correlate(&results, pooling.as_deref(), &out),
        Command::Report {
            results,
            format,
            gap_threshold,
            pooling,
            out,
        } => cmd_report(&results, format.as_deref(), gap_threshold, pooling.as_deref(), &out),
    }
}

// ---------------------------------------------------------------------------
// ingest
// ---------------------------------------------------------------------------

struct IngestRow {
    file: String,
    rows: usize,
    missing: usize,
    nonpositive: usize,
    duplicates: usize,
    outcome: Result<(f64, f64, bool), String>,
}

fn csv_files(data: &Path) -> Result<Vec<PathBuf>, CliError> {
    if data.is_file() {
        return Ok(vec![data.to_path_buf()]);
    }
    let entries = std::fs::read_dir(data)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", data.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .map(|x| x.eq_ignore_ascii_case("csv"))
                .unwrap_or(false)
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::Data(format!(
            "no CSV files under {}",
            data.display()
        )));
    }
    Ok(files)
}

fn symbol_of(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "unknown".into())
}

/// Integrity counts plus the persistence screen for one file. The
/// persistence estimate runs on first differences of the min-max
/// normalized closes (scale fitted over the whole file).
fn ingest_one(path: &Path, threshold: f64) -> IngestRow {
    let file = path.display().to_string();
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => {
            return IngestRow {
                file,
                rows: 0,
                missing: 0,
                nonpositive: 0,
                duplicates: 0,
                outcome: Err(format!("unreadable: {e}")),
            }
        }
    };
    let (rows, missing, nonpositive, duplicates) =
        match ingest::parse_price_csv_raw(text.as_bytes()) {
            Ok(raw) => {
                let report = ingest::verify_integrity_raw(&raw);
                (
                    raw.len(),
                    report.missing_value_count,
                    report.nonpositive_price_count,
                    report.duplicate_date_count,
                )
            }
            Err(e) => {
                return IngestRow {
                    file,
                    rows: 0,
                    missing: 0,
                    nonpositive: 0,
                    duplicates: 0,
                    outcome: Err(e.to_string()),
                }
            }
        };
    let outcome = (|| -> Result<(f64, f64, bool), String> {
        let series =
            ingest::load_price_csv(text.as_bytes(), &symbol_of(path)).map_err(|e| e.to_string())?;
        let norm =
            ingest::normalize_minmax(&series, 0..series.len()).map_err(|e| e.to_string())?;
        let diffs: Vec<f64> = norm.values().windows(2).map(|w| w[1] - w[0]).collect();
        let estimate = ingest::hurst_exponent(&diffs).map_err(|e| e.to_string())?;
        Ok((
            estimate.h,
            estimate.fit_r_squared,
            estimate.fit_r_squared >= threshold,
        ))
    })();
    IngestRow {
        file,
        rows,
        missing,
        nonpositive,
        duplicates,
        outcome,
    }
}

fn cmd_ingest(data: &Path, out: Option<&Path>, threshold: f64) -> Result<(), CliError> {
    let files = csv_files(data)?;
    let rows: Vec<IngestRow> = files.iter().map(|f| ingest_one(f, threshold)).collect();

    let mut csv = String::from(
        "file,rows,missing_values,nonpositive_prices,duplicate_dates,hurst,fit_r2,screen,status\n",
    );
    let mut failures = 0usize;
    for row in &rows {
        match &row.outcome {
            Ok((h, r2, pass)) => {
                println!(
                    "{}: {} rows, missing {}, nonpositive {}, duplicate dates {}, H {:.4} (fit R² {:.4}, screen {})",
                    row.file,
                    row.rows,
                    row.missing,
                    row.nonpositive,
                    row.duplicates,
                    h,
                    r2,
                    if *pass { "pass" } else { "below threshold" }
                );
                writeln!(
                    csv,
                    "{},{},{},{},{},{:.6},{:.6},{},ok",
                    row.file,
                    row.rows,
                    row.missing,
                    row.nonpositive,
                    row.duplicates,
                    h,
                    r2,
                    if *pass { "pass" } else { "fail" }
                )
                .expect("string write cannot fail");
            }
            Err(reason) => {
                failures += 1;
                println!("{}: FAILED — {}", row.file, reason);
                writeln!(
                    csv,
                    "{},{},{},{},{},,,,{}",
                    row.file,
                    row.rows,
                    row.missing,
                    row.nonpositive,
                    row.duplicates,
                    reason.replace(',', ";")
                )
                .expect("string write cannot fail");
            }
        }
    }
    if let Some(out) = out {
        std::fs::write(out, csv)
            .map_err(|e| CliError::Data(format!("cannot write {}: {e}", out.display())))?;
        println!("report written to {}", out.display());
    }
    if failures > 0 {
        return Err(CliError::Data(format!(
            "{failures} of {} files failed ingest",
            rows.len()
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

fn series_to_csv(series: &PriceSeries) -> String {
    let mut out = String::from("Date,Close\n");
    for obs in series.observations() {
        writeln!(out, "{},{}", obs.date, obs.close).expect("string write cannot fail");
    }
    out
}

fn write_series(series: &PriceSeries, dir: &Path) -> Result<PathBuf, CliError> {
    let path = dir.join(format!("{}.csv", series.symbol()));
    std::fs::write(&path, series_to_csv(series))
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))?;
    Ok(path)
}

fn cmd_synth(
    kind: Option<String>,
    length: Option<usize>,
    drift: f64,
    noise: f64,
    seed: Option<u64>,
    battery: bool,
    out: &Path,
) -> Result<(), CliError> {
    std::fs::create_dir_all(out)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", out.display())))?;
    if battery {
        for series in synth::battery() {
            let path = write_series(&series, out)?;
            println!("{}", path.display());
        }
        return Ok(());
    }
    let kind = kind.ok_or_else(|| CliError::Config("--kind is required without --battery".into()))?;
    let kind = SynthKind::parse(&kind)
        .ok_or_else(|| CliError::Config(format!("unknown kind `{kind}`")))?;
    let length =
        length.ok_or_else(|| CliError::Config("--length is required without --battery".into()))?;
    let seed = seed.ok_or_else(|| CliError::Config("--seed is required without --battery".into()))?;
    let generated = synth::generate(&SynthSpec {
        kind,
        length,
        drift,
        noise_scale: noise,
        seed,
    })
    .map_err(|e| CliError::Config(e.to_string()))?;
    if generated.floored {
        eprintln!("warning: prices hit the positivity floor; spec may be degenerate");
    }
    let path = write_series(&generated.series, out)?;
    println!("{}", path.display());
    if let Some(mirror) = &generated.mirror {
        let path = write_series(mirror, out)?;
        println!("{}", path.display());
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// plan
// ---------------------------------------------------------------------------

fn load_factors(path: Option<&Path>) -> Result<FactorTable, CliError> {
    match path {
        None => Ok(FactorTable::default()),
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
            FactorTable::from_toml(&text).map_err(|e| CliError::Config(e.to_string()))
        }
    }
}

fn plan_csv(factors: &FactorTable) -> Result<String, CliError> {
    let plan = oed::generate_plan(factors).map_err(|e| CliError::Config(e.to_string()))?;
    let mut out = String::from("plan_row,L,H,N,E,F\n");
    for a in &plan {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            a.plan_row,
            a.window_length,
            a.hop,
            a.hidden_nodes,
            a.epochs,
            a.activation.token()
        )
        .expect("string write cannot fail");
    }
    Ok(out)
}

fn cmd_plan(factors: Option<&Path>, out: Option<&Path>) -> Result<(), CliError> {
    let table = load_factors(factors)?;
    let csv = plan_csv(&table)?;
    match out {
        Some(path) => {
            std::fs::write(path, csv)
                .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))?;
            println!("plan written to {}", path.display());
        }
        None => print!("{csv}"),
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// experiment
// ---------------------------------------------------------------------------

struct ExperimentArgs {
    data: Option<PathBuf>,
    battery: bool,
    split: Option<String>,
    seed: Option<u64>,
    factors: Option<PathBuf>,
    arch: Option<String>,
    jobs: Option<usize>,
    pooling: Option<String>,
    format: Option<String>,
    gap_threshold: Option<f64>,
    out: Option<PathBuf>,
    config: Option<PathBuf>,
}

/// The canonical split for battery series: 140 training days, a 60-day
/// test interval.
fn battery_split() -> SplitSpec {
    let base = synth::base_date();
    SplitSpec::new(
        base + chrono::Days::new(139),
        base + chrono::Days::new(140),
        base + chrono::Days::new(199),
    )
    .expect("battery split dates are ordered")
}

fn load_stock_dir(dir: &Path) -> Result<Vec<PriceSeries>, CliError> {
    let mut stocks = Vec::new();
    for path in csv_files(dir)? {
        let text = std::fs::read_to_string(&path)
            .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
        let series = ingest::load_price_csv(text.as_bytes(), &symbol_of(&path))
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        stocks.push(series);
    }
    Ok(stocks)
}

fn map_harness_err(e: harness::HarnessError) -> CliError {
    CliError::Data(e.to_string())
}

fn cmd_experiment(args: ExperimentArgs) -> Result<(), CliError> {
    let file = match &args.config {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::default(),
    };

    // flags win over config-file values
    let battery = args.battery || file.battery.unwrap_or(false);
    let data = args.data.or(file.data);
    let seed = args
        .seed
        .or(file.seed)
        .ok_or_else(|| CliError::Config("--seed is required (no silent nondeterminism)".into()))?;
    let out = args
        .out
        .or(file.out)
        .ok_or_else(|| CliError::Config("--out is required".into()))?;
    let split_text = args.split.or(file.split);
    let factors_path = args.factors.or(file.factors);
    let arch_text = args.arch.or(file.arch);
    let jobs = args.jobs.or(file.jobs);
    let pooling = match args.pooling.or(file.pooling) {
        Some(text) => config::parse_pooling(&text)?,
        None => harness::Pooling::BestPerStock,
    };
    let format = match args.format.or(file.format) {
        Some(text) => config::parse_format(&text)?,
        None => ReportFormat::Csv,
    };
    let gap_threshold = args.gap_threshold.or(file.gap_threshold).unwrap_or(0.01);

    let stocks = match (battery, data) {
        (true, None) => synth::battery(),
        (false, Some(dir)) => load_stock_dir(&dir)?,
        (true, Some(_)) => {
            return Err(CliError::Config(
                "--battery and --data are mutually exclusive".into(),
            ))
        }
        (false, None) => {
            return Err(CliError::Config(
                "either --data or --battery is required".into(),
            ))
        }
    };
    let split = match split_text {
        Some(text) => config::parse_split(&text)?,
        None if battery => battery_split(),
        None => return Err(CliError::Config("--split is required with --data".into())),
    };
    let factors = load_factors(factors_path.as_deref())?;
    let plan = oed::generate_plan(&factors).map_err(|e| CliError::Config(e.to_string()))?;
    let architectures = match arch_text {
        Some(text) => config::parse_arch_list(&text)?,
        None => Architecture::ALL.to_vec(),
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Config(e.to_string()))?;
    let output = pool
        .install(|| {
            harness::run_full_pipeline(
                &stocks,
                &split,
                &architectures,
                &plan,
                seed,
                pooling,
                gap_threshold,
            )
        })
        .map_err(map_harness_err)?;

    let files = harness::emit_report(
        &output.records,
        &output.divergences,
        &output.matrix,
        format,
        &out,
    )
    .map_err(map_harness_err)?;

    let total = output.records.len();
    println!(
        "{} runs ({} stocks x {} architectures x {} plan rows): {} ok, {} failed",
        total,
        stocks.len(),
        architectures.len(),
        plan.len(),
        total - output.failed_runs,
        output.failed_runs
    );
    println!(
        "divergences at gap {}: {} conflicts, {} large-gap context pairs",
        gap_threshold,
        output.divergences.conflicts.len(),
        output.divergences.large_gaps.len()
    );
    println!(
        "correlation over {} records ({} pooling):",
        output.matrix.n,
        pooling.token()
    );
    for i in 0..4 {
        println!(
            "  {} vs SRD: {:+.4} ({})",
            output.matrix.labels[i],
            output.matrix.cells[i][4],
            output.matrix.interpretation(i, 4)
        );
    }
    for file in files {
        println!("wrote {}", file.display());
    }
    if output.failed_runs > 0 {
        return Err(CliError::PartialFailures(output.failed_runs, total));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// correlate / report
// ---------------------------------------------------------------------------

fn load_results(path: &Path) -> Result<Vec<harness::RunRecord>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    harness::parse_results_csv(text.as_bytes()).map_err(map_harness_err)
}

fn cmd_correlate(results: &Path, pooling: Option<&str>, out: &Path) -> Result<(), CliError> {
    let records = load_results(results)?;
    let pooling = match pooling {
        Some(text) => config::parse_pooling(text)?,
        None => harness::Pooling::BestPerStock,
    };
    let pooled = harness::pooled_records(&records, pooling).map_err(map_harness_err)?;
    let matrix = harness::correlate_metrics_with_direction(&pooled).map_err(map_harness_err)?;
    std::fs::create_dir_all(out)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", out.display())))?;
    let matrix_path = out.join("correlation.csv");
    std::fs::write(&matrix_path, render_correlation_csv(&matrix))
        .map_err(|e| CliError::Data(e.to_string()))?;
    let text_path = out.join("correlation_interpretation.txt");
    let interpretation = render_correlation_interpretation(&matrix);
    std::fs::write(&text_path, &interpretation).map_err(|e| CliError::Data(e.to_string()))?;
    print!("{interpretation}");
    println!("wrote {}", matrix_path.display());
    println!("wrote {}", text_path.display());
    Ok(())
}

fn cmd_report(
    results: &Path,
    format: Option<&str>,
    gap_threshold: f64,
    pooling: Option<&str>,
    out: &Path,
) -> Result<(), CliError> {
    let records = load_results(results)?;
    let format = match format {
        Some(text) => config::parse_format(text)?,
        None => ReportFormat::Markdown,
    };
    let pooling = match pooling {
        Some(text) => config::parse_pooling(text)?,
        None => harness::Pooling::BestPerStock,
    };
    let best = harness::select_best_per_group(
        &records,
        harness::GroupKey::Symbol,
        harness::SelectionCriterion::Mae,
    )
    .map_err(map_harness_err)?;
    let divergences = harness::find_divergences(&best, gap_threshold);
    let pooled = harness::pooled_records(&records, pooling).map_err(map_harness_err)?;
    let matrix = harness::correlate_metrics_with_direction(&pooled).map_err(map_harness_err)?;
    let files = harness::emit_report(&records, &divergences, &matrix, format, out)
        .map_err(map_harness_err)?;
    for file in files {
        println!("wrote {}", file.display());
    }
    Ok(())
}
