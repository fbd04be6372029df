//! Report emission and the results wire format.
//!
//! The results CSV is the stable interchange format:
//!
//! ```csv
//! symbol,architecture,plan_row,L,H,N,E,F,seed,mae,mse,rmse,r2,control_return_pct,direction,status
//! ```
//!
//! Reals carry 17 significant digits (`{:.16e}`), which round-trips f64
//! exactly. Failed runs leave their metric cells empty and set
//! `status` to `failed:<tag>`. All rendering is byte-deterministic for
//! identical inputs.

use std::fmt::Write as _;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use crate::metrics::{Direction, MetricReport, ReturnSummary};
use crate::models::{ActivationKind, Architecture};
use crate::oed::FactorAssignment;

use super::{
    CorrelationMatrix, DivergenceCase, DivergenceReport, HarnessError, RunRecord, RunStatus,
};

/// 17 significant digits: enough to reproduce any f64 bit pattern.
pub fn format_g17(x: f64) -> String {
    format!("{x:.16e}")
}

pub const RESULTS_HEADER: &str =
    "symbol,architecture,plan_row,L,H,N,E,F,seed,mae,mse,rmse,r2,control_return_pct,direction,status";

/// Render records (already in report order) as the results CSV.
pub fn render_results_csv(records: &[RunRecord]) -> String {
    let mut out = String::new();
    out.push_str(RESULTS_HEADER);
    out.push('\n');
    for r in records {
        let a = &r.assignment;
        let (mae, mse, rmse, r2) = match r.metrics() {
            Some(m) => (
                format_g17(m.mae),
                format_g17(m.mse),
                format_g17(m.rmse),
                format_g17(m.r_squared),
            ),
            None => (String::new(), String::new(), String::new(), String::new()),
        };
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.symbol,
            r.architecture.token(),
            a.plan_row,
            a.window_length,
            a.hop,
            a.hidden_nodes,
            a.epochs,
            a.activation.token(),
            r.seed,
            mae,
            mse,
            rmse,
            r2,
            format_g17(r.control.range_return * 100.0),
            r.control.direction.token(),
            r.status.token(),
        )
        .expect("string write cannot fail");
    }
    out
}

/// Parse a results CSV back into records.
///
/// The original test-interval prices are not part of the format, so parsed
/// controls carry a unit start price, and parsed metric reports have a
/// zero sample count; return fraction, direction, metrics, and identity
/// round-trip exactly.
pub fn parse_results_csv(reader: impl Read) -> Result<Vec<RunRecord>, HarnessError> {
    let mut csv_reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    {
        let headers = csv_reader
            .headers()
            .map_err(|e| HarnessError::ParseResults {
                line: 1,
                reason: e.to_string(),
            })?;
        let expected: Vec<&str> = RESULTS_HEADER.split(',').collect();
        let got: Vec<&str> = headers.iter().collect();
        if got != expected {
            return Err(HarnessError::ParseResults {
                line: 1,
                reason: format!("unexpected header: {}", got.join(",")),
            });
        }
    }

    let mut records = Vec::new();
    for (i, row) in csv_reader.records().enumerate() {
        let line = i + 2;
        let bad = |reason: String| HarnessError::ParseResults { line, reason };
        let row = row.map_err(|e| bad(e.to_string()))?;
        let field = |idx: usize| row.get(idx).unwrap_or("").trim();
        let parse_usize = |idx: usize, name: &str| {
            field(idx)
                .parse::<usize>()
                .map_err(|_| bad(format!("bad {name} `{}`", field(idx))))
        };
        let parse_f64 = |idx: usize, name: &str| {
            field(idx)
                .parse::<f64>()
                .map_err(|_| bad(format!("bad {name} `{}`", field(idx))))
        };

        let symbol = field(0).to_string();
        let architecture = Architecture::parse(field(1))
            .ok_or_else(|| bad(format!("unknown architecture `{}`", field(1))))?;
        let assignment = FactorAssignment {
            plan_row: parse_usize(2, "plan_row")?,
            window_length: parse_usize(3, "L")?,
            hop: parse_usize(4, "H")?,
            hidden_nodes: parse_usize(5, "N")?,
            epochs: parse_usize(6, "E")?,
            activation: ActivationKind::parse(field(7))
                .ok_or_else(|| bad(format!("unknown activation `{}`", field(7))))?,
        };
        let seed = field(8)
            .parse::<u64>()
            .map_err(|_| bad(format!("bad seed `{}`", field(8))))?;
        let control_pct = parse_f64(13, "control_return_pct")?;
        let direction = Direction::parse(field(14))
            .ok_or_else(|| bad(format!("unknown direction `{}`", field(14))))?;
        let mut control = ReturnSummary::from_range_return(control_pct / 100.0);
        control.direction = direction;

        let status_field = field(15).to_string();
        let status = if status_field == "ok" {
            RunStatus::Ok(MetricReport {
                mae: parse_f64(9, "mae")?,
                mse: parse_f64(10, "mse")?,
                rmse: parse_f64(11, "rmse")?,
                r_squared: parse_f64(12, "r2")?,
                sample_count: 0,
            })
        } else if let Some(tag) = status_field.strip_prefix("failed:") {
            RunStatus::Failed { tag: tag.to_string() }
        } else {
            return Err(bad(format!("unknown status `{status_field}`")));
        };

        records.push(RunRecord {
            symbol,
            architecture,
            assignment,
            seed,
            control,
            status,
        });
    }
    Ok(records)
}

fn divergence_row(out: &mut String, case: &DivergenceCase, category: &str) {
    writeln!(
        out,
        "{},{},{},{},{},{},{},{},{},{},{},{},{}",
        case.a.symbol,
        case.a.architecture.token(),
        case.a.plan_row,
        format_g17(case.a.mae),
        case.a.direction.token(),
        case.b.symbol,
        case.b.architecture.token(),
        case.b.plan_row,
        format_g17(case.b.mae),
        case.b.direction.token(),
        format_g17(case.metric_gap),
        case.direction_conflict,
        category,
    )
    .expect("string write cannot fail");
}

pub const DIVERGENCES_HEADER: &str = "symbol_a,architecture_a,plan_row_a,mae_a,direction_a,\
symbol_b,architecture_b,plan_row_b,mae_b,direction_b,metric_gap,direction_conflict,category";

/// Divergence table: the conflict pairs first, then the large-gap context.
pub fn render_divergences_csv(report: &DivergenceReport) -> String {
    let mut out = String::new();
    out.push_str(DIVERGENCES_HEADER);
    out.push('\n');
    for case in &report.conflicts {
        divergence_row(&mut out, case, "conflict");
    }
    for case in &report.large_gaps {
        divergence_row(&mut out, case, "large_gap");
    }
    out
}

/// The 5x5 matrix with a label row and column.
pub fn render_correlation_csv(matrix: &CorrelationMatrix) -> String {
    let mut out = String::new();
    out.push(',');
    out.push_str(&matrix.labels.join(","));
    out.push('\n');
    for (i, label) in matrix.labels.iter().enumerate() {
        out.push_str(label);
        for j in 0..matrix.labels.len() {
            out.push(',');
            out.push_str(&format_g17(matrix.cells[i][j]));
        }
        out.push('\n');
    }
    out
}

/// Companion text block: each coefficient with its interpretation band.
pub fn render_correlation_interpretation(matrix: &CorrelationMatrix) -> String {
    let mut out = String::new();
    writeln!(out, "correlation interpretations over {} records", matrix.n)
        .expect("string write cannot fail");
    for i in 0..matrix.labels.len() {
        for j in (i + 1)..matrix.labels.len() {
            writeln!(
                out,
                "{} vs {}: rho = {:+.4} ({})",
                matrix.labels[i],
                matrix.labels[j],
                matrix.cells[i][j],
                matrix.interpretation(i, j)
            )
            .expect("string write cannot fail");
        }
    }
    out
}

fn srd_sign(direction: Direction) -> i8 {
    match direction {
        Direction::Up => 1,
        Direction::Down => -1,
        Direction::Flat => 0,
    }
}

/// Human-readable report: run table, divergences, correlation matrix with
/// bands. Values are shown at 4 decimals; full precision lives in the CSVs.
pub fn render_report_md(
    records: &[RunRecord],
    divergences: &DivergenceReport,
    matrix: &CorrelationMatrix,
) -> String {
    let ok = records.iter().filter(|r| r.metrics().is_some()).count();
    let failed = records.len() - ok;
    let mut out = String::new();
    let w = &mut out;
    writeln!(w, "# Experiment report").unwrap();
    writeln!(w).unwrap();
    writeln!(
        w,
        "{} runs: {ok} ok, {failed} failed. Correlation over {} records.",
        records.len(),
        matrix.n
    )
    .unwrap();
    writeln!(w).unwrap();

    writeln!(w, "## Runs").unwrap();
    writeln!(w).unwrap();
    writeln!(
        w,
        "| symbol | arch | row | L | H | N | E | F | mae | mse | rmse | r2 | control % | direction | srd_sign | status |"
    )
    .unwrap();
    writeln!(
        w,
        "|---|---|---|---|---|---|---|---|---|---|---|---|---|---|---|---|"
    )
    .unwrap();
    for r in records {
        let a = &r.assignment;
        let (mae, mse, rmse, r2) = match r.metrics() {
            Some(m) => (
                format!("{:.4}", m.mae),
                format!("{:.4}", m.mse),
                format!("{:.4}", m.rmse),
                format!("{:.4}", m.r_squared),
            ),
            None => ("".into(), "".into(), "".into(), "".into()),
        };
        writeln!(
            w,
            "| {} | {} | {} | {} | {} | {} | {} | {} | {} | {} | {} | {} | {:+.2} | {} | {:+} | {} |",
            r.symbol,
            r.architecture.token(),
            a.plan_row,
            a.window_length,
            a.hop,
            a.hidden_nodes,
            a.epochs,
            a.activation.token(),
            mae,
            mse,
            rmse,
            r2,
            r.control.range_return * 100.0,
            r.control.direction.token(),
            srd_sign(r.control.direction),
            r.status.token(),
        )
        .unwrap();
    }
    writeln!(w).unwrap();

    writeln!(
        w,
        "## Divergences (gap threshold {})",
        divergences.threshold
    )
    .unwrap();
    writeln!(w).unwrap();
    writeln!(
        w,
        "{} small-gap direction conflicts, {} large-gap context pairs.",
        divergences.conflicts.len(),
        divergences.large_gaps.len()
    )
    .unwrap();
    writeln!(w).unwrap();
    writeln!(w, "| a | mae_a | dir_a | b | mae_b | dir_b | gap | conflict |").unwrap();
    writeln!(w, "|---|---|---|---|---|---|---|---|").unwrap();
    for case in divergences.conflicts.iter().chain(&divergences.large_gaps) {
        writeln!(
            w,
            "| {}/{}#{} | {:.4} | {} | {}/{}#{} | {:.4} | {} | {:.4} | {} |",
            case.a.symbol,
            case.a.architecture.token(),
            case.a.plan_row,
            case.a.mae,
            case.a.direction.token(),
            case.b.symbol,
            case.b.architecture.token(),
            case.b.plan_row,
            case.b.mae,
            case.b.direction.token(),
            case.metric_gap,
            if case.direction_conflict { "yes" } else { "no" },
        )
        .unwrap();
    }
    writeln!(w).unwrap();

    writeln!(w, "## Correlation ({} records)", matrix.n).unwrap();
    writeln!(w).unwrap();
    write!(w, "| |").unwrap();
    for label in &matrix.labels {
        let label = if *label == "R2" { "R²" } else { label };
        write!(w, " {label} |").unwrap();
    }
    writeln!(w).unwrap();
    writeln!(w, "|---|---|---|---|---|---|").unwrap();
    for (i, label) in matrix.labels.iter().enumerate() {
        let shown = if *label == "R2" { "R²" } else { label };
        write!(w, "| {shown} |").unwrap();
        for j in 0..matrix.labels.len() {
            write!(w, " {:+.4} |", matrix.cells[i][j]).unwrap();
        }
        writeln!(w).unwrap();
    }
    writeln!(w).unwrap();
    for i in 0..matrix.labels.len() {
        for j in (i + 1)..matrix.labels.len() {
            writeln!(
                w,
                "- {} vs {}: {:+.4} — {}",
                matrix.labels[i],
                matrix.labels[j],
                matrix.cells[i][j],
                matrix.interpretation(i, j)
            )
            .unwrap();
        }
    }
    out
}

/// Output format selector: `Csv` writes the machine-readable files,
/// `Markdown` adds `report.md` on top of them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Markdown,
}

impl ReportFormat {
    pub fn token(self) -> &'static str {
        match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Markdown => "md",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "csv" => Some(ReportFormat::Csv),
            "md" | "markdown" => Some(ReportFormat::Markdown),
            _ => None,
        }
    }
}

/// Write the report files into `out_dir` and return the written paths:
/// `results.csv`, `divergences.csv`, `correlation.csv`,
/// `correlation_interpretation.txt`, plus `report.md` for the markdown
/// format. Byte-deterministic for identical inputs.
pub fn emit_report(
    records: &[RunRecord],
    divergences: &DivergenceReport,
    matrix: &CorrelationMatrix,
    format: ReportFormat,
    out_dir: &Path,
) -> Result<Vec<PathBuf>, HarnessError> {
    let io_err = |e: std::io::Error| HarnessError::Io(e.to_string());
    fs::create_dir_all(out_dir).map_err(io_err)?;
    let mut written = Vec::new();
    let mut write = |name: &str, contents: String| -> Result<(), HarnessError> {
        let path = out_dir.join(name);
        fs::write(&path, contents).map_err(io_err)?;
        written.push(path);
        Ok(())
    };
    write("results.csv", render_results_csv(records))?;
    write("divergences.csv", render_divergences_csv(divergences))?;
    write("correlation.csv", render_correlation_csv(matrix))?;
    write(
        "correlation_interpretation.txt",
        render_correlation_interpretation(matrix),
    )?;
    if format == ReportFormat::Markdown {
        write("report.md", render_report_md(records, divergences, matrix))?;
    }
    Ok(written)
}
