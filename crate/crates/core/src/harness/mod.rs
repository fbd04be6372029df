//! The experiment driver: trains and scores every (stock, architecture,
//! plan row) combination, attaches the model-free control return, finds
//! metric/direction divergences, and correlates error metrics with the
//! stock return direction.
//!
//! Every run gets its own seed derived from the batch seed and the run's
//! identity, so any subset of the experiment reproduces exactly. Runs are
//! independent and may execute in parallel; records are collected in input
//! order and sorted by (symbol, architecture, plan row) before anything is
//! emitted, so thread count never changes output bytes.

mod report;

pub use report::{
    emit_report, format_g17, parse_results_csv, render_correlation_csv,
    render_correlation_interpretation, render_divergences_csv, render_report_md,
    render_results_csv, ReportFormat,
};

use rayon::prelude::*;
use thiserror::Error;

use crate::ingest::{self, IngestError, NormalizedSeries, PriceSeries, SplitSpec};
use crate::metrics::{
    self, CorrelationBand, Direction, MetricReport, MetricsError, ReturnSummary, SeriesStats,
};
use crate::models::{self, Architecture, ModelError, TrainConfig};
use crate::oed::FactorAssignment;

#[derive(Debug, Error, PartialEq)]
pub enum HarnessError {
    #[error("invalid split for {symbol}: {reason}")]
    InvalidSplit { symbol: String, reason: String },
    #[error("too few records for correlation: {0} < 3")]
    TooFewRecords(usize),
    #[error("column `{0}` is constant; correlation is undefined")]
    ConstantColumn(String),
    #[error("group `{0}` has no successful runs")]
    EmptyGroup(String),
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("i/o failure: {0}")]
    Io(String),
    #[error("results parse error at line {line}: {reason}")]
    ParseResults { line: usize, reason: String },
}

/// Outcome of one run: a metric report, or the tag of the failure that
/// stopped it. Failed runs stay in the record stream — silently dropping
/// them would bias the correlation study invisibly.
#[derive(Debug, Clone, PartialEq)]
pub enum RunStatus {
    Ok(MetricReport),
    Failed { tag: String },
}

impl RunStatus {
    pub fn metrics(&self) -> Option<&MetricReport> {
        match self {
            RunStatus::Ok(m) => Some(m),
            RunStatus::Failed { .. } => None,
        }
    }

    pub fn token(&self) -> String {
        match self {
            RunStatus::Ok(_) => "ok".into(),
            RunStatus::Failed { tag } => format!("failed:{tag}"),
        }
    }
}

/// One (stock, architecture, assignment) evaluation. The control is the
/// raw test interval's own return — it depends only on (symbol, split),
/// never on the model.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub symbol: String,
    pub architecture: Architecture,
    pub assignment: FactorAssignment,
    pub seed: u64,
    pub control: ReturnSummary,
    pub status: RunStatus,
}

impl RunRecord {
    pub fn metrics(&self) -> Option<&MetricReport> {
        self.status.metrics()
    }
}

/// Per-run seed derivation; part of the external contract, stable across
/// releases. FNV-1a 64-bit (offset basis 0xcbf29ce484222325, prime
/// 0x100000001b3) over the byte string
/// `base_seed as little-endian u64 || 0xFF || symbol UTF-8 || 0xFF ||
/// architecture token || 0xFF || plan_row as little-endian u64`.
pub fn derive_run_seed(
    base_seed: u64,
    symbol: &str,
    architecture: Architecture,
    plan_row: usize,
) -> u64 {
    const OFFSET: u64 = 0xcbf29ce484222325;
    const PRIME: u64 = 0x100000001b3;
    let mut hash = OFFSET;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            hash ^= b as u64;
            hash = hash.wrapping_mul(PRIME);
        }
    };
    eat(&base_seed.to_le_bytes());
    eat(&[0xFF]);
    eat(symbol.as_bytes());
    eat(&[0xFF]);
    eat(architecture.token().as_bytes());
    eat(&[0xFF]);
    eat(&(plan_row as u64).to_le_bytes());
    hash
}

/// Range-span return of the raw test interval: the model-free baseline
/// each run is juxtaposed with.
pub fn no_treatment_control(test: &PriceSeries) -> Result<ReturnSummary, MetricsError> {
    metrics::range_return(&test.closes())
}

fn tag_of_ingest(err: &IngestError) -> String {
    match err {
        IngestError::DegenerateRange => "degenerate_range".into(),
        IngestError::InsufficientData { .. } => "insufficient_data".into(),
        _ => "ingest_error".into(),
    }
}

fn tag_of_model(err: &ModelError) -> String {
    match err {
        ModelError::NonFiniteLoss { .. } => "non_finite_loss".into(),
        ModelError::EmptyDataset => "insufficient_data".into(),
        _ => "model_error".into(),
    }
}

fn tag_of_metrics(err: &MetricsError) -> String {
    match err {
        MetricsError::ConstantActual => "constant_actual".into(),
        MetricsError::EmptyInput => "insufficient_data".into(),
        _ => "metrics_error".into(),
    }
}

/// Index boundaries of one stock under a split: the training prefix length
/// and the inclusive test index range.
#[derive(Debug, Clone, Copy)]
struct SplitIndices {
    train_len: usize,
    test_lo: usize,
    test_hi: usize,
}

fn split_indices(stock: &PriceSeries, split: &SplitSpec) -> Result<SplitIndices, HarnessError> {
    let dates: Vec<_> = stock.dates().collect();
    let train_len = dates.iter().filter(|d| **d <= split.train_end).count();
    let test_lo = dates.iter().position(|d| *d >= split.test_start);
    let test_hi = dates.iter().rposition(|d| *d <= split.test_end);
    let (test_lo, test_hi) = match (test_lo, test_hi) {
        (Some(lo), Some(hi)) if lo <= hi => (lo, hi),
        _ => {
            return Err(HarnessError::InvalidSplit {
                symbol: stock.symbol().to_string(),
                reason: "no observations in the test interval".into(),
            })
        }
    };
    if train_len < 2 {
        return Err(HarnessError::InvalidSplit {
            symbol: stock.symbol().to_string(),
            reason: "training partition has fewer than 2 observations".into(),
        });
    }
    if test_hi - test_lo + 1 < 2 {
        return Err(HarnessError::InvalidSplit {
            symbol: stock.symbol().to_string(),
            reason: "test partition has fewer than 2 observations".into(),
        });
    }
    Ok(SplitIndices {
        train_len,
        test_lo,
        test_hi,
    })
}

/// Train and evaluate one combination. Window targets dated in the gap
/// between the partitions belong to neither dataset; test windows may
/// reach back into training history for their inputs, the way live
/// evaluation would.
fn single_run(
    stock: &PriceSeries,
    norm: Result<&NormalizedSeries, &IngestError>,
    indices: SplitIndices,
    control: ReturnSummary,
    architecture: Architecture,
    assignment: FactorAssignment,
    base_seed: u64,
) -> RunRecord {
    let seed = derive_run_seed(base_seed, stock.symbol(), architecture, assignment.plan_row);
    let record = |status: RunStatus| RunRecord {
        symbol: stock.symbol().to_string(),
        architecture,
        assignment,
        seed,
        control,
        status,
    };
    let failed = |tag: String| record(RunStatus::Failed { tag });

    let norm = match norm {
        Ok(n) => n,
        Err(e) => return failed(tag_of_ingest(e)),
    };
    let l = assignment.window_length;
    let h = assignment.hop;
    let windows = match ingest::make_windows(norm, l, h) {
        Ok(w) => w,
        Err(e) => return failed(tag_of_ingest(&e)),
    };

    // samples are indexed by window start k; the target sits at k + L + H
    let train_count = indices.train_len.saturating_sub(l + h);
    if train_count == 0 {
        return failed("insufficient_data".into());
    }
    if indices.test_hi < l + h {
        return failed("insufficient_data".into());
    }
    let test_k_lo = indices.test_lo.saturating_sub(l + h);
    let test_k_hi = indices.test_hi - l - h;
    if test_k_hi < test_k_lo || test_k_hi >= windows.len() {
        return failed("insufficient_data".into());
    }

    let train_data = windows.slice(0..train_count);
    let test_data = windows.slice(test_k_lo..test_k_hi + 1);

    let spec = match models::ModelSpec::new(
        architecture,
        assignment.window_length,
        assignment.hidden_nodes,
        assignment.activation,
    ) {
        Ok(s) => s,
        Err(e) => return failed(tag_of_model(&e)),
    };
    let config = TrainConfig::for_activation(assignment.activation, assignment.epochs, seed);
    let model = match models::train(&spec, &config, &train_data) {
        Ok(m) => m,
        Err(e) => return failed(tag_of_model(&e)),
    };
    let pairs = match models::predict_series(&model, &test_data) {
        Ok(p) => p,
        Err(e) => return failed(tag_of_model(&e)),
    };
    match MetricReport::from_pairs(&pairs) {
        Ok(report) => record(RunStatus::Ok(report)),
        Err(e) => failed(tag_of_metrics(&e)),
    }
}

/// Run every (stock, architecture, assignment) combination.
///
/// Per-run failures are recorded with a failure tag instead of aborting
/// the batch; batch-level problems (an unusable split) abort up front.
/// Output order is (symbol, architecture, plan row) regardless of the
/// rayon pool in use.
pub fn run_experiment(
    stocks: &[PriceSeries],
    split: &SplitSpec,
    architectures: &[Architecture],
    plan: &[FactorAssignment],
    base_seed: u64,
) -> Result<Vec<RunRecord>, HarnessError> {
    if stocks.is_empty() {
        return Err(HarnessError::EmptyInput("stocks"));
    }
    if architectures.is_empty() {
        return Err(HarnessError::EmptyInput("architectures"));
    }
    if plan.is_empty() {
        return Err(HarnessError::EmptyInput("plan"));
    }

    // per-stock work shared across all runs of that stock
    struct StockContext<'a> {
        stock: &'a PriceSeries,
        norm: Result<NormalizedSeries, IngestError>,
        indices: SplitIndices,
        control: ReturnSummary,
    }
    let mut contexts = Vec::with_capacity(stocks.len());
    for stock in stocks {
        let indices = split_indices(stock, split)?;
        let control =
            metrics::range_return(&stock.closes()[indices.test_lo..=indices.test_hi])
                .expect("test interval has at least 2 points");
        let norm = ingest::normalize_minmax(stock, 0..indices.train_len);
        contexts.push(StockContext {
            stock,
            norm,
            indices,
            control,
        });
    }

    let mut jobs = Vec::new();
    for context in &contexts {
        for &architecture in architectures {
            for &assignment in plan {
                jobs.push((context, architecture, assignment));
            }
        }
    }

    let mut records: Vec<RunRecord> = jobs
        .par_iter()
        .map(|(context, architecture, assignment)| {
            single_run(
                context.stock,
                context.norm.as_ref(),
                context.indices,
                context.control,
                *architecture,
                *assignment,
                base_seed,
            )
        })
        .collect();
    records.sort_by(|a, b| {
        (a.symbol.as_str(), a.architecture, a.assignment.plan_row).cmp(&(
            b.symbol.as_str(),
            b.architecture,
            b.assignment.plan_row,
        ))
    });
    Ok(records)
}

/// What to group records by when selecting winners.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupKey {
    Symbol,
    Architecture,
}

/// Which metric decides the winner. Error metrics are minimized, the
/// determination coefficient is maximized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionCriterion {
    Mae,
    Mse,
    Rmse,
    RSquared,
}

impl SelectionCriterion {
    fn value(self, m: &MetricReport) -> f64 {
        match self {
            SelectionCriterion::Mae => m.mae,
            SelectionCriterion::Mse => m.mse,
            SelectionCriterion::Rmse => m.rmse,
            SelectionCriterion::RSquared => m.r_squared,
        }
    }

    fn better(self, candidate: f64, incumbent: f64) -> bool {
        match self {
            SelectionCriterion::RSquared => candidate > incumbent,
            _ => candidate < incumbent,
        }
    }
}

/// Best successful record per group under a criterion. Ties keep the
/// record with the lower (architecture order, plan row). Groups come back
/// in key order. A group whose runs all failed is an error.
pub fn select_best_per_group(
    records: &[RunRecord],
    key: GroupKey,
    criterion: SelectionCriterion,
) -> Result<Vec<RunRecord>, HarnessError> {
    use std::collections::BTreeMap;
    if records.is_empty() {
        return Err(HarnessError::EmptyInput("records"));
    }
    let mut groups: BTreeMap<String, Vec<&RunRecord>> = BTreeMap::new();
    for record in records {
        let group = match key {
            GroupKey::Symbol => record.symbol.clone(),
            // prefix with the enum index so ordering follows tag order
            GroupKey::Architecture => format!(
                "{:02}:{}",
                record.architecture as usize,
                record.architecture.token()
            ),
        };
        groups.entry(group).or_default().push(record);
    }
    let mut winners = Vec::with_capacity(groups.len());
    for (group, mut members) in groups {
        members.sort_by_key(|r| (r.architecture, r.assignment.plan_row));
        let mut best: Option<(&RunRecord, f64)> = None;
        for record in members {
            let Some(m) = record.metrics() else { continue };
            let value = criterion.value(m);
            match &best {
                Some((_, incumbent)) if !criterion.better(value, *incumbent) => {}
                _ => best = Some((record, value)),
            }
        }
        match best {
            Some((record, _)) => winners.push(record.clone()),
            None => return Err(HarnessError::EmptyGroup(group)),
        }
    }
    Ok(winners)
}

/// Identity and headline numbers of one record inside a divergence pair.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordRef {
    pub symbol: String,
    pub architecture: Architecture,
    pub plan_row: usize,
    pub mae: f64,
    pub control_return: f64,
    pub direction: Direction,
}

impl RecordRef {
    fn of(record: &RunRecord) -> Option<Self> {
        Some(RecordRef {
            symbol: record.symbol.clone(),
            architecture: record.architecture,
            plan_row: record.assignment.plan_row,
            mae: record.metrics()?.mae,
            control_return: record.control.range_return,
            direction: record.control.direction,
        })
    }
}

/// A pair of runs whose error gap and control directions tell different
/// stories.
#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceCase {
    pub a: RecordRef,
    pub b: RecordRef,
    /// |MAE of a - MAE of b|
    pub metric_gap: f64,
    /// true iff one control direction is up and the other down
    pub direction_conflict: bool,
}

/// Divergence scan output. The headline cases are `conflicts`: pairs the
/// error metric calls equivalent (gap at or under the threshold) whose
/// controls move opposite ways. Larger-gap pairs are kept as context.
#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceReport {
    pub threshold: f64,
    pub conflicts: Vec<DivergenceCase>,
    pub large_gaps: Vec<DivergenceCase>,
}

/// Scan all pairs of successful records for small-MAE-gap pairs with
/// opposite control directions.
pub fn find_divergences(records: &[RunRecord], metric_gap_threshold: f64) -> DivergenceReport {
    let refs: Vec<RecordRef> = records.iter().filter_map(RecordRef::of).collect();
    let mut conflicts = Vec::new();
    let mut large_gaps = Vec::new();
    for i in 0..refs.len() {
        for j in (i + 1)..refs.len() {
            let a = &refs[i];
            let b = &refs[j];
            let metric_gap = (a.mae - b.mae).abs();
            let direction_conflict = a.direction.opposes(b.direction);
            let case = DivergenceCase {
                a: a.clone(),
                b: b.clone(),
                metric_gap,
                direction_conflict,
            };
            if metric_gap <= metric_gap_threshold {
                if direction_conflict {
                    conflicts.push(case);
                }
            } else {
                large_gaps.push(case);
            }
        }
    }
    DivergenceReport {
        threshold: metric_gap_threshold,
        conflicts,
        large_gaps,
    }
}

/// Labels of the correlated columns, in matrix order. SRD is the signed
/// control return of the record's test interval.
pub const CORRELATION_LABELS: [&str; 5] = ["MAE", "MSE", "RMSE", "R2", "SRD"];

/// Pairwise Pearson coefficients among the four error metrics and the
/// stock return direction, over a set of records.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    pub labels: [&'static str; 5],
    pub cells: [[f64; 5]; 5],
    /// Number of records behind each coefficient.
    pub n: usize,
}

impl CorrelationMatrix {
    pub fn interpretation(&self, row: usize, col: usize) -> CorrelationBand {
        metrics::interpret_correlation(self.cells[row][col])
            .expect("matrix cells are clamped correlations")
    }
}

/// Correlate MAE, MSE, RMSE, R², and SRD across records. Failed runs are
/// skipped; a constant column or fewer than 3 usable records is an error
/// naming the offender.
pub fn correlate_metrics_with_direction(
    records: &[RunRecord],
) -> Result<CorrelationMatrix, HarnessError> {
    let mut columns: [Vec<f64>; 5] = Default::default();
    for record in records {
        let Some(m) = record.metrics() else { continue };
        columns[0].push(m.mae);
        columns[1].push(m.mse);
        columns[2].push(m.rmse);
        columns[3].push(m.r_squared);
        columns[4].push(record.control.range_return);
    }
    let n = columns[0].len();
    if n < 3 {
        return Err(HarnessError::TooFewRecords(n));
    }
    for (label, column) in CORRELATION_LABELS.iter().zip(&columns) {
        if SeriesStats::of(column).std == 0.0 {
            return Err(HarnessError::ConstantColumn(label.to_string()));
        }
    }
    let mut cells = [[0.0f64; 5]; 5];
    for i in 0..5 {
        cells[i][i] = 1.0;
        for j in (i + 1)..5 {
            let rho = metrics::pearson(&columns[i], &columns[j])
                .map_err(|e| match e {
                    MetricsError::ConstantInput => {
                        HarnessError::ConstantColumn(CORRELATION_LABELS[i].to_string())
                    }
                    other => HarnessError::Io(other.to_string()),
                })?
                .rho;
            cells[i][j] = rho;
            cells[j][i] = rho;
        }
    }
    Ok(CorrelationMatrix {
        labels: CORRELATION_LABELS,
        cells,
        n,
    })
}

/// Which records feed the correlation matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pooling {
    /// One record per stock: its best run by MAE.
    BestPerStock,
    /// Every successful run.
    AllRuns,
}

impl Pooling {
    pub fn token(self) -> &'static str {
        match self {
            Pooling::BestPerStock => "best-per-stock",
            Pooling::AllRuns => "all-runs",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "best-per-stock" => Some(Pooling::BestPerStock),
            "all-runs" => Some(Pooling::AllRuns),
            _ => None,
        }
    }
}

/// Records under a pooling mode: best-per-stock winners, or everything.
pub fn pooled_records(
    records: &[RunRecord],
    pooling: Pooling,
) -> Result<Vec<RunRecord>, HarnessError> {
    match pooling {
        Pooling::BestPerStock => {
            select_best_per_group(records, GroupKey::Symbol, SelectionCriterion::Mae)
        }
        Pooling::AllRuns => Ok(records.to_vec()),
    }
}

/// Everything the full pipeline produces for one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub records: Vec<RunRecord>,
    /// Divergence scan over the best-per-stock records.
    pub divergences: DivergenceReport,
    /// Correlation over records chosen by the pooling mode.
    pub matrix: CorrelationMatrix,
    pub failed_runs: usize,
}

/// Run the whole study: experiment, best-per-stock selection, divergence
/// scan, and the metric-vs-direction correlation.
pub fn run_full_pipeline(
    stocks: &[PriceSeries],
    split: &SplitSpec,
    architectures: &[Architecture],
    plan: &[FactorAssignment],
    base_seed: u64,
    pooling: Pooling,
    gap_threshold: f64,
) -> Result<PipelineOutput, HarnessError> {
    let records = run_experiment(stocks, split, architectures, plan, base_seed)?;
    let failed_runs = records.iter().filter(|r| r.metrics().is_none()).count();
    let best = select_best_per_group(&records, GroupKey::Symbol, SelectionCriterion::Mae)?;
    let divergences = find_divergences(&best, gap_threshold);
    let pooled = pooled_records(&records, pooling)?;
    let matrix = correlate_metrics_with_direction(&pooled)?;
    Ok(PipelineOutput {
        records,
        divergences,
        matrix,
        failed_runs,
    })
}

#[cfg(test)]
mod tests;
