//! Loading, validating, normalizing, screening, and windowing price series.
//!
//! Input files are CSV in the common export layout: a header row with at
//! least `Date` (ISO-8601 `YYYY-MM-DD`) and `Close` (decimal) columns;
//! other columns (`Open,High,Low,Adj Close,Volume`) are tolerated and
//! ignored. Malformed rows abort a load — silently dropping rows would
//! corrupt the no-treatment-control return downstream.

mod hurst;

pub use hurst::{hurst_exponent, HurstEstimate};

use std::io::Read;
use std::ops::Range;

use chrono::NaiveDate;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum IngestError {
    #[error("missing required column `{0}`")]
    MissingColumn(&'static str),
    #[error("malformed row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },
    #[error("fewer than 2 valid rows")]
    EmptySeries,
    #[error("invalid series: {0}")]
    InvalidSeries(String),
    #[error("all prices in the fit range are equal; cannot scale")]
    DegenerateRange,
    #[error("fit range {start}..{end} is out of bounds for series of length {len}")]
    RangeOutOfBounds {
        start: usize,
        end: usize,
        len: usize,
    },
    #[error("series too short: {len} observations, need more than {required}")]
    InsufficientData { len: usize, required: usize },
    #[error("split leaves the {side} partition empty")]
    EmptyPartition { side: &'static str },
    #[error("sequence too short for a persistence estimate: {0} < 64 points")]
    TooShort(usize),
    #[error("sequence has zero variance")]
    ZeroVariance,
    #[error("csv read failed: {0}")]
    Csv(String),
}

/// One dated closing price.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub date: NaiveDate,
    pub close: f64,
}

/// A parsed CSV row before series validation. `close` is `None` when the
/// cell was empty or `null` (how exported files mark missing days).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawRow {
    /// 1-based data row number (header not counted).
    pub row: usize,
    pub date: NaiveDate,
    pub close: Option<f64>,
}

/// Dated univariate price sequence with provenance.
///
/// Invariants, enforced at construction: dates strictly increasing, all
/// closes finite and positive, at least 2 observations.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceSeries {
    symbol: String,
    observations: Vec<Observation>,
    source: String,
}

impl PriceSeries {
    pub fn new(
        symbol: impl Into<String>,
        observations: Vec<Observation>,
        source: impl Into<String>,
    ) -> Result<Self, IngestError> {
        if observations.len() < 2 {
            return Err(IngestError::EmptySeries);
        }
        for (i, obs) in observations.iter().enumerate() {
            if !obs.close.is_finite() || obs.close <= 0.0 {
                return Err(IngestError::InvalidSeries(format!(
                    "close {} at index {i} is not a positive finite price",
                    obs.close
                )));
            }
            if i > 0 && observations[i - 1].date >= obs.date {
                return Err(IngestError::InvalidSeries(format!(
                    "dates not strictly increasing at index {i} ({} then {})",
                    observations[i - 1].date,
                    obs.date
                )));
            }
        }
        Ok(PriceSeries {
            symbol: symbol.into(),
            observations,
            source: source.into(),
        })
    }

    pub fn symbol(&self) -> &str {
        &self.symbol
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn closes(&self) -> Vec<f64> {
        self.observations.iter().map(|o| o.close).collect()
    }

    pub fn dates(&self) -> impl Iterator<Item = NaiveDate> + '_ {
        self.observations.iter().map(|o| o.date)
    }
}

/// Counts from a single integrity pass over raw rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IntegrityReport {
    pub missing_value_count: usize,
    pub nonpositive_price_count: usize,
    pub duplicate_date_count: usize,
    pub ok: bool,
}

/// Integrity counts over pre-validation rows: missing closes, nonpositive
/// closes, and repeated dates.
pub fn verify_integrity_raw(rows: &[RawRow]) -> IntegrityReport {
    let mut missing = 0;
    let mut nonpositive = 0;
    let mut dates: Vec<NaiveDate> = rows.iter().map(|r| r.date).collect();
    dates.sort_unstable();
    let duplicates = dates.windows(2).filter(|w| w[0] == w[1]).count();
    for row in rows {
        match row.close {
            None => missing += 1,
            Some(c) if c <= 0.0 => nonpositive += 1,
            Some(_) => {}
        }
    }
    IntegrityReport {
        missing_value_count: missing,
        nonpositive_price_count: nonpositive,
        duplicate_date_count: duplicates,
        ok: missing == 0 && nonpositive == 0 && duplicates == 0,
    }
}

/// Integrity pass over an already-constructed series. Construction enforces
/// the invariants, so this reports clean counts; it exists so reports can
/// state what was checked.
pub fn verify_integrity(series: &PriceSeries) -> IntegrityReport {
    let rows: Vec<RawRow> = series
        .observations
        .iter()
        .enumerate()
        .map(|(i, o)| RawRow {
            row: i + 1,
            date: o.date,
            close: Some(o.close),
        })
        .collect();
    verify_integrity_raw(&rows)
}

/// Parse CSV into raw rows without validating series invariants.
///
/// The header must name `Date` and `Close` columns. A `Close` cell that is
/// empty or `null` parses as missing; any other unparseable cell fails the
/// whole load with its row number.
pub fn parse_price_csv_raw(source: impl Read) -> Result<Vec<RawRow>, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(source);
    let headers = reader
        .headers()
        .map_err(|e| IngestError::Csv(e.to_string()))?
        .clone();
    let find = |name: &str| headers.iter().position(|h| h.trim() == name);
    let date_col = find("Date").ok_or(IngestError::MissingColumn("Date"))?;
    let close_col = find("Close").ok_or(IngestError::MissingColumn("Close"))?;

    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| IngestError::Csv(e.to_string()))?;
        let date_cell = record.get(date_col).unwrap_or("").trim();
        let date = NaiveDate::parse_from_str(date_cell, "%Y-%m-%d").map_err(|_| {
            IngestError::MalformedRow {
                row,
                reason: format!("unparseable date `{date_cell}`"),
            }
        })?;
        let close_cell = record.get(close_col).unwrap_or("").trim();
        let close = if close_cell.is_empty() || close_cell.eq_ignore_ascii_case("null") {
            None
        } else {
            Some(
                close_cell
                    .parse::<f64>()
                    .map_err(|_| IngestError::MalformedRow {
                        row,
                        reason: format!("unparseable close `{close_cell}`"),
                    })?,
            )
        };
        rows.push(RawRow { row, date, close });
    }
    Ok(rows)
}

/// Load a price series from CSV: parse, sort by date, validate.
///
/// Every row must carry a positive finite close — a missing or
/// out-of-domain price is treated as a malformed row, and any malformed
/// row fails the load. Duplicate dates fail series validation.
pub fn load_price_csv(source: impl Read, symbol: &str) -> Result<PriceSeries, IngestError> {
    let mut rows = parse_price_csv_raw(source)?;
    rows.sort_by_key(|r| r.date);
    let mut observations = Vec::with_capacity(rows.len());
    for raw in &rows {
        let close = raw.close.ok_or_else(|| IngestError::MalformedRow {
            row: raw.row,
            reason: "missing close value".into(),
        })?;
        if !close.is_finite() || close <= 0.0 {
            return Err(IngestError::MalformedRow {
                row: raw.row,
                reason: format!("close {close} is not a positive finite price"),
            });
        }
        observations.push(Observation {
            date: raw.date,
            close,
        });
    }
    PriceSeries::new(symbol, observations, "csv")
}

/// A series mapped through a min-max scale fitted on part of it.
///
/// The scale comes from the fit range only (the training range), so values
/// outside that range may leave [0, 1]; that is expected and permitted.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedSeries {
    symbol: String,
    values: Vec<f64>,
    scale_min: f64,
    scale_max: f64,
}

impl NormalizedSeries {
    pub fn symbol(&self) -> &str {
        &self.symbol
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

    pub fn scale_min(&self) -> f64 {
        self.scale_min
    }

    pub fn scale_max(&self) -> f64 {
        self.scale_max
    }

    /// Map a normalized value back to a price.
    pub fn denormalize(&self, value: f64) -> f64 {
        value * (self.scale_max - self.scale_min) + self.scale_min
    }
}

/// Min-max normalize a series, fitting the scale over `fit_range` only and
/// applying it to every observation.
pub fn normalize_minmax(
    series: &PriceSeries,
    fit_range: Range<usize>,
) -> Result<NormalizedSeries, IngestError> {
    if fit_range.start >= fit_range.end || fit_range.end > series.len() {
        return Err(IngestError::RangeOutOfBounds {
            start: fit_range.start,
            end: fit_range.end,
            len: series.len(),
        });
    }
    let fit = &series.observations[fit_range];
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for obs in fit {
        min = min.min(obs.close);
        max = max.max(obs.close);
    }
    if min == max {
        return Err(IngestError::DegenerateRange);
    }
    let span = max - min;
    let values = series
        .observations
        .iter()
        .map(|o| (o.close - min) / span)
        .collect();
    Ok(NormalizedSeries {
        symbol: series.symbol.clone(),
        values,
        scale_min: min,
        scale_max: max,
    })
}

/// Sliding-window samples: for window length L and hop H, sample k pairs
/// inputs at indices `k..k+L` with the target at index `k+L+H`. H counts
/// timesteps skipped between the window's end and the prediction target,
/// so H=0 is next-step prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedDataset {
    window_length: usize,
    hop: usize,
    /// Flat row-major sample inputs, `len() * window_length` values.
    inputs: Vec<f64>,
    targets: Vec<f64>,
    /// For each sample, the index of its target in the source series.
    source_indices: Vec<usize>,
}

impl WindowedDataset {
    pub fn window_length(&self) -> usize {
        self.window_length
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn input(&self, sample: usize) -> &[f64] {
        let l = self.window_length;
        &self.inputs[sample * l..(sample + 1) * l]
    }

    pub fn target(&self, sample: usize) -> f64 {
        self.targets[sample]
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn source_indices(&self) -> &[usize] {
        &self.source_indices
    }

    /// A copy holding only the samples in `range`.
    pub fn slice(&self, range: Range<usize>) -> WindowedDataset {
        let l = self.window_length;
        WindowedDataset {
            window_length: l,
            hop: self.hop,
            inputs: self.inputs[range.start * l..range.end * l].to_vec(),
            targets: self.targets[range.clone()].to_vec(),
            source_indices: self.source_indices[range].to_vec(),
        }
    }

    /// Same samples with every value negated; used by the mirror tests,
    /// where negation is the exact float image of reflecting the series.
    pub fn negated(&self) -> WindowedDataset {
        WindowedDataset {
            window_length: self.window_length,
            hop: self.hop,
            inputs: self.inputs.iter().map(|v| -v).collect(),
            targets: self.targets.iter().map(|v| -v).collect(),
            source_indices: self.source_indices.clone(),
        }
    }
}

/// Window a value sequence. Yields exactly `T - L - H` samples in source
/// order when `T > L + H`.
pub fn make_windows_from_values(
    values: &[f64],
    window_length: usize,
    hop: usize,
) -> Result<WindowedDataset, IngestError> {
    assert!(window_length >= 1, "window length must be at least 1");
    let t = values.len();
    if t <= window_length + hop {
        return Err(IngestError::InsufficientData {
            len: t,
            required: window_length + hop,
        });
    }
    let count = t - window_length - hop;
    let mut inputs = Vec::with_capacity(count * window_length);
    let mut targets = Vec::with_capacity(count);
    let mut source_indices = Vec::with_capacity(count);
    for k in 0..count {
        inputs.extend_from_slice(&values[k..k + window_length]);
        targets.push(values[k + window_length + hop]);
        source_indices.push(k + window_length + hop);
    }
    Ok(WindowedDataset {
        window_length,
        hop,
        inputs,
        targets,
        source_indices,
    })
}

/// Window a normalized series.
pub fn make_windows(
    norm: &NormalizedSeries,
    window_length: usize,
    hop: usize,
) -> Result<WindowedDataset, IngestError> {
    make_windows_from_values(&norm.values, window_length, hop)
}

/// Date boundaries for a train/test split. The gap between `train_end` and
/// `test_start` may be empty or may skip observations; skipped observations
/// belong to neither partition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSpec {
    pub train_end: NaiveDate,
    pub test_start: NaiveDate,
    pub test_end: NaiveDate,
}

impl SplitSpec {
    pub fn new(
        train_end: NaiveDate,
        test_start: NaiveDate,
        test_end: NaiveDate,
    ) -> Result<Self, IngestError> {
        if !(train_end < test_start && test_start <= test_end) {
            return Err(IngestError::InvalidSeries(format!(
                "split must satisfy train_end < test_start <= test_end, got {train_end} / {test_start} / {test_end}"
            )));
        }
        Ok(SplitSpec {
            train_end,
            test_start,
            test_end,
        })
    }
}

/// Partition a series by date: train is everything up to and including
/// `train_end`, test is `test_start..=test_end`. Partitions are disjoint
/// and order-preserving. A side that cannot form a valid series (fewer
/// than 2 observations) counts as empty.
pub fn split_by_date(
    series: &PriceSeries,
    spec: &SplitSpec,
) -> Result<(PriceSeries, PriceSeries), IngestError> {
    let train: Vec<Observation> = series
        .observations
        .iter()
        .filter(|o| o.date <= spec.train_end)
        .copied()
        .collect();
    let test: Vec<Observation> = series
        .observations
        .iter()
        .filter(|o| spec.test_start <= o.date && o.date <= spec.test_end)
        .copied()
        .collect();
    if train.len() < 2 {
        return Err(IngestError::EmptyPartition { side: "train" });
    }
    if test.len() < 2 {
        return Err(IngestError::EmptyPartition { side: "test" });
    }
    Ok((
        PriceSeries::new(series.symbol.clone(), train, series.source.clone())?,
        PriceSeries::new(series.symbol.clone(), test, series.source.clone())?,
    ))
}
