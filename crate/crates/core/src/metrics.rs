//! Prediction-error measures, range-span returns, and Pearson correlation.
//!
//! All moments use the population convention (divide by N). The error
//! metrics are computed on whatever scale the caller supplies — the
//! harness feeds them normalized values — while [`range_return`] always
//! works on raw prices.

use thiserror::Error;

/// Floating-point slack allowed when clamping a correlation back into
/// [-1, 1]. Anything further out is a bug, not rounding.
pub const RHO_CLAMP_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("input lengths differ: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("actual values are constant; baseline variance is zero")]
    ConstantActual,
    #[error("input sequence is constant; standard deviation is zero")]
    ConstantInput,
    #[error("price segment has fewer than 2 points")]
    TooShort,
    #[error("correlation {0} is outside [-1, 1]")]
    OutOfRange(f64),
    #[error("non-finite value in input")]
    NonFinite,
}

fn check_pair(actual: &[f64], predicted: &[f64]) -> Result<(), MetricsError> {
    if actual.len() != predicted.len() {
        return Err(MetricsError::LengthMismatch {
            left: actual.len(),
            right: predicted.len(),
        });
    }
    if actual.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    if actual.iter().chain(predicted).any(|v| !v.is_finite()) {
        return Err(MetricsError::NonFinite);
    }
    Ok(())
}

/// Mean of squared residuals.
pub fn mse(actual: &[f64], predicted: &[f64]) -> Result<f64, MetricsError> {
    check_pair(actual, predicted)?;
    let sum: f64 = actual
        .iter()
        .zip(predicted)
        .map(|(a, p)| (p - a) * (p - a))
        .sum();
    Ok(sum / actual.len() as f64)
}

/// Square root of [`mse`].
pub fn rmse(actual: &[f64], predicted: &[f64]) -> Result<f64, MetricsError> {
    Ok(mse(actual, predicted)?.sqrt())
}

/// Mean of absolute residuals.
pub fn mae(actual: &[f64], predicted: &[f64]) -> Result<f64, MetricsError> {
    check_pair(actual, predicted)?;
    let sum: f64 = actual
        .iter()
        .zip(predicted)
        .map(|(a, p)| (p - a).abs())
        .sum();
    Ok(sum / actual.len() as f64)
}

/// Coefficient of determination: `1 - mse(actual, predicted) / mse(actual, mean)`.
///
/// The baseline is the constant predictor at the mean of `actual`, so a
/// perfect model scores 1, the mean predictor scores exactly 0, and
/// anything worse than the mean goes negative.
pub fn r_squared(actual: &[f64], predicted: &[f64]) -> Result<f64, MetricsError> {
    let model_mse = mse(actual, predicted)?;
    let mean = actual.iter().sum::<f64>() / actual.len() as f64;
    let baseline: f64 =
        actual.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / actual.len() as f64;
    if baseline == 0.0 {
        return Err(MetricsError::ConstantActual);
    }
    Ok(1.0 - model_mse / baseline)
}

/// The four error measures for one evaluation run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub mae: f64,
    pub mse: f64,
    pub rmse: f64,
    pub r_squared: f64,
    pub sample_count: usize,
}

impl MetricReport {
    pub fn compute(actual: &[f64], predicted: &[f64]) -> Result<Self, MetricsError> {
        Ok(MetricReport {
            mae: mae(actual, predicted)?,
            mse: mse(actual, predicted)?,
            rmse: rmse(actual, predicted)?,
            r_squared: r_squared(actual, predicted)?,
            sample_count: actual.len(),
        })
    }

    /// Same computation, taking `(predicted, actual)` pairs as produced by
    /// model evaluation.
    pub fn from_pairs(pairs: &[(f64, f64)]) -> Result<Self, MetricsError> {
        let predicted: Vec<f64> = pairs.iter().map(|(p, _)| *p).collect();
        let actual: Vec<f64> = pairs.iter().map(|(_, a)| *a).collect();
        Self::compute(&actual, &predicted)
    }
}

/// Sign of a range-span return.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    Up,
    Down,
    Flat,
}

impl Direction {
    pub fn token(self) -> &'static str {
        match self {
            Direction::Up => "up",
            Direction::Down => "down",
            Direction::Flat => "flat",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "up" => Some(Direction::Up),
            "down" => Some(Direction::Down),
            "flat" => Some(Direction::Flat),
            _ => None,
        }
    }

    /// Up and Down oppose each other; Flat opposes nothing.
    pub fn opposes(self, other: Direction) -> bool {
        matches!(
            (self, other),
            (Direction::Up, Direction::Down) | (Direction::Down, Direction::Up)
        )
    }
}

impl std::fmt::Display for Direction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.token())
    }
}

/// Overall gain of a price segment: `(end - start) / start`, with its sign.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReturnSummary {
    pub start_price: f64,
    pub end_price: f64,
    /// Signed fraction, e.g. +0.3051 for a 30.51% rise.
    pub range_return: f64,
    pub direction: Direction,
}

impl ReturnSummary {
    fn classify(range_return: f64) -> Direction {
        if range_return > 0.0 {
            Direction::Up
        } else if range_return < 0.0 {
            Direction::Down
        } else {
            Direction::Flat
        }
    }

    pub fn from_prices(start: f64, end: f64) -> Self {
        let range_return = (end - start) / start;
        ReturnSummary {
            start_price: start,
            end_price: end,
            range_return,
            direction: Self::classify(range_return),
        }
    }

    /// Rebuild a summary from a bare return fraction (used when parsing
    /// result files, where the original prices are not serialized). The
    /// start price is taken as 1.0.
    pub fn from_range_return(range_return: f64) -> Self {
        ReturnSummary {
            start_price: 1.0,
            end_price: 1.0 + range_return,
            range_return,
            direction: Self::classify(range_return),
        }
    }
}

/// Range-span return over a raw price segment, first price to last.
pub fn range_return(prices: &[f64]) -> Result<ReturnSummary, MetricsError> {
    if prices.len() < 2 {
        return Err(MetricsError::TooShort);
    }
    Ok(ReturnSummary::from_prices(
        prices[0],
        prices[prices.len() - 1],
    ))
}

/// Population mean, standard deviation, and count of a sequence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesStats {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

impl SeriesStats {
    pub fn of(values: &[f64]) -> Self {
        // an all-equal sequence has std exactly 0; the naive formula can
        // round the mean and report ~1e-17 instead
        if values.windows(2).all(|w| w[0] == w[1]) {
            return SeriesStats {
                mean: values.first().copied().unwrap_or(f64::NAN),
                std: 0.0,
                count: values.len(),
            };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        SeriesStats {
            mean,
            std: var.sqrt(),
            count: values.len(),
        }
    }
}

/// Strength bands for interpreting a correlation coefficient on |rho|:
/// (0.9, 1.0] very high, (0.7, 0.9] high, (0.5, 0.7] moderate,
/// (0.3, 0.5] low, [0, 0.3] negligible.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BandStrength {
    VeryHigh,
    High,
    Moderate,
    Low,
    Negligible,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BandSign {
    Positive,
    Negative,
    Zero,
}

/// A band label: strength on |rho| plus the sign of rho.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CorrelationBand {
    pub strength: BandStrength,
    pub sign: BandSign,
}

impl std::fmt::Display for CorrelationBand {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let strength = match self.strength {
            BandStrength::VeryHigh => "Very high",
            BandStrength::High => "High",
            BandStrength::Moderate => "Moderate",
            BandStrength::Low => "Low",
            BandStrength::Negligible => "Negligible",
        };
        if self.strength == BandStrength::Negligible {
            match self.sign {
                BandSign::Positive => write!(f, "Negligible (positive)"),
                BandSign::Negative => write!(f, "Negligible (negative)"),
                BandSign::Zero => write!(f, "Negligible"),
            }
        } else {
            match self.sign {
                BandSign::Positive => write!(f, "{strength} positive"),
                BandSign::Negative => write!(f, "{strength} negative"),
                BandSign::Zero => write!(f, "{strength}"),
            }
        }
    }
}

/// Band label for a correlation coefficient. Errors if |rho| > 1.
pub fn interpret_correlation(rho: f64) -> Result<CorrelationBand, MetricsError> {
    if !rho.is_finite() || rho.abs() > 1.0 {
        return Err(MetricsError::OutOfRange(rho));
    }
    let a = rho.abs();
    let strength = if a > 0.9 {
        BandStrength::VeryHigh
    } else if a > 0.7 {
        BandStrength::High
    } else if a > 0.5 {
        BandStrength::Moderate
    } else if a > 0.3 {
        BandStrength::Low
    } else {
        BandStrength::Negligible
    };
    let sign = if rho > 0.0 {
        BandSign::Positive
    } else if rho < 0.0 {
        BandSign::Negative
    } else {
        BandSign::Zero
    };
    Ok(CorrelationBand { strength, sign })
}

/// A correlation coefficient with its interpretation band.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrelationResult {
    pub rho: f64,
    pub interpretation: CorrelationBand,
}

/// Pearson correlation: covariance over the product of standard
/// deviations, population convention. The result is clamped into [-1, 1]
/// only within [`RHO_CLAMP_TOLERANCE`] to absorb rounding.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<CorrelationResult, MetricsError> {
    check_pair(x, y)?;
    if x.len() < 2 {
        return Err(MetricsError::TooShort);
    }
    let sx = SeriesStats::of(x);
    let sy = SeriesStats::of(y);
    if sx.std == 0.0 || sy.std == 0.0 {
        return Err(MetricsError::ConstantInput);
    }
    let n = x.len() as f64;
    let cov = x
        .iter()
        .zip(y)
        .map(|(a, b)| (a - sx.mean) * (b - sy.mean))
        .sum::<f64>()
        / n;
    let mut rho = cov / (sx.std * sy.std);
    if rho.abs() > 1.0 {
        if rho.abs() > 1.0 + RHO_CLAMP_TOLERANCE {
            return Err(MetricsError::OutOfRange(rho));
        }
        rho = rho.clamp(-1.0, 1.0);
    }
    Ok(CorrelationResult {
        rho,
        interpretation: interpret_correlation(rho)?,
    })
}
