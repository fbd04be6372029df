//! Deterministic synthetic price series for tests and desk-scale runs.
//!
//! Generators are pure functions of their spec: the same seed always
//! produces the same series, byte for byte on a given platform. Prices are
//! floored at a small positive epsilon; flooring is reported so degenerate
//! configurations are visible rather than silent.

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::ingest::{Observation, PriceSeries};

/// Starting price for all generators.
pub const START_PRICE: f64 = 100.0;

/// Prices never go below this.
pub const PRICE_FLOOR: f64 = 0.01;

/// First synthetic calendar date; observation t is this date plus t days.
pub fn base_date() -> NaiveDate {
    NaiveDate::from_ymd_opt(2016, 1, 1).unwrap()
}

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("bad spec: {0}")]
    BadSpec(String),
}

/// Standard-normal draws from a seeded ChaCha stream via Box–Muller.
/// Deterministic given the seed; also used by tests that need Gaussian
/// noise without pulling in a distributions crate.
#[derive(Debug, Clone)]
pub struct GaussianSource {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl GaussianSource {
    pub fn new(seed: u64) -> Self {
        GaussianSource {
            rng: ChaCha8Rng::seed_from_u64(seed),
            spare: None,
        }
    }

    #[allow(clippy::should_implement_trait)]
    pub fn next(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        // u1 in (0, 1] so the log is finite
        let u1: f64 = 1.0 - self.rng.gen::<f64>();
        let u2: f64 = self.rng.gen();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }
}

/// Shapes a generator can produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthKind {
    /// Accumulating steps: `p[t+1] = p[t] + drift + noise_scale * z`.
    RandomWalk,
    /// Deterministic ramp with non-accumulating noise around it:
    /// `p[t] = start + drift * t + noise_scale * z[t]`.
    Trending,
    /// Mean-reverting around the start price with reversion rate 0.2:
    /// `p[t+1] = p[t] + 0.2 * (start - p[t]) + noise_scale * z`.
    MeanReverting,
    /// Sine wave of period 20 with amplitude `drift` plus noise:
    /// `p[t] = start + drift * sin(2 pi t / 20) + noise_scale * z[t]`.
    SinePlusNoise,
    /// A random walk `s` and its reflection `c - s` with `c = 2 * max(s)`,
    /// so both series stay positive and their range returns point opposite
    /// ways whenever `s` is not flat.
    MirroredPair,
}

impl SynthKind {
    pub fn token(self) -> &'static str {
        match self {
            SynthKind::RandomWalk => "random_walk",
            SynthKind::Trending => "trending",
            SynthKind::MeanReverting => "mean_reverting",
            SynthKind::SinePlusNoise => "sine_plus_noise",
            SynthKind::MirroredPair => "mirrored_pair",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "random_walk" => Some(SynthKind::RandomWalk),
            "trending" => Some(SynthKind::Trending),
            "mean_reverting" => Some(SynthKind::MeanReverting),
            "sine_plus_noise" => Some(SynthKind::SinePlusNoise),
            "mirrored_pair" => Some(SynthKind::MirroredPair),
            _ => None,
        }
    }

    fn symbol_prefix(self) -> &'static str {
        match self {
            SynthKind::RandomWalk => "rw",
            SynthKind::Trending => "tr",
            SynthKind::MeanReverting => "mr",
            SynthKind::SinePlusNoise => "sn",
            SynthKind::MirroredPair => "mp",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSpec {
    pub kind: SynthKind,
    pub length: usize,
    /// Per-step drift (RandomWalk, MeanReverting) or ramp slope / amplitude
    /// (Trending, SinePlusNoise).
    pub drift: f64,
    pub noise_scale: f64,
    pub seed: u64,
}

/// Output of [`generate`]: the series, its reflection for
/// [`SynthKind::MirroredPair`], and whether the price floor ever engaged.
#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub series: PriceSeries,
    pub mirror: Option<PriceSeries>,
    pub floored: bool,
}

fn to_series(symbol: String, prices: &[f64]) -> PriceSeries {
    let start = base_date();
    let obs: Vec<Observation> = prices
        .iter()
        .enumerate()
        .map(|(t, &close)| Observation {
            date: start + chrono::Days::new(t as u64),
            close,
        })
        .collect();
    PriceSeries::new(symbol, obs, "synth").expect("generated series satisfies invariants")
}

/// Generate a deterministic synthetic series (or pair) from a spec.
pub fn generate(spec: &SynthSpec) -> Result<Generated, SynthError> {
    if spec.length < 2 {
        return Err(SynthError::BadSpec(format!(
            "length {} < 2",
            spec.length
        )));
    }
    if spec.noise_scale < 0.0 || !spec.noise_scale.is_finite() || !spec.drift.is_finite() {
        return Err(SynthError::BadSpec(
            "drift and noise_scale must be finite, noise_scale non-negative".into(),
        ));
    }
    let mut gauss = GaussianSource::new(spec.seed);
    let mut floored = false;
    let mut floor = |p: f64| {
        if p < PRICE_FLOOR {
            floored = true;
            PRICE_FLOOR
        } else {
            p
        }
    };
    let t_max = spec.length;
    let mut prices = Vec::with_capacity(t_max);
    match spec.kind {
        SynthKind::RandomWalk | SynthKind::MirroredPair => {
            let mut p = START_PRICE;
            prices.push(p);
            for _ in 1..t_max {
                p = floor(p + spec.drift + spec.noise_scale * gauss.next());
                prices.push(p);
            }
        }
        SynthKind::Trending => {
            for t in 0..t_max {
                prices.push(floor(
                    START_PRICE + spec.drift * t as f64 + spec.noise_scale * gauss.next(),
                ));
            }
        }
        SynthKind::MeanReverting => {
            let mut p = START_PRICE;
            prices.push(p);
            for _ in 1..t_max {
                p = floor(p + 0.2 * (START_PRICE - p) + spec.noise_scale * gauss.next());
                prices.push(p);
            }
        }
        SynthKind::SinePlusNoise => {
            for t in 0..t_max {
                let phase = 2.0 * std::f64::consts::PI * t as f64 / 20.0;
                prices.push(floor(
                    START_PRICE + spec.drift * phase.sin() + spec.noise_scale * gauss.next(),
                ));
            }
        }
    }

    let symbol = format!("{}{:02}", spec.kind.symbol_prefix(), spec.seed);
    let mirror = if spec.kind == SynthKind::MirroredPair {
        let c = 2.0 * prices.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mirrored: Vec<f64> = prices.iter().map(|p| c - p).collect();
        Some(to_series(format!("{symbol}m"), &mirrored))
    } else {
        None
    };
    Ok(Generated {
        series: to_series(symbol, &prices),
        mirror,
        floored,
    })
}

/// The standard 24-series battery used by the experiment tests: 8 random
/// walks, 8 trends with ramp slopes in ±{0.1, 0.2, 0.4, 0.8} times the
/// noise scale, and 8 mean-reverting series. T = 200, noise scale 0.5,
/// seeds 1 through 24. Controls span up, down, and near-flat.
pub fn battery() -> Vec<PriceSeries> {
    let noise = 0.5;
    let mut out = Vec::with_capacity(24);
    for seed in 1..=8u64 {
        let g = generate(&SynthSpec {
            kind: SynthKind::RandomWalk,
            length: 200,
            drift: 0.0,
            noise_scale: noise,
            seed,
        })
        .expect("battery spec is valid");
        debug_assert!(!g.floored);
        out.push(g.series);
    }
    let drift_multipliers = [0.1, -0.1, 0.2, -0.2, 0.4, -0.4, 0.8, -0.8];
    for (i, m) in drift_multipliers.iter().enumerate() {
        let g = generate(&SynthSpec {
            kind: SynthKind::Trending,
            length: 200,
            drift: m * noise,
            noise_scale: noise,
            seed: 9 + i as u64,
        })
        .expect("battery spec is valid");
        debug_assert!(!g.floored);
        out.push(g.series);
    }
    for seed in 17..=24u64 {
        let g = generate(&SynthSpec {
            kind: SynthKind::MeanReverting,
            length: 200,
            drift: 0.0,
            noise_scale: noise,
            seed,
        })
        .expect("battery spec is valid");
        debug_assert!(!g.floored);
        out.push(g.series);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{range_return, Direction};

    #[test]
    fn constant_spec_yields_flat_series() {
        let g = generate(&SynthSpec {
            kind: SynthKind::RandomWalk,
            length: 10,
            drift: 0.0,
            noise_scale: 0.0,
            seed: 1,
        })
        .unwrap();
        assert!(g.series.closes().iter().all(|&p| p == START_PRICE));
        let control = range_return(&g.series.closes()).unwrap();
        assert_eq!(control.direction, Direction::Flat);
    }

    #[test]
    fn pure_drift_return_by_hand() {
        // drift +1 from 100 over 31 points: (130 - 100) / 100 = +30%
        let g = generate(&SynthSpec {
            kind: SynthKind::RandomWalk,
            length: 31,
            drift: 1.0,
            noise_scale: 0.0,
            seed: 1,
        })
        .unwrap();
        let control = range_return(&g.series.closes()).unwrap();
        assert!((control.range_return - 0.30).abs() < 1e-12);
        assert_eq!(control.direction, Direction::Up);
    }

    #[test]
    fn determinism_by_seed() {
        let spec = SynthSpec {
            kind: SynthKind::MeanReverting,
            length: 50,
            drift: 0.0,
            noise_scale: 0.7,
            seed: 99,
        };
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a, b);
        let c = generate(&SynthSpec { seed: 100, ..spec }).unwrap();
        assert_ne!(a.series.closes(), c.series.closes());
    }

    #[test]
    fn mirrored_pair_opposes_direction() {
        let g = generate(&SynthSpec {
            kind: SynthKind::MirroredPair,
            length: 120,
            drift: 0.3,
            noise_scale: 0.5,
            seed: 5,
        })
        .unwrap();
        let mirror = g.mirror.expect("pair kind yields a mirror");
        assert!(mirror.closes().iter().all(|&p| p > 0.0));
        let a = range_return(&g.series.closes()).unwrap();
        let b = range_return(&mirror.closes()).unwrap();
        assert_ne!(a.direction, Direction::Flat);
        assert!(a.direction.opposes(b.direction));
        assert_eq!(mirror.symbol(), "mp05m");
    }

    #[test]
    fn flooring_is_reported() {
        let g = generate(&SynthSpec {
            kind: SynthKind::Trending,
            length: 50,
            drift: -10.0,
            noise_scale: 0.1,
            seed: 2,
        })
        .unwrap();
        assert!(g.floored);
        assert!(g.series.closes().iter().all(|&p| p >= PRICE_FLOOR));
    }

    #[test]
    fn battery_shape_and_positivity() {
        let battery = battery();
        assert_eq!(battery.len(), 24);
        let mut up = 0;
        let mut down = 0;
        for series in &battery {
            assert_eq!(series.len(), 200);
            assert!(series.closes().iter().all(|&p| p >= 1.0), "{} dipped", series.symbol());
            match range_return(&series.closes()).unwrap().direction {
                Direction::Up => up += 1,
                Direction::Down => down += 1,
                Direction::Flat => {}
            }
        }
        // the battery must exercise both directions
        assert!(up >= 5, "only {up} rising series");
        assert!(down >= 5, "only {down} falling series");
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(generate(&SynthSpec {
            kind: SynthKind::RandomWalk,
            length: 1,
            drift: 0.0,
            noise_scale: 0.0,
            seed: 0,
        })
        .is_err());
        assert!(generate(&SynthSpec {
            kind: SynthKind::RandomWalk,
            length: 10,
            drift: 0.0,
            noise_scale: -1.0,
            seed: 0,
        })
        .is_err());
    }
}
