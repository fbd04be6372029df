//! Experiment configuration: a TOML file plus flag overrides, flags win.
//!
//! ```toml
//! # run.toml — every key optional; flags override file values
//! data = "data/"            # directory of input CSVs (or battery = true)
//! battery = false
//! out = "out/"
//! factors = "factors.toml"  # factor table; omit for the default levels
//! split = "2016-05-19,2016-05-20,2016-07-18"
//! arch = "mlp,lstm"
//! seed = 42
//! jobs = 2
//! pooling = "best-per-stock"
//! format = "csv"
//! gap_threshold = 0.01
//! ```

use std::path::PathBuf;

use chrono::NaiveDate;
use serde::Deserialize;

use pricecast::harness::{Pooling, ReportFormat};
use pricecast::ingest::SplitSpec;
use pricecast::models::Architecture;

use crate::CliError;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub data: Option<PathBuf>,
    pub battery: Option<bool>,
    pub out: Option<PathBuf>,
    pub factors: Option<PathBuf>,
    pub split: Option<String>,
    pub arch: Option<String>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub pooling: Option<String>,
    pub format: Option<String>,
    pub gap_threshold: Option<f64>,
}

impl ConfigFile {
    pub fn load(path: &PathBuf) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("bad config {}: {e}", path.display())))
    }
}

pub fn parse_split(text: &str) -> Result<SplitSpec, CliError> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(CliError::Config(format!(
            "split must be `train_end,test_start,test_end`, got `{text}`"
        )));
    }
    let date = |s: &str| {
        NaiveDate::parse_from_str(s, "%Y-%m-%d")
            .map_err(|_| CliError::Config(format!("bad date `{s}` in split")))
    };
    SplitSpec::new(date(parts[0])?, date(parts[1])?, date(parts[2])?)
        .map_err(|e| CliError::Config(e.to_string()))
}

pub fn parse_arch_list(text: &str) -> Result<Vec<Architecture>, CliError> {
    let mut out = Vec::new();
    for token in text.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        let arch = Architecture::parse(token)
            .ok_or_else(|| CliError::Config(format!("unknown architecture `{token}`")))?;
        if !out.contains(&arch) {
            out.push(arch);
        }
    }
    if out.is_empty() {
        return Err(CliError::Config("empty architecture list".into()));
    }
    Ok(out)
}

pub fn parse_pooling(text: &str) -> Result<Pooling, CliError> {
    Pooling::parse(text)
        .ok_or_else(|| CliError::Config(format!("unknown pooling mode `{text}`")))
}

pub fn parse_format(text: &str) -> Result<ReportFormat, CliError> {
    ReportFormat::parse(text)
        .ok_or_else(|| CliError::Config(format!("unknown format `{text}`")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_parsing() {
        let split = parse_split("2016-05-19,2016-05-20,2016-07-18").unwrap();
        assert_eq!(split.train_end.to_string(), "2016-05-19");
        assert!(parse_split("2016-05-19,2016-05-20").is_err());
        assert!(parse_split("2016-05-19,2016-05-18,2016-07-18").is_err());
        assert!(parse_split("yesterday,today,tomorrow").is_err());
    }

    #[test]
    fn arch_list_parsing() {
        let archs = parse_arch_list("mlp, lstm,mlp").unwrap();
        assert_eq!(archs, vec![Architecture::Mlp, Architecture::Lstm]);
        assert!(parse_arch_list("cnn").is_err());
        assert!(parse_arch_list("").is_err());
    }

    #[test]
    fn config_file_rejects_unknown_keys() {
        assert!(toml::from_str::<ConfigFile>("seed = 1\n").is_ok());
        assert!(toml::from_str::<ConfigFile>("sed = 1\n").is_err());
    }
}
