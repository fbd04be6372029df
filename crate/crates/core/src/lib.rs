//! Evaluation workbench for univariate price forecasting.
//!
//! The crate trains small neural networks on sliding windows of a price
//! series, scores them with the classical prediction-error measures, and
//! puts those scores next to the one thing they cannot encode: the
//! direction of the underlying price move. Error metrics are built from
//! absolute or squared residuals, so a series and its mirror image produce
//! identical scores while their returns point opposite ways; the harness
//! makes that decoupling measurable.
//!
//! Modules:
//! - [`ingest`] — CSV loading, integrity checks, min-max normalization,
//!   rescaled-range persistence estimates, sliding windows, date splits.
//! - [`models`] — six architectures (MLP, RNN, LSTM, GRU, BiRNN, BiLSTM)
//!   with hand-written forward/backward passes and seeded training.
//! - [`metrics`] — MAE/MSE/RMSE/R², range-span returns, Pearson
//!   correlation and its interpretation bands.
//! - [`oed`] — the L16(4^5) orthogonal array, factor plans, and range
//!   analysis of plan responses.
//! - [`harness`] — the experiment driver: per-(stock, architecture,
//!   assignment) runs, no-treatment controls, divergence detection, the
//!   metric-vs-direction correlation matrix, and report emission.
//! - [`synth`] — deterministic synthetic series generators used for tests
//!   and desk-scale experiments.

pub mod harness;
pub mod ingest;
pub mod metrics;
pub mod models;
pub mod oed;
pub mod synth;

pub use harness::{run_experiment, RunRecord, RunStatus};
pub use ingest::{PriceSeries, SplitSpec, WindowedDataset};
pub use metrics::{Direction, MetricReport, ReturnSummary};
pub use models::{ActivationKind, Architecture, ModelSpec, TrainConfig, TrainedModel};
pub use oed::{FactorAssignment, FactorTable};
