//! Six small forecasting architectures with hand-written forward and
//! backward passes: MLP, RNN, LSTM, GRU, and the bidirectional RNN/LSTM
//! variants.
//!
//! Every model maps a window of L normalized prices to one scalar. The MLP
//! sees the window as a flat feature vector; the recurrent models consume
//! it one value per timestep with N hidden units. Bidirectional variants
//! run a second pass right-to-left over the same window — never beyond it —
//! and feed both final hidden states to the linear head. Gates are always
//! sigmoid; the configured activation applies to hidden updates and
//! candidate/cell nonlinearities only.
//!
//! Training is plain full-batch gradient descent, seeded and bit-for-bit
//! reproducible on a machine: same spec, config, and data give the same
//! parameters.

mod net;

use std::io::{BufRead, BufReader, Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::ingest::WindowedDataset;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("input length {got} does not match window length {expected}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("training loss became non-finite at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("malformed model file: {0}")]
    ParseModel(String),
    #[error("model i/o failed: {0}")]
    Io(String),
}

/// Pointwise nonlinearity. Each kind is total and finite on finite input,
/// and its derivative is recoverable from the output value alone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ActivationKind {
    Linear,
    Sigmoid,
    Tanh,
    ReLU,
}

impl ActivationKind {
    pub const ALL: [ActivationKind; 4] = [
        ActivationKind::Linear,
        ActivationKind::Sigmoid,
        ActivationKind::Tanh,
        ActivationKind::ReLU,
    ];

    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            ActivationKind::Linear => x,
            ActivationKind::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            ActivationKind::Tanh => x.tanh(),
            ActivationKind::ReLU => x.max(0.0),
        }
    }

    /// Derivative expressed through the activation's output y = f(x).
    /// For ReLU the subgradient at 0 is taken as 0.
    #[inline]
    pub fn deriv_from_output(self, y: f64) -> f64 {
        match self {
            ActivationKind::Linear => 1.0,
            ActivationKind::Sigmoid => y * (1.0 - y),
            ActivationKind::Tanh => 1.0 - y * y,
            ActivationKind::ReLU => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn token(self) -> &'static str {
        match self {
            ActivationKind::Linear => "linear",
            ActivationKind::Sigmoid => "sigmoid",
            ActivationKind::Tanh => "tanh",
            ActivationKind::ReLU => "relu",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "linear" => Some(ActivationKind::Linear),
            "sigmoid" => Some(ActivationKind::Sigmoid),
            "tanh" => Some(ActivationKind::Tanh),
            "relu" => Some(ActivationKind::ReLU),
            _ => None,
        }
    }
}

impl std::fmt::Display for ActivationKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.token())
    }
}

/// The six architectures, in the fixed tag order used for tie-breaking
/// and report sorting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Architecture {
    Mlp,
    Rnn,
    Lstm,
    Gru,
    BiRnn,
    BiLstm,
}

impl Architecture {
    pub const ALL: [Architecture; 6] = [
        Architecture::Mlp,
        Architecture::Rnn,
        Architecture::Lstm,
        Architecture::Gru,
        Architecture::BiRnn,
        Architecture::BiLstm,
    ];

    pub fn token(self) -> &'static str {
        match self {
            Architecture::Mlp => "mlp",
            Architecture::Rnn => "rnn",
            Architecture::Lstm => "lstm",
            Architecture::Gru => "gru",
            Architecture::BiRnn => "birnn",
            Architecture::BiLstm => "bilstm",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "mlp" => Some(Architecture::Mlp),
            "rnn" => Some(Architecture::Rnn),
            "lstm" => Some(Architecture::Lstm),
            "gru" => Some(Architecture::Gru),
            "birnn" => Some(Architecture::BiRnn),
            "bilstm" => Some(Architecture::BiLstm),
            _ => None,
        }
    }
}

impl std::fmt::Display for Architecture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.token())
    }
}

/// Architecture plus the structural factors it is built with.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelSpec {
    pub architecture: Architecture,
    pub window_length: usize,
    pub hidden_nodes: usize,
    pub activation: ActivationKind,
}

impl ModelSpec {
    pub fn new(
        architecture: Architecture,
        window_length: usize,
        hidden_nodes: usize,
        activation: ActivationKind,
    ) -> Result<Self, ModelError> {
        if window_length < 1 || hidden_nodes < 1 {
            return Err(ModelError::InvalidSpec(format!(
                "window length {window_length} and hidden nodes {hidden_nodes} must be at least 1"
            )));
        }
        Ok(ModelSpec {
            architecture,
            window_length,
            hidden_nodes,
            activation,
        })
    }

    /// Flat parameter count, a pure function of (architecture, L, N).
    pub fn param_count(&self) -> usize {
        let n = self.hidden_nodes;
        let l = self.window_length;
        let cell = n * (n + 2); // wx + wh + b for one gate of one direction
        match self.architecture {
            Architecture::Mlp => n * l + 2 * n + 1,
            Architecture::Rnn => cell + n + 1,
            Architecture::Lstm => 4 * cell + n + 1,
            Architecture::Gru => 3 * cell + n + 1,
            Architecture::BiRnn => 2 * cell + 2 * n + 1,
            Architecture::BiLstm => 8 * cell + 2 * n + 1,
        }
    }
}

/// How a layout segment is initialized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SegmentKind {
    /// Drawn uniformly from ±sqrt(6 / (fan_in + fan_out)).
    Weight { fan_in: usize, fan_out: usize },
    /// Set to a constant; consumes no randomness.
    Bias { init: f64 },
}

/// One named block of the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub name: &'static str,
    pub offset: usize,
    pub len: usize,
    pub kind: SegmentKind,
}

type GateNames = (&'static str, &'static str, &'static str);

const RNN_GATES: [GateNames; 1] = [("wx", "wh", "b")];
const RNN_FWD: [GateNames; 1] = [("fwd.wx", "fwd.wh", "fwd.b")];
const RNN_BWD: [GateNames; 1] = [("bwd.wx", "bwd.wh", "bwd.b")];
const LSTM_GATES: [GateNames; 4] = [
    ("i.wx", "i.wh", "i.b"),
    ("f.wx", "f.wh", "f.b"),
    ("g.wx", "g.wh", "g.b"),
    ("o.wx", "o.wh", "o.b"),
];
const LSTM_FWD: [GateNames; 4] = [
    ("fwd.i.wx", "fwd.i.wh", "fwd.i.b"),
    ("fwd.f.wx", "fwd.f.wh", "fwd.f.b"),
    ("fwd.g.wx", "fwd.g.wh", "fwd.g.b"),
    ("fwd.o.wx", "fwd.o.wh", "fwd.o.b"),
];
const LSTM_BWD: [GateNames; 4] = [
    ("bwd.i.wx", "bwd.i.wh", "bwd.i.b"),
    ("bwd.f.wx", "bwd.f.wh", "bwd.f.b"),
    ("bwd.g.wx", "bwd.g.wh", "bwd.g.b"),
    ("bwd.o.wx", "bwd.o.wh", "bwd.o.b"),
];
const GRU_GATES: [GateNames; 3] = [
    ("z.wx", "z.wh", "z.b"),
    ("r.wx", "r.wh", "r.b"),
    ("c.wx", "c.wh", "c.b"),
];

fn push_segment(
    segments: &mut Vec<Segment>,
    offset: &mut usize,
    name: &'static str,
    len: usize,
    kind: SegmentKind,
) {
    segments.push(Segment {
        name,
        offset: *offset,
        len,
        kind,
    });
    *offset += len;
}

/// One recurrent direction: per gate, an input weight vector (N), a
/// hidden-to-hidden matrix (NxN, row-major), and a bias vector (N).
fn push_gates(
    segments: &mut Vec<Segment>,
    offset: &mut usize,
    n: usize,
    gates: &[GateNames],
    forget_gate: Option<usize>,
) {
    for (g, (wx, wh, b)) in gates.iter().enumerate() {
        push_segment(segments, offset, wx, n, SegmentKind::Weight { fan_in: 1, fan_out: n });
        push_segment(segments, offset, wh, n * n, SegmentKind::Weight { fan_in: n, fan_out: n });
        let init = if forget_gate == Some(g) { 1.0 } else { 0.0 };
        push_segment(segments, offset, b, n, SegmentKind::Bias { init });
    }
}

/// The flat parameter layout of a spec, in storage (and RNG draw) order.
pub fn layout(spec: &ModelSpec) -> Vec<Segment> {
    let n = spec.hidden_nodes;
    let l = spec.window_length;
    let mut segments = Vec::new();
    let mut offset = 0usize;
    let seg = &mut segments;
    let off = &mut offset;
    let bias = SegmentKind::Bias { init: 0.0 };

    match spec.architecture {
        Architecture::Mlp => {
            push_segment(seg, off, "w1", n * l, SegmentKind::Weight { fan_in: l, fan_out: n });
            push_segment(seg, off, "b1", n, bias);
            push_segment(seg, off, "wo", n, SegmentKind::Weight { fan_in: n, fan_out: 1 });
            push_segment(seg, off, "bo", 1, bias);
        }
        Architecture::Rnn => {
            push_gates(seg, off, n, &RNN_GATES, None);
            push_segment(seg, off, "wo", n, SegmentKind::Weight { fan_in: n, fan_out: 1 });
            push_segment(seg, off, "bo", 1, bias);
        }
        Architecture::Lstm => {
            push_gates(seg, off, n, &LSTM_GATES, Some(1));
            push_segment(seg, off, "wo", n, SegmentKind::Weight { fan_in: n, fan_out: 1 });
            push_segment(seg, off, "bo", 1, bias);
        }
        Architecture::Gru => {
            push_gates(seg, off, n, &GRU_GATES, None);
            push_segment(seg, off, "wo", n, SegmentKind::Weight { fan_in: n, fan_out: 1 });
            push_segment(seg, off, "bo", 1, bias);
        }
        Architecture::BiRnn => {
            push_gates(seg, off, n, &RNN_FWD, None);
            push_gates(seg, off, n, &RNN_BWD, None);
            push_segment(seg, off, "wo", 2 * n, SegmentKind::Weight { fan_in: 2 * n, fan_out: 1 });
            push_segment(seg, off, "bo", 1, bias);
        }
        Architecture::BiLstm => {
            push_gates(seg, off, n, &LSTM_FWD, Some(1));
            push_gates(seg, off, n, &LSTM_BWD, Some(1));
            push_segment(seg, off, "wo", 2 * n, SegmentKind::Weight { fan_in: 2 * n, fan_out: 1 });
            push_segment(seg, off, "bo", 1, bias);
        }
    }
    segments
}

/// Flat view of a model's trainable parameters. Entries stay finite; the
/// layout is fixed by the spec.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet {
    architecture: Architecture,
    window_length: usize,
    hidden_nodes: usize,
    values: Vec<f64>,
}

impl ParameterSet {
    pub fn zeros(spec: &ModelSpec) -> Self {
        ParameterSet {
            architecture: spec.architecture,
            window_length: spec.window_length,
            hidden_nodes: spec.hidden_nodes,
            values: vec![0.0; spec.param_count()],
        }
    }

    pub fn from_values(spec: &ModelSpec, values: Vec<f64>) -> Result<Self, ModelError> {
        if values.len() != spec.param_count() {
            return Err(ModelError::ShapeMismatch {
                expected: spec.param_count(),
                got: values.len(),
            });
        }
        Ok(ParameterSet {
            architecture: spec.architecture,
            window_length: spec.window_length,
            hidden_nodes: spec.hidden_nodes,
            values,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    fn matches(&self, spec: &ModelSpec) -> bool {
        self.architecture == spec.architecture
            && self.window_length == spec.window_length
            && self.hidden_nodes == spec.hidden_nodes
    }
}

/// Deterministic initialization: weight segments drawn uniformly from
/// ±sqrt(6 / (fan_in + fan_out)) in layout order, biases set to constants
/// (zero, except LSTM forget-gate biases at 1.0) without consuming
/// randomness.
pub fn init_parameters(spec: &ModelSpec, seed: u64) -> ParameterSet {
    let mut params = ParameterSet::zeros(spec);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for segment in layout(spec) {
        let slice = &mut params.values[segment.offset..segment.offset + segment.len];
        match segment.kind {
            SegmentKind::Weight { fan_in, fan_out } => {
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                for v in slice {
                    *v = limit * (2.0 * rng.gen::<f64>() - 1.0);
                }
            }
            SegmentKind::Bias { init } => slice.fill(init),
        }
    }
    params
}

/// Run a window through the model.
pub fn forward(spec: &ModelSpec, params: &ParameterSet, input: &[f64]) -> Result<f64, ModelError> {
    check_shapes(spec, params, input)?;
    Ok(net::forward(spec, params.values(), input))
}

/// Gradient of the squared error `(prediction - target)^2` for every
/// parameter, by backpropagation (through time for the recurrent
/// variants), plus the sample loss itself.
pub fn backward(
    spec: &ModelSpec,
    params: &ParameterSet,
    input: &[f64],
    target: f64,
) -> Result<(ParameterSet, f64), ModelError> {
    check_shapes(spec, params, input)?;
    let mut grad = ParameterSet::zeros(spec);
    let loss = net::backward_into(spec, params.values(), input, target, &mut grad.values);
    Ok((grad, loss))
}

fn check_shapes(spec: &ModelSpec, params: &ParameterSet, input: &[f64]) -> Result<(), ModelError> {
    if input.len() != spec.window_length {
        return Err(ModelError::ShapeMismatch {
            expected: spec.window_length,
            got: input.len(),
        });
    }
    if !params.matches(spec) || params.len() != spec.param_count() {
        return Err(ModelError::ShapeMismatch {
            expected: spec.param_count(),
            got: params.len(),
        });
    }
    Ok(())
}

/// Gradient-descent settings. All randomness flows from `seed`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl TrainConfig {
    /// Default step size per activation: saturating nonlinearities take
    /// 0.05, unbounded ones (ReLU, Linear) take 0.005.
    pub fn default_learning_rate(activation: ActivationKind) -> f64 {
        match activation {
            ActivationKind::Sigmoid | ActivationKind::Tanh => 0.05,
            ActivationKind::ReLU | ActivationKind::Linear => 0.005,
        }
    }

    pub fn for_activation(activation: ActivationKind, epochs: usize, seed: u64) -> Self {
        TrainConfig {
            epochs,
            learning_rate: Self::default_learning_rate(activation),
            seed,
        }
    }
}

/// A trained model: spec, final parameters, per-epoch mean training MSE,
/// and the seed it was trained from.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub spec: ModelSpec,
    pub parameters: ParameterSet,
    pub loss_curve: Vec<f64>,
    pub seed: u64,
}

/// Full-batch gradient descent for exactly `config.epochs` passes.
///
/// Each epoch accumulates the mean gradient over all samples, records the
/// mean training MSE measured before the update, then steps. Divergence
/// aborts with the epoch index instead of clipping.
pub fn train(
    spec: &ModelSpec,
    config: &TrainConfig,
    data: &WindowedDataset,
) -> Result<TrainedModel, ModelError> {
    if data.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    if data.window_length() != spec.window_length {
        return Err(ModelError::ShapeMismatch {
            expected: spec.window_length,
            got: data.window_length(),
        });
    }
    if config.learning_rate <= 0.0 || !config.learning_rate.is_finite() {
        return Err(ModelError::InvalidSpec(format!(
            "learning rate {} must be positive and finite",
            config.learning_rate
        )));
    }

    let mut params = init_parameters(spec, config.seed);
    let mut grad = vec![0.0f64; params.len()];
    let mut loss_curve = Vec::with_capacity(config.epochs);
    let samples = data.len() as f64;

    for epoch in 0..config.epochs {
        grad.fill(0.0);
        let mut loss_sum = 0.0;
        for k in 0..data.len() {
            loss_sum += net::backward_into(
                spec,
                params.values(),
                data.input(k),
                data.target(k),
                &mut grad,
            );
        }
        let mean_loss = loss_sum / samples;
        if !mean_loss.is_finite() {
            return Err(ModelError::NonFiniteLoss { epoch });
        }
        loss_curve.push(mean_loss);
        let step = config.learning_rate / samples;
        for (p, g) in params.values_mut().iter_mut().zip(&grad) {
            *p -= step * g;
        }
    }

    if !params.all_finite() {
        return Err(ModelError::NonFiniteLoss {
            epoch: config.epochs,
        });
    }
    Ok(TrainedModel {
        spec: *spec,
        parameters: params,
        loss_curve,
        seed: config.seed,
    })
}

/// The parameter mirror of a model: identical weights, every bias segment
/// negated.
///
/// For a Linear-activation model the computation graph is additions and
/// multiplications only, both of which are sign-symmetric in IEEE
/// arithmetic, so evaluating the mirrored parameters on a negated window
/// yields the exact bitwise negation of the original prediction. With
/// other activations the relation holds only approximately.
pub fn mirror_parameters(model: &TrainedModel) -> TrainedModel {
    let mut mirrored = model.clone();
    for segment in layout(&model.spec) {
        if matches!(segment.kind, SegmentKind::Bias { .. }) {
            for v in &mut mirrored.parameters.values_mut()[segment.offset..segment.offset + segment.len]
            {
                *v = -*v;
            }
        }
    }
    mirrored
}

/// One `(prediction, target)` pair per sample, in source order.
pub fn predict_series(
    model: &TrainedModel,
    data: &WindowedDataset,
) -> Result<Vec<(f64, f64)>, ModelError> {
    if data.window_length() != model.spec.window_length {
        return Err(ModelError::ShapeMismatch {
            expected: model.spec.window_length,
            got: data.window_length(),
        });
    }
    let mut pairs = Vec::with_capacity(data.len());
    for k in 0..data.len() {
        let prediction = net::forward(&model.spec, model.parameters.values(), data.input(k));
        pairs.push((prediction, data.target(k)));
    }
    Ok(pairs)
}

/// Write a model in the flat text format: five header lines
/// (`arch`, `window_length`, `hidden_nodes`, `activation`, `seed`), a
/// `params <count>` line, then one parameter per line as decimal text
/// with 17 significant digits. The round trip is bit-exact.
pub fn write_model(model: &TrainedModel, mut w: impl Write) -> Result<(), ModelError> {
    let io_err = |e: std::io::Error| ModelError::Io(e.to_string());
    writeln!(w, "arch {}", model.spec.architecture.token()).map_err(io_err)?;
    writeln!(w, "window_length {}", model.spec.window_length).map_err(io_err)?;
    writeln!(w, "hidden_nodes {}", model.spec.hidden_nodes).map_err(io_err)?;
    writeln!(w, "activation {}", model.spec.activation.token()).map_err(io_err)?;
    writeln!(w, "seed {}", model.seed).map_err(io_err)?;
    writeln!(w, "params {}", model.parameters.len()).map_err(io_err)?;
    for v in model.parameters.values() {
        writeln!(w, "{v:.16e}").map_err(io_err)?;
    }
    Ok(())
}

/// Read a model written by [`write_model`]. The loss curve is not part of
/// the format, so the result carries an empty one.
pub fn read_model(r: impl Read) -> Result<TrainedModel, ModelError> {
    let mut lines = BufReader::new(r).lines();
    let mut next_field = |key: &str| -> Result<String, ModelError> {
        let line = lines
            .next()
            .ok_or_else(|| ModelError::ParseModel(format!("missing `{key}` line")))?
            .map_err(|e| ModelError::Io(e.to_string()))?;
        let (k, v) = line
            .split_once(' ')
            .ok_or_else(|| ModelError::ParseModel(format!("bad `{key}` line: {line}")))?;
        if k != key {
            return Err(ModelError::ParseModel(format!(
                "expected `{key}`, found `{k}`"
            )));
        }
        Ok(v.to_string())
    };

    let arch = Architecture::parse(&next_field("arch")?)
        .ok_or_else(|| ModelError::ParseModel("unknown architecture".into()))?;
    let window_length: usize = next_field("window_length")?
        .parse()
        .map_err(|_| ModelError::ParseModel("bad window_length".into()))?;
    let hidden_nodes: usize = next_field("hidden_nodes")?
        .parse()
        .map_err(|_| ModelError::ParseModel("bad hidden_nodes".into()))?;
    let activation = ActivationKind::parse(&next_field("activation")?)
        .ok_or_else(|| ModelError::ParseModel("unknown activation".into()))?;
    let seed: u64 = next_field("seed")?
        .parse()
        .map_err(|_| ModelError::ParseModel("bad seed".into()))?;
    let count: usize = next_field("params")?
        .parse()
        .map_err(|_| ModelError::ParseModel("bad params count".into()))?;

    let spec = ModelSpec::new(arch, window_length, hidden_nodes, activation)?;
    if count != spec.param_count() {
        return Err(ModelError::ParseModel(format!(
            "param count {count} does not match spec ({})",
            spec.param_count()
        )));
    }
    let mut values = Vec::with_capacity(count);
    for line in lines {
        let line = line.map_err(|e| ModelError::Io(e.to_string()))?;
        if line.is_empty() {
            continue;
        }
        values.push(
            line.parse::<f64>()
                .map_err(|_| ModelError::ParseModel(format!("bad parameter `{line}`")))?,
        );
    }
    if values.len() != count {
        return Err(ModelError::ParseModel(format!(
            "expected {count} parameters, found {}",
            values.len()
        )));
    }
    Ok(TrainedModel {
        spec,
        parameters: ParameterSet::from_values(&spec, values)?,
        loss_curve: Vec::new(),
        seed,
    })
}
