//! Forward and backward passes for the six architectures, over the flat
//! parameter layout defined in the parent module.
//!
//! Conventions: hidden-to-hidden matrices are row-major with `wh[i*n + j]`
//! the weight from previous-state unit `j` into unit `i`. Recurrent state
//! starts at zero. Bidirectional variants reuse the unidirectional cell
//! code with the window traversed in reverse.

use super::{ActivationKind, Architecture, ModelSpec};

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
fn sigmoid_deriv(y: f64) -> f64 {
    y * (1.0 - y)
}

/// Offsets of one gate's parameter blocks within the flat vector.
#[derive(Clone, Copy)]
struct Gate {
    wx: usize,
    wh: usize,
    b: usize,
}

fn gate(dir_offset: usize, n: usize, index: usize) -> Gate {
    let base = dir_offset + index * n * (n + 2);
    Gate {
        wx: base,
        wh: base + n,
        b: base + n + n * n,
    }
}

/// Size of one recurrent direction's parameters.
fn dir_size(gates: usize, n: usize) -> usize {
    gates * n * (n + 2)
}

#[inline]
fn input_at(input: &[f64], t: usize, reversed: bool) -> f64 {
    if reversed {
        input[input.len() - 1 - t]
    } else {
        input[t]
    }
}

fn head_forward(p: &[f64], offset: usize, h: &[f64]) -> f64 {
    let mut y = p[offset + h.len()];
    for (i, hi) in h.iter().enumerate() {
        y += p[offset + i] * hi;
    }
    y
}

fn head_backward(p: &[f64], offset: usize, h: &[f64], dy: f64, grad: &mut [f64]) -> Vec<f64> {
    grad[offset + h.len()] += dy;
    let mut dh = Vec::with_capacity(h.len());
    for (i, hi) in h.iter().enumerate() {
        grad[offset + i] += dy * hi;
        dh.push(p[offset + i] * dy);
    }
    dh
}

// ---------------------------------------------------------------------------
// MLP
// ---------------------------------------------------------------------------

fn mlp_hidden(p: &[f64], n: usize, l: usize, input: &[f64], act: ActivationKind) -> Vec<f64> {
    let b1 = n * l;
    let mut h = Vec::with_capacity(n);
    for i in 0..n {
        let mut z = p[b1 + i];
        let row = i * l;
        for (j, x) in input.iter().enumerate() {
            z += p[row + j] * x;
        }
        h.push(act.apply(z));
    }
    h
}

fn mlp_forward(p: &[f64], n: usize, l: usize, input: &[f64], act: ActivationKind) -> f64 {
    let h = mlp_hidden(p, n, l, input, act);
    head_forward(p, n * l + n, &h)
}

fn mlp_backward(
    p: &[f64],
    n: usize,
    l: usize,
    input: &[f64],
    target: f64,
    act: ActivationKind,
    grad: &mut [f64],
) -> f64 {
    let h = mlp_hidden(p, n, l, input, act);
    let head = n * l + n;
    let y = head_forward(p, head, &h);
    let residual = y - target;
    let dy = 2.0 * residual;
    let dh = head_backward(p, head, &h, dy, grad);
    let b1 = n * l;
    for i in 0..n {
        let dz = dh[i] * act.deriv_from_output(h[i]);
        grad[b1 + i] += dz;
        let row = i * l;
        for (j, x) in input.iter().enumerate() {
            grad[row + j] += dz * x;
        }
    }
    residual * residual
}

// ---------------------------------------------------------------------------
// Simple recurrent cell
// ---------------------------------------------------------------------------

/// Hidden states for every step, `(L+1) * n` with the zero initial state
/// in front.
fn rnn_states(
    p: &[f64],
    dir: usize,
    n: usize,
    input: &[f64],
    reversed: bool,
    act: ActivationKind,
) -> Vec<f64> {
    let l = input.len();
    let g = gate(dir, n, 0);
    let mut hs = vec![0.0; (l + 1) * n];
    for t in 0..l {
        let x = input_at(input, t, reversed);
        let (prev, next) = hs.split_at_mut((t + 1) * n);
        let h_prev = &prev[t * n..];
        for (i, out) in next[..n].iter_mut().enumerate() {
            let mut z = p[g.b + i] + p[g.wx + i] * x;
            let row = g.wh + i * n;
            for (j, hp) in h_prev.iter().enumerate() {
                z += p[row + j] * hp;
            }
            *out = act.apply(z);
        }
    }
    hs
}

fn rnn_direction_backward(
    p: &[f64],
    dir: usize,
    n: usize,
    input: &[f64],
    reversed: bool,
    act: ActivationKind,
    hs: &[f64],
    dh_last: Vec<f64>,
    grad: &mut [f64],
) {
    let l = input.len();
    let g = gate(dir, n, 0);
    let mut dh = dh_last;
    let mut dh_prev = vec![0.0; n];
    for t in (0..l).rev() {
        let x = input_at(input, t, reversed);
        let h_prev = &hs[t * n..(t + 1) * n];
        let h_t = &hs[(t + 1) * n..(t + 2) * n];
        dh_prev.fill(0.0);
        for i in 0..n {
            let dz = dh[i] * act.deriv_from_output(h_t[i]);
            grad[g.b + i] += dz;
            grad[g.wx + i] += dz * x;
            let row = g.wh + i * n;
            for (j, hp) in h_prev.iter().enumerate() {
                grad[row + j] += dz * hp;
                dh_prev[j] += p[row + j] * dz;
            }
        }
        std::mem::swap(&mut dh, &mut dh_prev);
    }
}

// ---------------------------------------------------------------------------
// LSTM cell: gates i, f, g (candidate), o; the configured activation
// applies to the candidate and the cell output, gates stay sigmoid.
// ---------------------------------------------------------------------------

/// Per-step traces: block `t` holds [i, f, g, o, hc] of n values each;
/// `hc` is act(c_t).
struct LstmTrace {
    hs: Vec<f64>,
    cs: Vec<f64>,
    steps: Vec<f64>,
}

const LSTM_STEP: usize = 5;

fn lstm_states(
    p: &[f64],
    dir: usize,
    n: usize,
    input: &[f64],
    reversed: bool,
    act: ActivationKind,
) -> LstmTrace {
    let l = input.len();
    let gates: [Gate; 4] = [
        gate(dir, n, 0),
        gate(dir, n, 1),
        gate(dir, n, 2),
        gate(dir, n, 3),
    ];
    let mut hs = vec![0.0; (l + 1) * n];
    let mut cs = vec![0.0; (l + 1) * n];
    let mut steps = vec![0.0; l * LSTM_STEP * n];
    let mut pre = vec![0.0; 4 * n];
    for t in 0..l {
        let x = input_at(input, t, reversed);
        {
            let h_prev = &hs[t * n..(t + 1) * n];
            for (k, g) in gates.iter().enumerate() {
                for i in 0..n {
                    let mut z = p[g.b + i] + p[g.wx + i] * x;
                    let row = g.wh + i * n;
                    for (j, hp) in h_prev.iter().enumerate() {
                        z += p[row + j] * hp;
                    }
                    pre[k * n + i] = z;
                }
            }
        }
        let step = &mut steps[t * LSTM_STEP * n..(t + 1) * LSTM_STEP * n];
        for i in 0..n {
            let ig = sigmoid(pre[i]);
            let fg = sigmoid(pre[n + i]);
            let gg = act.apply(pre[2 * n + i]);
            let og = sigmoid(pre[3 * n + i]);
            let c = fg * cs[t * n + i] + ig * gg;
            let hc = act.apply(c);
            step[i] = ig;
            step[n + i] = fg;
            step[2 * n + i] = gg;
            step[3 * n + i] = og;
            step[4 * n + i] = hc;
            cs[(t + 1) * n + i] = c;
            hs[(t + 1) * n + i] = og * hc;
        }
    }
    LstmTrace { hs, cs, steps }
}

#[allow(clippy::too_many_arguments)]
fn lstm_direction_backward(
    p: &[f64],
    dir: usize,
    n: usize,
    input: &[f64],
    reversed: bool,
    act: ActivationKind,
    trace: &LstmTrace,
    dh_last: Vec<f64>,
    grad: &mut [f64],
) {
    let l = input.len();
    let gates: [Gate; 4] = [
        gate(dir, n, 0),
        gate(dir, n, 1),
        gate(dir, n, 2),
        gate(dir, n, 3),
    ];
    let mut dh = dh_last;
    let mut dc = vec![0.0; n];
    let mut dh_prev = vec![0.0; n];
    let mut dz = vec![0.0; 4 * n];
    for t in (0..l).rev() {
        let x = input_at(input, t, reversed);
        let h_prev = &trace.hs[t * n..(t + 1) * n];
        let c_prev = &trace.cs[t * n..(t + 1) * n];
        let step = &trace.steps[t * LSTM_STEP * n..(t + 1) * LSTM_STEP * n];
        for i in 0..n {
            let ig = step[i];
            let fg = step[n + i];
            let gg = step[2 * n + i];
            let og = step[3 * n + i];
            let hc = step[4 * n + i];
            let d_o = dh[i] * hc;
            let dci = dc[i] + dh[i] * og * act.deriv_from_output(hc);
            dz[i] = dci * gg * sigmoid_deriv(ig);
            dz[n + i] = dci * c_prev[i] * sigmoid_deriv(fg);
            dz[2 * n + i] = dci * ig * act.deriv_from_output(gg);
            dz[3 * n + i] = d_o * sigmoid_deriv(og);
            dc[i] = dci * fg;
        }
        dh_prev.fill(0.0);
        for (k, g) in gates.iter().enumerate() {
            for i in 0..n {
                let dzi = dz[k * n + i];
                grad[g.b + i] += dzi;
                grad[g.wx + i] += dzi * x;
                let row = g.wh + i * n;
                for (j, hp) in h_prev.iter().enumerate() {
                    grad[row + j] += dzi * hp;
                    dh_prev[j] += p[row + j] * dzi;
                }
            }
        }
        std::mem::swap(&mut dh, &mut dh_prev);
    }
}

// ---------------------------------------------------------------------------
// GRU cell: update gate z, reset gate r, candidate c with the configured
// activation; h = (1 - z) * h_prev + z * candidate.
// ---------------------------------------------------------------------------

/// Per-step traces: block `t` holds [z, r, cand, rh] of n values each,
/// with `rh = r * h_prev`.
struct GruTrace {
    hs: Vec<f64>,
    steps: Vec<f64>,
}

const GRU_STEP: usize = 4;

fn gru_states(
    p: &[f64],
    dir: usize,
    n: usize,
    input: &[f64],
    reversed: bool,
    act: ActivationKind,
) -> GruTrace {
    let l = input.len();
    let zg = gate(dir, n, 0);
    let rg = gate(dir, n, 1);
    let cg = gate(dir, n, 2);
    let mut hs = vec![0.0; (l + 1) * n];
    let mut steps = vec![0.0; l * GRU_STEP * n];
    for t in 0..l {
        let x = input_at(input, t, reversed);
        let (prev, next) = hs.split_at_mut((t + 1) * n);
        let h_prev = &prev[t * n..];
        let step = &mut steps[t * GRU_STEP * n..(t + 1) * GRU_STEP * n];
        for i in 0..n {
            let mut z = p[zg.b + i] + p[zg.wx + i] * x;
            let mut r = p[rg.b + i] + p[rg.wx + i] * x;
            let zrow = zg.wh + i * n;
            let rrow = rg.wh + i * n;
            for (j, hp) in h_prev.iter().enumerate() {
                z += p[zrow + j] * hp;
                r += p[rrow + j] * hp;
            }
            step[i] = sigmoid(z);
            step[n + i] = sigmoid(r);
        }
        for i in 0..n {
            step[3 * n + i] = step[n + i] * h_prev[i];
        }
        for i in 0..n {
            let mut c = p[cg.b + i] + p[cg.wx + i] * x;
            let crow = cg.wh + i * n;
            for j in 0..n {
                c += p[crow + j] * step[3 * n + j];
            }
            let cand = act.apply(c);
            step[2 * n + i] = cand;
            next[i] = (1.0 - step[i]) * h_prev[i] + step[i] * cand;
        }
    }
    GruTrace { hs, steps }
}

#[allow(clippy::too_many_arguments)]
fn gru_direction_backward(
    p: &[f64],
    dir: usize,
    n: usize,
    input: &[f64],
    reversed: bool,
    act: ActivationKind,
    trace: &GruTrace,
    dh_last: Vec<f64>,
    grad: &mut [f64],
) {
    let l = input.len();
    let zg = gate(dir, n, 0);
    let rg = gate(dir, n, 1);
    let cg = gate(dir, n, 2);
    let mut dh = dh_last;
    let mut dh_prev = vec![0.0; n];
    let mut drh = vec![0.0; n];
    let mut dzz = vec![0.0; n];
    let mut dzc = vec![0.0; n];
    for t in (0..l).rev() {
        let x = input_at(input, t, reversed);
        let h_prev = &trace.hs[t * n..(t + 1) * n];
        let step = &trace.steps[t * GRU_STEP * n..(t + 1) * GRU_STEP * n];
        let (z, rest) = step.split_at(n);
        let (r, rest) = rest.split_at(n);
        let (cand, rh) = rest.split_at(n);

        for i in 0..n {
            dzz[i] = dh[i] * (cand[i] - h_prev[i]) * sigmoid_deriv(z[i]);
            dzc[i] = dh[i] * z[i] * act.deriv_from_output(cand[i]);
            dh_prev[i] = dh[i] * (1.0 - z[i]);
        }
        drh.fill(0.0);
        for i in 0..n {
            let dz = dzc[i];
            grad[cg.b + i] += dz;
            grad[cg.wx + i] += dz * x;
            let row = cg.wh + i * n;
            for j in 0..n {
                grad[row + j] += dz * rh[j];
                drh[j] += p[row + j] * dz;
            }
        }
        for i in 0..n {
            let dr = drh[i] * h_prev[i];
            let dzr = dr * sigmoid_deriv(r[i]);
            dh_prev[i] += drh[i] * r[i];
            grad[rg.b + i] += dzr;
            grad[rg.wx + i] += dzr * x;
            let rrow = rg.wh + i * n;
            let zrow = zg.wh + i * n;
            grad[zg.b + i] += dzz[i];
            grad[zg.wx + i] += dzz[i] * x;
            for (j, hp) in h_prev.iter().enumerate() {
                grad[rrow + j] += dzr * hp;
                grad[zrow + j] += dzz[i] * hp;
                dh_prev[j] += p[rrow + j] * dzr + p[zrow + j] * dzz[i];
            }
        }
        std::mem::swap(&mut dh, &mut dh_prev);
    }
}

// ---------------------------------------------------------------------------
// Architecture dispatch
// ---------------------------------------------------------------------------

fn last_state(hs: &[f64], n: usize) -> &[f64] {
    &hs[hs.len() - n..]
}

pub(super) fn forward(spec: &ModelSpec, p: &[f64], input: &[f64]) -> f64 {
    let n = spec.hidden_nodes;
    let act = spec.activation;
    match spec.architecture {
        Architecture::Mlp => mlp_forward(p, n, spec.window_length, input, act),
        Architecture::Rnn => {
            let hs = rnn_states(p, 0, n, input, false, act);
            head_forward(p, dir_size(1, n), last_state(&hs, n))
        }
        Architecture::Lstm => {
            let trace = lstm_states(p, 0, n, input, false, act);
            head_forward(p, dir_size(4, n), last_state(&trace.hs, n))
        }
        Architecture::Gru => {
            let trace = gru_states(p, 0, n, input, false, act);
            head_forward(p, dir_size(3, n), last_state(&trace.hs, n))
        }
        Architecture::BiRnn => {
            let fwd = rnn_states(p, 0, n, input, false, act);
            let bwd = rnn_states(p, dir_size(1, n), n, input, true, act);
            let mut h = last_state(&fwd, n).to_vec();
            h.extend_from_slice(last_state(&bwd, n));
            head_forward(p, 2 * dir_size(1, n), &h)
        }
        Architecture::BiLstm => {
            let fwd = lstm_states(p, 0, n, input, false, act);
            let bwd = lstm_states(p, dir_size(4, n), n, input, true, act);
            let mut h = last_state(&fwd.hs, n).to_vec();
            h.extend_from_slice(last_state(&bwd.hs, n));
            head_forward(p, 2 * dir_size(4, n), &h)
        }
    }
}

/// Accumulate the gradient of `(forward(input) - target)^2` into `grad`
/// and return that sample loss.
pub(super) fn backward_into(
    spec: &ModelSpec,
    p: &[f64],
    input: &[f64],
    target: f64,
    grad: &mut [f64],
) -> f64 {
    let n = spec.hidden_nodes;
    let act = spec.activation;
    match spec.architecture {
        Architecture::Mlp => mlp_backward(p, n, spec.window_length, input, target, act, grad),
        Architecture::Rnn => {
            let hs = rnn_states(p, 0, n, input, false, act);
            let head = dir_size(1, n);
            let y = head_forward(p, head, last_state(&hs, n));
            let residual = y - target;
            let dh = head_backward(p, head, last_state(&hs, n), 2.0 * residual, grad);
            rnn_direction_backward(p, 0, n, input, false, act, &hs, dh, grad);
            residual * residual
        }
        Architecture::Lstm => {
            let trace = lstm_states(p, 0, n, input, false, act);
            let head = dir_size(4, n);
            let y = head_forward(p, head, last_state(&trace.hs, n));
            let residual = y - target;
            let dh = head_backward(p, head, last_state(&trace.hs, n), 2.0 * residual, grad);
            lstm_direction_backward(p, 0, n, input, false, act, &trace, dh, grad);
            residual * residual
        }
        Architecture::Gru => {
            let trace = gru_states(p, 0, n, input, false, act);
            let head = dir_size(3, n);
            let y = head_forward(p, head, last_state(&trace.hs, n));
            let residual = y - target;
            let dh = head_backward(p, head, last_state(&trace.hs, n), 2.0 * residual, grad);
            gru_direction_backward(p, 0, n, input, false, act, &trace, dh, grad);
            residual * residual
        }
        Architecture::BiRnn => {
            let dir = dir_size(1, n);
            let fwd = rnn_states(p, 0, n, input, false, act);
            let bwd = rnn_states(p, dir, n, input, true, act);
            let mut h = last_state(&fwd, n).to_vec();
            h.extend_from_slice(last_state(&bwd, n));
            let y = head_forward(p, 2 * dir, &h);
            let residual = y - target;
            let dh = head_backward(p, 2 * dir, &h, 2.0 * residual, grad);
            rnn_direction_backward(p, 0, n, input, false, act, &fwd, dh[..n].to_vec(), grad);
            rnn_direction_backward(p, dir, n, input, true, act, &bwd, dh[n..].to_vec(), grad);
            residual * residual
        }
        Architecture::BiLstm => {
            let dir = dir_size(4, n);
            let fwd = lstm_states(p, 0, n, input, false, act);
            let bwd = lstm_states(p, dir, n, input, true, act);
            let mut h = last_state(&fwd.hs, n).to_vec();
            h.extend_from_slice(last_state(&bwd.hs, n));
            let y = head_forward(p, 2 * dir, &h);
            let residual = y - target;
            let dh = head_backward(p, 2 * dir, &h, 2.0 * residual, grad);
            lstm_direction_backward(p, 0, n, input, false, act, &fwd, dh[..n].to_vec(), grad);
            lstm_direction_backward(p, dir, n, input, true, act, &bwd, dh[n..].to_vec(), grad);
            residual * residual
        }
    }
}
