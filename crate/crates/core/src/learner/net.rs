//! Forward and backward passes of the recurrent actor-critic:
//! 1x1 conv -> ReLU -> 2-layer ReLU MLP -> LSTM -> linear policy and value heads.
//!
//! Batched tensors are row-major with time-major rows (`row = t * batch + b`).

use super::params::{Group, NetParams, NetShape};
use super::real::{dot, Real};

/// Recurrent state of one agent.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmState<T> {
    pub h: Vec<T>,
    pub c: Vec<T>,
}

impl<T: Real> LstmState<T> {
    pub fn zeros(units: usize) -> Self {
        Self { h: vec![T::ZERO; units], c: vec![T::ZERO; units] }
    }

    pub fn reset(&mut self) {
        self.h.fill(T::ZERO);
        self.c.fill(T::ZERO);
    }
}

/// Policy logits and value for one step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutput<T> {
    pub logits: Vec<T>,
    pub value: T,
}

/// `y = W x + b` for a row-major `W` of `out x in`.
fn matvec<T: Real>(w: &[T], b: &[T], x: &[T], y: &mut [T]) {
    let n = x.len();
    for (j, yj) in y.iter_mut().enumerate() {
        *yj = b[j] + dot(&w[j * n..(j + 1) * n], x);
    }
}

fn relu_in_place<T: Real>(v: &mut [T]) {
    for x in v {
        if *x < T::ZERO {
            *x = T::ZERO;
        }
    }
}

/// Reusable buffers for single-step inference.
#[derive(Clone, Debug)]
pub struct StepScratch<T> {
    conv: Vec<T>,
    a1: Vec<T>,
    a2: Vec<T>,
    gates: Vec<T>,
}

impl<T: Real> StepScratch<T> {
    pub fn new(shape: &NetShape) -> Self {
        Self {
            conv: vec![T::ZERO; shape.conv_out()],
            a1: vec![T::ZERO; shape.mlp[0]],
            a2: vec![T::ZERO; shape.mlp[1]],
            gates: vec![T::ZERO; shape.gates()],
        }
    }
}

/// One inference step; advances `state` in place.
pub fn forward_step<T: Real>(
    params: &NetParams<T>,
    input: &[T],
    state: &mut LstmState<T>,
    scratch: &mut StepScratch<T>,
) -> StepOutput<T> {
    let s = params.shape();
    assert_eq!(input.len(), s.input_len(), "input length");
    assert_eq!(state.h.len(), s.lstm, "recurrent state width");
    let (cw, cb) = (params.group(Group::ConvW), params.group(Group::ConvB));
    let (ci, co) = (s.in_channels, s.conv_channels);
    for p in 0..s.pixels {
        let x = &input[p * ci..(p + 1) * ci];
        for c in 0..co {
            let mut z = cb[c];
            for k in 0..ci {
                z += cw[c * ci + k] * x[k];
            }
            scratch.conv[p * co + c] = z.max(T::ZERO);
        }
    }
    matvec(params.group(Group::Fc1W), params.group(Group::Fc1B), &scratch.conv, &mut scratch.a1);
    relu_in_place(&mut scratch.a1);
    matvec(params.group(Group::Fc2W), params.group(Group::Fc2B), &scratch.a1, &mut scratch.a2);
    relu_in_place(&mut scratch.a2);

    let h = s.lstm;
    let (wx, wh, bias) = (params.group(Group::LstmWx), params.group(Group::LstmWh), params.group(Group::LstmB));
    let (nx, nh) = (s.mlp[1], h);
    for j in 0..4 * h {
        scratch.gates[j] = bias[j] + dot(&wx[j * nx..(j + 1) * nx], &scratch.a2) + dot(&wh[j * nh..(j + 1) * nh], &state.h);
    }
    for u in 0..h {
        let i = scratch.gates[u].sigmoid();
        let f = scratch.gates[h + u].sigmoid();
        let g = scratch.gates[2 * h + u].tanh();
        let o = scratch.gates[3 * h + u].sigmoid();
        let c = f * state.c[u] + i * g;
        state.c[u] = c;
        state.h[u] = o * c.tanh();
    }
    let mut logits = vec![T::ZERO; s.actions];
    matvec(params.group(Group::PolicyW), params.group(Group::PolicyB), &state.h, &mut logits);
    let value = params.group(Group::ValueB)[0] + dot(params.group(Group::ValueW), &state.h);
    StepOutput { logits, value }
}

/// Inputs of a batched unroll: `steps` timesteps of `batch` sequences.
#[derive(Clone, Debug)]
pub struct BatchInputs<T> {
    pub steps: usize,
    pub batch: usize,
    /// `rows x input_len` network inputs.
    pub x: Vec<T>,
    /// Whether the recurrent state is zeroed before this row.
    pub resets: Vec<bool>,
    /// Initial recurrent state per sequence, `batch x lstm`.
    pub h0: Vec<T>,
    pub c0: Vec<T>,
}

impl<T> BatchInputs<T> {
    pub fn rows(&self) -> usize {
        self.steps * self.batch
    }
}

/// Activations kept for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache<T> {
    pub steps: usize,
    pub batch: usize,
    a0: Vec<T>,
    a1: Vec<T>,
    a2: Vec<T>,
    /// Post-nonlinearity gates `[i, f, g, o]`.
    gates: Vec<T>,
    /// Cell states after each row.
    pub c: Vec<T>,
    tanh_c: Vec<T>,
    c_prev: Vec<T>,
    h_prev: Vec<T>,
    pub hidden: Vec<T>,
    pub logits: Vec<T>,
    pub values: Vec<T>,
}

/// `y (rows x out) = x (rows x in) W^T + b`.
fn linear<T: Real>(x: &[T], rows: usize, n_in: usize, w: &[T], b: Option<&[T]>, n_out: usize, y: &mut [T]) {
    match b {
        Some(b) => {
            for r in 0..rows {
                y[r * n_out..(r + 1) * n_out].copy_from_slice(b);
            }
        }
        None => y[..rows * n_out].fill(T::ZERO),
    }
    T::gemm(rows, n_in, n_out, T::ONE, x, n_in, 1, w, 1, n_in, T::ONE, y, n_out, 1);
}

/// `dW += dy^T x`, `db += colsum(dy)`.
fn linear_grad_weights<T: Real>(dy: &[T], x: &[T], rows: usize, n_in: usize, n_out: usize, dw: &mut [T], db: Option<&mut [T]>) {
    T::gemm(n_out, rows, n_in, T::ONE, dy, 1, n_out, x, n_in, 1, T::ONE, dw, n_in, 1);
    if let Some(db) = db {
        for r in 0..rows {
            for (acc, &g) in db.iter_mut().zip(&dy[r * n_out..(r + 1) * n_out]) {
                *acc += g;
            }
        }
    }
}

/// `dx = dy W`.
fn linear_grad_input<T: Real>(dy: &[T], w: &[T], rows: usize, n_in: usize, n_out: usize, dx: &mut [T]) {
    T::gemm(rows, n_out, n_in, T::ONE, dy, n_out, 1, w, n_in, 1, T::ZERO, dx, n_in, 1);
}

pub fn forward_batch<T: Real>(params: &NetParams<T>, inp: &BatchInputs<T>) -> ForwardCache<T> {
    let s = params.shape();
    let rows = inp.rows();
    let (nb, h) = (inp.batch, s.lstm);
    assert_eq!(inp.x.len(), rows * s.input_len());
    assert_eq!(inp.resets.len(), rows);
    assert_eq!(inp.h0.len(), nb * h);

    let mut a0 = vec![T::ZERO; rows * s.conv_out()];
    linear(
        &inp.x,
        rows * s.pixels,
        s.in_channels,
        params.group(Group::ConvW),
        Some(params.group(Group::ConvB)),
        s.conv_channels,
        &mut a0,
    );
    relu_in_place(&mut a0);
    let mut a1 = vec![T::ZERO; rows * s.mlp[0]];
    linear(&a0, rows, s.conv_out(), params.group(Group::Fc1W), Some(params.group(Group::Fc1B)), s.mlp[0], &mut a1);
    relu_in_place(&mut a1);
    let mut a2 = vec![T::ZERO; rows * s.mlp[1]];
    linear(&a1, rows, s.mlp[0], params.group(Group::Fc2W), Some(params.group(Group::Fc2B)), s.mlp[1], &mut a2);
    relu_in_place(&mut a2);

    let g4 = s.gates();
    let mut gates = vec![T::ZERO; rows * g4];
    linear(&a2, rows, s.mlp[1], params.group(Group::LstmWx), Some(params.group(Group::LstmB)), g4, &mut gates);

    let mut c = vec![T::ZERO; rows * h];
    let mut tanh_c = vec![T::ZERO; rows * h];
    let mut c_prev = vec![T::ZERO; rows * h];
    let mut h_prev = vec![T::ZERO; rows * h];
    let mut hidden = vec![T::ZERO; rows * h];
    let wh = params.group(Group::LstmWh);
    for t in 0..inp.steps {
        let base = t * nb;
        for b in 0..nb {
            let row = base + b;
            let dst = row * h..(row + 1) * h;
            if inp.resets[row] {
                // zeros already
            } else if t == 0 {
                h_prev[dst.clone()].copy_from_slice(&inp.h0[b * h..(b + 1) * h]);
                c_prev[dst].copy_from_slice(&inp.c0[b * h..(b + 1) * h]);
            } else {
                let src = (row - nb) * h..(row - nb + 1) * h;
                h_prev[dst.clone()].copy_from_slice(&hidden[src.clone()]);
                c_prev[dst].copy_from_slice(&c[src]);
            }
        }
        T::gemm(
            nb,
            h,
            g4,
            T::ONE,
            &h_prev[base * h..],
            h,
            1,
            wh,
            1,
            h,
            T::ONE,
            &mut gates[base * g4..],
            g4,
            1,
        );
        for b in 0..nb {
            let row = base + b;
            let g = &mut gates[row * g4..(row + 1) * g4];
            for u in 0..h {
                let i = g[u].sigmoid();
                let f = g[h + u].sigmoid();
                let gg = g[2 * h + u].tanh();
                let o = g[3 * h + u].sigmoid();
                g[u] = i;
                g[h + u] = f;
                g[2 * h + u] = gg;
                g[3 * h + u] = o;
                let cu = f * c_prev[row * h + u] + i * gg;
                let tc = cu.tanh();
                c[row * h + u] = cu;
                tanh_c[row * h + u] = tc;
                hidden[row * h + u] = o * tc;
            }
        }
    }

    let mut logits = vec![T::ZERO; rows * s.actions];
    linear(&hidden, rows, h, params.group(Group::PolicyW), Some(params.group(Group::PolicyB)), s.actions, &mut logits);
    let mut values = vec![T::ZERO; rows];
    linear(&hidden, rows, h, params.group(Group::ValueW), Some(params.group(Group::ValueB)), 1, &mut values);

    ForwardCache { steps: inp.steps, batch: nb, a0, a1, a2, gates, c, tanh_c, c_prev, h_prev, hidden, logits, values }
}

/// Backpropagates loss gradients on the first `grad_rows` rows (time-major)
/// through the whole network. `dhidden` optionally adds gradient straight
/// onto the recurrent outputs (auxiliary losses).
#[allow(clippy::too_many_arguments)]
pub fn backward_batch<T: Real>(
    params: &NetParams<T>,
    inp: &BatchInputs<T>,
    cache: &ForwardCache<T>,
    grad_rows: usize,
    dlogits: &[T],
    dvalues: &[T],
    dhidden: Option<&[T]>,
) -> Vec<T> {
    let s = params.shape();
    let layout = params.layout();
    let (nb, h, g4) = (inp.batch, s.lstm, s.gates());
    assert_eq!(grad_rows % nb, 0);
    let rows = grad_rows;
    let steps = rows / nb;
    let mut grad = vec![T::ZERO; layout.len()];
    macro_rules! g {
        ($grp:expr) => {
            &mut grad[layout.range($grp)]
        };
    }

    // heads
    let mut dh = vec![T::ZERO; rows * h];
    linear_grad_input(dlogits, params.group(Group::PolicyW), rows, h, s.actions, &mut dh);
    {
        let wv = params.group(Group::ValueW);
        for r in 0..rows {
            let dv = dvalues[r];
            for u in 0..h {
                dh[r * h + u] += dv * wv[u];
            }
        }
    }
    if let Some(extra) = dhidden {
        for (d, e) in dh.iter_mut().zip(extra) {
            *d += *e;
        }
    }
    {
        let r = layout.range(Group::PolicyW);
        let rb = layout.range(Group::PolicyB);
        let (lo, hi) = grad.split_at_mut(rb.start);
        linear_grad_weights(dlogits, &cache.hidden, rows, h, s.actions, &mut lo[r], Some(&mut hi[..rb.len()]));
    }
    {
        let r = layout.range(Group::ValueW);
        let rb = layout.range(Group::ValueB);
        let (lo, hi) = grad.split_at_mut(rb.start);
        linear_grad_weights(dvalues, &cache.hidden, rows, h, 1, &mut lo[r], Some(&mut hi[..rb.len()]));
    }

    // recurrent core, backwards through time
    let wh = params.group(Group::LstmWh);
    let mut dgates = vec![T::ZERO; rows * g4];
    let mut dh_next = vec![T::ZERO; nb * h];
    let mut dc_next = vec![T::ZERO; nb * h];
    let mut dc_prev = vec![T::ZERO; nb * h];
    let mut dh_prev = vec![T::ZERO; nb * h];
    for t in (0..steps).rev() {
        let base = t * nb;
        for b in 0..nb {
            let row = base + b;
            let gts = &cache.gates[row * g4..(row + 1) * g4];
            let dg = &mut dgates[row * g4..(row + 1) * g4];
            for u in 0..h {
                let (i, f, gg, o) = (gts[u], gts[h + u], gts[2 * h + u], gts[3 * h + u]);
                let tc = cache.tanh_c[row * h + u];
                let dhu = dh[row * h + u] + dh_next[b * h + u];
                let dc = dc_next[b * h + u] + dhu * o * (T::ONE - tc * tc);
                dg[u] = dc * gg * i * (T::ONE - i);
                dg[h + u] = dc * cache.c_prev[row * h + u] * f * (T::ONE - f);
                dg[2 * h + u] = dc * i * (T::ONE - gg * gg);
                dg[3 * h + u] = dhu * tc * o * (T::ONE - o);
                dc_prev[b * h + u] = dc * f;
            }
        }
        T::gemm(nb, g4, h, T::ONE, &dgates[base * g4..], g4, 1, wh, h, 1, T::ZERO, &mut dh_prev, h, 1);
        for b in 0..nb {
            let row = base + b;
            let cut = t == 0 || inp.resets[row];
            let span = b * h..(b + 1) * h;
            if cut {
                dh_next[span.clone()].fill(T::ZERO);
                dc_next[span].fill(T::ZERO);
            } else {
                dh_next[span.clone()].copy_from_slice(&dh_prev[span.clone()]);
                dc_next[span.clone()].copy_from_slice(&dc_prev[span]);
            }
        }
    }
    linear_grad_weights(&dgates, &cache.h_prev[..rows * h], rows, h, g4, g!(Group::LstmWh), None);
    {
        let r = layout.range(Group::LstmWx);
        let rb = layout.range(Group::LstmB);
        let (lo, hi) = grad.split_at_mut(rb.start);
        linear_grad_weights(&dgates, &cache.a2, rows, s.mlp[1], g4, &mut lo[r], Some(&mut hi[..rb.len()]));
    }

    // MLP
    let mut da2 = vec![T::ZERO; rows * s.mlp[1]];
    linear_grad_input(&dgates, params.group(Group::LstmWx), rows, s.mlp[1], g4, &mut da2);
    mask_relu(&mut da2, &cache.a2);
    {
        let r = layout.range(Group::Fc2W);
        let rb = layout.range(Group::Fc2B);
        let (lo, hi) = grad.split_at_mut(rb.start);
        linear_grad_weights(&da2, &cache.a1, rows, s.mlp[0], s.mlp[1], &mut lo[r], Some(&mut hi[..rb.len()]));
    }
    let mut da1 = vec![T::ZERO; rows * s.mlp[0]];
    linear_grad_input(&da2, params.group(Group::Fc2W), rows, s.mlp[0], s.mlp[1], &mut da1);
    mask_relu(&mut da1, &cache.a1);
    {
        let r = layout.range(Group::Fc1W);
        let rb = layout.range(Group::Fc1B);
        let (lo, hi) = grad.split_at_mut(rb.start);
        linear_grad_weights(&da1, &cache.a0, rows, s.conv_out(), s.mlp[0], &mut lo[r], Some(&mut hi[..rb.len()]));
    }

    // 1x1 convolution, treated as a linear map over every pixel
    let mut da0 = vec![T::ZERO; rows * s.conv_out()];
    linear_grad_input(&da1, params.group(Group::Fc1W), rows, s.conv_out(), s.mlp[0], &mut da0);
    mask_relu(&mut da0, &cache.a0[..rows * s.conv_out()]);
    {
        let r = layout.range(Group::ConvW);
        let rb = layout.range(Group::ConvB);
        let (lo, hi) = grad.split_at_mut(rb.start);
        linear_grad_weights(
            &da0,
            &inp.x,
            rows * s.pixels,
            s.in_channels,
            s.conv_channels,
            &mut lo[r],
            Some(&mut hi[..rb.len()]),
        );
    }
    grad
}

fn mask_relu<T: Real>(d: &mut [T], activation: &[T]) {
    for (g, &a) in d.iter_mut().zip(activation) {
        if a <= T::ZERO {
            *g = T::ZERO;
        }
    }
}

/// Sign pattern of every ReLU in a cached forward pass; two passes with
/// equal patterns lie on the same smooth piece of the network.
pub fn relu_pattern<T: Real>(cache: &ForwardCache<T>) -> Vec<bool> {
    cache.a0.iter().chain(&cache.a1).chain(&cache.a2).map(|&a| a > T::ZERO).collect()
}
