//! LSTM agent with linear policy and value heads, hand-derived
//! backpropagation through time, and a central-difference gradient checker.
//!
//! Gate blocks are stacked in the order input, forget, candidate, output:
//!
//! ```text
//! z  = W_x x + W_h h + b
//! i  = σ(z_i)   f = σ(z_f)   g = tanh(z_g)   o = σ(z_o)
//! c' = f ⊙ c + i ⊙ g
//! h' = o ⊙ tanh(c')
//! logits = W_π h' + b_π      value = w_v · h' + b_v
//! ```

use std::ops::{Deref, DerefMut};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::a2c::{advantages, LossBreakdown, LossSpec, Trajectory};
use crate::error::{Error, Result};

pub const DEFAULT_HIDDEN: usize = 48;

/// Network dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct NetDims {
    pub input: usize,
    pub hidden: usize,
    pub actions: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum InitScheme {
    /// Every parameter zero.
    Zero,
    /// Weights uniform in `[-range, range]`, biases zero.
    SmallUniform(f64),
}

impl Default for InitScheme {
    fn default() -> Self {
        InitScheme::SmallUniform(0.1)
    }
}

/// A named, row-major view of one parameter tensor.
#[derive(Debug)]
pub struct TensorRef<'a> {
    pub name: &'static str,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

pub const TENSOR_NAMES: [&str; 7] = [
    "lstm.w_input",
    "lstm.w_hidden",
    "lstm.bias",
    "policy.weight",
    "policy.bias",
    "value.weight",
    "value.bias",
];

/// Indices into [`TENSOR_NAMES`] of the weight matrices (everything but biases).
pub const WEIGHT_MATRICES: [usize; 4] = [0, 1, 3, 5];

#[derive(Debug, Clone, PartialEq)]
pub struct AgentParams {
    pub dims: NetDims,
    pub w_input: Vec<f64>,
    pub w_hidden: Vec<f64>,
    pub b_gates: Vec<f64>,
    pub w_policy: Vec<f64>,
    pub b_policy: Vec<f64>,
    pub w_value: Vec<f64>,
    pub b_value: Vec<f64>,
}

impl AgentParams {
    pub fn zeros(dims: NetDims) -> Self {
        let (d, h, a) = (dims.input, dims.hidden, dims.actions);
        AgentParams {
            dims,
            w_input: vec![0.0; 4 * h * d],
            w_hidden: vec![0.0; 4 * h * h],
            b_gates: vec![0.0; 4 * h],
            w_policy: vec![0.0; a * h],
            b_policy: vec![0.0; a],
            w_value: vec![0.0; h],
            b_value: vec![0.0; 1],
        }
    }

    pub fn shapes(dims: NetDims) -> [Vec<usize>; 7] {
        let (d, h, a) = (dims.input, dims.hidden, dims.actions);
        [
            vec![4 * h, d],
            vec![4 * h, h],
            vec![4 * h],
            vec![a, h],
            vec![a],
            vec![1, h],
            vec![1],
        ]
    }

    pub fn tensors(&self) -> [TensorRef<'_>; 7] {
        let shapes = Self::shapes(self.dims);
        let data = self.slices();
        let mut shapes = shapes.into_iter();
        std::array::from_fn(|i| TensorRef {
            name: TENSOR_NAMES[i],
            shape: shapes.next().unwrap(),
            data: data[i],
        })
    }

    pub fn slices(&self) -> [&[f64]; 7] {
        [
            &self.w_input,
            &self.w_hidden,
            &self.b_gates,
            &self.w_policy,
            &self.b_policy,
            &self.w_value,
            &self.b_value,
        ]
    }

    pub fn slices_mut(&mut self) -> [&mut Vec<f64>; 7] {
        [
            &mut self.w_input,
            &mut self.w_hidden,
            &mut self.b_gates,
            &mut self.w_policy,
            &mut self.b_policy,
            &mut self.w_value,
            &mut self.b_value,
        ]
    }

    pub fn param_count(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    /// `(tensor index, offset)` of a flat coordinate.
    pub fn locate(&self, mut flat: usize) -> (usize, usize) {
        for (i, s) in self.slices().iter().enumerate() {
            if flat < s.len() {
                return (i, flat);
            }
            flat -= s.len();
        }
        panic!("coordinate out of range");
    }

    pub fn get(&self, flat: usize) -> f64 {
        let (t, o) = self.locate(flat);
        self.slices()[t][o]
    }

    pub fn set(&mut self, flat: usize, value: f64) {
        let (t, o) = self.locate(flat);
        self.slices_mut()[t][o] = value;
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|x| x.is_finite()))
    }

    pub(crate) fn check_same_shape(&self, other: &AgentParams) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::shape(
                "parameter count",
                self.param_count(),
                other.param_count(),
            ));
        }
        Ok(())
    }
}

/// Gradient of a scalar loss with respect to every [`AgentParams`] entry.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle(pub AgentParams);

impl GradientBundle {
    pub fn zeros(dims: NetDims) -> Self {
        GradientBundle(AgentParams::zeros(dims))
    }

    pub fn global_norm(&self) -> f64 {
        self.slices()
            .iter()
            .flat_map(|s| s.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, k: f64) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|x| *x *= k);
        }
    }

    pub fn add_assign(&mut self, other: &GradientBundle) -> Result<()> {
        self.check_same_shape(other)?;
        for (a, b) in self.0.slices_mut().into_iter().zip(other.slices()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        Ok(())
    }
}

impl Deref for GradientBundle {
    type Target = AgentParams;

    fn deref(&self) -> &AgentParams {
        &self.0
    }
}

impl DerefMut for GradientBundle {
    fn deref_mut(&mut self) -> &mut AgentParams {
        &mut self.0
    }
}

pub fn init_params<R: Rng + ?Sized>(dims: NetDims, scheme: InitScheme, rng: &mut R) -> AgentParams {
    let mut p = AgentParams::zeros(dims);
    if let InitScheme::SmallUniform(range) = scheme {
        for &i in &WEIGHT_MATRICES {
            for w in p.slices_mut()[i].iter_mut() {
                *w = rng.gen_range(-range..=range);
            }
        }
    }
    p
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl AgentState {
    pub fn zeros(hidden: usize) -> Self {
        AgentState {
            h: vec![0.0; hidden],
            c: vec![0.0; hidden],
        }
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        let x: &[f64; 4] = x.try_into().unwrap();
        let y: &[f64; 4] = y.try_into().unwrap();
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Single LSTM step writing gate activations (`[i, f, g, o]`, length 4H),
/// the new cell state, `tanh(c')` and the new hidden state into the given buffers.
pub(crate) fn lstm_step_into(
    p: &AgentParams,
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
    gates: &mut [f64],
    c_out: &mut [f64],
    tanh_c: &mut [f64],
    h_out: &mut [f64],
) {
    let (d, h) = (p.dims.input, p.dims.hidden);
    for r in 0..4 * h {
        let z = p.b_gates[r]
            + dot(&p.w_input[r * d..(r + 1) * d], x)
            + dot(&p.w_hidden[r * h..(r + 1) * h], h_prev);
        gates[r] = if (2 * h..3 * h).contains(&r) {
            z.tanh()
        } else {
            sigmoid(z)
        };
    }
    for k in 0..h {
        let (i, f, g, o) = (gates[k], gates[h + k], gates[2 * h + k], gates[3 * h + k]);
        c_out[k] = f * c_prev[k] + i * g;
        tanh_c[k] = c_out[k].tanh();
        h_out[k] = o * tanh_c[k];
    }
}

pub fn lstm_step(p: &AgentParams, x: &[f64], s: &AgentState) -> Result<AgentState> {
    let h = p.dims.hidden;
    if x.len() != p.dims.input {
        return Err(Error::shape("lstm input", p.dims.input, x.len()));
    }
    if s.h.len() != h || s.c.len() != h {
        return Err(Error::shape("lstm state", h, s.h.len()));
    }
    let mut gates = vec![0.0; 4 * h];
    let mut tanh_c = vec![0.0; h];
    let mut next = AgentState::zeros(h);
    lstm_step_into(p, x, &s.h, &s.c, &mut gates, &mut next.c, &mut tanh_c, &mut next.h);
    Ok(next)
}

pub(crate) fn heads_into(p: &AgentParams, h: &[f64], logits: &mut [f64]) -> f64 {
    let hd = p.dims.hidden;
    for (a, l) in logits.iter_mut().enumerate() {
        *l = p.b_policy[a] + dot(&p.w_policy[a * hd..(a + 1) * hd], h);
    }
    p.b_value[0] + dot(&p.w_value, h)
}

/// Policy logits and state value for a hidden vector.
pub fn heads_forward(p: &AgentParams, h: &[f64]) -> (Vec<f64>, f64) {
    let mut logits = vec![0.0; p.dims.actions];
    let v = heads_into(p, h, &mut logits);
    (logits, v)
}

/// Max-subtracted log-softmax.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).into_iter().map(f64::exp).collect()
}

/// Shannon entropy (nats) of the softmax distribution.
pub fn entropy(logits: &[f64]) -> f64 {
    log_softmax(logits)
        .iter()
        .map(|&lp| if lp == f64::NEG_INFINITY { 0.0 } else { -lp.exp() * lp })
        .sum()
}

/// Sample an action from `softmax(logits)`; returns it with its log-probability.
pub fn policy_sample<R: Rng + ?Sized>(logits: &[f64], rng: &mut R) -> (usize, f64) {
    let lp = log_softmax(logits);
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut action = lp.len() - 1;
    for (a, &l) in lp.iter().enumerate() {
        acc += l.exp();
        if u < acc {
            action = a;
            break;
        }
    }
    (action, lp[action])
}

/// Most probable action (lowest index on ties).
pub fn policy_greedy(logits: &[f64]) -> (usize, f64) {
    let lp = log_softmax(logits);
    let mut best = 0;
    for a in 1..lp.len() {
        if lp[a] > lp[best] {
            best = a;
        }
    }
    (best, lp[best])
}

/// Activations of every step of a trajectory replayed under some parameters.
pub struct ForwardPass {
    pub hidden: usize,
    pub gates: Vec<f64>,
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
    pub h: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    pub actions: usize,
}

impl ForwardPass {
    pub(crate) fn empty(hidden: usize, actions: usize) -> Self {
        ForwardPass {
            hidden,
            gates: Vec::new(),
            c: Vec::new(),
            tanh_c: Vec::new(),
            h: Vec::new(),
            log_probs: Vec::new(),
            values: Vec::new(),
            actions,
        }
    }

    pub(crate) fn push(&mut self, gates: &[f64], c: &[f64], tanh_c: &[f64], h: &[f64], logits: &[f64], value: f64) {
        self.gates.extend_from_slice(gates);
        self.c.extend_from_slice(c);
        self.tanh_c.extend_from_slice(tanh_c);
        self.h.extend_from_slice(h);
        self.log_probs.extend_from_slice(&log_softmax(logits));
        self.values.push(value);
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn h_at(&self, t: usize) -> &[f64] {
        &self.h[t * self.hidden..(t + 1) * self.hidden]
    }

    fn c_at(&self, t: usize) -> &[f64] {
        &self.c[t * self.hidden..(t + 1) * self.hidden]
    }

    pub fn log_probs_at(&self, t: usize) -> &[f64] {
        &self.log_probs[t * self.actions..(t + 1) * self.actions]
    }
}

fn check_trajectory(p: &AgentParams, traj: &Trajectory) -> Result<()> {
    if traj.input_dim != p.dims.input {
        return Err(Error::shape("trajectory input dim", p.dims.input, traj.input_dim));
    }
    traj.check_lengths()?;
    if let Some(&a) = traj.actions.iter().find(|&&a| a >= p.dims.actions) {
        return Err(Error::shape("trajectory action", p.dims.actions, a));
    }
    Ok(())
}

/// Replay the recorded inputs and hidden-state resets of a trajectory.
pub fn forward_trial(p: &AgentParams, traj: &Trajectory) -> Result<ForwardPass> {
    check_trajectory(p, traj)?;
    let (h, a, d) = (p.dims.hidden, p.dims.actions, p.dims.input);
    let n = traj.len();
    let mut fp = ForwardPass {
        hidden: h,
        gates: vec![0.0; n * 4 * h],
        c: vec![0.0; n * h],
        tanh_c: vec![0.0; n * h],
        h: vec![0.0; n * h],
        log_probs: vec![0.0; n * a],
        values: vec![0.0; n],
        actions: a,
    };
    let zeros = vec![0.0; h];
    let mut logits = vec![0.0; a];
    for t in 0..n {
        let (h_done, h_rest) = fp.h.split_at_mut(t * h);
        let (c_done, c_rest) = fp.c.split_at_mut(t * h);
        let (h_prev, c_prev) = if traj.resets[t] {
            (&zeros[..], &zeros[..])
        } else {
            (&h_done[(t - 1) * h..], &c_done[(t - 1) * h..])
        };
        let x = &traj.inputs[t * d..(t + 1) * d];
        let hh = &mut h_rest[..h];
        lstm_step_into(
            p,
            x,
            h_prev,
            c_prev,
            &mut fp.gates[t * 4 * h..(t + 1) * 4 * h],
            &mut c_rest[..h],
            &mut fp.tanh_c[t * h..(t + 1) * h],
            hh,
        );
        fp.values[t] = heads_into(p, hh, &mut logits);
        fp.log_probs[t * a..(t + 1) * a].copy_from_slice(&log_softmax(&logits));
    }
    Ok(fp)
}

/// Loss of a trajectory under `p`, with advantages frozen at the values
/// recorded in the trajectory.
pub fn trial_loss(p: &AgentParams, traj: &Trajectory, spec: &LossSpec) -> Result<LossBreakdown> {
    let fp = forward_trial(p, traj)?;
    let (returns, adv) = advantages(traj, spec.discount);
    let mut out = LossBreakdown::default();
    for t in 0..traj.len() {
        let lp = fp.log_probs_at(t);
        out.policy_loss -= adv[t] * lp[traj.actions[t]];
        out.value_loss += (fp.values[t] - returns[t]).powi(2);
        out.entropy -= lp.iter().map(|l| l.exp() * l).sum::<f64>();
    }
    out.total = out.policy_loss + spec.value_coef * out.value_loss - spec.entropy_coef * out.entropy;
    Ok(out)
}

/// Exact gradient of [`trial_loss`] by backpropagation through the whole trial.
/// Hidden-state resets recorded in the trajectory stop the backward flow.
pub fn bptt_backward(p: &AgentParams, traj: &Trajectory, spec: &LossSpec) -> Result<GradientBundle> {
    let fp = forward_trial(p, traj)?;
    backward(p, traj, &fp, spec)
}

/// [`bptt_backward`] reusing activations already computed under `p`, such as
/// those recorded while the trajectory was played.
pub fn bptt_from_forward(
    p: &AgentParams,
    traj: &Trajectory,
    fp: &ForwardPass,
    spec: &LossSpec,
) -> Result<GradientBundle> {
    check_trajectory(p, traj)?;
    if fp.len() != traj.len() || fp.hidden != p.dims.hidden || fp.actions != p.dims.actions {
        return Err(Error::shape("forward pass steps", traj.len(), fp.len()));
    }
    backward(p, traj, fp, spec)
}

fn backward(p: &AgentParams, traj: &Trajectory, fp: &ForwardPass, spec: &LossSpec) -> Result<GradientBundle> {
    let (returns, adv) = advantages(traj, spec.discount);
    let (hd, na, d) = (p.dims.hidden, p.dims.actions, p.dims.input);
    let mut g = GradientBundle::zeros(p.dims);

    let mut dh_next = vec![0.0; hd];
    let mut dc_next = vec![0.0; hd];
    let mut dh = vec![0.0; hd];
    let mut dz = vec![0.0; 4 * hd];
    let mut dlogits = vec![0.0; na];
    let zeros = vec![0.0; hd];

    for t in (0..traj.len()).rev() {
        let lp = fp.log_probs_at(t);
        let ent: f64 = -lp.iter().map(|l| l.exp() * l).sum::<f64>();
        for k in 0..na {
            let pk = lp[k].exp();
            let onehot = if k == traj.actions[t] { 1.0 } else { 0.0 };
            let ent_term = if pk > 0.0 { pk * (lp[k] + ent) } else { 0.0 };
            dlogits[k] = -adv[t] * (onehot - pk) + spec.entropy_coef * ent_term;
        }
        let dv = 2.0 * spec.value_coef * (fp.values[t] - returns[t]);

        let h_t = fp.h_at(t);
        for k in 0..na {
            let row = &mut g.0.w_policy[k * hd..(k + 1) * hd];
            row.iter_mut().zip(h_t).for_each(|(w, h)| *w += dlogits[k] * h);
            g.0.b_policy[k] += dlogits[k];
        }
        g.0.w_value.iter_mut().zip(h_t).for_each(|(w, h)| *w += dv * h);
        g.0.b_value[0] += dv;

        for j in 0..hd {
            let mut s = dh_next[j] + p.w_value[j] * dv;
            for k in 0..na {
                s += p.w_policy[k * hd + j] * dlogits[k];
            }
            dh[j] = s;
        }

        let gates = &fp.gates[t * 4 * hd..(t + 1) * 4 * hd];
        let tanh_c = &fp.tanh_c[t * hd..(t + 1) * hd];
        let reset = traj.resets[t];
        let c_prev = if reset { &zeros[..] } else { fp.c_at(t - 1) };
        let h_prev = if reset { &zeros[..] } else { fp.h_at(t - 1) };
        for j in 0..hd {
            let (i, f, gg, o) = (gates[j], gates[hd + j], gates[2 * hd + j], gates[3 * hd + j]);
            let dc = dh[j] * o * (1.0 - tanh_c[j] * tanh_c[j]) + dc_next[j];
            dz[j] = dc * gg * i * (1.0 - i);
            dz[hd + j] = dc * c_prev[j] * f * (1.0 - f);
            dz[2 * hd + j] = dc * i * (1.0 - gg * gg);
            dz[3 * hd + j] = dh[j] * tanh_c[j] * o * (1.0 - o);
            dc_next[j] = if reset { 0.0 } else { dc * f };
        }

        let x = &traj.inputs[t * d..(t + 1) * d];
        dh_next.iter_mut().for_each(|v| *v = 0.0);
        for r in 0..4 * hd {
            let z = dz[r];
            if z == 0.0 {
                continue;
            }
            g.0.b_gates[r] += z;
            let wi = &mut g.0.w_input[r * d..(r + 1) * d];
            wi.iter_mut().zip(x).for_each(|(w, xv)| *w += z * xv);
            if !reset {
                let wh = &mut g.0.w_hidden[r * hd..(r + 1) * hd];
                wh.iter_mut().zip(h_prev).for_each(|(w, hv)| *w += z * hv);
                let row = &p.w_hidden[r * hd..(r + 1) * hd];
                dh_next.iter_mut().zip(row).for_each(|(acc, w)| *acc += z * w);
            }
        }
    }
    Ok(g)
}

/// Floor on the denominator of the relative error, so coordinates whose true
/// gradient is (numerically) zero are compared in absolute terms.
pub const FD_DENOM_FLOOR: f64 = 1e-4;

/// `|analytic - numeric| / max(|analytic|, |numeric|, FD_DENOM_FLOOR)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_DENOM_FLOOR)
}

/// Compare `grad` to central differences of `f` at `x` over the given coordinates.
/// Returns the largest relative error.
pub fn max_relative_error<F>(mut f: F, x: &[f64], grad: &[f64], coords: &[usize], eps: f64) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    coords
        .iter()
        .map(|&i| {
            let orig = probe[i];
            probe[i] = orig + eps;
            let up = f(&probe);
            probe[i] = orig - eps;
            let down = f(&probe);
            probe[i] = orig;
            relative_error(grad[i], (up - down) / (2.0 * eps))
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy)]
pub struct FdOptions {
    pub eps: f64,
    /// Coordinates checked; every coordinate when the network is smaller.
    pub coordinates: usize,
    /// Minimum number of coordinates drawn from each tensor.
    pub per_tensor: usize,
    pub seed: u64,
}

impl Default for FdOptions {
    fn default() -> Self {
        FdOptions {
            eps: 1e-5,
            coordinates: 400,
            per_tensor: 24,
            seed: 0x5eed,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FdReport {
    pub max_relative_error: f64,
    pub coordinates_checked: usize,
    /// Largest relative error per tensor, in [`TENSOR_NAMES`] order.
    pub per_tensor: Vec<(String, f64)>,
}

/// Coordinates to check: at least `per_tensor` from each tensor, the rest uniform.
pub fn fd_coordinates(p: &AgentParams, opts: &FdOptions) -> Vec<usize> {
    let total = p.param_count();
    if total <= opts.coordinates {
        return (0..total).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut picked = std::collections::BTreeSet::new();
    let mut offset = 0;
    for s in p.slices() {
        let n = s.len().min(opts.per_tensor);
        for i in sample(&mut rng, s.len(), n) {
            picked.insert(offset + i);
        }
        offset += s.len();
    }
    while picked.len() < opts.coordinates {
        picked.insert(rng.gen_range(0..total));
    }
    picked.into_iter().collect()
}

/// Check an analytic gradient against central differences of [`trial_loss`].
pub fn finite_diff_check_against(
    p: &AgentParams,
    traj: &Trajectory,
    spec: &LossSpec,
    analytic: &GradientBundle,
    opts: &FdOptions,
) -> Result<FdReport> {
    p.check_same_shape(analytic)?;
    let coords = fd_coordinates(p, opts);
    let mut probe = p.clone();
    let mut per_tensor = vec![0.0f64; TENSOR_NAMES.len()];
    for &i in &coords {
        let orig = p.get(i);
        probe.set(i, orig + opts.eps);
        let up = trial_loss(&probe, traj, spec)?.total;
        probe.set(i, orig - opts.eps);
        let down = trial_loss(&probe, traj, spec)?.total;
        probe.set(i, orig);
        let err = relative_error(analytic.get(i), (up - down) / (2.0 * opts.eps));
        let (t, _) = p.locate(i);
        per_tensor[t] = per_tensor[t].max(err);
    }
    Ok(FdReport {
        max_relative_error: per_tensor.iter().cloned().fold(0.0, f64::max),
        coordinates_checked: coords.len(),
        per_tensor: TENSOR_NAMES
            .iter()
            .map(|n| n.to_string())
            .zip(per_tensor)
            .collect(),
    })
}

/// Maximum relative error between [`bptt_backward`] and central differences.
pub fn finite_diff_check(p: &AgentParams, traj: &Trajectory, spec: &LossSpec, eps: f64) -> Result<f64> {
    if eps <= 0.0 {
        return Err(Error::Config(format!("finite-difference step {eps} must be positive")));
    }
    let analytic = bptt_backward(p, traj, spec)?;
    let opts = FdOptions {
        eps,
        ..FdOptions::default()
    };
    Ok(finite_diff_check_against(p, traj, spec, &analytic, &opts)?.max_relative_error)
}
