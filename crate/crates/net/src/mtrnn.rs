//! Multiple-timescale recurrent network with an attention gate between the
//! IO and fast-context nodes.
//!
//! Three node groups integrate with different leak time constants:
//! IO (68 nodes, tau 2), Cf (30, tau 5), Cs (7, tau 32). Internal values
//! follow u_i(t) = (1 - 1/tau) u_i(t-1) + (1/tau) sum_j w_ij x_j(t), outputs
//! are y = tanh(u). The Cf branch sees the IO input through the gate:
//! A(t) = sigmoid(softmax(tanh(W_a [x_io; u_cf(t-1)] + b_a))), applied
//! multiplicatively to x_io before the Cf weights.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{NetError, Result};
use crate::frame::{FeedbackRates, IO_WIDTH};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeGroupSpec {
    pub count: usize,
    pub tau: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupSpecs {
    pub io: NodeGroupSpec,
    pub cf: NodeGroupSpec,
    pub cs: NodeGroupSpec,
}

impl GroupSpecs {
    /// IO 68 / tau 2, Cf 30 / tau 5, Cs 7 / tau 32.
    pub fn standard() -> Self {
        GroupSpecs {
            io: NodeGroupSpec { count: IO_WIDTH, tau: 2.0 },
            cf: NodeGroupSpec { count: 30, tau: 5.0 },
            cs: NodeGroupSpec { count: 7, tau: 32.0 },
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, g) in [("io", self.io), ("cf", self.cf), ("cs", self.cs)] {
            if g.tau < 1.0 {
                return Err(NetError::shape(format!("{name}.tau"), ">= 1", g.tau));
            }
            if g.count == 0 {
                return Err(NetError::shape(format!("{name}.count"), "> 0", 0));
            }
        }
        Ok(())
    }
}

/// How the gate value is produced from the softmax scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GateMode {
    /// sigmoid(softmax(tanh(..))) — the default.
    Literal,
    /// softmax(tanh(..)) without the sigmoid, for gate-form ablations.
    SoftmaxOnly,
    /// Gate pinned to all ones (attention removed).
    Identity,
}

impl GateMode {
    pub fn label(self) -> &'static str {
        match self {
            GateMode::Literal => "literal",
            GateMode::SoftmaxOnly => "softmax_only",
            GateMode::Identity => "identity",
        }
    }

    pub fn from_label(s: &str) -> Result<Self> {
        match s {
            "literal" => Ok(GateMode::Literal),
            "softmax_only" => Ok(GateMode::SoftmaxOnly),
            "identity" => Ok(GateMode::Identity),
            other => Err(NetError::shape("gate mode", "literal|softmax_only|identity", other)),
        }
    }
}

/// Connection weights. Blocks follow standard MTRNN connectivity: IO takes
/// IO (recurrent) and Cf; Cf takes gated IO and Cs (Cf->Cf optional); Cs
/// takes Cs and Cf. IO and Cs are not connected to each other. No biases on
/// connection blocks; the attention map carries the only bias.
#[derive(Debug, Clone)]
pub struct MtrnnParams {
    pub specs: GroupSpecs,
    pub gate: GateMode,
    pub w_io_io: Array2<f64>,
    pub w_io_cf: Array2<f64>,
    pub w_cf_io: Array2<f64>,
    pub w_cf_cs: Array2<f64>,
    pub w_cf_cf: Option<Array2<f64>>,
    pub w_cs_cs: Array2<f64>,
    pub w_cs_cf: Array2<f64>,
    /// (io, io + cf): maps [x_io; u_cf_prev] to gate scores.
    pub w_a: Array2<f64>,
    pub b_a: Array1<f64>,
}

impl MtrnnParams {
    pub fn new(specs: GroupSpecs, gate: GateMode, cf_recurrence: bool, seed: u64) -> Self {
        specs.validate().expect("invalid group specs");
        let (nio, ncf, ncs) = (specs.io.count, specs.cf.count, specs.cs.count);
        let mut r = rng::seeded(seed, rng::streams::MTRNN_INIT);
        let mut init = |rows: usize, cols: usize| -> Array2<f64> {
            Array2::from_shape_fn((rows, cols), |_| rng::fan_in_uniform(&mut r, cols))
        };
        MtrnnParams {
            specs,
            gate,
            w_io_io: init(nio, nio),
            w_io_cf: init(nio, ncf),
            w_cf_io: init(ncf, nio),
            w_cf_cs: init(ncf, ncs),
            w_cf_cf: if cf_recurrence { Some(init(ncf, ncf)) } else { None },
            w_cs_cs: init(ncs, ncs),
            w_cs_cf: init(ncs, ncf),
            w_a: init(nio, nio + ncf),
            b_a: Array1::zeros(nio),
        }
    }

    pub fn standard(gate: GateMode, seed: u64) -> Self {
        Self::new(GroupSpecs::standard(), gate, false, seed)
    }

    pub fn cf_recurrence(&self) -> bool {
        self.w_cf_cf.is_some()
    }

    /// Named weight blocks in canonical (checkpoint / gradient) order.
    pub fn block_names(&self) -> Vec<&'static str> {
        let mut names = vec!["w_io_io", "w_io_cf", "w_cf_io", "w_cf_cs"];
        if self.w_cf_cf.is_some() {
            names.push("w_cf_cf");
        }
        names.extend_from_slice(&["w_cs_cs", "w_cs_cf", "w_a", "b_a"]);
        names
    }

    pub fn param_count(&self) -> usize {
        self.w_io_io.len()
            + self.w_io_cf.len()
            + self.w_cf_io.len()
            + self.w_cf_cs.len()
            + self.w_cf_cf.as_ref().map_or(0, |w| w.len())
            + self.w_cs_cs.len()
            + self.w_cs_cf.len()
            + self.w_a.len()
            + self.b_a.len()
    }
}

/// Internal values of the three groups plus the step index.
#[derive(Debug, Clone, PartialEq)]
pub struct MtrnnState {
    pub u_io: Vec<f64>,
    pub u_cf: Vec<f64>,
    pub u_cs: Vec<f64>,
    pub t: usize,
}

impl MtrnnState {
    pub fn zeros(specs: &GroupSpecs) -> Self {
        MtrnnState {
            u_io: vec![0.0; specs.io.count],
            u_cf: vec![0.0; specs.cf.count],
            u_cs: vec![0.0; specs.cs.count],
            t: 0,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.u_io.iter().chain(&self.u_cf).chain(&self.u_cs).all(|v| v.is_finite())
    }
}

/// y = W x, accumulated in place.
fn mat_vec(w: &Array2<f64>, x: &[f64], out: &mut [f64]) {
    let (rows, cols) = w.dim();
    debug_assert_eq!(cols, x.len());
    debug_assert_eq!(rows, out.len());
    let ws = w.as_slice().expect("weights must be contiguous");
    for (i, o) in out.iter_mut().enumerate() {
        let row = &ws[i * cols..(i + 1) * cols];
        let mut acc = 0.0;
        for (a, b) in row.iter().zip(x.iter()) {
            acc += a * b;
        }
        *o += acc;
    }
}

fn tanh_vec(u: &[f64]) -> Vec<f64> {
    u.iter().map(|v| v.tanh()).collect()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Everything the backward pass needs from a single forward step.
#[derive(Debug, Clone)]
pub(crate) struct StepTrace {
    pub x_io: Vec<f64>,
    pub x_cf: Vec<f64>,
    pub x_cs: Vec<f64>,
    /// tanh scores before the softmax.
    pub gate_s: Vec<f64>,
    /// softmax of the scores.
    pub gate_z: Vec<f64>,
    /// final gate value A(t).
    pub gate_a: Vec<f64>,
    pub gated: Vec<f64>,
    /// Post-update internal value of the fast-context group (queried by the
    /// next step's gate).
    pub u_cf: Vec<f64>,
    pub y_io: Vec<f64>,
}

pub(crate) fn attention_internals(
    x_io: &[f64],
    u_cf_prev: &[f64],
    p: &MtrnnParams,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let nio = p.specs.io.count;
    let mut q = Vec::with_capacity(nio + p.specs.cf.count);
    q.extend_from_slice(x_io);
    q.extend_from_slice(u_cf_prev);
    let mut s = p.b_a.to_vec();
    mat_vec(&p.w_a, &q, &mut s);
    for v in s.iter_mut() {
        *v = v.tanh();
    }
    // numerically stable softmax over the IO dimensions
    let m = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z: Vec<f64> = s.iter().map(|v| (v - m).exp()).collect();
    let sum: f64 = z.iter().sum();
    for v in z.iter_mut() {
        *v /= sum;
    }
    let a: Vec<f64> = match p.gate {
        GateMode::Literal => z.iter().map(|&v| sigmoid(v)).collect(),
        GateMode::SoftmaxOnly => z.clone(),
        GateMode::Identity => vec![1.0; nio],
    };
    (s, z, a)
}

/// The per-dimension gate A(t) over the IO input.
pub fn attention_gate(x_io: &[f64], u_cf_prev: &[f64], p: &MtrnnParams) -> Result<Vec<f64>> {
    if x_io.len() != p.specs.io.count {
        return Err(NetError::shape("attention x_io", p.specs.io.count, x_io.len()));
    }
    if u_cf_prev.len() != p.specs.cf.count {
        return Err(NetError::shape("attention u_cf", p.specs.cf.count, u_cf_prev.len()));
    }
    if !x_io.iter().chain(u_cf_prev.iter()).all(|v| v.is_finite()) {
        return Err(NetError::NonFinite { context: "attention input".into(), step: 0 });
    }
    let (_, _, a) = attention_internals(x_io, u_cf_prev, p);
    Ok(a)
}

#[derive(Debug, Clone)]
pub struct StepOutput {
    pub y_io: Vec<f64>,
    pub y_cf: Vec<f64>,
    pub y_cs: Vec<f64>,
    pub attention: Vec<f64>,
}

pub(crate) fn step_traced(
    state: &MtrnnState,
    x_io: &[f64],
    p: &MtrnnParams,
) -> Result<(MtrnnState, StepTrace)> {
    let specs = &p.specs;
    if x_io.len() != specs.io.count {
        return Err(NetError::shape("step input", specs.io.count, x_io.len()));
    }
    if !state.is_finite() || !x_io.iter().all(|v| v.is_finite()) {
        return Err(NetError::NonFinite { context: "step input".into(), step: state.t });
    }
    let x_cf = tanh_vec(&state.u_cf);
    let x_cs = tanh_vec(&state.u_cs);
    let (gate_s, gate_z, gate_a) = attention_internals(x_io, &state.u_cf, p);
    let gated: Vec<f64> = gate_a.iter().zip(x_io.iter()).map(|(a, x)| a * x).collect();

    let mut pre_io = vec![0.0; specs.io.count];
    mat_vec(&p.w_io_io, x_io, &mut pre_io);
    mat_vec(&p.w_io_cf, &x_cf, &mut pre_io);

    let mut pre_cf = vec![0.0; specs.cf.count];
    mat_vec(&p.w_cf_io, &gated, &mut pre_cf);
    mat_vec(&p.w_cf_cs, &x_cs, &mut pre_cf);
    if let Some(w) = &p.w_cf_cf {
        mat_vec(w, &x_cf, &mut pre_cf);
    }

    let mut pre_cs = vec![0.0; specs.cs.count];
    mat_vec(&p.w_cs_cs, &x_cs, &mut pre_cs);
    mat_vec(&p.w_cs_cf, &x_cf, &mut pre_cs);

    let leak = |u_prev: &[f64], pre: &[f64], tau: f64| -> Vec<f64> {
        u_prev
            .iter()
            .zip(pre.iter())
            .map(|(u, p)| (1.0 - 1.0 / tau) * u + p / tau)
            .collect()
    };
    let u_io = leak(&state.u_io, &pre_io, specs.io.tau);
    let u_cf = leak(&state.u_cf, &pre_cf, specs.cf.tau);
    let u_cs = leak(&state.u_cs, &pre_cs, specs.cs.tau);

    if !u_io.iter().chain(&u_cf).chain(&u_cs).all(|v| v.is_finite()) {
        return Err(NetError::NonFinite { context: "step update".into(), step: state.t });
    }

    let y_io = tanh_vec(&u_io);
    let next = MtrnnState { u_io, u_cf: u_cf.clone(), u_cs, t: state.t + 1 };
    let trace = StepTrace {
        x_io: x_io.to_vec(),
        x_cf,
        x_cs,
        gate_s,
        gate_z,
        gate_a,
        gated,
        u_cf,
        y_io,
    };
    Ok((next, trace))
}

/// One forward step of the network dynamics.
pub fn step(state: &MtrnnState, x_io: &[f64], p: &MtrnnParams) -> Result<(MtrnnState, StepOutput)> {
    let (next, trace) = step_traced(state, x_io, p)?;
    Ok((
        next.clone(),
        StepOutput {
            y_io: trace.y_io,
            y_cf: tanh_vec(&next.u_cf),
            y_cs: tanh_vec(&next.u_cs),
            attention: trace.gate_a,
        },
    ))
}

/// Mix the previous prediction with fresh data: x_k = a_k y_k + (1-a_k) T_k,
/// with a_k = alpha_motor on the motor block and alpha_other elsewhere.
pub fn mix_input(y_io_prev: &[f64], t_next: &[f64], rates: &FeedbackRates) -> Vec<f64> {
    assert_eq!(y_io_prev.len(), IO_WIDTH, "mix_input expects the 68-wide layout");
    assert_eq!(t_next.len(), IO_WIDTH);
    let alphas = rates.per_index();
    y_io_prev
        .iter()
        .zip(t_next.iter())
        .zip(alphas.iter())
        .map(|((y, t), a)| a * y + (1.0 - a) * t)
        .collect()
}

/// Uniform-alpha mixing used by teacher forcing during training.
pub fn mix_uniform(y_io_prev: &[f64], t_next: &[f64], alpha: f64) -> Vec<f64> {
    debug_assert_eq!(y_io_prev.len(), t_next.len());
    y_io_prev
        .iter()
        .zip(t_next.iter())
        .map(|(y, t)| alpha * y + (1.0 - alpha) * t)
        .collect()
}

/// Completion detector: true iff every joint's output range over the last
/// `window.len()` steps stays strictly below `theta`.
pub fn detect_completion(window: &[Vec<f64>], theta: f64) -> bool {
    assert!(window.len() >= 2, "completion window must span at least 2 steps");
    let joints = window[0].len();
    for j in 0..joints {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for step in window {
            lo = lo.min(step[j]);
            hi = hi.max(step[j]);
        }
        if hi - lo >= theta {
            return false;
        }
    }
    true
}

pub const STOP_WINDOW: usize = 25;
pub const STOP_THETA: f64 = 0.02;
