//! The seven gated recurrent architectures and their forward passes.
//!
//! Vanilla LSTM equations (sigmoid gates, tanh candidate/output activation,
//! peepholes on all three gates, the output gate reading the fresh cell
//! state):
//!
//! ```text
//! i_t = sigmoid(Wi x_t + Ri h_{t-1} + pi . c_{t-1} + bi)
//! f_t = sigmoid(Wf x_t + Rf h_{t-1} + pf . c_{t-1} + bf)
//! c_t = f_t . c_{t-1} + i_t . tanh(Wc x_t + Rc h_{t-1} + bc)
//! o_t = sigmoid(Wo x_t + Ro h_{t-1} + po . c_t + bo)
//! h_t = o_t . tanh(c_t)
//! ```
//!
//! The ablations substitute `i_t = 1`, `f_t = 1`, `o_t = 1` or drop all
//! peepholes; GRU and S-LSTM replace the gate set entirely.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CellKind {
    VanillaLstm,
    /// No input gate: i_t = 1.
    Nig,
    /// No output gate: o_t = 1.
    Nog,
    /// No forget gate: f_t = 1.
    Nfg,
    /// No peepholes: p* = 0.
    Nph,
    Gru,
    /// Simplified LSTM: forget gate only, input weight 1 - f_t.
    SLstm,
}

impl CellKind {
    /// All kinds in the canonical comparison order.
    pub const ALL: [CellKind; 7] = [
        CellKind::VanillaLstm,
        CellKind::Nig,
        CellKind::Nog,
        CellKind::Nfg,
        CellKind::Nph,
        CellKind::Gru,
        CellKind::SLstm,
    ];

    pub fn label(self) -> &'static str {
        match self {
            CellKind::VanillaLstm => "LSTM",
            CellKind::Nig => "NIG",
            CellKind::Nog => "NOG",
            CellKind::Nfg => "NFG",
            CellKind::Nph => "NPH",
            CellKind::Gru => "GRU",
            CellKind::SLstm => "S-LSTM",
        }
    }

    pub fn parse(s: &str) -> Result<CellKind> {
        let norm: String = s
            .chars()
            .filter(|c| *c != '-' && *c != '_')
            .map(|c| c.to_ascii_uppercase())
            .collect();
        CellKind::ALL
            .iter()
            .copied()
            .find(|k| k.label().replace('-', "") == norm)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown cell kind `{s}`")))
    }

    /// True for kinds with a separate memory cell (all but GRU).
    pub fn has_memory_cell(self) -> bool {
        !matches!(self, CellKind::Gru)
    }
}

impl std::fmt::Display for CellKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellSpec {
    pub kind: CellKind,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

impl CellSpec {
    pub fn new(kind: CellKind, input_dim: usize, hidden_dim: usize) -> Result<CellSpec> {
        if input_dim == 0 || hidden_dim == 0 {
            return Err(Error::InvalidArgument(
                "cell dimensions must be at least 1".into(),
            ));
        }
        Ok(CellSpec {
            kind,
            input_dim,
            hidden_dim,
        })
    }
}

/// Weights of one gate (or the cell candidate): input matrix, recurrent
/// matrix, optional peephole vector and bias.
#[derive(Debug, Clone, PartialEq)]
pub struct GateParams {
    pub w: Array2<f64>,
    pub r: Array2<f64>,
    pub p: Option<Array1<f64>>,
    pub b: Array1<f64>,
}

impl GateParams {
    fn zeros(spec: &CellSpec, peephole: bool) -> GateParams {
        GateParams {
            w: Array2::zeros((spec.hidden_dim, spec.input_dim)),
            r: Array2::zeros((spec.hidden_dim, spec.hidden_dim)),
            p: peephole.then(|| Array1::zeros(spec.hidden_dim)),
            b: Array1::zeros(spec.hidden_dim),
        }
    }

    fn randomize(&mut self, rng: &mut impl Rng, scale: f64) {
        for v in self.w.iter_mut().chain(self.r.iter_mut()) {
            *v = rng.gen_range(-scale..=scale);
        }
    }

    pub fn param_count(&self) -> usize {
        self.w.len() + self.r.len() + self.b.len() + self.p.as_ref().map_or(0, |p| p.len())
    }

    /// Pre-activation: W x + R h_prev + b, plus p . peep when a peephole exists.
    fn preact(&self, x: &Array1<f64>, h_prev: &Array1<f64>, peep: Option<&Array1<f64>>) -> Array1<f64> {
        let mut a = self.w.dot(x) + self.r.dot(h_prev) + &self.b;
        if let (Some(p), Some(c)) = (self.p.as_ref(), peep) {
            a = a + &(p * c);
        }
        a
    }

    fn for_each(&self, f: &mut impl FnMut(f64)) {
        self.w.iter().for_each(|v| f(*v));
        self.r.iter().for_each(|v| f(*v));
        if let Some(p) = &self.p {
            p.iter().for_each(|v| f(*v));
        }
        self.b.iter().for_each(|v| f(*v));
    }

    fn for_each_mut(&mut self, f: &mut impl FnMut(&mut f64)) {
        self.w.iter_mut().for_each(|v| f(v));
        self.r.iter_mut().for_each(|v| f(v));
        if let Some(p) = &mut self.p {
            p.iter_mut().for_each(|v| f(v));
        }
        self.b.iter_mut().for_each(|v| f(v));
    }
}

/// All parameters of one recurrent cell. The LSTM shape covers the vanilla
/// architecture and every ablation (absent gates are `None`); GRU has its own
/// gate set.
#[derive(Debug, Clone, PartialEq)]
pub enum CellParams {
    Lstm {
        spec: CellSpec,
        input: Option<GateParams>,
        forget: Option<GateParams>,
        candidate: GateParams,
        output: Option<GateParams>,
    },
    Gru {
        spec: CellSpec,
        reset: GateParams,
        update: GateParams,
        candidate: GateParams,
    },
}

impl CellParams {
    pub fn spec(&self) -> &CellSpec {
        match self {
            CellParams::Lstm { spec, .. } | CellParams::Gru { spec, .. } => spec,
        }
    }

    /// Zero-valued parameters with the gate/peephole layout of `spec.kind`.
    pub fn zeros(spec: &CellSpec) -> CellParams {
        match spec.kind {
            CellKind::VanillaLstm => CellParams::Lstm {
                spec: *spec,
                input: Some(GateParams::zeros(spec, true)),
                forget: Some(GateParams::zeros(spec, true)),
                candidate: GateParams::zeros(spec, false),
                output: Some(GateParams::zeros(spec, true)),
            },
            CellKind::Nig => CellParams::Lstm {
                spec: *spec,
                input: None,
                forget: Some(GateParams::zeros(spec, true)),
                candidate: GateParams::zeros(spec, false),
                output: Some(GateParams::zeros(spec, true)),
            },
            CellKind::Nog => CellParams::Lstm {
                spec: *spec,
                input: Some(GateParams::zeros(spec, true)),
                forget: Some(GateParams::zeros(spec, true)),
                candidate: GateParams::zeros(spec, false),
                output: None,
            },
            CellKind::Nfg => CellParams::Lstm {
                spec: *spec,
                input: Some(GateParams::zeros(spec, true)),
                forget: None,
                candidate: GateParams::zeros(spec, false),
                output: Some(GateParams::zeros(spec, true)),
            },
            CellKind::Nph => CellParams::Lstm {
                spec: *spec,
                input: Some(GateParams::zeros(spec, false)),
                forget: Some(GateParams::zeros(spec, false)),
                candidate: GateParams::zeros(spec, false),
                output: Some(GateParams::zeros(spec, false)),
            },
            CellKind::Gru => CellParams::Gru {
                spec: *spec,
                reset: GateParams::zeros(spec, false),
                update: GateParams::zeros(spec, false),
                candidate: GateParams::zeros(spec, false),
            },
            CellKind::SLstm => CellParams::Lstm {
                spec: *spec,
                input: None,
                forget: Some(GateParams::zeros(spec, false)),
                candidate: GateParams::zeros(spec, false),
                output: None,
            },
        }
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.for_each(&mut |_| n += 1);
        n
    }

    pub fn for_each(&self, f: &mut impl FnMut(f64)) {
        match self {
            CellParams::Lstm {
                input,
                forget,
                candidate,
                output,
                ..
            } => {
                if let Some(g) = input {
                    g.for_each(f);
                }
                if let Some(g) = forget {
                    g.for_each(f);
                }
                candidate.for_each(f);
                if let Some(g) = output {
                    g.for_each(f);
                }
            }
            CellParams::Gru {
                reset,
                update,
                candidate,
                ..
            } => {
                reset.for_each(f);
                update.for_each(f);
                candidate.for_each(f);
            }
        }
    }

    pub fn for_each_mut(&mut self, f: &mut impl FnMut(&mut f64)) {
        match self {
            CellParams::Lstm {
                input,
                forget,
                candidate,
                output,
                ..
            } => {
                if let Some(g) = input {
                    g.for_each_mut(f);
                }
                if let Some(g) = forget {
                    g.for_each_mut(f);
                }
                candidate.for_each_mut(f);
                if let Some(g) = output {
                    g.for_each_mut(f);
                }
            }
            CellParams::Gru {
                reset,
                update,
                candidate,
                ..
            } => {
                reset.for_each_mut(f);
                update.for_each_mut(f);
                candidate.for_each_mut(f);
            }
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        self.for_each(&mut |v| out.push(v));
        out
    }

    /// Adds `delta` to the parameter at flat index `idx` (same ordering as
    /// `to_flat`).
    pub fn perturb(&mut self, idx: usize, delta: f64) {
        let mut i = 0usize;
        self.for_each_mut(&mut |v| {
            if i == idx {
                *v += delta;
            }
            i += 1;
        });
    }
}

/// Recurrent state carried between frames.
#[derive(Debug, Clone, PartialEq)]
pub struct CellState {
    pub h: Array1<f64>,
    /// Memory cell; `None` for GRU.
    pub c: Option<Array1<f64>>,
}

impl CellState {
    pub fn zeros(spec: &CellSpec) -> CellState {
        CellState {
            h: Array1::zeros(spec.hidden_dim),
            c: spec
                .kind
                .has_memory_cell()
                .then(|| Array1::zeros(spec.hidden_dim)),
        }
    }
}

/// Per-step activations kept for backpropagation and analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct GateTrace {
    /// i_t (LSTM family; `None` where i_t = 1 or for GRU/S-LSTM).
    pub input_gate: Option<Array1<f64>>,
    /// f_t (`None` where f_t = 1 or for GRU).
    pub forget_gate: Option<Array1<f64>>,
    /// o_t (`None` where o_t = 1 or for GRU/S-LSTM).
    pub output_gate: Option<Array1<f64>>,
    /// r_t (GRU only).
    pub reset_gate: Option<Array1<f64>>,
    /// z_t (GRU only).
    pub update_gate: Option<Array1<f64>>,
    /// tanh candidate: g(.) for the LSTM family, h~_t for GRU.
    pub candidate: Array1<f64>,
    /// Rh h_{t-1}, kept for the GRU reset-gate backward path.
    pub recurrent_candidate: Option<Array1<f64>>,
    /// c_t (`None` for GRU).
    pub cell: Option<Array1<f64>>,
    pub hidden: Array1<f64>,
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn sigmoid_vec(a: &Array1<f64>) -> Array1<f64> {
    a.mapv(sigmoid)
}

fn tanh_vec(a: &Array1<f64>) -> Array1<f64> {
    a.mapv(f64::tanh)
}

/// Returns the scalar parameter count of `spec` without materializing the
/// parameters. With `U = nI*nH + nH^2 + nH` the counts are
/// 4U + 3nH (LSTM), 3U + 2nH (NIG/NOG/NFG), 4U (NPH), 3U (GRU), 2U (S-LSTM).
pub fn param_count(spec: &CellSpec) -> usize {
    let (n_in, n_h) = (spec.input_dim, spec.hidden_dim);
    let u = n_in * n_h + n_h * n_h + n_h;
    match spec.kind {
        CellKind::VanillaLstm => 4 * u + 3 * n_h,
        CellKind::Nig | CellKind::Nog | CellKind::Nfg => 3 * u + 2 * n_h,
        CellKind::Nph => 4 * u,
        CellKind::Gru => 3 * u,
        CellKind::SLstm => 2 * u,
    }
}

/// Deterministic initialization: W and R uniform in [-scale, scale],
/// peepholes zero, biases zero except the forget-gate bias which starts at +1.
pub fn init_params(spec: &CellSpec, seed: u64, scale: f64) -> Result<CellParams> {
    if !(scale > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "initialization scale must be positive, got {scale}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = CellParams::zeros(spec);
    match &mut params {
        CellParams::Lstm {
            input,
            forget,
            candidate,
            output,
            ..
        } => {
            if let Some(g) = input {
                g.randomize(&mut rng, scale);
            }
            if let Some(g) = forget {
                g.randomize(&mut rng, scale);
                // Standard forget-bias-1 init. For the S-LSTM the forget gate
                // also scales the input by 1 - f, so a positive bias would
                // mute the input path; start it balanced instead.
                g.b.fill(if spec.kind == CellKind::SLstm { 0.0 } else { 1.0 });
            }
            candidate.randomize(&mut rng, scale);
            if let Some(g) = output {
                g.randomize(&mut rng, scale);
            }
        }
        CellParams::Gru {
            reset,
            update,
            candidate,
            ..
        } => {
            reset.randomize(&mut rng, scale);
            update.randomize(&mut rng, scale);
            candidate.randomize(&mut rng, scale);
        }
    }
    Ok(params)
}

fn check_step_inputs(spec: &CellSpec, x: &Array1<f64>, prev: &CellState) -> Result<()> {
    if x.len() != spec.input_dim {
        return Err(Error::DimensionMismatch(format!(
            "input has {} entries, spec expects {}",
            x.len(),
            spec.input_dim
        )));
    }
    if prev.h.len() != spec.hidden_dim {
        return Err(Error::DimensionMismatch(format!(
            "state h has {} entries, spec expects {}",
            prev.h.len(),
            spec.hidden_dim
        )));
    }
    match (&prev.c, spec.kind.has_memory_cell()) {
        (Some(c), true) if c.len() != spec.hidden_dim => {
            return Err(Error::DimensionMismatch(format!(
                "state c has {} entries, spec expects {}",
                c.len(),
                spec.hidden_dim
            )));
        }
        (None, true) => {
            return Err(Error::DimensionMismatch(
                "state is missing the memory cell required by this kind".into(),
            ));
        }
        (Some(_), false) => {
            return Err(Error::DimensionMismatch(
                "GRU state must not carry a memory cell".into(),
            ));
        }
        _ => {}
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("step input".into()));
    }
    Ok(())
}

/// One forward step of the cell.
pub fn step(params: &CellParams, x: &Array1<f64>, prev: &CellState) -> Result<(CellState, GateTrace)> {
    check_step_inputs(params.spec(), x, prev)?;
    let spec = params.spec();
    let ones = || Array1::from_elem(spec.hidden_dim, 1.0);
    match params {
        CellParams::Lstm {
            input,
            forget,
            candidate,
            output,
            ..
        } => {
            let c_prev = prev.c.as_ref().expect("checked above");
            let i_t = input
                .as_ref()
                .map(|g| sigmoid_vec(&g.preact(x, &prev.h, Some(c_prev))));
            let f_t = forget
                .as_ref()
                .map(|g| sigmoid_vec(&g.preact(x, &prev.h, Some(c_prev))));
            let g_t = tanh_vec(&candidate.preact(x, &prev.h, None));

            // Input weighting: i_t for the gated kinds, 1 - f_t for S-LSTM,
            // all-ones for NIG.
            let in_weight = match (spec.kind, &i_t, &f_t) {
                (CellKind::SLstm, _, Some(f)) => f.mapv(|v| 1.0 - v),
                (_, Some(i), _) => i.clone(),
                _ => ones(),
            };
            let f_weight = f_t.clone().unwrap_or_else(ones);
            let c_t = &f_weight * c_prev + &in_weight * &g_t;

            let tanh_c = tanh_vec(&c_t);
            let o_t = output
                .as_ref()
                .map(|g| sigmoid_vec(&g.preact(x, &prev.h, Some(&c_t))));
            let h_t = match &o_t {
                Some(o) => o * &tanh_c,
                None => tanh_c,
            };

            let state = CellState {
                h: h_t.clone(),
                c: Some(c_t.clone()),
            };
            let trace = GateTrace {
                input_gate: i_t,
                forget_gate: f_t,
                output_gate: o_t,
                reset_gate: None,
                update_gate: None,
                candidate: g_t,
                recurrent_candidate: None,
                cell: Some(c_t),
                hidden: h_t,
            };
            Ok((state, trace))
        }
        CellParams::Gru {
            reset,
            update,
            candidate,
            ..
        } => {
            let r_t = sigmoid_vec(&reset.preact(x, &prev.h, None));
            let z_t = sigmoid_vec(&update.preact(x, &prev.h, None));
            let rh = candidate.r.dot(&prev.h);
            let cand_pre = candidate.w.dot(x) + &(&r_t * &rh) + &candidate.b;
            let h_cand = tanh_vec(&cand_pre);
            let h_t = &z_t * &prev.h + &(z_t.mapv(|z| 1.0 - z) * &h_cand);

            let state = CellState {
                h: h_t.clone(),
                c: None,
            };
            let trace = GateTrace {
                input_gate: None,
                forget_gate: None,
                output_gate: None,
                reset_gate: Some(r_t),
                update_gate: Some(z_t),
                candidate: h_cand,
                recurrent_candidate: Some(rh),
                cell: None,
                hidden: h_t,
            };
            Ok((state, trace))
        }
    }
}

/// Full-sequence forward pass: `T` successive `step` calls from `init`.
pub fn run_sequence(
    params: &CellParams,
    xs: &Array2<f64>,
    init: &CellState,
) -> Result<(Vec<CellState>, Vec<GateTrace>)> {
    if xs.nrows() == 0 {
        return Err(Error::EmptyInput("run_sequence requires T >= 1".into()));
    }
    let mut states = Vec::with_capacity(xs.nrows());
    let mut traces = Vec::with_capacity(xs.nrows());
    let mut prev = init.clone();
    for row in xs.rows() {
        let (state, trace) = step(params, &row.to_owned(), &prev)?;
        prev = state.clone();
        states.push(state);
        traces.push(trace);
    }
    Ok((states, traces))
}
