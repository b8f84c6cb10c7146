//! Recurrent cell steps and their exact backward passes.
//!
//! Two cell kinds: a vanilla cell `h = σ(U·x + V·h_prev)` and an LSTM whose
//! pre-activations are split into (g, i, f, o) row blocks of height H, with
//! `g = tanh`, the gates logistic, `c = i⊙g + f⊙c_prev`, `h = o⊙tanh(c)`.
//! There are no bias terms, so a zero state with zero input is an exact
//! fixed point of the LSTM; decoding graphs rely on that for left padding.

use crate::kernel::{
    affine, affine_acc, affine_vjp_input, affine_vjp_weights, logistic, logistic_vjp, tanh,
    Matrix, Vector,
};
use crate::rng::seeded_rng;
use rand_distr::{Distribution, Normal};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CellKind {
    Vanilla,
    Lstm,
}

/// Vanilla cell weights. `u` is H×d_in, `v` is H×H.
#[derive(Clone, Debug, PartialEq)]
pub struct RnnCellParams {
    pub u: Matrix,
    pub v: Matrix,
}

/// LSTM weights. `u` is 4H×d_in and `v` is 4H×H; rows are the (g, i, f, o)
/// blocks in that order, each of height H.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmCellParams {
    pub u: Matrix,
    pub v: Matrix,
}

#[derive(Clone, Debug, PartialEq)]
pub enum CellParams {
    Vanilla(RnnCellParams),
    Lstm(LstmCellParams),
}

impl CellParams {
    pub fn hidden(&self) -> usize {
        match self {
            CellParams::Vanilla(p) => p.u.rows(),
            CellParams::Lstm(p) => p.u.rows() / 4,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            CellParams::Vanilla(p) => p.u.cols(),
            CellParams::Lstm(p) => p.u.cols(),
        }
    }

    pub fn kind(&self) -> CellKind {
        match self {
            CellParams::Vanilla(_) => CellKind::Vanilla,
            CellParams::Lstm(_) => CellKind::Lstm,
        }
    }

    pub fn u(&self) -> &Matrix {
        match self {
            CellParams::Vanilla(p) => &p.u,
            CellParams::Lstm(p) => &p.u,
        }
    }

    pub fn v(&self) -> &Matrix {
        match self {
            CellParams::Vanilla(p) => &p.v,
            CellParams::Lstm(p) => &p.v,
        }
    }
}

/// Per-layer recurrent state. `c` is empty for vanilla cells.
#[derive(Clone, Debug, PartialEq)]
pub struct CellState {
    pub h: Vector,
    pub c: Vector,
}

impl CellState {
    pub fn zero(kind: CellKind, hidden: usize) -> Self {
        CellState {
            h: vec![0.0; hidden],
            c: match kind {
                CellKind::Vanilla => Vec::new(),
                CellKind::Lstm => vec![0.0; hidden],
            },
        }
    }
}

/// Static shape of a model, everything needed to allocate or validate one.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelSpec {
    pub cell: CellKind,
    pub layers: usize,
    pub hidden: usize,
    pub input_dim: usize,
    pub classes: usize,
}

/// Learnable state: one cell per layer plus the output projection.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub spec: ModelSpec,
    pub cells: Vec<CellParams>,
    pub w_out: Matrix,
}

impl ModelParams {
    pub fn zero_state(&self) -> Vec<CellState> {
        (0..self.spec.layers)
            .map(|_| CellState::zero(self.spec.cell, self.spec.hidden))
            .collect()
    }

    /// Parameter matrices in a fixed order (layer by layer U, V, then W_out).
    /// The order is part of the checkpoint format and the clip norm.
    pub fn mats(&self) -> Vec<&Matrix> {
        let mut out = Vec::with_capacity(2 * self.cells.len() + 1);
        for c in &self.cells {
            match c {
                CellParams::Vanilla(p) => {
                    out.push(&p.u);
                    out.push(&p.v);
                }
                CellParams::Lstm(p) => {
                    out.push(&p.u);
                    out.push(&p.v);
                }
            }
        }
        out.push(&self.w_out);
        out
    }

    pub fn mats_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = Vec::with_capacity(2 * self.cells.len() + 1);
        for c in &mut self.cells {
            match c {
                CellParams::Vanilla(p) => {
                    out.push(&mut p.u);
                    out.push(&mut p.v);
                }
                CellParams::Lstm(p) => {
                    out.push(&mut p.u);
                    out.push(&mut p.v);
                }
            }
        }
        out.push(&mut self.w_out);
        out
    }
}

/// Gradient accumulator shaped like a model.
#[derive(Clone, Debug)]
pub struct ModelGrads {
    pub cells: Vec<(Matrix, Matrix)>,
    pub w_out: Matrix,
}

impl ModelGrads {
    pub fn zeros_like(model: &ModelParams) -> Self {
        ModelGrads {
            cells: model
                .cells
                .iter()
                .map(|c| {
                    (
                        Matrix::zeros(c.u().rows(), c.u().cols()),
                        Matrix::zeros(c.v().rows(), c.v().cols()),
                    )
                })
                .collect(),
            w_out: Matrix::zeros(model.w_out.rows(), model.w_out.cols()),
        }
    }

    pub fn mats_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = Vec::with_capacity(2 * self.cells.len() + 1);
        for (u, v) in &mut self.cells {
            out.push(u);
            out.push(v);
        }
        out.push(&mut self.w_out);
        out
    }

    pub fn add_assign(&mut self, other: &ModelGrads) {
        for ((u, v), (ou, ov)) in self.cells.iter_mut().zip(&other.cells) {
            u.add_assign(ou);
            v.add_assign(ov);
        }
        self.w_out.add_assign(&other.w_out);
    }

    pub fn scale(&mut self, s: f64) {
        for (u, v) in &mut self.cells {
            u.scale(s);
            v.scale(s);
        }
        self.w_out.scale(s);
    }

    pub fn is_finite(&self) -> bool {
        self.cells
            .iter()
            .flat_map(|(u, v)| u.data().iter().chain(v.data()))
            .chain(self.w_out.data())
            .all(|x| x.is_finite())
    }
}

/// One vanilla step: `h = σ(U·x + V·h_prev)`.
pub fn rnn_step(p: &RnnCellParams, h_prev: &[f64], x: &[f64]) -> Vector {
    let mut pre = affine(&p.u, x);
    affine_acc(&p.v, h_prev, &mut pre);
    logistic(&pre)
}

/// One LSTM step per the (g, i, f, o) block convention.
pub fn lstm_step(p: &LstmCellParams, state: &CellState, x: &[f64]) -> CellState {
    let (state, _) = lstm_step_cached(p, state, x);
    state
}

/// Everything the backward pass needs from one forward step of one layer.
#[derive(Clone, Debug)]
pub enum StepCache {
    Vanilla {
        x: Vector,
        h_prev: Vector,
        h: Vector,
    },
    Lstm {
        x: Vector,
        h_prev: Vector,
        c_prev: Vector,
        g: Vector,
        i: Vector,
        f: Vector,
        o: Vector,
        tanh_c: Vector,
    },
}

fn lstm_step_cached(p: &LstmCellParams, state: &CellState, x: &[f64]) -> (CellState, StepCache) {
    let hid = p.v.cols();
    assert_eq!(state.h.len(), hid, "lstm step: state dim mismatch");
    assert_eq!(state.c.len(), hid, "lstm step: cell dim mismatch");
    let mut pre = affine(&p.u, x);
    affine_acc(&p.v, &state.h, &mut pre);
    let g = tanh(&pre[..hid]);
    let i = logistic(&pre[hid..2 * hid]);
    let f = logistic(&pre[2 * hid..3 * hid]);
    let o = logistic(&pre[3 * hid..]);
    let mut c = vec![0.0; hid];
    for k in 0..hid {
        c[k] = i[k] * g[k] + f[k] * state.c[k];
    }
    let tanh_c = tanh(&c);
    let mut h = vec![0.0; hid];
    for k in 0..hid {
        h[k] = o[k] * tanh_c[k];
    }
    let cache = StepCache::Lstm {
        x: x.to_vec(),
        h_prev: state.h.clone(),
        c_prev: state.c.clone(),
        g,
        i,
        f,
        o,
        tanh_c,
    };
    (CellState { h, c }, cache)
}

/// Forward step of a single layer, retaining the activations backward needs.
pub fn step_cached(params: &CellParams, state: &CellState, x: &[f64]) -> (CellState, StepCache) {
    match params {
        CellParams::Vanilla(p) => {
            let h = rnn_step(p, &state.h, x);
            let cache = StepCache::Vanilla {
                x: x.to_vec(),
                h_prev: state.h.clone(),
                h: h.clone(),
            };
            (CellState { h, c: Vec::new() }, cache)
        }
        CellParams::Lstm(p) => lstm_step_cached(p, state, x),
    }
}

/// Reverse-mode of [`step_cached`] for one layer.
///
/// `dh`/`dc` are the incoming cotangents of this step's outputs (`dc` is
/// ignored for vanilla cells). Parameter cotangents accumulate into `grads`
/// (as `(dU, dV)`); `dx` and the previous-state cotangents accumulate into
/// the provided buffers.
#[allow(clippy::too_many_arguments)]
pub fn step_backward(
    params: &CellParams,
    cache: &StepCache,
    dh: &[f64],
    dc: &[f64],
    grads: &mut (Matrix, Matrix),
    dx: &mut [f64],
    dh_prev: &mut [f64],
    dc_prev: &mut [f64],
) {
    match (params, cache) {
        (CellParams::Vanilla(p), StepCache::Vanilla { x, h_prev, h }) => {
            let mut dpre = vec![0.0; h.len()];
            logistic_vjp(h, dh, &mut dpre);
            affine_vjp_weights(x, &dpre, &mut grads.0);
            affine_vjp_weights(h_prev, &dpre, &mut grads.1);
            affine_vjp_input(&p.u, &dpre, dx);
            affine_vjp_input(&p.v, &dpre, dh_prev);
        }
        (
            CellParams::Lstm(p),
            StepCache::Lstm { x, h_prev, c_prev, g, i, f, o, tanh_c },
        ) => {
            let hid = g.len();
            let mut dct = vec![0.0; hid];
            // h = o ⊙ tanh(c); fold the next step's dc straight into dct.
            for k in 0..hid {
                dct[k] = dc[k] + dh[k] * o[k] * (1.0 - tanh_c[k] * tanh_c[k]);
            }
            let mut dpre = vec![0.0; 4 * hid];
            {
                let (dg, rest) = dpre.split_at_mut(hid);
                let (di, rest) = rest.split_at_mut(hid);
                let (df, do_) = rest.split_at_mut(hid);
                for k in 0..hid {
                    dg[k] = dct[k] * i[k] * (1.0 - g[k] * g[k]);
                    di[k] = dct[k] * g[k] * i[k] * (1.0 - i[k]);
                    df[k] = dct[k] * c_prev[k] * f[k] * (1.0 - f[k]);
                    do_[k] = dh[k] * tanh_c[k] * o[k] * (1.0 - o[k]);
                }
            }
            for k in 0..hid {
                dc_prev[k] += dct[k] * f[k];
            }
            affine_vjp_weights(x, &dpre, &mut grads.0);
            affine_vjp_weights(h_prev, &dpre, &mut grads.1);
            affine_vjp_input(&p.u, &dpre, dx);
            affine_vjp_input(&p.v, &dpre, dh_prev);
        }
        _ => panic!("cell kind does not match its cache"),
    }
}

/// One step of the whole stack: layer 0 consumes `x`, layer l consumes layer
/// l−1's fresh output. Returns the new states and the top layer's h.
pub fn stack_step(model: &ModelParams, states: &[CellState], x: &[f64]) -> (Vec<CellState>, Vector) {
    let (new_states, _) = stack_step_cached(model, states, x);
    let top = new_states.last().expect("model has at least one layer").h.clone();
    (new_states, top)
}

/// [`stack_step`] retaining one cache per layer.
pub fn stack_step_cached(
    model: &ModelParams,
    states: &[CellState],
    x: &[f64],
) -> (Vec<CellState>, Vec<StepCache>) {
    assert_eq!(states.len(), model.cells.len(), "stack step: layer count mismatch");
    let mut new_states = Vec::with_capacity(states.len());
    let mut caches = Vec::with_capacity(states.len());
    let mut input: &[f64] = x;
    for (cell, state) in model.cells.iter().zip(states) {
        let (ns, cache) = step_cached(cell, state, input);
        new_states.push(ns);
        caches.push(cache);
        input = &new_states.last().unwrap().h;
    }
    (new_states, caches)
}

/// Pre-softmax class scores `W_out·h`.
pub fn output_logits(model: &ModelParams, h: &[f64]) -> Vector {
    affine(&model.w_out, h)
}

/// He-style initialization: every matrix entry drawn from a zero-mean
/// Gaussian with std `sqrt(2 / fan_in)`, fan_in being that matrix's column
/// count. Fully determined by the seed.
pub fn init_params(spec: &ModelSpec, seed: u64) -> ModelParams {
    assert!(
        spec.layers >= 1 && spec.hidden >= 1 && spec.input_dim >= 1 && spec.classes >= 1,
        "all model dimensions must be at least 1"
    );
    let mut rng = seeded_rng(seed);
    let mut draw = |rows: usize, cols: usize| -> Matrix {
        let dist = Normal::new(0.0, (2.0 / cols as f64).sqrt()).unwrap();
        let data = (0..rows * cols).map(|_| dist.sample(&mut rng)).collect();
        Matrix::from_vec(rows, cols, data)
    };
    let gate_rows = match spec.cell {
        CellKind::Vanilla => spec.hidden,
        CellKind::Lstm => 4 * spec.hidden,
    };
    let mut cells = Vec::with_capacity(spec.layers);
    for layer in 0..spec.layers {
        let d_in = if layer == 0 { spec.input_dim } else { spec.hidden };
        let u = draw(gate_rows, d_in);
        let v = draw(gate_rows, spec.hidden);
        cells.push(match spec.cell {
            CellKind::Vanilla => CellParams::Vanilla(RnnCellParams { u, v }),
            CellKind::Lstm => CellParams::Lstm(LstmCellParams { u, v }),
        });
    }
    let w_out = draw(spec.classes, spec.hidden);
    ModelParams { spec: *spec, cells, w_out }
}
