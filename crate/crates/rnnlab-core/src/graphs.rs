//! Decoding computation graphs.
//!
//! Online decoding runs one chain across the whole utterance and reads the
//! prediction for frame t from the hidden vector at step t+ℓ−1 (ℓ is the
//! lookahead). Batch decoding builds an independent κ-step chain per
//! prediction, started from the zero state; with consecutive prediction p,
//! each chain emits p predictions from its last p hidden vectors. Frames
//! outside the utterance are zero vectors, which for bias-free LSTMs leaves
//! the state exactly at zero, so a long-enough batch chain reproduces the
//! online chain bitwise.
//!
//! Frame indices are 0-based here. A chain anchored at frame `a` covers the
//! padded frame range `[end−κ+1, end]` with `end = a+ℓ+p−2` and predicts
//! frame `a+i` from the hidden vector at time `a+ℓ+i−1`, for `i = 0..p`.

use crate::cells::{stack_step_cached, step_backward, ModelGrads, ModelParams, StepCache};
use crate::kernel::{affine_vjp_input, affine_vjp_weights, Vector};
use rayon::prelude::*;
use thiserror::Error;

#[derive(Error, Debug, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("lookahead must be >= 1 (got {0})")]
    LookaheadTooSmall(usize),
    #[error("context must be >= 1 (got {0})")]
    ContextTooSmall(usize),
    #[error("consecutive prediction count must be >= 1 (got {0})")]
    ConsecutiveTooSmall(usize),
    #[error(
        "batch decoding requires context >= lookahead + consecutive - 1; \
         got context {context} < {lookahead} + {consecutive} - 1"
    )]
    ContextTooShort { context: usize, lookahead: usize, consecutive: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecodeMode {
    Online,
    Batch,
}

/// How predictions are produced from a sequence.
///
/// `context` and `consecutive` only apply in batch mode. `lookahead = 1`
/// recovers regular decoding (the prediction for frame t reads the hidden
/// vector at frame t).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DecodeConfig {
    pub mode: DecodeMode,
    pub lookahead: usize,
    pub context: usize,
    pub consecutive: usize,
}

impl DecodeConfig {
    pub fn online(lookahead: usize) -> Self {
        DecodeConfig { mode: DecodeMode::Online, lookahead, context: 0, consecutive: 1 }
    }

    pub fn batch(context: usize, lookahead: usize, consecutive: usize) -> Self {
        DecodeConfig { mode: DecodeMode::Batch, lookahead, context, consecutive }
    }

    pub fn validate(&self) -> Result<(), GraphError> {
        if self.lookahead < 1 {
            return Err(GraphError::LookaheadTooSmall(self.lookahead));
        }
        if self.mode == DecodeMode::Batch {
            if self.context < 1 {
                return Err(GraphError::ContextTooSmall(self.context));
            }
            if self.consecutive < 1 {
                return Err(GraphError::ConsecutiveTooSmall(self.consecutive));
            }
            if self.context + 1 < self.lookahead + self.consecutive {
                return Err(GraphError::ContextTooShort {
                    context: self.context,
                    lookahead: self.lookahead,
                    consecutive: self.consecutive,
                });
            }
        }
        Ok(())
    }

    /// Frames at or before the prediction frame that a batch chain can see.
    /// `context` counts the whole chain including lookahead and consecutive
    /// frames; this is the complementary "past coverage" reading.
    pub fn past_coverage(&self) -> usize {
        (self.context + 1).saturating_sub(self.lookahead + self.consecutive)
    }
}

/// Zero-padded view of an utterance: any index outside `0..len` reads as the
/// zero vector.
pub struct PaddedSequence<'a> {
    frames: &'a [Vector],
    zero: Vector,
}

impl<'a> PaddedSequence<'a> {
    pub fn new(frames: &'a [Vector], dim: usize) -> Self {
        debug_assert!(frames.iter().all(|f| f.len() == dim));
        PaddedSequence { frames, zero: vec![0.0; dim] }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frame(&self, t: isize) -> &[f64] {
        if t < 0 || t as usize >= self.frames.len() {
            &self.zero
        } else {
            &self.frames[t as usize]
        }
    }
}

/// One chain of the decoding graph: the padded frame interval it consumes and
/// the (prediction frame, hidden-vector time) pairs it emits.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChainLayout {
    pub start: isize,
    pub end: isize,
    pub preds: Vec<(usize, isize)>,
}

impl ChainLayout {
    pub fn len(&self) -> usize {
        (self.end - self.start + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.end < self.start
    }
}

/// The single chain online decoding runs: frames 0..T+ℓ−1, one prediction
/// per frame.
pub fn online_layout(t_len: usize, lookahead: usize) -> ChainLayout {
    let l = lookahead as isize;
    ChainLayout {
        start: 0,
        end: t_len as isize + l - 2,
        preds: (0..t_len).map(|t| (t, t as isize + l - 1)).collect(),
    }
}

/// Batch-mode chains, one anchored at every frame.
///
/// Each chain is exactly `context` steps long, ends at `anchor+ℓ+p−2`, and
/// predicts frames `anchor..anchor+p` clipped to the utterance.
pub fn consecutive_chains(
    t_len: usize,
    context: usize,
    lookahead: usize,
    consecutive: usize,
) -> Result<Vec<ChainLayout>, GraphError> {
    DecodeConfig::batch(context, lookahead, consecutive).validate()?;
    let (k, l, p) = (context as isize, lookahead as isize, consecutive as isize);
    let mut chains = Vec::with_capacity(t_len);
    for a in 0..t_len as isize {
        let end = a + l + p - 2;
        let start = end - k + 1;
        let preds = (0..p)
            .map(|i| (a + i, a + l + i - 1))
            .filter(|&(f, _)| f < t_len as isize)
            .map(|(f, h)| (f as usize, h))
            .collect();
        chains.push(ChainLayout { start, end, preds });
    }
    Ok(chains)
}

/// Forward pass of one chain with every activation the backward pass needs.
pub struct ChainForward {
    pub layout: ChainLayout,
    ///`step_caches[s][l]` is layer l's cache at chain step s.
    pub step_caches: Vec<Vec<StepCache>>,
    /// Top-layer hidden vector per chain step.
    pub tops: Vec<Vector>,
    /// `(prediction frame, logits)` in layout order.
    pub logits: Vec<(usize, Vector)>,
}

/// Runs one chain start to end from the zero state, caching activations.
pub fn chain_forward_cached(
    model: &ModelParams,
    seq: &PaddedSequence,
    layout: &ChainLayout,
) -> ChainForward {
    let steps = layout.len();
    let mut states = model.zero_state();
    let mut step_caches = Vec::with_capacity(steps);
    let mut tops = Vec::with_capacity(steps);
    for s in 0..steps {
        let x = seq.frame(layout.start + s as isize);
        let (new_states, caches) = stack_step_cached(model, &states, x);
        tops.push(new_states.last().unwrap().h.clone());
        step_caches.push(caches);
        states = new_states;
    }
    let logits = layout
        .preds
        .iter()
        .map(|&(frame, htime)| {
            let s = (htime - layout.start) as usize;
            (frame, crate::cells::output_logits(model, &tops[s]))
        })
        .collect();
    ChainForward { layout: layout.clone(), step_caches, tops, logits }
}

/// Forward pass without caches, for evaluation.
pub fn chain_forward_logits(
    model: &ModelParams,
    seq: &PaddedSequence,
    layout: &ChainLayout,
) -> Vec<(usize, Vector)> {
    let steps = layout.len();
    let mut states = model.zero_state();
    // hidden-vector times that feed predictions, in chain-step coordinates
    let mut wanted: Vec<(usize, usize)> = layout
        .preds
        .iter()
        .enumerate()
        .map(|(i, &(_, htime))| ((htime - layout.start) as usize, i))
        .collect();
    wanted.sort_unstable();
    let mut out: Vec<(usize, Vector)> = layout.preds.iter().map(|&(f, _)| (f, Vec::new())).collect();
    let mut next = 0;
    for s in 0..steps {
        let x = seq.frame(layout.start + s as isize);
        let (new_states, top) = crate::cells::stack_step(model, &states, x);
        while next < wanted.len() && wanted[next].0 == s {
            out[wanted[next].1].1 = crate::cells::output_logits(model, &top);
            next += 1;
        }
        states = new_states;
    }
    out
}

/// Reverse-mode through one cached chain.
///
/// `dlogits` pairs with `fwd.logits`. Parameter cotangents accumulate into
/// `grads` when given. When `input_frames` is given, the cotangent of the
/// layer-0 input at every chain step accumulates into it (`input_frames[s]`
/// for chain step s); this is what gradient probes read.
pub fn chain_backward(
    model: &ModelParams,
    fwd: &ChainForward,
    dlogits: &[Vector],
    mut grads: Option<&mut ModelGrads>,
    mut input_frames: Option<&mut Vec<Vector>>,
) {
    assert_eq!(dlogits.len(), fwd.logits.len(), "one cotangent per emitted prediction");
    let steps = fwd.step_caches.len();
    let layers = model.cells.len();
    let hid = model.spec.hidden;
    let is_lstm = model.spec.cell == crate::cells::CellKind::Lstm;

    // dh injected at each step's top layer by the output projection
    let mut dtop = vec![vec![0.0; hid]; steps];
    for (i, &(_, htime)) in fwd.layout.preds.iter().enumerate() {
        let s = (htime - fwd.layout.start) as usize;
        let dl = &dlogits[i];
        if let Some(g) = grads.as_deref_mut() {
            affine_vjp_weights(&fwd.tops[s], dl, &mut g.w_out);
        }
        affine_vjp_input(&model.w_out, dl, &mut dtop[s]);
    }

    if let Some(buf) = input_frames.as_deref_mut() {
        assert_eq!(buf.len(), steps, "one input-cotangent slot per chain step");
    }

    // running cotangents of each layer's carried state
    let mut dh: Vec<Vector> = vec![vec![0.0; hid]; layers];
    let mut dc: Vec<Vector> = vec![vec![0.0; hid]; if is_lstm { layers } else { 0 }];
    let empty: Vector = Vec::new();
    let mut scratch = ModelGrads::zeros_like(model);

    for s in (0..steps).rev() {
        for (k, v) in dh[layers - 1].iter_mut().zip(&dtop[s]) {
            *k += v;
        }
        // dx of layer l feeds dh of layer l−1 within the same step
        for l in (0..layers).rev() {
            let cache = &fwd.step_caches[s][l];
            let d_in = model.cells[l].input_dim();
            let mut dx = vec![0.0; d_in];
            let mut dh_prev = vec![0.0; hid];
            let mut dc_prev = if is_lstm { vec![0.0; hid] } else { Vec::new() };
            let dc_in = if is_lstm { &dc[l] } else { &empty };
            let sink = match grads.as_deref_mut() {
                Some(g) => &mut g.cells[l],
                None => &mut scratch.cells[l],
            };
            step_backward(
                &model.cells[l],
                cache,
                &dh[l],
                dc_in,
                sink,
                &mut dx,
                &mut dh_prev,
                &mut dc_prev,
            );
            dh[l] = dh_prev;
            if is_lstm {
                dc[l] = dc_prev;
            }
            if l > 0 {
                for (k, v) in dh[l - 1].iter_mut().zip(&dx) {
                    *k += v;
                }
            } else if let Some(buf) = input_frames.as_deref_mut() {
                for (k, v) in buf[s].iter_mut().zip(&dx) {
                    *k += v;
                }
            }
        }
    }
}

/// Online decoding: logits for every frame from one utterance-long chain.
pub fn online_decode(model: &ModelParams, frames: &[Vector], lookahead: usize) -> Vec<Vector> {
    assert!(lookahead >= 1, "lookahead must be >= 1");
    if frames.is_empty() {
        return Vec::new();
    }
    let seq = PaddedSequence::new(frames, model.spec.input_dim);
    let layout = online_layout(frames.len(), lookahead);
    let mut out = vec![Vec::new(); frames.len()];
    for (frame, logits) in chain_forward_logits(model, &seq, &layout) {
        out[frame] = logits;
    }
    out
}

/// Batch decoding: an independent `context`-step chain per frame. Chains are
/// evaluated in parallel; results are keyed by frame, so the outcome does not
/// depend on scheduling.
pub fn batch_decode(
    model: &ModelParams,
    frames: &[Vector],
    context: usize,
    lookahead: usize,
) -> Vec<Vector> {
    assert!(context >= lookahead, "batch decoding requires context >= lookahead");
    if frames.is_empty() {
        return Vec::new();
    }
    let seq = PaddedSequence::new(frames, model.spec.input_dim);
    let chains = consecutive_chains(frames.len(), context, lookahead, 1)
        .expect("context >= lookahead implies a valid p=1 layout");
    let per_chain: Vec<(usize, Vector)> = chains
        .par_iter()
        .map(|layout| {
            let mut emitted = chain_forward_logits(model, &seq, layout);
            debug_assert_eq!(emitted.len(), 1);
            emitted.pop().unwrap()
        })
        .collect();
    let mut out = vec![Vec::new(); frames.len()];
    for (frame, logits) in per_chain {
        out[frame] = logits;
    }
    out
}

/// Dispatches on the decode mode. Validates the config first.
pub fn decode(
    model: &ModelParams,
    frames: &[Vector],
    cfg: &DecodeConfig,
) -> Result<Vec<Vector>, GraphError> {
    cfg.validate()?;
    Ok(match cfg.mode {
        DecodeMode::Online => online_decode(model, frames, cfg.lookahead),
        DecodeMode::Batch => batch_decode(model, frames, cfg.context, cfg.lookahead),
    })
}
