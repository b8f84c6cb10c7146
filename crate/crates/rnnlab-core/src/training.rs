//! BPTT loss/gradient computation, SGD with global-norm clipping, the epoch
//! loop with dev-FER model selection, and binary checkpoints.

use crate::analysis::dataset_fer;
use crate::cells::{
    init_params, CellKind, CellParams, LstmCellParams, ModelGrads, ModelParams, ModelSpec,
    RnnCellParams,
};
use crate::graphs::{
    chain_backward, chain_forward_cached, consecutive_chains, online_layout, DecodeConfig,
    DecodeMode, GraphError, PaddedSequence,
};
use crate::kernel::{global_norm_clip, softmax_xent, Matrix, Vector};
use crate::rng::{derive_stream, seeded_rng};
use crate::tasks::{Dataset, LabeledSequence};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use thiserror::Error;

/// Chains per parallel work unit. Partial gradients are reduced in chunk
/// order, so results do not depend on the number of worker threads.
const CHAIN_CHUNK: usize = 16;

#[derive(Error, Debug)]
pub enum TrainError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("label {label} >= {classes} classes at sequence {seq}, frame {frame}")]
    LabelOutOfRange { label: usize, classes: usize, seq: usize, frame: usize },
    #[error("dataset frame dim {data} does not match model input dim {model}")]
    DimMismatch { data: usize, model: usize },
    #[error("dataset has {data} classes but the model predicts {model}")]
    ClassMismatch { data: usize, model: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("checkpoint {path}: {msg}")]
    Checkpoint { path: String, msg: String },
}

/// Optimizer and schedule settings. The defaults are vanilla SGD with step
/// size 0.05 and gradients clipped to global norm 5 for 20 epochs.
#[derive(Clone, Copy, Debug)]
pub struct TrainConfig {
    pub decode: DecodeConfig,
    pub step_size: f64,
    pub clip_norm: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            decode: DecodeConfig::online(1),
            step_size: 0.05,
            clip_norm: 5.0,
            epochs: 20,
            seed: 0,
        }
    }
}

/// Per-epoch record: mean training loss (mean over utterances of each
/// utterance's per-prediction mean) and dev frame error rate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    pub train_loss: f64,
    pub dev_fer: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
    /// 0-based index of the selected epoch: minimum dev FER, earliest wins ties.
    pub best_epoch: usize,
    /// Updates dropped because their gradients contained non-finite values.
    pub skipped_updates: usize,
}

impl TrainHistory {
    /// Tab-separated table: epoch (1-based), mean train loss, dev FER.
    pub fn write_tsv(&self, path: &Path) -> std::io::Result<()> {
        let mut out = BufWriter::new(fs::File::create(path)?);
        writeln!(out, "epoch\ttrain_loss\tdev_fer")?;
        for (i, e) in self.epochs.iter().enumerate() {
            writeln!(out, "{}\t{:.16e}\t{:.16e}", i + 1, e.train_loss, e.dev_fer)?;
        }
        out.flush()
    }
}

fn check_labels(ds: &Dataset, classes: usize) -> Result<(), TrainError> {
    for (si, seq) in ds.seqs.iter().enumerate() {
        for (fi, &label) in seq.labels.iter().enumerate() {
            if label >= classes {
                return Err(TrainError::LabelOutOfRange { label, classes, seq: si, frame: fi });
            }
        }
    }
    Ok(())
}

/// Forward + backward over one chain; adds unscaled cross-entropy gradients
/// into `grads` and returns the summed loss and prediction count.
fn chain_loss_and_grads(
    model: &ModelParams,
    seq: &PaddedSequence,
    layout: &crate::graphs::ChainLayout,
    labels: &[usize],
    inv_total: f64,
    grads: &mut ModelGrads,
) -> (f64, usize) {
    let fwd = chain_forward_cached(model, seq, layout);
    let mut loss = 0.0;
    let dlogits: Vec<Vector> = fwd
        .logits
        .iter()
        .map(|(frame, logits)| {
            let (l, _, mut grad) = softmax_xent(logits, labels[*frame]);
            loss += l;
            for g in grad.iter_mut() {
                *g *= inv_total;
            }
            grad
        })
        .collect();
    let n = fwd.logits.len();
    chain_backward(model, &fwd, &dlogits, Some(grads), None);
    (loss, n)
}

/// Mean per-prediction cross entropy of one utterance under a decode config,
/// with the exact gradient of that mean.
///
/// Online mode emits one prediction per frame from a single chain; batch mode
/// sums gradients over all of the utterance's chains (computed in parallel,
/// reduced in a fixed order).
pub fn loss_and_grads(
    model: &ModelParams,
    utt: &LabeledSequence,
    decode: &DecodeConfig,
) -> Result<(f64, ModelGrads), TrainError> {
    decode.validate()?;
    let t_len = utt.frames.len();
    assert!(t_len > 0, "utterance must be non-empty");
    for (fi, &label) in utt.labels.iter().enumerate() {
        if label >= model.spec.classes {
            return Err(TrainError::LabelOutOfRange {
                label,
                classes: model.spec.classes,
                seq: 0,
                frame: fi,
            });
        }
    }
    let seq = PaddedSequence::new(&utt.frames, model.spec.input_dim);
    match decode.mode {
        DecodeMode::Online => {
            let layout = online_layout(t_len, decode.lookahead);
            let mut grads = ModelGrads::zeros_like(model);
            let inv = 1.0 / t_len as f64;
            let (loss, n) = chain_loss_and_grads(model, &seq, &layout, &utt.labels, inv, &mut grads);
            Ok((loss / n as f64, grads))
        }
        DecodeMode::Batch => {
            let chains = consecutive_chains(t_len, decode.context, decode.lookahead, decode.consecutive)?;
            let total: usize = chains.iter().map(|c| c.preds.len()).sum();
            let inv = 1.0 / total as f64;
            let partials: Vec<(f64, ModelGrads)> = chains
                .par_chunks(CHAIN_CHUNK)
                .map(|chunk| {
                    let mut grads = ModelGrads::zeros_like(model);
                    let mut loss = 0.0;
                    for layout in chunk {
                        let (l, _) = chain_loss_and_grads(model, &seq, layout, &utt.labels, inv, &mut grads);
                        loss += l;
                    }
                    (loss, grads)
                })
                .collect();
            let mut grads = ModelGrads::zeros_like(model);
            let mut loss = 0.0;
            for (l, g) in &partials {
                loss += l;
                grads.add_assign(g);
            }
            Ok((loss / total as f64, grads))
        }
    }
}

/// What one SGD step did.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SgdOutcome {
    pub applied: bool,
    pub clip_scale: f64,
}

/// Clips the gradients to `clip` global norm and applies one SGD step.
/// Updates with any non-finite gradient entry are skipped, not applied.
pub fn sgd_update(model: &mut ModelParams, mut grads: ModelGrads, step: f64, clip: f64) -> SgdOutcome {
    if !grads.is_finite() {
        return SgdOutcome { applied: false, clip_scale: 1.0 };
    }
    let clip_scale = global_norm_clip(&mut grads.mats_mut(), clip);
    for ((u, v), cell) in grads.cells.iter().zip(model.cells.iter_mut()) {
        match cell {
            CellParams::Vanilla(p) => {
                axpy_mat(&mut p.u, -step, u);
                axpy_mat(&mut p.v, -step, v);
            }
            CellParams::Lstm(p) => {
                axpy_mat(&mut p.u, -step, u);
                axpy_mat(&mut p.v, -step, v);
            }
        }
    }
    axpy_mat(&mut model.w_out, -step, &grads.w_out);
    SgdOutcome { applied: true, clip_scale }
}

fn axpy_mat(dst: &mut Matrix, a: f64, src: &Matrix) {
    for (d, s) in dst.data_mut().iter_mut().zip(src.data()) {
        *d += a * s;
    }
}

/// Trains a fresh model: one SGD update per utterance, utterances shuffled
/// each epoch with a seed-derived order, dev FER measured after every epoch
/// under the training decode config. Returns the epoch checkpoint with the
/// lowest dev FER.
pub fn train(
    spec: &ModelSpec,
    cfg: &TrainConfig,
    train_set: &Dataset,
    dev_set: &Dataset,
) -> Result<(ModelParams, TrainHistory), TrainError> {
    cfg.decode.validate()?;
    if train_set.seqs.is_empty() || dev_set.seqs.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    for ds in [train_set, dev_set] {
        if ds.dim != spec.input_dim {
            return Err(TrainError::DimMismatch { data: ds.dim, model: spec.input_dim });
        }
        if ds.classes != spec.classes {
            return Err(TrainError::ClassMismatch { data: ds.classes, model: spec.classes });
        }
        check_labels(ds, spec.classes)?;
    }
    assert!(cfg.epochs >= 1, "epochs must be >= 1");
    assert!(cfg.step_size > 0.0 && cfg.clip_norm > 0.0);

    let mut model = init_params(spec, derive_stream(cfg.seed, 0));
    let mut history = TrainHistory { epochs: Vec::new(), best_epoch: 0, skipped_updates: 0 };
    let mut best: Option<(f64, ModelParams)> = None;
    let mut order: Vec<usize> = (0..train_set.seqs.len()).collect();

    for epoch in 0..cfg.epochs {
        let mut rng = seeded_rng(derive_stream(cfg.seed, 1 + epoch as u64));
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for &i in &order {
            let (loss, grads) = loss_and_grads(&model, &train_set.seqs[i], &cfg.decode)?;
            loss_sum += loss;
            let outcome = sgd_update(&mut model, grads, cfg.step_size, cfg.clip_norm);
            if !outcome.applied {
                history.skipped_updates += 1;
            }
        }
        let dev_fer = dataset_fer(&model, dev_set, &cfg.decode)?;
        history.epochs.push(EpochStats {
            train_loss: loss_sum / train_set.seqs.len() as f64,
            dev_fer,
        });
        let better = match &best {
            None => true,
            Some((fer, _)) => dev_fer < *fer,
        };
        if better {
            best = Some((dev_fer, model.clone()));
            history.best_epoch = epoch;
        }
    }
    Ok((best.unwrap().1, history))
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"RNNLABCP";
const CHECKPOINT_VERSION: u32 = 1;

/// Binary checkpoint: magic `RNNLABCP`, u32 version, u8 cell kind
/// (0 vanilla, 1 LSTM), u32 layers/hidden/input dim/classes, then every
/// matrix (layer by layer U, V, then W_out) as u32 rows, u32 cols and
/// row-major f64 data. All integers and floats little-endian.
pub fn save_checkpoint(model: &ModelParams, path: &Path) -> Result<(), TrainError> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    out.write_all(CHECKPOINT_MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    let kind: u8 = match model.spec.cell {
        CellKind::Vanilla => 0,
        CellKind::Lstm => 1,
    };
    out.write_all(&[kind])?;
    for dim in [model.spec.layers, model.spec.hidden, model.spec.input_dim, model.spec.classes] {
        out.write_all(&(dim as u32).to_le_bytes())?;
    }
    for m in model.mats() {
        out.write_all(&(m.rows() as u32).to_le_bytes())?;
        out.write_all(&(m.cols() as u32).to_le_bytes())?;
        for v in m.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams, TrainError> {
    let name = path.display().to_string();
    let fail = |msg: String| TrainError::Checkpoint { path: name.clone(), msg };
    let bytes = fs::read(path)?;
    let mut at = 0usize;
    let mut take = |n: usize| -> Result<&[u8], TrainError> {
        if at + n > bytes.len() {
            return Err(TrainError::Checkpoint {
                path: name.clone(),
                msg: format!("truncated at byte {at}, wanted {n} more"),
            });
        }
        let s = &bytes[at..at + n];
        at += n;
        Ok(s)
    };
    let u32_at = |s: &[u8]| u32::from_le_bytes(s.try_into().unwrap()) as usize;

    if take(8)? != CHECKPOINT_MAGIC {
        return Err(fail("bad magic, not a checkpoint file".into()));
    }
    let version = u32_at(take(4)?);
    if version != CHECKPOINT_VERSION as usize {
        return Err(fail(format!("unsupported version {version}")));
    }
    let cell = match take(1)?[0] {
        0 => CellKind::Vanilla,
        1 => CellKind::Lstm,
        k => return Err(fail(format!("unknown cell kind {k}"))),
    };
    let layers = u32_at(take(4)?);
    let hidden = u32_at(take(4)?);
    let input_dim = u32_at(take(4)?);
    let classes = u32_at(take(4)?);
    if layers < 1 || hidden < 1 || input_dim < 1 || classes < 1 {
        return Err(fail("dimensions must all be >= 1".into()));
    }
    let spec = ModelSpec { cell, layers, hidden, input_dim, classes };

    let gate_rows = match cell {
        CellKind::Vanilla => hidden,
        CellKind::Lstm => 4 * hidden,
    };
    let mut read_matrix = |rows: usize, cols: usize| -> Result<Matrix, TrainError> {
        let r = u32_at(take(4)?);
        let c = u32_at(take(4)?);
        if (r, c) != (rows, cols) {
            return Err(TrainError::Checkpoint {
                path: name.clone(),
                msg: format!("matrix is {r}x{c}, expected {rows}x{cols}"),
            });
        }
        let raw = take(rows * cols * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Ok(Matrix::from_vec(rows, cols, data))
    };

    let mut cells = Vec::with_capacity(layers);
    for layer in 0..layers {
        let d_in = if layer == 0 { input_dim } else { hidden };
        let u = read_matrix(gate_rows, d_in)?;
        let v = read_matrix(gate_rows, hidden)?;
        cells.push(match cell {
            CellKind::Vanilla => CellParams::Vanilla(RnnCellParams { u, v }),
            CellKind::Lstm => CellParams::Lstm(LstmCellParams { u, v }),
        });
    }
    let w_out = read_matrix(classes, hidden)?;
    if at != bytes.len() {
        return Err(fail(format!("{} trailing bytes after the last matrix", bytes.len() - at)));
    }
    Ok(ModelParams { spec, cells, w_out })
}
