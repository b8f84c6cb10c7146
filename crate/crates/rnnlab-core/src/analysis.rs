//! Evaluation and diagnostics: frame error rate, the train/eval mismatch
//! matrix, and input-gradient probes.
//!
//! The probes measure ‖∂ℓ_t/∂x_{t−Δ}‖₂, the 2-norm of the per-frame loss
//! gradient with respect to an input frame Δ steps back. Under the batch
//! graph these are exactly zero outside the chain; under the online graph
//! they reveal how much history a trained model actually uses, which is the
//! empirical side of the Markov-vs-recursive distinction.

use crate::cells::ModelParams;
use crate::graphs::{
    batch_decode, chain_backward, chain_forward_cached, online_decode, ChainLayout, DecodeConfig,
    DecodeMode, GraphError, PaddedSequence,
};
use crate::kernel::{softmax_xent, Vector};
use crate::tasks::{Dataset, LabeledSequence};
use rayon::prelude::*;

/// Index of the largest entry, lowest index on ties.
pub fn argmax(v: &[f64]) -> usize {
    assert!(!v.is_empty(), "argmax of an empty vector");
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Percentage of positions where prediction and label disagree.
pub fn frame_error_rate(predictions: &[usize], labels: &[usize]) -> f64 {
    assert_eq!(predictions.len(), labels.len(), "prediction/label length mismatch");
    assert!(!predictions.is_empty(), "frame error rate of an empty sequence");
    let wrong = predictions.iter().zip(labels).filter(|(p, l)| p != l).count();
    100.0 * wrong as f64 / predictions.len() as f64
}

fn decode_frames(model: &ModelParams, frames: &[Vector], cfg: &DecodeConfig) -> Vec<Vector> {
    match cfg.mode {
        DecodeMode::Online => online_decode(model, frames, cfg.lookahead),
        DecodeMode::Batch => batch_decode(model, frames, cfg.context, cfg.lookahead),
    }
}

/// Pooled frame error rate of a model over a dataset: total mismatches over
/// total frames, all sequences weighted by length.
pub fn dataset_fer(model: &ModelParams, ds: &Dataset, cfg: &DecodeConfig) -> Result<f64, GraphError> {
    cfg.validate()?;
    let (wrong, total) = ds
        .seqs
        .par_iter()
        .map(|seq| {
            let logits = decode_frames(model, &seq.frames, cfg);
            let wrong = logits
                .iter()
                .zip(&seq.labels)
                .filter(|(lg, &label)| argmax(lg) != label)
                .count();
            (wrong, seq.labels.len())
        })
        .reduce(|| (0usize, 0usize), |a, b| (a.0 + b.0, a.1 + b.1));
    assert!(total > 0, "dataset has no frames");
    Ok(100.0 * wrong as f64 / total as f64)
}

/// One cell of the train-config × eval-config FER table. `fer` carries an
/// error token instead of a number when the pairing is incompatible.
#[derive(Clone, Debug)]
pub struct MismatchCell {
    pub train: String,
    pub eval: String,
    pub fer: Result<f64, String>,
}

/// Evaluates every model under every decode config on one dataset.
/// Incompatible pairings produce an error cell; the sweep continues.
pub fn mismatch_matrix(
    models: &[(String, ModelParams)],
    cfgs: &[(String, DecodeConfig)],
    ds: &Dataset,
) -> Vec<MismatchCell> {
    let mut out = Vec::with_capacity(models.len() * cfgs.len());
    for (mname, model) in models {
        for (cname, cfg) in cfgs {
            let fer = if model.spec.input_dim != ds.dim {
                Err(format!("model input dim {} != data dim {}", model.spec.input_dim, ds.dim))
            } else if model.spec.classes != ds.classes {
                Err(format!("model classes {} != data classes {}", model.spec.classes, ds.classes))
            } else {
                dataset_fer(model, ds, cfg).map_err(|e| e.to_string())
            };
            out.push(MismatchCell { train: mname.clone(), eval: cname.clone(), fer });
        }
    }
    out
}

/// The chain that produces the prediction for frame `t` under a decode
/// config. Online keeps the full history up to the prediction's hidden
/// vector; batch is the κ-step chain anchored at `t`.
fn predicting_layout(t_len: usize, cfg: &DecodeConfig, t: usize) -> ChainLayout {
    let l = cfg.lookahead as isize;
    let end = t as isize + l - 1;
    let start = match cfg.mode {
        DecodeMode::Online => 0,
        DecodeMode::Batch => end - cfg.context as isize + 1,
    };
    let _ = t_len;
    ChainLayout { start, end, preds: vec![(t, end)] }
}

/// Exact gradients of ℓ_t with respect to every input frame of the sequence:
/// `result[p] = ∂ℓ_t/∂x_p`. Frames outside the prediction's chain are zero
/// vectors by construction.
pub fn input_gradients_at(
    model: &ModelParams,
    utt: &LabeledSequence,
    cfg: &DecodeConfig,
    t: usize,
) -> Vec<Vector> {
    let t_len = utt.frames.len();
    assert!(t < t_len);
    let seq = PaddedSequence::new(&utt.frames, model.spec.input_dim);
    let layout = predicting_layout(t_len, cfg, t);
    let fwd = chain_forward_cached(model, &seq, &layout);
    let (_, logits) = &fwd.logits[0];
    let (_, _, dlogits) = softmax_xent(logits, utt.labels[t]);
    let mut per_step: Vec<Vector> = vec![vec![0.0; model.spec.input_dim]; layout.len()];
    chain_backward(model, &fwd, &[dlogits], None, Some(&mut per_step));
    let mut out = vec![vec![0.0; model.spec.input_dim]; t_len];
    for (s, g) in per_step.into_iter().enumerate() {
        let pos = layout.start + s as isize;
        if pos >= 0 && (pos as usize) < t_len {
            out[pos as usize] = g;
        }
    }
    out
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Sampled prediction times for a sequence: every `stride`-th frame.
fn sample_grid(t_len: usize, stride: usize) -> impl Iterator<Item = usize> {
    assert!(stride >= 1);
    (0..t_len).step_by(stride)
}

/// Norms of per-frame loss gradients with respect to the frame Δ steps
/// before the prediction, plus summary statistics and, after
/// [`gradient_histogram`], fixed-edge bin counts.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientReport {
    pub delta: usize,
    /// One norm per retained sample, in (sequence, time) order.
    pub norms: Vec<f64>,
    /// Sampled prediction times dropped because t−Δ fell before the sequence.
    pub skipped: usize,
    /// `bins+1` edges; bin 0 is `[0, edges[1])` and catches exact zeros.
    pub bin_edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub median: f64,
    pub max: f64,
}

impl GradientReport {
    /// Tab-separated histogram: `#` summary lines (delta, samples, skipped,
    /// median, max), then one row per bin with its edges, count and
    /// log10(count+1). Requires the fixed-edge bins, so the report must come
    /// from [`gradient_histogram`].
    pub fn write_tsv(&self, path: &std::path::Path) -> std::io::Result<()> {
        assert_eq!(self.bin_edges.len(), self.counts.len() + 1, "report has no histogram bins");
        let mut out = String::new();
        out.push_str(&format!("# delta\t{}\n", self.delta));
        out.push_str(&format!("# samples\t{}\n# skipped\t{}\n", self.norms.len(), self.skipped));
        out.push_str(&format!("# median\t{:.16e}\n# max\t{:.16e}\n", self.median, self.max));
        out.push_str("bin_lo\tbin_hi\tcount\tlog10_count_plus_1\n");
        for (i, &c) in self.counts.iter().enumerate() {
            out.push_str(&format!(
                "{:.16e}\t{:.16e}\t{}\t{:.16e}\n",
                self.bin_edges[i],
                self.bin_edges[i + 1],
                c,
                ((c + 1) as f64).log10(),
            ));
        }
        std::fs::write(path, out)
    }
}

fn median_of(sorted: &[f64]) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

fn summarize(delta: usize, norms: Vec<f64>, skipped: usize) -> GradientReport {
    let mut sorted = norms.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = median_of(&sorted);
    let max = sorted.last().copied().unwrap_or(0.0);
    GradientReport { delta, norms, skipped, bin_edges: Vec::new(), counts: Vec::new(), median, max }
}

/// Probes one utterance: for sampled prediction times t, the norm of
/// ∂ℓ_t/∂x_{t−Δ} through the given decode graph. Samples with t−Δ before
/// the first frame are skipped and counted.
pub fn input_gradient_norms(
    model: &ModelParams,
    utt: &LabeledSequence,
    cfg: &DecodeConfig,
    delta: usize,
    stride: usize,
) -> GradientReport {
    assert!(delta >= 1, "delta must be >= 1");
    let mut norms = Vec::new();
    let mut skipped = 0;
    for t in sample_grid(utt.frames.len(), stride) {
        if t < delta {
            skipped += 1;
            continue;
        }
        let grads = input_gradients_at(model, utt, cfg, t);
        norms.push(norm2(&grads[t - delta]));
    }
    summarize(delta, norms, skipped)
}

/// Histogram edges: bin 0 starts at exactly 0, the rest are log10-spaced
/// between the smallest positive and the largest norm.
fn histogram(norms: &[f64], bins: usize) -> (Vec<f64>, Vec<usize>) {
    assert!(bins >= 2, "need at least 2 bins");
    let hi = norms.iter().cloned().fold(0.0f64, f64::max);
    let lo = norms.iter().cloned().filter(|&v| v > 0.0).fold(f64::INFINITY, f64::min);
    let (e0, e1) = if hi == 0.0 {
        (-12.0, 0.0)
    } else {
        let e0 = lo.log10();
        let e1 = hi.log10();
        if e1 - e0 < 1e-12 {
            (e0, e0 + 1.0)
        } else {
            (e0, e1)
        }
    };
    let mut edges = Vec::with_capacity(bins + 1);
    edges.push(0.0);
    for i in 0..bins {
        edges.push(10f64.powf(e0 + (e1 - e0) * i as f64 / (bins - 1) as f64));
    }
    let mut counts = vec![0usize; bins];
    for &v in norms {
        // largest bin whose lower edge is <= v, clamped to the top bin
        let mut b = match edges[1..].binary_search_by(|e| e.partial_cmp(&v).unwrap()) {
            Ok(i) => i + 1,
            Err(i) => i,
        };
        b = b.min(bins - 1);
        counts[b] += 1;
    }
    (edges, counts)
}

/// Aggregates [`input_gradient_norms`] over a dataset and bins the result.
pub fn gradient_histogram(
    model: &ModelParams,
    ds: &Dataset,
    cfg: &DecodeConfig,
    delta: usize,
    stride: usize,
    bins: usize,
) -> GradientReport {
    let per_seq: Vec<GradientReport> = ds
        .seqs
        .par_iter()
        .map(|utt| input_gradient_norms(model, utt, cfg, delta, stride))
        .collect();
    let mut norms = Vec::new();
    let mut skipped = 0;
    for r in per_seq {
        norms.extend(r.norms);
        skipped += r.skipped;
    }
    let (bin_edges, counts) = histogram(&norms, bins);
    let mut report = summarize(delta, norms, skipped);
    report.bin_edges = bin_edges;
    report.counts = counts;
    report
}

/// Median ‖∂ℓ_t/∂x_{t−Δ}‖ per Δ and the smallest Δ at which the curve
/// crosses the threshold.
#[derive(Clone, Debug, PartialEq)]
pub struct MarkovOrderReport {
    /// `medians[i]` is the median norm at Δ = i+1.
    pub medians: Vec<f64>,
    /// Threshold actually used (the given ε, or 1e−6 × median at Δ=1).
    pub epsilon: f64,
    /// Smallest Δ with median ≤ ε; `None` when no Δ ≤ Δ_max qualifies.
    pub order: Option<usize>,
}

/// Estimates how much history the model's predictions actually depend on, by
/// scanning gradient-norm medians over Δ = 1..=Δ_max through the online
/// graph (lookahead 1). A κ-th order Markov function must show medians of
/// exactly 0 for all Δ ≥ κ; the reported order is the first Δ whose median
/// is at or below ε.
pub fn empirical_markov_order(
    model: &ModelParams,
    ds: &Dataset,
    epsilon: Option<f64>,
    delta_max: usize,
    stride: usize,
) -> MarkovOrderReport {
    assert!(delta_max >= 1);
    let cfg = DecodeConfig::online(1);
    // one backward per sampled prediction yields all offsets at once
    let per_seq: Vec<Vec<Vec<f64>>> = ds
        .seqs
        .par_iter()
        .map(|utt| {
            let mut rows: Vec<Vec<f64>> = vec![Vec::new(); delta_max];
            for t in sample_grid(utt.frames.len(), stride) {
                if t < 1 {
                    continue;
                }
                let grads = input_gradients_at(model, utt, &cfg, t);
                for delta in 1..=delta_max.min(t) {
                    rows[delta - 1].push(norm2(&grads[t - delta]));
                }
            }
            rows
        })
        .collect();
    let mut medians = Vec::with_capacity(delta_max);
    for d in 0..delta_max {
        let mut all: Vec<f64> = per_seq.iter().flat_map(|rows| rows[d].iter().copied()).collect();
        all.sort_by(|a, b| a.partial_cmp(b).unwrap());
        medians.push(median_of(&all));
    }
    let epsilon = epsilon.unwrap_or(1e-6 * medians[0]);
    let order = (1..=delta_max).find(|&d| medians[d - 1] <= epsilon);
    MarkovOrderReport { medians, epsilon, order }
}
