//! Shared finite-difference oracle for gradient tests.

// compiled into every test target; not every target uses every helper
#![allow(dead_code)]

use rnnlab_core::cells::ModelParams;
use rnnlab_core::graphs::DecodeConfig;
use rnnlab_core::tasks::LabeledSequence;
use rnnlab_core::training::loss_and_grads;

pub const FD_EPS: f64 = 1e-5;

/// Symmetric relative error with an absolute noise floor.
///
/// The `1e-5` in the denominator makes `rel < 1e-5` equivalent to
/// `|a-b| < 1e-10 + 1e-5 * (|a|+|b|)`: a central difference of an O(1)
/// loss carries ~1e-12 of f64 roundoff, so below 1e-10 absolute the
/// comparison would measure the probe, not the gradient.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs() + 1e-5)
}

/// Central finite difference of `f` at `x0`.
pub fn central_diff(f: impl FnMut(f64) -> f64, x0: f64) -> f64 {
    central_diff_eps(f, x0, FD_EPS)
}

pub fn central_diff_eps(mut f: impl FnMut(f64) -> f64, x0: f64, eps: f64) -> f64 {
    (f(x0 + eps) - f(x0 - eps)) / (2.0 * eps)
}

/// Checks every parameter entry of `loss_and_grads` against central finite
/// differences. Returns the worst relative error.
///
/// A multi-step loss evaluation accumulates f64 roundoff over thousands of
/// flops, so the difference step is wider than the single-op one: roundoff
/// in the quotient scales as 1/eps while truncation scales as eps^2, and
/// 5e-5 keeps both comfortably below the 1e-5 gate for near-zero entries.
pub fn model_grad_worst_error(
    model: &ModelParams,
    utt: &LabeledSequence,
    decode: &DecodeConfig,
) -> f64 {
    let (_, grads) = loss_and_grads(model, utt, decode).unwrap();
    let analytic: Vec<f64> = {
        let mut g = grads;
        g.mats_mut().iter().flat_map(|m| m.data().to_vec()).collect()
    };
    let mut worst = 0.0f64;
    let mut flat_idx = 0;
    let n_mats = model.mats().len();
    for mi in 0..n_mats {
        let entries = model.mats()[mi].data().len();
        for ei in 0..entries {
            let fd = central_diff_eps(
                |v| {
                    let mut probe = model.clone();
                    probe.mats_mut()[mi].data_mut()[ei] = v;
                    loss_and_grads(&probe, utt, decode).unwrap().0
                },
                model.mats()[mi].data()[ei],
                5e-5,
            );
            worst = worst.max(relative_error(fd, analytic[flat_idx]));
            flat_idx += 1;
        }
    }
    worst
}
