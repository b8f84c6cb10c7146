//! A self-contained laboratory for studying what recurrent frame classifiers
//! actually condition on.
//!
//! The crate implements two ways of running the same recurrent cell over a
//! sequence: an *online* graph (one chain, state carried from the first frame)
//! and a *batch* graph (an independent fixed-length chain per prediction).
//! The batch graph sees at most `kappa` frames, so it is a hard Markov window;
//! comparing the two, together with input-gradient probes, separates truly
//! recursive solutions from window-limited ones.
//!
//! Layout:
//! - [`kernel`]: dense linear algebra and the scalar nonlinearities, each with
//!   its vector-Jacobian-product companion.
//! - [`cells`]: vanilla RNN and LSTM steps, stacked layers, parameter init,
//!   and the hand-written backward pass.
//! - [`graphs`]: online / batch / consecutive-prediction chain layouts and the
//!   cached forward pass they share.
//! - [`training`]: BPTT loss and gradients, SGD with global-norm clipping, the
//!   epoch loop, and binary checkpoints.
//! - [`tasks`]: synthetic sequence generators with known Bayes-optimal
//!   accuracies, plus the dataset text format.
//! - [`analysis`]: frame error rate, input-gradient probes, and the empirical
//!   Markov-order estimate built on them.

pub mod analysis;
pub mod cells;
pub mod graphs;
pub mod kernel;
pub mod tasks;
pub mod training;

mod rng;

pub use rng::{derive_stream, seeded_rng};
