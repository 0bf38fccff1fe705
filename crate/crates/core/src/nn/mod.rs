//! Dense-network core written out by hand: row-major matrices, affine
//! layers with Leaky ReLU, reverse-mode gradients, Adam, the step-decay
//! schedule and a straight-through quantizer.
//!
//! Matrix products go through one GEMM kernel whose accumulation order for an
//! output element depends only on the inner dimension, so the result for one
//! row never depends on the other rows in the batch. The per-agent
//! (shattered) evaluation relies on that to match team evaluation bit for
//! bit.

mod adam;
mod matrix;
mod mlp;
mod quant;
mod schedule;

pub use adam::Adam;
pub use matrix::Matrix;
pub use mlp::{Activation, Dense, Mlp, MlpCache, LEAKY_SLOPE};
pub use quant::Quantizer;
pub use schedule::LrSchedule;

/// Softmax cross-entropy of `logits` against class `target`, with the
/// gradient with respect to the logits.
pub fn softmax_cross_entropy(logits: &[f64], target: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = sum.ln() + max - logits[target];
    let grad = exps
        .iter()
        .enumerate()
        .map(|(k, &e)| e / sum - if k == target { 1.0 } else { 0.0 })
        .collect();
    (loss, grad)
}
