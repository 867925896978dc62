//! Dense linear algebra and elementary statistics.
//!
//! Everything here is a pure function of its inputs except [`Rng`], which is
//! single-owner mutable state.

mod matrix;
mod pca;
mod rng;

use alloc::vec::Vec;

pub use matrix::{dot, norm, Matrix};
pub use pca::{pca_fit, singular_value_decomposition, Pca};
pub use rng::Rng;

use crate::error::{config_err, Error, Result};

/// Added to cosine-similarity denominators so zero-norm vectors never divide
/// by zero.
pub const COSINE_EPS: f64 = 1e-12;

/// Numerically stable softmax (max-subtracted).
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(config_err!("softmax of an empty vector"));
    }
    Ok(softmax_unchecked(logits))
}

pub(crate) fn softmax_unchecked(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| libm::exp(z - max)).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `ln Σ exp(z)` evaluated without overflow.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + libm::log(values.iter().map(|&v| libm::exp(v - max)).sum::<f64>())
}

/// Natural-log Kullback–Leibler divergence `Σ p ln(p/q)` with `0·ln(0/q) = 0`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(config_err!("kl_divergence length mismatch: {} vs {}", p.len(), q.len()));
    }
    let mut kl = 0.0;
    for (c, (&pc, &qc)) in p.iter().zip(q).enumerate() {
        if pc == 0.0 {
            continue;
        }
        if qc <= 0.0 {
            return Err(Error::Domain(alloc::format!(
                "q[{c}] = {qc} while p[{c}] = {pc}: divergence is infinite"
            )));
        }
        kl += pc * libm::log(pc / qc);
    }
    // Rounding can leave a tiny negative value for p ≈ q.
    Ok(kl.max(0.0))
}

/// Cosine similarity with [`COSINE_EPS`] in the denominator.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / (norm(a) * norm(b) + COSINE_EPS)
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
