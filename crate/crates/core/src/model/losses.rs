//! Loss functions returning the value together with `dL/dlogits`.

use alloc::vec::Vec;

use super::ModelError;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// `log(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + libm::log1p(libm::exp(-x))
    } else {
        libm::log1p(libm::exp(x))
    }
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| libm::exp(v - m)).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::INFINITY {
        return m;
    }
    m + libm::log(z.iter().map(|v| libm::exp(v - m)).sum::<f64>())
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Summed per-label binary cross-entropy against soft targets in [0,1].
pub fn bce_with_logits(logits: &[f64], targets: &[f64]) -> Result<(f64, Vec<f64>), ModelError> {
    if logits.len() != targets.len() {
        return Err(ModelError::DimensionMismatch {
            expected: logits.len(),
            got: targets.len(),
        });
    }
    let loss = logits
        .iter()
        .zip(targets)
        .map(|(z, y)| softplus(*z) - y * z)
        .sum();
    let grad = logits
        .iter()
        .zip(targets)
        .map(|(z, y)| sigmoid(*z) - y)
        .collect();
    Ok((loss, grad))
}

/// Softmax cross-entropy for the class `target`.
pub fn softmax_ce(logits: &[f64], target: usize) -> Result<(f64, Vec<f64>), ModelError> {
    if target >= logits.len() {
        return Err(ModelError::TargetOutOfRange(target));
    }
    let loss = log_sum_exp(logits) - logits[target];
    let mut grad = softmax(logits);
    grad[target] -= 1.0;
    Ok((loss, grad))
}
