//! Small numerical helpers shared by proposals, models and the exact oracle.

use crate::error::{Error, Result};

/// Logits this far below the maximum contribute exactly zero probability.
pub const UNDERFLOW_GAP: f64 = 745.0;

/// Probabilities below this value are treated as exactly zero by proposals.
pub const FLUSH_THRESHOLD: f64 = 1e-300;

/// Softmax computed by shifting with the maximum logit.
///
/// Entries more than [`UNDERFLOW_GAP`] below the maximum are set to zero and
/// the remainder is renormalized.
pub fn stable_softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::Empty("softmax logits"));
    }
    if logits.iter().any(|l| !l.is_finite()) {
        return Err(Error::NonFinite("softmax logits"));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits
        .iter()
        .map(|&l| {
            let z = l - max;
            if z < -UNDERFLOW_GAP {
                0.0
            } else {
                z.exp()
            }
        })
        .collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= total);
    Ok(out)
}

/// In-place log-softmax over a slice of finite logits.
///
/// Entries whose probability falls below [`FLUSH_THRESHOLD`] become `-inf`.
pub(crate) fn log_softmax_in_place(logits: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for &l in logits.iter() {
        let z = l - max;
        if z >= -UNDERFLOW_GAP {
            total += z.exp();
        }
    }
    let log_norm = max + total.ln();
    let log_flush = FLUSH_THRESHOLD.ln();
    for l in logits.iter_mut() {
        let lp = *l - log_norm;
        *l = if lp < log_flush { f64::NEG_INFINITY } else { lp };
    }
}

pub fn logsumexp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `ln(sigmoid(x))`.
pub fn log_sigmoid(x: f64) -> f64 {
    -softplus(-x)
}
