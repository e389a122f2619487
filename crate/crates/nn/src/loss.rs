// SPDX-License-Identifier: Apache-2.0

//! Scalar forms of the training objectives.
//!
//! The [`Graph`](crate::Graph) carries differentiable versions of the same
//! quantities; these functions are the plain evaluations used for reporting
//! and as the reference the tape is checked against.

use crate::{NnError, Tensor};

fn check_tau(tau: f64) -> Result<(), NnError> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(NnError::Domain(format!("temperature must be positive, got {tau}")))
    }
}

fn lse(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// In-batch contrastive loss over a `k x k` similarity matrix whose
/// diagonal holds the matching (query, positive) pairs.
pub fn mnrl(sim: &Tensor, tau: f64) -> Result<f64, NnError> {
    check_tau(tau)?;
    let k = sim.rows();
    if k == 0 || sim.cols() != k {
        return Err(NnError::Shape(format!(
            "similarity matrix must be square and non-empty, got {}x{}",
            sim.rows(),
            sim.cols()
        )));
    }
    let total: f64 = (0..k)
        .map(|j| {
            let row: Vec<f64> = sim.row(j).iter().map(|s| s / tau).collect();
            lse(&row) - row[j]
        })
        .sum();
    Ok(total / k as f64)
}

/// `-log softmax([pos, negs...] / τ)[0]`.
pub fn infonce_listwise(pos: f64, negs: &[f64], tau: f64) -> Result<f64, NnError> {
    check_tau(tau)?;
    let mut logits = Vec::with_capacity(negs.len() + 1);
    logits.push(pos / tau);
    logits.extend(negs.iter().map(|n| n / tau));
    Ok(lse(&logits) - logits[0])
}

/// Mean of [`infonce_listwise`] over a set of positives, each with its own
/// candidate negatives.
pub fn infonce_mean(items: &[(f64, Vec<f64>)], tau: f64) -> Result<f64, NnError> {
    if items.is_empty() {
        return Err(NnError::EmptySet("positive set"));
    }
    let mut total = 0.0;
    for (pos, negs) in items {
        total += infonce_listwise(*pos, negs, tau)?;
    }
    Ok(total / items.len() as f64)
}

/// `(1 / |P||N|) Σ_p Σ_n max(0, γ − s_p + s_n)`.
pub fn margin_rank(pos: &[f64], neg: &[f64], gamma: f64) -> Result<f64, NnError> {
    if pos.is_empty() {
        return Err(NnError::EmptySet("positive scores"));
    }
    if neg.is_empty() {
        return Err(NnError::EmptySet("negative scores"));
    }
    let mut total = 0.0;
    for p in pos {
        for n in neg {
            total += (gamma - p + n).max(0.0);
        }
    }
    Ok(total / (pos.len() * neg.len()) as f64)
}

/// Cosine similarity of two equal-length vectors.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64, NnError> {
    if a.len() != b.len() {
        return Err(NnError::Shape(format!("cosine of lengths {} and {}", a.len(), b.len())));
    }
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(NnError::ZeroNorm(0));
    }
    Ok(dot(a, b) / (na * nb))
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Unit-norm copy of `v`; a zero vector is an error.
pub fn l2_normalize(v: &[f64]) -> Result<Vec<f64>, NnError> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 || !n.is_finite() {
        return Err(NnError::ZeroNorm(0));
    }
    Ok(v.iter().map(|x| x / n).collect())
}

/// Softmax of a slice.
pub fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mnrl_closed_forms() {
        assert_eq!(mnrl(&Tensor::row_vector(&[0.3]), 0.05).unwrap(), 0.0);
        let uniform = Tensor::filled(4, 4, 0.25);
        assert!((mnrl(&uniform, 0.05).unwrap() - 4f64.ln()).abs() < 1e-12);
        assert!(mnrl(&uniform, 0.0).is_err());
        assert!(mnrl(&Tensor::zeros(2, 3), 1.0).is_err());
    }

    #[test]
    fn infonce_closed_forms() {
        let v = infonce_listwise(0.4, &[0.4, 0.4, 0.4, 0.4], 0.07).unwrap();
        assert!((v - 5f64.ln()).abs() < 1e-12);
        // pos/τ − max neg/τ = 30
        let sat = infonce_listwise(2.1, &[0.0, -0.3], 0.07).unwrap();
        assert!(sat <= 1e-12);
        assert!(infonce_listwise(0.1, &[], -1.0).is_err());
    }

    #[test]
    fn margin_hand_cases() {
        assert_eq!(margin_rank(&[0.9], &[0.2], 0.5).unwrap(), 0.0);
        assert!((margin_rank(&[0.2], &[0.9], 0.5).unwrap() - 1.2).abs() < 1e-15);
        assert!((margin_rank(&[0.9, 0.1], &[0.5], 0.5).unwrap() - 0.5).abs() < 1e-15);
        assert!(matches!(margin_rank(&[], &[0.1], 0.5), Err(NnError::EmptySet(_))));
        assert!(matches!(margin_rank(&[0.1], &[], 0.5), Err(NnError::EmptySet(_))));
    }

    #[test]
    fn normalization_edges() {
        assert!(l2_normalize(&[0.0, 0.0]).is_err());
        let u = l2_normalize(&[3.0, 4.0]).unwrap();
        assert!((u[0] - 0.6).abs() < 1e-15 && (u[1] - 0.8).abs() < 1e-15);
        let s = softmax(&[1.0, 2.0, 3.0]);
        let shifted = softmax(&[101.0, 102.0, 103.0]);
        assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (a, b) in s.iter().zip(&shifted) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
