//! Relative-error metrics and training losses over complex arrays.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn frob_diff(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt()
}

/// `‖pred - label‖_F / ‖label‖_F`.
pub fn relative_error(pred: &[Complex64], label: &[Complex64]) -> Result<f64> {
    if pred.len() != label.len() {
        return Err(Error::DimensionMismatch { expected: label.len(), got: pred.len() });
    }
    let n = label.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
    if n == 0.0 {
        return Err(Error::Degenerate("label has zero norm".into()));
    }
    Ok(frob_diff(pred, label) / n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MreReport {
    pub per_sample: Vec<f64>,
    /// `Σ_q RE_q`.
    pub sum: f64,
    /// `Σ_q RE_q / Q`; the headline figure.
    pub mean: f64,
}

pub fn mean_relative_error<P, L>(preds: &[P], labels: &[L]) -> Result<MreReport>
where
    P: AsRef<[Complex64]> + Sync,
    L: AsRef<[Complex64]> + Sync,
{
    if preds.len() != labels.len() {
        return Err(Error::DimensionMismatch { expected: labels.len(), got: preds.len() });
    }
    if preds.is_empty() {
        return Err(Error::InvalidConfig("empty batch".into()));
    }
    let per_sample = preds
        .par_iter()
        .zip(labels.par_iter())
        .map(|(p, l)| relative_error(p.as_ref(), l.as_ref()))
        .collect::<Result<Vec<f64>>>()?;
    let sum: f64 = per_sample.iter().sum();
    let mean = sum / per_sample.len() as f64;
    Ok(MreReport { per_sample, sum, mean })
}

/// `(1/B) Σ_b ‖pred_b - label_b‖_F / M`. Despite the name the norm is not
/// squared.
pub fn mse_loss<P, L>(preds: &[P], labels: &[L], m: usize) -> Result<f64>
where
    P: AsRef<[Complex64]>,
    L: AsRef<[Complex64]>,
{
    if preds.is_empty() {
        return Err(Error::InvalidConfig("empty batch".into()));
    }
    if preds.len() != labels.len() {
        return Err(Error::DimensionMismatch { expected: labels.len(), got: preds.len() });
    }
    if m == 0 {
        return Err(Error::InvalidConfig("M must be positive".into()));
    }
    let mut total = 0.0;
    for (p, l) in preds.iter().zip(labels) {
        let (p, l) = (p.as_ref(), l.as_ref());
        if p.len() != l.len() {
            return Err(Error::DimensionMismatch { expected: l.len(), got: p.len() });
        }
        total += frob_diff(p, l) / m as f64;
    }
    Ok(total / preds.len() as f64)
}

/// `β1·loss_I + β2·loss_II` with `β1 = β2 = 1/2`.
pub fn total_loss(loss_i: f64, loss_ii: f64) -> f64 {
    0.5 * loss_i + 0.5 * loss_ii
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn relative_error_cases() {
        let label = vec![c(1.0, 2.0), c(-0.5, 0.0), c(0.0, 3.0)];
        assert_eq!(relative_error(&label, &label).unwrap(), 0.0);
        let doubled: Vec<_> = label.iter().map(|v| v * 2.0).collect();
        assert!((relative_error(&doubled, &label).unwrap() - 1.0).abs() < 1e-15);
        assert!(relative_error(&label, &[c(0.0, 0.0); 3]).is_err());
        assert!(relative_error(&label[..2], &label).is_err());
    }

    #[test]
    fn mre_sum_and_mean() {
        let label = vec![c(3.0, 4.0)];
        let p1 = vec![c(3.5, 4.0)]; // RE 0.1
        let p2 = vec![c(3.0, 5.5)]; // RE 0.3
        let r = mean_relative_error(&[p1, p2], &[label.clone(), label]).unwrap();
        assert!((r.mean - 0.2).abs() < 1e-15);
        assert!((r.sum - 0.4).abs() < 1e-15);
        assert_eq!(r.per_sample.len(), 2);
        assert!(mean_relative_error::<Vec<Complex64>, Vec<Complex64>>(&[], &[]).is_err());
    }

    #[test]
    fn mse_loss_hand_values() {
        let label = vec![c(0.0, 0.0); 4];
        let pred = vec![c(3.0, 0.0), c(0.0, 4.0), c(0.0, 0.0), c(0.0, 0.0)];
        // ‖·‖_F = 5, M = 4
        assert!((mse_loss(std::slice::from_ref(&pred), std::slice::from_ref(&label), 4).unwrap() - 1.25).abs() < 1e-15);
        // batch mean of 5/4 and 0
        assert!((mse_loss(&[pred, label.clone()], &[label.clone(), label.clone()], 4).unwrap() - 0.625).abs() < 1e-15);
        assert_eq!(mse_loss(std::slice::from_ref(&label), std::slice::from_ref(&label), 4).unwrap(), 0.0);
        assert!(mse_loss(std::slice::from_ref(&label), std::slice::from_ref(&label), 0).is_err());
        assert_eq!(total_loss(1.0, 3.0), 2.0);
    }
}
