//! Sequence losses. Cross entropy is in nats.

use std::fmt;
use std::str::FromStr;

use crate::error::{check_len, EunnError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    CrossEntropy,
    Mse,
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::CrossEntropy => "cross-entropy",
            LossKind::Mse => "mse",
        })
    }
}

impl FromStr for LossKind {
    type Err = EunnError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cross-entropy" | "ce" => Ok(LossKind::CrossEntropy),
            "mse" => Ok(LossKind::Mse),
            other => Err(EunnError::Config(format!("unknown loss '{other}'"))),
        }
    }
}

/// `logsumexp(logits) − logits[target]`, with `softmax − onehot` written to
/// `grad` scaled by `scale`.
pub(crate) fn softmax_xent(logits: &[f64], target: usize, scale: f64, grad: Option<&mut [f64]>) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|v| (v - max).exp()).sum();
    let lse = max + sum.ln();
    if let Some(g) = grad {
        for (k, (gk, v)) in g.iter_mut().zip(logits).enumerate() {
            let p = (v - lse).exp();
            *gk = scale * (p - if k == target { 1.0 } else { 0.0 });
        }
    }
    lse - logits[target]
}

/// Mean of squared errors over the output width, gradient scaled by `scale`.
pub(crate) fn squared_error(pred: &[f64], target: &[f64], scale: f64, grad: Option<&mut [f64]>) -> f64 {
    let w = pred.len() as f64;
    if let Some(g) = grad {
        for ((gk, p), t) in g.iter_mut().zip(pred).zip(target) {
            *gk = scale * 2.0 * (p - t) / w;
        }
    }
    pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / w
}

/// Mean cross entropy over masked positions. `logits` is `[position][class]`
/// flattened. An empty mask gives 0.
pub fn cross_entropy_sequence(
    logits: &[f64],
    n_classes: usize,
    targets: &[usize],
    mask: Option<&[bool]>,
) -> Result<f64> {
    check_len("logits", targets.len() * n_classes, logits.len())?;
    if let Some(m) = mask {
        check_len("mask", targets.len(), m.len())?;
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for (pos, &t) in targets.iter().enumerate() {
        if mask.is_some_and(|m| !m[pos]) {
            continue;
        }
        if t >= n_classes {
            return Err(EunnError::dim(format!("target {t} outside {n_classes} classes")));
        }
        total += softmax_xent(&logits[pos * n_classes..(pos + 1) * n_classes], t, 1.0, None);
        count += 1;
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

/// Mean over masked positions of the per-position mean squared error.
pub fn mse_sequence(pred: &[f64], target: &[f64], width: usize, mask: Option<&[bool]>) -> Result<f64> {
    check_len("mse target", pred.len(), target.len())?;
    if width == 0 || pred.len() % width != 0 {
        return Err(EunnError::dim(format!("mse width {width} does not divide {}", pred.len())));
    }
    let positions = pred.len() / width;
    if let Some(m) = mask {
        check_len("mask", positions, m.len())?;
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for pos in 0..positions {
        if mask.is_some_and(|m| !m[pos]) {
            continue;
        }
        let r = pos * width..(pos + 1) * width;
        total += squared_error(&pred[r.clone()], &target[r], 1.0, None);
        count += 1;
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Rng;

    #[test]
    fn uniform_logits_give_ln_classes() {
        let ce = cross_entropy_sequence(&[0.3; 8], 8, &[5], None).unwrap();
        assert!((ce - 8f64.ln()).abs() < 1e-14);
        assert!((ce - 2.0794).abs() < 1e-4);
    }

    #[test]
    fn confident_prediction_goes_to_zero() {
        let mut logits = vec![0.0; 4];
        logits[2] = 50.0;
        let ce = cross_entropy_sequence(&logits, 4, &[2], None).unwrap();
        assert!(ce < 1e-20);
    }

    #[test]
    fn empty_mask_is_zero() {
        let ce = cross_entropy_sequence(&[1.0, 2.0], 2, &[0], Some(&[false])).unwrap();
        assert_eq!(ce, 0.0);
        assert_eq!(mse_sequence(&[1.0], &[3.0], 1, Some(&[false])).unwrap(), 0.0);
    }

    #[test]
    fn matches_direct_summation() {
        let mut rng = Rng::new(3);
        let (positions, k) = (12, 5);
        let logits: Vec<f64> = (0..positions * k).map(|_| rng.uniform(-4.0, 4.0)).collect();
        let targets: Vec<usize> = (0..positions).map(|_| rng.below(k)).collect();
        let mask: Vec<bool> = (0..positions).map(|p| p % 3 != 0).collect();
        let mut direct = 0.0;
        let mut count = 0.0;
        for p in 0..positions {
            if !mask[p] {
                continue;
            }
            let row = &logits[p * k..(p + 1) * k];
            let z: f64 = row.iter().map(|v| v.exp()).sum();
            direct += -(row[targets[p]].exp() / z).ln();
            count += 1.0;
        }
        direct /= count;
        let ce = cross_entropy_sequence(&logits, k, &targets, Some(&mask)).unwrap();
        assert!((ce - direct).abs() < 1e-12);
    }

    #[test]
    fn mse_value() {
        let v = mse_sequence(&[1.0, 2.0, 0.0, 0.0], &[0.0, 0.0, 0.0, 1.0], 2, None).unwrap();
        // (1 + 4)/2 and (0 + 1)/2, averaged
        assert!((v - 1.5).abs() < 1e-15);
    }

    #[test]
    fn xent_gradient_sums_to_zero() {
        let mut g = vec![0.0; 6];
        softmax_xent(&[0.1, -2.0, 3.0, 0.5, 0.0, 1.0], 3, 1.0, Some(&mut g));
        assert!(g.iter().sum::<f64>().abs() < 1e-15);
        assert!(g[3] < 0.0);
    }

    #[test]
    fn target_out_of_range() {
        assert!(cross_entropy_sequence(&[0.0, 0.0], 2, &[2], None).is_err());
    }
}
