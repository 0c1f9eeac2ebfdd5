//! Losses: permutation-invariant reconstruction error over the two
//! output slots, and softmax cross-entropy for the evaluation classifier.

use crate::error::{check_dims, Result};

/// Which output-to-target assignment minimized the loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Assignment {
    Identity,
    Swap,
}

fn mse(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n
}

/// Permutation-invariant loss: the smaller of the two assignments of
/// outputs to targets, each scored by mean squared error summed over both
/// slots. Ties resolve to the identity assignment.
pub fn pit_loss(
    outputs: (&[f64], &[f64]),
    targets: (&[f64], &[f64]),
) -> Result<(f64, Assignment)> {
    check_dims(outputs.0.len(), outputs.1.len())?;
    check_dims(outputs.0.len(), targets.0.len())?;
    check_dims(outputs.0.len(), targets.1.len())?;
    let identity = mse(outputs.0, targets.0) + mse(outputs.1, targets.1);
    let swap = mse(outputs.0, targets.1) + mse(outputs.1, targets.0);
    if identity <= swap {
        Ok((identity, Assignment::Identity))
    } else {
        Ok((swap, Assignment::Swap))
    }
}

/// Gradients of `pit_loss` w.r.t. the two outputs, under the minimizing
/// assignment.
pub fn pit_loss_grad(
    outputs: (&[f64], &[f64]),
    targets: (&[f64], &[f64]),
) -> Result<(f64, Assignment, Vec<f64>, Vec<f64>)> {
    let (loss, assignment) = pit_loss(outputs, targets)?;
    let (t0, t1) = match assignment {
        Assignment::Identity => (targets.0, targets.1),
        Assignment::Swap => (targets.1, targets.0),
    };
    let n = outputs.0.len() as f64;
    let g0 = outputs.0.iter().zip(t0).map(|(o, t)| 2.0 * (o - t) / n).collect();
    let g1 = outputs.1.iter().zip(t1).map(|(o, t)| 2.0 * (o - t) / n).collect();
    Ok((loss, assignment, g0, g1))
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Cross-entropy of softmax(logits) against a class label, with the
/// gradient w.r.t. the logits.
pub fn cross_entropy_grad(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let probs = softmax(logits);
    let loss = -(probs[label].max(1e-300)).ln();
    let mut grad = probs;
    grad[label] -= 1.0;
    (loss, grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_match_gives_zero_identity() {
        let a = vec![1.0, 2.0];
        let b = vec![-1.0, 0.5];
        let (loss, assignment) = pit_loss((&a, &b), (&a, &b)).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(assignment, Assignment::Identity);
    }

    #[test]
    fn swapped_targets_give_zero_swap() {
        let a = vec![1.0, 2.0];
        let b = vec![-1.0, 0.5];
        let (loss, assignment) = pit_loss((&a, &b), (&b, &a)).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(assignment, Assignment::Swap);
    }

    #[test]
    fn tie_resolves_to_identity() {
        // outputs (a, a) vs targets (a, b): both assignments cost MSE(a,b).
        let a = vec![1.0, 1.0];
        let b = vec![0.0, 2.0];
        let (loss, assignment) = pit_loss((&a, &a), (&a, &b)).unwrap();
        assert_eq!(assignment, Assignment::Identity);
        assert!((loss - mse(&a, &b)).abs() <= 1e-15);
    }

    #[test]
    fn target_order_does_not_change_loss() {
        let o = (vec![0.1, 0.9], vec![0.4, -0.2]);
        let t = (vec![0.0, 1.0], vec![0.5, 0.0]);
        let (l1, _) = pit_loss((&o.0, &o.1), (&t.0, &t.1)).unwrap();
        let (l2, _) = pit_loss((&o.0, &o.1), (&t.1, &t.0)).unwrap();
        assert_eq!(l1, l2);
    }

    #[test]
    fn softmax_cross_entropy_gradient_sums_to_zero() {
        let logits = vec![1.5, -0.2, 0.7];
        let (loss, grad) = cross_entropy_grad(&logits, 2);
        assert!(loss > 0.0);
        assert!(grad.iter().sum::<f64>().abs() <= 1e-12);
    }
}
