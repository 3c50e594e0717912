//! Per-pixel softmax cross-entropy against label masks, with an ignore code.

use crate::raster::LabelMask;

use super::{Tensor4, TensorError};

/// Loss value plus everything the backward pass needs.
#[derive(Debug, Clone)]
pub struct CrossEntropy {
    /// Mean negative log-likelihood over non-ignored pixels (0 if none).
    pub loss: f64,
    /// Number of pixels that contributed.
    pub valid: usize,
    /// Softmax probabilities, same shape as the logits.
    pub probs: Tensor4,
}

fn check_targets(
    logits: &Tensor4,
    targets: &[LabelMask],
    ignore_code: u8,
) -> Result<(), TensorError> {
    let [batch, classes, h, w] = logits.dims();
    if classes < 2 {
        return Err(TensorError::Shape(format!(
            "need at least 2 classes, got {}",
            classes
        )));
    }
    if targets.len() != batch {
        return Err(TensorError::Shape(format!(
            "{} target masks for batch of {}",
            targets.len(),
            batch
        )));
    }
    for (i, mask) in targets.iter().enumerate() {
        if mask.width != w || mask.height != h {
            return Err(TensorError::Shape(format!(
                "mask {} is {}x{}, logits are {}x{}",
                i, mask.width, mask.height, w, h
            )));
        }
        if let Some(&bad) = mask
            .data
            .iter()
            .find(|&&c| c != ignore_code && c as usize >= classes)
        {
            return Err(TensorError::Value(format!(
                "label code {} outside 0..{}",
                bad, classes
            )));
        }
    }
    Ok(())
}

pub fn softmax_cross_entropy(
    logits: &Tensor4,
    targets: &[LabelMask],
    ignore_code: u8,
) -> Result<CrossEntropy, TensorError> {
    check_targets(logits, targets, ignore_code)?;
    let [batch, classes, h, w] = logits.dims();

    let mut probs = Tensor4::zeros(logits.dims());
    let mut loss = 0.0;
    let mut valid = 0usize;
    for n in 0..batch {
        for y in 0..h {
            for x in 0..w {
                let mut max = f64::NEG_INFINITY;
                for k in 0..classes {
                    max = max.max(logits.at(n, k, y, x));
                }
                let mut denom = 0.0;
                for k in 0..classes {
                    let e = (logits.at(n, k, y, x) - max).exp();
                    *probs.at_mut(n, k, y, x) = e;
                    denom += e;
                }
                for k in 0..classes {
                    *probs.at_mut(n, k, y, x) /= denom;
                }
                let code = targets[n].at(x, y);
                if code != ignore_code {
                    loss -= probs.at(n, code as usize, y, x).ln();
                    valid += 1;
                }
            }
        }
    }
    if valid > 0 {
        loss /= valid as f64;
    } else {
        loss = 0.0;
    }
    Ok(CrossEntropy { loss, valid, probs })
}

/// Gradient of the mean loss with respect to the logits:
/// `(softmax − onehot)/valid` at contributing pixels, zero elsewhere.
pub fn softmax_cross_entropy_backward(
    ce: &CrossEntropy,
    targets: &[LabelMask],
    ignore_code: u8,
) -> Tensor4 {
    let [batch, classes, h, w] = ce.probs.dims();
    let mut grad = Tensor4::zeros(ce.probs.dims());
    if ce.valid == 0 {
        return grad;
    }
    let scale = 1.0 / ce.valid as f64;
    for n in 0..batch {
        for y in 0..h {
            for x in 0..w {
                let code = targets[n].at(x, y);
                if code == ignore_code {
                    continue;
                }
                for k in 0..classes {
                    let indicator = (k == code as usize) as u8 as f64;
                    *grad.at_mut(n, k, y, x) = (ce.probs.at(n, k, y, x) - indicator) * scale;
                }
            }
        }
    }
    grad
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_ln2() {
        let logits = Tensor4::filled([1, 2, 3, 3], 0.42);
        let mask = LabelMask::filled(3, 3, 1);
        let ce = softmax_cross_entropy(&logits, &[mask], 255).unwrap();
        assert!((ce.loss - 2f64.ln()).abs() < 1e-12);
        assert_eq!(ce.valid, 9);
    }

    #[test]
    fn saturated_correct_logit_has_near_zero_loss() {
        let logits = Tensor4::from_fn([1, 2, 2, 2], |_, k, _, _| if k == 1 { 20.0 } else { 0.0 });
        let mask = LabelMask::filled(2, 2, 1);
        let ce = softmax_cross_entropy(&logits, &[mask], 255).unwrap();
        assert!(ce.loss < 1e-8);
    }

    #[test]
    fn all_ignored_gives_zero_loss_and_gradient() {
        let logits = Tensor4::from_fn([1, 2, 2, 2], |_, k, y, x| (k + y + x) as f64);
        let mask = LabelMask::filled(2, 2, 255);
        let ce = softmax_cross_entropy(&logits, &[mask.clone()], 255).unwrap();
        assert_eq!(ce.loss, 0.0);
        assert_eq!(ce.valid, 0);
        let grad = softmax_cross_entropy_backward(&ce, &[mask], 255);
        assert!(grad.values().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn gradient_sums_to_zero_over_classes() {
        let logits = Tensor4::from_fn([2, 3, 2, 2], |n, k, y, x| {
            ((n * 17 + k * 5 + y * 3 + x) as f64).sin()
        });
        let mut masks = Vec::new();
        for n in 0..2 {
            let mut m = LabelMask::filled(2, 2, 0);
            m.set(0, 0, 1);
            m.set(1, n, 255);
            masks.push(m);
        }
        // Class code 2 is outside the mask vocabulary, so widen by hand.
        masks[1].data[2] = 2;
        let ce = softmax_cross_entropy(&logits, &masks, 255).unwrap();
        let grad = softmax_cross_entropy_backward(&ce, &masks, 255);
        for n in 0..2 {
            for y in 0..2 {
                for x in 0..2 {
                    let s: f64 = (0..3).map(|k| grad.at(n, k, y, x)).sum();
                    if masks[n].at(x, y) == 255 {
                        assert_eq!(s, 0.0);
                    } else {
                        assert!(s.abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn code_at_or_above_class_count_rejected() {
        let logits = Tensor4::zeros([1, 2, 2, 2]);
        let mut mask = LabelMask::filled(2, 2, 0);
        mask.data[3] = 2;
        let err = softmax_cross_entropy(&logits, &[mask], 255).unwrap_err();
        assert!(matches!(err, TensorError::Value(_)));
    }

    #[test]
    fn loss_decreases_along_negative_gradient() {
        let logits = Tensor4::from_fn([1, 2, 4, 4], |_, k, y, x| ((k * 3 + y + x) as f64).cos());
        let mut mask = LabelMask::filled(4, 4, 0);
        for i in 0..4 {
            mask.set(i, i, 1);
        }
        let masks = [mask];
        let ce = softmax_cross_entropy(&logits, &masks, 255).unwrap();
        let grad = softmax_cross_entropy_backward(&ce, &masks, 255);
        let stepped = Tensor4::new(
            logits.dims(),
            logits
                .values()
                .iter()
                .zip(grad.values())
                .map(|(&l, &g)| l - 0.5 * g)
                .collect(),
        )
        .unwrap();
        let ce2 = softmax_cross_entropy(&stepped, &masks, 255).unwrap();
        assert!(ce2.loss < ce.loss);
    }
}
