//! Central finite-difference verification of analytic gradients.
//!
//! An operation under test is wrapped as a closure from flat input buffers to
//! a scalar value plus one analytic gradient per input. Tensor-valued
//! operations become scalar by contracting their output against a fixed
//! random projection vector; the projection is part of the closure, so the
//! checker itself only ever sees scalars.

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// Default central-difference step.
pub const DEFAULT_FD_EPS: f64 = 1e-4;

/// One evaluation of the operation under test: scalar value and the analytic
/// gradient of that scalar with respect to every input buffer, same order.
#[derive(Debug, Clone)]
pub struct CheckedOp {
    pub value: f64,
    pub grads: Vec<Vec<f64>>,
}

/// Fixed pseudo-random projection coefficients in `[-1, 1)`.
pub fn random_projection(seed: u64, len: usize) -> Vec<f64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let dist = Uniform::new(-1.0, 1.0);
    (0..len).map(|_| dist.sample(&mut rng)).collect()
}

/// Checks every analytic gradient coordinate against a central difference and
/// returns the maximum relative error
/// `|analytic − numeric| / max(1, |analytic|, |numeric|)`.
pub fn grad_check<F>(op: F, inputs: &[Vec<f64>], eps: f64) -> f64
where
    F: Fn(&[Vec<f64>]) -> CheckedOp,
{
    let base = op(inputs);
    assert_eq!(
        base.grads.len(),
        inputs.len(),
        "operation must report one gradient per input"
    );
    let mut work: Vec<Vec<f64>> = inputs.to_vec();
    let mut max_err: f64 = 0.0;
    for (i, input) in inputs.iter().enumerate() {
        assert_eq!(base.grads[i].len(), input.len());
        for j in 0..input.len() {
            let orig = work[i][j];
            work[i][j] = orig + eps;
            let plus = op(&work).value;
            work[i][j] = orig - eps;
            let minus = op(&work).value;
            work[i][j] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let analytic = base.grads[i][j];
            let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0);
            max_err = max_err.max(err);
        }
    }
    max_err
}
