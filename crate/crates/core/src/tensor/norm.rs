//! Batch normalization over `(n, h, w)` per channel.
//!
//! Training mode normalizes with the batch statistics (population variance),
//! updates the running estimates in place with momentum [`BN_MOMENTUM`], and
//! returns the batch statistics needed by the backward pass. Evaluation mode
//! normalizes with the running estimates and touches nothing.

use super::{Tensor4, TensorError};

/// Fraction of the batch statistic blended into the running estimate per step.
pub const BN_MOMENTUM: f64 = 0.1;

/// Default variance-stabilizing epsilon.
pub const BN_EPS: f64 = 1e-5;

/// Exponential running estimates of per-channel mean and variance.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    /// Fresh stats: mean 0, variance 1 (identity normalization).
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }

    fn update(&mut self, batch_mean: &[f64], batch_var: &[f64]) {
        for c in 0..self.mean.len() {
            self.mean[c] = (1.0 - BN_MOMENTUM) * self.mean[c] + BN_MOMENTUM * batch_mean[c];
            self.var[c] = (1.0 - BN_MOMENTUM) * self.var[c] + BN_MOMENTUM * batch_var[c];
        }
    }
}

/// Per-channel batch statistics captured during a training-mode forward pass.
#[derive(Debug, Clone)]
pub struct BnSaved {
    pub mean: Vec<f64>,
    /// Population (biased) variance.
    pub var: Vec<f64>,
    /// `1 / sqrt(var + eps)`.
    pub inv_std: Vec<f64>,
}

/// Gradients of batch normalization with respect to its inputs.
#[derive(Debug, Clone)]
pub struct BnGrads {
    pub input: Tensor4,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

fn check_channels(input: &Tensor4, gamma: &[f64], beta: &[f64]) -> Result<(), TensorError> {
    if gamma.len() != input.c() || beta.len() != input.c() {
        return Err(TensorError::Shape(format!(
            "gamma/beta lengths {}/{} vs {} channels",
            gamma.len(),
            beta.len(),
            input.c()
        )));
    }
    Ok(())
}

pub fn batch_norm_train(
    input: &Tensor4,
    gamma: &[f64],
    beta: &[f64],
    stats: &mut RunningStats,
    eps: f64,
) -> Result<(Tensor4, BnSaved), TensorError> {
    check_channels(input, gamma, beta)?;
    if stats.mean.len() != input.c() {
        return Err(TensorError::Shape(format!(
            "running stats over {} channels, input has {}",
            stats.mean.len(),
            input.c()
        )));
    }
    let [batch, channels, h, w] = input.dims();
    let m = (batch * h * w) as f64;
    if m == 0.0 {
        return Err(TensorError::Shape("empty batch".into()));
    }

    let mut mean = vec![0.0; channels];
    let mut var = vec![0.0; channels];
    for c in 0..channels {
        let mut acc = 0.0;
        for n in 0..batch {
            acc += input.plane(n, c).iter().sum::<f64>();
        }
        mean[c] = acc / m;
        let mut sq = 0.0;
        for n in 0..batch {
            for &v in input.plane(n, c) {
                let d = v - mean[c];
                sq += d * d;
            }
        }
        var[c] = sq / m;
    }
    let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + eps).sqrt()).collect();

    let mut out = Tensor4::zeros(input.dims());
    for n in 0..batch {
        for c in 0..channels {
            let (g, b, mu, is) = (gamma[c], beta[c], mean[c], inv_std[c]);
            for (o, &v) in out.plane_mut(n, c).iter_mut().zip(input.plane(n, c)) {
                *o = g * (v - mu) * is + b;
            }
        }
    }

    stats.update(&mean, &var);
    Ok((out, BnSaved { mean, var, inv_std }))
}

pub fn batch_norm_eval(
    input: &Tensor4,
    gamma: &[f64],
    beta: &[f64],
    stats: &RunningStats,
    eps: f64,
) -> Result<Tensor4, TensorError> {
    check_channels(input, gamma, beta)?;
    if stats.mean.len() != input.c() {
        return Err(TensorError::Shape(format!(
            "running stats over {} channels, input has {}",
            stats.mean.len(),
            input.c()
        )));
    }
    let [batch, channels, _, _] = input.dims();
    let mut out = Tensor4::zeros(input.dims());
    for n in 0..batch {
        for c in 0..channels {
            let is = 1.0 / (stats.var[c] + eps).sqrt();
            let (g, b, mu) = (gamma[c], beta[c], stats.mean[c]);
            for (o, &v) in out.plane_mut(n, c).iter_mut().zip(input.plane(n, c)) {
                *o = g * (v - mu) * is + b;
            }
        }
    }
    Ok(out)
}

/// Backward through training-mode normalization.
///
/// With `x̂ = (x − μ)·inv_std` and per-channel sums over the `m = n·h·w`
/// normalized elements:
///
/// ```text
/// dβ = Σ g      dγ = Σ g·x̂      dx = γ·inv_std/m · (m·g − Σg − x̂·Σ(g·x̂))
/// ```
pub fn batch_norm_train_backward(
    input: &Tensor4,
    gamma: &[f64],
    saved: &BnSaved,
    upstream: &Tensor4,
) -> Result<BnGrads, TensorError> {
    if upstream.dims() != input.dims() {
        return Err(TensorError::Shape(format!(
            "upstream dims {:?} vs input {:?}",
            upstream.dims(),
            input.dims()
        )));
    }
    check_channels(input, gamma, gamma)?;
    let [batch, channels, h, w] = input.dims();
    let m = (batch * h * w) as f64;

    let mut d_input = Tensor4::zeros(input.dims());
    let mut d_gamma = vec![0.0; channels];
    let mut d_beta = vec![0.0; channels];
    for c in 0..channels {
        let (mu, is) = (saved.mean[c], saved.inv_std[c]);
        let mut sum_g = 0.0;
        let mut sum_gx = 0.0;
        for n in 0..batch {
            for (&g, &v) in upstream.plane(n, c).iter().zip(input.plane(n, c)) {
                sum_g += g;
                sum_gx += g * (v - mu) * is;
            }
        }
        d_beta[c] = sum_g;
        d_gamma[c] = sum_gx;
        let scale = gamma[c] * is / m;
        for n in 0..batch {
            let di = d_input.plane_mut(n, c);
            for ((d, &g), &v) in di.iter_mut().zip(upstream.plane(n, c)).zip(input.plane(n, c)) {
                let x_hat = (v - mu) * is;
                *d = scale * (m * g - sum_g - x_hat * sum_gx);
            }
        }
    }
    Ok(BnGrads {
        input: d_input,
        gamma: d_gamma,
        beta: d_beta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_input_yields_beta() {
        let input = Tensor4::filled([2, 3, 4, 4], 0.7);
        let gamma = [1.5, 2.0, -1.0];
        let beta = [0.25, -0.5, 3.0];
        let mut stats = RunningStats::new(3);
        let (out, _) = batch_norm_train(&input, &gamma, &beta, &mut stats, 1e-5).unwrap();
        for n in 0..2 {
            for c in 0..3 {
                for &v in out.plane(n, c) {
                    assert!((v - beta[c]).abs() < 1e-3);
                }
            }
        }
    }

    #[test]
    fn two_point_channel_hand_computed() {
        // Values {1, 3}: mean 2, population variance 1, so with eps = 1e-5 the
        // normalized outputs are ±1/sqrt(1 + 1e-5) = ±0.99999500...
        let input = Tensor4::new([1, 1, 1, 2], vec![1.0, 3.0]).unwrap();
        let mut stats = RunningStats::new(1);
        let (out, saved) = batch_norm_train(&input, &[1.0], &[0.0], &mut stats, 1e-5).unwrap();
        assert!((out.values()[0] + 0.999995).abs() < 1e-6);
        assert!((out.values()[1] - 0.999995).abs() < 1e-6);
        assert_eq!(saved.mean[0], 2.0);
        assert_eq!(saved.var[0], 1.0);
    }

    #[test]
    fn eval_with_identity_stats_is_near_identity() {
        let input = Tensor4::from_fn([1, 2, 3, 3], |_, c, y, x| (c + y + x) as f64 * 0.1 - 0.4);
        let stats = RunningStats::new(2);
        let out = batch_norm_eval(&input, &[1.0, 1.0], &[0.0, 0.0], &stats, 1e-5).unwrap();
        for (&o, &i) in out.values().iter().zip(input.values()) {
            assert!((o - i).abs() < 1e-5 * (1.0 + i.abs()));
        }
    }

    #[test]
    fn running_stats_blend_with_momentum() {
        let input = Tensor4::new([1, 1, 1, 2], vec![1.0, 3.0]).unwrap();
        let mut stats = RunningStats::new(1);
        batch_norm_train(&input, &[1.0], &[0.0], &mut stats, 1e-5).unwrap();
        // mean: 0.9*0 + 0.1*2 = 0.2; var: 0.9*1 + 0.1*1 = 1.0
        assert!((stats.mean[0] - 0.2).abs() < 1e-12);
        assert!((stats.var[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn channel_mismatch_rejected() {
        let input = Tensor4::zeros([1, 3, 2, 2]);
        let mut stats = RunningStats::new(3);
        let err = batch_norm_train(&input, &[1.0; 2], &[0.0; 3], &mut stats, 1e-5).unwrap_err();
        assert!(matches!(err, TensorError::Shape(_)));
    }
}
