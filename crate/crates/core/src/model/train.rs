//! SGD-with-momentum training on the combined main + auxiliary loss.

use std::collections::BTreeMap;

use crate::raster::{LabelMask, CLASS_IGNORE};
use crate::tensor::{
    softmax_cross_entropy, softmax_cross_entropy_backward, RunningStats, Tensor4,
};

use super::{net, Model, ModelConfig, ModelError};

/// Polynomial learning-rate decay: `base * (1 - step/total)^power`, the
/// conventional schedule for semantic segmentation (power 0.9).
pub fn poly_lr(base_lr: f64, step: usize, total_steps: usize, power: f64) -> f64 {
    if total_steps == 0 {
        return base_lr;
    }
    let t = (step as f64 / total_steps as f64).clamp(0.0, 1.0);
    base_lr * (1.0 - t).powf(power)
}

/// Forward in train mode, then one backward sweep. Returns the combined
/// loss and the gradient of every parameter, keyed by name. Running
/// statistics are advanced in place (training-time batch-norm semantics).
pub(super) fn loss_and_grads(
    cfg: &ModelConfig,
    params: &BTreeMap<String, Tensor4>,
    running: &mut BTreeMap<String, RunningStats>,
    batch: &Tensor4,
    masks: &[LabelMask],
) -> Result<(f64, BTreeMap<String, Tensor4>), ModelError> {
    let out = net::forward_pass(cfg, params, running, batch, true)?;
    let ce_main = softmax_cross_entropy(out.graph.value(out.main), masks, CLASS_IGNORE)?;
    let ce_aux = softmax_cross_entropy(out.graph.value(out.aux), masks, CLASS_IGNORE)?;
    let weight = cfg.aux_loss_weight;
    let loss = ce_main.loss + weight * ce_aux.loss;

    let g_main = softmax_cross_entropy_backward(&ce_main, masks, CLASS_IGNORE);
    let mut g_aux = softmax_cross_entropy_backward(&ce_aux, masks, CLASS_IGNORE);
    for v in g_aux.values_mut() {
        *v *= weight;
    }
    let grads = out.graph.backward(vec![(out.main, g_main), (out.aux, g_aux)])?;
    let by_name = out
        .ids
        .iter()
        .map(|(name, id)| (name.clone(), grads[id.index()].clone()))
        .collect();
    Ok((loss, by_name))
}

impl Model {
    /// Computes the training loss and all parameter gradients without
    /// touching any state (running statistics are advanced on a copy).
    pub fn loss_and_gradients(
        &self,
        batch: &Tensor4,
        masks: &[LabelMask],
    ) -> Result<(f64, BTreeMap<String, Tensor4>), ModelError> {
        let mut running = self.running.clone();
        loss_and_grads(&self.config, &self.params, &mut running, batch, masks)
    }

    /// One SGD-with-momentum step on `loss = CE(main) + aux_loss_weight *
    /// CE(aux)`. Returns the loss measured before the update.
    pub fn train_step(
        &mut self,
        batch: &Tensor4,
        masks: &[LabelMask],
        lr: f64,
        momentum: f64,
    ) -> Result<f64, ModelError> {
        let (loss, grads) =
            loss_and_grads(&self.config, &self.params, &mut self.running, batch, masks)?;
        for (name, grad) in &grads {
            let param = self
                .params
                .get_mut(name)
                .expect("gradient names mirror parameter names");
            let vel = self
                .velocity
                .entry(name.clone())
                .or_insert_with(|| vec![0.0; param.len()]);
            for ((v, p), &g) in vel
                .iter_mut()
                .zip(param.values_mut())
                .zip(grad.values())
            {
                *v = momentum * *v + g;
                *p -= lr * *v;
            }
        }
        Ok(loss)
    }
}
