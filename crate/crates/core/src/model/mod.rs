//! The trainable segmentation model: a small HRNet-style multi-resolution
//! network with a stride-3 first transition, dilated middle stages, an
//! object-contextual head, SGD training and tiled inference.

mod checkpoint;
mod config;
mod net;
mod predict;
mod train;

pub use config::ModelConfig;
pub use train::poly_lr;

use std::collections::BTreeMap;

use thiserror::Error;

use crate::raster::MultispectralImage;
use crate::tensor::graph::NodeId;
use crate::tensor::{RunningStats, Tensor4, TensorError};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("missing statistics: {0}")]
    Stats(String),
    #[error("checkpoint format: {0}")]
    Format(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A built network: immutable architecture plus mutable parameters, batch
/// norm running statistics, optimizer state and input normalization.
#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    params: BTreeMap<String, Tensor4>,
    running: BTreeMap<String, RunningStats>,
    /// SGD momentum buffers, lazily created; not part of checkpoints.
    velocity: BTreeMap<String, Vec<f64>>,
    /// Per-band (mean, std) used to standardize inference inputs.
    norm: Option<Vec<(f64, f64)>>,
}

/// Per-band `(mean, population std)` over every pixel of `images`. This is
/// the statistic the training front end computes on its training split and
/// persists via [`Model::set_normalization`].
pub fn band_statistics(images: &[&MultispectralImage]) -> Result<Vec<(f64, f64)>, ModelError> {
    let first = images
        .first()
        .ok_or_else(|| ModelError::Stats("band statistics over zero images".into()))?;
    let bands = first.band_count();
    let mut sum = vec![0.0f64; bands];
    let mut sum_sq = vec![0.0f64; bands];
    let mut count = 0usize;
    for image in images {
        if image.band_count() != bands {
            return Err(ModelError::Shape(format!(
                "image has {} bands, expected {}",
                image.band_count(),
                bands
            )));
        }
        for b in 0..bands {
            for &v in image.plane(b) {
                let v = v as f64;
                sum[b] += v;
                sum_sq[b] += v * v;
            }
        }
        count += image.width() * image.height();
    }
    Ok((0..bands)
        .map(|b| {
            let n = count as f64;
            let mean = sum[b] / n;
            let var = (sum_sq[b] / n - mean * mean).max(0.0);
            (mean, var.sqrt())
        })
        .collect())
}

/// Builds a model with He-uniform conv weights, unit gammas and zero betas,
/// deterministically derived from `config.seed`.
pub fn build_model(config: ModelConfig) -> Result<Model, ModelError> {
    config.validate()?;
    let net::ParamSet { params, running } = net::init_params(&config);
    Ok(Model {
        config,
        params,
        running,
        velocity: BTreeMap::new(),
        norm: None,
    })
}

impl Model {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &BTreeMap<String, Tensor4> {
        &self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor4> {
        self.params.get(name)
    }

    /// Total number of learnable scalars.
    pub fn param_count(&self) -> usize {
        self.params.values().map(|t| t.len()).sum()
    }

    /// Replaces the values of one parameter tensor; the length must match.
    pub fn set_param(&mut self, name: &str, values: &[f64]) -> Result<(), ModelError> {
        let param = self
            .params
            .get_mut(name)
            .ok_or_else(|| ModelError::Shape(format!("no parameter named {name}")))?;
        if values.len() != param.len() {
            return Err(ModelError::Shape(format!(
                "{name}: {} values for a {}-element tensor",
                values.len(),
                param.len()
            )));
        }
        param.values_mut().copy_from_slice(values);
        Ok(())
    }

    pub fn normalization(&self) -> Option<&[(f64, f64)]> {
        self.norm.as_deref()
    }

    /// Stores per-band standardization statistics (one `(mean, std)` pair
    /// per input channel) for use by [`Model::predict_mask`].
    pub fn set_normalization(&mut self, stats: Vec<(f64, f64)>) -> Result<(), ModelError> {
        if stats.len() != self.config.in_channels {
            return Err(ModelError::Stats(format!(
                "{} band statistics for {} input channels",
                stats.len(),
                self.config.in_channels
            )));
        }
        if stats
            .iter()
            .any(|(m, s)| !m.is_finite() || !s.is_finite() || *s < 0.0)
        {
            return Err(ModelError::Stats(
                "band statistics must be finite with non-negative std".into(),
            ));
        }
        self.norm = Some(stats);
        Ok(())
    }

    /// Eval-mode forward pass: `(main_logits, aux_logits)`, both at the
    /// input resolution. Deterministic for fixed weights.
    pub fn forward(&self, batch: &Tensor4) -> Result<(Tensor4, Tensor4), ModelError> {
        let mut running = self.running.clone();
        let out = net::forward_pass(&self.config, &self.params, &mut running, batch, false)?;
        Ok((
            out.graph.value(out.main).clone(),
            out.graph.value(out.aux).clone(),
        ))
    }

    /// Runs one fusion exchange standalone on explicit per-branch features.
    /// `stage` selects whose fusion parameters apply (1-based); a
    /// single-branch stage is the identity.
    pub fn fusion_exchange(
        &self,
        streams: &[Tensor4],
        stage: usize,
    ) -> Result<Vec<Tensor4>, ModelError> {
        if stage == 0 || stage > self.config.num_stages {
            return Err(ModelError::Shape(format!(
                "stage {stage} outside 1..={}",
                self.config.num_stages
            )));
        }
        let expected = self.config.branches_at_stage(stage);
        if streams.len() != expected {
            return Err(ModelError::Shape(format!(
                "stage {stage} exchanges {expected} branches, got {}",
                streams.len()
            )));
        }
        let mut running = self.running.clone();
        let mut pass = net::Pass::new(&self.config, &self.params, &mut running, false);
        let ids: Vec<NodeId> = streams.iter().map(|t| pass.g.leaf(t.clone())).collect();
        let outs = pass.fusion(stage, ids)?;
        Ok(outs.into_iter().map(|id| pass.g.value(id).clone()).collect())
    }

    /// Applies the object-contextual head standalone: augments `features`
    /// with region context pooled under `coarse_logits`.
    pub fn ocr_augment(
        &self,
        features: &Tensor4,
        coarse_logits: &Tensor4,
    ) -> Result<Tensor4, ModelError> {
        if !self.config.ocr_enabled {
            return Err(ModelError::Config("the OCR head is disabled".into()));
        }
        let ([fn_, _, fh, fw], [cn, _, ch, cw]) = (features.dims(), coarse_logits.dims());
        if fn_ != cn || fh != ch || fw != cw {
            return Err(ModelError::Shape(format!(
                "features {:?} and coarse logits {:?} are not spatially aligned",
                features.dims(),
                coarse_logits.dims()
            )));
        }
        let mut running = self.running.clone();
        let mut pass = net::Pass::new(&self.config, &self.params, &mut running, false);
        let f = pass.g.leaf(features.clone());
        let c = pass.g.leaf(coarse_logits.clone());
        let out = pass.ocr(f, c)?;
        Ok(pass.g.value(out).clone())
    }
}
