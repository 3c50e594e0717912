//! Run configuration for `train`: a flat `key = value` text file covering
//! data location, the model hyperparameters, and the training schedule.

use std::collections::BTreeSet;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use ludvision::model::ModelConfig;

/// Everything a training run needs. Defaults reproduce the reference
/// configuration; any subset of keys may appear in the file.
///
/// `num_stages` is architecturally fixed at four and is deliberately not a
/// key here.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Directory of training scenes: `<stem>.lms` stacks with `<stem>.pgm`
    /// ground-truth masks. A `@group` suffix on the stem labels the scene's
    /// altitude group.
    pub data_dir: String,
    /// Fraction of each group held out for validation.
    pub val_fraction: f64,
    pub in_channels: usize,
    pub num_classes: usize,
    pub branch_widths: Vec<usize>,
    pub blocks_per_branch: usize,
    pub stem_downsample: usize,
    pub stage1_fusion_stride: usize,
    pub other_fusion_stride: usize,
    pub dilated_stages: Vec<usize>,
    pub dilation: usize,
    pub ocr_enabled: bool,
    pub ocr_key_channels: usize,
    pub aux_loss_weight: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    /// Polynomial decay power of the learning-rate schedule.
    pub lr_power: f64,
    pub momentum: f64,
    /// Side of the square windows cropped from each scene per step.
    pub crop_size: usize,
    pub flip_horizontal: bool,
    pub flip_vertical: bool,
    /// Tiling used for validation inference (and the `predict` default).
    pub tile_size: usize,
    pub tile_overlap: usize,
    /// Seeds both parameter initialization and the crop sampler.
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = ModelConfig::default();
        Self {
            data_dir: "data".into(),
            val_fraction: 0.2,
            in_channels: model.in_channels,
            num_classes: model.num_classes,
            branch_widths: model.branch_widths,
            blocks_per_branch: model.blocks_per_branch,
            stem_downsample: model.stem_downsample,
            stage1_fusion_stride: model.stage1_fusion_stride,
            other_fusion_stride: model.other_fusion_stride,
            dilated_stages: model.dilated_stages,
            dilation: model.dilation,
            ocr_enabled: model.ocr_enabled,
            ocr_key_channels: model.ocr_key_channels,
            aux_loss_weight: model.aux_loss_weight,
            epochs: 40,
            batch_size: 1,
            base_lr: 0.01,
            lr_power: 0.9,
            momentum: 0.9,
            crop_size: 64,
            flip_horizontal: false,
            flip_vertical: false,
            tile_size: 512,
            tile_overlap: 32,
            seed: 0,
        }
    }
}

fn scalar<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| anyhow!("key {key}: cannot parse {value:?}: {e}"))
}

fn list(key: &str, value: &str) -> Result<Vec<usize>> {
    value.split(',').map(|part| scalar(key, part.trim())).collect()
}

fn boolean(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        other => bail!("key {key}: expected true or false, got {other:?}"),
    }
}

fn join(values: &[usize]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

impl RunConfig {
    /// Parses `key = value` lines. `#` starts a comment, blank lines are
    /// skipped, and unknown or repeated keys are errors.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        let mut seen: BTreeSet<String> = BTreeSet::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let lineno = idx + 1;
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {lineno}: expected key = value, got {line:?}"))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                bail!("line {lineno}: duplicate key {key}");
            }
            let applied: Result<()> = (|| {
                match key {
                    "data_dir" => cfg.data_dir = value.to_string(),
                    "val_fraction" => cfg.val_fraction = scalar(key, value)?,
                    "in_channels" => cfg.in_channels = scalar(key, value)?,
                    "num_classes" => cfg.num_classes = scalar(key, value)?,
                    "branch_widths" => cfg.branch_widths = list(key, value)?,
                    "blocks_per_branch" => cfg.blocks_per_branch = scalar(key, value)?,
                    "stem_downsample" => cfg.stem_downsample = scalar(key, value)?,
                    "stage1_fusion_stride" => cfg.stage1_fusion_stride = scalar(key, value)?,
                    "other_fusion_stride" => cfg.other_fusion_stride = scalar(key, value)?,
                    "dilated_stages" => cfg.dilated_stages = list(key, value)?,
                    "dilation" => cfg.dilation = scalar(key, value)?,
                    "ocr_enabled" => cfg.ocr_enabled = boolean(key, value)?,
                    "ocr_key_channels" => cfg.ocr_key_channels = scalar(key, value)?,
                    "aux_loss_weight" => cfg.aux_loss_weight = scalar(key, value)?,
                    "epochs" => cfg.epochs = scalar(key, value)?,
                    "batch_size" => cfg.batch_size = scalar(key, value)?,
                    "base_lr" => cfg.base_lr = scalar(key, value)?,
                    "lr_power" => cfg.lr_power = scalar(key, value)?,
                    "momentum" => cfg.momentum = scalar(key, value)?,
                    "crop_size" => cfg.crop_size = scalar(key, value)?,
                    "flip_horizontal" => cfg.flip_horizontal = boolean(key, value)?,
                    "flip_vertical" => cfg.flip_vertical = boolean(key, value)?,
                    "tile_size" => cfg.tile_size = scalar(key, value)?,
                    "tile_overlap" => cfg.tile_overlap = scalar(key, value)?,
                    "seed" => cfg.seed = scalar(key, value)?,
                    _ => bail!("unknown key {key}"),
                }
                Ok(())
            })();
            applied.with_context(|| format!("line {lineno}"))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("config {}", path.display()))
    }

    fn validate(&self) -> Result<()> {
        if !(self.val_fraction >= 0.0 && self.val_fraction < 1.0) {
            bail!("val_fraction {} outside [0, 1)", self.val_fraction);
        }
        if self.epochs < 1 || self.batch_size < 1 || self.crop_size < 1 {
            bail!("epochs, batch_size and crop_size must be at least 1");
        }
        if !(self.base_lr.is_finite() && self.base_lr > 0.0) {
            bail!("base_lr {} must be positive", self.base_lr);
        }
        if !(self.lr_power.is_finite() && self.lr_power > 0.0) {
            bail!("lr_power {} must be positive", self.lr_power);
        }
        if !(self.momentum >= 0.0 && self.momentum < 1.0) {
            bail!("momentum {} outside [0, 1)", self.momentum);
        }
        // Model-side keys are validated when the model is built.
        Ok(())
    }

    /// The text form, one line per key in a fixed order. Parsing the result
    /// reproduces `self` exactly.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut put = |key: &str, value: String| {
            s.push_str(key);
            s.push_str(" = ");
            s.push_str(&value);
            s.push('\n');
        };
        put("data_dir", self.data_dir.clone());
        put("val_fraction", self.val_fraction.to_string());
        put("in_channels", self.in_channels.to_string());
        put("num_classes", self.num_classes.to_string());
        put("branch_widths", join(&self.branch_widths));
        put("blocks_per_branch", self.blocks_per_branch.to_string());
        put("stem_downsample", self.stem_downsample.to_string());
        put("stage1_fusion_stride", self.stage1_fusion_stride.to_string());
        put("other_fusion_stride", self.other_fusion_stride.to_string());
        put("dilated_stages", join(&self.dilated_stages));
        put("dilation", self.dilation.to_string());
        put("ocr_enabled", self.ocr_enabled.to_string());
        put("ocr_key_channels", self.ocr_key_channels.to_string());
        put("aux_loss_weight", self.aux_loss_weight.to_string());
        put("epochs", self.epochs.to_string());
        put("batch_size", self.batch_size.to_string());
        put("base_lr", self.base_lr.to_string());
        put("lr_power", self.lr_power.to_string());
        put("momentum", self.momentum.to_string());
        put("crop_size", self.crop_size.to_string());
        put("flip_horizontal", self.flip_horizontal.to_string());
        put("flip_vertical", self.flip_vertical.to_string());
        put("tile_size", self.tile_size.to_string());
        put("tile_overlap", self.tile_overlap.to_string());
        put("seed", self.seed.to_string());
        s
    }

    /// The architecture this run trains.
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            in_channels: self.in_channels,
            num_classes: self.num_classes,
            num_stages: 4,
            branch_widths: self.branch_widths.clone(),
            blocks_per_branch: self.blocks_per_branch,
            stem_downsample: self.stem_downsample,
            stage1_fusion_stride: self.stage1_fusion_stride,
            other_fusion_stride: self.other_fusion_stride,
            dilated_stages: self.dilated_stages.clone(),
            dilation: self.dilation,
            ocr_enabled: self.ocr_enabled,
            ocr_key_channels: self.ocr_key_channels,
            aux_loss_weight: self.aux_loss_weight,
            seed: self.seed,
        }
    }
}
