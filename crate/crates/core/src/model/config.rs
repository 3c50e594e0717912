use super::ModelError;

/// Hyper-parameters of the segmentation network. The defaults describe the
/// toy-scale variant: four stages, branch widths 8/16/32/64, a stride-3
/// first transition, dilated stages 2–3 and the OCR context head.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Spectral bands accepted by the stem.
    pub in_channels: usize,
    pub num_classes: usize,
    /// Always 4: the stage count is inherited unchanged.
    pub num_stages: usize,
    /// Channel width per resolution branch, strictly increasing; the vector
    /// length sets how many branches the network grows (at most one per
    /// stage).
    pub branch_widths: Vec<usize>,
    /// Residual blocks per branch per stage.
    pub blocks_per_branch: usize,
    /// Spatial reduction of the stem: 1 (none) or 4 (two stride-2 convs).
    pub stem_downsample: usize,
    /// Stride of transitions/fusion paths leaving branch 1.
    pub stage1_fusion_stride: usize,
    /// Stride of every other downward transition/fusion hop.
    pub other_fusion_stride: usize,
    /// Stages (1-based, subset of {2, 3}) whose block convolutions dilate.
    pub dilated_stages: Vec<usize>,
    /// Dilation factor for those stages; padding follows the dilation so
    /// spatial sizes are preserved.
    pub dilation: usize,
    pub ocr_enabled: bool,
    pub ocr_key_channels: usize,
    /// Weight of the auxiliary (pre-context) loss during training.
    pub aux_loss_weight: f64,
    /// Seed for parameter initialization.
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            in_channels: 5,
            num_classes: 2,
            num_stages: 4,
            branch_widths: vec![8, 16, 32, 64],
            blocks_per_branch: 2,
            stem_downsample: 4,
            stage1_fusion_stride: 3,
            other_fusion_stride: 2,
            dilated_stages: vec![2, 3],
            dilation: 2,
            ocr_enabled: true,
            ocr_key_channels: 16,
            aux_loss_weight: 0.4,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let err = |msg: String| Err(ModelError::Config(msg));
        if self.num_stages != 4 {
            return err(format!("num_stages must be 4, got {}", self.num_stages));
        }
        if self.in_channels == 0 {
            return err("in_channels must be positive".into());
        }
        if self.num_classes < 2 {
            return err(format!("need at least 2 classes, got {}", self.num_classes));
        }
        if self.branch_widths.is_empty() || self.branch_widths.len() > self.num_stages {
            return err(format!(
                "branch_widths must list 1..={} widths, got {}",
                self.num_stages,
                self.branch_widths.len()
            ));
        }
        if self.branch_widths.contains(&0) {
            return err("branch width 0 is invalid".into());
        }
        if self.branch_widths.windows(2).any(|w| w[1] <= w[0]) {
            return err(format!(
                "branch widths must strictly increase, got {:?}",
                self.branch_widths
            ));
        }
        if self.blocks_per_branch == 0 {
            return err("blocks_per_branch must be positive".into());
        }
        if !matches!(self.stem_downsample, 1 | 4) {
            return err(format!(
                "stem_downsample must be 1 or 4, got {}",
                self.stem_downsample
            ));
        }
        if self.stage1_fusion_stride < 2 || self.other_fusion_stride < 2 {
            return err("fusion strides must be at least 2".into());
        }
        if self.dilation == 0 {
            return err("dilation must be positive".into());
        }
        let mut seen = [false; 5];
        for &s in &self.dilated_stages {
            if !matches!(s, 2 | 3) {
                return err(format!(
                    "only stages 2 and 3 may dilate (stages 1 and 4 are unchanged), got {s}"
                ));
            }
            if seen[s] {
                return err(format!("stage {s} listed twice in dilated_stages"));
            }
            seen[s] = true;
        }
        if self.ocr_key_channels == 0 {
            return err("ocr_key_channels must be positive".into());
        }
        if !self.aux_loss_weight.is_finite() || self.aux_loss_weight < 0.0 {
            return err(format!(
                "aux_loss_weight must be finite and non-negative, got {}",
                self.aux_loss_weight
            ));
        }
        Ok(())
    }

    /// Number of resolution branches the full network reaches.
    pub fn num_branches(&self) -> usize {
        self.branch_widths.len()
    }

    /// Branches present during `stage` (1-based): one new branch per stage
    /// until the configured widths run out.
    pub fn branches_at_stage(&self, stage: usize) -> usize {
        stage.min(self.num_branches())
    }

    /// Dilation of the 3x3 block convolutions of `stage` (1-based).
    pub fn stage_dilation(&self, stage: usize) -> usize {
        if self.dilated_stages.contains(&stage) {
            self.dilation
        } else {
            1
        }
    }

    /// Total channel width of the concatenated multi-branch head input.
    pub fn head_channels(&self) -> usize {
        self.branch_widths.iter().sum()
    }

    /// Minimum input side length: the stem output must be at least 12 pixels
    /// so every branch keeps a positive spatial extent.
    pub fn min_input_side(&self) -> usize {
        12 * self.stem_downsample
    }

    /// Spatial extent of each branch given a stem-output extent `r`:
    /// branch 1 keeps `r`, branch 2 is `ceil(r/s1)`, later branches halve
    /// (rounding up) per level.
    pub fn branch_extents(&self, r: usize) -> Vec<usize> {
        let mut sizes = Vec::with_capacity(self.num_branches());
        for b in 0..self.num_branches() {
            let prev = if b == 0 { r } else { sizes[b - 1] };
            let stride = match b {
                0 => 1,
                1 => self.stage1_fusion_stride,
                _ => self.other_fusion_stride,
            };
            sizes.push(prev.div_ceil(stride));
        }
        sizes
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        let cfg = ModelConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.in_channels, 5);
        assert_eq!(cfg.branch_widths, vec![8, 16, 32, 64]);
        assert_eq!(cfg.head_channels(), 120);
        assert_eq!(cfg.min_input_side(), 48);
    }

    #[test]
    fn zero_width_rejected() {
        let cfg = ModelConfig {
            branch_widths: vec![8, 0, 32],
            ..ModelConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(ModelError::Config(_))));
    }

    #[test]
    fn non_increasing_widths_rejected() {
        let cfg = ModelConfig {
            branch_widths: vec![8, 8],
            ..ModelConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn stem_factor_constrained() {
        for (factor, ok) in [(1, true), (2, false), (4, true), (8, false)] {
            let cfg = ModelConfig {
                stem_downsample: factor,
                ..ModelConfig::default()
            };
            assert_eq!(cfg.validate().is_ok(), ok, "factor {factor}");
        }
    }

    #[test]
    fn dilating_stage_four_rejected() {
        let cfg = ModelConfig {
            dilated_stages: vec![2, 4],
            ..ModelConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn branch_extent_rule() {
        let cfg = ModelConfig::default();
        assert_eq!(cfg.branch_extents(48), vec![48, 16, 8, 4]);
        assert_eq!(cfg.branch_extents(13), vec![13, 5, 3, 2]);
        // Rule holds across the whole supported stem-output range.
        for r in 12..=64 {
            let s = cfg.branch_extents(r);
            assert_eq!(s[1], r.div_ceil(3));
            assert_eq!(s[2], s[1].div_ceil(2));
            assert_eq!(s[3], s[2].div_ceil(2));
            assert!(s[3] >= 1);
        }
    }

    #[test]
    fn stage_dilation_schedule() {
        let cfg = ModelConfig::default();
        assert_eq!(cfg.stage_dilation(1), 1);
        assert_eq!(cfg.stage_dilation(2), 2);
        assert_eq!(cfg.stage_dilation(3), 2);
        assert_eq!(cfg.stage_dilation(4), 1);
    }

    #[test]
    fn branches_per_stage_saturate_at_width_count() {
        let cfg = ModelConfig {
            branch_widths: vec![4, 8],
            ..ModelConfig::default()
        };
        assert_eq!(cfg.branches_at_stage(1), 1);
        assert_eq!(cfg.branches_at_stage(2), 2);
        assert_eq!(cfg.branches_at_stage(3), 2);
        assert_eq!(cfg.branches_at_stage(4), 2);
    }
}
