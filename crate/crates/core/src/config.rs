//! Flat JSON run configuration shared by every subcommand. Unknown keys are
//! rejected so typos surface immediately.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::augment::{AppearanceConfig, AugmentConfig, GeometricConfig, OcclusionConfig};
use crate::camera::{CameraIntrinsics, CropMode};
use crate::error::{Error, Result};
use crate::heatmap::GridConfig;
use crate::metrics::JointFlipMap;
use crate::training::{LossSpace, LrSchedule, SyntheticSetConfig, ToyTrainConfig};

/// Environment variable naming a default config file.
pub const CONFIG_ENV: &str = "OCCLUPOSE_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub focal_length: f64,
    pub p_occ: f64,
    pub out_size: u32,
    pub fill: f64,
    pub crop_mode: CropMode,
    pub joints: usize,
    /// Relative-depth slices of the volumetric heatmap.
    pub depth_bins: usize,
    /// Bins of the absolute-depth head.
    pub abs_depth_bins: usize,
    /// Extent of the absolute-depth axis, `[0, depth_range_mm]`.
    pub depth_range_mm: f64,
    /// Relative-depth axis spans `±rel_depth_range_mm`.
    pub rel_depth_range_mm: f64,
    pub heatmap_size: usize,
    pub seed: u64,
    /// Worker threads; 0 uses every core. Never echoed, so outputs do not
    /// depend on it.
    #[serde(skip_serializing)]
    pub threads: usize,
    /// Horizontal-flip joint permutation; defaults by joint count.
    pub flip_permutation: Option<Vec<usize>>,

    pub occluder_count_min: usize,
    pub occluder_count_max: usize,
    pub occluder_scale_min: f64,
    pub occluder_scale_max: f64,
    pub max_rotation_deg: f64,
    pub max_translation_frac: f64,
    pub zoom_min: f64,
    pub zoom_max: f64,
    pub hflip_prob: f64,
    pub blur_sigma_max: f64,
    pub gain_min: f64,
    pub gain_max: f64,

    pub steps: usize,
    pub base_lr: f64,
    pub max_lr: f64,
    pub lr_period: usize,
    pub depth_lr_scale: f64,
    pub c_lr_scale: f64,
    pub learn_c: bool,
    pub learn_xy: bool,
    pub c_init: f64,
    pub c_true: f64,
    pub loss_space: LossSpace,
    pub snapshots: usize,
    pub toy_samples: usize,
    pub toy_crop_scale: f64,
    pub toy_depth_min_mm: f64,
    pub toy_depth_max_mm: f64,
    pub toy_spread_mm: f64,
    /// Fraction of toy samples with hidden joint evidence; separate from `p_occ`.
    pub toy_p_occ: f64,
    pub occluded_joint_frac: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let occ = OcclusionConfig::default();
        let geo = GeometricConfig::default();
        let app = AppearanceConfig::default();
        let toy = ToyTrainConfig::default();
        let set = SyntheticSetConfig::default();
        let grid = GridConfig::default();
        RunConfig {
            focal_length: 1500.0,
            p_occ: occ.p_occ,
            out_size: 256,
            fill: 0.9,
            crop_mode: CropMode::default(),
            joints: 17,
            depth_bins: grid.depth_bins,
            abs_depth_bins: grid.abs_depth_bins,
            depth_range_mm: grid.abs_depth_range_mm,
            rel_depth_range_mm: grid.rel_depth_range_mm,
            heatmap_size: grid.heatmap_width,
            seed: 0,
            threads: 0,
            flip_permutation: None,
            occluder_count_min: occ.count_min,
            occluder_count_max: occ.count_max,
            occluder_scale_min: occ.scale_range[0],
            occluder_scale_max: occ.scale_range[1],
            max_rotation_deg: geo.max_rotation_deg,
            max_translation_frac: geo.max_translation_frac,
            zoom_min: geo.zoom_range[0],
            zoom_max: geo.zoom_range[1],
            hflip_prob: geo.hflip_prob,
            blur_sigma_max: app.blur_sigma_range[1],
            gain_min: app.gain_range[0],
            gain_max: app.gain_range[1],
            steps: toy.steps,
            base_lr: toy.schedule.base_lr,
            max_lr: toy.schedule.max_lr,
            lr_period: toy.schedule.period,
            depth_lr_scale: toy.depth_lr_scale,
            c_lr_scale: toy.c_lr_scale,
            learn_c: toy.learn_c,
            learn_xy: toy.learn_xy,
            c_init: toy.c_init,
            c_true: toy.c_true,
            loss_space: toy.loss_space,
            snapshots: toy.snapshots,
            toy_samples: set.samples,
            toy_crop_scale: toy.crop_scale,
            toy_depth_min_mm: set.depth_range_mm[0],
            toy_depth_max_mm: set.depth_range_mm[1],
            toy_spread_mm: set.spread_mm,
            toy_p_occ: toy.p_occ,
            occluded_joint_frac: toy.occluded_joint_frac,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: RunConfig = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        CameraIntrinsics::centered(self.focal_length, 1.0, 1.0)?;
        if self.out_size == 0 || !(self.fill > 0.0) {
            return Err(Error::InvalidArgument("out_size and fill must be positive".into()));
        }
        self.augment_config().validate()?;
        crate::heatmap::CoordinateGrid::new(&self.grid_config())?;
        self.flip_map()?;
        self.toy_config().validate()?;
        if !(self.toy_depth_min_mm > 0.0 && self.toy_depth_min_mm <= self.toy_depth_max_mm && self.toy_spread_mm >= 0.0) {
            return Err(Error::InvalidArgument("toy depth range must be positive and ordered".into()));
        }
        Ok(())
    }

    pub fn grid_config(&self) -> GridConfig {
        GridConfig {
            out_width: self.out_size,
            out_height: self.out_size,
            heatmap_width: self.heatmap_size,
            heatmap_height: self.heatmap_size,
            depth_bins: self.depth_bins,
            abs_depth_bins: self.abs_depth_bins,
            rel_depth_range_mm: self.rel_depth_range_mm,
            abs_depth_range_mm: self.depth_range_mm,
        }
    }

    pub fn augment_config(&self) -> AugmentConfig {
        AugmentConfig {
            occlusion: OcclusionConfig {
                p_occ: self.p_occ,
                count_min: self.occluder_count_min,
                count_max: self.occluder_count_max,
                scale_range: [self.occluder_scale_min, self.occluder_scale_max],
            },
            geometric: GeometricConfig {
                max_rotation_deg: self.max_rotation_deg,
                max_translation_frac: self.max_translation_frac,
                zoom_range: [self.zoom_min, self.zoom_max],
                hflip_prob: self.hflip_prob,
            },
            appearance: AppearanceConfig {
                blur_sigma_range: [0.0, self.blur_sigma_max],
                gain_range: [self.gain_min, self.gain_max],
            },
            crop_side: self.out_size,
        }
    }

    pub fn flip_map(&self) -> Result<JointFlipMap> {
        match &self.flip_permutation {
            Some(p) => {
                if p.len() != self.joints {
                    return Err(Error::InvalidArgument(format!(
                        "flip_permutation has {} entries for {} joints",
                        p.len(),
                        self.joints
                    )));
                }
                JointFlipMap::new(p.clone())
            }
            None => Ok(JointFlipMap::default_for(self.joints)),
        }
    }

    pub fn toy_config(&self) -> ToyTrainConfig {
        ToyTrainConfig {
            steps: self.steps,
            schedule: LrSchedule {
                base_lr: self.base_lr,
                max_lr: self.max_lr,
                period: self.lr_period,
            },
            depth_lr_scale: self.depth_lr_scale,
            c_lr_scale: self.c_lr_scale,
            seed: self.seed,
            joints: self.joints,
            grid: self.grid_config(),
            focal: self.focal_length,
            crop_scale: self.toy_crop_scale,
            learn_c: self.learn_c,
            learn_xy: self.learn_xy,
            c_init: self.c_init,
            c_true: self.c_true,
            loss_space: self.loss_space,
            snapshots: self.snapshots,
            p_occ: self.toy_p_occ,
            occluded_joint_frac: self.occluded_joint_frac,
        }
    }

    pub fn synthetic_set(&self) -> SyntheticSetConfig {
        SyntheticSetConfig {
            samples: self.toy_samples,
            seed: self.seed,
            depth_range_mm: [self.toy_depth_min_mm, self.toy_depth_max_mm],
            spread_mm: self.toy_spread_mm,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_and_validate() {
        let c = RunConfig::default();
        c.validate().unwrap();
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(RunConfig::from_json(&text).unwrap(), c);
        assert_eq!(c.focal_length, 1500.0);
        assert_eq!(c.p_occ, 0.5);
        assert_eq!(c.grid_config(), GridConfig::default());
    }

    #[test]
    fn unknown_and_invalid_keys_rejected() {
        assert!(RunConfig::from_json(r#"{"focal_lenght": 1200}"#).is_err());
        assert!(RunConfig::from_json(r#"{"p_occ": 1.5}"#).is_err());
        assert!(RunConfig::from_json(r#"{"joints": 5, "flip_permutation": [0, 1]}"#).is_err());
        let c = RunConfig::from_json(r#"{"p_occ": 0.25, "crop_mode": "planar"}"#).unwrap();
        assert_eq!(c.augment_config().occlusion.p_occ, 0.25);
        assert_eq!(c.crop_mode, CropMode::Planar);
    }
}
