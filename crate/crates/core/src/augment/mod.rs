//! Synthetic occlusion plus geometric and appearance augmentation.
//!
//! Every random choice for a frame comes from generators derived by hashing
//! `(seed, stream, frame_id)`, so a frame's augmentation does not depend on
//! which other frames are processed, in what order, or on how many threads.

mod appearance;
mod geometric;
mod paste;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use appearance::{appearance_augment, gaussian_blur};
pub use geometric::{augment_transform, geometric_augment, similarity_matrix};
pub use paste::{occlude_frame, occlusion_record, paste, paste_into, OcclusionRecord, PixelRect};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OcclusionConfig {
    pub p_occ: f64,
    pub count_min: usize,
    pub count_max: usize,
    /// Occluder size as a fraction of the crop side (larger cutout side).
    pub scale_range: [f64; 2],
}

impl Default for OcclusionConfig {
    fn default() -> Self {
        OcclusionConfig {
            p_occ: 0.5,
            count_min: 1,
            count_max: 8,
            scale_range: [0.1, 0.7],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometricConfig {
    /// Rotation drawn uniformly from `±max_rotation_deg`.
    pub max_rotation_deg: f64,
    /// Translation per axis drawn from `±max_translation_frac · crop side`.
    pub max_translation_frac: f64,
    pub zoom_range: [f64; 2],
    pub hflip_prob: f64,
}

impl Default for GeometricConfig {
    fn default() -> Self {
        GeometricConfig {
            max_rotation_deg: 20.0,
            max_translation_frac: 0.1,
            zoom_range: [0.85, 1.15],
            hflip_prob: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppearanceConfig {
    pub blur_sigma_range: [f64; 2],
    pub gain_range: [f64; 2],
}

impl Default for AppearanceConfig {
    fn default() -> Self {
        AppearanceConfig {
            blur_sigma_range: [0.0, 2.0],
            gain_range: [0.8, 1.2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub occlusion: OcclusionConfig,
    pub geometric: GeometricConfig,
    pub appearance: AppearanceConfig,
    pub crop_side: u32,
}

impl AugmentConfig {
    pub fn with_crop_side(crop_side: u32) -> Self {
        AugmentConfig {
            crop_side,
            ..AugmentConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        let o = &self.occlusion;
        if !(0.0..=1.0).contains(&o.p_occ) {
            return bad("p_occ must lie in [0, 1]");
        }
        if o.count_min < 1 || o.count_min > o.count_max {
            return bad("occluder counts need 1 <= count_min <= count_max");
        }
        if !(o.scale_range[0] > 0.0 && o.scale_range[0] <= o.scale_range[1]) {
            return bad("occluder scale range must be positive and ordered");
        }
        let g = &self.geometric;
        if !(g.max_rotation_deg >= 0.0 && g.max_translation_frac >= 0.0) {
            return bad("rotation and translation limits must be non-negative");
        }
        if !(g.zoom_range[0] > 0.0 && g.zoom_range[0] <= g.zoom_range[1]) {
            return bad("zoom range must be positive and ordered");
        }
        if !(0.0..=1.0).contains(&g.hflip_prob) {
            return bad("hflip probability must lie in [0, 1]");
        }
        let a = &self.appearance;
        if !(a.blur_sigma_range[0] >= 0.0 && a.blur_sigma_range[0] <= a.blur_sigma_range[1]) {
            return bad("blur sigma range must be non-negative and ordered");
        }
        if !(a.gain_range[0] > 0.0 && a.gain_range[0] <= a.gain_range[1]) {
            return bad("gain range must be positive and ordered");
        }
        if self.crop_side == 0 {
            return bad("crop side must be positive");
        }
        Ok(())
    }
}

/// All random choices for one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugParams {
    pub occlude: bool,
    pub occluder_ids: Vec<usize>,
    /// Cutout centers in crop pixels.
    pub positions: Vec<[f64; 2]>,
    /// Cutout sizes as fractions of the crop side.
    pub scales: Vec<f64>,
    pub rotation_deg: f64,
    pub translation_px: [f64; 2],
    pub zoom: f64,
    pub hflip: bool,
    pub blur_sigma: f64,
    pub color_gains: [f64; 3],
}

impl AugParams {
    pub fn identity() -> Self {
        AugParams {
            occlude: false,
            occluder_ids: Vec::new(),
            positions: Vec::new(),
            scales: Vec::new(),
            rotation_deg: 0.0,
            translation_px: [0.0, 0.0],
            zoom: 1.0,
            hflip: false,
            blur_sigma: 0.0,
            color_gains: [1.0, 1.0, 1.0],
        }
    }
}

/// Generator for one `(seed, stream, frame_id)` triple.
pub fn frame_rng(seed: u64, stream: &str, frame_id: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((stream.len() as u64).to_le_bytes());
    h.update(stream.as_bytes());
    h.update(frame_id.as_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

fn uniform(rng: &mut impl Rng, range: [f64; 2]) -> f64 {
    if range[0] == range[1] {
        range[0]
    } else {
        rng.gen_range(range[0]..range[1])
    }
}

pub fn sample_params(config: &AugmentConfig, library_len: usize, seed: u64, frame_id: &str) -> Result<AugParams> {
    config.validate()?;
    let side = config.crop_side as f64;

    // Occlusion and transform draws use separate streams so changing p_occ
    // leaves every frame's geometry untouched.
    let mut rng = frame_rng(seed, "occlusion", frame_id);
    let o = &config.occlusion;
    let occlude = rng.gen::<f64>() < o.p_occ;
    let mut params = AugParams {
        occlude,
        ..AugParams::identity()
    };
    if occlude {
        if library_len == 0 {
            return Err(Error::EmptyLibrary);
        }
        let count = rng.gen_range(o.count_min..=o.count_max);
        for _ in 0..count {
            params.occluder_ids.push(rng.gen_range(0..library_len));
            params.positions.push([rng.gen_range(0.0..side), rng.gen_range(0.0..side)]);
            params.scales.push(uniform(&mut rng, o.scale_range));
        }
    }

    let mut rng = frame_rng(seed, "transform", frame_id);
    let g = &config.geometric;
    params.rotation_deg = uniform(&mut rng, [-g.max_rotation_deg, g.max_rotation_deg]);
    let t = g.max_translation_frac * side;
    params.translation_px = [uniform(&mut rng, [-t, t]), uniform(&mut rng, [-t, t])];
    params.zoom = uniform(&mut rng, g.zoom_range);
    params.hflip = rng.gen::<f64>() < g.hflip_prob;
    let a = &config.appearance;
    params.blur_sigma = uniform(&mut rng, a.blur_sigma_range);
    for gain in &mut params.color_gains {
        *gain = uniform(&mut rng, a.gain_range);
    }
    Ok(params)
}
