//! Volumetric heatmap decoding.
//!
//! The backbone emits `J·D` channels on an `Hh × Wh` grid; channel `k`
//! belongs to joint `k / D`, depth slice `k % D`. Each joint's `D × Hh × Wh`
//! volume is normalized with a single softmax and decoded by soft-argmax
//! (expected grid coordinate). A separate 1D head decodes the absolute depth
//! of the person center over `[0, 10 m]`.

mod softargmax;
pub mod tensor_file;

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::Float;
use serde::{Deserialize, Serialize};

pub use softargmax::{
    soft_argmax1, soft_argmax1_grad, soft_argmax3, soft_argmax3_grad, soft_argmax3_vjp, softmax_volume,
    SoftArgmaxJacobian,
};

use crate::error::{Error, Result};

/// Scalar type the decoder runs in: `f32` for throughput, `f64` for
/// gradient checks and training.
pub trait Real: Float + Sum + Send + Sync + Debug + Default + 'static {}

impl<T: Float + Sum + Send + Sync + Debug + Default + 'static> Real for T {}

pub(crate) fn cast<T: Real>(v: f64) -> T {
    T::from(v).expect("f64 converts to any float type")
}

/// Raw backbone tensors for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct BackboneOutput<T> {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Channel-last: index `(v·Wh + u)·C + k`.
    pub spatial: Vec<T>,
    pub depth: Vec<T>,
}

impl<T: Real> BackboneOutput<T> {
    pub fn new(height: usize, width: usize, channels: usize, spatial: Vec<T>, depth: Vec<T>) -> Result<Self> {
        if spatial.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "{} spatial values for {height}x{width}x{channels}",
                spatial.len()
            )));
        }
        if depth.is_empty() {
            return Err(Error::Shape("empty depth head".into()));
        }
        if spatial.iter().chain(&depth).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite logits".into()));
        }
        Ok(BackboneOutput {
            height,
            width,
            channels,
            spatial,
            depth,
        })
    }

    /// Channel-last spatial layout of a per-joint set of volumes.
    pub fn from_volumes(volumes: &[Volume<T>], depth: Vec<T>) -> Result<Self> {
        let first = volumes.first().ok_or_else(|| Error::Shape("no volumes".into()))?;
        let (d, h, w) = (first.depth, first.height, first.width);
        if volumes.iter().any(|v| (v.depth, v.height, v.width) != (d, h, w)) {
            return Err(Error::Shape("volumes differ in shape".into()));
        }
        let channels = volumes.len() * d;
        let mut spatial = vec![T::zero(); h * w * channels];
        for (j, vol) in volumes.iter().enumerate() {
            for di in 0..d {
                for v in 0..h {
                    for u in 0..w {
                        spatial[(v * w + u) * channels + j * d + di] = vol.get(di, v, u);
                    }
                }
            }
        }
        BackboneOutput::new(h, w, channels, spatial, depth)
    }
}

/// One joint's logits, index `(d·Hh + v)·Wh + u`.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume<T> {
    pub depth: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<T>,
}

impl<T: Real> Volume<T> {
    pub fn new(depth: usize, height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != depth * height * width || data.is_empty() {
            return Err(Error::Shape(format!("{} values for volume {depth}x{height}x{width}", data.len())));
        }
        Ok(Volume {
            depth,
            height,
            width,
            data,
        })
    }

    pub fn filled(depth: usize, height: usize, width: usize, value: T) -> Self {
        Volume {
            depth,
            height,
            width,
            data: vec![value; depth * height * width],
        }
    }

    pub fn index(&self, d: usize, v: usize, u: usize) -> usize {
        (d * self.height + v) * self.width + u
    }

    pub fn get(&self, d: usize, v: usize, u: usize) -> T {
        self.data[self.index(d, v, u)]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VolumetricHeatmapSet<T> {
    pub volumes: Vec<Volume<T>>,
    pub depth_logits: Vec<T>,
}

/// Reindexes channel `k` to joint `k / D`, depth slice `k % D`.
pub fn reshape_channels<T: Real>(output: &BackboneOutput<T>, joints: usize, depth: usize) -> Result<VolumetricHeatmapSet<T>> {
    if joints == 0 || depth == 0 || output.channels != joints * depth {
        return Err(Error::Shape(format!(
            "{} channels cannot be split into {joints} joints x {depth} depth bins",
            output.channels
        )));
    }
    let (h, w, c) = (output.height, output.width, output.channels);
    let volumes = (0..joints)
        .map(|j| {
            let mut data = Vec::with_capacity(depth * h * w);
            for d in 0..depth {
                for v in 0..h {
                    for u in 0..w {
                        data.push(output.spatial[(v * w + u) * c + j * depth + d]);
                    }
                }
            }
            Volume {
                depth,
                height: h,
                width: w,
                data,
            }
        })
        .collect();
    Ok(VolumetricHeatmapSet {
        volumes,
        depth_logits: output.depth.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub out_width: u32,
    pub out_height: u32,
    pub heatmap_width: usize,
    pub heatmap_height: usize,
    pub depth_bins: usize,
    pub abs_depth_bins: usize,
    /// Relative depth axis spans `±rel_depth_range_mm`.
    pub rel_depth_range_mm: f64,
    /// Absolute depth axis spans `[0, abs_depth_range_mm]`.
    pub abs_depth_range_mm: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            out_width: 256,
            out_height: 256,
            heatmap_width: 16,
            heatmap_height: 16,
            depth_bins: 16,
            abs_depth_bins: 32,
            rel_depth_range_mm: 1000.0,
            abs_depth_range_mm: 10_000.0,
        }
    }
}

/// Cell-center coordinates of every heatmap axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinateGrid {
    /// Crop pixels, one per heatmap column.
    pub x: Vec<f64>,
    /// Crop pixels, one per heatmap row.
    pub y: Vec<f64>,
    /// Relative depth in mm, one per depth slice.
    pub z: Vec<f64>,
    /// Absolute depth in mm, one per bin of the 1D head.
    pub zstar: Vec<f64>,
}

impl CoordinateGrid {
    pub fn new(config: &GridConfig) -> Result<Self> {
        let GridConfig {
            out_width,
            out_height,
            heatmap_width,
            heatmap_height,
            depth_bins,
            abs_depth_bins,
            rel_depth_range_mm,
            abs_depth_range_mm,
        } = *config;
        if heatmap_width == 0 || heatmap_height == 0 || depth_bins == 0 || abs_depth_bins == 0 {
            return Err(Error::InvalidArgument("grid axes must be non-empty".into()));
        }
        if !(rel_depth_range_mm > 0.0 && abs_depth_range_mm > 0.0) || out_width == 0 || out_height == 0 {
            return Err(Error::InvalidArgument("grid ranges must be positive".into()));
        }
        let centers = |n: usize, lo: f64, span: f64| -> Vec<f64> {
            (0..n).map(|i| lo + (i as f64 + 0.5) * span / n as f64).collect()
        };
        Ok(CoordinateGrid {
            x: centers(heatmap_width, 0.0, out_width as f64),
            y: centers(heatmap_height, 0.0, out_height as f64),
            z: centers(depth_bins, -rel_depth_range_mm, 2.0 * rel_depth_range_mm),
            zstar: centers(abs_depth_bins, 0.0, abs_depth_range_mm),
        })
    }

    fn check_volume<T>(&self, vol: &Volume<T>) -> Result<()> {
        if (vol.depth, vol.height, vol.width) != (self.z.len(), self.y.len(), self.x.len()) {
            return Err(Error::Shape(format!(
                "volume {}x{}x{} does not match grid {}x{}x{}",
                vol.depth,
                vol.height,
                vol.width,
                self.z.len(),
                self.y.len(),
                self.x.len()
            )));
        }
        Ok(())
    }
}

/// Image-space coordinates and depths decoded for every joint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodedPose {
    pub xy: Vec<[f64; 2]>,
    pub dz: Vec<f64>,
    pub zstar: f64,
}

pub fn decode<T: Real>(output: &BackboneOutput<T>, joints: usize, depth: usize, grid: &CoordinateGrid) -> Result<DecodedPose> {
    let set = reshape_channels(output, joints, depth)?;
    let mut xy = Vec::with_capacity(joints);
    let mut dz = Vec::with_capacity(joints);
    for vol in &set.volumes {
        let [x, y, z] = soft_argmax3(vol, grid)?;
        xy.push([x.to_f64().unwrap_or(f64::NAN), y.to_f64().unwrap_or(f64::NAN)]);
        dz.push(z.to_f64().unwrap_or(f64::NAN));
    }
    let zstar = soft_argmax1(&set.depth_logits, &grid.zstar)?
        .to_f64()
        .unwrap_or(f64::NAN);
    Ok(DecodedPose { xy, dz, zstar })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> CoordinateGrid {
        CoordinateGrid::new(&GridConfig::default()).unwrap()
    }

    #[test]
    fn grid_cell_centers() {
        let g = grid();
        assert_eq!(g.x.len(), 16);
        assert_eq!(g.x[0], 8.0);
        assert_eq!(g.x[15], 248.0);
        assert_eq!(g.z[0], -937.5);
        assert_eq!(g.z[15], 937.5);
        assert_eq!(g.zstar.len(), 32);
        assert_eq!(g.zstar[0], 156.25);
        assert_eq!(g.zstar[31], 9843.75);
        assert!(g.x.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn reshape_is_joint_major() {
        let (h, w, j, d) = (2, 3, 4, 5);
        let c = j * d;
        let spatial: Vec<f64> = (0..h * w * c).map(|i| i as f64).collect();
        let out = BackboneOutput::new(h, w, c, spatial.clone(), vec![0.0; 8]).unwrap();
        let set = reshape_channels(&out, j, d).unwrap();
        assert_eq!(set.volumes.len(), j);
        for k in 0..c {
            for v in 0..h {
                for u in 0..w {
                    assert_eq!(set.volumes[k / d].get(k % d, v, u), spatial[(v * w + u) * c + k]);
                }
            }
        }
        let total: f64 = set.volumes.iter().flat_map(|v| &v.data).sum();
        assert_eq!(total, spatial.iter().sum::<f64>());
        let back = BackboneOutput::from_volumes(&set.volumes, vec![0.0; 8]).unwrap();
        assert_eq!(back, out);
    }

    #[test]
    fn reshape_sixteen_cubed() {
        let c = 17 * 16;
        let out = BackboneOutput::new(16, 16, c, vec![0.5f32; 16 * 16 * c], vec![0.0; 32]).unwrap();
        let set = reshape_channels(&out, 17, 16).unwrap();
        assert_eq!(set.volumes.len(), 17);
        assert!(set.volumes.iter().all(|v| (v.depth, v.height, v.width) == (16, 16, 16)));
    }

    #[test]
    fn reshape_single_channel_is_identity() {
        let spatial = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let out = BackboneOutput::new(2, 3, 1, spatial.clone(), vec![0.0]).unwrap();
        let set = reshape_channels(&out, 1, 1).unwrap();
        assert_eq!(set.volumes[0].data, spatial);
    }

    #[test]
    fn reshape_rejects_indivisible_channels() {
        let out = BackboneOutput::new(1, 1, 7, vec![0.0; 7], vec![0.0]).unwrap();
        assert!(matches!(reshape_channels(&out, 2, 3), Err(Error::Shape(_))));
    }

    #[test]
    fn backbone_rejects_non_finite() {
        assert!(BackboneOutput::new(1, 1, 1, vec![f64::NAN], vec![0.0]).is_err());
        assert!(BackboneOutput::new(1, 1, 2, vec![0.0], vec![0.0]).is_err());
    }

    #[test]
    fn uniform_decode_is_centered() {
        let c = 17 * 16;
        let out = BackboneOutput::new(16, 16, c, vec![0.0f64; 16 * 16 * c], vec![0.0; 32]).unwrap();
        let p = decode(&out, 17, 16, &grid()).unwrap();
        for (xy, dz) in p.xy.iter().zip(&p.dz) {
            assert!((xy[0] - 128.0).abs() < 1e-9 && (xy[1] - 128.0).abs() < 1e-9);
            assert!(dz.abs() < 1e-9);
        }
        assert!((p.zstar - 5000.0).abs() < 1e-9);
    }

    #[test]
    fn one_hot_decode_hits_cells() {
        let g = grid();
        let cells = [(3, 4, 5), (0, 15, 0), (15, 0, 15)];
        let volumes: Vec<Volume<f64>> = cells
            .iter()
            .map(|&(d, v, u)| {
                let mut vol = Volume::filled(16, 16, 16, 0.0);
                let i = vol.index(d, v, u);
                vol.data[i] = 1000.0;
                vol
            })
            .collect();
        let mut depth = vec![0.0; 32];
        depth[20] = 1000.0;
        let out = BackboneOutput::from_volumes(&volumes, depth).unwrap();
        let p = decode(&out, 3, 16, &g).unwrap();
        for (j, &(d, v, u)) in cells.iter().enumerate() {
            assert!((p.xy[j][0] - g.x[u]).abs() < 1e-6);
            assert!((p.xy[j][1] - g.y[v]).abs() < 1e-6);
            assert!((p.dz[j] - g.z[d]).abs() < 1e-6);
        }
        assert!((p.zstar - g.zstar[20]).abs() < 1e-6);

        // permuting joints permutes the decoded outputs
        let permuted: Vec<_> = [2, 0, 1].iter().map(|&j| volumes[j].clone()).collect();
        let mut depth = vec![0.0; 32];
        depth[20] = 1000.0;
        let q = decode(&BackboneOutput::from_volumes(&permuted, depth).unwrap(), 3, 16, &g).unwrap();
        assert_eq!(q.xy, vec![p.xy[2], p.xy[0], p.xy[1]]);
        assert_eq!(q.dz, vec![p.dz[2], p.dz[0], p.dz[1]]);
    }
}
