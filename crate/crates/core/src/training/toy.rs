//! End-to-end toy training: per-sample free logits stand in for a backbone
//! and are optimized together with the global focal correction `c` by
//! plain gradient descent through the full decoding chain.
//!
//! Each joint's volume is separable, `h[d, v, u] = a_z[d] + a_y[v] + a_x[u]`.
//! The image-plane logits are fixed by default and encode the target's 2D
//! projection under the planted correction `c_true`, so matching the
//! camera-space targets forces `c` toward `c_true`.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{full_backward, snapshot_steps, triangular_lr, HeadGeometry, LossSpace, LrSchedule};
use crate::augment::frame_rng;
use crate::camera::{project, CropIntrinsics};
use crate::error::{Error, Result};
use crate::heatmap::{BackboneOutput, CoordinateGrid, GridConfig};
use crate::metrics::ensemble_average;
use crate::pose::Pose3D;

/// Logit standing in for "no mass here".
const FLOOR_LOGIT: f64 = -50.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyTrainConfig {
    pub steps: usize,
    pub schedule: LrSchedule,
    /// Multiplies the scheduled rate for the absolute-depth logits.
    pub depth_lr_scale: f64,
    /// Multiplies the scheduled rate for updates of `c`.
    pub c_lr_scale: f64,
    pub seed: u64,
    pub joints: usize,
    pub grid: GridConfig,
    pub focal: f64,
    /// Crop zoom `s` of every sample.
    pub crop_scale: f64,
    pub learn_c: bool,
    pub learn_xy: bool,
    pub c_init: f64,
    /// Correction used to render the 2D evidence.
    pub c_true: f64,
    pub loss_space: LossSpace,
    pub snapshots: usize,
    /// Probability that a sample's evidence is occluded.
    pub p_occ: f64,
    /// Fraction of joints whose 2D evidence is flattened in occluded samples.
    pub occluded_joint_frac: f64,
}

impl Default for ToyTrainConfig {
    fn default() -> Self {
        ToyTrainConfig {
            steps: 500,
            schedule: LrSchedule {
                base_lr: 0.05,
                max_lr: 1.0,
                period: 100,
            },
            depth_lr_scale: 0.02,
            c_lr_scale: 5e-6,
            seed: 0,
            joints: 17,
            grid: GridConfig::default(),
            focal: 1500.0,
            crop_scale: 0.3,
            learn_c: true,
            learn_xy: false,
            c_init: 1.0,
            c_true: 1.1,
            loss_space: LossSpace::Absolute,
            snapshots: 3,
            p_occ: 0.0,
            occluded_joint_frac: 0.3,
        }
    }
}

impl ToyTrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.steps < 1 {
            return bad("steps must be at least 1");
        }
        if self.joints < 1 {
            return bad("joints must be at least 1");
        }
        if !(self.focal > 0.0 && self.crop_scale > 0.0 && self.c_init > 0.0 && self.c_true > 0.0) {
            return bad("focal, crop scale and corrections must be positive");
        }
        if !(self.c_lr_scale >= 0.0 && self.depth_lr_scale >= 0.0) {
            return bad("learning-rate scales must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.p_occ) || !(0.0..=1.0).contains(&self.occluded_joint_frac) {
            return bad("occlusion probabilities must lie in [0, 1]");
        }
        Ok(())
    }

    fn camera(&self, c: f64) -> CropIntrinsics {
        CropIntrinsics {
            focal: self.focal,
            scale: self.crop_scale,
            correction: c,
            width: self.grid.out_width as f64,
            height: self.grid.out_height as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean loss over samples after `t` updates, `t = 0..=steps`.
    pub loss_curve: Vec<f64>,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub final_c: f64,
    pub snapshot_steps: Vec<usize>,
    /// `[snapshot][sample]` predicted poses.
    pub snapshot_predictions: Vec<Vec<Pose3D>>,
    pub snapshot_losses: Vec<f64>,
    pub ensemble_predictions: Vec<Pose3D>,
    pub ensemble_loss: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSetConfig {
    pub samples: usize,
    pub seed: u64,
    pub depth_range_mm: [f64; 2],
    /// Joint offsets from the person center, per axis.
    pub spread_mm: f64,
}

impl Default for SyntheticSetConfig {
    fn default() -> Self {
        SyntheticSetConfig {
            samples: 8,
            seed: 0,
            depth_range_mm: [3500.0, 5500.0],
            spread_mm: 600.0,
        }
    }
}

/// Random camera-space poses with joint 0 as root.
pub fn synthetic_targets(config: &SyntheticSetConfig, joints: usize) -> Result<Vec<Pose3D>> {
    if joints == 0 || config.samples == 0 {
        return Err(Error::InvalidArgument("need at least one sample and one joint".into()));
    }
    (0..config.samples)
        .map(|i| {
            let mut rng = frame_rng(config.seed, "toy-target", &i.to_string());
            let [lo, hi] = config.depth_range_mm;
            let center = if lo < hi { rng.gen_range(lo..hi) } else { lo };
            let s = config.spread_mm;
            let pts = (0..joints)
                .map(|_| {
                    [
                        rng.gen_range(-s..=s),
                        rng.gen_range(-s..=s),
                        center + rng.gen_range(-s..=s),
                    ]
                })
                .collect();
            Pose3D::new(pts, 0)
        })
        .collect()
}

/// Logits over `centers` whose softmax mean is exactly `target` (up to the
/// floor mass): weight split between the two bracketing cell centers.
fn bracket_logits(centers: &[f64], target: f64) -> Result<Vec<f64>> {
    let n = centers.len();
    let mut out = vec![FLOOR_LOGIT; n];
    if n == 1 || target <= centers[0] || target >= centers[n - 1] {
        if n > 1 && (target < centers[0] || target > centers[n - 1]) {
            return Err(Error::InvalidArgument(format!(
                "target {target} lies outside the decodable range [{}, {}]",
                centers[0],
                centers[n - 1]
            )));
        }
        let i = if target <= centers[0] { 0 } else { n - 1 };
        out[i] = 0.0;
        return Ok(out);
    }
    let i = centers.partition_point(|&g| g <= target) - 1;
    let w = (centers[i + 1] - target) / (centers[i + 1] - centers[i]);
    out[i] = w.ln().max(FLOOR_LOGIT);
    out[i + 1] = (1.0 - w).ln().max(FLOOR_LOGIT);
    Ok(out)
}

#[derive(Debug, Clone)]
struct SampleParams {
    ax: Vec<Vec<f64>>,
    ay: Vec<Vec<f64>>,
    az: Vec<Vec<f64>>,
    depth: Vec<f64>,
}

impl SampleParams {
    fn assemble(&self, depth_bins: usize) -> Result<BackboneOutput<f64>> {
        let joints = self.ax.len();
        let (h, w) = (self.ay[0].len(), self.ax[0].len());
        let c = joints * depth_bins;
        let mut spatial = vec![0.0; h * w * c];
        for v in 0..h {
            for u in 0..w {
                let base = (v * w + u) * c;
                for j in 0..joints {
                    let xy = self.ay[j][v] + self.ax[j][u];
                    for d in 0..depth_bins {
                        spatial[base + j * depth_bins + d] = xy + self.az[j][d];
                    }
                }
            }
        }
        BackboneOutput::new(h, w, c, spatial, self.depth.clone())
    }
}

struct SampleGrad {
    loss: f64,
    pred: Pose3D,
    params: SampleParams,
    correction: f64,
}

fn sample_gradient(params: &SampleParams, geom: &HeadGeometry, gt: &Pose3D, space: LossSpace) -> Result<SampleGrad> {
    let out = params.assemble(geom.depth_bins)?;
    let g = full_backward(&out, geom, gt, space)?;
    let (h, w, c, depth) = (out.height, out.width, out.channels, geom.depth_bins);
    let joints = geom.joints;
    let mut grad = SampleParams {
        ax: vec![vec![0.0; w]; joints],
        ay: vec![vec![0.0; h]; joints],
        az: vec![vec![0.0; depth]; joints],
        depth: g.depth,
    };
    for v in 0..h {
        for u in 0..w {
            let base = (v * w + u) * c;
            for j in 0..joints {
                for d in 0..depth {
                    let e = g.spatial[base + j * depth + d];
                    grad.ax[j][u] += e;
                    grad.ay[j][v] += e;
                    grad.az[j][d] += e;
                }
            }
        }
    }
    Ok(SampleGrad {
        loss: g.loss,
        pred: g.pred,
        params: grad,
        correction: g.correction,
    })
}

fn axpy(x: &mut [f64], a: f64, y: &[f64]) {
    for (xi, yi) in x.iter_mut().zip(y) {
        *xi -= a * yi;
    }
}

pub fn toy_train(config: &ToyTrainConfig, targets: &[Pose3D]) -> Result<TrainReport> {
    config.validate()?;
    if targets.is_empty() {
        return Err(Error::InvalidArgument("no training targets".into()));
    }
    let grid = CoordinateGrid::new(&config.grid)?;
    let joints = config.joints;
    let depth_bins = config.grid.depth_bins;
    for t in targets {
        if t.num_joints() != joints {
            return Err(Error::InvalidArgument(format!(
                "target has {} joints, config expects {joints}",
                t.num_joints()
            )));
        }
    }

    let evidence_camera = config.camera(config.c_true);
    let mut params = targets
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let mut rng = frame_rng(config.seed, "toy-occlusion", &i.to_string());
            let occluded = rng.gen::<f64>() < config.p_occ;
            let mut ax = Vec::with_capacity(joints);
            let mut ay = Vec::with_capacity(joints);
            for p in &t.joints {
                let hidden = occluded && rng.gen::<f64>() < config.occluded_joint_frac;
                if hidden {
                    ax.push(vec![0.0; grid.x.len()]);
                    ay.push(vec![0.0; grid.y.len()]);
                } else {
                    let [u, v] = project(*p, &evidence_camera)?;
                    ax.push(bracket_logits(&grid.x, u)?);
                    ay.push(bracket_logits(&grid.y, v)?);
                }
            }
            Ok(SampleParams {
                ax,
                ay,
                az: vec![vec![0.0; depth_bins]; joints],
                depth: vec![0.0; grid.zstar.len()],
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let snaps = if config.snapshots == 0 {
        Vec::new()
    } else {
        let completed = config.steps / config.schedule.period;
        snapshot_steps(config.steps, &config.schedule, config.snapshots.min(completed))?
    };

    let mut c = config.c_init;
    let mut loss_curve = Vec::with_capacity(config.steps + 1);
    let mut snapshot_predictions = Vec::new();
    let mut snapshot_losses = Vec::new();
    let n = targets.len() as f64;
    for step in 0..=config.steps {
        let geom = HeadGeometry {
            joints,
            depth_bins,
            grid: grid.clone(),
            camera: config.camera(c),
        };
        let grads = params
            .par_iter()
            .zip(targets)
            .map(|(p, t)| sample_gradient(p, &geom, t, config.loss_space))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| match e {
                Error::NonPositiveDepth(_) => Error::Divergence {
                    step,
                    reason: e.to_string(),
                },
                other => other,
            })?;
        // Sequential sums keep results independent of the thread count.
        let loss = grads.iter().map(|g| g.loss).sum::<f64>() / n;
        if !loss.is_finite() {
            return Err(Error::Divergence {
                step,
                reason: format!("loss is {loss}"),
            });
        }
        loss_curve.push(loss);
        if snaps.contains(&step) {
            snapshot_predictions.push(grads.iter().map(|g| g.pred.clone()).collect::<Vec<_>>());
            snapshot_losses.push(loss);
        }
        if step == config.steps {
            break;
        }

        let lr = triangular_lr(step, &config.schedule);
        for (p, g) in params.iter_mut().zip(&grads) {
            for j in 0..joints {
                axpy(&mut p.az[j], lr, &g.params.az[j]);
                if config.learn_xy {
                    axpy(&mut p.ax[j], lr, &g.params.ax[j]);
                    axpy(&mut p.ay[j], lr, &g.params.ay[j]);
                }
            }
            axpy(&mut p.depth, lr * config.depth_lr_scale, &g.params.depth);
        }
        if config.learn_c {
            let grad_c = grads.iter().map(|g| g.correction).sum::<f64>() / n;
            c -= lr * config.c_lr_scale * grad_c;
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::Divergence {
                    step,
                    reason: format!("focal correction left the positive range: {c}"),
                });
            }
        }
    }

    let (ensemble_predictions, ensemble_loss) = if snapshot_predictions.is_empty() {
        (Vec::new(), None)
    } else {
        let preds = (0..targets.len())
            .map(|i| {
                let members: Vec<Pose3D> = snapshot_predictions.iter().map(|s| s[i].clone()).collect();
                ensemble_average(&members)
            })
            .collect::<Result<Vec<_>>>()?;
        let loss = preds
            .iter()
            .zip(targets)
            .map(|(p, t)| super::l1_loss(p, t, config.loss_space).map(|r| r.value))
            .sum::<Result<f64>>()?
            / n;
        (preds, Some(loss))
    };

    Ok(TrainReport {
        initial_loss: loss_curve[0],
        final_loss: *loss_curve.last().expect("curve has steps + 1 entries"),
        loss_curve,
        final_c: c,
        snapshot_steps: snaps,
        snapshot_predictions,
        snapshot_losses,
        ensemble_predictions,
        ensemble_loss,
    })
}
