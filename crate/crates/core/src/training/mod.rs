//! L1 pose loss and its analytic backward pass through back-projection and
//! soft-argmax, the cyclical learning-rate schedule, and a toy trainer.

mod schedule;
pub mod toy;

use serde::{Deserialize, Serialize};

pub use schedule::{snapshot_steps, triangular_lr, LrSchedule};
pub use toy::{synthetic_targets, toy_train, SyntheticSetConfig, ToyTrainConfig, TrainReport};

use crate::camera::{back_project, back_project_grad, CropIntrinsics};
use crate::error::{Error, Result};
use crate::heatmap::{reshape_channels, soft_argmax1, soft_argmax1_grad, soft_argmax3, soft_argmax3_vjp, BackboneOutput, CoordinateGrid};
use crate::pose::Pose3D;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossSpace {
    RootRelative,
    #[default]
    Absolute,
}

impl std::str::FromStr for LossSpace {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "root_relative" => Ok(LossSpace::RootRelative),
            "absolute" => Ok(LossSpace::Absolute),
            other => Err(Error::InvalidArgument(format!("unknown loss space {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    /// Mean absolute error per coordinate, mm.
    pub value: f64,
    /// `∂value/∂pred`, one 3-vector per joint.
    pub grad: Vec<[f64; 3]>,
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn l1_loss(pred: &Pose3D, gt: &Pose3D, space: LossSpace) -> Result<LossReport> {
    pred.check_compatible(gt)?;
    let (p, g) = match space {
        LossSpace::Absolute => (pred.clone(), gt.clone()),
        LossSpace::RootRelative => (pred.root_relative(), gt.root_relative()),
    };
    let n = 3.0 * p.num_joints() as f64;
    let mut total = 0.0;
    let mut grad: Vec<[f64; 3]> = Vec::with_capacity(p.num_joints());
    for (a, b) in p.joints.iter().zip(&g.joints) {
        let mut row = [0.0; 3];
        for k in 0..3 {
            let d = a[k] - b[k];
            total += d.abs();
            row[k] = sign(d) / n;
        }
        grad.push(row);
    }
    if space == LossSpace::RootRelative {
        // Every joint's relative coordinate depends on the root with weight -1.
        let r = p.root_index;
        let mut acc = [0.0; 3];
        for (j, row) in grad.iter().enumerate() {
            if j != r {
                for k in 0..3 {
                    acc[k] += row[k];
                }
            }
        }
        grad[r] = [-acc[0], -acc[1], -acc[2]];
    }
    Ok(LossReport { value: total / n, grad })
}

/// Fixed shape and camera of the prediction head. `camera.correction` is
/// the focal correction `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGeometry {
    pub joints: usize,
    pub depth_bins: usize,
    pub grid: CoordinateGrid,
    pub camera: CropIntrinsics,
}

/// Decodes backbone logits into a camera-space pose.
pub fn forward_pose(output: &BackboneOutput<f64>, geom: &HeadGeometry, root_index: usize) -> Result<Pose3D> {
    let set = reshape_channels(output, geom.joints, geom.depth_bins)?;
    let zstar = soft_argmax1(&set.depth_logits, &geom.grid.zstar)?;
    let joints = set
        .volumes
        .iter()
        .map(|vol| {
            let [x, y, dz] = soft_argmax3(vol, &geom.grid)?;
            back_project(x, y, dz, zstar, &geom.camera)
        })
        .collect::<Result<Vec<_>>>()?;
    Pose3D::new(joints, root_index)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub loss: f64,
    pub pred: Pose3D,
    /// Same layout as `BackboneOutput::spatial` (HWC, joint-major channels).
    pub spatial: Vec<f64>,
    pub depth: Vec<f64>,
    /// `∂loss/∂c`.
    pub correction: f64,
}

/// Loss and its gradient with respect to every logit and `c`, composed
/// from the L1 subgradient, the back-projection Jacobian and the
/// soft-argmax vector-Jacobian products.
pub fn full_backward(output: &BackboneOutput<f64>, geom: &HeadGeometry, gt: &Pose3D, space: LossSpace) -> Result<Gradients> {
    let set = reshape_channels(output, geom.joints, geom.depth_bins)?;
    if gt.num_joints() != geom.joints {
        return Err(Error::InvalidArgument(format!(
            "ground truth has {} joints, head predicts {}",
            gt.num_joints(),
            geom.joints
        )));
    }
    let zstar = soft_argmax1(&set.depth_logits, &geom.grid.zstar)?;
    let decoded = set
        .volumes
        .iter()
        .map(|vol| soft_argmax3(vol, &geom.grid))
        .collect::<Result<Vec<_>>>()?;
    let joints = decoded
        .iter()
        .map(|&[x, y, dz]| back_project(x, y, dz, zstar, &geom.camera))
        .collect::<Result<Vec<_>>>()?;
    let pred = Pose3D::new(joints, gt.root_index)?;
    let loss = l1_loss(&pred, gt, space)?;

    let dot = |a: [f64; 3], b: [f64; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    let (h, w, c) = (output.height, output.width, output.channels);
    let depth = geom.depth_bins;
    let mut spatial = vec![0.0; output.spatial.len()];
    let mut d_zstar = 0.0;
    let mut d_c = 0.0;
    for (j, (&[x, y, dz], &g)) in decoded.iter().zip(&loss.grad).enumerate() {
        let jac = back_project_grad(x, y, dz, zstar, &geom.camera)?;
        d_zstar += dot(g, jac.wrt_zstar);
        d_c += dot(g, jac.wrt_c);
        let upstream = [dot(g, jac.wrt_x), dot(g, jac.wrt_y), dot(g, jac.wrt_dz)];
        let vol_grad = soft_argmax3_vjp(&set.volumes[j], &geom.grid, upstream)?;
        let mut it = vol_grad.into_iter();
        for d in 0..depth {
            for v in 0..h {
                for u in 0..w {
                    spatial[(v * w + u) * c + j * depth + d] = it.next().expect("volume gradient has D*H*W entries");
                }
            }
        }
    }
    let depth_grad = soft_argmax1_grad(&set.depth_logits, &geom.grid.zstar)?
        .into_iter()
        .map(|g| g * d_zstar)
        .collect();
    Ok(Gradients {
        loss: loss.value,
        pred,
        spatial,
        depth: depth_grad,
        correction: d_c,
    })
}
