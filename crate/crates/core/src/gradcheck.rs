//! Central finite-difference checks of every analytic derivative in the
//! decoding chain.
//!
//! The error of one trial is the worst, over each Jacobian block (one output
//! coordinate or one input group), of
//! `‖analytic − numeric‖∞ / max(‖analytic‖∞, ‖numeric‖∞)`.
//! Blocking keeps small-magnitude columns from hiding behind large ones.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::augment::frame_rng;
use crate::camera::{back_project, back_project_grad, CropIntrinsics};
use crate::error::{Error, Result};
use crate::heatmap::{soft_argmax1, soft_argmax1_grad, soft_argmax3, soft_argmax3_grad, BackboneOutput, CoordinateGrid, GridConfig, Volume};
use crate::pose::Pose3D;
use crate::training::{forward_pose, full_backward, l1_loss, HeadGeometry, LossSpace};

pub const DEFAULT_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckOptions {
    pub trials: usize,
    pub seed: u64,
    pub tolerance: f64,
    /// Perturbs one analytic back-projection entry so the check must fail.
    pub inject_bug: bool,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            trials: 100,
            seed: 0,
            tolerance: DEFAULT_TOLERANCE,
            inject_bug: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub name: String,
    pub trials: usize,
    pub max_rel_error: f64,
    pub worst_trial: usize,
    /// Inputs of the worst trial, enough to reproduce it.
    pub worst_inputs: serde_json::Value,
    pub passed: bool,
}

struct Trial {
    error: f64,
    inputs: serde_json::Value,
}

pub fn block_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic.iter().zip(numeric).map(|(a, n)| (a - n).abs()).fold(0.0, f64::max);
    let scale = numeric
        .iter()
        .chain(analytic)
        .map(|v| v.abs())
        .fold(0.0, f64::max);
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

fn central<F: FnMut(f64) -> f64>(mut f: F, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

fn small_grid() -> CoordinateGrid {
    CoordinateGrid::new(&GridConfig {
        out_width: 64,
        out_height: 48,
        heatmap_width: 5,
        heatmap_height: 4,
        depth_bins: 3,
        abs_depth_bins: 8,
        rel_depth_range_mm: 1000.0,
        abs_depth_range_mm: 10_000.0,
    })
    .expect("static grid is valid")
}

fn soft_argmax3_trial(rng: &mut ChaCha8Rng, grid: &CoordinateGrid) -> Result<Trial> {
    let (d, h, w) = (grid.z.len(), grid.y.len(), grid.x.len());
    let data: Vec<f64> = (0..d * h * w).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let vol = Volume::new(d, h, w, data.clone())?;
    let jac = soft_argmax3_grad(&vol, grid)?;
    let step = 1e-5;
    let mut numeric = [Vec::new(), Vec::new(), Vec::new()];
    for k in 0..data.len() {
        let eval = |delta: f64| -> Result<[f64; 3]> {
            let mut v = vol.clone();
            v.data[k] += delta;
            soft_argmax3(&v, grid)
        };
        let (plus, minus) = (eval(step)?, eval(-step)?);
        for a in 0..3 {
            numeric[a].push((plus[a] - minus[a]) / (2.0 * step));
        }
    }
    let error = block_error(&jac.x, &numeric[0])
        .max(block_error(&jac.y, &numeric[1]))
        .max(block_error(&jac.z, &numeric[2]));
    Ok(Trial {
        error,
        inputs: json!({ "dims": [d, h, w], "logits": data }),
    })
}

fn soft_argmax1_trial(rng: &mut ChaCha8Rng, grid: &CoordinateGrid) -> Result<Trial> {
    let logits: Vec<f64> = (0..grid.zstar.len()).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let analytic = soft_argmax1_grad(&logits, &grid.zstar)?;
    let numeric = (0..logits.len())
        .map(|k| {
            let f = |v: f64| {
                let mut l = logits.clone();
                l[k] = v;
                soft_argmax1(&l, &grid.zstar).expect("shape fixed")
            };
            central(f, logits[k], 1e-5)
        })
        .collect::<Vec<_>>();
    Ok(Trial {
        error: block_error(&analytic, &numeric),
        inputs: json!({ "logits": logits, "coords": grid.zstar }),
    })
}

fn back_project_trial(rng: &mut ChaCha8Rng, inject_bug: bool) -> Result<Trial> {
    let x = rng.gen_range(0.0..256.0);
    let y = rng.gen_range(0.0..256.0);
    let dz = rng.gen_range(-1000.0..1000.0);
    let zstar = rng.gen_range(2000.0..8000.0);
    let k = CropIntrinsics {
        focal: 1500.0,
        scale: rng.gen_range(0.1..1.0),
        correction: rng.gen_range(0.7..1.3),
        width: 256.0,
        height: 256.0,
    };
    let mut jac = back_project_grad(x, y, dz, zstar, &k)?;
    if inject_bug {
        jac.wrt_x[0] *= 1.0 + 1e-3;
    }
    let bp = |x: f64, y: f64, dz: f64, zs: f64, c: f64| {
        back_project(x, y, dz, zs, &CropIntrinsics { correction: c, ..k }).expect("depth stays positive")
    };
    let h = |v: f64| 1e-6 * v.abs().max(1.0);
    let c = k.correction;
    let columns: [([f64; 3], Box<dyn Fn(f64) -> [f64; 3]>, f64); 5] = [
        (jac.wrt_x, Box::new(|v| bp(v, y, dz, zstar, c)), x),
        (jac.wrt_y, Box::new(|v| bp(x, v, dz, zstar, c)), y),
        (jac.wrt_dz, Box::new(|v| bp(x, y, v, zstar, c)), dz),
        (jac.wrt_zstar, Box::new(|v| bp(x, y, dz, v, c)), zstar),
        (jac.wrt_c, Box::new(|v| bp(x, y, dz, zstar, v)), c),
    ];
    let mut error: f64 = 0.0;
    for (analytic, f, at) in &columns {
        let step = h(*at);
        let (p, m) = (f(at + step), f(at - step));
        let numeric: Vec<f64> = (0..3).map(|i| (p[i] - m[i]) / (2.0 * step)).collect();
        error = error.max(block_error(analytic, &numeric));
    }
    Ok(Trial {
        error,
        inputs: json!({ "x": x, "y": y, "dz": dz, "zstar": zstar, "intrinsics": k }),
    })
}

fn chain_trial(rng: &mut ChaCha8Rng, grid: &CoordinateGrid) -> Result<Trial> {
    let joints = 3;
    let depth_bins = grid.z.len();
    let geom = HeadGeometry {
        joints,
        depth_bins,
        grid: grid.clone(),
        camera: CropIntrinsics {
            focal: 1500.0,
            scale: rng.gen_range(0.1..0.5),
            correction: rng.gen_range(0.8..1.2),
            width: 64.0,
            height: 48.0,
        },
    };
    let (h, w) = (grid.y.len(), grid.x.len());
    let spatial: Vec<f64> = (0..h * w * joints * depth_bins).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let depth: Vec<f64> = (0..grid.zstar.len()).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let out = BackboneOutput::new(h, w, joints * depth_bins, spatial, depth)?;
    let root = rng.gen_range(0..joints);
    let space = if rng.gen::<bool>() { LossSpace::Absolute } else { LossSpace::RootRelative };
    let pred = forward_pose(&out, &geom, root)?;
    // Offsets of at least 1 mm keep every coordinate clear of the L1 kink;
    // the root's larger offset keeps root-relative differences clear too.
    let gt = Pose3D::new(
        pred.joints
            .iter()
            .enumerate()
            .map(|(j, p)| {
                let range = if j == root { 100.0..150.0 } else { 1.0..50.0 };
                p.map(|v| {
                    let mag = rng.gen_range(range.clone());
                    if rng.gen::<bool>() {
                        v + mag
                    } else {
                        v - mag
                    }
                })
            })
            .collect(),
        root,
    )?;
    let g = full_backward(&out, &geom, &gt, space)?;
    let loss = |o: &BackboneOutput<f64>, c: f64| -> f64 {
        let geom = HeadGeometry {
            camera: CropIntrinsics { correction: c, ..geom.camera },
            ..geom.clone()
        };
        l1_loss(&forward_pose(o, &geom, root).expect("valid logits"), &gt, space)
            .expect("matching shapes")
            .value
    };
    let step = 1e-6;
    let c = geom.camera.correction;
    let numeric_spatial: Vec<f64> = (0..out.spatial.len())
        .map(|k| {
            let mut o = out.clone();
            central(
                |v| {
                    o.spatial[k] = v;
                    loss(&o, c)
                },
                out.spatial[k],
                step,
            )
        })
        .collect();
    let numeric_depth: Vec<f64> = (0..out.depth.len())
        .map(|k| {
            let mut o = out.clone();
            central(
                |v| {
                    o.depth[k] = v;
                    loss(&o, c)
                },
                out.depth[k],
                step,
            )
        })
        .collect();
    let numeric_c = central(|v| loss(&out, v), c, step);
    let error = block_error(&g.spatial, &numeric_spatial)
        .max(block_error(&g.depth, &numeric_depth))
        .max(block_error(&[g.correction], &[numeric_c]));
    Ok(Trial {
        error,
        inputs: json!({
            "spatial": out.spatial,
            "depth": out.depth,
            "dims": [h, w, joints * depth_bins],
            "intrinsics": geom.camera,
            "root": root,
            "space": space,
            "gt": gt.joints,
        }),
    })
}

fn run_suite<F>(name: &str, opts: &GradcheckOptions, trial: F) -> Result<SuiteReport>
where
    F: Fn(&mut ChaCha8Rng) -> Result<Trial> + Sync,
{
    let results = (0..opts.trials)
        .into_par_iter()
        .map(|i| trial(&mut frame_rng(opts.seed, name, &i.to_string())))
        .collect::<Result<Vec<_>>>()?;
    let (worst_trial, worst) = results
        .iter()
        .enumerate()
        .fold(None::<(usize, &Trial)>, |best, (i, t)| match best {
            Some((_, b)) if !(t.error > b.error) => best,
            _ => Some((i, t)),
        })
        .ok_or_else(|| Error::InvalidArgument("at least one trial is required".into()))?;
    Ok(SuiteReport {
        name: name.to_string(),
        trials: opts.trials,
        max_rel_error: worst.error,
        worst_trial,
        worst_inputs: worst.inputs.clone(),
        passed: worst.error < opts.tolerance,
    })
}

/// Runs the soft-argmax, back-projection and full-chain suites.
pub fn run_gradcheck(opts: &GradcheckOptions) -> Result<Vec<SuiteReport>> {
    if opts.trials == 0 {
        return Err(Error::InvalidArgument("at least one trial is required".into()));
    }
    let grid = small_grid();
    let default_grid = CoordinateGrid::new(&GridConfig::default())?;
    Ok(vec![
        run_suite("soft_argmax3", opts, |rng| soft_argmax3_trial(rng, &grid))?,
        run_suite("soft_argmax1", opts, |rng| soft_argmax1_trial(rng, &default_grid))?,
        run_suite("back_project", opts, |rng| back_project_trial(rng, opts.inject_bug))?,
        run_suite("full_backward", opts, |rng| chain_trial(rng, &grid))?,
    ])
}
