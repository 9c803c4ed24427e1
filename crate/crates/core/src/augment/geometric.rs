use image::RgbImage;
use nalgebra::Matrix3;

use super::AugParams;
use crate::camera::{warp_with, CropTransform};
use crate::error::{Error, Result};
use crate::metrics::{flip_pose, JointFlipMap};
use crate::pose::Pose3D;

/// Rotation by `rotation_deg` and zoom about `center`, followed by a
/// translation. Image rows grow downward, so positive angles turn content
/// clockwise on screen, matching a rotation of camera-space `(X, Y)`.
pub fn similarity_matrix(rotation_deg: f64, zoom: f64, translation: [f64; 2], center: [f64; 2]) -> Matrix3<f64> {
    let (sin, cos) = rotation_deg.to_radians().sin_cos();
    let (a, b) = (zoom * cos, zoom * sin);
    let [cx, cy] = center;
    Matrix3::new(
        a,
        -b,
        cx - a * cx + b * cy + translation[0],
        b,
        a,
        cy - b * cx - a * cy + translation[1],
        0.0,
        0.0,
        1.0,
    )
}

fn rotate_pose(pose: &Pose3D, rotation_deg: f64) -> Pose3D {
    let (sin, cos) = rotation_deg.to_radians().sin_cos();
    Pose3D {
        joints: pose
            .joints
            .iter()
            .map(|&[x, y, z]| [cos * x - sin * y, sin * x + cos * y, z])
            .collect(),
        root_index: pose.root_index,
    }
}

fn check_zoom(params: &AugParams) -> Result<()> {
    if params.zoom > 0.0 && params.zoom.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("zoom must be positive, got {}", params.zoom)))
    }
}

/// Rotation, zoom and translation about the crop center, before any flip.
fn similarity_on(params: &AugParams, crop: &CropTransform) -> Matrix3<f64> {
    let center = [crop.out_width as f64 / 2.0, crop.out_height as f64 / 2.0];
    similarity_matrix(params.rotation_deg, params.zoom, params.translation_px, center) * crop.homography
}

fn finish_transform(params: &AugParams, crop: &CropTransform, unflipped: Matrix3<f64>) -> CropTransform {
    let homography = if params.hflip {
        Matrix3::new(-1.0, 0.0, crop.out_width as f64, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0) * unflipped
    } else {
        unflipped
    };
    CropTransform {
        homography,
        scale: crop.scale * params.zoom,
        ..*crop
    }
}

/// The crop transform [`geometric_augment`] returns, without resampling.
pub fn augment_transform(params: &AugParams, crop: &CropTransform) -> Result<CropTransform> {
    check_zoom(params)?;
    Ok(finish_transform(params, crop, similarity_on(params, crop)))
}

/// Applies rotation, zoom, translation and horizontal flip on top of `crop`
/// to `image` (the uncropped source frame), returning the augmented crop,
/// the correspondingly rotated and mirrored pose, and the updated transform.
///
/// Translation and zoom leave camera-space coordinates unchanged; zoom is
/// folded into the transform's scale.
pub fn geometric_augment(
    image: &RgbImage,
    pose: Option<&Pose3D>,
    params: &AugParams,
    crop: &CropTransform,
    flip_map: &JointFlipMap,
) -> Result<(RgbImage, Option<Pose3D>, CropTransform)> {
    check_zoom(params)?;
    let unflipped = similarity_on(params, crop);
    let mut out = warp_with(image, &unflipped, crop.out_width, crop.out_height)?;
    if params.hflip {
        image::imageops::flip_horizontal_in_place(&mut out);
    }
    let transform = finish_transform(params, crop, unflipped);

    let pose = match pose {
        Some(p) => {
            if flip_map.len() != p.num_joints() {
                return Err(Error::InvalidArgument(format!(
                    "flip map covers {} joints, pose has {}",
                    flip_map.len(),
                    p.num_joints()
                )));
            }
            let rotated = rotate_pose(p, params.rotation_deg);
            Some(if params.hflip { flip_pose(&rotated, flip_map)? } else { rotated })
        }
        None => None,
    };
    Ok((out, pose, transform))
}
