//! Pinhole camera model, person-centric crop reprojection and the
//! differentiable back-projection from crop pixels plus depth to camera space.
//!
//! Pixel coordinates are continuous with pixel `i` covering `[i, i + 1)`, so
//! its center sits at `i + 0.5`. The crop camera has focal length `f·s·c` and
//! its principal point at the crop center `(W/2, H/2)`.

use image::{Rgb, RgbImage};
use nalgebra::{Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub focal: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: f64,
    pub height: f64,
}

impl CameraIntrinsics {
    /// Intrinsics with the principal point at the image center.
    pub fn centered(focal: f64, width: f64, height: f64) -> Result<Self> {
        let k = CameraIntrinsics {
            focal,
            cx: width / 2.0,
            cy: height / 2.0,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.focal > 0.0 && self.focal.is_finite()) {
            return Err(Error::InvalidArgument(format!("focal length must be positive, got {}", self.focal)));
        }
        if !(self.width > 0.0 && self.height > 0.0) {
            return Err(Error::InvalidArgument("image size must be positive".into()));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.focal, 0.0, self.cx, 0.0, self.focal, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn inverse_matrix(&self) -> Matrix3<f64> {
        let f = self.focal;
        Matrix3::new(1.0 / f, 0.0, -self.cx / f, 0.0, 1.0 / f, -self.cy / f, 0.0, 0.0, 1.0)
    }
}

/// Person box in original-image pixels (top-left corner plus size).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CropMode {
    /// Virtual camera rotated to look at the box center.
    #[default]
    Rotational,
    /// Plain translate-and-scale crop.
    Planar,
}

impl std::str::FromStr for CropMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rotational" => Ok(CropMode::Rotational),
            "planar" => Ok(CropMode::Planar),
            other => Err(Error::InvalidArgument(format!("unknown crop mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropTransform {
    /// Maps original-image pixels to crop pixels.
    pub homography: Matrix3<f64>,
    /// Zoom factor `s`.
    pub scale: f64,
    /// Focal length `f` of the original camera.
    pub focal: f64,
    pub out_width: u32,
    pub out_height: u32,
    pub mode: CropMode,
}

impl CropTransform {
    pub fn identity(width: u32, height: u32, focal: f64) -> Self {
        CropTransform {
            homography: Matrix3::identity(),
            scale: 1.0,
            focal,
            out_width: width,
            out_height: height,
            mode: CropMode::Planar,
        }
    }

    pub fn intrinsics(&self, correction: FocalCorrection) -> CropIntrinsics {
        CropIntrinsics {
            focal: self.focal,
            scale: self.scale,
            correction: correction.value(),
            width: self.out_width as f64,
            height: self.out_height as f64,
        }
    }
}

/// The learnable, input-independent focal-length multiplier `c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FocalCorrection(f64);

impl FocalCorrection {
    pub fn new(c: f64) -> Result<Self> {
        if c > 0.0 && c.is_finite() {
            Ok(FocalCorrection(c))
        } else {
            Err(Error::InvalidArgument(format!("focal correction must be positive, got {c}")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl Default for FocalCorrection {
    fn default() -> Self {
        FocalCorrection(1.0)
    }
}

/// Intrinsics of the crop camera: focal `f·s·c`, principal point `(W/2, H/2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropIntrinsics {
    pub focal: f64,
    pub scale: f64,
    pub correction: f64,
    pub width: f64,
    pub height: f64,
}

impl CropIntrinsics {
    pub fn effective_focal(&self) -> f64 {
        self.focal * self.scale * self.correction
    }

    fn checked_focal(&self) -> Result<f64> {
        let fsc = self.effective_focal();
        if fsc > 0.0 && fsc.is_finite() {
            Ok(fsc)
        } else {
            Err(Error::InvalidArgument(format!("effective focal f*s*c must be positive, got {fsc}")))
        }
    }
}

pub fn crop_camera(
    bbox: &BoundingBox,
    camera: &CameraIntrinsics,
    out_size: u32,
    fill: f64,
    mode: CropMode,
) -> Result<CropTransform> {
    camera.validate()?;
    if !(bbox.w > 0.0 && bbox.h > 0.0) || !(bbox.x.is_finite() && bbox.y.is_finite()) {
        return Err(Error::InvalidArgument(format!("degenerate box {bbox:?}")));
    }
    if out_size == 0 || !(fill > 0.0) {
        return Err(Error::InvalidArgument("crop size and fill must be positive".into()));
    }
    let side = out_size as f64;
    let scale = fill * side / bbox.w.max(bbox.h);
    let half = side / 2.0;
    let (bx, by) = bbox.center();

    let homography = match mode {
        CropMode::Planar => Matrix3::new(scale, 0.0, half - scale * bx, 0.0, scale, half - scale * by, 0.0, 0.0, 1.0),
        CropMode::Rotational => {
            let ray = camera.inverse_matrix() * Vector3::new(bx, by, 1.0);
            let rotation = Rotation3::rotation_between(&ray, &Vector3::z()).ok_or(Error::SingularHomography)?;
            let fs = camera.focal * scale;
            let crop_k = Matrix3::new(fs, 0.0, half, 0.0, fs, half, 0.0, 0.0, 1.0);
            crop_k * rotation.matrix() * camera.inverse_matrix()
        }
    };
    Ok(CropTransform {
        homography,
        scale,
        focal: camera.focal,
        out_width: out_size,
        out_height: out_size,
        mode,
    })
}

/// Inverse-warps `image` through `transform` with bilinear sampling. Samples
/// falling outside the source are black.
pub fn warp_image(image: &RgbImage, transform: &CropTransform) -> Result<RgbImage> {
    warp_with(image, &transform.homography, transform.out_width, transform.out_height)
}

pub fn warp_with(image: &RgbImage, homography: &Matrix3<f64>, out_width: u32, out_height: u32) -> Result<RgbImage> {
    let inverse = homography.try_inverse().ok_or(Error::SingularHomography)?;
    if !inverse.iter().all(|v| v.is_finite()) {
        return Err(Error::SingularHomography);
    }
    let (sw, sh) = image.dimensions();
    let (wf, hf) = (sw as f64, sh as f64);
    let mut out = RgbImage::new(out_width, out_height);
    let col = inverse.column(0).into_owned();
    for j in 0..out_height {
        let base = inverse * Vector3::new(0.0, j as f64 + 0.5, 1.0);
        for i in 0..out_width {
            let p = base + col * (i as f64 + 0.5);
            if p.z <= 0.0 {
                continue;
            }
            let sx = p.x / p.z;
            let sy = p.y / p.z;
            if !(sx >= 0.0 && sx < wf && sy >= 0.0 && sy < hf) {
                continue;
            }
            out.put_pixel(i, j, sample_bilinear(image, sx - 0.5, sy - 0.5));
        }
    }
    Ok(out)
}

/// Rounds half up after clamping to `[0, 255]`; avoids a libm call per pixel.
#[inline]
pub(crate) fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 255.0) + 0.5) as u8
}

/// Bilinear sample at index-space coordinates, clamped to the raster edge.
pub(crate) fn sample_bilinear(image: &RgbImage, u: f64, v: f64) -> Rgb<u8> {
    let (w, h) = image.dimensions();
    let u = u.clamp(0.0, (w - 1) as f64);
    let v = v.clamp(0.0, (h - 1) as f64);
    let x0 = u as u32;
    let y0 = v as u32;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = u - x0 as f64;
    let fy = v - y0 as f64;
    let raw = image.as_raw();
    let at = |x: u32, y: u32| (y as usize * w as usize + x as usize) * 3;
    let (i00, i10, i01, i11) = (at(x0, y0), at(x1, y0), at(x0, y1), at(x1, y1));
    let mut out = [0u8; 3];
    for c in 0..3 {
        let top = raw[i00 + c] as f64 * (1.0 - fx) + raw[i10 + c] as f64 * fx;
        let bottom = raw[i01 + c] as f64 * (1.0 - fx) + raw[i11 + c] as f64 * fx;
        out[c] = to_u8(top * (1.0 - fy) + bottom * fy);
    }
    Rgb(out)
}

/// Crop pixel plus depths to camera space:
/// `Z = Z* + ΔZ`, `X = Z·(x − W/2)/(f·s·c)`, `Y = Z·(y − H/2)/(f·s·c)`.
pub fn back_project(x: f64, y: f64, dz: f64, zstar: f64, k: &CropIntrinsics) -> Result<[f64; 3]> {
    let fsc = k.checked_focal()?;
    let z = zstar + dz;
    if !(z > 0.0) {
        return Err(Error::NonPositiveDepth(z));
    }
    Ok([z * (x - k.width / 2.0) / fsc, z * (y - k.height / 2.0) / fsc, z])
}

pub fn project(point: [f64; 3], k: &CropIntrinsics) -> Result<[f64; 2]> {
    let fsc = k.checked_focal()?;
    let [x, y, z] = point;
    if !(z > 0.0) {
        return Err(Error::NonPositiveDepth(z));
    }
    Ok([fsc * x / z + k.width / 2.0, fsc * y / z + k.height / 2.0])
}

/// Partial derivatives of `(X, Y, Z)` with respect to each input of
/// [`back_project`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackProjectJacobian {
    pub wrt_x: [f64; 3],
    pub wrt_y: [f64; 3],
    pub wrt_dz: [f64; 3],
    pub wrt_zstar: [f64; 3],
    pub wrt_c: [f64; 3],
}

pub fn back_project_grad(x: f64, y: f64, dz: f64, zstar: f64, k: &CropIntrinsics) -> Result<BackProjectJacobian> {
    let fsc = k.checked_focal()?;
    let z = zstar + dz;
    if !(z > 0.0) {
        return Err(Error::NonPositiveDepth(z));
    }
    let ux = (x - k.width / 2.0) / fsc;
    let uy = (y - k.height / 2.0) / fsc;
    let depth = [ux, uy, 1.0];
    Ok(BackProjectJacobian {
        wrt_x: [z / fsc, 0.0, 0.0],
        wrt_y: [0.0, z / fsc, 0.0],
        wrt_dz: depth,
        wrt_zstar: depth,
        wrt_c: [-z * ux / k.correction, -z * uy / k.correction, 0.0],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn crop_k(c: f64) -> CropIntrinsics {
        CropIntrinsics {
            focal: 1500.0,
            scale: 1.0,
            correction: c,
            width: 256.0,
            height: 256.0,
        }
    }

    #[test]
    fn scale_fills_ninety_percent() {
        let cam = CameraIntrinsics::centered(1500.0, 1000.0, 1000.0).unwrap();
        let b = BoundingBox { x: 100.0, y: 50.0, w: 200.0, h: 460.8 };
        let t = crop_camera(&b, &cam, 256, 0.9, CropMode::Planar).unwrap();
        assert_eq!(t.scale, 0.5);
        let b = BoundingBox { x: 100.0, y: 50.0, w: 230.4, h: 100.0 };
        let t = crop_camera(&b, &cam, 256, 0.9, CropMode::Rotational).unwrap();
        assert_eq!(t.scale, 1.0);
    }

    #[test]
    fn planar_maps_box_center_to_crop_center() {
        let cam = CameraIntrinsics::centered(1500.0, 1000.0, 800.0).unwrap();
        let b = BoundingBox { x: 600.0, y: 100.0, w: 120.0, h: 300.0 };
        for mode in [CropMode::Planar, CropMode::Rotational] {
            let t = crop_camera(&b, &cam, 256, 0.9, mode).unwrap();
            let p = t.homography * Vector3::new(660.0, 250.0, 1.0);
            assert!((p.x / p.z - 128.0).abs() < 1e-9, "{mode:?}");
            assert!((p.y / p.z - 128.0).abs() < 1e-9, "{mode:?}");
        }
    }

    #[test]
    fn rotational_reduces_to_planar_on_axis() {
        let cam = CameraIntrinsics::centered(1500.0, 1000.0, 800.0).unwrap();
        let b = BoundingBox { x: 400.0, y: 250.0, w: 200.0, h: 300.0 };
        let r = crop_camera(&b, &cam, 256, 0.9, CropMode::Rotational).unwrap();
        let p = crop_camera(&b, &cam, 256, 0.9, CropMode::Planar).unwrap();
        let diff = (r.homography / r.homography[(2, 2)] - p.homography / p.homography[(2, 2)]).norm();
        assert!(diff < 1e-12, "{diff}");
    }

    #[test]
    fn degenerate_box_rejected() {
        let cam = CameraIntrinsics::centered(1500.0, 100.0, 100.0).unwrap();
        let b = BoundingBox { x: 0.0, y: 0.0, w: 0.0, h: 10.0 };
        assert!(crop_camera(&b, &cam, 256, 0.9, CropMode::Planar).is_err());
    }

    #[test]
    fn identity_warp_is_exact() {
        let img = RgbImage::from_fn(17, 9, |x, y| Rgb([(x * 13) as u8, (y * 29) as u8, ((x * y) % 256) as u8]));
        let t = CropTransform::identity(17, 9, 1500.0);
        assert_eq!(warp_image(&img, &t).unwrap(), img);
    }

    #[test]
    fn zoom_keeps_constant_image() {
        let img = RgbImage::from_pixel(64, 64, Rgb([90, 140, 200]));
        let h = Matrix3::new(2.0, 0.0, -32.0, 0.0, 2.0, -32.0, 0.0, 0.0, 1.0);
        let out = warp_with(&img, &h, 64, 64).unwrap();
        assert!(out.pixels().all(|p| *p == Rgb([90, 140, 200])));
    }

    #[test]
    fn outside_samples_are_black() {
        let img = RgbImage::from_pixel(8, 8, Rgb([255, 255, 255]));
        let h = Matrix3::new(1.0, 0.0, 100.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        let out = warp_with(&img, &h, 8, 8).unwrap();
        assert!(out.pixels().all(|p| *p == Rgb([0, 0, 0])));
    }

    #[test]
    fn singular_homography_rejected() {
        let img = RgbImage::new(4, 4);
        assert!(matches!(warp_with(&img, &Matrix3::zeros(), 4, 4), Err(Error::SingularHomography)));
    }

    #[test]
    fn principal_point_is_on_axis() {
        assert_eq!(back_project(128.0, 128.0, 250.0, 3000.0, &crop_k(1.3)).unwrap(), [0.0, 0.0, 3250.0]);
        assert_eq!(project([0.0, 0.0, 777.0], &crop_k(1.0)).unwrap(), [128.0, 128.0]);
    }

    #[test]
    fn back_project_matches_inverse_matrix() {
        // independent route: explicit 3x3 inverse of the crop intrinsics
        let k = Matrix3::new(1500.0, 0.0, 128.0, 0.0, 1500.0, 128.0, 0.0, 0.0, 1.0);
        let expected: Vector3<f64> = k.try_inverse().unwrap() * Vector3::new(192.0, 128.0, 1.0) * 3000.0;
        assert!((expected.x - 128.0).abs() < 1e-9 && expected.y.abs() < 1e-9);
        let p = back_project(192.0, 128.0, -500.0, 3500.0, &crop_k(1.0)).unwrap();
        assert!((p[0] - 128.0).abs() < 1e-12);
        assert_eq!(p[1], 0.0);
        assert_eq!(p[2], 3000.0);
        assert!((project([128.0, 0.0, 3000.0], &crop_k(1.0)).unwrap()[0] - 192.0).abs() < 1e-12);
    }

    #[test]
    fn doubling_depth_doubles_xy() {
        let a = back_project(31.0, 200.5, 100.0, 2000.0, &crop_k(0.9)).unwrap();
        let b = back_project(31.0, 200.5, 200.0, 4000.0, &crop_k(0.9)).unwrap();
        assert_eq!(b[0], 2.0 * a[0]);
        assert_eq!(b[1], 2.0 * a[1]);
    }

    #[test]
    fn non_positive_depth_rejected() {
        assert!(matches!(
            back_project(0.0, 0.0, -3000.0, 3000.0, &crop_k(1.0)),
            Err(Error::NonPositiveDepth(_))
        ));
        assert!(project([0.0, 0.0, -1.0], &crop_k(1.0)).is_err());
        assert!(back_project(0.0, 0.0, 0.0, 3000.0, &crop_k(0.0)).is_err());
    }

    #[test]
    fn gradient_special_cases() {
        let g = back_project_grad(128.0, 40.0, 10.0, 3000.0, &crop_k(1.2)).unwrap();
        assert_eq!(g.wrt_c[0], 0.0);
        assert_eq!(g.wrt_x[2], 0.0);
        assert_eq!(g.wrt_y[2], 0.0);
        assert_eq!(g.wrt_dz[2], 1.0);
        assert_eq!(g.wrt_zstar, g.wrt_dz);
    }
}
