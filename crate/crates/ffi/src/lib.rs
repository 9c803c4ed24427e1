//! C ABI over the `occlupose` core.
//!
//! Every entry point returns an [`OpStatus`]. On failure the message is kept
//! in thread-local storage and can be read with [`op_last_error_message`].
//! Panics never cross the boundary; they are reported as
//! `OP_STATUS_PANIC`.
//!
//! Output pointers are written only on success.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use image::RgbImage;

use occlupose::augment::{appearance_augment, geometric_augment, occlude_frame, sample_params};
use occlupose::camera::{back_project, crop_camera, project, BoundingBox, CameraIntrinsics, CropIntrinsics};
use occlupose::config::RunConfig;
use occlupose::heatmap::{decode, BackboneOutput, CoordinateGrid, GridConfig};
use occlupose::metrics::mpjpe;
use occlupose::training::{triangular_lr, LrSchedule};
use occlupose::voc::{load_library, OccluderLibrary};
use occlupose::{Error, Pose3D};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    /// Malformed input data (XML, JSON, image, manifest).
    Format = 4,
    OutOfBounds = 5,
    /// Non-positive depth, singular transform or divergence.
    Numeric = 6,
    EmptyLibrary = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

/// Occluder library loaded from disk. Free with [`op_library_free`].
pub struct OpLibrary {
    inner: OccluderLibrary,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct OpBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct OpCropIntrinsics {
    pub focal: f64,
    pub scale: f64,
    pub correction: f64,
    pub width: f64,
    pub height: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct OpGridConfig {
    pub out_width: u32,
    pub out_height: u32,
    pub heatmap_width: usize,
    pub heatmap_height: usize,
    pub depth_bins: usize,
    pub abs_depth_bins: usize,
    pub rel_depth_range_mm: f64,
    pub abs_depth_range_mm: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct OpAugmentOptions {
    pub seed: u64,
    pub p_occ: f64,
    pub focal: f64,
    /// Side of the square output crop.
    pub out_size: u32,
    /// Fraction of the crop side covered by the longer box side.
    pub fill: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct OpAugmentResult {
    pub occluded: bool,
    pub occluder_count: usize,
    pub covered_fraction: f64,
    pub rotation_deg: f64,
    pub hflip: bool,
    /// Zoom `s` of the final crop camera.
    pub scale: f64,
}

struct FfiError {
    status: OpStatus,
    message: String,
}

impl From<Error> for FfiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io { .. } => OpStatus::Io,
            Error::Xml { .. } | Error::Annotation { .. } | Error::Integrity { .. } | Error::Image { .. } | Error::Json(_) => {
                OpStatus::Format
            }
            Error::IdOutOfBounds { .. } => OpStatus::OutOfBounds,
            Error::NonPositiveDepth(_) | Error::SingularHomography | Error::Divergence { .. } => OpStatus::Numeric,
            Error::EmptyLibrary => OpStatus::EmptyLibrary,
            Error::DimensionMismatch(_)
            | Error::LengthMismatch { .. }
            | Error::InvalidArgument(_)
            | Error::Shape(_)
            | Error::TooFewCycles { .. }
            | Error::FrameMismatch(_) => OpStatus::InvalidArgument,
        };
        FfiError {
            status,
            message: e.to_string(),
        }
    }
}

fn fail(status: OpStatus, message: impl Into<String>) -> FfiError {
    FfiError {
        status,
        message: message.into(),
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), FfiError>) -> OpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            OpStatus::Ok
        }
        Ok(Err(e)) => {
            set_last_error(&e.message);
            e.status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(&format!("panic: {msg}"));
            OpStatus::Panic
        }
    }
}

unsafe fn req<'a, T>(p: *const T, name: &str) -> Result<&'a T, FfiError> {
    p.as_ref().ok_or_else(|| fail(OpStatus::NullPointer, format!("{name} is null")))
}

unsafe fn req_mut<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, FfiError> {
    p.as_mut().ok_or_else(|| fail(OpStatus::NullPointer, format!("{name} is null")))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], FfiError> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(OpStatus::NullPointer, format!("{name} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, name: &str) -> Result<&'a mut [T], FfiError> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(fail(OpStatus::NullPointer, format!("{name} is null")));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn c_str<'a>(p: *const c_char, name: &str) -> Result<&'a str, FfiError> {
    if p.is_null() {
        return Err(fail(OpStatus::NullPointer, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(OpStatus::InvalidArgument, format!("{name} is not valid UTF-8")))
}

impl From<OpCropIntrinsics> for CropIntrinsics {
    fn from(k: OpCropIntrinsics) -> Self {
        CropIntrinsics {
            focal: k.focal,
            scale: k.scale,
            correction: k.correction,
            width: k.width,
            height: k.height,
        }
    }
}

impl From<GridConfig> for OpGridConfig {
    fn from(g: GridConfig) -> Self {
        OpGridConfig {
            out_width: g.out_width,
            out_height: g.out_height,
            heatmap_width: g.heatmap_width,
            heatmap_height: g.heatmap_height,
            depth_bins: g.depth_bins,
            abs_depth_bins: g.abs_depth_bins,
            rel_depth_range_mm: g.rel_depth_range_mm,
            abs_depth_range_mm: g.abs_depth_range_mm,
        }
    }
}

impl From<OpGridConfig> for GridConfig {
    fn from(g: OpGridConfig) -> Self {
        GridConfig {
            out_width: g.out_width,
            out_height: g.out_height,
            heatmap_width: g.heatmap_width,
            heatmap_height: g.heatmap_height,
            depth_bins: g.depth_bins,
            abs_depth_bins: g.abs_depth_bins,
            rel_depth_range_mm: g.rel_depth_range_mm,
            abs_depth_range_mm: g.abs_depth_range_mm,
        }
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn op_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. The pointer is
/// valid until the next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn op_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Loads a library directory written by `occlupose ingest-voc`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn op_library_load(path: *const c_char, out: *mut *mut OpLibrary) -> OpStatus {
    guard(|| {
        let out = req_mut(out, "out")?;
        let path = PathBuf::from(c_str(path, "path")?);
        let inner = load_library(&path)?;
        *out = Box::into_raw(Box::new(OpLibrary { inner }));
        Ok(())
    })
}

/// # Safety
/// `lib` must come from [`op_library_load`] and not be used afterwards. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn op_library_free(lib: *mut OpLibrary) {
    if !lib.is_null() {
        let _ = catch_unwind(AssertUnwindSafe(|| drop(Box::from_raw(lib))));
    }
}

/// # Safety
/// `lib` must be a live handle; `out_len` must be writable.
#[no_mangle]
pub unsafe extern "C" fn op_library_len(lib: *const OpLibrary, out_len: *mut usize) -> OpStatus {
    guard(|| {
        let lib = req(lib, "lib")?;
        *req_mut(out_len, "out_len")? = lib.inner.len();
        Ok(())
    })
}

/// Size in pixels of cutout `index`.
///
/// # Safety
/// `lib` must be a live handle; `out_width` and `out_height` must be writable.
#[no_mangle]
pub unsafe extern "C" fn op_library_object_size(
    lib: *const OpLibrary,
    index: usize,
    out_width: *mut u32,
    out_height: *mut u32,
) -> OpStatus {
    guard(|| {
        let lib = req(lib, "lib")?;
        let obj = lib.inner.get(index).ok_or_else(|| {
            fail(
                OpStatus::OutOfBounds,
                format!("index {index} out of bounds for library of {}", lib.inner.len()),
            )
        })?;
        let (w, h) = (req_mut(out_width, "out_width")?, req_mut(out_height, "out_height")?);
        *w = obj.width();
        *h = obj.height();
        Ok(())
    })
}

/// Defaults: seed 0, p_occ 0.5, focal 1500, 256 px crop, fill 0.9.
#[no_mangle]
pub extern "C" fn op_augment_options_default() -> OpAugmentOptions {
    let c = RunConfig::default();
    OpAugmentOptions {
        seed: c.seed,
        p_occ: c.p_occ,
        focal: c.focal_length,
        out_size: c.out_size,
        fill: c.fill,
    }
}

/// Crops the person in `bbox`, applies the seeded geometric, occlusion and
/// appearance augmentation and writes an `out_size × out_size` RGB8 crop.
///
/// # Safety
/// `rgb` must hold `width * height * 3` bytes; `out_rgb` must hold `out_len`
/// bytes; `frame_id` must be NUL-terminated; `result` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn op_augment_frame(
    lib: *const OpLibrary,
    rgb: *const u8,
    width: u32,
    height: u32,
    bbox: *const OpBox,
    frame_id: *const c_char,
    options: *const OpAugmentOptions,
    out_rgb: *mut u8,
    out_len: usize,
    result: *mut OpAugmentResult,
) -> OpStatus {
    guard(|| {
        let lib = req(lib, "lib")?;
        let bbox = req(bbox, "bbox")?;
        let options = req(options, "options")?;
        let frame_id = c_str(frame_id, "frame_id")?;
        let len = (width as usize) * (height as usize) * 3;
        let pixels = slice(rgb, len, "rgb")?;
        let needed = (options.out_size as usize).pow(2) * 3;
        if out_len < needed {
            return Err(fail(
                OpStatus::BufferTooSmall,
                format!("output buffer holds {out_len} bytes, {needed} needed"),
            ));
        }
        let out = slice_mut(out_rgb, needed, "out_rgb")?;
        let image = RgbImage::from_raw(width, height, pixels.to_vec())
            .ok_or_else(|| fail(OpStatus::InvalidArgument, "image buffer size mismatch"))?;

        let config = RunConfig {
            seed: options.seed,
            p_occ: options.p_occ,
            focal_length: options.focal,
            out_size: options.out_size,
            fill: options.fill,
            ..RunConfig::default()
        };
        config.validate()?;
        let camera = CameraIntrinsics::centered(config.focal_length, width as f64, height as f64)?;
        let b = BoundingBox {
            x: bbox.x,
            y: bbox.y,
            w: bbox.w,
            h: bbox.h,
        };
        let crop = crop_camera(&b, &camera, config.out_size, config.fill, config.crop_mode)?;
        let params = sample_params(&config.augment_config(), lib.inner.len(), config.seed, frame_id)?;
        let (cropped, _, crop) = geometric_augment(&image, None, &params, &crop, &config.flip_map()?)?;
        let (occluded, record) = occlude_frame(&cropped, &lib.inner, &params, frame_id)?;
        let final_image = appearance_augment(&occluded, &params);
        out.copy_from_slice(final_image.as_raw());

        if let Some(r) = result.as_mut() {
            *r = OpAugmentResult {
                occluded: params.occlude,
                occluder_count: params.occluder_ids.len(),
                covered_fraction: record.covered_fraction,
                rotation_deg: params.rotation_deg,
                hflip: params.hflip,
                scale: crop.scale,
            };
        }
        Ok(())
    })
}

/// Lifts crop pixel `(x, y)` with relative depth `dz` and root depth `zstar`
/// into camera space (mm), writing three values to `out_xyz`.
///
/// # Safety
/// `k` must be valid; `out_xyz` must hold three doubles.
#[no_mangle]
pub unsafe extern "C" fn op_back_project(
    x: f64,
    y: f64,
    dz: f64,
    zstar: f64,
    k: *const OpCropIntrinsics,
    out_xyz: *mut f64,
) -> OpStatus {
    guard(|| {
        let k: CropIntrinsics = (*req(k, "k")?).into();
        let p = back_project(x, y, dz, zstar, &k)?;
        slice_mut(out_xyz, 3, "out_xyz")?.copy_from_slice(&p);
        Ok(())
    })
}

/// # Safety
/// `point` must hold three doubles, `out_xy` two; `k` must be valid.
#[no_mangle]
pub unsafe extern "C" fn op_project(point: *const f64, k: *const OpCropIntrinsics, out_xy: *mut f64) -> OpStatus {
    guard(|| {
        let k: CropIntrinsics = (*req(k, "k")?).into();
        let p = slice(point, 3, "point")?;
        let xy = project([p[0], p[1], p[2]], &k)?;
        slice_mut(out_xy, 2, "out_xy")?.copy_from_slice(&xy);
        Ok(())
    })
}

/// 256 px crop, 16×16×16 relative volume, 32 absolute-depth bins.
#[no_mangle]
pub extern "C" fn op_grid_config_default() -> OpGridConfig {
    GridConfig::default().into()
}

/// Decodes one backbone output (HWC, joint-major channels) into per-joint
/// crop coordinates, relative depths and the absolute root depth.
///
/// # Safety
/// `spatial` must hold `height * width * channels` floats, `depth` must hold
/// `depth_len`; `out_xy` needs `2 * joints` doubles and `out_dz` `joints`.
#[no_mangle]
pub unsafe extern "C" fn op_decode(
    spatial: *const f32,
    height: usize,
    width: usize,
    channels: usize,
    depth: *const f32,
    depth_len: usize,
    joints: usize,
    grid: *const OpGridConfig,
    out_xy: *mut f64,
    out_dz: *mut f64,
    out_zstar: *mut f64,
) -> OpStatus {
    guard(|| {
        let cfg: GridConfig = (*req(grid, "grid")?).into();
        let n = height
            .checked_mul(width)
            .and_then(|v| v.checked_mul(channels))
            .ok_or_else(|| fail(OpStatus::InvalidArgument, "tensor size overflows"))?;
        let spatial = slice(spatial, n, "spatial")?.to_vec();
        let depth = slice(depth, depth_len, "depth")?.to_vec();
        let output = BackboneOutput::new(height, width, channels, spatial, depth)?;
        let grid = CoordinateGrid::new(&cfg)?;
        let decoded = decode(&output, joints, cfg.depth_bins, &grid)?;
        let xy = slice_mut(out_xy, 2 * joints, "out_xy")?;
        for (dst, src) in xy.chunks_exact_mut(2).zip(&decoded.xy) {
            dst.copy_from_slice(src);
        }
        slice_mut(out_dz, joints, "out_dz")?.copy_from_slice(&decoded.dz);
        *req_mut(out_zstar, "out_zstar")? = decoded.zstar;
        Ok(())
    })
}

fn pose_from(flat: &[f64], root_index: usize) -> Result<Pose3D, FfiError> {
    let joints = flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
    Ok(Pose3D::new(joints, root_index)?)
}

/// Root-relative mean per-joint position error of two `joints × 3` poses.
///
/// # Safety
/// `pred` and `gt` must hold `3 * joints` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn op_mpjpe(
    pred: *const f64,
    gt: *const f64,
    joints: usize,
    root_index: usize,
    out: *mut f64,
) -> OpStatus {
    guard(|| {
        let pred = pose_from(slice(pred, 3 * joints, "pred")?, root_index)?;
        let gt = pose_from(slice(gt, 3 * joints, "gt")?, root_index)?;
        *req_mut(out, "out")? = mpjpe(&pred, &gt)?;
        Ok(())
    })
}

/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn op_triangular_lr(
    step: usize,
    base_lr: f64,
    max_lr: f64,
    period: usize,
    out: *mut f64,
) -> OpStatus {
    guard(|| {
        let sched = LrSchedule::new(base_lr, max_lr, period)?;
        *req_mut(out, "out")? = triangular_lr(step, &sched);
        Ok(())
    })
}
