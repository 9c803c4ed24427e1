use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use super::AugParams;
use crate::camera::to_u8;
use crate::error::{Error, Result};
use crate::voc::{OccluderLibrary, SegmentedObject};

/// Half-open pixel rectangle `[x0, x1) × [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelRect {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcclusionRecord {
    pub frame_id: String,
    pub params: AugParams,
    /// Fraction of crop pixels overwritten by the union of pasted cutouts.
    pub covered_fraction: f64,
}

pub fn paste(image: &RgbImage, cutout: &SegmentedObject, position: [f64; 2], scale: f64) -> RgbImage {
    let mut out = image.clone();
    paste_into(&mut out, cutout, position, scale, None);
    out
}

struct Placement {
    rect: PixelRect,
    left: f64,
    top: f64,
    ratio_x: f64,
    ratio_y: f64,
}

fn place(cutout: &SegmentedObject, position: [f64; 2], scale: f64, iw: u32, ih: u32) -> Option<Placement> {
    let (cw, ch) = cutout.pixels.dimensions();
    let out_w = (cw as f64 * scale).round();
    let out_h = (ch as f64 * scale).round();
    if !(out_w >= 1.0 && out_h >= 1.0) {
        log::warn!("cutout {} vanishes at scale {scale}, not pasted", cutout.id);
        return None;
    }
    let left = (position[0] - out_w / 2.0).round();
    let top = (position[1] - out_h / 2.0).round();
    let x0 = left.max(0.0);
    let y0 = top.max(0.0);
    let x1 = (left + out_w).min(iw as f64);
    let y1 = (top + out_h).min(ih as f64);
    if x0 >= x1 || y0 >= y1 {
        return None;
    }
    Some(Placement {
        rect: PixelRect {
            x0: x0 as u32,
            y0: y0 as u32,
            x1: x1 as u32,
            y1: y1 as u32,
        },
        left,
        top,
        ratio_x: cw as f64 / out_w,
        ratio_y: ch as f64 / out_h,
    })
}

/// Visits every destination pixel with nonzero nearest-neighbor alpha as
/// `(x, y, sx, sy, nx, ny, alpha)`.
fn for_each_covered(cutout: &SegmentedObject, pl: &Placement, mut f: impl FnMut(u32, u32, f64, f64, u32, u32, u8)) {
    let (cw, ch) = cutout.pixels.dimensions();
    for y in pl.rect.y0..pl.rect.y1 {
        let sy = (y as f64 - pl.top + 0.5) * pl.ratio_y;
        let ny = (sy as u32).min(ch - 1);
        for x in pl.rect.x0..pl.rect.x1 {
            let sx = (x as f64 - pl.left + 0.5) * pl.ratio_x;
            let nx = (sx as u32).min(cw - 1);
            let a = cutout.alpha.get_pixel(nx, ny).0[0];
            if a != 0 {
                f(x, y, sx, sy, nx, ny, a);
            }
        }
    }
}

/// Resamples `cutout` by `scale` (alpha-weighted bilinear color, nearest
/// alpha) and composites it centered at `position`, clipped to the image.
/// Returns the clipped rectangle that was touched, if any. When `coverage`
/// is given (one flag per image pixel, row-major), overwritten pixels are
/// marked in it.
pub fn paste_into(
    image: &mut RgbImage,
    cutout: &SegmentedObject,
    position: [f64; 2],
    scale: f64,
    mut coverage: Option<&mut [bool]>,
) -> Option<PixelRect> {
    let (iw, ih) = image.dimensions();
    let pl = place(cutout, position, scale, iw, ih)?;
    for_each_covered(cutout, &pl, |x, y, sx, sy, nx, ny, a| {
        let color = sample_masked(cutout, sx - 0.5, sy - 0.5).unwrap_or(*cutout.pixels.get_pixel(nx, ny));
        let dst = image.get_pixel_mut(x, y);
        if a == 255 {
            *dst = color;
        } else {
            let af = a as f64 / 255.0;
            for c in 0..3 {
                dst.0[c] = to_u8(color.0[c] as f64 * af + dst.0[c] as f64 * (1.0 - af));
            }
        }
        if let Some(cov) = coverage.as_deref_mut() {
            cov[y as usize * iw as usize + x as usize] = true;
        }
    });
    Some(pl.rect)
}

/// Bilinear color sample that ignores neighbors outside the cutout mask.
fn sample_masked(cutout: &SegmentedObject, u: f64, v: f64) -> Option<Rgb<u8>> {
    let (w, h) = cutout.pixels.dimensions();
    let u = u.clamp(0.0, (w - 1) as f64);
    let v = v.clamp(0.0, (h - 1) as f64);
    let x0 = u as u32;
    let y0 = v as u32;
    let fx = u - x0 as f64;
    let fy = v - y0 as f64;
    let mut acc = [0.0f64; 3];
    let mut weight = 0.0;
    for (x, y, w) in [
        (x0, y0, (1.0 - fx) * (1.0 - fy)),
        ((x0 + 1).min(w - 1), y0, fx * (1.0 - fy)),
        (x0, (y0 + 1).min(h - 1), (1.0 - fx) * fy),
        ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1), fx * fy),
    ] {
        if w == 0.0 {
            continue;
        }
        let a = cutout.alpha.get_pixel(x, y).0[0] as f64 / 255.0;
        let p = cutout.pixels.get_pixel(x, y).0;
        for c in 0..3 {
            acc[c] += w * a * p[c] as f64;
        }
        weight += w * a;
    }
    if weight <= 0.0 {
        return None;
    }
    Some(Rgb(acc.map(|v| to_u8(v / weight))))
}

fn check_params(library: &OccluderLibrary, params: &AugParams) -> Result<()> {
    let n = params.occluder_ids.len();
    if params.positions.len() != n || params.scales.len() != n {
        return Err(Error::InvalidArgument("occluder lists differ in length".into()));
    }
    if let Some(&id) = params.occluder_ids.iter().find(|&&id| id >= library.len()) {
        return Err(Error::IdOutOfBounds {
            id,
            len: library.len(),
        });
    }
    Ok(())
}

/// Calls `paste` once per occluder with the cutout and its pixel scale factor.
fn for_each_occluder(
    library: &OccluderLibrary,
    params: &AugParams,
    side: f64,
    mut paste: impl FnMut(&SegmentedObject, [f64; 2], f64),
) {
    for ((&id, &pos), &frac) in params.occluder_ids.iter().zip(&params.positions).zip(&params.scales) {
        let cutout = library.get(id).expect("ids checked");
        let factor = frac * side / cutout.width().max(cutout.height()) as f64;
        paste(cutout, pos, factor);
    }
}

fn record(frame_id: &str, params: &AugParams, coverage: &[bool]) -> OcclusionRecord {
    let covered = coverage.iter().filter(|&&c| c).count();
    OcclusionRecord {
        frame_id: frame_id.to_string(),
        params: params.clone(),
        covered_fraction: covered as f64 / coverage.len().max(1) as f64,
    }
}

/// Pastes the occluders listed in `params` in order. Cutout sizes are
/// fractions of the larger image side.
pub fn occlude_frame(
    image: &RgbImage,
    library: &OccluderLibrary,
    params: &AugParams,
    frame_id: &str,
) -> Result<(RgbImage, OcclusionRecord)> {
    check_params(library, params)?;
    let mut out = image.clone();
    let (w, h) = image.dimensions();
    let mut coverage = vec![false; w as usize * h as usize];
    if params.occlude {
        for_each_occluder(library, params, w.max(h) as f64, |cutout, pos, factor| {
            paste_into(&mut out, cutout, pos, factor, Some(&mut coverage));
        });
    }
    let rec = record(frame_id, params, &coverage);
    Ok((out, rec))
}

/// The record [`occlude_frame`] would produce for a `width × height` crop,
/// computed from cutout geometry alone.
pub fn occlusion_record(
    width: u32,
    height: u32,
    library: &OccluderLibrary,
    params: &AugParams,
    frame_id: &str,
) -> Result<OcclusionRecord> {
    check_params(library, params)?;
    let mut coverage = vec![false; width as usize * height as usize];
    if params.occlude {
        for_each_occluder(library, params, width.max(height) as f64, |cutout, pos, factor| {
            if let Some(pl) = place(cutout, pos, factor, width, height) {
                for_each_covered(cutout, &pl, |x, y, _, _, _, _, _| coverage[y as usize * width as usize + x as usize] = true);
            }
        });
    }
    Ok(record(frame_id, params, &coverage))
}

#[cfg(test)]
mod tests {
    use image::{GrayImage, Luma};

    use super::*;

    fn opaque(w: u32, h: u32, color: [u8; 3]) -> SegmentedObject {
        SegmentedObject {
            id: "c".into(),
            source_id: "c".into(),
            instance_index: 1,
            class_name: "dog".into(),
            area_px: (w * h) as u64,
            pixels: RgbImage::from_pixel(w, h, Rgb(color)),
            alpha: GrayImage::from_pixel(w, h, Luma([255])),
        }
    }

    fn ring() -> SegmentedObject {
        // 4x4 with a transparent 2x2 hole
        let mut o = opaque(4, 4, [200, 10, 10]);
        for (x, y) in [(1, 1), (2, 1), (1, 2), (2, 2)] {
            o.alpha.put_pixel(x, y, Luma([0]));
            o.pixels.put_pixel(x, y, Rgb([0, 0, 0]));
        }
        o.area_px = 12;
        o
    }

    fn diff_count(a: &RgbImage, b: &RgbImage) -> usize {
        a.pixels().zip(b.pixels()).filter(|(p, q)| p != q).count()
    }

    #[test]
    fn fully_outside_is_noop() {
        let img = RgbImage::from_pixel(8, 8, Rgb([1, 2, 3]));
        assert_eq!(paste(&img, &opaque(2, 2, [9, 9, 9]), [-20.0, 4.0], 1.0), img);
        assert_eq!(paste(&img, &opaque(2, 2, [9, 9, 9]), [4.0, 30.0], 1.0), img);
    }

    #[test]
    fn two_by_two_changes_four_pixels() {
        let img = RgbImage::from_pixel(8, 8, Rgb([1, 2, 3]));
        let out = paste(&img, &opaque(2, 2, [9, 9, 9]), [4.0, 4.0], 1.0);
        assert_eq!(diff_count(&img, &out), 4);
        assert_eq!(*out.get_pixel(3, 3), Rgb([9, 9, 9]));
        assert_eq!(*out.get_pixel(4, 4), Rgb([9, 9, 9]));
    }

    #[test]
    fn repeated_opaque_paste_is_idempotent() {
        let img = RgbImage::from_fn(16, 16, |x, y| Rgb([x as u8, y as u8, 0]));
        let c = ring();
        let once = paste(&img, &c, [7.3, 9.8], 1.7);
        assert_eq!(paste(&once, &c, [7.3, 9.8], 1.7), once);
    }

    #[test]
    fn transparent_pixels_untouched() {
        let img = RgbImage::from_pixel(8, 8, Rgb([50, 60, 70]));
        let out = paste(&img, &ring(), [4.0, 4.0], 1.0);
        assert_eq!(diff_count(&img, &out), 12);
        assert_eq!(*out.get_pixel(3, 3), Rgb([50, 60, 70]));
        assert_eq!(*out.get_pixel(2, 2), Rgb([200, 10, 10]));
    }

    #[test]
    fn border_clipping_and_bounds() {
        let img = RgbImage::from_fn(12, 10, |x, y| Rgb([x as u8 * 9, y as u8 * 7, 33]));
        let mut out = img.clone();
        let rect = paste_into(&mut out, &opaque(6, 4, [255, 255, 255]), [0.0, 9.0], 1.5, None).unwrap();
        for (x, y, p) in out.enumerate_pixels() {
            let inside = x >= rect.x0 && x < rect.x1 && y >= rect.y0 && y < rect.y1;
            if !inside {
                assert_eq!(p, img.get_pixel(x, y));
            }
        }
        assert!(rect.x0 == 0 && rect.y1 == 10);
    }

    #[test]
    fn vanishing_scale_is_noop() {
        let img = RgbImage::from_pixel(8, 8, Rgb([1, 2, 3]));
        assert_eq!(paste(&img, &opaque(2, 2, [9, 9, 9]), [4.0, 4.0], 0.1), img);
    }

    #[test]
    fn covered_fraction_counts_union() {
        let lib = OccluderLibrary::from_objects(vec![opaque(4, 4, [255, 0, 0])]).unwrap();
        let img = RgbImage::new(16, 16);
        let params = AugParams {
            occlude: true,
            occluder_ids: vec![0, 0],
            positions: vec![[4.0, 4.0], [6.0, 4.0]],
            // 4/16 of the side maps the cutout to scale 1
            scales: vec![0.25, 0.25],
            ..AugParams::identity()
        };
        let (out, rec) = occlude_frame(&img, &lib, &params, "f").unwrap();
        // union of [2,6)x[2,6) and [4,8)x[2,6) is 6x4 pixels
        let changed = diff_count(&img, &out);
        assert_eq!(changed, 24);
        assert_eq!(rec.covered_fraction, 24.0 / 256.0);
    }

    #[test]
    fn pass_through_and_bad_ids() {
        let lib = OccluderLibrary::from_objects(vec![opaque(4, 4, [255, 0, 0])]).unwrap();
        let img = RgbImage::from_fn(8, 8, |x, y| Rgb([x as u8, y as u8, 1]));
        let (out, rec) = occlude_frame(&img, &lib, &AugParams::identity(), "f").unwrap();
        assert_eq!(out, img);
        assert_eq!(rec.covered_fraction, 0.0);
        let params = AugParams {
            occlude: true,
            occluder_ids: vec![3],
            positions: vec![[0.0, 0.0]],
            scales: vec![0.5],
            ..AugParams::identity()
        };
        assert!(matches!(occlude_frame(&img, &lib, &params, "f"), Err(Error::IdOutOfBounds { id: 3, len: 1 })));
    }

    #[test]
    fn geometric_record_matches_pasted_record() {
        let lib = OccluderLibrary::from_objects(vec![ring(), opaque(3, 5, [1, 2, 3])]).unwrap();
        let img = RgbImage::new(20, 14);
        for k in 0..30 {
            let params = AugParams {
                occlude: true,
                occluder_ids: vec![k % 2, (k + 1) % 2, 0],
                positions: vec![[k as f64 * 0.7, 3.0], [10.0, k as f64 * 0.5], [19.5, 13.5]],
                scales: vec![0.2 + k as f64 * 0.02, 0.35, 0.5],
                ..AugParams::identity()
            };
            let (_, pasted) = occlude_frame(&img, &lib, &params, "f").unwrap();
            assert_eq!(occlusion_record(20, 14, &lib, &params, "f").unwrap(), pasted);
        }
    }
}
