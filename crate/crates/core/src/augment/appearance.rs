use image::RgbImage;

use super::AugParams;
use crate::camera::to_u8;

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let weights: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = weights.iter().sum();
    weights.into_iter().map(|w| w / sum).collect()
}

/// Clamped source index for every tap position `-radius..len + radius`.
fn clamped_indices(len: usize, radius: usize) -> Vec<usize> {
    (0..len + 2 * radius)
        .map(|i| (i as i64 - radius as i64).clamp(0, len as i64 - 1) as usize)
        .collect()
}

/// Separable Gaussian blur with edge clamping. `sigma <= 0` returns a copy.
pub fn gaussian_blur(image: &RgbImage, sigma: f64) -> RgbImage {
    if !(sigma > 0.0) {
        return image.clone();
    }
    let kernel: Vec<f32> = gaussian_kernel(sigma).into_iter().map(|k| k as f32).collect();
    let radius = kernel.len() / 2;
    let (w, h) = (image.width() as usize, image.height() as usize);
    let stride = w * 3;
    let src = image.as_raw();

    // Taps whose source column is unclamped form contiguous runs.
    let xs = clamped_indices(w, radius);
    let (lo, hi) = (radius.min(w), w.saturating_sub(radius).max(radius.min(w)));
    let mut horizontal = vec![0.0f32; src.len()];
    for y in 0..h {
        let row = &src[y * stride..(y + 1) * stride];
        let acc = &mut horizontal[y * stride..(y + 1) * stride];
        for (k, &wt) in kernel.iter().enumerate() {
            let shift = (lo + k) as isize - radius as isize;
            if hi > lo {
                let s0 = shift as usize * 3;
                for (a, &v) in acc[lo * 3..hi * 3].iter_mut().zip(&row[s0..s0 + (hi - lo) * 3]) {
                    *a += wt * v as f32;
                }
            }
            for x in (0..lo).chain(hi..w) {
                let sx = xs[x + k] * 3;
                for c in 0..3 {
                    acc[x * 3 + c] += wt * row[sx + c] as f32;
                }
            }
        }
    }

    let ys = clamped_indices(h, radius);
    let mut acc = vec![0.0f32; stride];
    let mut out = RgbImage::new(image.width(), image.height());
    let dst: &mut [u8] = &mut out;
    for y in 0..h {
        acc.iter_mut().for_each(|a| *a = 0.0);
        for (&wt, &sy) in kernel.iter().zip(&ys[y..y + kernel.len()]) {
            for (a, &v) in acc.iter_mut().zip(&horizontal[sy * stride..(sy + 1) * stride]) {
                *a += wt * v;
            }
        }
        for (d, &a) in dst[y * stride..(y + 1) * stride].iter_mut().zip(&acc) {
            *d = to_u8(a as f64);
        }
    }
    out
}

/// Blur followed by per-channel gains, clamped to the 8-bit range.
pub fn appearance_augment(image: &RgbImage, params: &AugParams) -> RgbImage {
    let mut out = gaussian_blur(image, params.blur_sigma);
    if params.color_gains != [1.0, 1.0, 1.0] {
        for p in out.pixels_mut() {
            for c in 0..3 {
                p.0[c] = to_u8(p.0[c] as f64 * params.color_gains[c]);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use image::Rgb;

    use super::*;

    #[test]
    fn identity_is_exact() {
        let img = RgbImage::from_fn(9, 7, |x, y| Rgb([x as u8 * 20, y as u8 * 30, 5]));
        assert_eq!(appearance_augment(&img, &AugParams::identity()), img);
    }

    #[test]
    fn blur_keeps_constant_images() {
        let img = RgbImage::from_pixel(12, 12, Rgb([100, 37, 250]));
        assert_eq!(gaussian_blur(&img, 1.7), img);
    }

    #[test]
    fn kernel_normalized_and_symmetric() {
        let k = gaussian_kernel(2.0);
        assert_eq!(k.len(), 13);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(k[0], k[12]);
    }

    #[test]
    fn gains_clamp() {
        let img = RgbImage::from_pixel(2, 2, Rgb([200, 100, 10]));
        let params = AugParams {
            color_gains: [1.5, 0.5, 1.0],
            ..AugParams::identity()
        };
        assert_eq!(*appearance_augment(&img, &params).get_pixel(0, 0), Rgb([255, 50, 10]));
    }

    #[test]
    fn blur_spreads_an_impulse() {
        let mut img = RgbImage::new(9, 9);
        img.put_pixel(4, 4, Rgb([255, 255, 255]));
        let out = gaussian_blur(&img, 1.0);
        assert!(out.get_pixel(4, 4).0[0] < 255);
        assert!(out.get_pixel(5, 4).0[0] > 0);
        assert_eq!(out.get_pixel(5, 4), out.get_pixel(3, 4));
    }
}
