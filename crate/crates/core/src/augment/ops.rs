//! The six stochastic transforms. Each has a `*_with` form taking the drawn
//! parameter explicitly, which the random form calls after sampling.

use rand::Rng as _;
use rand_distr::StandardNormal;

use super::grid::ImageGrid;
use crate::error::{Error, Result};
use crate::rng::Rng;

fn uniform(rng: &mut Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.gen::<f64>()
}

pub(crate) fn check_scale(scale: (f64, f64)) -> Result<()> {
    let (a, b) = scale;
    if !(a > 0.0 && b <= 1.0 && a <= b) {
        return Err(Error::config(format!("crop scale must satisfy 0 < a <= b <= 1, got ({a}, {b})")));
    }
    Ok(())
}

/// Side length of a square window covering `area_fraction` of the image.
pub fn crop_side(height: usize, width: usize, area_fraction: f64) -> usize {
    let side = (area_fraction * (height * width) as f64).sqrt();
    // guard against sqrt landing a hair above an exact integer
    let side = (side - 1e-9).ceil() as usize;
    side.clamp(1, height.min(width))
}

/// Crop the square window at (`top`, `left`) with side `side` and resize it
/// bilinearly to `out_size` x `out_size`.
pub fn crop_resize_with(img: &ImageGrid, top: usize, left: usize, side: usize, out_size: usize) -> Result<ImageGrid> {
    if out_size == 0 {
        return Err(Error::config("out_size must be positive"));
    }
    if side == 0 || top + side > img.height() || left + side > img.width() {
        return Err(Error::input(format!(
            "crop window {side}x{side} at ({top},{left}) exceeds {}x{} image",
            img.height(),
            img.width()
        )));
    }
    Ok(img.window(top, left, side, side).resize(out_size, out_size))
}

/// Random square crop whose area fraction is uniform in `scale`, placed
/// uniformly, resized to `out_size`.
pub fn crop_resize(img: &ImageGrid, scale: (f64, f64), out_size: usize, rng: &mut Rng) -> Result<ImageGrid> {
    check_scale(scale)?;
    let fraction = uniform(rng, scale.0, scale.1);
    let side = crop_side(img.height(), img.width(), fraction);
    let top = rng.gen_range(0..=img.height() - side);
    let left = rng.gen_range(0..=img.width() - side);
    crop_resize_with(img, top, left, side, out_size)
}

/// Rotate about the image center by `degrees` (counter-clockwise in image
/// coordinates), bilinear interpolation, zero fill.
pub fn rotate_with(img: &ImageGrid, degrees: f64) -> ImageGrid {
    if degrees == 0.0 {
        return img.clone();
    }
    let theta = degrees.to_radians();
    let (sin, cos) = theta.sin_cos();
    let cy = (img.height() as f64 - 1.0) / 2.0;
    let cx = (img.width() as f64 - 1.0) / 2.0;
    ImageGrid::from_fn(img.height(), img.width(), |y, x| {
        let dy = y as f64 - cy;
        let dx = x as f64 - cx;
        // inverse map: rotate the output coordinate by -theta
        let sx = cx + dx * cos + dy * sin;
        let sy = cy - dx * sin + dy * cos;
        img.sample_bilinear(sy, sx, 0.0)
    })
}

pub fn random_rotate(img: &ImageGrid, max_degrees: f64, rng: &mut Rng) -> Result<ImageGrid> {
    if !(max_degrees >= 0.0) {
        return Err(Error::config(format!("max_degrees must be nonnegative, got {max_degrees}")));
    }
    let angle = uniform(rng, -max_degrees, max_degrees);
    Ok(rotate_with(img, angle))
}

/// Brightness scaling followed by a contrast blend toward the image mean.
pub fn color_jitter_with(img: &ImageGrid, brightness_factor: f64, contrast_factor: f64) -> ImageGrid {
    let mut out = if brightness_factor == 1.0 {
        img.clone()
    } else {
        img.map(|p| (p as f64 * brightness_factor) as f32)
    };
    if contrast_factor != 1.0 {
        let mean = out.mean();
        out = out.map(|p| (mean + contrast_factor * (p as f64 - mean)) as f32);
    }
    out
}

pub fn color_jitter(img: &ImageGrid, brightness: f64, contrast: f64, saturation: f64, rng: &mut Rng) -> Result<ImageGrid> {
    for (name, v) in [("brightness", brightness), ("contrast", contrast), ("saturation", saturation)] {
        if !(v >= 0.0) {
            return Err(Error::config(format!("{name} must be nonnegative, got {v}")));
        }
    }
    let b = uniform(rng, (1.0 - brightness).max(0.0), 1.0 + brightness);
    let c = uniform(rng, (1.0 - contrast).max(0.0), 1.0 + contrast);
    // Saturation blends toward the grayscale image, which for a single
    // channel is the image itself.
    Ok(color_jitter_with(img, b, c))
}

pub fn flip_with(img: &ImageGrid) -> ImageGrid {
    let w = img.width();
    ImageGrid::from_fn(img.height(), w, |y, x| img.get(y, w - 1 - x))
}

pub fn horizontal_flip(img: &ImageGrid, p: f64, rng: &mut Rng) -> Result<ImageGrid> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::config(format!("flip probability must lie in [0,1], got {p}")));
    }
    if rng.gen::<f64>() < p {
        Ok(flip_with(img))
    } else {
        Ok(img.clone())
    }
}

/// Additive unit-variance Gaussian noise weighted by `density`, clamped.
pub fn gaussian_noise(img: &ImageGrid, density: f64, rng: &mut Rng) -> Result<ImageGrid> {
    if !(density >= 0.0) {
        return Err(Error::config(format!("noise density must be nonnegative, got {density}")));
    }
    if density == 0.0 {
        return Ok(img.clone());
    }
    let pixels = img
        .pixels()
        .iter()
        .map(|&p| {
            let eps: f64 = rng.sample(StandardNormal);
            (p as f64 + density * eps).clamp(0.0, 1.0) as f32
        })
        .collect();
    ImageGrid::new(img.height(), img.width(), pixels)
}

/// Normalized 1-D Gaussian taps, half-width `max(1, ceil(3 * sigma))`.
pub fn gaussian_taps(sigma: f64) -> Vec<f64> {
    let half = ((3.0 * sigma).ceil() as usize).max(1);
    let mut taps: Vec<f64> = (0..=2 * half)
        .map(|i| {
            let d = i as f64 - half as f64;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= total);
    taps
}

/// Mirror an out-of-range index back into `0..n` (edge pixel not repeated).
pub(crate) fn reflect(mut i: i64, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let n = n as i64;
    let period = 2 * (n - 1);
    i = i.rem_euclid(period);
    if i >= n {
        i = period - i;
    }
    i as usize
}

/// Isotropic Gaussian blur with standard deviation `sigma`, separable,
/// reflective boundaries.
pub fn blur_with(img: &ImageGrid, sigma: f64) -> ImageGrid {
    if sigma <= 0.0 {
        return img.clone();
    }
    let taps = gaussian_taps(sigma);
    let half = (taps.len() / 2) as i64;
    let (h, w) = (img.height(), img.width());
    let src = img.pixels();
    let mut horiz = vec![0.0f64; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (t, &k) in taps.iter().enumerate() {
                let sx = reflect(x as i64 + t as i64 - half, w);
                acc += k * src[y * w + sx] as f64;
            }
            horiz[y * w + x] = acc;
        }
    }
    ImageGrid::from_fn(h, w, |y, x| {
        let mut acc = 0.0;
        for (t, &k) in taps.iter().enumerate() {
            let sy = reflect(y as i64 + t as i64 - half, h);
            acc += k * horiz[sy * w + x];
        }
        acc as f32
    })
}

pub(crate) fn check_radius(radius: (f64, f64)) -> Result<()> {
    if !(radius.0 >= 0.0 && radius.0 <= radius.1) {
        return Err(Error::config(format!(
            "blur radius interval must be ordered and nonnegative, got ({}, {})",
            radius.0, radius.1
        )));
    }
    Ok(())
}

pub fn gaussian_blur(img: &ImageGrid, radius: (f64, f64), rng: &mut Rng) -> Result<ImageGrid> {
    check_radius(radius)?;
    let sigma = uniform(rng, radius.0, radius.1);
    Ok(blur_with(img, sigma))
}
