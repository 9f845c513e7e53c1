//! Synthetic SAR-like targets: bright parametric silhouettes on a dark
//! clutter floor, at a random pose, under multiplicative speckle.

use rand::Rng as _;
use rand_distr::Gamma;
use serde::{Deserialize, Serialize};

use super::{Dataset, Sample};
use crate::augment::ImageGrid;
use crate::error::{Error, Result};
use crate::rng::{stream, tag};

pub const SHAPE_CATALOG: [&str; 12] = [
    "box", "disk", "ellipse", "cross", "tee", "ell", "bars", "ring", "triangle", "aitch", "diamond", "tank",
];

const BACKGROUND: f64 = 0.12;
const TARGET: f64 = 0.72;
const SUPERSAMPLE: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub num_classes: usize,
    pub samples_per_class: usize,
    pub image_size: usize,
    /// Standard deviation of the unit-mean gamma speckle; 0 disables it.
    pub speckle_level: f64,
    /// Width of the pose interval in degrees, centered on 0.
    pub pose_angle_range: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_classes: 10,
            samples_per_class: 50,
            image_size: 64,
            speckle_level: 0.3,
            pose_angle_range: 360.0,
            seed: 10,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 || self.num_classes > SHAPE_CATALOG.len() {
            return Err(Error::config(format!(
                "num_classes must be in [2, {}], got {}",
                SHAPE_CATALOG.len(),
                self.num_classes
            )));
        }
        if self.samples_per_class == 0 || self.image_size < 4 {
            return Err(Error::config("samples_per_class must be >= 1 and image_size >= 4"));
        }
        if !(self.speckle_level >= 0.0 && self.speckle_level.is_finite()) || !(self.pose_angle_range >= 0.0) {
            return Err(Error::config("speckle_level and pose_angle_range must be nonnegative"));
        }
        Ok(())
    }
}

fn rect(x: f64, y: f64, cx: f64, cy: f64, hw: f64, hh: f64) -> bool {
    (x - cx).abs() <= hw && (y - cy).abs() <= hh
}

fn ellipse(x: f64, y: f64, cx: f64, cy: f64, rx: f64, ry: f64) -> bool {
    let (u, v) = ((x - cx) / rx, (y - cy) / ry);
    u * u + v * v <= 1.0
}

/// Membership test for shape `class` in target coordinates (roughly [-1,1]).
fn inside(class: usize, x: f64, y: f64) -> bool {
    match class {
        0 => rect(x, y, 0.0, 0.0, 0.5, 0.32),
        1 => ellipse(x, y, 0.0, 0.0, 0.45, 0.45),
        2 => ellipse(x, y, 0.0, 0.0, 0.65, 0.28),
        3 => rect(x, y, 0.0, 0.0, 0.6, 0.13) || rect(x, y, 0.0, 0.0, 0.13, 0.6),
        4 => rect(x, y, 0.0, -0.45, 0.55, 0.13) || rect(x, y, 0.0, 0.1, 0.13, 0.5),
        5 => rect(x, y, -0.35, 0.0, 0.13, 0.6) || rect(x, y, 0.05, 0.47, 0.4, 0.13),
        6 => rect(x, y, 0.0, -0.32, 0.6, 0.13) || rect(x, y, 0.0, 0.32, 0.6, 0.13),
        7 => ellipse(x, y, 0.0, 0.0, 0.55, 0.55) && !ellipse(x, y, 0.0, 0.0, 0.33, 0.33),
        8 => y <= 0.45 && y >= -0.55 + 1.6 * x.abs(),
        9 => rect(x, y, -0.4, 0.0, 0.12, 0.55) || rect(x, y, 0.4, 0.0, 0.12, 0.55) || rect(x, y, 0.0, 0.0, 0.4, 0.1),
        10 => x.abs() + y.abs() <= 0.6,
        11 => rect(x, y, 0.0, 0.1, 0.55, 0.3) || ellipse(x, y, 0.0, -0.05, 0.22, 0.22) || rect(x, y, 0.0, -0.45, 0.05, 0.35),
        _ => false,
    }
}

/// Fraction of each pixel covered by the rotated shape.
fn render(class: usize, size: usize, degrees: f64) -> ImageGrid {
    let (s, c) = degrees.to_radians().sin_cos();
    let half = size as f64 / 2.0;
    let step = 1.0 / SUPERSAMPLE as f64;
    ImageGrid::from_fn(size, size, |py, px| {
        let mut hits = 0;
        for sy in 0..SUPERSAMPLE {
            for sx in 0..SUPERSAMPLE {
                let u = (px as f64 + (sx as f64 + 0.5) * step - half) / half;
                let v = (py as f64 + (sy as f64 + 0.5) * step - half) / half;
                // inverse rotation into the shape frame
                let (x, y) = (c * u + s * v, -s * u + c * v);
                if inside(class, x, y) {
                    hits += 1;
                }
            }
        }
        let cover = hits as f64 / (SUPERSAMPLE * SUPERSAMPLE) as f64;
        (BACKGROUND + (TARGET - BACKGROUND) * cover) as f32
    })
}

/// Render `samples_per_class` images for each of the first `num_classes`
/// catalog shapes. Ids are `synth/<shape>/<index>`.
pub fn synth_generate(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let speckle = if cfg.speckle_level > 0.0 {
        let looks = 1.0 / (cfg.speckle_level * cfg.speckle_level);
        Some(Gamma::new(looks, 1.0 / looks).map_err(|e| Error::config(e.to_string()))?)
    } else {
        None
    };
    let mut items = Vec::with_capacity(cfg.num_classes * cfg.samples_per_class);
    for class in 0..cfg.num_classes {
        for i in 0..cfg.samples_per_class {
            let mut rng = stream(cfg.seed, &[tag::SYNTH, class as u64, i as u64]);
            let angle = if cfg.pose_angle_range > 0.0 {
                rng.gen_range(-0.5..=0.5) * cfg.pose_angle_range
            } else {
                0.0
            };
            let mut img = render(class, cfg.image_size, angle);
            if let Some(g) = &speckle {
                let pixels = img.pixels().iter().map(|&p| (p as f64 * rng.sample(g)).clamp(0.0, 1.0) as f32).collect();
                img = ImageGrid::new(cfg.image_size, cfg.image_size, pixels)?;
            }
            items.push(Sample::new(img, class, format!("synth/{}/{i:04}", SHAPE_CATALOG[class])));
        }
    }
    let names = SHAPE_CATALOG[..cfg.num_classes].iter().map(|s| s.to_string()).collect();
    Dataset::new(items, names)
}
