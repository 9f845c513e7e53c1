//! Stochastic SAR-oriented image augmentation.
//!
//! Six transforms are available: crop with resize (CR), random rotation (RR),
//! color jitter (CJ), random horizontal flip (RHF), Gaussian noise (GN) and
//! Gaussian blur (GB). [`apply_pipeline`] composes the enabled ones in the
//! fixed order CR, RR, CJ, RHF, GN, GB.

mod grid;
mod ops;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use grid::ImageGrid;
pub use ops::{
    blur_with, color_jitter, color_jitter_with, crop_resize, crop_resize_with, crop_side, flip_with,
    gaussian_blur, gaussian_noise, gaussian_taps, horizontal_flip, random_rotate, rotate_with,
};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Transform identifiers, in pipeline order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TransformKind {
    #[serde(rename = "CR")]
    CropResize,
    #[serde(rename = "RR")]
    Rotate,
    #[serde(rename = "CJ")]
    ColorJitter,
    #[serde(rename = "RHF")]
    HorizontalFlip,
    #[serde(rename = "GN")]
    GaussianNoise,
    #[serde(rename = "GB")]
    GaussianBlur,
}

impl TransformKind {
    pub const ALL: [TransformKind; 6] = [
        TransformKind::CropResize,
        TransformKind::Rotate,
        TransformKind::ColorJitter,
        TransformKind::HorizontalFlip,
        TransformKind::GaussianNoise,
        TransformKind::GaussianBlur,
    ];

    pub fn code(self) -> &'static str {
        match self {
            TransformKind::CropResize => "CR",
            TransformKind::Rotate => "RR",
            TransformKind::ColorJitter => "CJ",
            TransformKind::HorizontalFlip => "RHF",
            TransformKind::GaussianNoise => "GN",
            TransformKind::GaussianBlur => "GB",
        }
    }
}

impl fmt::Display for TransformKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for TransformKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TransformKind::ALL
            .into_iter()
            .find(|t| t.code() == s)
            .ok_or_else(|| Error::config(format!("unknown transform {s:?} (expected one of CR, RR, CJ, RHF, GN, GB)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub crop_scale: (f64, f64),
    pub out_size: usize,
    pub max_degrees: f64,
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub flip_prob: f64,
    pub noise_density: f64,
    pub blur_radius: (f64, f64),
    pub enabled: BTreeSet<TransformKind>,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            crop_scale: (0.85, 1.0),
            out_size: 64,
            max_degrees: 30.0,
            brightness: 0.4,
            contrast: 0.4,
            saturation: 0.0,
            flip_prob: 0.5,
            noise_density: 0.1,
            blur_radius: (0.1, 2.0),
            enabled: [
                TransformKind::CropResize,
                TransformKind::Rotate,
                TransformKind::ColorJitter,
                TransformKind::HorizontalFlip,
                TransformKind::GaussianNoise,
            ]
            .into_iter()
            .collect(),
        }
    }
}

impl AugmentConfig {
    /// A config with nothing enabled; `apply_pipeline` then only resizes.
    pub fn none(out_size: usize) -> Self {
        Self {
            out_size,
            enabled: BTreeSet::new(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        ops::check_scale(self.crop_scale)?;
        ops::check_radius(self.blur_radius)?;
        if self.out_size == 0 {
            return Err(Error::config("out_size must be positive"));
        }
        for (name, v) in [
            ("max_degrees", self.max_degrees),
            ("brightness", self.brightness),
            ("contrast", self.contrast),
            ("saturation", self.saturation),
            ("noise_density", self.noise_density),
        ] {
            if !(v >= 0.0) {
                return Err(Error::config(format!("{name} must be nonnegative, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(Error::config(format!("flip_prob must lie in [0,1], got {}", self.flip_prob)));
        }
        Ok(())
    }

    pub fn is_enabled(&self, kind: TransformKind) -> bool {
        self.enabled.contains(&kind)
    }
}

/// Apply every enabled transform in pipeline order, each drawing from `rng`.
/// The output is always `out_size` x `out_size`.
pub fn apply_pipeline(img: &ImageGrid, cfg: &AugmentConfig, rng: &mut Rng) -> Result<ImageGrid> {
    cfg.validate()?;
    let size = cfg.out_size;
    let mut out = if cfg.is_enabled(TransformKind::CropResize) {
        crop_resize(img, cfg.crop_scale, size, rng)?
    } else {
        img.resize(size, size)
    };
    for kind in TransformKind::ALL.into_iter().skip(1) {
        if !cfg.is_enabled(kind) {
            continue;
        }
        out = match kind {
            TransformKind::Rotate => random_rotate(&out, cfg.max_degrees, rng)?,
            TransformKind::ColorJitter => color_jitter(&out, cfg.brightness, cfg.contrast, cfg.saturation, rng)?,
            TransformKind::HorizontalFlip => horizontal_flip(&out, cfg.flip_prob, rng)?,
            TransformKind::GaussianNoise => gaussian_noise(&out, cfg.noise_density, rng)?,
            TransformKind::GaussianBlur => gaussian_blur(&out, cfg.blur_radius, rng)?,
            TransformKind::CropResize => unreachable!(),
        };
    }
    Ok(out)
}
