use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A single-channel image, row-major, pixel values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageGrid {
    height: usize,
    width: usize,
    pixels: Vec<f32>,
}

impl ImageGrid {
    /// Build from raw pixels. Values are clamped into `[0, 1]`; non-finite
    /// values are rejected.
    pub fn new(height: usize, width: usize, pixels: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::input(format!("image dimensions must be positive, got {height}x{width}")));
        }
        if pixels.len() != height * width {
            return Err(Error::input(format!(
                "pixel buffer has {} values, expected {}",
                pixels.len(),
                height * width
            )));
        }
        if pixels.iter().any(|p| !p.is_finite()) {
            return Err(Error::input("image contains non-finite pixels"));
        }
        let pixels = pixels.into_iter().map(|p| p.clamp(0.0, 1.0)).collect();
        Ok(Self { height, width, pixels })
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        assert!(height > 0 && width > 0, "image dimensions must be positive");
        Self {
            height,
            width,
            pixels: vec![value.clamp(0.0, 1.0); height * width],
        }
    }

    /// Build from a pixel function; output is clamped.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        assert!(height > 0 && width > 0, "image dimensions must be positive");
        let mut pixels = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(y, x).clamp(0.0, 1.0));
            }
        }
        Self { height, width, pixels }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.pixels[y * self.width + x]
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().map(|&p| p as f64).sum::<f64>() / self.pixels.len() as f64
    }

    pub fn sum(&self) -> f64 {
        self.pixels.iter().map(|&p| p as f64).sum()
    }

    /// Bilinear sample at fractional coordinates; positions outside the
    /// frame contribute `fill`.
    pub(crate) fn sample_bilinear(&self, y: f64, x: f64, fill: f32) -> f32 {
        let y0 = y.floor();
        let x0 = x.floor();
        let fy = y - y0;
        let fx = x - x0;
        let (y0, x0) = (y0 as i64, x0 as i64);
        let at = |yy: i64, xx: i64| -> f64 {
            if yy < 0 || xx < 0 || yy >= self.height as i64 || xx >= self.width as i64 {
                fill as f64
            } else {
                self.pixels[yy as usize * self.width + xx as usize] as f64
            }
        };
        let top = at(y0, x0) * (1.0 - fx) + at(y0, x0 + 1) * fx;
        let bottom = at(y0 + 1, x0) * (1.0 - fx) + at(y0 + 1, x0 + 1) * fx;
        (top * (1.0 - fy) + bottom * fy) as f32
    }

    /// Copy out a rectangular window. Caller guarantees bounds.
    pub(crate) fn window(&self, top: usize, left: usize, height: usize, width: usize) -> ImageGrid {
        let mut pixels = Vec::with_capacity(height * width);
        for y in top..top + height {
            let row = y * self.width;
            pixels.extend_from_slice(&self.pixels[row + left..row + left + width]);
        }
        ImageGrid { height, width, pixels }
    }

    /// Bilinear resize with half-pixel centers; same-size resize is a copy.
    pub fn resize(&self, height: usize, width: usize) -> ImageGrid {
        assert!(height > 0 && width > 0, "image dimensions must be positive");
        if height == self.height && width == self.width {
            return self.clone();
        }
        let sy = self.height as f64 / height as f64;
        let sx = self.width as f64 / width as f64;
        let max_y = (self.height - 1) as f64;
        let max_x = (self.width - 1) as f64;
        ImageGrid::from_fn(height, width, |y, x| {
            let src_y = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, max_y);
            let src_x = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, max_x);
            self.sample_bilinear(src_y, src_x, 0.0)
        })
    }

    /// Center crop and/or zero-pad to `size` x `size`.
    pub fn center_fit(&self, size: usize) -> ImageGrid {
        let mut out = vec![0.0f32; size * size];
        let off_y = self.height as i64 - size as i64;
        let off_x = self.width as i64 - size as i64;
        for y in 0..size {
            let sy = y as i64 + off_y / 2;
            if sy < 0 || sy >= self.height as i64 {
                continue;
            }
            for x in 0..size {
                let sx = x as i64 + off_x / 2;
                if sx < 0 || sx >= self.width as i64 {
                    continue;
                }
                out[y * size + x] = self.pixels[sy as usize * self.width + sx as usize];
            }
        }
        ImageGrid {
            height: size,
            width: size,
            pixels: out,
        }
    }

    pub(crate) fn map(&self, f: impl Fn(f32) -> f32) -> ImageGrid {
        ImageGrid {
            height: self.height,
            width: self.width,
            pixels: self.pixels.iter().map(|&p| f(p).clamp(0.0, 1.0)).collect(),
        }
    }
}
