use ndarray::{s, Array3};

use crate::error::{Error, Result};

/// Floating-point image stored as `height × width × channels`, values nominally in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub data: Array3<f64>,
}

impl Image {
    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Image { data: Array3::zeros((height, width, channels)) }
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        Image { data: Array3::from_elem((height, width, channels), value) }
    }

    pub fn width(&self) -> usize {
        self.data.dim().1
    }

    pub fn height(&self) -> usize {
        self.data.dim().0
    }

    pub fn channels(&self) -> usize {
        self.data.dim().2
    }

    /// Loads an 8-bit RGB image from disk.
    pub fn open(path: &std::path::Path) -> Result<Self> {
        let rgb = ::image::open(path)?.to_rgb8();
        let (w, h) = rgb.dimensions();
        let mut data = Array3::zeros((h as usize, w as usize, 3));
        for (x, y, px) in rgb.enumerate_pixels() {
            for c in 0..3 {
                data[[y as usize, x as usize, c]] = f64::from(px[c]) / 255.0;
            }
        }
        Ok(Image { data })
    }

    /// Bilinear resize (pixel-center aligned).
    pub fn resize(&self, width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Input("resize target must be non-empty".into()));
        }
        let (sh, sw, c) = self.data.dim();
        if (sw, sh) == (width, height) {
            return Ok(self.clone());
        }
        let mut out = Array3::zeros((height, width, c));
        let fx = sw as f64 / width as f64;
        let fy = sh as f64 / height as f64;
        for y in 0..height {
            let sy = ((y as f64 + 0.5) * fy - 0.5).clamp(0.0, (sh - 1) as f64);
            let y0 = sy.floor() as usize;
            let y1 = (y0 + 1).min(sh - 1);
            let wy = sy - y0 as f64;
            for x in 0..width {
                let sx = ((x as f64 + 0.5) * fx - 0.5).clamp(0.0, (sw - 1) as f64);
                let x0 = sx.floor() as usize;
                let x1 = (x0 + 1).min(sw - 1);
                let wx = sx - x0 as f64;
                for ch in 0..c {
                    let top = self.data[[y0, x0, ch]] * (1.0 - wx) + self.data[[y0, x1, ch]] * wx;
                    let bot = self.data[[y1, x0, ch]] * (1.0 - wx) + self.data[[y1, x1, ch]] * wx;
                    out[[y, x, ch]] = top * (1.0 - wy) + bot * wy;
                }
            }
        }
        Ok(Image { data: out })
    }

    /// Averages non-overlapping `factor × factor` blocks.
    pub fn avg_pool(&self, factor: usize) -> Self {
        let (h, w, c) = self.data.dim();
        let (oh, ow) = (h / factor, w / factor);
        let mut out = Array3::zeros((oh, ow, c));
        let norm = (factor * factor) as f64;
        for y in 0..oh {
            for x in 0..ow {
                let block = self.data.slice(s![y * factor..(y + 1) * factor, x * factor..(x + 1) * factor, ..]);
                for ch in 0..c {
                    out[[y, x, ch]] = block.slice(s![.., .., ch]).sum() / norm;
                }
            }
        }
        Image { data: out }
    }

    pub fn crop(&self, x: usize, y: usize, width: usize, height: usize) -> Self {
        Image { data: self.data.slice(s![y..y + height, x..x + width, ..]).to_owned() }
    }
}
