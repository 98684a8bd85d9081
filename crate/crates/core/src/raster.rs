//! Single-channel `f32` images and the pixel operations the pipeline needs.
//!
//! Coordinates follow one convention everywhere: pixel `(i, j)` has its
//! center at `x = i`, `y = j`, origin top-left, x rightward, y downward.

use std::path::Path;

use anglekit_tensor::ops::bilinear_taps;
use anglekit_tensor::Tensor;
use image::{ImageBuffer, Luma};

use crate::error::{Error, Result};
use crate::geometry::SimilarityTransform2D;

#[derive(Clone, Debug, PartialEq)]
pub struct Raster {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Raster {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if width * height != data.len() {
            return Err(Error::Invalid(format!(
                "raster {width}x{height} needs {} pixels, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }

    /// Columns `[x0, x0 + w)` and rows `[y0, y0 + h)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Raster> {
        if x0 + w > self.width || y0 + h > self.height {
            return Err(Error::Geometry(format!(
                "crop {w}x{h}+{x0}+{y0} exceeds {}x{}",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(w * h);
        for y in y0..y0 + h {
            data.extend_from_slice(&self.data[y * self.width + x0..y * self.width + x0 + w]);
        }
        Ok(Raster {
            width: w,
            height: h,
            data,
        })
    }

    pub fn mirror_x(&self) -> Raster {
        let mut data = Vec::with_capacity(self.data.len());
        for row in self.data.chunks(self.width) {
            data.extend(row.iter().rev());
        }
        Raster {
            width: self.width,
            height: self.height,
            data,
        }
    }

    /// Place `self` at the top-left of a zero canvas of `w×h`.
    pub fn pad_to(&self, w: usize, h: usize) -> Result<Raster> {
        if w < self.width || h < self.height {
            return Err(Error::Geometry(format!(
                "cannot pad {}x{} to smaller {w}x{h}",
                self.width, self.height
            )));
        }
        let mut out = Raster::zeros(w, h);
        for y in 0..self.height {
            out.data[y * w..y * w + self.width]
                .copy_from_slice(&self.data[y * self.width..(y + 1) * self.width]);
        }
        Ok(out)
    }

    /// Content translated by `(dx, dy)` pixels; uncovered pixels are zero.
    pub fn shifted(&self, dx: isize, dy: isize) -> Raster {
        Raster::from_fn(self.width, self.height, |x, y| {
            let (sx, sy) = (x as isize - dx, y as isize - dy);
            if sx < 0 || sy < 0 || sx >= self.width as isize || sy >= self.height as isize {
                0.0
            } else {
                self.data[sy as usize * self.width + sx as usize]
            }
        })
    }

    /// Side-by-side concatenation.
    pub fn hconcat(&self, right: &Raster) -> Result<Raster> {
        if self.height != right.height {
            return Err(Error::Geometry("hconcat height mismatch".into()));
        }
        let w = self.width + right.width;
        let mut data = Vec::with_capacity(w * self.height);
        for y in 0..self.height {
            data.extend_from_slice(&self.data[y * self.width..(y + 1) * self.width]);
            data.extend_from_slice(&right.data[y * right.width..(y + 1) * right.width]);
        }
        Ok(Raster {
            width: w,
            height: self.height,
            data,
        })
    }

    /// Bilinear resampling with half-pixel alignment.
    ///
    /// The returned transform maps resized-frame points to `self`'s frame.
    pub fn resize_bilinear(&self, w: usize, h: usize) -> Result<(Raster, SimilarityTransform2D)> {
        if self.width == 0 || self.height == 0 || w == 0 || h == 0 {
            return Err(Error::Geometry(format!(
                "degenerate resize {}x{} -> {w}x{h}",
                self.width, self.height
            )));
        }
        let tx = bilinear_taps(self.width, w);
        let ty = bilinear_taps(self.height, h);
        let mut data = Vec::with_capacity(w * h);
        for &(y0, y1, fy) in &ty {
            let r0 = &self.data[y0 * self.width..(y0 + 1) * self.width];
            let r1 = &self.data[y1 * self.width..(y1 + 1) * self.width];
            for &(x0, x1, fx) in &tx {
                let top = r0[x0] * (1.0 - fx) + r0[x1] * fx;
                let bot = r1[x0] * (1.0 - fx) + r1[x1] * fx;
                data.push(top * (1.0 - fy) + bot * fy);
            }
        }
        Ok((
            Raster {
                width: w,
                height: h,
                data,
            },
            resize_transform((w, h), (self.width, self.height)),
        ))
    }

    pub fn load_png(path: &Path) -> Result<Raster> {
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        let (w, h) = (img.width() as usize, img.height() as usize);
        let data = match img.color() {
            image::ColorType::L16 | image::ColorType::La16 | image::ColorType::Rgb16 | image::ColorType::Rgba16 => img
                .to_luma16()
                .into_raw()
                .into_iter()
                .map(|v| f32::from(v) / 65535.0)
                .collect(),
            _ => img
                .to_luma8()
                .into_raw()
                .into_iter()
                .map(|v| f32::from(v) / 255.0)
                .collect(),
        };
        Raster::new(w, h, data)
    }

    pub fn to_luma8(&self) -> ImageBuffer<Luma<u8>, Vec<u8>> {
        let raw = self
            .data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        ImageBuffer::from_raw(self.width as u32, self.height as u32, raw).expect("buffer size")
    }

    /// Save as 8-bit grayscale PNG (values clamped to `[0, 1]`).
    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_luma8().save(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Stack rasters of equal size into an `[N, 1, H, W]` tensor.
    pub fn batch_tensor(items: &[&Raster]) -> Result<Tensor> {
        let first = items
            .first()
            .ok_or_else(|| Error::Invalid("empty batch".into()))?;
        let (w, h) = (first.width, first.height);
        let mut data = Vec::with_capacity(items.len() * w * h);
        for r in items {
            if (r.width, r.height) != (w, h) {
                return Err(Error::Invalid(format!(
                    "batch mixes {}x{} with {w}x{h}",
                    r.width, r.height
                )));
            }
            data.extend_from_slice(&r.data);
        }
        Ok(Tensor::new([items.len(), 1, h, w], data)?)
    }
}

/// Maps points of a `dst` grid resampled from a `src` grid back to `src`,
/// using half-pixel alignment: `x_src = (x_dst + 0.5)·(W_src/W_dst) − 0.5`.
pub fn resize_transform(dst: (usize, usize), src: (usize, usize)) -> SimilarityTransform2D {
    let sx = src.0 as f64 / dst.0 as f64;
    let sy = src.1 as f64 / dst.1 as f64;
    SimilarityTransform2D::new(sx, sy, 0.5 * sx - 0.5, 0.5 * sy - 0.5, false).expect("positive scales")
}
