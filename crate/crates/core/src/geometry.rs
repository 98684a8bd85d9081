//! Keypoint heatmaps and the coordinate frames a landmark passes through:
//! raw image → half image → resized → padded network input → crop → heatmap.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Raster;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point2D {
    pub x: f64,
    pub y: f64,
}

impl Point2D {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point2D) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// Axis-aligned scale + translation with an optional horizontal flip:
/// `x' = sx·(±x) + tx`, `y' = sy·y + ty`, with `-x` when `mirror_x` is set.
///
/// Scales are kept positive; flips live in `mirror_x` only.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityTransform2D {
    pub sx: f64,
    pub sy: f64,
    pub tx: f64,
    pub ty: f64,
    pub mirror_x: bool,
}

impl SimilarityTransform2D {
    pub fn new(sx: f64, sy: f64, tx: f64, ty: f64, mirror_x: bool) -> Result<Self> {
        if sx == 0.0 || sy == 0.0 || ![sx, sy, tx, ty].iter().all(|v| v.is_finite()) {
            return Err(Error::Geometry(format!(
                "invalid transform sx={sx} sy={sy} tx={tx} ty={ty}"
            )));
        }
        Ok(Self::from_signed(if mirror_x { -sx } else { sx }, sy, tx, ty))
    }

    pub const fn identity() -> Self {
        Self {
            sx: 1.0,
            sy: 1.0,
            tx: 0.0,
            ty: 0.0,
            mirror_x: false,
        }
    }

    pub fn scale(sx: f64, sy: f64) -> Result<Self> {
        Self::new(sx, sy, 0.0, 0.0, false)
    }

    pub fn translate(tx: f64, ty: f64) -> Self {
        Self {
            tx,
            ty,
            ..Self::identity()
        }
    }

    /// Horizontal flip of a `width`-pixel grid: column `i` ↔ `width − 1 − i`.
    pub fn mirror(width: usize) -> Self {
        Self {
            tx: width as f64 - 1.0,
            mirror_x: true,
            ..Self::identity()
        }
    }

    fn signed_sx(&self) -> f64 {
        if self.mirror_x {
            -self.sx
        } else {
            self.sx
        }
    }

    fn from_signed(ax: f64, sy: f64, tx: f64, ty: f64) -> Self {
        // A negative y scale is folded into sy; only x flips are modelled.
        Self {
            sx: ax.abs(),
            sy,
            tx,
            ty,
            mirror_x: ax < 0.0,
        }
    }

    pub fn apply(&self, p: Point2D) -> Point2D {
        Point2D::new(self.signed_sx() * p.x + self.tx, self.sy * p.y + self.ty)
    }

    pub fn invert(&self) -> Self {
        let ax = self.signed_sx();
        Self::from_signed(1.0 / ax, 1.0 / self.sy, -self.tx / ax, -self.ty / self.sy)
    }

    /// `self` followed by `next`.
    pub fn then(&self, next: &SimilarityTransform2D) -> Self {
        let ax = next.signed_sx() * self.signed_sx();
        Self::from_signed(
            ax,
            next.sy * self.sy,
            next.signed_sx() * self.tx + next.tx,
            next.sy * self.ty + next.ty,
        )
    }
}

impl Default for SimilarityTransform2D {
    fn default() -> Self {
        Self::identity()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianSpec {
    /// Standard deviation in heatmap-frame pixels.
    pub sigma: f64,
}

impl GaussianSpec {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Config(format!("gaussian sigma must be > 0, got {sigma}")));
        }
        Ok(Self { sigma })
    }
}

impl Default for GaussianSpec {
    fn default() -> Self {
        Self { sigma: 4.0 }
    }
}

/// Single-channel response map in `[0, 1]`; `stride` is the ratio between the
/// network-input resolution and the heatmap resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    width: usize,
    height: usize,
    stride: usize,
    values: Vec<f32>,
}

impl Heatmap {
    pub fn new(width: usize, height: usize, stride: usize, values: Vec<f32>) -> Result<Self> {
        if width * height != values.len() || width == 0 || height == 0 {
            return Err(Error::Invalid(format!(
                "heatmap {width}x{height} with {} values",
                values.len()
            )));
        }
        if stride == 0 {
            return Err(Error::Invalid("heatmap stride must be >= 1".into()));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Invalid(format!("heatmap value {v} outside [0, 1]")));
        }
        Ok(Self {
            width,
            height,
            stride,
            values,
        })
    }

    pub fn with_stride(mut self, stride: usize) -> Result<Self> {
        if stride == 0 {
            return Err(Error::Invalid("heatmap stride must be >= 1".into()));
        }
        self.stride = stride;
        Ok(self)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.values[y * self.width + x]
    }

    /// Maps heatmap-frame points to network-input points (scale by stride).
    pub fn to_input(&self) -> SimilarityTransform2D {
        heatmap_to_input(self.stride)
    }

    pub fn to_raster(&self) -> Raster {
        Raster::new(self.width, self.height, self.values.clone()).expect("heatmap dims")
    }

    /// Write an 8-bit PNG plus a `<file>.stride` sidecar holding the stride.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_raster().save_png(path)?;
        let sidecar = sidecar_path(path);
        std::fs::write(&sidecar, format!("stride={}\n", self.stride)).map_err(|e| Error::io(&sidecar, e))
    }
}

pub fn sidecar_path(png: &Path) -> PathBuf {
    let mut s = png.as_os_str().to_owned();
    s.push(".stride");
    PathBuf::from(s)
}

pub fn heatmap_to_input(stride: usize) -> SimilarityTransform2D {
    SimilarityTransform2D::scale(stride as f64, stride as f64).expect("stride >= 1")
}

/// Gaussian bump `exp(−‖p − c‖² / 2σ²)` on an `hh × wh` grid.
pub fn encode_heatmap(center: Point2D, shape: (usize, usize), spec: GaussianSpec) -> Result<Heatmap> {
    let (hh, wh) = shape;
    if !(center.x >= 0.0 && center.x < wh as f64 && center.y >= 0.0 && center.y < hh as f64) {
        return Err(Error::Bounds(format!(
            "heatmap center ({}, {}) outside {wh}x{hh}",
            center.x, center.y
        )));
    }
    let denom = 2.0 * spec.sigma * spec.sigma;
    let mut values = Vec::with_capacity(hh * wh);
    for y in 0..hh {
        let dy2 = (y as f64 - center.y).powi(2);
        for x in 0..wh {
            let d2 = (x as f64 - center.x).powi(2) + dy2;
            values.push((-d2 / denom).exp() as f32);
        }
    }
    Heatmap::new(wh, hh, 1, values)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Decoded {
    /// Centroid-refined location in the heatmap frame.
    pub point: Point2D,
    /// Integer grid location of the global maximum.
    pub argmax: (usize, usize),
    pub peak: f32,
}

/// Global argmax (ties → smallest `(y, x)`) refined by the intensity-weighted
/// centroid of its border-clamped 3×3 neighborhood.
pub fn decode_heatmap(hm: &Heatmap) -> Result<Decoded> {
    let (mut best, mut best_i) = (f32::NEG_INFINITY, 0);
    for (i, &v) in hm.values.iter().enumerate() {
        if v > best {
            best = v;
            best_i = i;
        }
    }
    if best <= 0.0 {
        return Err(Error::NoResponse);
    }
    let (ax, ay) = (best_i % hm.width, best_i / hm.width);
    let (mut sw, mut sx, mut sy) = (0.0f64, 0.0f64, 0.0f64);
    for y in ay.saturating_sub(1)..=(ay + 1).min(hm.height - 1) {
        for x in ax.saturating_sub(1)..=(ax + 1).min(hm.width - 1) {
            let v = f64::from(hm.get(x, y));
            sw += v;
            sx += v * x as f64;
            sy += v * y as f64;
        }
    }
    Ok(Decoded {
        point: Point2D::new(sx / sw, sy / sw),
        argmax: (ax, ay),
        peak: best,
    })
}

/// Top-left corner of a `w × h` window centered on `center` and shifted to
/// lie fully inside an `img_w × img_h` image.
pub fn crop_origin(img_w: usize, img_h: usize, center: Point2D, w: usize, h: usize) -> Result<(usize, usize)> {
    if w > img_w || h > img_h {
        return Err(Error::Geometry(format!(
            "crop window {w}x{h} larger than image {img_w}x{img_h}"
        )));
    }
    if !center.is_finite() {
        return Err(Error::Geometry("non-finite crop center".into()));
    }
    let clamp = |c: f64, win: usize, size: usize| -> usize {
        (c - win as f64 / 2.0).round().clamp(0.0, (size - win) as f64) as usize
    };
    Ok((clamp(center.x, w, img_w), clamp(center.y, h, img_h)))
}

/// Extract a `w × h` window around `center`; the transform maps crop-frame
/// points to source-frame points.
pub fn crop_window(image: &Raster, center: Point2D, size: (usize, usize)) -> Result<(Raster, SimilarityTransform2D)> {
    let (w, h) = size;
    let (x0, y0) = crop_origin(image.width(), image.height(), center, w, h)?;
    Ok((
        image.crop(x0, y0, w, h)?,
        SimilarityTransform2D::translate(x0 as f64, y0 as f64),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identity_and_scale_examples() {
        let p = Point2D::new(10.0, 20.0);
        assert_eq!(SimilarityTransform2D::identity().apply(p), p);
        let t = SimilarityTransform2D::scale(0.5, 0.5).unwrap();
        assert_eq!(t.apply(p), Point2D::new(5.0, 10.0));
    }

    #[test]
    fn zero_scale_rejected() {
        assert!(SimilarityTransform2D::scale(0.0, 1.0).is_err());
    }

    #[test]
    fn mirror_maps_columns() {
        let m = SimilarityTransform2D::mirror(2130);
        assert_eq!(m.apply(Point2D::new(2000.0, 515.0)), Point2D::new(129.0, 515.0));
        assert_eq!(m.invert(), m);
    }

    #[test]
    fn gaussian_values() {
        let hm = encode_heatmap(Point2D::new(10.0, 12.0), (32, 32), GaussianSpec::new(3.0).unwrap()).unwrap();
        assert_eq!(hm.get(10, 12), 1.0);
        let at_sigma = f64::from(hm.get(13, 12));
        assert!((at_sigma - (-0.5f64).exp()).abs() < 1e-7);
        assert!((at_sigma - 0.606531).abs() < 1e-6);
    }

    #[test]
    fn swapped_centers_transpose() {
        let spec = GaussianSpec::new(2.5).unwrap();
        let a = encode_heatmap(Point2D::new(4.0, 9.0), (16, 16), spec).unwrap();
        let b = encode_heatmap(Point2D::new(9.0, 4.0), (16, 16), spec).unwrap();
        for y in 0..16 {
            for x in 0..16 {
                assert_eq!(a.get(x, y), b.get(y, x));
            }
        }
    }

    #[test]
    fn encode_rejects_outside_center() {
        let spec = GaussianSpec::default();
        assert!(encode_heatmap(Point2D::new(16.0, 3.0), (16, 16), spec).is_err());
        assert!(encode_heatmap(Point2D::new(-0.1, 3.0), (16, 16), spec).is_err());
    }

    #[test]
    fn constant_heatmap_ties_to_origin() {
        let hm = Heatmap::new(8, 8, 1, vec![0.5; 64]).unwrap();
        let d = decode_heatmap(&hm).unwrap();
        assert_eq!(d.argmax, (0, 0));
        assert_eq!(d.point, Point2D::new(0.5, 0.5));
        assert_eq!(d.peak, 0.5);
    }

    #[test]
    fn single_pixel_decodes_to_itself() {
        let mut v = vec![0.0; 10 * 12];
        v[7 * 10 + 3] = 0.9;
        let hm = Heatmap::new(10, 12, 1, v).unwrap();
        let d = decode_heatmap(&hm).unwrap();
        assert_eq!(d.point, Point2D::new(3.0, 7.0));
        assert_eq!(d.peak, 0.9);
    }

    #[test]
    fn all_zero_is_no_response() {
        let hm = Heatmap::new(4, 4, 2, vec![0.0; 16]).unwrap();
        assert!(matches!(decode_heatmap(&hm), Err(Error::NoResponse)));
    }

    #[test]
    fn crop_examples() {
        let img = Raster::zeros(499, 499);
        let (_, t) = crop_window(&img, Point2D::new(249.0, 249.0), (384, 288)).unwrap();
        assert_eq!((t.tx, t.ty), (249.0 - 192.0, 249.0 - 144.0));
        let (c, t) = crop_window(&img, Point2D::new(0.0, 0.0), (384, 288)).unwrap();
        assert_eq!((t.tx, t.ty), (0.0, 0.0));
        assert_eq!((c.width(), c.height()), (384, 288));
        assert!(crop_window(&Raster::zeros(300, 499), Point2D::new(0.0, 0.0), (384, 288)).is_err());
    }

    #[test]
    fn heatmap_png_writes_stride_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("hm.png");
        let hm = encode_heatmap(Point2D::new(3.0, 3.0), (8, 8), GaussianSpec::default())
            .unwrap()
            .with_stride(2)
            .unwrap();
        hm.save_png(&path).unwrap();
        assert!(path.exists());
        assert_eq!(std::fs::read_to_string(sidecar_path(&path)).unwrap(), "stride=2\n");
    }

    fn transform() -> impl Strategy<Value = SimilarityTransform2D> {
        (0.05f64..20.0, 0.05f64..20.0, -500.0f64..500.0, -500.0f64..500.0, any::<bool>())
            .prop_map(|(sx, sy, tx, ty, m)| SimilarityTransform2D::new(sx, sy, tx, ty, m).unwrap())
    }

    proptest! {
        #[test]
        fn inverse_round_trip(t in transform(), x in -2000.0f64..2000.0, y in -2000.0f64..2000.0) {
            let p = Point2D::new(x, y);
            let q = t.invert().apply(t.apply(p));
            prop_assert!(q.distance(&p) < 1e-9);
        }

        #[test]
        fn composition_is_associative(a in transform(), b in transform(), c in transform(),
                                      x in -100.0f64..100.0, y in -100.0f64..100.0) {
            let p = Point2D::new(x, y);
            let left = a.then(&b).then(&c).apply(p);
            let right = a.then(&b.then(&c)).apply(p);
            let seq = c.apply(b.apply(a.apply(p)));
            prop_assert!(left.distance(&right) < 1e-9 * (1.0 + seq.x.abs() + seq.y.abs()));
            prop_assert!(left.distance(&seq) < 1e-9 * (1.0 + seq.x.abs() + seq.y.abs()));
        }

        #[test]
        fn crop_stays_inside(cx in -50.0f64..600.0, cy in -50.0f64..600.0, w in 1usize..499, h in 1usize..499) {
            let (x0, y0) = crop_origin(499, 499, Point2D::new(cx, cy), w, h).unwrap();
            prop_assert!(x0 + w <= 499 && y0 + h <= 499);
        }
    }
}
