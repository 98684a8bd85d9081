//! Seeded synthetic scans: two bright curved bands meeting at a wedge apex on
//! a noisy dark background, one wedge per half. The apex is the landmark and
//! the aperture angle decides the label.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point2D;
use crate::raster::Raster;

use super::{write_manifest, AnnotationRecord, DatasetManifest, Label, RawImage};

pub const CONFIG_FILE: &str = "synth_config.json";
pub const MANIFEST_FILE: &str = "manifest.csv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub count: usize,
    /// `(height, width)` of each raw image.
    pub size: (usize, usize),
    /// Aperture range in degrees for open angles.
    pub aperture_range_open: (f64, f64),
    pub aperture_range_closed: (f64, f64),
    pub noise_sigma: f64,
    pub seed: u64,
    /// Minimum apex distance from each half's border.
    pub margin: f64,
    pub closed_prior: f64,
    pub background: f64,
    pub band_intensity: f64,
    /// Gaussian cross-section sigma of each band.
    pub band_width: f64,
    pub arm_length: f64,
    /// Max absolute rotation of the wedge bisector, degrees.
    pub max_tilt: f64,
    /// Max absolute bend of each arm, in px of sideways offset per px² of length.
    pub max_curvature: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            count: 500,
            size: (128, 128),
            aperture_range_open: (35.0, 60.0),
            aperture_range_closed: (5.0, 15.0),
            noise_sigma: 0.05,
            seed: 0,
            margin: 12.0,
            closed_prior: 0.2,
            background: 0.1,
            band_intensity: 0.8,
            band_width: 1.6,
            arm_length: 48.0,
            max_tilt: 3.0,
            max_curvature: 0.004,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.size;
        if self.count == 0 {
            return Err(Error::Config("synth count must be at least 1".into()));
        }
        if w < 4 || w % 2 != 0 || h < 2 {
            return Err(Error::Config(format!("synth size {h}x{w} needs an even width of at least 4")));
        }
        let range_ok = |(lo, hi): (f64, f64)| lo > 0.0 && lo <= hi && hi < 180.0;
        if !range_ok(self.aperture_range_open) || !range_ok(self.aperture_range_closed) {
            return Err(Error::Config("aperture ranges must satisfy 0 < lo <= hi < 180".into()));
        }
        let (ol, oh) = self.aperture_range_open;
        let (cl, ch) = self.aperture_range_closed;
        if !(oh < cl || ch < ol) {
            return Err(Error::Config("open and closed aperture ranges overlap".into()));
        }
        if !(0.0..=1.0).contains(&self.closed_prior) {
            return Err(Error::Config(format!("closed_prior {} outside [0, 1]", self.closed_prior)));
        }
        let nonneg = [
            self.noise_sigma,
            self.margin,
            self.background,
            self.band_intensity,
            self.max_tilt,
            self.max_curvature,
        ];
        if nonneg.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || !(self.band_width > 0.0 && self.arm_length > 0.0) {
            return Err(Error::Config("synth intensities, widths and lengths must be nonnegative".into()));
        }
        let hw = (w / 2) as f64;
        if 2.0 * self.margin >= hw - 1.0 || 2.0 * self.margin >= h as f64 - 1.0 {
            return Err(Error::Geometry(format!(
                "margin {} leaves no room for an apex in a {}x{h} half",
                self.margin,
                w / 2
            )));
        }
        Ok(())
    }
}

/// Wedge parameters for one half, in left-half orientation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Wedge {
    pub apex: Point2D,
    pub aperture_deg: f64,
    pub tilt_deg: f64,
    pub curvature: [f64; 2],
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthRecord {
    pub record: AnnotationRecord,
    /// `[left, right]`, both in left-half orientation.
    pub wedges: [Wedge; 2],
}

pub fn image_id(i: usize) -> String {
    format!("syn{i:05}")
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn sample_record(cfg: &SynthConfig, i: usize) -> SynthRecord {
    let mut rng = rng_for(cfg.seed, 2 * i as u64);
    let (h, w) = cfg.size;
    let hw = (w / 2) as f64;
    let closed = rng.random::<f64>() < cfg.closed_prior;
    let (lo, hi) = if closed {
        cfg.aperture_range_closed
    } else {
        cfg.aperture_range_open
    };
    let mut wedge = || Wedge {
        apex: Point2D::new(
            rng.random_range(cfg.margin..=hw - 1.0 - cfg.margin),
            rng.random_range(cfg.margin..=h as f64 - 1.0 - cfg.margin),
        ),
        aperture_deg: rng.random_range(lo..=hi),
        tilt_deg: rng.random_range(-cfg.max_tilt..=cfg.max_tilt),
        curvature: [
            rng.random_range(-cfg.max_curvature..=cfg.max_curvature),
            rng.random_range(-cfg.max_curvature..=cfg.max_curvature),
        ],
    };
    let wedges = [wedge(), wedge()];
    let right = wedges[1].apex;
    SynthRecord {
        record: AnnotationRecord {
            image_id: image_id(i),
            label: if closed { Label::Closure } else { Label::Open },
            ss_left: wedges[0].apex,
            ss_right: Point2D::new((w - 1) as f64 - right.x, right.y),
        },
        wedges,
    }
}

/// Labels and landmarks without rendering any pixels.
pub fn synth_records(cfg: &SynthConfig) -> Result<Vec<SynthRecord>> {
    cfg.validate()?;
    Ok((0..cfg.count).map(|i| sample_record(cfg, i)).collect())
}

fn arm_points(wedge: &Wedge, arm: usize, len: f64) -> Vec<(f64, f64)> {
    let sign = if arm == 0 { -1.0 } else { 1.0 };
    let phi = (wedge.tilt_deg + sign * wedge.aperture_deg / 2.0).to_radians();
    let (dx, dy) = (phi.cos(), phi.sin());
    let (nx, ny) = (-dy, dx);
    let k = wedge.curvature[arm];
    let steps = (len * 2.0).ceil() as usize;
    (0..=steps)
        .map(|s| {
            let t = s as f64 * 0.5;
            let bend = k * t * t;
            (wedge.apex.x + t * dx + bend * nx, wedge.apex.y + t * dy + bend * ny)
        })
        .collect()
}

/// Noise-free wedge rendering into an `hw x h` half in left orientation.
fn render_wedge(cfg: &SynthConfig, wedge: &Wedge, hw: usize, h: usize) -> Vec<f64> {
    let arms = [arm_points(wedge, 0, cfg.arm_length), arm_points(wedge, 1, cfg.arm_length)];
    let inv = 1.0 / (2.0 * cfg.band_width * cfg.band_width);
    let reach = (4.0 * cfg.band_width).powi(2);
    let mut out = vec![cfg.background; hw * h];
    for y in 0..h {
        for x in 0..hw {
            let mut best = f64::INFINITY;
            for arm in &arms {
                for &(px, py) in arm {
                    let d = (x as f64 - px).powi(2) + (y as f64 - py).powi(2);
                    best = best.min(d);
                }
            }
            if best < reach {
                out[y * hw + x] += cfg.band_intensity * (-best * inv).exp();
            }
        }
    }
    out
}

/// Render image `i` of the set; identical to what `synth_generate` writes.
pub fn synth_image(cfg: &SynthConfig, i: usize) -> Result<(RawImage, AnnotationRecord)> {
    cfg.validate()?;
    if i >= cfg.count {
        return Err(Error::Invalid(format!("image index {i} beyond count {}", cfg.count)));
    }
    let rec = sample_record(cfg, i);
    let (h, w) = cfg.size;
    let hw = w / 2;
    let left = render_wedge(cfg, &rec.wedges[0], hw, h);
    let right = render_wedge(cfg, &rec.wedges[1], hw, h);
    let mut rng = rng_for(cfg.seed, 2 * i as u64 + 1);
    let noise = Normal::new(0.0, cfg.noise_sigma).map_err(|e| Error::Config(e.to_string()))?;
    let mut data = vec![0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            let clean = if x < hw {
                left[y * hw + x]
            } else {
                right[y * hw + (w - 1 - x)]
            };
            data[y * w + x] = (clean + noise.sample(&mut rng)).clamp(0.0, 1.0) as f32;
        }
    }
    Ok((
        RawImage {
            id: rec.record.image_id.clone(),
            pixels: Raster::new(w, h, data)?,
        },
        rec.record,
    ))
}

/// Render the whole set in memory.
pub fn synth_dataset(cfg: &SynthConfig) -> Result<Vec<(RawImage, AnnotationRecord)>> {
    cfg.validate()?;
    (0..cfg.count).into_par_iter().map(|i| synth_image(cfg, i)).collect()
}

/// Write `<id>.png` files, `manifest.csv` and `synth_config.json` to `out`.
pub fn synth_generate(cfg: &SynthConfig, out: &Path) -> Result<DatasetManifest> {
    cfg.validate()?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let records = (0..cfg.count)
        .into_par_iter()
        .map(|i| {
            let (img, rec) = synth_image(cfg, i)?;
            img.pixels.save_png(&out.join(format!("{}.png", img.id)))?;
            Ok(rec)
        })
        .collect::<Result<Vec<_>>>()?;
    write_manifest(&out.join(MANIFEST_FILE), &records)?;
    let cfg_path = out.join(CONFIG_FILE);
    std::fs::write(&cfg_path, serde_json::to_string_pretty(cfg)? + "\n").map_err(|e| Error::io(&cfg_path, e))?;
    Ok(DatasetManifest {
        records,
        image_root: out.to_path_buf(),
    })
}

/// Mean intensity inside the wedge aperture sector of a left-oriented half;
/// higher means a narrower (closed) angle.
pub fn aperture_intensity(half: &Raster, apex: Point2D, half_angle_deg: f64, radii: (f64, f64)) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for y in 0..half.height() {
        for x in 0..half.width() {
            let (dx, dy) = (x as f64 - apex.x, y as f64 - apex.y);
            let r = dx.hypot(dy);
            if r < radii.0 || r > radii.1 {
                continue;
            }
            if dy.atan2(dx).to_degrees().abs() <= half_angle_deg {
                sum += half.get(x, y) as f64;
                n += 1;
            }
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}
