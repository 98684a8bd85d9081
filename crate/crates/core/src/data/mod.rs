//! Dataset ingestion: annotation manifests, half-image splitting with exact
//! coordinate bookkeeping, train/test folds and the synthetic generator.

mod halves;
mod manifest;
mod split;
pub mod synth;

use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::geometry::{Point2D, SimilarityTransform2D};
use crate::raster::Raster;

pub use halves::{reconstruct, resize_for_task, split_half, CropSource, FrameConfig, SplitOptions, Task};
pub use manifest::{load_manifest, load_manifest_at, parse_manifest, write_manifest, MANIFEST_HEADER};
pub use split::make_split;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Open = 0,
    Closure = 1,
}

impl Label {
    pub fn from_int(v: i64) -> Option<Self> {
        match v {
            0 => Some(Label::Open),
            1 => Some(Label::Closure),
            _ => None,
        }
    }

    pub fn as_f64(self) -> f64 {
        self as i32 as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn as_str(self) -> &'static str {
        match self {
            Side::Left => "left",
            Side::Right => "right",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "left" => Some(Side::Left),
            "right" => Some(Side::Right),
            _ => None,
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One raw scan with intensities normalized to `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RawImage {
    pub id: String,
    pub pixels: Raster,
}

/// Per-image label plus both scleral-spur points in raw pixel coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub image_id: String,
    pub label: Label,
    pub ss_left: Point2D,
    pub ss_right: Point2D,
}

impl AnnotationRecord {
    pub fn point(&self, side: Side) -> Point2D {
        match side {
            Side::Left => self.ss_left,
            Side::Right => self.ss_right,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub records: Vec<AnnotationRecord>,
    pub image_root: PathBuf,
}

impl DatasetManifest {
    pub fn image_path(&self, image_id: &str) -> PathBuf {
        self.image_root.join(format!("{image_id}.png"))
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn load_image(&self, rec: &AnnotationRecord) -> crate::Result<RawImage> {
        Ok(RawImage {
            id: rec.image_id.clone(),
            pixels: Raster::load_png(&self.image_path(&rec.image_id))?,
        })
    }
}

/// One left or right half with its own-frame landmark and the transform
/// back to raw coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct HalfSample {
    pub image_id: String,
    pub side: Side,
    pub pixels: Raster,
    pub label: Label,
    pub ss: Point2D,
    pub to_raw: SimilarityTransform2D,
}
