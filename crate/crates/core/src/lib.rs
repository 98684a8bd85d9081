//! Angle-closure classification and two-stage scleral-spur localization for
//! anterior-segment OCT scans.

pub mod data;
pub mod evaluation;
mod error;
pub mod geometry;
pub mod losses;
pub mod models;
pub mod training;
pub mod raster;

pub use error::{Error, Result};
