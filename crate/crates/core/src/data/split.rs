use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::DatasetManifest;

/// Seeded train/test partition by image id; both halves of an image always
/// land in the same fold. Each fold keeps manifest order.
pub fn make_split(m: &DatasetManifest, ratio: f64, seed: u64) -> Result<(DatasetManifest, DatasetManifest)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!("split ratio must be in (0, 1), got {ratio}")));
    }
    let n = m.records.len();
    if n < 2 {
        return Err(Error::Invalid(format!("need at least 2 records to split, got {n}")));
    }
    let n_train = ((ratio * n as f64).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut is_train = vec![false; n];
    for &i in &order[..n_train] {
        is_train[i] = true;
    }
    let fold = |want: bool| DatasetManifest {
        records: m
            .records
            .iter()
            .zip(&is_train)
            .filter(|(_, &t)| t == want)
            .map(|(r, _)| r.clone())
            .collect(),
        image_root: m.image_root.clone(),
    };
    Ok((fold(true), fold(false)))
}
