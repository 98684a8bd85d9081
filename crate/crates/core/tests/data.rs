use std::collections::HashSet;
use std::path::PathBuf;

use anglekit::data::synth::{aperture_intensity, synth_dataset, synth_generate, synth_records, SynthConfig};
use anglekit::data::*;
use anglekit::evaluation::{roc_auc, ScoredSample};
use anglekit::geometry::Point2D;
use anglekit::training::sources::{halves_from_images, load_halves};
use proptest::prelude::*;

fn manifest(n: usize) -> DatasetManifest {
    DatasetManifest {
        records: (0..n)
            .map(|i| AnnotationRecord {
                image_id: format!("img{i}"),
                label: if i % 3 == 0 { Label::Closure } else { Label::Open },
                ss_left: Point2D::new(1.0, 1.0),
                ss_right: Point2D::new(5.0, 1.0),
            })
            .collect(),
        image_root: PathBuf::from("."),
    }
}

#[test]
fn eighty_twenty_split_of_1600() {
    let (train, test) = make_split(&manifest(1600), 0.8, 7).unwrap();
    assert_eq!((train.len(), test.len()), (1280, 320));
}

proptest! {
    #[test]
    fn split_is_a_deterministic_partition(n in 2usize..300, ratio in 0.05f64..0.95, seed in any::<u64>()) {
        let m = manifest(n);
        let (a, b) = make_split(&m, ratio, seed).unwrap();
        let (a2, b2) = make_split(&m, ratio, seed).unwrap();
        prop_assert_eq!(&a.records, &a2.records);
        prop_assert_eq!(&b.records, &b2.records);
        let ids_a: HashSet<_> = a.records.iter().map(|r| r.image_id.clone()).collect();
        let ids_b: HashSet<_> = b.records.iter().map(|r| r.image_id.clone()).collect();
        prop_assert!(ids_a.is_disjoint(&ids_b));
        prop_assert_eq!(ids_a.len() + ids_b.len(), n);
    }
}

#[test]
fn closed_fraction_follows_prior() {
    let cfg = SynthConfig {
        count: 5000,
        ..SynthConfig::default()
    };
    let recs = synth_records(&cfg).unwrap();
    let closed = recs.iter().filter(|r| r.record.label == Label::Closure).count() as f64 / 5000.0;
    assert!((closed - 0.2).abs() <= 0.02, "{closed}");
}

#[test]
fn closed_and_open_wedges_are_separable() {
    let cfg = SynthConfig {
        count: 300,
        seed: 3,
        ..SynthConfig::default()
    };
    let halves = halves_from_images(&synth_dataset(&cfg).unwrap(), SplitOptions::default()).unwrap();
    let scored: Vec<ScoredSample> = halves
        .iter()
        .map(|h| ScoredSample {
            image_id: h.image_id.clone(),
            side: h.side,
            score: aperture_intensity(&h.pixels, h.ss, 2.0, (12.0, 36.0)),
            label: h.label,
        })
        .collect();
    let auc = roc_auc(&scored).unwrap();
    assert!(auc >= 0.9, "{auc}");
}

#[test]
fn written_dataset_loads_back_identically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig {
        count: 6,
        seed: 5,
        ..SynthConfig::default()
    };
    let written = synth_generate(&cfg, dir.path()).unwrap();
    let loaded = load_manifest(&dir.path().join("manifest.csv")).unwrap();
    assert_eq!(loaded.records, written.records);
    let from_disk = load_halves(&loaded, SplitOptions::default()).unwrap();
    let in_memory = halves_from_images(&synth_dataset(&cfg).unwrap(), SplitOptions::default()).unwrap();
    assert_eq!(from_disk.len(), 12);
    for (a, b) in from_disk.iter().zip(&in_memory) {
        assert_eq!(a.image_id, b.image_id);
        assert_eq!(a.side, b.side);
        let max_diff = a.pixels.data().iter().zip(b.pixels.data()).map(|(x, y)| (x - y).abs()).fold(0.0f32, f32::max);
        assert!(max_diff <= 0.5 / 255.0 + 1e-6, "{max_diff}");
    }
}
