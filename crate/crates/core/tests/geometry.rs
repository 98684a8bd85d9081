use anglekit::data::synth::{synth_image, SynthConfig};
use anglekit::data::{reconstruct, split_half, SplitOptions};
use anglekit::geometry::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn codec_round_trip_on_1000_centers() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (hh, wh) = (64, 80);
    let (mut worst_argmax, mut worst_centroid) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        let sigma = rng.random_range(2.0..=8.0);
        let c = Point2D::new(rng.random_range(2..wh - 2) as f64, rng.random_range(2..hh - 2) as f64);
        let hm = encode_heatmap(c, (hh, wh), GaussianSpec::new(sigma).unwrap()).unwrap();
        let d = decode_heatmap(&hm).unwrap();
        let a = Point2D::new(d.argmax.0 as f64, d.argmax.1 as f64);
        worst_argmax = worst_argmax.max(a.distance(&c));
        worst_centroid = worst_centroid.max(d.point.distance(&c));
    }
    assert!(worst_argmax <= 0.5, "{worst_argmax}");
    assert!(worst_centroid <= 0.25, "{worst_centroid}");
}

#[test]
fn crop_keeps_spur_for_coarse_errors_under_100() {
    let (w, h) = (384, 288);
    for &gx in &[0.0, 120.0, 249.0, 498.0] {
        for &gy in &[0.0, 250.0, 498.0] {
            let gt = Point2D::new(gx, gy);
            for dx in (-100..=100).step_by(5) {
                for dy in (-100..=100).step_by(5) {
                    let coarse = Point2D::new(gx + dx as f64, gy + dy as f64);
                    if coarse.distance(&gt) >= 100.0 {
                        continue;
                    }
                    let (x0, y0) = crop_origin(499, 499, coarse, w, h).unwrap();
                    let inside = gt.x >= x0 as f64 && gt.x < (x0 + w) as f64 && gt.y >= y0 as f64 && gt.y < (y0 + h) as f64;
                    assert!(inside, "gt {gt:?} coarse {coarse:?}");
                }
            }
        }
    }
}

#[test]
fn mirrored_split_reconstructs_exactly() {
    let cfg = SynthConfig::default();
    for i in 0..5 {
        let (img, rec) = synth_image(&cfg, i).unwrap();
        let (l, r) = split_half(&img, &rec, SplitOptions::default()).unwrap();
        assert_eq!(reconstruct(&l, &r).unwrap().pixels, img.pixels);
        assert!(r.to_raw.apply(r.ss).distance(&rec.ss_right) < 1e-12);
    }
}

fn transform() -> impl Strategy<Value = SimilarityTransform2D> {
    (0.1f64..10.0, 0.1f64..10.0, -500.0f64..500.0, -500.0f64..500.0, any::<bool>(), 2usize..2000).prop_map(
        |(sx, sy, tx, ty, m, w)| {
            let t = SimilarityTransform2D::new(sx, sy, tx, ty, false).unwrap();
            if m {
                SimilarityTransform2D::mirror(w).then(&t)
            } else {
                t
            }
        },
    )
}

proptest! {
    #[test]
    fn transform_chains_invert(chain in prop::collection::vec(transform(), 5), x in -1000.0f64..1000.0, y in -1000.0f64..1000.0) {
        let p = Point2D::new(x, y);
        let composed = chain.iter().skip(1).fold(chain[0], |acc, t| acc.then(t));
        let stepwise = chain.iter().fold(p, |q, t| t.apply(q));
        prop_assert!(composed.apply(p).distance(&stepwise) < 1e-9 * (1.0 + stepwise.x.abs() + stepwise.y.abs()));
        prop_assert!(composed.invert().apply(composed.apply(p)).distance(&p) < 1e-9 * (1.0 + p.x.abs() + p.y.abs()));
    }

    #[test]
    fn subpixel_argmax_within_half_pixel_per_axis(cx in 3.0f64..60.0, cy in 3.0f64..45.0, sigma in 2.0f64..8.0) {
        let c = Point2D::new(cx, cy);
        let hm = encode_heatmap(c, (48, 64), GaussianSpec::new(sigma).unwrap()).unwrap();
        let d = decode_heatmap(&hm).unwrap();
        prop_assert!((d.argmax.0 as f64 - cx).abs() <= 0.5 + 1e-9);
        prop_assert!((d.argmax.1 as f64 - cy).abs() <= 0.5 + 1e-9);
        prop_assert!(d.point.distance(&c) <= Point2D::new(d.argmax.0 as f64, d.argmax.1 as f64).distance(&c) + 1e-6);
    }

    #[test]
    fn crop_window_maps_back(cx in 0.0f64..199.0, cy in 0.0f64..149.0, w in 1usize..200, h in 1usize..150) {
        let img = anglekit::raster::Raster::from_fn(200, 150, |x, y| (x + 1000 * y) as f32);
        let (crop, to_src) = crop_window(&img, Point2D::new(cx, cy), (w, h)).unwrap();
        let q = to_src.apply(Point2D::new((w - 1) as f64, (h - 1) as f64));
        prop_assert_eq!(crop.get(w - 1, h - 1), img.get(q.x as usize, q.y as usize));
    }
}
