use anglekit::data::{split_half, AnnotationRecord, FrameConfig, HalfSample, Label, RawImage, SplitOptions};
use anglekit::geometry::{encode_heatmap, GaussianSpec, Heatmap, Point2D};
use anglekit::models::classifier::Bottleneck;
use anglekit::models::localizer::LEVEL_STRIDES;
use anglekit::models::*;
use anglekit::raster::Raster;
use anglekit::Error;
use anglekit_tensor::{Graph, Mode, ParamKind, ParamStore, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Conv and linear weights on the main path (projection shortcuts excluded).
fn counted_layers(store: &ParamStore) -> usize {
    store
        .iter()
        .filter(|(_, e)| e.kind == ParamKind::Weight && matches!(e.value.rank(), 2 | 4))
        .filter(|(_, e)| e.name.ends_with(".weight") && !e.name.contains("shortcut"))
        .count()
}

#[test]
fn full_size_classifier_has_50_blocks_and_152_layers() {
    let m = Classifier::new(ClassifierConfig::default()).unwrap();
    assert_eq!(m.num_blocks(), 50);
    let per_stage: Vec<usize> = m.stages.iter().map(Vec::len).collect();
    assert_eq!(per_stage, [3, 8, 36, 3]);
    assert_eq!(counted_layers(&m.store), 152);
}

fn small_localizer(variant: EncoderVariant, ppm: bool) -> LocalizerConfig {
    LocalizerConfig {
        encoder: EncoderConfig {
            variant,
            stage_widths: [4, 8, 8, 12, 16],
            ..EncoderConfig::default()
        },
        ppm_enabled: ppm,
        decoder_width: 8,
        input_size: 192,
        ..LocalizerConfig::default()
    }
}

#[test]
fn localizer_pyramid_and_pooling_bins() {
    assert_eq!(LEVEL_STRIDES, [2, 4, 8, 16, 32]);
    let m = Localizer::new(small_localizer(EncoderVariant::Default4, true)).unwrap();
    let mut g = Graph::new(Mode::Eval);
    let x = g.input(Tensor::full([1, 1, 192, 192], 0.3), false);
    let levels = m.pyramid(&mut g, x).unwrap();
    let strides: Vec<usize> = levels.iter().map(|&l| 192 / g.shape(l)[2]).collect();
    assert_eq!(strides, [2, 4, 8, 16, 32]);
    let (_, pooled) = m.ppm.as_ref().unwrap().forward_with_branches(&mut g, &m.store, levels[4]).unwrap();
    let bins: Vec<[usize; 2]> = pooled.iter().map(|&p| [g.shape(p)[2], g.shape(p)[3]]).collect();
    assert_eq!(bins, [[1, 1], [2, 2], [3, 3], [6, 6]]);
}

#[test]
fn every_ablation_combination_builds() {
    for variant in [EncoderVariant::Default4, EncoderVariant::ScaledMbconv] {
        for ppm in [false, true] {
            let m = Localizer::new(small_localizer(variant, ppm)).unwrap();
            assert_eq!(m.ppm.is_some(), ppm);
            let mut g = Graph::new(Mode::Eval);
            let x = g.input(Tensor::full([1, 1, 192, 192], 0.3), false);
            let y = m.forward(&mut g, x).unwrap();
            assert_eq!(g.shape(y), &[1, 1, 96, 96]);
        }
    }
}

enum Path {
    Residual,
    Shortcut,
}

/// Input positions with a nonzero gradient through one path of a stride-2
/// block, for an 8x8 input.
fn covered_positions(tweak_b: bool, tweak_d: bool, path: Path) -> usize {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let block = Bottleneck::new(&mut store, "b", 8, 16, 2, tweak_b, tweak_d, false, &mut rng).unwrap();
    let mut g = Graph::new(Mode::Eval);
    let data = (0..8 * 64).map(|i| 0.5 + (i % 7) as f32 / 7.0).collect();
    let x = g.input(Tensor::new([1, 8, 8, 8], data).unwrap(), true);
    let y = match path {
        Path::Residual => block.residual(&mut g, &store, x).unwrap(),
        Path::Shortcut => block.identity(&mut g, &store, x).unwrap(),
    };
    let seed = Tensor::full(g.shape(y).to_vec(), 1.0);
    let grads = g.backward(y, seed).unwrap();
    let gx = grads.get(x).unwrap().data();
    (0..64).filter(|&p| (0..8).any(|c| gx[c * 64 + p] != 0.0)).count()
}

#[test]
fn average_pool_shortcut_sees_every_position() {
    assert_eq!(covered_positions(true, true, Path::Shortcut), 64);
    assert_eq!(covered_positions(true, false, Path::Shortcut), 16);
}

#[test]
fn stride_moved_to_3x3_sees_every_position() {
    assert_eq!(covered_positions(true, true, Path::Residual), 64);
    assert_eq!(covered_positions(false, true, Path::Residual), 16);
}

/// Finds the bright blob in each input and answers with a sharp heatmap
/// centered on it.
struct BlobOracle {
    stride: usize,
}

impl HeatmapPredictor for BlobOracle {
    fn predict(&self, inputs: &[Raster]) -> anglekit::Result<Vec<Heatmap>> {
        inputs
            .iter()
            .map(|img| {
                let max = img.data().iter().copied().fold(0.0f32, f32::max);
                let (mut sw, mut sx, mut sy) = (0.0, 0.0, 0.0);
                for y in 0..img.height() {
                    for x in 0..img.width() {
                        let v = f64::from(img.get(x, y));
                        if v > f64::from(max) * 0.5 {
                            sw += v;
                            sx += v * x as f64;
                            sy += v * y as f64;
                        }
                    }
                }
                let s = self.stride as f64;
                let c = Point2D::new(sx / sw / s, sy / sw / s);
                let shape = (img.height() / self.stride, img.width() / self.stride);
                encode_heatmap(c, shape, GaussianSpec::new(1.0)?)?.with_stride(self.stride)
            })
            .collect()
    }
}

struct Silent;

impl HeatmapPredictor for Silent {
    fn predict(&self, inputs: &[Raster]) -> anglekit::Result<Vec<Heatmap>> {
        inputs
            .iter()
            .map(|img| Heatmap::new(img.width() / 2, img.height() / 2, 2, vec![0.0; img.width() * img.height() / 4]))
            .collect()
    }
}

fn desk_frames() -> FrameConfig {
    FrameConfig {
        cls_size: 64,
        stage1_size: 188,
        stage1_padded: 192,
        crop: (160, 120),
        crop_padded: (192, 192),
        ..FrameConfig::default()
    }
}

fn blob_halves(left: Point2D, right: Point2D) -> Vec<HalfSample> {
    let bump = |x: usize, y: usize, c: Point2D| {
        let d2 = (x as f64 - c.x).powi(2) + (y as f64 - c.y).powi(2);
        (-d2 / (2.0 * 3.0f64.powi(2))).exp()
    };
    let pixels = Raster::from_fn(128, 128, |x, y| (bump(x, y, left) + bump(x, y, right)) as f32);
    let rec = AnnotationRecord {
        image_id: "blob".into(),
        label: Label::Open,
        ss_left: left,
        ss_right: right,
    };
    let img = RawImage { id: "blob".into(), pixels };
    let (l, r) = split_half(&img, &rec, SplitOptions::default()).unwrap();
    vec![l, r]
}

#[test]
fn two_stage_pipeline_recovers_blob_centers() {
    let frames = desk_frames();
    let oracle = BlobOracle { stride: 2 };
    for (left, right) in [
        (Point2D::new(20.0, 40.0), Point2D::new(100.0, 90.0)),
        (Point2D::new(45.5, 70.25), Point2D::new(80.0, 20.0)),
        (Point2D::new(6.0, 120.0), Point2D::new(121.0, 9.0)),
    ] {
        let halves = blob_halves(left, right);
        let out = localize_two_stage(&oracle, &oracle, &halves, &frames).unwrap();
        for (o, gt) in out.iter().zip([left, right]) {
            let o = o.as_ref().unwrap();
            assert!(!o.fell_back);
            assert!(o.coarse.distance(&gt) <= 1.0, "coarse {:?} vs {gt:?}", o.coarse);
            assert!(o.refined.distance(&gt) <= 1.0, "refined {:?} vs {gt:?}", o.refined);
        }
    }
}

#[test]
fn silent_stages_fail_or_fall_back() {
    let frames = desk_frames();
    let halves = blob_halves(Point2D::new(20.0, 40.0), Point2D::new(100.0, 90.0));
    let out = localize_two_stage(&BlobOracle { stride: 2 }, &Silent, &halves, &frames).unwrap();
    for o in &out {
        let o = o.as_ref().unwrap();
        assert!(o.fell_back);
        assert_eq!(o.refined, o.coarse);
    }
    let out = localize_two_stage(&Silent, &BlobOracle { stride: 2 }, &halves, &frames).unwrap();
    assert!(out.iter().all(|o| matches!(o, Err(Error::NoResponse))));
}
