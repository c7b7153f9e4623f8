use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use gigadetect_core::classifier::{histogram_features, ConstantClassifier};
use gigadetect_core::color_norm::{hsd_to_rgb, rgb_to_hsd};
use gigadetect_core::detection_metrics::{nms_points, roc_auc};
use gigadetect_core::heatmap_engine::{infer_heatmap, Heatmap, InferenceConfig};
use gigadetect_core::patch_pipeline::{
    apply_color, tissue_grid, AugmentParams, Augmenter, Magnification, PatchGroup, DEFAULT_GRAY_THRESHOLD, PATCH_SIZE,
};
use gigadetect_core::seeds::stream_rng;
use gigadetect_core::slide_store::{generate_synthetic_slide, SyntheticSlideConfig};
use gigadetect_core::Patch;
use rand::Rng;

fn random_patch(seed: u64, lo: f32) -> Patch {
    let mut rng = stream_rng(seed, 0);
    Patch::from_fn(PATCH_SIZE, PATCH_SIZE, |_, _| std::array::from_fn(|_| rng.random_range(lo..1.0)))
}

fn metrics(c: &mut Criterion) {
    let mut rng = stream_rng(1, 0);
    let values: Vec<f32> = (0..64 * 64).map(|_| rng.random()).collect();
    let h = Heatmap::new("bench", 64, 64, 128, values).unwrap();
    c.bench_function("nms_64x64_r6", |b| b.iter(|| nms_points(black_box(&h), 6.0, 0.5)));

    let scores: Vec<f64> = (0..10_000).map(|_| rng.random()).collect();
    let labels: Vec<bool> = (0..10_000).map(|i| i % 3 == 0).collect();
    c.bench_function("roc_auc_10k", |b| b.iter(|| roc_auc(black_box(&scores), &labels).unwrap()));
}

fn color(c: &mut Criterion) {
    c.bench_function("hsd_round_trip_64k", |b| {
        b.iter(|| {
            let mut acc = 0u32;
            for v in 0..65_536u32 {
                let rgb = [(v & 255) as u8, (v >> 8) as u8, ((v * 7) & 255) as u8];
                acc += hsd_to_rgb(rgb_to_hsd(black_box(rgb))).0[0] as u32;
            }
            acc
        })
    });
}

fn patches(c: &mut Criterion) {
    let patch = random_patch(2, 0.0);
    let aug = Augmenter::new(AugmentParams::default()).unwrap();
    let draw = aug.draw(&mut stream_rng(3, 0));
    c.bench_function("color_augment_299", |b| b.iter(|| apply_color(black_box(&patch), &draw.color)));

    let group = PatchGroup {
        slide_id: "bench".into(),
        center: (0, 0),
        members: vec![(Magnification::X40, random_patch(5, -1.0))],
    };
    c.bench_function("histogram_features_299", |b| {
        b.iter(|| histogram_features(black_box(&group), &[Magnification::X40]).unwrap())
    });
}

fn inference(c: &mut Criterion) {
    let slide = generate_synthetic_slide(&SyntheticSlideConfig {
        tumor_count: 1,
        seed: 4,
        ..SyntheticSlideConfig::default()
    })
    .unwrap();
    let tissue = tissue_grid(&slide.pyramid, DEFAULT_GRAY_THRESHOLD).unwrap();
    let classifier = ConstantClassifier::new(0.5).unwrap();
    let mut group = c.benchmark_group("infer_1024");
    group.sample_size(10);
    for tta in [false, true] {
        let config = InferenceConfig {
            tta,
            workers: 1,
            ..InferenceConfig::default()
        };
        group.bench_function(if tta { "tta" } else { "no_tta" }, |b| {
            b.iter(|| infer_heatmap(&slide.pyramid, &tissue, &classifier, &config).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, metrics, color, patches, inference);
criterion_main!(benches);
