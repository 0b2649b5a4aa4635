//! Seeded fixtures shared by the benchmarks in `benches/`.

use moc::encoder::{encode_clip, ClipTargets};
use moc::map::DenseMap;
use moc::pipeline::PipelineConfig;
use moc::synthgen::{generate_annotation, MotionModel, NoiseLevels, SceneSpec, SizeFill};
use moc::{GridSpec, VideoAnnotation};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_heatmap(seed: u64, height: usize, width: usize, classes: usize) -> DenseMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..height * width * classes).map(|_| rng.random::<f32>()).collect();
    DenseMap::from_vec(height, width, classes, data).expect("finite data")
}

/// A scene sized like the CLI defaults: 288x288 input, 3 classes.
pub fn scene(seed: u64, frames: usize) -> VideoAnnotation {
    generate_annotation(
        &SceneSpec {
            seed,
            num_instances: 3,
            motion: MotionModel::RandomLinear { max_speed: 3.0 },
            box_size: [24, 64],
            classes: 3,
            num_frames: frames,
            width: 288,
            height: 288,
            min_separation: 72.0,
            duration: None,
        },
        format!("bench_{seed}"),
    )
    .expect("feasible scene")
}

pub fn spec(k: usize) -> GridSpec {
    GridSpec::new(k, 288, 288, 4, 3).expect("valid grid")
}

/// Prediction heatmap and targets for the focal loss.
pub fn focal_problem(seed: u64) -> (DenseMap, ClipTargets) {
    let spec = spec(7);
    let ann = scene(seed, 7);
    let targets = encode_clip(&ann.instances, 0, &spec).expect("encodable");
    let (gw, gh) = spec.grid();
    let pred = random_heatmap(seed, gh, gw, spec.classes());
    (pred, targets)
}

/// Noisy pipeline so linking sees many competing candidates.
pub fn noisy_pipeline(seed: u64) -> PipelineConfig {
    let mut cfg = PipelineConfig::new(spec(7));
    cfg.noise = NoiseLevels { heatmap: 0.1, movement: 0.3, size: 0.3 };
    cfg.noise_seed = seed;
    cfg.fill = SizeFill::Footprint;
    cfg
}

/// Scores and per-detection similarities for an AP computation.
pub fn ap_case(seed: u64, detections: usize, gts: usize) -> (Vec<f64>, Vec<Vec<(usize, f64)>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scores = (0..detections).map(|_| rng.random()).collect();
    let sims = (0..detections)
        .map(|_| {
            let mut row = Vec::new();
            for g in 0..gts {
                if rng.random_bool(0.1) {
                    row.push((g, rng.random()));
                }
            }
            row
        })
        .collect();
    (scores, sims)
}
