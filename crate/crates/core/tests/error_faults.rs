use moc::evaluator::{error_analysis, frame_gts, ErrorBreakdown, ErrorConfig, FrameDetection};
use moc::synthgen::{generate_annotation, MotionModel, SceneSpec};
use moc::VideoAnnotation;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn video(seed: u64) -> VideoAnnotation {
    generate_annotation(
        &SceneSpec {
            seed,
            num_instances: 3,
            motion: MotionModel::RandomLinear { max_speed: 2.0 },
            box_size: [20, 40],
            classes: 3,
            num_frames: 40,
            width: 192,
            height: 192,
            min_separation: 60.0,
            duration: Some([15, 25]),
        },
        format!("f{seed}"),
    )
    .unwrap()
}

fn perfect(v: &VideoAnnotation) -> Vec<FrameDetection> {
    frame_gts(std::slice::from_ref(v))
        .into_iter()
        .map(|g| FrameDetection { video_id: g.video_id, frame: g.frame, class_id: g.class_id, score: 0.9, bbox: g.bbox })
        .collect()
}

fn analyse(dets: &[FrameDetection], v: &VideoAnnotation) -> ErrorBreakdown {
    error_analysis(dets, std::slice::from_ref(v), &ErrorConfig::default())
}

fn strictly_rising(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[1] > w[0])
}

#[test]
fn each_fault_raises_its_category() {
    let levels = [0.1, 0.3, 0.6];
    for seed in 0..5 {
        let v = video(seed);
        let base = perfect(&v);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let picks: Vec<f64> = base.iter().map(|_| rng.random()).collect();

        let flip: Vec<f64> = levels
            .iter()
            .map(|&p| {
                let d: Vec<_> = base
                    .iter()
                    .zip(&picks)
                    .map(|(d, &u)| FrameDetection { class_id: if u < p { (d.class_id + 1) % 3 } else { d.class_id }, ..d.clone() })
                    .collect();
                analyse(&d, &v).e_c
            })
            .collect();
        assert!(strictly_rising(&flip), "class flips {flip:?}");

        let jitter: Vec<f64> = levels
            .iter()
            .map(|&p| {
                let d: Vec<_> = base
                    .iter()
                    .zip(&picks)
                    .map(|(d, &u)| FrameDetection { bbox: if u < p { d.bbox.translate(d.bbox.width() * 0.7, 0.0) } else { d.bbox }, ..d.clone() })
                    .collect();
                analyse(&d, &v).e_l
            })
            .collect();
        assert!(strictly_rising(&jitter), "jitter {jitter:?}");

        let time: Vec<f64> = levels
            .iter()
            .map(|&p| {
                let mut d = base.clone();
                let inst = v.instances.iter().find(|i| i.start_frame > 0 || i.end_frame() + 1 < v.num_frames).unwrap();
                let outside: Vec<usize> = (0..v.num_frames)
                    .filter(|&f| !v.instances.iter().any(|i| i.class_id == inst.class_id && i.contains_frame(f)))
                    .collect();
                let extra = ((outside.len() as f64) * p).ceil() as usize;
                for &f in outside.iter().take(extra) {
                    d.push(FrameDetection { video_id: v.video_id.clone(), frame: f, class_id: inst.class_id, score: 0.5, bbox: inst.boxes[0] });
                }
                analyse(&d, &v).e_t
            })
            .collect();
        assert!(strictly_rising(&time), "time {time:?}");

        let missed: Vec<f64> = levels
            .iter()
            .map(|&p| {
                let d: Vec<_> = base.iter().zip(&picks).filter(|(_, &u)| u >= p).map(|(d, _)| d.clone()).collect();
                analyse(&d, &v).e_m
            })
            .collect();
        assert!(strictly_rising(&missed), "missed {missed:?}");
    }
}
