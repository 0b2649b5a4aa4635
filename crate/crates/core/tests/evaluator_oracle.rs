use moc::evaluator::{average_precision, frame_gts, frame_map, greedy_match, FrameDetection};
use moc::{BBox, Instance, VideoAnnotation};
use proptest::prelude::*;

/// Independent reference: stable sort, greedy claim, then for every true
/// positive add 1/num_gt times the best precision at this rank or later.
fn brute_force_ap(scores: &[f64], sims: &[Vec<f64>], threshold: f64) -> Option<f64> {
    let num_gt = sims.first().map_or(0, Vec::len);
    if num_gt == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // insertion sort keeps equal scores in input order
    for i in 1..order.len() {
        let mut j = i;
        while j > 0 && scores[order[j - 1]] < scores[order[j]] {
            order.swap(j - 1, j);
            j -= 1;
        }
    }
    let mut used = vec![false; num_gt];
    let mut hits = Vec::new();
    for &d in &order {
        let mut best: Option<usize> = None;
        for g in 0..num_gt {
            if used[g] || sims[d][g] <= threshold {
                continue;
            }
            if best.is_none_or(|b| sims[d][g] > sims[d][b]) {
                best = Some(g);
            }
        }
        if let Some(g) = best {
            used[g] = true;
        }
        hits.push(best.is_some());
    }
    let precision_at = |k: usize| hits[..=k].iter().filter(|&&h| h).count() as f64 / (k + 1) as f64;
    let mut ap = 0.0;
    for k in 0..hits.len() {
        if hits[k] {
            let best = (k..hits.len()).map(precision_at).fold(0.0, f64::max);
            ap += best / num_gt as f64;
        }
    }
    Some(ap)
}

fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<Vec<f64>>)> {
    (0usize..=20, 1usize..=10).prop_flat_map(|(d, g)| {
        (
            prop::collection::vec(prop::sample::select(vec![0.1, 0.3, 0.5, 0.7, 0.9, 1.0]), d),
            prop::collection::vec(prop::collection::vec(prop::sample::select(vec![0.0, 0.2, 0.45, 0.5, 0.55, 0.8, 1.0]), g), d),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn ap_matches_brute_force((scores, sims) in instance()) {
        let num_gt = sims.first().map_or(1, Vec::len);
        let sims = if sims.is_empty() { vec![] } else { sims };
        let got = average_precision(&scores, num_gt, |d| sims[d].iter().copied().enumerate().collect(), 0.5);
        let want = if sims.is_empty() { Some(0.0) } else { brute_force_ap(&scores, &sims, 0.5) };
        prop_assert!((got.unwrap() - want.unwrap()).abs() < 1e-12, "{:?} vs {:?}", got, want);
    }

    #[test]
    fn appending_lowest_score_keeps_prefix((scores, sims) in instance()) {
        prop_assume!(!scores.is_empty());
        let num_gt = sims[0].len();
        let low = scores.iter().copied().fold(f64::INFINITY, f64::min) - 0.05;
        let mut more = scores.clone();
        more.push(low);
        let a = greedy_match(&scores, num_gt, |d| sims[d].iter().copied().enumerate().collect(), 0.5);
        let b = greedy_match(&more, num_gt, |d| {
            if d < sims.len() { sims[d].iter().copied().enumerate().collect() } else { vec![(0, 1.0)] }
        }, 0.5);
        prop_assert_eq!(&a.is_tp[..], &b.is_tp[..a.is_tp.len()]);
        let mut seen = std::collections::HashSet::new();
        prop_assert!(b.matched_gt.iter().flatten().all(|g| seen.insert(*g)));
    }

    #[test]
    fn equal_scores_follow_input_order(n in 1usize..8) {
        // n equal-score detections all matching the single GT: only the first is a TP
        let m = greedy_match(&vec![0.5; n], 1, |_| vec![(0, 0.9)], 0.5);
        prop_assert_eq!(m.ranking, (0..n).collect::<Vec<_>>());
        prop_assert!(m.is_tp[0] && m.is_tp[1..].iter().all(|t| !t));
    }
}

#[test]
fn worked_example_tp_fp_tp() {
    let ap = average_precision(&[0.9, 0.8, 0.7], 2, |d| if d == 1 { vec![] } else { vec![(d / 2, 1.0)] }, 0.5).unwrap();
    assert!((ap - (0.5 + 0.5 * 2.0 / 3.0)).abs() < 1e-12);
    assert!((ap - 0.833_333_333_333_333_4).abs() < 1e-12);
}

#[test]
fn frame_map_with_dropped_detections_matches_oracle() {
    let b = |x: f64| BBox::new(x, 10.0, x + 20.0, 30.0).unwrap();
    let video = VideoAnnotation {
        video_id: "v".into(),
        num_frames: 10,
        width: 100,
        height: 100,
        instances: vec![Instance::new(0, 0, (0..10).map(|f| b(f as f64)).collect()).unwrap()],
    };
    // keep every other frame, uniform score
    let dets: Vec<FrameDetection> = (0..10)
        .step_by(2)
        .map(|f| FrameDetection { video_id: "v".into(), frame: f, class_id: 0, score: 0.5, bbox: b(f as f64) })
        .collect();
    let got = frame_map(&dets, &frame_gts(&[video]), 1, 0.5);
    let sims: Vec<Vec<f64>> = (0..5).map(|d| (0..10).map(|g| if g == 2 * d { 1.0 } else { 0.0 }).collect()).collect();
    let want = brute_force_ap(&[0.5; 5], &sims, 0.5).unwrap();
    assert!((got.map - want).abs() < 1e-12);
    assert!((got.map - 0.5).abs() < 1e-12);
}
