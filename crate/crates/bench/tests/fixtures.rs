use moc_bench::{ap_case, focal_problem, noisy_pipeline, random_heatmap, scene};

#[test]
fn fixtures_are_seeded() {
    assert_eq!(random_heatmap(5, 8, 8, 2), random_heatmap(5, 8, 8, 2));
    assert_ne!(random_heatmap(5, 8, 8, 2), random_heatmap(6, 8, 8, 2));
    assert_eq!(ap_case(1, 50, 10), ap_case(1, 50, 10));
}

#[test]
fn fixtures_fit_the_hot_paths() {
    let (pred, targets) = focal_problem(2);
    assert!(pred.same_dims(&targets.center_heatmap));
    assert_eq!(targets.n(), 3);
    let tubes = moc::pipeline::link_video(&scene(4, 30), &noisy_pipeline(4)).unwrap();
    assert!(!tubes.is_empty());
}
