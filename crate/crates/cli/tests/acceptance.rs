//! Acceptance gate. Runs every criterion in sequence, prints one line per
//! criterion and exits nonzero if any failed.
//!
//! `cargo test -p moc-cli --test acceptance`

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use moc::decoder::{decode_tubelets, extract_peaks, peak_order, MovementMode, Peak};
use moc::encoder::{encode_clip, key_center};
use moc::evaluator::{average_precision, error_analysis, frame_gts, ErrorBreakdown, ErrorConfig, FrameDetection};
use moc::gradcheck::{run_suite, GradCheckConfig};
use moc::losses::{clip_loss, LossParams};
use moc::map::DenseMap;
use moc::pipeline::{evaluate, link_video, stream_video, EvalConfig, PipelineConfig};
use moc::synthgen::{generate_annotation, render_perfect_maps, MotionModel, NoiseLevels, SceneSpec, SizeFill};
use moc::{GridSpec, VideoAnnotation};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Files = BTreeMap<PathBuf, Vec<u8>>;
type Criterion = (&'static str, Option<Duration>, fn() -> Outcome);

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn moving_scene(seed: u64, instances: usize, frames: usize, size: usize) -> VideoAnnotation {
    generate_annotation(
        &SceneSpec {
            seed,
            num_instances: instances,
            motion: MotionModel::RandomLinear { max_speed: 3.0 },
            box_size: [16, 48],
            classes: 4,
            num_frames: frames,
            width: size,
            height: size,
            min_separation: 56.0,
            duration: Some([7, frames]),
        },
        format!("scene_{seed:03}"),
    )
    .expect("scene")
}

fn eval_cfg(classes: usize) -> EvalConfig {
    EvalConfig { classes, frame_iou: 0.5, video_thresholds: vec![0.5], errors: None }
}

fn gradients() -> Outcome {
    let report = run_suite(&GradCheckConfig::default(), 4, &LossParams::default()).map_err(|e| e.to_string())?;
    check(
        report.max_rel_error() < 1e-4 && report.min_checked() >= 100,
        format!(
            "max rel error {:.2e}, min cells checked {} (center {}, movement {}, box {})",
            report.max_rel_error(),
            report.min_checked(),
            report.center.checked,
            report.movement.checked,
            report.boxes.checked
        ),
    )
}

fn loss_at_truth() -> Outcome {
    let spec = GridSpec::new(7, 192, 192, 4, 4).unwrap();
    let (mut worst_center, mut worst_l1) = (0.0f64, 0.0f64);
    for seed in 0..20 {
        let ann = moving_scene(seed, 3, 7, 192);
        let pred = render_perfect_maps(&ann.instances, 0, &spec, SizeFill::Sparse).map_err(|e| e.to_string())?;
        let targets = encode_clip(&ann.instances, 0, &spec).map_err(|e| e.to_string())?;
        let r = clip_loss(&pred, &targets, &LossParams::default()).map_err(|e| e.to_string())?.report;
        worst_center = worst_center.max(r.l_center);
        worst_l1 = worst_l1.max(r.l_movement).max(r.l_box);
    }
    check(
        worst_l1 == 0.0 && worst_center < 1e-3,
        format!("worst l_movement/l_box {worst_l1:e}, worst l_center {worst_center:.4e} (limit 1e-3)"),
    )
}

fn brute_peaks(map: &DenseMap) -> Vec<Peak> {
    let (h, w, classes) = map.dims();
    let mut out = Vec::new();
    for c in 0..classes {
        for y in 0..h {
            for x in 0..w {
                let v = map.get(x, y, c);
                let mut is_peak = true;
                for dy in -1isize..=1 {
                    for dx in -1isize..=1 {
                        let (nx, ny) = (x as isize + dx, y as isize + dy);
                        if (dx, dy) == (0, 0) || nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                            continue;
                        }
                        if map.get(nx as usize, ny as usize, c) > v {
                            is_peak = false;
                        }
                    }
                }
                if is_peak {
                    out.push(Peak { x, y, class_id: c, score: v });
                }
            }
        }
    }
    out.sort_by(peak_order);
    out
}

fn decoder_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for case in 0..1000 {
        // coarse levels force plenty of ties and plateaus
        let levels = [4u32, 16, 256][case % 3];
        let data: Vec<f32> = (0..72 * 72 * 24).map(|_| rng.random_range(0..levels) as f32 / levels as f32).collect();
        let map = DenseMap::from_vec(72, 72, 24, data).unwrap();
        let want = brute_peaks(&map);
        let all = extract_peaks(&map, usize::MAX);
        if all != want {
            return Err(format!("case {case}: {} peaks vs {} from the scan", all.len(), want.len()));
        }
        let top = extract_peaks(&map, 100);
        if top[..] != want[..100.min(want.len())] {
            return Err(format!("case {case}: top-100 differs"));
        }
    }
    Ok("1000 heatmaps, full and top-100 peak lists identical".into())
}

fn closed_loop() -> Outcome {
    let spec = GridSpec::new(7, 192, 192, 4, 4).unwrap();
    let r = spec.ratio() as f64;
    let mut worst = 0.0f64;
    let mut windows = 0;
    let (mut videos, mut tubes) = (Vec::new(), Vec::new());
    for seed in 0..50u64 {
        let ann = moving_scene(seed, 1 + seed as usize % 3, 24, 192);
        for start in 0..=ann.num_frames - 7 {
            let maps = render_perfect_maps(&ann.instances, start, &spec, SizeFill::Sparse).map_err(|e| e.to_string())?;
            let tubelets = decode_tubelets(&maps, &spec, 100, MovementMode::FullMovement, start).map_err(|e| e.to_string())?;
            for inst in ann.instances.iter().filter(|i| i.covers(start, 7)) {
                let key = key_center(inst, start, &spec).map_err(|e| e.to_string())?;
                let t = tubelets
                    .iter()
                    .find(|t| t.anchor == Some(key) && t.class_id == inst.class_id)
                    .ok_or(format!("seed {seed} window {start}: instance not decoded"))?;
                for (j, b) in t.boxes.iter().enumerate() {
                    let g = inst.box_at(start + j).unwrap();
                    for d in [b.x1 - g.x1, b.y1 - g.y1, b.x2 - g.x2, b.y2 - g.y2] {
                        worst = worst.max(d.abs());
                    }
                }
            }
            windows += 1;
        }
        tubes.push(link_video(&ann, &PipelineConfig::new(spec)).map_err(|e| e.to_string())?);
        videos.push(ann);
    }
    let map = evaluate(&videos, &tubes, &eval_cfg(4)).video_map.map_at(0.5).unwrap_or(0.0);
    check(
        worst <= r && map == 1.0,
        format!("{windows} windows, worst coordinate error {worst:.3} px (R = {r}), video-mAP@0.5 {map}"),
    )
}

fn online_offline() -> Outcome {
    let mut compared = 0;
    for seed in 0..40u64 {
        for k in [1, 3, 6, 7] {
            let ann = moving_scene(seed, 3, 30, 192);
            let mut cfg = PipelineConfig::new(GridSpec::new(k, 192, 192, 4, 4).unwrap());
            if seed % 2 == 1 {
                cfg.noise = NoiseLevels { heatmap: 0.1, movement: 0.3, size: 0.3 };
                cfg.noise_seed = seed;
            }
            let offline = serde_json::to_vec(&link_video(&ann, &cfg).map_err(|e| e.to_string())?).unwrap();
            let (online, _) = stream_video(&ann, &cfg).map_err(|e| e.to_string())?;
            if offline != serde_json::to_vec(&online).unwrap() {
                return Err(format!("seed {seed} K={k}: tube lists differ"));
            }
            compared += 1;
        }
    }
    Ok(format!("{compared} scene/K combinations byte-identical"))
}

/// Stable sort, greedy claim, then each true positive adds the best
/// precision at its rank or later divided by the GT count.
fn brute_ap(scores: &[f64], sims: &[Vec<f64>], num_gt: usize, thr: f64) -> f64 {
    let mut order: Vec<usize> = (0..scores.len()).collect();
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
            if !used[g] && sims[d][g] > thr && best.is_none_or(|b| sims[d][g] > sims[d][b]) {
                best = Some(g);
            }
        }
        if let Some(g) = best {
            used[g] = true;
        }
        hits.push(best.is_some());
    }
    let precision = |k: usize| hits[..=k].iter().filter(|&&h| h).count() as f64 / (k + 1) as f64;
    (0..hits.len())
        .filter(|&k| hits[k])
        .map(|k| (k..hits.len()).map(precision).fold(0.0, f64::max) / num_gt as f64)
        .sum()
}

fn evaluator_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let score_pool = [0.1, 0.3, 0.5, 0.7, 0.9, 1.0];
    let sim_pool = [0.0, 0.2, 0.45, 0.5, 0.55, 0.8, 1.0];
    let mut worst = 0.0f64;
    for _ in 0..500 {
        let (d, g) = (rng.random_range(0..=20usize), rng.random_range(1..=10usize));
        let scores: Vec<f64> = (0..d).map(|_| score_pool[rng.random_range(0..score_pool.len())]).collect();
        let sims: Vec<Vec<f64>> =
            (0..d).map(|_| (0..g).map(|_| sim_pool[rng.random_range(0..sim_pool.len())]).collect()).collect();
        let got = average_precision(&scores, g, |i| sims[i].iter().copied().enumerate().collect(), 0.5).unwrap();
        worst = worst.max((got - brute_ap(&scores, &sims, g, 0.5)).abs());
    }
    let example = average_precision(&[0.9, 0.8, 0.7], 2, |d| if d == 1 { vec![] } else { vec![(d / 2, 1.0)] }, 0.5).unwrap();
    check(
        worst <= 1e-12 && (example - 5.0 / 6.0).abs() < 1e-12,
        format!("500 cases, worst |diff| {worst:e}; TP,FP,TP over 2 GTs = {example:.4}"),
    )
}

fn ablations() -> Outcome {
    let run = |k: usize, mode: MovementMode| -> Result<f64, String> {
        let mut total = 0.0;
        for seed in 0..20u64 {
            let ann = generate_annotation(
                &SceneSpec {
                    seed,
                    num_instances: 3,
                    motion: MotionModel::RandomLinear { max_speed: 3.0 },
                    box_size: [16, 40],
                    classes: 3,
                    num_frames: 40,
                    width: 160,
                    height: 160,
                    min_separation: 48.0,
                    duration: None,
                },
                format!("abl_{seed:03}"),
            )
            .map_err(|e| e.to_string())?;
            let mut cfg = PipelineConfig::new(GridSpec::new(k, 160, 160, 4, 3).unwrap());
            cfg.decode.mode = mode;
            cfg.fill = SizeFill::Footprint;
            cfg.noise = NoiseLevels { heatmap: 0.1, movement: 0.3, size: 0.3 };
            cfg.noise_seed = seed;
            let tubes = link_video(&ann, &cfg).map_err(|e| e.to_string())?;
            total += evaluate(&[ann], &[tubes], &eval_cfg(3)).video_map.map_at(0.5).unwrap_or(0.0);
        }
        Ok(total / 20.0)
    };
    let none = run(7, MovementMode::NoMovement)?;
    let semi = run(7, MovementMode::SemiMovement)?;
    let full = run(7, MovementMode::FullMovement)?;
    let k1 = run(1, MovementMode::FullMovement)?;
    check(
        none <= semi && semi <= full && k1 < full,
        format!("20 seeds: no {none:.3} <= semi {semi:.3} <= full {full:.3}; K=1 {k1:.3} < K=7 {full:.3}"),
    )
}

fn fault_video(seed: u64) -> VideoAnnotation {
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
        format!("fault_{seed:03}"),
    )
    .expect("scene")
}

fn error_faults() -> Outcome {
    let levels = [0.1, 0.3, 0.6];
    let analyse = |d: &[FrameDetection], v: &VideoAnnotation| -> ErrorBreakdown {
        error_analysis(d, std::slice::from_ref(v), &ErrorConfig::default())
    };
    let rising = |xs: &[f64]| xs.windows(2).all(|w| w[1] > w[0]);
    let mut summary: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for seed in 0..10 {
        let v = fault_video(seed);
        let base: Vec<FrameDetection> = frame_gts(std::slice::from_ref(&v))
            .into_iter()
            .map(|g| FrameDetection { video_id: g.video_id, frame: g.frame, class_id: g.class_id, score: 0.9, bbox: g.bbox })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let picks: Vec<f64> = base.iter().map(|_| rng.random()).collect();
        let faulted = |p: f64, f: &dyn Fn(&FrameDetection) -> Option<FrameDetection>| -> Vec<FrameDetection> {
            base.iter().zip(&picks).filter_map(|(d, &u)| if u < p { f(d) } else { Some(d.clone()) }).collect()
        };
        let inst = v.instances.iter().find(|i| i.start_frame > 0 || i.end_frame() + 1 < v.num_frames).unwrap();
        let outside: Vec<usize> = (0..v.num_frames)
            .filter(|&f| !v.instances.iter().any(|i| i.class_id == inst.class_id && i.contains_frame(f)))
            .collect();
        let mut series: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
        for &p in &levels {
            let flip = faulted(p, &|d| Some(FrameDetection { class_id: (d.class_id + 1) % 3, ..d.clone() }));
            series.entry("E_C").or_default().push(analyse(&flip, &v).e_c);
            let jitter = faulted(p, &|d| Some(FrameDetection { bbox: d.bbox.translate(d.bbox.width() * 0.7, 0.0), ..d.clone() }));
            series.entry("E_L").or_default().push(analyse(&jitter, &v).e_l);
            let dropped = faulted(p, &|_| None);
            series.entry("E_M").or_default().push(analyse(&dropped, &v).e_m);
            let mut late = base.clone();
            let extra = ((outside.len() as f64) * p).ceil() as usize;
            for &f in outside.iter().take(extra) {
                late.push(FrameDetection { video_id: v.video_id.clone(), frame: f, class_id: inst.class_id, score: 0.5, bbox: inst.boxes[0] });
            }
            series.entry("E_T").or_default().push(analyse(&late, &v).e_t);
        }
        for (name, xs) in &series {
            if !rising(xs) {
                return Err(format!("seed {seed}: {name} not rising: {xs:?}"));
            }
            let acc = summary.entry(name).or_insert_with(|| vec![0.0; levels.len()]);
            acc.iter_mut().zip(xs).for_each(|(a, x)| *a += x / 10.0);
        }
    }
    let text: Vec<String> = summary
        .iter()
        .map(|(n, xs)| format!("{n} {}", xs.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join("<")))
        .collect();
    Ok(format!("10 scenes, mean {}", text.join(", ")))
}

fn files_under(root: &Path) -> Files {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

/// Runs every subcommand under `root` and returns (stdout per step, files).
fn cli_round(root: &Path, workers: &str, env_config: Option<&Path>) -> Result<(Vec<Vec<u8>>, Files), String> {
    std::fs::create_dir_all(root).unwrap();
    let steps: Vec<Vec<&str>> = vec![
        vec!["synth", "--out", "synth", "--videos", "3"],
        vec!["encode", "--annotation", "synth/video_000.json", "--out", "enc"],
        vec!["gradcheck", "--trials", "1", "--out", "grad.json"],
        vec!["decode", "--maps", "synth/video_000", "--out", "tubelets.jsonl"],
        vec!["link", "--tubelets", "tubelets.jsonl", "--out", "linked.json", "--video-id", "video_000"],
        vec!["stream", "--annotation", "synth/video_000.json", "--out", "streamed.json"],
        vec!["eval", "--annotations", "synth/video_000.json", "--tubes", "linked.json", "--errors", "--out", "metrics.json"],
        vec!["pipeline", "--out", "pipe", "--errors", "--footprint"],
        vec!["overlay", "--annotation", "synth/video_000.json", "--tubes", "linked.json", "--out", "overlay"],
    ];
    let mut stdouts = Vec::new();
    for step in steps {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_moc"));
        cmd.current_dir(root).args(["--workers", workers, "--seed", "11"]);
        match env_config {
            Some(c) => cmd.env("MOC_CONFIG", c),
            None => cmd.env_remove("MOC_CONFIG").args(["--noise", "0.1"]),
        };
        let out = cmd.args(&step).output().map_err(|e| e.to_string())?;
        if !out.status.success() {
            return Err(format!("`moc {}` exited with {:?}", step.join(" "), out.status.code()));
        }
        stdouts.push(out.stdout);
    }
    Ok((stdouts, files_under(root)))
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let base = cli_round(&tmp.path().join("a"), "1", None)?;
    // same settings as the `--noise 0.1` flag, supplied through the environment
    let config = tmp.path().join("noise.json");
    std::fs::write(&config, r#"{"noise": {"heatmap": 0.1, "movement": 0.1, "size": 0.1}}"#).unwrap();
    let variants = [
        ("rerun", cli_round(&tmp.path().join("b"), "1", None)?),
        ("--workers 4", cli_round(&tmp.path().join("c"), "4", None)?),
        ("MOC_CONFIG", cli_round(&tmp.path().join("d"), "4", Some(&config))?),
    ];
    for (name, (stdout, files)) in &variants {
        if *stdout != base.0 {
            return Err(format!("{name}: stdout differs"));
        }
        if files.keys().ne(base.1.keys()) {
            return Err(format!("{name}: different set of output files"));
        }
        if let Some((path, _)) = files.iter().find(|(p, bytes)| base.1[*p] != **bytes) {
            return Err(format!("{name}: {} differs", path.display()));
        }
    }
    Ok(format!("9 subcommands, {} output files identical across rerun, --workers 4 and MOC_CONFIG", base.1.len()))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("gradient correctness", Some(Duration::from_secs(30)), gradients),
        ("loss at truth", Some(Duration::from_secs(5)), loss_at_truth),
        ("decoder oracle", Some(Duration::from_secs(60)), decoder_oracle),
        ("closed-loop recovery", Some(Duration::from_secs(120)), closed_loop),
        ("online/offline equivalence", Some(Duration::from_secs(60)), online_offline),
        ("evaluator oracle", Some(Duration::from_secs(30)), evaluator_oracle),
        ("ablation directions", Some(Duration::from_secs(300)), ablations),
        ("error-analysis faults", Some(Duration::from_secs(120)), error_faults),
        ("determinism", None, determinism),
    ];
    let mut failed = 0;
    for (i, (name, limit, f)) in criteria.iter().enumerate() {
        let t0 = Instant::now();
        let outcome = f();
        let took = t0.elapsed();
        let slow = limit.is_some_and(|l| took > l);
        let limit_text = limit.map_or(String::new(), |l| format!(" / {}s", l.as_secs()));
        let (verdict, detail) = match (&outcome, slow) {
            (Ok(d), false) => ("PASS", d.clone()),
            (Ok(d), true) => ("FAIL", format!("{d}; over time limit")),
            (Err(d), _) => ("FAIL", d.clone()),
        };
        if verdict == "FAIL" {
            failed += 1;
        }
        println!("criterion {}: {verdict} {name} [{:.2}s{limit_text}] {detail}", i + 1, took.as_secs_f64());
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
