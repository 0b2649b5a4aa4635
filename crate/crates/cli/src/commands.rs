use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use clap::Args;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use moc::decoder::decode_tubelets;
use moc::encoder::{encode_clip, MovementTarget, SizeTarget};
use moc::gradcheck::{run_suite, GradCheckConfig, GradCheckReport};
use moc::io::{read_annotation, read_frames, read_map, write_annotation, write_atomic, write_frames, write_map};
use moc::linker::{LinkState, StreamSession};
use moc::pipeline::{evaluate, link_video, synthetic_window, Metrics, METRICS_SCHEMA_VERSION};
use moc::synthgen::{generate_annotation, observations, window_instances, FrameObservation};
use moc::{Error, Tube, Tubelet, VideoAnnotation, WindowMaps};

use crate::config::RunConfig;

/// Largest tolerated relative gradient error.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

/// A numerical check ran to completion but did not pass.
#[derive(Debug)]
pub struct CheckFailed(pub String);

impl std::fmt::Display for CheckFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for CheckFailed {}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
    serde_json::from_str(&text).map_err(Error::from).with_context(|| format!("parsing {}", path.display()))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
    Ok(())
}

/// Reads an annotation and checks it against the configured geometry.
pub fn load_annotation(cfg: &RunConfig, path: &Path) -> Result<VideoAnnotation> {
    let ann = read_annotation(path).with_context(|| format!("reading {}", path.display()))?;
    if (ann.width, ann.height) != (cfg.width, cfg.height) {
        return Err(Error::DimMismatch(format!(
            "{} is {}x{} but the config expects {}x{}",
            path.display(),
            ann.width,
            ann.height,
            cfg.width,
            cfg.height
        ))
        .into());
    }
    ann.validate(cfg.classes)
        .with_context(|| format!("validating {}", path.display()))?;
    Ok(ann)
}

fn video_name(index: usize) -> String {
    format!("video_{index:03}")
}

fn window_prefix(start: usize) -> String {
    format!("w{start:05}")
}

fn window_starts(num_frames: usize, k: usize) -> std::ops::Range<usize> {
    0..(num_frames + 1).saturating_sub(k)
}

#[derive(Args)]
pub struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Write only the annotations.
    #[arg(long)]
    pub no_maps: bool,
}

pub fn synth(cfg: &RunConfig, args: &SynthArgs) -> Result<()> {
    let pcfg = cfg.pipeline()?;
    create_dir(&args.out)?;
    let summaries = (0..cfg.scene.videos)
        .into_par_iter()
        .map(|i| -> Result<String> {
            let id = video_name(i);
            let ann = generate_annotation(&cfg.scene(i), &id)?;
            write_annotation(args.out.join(format!("{id}.json")), &ann)?;
            let starts = window_starts(ann.num_frames, cfg.k);
            if !args.no_maps {
                let dir = args.out.join(&id);
                create_dir(&dir)?;
                for start in starts.clone() {
                    let maps = synthetic_window(&ann.instances, start, &id, &pcfg)?;
                    let p = window_prefix(start);
                    write_map(dir.join(format!("{p}_heatmap.moct")), &maps.heatmap)?;
                    write_map(dir.join(format!("{p}_movement.moct")), &maps.movement)?;
                    write_frames(dir.join(format!("{p}_sizes.moct")), &maps.sizes)?;
                }
            }
            Ok(format!("{id}: {} instances, {} frames, {} windows", ann.instances.len(), ann.num_frames, starts.len()))
        })
        .collect::<Result<Vec<_>>>()?;
    for s in summaries {
        println!("{s}");
    }
    Ok(())
}

#[derive(Args)]
pub struct EncodeArgs {
    #[arg(long)]
    pub annotation: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Serialize)]
struct TargetSidecar<'a> {
    schema_version: u32,
    window_start: usize,
    n: usize,
    instance_ids: &'a [usize],
    movement_targets: &'a [MovementTarget],
    size_targets: &'a [SizeTarget],
}

pub fn encode(cfg: &RunConfig, args: &EncodeArgs) -> Result<()> {
    let spec = cfg.grid()?;
    let ann = load_annotation(cfg, &args.annotation)?;
    create_dir(&args.out)?;
    let counts = window_starts(ann.num_frames, cfg.k)
        .into_par_iter()
        .map(|start| -> Result<usize> {
            let t = encode_clip(&ann.instances, start, &spec)?;
            let p = window_prefix(start);
            write_map(args.out.join(format!("{p}_center.moct")), &t.center_heatmap)?;
            write_json(
                &args.out.join(format!("{p}_targets.json")),
                &TargetSidecar {
                    schema_version: METRICS_SCHEMA_VERSION,
                    window_start: start,
                    n: t.n(),
                    instance_ids: &t.instance_ids,
                    movement_targets: &t.movement_targets,
                    size_targets: &t.size_targets,
                },
            )?;
            Ok(t.n())
        })
        .collect::<Result<Vec<_>>>()?;
    println!(
        "{}: {} windows, {} instance-windows encoded",
        ann.video_id,
        counts.len(),
        counts.iter().sum::<usize>()
    );
    Ok(())
}

#[derive(Args)]
pub struct GradcheckArgs {
    /// Random problems to check.
    #[arg(long, default_value_t = 4)]
    pub trials: usize,
    /// Entries probed per map and trial.
    #[arg(long, default_value_t = 128)]
    pub samples: usize,
    /// Central-difference half step.
    #[arg(long, default_value_t = 1e-4)]
    pub step: f64,
    /// Also write the report as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct GradcheckFile<'a> {
    schema_version: u32,
    tolerance: f64,
    report: &'a GradCheckReport,
}

pub fn gradcheck(cfg: &RunConfig, args: &GradcheckArgs) -> Result<()> {
    let gc = GradCheckConfig {
        seed: cfg.seed,
        samples: args.samples,
        step: args.step,
        ..GradCheckConfig::default()
    };
    let report = run_suite(&gc, args.trials, &cfg.loss())?;
    println!("{:<10} {:>8} {:>8} {:>14}", "loss", "checked", "kinks", "max_rel_error");
    for (name, r) in [("center", &report.center), ("movement", &report.movement), ("box", &report.boxes)] {
        println!("{name:<10} {:>8} {:>8} {:>14.3e}", r.checked, r.skipped_kinks, r.max_rel_error);
    }
    if let Some(out) = &args.out {
        write_json(out, &GradcheckFile { schema_version: METRICS_SCHEMA_VERSION, tolerance: GRADCHECK_TOLERANCE, report: &report })?;
    }
    if report.max_rel_error() >= GRADCHECK_TOLERANCE {
        return Err(CheckFailed(format!(
            "max relative gradient error {:.3e} exceeds {GRADCHECK_TOLERANCE:e}",
            report.max_rel_error()
        ))
        .into());
    }
    Ok(())
}

#[derive(Args)]
pub struct DecodeArgs {
    /// Directory of `wNNNNN_{heatmap,movement,sizes}.moct` window tensors.
    #[arg(long)]
    pub maps: PathBuf,
    /// Tubelets as JSON lines.
    #[arg(long)]
    pub out: PathBuf,
}

fn window_files(dir: &Path) -> Result<Vec<usize>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::Io { path: dir.to_path_buf(), source: e })?;
    let mut starts = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::Io { path: dir.to_path_buf(), source: e })?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(num) = name.strip_prefix('w').and_then(|n| n.strip_suffix("_heatmap.moct")) {
            let start = num
                .parse()
                .map_err(|_| Error::Format(format!("unexpected window file name {name}")))?;
            starts.push(start);
        }
    }
    starts.sort_unstable();
    Ok(starts)
}

pub fn decode(cfg: &RunConfig, args: &DecodeArgs) -> Result<()> {
    let spec = cfg.grid()?;
    let decode = cfg.decode();
    let starts = window_files(&args.maps)?;
    let lines = starts
        .par_iter()
        .map(|&start| -> Result<String> {
            let p = args.maps.join(window_prefix(start));
            let with = |suffix: &str| PathBuf::from(format!("{}_{suffix}.moct", p.display()));
            let maps = WindowMaps {
                heatmap: read_map(with("heatmap"))?,
                movement: read_map(with("movement"))?,
                sizes: read_frames(with("sizes"))?,
            };
            let tubelets = decode_tubelets(&maps, &spec, decode.top_n, decode.mode, start)
                .with_context(|| format!("decoding window {start}"))?;
            let mut out = String::new();
            for t in &tubelets {
                out.push_str(&serde_json::to_string(t)?);
                out.push('\n');
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    write_atomic(&args.out, lines.concat().as_bytes())?;
    println!("{} windows decoded", starts.len());
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TubeFile {
    pub schema_version: u32,
    pub video_id: String,
    pub tubes: Vec<Tube>,
}

#[derive(Args)]
pub struct LinkArgs {
    /// Tubelets as JSON lines.
    #[arg(long)]
    pub tubelets: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Defaults to the tubelet file's stem.
    #[arg(long)]
    pub video_id: Option<String>,
}

fn read_tubelets(path: &Path, k: usize) -> Result<Vec<Tubelet>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let t: Tubelet = serde_json::from_str(line)
                .map_err(Error::from)
                .with_context(|| format!("{}:{}", path.display(), i + 1))?;
            if t.boxes.len() != k || !t.score.is_finite() {
                return Err(Error::InvalidTubelet(format!(
                    "{}:{} has {} boxes (K = {k}) and score {}",
                    path.display(),
                    i + 1,
                    t.boxes.len(),
                    t.score
                ))
                .into());
            }
            Ok(t)
        })
        .collect()
}

pub fn link(cfg: &RunConfig, args: &LinkArgs) -> Result<()> {
    let tubelets = read_tubelets(&args.tubelets, cfg.k)?;
    let mut by_frame: BTreeMap<usize, Vec<Tubelet>> = BTreeMap::new();
    for t in tubelets {
        by_frame.entry(t.start_frame).or_default().push(t);
    }
    let mut state = LinkState::new(cfg.link())?;
    let last = by_frame.keys().next_back().copied();
    if let Some(last) = last {
        for f in 0..=last {
            state.step(f, by_frame.remove(&f).unwrap_or_default())?;
        }
    }
    let tubes = state.finalize();
    let video_id = args.video_id.clone().unwrap_or_else(|| {
        args.tubelets
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    });
    println!("{video_id}: {} tubes", tubes.len());
    write_json(&args.out, &TubeFile { schema_version: METRICS_SCHEMA_VERSION, video_id, tubes })
}

#[derive(Args)]
pub struct StreamArgs {
    #[arg(long)]
    pub annotation: PathBuf,
    /// Final tubes.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn stream(cfg: &RunConfig, args: &StreamArgs) -> Result<()> {
    let ann = load_annotation(cfg, &args.annotation)?;
    let pcfg = cfg.pipeline()?;
    let head = |frames: &[FrameObservation], start: usize| {
        synthetic_window(&window_instances(frames), start, &ann.video_id, &pcfg)
    };
    let mut session = StreamSession::new(pcfg.spec, pcfg.decode, pcfg.link.clone(), head)?;
    let mut latencies = Vec::with_capacity(ann.num_frames);
    let mut windows = 0usize;
    for obs in observations(&ann.instances, ann.num_frames) {
        let frame = obs.frame;
        let t0 = Instant::now();
        let step = session.push(obs)?;
        let ms = t0.elapsed().as_secs_f64() * 1e3;
        latencies.push(ms);
        match step {
            Some(s) => {
                windows += 1;
                eprintln!(
                    "frame {frame:>5}  window {:>5}  tubelets {:>4}  active links {:>3}  {ms:.3} ms",
                    s.window_start, s.tubelets, s.active_links
                );
            }
            None => eprintln!("frame {frame:>5}  buffering ({} of {})", session.buffered(), cfg.k - 1),
        }
    }
    if !latencies.is_empty() {
        let mean = latencies.iter().sum::<f64>() / latencies.len() as f64;
        let max = latencies.iter().copied().fold(0.0, f64::max);
        eprintln!("latency mean {mean:.3} ms, max {max:.3} ms");
    }
    let peak = session.peak_occupancy();
    let tubes = session.finish();
    println!(
        "{}: {} frames, {} windows, {} tubes, peak buffer {peak}",
        ann.video_id,
        ann.num_frames,
        windows,
        tubes.len()
    );
    write_json(&args.out, &TubeFile { schema_version: METRICS_SCHEMA_VERSION, video_id: ann.video_id.clone(), tubes })
}

#[derive(Args)]
pub struct EvalArgs {
    /// Annotation JSON files.
    #[arg(long, num_args = 1.., required = true)]
    pub annotations: Vec<PathBuf>,
    /// Tube files as written by `link`, `stream` or `pipeline`.
    #[arg(long, num_args = 1.., required = true)]
    pub tubes: Vec<PathBuf>,
    /// Add the error breakdown.
    #[arg(long)]
    pub errors: bool,
    /// Write metrics JSON here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Print metrics JSON instead of the table.
    #[arg(long)]
    pub json: bool,
}

pub fn metric_table(m: &Metrics) -> String {
    let mut s = String::new();
    let pct = |v: f64| format!("{:>7.2}", 100.0 * v);
    let _ = writeln!(s, "{:<22}{}", format!("frame-mAP@{}", m.frame_map.threshold), pct(m.frame_map.map));
    for row in &m.video_map.rows {
        let _ = writeln!(s, "{:<22}{}", format!("video-mAP@{}", row.threshold), pct(row.map));
    }
    let _ = writeln!(s, "{:<22}{}", "video-mAP@0.5:0.95", pct(m.video_map.map_50_95));
    if let Some(e) = &m.errors {
        let _ = writeln!(
            s,
            "errors  correct {}  E_C {}  E_L {}  E_T {}  E_M {}  E_O {}  ({} detections, {} gt boxes)",
            pct(e.correct),
            pct(e.e_c),
            pct(e.e_l),
            pct(e.e_t),
            pct(e.e_m),
            pct(e.e_o),
            e.num_detections,
            e.num_gt
        );
    }
    s
}

fn report(m: &Metrics, json: bool, out: Option<&Path>) -> Result<()> {
    if json {
        println!("{}", serde_json::to_string_pretty(m)?);
    } else {
        print!("{}", metric_table(m));
    }
    if let Some(out) = out {
        write_json(out, m)?;
    }
    Ok(())
}

pub fn eval(cfg: &RunConfig, args: &EvalArgs) -> Result<()> {
    let videos = args
        .annotations
        .iter()
        .map(|p| load_annotation(cfg, p))
        .collect::<Result<Vec<_>>>()?;
    let mut tubes: Vec<Vec<Tube>> = vec![Vec::new(); videos.len()];
    for path in &args.tubes {
        let file: TubeFile = read_json(path)?;
        let slot = videos
            .iter()
            .position(|v| v.video_id == file.video_id)
            .ok_or_else(|| Error::Config(format!("{}: no annotation for video {}", path.display(), file.video_id)))?;
        tubes[slot].extend(file.tubes);
    }
    let m = evaluate(&videos, &tubes, &cfg.eval(args.errors));
    report(&m, args.json, args.out.as_deref())
}

#[derive(Args)]
pub struct PipelineArgs {
    /// Keep annotations, tubes, metrics and the resolved config here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub errors: bool,
    /// Print metrics JSON instead of the table.
    #[arg(long)]
    pub json: bool,
}

pub fn pipeline(cfg: &RunConfig, args: &PipelineArgs) -> Result<()> {
    let pcfg = cfg.pipeline()?;
    let runs = (0..cfg.scene.videos)
        .into_par_iter()
        .map(|i| -> Result<(VideoAnnotation, Vec<Tube>)> {
            let ann = generate_annotation(&cfg.scene(i), video_name(i))?;
            let tubes = link_video(&ann, &pcfg)?;
            Ok((ann, tubes))
        })
        .collect::<Result<Vec<_>>>()?;
    let (videos, tubes): (Vec<_>, Vec<_>) = runs.into_iter().unzip();
    let m = evaluate(&videos, &tubes, &cfg.eval(args.errors));
    if let Some(out) = &args.out {
        create_dir(&out.join("annotations"))?;
        create_dir(&out.join("tubes"))?;
        for (v, t) in videos.iter().zip(&tubes) {
            write_annotation(out.join("annotations").join(format!("{}.json", v.video_id)), v)?;
            write_json(
                &out.join("tubes").join(format!("{}.json", v.video_id)),
                &TubeFile { schema_version: METRICS_SCHEMA_VERSION, video_id: v.video_id.clone(), tubes: t.clone() },
            )?;
        }
        write_json(&out.join("config.json"), cfg)?;
    }
    report(&m, args.json, args.out.as_ref().map(|o| o.join("metrics.json")).as_deref())
}
