//! Glue from annotations to tubes and metrics, with maps produced by the
//! synthetic perfect-detector head.

use serde::{Deserialize, Serialize};

use crate::decoder::{DecodeConfig, WindowMaps};
use crate::error::Result;
use crate::evaluator::{
    error_analysis, frame_gts, frame_map, video_gts, video_map, ApSummary, ErrorBreakdown, ErrorConfig,
    FrameDetection, VideoMapTable, VideoTube,
};
use crate::io::VideoAnnotation;
use crate::linker::{link_offline, LinkConfig, StreamSession};
use crate::synthgen::{observations, perturb, render_perfect_maps, window_instances, NoiseLevels, SizeFill};
use crate::types::{GridSpec, Instance, Tube};

pub const METRICS_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub spec: GridSpec,
    pub decode: DecodeConfig,
    pub link: LinkConfig,
    #[serde(default)]
    pub noise: NoiseLevels,
    #[serde(default)]
    pub noise_seed: u64,
    #[serde(default)]
    pub fill: SizeFill,
}

impl PipelineConfig {
    pub fn new(spec: GridSpec) -> Self {
        PipelineConfig {
            spec,
            decode: DecodeConfig::default(),
            link: LinkConfig::new(spec.k()),
            noise: NoiseLevels::default(),
            noise_seed: 0,
            fill: SizeFill::default(),
        }
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(s: &str) -> u64 {
    s.bytes()
        .fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
}

/// Noise seed of one window, independent of how windows are visited.
pub fn window_seed(noise_seed: u64, video_id: &str, window_start: usize) -> u64 {
    splitmix(splitmix(noise_seed ^ fnv1a(video_id)) ^ window_start as u64)
}

/// Perfect maps for a window, perturbed when the config asks for noise.
pub fn synthetic_window(instances: &[Instance], window_start: usize, video_id: &str, cfg: &PipelineConfig) -> Result<WindowMaps> {
    let maps = render_perfect_maps(instances, window_start, &cfg.spec, cfg.fill)?;
    if cfg.noise.is_zero() {
        Ok(maps)
    } else {
        perturb(&maps, cfg.noise, window_seed(cfg.noise_seed, video_id, window_start))
    }
}

/// Links every window of the video in one pass over stored annotations.
pub fn link_video(ann: &VideoAnnotation, cfg: &PipelineConfig) -> Result<Vec<Tube>> {
    link_offline(&cfg.spec, &cfg.decode, cfg.link.clone(), ann.num_frames, |start| {
        synthetic_window(&ann.instances, start, &ann.video_id, cfg)
    })
}

/// Feeds the video frame by frame through a [`StreamSession`]. Returns the
/// tubes and the largest number of frames buffered at once.
pub fn stream_video(ann: &VideoAnnotation, cfg: &PipelineConfig) -> Result<(Vec<Tube>, usize)> {
    let head = |frames: &[crate::synthgen::FrameObservation], start: usize| {
        synthetic_window(&window_instances(frames), start, &ann.video_id, cfg)
    };
    let mut session = StreamSession::new(cfg.spec, cfg.decode, cfg.link.clone(), head)?;
    for obs in observations(&ann.instances, ann.num_frames) {
        session.push(obs)?;
    }
    let peak = session.peak_occupancy();
    Ok((session.finish(), peak))
}

/// One detection per tube frame, scored with the tube score.
pub fn frame_detections(video_id: &str, tubes: &[Tube]) -> Vec<FrameDetection> {
    tubes
        .iter()
        .flat_map(|t| {
            (t.start_frame..=t.end_frame).zip(&t.boxes).map(|(frame, b)| FrameDetection {
                video_id: video_id.to_string(),
                frame,
                class_id: t.class_id,
                score: t.score,
                bbox: *b,
            })
        })
        .collect()
}

pub fn video_detections(video_id: &str, tubes: &[Tube]) -> Vec<VideoTube> {
    tubes
        .iter()
        .map(|t| VideoTube {
            video_id: video_id.to_string(),
            tube: t.clone(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub schema_version: u32,
    pub frame_map: ApSummary,
    pub video_map: VideoMapTable,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub errors: Option<ErrorBreakdown>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub classes: usize,
    pub frame_iou: f64,
    pub video_thresholds: Vec<f64>,
    #[serde(default)]
    pub errors: Option<ErrorConfig>,
}

/// Scores tubes against annotations; `tubes[i]` belongs to `videos[i]`.
pub fn evaluate(videos: &[VideoAnnotation], tubes: &[Vec<Tube>], cfg: &EvalConfig) -> Metrics {
    let frame_dets: Vec<FrameDetection> = videos
        .iter()
        .zip(tubes)
        .flat_map(|(v, t)| frame_detections(&v.video_id, t))
        .collect();
    let video_dets: Vec<VideoTube> = videos
        .iter()
        .zip(tubes)
        .flat_map(|(v, t)| video_detections(&v.video_id, t))
        .collect();
    Metrics {
        schema_version: METRICS_SCHEMA_VERSION,
        frame_map: frame_map(&frame_dets, &frame_gts(videos), cfg.classes, cfg.frame_iou),
        video_map: video_map(&video_dets, &video_gts(videos), cfg.classes, &cfg.video_thresholds),
        errors: cfg.errors.as_ref().map(|e| error_analysis(&frame_dets, videos, e)),
    }
}
