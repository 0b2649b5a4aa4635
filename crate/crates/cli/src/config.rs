//! Run configuration: built-in defaults, then an optional JSON file, then flags.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

use moc::decoder::{DecodeConfig, MovementMode};
use moc::evaluator::{ErrorConfig, DEFAULT_VIDEO_THRESHOLDS};
use moc::linker::{CandidateRule, LinkConfig, OverlapReference, DEFAULT_MIN_SCORE, DEFAULT_TAU, DEFAULT_TOP_CANDIDATES};
use moc::losses::{BoxNormalization, LossParams, LossWeights, DEFAULT_ALPHA, DEFAULT_BETA, DEFAULT_BOX_WEIGHT, DEFAULT_MOVEMENT_WEIGHT};
use moc::pipeline::{EvalConfig, PipelineConfig};
use moc::synthgen::{MotionModel, NoiseLevels, SceneSpec, SizeFill};
use moc::GridSpec;

pub const CONFIG_ENV: &str = "MOC_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub videos: usize,
    pub instances: usize,
    pub frames: usize,
    pub motion: MotionModel,
    pub box_size: [usize; 2],
    pub min_separation: f64,
    pub duration: Option<[usize; 2]>,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            videos: 4,
            instances: 3,
            frames: 40,
            motion: MotionModel::RandomLinear { max_speed: 3.0 },
            box_size: [24, 64],
            min_separation: 72.0,
            duration: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub k: usize,
    pub width: usize,
    pub height: usize,
    pub ratio: usize,
    pub classes: usize,
    /// Defaults to `floor(k / 2)`.
    pub key_index: Option<usize>,
    pub top_n: usize,
    pub mode: MovementMode,
    pub a: f64,
    pub b: f64,
    pub alpha: f64,
    pub beta: f64,
    pub box_norm: BoxNormalization,
    pub tau: f64,
    pub top_candidates: usize,
    pub min_score: f64,
    /// Defaults to `k`.
    pub min_length: Option<usize>,
    pub overlap: OverlapReference,
    pub rule: CandidateRule,
    pub frame_iou: f64,
    pub thresholds: Vec<f64>,
    pub seed: u64,
    pub scene: SceneConfig,
    pub noise: NoiseLevels,
    pub fill: SizeFill,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            k: 7,
            width: 288,
            height: 288,
            ratio: 4,
            classes: 3,
            key_index: None,
            top_n: moc::decoder::DEFAULT_TOP_N,
            mode: MovementMode::FullMovement,
            a: DEFAULT_MOVEMENT_WEIGHT,
            b: DEFAULT_BOX_WEIGHT,
            alpha: DEFAULT_ALPHA,
            beta: DEFAULT_BETA,
            box_norm: BoxNormalization::Instances,
            tau: DEFAULT_TAU,
            top_candidates: DEFAULT_TOP_CANDIDATES,
            min_score: DEFAULT_MIN_SCORE,
            min_length: None,
            overlap: OverlapReference::LastMember,
            rule: CandidateRule::HighestScore,
            frame_iou: 0.5,
            thresholds: DEFAULT_VIDEO_THRESHOLDS.to_vec(),
            seed: 0,
            scene: SceneConfig::default(),
            noise: NoiseLevels::default(),
            fill: SizeFill::Sparse,
        }
    }
}

/// Flags that override the file. Every one is optional.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// JSON run config; flags given on the command line take precedence.
    #[arg(long, global = true, env = CONFIG_ENV)]
    pub config: Option<PathBuf>,
    /// Frames per clip window.
    #[arg(long, global = true)]
    pub k: Option<usize>,
    #[arg(long, global = true)]
    pub width: Option<usize>,
    #[arg(long, global = true)]
    pub height: Option<usize>,
    /// Spatial downsample ratio.
    #[arg(long, global = true)]
    pub ratio: Option<usize>,
    #[arg(long, global = true)]
    pub classes: Option<usize>,
    #[arg(long, global = true)]
    pub key_index: Option<usize>,
    /// Peaks kept per window.
    #[arg(long, global = true)]
    pub top_n: Option<usize>,
    /// no_movement, semi_movement or full_movement.
    #[arg(long, global = true)]
    pub mode: Option<MovementMode>,
    /// Movement loss weight.
    #[arg(long, global = true)]
    pub a: Option<f64>,
    /// Box loss weight.
    #[arg(long, global = true)]
    pub b: Option<f64>,
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    #[arg(long, global = true)]
    pub beta: Option<f64>,
    /// Divide the box loss by n*K instead of n.
    #[arg(long, global = true)]
    pub box_norm_frames: bool,
    /// Link overlap threshold.
    #[arg(long, global = true)]
    pub tau: Option<f64>,
    #[arg(long, global = true)]
    pub min_score: Option<f64>,
    #[arg(long, global = true)]
    pub min_length: Option<usize>,
    /// Video-mAP thresholds, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    pub thresholds: Option<Vec<f64>>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Number of synthetic videos.
    #[arg(long, global = true)]
    pub videos: Option<usize>,
    #[arg(long, global = true)]
    pub instances: Option<usize>,
    #[arg(long, global = true)]
    pub frames: Option<usize>,
    /// Same noise sigma on heatmap, movement and size maps.
    #[arg(long, global = true)]
    pub noise: Option<f64>,
    /// Spread sizes over the whole box footprint instead of single cells.
    #[arg(long, global = true)]
    pub footprint: bool,
}

fn read_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| moc::Error::Io { path: path.to_path_buf(), source: e })?;
    let cfg: RunConfig = serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
    Ok(cfg)
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => read_config(p)?,
            None => RunConfig::default(),
        };
        macro_rules! over {
            ($($flag:ident => $($field:ident).+),* $(,)?) => {
                $(if let Some(v) = self.$flag.clone() { cfg.$($field).+ = v; })*
            };
        }
        over!(
            k => k, width => width, height => height, ratio => ratio, classes => classes,
            top_n => top_n, mode => mode, a => a, b => b, alpha => alpha, beta => beta,
            tau => tau, min_score => min_score, thresholds => thresholds, seed => seed,
            videos => scene.videos, instances => scene.instances, frames => scene.frames,
        );
        if self.key_index.is_some() {
            cfg.key_index = self.key_index;
        }
        if self.min_length.is_some() {
            cfg.min_length = self.min_length;
        }
        if self.box_norm_frames {
            cfg.box_norm = BoxNormalization::InstanceFrames;
        }
        if let Some(s) = self.noise {
            cfg.noise = NoiseLevels::uniform(s);
        }
        if self.footprint {
            cfg.fill = SizeFill::Footprint;
        }
        // K-dependent defaults are pinned so the echoed config is self-contained.
        cfg.key_index.get_or_insert(cfg.k / 2);
        cfg.min_length.get_or_insert(cfg.k);
        cfg.validate()?;
        Ok(cfg)
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.grid()?;
        let bad = |msg: String| Err(moc::Error::Config(msg).into());
        if self.top_n == 0 {
            return bad("top_n must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.tau) || !(0.0..=1.0).contains(&self.frame_iou) {
            return bad("tau and frame_iou must lie in [0, 1]".into());
        }
        if self.thresholds.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return bad(format!("video thresholds {:?} outside [0, 1]", self.thresholds));
        }
        if [self.noise.heatmap, self.noise.movement, self.noise.size].iter().any(|s| *s < 0.0 || !s.is_finite()) {
            return bad("noise sigmas must be finite and non-negative".into());
        }
        if ![self.a, self.b, self.alpha, self.beta, self.min_score].iter().all(|v| v.is_finite()) {
            return bad("loss and link parameters must be finite".into());
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<GridSpec> {
        let spec = GridSpec::new(self.k, self.width, self.height, self.ratio, self.classes)?;
        Ok(match self.key_index {
            Some(key) => spec.with_key_index(key)?,
            None => spec,
        })
    }

    pub fn decode(&self) -> DecodeConfig {
        DecodeConfig {
            top_n: self.top_n,
            mode: self.mode,
        }
    }

    pub fn link(&self) -> LinkConfig {
        LinkConfig {
            k: self.k,
            tau: self.tau,
            top_candidates: self.top_candidates,
            min_score: self.min_score,
            min_length: self.min_length.unwrap_or(self.k),
            overlap: self.overlap,
            rule: self.rule,
        }
    }

    pub fn loss(&self) -> LossParams {
        LossParams {
            alpha: self.alpha,
            beta: self.beta,
            weights: LossWeights {
                movement: self.a,
                boxes: self.b,
            },
            box_norm: self.box_norm,
        }
    }

    pub fn pipeline(&self) -> Result<PipelineConfig> {
        Ok(PipelineConfig {
            spec: self.grid()?,
            decode: self.decode(),
            link: self.link(),
            noise: self.noise,
            noise_seed: self.seed,
            fill: self.fill,
        })
    }

    pub fn eval(&self, errors: bool) -> EvalConfig {
        EvalConfig {
            classes: self.classes,
            frame_iou: self.frame_iou,
            video_thresholds: self.thresholds.clone(),
            errors: errors.then(|| ErrorConfig {
                iou_threshold: self.frame_iou,
                ..ErrorConfig::default()
            }),
        }
    }

    /// Scene of the `index`-th synthetic video.
    pub fn scene(&self, index: usize) -> SceneSpec {
        SceneSpec {
            seed: self.seed.wrapping_add(index as u64),
            num_instances: self.scene.instances,
            motion: self.scene.motion,
            box_size: self.scene.box_size,
            classes: self.classes,
            num_frames: self.scene.frames,
            width: self.width,
            height: self.height,
            min_separation: self.scene.min_separation,
            duration: self.scene.duration,
        }
    }
}

/// The key frame of an even-length window is not its center.
pub fn even_k_warning(cfg: &RunConfig) -> Option<String> {
    cfg.k.is_multiple_of(2).then(|| {
        format!(
            "K = {} is even; the key frame is index {} and the window is not centred on it",
            cfg.k,
            cfg.key_index.unwrap_or(cfg.k / 2)
        )
    })
}
