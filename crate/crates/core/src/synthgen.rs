//! Seeded synthetic scenes and the exact maps a perfect detector would emit
//! for them. This closes the encode, decode, link and evaluate loop without
//! any learned model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::decoder::WindowMaps;
use crate::encoder::encode_clip;
use crate::error::{Error, Result};
use crate::io::VideoAnnotation;
use crate::map::DenseMap;
use crate::types::{BBox, GridSpec, Instance};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MotionModel {
    Static,
    /// Every instance moves by `velocity` pixels per frame.
    Linear { velocity: [f64; 2] },
    /// Per-instance velocity with each component drawn from `[-max_speed, max_speed]`.
    RandomLinear { max_speed: f64 },
    /// Oscillation around the start position with a random phase.
    Sinusoidal { amplitude: [f64; 2], period: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    pub num_instances: usize,
    pub motion: MotionModel,
    /// Inclusive `[min, max]` box side in pixels, sampled per axis.
    pub box_size: [usize; 2],
    pub classes: usize,
    pub num_frames: usize,
    pub width: usize,
    pub height: usize,
    /// Minimum center distance (pixels) between temporally overlapping instances.
    #[serde(default)]
    pub min_separation: f64,
    /// Inclusive `[min, max]` instance length; `None` spans the whole video.
    #[serde(default)]
    pub duration: Option<[usize; 2]>,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_frames == 0 || self.classes == 0 {
            return Err(Error::Config("scene needs frames and classes".into()));
        }
        if self.box_size[0] > self.box_size[1] {
            return Err(Error::Config("box size range is inverted".into()));
        }
        if self.box_size[1] > self.width || self.box_size[1] > self.height {
            return Err(Error::Unsatisfiable(format!(
                "boxes up to {} px do not fit a {}x{} frame",
                self.box_size[1], self.width, self.height
            )));
        }
        if let Some([lo, hi]) = self.duration {
            if lo == 0 || lo > hi || hi > self.num_frames {
                return Err(Error::Config(format!(
                    "duration range [{lo}, {hi}] invalid for {} frames",
                    self.num_frames
                )));
            }
        }
        Ok(())
    }
}

const MAX_ATTEMPTS: usize = 500;

/// Offsets of the top-left corner relative to frame 0, per instance frame.
fn offsets(motion: &MotionModel, len: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 2]> {
    match *motion {
        MotionModel::Static => vec![[0.0, 0.0]; len],
        MotionModel::Linear { velocity } => (0..len)
            .map(|t| [velocity[0] * t as f64, velocity[1] * t as f64])
            .collect(),
        MotionModel::RandomLinear { max_speed } => {
            let v = [
                rng.random_range(-max_speed..=max_speed),
                rng.random_range(-max_speed..=max_speed),
            ];
            (0..len).map(|t| [v[0] * t as f64, v[1] * t as f64]).collect()
        }
        MotionModel::Sinusoidal { amplitude, period } => {
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            let w = std::f64::consts::TAU / period;
            (0..len)
                .map(|t| {
                    let s = (w * t as f64 + phase).sin() - phase.sin();
                    [amplitude[0] * s, amplitude[1] * s]
                })
                .collect()
        }
    }
}

fn min_center_distance(a: &Instance, b: &Instance) -> Option<f64> {
    let start = a.start_frame.max(b.start_frame);
    let end = a.end_frame().min(b.end_frame());
    (start..=end)
        .map(|f| {
            let (ax, ay) = a.box_at(f).unwrap().center();
            let (bx, by) = b.box_at(f).unwrap().center();
            ((ax - bx).powi(2) + (ay - by).powi(2)).sqrt()
        })
        .min_by(f64::total_cmp)
}

/// Draws instances with integer-pixel boxes that stay inside the frame.
pub fn generate_scene(spec: &SceneSpec) -> Result<Vec<Instance>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out: Vec<Instance> = Vec::with_capacity(spec.num_instances);
    for i in 0..spec.num_instances {
        let mut placed = None;
        for _ in 0..MAX_ATTEMPTS {
            let class_id = rng.random_range(0..spec.classes);
            let w = rng.random_range(spec.box_size[0]..=spec.box_size[1]) as f64;
            let h = rng.random_range(spec.box_size[0]..=spec.box_size[1]) as f64;
            let len = match spec.duration {
                Some([lo, hi]) => rng.random_range(lo..=hi),
                None => spec.num_frames,
            };
            let start = rng.random_range(0..=spec.num_frames - len);
            let offs: Vec<[f64; 2]> = offsets(&spec.motion, len, &mut rng)
                .into_iter()
                .map(|o| [o[0].round(), o[1].round()])
                .collect();
            let min_x = offs.iter().map(|o| o[0]).fold(f64::INFINITY, f64::min);
            let max_x = offs.iter().map(|o| o[0]).fold(f64::NEG_INFINITY, f64::max);
            let min_y = offs.iter().map(|o| o[1]).fold(f64::INFINITY, f64::min);
            let max_y = offs.iter().map(|o| o[1]).fold(f64::NEG_INFINITY, f64::max);
            let (lo_x, hi_x) = (-min_x, spec.width as f64 - w - max_x);
            let (lo_y, hi_y) = (-min_y, spec.height as f64 - h - max_y);
            if lo_x > hi_x || lo_y > hi_y {
                continue;
            }
            let x0 = rng.random_range(lo_x as i64..=hi_x as i64) as f64;
            let y0 = rng.random_range(lo_y as i64..=hi_y as i64) as f64;
            let boxes = offs
                .iter()
                .map(|o| BBox::new(x0 + o[0], y0 + o[1], x0 + o[0] + w, y0 + o[1] + h))
                .collect::<Result<Vec<_>>>()?;
            let cand = Instance::new(class_id, start, boxes)?;
            let separated = out.iter().all(|other| {
                min_center_distance(&cand, other).is_none_or(|d| d >= spec.min_separation)
            });
            if separated {
                placed = Some(cand);
                break;
            }
        }
        let inst = placed.ok_or_else(|| {
            Error::Unsatisfiable(format!(
                "could not place instance {i} within bounds and separation after {MAX_ATTEMPTS} attempts"
            ))
        })?;
        out.push(inst);
    }
    Ok(out)
}

/// Scene wrapped as an annotation document.
pub fn generate_annotation(spec: &SceneSpec, video_id: impl Into<String>) -> Result<VideoAnnotation> {
    Ok(VideoAnnotation {
        video_id: video_id.into(),
        num_frames: spec.num_frames,
        width: spec.width,
        height: spec.height,
        instances: generate_scene(spec)?,
    })
}

/// How the perfect size maps are populated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SizeFill {
    /// Only at the supervised per-frame centers.
    #[default]
    Sparse,
    /// Over every cell inside the frame's box, supervised cells written last.
    Footprint,
}

/// Maps a perfect detector would predict for one window: the ground-truth
/// heatmap, each movement vector at its key cell and each per-frame size at
/// its per-frame center. Everything else is zero.
pub fn render_perfect_maps(
    instances: &[Instance],
    window_start: usize,
    spec: &GridSpec,
    fill: SizeFill,
) -> Result<WindowMaps> {
    let targets = encode_clip(instances, window_start, spec)?;
    let (gw, gh) = spec.grid();
    let k = spec.k();
    let mut movement = DenseMap::zeros(gh, gw, 2 * k);
    for t in &targets.movement_targets {
        for (c, &v) in t.movement.iter().enumerate() {
            movement.set(t.cell.x, t.cell.y, c, v as f32);
        }
    }
    let mut sizes = vec![DenseMap::zeros(gh, gw, 2); k];
    if fill == SizeFill::Footprint {
        let r = spec.ratio() as f64;
        for (&id, t) in targets.instance_ids.iter().zip(&targets.size_targets) {
            let inst = &instances[id];
            for (j, size) in t.sizes.iter().enumerate() {
                let b = inst.box_at(window_start + j).expect("covering instance");
                let x_lo = (b.x1 / r).ceil().max(0.0) as usize;
                let y_lo = (b.y1 / r).ceil().max(0.0) as usize;
                let x_hi = ((b.x2 / r).floor() as i64).min(gw as i64 - 1);
                let y_hi = ((b.y2 / r).floor() as i64).min(gh as i64 - 1);
                for y in y_lo as i64..=y_hi {
                    for x in x_lo as i64..=x_hi {
                        sizes[j].set(x as usize, y as usize, 0, size[0] as f32);
                        sizes[j].set(x as usize, y as usize, 1, size[1] as f32);
                    }
                }
            }
        }
    }
    for t in &targets.size_targets {
        for (j, (cell, size)) in t.cells.iter().zip(&t.sizes).enumerate() {
            sizes[j].set(cell.x, cell.y, 0, size[0] as f32);
            sizes[j].set(cell.x, cell.y, 1, size[1] as f32);
        }
    }
    Ok(WindowMaps {
        heatmap: targets.center_heatmap,
        movement,
        sizes,
    })
}

/// Standard deviations of the additive noise per map kind.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NoiseLevels {
    pub heatmap: f64,
    pub movement: f64,
    pub size: f64,
}

impl NoiseLevels {
    pub fn uniform(sigma: f64) -> Self {
        NoiseLevels {
            heatmap: sigma,
            movement: sigma,
            size: sigma,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.heatmap == 0.0 && self.movement == 0.0 && self.size == 0.0
    }
}

fn add_noise(map: &mut DenseMap, sigma: f64, rng: &mut ChaCha8Rng, clamp_unit: bool) -> Result<()> {
    if sigma == 0.0 {
        return Ok(());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::Config(format!("noise sigma {sigma}: {e}")))?;
    for v in map.data_mut() {
        let noisy = *v as f64 + normal.sample(rng);
        *v = if clamp_unit { noisy.clamp(0.0, 1.0) } else { noisy } as f32;
    }
    Ok(())
}

/// Adds seeded Gaussian noise; the heatmap is clamped back into `[0, 1]`.
pub fn perturb(maps: &WindowMaps, noise: NoiseLevels, seed: u64) -> Result<WindowMaps> {
    if noise.heatmap < 0.0 || noise.movement < 0.0 || noise.size < 0.0 {
        return Err(Error::Config("noise sigma must be non-negative".into()));
    }
    let mut out = maps.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    add_noise(&mut out.heatmap, noise.heatmap, &mut rng, true)?;
    add_noise(&mut out.movement, noise.movement, &mut rng, false)?;
    for s in &mut out.sizes {
        add_noise(s, noise.size, &mut rng, false)?;
    }
    Ok(out)
}

/// Boxes visible in one frame, tagged with their instance index.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameObservation {
    pub frame: usize,
    pub boxes: Vec<(usize, usize, BBox)>,
}

/// Splits a scene into per-frame observations, the input of a streaming head.
pub fn observations(instances: &[Instance], num_frames: usize) -> Vec<FrameObservation> {
    (0..num_frames)
        .map(|frame| FrameObservation {
            frame,
            boxes: instances
                .iter()
                .enumerate()
                .filter_map(|(i, inst)| inst.box_at(frame).map(|b| (i, inst.class_id, *b)))
                .collect(),
        })
        .collect()
}

/// Instances visible in every one of `frames`, restricted to those frames.
pub fn window_instances(frames: &[FrameObservation]) -> Vec<Instance> {
    let Some(first) = frames.first() else {
        return Vec::new();
    };
    first
        .boxes
        .iter()
        .filter_map(|&(id, class_id, _)| {
            let boxes: Option<Vec<BBox>> = frames
                .iter()
                .map(|f| f.boxes.iter().find(|b| b.0 == id).map(|b| b.2))
                .collect();
            boxes.map(|boxes| Instance {
                class_id,
                start_frame: first.frame,
                boxes,
            })
        })
        .collect()
}
