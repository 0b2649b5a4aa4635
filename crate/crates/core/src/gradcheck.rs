//! Central finite-difference checks of the analytic loss gradients.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{encode_clip, ClipTargets};
use crate::error::Result;
use crate::losses::{box_loss, center_focal_loss, movement_loss, LossParams};
use crate::map::DenseMap;
use crate::types::{BBox, GridSpec, Instance};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheckConfig {
    pub seed: u64,
    /// Entries probed per map, on top of every supervised entry sampled.
    pub samples: usize,
    pub step: f64,
    /// L1 entries whose residual is this close to zero are skipped.
    pub kink_eps: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            seed: 0,
            samples: 128,
            step: 1e-4,
            kink_eps: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossCheck {
    pub checked: usize,
    pub skipped_kinks: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub center: LossCheck,
    pub movement: LossCheck,
    pub boxes: LossCheck,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.center
            .max_rel_error
            .max(self.movement.max_rel_error)
            .max(self.boxes.max_rel_error)
    }

    pub fn min_checked(&self) -> usize {
        self.center.checked.min(self.movement.checked).min(self.boxes.checked)
    }
}

fn rel_error(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff == 0.0 {
        0.0
    } else {
        diff / analytic.abs().max(numeric.abs()).max(1e-12)
    }
}

/// Central difference of `f` at entry `i`, using the exact f32 step taken.
fn central(map: &mut DenseMap, i: usize, h: f64, f: &mut impl FnMut(&DenseMap) -> Result<f64>) -> Result<f64> {
    let x = map.data()[i];
    let plus = (x as f64 + h) as f32;
    let minus = (x as f64 - h) as f32;
    map.data_mut()[i] = plus;
    let fp = f(map)?;
    map.data_mut()[i] = minus;
    let fm = f(map)?;
    map.data_mut()[i] = x;
    Ok((fp - fm) / (plus as f64 - minus as f64))
}

/// Entries to probe: up to `samples` supervised entries plus `samples` uniform ones.
fn pick(len: usize, supervised: &[usize], samples: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut out: Vec<usize> = if supervised.len() <= samples {
        supervised.to_vec()
    } else {
        rand::seq::index::sample(rng, supervised.len(), samples)
            .into_iter()
            .map(|i| supervised[i])
            .collect()
    };
    out.extend(rand::seq::index::sample(rng, len, samples.min(len)));
    out.sort_unstable();
    out.dedup();
    out
}

/// Checks one map against a loss. `targets_at` lists the L1 targets touching
/// an entry; an empty table means the loss is smooth.
fn check_map(
    map: &DenseMap,
    analytic: &DenseMap,
    targets_at: &HashMap<usize, Vec<f64>>,
    cfg: &GradCheckConfig,
    rng: &mut ChaCha8Rng,
    mut f: impl FnMut(&DenseMap) -> Result<f64>,
) -> Result<LossCheck> {
    let mut supervised: Vec<usize> = targets_at.keys().copied().collect();
    supervised.sort_unstable();
    let entries = pick(map.data().len(), &supervised, cfg.samples, rng);
    let mut work = map.clone();
    let mut out = LossCheck {
        checked: 0,
        skipped_kinks: 0,
        max_rel_error: 0.0,
    };
    for i in entries {
        let mut h = cfg.step;
        if let Some(ts) = targets_at.get(&i) {
            let gap = ts
                .iter()
                .map(|t| (map.data()[i] as f64 - t).abs())
                .fold(f64::INFINITY, f64::min);
            if gap < cfg.kink_eps {
                out.skipped_kinks += 1;
                continue;
            }
            h = h.min(gap / 2.0);
        }
        let numeric = central(&mut work, i, h, &mut f)?;
        out.max_rel_error = out.max_rel_error.max(rel_error(analytic.data()[i] as f64, numeric));
        out.checked += 1;
    }
    Ok(out)
}

/// Checks all three branch losses at the given predictions.
pub fn check_losses(
    heatmap: &DenseMap,
    movement: &DenseMap,
    sizes: &[DenseMap],
    targets: &ClipTargets,
    params: &LossParams,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_c0de);
    let n = targets.n();
    let c = center_focal_loss(heatmap, &targets.center_heatmap, params.alpha, params.beta, n)?;
    let center = check_map(heatmap, &c.grad, &HashMap::new(), cfg, &mut rng, |m| {
        Ok(center_focal_loss(m, &targets.center_heatmap, params.alpha, params.beta, n)?.loss)
    })?;

    let m = movement_loss(movement, &targets.movement_targets)?;
    let mut touch: HashMap<usize, Vec<f64>> = HashMap::new();
    for t in &targets.movement_targets {
        for (ch, &v) in t.movement.iter().enumerate() {
            touch.entry(movement.index(t.cell.x, t.cell.y, ch)).or_default().push(v);
        }
    }
    let movement_check = check_map(movement, &m.grad, &touch, cfg, &mut rng, |p| {
        Ok(movement_loss(p, &targets.movement_targets)?.loss)
    })?;

    let b = box_loss(sizes, &targets.size_targets, params.box_norm)?;
    let mut boxes = LossCheck {
        checked: 0,
        skipped_kinks: 0,
        max_rel_error: 0.0,
    };
    let per_frame = CheckSplit::new(cfg.samples, sizes.len());
    for j in 0..sizes.len() {
        let mut touch: HashMap<usize, Vec<f64>> = HashMap::new();
        for t in &targets.size_targets {
            for (ch, &v) in t.sizes[j].iter().enumerate() {
                touch.entry(sizes[j].index(t.cells[j].x, t.cells[j].y, ch)).or_default().push(v);
            }
        }
        let frame_cfg = GradCheckConfig {
            samples: per_frame.samples(j),
            ..*cfg
        };
        let mut all = sizes.to_vec();
        let r = check_map(&sizes[j], &b.grad[j], &touch, &frame_cfg, &mut rng, |p| {
            all[j] = p.clone();
            Ok(box_loss(&all, &targets.size_targets, params.box_norm)?.loss)
        })?;
        boxes.checked += r.checked;
        boxes.skipped_kinks += r.skipped_kinks;
        boxes.max_rel_error = boxes.max_rel_error.max(r.max_rel_error);
    }
    Ok(GradCheckReport {
        center,
        movement: movement_check,
        boxes,
    })
}

/// Splits a sample budget across the K size maps so the total matches one map.
struct CheckSplit {
    base: usize,
    extra: usize,
}

impl CheckSplit {
    fn new(total: usize, parts: usize) -> Self {
        let parts = parts.max(1);
        CheckSplit {
            base: total / parts,
            extra: total % parts,
        }
    }

    fn samples(&self, j: usize) -> usize {
        self.base + usize::from(j < self.extra)
    }
}

/// Random instances on a small grid plus predictions drawn away from the
/// clamp bounds and offset from every L1 target.
pub fn random_problem(seed: u64, spec: &GridSpec, instances: usize) -> Result<(DenseMap, DenseMap, Vec<DenseMap>, ClipTargets)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (spec.width() as f64, spec.height() as f64);
    let k = spec.k();
    let insts = (0..instances)
        .map(|_| {
            let class_id = rng.random_range(0..spec.classes());
            let bw = rng.random_range(4.0..w / 3.0);
            let bh = rng.random_range(4.0..h / 3.0);
            let vx = rng.random_range(-2.0..2.0);
            let vy = rng.random_range(-2.0..2.0);
            let x0 = rng.random_range(w / 3.0..w / 3.0 + w / 4.0);
            let y0 = rng.random_range(h / 3.0..h / 3.0 + h / 4.0);
            let boxes = (0..k)
                .map(|t| {
                    let (x, y) = (x0 + vx * t as f64, y0 + vy * t as f64);
                    BBox::new(x, y, x + bw, y + bh)
                })
                .collect::<Result<Vec<_>>>()?;
            Instance::new(class_id, 0, boxes)
        })
        .collect::<Result<Vec<_>>>()?;
    let targets = encode_clip(&insts, 0, spec)?;
    let (gw, gh) = spec.grid();
    let mut heat = DenseMap::zeros(gh, gw, spec.classes());
    heat.data_mut().iter_mut().for_each(|v| *v = rng.random_range(0.05..0.95));
    let mut movement = DenseMap::zeros(gh, gw, 2 * k);
    movement.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-3.0..3.0));
    let offset = |rng: &mut ChaCha8Rng| {
        let d: f64 = rng.random_range(0.1..2.0);
        if rng.random_bool(0.5) { d } else { -d }
    };
    for t in &targets.movement_targets {
        for (ch, &v) in t.movement.iter().enumerate() {
            movement.set(t.cell.x, t.cell.y, ch, (v + offset(&mut rng)) as f32);
        }
    }
    let mut sizes: Vec<DenseMap> = (0..k)
        .map(|_| {
            let mut m = DenseMap::zeros(gh, gw, 2);
            m.data_mut().iter_mut().for_each(|v| *v = rng.random_range(0.0..10.0));
            m
        })
        .collect();
    for t in &targets.size_targets {
        for (j, (cell, s)) in t.cells.iter().zip(&t.sizes).enumerate() {
            for (ch, &v) in s.iter().enumerate() {
                sizes[j].set(cell.x, cell.y, ch, (v + offset(&mut rng)) as f32);
            }
        }
    }
    Ok((heat, movement, sizes, targets))
}

/// The full suite: `trials` random problems, worst error per loss.
pub fn run_suite(cfg: &GradCheckConfig, trials: usize, params: &LossParams) -> Result<GradCheckReport> {
    let spec = GridSpec::new(5, 96, 96, 4, 3)?;
    let mut worst: Option<GradCheckReport> = None;
    for t in 0..trials.max(1) {
        let seed = cfg.seed.wrapping_add(t as u64);
        let (heat, movement, sizes, targets) = random_problem(seed, &spec, 24)?;
        let r = check_losses(&heat, &movement, &sizes, &targets, params, &GradCheckConfig { seed, ..*cfg })?;
        worst = Some(match worst {
            None => r,
            Some(w) => GradCheckReport {
                center: merge(w.center, r.center),
                movement: merge(w.movement, r.movement),
                boxes: merge(w.boxes, r.boxes),
            },
        });
    }
    Ok(worst.expect("at least one trial"))
}

fn merge(a: LossCheck, b: LossCheck) -> LossCheck {
    LossCheck {
        checked: a.checked + b.checked,
        skipped_kinks: a.skipped_kinks + b.skipped_kinks,
        max_rel_error: a.max_rel_error.max(b.max_rel_error),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::BoxNormalization;

    #[test]
    fn suite_passes_tolerance() {
        for norm in [BoxNormalization::Instances, BoxNormalization::InstanceFrames] {
            let params = LossParams { box_norm: norm, ..LossParams::default() };
            let r = run_suite(&GradCheckConfig::default(), 2, &params).unwrap();
            assert!(r.max_rel_error() < 1e-4, "{r:?}");
            assert!(r.min_checked() >= 200, "{r:?}");
        }
    }

    #[test]
    fn detects_a_wrong_gradient() {
        let spec = GridSpec::new(3, 32, 32, 4, 1).unwrap();
        let (heat, _, _, targets) = random_problem(1, &spec, 2).unwrap();
        let c = center_focal_loss(&heat, &targets.center_heatmap, 2.0, 4.0, targets.n()).unwrap();
        let mut wrong = c.grad.clone();
        wrong.data_mut().iter_mut().for_each(|g| *g *= 1.01);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = check_map(&heat, &wrong, &HashMap::new(), &GradCheckConfig::default(), &mut rng, |m| {
            Ok(center_focal_loss(m, &targets.center_heatmap, 2.0, 4.0, targets.n())?.loss)
        })
        .unwrap();
        assert!(r.max_rel_error > 5e-3);
    }

    #[test]
    fn kinks_are_skipped() {
        let spec = GridSpec::new(3, 32, 32, 4, 1).unwrap();
        let (heat, mut movement, sizes, targets) = random_problem(2, &spec, 1).unwrap();
        let t = &targets.movement_targets[0];
        for (ch, &v) in t.movement.iter().enumerate() {
            movement.set(t.cell.x, t.cell.y, ch, v as f32);
        }
        let r = check_losses(&heat, &movement, &sizes, &targets, &LossParams::default(), &GradCheckConfig::default()).unwrap();
        assert!(r.movement.skipped_kinks > 0);
        assert!(r.movement.max_rel_error < 1e-4);
    }
}
