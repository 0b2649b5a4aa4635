//! Ground-truth targets for one clip window: the per-class center heatmap,
//! the key-frame movement vectors and the per-frame box sizes.
//!
//! Movement and size targets are in grid units. The quantisation residual of
//! the key-frame center is kept inside the key-frame entry of the movement
//! vector, so `key_cell + m[j]` is the exact (unquantised) center at frame `j`.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::map::DenseMap;
use crate::types::{GridPoint, GridSpec, Instance};

/// Minimum IoU a box shifted within the Gaussian radius keeps with the original.
pub const DEFAULT_MIN_OVERLAP: f64 = 0.7;
/// Lower bound on the Gaussian standard deviation, in grid cells.
pub const SIGMA_FLOOR: f64 = 2.0 / 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MovementTarget {
    /// Quantised key-frame center where the movement is supervised.
    pub cell: GridPoint,
    /// `(dx_1, dy_1, ..., dx_K, dy_K)` in grid units.
    pub movement: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeTarget {
    /// Per-frame quantised centers `p^j`.
    pub cells: Vec<GridPoint>,
    /// Per-frame `(w, h)` in grid units.
    pub sizes: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClipTargets {
    pub window_start: usize,
    pub center_heatmap: DenseMap,
    pub movement_targets: Vec<MovementTarget>,
    pub size_targets: Vec<SizeTarget>,
    /// Indices into the instance list that were encoded (fully covering ones).
    pub instance_ids: Vec<usize>,
}

impl ClipTargets {
    /// Number of encoded instances.
    pub fn n(&self) -> usize {
        self.instance_ids.len()
    }
}

fn clamp_cell(x: i64, y: i64, spec: &GridSpec) -> GridPoint {
    let (gw, gh) = spec.grid();
    let cx = x.clamp(0, gw as i64 - 1);
    let cy = y.clamp(0, gh as i64 - 1);
    if cx != x || cy != y {
        warn!("center ({x}, {y}) outside {gw}x{gh} grid, clamped to ({cx}, {cy})");
    }
    GridPoint::new(cx as usize, cy as usize)
}

/// Nearest grid cell to a continuous grid-space point, rounding halves up,
/// clamped into the grid. Shared by target encoding and size-map lookup.
pub fn nearest_cell(x: f64, y: f64, spec: &GridSpec) -> GridPoint {
    let (gw, gh) = spec.grid();
    let rx = ((x + 0.5).floor() as i64).clamp(0, gw as i64 - 1);
    let ry = ((y + 0.5).floor() as i64).clamp(0, gh as i64 - 1);
    GridPoint::new(rx as usize, ry as usize)
}

fn window_box(
    inst: &Instance,
    window_start: usize,
    frame: usize,
) -> &crate::types::BBox {
    &inst.boxes[window_start + frame - inst.start_frame]
}

fn check_covers(inst: &Instance, window_start: usize, spec: &GridSpec, id: usize) -> Result<()> {
    if inst.covers(window_start, spec.k()) {
        Ok(())
    } else {
        Err(Error::NotCovering {
            instance: id,
            window_start,
        })
    }
}

/// Key-frame center: the box center floored in pixels, then floored to grid cells.
pub fn key_center(inst: &Instance, window_start: usize, spec: &GridSpec) -> Result<GridPoint> {
    let frame = window_start + spec.key_index();
    let b = inst.box_at(frame).ok_or(Error::NotCovering {
        instance: 0,
        window_start,
    })?;
    let px = ((b.x1 + b.x2) / 2.0).floor();
    let py = ((b.y1 + b.y2) / 2.0).floor();
    let r = spec.ratio() as f64;
    Ok(clamp_cell(
        (px / r).floor() as i64,
        (py / r).floor() as i64,
        spec,
    ))
}

/// Radius (grid cells) within which a shifted or resized box keeps IoU
/// `min_overlap` with the original: the smallest root of the three
/// corner-pair quadratics used by keypoint detectors.
pub fn gaussian_radius(width: f64, height: f64, min_overlap: f64) -> f64 {
    let (w, h, m) = (width, height, min_overlap);

    let b1 = h + w;
    let c1 = w * h * (1.0 - m) / (1.0 + m);
    let r1 = (b1 + (b1 * b1 - 4.0 * c1).sqrt()) / 2.0;

    let b2 = 2.0 * (h + w);
    let c2 = (1.0 - m) * w * h;
    let r2 = (b2 + (b2 * b2 - 16.0 * c2).sqrt()) / 2.0;

    let a3 = 4.0 * m;
    let b3 = -2.0 * m * (h + w);
    let c3 = (m - 1.0) * w * h;
    let r3 = (b3 + (b3 * b3 - 4.0 * a3 * c3).sqrt()) / 2.0;

    r1.min(r2).min(r3)
}

/// Size-adaptive Gaussian standard deviation: `max(floor(radius) / 3, 2/3)`.
pub fn gaussian_sigma(width: f64, height: f64, min_overlap: f64) -> f64 {
    let radius = gaussian_radius(width.max(0.0), height.max(0.0), min_overlap)
        .floor()
        .max(0.0);
    (radius / 3.0).max(SIGMA_FLOOR)
}

/// Splats a Gaussian of the given sigma into one class channel, keeping the
/// per-cell maximum where bumps overlap.
pub fn draw_gaussian(map: &mut DenseMap, center: GridPoint, class_id: usize, sigma: f64) {
    let denom = 2.0 * sigma * sigma;
    for y in 0..map.height() {
        let dy = y as f64 - center.y as f64;
        for x in 0..map.width() {
            let dx = x as f64 - center.x as f64;
            let v = (-(dx * dx + dy * dy) / denom).exp() as f32;
            let i = map.index(x, y, class_id);
            let cur = map.data()[i];
            if v > cur {
                map.data_mut()[i] = v;
            }
        }
    }
}

/// Center heatmap `(Hg, Wg, C)` of instances that all cover the window.
pub fn encode_center_heatmap(
    instances: &[Instance],
    window_start: usize,
    spec: &GridSpec,
) -> Result<DenseMap> {
    let (gw, gh) = spec.grid();
    let mut map = DenseMap::zeros(gh, gw, spec.classes());
    let r = spec.ratio() as f64;
    for (id, inst) in instances.iter().enumerate() {
        check_covers(inst, window_start, spec, id)?;
        inst.validate(spec.classes())?;
        let center = key_center(inst, window_start, spec)?;
        let b = window_box(inst, window_start, spec.key_index());
        let sigma = gaussian_sigma(b.width() / r, b.height() / r, DEFAULT_MIN_OVERLAP);
        draw_gaussian(&mut map, center, inst.class_id, sigma);
    }
    Ok(map)
}

/// Movement vector of one instance relative to its quantised key center.
pub fn encode_movement(inst: &Instance, window_start: usize, spec: &GridSpec) -> Result<MovementTarget> {
    check_covers(inst, window_start, spec, 0)?;
    let cell = key_center(inst, window_start, spec)?;
    let r = spec.ratio() as f64;
    let mut movement = Vec::with_capacity(2 * spec.k());
    for j in 0..spec.k() {
        let (cx, cy) = window_box(inst, window_start, j).center();
        movement.push(cx / r - cell.x as f64);
        movement.push(cy / r - cell.y as f64);
    }
    Ok(MovementTarget { cell, movement })
}

/// Per-frame sizes and quantised centers of one instance.
pub fn encode_boxsize(inst: &Instance, window_start: usize, spec: &GridSpec) -> Result<SizeTarget> {
    check_covers(inst, window_start, spec, 0)?;
    let r = spec.ratio() as f64;
    let mut cells = Vec::with_capacity(spec.k());
    let mut sizes = Vec::with_capacity(spec.k());
    for j in 0..spec.k() {
        let b = window_box(inst, window_start, j);
        let (cx, cy) = b.center();
        cells.push(nearest_cell(cx / r, cy / r, spec));
        sizes.push([b.width() / r, b.height() / r]);
    }
    Ok(SizeTarget { cells, sizes })
}

/// All targets for the window starting at `window_start`. Instances that do
/// not cover the whole window are skipped.
pub fn encode_clip(instances: &[Instance], window_start: usize, spec: &GridSpec) -> Result<ClipTargets> {
    let mut covering = Vec::new();
    let mut ids = Vec::new();
    for (id, inst) in instances.iter().enumerate() {
        if inst.covers(window_start, spec.k()) {
            covering.push(inst.clone());
            ids.push(id);
        } else if inst.contains_frame(window_start)
            || inst.contains_frame(window_start + spec.k() - 1)
        {
            warn!("instance {id} only partially covers window at frame {window_start}; skipped");
        }
    }
    let center_heatmap = encode_center_heatmap(&covering, window_start, spec)?;
    let movement_targets = covering
        .iter()
        .map(|inst| encode_movement(inst, window_start, spec))
        .collect::<Result<Vec<_>>>()?;
    let size_targets = covering
        .iter()
        .map(|inst| encode_boxsize(inst, window_start, spec))
        .collect::<Result<Vec<_>>>()?;
    Ok(ClipTargets {
        window_start,
        center_heatmap,
        movement_targets,
        size_targets,
        instance_ids: ids,
    })
}
