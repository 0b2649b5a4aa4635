//! Tubelet decoding from predicted center, movement and size maps.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::encoder::nearest_cell;
use crate::error::{Error, Result};
use crate::map::DenseMap;
use crate::types::{BBox, GridPoint, GridSpec, Tubelet};

/// Peaks kept per clip.
pub const DEFAULT_TOP_N: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub x: usize,
    pub y: usize,
    pub class_id: usize,
    pub score: f32,
}

impl Peak {
    pub fn cell(&self) -> GridPoint {
        GridPoint::new(self.x, self.y)
    }
}

/// Decoding knobs shared by offline and streaming paths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub top_n: usize,
    pub mode: MovementMode,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            top_n: DEFAULT_TOP_N,
            mode: MovementMode::FullMovement,
        }
    }
}

/// Score descending, then `(class_id, y, x)` ascending.
pub fn peak_order(a: &Peak, b: &Peak) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.class_id.cmp(&b.class_id))
        .then(a.y.cmp(&b.y))
        .then(a.x.cmp(&b.x))
}

/// How per-frame boxes are placed and sized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MovementMode {
    /// Every frame's box is sized and centred at the key-frame peak.
    NoMovement,
    /// Sized at the key-frame peak, centred on the trajectory.
    SemiMovement,
    /// Sized and centred on the trajectory.
    #[default]
    FullMovement,
}

impl std::str::FromStr for MovementMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "no_movement" => Ok(MovementMode::NoMovement),
            "semi_movement" => Ok(MovementMode::SemiMovement),
            "full_movement" => Ok(MovementMode::FullMovement),
            other => Err(Error::Config(format!("unknown movement mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for MovementMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MovementMode::NoMovement => "no_movement",
            MovementMode::SemiMovement => "semi_movement",
            MovementMode::FullMovement => "full_movement",
        })
    }
}

/// Row-wise then column-wise 3x3 max of one channel, border cells using only
/// the neighbours that exist.
fn max3x3(map: &DenseMap, c: usize, rows: &mut [f32], out: &mut [f32]) {
    let (h, w, _) = map.dims();
    for y in 0..h {
        for x in 0..w {
            let mut m = map.get(x, y, c);
            if x > 0 {
                m = m.max(map.get(x - 1, y, c));
            }
            if x + 1 < w {
                m = m.max(map.get(x + 1, y, c));
            }
            rows[y * w + x] = m;
        }
    }
    for y in 0..h {
        for x in 0..w {
            let mut m = rows[y * w + x];
            if y > 0 {
                m = m.max(rows[(y - 1) * w + x]);
            }
            if y + 1 < h {
                m = m.max(rows[(y + 1) * w + x]);
            }
            out[y * w + x] = m;
        }
    }
}

/// Cells that are `>=` all of their 8-connected neighbours in their own class
/// channel, best `top_n` across classes.
pub fn extract_peaks(heatmap: &DenseMap, top_n: usize) -> Vec<Peak> {
    let (h, w, classes) = heatmap.dims();
    let mut rows = vec![0.0f32; h * w];
    let mut pooled = vec![0.0f32; h * w];
    let mut peaks = Vec::new();
    for c in 0..classes {
        max3x3(heatmap, c, &mut rows, &mut pooled);
        for y in 0..h {
            for x in 0..w {
                let v = heatmap.get(x, y, c);
                if v >= pooled[y * w + x] {
                    peaks.push(Peak {
                        x,
                        y,
                        class_id: c,
                        score: v,
                    });
                }
            }
        }
    }
    if peaks.len() > top_n && top_n > 0 {
        peaks.select_nth_unstable_by(top_n - 1, peak_order);
    }
    peaks.truncate(top_n);
    peaks.sort_by(peak_order);
    peaks
}

/// Continuous grid-space centers, one per clip frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory(pub Vec<[f64; 2]>);

impl Trajectory {
    pub fn points(&self) -> &[[f64; 2]] {
        &self.0
    }
}

/// Peak cell plus the movement vector stored at that cell.
pub fn read_trajectory(movement: &DenseMap, peak: &Peak) -> Result<Trajectory> {
    let ch = movement.channels();
    if ch == 0 || !ch.is_multiple_of(2) {
        return Err(Error::DimMismatch(format!(
            "movement map needs 2K channels, found {ch}"
        )));
    }
    let cell = movement.cell(peak.x, peak.y);
    Ok(Trajectory(
        cell.chunks_exact(2)
            .map(|d| [peak.x as f64 + d[0] as f64, peak.y as f64 + d[1] as f64])
            .collect(),
    ))
}

/// Per-frame boxes in input pixels for one trajectory.
pub fn assemble_boxes(
    sizes: &[DenseMap],
    traj: &Trajectory,
    peak: &Peak,
    spec: &GridSpec,
    mode: MovementMode,
) -> Result<Vec<BBox>> {
    if sizes.len() != traj.0.len() {
        return Err(Error::DimMismatch(format!(
            "{} size maps for a trajectory of {} points",
            sizes.len(),
            traj.0.len()
        )));
    }
    let r = spec.ratio() as f64;
    let key = [peak.x as f64, peak.y as f64];
    let boxes = sizes
        .iter()
        .zip(traj.points())
        .map(|(size_map, &point)| {
            let (read_at, center) = match mode {
                MovementMode::NoMovement => (peak.cell(), key),
                MovementMode::SemiMovement => (peak.cell(), point),
                MovementMode::FullMovement => (nearest_cell(point[0], point[1], spec), point),
            };
            let wh = size_map.cell(read_at.x, read_at.y);
            BBox::from_center(center[0] * r, center[1] * r, wh[0] as f64 * r, wh[1] as f64 * r)
        })
        .collect();
    Ok(boxes)
}

/// Predicted maps for one clip window.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowMaps {
    /// `(Hg, Wg, C)`.
    pub heatmap: DenseMap,
    /// `(Hg, Wg, 2K)`.
    pub movement: DenseMap,
    /// K maps of `(Hg, Wg, 2)`.
    pub sizes: Vec<DenseMap>,
}

impl WindowMaps {
    pub fn validate(&self, spec: &GridSpec) -> Result<()> {
        let (gw, gh) = spec.grid();
        let k = spec.k();
        let expect = |what: &str, m: &DenseMap, c: usize| {
            if m.dims() != (gh, gw, c) {
                Err(Error::DimMismatch(format!(
                    "{what} dims {:?}, expected {:?}",
                    m.dims(),
                    (gh, gw, c)
                )))
            } else {
                Ok(())
            }
        };
        expect("heatmap", &self.heatmap, spec.classes())?;
        expect("movement", &self.movement, 2 * k)?;
        if self.sizes.len() != k {
            return Err(Error::DimMismatch(format!(
                "{} size maps, expected K = {k}",
                self.sizes.len()
            )));
        }
        for s in &self.sizes {
            expect("size", s, 2)?;
        }
        self.heatmap.check_heatmap()?;
        self.movement.check_finite()?;
        self.sizes.iter().try_for_each(DenseMap::check_finite)
    }
}

/// One tubelet per retained peak, ordered like the peaks.
pub fn decode_tubelets(
    maps: &WindowMaps,
    spec: &GridSpec,
    top_n: usize,
    mode: MovementMode,
    start_frame: usize,
) -> Result<Vec<Tubelet>> {
    maps.validate(spec)?;
    extract_peaks(&maps.heatmap, top_n)
        .into_iter()
        .map(|peak| {
            let traj = read_trajectory(&maps.movement, &peak)?;
            let boxes = assemble_boxes(&maps.sizes, &traj, &peak, spec, mode)?;
            Ok(Tubelet {
                start_frame,
                class_id: peak.class_id,
                score: peak.score as f64,
                boxes,
                anchor: Some(peak.cell()),
            })
        })
        .collect()
}
