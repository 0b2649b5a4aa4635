//! Domain types shared by every stage of the pipeline.
//!
//! Boxes are always in input-pixel units. Dense maps and [`GridPoint`]s are in
//! grid units; the conversion factor between the two is exactly the
//! downsample ratio of the [`GridSpec`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Clip and feature-grid geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawGridSpec", into = "RawGridSpec")]
pub struct GridSpec {
    k: usize,
    width: usize,
    height: usize,
    ratio: usize,
    classes: usize,
    key_index: usize,
}

#[derive(Serialize, Deserialize)]
struct RawGridSpec {
    k: usize,
    width: usize,
    height: usize,
    ratio: usize,
    classes: usize,
    #[serde(default)]
    key_index: Option<usize>,
}

impl TryFrom<RawGridSpec> for GridSpec {
    type Error = Error;

    fn try_from(raw: RawGridSpec) -> Result<Self> {
        let spec = GridSpec::new(raw.k, raw.width, raw.height, raw.ratio, raw.classes)?;
        match raw.key_index {
            Some(key) => spec.with_key_index(key),
            None => Ok(spec),
        }
    }
}

impl From<GridSpec> for RawGridSpec {
    fn from(spec: GridSpec) -> Self {
        RawGridSpec {
            k: spec.k,
            width: spec.width,
            height: spec.height,
            ratio: spec.ratio,
            classes: spec.classes,
            key_index: Some(spec.key_index),
        }
    }
}

impl GridSpec {
    /// Builds a spec with the key frame at `floor(k / 2)`.
    pub fn new(k: usize, width: usize, height: usize, ratio: usize, classes: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidGrid("K must be at least 1".into()));
        }
        if classes == 0 {
            return Err(Error::InvalidGrid("C must be at least 1".into()));
        }
        if ratio == 0 {
            return Err(Error::InvalidGrid("R must be at least 1".into()));
        }
        if width == 0 || height == 0 {
            return Err(Error::InvalidGrid(format!(
                "input size {width}x{height} must be positive"
            )));
        }
        if !width.is_multiple_of(ratio) || !height.is_multiple_of(ratio) {
            return Err(Error::InvalidGrid(format!(
                "input size {width}x{height} not divisible by R = {ratio}"
            )));
        }
        Ok(GridSpec {
            k,
            width,
            height,
            ratio,
            classes,
            key_index: k / 2,
        })
    }

    pub fn with_key_index(mut self, key_index: usize) -> Result<Self> {
        if key_index >= self.k {
            return Err(Error::InvalidGrid(format!(
                "key index {key_index} outside clip of length {}",
                self.k
            )));
        }
        self.key_index = key_index;
        Ok(self)
    }

    /// Frames per clip.
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Spatial downsample ratio between input pixels and grid cells.
    pub fn ratio(&self) -> usize {
        self.ratio
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn key_index(&self) -> usize {
        self.key_index
    }

    /// Grid dimensions `(Wg, Hg)`.
    pub fn grid(&self) -> (usize, usize) {
        (self.width / self.ratio, self.height / self.ratio)
    }

    pub fn grid_width(&self) -> usize {
        self.width / self.ratio
    }

    pub fn grid_height(&self) -> usize {
        self.height / self.ratio
    }

    pub fn is_even_k(&self) -> bool {
        self.k.is_multiple_of(2)
    }
}

/// Grid dimensions `(Wg, Hg)` of a spec.
pub fn grid_of(spec: &GridSpec) -> (usize, usize) {
    spec.grid()
}

/// An integer cell on the feature grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GridPoint {
    pub x: usize,
    pub y: usize,
}

impl GridPoint {
    pub fn new(x: usize, y: usize) -> Self {
        GridPoint { x, y }
    }
}

/// Axis-aligned box by corners, serialised as `[x1, y1, x2, y2]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = Error;

    fn try_from(v: [f64; 4]) -> Result<Self> {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x1, b.y1, b.x2, b.y2]
    }
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let finite = x1.is_finite() && y1.is_finite() && x2.is_finite() && y2.is_finite();
        if !finite || x1 > x2 || y1 > y2 {
            return Err(Error::InvalidBox { x1, y1, x2, y2 });
        }
        Ok(BBox { x1, y1, x2, y2 })
    }

    /// Box of size `(w, h)` centred on `(cx, cy)`. Negative sizes collapse to zero.
    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        let hw = w.max(0.0) / 2.0;
        let hh = h.max(0.0) / 2.0;
        BBox {
            x1: cx - hw,
            y1: cy - hh,
            x2: cx + hw,
            y2: cy + hh,
        }
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Self {
        BBox {
            x1: self.x1 + dx,
            y1: self.y1 + dy,
            x2: self.x2 + dx,
            y2: self.y2 + dy,
        }
    }
}

/// A ground-truth action instance: one class over a contiguous frame range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub class_id: usize,
    pub start_frame: usize,
    pub boxes: Vec<BBox>,
}

impl Instance {
    pub fn new(class_id: usize, start_frame: usize, boxes: Vec<BBox>) -> Result<Self> {
        if boxes.is_empty() {
            return Err(Error::InvalidInstance("instance has no boxes".into()));
        }
        Ok(Instance {
            class_id,
            start_frame,
            boxes,
        })
    }

    /// Last annotated frame (inclusive).
    pub fn end_frame(&self) -> usize {
        self.start_frame + self.boxes.len() - 1
    }

    pub fn box_at(&self, frame: usize) -> Option<&BBox> {
        frame
            .checked_sub(self.start_frame)
            .and_then(|i| self.boxes.get(i))
    }

    /// True when every frame of `[window_start, window_start + k)` is annotated.
    pub fn covers(&self, window_start: usize, k: usize) -> bool {
        window_start >= self.start_frame && window_start + k - 1 <= self.end_frame()
    }

    pub fn contains_frame(&self, frame: usize) -> bool {
        frame >= self.start_frame && frame <= self.end_frame()
    }

    pub fn validate(&self, classes: usize) -> Result<()> {
        if self.boxes.is_empty() {
            return Err(Error::InvalidInstance("instance has no boxes".into()));
        }
        if self.class_id >= classes {
            return Err(Error::InvalidInstance(format!(
                "class id {} outside 0..{classes}",
                self.class_id
            )));
        }
        Ok(())
    }
}

/// K consecutive boxes detected from one clip window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tubelet {
    pub start_frame: usize,
    pub class_id: usize,
    pub score: f64,
    pub boxes: Vec<BBox>,
    /// Key-frame peak cell the tubelet was decoded from; drives tie ordering.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor: Option<GridPoint>,
}

impl Tubelet {
    pub fn end_frame(&self) -> usize {
        self.start_frame + self.boxes.len() - 1
    }

    pub fn box_at(&self, frame: usize) -> Option<&BBox> {
        frame
            .checked_sub(self.start_frame)
            .and_then(|i| self.boxes.get(i))
    }
}

/// A video-level detection built by linking tubelets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tube {
    pub class_id: usize,
    pub score: f64,
    pub start_frame: usize,
    pub end_frame: usize,
    pub boxes: Vec<BBox>,
}

impl Tube {
    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn box_at(&self, frame: usize) -> Option<&BBox> {
        frame
            .checked_sub(self.start_frame)
            .and_then(|i| self.boxes.get(i))
    }

    /// Ground-truth tube of an instance, scored 1.
    pub fn from_instance(inst: &Instance) -> Self {
        Tube {
            class_id: inst.class_id,
            score: 1.0,
            start_frame: inst.start_frame,
            end_frame: inst.end_frame(),
            boxes: inst.boxes.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_dims() {
        assert_eq!(grid_of(&GridSpec::new(7, 288, 288, 4, 24).unwrap()), (72, 72));
        assert_eq!(grid_of(&GridSpec::new(1, 4, 4, 1, 1).unwrap()), (4, 4));
        assert_eq!(grid_of(&GridSpec::new(3, 32, 16, 4, 2).unwrap()), (8, 4));
    }

    #[test]
    fn grid_rejects_bad_geometry() {
        assert!(GridSpec::new(7, 30, 32, 4, 1).is_err());
        assert!(GridSpec::new(7, 32, 30, 4, 1).is_err());
        assert!(GridSpec::new(0, 32, 32, 4, 1).is_err());
        assert!(GridSpec::new(3, 32, 32, 4, 0).is_err());
        assert!(GridSpec::new(3, 32, 32, 0, 1).is_err());
        assert!(GridSpec::new(3, 32, 32, 4, 1).unwrap().with_key_index(3).is_err());
    }

    #[test]
    fn key_index_defaults_to_floor_half() {
        assert_eq!(GridSpec::new(7, 8, 8, 4, 1).unwrap().key_index(), 3);
        assert_eq!(GridSpec::new(4, 8, 8, 4, 1).unwrap().key_index(), 2);
        assert_eq!(GridSpec::new(1, 8, 8, 4, 1).unwrap().key_index(), 0);
    }

    #[test]
    fn grid_spec_serde_validates() {
        let ok: GridSpec =
            serde_json::from_str(r#"{"k":5,"width":32,"height":32,"ratio":4,"classes":3}"#).unwrap();
        assert_eq!(ok.key_index(), 2);
        let bad = serde_json::from_str::<GridSpec>(
            r#"{"k":5,"width":30,"height":32,"ratio":4,"classes":3}"#,
        );
        assert!(bad.is_err());
    }

    #[test]
    fn bbox_rejects_inverted_corners() {
        assert!(BBox::new(1.0, 0.0, 0.0, 1.0).is_err());
        assert!(BBox::new(0.0, 0.0, f64::NAN, 1.0).is_err());
        assert!(BBox::new(2.0, 2.0, 2.0, 2.0).is_ok());
        assert!(serde_json::from_str::<BBox>("[3, 0, 1, 1]").is_err());
    }

    #[test]
    fn instance_coverage() {
        let b = BBox::new(0.0, 0.0, 1.0, 1.0).unwrap();
        let inst = Instance::new(0, 5, vec![b; 10]).unwrap();
        assert_eq!(inst.end_frame(), 14);
        assert!(inst.covers(5, 10));
        assert!(inst.covers(8, 7));
        assert!(!inst.covers(9, 7));
        assert!(!inst.covers(4, 3));
        assert!(inst.box_at(4).is_none());
        assert!(inst.box_at(14).is_some());
    }
}
