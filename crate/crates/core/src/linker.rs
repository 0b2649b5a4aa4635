//! Online greedy linking of per-window tubelets into video-level tubes.
//!
//! At every frame the active links, best average score first, each claim the
//! highest-scoring unclaimed candidate of their class whose overlap with them
//! exceeds `tau`. Leftover candidates open new links. A link that goes K
//! frames without an extension is closed.

use std::cmp::Ordering;
use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::decoder::{decode_tubelets, DecodeConfig, WindowMaps};
use crate::error::{Error, Result};
use crate::evaluator::iou;
use crate::types::{BBox, GridSpec, Tube, Tubelet};

pub const DEFAULT_TAU: f64 = 0.5;
pub const DEFAULT_MIN_SCORE: f64 = 0.05;
pub const DEFAULT_TOP_CANDIDATES: usize = 10;

/// What a candidate is compared against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverlapReference {
    /// The link's most recent tubelet.
    #[default]
    LastMember,
    /// The link's running per-frame averaged boxes.
    MeanBoxes,
}

/// Which passing candidate a link takes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateRule {
    #[default]
    HighestScore,
    HighestOverlap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkConfig {
    /// Clip length; also the termination horizon.
    pub k: usize,
    pub tau: f64,
    pub top_candidates: usize,
    pub min_score: f64,
    /// Minimum tube length in frames.
    pub min_length: usize,
    pub overlap: OverlapReference,
    pub rule: CandidateRule,
}

impl LinkConfig {
    pub fn new(k: usize) -> Self {
        LinkConfig {
            k,
            tau: DEFAULT_TAU,
            top_candidates: DEFAULT_TOP_CANDIDATES,
            min_score: DEFAULT_MIN_SCORE,
            min_length: k,
            overlap: OverlapReference::default(),
            rule: CandidateRule::default(),
        }
    }
}

fn candidate_order(a: &Tubelet, b: &Tubelet) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.class_id.cmp(&b.class_id))
        .then_with(|| {
            let ka = a.anchor.map(|p| (p.y, p.x));
            let kb = b.anchor.map(|p| (p.y, p.x));
            ka.cmp(&kb)
        })
}

/// Best `top` tubelets by score; ties by `(class_id, y, x)` of the anchor,
/// then input order.
pub fn select_candidates(mut tubelets: Vec<Tubelet>, top: usize) -> Vec<Tubelet> {
    tubelets.sort_by(candidate_order);
    tubelets.truncate(top);
    tubelets
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub id: usize,
    pub class_id: usize,
    pub members: Vec<Tubelet>,
    score_sum: f64,
    /// Start frame of the most recent member.
    pub last_extended: usize,
}

impl Link {
    fn new(id: usize, t: Tubelet) -> Self {
        Link {
            id,
            class_id: t.class_id,
            score_sum: t.score,
            last_extended: t.start_frame,
            members: vec![t],
        }
    }

    fn push(&mut self, t: Tubelet) {
        self.score_sum += t.score;
        self.last_extended = t.start_frame;
        self.members.push(t);
    }

    /// Mean member score.
    pub fn score(&self) -> f64 {
        self.score_sum / self.members.len() as f64
    }

    pub fn tail(&self) -> &Tubelet {
        self.members.last().expect("links are never empty")
    }

    pub fn start_frame(&self) -> usize {
        self.members[0].start_frame
    }

    pub fn end_frame(&self) -> usize {
        self.members.iter().map(Tubelet::end_frame).max().unwrap_or(0)
    }

    /// Coordinate-wise mean of the member boxes covering `frame`.
    pub fn mean_box(&self, frame: usize) -> Option<BBox> {
        let mut acc = [0.0f64; 4];
        let mut n = 0usize;
        for m in &self.members {
            if let Some(b) = m.box_at(frame) {
                acc[0] += b.x1;
                acc[1] += b.y1;
                acc[2] += b.x2;
                acc[3] += b.y2;
                n += 1;
            }
        }
        (n > 0).then(|| {
            let k = n as f64;
            BBox {
                x1: acc[0] / k,
                y1: acc[1] / k,
                x2: acc[2] / k,
                y2: acc[3] / k,
            }
        })
    }
}

/// Mean per-frame IoU between the link reference and the candidate over
/// their shared frames. With no shared frame, a candidate starting right
/// after the reference ends is compared box-to-box across the boundary;
/// otherwise the overlap is 0.
pub fn link_overlap(link: &Link, cand: &Tubelet, reference: OverlapReference) -> f64 {
    let (ref_start, ref_end) = match reference {
        OverlapReference::LastMember => (link.tail().start_frame, link.tail().end_frame()),
        OverlapReference::MeanBoxes => (link.start_frame(), link.end_frame()),
    };
    let ref_box = |f: usize| match reference {
        OverlapReference::LastMember => link.tail().box_at(f).copied(),
        OverlapReference::MeanBoxes => link.mean_box(f),
    };
    let start = ref_start.max(cand.start_frame);
    let end = ref_end.min(cand.end_frame());
    if start <= end {
        let mut sum = 0.0;
        for f in start..=end {
            if let (Some(a), Some(b)) = (ref_box(f), cand.box_at(f)) {
                sum += iou(&a, b);
            }
        }
        return sum / (end - start + 1) as f64;
    }
    if cand.start_frame == ref_end + 1 {
        if let (Some(a), Some(b)) = (ref_box(ref_end), cand.boxes.first()) {
            return iou(&a, b);
        }
    }
    0.0
}

#[derive(Debug, Clone)]
pub struct LinkState {
    cfg: LinkConfig,
    active: Vec<Link>,
    finished: Vec<Link>,
    cursor: Option<usize>,
    next_id: usize,
}

impl LinkState {
    pub fn new(cfg: LinkConfig) -> Result<Self> {
        if cfg.k == 0 {
            return Err(Error::Config("link horizon K must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&cfg.tau) {
            return Err(Error::Config(format!("tau {} outside [0, 1]", cfg.tau)));
        }
        Ok(LinkState {
            cfg,
            active: Vec::new(),
            finished: Vec::new(),
            cursor: None,
            next_id: 0,
        })
    }

    pub fn config(&self) -> &LinkConfig {
        &self.cfg
    }

    pub fn active(&self) -> &[Link] {
        &self.active
    }

    pub fn finished(&self) -> &[Link] {
        &self.finished
    }

    /// Last frame processed.
    pub fn cursor(&self) -> Option<usize> {
        self.cursor
    }

    /// Links the candidates starting at `frame`. Frames must strictly increase.
    pub fn step(&mut self, frame: usize, tubelets: Vec<Tubelet>) -> Result<()> {
        if let Some(last) = self.cursor {
            if frame <= last {
                return Err(Error::OutOfOrder { last, got: frame });
            }
        }
        if let Some(bad) = tubelets.iter().find(|t| t.start_frame != frame) {
            return Err(Error::InvalidTubelet(format!(
                "tubelet starting at frame {} passed for frame {frame}",
                bad.start_frame
            )));
        }
        if tubelets.iter().any(|t| t.boxes.is_empty() || !t.score.is_finite()) {
            return Err(Error::InvalidTubelet("empty or non-finite tubelet".into()));
        }
        self.cursor = Some(frame);

        let cands = select_candidates(tubelets, self.cfg.top_candidates);
        let mut taken = vec![false; cands.len()];

        self.active
            .sort_by(|a, b| b.score().total_cmp(&a.score()).then(a.id.cmp(&b.id)));
        for link in &mut self.active {
            let mut best: Option<(usize, f64)> = None;
            for (ci, cand) in cands.iter().enumerate() {
                if taken[ci] || cand.class_id != link.class_id {
                    continue;
                }
                let ov = link_overlap(link, cand, self.cfg.overlap);
                if ov <= self.cfg.tau {
                    continue;
                }
                let better = match (best, self.cfg.rule) {
                    (None, _) => true,
                    // candidates are already score-ranked: first passing wins
                    (Some(_), CandidateRule::HighestScore) => false,
                    (Some((_, bo)), CandidateRule::HighestOverlap) => ov > bo,
                };
                if better {
                    best = Some((ci, ov));
                }
            }
            if let Some((ci, _)) = best {
                taken[ci] = true;
                link.push(cands[ci].clone());
            }
        }

        for (ci, cand) in cands.into_iter().enumerate() {
            if !taken[ci] {
                self.active.push(Link::new(self.next_id, cand));
                self.next_id += 1;
            }
        }

        let k = self.cfg.k;
        let (stale, live): (Vec<Link>, Vec<Link>) = std::mem::take(&mut self.active)
            .into_iter()
            .partition(|l| frame - l.last_extended >= k);
        self.active = live;
        self.finished.extend(stale);
        Ok(())
    }

    /// Closes every link and builds the surviving tubes, in link creation order.
    pub fn finalize(mut self) -> Vec<Tube> {
        self.finished.append(&mut self.active);
        self.finished.sort_by_key(|l| l.id);
        self.finished
            .iter()
            .map(link_to_tube)
            .filter(|t| t.score >= self.cfg.min_score && t.len() >= self.cfg.min_length)
            .collect()
    }
}

/// Tube of a link: per-frame mean of covering member boxes, mean member score.
pub fn link_to_tube(link: &Link) -> Tube {
    let start = link.start_frame();
    let end = link.end_frame();
    let mut boxes = Vec::with_capacity(end - start + 1);
    let mut last = link.members[0].boxes[0];
    for f in start..=end {
        // members chain without gaps, the fallback only guards malformed input
        last = link.mean_box(f).unwrap_or(last);
        boxes.push(last);
    }
    Tube {
        class_id: link.class_id,
        score: link.score(),
        start_frame: start,
        end_frame: end,
        boxes,
    }
}

/// Decodes and links every stride-1 window of a video of `num_frames` frames.
pub fn link_offline(
    spec: &GridSpec,
    decode: &DecodeConfig,
    cfg: LinkConfig,
    num_frames: usize,
    mut maps_for: impl FnMut(usize) -> Result<WindowMaps>,
) -> Result<Vec<Tube>> {
    let mut state = LinkState::new(cfg)?;
    if num_frames >= spec.k() {
        for start in 0..=num_frames - spec.k() {
            let maps = maps_for(start)?;
            let tubelets = decode_tubelets(&maps, spec, decode.top_n, decode.mode, start)?;
            state.step(start, tubelets)?;
        }
    }
    Ok(state.finalize())
}

/// Produces window maps from the K most recent per-frame inputs.
pub trait WindowHead<F> {
    fn window_maps(&mut self, frames: &[F], window_start: usize) -> Result<WindowMaps>;
}

impl<F, T> WindowHead<F> for T
where
    T: FnMut(&[F], usize) -> Result<WindowMaps>,
{
    fn window_maps(&mut self, frames: &[F], window_start: usize) -> Result<WindowMaps> {
        self(frames, window_start)
    }
}

/// Result of feeding one frame to a [`StreamSession`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamStep {
    pub window_start: usize,
    pub tubelets: usize,
    pub active_links: usize,
}

/// Frame-at-a-time driver: keeps the previous K-1 frame inputs, and on each
/// new frame decodes and links the newest complete window.
pub struct StreamSession<F, H> {
    spec: GridSpec,
    decode: DecodeConfig,
    state: LinkState,
    buffer: VecDeque<F>,
    head: H,
    frames_seen: usize,
    peak_occupancy: usize,
}

impl<F, H: WindowHead<F>> StreamSession<F, H> {
    pub fn new(spec: GridSpec, decode: DecodeConfig, cfg: LinkConfig, head: H) -> Result<Self> {
        if cfg.k != spec.k() {
            return Err(Error::Config(format!(
                "link horizon {} differs from clip length {}",
                cfg.k,
                spec.k()
            )));
        }
        Ok(StreamSession {
            spec,
            decode,
            state: LinkState::new(cfg)?,
            buffer: VecDeque::with_capacity(spec.k()),
            head,
            frames_seen: 0,
            peak_occupancy: 0,
        })
    }

    /// Feeds the next frame. Returns `None` until K frames have arrived.
    pub fn push(&mut self, frame: F) -> Result<Option<StreamStep>> {
        let k = self.spec.k();
        self.buffer.push_back(frame);
        self.frames_seen += 1;
        self.peak_occupancy = self.peak_occupancy.max(self.buffer.len());
        let out = if self.buffer.len() == k {
            let start = self.frames_seen - k;
            let window = self.buffer.make_contiguous();
            let maps = self.head.window_maps(window, start)?;
            let tubelets = decode_tubelets(&maps, &self.spec, self.decode.top_n, self.decode.mode, start)?;
            let n = tubelets.len();
            self.state.step(start, tubelets)?;
            Some(StreamStep {
                window_start: start,
                tubelets: n,
                active_links: self.state.active().len(),
            })
        } else {
            None
        };
        while self.buffer.len() > k - 1 {
            self.buffer.pop_front();
        }
        Ok(out)
    }

    /// Stored frames between pushes (at most K-1).
    pub fn buffered(&self) -> usize {
        self.buffer.len()
    }

    /// Largest number of frames held at once, including the incoming one.
    pub fn peak_occupancy(&self) -> usize {
        self.peak_occupancy
    }

    pub fn state(&self) -> &LinkState {
        &self.state
    }

    pub fn finish(self) -> Vec<Tube> {
        self.state.finalize()
    }
}
