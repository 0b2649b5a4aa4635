use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{iou, tube_iou};
use crate::io::VideoAnnotation;
use crate::types::{BBox, Tube};

/// Thresholds reported individually by [`video_map`]; the 0.5:0.95 average is
/// always added.
pub const DEFAULT_VIDEO_THRESHOLDS: [f64; 3] = [0.2, 0.5, 0.75];

/// Outcome of greedy matching, indexed by rank.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// Detection indices in rank order (score descending, input order on ties).
    pub ranking: Vec<usize>,
    pub is_tp: Vec<bool>,
    pub matched_gt: Vec<Option<usize>>,
    pub num_gt: usize,
}

/// Ranks detections by score and lets each claim the best still-unmatched
/// ground truth whose similarity is strictly above `threshold`.
///
/// `candidates(det)` lists `(gt index, similarity)` pairs the detection may
/// match; pairs of the wrong class or frame must simply be left out. Equal
/// similarities resolve to the lower ground-truth index.
pub fn greedy_match(
    scores: &[f64],
    num_gt: usize,
    mut candidates: impl FnMut(usize) -> Vec<(usize, f64)>,
    threshold: f64,
) -> MatchResult {
    let mut ranking: Vec<usize> = (0..scores.len()).collect();
    ranking.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut taken = vec![false; num_gt];
    let mut is_tp = Vec::with_capacity(scores.len());
    let mut matched_gt = Vec::with_capacity(scores.len());
    for &d in &ranking {
        let mut best: Option<(usize, f64)> = None;
        for (g, sim) in candidates(d) {
            if taken[g] || sim <= threshold {
                continue;
            }
            let better = match best {
                None => true,
                Some((bg, bs)) => sim > bs || (sim == bs && g < bg),
            };
            if better {
                best = Some((g, sim));
            }
        }
        match best {
            Some((g, _)) => {
                taken[g] = true;
                is_tp.push(true);
                matched_gt.push(Some(g));
            }
            None => {
                is_tp.push(false);
                matched_gt.push(None);
            }
        }
    }
    MatchResult {
        ranking,
        is_tp,
        matched_gt,
        num_gt,
    }
}

/// Area under the all-point interpolated precision/recall curve of a ranked
/// TP/FP sequence. `None` when there is no ground truth.
pub fn ap_all_point(is_tp: &[bool], num_gt: usize) -> Option<f64> {
    if num_gt == 0 {
        return None;
    }
    let mut tp = 0usize;
    let mut precision = Vec::with_capacity(is_tp.len());
    let mut recall = Vec::with_capacity(is_tp.len());
    for (i, &hit) in is_tp.iter().enumerate() {
        tp += hit as usize;
        precision.push(tp as f64 / (i + 1) as f64);
        recall.push(tp as f64 / num_gt as f64);
    }
    // Precision envelope, right to left.
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (p, r) in precision.iter().zip(&recall) {
        if *r > prev_recall {
            ap += (r - prev_recall) * p;
            prev_recall = *r;
        }
    }
    Some(ap)
}

/// Greedy matching followed by all-point AP.
pub fn average_precision(
    scores: &[f64],
    num_gt: usize,
    candidates: impl FnMut(usize) -> Vec<(usize, f64)>,
    threshold: f64,
) -> Option<f64> {
    let m = greedy_match(scores, num_gt, candidates, threshold);
    ap_all_point(&m.is_tp, num_gt)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameDetection {
    pub video_id: String,
    pub frame: usize,
    pub class_id: usize,
    pub score: f64,
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameGt {
    pub video_id: String,
    pub frame: usize,
    pub class_id: usize,
    pub bbox: BBox,
    /// Index of the instance within its video.
    pub instance: usize,
}

/// Every annotated box as a frame-level ground truth.
pub fn frame_gts(videos: &[VideoAnnotation]) -> Vec<FrameGt> {
    let mut out = Vec::new();
    for v in videos {
        for (i, inst) in v.instances.iter().enumerate() {
            for (j, b) in inst.boxes.iter().enumerate() {
                out.push(FrameGt {
                    video_id: v.video_id.clone(),
                    frame: inst.start_frame + j,
                    class_id: inst.class_id,
                    bbox: *b,
                    instance: i,
                });
            }
        }
    }
    out
}

/// Per-class AP and their mean over classes that have ground truth. `map` is
/// 0 when no class has any.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApSummary {
    pub threshold: f64,
    pub per_class: Vec<Option<f64>>,
    pub map: f64,
}

fn summarize(threshold: f64, per_class: Vec<Option<f64>>) -> ApSummary {
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    let map = if present.is_empty() {
        0.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    };
    ApSummary {
        threshold,
        per_class,
        map,
    }
}

/// Frame-mAP: boxes pooled over all frames and videos, matched per class on
/// the same `(video, frame)`.
pub fn frame_map(dets: &[FrameDetection], gts: &[FrameGt], classes: usize, iou_threshold: f64) -> ApSummary {
    let per_class = (0..classes)
        .map(|c| {
            let cls_gts: Vec<&FrameGt> = gts.iter().filter(|g| g.class_id == c).collect();
            let mut by_frame: HashMap<(&str, usize), Vec<usize>> = HashMap::new();
            for (i, g) in cls_gts.iter().enumerate() {
                by_frame.entry((g.video_id.as_str(), g.frame)).or_default().push(i);
            }
            let cls_dets: Vec<&FrameDetection> = dets.iter().filter(|d| d.class_id == c).collect();
            let scores: Vec<f64> = cls_dets.iter().map(|d| d.score).collect();
            average_precision(
                &scores,
                cls_gts.len(),
                |d| {
                    let det = cls_dets[d];
                    by_frame
                        .get(&(det.video_id.as_str(), det.frame))
                        .map(|ids| ids.iter().map(|&g| (g, iou(&det.bbox, &cls_gts[g].bbox))).collect())
                        .unwrap_or_default()
                },
                iou_threshold,
            )
        })
        .collect();
    summarize(iou_threshold, per_class)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoTube {
    pub video_id: String,
    pub tube: Tube,
}

/// Instances as ground-truth tubes.
pub fn video_gts(videos: &[VideoAnnotation]) -> Vec<VideoTube> {
    videos
        .iter()
        .flat_map(|v| {
            v.instances.iter().map(|inst| VideoTube {
                video_id: v.video_id.clone(),
                tube: Tube::from_instance(inst),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoMapTable {
    pub rows: Vec<ApSummary>,
    /// Mean of the mAPs at 0.5, 0.55, ..., 0.95.
    pub map_50_95: f64,
}

impl VideoMapTable {
    pub fn map_at(&self, threshold: f64) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| (r.threshold - threshold).abs() < 1e-9)
            .map(|r| r.map)
    }
}

/// Video-mAP at each threshold using [`tube_iou`], plus the 0.5:0.95 average.
/// Scores, GT count and per-detection similarities for one class.
type ClassCase = (Vec<f64>, usize, Vec<Vec<(usize, f64)>>);

pub fn video_map(dets: &[VideoTube], gts: &[VideoTube], classes: usize, thresholds: &[f64]) -> VideoMapTable {
    // Similarities are threshold independent: compute once per class.
    let per_class_sims: Vec<ClassCase> = (0..classes)
        .map(|c| {
            let cls_gts: Vec<&VideoTube> = gts.iter().filter(|g| g.tube.class_id == c).collect();
            let cls_dets: Vec<&VideoTube> = dets.iter().filter(|d| d.tube.class_id == c).collect();
            let scores = cls_dets.iter().map(|d| d.tube.score).collect();
            let sims = cls_dets
                .iter()
                .map(|d| {
                    cls_gts
                        .iter()
                        .enumerate()
                        .filter(|(_, g)| g.video_id == d.video_id)
                        .map(|(i, g)| (i, tube_iou(&d.tube, &g.tube)))
                        .collect()
                })
                .collect();
            (scores, cls_gts.len(), sims)
        })
        .collect();
    let at = |thr: f64| {
        let per_class = per_class_sims
            .iter()
            .map(|(scores, num_gt, sims)| average_precision(scores, *num_gt, |d| sims[d].clone(), thr))
            .collect();
        summarize(thr, per_class)
    };
    let rows = thresholds.iter().map(|&t| at(t)).collect();
    let map_50_95 = (0..10).map(|i| at(0.5 + 0.05 * i as f64).map).sum::<f64>() / 10.0;
    VideoMapTable { rows, map_50_95 }
}
