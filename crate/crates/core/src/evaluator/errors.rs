//! Five-way decomposition of frame-level detection errors.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::ap::FrameDetection;
use super::iou;
use crate::io::VideoAnnotation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCategory {
    /// Class present in the video but no instance of it spans this frame.
    Time,
    /// Matches an unclaimed same-class box with IoU above threshold.
    Correct,
    /// IoU above threshold with a box of another class.
    Classification,
    /// Same class present in the frame but no qualifying match.
    Localization,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorDenominator {
    /// Detection categories over scored detections; misses over GT boxes.
    #[default]
    Detections,
    /// Everything over GT boxes.
    GroundTruth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorConfig {
    pub iou_threshold: f64,
    /// Detections scoring below this are ignored.
    pub score_threshold: f64,
    /// Order in which categories are tested; anything left over is "other".
    pub precedence: Vec<ErrorCategory>,
    pub denominator: ErrorDenominator,
}

impl Default for ErrorConfig {
    fn default() -> Self {
        ErrorConfig {
            iou_threshold: 0.5,
            score_threshold: 0.0,
            precedence: vec![
                ErrorCategory::Time,
                ErrorCategory::Correct,
                ErrorCategory::Classification,
                ErrorCategory::Localization,
            ],
            denominator: ErrorDenominator::Detections,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ErrorBreakdown {
    pub correct: f64,
    pub e_c: f64,
    pub e_l: f64,
    pub e_t: f64,
    pub e_m: f64,
    pub e_o: f64,
    pub num_detections: usize,
    pub num_gt: usize,
}

struct FrameBox {
    class_id: usize,
    bbox: crate::types::BBox,
    slot: usize,
}

/// Classifies every detection at or above the score threshold, in score
/// order, and counts unmatched ground-truth boxes as misses.
pub fn error_analysis(dets: &[FrameDetection], videos: &[VideoAnnotation], cfg: &ErrorConfig) -> ErrorBreakdown {
    let mut boxes: HashMap<(&str, usize), Vec<FrameBox>> = HashMap::new();
    let mut video_classes: HashMap<&str, Vec<usize>> = HashMap::new();
    let mut num_gt = 0usize;
    for v in videos {
        let classes = video_classes.entry(v.video_id.as_str()).or_default();
        for inst in &v.instances {
            if !classes.contains(&inst.class_id) {
                classes.push(inst.class_id);
            }
            for (j, b) in inst.boxes.iter().enumerate() {
                boxes
                    .entry((v.video_id.as_str(), inst.start_frame + j))
                    .or_default()
                    .push(FrameBox {
                        class_id: inst.class_id,
                        bbox: *b,
                        slot: num_gt,
                    });
                num_gt += 1;
            }
        }
    }

    let mut order: Vec<usize> = (0..dets.len())
        .filter(|&i| dets[i].score >= cfg.score_threshold)
        .collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score).then(a.cmp(&b)));

    let mut matched = vec![false; num_gt];
    let (mut correct, mut e_c, mut e_l, mut e_t, mut e_o) = (0usize, 0usize, 0usize, 0usize, 0usize);
    let empty = Vec::new();
    for &i in &order {
        let d = &dets[i];
        let here = boxes.get(&(d.video_id.as_str(), d.frame)).unwrap_or(&empty);
        let class_in_video = video_classes
            .get(d.video_id.as_str())
            .is_some_and(|c| c.contains(&d.class_id));
        let same_class_here = here.iter().any(|g| g.class_id == d.class_id);

        let mut assigned = None;
        for cat in &cfg.precedence {
            let hit = match cat {
                ErrorCategory::Time => class_in_video && !same_class_here,
                ErrorCategory::Correct => {
                    let best = here
                        .iter()
                        .filter(|g| g.class_id == d.class_id && !matched[g.slot])
                        .map(|g| (g.slot, iou(&d.bbox, &g.bbox)))
                        .filter(|&(_, v)| v > cfg.iou_threshold)
                        .fold(None, |acc: Option<(usize, f64)>, (s, v)| match acc {
                            Some((_, bv)) if bv >= v => acc,
                            _ => Some((s, v)),
                        });
                    if let Some((slot, _)) = best {
                        matched[slot] = true;
                    }
                    best.is_some()
                }
                ErrorCategory::Classification => here
                    .iter()
                    .any(|g| g.class_id != d.class_id && iou(&d.bbox, &g.bbox) > cfg.iou_threshold),
                ErrorCategory::Localization => same_class_here,
            };
            if hit {
                assigned = Some(*cat);
                break;
            }
        }
        match assigned {
            Some(ErrorCategory::Time) => e_t += 1,
            Some(ErrorCategory::Correct) => correct += 1,
            Some(ErrorCategory::Classification) => e_c += 1,
            Some(ErrorCategory::Localization) => e_l += 1,
            None => e_o += 1,
        }
    }

    let missed = matched.iter().filter(|&&m| !m).count();
    let det_denom = match cfg.denominator {
        ErrorDenominator::Detections => order.len(),
        ErrorDenominator::GroundTruth => num_gt,
    };
    let frac = |n: usize, d: usize| if d == 0 { 0.0 } else { n as f64 / d as f64 };
    ErrorBreakdown {
        correct: frac(correct, det_denom),
        e_c: frac(e_c, det_denom),
        e_l: frac(e_l, det_denom),
        e_t: frac(e_t, det_denom),
        e_m: frac(missed, num_gt),
        e_o: frac(e_o, det_denom),
        num_detections: order.len(),
        num_gt,
    }
}
