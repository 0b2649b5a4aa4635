//! Frame-level and video-level detection metrics.

mod ap;
mod errors;

pub use ap::{
    ap_all_point, average_precision, frame_gts, frame_map, greedy_match, video_gts, video_map,
    ApSummary, FrameDetection, FrameGt, MatchResult, VideoMapTable, VideoTube,
    DEFAULT_VIDEO_THRESHOLDS,
};
pub use errors::{error_analysis, ErrorBreakdown, ErrorCategory, ErrorConfig, ErrorDenominator};

use crate::types::{BBox, Tube};

/// Intersection over union; 0 when the union is empty.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Temporal IoU of the inclusive frame ranges times the mean spatial IoU over
/// the shared frames.
pub fn tube_iou(a: &Tube, b: &Tube) -> f64 {
    let start = a.start_frame.max(b.start_frame);
    let end = a.end_frame.min(b.end_frame);
    if start > end {
        return 0.0;
    }
    let inter = (end - start + 1) as f64;
    let union = (a.end_frame.max(b.end_frame) - a.start_frame.min(b.start_frame) + 1) as f64;
    let mut spatial = 0.0;
    for f in start..=end {
        let (Some(ba), Some(bb)) = (a.box_at(f), b.box_at(f)) else {
            continue;
        };
        spatial += iou(ba, bb);
    }
    (inter / union) * (spatial / inter)
}
