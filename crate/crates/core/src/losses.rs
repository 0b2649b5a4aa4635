//! Branch losses and their analytic gradients with respect to the predicted maps.
//!
//! Gradients are returned as maps with the prediction's dims. The L1 terms
//! use a subgradient of 0 at exactly zero residual.

use serde::{Deserialize, Serialize};

use crate::decoder::WindowMaps;
use crate::encoder::{ClipTargets, MovementTarget, SizeTarget};
use crate::error::{Error, Result};
use crate::map::DenseMap;

/// Predictions are clamped into `[PRED_EPS, 1 - PRED_EPS]` before taking logs.
pub const PRED_EPS: f32 = 1e-4;

pub const DEFAULT_ALPHA: f64 = 2.0;
pub const DEFAULT_BETA: f64 = 4.0;
pub const DEFAULT_MOVEMENT_WEIGHT: f64 = 1.0;
pub const DEFAULT_BOX_WEIGHT: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Movement weight `a`.
    pub movement: f64,
    /// Box weight `b`.
    pub boxes: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            movement: DEFAULT_MOVEMENT_WEIGHT,
            boxes: DEFAULT_BOX_WEIGHT,
        }
    }
}

/// Divisor of the box loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoxNormalization {
    /// `1 / n`, summing over the K frames.
    #[default]
    Instances,
    /// `1 / (n K)`.
    InstanceFrames,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l_center: f64,
    pub l_movement: f64,
    pub l_box: f64,
    pub l_total: f64,
    pub n: usize,
}

/// A scalar loss and its gradient.
#[derive(Debug, Clone)]
pub struct LossGrad<G> {
    pub loss: f64,
    pub grad: G,
}

#[inline]
fn clamp_pred(p: f32) -> f32 {
    p.clamp(PRED_EPS, 1.0 - PRED_EPS)
}

/// Penalty-reduced focal loss over every cell and class of the center heatmap.
///
/// Cells with ground truth exactly 1 contribute `(1-p)^alpha ln p`; all others
/// contribute `(1-y)^beta p^alpha ln(1-p)`. The sum is negated and divided by
/// `n`. With `n = 0` the heatmap must hold no positives and the divisor is 1.
/// Cells whose prediction was clamped receive zero gradient.
pub fn center_focal_loss(
    pred: &DenseMap,
    gt: &DenseMap,
    alpha: f64,
    beta: f64,
    n: usize,
) -> Result<LossGrad<DenseMap>> {
    if !pred.same_dims(gt) {
        return Err(Error::DimMismatch(format!(
            "prediction {:?} vs ground truth {:?}",
            pred.dims(),
            gt.dims()
        )));
    }
    let has_pos = gt.data().contains(&1.0);
    let divisor = match n {
        0 if has_pos => return Err(Error::ZeroInstances),
        0 => 1.0,
        n => n as f64,
    };
    let (h, w, c) = pred.dims();
    let mut grad = DenseMap::zeros(h, w, c);
    let mut sum = 0.0f64;
    for (i, (&raw, &y)) in pred.data().iter().zip(gt.data()).enumerate() {
        let clamped = clamp_pred(raw);
        let p = clamped as f64;
        let (term, dterm) = if y == 1.0 {
            let q = 1.0 - p;
            let lp = p.ln();
            (
                q.powf(alpha) * lp,
                -alpha * q.powf(alpha - 1.0) * lp + q.powf(alpha) / p,
            )
        } else {
            let wgt = (1.0 - y as f64).powf(beta);
            let l1p = (1.0 - p).ln();
            (
                wgt * p.powf(alpha) * l1p,
                wgt * (alpha * p.powf(alpha - 1.0) * l1p - p.powf(alpha) / (1.0 - p)),
            )
        };
        sum += term;
        if clamped == raw {
            grad.data_mut()[i] = (-dterm / divisor) as f32;
        }
    }
    Ok(LossGrad {
        loss: -sum / divisor,
        grad,
    })
}

#[inline]
fn l1_sign(d: f64) -> f64 {
    if d > 0.0 {
        1.0
    } else if d < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// L1 movement loss read only at each instance's key-frame cell, averaged
/// over instances. No targets gives zero loss and gradient.
pub fn movement_loss(pred: &DenseMap, targets: &[MovementTarget]) -> Result<LossGrad<DenseMap>> {
    let (h, w, c) = pred.dims();
    let mut grad = DenseMap::zeros(h, w, c);
    if targets.is_empty() {
        return Ok(LossGrad { loss: 0.0, grad });
    }
    let n = targets.len() as f64;
    let mut sum = 0.0f64;
    for t in targets {
        if t.movement.len() != c {
            return Err(Error::DimMismatch(format!(
                "movement map has {c} channels, target has {}",
                t.movement.len()
            )));
        }
        if t.cell.x >= w || t.cell.y >= h {
            return Err(Error::OffGrid {
                x: t.cell.x as i64,
                y: t.cell.y as i64,
                width: w,
                height: h,
            });
        }
        for (ch, &target) in t.movement.iter().enumerate() {
            let i = pred.index(t.cell.x, t.cell.y, ch);
            let d = pred.data()[i] as f64 - target;
            sum += d.abs();
            grad.data_mut()[i] += (l1_sign(d) / n) as f32;
        }
    }
    Ok(LossGrad {
        loss: sum / n,
        grad,
    })
}

/// L1 size loss at each instance's per-frame center `p^j` on the frame's own
/// size map, summed over frames and divided per `norm`.
pub fn box_loss(
    pred: &[DenseMap],
    targets: &[SizeTarget],
    norm: BoxNormalization,
) -> Result<LossGrad<Vec<DenseMap>>> {
    let mut grad: Vec<DenseMap> = pred
        .iter()
        .map(|m| {
            let (h, w, c) = m.dims();
            DenseMap::zeros(h, w, c)
        })
        .collect();
    if let Some(bad) = pred.iter().find(|m| m.channels() != 2) {
        return Err(Error::DimMismatch(format!(
            "size map must have 2 channels, found {}",
            bad.channels()
        )));
    }
    if targets.is_empty() {
        return Ok(LossGrad { loss: 0.0, grad });
    }
    let k = pred.len();
    let divisor = match norm {
        BoxNormalization::Instances => targets.len() as f64,
        BoxNormalization::InstanceFrames => (targets.len() * k) as f64,
    };
    let mut sum = 0.0f64;
    for t in targets {
        if t.cells.len() != k || t.sizes.len() != k {
            return Err(Error::DimMismatch(format!(
                "{k} size maps but target spans {} frames",
                t.cells.len()
            )));
        }
        for (j, (cell, size)) in t.cells.iter().zip(&t.sizes).enumerate() {
            let map = &pred[j];
            if cell.x >= map.width() || cell.y >= map.height() {
                return Err(Error::OffGrid {
                    x: cell.x as i64,
                    y: cell.y as i64,
                    width: map.width(),
                    height: map.height(),
                });
            }
            for (ch, &target) in size.iter().enumerate() {
                let i = map.index(cell.x, cell.y, ch);
                let d = map.data()[i] as f64 - target;
                sum += d.abs();
                grad[j].data_mut()[i] += (l1_sign(d) / divisor) as f32;
            }
        }
    }
    Ok(LossGrad {
        loss: sum / divisor,
        grad,
    })
}

/// Weighted objective `center + a * movement + b * box`.
pub fn total_loss(l_center: f64, l_movement: f64, l_box: f64, weights: LossWeights, n: usize) -> LossReport {
    LossReport {
        l_center,
        l_movement,
        l_box,
        l_total: l_center + weights.movement * l_movement + weights.boxes * l_box,
        n,
    }
}

/// Hyper-parameters of the full objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParams {
    pub alpha: f64,
    pub beta: f64,
    pub weights: LossWeights,
    #[serde(default)]
    pub box_norm: BoxNormalization,
}

impl Default for LossParams {
    fn default() -> Self {
        LossParams {
            alpha: DEFAULT_ALPHA,
            beta: DEFAULT_BETA,
            weights: LossWeights::default(),
            box_norm: BoxNormalization::default(),
        }
    }
}

/// Objective for one clip with gradients of the weighted total.
#[derive(Debug, Clone)]
pub struct ClipLoss {
    pub report: LossReport,
    pub heatmap_grad: DenseMap,
    pub movement_grad: DenseMap,
    pub size_grads: Vec<DenseMap>,
}

pub fn clip_loss(pred: &WindowMaps, targets: &ClipTargets, params: &LossParams) -> Result<ClipLoss> {
    let n = targets.n();
    let c = center_focal_loss(&pred.heatmap, &targets.center_heatmap, params.alpha, params.beta, n)?;
    let mut m = movement_loss(&pred.movement, &targets.movement_targets)?;
    let mut b = box_loss(&pred.sizes, &targets.size_targets, params.box_norm)?;
    let (a, bw) = (params.weights.movement as f32, params.weights.boxes as f32);
    m.grad.data_mut().iter_mut().for_each(|g| *g *= a);
    for g in &mut b.grad {
        g.data_mut().iter_mut().for_each(|v| *v *= bw);
    }
    Ok(ClipLoss {
        report: total_loss(c.loss, m.loss, b.loss, params.weights, n),
        heatmap_grad: c.grad,
        movement_grad: m.grad,
        size_grads: b.grad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::GridPoint;

    fn single(v: f32) -> DenseMap {
        DenseMap::from_vec(1, 1, 1, vec![v]).unwrap()
    }

    #[test]
    fn focal_single_cell_examples() {
        let expect = -(0.25f64) * 0.5f64.ln();
        let pos = center_focal_loss(&single(0.5), &single(1.0), 2.0, 4.0, 1).unwrap();
        assert!((pos.loss - expect).abs() < 1e-12);
        assert!((pos.loss - 0.17329).abs() < 1e-5);
        let neg = center_focal_loss(&single(0.5), &single(0.0), 2.0, 4.0, 1).unwrap();
        assert!((neg.loss - expect).abs() < 1e-12);
    }

    #[test]
    fn focal_perfect_prediction_vanishes() {
        let mut last = f64::INFINITY;
        for eps in [1e-1f32, 1e-2, 1e-3] {
            let l = center_focal_loss(&single(1.0 - eps), &single(1.0), 2.0, 4.0, 1).unwrap().loss;
            assert!(l >= 0.0 && l < last);
            last = l;
        }
        assert!(last < 1e-5);
    }

    #[test]
    fn focal_errors() {
        let a = DenseMap::zeros(2, 2, 1);
        let b = DenseMap::zeros(2, 1, 1);
        assert!(matches!(center_focal_loss(&a, &b, 2.0, 4.0, 1), Err(Error::DimMismatch(_))));
        assert!(matches!(
            center_focal_loss(&single(0.5), &single(1.0), 2.0, 4.0, 0),
            Err(Error::ZeroInstances)
        ));
        // no positives: divisor 1
        let l = center_focal_loss(&single(0.5), &single(0.0), 2.0, 4.0, 0).unwrap().loss;
        assert!((l - 0.17329).abs() < 1e-5);
    }

    #[test]
    fn focal_clamped_cells_have_no_gradient() {
        let g = center_focal_loss(&single(0.0), &single(0.0), 2.0, 4.0, 1).unwrap();
        assert_eq!(g.grad.data()[0], 0.0);
        assert!(g.loss.is_finite());
    }

    fn mt(x: usize, y: usize, m: &[f64]) -> MovementTarget {
        MovementTarget {
            cell: GridPoint::new(x, y),
            movement: m.to_vec(),
        }
    }

    #[test]
    fn movement_examples() {
        let mut pred = DenseMap::zeros(3, 3, 4);
        for (c, v) in [1.0, 1.0, 2.0, 2.0].iter().enumerate() {
            pred.set(1, 2, c, *v);
        }
        let out = movement_loss(&pred, &[mt(1, 2, &[0.0, 1.0, 2.0, 4.0])]).unwrap();
        assert_eq!(out.loss, 3.0);
        assert_eq!(out.grad.cell(1, 2), &[1.0, 0.0, 0.0, -1.0]);
        assert_eq!(out.grad.data().iter().filter(|&&g| g != 0.0).count(), 2);

        let exact = movement_loss(&pred, &[mt(1, 2, &[1.0, 1.0, 2.0, 2.0])]).unwrap();
        assert_eq!(exact.loss, 0.0);
        assert!(movement_loss(&pred, &[mt(1, 2, &[0.0; 6])]).is_err());
        assert!(movement_loss(&pred, &[mt(3, 0, &[0.0; 4])]).is_err());
    }

    #[test]
    fn movement_gradient_scaled_by_n() {
        let pred = DenseMap::filled(4, 4, 2, 1.0);
        let out = movement_loss(&pred, &[mt(0, 0, &[0.0, 2.0]), mt(3, 3, &[0.0, 0.0])]).unwrap();
        assert_eq!(out.loss, (2.0 + 2.0) / 2.0);
        assert_eq!(out.grad.cell(0, 0), &[0.5, -0.5]);
        assert_eq!(out.grad.cell(3, 3), &[0.5, 0.5]);
    }

    fn st(cells: &[(usize, usize)], sizes: &[[f64; 2]]) -> SizeTarget {
        SizeTarget {
            cells: cells.iter().map(|&(x, y)| GridPoint::new(x, y)).collect(),
            sizes: sizes.to_vec(),
        }
    }

    #[test]
    fn box_examples() {
        let mut f0 = DenseMap::zeros(4, 4, 2);
        let mut f1 = DenseMap::zeros(4, 4, 2);
        f0.set(1, 1, 0, 3.0);
        f0.set(1, 1, 1, 2.0);
        f1.set(2, 1, 0, 4.5);
        f1.set(2, 1, 1, 1.5);
        let t = st(&[(1, 1), (2, 1)], &[[2.0, 2.0], [4.0, 2.0]]);
        let out = box_loss(&[f0.clone(), f1.clone()], std::slice::from_ref(&t), BoxNormalization::Instances).unwrap();
        assert_eq!(out.loss, 2.0);
        let per_frame = box_loss(&[f0.clone(), f1.clone()], std::slice::from_ref(&t), BoxNormalization::InstanceFrames).unwrap();
        assert_eq!(per_frame.loss, 1.0);

        let dup = box_loss(&[f0.clone(), f1.clone()], &[t.clone(), t.clone()], BoxNormalization::Instances).unwrap();
        assert_eq!(dup.loss, out.loss);

        let exact = st(&[(1, 1), (2, 1)], &[[3.0, 2.0], [4.5, 1.5]]);
        assert_eq!(box_loss(&[f0.clone(), f1.clone()], &[exact], BoxNormalization::Instances).unwrap().loss, 0.0);

        let off = st(&[(4, 1), (2, 1)], &[[2.0, 2.0], [4.0, 2.0]]);
        assert!(matches!(
            box_loss(&[f0, f1], &[off], BoxNormalization::Instances),
            Err(Error::OffGrid { .. })
        ));
    }

    #[test]
    fn total_examples() {
        let w = LossWeights::default();
        assert!((total_loss(1.0, 2.0, 3.0, w, 1).l_total - 3.3).abs() < 1e-15);
        assert_eq!(total_loss(0.0, 0.0, 0.0, w, 0).l_total, 0.0);
        let zero = LossWeights { movement: 0.0, boxes: 0.0 };
        assert_eq!(total_loss(0.7, 2.0, 3.0, zero, 1).l_total, 0.7);
    }
}
