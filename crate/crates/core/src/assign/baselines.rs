//! Reference assigners the multi-clue selector is compared against.

use crate::error::{Error, Result};
use crate::geometry::{self, Point};
use crate::scene::Scene;

use super::{mean_std, nearest_centers, resolve_duplicates, Assignment, Verdict};

fn rebuild_lists(per_pred: &[Verdict], num_gt: usize) -> Vec<Vec<usize>> {
    let mut lists = vec![Vec::new(); num_gt];
    for (p, v) in per_pred.iter().enumerate() {
        if let Some(g) = v.positive_gt() {
            lists[g].push(p);
        }
    }
    lists
}

/// Classic max-IoU matching with a positive threshold, a negative threshold
/// and an ignored band in between. Each ground truth also claims its single
/// best-overlapping prediction when that overlap is nonzero; a prediction
/// claimed by several ground truths goes to the lowest index.
pub fn assign_iou_max(scene: &Scene, pos_thresh: f64, neg_thresh: f64) -> Result<Assignment> {
    if !(0.0 <= neg_thresh && neg_thresh <= pos_thresh && pos_thresh <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "max-IoU thresholds need 0 <= neg ({neg_thresh}) <= pos ({pos_thresh}) <= 1"
        )));
    }
    let (gts, preds) = (scene.gt_boxes(), scene.pred_boxes());
    if gts.is_empty() {
        return Ok(Assignment::all_negative(preds.len()));
    }

    let mut per_pred = Vec::with_capacity(preds.len());
    // best (iou, pred) for every GT
    let mut gt_best = vec![(0.0f64, usize::MAX); gts.len()];
    for (p, pb) in preds.iter().enumerate() {
        let mut best = (0.0f64, 0usize);
        for (g, gb) in gts.iter().enumerate() {
            let v = geometry::iou(pb, gb);
            if v > best.0 {
                best = (v, g);
            }
            if v > gt_best[g].0 {
                gt_best[g] = (v, p);
            }
        }
        per_pred.push(if best.0 >= pos_thresh {
            Verdict::Positive {
                gt: best.1,
                confidence: best.0,
            }
        } else if best.0 < neg_thresh {
            Verdict::Negative
        } else {
            Verdict::Ignored
        });
    }
    for (g, &(v, p)) in gt_best.iter().enumerate().rev() {
        if v > 0.0 {
            per_pred[p] = Verdict::Positive { gt: g, confidence: v };
        }
    }
    Ok(Assignment {
        per_gt_positives: rebuild_lists(&per_pred, gts.len()),
        per_pred,
        thresholds: vec![pos_thresh; gts.len()],
    })
}

/// Each prediction goes to the ground truth with the nearest center, and is
/// positive when that distance is at most `radius_factor` times the ground
/// truth's absolute size.
pub fn assign_center_distance(scene: &Scene, radius_factor: f64) -> Result<Assignment> {
    if !(radius_factor > 0.0 && radius_factor.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "radius_factor must be positive, got {radius_factor}"
        )));
    }
    let (gts, preds) = (scene.gt_boxes(), scene.pred_boxes());
    if gts.is_empty() {
        return Ok(Assignment::all_negative(preds.len()));
    }
    let gt_centers: Vec<Point> = gts.iter().map(geometry::center).collect();
    let radii: Vec<f64> = gts.iter().map(|g| radius_factor * geometry::absolute_size(g)).collect();

    let per_pred: Vec<Verdict> = preds
        .iter()
        .map(|pb| {
            let c = geometry::center(pb);
            let (g, d) = gt_centers
                .iter()
                .map(|&gc| geometry::point_distance(c, gc))
                .enumerate()
                .fold((0, f64::INFINITY), |best, (g, d)| if d < best.1 { (g, d) } else { best });
            if d <= radii[g] {
                Verdict::Positive {
                    gt: g,
                    confidence: geometry::iou(pb, &gts[g]),
                }
            } else {
                Verdict::Negative
            }
        })
        .collect();
    Ok(Assignment {
        per_gt_positives: rebuild_lists(&per_pred, gts.len()),
        per_pred,
        thresholds: radii,
    })
}

/// Adaptive statistics baseline: per ground truth, threshold the IoUs of the
/// `k` nearest-center candidates at their mean plus standard deviation.
pub fn assign_atss(scene: &Scene, k: usize) -> Result<Assignment> {
    if k == 0 {
        return Err(Error::InvalidConfig("ATSS k must be at least 1".into()));
    }
    let (gts, preds) = (scene.gt_boxes(), scene.pred_boxes());
    if gts.is_empty() {
        return Ok(Assignment::all_negative(preds.len()));
    }
    let centers: Vec<Point> = preds.iter().map(geometry::center).collect();
    let mut provisional = Vec::with_capacity(gts.len());
    let mut thresholds = Vec::with_capacity(gts.len());
    for gt in gts {
        let cand = nearest_centers(&centers, geometry::center(gt), k);
        if cand.is_empty() {
            provisional.push(Vec::new());
            thresholds.push(1.0);
            continue;
        }
        let ious: Vec<f64> = cand.iter().map(|&p| geometry::iou(&preds[p], gt)).collect();
        let (mean, std) = mean_std(&ious);
        let t = mean + std;
        provisional.push(
            cand.iter()
                .zip(&ious)
                .filter(|&(&p, &v)| v >= t && geometry::contains_center(gt, &preds[p]))
                .map(|(&p, &v)| (p, v))
                .collect(),
        );
        thresholds.push(t);
    }
    Ok(resolve_duplicates(preds.len(), &provisional, thresholds))
}
