//! Multi-clue sample selection.
//!
//! For each ground truth: take the `k` predictions with the nearest centers,
//! blend category confidence and IoU into one score, derive a size-aware
//! threshold from the score distribution, and keep candidates that clear it
//! and whose center falls inside the ground truth.

use crate::error::{Error, Result};
use crate::geometry::{self, Point};
use crate::scene::Scene;

use super::{mean_std, nearest_centers, resolve_duplicates, AssignConfig, Assignment, BetaMode};

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Category confidence of each candidate for the class of ground truth `g`.
pub fn category_confidence(
    scene: &Scene,
    cand: &[usize],
    g: usize,
    scores_are_probabilities: bool,
) -> Result<Vec<f64>> {
    let label = *scene
        .gt_labels()
        .get(g)
        .ok_or_else(|| Error::InvalidInput(format!("ground truth index {g} out of range")))?;
    cand.iter()
        .map(|&p| {
            if p >= scene.num_preds() {
                return Err(Error::InvalidInput(format!("prediction index {p} out of range")));
            }
            let s = scene.score(p, label);
            if scores_are_probabilities {
                if (0.0..=1.0).contains(&s) {
                    Ok(s)
                } else {
                    Err(Error::InvalidInput(format!("prediction {p} has probability {s} outside [0, 1]")))
                }
            } else {
                Ok(sigmoid(s))
            }
        })
        .collect()
}

pub fn multi_clue_confidence(d_c: &[f64], d_iou: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if d_c.len() != d_iou.len() {
        return Err(Error::Shape(format!(
            "category confidence has {} entries, IoU has {}",
            d_c.len(),
            d_iou.len()
        )));
    }
    Ok(d_c
        .iter()
        .zip(d_iou)
        .map(|(c, u)| alpha * c + (1.0 - alpha) * u)
        .collect())
}

/// Size-dependent multiplier on the deviation term: `min(s_g / s_max, cap)`.
pub fn standard_ratio(s_g: f64, s_max: f64, cap: f64) -> f64 {
    (s_g / s_max).min(cap)
}

/// `min(mean + gamma * std, beta)` over the candidate confidences, with the
/// population standard deviation.
pub fn dynamic_threshold(d: &[f64], gamma: f64, beta: f64) -> Result<f64> {
    dynamic_threshold_with_mode(d, gamma, beta, BetaMode::Cap)
}

pub fn dynamic_threshold_with_mode(d: &[f64], gamma: f64, beta: f64, mode: BetaMode) -> Result<f64> {
    if d.is_empty() {
        return Err(Error::InvalidInput("dynamic threshold of an empty candidate set".into()));
    }
    let (mean, std) = mean_std(d);
    let t = mean + gamma * std;
    Ok(match mode {
        BetaMode::Cap => t.min(beta),
        BetaMode::Floor => t.max(beta),
    })
}

pub fn assign_mcss(scene: &Scene, cfg: &AssignConfig) -> Result<Assignment> {
    let n = scene.num_preds();
    if scene.num_gt() == 0 {
        return Ok(Assignment::all_negative(n));
    }
    let centers: Vec<Point> = scene.pred_boxes().iter().map(geometry::center).collect();
    let mut provisional = Vec::with_capacity(scene.num_gt());
    let mut thresholds = Vec::with_capacity(scene.num_gt());

    for (g, gt) in scene.gt_boxes().iter().enumerate() {
        let cand = nearest_centers(&centers, geometry::center(gt), cfg.k());
        if cand.is_empty() {
            // no predictions at all; nothing can clear any threshold
            provisional.push(Vec::new());
            thresholds.push(cfg.beta());
            continue;
        }
        let d_c = category_confidence(scene, &cand, g, cfg.scores_are_probabilities())?;
        let d_iou: Vec<f64> = cand
            .iter()
            .map(|&p| geometry::iou(&scene.pred_boxes()[p], gt))
            .collect();
        let d = multi_clue_confidence(&d_c, &d_iou, cfg.alpha())?;
        let gamma = standard_ratio(geometry::absolute_size(gt), cfg.s_max(), cfg.gamma_cap());
        let t = dynamic_threshold_with_mode(&d, gamma, cfg.beta(), cfg.beta_mode())?;

        let keep = cand
            .iter()
            .zip(&d)
            .filter(|&(&p, &conf)| conf >= t && geometry::contains_center(gt, &scene.pred_boxes()[p]))
            .map(|(&p, &conf)| (p, conf))
            .collect::<Vec<_>>();
        provisional.push(keep);
        thresholds.push(t);
    }
    Ok(resolve_duplicates(n, &provisional, thresholds))
}
