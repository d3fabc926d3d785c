use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;

/// One image: ground-truth boxes with labels and scored predictions.
///
/// `pred_scores` is an `N x C` row-major matrix. Whether the values are raw
/// logits or probabilities is decided by the assigner configuration, not by
/// the scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SceneFields")]
pub struct Scene {
    image_id: u64,
    num_classes: usize,
    gt_boxes: Vec<BBox>,
    gt_labels: Vec<usize>,
    pred_boxes: Vec<BBox>,
    pred_scores: Vec<f64>,
}

#[derive(Deserialize)]
struct SceneFields {
    image_id: u64,
    num_classes: usize,
    gt_boxes: Vec<BBox>,
    gt_labels: Vec<usize>,
    pred_boxes: Vec<BBox>,
    pred_scores: Vec<f64>,
}

impl TryFrom<SceneFields> for Scene {
    type Error = Error;

    fn try_from(f: SceneFields) -> Result<Self> {
        Scene::new(f.image_id, f.num_classes, f.gt_boxes, f.gt_labels, f.pred_boxes, f.pred_scores)
    }
}

impl Scene {
    pub fn new(
        image_id: u64,
        num_classes: usize,
        gt_boxes: Vec<BBox>,
        gt_labels: Vec<usize>,
        pred_boxes: Vec<BBox>,
        pred_scores: Vec<f64>,
    ) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::InvalidScene("num_classes must be at least 1".into()));
        }
        if gt_boxes.len() != gt_labels.len() {
            return Err(Error::InvalidScene(format!(
                "{} ground-truth boxes but {} labels",
                gt_boxes.len(),
                gt_labels.len()
            )));
        }
        if let Some((g, &l)) = gt_labels.iter().enumerate().find(|(_, &l)| l >= num_classes) {
            return Err(Error::InvalidScene(format!(
                "ground truth {g} has label {l}, expected < {num_classes}"
            )));
        }
        if pred_scores.len() != pred_boxes.len() * num_classes {
            return Err(Error::InvalidScene(format!(
                "score matrix has {} entries, expected {} predictions x {} classes",
                pred_scores.len(),
                pred_boxes.len(),
                num_classes
            )));
        }
        if pred_scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidScene("non-finite prediction score".into()));
        }
        Ok(Self {
            image_id,
            num_classes,
            gt_boxes,
            gt_labels,
            pred_boxes,
            pred_scores,
        })
    }

    pub fn image_id(&self) -> u64 {
        self.image_id
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_gt(&self) -> usize {
        self.gt_boxes.len()
    }

    pub fn num_preds(&self) -> usize {
        self.pred_boxes.len()
    }

    pub fn gt_boxes(&self) -> &[BBox] {
        &self.gt_boxes
    }

    pub fn gt_labels(&self) -> &[usize] {
        &self.gt_labels
    }

    pub fn pred_boxes(&self) -> &[BBox] {
        &self.pred_boxes
    }

    pub fn pred_scores(&self) -> &[f64] {
        &self.pred_scores
    }

    pub fn score_row(&self, pred: usize) -> &[f64] {
        let c = self.num_classes;
        &self.pred_scores[pred * c..(pred + 1) * c]
    }

    pub fn score(&self, pred: usize, class: usize) -> f64 {
        self.pred_scores[pred * self.num_classes + class]
    }

    /// Reorders predictions so that new prediction `i` is old prediction `perm[i]`.
    pub fn permute_predictions(&self, perm: &[usize]) -> Result<Scene> {
        let n = self.num_preds();
        let mut seen = vec![false; n];
        if perm.len() != n || perm.iter().any(|&p| p >= n || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::InvalidInput("not a permutation of the predictions".into()));
        }
        let boxes = perm.iter().map(|&p| self.pred_boxes[p]).collect();
        let scores = perm.iter().flat_map(|&p| self.score_row(p).iter().copied()).collect();
        Scene::new(
            self.image_id,
            self.num_classes,
            self.gt_boxes.clone(),
            self.gt_labels.clone(),
            boxes,
            scores,
        )
    }
}
