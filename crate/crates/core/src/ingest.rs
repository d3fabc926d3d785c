//! COCO-style ground truth and per-class-scored prediction files.
//!
//! Ground truth document:
//!
//! ```json
//! {
//!   "images":      [{"id": 1, "width": 640, "height": 480}],
//!   "annotations": [{"id": 7, "image_id": 1, "category_id": 3, "bbox": [x, y, w, h]}],
//!   "categories":  [{"id": 3, "name": "person"}]
//! }
//! ```
//!
//! Other COCO fields are ignored. Category ids are mapped to contiguous
//! label indices in ascending id order.
//!
//! Prediction document: a JSON array of
//! `{"image_id": 1, "bbox": [x, y, w, h], "scores": [s_0, ..., s_{C-1}]}`
//! with one score per category, in label-index order. Single-score detection
//! records (`"score": s`) are rejected.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::scene::Scene;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Category {
    pub id: u64,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageAnnotations {
    pub width: f64,
    pub height: f64,
    pub boxes: Vec<BBox>,
    pub labels: Vec<usize>,
    pub annotation_ids: Vec<u64>,
}

/// A record that parsed but was not accepted.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Rejection {
    /// Annotation id for ground truth, array position for predictions.
    pub record: u64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub images: BTreeMap<u64, ImageAnnotations>,
    pub categories: Vec<Category>,
    pub rejected: Vec<Rejection>,
    pub total_annotations: usize,
}

impl GroundTruth {
    pub fn category_count(&self) -> usize {
        self.categories.len()
    }

    pub fn accepted_annotations(&self) -> usize {
        self.images.values().map(|i| i.boxes.len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ImagePredictions {
    pub boxes: Vec<BBox>,
    /// `boxes.len() x C`, row-major.
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub images: BTreeMap<u64, ImagePredictions>,
    pub rejected: Vec<Rejection>,
    pub total_records: usize,
}

impl Predictions {
    pub fn accepted_records(&self) -> usize {
        self.images.values().map(|i| i.boxes.len()).sum()
    }
}

#[derive(Deserialize)]
struct CocoDoc {
    images: Vec<CocoImage>,
    annotations: Vec<CocoAnnotation>,
    categories: Vec<Category>,
}

#[derive(Serialize, Deserialize)]
struct CocoImage {
    id: u64,
    width: f64,
    height: f64,
}

#[derive(Serialize, Deserialize)]
struct CocoAnnotation {
    id: u64,
    image_id: u64,
    category_id: u64,
    bbox: [f64; 4],
}

#[derive(Serialize, Deserialize)]
struct PredRecord {
    image_id: u64,
    bbox: [f64; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    scores: Option<Vec<f64>>,
    #[serde(default, skip_serializing)]
    score: Option<f64>,
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, e: serde_json::Error) -> Error {
    Error::Parse {
        context: format!("{} line {} column {}", path.display(), e.line(), e.column()),
        message: e.to_string(),
    }
}

pub fn load_ground_truth(path: &Path) -> Result<GroundTruth> {
    parse_ground_truth(&read_text(path)?, path)
}

pub fn parse_ground_truth(text: &str, path: &Path) -> Result<GroundTruth> {
    let doc: CocoDoc = serde_json::from_str(text).map_err(|e| parse_err(path, e))?;
    let mut cats = doc.categories;
    cats.sort_by_key(|c| c.id);
    if cats.windows(2).any(|w| w[0].id == w[1].id) {
        return Err(Error::InvalidInput(format!("{}: duplicate category id", path.display())));
    }
    let label_of: BTreeMap<u64, usize> = cats.iter().enumerate().map(|(i, c)| (c.id, i)).collect();

    let mut images = BTreeMap::new();
    for img in &doc.images {
        let entry = ImageAnnotations {
            width: img.width,
            height: img.height,
            boxes: Vec::new(),
            labels: Vec::new(),
            annotation_ids: Vec::new(),
        };
        if images.insert(img.id, entry).is_some() {
            return Err(Error::InvalidInput(format!("{}: duplicate image id {}", path.display(), img.id)));
        }
    }

    let mut rejected = Vec::new();
    for ann in &doc.annotations {
        let label = *label_of.get(&ann.category_id).ok_or_else(|| {
            Error::InvalidInput(format!(
                "{}: annotation {} references unknown category_id {}",
                path.display(),
                ann.id,
                ann.category_id
            ))
        })?;
        let image = images.get_mut(&ann.image_id).ok_or_else(|| {
            Error::InvalidInput(format!(
                "{}: annotation {} references unknown image_id {}",
                path.display(),
                ann.id,
                ann.image_id
            ))
        })?;
        let [x, y, w, h] = ann.bbox;
        match BBox::from_xywh(x, y, w, h) {
            Ok(b) => {
                image.boxes.push(b);
                image.labels.push(label);
                image.annotation_ids.push(ann.id);
            }
            Err(e) => rejected.push(Rejection {
                record: ann.id,
                reason: e.to_string(),
            }),
        }
    }
    Ok(GroundTruth {
        images,
        categories: cats,
        rejected,
        total_annotations: doc.annotations.len(),
    })
}

pub fn load_predictions(path: &Path, num_classes: usize, scores_are_probabilities: bool) -> Result<Predictions> {
    parse_predictions(&read_text(path)?, path, num_classes, scores_are_probabilities)
}

pub fn parse_predictions(
    text: &str,
    path: &Path,
    num_classes: usize,
    scores_are_probabilities: bool,
) -> Result<Predictions> {
    let records: Vec<PredRecord> = serde_json::from_str(text).map_err(|e| parse_err(path, e))?;
    let mut images: BTreeMap<u64, ImagePredictions> = BTreeMap::new();
    let mut rejected = Vec::new();
    for (i, rec) in records.iter().enumerate() {
        let scores = match (&rec.scores, rec.score) {
            (Some(s), _) => s,
            (None, Some(_)) => {
                return Err(Error::InvalidInput(format!(
                    "{}: record {i} carries a single `score`; per-class `scores` arrays of length {num_classes} are required",
                    path.display()
                )))
            }
            (None, None) => {
                return Err(Error::InvalidInput(format!("{}: record {i} has no `scores`", path.display())))
            }
        };
        if scores.len() != num_classes {
            return Err(Error::InvalidInput(format!(
                "{}: record {i} has {} scores, expected {num_classes}",
                path.display(),
                scores.len()
            )));
        }
        if let Some(bad) = scores
            .iter()
            .find(|s| !s.is_finite() || (scores_are_probabilities && !(0.0..=1.0).contains(*s)))
        {
            return Err(Error::InvalidInput(format!(
                "{}: record {i} has score {bad} outside the allowed range",
                path.display()
            )));
        }
        let [x, y, w, h] = rec.bbox;
        match BBox::from_xywh(x, y, w, h) {
            Ok(b) => {
                let entry = images.entry(rec.image_id).or_default();
                entry.boxes.push(b);
                entry.scores.extend_from_slice(scores);
            }
            Err(e) => rejected.push(Rejection {
                record: i as u64,
                reason: e.to_string(),
            }),
        }
    }
    Ok(Predictions {
        images,
        rejected,
        total_records: records.len(),
    })
}

/// One scene per ground-truth image, in ascending image id. Predictions for
/// images absent from the ground truth are an error.
pub fn build_scenes(gt: &GroundTruth, preds: &Predictions) -> Result<Vec<Scene>> {
    if let Some(id) = preds.images.keys().find(|id| !gt.images.contains_key(id)) {
        return Err(Error::InvalidInput(format!("predictions reference unknown image_id {id}")));
    }
    let empty = ImagePredictions::default();
    gt.images
        .iter()
        .map(|(&id, ann)| {
            let p = preds.images.get(&id).unwrap_or(&empty);
            Scene::new(
                id,
                gt.category_count(),
                ann.boxes.clone(),
                ann.labels.clone(),
                p.boxes.clone(),
                p.scores.clone(),
            )
        })
        .collect()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string(value).expect("serializable");
    s.push('\n');
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Writes scenes as a ground-truth document with categories `class_<i>`
/// (id = label index + 1) and sequential annotation ids.
pub fn write_ground_truth(path: &Path, scenes: &[Scene], image_size: (f64, f64)) -> Result<()> {
    let num_classes = scenes.first().map_or(0, Scene::num_classes);
    let images: Vec<CocoImage> = scenes
        .iter()
        .map(|s| CocoImage {
            id: s.image_id(),
            width: image_size.0,
            height: image_size.1,
        })
        .collect();
    let mut annotations = Vec::new();
    for s in scenes {
        for (b, &l) in s.gt_boxes().iter().zip(s.gt_labels()) {
            annotations.push(CocoAnnotation {
                id: annotations.len() as u64 + 1,
                image_id: s.image_id(),
                category_id: l as u64 + 1,
                bbox: b.to_xywh(),
            });
        }
    }
    let categories: Vec<Category> = (0..num_classes)
        .map(|i| Category {
            id: i as u64 + 1,
            name: format!("class_{i}"),
        })
        .collect();
    #[derive(Serialize)]
    struct Doc<'a> {
        images: &'a [CocoImage],
        annotations: &'a [CocoAnnotation],
        categories: &'a [Category],
    }
    write_json(
        path,
        &Doc {
            images: &images,
            annotations: &annotations,
            categories: &categories,
        },
    )
}

pub fn write_predictions(path: &Path, scenes: &[Scene]) -> Result<()> {
    let records: Vec<PredRecord> = scenes
        .iter()
        .flat_map(|s| {
            (0..s.num_preds()).map(move |p| PredRecord {
                image_id: s.image_id(),
                bbox: s.pred_boxes()[p].to_xywh(),
                scores: Some(s.score_row(p).to_vec()),
                score: None,
            })
        })
        .collect();
    write_json(path, &records)
}
