//! Seeded synthetic scenes spanning the small-object size range.
//!
//! Ground-truth absolute sizes are log-uniform inside `size_range`, so every
//! size octave is equally represented. Each ground truth spawns
//! `preds_per_gt` noisy copies of itself; optional clutter predictions are
//! scattered uniformly over the image.
//!
//! Scores are logits: for class `c` the base logit is
//! `logit(clip(IoU_c, 1e-4, 1 - 1e-4))`, where `IoU_c` is the overlap with
//! the parent ground truth when `c` is its class and 0 otherwise (clutter uses
//! the best overlap with any ground truth of class `c`). Every logit then gets
//! independent `N(0, score_noise_sigma^2)` noise.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{self, BBox};
use crate::scene::Scene;

/// Placement attempts per ground truth before giving up.
pub const PLACEMENT_ATTEMPTS: usize = 10_000;

const IOU_CLIP: f64 = 1e-4;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SizeSampling {
    #[default]
    LogUniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    /// (width, height) in pixels.
    pub image_size: (f64, f64),
    pub n_gt: usize,
    /// (min, max) absolute size in pixels.
    pub size_range: (f64, f64),
    pub size_sampling: SizeSampling,
    pub preds_per_gt: usize,
    /// Center jitter standard deviation as a fraction of the parent's absolute size.
    pub center_jitter_sigma: f64,
    /// Size-independent center jitter standard deviation in pixels, added to
    /// the relative term.
    pub center_jitter_px: f64,
    /// Standard deviation of the log-scale jitter applied to width and height.
    pub scale_jitter_sigma: f64,
    pub score_noise_sigma: f64,
    /// Predictions per image not derived from any ground truth.
    pub clutter_preds: usize,
    pub n_classes: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            image_size: (512.0, 512.0),
            n_gt: 8,
            size_range: (4.0, 256.0),
            size_sampling: SizeSampling::LogUniform,
            preds_per_gt: 12,
            center_jitter_sigma: 0.1,
            center_jitter_px: 3.0,
            scale_jitter_sigma: 0.1,
            score_noise_sigma: 0.5,
            clutter_preds: 512,
            n_classes: 9,
        }
    }
}

impl SynthConfig {
    /// The noiseless limit: every prediction equals its parent.
    pub fn noiseless(mut self) -> Self {
        self.center_jitter_sigma = 0.0;
        self.center_jitter_px = 0.0;
        self.scale_jitter_sigma = 0.0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        let (lo, hi) = self.size_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return bad(format!("size_range must satisfy 0 < min <= max, got ({lo}, {hi})"));
        }
        let (w, h) = self.image_size;
        if !(w > 0.0 && h > 0.0 && w.is_finite() && h.is_finite()) {
            return bad(format!("image_size must be positive, got ({w}, {h})"));
        }
        let sigmas = [
            ("center_jitter_sigma", self.center_jitter_sigma),
            ("center_jitter_px", self.center_jitter_px),
            ("scale_jitter_sigma", self.scale_jitter_sigma),
            ("score_noise_sigma", self.score_noise_sigma),
        ];
        if let Some((name, v)) = sigmas.iter().find(|(_, v)| !(*v >= 0.0 && v.is_finite())) {
            return bad(format!("{name} must be a finite non-negative value, got {v}"));
        }
        if self.n_gt == 0 || self.preds_per_gt == 0 {
            return bad("n_gt and preds_per_gt must be at least 1".into());
        }
        if self.n_classes == 0 {
            return bad("n_classes must be at least 1".into());
        }
        Ok(())
    }
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(IOU_CLIP, 1.0 - IOU_CLIP);
    (p / (1.0 - p)).ln()
}

fn log_uniform(rng: &mut ChaCha20Rng, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        return lo;
    }
    rng.random_range(lo.ln()..=hi.ln()).exp()
}

/// Box of size `w x h` centered at `(cx, cy)`, with the center clamped into
/// the image and the box clipped to it. The result always has positive area.
fn clipped_box(cx: f64, cy: f64, w: f64, h: f64, (img_w, img_h): (f64, f64)) -> Result<BBox> {
    let cx = cx.clamp(0.0, img_w);
    let cy = cy.clamp(0.0, img_h);
    BBox::new(
        (cx - w / 2.0).max(0.0),
        (cy - h / 2.0).max(0.0),
        (cx + w / 2.0).min(img_w),
        (cy + h / 2.0).min(img_h),
    )
}

fn normal(sigma: f64) -> Normal<f64> {
    Normal::new(0.0, sigma).expect("validated sigma")
}

/// Generates scene `index` of the stream defined by `cfg.seed`.
///
/// The random stream is ChaCha20 keyed by `cfg.seed` with stream id `index`,
/// so any scene can be regenerated independently of the others.
pub fn generate_scene(cfg: &SynthConfig, index: u64) -> Result<Scene> {
    cfg.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index);
    let (img_w, img_h) = cfg.image_size;

    let mut gt_boxes = Vec::with_capacity(cfg.n_gt);
    let mut gt_labels = Vec::with_capacity(cfg.n_gt);
    for g in 0..cfg.n_gt {
        // size is drawn once so rejection does not bias it towards small boxes
        let s = log_uniform(&mut rng, cfg.size_range.0, cfg.size_range.1);
        let aspect = log_uniform(&mut rng, 0.5, 2.0);
        let (w, h) = (s * aspect.sqrt(), s / aspect.sqrt());
        let mut placed = None;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let cx = rng.random_range(0.0..img_w);
            let cy = rng.random_range(0.0..img_h);
            let (x1, y1, x2, y2) = (cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0);
            if x1 >= 0.0 && y1 >= 0.0 && x2 <= img_w && y2 <= img_h {
                placed = Some(BBox::new(x1, y1, x2, y2)?);
                break;
            }
        }
        let b = placed.ok_or_else(|| {
            Error::Generation(format!(
                "could not place ground truth {g} of scene {index} inside a {img_w}x{img_h} image in {PLACEMENT_ATTEMPTS} attempts"
            ))
        })?;
        gt_boxes.push(b);
        gt_labels.push(rng.random_range(0..cfg.n_classes));
    }

    let c = cfg.n_classes;
    let scale_noise = normal(cfg.scale_jitter_sigma);
    let score_noise = normal(cfg.score_noise_sigma);
    let mut pred_boxes = Vec::with_capacity(cfg.n_gt * cfg.preds_per_gt + cfg.clutter_preds);
    let mut pred_scores = Vec::with_capacity(pred_boxes.capacity() * c);

    for (gt, &label) in gt_boxes.iter().zip(&gt_labels) {
        let s = geometry::absolute_size(gt);
        let center_noise = normal(cfg.center_jitter_sigma * s + cfg.center_jitter_px);
        let ctr = geometry::center(gt);
        for _ in 0..cfg.preds_per_gt {
            let cx = ctr.x + center_noise.sample(&mut rng);
            let cy = ctr.y + center_noise.sample(&mut rng);
            let w = gt.width() * scale_noise.sample(&mut rng).exp();
            let h = gt.height() * scale_noise.sample(&mut rng).exp();
            let b = if cfg.center_jitter_sigma == 0.0 && cfg.center_jitter_px == 0.0 && cfg.scale_jitter_sigma == 0.0 {
                *gt
            } else {
                clipped_box(cx, cy, w, h, cfg.image_size)?
            };
            let overlap = geometry::iou(&b, gt);
            for class in 0..c {
                let base = if class == label { logit(overlap) } else { logit(0.0) };
                pred_scores.push(base + score_noise.sample(&mut rng));
            }
            pred_boxes.push(b);
        }
    }

    for _ in 0..cfg.clutter_preds {
        let s = log_uniform(&mut rng, cfg.size_range.0, cfg.size_range.1);
        let aspect = log_uniform(&mut rng, 0.5, 2.0);
        let cx = rng.random_range(0.0..img_w);
        let cy = rng.random_range(0.0..img_h);
        let b = clipped_box(cx, cy, s * aspect.sqrt(), s / aspect.sqrt(), cfg.image_size)?;
        let mut best = vec![0.0f64; c];
        for (gt, &label) in gt_boxes.iter().zip(&gt_labels) {
            best[label] = best[label].max(geometry::iou(&b, gt));
        }
        for v in best {
            pred_scores.push(logit(v) + score_noise.sample(&mut rng));
        }
        pred_boxes.push(b);
    }

    Scene::new(index, c, gt_boxes, gt_labels, pred_boxes, pred_scores)
}

/// Small-object size classes by area in square pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SizeBucket {
    /// (0, 144]
    #[serde(rename = "eS")]
    ExtremelySmall,
    /// (144, 400]
    #[serde(rename = "rS")]
    RelativelySmall,
    /// (400, 1024]
    #[serde(rename = "gS")]
    GenerallySmall,
    /// above 1024
    Normal,
}

impl SizeBucket {
    pub const ALL: [SizeBucket; 4] = [
        SizeBucket::ExtremelySmall,
        SizeBucket::RelativelySmall,
        SizeBucket::GenerallySmall,
        SizeBucket::Normal,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            SizeBucket::ExtremelySmall => "eS",
            SizeBucket::RelativelySmall => "rS",
            SizeBucket::GenerallySmall => "gS",
            SizeBucket::Normal => "Normal",
        }
    }

    pub fn index(&self) -> usize {
        *self as usize
    }
}

impl fmt::Display for SizeBucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

pub fn size_bucket(area: f64) -> SizeBucket {
    if area <= 144.0 {
        SizeBucket::ExtremelySmall
    } else if area <= 400.0 {
        SizeBucket::RelativelySmall
    } else if area <= 1024.0 {
        SizeBucket::GenerallySmall
    } else {
        SizeBucket::Normal
    }
}
