//! Label assignment: deciding which predictions are positive samples for
//! which ground truth.
//!
//! Every assigner returns an [`Assignment`]. Ties are always broken towards
//! the lower prediction index first and the lower ground-truth index second,
//! so outputs are fully deterministic.

mod baselines;
mod mcss;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{self, Point};
use crate::scene::Scene;

pub use baselines::{assign_atss, assign_center_distance, assign_iou_max};
pub use mcss::{
    assign_mcss, category_confidence, dynamic_threshold, dynamic_threshold_with_mode,
    multi_clue_confidence, sigmoid, standard_ratio,
};

/// Per-prediction outcome.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Verdict {
    Negative,
    /// Matched to ground truth `gt`. `confidence` is the score the assigner
    /// matched on: multi-clue confidence for MCSS, IoU for the baselines.
    Positive { gt: usize, confidence: f64 },
    /// Only produced by the max-IoU baseline, for IoUs between its two thresholds.
    Ignored,
}

impl Verdict {
    pub fn positive_gt(&self) -> Option<usize> {
        match *self {
            Verdict::Positive { gt, .. } => Some(gt),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub per_pred: Vec<Verdict>,
    /// Positive prediction indices for each ground truth, ascending.
    pub per_gt_positives: Vec<Vec<usize>>,
    /// Per-ground-truth threshold the assigner applied. For MCSS this is the
    /// dynamic threshold; for ATSS the IoU cut; for max-IoU the positive IoU
    /// threshold; for center distance the radius in pixels.
    pub thresholds: Vec<f64>,
}

impl Assignment {
    pub fn all_negative(num_preds: usize) -> Self {
        Self {
            per_pred: vec![Verdict::Negative; num_preds],
            per_gt_positives: Vec::new(),
            thresholds: Vec::new(),
        }
    }

    pub fn num_positives(&self) -> usize {
        self.per_pred.iter().filter(|v| v.positive_gt().is_some()).count()
    }

    pub fn num_ignored(&self) -> usize {
        self.per_pred.iter().filter(|v| matches!(v, Verdict::Ignored)).count()
    }

    /// Checks that per-prediction verdicts and per-ground-truth lists describe
    /// the same partition.
    pub fn check_consistency(&self) -> Result<()> {
        let mut listed = vec![false; self.per_pred.len()];
        if self.per_gt_positives.len() != self.thresholds.len() {
            return Err(Error::InvalidInput("thresholds and per-GT lists differ in length".into()));
        }
        for (g, preds) in self.per_gt_positives.iter().enumerate() {
            if preds.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidInput(format!("positives of GT {g} not strictly ascending")));
            }
            for &p in preds {
                if self.per_pred.get(p).and_then(Verdict::positive_gt) != Some(g) {
                    return Err(Error::InvalidInput(format!("prediction {p} listed for GT {g} but not positive for it")));
                }
                listed[p] = true;
            }
        }
        for (p, v) in self.per_pred.iter().enumerate() {
            if let Verdict::Positive { gt, .. } = v {
                if *gt >= self.per_gt_positives.len() || !listed[p] {
                    return Err(Error::InvalidInput(format!("prediction {p} positive but not listed")));
                }
            }
        }
        Ok(())
    }
}

/// How the minimum positive threshold `beta` enters the dynamic threshold.
///
/// `Cap` is `min(mean + gamma * std, beta)`; `Floor` is `max(.., beta)`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaMode {
    #[default]
    Cap,
    Floor,
}

/// Hyperparameters for multi-clue sample selection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "AssignConfigFields", into = "AssignConfigFields")]
pub struct AssignConfig {
    k: usize,
    alpha: f64,
    beta: f64,
    s_max: f64,
    gamma_cap: f64,
    scores_are_probabilities: bool,
    beta_mode: BetaMode,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct AssignConfigFields {
    k: usize,
    alpha: f64,
    beta: f64,
    s_max: f64,
    gamma_cap: f64,
    scores_are_probabilities: bool,
    beta_mode: BetaMode,
}

impl Default for AssignConfigFields {
    fn default() -> Self {
        AssignConfig::default().into()
    }
}

impl From<AssignConfig> for AssignConfigFields {
    fn from(c: AssignConfig) -> Self {
        Self {
            k: c.k,
            alpha: c.alpha,
            beta: c.beta,
            s_max: c.s_max,
            gamma_cap: c.gamma_cap,
            scores_are_probabilities: c.scores_are_probabilities,
            beta_mode: c.beta_mode,
        }
    }
}

impl TryFrom<AssignConfigFields> for AssignConfig {
    type Error = Error;

    fn try_from(f: AssignConfigFields) -> Result<Self> {
        Ok(AssignConfig::new(f.k, f.alpha, f.beta, f.s_max, f.gamma_cap)?
            .with_probabilities(f.scores_are_probabilities)
            .with_beta_mode(f.beta_mode))
    }
}

impl Default for AssignConfig {
    /// k = 9, alpha = 0.3, beta = 0.6, s_max = 32, gamma capped at 3.
    fn default() -> Self {
        Self {
            k: 9,
            alpha: 0.3,
            beta: 0.6,
            s_max: 32.0,
            gamma_cap: 3.0,
            scores_are_probabilities: false,
            beta_mode: BetaMode::Cap,
        }
    }
}

impl AssignConfig {
    pub fn new(k: usize, alpha: f64, beta: f64, s_max: f64, gamma_cap: f64) -> Result<Self> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if k == 0 {
            return bad("k must be a positive integer".into());
        }
        if !(0.0..=1.0).contains(&alpha) {
            return bad(format!("alpha must lie in [0, 1], got {alpha}"));
        }
        if !(beta > 0.0 && beta <= 1.0) {
            return bad(format!("beta must lie in (0, 1], got {beta}"));
        }
        if !(s_max > 0.0 && s_max.is_finite()) {
            return bad(format!("s_max must be positive, got {s_max}"));
        }
        if !(gamma_cap > 0.0 && gamma_cap.is_finite()) {
            return bad(format!("gamma_cap must be positive, got {gamma_cap}"));
        }
        Ok(Self {
            k,
            alpha,
            beta,
            s_max,
            gamma_cap,
            ..Self::default()
        })
    }

    pub fn with_probabilities(mut self, flag: bool) -> Self {
        self.scores_are_probabilities = flag;
        self
    }

    pub fn with_beta_mode(mut self, mode: BetaMode) -> Self {
        self.beta_mode = mode;
        self
    }

    pub fn k(&self) -> usize {
        self.k
    }
    pub fn alpha(&self) -> f64 {
        self.alpha
    }
    pub fn beta(&self) -> f64 {
        self.beta
    }
    pub fn s_max(&self) -> f64 {
        self.s_max
    }
    pub fn gamma_cap(&self) -> f64 {
        self.gamma_cap
    }
    pub fn scores_are_probabilities(&self) -> bool {
        self.scores_are_probabilities
    }
    pub fn beta_mode(&self) -> BetaMode {
        self.beta_mode
    }
}

/// Population mean and standard deviation.
///
/// The mean is clamped into `[min, max]` of the input so that a constant
/// sequence yields exactly that constant and a zero deviation.
pub(crate) fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let mean = (values.iter().sum::<f64>() / n).clamp(lo, hi);
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn cmp_candidate(a: &(f64, usize), b: &(f64, usize)) -> std::cmp::Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

/// k nearest prediction centers to `target`, ordered by (distance, index).
pub(crate) fn nearest_centers(centers: &[Point], target: Point, k: usize) -> Vec<usize> {
    if k >= centers.len() {
        let mut all: Vec<(f64, usize)> = centers
            .iter()
            .enumerate()
            .map(|(i, &c)| (geometry::point_distance(target, c), i))
            .collect();
        all.sort_by(cmp_candidate);
        return all.into_iter().map(|(_, i)| i).collect();
    }
    // Bounded insertion buffer; k is small in practice so this beats a heap.
    let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
    for (i, &c) in centers.iter().enumerate() {
        let d = geometry::point_distance(target, c);
        if best.len() == k && d >= best[k - 1].0 {
            // equal distance loses: every earlier entry has a lower index
            continue;
        }
        let pos = best.partition_point(|e| cmp_candidate(e, &(d, i)).is_lt());
        best.insert(pos, (d, i));
        best.truncate(k);
    }
    best.into_iter().map(|(_, i)| i).collect()
}

/// Indices of the `k` predictions whose centers are closest to the center of
/// ground truth `g`, sorted by (distance, index).
pub fn topk_by_center(scene: &Scene, g: usize, k: usize) -> Result<Vec<usize>> {
    let gt = scene
        .gt_boxes()
        .get(g)
        .ok_or_else(|| Error::InvalidInput(format!("ground truth index {g} out of range")))?;
    let centers: Vec<Point> = scene.pred_boxes().iter().map(geometry::center).collect();
    Ok(nearest_centers(&centers, geometry::center(gt), k))
}

/// Keeps each prediction positive for the single ground truth where its
/// confidence is highest (lower GT index on ties); the rest become negative.
///
/// `provisional[g]` lists `(prediction, confidence)` pairs for GT `g`.
pub fn resolve_duplicates(
    num_preds: usize,
    provisional: &[Vec<(usize, f64)>],
    thresholds: Vec<f64>,
) -> Assignment {
    let mut per_pred = vec![Verdict::Negative; num_preds];
    for (g, cands) in provisional.iter().enumerate() {
        for &(p, conf) in cands {
            let better = match per_pred[p] {
                Verdict::Positive { confidence, .. } => conf > confidence,
                _ => true,
            };
            if better {
                per_pred[p] = Verdict::Positive { gt: g, confidence: conf };
            }
        }
    }
    let mut per_gt_positives = vec![Vec::new(); provisional.len()];
    for (p, v) in per_pred.iter().enumerate() {
        if let Some(g) = v.positive_gt() {
            per_gt_positives[g].push(p);
        }
    }
    Assignment {
        per_pred,
        per_gt_positives,
        thresholds,
    }
}

/// The assigners available to the harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssignerKind {
    Mcss,
    IouMax,
    Center,
    Atss,
}

impl AssignerKind {
    pub const ALL: [AssignerKind; 4] = [
        AssignerKind::Mcss,
        AssignerKind::IouMax,
        AssignerKind::Center,
        AssignerKind::Atss,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            AssignerKind::Mcss => "mcss",
            AssignerKind::IouMax => "iou_max",
            AssignerKind::Center => "center",
            AssignerKind::Atss => "atss",
        }
    }
}

impl fmt::Display for AssignerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AssignerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AssignerKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = AssignerKind::ALL.iter().map(|k| k.name()).collect();
                Error::InvalidConfig(format!("unknown assigner `{s}`, expected one of {{{}}}", names.join(", ")))
            })
    }
}

/// Parameters for every assigner, so a single value can drive any of them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssignerSettings {
    pub mcss: AssignConfig,
    pub iou_pos_thresh: f64,
    pub iou_neg_thresh: f64,
    pub radius_factor: f64,
    pub atss_k: usize,
}

impl Default for AssignerSettings {
    fn default() -> Self {
        Self {
            mcss: AssignConfig::default(),
            iou_pos_thresh: 0.5,
            iou_neg_thresh: 0.5,
            radius_factor: 1.0,
            atss_k: 9,
        }
    }
}

impl AssignerSettings {
    pub fn run(&self, kind: AssignerKind, scene: &Scene) -> Result<Assignment> {
        match kind {
            AssignerKind::Mcss => assign_mcss(scene, &self.mcss),
            AssignerKind::IouMax => assign_iou_max(scene, self.iou_pos_thresh, self.iou_neg_thresh),
            AssignerKind::Center => assign_center_distance(scene, self.radius_factor),
            AssignerKind::Atss => assign_atss(scene, self.atss_k),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BBox;

    fn scene_with_pred_centers(centers: &[(f64, f64)]) -> Scene {
        let gt = BBox::new(-1.0, -1.0, 1.0, 1.0).unwrap();
        let preds = centers
            .iter()
            .map(|&(x, y)| BBox::new(x - 1.0, y - 1.0, x + 1.0, y + 1.0).unwrap())
            .collect::<Vec<_>>();
        let n = preds.len();
        Scene::new(0, 1, vec![gt], vec![0], preds, vec![0.0; n]).unwrap()
    }

    #[test]
    fn topk_examples() {
        let s = scene_with_pred_centers(&[(4.0, 0.0)]);
        assert_eq!(topk_by_center(&s, 0, 9).unwrap(), vec![0]);

        let s = scene_with_pred_centers(&[(1.0, 0.0), (5.0, 0.0), (0.0, 3.0)]);
        assert_eq!(topk_by_center(&s, 0, 2).unwrap(), vec![0, 2]);

        let s = scene_with_pred_centers(&[(0.0, 2.0), (2.0, 0.0)]);
        assert_eq!(topk_by_center(&s, 0, 1).unwrap(), vec![0]);
        assert!(topk_by_center(&s, 1, 1).is_err());
    }

    #[test]
    fn bounded_selection_matches_full_sort() {
        // many ties at distance 1 and 2
        let pts: Vec<(f64, f64)> = (0..40)
            .map(|i| match i % 4 {
                0 => (1.0, 0.0),
                1 => (0.0, -2.0),
                2 => (0.0, 1.0),
                _ => (3.0, 4.0),
            })
            .collect();
        let s = scene_with_pred_centers(&pts);
        let full = topk_by_center(&s, 0, 40).unwrap();
        for k in 1..40 {
            assert_eq!(topk_by_center(&s, 0, k).unwrap(), full[..k].to_vec());
        }
    }

    #[test]
    fn mean_std_constant_is_exact() {
        let (m, s) = mean_std(&[0.1, 0.1, 0.1]);
        assert_eq!(m, 0.1);
        assert_eq!(s, 0.0);
        let (m, s) = mean_std(&[0.2, 0.2, 0.8]);
        assert!((m - 0.4).abs() < 1e-15);
        assert!((s - 0.08f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn resolve_duplicates_examples() {
        let a = resolve_duplicates(3, &[vec![(0, 0.7)], vec![(0, 0.9), (1, 0.5)]], vec![0.5, 0.5]);
        assert_eq!(a.per_pred[0], Verdict::Positive { gt: 1, confidence: 0.9 });
        assert_eq!(a.per_gt_positives, vec![vec![], vec![0, 1]]);
        assert_eq!(a.per_pred[2], Verdict::Negative);
        a.check_consistency().unwrap();

        let a = resolve_duplicates(1, &[vec![(0, 0.4)]], vec![0.4]);
        assert_eq!(a.per_pred[0], Verdict::Positive { gt: 0, confidence: 0.4 });

        let mut prov = vec![Vec::new(); 6];
        prov[2].push((0, 0.8));
        prov[5].push((0, 0.8));
        let a = resolve_duplicates(1, &prov, vec![0.0; 6]);
        assert_eq!(a.per_pred[0].positive_gt(), Some(2));
    }

    #[test]
    fn config_bounds() {
        assert!(AssignConfig::new(0, 0.3, 0.6, 32.0, 3.0).is_err());
        assert!(AssignConfig::new(9, 1.1, 0.6, 32.0, 3.0).is_err());
        assert!(AssignConfig::new(9, 0.3, 0.0, 32.0, 3.0).is_err());
        assert!(AssignConfig::new(9, 0.3, 0.6, 0.0, 3.0).is_err());
        assert!(AssignConfig::new(9, 0.3, 0.6, 32.0, -1.0).is_err());
        let d = AssignConfig::default();
        assert_eq!((d.k(), d.alpha(), d.beta(), d.s_max(), d.gamma_cap()), (9, 0.3, 0.6, 32.0, 3.0));
        let parsed: AssignConfig = toml::from_str("k = 5\nbeta_mode = \"floor\"").unwrap();
        assert_eq!(parsed.k(), 5);
        assert_eq!(parsed.beta_mode(), BetaMode::Floor);
        assert!(toml::from_str::<AssignConfig>("alpha = 2.0").is_err());
    }

    #[test]
    fn assigner_names() {
        for k in AssignerKind::ALL {
            assert_eq!(k.name().parse::<AssignerKind>().unwrap(), k);
        }
        let err = "foo".parse::<AssignerKind>().unwrap_err().to_string();
        assert!(err.contains("mcss, iou_max, center, atss"), "{err}");
    }
}
