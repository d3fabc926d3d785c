//! Category-aware feature memory.
//!
//! One prototype row per foreground category plus a final background row.
//! Rows are refreshed from ground-truth region features: features of one
//! category are averaged with weights `1 - cos(feature, prototype)`, then
//! blended into the prototype by momentum.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};

pub const DEFAULT_MOMENTUM: f64 = 0.01;
pub const DEFAULT_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct CategoryMemory {
    num_classes: usize,
    momentum: f64,
    seed: u64,
    rows: Matrix,
}

/// Features with category labels. Label `C` (the number of foreground
/// categories) denotes background.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBatch {
    pub features: Matrix,
    pub labels: Vec<usize>,
}

impl FeatureBatch {
    pub fn new(features: Matrix, labels: Vec<usize>) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::Shape(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if !features.is_finite() {
            return Err(Error::InvalidInput("non-finite feature".into()));
        }
        Ok(Self { features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Builds a `(C + 1) x D` memory of i.i.d. `N(0, scale^2)` entries.
///
/// Samples come from ChaCha20 seeded with `seed` (via `seed_from_u64`) fed
/// through the ziggurat standard normal sampler, filled row-major, so the
/// result is identical on every platform.
pub fn init_memory(num_classes: usize, dim: usize, seed: u64, scale: f64) -> Result<CategoryMemory> {
    if num_classes == 0 || dim == 0 {
        return Err(Error::InvalidConfig(format!(
            "memory needs at least one category and one dimension, got C={num_classes}, D={dim}"
        )));
    }
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "initialization scale must be positive, got {scale}"
        )));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let data = (0..(num_classes + 1) * dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * scale
        })
        .collect();
    let rows = Matrix::new(num_classes + 1, dim, data)?;
    CategoryMemory::from_parts(num_classes, DEFAULT_MOMENTUM, seed, rows)
}

/// Default initialization scale `1 / sqrt(D)`.
pub fn default_scale(dim: usize) -> f64 {
    1.0 / (dim as f64).sqrt()
}

impl CategoryMemory {
    pub fn from_parts(num_classes: usize, momentum: f64, seed: u64, rows: Matrix) -> Result<Self> {
        if rows.rows() != num_classes + 1 || rows.cols() == 0 {
            return Err(Error::Shape(format!(
                "memory for {num_classes} categories needs {} rows, got {}x{}",
                num_classes + 1,
                rows.rows(),
                rows.cols()
            )));
        }
        check_momentum(momentum)?;
        if !rows.is_finite() {
            return Err(Error::InvalidInput("memory contains non-finite entries".into()));
        }
        if let Some(r) = rows.iter_rows().position(|row| row.iter().all(|&v| v == 0.0)) {
            return Err(Error::InvalidInput(format!("memory row {r} is the zero vector")));
        }
        Ok(Self {
            num_classes,
            momentum,
            seed,
            rows,
        })
    }

    pub fn with_momentum(mut self, momentum: f64) -> Result<Self> {
        check_momentum(momentum)?;
        self.momentum = momentum;
        Ok(self)
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn background_index(&self) -> usize {
        self.num_classes
    }

    pub fn dim(&self) -> usize {
        self.rows.cols()
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn matrix(&self) -> &Matrix {
        &self.rows
    }

    pub fn row(&self, c: usize) -> &[f64] {
        self.rows.row(c)
    }

    /// Blends each provided `(category, aggregate)` row into the memory:
    /// `M_j <- (1 - m) M_j + m T_j`. Categories absent from `agg` keep their rows.
    pub fn ema_update(&mut self, agg: &[(usize, Vec<f64>)]) -> Result<()> {
        for (c, t) in agg {
            if *c > self.num_classes {
                return Err(Error::InvalidInput(format!("category {c} out of range")));
            }
            if t.len() != self.dim() {
                return Err(Error::Shape(format!(
                    "aggregate for category {c} has {} dims, memory has {}",
                    t.len(),
                    self.dim()
                )));
            }
        }
        let m = self.momentum;
        for (c, t) in agg {
            for (old, &new) in self.rows.row_mut(*c).iter_mut().zip(t) {
                let blended = (1.0 - m) * *old + m * new;
                // exact at m = 0 and m = 1; the clamp keeps rounding inside the segment
                *old = blended.clamp(old.min(new), old.max(new));
            }
        }
        Ok(())
    }

    /// Full refresh from a labeled batch: per category, cosine weights against
    /// the current prototype, weighted aggregation, then momentum update.
    /// Background rows are treated exactly like foreground rows.
    pub fn update_from_batch(&mut self, batch: &FeatureBatch, eps: f64) -> Result<()> {
        if batch.features.cols() != self.dim() && !batch.is_empty() {
            return Err(Error::Shape(format!(
                "features have {} dims, memory has {}",
                batch.features.cols(),
                self.dim()
            )));
        }
        if let Some(&bad) = batch.labels.iter().find(|&&l| l > self.num_classes) {
            return Err(Error::InvalidInput(format!("label {bad} out of range")));
        }
        let mut aggregates = Vec::new();
        for c in 0..=self.num_classes {
            let members: Vec<Vec<f64>> = batch
                .labels
                .iter()
                .zip(batch.features.iter_rows())
                .filter(|(&l, _)| l == c)
                .map(|(_, row)| row.to_vec())
                .collect();
            if members.is_empty() {
                continue;
            }
            let g = Matrix::from_rows(&members)?;
            let w = cosine_weights(&g, self.row(c))?;
            aggregates.push((c, aggregate_category(&g, &w, eps)?));
        }
        self.ema_update(&aggregates)
    }
}

fn check_momentum(m: f64) -> Result<()> {
    if (0.0..=1.0).contains(&m) {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("momentum must lie in [0, 1], got {m}")))
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Cosine similarity of every row of `g` with `m_c`.
pub fn cosine_weights(g: &Matrix, m_c: &[f64]) -> Result<Vec<f64>> {
    if g.cols() != m_c.len() {
        return Err(Error::Shape(format!(
            "features have {} dims, prototype has {}",
            g.cols(),
            m_c.len()
        )));
    }
    let mn = norm(m_c);
    if mn == 0.0 {
        return Err(Error::InvalidInput("prototype has zero norm".into()));
    }
    g.iter_rows()
        .enumerate()
        .map(|(k, row)| {
            let rn = norm(row);
            if rn == 0.0 {
                return Err(Error::InvalidInput(format!("feature row {k} has zero norm")));
            }
            let dot: f64 = row.iter().zip(m_c).map(|(a, b)| a * b).sum();
            Ok((dot / (rn * mn)).clamp(-1.0, 1.0))
        })
        .collect()
}

/// Normalized `1 - cos` weights; uniform when their total is below `eps`.
pub fn aggregation_weights(w_cos: &[f64], eps: f64) -> Vec<f64> {
    let raw: Vec<f64> = w_cos.iter().map(|w| (1.0 - w).max(0.0)).collect();
    let total: f64 = raw.iter().sum();
    if total < eps {
        let u = 1.0 / w_cos.len() as f64;
        return vec![u; w_cos.len()];
    }
    raw.into_iter().map(|r| r / total).collect()
}

pub fn aggregate_category(g: &Matrix, w_cos: &[f64], eps: f64) -> Result<Vec<f64>> {
    if g.rows() == 0 {
        return Err(Error::InvalidInput("cannot aggregate an empty feature set".into()));
    }
    if g.rows() != w_cos.len() {
        return Err(Error::Shape(format!(
            "{} features but {} weights",
            g.rows(),
            w_cos.len()
        )));
    }
    let weights = aggregation_weights(w_cos, eps);
    let mut out = vec![0.0; g.cols()];
    for (row, w) in g.iter_rows().zip(&weights) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += w * v;
        }
    }
    // a weighted mean never leaves the per-dimension range of its inputs
    for (j, o) in out.iter_mut().enumerate() {
        let (lo, hi) = g
            .iter_rows()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r[j]), hi.max(r[j])));
        *o = o.clamp(lo, hi);
    }
    Ok(out)
}

/// The two negatives with the smallest max-IoU to any ground truth, lower
/// index first on ties, labeled as background.
pub fn select_background_updates(
    neg_features: &Matrix,
    neg_max_iou: &[f64],
    background_label: usize,
) -> Result<FeatureBatch> {
    if neg_features.rows() != neg_max_iou.len() {
        return Err(Error::Shape(format!(
            "{} negative features but {} IoU values",
            neg_features.rows(),
            neg_max_iou.len()
        )));
    }
    let mut order: Vec<usize> = (0..neg_max_iou.len()).collect();
    order.sort_by(|&a, &b| neg_max_iou[a].total_cmp(&neg_max_iou[b]).then(a.cmp(&b)));
    order.truncate(2);
    let rows: Vec<Vec<f64>> = order.iter().map(|&i| neg_features.row(i).to_vec()).collect();
    let features = if rows.is_empty() {
        Matrix::zeros(0, neg_features.cols())
    } else {
        Matrix::from_rows(&rows)?
    };
    FeatureBatch::new(features, vec![background_label; order.len()])
}

/// Category-aware features `P * M` for an `N x (C + 1)` probability matrix.
pub fn generate_category_feature(p: &Matrix, mem: &CategoryMemory) -> Result<Matrix> {
    if p.cols() != mem.matrix().rows() {
        return Err(Error::Shape(format!(
            "probabilities have {} columns, memory has {} rows",
            p.cols(),
            mem.matrix().rows()
        )));
    }
    for (r, row) in p.iter_rows().enumerate() {
        let sum: f64 = row.iter().sum();
        if row.iter().any(|&v| v < 0.0 || !v.is_finite()) || (sum - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidInput(format!(
                "probability row {r} is not a distribution (sum {sum})"
            )));
        }
    }
    linalg::matmul(p, mem.matrix())
}
