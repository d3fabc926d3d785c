//! Memory dynamics on synthetic Gaussian feature clusters.
//!
//! Every category, background included, owns a cluster mean. Each iteration
//! draws `per_class` samples for every foreground category and `negatives`
//! background samples with random max-IoU values; the two lowest-IoU
//! negatives update the background row.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::Result;
use crate::linalg::Matrix;
use crate::memory::{self, CategoryMemory, FeatureBatch};

use super::config::MemorySimConfig;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrajectoryPoint {
    pub iteration: usize,
    pub row: usize,
    /// Euclidean distance from the memory row to its own cluster mean.
    pub distance: f64,
    /// Distance to the nearest other cluster mean.
    pub nearest_other: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub momentum: f64,
    pub rows: usize,
    pub points: Vec<TrajectoryPoint>,
}

impl Trajectory {
    pub fn at(&self, iteration: usize, row: usize) -> Option<&TrajectoryPoint> {
        self.points.iter().find(|p| p.iteration == iteration && p.row == row)
    }

    pub fn last_iteration(&self) -> usize {
        self.points.last().map_or(0, |p| p.iteration)
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn record(points: &mut Vec<TrajectoryPoint>, iteration: usize, mem: &CategoryMemory, means: &[Vec<f64>]) {
    for (row, mean) in means.iter().enumerate() {
        let m = mem.row(row);
        let nearest_other = means
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != row)
            .map(|(_, o)| dist(m, o))
            .fold(f64::INFINITY, f64::min);
        points.push(TrajectoryPoint {
            iteration,
            row,
            distance: dist(m, mean),
            nearest_other,
        });
    }
}

fn sample(rng: &mut ChaCha20Rng, mean: &[f64], sigma: f64) -> Vec<f64> {
    mean.iter()
        .map(|&m| {
            let z: f64 = StandardNormal.sample(rng);
            m + sigma * z
        })
        .collect()
}

/// Runs the simulation; iteration 0 is the initial memory.
pub fn run_memory_sim(cfg: &MemorySimConfig) -> Result<Trajectory> {
    cfg.validate()?;
    let c = cfg.num_classes;
    let mut mem = memory::init_memory(c, cfg.dim, cfg.seed, memory::default_scale(cfg.dim))?
        .with_momentum(cfg.momentum)?;

    // init_memory consumes stream 0 of the same seed
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let zero = vec![0.0; cfg.dim];
    let means: Vec<Vec<f64>> = (0..=c).map(|_| sample(&mut rng, &zero, cfg.cluster_spread)).collect();

    let mut points = Vec::with_capacity((cfg.iterations + 1) * (c + 1));
    record(&mut points, 0, &mem, &means);
    for it in 1..=cfg.iterations {
        let mut rows = Vec::with_capacity(c * cfg.per_class + 2);
        let mut labels = Vec::with_capacity(rows.capacity());
        for (label, mean) in means.iter().enumerate().take(c) {
            for _ in 0..cfg.per_class {
                rows.push(sample(&mut rng, mean, cfg.cluster_sigma));
                labels.push(label);
            }
        }
        if cfg.negatives > 0 {
            let negs: Vec<Vec<f64>> = (0..cfg.negatives)
                .map(|_| sample(&mut rng, &means[c], cfg.cluster_sigma))
                .collect();
            let ious: Vec<f64> = (0..cfg.negatives).map(|_| rng.random_range(0.0..0.5)).collect();
            let bg = memory::select_background_updates(&Matrix::from_rows(&negs)?, &ious, c)?;
            for row in bg.features.iter_rows() {
                rows.push(row.to_vec());
                labels.push(c);
            }
        }
        let batch = FeatureBatch::new(Matrix::from_rows(&rows)?, labels)?;
        mem.update_from_batch(&batch, cfg.eps)?;
        record(&mut points, it, &mem, &means);
    }
    Ok(Trajectory {
        momentum: cfg.momentum,
        rows: c + 1,
        points,
    })
}
