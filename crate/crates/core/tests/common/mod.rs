#![allow(dead_code)]

use clueassign::enhance::EnhanceParams;
use clueassign::memory::{self, CategoryMemory};
use clueassign::{BBox, Matrix, Scene};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha20Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn random_box(rng: &mut ChaCha20Rng, integer: bool) -> BBox {
    let (x, y) = (rng.random_range(0.0..200.0), rng.random_range(0.0..200.0));
    let (w, h): (f64, f64) = (rng.random_range(1.0..60.0), rng.random_range(1.0..60.0));
    if integer {
        let (x, y) = (f64::floor(x), f64::floor(y));
        BBox::new(x, y, x + w.ceil(), y + h.ceil()).unwrap()
    } else {
        BBox::new(x, y, x + w, y + h).unwrap()
    }
}

/// Random scene with up to `max_n` predictions and `max_g` ground truths.
/// A quarter of the scenes use integer coordinates and repeat boxes so that
/// distance and confidence ties actually occur.
pub fn random_scene(rng: &mut ChaCha20Rng, id: u64, max_n: usize, max_g: usize) -> Scene {
    let integer = rng.random_bool(0.25);
    random_scene_with(rng, id, max_n, max_g, integer)
}

/// Continuous coordinates and scores only: distance and confidence ties have
/// probability zero and no prediction duplicates a ground truth.
pub fn continuous_scene(rng: &mut ChaCha20Rng, id: u64, max_n: usize, max_g: usize) -> Scene {
    random_scene_with(rng, id, max_n, max_g, false)
}

pub fn random_scene_with(rng: &mut ChaCha20Rng, id: u64, max_n: usize, max_g: usize, integer: bool) -> Scene {
    let c = rng.random_range(1..=5);
    let g = rng.random_range(0..=max_g);
    let n = rng.random_range(0..=max_n);
    let gts: Vec<BBox> = (0..g).map(|_| random_box(rng, integer)).collect();
    let labels: Vec<usize> = (0..g).map(|_| rng.random_range(0..c)).collect();
    let mut preds = Vec::with_capacity(n);
    for _ in 0..n {
        let b = if !gts.is_empty() && rng.random_bool(0.5) {
            let parent = gts[rng.random_range(0..gts.len())];
            if integer && rng.random_bool(0.3) {
                parent
            } else {
                let (dx, dy) = (normal(rng) * 3.0, normal(rng) * 3.0);
                if integer {
                    parent.translate(dx.round(), dy.round()).unwrap()
                } else {
                    parent.translate(dx, dy).unwrap()
                }
            }
        } else {
            random_box(rng, integer)
        };
        preds.push(b);
    }
    let scores: Vec<f64> = (0..n * c)
        .map(|_| if integer { (normal(rng) * 2.0).round() } else { normal(rng) * 2.0 })
        .collect();
    Scene::new(id, c, gts, labels, preds, scores).unwrap()
}

pub struct EnhanceCase {
    pub r_hat: Matrix,
    pub mem: CategoryMemory,
    pub params: EnhanceParams,
}

pub fn random_matrix(rng: &mut ChaCha20Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    let data = (0..rows * cols).map(|_| normal(rng) * scale).collect();
    Matrix::new(rows, cols, data).unwrap()
}

/// Tiny seeded enhancement instance: N <= 8, D <= 16, heads dividing D.
pub fn random_enhance_case(seed: u64) -> EnhanceCase {
    let mut r = rng(seed);
    let n = r.random_range(1..=8);
    let d = r.random_range(1..=16);
    let in_features = r.random_range(1..=12);
    let classes = r.random_range(1..=4);
    let divisors: Vec<usize> = (1..=d).filter(|h| d % h == 0).collect();
    let heads = divisors[r.random_range(0..divisors.len())];
    let mut params = EnhanceParams::random(seed, in_features, d, classes).unwrap();
    params.heads = heads;
    let mem = memory::init_memory(classes, d, seed ^ 0x5eed, 1.0).unwrap();
    let r_hat = random_matrix(&mut r, n, in_features, 1.0);
    EnhanceCase { r_hat, mem, params }
}

/// Integer-corner box with coordinates in `[0, span)`.
pub fn random_int_box(rng: &mut ChaCha20Rng, span: i64) -> [i64; 4] {
    let x1 = rng.random_range(0..span - 1);
    let y1 = rng.random_range(0..span - 1);
    let x2 = rng.random_range(x1 + 1..span);
    let y2 = rng.random_range(y1 + 1..span);
    [x1, y1, x2, y2]
}

pub fn to_bbox(b: [i64; 4]) -> BBox {
    BBox::new(b[0] as f64, b[1] as f64, b[2] as f64, b[3] as f64).unwrap()
}

pub fn max_abs_diff(a: &Matrix, b: &Matrix) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
