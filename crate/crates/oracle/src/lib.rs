//! Slow, literal reference implementations for cross-checking `clueassign`.
//!
//! Nothing here calls into the production geometry, assignment, linear
//! algebra or memory code; only the plain data types are shared. Inputs are
//! expected to be small.

use clueassign::{AssignConfig, Assignment, BBox, BetaMode, CategoryMemory, Matrix, Scene, Verdict};
use clueassign::enhance::EnhanceParams;
use num_rational::Ratio;

fn box_area(b: &BBox) -> f64 {
    (b.x2() - b.x1()) * (b.y2() - b.y1())
}

fn box_iou(a: &BBox, b: &BBox) -> f64 {
    let w = a.x2().min(b.x2()) - a.x1().max(b.x1());
    let h = a.y2().min(b.y2()) - a.y1().max(b.y1());
    if !(w > 0.0 && h > 0.0) {
        return 0.0;
    }
    let inter = w * h;
    let union = box_area(a) + box_area(b) - inter;
    (inter / union).clamp(0.0, 1.0)
}

fn box_center(b: &BBox) -> (f64, f64) {
    ((b.x1() + b.x2()) / 2.0, (b.y1() + b.y2()) / 2.0)
}

fn logistic(x: f64) -> f64 {
    if x < 0.0 {
        x.exp() / (1.0 + x.exp())
    } else {
        1.0 / (1.0 + (-x).exp())
    }
}

/// Direct transcription of multi-clue sample selection.
///
/// Panics on probability scores outside [0, 1] when the config says the
/// scores are probabilities.
pub fn naive_mcss(scene: &Scene, cfg: &AssignConfig) -> Assignment {
    let n = scene.num_preds();
    let ng = scene.num_gt();

    // positive[g][p] = Some(confidence) when p passes for g
    let mut passes: Vec<Vec<Option<f64>>> = vec![vec![None; n]; ng];
    let mut thresholds = Vec::new();

    for g in 0..ng {
        let gt = &scene.gt_boxes()[g];
        let label = scene.gt_labels()[g];
        let (gx, gy) = box_center(gt);

        let mut by_dist: Vec<(f64, usize)> = Vec::new();
        for p in 0..n {
            let (px, py) = box_center(&scene.pred_boxes()[p]);
            let d = ((gx - px) * (gx - px) + (gy - py) * (gy - py)).sqrt();
            by_dist.push((d, p));
        }
        by_dist.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        let chosen: Vec<usize> = by_dist.iter().take(cfg.k()).map(|&(_, p)| p).collect();

        if chosen.is_empty() {
            thresholds.push(cfg.beta());
            continue;
        }

        let mut conf = Vec::new();
        for &p in &chosen {
            let s = scene.pred_scores()[p * scene.num_classes() + label];
            let dc = if cfg.scores_are_probabilities() {
                assert!((0.0..=1.0).contains(&s), "probability {s} out of range");
                s
            } else {
                logistic(s)
            };
            let du = box_iou(&scene.pred_boxes()[p], gt);
            conf.push(cfg.alpha() * dc + (1.0 - cfg.alpha()) * du);
        }

        let count = conf.len() as f64;
        let mut total = 0.0;
        let mut lo = conf[0];
        let mut hi = conf[0];
        for &c in &conf {
            total += c;
            if c < lo {
                lo = c;
            }
            if c > hi {
                hi = c;
            }
        }
        let mut mean = total / count;
        if mean < lo {
            mean = lo;
        }
        if mean > hi {
            mean = hi;
        }
        let mut sq = 0.0;
        for &c in &conf {
            sq += (c - mean) * (c - mean);
        }
        let std = (sq / count).sqrt();

        let size = box_area(gt).sqrt();
        let gamma = if size / cfg.s_max() < cfg.gamma_cap() {
            size / cfg.s_max()
        } else {
            cfg.gamma_cap()
        };
        let raw = mean + gamma * std;
        let t = match cfg.beta_mode() {
            BetaMode::Cap => raw.min(cfg.beta()),
            BetaMode::Floor => raw.max(cfg.beta()),
        };
        thresholds.push(t);

        for (i, &p) in chosen.iter().enumerate() {
            let (cx, cy) = box_center(&scene.pred_boxes()[p]);
            let inside = cx >= gt.x1() && cx <= gt.x2() && cy >= gt.y1() && cy <= gt.y2();
            if conf[i] >= t && inside {
                passes[g][p] = Some(conf[i]);
            }
        }
    }

    let mut per_pred = Vec::with_capacity(n);
    let mut per_gt_positives = vec![Vec::new(); ng];
    for p in 0..n {
        let mut best: Option<(usize, f64)> = None;
        for (g, row) in passes.iter().enumerate() {
            if let Some(c) = row[p] {
                match best {
                    Some((_, bc)) if bc >= c => {}
                    _ => best = Some((g, c)),
                }
            }
        }
        match best {
            Some((g, c)) => {
                per_pred.push(Verdict::Positive { gt: g, confidence: c });
                per_gt_positives[g].push(p);
            }
            None => per_pred.push(Verdict::Negative),
        }
    }
    Assignment {
        per_pred,
        per_gt_positives,
        thresholds,
    }
}

/// Exact IoU of integer-corner boxes `[x1, y1, x2, y2]`.
pub fn exact_iou(a: [i64; 4], b: [i64; 4]) -> Ratio<i128> {
    let area = |r: [i64; 4]| (r[2] - r[0]) as i128 * (r[3] - r[1]) as i128;
    let w = (a[2].min(b[2]) - a[0].max(b[0])).max(0) as i128;
    let h = (a[3].min(b[3]) - a[1].max(b[1])).max(0) as i128;
    let inter = w * h;
    if inter == 0 {
        return Ratio::from_integer(0);
    }
    Ratio::new(inter, area(a) + area(b) - inter)
}

/// Correctly rounded when numerator and denominator both fit in 53 bits.
pub fn ratio_to_f64(r: &Ratio<i128>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

/// Plain nested-vector matrix used by the reference evaluation.
pub type Rows = Vec<Vec<f64>>;

pub fn to_rows(m: &Matrix) -> Rows {
    (0..m.rows()).map(|i| (0..m.cols()).map(|j| m.get(i, j)).collect()).collect()
}

pub fn from_rows(rows: &Rows, cols: usize) -> Matrix {
    let data: Vec<f64> = rows.iter().flatten().copied().collect();
    Matrix::new(rows.len(), cols, data).expect("rectangular")
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceOutputs {
    pub r: Matrix,
    pub p: Matrix,
    pub f_c: Matrix,
    pub r_enh: Matrix,
}

fn product(a: &Rows, b: &Rows, inner: usize, cols: usize) -> Rows {
    let mut out = vec![vec![0.0; cols]; a.len()];
    for i in 0..a.len() {
        for j in 0..cols {
            let mut acc = 0.0;
            for k in 0..inner {
                acc += a[i][k] * b[k][j];
            }
            out[i][j] = acc;
        }
    }
    out
}

fn plus_bias(a: &mut Rows, bias: &[f64]) {
    for row in a.iter_mut() {
        for j in 0..row.len() {
            row[j] += bias[j];
        }
    }
}

fn softmax(row: &mut [f64]) {
    let mut top = f64::NEG_INFINITY;
    for &v in row.iter() {
        top = top.max(v);
    }
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - top).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

/// Scalar-loop evaluation of embed, classify, memory read, cross-attention
/// and fusion. Accumulation order matches a row-by-column dot product in
/// ascending index order.
pub fn reference_enhance(r_hat: &Matrix, mem: &CategoryMemory, params: &EnhanceParams) -> ReferenceOutputs {
    let n = r_hat.rows();
    let d = params.w_embed.cols();
    let classes = params.w_cls.cols();
    let x = to_rows(r_hat);

    let mut r = product(&x, &to_rows(&params.w_embed), r_hat.cols(), d);
    plus_bias(&mut r, &params.b_embed);
    for row in r.iter_mut() {
        for v in row.iter_mut() {
            *v = v.max(0.0);
        }
    }

    let mut p = product(&r, &to_rows(&params.w_cls), d, classes);
    plus_bias(&mut p, &params.b_cls);
    for row in p.iter_mut() {
        softmax(row);
    }

    let f_c = product(&p, &to_rows(mem.matrix()), classes, d);

    let q = product(&r, &to_rows(&params.w_q), d, d);
    let k = product(&f_c, &to_rows(&params.w_k), d, d);
    let v = product(&f_c, &to_rows(&params.w_v), d, d);
    let hd = d / params.heads;
    let mut att = vec![vec![0.0; d]; n];
    for h in 0..params.heads {
        for i in 0..n {
            let mut w = vec![0.0; n];
            for (j, wj) in w.iter_mut().enumerate() {
                let mut acc = 0.0;
                for c in h * hd..(h + 1) * hd {
                    acc += q[i][c] * k[j][c];
                }
                *wj = acc * params.attn_scale;
            }
            softmax(&mut w);
            for c in h * hd..(h + 1) * hd {
                let mut acc = 0.0;
                for j in 0..n {
                    acc += w[j] * v[j][c];
                }
                att[i][c] = acc;
            }
        }
    }

    let cat: Rows = (0..n).map(|i| r[i].iter().chain(&att[i]).copied().collect()).collect();
    let mut out = product(&cat, &to_rows(&params.w_fuse), 2 * d, d);
    plus_bias(&mut out, &params.b_fuse);

    ReferenceOutputs {
        r: from_rows(&r, d),
        p: from_rows(&p, classes),
        f_c: from_rows(&f_c, d),
        r_enh: from_rows(&out, d),
    }
}

fn softmax_jvp(s: &[f64], ds: &[f64]) -> Vec<f64> {
    let inner: f64 = s.iter().zip(ds).map(|(a, b)| a * b).sum();
    s.iter().zip(ds).map(|(a, b)| a * (b - inner)).collect()
}

/// Directional derivative of `R_enh` with respect to `R_hat` along `dir`,
/// composed by hand from the derivative of each stage. Memory and parameters
/// are held fixed.
pub fn enhance_jvp(r_hat: &Matrix, mem: &CategoryMemory, params: &EnhanceParams, dir: &Matrix) -> Matrix {
    let n = r_hat.rows();
    let d = params.w_embed.cols();
    let classes = params.w_cls.cols();
    let x = to_rows(r_hat);
    let dx = to_rows(dir);
    let we = to_rows(&params.w_embed);

    let mut z = product(&x, &we, r_hat.cols(), d);
    plus_bias(&mut z, &params.b_embed);
    let dz = product(&dx, &we, r_hat.cols(), d);
    let r: Rows = z.iter().map(|row| row.iter().map(|v| v.max(0.0)).collect()).collect();
    let dr: Rows = z
        .iter()
        .zip(&dz)
        .map(|(zr, dzr)| zr.iter().zip(dzr).map(|(a, b)| if *a > 0.0 { *b } else { 0.0 }).collect())
        .collect();

    let wc = to_rows(&params.w_cls);
    let mut logits = product(&r, &wc, d, classes);
    plus_bias(&mut logits, &params.b_cls);
    let dl = product(&dr, &wc, d, classes);
    let mut p = logits;
    for row in p.iter_mut() {
        softmax(row);
    }
    let dp: Rows = p.iter().zip(&dl).map(|(pr, dlr)| softmax_jvp(pr, dlr)).collect();

    let m = to_rows(mem.matrix());
    let f = product(&p, &m, classes, d);
    let df = product(&dp, &m, classes, d);

    let (wq, wk, wv) = (to_rows(&params.w_q), to_rows(&params.w_k), to_rows(&params.w_v));
    let q = product(&r, &wq, d, d);
    let dq = product(&dr, &wq, d, d);
    let k = product(&f, &wk, d, d);
    let dk = product(&df, &wk, d, d);
    let v = product(&f, &wv, d, d);
    let dv = product(&df, &wv, d, d);

    let hd = d / params.heads;
    let mut datt = vec![vec![0.0; d]; n];
    for h in 0..params.heads {
        let cols = h * hd..(h + 1) * hd;
        for i in 0..n {
            let mut s = vec![0.0; n];
            let mut ds = vec![0.0; n];
            for j in 0..n {
                for c in cols.clone() {
                    s[j] += q[i][c] * k[j][c];
                    ds[j] += dq[i][c] * k[j][c] + q[i][c] * dk[j][c];
                }
                s[j] *= params.attn_scale;
                ds[j] *= params.attn_scale;
            }
            softmax(&mut s);
            let da = softmax_jvp(&s, &ds);
            for c in cols.clone() {
                let mut acc = 0.0;
                for j in 0..n {
                    acc += da[j] * v[j][c] + s[j] * dv[j][c];
                }
                datt[i][c] = acc;
            }
        }
    }

    let dcat: Rows = (0..n).map(|i| dr[i].iter().chain(&datt[i]).copied().collect()).collect();
    from_rows(&product(&dcat, &to_rows(&params.w_fuse), 2 * d, d), d)
}

/// Pre-activation of the embedding layer, for keeping probes away from the
/// ReLU kink.
pub fn embedding_preactivation(r_hat: &Matrix, params: &EnhanceParams) -> Matrix {
    let mut z = product(&to_rows(r_hat), &to_rows(&params.w_embed), r_hat.cols(), params.w_embed.cols());
    plus_bias(&mut z, &params.b_embed);
    from_rows(&z, params.w_embed.cols())
}

/// Whether every entry of `value` lies within the per-column `[min, max]` of
/// `sources`, widened by `slack`.
pub fn within_hull(value: &[f64], sources: &Matrix, slack: f64) -> bool {
    if sources.rows() == 0 {
        return value.is_empty();
    }
    (0..sources.cols()).all(|j| {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..sources.rows() {
            lo = lo.min(sources.get(i, j));
            hi = hi.max(sources.get(i, j));
        }
        value[j] >= lo - slack && value[j] <= hi + slack
    })
}
