//! Candidate feature enhancement from category-aware memory.
//!
//! Pipeline for `N` candidate boxes with pooled features `R_hat`
//! (`N x (c*h*w)`, flattened channel-major then row-major spatial):
//!
//! 1. `R = ReLU(R_hat W_embed + b_embed)`            (`N x D`)
//! 2. `P = softmax(R W_cls + b_cls)`                 (`N x (C+1)`)
//! 3. `F_c = P M`                                    (`N x D`)
//! 4. `A = softmax((R W_q)(F_c W_k)^T * scale) (F_c W_v)`, attention over the N candidates
//! 5. `R_enh = [R | A] W_fuse + b_fuse`              (`N x D`)
//!
//! Parameters are always supplied by the caller.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::memory::{self, CategoryMemory};

#[derive(Debug, Clone, PartialEq)]
pub struct EnhanceParams {
    pub w_embed: Matrix,
    pub b_embed: Vec<f64>,
    pub w_cls: Matrix,
    pub b_cls: Vec<f64>,
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub w_v: Matrix,
    pub w_fuse: Matrix,
    pub b_fuse: Vec<f64>,
    pub attn_scale: f64,
    pub heads: usize,
}

impl EnhanceParams {
    /// Checks every shape against the embedding matrix.
    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        let classes = self.w_cls.cols();
        let expect = |name: &str, got: (usize, usize), want: (usize, usize)| {
            if got == want {
                Ok(())
            } else {
                Err(Error::Shape(format!(
                    "{name} is {}x{}, expected {}x{}",
                    got.0, got.1, want.0, want.1
                )))
            }
        };
        if d == 0 || self.in_features() == 0 {
            return Err(Error::Shape("w_embed must be non-empty".into()));
        }
        expect("b_embed", (1, self.b_embed.len()), (1, d))?;
        expect("w_cls", self.w_cls.shape(), (d, classes))?;
        expect("b_cls", (1, self.b_cls.len()), (1, classes))?;
        expect("w_q", self.w_q.shape(), (d, d))?;
        expect("w_k", self.w_k.shape(), (d, d))?;
        expect("w_v", self.w_v.shape(), (d, d))?;
        expect("w_fuse", self.w_fuse.shape(), (2 * d, d))?;
        expect("b_fuse", (1, self.b_fuse.len()), (1, d))?;
        if classes < 2 {
            return Err(Error::Shape("classifier needs at least one category plus background".into()));
        }
        if self.heads == 0 || !d.is_multiple_of(self.heads) {
            return Err(Error::Shape(format!("{} heads do not divide width {d}", self.heads)));
        }
        let all_finite = [&self.w_embed, &self.w_cls, &self.w_q, &self.w_k, &self.w_v, &self.w_fuse]
            .iter()
            .all(|m| m.is_finite())
            && [&self.b_embed, &self.b_cls, &self.b_fuse]
                .iter()
                .all(|b| b.iter().all(|v| v.is_finite()))
            && self.attn_scale.is_finite();
        if !all_finite {
            return Err(Error::InvalidInput("non-finite parameter".into()));
        }
        Ok(())
    }

    pub fn in_features(&self) -> usize {
        self.w_embed.rows()
    }

    pub fn dim(&self) -> usize {
        self.w_embed.cols()
    }

    /// Foreground categories plus background.
    pub fn num_outputs(&self) -> usize {
        self.w_cls.cols()
    }

    /// Seeded Gaussian initialization with `1/sqrt(fan_in)` scaling and
    /// single-head attention at scale `1/sqrt(D)`.
    pub fn random(seed: u64, in_features: usize, dim: usize, num_classes: usize) -> Result<Self> {
        if in_features == 0 || dim == 0 || num_classes == 0 {
            return Err(Error::InvalidConfig("parameter dimensions must be positive".into()));
        }
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut gauss = |rows: usize, cols: usize, scale: f64| {
            let data = (0..rows * cols)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z * scale
                })
                .collect();
            Matrix::new(rows, cols, data).expect("sized buffer")
        };
        let fan = |n: usize| 1.0 / (n as f64).sqrt();
        let p = Self {
            w_embed: gauss(in_features, dim, fan(in_features)),
            b_embed: gauss(1, dim, 0.1).into_data(),
            w_cls: gauss(dim, num_classes + 1, fan(dim)),
            b_cls: gauss(1, num_classes + 1, 0.1).into_data(),
            w_q: gauss(dim, dim, fan(dim)),
            w_k: gauss(dim, dim, fan(dim)),
            w_v: gauss(dim, dim, fan(dim)),
            w_fuse: gauss(2 * dim, dim, fan(2 * dim)),
            b_fuse: gauss(1, dim, 0.1).into_data(),
            attn_scale: fan(dim),
            heads: 1,
        };
        p.validate()?;
        Ok(p)
    }
}

/// Flattens `N x c x h x w` region features, stored contiguously in that
/// order, into `N x (c*h*w)` rows. Column index is `ch*h*w + y*w + x`.
pub fn flatten_rois(data: Vec<f64>, n: usize, c: usize, h: usize, w: usize) -> Result<Matrix> {
    Matrix::new(n, c * h * w, data)
}

fn check_rows(name: &str, m: &Matrix, cols: usize) -> Result<()> {
    if m.cols() != cols {
        return Err(Error::Shape(format!("{name} has {} columns, expected {cols}", m.cols())));
    }
    Ok(())
}

pub fn embed(r_hat: &Matrix, p: &EnhanceParams) -> Result<Matrix> {
    check_rows("R_hat", r_hat, p.in_features())?;
    let z = linalg::matmul(r_hat, &p.w_embed)?.add_row(&p.b_embed)?;
    Ok(linalg::relu(&z))
}

pub fn classify(r: &Matrix, p: &EnhanceParams) -> Result<Matrix> {
    check_rows("R", r, p.dim())?;
    let logits = linalg::matmul(r, &p.w_cls)?.add_row(&p.b_cls)?;
    Ok(linalg::softmax_rows(&logits))
}

/// Attention output together with the per-head `N x N` weight matrices.
pub fn cross_attention_with_weights(
    r: &Matrix,
    f_c: &Matrix,
    p: &EnhanceParams,
) -> Result<(Matrix, Vec<Matrix>)> {
    check_rows("R", r, p.dim())?;
    check_rows("F_c", f_c, p.dim())?;
    if r.rows() != f_c.rows() {
        return Err(Error::Shape(format!(
            "R has {} rows but F_c has {}",
            r.rows(),
            f_c.rows()
        )));
    }
    let n = r.rows();
    let d = p.dim();
    if n == 0 {
        return Ok((Matrix::zeros(0, d), Vec::new()));
    }
    let q = linalg::matmul(r, &p.w_q)?;
    let k = linalg::matmul(f_c, &p.w_k)?;
    let v = linalg::matmul(f_c, &p.w_v)?;
    let hd = d / p.heads;
    let mut out = Matrix::zeros(n, d);
    let mut weights = Vec::with_capacity(p.heads);
    for h in 0..p.heads {
        let (lo, hi) = (h * hd, (h + 1) * hd);
        let scores = linalg::matmul_transposed(&q.col_block(lo, hi), &k.col_block(lo, hi))?.scale(p.attn_scale);
        let attn = linalg::softmax_rows(&scores);
        let head_out = linalg::matmul(&attn, &v.col_block(lo, hi))?;
        for i in 0..n {
            out.row_mut(i)[lo..hi].copy_from_slice(head_out.row(i));
        }
        weights.push(attn);
    }
    Ok((out, weights))
}

pub fn cross_attention(r: &Matrix, f_c: &Matrix, p: &EnhanceParams) -> Result<Matrix> {
    cross_attention_with_weights(r, f_c, p).map(|(out, _)| out)
}

pub fn fuse(r: &Matrix, attended: &Matrix, p: &EnhanceParams) -> Result<Matrix> {
    check_rows("R", r, p.dim())?;
    check_rows("attended", attended, p.dim())?;
    let cat = r.hconcat(attended)?;
    linalg::matmul(&cat, &p.w_fuse)?.add_row(&p.b_fuse)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnhanceOutputs {
    pub r: Matrix,
    pub p: Matrix,
    pub f_c: Matrix,
    pub r_enh: Matrix,
}

pub fn enhance_pipeline(r_hat: &Matrix, mem: &CategoryMemory, p: &EnhanceParams) -> Result<EnhanceOutputs> {
    p.validate()?;
    if mem.dim() != p.dim() {
        return Err(Error::Shape(format!(
            "memory width {} does not match parameter width {}",
            mem.dim(),
            p.dim()
        )));
    }
    if mem.matrix().rows() != p.num_outputs() {
        return Err(Error::Shape(format!(
            "memory has {} rows but the classifier emits {} classes",
            mem.matrix().rows(),
            p.num_outputs()
        )));
    }
    let r = embed(r_hat, p)?;
    let probs = classify(&r, p)?;
    let f_c = memory::generate_category_feature(&probs, mem)?;
    let attended = cross_attention(&r, &f_c, p)?;
    let r_enh = fuse(&r, &attended, p)?;
    Ok(EnhanceOutputs {
        r,
        p: probs,
        f_c,
        r_enh,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn zero_params(f: usize, d: usize, classes: usize) -> EnhanceParams {
        EnhanceParams {
            w_embed: Matrix::zeros(f, d),
            b_embed: vec![0.0; d],
            w_cls: Matrix::zeros(d, classes + 1),
            b_cls: vec![0.0; classes + 1],
            w_q: Matrix::identity(d),
            w_k: Matrix::identity(d),
            w_v: Matrix::identity(d),
            w_fuse: Matrix::zeros(2 * d, d),
            b_fuse: vec![0.0; d],
            attn_scale: 1.0,
            heads: 1,
        }
    }

    #[test]
    fn embed_examples() {
        let p = zero_params(3, 2, 1);
        assert_eq!(embed(&Matrix::zeros(2, 3), &p).unwrap(), Matrix::zeros(2, 2));

        let mut p = zero_params(1, 1, 1);
        p.w_embed = mat(&[&[3.0]]);
        p.b_embed = vec![-1.0];
        assert_eq!(embed(&mat(&[&[2.0]]), &p).unwrap(), mat(&[&[5.0]]));
        assert_eq!(embed(&mat(&[&[-2.0]]), &p).unwrap(), mat(&[&[0.0]]));
        assert!(embed(&Matrix::zeros(1, 2), &p).is_err());
    }

    #[test]
    fn classify_examples() {
        let p = zero_params(1, 2, 2);
        let probs = classify(&Matrix::zeros(2, 2), &p).unwrap();
        assert!(probs.data().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));

        let mut p = zero_params(1, 2, 2);
        p.b_cls = vec![0.0, 0.0, 50.0];
        let probs = classify(&mat(&[&[1.0, -1.0]]), &p).unwrap();
        let argmax = (0..3).max_by(|&a, &b| probs.get(0, a).total_cmp(&probs.get(0, b))).unwrap();
        assert_eq!(argmax, 2);
    }

    #[test]
    fn attention_identical_keys() {
        let mut p = zero_params(1, 2, 1);
        p.w_v = mat(&[&[2.0, 0.0], &[1.0, -1.0]]);
        p.w_k = mat(&[&[0.3, 5.0], &[-2.0, 1.0]]);
        let r = mat(&[&[1.0, 2.0], &[-3.0, 0.5], &[0.0, 0.0]]);
        let f = mat(&[&[1.0, 1.0], &[1.0, 1.0], &[1.0, 1.0]]);
        let out = cross_attention(&r, &f, &p).unwrap();
        for row in out.iter_rows() {
            assert!((row[0] - 3.0).abs() < 1e-12 && (row[1] + 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_single_candidate() {
        let mut p = zero_params(1, 2, 1);
        p.w_v = mat(&[&[0.0, 1.0], &[1.0, 0.0]]);
        let out = cross_attention(&mat(&[&[9.0, -9.0]]), &mat(&[&[1.0, 2.0]]), &p).unwrap();
        assert_eq!(out, mat(&[&[2.0, 1.0]]));
        assert_eq!(cross_attention(&Matrix::zeros(0, 2), &Matrix::zeros(0, 2), &p).unwrap().shape(), (0, 2));
    }

    #[test]
    fn attention_two_by_two() {
        let p = zero_params(1, 2, 1);
        let r = mat(&[&[1.0, 0.0], &[0.0, 2.0]]);
        let f = mat(&[&[0.5, 1.0], &[2.0, -1.0]]);
        let out = cross_attention(&r, &f, &p).unwrap();
        for i in 0..2 {
            let s: Vec<f64> = (0..2).map(|j| r.get(i, 0) * f.get(j, 0) + r.get(i, 1) * f.get(j, 1)).collect();
            let z: f64 = s.iter().map(|v| v.exp()).sum();
            for c in 0..2 {
                let want = (s[0].exp() * f.get(0, c) + s[1].exp() * f.get(1, c)) / z;
                assert!((out.get(i, c) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn multi_head_splits_columns() {
        let mut p = zero_params(1, 4, 1);
        p.heads = 2;
        let r = mat(&[&[1.0, 0.0, 0.0, 3.0], &[0.0, 1.0, -1.0, 0.0]]);
        let f = mat(&[&[0.2, 0.4, 1.0, -1.0], &[1.0, 0.1, 0.0, 2.0]]);
        let (out, w) = cross_attention_with_weights(&r, &f, &p).unwrap();
        assert_eq!(w.len(), 2);
        let mut single = zero_params(1, 2, 1);
        single.heads = 1;
        let left = cross_attention(&r.col_block(0, 2), &f.col_block(0, 2), &single).unwrap();
        let right = cross_attention(&r.col_block(2, 4), &f.col_block(2, 4), &single).unwrap();
        assert_eq!(out, left.hconcat(&right).unwrap());
        p.heads = 3;
        assert!(p.validate().is_err());
    }

    #[test]
    fn fuse_projections() {
        let mut p = zero_params(1, 2, 1);
        let r = mat(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let a = mat(&[&[-1.0, 0.5], &[7.0, 8.0]]);
        p.w_fuse = mat(&[&[1.0, 0.0], &[0.0, 1.0], &[0.0, 0.0], &[0.0, 0.0]]);
        assert_eq!(fuse(&r, &a, &p).unwrap(), r);
        p.w_fuse = mat(&[&[0.0, 0.0], &[0.0, 0.0], &[1.0, 0.0], &[0.0, 1.0]]);
        assert_eq!(fuse(&r, &a, &p).unwrap(), a);

        p.w_fuse = mat(&[&[0.5, -1.0], &[2.0, 0.25], &[1.0, 1.0], &[-3.0, 0.0]]);
        p.b_fuse = vec![0.1, -0.2];
        let out = fuse(&r, &a, &p).unwrap();
        for i in 0..2 {
            let x = [r.get(i, 0), r.get(i, 1), a.get(i, 0), a.get(i, 1)];
            for c in 0..2 {
                let want: f64 = (0..4).map(|k| x[k] * p.w_fuse.get(k, c)).sum::<f64>() + p.b_fuse[c];
                assert!((out.get(i, c) - want).abs() < 1e-12);
            }
        }
        assert!(fuse(&r, &Matrix::zeros(1, 2), &p).is_err());
    }

    #[test]
    fn pipeline_empty_batch() {
        let p = EnhanceParams::random(3, 6, 4, 2).unwrap();
        let mem = memory::init_memory(2, 4, 1, 0.5).unwrap();
        let out = enhance_pipeline(&Matrix::zeros(0, 6), &mem, &p).unwrap();
        assert_eq!(out.r.shape(), (0, 4));
        assert_eq!(out.p.shape(), (0, 3));
        assert_eq!(out.f_c.shape(), (0, 4));
        assert_eq!(out.r_enh.shape(), (0, 4));
    }

    #[test]
    fn pipeline_saturated_classifier_selects_rows() {
        let mut p = EnhanceParams::random(3, 6, 4, 2).unwrap();
        p.w_cls = Matrix::zeros(4, 3);
        p.b_cls = vec![-1000.0, 1000.0, -1000.0];
        let mem = memory::init_memory(2, 4, 1, 0.5).unwrap();
        let r_hat = Matrix::new(2, 6, (0..12).map(|i| i as f64 * 0.1).collect()).unwrap();
        let out = enhance_pipeline(&r_hat, &mem, &p).unwrap();
        for row in out.f_c.iter_rows() {
            assert_eq!(row, mem.row(1));
        }
    }

    #[test]
    fn pipeline_rejects_mismatched_memory() {
        let p = EnhanceParams::random(3, 6, 4, 2).unwrap();
        let mem = memory::init_memory(3, 4, 1, 0.5).unwrap();
        assert!(enhance_pipeline(&Matrix::zeros(1, 6), &mem, &p).is_err());
        let mem = memory::init_memory(2, 5, 1, 0.5).unwrap();
        assert!(enhance_pipeline(&Matrix::zeros(1, 6), &mem, &p).is_err());
    }
}
