//! Regularized LDA over x-vectors with a cosine-similarity backend.
//!
//! Conventional LDA keeps at most C−1 dimensions, since the between-class
//! scatter has rank C−1. Adding βI to the between-class matrix makes it full
//! rank, so any number of dimensions can be preserved; αI keeps the
//! within-class matrix safely invertible. Scatter estimates average the
//! per-class covariances (each normalized by its own count) and the class
//! means around the mean of class means:
//!
//! ```text
//! S_w = αI + (1/C) Σ_c (1/N_c) Σ_n (w_c^n − w̄_c)(w_c^n − w̄_c)ᵀ
//! S_b = βI + (1/C) Σ_c (w̄_c − w̄)(w̄_c − w̄)ᵀ
//! ```
//!
//! The projection solves `S_b v = λ S_w v` via Cholesky `S_w = LLᵀ` and a
//! symmetric eigendecomposition of `L⁻¹ S_b L⁻ᵀ`; rows are scaled so the
//! projected within-class covariance is whitened (vᵀ S_w v = 1) and
//! sign-fixed so the largest-magnitude entry is positive. Class
//! representations are unit-normalized means of projected training vectors;
//! scoring is the cosine against each representation and the class with the
//! highest score wins.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector};
use thiserror::Error;

use crate::scenes::{ScoreVector, NUM_SCENES};

#[derive(Debug, Error)]
pub enum RldaError {
    #[error("class {0} has fewer than 2 vectors")]
    ClassTooSmall(usize),
    #[error("label {label} out of range for {classes} classes")]
    BadLabel { label: usize, classes: usize },
    #[error("vector dimension {got} does not match {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("requested {out_dim} dimensions from {in_dim}-dim input")]
    TooManyDimensions { out_dim: usize, in_dim: usize },
    #[error("within-class matrix is not positive definite (alpha too small)")]
    NotPositiveDefinite,
    #[error("bad RLDA file: {0}")]
    BadFile(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

/// Labeled embedding collection; every class must appear at least twice.
pub struct LabeledXVectorSet {
    pub dim: usize,
    pub vectors: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub counts: [usize; NUM_SCENES],
}

impl LabeledXVectorSet {
    pub fn new(vectors: Vec<Vec<f64>>, labels: Vec<usize>) -> Result<Self, RldaError> {
        assert_eq!(vectors.len(), labels.len(), "one label per vector");
        let dim = vectors.first().map(|v| v.len()).unwrap_or(0);
        let mut counts = [0usize; NUM_SCENES];
        for (v, &l) in vectors.iter().zip(&labels) {
            if v.len() != dim {
                return Err(RldaError::DimensionMismatch { expected: dim, got: v.len() });
            }
            if l >= NUM_SCENES {
                return Err(RldaError::BadLabel { label: l, classes: NUM_SCENES });
            }
            counts[l] += 1;
        }
        if let Some(c) = counts.iter().position(|&n| n == 1) {
            return Err(RldaError::ClassTooSmall(c));
        }
        Ok(LabeledXVectorSet { dim, vectors, labels, counts })
    }

    /// Classes that actually appear, in index order.
    pub fn present_classes(&self) -> Vec<usize> {
        (0..NUM_SCENES).filter(|&c| self.counts[c] > 0).collect()
    }
}

#[derive(Debug, Clone)]
pub struct RldaConfig {
    pub alpha: f64,
    pub beta: f64,
    pub out_dim: usize,
}

impl Default for RldaConfig {
    fn default() -> Self {
        RldaConfig { alpha: 0.001, beta: 0.01, out_dim: 100 }
    }
}

impl RldaConfig {
    /// Default regularization at a different output dimension.
    pub fn with_out_dim(out_dim: usize) -> Self {
        RldaConfig { out_dim, ..Default::default() }
    }
}

/// Fitted projection plus per-scene representations in projected space.
#[derive(Debug, Clone)]
pub struct RldaTransform {
    pub alpha: f64,
    pub beta: f64,
    /// `[out_dim × in_dim]`.
    pub projection: DMatrix<f64>,
    /// Unit-normalized per-class means of projected training vectors;
    /// all-zero rows mark classes absent from training.
    pub class_means: Vec<DVector<f64>>,
    /// Retained generalized eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
}

/// Regularized within/between-class scatter matrices.
pub fn scatter_matrices(
    set: &LabeledXVectorSet,
    alpha: f64,
    beta: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>), RldaError> {
    let d = set.dim;
    let classes = set.present_classes();
    if classes.is_empty() {
        return Err(RldaError::ClassTooSmall(0));
    }
    let c_count = classes.len() as f64;

    // per-class means
    let mut means: Vec<DVector<f64>> = vec![DVector::zeros(d); NUM_SCENES];
    for (v, &l) in set.vectors.iter().zip(&set.labels) {
        for i in 0..d {
            means[l][i] += v[i];
        }
    }
    for &c in &classes {
        means[c] /= set.counts[c] as f64;
    }

    let mut s_w = DMatrix::<f64>::identity(d, d) * alpha;
    for (v, &l) in set.vectors.iter().zip(&set.labels) {
        let weight = 1.0 / (c_count * set.counts[l] as f64);
        // rank-one update of the lower triangle
        for i in 0..d {
            let di = v[i] - means[l][i];
            for j in 0..=i {
                s_w[(i, j)] += weight * di * (v[j] - means[l][j]);
            }
        }
    }
    // mirror to the upper triangle
    for i in 0..d {
        for j in 0..i {
            s_w[(j, i)] = s_w[(i, j)];
        }
    }

    // w̄ is the mean of the class means, not the global sample mean
    let mut grand = DVector::<f64>::zeros(d);
    for &c in &classes {
        grand += &means[c];
    }
    grand /= c_count;

    let mut s_b = DMatrix::<f64>::identity(d, d) * beta;
    for &c in &classes {
        let diff = &means[c] - &grand;
        for i in 0..d {
            for j in 0..=i {
                s_b[(i, j)] += diff[i] * diff[j] / c_count;
            }
        }
    }
    for i in 0..d {
        for j in 0..i {
            s_b[(j, i)] = s_b[(i, j)];
        }
    }
    Ok((s_w, s_b))
}

/// Solve the regularized generalized eigenproblem and fit class means.
pub fn fit_rlda(set: &LabeledXVectorSet, config: &RldaConfig) -> Result<RldaTransform, RldaError> {
    let d = set.dim;
    if config.out_dim > d {
        return Err(RldaError::TooManyDimensions { out_dim: config.out_dim, in_dim: d });
    }
    let (s_w, s_b) = scatter_matrices(set, config.alpha, config.beta)?;

    // S_b v = λ S_w v  ⇔  (L⁻¹ S_b L⁻ᵀ) u = λ u with v = L⁻ᵀ u
    let chol = Cholesky::new(s_w.clone()).ok_or(RldaError::NotPositiveDefinite)?;
    let l = chol.l();
    // m = L⁻¹ S_b L⁻ᵀ, built by two triangular solves (S_b is symmetric)
    let mut m = s_b.clone();
    if !l.solve_lower_triangular_mut(&mut m) {
        return Err(RldaError::NotPositiveDefinite);
    }
    m.transpose_mut();
    if !l.solve_lower_triangular_mut(&mut m) {
        return Err(RldaError::NotPositiveDefinite);
    }
    // symmetrize against rounding
    m = (&m + m.transpose()) * 0.5;

    let eig = m.symmetric_eigen();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let lt = l.transpose();
    let mut projection = DMatrix::<f64>::zeros(config.out_dim, d);
    let mut eigenvalues = Vec::with_capacity(config.out_dim);
    for (row, &idx) in order.iter().take(config.out_dim).enumerate() {
        eigenvalues.push(eig.eigenvalues[idx]);
        let u = eig.eigenvectors.column(idx).into_owned();
        // v = L⁻ᵀ u
        let v = lt.solve_upper_triangular(&u).ok_or(RldaError::NotPositiveDefinite)?;
        // whiten: vᵀ S_w v = 1
        let quad = (v.transpose() * &s_w * &v)[(0, 0)];
        let mut v = v / quad.sqrt();
        // deterministic sign: largest-magnitude entry positive
        let pivot = v.iter().cloned().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        if pivot < 0.0 {
            v = -v;
        }
        projection.row_mut(row).copy_from(&v.transpose());
    }

    // class representations: unit-normalized means of projected vectors
    let mut sums: Vec<DVector<f64>> = vec![DVector::zeros(config.out_dim); NUM_SCENES];
    for (vec, &l) in set.vectors.iter().zip(&set.labels) {
        let x = DVector::from_column_slice(vec);
        sums[l] += &projection * x;
    }
    let mut class_means = Vec::with_capacity(NUM_SCENES);
    for c in 0..NUM_SCENES {
        if set.counts[c] > 0 {
            let mean = &sums[c] / set.counts[c] as f64;
            let norm = mean.norm();
            class_means.push(if norm > 0.0 { mean / norm } else { mean });
        } else {
            class_means.push(DVector::zeros(config.out_dim));
        }
    }

    Ok(RldaTransform {
        alpha: config.alpha,
        beta: config.beta,
        projection,
        class_means,
        eigenvalues,
    })
}

impl RldaTransform {
    pub fn out_dim(&self) -> usize {
        self.projection.nrows()
    }

    pub fn in_dim(&self) -> usize {
        self.projection.ncols()
    }

    /// Project an embedding into the discriminant space.
    pub fn project(&self, x: &[f64]) -> Result<DVector<f64>, RldaError> {
        if x.len() != self.in_dim() {
            return Err(RldaError::DimensionMismatch { expected: self.in_dim(), got: x.len() });
        }
        Ok(&self.projection * DVector::from_column_slice(x))
    }

    /// Cosine similarity against every class representation.
    ///
    /// Returns the ten scores and a degeneracy flag; a zero-norm projection
    /// scores 0 everywhere with the flag raised.
    pub fn cosine_scores(&self, x: &[f64]) -> Result<(ScoreVector, bool), RldaError> {
        let projected = self.project(x)?;
        let norm = projected.norm();
        let mut scores = [0.0f64; NUM_SCENES];
        if norm == 0.0 {
            return Ok((scores, true));
        }
        let unit = projected / norm;
        for (c, mean) in self.class_means.iter().enumerate() {
            scores[c] = unit.dot(mean);
        }
        Ok((scores, false))
    }
}

/// Map cosine scores onto a posterior-like simplex via temperature softmax,
/// so they can be fused with network posteriors. Argmax is preserved for
/// any positive temperature.
pub fn calibrate_cosine(scores: &ScoreVector, temperature: f64) -> ScoreVector {
    assert!(temperature > 0.0, "temperature must be positive");
    let mut out = [0.0f64; NUM_SCENES];
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &s) in out.iter_mut().zip(scores) {
        *o = ((s - max) / temperature).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
    out
}

const MAGIC: &[u8; 4] = b"RLDA";

pub fn save_rlda(path: impl AsRef<Path>, rlda: &RldaTransform) -> Result<(), RldaError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    out.write_all(MAGIC)?;
    out.write_all(&(rlda.out_dim() as u32).to_le_bytes())?;
    out.write_all(&(rlda.in_dim() as u32).to_le_bytes())?;
    out.write_all(&(rlda.class_means.len() as u32).to_le_bytes())?;
    out.write_all(&rlda.alpha.to_le_bytes())?;
    out.write_all(&rlda.beta.to_le_bytes())?;
    for i in 0..rlda.out_dim() {
        for j in 0..rlda.in_dim() {
            out.write_all(&rlda.projection[(i, j)].to_le_bytes())?;
        }
    }
    for mean in &rlda.class_means {
        for v in mean.iter() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    for v in &rlda.eigenvalues {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn load_rlda(path: impl AsRef<Path>) -> Result<RldaTransform, RldaError> {
    let mut bytes = Vec::new();
    std::fs::File::open(&path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 32 || &bytes[0..4] != MAGIC {
        return Err(RldaError::BadFile("missing RLDA magic".into()));
    }
    let u32_at = |at: usize| {
        u32::from_le_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]]) as usize
    };
    let (out_dim, in_dim, n_classes) = (u32_at(4), u32_at(8), u32_at(12));
    let f64_at = |at: usize| f64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
    let alpha = f64_at(16);
    let beta = f64_at(24);
    let expected = 32 + 8 * (out_dim * in_dim + n_classes * out_dim + out_dim);
    if bytes.len() != expected {
        return Err(RldaError::BadFile(format!(
            "expected {expected} bytes, found {}",
            bytes.len()
        )));
    }
    let mut at = 32;
    let mut projection = DMatrix::zeros(out_dim, in_dim);
    for i in 0..out_dim {
        for j in 0..in_dim {
            projection[(i, j)] = f64_at(at);
            at += 8;
        }
    }
    let mut class_means = Vec::with_capacity(n_classes);
    for _ in 0..n_classes {
        let mut m = DVector::zeros(out_dim);
        for i in 0..out_dim {
            m[i] = f64_at(at);
            at += 8;
        }
        class_means.push(m);
    }
    let mut eigenvalues = Vec::with_capacity(out_dim);
    for _ in 0..out_dim {
        eigenvalues.push(f64_at(at));
        at += 8;
    }
    Ok(RldaTransform { alpha, beta, projection, class_means, eigenvalues })
}

const XVEC_MAGIC: &[u8; 4] = b"SXV1";

/// Write labeled embeddings: magic `SXV1`, u32 count, u32 dim, then per
/// record a u16 id length, the UTF-8 segment id, and dim 64-bit floats.
pub fn save_xvectors(
    path: impl AsRef<Path>,
    records: &[(String, Vec<f64>)],
) -> Result<(), RldaError> {
    let dim = records.first().map(|(_, v)| v.len()).unwrap_or(0);
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    out.write_all(XVEC_MAGIC)?;
    out.write_all(&(records.len() as u32).to_le_bytes())?;
    out.write_all(&(dim as u32).to_le_bytes())?;
    for (id, vector) in records {
        if vector.len() != dim {
            return Err(RldaError::DimensionMismatch { expected: dim, got: vector.len() });
        }
        out.write_all(&(id.len() as u16).to_le_bytes())?;
        out.write_all(id.as_bytes())?;
        for v in vector {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn load_xvectors(path: impl AsRef<Path>) -> Result<Vec<(String, Vec<f64>)>, RldaError> {
    let mut bytes = Vec::new();
    std::fs::File::open(&path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 12 || &bytes[0..4] != XVEC_MAGIC {
        return Err(RldaError::BadFile("missing SXV1 magic".into()));
    }
    let count = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let mut at = 12;
    let mut records = Vec::with_capacity(count);
    for _ in 0..count {
        if at + 2 > bytes.len() {
            return Err(RldaError::BadFile("truncated record header".into()));
        }
        let id_len = u16::from_le_bytes([bytes[at], bytes[at + 1]]) as usize;
        at += 2;
        if at + id_len + 8 * dim > bytes.len() {
            return Err(RldaError::BadFile("truncated record".into()));
        }
        let id = String::from_utf8(bytes[at..at + id_len].to_vec())
            .map_err(|_| RldaError::BadFile("segment id is not UTF-8".into()))?;
        at += id_len;
        let mut vector = Vec::with_capacity(dim);
        for _ in 0..dim {
            vector.push(f64::from_le_bytes(bytes[at..at + 8].try_into().unwrap()));
            at += 8;
        }
        records.push((id, vector));
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn toy_set(dim: usize, per_class: usize, classes: usize, seed: u64) -> LabeledXVectorSet {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let centers: Vec<Vec<f64>> = (0..classes)
            .map(|_| (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect())
            .collect();
        let mut vectors = Vec::new();
        let mut labels = Vec::new();
        for (c, center) in centers.iter().enumerate() {
            for _ in 0..per_class {
                vectors.push(
                    center.iter().map(|&m| m + rng.random_range(-0.5..0.5)).collect(),
                );
                labels.push(c);
            }
        }
        LabeledXVectorSet::new(vectors, labels).unwrap()
    }

    #[test]
    fn identical_vectors_give_pure_regularization() {
        let v = vec![1.0, -2.0, 0.5];
        let set = LabeledXVectorSet::new(
            vec![v.clone(), v.clone(), v.clone(), v.clone()],
            vec![0, 0, 1, 1],
        )
        .unwrap();
        let (s_w, s_b) = scatter_matrices(&set, 0.37, 0.11).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let expect_w = if i == j { 0.37 } else { 0.0 };
                let expect_b = if i == j { 0.11 } else { 0.0 };
                assert!((s_w[(i, j)] - expect_w).abs() < 1e-15);
                assert!((s_b[(i, j)] - expect_b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn two_class_2d_hand_computation() {
        // class 0: (1,0), (−1,0) → mean (0,0); class 1: (3,1), (3,−1) → mean (3,0)
        let set = LabeledXVectorSet::new(
            vec![vec![1.0, 0.0], vec![-1.0, 0.0], vec![3.0, 1.0], vec![3.0, -1.0]],
            vec![0, 0, 1, 1],
        )
        .unwrap();
        let (s_w, s_b) = scatter_matrices(&set, 0.0, 0.0).unwrap();
        // S_w = (1/2)[ (1/2)((1,0)(1,0)ᵀ + (1,0)(1,0)ᵀ) + (1/2)((0,1)(0,1)ᵀ + (0,1)(0,1)ᵀ) ]
        //     = (1/2)[ diag(1,0) + diag(0,1) ] = diag(0.5, 0.5)
        assert!((s_w[(0, 0)] - 0.5).abs() < 1e-12);
        assert!((s_w[(1, 1)] - 0.5).abs() < 1e-12);
        assert!(s_w[(0, 1)].abs() < 1e-12);
        // grand mean = (1.5, 0); diffs ±(1.5, 0) → S_b = diag(2.25, 0)
        assert!((s_b[(0, 0)] - 2.25).abs() < 1e-12);
        assert!(s_b[(1, 1)].abs() < 1e-12);
    }

    #[test]
    fn scatter_matches_brute_force_double_loop() {
        let set = toy_set(6, 5, 4, 9);
        let (s_w, s_b) = scatter_matrices(&set, 0.001, 0.01).unwrap();
        // oracle: direct translation of the displayed formulas
        let d = 6;
        let classes = set.present_classes();
        let mut means = vec![vec![0.0; d]; 10];
        for (v, &l) in set.vectors.iter().zip(&set.labels) {
            for i in 0..d {
                means[l][i] += v[i] / set.counts[l] as f64;
            }
        }
        let c = classes.len() as f64;
        let mut w_oracle = vec![vec![0.0; d]; d];
        for (v, &l) in set.vectors.iter().zip(&set.labels) {
            for i in 0..d {
                for j in 0..d {
                    w_oracle[i][j] += (v[i] - means[l][i]) * (v[j] - means[l][j])
                        / (c * set.counts[l] as f64);
                }
            }
        }
        let mut grand = vec![0.0; d];
        for &cl in &classes {
            for i in 0..d {
                grand[i] += means[cl][i] / c;
            }
        }
        let mut b_oracle = vec![vec![0.0; d]; d];
        for &cl in &classes {
            for i in 0..d {
                for j in 0..d {
                    b_oracle[i][j] += (means[cl][i] - grand[i]) * (means[cl][j] - grand[j]) / c;
                }
            }
        }
        for i in 0..d {
            for j in 0..d {
                let ew = w_oracle[i][j] + if i == j { 0.001 } else { 0.0 };
                let eb = b_oracle[i][j] + if i == j { 0.01 } else { 0.0 };
                assert!((s_w[(i, j)] - ew).abs() < 1e-12, "S_w[{i},{j}]");
                assert!((s_b[(i, j)] - eb).abs() < 1e-12, "S_b[{i},{j}]");
            }
        }
        // symmetry to machine precision
        for i in 0..d {
            for j in 0..d {
                assert_eq!(s_w[(i, j)], s_w[(j, i)]);
                assert_eq!(s_b[(i, j)], s_b[(j, i)]);
            }
        }
    }

    #[test]
    fn symmetric_two_cluster_problem_picks_the_separating_axis() {
        // means (±1, 0) with exactly isotropic within-class scatter: noise
        // offsets come in sign-symmetric, coordinate-swapped quadruples, so
        // the discriminant is exactly the first axis (up to sign).
        let offsets = [(0.3, 0.2), (0.2, 0.3), (0.1, 0.25), (0.25, 0.1)];
        let mut vectors = Vec::new();
        let mut labels = Vec::new();
        for c in 0..2usize {
            let mx = if c == 0 { -1.0 } else { 1.0 };
            for &(a, b) in &offsets {
                for (sa, sb) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
                    vectors.push(vec![mx + sa * a, sb * b]);
                    labels.push(c);
                }
            }
        }
        let set = LabeledXVectorSet::new(vectors, labels).unwrap();
        let rlda =
            fit_rlda(&set, &RldaConfig { alpha: 1e-6, beta: 1e-6, out_dim: 1 }).unwrap();
        let (r0, r1) = (rlda.projection[(0, 0)], rlda.projection[(0, 1)]);
        assert!(r0 > 0.0, "sign convention makes the dominant entry positive");
        assert!(r0.abs() > 1e6 * r1.abs(), "first axis should dominate: [{r0}, {r1}]");
    }

    #[test]
    fn beta_keeps_all_eigenvalues_positive_beyond_rank() {
        let set = toy_set(16, 4, 10, 11);
        let full = fit_rlda(&set, &RldaConfig { alpha: 0.001, beta: 0.01, out_dim: 16 }).unwrap();
        assert!(full.eigenvalues.iter().all(|&l| l > 0.0));
        // with β = 0, at most C−1 = 9 eigenvalues exceed the noise floor
        let flat = fit_rlda(&set, &RldaConfig { alpha: 0.001, beta: 0.0, out_dim: 16 }).unwrap();
        let above: usize = flat.eigenvalues.iter().filter(|&&l| l > 1e-10).count();
        assert!(above <= 9, "rank(S_b) bound violated: {above} eigenvalues above 1e-10");
    }

    #[test]
    fn projected_within_class_covariance_is_whitened() {
        let set = toy_set(8, 50, 5, 13);
        let config = RldaConfig { alpha: 0.001, beta: 0.01, out_dim: 8 };
        let rlda = fit_rlda(&set, &config).unwrap();
        let (s_w, _) = scatter_matrices(&set, config.alpha, config.beta).unwrap();
        let projected_cov = &rlda.projection * &s_w * rlda.projection.transpose();
        let mut frob = 0.0;
        for i in 0..8 {
            for j in 0..8 {
                let expect = if i == j { 1.0 } else { 0.0 };
                frob += (projected_cov[(i, j)] - expect).powi(2);
            }
        }
        assert!(frob.sqrt() < 1e-6, "Frobenius distance {}", frob.sqrt());
    }

    #[test]
    fn project_is_linear_and_matches_loop_oracle() {
        let set = toy_set(5, 10, 3, 17);
        let rlda = fit_rlda(&set, &RldaConfig { alpha: 0.01, beta: 0.01, out_dim: 3 }).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(23);
        let a: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        // zero → zero
        assert!(rlda.project(&vec![0.0; 5]).unwrap().norm() == 0.0);
        // linearity
        let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let pa = rlda.project(&a).unwrap();
        let pb = rlda.project(&b).unwrap();
        let ps = rlda.project(&sum).unwrap();
        for i in 0..3 {
            assert!((ps[i] - pa[i] - pb[i]).abs() < 1e-9);
        }
        // loop oracle
        for i in 0..3 {
            let mut acc = 0.0;
            for j in 0..5 {
                acc += rlda.projection[(i, j)] * a[j];
            }
            assert!((pa[i] - acc).abs() < 1e-12);
        }
        // dimension mismatch
        assert!(matches!(
            rlda.project(&[0.0; 4]),
            Err(RldaError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn cosine_scores_against_brute_force() {
        let set = toy_set(8, 20, 5, 19);
        let rlda = fit_rlda(&set, &RldaConfig::with_out_dim(4)).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(29);
        for _ in 0..5 {
            let x: Vec<f64> = (0..8).map(|_| rng.random_range(-2.0..2.0)).collect();
            let (scores, degenerate) = rlda.cosine_scores(&x).unwrap();
            assert!(!degenerate);
            let p = rlda.project(&x).unwrap();
            let pn = p.norm();
            for c in 0..5 {
                let m = &rlda.class_means[c];
                let dot: f64 = (0..4).map(|i| p[i] * m[i]).sum();
                let expect = dot / pn; // class means are already unit norm
                assert!((scores[c] - expect).abs() < 1e-9);
                assert!(scores[c] <= 1.0 + 1e-9 && scores[c] >= -1.0 - 1e-9);
            }
        }
    }

    #[test]
    fn cosine_scores_are_scale_invariant() {
        let set = toy_set(6, 10, 4, 31);
        let rlda = fit_rlda(&set, &RldaConfig::with_out_dim(3)).unwrap();
        let x = vec![0.4, -1.2, 0.8, 0.1, -0.6, 2.0];
        let scaled: Vec<f64> = x.iter().map(|v| v * 37.5).collect();
        let (s1, _) = rlda.cosine_scores(&x).unwrap();
        let (s2, _) = rlda.cosine_scores(&scaled).unwrap();
        for c in 0..10 {
            assert!((s1[c] - s2[c]).abs() < 1e-9);
        }
    }

    #[test]
    fn class_mean_vector_scores_one_for_its_class() {
        let set = toy_set(5, 12, 3, 37);
        let rlda = fit_rlda(&set, &RldaConfig::with_out_dim(3)).unwrap();
        // build an input whose projection equals class 1's mean: use the
        // pseudo-inverse trick — project the mean back is not exact, so
        // instead verify via a vector already in projected space is not
        // possible through the public API; check the dominant class instead.
        let mut per_class_hits = 0;
        for c in set.present_classes() {
            let members: Vec<&Vec<f64>> = set
                .vectors
                .iter()
                .zip(&set.labels)
                .filter(|(_, &l)| l == c)
                .map(|(v, _)| v)
                .collect();
            let (scores, _) = rlda.cosine_scores(members[0]).unwrap();
            let arg = crate::scenes::argmax(&scores);
            if arg == c {
                per_class_hits += 1;
            }
        }
        assert!(per_class_hits >= 2, "separable toy data should mostly classify right");
    }

    #[test]
    fn zero_projection_flags_degenerate() {
        let set = toy_set(4, 8, 2, 41);
        let rlda = fit_rlda(&set, &RldaConfig::with_out_dim(2)).unwrap();
        let (scores, degenerate) = rlda.cosine_scores(&[0.0; 4]).unwrap();
        assert!(degenerate);
        assert!(scores.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn calibration_preserves_argmax_and_normalizes() {
        let scores = [0.3, -0.1, 0.9, 0.2, 0.0, -0.5, 0.88, 0.1, -0.2, 0.4];
        for temp in [0.05, 0.1, 1.0, 10.0] {
            let post = calibrate_cosine(&scores, temp);
            assert!((post.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert_eq!(crate::scenes::argmax(&post), crate::scenes::argmax(&scores));
        }
        // equal scores → uniform
        let post = calibrate_cosine(&[0.5; 10], 0.1);
        for &p in &post {
            assert!((p - 0.1).abs() < 1e-12);
        }
        // closed form at T = 0.1 for a one-hot score vector
        let mut one = [0.0; 10];
        one[0] = 1.0;
        let post = calibrate_cosine(&one, 0.1);
        let e10 = (1.0f64 / 0.1).exp();
        let expect = e10 / (e10 + 9.0);
        assert!((post[0] - expect).abs() < 1e-9);
    }

    #[test]
    fn rotation_invariance_of_decisions() {
        let set = toy_set(6, 15, 4, 43);
        let config = RldaConfig { alpha: 0.001, beta: 0.01, out_dim: 4 };
        let rlda = fit_rlda(&set, &config).unwrap();

        // random orthogonal matrix from Gram-Schmidt over a seeded basis
        let mut rng = ChaCha12Rng::seed_from_u64(47);
        let raw = DMatrix::<f64>::from_fn(6, 6, |_, _| rng.random_range(-1.0..1.0));
        let q = raw.qr().q();

        let rotate = |v: &Vec<f64>| -> Vec<f64> {
            (&q * DVector::from_column_slice(v)).iter().cloned().collect()
        };
        let rotated_set = LabeledXVectorSet::new(
            set.vectors.iter().map(&rotate).collect(),
            set.labels.clone(),
        )
        .unwrap();
        let rlda_rot = fit_rlda(&rotated_set, &config).unwrap();

        let mut test_rng = ChaCha12Rng::seed_from_u64(53);
        for _ in 0..20 {
            let x: Vec<f64> = (0..6).map(|_| test_rng.random_range(-2.0..2.0)).collect();
            let (s1, _) = rlda.cosine_scores(&x).unwrap();
            let (s2, _) = rlda_rot.cosine_scores(&rotate(&x)).unwrap();
            assert_eq!(
                crate::scenes::argmax(&s1),
                crate::scenes::argmax(&s2),
                "decision changed under joint rotation"
            );
        }
    }

    #[test]
    fn xvector_file_round_trip() {
        let records = vec![
            ("seg-a".to_string(), vec![1.0, -2.5, 0.125]),
            ("seg-b".to_string(), vec![0.0, 7.25, -0.5]),
        ];
        let path = std::env::temp_dir().join(format!("sf_xv_{}.bin", std::process::id()));
        save_xvectors(&path, &records).unwrap();
        let back = load_xvectors(&path).unwrap();
        std::fs::remove_file(&path).ok();
        assert_eq!(back, records);
    }

    #[test]
    fn rlda_file_round_trip() {
        let set = toy_set(7, 10, 3, 59);
        let rlda = fit_rlda(&set, &RldaConfig::with_out_dim(5)).unwrap();
        let path = std::env::temp_dir().join(format!("sf_rlda_{}.bin", std::process::id()));
        save_rlda(&path, &rlda).unwrap();
        let back = load_rlda(&path).unwrap();
        std::fs::remove_file(&path).ok();
        assert_eq!(back.alpha, rlda.alpha);
        assert_eq!(back.beta, rlda.beta);
        assert_eq!(back.projection, rlda.projection);
        assert_eq!(back.eigenvalues, rlda.eigenvalues);
        for (a, b) in back.class_means.iter().zip(&rlda.class_means) {
            assert_eq!(a, b);
        }
    }
}
