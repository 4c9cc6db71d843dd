//! Verification back-end: centring and length normalisation, LDA, the
//! two-covariance PLDA model trained by EM, and the two scoring rules.
//!
//! Scatter matrices are normalised by the number of vectors `N`:
//!
//! ```text
//! S_w = 1/N Σ_k Σ_{i∈k} (x_i − m_k)(x_i − m_k)ᵀ
//! S_b = 1/N Σ_k n_k (m_k − m)(m_k − m)ᵀ
//! ```
//!
//! PLDA models a speaker mean `y ~ N(μ, B)` and each utterance as
//! `x ~ N(y, W)`.

use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vecio::EmbeddingDataset;

/// Relative floor added to `S_w` before the generalised eigenproblem.
pub const SW_FLOOR: f64 = 1e-6;
/// Smallest eigenvalue allowed in the PLDA within-speaker covariance.
pub const W_MIN_EIGEN: f64 = 1e-10;

fn check_dim(expected: usize, got: usize, what: &str) -> Result<()> {
    if expected != got {
        return Err(Error::Dimension(format!(
            "{what}: expected {expected}, got {got}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Preproc {
    pub mean: Vec<f64>,
    pub length_norm: bool,
}

pub fn fit_preproc(ds: &EmbeddingDataset, length_norm: bool) -> Result<Preproc> {
    if ds.is_empty() {
        return Err(Error::Data(
            "cannot fit preprocessing on an empty dataset".into(),
        ));
    }
    let mut mean = vec![0.0; ds.dim()];
    for r in ds.records() {
        for (m, v) in mean.iter_mut().zip(&r.vector) {
            *m += v;
        }
    }
    let n = ds.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    Ok(Preproc { mean, length_norm })
}

impl Preproc {
    /// `v − mean`, rescaled to norm `√d` when length normalisation is on.
    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.mean.len(), v.len(), "preprocessing input")?;
        let mut out: Vec<f64> = v.iter().zip(&self.mean).map(|(x, m)| x - m).collect();
        if self.length_norm {
            let norm = out.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(Error::Numeric(
                    "cannot length-normalise a zero vector".into(),
                ));
            }
            let k = (out.len() as f64).sqrt() / norm;
            out.iter_mut().for_each(|x| *x *= k);
        }
        Ok(out)
    }
}

/// Per-speaker sums and counts, in speaker-index order (speakers with no
/// records are skipped).
struct SpeakerStats {
    counts: Vec<usize>,
    sums: Vec<DVector<f64>>,
    members: Vec<Vec<usize>>,
}

fn speaker_stats(ds: &EmbeddingDataset) -> SpeakerStats {
    let k = ds.n_speakers();
    let mut members = vec![Vec::new(); k];
    for i in 0..ds.len() {
        members[ds.speaker_label(i)].push(i);
    }
    members.retain(|m| !m.is_empty());
    let sums = members
        .iter()
        .map(|m| {
            let mut s = DVector::zeros(ds.dim());
            for &i in m {
                s += DVector::from_column_slice(&ds.record(i).vector);
            }
            s
        })
        .collect();
    SpeakerStats {
        counts: members.iter().map(|m| m.len()).collect(),
        sums,
        members,
    }
}

/// Within- and between-speaker scatter, and the global mean.
pub fn scatter_matrices(ds: &EmbeddingDataset) -> (DMatrix<f64>, DMatrix<f64>, DVector<f64>) {
    let d = ds.dim();
    let stats = speaker_stats(ds);
    let n = ds.len() as f64;
    let mean = stats.sums.iter().fold(DVector::zeros(d), |acc, s| acc + s) / n;
    let mut sw = DMatrix::zeros(d, d);
    let mut sb = DMatrix::zeros(d, d);
    for ((members, sum), &count) in stats.members.iter().zip(&stats.sums).zip(&stats.counts) {
        let mk = sum / count as f64;
        for &i in members {
            let c = DVector::from_column_slice(&ds.record(i).vector) - &mk;
            sw.ger(1.0, &c, &c, 1.0);
        }
        let dm = &mk - &mean;
        sb.ger(count as f64, &dm, &dm, 1.0);
    }
    (sw / n, sb / n, mean)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LdaModel {
    pub mean: DVector<f64>,
    /// `out_dim × D`; rows are generalised eigenvectors, `S_w`-orthonormal.
    pub projection: DMatrix<f64>,
    /// Descending.
    pub eigenvalues: Vec<f64>,
}

/// `S_w` with the relative floor `SW_FLOOR · tr(S_w)/D · I` added.
pub fn floored_within(sw: &DMatrix<f64>) -> DMatrix<f64> {
    let d = sw.nrows();
    let floor = SW_FLOOR * sw.trace() / d as f64;
    sw + DMatrix::identity(d, d) * floor
}

/// Solves `S_b v = λ S_w v` (with floored `S_w`) and keeps the `out_dim`
/// leading directions.
pub fn fit_lda(ds: &EmbeddingDataset, out_dim: usize) -> Result<LdaModel> {
    let stats_speakers = speaker_stats(ds).counts.len();
    if stats_speakers < 2 {
        return Err(Error::Data(format!(
            "LDA needs at least 2 speakers, found {stats_speakers}"
        )));
    }
    let max_dim = ds.dim().min(stats_speakers - 1);
    if out_dim == 0 || out_dim > max_dim {
        return Err(Error::Config(format!(
            "LDA output dimension {out_dim} must lie in [1, {max_dim}] (min(D, K−1))"
        )));
    }
    let (sw, sb, mean) = scatter_matrices(ds);
    let sw = floored_within(&sw);
    let chol = Cholesky::new(sw.clone()).ok_or_else(|| {
        Error::Numeric("within-speaker scatter is degenerate (not positive definite)".into())
    })?;
    let l = chol.l();
    let l_inv = l
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Numeric("within-speaker scatter is degenerate".into()))?;
    // M = L⁻¹ S_b L⁻ᵀ, symmetrised against rounding.
    let mut m = &l_inv * &sb * l_inv.transpose();
    m = (&m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut projection = DMatrix::zeros(out_dim, ds.dim());
    let mut eigenvalues = Vec::with_capacity(out_dim);
    for (row, &idx) in order.iter().take(out_dim).enumerate() {
        // v = L⁻ᵀ u gives vᵀ S_w v = uᵀ u = 1.
        let v = l_inv.transpose() * eig.eigenvectors.column(idx);
        projection.row_mut(row).copy_from(&v.transpose());
        eigenvalues.push(eig.eigenvalues[idx]);
    }
    Ok(LdaModel {
        mean,
        projection,
        eigenvalues,
    })
}

impl LdaModel {
    pub fn in_dim(&self) -> usize {
        self.projection.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.projection.nrows()
    }

    /// `projection · (v − mean)`.
    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.in_dim(), v.len(), "LDA input")?;
        let centred = DVector::from_column_slice(v) - &self.mean;
        Ok((&self.projection * centred).iter().copied().collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PldaModel {
    pub mu: DVector<f64>,
    /// Between-speaker covariance.
    pub b: DMatrix<f64>,
    /// Within-speaker covariance.
    pub w: DMatrix<f64>,
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Clamps eigenvalues from below.
fn floor_eigen(m: &DMatrix<f64>, min: f64) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetrize(m));
    if eig.eigenvalues.iter().all(|&l| l >= min) {
        return symmetrize(m);
    }
    let lambda = eig.eigenvalues.map(|l| l.max(min));
    symmetrize(
        &(&eig.eigenvectors * DMatrix::from_diagonal(&lambda) * eig.eigenvectors.transpose()),
    )
}

fn chol(m: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(m.clone())
        .ok_or_else(|| Error::Numeric(format!("{what} is not positive definite")))
}

fn log_det(c: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * c.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

struct PldaData {
    counts: Vec<usize>,
    sums: Vec<DVector<f64>>,
    vectors: Vec<Vec<DVector<f64>>>,
    n: usize,
    dim: usize,
}

fn plda_data(ds: &EmbeddingDataset) -> Result<PldaData> {
    let stats = speaker_stats(ds);
    let multi = stats.counts.iter().filter(|&&c| c >= 2).count();
    if multi < 2 {
        return Err(Error::Data(format!(
            "PLDA needs at least 2 speakers with 2 or more utterances, found {multi}"
        )));
    }
    let vectors = stats
        .members
        .iter()
        .map(|m| {
            m.iter()
                .map(|&i| DVector::from_column_slice(&ds.record(i).vector))
                .collect()
        })
        .collect();
    Ok(PldaData {
        counts: stats.counts,
        sums: stats.sums,
        vectors,
        n: ds.len(),
        dim: ds.dim(),
    })
}

/// Per-speaker posterior over the speaker mean `y_k`.
struct Posterior {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

struct EStep {
    posteriors: Vec<Posterior>,
    log_likelihood: f64,
}

fn e_step(model: &PldaModel, data: &PldaData) -> Result<EStep> {
    let d = data.dim;
    let b_chol = chol(&model.b, "PLDA between-speaker covariance")?;
    let w_chol = chol(&model.w, "PLDA within-speaker covariance")?;
    let b_inv = b_chol.inverse();
    let w_inv = w_chol.inverse();
    let (log_det_b, log_det_w) = (log_det(&b_chol), log_det(&w_chol));
    let b_inv_mu = &b_inv * &model.mu;
    let mu_term = model.mu.dot(&b_inv_mu);
    let ln_2pi = (2.0 * std::f64::consts::PI).ln();

    let mut posteriors = Vec::with_capacity(data.counts.len());
    let mut ll = 0.0;
    for ((&count, sum), xs) in data.counts.iter().zip(&data.sums).zip(&data.vectors) {
        let precision = symmetrize(&(&b_inv + &w_inv * count as f64));
        let p_chol = chol(&precision, "PLDA posterior precision")?;
        let h = &b_inv_mu + &w_inv * sum;
        let mean = p_chol.solve(&h);
        let log_det_precision = log_det(&p_chol);
        let quad_x: f64 = xs.iter().map(|x| x.dot(&(&w_inv * x))).sum();
        // log N(X_k) for the stacked utterances of one speaker, with the
        // speaker mean integrated out.
        ll += -0.5 * (count * d) as f64 * ln_2pi
            - 0.5 * count as f64 * log_det_w
            - 0.5 * log_det_b
            - 0.5 * log_det_precision
            - 0.5 * (quad_x + mu_term - mean.dot(&h));
        posteriors.push(Posterior {
            mean,
            cov: p_chol.inverse(),
        });
    }
    Ok(EStep {
        posteriors,
        log_likelihood: ll,
    })
}

fn m_step(data: &PldaData, post: &[Posterior]) -> Result<PldaModel> {
    let d = data.dim;
    let k = post.len() as f64;
    let mu = post.iter().fold(DVector::zeros(d), |acc, p| acc + &p.mean) / k;
    let mut b = DMatrix::zeros(d, d);
    let mut w = DMatrix::zeros(d, d);
    for ((p, xs), &count) in post.iter().zip(&data.vectors).zip(&data.counts) {
        let dm = &p.mean - &mu;
        b += &p.cov;
        b.ger(1.0, &dm, &dm, 1.0);
        for x in xs {
            let r = x - &p.mean;
            w.ger(1.0, &r, &r, 1.0);
        }
        w += &p.cov * count as f64;
    }
    let b = floor_eigen(&(b / k), 0.0);
    let w = symmetrize(&(w / data.n as f64));
    let w_max = SymmetricEigen::new(w.clone()).eigenvalues.max();
    if !(w_max > W_MIN_EIGEN) {
        return Err(Error::Numeric(
            "PLDA within-speaker covariance is singular (no within-speaker variability)".into(),
        ));
    }
    Ok(PldaModel {
        mu,
        b,
        w: floor_eigen(&w, W_MIN_EIGEN),
    })
}

/// Log-likelihood of `ds` under `model`, speaker means integrated out.
pub fn plda_log_likelihood(model: &PldaModel, ds: &EmbeddingDataset) -> Result<f64> {
    let data = plda_data(ds)?;
    Ok(e_step(model, &data)?.log_likelihood)
}

/// Initial model: global mean, `B = S_b`, `W = S_w` (the split of the total
/// covariance into between- and within-speaker parts).
pub fn init_plda(ds: &EmbeddingDataset) -> Result<PldaModel> {
    plda_data(ds)?;
    let (sw, sb, mean) = scatter_matrices(ds);
    let w_max = SymmetricEigen::new(symmetrize(&sw)).eigenvalues.max();
    if !(w_max > W_MIN_EIGEN) {
        return Err(Error::Numeric(
            "within-speaker scatter is singular (no within-speaker variability)".into(),
        ));
    }
    Ok(PldaModel {
        mu: mean,
        b: floor_eigen(&sb, 1e-10 * sb.trace().max(1e-300)),
        w: floor_eigen(&sw, W_MIN_EIGEN),
    })
}

/// Runs `n_iters` EM iterations from [`init_plda`]. Returns the model and
/// the log-likelihood of the initial model followed by one value per
/// iteration.
pub fn fit_plda(ds: &EmbeddingDataset, n_iters: usize) -> Result<(PldaModel, Vec<f64>)> {
    fit_plda_from(ds, init_plda(ds)?, n_iters)
}

pub fn fit_plda_from(
    ds: &EmbeddingDataset,
    init: PldaModel,
    n_iters: usize,
) -> Result<(PldaModel, Vec<f64>)> {
    let data = plda_data(ds)?;
    check_dim(data.dim, init.mu.len(), "PLDA model dimension")?;
    let mut model = init;
    let mut e = e_step(&model, &data)?;
    let mut lls = vec![e.log_likelihood];
    for _ in 0..n_iters {
        model = m_step(&data, &e.posteriors)?;
        e = e_step(&model, &data)?;
        lls.push(e.log_likelihood);
    }
    Ok((model, lls))
}

/// Precomputed quantities for log-likelihood-ratio scoring.
///
/// With `T = B + W`, the same-speaker hypothesis makes `[e; t]` Gaussian
/// with covariance `[[T, B], [B, T]]`; the different-speaker hypothesis with
/// `[[T, 0], [0, T]]`. The LLR is the difference of the two log-densities.
#[derive(Debug, Clone)]
pub struct PldaScorer {
    mu: DVector<f64>,
    /// Diagonal block of the inverse joint covariance.
    same_diag: DMatrix<f64>,
    /// Off-diagonal block of the inverse joint covariance.
    same_cross: DMatrix<f64>,
    total_inv: DMatrix<f64>,
    constant: f64,
}

impl PldaScorer {
    pub fn new(model: &PldaModel) -> Result<Self> {
        let d = model.mu.len();
        let total = symmetrize(&(&model.b + &model.w));
        let mut joint = DMatrix::zeros(2 * d, 2 * d);
        joint.view_mut((0, 0), (d, d)).copy_from(&total);
        joint.view_mut((d, d), (d, d)).copy_from(&total);
        joint.view_mut((0, d), (d, d)).copy_from(&model.b);
        joint
            .view_mut((d, 0), (d, d))
            .copy_from(&model.b.transpose());
        let joint_chol = chol(&joint, "PLDA same-speaker covariance")?;
        let total_chol = chol(&total, "PLDA total covariance")?;
        let inv = joint_chol.inverse();
        let a = inv.view((0, 0), (d, d)).into_owned();
        let a2 = inv.view((d, d), (d, d)).into_owned();
        let c = inv.view((0, d), (d, d)).into_owned();
        Ok(Self {
            mu: model.mu.clone(),
            same_diag: symmetrize(&((&a + &a2) * 0.5)),
            same_cross: symmetrize(&c),
            total_inv: symmetrize(&total_chol.inverse()),
            constant: log_det(&total_chol) - 0.5 * log_det(&joint_chol),
        })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// `log p(e, t | same) − log p(e | ·) p(t | ·)`.
    pub fn score(&self, enroll: &[f64], test: &[f64]) -> Result<f64> {
        check_dim(self.dim(), enroll.len(), "PLDA enrollment vector")?;
        check_dim(self.dim(), test.len(), "PLDA test vector")?;
        let e = DVector::from_column_slice(enroll) - &self.mu;
        let t = DVector::from_column_slice(test) - &self.mu;
        let same = e.dot(&(&self.same_diag * &e))
            + t.dot(&(&self.same_diag * &t))
            + 2.0 * e.dot(&(&self.same_cross * &t));
        let diff = e.dot(&(&self.total_inv * &e)) + t.dot(&(&self.total_inv * &t));
        Ok(-0.5 * same + 0.5 * diff + self.constant)
    }
}

pub fn score_plda(model: &PldaModel, enroll: &[f64], test: &[f64]) -> Result<f64> {
    PldaScorer::new(model)?.score(enroll, test)
}

pub fn score_cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    check_dim(a.len(), b.len(), "cosine operands")?;
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Numeric("cosine score of a zero vector".into()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// On-disk LDA model: centring preprocessing plus the projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LdaFile {
    pub mean: Vec<f64>,
    pub projection: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
}

impl From<&LdaModel> for LdaFile {
    fn from(m: &LdaModel) -> Self {
        Self {
            mean: m.mean.iter().copied().collect(),
            projection: m
                .projection
                .row_iter()
                .map(|r| r.iter().copied().collect())
                .collect(),
            eigenvalues: m.eigenvalues.clone(),
        }
    }
}

impl TryFrom<LdaFile> for LdaModel {
    type Error = Error;
    fn try_from(f: LdaFile) -> Result<Self> {
        let d = f.mean.len();
        let rows = f.projection.len();
        if rows != f.eigenvalues.len() || f.projection.iter().any(|r| r.len() != d) {
            return Err(Error::Dimension("inconsistent LDA model arrays".into()));
        }
        Ok(LdaModel {
            mean: DVector::from_vec(f.mean),
            projection: DMatrix::from_row_iterator(rows, d, f.projection.into_iter().flatten()),
            eigenvalues: f.eigenvalues,
        })
    }
}

/// On-disk PLDA model with the preprocessing applied before it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PldaFile {
    pub preproc: Preproc,
    pub mu: Vec<f64>,
    pub b: Vec<Vec<f64>>,
    pub w: Vec<Vec<f64>>,
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(rows: Vec<Vec<f64>>, d: usize) -> Result<DMatrix<f64>> {
    if rows.len() != d || rows.iter().any(|r| r.len() != d) {
        return Err(Error::Dimension(format!("expected a {d}×{d} matrix")));
    }
    Ok(DMatrix::from_row_iterator(d, d, rows.into_iter().flatten()))
}

impl PldaFile {
    pub fn new(preproc: Preproc, model: &PldaModel) -> Self {
        Self {
            preproc,
            mu: model.mu.iter().copied().collect(),
            b: rows_of(&model.b),
            w: rows_of(&model.w),
        }
    }

    pub fn into_parts(self) -> Result<(Preproc, PldaModel)> {
        let d = self.mu.len();
        check_dim(d, self.preproc.mean.len(), "PLDA preprocessing mean")?;
        let model = PldaModel {
            mu: DVector::from_vec(self.mu),
            b: from_rows(self.b, d)?,
            w: from_rows(self.w, d)?,
        };
        Ok((self.preproc, model))
    }
}

pub fn write_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, serde_json::to_string(value)?).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
