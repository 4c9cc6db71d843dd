//! Classification losses over a batch: softmax cross-entropy on linear
//! logits, and additive angular margin softmax (AAM) on cosine logits.
//!
//! Every loss is the batch mean. The generic `*_on` functions are used by the
//! network with both plain and dual scalars; the `f64` wrappers are the
//! public operations.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dual::Real;
use crate::error::{Error, Result};

/// Norms below this are treated as zero by the AAM normalisation.
pub const MIN_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AamConfig {
    pub scale: f64,
    /// Additive angular margin in radians.
    pub margin: f64,
}

impl Default for AamConfig {
    fn default() -> Self {
        Self {
            scale: 32.0,
            margin: 0.2,
        }
    }
}

impl AamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::Config(format!(
                "AAM scale must be > 0, got {}",
                self.scale
            )));
        }
        if !(0.0..std::f64::consts::FRAC_PI_2).contains(&self.margin) {
            return Err(Error::Config(format!(
                "AAM margin must lie in [0, pi/2), got {}",
                self.margin
            )));
        }
        Ok(())
    }
}

/// Which loss the classifier head is trained with.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossSpec {
    Softmax,
    Aam(AamConfig),
}

fn check_labels(labels: &[usize], n: usize, k: usize) -> Result<()> {
    if labels.len() != n {
        return Err(Error::Dimension(format!(
            "{} labels for {n} rows",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::Data(format!(
            "label {bad} out of range for {k} classes"
        )));
    }
    Ok(())
}

/// Mean softmax cross-entropy and its gradient w.r.t. the logits.
pub fn softmax_ce_on<T: Real>(logits: &DMatrix<T>, labels: &[usize]) -> Result<(T, DMatrix<T>)> {
    let (n, k) = logits.shape();
    check_labels(labels, n, k)?;
    let inv_n = 1.0 / n as f64;
    let mut grad = DMatrix::<T>::zeros(n, k);
    let mut loss = T::zero();
    for i in 0..n {
        // Shift by the row maximum (by primal value) before exponentiating.
        let mut shift = logits[(i, 0)];
        for j in 1..k {
            if logits[(i, j)].value() > shift.value() {
                shift = logits[(i, j)];
            }
        }
        let mut total = T::zero();
        for j in 0..k {
            let e = (logits[(i, j)] - shift).exp();
            grad[(i, j)] = e;
            total += e;
        }
        let y = labels[i];
        loss += total.ln() - (logits[(i, y)] - shift);
        for j in 0..k {
            grad[(i, j)] /= total;
        }
        grad[(i, y)] -= T::one();
        for j in 0..k {
            grad[(i, j)] = grad[(i, j)].scale(inv_n);
        }
    }
    Ok((loss.scale(inv_n), grad))
}

/// Cross-entropy over AAM logits built from a cosine matrix.
///
/// Target logits are `s·cos(θ_y + m)` expanded as `s·(c·cos m − sinθ·sin m)`
/// with `sinθ = √(1 − c²)`, clamped at `c² ≥ 1` where the derivative of
/// `sinθ` is taken as 0. Non-target logits are `s·c`. Returns the loss and
/// its gradient w.r.t. the cosines.
pub fn aam_ce_on_cosines<T: Real>(
    cosines: &DMatrix<T>,
    labels: &[usize],
    cfg: &AamConfig,
) -> Result<(T, DMatrix<T>)> {
    let (n, k) = cosines.shape();
    check_labels(labels, n, k)?;
    let (cos_m, sin_m) = (cfg.margin.cos(), cfg.margin.sin());
    let mut logits = cosines.map(|c| c.scale(cfg.scale));
    // d(target logit)/dc, per row
    let mut target_slope = Vec::with_capacity(n);
    for (i, &y) in labels.iter().enumerate() {
        let c = cosines[(i, y)];
        let rest = T::one() - c * c;
        let (sin_t, slope) = if rest.value() > 0.0 {
            let s = rest.sqrt();
            (s, T::from_f64(cos_m) + c / s * T::from_f64(sin_m))
        } else {
            (T::zero(), T::from_f64(cos_m))
        };
        logits[(i, y)] = (c.scale(cos_m) - sin_t.scale(sin_m)).scale(cfg.scale);
        target_slope.push(slope.scale(cfg.scale));
    }
    let (loss, dlogits) = softmax_ce_on(&logits, labels)?;
    let mut dcos = dlogits.map(|g| g.scale(cfg.scale));
    for (i, &y) in labels.iter().enumerate() {
        dcos[(i, y)] = dlogits[(i, y)] * target_slope[i];
    }
    Ok((loss, dcos))
}

/// Rows of `m` divided by their norms, plus the norms.
pub fn normalize_rows<T: Real>(m: &DMatrix<T>, what: &str) -> Result<(DMatrix<T>, Vec<T>)> {
    let mut out = m.clone();
    let mut norms = Vec::with_capacity(m.nrows());
    for i in 0..m.nrows() {
        let mut sq = T::zero();
        for j in 0..m.ncols() {
            sq += m[(i, j)] * m[(i, j)];
        }
        if !(sq.value().sqrt() >= MIN_NORM) {
            return Err(Error::Numeric(format!("{what} row {i} has zero norm")));
        }
        let norm = sq.sqrt();
        for j in 0..m.ncols() {
            out[(i, j)] /= norm;
        }
        norms.push(norm);
    }
    Ok((out, norms))
}

/// Gradient through row normalisation: given `x̂ = x/‖x‖` and `∂L/∂x̂`,
/// returns `∂L/∂x = (∂L/∂x̂ − x̂ (x̂·∂L/∂x̂)) / ‖x‖`.
pub fn normalize_rows_backward<T: Real>(
    unit: &DMatrix<T>,
    norms: &[T],
    grad_unit: &DMatrix<T>,
) -> DMatrix<T> {
    let mut out = grad_unit.clone();
    for i in 0..unit.nrows() {
        let mut dot = T::zero();
        for j in 0..unit.ncols() {
            dot += unit[(i, j)] * grad_unit[(i, j)];
        }
        for j in 0..unit.ncols() {
            out[(i, j)] = (grad_unit[(i, j)] - unit[(i, j)] * dot) / norms[i];
        }
    }
    out
}

/// Cosine similarity matrix between embedding rows and class-weight rows,
/// with the normalised factors kept for the backward pass.
pub struct CosineHead<T: nalgebra::Scalar> {
    pub unit_emb: DMatrix<T>,
    pub emb_norms: Vec<T>,
    pub unit_w: DMatrix<T>,
    pub w_norms: Vec<T>,
    pub cosines: DMatrix<T>,
}

impl<T: Real> CosineHead<T> {
    pub fn forward(embeddings: &DMatrix<T>, weights: &DMatrix<T>) -> Result<Self> {
        if embeddings.ncols() != weights.ncols() {
            return Err(Error::Dimension(format!(
                "embedding width {} vs class weight width {}",
                embeddings.ncols(),
                weights.ncols()
            )));
        }
        let (unit_emb, emb_norms) = normalize_rows(embeddings, "embedding")?;
        let (unit_w, w_norms) = normalize_rows(weights, "class weight")?;
        let cosines = &unit_emb * unit_w.transpose();
        Ok(Self {
            unit_emb,
            emb_norms,
            unit_w,
            w_norms,
            cosines,
        })
    }

    /// Maps `∂L/∂cos` to `(∂L/∂embeddings, ∂L/∂weights)`.
    pub fn backward(&self, dcos: &DMatrix<T>) -> (DMatrix<T>, DMatrix<T>) {
        let d_unit_emb = dcos * &self.unit_w;
        let d_unit_w = dcos.transpose() * &self.unit_emb;
        (
            normalize_rows_backward(&self.unit_emb, &self.emb_norms, &d_unit_emb),
            normalize_rows_backward(&self.unit_w, &self.w_norms, &d_unit_w),
        )
    }
}

/// Mean softmax cross-entropy of `logits` (n × K) against `labels`;
/// returns the loss and `∂L/∂logits = (softmax − onehot)/n`.
pub fn softmax_ce(logits: &DMatrix<f64>, labels: &[usize]) -> Result<(f64, DMatrix<f64>)> {
    softmax_ce_on(logits, labels)
}

/// Additive angular margin softmax loss.
///
/// Returns `(loss, ∂L/∂embeddings, ∂L/∂weights)`. Embedding rows and class
/// weight rows are used in normalised form; either having a norm below
/// [`MIN_NORM`] is an error.
pub fn aam_loss(
    embeddings: &DMatrix<f64>,
    weights: &DMatrix<f64>,
    labels: &[usize],
    cfg: &AamConfig,
) -> Result<(f64, DMatrix<f64>, DMatrix<f64>)> {
    cfg.validate()?;
    let head = CosineHead::forward(embeddings, weights)?;
    let (loss, dcos) = aam_ce_on_cosines(&head.cosines, labels, cfg)?;
    let (demb, dw) = head.backward(&dcos);
    Ok((loss, demb, dw))
}
