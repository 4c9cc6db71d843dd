//! Episodic training of the projection net.
//!
//! Three schemes share one loop:
//!
//! - **robust MAML**: the local step uses a batch from domain `i`, the meta
//!   step evaluates the adapted parameters on a batch from a different
//!   domain `j`:
//!   `θ ← θ − β ∇θ L(θ − α ∇θ L(θ; m_i); m_j)`.
//! - **standard MAML**: the same update with `j = i`.
//! - **MCT**: plain SGD with rate `β` on batches drawn from the pooled data.
//!
//! The local step is only a device for computing the meta gradient; the meta
//! update is the only one that changes the model. The exact meta gradient is
//! `(I − α H_i(θ)) g′` with `g′ = ∇L(θ′; m_j)`, which costs one
//! Hessian-vector product on the local batch.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossSpec;
use crate::nn::{Batch, ParamGrads, ProjectionNet};
use crate::vecio::{partition_by_domain, EmbeddingDataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    RobustMaml,
    StandardMaml,
    Mct,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetaMode {
    SecondOrder,
    FirstOrder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Local (inner) learning rate.
    pub alpha: f64,
    /// Meta (outer) learning rate; also the MCT learning rate.
    pub beta: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub meta_mode: MetaMode,
    pub scheme: Scheme,
    /// Iterations between held-out probes; 0 disables probing.
    pub eval_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            beta: 0.1,
            batch_size: 32,
            iterations: 2000,
            meta_mode: MetaMode::SecondOrder,
            scheme: Scheme::RobustMaml,
            eval_every: 200,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!(
                "train.alpha must be > 0, got {}",
                self.alpha
            )));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!(
                "train.beta must be > 0, got {}",
                self.beta
            )));
        }
        if self.batch_size < 2 {
            return Err(Error::Config(format!(
                "train.batch_size must be at least 2, got {}",
                self.batch_size
            )));
        }
        Ok(())
    }
}

/// A differentiable training objective over some parameterised model.
///
/// The trainers only need a gradient, a Hessian-vector product and an
/// `axpy`, so they work on the projection net as well as on small analytic
/// models used in tests.
pub trait Objective {
    type Model: Clone;
    type Grad: Clone;

    fn loss_grad(&self, model: &Self::Model, batch: &Batch) -> Result<(f64, Self::Grad)>;

    fn hvp(&self, model: &Self::Model, batch: &Batch, v: &Self::Grad) -> Result<Self::Grad>;

    /// `model + scale·g`.
    fn step(&self, model: &Self::Model, g: &Self::Grad, scale: f64) -> Result<Self::Model>;

    /// `g + scale·h`.
    fn combine(&self, g: &Self::Grad, h: &Self::Grad, scale: f64) -> Result<Self::Grad>;
}

/// The projection net trained with a given classification loss.
#[derive(Debug, Clone, Copy)]
pub struct NetObjective {
    pub loss: LossSpec,
}

impl Objective for NetObjective {
    type Model = ProjectionNet;
    type Grad = ParamGrads;

    fn loss_grad(&self, net: &ProjectionNet, batch: &Batch) -> Result<(f64, ParamGrads)> {
        net.loss_and_grad(batch, &self.loss)
    }

    fn hvp(&self, net: &ProjectionNet, batch: &Batch, v: &ParamGrads) -> Result<ParamGrads> {
        net.hvp(batch, &self.loss, v)
    }

    fn step(&self, net: &ProjectionNet, g: &ParamGrads, scale: f64) -> Result<ProjectionNet> {
        net.with_params(net.params().axpy(g, scale)?)
    }

    fn combine(&self, g: &ParamGrads, h: &ParamGrads, scale: f64) -> Result<ParamGrads> {
        g.axpy(h, scale)
    }
}

/// One robust-MAML step's data.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub local_domain: String,
    pub meta_domain: String,
    pub local_batch: Batch,
    pub meta_batch: Batch,
}

/// Per-domain training data in a fixed (sorted) order.
#[derive(Debug, Clone)]
pub struct DomainParts {
    parts: Vec<(String, EmbeddingDataset)>,
}

impl DomainParts {
    pub fn new(parts: &BTreeMap<String, EmbeddingDataset>) -> Self {
        Self {
            parts: parts.iter().map(|(k, v)| (k.clone(), v.clone())).collect(),
        }
    }

    pub fn from_dataset(ds: &EmbeddingDataset) -> Self {
        Self::new(&partition_by_domain(ds))
    }

    pub fn len(&self) -> usize {
        self.parts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parts.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.parts.iter().map(|(n, _)| n.as_str())
    }
}

/// Draws `n` distinct records uniformly from `ds`.
pub fn sample_batch(ds: &EmbeddingDataset, n: usize, rng: &mut impl Rng) -> Result<Batch> {
    if ds.len() < n {
        return Err(Error::Data(format!(
            "cannot draw a batch of {n} from {} records",
            ds.len()
        )));
    }
    let rows = sample(rng, ds.len(), n).into_vec();
    let labels = rows.iter().map(|&i| ds.speaker_label(i)).collect();
    Batch::new(ds.gather(&rows), labels)
}

/// Picks the local domain uniformly, the meta domain uniformly among the
/// others (robust MAML) or equal to it (standard MAML), then one batch from
/// each.
pub fn sample_episode(
    parts: &DomainParts,
    scheme: Scheme,
    batch_size: usize,
    rng: &mut impl Rng,
) -> Result<Episode> {
    let m = parts.len();
    let needed = if scheme == Scheme::RobustMaml { 2 } else { 1 };
    if m < needed {
        return Err(Error::Data(format!(
            "{scheme:?} needs at least {needed} domains, found {m}"
        )));
    }
    if let Some((name, ds)) = parts.parts.iter().find(|(_, ds)| ds.len() < batch_size) {
        return Err(Error::Data(format!(
            "domain {name} has {} records, fewer than the batch size {batch_size}",
            ds.len()
        )));
    }
    let i = rng.random_range(0..m);
    let j = match scheme {
        Scheme::RobustMaml => {
            let j = rng.random_range(0..m - 1);
            if j >= i {
                j + 1
            } else {
                j
            }
        }
        _ => i,
    };
    let local_batch = sample_batch(&parts.parts[i].1, batch_size, rng)?;
    let meta_batch = sample_batch(&parts.parts[j].1, batch_size, rng)?;
    Ok(Episode {
        local_domain: parts.parts[i].0.clone(),
        meta_domain: parts.parts[j].0.clone(),
        local_batch,
        meta_batch,
    })
}

fn finite(v: f64, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(format!("{what} is {v}")))
    }
}

/// `θ′ = θ − α ∇θ L(θ; batch)`. Returns `θ′` and the local loss.
pub fn local_update<O: Objective>(
    obj: &O,
    model: &O::Model,
    batch: &Batch,
    alpha: f64,
) -> Result<(O::Model, f64)> {
    let (loss, grad) = obj.loss_grad(model, batch)?;
    let loss = finite(loss, "local loss")?;
    if alpha == 0.0 {
        return Ok((model.clone(), loss));
    }
    Ok((obj.step(model, &grad, -alpha)?, loss))
}

#[derive(Debug, Clone)]
pub struct MetaGradient<G> {
    pub local_loss: f64,
    pub meta_loss: f64,
    pub grad: G,
}

/// Gradient of the meta loss `L(θ − α ∇L(θ; m_i); m_j)` with respect to `θ`.
///
/// First order returns `g′ = ∇L(θ′; m_j)` as is; second order returns the
/// exact total derivative `g′ − α H(θ; m_i) g′`.
pub fn meta_gradient<O: Objective>(
    obj: &O,
    model: &O::Model,
    episode: &Episode,
    alpha: f64,
    mode: MetaMode,
) -> Result<MetaGradient<O::Grad>> {
    let (adapted, local_loss) = local_update(obj, model, &episode.local_batch, alpha)?;
    let (meta_loss, g_meta) = obj.loss_grad(&adapted, &episode.meta_batch)?;
    let meta_loss = finite(meta_loss, "meta loss")?;
    let grad = match mode {
        // The curvature term vanishes at α = 0; skip it so both modes agree
        // bit for bit.
        MetaMode::SecondOrder if alpha != 0.0 => {
            let hv = obj.hvp(model, &episode.local_batch, &g_meta)?;
            obj.combine(&g_meta, &hv, -alpha)?
        }
        _ => g_meta,
    };
    Ok(MetaGradient {
        local_loss,
        meta_loss,
        grad,
    })
}

/// One meta update: `θ ← θ − β · meta_gradient`.
pub fn meta_step<O: Objective>(
    obj: &O,
    model: &O::Model,
    episode: &Episode,
    alpha: f64,
    beta: f64,
    mode: MetaMode,
) -> Result<(O::Model, MetaGradient<O::Grad>)> {
    let mg = meta_gradient(obj, model, episode, alpha, mode)?;
    let next = obj.step(model, &mg.grad, -beta)?;
    Ok((next, mg))
}

/// One plain SGD step on a pooled batch. Returns the new model and the
/// batch loss before the step.
pub fn mct_step<O: Objective>(
    obj: &O,
    model: &O::Model,
    batch: &Batch,
    beta: f64,
) -> Result<(O::Model, f64)> {
    let (loss, grad) = obj.loss_grad(model, batch)?;
    let loss = finite(loss, "training loss")?;
    Ok((obj.step(model, &grad, -beta)?, loss))
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub local_domain: String,
    pub meta_domain: String,
    pub local_loss: f64,
    pub meta_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeRecord {
    pub iteration: usize,
    pub domain: String,
    /// Fraction in [0, 1].
    pub eer: f64,
}

/// Name used in the log's domain columns for pooled (MCT) batches.
pub const POOLED: &str = "pooled";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    pub iterations: Vec<IterationRecord>,
    pub probes: Vec<ProbeRecord>,
}

impl TrainingLog {
    /// CSV text: the iteration table, a blank line, then the probe table.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iter,local_domain,meta_domain,local_loss,meta_loss\n");
        for r in &self.iterations {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.iteration, r.local_domain, r.meta_domain, r.local_loss, r.meta_loss
            );
        }
        out.push_str("\niter,domain,eer\n");
        for p in &self.probes {
            let _ = writeln!(out, "{},{},{}", p.iteration, p.domain, p.eer);
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    /// Probe EERs at the last probed iteration, by domain.
    pub fn final_probe(&self) -> BTreeMap<String, f64> {
        let last = self.probes.iter().map(|p| p.iteration).max();
        self.probes
            .iter()
            .filter(|p| Some(p.iteration) == last)
            .map(|p| (p.domain.clone(), p.eer))
            .collect()
    }
}

/// Called with the current net at every probe point; returns
/// `(domain, eer)` pairs to log.
pub type Probe<'a> = dyn FnMut(&ProjectionNet) -> Result<Vec<(String, f64)>> + 'a;

/// Trains `net` on `train` under `cfg.scheme`. Deterministic in `cfg.seed`.
pub fn train(
    train: &EmbeddingDataset,
    net: &ProjectionNet,
    loss: LossSpec,
    cfg: &TrainConfig,
    mut probe: Option<&mut Probe<'_>>,
) -> Result<(ProjectionNet, TrainingLog)> {
    cfg.validate()?;
    net.config().check_loss(&loss)?;
    if net.config().n_classes < train.n_speakers() {
        return Err(Error::Config(format!(
            "net has {} classes but the training data has {} speakers",
            net.config().n_classes,
            train.n_speakers()
        )));
    }
    let obj = NetObjective { loss };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let parts = DomainParts::from_dataset(train);
    if cfg.iterations > 0 {
        // Surface configuration problems before the first step.
        match cfg.scheme {
            Scheme::Mct if train.len() < cfg.batch_size => {
                return Err(Error::Data(format!(
                    "{} training records, fewer than the batch size {}",
                    train.len(),
                    cfg.batch_size
                )))
            }
            Scheme::Mct => {}
            scheme => {
                sample_episode(
                    &parts,
                    scheme,
                    cfg.batch_size,
                    &mut ChaCha8Rng::seed_from_u64(0),
                )?;
            }
        }
    }

    let mut model = net.clone();
    let mut log = TrainingLog::default();
    for it in 1..=cfg.iterations {
        let diverged = |e: Error| match e {
            Error::NonFinite(msg) | Error::Numeric(msg) => Error::Diverged { iteration: it, msg },
            other => other,
        };
        let record = match cfg.scheme {
            Scheme::Mct => {
                let batch = sample_batch(train, cfg.batch_size, &mut rng)?;
                let (next, loss) = mct_step(&obj, &model, &batch, cfg.beta).map_err(diverged)?;
                model = next;
                IterationRecord {
                    iteration: it,
                    local_domain: POOLED.into(),
                    meta_domain: POOLED.into(),
                    local_loss: loss,
                    meta_loss: loss,
                }
            }
            scheme => {
                let ep = sample_episode(&parts, scheme, cfg.batch_size, &mut rng)?;
                let (next, mg) = meta_step(&obj, &model, &ep, cfg.alpha, cfg.beta, cfg.meta_mode)
                    .map_err(diverged)?;
                model = next;
                IterationRecord {
                    iteration: it,
                    local_domain: ep.local_domain,
                    meta_domain: ep.meta_domain,
                    local_loss: mg.local_loss,
                    meta_loss: mg.meta_loss,
                }
            }
        };
        if !model.params().is_finite() {
            return Err(Error::Diverged {
                iteration: it,
                msg: "parameters became non-finite".into(),
            });
        }
        log.iterations.push(record);
        if cfg.eval_every > 0 && it % cfg.eval_every == 0 {
            if let Some(p) = probe.as_deref_mut() {
                for (domain, eer) in p(&model)? {
                    log.probes.push(ProbeRecord {
                        iteration: it,
                        domain,
                        eer,
                    });
                }
            }
        }
    }
    Ok((model, log))
}
