//! Experiment configuration and the raw / MCT / MAML comparison on
//! synthetic data.

use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalkit::{
    compute_eer, make_trials, score_trials, Projector, ProjectorStep, ReportRow, Scorer, TrialList,
};
use crate::losses::{AamConfig, LossSpec};
use crate::meta::{train, Scheme, TrainConfig, TrainingLog};
use crate::nn::{init_net, Activation, HeadKind, NetConfig, ProjectionNet};
use crate::synth::{generate_ssmc, SynthConfig};
use crate::vecio::{partition_by_domain, split_train_eval, EmbeddingDataset};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub held_out_domains: Vec<String>,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            held_out_domains: vec!["dom4".into()],
        }
    }
}

impl SplitConfig {
    pub fn held_out(&self) -> BTreeSet<String> {
        self.held_out_domains.iter().cloned().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetSection {
    /// Widths of the layers after the input; the last is the embedding.
    pub hidden_dims: Vec<usize>,
    pub hidden_activation: Activation,
    pub embedding_activation: Activation,
}

impl Default for NetSection {
    fn default() -> Self {
        Self {
            hidden_dims: vec![512, 512, 512],
            hidden_activation: Activation::Relu,
            embedding_activation: Activation::Identity,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Softmax,
    Aam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossSection {
    pub kind: LossKind,
    pub scale: f64,
    pub margin: f64,
}

impl Default for LossSection {
    fn default() -> Self {
        let aam = AamConfig::default();
        Self {
            kind: LossKind::Softmax,
            scale: aam.scale,
            margin: aam.margin,
        }
    }
}

impl LossSection {
    pub fn spec(&self) -> Result<LossSpec> {
        match self.kind {
            LossKind::Softmax => Ok(LossSpec::Softmax),
            LossKind::Aam => {
                let cfg = AamConfig {
                    scale: self.scale,
                    margin: self.margin,
                };
                cfg.validate()?;
                Ok(LossSpec::Aam(cfg))
            }
        }
    }

    pub fn head(&self) -> HeadKind {
        match self.kind {
            LossKind::Softmax => HeadKind::SoftmaxLinear,
            LossKind::Aam => HeadKind::Aam,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackendConfig {
    /// Requested LDA dimension; clamped to `min(D, K − 1)`.
    pub lda_dim: usize,
    /// Length normalisation before PLDA.
    pub length_norm: bool,
    pub plda_iters: usize,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            lda_dim: 128,
            length_norm: true,
            plda_iters: 10,
        }
    }
}

impl BackendConfig {
    /// The LDA dimension actually used for `dim`-wide data with
    /// `n_speakers` speakers, and whether it was clamped.
    pub fn effective_lda_dim(&self, dim: usize, n_speakers: usize) -> (usize, bool) {
        let max = dim.min(n_speakers.saturating_sub(1));
        (self.lda_dim.min(max), self.lda_dim > max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub n_target: usize,
    pub n_nontarget: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_target: 2000,
            n_nontarget: 20000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub synth: SynthConfig,
    pub split: SplitConfig,
    pub net: NetSection,
    pub loss: LossSection,
    pub train: TrainConfig,
    pub backend: BackendConfig,
    pub eval: EvalConfig,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    /// Sets every seed in the tree.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.synth.seed = seed;
        self.train.seed = seed;
        self.eval.seed = seed;
        self
    }

    pub fn net_config(&self, input_dim: usize, n_classes: usize) -> NetConfig {
        let mut layer_dims = vec![input_dim];
        layer_dims.extend(&self.net.hidden_dims);
        NetConfig {
            layer_dims,
            hidden_activation: self.net.hidden_activation,
            embedding_activation: self.net.embedding_activation,
            head: self.loss.head(),
            n_classes,
        }
    }
}

/// Held-out evaluation data: one trial list per held-out domain.
#[derive(Debug, Clone)]
pub struct HeldOut {
    pub domains: BTreeMap<String, (EmbeddingDataset, TrialList)>,
}

impl HeldOut {
    pub fn new(eval: &EmbeddingDataset, cfg: &EvalConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut domains = BTreeMap::new();
        for (name, part) in partition_by_domain(eval) {
            let trials = make_trials(&part, &mut rng, cfg.n_target, cfg.n_nontarget)?;
            domains.insert(name, (part, trials));
        }
        Ok(Self { domains })
    }

    /// Cosine EER per held-out domain after `projector`.
    pub fn cosine_eers(&self, projector: &Projector) -> Result<Vec<(String, f64)>> {
        self.domains
            .iter()
            .map(|(name, (ds, trials))| {
                let scores = score_trials(&Scorer::Cosine, projector, ds, trials)?;
                Ok((name.clone(), compute_eer(&scores)?.0))
            })
            .collect()
    }

    pub fn net_eers(&self, net: &ProjectionNet) -> Result<Vec<(String, f64)>> {
        self.cosine_eers(&Projector::identity().then(ProjectorStep::Net(net.clone())))
    }
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub raw: BTreeMap<String, f64>,
    pub mct: BTreeMap<String, f64>,
    pub maml: BTreeMap<String, f64>,
    pub mct_net: ProjectionNet,
    pub maml_net: ProjectionNet,
    pub mct_log: TrainingLog,
    pub maml_log: TrainingLog,
}

impl Comparison {
    /// Report rows (EER in percent), grouped by domain then projector.
    pub fn rows(&self) -> Vec<ReportRow> {
        let mut rows = Vec::new();
        for domain in self.raw.keys() {
            for (name, map) in [("raw", &self.raw), ("mct", &self.mct), ("maml", &self.maml)] {
                rows.push(ReportRow {
                    domain: domain.clone(),
                    scoring: "cosine".into(),
                    projector: name.into(),
                    eer_percent: 100.0 * map[domain],
                });
            }
        }
        rows
    }
}

/// Trains an MCT net and a robust-MAML net from the same initialisation
/// on the seen domains and evaluates both, plus the raw vectors, with
/// cosine scoring on the held-out domains. `cfg.train.scheme` selects the
/// meta-learning variant for the second net (`mct` is rejected).
pub fn run_comparison(cfg: &ExperimentConfig) -> Result<Comparison> {
    if cfg.train.scheme == Scheme::Mct {
        return Err(Error::Config(
            "train.scheme must be a meta-learning scheme for the comparison".into(),
        ));
    }
    let data = generate_ssmc(&cfg.synth)?;
    let split = split_train_eval(&data, &cfg.split.held_out())?;
    run_comparison_on(cfg, &split.train, &split.eval)
}

pub fn run_comparison_on(
    cfg: &ExperimentConfig,
    train_ds: &EmbeddingDataset,
    eval_ds: &EmbeddingDataset,
) -> Result<Comparison> {
    let held_out = HeldOut::new(eval_ds, &cfg.eval)?;
    let raw: BTreeMap<String, f64> = held_out
        .cosine_eers(&Projector::identity())?
        .into_iter()
        .collect();

    let loss = cfg.loss.spec()?;
    let init = init_net(
        cfg.net_config(train_ds.dim(), train_ds.n_speakers()),
        cfg.train.seed,
    )?;

    let run = |scheme: Scheme| -> Result<(ProjectionNet, TrainingLog, BTreeMap<String, f64>)> {
        let tcfg = TrainConfig {
            scheme,
            ..cfg.train.clone()
        };
        let mut probe = |net: &ProjectionNet| held_out.net_eers(net);
        let (net, log) = train(train_ds, &init, loss, &tcfg, Some(&mut probe))?;
        let eers = held_out.net_eers(&net)?.into_iter().collect();
        Ok((net, log, eers))
    };
    let (mct_net, mct_log, mct) = run(Scheme::Mct)?;
    let (maml_net, maml_log, maml) = run(cfg.train.scheme)?;
    Ok(Comparison {
        raw,
        mct,
        maml,
        mct_net,
        maml_net,
        mct_log,
        maml_log,
    })
}
