//! Domain-invariant projection of speaker embeddings trained with robust MAML,
//! plus the verification backend (cosine, LDA, two-covariance PLDA) and EER
//! evaluation used to measure it.
//!
//! Module map:
//! - [`vecio`]: labelled embedding datasets, CSV I/O, domain partitioning.
//! - [`synth`]: synthetic single-speaker multi-condition data.
//! - [`nn`]: the projection MLP with exact gradients and Hessian-vector products.
//! - [`losses`]: softmax cross-entropy and additive angular margin softmax.
//! - [`meta`]: robust MAML, standard MAML and pooled (MCT) trainers.
//! - [`backend`]: preprocessing, LDA, PLDA and cosine scoring.
//! - [`evalkit`]: trial lists, scoring, EER and DET points.
//! - [`experiment`]: experiment configuration and the end-to-end comparison.

pub mod backend;
pub mod dual;
pub mod error;
pub mod evalkit;
pub mod experiment;
pub mod losses;
pub mod meta;
pub mod nn;
pub mod synth;
pub mod vecio;

pub use error::{Error, Result};

pub use losses::{AamConfig, LossSpec};

pub use nn::{Activation, Batch, HeadKind, NetConfig, Params, ProjectionNet};

pub use vecio::{DomainSplit, EmbeddingDataset, EmbeddingRecord};

pub use meta::{MetaMode, Scheme, TrainConfig, TrainingLog};

pub use synth::SynthConfig;
