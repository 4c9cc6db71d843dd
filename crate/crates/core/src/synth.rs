//! Synthetic single-speaker multi-condition (SSMC) embeddings.
//!
//! Every speaker `k` has a latent identity `s_k ~ N(0, I_r)` placed in the
//! embedding space through a fixed `D × r` matrix `P` with orthonormal
//! columns. Each domain `d` applies a rotation `Q_d = exp(strength · A_d)`
//! (`A_d` random skew-symmetric, normalised so `strength` is on a radians
//! scale) and an offset `b_d ~ N(0, bias_scale² I)`. An utterance is
//!
//! ```text
//! x = Q_d P s_k + b_d + ε,   ε ~ N(0, noise_std² I)
//! ```

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vecio::{EmbeddingDataset, EmbeddingRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub dim: usize,
    pub latent_dim: usize,
    pub n_speakers: usize,
    pub n_domains: usize,
    pub utts_per_speaker_domain: usize,
    pub domain_rotation_strength: f64,
    pub domain_bias_scale: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            latent_dim: 16,
            n_speakers: 60,
            n_domains: 5,
            utts_per_speaker_domain: 10,
            domain_rotation_strength: 0.5,
            domain_bias_scale: 1.0,
            noise_std: 0.8,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("dim", self.dim),
            ("latent_dim", self.latent_dim),
            ("n_speakers", self.n_speakers),
            ("n_domains", self.n_domains),
            ("utts_per_speaker_domain", self.utts_per_speaker_domain),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("synth.{name} must be at least 1")));
        }
        if self.latent_dim > self.dim {
            return Err(Error::Config(format!(
                "synth.latent_dim {} exceeds dim {}",
                self.latent_dim, self.dim
            )));
        }
        for (name, v) in [
            ("domain_rotation_strength", self.domain_rotation_strength),
            ("domain_bias_scale", self.domain_bias_scale),
            ("noise_std", self.noise_std),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "synth.{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }

    pub fn n_records(&self) -> usize {
        self.n_speakers * self.n_domains * self.utts_per_speaker_domain
    }
}

fn gaussian_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            m[(i, j)] = StandardNormal.sample(rng);
        }
    }
    m
}

fn gaussian_vector(len: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(len, |_, _| StandardNormal.sample(rng))
}

/// `exp(strength · A)` for a random skew-symmetric `A = (G − Gᵀ)/√(2D)`.
pub fn random_rotation(dim: usize, strength: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let g = gaussian_matrix(dim, dim, rng);
    if strength == 0.0 {
        return DMatrix::identity(dim, dim);
    }
    let a = (&g - g.transpose()) * (strength / (2.0 * dim as f64).sqrt());
    a.exp()
}

/// Generates the dataset. Records are ordered speaker-major, then domain,
/// then utterance; the output is a pure function of `cfg`.
pub fn generate_ssmc(cfg: &SynthConfig) -> Result<EmbeddingDataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (d, r) = (cfg.dim, cfg.latent_dim);

    let basis = gaussian_matrix(d, r, &mut rng).qr().q();
    let latents: Vec<DVector<f64>> = (0..cfg.n_speakers)
        .map(|_| gaussian_vector(r, &mut rng))
        .collect();
    let domains: Vec<(DMatrix<f64>, DVector<f64>)> = (0..cfg.n_domains)
        .map(|_| {
            let q = random_rotation(d, cfg.domain_rotation_strength, &mut rng);
            let b = gaussian_vector(d, &mut rng) * cfg.domain_bias_scale;
            (q * &basis, b)
        })
        .collect();

    let mut records = Vec::with_capacity(cfg.n_records());
    for (k, s) in latents.iter().enumerate() {
        for (m, (qp, b)) in domains.iter().enumerate() {
            let clean = qp * s + b;
            for u in 0..cfg.utts_per_speaker_domain {
                let noise = gaussian_vector(d, &mut rng) * cfg.noise_std;
                records.push(EmbeddingRecord {
                    utterance_id: format!("spk{k:03}-dom{m}-u{u:03}"),
                    speaker_id: format!("spk{k:03}"),
                    domain_id: format!("dom{m}"),
                    vector: (&clean + noise).iter().copied().collect(),
                });
            }
        }
    }
    EmbeddingDataset::new(d, records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vecio::partition_by_domain;

    fn cosine(a: &[f64], b: &[f64]) -> f64 {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        dot / (na * nb)
    }

    #[test]
    fn rotations_are_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for strength in [0.1, 0.5, 2.0] {
            let q = random_rotation(32, strength, &mut rng);
            let err = (q.transpose() * &q - DMatrix::<f64>::identity(32, 32)).amax();
            assert!(err < 1e-10, "strength {strength}: {err}");
        }
    }

    #[test]
    fn no_shift_no_noise_is_domain_invariant() {
        let cfg = SynthConfig {
            n_speakers: 4,
            n_domains: 2,
            utts_per_speaker_domain: 3,
            domain_rotation_strength: 0.0,
            domain_bias_scale: 0.0,
            noise_std: 0.0,
            ..SynthConfig::default()
        };
        let ds = generate_ssmc(&cfg).unwrap();
        for k in 0..4 {
            let rows: Vec<_> = (0..ds.len())
                .filter(|&i| ds.speaker_label(i) == k)
                .collect();
            assert_eq!(rows.len(), 6);
            for &i in &rows {
                assert_eq!(ds.record(i).vector, ds.record(rows[0]).vector);
            }
        }
    }

    #[test]
    fn deterministic_in_seed() {
        let cfg = SynthConfig {
            n_speakers: 5,
            ..SynthConfig::default()
        };
        assert_eq!(generate_ssmc(&cfg).unwrap(), generate_ssmc(&cfg).unwrap());
        let other = SynthConfig {
            seed: 1,
            ..cfg.clone()
        };
        assert_ne!(generate_ssmc(&cfg).unwrap(), generate_ssmc(&other).unwrap());
    }

    #[test]
    fn record_counts() {
        let cfg = SynthConfig {
            n_speakers: 7,
            n_domains: 5,
            utts_per_speaker_domain: 3,
            dim: 8,
            latent_dim: 4,
            ..SynthConfig::default()
        };
        let ds = generate_ssmc(&cfg).unwrap();
        assert_eq!(ds.len(), 7 * 5 * 3);
        assert_eq!(ds.n_speakers(), 7);
        assert_eq!(ds.n_domains(), 5);
        let parts = partition_by_domain(&ds);
        assert_eq!(parts.values().map(|p| p.len()).sum::<usize>(), ds.len());
    }

    #[test]
    fn default_config_has_cross_domain_shift() {
        let ds = generate_ssmc(&SynthConfig::default()).unwrap();
        let (mut same, mut n_same, mut cross, mut n_cross) = (0.0, 0usize, 0.0, 0usize);
        for i in 0..ds.len() {
            for j in (i + 1)..ds.len() {
                if ds.speaker_label(i) != ds.speaker_label(j) {
                    continue;
                }
                let c = cosine(&ds.record(i).vector, &ds.record(j).vector);
                if ds.domain_label(i) == ds.domain_label(j) {
                    same += c;
                    n_same += 1;
                } else {
                    cross += c;
                    n_cross += 1;
                }
            }
        }
        let (same, cross) = (same / n_same as f64, cross / n_cross as f64);
        assert!(cross < same, "cross-domain {cross} vs same-domain {same}");
    }

    #[test]
    fn invalid_configs() {
        let bad = [
            SynthConfig {
                dim: 0,
                ..SynthConfig::default()
            },
            SynthConfig {
                latent_dim: 65,
                ..SynthConfig::default()
            },
            SynthConfig {
                n_speakers: 0,
                ..SynthConfig::default()
            },
            SynthConfig {
                noise_std: -1.0,
                ..SynthConfig::default()
            },
            SynthConfig {
                domain_bias_scale: f64::NAN,
                ..SynthConfig::default()
            },
        ];
        for cfg in bad {
            assert!(matches!(generate_ssmc(&cfg), Err(Error::Config(_))));
        }
    }

    #[test]
    fn json_keys_are_field_names() {
        let text = r#"{"dim":8,"latent_dim":2,"n_speakers":3,"n_domains":2,
            "utts_per_speaker_domain":2,"domain_rotation_strength":0.1,
            "domain_bias_scale":0.2,"noise_std":0.3,"seed":5}"#;
        let cfg: SynthConfig = serde_json::from_str(text).unwrap();
        assert_eq!(cfg.n_speakers, 3);
        assert!(serde_json::from_str::<SynthConfig>(r#"{"dimm":3}"#).is_err());
    }
}
