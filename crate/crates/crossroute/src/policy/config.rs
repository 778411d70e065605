//! Backbone architecture configuration.

use serde::{Deserialize, Serialize};

use crate::nn::NormKind;
use crate::{Error, Result};

/// Model family the backbone follows. The attention-model profile uses a
/// 3-layer encoder with batch normalization and a graph-context decoder; the
/// POMO profile uses a 6-layer encoder with instance normalization (so
/// multi-start rollouts of one instance cannot cross-contaminate statistics)
/// and a leaner decoder that scores against raw node embeddings.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Profile {
    Am,
    Pomo,
}

impl Profile {
    pub fn name(&self) -> &'static str {
        match self {
            Profile::Am => "am",
            Profile::Pomo => "pomo",
        }
    }

    pub fn from_name(s: &str) -> Option<Profile> {
        match s.to_ascii_lowercase().as_str() {
            "am" => Some(Profile::Am),
            "pomo" => Some(Profile::Pomo),
            _ => None,
        }
    }

    pub fn norm_kind(&self) -> NormKind {
        match self {
            Profile::Am => NormKind::Batch,
            Profile::Pomo => NormKind::Instance,
        }
    }

    /// Default rank of the low-rank adapters for this profile, chosen to
    /// reproduce the published trainable-parameter budgets.
    pub fn default_lora_rank(&self) -> usize {
        match self {
            Profile::Am => 2,
            Profile::Pomo => 12,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_encoder_layers: usize,
    pub ff_hidden: usize,
    pub tanh_clip: f64,
}

impl BackboneConfig {
    /// Full-size configuration for a profile: d=128, 8 heads, 512-wide
    /// feedforward, clip 10; 3 encoder layers (AM) or 6 (POMO).
    pub fn for_profile(profile: Profile) -> BackboneConfig {
        BackboneConfig {
            d_model: 128,
            n_heads: 8,
            n_encoder_layers: match profile {
                Profile::Am => 3,
                Profile::Pomo => 6,
            },
            ff_hidden: 512,
            tanh_clip: 10.0,
        }
    }

    /// Small configuration for CPU-scale experiments and tests.
    pub fn desk(d_model: usize, n_encoder_layers: usize) -> BackboneConfig {
        BackboneConfig {
            d_model,
            n_heads: if d_model % 8 == 0 { 8 } else { 4 },
            n_encoder_layers,
            ff_hidden: d_model * 4,
            tanh_clip: 10.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || self.n_encoder_layers == 0 || self.ff_hidden == 0 {
            return Err(Error::invalid_argument("config dimensions must be positive"));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::invalid_argument(format!(
                "d_model {} must be divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.d_model % 2 != 0 {
            return Err(Error::invalid_argument("d_model must be even for bottleneck adapters"));
        }
        if self.tanh_clip <= 0.0 {
            return Err(Error::invalid_argument("tanh_clip must be positive"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profile_defaults() {
        let am = BackboneConfig::for_profile(Profile::Am);
        assert_eq!((am.d_model, am.n_encoder_layers), (128, 3));
        let pomo = BackboneConfig::for_profile(Profile::Pomo);
        assert_eq!((pomo.d_model, pomo.n_encoder_layers), (128, 6));
        assert!(am.validate().is_ok());
    }

    #[test]
    fn validation_rejects_bad_heads() {
        let mut cfg = BackboneConfig::for_profile(Profile::Am);
        cfg.n_heads = 7;
        assert!(cfg.validate().is_err());
    }
}
