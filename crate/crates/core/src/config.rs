//! Model and training configuration.
//!
//! Training configs are flat JSON objects; every key is optional and
//! command-line flags override file values.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::contrastive::Thresholds;
use crate::corpus::Mode;
use crate::error::{Error, Result};

/// Architecture and wiring; stored in checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub mode: Mode,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub visual_input_dim: usize,
    pub visual_dim: usize,
    pub shared_dim: usize,
    pub alpha: f64,
    pub tau: f64,
    pub theta_hi: u8,
    pub theta_lo: u8,
    pub plain_residual: bool,
    pub beta_zero_init: bool,
    pub no_probe_mask: bool,
    pub fixed_beta: Option<f64>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Multimodal,
            embed_dim: 300,
            hidden_dim: 128,
            visual_input_dim: 2048,
            visual_dim: 128,
            shared_dim: 64,
            alpha: 1.0,
            tau: 1.0,
            theta_hi: 3,
            theta_lo: 1,
            plain_residual: false,
            beta_zero_init: true,
            no_probe_mask: false,
            fixed_beta: None,
        }
    }
}

impl ModelConfig {
    pub fn thresholds(&self) -> Thresholds {
        Thresholds {
            high: self.theta_hi,
            low: self.theta_lo,
        }
    }

    pub fn multimodal(&self) -> bool {
        self.mode == Mode::Multimodal
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, message: String| {
            Err(Error::Config {
                key: key.into(),
                message,
            })
        };
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad("alpha", format!("must lie in (0, 1], got {}", self.alpha));
        }
        if !(self.tau > 0.0) {
            return bad("tau", format!("must be positive, got {}", self.tau));
        }
        if let Some(b) = self.fixed_beta {
            if !(b > 0.0 && b < self.alpha) {
                return bad("fixed_beta", format!("must lie in (0, alpha), got {b}"));
            }
        }
        if self.theta_lo >= self.theta_hi {
            return bad("theta_lo", "must be below theta_hi".into());
        }
        Ok(())
    }
}

/// Everything `train` needs. Defaults follow the full-scale setting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: Mode,
    pub learning_rate: f64,
    pub kappa: f64,
    pub gamma: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub dropout: f64,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub visual_dim: usize,
    pub shared_dim: usize,
    pub alpha: f64,
    pub tau: f64,
    pub theta_hi: u8,
    pub theta_lo: u8,
    pub theta_rel: u8,
    pub plain_residual: bool,
    pub beta_zero_init: bool,
    pub no_probe_mask: bool,
    pub fixed_beta: Option<f64>,
    pub no_cpc_ii: bool,
    pub no_cpc_pr: bool,
    pub pretrained_embeddings: Option<String>,
    pub fine_tune_embeddings: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self {
            mode: m.mode,
            learning_rate: 1e-4,
            kappa: 0.25,
            gamma: 1.0,
            batch_size: 32,
            epochs: 10,
            seed: 0,
            dropout: 0.5,
            embed_dim: m.embed_dim,
            hidden_dim: m.hidden_dim,
            visual_dim: m.visual_dim,
            shared_dim: m.shared_dim,
            alpha: m.alpha,
            tau: m.tau,
            theta_hi: m.theta_hi,
            theta_lo: m.theta_lo,
            theta_rel: 1,
            plain_residual: m.plain_residual,
            beta_zero_init: m.beta_zero_init,
            no_probe_mask: false,
            fixed_beta: None,
            no_cpc_ii: false,
            no_cpc_pr: false,
            pretrained_embeddings: None,
            fine_tune_embeddings: false,
        }
    }
}

impl TrainConfig {
    /// Small, fast setting used for synthetic corpora on a laptop CPU.
    pub fn desk() -> Self {
        Self {
            learning_rate: 3e-3,
            batch_size: 8,
            epochs: 12,
            dropout: 0.1,
            embed_dim: 32,
            hidden_dim: 32,
            visual_dim: 32,
            shared_dim: 16,
            ..Self::default()
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| Error::Config {
            key: e.path().to_string(),
            message: e.inner().to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn model_config(&self, visual_input_dim: usize) -> ModelConfig {
        ModelConfig {
            mode: self.mode,
            embed_dim: self.embed_dim,
            hidden_dim: self.hidden_dim,
            visual_input_dim,
            visual_dim: self.visual_dim,
            shared_dim: self.shared_dim,
            alpha: self.alpha,
            tau: self.tau,
            theta_hi: self.theta_hi,
            theta_lo: self.theta_lo,
            plain_residual: self.plain_residual,
            beta_zero_init: self.beta_zero_init,
            no_probe_mask: self.no_probe_mask,
            fixed_beta: self.fixed_beta,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, message: String| {
            Err(Error::Config {
                key: key.into(),
                message,
            })
        };
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate", format!("must be positive, got {}", self.learning_rate));
        }
        if !(self.kappa >= 0.0) {
            return bad("kappa", format!("must be non-negative, got {}", self.kappa));
        }
        if !(self.gamma > 0.0) {
            return bad("gamma", format!("must be positive, got {}", self.gamma));
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout", format!("must lie in [0, 1), got {}", self.dropout));
        }
        if self.embed_dim == 0 || self.hidden_dim == 0 || self.shared_dim == 0 || self.visual_dim == 0 {
            return bad("hidden_dim", "all dimensions must be positive".into());
        }
        self.model_config(1).validate()
    }
}
