//! Single-step output-layer probing.
//!
//! A probe takes a frozen base model, computes the loss gradient with respect
//! to the output projection for one sample, and applies one plain gradient
//! step: `W' = W - lr * G`. The base weights are never modified, so every
//! sample is measured from the same starting point.

pub mod snapshot;
pub mod tinylm;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::SampleRecord;
use crate::linalg::{scaled_axpy, LinalgError, Matrix};

pub use tinylm::{TinyLm, TinyLmConfig, TrainConfig};

pub const DEFAULT_LEARNING_RATE: f64 = 2e-5;
pub const DEFAULT_MAX_SEQ_LEN: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossScope {
    /// Only positions predicting response tokens (and end-of-sequence) are supervised.
    #[default]
    ResponseOnly,
    /// Every next-token position is supervised.
    FullSequence,
}

impl LossScope {
    pub fn as_str(self) -> &'static str {
        match self {
            LossScope::ResponseOnly => "response_only",
            LossScope::FullSequence => "full_sequence",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub learning_rate: f64,
    pub max_seq_len: usize,
    pub loss_scope: LossScope,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            learning_rate: DEFAULT_LEARNING_RATE,
            max_seq_len: DEFAULT_MAX_SEQ_LEN,
            loss_scope: LossScope::ResponseOnly,
            seed: 0,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<(), ProbeError> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(ProbeError::InvalidConfig(format!(
                "learning_rate must be positive and finite, got {}",
                self.learning_rate
            )));
        }
        if self.max_seq_len < 2 {
            return Err(ProbeError::InvalidConfig(format!(
                "max_seq_len must be at least 2, got {}",
                self.max_seq_len
            )));
        }
        Ok(())
    }

    /// Stable textual identity, used in provenance tags and cache keys.
    pub fn fingerprint(&self) -> String {
        format!(
            "lr={:e};max_seq_len={};scope={};seed={}",
            self.learning_rate,
            self.max_seq_len,
            self.loss_scope.as_str(),
            self.seed
        )
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProbeError {
    #[error("sample `{sample_id}` has no supervised target tokens")]
    EmptyTarget { sample_id: String },
    #[error("sample `{sample_id}` cannot be tokenized: {reason}")]
    TokenizationFailure { sample_id: String, reason: String },
    #[error("invalid probe configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// A model whose output layer can be probed one sample at a time.
///
/// Implementations must evaluate every gradient at the same base weights, and
/// must be shareable across threads for parallel scoring.
pub trait ProbeModel: Sync {
    /// The frozen output-layer weight matrix (bias excluded).
    fn base_output_layer(&self) -> &Matrix;

    /// `d loss / d W` at the base weights. Same shape as `base_output_layer`.
    fn output_layer_gradient(&self, sample: &SampleRecord, cfg: &ProbeConfig) -> Result<Matrix, ProbeError>;

    /// Mean token-level negative log-likelihood over the supervised positions.
    fn loss(&self, sample: &SampleRecord, cfg: &ProbeConfig) -> Result<f64, ProbeError>;

    fn vocab_size(&self) -> usize;

    /// Identifies the base weights. Two models with equal fingerprints must
    /// produce equal gradients.
    fn fingerprint(&self) -> String;
}

impl<T: ProbeModel + ?Sized> ProbeModel for &T {
    fn base_output_layer(&self) -> &Matrix {
        (**self).base_output_layer()
    }
    fn output_layer_gradient(&self, sample: &SampleRecord, cfg: &ProbeConfig) -> Result<Matrix, ProbeError> {
        (**self).output_layer_gradient(sample, cfg)
    }
    fn loss(&self, sample: &SampleRecord, cfg: &ProbeConfig) -> Result<f64, ProbeError> {
        (**self).loss(sample, cfg)
    }
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }
    fn fingerprint(&self) -> String {
        (**self).fingerprint()
    }
}

/// Output-layer weights before and after one probe step.
#[derive(Debug, Clone)]
pub struct ProbeStep<'a> {
    pub before: &'a Matrix,
    pub after: Matrix,
}

pub fn probe_step<'m, M: ProbeModel + ?Sized>(
    model: &'m M,
    cfg: &ProbeConfig,
    sample: &SampleRecord,
) -> Result<ProbeStep<'m>, ProbeError> {
    cfg.validate()?;
    let before = model.base_output_layer();
    let grad = model.output_layer_gradient(sample, cfg)?;
    let after = scaled_axpy(before, -cfg.learning_rate, &grad)?;
    Ok(ProbeStep { before, after })
}

pub fn cross_entropy_loss<M: ProbeModel + ?Sized>(
    model: &M,
    sample: &SampleRecord,
    cfg: &ProbeConfig,
) -> Result<f64, ProbeError> {
    model.loss(sample, cfg)
}
