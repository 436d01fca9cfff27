//! Label corruption by random word masking.

use std::collections::{BTreeSet, HashSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::dataset::SampleRecord;
use crate::io::ser_f64;
use crate::seeding::sample_rng;

pub const DEFAULT_MASK_PROB: f64 = 0.15;
pub const DEFAULT_MASK_TOKEN: &str = "<mask>";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    #[serde(serialize_with = "ser_f64")]
    pub mask_prob: f64,
    pub mask_token: String,
    pub target_ids: BTreeSet<String>,
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            mask_prob: DEFAULT_MASK_PROB,
            mask_token: DEFAULT_MASK_TOKEN.to_string(),
            target_ids: BTreeSet::new(),
            seed: 0,
        }
    }
}

impl NoiseSpec {
    pub fn with_targets(&self, ids: impl IntoIterator<Item = String>) -> Self {
        Self {
            target_ids: ids.into_iter().collect(),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if !(0.0..=1.0).contains(&self.mask_prob) {
            return Err(HarnessError::InvalidSpec(format!(
                "mask_prob must be in [0, 1], got {}",
                self.mask_prob
            )));
        }
        Ok(())
    }
}

/// Replaces each whitespace-delimited word of `text` with `token` with
/// probability `p`. Whitespace is kept verbatim.
pub fn mask_words(text: &str, p: f64, token: &str, rng: &mut impl Rng) -> String {
    let mut out = String::with_capacity(text.len());
    let mut word_start: Option<usize> = None;
    let flush = |out: &mut String, word: &str, rng: &mut dyn rand::RngCore| {
        if rng.gen::<f64>() < p {
            out.push_str(token);
        } else {
            out.push_str(word);
        }
    };
    for (i, ch) in text.char_indices() {
        if ch.is_whitespace() {
            if let Some(start) = word_start.take() {
                flush(&mut out, &text[start..i], rng);
            }
            out.push(ch);
        } else if word_start.is_none() {
            word_start = Some(i);
        }
    }
    if let Some(start) = word_start {
        flush(&mut out, &text[start..], rng);
    }
    out
}

/// Masks the responses of the targeted samples. Each sample draws from its
/// own `(seed, sample_id)` stream; untargeted samples are returned unchanged.
pub fn inject_noise(samples: &[SampleRecord], spec: &NoiseSpec) -> Result<Vec<SampleRecord>, HarnessError> {
    spec.validate()?;
    let known: HashSet<&str> = samples.iter().map(|s| s.id.as_str()).collect();
    if let Some(missing) = spec.target_ids.iter().find(|id| !known.contains(id.as_str())) {
        return Err(HarnessError::UnknownSampleId(missing.clone()));
    }
    Ok(samples
        .iter()
        .map(|s| {
            if !spec.target_ids.contains(&s.id) {
                return s.clone();
            }
            let mut rng = sample_rng(spec.seed, &s.id);
            SampleRecord {
                response: mask_words(&s.response, spec.mask_prob, &spec.mask_token, &mut rng),
                ..s.clone()
            }
        })
        .collect())
}
