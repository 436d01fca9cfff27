//! Per-sample weight-dynamics scores and per-layer delta reports.
//!
//! For one probe step from `W` to `W'`:
//!
//! * `don = ||W||_F - ||W'||_F`, positive when the update shrinks the weights;
//! * `nod = ||W - W'||_F`, the displacement the sample induces.
//!
//! `|don| <= nod` always holds (reverse triangle inequality).

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataset::SampleRecord;
use crate::io::{ser_f64, write_atomic};
use crate::linalg::{frobenius_distance, frobenius_norm, LinalgError, Matrix};
use crate::probe::{probe_step, ProbeConfig, ProbeError, ProbeModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub sample_id: String,
    #[serde(serialize_with = "ser_f64")]
    pub don: f64,
    #[serde(serialize_with = "ser_f64")]
    pub nod: f64,
    #[serde(serialize_with = "ser_f64")]
    pub lr: f64,
    pub probe_tag: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerDelta {
    pub layer_name: String,
    #[serde(serialize_with = "ser_f64")]
    pub norm_before: f64,
    #[serde(serialize_with = "ser_f64")]
    pub norm_after: f64,
    /// `||W - W'||_F`, the quantity layers are ranked by.
    #[serde(serialize_with = "ser_f64")]
    pub nod_l: f64,
    /// `| ||W|| - ||W'|| |`, reported for comparison only.
    #[serde(serialize_with = "ser_f64")]
    pub norm_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Skip {
    pub sample_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreOutcome {
    /// Sorted by `sample_id`.
    pub metrics: Vec<SampleMetrics>,
    /// Sorted by `sample_id`.
    pub skipped: Vec<Skip>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Parallelism {
    Sequential,
    #[default]
    Rayon,
}

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("layer `{layer}`: {source}")]
    LayerShape {
        layer: String,
        #[source]
        source: LinalgError,
    },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Probe(#[from] ProbeError),
    #[error("no scoreable samples: all {count} failed (first: {first})")]
    AllFailed { count: usize, first: String },
    #[error("duplicate sample id `{0}`")]
    DuplicateSampleId(String),
    #[error("{path}: {reason}")]
    File { path: PathBuf, reason: String },
}

pub fn don(w_before: &Matrix, w_after: &Matrix) -> Result<f64, LinalgError> {
    if w_before.shape() != w_after.shape() {
        return Err(LinalgError::ShapeMismatch {
            left: w_before.shape(),
            right: w_after.shape(),
        });
    }
    Ok(frobenius_norm(w_before) - frobenius_norm(w_after))
}

pub fn nod(w_before: &Matrix, w_after: &Matrix) -> Result<f64, LinalgError> {
    frobenius_distance(w_before, w_after)
}

/// Provenance string written into every metrics row.
pub fn probe_tag<M: ProbeModel + ?Sized>(model: &M, cfg: &ProbeConfig) -> String {
    format!("{};{}", model.fingerprint(), cfg.fingerprint())
}

/// Probes one sample and reduces the step to its two scores.
pub fn score_sample<M: ProbeModel + ?Sized>(
    model: &M,
    cfg: &ProbeConfig,
    sample: &SampleRecord,
    tag: &str,
) -> Result<SampleMetrics, ProbeError> {
    let step = probe_step(model, cfg, sample)?;
    Ok(SampleMetrics {
        sample_id: sample.id.clone(),
        don: don(step.before, &step.after)?,
        nod: nod(step.before, &step.after)?,
        lr: cfg.learning_rate,
        probe_tag: tag.to_string(),
    })
}

pub fn score_dataset<M: ProbeModel + ?Sized>(
    model: &M,
    cfg: &ProbeConfig,
    samples: &[SampleRecord],
) -> Result<ScoreOutcome, MetricsError> {
    score_dataset_with(model, cfg, samples, Parallelism::Rayon)
}

/// Scores every sample independently from the same base weights. Failed
/// samples go to the skip list; only an all-failed, non-empty input is fatal.
pub fn score_dataset_with<M: ProbeModel + ?Sized>(
    model: &M,
    cfg: &ProbeConfig,
    samples: &[SampleRecord],
    parallelism: Parallelism,
) -> Result<ScoreOutcome, MetricsError> {
    cfg.validate()?;
    let mut seen = HashSet::with_capacity(samples.len());
    for s in samples {
        if !seen.insert(s.id.as_str()) {
            return Err(MetricsError::DuplicateSampleId(s.id.clone()));
        }
    }
    let tag = probe_tag(model, cfg);
    let run = |s: &SampleRecord| score_sample(model, cfg, s, &tag).map_err(|e| (s.id.clone(), e));
    let results: Vec<_> = match parallelism {
        Parallelism::Sequential => samples.iter().map(run).collect(),
        Parallelism::Rayon => samples.par_iter().map(run).collect(),
    };

    let mut outcome = ScoreOutcome::default();
    for r in results {
        match r {
            Ok(m) => outcome.metrics.push(m),
            Err((sample_id, e)) => outcome.skipped.push(Skip {
                sample_id,
                reason: e.to_string(),
            }),
        }
    }
    outcome.metrics.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    outcome.skipped.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    if outcome.metrics.is_empty() && !outcome.skipped.is_empty() {
        return Err(MetricsError::AllFailed {
            count: outcome.skipped.len(),
            first: outcome.skipped[0].reason.clone(),
        });
    }
    Ok(outcome)
}

/// Layer deltas sorted by `nod_l` descending; equal deltas keep input order.
pub fn rank_layers(layers: &[(String, Matrix, Matrix)]) -> Result<Vec<LayerDelta>, MetricsError> {
    let mut out = Vec::with_capacity(layers.len());
    for (name, before, after) in layers {
        let nod_l = nod(before, after).map_err(|source| MetricsError::LayerShape {
            layer: name.clone(),
            source,
        })?;
        let norm_before = frobenius_norm(before);
        let norm_after = frobenius_norm(after);
        out.push(LayerDelta {
            layer_name: name.clone(),
            norm_before,
            norm_after,
            nod_l,
            norm_gap: (norm_before - norm_after).abs(),
        });
    }
    // sort_by is stable.
    out.sort_by(|a, b| b.nod_l.total_cmp(&a.nod_l));
    Ok(out)
}

pub fn metrics_to_jsonl(metrics: &[SampleMetrics]) -> String {
    let mut out = String::new();
    for m in metrics {
        out.push_str(&serde_json::to_string(m).expect("metrics serialise"));
        out.push('\n');
    }
    out
}

pub fn write_metrics_jsonl(path: &Path, metrics: &[SampleMetrics]) -> Result<(), MetricsError> {
    write_atomic(path, metrics_to_jsonl(metrics).as_bytes()).map_err(|e| MetricsError::File {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

pub fn read_metrics_jsonl(path: &Path) -> Result<Vec<SampleMetrics>, MetricsError> {
    let file_err = |reason: String| MetricsError::File {
        path: path.to_path_buf(),
        reason,
    };
    let text = fs::read_to_string(path).map_err(|e| file_err(e.to_string()))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let m: SampleMetrics =
            serde_json::from_str(line).map_err(|e| file_err(format!("line {}: {e}", i + 1)))?;
        if !(m.don.is_finite() && m.nod.is_finite() && m.nod >= 0.0) {
            return Err(file_err(format!("line {}: invalid metric values", i + 1)));
        }
        out.push(m);
    }
    Ok(out)
}

/// On-disk cache of scoring results keyed by dataset content and probe identity.
#[derive(Debug, Clone)]
pub struct MetricsCache {
    dir: PathBuf,
}

impl MetricsCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn key<M: ProbeModel + ?Sized>(samples: &[SampleRecord], model: &M, cfg: &ProbeConfig) -> String {
        let mut data = Sha256::new();
        for s in samples {
            data.update(s.to_jsonl_line().as_bytes());
            data.update(b"\n");
        }
        let mut probe = Sha256::new();
        probe.update(probe_tag(model, cfg).as_bytes());
        let hex = |d: &[u8]| d[..8].iter().map(|b| format!("{b:02x}")).collect::<String>();
        format!("{}-{}", hex(&data.finalize()), hex(&probe.finalize()))
    }

    fn paths(&self, key: &str) -> (PathBuf, PathBuf) {
        (
            self.dir.join(format!("{key}.metrics.jsonl")),
            self.dir.join(format!("{key}.skipped.json")),
        )
    }

    pub fn load(&self, key: &str) -> Option<ScoreOutcome> {
        let (mp, sp) = self.paths(key);
        let metrics = read_metrics_jsonl(&mp).ok()?;
        let skipped = serde_json::from_str(&fs::read_to_string(sp).ok()?).ok()?;
        Some(ScoreOutcome { metrics, skipped })
    }

    pub fn store(&self, key: &str, outcome: &ScoreOutcome) -> Result<(), MetricsError> {
        let (mp, sp) = self.paths(key);
        write_metrics_jsonl(&mp, &outcome.metrics)?;
        let skipped = serde_json::to_string_pretty(&outcome.skipped).expect("skips serialise");
        write_atomic(&sp, skipped.as_bytes()).map_err(|e| MetricsError::File {
            path: sp,
            reason: e.to_string(),
        })
    }
}
