//! Diagnostic experiments: noise robustness, selection overlap, reverse
//! (NODON) selection and subset-quality comparison.

pub mod noise;
pub mod quality;
pub mod synth;

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::SampleRecord;
use crate::io::{fmt_f64, ser_f64};
use crate::metrics::{score_dataset, MetricsError, SampleMetrics};
use crate::probe::{ProbeConfig, ProbeModel, TinyLm, TinyLmConfig, TrainConfig};
use crate::select::{run_selection, topsis_scores, CriterionMatrix, Method, RankedSelection, SelectError, SelectionParams};

pub use noise::{inject_noise, NoiseSpec};
pub use quality::{subset_quality_experiment, QualityConfig, QualityReport};
pub use synth::{generate, CorpusSpec, SyntheticCorpus};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Select(#[from] SelectError),
    #[error(transparent)]
    Probe(#[from] crate::probe::ProbeError),
    #[error("unknown sample id `{0}`")]
    UnknownSampleId(String),
    #[error("invalid noise spec: {0}")]
    InvalidSpec(String),
    #[error("selection is empty")]
    EmptySelection,
    #[error("metrics missing for {} sample(s), e.g. `{}`", .0.len(), .0[0])]
    MissingMetrics(Vec<String>),
    #[error("invalid experiment configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapReport {
    pub set_a_size: usize,
    pub set_b_size: usize,
    pub intersection: usize,
    /// `|A ∩ B| / |A|`.
    #[serde(serialize_with = "ser_f64")]
    pub overlap: f64,
}

pub fn selection_overlap(a: &[String], b: &[String]) -> Result<OverlapReport, HarnessError> {
    let set_a: HashSet<&str> = a.iter().map(String::as_str).collect();
    if set_a.is_empty() {
        return Err(HarnessError::EmptySelection);
    }
    let set_b: HashSet<&str> = b.iter().map(String::as_str).collect();
    let intersection = set_a.intersection(&set_b).count();
    Ok(OverlapReport {
        set_a_size: set_a.len(),
        set_b_size: set_b.len(),
        intersection,
        overlap: intersection as f64 / set_a.len() as f64,
    })
}

/// Warm-up schedule used by the bundled experiments.
pub fn default_warmup() -> TrainConfig {
    TrainConfig {
        epochs: 10,
        learning_rate: 0.3,
        ..TrainConfig::default()
    }
}

/// Trains a fresh TinyLM on clean data so probing starts from a model that
/// already fits the task families.
pub fn warm_probe(model: TinyLmConfig, data: &[SampleRecord], train: &TrainConfig) -> Result<TinyLm, HarnessError> {
    let mut lm = TinyLm::new(model)?;
    lm.train(data, train);
    Ok(lm)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodShift {
    pub sample_id: String,
    #[serde(serialize_with = "ser_f64")]
    pub nod_clean: f64,
    #[serde(serialize_with = "ser_f64")]
    pub nod_corrupted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseExperimentReport {
    #[serde(serialize_with = "ser_f64")]
    pub ratio: f64,
    pub noise: NoiseSpec,
    pub clean_selected: Vec<String>,
    pub noisy_selected: Vec<String>,
    pub overlap: OverlapReport,
    pub corrupted: Vec<NodShift>,
    #[serde(serialize_with = "ser_f64")]
    pub mean_nod_clean: f64,
    #[serde(serialize_with = "ser_f64")]
    pub mean_nod_corrupted: f64,
    /// `mean_nod_corrupted - mean_nod_clean`.
    #[serde(serialize_with = "ser_f64")]
    pub mean_nod_shift: f64,
}

impl NoiseExperimentReport {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["sample_id", "nod_clean", "nod_corrupted"]).unwrap();
        for s in &self.corrupted {
            w.write_record([s.sample_id.clone(), fmt_f64(s.nod_clean), fmt_f64(s.nod_corrupted)])
                .unwrap();
        }
        String::from_utf8(w.into_inner().unwrap()).unwrap()
    }
}

fn topsis_selection(metrics: &[SampleMetrics], ratio: f64) -> Result<RankedSelection, HarnessError> {
    let m = CriterionMatrix::from_metrics(metrics)?;
    Ok(run_selection(&m, Method::Topsis, SelectionParams::new(ratio))?)
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Clean TOPSIS selection at `ratio`, corruption of exactly the selected
/// samples with `spec` (its own target set is ignored), then re-scoring and
/// re-selection on the corrupted dataset.
pub fn noise_experiment<M: ProbeModel + ?Sized>(
    dataset: &[SampleRecord],
    model: &M,
    cfg: &ProbeConfig,
    ratio: f64,
    spec: &NoiseSpec,
) -> Result<NoiseExperimentReport, HarnessError> {
    let clean = score_dataset(model, cfg, dataset)?;
    let clean_sel = topsis_selection(&clean.metrics, ratio)?;
    let targets = spec.with_targets(clean_sel.selected_ids.iter().cloned());
    finish_noise_experiment(dataset, model, cfg, ratio, &targets, clean.metrics, clean_sel)
}

/// Same protocol with an explicit target set.
pub fn noise_experiment_with_targets<M: ProbeModel + ?Sized>(
    dataset: &[SampleRecord],
    model: &M,
    cfg: &ProbeConfig,
    ratio: f64,
    spec: &NoiseSpec,
) -> Result<NoiseExperimentReport, HarnessError> {
    let clean = score_dataset(model, cfg, dataset)?;
    let clean_sel = topsis_selection(&clean.metrics, ratio)?;
    finish_noise_experiment(dataset, model, cfg, ratio, spec, clean.metrics, clean_sel)
}

fn finish_noise_experiment<M: ProbeModel + ?Sized>(
    dataset: &[SampleRecord],
    model: &M,
    cfg: &ProbeConfig,
    ratio: f64,
    spec: &NoiseSpec,
    clean_metrics: Vec<SampleMetrics>,
    clean_sel: RankedSelection,
) -> Result<NoiseExperimentReport, HarnessError> {
    let corrupted = inject_noise(dataset, spec)?;
    let noisy = score_dataset(model, cfg, &corrupted)?;
    let noisy_sel = topsis_selection(&noisy.metrics, ratio)?;
    let overlap = selection_overlap(&clean_sel.selected_ids, &noisy_sel.selected_ids)?;

    let clean_nod: HashMap<&str, f64> = clean_metrics.iter().map(|m| (m.sample_id.as_str(), m.nod)).collect();
    let noisy_nod: HashMap<&str, f64> = noisy.metrics.iter().map(|m| (m.sample_id.as_str(), m.nod)).collect();
    let shifts: Vec<NodShift> = spec
        .target_ids
        .iter()
        .filter_map(|id| {
            Some(NodShift {
                sample_id: id.clone(),
                nod_clean: *clean_nod.get(id.as_str())?,
                nod_corrupted: *noisy_nod.get(id.as_str())?,
            })
        })
        .collect();
    let mean_nod_clean = mean(shifts.iter().map(|s| s.nod_clean));
    let mean_nod_corrupted = mean(shifts.iter().map(|s| s.nod_corrupted));
    Ok(NoiseExperimentReport {
        ratio,
        noise: spec.clone(),
        clean_selected: clean_sel.selected_ids,
        noisy_selected: noisy_sel.selected_ids,
        overlap,
        corrupted: shifts,
        mean_nod_clean,
        mean_nod_corrupted,
        mean_nod_shift: mean_nod_corrupted - mean_nod_clean,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterRow {
    pub sample_id: String,
    pub don: f64,
    pub nod: f64,
    pub topsis_score: f64,
    pub selected: bool,
}

/// CSV with columns `sample_id,don,nod,topsis_score,selected`.
pub fn scatter_csv(rows: &[ScatterRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["sample_id", "don", "nod", "topsis_score", "selected"]).unwrap();
    for r in rows {
        w.write_record([
            r.sample_id.clone(),
            fmt_f64(r.don),
            fmt_f64(r.nod),
            fmt_f64(r.topsis_score),
            if r.selected { "1" } else { "0" }.to_string(),
        ])
        .unwrap();
    }
    String::from_utf8(w.into_inner().unwrap()).unwrap()
}

/// Scatter rows in metrics order; `selected` marks membership in `chosen`.
pub fn scatter_rows(metrics: &[SampleMetrics], chosen: &[String]) -> Result<Vec<ScatterRow>, HarnessError> {
    let m = CriterionMatrix::from_metrics(metrics)?;
    let chosen: HashSet<&str> = chosen.iter().map(String::as_str).collect();
    Ok(topsis_scores(&m)
        .into_iter()
        .zip(metrics)
        .map(|((id, score), mm)| ScatterRow {
            selected: chosen.contains(id.as_str()),
            sample_id: id,
            don: mm.don,
            nod: mm.nod,
            topsis_score: score,
        })
        .collect())
}

#[derive(Debug, Clone)]
pub struct NodonDataset {
    /// The worst-ranked samples, worst first.
    pub records: Vec<SampleRecord>,
    pub selection: RankedSelection,
    pub scatter: Vec<ScatterRow>,
}

/// Metrics restricted to `dataset`, erroring if any sample lacks a row.
pub fn metrics_for<'a>(dataset: &[SampleRecord], metrics: &'a [SampleMetrics]) -> Result<Vec<&'a SampleMetrics>, HarnessError> {
    let by_id: HashMap<&str, &SampleMetrics> = metrics.iter().map(|m| (m.sample_id.as_str(), m)).collect();
    let missing: Vec<String> = dataset
        .iter()
        .filter(|s| !by_id.contains_key(s.id.as_str()))
        .map(|s| s.id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(HarnessError::MissingMetrics(missing));
    }
    Ok(dataset.iter().map(|s| by_id[s.id.as_str()]).collect())
}

/// Reverse TOPSIS selection: the bottom `ratio` of the dataset.
pub fn build_nodon_dataset(dataset: &[SampleRecord], metrics: &[SampleMetrics], ratio: f64) -> Result<NodonDataset, HarnessError> {
    let covered: Vec<SampleMetrics> = metrics_for(dataset, metrics)?.into_iter().cloned().collect();
    let m = CriterionMatrix::from_metrics(&covered)?;
    let params = SelectionParams {
        reverse: true,
        ..SelectionParams::new(ratio)
    };
    let selection = run_selection(&m, Method::Topsis, params)?;
    let by_id: HashMap<&str, &SampleRecord> = dataset.iter().map(|s| (s.id.as_str(), s)).collect();
    let records = selection
        .selected_ids
        .iter()
        .map(|id| by_id[id.as_str()].clone())
        .collect();
    let scatter = scatter_rows(&covered, &selection.selected_ids)?;
    Ok(NodonDataset {
        records,
        selection,
        scatter,
    })
}
