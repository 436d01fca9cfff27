//! Fine-tune on selected subsets and compare held-out loss across methods.

use serde::{Deserialize, Serialize};

use super::synth::{generate, CorpusSpec};
use super::{default_warmup, warm_probe, HarnessError};
use crate::io::{fmt_f64, ser_f64};
use crate::metrics::score_dataset;
use crate::probe::{ProbeConfig, TinyLm, TinyLmConfig, TrainConfig};
use crate::select::{run_selection, CriterionMatrix, Method, SelectionParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QualityConfig {
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    pub ratio: f64,
    /// Weight for `weighted_sum`.
    pub weight: f64,
    pub corpus: CorpusSpec,
    pub model: TinyLmConfig,
    pub warmup: TrainConfig,
    pub finetune: TrainConfig,
    pub probe: ProbeConfig,
}

impl Default for QualityConfig {
    fn default() -> Self {
        Self {
            methods: Method::ALL.to_vec(),
            seeds: (0..5).collect(),
            ratio: 0.2,
            weight: 0.5,
            corpus: CorpusSpec::default(),
            model: TinyLmConfig::default(),
            warmup: default_warmup(),
            finetune: TrainConfig {
                epochs: 30,
                learning_rate: 0.3,
                ..TrainConfig::default()
            },
            probe: ProbeConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityRun {
    pub method: Method,
    pub seed: u64,
    pub n_selected: usize,
    /// Selected samples that were corrupted in the generated corpus.
    pub n_noisy_selected: usize,
    #[serde(serialize_with = "ser_f64")]
    pub heldout_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub n_seeds: usize,
    #[serde(serialize_with = "ser_f64")]
    pub mean: f64,
    /// Sample standard deviation; 0 for a single seed.
    #[serde(serialize_with = "ser_f64")]
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub config: QualityConfig,
    pub runs: Vec<QualityRun>,
    pub summary: Vec<MethodSummary>,
}

impl QualityReport {
    pub fn summary_for(&self, method: Method) -> Option<&MethodSummary> {
        self.summary.iter().find(|s| s.method == method)
    }

    /// `method,n_seeds,mean,std`.
    pub fn summary_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["method", "n_seeds", "mean", "std"]).unwrap();
        for s in &self.summary {
            w.write_record([
                s.method.as_str().to_string(),
                s.n_seeds.to_string(),
                fmt_f64(s.mean),
                fmt_f64(s.std),
            ])
            .unwrap();
        }
        String::from_utf8(w.into_inner().unwrap()).unwrap()
    }

    pub fn runs_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["method", "seed", "n_selected", "n_noisy_selected", "heldout_loss"])
            .unwrap();
        for r in &self.runs {
            w.write_record([
                r.method.as_str().to_string(),
                r.seed.to_string(),
                r.n_selected.to_string(),
                r.n_noisy_selected.to_string(),
                fmt_f64(r.heldout_loss),
            ])
            .unwrap();
        }
        String::from_utf8(w.into_inner().unwrap()).unwrap()
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// For each seed: generate a corpus, warm a probe on its clean pretrain
/// split, score the training split, then for each method fine-tune a fresh
/// model on the selected subset and measure mean loss on the held-out split.
pub fn subset_quality_experiment(cfg: &QualityConfig) -> Result<QualityReport, HarnessError> {
    if cfg.methods.is_empty() || cfg.seeds.is_empty() {
        return Err(HarnessError::InvalidConfig("need at least one method and one seed".into()));
    }
    let mut runs = Vec::new();
    for &seed in &cfg.seeds {
        let corpus = generate(&CorpusSpec {
            seed,
            ..cfg.corpus.clone()
        });
        let probe = warm_probe(
            TinyLmConfig {
                seed,
                ..cfg.model.clone()
            },
            &corpus.pretrain,
            &TrainConfig { seed, ..cfg.warmup.clone() },
        )?;
        let scored = score_dataset(&probe, &cfg.probe, &corpus.train)?;
        let matrix = CriterionMatrix::from_metrics(&scored.metrics)?;
        for &method in &cfg.methods {
            let params = SelectionParams {
                weight: (method == Method::WeightedSum).then_some(cfg.weight),
                seed: (method == Method::Random).then_some(seed),
                ..SelectionParams::new(cfg.ratio)
            };
            let sel = run_selection(&matrix, method, params)?;
            let chosen: std::collections::HashSet<&str> = sel.selected_ids.iter().map(String::as_str).collect();
            let subset: Vec<_> = corpus
                .train
                .iter()
                .filter(|s| chosen.contains(s.id.as_str()))
                .cloned()
                .collect();
            let mut student = TinyLm::new(TinyLmConfig {
                seed: seed.wrapping_add(1),
                ..cfg.model.clone()
            })?;
            student.train(&subset, &TrainConfig { seed, ..cfg.finetune.clone() });
            let heldout_loss = student
                .mean_loss(&corpus.heldout, &cfg.probe)
                .ok_or_else(|| HarnessError::InvalidConfig("held-out split has no supervised tokens".into()))?;
            runs.push(QualityRun {
                method,
                seed,
                n_selected: subset.len(),
                n_noisy_selected: subset.iter().filter(|s| corpus.noisy_ids.contains(&s.id)).count(),
                heldout_loss,
            });
        }
    }
    let summary = cfg
        .methods
        .iter()
        .map(|&method| {
            let xs: Vec<f64> = runs.iter().filter(|r| r.method == method).map(|r| r.heldout_loss).collect();
            let (mean, std) = mean_std(&xs);
            MethodSummary {
                method,
                n_seeds: xs.len(),
                mean,
                std,
            }
        })
        .collect();
    Ok(QualityReport {
        config: cfg.clone(),
        runs,
        summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_std_matches_hand_values() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_std(&[7.0]), (7.0, 0.0));
    }

    #[test]
    fn small_experiment_runs_and_summarises() {
        let cfg = QualityConfig {
            methods: vec![Method::Topsis, Method::Random],
            seeds: vec![0, 1],
            corpus: CorpusSpec {
                n_train: 40,
                n_heldout: 10,
                n_pretrain: 20,
                ..CorpusSpec::default()
            },
            model: TinyLmConfig {
                hidden: 8,
                ..TinyLmConfig::default()
            },
            warmup: TrainConfig { epochs: 1, ..TrainConfig::default() },
            finetune: TrainConfig { epochs: 1, ..TrainConfig::default() },
            ..QualityConfig::default()
        };
        let report = subset_quality_experiment(&cfg).unwrap();
        assert_eq!(report.runs.len(), 4);
        assert!(report.runs.iter().all(|r| r.n_selected == 8 && r.heldout_loss.is_finite()));
        assert_eq!(report.summary_for(Method::Topsis).unwrap().n_seeds, 2);
        assert_eq!(report.summary_csv().lines().count(), 3);
        assert_eq!(subset_quality_experiment(&cfg).unwrap(), report);
    }
}
