//! Ranking samples from their (DON, NOD) scores and cutting the top fraction.
//!
//! Every method produces a strict total order: score descending, then
//! `sample_id` ascending. Pareto ranking orders ties within a front by DON
//! descending before falling back to the id.

pub mod pareto;
pub mod topsis;

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::ser::SerializeTuple;
use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::io::{ser_f64, ser_f64_opt};
use crate::metrics::SampleMetrics;
use crate::seeding::sample_rng;

pub use pareto::{dominates, front_indices, pareto_rank};
pub use topsis::{topsis_closeness, topsis_scores, vector_normalize};

pub const DEFAULT_WEIGHT: f64 = 0.5;

/// Slack applied before flooring `ratio * n`, so that e.g. `0.29 * 100`
/// yields 29 rather than 28.
const RATIO_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SelectError {
    #[error("ratio must be in (0, 1], got {0}")]
    InvalidRatio(f64),
    #[error("weight must be in [0, 1], got {0}")]
    InvalidWeight(f64),
    #[error("criterion matrix is empty")]
    Empty,
    #[error("criterion columns have lengths {ids}, {don}, {nod}")]
    LengthMismatch { ids: usize, don: usize, nod: usize },
    #[error("non-finite criterion value for `{0}`")]
    NonFinite(String),
    #[error("duplicate sample id `{0}`")]
    DuplicateId(String),
    #[error("method `random` requires a seed")]
    MissingSeed,
}

/// The n x 2 decision matrix: DON (benefit) and NOD (cost) per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct CriterionMatrix {
    pub ids: Vec<String>,
    pub don: Vec<f64>,
    pub nod: Vec<f64>,
}

impl CriterionMatrix {
    pub fn new(ids: Vec<String>, don: Vec<f64>, nod: Vec<f64>) -> Result<Self, SelectError> {
        if ids.len() != don.len() || ids.len() != nod.len() {
            return Err(SelectError::LengthMismatch {
                ids: ids.len(),
                don: don.len(),
                nod: nod.len(),
            });
        }
        if ids.is_empty() {
            return Err(SelectError::Empty);
        }
        let mut seen = HashSet::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if !(don[i].is_finite() && nod[i].is_finite()) {
                return Err(SelectError::NonFinite(id.clone()));
            }
            if !seen.insert(id.as_str()) {
                return Err(SelectError::DuplicateId(id.clone()));
            }
        }
        Ok(Self { ids, don, nod })
    }

    pub fn from_metrics(metrics: &[SampleMetrics]) -> Result<Self, SelectError> {
        Self::new(
            metrics.iter().map(|m| m.sample_id.clone()).collect(),
            metrics.iter().map(|m| m.don).collect(),
            metrics.iter().map(|m| m.nod).collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Topsis,
    DonOnly,
    NodOnly,
    WeightedSum,
    Pareto,
    Random,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Topsis,
        Method::DonOnly,
        Method::NodOnly,
        Method::WeightedSum,
        Method::Pareto,
        Method::Random,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Topsis => "topsis",
            Method::DonOnly => "don_only",
            Method::NodOnly => "nod_only",
            Method::WeightedSum => "weighted_sum",
            Method::Pareto => "pareto",
            Method::Random => "random",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "topsis" | "donod" => Method::Topsis,
            "don" | "don_only" => Method::DonOnly,
            "nod" | "nod_only" => Method::NodOnly,
            "wsum" | "weighted_sum" => Method::WeightedSum,
            "pareto" => Method::Pareto,
            "random" => Method::Random,
            other => {
                return Err(format!(
                    "unknown method `{other}` (expected topsis, don, nod, wsum, pareto or random)"
                ))
            }
        })
    }
}

/// One entry of a ranking. Serialises as `[sample_id, score]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Scored {
    pub sample_id: String,
    pub score: f64,
}

impl Serialize for Scored {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        struct Score(f64);
        impl Serialize for Score {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                ser_f64(&self.0, s)
            }
        }
        let mut t = s.serialize_tuple(2)?;
        t.serialize_element(&self.sample_id)?;
        t.serialize_element(&Score(self.score))?;
        t.end()
    }
}

impl<'de> Deserialize<'de> for Scored {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let (sample_id, score) = <(String, f64)>::deserialize(d)?;
        Ok(Scored { sample_id, score })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionParams {
    #[serde(serialize_with = "ser_f64")]
    pub ratio: f64,
    #[serde(serialize_with = "ser_f64_opt", skip_serializing_if = "Option::is_none", default)]
    pub weight: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub reverse: bool,
}

impl SelectionParams {
    pub fn new(ratio: f64) -> Self {
        Self {
            ratio,
            weight: None,
            seed: None,
            reverse: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedSelection {
    pub method: Method,
    pub params: SelectionParams,
    pub n_total: usize,
    pub n_selected: usize,
    pub ranking: Vec<Scored>,
    pub selected_ids: Vec<String>,
}

impl RankedSelection {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("selection report serialises")
    }
}

/// Min-max normalised weighted combination; constant columns map to 0.5.
pub fn weighted_sum_scores(m: &CriterionMatrix, weight: f64) -> Result<Vec<(String, f64)>, SelectError> {
    if !(0.0..=1.0).contains(&weight) {
        return Err(SelectError::InvalidWeight(weight));
    }
    let don = min_max_normalize(&m.don);
    let nod = min_max_normalize(&m.nod);
    Ok(m.ids
        .iter()
        .zip(don.iter().zip(&nod))
        .map(|(id, (d, n))| (id.clone(), weight * d + (1.0 - weight) * (1.0 - n)))
        .collect())
}

fn min_max_normalize(col: &[f64]) -> Vec<f64> {
    let (lo, hi) = topsis::min_max(col);
    if hi == lo {
        return vec![0.5; col.len()];
    }
    col.iter().map(|v| (v - lo) / (hi - lo)).collect()
}

/// DON scores as-is, or negated NOD so that low displacement ranks first.
pub fn single_metric_scores(m: &CriterionMatrix, method: Method) -> Vec<(String, f64)> {
    let col: Vec<f64> = match method {
        Method::DonOnly => m.don.clone(),
        Method::NodOnly => m.nod.iter().map(|v| -v).collect(),
        other => panic!("single_metric_scores called with {other}"),
    };
    m.ids.iter().cloned().zip(col).collect()
}

/// Uniform scores drawn from a per-sample stream, so the subset only depends
/// on the seed and the ids.
pub fn random_scores(m: &CriterionMatrix, seed: u64) -> Vec<(String, f64)> {
    m.ids
        .iter()
        .map(|id| (id.clone(), sample_rng(seed, id).gen::<f64>()))
        .collect()
}

fn sort_scored(mut scores: Vec<(String, f64)>) -> Vec<Scored> {
    scores.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    scores
        .into_iter()
        .map(|(sample_id, score)| Scored { sample_id, score })
        .collect()
}

/// Full ordering of the matrix under `method`.
pub fn rank(m: &CriterionMatrix, method: Method, params: &SelectionParams) -> Result<Vec<Scored>, SelectError> {
    Ok(match method {
        Method::Topsis => sort_scored(topsis_scores(m)),
        Method::DonOnly | Method::NodOnly => sort_scored(single_metric_scores(m, method)),
        Method::WeightedSum => sort_scored(weighted_sum_scores(m, params.weight.unwrap_or(DEFAULT_WEIGHT))?),
        Method::Random => sort_scored(random_scores(m, params.seed.ok_or(SelectError::MissingSeed)?)),
        // Already in front / DON / id order.
        Method::Pareto => pareto_rank(m)
            .into_iter()
            .map(|(sample_id, score)| Scored { sample_id, score })
            .collect(),
    })
}

pub fn top_k(n: usize, ratio: f64) -> Result<usize, SelectError> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(SelectError::InvalidRatio(ratio));
    }
    if n == 0 {
        return Ok(0);
    }
    let k = (ratio * n as f64 + RATIO_EPS).floor() as usize;
    Ok(k.clamp(1, n))
}

/// First `k` ids of the ranking, or with `reverse` the last `k` ids listed
/// worst first.
pub fn select_top(ranking: &[Scored], ratio: f64, reverse: bool) -> Result<Vec<String>, SelectError> {
    let k = top_k(ranking.len(), ratio)?;
    let ids = ranking.iter().map(|s| s.sample_id.clone());
    Ok(if reverse {
        ids.rev().take(k).collect()
    } else {
        ids.take(k).collect()
    })
}

pub fn run_selection(m: &CriterionMatrix, method: Method, params: SelectionParams) -> Result<RankedSelection, SelectError> {
    let ranking = rank(m, method, &params)?;
    let selected_ids = select_top(&ranking, params.ratio, params.reverse)?;
    Ok(RankedSelection {
        method,
        n_total: ranking.len(),
        n_selected: selected_ids.len(),
        params,
        ranking,
        selected_ids,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cm(don: &[f64], nod: &[f64]) -> CriterionMatrix {
        let ids = (1..=don.len()).map(|i| format!("s{i}")).collect();
        CriterionMatrix::new(ids, don.to_vec(), nod.to_vec()).unwrap()
    }

    fn order(m: &CriterionMatrix, method: Method, params: &SelectionParams) -> Vec<String> {
        rank(m, method, params)
            .unwrap()
            .into_iter()
            .map(|s| s.sample_id)
            .collect()
    }

    #[test]
    fn weighted_sum_example() {
        let s = weighted_sum_scores(&cm(&[0.0, 10.0], &[5.0, 5.0]), 0.5).unwrap();
        assert_eq!(s[0].1, 0.25);
        assert_eq!(s[1].1, 0.75);
        assert!(weighted_sum_scores(&cm(&[0.0], &[1.0]), 1.5).is_err());
    }

    #[test]
    fn weighted_sum_collapses_to_single_metrics() {
        let m = cm(&[0.3, -0.2, 0.9, 0.1, 0.5], &[0.7, 0.1, 0.4, 0.2, 0.9]);
        let p = |w| SelectionParams {
            weight: Some(w),
            ..SelectionParams::new(1.0)
        };
        assert_eq!(
            order(&m, Method::WeightedSum, &p(1.0)),
            order(&m, Method::DonOnly, &p(1.0))
        );
        assert_eq!(
            order(&m, Method::WeightedSum, &p(0.0)),
            order(&m, Method::NodOnly, &p(0.0))
        );
    }

    #[test]
    fn single_metric_orders() {
        let m = cm(&[3.0, 4.0, 0.0], &[1.0, 2.0, 2.0]);
        let p = SelectionParams::new(1.0);
        assert_eq!(order(&m, Method::DonOnly, &p), ["s2", "s1", "s3"]);
        assert_eq!(order(&m, Method::NodOnly, &p), ["s1", "s2", "s3"]);
        let one = cm(&[1.0], &[1.0]);
        for method in Method::ALL {
            let p = SelectionParams {
                seed: Some(1),
                ..SelectionParams::new(1.0)
            };
            assert_eq!(order(&one, method, &p), ["s1"]);
        }
    }

    #[test]
    fn topsis_ranking_matches_hand_example() {
        let m = cm(&[3.0, 4.0, 0.0], &[1.0, 2.0, 2.0]);
        let sel = run_selection(&m, Method::Topsis, SelectionParams::new(2.0 / 3.0)).unwrap();
        assert_eq!(sel.selected_ids, ["s1", "s2"]);
        assert_eq!(sel.n_selected, 2);
        assert_eq!(sel.n_total, 3);
    }

    #[test]
    fn top_k_examples() {
        assert_eq!(top_k(10, 0.2).unwrap(), 2);
        assert_eq!(top_k(10, 0.3).unwrap(), 3);
        assert_eq!(top_k(3, 0.2).unwrap(), 1);
        assert_eq!(top_k(100, 0.29).unwrap(), 29);
        assert_eq!(top_k(10, 1.0).unwrap(), 10);
        for bad in [0.0, -0.1, 1.01, f64::NAN] {
            assert!(matches!(top_k(10, bad), Err(SelectError::InvalidRatio(_))));
        }
    }

    #[test]
    fn reverse_selection_lists_worst_first() {
        let ranking: Vec<Scored> = (0..5)
            .map(|i| Scored {
                sample_id: format!("s{i}"),
                score: -(i as f64),
            })
            .collect();
        assert_eq!(select_top(&ranking, 0.4, true).unwrap(), ["s4", "s3"]);
        assert_eq!(
            select_top(&ranking, 1.0, true).unwrap(),
            ["s4", "s3", "s2", "s1", "s0"]
        );
    }

    #[test]
    fn random_needs_seed_and_is_reproducible() {
        let m = cm(&[1.0, 2.0, 3.0, 4.0], &[1.0, 1.0, 1.0, 1.0]);
        assert_eq!(
            rank(&m, Method::Random, &SelectionParams::new(0.5)),
            Err(SelectError::MissingSeed)
        );
        let p = |seed| SelectionParams {
            seed: Some(seed),
            ..SelectionParams::new(0.5)
        };
        assert_eq!(order(&m, Method::Random, &p(9)), order(&m, Method::Random, &p(9)));
    }

    #[test]
    fn ties_break_by_id() {
        let m = CriterionMatrix::new(
            vec!["b".into(), "a".into(), "c".into()],
            vec![1.0, 1.0, 1.0],
            vec![1.0, 1.0, 1.0],
        )
        .unwrap();
        assert_eq!(order(&m, Method::Topsis, &SelectionParams::new(1.0)), ["a", "b", "c"]);
    }

    #[test]
    fn matrix_validation() {
        assert_eq!(
            CriterionMatrix::new(vec![], vec![], vec![]),
            Err(SelectError::Empty)
        );
        assert!(matches!(
            CriterionMatrix::new(vec!["a".into()], vec![f64::NAN], vec![0.0]),
            Err(SelectError::NonFinite(_))
        ));
        assert!(matches!(
            CriterionMatrix::new(vec!["a".into(), "a".into()], vec![0.0; 2], vec![0.0; 2]),
            Err(SelectError::DuplicateId(_))
        ));
    }

    #[test]
    fn method_names_parse() {
        for (s, m) in [
            ("topsis", Method::Topsis),
            ("don", Method::DonOnly),
            ("nod", Method::NodOnly),
            ("wsum", Method::WeightedSum),
            ("pareto", Method::Pareto),
            ("random", Method::Random),
        ] {
            assert_eq!(s.parse::<Method>().unwrap(), m);
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
        assert!("best".parse::<Method>().is_err());
    }

    #[test]
    fn report_json_shape() {
        let m = cm(&[3.0, 4.0, 0.0], &[1.0, 2.0, 2.0]);
        let sel = run_selection(&m, Method::Topsis, SelectionParams::new(1.0 / 3.0)).unwrap();
        let v: serde_json::Value = serde_json::from_str(&sel.to_json()).unwrap();
        assert_eq!(v["method"], "topsis");
        assert_eq!(v["n_total"], 3);
        assert_eq!(v["n_selected"], 1);
        assert_eq!(v["selected_ids"][0], "s1");
        assert_eq!(v["ranking"][2][0], "s3");
        assert!(sel.to_json().contains("\"ratio\": 3.3333333333333331e-1"));
        let back: RankedSelection = serde_json::from_str(&sel.to_json()).unwrap();
        assert_eq!(back, sel);
    }
}
