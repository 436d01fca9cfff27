//! Two-criterion TOPSIS: DON is a benefit, NOD a cost.

use super::CriterionMatrix;
use crate::linalg::pairwise_sum_sq;

/// Divides each column by its Euclidean norm. A zero column stays zero.
pub fn vector_normalize(m: &CriterionMatrix) -> CriterionMatrix {
    CriterionMatrix {
        ids: m.ids.clone(),
        don: normalize_column(&m.don),
        nod: normalize_column(&m.nod),
    }
}

fn normalize_column(col: &[f64]) -> Vec<f64> {
    let norm = pairwise_sum_sq(col).sqrt();
    if norm == 0.0 {
        return vec![0.0; col.len()];
    }
    col.iter().map(|v| v / norm).collect()
}

/// Distances of one normalized row to the ideal and negative-ideal points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Closeness {
    pub d_plus: f64,
    pub d_minus: f64,
    pub score: f64,
}

/// Relative closeness `C_i = D_i^- / (D_i^+ + D_i^-)` for every row, in input
/// order. Rows with both distances zero score 0.5.
pub fn topsis_closeness(m: &CriterionMatrix) -> Vec<Closeness> {
    let norm = vector_normalize(m);
    let (don_min, don_max) = min_max(&norm.don);
    let (nod_min, nod_max) = min_max(&norm.nod);
    let ideal = (don_max, nod_min);
    let anti = (don_min, nod_max);
    norm.don
        .iter()
        .zip(&norm.nod)
        .map(|(&d, &n)| {
            let d_plus = ((d - ideal.0).powi(2) + (n - ideal.1).powi(2)).sqrt();
            let d_minus = ((d - anti.0).powi(2) + (n - anti.1).powi(2)).sqrt();
            let total = d_plus + d_minus;
            let score = if total == 0.0 { 0.5 } else { d_minus / total };
            Closeness {
                d_plus,
                d_minus,
                score,
            }
        })
        .collect()
}

pub fn topsis_scores(m: &CriterionMatrix) -> Vec<(String, f64)> {
    m.ids
        .iter()
        .cloned()
        .zip(topsis_closeness(m).into_iter().map(|c| c.score))
        .collect()
}

pub(crate) fn min_max(col: &[f64]) -> (f64, f64) {
    col.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cm(don: &[f64], nod: &[f64]) -> CriterionMatrix {
        let ids = (1..=don.len()).map(|i| format!("s{i}")).collect();
        CriterionMatrix::new(ids, don.to_vec(), nod.to_vec()).unwrap()
    }

    #[test]
    fn normalization_examples() {
        let n = vector_normalize(&cm(&[3.0, 4.0, 0.0], &[1.0, 2.0, 2.0]));
        assert_eq!(n.don, vec![0.6, 0.8, 0.0]);
        let third = [1.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0];
        for (a, b) in n.nod.iter().zip(third) {
            assert!((a - b).abs() < 1e-15);
        }
        let z = vector_normalize(&cm(&[0.0, 0.0], &[1.0, 1.0]));
        assert_eq!(z.don, vec![0.0, 0.0]);
    }

    #[test]
    fn negative_values_keep_their_sign() {
        let n = vector_normalize(&cm(&[-3.0, 4.0], &[1.0, 1.0]));
        assert_eq!(n.don, vec![-0.6, 0.8]);
    }

    #[test]
    fn hand_computed_closeness() {
        let c = topsis_closeness(&cm(&[3.0, 4.0, 0.0], &[1.0, 2.0, 2.0]));
        // Normalized rows (0.6, 1/3), (0.8, 2/3), (0, 2/3);
        // Z+ = (0.8, 1/3), Z- = (0, 2/3).
        let d1m = (0.36f64 + 1.0 / 9.0).sqrt();
        assert!((c[0].d_plus - 0.2).abs() < 1e-12);
        assert!((c[0].d_minus - d1m).abs() < 1e-12);
        assert!((c[0].score - d1m / (0.2 + d1m)).abs() < 1e-12);
        assert!((c[1].score - 0.8 / (0.8 + 1.0 / 3.0)).abs() < 1e-12);
        assert_eq!(c[2].score, 0.0);
        assert!((c[0].score - 0.7744).abs() < 1e-4);
        assert!((c[1].score - 0.7059).abs() < 1e-4);
    }

    #[test]
    fn degenerate_rows_score_half() {
        assert_eq!(topsis_closeness(&cm(&[1.0], &[2.0]))[0].score, 0.5);
        let c = topsis_closeness(&cm(&[1.0, 1.0], &[2.0, 2.0]));
        assert_eq!((c[0].score, c[1].score), (0.5, 0.5));
    }
}
