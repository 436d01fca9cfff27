//! Non-dominated sorting under (maximize DON, minimize NOD).

use super::CriterionMatrix;

/// True if row `a` is at least as good as `b` on both criteria and strictly
/// better on one.
pub fn dominates(a: (f64, f64), b: (f64, f64)) -> bool {
    a.0 >= b.0 && a.1 <= b.1 && (a.0 > b.0 || a.1 < b.1)
}

/// Front index of every row (0 is the non-dominated front), in input order.
///
/// Rows are swept in DON-descending order; each front keeps the member with
/// the lowest NOD seen so far (the earliest such member also has the highest
/// DON among ties). A row joins the first front that does not dominate it,
/// located by binary search since domination by front `f + 1` implies
/// domination by front `f`. O(n log n).
pub fn front_indices(m: &CriterionMatrix) -> Vec<usize> {
    let n = m.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        m.don[j]
            .total_cmp(&m.don[i])
            .then(m.nod[i].total_cmp(&m.nod[j]))
    });

    // Per front: (nod, don) of its lowest-NOD member.
    let mut fronts: Vec<(f64, f64)> = Vec::new();
    let mut out = vec![0; n];
    for i in order {
        let point = (m.don[i], m.nod[i]);
        let front_dominates =
            |&(best_nod, best_don): &(f64, f64)| dominates((best_don, best_nod), point);
        let f = fronts.partition_point(front_dominates);
        if f == fronts.len() {
            fronts.push((point.1, point.0));
        } else if point.1 < fronts[f].0 {
            fronts[f] = (point.1, point.0);
        }
        out[i] = f;
    }
    out
}

/// Scores are `-front`; the order is front ascending, DON descending, then id.
pub fn pareto_rank(m: &CriterionMatrix) -> Vec<(String, f64)> {
    let fronts = front_indices(m);
    let mut idx: Vec<usize> = (0..m.len()).collect();
    idx.sort_by(|&i, &j| {
        fronts[i]
            .cmp(&fronts[j])
            .then(m.don[j].total_cmp(&m.don[i]))
            .then_with(|| m.ids[i].cmp(&m.ids[j]))
    });
    idx.into_iter()
        .map(|i| (m.ids[i].clone(), -(fronts[i] as f64)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cm(don: &[f64], nod: &[f64]) -> CriterionMatrix {
        let ids = (1..=don.len()).map(|i| format!("s{i}")).collect();
        CriterionMatrix::new(ids, don.to_vec(), nod.to_vec()).unwrap()
    }

    /// Peels fronts by checking every pair.
    fn brute_force_fronts(m: &CriterionMatrix) -> Vec<usize> {
        let n = m.len();
        let mut front = vec![usize::MAX; n];
        let mut level = 0;
        let mut remaining: Vec<usize> = (0..n).collect();
        while !remaining.is_empty() {
            let current: Vec<usize> = remaining
                .iter()
                .copied()
                .filter(|&i| {
                    !remaining
                        .iter()
                        .any(|&j| dominates((m.don[j], m.nod[j]), (m.don[i], m.nod[i])))
                })
                .collect();
            for &i in &current {
                front[i] = level;
            }
            remaining.retain(|i| !current.contains(i));
            level += 1;
        }
        front
    }

    #[test]
    fn three_sample_example() {
        // s1 dominates s3 (same NOD, higher DON); s2 and s3 are mutually
        // non-dominated once s1 is removed.
        let m = cm(&[5.0, 4.0, 1.0], &[1.0, 2.0, 1.0]);
        assert_eq!(front_indices(&m), brute_force_fronts(&m));
        let ranked = pareto_rank(&m);
        let ids: Vec<_> = ranked.iter().map(|(id, _)| id.as_str()).collect();
        assert_eq!(ids, ["s1", "s2", "s3"]);
        assert_eq!(ranked.iter().map(|r| r.1).collect::<Vec<_>>(), [0.0, -1.0, -1.0]);
    }

    #[test]
    fn identical_samples_share_a_front() {
        let m = CriterionMatrix::new(
            vec!["b".into(), "c".into(), "a".into()],
            vec![1.0; 3],
            vec![2.0; 3],
        )
        .unwrap();
        let ranked = pareto_rank(&m);
        assert!(ranked.iter().all(|(_, s)| *s == 0.0));
        let ids: Vec<_> = ranked.iter().map(|(id, _)| id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
    }

    #[test]
    fn strict_domination_splits_fronts() {
        let m = cm(&[2.0, 1.0], &[1.0, 2.0]);
        assert_eq!(front_indices(&m), vec![0, 1]);
    }

    proptest! {
        #[test]
        fn matches_brute_force(points in prop::collection::vec((0u8..6, 0u8..6), 1..40)) {
            // Small integer grid forces plenty of ties.
            let don: Vec<f64> = points.iter().map(|p| p.0 as f64).collect();
            let nod: Vec<f64> = points.iter().map(|p| p.1 as f64).collect();
            let m = cm(&don, &nod);
            prop_assert_eq!(front_indices(&m), brute_force_fronts(&m));
        }
    }
}
