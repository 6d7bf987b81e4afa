//! Evaluation metrics: correlations, ROC/AUC with the tie-aware pair
//! counting convention, top-k composition and the cross-estimator
//! agreement matrix.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::candidates::LseTuple;
use crate::error::{Error, Result};

fn check_paired(xs: &[f64], ys: &[f64]) -> Result<()> {
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch {
            expected: xs.len(),
            got: ys.len(),
        });
    }
    if xs.len() < 2 {
        return Err(Error::UndefinedCorrelation("fewer than two points"));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::UndefinedCorrelation("non-finite input"));
    }
    Ok(())
}

/// Sample Pearson correlation coefficient. Constant input is undefined.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    check_paired(xs, ys)?;
    if xs.iter().all(|v| *v == xs[0]) || ys.iter().all(|v| *v == ys[0]) {
        return Err(Error::UndefinedCorrelation("constant input"));
    }
    let n = xs.len() as f64;
    let mean_x = xs.iter().sum::<f64>() / n;
    let mean_y = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        let dx = x - mean_x;
        let dy = y - mean_y;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    Ok(sxy / (sxx.sqrt() * syy.sqrt()))
}

/// Fractional ranks (1-based), ties receiving the average of their
/// positions.
pub fn fractional_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // Positions i..=j share the average rank.
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation: Pearson over fractional ranks.
pub fn spearman_rank(xs: &[f64], ys: &[f64]) -> Result<f64> {
    check_paired(xs, ys)?;
    pearson(&fractional_ranks(xs), &fractional_ranks(ys))
}

/// One ROC operating point: classify positive iff score >= threshold.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// AUC as the probability that a random positive outscores a random
/// negative, ties counting one half, together with the ROC curve points.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<(f64, Vec<RocPoint>)> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: scores.len(),
            got: labels.len(),
        });
    }
    let positives = labels.iter().filter(|&&l| l == 1).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::DegenerateLabels(format!(
            "{positives} positive of {} labels",
            labels.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::UndefinedCorrelation("non-finite score"));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    // Descending sweep over tie groups. Counts are integers so the pair
    // accounting below is exact in f64.
    let mut curve = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut wins = 0.0; // positive strictly above negative
    let mut ties = 0.0;
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        let mut j = i;
        let mut group_pos = 0usize;
        let mut group_neg = 0usize;
        while j < order.len() && scores[order[j]] == threshold {
            if labels[order[j]] == 1 {
                group_pos += 1;
            } else {
                group_neg += 1;
            }
            j += 1;
        }
        // Negatives strictly below this group: all not yet swept.
        let neg_below = negatives - fp - group_neg;
        wins += group_pos as f64 * neg_below as f64;
        ties += group_pos as f64 * group_neg as f64;
        tp += group_pos;
        fp += group_neg;
        curve.push(RocPoint {
            threshold,
            fpr: fp as f64 / negatives as f64,
            tpr: tp as f64 / positives as f64,
        });
        i = j;
    }
    let auc = (wins + 0.5 * ties) / (positives as f64 * negatives as f64);
    Ok((auc, curve))
}

/// Fraction of the first `min(k, len)` ranked tuples whose control
/// sentence has label 0.
pub fn negative_fraction_top_k(
    ranked: &[LseTuple],
    labels: &HashMap<String, u8>,
    k: usize,
) -> Result<f64> {
    if ranked.is_empty() {
        return Err(Error::Schema("empty ranking".into()));
    }
    let take = k.min(ranked.len());
    let mut negatives = 0usize;
    for tuple in &ranked[..take] {
        let label = labels.get(&tuple.sentence_id).ok_or_else(|| {
            Error::Schema(format!("no label for sentence {:?}", tuple.sentence_id))
        })?;
        if *label == 0 {
            negatives += 1;
        }
    }
    Ok(negatives as f64 / take as f64)
}

/// Symmetric matrix of Spearman correlations between estimators'
/// per-tuple estimates, unit diagonal. Every estimator must cover every
/// tuple.
pub fn estimator_agreement_matrix(table: &[LseTuple], estimators: &[&str]) -> Result<Vec<Vec<f64>>> {
    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(estimators.len());
    for &name in estimators {
        let mut column = Vec::with_capacity(table.len());
        let mut missing = 0usize;
        for tuple in table {
            match tuple.estimates.get(name) {
                Some(&v) => column.push(v),
                None => missing += 1,
            }
        }
        if missing > 0 {
            return Err(Error::CoverageMismatch {
                estimator: name.to_string(),
                missing,
            });
        }
        columns.push(column);
    }
    let k = estimators.len();
    let mut matrix = vec![vec![1.0; k]; k];
    for a in 0..k {
        for b in a + 1..k {
            let r = spearman_rank(&columns[a], &columns[b])?;
            matrix[a][b] = r;
            matrix[b][a] = r;
        }
    }
    Ok(matrix)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::candidates::SubstitutionPair;

    #[test]
    fn pearson_affine_relations() {
        let xs: Vec<f64> = (0..10).map(|i| i as f64 * 0.7 - 2.0).collect();
        let up: Vec<f64> = xs.iter().map(|x| 2.0 * x + 3.0).collect();
        let down: Vec<f64> = xs.iter().map(|x| -x).collect();
        assert!((pearson(&xs, &up).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson(&xs, &down).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn pearson_rejects_constant_input() {
        let xs = vec![1.0, 1.0, 1.0];
        let ys = vec![1.0, 2.0, 3.0];
        assert!(matches!(
            pearson(&xs, &ys),
            Err(Error::UndefinedCorrelation(_))
        ));
    }

    /// Independent textbook-formula implementation, used as the oracle.
    fn pearson_textbook(xs: &[f64], ys: &[f64]) -> f64 {
        let n = xs.len() as f64;
        let sx: f64 = xs.iter().sum();
        let sy: f64 = ys.iter().sum();
        let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| x * y).sum();
        let sxx: f64 = xs.iter().map(|x| x * x).sum();
        let syy: f64 = ys.iter().map(|y| y * y).sum();
        (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
    }

    #[test]
    fn pearson_matches_textbook_oracle() {
        let mut state = 123u64;
        let mut next = move || {
            state = state.wrapping_mul(6_364_136_223_846_793_005).wrapping_add(1);
            ((state >> 33) as f64 / (1u64 << 30) as f64) - 1.0
        };
        for _ in 0..50 {
            let xs: Vec<f64> = (0..50).map(|_| next()).collect();
            let ys: Vec<f64> = (0..50).map(|_| next()).collect();
            let ours = pearson(&xs, &ys).unwrap();
            let oracle = pearson_textbook(&xs, &ys);
            assert!((ours - oracle).abs() < 1e-12);
        }
    }

    #[test]
    fn spearman_invariant_under_monotone_transform() {
        let xs: Vec<f64> = vec![0.1, 2.5, -1.0, 0.7, 3.0, -0.4];
        let ys: Vec<f64> = vec![10.0, 3.0, 7.0, 1.0, 0.5, 4.0];
        let base = spearman_rank(&xs, &ys).unwrap();
        let warped: Vec<f64> = xs.iter().map(|x| x.exp()).collect();
        assert!((spearman_rank(&warped, &ys).unwrap() - base).abs() < 1e-12);

        let increasing: Vec<f64> = (0..6).map(|i| i as f64).collect();
        let transformed: Vec<f64> = increasing.iter().map(|x| x.powi(3) + 1.0).collect();
        assert!((spearman_rank(&increasing, &transformed).unwrap() - 1.0).abs() < 1e-12);
        let reversed: Vec<f64> = increasing.iter().rev().copied().collect();
        assert!((spearman_rank(&increasing, &reversed).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn spearman_handles_ties_with_average_ranks() {
        // Hand-ranked: xs -> [1.5, 1.5, 3], ys -> [1, 2.5, 2.5].
        let xs = vec![1.0, 1.0, 2.0];
        let ys = vec![5.0, 7.0, 7.0];
        assert_eq!(fractional_ranks(&xs), vec![1.5, 1.5, 3.0]);
        assert_eq!(fractional_ranks(&ys), vec![1.0, 2.5, 2.5]);
        let expected = pearson(&[1.5, 1.5, 3.0], &[1.0, 2.5, 2.5]).unwrap();
        assert_eq!(spearman_rank(&xs, &ys).unwrap(), expected);
    }

    #[test]
    fn auc_perfect_and_all_ties() {
        let scores = vec![0.9, 0.8, 0.2, 0.1];
        let labels = vec![1, 1, 0, 0];
        let (auc, curve) = roc_auc(&scores, &labels).unwrap();
        assert_eq!(auc, 1.0);
        assert_eq!(curve.first().map(|p| (p.fpr, p.tpr)), Some((0.0, 0.0)));
        assert_eq!(curve.last().map(|p| (p.fpr, p.tpr)), Some((1.0, 1.0)));

        let flat = vec![0.5; 4];
        let (auc, _) = roc_auc(&flat, &labels).unwrap();
        assert_eq!(auc, 0.5);
    }

    #[test]
    fn auc_matches_brute_force_pair_counting() {
        let mut state = 77u64;
        let mut next = move || {
            state = state.wrapping_mul(6_364_136_223_846_793_005).wrapping_add(1);
            (state >> 33) as f64 / (1u64 << 31) as f64
        };
        for round in 0..20 {
            let n = 30;
            // Quantized scores to force ties.
            let scores: Vec<f64> = (0..n).map(|_| (next() * 8.0).floor() / 8.0).collect();
            let labels: Vec<u8> = (0..n)
                .map(|i| u8::from((next() > 0.5) ^ (i == 0)))
                .collect();
            if labels.iter().all(|&l| l == labels[0]) {
                continue;
            }
            let (auc, _) = roc_auc(&scores, &labels).unwrap();
            // Brute force over all positive x negative pairs.
            let mut total = 0.0;
            let mut pairs = 0.0;
            for i in 0..n {
                for j in 0..n {
                    if labels[i] == 1 && labels[j] == 0 {
                        pairs += 1.0;
                        if scores[i] > scores[j] {
                            total += 1.0;
                        } else if scores[i] == scores[j] {
                            total += 0.5;
                        }
                    }
                }
            }
            assert_eq!(auc, total / pairs, "round {round}");
        }
    }

    #[test]
    fn auc_complement_symmetry() {
        let scores = vec![0.1, 0.4, 0.4, 0.8, 0.3, 0.9];
        let labels = vec![0, 1, 0, 1, 1, 0];
        let (auc, _) = roc_auc(&scores, &labels).unwrap();
        let negated: Vec<f64> = scores.iter().map(|s| -s).collect();
        let (auc_neg, _) = roc_auc(&negated, &labels).unwrap();
        assert_eq!(auc + auc_neg, 1.0);
    }

    fn tuple_with(sid: &str, estimates: &[(&str, f64)]) -> LseTuple {
        let mut t = LseTuple::new(
            SubstitutionPair {
                control_word: "a".into(),
                treatment_word: "b".into(),
                equivalence: 0.3,
                pos: "NN".into(),
            },
            sid,
        );
        for (name, v) in estimates {
            t.estimates.insert((*name).to_string(), *v);
        }
        t
    }

    #[test]
    fn negative_fraction_counts_control_labels() {
        let ranked = vec![
            tuple_with("s1", &[]),
            tuple_with("s2", &[]),
            tuple_with("s3", &[]),
        ];
        let labels: HashMap<String, u8> =
            [("s1".into(), 0), ("s2".into(), 0), ("s3".into(), 1)].into();
        assert_eq!(negative_fraction_top_k(&ranked, &labels, 2).unwrap(), 1.0);
        // k larger than the list: fraction over the whole list.
        let all = negative_fraction_top_k(&ranked, &labels, 100).unwrap();
        assert!((all - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn agreement_matrix_symmetric_unit_diagonal() {
        let table: Vec<LseTuple> = (0..8)
            .map(|i| {
                let x = i as f64;
                tuple_with(
                    &format!("s{i}"),
                    &[("knn", x), ("vt_rf", x * x), ("csf", -x)],
                )
            })
            .collect();
        let names = ["knn", "vt_rf", "csf"];
        let m = estimator_agreement_matrix(&table, &names).unwrap();
        for (a, row) in m.iter().enumerate() {
            assert_eq!(row[a], 1.0);
            for (b, v) in row.iter().enumerate() {
                assert_eq!(*v, m[b][a]);
            }
        }
        // vt_rf is a monotone transform of knn on non-negative x.
        assert!((m[0][1] - 1.0).abs() < 1e-12);
        assert!((m[0][2] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn agreement_matrix_rejects_partial_coverage() {
        let mut table = vec![tuple_with("s1", &[("knn", 1.0), ("csf", 2.0)])];
        table.push(tuple_with("s2", &[("knn", 2.0)]));
        assert!(matches!(
            estimator_agreement_matrix(&table, &["knn", "csf"]),
            Err(Error::CoverageMismatch { .. })
        ));
    }
}
