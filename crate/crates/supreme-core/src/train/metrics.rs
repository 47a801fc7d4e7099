//! Ranking metrics and metric reports.
//!
//! `auroc` computes the area under the ROC curve as the normalized
//! Mann-Whitney U statistic using midranks, so tied scores contribute 1/2.
//! It is exact for any input ordering and invariant under strictly
//! increasing transforms of the scores.

use std::path::Path;

use super::{Result, TrainError};

/// Area under the ROC curve for binary `labels` (true = positive).
///
/// Computed from midranks: AUC = (R_pos - P(P+1)/2) / (P * N) where R_pos is
/// the sum of the positives' midranks in the score ordering. Requires at
/// least one positive and one negative; otherwise the metric is undefined
/// and `TrainError::DegenerateClass` is returned.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(TrainError::Data(format!(
            "auroc: {} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(TrainError::Data("auroc: scores must be finite".into()));
    }
    let p = labels.iter().filter(|&&l| l).count();
    let n = labels.len() - p;
    if p == 0 || n == 0 {
        return Err(TrainError::DegenerateClass { positives: p, negatives: n });
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite scores"));

    // Walk runs of equal scores; every member of a run gets the midrank
    // (average of the 1-based ranks the run spans), which is exact in f64
    // because it is an integer or half-integer.
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            if labels[idx] {
                rank_sum_pos += midrank;
            }
        }
        i = j;
    }

    let p_f = p as f64;
    Ok((rank_sum_pos - p_f * (p_f + 1.0) / 2.0) / (p_f * n as f64))
}

/// Per-class evaluation outcome. `auc` is None when the class was skipped
/// because the evaluated split had no positives or no negatives for it.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassMetric {
    pub query: String,
    pub auc: Option<f64>,
    pub positives: usize,
}

/// Zero-shot / probe evaluation report: one row per query in vocabulary
/// order, plus the mean AUC over exactly the non-skipped classes.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub per_class: Vec<ClassMetric>,
    pub mean_auc: Option<f64>,
}

impl EvalReport {
    /// Assembles a report, deriving the mean over non-skipped classes.
    pub fn new(per_class: Vec<ClassMetric>) -> Self {
        let scored: Vec<f64> = per_class.iter().filter_map(|c| c.auc).collect();
        let mean_auc = if scored.is_empty() {
            None
        } else {
            Some(scored.iter().sum::<f64>() / scored.len() as f64)
        };
        EvalReport { per_class, mean_auc }
    }

    pub fn skipped(&self) -> usize {
        self.per_class.iter().filter(|c| c.auc.is_none()).count()
    }

    /// Renders the report as CSV text: header `query,auc,positives,skipped`,
    /// one row per class in report order, and a final `mean,<auc>,,` row.
    /// Skipped classes carry an empty auc field and skipped=true.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let fail = "in-memory CSV write cannot fail";
        w.write_record(["query", "auc", "positives", "skipped"]).expect(fail);
        for c in &self.per_class {
            let auc = c.auc.map(|a| a.to_string()).unwrap_or_default();
            w.write_record([
                c.query.as_str(),
                &auc,
                &c.positives.to_string(),
                if c.auc.is_none() { "true" } else { "false" },
            ])
            .expect(fail);
        }
        let mean = self.mean_auc.map(|a| a.to_string()).unwrap_or_default();
        w.write_record(["mean", &mean, "", ""]).expect(fail);
        String::from_utf8(w.into_inner().expect(fail)).expect("CSV output is UTF-8")
    }
}

/// Writes the report to `path` as CSV. Emitting the same report twice
/// produces byte-identical files.
pub fn emit_metrics(report: &EvalReport, path: &Path) -> Result<()> {
    std::fs::write(path, report.to_csv())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    /// O(P*N) pairwise oracle: fraction of (positive, negative) pairs ranked
    /// correctly, ties counting one half.
    fn auroc_pairwise(scores: &[f64], labels: &[bool]) -> f64 {
        let mut wins = 0.0f64;
        let mut pairs = 0.0f64;
        for (i, &li) in labels.iter().enumerate() {
            if !li {
                continue;
            }
            for (j, &lj) in labels.iter().enumerate() {
                if lj {
                    continue;
                }
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
        wins / pairs
    }

    #[test]
    fn hand_cases() {
        assert_eq!(auroc(&[0.9, 0.8, 0.1], &[true, true, false]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.1, 0.8, 0.9], &[true, false, false]).unwrap(), 0.0);
        // One tie across the class boundary: U = 0.5 over one pair.
        assert_eq!(auroc(&[0.5, 0.5], &[true, false]).unwrap(), 0.5);
        // Positives {0.4, 0.2}, negatives {0.4, 0.1}: pairs (0.4,0.4)=0.5,
        // (0.4,0.1)=1, (0.2,0.4)=0, (0.2,0.1)=1 => 2.5/4.
        assert_eq!(
            auroc(&[0.4, 0.2, 0.4, 0.1], &[true, true, false, false]).unwrap(),
            0.625
        );
    }

    #[test]
    fn degenerate_classes_error() {
        match auroc(&[0.1, 0.2], &[true, true]) {
            Err(TrainError::DegenerateClass { positives: 2, negatives: 0 }) => {}
            other => panic!("expected degenerate error, got {other:?}"),
        }
        assert!(auroc(&[0.1, 0.2], &[false, false]).is_err());
        assert!(auroc(&[], &[]).is_err());
        assert!(auroc(&[f64::NAN, 0.0], &[true, false]).is_err());
        assert!(auroc(&[0.1], &[true, false]).is_err());
    }

    #[test]
    fn matches_pairwise_oracle_with_ties() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for case in 0..200 {
            let n = rng.random_range(2..60);
            // Quantized scores force tie runs.
            let scores: Vec<f64> =
                (0..n).map(|_| (rng.random_range(0..12) as f64) / 10.0).collect();
            let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
            labels[0] = true;
            labels[1] = false;
            let fast = auroc(&scores, &labels).unwrap();
            let slow = auroc_pairwise(&scores, &labels);
            assert!(
                (fast - slow).abs() <= 1e-12,
                "case {case}: midrank {fast} vs pairwise {slow}"
            );
        }
    }

    #[test]
    fn invariant_under_monotone_transforms() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
        for _ in 0..50 {
            let n = rng.random_range(2..40);
            let scores: Vec<f64> =
                (0..n).map(|_| (rng.random_range(-20..20) as f64) / 4.0).collect();
            let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
            labels[0] = true;
            labels[n - 1] = false;
            let base = auroc(&scores, &labels).unwrap();
            let affine: Vec<f64> = scores.iter().map(|s| 3.25 * s + 17.0).collect();
            let exped: Vec<f64> = scores.iter().map(|s| s.exp()).collect();
            assert_eq!(base, auroc(&affine, &labels).unwrap());
            assert_eq!(base, auroc(&exped, &labels).unwrap());
        }
    }

    #[test]
    fn negation_complements_when_tie_free() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(13);
        for _ in 0..50 {
            let n = rng.random_range(2..40);
            // Distinct scores: permute a strictly increasing sequence.
            let mut scores: Vec<f64> = (0..n).map(|i| i as f64 + rng.random::<f64>() * 0.25).collect();
            for i in (1..n).rev() {
                scores.swap(i, rng.random_range(0..=i));
            }
            let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
            labels[0] = true;
            labels[n - 1] = false;
            let fwd = auroc(&scores, &labels).unwrap();
            let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
            let rev = auroc(&neg, &labels).unwrap();
            assert!((fwd + rev - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn report_mean_skips_degenerate_classes() {
        let report = EvalReport::new(vec![
            ClassMetric { query: "atrial fibrillation".into(), auc: Some(0.9), positives: 12 },
            ClassMetric { query: "pacemaker rhythm".into(), auc: None, positives: 0 },
            ClassMetric { query: "sinus rhythm".into(), auc: Some(0.7), positives: 30 },
        ]);
        assert_eq!(report.mean_auc, Some(0.8));
        assert_eq!(report.skipped(), 1);

        let empty = EvalReport::new(vec![ClassMetric {
            query: "x".into(),
            auc: None,
            positives: 0,
        }]);
        assert_eq!(empty.mean_auc, None);
    }

    #[test]
    fn csv_layout_is_frozen_and_reemission_is_byte_identical() {
        let report = EvalReport::new(vec![
            ClassMetric { query: "sinus rhythm".into(), auc: Some(0.875), positives: 40 },
            ClassMetric { query: "pacemaker rhythm".into(), auc: None, positives: 0 },
            ClassMetric { query: "st depression".into(), auc: Some(0.625), positives: 9 },
        ]);
        let expected = "query,auc,positives,skipped\n\
                        sinus rhythm,0.875,40,false\n\
                        pacemaker rhythm,,0,true\n\
                        st depression,0.625,9,false\n\
                        mean,0.75,,\n";
        assert_eq!(report.to_csv(), expected);

        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("metrics_a.csv");
        let b = dir.path().join("metrics_b.csv");
        emit_metrics(&report, &a).unwrap();
        emit_metrics(&report, &b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        assert_eq!(std::fs::read_to_string(&a).unwrap(), expected);
    }

    #[test]
    fn csv_quotes_fields_with_delimiters() {
        let report = EvalReport::new(vec![ClassMetric {
            query: "qrs, wide \"notched\"".into(),
            auc: Some(0.5),
            positives: 1,
        }]);
        let csv = report.to_csv();
        assert!(csv.contains("\"qrs, wide \"\"notched\"\"\",0.5,1,false"));
    }
}
