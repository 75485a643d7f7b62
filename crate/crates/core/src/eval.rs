//! Relaxed and consolidated evaluation protocols, detection metrics, and the
//! NN-similarity distribution export.
//!
//! Alignment ranking uses CSLS over cosine similarity; detection thresholds
//! operate on raw euclidean distances (see `detect`). Every ranking here has
//! a brute-force oracle in the acceptance suite.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detect::DanglingVerdict;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::{csls_penalties, csls_scores_row, knn, Metric};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelaxedMetrics {
    pub hits1: f64,
    pub hits10: f64,
    pub mrr: f64,
    pub evaluated: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub true_positive: usize,
    pub false_positive: usize,
    pub true_negative: usize,
    pub false_negative: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsolidatedMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub recall_at_k: f64,
    pub k: usize,
    pub attempted: usize,
    pub correct: usize,
    pub correct_at_k: usize,
    pub truly_matchable: usize,
}

/// Full report of an evaluation run; sections are filled per protocol.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub relaxed: Option<RelaxedMetrics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detection: Option<DetectionMetrics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub consolidated: Option<ConsolidatedMetrics>,
}

/// 1-based CSLS rank of each source's gold target among all target entities.
pub fn relaxed_ranks(
    sources: &Matrix,
    gold: &[usize],
    targets: &Matrix,
    k_csls: usize,
) -> Result<Vec<usize>> {
    assert_eq!(sources.rows(), gold.len(), "one gold target per source");
    if let Some(&g) = gold.iter().find(|&&g| g >= targets.rows()) {
        return Err(Error::Invalid(format!(
            "gold target #{g} missing from target table"
        )));
    }
    if sources.rows() == 0 {
        return Ok(Vec::new());
    }
    let (r_t, r_s) = csls_penalties(sources, targets, k_csls)?;
    let ranks: Vec<usize> = (0..sources.rows())
        .into_par_iter()
        .map(|i| {
            let scores = csls_scores_row(sources.row(i), targets, r_t[i], &r_s);
            rank_of(&scores, gold[i])
        })
        .collect();
    Ok(ranks)
}

/// Rank of `gold` under descending score with index tie-break.
fn rank_of(scores: &[f64], gold: usize) -> usize {
    let gs = scores[gold];
    1 + scores
        .iter()
        .enumerate()
        .filter(|&(j, &s)| s > gs || (s == gs && j < gold))
        .count()
}

/// H@1, H@10 and MRR from 1-based ranks.
pub fn relaxed_from_ranks(ranks: &[usize]) -> Result<RelaxedMetrics> {
    if ranks.is_empty() {
        return Err(Error::EmptyInput("relaxed evaluation set".into()));
    }
    let n = ranks.len() as f64;
    Ok(RelaxedMetrics {
        hits1: ranks.iter().filter(|&&r| r <= 1).count() as f64 / n,
        hits10: ranks.iter().filter(|&&r| r <= 10).count() as f64 / n,
        mrr: ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n,
        evaluated: ranks.len(),
    })
}

/// Relaxed protocol: every test source is matchable; rank the gold
/// counterpart by CSLS over the whole target table.
pub fn relaxed_eval(
    sources: &Matrix,
    gold: &[usize],
    targets: &Matrix,
    k_csls: usize,
) -> Result<RelaxedMetrics> {
    relaxed_from_ranks(&relaxed_ranks(sources, gold, targets, k_csls)?)
}

/// Confusion-matrix metrics for dangling detection; positive class = dangling.
///
/// Degenerate rules: a ratio with a zero denominator is reported as 0.
pub fn detection_eval(
    verdicts: &[DanglingVerdict],
    gold: &[(usize, bool)],
) -> Result<DetectionMetrics> {
    if verdicts.len() != gold.len() {
        return Err(Error::VerdictMismatch);
    }
    let mut by_entity: std::collections::HashMap<usize, bool> =
        gold.iter().copied().collect();
    let (mut tp, mut fp, mut tn, mut fn_) = (0usize, 0usize, 0usize, 0usize);
    for v in verdicts {
        let Some(truth) = by_entity.remove(&v.entity) else {
            return Err(Error::VerdictMismatch);
        };
        match (v.is_dangling, truth) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    if !by_entity.is_empty() {
        return Err(Error::VerdictMismatch);
    }
    let total = tp + fp + tn + fn_;
    if total == 0 {
        return Err(Error::EmptyInput("detection evaluation set".into()));
    }
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    Ok(DetectionMetrics {
        precision,
        recall,
        f1: harmonic(precision, recall),
        accuracy: (tp + tn) as f64 / total as f64,
        true_positive: tp,
        false_positive: fp,
        true_negative: tn,
        false_negative: fn_,
    })
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// One consolidated test case: a source entity, its gold counterpart when
/// truly matchable, and the detector's verdict for it.
#[derive(Debug, Clone, Copy)]
pub struct ConsolidatedCase {
    pub entity: usize,
    /// `None` marks a truly dangling source.
    pub gold_target: Option<usize>,
    pub predicted_dangling: bool,
}

/// Consolidated protocol: sources the detector flags are abstained on; the
/// rest are aligned against the (optionally filtered) target table.
///
/// A prediction is correct iff the source is truly matchable and its gold
/// target ranks first among candidates. Undetected dangling sources and
/// falsely excluded matchable sources count as incorrect. `target_filter`,
/// when given, keeps only targets marked `true` as candidates.
pub fn consolidated_eval(
    cases: &[ConsolidatedCase],
    sources: &Matrix,
    targets: &Matrix,
    k: usize,
    k_csls: usize,
    target_filter: Option<&[bool]>,
) -> Result<ConsolidatedMetrics> {
    if cases.is_empty() {
        return Err(Error::EmptyInput("consolidated evaluation set".into()));
    }
    assert_eq!(cases.len(), sources.rows(), "one source row per case");

    // Candidate target subset (identity mapping when unfiltered).
    let kept: Vec<usize> = match target_filter {
        Some(f) => {
            assert_eq!(f.len(), targets.rows(), "filter length mismatch");
            (0..targets.rows()).filter(|&j| f[j]).collect()
        }
        None => (0..targets.rows()).collect(),
    };
    if kept.is_empty() {
        return Err(Error::EmptyTargets);
    }
    let mut candidates = Matrix::zeros(kept.len(), targets.cols());
    for (i, &j) in kept.iter().enumerate() {
        candidates.row_mut(i).copy_from_slice(targets.row(j));
    }
    let gold_pos = |g: usize| kept.binary_search(&g).ok();

    let attempted_rows: Vec<usize> = (0..cases.len())
        .filter(|&i| !cases[i].predicted_dangling)
        .collect();
    let truly_matchable = cases.iter().filter(|c| c.gold_target.is_some()).count();
    let k_eff = k.min(kept.len());

    let (mut correct, mut correct_at_k) = (0usize, 0usize);
    if !attempted_rows.is_empty() {
        let mut attempted = Matrix::zeros(attempted_rows.len(), sources.cols());
        for (i, &row) in attempted_rows.iter().enumerate() {
            attempted.row_mut(i).copy_from_slice(sources.row(row));
        }
        let (r_t, r_s) = csls_penalties(&attempted, &candidates, k_csls)?;
        let ranks: Vec<Option<usize>> = attempted_rows
            .par_iter()
            .enumerate()
            .map(|(i, &row)| {
                let gold = cases[row].gold_target?;
                let pos = gold_pos(gold)?;
                let scores = csls_scores_row(attempted.row(i), &candidates, r_t[i], &r_s);
                Some(rank_of(&scores, pos))
            })
            .collect();
        for rank in ranks.into_iter().flatten() {
            if rank == 1 {
                correct += 1;
            }
            if rank <= k_eff {
                correct_at_k += 1;
            }
        }
    }

    let precision = ratio(correct, attempted_rows.len());
    let recall = ratio(correct, truly_matchable);
    Ok(ConsolidatedMetrics {
        precision,
        recall,
        f1: harmonic(precision, recall),
        recall_at_k: ratio(correct_at_k, truly_matchable),
        k,
        attempted: attempted_rows.len(),
        correct,
        correct_at_k,
        truly_matchable,
    })
}

/// Per-entity nearest-target cosine similarity with its gold label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityRecord {
    pub entity: usize,
    pub dangling: bool,
    pub nn_cosine: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilaritySummary {
    pub mean_matchable: f64,
    pub mean_dangling: f64,
    /// mean_matchable − mean_dangling.
    pub separation: f64,
}

/// Nearest-neighbor cosine similarity per source entity, for distribution
/// plots of matchable vs dangling test entities.
pub fn similarity_distribution(
    ids: &[usize],
    labels: &[bool],
    sources: &Matrix,
    targets: &Matrix,
) -> Result<Vec<SimilarityRecord>> {
    assert_eq!(ids.len(), labels.len());
    assert_eq!(ids.len(), sources.rows());
    if ids.is_empty() {
        return Ok(Vec::new());
    }
    let hits = knn(sources, targets, 1, Metric::Cosine)?;
    Ok(ids
        .iter()
        .zip(labels)
        .zip(hits)
        .map(|((&entity, &dangling), hit)| SimilarityRecord {
            entity,
            dangling,
            nn_cosine: hit[0].1,
        })
        .collect())
}

pub fn similarity_summary(records: &[SimilarityRecord]) -> SimilaritySummary {
    let mean = |flag: bool| {
        let vals: Vec<f64> = records
            .iter()
            .filter(|r| r.dangling == flag)
            .map(|r| r.nn_cosine)
            .collect();
        if vals.is_empty() {
            0.0
        } else {
            vals.iter().sum::<f64>() / vals.len() as f64
        }
    };
    let mean_matchable = mean(false);
    let mean_dangling = mean(true);
    SimilaritySummary {
        mean_matchable,
        mean_dangling,
        separation: mean_matchable - mean_dangling,
    }
}

/// CSV export: `entity,label,nn_cosine` with labels `matchable`/`dangling`.
pub fn write_similarity_csv<W: Write>(
    records: &[SimilarityRecord],
    name_of: impl Fn(usize) -> String,
    w: W,
) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["entity", "label", "nn_cosine"])?;
    for r in records {
        wtr.write_record([
            name_of(r.entity),
            if r.dangling { "dangling" } else { "matchable" }.to_string(),
            format!("{}", r.nn_cosine),
        ])?;
    }
    wtr.flush().map_err(|e| Error::io("<similarity csv>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn verdict(entity: usize, is_dangling: bool) -> DanglingVerdict {
        DanglingVerdict {
            entity,
            is_dangling,
            confidence: 0.0,
            threshold: 0.0,
        }
    }

    #[test]
    fn relaxed_from_ranks_hand_values() {
        let m = relaxed_from_ranks(&[1, 2, 4]).unwrap();
        assert_relative_eq!(m.mrr, (1.0 + 0.5 + 0.25) / 3.0, epsilon = 1e-12);
        assert_relative_eq!(m.hits1, 1.0 / 3.0, epsilon = 1e-12);
        assert_relative_eq!(m.hits10, 1.0);

        let perfect = relaxed_from_ranks(&[1, 1, 1]).unwrap();
        assert_eq!(
            (perfect.hits1, perfect.hits10, perfect.mrr),
            (1.0, 1.0, 1.0)
        );
        // true invariants
        assert!(m.hits1 <= m.hits10);
        assert!(m.hits1 <= m.mrr && m.mrr <= 1.0);
    }

    #[test]
    fn relaxed_eval_identity_embedding() {
        // Sources equal their gold targets exactly: all rank 1.
        let t = Matrix::from_vec(3, 2, vec![1.0, 0.0, 0.0, 1.0, 0.7, 0.7]);
        let m = relaxed_eval(&t, &[0, 1, 2], &t, 2).unwrap();
        assert_eq!((m.hits1, m.hits10, m.mrr), (1.0, 1.0, 1.0));
    }

    #[test]
    fn relaxed_eval_missing_gold_errors() {
        let t = Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
        assert!(relaxed_eval(&t, &[0, 5], &t, 1).is_err());
    }

    #[test]
    fn detection_metrics_hand_cases() {
        // Perfect verdicts.
        let verdicts = vec![verdict(0, true), verdict(1, false)];
        let gold = vec![(0, true), (1, false)];
        let m = detection_eval(&verdicts, &gold).unwrap();
        assert_eq!((m.precision, m.recall, m.f1, m.accuracy), (1.0, 1.0, 1.0, 1.0));

        // 2 dangling + 2 matchable, one true dangling flagged.
        let verdicts = vec![
            verdict(0, true),
            verdict(1, false),
            verdict(2, false),
            verdict(3, false),
        ];
        let gold = vec![(0, true), (1, true), (2, false), (3, false)];
        let m = detection_eval(&verdicts, &gold).unwrap();
        assert_relative_eq!(m.precision, 1.0);
        assert_relative_eq!(m.recall, 0.5);
        assert_relative_eq!(m.f1, 2.0 / 3.0, epsilon = 1e-12);
        assert_relative_eq!(m.accuracy, 0.75);
        assert_eq!(
            m.accuracy,
            (m.true_positive + m.true_negative) as f64 / 4.0
        );

        // Nothing flagged while dangling present: R = 0, F1 = 0, P = 0.
        let verdicts = vec![verdict(0, false), verdict(1, false)];
        let gold = vec![(0, true), (1, false)];
        let m = detection_eval(&verdicts, &gold).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn detection_mismatched_sets_error() {
        let verdicts = vec![verdict(0, true)];
        assert!(detection_eval(&verdicts, &[(1, true)]).is_err());
        assert!(detection_eval(&verdicts, &[(0, true), (1, false)]).is_err());
    }

    /// Spec-style hand trace: m1 correct, m2 wrong, m3 and d1 excluded, d2
    /// attempted: P = R = F1 = 1/3.
    #[test]
    fn consolidated_hand_trace() {
        // Targets: t0, t1, t2 are golds of m1, m2, m3; geometry makes every
        // attempted source prefer t0 regardless of CSLS shifts.
        let targets = Matrix::from_vec(3, 2, vec![1.0, 0.0, 0.0, 1.0, 0.6, 0.8]);
        let sources = Matrix::from_vec(
            5,
            2,
            vec![
                1.0, 0.0, // m1 -> gold t0, ranks first
                0.995, 0.1, // m2 -> gold t1, but t0 wins
                0.5, 0.5, // m3 (excluded)
                0.9, 0.1, // d1 (excluded)
                0.95, 0.05, // d2 attempted, truly dangling
            ],
        );
        let cases = vec![
            ConsolidatedCase { entity: 0, gold_target: Some(0), predicted_dangling: false },
            ConsolidatedCase { entity: 1, gold_target: Some(1), predicted_dangling: false },
            ConsolidatedCase { entity: 2, gold_target: Some(2), predicted_dangling: true },
            ConsolidatedCase { entity: 3, gold_target: None, predicted_dangling: true },
            ConsolidatedCase { entity: 4, gold_target: None, predicted_dangling: false },
        ];
        let m = consolidated_eval(&cases, &sources, &targets, 10, 1, None).unwrap();
        assert_eq!(m.attempted, 3);
        assert_eq!(m.correct, 1);
        assert_eq!(m.truly_matchable, 3);
        assert_relative_eq!(m.precision, 1.0 / 3.0, epsilon = 1e-12);
        assert_relative_eq!(m.recall, 1.0 / 3.0, epsilon = 1e-12);
        assert_relative_eq!(m.f1, 1.0 / 3.0, epsilon = 1e-12);
        // Consolidated precision can never exceed H@1 on the attempted
        // matchable subset (same ranking, larger denominator).
        assert!(m.precision <= ratio(m.correct, 2));
    }

    #[test]
    fn consolidated_degenerate_rules() {
        let targets = Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
        let sources = Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
        // Perfect detector + perfect alignment.
        let cases = vec![
            ConsolidatedCase { entity: 0, gold_target: Some(0), predicted_dangling: false },
            ConsolidatedCase { entity: 1, gold_target: Some(1), predicted_dangling: false },
        ];
        let m = consolidated_eval(&cases, &sources, &targets, 10, 1, None).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (1.0, 1.0, 1.0));
        assert_eq!(m.recall_at_k, 1.0);

        // Detector excludes everything: P -> 0, R = 0.
        let cases: Vec<ConsolidatedCase> = cases
            .iter()
            .map(|c| ConsolidatedCase {
                predicted_dangling: true,
                ..*c
            })
            .collect();
        let m = consolidated_eval(&cases, &sources, &targets, 10, 1, None).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
        assert_eq!(m.attempted, 0);

        assert!(consolidated_eval(&[], &Matrix::zeros(0, 2), &targets, 10, 1, None).is_err());
    }

    #[test]
    fn consolidated_target_filter() {
        let targets = Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
        let sources = Matrix::from_vec(1, 2, vec![0.0, 1.0]);
        let cases = vec![ConsolidatedCase {
            entity: 0,
            gold_target: Some(1),
            predicted_dangling: false,
        }];
        // Gold kept: correct.
        let keep = vec![true, true];
        let m = consolidated_eval(&cases, &sources, &targets, 10, 1, Some(&keep)).unwrap();
        assert_eq!(m.correct, 1);
        // Gold filtered out: automatically incorrect.
        let drop_gold = vec![true, false];
        let m = consolidated_eval(&cases, &sources, &targets, 10, 1, Some(&drop_gold)).unwrap();
        assert_eq!(m.correct, 0);
    }

    #[test]
    fn similarity_records_and_summary() {
        let targets = Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
        let sources = Matrix::from_vec(2, 2, vec![2.0, 0.0, 0.4, 0.4]);
        let recs =
            similarity_distribution(&[7, 8], &[false, true], &sources, &targets).unwrap();
        assert_eq!(recs.len(), 2);
        assert_relative_eq!(recs[0].nn_cosine, 1.0, epsilon = 1e-12);
        assert!(!recs[0].dangling && recs[1].dangling);
        let summary = similarity_summary(&recs);
        assert_relative_eq!(
            summary.separation,
            recs[0].nn_cosine - recs[1].nn_cosine,
            epsilon = 1e-12
        );
    }

    #[test]
    fn similarity_csv_labels_match_gold() {
        let recs = vec![
            SimilarityRecord { entity: 0, dangling: false, nn_cosine: 0.9 },
            SimilarityRecord { entity: 1, dangling: true, nn_cosine: 0.2 },
        ];
        let mut buf = Vec::new();
        write_similarity_csv(&recs, |e| format!("e{e}"), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("e0,matchable,0.9"));
        assert!(text.contains("e1,dangling,0.2"));
    }
}
