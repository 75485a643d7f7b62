//! Exact nearest-neighbor search over embedding tables, CSLS-adjusted
//! ranking, and the periodically refreshed NN cache.
//!
//! Search is brute force and embarrassingly parallel over queries; results
//! are collected in query order, so output is identical for any worker count.
//! Ties always break toward the smaller target index.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matrix::{dot, l2_norm, squared_distance, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Euclidean,
    Cosine,
}

/// Exact top-k per query row: euclidean ranks ascending by distance, cosine
/// descending by similarity. Returned scores are the metric's native values.
pub fn knn(
    queries: &Matrix,
    targets: &Matrix,
    k: usize,
    metric: Metric,
) -> Result<Vec<Vec<(usize, f64)>>> {
    if targets.rows() == 0 {
        return Err(Error::EmptyTargets);
    }
    if k < 1 || k > targets.rows() {
        return Err(Error::BadK {
            k,
            max: targets.rows(),
        });
    }
    assert_eq!(queries.cols(), targets.cols(), "knn dimension mismatch");
    if metric == Metric::Cosine {
        check_nonzero(targets)?;
        check_nonzero(queries)?;
    }

    let rows: Vec<usize> = (0..queries.rows()).collect();
    rows.par_iter()
        .map(|&qi| Ok(top_k(queries.row(qi), targets, k, metric)))
        .collect()
}

/// Nearest target of a single query under the metric.
pub fn nearest(query: &[f64], targets: &Matrix, metric: Metric) -> Result<(usize, f64)> {
    if targets.rows() == 0 {
        return Err(Error::EmptyTargets);
    }
    if metric == Metric::Cosine && l2_norm(query) == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok(top_k(query, targets, 1, metric)[0])
}

/// Infallible euclidean 1-NN for callers that already verified the table.
pub(crate) fn top1_euclidean(query: &[f64], targets: &Matrix) -> (usize, f64) {
    top_k(query, targets, 1, Metric::Euclidean)[0]
}

fn check_nonzero(m: &Matrix) -> Result<()> {
    if m.iter_rows().any(|r| l2_norm(r) == 0.0) {
        return Err(Error::ZeroVector);
    }
    Ok(())
}

/// Sort key: lower is better for both metrics (cosine negated), index breaks ties.
fn rank_key(score: f64, idx: usize, metric: Metric) -> (f64, usize) {
    match metric {
        Metric::Euclidean => (score, idx),
        Metric::Cosine => (-score, idx),
    }
}

fn top_k(query: &[f64], targets: &Matrix, k: usize, metric: Metric) -> Vec<(usize, f64)> {
    let mut scored: Vec<(usize, f64)> = targets
        .iter_rows()
        .enumerate()
        .map(|(j, row)| {
            let s = match metric {
                Metric::Euclidean => squared_distance(query, row),
                Metric::Cosine => cosine_unchecked(query, row),
            };
            (j, s)
        })
        .collect();
    let cmp = |a: &(usize, f64), b: &(usize, f64)| {
        rank_key(a.1, a.0, metric)
            .partial_cmp(&rank_key(b.1, b.0, metric))
            .expect("non-finite score in knn")
    };
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, cmp);
        scored.truncate(k);
    }
    scored.sort_unstable_by(cmp);
    if metric == Metric::Euclidean {
        for s in &mut scored {
            s.1 = s.1.sqrt();
        }
    }
    scored
}

/// Cosine similarity; errors on a zero vector.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    let (nu, nv) = (l2_norm(u), l2_norm(v));
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok(dot(u, v) / (nu * nv))
}

fn cosine_unchecked(u: &[f64], v: &[f64]) -> f64 {
    dot(u, v) / (l2_norm(u) * l2_norm(v))
}

/// Full pairwise cosine matrix (sources × targets).
pub fn cosine_matrix(sources: &Matrix, targets: &Matrix) -> Result<Matrix> {
    check_nonzero(sources)?;
    check_nonzero(targets)?;
    let mut out = Matrix::zeros(sources.rows(), targets.rows());
    let cols = targets.rows();
    out.data_mut()
        .par_chunks_mut(cols)
        .enumerate()
        .for_each(|(i, row)| {
            let src = sources.row(i);
            for (j, t) in targets.iter_rows().enumerate() {
                row[j] = cosine_unchecked(src, t);
            }
        });
    Ok(out)
}

/// CSLS adjustment of a precomputed cosine matrix:
/// `csls[i][j] = 2·cos[i][j] − r_t[i] − r_s[j]`, where `r_t[i]` is the mean of
/// row i's `k` largest entries and `r_s[j]` the mean of column j's `k` largest.
pub fn csls_from_cosine(cos: &Matrix, k: usize) -> Result<Matrix> {
    if k < 1 || k > cos.cols() || k > cos.rows() {
        return Err(Error::BadK {
            k,
            max: cos.cols().min(cos.rows()),
        });
    }
    let r_t: Vec<f64> = cos.iter_rows().map(|row| mean_top_k(row, k)).collect();
    let mut cols: Vec<Vec<f64>> = vec![Vec::with_capacity(cos.rows()); cos.cols()];
    for row in cos.iter_rows() {
        for (j, &v) in row.iter().enumerate() {
            cols[j].push(v);
        }
    }
    let r_s: Vec<f64> = cols.iter().map(|c| mean_top_k(c, k)).collect();

    let mut out = Matrix::zeros(cos.rows(), cos.cols());
    for i in 0..cos.rows() {
        let row = out.row_mut(i);
        for (j, v) in row.iter_mut().enumerate() {
            *v = 2.0 * cos.row(i)[j] - r_t[i] - r_s[j];
        }
    }
    Ok(out)
}

fn mean_top_k(values: &[f64], k: usize) -> f64 {
    let mut v = values.to_vec();
    v.sort_unstable_by(|a, b| b.partial_cmp(a).expect("non-finite cosine"));
    v[..k].iter().sum::<f64>() / k as f64
}

/// Per-source hub penalties for CSLS without materializing the full matrix:
/// `r_t[i]` = mean cosine of source i to its `k` nearest targets, and
/// `r_s[j]` = mean cosine of target j to its `k` nearest sources.
pub fn csls_penalties(
    sources: &Matrix,
    targets: &Matrix,
    k: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let k_t = k.min(targets.rows());
    let k_s = k.min(sources.rows());
    if k < 1 {
        return Err(Error::BadK { k, max: 1 });
    }
    let r_t = knn(sources, targets, k_t, Metric::Cosine)?
        .into_iter()
        .map(|hits| hits.iter().map(|h| h.1).sum::<f64>() / k_t as f64)
        .collect();
    let r_s = knn(targets, sources, k_s, Metric::Cosine)?
        .into_iter()
        .map(|hits| hits.iter().map(|h| h.1).sum::<f64>() / k_s as f64)
        .collect();
    Ok((r_t, r_s))
}

/// CSLS-ranked top-k targets per source, computed blockwise (memory stays
/// O(|sources| + |targets|), three passes over the score space).
pub fn csls_rank(
    sources: &Matrix,
    targets: &Matrix,
    k_csls: usize,
    top_k: usize,
) -> Result<Vec<Vec<(usize, f64)>>> {
    if targets.rows() == 0 {
        return Err(Error::EmptyTargets);
    }
    if top_k < 1 || top_k > targets.rows() {
        return Err(Error::BadK {
            k: top_k,
            max: targets.rows(),
        });
    }
    let (r_t, r_s) = csls_penalties(sources, targets, k_csls)?;
    let rows: Vec<usize> = (0..sources.rows()).collect();
    rows.par_iter()
        .map(|&i| {
            let mut scored: Vec<(usize, f64)> = targets
                .iter_rows()
                .enumerate()
                .map(|(j, t)| (j, 2.0 * cosine_unchecked(sources.row(i), t) - r_t[i] - r_s[j]))
                .collect();
            let cmp = |a: &(usize, f64), b: &(usize, f64)| {
                (-a.1, a.0)
                    .partial_cmp(&(-b.1, b.0))
                    .expect("non-finite CSLS score")
            };
            if top_k < scored.len() {
                scored.select_nth_unstable_by(top_k - 1, cmp);
                scored.truncate(top_k);
            }
            scored.sort_unstable_by(cmp);
            Ok(scored)
        })
        .collect()
}

/// CSLS scores of one source row against every target, given precomputed
/// penalties. Used by the evaluators to rank a gold target among all candidates.
pub fn csls_scores_row(
    source: &[f64],
    targets: &Matrix,
    r_t_i: f64,
    r_s: &[f64],
) -> Vec<f64> {
    targets
        .iter_rows()
        .enumerate()
        .map(|(j, t)| 2.0 * cosine_unchecked(source, t) - r_t_i - r_s[j])
        .collect()
}

/// Cache of each source entity's transformed nearest neighbor.
///
/// Refreshed when `epoch % period == 0` or when empty; between refreshes the
/// stamped snapshot is served unchanged.
#[derive(Debug, Clone)]
pub struct NnCache {
    period: u64,
    stamp: u64,
    entries: BTreeMap<usize, (usize, f64)>,
}

impl NnCache {
    pub fn new(period: u64) -> Self {
        assert!(period >= 1, "cache period must be >= 1");
        NnCache {
            period,
            stamp: 0,
            entries: BTreeMap::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn stamp(&self) -> u64 {
        self.stamp
    }

    /// Nearest `(target, euclidean distance)` recorded for `entity`.
    pub fn get(&self, entity: usize) -> Option<(usize, f64)> {
        self.entries.get(&entity).copied()
    }

    #[cfg(test)]
    pub(crate) fn set_entries_for_tests(
        &mut self,
        entries: impl IntoIterator<Item = (usize, (usize, f64))>,
    ) {
        self.entries = entries.into_iter().collect();
    }

    /// Recomputes all entries from the given transformed queries if due;
    /// returns whether a refresh happened.
    pub fn refresh(
        &mut self,
        epoch: u64,
        queries: &[(usize, Vec<f64>)],
        targets: &Matrix,
    ) -> Result<bool> {
        if !self.entries.is_empty() && epoch % self.period != 0 {
            return Ok(false);
        }
        if targets.rows() == 0 {
            return Err(Error::EmptyTargets);
        }
        let computed: Vec<(usize, (usize, f64))> = queries
            .par_iter()
            .map(|(e, q)| {
                let hit = top_k(q, targets, 1, Metric::Euclidean)[0];
                (*e, hit)
            })
            .collect();
        self.entries = computed.into_iter().collect();
        self.stamp = epoch;
        Ok(true)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn m(rows: usize, cols: usize, data: &[f64]) -> Matrix {
        Matrix::from_vec(rows, cols, data.to_vec())
    }

    #[test]
    fn knn_exact_match_ranks_first() {
        let targets = m(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.5, 0.5]);
        let queries = m(1, 2, &[0.0, 1.0]);
        let hits = knn(&queries, &targets, 2, Metric::Euclidean).unwrap();
        assert_eq!(hits[0][0].0, 1);
        assert_relative_eq!(hits[0][0].1, 0.0);
    }

    #[test]
    fn knn_hand_distances() {
        let targets = m(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let queries = m(1, 2, &[0.9, 0.1]);
        let hits = knn(&queries, &targets, 1, Metric::Euclidean).unwrap();
        assert_eq!(hits[0][0].0, 0);
    }

    #[test]
    fn knn_ties_break_to_lower_index() {
        let targets = m(3, 2, &[0.5, 0.5, 1.0, 0.0, 0.5, 0.5]);
        let queries = m(1, 2, &[0.5, 0.5]);
        let hits = knn(&queries, &targets, 3, Metric::Euclidean).unwrap();
        assert_eq!(hits[0][0].0, 0);
        assert_eq!(hits[0][1].0, 2);
    }

    #[test]
    fn knn_rejects_bad_k_and_empty() {
        let targets = m(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let queries = m(1, 2, &[1.0, 1.0]);
        assert!(knn(&queries, &targets, 0, Metric::Euclidean).is_err());
        assert!(knn(&queries, &targets, 3, Metric::Euclidean).is_err());
        let empty = Matrix::zeros(0, 2);
        assert!(knn(&queries, &empty, 1, Metric::Euclidean).is_err());
    }

    #[test]
    fn cosine_zero_vector_errors() {
        assert!(cosine(&[0.0, 0.0], &[1.0, 0.0]).is_err());
        assert_relative_eq!(cosine(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
    }

    #[test]
    fn csls_uniform_cosines_cancel() {
        let cos = m(2, 2, &[0.4, 0.4, 0.4, 0.4]);
        let adj = csls_from_cosine(&cos, 1).unwrap();
        for &v in adj.data() {
            assert_relative_eq!(v, 0.0);
        }
    }

    #[test]
    fn csls_hand_example() {
        let cos = m(2, 2, &[0.9, 0.1, 0.2, 0.8]);
        let adj = csls_from_cosine(&cos, 1).unwrap();
        assert_relative_eq!(adj.row(0)[0], 0.0, epsilon = 1e-12);
        assert_relative_eq!(adj.row(0)[1], -1.5, epsilon = 1e-12);
    }

    #[test]
    fn cache_refresh_schedule() {
        let targets = m(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let queries = vec![(7usize, vec![0.9, 0.0])];
        let mut cache = NnCache::new(10);
        assert!(cache.refresh(3, &queries, &targets).unwrap()); // empty: refresh
        assert_eq!(cache.stamp(), 3);
        assert!(!cache.refresh(11, &queries, &targets).unwrap());
        assert_eq!(cache.stamp(), 3);
        assert!(cache.refresh(20, &queries, &targets).unwrap());
        assert_eq!(cache.stamp(), 20);
        let (nn, d) = cache.get(7).unwrap();
        assert_eq!(nn, 0);
        assert_relative_eq!(d, 0.1, epsilon = 1e-12);
    }

    proptest! {
        // Cached entries always equal a fresh k=1 search.
        #[test]
        fn cache_matches_knn(
            qdata in proptest::collection::vec(-1.0f64..1.0, 6),
            tdata in proptest::collection::vec(-1.0f64..1.0, 8),
        ) {
            let queries: Vec<(usize, Vec<f64>)> = qdata
                .chunks(2)
                .enumerate()
                .map(|(i, c)| (i, c.to_vec()))
                .collect();
            let targets = Matrix::from_vec(4, 2, tdata);
            let mut cache = NnCache::new(10);
            cache.refresh(0, &queries, &targets).unwrap();
            for (e, q) in &queries {
                let fresh = nearest(q, &targets, Metric::Euclidean).unwrap();
                prop_assert_eq!(cache.get(*e).unwrap(), fresh);
            }
        }

        // With k_csls = |targets| and uniform r_s (columns built to share one
        // mean), per-source CSLS ordering equals the cosine ordering.
        #[test]
        fn csls_degenerate_matches_cosine_order(
            row0 in proptest::collection::vec(0.0f64..1.0, 2..8),
        ) {
            let n = row0.len();
            let row1: Vec<f64> = row0.iter().map(|v| 1.0 - v).collect();
            let mut data = row0;
            data.extend(row1);
            let cos = Matrix::from_vec(2, n, data);
            // k = 2 covers full columns, so the shared column mean makes r_s uniform.
            let adj = csls_from_cosine(&cos, 2).unwrap();
            for i in 0..2 {
                let order = |row: &[f64]| {
                    let mut idx: Vec<usize> = (0..row.len()).collect();
                    idx.sort_by(|&a, &b| {
                        (-row[a], a).partial_cmp(&(-row[b], b)).unwrap()
                    });
                    idx
                };
                prop_assert_eq!(order(cos.row(i)), order(adj.row(i)));
            }
        }
    }
}
