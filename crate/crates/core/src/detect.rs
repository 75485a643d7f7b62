//! Dangling-entity detection: the three objectives (weighted cross-entropy
//! NN classification, marginal ranking, background ranking), their gradients,
//! and the per-technique inference rules.
//!
//! The cached transformed NN `x_nn` and the per-entity mean distance `λ_x`
//! are stop-gradients: both are re-estimated from the cache or the sampled
//! batch, never differentiated through.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embed::{xavier_init, EmbeddingSpace, LossOutput, Param, ParamTable};
use crate::error::{Error, Result};
use crate::matrix::{add_outer, add_scaled, dot, l2_norm, scale, sub, Matrix};
use crate::nn::{top1_euclidean, NnCache};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectorKind {
    Nnc,
    Mr,
    Br,
}

impl std::str::FromStr for DetectorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nnc" => Ok(DetectorKind::Nnc),
            "mr" => Ok(DetectorKind::Mr),
            "br" => Ok(DetectorKind::Br),
            other => Err(Error::InvalidConfig(format!("unknown detector {other:?}"))),
        }
    }
}

/// Two-layer feed-forward classifier over the difference vector `M·x − x_nn`.
/// Hidden activation is tanh; the output unit is a sigmoid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NncParams {
    /// hidden × dim
    pub w1: Matrix,
    pub b1: Vec<f64>,
    /// hidden
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl NncParams {
    pub fn init(dim: usize, hidden: usize, seed: u64) -> Result<Self> {
        if hidden < 1 {
            return Err(Error::InvalidConfig("nnc hidden width must be >= 1".into()));
        }
        Ok(NncParams {
            w1: xavier_init(hidden, dim, crate::embed::subseed(seed, "nnc_w1"))?,
            w2: xavier_init(1, hidden, crate::embed::subseed(seed, "nnc_w2"))?
                .data()
                .to_vec(),
            b1: vec![0.0; hidden],
            b2: 0.0,
        })
    }

    pub fn dim(&self) -> usize {
        self.w1.cols()
    }

    pub fn hidden(&self) -> usize {
        self.w1.rows()
    }
}

impl ParamTable for NncParams {
    fn param_mut(&mut self, param: Param) -> Option<&mut [f64]> {
        match param {
            Param::NncW1 => Some(self.w1.data_mut()),
            Param::NncB1 => Some(&mut self.b1),
            Param::NncW2 => Some(&mut self.w2),
            Param::NncB2 => Some(std::slice::from_mut(&mut self.b2)),
            _ => None,
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Transformed representation `M·x`, or `x` itself when no transform applies
/// (the aggregation aligner embeds both KGs in one space).
pub fn transformed(x: &[f64], m: Option<&Matrix>) -> Vec<f64> {
    match m {
        Some(m) => m.matvec(x),
        None => x.to_vec(),
    }
}

/// Dangling confidence `p(y=1|x) = sigmoid(FFN(M·x − x_nn))`.
pub fn nnc_forward(x: &[f64], x_nn: &[f64], m: Option<&Matrix>, params: &NncParams) -> f64 {
    let feature = sub(&transformed(x, m), x_nn);
    assert_eq!(feature.len(), params.dim(), "nnc_forward dimension mismatch");
    nnc_forward_feature(&feature, params).p
}

struct NncTrace {
    p: f64,
    hidden: Vec<f64>,
}

fn nnc_forward_feature(feature: &[f64], params: &NncParams) -> NncTrace {
    let mut pre = params.w1.matvec(feature);
    add_scaled(&mut pre, &params.b1, 1.0);
    let hidden: Vec<f64> = pre.iter().map(|v| v.tanh()).collect();
    let logit = dot(&params.w2, &hidden) + params.b2;
    NncTrace {
        p: sigmoid(logit),
        hidden,
    }
}

/// Class weights `w_c = N / (2·N_c)` from training label counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelWeights {
    pub matchable: f64,
    pub dangling: f64,
}

pub fn label_weights(n_matchable: usize, n_dangling: usize) -> Result<LabelWeights> {
    if n_matchable == 0 {
        return Err(Error::MissingClass("matchable"));
    }
    if n_dangling == 0 {
        return Err(Error::MissingClass("dangling"));
    }
    let n = (n_matchable + n_dangling) as f64;
    Ok(LabelWeights {
        matchable: n / (2.0 * n_matchable as f64),
        dangling: n / (2.0 * n_dangling as f64),
    })
}

/// A labeled training entity: `dangling = true` is the positive class.
#[derive(Debug, Clone, Copy)]
pub struct LabeledEntity {
    pub entity: usize,
    pub dangling: bool,
}

/// Weighted cross-entropy loss of the classifier over labeled entities.
///
/// Embeddings and the transform are frozen under this objective; gradients
/// cover the FFN parameters only.
pub fn nnc_loss(
    source_table: &Matrix,
    m: Option<&Matrix>,
    cache: &NnCache,
    target_table: &Matrix,
    samples: &[LabeledEntity],
    params: &NncParams,
    weights: &LabelWeights,
) -> Result<LossOutput> {
    let features = samples
        .iter()
        .map(|s| {
            let (nn, _) = cache
                .get(s.entity)
                .ok_or_else(|| Error::Invalid(format!("entity #{} not in NN cache", s.entity)))?;
            Ok((
                sub(
                    &transformed(source_table.row(s.entity), m),
                    target_table.row(nn),
                ),
                s.dangling,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    nnc_loss_features(&features, params, weights)
}

/// Core NNC objective over precomputed difference-vector features; the
/// aggregation aligner builds its features from encoder outputs.
pub fn nnc_loss_features(
    features: &[(Vec<f64>, bool)],
    params: &NncParams,
    weights: &LabelWeights,
) -> Result<LossOutput> {
    if features.is_empty() {
        return Err(Error::EmptyBatch("nnc_loss"));
    }
    let mut out = LossOutput::new();
    let hidden = params.hidden();
    let dim = params.dim();
    for (feature, dangling) in features {
        let trace = nnc_forward_feature(feature, params);
        let (y, w) = if *dangling {
            (1.0, weights.dangling)
        } else {
            (0.0, weights.matchable)
        };
        // Clamp avoids -inf on a saturated sigmoid; gradient uses exact p − y.
        let p = trace.p.clamp(1e-12, 1.0 - 1e-12);
        out.loss += -w * (y * p.ln() + (1.0 - y) * (1.0 - p).ln());

        let dlogit = w * (trace.p - y);
        add_scaled(out.grads.entry_mut(Param::NncW2, hidden), &trace.hidden, dlogit);
        out.grads.entry_mut(Param::NncB2, 1)[0] += dlogit;
        let dpre: Vec<f64> = trace
            .hidden
            .iter()
            .map(|h| dlogit * (1.0 - h * h))
            .collect();
        let dpre_w2: Vec<f64> = dpre.iter().zip(&params.w2).map(|(d, w2)| d * w2).collect();
        add_outer(
            out.grads.entry_mut(Param::NncW1, hidden * dim),
            &dpre_w2,
            feature,
        );
        add_scaled(out.grads.entry_mut(Param::NncB1, hidden), &dpre_w2, 1.0);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MrConfig {
    /// Distance margin λ; also the inference threshold.
    pub lambda: f64,
}

impl MrConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda <= 0.0 {
            return Err(Error::InvalidConfig("mr lambda must be > 0".into()));
        }
        Ok(())
    }
}

/// Single marginal-ranking term `max(0, λ − ‖diff‖)` with `d(loss)/d(diff)`.
pub fn mr_term(diff: &[f64], lambda: f64) -> (f64, Vec<f64>) {
    let dist = l2_norm(diff);
    if dist >= lambda {
        return (0.0, vec![0.0; diff.len()]);
    }
    let grad = if dist == 0.0 {
        vec![0.0; diff.len()]
    } else {
        scale(diff, -1.0 / dist)
    };
    (lambda - dist, grad)
}

/// Marginal-ranking loss over a dangling batch for the MTransE
/// parameterization: pushes each entity's cached transformed NN beyond λ.
/// Gradients cover the entity rows and M; `x_nn` is a constant.
pub fn mr_loss(
    space: &EmbeddingSpace,
    cache: &NnCache,
    target_table: &Matrix,
    batch: &[usize],
    cfg: &MrConfig,
) -> Result<LossOutput> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch("mr_loss"));
    }
    cfg.validate()?;
    let m = &space.transform;
    let dim = space.dim();
    let mut out = LossOutput::new();
    for &e in batch {
        let (nn, _) = cache
            .get(e)
            .ok_or_else(|| Error::Invalid(format!("entity #{e} not in NN cache")))?;
        let x = space.ent1.row(e);
        let diff = sub(&m.matvec(x), target_table.row(nn));
        let (loss, ddiff) = mr_term(&diff, cfg.lambda);
        if loss == 0.0 {
            continue;
        }
        out.loss += loss;
        out.grads.add(Param::Ent1(e), &m.tr_matvec(&ddiff));
        let m_grad = out.grads.entry_mut(Param::Transform, dim * dim);
        for (i, gi) in ddiff.iter().enumerate() {
            add_scaled(&mut m_grad[i * dim..(i + 1) * dim], x, *gi);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BrConfig {
    /// Random target samples per entity per epoch.
    pub samples: usize,
    /// Weight α of the embedding-norm penalty.
    pub alpha: f64,
}

impl Default for BrConfig {
    fn default() -> Self {
        BrConfig {
            samples: 20,
            alpha: 0.01,
        }
    }
}

impl BrConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(Error::InvalidConfig("br samples must be >= 1".into()));
        }
        if self.alpha < 0.0 {
            return Err(Error::InvalidConfig("br alpha must be >= 0".into()));
        }
        Ok(())
    }
}

/// Background-ranking terms for one entity given its transformed difference
/// vectors against `v` sampled targets:
/// `Σ_j |λ_x − d_j| + α‖x‖` with `λ_x = mean(d_j)` held constant.
pub struct BrTerm {
    pub loss: f64,
    pub lambda_x: f64,
    /// d(loss)/d(diff_j) for each sample.
    pub ddiffs: Vec<Vec<f64>>,
    /// d(loss)/dx of the α‖x‖ term alone.
    pub dx_norm: Vec<f64>,
}

pub fn br_terms(x: &[f64], diffs: &[Vec<f64>], alpha: f64) -> BrTerm {
    br_terms_fixed_lambda(x, diffs, alpha, None)
}

/// Same as [`br_terms`] with an externally fixed `λ_x`; the finite-difference
/// suites use this to check the stop-gradient objective that is actually
/// optimized.
pub fn br_terms_fixed_lambda(
    x: &[f64],
    diffs: &[Vec<f64>],
    alpha: f64,
    lambda_x: Option<f64>,
) -> BrTerm {
    let dists: Vec<f64> = diffs.iter().map(|d| l2_norm(d)).collect();
    let lambda_x = lambda_x.unwrap_or_else(|| dists.iter().sum::<f64>() / dists.len() as f64);
    let mut loss = 0.0;
    let mut ddiffs = Vec::with_capacity(diffs.len());
    for (d, &dist) in diffs.iter().zip(&dists) {
        loss += (lambda_x - dist).abs();
        let s = if dist > lambda_x {
            1.0
        } else if dist < lambda_x {
            -1.0
        } else {
            0.0
        };
        ddiffs.push(if dist == 0.0 {
            vec![0.0; d.len()]
        } else {
            scale(d, s / dist)
        });
    }
    let xn = l2_norm(x);
    loss += alpha * xn;
    let dx_norm = if xn == 0.0 {
        vec![0.0; x.len()]
    } else {
        scale(x, alpha / xn)
    };
    BrTerm {
        loss,
        lambda_x,
        ddiffs,
        dx_norm,
    }
}

/// Background-ranking loss for the MTransE parameterization. Returns the
/// per-entity mean distances `λ_x` alongside loss and gradients; gradients
/// cover the entity rows and M, sampled targets are constants.
pub fn br_loss(
    space: &EmbeddingSpace,
    target_table: &Matrix,
    batch: &[(usize, Vec<usize>)],
    cfg: &BrConfig,
) -> Result<(LossOutput, Vec<(usize, f64)>)> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch("br_loss"));
    }
    cfg.validate()?;
    let m = &space.transform;
    let dim = space.dim();
    let mut out = LossOutput::new();
    let mut lambdas = Vec::with_capacity(batch.len());
    for (e, targets) in batch {
        if targets.is_empty() {
            return Err(Error::EmptyBatch("br_loss targets"));
        }
        let x = space.ent1.row(*e);
        let mx = m.matvec(x);
        let diffs: Vec<Vec<f64>> = targets
            .iter()
            .map(|&t| sub(&mx, target_table.row(t)))
            .collect();
        let term = br_terms(x, &diffs, cfg.alpha);
        out.loss += term.loss;
        lambdas.push((*e, term.lambda_x));

        let mut dmx = vec![0.0; dim];
        for dd in &term.ddiffs {
            add_scaled(&mut dmx, dd, 1.0);
        }
        let mut dx = m.tr_matvec(&dmx);
        add_scaled(&mut dx, &term.dx_norm, 1.0);
        out.grads.add(Param::Ent1(*e), &dx);
        let m_grad = out.grads.entry_mut(Param::Transform, dim * dim);
        for (i, gi) in dmx.iter().enumerate() {
            add_scaled(&mut m_grad[i * dim..(i + 1) * dim], x, *gi);
        }
    }
    Ok((out, lambdas))
}

/// Inference rule of a trained detector.
pub enum DetectorInference<'a> {
    /// Classifier verdict: dangling iff `p > 0.5`.
    Nnc(&'a NncParams),
    /// Threshold on the NN distance: dangling iff `distance > lambda`.
    Mr { lambda: f64 },
    /// Threshold = mean NN distance over the evaluated set itself, or a
    /// training-set mean when supplied.
    Br { training_mean: Option<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DanglingVerdict {
    pub entity: usize,
    pub is_dangling: bool,
    /// NNC probability, or the NN euclidean distance for MR/BR.
    pub confidence: f64,
    pub threshold: f64,
}

/// Runs detection for a set of source entities against the target table.
///
/// Representations are searched fresh (exact NN), so verdicts depend only on
/// the model state and the entity set.
pub fn detect(
    entities: &[usize],
    source_table: &Matrix,
    m: Option<&Matrix>,
    target_table: &Matrix,
    inference: &DetectorInference,
) -> Result<Vec<DanglingVerdict>> {
    if target_table.rows() == 0 {
        return Err(Error::EmptyTargets);
    }
    let reprs: Vec<Vec<f64>> = entities
        .par_iter()
        .map(|&e| transformed(source_table.row(e), m))
        .collect();
    let hits: Vec<(usize, f64)> = reprs
        .par_iter()
        .map(|q| top1_euclidean(q, target_table))
        .collect();

    let verdicts = match inference {
        DetectorInference::Nnc(params) => entities
            .iter()
            .zip(&reprs)
            .zip(&hits)
            .map(|((&e, repr), &(nn, _))| {
                let feature = sub(repr, target_table.row(nn));
                let p = nnc_forward_feature(&feature, params).p;
                DanglingVerdict {
                    entity: e,
                    is_dangling: p > 0.5,
                    confidence: p,
                    threshold: 0.5,
                }
            })
            .collect(),
        DetectorInference::Mr { lambda } => entities
            .iter()
            .zip(&hits)
            .map(|(&e, &(_, dist))| DanglingVerdict {
                entity: e,
                is_dangling: dist > *lambda,
                confidence: dist,
                threshold: *lambda,
            })
            .collect(),
        DetectorInference::Br { training_mean } => {
            if entities.is_empty() {
                return Ok(Vec::new());
            }
            let threshold = training_mean.unwrap_or_else(|| {
                hits.iter().map(|h| h.1).sum::<f64>() / hits.len() as f64
            });
            entities
                .iter()
                .zip(&hits)
                .map(|(&e, &(_, dist))| DanglingVerdict {
                    entity: e,
                    is_dangling: dist > threshold,
                    confidence: dist,
                    threshold,
                })
                .collect()
        }
    };
    Ok(verdicts)
}

/// Writes verdicts as CSV: `entity,confidence,threshold,is_dangling`.
pub fn write_verdicts_csv<W: Write>(
    verdicts: &[DanglingVerdict],
    name_of: impl Fn(usize) -> String,
    w: W,
) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["entity", "confidence", "threshold", "is_dangling"])?;
    for v in verdicts {
        wtr.write_record([
            name_of(v.entity),
            format!("{}", v.confidence),
            format!("{}", v.threshold),
            v.is_dangling.to_string(),
        ])?;
    }
    wtr.flush().map_err(|e| Error::io("<verdicts csv>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn nnc_forward_zero_params_is_half() {
        let params = NncParams {
            w1: Matrix::zeros(2, 2),
            b1: vec![0.0; 2],
            w2: vec![0.0; 2],
            b2: 0.0,
        };
        let p = nnc_forward(&[0.3, 0.4], &[0.1, 0.1], None, &params);
        assert_eq!(p, 0.5);
    }

    #[test]
    fn nnc_forward_hand_case() {
        // dim 2, hidden 2, hand arithmetic
        let params = NncParams {
            w1: Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]),
            b1: vec![0.1, -0.1],
            w2: vec![0.5, -0.5],
            b2: 0.2,
        };
        let x = [0.6, 0.2];
        let x_nn = [0.1, 0.3];
        // feature = (0.5, -0.1); hidden = tanh(0.6), tanh(-0.2)
        let logit = 0.5 * 0.6f64.tanh() - 0.5 * (-0.2f64).tanh() + 0.2;
        let expect = 1.0 / (1.0 + (-logit).exp());
        let p = nnc_forward(&x, &x_nn, None, &params);
        assert_relative_eq!(p, expect, epsilon = 1e-12);
        assert!(p > 0.0 && p < 1.0);
    }

    #[test]
    fn label_weights_formula() {
        let w = label_weights(30, 10).unwrap();
        assert_relative_eq!(w.dangling, 2.0);
        assert_relative_eq!(w.matchable, 2.0 / 3.0);
        assert!(matches!(
            label_weights(0, 5),
            Err(Error::MissingClass("matchable"))
        ));
        assert!(label_weights(5, 0).is_err());
    }

    #[test]
    fn mr_term_cases() {
        // distance beyond margin: inactive
        let (l, g) = mr_term(&[1.2, 0.0], 0.9);
        assert_eq!(l, 0.0);
        assert!(g.iter().all(|&x| x == 0.0));
        // distance 0.4 under margin 0.9 -> 0.5
        let (l, _) = mr_term(&[0.4, 0.0], 0.9);
        assert_relative_eq!(l, 0.5, epsilon = 1e-12);
        // boundary: exactly the margin -> 0
        let (l, _) = mr_term(&[0.9, 0.0], 0.9);
        assert_eq!(l, 0.0);
    }

    #[test]
    fn br_terms_hand_arithmetic() {
        // v = 2, distances 1 and 3, alpha = 0.01, ||x|| = 2
        let x = [2.0, 0.0];
        let diffs = vec![vec![1.0, 0.0], vec![3.0, 0.0]];
        let term = br_terms(&x, &diffs, 0.01);
        assert_relative_eq!(term.lambda_x, 2.0);
        assert_relative_eq!(term.loss, 1.0 + 1.0 + 0.02, epsilon = 1e-12);
        // equal distances, alpha 0: loss vanishes
        let eq = br_terms(&x, &vec![vec![0.0, 2.0], vec![2.0, 0.0]], 0.0);
        assert_eq!(eq.loss, 0.0);
        // equal distances with alpha: only the norm term remains
        let only_norm = br_terms(&x, &vec![vec![0.0, 2.0], vec![2.0, 0.0]], 0.01);
        assert_relative_eq!(only_norm.loss, 0.02, epsilon = 1e-12);
    }

    #[test]
    fn br_gradient_pushes_toward_mean() {
        // Orthogonal samples: below-mean distance must grow, above-mean shrink
        // after a small descent step on x.
        let mut space = EmbeddingSpace::init(2, 1, 1, 2, 1, 3).unwrap();
        space.transform = Matrix::identity(2);
        space.ent1.row_mut(0).copy_from_slice(&[0.0, 0.0]);
        let mut targets = Matrix::zeros(2, 2);
        targets.row_mut(0).copy_from_slice(&[1.0, 0.0]); // near
        targets.row_mut(1).copy_from_slice(&[0.0, 3.0]); // far
        let cfg = BrConfig {
            samples: 2,
            alpha: 0.0,
        };
        let (out, _) = br_loss(&space, &targets, &[(0, vec![0, 1])], &cfg).unwrap();
        let g = out.grads.get(Param::Ent1(0)).unwrap().to_vec();
        let step = 0.01;
        let x_new = [-step * g[0], -step * g[1]];
        let d_near_before = 1.0;
        let d_far_before = 3.0;
        let d_near_after = l2_norm(&sub(&x_new, targets.row(0)));
        let d_far_after = l2_norm(&sub(&x_new, targets.row(1)));
        assert!(d_near_after > d_near_before, "below-mean sample moved closer");
        assert!(d_far_after < d_far_before, "above-mean sample moved away");
    }

    fn unit_cache(entries: &[(usize, usize, f64)]) -> NnCache {
        let mut cache = NnCache::new(10);
        cache.set_entries_for_tests(entries.iter().map(|&(e, nn, d)| (e, (nn, d))));
        cache
    }

    #[test]
    fn mr_loss_zero_iff_all_beyond_margin() {
        let mut space = EmbeddingSpace::init(2, 2, 1, 2, 1, 5).unwrap();
        space.transform = Matrix::identity(2);
        space.ent1.row_mut(0).copy_from_slice(&[2.0, 0.0]);
        space.ent1.row_mut(1).copy_from_slice(&[0.2, 0.0]);
        let mut targets = Matrix::zeros(2, 2);
        targets.row_mut(0).copy_from_slice(&[0.0, 0.0]);
        targets.row_mut(1).copy_from_slice(&[0.0, 0.0]);
        let cache = unit_cache(&[(0, 0, 2.0), (1, 0, 0.2)]);
        let cfg = MrConfig { lambda: 0.9 };
        let far = mr_loss(&space, &cache, &targets, &[0], &cfg).unwrap();
        assert_eq!(far.loss, 0.0);
        let near = mr_loss(&space, &cache, &targets, &[1], &cfg).unwrap();
        assert_relative_eq!(near.loss, 0.7, epsilon = 1e-12);
        assert!(mr_loss(&space, &cache, &targets, &[], &cfg).is_err());
    }

    #[test]
    fn detect_rules() {
        let mut source = Matrix::zeros(3, 2);
        source.row_mut(0).copy_from_slice(&[0.2, 0.0]);
        source.row_mut(1).copy_from_slice(&[0.4, 0.0]);
        source.row_mut(2).copy_from_slice(&[0.9, 0.0]);
        let targets = Matrix::zeros(1, 2); // single target at origin

        // MR: lambda 0.9, distances {0.2, 0.4, 0.9}: none exceed strictly
        let v = detect(
            &[0, 1, 2],
            &source,
            None,
            &targets,
            &DetectorInference::Mr { lambda: 0.9 },
        )
        .unwrap();
        assert!(v.iter().all(|x| !x.is_dangling));
        // distance 1.0 > 0.9 -> dangling
        source.row_mut(2).copy_from_slice(&[1.0, 0.0]);
        let v = detect(
            &[2],
            &source,
            None,
            &targets,
            &DetectorInference::Mr { lambda: 0.9 },
        )
        .unwrap();
        assert!(v[0].is_dangling);

        // BR: distances {0.2, 0.4, 1.0} -> threshold mean = 0.5333...; only #2 flagged
        let v = detect(
            &[0, 1, 2],
            &source,
            None,
            &targets,
            &DetectorInference::Br { training_mean: None },
        )
        .unwrap();
        assert_eq!(
            v.iter().map(|x| x.is_dangling).collect::<Vec<_>>(),
            vec![false, false, true]
        );

        // BR with hand distances {0.2, 0.4, 0.9}: threshold 0.5, third flagged
        source.row_mut(2).copy_from_slice(&[0.9, 0.0]);
        let v = detect(
            &[0, 1, 2],
            &source,
            None,
            &targets,
            &DetectorInference::Br { training_mean: None },
        )
        .unwrap();
        assert_relative_eq!(v[0].threshold, 0.5, epsilon = 1e-12);
        assert_eq!(
            v.iter().map(|x| x.is_dangling).collect::<Vec<_>>(),
            vec![false, false, true]
        );

        // NNC with zero weights: p = 0.5 exactly -> matchable (strict >)
        let params = NncParams {
            w1: Matrix::zeros(2, 2),
            b1: vec![0.0; 2],
            w2: vec![0.0; 2],
            b2: 0.0,
        };
        let v = detect(
            &[0],
            &source,
            None,
            &targets,
            &DetectorInference::Nnc(&params),
        )
        .unwrap();
        assert!(!v[0].is_dangling);
        assert_eq!(v[0].confidence, 0.5);
    }

    #[test]
    fn detect_empty_targets_errors() {
        let source = Matrix::zeros(1, 2);
        let targets = Matrix::zeros(0, 2);
        assert!(detect(
            &[0],
            &source,
            None,
            &targets,
            &DetectorInference::Mr { lambda: 0.5 }
        )
        .is_err());
    }

    #[test]
    fn verdicts_csv_shape() {
        let verdicts = vec![DanglingVerdict {
            entity: 0,
            is_dangling: true,
            confidence: 1.25,
            threshold: 0.9,
        }];
        let mut buf = Vec::new();
        write_verdicts_csv(&verdicts, |_| "e0".into(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("entity,confidence,threshold,is_dangling\n"));
        assert!(text.contains("e0,1.25,0.9,true"));
    }
}
