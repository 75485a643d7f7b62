//! Alignment techniques: MTransE (translational embedding + linear transform)
//! and AggAlign, a one-hop mean-aggregation encoder trained with a
//! margin-based ranking alignment loss. Gradients are hand-derived; every
//! loss here is covered by finite-difference checks in the test suites.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::embed::{xavier_init, EmbeddingSpace, GradStore, LossOutput, Param, ParamTable};
use crate::error::{Error, Result};
use crate::kg::{EntityId, KnowledgeGraph, Triple};
use crate::matrix::{add_outer, add_scaled, dot, l2_norm, scale, sub, Matrix};
use crate::nn::{knn, Metric};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    L1,
    L2,
}

impl std::str::FromStr for Norm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l1" | "L1" => Ok(Norm::L1),
            "l2" | "L2" => Ok(Norm::L2),
            other => Err(Error::InvalidConfig(format!("unknown norm {other:?}"))),
        }
    }
}

pub fn norm_value(u: &[f64], norm: Norm) -> f64 {
    match norm {
        Norm::L1 => u.iter().map(|x| x.abs()).sum(),
        Norm::L2 => l2_norm(u),
    }
}

/// ∂‖u‖/∂u. At the kink (zero vector for L2, zero coordinates for L1) the
/// subgradient 0 is used.
fn norm_grad(u: &[f64], norm: Norm) -> Vec<f64> {
    match norm {
        Norm::L1 => u
            .iter()
            .map(|&x| {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            })
            .collect(),
        Norm::L2 => {
            let n = l2_norm(u);
            if n == 0.0 {
                vec![0.0; u.len()]
            } else {
                scale(u, 1.0 / n)
            }
        }
    }
}

/// TransE plausibility distance `‖h + r − t‖`.
pub fn transe_score(h: &[f64], r: &[f64], t: &[f64], norm: Norm) -> f64 {
    assert_eq!(h.len(), r.len(), "transe_score dimension mismatch");
    assert_eq!(h.len(), t.len(), "transe_score dimension mismatch");
    let u: Vec<f64> = h
        .iter()
        .zip(r)
        .zip(t)
        .map(|((h, r), t)| h + r - t)
        .collect();
    norm_value(&u, norm)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MTransEConfig {
    pub triple_margin: f64,
    pub norm: Norm,
    pub align_weight: f64,
}

impl Default for MTransEConfig {
    fn default() -> Self {
        MTransEConfig {
            triple_margin: 1.0,
            norm: Norm::L2,
            align_weight: 1.0,
        }
    }
}

impl MTransEConfig {
    pub fn validate(&self) -> Result<()> {
        if self.triple_margin <= 0.0 {
            return Err(Error::InvalidConfig("triple_margin must be > 0".into()));
        }
        if self.align_weight <= 0.0 {
            return Err(Error::InvalidConfig("align_weight must be > 0".into()));
        }
        Ok(())
    }
}

/// Which KG's tables a triple batch addresses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KgSide {
    Source,
    Target,
}

impl KgSide {
    pub fn ent_param(self, row: usize) -> Param {
        match self {
            KgSide::Source => Param::Ent1(row),
            KgSide::Target => Param::Ent2(row),
        }
    }

    pub fn rel_param(self, row: usize) -> Param {
        match self {
            KgSide::Source => Param::Rel1(row),
            KgSide::Target => Param::Rel2(row),
        }
    }

    pub fn ent_table(self, space: &EmbeddingSpace) -> &Matrix {
        match self {
            KgSide::Source => &space.ent1,
            KgSide::Target => &space.ent2,
        }
    }

    fn rel_table(self, space: &EmbeddingSpace) -> &Matrix {
        match self {
            KgSide::Source => &space.rel1,
            KgSide::Target => &space.rel2,
        }
    }
}

/// A positive triple paired with its corrupted negatives.
#[derive(Debug, Clone)]
pub struct TripleWithNegatives {
    pub positive: Triple,
    pub negatives: Vec<Triple>,
}

/// Margin-based ranking loss over TransE scores:
/// `Σ max(0, margin + score(pos) − score(neg))`.
pub fn mtranse_triple_loss(
    space: &EmbeddingSpace,
    side: KgSide,
    batch: &[TripleWithNegatives],
    cfg: &MTransEConfig,
) -> Result<LossOutput> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch("mtranse_triple_loss"));
    }
    let ents = side.ent_table(space);
    let rels = side.rel_table(space);
    let mut out = LossOutput::new();

    for item in batch {
        if item.negatives.is_empty() {
            return Err(Error::EmptyBatch("mtranse_triple_loss negatives"));
        }
        let pos = item.positive;
        let pos_diff: Vec<f64> = ents
            .row(pos.head)
            .iter()
            .zip(rels.row(pos.rel))
            .zip(ents.row(pos.tail))
            .map(|((h, r), t)| h + r - t)
            .collect();
        let pos_score = norm_value(&pos_diff, cfg.norm);

        for neg in &item.negatives {
            let neg_diff: Vec<f64> = ents
                .row(neg.head)
                .iter()
                .zip(rels.row(neg.rel))
                .zip(ents.row(neg.tail))
                .map(|((h, r), t)| h + r - t)
                .collect();
            let neg_score = norm_value(&neg_diff, cfg.norm);
            let violation = cfg.triple_margin + pos_score - neg_score;
            if violation <= 0.0 {
                continue;
            }
            out.loss += violation;
            let gp = norm_grad(&pos_diff, cfg.norm);
            out.grads.add(side.ent_param(pos.head), &gp);
            out.grads.add(side.rel_param(pos.rel), &gp);
            out.grads.add_scaled(side.ent_param(pos.tail), &gp, -1.0);
            let gn = norm_grad(&neg_diff, cfg.norm);
            out.grads.add_scaled(side.ent_param(neg.head), &gn, -1.0);
            out.grads.add_scaled(side.rel_param(neg.rel), &gn, -1.0);
            out.grads.add(side.ent_param(neg.tail), &gn);
        }
    }
    Ok(out)
}

/// Transform-alignment loss `weight · Σ ‖M·x1 − x2‖` over seed pairs, with
/// gradients for M and both entity rows.
pub fn mtranse_align_loss(
    space: &EmbeddingSpace,
    pairs: &[(EntityId, EntityId)],
    norm: Norm,
    weight: f64,
) -> Result<LossOutput> {
    if pairs.is_empty() {
        return Err(Error::EmptyBatch("mtranse_align_loss"));
    }
    let m = &space.transform;
    let dim = space.dim();
    let mut out = LossOutput::new();
    for &(e1, e2) in pairs {
        let x1 = space.ent1.row(e1);
        let x2 = space.ent2.row(e2);
        let diff = sub(&m.matvec(x1), x2);
        out.loss += weight * norm_value(&diff, norm);
        let g = norm_grad(&diff, norm);
        out.grads.add_scaled(Param::Ent1(e1), &m.tr_matvec(&g), weight);
        out.grads.add_scaled(Param::Ent2(e2), &g, -weight);
        let m_grad = out.grads.entry_mut(Param::Transform, dim * dim);
        for (i, gi) in g.iter().enumerate() {
            add_scaled(&mut m_grad[i * dim..(i + 1) * dim], x1, weight * gi);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggAlignConfig {
    /// Distance margin λ1 of the ranking loss.
    pub margin: f64,
}

impl Default for AggAlignConfig {
    fn default() -> Self {
        AggAlignConfig { margin: 1.4 }
    }
}

impl AggAlignConfig {
    pub fn validate(&self) -> Result<()> {
        if self.margin <= 0.0 {
            return Err(Error::InvalidConfig("agg margin must be > 0".into()));
        }
        Ok(())
    }
}

/// One-hop mean-aggregation encoder shared by both KGs:
/// `enc(x) = tanh(W_self·x + W_nbr·mean(neighbors))`; an isolated entity
/// keeps only the self term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggEncoder {
    pub w_self: Matrix,
    pub w_nbr: Matrix,
}

impl AggEncoder {
    pub fn init(dim: usize, seed: u64) -> Result<Self> {
        Ok(AggEncoder {
            w_self: xavier_init(dim, dim, crate::embed::subseed(seed, "agg_self"))?,
            w_nbr: xavier_init(dim, dim, crate::embed::subseed(seed, "agg_nbr"))?,
        })
    }

    pub fn dim(&self) -> usize {
        self.w_self.rows()
    }
}

impl ParamTable for AggEncoder {
    fn param_mut(&mut self, param: Param) -> Option<&mut [f64]> {
        match param {
            Param::AggSelf => Some(self.w_self.data_mut()),
            Param::AggNbr => Some(self.w_nbr.data_mut()),
            _ => None,
        }
    }
}

/// Forward pass with everything the backward pass needs.
#[derive(Debug, Clone)]
pub struct EncodeTrace {
    pub entity: EntityId,
    pub output: Vec<f64>,
    neighbor_mean: Option<Vec<f64>>,
    neighbors: Vec<EntityId>,
}

/// Encodes one entity from its base table row and neighbor rows.
pub fn agg_encode(
    kg: &KnowledgeGraph,
    table: &Matrix,
    encoder: &AggEncoder,
    entity: EntityId,
) -> Vec<f64> {
    encode_trace(kg, table, encoder, entity).output
}

pub fn encode_trace(
    kg: &KnowledgeGraph,
    table: &Matrix,
    encoder: &AggEncoder,
    entity: EntityId,
) -> EncodeTrace {
    let neighbors: Vec<EntityId> = kg
        .neighbors(entity)
        .expect("entity in vocabulary")
        .into_iter()
        .collect();
    encode_trace_with(table, encoder, entity, neighbors)
}

/// Encoder forward over an explicit neighbor list. An empty list is the
/// isolated-entity case: only the self term contributes.
pub fn encode_trace_with(
    table: &Matrix,
    encoder: &AggEncoder,
    entity: EntityId,
    neighbors: Vec<EntityId>,
) -> EncodeTrace {
    let mut pre = encoder.w_self.matvec(table.row(entity));
    let neighbor_mean = if neighbors.is_empty() {
        None
    } else {
        let dim = table.cols();
        let mut mean = vec![0.0; dim];
        for &n in &neighbors {
            add_scaled(&mut mean, table.row(n), 1.0 / neighbors.len() as f64);
        }
        add_scaled(&mut pre, &encoder.w_nbr.matvec(&mean), 1.0);
        Some(mean)
    };
    let output = pre.iter().map(|v| v.tanh()).collect();
    EncodeTrace {
        entity,
        output,
        neighbor_mean,
        neighbors,
    }
}

/// Accumulates parameter gradients given `d(loss)/d(output)` of one encoding.
///
/// `ent_param` maps entity rows of the encoded KG onto [`Param`] keys, which
/// is what distinguishes source-side from target-side encodings.
pub fn encode_backward(
    trace: &EncodeTrace,
    table: &Matrix,
    encoder: &AggEncoder,
    grad_out: &[f64],
    ent_param: impl Fn(EntityId) -> Param,
    grads: &mut GradStore,
) {
    let dim = trace.output.len();
    // d/d(pre-activation) through tanh
    let ga: Vec<f64> = grad_out
        .iter()
        .zip(&trace.output)
        .map(|(g, z)| g * (1.0 - z * z))
        .collect();

    let x = table.row(trace.entity);
    add_outer(grads.entry_mut(Param::AggSelf, dim * dim), &ga, x);
    grads.add(ent_param(trace.entity), &encoder.w_self.tr_matvec(&ga));

    if let Some(mean) = &trace.neighbor_mean {
        add_outer(grads.entry_mut(Param::AggNbr, dim * dim), &ga, mean);
        let gmean = encoder.w_nbr.tr_matvec(&ga);
        let share = 1.0 / trace.neighbors.len() as f64;
        for &n in &trace.neighbors {
            grads.add_scaled(ent_param(n), &gmean, share);
        }
    }
}

/// An alignment pair with sampled negative target entities.
#[derive(Debug, Clone)]
pub struct PairWithNegatives {
    pub source: EntityId,
    pub target: EntityId,
    pub negative_targets: Vec<EntityId>,
}

/// AggAlign loss: `Σ ‖enc(x1) − enc(x2)‖² + Σ max(0, λ1 − ‖enc(x1) − enc(x′)‖)`
/// with gradients flowing through the encoder into both base tables.
pub fn agg_align_loss(
    kg1: &KnowledgeGraph,
    kg2: &KnowledgeGraph,
    space: &EmbeddingSpace,
    encoder: &AggEncoder,
    batch: &[PairWithNegatives],
    cfg: &AggAlignConfig,
) -> Result<LossOutput> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch("agg_align_loss"));
    }
    let mut out = LossOutput::new();
    for item in batch {
        if item.negative_targets.is_empty() {
            return Err(Error::EmptyBatch("agg_align_loss negatives"));
        }
        let t1 = encode_trace(kg1, &space.ent1, encoder, item.source);
        let t2 = encode_trace(kg2, &space.ent2, encoder, item.target);

        let diff = sub(&t1.output, &t2.output);
        out.loss += dot(&diff, &diff);
        let gpos = scale(&diff, 2.0);
        encode_backward(&t1, &space.ent1, encoder, &gpos, Param::Ent1, &mut out.grads);
        let gneg_pair = scale(&diff, -2.0);
        encode_backward(&t2, &space.ent2, encoder, &gneg_pair, Param::Ent2, &mut out.grads);

        for &neg in &item.negative_targets {
            let tn = encode_trace(kg2, &space.ent2, encoder, neg);
            let d = sub(&t1.output, &tn.output);
            let dist = l2_norm(&d);
            if dist >= cfg.margin {
                continue;
            }
            out.loss += cfg.margin - dist;
            let g = if dist == 0.0 {
                vec![0.0; d.len()]
            } else {
                scale(&d, -1.0 / dist)
            };
            encode_backward(&t1, &space.ent1, encoder, &g, Param::Ent1, &mut out.grads);
            let gneg = scale(&g, -1.0);
            encode_backward(&tn, &space.ent2, encoder, &gneg, Param::Ent2, &mut out.grads);
        }
    }
    Ok(out)
}

/// Encodes every entity of a KG (parallel, ordered) into a fresh matrix.
pub fn encode_all(kg: &KnowledgeGraph, table: &Matrix, encoder: &AggEncoder) -> Matrix {
    use rayon::prelude::*;
    let dim = encoder.dim();
    let rows: Vec<Vec<f64>> = (0..kg.num_entities())
        .into_par_iter()
        .map(|e| agg_encode(kg, table, encoder, e))
        .collect();
    let mut out = Matrix::zeros(kg.num_entities(), dim);
    for (i, row) in rows.into_iter().enumerate() {
        out.row_mut(i).copy_from_slice(&row);
    }
    out
}

/// Truncated candidate pools: for each entity, its `⌈(1−ε)·n⌉` nearest
/// entities in the same table (self excluded), refreshed with the NN cache.
#[derive(Debug, Clone)]
pub struct NegativePool {
    pools: Vec<Vec<usize>>,
}

impl NegativePool {
    /// Builds pools for the listed entities (or all rows when `entities` is
    /// `None`) over the current embedding table.
    pub fn build(table: &Matrix, epsilon: f64, entities: Option<&[usize]>) -> Result<Self> {
        if table.rows() == 0 {
            return Err(Error::EmptyTargets);
        }
        if !(0.0 < epsilon && epsilon <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "truncation epsilon {epsilon} outside (0, 1]"
            )));
        }
        let n = table.rows();
        let pool_size = (((1.0 - epsilon) * n as f64).ceil() as usize)
            .max(1)
            .min(n.saturating_sub(1).max(1));
        let ids: Vec<usize> = match entities {
            Some(list) => list.to_vec(),
            None => (0..n).collect(),
        };
        let mut queries = Matrix::zeros(ids.len(), table.cols());
        for (i, &e) in ids.iter().enumerate() {
            queries.row_mut(i).copy_from_slice(table.row(e));
        }
        // +1 so the entity itself can be dropped from its own pool.
        let k = (pool_size + 1).min(n);
        let hits = knn(&queries, table, k, Metric::Euclidean)?;
        let mut pools = vec![Vec::new(); n];
        for (i, &e) in ids.iter().enumerate() {
            pools[e] = hits[i]
                .iter()
                .map(|&(j, _)| j)
                .filter(|&j| j != e)
                .take(pool_size)
                .collect();
        }
        Ok(NegativePool { pools })
    }

    pub fn pool(&self, entity: usize) -> &[usize] {
        &self.pools[entity]
    }
}

/// Draws `n` negatives for `entity` from its truncated pool: without
/// replacement while the pool lasts, with replacement beyond that. Sampled
/// negatives never equal the entity itself.
pub fn truncated_negatives<R: Rng>(
    entity: usize,
    pool: &NegativePool,
    n: usize,
    rng: &mut R,
) -> Vec<usize> {
    let candidates = pool.pool(entity);
    debug_assert!(!candidates.is_empty(), "pool not built for entity {entity}");
    if n <= candidates.len() {
        sample(rng, candidates.len(), n)
            .into_iter()
            .map(|i| candidates[i])
            .collect()
    } else {
        (0..n)
            .map(|_| candidates[rng.random_range(0..candidates.len())])
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::seeded_rng;
    use approx::assert_relative_eq;

    fn toy_space(dim: usize) -> EmbeddingSpace {
        EmbeddingSpace::init(dim, 4, 2, 4, 2, 9).unwrap()
    }

    #[test]
    fn transe_score_hand_values() {
        assert_eq!(transe_score(&[1.0, 1.0], &[0.5, 0.5], &[1.5, 1.5], Norm::L2), 0.0);
        let s = transe_score(&[1.0, 0.0], &[0.0, 1.0], &[0.0, 0.0], Norm::L2);
        assert_relative_eq!(s, 2.0f64.sqrt(), epsilon = 1e-12);
        let s1 = transe_score(&[1.0, 0.0], &[0.0, 1.0], &[0.0, 0.0], Norm::L1);
        assert_relative_eq!(s1, 2.0);
    }

    #[test]
    fn triple_loss_hinge_cases() {
        // Hand-built 1-entity-pair space with controlled rows.
        let mut space = toy_space(2);
        // pos: h=0 r=0 t=1 with h + r = t  -> score 0
        space.ent1.row_mut(0).copy_from_slice(&[1.0, 0.0]);
        space.rel1.row_mut(0).copy_from_slice(&[0.0, 1.0]);
        space.ent1.row_mut(1).copy_from_slice(&[1.0, 1.0]);
        // neg tail far away -> hinge inactive
        space.ent1.row_mut(2).copy_from_slice(&[10.0, 10.0]);
        let cfg = MTransEConfig::default();
        let batch = vec![TripleWithNegatives {
            positive: Triple { head: 0, rel: 0, tail: 1 },
            negatives: vec![Triple { head: 0, rel: 0, tail: 2 }],
        }];
        let out = mtranse_triple_loss(&space, KgSide::Source, &batch, &cfg).unwrap();
        assert_eq!(out.loss, 0.0);
        assert!(out.grads.is_empty());

        // margin 1, score(pos) = 0.5, score(neg) = 0.7 -> 0.8
        space.ent1.row_mut(1).copy_from_slice(&[1.0, 0.5]);
        space.ent1.row_mut(2).copy_from_slice(&[1.0, 0.3]);
        let out = mtranse_triple_loss(&space, KgSide::Source, &batch, &cfg).unwrap();
        assert_relative_eq!(out.loss, 1.0 + 0.5 - 0.7, epsilon = 1e-12);
        assert!(mtranse_triple_loss(&space, KgSide::Source, &[], &cfg).is_err());
    }

    #[test]
    fn align_loss_identity_and_homogeneity() {
        let mut space = toy_space(2);
        space.transform = Matrix::identity(2);
        space.ent1.row_mut(0).copy_from_slice(&[0.3, -0.7]);
        space.ent2.row_mut(0).copy_from_slice(&[0.3, -0.7]);
        let out = mtranse_align_loss(&space, &[(0, 0)], Norm::L2, 1.0).unwrap();
        assert_relative_eq!(out.loss, 0.0);

        space.ent1.row_mut(1).copy_from_slice(&[1.0, 0.0]);
        space.ent2.row_mut(1).copy_from_slice(&[0.0, 0.0]);
        let out = mtranse_align_loss(&space, &[(1, 1)], Norm::L2, 1.0).unwrap();
        assert_relative_eq!(out.loss, 1.0, epsilon = 1e-12);

        // loss(cM) with x2 = 0 equals c·loss(M)
        let c = 3.0;
        let base = mtranse_align_loss(&space, &[(1, 1)], Norm::L2, 1.0).unwrap().loss;
        for v in space.transform.data_mut() {
            *v *= c;
        }
        let scaled = mtranse_align_loss(&space, &[(1, 1)], Norm::L2, 1.0).unwrap().loss;
        assert_relative_eq!(scaled, c * base, epsilon = 1e-12);
    }

    fn line_kg(n: usize) -> KnowledgeGraph {
        let triples: Vec<(String, String, String)> = (0..n - 1)
            .map(|i| (format!("e{i}"), "r".to_string(), format!("e{}", i + 1)))
            .collect();
        KnowledgeGraph::from_named_triples(triples).unwrap()
    }

    #[test]
    fn agg_encode_isolated_uses_self_term_only() {
        let dim = 2;
        let mut enc = AggEncoder::init(dim, 1).unwrap();
        enc.w_self = Matrix::identity(dim);
        let mut table = Matrix::zeros(2, dim);
        table.row_mut(0).copy_from_slice(&[0.3, -0.2]);
        table.row_mut(1).copy_from_slice(&[5.0, 5.0]);
        let z = encode_trace_with(&table, &enc, 0, vec![]).output;
        // W_nbr never enters: output is tanh(W_self·x) regardless of its weights.
        assert_relative_eq!(z[0], 0.3f64.tanh(), epsilon = 1e-12);
        assert_relative_eq!(z[1], (-0.2f64).tanh(), epsilon = 1e-12);
    }

    #[test]
    fn agg_encode_duplicate_identical_neighbors() {
        let dim = 2;
        let enc = AggEncoder::init(dim, 2).unwrap();
        let mut table = Matrix::zeros(3, dim);
        table.row_mut(0).copy_from_slice(&[0.1, 0.9]);
        table.row_mut(1).copy_from_slice(&[-0.4, 0.2]);
        table.row_mut(2).copy_from_slice(&[-0.4, 0.2]); // identical to row 1
        let one = encode_trace_with(&table, &enc, 0, vec![1]).output;
        let two = encode_trace_with(&table, &enc, 0, vec![1, 2]).output;
        assert_eq!(one, two);
    }

    #[test]
    fn agg_encode_hand_case_one_neighbor() {
        let kg = line_kg(2);
        let dim = 2;
        let mut enc = AggEncoder::init(dim, 1).unwrap();
        enc.w_self = Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 2.0]);
        enc.w_nbr = Matrix::from_vec(2, 2, vec![0.5, 0.0, 0.0, 0.5]);
        let mut table = Matrix::zeros(2, dim);
        table.row_mut(0).copy_from_slice(&[0.2, 0.4]);
        table.row_mut(1).copy_from_slice(&[0.6, -0.8]);
        let z = agg_encode(&kg, &table, &enc, 0);
        // pre = W_self·x0 + W_nbr·x1 = (0.2 + 0.3, 0.8 − 0.4)
        assert_relative_eq!(z[0], 0.5f64.tanh(), epsilon = 1e-12);
        assert_relative_eq!(z[1], 0.4f64.tanh(), epsilon = 1e-12);
    }

    #[test]
    fn agg_encode_locality() {
        // Perturbing a non-neighbor row leaves the encoding unchanged.
        let kg = line_kg(4);
        let enc = AggEncoder::init(3, 5).unwrap();
        let mut table = xavier_init(4, 3, 11).unwrap();
        let before = agg_encode(&kg, &table, &enc, 0);
        table.row_mut(3)[0] += 10.0; // e3 is not adjacent to e0
        let after = agg_encode(&kg, &table, &enc, 0);
        assert_eq!(before, after);
        table.row_mut(1)[0] += 1.0; // e1 is adjacent
        let moved = agg_encode(&kg, &table, &enc, 0);
        assert_ne!(before, moved);
    }

    #[test]
    fn agg_align_loss_cases() {
        let kg1 = line_kg(3);
        let kg2 = line_kg(3);
        let space = EmbeddingSpace::init(4, 3, 1, 3, 1, 21).unwrap();
        let enc = AggEncoder::init(4, 3).unwrap();
        let cfg = AggAlignConfig::default();
        let batch = vec![PairWithNegatives {
            source: 0,
            target: 0,
            negative_targets: vec![2],
        }];
        let out = agg_align_loss(&kg1, &kg2, &space, &enc, &batch, &cfg).unwrap();
        assert!(out.loss.is_finite());
        assert!(!out.grads.is_empty());
        assert!(agg_align_loss(&kg1, &kg2, &space, &enc, &[], &cfg).is_err());
    }

    #[test]
    fn negative_pool_sizes() {
        let table = xavier_init(100, 4, 2).unwrap();
        // epsilon 0.9 over 100 entities -> pool of 10 nearest
        let pool = NegativePool::build(&table, 0.9, Some(&[5])).unwrap();
        assert_eq!(pool.pool(5).len(), 10);
        assert!(!pool.pool(5).contains(&5));
        // epsilon -> 1 leaves the single nearest entity
        let pool = NegativePool::build(&table, 1.0, Some(&[5])).unwrap();
        assert_eq!(pool.pool(5).len(), 1);
    }

    #[test]
    fn truncated_negatives_never_positive() {
        let table = xavier_init(30, 4, 3).unwrap();
        let pool = NegativePool::build(&table, 0.8, None).unwrap();
        let mut rng = seeded_rng(0, "negtest");
        for e in 0..30 {
            for &neg in &truncated_negatives(e, &pool, 12, &mut rng) {
                assert_ne!(neg, e);
            }
        }
        // n > pool: draws with replacement, still excluding the positive.
        let small = NegativePool::build(&table, 1.0, None).unwrap();
        let negs = truncated_negatives(0, &small, 5, &mut rng);
        assert_eq!(negs.len(), 5);
    }
}
