//! Synthetic KG pairs for tests and smoke runs: a random connected graph and
//! an isomorphic clone with relabeled, reshuffled identifiers.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::embed::seeded_rng;
use crate::kg::{EntityId, KnowledgeGraph};

#[derive(Debug, Clone, Copy)]
pub struct SyntheticConfig {
    pub entities: usize,
    pub relations: usize,
    pub triples: usize,
    pub seed: u64,
}

/// Random connected KG: a spanning backbone (every entity i > 0 links to a
/// random earlier entity) padded with random distinct triples. Self-loops are
/// not generated.
pub fn random_kg(cfg: &SyntheticConfig) -> KnowledgeGraph {
    assert!(cfg.entities >= 2, "need at least two entities");
    assert!(
        cfg.triples >= cfg.entities - 1,
        "too few triples to keep every entity connected"
    );
    let mut rng = seeded_rng(cfg.seed, "synthetic_kg");
    let mut triples: Vec<(usize, usize, usize)> = Vec::with_capacity(cfg.triples);
    let mut seen = HashSet::new();
    for i in 1..cfg.entities {
        let j = rng.random_range(0..i);
        let r = rng.random_range(0..cfg.relations);
        triples.push((i, r, j));
        seen.insert((i, r, j));
    }
    while triples.len() < cfg.triples {
        let h = rng.random_range(0..cfg.entities);
        let t = rng.random_range(0..cfg.entities);
        if h == t {
            continue;
        }
        let r = rng.random_range(0..cfg.relations);
        if seen.insert((h, r, t)) {
            triples.push((h, r, t));
        }
    }
    KnowledgeGraph::from_named_triples(
        triples
            .iter()
            .map(|&(h, r, t)| (format!("s{h}"), format!("r{r}"), format!("s{t}"))),
    )
    .expect("generator emits at least one triple")
}

/// Exact isomorphic clone: entities renamed through a random permutation and
/// the triple order reshuffled, so the clone's vocabulary order shares nothing
/// with the original. Returns the clone and the gold alignment.
pub fn isomorphic_clone(
    kg: &KnowledgeGraph,
    seed: u64,
) -> (KnowledgeGraph, Vec<(EntityId, EntityId)>) {
    let mut rng = seeded_rng(seed, "synthetic_clone");
    let n = kg.num_entities();
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);

    let mut named: Vec<(String, String, String)> = kg
        .triples()
        .iter()
        .map(|t| {
            (
                format!("t{}", perm[t.head]),
                kg.relation_name(t.rel).to_string(),
                format!("t{}", perm[t.tail]),
            )
        })
        .collect();
    named.shuffle(&mut rng);
    let clone = KnowledgeGraph::from_named_triples(named).expect("clone preserves triples");

    let links = (0..n)
        .map(|e| {
            (
                e,
                clone
                    .entity_id(&format!("t{}", perm[e]))
                    .expect("every entity appears in a triple"),
            )
        })
        .collect();
    (clone, links)
}

/// Convenience: a random KG plus its relabeled clone and gold links.
pub fn generate_pair(
    cfg: &SyntheticConfig,
) -> (KnowledgeGraph, KnowledgeGraph, Vec<(EntityId, EntityId)>) {
    let kg1 = random_kg(cfg);
    let (kg2, links) = isomorphic_clone(&kg1, cfg.seed);
    (kg1, kg2, links)
}
