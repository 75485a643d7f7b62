//! Benchmark construction: prune two linked KGs to a one-to-one aligned core,
//! inject dangling entities by disjoint removal, split the result, and compute
//! the bias diagnostics (degree histograms, neighbor overlap).

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::embed::seeded_rng;
use crate::error::{Error, Result};
use crate::kg::{AlignmentStore, EntityId, KnowledgeGraph, Split};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForgeConfig {
    /// Fraction of link pairs whose *source* entity is removed, leaving the
    /// target counterpart dangling.
    pub removal_fraction_source: f64,
    /// Fraction of link pairs whose *target* entity is removed, leaving the
    /// source counterpart dangling.
    pub removal_fraction_target: f64,
    /// (train, valid, test), summing to 1.
    pub split_ratios: (f64, f64, f64),
    pub rng_seed: u64,
    /// Permit empty splits when a ratio is tuned to zero on purpose.
    pub allow_empty_splits: bool,
}

impl Default for ForgeConfig {
    fn default() -> Self {
        ForgeConfig {
            removal_fraction_source: 0.40,
            removal_fraction_target: 0.25,
            split_ratios: (0.3, 0.2, 0.5),
            rng_seed: 0,
            allow_empty_splits: false,
        }
    }
}

impl ForgeConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, f) in [
            ("removal_fraction_source", self.removal_fraction_source),
            ("removal_fraction_target", self.removal_fraction_target),
        ] {
            if !(0.0..1.0).contains(&f) {
                return Err(Error::InvalidConfig(format!(
                    "{name} = {f} outside [0, 1)"
                )));
            }
        }
        let sum = self.removal_fraction_source + self.removal_fraction_target;
        if sum >= 1.0 {
            return Err(Error::RemovalFractions(sum));
        }
        let (a, b, c) = self.split_ratios;
        if a < 0.0 || b < 0.0 || c < 0.0 || (a + b + c - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "split ratios ({a}, {b}, {c}) must be nonnegative and sum to 1"
            )));
        }
        Ok(())
    }
}

/// Iteratively deletes unlinked entities and their triples from both graphs
/// until every surviving entity is linked and keeps at least one triple.
///
/// The cascade runs both ways: an entity left without triples is deleted,
/// which deletes its link, which may orphan its counterpart.
pub fn prune_to_bijection(
    kg1: &KnowledgeGraph,
    kg2: &KnowledgeGraph,
    links: &[(EntityId, EntityId)],
) -> Result<(KnowledgeGraph, KnowledgeGraph, Vec<(EntityId, EntityId)>)> {
    check_one_to_one(links)?;

    let mut alive1 = vec![false; kg1.num_entities()];
    let mut alive2 = vec![false; kg2.num_entities()];
    let mut link_alive = vec![true; links.len()];
    for &(s, t) in links {
        alive1[s] = true;
        alive2[t] = true;
    }

    loop {
        let mut changed = false;
        // Triples survive only with both endpoints alive; entities need >= 1 triple.
        for (kg, alive) in [(kg1, &mut alive1), (kg2, &mut alive2)] {
            let mut deg = vec![0usize; kg.num_entities()];
            for t in kg.triples() {
                if alive[t.head] && alive[t.tail] {
                    deg[t.head] += 1;
                    if t.head != t.tail {
                        deg[t.tail] += 1;
                    }
                }
            }
            for e in 0..kg.num_entities() {
                if alive[e] && deg[e] == 0 {
                    alive[e] = false;
                    changed = true;
                }
            }
        }
        for (i, &(s, t)) in links.iter().enumerate() {
            if link_alive[i] && (!alive1[s] || !alive2[t]) {
                link_alive[i] = false;
                alive1[s] = false;
                alive2[t] = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    let links_out: Vec<(String, String)> = links
        .iter()
        .zip(&link_alive)
        .filter(|(_, &a)| a)
        .map(|(&(s, t), _)| {
            (
                kg1.entity_name(s).to_string(),
                kg2.entity_name(t).to_string(),
            )
        })
        .collect();
    if links_out.is_empty() {
        return Err(Error::NoAlignedCore);
    }

    let new1 = rebuild(kg1, &alive1)?;
    let new2 = rebuild(kg2, &alive2)?;
    let links_new = links_out
        .iter()
        .map(|(s, t)| {
            (
                new1.entity_id(s).expect("pruned link endpoint kept"),
                new2.entity_id(t).expect("pruned link endpoint kept"),
            )
        })
        .collect();
    Ok((new1, new2, links_new))
}

fn check_one_to_one(links: &[(EntityId, EntityId)]) -> Result<()> {
    let mut s = HashSet::new();
    let mut t = HashSet::new();
    for &(a, b) in links {
        if !s.insert(a) || !t.insert(b) {
            return Err(Error::DuplicateLink {
                name: format!("#{a}/#{b}"),
            });
        }
    }
    if links.is_empty() {
        return Err(Error::NoAlignedCore);
    }
    Ok(())
}

fn rebuild(kg: &KnowledgeGraph, alive: &[bool]) -> Result<KnowledgeGraph> {
    KnowledgeGraph::from_named_triples(
        kg.triples()
            .iter()
            .filter(|t| alive[t.head] && alive[t.tail])
            .map(|t| {
                (
                    kg.entity_name(t.head),
                    kg.relation_name(t.rel),
                    kg.entity_name(t.tail),
                )
            }),
    )
}

/// Forged dataset: the two graphs after entity removal plus alignment labels.
#[derive(Debug, Clone)]
pub struct ForgeOutput {
    pub kg1: KnowledgeGraph,
    pub kg2: KnowledgeGraph,
    pub store: AlignmentStore,
    pub report: InjectReport,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InjectReport {
    pub requested_source_removals: usize,
    pub achieved_source_removals: usize,
    pub requested_target_removals: usize,
    pub achieved_target_removals: usize,
}

impl InjectReport {
    pub fn quota_missed(&self) -> bool {
        self.achieved_source_removals < self.requested_source_removals
            || self.achieved_target_removals < self.requested_target_removals
    }
}

/// Samples two disjoint subsets of link pairs and removes the source entity
/// of the first subset and the target entity of the second, leaving their
/// counterparts dangling. A removal that would strand another surviving
/// entity without triples is skipped and the scan moves on; unmet quotas are
/// reported, not fatal.
pub fn inject_dangling(
    kg1: &KnowledgeGraph,
    kg2: &KnowledgeGraph,
    links: &[(EntityId, EntityId)],
    cfg: &ForgeConfig,
) -> Result<ForgeOutput> {
    cfg.validate()?;
    check_one_to_one(links)?;

    let quota_src = (cfg.removal_fraction_source * links.len() as f64).floor() as usize;
    let quota_tgt = (cfg.removal_fraction_target * links.len() as f64).floor() as usize;

    let mut rng = seeded_rng(cfg.rng_seed, "inject");
    let mut order: Vec<usize> = (0..links.len()).collect();
    order.shuffle(&mut rng);

    let mut removed1 = Remover::new(kg1);
    let mut removed2 = Remover::new(kg2);
    let mut in_subset1 = vec![false; links.len()];
    let mut in_subset2 = vec![false; links.len()];

    let mut achieved_src = 0;
    for &i in &order {
        if achieved_src == quota_src {
            break;
        }
        if removed1.try_remove(links[i].0) {
            in_subset1[i] = true;
            achieved_src += 1;
        }
    }
    order.shuffle(&mut rng);
    let mut achieved_tgt = 0;
    for &i in &order {
        if achieved_tgt == quota_tgt {
            break;
        }
        if in_subset1[i] {
            continue; // subsets must be disjoint
        }
        if removed2.try_remove(links[i].1) {
            in_subset2[i] = true;
            achieved_tgt += 1;
        }
    }

    let new1 = rebuild(kg1, &removed1.alive())?;
    let new2 = rebuild(kg2, &removed2.alive())?;

    let reindex1 = |e: EntityId| new1.entity_id(kg1.entity_name(e)).expect("survivor in kg1");
    let reindex2 = |e: EntityId| new2.entity_id(kg2.entity_name(e)).expect("survivor in kg2");

    let mut pairs = Vec::new();
    let mut dangling_source = Vec::new();
    let mut dangling_target = Vec::new();
    for (i, &(s, t)) in links.iter().enumerate() {
        if in_subset1[i] {
            dangling_target.push((reindex2(t), None));
        } else if in_subset2[i] {
            dangling_source.push((reindex1(s), None));
        } else {
            pairs.push((reindex1(s), reindex2(t), None));
        }
    }

    Ok(ForgeOutput {
        kg1: new1,
        kg2: new2,
        store: AlignmentStore::new(pairs, dangling_source, dangling_target)?,
        report: InjectReport {
            requested_source_removals: quota_src,
            achieved_source_removals: achieved_src,
            requested_target_removals: quota_tgt,
            achieved_target_removals: achieved_tgt,
        },
    })
}

/// Tracks tentative entity removals, refusing any that would leave another
/// surviving entity with zero triples.
struct Remover<'a> {
    kg: &'a KnowledgeGraph,
    degree: Vec<usize>,
    removed: Vec<bool>,
}

impl<'a> Remover<'a> {
    fn new(kg: &'a KnowledgeGraph) -> Self {
        Remover {
            kg,
            degree: (0..kg.num_entities()).map(|e| kg.degree(e)).collect(),
            removed: vec![false; kg.num_entities()],
        }
    }

    fn try_remove(&mut self, e: EntityId) -> bool {
        debug_assert!(!self.removed[e]);
        let mut loss: HashMap<EntityId, usize> = HashMap::new();
        for &(_, nbr, _) in self.kg.adjacency(e) {
            if nbr != e && !self.removed[nbr] {
                *loss.entry(nbr).or_insert(0) += 1;
            }
        }
        if loss.iter().any(|(&nbr, &l)| self.degree[nbr] <= l) {
            return false;
        }
        for (nbr, l) in loss {
            self.degree[nbr] -= l;
        }
        self.removed[e] = true;
        true
    }

    fn alive(&self) -> Vec<bool> {
        self.removed.iter().map(|&r| !r).collect()
    }
}

/// Assigns split tags to every collection of an unsplit store: train and
/// valid take `floor(ratio·n)` items each, test takes the remainder.
/// Deterministic in the seed.
pub fn split_dataset(store: &AlignmentStore, cfg: &ForgeConfig) -> Result<AlignmentStore> {
    cfg.validate()?;
    if store.is_split() {
        return Err(Error::AlreadySplit);
    }
    let mut rng = seeded_rng(cfg.rng_seed, "split");

    let assign = |n: usize, rng: &mut rand_chacha::ChaCha8Rng, what: &'static str| {
        let n_train = (cfg.split_ratios.0 * n as f64).floor() as usize;
        let n_valid = (cfg.split_ratios.1 * n as f64).floor() as usize;
        let n_test = n - n_train - n_valid;
        if n > 0 && !cfg.allow_empty_splits {
            for (name, len) in [("train", n_train), ("valid", n_valid), ("test", n_test)] {
                if len == 0 {
                    return Err(Error::EmptySplit {
                        collection: what,
                        split: name,
                        len: n,
                    });
                }
            }
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        let mut tags = vec![Split::Test; n];
        for &i in &order[..n_train] {
            tags[i] = Split::Train;
        }
        for &i in &order[n_train..n_train + n_valid] {
            tags[i] = Split::Valid;
        }
        Ok(tags)
    };

    let pair_tags = assign(store.pairs().len(), &mut rng, "pairs")?;
    let ds_tags = assign(store.dangling_source().len(), &mut rng, "dangling_source")?;
    let dt_tags = assign(store.dangling_target().len(), &mut rng, "dangling_target")?;

    AlignmentStore::new(
        store
            .pairs()
            .iter()
            .zip(pair_tags)
            .map(|(&(s, t, _), tag)| (s, t, Some(tag)))
            .collect(),
        store
            .dangling_source()
            .iter()
            .zip(ds_tags)
            .map(|(&(e, _), tag)| (e, Some(tag)))
            .collect(),
        store
            .dangling_target()
            .iter()
            .zip(dt_tags)
            .map(|(&(e, _), tag)| (e, Some(tag)))
            .collect(),
    )
}

/// Histogram of `degree -> count` over a subset of entities. Degree counts
/// triples incident to the entity; a self-loop counts once.
pub fn degree_histogram(kg: &KnowledgeGraph, subset: &[EntityId]) -> BTreeMap<usize, usize> {
    let mut hist = BTreeMap::new();
    for &e in subset {
        *hist.entry(kg.degree(e)).or_insert(0) += 1;
    }
    hist
}

/// Jaccard overlap of an aligned pair's neighborhoods, with target-side
/// neighbors mapped onto source identities through the reference alignment.
/// Unmapped target neighbors keep identities of their own.
pub fn neighbor_overlap(
    pair: (EntityId, EntityId),
    kg1: &KnowledgeGraph,
    kg2: &KnowledgeGraph,
    reference: &[(EntityId, EntityId)],
) -> Result<f64> {
    if !reference.contains(&pair) {
        return Err(Error::Invalid(format!(
            "pair ({}, {}) not in reference alignment",
            pair.0, pair.1
        )));
    }
    let target_to_source: HashMap<EntityId, EntityId> =
        reference.iter().map(|&(s, t)| (t, s)).collect();

    // Identity space: source ids as-is, unmapped target ids offset past them.
    let left: HashSet<usize> = kg1.neighbors(pair.0)?.into_iter().collect();
    let right: HashSet<usize> = kg2
        .neighbors(pair.1)?
        .into_iter()
        .map(|t| match target_to_source.get(&t) {
            Some(&s) => s,
            None => kg1.num_entities() + t,
        })
        .collect();

    let inter = left.intersection(&right).count();
    let union = left.union(&right).count();
    if union == 0 {
        return Ok(0.0);
    }
    Ok(inter as f64 / union as f64)
}

/// Mean neighbor overlap over every pair of the reference alignment.
pub fn average_neighbor_overlap(
    kg1: &KnowledgeGraph,
    kg2: &KnowledgeGraph,
    reference: &[(EntityId, EntityId)],
) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::EmptyInput("reference alignment".into()));
    }
    let mut sum = 0.0;
    for &pair in reference {
        sum += neighbor_overlap(pair, kg1, kg2, reference)?;
    }
    Ok(sum / reference.len() as f64)
}
