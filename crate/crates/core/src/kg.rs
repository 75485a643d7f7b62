//! Knowledge-graph data model: vocabularies, triples, adjacency, alignment
//! links and dangling labels, plus the plain-text file formats.
//!
//! File formats (UTF-8, LF):
//! - triples: `<head>\t<relation>\t<tail>` per line
//! - links: `<source>\t<target>` per line
//! - dangling labels: one entity name per line

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type EntityId = usize;
pub type RelationId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub head: EntityId,
    pub rel: RelationId,
    pub tail: EntityId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Out,
    In,
}

/// A KG: entity/relation vocabularies plus relational triples.
///
/// Immutable after construction. Indices are dense and assigned in
/// first-appearance order of the triple stream. Adjacency records both
/// directions of every triple; a self-loop contributes a single entry, so
/// `Σ|adjacency(e)| = 2·|triples| − |self-loops|` and `adjacency(e).len()`
/// is exactly the number of triples incident to `e`.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeGraph {
    entities: Vec<String>,
    relations: Vec<String>,
    entity_index: HashMap<String, EntityId>,
    relation_index: HashMap<String, RelationId>,
    triples: Vec<Triple>,
    adjacency: Vec<Vec<(RelationId, EntityId, Direction)>>,
}

impl KnowledgeGraph {
    /// Builds a graph from named triples, interning names in first-appearance
    /// order (head, relation, tail per item) and dropping duplicate triples.
    pub fn from_named_triples<S, I>(iter: I) -> Result<Self>
    where
        S: AsRef<str>,
        I: IntoIterator<Item = (S, S, S)>,
    {
        let mut entities = Vec::new();
        let mut relations = Vec::new();
        let mut entity_index = HashMap::new();
        let mut relation_index = HashMap::new();
        let mut triples = Vec::new();
        let mut seen = HashSet::new();

        for (h, r, t) in iter {
            let head = intern(h.as_ref(), &mut entities, &mut entity_index);
            let rel = intern(r.as_ref(), &mut relations, &mut relation_index);
            let tail = intern(t.as_ref(), &mut entities, &mut entity_index);
            let triple = Triple { head, rel, tail };
            if seen.insert(triple) {
                triples.push(triple);
            }
        }

        if triples.is_empty() {
            return Err(Error::EmptyInput("no triples".into()));
        }

        let adjacency = build_adjacency(entities.len(), &triples);
        Ok(KnowledgeGraph {
            entities,
            relations,
            entity_index,
            relation_index,
            triples,
            adjacency,
        })
    }

    /// Parses a triple file: one tab-separated `(head, relation, tail)` per line.
    pub fn parse_triples(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_triples_str(&text, &path.display().to_string())
    }

    /// Same as [`parse_triples`](Self::parse_triples) over in-memory text;
    /// `source` names the input in error messages.
    pub fn parse_triples_str(text: &str, source: &str) -> Result<Self> {
        let mut rows = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(Error::Parse {
                    path: source.into(),
                    line: lineno + 1,
                    msg: format!("expected 3 tab-separated fields, found {}", fields.len()),
                });
            }
            if fields.iter().any(|f| f.is_empty()) {
                return Err(Error::Parse {
                    path: source.into(),
                    line: lineno + 1,
                    msg: "empty field".into(),
                });
            }
            rows.push((fields[0], fields[1], fields[2]));
        }
        if rows.is_empty() {
            return Err(Error::EmptyInput(format!("{source}: empty triple file")));
        }
        Self::from_named_triples(rows)
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn entity_name(&self, e: EntityId) -> &str {
        &self.entities[e]
    }

    pub fn relation_name(&self, r: RelationId) -> &str {
        &self.relations[r]
    }

    pub fn entity_id(&self, name: &str) -> Option<EntityId> {
        self.entity_index.get(name).copied()
    }

    pub fn entity_names(&self) -> &[String] {
        &self.entities
    }

    /// Adjacency entries of `e`: `(relation, neighbor, direction)` per incident triple.
    pub fn adjacency(&self, e: EntityId) -> &[(RelationId, EntityId, Direction)] {
        &self.adjacency[e]
    }

    /// Number of triples incident to `e` (head or tail; a self-loop counts once).
    pub fn degree(&self, e: EntityId) -> usize {
        self.adjacency[e].len()
    }

    /// Entities adjacent to `e` in either direction. `e` itself is included
    /// only when a self-loop exists.
    pub fn neighbors(&self, e: EntityId) -> Result<BTreeSet<EntityId>> {
        if e >= self.entities.len() {
            return Err(Error::UnknownEntity {
                name: format!("#{e}"),
            });
        }
        Ok(self.adjacency[e].iter().map(|&(_, n, _)| n).collect())
    }

    pub fn write_triples<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for t in &self.triples {
            writeln!(
                w,
                "{}\t{}\t{}",
                self.entities[t.head], self.relations[t.rel], self.entities[t.tail]
            )?;
        }
        Ok(())
    }
}

fn intern(name: &str, names: &mut Vec<String>, index: &mut HashMap<String, usize>) -> usize {
    if let Some(&id) = index.get(name) {
        return id;
    }
    let id = names.len();
    names.push(name.to_string());
    index.insert(name.to_string(), id);
    id
}

fn build_adjacency(n: usize, triples: &[Triple]) -> Vec<Vec<(RelationId, EntityId, Direction)>> {
    let mut adj = vec![Vec::new(); n];
    for t in triples {
        adj[t.head].push((t.rel, t.tail, Direction::Out));
        if t.head != t.tail {
            adj[t.tail].push((t.rel, t.head, Direction::In));
        }
    }
    adj
}

/// Train/valid/test split tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

/// Seed/validation/test alignment pairs plus labeled dangling entities.
///
/// Invariants, enforced at construction: alignment is one-to-one (each entity
/// in at most one pair), a source entity is never both aligned and dangling
/// (same for targets), and the dangling sets carry no duplicates. Collections
/// are kept sorted by entity index so equal stores compare equal regardless
/// of construction order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentStore {
    pairs: Vec<(EntityId, EntityId, Option<Split>)>,
    dangling_source: Vec<(EntityId, Option<Split>)>,
    dangling_target: Vec<(EntityId, Option<Split>)>,
}

impl AlignmentStore {
    pub fn new(
        mut pairs: Vec<(EntityId, EntityId, Option<Split>)>,
        mut dangling_source: Vec<(EntityId, Option<Split>)>,
        mut dangling_target: Vec<(EntityId, Option<Split>)>,
    ) -> Result<Self> {
        pairs.sort_unstable();
        dangling_source.sort_unstable();
        dangling_target.sort_unstable();
        let mut sources = HashSet::new();
        let mut targets = HashSet::new();
        for &(s, t, _) in &pairs {
            if !sources.insert(s) {
                return Err(Error::StoreInvariant(format!(
                    "source entity #{s} in more than one pair"
                )));
            }
            if !targets.insert(t) {
                return Err(Error::StoreInvariant(format!(
                    "target entity #{t} in more than one pair"
                )));
            }
        }
        let mut ds = HashSet::new();
        for &(e, _) in &dangling_source {
            if sources.contains(&e) {
                return Err(Error::StoreInvariant(format!(
                    "source entity #{e} both aligned and dangling"
                )));
            }
            if !ds.insert(e) {
                return Err(Error::StoreInvariant(format!(
                    "duplicate dangling source #{e}"
                )));
            }
        }
        let mut dt = HashSet::new();
        for &(e, _) in &dangling_target {
            if targets.contains(&e) {
                return Err(Error::StoreInvariant(format!(
                    "target entity #{e} both aligned and dangling"
                )));
            }
            if !dt.insert(e) {
                return Err(Error::StoreInvariant(format!(
                    "duplicate dangling target #{e}"
                )));
            }
        }
        Ok(AlignmentStore {
            pairs,
            dangling_source,
            dangling_target,
        })
    }

    pub fn pairs(&self) -> &[(EntityId, EntityId, Option<Split>)] {
        &self.pairs
    }

    pub fn dangling_source(&self) -> &[(EntityId, Option<Split>)] {
        &self.dangling_source
    }

    pub fn dangling_target(&self) -> &[(EntityId, Option<Split>)] {
        &self.dangling_target
    }

    pub fn pairs_in(&self, split: Split) -> Vec<(EntityId, EntityId)> {
        self.pairs
            .iter()
            .filter(|(_, _, s)| *s == Some(split))
            .map(|&(a, b, _)| (a, b))
            .collect()
    }

    pub fn dangling_source_in(&self, split: Split) -> Vec<EntityId> {
        self.dangling_source
            .iter()
            .filter(|(_, s)| *s == Some(split))
            .map(|&(e, _)| e)
            .collect()
    }

    pub fn dangling_target_in(&self, split: Split) -> Vec<EntityId> {
        self.dangling_target
            .iter()
            .filter(|(_, s)| *s == Some(split))
            .map(|&(e, _)| e)
            .collect()
    }

    pub fn is_split(&self) -> bool {
        self.pairs.iter().any(|(_, _, s)| s.is_some())
            || self.dangling_source.iter().any(|(_, s)| s.is_some())
            || self.dangling_target.iter().any(|(_, s)| s.is_some())
    }
}

/// How [`parse_links`] treats names missing from a vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkMode {
    /// Unknown names are an error.
    Strict,
    /// Unknown names are skipped and counted.
    Lenient,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LinkStats {
    pub skipped_unknown: usize,
    pub deduplicated: usize,
}

/// Parses a link file (`<source>\t<target>` per line) against two vocabularies.
///
/// Exact duplicate pairs are dropped and counted; a source or target name that
/// re-appears in a *different* pair violates the one-to-one rule and is an
/// error in either mode.
pub fn parse_links(
    path: impl AsRef<Path>,
    kg1: &KnowledgeGraph,
    kg2: &KnowledgeGraph,
    mode: LinkMode,
) -> Result<(Vec<(EntityId, EntityId)>, LinkStats)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_links_str(&text, &path.display().to_string(), kg1, kg2, mode)
}

pub fn parse_links_str(
    text: &str,
    source: &str,
    kg1: &KnowledgeGraph,
    kg2: &KnowledgeGraph,
    mode: LinkMode,
) -> Result<(Vec<(EntityId, EntityId)>, LinkStats)> {
    let mut pairs = Vec::new();
    let mut stats = LinkStats::default();
    let mut seen_pairs = HashSet::new();
    let mut seen_sources = HashSet::new();
    let mut seen_targets = HashSet::new();

    for (lineno, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 2 || fields.iter().any(|f| f.is_empty()) {
            return Err(Error::Parse {
                path: source.into(),
                line: lineno + 1,
                msg: format!("expected 2 tab-separated fields, found {}", fields.len()),
            });
        }
        let (s, t) = (
            kg1.entity_id(fields[0]),
            kg2.entity_id(fields[1]),
        );
        let (s, t) = match (s, t, mode) {
            (Some(s), Some(t), _) => (s, t),
            (None, _, LinkMode::Strict) => {
                return Err(Error::UnknownEntity {
                    name: fields[0].into(),
                })
            }
            (_, None, LinkMode::Strict) => {
                return Err(Error::UnknownEntity {
                    name: fields[1].into(),
                })
            }
            _ => {
                stats.skipped_unknown += 1;
                continue;
            }
        };
        if !seen_pairs.insert((s, t)) {
            stats.deduplicated += 1;
            continue;
        }
        if !seen_sources.insert(s) {
            return Err(Error::DuplicateLink {
                name: fields[0].into(),
            });
        }
        if !seen_targets.insert(t) {
            return Err(Error::DuplicateLink {
                name: fields[1].into(),
            });
        }
        pairs.push((s, t));
    }
    Ok((pairs, stats))
}

/// Parses a dangling-label file: one entity name per line.
pub fn parse_entity_list(
    path: impl AsRef<Path>,
    kg: &KnowledgeGraph,
    mode: LinkMode,
) -> Result<(Vec<EntityId>, usize)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_entity_list_str(&text, kg, mode)
}

pub fn parse_entity_list_str(
    text: &str,
    kg: &KnowledgeGraph,
    mode: LinkMode,
) -> Result<(Vec<EntityId>, usize)> {
    let mut ids = Vec::new();
    let mut skipped = 0;
    for line in text.lines() {
        if line.is_empty() {
            continue;
        }
        match (kg.entity_id(line), mode) {
            (Some(id), _) => ids.push(id),
            (None, LinkMode::Strict) => {
                return Err(Error::UnknownEntity { name: line.into() })
            }
            (None, LinkMode::Lenient) => skipped += 1,
        }
    }
    Ok((ids, skipped))
}

pub fn write_links<W: Write>(
    kg1: &KnowledgeGraph,
    kg2: &KnowledgeGraph,
    pairs: &[(EntityId, EntityId)],
    mut w: W,
) -> std::io::Result<()> {
    for &(s, t) in pairs {
        writeln!(w, "{}\t{}", kg1.entity_name(s), kg2.entity_name(t))?;
    }
    Ok(())
}

pub fn write_entity_list<W: Write>(
    kg: &KnowledgeGraph,
    entities: &[EntityId],
    mut w: W,
) -> std::io::Result<()> {
    for &e in entities {
        writeln!(w, "{}", kg.entity_name(e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn kg(text: &str) -> KnowledgeGraph {
        KnowledgeGraph::parse_triples_str(text, "test").unwrap()
    }

    #[test]
    fn parse_assigns_first_appearance_indices() {
        let g = kg("a\tr\tb\nb\tr\tc\n");
        assert_eq!(g.num_entities(), 3);
        assert_eq!(g.num_relations(), 1);
        assert_eq!(g.triples().len(), 2);
        assert_eq!(g.entity_id("a"), Some(0));
        assert_eq!(g.entity_id("b"), Some(1));
        assert_eq!(g.entity_id("c"), Some(2));
    }

    #[test]
    fn parse_dedups_repeated_lines() {
        let g = kg("a\tr\tb\na\tr\tb\n");
        assert_eq!(g.triples().len(), 1);
    }

    #[test]
    fn parse_rejects_two_field_line() {
        let err = KnowledgeGraph::parse_triples_str("a\tr\tb\na\tb\n", "f.tsv").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn parse_rejects_empty_file() {
        assert!(matches!(
            KnowledgeGraph::parse_triples_str("", "f.tsv"),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn neighbors_both_directions() {
        let g = kg("a\tr\tb\nc\tr\ta\n");
        let a = g.entity_id("a").unwrap();
        let n = g.neighbors(a).unwrap();
        let names: Vec<&str> = n.iter().map(|&e| g.entity_name(e)).collect();
        assert_eq!(names, vec!["b", "c"]);
    }

    #[test]
    fn neighbors_self_loop_only() {
        let g = kg("a\tr\ta\n");
        let a = g.entity_id("a").unwrap();
        assert_eq!(g.neighbors(a).unwrap(), BTreeSet::from([a]));
        assert_eq!(g.degree(a), 1);
    }

    #[test]
    fn neighbors_unknown_entity_errors() {
        let g = kg("a\tr\tb\n");
        assert!(g.neighbors(99).is_err());
    }

    #[test]
    fn adjacency_count_identity() {
        let g = kg("a\tr\tb\nb\tr\tc\nc\tr\tc\n");
        let entries: usize = (0..g.num_entities()).map(|e| g.degree(e)).sum();
        let self_loops = g.triples().iter().filter(|t| t.head == t.tail).count();
        assert_eq!(entries, 2 * g.triples().len() - self_loops);
    }

    #[test]
    fn links_parse_and_one_to_one() {
        let g1 = kg("a\tr\tb\n");
        let g2 = kg("a'\tr\tb'\n");
        let (pairs, stats) =
            parse_links_str("a\ta'\n", "l", &g1, &g2, LinkMode::Strict).unwrap();
        assert_eq!(pairs, vec![(0, 0)]);
        assert_eq!(stats, LinkStats::default());

        let err = parse_links_str("a\ta'\na\tb'\n", "l", &g1, &g2, LinkMode::Strict).unwrap_err();
        assert!(matches!(err, Error::DuplicateLink { .. }));
    }

    #[test]
    fn links_lenient_skips_unknown() {
        let g1 = kg("a\tr\tb\nb\tr\tc\n");
        let g2 = kg("a'\tr\tb'\nb'\tr\tc'\n");
        let text = "a\ta'\nzz\tb'\nb\tc'\n";
        let (pairs, stats) = parse_links_str(text, "l", &g1, &g2, LinkMode::Lenient).unwrap();
        assert_eq!(pairs.len(), 2);
        assert_eq!(stats.skipped_unknown, 1);
        assert!(parse_links_str(text, "l", &g1, &g2, LinkMode::Strict).is_err());
    }

    #[test]
    fn links_exact_duplicate_deduped() {
        let g1 = kg("a\tr\tb\n");
        let g2 = kg("a'\tr\tb'\n");
        let (pairs, stats) =
            parse_links_str("a\ta'\na\ta'\n", "l", &g1, &g2, LinkMode::Lenient).unwrap();
        assert_eq!(pairs.len(), 1);
        assert_eq!(stats.deduplicated, 1);
    }

    #[test]
    fn store_rejects_overlap() {
        assert!(AlignmentStore::new(vec![(0, 0, None)], vec![(0, None)], vec![]).is_err());
        assert!(AlignmentStore::new(vec![(0, 0, None), (0, 1, None)], vec![], vec![]).is_err());
        assert!(AlignmentStore::new(vec![(0, 0, None)], vec![(1, None)], vec![(1, None)]).is_ok());
    }

    proptest! {
        // Serializing a graph and re-parsing yields identical vocabularies,
        // triples and adjacency.
        #[test]
        fn round_trip(raw in proptest::collection::vec((0u8..12, 0u8..3, 0u8..12), 1..60)) {
            let named: Vec<(String, String, String)> = raw
                .iter()
                .map(|&(h, r, t)| (format!("e{h}"), format!("r{r}"), format!("e{t}")))
                .collect();
            let g = KnowledgeGraph::from_named_triples(named).unwrap();
            let mut buf = Vec::new();
            g.write_triples(&mut buf).unwrap();
            let text = String::from_utf8(buf).unwrap();
            let g2 = KnowledgeGraph::parse_triples_str(&text, "rt").unwrap();
            prop_assert_eq!(g, g2);
        }
    }
}
