//! On-disk dataset layout produced by `forge` and consumed by `train`/`eval`:
//! two triple files, per-split link files, and per-split dangling label files.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forge::InjectReport;
use crate::kg::{
    parse_entity_list, parse_links, write_entity_list, write_links, AlignmentStore,
    KnowledgeGraph, LinkMode, Split,
};

pub const TRIPLES_1: &str = "triples_1.tsv";
pub const TRIPLES_2: &str = "triples_2.tsv";

pub fn pairs_file(split: Split) -> String {
    format!("pairs_{}.tsv", split.name())
}

pub fn dangling_source_file(split: Split) -> String {
    format!("dangling_source_{}.txt", split.name())
}

pub fn dangling_target_file(split: Split) -> String {
    format!("dangling_target_{}.txt", split.name())
}

/// A fully split dataset: both graphs plus alignment and dangling labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub kg1: KnowledgeGraph,
    pub kg2: KnowledgeGraph,
    pub store: AlignmentStore,
}

impl Dataset {
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let kg1 = KnowledgeGraph::parse_triples(dir.join(TRIPLES_1))?;
        let kg2 = KnowledgeGraph::parse_triples(dir.join(TRIPLES_2))?;

        let mut pairs = Vec::new();
        let mut dangling_source = Vec::new();
        let mut dangling_target = Vec::new();
        for split in Split::ALL {
            let (p, _) = parse_links(dir.join(pairs_file(split)), &kg1, &kg2, LinkMode::Strict)?;
            pairs.extend(p.into_iter().map(|(s, t)| (s, t, Some(split))));
            let (ds, _) =
                parse_entity_list(dir.join(dangling_source_file(split)), &kg1, LinkMode::Strict)?;
            dangling_source.extend(ds.into_iter().map(|e| (e, Some(split))));
            let (dt, _) =
                parse_entity_list(dir.join(dangling_target_file(split)), &kg2, LinkMode::Strict)?;
            dangling_target.extend(dt.into_iter().map(|e| (e, Some(split))));
        }
        let store = AlignmentStore::new(pairs, dangling_source, dangling_target)?;
        Ok(Dataset { kg1, kg2, store })
    }

    /// Writes the full layout; the store must carry split tags.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, f: &dyn Fn(&mut Vec<u8>) -> std::io::Result<()>| -> Result<()> {
            let mut buf = Vec::new();
            f(&mut buf).map_err(|e| Error::io(dir.join(name), e))?;
            fs::write(dir.join(name), buf).map_err(|e| Error::io(dir.join(name), e))
        };
        write(TRIPLES_1, &|w| self.kg1.write_triples(w))?;
        write(TRIPLES_2, &|w| self.kg2.write_triples(w))?;
        for split in Split::ALL {
            let pairs = self.store.pairs_in(split);
            write(&pairs_file(split), &|w| {
                write_links(&self.kg1, &self.kg2, &pairs, w)
            })?;
            let ds = self.store.dangling_source_in(split);
            write(&dangling_source_file(split), &|w| {
                write_entity_list(&self.kg1, &ds, w)
            })?;
            let dt = self.store.dangling_target_in(split);
            write(&dangling_target_file(split), &|w| {
                write_entity_list(&self.kg2, &dt, w)
            })?;
        }
        Ok(())
    }

    pub fn stats(&self) -> DatasetStats {
        DatasetStats {
            kg1: KgStats {
                entities: self.kg1.num_entities(),
                relations: self.kg1.num_relations(),
                triples: self.kg1.triples().len(),
            },
            kg2: KgStats {
                entities: self.kg2.num_entities(),
                relations: self.kg2.num_relations(),
                triples: self.kg2.triples().len(),
            },
            alignment: self.store.pairs().len(),
            dangling_source: self.store.dangling_source().len(),
            dangling_target: self.store.dangling_target().len(),
            splits: Split::ALL
                .iter()
                .map(|&s| {
                    (
                        s.name().to_string(),
                        SplitStats {
                            pairs: self.store.pairs_in(s).len(),
                            dangling_source: self.store.dangling_source_in(s).len(),
                            dangling_target: self.store.dangling_target_in(s).len(),
                        },
                    )
                })
                .collect(),
        }
    }
}

/// Entity/relation/triple/alignment counts, written as `stats.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub kg1: KgStats,
    pub kg2: KgStats,
    pub alignment: usize,
    pub dangling_source: usize,
    pub dangling_target: usize,
    pub splits: std::collections::BTreeMap<String, SplitStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KgStats {
    pub entities: usize,
    pub relations: usize,
    pub triples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitStats {
    pub pairs: usize,
    pub dangling_source: usize,
    pub dangling_target: usize,
}

/// Stats plus the inject report, for `stats.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForgeStats {
    #[serde(flatten)]
    pub dataset: DatasetStats,
    pub inject: InjectReport,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forge::{inject_dangling, split_dataset, ForgeConfig};

    #[test]
    fn save_load_round_trip() {
        let (kg1, kg2, links) = crate::synthetic::generate_pair(
            &crate::synthetic::SyntheticConfig {
                entities: 30,
                relations: 3,
                triples: 60,
                seed: 5,
            },
        );
        let cfg = ForgeConfig {
            removal_fraction_source: 0.2,
            removal_fraction_target: 0.2,
            rng_seed: 5,
            ..Default::default()
        };
        let out = inject_dangling(&kg1, &kg2, &links, &cfg).unwrap();
        let store = split_dataset(&out.store, &cfg).unwrap();
        let ds = Dataset {
            kg1: out.kg1,
            kg2: out.kg2,
            store,
        };
        let dir = tempfile::tempdir().unwrap();
        ds.save(dir.path()).unwrap();
        let loaded = Dataset::load(dir.path()).unwrap();
        assert_eq!(ds, loaded);
        let stats = loaded.stats();
        assert_eq!(stats.alignment, loaded.store.pairs().len());
    }
}
