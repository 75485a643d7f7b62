//! Multi-task training loop: alternating alignment and dangling-detection
//! batches, periodic NN-cache refresh, validation-driven early stopping with
//! best-checkpoint retention, and per-loss-family wall-time instrumentation.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::align::{
    agg_align_loss, agg_encode, encode_backward, encode_trace, mtranse_align_loss,
    mtranse_triple_loss, truncated_negatives, AggAlignConfig, AggEncoder, KgSide, MTransEConfig,
    NegativePool, Norm, PairWithNegatives, TripleWithNegatives,
};
use crate::config::KvConfig;
use crate::dataset::Dataset;
use crate::detect::{
    br_loss, br_terms, detect, mr_loss, mr_term, nnc_loss, nnc_loss_features, label_weights,
    BrConfig, DanglingVerdict, DetectorInference, DetectorKind, LabeledEntity, MrConfig,
    NncParams,
};
use crate::embed::{
    normalize_rows, seeded_rng, AdamConfig, AdamState, EmbeddingSpace, LossOutput, Param,
    ParamTable,
};
use crate::error::{Error, Result};
use crate::eval::{consolidated_eval, relaxed_eval, ConsolidatedCase};
use crate::kg::{EntityId, KnowledgeGraph, Split, Triple};
use crate::matrix::{add_scaled, sub, Matrix};
use crate::nn::NnCache;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlignerKind {
    MTransE,
    AggAlign,
}

impl std::str::FromStr for AlignerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mtranse" => Ok(AlignerKind::MTransE),
            "aggalign" => Ok(AlignerKind::AggAlign),
            other => Err(Error::InvalidConfig(format!("unknown aligner {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectorChoice {
    None,
    Nnc,
    Mr,
    Br,
}

impl std::str::FromStr for DetectorChoice {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(DetectorChoice::None),
            other => Ok(match other.parse::<DetectorKind>()? {
                DetectorKind::Nnc => DetectorChoice::Nnc,
                DetectorKind::Mr => DetectorChoice::Mr,
                DetectorKind::Br => DetectorChoice::Br,
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub aligner: AlignerKind,
    pub detector: DetectorChoice,
    pub dim: usize,
    /// Defaults per aligner when unset: 0.001 (mtranse), 0.0005 (aggalign).
    pub learning_rate: Option<f64>,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Consecutive non-improving validations tolerated before stopping.
    pub patience: usize,
    /// Validation cadence in epochs.
    pub eval_every: usize,
    pub cache_period: u64,
    pub seed: u64,
    pub triple_margin: f64,
    pub align_weight: f64,
    pub norm: Norm,
    /// L2-normalize the seed-pair entity rows after each alignment batch.
    pub normalize: bool,
    /// λ1 of the aggregation aligner's ranking loss.
    pub agg_margin: f64,
    pub neg_count: usize,
    pub trunc_epsilon: f64,
    /// Defaults per aligner when unset: 0.9 (mtranse), 0.2 (aggalign).
    pub mr_lambda: Option<f64>,
    pub br_samples: usize,
    pub br_alpha: f64,
    /// Defaults to the embedding dimension when unset.
    pub nnc_hidden: Option<usize>,
    pub k_csls: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            aligner: AlignerKind::MTransE,
            detector: DetectorChoice::None,
            dim: 64,
            learning_rate: None,
            batch_size: 1024,
            max_epochs: 400,
            patience: 5,
            eval_every: 5,
            cache_period: 10,
            seed: 42,
            triple_margin: 1.0,
            align_weight: 1.0,
            norm: Norm::L2,
            normalize: true,
            agg_margin: 1.4,
            neg_count: 10,
            trunc_epsilon: 0.9,
            mr_lambda: None,
            br_samples: 20,
            br_alpha: 0.01,
            nnc_hidden: None,
            k_csls: 10,
        }
    }
}

impl TrainConfig {
    /// Hyperparameters of the published full-scale runs; pair with the full
    /// corpus and long training to chase the reference numbers.
    pub fn paper_scale() -> Self {
        TrainConfig {
            dim: 128,
            learning_rate: Some(0.001),
            batch_size: 20480,
            mr_lambda: Some(0.9),
            br_samples: 20,
            br_alpha: 0.01,
            trunc_epsilon: 0.9,
            agg_margin: 1.4,
            cache_period: 10,
            ..Default::default()
        }
    }

    pub fn resolved_lr(&self) -> f64 {
        self.learning_rate.unwrap_or(match self.aligner {
            AlignerKind::MTransE => 0.001,
            AlignerKind::AggAlign => 0.0005,
        })
    }

    pub fn resolved_mr_lambda(&self) -> f64 {
        self.mr_lambda.unwrap_or(match self.aligner {
            AlignerKind::MTransE => 0.9,
            AlignerKind::AggAlign => 0.2,
        })
    }

    pub fn resolved_nnc_hidden(&self) -> usize {
        self.nnc_hidden.unwrap_or(self.dim)
    }

    /// Overlays file values; unknown keys are an error so typos surface.
    pub fn apply_kv(&mut self, kv: &KvConfig) -> Result<()> {
        for key in kv.keys() {
            if !KV_KEYS.contains(&key) {
                return Err(Error::InvalidConfig(format!("unknown config key {key:?}")));
            }
        }
        if let Some(v) = kv.get("aligner") {
            self.aligner = v.parse()?;
        }
        if let Some(v) = kv.get("detector") {
            self.detector = v.parse()?;
        }
        if let Some(v) = kv.get("norm") {
            self.norm = v.parse()?;
        }
        macro_rules! set {
            ($field:ident, $key:literal, $ty:ty) => {
                if let Some(v) = kv.get_parsed::<$ty>($key)? {
                    self.$field = v;
                }
            };
        }
        macro_rules! set_opt {
            ($field:ident, $key:literal, $ty:ty) => {
                if let Some(v) = kv.get_parsed::<$ty>($key)? {
                    self.$field = Some(v);
                }
            };
        }
        set!(dim, "dim", usize);
        set_opt!(learning_rate, "learning_rate", f64);
        set!(batch_size, "batch_size", usize);
        set!(max_epochs, "max_epochs", usize);
        set!(patience, "patience", usize);
        set!(eval_every, "eval_every", usize);
        set!(cache_period, "cache_period", u64);
        set!(seed, "seed", u64);
        set!(triple_margin, "triple_margin", f64);
        set!(align_weight, "align_weight", f64);
        set!(normalize, "normalize", bool);
        set!(agg_margin, "agg_margin", f64);
        set!(neg_count, "neg_count", usize);
        set!(trunc_epsilon, "trunc_epsilon", f64);
        set_opt!(mr_lambda, "mr_lambda", f64);
        set!(br_samples, "br_samples", usize);
        set!(br_alpha, "br_alpha", f64);
        set_opt!(nnc_hidden, "nnc_hidden", usize);
        set!(k_csls, "k_csls", usize);
        Ok(())
    }

    /// Hard validation plus soft warnings for values outside the explored
    /// hyperparameter ranges.
    pub fn validate(&self) -> Result<Vec<String>> {
        for (name, v) in [
            ("dim", self.dim),
            ("batch_size", self.batch_size),
            ("max_epochs", self.max_epochs),
            ("patience", self.patience),
            ("eval_every", self.eval_every),
            ("neg_count", self.neg_count),
            ("br_samples", self.br_samples),
            ("k_csls", self.k_csls),
        ] {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be >= 1")));
            }
        }
        if self.cache_period == 0 {
            return Err(Error::InvalidConfig("cache_period must be >= 1".into()));
        }
        let lr = self.resolved_lr();
        if lr <= 0.0 {
            return Err(Error::InvalidConfig("learning_rate must be > 0".into()));
        }
        if !(0.0 < self.trunc_epsilon && self.trunc_epsilon <= 1.0) {
            return Err(Error::InvalidConfig(
                "trunc_epsilon must be in (0, 1]".into(),
            ));
        }
        MTransEConfig {
            triple_margin: self.triple_margin,
            norm: self.norm,
            align_weight: self.align_weight,
        }
        .validate()?;
        AggAlignConfig {
            margin: self.agg_margin,
        }
        .validate()?;
        MrConfig {
            lambda: self.resolved_mr_lambda(),
        }
        .validate()?;
        BrConfig {
            samples: self.br_samples,
            alpha: self.br_alpha,
        }
        .validate()?;
        if self.resolved_nnc_hidden() == 0 {
            return Err(Error::InvalidConfig("nnc_hidden must be >= 1".into()));
        }

        let mut warnings = Vec::new();
        let mut warn_range = |name: &str, v: f64, lo: f64, hi: f64| {
            if v < lo || v > hi {
                warnings.push(format!(
                    "{name} = {v} outside the explored range [{lo}, {hi}]"
                ));
            }
        };
        warn_range("learning_rate", lr, 0.0001, 0.001);
        warn_range("dim", self.dim as f64, 64.0, 512.0);
        warn_range("batch_size", self.batch_size as f64, 4096.0, 102400.0);
        warn_range("br_samples", self.br_samples as f64, 1.0, 50.0);
        warn_range("mr_lambda", self.resolved_mr_lambda(), 0.1, 1.0);
        Ok(warnings)
    }
}

const KV_KEYS: &[&str] = &[
    "aligner",
    "detector",
    "dim",
    "learning_rate",
    "batch_size",
    "max_epochs",
    "patience",
    "eval_every",
    "cache_period",
    "seed",
    "triple_margin",
    "align_weight",
    "norm",
    "normalize",
    "agg_margin",
    "neg_count",
    "trunc_epsilon",
    "mr_lambda",
    "br_samples",
    "br_alpha",
    "nnc_hidden",
    "k_csls",
];

/// All trainable state: the embedding space plus the aligner- and
/// detector-specific parameter blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub aligner: AlignerKind,
    pub space: EmbeddingSpace,
    pub encoder: Option<AggEncoder>,
    pub nnc: Option<NncParams>,
}

impl ModelState {
    pub fn init(cfg: &TrainConfig, dataset: &Dataset) -> Result<Self> {
        let space = EmbeddingSpace::init(
            cfg.dim,
            dataset.kg1.num_entities(),
            dataset.kg1.num_relations(),
            dataset.kg2.num_entities(),
            dataset.kg2.num_relations(),
            cfg.seed,
        )?;
        let encoder = match cfg.aligner {
            AlignerKind::AggAlign => Some(AggEncoder::init(cfg.dim, cfg.seed)?),
            AlignerKind::MTransE => None,
        };
        let nnc = match cfg.detector {
            DetectorChoice::Nnc => Some(NncParams::init(
                cfg.dim,
                cfg.resolved_nnc_hidden(),
                cfg.seed,
            )?),
            _ => None,
        };
        Ok(ModelState {
            aligner: cfg.aligner,
            space,
            encoder,
            nnc,
        })
    }

    fn encoder(&self) -> &AggEncoder {
        self.encoder.as_ref().expect("aggalign model has an encoder")
    }

    /// Source-entity representations in the target space: `M·x` for MTransE,
    /// encoder output for AggAlign.
    pub fn source_repr_rows(&self, kg1: &KnowledgeGraph, entities: &[EntityId]) -> Matrix {
        let mut out = Matrix::zeros(entities.len(), self.space.dim());
        for (i, &e) in entities.iter().enumerate() {
            let repr = match self.aligner {
                AlignerKind::MTransE => self.space.transform.matvec(self.space.ent1.row(e)),
                AlignerKind::AggAlign => agg_encode(kg1, &self.space.ent1, self.encoder(), e),
            };
            out.row_mut(i).copy_from_slice(&repr);
        }
        out
    }

    /// The target-side table NN search runs against.
    pub fn target_repr_table(&self, kg2: &KnowledgeGraph) -> Matrix {
        match self.aligner {
            AlignerKind::MTransE => self.space.ent2.clone(),
            AlignerKind::AggAlign => {
                crate::align::encode_all(kg2, &self.space.ent2, self.encoder())
            }
        }
    }

    /// Transform passed to detection: MTransE applies it on the raw source
    /// rows; AggAlign representations are already in the shared space.
    pub fn detect_inputs<'a>(
        &'a self,
        kg1: &KnowledgeGraph,
        kg2: &KnowledgeGraph,
        entities: &[EntityId],
    ) -> (Matrix, Option<&'a Matrix>, Matrix) {
        match self.aligner {
            AlignerKind::MTransE => (
                self.space.ent1.clone(),
                Some(&self.space.transform),
                self.space.ent2.clone(),
            ),
            AlignerKind::AggAlign => (
                {
                    // Build a full-height table with encoded rows for the
                    // entities in play; untouched rows stay zero.
                    let mut t = Matrix::zeros(kg1.num_entities(), self.space.dim());
                    for &e in entities {
                        let z = agg_encode(kg1, &self.space.ent1, self.encoder(), e);
                        t.row_mut(e).copy_from_slice(&z);
                    }
                    t
                },
                None,
                crate::align::encode_all(kg2, &self.space.ent2, self.encoder()),
            ),
        }
    }
}

impl ParamTable for ModelState {
    fn param_mut(&mut self, param: Param) -> Option<&mut [f64]> {
        match param {
            Param::AggSelf | Param::AggNbr => {
                self.encoder.as_mut().and_then(|e| e.param_mut(param))
            }
            Param::NncW1 | Param::NncB1 | Param::NncW2 | Param::NncB2 => {
                self.nnc.as_mut().and_then(|n| n.param_mut(param))
            }
            other => self.space.param_mut(other),
        }
    }
}

/// Versioned training artifact: the best model with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config: TrainConfig,
    pub epoch: usize,
    pub val_metric: Option<f64>,
    pub model: ModelState,
}

impl Checkpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = self.to_json()?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        let mut buf = serde_json::to_vec(self)?;
        buf.push(b'\n');
        Ok(buf)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_slice(&bytes)?;
        if ckpt.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Invalid(format!(
                "checkpoint format version {} unsupported (expected {})",
                ckpt.format_version, CHECKPOINT_FORMAT_VERSION
            )));
        }
        Ok(ckpt)
    }
}

/// One line of the JSON-lines training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss_align: f64,
    pub loss_dangling: Option<f64>,
    pub epoch_seconds_align: f64,
    pub epoch_seconds_dangling: Option<f64>,
    pub val_metric: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    EarlyStopped { at_epoch: usize },
    Diverged { at_epoch: usize, detail: String },
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochRecord>,
    pub stop: StopReason,
    pub warnings: Vec<String>,
}

impl TrainOutcome {
    pub fn write_log_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for rec in &self.log {
            serde_json::to_writer(&mut w, rec)?;
            w.write_all(b"\n").map_err(|e| Error::io("<log>", e))?;
        }
        Ok(())
    }
}

/// Validation-driven early stopping: strictly better scores reset the strike
/// count, anything else adds one; `patience` strikes stop the run.
struct EarlyStopper {
    patience: usize,
    best: Option<f64>,
    strikes: usize,
}

enum StopAction {
    NewBest,
    Continue,
    Stop,
}

impl EarlyStopper {
    fn new(patience: usize) -> Self {
        EarlyStopper {
            patience,
            best: None,
            strikes: 0,
        }
    }

    fn observe(&mut self, score: f64) -> StopAction {
        match self.best {
            Some(best) if score <= best => {
                self.strikes += 1;
                if self.strikes >= self.patience {
                    StopAction::Stop
                } else {
                    StopAction::Continue
                }
            }
            _ => {
                self.best = Some(score);
                self.strikes = 0;
                StopAction::NewBest
            }
        }
    }
}

/// Endlessly cycling shuffled stream over a finite item set.
struct Stream<T: Copy> {
    items: Vec<T>,
    pos: usize,
}

impl<T: Copy> Stream<T> {
    fn new(mut items: Vec<T>, rng: &mut ChaCha8Rng) -> Self {
        use rand::seq::SliceRandom;
        items.shuffle(rng);
        Stream { items, pos: 0 }
    }

    fn len(&self) -> usize {
        self.items.len()
    }

    fn next_chunk(&mut self, n: usize, rng: &mut ChaCha8Rng) -> Vec<T> {
        use rand::seq::SliceRandom;
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            if self.pos == self.items.len() {
                self.items.shuffle(rng);
                self.pos = 0;
            }
            out.push(self.items[self.pos]);
            self.pos += 1;
        }
        out
    }
}

fn div_ceil(a: usize, b: usize) -> usize {
    a.div_ceil(b)
}

/// Trains a model on the dataset's train split, validating on the valid
/// split. Returns the best checkpoint seen, the epoch log, and why training
/// stopped. Non-finite losses abort with the last good checkpoint.
pub fn train(dataset: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let warnings = cfg.validate()?;

    let train_pairs = dataset.store.pairs_in(Split::Train);
    let valid_pairs = dataset.store.pairs_in(Split::Valid);
    let dangling_train = dataset.store.dangling_source_in(Split::Train);
    let valid_dangling = dataset.store.dangling_source_in(Split::Valid);
    if train_pairs.is_empty() {
        return Err(Error::EmptyInput("train alignment pairs".into()));
    }
    if valid_pairs.is_empty() {
        return Err(Error::EmptyInput("validation alignment pairs".into()));
    }
    if cfg.detector != DetectorChoice::None && dangling_train.is_empty() {
        return Err(Error::EmptyInput(
            "dangling training labels (required by the detector)".into(),
        ));
    }

    let mut model = ModelState::init(cfg, dataset)?;
    let mut adam = AdamState::new(AdamConfig::with_lr(cfg.resolved_lr()));
    let mut rng = seeded_rng(cfg.seed, "train");
    let mut cache = NnCache::new(cfg.cache_period);

    let mtranse_cfg = MTransEConfig {
        triple_margin: cfg.triple_margin,
        norm: cfg.norm,
        align_weight: cfg.align_weight,
    };
    let agg_cfg = AggAlignConfig {
        margin: cfg.agg_margin,
    };
    let mr_cfg = MrConfig {
        lambda: cfg.resolved_mr_lambda(),
    };
    let br_cfg = BrConfig {
        samples: cfg.br_samples,
        alpha: cfg.br_alpha,
    };
    let nnc_weights = if cfg.detector == DetectorChoice::Nnc {
        Some(label_weights(train_pairs.len(), dangling_train.len())?)
    } else {
        None
    };

    // Entities whose transformed NN the detector losses consume.
    let matchable_train_sources: Vec<usize> = train_pairs.iter().map(|&(s, _)| s).collect();
    let mut cache_queries: Vec<usize> = dangling_train.clone();
    cache_queries.extend(&matchable_train_sources);
    cache_queries.sort_unstable();
    cache_queries.dedup();

    let mut triples1 = Stream::new(dataset.kg1.triples().to_vec(), &mut rng);
    let mut triples2 = Stream::new(dataset.kg2.triples().to_vec(), &mut rng);
    let mut pair_stream = Stream::new(train_pairs.clone(), &mut rng);
    let mut dangling_stream = Stream::new(dangling_train.clone(), &mut rng);
    let mut labeled_stream = {
        let mut labeled: Vec<LabeledEntity> = dangling_train
            .iter()
            .map(|&e| LabeledEntity {
                entity: e,
                dangling: true,
            })
            .collect();
        labeled.extend(matchable_train_sources.iter().map(|&e| LabeledEntity {
            entity: e,
            dangling: false,
        }));
        Stream::new(labeled, &mut rng)
    };

    let n_steps = match cfg.aligner {
        AlignerKind::MTransE => div_ceil(
            triples1.len().max(triples2.len()),
            cfg.batch_size,
        ),
        AlignerKind::AggAlign => div_ceil(pair_stream.len(), cfg.batch_size),
    }
    .max(1);
    let chunk_t1 = div_ceil(triples1.len(), n_steps);
    let chunk_t2 = div_ceil(triples2.len(), n_steps);
    let chunk_pairs = div_ceil(pair_stream.len(), n_steps);
    let chunk_dangling = div_ceil(dangling_stream.len().max(1), n_steps).max(1);
    let chunk_labeled = div_ceil(labeled_stream.len().max(1), n_steps).max(1);

    let mut pools: Option<(NegativePool, NegativePool)> = None;
    let mut stopper = EarlyStopper::new(cfg.patience);
    let mut best: Option<Checkpoint> = None;
    let mut log: Vec<EpochRecord> = Vec::new();
    let mut stop = StopReason::MaxEpochs;

    let uses_cache = matches!(cfg.detector, DetectorChoice::Nnc | DetectorChoice::Mr);

    'epochs: for epoch in 1..=cfg.max_epochs {
        let mut loss_align = 0.0;
        let mut loss_dangling = 0.0;
        let mut secs_align = 0.0;
        let mut secs_dangling = 0.0;

        // Alignment-side negative pools, refreshed on the cache schedule.
        let t0 = Instant::now();
        if pools.is_none() || epoch as u64 % cfg.cache_period == 0 {
            pools = Some(match cfg.aligner {
                AlignerKind::MTransE => (
                    NegativePool::build(&model.space.ent1, cfg.trunc_epsilon, None)?,
                    NegativePool::build(&model.space.ent2, cfg.trunc_epsilon, None)?,
                ),
                AlignerKind::AggAlign => {
                    let enc2 = crate::align::encode_all(
                        &dataset.kg2,
                        &model.space.ent2,
                        model.encoder(),
                    );
                    // Source-side pool unused by aggalign; keep the pair shape.
                    let p = NegativePool::build(&enc2, cfg.trunc_epsilon, None)?;
                    (p.clone(), p)
                }
            });
        }
        secs_align += t0.elapsed().as_secs_f64();

        // Transformed-NN cache, only for the detectors that consume it.
        if uses_cache {
            let t0 = Instant::now();
            if cache.is_empty() || epoch as u64 % cfg.cache_period == 0 {
                let reprs = model.source_repr_rows(&dataset.kg1, &cache_queries);
                let queries: Vec<(usize, Vec<f64>)> = cache_queries
                    .iter()
                    .enumerate()
                    .map(|(i, &e)| (e, reprs.row(i).to_vec()))
                    .collect();
                let targets = model.target_repr_table(&dataset.kg2);
                cache.refresh(epoch as u64, &queries, &targets)?;
            }
            secs_dangling += t0.elapsed().as_secs_f64();
        }

        for _ in 0..n_steps {
            // ---- alignment batch ----
            let t0 = Instant::now();
            let align_out = match cfg.aligner {
                AlignerKind::MTransE => {
                    let (pool1, pool2) = pools.as_ref().expect("pools built");
                    let b1 = corrupt_triples(
                        &triples1.next_chunk(chunk_t1, &mut rng),
                        pool1,
                        cfg.neg_count,
                        &mut rng,
                    );
                    let b2 = corrupt_triples(
                        &triples2.next_chunk(chunk_t2, &mut rng),
                        pool2,
                        cfg.neg_count,
                        &mut rng,
                    );
                    let pairs = pair_stream.next_chunk(chunk_pairs, &mut rng);
                    let mut out = mtranse_triple_loss(&model.space, KgSide::Source, &b1, &mtranse_cfg)?;
                    let o2 = mtranse_triple_loss(&model.space, KgSide::Target, &b2, &mtranse_cfg)?;
                    let oa = mtranse_align_loss(&model.space, &pairs, cfg.norm, cfg.align_weight)?;
                    out.loss += o2.loss + oa.loss;
                    out.grads.merge(o2.grads);
                    out.grads.merge(oa.grads);
                    (out, pairs)
                }
                AlignerKind::AggAlign => {
                    let (_, pool2) = pools.as_ref().expect("pools built");
                    let pairs = pair_stream.next_chunk(chunk_pairs, &mut rng);
                    let batch: Vec<PairWithNegatives> = pairs
                        .iter()
                        .map(|&(s, t)| PairWithNegatives {
                            source: s,
                            target: t,
                            negative_targets: truncated_negatives(t, pool2, cfg.neg_count, &mut rng),
                        })
                        .collect();
                    let out = agg_align_loss(
                        &dataset.kg1,
                        &dataset.kg2,
                        &model.space,
                        model.encoder(),
                        &batch,
                        &agg_cfg,
                    )?;
                    (out, pairs)
                }
            };
            let (align_loss_out, batch_pairs) = align_out;
            if !align_loss_out.loss.is_finite() {
                stop = StopReason::Diverged {
                    at_epoch: epoch,
                    detail: "non-finite alignment loss".into(),
                };
                break 'epochs;
            }
            loss_align += align_loss_out.loss;
            if let Err(e) = adam.apply(&mut model, &align_loss_out.grads) {
                stop = StopReason::Diverged {
                    at_epoch: epoch,
                    detail: e.to_string(),
                };
                break 'epochs;
            }
            if cfg.normalize {
                normalize_rows(&mut model.space.ent1, batch_pairs.iter().map(|&(s, _)| s));
                normalize_rows(&mut model.space.ent2, batch_pairs.iter().map(|&(_, t)| t));
            }
            secs_align += t0.elapsed().as_secs_f64();

            // ---- dangling batch ----
            if cfg.detector == DetectorChoice::None {
                continue;
            }
            let t0 = Instant::now();
            let dangling_out = match cfg.detector {
                DetectorChoice::None => unreachable!(),
                DetectorChoice::Mr => {
                    let batch = dangling_stream.next_chunk(chunk_dangling, &mut rng);
                    match cfg.aligner {
                        AlignerKind::MTransE => {
                            mr_loss(&model.space, &cache, &model.space.ent2, &batch, &mr_cfg)?
                        }
                        AlignerKind::AggAlign => {
                            agg_mr_loss(dataset, &model, &cache, &batch, &mr_cfg)?
                        }
                    }
                }
                DetectorChoice::Br => {
                    let batch: Vec<(usize, Vec<usize>)> = dangling_stream
                        .next_chunk(chunk_dangling, &mut rng)
                        .into_iter()
                        .map(|e| {
                            let targets = (0..cfg.br_samples)
                                .map(|_| rng.random_range(0..dataset.kg2.num_entities()))
                                .collect();
                            (e, targets)
                        })
                        .collect();
                    match cfg.aligner {
                        AlignerKind::MTransE => {
                            br_loss(&model.space, &model.space.ent2, &batch, &br_cfg)?.0
                        }
                        AlignerKind::AggAlign => agg_br_loss(dataset, &model, &batch, &br_cfg)?,
                    }
                }
                DetectorChoice::Nnc => {
                    let batch = labeled_stream.next_chunk(chunk_labeled, &mut rng);
                    let weights = nnc_weights.as_ref().expect("weights precomputed");
                    let params = model.nnc.as_ref().expect("nnc params initialized");
                    match cfg.aligner {
                        AlignerKind::MTransE => nnc_loss(
                            &model.space.ent1,
                            Some(&model.space.transform),
                            &cache,
                            &model.space.ent2,
                            &batch,
                            params,
                            weights,
                        )?,
                        AlignerKind::AggAlign => {
                            agg_nnc_loss(dataset, &model, &cache, &batch, weights)?
                        }
                    }
                }
            };
            if !dangling_out.loss.is_finite() {
                stop = StopReason::Diverged {
                    at_epoch: epoch,
                    detail: "non-finite dangling loss".into(),
                };
                break 'epochs;
            }
            loss_dangling += dangling_out.loss;
            if let Err(e) = adam.apply(&mut model, &dangling_out.grads) {
                stop = StopReason::Diverged {
                    at_epoch: epoch,
                    detail: e.to_string(),
                };
                break 'epochs;
            }
            secs_dangling += t0.elapsed().as_secs_f64();
        }

        // ---- validation ----
        let mut val_metric = None;
        if epoch % cfg.eval_every == 0 || epoch == cfg.max_epochs {
            let score = validate(dataset, &model, cfg, &valid_pairs, &valid_dangling)?;
            val_metric = Some(score);
            match stopper.observe(score) {
                StopAction::NewBest => {
                    best = Some(Checkpoint {
                        format_version: CHECKPOINT_FORMAT_VERSION,
                        config: cfg.clone(),
                        epoch,
                        val_metric: Some(score),
                        model: model.clone(),
                    });
                }
                StopAction::Continue => {}
                StopAction::Stop => {
                    log.push(EpochRecord {
                        epoch,
                        loss_align,
                        loss_dangling: (cfg.detector != DetectorChoice::None)
                            .then_some(loss_dangling),
                        epoch_seconds_align: secs_align,
                        epoch_seconds_dangling: (cfg.detector != DetectorChoice::None)
                            .then_some(secs_dangling),
                        val_metric,
                    });
                    stop = StopReason::EarlyStopped { at_epoch: epoch };
                    break 'epochs;
                }
            }
        }

        log.push(EpochRecord {
            epoch,
            loss_align,
            loss_dangling: (cfg.detector != DetectorChoice::None).then_some(loss_dangling),
            epoch_seconds_align: secs_align,
            epoch_seconds_dangling: (cfg.detector != DetectorChoice::None).then_some(secs_dangling),
            val_metric,
        });
    }

    let checkpoint = best.unwrap_or_else(|| Checkpoint {
        format_version: CHECKPOINT_FORMAT_VERSION,
        config: cfg.clone(),
        epoch: 0,
        val_metric: None,
        model,
    });
    Ok(TrainOutcome {
        checkpoint,
        log,
        stop,
        warnings,
    })
}

/// Validation score: consolidated F1 when a detector is training, relaxed
/// H@1 otherwise.
fn validate(
    dataset: &Dataset,
    model: &ModelState,
    cfg: &TrainConfig,
    valid_pairs: &[(usize, usize)],
    valid_dangling: &[usize],
) -> Result<f64> {
    if cfg.detector == DetectorChoice::None || valid_dangling.is_empty() {
        let sources: Vec<usize> = valid_pairs.iter().map(|&(s, _)| s).collect();
        let gold: Vec<usize> = valid_pairs.iter().map(|&(_, t)| t).collect();
        let reprs = model.source_repr_rows(&dataset.kg1, &sources);
        let targets = model.target_repr_table(&dataset.kg2);
        return Ok(relaxed_eval(&reprs, &gold, &targets, cfg.k_csls)?.hits1);
    }

    let entities: Vec<usize> = valid_pairs
        .iter()
        .map(|&(s, _)| s)
        .chain(valid_dangling.iter().copied())
        .collect();
    let verdicts = run_detector(dataset, model, cfg, &entities, None)?;
    let cases: Vec<ConsolidatedCase> = valid_pairs
        .iter()
        .map(|&(s, t)| (s, Some(t)))
        .chain(valid_dangling.iter().map(|&e| (e, None)))
        .zip(&verdicts)
        .map(|((entity, gold_target), v)| ConsolidatedCase {
            entity,
            gold_target,
            predicted_dangling: v.is_dangling,
        })
        .collect();
    let sources = model.source_repr_rows(&dataset.kg1, &entities);
    let targets = model.target_repr_table(&dataset.kg2);
    Ok(consolidated_eval(&cases, &sources, &targets, 10, cfg.k_csls, None)?.f1)
}

/// Fresh detection pass with the technique the config trains.
pub fn run_detector(
    dataset: &Dataset,
    model: &ModelState,
    cfg: &TrainConfig,
    entities: &[usize],
    br_training_mean: Option<f64>,
) -> Result<Vec<DanglingVerdict>> {
    let (source_table, m, target_table) =
        model.detect_inputs(&dataset.kg1, &dataset.kg2, entities);
    let inference = match cfg.detector {
        DetectorChoice::None => {
            return Err(Error::InvalidConfig(
                "no detector configured for this model".into(),
            ))
        }
        DetectorChoice::Nnc => {
            DetectorInference::Nnc(model.nnc.as_ref().expect("nnc params present"))
        }
        DetectorChoice::Mr => DetectorInference::Mr {
            lambda: cfg.resolved_mr_lambda(),
        },
        DetectorChoice::Br => DetectorInference::Br {
            training_mean: br_training_mean,
        },
    };
    detect(entities, &source_table, m, &target_table, &inference)
}

fn corrupt_triples(
    chunk: &[Triple],
    pool: &NegativePool,
    neg_count: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<TripleWithNegatives> {
    chunk
        .iter()
        .map(|&positive| {
            let negatives = (0..neg_count)
                .map(|_| {
                    if rng.random_bool(0.5) {
                        let head = truncated_negatives(positive.head, pool, 1, rng)[0];
                        Triple { head, ..positive }
                    } else {
                        let tail = truncated_negatives(positive.tail, pool, 1, rng)[0];
                        Triple { tail, ..positive }
                    }
                })
                .collect();
            TripleWithNegatives {
                positive,
                negatives,
            }
        })
        .collect()
}

/// Marginal-ranking loss through the aggregation encoder: the cached NN's
/// encoding is a constant, gradients flow into the source entity's encoding.
fn agg_mr_loss(
    dataset: &Dataset,
    model: &ModelState,
    cache: &NnCache,
    batch: &[usize],
    cfg: &MrConfig,
) -> Result<LossOutput> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch("agg_mr_loss"));
    }
    let encoder = model.encoder();
    let mut out = LossOutput::new();
    for &e in batch {
        let (nn, _) = cache
            .get(e)
            .ok_or_else(|| Error::Invalid(format!("entity #{e} not in NN cache")))?;
        let trace = encode_trace(&dataset.kg1, &model.space.ent1, encoder, e);
        let x_nn = agg_encode(&dataset.kg2, &model.space.ent2, encoder, nn);
        let diff = sub(&trace.output, &x_nn);
        let (loss, ddiff) = mr_term(&diff, cfg.lambda);
        if loss == 0.0 {
            continue;
        }
        out.loss += loss;
        encode_backward(
            &trace,
            &model.space.ent1,
            encoder,
            &ddiff,
            Param::Ent1,
            &mut out.grads,
        );
    }
    Ok(out)
}

/// Background-ranking loss through the encoder; sampled target encodings are
/// constants.
fn agg_br_loss(
    dataset: &Dataset,
    model: &ModelState,
    batch: &[(usize, Vec<usize>)],
    cfg: &BrConfig,
) -> Result<LossOutput> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch("agg_br_loss"));
    }
    let encoder = model.encoder();
    let mut out = LossOutput::new();
    for (e, targets) in batch {
        let trace = encode_trace(&dataset.kg1, &model.space.ent1, encoder, *e);
        let diffs: Vec<Vec<f64>> = targets
            .iter()
            .map(|&t| {
                let z = agg_encode(&dataset.kg2, &model.space.ent2, encoder, t);
                sub(&trace.output, &z)
            })
            .collect();
        let term = br_terms(&trace.output, &diffs, cfg.alpha);
        out.loss += term.loss;
        let mut dz = term.dx_norm.clone();
        for dd in &term.ddiffs {
            add_scaled(&mut dz, dd, 1.0);
        }
        encode_backward(
            &trace,
            &model.space.ent1,
            encoder,
            &dz,
            Param::Ent1,
            &mut out.grads,
        );
    }
    Ok(out)
}

/// NNC loss over encoder representations (frozen: only the FFN trains).
fn agg_nnc_loss(
    dataset: &Dataset,
    model: &ModelState,
    cache: &NnCache,
    batch: &[LabeledEntity],
    weights: &crate::detect::LabelWeights,
) -> Result<LossOutput> {
    let encoder = model.encoder();
    let params = model.nnc.as_ref().expect("nnc params initialized");
    let features: Vec<(Vec<f64>, bool)> = batch
        .iter()
        .map(|s| {
            let (nn, _) = cache
                .get(s.entity)
                .ok_or_else(|| Error::Invalid(format!("entity #{} not in NN cache", s.entity)))?;
            let z = agg_encode(&dataset.kg1, &model.space.ent1, encoder, s.entity);
            let z_nn = agg_encode(&dataset.kg2, &model.space.ent2, encoder, nn);
            Ok((sub(&z, &z_nn), s.dangling))
        })
        .collect::<Result<_>>()?;
    nnc_loss_features(&features, params, weights)
}

/// Mean BR training threshold: average cached/training NN distance of the
/// dangling train set under the current model, for `--br-train-threshold`.
pub fn br_training_mean(
    dataset: &Dataset,
    model: &ModelState,
    dangling_train: &[usize],
) -> Result<f64> {
    if dangling_train.is_empty() {
        return Err(Error::EmptyInput("dangling train set".into()));
    }
    let reprs = model.source_repr_rows(&dataset.kg1, dangling_train);
    let targets = model.target_repr_table(&dataset.kg2);
    let hits = crate::nn::knn(&reprs, &targets, 1, crate::nn::Metric::Euclidean)?;
    Ok(hits.iter().map(|h| h[0].1).sum::<f64>() / hits.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forge::{inject_dangling, split_dataset, ForgeConfig};
    use crate::synthetic::{generate_pair, SyntheticConfig};

    fn tiny_dataset(frac: f64, seed: u64) -> Dataset {
        let (kg1, kg2, links) = generate_pair(&SyntheticConfig {
            entities: 40,
            relations: 3,
            triples: 110,
            seed,
        });
        let cfg = ForgeConfig {
            removal_fraction_source: frac,
            removal_fraction_target: frac,
            rng_seed: seed,
            ..Default::default()
        };
        let out = inject_dangling(&kg1, &kg2, &links, &cfg).unwrap();
        let store = split_dataset(&out.store, &cfg).unwrap();
        Dataset {
            kg1: out.kg1,
            kg2: out.kg2,
            store,
        }
    }

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            dim: 8,
            batch_size: 64,
            max_epochs: 4,
            eval_every: 2,
            patience: 3,
            neg_count: 2,
            seed: 1,
            ..Default::default()
        }
    }

    #[test]
    fn config_defaults_resolve_per_aligner() {
        let mut cfg = TrainConfig::default();
        assert_eq!(cfg.resolved_lr(), 0.001);
        assert_eq!(cfg.resolved_mr_lambda(), 0.9);
        cfg.aligner = AlignerKind::AggAlign;
        assert_eq!(cfg.resolved_lr(), 0.0005);
        assert_eq!(cfg.resolved_mr_lambda(), 0.2);
        cfg.learning_rate = Some(0.01);
        assert_eq!(cfg.resolved_lr(), 0.01);
    }

    #[test]
    fn config_validation_errors_and_warnings() {
        let mut cfg = TrainConfig::default();
        cfg.batch_size = 1024; // outside the explored range: warning, not error
        let warnings = cfg.validate().unwrap();
        assert!(warnings.iter().any(|w| w.contains("batch_size")));
        cfg.trunc_epsilon = 0.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn config_kv_overlay() {
        let kv = KvConfig::parse(
            "aligner = aggalign\ndetector = br\ndim = 32\nlearning_rate = 0.002\n",
            "t",
        )
        .unwrap();
        let mut cfg = TrainConfig::default();
        cfg.apply_kv(&kv).unwrap();
        assert_eq!(cfg.aligner, AlignerKind::AggAlign);
        assert_eq!(cfg.detector, DetectorChoice::Br);
        assert_eq!(cfg.dim, 32);
        assert_eq!(cfg.learning_rate, Some(0.002));

        let bad = KvConfig::parse("dimension = 32\n", "t").unwrap();
        assert!(TrainConfig::default().apply_kv(&bad).is_err());
    }

    #[test]
    fn paper_scale_preset_pins_reference_hyperparameters() {
        let cfg = TrainConfig::paper_scale();
        assert_eq!(cfg.dim, 128);
        assert_eq!(cfg.learning_rate, Some(0.001));
        assert_eq!(cfg.resolved_mr_lambda(), 0.9);
        assert_eq!(cfg.br_samples, 20);
        assert_eq!(cfg.br_alpha, 0.01);
        assert_eq!(cfg.batch_size, 20480);
        assert_eq!(cfg.cache_period, 10);
    }

    #[test]
    fn early_stopper_degrading_sequence() {
        // patience = 1, strictly degrading: stops at the second evaluation,
        // best stays the first score.
        let mut s = EarlyStopper::new(1);
        assert!(matches!(s.observe(0.9), StopAction::NewBest));
        assert!(matches!(s.observe(0.8), StopAction::Stop));
        assert_eq!(s.best, Some(0.9));

        // Improvement resets strikes.
        let mut s = EarlyStopper::new(2);
        assert!(matches!(s.observe(0.5), StopAction::NewBest));
        assert!(matches!(s.observe(0.4), StopAction::Continue));
        assert!(matches!(s.observe(0.6), StopAction::NewBest));
        assert!(matches!(s.observe(0.6), StopAction::Continue));
        assert!(matches!(s.observe(0.6), StopAction::Stop));
    }

    #[test]
    fn stream_cycles_with_reshuffle() {
        let mut rng = seeded_rng(0, "stream");
        let mut s = Stream::new(vec![1, 2, 3], &mut rng);
        let a = s.next_chunk(2, &mut rng);
        let b = s.next_chunk(2, &mut rng);
        let c = s.next_chunk(2, &mut rng);
        let mut seen: Vec<i32> = a.into_iter().chain(b).chain(c).collect();
        assert_eq!(seen.len(), 6);
        seen.sort_unstable();
        assert_eq!(seen, vec![1, 1, 2, 2, 3, 3]);
    }

    #[test]
    fn train_no_detector_logs_no_dangling_time() {
        let ds = tiny_dataset(0.0, 3);
        let cfg = tiny_cfg();
        let out = train(&ds, &cfg).unwrap();
        assert!(!out.log.is_empty());
        for rec in &out.log {
            assert!(rec.loss_dangling.is_none());
            assert!(rec.epoch_seconds_dangling.is_none());
        }
        assert!(out.checkpoint.val_metric.is_some());
    }

    #[test]
    fn train_detector_requires_dangling_labels() {
        let ds = tiny_dataset(0.0, 3);
        let cfg = TrainConfig {
            detector: DetectorChoice::Mr,
            ..tiny_cfg()
        };
        assert!(matches!(train(&ds, &cfg), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn train_deterministic_given_seed() {
        let ds = tiny_dataset(0.2, 5);
        let cfg = TrainConfig {
            detector: DetectorChoice::Br,
            ..tiny_cfg()
        };
        let a = train(&ds, &cfg).unwrap();
        let b = train(&ds, &cfg).unwrap();
        assert_eq!(a.checkpoint, b.checkpoint);
        assert_eq!(a.log.len(), b.log.len());
        for (ra, rb) in a.log.iter().zip(&b.log) {
            assert_eq!(ra.loss_align.to_bits(), rb.loss_align.to_bits());
            assert_eq!(ra.loss_dangling.map(f64::to_bits), rb.loss_dangling.map(f64::to_bits));
            assert_eq!(ra.val_metric.map(f64::to_bits), rb.val_metric.map(f64::to_bits));
        }
    }

    #[test]
    fn train_all_detectors_and_aligners_run() {
        let ds = tiny_dataset(0.2, 7);
        for aligner in [AlignerKind::MTransE, AlignerKind::AggAlign] {
            for detector in [
                DetectorChoice::None,
                DetectorChoice::Nnc,
                DetectorChoice::Mr,
                DetectorChoice::Br,
            ] {
                let cfg = TrainConfig {
                    aligner,
                    detector,
                    max_epochs: 2,
                    eval_every: 2,
                    ..tiny_cfg()
                };
                let out = train(&ds, &cfg)
                    .unwrap_or_else(|e| panic!("{aligner:?}/{detector:?} failed: {e}"));
                assert!(matches!(
                    out.stop,
                    StopReason::MaxEpochs | StopReason::EarlyStopped { .. }
                ));
            }
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let ds = tiny_dataset(0.2, 9);
        let cfg = TrainConfig {
            detector: DetectorChoice::Mr,
            max_epochs: 2,
            eval_every: 2,
            ..tiny_cfg()
        };
        let out = train(&ds, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        out.checkpoint.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(out.checkpoint, loaded);
    }
}
