//! Subcommand implementations: forge, train, eval, analyze.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Subcommand, ValueEnum};

use dea_core::dataset::{
    dangling_source_file, dangling_target_file, pairs_file, Dataset, ForgeStats, TRIPLES_1,
    TRIPLES_2,
};
use dea_core::detect::write_verdicts_csv;
use dea_core::eval::{
    consolidated_eval, detection_eval, relaxed_eval, similarity_distribution, similarity_summary,
    write_similarity_csv, ConsolidatedCase, EvalReport,
};
use dea_core::forge::{
    average_neighbor_overlap, degree_histogram, inject_dangling, prune_to_bijection,
    split_dataset, ForgeConfig,
};
use dea_core::kg::{parse_links, KnowledgeGraph, LinkMode, Split};
use dea_core::nn::{cosine, knn, Metric};
use dea_core::train::{
    br_training_mean, run_detector, train, Checkpoint, DetectorChoice, StopReason, TrainConfig,
};

use crate::manifest::RunManifest;

#[derive(Args, Debug)]
pub struct ForgeArgs {
    /// Source-KG triple file (head<TAB>relation<TAB>tail).
    #[arg(long)]
    kg1: PathBuf,
    /// Target-KG triple file.
    #[arg(long)]
    kg2: PathBuf,
    /// Reference link file (source<TAB>target).
    #[arg(long)]
    links: PathBuf,
    /// Output dataset directory.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Fraction of links whose source entity is removed (targets dangle).
    #[arg(long, default_value_t = 0.40)]
    frac1: f64,
    /// Fraction of links whose target entity is removed (sources dangle).
    #[arg(long, default_value_t = 0.25)]
    frac2: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.3)]
    train_ratio: f64,
    #[arg(long, default_value_t = 0.2)]
    valid_ratio: f64,
    /// Allow zero-ratio splits to come out empty.
    #[arg(long)]
    allow_empty_splits: bool,
    /// Skip link lines naming unknown entities instead of failing.
    #[arg(long)]
    lenient: bool,
}

pub fn run_forge(args: &ForgeArgs) -> Result<()> {
    let cfg = ForgeConfig {
        removal_fraction_source: args.frac1,
        removal_fraction_target: args.frac2,
        split_ratios: (
            args.train_ratio,
            args.valid_ratio,
            1.0 - args.train_ratio - args.valid_ratio,
        ),
        rng_seed: args.seed,
        allow_empty_splits: args.allow_empty_splits,
    };

    let kg1 = KnowledgeGraph::parse_triples(&args.kg1)?;
    let kg2 = KnowledgeGraph::parse_triples(&args.kg2)?;
    let mode = if args.lenient {
        LinkMode::Lenient
    } else {
        LinkMode::Strict
    };
    let (links, link_stats) = parse_links(&args.links, &kg1, &kg2, mode)?;
    if link_stats.skipped_unknown > 0 {
        eprintln!(
            "warning: skipped {} link(s) naming unknown entities",
            link_stats.skipped_unknown
        );
    }

    let (kg1, kg2, links) = prune_to_bijection(&kg1, &kg2, &links)?;
    let forged = inject_dangling(&kg1, &kg2, &links, &cfg)?;
    if forged.report.quota_missed() {
        eprintln!(
            "warning: removal quota unmet: source {}/{}, target {}/{}",
            forged.report.achieved_source_removals,
            forged.report.requested_source_removals,
            forged.report.achieved_target_removals,
            forged.report.requested_target_removals,
        );
    }
    let store = split_dataset(&forged.store, &cfg)?;
    let dataset = Dataset {
        kg1: forged.kg1,
        kg2: forged.kg2,
        store,
    };
    dataset.save(&args.out)?;

    let stats = ForgeStats {
        dataset: dataset.stats(),
        inject: forged.report,
    };
    write_json(&args.out.join("stats.json"), &stats)?;

    let mut manifest = RunManifest::new("forge", serde_json::to_value(&cfg)?, Some(args.seed));
    manifest.digest_input(&args.kg1)?;
    manifest.digest_input(&args.kg2)?;
    manifest.digest_input(&args.links)?;
    for name in dataset_file_names() {
        manifest.add_artifact(args.out.join(name));
    }
    manifest.add_artifact(args.out.join("stats.json"));
    manifest.write(&args.out)?;

    println!(
        "forged dataset: kg1 {} entities / {} triples, kg2 {} entities / {} triples, \
         {} pairs, {} dangling source, {} dangling target -> {}",
        stats.dataset.kg1.entities,
        stats.dataset.kg1.triples,
        stats.dataset.kg2.entities,
        stats.dataset.kg2.triples,
        stats.dataset.alignment,
        stats.dataset.dangling_source,
        stats.dataset.dangling_target,
        args.out.display()
    );
    Ok(())
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long, value_name = "DIR")]
    dataset: PathBuf,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Key-value config file; flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Start from the published full-scale hyperparameters.
    #[arg(long)]
    paper_scale: bool,
    #[arg(long)]
    aligner: Option<String>,
    #[arg(long)]
    detector: Option<String>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long)]
    cache_period: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    triple_margin: Option<f64>,
    #[arg(long)]
    align_weight: Option<f64>,
    #[arg(long)]
    norm: Option<String>,
    #[arg(long)]
    normalize: Option<bool>,
    #[arg(long)]
    agg_margin: Option<f64>,
    #[arg(long)]
    neg_count: Option<usize>,
    #[arg(long)]
    trunc_epsilon: Option<f64>,
    #[arg(long)]
    mr_lambda: Option<f64>,
    #[arg(long)]
    br_samples: Option<usize>,
    #[arg(long)]
    br_alpha: Option<f64>,
    #[arg(long)]
    nnc_hidden: Option<usize>,
    #[arg(long)]
    k_csls: Option<usize>,
}

impl TrainArgs {
    fn build_config(&self) -> Result<TrainConfig> {
        let mut cfg = if self.paper_scale {
            TrainConfig::paper_scale()
        } else {
            TrainConfig::default()
        };
        if let Some(path) = &self.config {
            cfg.apply_kv(&dea_core::config::KvConfig::load(path)?)?;
        }
        if let Some(v) = &self.aligner {
            cfg.aligner = v.parse()?;
        }
        if let Some(v) = &self.detector {
            cfg.detector = v.parse()?;
        }
        if let Some(v) = &self.norm {
            cfg.norm = v.parse()?;
        }
        macro_rules! over {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field { cfg.$field = v; })*
            };
        }
        over!(dim, batch_size, max_epochs, patience, eval_every, cache_period, seed,
              triple_margin, align_weight, normalize, agg_margin, neg_count, trunc_epsilon,
              br_samples, br_alpha, k_csls);
        if let Some(v) = self.learning_rate {
            cfg.learning_rate = Some(v);
        }
        if let Some(v) = self.mr_lambda {
            cfg.mr_lambda = Some(v);
        }
        if let Some(v) = self.nnc_hidden {
            cfg.nnc_hidden = Some(v);
        }
        Ok(cfg)
    }
}

pub fn run_train(args: &TrainArgs) -> Result<()> {
    let cfg = args.build_config()?;
    let dataset = Dataset::load(&args.dataset)?;
    let outcome = train(&dataset, &cfg)?;
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }

    fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    let ckpt_path = args.out.join("checkpoint.json");
    outcome.checkpoint.save(&ckpt_path)?;
    let log_path = args.out.join("train_log.jsonl");
    let mut log_buf = Vec::new();
    outcome.write_log_jsonl(&mut log_buf)?;
    fs::write(&log_path, log_buf).with_context(|| format!("writing {}", log_path.display()))?;

    let mut manifest = RunManifest::new("train", serde_json::to_value(&cfg)?, Some(cfg.seed));
    digest_dataset(&mut manifest, &args.dataset)?;
    if let Some(path) = &args.config {
        manifest.digest_input(path)?;
    }
    manifest.add_artifact(&ckpt_path);
    manifest.add_artifact(&log_path);
    manifest.write(&args.out)?;

    match &outcome.stop {
        StopReason::Diverged { at_epoch, detail } => {
            bail!("training diverged at epoch {at_epoch}: {detail}; last good checkpoint kept");
        }
        StopReason::EarlyStopped { at_epoch } => println!(
            "early stop at epoch {at_epoch}; best epoch {} (val {:?}) -> {}",
            outcome.checkpoint.epoch,
            outcome.checkpoint.val_metric,
            ckpt_path.display()
        ),
        StopReason::MaxEpochs => println!(
            "trained {} epochs; best epoch {} (val {:?}) -> {}",
            outcome.log.len(),
            outcome.checkpoint.epoch,
            outcome.checkpoint.val_metric,
            ckpt_path.display()
        ),
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Protocol {
    Relaxed,
    Consolidated,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long, value_enum)]
    protocol: Protocol,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, value_name = "DIR")]
    dataset: PathBuf,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Cutoff for consolidated recall@k.
    #[arg(long, default_value_t = 10)]
    k: usize,
    /// Verdicts CSV from a reverse-direction run; flagged targets are
    /// removed from the alignment candidates.
    #[arg(long)]
    filter_targets: Option<PathBuf>,
    /// Threshold BR on the training-set mean NN distance instead of the
    /// evaluated set's own mean.
    #[arg(long)]
    br_train_threshold: bool,
    /// Also export per-entity verdicts as CSV.
    #[arg(long)]
    verdicts: Option<PathBuf>,
}

pub fn run_eval(args: &EvalArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let dataset = Dataset::load(&args.dataset)?;
    check_checkpoint_matches(&ckpt, &dataset)?;
    let model = &ckpt.model;
    let cfg = &ckpt.config;

    let test_pairs = dataset.store.pairs_in(Split::Test);
    let test_dangling = dataset.store.dangling_source_in(Split::Test);

    let mut report = EvalReport::default();
    match args.protocol {
        Protocol::Relaxed => {
            let sources: Vec<usize> = test_pairs.iter().map(|&(s, _)| s).collect();
            let gold: Vec<usize> = test_pairs.iter().map(|&(_, t)| t).collect();
            let reprs = model.source_repr_rows(&dataset.kg1, &sources);
            let targets = model.target_repr_table(&dataset.kg2);
            report.relaxed = Some(relaxed_eval(&reprs, &gold, &targets, cfg.k_csls)?);
        }
        Protocol::Consolidated => {
            if cfg.detector == DetectorChoice::None {
                bail!("consolidated evaluation needs a checkpoint trained with a detector");
            }
            let entities: Vec<usize> = test_pairs
                .iter()
                .map(|&(s, _)| s)
                .chain(test_dangling.iter().copied())
                .collect();
            let br_mean = if args.br_train_threshold {
                let dangling_train = dataset.store.dangling_source_in(Split::Train);
                Some(br_training_mean(&dataset, model, &dangling_train)?)
            } else {
                None
            };
            let verdicts = run_detector(&dataset, model, cfg, &entities, br_mean)?;
            let gold: Vec<(usize, bool)> = test_pairs
                .iter()
                .map(|&(s, _)| (s, false))
                .chain(test_dangling.iter().map(|&e| (e, true)))
                .collect();
            report.detection = Some(detection_eval(&verdicts, &gold)?);

            let cases: Vec<ConsolidatedCase> = test_pairs
                .iter()
                .map(|&(s, t)| (s, Some(t)))
                .chain(test_dangling.iter().map(|&e| (e, None)))
                .zip(&verdicts)
                .map(|((entity, gold_target), v)| ConsolidatedCase {
                    entity,
                    gold_target,
                    predicted_dangling: v.is_dangling,
                })
                .collect();
            let sources = model.source_repr_rows(&dataset.kg1, &entities);
            let targets = model.target_repr_table(&dataset.kg2);
            let filter = match &args.filter_targets {
                Some(path) => Some(load_target_filter(path, &dataset.kg2)?),
                None => None,
            };
            let consolidated = consolidated_eval(
                &cases,
                &sources,
                &targets,
                args.k,
                cfg.k_csls,
                filter.as_deref(),
            )?;
            if consolidated.attempted == 0 {
                eprintln!("warning: detector excluded every test source; precision reported as 0");
            }
            report.consolidated = Some(consolidated);

            if let Some(path) = &args.verdicts {
                let mut buf = Vec::new();
                write_verdicts_csv(
                    &verdicts,
                    |e| dataset.kg1.entity_name(e).to_string(),
                    &mut buf,
                )?;
                fs::write(path, buf).with_context(|| format!("writing {}", path.display()))?;
            }
        }
    }

    fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    let report_path = args.out.join("report.json");
    write_json(&report_path, &report)?;

    let mut manifest = RunManifest::new(
        "eval",
        serde_json::json!({
            "protocol": format!("{:?}", args.protocol).to_lowercase(),
            "k": args.k,
            "br_train_threshold": args.br_train_threshold,
            "train_config": serde_json::to_value(cfg)?,
        }),
        Some(cfg.seed),
    );
    manifest.digest_input(&args.checkpoint)?;
    digest_dataset(&mut manifest, &args.dataset)?;
    if let Some(path) = &args.filter_targets {
        manifest.digest_input(path)?;
    }
    manifest.add_artifact(&report_path);
    manifest.write(&args.out)?;

    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

#[derive(Subcommand, Debug)]
pub enum AnalyzeCmd {
    /// Degree histograms of matchable vs dangling entities per KG.
    Degrees {
        #[arg(long, value_name = "DIR")]
        dataset: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Average neighbor-overlap ratio of the reference alignment.
    Overlap {
        #[arg(long, value_name = "DIR")]
        dataset: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// NN cosine-similarity distribution of test matchable vs dangling sources.
    Similarity {
        #[arg(long, value_name = "DIR")]
        dataset: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Per-entity NN records (target, euclidean distance, cosine) for test sources.
    Nn {
        #[arg(long, value_name = "DIR")]
        dataset: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
}

pub fn run_analyze(cmd: &AnalyzeCmd) -> Result<()> {
    match cmd {
        AnalyzeCmd::Degrees { dataset, out } => {
            let ds = Dataset::load(dataset)?;
            let matchable1: Vec<usize> = ds.store.pairs().iter().map(|&(s, _, _)| s).collect();
            let matchable2: Vec<usize> = ds.store.pairs().iter().map(|&(_, t, _)| t).collect();
            let dangling1: Vec<usize> =
                ds.store.dangling_source().iter().map(|&(e, _)| e).collect();
            let dangling2: Vec<usize> =
                ds.store.dangling_target().iter().map(|&(e, _)| e).collect();
            let payload = serde_json::json!({
                "kg1": {
                    "matchable": degree_histogram(&ds.kg1, &matchable1),
                    "dangling": degree_histogram(&ds.kg1, &dangling1),
                },
                "kg2": {
                    "matchable": degree_histogram(&ds.kg2, &matchable2),
                    "dangling": degree_histogram(&ds.kg2, &dangling2),
                },
            });
            finish_analyze(out, dataset, None, "degrees.json", &payload)
        }
        AnalyzeCmd::Overlap { dataset, out } => {
            let ds = Dataset::load(dataset)?;
            let reference: Vec<(usize, usize)> =
                ds.store.pairs().iter().map(|&(s, t, _)| (s, t)).collect();
            let average = average_neighbor_overlap(&ds.kg1, &ds.kg2, &reference)?;
            let payload = serde_json::json!({
                "average_overlap": average,
                "pairs": reference.len(),
            });
            finish_analyze(out, dataset, None, "overlap.json", &payload)
        }
        AnalyzeCmd::Similarity {
            dataset,
            checkpoint,
            out,
        } => {
            let ds = Dataset::load(dataset)?;
            let ckpt = Checkpoint::load(checkpoint)?;
            check_checkpoint_matches(&ckpt, &ds)?;
            let (ids, labels) = test_sources(&ds);
            let reprs = ckpt.model.source_repr_rows(&ds.kg1, &ids);
            let targets = ckpt.model.target_repr_table(&ds.kg2);
            let records = similarity_distribution(&ids, &labels, &reprs, &targets)?;
            let summary = similarity_summary(&records);

            fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
            let csv_path = out.join("similarity.csv");
            let mut buf = Vec::new();
            write_similarity_csv(&records, |e| ds.kg1.entity_name(e).to_string(), &mut buf)?;
            fs::write(&csv_path, buf)
                .with_context(|| format!("writing {}", csv_path.display()))?;
            write_json(&out.join("similarity_summary.json"), &summary)?;

            let mut manifest = RunManifest::new("analyze", serde_json::json!({"kind": "similarity"}), None);
            digest_dataset(&mut manifest, dataset)?;
            manifest.digest_input(checkpoint)?;
            manifest.add_artifact(&csv_path);
            manifest.add_artifact(out.join("similarity_summary.json"));
            manifest.write(out)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
            Ok(())
        }
        AnalyzeCmd::Nn {
            dataset,
            checkpoint,
            out,
        } => {
            let ds = Dataset::load(dataset)?;
            let ckpt = Checkpoint::load(checkpoint)?;
            check_checkpoint_matches(&ckpt, &ds)?;
            let (ids, labels) = test_sources(&ds);
            let reprs = ckpt.model.source_repr_rows(&ds.kg1, &ids);
            let targets = ckpt.model.target_repr_table(&ds.kg2);
            let hits = knn(&reprs, &targets, 1, Metric::Euclidean)?;

            fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
            let csv_path = out.join("nn_records.csv");
            let mut wtr = csv::Writer::from_writer(Vec::new());
            wtr.write_record(["entity", "label", "nn_entity", "euclidean", "cosine"])?;
            for ((&e, &dangling), hit) in ids.iter().zip(&labels).zip(&hits) {
                let (nn, dist) = hit[0];
                let cos = cosine(
                    reprs.row(ids.iter().position(|&x| x == e).unwrap()),
                    targets.row(nn),
                )?;
                wtr.write_record([
                    ds.kg1.entity_name(e).to_string(),
                    if dangling { "dangling" } else { "matchable" }.to_string(),
                    ds.kg2.entity_name(nn).to_string(),
                    format!("{dist}"),
                    format!("{cos}"),
                ])?;
            }
            let buf = wtr.into_inner().map_err(|e| anyhow!("csv: {e}"))?;
            fs::write(&csv_path, buf)
                .with_context(|| format!("writing {}", csv_path.display()))?;

            let mut manifest =
                RunManifest::new("analyze", serde_json::json!({"kind": "nn"}), None);
            digest_dataset(&mut manifest, dataset)?;
            manifest.digest_input(checkpoint)?;
            manifest.add_artifact(&csv_path);
            manifest.write(out)?;
            println!("wrote {}", csv_path.display());
            Ok(())
        }
    }
}

fn test_sources(ds: &Dataset) -> (Vec<usize>, Vec<bool>) {
    let pairs = ds.store.pairs_in(Split::Test);
    let dangling = ds.store.dangling_source_in(Split::Test);
    let ids: Vec<usize> = pairs
        .iter()
        .map(|&(s, _)| s)
        .chain(dangling.iter().copied())
        .collect();
    let labels: Vec<bool> = pairs
        .iter()
        .map(|_| false)
        .chain(dangling.iter().map(|_| true))
        .collect();
    (ids, labels)
}

fn finish_analyze(
    out: &Path,
    dataset_dir: &Path,
    checkpoint: Option<&Path>,
    file: &str,
    payload: &impl serde::Serialize,
) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let path = out.join(file);
    write_json(&path, payload)?;
    let mut manifest = RunManifest::new(
        "analyze",
        serde_json::json!({"kind": file.trim_end_matches(".json")}),
        None,
    );
    digest_dataset(&mut manifest, dataset_dir)?;
    if let Some(ckpt) = checkpoint {
        manifest.digest_input(ckpt)?;
    }
    manifest.add_artifact(&path);
    manifest.write(out)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn dataset_file_names() -> Vec<String> {
    let mut names = vec![TRIPLES_1.to_string(), TRIPLES_2.to_string()];
    for split in Split::ALL {
        names.push(pairs_file(split));
        names.push(dangling_source_file(split));
        names.push(dangling_target_file(split));
    }
    names
}

fn digest_dataset(manifest: &mut RunManifest, dir: &Path) -> Result<()> {
    for name in dataset_file_names() {
        manifest.digest_input(dir.join(name))?;
    }
    Ok(())
}

fn check_checkpoint_matches(ckpt: &Checkpoint, ds: &Dataset) -> Result<()> {
    let space = &ckpt.model.space;
    if space.ent1.rows() != ds.kg1.num_entities()
        || space.ent2.rows() != ds.kg2.num_entities()
        || space.rel1.rows() != ds.kg1.num_relations()
        || space.rel2.rows() != ds.kg2.num_relations()
    {
        bail!(
            "checkpoint shape ({}x{}, {}x{} entities/relations) does not match dataset \
             ({}, {} entities; {}, {} relations)",
            space.ent1.rows(),
            space.ent2.rows(),
            space.rel1.rows(),
            space.rel2.rows(),
            ds.kg1.num_entities(),
            ds.kg2.num_entities(),
            ds.kg1.num_relations(),
            ds.kg2.num_relations()
        );
    }
    Ok(())
}

/// Reads a verdicts CSV over target-KG entities and keeps the unflagged ones.
fn load_target_filter(path: &Path, kg2: &KnowledgeGraph) -> Result<Vec<bool>> {
    let mut keep = vec![true; kg2.num_entities()];
    let mut rdr = csv::Reader::from_path(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let headers = rdr.headers()?.clone();
    let entity_col = headers
        .iter()
        .position(|h| h == "entity")
        .ok_or_else(|| anyhow!("{}: missing `entity` column", path.display()))?;
    let flag_col = headers
        .iter()
        .position(|h| h == "is_dangling")
        .ok_or_else(|| anyhow!("{}: missing `is_dangling` column", path.display()))?;
    for record in rdr.records() {
        let record = record?;
        let name = &record[entity_col];
        let id = kg2
            .entity_id(name)
            .ok_or_else(|| anyhow!("{}: unknown target entity {name:?}", path.display()))?;
        if record[flag_col].trim() == "true" {
            keep[id] = false;
        }
    }
    Ok(keep)
}

fn write_json(path: &Path, payload: &impl serde::Serialize) -> Result<()> {
    let mut json = serde_json::to_vec_pretty(payload)?;
    json.push(b'\n');
    fs::write(path, json).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}
