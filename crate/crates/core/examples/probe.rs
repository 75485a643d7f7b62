//! Scratch harness for tuning desk-scale training configs against the
//! synthetic clean and dangling instances. Run with --release.

use dea_core::dataset::Dataset;
use dea_core::eval::{detection_eval, relaxed_eval, similarity_distribution, similarity_summary};
use dea_core::forge::{inject_dangling, split_dataset, ForgeConfig};
use dea_core::kg::Split;
use dea_core::synthetic::{generate_pair, SyntheticConfig};
use dea_core::train::{run_detector, train, DetectorChoice, TrainConfig};

fn clean_dataset(seed: u64) -> Dataset {
    let (kg1, kg2, links) = generate_pair(&SyntheticConfig {
        entities: 300,
        relations: 5,
        triples: 1500,
        seed,
    });
    let cfg = ForgeConfig {
        removal_fraction_source: 0.0,
        removal_fraction_target: 0.0,
        rng_seed: seed,
        ..Default::default()
    };
    let out = inject_dangling(&kg1, &kg2, &links, &cfg).unwrap();
    let store = split_dataset(&out.store, &cfg).unwrap();
    Dataset { kg1: out.kg1, kg2: out.kg2, store }
}

fn dangling_dataset(seed: u64) -> Dataset {
    let (kg1, kg2, links) = generate_pair(&SyntheticConfig {
        entities: 300,
        relations: 5,
        triples: 1500,
        seed,
    });
    let cfg = ForgeConfig {
        removal_fraction_source: 0.2,
        removal_fraction_target: 0.2,
        rng_seed: seed,
        ..Default::default()
    };
    let out = inject_dangling(&kg1, &kg2, &links, &cfg).unwrap();
    let store = split_dataset(&out.store, &cfg).unwrap();
    Dataset { kg1: out.kg1, kg2: out.kg2, store }
}

fn relaxed_test_h1(ds: &Dataset, model: &dea_core::train::ModelState, k_csls: usize) -> f64 {
    let pairs = ds.store.pairs_in(Split::Test);
    let sources: Vec<usize> = pairs.iter().map(|&(s, _)| s).collect();
    let gold: Vec<usize> = pairs.iter().map(|&(_, t)| t).collect();
    let reprs = model.source_repr_rows(&ds.kg1, &sources);
    let targets = model.target_repr_table(&ds.kg2);
    relaxed_eval(&reprs, &gold, &targets, k_csls).unwrap().hits1
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let mode = args.get(1).map(|s| s.as_str()).unwrap_or("clean");
    let lr: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0.01);
    let dim: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(64);
    let epochs: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(200);
    let margin: f64 = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let align_w: f64 = args.get(6).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let patience: usize = args.get(7).and_then(|s| s.parse().ok()).unwrap_or(10);

    let base = TrainConfig {
        dim,
        learning_rate: Some(lr),
        batch_size: 1024,
        max_epochs: epochs,
        patience,
        eval_every: 5,
        triple_margin: margin,
        align_weight: align_w,
        seed: 11,
        ..Default::default()
    };

    match mode {
        "clean" => {
            let ds = clean_dataset(1);
            let t0 = std::time::Instant::now();
            let out = train(&ds, &base).unwrap();
            let h1 = relaxed_test_h1(&ds, &out.checkpoint.model, base.k_csls);
            println!(
                "clean: H@1(test) = {h1:.4}  best_epoch={} val={:?} stop={:?} elapsed={:.1}s",
                out.checkpoint.epoch,
                out.checkpoint.val_metric,
                out.stop,
                t0.elapsed().as_secs_f64()
            );
        }
        "dangling" => {
            let ds = dangling_dataset(2);
            let test_pairs = ds.store.pairs_in(Split::Test);
            let test_dangling = ds.store.dangling_source_in(Split::Test);
            println!(
                "dangling instance: {} train pairs, {} test pairs, {} train dangling, {} test dangling",
                ds.store.pairs_in(Split::Train).len(),
                test_pairs.len(),
                ds.store.dangling_source_in(Split::Train).len(),
                test_dangling.len()
            );
            for det in [
                DetectorChoice::None,
                DetectorChoice::Nnc,
                DetectorChoice::Mr,
                DetectorChoice::Br,
            ] {
                let cfg = TrainConfig {
                    detector: det,
                    ..base.clone()
                };
                let t0 = std::time::Instant::now();
                let out = train(&ds, &cfg).unwrap();
                let h1 = relaxed_test_h1(&ds, &out.checkpoint.model, cfg.k_csls);
                let mut line = format!(
                    "{det:?}: H@1={h1:.4} best_epoch={} elapsed={:.1}s",
                    out.checkpoint.epoch,
                    t0.elapsed().as_secs_f64()
                );
                if det != DetectorChoice::None {
                    let entities: Vec<usize> = test_pairs
                        .iter()
                        .map(|&(s, _)| s)
                        .chain(test_dangling.iter().copied())
                        .collect();
                    let verdicts =
                        run_detector(&ds, &out.checkpoint.model, &cfg, &entities, None).unwrap();
                    let gold: Vec<(usize, bool)> = test_pairs
                        .iter()
                        .map(|&(s, _)| (s, false))
                        .chain(test_dangling.iter().map(|&e| (e, true)))
                        .collect();
                    let det_m = detection_eval(&verdicts, &gold).unwrap();
                    let mean_dangling_secs: f64 = {
                        let v: Vec<f64> = out
                            .log
                            .iter()
                            .filter_map(|r| r.epoch_seconds_dangling)
                            .collect();
                        v.iter().sum::<f64>() / v.len() as f64
                    };
                    line += &format!(
                        " | P={:.3} R={:.3} F1={:.3} acc={:.3} dangling_s/epoch={:.4}",
                        det_m.precision, det_m.recall, det_m.f1, det_m.accuracy, mean_dangling_secs
                    );
                    if det == DetectorChoice::Br {
                        let (ids, labels): (Vec<usize>, Vec<bool>) = {
                            let mut ids = Vec::new();
                            let mut labels = Vec::new();
                            for &(s, _) in &test_pairs {
                                ids.push(s);
                                labels.push(false);
                            }
                            for &e in &test_dangling {
                                ids.push(e);
                                labels.push(true);
                            }
                            (ids, labels)
                        };
                        let reprs = out.checkpoint.model.source_repr_rows(&ds.kg1, &ids);
                        let targets = out.checkpoint.model.target_repr_table(&ds.kg2);
                        let recs =
                            similarity_distribution(&ids, &labels, &reprs, &targets).unwrap();
                        let s = similarity_summary(&recs);
                        line += &format!(
                            " | sim: matchable={:.3} dangling={:.3} sep={:.3}",
                            s.mean_matchable, s.mean_dangling, s.separation
                        );
                    }
                }
                println!("{line}");
            }
        }
        other => eprintln!("unknown mode {other}"),
    }
}
