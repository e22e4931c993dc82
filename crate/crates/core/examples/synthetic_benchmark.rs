//! Trains the reduced model on a seeded synthetic corpus and prints test
//! metrics next to the KNN comparator.
//!
//! Environment overrides: GVIT_EPOCHS, GVIT_LR, GVIT_EXPOSURES, GVIT_NOISE,
//! GVIT_ACCUM.

use std::env;
use std::time::Instant;

use gvit::eval::{evaluate, knn_baseline};
use gvit::ingest::{build_graphs, kfold, stratified_split, synthesize, GasMaxima, IngestConfig, SynthConfig};
use gvit::model::{DataContext, GViTConfig, GViTModel, PRESENCE_THRESHOLD};
use gvit::train::{train_fold, TrainConfig};

fn var<T: std::str::FromStr>(name: &str, default: T) -> T {
    env::var(name).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

fn main() -> gvit::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let started = Instant::now();
    let mut synth = SynthConfig::default();
    synth.schedule.exposures = var("GVIT_EXPOSURES", 240);
    synth.sample_rate_hz = 20.0;
    synth.noise_std = var("GVIT_NOISE", synth.noise_std);
    let out = synthesize(&synth)?;
    let ingest = IngestConfig {
        downsample_factor: 4,
        average: false,
    };
    let maxima = GasMaxima::uci(synth.group);
    let graphs = build_graphs(&[out.stream], &ingest, maxima, &mut Vec::new())?;
    let split = stratified_split(&graphs, 0.2, 1)?;
    let folds = kfold(&graphs, &split.train_val, 5, 1)?;
    let val: Vec<_> = folds[0].iter().map(|&i| graphs[i].clone()).collect();
    let train: Vec<_> = folds[1..].iter().flatten().map(|&i| graphs[i].clone()).collect();
    let test: Vec<_> = split.test.iter().map(|&i| graphs[i].clone()).collect();
    println!("graphs {} train {} val {} test {}", graphs.len(), train.len(), val.len(), test.len());

    let cfg = GViTConfig {
        pooled_nodes: 64,
        encoder_blocks: 4,
        seed: 5,
        ..GViTConfig::default()
    };
    let mut model = GViTModel::new(cfg)?;
    model.set_context(DataContext {
        group: synth.group,
        gas_maxima: maxima.0,
    });
    let tc = TrainConfig {
        epochs: var("GVIT_EPOCHS", 280),
        lr: var("GVIT_LR", 5e-5),
        seed: 9,
        accumulation: var("GVIT_ACCUM", 8),
        ..TrainConfig::default()
    };
    let fit = train_fold(model, &train, &val, &tc)?;
    fit.model.save(std::path::Path::new("/tmp/bench_model.json"))?;
    let r = evaluate(&fit.model, &test, PRESENCE_THRESHOLD)?;
    for rec in &r.records {
        if Some(rec.true_composition) != rec.pred_composition || (rec.pred_a - rec.true_a).abs() > 0.03 || (rec.pred_b - rec.true_b).abs() > 0.03 {
            println!("{} n={} true ({:.3},{:.3}) raw ({:.4},{:.4})", rec.true_composition, rec.n_nodes, rec.true_a, rec.true_b, rec.raw_a, rec.raw_b);
        }
    }
    let k = knn_baseline(&train, &test, 5, 5, PRESENCE_THRESHOLD)?;
    println!("selected epoch {}", fit.history.selected_epoch);
    for rep in [&r, &k] {
        println!(
            "{:5} acc {:.4} mixed {:?} pure {:?} rmse {:.4} anomalies {:?}",
            rep.model, rep.accuracy, rep.r2.mixed, rep.r2.pure, rep.rmse, rep.anomalies
        );
    }
    println!("elapsed {:.1}s", started.elapsed().as_secs_f64());
    Ok(())
}

