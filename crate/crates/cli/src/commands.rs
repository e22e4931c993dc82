//! One function per subcommand. Each writes its outputs plus a
//! `provenance.json` into its output directory.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};

use gvit::eval::{emit_report, evaluate, knn_baseline, MetricsReport};
use gvit::graph::{Composition, GasGroup, SensorGraph, SENSOR_CHANNELS};
use gvit::ingest::{
    build_graphs, class_counts, downsample, parse_reader, parse_stream, read_dataset, stratified_split, synthesize, write_dataset,
    DatasetInfo, GasMaxima, IngestConfig, RawStream, StreamRow,
};
use gvit::model::{denormalize, predict_composition, DataContext, GViTModel};
use gvit::tensor::Tensor;
use gvit::train::{train_cv, validation_rmse, CvReport};
use gvit::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::config::{MaximaSource, RunConfig};

const STREAM_FILE: &str = "stream.txt";
const MANIFEST_FILE: &str = "manifest.toml";
const RUN_FILE: &str = "run.json";

#[derive(Serialize)]
struct Provenance<'a> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    config_sha256: String,
    config: &'a RunConfig,
    inputs: Vec<String>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(serde_json::from_str(&text)?)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn provenance(dir: &Path, command: &str, cfg: &RunConfig, inputs: &[&Path]) -> Result<()> {
    write_json(
        &dir.join("provenance.json"),
        &Provenance {
            command,
            version: env!("CARGO_PKG_VERSION"),
            seed: cfg.seed,
            config_sha256: cfg.hash(),
            config: cfg,
            inputs: inputs.iter().map(|p| p.display().to_string()).collect(),
        },
    )
}

/// Creates `dir`, refusing to reuse a non-empty one unless `overwrite`.
fn prepare_out_dir(dir: &Path, overwrite: bool) -> Result<()> {
    if dir.exists() {
        let non_empty = fs::read_dir(dir).map_err(io_err(dir))?.next().is_some();
        if non_empty && !overwrite {
            return Err(Error::Config(format!(
                "output directory {} is not empty; pass --overwrite to replace it",
                dir.display()
            )));
        }
        if non_empty {
            fs::remove_dir_all(dir).map_err(io_err(dir))?;
        }
    }
    fs::create_dir_all(dir).map_err(io_err(dir))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StreamEntry {
    /// Relative paths resolve against the manifest's directory.
    pub path: PathBuf,
    pub group: GasGroup,
}

/// List of recordings for `ingest`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub streams: Vec<StreamEntry>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::Io {
                path: path.to_path_buf(),
                source: std::io::Error::new(std::io::ErrorKind::NotFound, "manifest not found"),
            });
        }
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let m: Manifest = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if m.streams.is_empty() {
            return Err(Error::Config(format!("{} lists no streams", path.display())));
        }
        Ok(m)
    }
}

pub fn synth(cfg: &RunConfig, out: &Path, overwrite: bool) -> Result<()> {
    prepare_out_dir(out, overwrite)?;
    let generated = synthesize(&cfg.synth)?;
    let stream_path = out.join(STREAM_FILE);
    let mut file = std::io::BufWriter::new(fs::File::create(&stream_path).map_err(io_err(&stream_path))?);
    generated.stream.write_text(&mut file).map_err(io_err(&stream_path))?;
    drop(file);
    let manifest = Manifest {
        streams: vec![StreamEntry {
            path: STREAM_FILE.into(),
            group: cfg.synth.group,
        }],
    };
    let manifest_path = out.join(MANIFEST_FILE);
    fs::write(&manifest_path, toml::to_string(&manifest).expect("manifest serialises"))
        .map_err(io_err(&manifest_path))?;
    #[derive(Serialize)]
    struct SynthRecord<'a> {
        config: &'a gvit::ingest::SynthConfig,
        rows: usize,
        exposures: usize,
        phases: &'a [gvit::ingest::Phase],
        sensors: &'a gvit::ingest::SensorParams,
    }
    let exposures = generated.phases.iter().filter(|p| p.conc != [0.0, 0.0]).count();
    write_json(
        &out.join("synth.json"),
        &SynthRecord {
            config: &cfg.synth,
            rows: generated.stream.len(),
            exposures,
            phases: &generated.phases,
            sensors: &generated.params,
        },
    )?;
    provenance(out, "synth", cfg, &[])?;
    println!(
        "wrote {} rows ({} exposures, {} phases) to {}",
        generated.stream.len(),
        exposures,
        generated.phases.len(),
        stream_path.display()
    );
    Ok(())
}

pub fn ingest(cfg: &RunConfig, manifest_path: &Path, out: &Path, overwrite: bool) -> Result<()> {
    let manifest = Manifest::load(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let paths: Vec<PathBuf> = manifest.streams.iter().map(|s| base.join(&s.path)).collect();
    if let Some(missing) = paths.iter().find(|p| !p.is_file()) {
        return Err(Error::Io {
            path: missing.clone(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "stream file not found"),
        });
    }
    prepare_out_dir(out, overwrite)?;

    let pipeline = cfg.ingest.pipeline();
    let mut by_group: BTreeMap<GasGroup, Vec<RawStream>> = BTreeMap::new();
    for (entry, path) in manifest.streams.iter().zip(&paths) {
        log::info!("parsing {}", path.display());
        // label graphs by the manifest entry so reports do not depend on where the run lives
        let file = File::open(path).map_err(io_err(path))?;
        let stream = parse_reader(BufReader::new(file), &entry.path.display().to_string(), entry.group)?;
        by_group.entry(entry.group).or_default().push(stream);
    }
    let mut log = Vec::new();
    let mut graphs = Vec::new();
    let mut maxima = BTreeMap::new();
    for (group, streams) in &by_group {
        let m = match cfg.ingest.maxima {
            MaximaSource::Uci => GasMaxima::uci(*group),
            MaximaSource::Observed => observed_maxima(streams),
        };
        maxima.insert(*group, m);
        graphs.extend(build_graphs(streams, &pipeline, m, &mut log)?);
    }
    let mut split = stratified_split(&graphs, cfg.ingest.test_ratio, cfg.seed)?;
    split.assign_folds(&graphs, cfg.ingest.folds)?;
    let info = DatasetInfo::new(graphs.len(), maxima, pipeline, log.clone());
    write_dataset(out, &graphs, &split, &info)?;
    let inputs: Vec<&Path> = paths.iter().map(PathBuf::as_path).collect();
    provenance(out, "ingest", cfg, &inputs)?;

    for r in &log {
        println!("{:<40} {:<24} {:>10}", r.source, r.stage, r.count);
    }
    print_distribution(&graphs, &split.train_val, &split.test);
    Ok(())
}

fn observed_maxima(streams: &[RawStream]) -> GasMaxima {
    let mut m = [0.0f64; 2];
    for s in streams {
        for r in s.rows() {
            m[0] = m[0].max(r.conc[0]);
            m[1] = m[1].max(r.conc[1]);
        }
    }
    GasMaxima(m)
}

fn print_distribution(graphs: &[SensorGraph], train_val: &[usize], test: &[usize]) {
    let all: Vec<usize> = (0..graphs.len()).collect();
    let total = class_counts(graphs, &all);
    let tv = class_counts(graphs, train_val);
    let te = class_counts(graphs, test);
    println!("{:<18} {:<20} {:>6} {:>10} {:>6}", "group", "composition", "total", "train-val", "test");
    for ((group, comp), n) in &total {
        let key = (*group, *comp);
        println!(
            "{:<18} {:<20} {:>6} {:>10} {:>6}",
            group.to_string(),
            comp.label(*group),
            n,
            tv.get(&key).copied().unwrap_or(0),
            te.get(&key).copied().unwrap_or(0)
        );
    }
    println!(
        "{:<18} {:<20} {:>6} {:>10} {:>6}",
        "all",
        "",
        graphs.len(),
        train_val.len(),
        test.len()
    );
}

/// Written by `train`, read by `eval` and `predict`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunInfo {
    pub dataset: PathBuf,
    pub group: GasGroup,
    pub gas_maxima: [f64; 2],
    pub ingest: IngestConfig,
    pub folds: Vec<usize>,
}

fn pick_group(cfg: &RunConfig, graphs: &[SensorGraph]) -> Result<GasGroup> {
    let present: Vec<GasGroup> = GasGroup::ALL
        .into_iter()
        .filter(|g| graphs.iter().any(|x| x.group() == *g))
        .collect();
    match (cfg.group, present.as_slice()) {
        (Some(g), _) if present.contains(&g) => Ok(g),
        (Some(g), _) => Err(Error::Data(format!("dataset has no graphs for group {g}"))),
        (None, [g]) => Ok(*g),
        (None, _) => Err(Error::Config(format!(
            "dataset holds several gas groups {present:?}; set `group` in the config"
        ))),
    }
}

pub fn train(cfg: &RunConfig, dataset_dir: &Path, out: &Path, fold: Option<usize>, overwrite: bool) -> Result<()> {
    let data = read_dataset(dataset_dir)?;
    let group = pick_group(cfg, &data.graphs)?;
    let maxima = data
        .info
        .gas_maxima
        .get(&group)
        .ok_or_else(|| Error::Data(format!("dataset lists no gas maxima for {group}")))?
        .0;
    let folds: Vec<Vec<usize>> = data
        .split
        .folds
        .iter()
        .map(|f| f.iter().copied().filter(|&i| data.graphs[i].group() == group).collect())
        .collect();
    if let Some(k) = fold {
        if k >= folds.len() {
            return Err(Error::Config(format!("--fold {k} out of range ({} folds)", folds.len())));
        }
    }
    prepare_out_dir(out, overwrite)?;
    let run_folds: Vec<usize> = match fold {
        Some(k) => vec![k],
        None => (0..folds.len()).collect(),
    };
    let context = DataContext {
        group,
        gas_maxima: maxima,
    };
    let dataset = fs::canonicalize(dataset_dir).map_err(io_err(dataset_dir))?;
    write_json(
        &out.join(RUN_FILE),
        &RunInfo {
            dataset: dataset.clone(),
            group,
            gas_maxima: maxima,
            ingest: data.info.ingest.clone(),
            folds: run_folds.clone(),
        },
    )?;
    provenance(out, "train", cfg, &[&dataset])?;
    let result = train_cv(
        &cfg.model,
        Some(context),
        &data.graphs,
        &folds,
        Some(&run_folds),
        &cfg.train,
        Some(out),
    )?;
    for s in &result.report.folds {
        println!(
            "fold {}: selected epoch {} (best val rmse {:.6}, {} train / {} val)",
            s.fold, s.selected_epoch, s.best_val_rmse, s.train_size, s.val_size
        );
    }
    println!(
        "mean best val rmse {:.6} (std {:.6})",
        result.report.mean_val_rmse, result.report.std_val_rmse
    );
    Ok(())
}

struct LoadedRun {
    info: RunInfo,
    fold: usize,
    stored_val_rmse: f64,
    model: GViTModel,
}

fn load_run(run_dir: &Path, fold: Option<usize>) -> Result<LoadedRun> {
    let info: RunInfo = read_json(&run_dir.join(RUN_FILE))?;
    let report: CvReport = read_json(&run_dir.join("cv_report.json"))?;
    let summary = match fold {
        Some(k) => report
            .folds
            .iter()
            .find(|s| s.fold == k)
            .ok_or_else(|| Error::Config(format!("fold {k} was not trained in {}", run_dir.display())))?,
        None => report
            .folds
            .iter()
            .min_by(|a, b| a.best_val_rmse.total_cmp(&b.best_val_rmse))
            .ok_or_else(|| Error::Data(format!("{} lists no trained folds", run_dir.display())))?,
    };
    let model = GViTModel::load(&run_dir.join(format!("fold_{}.json", summary.fold)))?;
    Ok(LoadedRun {
        info,
        fold: summary.fold,
        stored_val_rmse: summary.best_val_rmse,
        model,
    })
}

#[derive(Serialize)]
struct EvalSummary {
    fold: usize,
    stored_val_rmse: f64,
    recomputed_val_rmse: f64,
    gvit: Section,
    knn: Option<Section>,
}

#[derive(Serialize)]
struct Section {
    accuracy: f64,
    mixed_r2: [Option<f64>; 2],
    pure_r2: [Option<f64>; 2],
    rmse: f64,
    anomalies: usize,
}

impl From<&MetricsReport> for Section {
    fn from(r: &MetricsReport) -> Self {
        Section {
            accuracy: r.accuracy,
            mixed_r2: r.r2.mixed,
            pure_r2: r.r2.pure,
            rmse: r.rmse,
            anomalies: r.anomalies.iter().sum(),
        }
    }
}

fn fmt_r2(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"))
}

fn print_report(r: &MetricsReport) {
    let names = r.group.gas_names();
    println!(
        "{}: accuracy {:.4} ({} samples, {} none)  rmse {:.5}",
        r.model,
        r.accuracy,
        r.n_samples,
        r.anomalies.iter().sum::<usize>(),
        r.rmse
    );
    for g in 0..2 {
        println!(
            "  {:<9} mixed R² {:>8}  pure R² {:>8}",
            names[g],
            fmt_r2(r.r2.mixed[g]),
            fmt_r2(r.r2.pure[g])
        );
    }
}

pub fn eval(cfg: &RunConfig, run_dir: &Path, fold: Option<usize>, with_knn: bool, out: Option<&Path>) -> Result<()> {
    let run = load_run(run_dir, fold)?;
    let data = read_dataset(&run.info.dataset)?;
    let group = run.info.group;
    let test: Vec<SensorGraph> = data
        .select(&data.split.test)
        .into_iter()
        .filter(|g| g.group() == group)
        .collect();
    let report = evaluate(&run.model, &test, cfg.eval.threshold)?;
    report.check_invariants()?;
    let val_idx: Vec<usize> = data
        .split
        .folds
        .get(run.fold)
        .ok_or_else(|| Error::Data(format!("dataset has no fold {}", run.fold)))?
        .iter()
        .copied()
        .filter(|&i| data.graphs[i].group() == group)
        .collect();
    let recomputed = validation_rmse(&run.model, &data.select(&val_idx))?;

    let out_dir = out.map(Path::to_path_buf).unwrap_or_else(|| run_dir.join("eval"));
    fs::create_dir_all(&out_dir).map_err(io_err(&out_dir))?;
    emit_report(&report, &out_dir)?;
    print_report(&report);
    let knn = if with_knn {
        let train: Vec<SensorGraph> = data
            .select(&data.split.train_val)
            .into_iter()
            .filter(|g| g.group() == group)
            .collect();
        let k = knn_baseline(&train, &test, cfg.eval.knn_k, cfg.eval.knn_window, cfg.eval.threshold)?;
        k.check_invariants()?;
        emit_report(&k, &out_dir)?;
        print_report(&k);
        Some(k)
    } else {
        None
    };
    println!(
        "fold {}: stored best val rmse {:.9}, recomputed {:.9}",
        run.fold, run.stored_val_rmse, recomputed
    );
    write_json(
        &out_dir.join("eval_summary.json"),
        &EvalSummary {
            fold: run.fold,
            stored_val_rmse: run.stored_val_rmse,
            recomputed_val_rmse: recomputed,
            gvit: (&report).into(),
            knn: knn.as_ref().map(Section::from),
        },
    )?;
    provenance(&out_dir, "eval", cfg, &[run_dir, &run.info.dataset])
}

#[derive(Serialize)]
struct Prediction {
    composition: Option<Composition>,
    label: String,
    ppm: [f64; 2],
    normalized: [f64; 2],
    nodes: usize,
}

fn air_mean(rows: &[StreamRow], factor: usize) -> Option<[f64; SENSOR_CHANNELS]> {
    let kept: Vec<&StreamRow> = rows.iter().step_by(factor).collect();
    if kept.is_empty() {
        return None;
    }
    let mut mean = [0.0; SENSOR_CHANNELS];
    for r in &kept {
        for (m, v) in mean.iter_mut().zip(&r.sensors) {
            *m += v;
        }
    }
    Some(mean.map(|m| m / kept.len() as f64))
}

pub fn predict(
    cfg: &RunConfig,
    run_dir: &Path, input: &Path, air: Option<&Path>, fold: Option<usize>, out: Option<&Path>) -> Result<()> {
    let run = load_run(run_dir, fold)?;
    let group = run.info.group;
    let factor = run.info.ingest.downsample_factor;
    let slice = parse_stream(input, group)?;
    let (air_rows, gas_rows): (Vec<StreamRow>, Vec<StreamRow>) = slice.rows().iter().partition(|r| r.is_air());

    let prediction = if gas_rows.is_empty() {
        // setpoints say air: nothing to identify
        Prediction {
            composition: None,
            label: "none".into(),
            ppm: [0.0; 2],
            normalized: [0.0; 2],
            nodes: 0,
        }
    } else {
        let reference = match air {
            Some(p) => parse_stream(p, group)?.rows().to_vec(),
            None => air_rows,
        };
        let baseline = air_mean(&reference, factor).ok_or_else(|| {
            Error::Data("no air reference: pass --air or include air rows in the slice".into())
        })?;
        let exposure = downsample(&RawStream::new(group, input.display().to_string(), gas_rows)?, factor)?;
        if exposure.is_empty() {
            return Err(Error::Data("slice has no rows left after downsampling".into()));
        }
        let n = exposure.len();
        let mut data = Vec::with_capacity(n * SENSOR_CHANNELS);
        for r in exposure.rows() {
            data.extend(r.sensors.iter().zip(&baseline).map(|(v, b)| v - b));
        }
        let features = Tensor::new(vec![n, SENSOR_CHANNELS], data)?;
        let raw = run.model.forward_features(&features)?;
        let normalized = raw.map(|v| v.clamp(0.0, 1.0));
        let composition = predict_composition(normalized, cfg.eval.threshold);
        Prediction {
            composition,
            label: composition.map_or_else(|| "none".into(), |c| c.label(group)),
            ppm: denormalize(normalized, run.info.gas_maxima),
            normalized,
            nodes: n,
        }
    };
    let names = group.gas_names();
    println!("composition: {}", prediction.label);
    for g in 0..2 {
        println!("{}: {:.3} ppm", names[g], prediction.ppm[g]);
    }
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        write_json(&dir.join("prediction.json"), &prediction)?;
    }
    Ok(())
}
