//! Evaluation surfaces: composition accuracy and confusion matrix, R² per
//! gas split by mixed and pure samples, RMSE, and a fixed-window KNN
//! comparator that only sees the last few nodes of each graph.
//!
//! Reports are written as `<name>_report.json` plus a flat per-graph table
//! `<name>_predictions.csv` with the columns of [`PredictionRecord`].

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Composition, GasGroup, SensorGraph, SENSOR_CHANNELS};
use crate::model::{predict_composition, GViTModel};
use crate::train::rmse;

/// Coefficient of determination `1 − SS_res / SS_tot`. `None` when fewer than
/// two samples are given or the truths are constant.
pub fn r_squared(preds: &[f64], truths: &[f64]) -> Option<f64> {
    if truths.len() < 2 || preds.len() != truths.len() {
        return None;
    }
    let mean = truths.iter().sum::<f64>() / truths.len() as f64;
    let ss_tot: f64 = truths.iter().map(|t| (t - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return None;
    }
    let ss_res: f64 = preds.iter().zip(truths).map(|(p, t)| (p - t).powi(2)).sum();
    Some(1.0 - ss_res / ss_tot)
}

/// One row of the per-graph prediction table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub index: usize,
    pub source: String,
    pub start_row: usize,
    pub n_nodes: usize,
    pub true_a: f64,
    pub true_b: f64,
    /// Predictions clamped to `[0, 1]`.
    pub pred_a: f64,
    pub pred_b: f64,
    pub raw_a: f64,
    pub raw_b: f64,
    pub true_composition: Composition,
    /// Empty when neither gas reaches the threshold.
    pub pred_composition: Option<Composition>,
}

/// R² for each gas over mixture samples and over samples of that gas alone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct R2Table {
    pub mixed: [Option<f64>; 2],
    pub pure: [Option<f64>; 2],
    pub mixed_count: usize,
    pub pure_count: [usize; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model: String,
    pub group: GasGroup,
    pub threshold: f64,
    pub n_samples: usize,
    pub accuracy: f64,
    /// `confusion[true][pred]` over A, B, A+B.
    pub confusion: [[usize; 3]; 3],
    /// Per true class, predictions with neither gas present.
    pub anomalies: [usize; 3],
    pub class_counts: [usize; 3],
    pub r2: R2Table,
    /// RMSE over clamped predictions.
    pub rmse: f64,
    /// RMSE over raw model outputs, i.e. the training loss.
    pub rmse_raw: f64,
    #[serde(skip)]
    pub records: Vec<PredictionRecord>,
}

impl MetricsReport {
    /// Builds a report from raw (unclamped) predictions.
    pub fn from_predictions(
        model: &str,
        graphs: &[SensorGraph],
        raw: &[[f64; 2]],
        threshold: f64,
    ) -> Result<Self> {
        if graphs.is_empty() {
            return Err(Error::Data("cannot evaluate an empty test set".into()));
        }
        if graphs.len() != raw.len() {
            return Err(Error::dim("MetricsReport", &[graphs.len()], &[raw.len()]));
        }
        let group = graphs[0].group();
        if let Some(g) = graphs.iter().find(|g| g.group() != group) {
            return Err(Error::Data(format!(
                "mixed gas groups in one report: {group} and {}",
                g.group()
            )));
        }
        let records: Vec<PredictionRecord> = graphs
            .iter()
            .zip(raw)
            .enumerate()
            .map(|(index, (g, r))| {
                let clamped = r.map(|v| v.clamp(0.0, 1.0));
                let t = g.targets();
                PredictionRecord {
                    index,
                    source: g.meta().source.clone(),
                    start_row: g.meta().start_row,
                    n_nodes: g.n_nodes(),
                    true_a: t[0],
                    true_b: t[1],
                    pred_a: clamped[0],
                    pred_b: clamped[1],
                    raw_a: r[0],
                    raw_b: r[1],
                    true_composition: g.composition(),
                    pred_composition: predict_composition(clamped, threshold),
                }
            })
            .collect();
        Ok(Self::from_records(model, group, threshold, records))
    }

    /// Recomputes every aggregate from the per-graph table.
    pub fn from_records(model: &str, group: GasGroup, threshold: f64, records: Vec<PredictionRecord>) -> Self {
        let mut confusion = [[0usize; 3]; 3];
        let mut anomalies = [0usize; 3];
        let mut class_counts = [0usize; 3];
        for r in &records {
            let t = r.true_composition.index();
            class_counts[t] += 1;
            match r.pred_composition {
                Some(p) => confusion[t][p.index()] += 1,
                None => anomalies[t] += 1,
            }
        }
        let correct: usize = (0..3).map(|i| confusion[i][i]).sum();
        let n = records.len();

        let r2_for = |filter: &dyn Fn(&PredictionRecord) -> bool, gas: usize| {
            let (p, t): (Vec<f64>, Vec<f64>) = records
                .iter()
                .filter(|r| filter(r))
                .map(|r| if gas == 0 { (r.pred_a, r.true_a) } else { (r.pred_b, r.true_b) })
                .unzip();
            (r_squared(&p, &t), p.len())
        };
        let is_mixed = |r: &PredictionRecord| r.true_composition == Composition::Mixture;
        let is_a = |r: &PredictionRecord| r.true_composition == Composition::A;
        let is_b = |r: &PredictionRecord| r.true_composition == Composition::B;
        let (mixed_a, mixed_count) = r2_for(&is_mixed, 0);
        let (mixed_b, _) = r2_for(&is_mixed, 1);
        let (pure_a, pure_a_count) = r2_for(&is_a, 0);
        let (pure_b, pure_b_count) = r2_for(&is_b, 1);

        let truths: Vec<[f64; 2]> = records.iter().map(|r| [r.true_a, r.true_b]).collect();
        let clamped: Vec<[f64; 2]> = records.iter().map(|r| [r.pred_a, r.pred_b]).collect();
        let raw: Vec<[f64; 2]> = records.iter().map(|r| [r.raw_a, r.raw_b]).collect();

        MetricsReport {
            model: model.to_string(),
            group,
            threshold,
            n_samples: n,
            accuracy: correct as f64 / n as f64,
            confusion,
            anomalies,
            class_counts,
            r2: R2Table {
                mixed: [mixed_a, mixed_b],
                pure: [pure_a, pure_b],
                mixed_count,
                pure_count: [pure_a_count, pure_b_count],
            },
            rmse: rmse(&clamped, &truths),
            rmse_raw: rmse(&raw, &truths),
            records,
        }
    }

    /// Checks the structural invariants every report must satisfy.
    pub fn check_invariants(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Data(format!("report invariant violated: {m}")));
        let matrix_total: usize = self.confusion.iter().flatten().sum();
        let anomaly_total: usize = self.anomalies.iter().sum();
        if matrix_total + anomaly_total != self.n_samples || self.records.len() != self.n_samples {
            return fail(format!(
                "confusion {matrix_total} + anomalies {anomaly_total} != {} samples",
                self.n_samples
            ));
        }
        for c in 0..3 {
            let row: usize = self.confusion[c].iter().sum::<usize>() + self.anomalies[c];
            if row != self.class_counts[c] {
                return fail(format!("row {c} sums to {row}, class has {}", self.class_counts[c]));
            }
        }
        let trace: usize = (0..3).map(|i| self.confusion[i][i]).sum();
        if self.accuracy != trace as f64 / self.n_samples as f64 {
            return fail("accuracy != trace / total".into());
        }
        let r2s = self.r2.mixed.iter().chain(&self.r2.pure).flatten();
        if r2s.clone().any(|v| *v > 1.0) {
            return fail("R² above 1".into());
        }
        Ok(())
    }
}

/// Runs the model on every graph and scores the predictions.
pub fn evaluate(model: &GViTModel, graphs: &[SensorGraph], threshold: f64) -> Result<MetricsReport> {
    if graphs.is_empty() {
        return Err(Error::Data("cannot evaluate an empty test set".into()));
    }
    if let Some(ctx) = model.context() {
        if let Some(g) = graphs.iter().find(|g| g.group() != ctx.group) {
            return Err(Error::Data(format!(
                "model was trained on {} but test graph from {} is {}",
                ctx.group,
                g.meta().source,
                g.group()
            )));
        }
    }
    let raw = graphs.iter().map(|g| model.forward(g)).collect::<Result<Vec<_>>>()?;
    MetricsReport::from_predictions("gvit", graphs, &raw, threshold)
}

fn window_features(g: &SensorGraph, window: usize) -> Result<Vec<f64>> {
    let n = g.n_nodes();
    if n < window {
        return Err(Error::Domain(format!(
            "graph from {} has {n} nodes, fewer than the {window}-node window",
            g.meta().source
        )));
    }
    Ok(g.node_features().data()[(n - window) * SENSOR_CHANNELS..].to_vec())
}

/// Nearest-neighbour regression on the last `window` nodes of each graph.
/// Concentrations are the mean targets of the `k` closest training graphs
/// (Euclidean, ties to the lower index).
pub fn knn_baseline(
    train: &[SensorGraph],
    test: &[SensorGraph],
    k: usize,
    window: usize,
    threshold: f64,
) -> Result<MetricsReport> {
    if k == 0 || k > train.len() {
        return Err(Error::Domain(format!(
            "knn needs 1 <= k <= {} training graphs, got k = {k}",
            train.len()
        )));
    }
    if window == 0 {
        return Err(Error::Domain("knn window must be >= 1".into()));
    }
    let train_x = train
        .iter()
        .map(|g| window_features(g, window))
        .collect::<Result<Vec<_>>>()?;
    let mut raw = Vec::with_capacity(test.len());
    for g in test {
        let x = window_features(g, window)?;
        let mut dist: Vec<(f64, usize)> = train_x
            .iter()
            .enumerate()
            .map(|(i, t)| (t.iter().zip(&x).map(|(a, b)| (a - b).powi(2)).sum::<f64>(), i))
            .collect();
        dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut mean = [0.0; 2];
        for &(_, i) in &dist[..k] {
            let t = train[i].targets();
            mean[0] += t[0];
            mean[1] += t[1];
        }
        raw.push(mean.map(|v| v / k as f64));
    }
    MetricsReport::from_predictions("knn", test, &raw, threshold)
}

fn report_paths(dir: &Path, name: &str) -> (std::path::PathBuf, std::path::PathBuf) {
    (
        dir.join(format!("{name}_report.json")),
        dir.join(format!("{name}_predictions.csv")),
    )
}

/// Writes `<model>_report.json` and `<model>_predictions.csv` into `dir`.
pub fn emit_report(report: &MetricsReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (json, table) = report_paths(dir, &report.model);
    fs::write(&json, serde_json::to_string_pretty(report)?).map_err(|e| Error::io(&json, e))?;
    let mut w = csv::Writer::from_path(&table)?;
    for r in &report.records {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(&table, e))
}

/// Reads a report written by [`emit_report`], including its per-graph table.
pub fn load_report(dir: &Path, name: &str) -> Result<MetricsReport> {
    let (json, table) = report_paths(dir, name);
    let text = fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
    let mut report: MetricsReport = serde_json::from_str(&text)?;
    let mut rdr = csv::Reader::from_path(&table)?;
    report.records = rdr.deserialize().collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn r_squared_reference_cases() {
        let t = [0.1, 0.4, 0.5, 0.9];
        assert_eq!(r_squared(&t, &t), Some(1.0));
        let mean = [0.475; 4];
        assert!(r_squared(&mean, &t).unwrap().abs() < 1e-12);
        let bad = [0.9, 0.5, 0.4, 0.1];
        assert!(r_squared(&bad, &t).unwrap() < 0.0);
        assert_eq!(r_squared(&[0.1, 0.2], &[0.3, 0.3]), None);
        assert_eq!(r_squared(&[0.1], &[0.3]), None);
    }

    fn graph(targets: [f64; 2], fill: f64, n: usize) -> SensorGraph {
        use crate::graph::GraphMeta;
        use crate::tensor::Tensor;
        SensorGraph::new(
            Tensor::filled(vec![n, SENSOR_CHANNELS], fill),
            targets,
            [targets[0] * 100.0, targets[1] * 20.0],
            GasGroup::CoEthylene,
            GraphMeta {
                source: format!("g{fill}"),
                start_row: 0,
                end_row: n,
            },
        )
        .unwrap()
    }

    fn corpus() -> Vec<SensorGraph> {
        vec![
            graph([0.2, 0.0], 0.0, 5),
            graph([0.6, 0.0], 1.0, 6),
            graph([0.0, 0.3], 2.0, 7),
            graph([0.0, 0.9], 3.0, 5),
            graph([0.4, 0.5], 4.0, 8),
            graph([0.7, 0.2], 5.0, 9),
        ]
    }

    #[test]
    fn exact_predictions_score_perfectly() {
        let gs = corpus();
        let raw: Vec<[f64; 2]> = gs.iter().map(|g| g.targets()).collect();
        let r = MetricsReport::from_predictions("oracle", &gs, &raw, 0.01).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.rmse, 0.0);
        assert_eq!(r.r2.mixed, [Some(1.0), Some(1.0)]);
        assert_eq!(r.r2.pure, [Some(1.0), Some(1.0)]);
        assert_eq!(r.confusion, [[2, 0, 0], [0, 2, 0], [0, 0, 2]]);
        assert_eq!(r.anomalies, [0; 3]);
        r.check_invariants().unwrap();
    }

    #[test]
    fn none_predictions_are_anomalies() {
        let gs = corpus();
        let mut raw: Vec<[f64; 2]> = gs.iter().map(|g| g.targets()).collect();
        raw[0] = [-0.2, 0.005];
        raw[4] = [0.5, 0.0];
        let r = MetricsReport::from_predictions("m", &gs, &raw, 0.01).unwrap();
        assert_eq!(r.anomalies, [1, 0, 0]);
        assert_eq!(r.confusion[2], [1, 0, 1]);
        assert_eq!(r.accuracy, 4.0 / 6.0);
        assert_eq!(r.records[0].pred_a, 0.0);
        assert!(r.rmse_raw > r.rmse);
        r.check_invariants().unwrap();
    }

    #[test]
    fn knn_degenerate_cases() {
        let gs = corpus();
        let r = knn_baseline(&gs, &gs[2..3], 1, 5, 0.01).unwrap();
        assert_eq!([r.records[0].raw_a, r.records[0].raw_b], [0.0, 0.3]);
        let r = knn_baseline(&gs, &gs[..1], gs.len(), 5, 0.01).unwrap();
        let mean = [1.9 / 6.0, 1.9 / 6.0];
        assert!((r.records[0].raw_a - mean[0]).abs() < 1e-12);
        assert!((r.records[0].raw_b - mean[1]).abs() < 1e-12);
        assert!(matches!(knn_baseline(&gs, &gs, 7, 5, 0.01), Err(Error::Domain(_))));
        let short = vec![graph([0.1, 0.0], 0.0, 4)];
        assert!(matches!(knn_baseline(&gs, &short, 1, 5, 0.01), Err(Error::Domain(_))));
    }

    #[test]
    fn empty_set_rejected() {
        assert!(matches!(MetricsReport::from_predictions("m", &[], &[], 0.01), Err(Error::Data(_))));
    }

    #[test]
    fn emitted_report_round_trips() {
        let gs = corpus();
        let raw: Vec<[f64; 2]> = gs.iter().enumerate().map(|(i, g)| g.targets().map(|t| t + 0.013 * i as f64 - 0.03)).collect();
        let r = MetricsReport::from_predictions("gvit", &gs, &raw, 0.01).unwrap();
        let dir = tempfile::tempdir().unwrap();
        emit_report(&r, dir.path()).unwrap();
        let back = load_report(dir.path(), "gvit").unwrap();
        assert_eq!(back, r);
        assert_eq!(back.records.len(), gs.len());
        let recomputed = MetricsReport::from_records("gvit", r.group, r.threshold, back.records.clone());
        assert_eq!(recomputed.accuracy, r.accuracy);
    }
}
