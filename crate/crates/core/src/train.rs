//! RMSE training with Adam, gradient accumulation over variable-length
//! graphs and per-epoch validation-based model selection.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{SensorGraph, SENSOR_CHANNELS};
use crate::model::{GViTConfig, GViTModel};
use crate::tensor::{adam_step, clip_global_norm, AdamConfig, AdamState, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Graphs whose gradients are accumulated per optimizer step.
    pub accumulation: usize,
    /// Global gradient-norm cap; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub seed: u64,
    /// Fit per-channel feature scales on the training graphs before training.
    pub fit_feature_scale: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        TrainConfig {
            epochs: 30,
            lr: adam.lr,
            beta1: adam.beta1,
            beta2: adam.beta2,
            adam_eps: adam.eps,
            accumulation: 8,
            clip_norm: Some(1.0),
            seed: 0,
            fit_feature_scale: true,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.accumulation == 0 {
            return Err(Error::Config("accumulation must be >= 1".into()));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::Config(format!("clip_norm must be > 0, got {c}")));
            }
        }
        self.adam().validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub selected_epoch: usize,
    pub epoch_seconds: Vec<f64>,
}

impl TrainHistory {
    pub fn best_val(&self) -> f64 {
        self.val_loss[self.selected_epoch]
    }

    /// One record per epoch: `epoch,train_rmse,val_rmse,seconds,selected`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["epoch", "train_rmse", "val_rmse", "seconds", "selected"])?;
        for e in 0..self.train_loss.len() {
            w.write_record([
                e.to_string(),
                self.train_loss[e].to_string(),
                self.val_loss[e].to_string(),
                self.epoch_seconds[e].to_string(),
                (e == self.selected_epoch).to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Index of the minimum validation loss, earliest on ties.
pub fn select_epoch(val_loss: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, v) in val_loss.iter().enumerate() {
        if best.is_none_or(|b| *v < val_loss[b]) {
            best = Some(i);
        }
    }
    best
}

/// RMSE between `s×2` prediction and target matrices, on the tape.
pub fn rmse_loss(tape: &mut Tape, pred: Var, target: Var) -> Result<Var> {
    let (s, gases) = tape.value(pred).as_matrix("rmse_loss")?;
    if tape.value(target).shape() != [s, gases] {
        return Err(Error::dim("rmse_loss", tape.value(pred).shape(), tape.value(target).shape()));
    }
    tape.rmse(pred, target)
}

/// RMSE over per-sample concentration pairs.
pub fn rmse(preds: &[[f64; 2]], targets: &[[f64; 2]]) -> f64 {
    let sq: f64 = preds
        .iter()
        .zip(targets)
        .flat_map(|(p, t)| [(p[0] - t[0]).powi(2), (p[1] - t[1]).powi(2)])
        .sum();
    (sq / (2 * preds.len()) as f64).sqrt()
}

/// Per-channel RMS of node features over `graphs`; channels that are
/// identically zero get scale 1.
pub fn fit_feature_scale(graphs: &[SensorGraph]) -> Vec<f64> {
    let mut sq = [0.0; SENSOR_CHANNELS];
    let mut count = 0usize;
    for g in graphs {
        let x = g.node_features();
        for r in 0..x.rows() {
            for (s, v) in sq.iter_mut().zip(x.row(r)) {
                *s += v * v;
            }
        }
        count += x.rows();
    }
    sq.iter()
        .map(|s| {
            let rms = (s / count.max(1) as f64).sqrt();
            if rms > 1e-12 {
                rms
            } else {
                1.0
            }
        })
        .collect()
}

/// Result of one accumulated gradient computation.
#[derive(Clone, Debug)]
pub struct BatchGradient {
    /// `∂ RMSE(batch) / ∂ θ` in parameter order.
    pub grads: Vec<Tensor>,
    /// RMSE of the batch before the update.
    pub loss: f64,
    /// Raw predictions, one per graph.
    pub preds: Vec<[f64; 2]>,
}

/// Gradient of the batch RMSE, computed one graph per tape.
///
/// Each graph contributes the gradient of its squared error; the sum is
/// rescaled by `1 / (2s · 2·RMSE)`, which is the chain rule through the
/// square root and mean of the batch RMSE.
pub fn batch_gradient(model: &GViTModel, batch: &[&SensorGraph]) -> Result<BatchGradient> {
    if batch.is_empty() {
        return Err(Error::Contract("empty batch".into()));
    }
    let mut acc: Vec<Tensor> = model
        .params()
        .iter()
        .map(|p| Tensor::zeros(p.shape().to_vec()))
        .collect();
    let mut sum_sq = 0.0;
    let mut preds = Vec::with_capacity(batch.len());
    for g in batch {
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape, true);
        let out = model.forward_on(&mut tape, &bound, g)?;
        let out_v = tape.value(out).data();
        let pred = [out_v[0], out_v[1]];
        if !pred.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "prediction for graph {} rows {}..{}",
                g.meta().source,
                g.meta().start_row,
                g.meta().end_row
            )));
        }
        let neg_target = Tensor::matrix(1, 2, g.targets().map(|t| -t).to_vec())?;
        let neg_target = tape.constant(neg_target);
        let diff = tape.add(out, neg_target)?;
        let sq = tape.mul(diff, diff)?;
        let loss = tape.sum(sq);
        sum_sq += tape.value(loss).data()[0];
        let grads = tape.backward(loss)?;
        for (a, v) in acc.iter_mut().zip(bound.vars()) {
            if let Some(gv) = grads.get(*v) {
                for (x, y) in a.data_mut().iter_mut().zip(gv.data()) {
                    *x += y;
                }
            }
        }
        preds.push(pred);
    }
    let n = (2 * batch.len()) as f64;
    let loss = (sum_sq / n).sqrt();
    let coef = if loss > 0.0 { 1.0 / (2.0 * n * loss) } else { 0.0 };
    for a in &mut acc {
        for x in a.data_mut() {
            *x *= coef;
        }
    }
    Ok(BatchGradient {
        grads: acc,
        loss,
        preds,
    })
}

/// Raw-output validation RMSE over `graphs`.
pub fn validation_rmse(model: &GViTModel, graphs: &[SensorGraph]) -> Result<f64> {
    let preds = graphs.iter().map(|g| model.forward(g)).collect::<Result<Vec<_>>>()?;
    let targets: Vec<[f64; 2]> = graphs.iter().map(SensorGraph::targets).collect();
    Ok(rmse(&preds, &targets))
}

#[derive(Clone, Debug)]
pub struct FoldResult {
    pub model: GViTModel,
    pub history: TrainHistory,
}

/// Trains `model` on `train`, keeping the parameters from the epoch with the
/// lowest validation RMSE.
pub fn train_fold(
    mut model: GViTModel,
    train: &[SensorGraph],
    val: &[SensorGraph],
    cfg: &TrainConfig,
) -> Result<FoldResult> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Data(format!(
            "training needs non-empty train and validation sets ({} / {})",
            train.len(),
            val.len()
        )));
    }
    if let Some(ctx) = model.context() {
        if let Some(g) = train.iter().chain(val).find(|g| g.group() != ctx.group) {
            return Err(Error::Data(format!(
                "model is for {} but graph from {} is {}",
                ctx.group,
                g.meta().source,
                g.group()
            )));
        }
    }
    if cfg.fit_feature_scale {
        model.set_feature_scale(fit_feature_scale(train))?;
    }
    let adam = cfg.adam();
    let mut state = AdamState::new(model.params());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = TrainHistory {
        train_loss: Vec::with_capacity(cfg.epochs),
        val_loss: Vec::with_capacity(cfg.epochs),
        selected_epoch: 0,
        epoch_seconds: Vec::with_capacity(cfg.epochs),
    };
    let mut best = model.clone();

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let mut sum_sq = 0.0;
        for chunk in order.chunks(cfg.accumulation) {
            let batch: Vec<&SensorGraph> = chunk.iter().map(|&i| &train[i]).collect();
            let mut step = batch_gradient(&model, &batch)?;
            sum_sq += step.loss * step.loss * (2 * batch.len()) as f64;
            if let Some(c) = cfg.clip_norm {
                clip_global_norm(&mut step.grads, c);
            }
            adam_step(model.params_mut(), &step.grads, &mut state, &adam)?;
            if !model.all_finite() {
                return Err(Error::NonFinite(format!(
                    "parameters after optimizer step {} (epoch {epoch})",
                    state.step_count()
                )));
            }
        }
        let train_loss = (sum_sq / (2 * train.len()) as f64).sqrt();
        let val_loss = validation_rmse(&model, val)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFinite(format!("validation loss at epoch {epoch}")));
        }
        if history.val_loss.iter().all(|&v| val_loss < v) {
            best = model.clone();
            history.selected_epoch = epoch;
        }
        history.train_loss.push(train_loss);
        history.val_loss.push(val_loss);
        history.epoch_seconds.push(started.elapsed().as_secs_f64());
        log::info!(
            "epoch {epoch:>3}: train rmse {train_loss:.5}  val rmse {val_loss:.5}  ({:.1}s)",
            history.epoch_seconds[epoch]
        );
    }
    Ok(FoldResult {
        model: best,
        history,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub fold: usize,
    pub selected_epoch: usize,
    pub best_val_rmse: f64,
    pub train_size: usize,
    pub val_size: usize,
    pub fingerprint: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub folds: Vec<FoldSummary>,
    pub mean_val_rmse: f64,
    /// Population standard deviation of the fold minima.
    pub std_val_rmse: f64,
}

#[derive(Clone, Debug)]
pub struct CvResult {
    pub models: Vec<GViTModel>,
    pub histories: Vec<TrainHistory>,
    pub report: CvReport,
}

/// Seed for fold `k` derived from a base seed.
pub fn fold_seed(base: u64, fold: usize) -> u64 {
    base.wrapping_add(fold as u64)
}

/// Trains one model per fold. `folds` partitions the indices of `graphs`
/// used for training and validation; `run_folds` selects which folds to
/// train (all when `None`). Checkpoints and histories are written to
/// `out_dir` when given.
pub fn train_cv(
    model_cfg: &GViTConfig,
    context: Option<crate::model::DataContext>,
    graphs: &[SensorGraph],
    folds: &[Vec<usize>],
    run_folds: Option<&[usize]>,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<CvResult> {
    if folds.len() < 2 {
        return Err(Error::Domain(format!("cross-validation needs >= 2 folds, got {}", folds.len())));
    }
    let selected: Vec<usize> = match run_folds {
        Some(f) => f.to_vec(),
        None => (0..folds.len()).collect(),
    };
    if let Some(bad) = selected.iter().find(|&&k| k >= folds.len()) {
        return Err(Error::Domain(format!("fold {bad} out of range ({} folds)", folds.len())));
    }
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut models = Vec::new();
    let mut histories = Vec::new();
    let mut summaries = Vec::new();
    for k in selected {
        let val: Vec<SensorGraph> = folds[k].iter().map(|&i| graphs[i].clone()).collect();
        let train: Vec<SensorGraph> = folds
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != k)
            .flat_map(|(_, f)| f.iter().map(|&i| graphs[i].clone()))
            .collect();
        let mut fold_model_cfg = model_cfg.clone();
        fold_model_cfg.seed = fold_seed(model_cfg.seed, k);
        let mut model = GViTModel::new(fold_model_cfg)?;
        if let Some(ctx) = context {
            model.set_context(ctx);
        }
        let fold_cfg = TrainConfig {
            seed: fold_seed(cfg.seed, k),
            ..cfg.clone()
        };
        log::info!("fold {k}: {} train / {} val graphs", train.len(), val.len());
        let result = train_fold(model, &train, &val, &fold_cfg)?;
        summaries.push(FoldSummary {
            fold: k,
            selected_epoch: result.history.selected_epoch,
            best_val_rmse: result.history.best_val(),
            train_size: train.len(),
            val_size: val.len(),
            fingerprint: result.model.fingerprint(),
        });
        if let Some(dir) = out_dir {
            result.model.save(&dir.join(format!("fold_{k}.json")))?;
            result.history.write_csv(&dir.join(format!("history_fold_{k}.csv")))?;
        }
        models.push(result.model);
        histories.push(result.history);
    }
    let n = summaries.len() as f64;
    let mean = summaries.iter().map(|s| s.best_val_rmse).sum::<f64>() / n;
    let var = summaries.iter().map(|s| (s.best_val_rmse - mean).powi(2)).sum::<f64>() / n;
    let report = CvReport {
        folds: summaries,
        mean_val_rmse: mean,
        std_val_rmse: var.sqrt(),
    };
    if let Some(dir) = out_dir {
        let path = dir.join("cv_report.json");
        let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        f.write_all(serde_json::to_string_pretty(&report)?.as_bytes())
            .map_err(|e| Error::io(&path, e))?;
    }
    Ok(CvResult {
        models,
        histories,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rmse_worked_values() {
        assert_eq!(rmse(&[[0.5, 0.5]], &[[0.0, 0.0]]), 0.5);
        let v = rmse(&[[1.0, 0.0], [0.0, 1.0]], &[[0.0, 0.0], [0.0, 0.0]]);
        assert!((v - 0.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(rmse(&[[0.2, 0.9]], &[[0.2, 0.9]]), 0.0);
    }

    #[test]
    fn rmse_loss_checks_shapes() {
        let mut tape = Tape::new();
        let p = tape.constant(Tensor::zeros(vec![2, 2]));
        let t = tape.constant(Tensor::zeros(vec![1, 2]));
        assert!(matches!(rmse_loss(&mut tape, p, t), Err(Error::Dimension { .. })));
        let p = tape.constant(Tensor::matrix(1, 2, vec![0.5, 0.5]).unwrap());
        let t = tape.constant(Tensor::zeros(vec![1, 2]));
        let l = rmse_loss(&mut tape, p, t).unwrap();
        assert_eq!(tape.value(l).data(), &[0.5]);
    }

    #[test]
    fn select_epoch_prefers_earliest_minimum() {
        assert_eq!(select_epoch(&[0.3, 0.1, 0.2, 0.1]), Some(1));
        assert_eq!(select_epoch(&[0.5]), Some(0));
        assert_eq!(select_epoch(&[]), None);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { epochs: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { lr: 0.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { accumulation: 0, ..Default::default() }.validate().is_err());
    }
}
