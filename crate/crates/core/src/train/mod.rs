//! Classifier pretraining, one-time module training and per-client
//! last-layer fine-tuning.

mod checkpoint;
mod classifier;
mod sgd;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{make_epoch_windows, ClientSet, FeatureRecord, SplitMode};
use crate::error::{Error, Result};
use crate::harness::evaluate;
use crate::model::{self, IciiaConfig, IciiaParams};
use crate::tensor::ops::{self, MacCounter};
use crate::tensor::{Matrix, Scalar};

pub use checkpoint::{sidecar_path, Checkpoint};
pub use classifier::{argmax, records_matrix, Classifier};
pub use sgd::Sgd;

/// Validation history used for model selection during module training.
pub const SELECTION_HISTORY: usize = 15;

/// A classifier, optionally preceded by the attention module.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T: Scalar> {
    pub classifier: Classifier<T>,
    pub iciia: Option<(IciiaConfig, IciiaParams<T>)>,
}

impl<T: Scalar> Model<T> {
    pub fn baseline(classifier: Classifier<T>) -> Self {
        Self {
            classifier,
            iciia: None,
        }
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            classifier: self.classifier.cast(),
            iciia: self.iciia.as_ref().map(|(c, p)| (c.clone(), p.cast())),
        }
    }
}

/// How per-row cross-entropy terms are combined within one batch or window.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossReduction {
    Sum,
    #[default]
    Mean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub freeze_classifier: bool,
    /// Loss reduction for module training windows.
    pub reduction: LossReduction,
    /// Loss reduction for the linear-head procedures (pretraining, fine-tuning).
    pub head_reduction: LossReduction,
    /// Start the module with zero output and second feed-forward projection
    /// weights, so each layer initially reduces to layer norm of its input.
    pub zero_residual_init: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            momentum: 0.0,
            batch_size: 16,
            max_epochs: 100,
            patience: 10,
            seed: 0,
            freeze_classifier: true,
            reduction: LossReduction::Mean,
            head_reduction: LossReduction::Sum,
            zero_residual_init: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::Config(format!(
                "learning rate {} must be finite and non-negative",
                self.learning_rate
            )));
        }
        if !(self.momentum.is_finite() && (0.0..1.0).contains(&self.momentum)) {
            return Err(Error::Config(format!("momentum {} must lie in [0, 1)", self.momentum)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if self.patience > self.max_epochs {
            return Err(Error::Config(format!(
                "patience {} exceeds max_epochs {}",
                self.patience, self.max_epochs
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
}

/// The selected model plus the per-epoch trajectory (epoch 0 is the
/// untrained starting point, with no training loss).
#[derive(Clone, Debug)]
pub struct TrainOutcome<T: Scalar> {
    pub model: Model<T>,
    pub best_val_accuracy: f64,
    pub best_epoch: usize,
    pub history: Vec<EpochStats>,
}

impl<T: Scalar> TrainOutcome<T> {
    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model: self.model.cast(),
            best_val_accuracy: self.best_val_accuracy,
            epoch: self.best_epoch,
        }
    }
}

fn loss_and_grad<T: Scalar>(
    logits: &Matrix<T>,
    labels: &[usize],
    reduction: LossReduction,
) -> Result<(f64, Matrix<T>)> {
    let (loss, mut grad) = ops::cross_entropy(logits, labels)?;
    match reduction {
        LossReduction::Mean => Ok((loss.as_f64(), grad)),
        LossReduction::Sum => {
            let n = T::lit(labels.len() as f64);
            for g in grad.as_mut_slice() {
                *g *= n;
            }
            Ok((loss.as_f64() * labels.len() as f64, grad))
        }
    }
}

fn check_finite(loss: f64, epoch: usize) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Range(format!(
            "training loss became non-finite in epoch {epoch}"
        )))
    }
}

/// Shared early-stopping loop. `step` runs one epoch and returns its mean
/// loss; `score` returns the validation accuracy of the current state.
fn early_stopping<S: Clone>(
    cfg: &TrainConfig,
    state: &mut S,
    mut step: impl FnMut(&mut S, usize) -> Result<f64>,
    mut score: impl FnMut(&S) -> Result<f64>,
) -> Result<(S, f64, usize, Vec<EpochStats>)> {
    let initial = score(state)?;
    let mut history = vec![EpochStats {
        epoch: 0,
        train_loss: f64::NAN,
        val_accuracy: initial,
    }];
    let (mut best, mut best_acc, mut best_epoch) = (state.clone(), initial, 0);
    for epoch in 1..=cfg.max_epochs {
        let loss = step(state, epoch)?;
        let acc = score(state)?;
        log::debug!("epoch {epoch}: loss {loss:.5} val {acc:.4}");
        history.push(EpochStats {
            epoch,
            train_loss: loss,
            val_accuracy: acc,
        });
        if acc > best_acc {
            best = state.clone();
            best_acc = acc;
            best_epoch = epoch;
        } else if epoch - best_epoch >= cfg.patience {
            break;
        }
    }
    Ok((best, best_acc, best_epoch, history))
}

fn pooled(set: &ClientSet) -> Vec<&FeatureRecord> {
    set.clients.values().flatten().collect()
}

fn classifier_epoch<T: Scalar>(
    clf: &mut Classifier<T>,
    opt: &mut Sgd<T>,
    records: &[&FeatureRecord],
    cfg: &TrainConfig,
    seed: u64,
    epoch: usize,
) -> Result<f64> {
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let dim = clf.feature_dim();
    let mut total = 0.0;
    for chunk in order.chunks(cfg.batch_size) {
        let batch: Vec<&FeatureRecord> = chunk.iter().map(|&i| records[i]).collect();
        let x = records_matrix::<T>(&batch, dim)?;
        let labels: Vec<usize> = batch.iter().map(|r| r.label).collect();
        let (loss, grad) = loss_and_grad(&clf.logits(&x)?, &labels, cfg.head_reduction)?;
        check_finite(loss, epoch)?;
        total += match cfg.head_reduction {
            LossReduction::Sum => loss,
            LossReduction::Mean => loss * labels.len() as f64,
        };
        clf.zero_grad();
        clf.backward(&x, &grad)?;
        opt.step(clf.params_mut());
    }
    Ok(total / records.len() as f64)
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64).wrapping_mul(0xD6E8_FEB8_6659_FD93)
}

/// Trains a linear classifier from zeros on the pooled training records,
/// ignoring client identity.
pub fn train_global_classifier<T: Scalar>(
    train: &ClientSet,
    val: &ClientSet,
    num_classes: usize,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    let records = pooled(train);
    let dim = train
        .feature_dim()
        .ok_or_else(|| Error::Usage("training set has no records".into()))?;
    if let Some(d) = val.feature_dim() {
        if d != dim {
            return Err(Error::dims("train_global_classifier", (1, dim), (1, d)));
        }
    }
    let val_records = pooled(val);
    let mut opt = Sgd::new(cfg.learning_rate, cfg.momentum);
    let mut clf = Classifier::<T>::zeros(dim, num_classes);
    let (best, acc, epoch, history) = early_stopping(
        cfg,
        &mut clf,
        |c, e| classifier_epoch(c, &mut opt, &records, cfg, epoch_seed(cfg.seed, e), e),
        |c| c.accuracy(&val_records),
    )?;
    Ok(TrainOutcome {
        model: Model::baseline(best),
        best_val_accuracy: acc,
        best_epoch: epoch,
        history,
    })
}

fn iciia_epoch<T: Scalar>(
    model: &mut Model<T>,
    opt: &mut Sgd<T>,
    train: &ClientSet,
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<f64> {
    let Model { classifier, iciia } = model;
    let (icfg, params) = iciia.as_mut().expect("module present");
    let (windows, _) = make_epoch_windows::<T>(train, cfg.batch_size, epoch_seed(cfg.seed, epoch));
    let mut total = 0.0;
    let mut rows = 0;
    for w in &windows {
        let mut macs = MacCounter::new();
        let (y, trace) = model::forward(&w.window, params, icfg, &mut macs)?;
        let feats = y.select_rows(&w.window.target_rows);
        let (loss, grad) = loss_and_grad(&classifier.logits(&feats)?, &w.labels, cfg.reduction)?;
        check_finite(loss, epoch)?;
        total += match cfg.reduction {
            LossReduction::Sum => loss,
            LossReduction::Mean => loss * w.labels.len() as f64,
        };
        rows += w.labels.len();

        classifier.zero_grad();
        let d_feats = classifier.backward(&feats, &grad)?;
        let mut up = Matrix::zeros(y.rows(), y.cols());
        for (i, &r) in w.window.target_rows.iter().enumerate() {
            up.row_mut(r).copy_from_slice(d_feats.row(i));
        }
        params.zero_grad();
        model::backward(&trace, params, icfg, &up)?;
        if cfg.freeze_classifier {
            opt.step(params.params_mut());
        } else {
            opt.step(params.params_mut().chain(classifier.params_mut()));
        }
    }
    Ok(total / rows.max(1) as f64)
}

/// Trains the attention module between the frozen feature space and the
/// pretrained classifier. Model selection uses validation accuracy with
/// [`SELECTION_HISTORY`] previous images (capped by the pool capacity).
pub fn train_iciia<T: Scalar>(
    train: &ClientSet,
    val: &ClientSet,
    backbone: &Classifier<T>,
    iciia_cfg: &IciiaConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    iciia_cfg.validate()?;
    if backbone.feature_dim() != iciia_cfg.feature_dim {
        return Err(Error::Config(format!(
            "backbone feature dimension {} does not match module dimension {}",
            backbone.feature_dim(),
            iciia_cfg.feature_dim
        )));
    }
    if train.num_records() == 0 {
        return Err(Error::Usage("training set has no records".into()));
    }
    let mut params = IciiaParams::init(iciia_cfg, cfg.seed)?;
    if cfg.zero_residual_init {
        for layer in &mut params.layers {
            for block in layer.proj_out.blocks.iter_mut().chain(&mut layer.ffn2.blocks) {
                block.value.fill(T::zero());
            }
        }
    }
    let mut model = Model {
        classifier: backbone.clone(),
        iciia: Some((iciia_cfg.clone(), params)),
    };
    let history = SELECTION_HISTORY.min(iciia_cfg.max_history);
    let mut opt = Sgd::new(cfg.learning_rate, cfg.momentum);
    let (best, acc, epoch, hist) = early_stopping(
        cfg,
        &mut model,
        |m, e| iciia_epoch(m, &mut opt, train, cfg, e),
        |m| evaluate(val, m, history, cfg.seed).map(|r| r.overall_accuracy),
    )?;
    Ok(TrainOutcome {
        model: best,
        best_val_accuracy: acc,
        best_epoch: epoch,
        history: hist,
    })
}

/// Adapts a copy of `base` to one client's training records. Selection uses
/// the client's validation records, or its training records when it has none.
pub fn finetune_last_layer<T: Scalar>(
    train: &[FeatureRecord],
    val: &[FeatureRecord],
    base: &Classifier<T>,
    cfg: &TrainConfig,
) -> Result<Classifier<T>> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Usage("client has no training records".into()));
    }
    let records: Vec<&FeatureRecord> = train.iter().collect();
    let selection: Vec<&FeatureRecord> = if val.is_empty() {
        records.clone()
    } else {
        val.iter().collect()
    };
    let mut opt = Sgd::new(cfg.learning_rate, cfg.momentum);
    let mut clf = base.clone();
    let (best, ..) = early_stopping(
        cfg,
        &mut clf,
        |c, e| classifier_epoch(c, &mut opt, &records, cfg, epoch_seed(cfg.seed, e), e),
        |c| c.accuracy(&selection),
    )?;
    Ok(best)
}

/// Fine-tunes one classifier per client. Only meaningful when every client
/// has its own training split.
pub fn finetune_clients<T: Scalar>(
    train: &ClientSet,
    val: &ClientSet,
    base: &Classifier<T>,
    cfg: &TrainConfig,
) -> Result<BTreeMap<String, Classifier<T>>> {
    if train.split_mode != SplitMode::WithinClient {
        return Err(Error::Mode(
            "fine-tuning needs per-client training data (within-client split mode)".into(),
        ));
    }
    let empty = Vec::new();
    train
        .clients
        .par_iter()
        .filter(|(_, r)| !r.is_empty())
        .map(|(id, recs)| {
            let v = val.clients.get(id).unwrap_or(&empty);
            Ok((id.clone(), finetune_last_layer(recs, v, base, cfg)?))
        })
        .collect()
}
