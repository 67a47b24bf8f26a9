//! Sequential serving evaluation: each client's test images arrive one at a
//! time in a seeded random order, and each target is classified in a window
//! made of itself plus the client's most recent unlabeled predecessors.

use std::collections::{BTreeMap, VecDeque};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ClientSet, FeatureRecord};
use crate::error::{Error, Result};
use crate::model::{self, AttentionWindow};
use crate::tensor::{Matrix, Scalar};
use crate::train::{argmax, Classifier, Model};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientAccuracy {
    pub correct: usize,
    pub total: usize,
}

impl ClientAccuracy {
    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.total as f64
    }
}

/// Which ingredient of the module was removed, if any.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationTag {
    #[default]
    None,
    NoAttention,
    NoPartition,
    NoShuffle,
}

impl AblationTag {
    pub const ALL: [AblationTag; 4] = [
        AblationTag::None,
        AblationTag::NoAttention,
        AblationTag::NoPartition,
        AblationTag::NoShuffle,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AblationTag::None => "none",
            AblationTag::NoAttention => "no_attention",
            AblationTag::NoPartition => "no_partition",
            AblationTag::NoShuffle => "no_shuffle",
        }
    }
}

impl std::str::FromStr for AblationTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AblationTag::ALL.into_iter().find(|t| t.as_str() == s).ok_or_else(|| {
            Error::Usage(format!(
                "unknown ablation tag `{s}` (none | no_attention | no_partition | no_shuffle)"
            ))
        })
    }
}

/// The experimental condition a report was produced under.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub method: String,
    pub history: usize,
    pub partitions: Option<usize>,
    pub layers: Option<usize>,
    pub heterogeneity: Option<f64>,
    pub ablation: AblationTag,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Correct predictions over all counted test records.
    pub overall_accuracy: f64,
    pub per_client: BTreeMap<String, ClientAccuracy>,
    pub condition: Condition,
    pub runtime_secs: f64,
}

impl EvalReport {
    fn from_clients(per_client: BTreeMap<String, ClientAccuracy>, condition: Condition, started: Instant) -> Self {
        let (correct, total) = per_client
            .values()
            .fold((0, 0), |(c, t), a| (c + a.correct, t + a.total));
        Self {
            overall_accuracy: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
            per_client,
            condition,
            runtime_secs: started.elapsed().as_secs_f64(),
        }
    }

    pub fn num_records(&self) -> usize {
        self.per_client.values().map(|a| a.total).sum()
    }

    /// Mean of per-client accuracies weighted by each client's record count.
    pub fn weighted_client_mean(&self) -> f64 {
        let n = self.num_records() as f64;
        self.per_client
            .values()
            .map(|a| a.accuracy() * a.total as f64 / n)
            .sum()
    }
}

fn client_order(records: &[FeatureRecord], seed: u64, index: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..records.len()).collect();
    let s = seed.wrapping_mul(0xA076_1D64_78BD_642F).wrapping_add(index as u64);
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(s));
    order
}

fn to_row<T: Scalar>(features: &[f32]) -> impl Iterator<Item = T> + '_ {
    features.iter().map(|&v| T::lit(v as f64))
}

/// Classifies one target given the history features (oldest first).
pub fn classify_with_history<T: Scalar>(model: &Model<T>, history: &[&[f32]], target: &[f32]) -> Result<usize> {
    let dim = target.len();
    match &model.iciia {
        None => {
            let x = Matrix::from_vec(1, dim, to_row(target).collect())?;
            Ok(argmax(model.classifier.logits(&x)?.row(0)))
        }
        Some((cfg, params)) => {
            let rows = history.len() + 1;
            let mut data = Vec::with_capacity(rows * dim);
            for h in history {
                data.extend(to_row::<T>(h));
            }
            data.extend(to_row::<T>(target));
            let window = AttentionWindow::with_target_last(Matrix::from_vec(rows, dim, data)?);
            let y = model::infer(&window, params, cfg)?;
            let feat = y.select_rows(&[rows - 1]);
            Ok(argmax(model.classifier.logits(&feat)?.row(0)))
        }
    }
}

fn run_client<T: Scalar>(
    records: &[FeatureRecord],
    index: usize,
    history: usize,
    seed: u64,
    cold_start: usize,
    model: &Model<T>,
) -> Result<ClientAccuracy> {
    let backbone = Model::baseline(model.classifier.clone());
    let mut pool: VecDeque<&[f32]> = VecDeque::with_capacity(history + 1);
    let mut acc = ClientAccuracy::default();
    for i in client_order(records, seed, index) {
        let rec = &records[i];
        let hist: Vec<&[f32]> = pool.iter().copied().collect();
        let serving = if hist.len() < cold_start { &backbone } else { model };
        let pred = classify_with_history(serving, &hist, &rec.features)?;
        acc.total += 1;
        acc.correct += usize::from(pred == rec.label);
        if history > 0 {
            if pool.len() == history {
                pool.pop_front();
            }
            pool.push_back(&rec.features);
        }
    }
    Ok(acc)
}

/// Evaluates `model` on every client of `test` with `history` previous
/// images per target. Clients without records are left out of the report.
pub fn evaluate<T: Scalar>(test: &ClientSet, model: &Model<T>, history: usize, seed: u64) -> Result<EvalReport> {
    evaluate_served(test, model, history, seed, 0)
}

/// Like [`evaluate`], but a client that has accumulated fewer than
/// `cold_start` history images is served by the classifier alone.
pub fn evaluate_served<T: Scalar>(
    test: &ClientSet,
    model: &Model<T>,
    history: usize,
    seed: u64,
    cold_start: usize,
) -> Result<EvalReport> {
    if let Some((cfg, _)) = &model.iciia {
        if history > cfg.max_history {
            return Err(Error::Config(format!(
                "history {history} exceeds the pool capacity {}",
                cfg.max_history
            )));
        }
    }
    let started = Instant::now();
    let clients: Vec<(usize, (&String, &Vec<FeatureRecord>))> =
        test.clients.iter().filter(|(_, r)| !r.is_empty()).enumerate().collect();
    let per_client = clients
        .par_iter()
        .map(|(i, (id, recs))| Ok(((*id).clone(), run_client(recs, *i, history, seed, cold_start, model)?)))
        .collect::<Result<BTreeMap<_, _>>>()?;
    let condition = Condition {
        history,
        seed,
        ..Condition::default()
    };
    Ok(EvalReport::from_clients(per_client, condition, started))
}

/// Evaluates one classifier per client (the fine-tuning baseline).
pub fn evaluate_per_client<T: Scalar>(
    test: &ClientSet,
    classifiers: &BTreeMap<String, Classifier<T>>,
) -> Result<EvalReport> {
    let started = Instant::now();
    let mut per_client = BTreeMap::new();
    for (id, recs) in test.clients.iter().filter(|(_, r)| !r.is_empty()) {
        let clf = classifiers
            .get(id)
            .ok_or_else(|| Error::Input(format!("no fine-tuned classifier for client {id}")))?;
        let refs: Vec<&FeatureRecord> = recs.iter().collect();
        let acc = clf.accuracy(&refs)?;
        let correct = (acc * refs.len() as f64).round() as usize;
        per_client.insert(
            id.clone(),
            ClientAccuracy {
                correct,
                total: refs.len(),
            },
        );
    }
    Ok(EvalReport::from_clients(per_client, Condition::default(), started))
}
