//! Training-and-evaluation runs behind the sweeps and ablations.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::data::{ClientSet, Dataset, SplitMode, SyntheticSpec};
use crate::error::{Error, Result};
use crate::model::{divisors, AttentionMode, IciiaConfig};
use crate::overhead::param_count;
use crate::tensor::Scalar;
use crate::train::{finetune_clients, train_global_classifier, train_iciia, Classifier, Model, TrainConfig};

use super::eval::{evaluate, evaluate_per_client, AblationTag, EvalReport};

/// Mean and standard error of the mean over repeats.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub mean: f64,
    /// NaN with fewer than two repeats.
    pub std_err: f64,
    pub repeats: usize,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let std_err = if n < 2 {
            f64::NAN
        } else {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        };
        Self {
            mean,
            std_err,
            repeats: n,
        }
    }
}

/// The module configuration with one ingredient removed.
pub fn apply_ablation(cfg: &IciiaConfig, tag: AblationTag) -> IciiaConfig {
    let mut out = cfg.clone();
    match tag {
        AblationTag::None => {}
        AblationTag::NoAttention => out.attention = AttentionMode::SelfOnly,
        AblationTag::NoPartition => out.num_partitions = 1,
        AblationTag::NoShuffle => out.shuffle = false,
    }
    out
}

/// A dataset together with its pretrained global classifier.
#[derive(Clone, Debug)]
pub struct Prepared<T: Scalar> {
    pub data: Dataset,
    pub backbone: Classifier<T>,
    pub backbone_val_accuracy: f64,
}

impl<T: Scalar> Prepared<T> {
    pub fn new(data: Dataset, train_cfg: &TrainConfig) -> Result<Self> {
        let out = train_global_classifier::<T>(&data.train, &data.val, data.meta.num_classes, train_cfg)?;
        Ok(Self {
            data,
            backbone: out.model.classifier,
            backbone_val_accuracy: out.best_val_accuracy,
        })
    }

    pub fn synthetic(spec: &SyntheticSpec, train_cfg: &TrainConfig) -> Result<Self> {
        Self::new(Dataset::synthetic(spec)?, train_cfg)
    }

    fn label(&self, r: &mut EvalReport, method: &str) {
        r.condition.method = method.into();
        r.condition.heterogeneity = self.data.meta.synthetic.as_ref().map(|s| s.heterogeneity);
    }

    pub fn baseline_report(&self, eval_seed: u64) -> Result<EvalReport> {
        let model = Model::baseline(self.backbone.clone());
        let mut r = evaluate(&self.data.test, &model, 0, eval_seed)?;
        self.label(&mut r, "baseline");
        Ok(r)
    }

    /// Trains the module (after applying `tag`) and evaluates it with
    /// `history` previous images.
    pub fn iciia_report(
        &self,
        cfg: &IciiaConfig,
        tag: AblationTag,
        train_cfg: &TrainConfig,
        history: usize,
        eval_seed: u64,
    ) -> Result<EvalReport> {
        let cfg = apply_ablation(cfg, tag);
        let out = train_iciia(&self.data.train, &self.data.val, &self.backbone, &cfg, train_cfg)?;
        let mut r = evaluate(&self.data.test, &out.model, history, eval_seed)?;
        self.label(&mut r, "iciia");
        r.condition.partitions = Some(cfg.num_partitions);
        r.condition.layers = Some(cfg.num_layers);
        r.condition.ablation = tag;
        Ok(r)
    }

    pub fn finetune_report(&self, train_cfg: &TrainConfig) -> Result<EvalReport> {
        let clfs = finetune_clients(&self.data.train, &self.data.val, &self.backbone, train_cfg)?;
        let mut r = evaluate_per_client(&self.data.test, &clfs)?;
        self.label(&mut r, "finetune");
        r.condition.seed = train_cfg.seed;
        Ok(r)
    }
}

/// Evaluates one trained model at each history size.
pub fn sweep_history<T: Scalar>(
    model: &Model<T>,
    test: &ClientSet,
    m_values: &[usize],
    seed: u64,
) -> Result<Vec<EvalReport>> {
    m_values
        .iter()
        .map(|&m| {
            let mut r = evaluate(test, model, m, seed)?;
            r.condition.method = if model.iciia.is_some() { "iciia" } else { "baseline" }.into();
            Ok(r)
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct PartitionRow {
    /// `"max"` when the partition count equals the feature dimension.
    pub label: String,
    pub partitions: usize,
    pub layers: usize,
    /// Projection weights of the whole module.
    pub params: u64,
    pub accuracy: Summary,
    pub reports: Vec<EvalReport>,
}

/// Shared knobs for repeated train-and-evaluate runs.
#[derive(Clone, Debug)]
pub struct RunPlan {
    pub base: IciiaConfig,
    pub train: TrainConfig,
    pub history: usize,
    pub seeds: Vec<u64>,
}

impl RunPlan {
    fn train_for(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            seed,
            ..self.train.clone()
        }
    }
}

/// Trains one module per (P, N) and seed on `prepared`, which holds one
/// dataset per seed.
pub fn sweep_partitions<T: Scalar>(
    prepared: &[(u64, Prepared<T>)],
    plan: &RunPlan,
    p_values: &[usize],
    n_values: &[usize],
) -> Result<Vec<PartitionRow>> {
    let d = plan.base.feature_dim;
    for &p in p_values {
        if p == 0 || !d.is_multiple_of(p) {
            return Err(Error::Config(format!(
                "{p} partitions do not divide dimension {d}; valid values: {:?}",
                divisors(d)
            )));
        }
    }
    let jobs: Vec<(usize, usize)> = n_values
        .iter()
        .flat_map(|&n| p_values.iter().map(move |&p| (p, n)))
        .collect();
    jobs.par_iter()
        .map(|&(p, n)| {
            let cfg = IciiaConfig {
                num_partitions: p,
                num_layers: n,
                ..plan.base.clone()
            };
            let reports = prepared
                .iter()
                .map(|(seed, prep)| {
                    prep.iciia_report(&cfg, AblationTag::None, &plan.train_for(*seed), plan.history, *seed)
                })
                .collect::<Result<Vec<_>>>()?;
            let accs: Vec<f64> = reports.iter().map(|r| r.overall_accuracy).collect();
            Ok(PartitionRow {
                label: if p == d { "max".into() } else { p.to_string() },
                partitions: p,
                layers: n,
                params: param_count(&cfg)?.weights,
                accuracy: Summary::of(&accs),
                reports,
            })
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct HeterogeneityRow {
    pub rho: f64,
    pub method: String,
    pub accuracy: Summary,
}

/// Regenerates data per heterogeneity level and seed, then trains and
/// evaluates the baseline, the module and (within-client mode only)
/// per-client fine-tuning.
pub fn sweep_heterogeneity<T: Scalar>(
    template: &SyntheticSpec,
    rho_values: &[f64],
    plan: &RunPlan,
) -> Result<Vec<HeterogeneityRow>> {
    let jobs: Vec<(f64, u64)> = rho_values
        .iter()
        .flat_map(|&rho| plan.seeds.iter().map(move |&s| (rho, s)))
        .collect();
    let results = jobs
        .par_iter()
        .map(|&(rho, seed)| {
            let spec = SyntheticSpec {
                heterogeneity: rho,
                seed,
                ..template.clone()
            };
            let tc = plan.train_for(seed);
            let prep = Prepared::<T>::synthetic(&spec, &tc)?;
            let mut out = vec![("baseline", prep.baseline_report(seed)?.overall_accuracy)];
            let r = prep.iciia_report(&plan.base, AblationTag::None, &tc, plan.history, seed)?;
            out.push(("iciia", r.overall_accuracy));
            if spec.split_mode == SplitMode::WithinClient {
                out.push(("finetune", prep.finetune_report(&tc)?.overall_accuracy));
            }
            Ok((rho, out))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::new();
    for &rho in rho_values {
        let mut by_method: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
        for (r, out) in &results {
            if *r == rho {
                for (m, a) in out {
                    by_method.entry(m).or_default().push(*a);
                }
            }
        }
        for method in ["baseline", "iciia", "finetune"] {
            if let Some(accs) = by_method.get(method) {
                rows.push(HeterogeneityRow {
                    rho,
                    method: method.into(),
                    accuracy: Summary::of(accs),
                });
            }
        }
    }
    Ok(rows)
}

#[derive(Clone, Debug, Serialize)]
pub struct AblationRow {
    pub tag: AblationTag,
    pub partitions: usize,
    pub accuracy: Summary,
    /// Accuracy minus that of the untagged model, averaged over seeds.
    pub delta: Summary,
}

/// Trains one module per tag from identical seeds and reports accuracy
/// differences against the untagged model.
pub fn run_ablations<T: Scalar>(
    prepared: &[(u64, Prepared<T>)],
    plan: &RunPlan,
    tags: &[AblationTag],
) -> Result<Vec<AblationRow>> {
    let mut all = vec![AblationTag::None];
    all.extend(tags.iter().copied().filter(|t| *t != AblationTag::None));
    let accs = all
        .par_iter()
        .map(|&tag| {
            prepared
                .iter()
                .map(|(seed, prep)| {
                    prep.iciia_report(&plan.base, tag, &plan.train_for(*seed), plan.history, *seed)
                        .map(|r| r.overall_accuracy)
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let reference = accs[0].clone();
    let rows = all
        .iter()
        .zip(&accs)
        .filter(|(t, _)| tags.contains(t))
        .map(|(&tag, a)| {
            let delta: Vec<f64> = a.iter().zip(&reference).map(|(x, r)| x - r).collect();
            AblationRow {
                tag,
                partitions: apply_ablation(&plan.base, tag).num_partitions,
                accuracy: Summary::of(a),
                delta: Summary::of(&delta),
            }
        })
        .collect();
    Ok(rows)
}
