use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use iciia::data::Dataset;
use iciia::harness::{
    apply_ablation, evaluate_per_client, evaluate_served, report, run_ablations, sweep_heterogeneity, sweep_history,
    sweep_partitions, EvalReport, Prepared, RunPlan,
};
use iciia::model::divisors;
use iciia::overhead::{backbone_table, OverheadReport};
use iciia::train::{finetune_clients, train_global_classifier, train_iciia, Checkpoint, Model, TrainOutcome};
use iciia::{Error, Result, Scalar};
use log::info;
use serde_json::json;

use crate::args::{Command, Format, GlobalArgs, RepeatArgs, SpecArgs, TrainArgs};

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
            }
            Box::new(BufWriter::new(File::create(p).map_err(|e| io_error(p, e))?))
        }
        None => Box::new(io::stdout().lock()),
    })
}

fn io_error(path: &Path, source: io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_json(g: &GlobalArgs, value: &serde_json::Value) -> Result<()> {
    let mut out = output(g.out.as_deref())?;
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)
        .and_then(|_| out.flush())
        .map_err(|e| io_error(Path::new("<out>"), e))
}

fn write_report(g: &GlobalArgs, report: &EvalReport, format: Format) -> Result<()> {
    match format {
        Format::Json => write_json(g, &serde_json::to_value(report)?),
        Format::Csv => report::write_eval(output(g.out.as_deref())?, report),
    }
}

fn checkpoint_path(g: &GlobalArgs) -> Result<&Path> {
    g.checkpoint
        .as_deref()
        .ok_or_else(|| Error::Usage("this command needs --checkpoint <PATH>".into()))
}

fn load_model<T: Scalar>(path: &Path) -> Result<Model<T>> {
    Ok(Checkpoint::load(path)?.model.cast())
}

fn save_outcome<T: Scalar>(g: &GlobalArgs, out: &TrainOutcome<T>, extra: serde_json::Value) -> Result<()> {
    let path = checkpoint_path(g)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    out.checkpoint().save(path)?;
    let summary = json!({
        "checkpoint": path,
        "best_val_accuracy": out.best_val_accuracy,
        "best_epoch": out.best_epoch,
        "epochs_run": out.history.len().saturating_sub(1),
        "history": out.history,
        "details": extra,
    });
    let side = Checkpoint::save_sidecar(path, &summary)?;
    info!("wrote {} and {}", path.display(), side.display());
    write_json(g, &summary)
}

/// One prepared dataset and backbone per repeat seed.
fn prepare_repeats<T: Scalar>(g: &GlobalArgs, r: &RepeatArgs, train: &TrainArgs) -> Result<Vec<(u64, Prepared<T>)>> {
    if r.repeats == 0 {
        return Err(Error::Usage("--repeats must be at least 1".into()));
    }
    let loaded = if r.synthetic {
        None
    } else {
        Some(Dataset::load(&g.data_dir)?)
    };
    (g.seed..g.seed + r.repeats)
        .map(|seed| {
            let data = match &loaded {
                Some(d) => d.clone(),
                None => Dataset::synthetic(&r.spec.spec(seed))?,
            };
            info!("preparing backbone for seed {seed}");
            Ok((seed, Prepared::new(data, &train.config(seed))?))
        })
        .collect()
}

fn feature_dim<T: Scalar>(prepared: &[(u64, Prepared<T>)]) -> usize {
    prepared[0].1.data.meta.feature_dim
}

fn overhead_rows(
    layers: usize,
    window: usize,
    heads: usize,
    feature_dim: Option<usize>,
    partitions: Option<Vec<usize>>,
    backbone: Option<(u64, u64)>,
) -> Result<Vec<OverheadReport>> {
    let Some(d) = feature_dim else {
        return backbone_table(layers, window);
    };
    partitions
        .unwrap_or_else(|| divisors(d))
        .into_iter()
        .map(|p| {
            let cfg = iciia::IciiaConfig::new(d, heads, p, layers);
            let row = OverheadReport::new(format!("d{d}"), &cfg, window)?;
            Ok(match backbone {
                Some((params, flops)) => row.with_backbone(params, flops),
                None => row,
            })
        })
        .collect()
}

pub fn run<T: Scalar>(g: &GlobalArgs, cmd: Command) -> Result<()> {
    match cmd {
        Command::GenData(spec) => gen_data(g, &spec),
        Command::TrainBackbone(train) => {
            let data = Dataset::load(&g.data_dir)?;
            let tc = train.config(g.seed);
            let out = train_global_classifier::<T>(&data.train, &data.val, data.meta.num_classes, &tc)?;
            save_outcome(g, &out, json!({ "train": tc }))
        }
        Command::TrainIciia {
            backbone,
            model,
            ablation,
            train,
        } => {
            let data = Dataset::load(&g.data_dir)?;
            let base = load_model::<T>(&backbone)?.classifier;
            let cfg = apply_ablation(&model.config(data.meta.feature_dim), ablation);
            let tc = train.config(g.seed);
            let out = train_iciia(&data.train, &data.val, &base, &cfg, &tc)?;
            save_outcome(g, &out, json!({ "module": cfg, "ablation": ablation, "train": tc }))
        }
        Command::Finetune {
            backbone,
            train,
            format,
        } => {
            let data = Dataset::load(&g.data_dir)?;
            let base = load_model::<T>(&backbone)?.classifier;
            let clfs = finetune_clients(&data.train, &data.val, &base, &train.config(g.seed))?;
            let mut r = evaluate_per_client(&data.test, &clfs)?;
            r.condition.method = "finetune".into();
            r.condition.seed = g.seed;
            write_report(g, &r, format)
        }
        Command::Evaluate {
            history,
            cold_start,
            format,
        } => {
            let model = load_model::<T>(checkpoint_path(g)?)?;
            let data = Dataset::load(&g.data_dir)?;
            let mut r = evaluate_served(&data.test, &model, history, g.seed, cold_start)?;
            r.condition.method = if model.iciia.is_some() { "iciia" } else { "baseline" }.into();
            if let Some((cfg, _)) = &model.iciia {
                r.condition.partitions = Some(cfg.num_partitions);
                r.condition.layers = Some(cfg.num_layers);
            }
            r.condition.heterogeneity = data.meta.synthetic.as_ref().map(|s| s.heterogeneity);
            write_report(g, &r, format)
        }
        Command::Overhead {
            layers,
            window,
            heads,
            feature_dim,
            partitions,
            backbone_params,
            backbone_flops,
        } => {
            let backbone = backbone_params.zip(backbone_flops);
            let rows = overhead_rows(layers, window, heads, feature_dim, partitions, backbone)?;
            report::write_overhead(output(g.out.as_deref())?, &rows)
        }
        Command::SweepHistory { m_values } => {
            let model = load_model::<T>(checkpoint_path(g)?)?;
            let data = Dataset::load(&g.data_dir)?;
            let reports = sweep_history(&model, &data.test, &m_values, g.seed)?;
            report::write_history(output(g.out.as_deref())?, &reports)
        }
        Command::SweepPartitions {
            p_values,
            n_values,
            repeat,
            model,
            train,
        } => {
            let prepared = prepare_repeats::<T>(g, &repeat, &train)?;
            let plan = plan(&prepared, &repeat, &model, &train, g.seed);
            let rows = sweep_partitions(&prepared, &plan, &p_values, &n_values)?;
            report::write_partitions(output(g.out.as_deref())?, &rows)
        }
        Command::SweepHeterogeneity {
            rho_values,
            repeats,
            history,
            spec,
            model,
            train,
        } => {
            if repeats == 0 {
                return Err(Error::Usage("--repeats must be at least 1".into()));
            }
            let template = spec.spec(g.seed);
            let plan = RunPlan {
                base: model.config(template.feature_dim),
                train: train.config(g.seed),
                history,
                seeds: (g.seed..g.seed + repeats).collect(),
            };
            let rows = sweep_heterogeneity::<T>(&template, &rho_values, &plan)?;
            report::write_heterogeneity(output(g.out.as_deref())?, &rows)
        }
        Command::Ablate {
            tags,
            repeat,
            model,
            train,
        } => {
            let prepared = prepare_repeats::<T>(g, &repeat, &train)?;
            let plan = plan(&prepared, &repeat, &model, &train, g.seed);
            let rows = run_ablations(&prepared, &plan, &tags)?;
            report::write_ablations(output(g.out.as_deref())?, &rows)
        }
    }
}

fn plan<T: Scalar>(
    prepared: &[(u64, Prepared<T>)],
    repeat: &RepeatArgs,
    model: &crate::args::ModelArgs,
    train: &TrainArgs,
    seed: u64,
) -> RunPlan {
    RunPlan {
        base: model.config(feature_dim(prepared)),
        train: train.config(seed),
        history: repeat.history,
        seeds: prepared.iter().map(|(s, _)| *s).collect(),
    }
}

fn gen_data(g: &GlobalArgs, args: &SpecArgs) -> Result<()> {
    let spec = args.spec(g.seed);
    let data = Dataset::synthetic(&spec)?;
    data.save(&g.data_dir)?;
    let count = |s: &iciia::data::ClientSet| json!({ "clients": s.clients.len(), "records": s.num_records() });
    write_json(
        g,
        &json!({
            "data_dir": g.data_dir,
            "spec": spec,
            "train": count(&data.train),
            "val": count(&data.val),
            "test": count(&data.test),
        }),
    )
}
