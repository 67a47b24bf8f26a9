//! CSV emission. Every table has a fixed header and one condition per row.

use std::io::Write;

use crate::error::Result;
use crate::overhead::OverheadReport;

use super::eval::EvalReport;
use super::experiment::{AblationRow, HeterogeneityRow, PartitionRow};

pub const HISTORY_HEADER: [&str; 5] = ["m", "method", "accuracy", "records", "seed"];
pub const PARTITION_HEADER: [&str; 7] = [
    "p",
    "partitions",
    "layers",
    "params",
    "accuracy_mean",
    "accuracy_se",
    "repeats",
];
pub const HETEROGENEITY_HEADER: [&str; 5] = ["rho", "method", "accuracy_mean", "accuracy_se", "repeats"];
pub const ABLATION_HEADER: [&str; 7] = [
    "tag",
    "partitions",
    "accuracy_mean",
    "accuracy_se",
    "delta_mean",
    "delta_se",
    "repeats",
];
pub const OVERHEAD_HEADER: [&str; 9] = [
    "backbone",
    "d",
    "p",
    "n",
    "window",
    "params",
    "flops",
    "param_ratio",
    "flop_ratio",
];
pub const EVAL_HEADER: [&str; 4] = ["client_id", "correct", "total", "accuracy"];

fn table<W: Write>(out: W, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

pub fn write_history<W: Write>(out: W, reports: &[EvalReport]) -> Result<()> {
    table(
        out,
        &HISTORY_HEADER,
        reports.iter().map(|r| {
            vec![
                r.condition.history.to_string(),
                r.condition.method.clone(),
                r.overall_accuracy.to_string(),
                r.num_records().to_string(),
                r.condition.seed.to_string(),
            ]
        }),
    )
}

pub fn write_partitions<W: Write>(out: W, rows: &[PartitionRow]) -> Result<()> {
    table(
        out,
        &PARTITION_HEADER,
        rows.iter().map(|r| {
            vec![
                r.label.clone(),
                r.partitions.to_string(),
                r.layers.to_string(),
                r.params.to_string(),
                r.accuracy.mean.to_string(),
                r.accuracy.std_err.to_string(),
                r.accuracy.repeats.to_string(),
            ]
        }),
    )
}

pub fn write_heterogeneity<W: Write>(out: W, rows: &[HeterogeneityRow]) -> Result<()> {
    table(
        out,
        &HETEROGENEITY_HEADER,
        rows.iter().map(|r| {
            vec![
                r.rho.to_string(),
                r.method.clone(),
                r.accuracy.mean.to_string(),
                r.accuracy.std_err.to_string(),
                r.accuracy.repeats.to_string(),
            ]
        }),
    )
}

pub fn write_ablations<W: Write>(out: W, rows: &[AblationRow]) -> Result<()> {
    table(
        out,
        &ABLATION_HEADER,
        rows.iter().map(|r| {
            vec![
                r.tag.as_str().to_string(),
                r.partitions.to_string(),
                r.accuracy.mean.to_string(),
                r.accuracy.std_err.to_string(),
                r.delta.mean.to_string(),
                r.delta.std_err.to_string(),
                r.accuracy.repeats.to_string(),
            ]
        }),
    )
}

pub fn write_overhead<W: Write>(out: W, rows: &[OverheadReport]) -> Result<()> {
    table(
        out,
        &OVERHEAD_HEADER,
        rows.iter().map(|r| {
            vec![
                r.backbone.clone(),
                r.feature_dim.to_string(),
                r.num_partitions.to_string(),
                r.num_layers.to_string(),
                r.window.to_string(),
                r.table_params().to_string(),
                r.flops_per_window.to_string(),
                opt(r.param_ratio()),
                opt(r.flop_ratio()),
            ]
        }),
    )
}

/// Per-client breakdown of one evaluation.
pub fn write_eval<W: Write>(out: W, report: &EvalReport) -> Result<()> {
    table(
        out,
        &EVAL_HEADER,
        report.per_client.iter().map(|(id, a)| {
            vec![
                id.clone(),
                a.correct.to_string(),
                a.total.to_string(),
                a.accuracy().to_string(),
            ]
        }),
    )
}
