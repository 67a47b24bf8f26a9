//! Evaluation with client history, parameter sweeps and ablations.

mod eval;
mod experiment;
pub mod report;

pub use eval::{
    classify_with_history, evaluate, evaluate_per_client, evaluate_served, AblationTag, ClientAccuracy, Condition,
    EvalReport,
};
pub use experiment::{
    apply_ablation, run_ablations, sweep_heterogeneity, sweep_history, sweep_partitions, AblationRow, HeterogeneityRow,
    PartitionRow, Prepared, RunPlan, Summary,
};
