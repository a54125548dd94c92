//! Hallucination metrics and evaluation reports.

mod metrics;
mod report;

pub use metrics::{
    f1_score, hallucination_rate, merlin_eval, pope_metrics, strict_pair_accuracy, Counts, MerlinCells, PopeMetrics,
};
pub use report::{evaluate, evaluate_predictions, fmt_value, predict_answers, EvalReport, KindTally};
