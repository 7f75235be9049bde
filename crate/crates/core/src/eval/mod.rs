//! Validation protocols, metrics and reports.

mod folds;
mod metrics;
mod report;

pub use folds::{make_fixed_split, make_kfold, make_loao_folds, Fold, FoldPlan, Protocol};
pub use metrics::{
    accuracy, confusion, f1_segment, video_majority_rule, ConfusionMatrix, F1Report, UnitScore,
};
pub use report::{write_report, AggregateScore, EvalReport, FoldScore};
