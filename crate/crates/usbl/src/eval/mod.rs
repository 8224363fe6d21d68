//! Evaluation: fold assignment, metrics, corrected statistics, and the
//! cross-validation experiment harness.

pub mod experiment;
pub mod folds;
pub mod metrics;
pub mod report;
pub mod stats;

pub use experiment::{
    load_results, run_experiment, save_results, write_fold_csv, ConfigSummary, FoldRecord,
    MethodSpec, MetricSummary, PredictionRecord, ResultsTable,
};
pub use folds::{make_folds, CVConfig, FoldAssignment, FoldSplit};
pub use metrics::{
    auc, brier, confusion_metrics, cross_entropy, metric_set, MetricSet, PROB_CLAMP,
};
pub use report::{render_report, report_csv};
pub use stats::{
    bh_fdr, corrected_ci, corrected_paired_ttest, corrected_ttest, correction_factor, mdes,
    CorrectedTest,
};
