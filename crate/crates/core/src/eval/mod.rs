//! Metrics, the evaluation runner and the ablation sweeps.

mod case;
mod metrics;
mod report;
mod suite;
mod sweep;

pub use case::EvalCase;
pub use metrics::{
    bleu4, bleu_tokens, contains_phrase, iou_box, iou_mask, iou_xyxy, keyword_hits, mean_iou, percent2, round2,
    words, BleuStats, MetricError, RejectionLexicon, DEFAULT_LEXICON,
};
pub use report::{
    eval_keyhit, eval_rej, eval_sr, is_rejection, keyhit_from_counts, run_eval, sr_outcome, Aggregates, CaseRow,
    EvalError, EvalReport, ReportConfig, SrFailures, SrOutcome, REPORT_SCHEMA_VERSION,
};
pub use suite::{cases_from_records, dispatch_suite, DISPATCH_SUITE_COUNTS};
pub use sweep::{
    projector_sweep_config, sweep_functions, sweep_projectors, write_csv, ConfusedBackend, FunctionSweepRow,
    ProjectorSweepRow, SWEEP_HIDDEN, SWEEP_PROJECTOR_COUNTS,
};
