use std::collections::HashSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::case::EvalCase;
use super::metrics::{
    iou_box, iou_mask, keyword_hits, mean_iou, percent2, round2, BleuStats, MetricError, RejectionLexicon,
};
use crate::functions::FunctionResult;
use crate::orchestrator::{DispatchTrace, ImageInput, Orchestrator, OrchestratorError};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Outcome of one case under the call-rate metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SrOutcome {
    Success,
    /// A call was made where none was expected.
    FalsePositiveCall,
    /// A different function was called than expected.
    WrongFunction,
    /// The expected function was not called, or its execution failed.
    MissedCall,
}

/// Judges the call the model requested in round one. An expected call only
/// counts when it also executed.
pub fn sr_outcome(case: &EvalCase, trace: &DispatchTrace) -> SrOutcome {
    let requested = trace.requested_call().map(|c| c.api_name.as_str());
    let executed = trace.executed_call.as_ref().map(|c| c.api_name.as_str());
    match (case.expect_call.as_deref(), requested) {
        (None, None) => SrOutcome::Success,
        (None, Some(_)) => SrOutcome::FalsePositiveCall,
        (Some(_), None) => SrOutcome::MissedCall,
        (Some(e), Some(r)) if e != r => SrOutcome::WrongFunction,
        (Some(e), Some(_)) if executed == Some(e) => SrOutcome::Success,
        (Some(_), Some(_)) => SrOutcome::MissedCall,
    }
}

fn check_len(what: &'static str, left: usize, right: usize) -> Result<(), MetricError> {
    if left != right {
        return Err(MetricError::LengthMismatch { what, left, right });
    }
    if left == 0 {
        return Err(MetricError::EmptyCorpus);
    }
    Ok(())
}

/// Successful function-calling rate in percent, two decimals.
pub fn eval_sr(cases: &[EvalCase], traces: &[DispatchTrace]) -> Result<f64, MetricError> {
    check_len("cases vs traces", cases.len(), traces.len())?;
    let ok = cases
        .iter()
        .zip(traces)
        .filter(|(c, t)| sr_outcome(c, t) == SrOutcome::Success)
        .count();
    Ok(percent2(ok, cases.len()))
}

/// Macro-averaged keyword hit rate from per-case `(hits, keywords)` counts.
pub fn keyhit_from_counts(counts: &[(usize, usize)]) -> Option<f64> {
    let eligible: Vec<_> = counts.iter().filter(|(_, k)| *k > 0).collect();
    if eligible.is_empty() {
        return None;
    }
    let sum: f64 = eligible.iter().map(|(h, k)| *h as f64 / *k as f64).sum();
    Some(round2(sum / eligible.len() as f64 * 100.0))
}

/// Keyword hit rate over cases with keywords; `None` when no case has any.
pub fn eval_keyhit(cases: &[EvalCase], replies: &[&str]) -> Result<Option<f64>, MetricError> {
    check_len("cases vs replies", cases.len(), replies.len())?;
    let counts: Vec<_> = cases
        .iter()
        .zip(replies)
        .map(|(c, r)| (keyword_hits(&c.keywords, r), c.keywords.len()))
        .collect();
    Ok(keyhit_from_counts(&counts))
}

/// A negative query is rejected when any executed function found nothing and
/// the reply uses rejection language.
pub fn is_rejection(trace: &DispatchTrace, reply: &str, lexicon: &RejectionLexicon) -> bool {
    let evidence_empty = trace.function_result.as_ref().is_none_or(FunctionResult::is_empty);
    evidence_empty && lexicon.matches(reply)
}

/// Rejection rate over negative cases; `None` when there are none.
pub fn eval_rej(
    cases: &[EvalCase],
    traces: &[DispatchTrace],
    replies: &[&str],
    lexicon: &RejectionLexicon,
) -> Result<Option<f64>, MetricError> {
    check_len("cases vs traces", cases.len(), traces.len())?;
    check_len("cases vs replies", cases.len(), replies.len())?;
    let mut negatives = 0;
    let mut rejected = 0;
    for ((c, t), r) in cases.iter().zip(traces).zip(replies) {
        if c.is_negative {
            negatives += 1;
            rejected += is_rejection(t, r, lexicon) as usize;
        }
    }
    Ok((negatives > 0).then(|| percent2(rejected, negatives)))
}

/// Per-case evaluation record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseRow {
    pub id: String,
    pub trace_id: String,
    pub expect_call: Option<String>,
    pub requested_call: Option<String>,
    pub executed_call: Option<String>,
    pub outcome: SrOutcome,
    pub keyword_hits: usize,
    pub keyword_count: usize,
    /// Set for negative cases only.
    pub rejected: Option<bool>,
    pub bleu: BleuStats,
    pub det_iou: Option<f64>,
    pub seg_iou: Option<f64>,
    pub rounds: u8,
    pub error: Option<String>,
    pub final_reply: String,
}

impl CaseRow {
    pub fn evaluate(case: &EvalCase, trace: &DispatchTrace, lexicon: &RejectionLexicon) -> Self {
        let reply = trace.final_reply.as_str();
        let det_iou = case.gt_boxes.map(|gt| match &trace.function_result {
            Some(FunctionResult::Detections { detections }) => {
                detections.first().map_or(0.0, |d| iou_box(&gt, &d.bbox))
            }
            _ => 0.0,
        });
        let seg_iou = case.gt_mask.as_ref().map(|gt| match &trace.function_result {
            Some(FunctionResult::Mask { mask, .. }) => iou_mask(gt, mask).unwrap_or(0.0),
            _ => 0.0,
        });
        Self {
            id: case.id.clone(),
            trace_id: trace.trace_id.clone(),
            expect_call: case.expect_call.clone(),
            requested_call: trace.requested_call().map(|c| c.api_name.clone()),
            executed_call: trace.executed_call.as_ref().map(|c| c.api_name.clone()),
            outcome: sr_outcome(case, trace),
            keyword_hits: keyword_hits(&case.keywords, reply),
            keyword_count: case.keywords.len(),
            rejected: case.is_negative.then(|| is_rejection(trace, reply, lexicon)),
            bleu: BleuStats::of(reply, &case.reference_reply),
            det_iou,
            seg_iou,
            rounds: trace.rounds,
            error: trace.error.as_ref().map(|e| e.code().to_string()),
            final_reply: reply.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SrFailures {
    pub false_positive_call: usize,
    pub wrong_function: usize,
    pub missed_call: usize,
}

/// Aggregate metrics, all percentages in [0, 100]. `None` marks a metric
/// with no eligible case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub sr: f64,
    pub keyhit: Option<f64>,
    pub rej: Option<f64>,
    pub bleu4: f64,
    pub det_miou: Option<f64>,
    pub seg_miou: Option<f64>,
    pub sr_failures: SrFailures,
}

impl Aggregates {
    /// Recomputes every aggregate from per-case rows.
    pub fn from_rows(rows: &[CaseRow]) -> Self {
        let ok = rows.iter().filter(|r| r.outcome == SrOutcome::Success).count();
        let mut failures = SrFailures::default();
        for r in rows {
            match r.outcome {
                SrOutcome::Success => {}
                SrOutcome::FalsePositiveCall => failures.false_positive_call += 1,
                SrOutcome::WrongFunction => failures.wrong_function += 1,
                SrOutcome::MissedCall => failures.missed_call += 1,
            }
        }
        let counts: Vec<_> = rows.iter().map(|r| (r.keyword_hits, r.keyword_count)).collect();
        let negatives: Vec<bool> = rows.iter().filter_map(|r| r.rejected).collect();
        let mut bleu = BleuStats::default();
        for r in rows {
            bleu.add(&r.bleu);
        }
        let det: Vec<f64> = rows.iter().filter_map(|r| r.det_iou).collect();
        let seg: Vec<f64> = rows.iter().filter_map(|r| r.seg_iou).collect();
        Self {
            sr: if rows.is_empty() { 0.0 } else { percent2(ok, rows.len()) },
            keyhit: keyhit_from_counts(&counts),
            rej: (!negatives.is_empty())
                .then(|| percent2(negatives.iter().filter(|x| **x).count(), negatives.len())),
            bleu4: bleu.score(),
            det_miou: mean_iou(&det),
            seg_miou: mean_iou(&seg),
            sr_failures: failures,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub backend: String,
    pub functions: Vec<String>,
    pub lexicon_version: String,
    pub cases: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub config: ReportConfig,
    #[serde(flatten)]
    pub aggregates: Aggregates,
    /// Sorted by case id.
    pub rows: Vec<CaseRow>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.2}"))
}

impl EvalReport {
    pub fn from_rows(config: ReportConfig, mut rows: Vec<CaseRow>) -> Self {
        rows.sort_by(|a, b| a.id.cmp(&b.id));
        Self {
            schema_version: REPORT_SCHEMA_VERSION,
            config,
            aggregates: Aggregates::from_rows(&rows),
            rows,
        }
    }

    pub fn reconciles(&self) -> bool {
        Aggregates::from_rows(&self.rows) == self.aggregates
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("reports serialize");
        s.push('\n');
        s
    }

    pub fn to_markdown(&self) -> String {
        let a = &self.aggregates;
        let mut md = String::new();
        let _ = writeln!(md, "# Evaluation report\n");
        let _ = writeln!(
            md,
            "Backend `{}`, {} cases, functions: {}, rejection lexicon v{}.\n",
            self.config.backend,
            self.config.cases,
            self.config.functions.join(", "),
            self.config.lexicon_version
        );
        let _ = writeln!(md, "| SR | KeyHit | Rej | BLEU@4 | det mIoU | seg mIoU |");
        let _ = writeln!(md, "|---:|---:|---:|---:|---:|---:|");
        let _ = writeln!(
            md,
            "| {:.2} | {} | {} | {:.2} | {} | {} |\n",
            a.sr,
            fmt_opt(a.keyhit),
            fmt_opt(a.rej),
            a.bleu4,
            fmt_opt(a.det_miou),
            fmt_opt(a.seg_miou)
        );
        let f = a.sr_failures;
        let _ = writeln!(
            md,
            "SR failures: {} false-positive calls, {} wrong functions, {} missed calls.\n",
            f.false_positive_call, f.wrong_function, f.missed_call
        );
        let _ = writeln!(md, "| case | expected | requested | outcome | rounds | error |");
        let _ = writeln!(md, "|---|---|---|---|---:|---|");
        for r in &self.rows {
            let _ = writeln!(
                md,
                "| {} | {} | {} | {:?} | {} | {} |",
                r.id,
                r.expect_call.as_deref().unwrap_or("-"),
                r.requested_call.as_deref().unwrap_or("-"),
                r.outcome,
                r.rounds,
                r.error.as_deref().unwrap_or("")
            );
        }
        md
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("no evaluation cases")]
    EmptyCases,
    #[error("case {id}: {detail}")]
    InvalidCase { id: String, detail: String },
    #[error("case {id}: image {image_ref:?} does not resolve")]
    UnresolvableImage { id: String, image_ref: String },
    #[error(transparent)]
    Orchestrator(#[from] OrchestratorError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(String),
    #[error(transparent)]
    Mop(#[from] crate::mop::MopError),
    #[error(transparent)]
    Function(#[from] crate::functions::FunctionError),
}

/// Runs every case in a fresh session and scores the traces.
pub async fn run_eval(
    orchestrator: &Orchestrator,
    cases: &[EvalCase],
    lexicon: &RejectionLexicon,
    backend_label: &str,
) -> Result<EvalReport, EvalError> {
    if cases.is_empty() {
        return Err(EvalError::EmptyCases);
    }
    let mut ids = HashSet::new();
    for c in cases {
        c.validate().map_err(|detail| EvalError::InvalidCase {
            id: c.id.clone(),
            detail,
        })?;
        if !ids.insert(&c.id) {
            return Err(EvalError::InvalidCase {
                id: c.id.clone(),
                detail: "duplicate case id".into(),
            });
        }
        if let Some(r) = &c.image_ref {
            if !orchestrator.resolves_image(r) {
                return Err(EvalError::UnresolvableImage {
                    id: c.id.clone(),
                    image_ref: r.clone(),
                });
            }
        }
    }
    let mut rows = Vec::with_capacity(cases.len());
    for c in cases {
        let session = orchestrator.create_session()?;
        let image = c.image_ref.clone().map(ImageInput::Ref);
        let out = orchestrator.handle_query(&session, &c.query, image).await?;
        rows.push(CaseRow::evaluate(c, &out.trace, lexicon));
    }
    let config = ReportConfig {
        backend: backend_label.to_string(),
        functions: orchestrator
            .registry()
            .list()
            .iter()
            .map(|s| s.api_name.clone())
            .collect(),
        lexicon_version: lexicon.version.clone(),
        cases: cases.len(),
    };
    Ok(EvalReport::from_rows(config, rows))
}
