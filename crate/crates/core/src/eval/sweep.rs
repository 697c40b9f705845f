//! Function-count and projector-count sweeps.

use std::io::Write;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::case::EvalCase;
use super::metrics::RejectionLexicon;
use super::report::{run_eval, EvalError};
use crate::functions::MIN_FUNCTIONS;
use crate::mop::{train_mop, Mode, MopConfig, SyntheticTask, TrainHyper};
use crate::orchestrator::{BackendError, Conversation, LlmBackend, Orchestrator, ScriptedBackend};
use crate::protocol::{parse_structured, render_structured, FunctionCall};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionSweepRow {
    pub function_count: usize,
    pub sr: f64,
    pub keyhit: Option<f64>,
}

/// Re-runs the evaluation once per registry size.
pub async fn sweep_functions<F>(
    factory: F,
    cases: &[EvalCase],
    counts: &[usize],
    lexicon: &RejectionLexicon,
) -> Result<Vec<FunctionSweepRow>, EvalError>
where
    F: Fn(usize) -> Result<Orchestrator, EvalError>,
{
    let mut rows = Vec::with_capacity(counts.len());
    for &n in counts {
        let orchestrator = factory(n)?;
        let report = run_eval(&orchestrator, cases, lexicon, &format!("sweep-{n}")).await?;
        rows.push(FunctionSweepRow {
            function_count: n,
            sr: report.aggregates.sr,
            keyhit: report.aggregates.keyhit,
        });
    }
    Ok(rows)
}

/// Scripted backend that gets confused more often as the function set
/// grows.
///
/// Each query hashes to a fixed point `u` in [0, 1). With `n` registered
/// functions the query is confused when `u < base + per_function × (n − 2)`,
/// so every query confused at `n` stays confused at `n + 1`. A confused
/// query that should call a function calls a different registered one; one
/// that should not call anything calls the first registered function.
#[derive(Debug, Clone)]
pub struct ConfusedBackend {
    inner: ScriptedBackend,
    function_names: Vec<String>,
    base: f64,
    per_function: f64,
}

impl ConfusedBackend {
    pub fn new(inner: ScriptedBackend, function_names: Vec<String>, base: f64, per_function: f64) -> Self {
        Self {
            inner,
            function_names,
            base,
            per_function,
        }
    }

    pub fn confusion_rate(&self) -> f64 {
        let extra = self.function_names.len().saturating_sub(MIN_FUNCTIONS) as f64;
        (self.base + self.per_function * extra).clamp(0.0, 1.0)
    }

    /// Position of a query on the confusion scale.
    pub fn hash_point(query: &str, image_ref: Option<&str>) -> f64 {
        let mut h = Sha256::new();
        h.update(query.trim().as_bytes());
        h.update([0]);
        h.update(image_ref.unwrap_or("").as_bytes());
        let d = h.finalize();
        let x = u64::from_be_bytes(d[..8].try_into().expect("8 bytes"));
        (x >> 11) as f64 / (1u64 << 53) as f64
    }
}

#[async_trait]
impl LlmBackend for ConfusedBackend {
    async fn generate(&self, conversation: Conversation<'_>) -> Result<String, BackendError> {
        let text = self.inner.generate(conversation).await?;
        if conversation.after_function() {
            return Ok(text);
        }
        let query = conversation.last_user_turn().map_or("", |(_, t)| t.content.as_str());
        if Self::hash_point(query, conversation.current_image()) >= self.confusion_rate() {
            return Ok(text);
        }
        let Ok(mut reply) = parse_structured(&text) else {
            return Ok(text);
        };
        reply.calling = match reply.calling.take() {
            Some(call) => {
                let pos = self.function_names.iter().position(|n| *n == call.api_name).unwrap_or(0);
                let wrong = &self.function_names[(pos + 1) % self.function_names.len()];
                Some(FunctionCall {
                    api_name: wrong.clone(),
                    api_params: call.api_params,
                })
            }
            None => self.function_names.first().map(|n| FunctionCall::new(n.clone())),
        };
        Ok(render_structured(&reply))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectorSweepRow {
    pub n_projectors: usize,
    pub top_k: usize,
    pub final_loss: f64,
}

pub const SWEEP_PROJECTOR_COUNTS: [usize; 5] = [1, 2, 4, 8, 16];
pub const SWEEP_HIDDEN: usize = 8;

/// Layer configuration for `n` projectors on `task`: two active projectors
/// (one when `n` is 1), unit routing noise.
pub fn projector_sweep_config(task: &SyntheticTask, n: usize) -> MopConfig {
    MopConfig {
        n_projectors: n,
        top_k: n.min(2),
        noise_sigma: 1.0,
        c_in: task.c_in,
        hidden: SWEEP_HIDDEN,
        c_out: task.c_out,
        router_hidden: SWEEP_HIDDEN,
        mode: Mode::Training,
    }
}

/// Trains one layer per projector count with the same data and budget.
pub fn sweep_projectors(
    task: &SyntheticTask,
    counts: &[usize],
    hyper: &TrainHyper,
) -> Result<Vec<ProjectorSweepRow>, EvalError> {
    let data = task.generate()?;
    counts
        .iter()
        .map(|&n| {
            let cfg = projector_sweep_config(task, n);
            let out = train_mop(&data, &cfg, hyper)?;
            Ok(ProjectorSweepRow {
                n_projectors: n,
                top_k: cfg.top_k,
                final_loss: out.final_loss,
            })
        })
        .collect()
}

/// Writes rows as CSV with a header line.
pub fn write_csv<T: Serialize>(rows: &[T], out: impl Write) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| EvalError::Csv(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_points_are_stable_and_spread() {
        let a = ConfusedBackend::hash_point("q", Some("img"));
        assert_eq!(a, ConfusedBackend::hash_point("q", Some("img")));
        assert!((0.0..1.0).contains(&a));
        let mean: f64 = (0..2000)
            .map(|i| ConfusedBackend::hash_point(&format!("query {i}"), None))
            .sum::<f64>()
            / 2000.0;
        assert!((mean - 0.5).abs() < 0.03, "{mean}");
    }

    #[test]
    fn confusion_grows_with_function_count() {
        let names = |n: usize| (0..n).map(|i| format!("f{i}")).collect::<Vec<_>>();
        let rates: Vec<f64> = (2..=6)
            .map(|n| ConfusedBackend::new(ScriptedBackend::default(), names(n), 0.01, 0.02).confusion_rate())
            .collect();
        assert!(rates.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn csv_shape() {
        let rows = vec![
            FunctionSweepRow {
                function_count: 2,
                sr: 100.0,
                keyhit: None,
            },
            FunctionSweepRow {
                function_count: 3,
                sr: 98.5,
                keyhit: Some(75.0),
            },
        ];
        let mut buf = Vec::new();
        write_csv(&rows, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "function_count,sr,keyhit\n2,100.0,\n3,98.5,75.0\n"
        );
    }

    #[test]
    fn sweep_config_caps_k() {
        let t = SyntheticTask::two_domain(0);
        assert_eq!(projector_sweep_config(&t, 1).top_k, 1);
        assert_eq!(projector_sweep_config(&t, 16).top_k, 2);
    }
}
