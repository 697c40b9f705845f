//! HTTP client for functions served by an external model.
//!
//! Request: `POST {"image": <base64>, "params": {..}}`. The response body
//! depends on the output kind:
//!
//! | kind       | body                                                         |
//! |------------|--------------------------------------------------------------|
//! | detections | `{"detections": [{"class_name", "bbox": [x1,y1,x2,y2], "score"}]}` |
//! | mask       | `{"class_name", "mask": {"width", "height", "rle": [..]}}`   |
//! | scene      | `{"triplets": [[instrument, verb, target]], "description"?}` |

use std::time::Duration;

use async_trait::async_trait;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::registry::{FunctionRequest, SurgicalFunction};
use super::rle::SegmentationMask;
use super::types::{BoundingBox, Detection, FunctionResult, OutputKind, SceneAnalysis, Triplet};
use super::{FailureCause, FunctionError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteFunctionConfig {
    pub url: String,
    pub output_kind: OutputKind,
    #[serde(with = "crate::duration_ms", default = "default_timeout")]
    pub timeout: Duration,
    /// Total attempts, including the first.
    #[serde(default = "default_attempts")]
    pub max_attempts: u32,
    #[serde(with = "crate::duration_ms", default = "default_backoff")]
    pub backoff: Duration,
}

fn default_timeout() -> Duration {
    crate::DEFAULT_FUNCTION_TIMEOUT
}

fn default_attempts() -> u32 {
    crate::DEFAULT_ATTEMPTS
}

fn default_backoff() -> Duration {
    crate::DEFAULT_BACKOFF
}

impl RemoteFunctionConfig {
    pub fn new(url: impl Into<String>, output_kind: OutputKind) -> Self {
        Self {
            url: url.into(),
            output_kind,
            timeout: default_timeout(),
            max_attempts: default_attempts(),
            backoff: default_backoff(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RemoteFunction {
    config: RemoteFunctionConfig,
    client: reqwest::Client,
}

#[derive(Serialize)]
struct RemoteRequest<'a> {
    image: String,
    params: &'a indexmap::IndexMap<String, String>,
}

#[derive(Deserialize)]
struct RawDetection {
    class_name: String,
    bbox: [f64; 4],
    score: f64,
}

#[derive(Deserialize)]
struct DetectionsBody {
    detections: Vec<RawDetection>,
}

#[derive(Deserialize)]
struct MaskBody {
    #[serde(default)]
    class_name: Option<String>,
    mask: SegmentationMask,
}

#[derive(Deserialize)]
struct SceneBody {
    triplets: Vec<(String, String, String)>,
    #[serde(default)]
    description: Option<String>,
}

fn schema<E: std::fmt::Display>(e: E) -> FunctionError {
    FunctionError::failed(FailureCause::Schema, e.to_string())
}

fn invalid(e: FunctionError) -> FunctionError {
    let detail = match e {
        FunctionError::Validation { detail } => detail,
        other => other.to_string(),
    };
    FunctionError::failed(FailureCause::Validation, detail)
}

/// Maps a response body onto a typed result, enforcing the same invariants as
/// fixture results.
pub(crate) fn parse_response(
    kind: OutputKind,
    body: &[u8],
    request: &FunctionRequest,
) -> Result<FunctionResult, FunctionError> {
    let result = match kind {
        OutputKind::Detections => {
            let raw: DetectionsBody = serde_json::from_slice(body).map_err(schema)?;
            let detections = raw
                .detections
                .into_iter()
                .map(|d| {
                    let [x1, y1, x2, y2] = d.bbox;
                    Ok(Detection {
                        class_name: d.class_name,
                        bbox: BoundingBox::new(x1, y1, x2, y2).map_err(invalid)?,
                        score: d.score,
                    })
                })
                .collect::<Result<Vec<_>, FunctionError>>()?;
            FunctionResult::Detections { detections }
        }
        OutputKind::Mask => {
            let raw: MaskBody = serde_json::from_slice(body).map_err(schema)?;
            let class_name = raw
                .class_name
                .or_else(|| request.params.values().next().cloned())
                .unwrap_or_default();
            FunctionResult::Mask {
                class_name,
                mask: raw.mask,
            }
        }
        OutputKind::Scene => {
            let raw: SceneBody = serde_json::from_slice(body).map_err(schema)?;
            let triplets: Vec<Triplet> = raw
                .triplets
                .into_iter()
                .map(|(i, v, t)| Triplet::new(&i, &v, &t))
                .collect();
            let mut analysis = SceneAnalysis::from_triplets(triplets);
            if let Some(d) = raw.description.filter(|d| !d.trim().is_empty()) {
                analysis.description = d;
            }
            FunctionResult::Scene { analysis }
        }
    };
    result.validate().map_err(invalid)?;
    Ok(result)
}

impl RemoteFunction {
    pub fn new(config: RemoteFunctionConfig) -> Result<Self, FunctionError> {
        let client = reqwest::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| FunctionError::failed(FailureCause::Transport, e.to_string()))?;
        Ok(Self { config, client })
    }

    pub fn config(&self) -> &RemoteFunctionConfig {
        &self.config
    }

    async fn attempt(&self, payload: &RemoteRequest<'_>) -> Result<Vec<u8>, FunctionError> {
        let response = self
            .client
            .post(&self.config.url)
            .json(payload)
            .send()
            .await
            .map_err(|e| {
                let cause = if e.is_timeout() {
                    FailureCause::Timeout
                } else {
                    FailureCause::Transport
                };
                FunctionError::failed(cause, e.to_string())
            })?;
        let status = response.status();
        let body = response.bytes().await.map_err(|e| {
            let cause = if e.is_timeout() {
                FailureCause::Timeout
            } else {
                FailureCause::Transport
            };
            FunctionError::failed(cause, e.to_string())
        })?;
        if status != reqwest::StatusCode::OK {
            let text = String::from_utf8_lossy(&body);
            return Err(FunctionError::failed(
                FailureCause::Status(status.as_u16()),
                text.chars().take(200).collect::<String>(),
            ));
        }
        Ok(body.to_vec())
    }
}

fn retryable(e: &FunctionError) -> bool {
    match e {
        FunctionError::Failed { cause, .. } => match cause {
            FailureCause::Transport | FailureCause::Timeout => true,
            FailureCause::Status(code) => *code >= 500,
            FailureCause::Schema | FailureCause::Validation => false,
        },
        _ => false,
    }
}

#[async_trait]
impl SurgicalFunction for RemoteFunction {
    async fn call(&self, request: &FunctionRequest) -> Result<FunctionResult, FunctionError> {
        let image = request
            .image
            .as_deref()
            .map(|b| base64::engine::general_purpose::STANDARD.encode(b))
            .unwrap_or_default();
        let payload = RemoteRequest {
            image,
            params: &request.params,
        };
        let attempts = self.config.max_attempts.max(1);
        let mut last = None;
        for n in 0..attempts {
            if n > 0 {
                tokio::time::sleep(self.config.backoff).await;
            }
            match self.attempt(&payload).await {
                Ok(body) => return parse_response(self.config.output_kind, &body, request),
                Err(e) if retryable(&e) => {
                    tracing::warn!(url = %self.config.url, attempt = n + 1, error = %e, "remote function attempt failed");
                    last = Some(e);
                }
                Err(e) => return Err(e),
            }
        }
        Err(last.expect("at least one attempt"))
    }
}
