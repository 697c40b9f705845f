//! Building blocks for a surgical assistant that routes visual features into
//! a language model, decides when to call surgical vision functions, and is
//! measured with call-rate, keyword, rejection, BLEU and IoU metrics.
//!
//! * [`mop`]: the mixture-of-projectors alignment layer, its exact gradients
//!   and a small trainer.
//! * [`protocol`]: the think / call / reply wire format and the
//!   function-calling dataset generator.
//! * [`functions`]: the surgical function registry, fixture-backed functions
//!   and the remote function client.
//! * [`orchestrator`]: sessions and the one-or-two round dispatch engine.
//! * [`eval`]: metrics, the evaluation runner and ablation sweeps.

pub mod eval;
pub mod functions;
pub mod mop;
pub mod orchestrator;
pub mod protocol;

use std::time::Duration;

pub const DEFAULT_BACKEND_TIMEOUT: Duration = Duration::from_secs(30);
pub const DEFAULT_FUNCTION_TIMEOUT: Duration = Duration::from_secs(10);
/// Attempts per remote request, including the first.
pub const DEFAULT_ATTEMPTS: u32 = 3;
pub const DEFAULT_BACKOFF: Duration = Duration::from_millis(200);

/// Serde adapter storing a [`Duration`] as integer milliseconds.
pub mod duration_ms {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        u64::deserialize(d).map(Duration::from_millis)
    }
}

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/mop.md")]
    mod mop {}
    #[doc = include_str!("../../../book/src/gradients.md")]
    mod gradients {}
    #[doc = include_str!("../../../book/src/checkpoints.md")]
    mod checkpoints {}
    #[doc = include_str!("../../../book/src/protocol.md")]
    mod protocol {}
    #[doc = include_str!("../../../book/src/dataset.md")]
    mod dataset {}
    #[doc = include_str!("../../../book/src/functions.md")]
    mod functions {}
    #[doc = include_str!("../../../book/src/dispatch.md")]
    mod dispatch {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
}
