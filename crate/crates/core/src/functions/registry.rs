use std::collections::HashMap;
use std::sync::Arc;

use async_trait::async_trait;
use indexmap::IndexMap;

use super::fixture::{fixture_detect, fixture_scene, fixture_segment, FixtureBundle};
use super::types::{FunctionResult, FunctionSpec, OutputKind, SceneAnalysis};
use super::{rle_encode, Bitmap, FunctionError};

pub const MIN_FUNCTIONS: usize = 2;
pub const MAX_FUNCTIONS: usize = 6;

/// Everything a function sees for one invocation.
#[derive(Debug, Clone, Default)]
pub struct FunctionRequest {
    /// Image identifier: a fixture `image_ref` or a `sha256:` content id.
    pub image_ref: String,
    /// Raw image bytes when the caller has them.
    pub image: Option<Arc<[u8]>>,
    pub params: IndexMap<String, String>,
}

impl FunctionRequest {
    pub fn new(image_ref: impl Into<String>) -> Self {
        Self {
            image_ref: image_ref.into(),
            ..Self::default()
        }
    }

    pub fn param(mut self, name: &str, value: &str) -> Self {
        self.params.insert(name.into(), value.into());
        self
    }

    pub fn require(&self, name: &str) -> Result<&str, FunctionError> {
        match self.params.get(name) {
            Some(v) if !v.trim().is_empty() => Ok(v),
            Some(_) => Err(FunctionError::ParamValidation {
                param: name.into(),
                reason: "must not be empty".into(),
            }),
            None => Err(FunctionError::ParamValidation {
                param: name.into(),
                reason: "missing required parameter".into(),
            }),
        }
    }
}

#[async_trait]
pub trait SurgicalFunction: Send + Sync {
    async fn call(&self, request: &FunctionRequest) -> Result<FunctionResult, FunctionError>;
}

/// Fixture-backed implementation of one of the three built-in kinds.
#[derive(Debug, Clone)]
pub struct FixtureFunction {
    kind: OutputKind,
    bundle: Arc<FixtureBundle>,
}

impl FixtureFunction {
    pub fn new(kind: OutputKind, bundle: Arc<FixtureBundle>) -> Self {
        Self { kind, bundle }
    }
}

#[async_trait]
impl SurgicalFunction for FixtureFunction {
    async fn call(&self, request: &FunctionRequest) -> Result<FunctionResult, FunctionError> {
        let fixture = self
            .bundle
            .get(&request.image_ref)
            .ok_or_else(|| FunctionError::UnknownImage {
                image_ref: request.image_ref.clone(),
            })?;
        Ok(match self.kind {
            OutputKind::Detections => FunctionResult::Detections {
                detections: fixture_detect(fixture, request.require("target")?),
            },
            OutputKind::Mask => {
                let target = request.require("target")?;
                FunctionResult::Mask {
                    class_name: target.trim().to_lowercase(),
                    mask: fixture_segment(fixture, target)?,
                }
            }
            OutputKind::Scene => FunctionResult::Scene {
                analysis: fixture_scene(fixture),
            },
        })
    }
}

/// A registered function that always reports finding nothing.
#[derive(Debug, Clone, Copy)]
pub struct DistractorFunction {
    kind: OutputKind,
}

impl DistractorFunction {
    pub fn new(kind: OutputKind) -> Self {
        Self { kind }
    }
}

#[async_trait]
impl SurgicalFunction for DistractorFunction {
    async fn call(&self, request: &FunctionRequest) -> Result<FunctionResult, FunctionError> {
        Ok(match self.kind {
            OutputKind::Detections => FunctionResult::Detections { detections: vec![] },
            OutputKind::Mask => FunctionResult::Mask {
                class_name: request.params.values().next().cloned().unwrap_or_default(),
                mask: rle_encode(&Bitmap::empty(1, 1)),
            },
            OutputKind::Scene => FunctionResult::Scene {
                analysis: SceneAnalysis::from_triplets(vec![]),
            },
        })
    }
}

/// Specs of the extra functions used to grow the registry beyond the
/// built-in three.
pub fn distractor_specs() -> Vec<FunctionSpec> {
    vec![
        FunctionSpec::new(
            "track_instrument",
            &[("target", "instrument to follow across the view")],
            OutputKind::Detections,
            "Tracks an instrument tip and returns its current bounding box.",
        ),
        FunctionSpec::new(
            "estimate_bleeding",
            &[("region", "anatomical region to inspect")],
            OutputKind::Mask,
            "Segments actively bleeding areas inside the given region.",
        ),
        FunctionSpec::new(
            "recognize_phase",
            &[],
            OutputKind::Scene,
            "Recognizes the current surgical phase of the procedure.",
        ),
    ]
}

struct Entry {
    spec: FunctionSpec,
    implementation: Arc<dyn SurgicalFunction>,
}

/// Name-addressed function set. Built once at startup, then shared read-only.
#[derive(Default)]
pub struct Registry {
    entries: Vec<Entry>,
    index: HashMap<String, usize>,
}

impl std::fmt::Debug for Registry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.entries.iter().map(|e| &e.spec.api_name)).finish()
    }
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(
        &mut self,
        spec: FunctionSpec,
        implementation: Arc<dyn SurgicalFunction>,
    ) -> Result<(), FunctionError> {
        if self.index.contains_key(&spec.api_name) {
            return Err(FunctionError::DuplicateName { name: spec.api_name });
        }
        self.index.insert(spec.api_name.clone(), self.entries.len());
        self.entries.push(Entry { spec, implementation });
        Ok(())
    }

    /// Specs in registration order.
    pub fn list(&self) -> Vec<&FunctionSpec> {
        self.entries.iter().map(|e| &e.spec).collect()
    }

    pub fn specs(&self) -> Vec<FunctionSpec> {
        self.entries.iter().map(|e| e.spec.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn spec(&self, api_name: &str) -> Option<&FunctionSpec> {
        self.index.get(api_name).map(|&i| &self.entries[i].spec)
    }

    pub fn lookup(&self, api_name: &str) -> Result<Arc<dyn SurgicalFunction>, FunctionError> {
        self.index
            .get(api_name)
            .map(|&i| Arc::clone(&self.entries[i].implementation))
            .ok_or_else(|| FunctionError::UnknownFunction {
                name: api_name.into(),
            })
    }
}

/// `{detect, segment, analyze_scene}` backed by `bundle`.
pub fn default_registry(bundle: Arc<FixtureBundle>) -> Registry {
    registry_with_count(bundle, 3).expect("3 is within the supported range")
}

/// Registry of `count` functions: `detect`, `segment`, then `analyze_scene`,
/// then distractors.
pub fn registry_with_count(bundle: Arc<FixtureBundle>, count: usize) -> Result<Registry, FunctionError> {
    if !(MIN_FUNCTIONS..=MAX_FUNCTIONS).contains(&count) {
        return Err(FunctionError::validation(format!(
            "function count must be in {MIN_FUNCTIONS}..={MAX_FUNCTIONS}, got {count}"
        )));
    }
    let mut registry = Registry::new();
    let builtin = [FunctionSpec::detect(), FunctionSpec::segment(), FunctionSpec::analyze_scene()];
    for spec in builtin.into_iter().take(count) {
        let f = FixtureFunction::new(spec.output_kind, Arc::clone(&bundle));
        registry.register(spec, Arc::new(f))?;
    }
    for spec in distractor_specs().into_iter().take(count.saturating_sub(3)) {
        let f = DistractorFunction::new(spec.output_kind);
        registry.register(spec, Arc::new(f))?;
    }
    Ok(registry)
}
