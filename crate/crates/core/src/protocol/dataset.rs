//! Function-calling conversation records and their template-driven generator.

use std::collections::{BTreeSet, HashSet};
use std::io::{BufRead, Write};

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::reply::{is_valid_api_name, FunctionCall, StructuredReply};
use crate::eval::EvalCase;
use crate::functions::{fixture_detect, fixture_scene, FixtureBundle, FunctionSpec, OutputKind, SceneFixture};

pub const DATASET_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    TestUnseen,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RecordKind {
    Positive,
    Negative,
    NoCall,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub schema_version: u32,
    pub id: String,
    pub split: Split,
    pub kind: RecordKind,
    pub image_ref: Option<String>,
    pub query: String,
    pub gold: StructuredReply,
    pub expectations: EvalCase,
}

/// One query/answer pattern.
///
/// Placeholders: `{object}` in queries and replies; `{boxes}`,
/// `{area_percent}`, `{description}` and `{caption}` in replies.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Template {
    pub id: String,
    pub split: Split,
    pub kind: RecordKind,
    #[serde(default)]
    pub api_name: Option<String>,
    pub query: String,
    pub thinking: String,
    pub reply: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateSet {
    pub schema_version: u32,
    pub templates: Vec<Template>,
}

const PLACEHOLDERS: [&str; 5] = ["object", "boxes", "area_percent", "description", "caption"];

fn placeholders(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(open) = rest.find('{') {
        let Some(close) = rest[open..].find('}') else { break };
        out.push(&rest[open + 1..open + close]);
        rest = &rest[open + close + 1..];
    }
    out
}

impl TemplateSet {
    pub fn builtin() -> Self {
        let t = |id: &str, split, kind, api: Option<&str>, query: &str, thinking: &str, reply: &str| Template {
            id: id.into(),
            split,
            kind,
            api_name: api.map(str::to_string),
            query: query.into(),
            thinking: thinking.into(),
            reply: reply.into(),
        };
        use RecordKind::*;
        use Split::*;
        Self {
            schema_version: DATASET_SCHEMA_VERSION,
            templates: vec![
                t("det-where", Train, Positive, Some("detect"),
                  "Where is the {object} in this image?",
                  "The surgeon asks for the location of the {object}. The detection function can localize it.",
                  "The {object} is located at {boxes}."),
                t("det-locate", Train, Positive, Some("detect"),
                  "Can you locate the {object}?",
                  "Locating the {object} needs bounding boxes, so I will call detection.",
                  "I found the {object} at {boxes}."),
                t("seg-segment", Train, Positive, Some("segment"),
                  "Segment the {object} in this view.",
                  "A pixel mask of the {object} is requested, so I will call segmentation.",
                  "The {object} has been segmented and covers {area_percent}% of the image."),
                t("seg-outline", Train, Positive, Some("segment"),
                  "Please outline the {object}.",
                  "Outlining the {object} requires its mask.",
                  "Here is the outline of the {object}, covering {area_percent}% of the image."),
                t("scene-what", Train, Positive, Some("analyze_scene"),
                  "What is happening in this surgical scene?",
                  "Recognizing the current surgical activity requires scene analysis.",
                  "{description}"),
                t("scene-action", Train, Positive, Some("analyze_scene"),
                  "Describe the current surgical action.",
                  "The action is best described by instrument, verb and target triplets.",
                  "{description}"),
                t("neg-where", Train, Negative, Some("detect"),
                  "Where is the {object} in this image?",
                  "The surgeon asks for the location of the {object}. The detection function can localize it.",
                  "The {object} is not present in this image."),
                t("neg-find", Train, Negative, Some("detect"),
                  "Can you find the {object} here?",
                  "I should check with detection whether the {object} is in view.",
                  "I cannot find any {object} in this image."),
                t("nocall-procedure", Train, NoCall, None,
                  "What procedure is shown here?",
                  "This can be answered from the view itself without any function.",
                  "{caption}"),
                t("nocall-role", Train, NoCall, None,
                  "What is the {object} used for in this procedure?",
                  "This is a knowledge question that needs no function.",
                  "The {object} is part of the transsphenoidal approach shown in this view."),
                t("unseen-det", TestUnseen, Positive, Some("detect"),
                  "Show me the position of the {object}.",
                  "The position of the {object} comes from detection.",
                  "The {object} appears at {boxes}."),
                t("unseen-seg", TestUnseen, Positive, Some("segment"),
                  "Give me a mask of the {object}.",
                  "A mask of the {object} comes from segmentation.",
                  "The mask of the {object} covers {area_percent}% of the image."),
                t("unseen-scene", TestUnseen, Positive, Some("analyze_scene"),
                  "Which instruments are acting on which tissues right now?",
                  "Instrument and tissue interactions come from scene analysis.",
                  "{description}"),
                t("unseen-neg", TestUnseen, Negative, Some("detect"),
                  "Is there a {object} visible here? Point to it.",
                  "Detection will tell whether the {object} is visible.",
                  "No, the {object} is not visible in this image."),
                t("unseen-nocall", TestUnseen, NoCall, None,
                  "Summarize this view in one sentence.",
                  "A short summary needs no function.",
                  "{caption}"),
            ],
        }
    }

    /// Checks placeholders, api names against `specs` and split hygiene.
    pub fn validate(&self, specs: &[FunctionSpec]) -> Result<(), GenerationError> {
        if self.templates.is_empty() {
            return Err(GenerationError::EmptyTemplates);
        }
        let bad = |t: &Template, detail: String| GenerationError::BadTemplate {
            template: t.id.clone(),
            detail,
        };
        let mut ids = HashSet::new();
        for t in &self.templates {
            if !ids.insert(&t.id) {
                return Err(bad(t, "duplicate template id".into()));
            }
            for p in placeholders(&t.query).into_iter().chain(placeholders(&t.reply)) {
                if !PLACEHOLDERS.contains(&p) {
                    return Err(bad(t, format!("unknown placeholder {{{p}}}")));
                }
            }
            match (t.kind, &t.api_name) {
                (RecordKind::NoCall, Some(_)) => return Err(bad(t, "no-call template names a function".into())),
                (RecordKind::Positive, None) => return Err(bad(t, "positive template names no function".into())),
                (_, Some(api)) => {
                    let spec = specs.iter().find(|s| &s.api_name == api).ok_or_else(|| {
                        GenerationError::UnknownFunction {
                            template: t.id.clone(),
                            api_name: api.clone(),
                        }
                    })?;
                    if t.kind == RecordKind::Negative && spec.output_kind != OutputKind::Detections {
                        return Err(bad(t, "negative templates must call a detection function".into()));
                    }
                }
                _ => {}
            }
        }
        let train: HashSet<_> = self
            .templates
            .iter()
            .filter(|t| t.split == Split::Train)
            .map(|t| &t.query)
            .collect();
        if let Some(t) = self
            .templates
            .iter()
            .find(|t| t.split == Split::TestUnseen && train.contains(&t.query))
        {
            return Err(bad(t, "unseen template reuses a train query".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetCounts {
    pub positive: usize,
    pub negative: usize,
    pub no_call: usize,
    pub unseen: usize,
}

impl DatasetCounts {
    pub fn desk_scale() -> Self {
        Self {
            positive: 2000,
            negative: 200,
            no_call: 200,
            unseen: 200,
        }
    }

    pub fn total(&self) -> usize {
        self.positive + self.negative + self.no_call + self.unseen
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GenerationError {
    #[error("template set is empty")]
    EmptyTemplates,
    #[error("template {template} calls unregistered function {api_name:?}")]
    UnknownFunction { template: String, api_name: String },
    #[error("template {template}: {detail}")]
    BadTemplate { template: String, detail: String },
    #[error("no scene fits any {split:?} {kind:?} template")]
    NoEligibleScene { split: Split, kind: RecordKind },
}

struct Filled {
    object: Option<String>,
    gold: StructuredReply,
    case: EvalCase,
}

fn fill(text: &str, vars: &[(&str, &str)]) -> String {
    let mut out = text.to_string();
    for (k, v) in vars {
        out = out.replace(&format!("{{{k}}}"), v);
    }
    out
}

fn candidates(t: &Template, f: &SceneFixture, specs: &[FunctionSpec], vocab: &[String]) -> Vec<Option<String>> {
    let uses_object = t.query.contains("{object}");
    let kind = t
        .api_name
        .as_ref()
        .and_then(|a| specs.iter().find(|s| &s.api_name == a))
        .map(|s| s.output_kind);
    match (t.kind, kind) {
        (RecordKind::Positive, Some(OutputKind::Detections)) => {
            f.detectable_classes().into_iter().map(|c| Some(c.to_string())).collect()
        }
        (RecordKind::Positive, Some(OutputKind::Mask)) => f.gt_masks.keys().cloned().map(Some).collect(),
        (RecordKind::Positive, _) => {
            if fixture_scene(f).triplets.is_empty() {
                vec![]
            } else {
                vec![None]
            }
        }
        (RecordKind::Negative, _) => vocab
            .iter()
            .filter(|o| !f.present_objects.contains(*o))
            .cloned()
            .map(Some)
            .collect(),
        (RecordKind::NoCall, _) if uses_object => f.present_objects.iter().cloned().map(Some).collect(),
        (RecordKind::NoCall, _) => vec![None],
    }
}

fn instantiate(t: &Template, f: &SceneFixture, object: Option<String>, specs: &[FunctionSpec]) -> Filled {
    let obj = object.clone().unwrap_or_default();
    let mut case = EvalCase::new(String::new(), String::new());
    case.image_ref = Some(f.image_ref.clone());
    case.expect_call = t.api_name.clone();
    case.is_negative = t.kind == RecordKind::Negative;

    let mut boxes = String::new();
    let mut area_percent = String::new();
    let mut description = String::new();
    if t.kind == RecordKind::Positive {
        let spec = specs
            .iter()
            .find(|s| Some(&s.api_name) == t.api_name.as_ref())
            .expect("validated template");
        match spec.output_kind {
            OutputKind::Detections => {
                let dets = fixture_detect(f, &obj);
                boxes = dets.iter().map(|d| d.bbox.to_string()).collect::<Vec<_>>().join(" and ");
                case.gt_boxes = dets.first().map(|d| d.bbox);
            }
            OutputKind::Mask => {
                let mask = f.gt_masks[&obj].clone();
                area_percent = format!("{:.2}", mask.area_fraction() * 100.0);
                case.gt_mask = Some(mask);
            }
            OutputKind::Scene => {
                let scene = fixture_scene(f);
                let mut seen = BTreeSet::new();
                for t in &scene.triplets {
                    for k in t.keywords() {
                        if seen.insert(k.to_string()) {
                            case.keywords.push(k.to_string());
                        }
                    }
                }
                description = scene.description;
            }
        }
    }
    let vars = [
        ("object", obj.as_str()),
        ("boxes", boxes.as_str()),
        ("area_percent", area_percent.as_str()),
        ("description", description.as_str()),
        ("caption", f.caption.as_str()),
    ];
    let calling = t.api_name.as_ref().map(|api| {
        let spec = specs.iter().find(|s| &s.api_name == api).expect("validated template");
        let mut call = FunctionCall::new(api.clone());
        for (name, _) in &spec.required_params {
            call.api_params.insert(name.clone(), obj.clone());
        }
        call
    });
    let gold = StructuredReply::new(
        fill(&t.thinking, &vars).trim(),
        calling,
        fill(&t.reply, &vars).trim(),
    );
    case.query = fill(&t.query, &vars);
    case.reference_reply = gold.replying.clone();
    Filled { object, gold, case }
}

fn generate_group(
    rng: &mut ChaCha8Rng,
    templates: &TemplateSet,
    fixtures: &FixtureBundle,
    specs: &[FunctionSpec],
    split: Split,
    kinds: &[RecordKind],
    count: usize,
    id_prefix: &str,
    out: &mut Vec<DatasetRecord>,
) -> Result<(), GenerationError> {
    if count == 0 {
        return Ok(());
    }
    let vocab = &fixtures.vocabulary().objects;
    let eligible: Vec<(&Template, Vec<(&SceneFixture, Option<String>)>)> = templates
        .templates
        .iter()
        .filter(|t| t.split == split && kinds.contains(&t.kind))
        .map(|t| {
            let pairs = fixtures
                .fixtures()
                .iter()
                .flat_map(|f| candidates(t, f, specs, vocab).into_iter().map(move |o| (f, o)))
                .collect::<Vec<_>>();
            (t, pairs)
        })
        .filter(|(_, pairs)| !pairs.is_empty())
        .collect();
    if eligible.is_empty() {
        return Err(GenerationError::NoEligibleScene { split, kind: kinds[0] });
    }
    for _ in 0..count {
        let (template, pairs) = eligible.choose(rng).expect("non-empty");
        let (fixture, object) = pairs.choose(rng).expect("non-empty").clone();
        let filled = instantiate(template, fixture, object, specs);
        let id = format!("{id_prefix}-{:05}", out.len());
        let mut case = filled.case;
        case.id = id.clone();
        let _ = filled.object;
        out.push(DatasetRecord {
            schema_version: DATASET_SCHEMA_VERSION,
            id,
            split,
            kind: template.kind,
            image_ref: Some(fixture.image_ref.clone()),
            query: case.query.clone(),
            gold: filled.gold,
            expectations: case,
        });
    }
    Ok(())
}

/// Generates `counts.positive + counts.negative + counts.no_call` train
/// records followed by `counts.unseen` records from the unseen templates.
/// Output depends only on the arguments.
pub fn generate_fc_dataset(
    templates: &TemplateSet,
    fixtures: &FixtureBundle,
    specs: &[FunctionSpec],
    counts: DatasetCounts,
    seed: u64,
) -> Result<Vec<DatasetRecord>, GenerationError> {
    templates.validate(specs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(counts.total());
    use RecordKind::*;
    let groups = [
        (Split::Train, vec![Positive], counts.positive),
        (Split::Train, vec![Negative], counts.negative),
        (Split::Train, vec![NoCall], counts.no_call),
        (Split::TestUnseen, vec![Positive, Negative, NoCall], counts.unseen),
    ];
    for (split, kinds, count) in groups {
        let prefix = match split {
            Split::Train => "train",
            Split::TestUnseen => "unseen",
        };
        generate_group(&mut rng, templates, fixtures, specs, split, &kinds, count, prefix, &mut out)?;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "violation", rename_all = "snake_case")]
pub enum Violation {
    SchemaVersion { found: u32 },
    EmptyField { field: String },
    InvalidReply { detail: String },
    UnknownFunction { api_name: String },
    MissingParam { api_name: String, param: String },
    UnexpectedParam { api_name: String, param: String },
    KindMismatch { detail: String },
    NegativeExpectations { detail: String },
    ExpectationMismatch { detail: String },
}

/// Checks record invariants, api existence and parameter schemas. Collects
/// every violation instead of stopping at the first.
pub fn validate_record(rec: &DatasetRecord, specs: &[FunctionSpec]) -> Result<(), Vec<Violation>> {
    let mut v = Vec::new();
    if rec.schema_version != DATASET_SCHEMA_VERSION {
        v.push(Violation::SchemaVersion {
            found: rec.schema_version,
        });
    }
    for (field, value) in [("id", &rec.id), ("query", &rec.query)] {
        if value.trim().is_empty() {
            v.push(Violation::EmptyField { field: field.into() });
        }
    }
    if let Err(detail) = rec.gold.validate() {
        v.push(Violation::InvalidReply { detail });
    }
    if let Some(call) = &rec.gold.calling {
        match specs.iter().find(|s| s.api_name == call.api_name) {
            None => v.push(Violation::UnknownFunction {
                api_name: call.api_name.clone(),
            }),
            Some(spec) => {
                for (param, _) in &spec.required_params {
                    if call.api_params.get(param).is_none_or(|x| x.trim().is_empty()) {
                        v.push(Violation::MissingParam {
                            api_name: call.api_name.clone(),
                            param: param.clone(),
                        });
                    }
                }
                for param in call.api_params.keys() {
                    if !spec.required_params.iter().any(|(p, _)| p == param) {
                        v.push(Violation::UnexpectedParam {
                            api_name: call.api_name.clone(),
                            param: param.clone(),
                        });
                    }
                }
            }
        }
        if !is_valid_api_name(&call.api_name) {
            v.push(Violation::InvalidReply {
                detail: format!("invalid api_name {:?}", call.api_name),
            });
        }
    }
    match (rec.kind, &rec.gold.calling) {
        (RecordKind::NoCall, Some(_)) => v.push(Violation::KindMismatch {
            detail: "no-call record has a gold call".into(),
        }),
        (RecordKind::Positive, None) => v.push(Violation::KindMismatch {
            detail: "positive record has no gold call".into(),
        }),
        _ => {}
    }
    let e = &rec.expectations;
    if rec.kind == RecordKind::Negative {
        if !e.is_negative {
            v.push(Violation::NegativeExpectations {
                detail: "expectations are not marked negative".into(),
            });
        }
    } else if e.is_negative {
        v.push(Violation::KindMismatch {
            detail: format!("{:?} record has negative expectations", rec.kind),
        });
    }
    if let Err(detail) = e.validate() {
        v.push(Violation::NegativeExpectations { detail });
    }
    let gold_api = rec.gold.calling.as_ref().map(|c| &c.api_name);
    if e.expect_call.as_ref() != gold_api {
        v.push(Violation::ExpectationMismatch {
            detail: format!("expect_call {:?} differs from gold call {:?}", e.expect_call, gold_api),
        });
    }
    if e.id != rec.id || e.query != rec.query || e.image_ref != rec.image_ref {
        v.push(Violation::ExpectationMismatch {
            detail: "expectations id, query or image_ref differ from the record".into(),
        });
    }
    if v.is_empty() {
        Ok(())
    } else {
        Err(v)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum JsonlError {
    #[error("line {line}: {detail}")]
    Line { line: usize, detail: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn write_jsonl<T: Serialize>(items: &[T], mut out: impl Write) -> std::io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

/// Reads one JSON value per non-blank line.
pub fn read_jsonl<T: serde::de::DeserializeOwned>(input: impl BufRead) -> Result<Vec<T>, JsonlError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| JsonlError::Line {
            line: i + 1,
            detail: e.to_string(),
        })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup() -> (TemplateSet, FixtureBundle, Vec<FunctionSpec>) {
        (
            TemplateSet::builtin(),
            FixtureBundle::synthetic(3, 12),
            vec![FunctionSpec::detect(), FunctionSpec::segment(), FunctionSpec::analyze_scene()],
        )
    }

    fn counts(p: usize, n: usize, c: usize) -> DatasetCounts {
        DatasetCounts {
            positive: p,
            negative: n,
            no_call: c,
            unseen: 0,
        }
    }

    #[test]
    fn zero_counts_give_empty_dataset() {
        let (t, f, s) = setup();
        assert!(generate_fc_dataset(&t, &f, &s, counts(0, 0, 0), 1).unwrap().is_empty());
    }

    #[test]
    fn generation_is_valid_and_deterministic() {
        let (t, f, s) = setup();
        let a = generate_fc_dataset(&t, &f, &s, counts(100, 10, 10), 9).unwrap();
        assert_eq!(a.len(), 120);
        for r in &a {
            validate_record(r, &s).unwrap_or_else(|v| panic!("{}: {v:?}", r.id));
        }
        let negatives = a.iter().filter(|r| r.kind == RecordKind::Negative).count();
        assert_eq!(negatives * 12, a.len());
        let b = generate_fc_dataset(&t, &f, &s, counts(100, 10, 10), 9).unwrap();
        let (mut x, mut y) = (Vec::new(), Vec::new());
        write_jsonl(&a, &mut x).unwrap();
        write_jsonl(&b, &mut y).unwrap();
        assert_eq!(x, y);
        let back: Vec<DatasetRecord> = read_jsonl(x.as_slice()).unwrap();
        assert_eq!(back, a);
    }

    #[test]
    fn negatives_query_absent_objects() {
        let (t, f, s) = setup();
        let recs = generate_fc_dataset(&t, &f, &s, counts(0, 50, 0), 2).unwrap();
        for r in recs {
            let scene = f.get(r.image_ref.as_deref().unwrap()).unwrap();
            let target = &r.gold.calling.as_ref().unwrap().api_params["target"];
            assert!(!scene.present_objects.contains(target));
            assert!(r.gold.replying.contains(target.as_str()));
        }
    }

    #[test]
    fn unknown_function_in_template() {
        let (t, f, _) = setup();
        let err = generate_fc_dataset(&t, &f, &[FunctionSpec::detect()], counts(1, 0, 0), 1).unwrap_err();
        assert!(matches!(err, GenerationError::UnknownFunction { .. }));
    }

    #[test]
    fn splits_are_disjoint() {
        let (t, f, s) = setup();
        let recs = generate_fc_dataset(&t, &f, &s, DatasetCounts { unseen: 40, ..counts(40, 5, 5) }, 5).unwrap();
        let train_q: HashSet<_> = t.templates.iter().filter(|x| x.split == Split::Train).map(|x| &x.query).collect();
        let unseen_t: Vec<_> = t.templates.iter().filter(|x| x.split == Split::TestUnseen).collect();
        assert!(unseen_t.iter().all(|x| !train_q.contains(&x.query)));
        let ids: HashSet<_> = recs.iter().map(|r| &r.id).collect();
        assert_eq!(ids.len(), recs.len());
        assert_eq!(recs.iter().filter(|r| r.split == Split::TestUnseen).count(), 40);
    }

    #[test]
    fn violations() {
        let (t, f, s) = setup();
        let rec = generate_fc_dataset(&t, &f, &s, counts(1, 0, 1), 4).unwrap();
        let mut unknown = rec[0].clone();
        unknown.gold.calling.as_mut().unwrap().api_name = "teleport".into();
        unknown.expectations.expect_call = Some("teleport".into());
        assert_eq!(
            validate_record(&unknown, &s).unwrap_err(),
            vec![Violation::UnknownFunction {
                api_name: "teleport".into()
            }]
        );
        let mut mismatch = rec[1].clone();
        mismatch.gold.calling = Some(FunctionCall::new("detect").param("target", "tumor"));
        mismatch.expectations.expect_call = Some("detect".into());
        let v = validate_record(&mismatch, &s).unwrap_err();
        assert!(v.iter().any(|x| matches!(x, Violation::KindMismatch { .. })), "{v:?}");
        let with_target = generate_fc_dataset(&t, &f, &s, counts(20, 0, 0), 4).unwrap();
        let mut missing = with_target
            .into_iter()
            .find(|r| r.gold.calling.as_ref().unwrap().api_params.contains_key("target"))
            .unwrap();
        missing.gold.calling.as_mut().unwrap().api_params.clear();
        let v = validate_record(&missing, &s).unwrap_err();
        assert!(matches!(&v[0], Violation::MissingParam { param, .. } if param == "target"));
    }

    #[test]
    fn probe_scene_gold_reply_has_figure_box() {
        let (t, f, s) = setup();
        let recs = generate_fc_dataset(&t, &f, &s, counts(400, 0, 0), 11).unwrap();
        let probe = recs
            .iter()
            .find(|r| r.image_ref.as_deref() == Some("probe_scene") && r.query.contains("navigation probe"))
            .expect("probe query sampled");
        assert!(probe.gold.replying.contains("[0.18, 0.41, 0.45, 0.99]"));
    }
}
