use std::fmt;

use serde::{Deserialize, Serialize};

use super::rle::{Bitmap, SegmentationMask};
use super::FunctionError;

/// Normalized corner box `[x1, y1, x2, y2]` with `0 <= x1 < x2 <= 1` and
/// `0 <= y1 < y2 <= 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BoundingBox([f64; 4]);

impl BoundingBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self, FunctionError> {
        let coords = [x1, y1, x2, y2];
        if coords.iter().any(|c| !c.is_finite() || !(0.0..=1.0).contains(c)) {
            return Err(FunctionError::validation(format!(
                "box coordinates {coords:?} must lie in [0, 1]"
            )));
        }
        if !(x1 < x2 && y1 < y2) {
            return Err(FunctionError::validation(format!(
                "box {coords:?} must satisfy x1 < x2 and y1 < y2"
            )));
        }
        Ok(Self(coords))
    }

    pub fn coords(&self) -> [f64; 4] {
        self.0
    }

    pub fn area(&self) -> f64 {
        let [x1, y1, x2, y2] = self.0;
        (x2 - x1) * (y2 - y1)
    }
}

impl TryFrom<[f64; 4]> for BoundingBox {
    type Error = FunctionError;

    fn try_from(c: [f64; 4]) -> Result<Self, Self::Error> {
        Self::new(c[0], c[1], c[2], c[3])
    }
}

impl From<BoundingBox> for [f64; 4] {
    fn from(b: BoundingBox) -> Self {
        b.0
    }
}

/// Two decimals per coordinate: `[0.18, 0.41, 0.45, 0.99]`.
impl fmt::Display for BoundingBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [x1, y1, x2, y2] = self.0;
        write!(f, "[{x1:.2}, {y1:.2}, {x2:.2}, {y2:.2}]")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub class_name: String,
    pub bbox: BoundingBox,
    pub score: f64,
}

impl Detection {
    pub fn validate(&self) -> Result<(), FunctionError> {
        if self.class_name.trim().is_empty() {
            return Err(FunctionError::validation("detection class_name is empty"));
        }
        if !(self.score.is_finite() && (0.0..=1.0).contains(&self.score)) {
            return Err(FunctionError::validation(format!(
                "detection score {} outside [0, 1]",
                self.score
            )));
        }
        Ok(())
    }
}

/// Surgical action `(instrument, verb, target)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[String; 3]", into = "[String; 3]")]
pub struct Triplet {
    pub instrument: String,
    pub verb: String,
    pub target: String,
}

impl Triplet {
    pub fn new(instrument: &str, verb: &str, target: &str) -> Self {
        Self {
            instrument: instrument.into(),
            verb: verb.into(),
            target: target.into(),
        }
    }

    pub fn keywords(&self) -> [&str; 3] {
        [&self.instrument, &self.verb, &self.target]
    }
}

impl From<[String; 3]> for Triplet {
    fn from([instrument, verb, target]: [String; 3]) -> Self {
        Self {
            instrument,
            verb,
            target,
        }
    }
}

impl From<Triplet> for [String; 3] {
    fn from(t: Triplet) -> Self {
        [t.instrument, t.verb, t.target]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneAnalysis {
    pub triplets: Vec<Triplet>,
    pub description: String,
}

impl SceneAnalysis {
    /// Analysis whose description names every triplet.
    pub fn from_triplets(triplets: Vec<Triplet>) -> Self {
        let description = describe_triplets(&triplets);
        Self {
            triplets,
            description,
        }
    }
}

pub fn describe_triplets(triplets: &[Triplet]) -> String {
    if triplets.is_empty() {
        return "no activity recognized".into();
    }
    triplets
        .iter()
        .map(|t| format!("The {} is used to {} the {}.", t.instrument, t.verb, t.target))
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputKind {
    Detections,
    Mask,
    Scene,
}

/// Typed output of a surgical function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FunctionResult {
    Detections {
        detections: Vec<Detection>,
    },
    Mask {
        class_name: String,
        mask: SegmentationMask,
    },
    Scene {
        analysis: SceneAnalysis,
    },
}

impl FunctionResult {
    pub fn kind(&self) -> OutputKind {
        match self {
            Self::Detections { .. } => OutputKind::Detections,
            Self::Mask { .. } => OutputKind::Mask,
            Self::Scene { .. } => OutputKind::Scene,
        }
    }

    /// True when the function found nothing: no detections, an all-zero mask,
    /// or no recognized triplets.
    pub fn is_empty(&self) -> bool {
        match self {
            Self::Detections { detections } => detections.is_empty(),
            Self::Mask { mask, .. } => mask.area() == 0,
            Self::Scene { analysis } => analysis.triplets.is_empty(),
        }
    }

    /// Deterministic text fed back to the language model.
    ///
    /// * detections: one `class [x1, y1, x2, y2] score` line each, or
    ///   `no objects detected`
    /// * masks: `class mask: area fraction 0.1234, bounding box [..]`
    /// * scenes: one `instrument, verb, target` line per triplet, or
    ///   `no activity recognized`
    pub fn render_text(&self) -> String {
        match self {
            Self::Detections { detections } if detections.is_empty() => "no objects detected".into(),
            Self::Detections { detections } => detections
                .iter()
                .map(|d| format!("{} {} {:.2}", d.class_name, d.bbox, d.score))
                .collect::<Vec<_>>()
                .join("\n"),
            Self::Mask { class_name, mask } => {
                let bitmap = Bitmap::from_mask(mask);
                match bitmap.as_ref().ok().and_then(Bitmap::bounding_box) {
                    Some(b) => format!(
                        "{class_name} mask: area fraction {:.4}, bounding box {b}",
                        mask.area_fraction()
                    ),
                    None => format!("{class_name} mask: empty"),
                }
            }
            Self::Scene { analysis } if analysis.triplets.is_empty() => "no activity recognized".into(),
            Self::Scene { analysis } => analysis
                .triplets
                .iter()
                .map(|t| format!("{}, {}, {}", t.instrument, t.verb, t.target))
                .collect::<Vec<_>>()
                .join("\n"),
        }
    }

    /// Checks the same invariants the fixture functions guarantee.
    pub fn validate(&self) -> Result<(), FunctionError> {
        match self {
            Self::Detections { detections } => detections.iter().try_for_each(Detection::validate),
            Self::Mask { mask, .. } => mask.validate(),
            Self::Scene { .. } => Ok(()),
        }
    }
}

/// Public description of a registered function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionSpec {
    pub api_name: String,
    /// `(name, description)` of each required string parameter.
    pub required_params: Vec<(String, String)>,
    pub output_kind: OutputKind,
    pub description: String,
}

impl FunctionSpec {
    pub fn new(api_name: &str, params: &[(&str, &str)], output_kind: OutputKind, description: &str) -> Self {
        Self {
            api_name: api_name.into(),
            required_params: params
                .iter()
                .map(|(n, d)| (n.to_string(), d.to_string()))
                .collect(),
            output_kind,
            description: description.into(),
        }
    }

    pub fn detect() -> Self {
        Self::new(
            "detect",
            &[("target", "instrument or anatomy class to localize")],
            OutputKind::Detections,
            "Detects instances of the target class and returns normalized bounding boxes.",
        )
    }

    pub fn segment() -> Self {
        Self::new(
            "segment",
            &[("target", "instrument or anatomy class to segment")],
            OutputKind::Mask,
            "Segments the target class and returns a run-length encoded binary mask.",
        )
    }

    pub fn analyze_scene() -> Self {
        Self::new(
            "analyze_scene",
            &[],
            OutputKind::Scene,
            "Recognizes instrument-verb-target triplets describing the surgical activity.",
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_rendering_uses_two_decimals() {
        let b = BoundingBox::new(0.18, 0.41, 0.45, 0.99).unwrap();
        assert_eq!(b.to_string(), "[0.18, 0.41, 0.45, 0.99]");
        let b = BoundingBox::new(0.0, 0.5, 1.0, 1.0).unwrap();
        assert_eq!(b.to_string(), "[0.00, 0.50, 1.00, 1.00]");
    }

    #[test]
    fn box_invariants() {
        assert!(BoundingBox::new(0.5, 0.0, 0.5, 1.0).is_err());
        assert!(BoundingBox::new(0.0, 0.0, 1.2, 1.0).is_err());
        assert!(serde_json::from_str::<BoundingBox>("[0.1,0.2,0.05,0.9]").is_err());
        let b: BoundingBox = serde_json::from_str("[0.1,0.2,0.3,0.9]").unwrap();
        assert_eq!(b.coords(), [0.1, 0.2, 0.3, 0.9]);
    }

    #[test]
    fn renderings() {
        let empty = FunctionResult::Detections { detections: vec![] };
        assert_eq!(empty.render_text(), "no objects detected");
        assert!(empty.is_empty());

        let probe = FunctionResult::Detections {
            detections: vec![Detection {
                class_name: "navigation probe".into(),
                bbox: BoundingBox::new(0.18, 0.41, 0.45, 0.99).unwrap(),
                score: 1.0,
            }],
        };
        assert_eq!(probe.render_text(), "navigation probe [0.18, 0.41, 0.45, 0.99] 1.00");

        let scene = FunctionResult::Scene {
            analysis: SceneAnalysis::from_triplets(vec![Triplet::new("scissors", "cut", "tissue")]),
        };
        assert_eq!(scene.render_text(), "scissors, cut, tissue");

        let none = SceneAnalysis::from_triplets(vec![]);
        assert_eq!(none.description, "no activity recognized");
    }

    #[test]
    fn triplet_serializes_as_array() {
        let t = Triplet::new("grasper", "retract", "tumor");
        assert_eq!(serde_json::to_string(&t).unwrap(), r#"["grasper","retract","tumor"]"#);
    }
}
