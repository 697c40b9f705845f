//! Desk-scale ground truth: annotated scenes that back the fixture functions
//! and the evaluation suites.
//!
//! A bundle is a directory holding `vocabulary.json` plus one annotation file
//! `<image_ref>.json` per scene, optionally next to the scene image.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::rle::{rle_encode, Bitmap, SegmentationMask};
use super::types::{BoundingBox, Detection, SceneAnalysis, Triplet};
use super::FunctionError;

pub const FIXTURE_SCHEMA_VERSION: u32 = 1;
pub const VOCABULARY_FILE: &str = "vocabulary.json";

/// Closed vocabularies for object classes and triplet slots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub schema_version: u32,
    /// Every class a query may mention, present in a scene or not.
    pub objects: Vec<String>,
    pub instruments: Vec<String>,
    pub verbs: Vec<String>,
    pub targets: Vec<String>,
}

impl Vocabulary {
    pub fn neurosurgery() -> Self {
        let v = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        let instruments = v(&[
            "navigation probe",
            "suction tube",
            "bipolar forceps",
            "curette",
            "scissors",
            "grasper",
            "drill",
            "rongeur",
            "dissector",
        ]);
        let targets = v(&[
            "tumor",
            "tissue",
            "sella floor",
            "nasal septum",
            "pituitary gland",
            "blood",
            "mucosa",
        ]);
        let mut objects = instruments.clone();
        objects.extend(targets.iter().filter(|t| *t != "tissue" && *t != "blood").cloned());
        Self {
            schema_version: FIXTURE_SCHEMA_VERSION,
            objects,
            instruments,
            verbs: v(&[
                "cut", "retract", "coagulate", "aspirate", "dissect", "grasp", "drill", "locate",
            ]),
            targets,
        }
    }

    fn check_triplet(&self, t: &Triplet) -> Result<(), String> {
        let check = |slot: &str, value: &str, list: &[String]| {
            if list.iter().any(|x| x == value) {
                Ok(())
            } else {
                Err(format!("triplet {slot} {value:?} is not in the vocabulary"))
            }
        };
        check("instrument", &t.instrument, &self.instruments)?;
        check("verb", &t.verb, &self.verbs)?;
        check("target", &t.target, &self.targets)
    }
}

/// One annotated scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneFixture {
    pub schema_version: u32,
    pub image_ref: String,
    /// Image file name relative to the bundle directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_file: Option<String>,
    /// Free-text description used for answers that need no function.
    #[serde(default)]
    pub caption: String,
    pub present_objects: BTreeSet<String>,
    #[serde(rename = "detections")]
    pub gt_detections: Vec<Detection>,
    #[serde(rename = "masks", default)]
    pub gt_masks: BTreeMap<String, SegmentationMask>,
    #[serde(rename = "triplets", default)]
    pub gt_triplets: Vec<Triplet>,
}

impl SceneFixture {
    pub fn validate(&self, vocab: &Vocabulary) -> Result<(), String> {
        if self.schema_version != FIXTURE_SCHEMA_VERSION {
            return Err(format!("unsupported schema_version {}", self.schema_version));
        }
        if self.image_ref.is_empty() {
            return Err("image_ref is empty".into());
        }
        for d in &self.gt_detections {
            d.validate().map_err(|e| e.to_string())?;
            if !self.present_objects.contains(&d.class_name) {
                return Err(format!("detection class {:?} is not in present_objects", d.class_name));
            }
        }
        for (class, mask) in &self.gt_masks {
            if !self.present_objects.contains(class) {
                return Err(format!("mask class {class:?} is not in present_objects"));
            }
            mask.validate().map_err(|e| format!("mask {class:?}: {e}"))?;
        }
        for t in &self.gt_triplets {
            vocab.check_triplet(t)?;
        }
        for o in &self.present_objects {
            if !vocab.objects.contains(o) {
                return Err(format!("present object {o:?} is not in the vocabulary"));
            }
        }
        Ok(())
    }

    /// Classes that have at least one annotated box.
    pub fn detectable_classes(&self) -> Vec<&str> {
        let mut seen = Vec::new();
        for d in &self.gt_detections {
            if !seen.contains(&d.class_name.as_str()) {
                seen.push(d.class_name.as_str());
            }
        }
        seen
    }
}

fn same_class(a: &str, b: &str) -> bool {
    a.trim().to_lowercase() == b.trim().to_lowercase()
}

/// Annotated boxes of `target_class` (case-insensitive) in annotation order.
/// Classes absent from the scene yield an empty list.
pub fn fixture_detect(fixture: &SceneFixture, target_class: &str) -> Vec<Detection> {
    fixture
        .gt_detections
        .iter()
        .filter(|d| same_class(&d.class_name, target_class))
        .cloned()
        .collect()
}

pub fn fixture_segment(fixture: &SceneFixture, target_class: &str) -> Result<SegmentationMask, FunctionError> {
    fixture
        .gt_masks
        .iter()
        .find(|(class, _)| same_class(class, target_class))
        .map(|(_, m)| m.clone())
        .ok_or_else(|| FunctionError::ClassNotFound { class: target_class.to_string() })
}

pub fn fixture_scene(fixture: &SceneFixture) -> SceneAnalysis {
    SceneAnalysis::from_triplets(fixture.gt_triplets.clone())
}

/// `sha256:<hex>` content address of image bytes.
pub fn content_id(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
    format!("sha256:{hex}")
}

/// A loaded fixture bundle, addressable by `image_ref` and by the content id
/// of each scene image.
#[derive(Debug, Clone, Default)]
pub struct FixtureBundle {
    vocabulary: Option<Vocabulary>,
    fixtures: Vec<SceneFixture>,
    images: HashMap<String, Vec<u8>>,
    index: HashMap<String, usize>,
}

impl FixtureBundle {
    pub fn new(vocabulary: Vocabulary, fixtures: Vec<SceneFixture>) -> Result<Self, FunctionError> {
        let mut bundle = Self {
            vocabulary: Some(vocabulary),
            ..Self::default()
        };
        for f in fixtures {
            bundle.insert(f, None)?;
        }
        Ok(bundle)
    }

    fn insert(&mut self, fixture: SceneFixture, image: Option<Vec<u8>>) -> Result<(), FunctionError> {
        let vocab = self.vocabulary.as_ref().expect("vocabulary set before fixtures");
        fixture.validate(vocab).map_err(|detail| FunctionError::Bundle {
            path: fixture.image_ref.clone(),
            detail,
        })?;
        if self.index.contains_key(&fixture.image_ref) {
            return Err(FunctionError::Bundle {
                path: fixture.image_ref.clone(),
                detail: "duplicate image_ref".into(),
            });
        }
        let slot = self.fixtures.len();
        self.index.insert(fixture.image_ref.clone(), slot);
        if let Some(bytes) = image {
            self.index.insert(content_id(&bytes), slot);
            self.images.insert(fixture.image_ref.clone(), bytes);
        }
        self.fixtures.push(fixture);
        Ok(())
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        self.vocabulary.as_ref().expect("bundle always has a vocabulary")
    }

    pub fn fixtures(&self) -> &[SceneFixture] {
        &self.fixtures
    }

    /// Looks up a scene by `image_ref` or by image content id.
    pub fn get(&self, image_ref: &str) -> Option<&SceneFixture> {
        self.index.get(image_ref).map(|&i| &self.fixtures[i])
    }

    pub fn contains(&self, image_ref: &str) -> bool {
        self.index.contains_key(image_ref)
    }

    pub fn image_bytes(&self, image_ref: &str) -> Option<&[u8]> {
        let fixture = self.get(image_ref)?;
        self.images.get(&fixture.image_ref).map(Vec::as_slice)
    }

    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self, FunctionError> {
        let dir = dir.as_ref();
        let bundle_err = |path: &Path, detail: String| FunctionError::Bundle {
            path: path.display().to_string(),
            detail,
        };
        let vocab_path = dir.join(VOCABULARY_FILE);
        let vocab_text = fs::read_to_string(&vocab_path).map_err(|e| bundle_err(&vocab_path, e.to_string()))?;
        let vocabulary: Vocabulary =
            serde_json::from_str(&vocab_text).map_err(|e| bundle_err(&vocab_path, e.to_string()))?;
        if vocabulary.schema_version != FIXTURE_SCHEMA_VERSION {
            return Err(bundle_err(
                &vocab_path,
                format!("unsupported schema_version {}", vocabulary.schema_version),
            ));
        }

        let mut paths: Vec<_> = fs::read_dir(dir)
            .map_err(|e| bundle_err(dir, e.to_string()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json") && !p.ends_with(VOCABULARY_FILE))
            .collect();
        paths.sort();

        let mut bundle = Self {
            vocabulary: Some(vocabulary),
            ..Self::default()
        };
        for path in paths {
            let text = fs::read_to_string(&path).map_err(|e| bundle_err(&path, e.to_string()))?;
            let fixture: SceneFixture =
                serde_json::from_str(&text).map_err(|e| bundle_err(&path, e.to_string()))?;
            let image = match &fixture.image_file {
                Some(name) => {
                    let p = dir.join(name);
                    Some(fs::read(&p).map_err(|e| bundle_err(&p, e.to_string()))?)
                }
                None => None,
            };
            bundle.insert(fixture, image).map_err(|e| match e {
                FunctionError::Bundle { detail, .. } => bundle_err(&path, detail),
                other => other,
            })?;
        }
        Ok(bundle)
    }

    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<(), FunctionError> {
        let dir = dir.as_ref();
        let io = |e: std::io::Error| FunctionError::Bundle {
            path: dir.display().to_string(),
            detail: e.to_string(),
        };
        fs::create_dir_all(dir).map_err(io)?;
        let json = |v: &dyn erased::Json| v.pretty();
        fs::write(dir.join(VOCABULARY_FILE), json(self.vocabulary())).map_err(io)?;
        for f in &self.fixtures {
            fs::write(dir.join(format!("{}.json", f.image_ref)), json(f)).map_err(io)?;
            if let (Some(name), Some(bytes)) = (&f.image_file, self.images.get(&f.image_ref)) {
                fs::write(dir.join(name), bytes).map_err(io)?;
            }
        }
        Ok(())
    }

    /// Deterministic synthetic bundle: the navigation-probe scene followed by
    /// `extra_scenes` randomly composed scenes. Box corners lie on a 0.01 grid
    /// so their two-decimal rendering is exact.
    pub fn synthetic(seed: u64, extra_scenes: usize) -> Self {
        let vocab = Vocabulary::neurosurgery();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fixtures = vec![probe_scene()];
        for i in 0..extra_scenes {
            fixtures.push(random_scene(&mut rng, &vocab, &format!("scene_{:03}", i + 1)));
        }
        let mut bundle = Self {
            vocabulary: Some(vocab),
            ..Self::default()
        };
        for mut f in fixtures {
            let name = format!("{}.ppm", f.image_ref);
            f.image_file = Some(name);
            let image = render_scene_ppm(&f);
            bundle
                .insert(f, Some(image))
                .expect("synthetic scenes satisfy the fixture invariants");
        }
        bundle
    }
}

mod erased {
    pub trait Json {
        fn pretty(&self) -> String;
    }

    impl<T: serde::Serialize> Json for T {
        fn pretty(&self) -> String {
            let mut s = serde_json::to_string_pretty(self).expect("fixture types serialize");
            s.push('\n');
            s
        }
    }
}

pub const SCENE_WIDTH: usize = 100;
pub const SCENE_HEIGHT: usize = 100;

fn box_mask(b: &BoundingBox) -> SegmentationMask {
    let [x1, y1, x2, y2] = b.coords();
    let px = |v: f64, size: usize| (v * size as f64).round() as usize;
    rle_encode(&Bitmap::rectangle(
        SCENE_WIDTH,
        SCENE_HEIGHT,
        px(x1, SCENE_WIDTH),
        px(y1, SCENE_HEIGHT),
        px(x2, SCENE_WIDTH),
        px(y2, SCENE_HEIGHT),
    ))
}

/// Transsphenoidal scene with a navigation probe at `[0.18, 0.41, 0.45, 0.99]`.
pub fn probe_scene() -> SceneFixture {
    let probe = BoundingBox::new(0.18, 0.41, 0.45, 0.99).expect("valid box");
    let suction = BoundingBox::new(0.62, 0.05, 0.88, 0.47).expect("valid box");
    let tumor = BoundingBox::new(0.40, 0.30, 0.60, 0.55).expect("valid box");
    let det = |c: &str, b: BoundingBox| Detection {
        class_name: c.into(),
        bbox: b,
        score: 1.0,
    };
    SceneFixture {
        schema_version: FIXTURE_SCHEMA_VERSION,
        image_ref: "probe_scene".into(),
        image_file: None,
        caption: "An endoscopic view of transsphenoidal pituitary adenoma resection with the tumor exposed at the center.".into(),
        present_objects: ["navigation probe", "suction tube", "tumor"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        gt_detections: vec![
            det("navigation probe", probe),
            det("suction tube", suction),
            det("tumor", tumor),
        ],
        gt_masks: [
            ("navigation probe".to_string(), box_mask(&probe)),
            ("tumor".to_string(), box_mask(&tumor)),
        ]
        .into_iter()
        .collect(),
        gt_triplets: vec![
            Triplet::new("navigation probe", "locate", "tumor"),
            Triplet::new("suction tube", "aspirate", "blood"),
        ],
    }
}

fn random_box(rng: &mut ChaCha8Rng) -> BoundingBox {
    let x1 = rng.random_range(0..70);
    let y1 = rng.random_range(0..70);
    let x2 = x1 + rng.random_range(10..=30);
    let y2 = y1 + rng.random_range(10..=30);
    BoundingBox::new(x1 as f64 / 100.0, y1 as f64 / 100.0, x2 as f64 / 100.0, y2 as f64 / 100.0)
        .expect("grid box inside the unit square")
}

fn random_scene(rng: &mut ChaCha8Rng, vocab: &Vocabulary, image_ref: &str) -> SceneFixture {
    let mut instruments = vocab.instruments.clone();
    instruments.shuffle(rng);
    let n_instruments = rng.random_range(1..=3);
    let chosen: Vec<String> = instruments.into_iter().take(n_instruments).collect();
    let anatomy: Vec<&String> = vocab
        .objects
        .iter()
        .filter(|o| !vocab.instruments.contains(o))
        .collect();
    let organ = (*anatomy.choose(rng).expect("anatomy classes exist")).clone();

    let mut present: BTreeSet<String> = chosen.iter().cloned().collect();
    present.insert(organ.clone());

    let mut detections = Vec::new();
    let mut masks = BTreeMap::new();
    for class in chosen.iter().chain(std::iter::once(&organ)) {
        let b = random_box(rng);
        detections.push(Detection {
            class_name: class.clone(),
            bbox: b,
            score: 1.0,
        });
        if rng.random_bool(0.7) {
            masks.insert(class.clone(), box_mask(&b));
        }
    }
    let triplets = chosen
        .iter()
        .take(rng.random_range(0..=2))
        .map(|inst| Triplet {
            instrument: inst.clone(),
            verb: vocab.verbs.choose(rng).expect("verbs exist").clone(),
            target: vocab.targets.choose(rng).expect("targets exist").clone(),
        })
        .collect();
    SceneFixture {
        schema_version: FIXTURE_SCHEMA_VERSION,
        image_ref: image_ref.into(),
        image_file: None,
        caption: format!("An endoscopic view showing the {organ} during a transsphenoidal approach."),
        present_objects: present,
        gt_detections: detections,
        gt_masks: masks,
        gt_triplets: triplets,
    }
}

/// Binary PPM rendering of a scene: masks filled, boxes outlined.
pub fn render_scene_ppm(f: &SceneFixture) -> Vec<u8> {
    let (w, h) = (SCENE_WIDTH, SCENE_HEIGHT);
    let mut rgb = vec![[96u8, 32, 32]; w * h];
    for (i, mask) in f.gt_masks.values().enumerate() {
        if let Ok(b) = Bitmap::from_mask(mask) {
            if b.width != w || b.height != h {
                continue;
            }
            let tint = [200, 120 + 40 * (i as u8 % 3), 60];
            for (px, on) in rgb.iter_mut().zip(&b.pixels) {
                if *on {
                    *px = tint;
                }
            }
        }
    }
    for d in &f.gt_detections {
        let [x1, y1, x2, y2] = d.bbox.coords();
        let (x1, x2) = ((x1 * w as f64) as usize, ((x2 * w as f64) as usize).min(w - 1));
        let (y1, y2) = ((y1 * h as f64) as usize, ((y2 * h as f64) as usize).min(h - 1));
        for x in x1..=x2 {
            rgb[y1 * w + x] = [255, 255, 0];
            rgb[y2 * w + x] = [255, 255, 0];
        }
        for y in y1..=y2 {
            rgb[y * w + x1] = [255, 255, 0];
            rgb[y * w + x2] = [255, 255, 0];
        }
    }
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.extend(rgb.iter().flatten());
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn probe_detection_matches_annotation() {
        let f = probe_scene();
        let d = fixture_detect(&f, "Navigation Probe");
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].bbox.coords(), [0.18, 0.41, 0.45, 0.99]);
        assert_eq!(d[0].score, 1.0);
        assert!(fixture_detect(&f, "curette").is_empty());
    }

    #[test]
    fn two_instances_in_order() {
        let mut f = probe_scene();
        let second = Detection {
            class_name: "navigation probe".into(),
            bbox: BoundingBox::new(0.01, 0.01, 0.1, 0.1).unwrap(),
            score: 1.0,
        };
        f.gt_detections.push(second.clone());
        let d = fixture_detect(&f, "navigation probe");
        assert_eq!(d.len(), 2);
        assert_eq!(d[1], second);
    }

    #[test]
    fn segment_rectangle_area_is_exact() {
        let f = probe_scene();
        let m = fixture_segment(&f, "navigation probe").unwrap();
        // columns 18..45, rows 41..99
        assert_eq!(m.area(), 27 * 58);
        assert!(matches!(
            fixture_segment(&f, "curette"),
            Err(FunctionError::ClassNotFound { .. })
        ));
    }

    #[test]
    fn full_image_mask() {
        let m = rle_encode(&Bitmap::new(4, 4, vec![true; 16]).unwrap());
        assert_eq!(m.area_fraction(), 1.0);
    }

    #[test]
    fn scene_description() {
        let mut f = probe_scene();
        let s = fixture_scene(&f);
        assert!(s.description.contains("navigation probe"));
        assert!(s.description.contains("locate"));
        assert!(s.description.contains("tumor"));
        f.gt_triplets.clear();
        assert_eq!(fixture_scene(&f).description, "no activity recognized");
    }

    #[test]
    fn synthetic_bundle_round_trips_through_directory() {
        let bundle = FixtureBundle::synthetic(4, 6);
        assert_eq!(bundle.fixtures().len(), 7);
        let dir = tempfile::tempdir().unwrap();
        bundle.write_dir(dir.path()).unwrap();
        let loaded = FixtureBundle::load_dir(dir.path()).unwrap();
        assert_eq!(loaded.fixtures(), bundle.fixtures());
        let bytes = loaded.image_bytes("probe_scene").unwrap();
        assert_eq!(loaded.get(&content_id(bytes)).unwrap().image_ref, "probe_scene");
    }

    #[test]
    fn invalid_annotation_names_file() {
        let bundle = FixtureBundle::synthetic(4, 1);
        let dir = tempfile::tempdir().unwrap();
        bundle.write_dir(dir.path()).unwrap();
        let path = dir.path().join("probe_scene.json");
        let text = fs::read_to_string(&path).unwrap().replace("\"tumor\"", "\"spleen\"");
        fs::write(&path, text).unwrap();
        let err = FixtureBundle::load_dir(dir.path()).unwrap_err().to_string();
        assert!(err.contains("probe_scene.json"), "{err}");
    }
}
