#![allow(dead_code)]

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use surgassist_core::protocol::{FunctionCall, StructuredReply};

const PIECES: &[&str] = &[
    "<think>", "</think>", "<call>", "</call>", "<reply>", "</reply>", "<", ">", "\\", "\\\\", "\\<", "\\n",
    "{", "}", "\"", "\n", " ", "\t", "null", "none", "api_name", "é", "🙂", "probe", "[0.18, 0.41]", "<b>",
];

fn word(rng: &mut ChaCha8Rng) -> String {
    let len = rng.random_range(1..8);
    (0..len).map(|_| *b"abcdefghijklmnopqrstuvwxyz".choose(rng).unwrap() as char).collect()
}

/// Text mixing ordinary words with delimiter fragments and escapes.
pub fn adversarial_text(rng: &mut ChaCha8Rng, max_pieces: usize) -> String {
    let n = rng.random_range(0..=max_pieces);
    let mut s = String::new();
    for _ in 0..n {
        if rng.random_bool(0.5) {
            s.push_str(PIECES.choose(rng).unwrap());
        } else {
            s.push_str(&word(rng));
        }
    }
    s
}

pub fn arb_reply(rng: &mut ChaCha8Rng) -> StructuredReply {
    let thinking = adversarial_text(rng, 12).trim().to_string();
    let mut replying = adversarial_text(rng, 12).trim().to_string();
    if replying.is_empty() {
        replying = word(rng);
    }
    let calling = rng.random_bool(0.6).then(|| {
        let name: String = (0..rng.random_range(1..12))
            .map(|_| *b"abcdefghijklmnopqrstuvwxyzABCXYZ0189_.-".choose(rng).unwrap() as char)
            .collect();
        let mut call = FunctionCall::new(name);
        for _ in 0..rng.random_range(0..4) {
            let key = adversarial_text(rng, 3);
            call = call.param(key, adversarial_text(rng, 6));
        }
        call
    });
    StructuredReply::new(thinking, calling, replying)
}

pub fn replies(seed: u64, count: usize) -> Vec<StructuredReply> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| arb_reply(&mut rng)).collect()
}

fn char_boundary(s: &str, rng: &mut ChaCha8Rng) -> usize {
    let bounds: Vec<usize> = s.char_indices().map(|(i, _)| i).chain([s.len()]).collect();
    *bounds.choose(rng).unwrap()
}

/// Applies one to three random edits: deletions, insertions of tag
/// fragments, duplicated spans and truncation.
pub fn mutate(text: &str, rng: &mut ChaCha8Rng) -> String {
    let mut s = text.to_string();
    for _ in 0..rng.random_range(1..=3) {
        let a = char_boundary(&s, rng);
        let b = char_boundary(&s, rng);
        let (lo, hi) = (a.min(b), a.max(b));
        match rng.random_range(0..5) {
            0 => s.replace_range(lo..hi, ""),
            1 => s.insert_str(lo, PIECES.choose(rng).unwrap()),
            2 => {
                let span = s[lo..hi].to_string();
                s.insert_str(hi, &span);
            }
            3 => s.truncate(lo),
            _ => {
                let span = s[lo..hi].to_string();
                s.replace_range(lo..hi, &span.chars().rev().collect::<String>());
            }
        }
    }
    s
}

use std::sync::Arc;

use surgassist_core::eval::EvalCase;
use surgassist_core::functions::{default_registry, FixtureBundle};
use surgassist_core::orchestrator::{Orchestrator, ScriptedBackend};

/// Hand-scored suite of ten cases on the probe scene. Expected values:
/// SR 60.00 (failures: 1 false positive, 1 wrong function, 2 missed),
/// KeyHit 73.33 over five keyword cases, Rej 66.67 over three negatives.
pub fn micro_suite() -> (Orchestrator, Vec<EvalCase>) {
    let probe = "probe_scene";
    let call = |name: &str, target: &str| Some(FunctionCall::new(name).param("target", target));
    let r = |t: &str, c, text: &str| StructuredReply::new(t, c, text);
    let mut backend = ScriptedBackend::default();
    let mut cases = Vec::new();
    let mut add = |case: EvalCase, first: StructuredReply, second: Option<StructuredReply>| {
        backend = std::mem::take(&mut backend).with(&case.query, false, &first);
        if let Some(s) = second {
            backend = std::mem::take(&mut backend).with(&case.query, true, &s);
        }
        cases.push(case);
    };
    let case = |id: &str, q: &str, expect: Option<&str>, kw: &[&str], negative: bool| {
        let mut c = EvalCase::new(id, q);
        c.image_ref = Some(probe.to_string());
        c.expect_call = expect.map(str::to_string);
        c.keywords = kw.iter().map(|s| s.to_string()).collect();
        c.is_negative = negative;
        c
    };
    add(
        case("c01", "Where is the navigation probe?", Some("detect"), &["navigation probe"], false),
        r("locate", call("detect", "navigation probe"), "Locating."),
        Some(r("", None, "The navigation probe is located at [0.18, 0.41, 0.45, 0.99].")),
    );
    add(
        case("c02", "Where is the tumor?", Some("detect"), &["tumor"], false),
        r("", None, "The tumor is in the center."),
        None,
    );
    add(
        case("c03", "Segment the tumor.", Some("segment"), &[], false),
        r("", call("detect", "tumor"), "Detecting."),
        Some(r("", None, "Here is the tumor box.")),
    );
    add(
        case("c04", "What is the suction tube for?", None, &["aspirates", "blood"], false),
        r("", None, "It aspirates blood."),
        None,
    );
    add(
        case("c05", "What instrument is this?", None, &[], false),
        r("", call("detect", "navigation probe"), "Checking."),
        Some(r("", None, "A navigation probe.")),
    );
    add(
        case("c06", "Where is the curette?", Some("detect"), &[], true),
        r("", call("detect", "curette"), "Looking."),
        Some(r("", None, "The curette is not present in this image.")),
    );
    add(
        case("c07", "Where is the drill?", Some("detect"), &[], true),
        r("", call("detect", "drill"), "Looking."),
        Some(r("", None, "The drill is at the top left.")),
    );
    add(
        case("c08", "Where is the bipolar forceps?", Some("detect"), &[], true),
        r("", None, "There is no bipolar forceps."),
        None,
    );
    add(
        case("c09", "Describe the scene.", Some("analyze_scene"), &["navigation probe", "locate", "tumor"], false),
        r("", Some(FunctionCall::new("analyze_scene")), "Analyzing."),
        Some(r("", None, "The navigation probe is near the tumor.")),
    );
    add(
        case("c10", "Is the tumor visible?", None, &["tumour"], false),
        r("", None, "Yes, the tumor is visible."),
        None,
    );
    let bundle = Arc::new(FixtureBundle::synthetic(0, 1));
    let o = Orchestrator::new(Arc::new(backend), Arc::new(default_registry(Arc::clone(&bundle)))).with_fixtures(bundle);
    (o, cases)
}
