//! Pure metric functions.

use serde::{Deserialize, Serialize};

use crate::functions::{rle_decode, BoundingBox, SegmentationMask};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricError {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("{what}: {left} vs {right}")]
    LengthMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },
    #[error("mask dimensions differ: {0}x{1} vs {2}x{3}")]
    MaskDims(usize, usize, usize, usize),
    #[error("invalid mask: {0}")]
    InvalidMask(String),
}

/// Rounds a nonnegative value to two decimals, halves going up.
pub fn round2(x: f64) -> f64 {
    let scaled = x * 100.0;
    // absorb representation error so that e.g. 66.665 is treated as a half
    let nudged = scaled + scaled.abs() * 1e-12;
    (nudged + 0.5).floor() / 100.0
}

/// `successes / total × 100`, rounded half-up to two decimals using integer
/// arithmetic.
pub fn percent2(successes: usize, total: usize) -> f64 {
    assert!(total > 0, "percentage of an empty set");
    let hundredths = (successes as u128 * 20_000 + total as u128) / (2 * total as u128);
    hundredths as f64 / 100.0
}

/// Lowercased words split at every non-alphanumeric character.
pub fn words(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_string)
        .collect()
}

/// Case-insensitive whole-word (or whole-phrase) containment.
pub fn contains_phrase(text_words: &[String], phrase: &str) -> bool {
    let p = words(phrase);
    !p.is_empty() && text_words.windows(p.len()).any(|w| w == p.as_slice())
}

/// Keywords of `keywords` found in `reply`.
pub fn keyword_hits(keywords: &[String], reply: &str) -> usize {
    let w = words(reply);
    keywords.iter().filter(|k| contains_phrase(&w, k)).count()
}

/// Phrases that mark a reply as declining to report an absent object.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectionLexicon {
    pub version: String,
    pub phrases: Vec<String>,
}

pub const DEFAULT_LEXICON: &str = include_str!("../../config/rejection_lexicon.txt");

impl RejectionLexicon {
    /// Parses one phrase per line; `#` starts a comment and a
    /// `# version: X` line sets the version.
    pub fn parse(text: &str) -> Self {
        let mut version = String::from("unversioned");
        let mut phrases = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if let Some(comment) = line.strip_prefix('#') {
                if let Some(v) = comment.trim().strip_prefix("version:") {
                    version = v.trim().to_string();
                }
                continue;
            }
            if !line.is_empty() {
                phrases.push(line.to_string());
            }
        }
        Self { version, phrases }
    }

    pub fn builtin() -> Self {
        Self::parse(DEFAULT_LEXICON)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> std::io::Result<Self> {
        Ok(Self::parse(&std::fs::read_to_string(path)?))
    }

    pub fn matches(&self, reply: &str) -> bool {
        let w = words(reply);
        self.phrases.iter().any(|p| contains_phrase(&w, p))
    }
}

/// Tokens for BLEU: lowercase, punctuation removed, split on whitespace.
pub fn bleu_tokens(text: &str) -> Vec<String> {
    let stripped: String = text
        .to_lowercase()
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .collect();
    stripped.split_whitespace().map(str::to_string).collect()
}

/// Sufficient statistics of one candidate/reference pair.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BleuStats {
    pub candidate_len: u64,
    pub reference_len: u64,
    /// Clipped n-gram matches for n = 1..=4.
    pub matches: [u64; 4],
    /// Candidate n-gram counts for n = 1..=4.
    pub totals: [u64; 4],
}

impl BleuStats {
    pub fn of(candidate: &str, reference: &str) -> Self {
        let c = bleu_tokens(candidate);
        let r = bleu_tokens(reference);
        let mut stats = Self {
            candidate_len: c.len() as u64,
            reference_len: r.len() as u64,
            ..Self::default()
        };
        for n in 1..=4 {
            let mut ref_counts = std::collections::HashMap::new();
            for g in r.windows(n) {
                *ref_counts.entry(g).or_insert(0u64) += 1;
            }
            let mut cand_counts = std::collections::HashMap::new();
            for g in c.windows(n) {
                *cand_counts.entry(g).or_insert(0u64) += 1;
            }
            stats.totals[n - 1] = c.len().saturating_sub(n - 1) as u64;
            stats.matches[n - 1] = cand_counts
                .iter()
                .map(|(g, &k)| k.min(ref_counts.get(g).copied().unwrap_or(0)))
                .sum();
        }
        stats
    }

    pub fn add(&mut self, other: &Self) {
        self.candidate_len += other.candidate_len;
        self.reference_len += other.reference_len;
        for n in 0..4 {
            self.matches[n] += other.matches[n];
            self.totals[n] += other.totals[n];
        }
    }

    /// Corpus BLEU@4 in [0, 100] from summed statistics. Zero match counts
    /// are replaced by `1 / (2 × totals[n])`; a corpus without any n-gram of
    /// some order scores 0.
    pub fn score(&self) -> f64 {
        if self.candidate_len == 0 || self.totals.contains(&0) {
            return 0.0;
        }
        let mut log_sum = 0.0;
        for n in 0..4 {
            let total = self.totals[n] as f64;
            let p = if self.matches[n] == 0 {
                1.0 / (2.0 * total)
            } else {
                self.matches[n] as f64 / total
            };
            log_sum += p.ln();
        }
        let (c, r) = (self.candidate_len as f64, self.reference_len as f64);
        let bp = if c >= r { 1.0 } else { (1.0 - r / c).exp() };
        100.0 * bp * (log_sum / 4.0).exp()
    }
}

/// Corpus-level BLEU@4 with one reference per candidate.
pub fn bleu4(candidates: &[&str], references: &[&str]) -> Result<f64, MetricError> {
    if candidates.len() != references.len() {
        return Err(MetricError::LengthMismatch {
            what: "candidates vs references",
            left: candidates.len(),
            right: references.len(),
        });
    }
    if candidates.is_empty() {
        return Err(MetricError::EmptyCorpus);
    }
    let mut total = BleuStats::default();
    for (c, r) in candidates.iter().zip(references) {
        total.add(&BleuStats::of(c, r));
    }
    Ok(total.score())
}

/// IoU of two `[x1, y1, x2, y2]` rectangles in any common unit.
pub fn iou_xyxy(a: [f64; 4], b: [f64; 4]) -> f64 {
    let area = |r: [f64; 4]| (r[2] - r[0]).max(0.0) * (r[3] - r[1]).max(0.0);
    let iw = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let ih = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = iw * ih;
    let union = area(a) + area(b) - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

pub fn iou_box(a: &BoundingBox, b: &BoundingBox) -> f64 {
    iou_xyxy(a.coords(), b.coords())
}

/// Pixel IoU; two empty masks agree perfectly.
pub fn iou_mask(a: &SegmentationMask, b: &SegmentationMask) -> Result<f64, MetricError> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(MetricError::MaskDims(a.width, a.height, b.width, b.height));
    }
    let a = rle_decode(a).map_err(|e| MetricError::InvalidMask(e.to_string()))?;
    let b = rle_decode(b).map_err(|e| MetricError::InvalidMask(e.to_string()))?;
    let (mut inter, mut union) = (0u64, 0u64);
    for (&x, &y) in a.pixels.iter().zip(&b.pixels) {
        inter += (x && y) as u64;
        union += (x || y) as u64;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Mean IoU × 100, or `None` when there is nothing to average.
pub fn mean_iou(ious: &[f64]) -> Option<f64> {
    if ious.is_empty() {
        None
    } else {
        Some(ious.iter().sum::<f64>() / ious.len() as f64 * 100.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functions::{rle_encode, Bitmap};

    fn bb(x1: f64, y1: f64, x2: f64, y2: f64) -> BoundingBox {
        BoundingBox::new(x1, y1, x2, y2).unwrap()
    }

    #[test]
    fn rounding_is_half_up() {
        assert_eq!(percent2(2, 3), 66.67);
        assert_eq!(percent2(1, 3), 33.33);
        assert_eq!(percent2(1, 8), 12.5);
        assert_eq!(percent2(1, 800), 0.13);
        assert_eq!(round2(66.665), 66.67);
        assert_eq!(round2(100.0), 100.0);
    }

    #[test]
    fn keyword_matching_is_whole_word() {
        let k: Vec<String> = ["scissors", "cut", "tissue"].map(String::from).to_vec();
        assert_eq!(keyword_hits(&k, "the scissors retract tissue"), 2);
        assert_eq!(keyword_hits(&k, "Scissors CUT the tissue."), 3);
        assert_eq!(keyword_hits(&["cut".into()], "cutting"), 0);
        assert_eq!(keyword_hits(&["navigation probe".into()], "the navigation probe moves"), 1);
        assert_eq!(keyword_hits(&["navigation probe".into()], "the probe navigation"), 0);
    }

    #[test]
    fn lexicon() {
        let lex = RejectionLexicon::builtin();
        assert_ne!(lex.version, "unversioned");
        assert!(lex.matches("the navigation probe is not present in this image"));
        assert!(lex.matches("I cannot find any curette."));
        assert!(!lex.matches("The curette is located at [0.10, 0.20, 0.30, 0.40]."));
        assert!(!lex.matches("Nothing notable"));
    }

    #[test]
    fn bleu_identity_is_exactly_100() {
        let s = "the navigation probe is located at the sella floor";
        assert_eq!(bleu4(&[s, s], &[s, s]).unwrap(), 100.0);
    }

    #[test]
    fn bleu_hand_example() {
        // clipped matches 5/6, 3/5, 1/4, 0/3 -> 1/6; brevity penalty 1
        let v = bleu4(&["the cat sat on the mat"], &["the cat is on the mat"]).unwrap();
        assert!((v - 37.991784282579627).abs() < 1e-6, "{v}");
        let s = BleuStats::of("the cat sat on the mat", "the cat is on the mat");
        assert_eq!(s.matches, [5, 3, 1, 0]);
        assert_eq!(s.totals, [6, 5, 4, 3]);
    }

    #[test]
    fn bleu_brevity_and_errors() {
        let v = bleu4(&["a b c d"], &["a b c d e f g h"]).unwrap();
        assert!((v - 100.0 * (1.0f64 - 2.0).exp()).abs() < 1e-12);
        assert_eq!(bleu4(&[], &[]), Err(MetricError::EmptyCorpus));
        assert!(bleu4(&["a"], &[]).is_err());
        assert_eq!(bleu4(&["a b"], &["a b"]).unwrap(), 0.0);
    }

    #[test]
    fn bleu_punctuation_and_case() {
        assert_eq!(bleu_tokens("The Probe, at [0.18]!"), ["the", "probe", "at", "018"]);
    }

    #[test]
    fn box_iou() {
        let a = bb(0.0, 0.0, 1.0, 1.0);
        assert_eq!(iou_box(&a, &a), 1.0);
        assert_eq!(iou_box(&bb(0.0, 0.0, 0.2, 0.2), &bb(0.5, 0.5, 0.9, 0.9)), 0.0);
        let a = bb(0.0, 0.0, 0.5, 1.0);
        let b = bb(0.25, 0.0, 0.75, 1.0);
        assert_eq!(iou_box(&a, &b), 1.0 / 3.0);
        assert_eq!(iou_box(&a, &b), iou_box(&b, &a));
        assert_eq!(iou_xyxy([0.0, 0.0, 1.0, 1.0], [0.5, 0.0, 1.5, 1.0]), 1.0 / 3.0);
    }

    #[test]
    fn mask_iou() {
        let a = rle_encode(&Bitmap::rectangle(4, 4, 0, 0, 2, 4));
        let b = rle_encode(&Bitmap::rectangle(4, 4, 1, 0, 3, 4));
        assert_eq!(iou_mask(&a, &b).unwrap(), 4.0 / 12.0);
        let e = rle_encode(&Bitmap::empty(4, 4));
        assert_eq!(iou_mask(&e, &e).unwrap(), 1.0);
        assert_eq!(iou_mask(&a, &e).unwrap(), 0.0);
        let other = rle_encode(&Bitmap::empty(2, 2));
        assert!(matches!(iou_mask(&a, &other), Err(MetricError::MaskDims(..))));
        assert_eq!(mean_iou(&[1.0, 0.5]), Some(75.0));
        assert_eq!(mean_iou(&[]), None);
    }
}
