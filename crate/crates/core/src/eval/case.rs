use serde::{Deserialize, Serialize};

use crate::functions::{BoundingBox, SegmentationMask};

/// Ground-truth expectations for one evaluation query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalCase {
    pub id: String,
    pub query: String,
    #[serde(default)]
    pub image_ref: Option<String>,
    /// `None` means the correct behavior is to answer without a call.
    #[serde(default)]
    pub expect_call: Option<String>,
    /// Triplet keywords the reply should mention.
    #[serde(default)]
    pub keywords: Vec<String>,
    #[serde(default)]
    pub is_negative: bool,
    #[serde(default)]
    pub reference_reply: String,
    /// The single ground-truth box of the queried object.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_boxes: Option<BoundingBox>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_mask: Option<SegmentationMask>,
}

impl EvalCase {
    pub fn new(id: impl Into<String>, query: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            query: query.into(),
            image_ref: None,
            expect_call: None,
            keywords: Vec::new(),
            is_negative: false,
            reference_reply: String::new(),
            gt_boxes: None,
            gt_mask: None,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.id.is_empty() {
            return Err("case id is empty".into());
        }
        if self.is_negative && !self.keywords.is_empty() {
            return Err(format!("negative case {} lists keywords", self.id));
        }
        if self.is_negative && (self.gt_boxes.is_some() || self.gt_mask.is_some()) {
            return Err(format!("negative case {} carries ground-truth geometry", self.id));
        }
        if let Some(mask) = &self.gt_mask {
            mask.validate().map_err(|e| format!("case {}: {e}", self.id))?;
        }
        Ok(())
    }
}
