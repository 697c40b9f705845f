//! Structured replies, their tagged wire format, conversation turns and the
//! function-calling dataset.

mod dataset;
mod reply;
mod wire;

pub use dataset::{
    generate_fc_dataset, read_jsonl, validate_record, write_jsonl, DatasetCounts, DatasetRecord, GenerationError,
    JsonlError, RecordKind, Split, Template, TemplateSet, Violation, DATASET_SCHEMA_VERSION,
};
pub use reply::{is_valid_api_name, FunctionCall, Role, StructuredReply, Turn};
pub use wire::{escape, parse_structured, render_structured, unescape, Block, ParseError};
