use crate::functions::{FixtureBundle, FunctionSpec};
use crate::protocol::{generate_fc_dataset, DatasetCounts, DatasetRecord, GenerationError, TemplateSet};

use super::EvalCase;

pub fn cases_from_records(records: &[DatasetRecord]) -> Vec<EvalCase> {
    records.iter().map(|r| r.expectations.clone()).collect()
}

/// Counts of the standard dispatch suite: 200 cases, of which 100 positive
/// and 50 negative (both two-round) and 50 no-call.
pub const DISPATCH_SUITE_COUNTS: DatasetCounts = DatasetCounts {
    positive: 100,
    negative: 50,
    no_call: 50,
    unseen: 0,
};

/// Train-split records of the standard dispatch suite over `bundle`.
pub fn dispatch_suite(
    bundle: &FixtureBundle,
    specs: &[FunctionSpec],
    seed: u64,
) -> Result<Vec<DatasetRecord>, GenerationError> {
    generate_fc_dataset(&TemplateSet::builtin(), bundle, specs, DISPATCH_SUITE_COUNTS, seed)
}
