//! Click-log ingestion and preprocessing: parsing, rare-item and short-session
//! filtering, prefix augmentation, temporal splits with training fractions,
//! and a synthetic generator.

mod dataset;
mod filter;
mod parse;
mod split;
mod synth;

pub use dataset::{manifest_path, Dataset, DatasetStats, Vocab};
pub use filter::{
    augment, filter_dataset, filter_with, last_item_pairs, session_prefixes, FilterSpec, MIN_ITEM_COUNT,
    MIN_SESSION_LEN,
};
pub use parse::{parse_raw, parse_raw_str, RawFormat, MAX_MALFORMED_FRACTION};
pub use split::{split, split_tail, Fraction, Split, SplitSpec, SplitStats, TestRule, SECONDS_PER_DAY};
pub use synth::{synth_generate, synth_label, SYNTH_MAX_LEN, SYNTH_MIN_ITEMS, SYNTH_START_TS};
