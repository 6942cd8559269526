//! Positional encodings and their forward/backward-awareness analysis.

mod awareness;
mod heatmap;
mod properties;
mod scheme;

pub use awareness::{
    check_awareness, default_lengths, AwarenessReport, DEFAULT_DELTA, DEFAULT_EPSILON, DEFAULT_MAX_TESTED_LEN,
};
pub use heatmap::{heatmap_csv, pairwise_heatmap, row_argmax, Heatmap};
pub use properties::{linear_combination_residual, min_pairwise_distance};
pub use scheme::{frequency, EncodingKind, EncodingScheme, LEARNED_INIT_BOUND};
