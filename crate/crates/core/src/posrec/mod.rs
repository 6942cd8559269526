//! The recommender: one gated session-graph propagation step, a single
//! transformer layer over the node features plus positional encodings, a
//! first/last weighted readout, and a softmax over the item table.

mod checkpoint;
mod config;
mod model;
mod score;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use config::ModelConfig;
pub use model::{ForwardTrace, PosRecModel, Readout, SessionVars};
pub use score::{loss, rank_items, score, Prediction};
