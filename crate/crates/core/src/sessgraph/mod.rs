//! Session graphs with anchor neighborhoods and per-node positional encodings.

mod graph;
mod node_pe;
mod session;

pub use graph::{attach_anchors, build_session_graph, Anchor, AnchorWeighting, Edge, SessionGraph};
pub use node_pe::{assemble_node_pe, occurrence_bounds};
pub use session::Session;
