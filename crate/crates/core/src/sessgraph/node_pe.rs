use super::graph::SessionGraph;
use crate::error::{invalid, Result};
use crate::numcore::Tensor;
use crate::posenc::EncodingScheme;

/// `[n, d]` positional encodings of the graph's nodes.
///
/// A node's first half comes from the encoding of its earliest occurrence and
/// its second half from its latest occurrence. The same split is used for
/// every absolute kind; for items that occur once both halves come from the
/// same position.
pub fn assemble_node_pe(graph: &SessionGraph, scheme: &EncodingScheme) -> Result<Tensor> {
    if !scheme.kind().is_absolute() {
        return Err(invalid!("{} has no per-position vectors", scheme.kind()));
    }
    let d = scheme.dim();
    let l = graph.session_len();
    let mut data = Vec::with_capacity(graph.num_nodes() * d);
    for occ in graph.occurrences() {
        let earliest = scheme.encode(occ[0], l)?;
        let latest = scheme.encode(*occ.last().unwrap(), l)?;
        data.extend_from_slice(&earliest[..d / 2]);
        data.extend_from_slice(&latest[d / 2..]);
    }
    Tensor::matrix(graph.num_nodes(), d, data)
}

/// Earliest and latest occurrence of every node.
pub fn occurrence_bounds(graph: &SessionGraph) -> (Vec<usize>, Vec<usize>) {
    graph.occurrences().iter().map(|o| (o[0], *o.last().unwrap())).unzip()
}
