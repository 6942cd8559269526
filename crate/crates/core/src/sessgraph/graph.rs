use std::collections::{HashMap, VecDeque};
use std::fmt::Write as _;
use std::str::FromStr;

use super::session::Session;
use crate::error::{invalid, Error, Result};

/// Directed transition `src -> dst` observed `weight` times in a session.
#[derive(Clone, Debug, PartialEq)]
pub struct Edge {
    pub weight: f64,
    pub src: usize,
    pub dst: usize,
}

/// A distinguished node attached to another node's neighborhood.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Anchor {
    pub node: usize,
    pub weight: f64,
}

/// How anchor edges are weighted from the hop distance.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum AnchorWeighting {
    /// The raw hop count.
    #[default]
    Distance,
    /// `1 / hops`.
    Inverse,
}

impl AnchorWeighting {
    pub fn name(self) -> &'static str {
        match self {
            AnchorWeighting::Distance => "distance",
            AnchorWeighting::Inverse => "inverse",
        }
    }
}

impl FromStr for AnchorWeighting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "distance" => Ok(AnchorWeighting::Distance),
            "inverse" => Ok(AnchorWeighting::Inverse),
            _ => Err(invalid!("unknown anchor weighting `{s}`")),
        }
    }
}

/// Weighted directed graph over the unique items of one session.
///
/// Nodes are indexed in order of first occurrence.
#[derive(Clone, Debug, PartialEq)]
pub struct SessionGraph {
    nodes: Vec<usize>,
    edges: Vec<Edge>,
    occurrences: Vec<Vec<usize>>,
    first_node: usize,
    last_node: usize,
    session_len: usize,
    anchor_in: Vec<Vec<Anchor>>,
    anchor_out: Vec<Vec<Anchor>>,
    anchors_attached: bool,
}

pub fn build_session_graph(session: &Session) -> Result<SessionGraph> {
    if session.items.is_empty() {
        return Err(invalid!("cannot build a graph from an empty session"));
    }
    let mut index: HashMap<usize, usize> = HashMap::new();
    let mut nodes = Vec::new();
    let mut occurrences: Vec<Vec<usize>> = Vec::new();
    let mut sequence = Vec::with_capacity(session.items.len());
    for (pos, &item) in session.items.iter().enumerate() {
        let node = *index.entry(item).or_insert_with(|| {
            nodes.push(item);
            occurrences.push(Vec::new());
            nodes.len() - 1
        });
        occurrences[node].push(pos);
        sequence.push(node);
    }

    let mut edge_slot: HashMap<(usize, usize), usize> = HashMap::new();
    let mut edges: Vec<Edge> = Vec::new();
    for w in sequence.windows(2) {
        let key = (w[0], w[1]);
        match edge_slot.get(&key) {
            Some(&slot) => edges[slot].weight += 1.0,
            None => {
                edge_slot.insert(key, edges.len());
                edges.push(Edge {
                    weight: 1.0,
                    src: w[0],
                    dst: w[1],
                });
            }
        }
    }

    let n = nodes.len();
    Ok(SessionGraph {
        first_node: sequence[0],
        last_node: *sequence.last().unwrap(),
        session_len: sequence.len(),
        nodes,
        edges,
        occurrences,
        anchor_in: vec![Vec::new(); n],
        anchor_out: vec![Vec::new(); n],
        anchors_attached: false,
    })
}

/// Adds the first node and every repeated node to each node's incoming
/// anchors, and the last node plus repeated nodes to its outgoing anchors.
/// Weights come from hop distances on the undirected, unweighted projection;
/// a node anchored to itself gets weight 1.
pub fn attach_anchors(mut graph: SessionGraph, weighting: AnchorWeighting) -> SessionGraph {
    let n = graph.num_nodes();
    let repeated: Vec<usize> = (0..n).filter(|&v| graph.occurrences[v].len() >= 2).collect();

    let mut in_set = vec![graph.first_node];
    in_set.extend(repeated.iter().copied());
    let mut out_set = vec![graph.last_node];
    out_set.extend(repeated.iter().copied());
    dedup_in_order(&mut in_set);
    dedup_in_order(&mut out_set);

    let mut wanted = in_set.clone();
    wanted.extend(out_set.iter().copied());
    dedup_in_order(&mut wanted);
    let dist: HashMap<usize, Vec<Option<usize>>> = wanted.iter().map(|&a| (a, graph.hop_distances(a))).collect();

    let weight_of = |anchor: usize, t: usize| -> f64 {
        let hops = dist[&anchor][t].expect("session graphs are connected");
        match (hops, weighting) {
            (0, _) => 1.0,
            (h, AnchorWeighting::Distance) => h as f64,
            (h, AnchorWeighting::Inverse) => 1.0 / h as f64,
        }
    };

    for t in 0..n {
        graph.anchor_in[t] = in_set
            .iter()
            .map(|&a| Anchor {
                node: a,
                weight: weight_of(a, t),
            })
            .collect();
        graph.anchor_out[t] = out_set
            .iter()
            .map(|&a| Anchor {
                node: a,
                weight: weight_of(a, t),
            })
            .collect();
    }
    graph.anchors_attached = true;
    graph
}

fn dedup_in_order(v: &mut Vec<usize>) {
    let mut seen = std::collections::HashSet::new();
    v.retain(|x| seen.insert(*x));
}

impl SessionGraph {
    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Item id of each node.
    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Positions at which each node's item occurs, ascending.
    pub fn occurrences(&self) -> &[Vec<usize>] {
        &self.occurrences
    }

    pub fn first_node(&self) -> usize {
        self.first_node
    }

    pub fn last_node(&self) -> usize {
        self.last_node
    }

    pub fn session_len(&self) -> usize {
        self.session_len
    }

    pub fn anchors_attached(&self) -> bool {
        self.anchors_attached
    }

    pub fn anchor_in(&self, node: usize) -> &[Anchor] {
        &self.anchor_in[node]
    }

    pub fn anchor_out(&self, node: usize) -> &[Anchor] {
        &self.anchor_out[node]
    }

    /// BFS hop counts from `src` over the undirected, unweighted projection.
    pub fn hop_distances(&self, src: usize) -> Vec<Option<usize>> {
        let n = self.num_nodes();
        let mut adj = vec![Vec::new(); n];
        for e in &self.edges {
            adj[e.src].push(e.dst);
            adj[e.dst].push(e.src);
        }
        let mut dist = vec![None; n];
        dist[src] = Some(0);
        let mut queue = VecDeque::from([src]);
        while let Some(v) = queue.pop_front() {
            let dv = dist[v].unwrap();
            for &u in &adj[v] {
                if dist[u].is_none() {
                    dist[u] = Some(dv + 1);
                    queue.push_back(u);
                }
            }
        }
        dist
    }

    /// `[n, n]` row-major matrix; row `t` holds the weight of every node in
    /// the incoming neighborhood of `t`. Anchors are merged in when
    /// `with_anchors` is set; a node that is already a regular neighbor keeps
    /// its edge weight.
    pub fn in_weights(&self, with_anchors: bool) -> Vec<f64> {
        self.neighborhood(with_anchors, true)
    }

    /// Outgoing counterpart of [`in_weights`](Self::in_weights).
    pub fn out_weights(&self, with_anchors: bool) -> Vec<f64> {
        self.neighborhood(with_anchors, false)
    }

    fn neighborhood(&self, with_anchors: bool, incoming: bool) -> Vec<f64> {
        let n = self.num_nodes();
        let mut w = vec![0.0; n * n];
        let mut regular = vec![false; n * n];
        for e in &self.edges {
            let (t, s) = if incoming { (e.dst, e.src) } else { (e.src, e.dst) };
            w[t * n + s] += e.weight;
            regular[t * n + s] = true;
        }
        if with_anchors {
            for t in 0..n {
                let anchors = if incoming {
                    &self.anchor_in[t]
                } else {
                    &self.anchor_out[t]
                };
                for a in anchors {
                    if !regular[t * n + a.node] {
                        w[t * n + a.node] = a.weight;
                    }
                }
            }
        }
        w
    }

    /// Relabels nodes: old node `i` becomes node `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<SessionGraph> {
        let n = self.num_nodes();
        let mut seen = vec![false; n];
        if perm.len() != n || perm.iter().any(|&p| p >= n || std::mem::replace(&mut seen[p], true)) {
            return Err(invalid!("not a permutation of {n} nodes: {perm:?}"));
        }
        let mut nodes = vec![0; n];
        let mut occurrences = vec![Vec::new(); n];
        let mut anchor_in = vec![Vec::new(); n];
        let mut anchor_out = vec![Vec::new(); n];
        let remap = |anchors: &[Anchor]| -> Vec<Anchor> {
            anchors
                .iter()
                .map(|a| Anchor {
                    node: perm[a.node],
                    weight: a.weight,
                })
                .collect()
        };
        for (old, &new) in perm.iter().enumerate() {
            nodes[new] = self.nodes[old];
            occurrences[new] = self.occurrences[old].clone();
            anchor_in[new] = remap(&self.anchor_in[old]);
            anchor_out[new] = remap(&self.anchor_out[old]);
        }
        Ok(SessionGraph {
            nodes,
            edges: self
                .edges
                .iter()
                .map(|e| Edge {
                    weight: e.weight,
                    src: perm[e.src],
                    dst: perm[e.dst],
                })
                .collect(),
            occurrences,
            first_node: perm[self.first_node],
            last_node: perm[self.last_node],
            session_len: self.session_len,
            anchor_in,
            anchor_out,
            anchors_attached: self.anchors_attached,
        })
    }

    /// Edges as sorted `(src item, dst item, weight)` triples, independent of
    /// node numbering.
    pub fn canonical_edges(&self) -> Vec<(usize, usize, f64)> {
        let mut v: Vec<_> = self
            .edges
            .iter()
            .map(|e| (self.nodes[e.src], self.nodes[e.dst], e.weight))
            .collect();
        v.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)).then(a.2.total_cmp(&b.2)));
        v
    }

    /// Edge list as `src\tdst\tweight\tkind` lines with item ids; anchor
    /// entries are written as `anchor -> node` for incoming anchors and
    /// `node -> anchor` for outgoing ones.
    pub fn debug_tsv(&self) -> String {
        let mut out = String::new();
        for e in &self.edges {
            writeln!(
                out,
                "{}\t{}\t{}\tnormal",
                self.nodes[e.src], self.nodes[e.dst], e.weight
            )
            .unwrap();
        }
        for t in 0..self.num_nodes() {
            for a in &self.anchor_in[t] {
                writeln!(
                    out,
                    "{}\t{}\t{}\tanchor_in",
                    self.nodes[a.node], self.nodes[t], a.weight
                )
                .unwrap();
            }
            for a in &self.anchor_out[t] {
                writeln!(
                    out,
                    "{}\t{}\t{}\tanchor_out",
                    self.nodes[t], self.nodes[a.node], a.weight
                )
                .unwrap();
            }
        }
        out
    }
}
