use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::score::Prediction;
use crate::error::{invalid, Result};
use crate::numcore::{uniform, BoundParams, GradMap, ParamStore, Tape, Tensor, Var};
use crate::posenc::{EncodingKind, EncodingScheme};
use crate::sessgraph::{attach_anchors, build_session_graph, occurrence_bounds, Session, SessionGraph};

const PE_PREFIX: &str = "pe.";
const GATES: [&str; 3] = ["z", "r", "h"];

/// Gated session-graph network with a transformer readout.
#[derive(Clone, Debug)]
pub struct PosRecModel {
    config: ModelConfig,
    params: ParamStore,
    // Template for the encoding; learned tables live in `params`.
    scheme: EncodingScheme,
}

/// Tape variables of one session's forward pass.
#[derive(Clone, Debug)]
pub struct SessionVars {
    pub x_prime: Var,
    pub h: Var,
    pub probs: Var,
    pub attention: Vec<Var>,
}

/// Output of [`PosRecModel::transformer_readout`].
#[derive(Clone, Debug)]
pub struct Readout {
    pub h: Vec<f64>,
    /// One `[n, n]` matrix per head; rows are queries.
    pub attention: Vec<Tensor>,
}

/// Intermediate values of a full forward pass, for inspection.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    pub graph: SessionGraph,
    pub x_prime: Tensor,
    pub h: Vec<f64>,
    pub attention: Vec<Tensor>,
    pub prediction: Prediction,
}

impl PosRecModel {
    /// Initializes every weight matrix and the item table uniformly in
    /// `±1/√d`; biases and layer-norm shifts start at 0, layer-norm gains at 1.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let d = config.dim;
        let f = config.ffn_dim;
        let scheme = EncodingScheme::new(config.encoding, d, config.max_len, config.seed ^ 0x9e37_79b9)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let bound = 1.0 / (d as f64).sqrt();
        let mut p = ParamStore::new();
        let mut w = |p: &mut ParamStore, name: &str, shape: &[usize]| {
            p.insert(name, uniform(shape, bound, &mut rng));
        };
        w(&mut p, "item_embeddings", &[config.num_items, d]);
        w(&mut p, "pggnn.w_in", &[d, d]);
        w(&mut p, "pggnn.w_out", &[d, d]);
        for g in GATES {
            w(&mut p, &format!("gru.w_{g}"), &[2 * d, d]);
            w(&mut p, &format!("gru.u_{g}"), &[d, d]);
        }
        for name in ["attn.w_q", "attn.w_k", "attn.w_v", "attn.w_o"] {
            w(&mut p, name, &[d, d]);
        }
        w(&mut p, "ffn.w1", &[d, f]);
        w(&mut p, "ffn.w2", &[f, d]);
        for g in GATES {
            p.insert(format!("gru.b_{g}"), Tensor::zeros(&[d]));
        }
        p.insert("ffn.b1", Tensor::zeros(&[f]));
        p.insert("ffn.b2", Tensor::zeros(&[d]));
        if config.layer_norm {
            for ln in ["ln1", "ln2"] {
                p.insert(format!("{ln}.gamma"), Tensor::filled(&[d], 1.0));
                p.insert(format!("{ln}.beta"), Tensor::zeros(&[d]));
            }
        }
        for (name, t) in scheme.tables() {
            p.insert(format!("{PE_PREFIX}{name}"), t.clone());
        }
        Ok(PosRecModel {
            config,
            params: p,
            scheme,
        })
    }

    /// Rebuilds a model from stored parameters; every expected parameter must
    /// be present with its initialization shape and no others may appear.
    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Self> {
        let mut model = Self::new(config)?;
        if params.len() != model.params.len() {
            return Err(invalid!(
                "expected {} parameters, found {}",
                model.params.len(),
                params.len()
            ));
        }
        for (name, t) in params.iter() {
            let slot = model
                .params
                .get_mut(name)
                .ok_or_else(|| invalid!("unexpected parameter `{name}`"))?;
            if slot.shape() != t.shape() {
                return Err(invalid!(
                    "parameter `{name}` has shape {:?}, expected {:?}",
                    t.shape(),
                    slot.shape()
                ));
            }
            *slot = t.clone();
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn item_embeddings(&self) -> &Tensor {
        self.params.get("item_embeddings").expect("registered at init")
    }

    /// The positional encoding with its current (possibly trained) tables.
    pub fn scheme(&self) -> Result<EncodingScheme> {
        let c = &self.config;
        if !c.encoding.is_learned() {
            return Ok(self.scheme.clone());
        }
        let tables = self
            .params
            .iter()
            .filter_map(|(n, t)| n.strip_prefix(PE_PREFIX).map(|n| (n.to_owned(), t.clone())))
            .collect();
        EncodingScheme::with_tables(c.encoding, c.dim, c.max_len, tables)
    }

    /// Session graph as the model sees it: truncated to the most recent
    /// `max_len` clicks, with anchors attached when enabled.
    pub fn prepare(&self, session: &Session) -> Result<SessionGraph> {
        if let Some(&bad) = session.items.iter().find(|&&i| i >= self.config.num_items) {
            return Err(invalid!("item {bad} outside a vocabulary of {}", self.config.num_items));
        }
        let start = session.len().saturating_sub(self.config.max_len);
        let graph = if start == 0 {
            build_session_graph(session)?
        } else {
            build_session_graph(&Session::new(session.items[start..].to_vec())?)?
        };
        Ok(if self.config.anchors {
            attach_anchors(graph, self.config.anchor_weighting)
        } else {
            graph
        })
    }

    fn adjacency(&self, tape: &mut Tape, graph: &SessionGraph) -> Result<(Var, Var)> {
        let n = graph.num_nodes();
        let a_in = Tensor::matrix(n, n, graph.in_weights(self.config.anchors))?;
        let a_out = Tensor::matrix(n, n, graph.out_weights(self.config.anchors))?;
        Ok((tape.constant(a_in), tape.constant(a_out)))
    }

    /// One propagation step: neighbor messages through `W_in`/`W_out`, then a
    /// GRU update of every node.
    pub fn pggnn_on_tape(&self, tape: &mut Tape, p: &BoundParams, graph: &SessionGraph, x: Var) -> Result<Var> {
        let d = self.config.dim;
        let n = graph.num_nodes();
        if tape.shape(x) != [n, d] {
            return Err(invalid!(
                "node features have shape {:?}, expected [{n}, {d}]",
                tape.shape(x)
            ));
        }
        let (a_in, a_out) = self.adjacency(tape, graph)?;
        let xw_in = tape.matmul(x, p.var("pggnn.w_in")?)?;
        let xw_out = tape.matmul(x, p.var("pggnn.w_out")?)?;
        let m_in = tape.matmul(a_in, xw_in)?;
        let m_out = tape.matmul(a_out, xw_out)?;
        let a = tape.concat(&[m_in, m_out])?;

        let gate = |tape: &mut Tape, g: &str, hidden: Var| -> Result<Var> {
            let wa = tape.matmul(a, p.var(&format!("gru.w_{g}"))?)?;
            let uh = tape.matmul(hidden, p.var(&format!("gru.u_{g}"))?)?;
            let s = tape.add(wa, uh)?;
            tape.add(s, p.var(&format!("gru.b_{g}"))?)
        };
        let z = gate(tape, "z", x)?;
        let z = tape.sigmoid(z)?;
        let r = gate(tape, "r", x)?;
        let r = tape.sigmoid(r)?;
        let rx = tape.mul(r, x)?;
        let c = gate(tape, "h", rx)?;
        let c = tape.tanh(c)?;
        // (1 - z) * x + z * c
        let delta = tape.sub(c, x)?;
        let step = tape.mul(z, delta)?;
        tape.add(x, step)
    }

    /// Per-node encodings on the tape: the first half from a node's earliest
    /// occurrence and the second half from its latest. `None` for kinds that
    /// add nothing to the node features.
    pub fn node_pe_on_tape(&self, tape: &mut Tape, p: &BoundParams, graph: &SessionGraph) -> Result<Option<Var>> {
        let kind = self.config.encoding;
        if matches!(kind, EncodingKind::None | EncodingKind::Lrpe) {
            return Ok(None);
        }
        let d = self.config.dim;
        let l = graph.session_len();
        let tables = self.table_vars(p)?;
        let (first, last) = occurrence_bounds(graph);
        let e_first = self.scheme.encode_on_tape(tape, &tables, &first, l)?;
        let e_last = self.scheme.encode_on_tape(tape, &tables, &last, l)?;
        let lo = tape.slice(e_first, 0, d / 2)?;
        let hi = tape.slice(e_last, d / 2, d)?;
        Ok(Some(tape.concat(&[lo, hi])?))
    }

    fn table_vars(&self, p: &BoundParams) -> Result<BTreeMap<String, Var>> {
        self.scheme
            .tables()
            .keys()
            .map(|name| Ok((name.clone(), p.var(&format!("{PE_PREFIX}{name}"))?)))
            .collect()
    }

    fn relative_bias_on_tape(&self, tape: &mut Tape, p: &BoundParams, graph: &SessionGraph) -> Result<Var> {
        let n = graph.num_nodes();
        let (_, last) = occurrence_bounds(graph);
        let idx: Vec<usize> = (0..n)
            .flat_map(|i| {
                let last = &last;
                (0..n).map(move |j| self.scheme.relative_offset_index(last[i], last[j]))
            })
            .collect();
        let table = p.var(&format!("{PE_PREFIX}bias"))?;
        let b = tape.gather_rows(table, &idx)?;
        tape.reshape(b, &[n, n])
    }

    fn norm(&self, tape: &mut Tape, p: &BoundParams, x: Var, ln: &str) -> Result<Var> {
        if !self.config.layer_norm {
            return Ok(x);
        }
        let y = tape.layer_norm(x)?;
        let y = tape.mul(y, p.var(&format!("{ln}.gamma"))?)?;
        tape.add(y, p.var(&format!("{ln}.beta"))?)
    }

    /// Single post-norm transformer layer over `X' + P` followed by the
    /// weighted first/last readout. Returns `h` as `[1, d]` and the attention
    /// matrices.
    pub fn readout_on_tape(
        &self,
        tape: &mut Tape,
        p: &BoundParams,
        graph: &SessionGraph,
        x_prime: Var,
        pe: Option<Var>,
    ) -> Result<(Var, Vec<Var>)> {
        let n = graph.num_nodes();
        let d = self.config.dim;
        if n == 0 {
            return Err(invalid!("readout over an empty graph"));
        }
        if tape.shape(x_prime) != [n, d] {
            return Err(invalid!(
                "readout input has shape {:?}, expected [{n}, {d}]",
                tape.shape(x_prime)
            ));
        }
        let z = match pe {
            Some(pe) => tape.add(x_prime, pe)?,
            None => x_prime,
        };
        let bias = if self.config.encoding == EncodingKind::Lrpe {
            Some(self.relative_bias_on_tape(tape, p, graph)?)
        } else {
            None
        };

        let q = tape.matmul(z, p.var("attn.w_q")?)?;
        let k = tape.matmul(z, p.var("attn.w_k")?)?;
        let v = tape.matmul(z, p.var("attn.w_v")?)?;
        let heads = self.config.heads;
        let dh = d / heads;
        let mut outs = Vec::with_capacity(heads);
        let mut attention = Vec::with_capacity(heads);
        for hd in 0..heads {
            let (lo, hi) = (hd * dh, (hd + 1) * dh);
            let (qh, kh, vh) = if heads == 1 {
                (q, k, v)
            } else {
                (tape.slice(q, lo, hi)?, tape.slice(k, lo, hi)?, tape.slice(v, lo, hi)?)
            };
            let s = tape.matmul_t(qh, kh)?;
            let mut s = tape.scale(s, 1.0 / (dh as f64).sqrt())?;
            if let Some(b) = bias {
                s = tape.add(s, b)?;
            }
            let a = tape.softmax(s)?;
            attention.push(a);
            outs.push(tape.matmul(a, vh)?);
        }
        let o = if heads == 1 { outs[0] } else { tape.concat(&outs)? };
        let o = tape.matmul(o, p.var("attn.w_o")?)?;
        let y1 = tape.add(z, o)?;
        let y1 = self.norm(tape, p, y1, "ln1")?;

        let f = tape.matmul(y1, p.var("ffn.w1")?)?;
        let f = tape.add(f, p.var("ffn.b1")?)?;
        let f = tape.relu(f)?;
        let f = tape.matmul(f, p.var("ffn.w2")?)?;
        let f = tape.add(f, p.var("ffn.b2")?)?;
        let y2 = tape.add(y1, f)?;
        let hmat = self.norm(tape, p, y2, "ln2")?;

        let [l0, l1, l2] = self.config.lambda;
        let last = graph.last_node();
        let first = graph.first_node();
        let x_last = tape.gather_rows(x_prime, &[last])?;
        let h_last = tape.gather_rows(hmat, &[last])?;
        let h_first = tape.gather_rows(hmat, &[first])?;
        let t0 = tape.scale(x_last, l0)?;
        let t1 = tape.scale(h_last, l1)?;
        let t2 = tape.scale(h_first, l2)?;
        let h = tape.add(t0, t1)?;
        let h = tape.add(h, t2)?;
        Ok((h, attention))
    }

    /// Full forward pass of one session on `tape`.
    pub fn session_on_tape(&self, tape: &mut Tape, p: &BoundParams, session: &Session) -> Result<SessionVars> {
        let graph = self.prepare(session)?;
        self.graph_on_tape(tape, p, &graph)
    }

    pub fn graph_on_tape(&self, tape: &mut Tape, p: &BoundParams, graph: &SessionGraph) -> Result<SessionVars> {
        let emb = p.var("item_embeddings")?;
        let x = tape.gather_rows(emb, graph.nodes())?;
        let x_prime = self.pggnn_on_tape(tape, p, graph, x)?;
        let pe = self.node_pe_on_tape(tape, p, graph)?;
        let (h, attention) = self.readout_on_tape(tape, p, graph, x_prime, pe)?;
        let logits = tape.matmul_t(h, emb)?;
        let probs = tape.softmax(logits)?;
        Ok(SessionVars {
            x_prime,
            h,
            probs,
            attention,
        })
    }

    /// Summed cross-entropy of `sessions` against their labels.
    pub fn loss_on_tape(&self, tape: &mut Tape, p: &BoundParams, sessions: &[Session]) -> Result<Var> {
        if sessions.is_empty() {
            return Err(invalid!("empty batch"));
        }
        let mut total: Option<Var> = None;
        for s in sessions {
            let label = s.label.ok_or_else(|| invalid!("session `{}` has no label", s.id))?;
            if label >= self.config.num_items {
                return Err(invalid!(
                    "label {label} outside a vocabulary of {}",
                    self.config.num_items
                ));
            }
            let vars = self.session_on_tape(tape, p, s)?;
            let logp = tape.log(vars.probs)?;
            let picked = tape.slice(logp, label, label + 1)?;
            let nll = tape.sum(picked)?;
            let nll = tape.scale(nll, -1.0)?;
            total = Some(match total {
                Some(t) => tape.add(t, nll)?,
                None => nll,
            });
        }
        Ok(total.unwrap())
    }

    /// Loss and parameter gradients of a batch, computed on a fresh tape.
    pub fn gradients(&self, sessions: &[Session]) -> Result<(f64, GradMap)> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape);
        let loss = self.loss_on_tape(&mut tape, &p, sessions)?;
        let value = tape.value(loss).item();
        let grads = tape.backward(loss)?;
        Ok((value, p.collect(&grads)))
    }

    /// PGGNN update of explicit node features.
    pub fn pggnn_layer(&self, graph: &SessionGraph, node_feats: &Tensor) -> Result<Tensor> {
        if node_feats.cols() != self.config.dim {
            return Err(invalid!(
                "feature width {} does not match d = {}",
                node_feats.cols(),
                self.config.dim
            ));
        }
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape);
        let x = tape.constant(node_feats.clone());
        let out = self.pggnn_on_tape(&mut tape, &p, graph, x)?;
        Ok(tape.value(out).clone())
    }

    /// Transformer readout of explicit PGGNN outputs and node encodings. For
    /// LRPE the encodings are ignored and the relative bias is used instead.
    pub fn transformer_readout(&self, x_prime: &Tensor, node_pe: &Tensor, graph: &SessionGraph) -> Result<Readout> {
        if x_prime.shape() != node_pe.shape() {
            return Err(invalid!(
                "X' {:?} and P {:?} are not row-aligned",
                x_prime.shape(),
                node_pe.shape()
            ));
        }
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape);
        let xv = tape.constant(x_prime.clone());
        let pe = (self.config.encoding != EncodingKind::Lrpe).then(|| tape.constant(node_pe.clone()));
        let (h, att) = self.readout_on_tape(&mut tape, &p, graph, xv, pe)?;
        Ok(Readout {
            h: tape.value(h).data().to_vec(),
            attention: att.iter().map(|&a| tape.value(a).clone()).collect(),
        })
    }

    pub fn trace(&self, session: &Session) -> Result<ForwardTrace> {
        let graph = self.prepare(session)?;
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape);
        let vars = self.graph_on_tape(&mut tape, &p, &graph)?;
        let prediction = Prediction::from_scores(tape.value(vars.probs).data().to_vec());
        Ok(ForwardTrace {
            x_prime: tape.value(vars.x_prime).clone(),
            h: tape.value(vars.h).data().to_vec(),
            attention: vars.attention.iter().map(|&a| tape.value(a).clone()).collect(),
            graph,
            prediction,
        })
    }

    /// Scores every item as the next click of `session`.
    pub fn forward_full(&self, session: &Session) -> Result<Prediction> {
        let graph = self.prepare(session)?;
        self.forward_graph(&graph)
    }

    pub fn forward_graph(&self, graph: &SessionGraph) -> Result<Prediction> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape);
        let vars = self.graph_on_tape(&mut tape, &p, graph)?;
        Ok(Prediction::from_scores(tape.value(vars.probs).data().to_vec()))
    }

    /// Readout vector `h` for an already prepared graph.
    pub fn session_vector(&self, graph: &SessionGraph) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape);
        let vars = self.graph_on_tape(&mut tape, &p, graph)?;
        Ok(tape.value(vars.h).data().to_vec())
    }
}
