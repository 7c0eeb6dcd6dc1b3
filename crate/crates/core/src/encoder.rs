//! The HEAT encoder: qualifier embeddings, per-hyperedge attention messages,
//! message aggregation and transformer-style node and edge updates.

use std::collections::HashMap;
use std::rc::Rc;

use heat_graph::Hypergraph;
use heat_tensor::{
    multihead_attention, Mask, MhaParams, ParamId, ParameterStore, Result as TResult, Scalar, Tape, Tensor, TensorError, Var,
};
use rand::{Rng, RngCore};

use crate::config::{AggKind, HeatConfig};
use crate::packing::{packed_self_attention, MicrobatchSpec, PackError, PackedBatch};
use crate::vocab::Vocab;
use crate::DropoutRng;

pub const LN_EPS: f64 = 1e-5;

/// Edge types whose qualifiers are sequence positions (`p1`, `p2`, ...).
pub fn is_sequence_type(edge_type: &str) -> bool {
    matches!(edge_type, "Tokens" | "Seq")
}

/// Position encoded in a qualifier such as `p12`.
pub fn position_of(qualifier: &str) -> Option<usize> {
    let digits = qualifier.trim_start_matches(|c: char| !c.is_ascii_digit());
    if digits.is_empty() || digits.len() == qualifier.len() {
        return None;
    }
    digits.parse().ok()
}

/// Fixed sinusoidal embedding: component `2i` is `sin(pos / 10000^(2i/d))`,
/// component `2i+1` the matching cosine.
pub fn sinusoidal_position(pos: usize, d: usize) -> Result<Vec<f64>, TensorError> {
    if !d.is_multiple_of(2) {
        return Err(TensorError::Invalid {
            op: "sinusoidal_position",
            detail: format!("dimension {d} is odd"),
        });
    }
    let mut out = vec![0.0; d];
    for i in 0..d / 2 {
        let angle = pos as f64 / 10000f64.powf(2.0 * i as f64 / d as f64);
        out[2 * i] = angle.sin();
        out[2 * i + 1] = angle.cos();
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
enum QualKey {
    Named(Vec<usize>),
    Position(usize),
}

/// A hypergraph resolved against a vocabulary.
#[derive(Clone, Debug)]
pub struct GraphInput {
    node_tokens: Vec<Vec<usize>>,
    edge_tokens: Vec<Vec<usize>>,
    edges: Vec<Vec<(usize, QualKey)>>,
}

impl GraphInput {
    pub fn new(graph: &Hypergraph, vocab: &Vocab) -> Self {
        let edges = graph
            .edges
            .iter()
            .map(|e| {
                let seq = is_sequence_type(&e.edge_type);
                e.incidences
                    .iter()
                    .map(|inc| {
                        let key = match position_of(&inc.qualifier).filter(|_| seq) {
                            Some(p) => QualKey::Position(p),
                            None => QualKey::Named(vocab.encode(&inc.qualifier)),
                        };
                        (inc.node, key)
                    })
                    .collect()
            })
            .collect();
        GraphInput {
            node_tokens: graph.nodes.iter().map(|n| vocab.encode(&n.label)).collect(),
            edge_tokens: graph.edges.iter().map(|e| vocab.encode(&e.edge_type)).collect(),
            edges,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.node_tokens.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }
}

/// Nodes of one padded-degree class for cross-attention aggregation.
#[derive(Clone, Debug)]
struct AggGroup {
    pad: usize,
    nodes: Rc<Vec<Option<usize>>>,
    keys: Rc<Vec<Option<usize>>>,
    degrees: Vec<usize>,
}

/// Disjoint union of graphs with every index map the forward pass needs.
#[derive(Clone, Debug)]
pub struct GraphBatch {
    pub num_nodes: usize,
    pub num_edges: usize,
    /// First node id of each member graph.
    pub node_offsets: Vec<usize>,
    pub edge_offsets: Vec<usize>,
    pub packed: PackedBatch,
    edge_token: bool,
    node_tok: Rc<Vec<Option<usize>>>,
    node_tok_seg: Vec<usize>,
    edge_tok: Rc<Vec<Option<usize>>>,
    edge_tok_seg: Rc<Vec<usize>>,
    qual_tok: Rc<Vec<Option<usize>>>,
    qual_tok_seg: Rc<Vec<usize>>,
    num_named: usize,
    positions: Vec<usize>,
    seq_state: Rc<Vec<Option<usize>>>,
    seq_qual: Rc<Vec<Option<usize>>>,
    has_qual: bool,
    row_edge: Rc<Vec<usize>>,
    msg_edge: Rc<Vec<Option<usize>>>,
    msg_inc: Rc<Vec<Option<usize>>>,
    inc_edge: Rc<Vec<Option<usize>>>,
    inc_node: Vec<usize>,
    groups: Vec<AggGroup>,
    group_slot: Rc<Vec<Option<usize>>>,
}

impl GraphBatch {
    pub fn new(inputs: &[&GraphInput], config: &HeatConfig, spec: &MicrobatchSpec) -> Result<Self, PackError> {
        let edge_token = !config.drop_edge_token;
        let mut node_offsets = Vec::new();
        let mut edge_offsets = Vec::new();
        let (mut n_total, mut e_total) = (0, 0);
        for g in inputs {
            node_offsets.push(n_total);
            edge_offsets.push(e_total);
            n_total += g.num_nodes();
            e_total += g.num_edges();
        }

        let flatten = |lists: &mut dyn Iterator<Item = &Vec<usize>>| {
            let (mut tok, mut seg) = (Vec::new(), Vec::new());
            for (i, l) in lists.enumerate() {
                for &t in l {
                    tok.push(Some(t));
                    seg.push(i);
                }
            }
            (tok, seg)
        };
        let (node_tok, node_tok_seg) = flatten(&mut inputs.iter().flat_map(|g| &g.node_tokens));
        let (edge_tok, edge_tok_seg) = flatten(&mut inputs.iter().flat_map(|g| &g.edge_tokens));

        let mut named: HashMap<&[usize], usize> = HashMap::new();
        let mut named_list: Vec<&Vec<usize>> = Vec::new();
        let mut pos_index: HashMap<usize, usize> = HashMap::new();
        let mut positions = Vec::new();
        let mut inc_node = Vec::new();
        let mut inc_q = Vec::new();
        let mut inc_edge_id = Vec::new();
        let mut lengths = Vec::with_capacity(e_total);
        for (g, input) in inputs.iter().enumerate() {
            for (e, incs) in input.edges.iter().enumerate() {
                lengths.push(incs.len() + edge_token as usize);
                for (node, key) in incs {
                    inc_node.push(node_offsets[g] + node);
                    inc_edge_id.push(edge_offsets[g] + e);
                    inc_q.push(match key {
                        QualKey::Named(toks) => {
                            let next = named_list.len();
                            let id = *named.entry(toks.as_slice()).or_insert(next);
                            if id == next {
                                named_list.push(toks);
                            }
                            QualKey::Named(vec![id])
                        }
                        QualKey::Position(p) => {
                            let next = positions.len();
                            let id = *pos_index.entry(*p).or_insert(next);
                            if id == next {
                                positions.push(*p);
                            }
                            QualKey::Position(id)
                        }
                    });
                }
            }
        }
        let num_named = named_list.len();
        let (qual_tok, qual_tok_seg) = flatten(&mut named_list.into_iter());

        let packed = PackedBatch::pack(&lengths, spec)?;
        let rows = packed.total_len();
        let mut seq_state = Vec::with_capacity(rows);
        let mut seq_qual = Vec::with_capacity(rows);
        let mut row_edge = Vec::with_capacity(rows);
        let mut msg_edge = Vec::with_capacity(e_total);
        let mut msg_inc = Vec::with_capacity(inc_node.len());
        let mut k = 0;
        for (e, &len) in lengths.iter().enumerate() {
            let start = packed.offset(e);
            if edge_token {
                seq_state.push(Some(e));
                seq_qual.push(None);
                row_edge.push(e);
                msg_edge.push(Some(start));
            }
            for i in 0..len - edge_token as usize {
                seq_state.push(Some(e_total + inc_node[k]));
                seq_qual.push(Some(match inc_q[k] {
                    QualKey::Named(ref v) => v[0],
                    QualKey::Position(p) => num_named + p,
                }));
                row_edge.push(e);
                msg_inc.push(Some(start + edge_token as usize + i));
                k += 1;
            }
        }

        // cross-attention: nodes bucketed by degree rounded up to a power of two
        let mut incoming: Vec<Vec<usize>> = vec![Vec::new(); n_total];
        for (i, &n) in inc_node.iter().enumerate() {
            incoming[n].push(i);
        }
        let mut by_pad: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
        for (n, inc) in incoming.iter().enumerate() {
            if !inc.is_empty() {
                by_pad.entry(inc.len().next_power_of_two()).or_default().push(n);
            }
        }
        let mut group_slot = vec![None; n_total];
        let mut groups = Vec::new();
        let mut slot = 0;
        for (pad, nodes) in by_pad {
            let mut keys = Vec::with_capacity(nodes.len() * pad);
            let mut degrees = Vec::with_capacity(nodes.len());
            for &n in &nodes {
                group_slot[n] = Some(slot);
                slot += 1;
                degrees.push(incoming[n].len());
                keys.extend(incoming[n].iter().map(|&i| Some(i)));
                keys.extend(std::iter::repeat_n(None, pad - incoming[n].len()));
            }
            groups.push(AggGroup {
                pad,
                nodes: Rc::new(nodes.into_iter().map(Some).collect()),
                keys: Rc::new(keys),
                degrees,
            });
        }

        Ok(GraphBatch {
            num_nodes: n_total,
            num_edges: e_total,
            node_offsets,
            edge_offsets,
            packed,
            edge_token,
            node_tok: Rc::new(node_tok),
            node_tok_seg,
            edge_tok: Rc::new(edge_tok),
            edge_tok_seg: Rc::new(edge_tok_seg),
            qual_tok: Rc::new(qual_tok),
            qual_tok_seg: Rc::new(qual_tok_seg),
            num_named,
            has_qual: num_named + positions.len() > 0,
            positions,
            seq_state: Rc::new(seq_state),
            seq_qual: Rc::new(seq_qual),
            row_edge: Rc::new(row_edge),
            msg_edge: Rc::new(msg_edge),
            msg_inc: Rc::new(msg_inc),
            inc_edge: Rc::new(inc_edge_id.into_iter().map(Some).collect()),
            inc_node,
            groups,
            group_slot: Rc::new(group_slot),
        })
    }

    pub fn single(input: &GraphInput, config: &HeatConfig, spec: &MicrobatchSpec) -> Result<Self, PackError> {
        Self::new(&[input], config, spec)
    }

    pub fn num_incidences(&self) -> usize {
        self.inc_node.len()
    }

    fn sinusoids<T: Scalar>(&self, d: usize) -> Option<Tensor<T>> {
        if self.positions.is_empty() {
            return None;
        }
        let mut data = Vec::with_capacity(self.positions.len() * d);
        for &p in &self.positions {
            data.extend(sinusoidal_position(p, d).expect("even dim").into_iter().map(T::of));
        }
        Some(Tensor::new(vec![self.positions.len(), d], data).expect("shape"))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn register<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParameterStore<T>,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
        rng: &mut R,
    ) -> TResult<Self> {
        let w = store.add(format!("{name}.w"), Tensor::fan_in_uniform(&[fan_in, fan_out], rng))?;
        let b = if bias {
            Some(store.add(format!("{name}.b"), Tensor::zeros(&[fan_out]))?)
        } else {
            None
        };
        Ok(Linear { w, b })
    }

    pub fn apply<'t, T: Scalar>(&self, tape: &'t Tape<T>, store: &ParameterStore<T>, x: Var<'t, T>) -> TResult<Var<'t, T>> {
        x.linear(tape.param(store, self.w), self.b.map(|b| tape.param(store, b)))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LayerNormParams {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNormParams {
    pub fn register<T: Scalar>(store: &mut ParameterStore<T>, name: &str, d: usize) -> TResult<Self> {
        Ok(LayerNormParams {
            gain: store.add(format!("{name}.g"), Tensor::full(&[d], T::one()))?,
            bias: store.add(format!("{name}.b"), Tensor::zeros(&[d]))?,
        })
    }

    pub fn apply<'t, T: Scalar>(&self, tape: &'t Tape<T>, store: &ParameterStore<T>, x: Var<'t, T>) -> TResult<Var<'t, T>> {
        x.layer_norm(tape.param(store, self.gain), tape.param(store, self.bias), LN_EPS)
    }
}

/// Position-wise feed-forward block: `gelu(x W1 + b1) W2 + b2`.
#[derive(Clone, Copy, Debug)]
pub struct Ffn {
    pub inner: Linear,
    pub outer: Linear,
}

impl Ffn {
    pub fn apply<'t, T: Scalar>(
        &self,
        tape: &'t Tape<T>,
        store: &ParameterStore<T>,
        x: Var<'t, T>,
        dropout: f64,
        rng: DropoutRng<'_>,
    ) -> TResult<Var<'t, T>> {
        let hidden = self.inner.apply(tape, store, x)?.gelu().dropout(dropout, rng)?;
        self.outer.apply(tape, store, hidden)
    }
}

/// `q = LN(h + u)`, then `LN(q + FFN(q))` unless the FFN is ablated.
#[derive(Clone, Copy, Debug)]
pub struct UpdateParams {
    pub ln1: LayerNormParams,
    pub ffn: Option<(Ffn, LayerNormParams)>,
}

impl UpdateParams {
    fn register<T: Scalar, R: Rng + ?Sized>(store: &mut ParameterStore<T>, name: &str, config: &HeatConfig, rng: &mut R) -> TResult<Self> {
        let d = config.dim;
        let ln1 = LayerNormParams::register(store, &format!("{name}.ln1"), d)?;
        let ffn = if config.no_ffn {
            None
        } else {
            let inner = Linear::register(store, &format!("{name}.ffn.inner"), d, config.ffn_dim, true, rng)?;
            let outer = Linear::register(store, &format!("{name}.ffn.outer"), config.ffn_dim, d, true, rng)?;
            let ln2 = LayerNormParams::register(store, &format!("{name}.ln2"), d)?;
            Some((Ffn { inner, outer }, ln2))
        };
        Ok(UpdateParams { ln1, ffn })
    }

    pub fn apply<'t, T: Scalar>(
        &self,
        tape: &'t Tape<T>,
        store: &ParameterStore<T>,
        h: Var<'t, T>,
        u: Var<'t, T>,
        dropout: f64,
        rng: DropoutRng<'_>,
    ) -> TResult<Var<'t, T>> {
        let q = self.ln1.apply(tape, store, h.add(u)?)?;
        match &self.ffn {
            None => Ok(q),
            Some((ffn, ln2)) => {
                let f = ffn.apply(tape, store, q, dropout, rng)?;
                ln2.apply(tape, store, q.add(f)?)
            }
        }
    }
}

/// Deep Set message variant: per-element MLP, sum pool, post MLP, and a
/// bias-free linear map for per-node messages.
#[derive(Clone, Copy, Debug)]
pub struct DeepSetParams {
    pub phi: [Linear; 2],
    pub rho: [Linear; 2],
    pub out: Linear,
}

#[derive(Clone, Copy, Debug)]
pub enum MessageParams {
    Attention(MhaParams),
    DeepSet(DeepSetParams),
}

#[derive(Clone, Copy, Debug)]
pub struct LayerParams {
    pub qualifier: Option<Linear>,
    pub messages: MessageParams,
    pub cross_attention: Option<MhaParams>,
    pub node: UpdateParams,
    pub edge: Option<UpdateParams>,
}

/// Node and edge states after some number of layers.
#[derive(Clone, Copy, Debug)]
pub struct States<'t, T: Scalar> {
    pub nodes: Var<'t, T>,
    pub edges: Var<'t, T>,
}

/// Layer-0 states plus the sum-pooled base embedding of each named
/// qualifier in the batch.
#[derive(Clone, Copy, Debug)]
pub struct InitStates<'t, T: Scalar> {
    pub nodes: Var<'t, T>,
    pub edges: Var<'t, T>,
    pub qualifiers: Option<Var<'t, T>>,
}

/// Messages of one layer.
#[derive(Clone, Copy, Debug)]
pub struct Messages<'t, T: Scalar> {
    /// `[edges, d]`, absent when the edge-state slot is dropped.
    pub edges: Option<Var<'t, T>>,
    /// `[incidences, d]` in batch incidence order.
    pub incidences: Var<'t, T>,
}

#[derive(Clone, Debug)]
pub struct HeatEncoder {
    pub config: HeatConfig,
    pub embed: ParamId,
    pub layers: Vec<LayerParams>,
    pub spec: MicrobatchSpec,
}

impl HeatEncoder {
    /// Registers every parameter under `prefix`, in a fixed order.
    pub fn register<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParameterStore<T>,
        prefix: &str,
        config: &HeatConfig,
        vocab_size: usize,
        rng: &mut R,
    ) -> TResult<Self> {
        config.validate().map_err(|e| TensorError::Invalid {
            op: "HeatEncoder::register",
            detail: e.to_string(),
        })?;
        let d = config.dim;
        let embed = store.add(format!("{prefix}.embed"), Tensor::uniform(&[vocab_size.max(1), d], 1.0, rng))?;
        let mut layers = Vec::with_capacity(config.layers);
        for t in 0..config.layers {
            let name = |s: &str| format!("{prefix}.l{t}.{s}");
            let qualifier = if config.no_qualifiers {
                None
            } else {
                Some(Linear::register(store, &name("qual"), d, d, true, rng)?)
            };
            let messages = if config.deepset_messages {
                let mut lin = |s: &str, i: usize, bias: bool| Linear::register(store, &name(s), i, d, bias, rng);
                MessageParams::DeepSet(DeepSetParams {
                    phi: [lin("deepset.phi1", d, true)?, lin("deepset.phi2", d, true)?],
                    rho: [lin("deepset.rho1", d, true)?, lin("deepset.rho2", d, true)?],
                    out: lin("deepset.out", 2 * d, false)?,
                })
            } else {
                MessageParams::Attention(MhaParams::register(store, &name("msg"), d, rng)?)
            };
            let cross_attention = match config.agg {
                AggKind::Max => None,
                AggKind::CrossAttention => Some(MhaParams::register(store, &name("agg"), d, rng)?),
            };
            let node = UpdateParams::register(store, &name("node"), config, rng)?;
            let edge = if config.evolving_edges() {
                Some(UpdateParams::register(store, &name("edge"), config, rng)?)
            } else {
                None
            };
            layers.push(LayerParams {
                qualifier,
                messages,
                cross_attention,
                node,
                edge,
            });
        }
        Ok(HeatEncoder {
            config: config.clone(),
            embed,
            layers,
            spec: MicrobatchSpec::default(),
        })
    }

    pub fn batch(&self, inputs: &[&GraphInput]) -> Result<GraphBatch, PackError> {
        GraphBatch::new(inputs, &self.config, &self.spec)
    }

    /// Node states are max-pooled subtoken embeddings of the label, edge
    /// states and qualifier bases are sum-pooled.
    pub fn init_states<'t, T: Scalar>(
        &self,
        tape: &'t Tape<T>,
        store: &ParameterStore<T>,
        batch: &GraphBatch,
    ) -> TResult<InitStates<'t, T>> {
        let embed = tape.param(store, self.embed);
        let nodes = embed
            .gather_rows(Rc::clone(&batch.node_tok))?
            .segment_max(&batch.node_tok_seg, batch.num_nodes)?;
        let edges = embed
            .gather_rows(Rc::clone(&batch.edge_tok))?
            .segment_sum(Rc::clone(&batch.edge_tok_seg), batch.num_edges)?;
        let qualifiers = if batch.num_named > 0 {
            Some(
                embed
                    .gather_rows(Rc::clone(&batch.qual_tok))?
                    .segment_sum(Rc::clone(&batch.qual_tok_seg), batch.num_named)?,
            )
        } else {
            None
        };
        Ok(InitStates { nodes, edges, qualifiers })
    }

    /// The per-slot message inputs `[h_e, r_1 + h_1, ...]` of every edge, in
    /// compact sequence order.
    fn sequence_inputs<'t, T: Scalar>(
        &self,
        tape: &'t Tape<T>,
        store: &ParameterStore<T>,
        layer: &LayerParams,
        batch: &GraphBatch,
        states: &States<'t, T>,
        qual_base: Option<Var<'t, T>>,
    ) -> TResult<Var<'t, T>> {
        let pool = tape.concat_rows(&[states.edges, states.nodes])?;
        let x = pool.gather_rows(Rc::clone(&batch.seq_state))?;
        if self.config.no_qualifiers || !batch.has_qual {
            return Ok(x);
        }
        let mut parts = Vec::with_capacity(2);
        if let (Some(base), Some(affine)) = (qual_base, &layer.qualifier) {
            parts.push(affine.apply(tape, store, base)?);
        }
        if let Some(s) = batch.sinusoids::<T>(self.config.dim) {
            parts.push(tape.constant(s));
        }
        let table = tape.concat_rows(&parts)?;
        x.add(table.gather_rows(Rc::clone(&batch.seq_qual))?)
    }

    /// Messages of one layer for every edge of the batch.
    #[allow(clippy::too_many_arguments)]
    pub fn messages<'t, T: Scalar>(
        &self,
        tape: &'t Tape<T>,
        store: &ParameterStore<T>,
        layer: &LayerParams,
        batch: &GraphBatch,
        states: &States<'t, T>,
        qual_base: Option<Var<'t, T>>,
        rng: DropoutRng<'_>,
    ) -> TResult<Messages<'t, T>> {
        let x = self.sequence_inputs(tape, store, layer, batch, states, qual_base)?;
        let edge_msgs = |y: Var<'t, T>| -> TResult<Option<Var<'t, T>>> {
            if batch.edge_token {
                Ok(Some(y.gather_rows(Rc::clone(&batch.msg_edge))?))
            } else {
                Ok(None)
            }
        };
        match &layer.messages {
            MessageParams::Attention(mha) => {
                let y = packed_self_attention(tape, store, mha, x, &batch.packed, self.config.heads, self.config.dropout, rng)?;
                Ok(Messages {
                    edges: edge_msgs(y)?,
                    incidences: y.gather_rows(Rc::clone(&batch.msg_inc))?,
                })
            }
            MessageParams::DeepSet(ds) => {
                let phi = ds.phi[1].apply(tape, store, ds.phi[0].apply(tape, store, x)?.relu())?;
                let pooled = phi.segment_sum(Rc::clone(&batch.row_edge), batch.num_edges)?;
                let q_e = ds.rho[1].apply(tape, store, ds.rho[0].apply(tape, store, pooled)?.relu())?;
                let members = x.gather_rows(Rc::clone(&batch.msg_inc))?;
                let context = q_e.gather_rows(Rc::clone(&batch.inc_edge))?;
                let node = ds.out.apply(tape, store, tape.concat_last(&[members, context])?)?.relu();
                Ok(Messages {
                    edges: batch.edge_token.then_some(q_e),
                    incidences: node,
                })
            }
        }
    }

    /// Reduces incidence messages per node; nodes without messages get zero.
    #[allow(clippy::too_many_arguments)]
    pub fn aggregate<'t, T: Scalar>(
        &self,
        tape: &'t Tape<T>,
        store: &ParameterStore<T>,
        layer: &LayerParams,
        batch: &GraphBatch,
        nodes: Var<'t, T>,
        messages: Var<'t, T>,
        mut rng: DropoutRng<'_>,
    ) -> TResult<Var<'t, T>> {
        let Some(mha) = &layer.cross_attention else {
            return messages.segment_max(&batch.inc_node, batch.num_nodes);
        };
        let d = self.config.dim;
        let heads = self.config.heads;
        let p = |id| tape.param(store, id);
        let q = nodes.linear(p(mha.wq), Some(p(mha.bq)))?;
        let k = messages.linear(p(mha.wk), Some(p(mha.bk)))?;
        let v = messages.linear(p(mha.wv), Some(p(mha.bv)))?;
        let scale = 1.0 / ((d / heads) as f64).sqrt();
        let mut parts = Vec::with_capacity(batch.groups.len());
        for g in &batch.groups {
            let nb = g.degrees.len();
            let gq = q.gather_rows(Rc::clone(&g.nodes))?.reshape(&[nb, 1, d])?.split_heads(heads)?;
            let gk = k.gather_rows(Rc::clone(&g.keys))?.reshape(&[nb, g.pad, d])?.split_heads(heads)?;
            let gv = v.gather_rows(Rc::clone(&g.keys))?.reshape(&[nb, g.pad, d])?.split_heads(heads)?;
            let mask = Mask::<T>::from_fn(nb, 1, g.pad, |b, _, j| j < g.degrees[b]);
            let w = gq
                .bmm_nt(gk)?
                .scale(scale)
                .masked_softmax(Some(&mask))?
                .dropout(self.config.dropout, rng.as_deref_mut())?;
            parts.push(w.bmm(gv)?.merge_heads(heads)?.reshape(&[nb, d])?);
        }
        if parts.is_empty() {
            return Ok(tape.constant(Tensor::zeros(&[batch.num_nodes, d])));
        }
        let context = tape.concat_rows(&parts)?.linear(p(mha.wo), Some(p(mha.bo)))?;
        context.gather_rows(Rc::clone(&batch.group_slot))
    }

    /// Runs all layers. Without an rng, dropout is off.
    pub fn forward<'t, T: Scalar>(
        &self,
        tape: &'t Tape<T>,
        store: &ParameterStore<T>,
        batch: &GraphBatch,
        rng: DropoutRng<'_>,
    ) -> TResult<States<'t, T>> {
        self.forward_layers(tape, store, batch, self.layers.len(), rng)
    }

    /// Runs the first `layers` layers.
    pub fn forward_layers<'t, T: Scalar>(
        &self,
        tape: &'t Tape<T>,
        store: &ParameterStore<T>,
        batch: &GraphBatch,
        layers: usize,
        mut rng: DropoutRng<'_>,
    ) -> TResult<States<'t, T>> {
        let init = self.init_states(tape, store, batch)?;
        let mut states = States {
            nodes: init.nodes,
            edges: init.edges,
        };
        if batch.num_edges == 0 {
            return Ok(states);
        }
        let dropout = self.config.dropout;
        for layer in &self.layers[..layers] {
            let msgs = self.messages(tape, store, layer, batch, &states, init.qualifiers, rng.as_deref_mut())?;
            let u = self.aggregate(tape, store, layer, batch, states.nodes, msgs.incidences, rng.as_deref_mut())?;
            let nodes = layer.node.apply(tape, store, states.nodes, u, dropout, rng.as_deref_mut())?;
            if let (Some(edge), Some(m_e)) = (&layer.edge, msgs.edges) {
                states.edges = edge.apply(tape, store, states.edges, m_e, dropout, rng.as_deref_mut())?;
            }
            states.nodes = nodes;
        }
        Ok(states)
    }

    /// Message computation of one edge without packing: plain attention over
    /// its `[h_e, r + h ...]` sequence. Used to cross-check the packed path.
    #[allow(clippy::too_many_arguments)]
    pub fn edge_messages_unpacked<'t, T: Scalar>(
        &self,
        tape: &'t Tape<T>,
        store: &ParameterStore<T>,
        layer: usize,
        batch: &GraphBatch,
        states: &States<'t, T>,
        qual_base: Option<Var<'t, T>>,
        edge: usize,
    ) -> TResult<Var<'t, T>> {
        let l = &self.layers[layer];
        let MessageParams::Attention(mha) = &l.messages else {
            return Err(TensorError::Invalid {
                op: "edge_messages_unpacked",
                detail: "attention messages only".into(),
            });
        };
        let x = self.sequence_inputs(tape, store, l, batch, states, qual_base)?;
        let start = batch.packed.offset(edge);
        let len = batch.packed.lengths()[edge];
        let seq = x
            .gather_rows(Rc::new((start..start + len).map(Some).collect()))?
            .reshape(&[1, len, self.config.dim])?;
        let out = multihead_attention::<T, dyn RngCore>(tape, store, mha, seq, seq, None, self.config.heads, 0.0, None)?;
        out.reshape(&[len, self.config.dim])
    }
}
