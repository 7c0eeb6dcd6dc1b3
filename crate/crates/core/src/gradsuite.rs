//! Finite-difference verification of every differentiable operation, the
//! full encoder and the task heads, in double precision.

use std::rc::Rc;

use heat_graph::{Hypergraph, NodeKind};
use heat_tensor::{
    finite_diff_check, multihead_attention, GradCheckReport, Mask, MhaParams, ParameterStore, Result as TResult, Tape, Tensor, Var,
};
use rand::Rng;
use serde::Serialize;

use crate::bugtask::{self, BugModel, Prepared};
use crate::kg::{synthetic, SyntheticSpec};
use crate::kgtask::{KgData, KgModel};
use crate::packing::{packed_self_attention, PackedBatch};
use crate::{rng_stream, GraphInput, HeatConfig, HeatEncoder, MicrobatchSpec, Variant, Vocab};

/// Central-difference step.
pub const STEP: f64 = 1e-5;
/// Largest accepted relative error.
pub const TOLERANCE: f64 = 1e-4;
/// Entries sampled per parameter in model-sized checks.
const MODEL_ENTRIES: usize = 6;

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct SuiteReport {
    pub cases: usize,
    pub checks: usize,
    pub checked_entries: usize,
    pub skipped_nonsmooth: usize,
    pub max_rel_err: f64,
    /// Check and parameter of the worst entry.
    pub worst: String,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checked_entries > 0 && self.max_rel_err < TOLERANCE
    }

    fn absorb(&mut self, check: &str, r: &GradCheckReport) {
        self.checks += 1;
        self.checked_entries += r.checked;
        self.skipped_nonsmooth += r.skipped_nonsmooth;
        if r.max_rel_err >= self.max_rel_err {
            self.max_rel_err = r.max_rel_err;
            self.worst = match &r.worst {
                Some((name, k)) => format!("{check}: {name}[{k}]"),
                None => check.to_string(),
            };
        }
    }

    fn merge(&mut self, other: SuiteReport) {
        self.cases += other.cases;
        self.checks += other.checks;
        self.checked_entries += other.checked_entries;
        self.skipped_nonsmooth += other.skipped_nonsmooth;
        if other.max_rel_err >= self.max_rel_err {
            self.max_rel_err = other.max_rel_err;
            self.worst = other.worst;
        }
    }
}

/// Random hypergraph with `nodes` nodes and `edges` edges of width
/// `1..=max_width`. Edge types mix the sequence type `Tokens`
/// (positional qualifiers) with named-qualifier types.
pub fn random_hypergraph<R: Rng + ?Sized>(rng: &mut R, nodes: usize, edges: usize, max_width: usize) -> Hypergraph {
    const LABELS: &[&str] = &["x", "total", "count", "getValue", "node_id", "+", "while", "Name"];
    const TYPES: &[&str] = &["Tokens", "AstNode", "MayRead", "foo"];
    const QUALIFIERS: &[&str] = &["left", "right", "op", "prev", "succ", "body"];
    let mut g = Hypergraph::new();
    for _ in 0..nodes.max(1) {
        g.add_node(LABELS[rng.gen_range(0..LABELS.len())], NodeKind::AstNode);
    }
    for _ in 0..edges {
        let ty = TYPES[rng.gen_range(0..TYPES.len())];
        let width = rng.gen_range(1..=max_width.max(1));
        let incs: Vec<(String, usize)> = (0..width)
            .map(|i| {
                let q = if ty == "Tokens" {
                    format!("p{}", i + 1)
                } else {
                    QUALIFIERS[rng.gen_range(0..QUALIFIERS.len())].to_string()
                };
                (q, rng.gen_range(0..g.nodes.len()))
            })
            .collect();
        g.add_edge(ty, incs);
    }
    g
}

/// Vocabulary covering every label, type and qualifier of `graphs`.
pub fn graph_vocab<'a>(graphs: impl IntoIterator<Item = &'a Hypergraph>) -> Vocab {
    let mut names: Vec<&str> = Vec::new();
    for g in graphs {
        names.extend(g.nodes.iter().map(|n| n.label.as_str()));
        for e in &g.edges {
            names.push(&e.edge_type);
            names.extend(e.incidences.iter().map(|i| i.qualifier.as_str()));
        }
    }
    Vocab::build(names, 1)
}

/// Weighted sum of all entries with fixed random weights, so every output
/// entry receives a distinct gradient.
fn probe<'t>(tape: &'t Tape<f64>, out: Var<'t, f64>, seed: u64) -> TResult<Var<'t, f64>> {
    let w = Tensor::uniform(&out.shape(), 1.0, &mut rng_stream(seed, "probe"));
    Ok(out.mul(tape.constant(w))?.sum())
}

/// A small encoder configuration for checks.
pub fn tiny_config(variant: Variant) -> HeatConfig {
    let mut c = HeatConfig::desk().with_variant(variant);
    c.layers = 2;
    c.dim = 8;
    c.heads = 2;
    c.ffn_dim = 16;
    c.dropout = 0.0;
    c
}

fn check(
    report: &mut SuiteReport,
    name: &str,
    store: &ParameterStore<f64>,
    entries: Option<usize>,
    loss: impl for<'t> Fn(&'t Tape<f64>, &ParameterStore<f64>) -> TResult<Var<'t, f64>>,
) -> TResult<()> {
    let r = finite_diff_check(store, loss, STEP, entries)?;
    report.absorb(name, &r);
    Ok(())
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, shape: &[usize]) -> Tensor<f64> {
    Tensor::uniform(shape, 1.0, rng)
}

/// Every tape operation on random inputs of random sizes.
fn operations(seed: u64, report: &mut SuiteReport) -> TResult<()> {
    let mut rng = rng_stream(seed, "ops");
    let (m, k, n) = (rng.gen_range(1..5), rng.gen_range(1..6), rng.gen_range(1..5));

    let mut s = ParameterStore::new();
    let a = s.add("a", uniform(&mut rng, &[m, k]))?;
    let b = s.add("b", uniform(&mut rng, &[m, k]))?;
    let w = s.add("w", uniform(&mut rng, &[k, n]))?;
    let bias = s.add("bias", uniform(&mut rng, &[n]))?;
    check(report, "elementwise", &s, None, |t, s| {
        let (a, b) = (t.param(s, a), t.param(s, b));
        let x = a.mul(b)?.add(a)?.sub(b.scale(0.5))?;
        let y = x.matmul(t.param(s, w))?.add_row(t.param(s, bias))?;
        let z = x.linear(t.param(s, w), Some(t.param(s, bias)))?;
        probe(t, y.gelu(), seed)?.add(probe(t, z.relu(), seed + 1)?)
    })?;

    let (bt, h) = (rng.gen_range(1..3), 2);
    let mut s = ParameterStore::new();
    let x = s.add("x", uniform(&mut rng, &[bt, m, 2 * k]))?;
    let y = s.add("y", uniform(&mut rng, &[bt, 2 * k, n]))?;
    let z = s.add("z", uniform(&mut rng, &[bt, n, 2 * k]))?;
    check(report, "batched", &s, None, |t, s| {
        let (x, y, z) = (t.param(s, x), t.param(s, y), t.param(s, z));
        let p = x.bmm(y)?;
        let q = x.bmm_nt(z)?;
        let joined = t.concat_last(&[p, q])?;
        let heads = x.split_heads(h)?;
        let back = heads.merge_heads(h)?;
        let stacked = t.concat_rows(&[x.reshape(&[bt * m, 2 * k])?, z.reshape(&[bt * n, 2 * k])?])?;
        probe(t, joined, seed)?
            .add(probe(t, heads, seed + 1)?)?
            .add(probe(t, back, seed + 2)?)?
            .add(probe(t, stacked.mean(), seed + 3)?)
    })?;

    let d = rng.gen_range(2..7);
    let mut s = ParameterStore::new();
    let x = s.add("x", uniform(&mut rng, &[m + 1, d]))?;
    let g = s.add("g", uniform(&mut rng, &[d]))?;
    let b = s.add("b", uniform(&mut rng, &[d]))?;
    check(report, "layer_norm", &s, None, |t, s| {
        probe(t, t.param(s, x).layer_norm(t.param(s, g), t.param(s, b), 1e-5)?, seed)
    })?;

    let rows = rng.gen_range(2..6);
    let mut s = ParameterStore::new();
    let x = s.add("x", uniform(&mut rng, &[rows, 3]))?;
    let scores = s.add("scores", uniform(&mut rng, &[2, 3, 4]))?;
    let picks: Vec<Option<usize>> = (0..rows + 2).map(|i| (i % 4 != 3).then(|| rng.gen_range(0..rows))).collect();
    let segments: Vec<usize> = (0..picks.len()).map(|_| rng.gen_range(0..3)).collect();
    let (picks, segments) = (Rc::new(picks), Rc::new(segments));
    let allowed: Vec<bool> = (0..24).map(|_| rng.gen_bool(0.7)).collect();
    let mask = Mask::from_fn(2, 3, 4, |b, q, k| allowed[(b * 3 + q) * 4 + k]);
    check(report, "gather_segment_softmax", &s, None, |t, s| {
        let g = t.param(s, x).gather_rows(Rc::clone(&picks))?;
        let summed = g.segment_sum(Rc::clone(&segments), 3)?;
        let maxed = g.segment_max(&segments, 3)?;
        let sm = t.param(s, scores).masked_softmax(Some(&mask))?;
        probe(t, summed, seed)?
            .add(probe(t, maxed, seed + 1)?)?
            .add(probe(t, sm, seed + 2)?)
    })?;

    let classes = rng.gen_range(2..6);
    let mut s = ParameterStore::new();
    let logits = s.add("logits", uniform(&mut rng, &[3, classes]))?;
    let targets: Vec<usize> = (0..3).map(|_| rng.gen_range(0..classes)).collect();
    let labels = Tensor::from_fn(&[3, classes], |_| if rng.gen_bool(0.3) { 1.0 } else { 0.0 });
    check(report, "losses", &s, None, |t, s| {
        let z = t.param(s, logits);
        z.cross_entropy(&targets)?.add(z.bce_label_smoothing(&labels, 0.1)?)
    })?;

    let mut s = ParameterStore::new();
    let x = s.add("x", uniform(&mut rng, &[m, k]))?;
    check(report, "dropout", &s, None, |t, s| {
        // same mask on every evaluation
        let mut r = rng_stream(seed, "mask");
        probe(t, t.param(s, x).dropout(0.3, Some(&mut r))?, seed)
    })?;

    let dim = 4;
    let mut s = ParameterStore::new();
    let p = MhaParams::register(&mut s, "mha", dim, &mut rng)?;
    let (lq, lk) = (rng.gen_range(1..4), rng.gen_range(1..5));
    let q = s.add("q", uniform(&mut rng, &[2, lq, dim]))?;
    let kv = s.add("kv", uniform(&mut rng, &[2, lk, dim]))?;
    let mask = Mask::from_fn(2, lq, lk, |b, q, k| (b + q + k) % 3 != 1 || k == 0);
    check(report, "attention", &s, None, |t, s| {
        let out = multihead_attention(
            t,
            s,
            &p,
            t.param(s, q),
            t.param(s, kv),
            Some(&mask),
            2,
            0.0,
            None::<&mut rand_chacha::ChaCha8Rng>,
        )?;
        probe(t, out, seed)
    })?;

    let lengths: Vec<usize> = (0..rng.gen_range(1..5)).map(|_| rng.gen_range(1..8)).collect();
    let total: usize = lengths.iter().sum();
    let packed = PackedBatch::pack(&lengths, &MicrobatchSpec::new(vec![4, 8, 16]).expect("valid widths")).map_err(|e| {
        heat_tensor::TensorError::Invalid {
            op: "gradsuite",
            detail: e.to_string(),
        }
    })?;
    let mut s = ParameterStore::new();
    let p = MhaParams::register(&mut s, "packed", dim, &mut rng)?;
    let x = s.add("x", uniform(&mut rng, &[total, dim]))?;
    check(report, "packed_attention", &s, None, |t, s| {
        let out = packed_self_attention(t, s, &p, t.param(s, x), &packed, 2, 0.0, None)?;
        probe(t, out, seed)
    })?;
    Ok(())
}

/// Two-layer encoder on a random graph; the variant cycles with the seed.
fn encoder(seed: u64, report: &mut SuiteReport) -> TResult<()> {
    let mut rng = rng_stream(seed, "encoder");
    let variant = Variant::ALL[seed as usize % Variant::ALL.len()];
    let (nodes, edges) = (rng.gen_range(2..7), rng.gen_range(1..5));
    let g = random_hypergraph(&mut rng, nodes, edges, 5);
    let vocab = graph_vocab([&g]);
    let config = tiny_config(variant);
    let mut store = ParameterStore::new();
    let enc = HeatEncoder::register(&mut store, "encoder", &config, vocab.len(), &mut rng)?;
    let input = GraphInput::new(&g, &vocab);
    let batch = enc.batch(&[&input]).map_err(|e| heat_tensor::TensorError::Invalid {
        op: "gradsuite",
        detail: e.to_string(),
    })?;
    check(
        report,
        &format!("heat_forward[{}]", variant.name()),
        &store,
        Some(MODEL_ENTRIES),
        |t, s| {
            let st = enc.forward(t, s, &batch, None)?;
            probe(t, st.nodes, seed)?.add(probe(t, st.edges, seed + 1)?)
        },
    )
}

fn bug_heads(seed: u64, report: &mut SuiteReport) -> TResult<()> {
    let samples = bugtask::generate_samples(seed, 2);
    let vocab = bugtask::build_vocab(&samples);
    let mut store = ParameterStore::new();
    let model = BugModel::register(&mut store, &tiny_config(Variant::Full), vocab.len(), &mut rng_stream(seed, "init"))?;
    let prepared: Vec<Prepared> = samples.iter().map(|s| Prepared::new(s, &vocab)).collect();
    let refs: Vec<&Prepared> = prepared.iter().collect();
    check(report, "bug_heads", &store, Some(MODEL_ENTRIES), |t, s| {
        model.joint_loss(t, s, &refs, None)
    })
}

fn kg_head(seed: u64, report: &mut SuiteReport) -> TResult<()> {
    let spec = SyntheticSpec {
        entities: 12,
        pool: 5,
        relations: 2,
        per_key: 2,
        test_fraction: 0.0,
    };
    let data = KgData::new(&synthetic(&spec, &mut rng_stream(seed, "kg")));
    let mut config = tiny_config(Variant::Full);
    config.layers = 1;
    let mut store = ParameterStore::new();
    let model = KgModel::register(
        &mut store,
        &config,
        data.vocab.len(),
        data.num_entities,
        &mut rng_stream(seed, "init"),
    )?;
    let batch: Vec<_> = data.train.iter().take(4).collect();
    check(report, "kg_head", &store, Some(MODEL_ENTRIES), |t, s| {
        model.loss(t, s, &data, &batch, None)
    })
}

/// One case: every operation, the encoder, and on every fifth case the
/// task heads.
pub fn run_case(seed: u64) -> TResult<SuiteReport> {
    let mut report = SuiteReport {
        cases: 1,
        ..Default::default()
    };
    operations(seed, &mut report)?;
    encoder(seed, &mut report)?;
    if seed.is_multiple_of(5) {
        bug_heads(seed, &mut report)?;
        kg_head(seed, &mut report)?;
    }
    Ok(report)
}

/// Cases `seed .. seed + cases`.
pub fn run(seed: u64, cases: usize) -> TResult<SuiteReport> {
    let mut total = SuiteReport::default();
    for s in seed..seed + cases as u64 {
        total.merge(run_case(s)?);
    }
    Ok(total)
}
