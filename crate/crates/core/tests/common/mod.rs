//! Checks shared by the topical integration tests and the acceptance run.
#![allow(dead_code)]

use heat_core::packing::{greedy_pack, optimal_pack_bruteforce, packed_self_attention, packing_cost, Bucket, MicrobatchSpec, PackedBatch};
use std::collections::BTreeSet;

use heat_core::{rng_stream, HeatConfig, HeatEncoder, Variant};
use heat_tensor::{multihead_attention, MhaParams, ParameterStore, Scalar, Tape, Tensor};
use rand::Rng;

/// Edge widths of a random hypergraph: up to `max_edges` edges with widths
/// log-uniform in `1..=1023`, so both short and near-maximal edges occur.
pub fn random_widths<R: Rng>(rng: &mut R, max_edges: usize) -> Vec<usize> {
    let n = rng.gen_range(1..=max_edges);
    (0..n)
        .map(|_| {
            let w = (rng.gen::<f64>() * 1024f64.ln()).exp() as usize;
            w.clamp(1, 1023)
        })
        .collect()
}

pub struct Equivalence {
    pub max_abs_diff: f64,
    pub bitwise: bool,
    pub bijective: bool,
    pub sequences: usize,
}

/// Packed masked attention against attention run on each sequence alone,
/// for sequence lengths `width + 1` (edge token plus members).
pub fn packing_equivalence<T: Scalar>(seed: u64, widths: &[usize]) -> Equivalence {
    let (d, heads) = (8, 2);
    let mut rng = rng_stream(seed, "packing");
    let mut store = ParameterStore::<T>::new();
    let params = MhaParams::register(&mut store, "mha", d, &mut rng).unwrap();
    let lengths: Vec<usize> = widths.iter().map(|w| w + 1).collect();
    let packed = PackedBatch::pack(&lengths, &MicrobatchSpec::default()).unwrap();
    let total: usize = lengths.iter().sum();
    let x = Tensor::<T>::uniform(&[total, d], 1.0, &mut rng);

    let tape = Tape::new();
    let out = packed_self_attention(&tape, &store, &params, tape.constant(x.clone()), &packed, heads, 0.0, None)
        .unwrap()
        .value();
    let mut max_abs_diff: f64 = 0.0;
    let mut bitwise = true;
    for (i, &len) in lengths.iter().enumerate() {
        let off = packed.offset(i);
        let rows = Tensor::new(vec![1, len, d], x.data()[off * d..(off + len) * d].to_vec()).unwrap();
        let tape = Tape::new();
        let seq = tape.constant(rows);
        let want = multihead_attention::<T, rand_chacha::ChaCha8Rng>(&tape, &store, &params, seq, seq, None, heads, 0.0, None)
            .unwrap()
            .value();
        for (a, b) in out.data()[off * d..(off + len) * d].iter().zip(want.data()) {
            max_abs_diff = max_abs_diff.max((a.as_f64() - b.as_f64()).abs());
            bitwise &= a.as_f64().to_bits() == b.as_f64().to_bits();
        }
    }
    Equivalence {
        max_abs_diff,
        bitwise,
        bijective: reverse_is_bijective(&packed),
        sequences: lengths.len(),
    }
}

/// Every `(sequence, position)` appears at exactly one packed slot, that slot
/// maps back to it, and all other slots are padding.
pub fn reverse_is_bijective(packed: &PackedBatch) -> bool {
    let mut hits = 0;
    for i in 0..packed.lengths().len() {
        for p in 0..packed.lengths()[i] {
            let s = packed.slot(i, p);
            if s >= packed.num_slots() || packed.reverse(s) != Some((i, p)) {
                return false;
            }
            hits += 1;
        }
    }
    let occupied = (0..packed.num_slots()).filter(|&s| packed.reverse(s).is_some()).count();
    hits == packed.total_len() && occupied == hits
}

/// Every sequence placed exactly once, in a bucket of an allowed width,
/// with contiguous segments that fit.
pub fn valid_packing(lengths: &[usize], buckets: &[Bucket], spec: &MicrobatchSpec) -> bool {
    let mut seen = vec![0; lengths.len()];
    for b in buckets {
        if !spec.widths().contains(&b.width) || b.used() > b.width {
            return false;
        }
        let mut next = 0;
        for s in &b.segments {
            if s.item >= lengths.len() || s.len != lengths[s.item] || s.offset != next {
                return false;
            }
            next += s.len;
            seen[s.item] += 1;
        }
    }
    seen.iter().all(|&c| c == 1)
}

pub struct GreedyVsOptimal {
    pub instances: usize,
    pub all_valid: bool,
    pub never_below_optimal: bool,
    pub mean_ratio: f64,
    pub optimal_hits: usize,
}

/// Random tiny instances (at most 8 sequences, lengths up to 15, widths
/// {4, 8, 16}) compared with exhaustive search.
pub fn greedy_vs_optimal(seed: u64, instances: usize) -> GreedyVsOptimal {
    let spec = MicrobatchSpec::new(vec![4, 8, 16]).unwrap();
    let mut rng = rng_stream(seed, "tiny-packing");
    let mut report = GreedyVsOptimal {
        instances,
        all_valid: true,
        never_below_optimal: true,
        mean_ratio: 0.0,
        optimal_hits: 0,
    };
    let (mut ratios, mut counted) = (0.0, 0);
    for _ in 0..instances {
        let n = rng.gen_range(1..=8);
        let lengths: Vec<usize> = (0..n).map(|_| rng.gen_range(1..=15)).collect();
        let greedy = greedy_pack(&lengths, &spec).unwrap();
        let (best, assignment) = optimal_pack_bruteforce(&lengths, &spec).unwrap();
        let cost = packing_cost(&greedy);
        report.all_valid &= valid_packing(&lengths, &greedy, &spec) && valid_packing(&lengths, &assignment, &spec);
        report.all_valid &= packing_cost(&assignment) == best;
        report.never_below_optimal &= cost >= best;
        report.optimal_hits += usize::from(cost == best);
        if best > 0 {
            ratios += cost as f64 / best as f64;
            counted += 1;
        }
    }
    report.mean_ratio = ratios / counted.max(1) as f64;
    report
}

/// Cost of packing sequences of lengths 9 and 7 with widths {4, 8, 16}.
pub fn nine_and_seven() -> (usize, u64) {
    let spec = MicrobatchSpec::new(vec![4, 8, 16]).unwrap();
    let buckets = greedy_pack(&[9, 7], &spec).unwrap();
    (buckets.len(), packing_cost(&buckets))
}

fn parameter_names(config: &HeatConfig) -> (BTreeSet<String>, usize) {
    let mut store = ParameterStore::<f32>::new();
    HeatEncoder::register(&mut store, "encoder", config, 50, &mut rng_stream(0, "init")).unwrap();
    (store.names().map(str::to_string).collect(), store.num_scalars())
}

/// Parameters each variant removes or adds relative to the full desk model:
/// no_ffn drops exactly the FFN weights (and the layer norm after them),
/// static_edge_state exactly the edge update, and the other variants only
/// touch their own components.
pub fn parameter_audit() -> Result<(), String> {
    let desk = HeatConfig::desk();
    let (d, f, t) = (desk.dim, desk.ffn_dim, desk.layers);
    let (full, full_count) = parameter_names(&desk);
    let diff = |v: Variant| {
        let (other, count) = parameter_names(&desk.clone().with_variant(v));
        let removed: Vec<String> = full.difference(&other).cloned().collect();
        let added: Vec<String> = other.difference(&full).cloned().collect();
        (removed, added, full_count as i64 - count as i64)
    };
    let ensure = |ok: bool, what: &str| if ok { Ok(()) } else { Err(what.to_string()) };
    let ffn = (2 * d * f + f + d + 2 * d) as i64;
    let linear = (d * d + d) as i64;
    let t = t as i64;

    let (removed, added, delta) = diff(Variant::NoFfn);
    ensure(added.is_empty(), "no_ffn adds parameters")?;
    ensure(
        removed.iter().all(|n| n.contains(".ffn.") || n.contains(".ln2.")),
        "no_ffn removes non-FFN parameters",
    )?;
    ensure(removed.len() as i64 == t * 2 * 6 && delta == t * 2 * ffn, "no_ffn parameter count")?;

    let (removed, added, delta) = diff(Variant::StaticEdgeState);
    ensure(
        added.is_empty() && removed.iter().all(|n| n.contains(".edge.")),
        "static_edge_state touches more than the edge update",
    )?;
    ensure(delta == t * (ffn + 2 * d as i64), "static_edge_state parameter count")?;

    let (removed, added, delta) = diff(Variant::NoQualifiers);
    ensure(
        added.is_empty() && removed.iter().all(|n| n.contains(".qual.")),
        "no_qualifiers touches more than the qualifier affines",
    )?;
    ensure(delta == t * linear, "no_qualifiers parameter count")?;

    let (removed, added, _) = diff(Variant::DeepSetMessages);
    ensure(
        !removed.is_empty() && removed.iter().all(|n| n.contains(".msg.")),
        "deepset_messages must replace the message attention",
    )?;
    ensure(
        !added.is_empty() && added.iter().all(|n| n.contains(".deepset.")),
        "deepset_messages adds unexpected parameters",
    )?;

    let (removed, added, delta) = diff(Variant::CrossAttentionAgg);
    ensure(
        removed.is_empty() && added.iter().all(|n| n.contains(".agg.")),
        "cross_attention touches more than the aggregator",
    )?;
    ensure(delta == -t * 4 * linear, "cross_attention parameter count")?;
    Ok(())
}
