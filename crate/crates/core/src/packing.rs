//! Packing of variable-length attention sequences into fixed-width rows.
//!
//! Each hyperedge contributes one sequence (its edge-state slot plus one
//! slot per incidence). Short sequences share a row of one of a few allowed
//! widths and are kept apart by a block-diagonal attention mask, so all rows
//! of one width run as a single batched attention call.

use std::rc::Rc;

use heat_tensor::{Mask, MhaParams, ParameterStore, Result as TResult, Scalar, Tape, Var};
use thiserror::Error;

use crate::DropoutRng;

pub const DEFAULT_WIDTHS: [usize; 5] = [16, 64, 256, 768, 1024];

/// Largest instance the exhaustive oracle accepts.
pub const BRUTEFORCE_MAX_ITEMS: usize = 8;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PackError {
    #[error("invalid width set: {0}")]
    InvalidSpec(String),
    #[error("sequence {item} has length {len}, above the largest width {max}")]
    TooWide { item: usize, len: usize, max: usize },
    #[error("sequence {item} is empty")]
    Empty { item: usize },
    #[error("{count} sequences exceed the exhaustive search limit of {max}")]
    TooManyItems { count: usize, max: usize },
    #[error("inconsistent packing: {0}")]
    Inconsistent(String),
}

/// The allowed row widths, strictly increasing.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MicrobatchSpec {
    widths: Vec<usize>,
}

impl Default for MicrobatchSpec {
    fn default() -> Self {
        MicrobatchSpec {
            widths: DEFAULT_WIDTHS.to_vec(),
        }
    }
}

impl MicrobatchSpec {
    pub fn new(widths: Vec<usize>) -> Result<Self, PackError> {
        if widths.is_empty() || widths[0] == 0 || widths.windows(2).any(|w| w[0] >= w[1]) {
            return Err(PackError::InvalidSpec(format!(
                "{widths:?} must be positive and strictly increasing"
            )));
        }
        Ok(MicrobatchSpec { widths })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn max_width(&self) -> usize {
        *self.widths.last().expect("non-empty")
    }

    pub fn smallest_fitting(&self, len: usize) -> Option<usize> {
        self.widths.iter().copied().find(|&w| w >= len)
    }

    fn check(&self, lengths: &[usize]) -> Result<(), PackError> {
        for (item, &len) in lengths.iter().enumerate() {
            if len == 0 {
                return Err(PackError::Empty { item });
            }
            if len > self.max_width() {
                return Err(PackError::TooWide {
                    item,
                    len,
                    max: self.max_width(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Segment {
    pub item: usize,
    pub offset: usize,
    pub len: usize,
}

/// One packed row: segments laid out contiguously from offset 0.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Bucket {
    pub width: usize,
    pub segments: Vec<Segment>,
}

impl Bucket {
    pub fn new(width: usize) -> Self {
        Bucket {
            width,
            segments: Vec::new(),
        }
    }

    pub fn used(&self) -> usize {
        self.segments.iter().map(|s| s.len).sum()
    }

    pub fn remaining(&self) -> usize {
        self.width - self.used()
    }

    pub fn push(&mut self, item: usize, len: usize) {
        debug_assert!(len <= self.remaining());
        let offset = self.used();
        self.segments.push(Segment { item, offset, len });
    }
}

/// First-fit decreasing: longest sequences first (ties by index), each into
/// the first open bucket with room, else into a new bucket of the smallest
/// width that fits.
pub fn greedy_pack(lengths: &[usize], spec: &MicrobatchSpec) -> Result<Vec<Bucket>, PackError> {
    spec.check(lengths)?;
    let mut order: Vec<usize> = (0..lengths.len()).collect();
    order.sort_by(|&a, &b| lengths[b].cmp(&lengths[a]).then(a.cmp(&b)));
    let mut buckets: Vec<Bucket> = Vec::new();
    for item in order {
        let len = lengths[item];
        match buckets.iter_mut().find(|b| b.remaining() >= len) {
            Some(b) => b.push(item, len),
            None => {
                let mut b = Bucket::new(spec.smallest_fitting(len).expect("checked"));
                b.push(item, len);
                buckets.push(b);
            }
        }
    }
    Ok(buckets)
}

/// Quadratic waste: `sum L_j^2` over buckets minus `sum l_i^2` over sequences.
pub fn packing_cost(buckets: &[Bucket]) -> u64 {
    let sq = |x: usize| (x as u64) * (x as u64);
    let total: u64 = buckets.iter().map(|b| sq(b.width)).sum();
    let used: u64 = buckets.iter().flat_map(|b| &b.segments).map(|s| sq(s.len)).sum();
    total - used
}

/// Exact minimum of [`packing_cost`] by enumerating every partition of the
/// sequences into buckets; each bucket takes the smallest width that fits.
pub fn optimal_pack_bruteforce(lengths: &[usize], spec: &MicrobatchSpec) -> Result<(u64, Vec<Bucket>), PackError> {
    if lengths.len() > BRUTEFORCE_MAX_ITEMS {
        return Err(PackError::TooManyItems {
            count: lengths.len(),
            max: BRUTEFORCE_MAX_ITEMS,
        });
    }
    spec.check(lengths)?;
    let sq = |x: usize| (x as u64) * (x as u64);
    let used: u64 = lengths.iter().map(|&l| sq(l)).sum();

    // Restricted growth strings enumerate set partitions without repeats.
    let n = lengths.len();
    let mut block = vec![0usize; n];
    let mut best: Option<(u64, Vec<usize>)> = None;
    fn rec(
        i: usize,
        blocks: usize,
        block: &mut Vec<usize>,
        lengths: &[usize],
        spec: &MicrobatchSpec,
        best: &mut Option<(u64, Vec<usize>)>,
    ) {
        if i == lengths.len() {
            let mut sums = vec![0usize; blocks];
            for (k, &b) in block.iter().enumerate() {
                sums[b] += lengths[k];
            }
            let mut cost = 0u64;
            for s in sums {
                match spec.smallest_fitting(s) {
                    Some(w) => cost += (w as u64) * (w as u64),
                    None => return,
                }
            }
            if best.as_ref().is_none_or(|(c, _)| cost < *c) {
                *best = Some((cost, block.clone()));
            }
            return;
        }
        for b in 0..=blocks {
            block[i] = b;
            rec(i + 1, blocks.max(b + 1), block, lengths, spec, best);
        }
    }
    rec(0, 0, &mut block, lengths, spec, &mut best);
    let (total, assignment) = best.unwrap_or((0, Vec::new()));
    let blocks = assignment.iter().map(|&b| b + 1).max().unwrap_or(0);
    let mut buckets = Vec::with_capacity(blocks);
    for b in 0..blocks {
        let members: Vec<usize> = (0..n).filter(|&k| assignment[k] == b).collect();
        let sum = members.iter().map(|&k| lengths[k]).sum();
        let mut bucket = Bucket::new(spec.smallest_fitting(sum).expect("feasible"));
        for k in members {
            bucket.push(k, lengths[k]);
        }
        buckets.push(bucket);
    }
    Ok((total - used, buckets))
}

/// All buckets of one width, run as one attention batch `[rows, width, d]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Microbatch {
    pub width: usize,
    pub rows: Vec<Bucket>,
}

/// A packing plan with its layout maps.
///
/// Sequences are addressed in "compact" order: sequence `i` occupies rows
/// `offset(i)..offset(i) + len(i)` of a `[total_len, d]` matrix. Packed slots
/// are numbered microbatch by microbatch, row by row.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PackedBatch {
    lengths: Vec<usize>,
    offsets: Vec<usize>,
    pub microbatches: Vec<Microbatch>,
    slot_base: Vec<usize>,
    slot_of_item: Vec<usize>,
    reverse: Vec<Option<(usize, usize)>>,
}

impl PackedBatch {
    pub fn pack(lengths: &[usize], spec: &MicrobatchSpec) -> Result<Self, PackError> {
        Self::build(lengths, greedy_pack(lengths, spec)?)
    }

    /// Checks that `buckets` place every sequence exactly once without
    /// overflow and derives the layout maps.
    pub fn build(lengths: &[usize], buckets: Vec<Bucket>) -> Result<Self, PackError> {
        let bad = |m: String| Err(PackError::Inconsistent(m));
        let mut placed = vec![false; lengths.len()];
        for b in &buckets {
            let mut next = 0;
            for s in &b.segments {
                if s.item >= lengths.len() || s.len != lengths[s.item] || s.offset != next {
                    return bad(format!("segment {s:?} in width-{} bucket", b.width));
                }
                if std::mem::replace(&mut placed[s.item], true) {
                    return bad(format!("sequence {} placed twice", s.item));
                }
                next += s.len;
            }
            if next > b.width {
                return bad(format!("bucket of width {} holds {next}", b.width));
            }
        }
        if let Some(item) = placed.iter().position(|p| !p) {
            return bad(format!("sequence {item} not placed"));
        }

        let mut widths: Vec<usize> = buckets.iter().map(|b| b.width).collect();
        widths.sort_unstable();
        widths.dedup();
        let mut microbatches: Vec<Microbatch> = widths.iter().map(|&width| Microbatch { width, rows: Vec::new() }).collect();
        for b in buckets {
            let k = widths.binary_search(&b.width).expect("listed");
            microbatches[k].rows.push(b);
        }

        let mut offsets = Vec::with_capacity(lengths.len());
        let mut acc = 0;
        for &l in lengths {
            offsets.push(acc);
            acc += l;
        }
        let mut slot_base = Vec::with_capacity(microbatches.len());
        let mut slot_of_item = vec![0; lengths.len()];
        let mut reverse = Vec::new();
        for mb in &microbatches {
            slot_base.push(reverse.len());
            for row in &mb.rows {
                let start = reverse.len();
                reverse.resize(start + mb.width, None);
                for s in &row.segments {
                    slot_of_item[s.item] = start + s.offset;
                    for p in 0..s.len {
                        reverse[start + s.offset + p] = Some((s.item, p));
                    }
                }
            }
        }
        Ok(PackedBatch {
            lengths: lengths.to_vec(),
            offsets,
            microbatches,
            slot_base,
            slot_of_item,
            reverse,
        })
    }

    pub fn lengths(&self) -> &[usize] {
        &self.lengths
    }

    /// Rows of the compact layout.
    pub fn total_len(&self) -> usize {
        self.lengths.iter().sum()
    }

    /// First compact row of sequence `item`.
    pub fn offset(&self, item: usize) -> usize {
        self.offsets[item]
    }

    /// Packed positions including padding.
    pub fn num_slots(&self) -> usize {
        self.reverse.len()
    }

    pub fn slot(&self, item: usize, pos: usize) -> usize {
        assert!(pos < self.lengths[item]);
        self.slot_of_item[item] + pos
    }

    /// `(sequence, position)` at a packed slot; `None` for padding.
    pub fn reverse(&self, slot: usize) -> Option<(usize, usize)> {
        self.reverse[slot]
    }

    pub fn buckets(&self) -> impl Iterator<Item = &Bucket> {
        self.microbatches.iter().flat_map(|m| &m.rows)
    }

    pub fn cost(&self) -> u64 {
        packing_cost(&self.buckets().cloned().collect::<Vec<_>>())
    }

    /// Block-diagonal mask of microbatch `mb`: a position sees exactly the
    /// positions of its own segment; padding sees nothing.
    pub fn mask<T: Scalar>(&self, mb: usize) -> Mask<T> {
        let m = &self.microbatches[mb];
        let base = self.slot_base[mb];
        let seg = |r: usize, c: usize| self.reverse[base + r * m.width + c].map(|(item, _)| item);
        Mask::from_fn(
            m.rows.len(),
            m.width,
            m.width,
            |r, q, k| matches!((seg(r, q), seg(r, k)), (Some(a), Some(b)) if a == b),
        )
    }

    /// For each slot of microbatch `mb`, the compact row it holds.
    pub fn gather_index(&self, mb: usize) -> Vec<Option<usize>> {
        let m = &self.microbatches[mb];
        let base = self.slot_base[mb];
        (base..base + m.rows.len() * m.width)
            .map(|s| self.reverse[s].map(|(item, p)| self.offsets[item] + p))
            .collect()
    }

    /// For each compact row, its slot in the concatenation of all
    /// microbatches.
    pub fn scatter_index(&self) -> Vec<Option<usize>> {
        (0..self.lengths.len())
            .flat_map(|i| (0..self.lengths[i]).map(move |p| (i, p)))
            .map(|(i, p)| Some(self.slot(i, p)))
            .collect()
    }

    /// Lays compact rows `[total_len, d]` out as one `[rows, width, d]`
    /// tensor per microbatch.
    pub fn pack_rows<'t, T: Scalar>(&self, compact: Var<'t, T>) -> TResult<Vec<Var<'t, T>>> {
        let d = compact.shape()[1];
        (0..self.microbatches.len())
            .map(|k| {
                let m = &self.microbatches[k];
                compact
                    .gather_rows(Rc::new(self.gather_index(k)))?
                    .reshape(&[m.rows.len(), m.width, d])
            })
            .collect()
    }

    /// Inverse of [`PackedBatch::pack_rows`]; padding slots are dropped.
    pub fn unpack_rows<'t, T: Scalar>(&self, tape: &'t Tape<T>, packed: &[Var<'t, T>]) -> TResult<Var<'t, T>> {
        let flat: Vec<Var<'t, T>> = packed
            .iter()
            .map(|p| {
                let s = p.shape();
                p.reshape(&[s[0] * s[1], s[2]])
            })
            .collect::<TResult<_>>()?;
        tape.concat_rows(&flat)?.gather_rows(Rc::new(self.scatter_index()))
    }
}

/// Self-attention of every sequence over itself, computed on packed rows.
///
/// Projections are row-wise and run on the compact rows; only the score,
/// softmax and weighted-sum stages use the packed layout. The result equals
/// running [`heat_tensor::multihead_attention`] on each sequence separately.
#[allow(clippy::too_many_arguments)]
pub fn packed_self_attention<'t, T: Scalar>(
    tape: &'t Tape<T>,
    store: &ParameterStore<T>,
    params: &MhaParams,
    compact: Var<'t, T>,
    packed: &PackedBatch,
    heads: usize,
    dropout: f64,
    mut rng: DropoutRng<'_>,
) -> TResult<Var<'t, T>> {
    let d = compact.shape()[1];
    if heads == 0 || !d.is_multiple_of(heads) {
        return Err(heat_tensor::TensorError::HeadMismatch { dim: d, heads });
    }
    let p = |id| tape.param(store, id);
    let q = compact.linear(p(params.wq), Some(p(params.bq)))?;
    let k = compact.linear(p(params.wk), Some(p(params.bk)))?;
    let v = compact.linear(p(params.wv), Some(p(params.bv)))?;
    let (qs, ks, vs) = (packed.pack_rows(q)?, packed.pack_rows(k)?, packed.pack_rows(v)?);
    let scale = 1.0 / ((d / heads) as f64).sqrt();
    let mut contexts = Vec::with_capacity(qs.len());
    for mb in 0..qs.len() {
        let mask = packed.mask::<T>(mb);
        let (q, k, v) = (qs[mb].split_heads(heads)?, ks[mb].split_heads(heads)?, vs[mb].split_heads(heads)?);
        let weights = q
            .bmm_nt(k)?
            .scale(scale)
            .masked_softmax(Some(&mask))?
            .dropout(dropout, rng.as_deref_mut())?;
        contexts.push(weights.bmm(v)?.merge_heads(heads)?);
    }
    let context = packed.unpack_rows(tape, &contexts)?;
    context.linear(p(params.wo), Some(p(params.bo)))
}
