//! Bug localization and repair on top of the encoder: a pointer head over
//! candidate nodes plus a learned NoBug element, a repair scorer over
//! rewrite candidates at the true location, and the training and
//! evaluation loops.

use std::rc::Rc;

use heat_code::extract::ExtractionConfig;
use heat_tensor::{Adam, ParamId, ParameterStore, Result as TResult, Scalar, Tape, Tensor, TensorError, Var};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;

use crate::bugs::{inject_bug, BugKind, BugSample, FAMILIES};
use crate::encoder::{GraphInput, Linear};
use crate::{corpus, rng_stream, DropoutRng, HeatConfig, HeatEncoder, Vocab};

/// Logit given to padding slots of the candidate grids.
const PAD_LOGIT: f64 = -1e4;

/// Generates `n` programs and injects one bug (or none) into each.
pub fn generate_samples(seed: u64, n: usize) -> Vec<BugSample> {
    let mut programs = rng_stream(seed, "programs");
    let mut injection = rng_stream(seed, "injection");
    let config = ExtractionConfig::default();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let src = corpus::program(&mut programs);
        if let Ok(s) = inject_bug(&src, &config, &mut injection) {
            out.push(s);
        }
    }
    out
}

/// Subtokens seen at least this often in the training graphs get their own row.
pub const MIN_COUNT: usize = 2;

/// Vocabulary over node labels, edge types and named qualifiers, plus every
/// operator a repair can produce regardless of its count.
pub fn build_vocab(samples: &[BugSample]) -> Vocab {
    let mut names: Vec<&str> = Vec::new();
    for s in samples {
        names.extend(s.graph.nodes.iter().map(|n| n.label.as_str()));
        names.extend(s.graph.edges.iter().map(|e| e.edge_type.as_str()));
        names.extend(s.graph.edges.iter().flat_map(|e| e.incidences.iter().map(|i| i.qualifier.as_str())));
    }
    let mut tokens = Vocab::build(names, MIN_COUNT).tokens()[1..].to_vec();
    for op in FAMILIES.iter().flat_map(|(_, ops)| ops.iter()) {
        for t in crate::subtokenize(op) {
            if !tokens.contains(&t) {
                tokens.push(t);
            }
        }
    }
    Vocab::from_tokens(tokens)
}

/// A sample resolved against a vocabulary.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub input: GraphInput,
    pub candidates: Vec<usize>,
    /// Subtoken ids of every rewrite text at every candidate.
    pub rewrites: Vec<Vec<Vec<usize>>>,
    pub location: usize,
    pub fix: Option<usize>,
    pub kind: Option<BugKind>,
}

impl Prepared {
    pub fn new(sample: &BugSample, vocab: &Vocab) -> Self {
        Prepared {
            input: GraphInput::new(&sample.graph, vocab),
            candidates: sample.candidates.clone(),
            rewrites: sample
                .rewrites
                .iter()
                .map(|rs| rs.iter().map(|r| vocab.encode(r)).collect())
                .collect(),
            location: sample.location_class(),
            fix: sample.fix,
            kind: sample.bug.as_ref().map(|b| b.kind),
        }
    }

    fn is_bug(&self) -> bool {
        self.location < self.candidates.len()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BugHeads {
    pub pointer: Linear,
    pub no_bug: ParamId,
    pub repair_hidden: Linear,
    pub repair_out: Linear,
}

#[derive(Clone, Debug)]
pub struct BugModel {
    pub encoder: HeatEncoder,
    pub heads: BugHeads,
}

/// Padded score grids of a minibatch.
pub struct Scores<'t, T: Scalar> {
    /// `[B, max candidates + 1]`; the last used column of each row is NoBug.
    pub location: Var<'t, T>,
    /// `[B_bug, max rewrites]` at the true location, one row per buggy sample.
    pub repair: Option<Var<'t, T>>,
}

impl BugModel {
    pub fn register<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParameterStore<T>,
        config: &HeatConfig,
        vocab_size: usize,
        rng: &mut R,
    ) -> TResult<Self> {
        let encoder = HeatEncoder::register(store, "encoder", config, vocab_size, rng)?;
        let d = config.dim;
        let heads = BugHeads {
            pointer: Linear::register(store, "bug.pointer", d, 1, true, rng)?,
            no_bug: store.add("bug.no_bug", Tensor::uniform(&[1, d], 1.0, rng))?,
            repair_hidden: Linear::register(store, "bug.repair.hidden", 2 * d, d, true, rng)?,
            repair_out: Linear::register(store, "bug.repair.out", d, 1, true, rng)?,
        };
        Ok(BugModel { encoder, heads })
    }

    pub fn scores<'t, T: Scalar>(
        &self,
        tape: &'t Tape<T>,
        store: &ParameterStore<T>,
        samples: &[&Prepared],
        rng: DropoutRng<'_>,
    ) -> TResult<Scores<'t, T>> {
        let inputs: Vec<&GraphInput> = samples.iter().map(|s| &s.input).collect();
        let batch = self.encoder.batch(&inputs).map_err(|e| TensorError::Invalid {
            op: "BugModel::scores",
            detail: e.to_string(),
        })?;
        let states = self.encoder.forward(tape, store, &batch, rng)?;
        let h = self.heads;

        let mut cand = Vec::new();
        for (s, &off) in samples.iter().zip(&batch.node_offsets) {
            cand.extend(s.candidates.iter().map(|&c| Some(off + c)));
        }
        let num_cand = cand.len();
        let cand_logits = h.pointer.apply(tape, store, states.nodes.gather_rows(Rc::new(cand))?)?;
        let no_bug = h.pointer.apply(tape, store, tape.param(store, h.no_bug))?;
        let pad = tape.constant(Tensor::full(&[1, 1], T::of(PAD_LOGIT)));
        let width = samples.iter().map(|s| s.candidates.len() + 1).max().unwrap_or(1);
        let mut grid = Vec::with_capacity(samples.len() * width);
        let mut start = 0;
        for s in samples {
            let c = s.candidates.len();
            grid.extend((0..width).map(|j| {
                Some(match j {
                    j if j < c => start + j,
                    j if j == c => num_cand,
                    _ => num_cand + 1,
                })
            }));
            start += c;
        }
        let location = tape
            .concat_rows(&[cand_logits, no_bug, pad])?
            .gather_rows(Rc::new(grid))?
            .reshape(&[samples.len(), width])?;

        let buggy: Vec<(usize, &Prepared)> = samples
            .iter()
            .enumerate()
            .filter(|(_, s)| s.is_bug())
            .map(|(i, s)| (i, *s))
            .collect();
        let repair = if buggy.is_empty() {
            None
        } else {
            let width = buggy.iter().map(|(_, s)| s.rewrites[s.location].len()).max().unwrap_or(1).max(1);
            let (mut loc_rows, mut tok, mut seg, mut grid) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
            for &(b, s) in &buggy {
                let rs = &s.rewrites[s.location];
                let base = loc_rows.len();
                for r in rs {
                    let row = loc_rows.len();
                    loc_rows.push(Some(batch.node_offsets[b] + s.candidates[s.location]));
                    tok.extend(r.iter().map(|&t| Some(t)));
                    seg.extend(std::iter::repeat_n(row, r.len()));
                }
                grid.extend((0..width).map(|j| if j < rs.len() { Some(base + j) } else { None }));
            }
            let n = loc_rows.len();
            let h_loc = states.nodes.gather_rows(Rc::new(loc_rows))?;
            let emb = tape
                .param(store, self.encoder.embed)
                .gather_rows(Rc::new(tok))?
                .segment_sum(Rc::new(seg), n)?;
            let hidden = h.repair_hidden.apply(tape, store, tape.concat_last(&[h_loc, emb])?)?.relu();
            let logits = h.repair_out.apply(tape, store, hidden)?;
            // pad column entries gather a zero row; shift them far down
            let pad_bias = Tensor::from_fn(&[grid.len(), 1], |i| if grid[i].is_some() { T::zero() } else { T::of(PAD_LOGIT) });
            let grid_len = grid.len();
            Some(
                logits
                    .gather_rows(Rc::new(grid))?
                    .add(tape.constant(pad_bias))?
                    .reshape(&[grid_len / width, width])?,
            )
        };
        Ok(Scores { location, repair })
    }

    /// Localization cross-entropy plus repair cross-entropy at the true
    /// location.
    pub fn loss<'t, T: Scalar>(
        &self,
        tape: &'t Tape<T>,
        store: &ParameterStore<T>,
        samples: &[&Prepared],
        rng: DropoutRng<'_>,
    ) -> TResult<(Var<'t, T>, Option<Var<'t, T>>)> {
        let scores = self.scores(tape, store, samples, rng)?;
        let targets: Vec<usize> = samples.iter().map(|s| s.location).collect();
        let loc = scores.location.cross_entropy(&targets)?;
        let repair = match scores.repair {
            None => None,
            Some(r) => {
                let fixes: Vec<usize> = samples
                    .iter()
                    .filter(|&s| s.is_bug())
                    .map(|s| s.fix.expect("bug has a fix"))
                    .collect();
                Some(r.cross_entropy(&fixes)?)
            }
        };
        Ok((loc, repair))
    }

    pub fn joint_loss<'t, T: Scalar>(
        &self,
        tape: &'t Tape<T>,
        store: &ParameterStore<T>,
        samples: &[&Prepared],
        rng: DropoutRng<'_>,
    ) -> TResult<Var<'t, T>> {
        let (loc, repair) = self.loss(tape, store, samples, rng)?;
        match repair {
            Some(r) => loc.add(r),
            None => Ok(loc),
        }
    }

    /// Predicted location class and, for buggy samples, the predicted
    /// rewrite at the true location.
    pub fn predict<T: Scalar>(&self, store: &ParameterStore<T>, samples: &[&Prepared]) -> TResult<Vec<Prediction>> {
        let tape = Tape::new();
        let scores = self.scores(&tape, store, samples, None)?;
        let loc = scores.location.value();
        let repair = scores.repair.map(|r| r.value());
        let mut out = Vec::with_capacity(samples.len());
        let mut r = 0;
        for (i, s) in samples.iter().enumerate() {
            let location = argmax(&loc.row(i)[..=s.candidates.len()]);
            let rewrite = if s.is_bug() {
                let n = s.rewrites[s.location].len();
                let row = &repair.as_ref().expect("repair scores").row(r)[..n];
                r += 1;
                Some(argmax(row))
            } else {
                None
            };
            out.push(Prediction { location, rewrite });
        }
        Ok(out)
    }
}

/// First index of the maximum.
fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Prediction {
    pub location: usize,
    pub rewrite: Option<usize>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct BugMetrics {
    pub joint: f64,
    pub loc: f64,
    pub repair: f64,
    pub samples: usize,
}

/// Accuracies from predictions. Repair is judged at the true location and
/// is vacuously correct for NoBug samples; joint needs both.
pub fn score_predictions(samples: &[&Prepared], predictions: &[Prediction]) -> BugMetrics {
    let (mut joint, mut loc, mut repair) = (0usize, 0usize, 0usize);
    for (s, p) in samples.iter().zip(predictions) {
        let l = p.location == s.location;
        let r = p.rewrite == s.fix;
        loc += l as usize;
        repair += r as usize;
        joint += (l && r) as usize;
    }
    let n = samples.len().max(1) as f64;
    BugMetrics {
        joint: joint as f64 / n,
        loc: loc as f64 / n,
        repair: repair as f64 / n,
        samples: samples.len(),
    }
}

pub fn evaluate<T: Scalar>(model: &BugModel, store: &ParameterStore<T>, samples: &[Prepared], batch_size: usize) -> TResult<BugMetrics> {
    let refs: Vec<&Prepared> = samples.iter().collect();
    let mut preds = Vec::with_capacity(refs.len());
    for chunk in refs.chunks(batch_size.max(1)) {
        preds.extend(model.predict(store, chunk)?);
    }
    Ok(score_predictions(&refs, &preds))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            epochs: 8,
            batch_size: 16,
            lr: 1e-3,
            seed: 0,
        }
    }
}

/// Per-epoch mean training loss.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFinite { epoch: usize, step: usize },
}

/// Adam over shuffled minibatches. Shuffling and dropout draw from their
/// own substreams of `options.seed`.
pub fn train<T: Scalar>(
    model: &BugModel,
    store: &mut ParameterStore<T>,
    samples: &[Prepared],
    options: &TrainOptions,
    mut on_epoch: impl FnMut(&EpochLog, &ParameterStore<T>),
) -> Result<Vec<EpochLog>, TrainError> {
    let mut shuffle = rng_stream(options.seed, "shuffle");
    let mut dropout = rng_stream(options.seed, "dropout");
    let mut adam = Adam::new(options.lr);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut logs = Vec::with_capacity(options.epochs);
    for epoch in 0..options.epochs {
        order.shuffle(&mut shuffle);
        let mut total = 0.0;
        let mut steps = 0;
        for chunk in order.chunks(options.batch_size.max(1)) {
            let batch: Vec<&Prepared> = chunk.iter().map(|&i| &samples[i]).collect();
            let tape = Tape::new();
            let loss = model.joint_loss(&tape, store, &batch, Some(&mut dropout))?;
            let value = loss.value().item().as_f64();
            if !value.is_finite() {
                return Err(TrainError::NonFinite { epoch, step: steps });
            }
            let grads = tape.backward(loss)?.into_params();
            adam.step(store, &grads);
            total += value;
            steps += 1;
        }
        let log = EpochLog {
            epoch,
            loss: total / steps.max(1) as f64,
        };
        on_epoch(&log, store);
        logs.push(log);
    }
    Ok(logs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_model() -> (BugModel, ParameterStore<f64>, Vec<Prepared>) {
        let samples = generate_samples(5, 6);
        let vocab = build_vocab(&samples);
        let mut config = HeatConfig::desk();
        config.dim = 8;
        config.heads = 2;
        config.ffn_dim = 16;
        let mut store = ParameterStore::new();
        let model = BugModel::register(&mut store, &config, vocab.len(), &mut rng_stream(5, "init")).unwrap();
        let prepared = samples.iter().map(|s| Prepared::new(s, &vocab)).collect();
        (model, store, prepared)
    }

    #[test]
    fn grids_have_expected_shapes() {
        let (model, store, prepared) = small_model();
        let refs: Vec<&Prepared> = prepared.iter().collect();
        let tape = Tape::new();
        let s = model.scores(&tape, &store, &refs, None).unwrap();
        let width = refs.iter().map(|p| p.candidates.len() + 1).max().unwrap();
        assert_eq!(s.location.shape(), [refs.len(), width]);
        let bugs = refs.iter().filter(|p| p.is_bug()).count();
        if bugs > 0 {
            assert_eq!(s.repair.unwrap().shape()[0], bugs);
        }
        // padded columns never win
        for (i, p) in refs.iter().enumerate() {
            let row = s.location.value();
            for j in p.candidates.len() + 1..width {
                assert!(row.row(i)[j] < -1e3);
            }
        }
    }

    #[test]
    fn metrics_bounds_and_joint() {
        let (model, store, prepared) = small_model();
        let m = evaluate(&model, &store, &prepared, 4).unwrap();
        for v in [m.joint, m.loc, m.repair] {
            assert!((0.0..=1.0).contains(&v));
        }
        assert!(m.joint <= m.loc.min(m.repair) + 1e-12);
    }

    #[test]
    fn no_bug_repair_is_vacuous() {
        let (_, _, prepared) = small_model();
        let refs: Vec<&Prepared> = prepared.iter().collect();
        let preds: Vec<Prediction> = refs
            .iter()
            .map(|p| Prediction {
                location: p.location,
                rewrite: p.fix,
            })
            .collect();
        let m = score_predictions(&refs, &preds);
        assert_eq!((m.joint, m.loc, m.repair), (1.0, 1.0, 1.0));
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax(&[1.0f64, 3.0, 3.0, 2.0]), 1);
        assert_eq!(argmax(&[0.0f64; 4]), 0);
    }
}
