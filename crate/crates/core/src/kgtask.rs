//! Link prediction over a qualified knowledge graph: the encoder runs over
//! the training graph, each query becomes the sequence
//! `[h_s + r_src, e_r, h_v1 + r_q1, ...]`, one transformer block mixes it,
//! and a linear layer over the state at the relation position scores every
//! entity.

use std::collections::{BTreeMap, BTreeSet};
use std::rc::Rc;

use heat_tensor::{multihead_attention, Adam, Mask, MhaParams, ParameterStore, Result as TResult, Scalar, Tape, Tensor, TensorError, Var};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;

use crate::encoder::{Ffn, GraphInput, LayerNormParams, Linear};
use crate::kg::{filtered_rank, metrics, KgDataset, QualifiedStatement, RankMetrics, SUBJECT_QUALIFIER};
use crate::{rng_stream, DropoutRng, HeatConfig, HeatEncoder, Vocab};

/// Label smoothing of the multi-label objective.
pub const LABEL_SMOOTHING: f64 = 0.1;

/// Vocabulary over entity and relation texts and the subject role.
pub fn build_vocab(ds: &KgDataset) -> Vocab {
    let mut names: Vec<&str> = ds.entities.iter().map(|e| e.text()).collect();
    names.extend(ds.relations.iter().map(|r| r.text()));
    names.extend([SUBJECT_QUALIFIER, crate::kg::OBJECT_QUALIFIER]);
    Vocab::build(names, 1)
}

/// A query resolved to entity rows and subtoken ids.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct EncodedQuery {
    pub subject: usize,
    pub relation: Vec<usize>,
    /// `(role subtokens, entity)`, sorted.
    pub qualifiers: Vec<(Vec<usize>, usize)>,
}

/// Graph, vocabulary and encoded queries of one dataset.
pub struct KgData {
    pub vocab: Vocab,
    pub graph: GraphInput,
    pub num_entities: usize,
    pub subject_role: Vec<usize>,
    /// Training queries with every training answer.
    pub train: Vec<(EncodedQuery, Vec<usize>)>,
    /// Evaluation queries: one per statement, with answer and filter set.
    pub valid: Vec<(EncodedQuery, usize, BTreeSet<usize>)>,
    pub test: Vec<(EncodedQuery, usize, BTreeSet<usize>)>,
}

impl KgData {
    pub fn new(ds: &KgDataset) -> Self {
        let vocab = build_vocab(ds);
        let index = ds.entity_index();
        let encode = |s: &QualifiedStatement| EncodedQuery {
            subject: index[s.subject.as_str()],
            relation: vocab.encode(&ds.relation_label(&s.relation)),
            qualifiers: {
                let mut q: Vec<(Vec<usize>, usize)> = s
                    .qualifiers
                    .iter()
                    .map(|(r, v)| (vocab.encode(&ds.relation_label(r)), index[v.as_str()]))
                    .collect();
                q.sort();
                q
            },
        };
        let mut train: BTreeMap<EncodedQuery, BTreeSet<usize>> = BTreeMap::new();
        for s in &ds.train {
            train.entry(encode(s)).or_default().insert(index[s.object.as_str()]);
        }
        let known = ds.known_answers();
        let eval = |stmts: &[QualifiedStatement]| {
            stmts
                .iter()
                .map(|s| {
                    let answer = index[s.object.as_str()];
                    let filter = known[&s.query()]
                        .iter()
                        .map(|o| index[o.as_str()])
                        .filter(|&o| o != answer)
                        .collect();
                    (encode(s), answer, filter)
                })
                .collect()
        };
        KgData {
            graph: GraphInput::new(&ds.build_graph("train"), &vocab),
            num_entities: ds.entities.len(),
            subject_role: vocab.encode(SUBJECT_QUALIFIER),
            train: train.into_iter().map(|(q, a)| (q, a.into_iter().collect())).collect(),
            valid: eval(&ds.valid),
            test: eval(&ds.test),
            vocab,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ScorerBlock {
    pub attention: MhaParams,
    pub ln1: LayerNormParams,
    pub ffn: Ffn,
    pub ln2: LayerNormParams,
}

#[derive(Clone, Debug)]
pub struct KgModel {
    pub encoder: HeatEncoder,
    pub block: ScorerBlock,
    pub output: Linear,
    pub num_entities: usize,
}

impl KgModel {
    pub fn register<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParameterStore<T>,
        config: &HeatConfig,
        vocab_size: usize,
        num_entities: usize,
        rng: &mut R,
    ) -> TResult<Self> {
        let encoder = HeatEncoder::register(store, "encoder", config, vocab_size, rng)?;
        let d = config.dim;
        let block = ScorerBlock {
            attention: MhaParams::register(store, "kg.block.attn", d, rng)?,
            ln1: LayerNormParams::register(store, "kg.block.ln1", d)?,
            ffn: Ffn {
                inner: Linear::register(store, "kg.block.ffn.inner", d, config.ffn_dim, true, rng)?,
                outer: Linear::register(store, "kg.block.ffn.outer", config.ffn_dim, d, true, rng)?,
            },
            ln2: LayerNormParams::register(store, "kg.block.ln2", d)?,
        };
        let output = Linear::register(store, "kg.output", d, num_entities, true, rng)?;
        Ok(KgModel {
            encoder,
            block,
            output,
            num_entities,
        })
    }

    /// Entity logits `[B, entities]` for `queries`.
    pub fn scores<'t, T: Scalar>(
        &self,
        tape: &'t Tape<T>,
        store: &ParameterStore<T>,
        data: &KgData,
        queries: &[&EncodedQuery],
        mut rng: DropoutRng<'_>,
    ) -> TResult<Var<'t, T>> {
        let batch = self.encoder.batch(&[&data.graph]).map_err(|e| TensorError::Invalid {
            op: "KgModel::scores",
            detail: e.to_string(),
        })?;
        let states = self.encoder.forward(tape, store, &batch, rng.as_deref_mut())?;
        let config = &self.encoder.config;
        let entities = self.num_entities;
        let len = 2 + queries.iter().map(|q| q.qualifiers.len()).max().unwrap_or(0);
        let b = queries.len();

        // pooled subtoken embeddings: relation names first, then roles
        let (mut tok, mut seg, mut pooled) = (Vec::new(), Vec::new(), 0);
        let mut push = |ids: &[usize]| {
            tok.extend(ids.iter().map(|&t| Some(t)));
            seg.extend(std::iter::repeat_n(pooled, ids.len()));
            pooled += 1;
            pooled - 1
        };
        let mut content = vec![None; b * len];
        let mut role = vec![None; b * len];
        for (i, q) in queries.iter().enumerate() {
            let row = i * len;
            content[row] = Some(q.subject);
            role[row] = Some(push(&data.subject_role));
            content[row + 1] = Some(entities + push(&q.relation));
            for (j, (r, v)) in q.qualifiers.iter().enumerate() {
                content[row + 2 + j] = Some(*v);
                role[row + 2 + j] = Some(push(r));
            }
        }
        let embed = tape.param(store, self.encoder.embed);
        let names = embed.gather_rows(Rc::new(tok))?.segment_sum(Rc::new(seg), pooled)?;
        // relation rows index past the entity states into `names`
        let mut x = tape.concat_rows(&[states.nodes, names])?.gather_rows(Rc::new(content))?;
        if !config.no_qualifiers {
            x = x.add(names.gather_rows(Rc::new(role))?)?;
        }
        let x = x.reshape(&[b, len, config.dim])?;
        let widths: Vec<usize> = queries.iter().map(|q| 2 + q.qualifiers.len()).collect();
        let mask = Mask::from_fn(b, len, len, |i, _, k| k < widths[i]);
        let attn = multihead_attention(
            tape,
            store,
            &self.block.attention,
            x,
            x,
            Some(&mask),
            config.heads,
            config.dropout,
            rng.as_deref_mut(),
        )?;
        let q = self.block.ln1.apply(tape, store, x.add(attn)?)?;
        let f = self.block.ffn.apply(tape, store, q, config.dropout, rng)?;
        let y = self.block.ln2.apply(tape, store, q.add(f)?)?;
        let readout: Vec<Option<usize>> = (0..b).map(|i| Some(i * len + 1)).collect();
        let h = y.reshape(&[b * len, config.dim])?.gather_rows(Rc::new(readout))?;
        self.output.apply(tape, store, h)
    }

    /// Smoothed binary cross-entropy of every entity against the set of
    /// known answers.
    pub fn loss<'t, T: Scalar>(
        &self,
        tape: &'t Tape<T>,
        store: &ParameterStore<T>,
        data: &KgData,
        batch: &[&(EncodedQuery, Vec<usize>)],
        rng: DropoutRng<'_>,
    ) -> TResult<Var<'t, T>> {
        let queries: Vec<&EncodedQuery> = batch.iter().map(|(q, _)| q).collect();
        let logits = self.scores(tape, store, data, &queries, rng)?;
        let mut labels = Tensor::zeros(&[batch.len(), self.num_entities]);
        for (i, (_, answers)) in batch.iter().enumerate() {
            for &a in answers {
                labels.row_mut(i)[a] = T::one();
            }
        }
        logits.bce_label_smoothing(&labels, LABEL_SMOOTHING)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KgTrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for KgTrainOptions {
    fn default() -> Self {
        KgTrainOptions {
            epochs: 60,
            batch_size: 32,
            lr: 1e-3,
            seed: 0,
        }
    }
}

/// Adam over shuffled query batches; returns the mean loss of each epoch.
pub fn train<T: Scalar>(
    model: &KgModel,
    store: &mut ParameterStore<T>,
    data: &KgData,
    options: &KgTrainOptions,
    mut on_epoch: impl FnMut(usize, f64, &ParameterStore<T>),
) -> Result<Vec<f64>, crate::bugtask::TrainError> {
    let mut shuffle = rng_stream(options.seed, "shuffle");
    let mut dropout = rng_stream(options.seed, "dropout");
    let mut adam = Adam::new(options.lr);
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut losses = Vec::with_capacity(options.epochs);
    for epoch in 0..options.epochs {
        order.shuffle(&mut shuffle);
        let (mut total, mut steps) = (0.0, 0);
        for chunk in order.chunks(options.batch_size.max(1)) {
            let batch: Vec<&(EncodedQuery, Vec<usize>)> = chunk.iter().map(|&i| &data.train[i]).collect();
            let tape = Tape::new();
            let loss = model.loss(&tape, store, data, &batch, Some(&mut dropout))?;
            let value = loss.value().item().as_f64();
            if !value.is_finite() {
                return Err(crate::bugtask::TrainError::NonFinite { epoch, step: steps });
            }
            let grads = tape.backward(loss)?.into_params();
            adam.step(store, &grads);
            total += value;
            steps += 1;
        }
        let mean = total / steps.max(1) as f64;
        on_epoch(epoch, mean, store);
        losses.push(mean);
    }
    Ok(losses)
}

/// Filtered ranking metrics over `queries`.
pub fn evaluate<T: Scalar>(
    model: &KgModel,
    store: &ParameterStore<T>,
    data: &KgData,
    queries: &[(EncodedQuery, usize, BTreeSet<usize>)],
    batch_size: usize,
) -> TResult<RankMetrics> {
    let mut ranks = Vec::with_capacity(queries.len());
    for chunk in queries.chunks(batch_size.max(1)) {
        let tape = Tape::new();
        let qs: Vec<&EncodedQuery> = chunk.iter().map(|(q, _, _)| q).collect();
        let scores = model.scores(&tape, store, data, &qs, None)?.value();
        for (i, (_, answer, filter)) in chunk.iter().enumerate() {
            let row: Vec<f64> = scores.row(i).iter().map(|v| v.as_f64()).collect();
            ranks.push(filtered_rank(&row, *answer, filter));
        }
    }
    Ok(metrics(&ranks))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{synthetic, SyntheticSpec};

    fn tiny() -> (KgModel, ParameterStore<f64>, KgData) {
        let ds = synthetic(
            &SyntheticSpec {
                entities: 24,
                pool: 8,
                relations: 2,
                per_key: 3,
                test_fraction: 0.3,
            },
            &mut rng_stream(2, "kg"),
        );
        let data = KgData::new(&ds);
        let mut config = HeatConfig::desk();
        config.layers = 1;
        config.dim = 8;
        config.heads = 2;
        config.ffn_dim = 16;
        let mut store = ParameterStore::new();
        let model = KgModel::register(&mut store, &config, data.vocab.len(), data.num_entities, &mut rng_stream(2, "init")).unwrap();
        (model, store, data)
    }

    #[test]
    fn scores_cover_every_entity() {
        let (model, store, data) = tiny();
        let tape = Tape::new();
        let qs: Vec<&EncodedQuery> = data.train.iter().take(5).map(|(q, _)| q).collect();
        let s = model.scores(&tape, &store, &data, &qs, None).unwrap();
        assert_eq!(s.shape(), [5, 24]);
        assert!(s.value().all_finite());
    }

    #[test]
    fn training_lowers_the_loss() {
        let (model, mut store, data) = tiny();
        let options = KgTrainOptions {
            epochs: 15,
            batch_size: 16,
            lr: 1e-2,
            seed: 3,
        };
        let losses = train(&model, &mut store, &data, &options, |_, _, _| {}).unwrap();
        assert!(losses.last().unwrap() < &losses[0]);
        let m = evaluate(&model, &store, &data, &data.test, 8).unwrap();
        assert!(m.mrr > 0.0 && m.mrr <= 1.0 && m.hits1 <= m.hits10);
    }
}
