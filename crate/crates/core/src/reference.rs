//! A plain-loop transformer encoder in double precision, independent of the
//! tape. It reads its weights from an encoder's parameter store and serves
//! as the oracle for the claim that a single sequence hyperedge reduces
//! HEAT to a standard transformer.

use heat_tensor::{MhaParams, ParamId, ParameterStore, Scalar};

use crate::encoder::{sinusoidal_position, HeatEncoder, LayerNormParams, MessageParams, LN_EPS};

type Matrix = Vec<Vec<f64>>;

fn param<T: Scalar>(store: &ParameterStore<T>, id: ParamId) -> (Vec<usize>, Vec<f64>) {
    let t = store.get(id);
    (t.shape().to_vec(), t.data().iter().map(|v| v.as_f64()).collect())
}

/// `x W + b` with `W` stored `[in, out]`.
fn affine<T: Scalar>(store: &ParameterStore<T>, w: ParamId, b: Option<ParamId>, x: &Matrix) -> Matrix {
    let (shape, w) = param(store, w);
    let (fin, fout) = (shape[0], shape[1]);
    let b = b.map(|b| param(store, b).1);
    x.iter()
        .map(|row| {
            (0..fout)
                .map(|j| {
                    let dot: f64 = (0..fin).map(|i| row[i] * w[i * fout + j]).sum();
                    dot + b.as_ref().map_or(0.0, |b| b[j])
                })
                .collect()
        })
        .collect()
}

fn layer_norm<T: Scalar>(store: &ParameterStore<T>, p: &LayerNormParams, x: &Matrix) -> Matrix {
    let g = param(store, p.gain).1;
    let b = param(store, p.bias).1;
    x.iter()
        .map(|row| {
            let n = row.len() as f64;
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            row.iter().enumerate().map(|(j, v)| (v - mean) * inv * g[j] + b[j]).collect()
        })
        .collect()
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (0.797_884_560_802_865_4 * (x + 0.044_715 * x * x * x)).tanh())
}

fn add(a: &Matrix, b: &Matrix) -> Matrix {
    a.iter()
        .zip(b)
        .map(|(r, s)| r.iter().zip(s).map(|(x, y)| x + y).collect())
        .collect()
}

/// Unmasked scaled dot-product attention of a sequence over itself.
pub fn self_attention<T: Scalar>(store: &ParameterStore<T>, p: &MhaParams, heads: usize, x: &Matrix) -> Matrix {
    let q = affine(store, p.wq, Some(p.bq), x);
    let k = affine(store, p.wk, Some(p.bk), x);
    let v = affine(store, p.wv, Some(p.bv), x);
    let (n, d) = (x.len(), x[0].len());
    let dh = d / heads;
    let mut context = vec![vec![0.0; d]; n];
    for h in 0..heads {
        let cols = h * dh..(h + 1) * dh;
        for i in 0..n {
            let scores: Vec<f64> = (0..n)
                .map(|j| cols.clone().map(|c| q[i][c] * k[j][c]).sum::<f64>() / (dh as f64).sqrt())
                .collect();
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
            let total: f64 = exps.iter().sum();
            for c in cols.clone() {
                context[i][c] = (0..n).map(|j| exps[j] / total * v[j][c]).sum();
            }
        }
    }
    affine(store, p.wo, Some(p.bo), &context)
}

/// Transformer encoder over `x` (one row per position). Each layer adds the
/// sinusoidal embedding of `positions` to its attention input, then
/// `q = LN(x + attn)` and `x' = LN(q + FFN(q))`, with the weights of the
/// encoder's node updates and message attention.
pub fn transformer_encoder<T: Scalar>(encoder: &HeatEncoder, store: &ParameterStore<T>, x: &Matrix, positions: &[usize]) -> Matrix {
    let d = encoder.config.dim;
    let pos: Matrix = positions.iter().map(|&p| sinusoidal_position(p, d).expect("even dim")).collect();
    let mut x = x.clone();
    for layer in &encoder.layers {
        let MessageParams::Attention(mha) = &layer.messages else {
            panic!("reference needs attention messages");
        };
        let input = if encoder.config.no_qualifiers { x.clone() } else { add(&x, &pos) };
        let attn = self_attention(store, mha, encoder.config.heads, &input);
        let q = layer_norm(store, &layer.node.ln1, &add(&x, &attn));
        x = match &layer.node.ffn {
            None => q,
            Some((ffn, ln2)) => {
                let hidden: Matrix = affine(store, ffn.inner.w, ffn.inner.b, &q)
                    .into_iter()
                    .map(|r| r.into_iter().map(gelu).collect())
                    .collect();
                let f = affine(store, ffn.outer.w, ffn.outer.b, &hidden);
                layer_norm(store, ln2, &add(&q, &f))
            }
        };
    }
    x
}

/// Outcome of comparing single-sequence-hyperedge HEAT with [`transformer_encoder`].
#[derive(Clone, Debug, serde::Serialize)]
pub struct DegenerationReport {
    pub cases: usize,
    pub max_abs_diff: f64,
}

/// Runs `cases` random inputs, each a graph whose only edge is one `Seq`
/// hyperedge over all nodes in a shuffled order, through an encoder in
/// precision `T` with the edge token dropped, and through the double-precision
/// reference encoder with the same weights. Reports the largest absolute
/// difference in final node states.
pub fn degeneration_check<T: Scalar>(seed: u64, cases: usize) -> Result<DegenerationReport, heat_tensor::TensorError> {
    use heat_graph::{Hypergraph, NodeKind};
    use heat_tensor::Tape;
    use rand::seq::SliceRandom;
    use rand::Rng;

    use crate::encoder::GraphInput;
    use crate::vocab::Vocab;

    let mut rng = crate::rng_stream(seed, "degeneration");
    let words: Vec<String> = (0..24).map(|i| format!("w{i}")).collect();
    let vocab = Vocab::from_tokens(words.iter().cloned());
    let mut max_abs_diff: f64 = 0.0;
    for case in 0..cases {
        let config = crate::HeatConfig {
            layers: 1 + case % 3,
            dim: 16,
            heads: [1, 2, 4][case % 3],
            ffn_dim: 32,
            dropout: 0.0,
            no_ffn: case % 4 == 3,
            static_edge_state: true,
            drop_edge_token: true,
            ..crate::HeatConfig::desk()
        };
        let mut store = ParameterStore::<T>::new();
        let encoder = HeatEncoder::register(&mut store, "encoder", &config, vocab.len(), &mut rng)?;
        let n = rng.gen_range(1..=12);
        let mut graph = Hypergraph::new();
        for _ in 0..n {
            let word = &words[rng.gen_range(0..words.len())];
            graph.add_node(word.clone(), NodeKind::Token);
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let incidences = order.iter().enumerate().map(|(p, &node)| (format!("p{}", p + 1), node));
        graph.add_edge("Seq", incidences);

        let input = GraphInput::new(&graph, &vocab);
        let batch = encoder.batch(&[&input]).map_err(|e| heat_tensor::TensorError::Invalid {
            op: "degeneration_check",
            detail: e.to_string(),
        })?;
        let tape = Tape::new();
        let init = encoder.init_states(&tape, &store, &batch)?.nodes.value();
        let heat = encoder.forward(&tape, &store, &batch, None)?.nodes.value();

        let d = config.dim;
        let x: Matrix = order.iter().map(|&v| init.row(v).iter().map(|a| a.as_f64()).collect()).collect();
        let positions: Vec<usize> = (1..=n).collect();
        let want = transformer_encoder(&encoder, &store, &x, &positions);
        for (p, &v) in order.iter().enumerate() {
            for j in 0..d {
                max_abs_diff = max_abs_diff.max((heat.row(v)[j].as_f64() - want[p][j]).abs());
            }
        }
    }
    Ok(DegenerationReport { cases, max_abs_diff })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_sequence_edge_is_a_transformer() {
        let report = degeneration_check::<f64>(3, 6).unwrap();
        assert!(report.max_abs_diff < 1e-9, "{report:?}");
        let report = degeneration_check::<f32>(3, 6).unwrap();
        assert!(report.max_abs_diff < 1e-5, "{report:?}");
    }
}
