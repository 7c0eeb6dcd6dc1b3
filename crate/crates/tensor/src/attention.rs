//! Multi-head scaled dot-product attention built from tape primitives.

use rand::Rng;

use crate::error::{Result, TensorError};
use crate::params::{ParamId, ParameterStore};
use crate::scalar::Scalar;
use crate::tape::{Mask, Tape, Var};
use crate::tensor::Tensor;

/// Projection parameters of one attention block (`x W + b` convention).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MhaParams {
    pub wq: ParamId,
    pub bq: ParamId,
    pub wk: ParamId,
    pub bk: ParamId,
    pub wv: ParamId,
    pub bv: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
}

impl MhaParams {
    /// Registers `{prefix}.wq` ... `{prefix}.bo` with fan-in uniform weights and zero biases.
    pub fn register<T: Scalar, R: Rng + ?Sized>(store: &mut ParameterStore<T>, prefix: &str, dim: usize, rng: &mut R) -> Result<Self> {
        let mut w = |s: &mut ParameterStore<T>, n: &str| s.add(format!("{prefix}.{n}"), Tensor::fan_in_uniform(&[dim, dim], rng));
        let wq = w(store, "wq")?;
        let wk = w(store, "wk")?;
        let wv = w(store, "wv")?;
        let wo = w(store, "wo")?;
        let mut b = |n: &str| store.add(format!("{prefix}.{n}"), Tensor::zeros(&[dim]));
        Ok(MhaParams {
            wq,
            bq: b("bq")?,
            wk,
            bk: b("bk")?,
            wv,
            bv: b("bv")?,
            wo,
            bo: b("bo")?,
        })
    }

    pub fn ids(&self) -> [ParamId; 8] {
        [self.wq, self.bq, self.wk, self.bk, self.wv, self.bv, self.wo, self.bo]
    }
}

/// Attention of `queries` `[B, Lq, d]` over `keys_values` `[B, Lk, d]`.
///
/// `mask` has shape `[B, Lq, Lk]`; a query row with every key masked yields
/// zero attention weights (its output is the output-projection bias).
/// Dropout, when an rng is given, applies to the attention weights.
#[allow(clippy::too_many_arguments)]
pub fn multihead_attention<'t, T: Scalar, R: Rng + ?Sized>(
    tape: &'t Tape<T>,
    store: &ParameterStore<T>,
    params: &MhaParams,
    queries: Var<'t, T>,
    keys_values: Var<'t, T>,
    mask: Option<&Mask<T>>,
    heads: usize,
    dropout: f64,
    rng: Option<&mut R>,
) -> Result<Var<'t, T>> {
    let qs = queries.shape();
    let ks = keys_values.shape();
    if qs.len() != 3 || ks.len() != 3 || qs[0] != ks[0] || qs[2] != ks[2] {
        return Err(TensorError::Shape {
            op: "multihead_attention",
            detail: format!("queries {qs:?} vs keys {ks:?}"),
        });
    }
    let dim = qs[2];
    if heads == 0 || !dim.is_multiple_of(heads) {
        return Err(TensorError::HeadMismatch { dim, heads });
    }
    let p = |id| tape.param(store, id);
    let q = queries.linear(p(params.wq), Some(p(params.bq)))?;
    let k = keys_values.linear(p(params.wk), Some(p(params.bk)))?;
    let v = keys_values.linear(p(params.wv), Some(p(params.bv)))?;
    let (q, k, v) = (q.split_heads(heads)?, k.split_heads(heads)?, v.split_heads(heads)?);
    let scale = 1.0 / ((dim / heads) as f64).sqrt();
    let scores = q.bmm_nt(k)?.scale(scale);
    let weights = scores.masked_softmax(mask)?.dropout(dropout, rng)?;
    let context = weights.bmm(v)?.merge_heads(heads)?;
    context.linear(p(params.wo), Some(p(params.bo)))
}
