//! Reverse-mode tape.
//!
//! A [`Tape`] records every operation applied to [`Var`] handles. Values are
//! computed eagerly; [`Tape::backward`] walks the record in reverse and returns
//! gradients for parameters and for leaves created with [`Tape::variable`].
//! A tape is single-threaded; build one per forward pass.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use rand::Rng;

use crate::error::{shape_err, Result, TensorError};
use crate::kernels::{gemm_nn, gemm_nt, gemm_tn};
use crate::params::{Gradients, ParamId, ParameterStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const GELU_C: f64 = 0.797_884_560_802_865_4;
const GELU_A: f64 = 0.044_715;

/// Additive attention mask of shape `[batch, queries, keys]`.
///
/// Entries are `0` (attend) or `-inf` (blocked). Scores with a leading
/// extent that is a multiple of `batch` reuse each mask block for that many
/// consecutive score blocks, which matches the layout of [`Var::split_heads`].
#[derive(Clone, Debug, PartialEq)]
pub struct Mask<T> {
    bias: Tensor<T>,
}

impl<T: Scalar> Mask<T> {
    pub fn from_fn(batch: usize, queries: usize, keys: usize, allowed: impl Fn(usize, usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(batch * queries * keys);
        for b in 0..batch {
            for q in 0..queries {
                for k in 0..keys {
                    data.push(if allowed(b, q, k) { T::zero() } else { T::neg_infinity() });
                }
            }
        }
        Mask {
            bias: Tensor::new(vec![batch, queries, keys], data).expect("mask shape"),
        }
    }

    pub fn from_bias(bias: Tensor<T>) -> Result<Self> {
        if bias.rank() != 3 {
            return Err(shape_err("mask", format!("expected rank 3, got {:?}", bias.shape())));
        }
        Ok(Mask { bias })
    }

    pub fn bias(&self) -> &Tensor<T> {
        &self.bias
    }

    pub fn batch(&self) -> usize {
        self.bias.shape()[0]
    }

    pub fn allowed(&self, b: usize, q: usize, k: usize) -> bool {
        let s = self.bias.shape();
        self.bias.data()[(b * s[1] + q) * s[2] + k] == T::zero()
    }
}

enum Op<T> {
    Leaf,
    Param(ParamId),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    Scale(usize, T),
    MatMul(usize, usize),
    Bmm {
        a: usize,
        b: usize,
        trans_b: bool,
    },
    Relu(usize),
    Gelu(usize),
    Dropout {
        x: usize,
        keep: Vec<T>,
    },
    LayerNorm {
        x: usize,
        gain: usize,
        bias: usize,
        normed: Vec<T>,
        rstd: Vec<T>,
    },
    MaskedSoftmax(usize),
    ConcatLast(Vec<usize>),
    ConcatRows(Vec<usize>),
    GatherRows {
        x: usize,
        index: Rc<Vec<Option<usize>>>,
    },
    SegmentMax {
        x: usize,
        argmax: Vec<Option<usize>>,
    },
    SegmentSum {
        x: usize,
        segments: Rc<Vec<usize>>,
    },
    SplitHeads {
        x: usize,
        heads: usize,
    },
    MergeHeads {
        x: usize,
        heads: usize,
    },
    Reshape(usize),
    Sum(usize),
    Mean(usize),
    CrossEntropy {
        logits: usize,
        targets: Vec<usize>,
        probs: Vec<T>,
    },
    Bce {
        logits: usize,
        targets: Vec<T>,
    },
}

struct Node<T> {
    value: Rc<Tensor<T>>,
    op: Op<T>,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape<T: Scalar> {
    nodes: RefCell<Vec<Node<T>>>,
    params: RefCell<HashMap<ParamId, usize>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T: Scalar> {
    tape: &'t Tape<T>,
    idx: usize,
}

impl<T: Scalar> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var({}, {:?})", self.idx, self.shape())
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            params: RefCell::new(HashMap::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            needs_grad,
        });
        Var {
            tape: self,
            idx: nodes.len() - 1,
        }
    }

    fn value(&self, idx: usize) -> Rc<Tensor<T>> {
        Rc::clone(&self.nodes.borrow()[idx].value)
    }

    fn needs(&self, idx: usize) -> bool {
        self.nodes.borrow()[idx].needs_grad
    }

    /// A constant leaf; no gradient flows into it.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf whose gradient is reported by [`Backprop::wrt`].
    pub fn variable(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf, true)
    }

    /// Binds a stored parameter. Repeated calls return the same node.
    pub fn param(&self, store: &ParameterStore<T>, id: ParamId) -> Var<'_, T> {
        if let Some(&idx) = self.params.borrow().get(&id) {
            return Var { tape: self, idx };
        }
        let var = self.push(store.get(id).clone(), Op::Param(id), true);
        self.params.borrow_mut().insert(id, var.idx);
        var
    }

    pub fn concat_last(&self, parts: &[Var<'_, T>]) -> Result<Var<'_, T>> {
        let first = parts.first().ok_or_else(|| shape_err("concat_last", "no inputs"))?.value();
        let lead = &first.shape()[..first.rank().saturating_sub(1)];
        let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
        for v in &values {
            if &v.shape()[..v.rank().saturating_sub(1)] != lead {
                return Err(shape_err("concat_last", format!("{:?} vs {:?}", first.shape(), v.shape())));
            }
        }
        let widths: Vec<usize> = values.iter().map(|v| v.last_dim()).collect();
        let total: usize = widths.iter().sum();
        let rows = first.rows();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for v in &values {
                data.extend_from_slice(v.row(r));
            }
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        let needs = parts.iter().any(|p| self.needs(p.idx));
        Ok(self.push(
            Tensor::new(shape, data)?,
            Op::ConcatLast(parts.iter().map(|p| p.idx).collect()),
            needs,
        ))
    }

    /// Stacks inputs along the first axis; trailing extents must agree.
    pub fn concat_rows(&self, parts: &[Var<'_, T>]) -> Result<Var<'_, T>> {
        let first = parts.first().ok_or_else(|| shape_err("concat_rows", "no inputs"))?.value();
        if first.rank() == 0 {
            return Err(shape_err("concat_rows", "scalar input"));
        }
        let tail = first.shape()[1..].to_vec();
        let mut lead = 0;
        let mut data = Vec::new();
        for p in parts {
            let v = p.value();
            if v.rank() == 0 || v.shape()[1..] != tail[..] {
                return Err(shape_err("concat_rows", format!("{:?} vs {:?}", first.shape(), v.shape())));
            }
            lead += v.shape()[0];
            data.extend_from_slice(v.data());
        }
        let mut shape = vec![lead];
        shape.extend(tail);
        let needs = parts.iter().any(|p| self.needs(p.idx));
        Ok(self.push(
            Tensor::new(shape, data)?,
            Op::ConcatRows(parts.iter().map(|p| p.idx).collect()),
            needs,
        ))
    }

    /// Runs reverse accumulation from a single-element `loss`.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Backprop<T>> {
        let nodes = self.nodes.borrow();
        if nodes[loss.idx].value.len() != 1 {
            return Err(shape_err("backward", format!("loss has shape {:?}", nodes[loss.idx].value.shape())));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; nodes.len()];
        grads[loss.idx] = Some(vec![T::one()]);
        for i in (0..=loss.idx).rev() {
            if !nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            backward_node(&nodes, i, &g, &mut grads);
            grads[i] = Some(g);
        }
        let mut params = Gradients::new();
        for (idx, node) in nodes.iter().enumerate() {
            if let (Op::Param(id), Some(g)) = (&node.op, &grads[idx]) {
                params.insert(*id, Tensor::new(node.value.shape().to_vec(), g.clone())?);
            }
        }
        let shapes = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Backprop { grads, shapes, params })
    }
}

/// Result of [`Tape::backward`].
pub struct Backprop<T> {
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<Vec<usize>>,
    params: Gradients<T>,
}

impl<T: Scalar> Backprop<T> {
    pub fn params(&self) -> &Gradients<T> {
        &self.params
    }

    pub fn into_params(self) -> Gradients<T> {
        self.params
    }

    /// Gradient of the loss with respect to a recorded value.
    pub fn wrt(&self, var: Var<'_, T>) -> Option<Tensor<T>> {
        self.grads[var.idx]
            .as_ref()
            .map(|g| Tensor::new(self.shapes[var.idx].clone(), g.clone()).expect("grad shape"))
    }
}

fn acc<T: Scalar>(grads: &mut [Option<Vec<T>>], nodes: &[Node<T>], idx: usize, f: impl FnOnce(&mut [T])) {
    if !nodes[idx].needs_grad {
        return;
    }
    let buf = grads[idx].get_or_insert_with(|| vec![T::zero(); nodes[idx].value.len()]);
    f(buf);
}

fn batch_dims(t: &Tensor<impl Scalar>) -> (usize, usize, usize) {
    let s = t.shape();
    let r = s.len();
    (s[..r - 2].iter().product(), s[r - 2], s[r - 1])
}

fn backward_node<T: Scalar>(nodes: &[Node<T>], i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
    let out = &nodes[i].value;
    match &nodes[i].op {
        Op::Leaf | Op::Param(_) => {}
        Op::Add(a, b) => {
            acc(grads, nodes, *a, |ga| add_into(ga, g));
            acc(grads, nodes, *b, |gb| add_into(gb, g));
        }
        Op::Sub(a, b) => {
            acc(grads, nodes, *a, |ga| add_into(ga, g));
            acc(grads, nodes, *b, |gb| {
                for (x, &y) in gb.iter_mut().zip(g) {
                    *x -= y;
                }
            });
        }
        Op::Mul(a, b) => {
            let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
            acc(grads, nodes, *a, |ga| {
                for ((x, &y), &w) in ga.iter_mut().zip(g).zip(bv.data()) {
                    *x += y * w;
                }
            });
            acc(grads, nodes, *b, |gb| {
                for ((x, &y), &w) in gb.iter_mut().zip(g).zip(av.data()) {
                    *x += y * w;
                }
            });
        }
        Op::AddRow(a, bias) => {
            acc(grads, nodes, *a, |ga| add_into(ga, g));
            acc(grads, nodes, *bias, |gb| {
                let d = gb.len();
                for row in g.chunks(d) {
                    add_into(gb, row);
                }
            });
        }
        Op::Scale(a, c) => acc(grads, nodes, *a, |ga| {
            for (x, &y) in ga.iter_mut().zip(g) {
                *x += *c * y;
            }
        }),
        Op::MatMul(a, b) => {
            let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
            let k = av.last_dim();
            let m = av.len() / k.max(1);
            let n = bv.last_dim();
            acc(grads, nodes, *a, |ga| gemm_nt(m, n, k, g, bv.data(), ga));
            acc(grads, nodes, *b, |gb| gemm_tn(k, m, n, av.data(), g, gb));
        }
        Op::Bmm { a, b, trans_b } => {
            let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
            let (batch, m, k) = batch_dims(av);
            let n = out.last_dim();
            let (sa, sb, so) = (m * k, k * n, m * n);
            acc(grads, nodes, *a, |ga| {
                for t in 0..batch {
                    let gt = &g[t * so..(t + 1) * so];
                    let bt = &bv.data()[t * sb..(t + 1) * sb];
                    let dst = &mut ga[t * sa..(t + 1) * sa];
                    if *trans_b {
                        // C = A B^T, B is [n,k]: dA = G B
                        gemm_nn(m, n, k, gt, bt, dst);
                    } else {
                        gemm_nt(m, n, k, gt, bt, dst);
                    }
                }
            });
            acc(grads, nodes, *b, |gb| {
                for t in 0..batch {
                    let gt = &g[t * so..(t + 1) * so];
                    let at = &av.data()[t * sa..(t + 1) * sa];
                    let dst = &mut gb[t * sb..(t + 1) * sb];
                    if *trans_b {
                        // dB = G^T A, [n,k]
                        gemm_tn(n, m, k, gt, at, dst);
                    } else {
                        gemm_tn(k, m, n, at, gt, dst);
                    }
                }
            });
        }
        Op::Relu(a) => {
            let av = &nodes[*a].value;
            acc(grads, nodes, *a, |ga| {
                for ((x, &y), &v) in ga.iter_mut().zip(g).zip(av.data()) {
                    if v > T::zero() {
                        *x += y;
                    }
                }
            });
        }
        Op::Gelu(a) => {
            let av = &nodes[*a].value;
            acc(grads, nodes, *a, |ga| {
                for ((x, &y), &v) in ga.iter_mut().zip(g).zip(av.data()) {
                    *x += y * gelu_grad(v);
                }
            });
        }
        Op::Dropout { x, keep } => acc(grads, nodes, *x, |gx| {
            for ((d, &y), &k) in gx.iter_mut().zip(g).zip(keep) {
                *d += y * k;
            }
        }),
        Op::LayerNorm {
            x,
            gain,
            bias,
            normed,
            rstd,
        } => {
            let d = out.last_dim();
            let gv = &nodes[*gain].value;
            acc(grads, nodes, *bias, |gb| {
                for row in g.chunks(d) {
                    add_into(gb, row);
                }
            });
            acc(grads, nodes, *gain, |gg| {
                for (row, nrow) in g.chunks(d).zip(normed.chunks(d)) {
                    for ((o, &y), &n) in gg.iter_mut().zip(row).zip(nrow) {
                        *o += y * n;
                    }
                }
            });
            acc(grads, nodes, *x, |gx| {
                let inv_d = T::one() / T::of(d as f64);
                let mut dn = vec![T::zero(); d];
                for (r, (row, nrow)) in g.chunks(d).zip(normed.chunks(d)).enumerate() {
                    let mut m1 = T::zero();
                    let mut m2 = T::zero();
                    for c in 0..d {
                        dn[c] = row[c] * gv.data()[c];
                        m1 += dn[c];
                        m2 += dn[c] * nrow[c];
                    }
                    m1 *= inv_d;
                    m2 *= inv_d;
                    let dst = &mut gx[r * d..(r + 1) * d];
                    for c in 0..d {
                        dst[c] += rstd[r] * (dn[c] - m1 - nrow[c] * m2);
                    }
                }
            });
        }
        Op::MaskedSoftmax(a) => {
            let d = out.last_dim();
            acc(grads, nodes, *a, |ga| {
                for ((grow, yrow), dst) in g.chunks(d).zip(out.data().chunks(d)).zip(ga.chunks_mut(d)) {
                    let dot: T = grow.iter().zip(yrow).map(|(&a, &b)| a * b).sum();
                    for c in 0..d {
                        dst[c] += yrow[c] * (grow[c] - dot);
                    }
                }
            });
        }
        Op::ConcatLast(parts) => {
            let total = out.last_dim();
            let mut offset = 0;
            for &p in parts {
                let w = nodes[p].value.last_dim();
                acc(grads, nodes, p, |gp| {
                    for (r, dst) in gp.chunks_mut(w.max(1)).enumerate() {
                        add_into(dst, &g[r * total + offset..r * total + offset + w]);
                    }
                });
                offset += w;
            }
        }
        Op::ConcatRows(parts) => {
            let mut offset = 0;
            for &p in parts {
                let len = nodes[p].value.len();
                acc(grads, nodes, p, |gp| add_into(gp, &g[offset..offset + len]));
                offset += len;
            }
        }
        Op::GatherRows { x, index } => {
            let d = out.last_dim();
            acc(grads, nodes, *x, |gx| {
                for (r, src) in index.iter().enumerate() {
                    if let Some(s) = src {
                        add_into(&mut gx[s * d..(s + 1) * d], &g[r * d..(r + 1) * d]);
                    }
                }
            });
        }
        Op::SegmentMax { x, argmax } => {
            let d = out.last_dim();
            acc(grads, nodes, *x, |gx| {
                for (o, src) in argmax.iter().enumerate() {
                    if let Some(r) = src {
                        gx[r * d + o % d] += g[o];
                    }
                }
            });
        }
        Op::SegmentSum { x, segments } => {
            let d = out.last_dim();
            acc(grads, nodes, *x, |gx| {
                for (r, &s) in segments.iter().enumerate() {
                    add_into(&mut gx[r * d..(r + 1) * d], &g[s * d..(s + 1) * d]);
                }
            });
        }
        Op::SplitHeads { x, heads } => {
            let xs = nodes[*x].value.shape().to_vec();
            acc(grads, nodes, *x, |gx| {
                permute_heads(g, gx, xs[0], xs[1], *heads, xs[2] / heads, true)
            });
        }
        Op::MergeHeads { x, heads } => {
            let xs = nodes[*x].value.shape().to_vec();
            acc(grads, nodes, *x, |gx| {
                permute_heads(g, gx, xs[0] / heads, xs[1], *heads, xs[2], false)
            });
        }
        Op::Reshape(a) => acc(grads, nodes, *a, |ga| add_into(ga, g)),
        Op::Sum(a) => acc(grads, nodes, *a, |ga| {
            for x in ga.iter_mut() {
                *x += g[0];
            }
        }),
        Op::Mean(a) => {
            let n = T::of(nodes[*a].value.len() as f64);
            acc(grads, nodes, *a, |ga| {
                for x in ga.iter_mut() {
                    *x += g[0] / n;
                }
            })
        }
        Op::CrossEntropy { logits, targets, probs } => {
            let c = nodes[*logits].value.last_dim();
            let n = T::of(targets.len() as f64);
            acc(grads, nodes, *logits, |gl| {
                for (r, &t) in targets.iter().enumerate() {
                    for k in 0..c {
                        let onehot = if k == t { T::one() } else { T::zero() };
                        gl[r * c + k] += g[0] * (probs[r * c + k] - onehot) / n;
                    }
                }
            });
        }
        Op::Bce { logits, targets } => {
            let lv = &nodes[*logits].value;
            let n = T::of(lv.len() as f64);
            acc(grads, nodes, *logits, |gl| {
                for ((d, &z), &y) in gl.iter_mut().zip(lv.data()).zip(targets) {
                    *d += g[0] * (sigmoid(z) - y) / n;
                }
            });
        }
    }
}

/// Moves between `[B, L, H*D]` and `[B*H, L, D]` layouts. With `merge` the
/// source is split (`[B*H, L, D]`) and the destination merged.
fn permute_heads<T: Scalar>(src: &[T], dst: &mut [T], batch: usize, len: usize, heads: usize, dh: usize, merge: bool) {
    for b in 0..batch {
        for l in 0..len {
            for h in 0..heads {
                let merged = (b * len + l) * heads * dh + h * dh;
                let split = ((b * heads + h) * len + l) * dh;
                let (from, to) = if merge { (split, merged) } else { (merged, split) };
                for c in 0..dh {
                    dst[to + c] += src[from + c];
                }
            }
        }
    }
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

fn gelu<T: Scalar>(x: T) -> T {
    let c = T::of(GELU_C);
    let a = T::of(GELU_A);
    let u = c * (x + a * x * x * x);
    T::of(0.5) * x * (T::one() + u.tanh())
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::of(GELU_C);
    let a = T::of(GELU_A);
    let u = c * (x + a * x * x * x);
    let t = u.tanh();
    let du = c * (T::one() + T::of(3.0) * a * x * x);
    T::of(0.5) * (T::one() + t) + T::of(0.5) * x * (T::one() - t * t) * du
}

#[allow(clippy::should_implement_trait)]
impl<'t, T: Scalar> Var<'t, T> {
    pub fn value(&self) -> Rc<Tensor<T>> {
        self.tape.value(self.idx)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.idx].value.shape().to_vec()
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    fn needs(&self) -> bool {
        self.tape.needs(self.idx)
    }

    fn binary(self, other: Var<'t, T>, op: &'static str, f: impl Fn(T, T) -> T, node: fn(usize, usize) -> Op<T>) -> Result<Var<'t, T>> {
        let (a, b) = (self.value(), other.value());
        if a.shape() != b.shape() {
            return Err(shape_err(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
        }
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        let needs = self.needs() || other.needs();
        Ok(self
            .tape
            .push(Tensor::new(a.shape().to_vec(), data)?, node(self.idx, other.idx), needs))
    }

    pub fn add(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, "add", |x, y| x + y, Op::Add)
    }

    pub fn sub(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, "sub", |x, y| x - y, Op::Sub)
    }

    pub fn mul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, "mul", |x, y| x * y, Op::Mul)
    }

    /// Adds a `[d]` bias to every row of a `[.., d]` input.
    pub fn add_row(self, bias: Var<'t, T>) -> Result<Var<'t, T>> {
        let (a, b) = (self.value(), bias.value());
        if b.rank() != 1 || b.len() != a.last_dim() {
            return Err(shape_err("add_row", format!("{:?} + {:?}", a.shape(), b.shape())));
        }
        let d = b.len();
        let mut data = a.data().to_vec();
        for row in data.chunks_mut(d.max(1)) {
            add_into(row, b.data());
        }
        let needs = self.needs() || bias.needs();
        Ok(self
            .tape
            .push(Tensor::new(a.shape().to_vec(), data)?, Op::AddRow(self.idx, bias.idx), needs))
    }

    pub fn scale(self, factor: f64) -> Var<'t, T> {
        let c = T::of(factor);
        let value = self.value().map(|v| v * c);
        self.tape.push(value, Op::Scale(self.idx, c), self.needs())
    }

    /// `[.., k] x [k, n] -> [.., n]`; leading extents are flattened.
    pub fn matmul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let (a, b) = (self.value(), other.value());
        if a.rank() == 0 || b.rank() != 2 || a.last_dim() != b.shape()[0] {
            return Err(shape_err("matmul", format!("{:?} x {:?}", a.shape(), b.shape())));
        }
        let k = a.last_dim();
        let n = b.shape()[1];
        let m = a.len().checked_div(k).unwrap_or(0);
        let mut data = vec![T::zero(); m * n];
        gemm_nn(m, k, n, a.data(), b.data(), &mut data);
        let mut shape = a.shape()[..a.rank() - 1].to_vec();
        shape.push(n);
        let needs = self.needs() || other.needs();
        Ok(self.tape.push(Tensor::new(shape, data)?, Op::MatMul(self.idx, other.idx), needs))
    }

    fn bmm_impl(self, other: Var<'t, T>, trans_b: bool) -> Result<Var<'t, T>> {
        let (a, b) = (self.value(), other.value());
        if a.rank() < 2 || b.rank() != a.rank() || a.shape()[..a.rank() - 2] != b.shape()[..b.rank() - 2] {
            return Err(shape_err("bmm", format!("{:?} x {:?}", a.shape(), b.shape())));
        }
        let (batch, m, k) = batch_dims(&a);
        let (_, b1, b2) = batch_dims(&b);
        let n = if trans_b { b1 } else { b2 };
        let kb = if trans_b { b2 } else { b1 };
        if kb != k {
            return Err(shape_err("bmm", format!("{:?} x {:?}", a.shape(), b.shape())));
        }
        let mut data = vec![T::zero(); batch * m * n];
        for t in 0..batch {
            let at = &a.data()[t * m * k..(t + 1) * m * k];
            let bt = &b.data()[t * k * n..(t + 1) * k * n];
            let ot = &mut data[t * m * n..(t + 1) * m * n];
            if trans_b {
                gemm_nt(m, k, n, at, bt, ot);
            } else {
                gemm_nn(m, k, n, at, bt, ot);
            }
        }
        let mut shape = a.shape()[..a.rank() - 2].to_vec();
        shape.extend([m, n]);
        let needs = self.needs() || other.needs();
        Ok(self.tape.push(
            Tensor::new(shape, data)?,
            Op::Bmm {
                a: self.idx,
                b: other.idx,
                trans_b,
            },
            needs,
        ))
    }

    /// Batched `[.., m, k] x [.., k, n]`.
    pub fn bmm(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.bmm_impl(other, false)
    }

    /// Batched `[.., m, k] x [.., n, k]^T`.
    pub fn bmm_nt(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.bmm_impl(other, true)
    }

    pub fn relu(self) -> Var<'t, T> {
        let value = self.value().map(|v| if v > T::zero() { v } else { T::zero() });
        self.tape.push(value, Op::Relu(self.idx), self.needs())
    }

    /// Tanh approximation of GELU.
    pub fn gelu(self) -> Var<'t, T> {
        let value = self.value().map(gelu);
        self.tape.push(value, Op::Gelu(self.idx), self.needs())
    }

    /// Inverted dropout. Identity when `rng` is `None` (evaluation) or `p == 0`.
    pub fn dropout<R: Rng + ?Sized>(self, p: f64, rng: Option<&mut R>) -> Result<Var<'t, T>> {
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::Invalid {
                op: "dropout",
                detail: format!("rate {p} outside [0, 1)"),
            });
        }
        let Some(rng) = rng else { return Ok(self) };
        if p == 0.0 {
            return Ok(self);
        }
        let x = self.value();
        let scale = T::of(1.0 / (1.0 - p));
        let keep: Vec<T> = (0..x.len()).map(|_| if rng.gen::<f64>() < p { T::zero() } else { scale }).collect();
        let data = x.data().iter().zip(&keep).map(|(&v, &k)| v * k).collect();
        Ok(self.tape.push(
            Tensor::new(x.shape().to_vec(), data)?,
            Op::Dropout { x: self.idx, keep },
            self.needs(),
        ))
    }

    /// Normalises each row over the last dimension, then applies `gain * x + bias`.
    pub fn layer_norm(self, gain: Var<'t, T>, bias: Var<'t, T>, eps: f64) -> Result<Var<'t, T>> {
        let x = self.value();
        let d = x.last_dim();
        if x.rank() == 0 || d == 0 {
            return Err(TensorError::EmptyLastDim { op: "layer_norm" });
        }
        if eps <= 0.0 {
            return Err(TensorError::Invalid {
                op: "layer_norm",
                detail: format!("eps must be positive, got {eps}"),
            });
        }
        let (gv, bv) = (gain.value(), bias.value());
        if gv.shape() != [d] || bv.shape() != [d] {
            return Err(shape_err(
                "layer_norm",
                format!("affine {:?}/{:?} for width {d}", gv.shape(), bv.shape()),
            ));
        }
        let rows = x.rows();
        let mut normed = Vec::with_capacity(x.len());
        let mut rstd = Vec::with_capacity(rows);
        let mut data = Vec::with_capacity(x.len());
        let inv_d = T::one() / T::of(d as f64);
        for r in 0..rows {
            let row = x.row(r);
            let mean = row.iter().copied().sum::<T>() * inv_d;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
            let s = T::one() / (var + T::of(eps)).sqrt();
            rstd.push(s);
            for c in 0..d {
                let n = (row[c] - mean) * s;
                normed.push(n);
                data.push(gv.data()[c] * n + bv.data()[c]);
            }
        }
        let needs = self.needs() || gain.needs() || bias.needs();
        Ok(self.tape.push(
            Tensor::new(x.shape().to_vec(), data)?,
            Op::LayerNorm {
                x: self.idx,
                gain: gain.idx,
                bias: bias.idx,
                normed,
                rstd,
            },
            needs,
        ))
    }

    /// Softmax over the last axis restricted to unmasked keys.
    ///
    /// A row whose keys are all masked comes out as zeros.
    pub fn masked_softmax(self, mask: Option<&Mask<T>>) -> Result<Var<'t, T>> {
        let x = self.value();
        if x.rank() == 0 {
            return Err(shape_err("masked_softmax", "scalar input"));
        }
        let keys = x.last_dim();
        let queries = if x.rank() >= 2 { x.shape()[x.rank() - 2] } else { 1 };
        let blocks = x.len().checked_div(queries * keys).unwrap_or(0);
        let rep = match mask {
            Some(m) => {
                let ms = m.bias.shape();
                if ms[1] != queries || ms[2] != keys || ms[0] == 0 || !blocks.is_multiple_of(ms[0]) {
                    return Err(shape_err("masked_softmax", format!("scores {:?} with mask {:?}", x.shape(), ms)));
                }
                blocks / ms[0]
            }
            None => 1,
        };
        let mut data = vec![T::zero(); x.len()];
        for r in 0..blocks * queries {
            let row = &x.data()[r * keys..(r + 1) * keys];
            let bias = mask.map(|m| {
                let mrow = (r / (queries * rep)) * queries + r % queries;
                &m.bias.data()[mrow * keys..(mrow + 1) * keys]
            });
            let allowed = |j: usize| bias.is_none_or(|b| b[j] == T::zero());
            let mut max = T::neg_infinity();
            for j in 0..keys {
                if allowed(j) && row[j] > max {
                    max = row[j];
                }
            }
            if max == T::neg_infinity() {
                continue;
            }
            let dst = &mut data[r * keys..(r + 1) * keys];
            let mut total = T::zero();
            for j in 0..keys {
                if allowed(j) {
                    let e = (row[j] - max).exp();
                    dst[j] = e;
                    total += e;
                }
            }
            for v in dst.iter_mut() {
                *v /= total;
            }
        }
        Ok(self
            .tape
            .push(Tensor::new(x.shape().to_vec(), data)?, Op::MaskedSoftmax(self.idx), self.needs()))
    }

    /// Selects rows of a `[n, d]` input; `None` yields a zero row.
    pub fn gather_rows(self, index: Rc<Vec<Option<usize>>>) -> Result<Var<'t, T>> {
        let x = self.value();
        if x.rank() != 2 {
            return Err(shape_err("gather_rows", format!("expected matrix, got {:?}", x.shape())));
        }
        let (n, d) = (x.shape()[0], x.shape()[1]);
        let mut data = vec![T::zero(); index.len() * d];
        for (r, src) in index.iter().enumerate() {
            if let Some(s) = *src {
                if s >= n {
                    return Err(shape_err("gather_rows", format!("row {s} of {n}")));
                }
                data[r * d..(r + 1) * d].copy_from_slice(x.row(s));
            }
        }
        Ok(self.tape.push(
            Tensor::new(vec![index.len(), d], data)?,
            Op::GatherRows { x: self.idx, index },
            self.needs(),
        ))
    }

    /// Element-wise max of rows sharing a segment id; empty segments are zero.
    /// Ties resolve to the earliest row.
    pub fn segment_max(self, segments: &[usize], count: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        if x.rank() != 2 || x.shape()[0] != segments.len() {
            return Err(shape_err("segment_max", format!("{:?} with {} ids", x.shape(), segments.len())));
        }
        let d = x.shape()[1];
        let mut data = vec![T::zero(); count * d];
        let mut argmax: Vec<Option<usize>> = vec![None; count * d];
        for (r, &s) in segments.iter().enumerate() {
            if s >= count {
                return Err(shape_err("segment_max", format!("segment {s} of {count}")));
            }
            let row = x.row(r);
            for c in 0..d {
                let o = s * d + c;
                if argmax[o].is_none() || row[c] > data[o] {
                    data[o] = row[c];
                    argmax[o] = Some(r);
                }
            }
        }
        Ok(self.tape.push(
            Tensor::new(vec![count, d], data)?,
            Op::SegmentMax { x: self.idx, argmax },
            self.needs(),
        ))
    }

    pub fn segment_sum(self, segments: Rc<Vec<usize>>, count: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        if x.rank() != 2 || x.shape()[0] != segments.len() {
            return Err(shape_err("segment_sum", format!("{:?} with {} ids", x.shape(), segments.len())));
        }
        let d = x.shape()[1];
        let mut data = vec![T::zero(); count * d];
        for (r, &s) in segments.iter().enumerate() {
            if s >= count {
                return Err(shape_err("segment_sum", format!("segment {s} of {count}")));
            }
            add_into(&mut data[s * d..(s + 1) * d], x.row(r));
        }
        Ok(self.tape.push(
            Tensor::new(vec![count, d], data)?,
            Op::SegmentSum { x: self.idx, segments },
            self.needs(),
        ))
    }

    /// `[B, L, H*D] -> [B*H, L, D]`.
    pub fn split_heads(self, heads: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        if x.rank() != 3 || heads == 0 || !x.shape()[2].is_multiple_of(heads) {
            return Err(TensorError::HeadMismatch { dim: x.last_dim(), heads });
        }
        let (b, l, d) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let dh = d / heads;
        let mut data = vec![T::zero(); x.len()];
        permute_heads(x.data(), &mut data, b, l, heads, dh, false);
        Ok(self.tape.push(
            Tensor::new(vec![b * heads, l, dh], data)?,
            Op::SplitHeads { x: self.idx, heads },
            self.needs(),
        ))
    }

    /// `[B*H, L, D] -> [B, L, H*D]`.
    pub fn merge_heads(self, heads: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        if x.rank() != 3 || heads == 0 || !x.shape()[0].is_multiple_of(heads) {
            return Err(shape_err("merge_heads", format!("{:?} with {heads} heads", x.shape())));
        }
        let (bh, l, dh) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let mut data = vec![T::zero(); x.len()];
        permute_heads(x.data(), &mut data, bh / heads, l, heads, dh, true);
        Ok(self.tape.push(
            Tensor::new(vec![bh / heads, l, heads * dh], data)?,
            Op::MergeHeads { x: self.idx, heads },
            self.needs(),
        ))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t, T>> {
        let value = (*self.value()).clone().reshape(shape)?;
        Ok(self.tape.push(value, Op::Reshape(self.idx), self.needs()))
    }

    pub fn sum(self) -> Var<'t, T> {
        let total = self.value().data().iter().copied().sum();
        self.tape.push(Tensor::scalar(total), Op::Sum(self.idx), self.needs())
    }

    pub fn mean(self) -> Var<'t, T> {
        let x = self.value();
        let n = T::of(x.len().max(1) as f64);
        let total = x.data().iter().copied().sum::<T>() / n;
        self.tape.push(Tensor::scalar(total), Op::Mean(self.idx), self.needs())
    }

    /// Mean softmax cross-entropy of `[n, c]` logits against class indices.
    pub fn cross_entropy(self, targets: &[usize]) -> Result<Var<'t, T>> {
        let x = self.value();
        let c = x.last_dim();
        if x.rank() != 2 || x.shape()[0] != targets.len() || c == 0 {
            return Err(shape_err("cross_entropy", format!("{:?} for {} targets", x.shape(), targets.len())));
        }
        let mut probs = vec![T::zero(); x.len()];
        let mut loss = T::zero();
        for (r, &t) in targets.iter().enumerate() {
            if t >= c {
                return Err(shape_err("cross_entropy", format!("target {t} of {c} classes")));
            }
            let row = x.row(r);
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let total: T = row.iter().map(|&v| (v - max).exp()).sum();
            for k in 0..c {
                probs[r * c + k] = (row[k] - max).exp() / total;
            }
            loss += max + total.ln() - row[t];
        }
        loss /= T::of(targets.len() as f64);
        Ok(self.tape.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits: self.idx,
                targets: targets.to_vec(),
                probs,
            },
            self.needs(),
        ))
    }

    /// Mean binary cross-entropy with logits; targets are smoothed to
    /// `(1 - smoothing) * y + smoothing / classes`.
    pub fn bce_label_smoothing(self, labels: &Tensor<T>, smoothing: f64) -> Result<Var<'t, T>> {
        let x = self.value();
        if x.shape() != labels.shape() {
            return Err(shape_err("bce_label_smoothing", format!("{:?} vs {:?}", x.shape(), labels.shape())));
        }
        if !(0.0..1.0).contains(&smoothing) {
            return Err(TensorError::Invalid {
                op: "bce_label_smoothing",
                detail: format!("smoothing {smoothing} outside [0, 1)"),
            });
        }
        let classes = T::of(x.last_dim().max(1) as f64);
        let eps = T::of(smoothing);
        let targets: Vec<T> = labels.data().iter().map(|&y| (T::one() - eps) * y + eps / classes).collect();
        let total: T = x
            .data()
            .iter()
            .zip(&targets)
            .map(|(&z, &y)| z.max(T::zero()) - z * y + (T::one() + (-z.abs()).exp()).ln())
            .sum();
        let loss = total / T::of(x.len().max(1) as f64);
        Ok(self
            .tape
            .push(Tensor::scalar(loss), Op::Bce { logits: self.idx, targets }, self.needs()))
    }

    /// `x W + b` for `[.., in]` inputs.
    pub fn linear(self, weight: Var<'t, T>, bias: Option<Var<'t, T>>) -> Result<Var<'t, T>> {
        let y = self.matmul(weight)?;
        match bias {
            Some(b) => y.add_row(b),
            None => Ok(y),
        }
    }
}
