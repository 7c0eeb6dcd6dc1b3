use std::rc::Rc;

use heat_tensor::{finite_diff_check, multihead_attention, Mask, MhaParams, ParamId, ParameterStore, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::uniform(shape, 1.0, rng)
}

/// Projects an arbitrary output onto a scalar with fixed random weights so
/// every output entry contributes a distinct gradient.
fn probe<'t>(tape: &'t Tape<f64>, out: heat_tensor::Var<'t, f64>, seed: u64) -> heat_tensor::Result<heat_tensor::Var<'t, f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37);
    let w = tape.constant(rand_tensor(&mut rng, &out.shape()));
    Ok(out.mul(w)?.sum())
}

fn check(
    store: &ParameterStore<f64>,
    f: impl for<'t> Fn(&'t Tape<f64>, &ParameterStore<f64>) -> heat_tensor::Result<heat_tensor::Var<'t, f64>>,
) {
    let report = finite_diff_check(store, f, H, None).unwrap();
    assert!(report.checked > 0);
    assert!(report.max_rel_err < TOL, "{report:?}");
}

#[test]
fn elementwise_and_matmul_gradients() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParameterStore::new();
        let a = s.add("a", rand_tensor(&mut rng, &[3, 4])).unwrap();
        let b = s.add("b", rand_tensor(&mut rng, &[3, 4])).unwrap();
        let w = s.add("w", rand_tensor(&mut rng, &[4, 5])).unwrap();
        let bias = s.add("bias", rand_tensor(&mut rng, &[5])).unwrap();
        check(&s, |t, s| {
            let (a, b) = (t.param(s, a), t.param(s, b));
            let x = a.mul(b)?.add(a)?.sub(b.scale(0.5))?;
            let y = x.matmul(t.param(s, w))?.add_row(t.param(s, bias))?;
            probe(t, y.gelu(), seed)
        });
    }
}

#[test]
fn batched_products_and_head_permutations() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParameterStore::new();
        let a = s.add("a", rand_tensor(&mut rng, &[2, 3, 4])).unwrap();
        let b = s.add("b", rand_tensor(&mut rng, &[2, 4, 5])).unwrap();
        let c = s.add("c", rand_tensor(&mut rng, &[2, 5, 4])).unwrap();
        check(&s, |t, s| {
            let (a, b, c) = (t.param(s, a), t.param(s, b), t.param(s, c));
            let x = a.bmm(b)?;
            let y = a.bmm_nt(c)?;
            let z = t.concat_last(&[x, y])?;
            let merged = z.split_heads(2)?.merge_heads(2)?;
            let split = z.split_heads(5)?;
            let total = probe(t, merged, seed)?.add(probe(t, split, seed + 1)?)?;
            Ok(total)
        });
    }
}

#[test]
fn layer_norm_gradient_matches_finite_differences() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParameterStore::new();
        let x = s.add("x", rand_tensor(&mut rng, &[4, 6])).unwrap();
        let g = s.add("g", rand_tensor(&mut rng, &[6])).unwrap();
        let b = s.add("b", rand_tensor(&mut rng, &[6])).unwrap();
        let report = finite_diff_check(
            &s,
            |t, s| {
                let y = t.param(s, x).layer_norm(t.param(s, g), t.param(s, b), 1e-5)?;
                probe(t, y, seed)
            },
            H,
            None,
        )
        .unwrap();
        // tighter than the suite-wide tolerance
        assert!(report.max_rel_err < 1e-6, "{report:?}");
    }
}

#[test]
fn gather_segment_and_softmax_gradients() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParameterStore::new();
        let x = s.add("x", rand_tensor(&mut rng, &[5, 3])).unwrap();
        let scores = s.add("scores", rand_tensor(&mut rng, &[4, 2, 3])).unwrap();
        let index = Rc::new(vec![Some(0), Some(4), None, Some(2), Some(0), Some(1)]);
        let segments = Rc::new(vec![0, 2, 2, 1, 0, 2]);
        let mask = Mask::from_fn(2, 2, 3, |b, q, k| (b + q + k) % 3 != 0 || k == q);
        check(&s, |t, s| {
            let rows = t.param(s, x).gather_rows(index.clone())?;
            let summed = rows.segment_sum(segments.clone(), 4)?;
            let maxed = rows.segment_max(&segments, 4)?;
            let sm = t.param(s, scores).masked_softmax(Some(&mask))?;
            let total = probe(t, summed, seed)?
                .add(probe(t, maxed, seed + 1)?)?
                .add(probe(t, sm, seed + 2)?)?;
            let both = t.concat_rows(&[rows, t.param(s, x)])?;
            total.add(probe(t, both.relu(), seed + 3)?)
        });
    }
}

#[test]
fn loss_gradients() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParameterStore::new();
        let logits = s.add("logits", rand_tensor(&mut rng, &[3, 7])).unwrap();
        let labels = Tensor::from_fn(&[3, 7], |i| if i % 4 == 0 { 1.0 } else { 0.0 });
        check(&s, |t, s| {
            let z = t.param(s, logits);
            z.cross_entropy(&[0, 6, 3])?
                .add(z.bce_label_smoothing(&labels, 0.1)?)?
                .add(z.reshape(&[21])?.mean())
        });
    }
}

#[test]
fn layer_norm_examples() {
    let t = Tape::<f64>::new();
    let ones = t.constant(Tensor::full(&[2], 1.0));
    let bias = t.constant(Tensor::new(vec![2], vec![0.25, -0.5]).unwrap());
    let constant_row = t.constant(Tensor::full(&[1, 2], 7.0));
    let y = constant_row.layer_norm(ones, bias, 1e-5).unwrap();
    assert_eq!(y.value().data(), &[0.25, -0.5]);

    let zeros = t.constant(Tensor::zeros(&[2]));
    let row = t.constant(Tensor::new(vec![1, 2], vec![1.0, -1.0]).unwrap());
    let y = row.layer_norm(ones, zeros, 1e-12).unwrap();
    assert!((y.value().data()[0] - 1.0).abs() < 1e-9);
    assert!((y.value().data()[1] + 1.0).abs() < 1e-9);

    let empty = t.constant(Tensor::zeros(&[3, 0]));
    let err = empty.layer_norm(zeros, zeros, 1e-5).unwrap_err();
    assert!(matches!(err, heat_tensor::TensorError::EmptyLastDim { .. }));
}

#[test]
fn masked_softmax_examples() {
    let t = Tape::<f64>::new();
    let uniform = t.constant(Tensor::full(&[1, 1, 4], 0.3));
    let y = uniform.masked_softmax(None).unwrap();
    assert!(y.value().data().iter().all(|&v| (v - 0.25).abs() < 1e-15));

    let scores = t.constant(Tensor::new(vec![1, 2, 3], vec![5.0, -2.0, 9.0, 1.0, 2.0, 3.0]).unwrap());
    let mask = Mask::from_fn(1, 2, 3, |_, q, k| q == 0 && k == 1);
    let y = scores.masked_softmax(Some(&mask)).unwrap();
    // one open key -> weight 1; fully masked row -> zeros
    assert_eq!(y.value().data(), &[0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let x: Tensor<f64> = Tensor::uniform(&[1, 3, 6], 30.0, &mut rng);
        let keep: Vec<bool> = (0..18).map(|_| rng.gen_bool(0.7)).collect();
        let mask = Mask::from_fn(1, 3, 6, |_, q, k| keep[q * 6 + k]);
        let y = t.constant(x.clone()).masked_softmax(Some(&mask)).unwrap().value();
        for q in 0..3 {
            let open: Vec<usize> = (0..6).filter(|&k| keep[q * 6 + k]).collect();
            let total: f64 = open.iter().map(|&k| x.data()[q * 6 + k].exp()).sum();
            for k in 0..6 {
                let want = if keep[q * 6 + k] { x.data()[q * 6 + k].exp() / total } else { 0.0 };
                assert!((y.data()[q * 6 + k] - want).abs() < 1e-12);
            }
        }
        assert!(y.all_finite());
    }
}

fn identity_mha(store: &mut ParameterStore<f64>, dim: usize) -> MhaParams {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let p = MhaParams::register(store, "mha", dim, &mut rng).unwrap();
    let eye = Tensor::from_fn(&[dim, dim], |i| if i / dim == i % dim { 1.0 } else { 0.0 });
    *store.get_mut(p.wv) = eye.clone();
    *store.get_mut(p.wo) = eye;
    p
}

#[test]
fn self_only_attention_returns_values() {
    let mut store = ParameterStore::new();
    let p = identity_mha(&mut store, 4);
    let t = Tape::new();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = rand_tensor(&mut rng, &[1, 5, 4]);
    let xv = t.constant(x.clone());
    let mask = Mask::from_fn(1, 5, 5, |_, q, k| q == k);
    let y = multihead_attention(&t, &store, &p, xv, xv, Some(&mask), 2, 0.0, None::<&mut ChaCha8Rng>).unwrap();
    assert!(y.value().max_abs_diff(&x) < 1e-15);
}

#[test]
fn permuting_keys_leaves_outputs_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut store = ParameterStore::<f64>::new();
    let p = MhaParams::register(&mut store, "mha", 8, &mut rng).unwrap();
    let q = rand_tensor(&mut rng, &[1, 3, 8]);
    let kv = rand_tensor(&mut rng, &[1, 4, 8]);
    let perm = [2, 0, 3, 1];
    let kv_perm = Tensor::from_fn(&[1, 4, 8], |i| kv.data()[perm[i / 8] * 8 + i % 8]);
    let keep = [[true, false, true, true], [true, true, false, false], [false, true, true, true]];
    let mask = Mask::from_fn(1, 3, 4, |_, a, b| keep[a][b]);
    let mask_perm = Mask::from_fn(1, 3, 4, |_, a, b| keep[a][perm[b]]);
    let t = Tape::new();
    let none = None::<&mut ChaCha8Rng>;
    let y1 = multihead_attention(&t, &store, &p, t.constant(q.clone()), t.constant(kv), Some(&mask), 2, 0.0, none).unwrap();
    let y2 = multihead_attention(
        &t,
        &store,
        &p,
        t.constant(q),
        t.constant(kv_perm),
        Some(&mask_perm),
        2,
        0.0,
        None::<&mut ChaCha8Rng>,
    )
    .unwrap();
    assert!(y1.value().max_abs_diff(&y2.value()) < 1e-12);
}

#[test]
fn attention_gradient_on_three_by_eight() {
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParameterStore::<f64>::new();
        let p = MhaParams::register(&mut store, "mha", 8, &mut rng).unwrap();
        let x: ParamId = store.add("x", rand_tensor(&mut rng, &[1, 3, 8])).unwrap();
        check(&store, |t, s| {
            let xv = t.param(s, x);
            let y = multihead_attention(t, s, &p, xv, xv, None, 2, 0.0, None::<&mut ChaCha8Rng>)?;
            probe(t, y, seed)
        });
    }
}

#[test]
fn head_mismatch_is_an_error() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParameterStore::<f64>::new();
    let p = MhaParams::register(&mut store, "mha", 6, &mut rng).unwrap();
    let t = Tape::new();
    let x = t.constant(Tensor::zeros(&[1, 2, 6]));
    let err = multihead_attention(&t, &store, &p, x, x, None, 4, 0.0, None::<&mut ChaCha8Rng>).unwrap_err();
    assert!(matches!(err, heat_tensor::TensorError::HeadMismatch { dim: 6, heads: 4 }));
}

#[test]
fn dropout_is_identity_without_rng_and_scales_with_it() {
    let t = Tape::<f64>::new();
    let x = t.constant(Tensor::full(&[1000], 1.0));
    let same = x.dropout(0.1, None::<&mut ChaCha8Rng>).unwrap();
    assert_eq!(same.value().data(), x.value().data());
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let y = x.dropout(0.5, Some(&mut rng)).unwrap().value();
    assert!(y.data().iter().all(|&v| v == 0.0 || v == 2.0));
    let kept = y.data().iter().filter(|&&v| v > 0.0).count();
    assert!((400..600).contains(&kept));
}
