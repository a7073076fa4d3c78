mod common;

use common::max_abs;
use hmm_icl::construct::rotation_matrices;
use hmm_icl::context::{build_context, vec_decode, vec_encode, vec_index, ContextLayout};
use hmm_icl::hmm::one_hot;
use hmm_icl::kernel::{apply_layer, attention, attention_weights, forward, Activation, HeadWeights, Layer, RowEncoder, TransformerStack};
use hmm_icl::rng::stream_rng;
use nalgebra::{DMatrix, RowVector2, Vector2};
use proptest::prelude::*;
use rand::Rng as _;

fn random(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = stream_rng(seed, 0);
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// Dense `sigma(M Q K^T M^T) M V`.
fn dense_attention(m: &DMatrix<f64>, q: &DMatrix<f64>, k: &DMatrix<f64>, v: &DMatrix<f64>, act: Activation) -> DMatrix<f64> {
    let logits = m * q * k.transpose() * m.transpose();
    let mut a = logits.clone();
    for mut row in a.row_iter_mut() {
        match act {
            Activation::Relu => row.apply(|x| *x = x.max(0.0)),
            Activation::Softmax => {
                let mx = row.max();
                row.apply(|x| *x = (*x - mx).exp());
                let s = row.sum();
                row /= s;
            }
            Activation::Hardmax => {
                let mx = row.max();
                let first = row.iter().position(|&x| x == mx).unwrap();
                row.fill(0.0);
                row[first] = 1.0;
            }
        }
    }
    a * m * v
}

fn activation(i: u8) -> Activation {
    [Activation::Softmax, Activation::Relu, Activation::Hardmax][i as usize % 3]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sparse_head_matches_dense(rows in 1usize..12, d in 1usize..8, dk in 1usize..5, act in 0u8..3, seed in 0u64..1000) {
        let m = random(rows, d, seed);
        let (q, k, v) = (random(d, dk, seed + 1), random(d, dk, seed + 2), random(d, d, seed + 3));
        let head = HeadWeights::from_dense(&q, &k, &v, activation(act));
        let out = attention(&m, &head).unwrap();
        prop_assert_eq!(out.shape(), m.shape());
        prop_assert!(max_abs(&out, &dense_attention(&m, &q, &k, &v, activation(act))) < 1e-12);
    }

    #[test]
    fn softmax_rows_are_distributions(rows in 1usize..15, d in 1usize..6, scale in 0.0f64..50.0, seed in 0u64..1000) {
        let m = random(rows, d, seed);
        let head = HeadWeights::from_dense(&(random(d, 2, seed + 1) * scale), &random(d, 2, seed + 2), &DMatrix::identity(d, d), Activation::Softmax);
        let a = attention_weights(&m, &head).unwrap();
        for row in a.row_iter() {
            prop_assert!((row.sum() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn layer_is_residual_sum_of_heads(rows in 1usize..10, d in 2usize..7, heads in 1usize..4, seed in 0u64..1000) {
        let m = random(rows, d, seed);
        let hs: Vec<HeadWeights> = (0..heads)
            .map(|i| {
                let s = seed + 10 * i as u64;
                HeadWeights::from_dense(&random(d, 3, s + 1), &random(d, 3, s + 2), &random(d, d, s + 3), activation(i as u8))
            })
            .collect();
        let mut expected = m.clone();
        for h in &hs {
            expected += attention(&m, h).unwrap();
        }
        let mut h = m.clone();
        apply_layer(&mut h, &Layer::Attention { label: "t".into(), heads: hs }).unwrap();
        prop_assert!(max_abs(&h, &expected) < 1e-12);
    }

    #[test]
    fn context_roundtrip(n in 1usize..6, l in 2usize..5, extra in 0usize..3, p in 2usize..5, seed in 0u64..1000) {
        let k = l + extra;
        let ly = ContextLayout::new(n, l, k, p, 1).unwrap();
        let mut rng = stream_rng(seed, 0);
        let demos: Vec<Vec<usize>> = (0..n).map(|_| (0..l).map(|_| rng.random_range(0..p)).collect()).collect();
        let prefix: Vec<usize> = (0..k - 1).map(|_| rng.random_range(0..p)).collect();
        let m0 = build_context(&demos, &prefix, &ly).unwrap();
        prop_assert_eq!(m0.data.shape(), (n * (l + 1) + k, ly.d));
        prop_assert_eq!(m0.demos(), demos);
        prop_assert_eq!(m0.test_prefix(), prefix);
        prop_assert_eq!(m0.token(ly.rows() - 1), None);
        prop_assert!(m0.data.column(ly.ones_col()).iter().all(|&x| x == 1.0));
        let tests: f64 = m0.data.column(ly.test_col()).sum();
        prop_assert_eq!(tests, k as f64);
    }

    #[test]
    fn tuple_code_roundtrip(p in 2usize..5, m in 1usize..4, seed in 0u64..1000) {
        let mut rng = stream_rng(seed, 0);
        let tuple: Vec<usize> = (0..m).map(|_| rng.random_range(0..p)).collect();
        let code = vec_index(&tuple, p);
        prop_assert_eq!(vec_decode(code, p, m), tuple.clone());
        let hot: Vec<_> = tuple.iter().map(|&s| one_hot(s, p)).collect();
        prop_assert_eq!(vec_encode(&hot).unwrap(), one_hot(code, p.pow(m as u32)));
    }
}

#[test]
fn rotation_identity_over_all_positions() {
    for (n, l, k) in [(2, 3, 4), (64, 4, 8)] {
        let ly = ContextLayout::new(n, l, k, 2, 1).unwrap();
        let beta1 = 3.0;
        let (a, b) = rotation_matrices(&ly, beta1);
        let scale = 1000.0 * n as f64 * k as f64;
        let s = |t: usize| {
            let [x, y] = ly.position_embedding(t);
            (RowVector2::new(x, y), Vector2::new(x, y))
        };
        for t1 in 1..=ly.rows() {
            for t2 in 1..=ly.rows() {
                let diff = t1 as f64 - t2 as f64;
                let ga = (s(t1).0 * a * s(t2).1)[0];
                let gb = (s(t1).0 * b * s(t2).1)[0];
                assert!((ga - beta1 * ((diff - 1.0) / scale).cos()).abs() < 1e-9);
                assert!((gb - beta1 * ((diff + 1.0) / scale).cos()).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn hardmax_ties_pick_lowest_row() {
    let m = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 5.0, 1.0, 9.0]);
    let q = DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
    let k = DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
    let v = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]);
    let out = attention(&m, &HeadWeights::from_dense(&q, &k, &v, Activation::Hardmax)).unwrap();
    assert!(out.column(1).iter().all(|&x| x == 0.0));
}

#[test]
fn encoder_writes_kronecker_product() {
    let mut h = DMatrix::zeros(2, 10);
    h.row_mut(0).columns_mut(0, 2).copy_from_slice(&[0.0, 1.0]);
    h.row_mut(0).columns_mut(2, 2).copy_from_slice(&[1.0, 0.0]);
    h.row_mut(1).columns_mut(0, 2).copy_from_slice(&[0.25, 0.75]);
    h.row_mut(1).columns_mut(2, 2).copy_from_slice(&[0.5, 0.5]);
    let layer = Layer::Encoder { label: "vec".into(), encoder: RowEncoder::VecProduct { sources: vec![0, 2], width: 2, target: 4 } };
    let stack = TransformerStack::new(10, vec![layer.clone()]).unwrap();
    let out = forward(&h, &stack).unwrap();
    assert_eq!(out.row(0).columns(4, 4).iter().copied().collect::<Vec<_>>(), vec![0.0, 0.0, 1.0, 0.0]);
    assert_eq!(out.row(1).columns(4, 4).iter().copied().collect::<Vec<_>>(), vec![0.125, 0.125, 0.375, 0.375]);
    // a second application finds the target occupied
    assert!(forward(&out, &stack).is_err());
    let overlap = Layer::Encoder { label: "bad".into(), encoder: RowEncoder::VecProduct { sources: vec![0, 2], width: 2, target: 1 } };
    assert!(forward(&h, &TransformerStack::new(10, vec![overlap]).unwrap()).is_err());
}

#[test]
fn stack_json_roundtrip() {
    let d = 5;
    let head = HeadWeights::from_dense(&random(d, 2, 1), &random(d, 2, 2), &random(d, d, 3), Activation::Relu);
    let stack = TransformerStack::new(d, vec![Layer::Attention { label: "a".into(), heads: vec![head] }]).unwrap();
    let back = TransformerStack::from_json(&stack.to_json().unwrap()).unwrap();
    assert_eq!(back, stack);
    let m = random(4, d, 9);
    assert_eq!(forward(&m, &back).unwrap(), forward(&m, &stack).unwrap());
}

#[test]
fn width_mismatch_is_rejected() {
    let head = HeadWeights::from_dense(&random(4, 2, 1), &random(4, 2, 2), &random(4, 4, 3), Activation::Softmax);
    assert!(attention(&random(3, 5, 0), &head).is_err());
}
