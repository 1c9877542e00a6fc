use super::*;
use crate::error::Error;
use crate::transformer::multi_head_attention;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn m(rows: usize, cols: usize, v: &[f64]) -> Tensor {
    Tensor::matrix(rows, cols, v.to_vec()).unwrap()
}

fn random(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    Tensor::matrix(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

#[test]
fn matmul_identity_and_hand_product() {
    let mut g = Graph::new();
    let i = g.constant(Tensor::identity(3));
    let x = g.constant(m(3, 2, &[1., 2., 3., 4., 5., 6.]));
    let y = g.matmul(i, x).unwrap();
    assert_eq!(g.value(y).data(), g.value(x).data());

    let a = g.constant(m(2, 2, &[1., 2., 3., 4.]));
    let b = g.constant(m(2, 1, &[5., 6.]));
    let c = g.matmul(a, b).unwrap();
    assert_eq!(g.value(c).data(), &[17., 39.]);
}

#[test]
fn matmul_shape_mismatch() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::zeros(&[2, 3]));
    let b = g.constant(Tensor::zeros(&[2, 3]));
    assert!(matches!(g.matmul(a, b), Err(Error::ShapeMismatch { .. })));
}

#[test]
fn softmax_examples() {
    let mut g = Graph::new();
    let x = g.constant(m(2, 4, &[3., 3., 3., 3., 0., 3f64.ln(), 0., 0.]));
    let s = g.softmax_rows(x).unwrap();
    let v = g.value(s);
    for c in 0..4 {
        assert!((v.get2(0, c) - 0.25).abs() < 1e-15);
    }
    let x2 = g.constant(m(1, 2, &[0., 3f64.ln()]));
    let s2 = g.softmax_rows(x2).unwrap();
    assert!((g.value(s2).get2(0, 0) - 0.25).abs() < 1e-15);
    assert!((g.value(s2).get2(0, 1) - 0.75).abs() < 1e-15);
}

#[test]
fn softmax_rejects_non_finite() {
    let mut g = Graph::new();
    let x = g.constant(m(1, 2, &[0., f64::NAN]));
    assert!(matches!(g.softmax_rows(x), Err(Error::NonFinite(_))));
}

#[test]
fn layer_norm_examples() {
    let mut g = Graph::new();
    let one = g.constant(Tensor::filled(&[2], 1.0));
    let zero = g.constant(Tensor::zeros(&[2]));
    let x = g.constant(m(2, 2, &[1., 3., 5., 5.]));
    let y = g.layer_norm(x, one, zero, 1e-12).unwrap();
    let v = g.value(y).data().to_vec();
    assert!((v[0] + 1.0).abs() < 1e-9 && (v[1] - 1.0).abs() < 1e-9);
    assert_eq!(&v[2..], &[0.0, 0.0]);

    let gain = g.constant(Tensor::vector(vec![2.0, 3.0]).unwrap());
    let bias = g.constant(Tensor::vector(vec![0.5, -1.0]).unwrap());
    let y2 = g.layer_norm(x, gain, bias, 1e-12).unwrap();
    let v2 = g.value(y2).data();
    assert!((v2[0] - (-2.0 + 0.5)).abs() < 1e-9);
    assert!((v2[1] - (3.0 * 1.0 - 1.0)).abs() < 1e-9);
}

#[test]
fn layer_norm_unit_statistics() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut g = Graph::new();
    let x = g.constant(random(5, 8, &mut rng));
    let one = g.constant(Tensor::filled(&[8], 1.0));
    let zero = g.constant(Tensor::zeros(&[8]));
    let y = g.layer_norm(x, one, zero, 1e-12).unwrap();
    for r in 0..5 {
        let row = g.value(y).row(r);
        let mean = row.iter().sum::<f64>() / 8.0;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 8.0;
        assert!(mean.abs() < 1e-9 && (var - 1.0).abs() < 1e-9);
    }
}

#[test]
fn backward_linear_and_quadratic() {
    let mut g = Graph::new();
    let x = g.leaf(m(2, 3, &[1., -2., 3., 0.5, 0., 7.]), true);
    let s = g.sum(x);
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.get(x).unwrap(), &[1.0; 6]);

    let mut g = Graph::new();
    let x = g.leaf(m(1, 3, &[1., -2., 3.]), true);
    let sq = g.mul(x, x).unwrap();
    let s = g.sum(sq);
    let half = g.scale(s, 0.5);
    let grads = g.backward(half).unwrap();
    assert_eq!(grads.get(x).unwrap(), &[1., -2., 3.]);
}

#[test]
fn backward_requires_scalar() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::zeros(&[2, 2]), true);
    assert!(matches!(g.backward(x), Err(Error::NonScalarLoss(_))));
}

#[test]
fn unused_leaf_gets_no_gradient() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::scalar(2.0), true);
    let unused = g.leaf(Tensor::scalar(3.0), true);
    let s = g.sum(x);
    let grads = g.backward(s).unwrap();
    assert!(grads.get(unused).is_none());
}

#[test]
fn finite_difference_examples() {
    let x = m(1, 3, &[1., 2., 3.]);
    let e = finite_difference_check(|g, x| Ok(g.sum(x)), &x, 1e-5).unwrap();
    assert!(e <= 1e-10, "{e}");
    let e = finite_difference_check(
        |g, x| {
            let sq = g.mul(x, x)?;
            Ok(g.sum(sq))
        },
        &x,
        1e-5,
    )
    .unwrap();
    assert!(e <= 1e-8, "{e}");
}

fn attention_params(d: usize, rng: &mut impl Rng) -> Vec<Tensor> {
    (0..4).map(|_| random(d, d, rng)).collect()
}

#[test]
fn attention_single_position_is_value_path() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let ps = attention_params(4, &mut rng);
    let mut g = Graph::new();
    let x = g.constant(random(1, 4, &mut rng));
    let w: Vec<Var> = ps.iter().map(|t| g.constant(t.clone())).collect();
    let y = multi_head_attention(&mut g, x, w[0], w[1], w[2], w[3], &[Segment::dense(0, 1)], 1).unwrap();
    let xv = g.matmul(x, w[2]).unwrap();
    let expect = g.matmul(xv, w[3]).unwrap();
    for (a, b) in g.value(y).data().iter().zip(g.value(expect).data()) {
        assert!((a - b).abs() < 1e-14);
    }
}

#[test]
fn attention_identical_positions_identical_rows() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let ps = attention_params(8, &mut rng);
    let row = random(1, 8, &mut rng);
    let mut g = Graph::new();
    let x = g.constant(Tensor::from_rows(&[row.data().to_vec(), row.data().to_vec()]).unwrap());
    let w: Vec<Var> = ps.iter().map(|t| g.constant(t.clone())).collect();
    let y = multi_head_attention(&mut g, x, w[0], w[1], w[2], w[3], &[Segment::dense(0, 2)], 2).unwrap();
    assert_eq!(g.value(y).row(0), g.value(y).row(1));
}

#[test]
fn attention_ignores_masked_values() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let ps = attention_params(8, &mut rng);
    let base = random(3, 8, &mut rng);
    let seg = Segment {
        start: 0,
        mask: vec![true, false, true],
    };
    let run = |x: Tensor| {
        let mut g = Graph::new();
        let x = g.constant(x);
        let w: Vec<Var> = ps.iter().map(|t| g.constant(t.clone())).collect();
        let y = multi_head_attention(&mut g, x, w[0], w[1], w[2], w[3], std::slice::from_ref(&seg), 2).unwrap();
        g.value(y).clone()
    };
    let a = run(base.clone());
    let mut perturbed = base.clone();
    for c in 0..8 {
        perturbed.data_mut()[8 + c] += 100.0 * (c as f64 + 1.0);
    }
    let b = run(perturbed);
    assert_eq!(a.row(0), b.row(0));
    assert_eq!(a.row(2), b.row(2));
}

#[test]
fn attention_all_masked_is_error() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros(&[2, 4]));
    let seg = Segment {
        start: 0,
        mask: vec![false, false],
    };
    assert!(matches!(g.attention(x, x, x, &[seg], 1), Err(Error::AllMasked(0))));
}

#[test]
fn corrupted_rule_fails_gradcheck() {
    let x = m(1, 3, &[0.3, -1.0, 2.0]);
    let e = finite_difference_check(
        |g, x| {
            let y = g.custom(&[x], Box::new(crate::checks::BrokenSquare))?;
            Ok(g.sum(y))
        },
        &x,
        1e-5,
    )
    .unwrap();
    assert!(e > 1e-4);
}
