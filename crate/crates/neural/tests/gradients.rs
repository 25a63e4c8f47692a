//! Every primitive's analytic gradient against central finite differences.

use avhubert_neural::gradcheck::check_inputs;
use avhubert_neural::{Graph, NeuralError, Segment, Tensor, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
const TOL: f64 = 1e-6;
const FLOOR: f64 = 1e-3;

fn rand_t(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Reduce any output to a scalar with fixed random weights so every output
/// element contributes a distinct sensitivity.
fn weighted_sum(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var, NeuralError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = g.value(y).shape().to_vec();
    let w = g.constant(Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0)));
    let p = g.mul(y, w)?;
    g.sum(p)
}

fn check(name: &str, inputs: Vec<Tensor<f64>>, f: impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var, NeuralError>) {
    let report = check_inputs(&inputs, H, FLOOR, |g, v| {
        let y = f(g, v)?;
        if g.value(y).len() == 1 {
            Ok(y)
        } else {
            weighted_sum(g, y, 99)
        }
    })
    .unwrap();
    assert!(
        report.max_rel_err < TOL,
        "{name}: max rel err {} at {:?}",
        report.max_rel_err,
        report.worst
    );
}

#[test]
fn matmul_all_transposes() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (ta, tb) in [(false, false), (true, false), (false, true), (true, true)] {
        let a = if ta { rand_t(&mut rng, vec![4, 3]) } else { rand_t(&mut rng, vec![3, 4]) };
        let b = if tb { rand_t(&mut rng, vec![5, 4]) } else { rand_t(&mut rng, vec![4, 5]) };
        check("matmul", vec![a, b], |g, v| g.matmul_t(v[0], v[1], ta, tb));
    }
}

#[test]
fn elementwise_and_structural_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = rand_t(&mut rng, vec![3, 4]);
    let b = rand_t(&mut rng, vec![3, 4]);
    let bias = rand_t(&mut rng, vec![4]);
    let c = rand_t(&mut rng, vec![3, 2]);
    check("add", vec![a.clone(), b.clone()], |g, v| g.add(v[0], v[1]));
    check("mul", vec![a.clone(), b.clone()], |g, v| g.mul(v[0], v[1]));
    check("add_row", vec![a.clone(), bias.clone()], |g, v| g.add_row(v[0], v[1]));
    check("scale", vec![a.clone()], |g, v| g.scale(v[0], -1.7));
    check("scale_rows", vec![a.clone()], |g, v| g.scale_rows(v[0], vec![0.0, 2.0, -0.5]));
    check("concat", vec![a.clone(), c], |g, v| g.concat_cols(v[0], v[1]));
    check("sum", vec![a.clone()], |g, v| g.sum(v[0]));
    check("relu", vec![a.clone()], |g, v| g.relu(v[0]));
    check("gelu", vec![a.clone()], |g, v| g.gelu(v[0]));
    check("softmax", vec![a.clone()], |g, v| g.softmax(v[0]));
    check("log_softmax", vec![a.clone()], |g, v| g.log_softmax(v[0]));
    let keep = [true, false, true, true, false, true, true, true, false, true, false, true];
    check("dropout", vec![a.clone()], |g, v| g.dropout(v[0], &keep, 0.3));
    check("gather", vec![a.clone()], |g, v| g.gather(v[0], &[3, 0, 2]));
    let table = rand_t(&mut rng, vec![5, 3]);
    check("embedding", vec![table], |g, v| g.embedding(v[0], &[4, 1, 4, 0]));
    let emb = rand_t(&mut rng, vec![4]);
    check("select_rows", vec![a.clone(), emb], |g, v| {
        g.select_rows(v[0], v[1], &[true, false, true])
    });
}

#[test]
fn layer_norm_with_and_without_affine() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = rand_t(&mut rng, vec![3, 6]);
    let gamma = rand_t(&mut rng, vec![6]);
    let beta = rand_t(&mut rng, vec![6]);
    check("layer_norm", vec![x.clone(), gamma, beta], |g, v| {
        g.layer_norm(v[0], Some(v[1]), Some(v[2]))
    });
    check("layer_norm_plain", vec![x], |g, v| g.layer_norm(v[0], None, None));
}

#[test]
fn nll_from_log_softmax() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = rand_t(&mut rng, vec![4, 5]);
    check("nll", vec![x], |g, v| {
        let lp = g.log_softmax(v[0])?;
        g.nll(lp, &[1, 4, 0, 2], &[1.0, 0.0, 0.5, 1.0], 2.5)
    });
}

#[test]
fn depthwise_conv_within_segments() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = rand_t(&mut rng, vec![7, 3]);
    let w = rand_t(&mut rng, vec![5, 3]);
    let b = rand_t(&mut rng, vec![3]);
    let segs = Segment::pack(&[4, 1, 2]);
    check("depthwise_conv", vec![x, w, b], |g, v| g.depthwise_conv(v[0], v[1], v[2], &segs));
}

#[test]
fn multi_head_attention_over_segments() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let q = rand_t(&mut rng, vec![6, 4]);
    let k = rand_t(&mut rng, vec![6, 4]);
    let v = rand_t(&mut rng, vec![6, 4]);
    let segs = Segment::pack(&[4, 2]);
    check("attention", vec![q, k, v], |g, v| g.attention(v[0], v[1], v[2], &segs, 2));
}

#[test]
fn ctc_loss_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = rand_t(&mut rng, vec![9, 4]);
    let segs = Segment::pack(&[5, 4]);
    let targets = vec![vec![0, 1, 1], vec![2, 0]];
    check("ctc", vec![x], |g, v| {
        let lp = g.log_softmax(v[0])?;
        g.ctc_loss(lp, &segs, &targets, 3)
    });
}

#[test]
fn attention_does_not_cross_segments() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let q = rand_t(&mut rng, vec![5, 4]);
    let k = rand_t(&mut rng, vec![5, 4]);
    let v = rand_t(&mut rng, vec![5, 4]);
    let segs = Segment::pack(&[3, 2]);
    let run = |v: &Tensor<f64>| {
        let mut g = Graph::new();
        let (a, b, c) = (g.constant(q.clone()), g.constant(k.clone()), g.constant(v.clone()));
        let y = g.attention(a, b, c, &segs, 2).unwrap();
        g.value(y).data().to_vec()
    };
    let base = run(&v);
    let mut v2 = v.clone();
    for j in 0..4 {
        v2.data_mut()[4 * 4 + j] += 1.0; // last row, second segment
    }
    let moved = run(&v2);
    assert_eq!(&base[..12], &moved[..12]);
    assert_ne!(&base[12..], &moved[12..]);
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(rows in 1usize..5, cols in 1usize..9, seed in 0u64..1000, scale in 0.1f64..50.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_fn(vec![rows, cols], |_| rng.random_range(-scale..scale)));
        let y = g.softmax(x).unwrap();
        for r in 0..rows {
            let s: f64 = g.value(y).row(r).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn matmul_gradient_matches_finite_differences(m in 1usize..4, k in 1usize..4, n in 1usize..4, seed in 0u64..500) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = rand_t(&mut rng, vec![m, k]);
        let b = rand_t(&mut rng, vec![k, n]);
        let report = check_inputs(&[a, b], H, FLOOR, |g, v| {
            let y = g.matmul(v[0], v[1])?;
            weighted_sum(g, y, seed)
        }).unwrap();
        prop_assert!(report.max_rel_err < 1e-5);
    }
}
