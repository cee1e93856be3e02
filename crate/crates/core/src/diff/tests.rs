use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

fn positive_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(0.5..2.0)).collect(),
    )
    .unwrap()
}

/// Reduces any output to a scalar through a fixed random projection so that
/// every output coordinate contributes to the checked gradient.
fn project(g: &mut Graph, y: Var, seed: u64) -> Result<Var, DiffError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = g.value(y).shape().to_vec();
    let w = g.constant(rand_tensor(&shape, &mut rng));
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

fn check<F>(f: F, point: &[Tensor])
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, DiffError>,
{
    let report = grad_check(f, point, 1e-5).unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

#[test]
fn matmul_of_ones() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::full([2, 3], 1.0));
    let b = g.constant(Tensor::full([3, 2], 1.0));
    let c = g.matmul(a, b).unwrap();
    assert_eq!(g.value(c).shape(), &[2, 2]);
    assert!(g.value(c).data().iter().all(|&v| v == 3.0));
}

#[test]
fn matmul_shape_error_names_op() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::zeros([2, 3]));
    let b = g.constant(Tensor::zeros([2, 3]));
    let err = g.matmul(a, b).unwrap_err();
    assert_eq!(
        err,
        DiffError::Shape {
            op: "matmul",
            lhs: vec![2, 3],
            rhs: vec![2, 3]
        }
    );
    assert!(err.to_string().contains("matmul"));
}

#[test]
fn softmax_of_zeros_is_uniform() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros([3]));
    let s = g.softmax(x);
    for &v in g.value(s).data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
}

#[test]
fn conv1d_patch_count() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros([1, 800]));
    let w = g.constant(Tensor::zeros([4, 50]));
    let b = g.constant(Tensor::zeros([4]));
    let y = g.conv1d(x, w, b, 50).unwrap();
    assert_eq!(g.value(y).shape(), &[16, 4]);

    let long = g.constant(Tensor::zeros([4, 60]));
    assert!(g.conv1d(x, long, b, 50).is_ok());
    let too_long = g.constant(Tensor::zeros([4, 801]));
    assert!(g.conv1d(x, too_long, b, 50).is_err());
}

#[test]
fn sum_of_squares_gradient() {
    let mut g = Graph::new();
    let x = g.param(Tensor::vector(vec![1.0, 2.0, 3.0]));
    let sq = g.square(x);
    let y = g.sum(sq);
    let grads = g.backward_scalar(y).unwrap();
    assert_eq!(grads.get(x).data(), &[2.0, 4.0, 6.0]);
}

#[test]
fn constant_output_has_zero_gradient() {
    let mut g = Graph::new();
    let x = g.param(Tensor::vector(vec![1.0, 2.0]));
    let c = g.constant(Tensor::scalar(4.0));
    let y = g.scale(c, 2.0);
    let grads = g.backward_scalar(y).unwrap();
    assert!(!grads.reached(x));
    assert_eq!(grads.get(x).data(), &[0.0, 0.0]);
}

#[test]
fn seed_shape_must_match() {
    let mut g = Graph::new();
    let x = g.param(Tensor::vector(vec![1.0, 2.0]));
    let y = g.square(x);
    assert!(matches!(
        g.backward(y, &Tensor::scalar(1.0)),
        Err(DiffError::SeedShape { .. })
    ));
}

#[test]
fn inference_graph_cannot_backward() {
    let mut g = Graph::inference();
    let x = g.param(Tensor::scalar(1.0));
    let y = g.square(x);
    assert_eq!(g.backward_scalar(y).unwrap_err(), DiffError::NotRecorded);
}

#[test]
fn grad_check_quadratic() {
    let r = grad_check(
        |g, v| {
            let y = g.mul(v[0], v[0])?;
            Ok(g.sum(y))
        },
        &[Tensor::scalar(3.0)],
        1e-5,
    )
    .unwrap();
    assert!(r.max_rel_error < 1e-8, "{r:?}");
}

#[test]
fn grad_check_flags_kink() {
    // |x| = sqrt(x^2): central differences at 0 give 0, the analytic rule gives NaN.
    let r = grad_check(
        |g, v| {
            let sq = g.square(v[0]);
            let a = g.sqrt(sq);
            Ok(g.sum(a))
        },
        &[Tensor::scalar(0.0)],
        1e-5,
    )
    .unwrap();
    assert!(!(r.max_rel_error < 1e-4), "{r:?}");
}

#[test]
fn grad_check_rejects_vector_output_and_bad_step() {
    let f = |g: &mut Graph, v: &[Var]| Ok(g.square(v[0]));
    assert!(matches!(
        grad_check(f, &[Tensor::vector(vec![1.0, 2.0])], 1e-5),
        Err(DiffError::NonScalar(_))
    ));
    assert!(grad_check(f, &[Tensor::scalar(1.0)], 0.0).is_err());
}

#[test]
fn softmax_nll_composite_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let logits = rand_tensor(&[4, 5], &mut rng);
    check(
        |g, v| {
            let ls = g.log_softmax(v[0]);
            let picked = g.pick(ls, &[0, 3, 1, 4])?;
            let m = g.mean(picked);
            Ok(g.neg(m))
        },
        &[logits],
    );
}

#[test]
fn elementwise_and_broadcast_ops_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = rand_tensor(&[3, 4], &mut rng);
    let b = rand_tensor(&[3, 4], &mut rng);
    let p = positive_tensor(&[3, 4], &mut rng);
    let row = rand_tensor(&[4], &mut rng);
    check(
        |g, v| {
            let s = g.add(v[0], v[1])?;
            let d = g.sub(s, v[0])?;
            let m = g.mul(d, v[1])?;
            let q = g.div(m, v[2])?;
            let r = g.add_row(q, v[3])?;
            let r = g.mul_row(r, v[3])?;
            let r = g.scale(r, 0.7);
            project(g, r, 5)
        },
        &[a, b, p, row],
    );
}

#[test]
fn matmul_transpose_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = rand_tensor(&[3, 5], &mut rng);
    let b = rand_tensor(&[5, 2], &mut rng);
    check(
        |g, v| {
            let c = g.matmul(v[0], v[1])?;
            let t = g.transpose(c)?;
            project(g, t, 6)
        },
        &[a, b],
    );
}

#[test]
fn conv1d_gradients_with_overlap() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = rand_tensor(&[2, 11], &mut rng);
    let w = rand_tensor(&[3, 4], &mut rng);
    let b = rand_tensor(&[3], &mut rng);
    check(
        |g, v| {
            let y = g.conv1d(v[0], v[1], v[2], 3)?;
            project(g, y, 7)
        },
        &[x, w, b],
    );
}

#[test]
fn normalization_and_activation_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = rand_tensor(&[4, 6], &mut rng);
    check(
        |g, v| {
            let n = g.layer_norm(v[0], LAYER_NORM_EPS);
            let a = g.gelu(n);
            let s = g.softmax(a);
            project(g, s, 8)
        },
        &[x],
    );
}

#[test]
fn reduction_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = positive_tensor(&[3, 4], &mut rng);
    check(
        |g, v| {
            let sq = g.square(v[0]);
            let rs = g.sum_last(sq);
            let rt = g.sqrt(rs);
            let m = g.mean(rt);
            let s = g.sum(v[0]);
            let t = g.mul(m, s)?;
            Ok(t)
        },
        &[x],
    );
}

#[test]
fn structural_op_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let a = rand_tensor(&[3, 4], &mut rng);
    let b = rand_tensor(&[2, 4], &mut rng);
    let c = rand_tensor(&[5, 2], &mut rng);
    check(
        |g, v| {
            let rows = g.concat_rows(&[v[0], v[1]])?;
            let cols = g.concat_cols(&[rows, v[2]])?;
            let sl = g.slice_cols(cols, 1, 5)?;
            let ga = g.gather_rows(sl, &[4, 0, 0, 2])?;
            let rs = g.reshape(ga, &[2, 8])?;
            let pk = g.pick(rs, &[7, 1])?;
            let p1 = project(g, rs, 9)?;
            let p2 = g.sum(pk);
            g.add(p1, p2)
        },
        &[a, b, c],
    );
}

#[test]
fn softmax_rows_sum_to_one_and_layernorm_is_standardized() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut g = Graph::inference();
    let x = g.constant(
        Tensor::new(
            [8, 16],
            (0..128).map(|_| rng.random_range(-30.0..30.0)).collect(),
        )
        .unwrap(),
    );
    let s = g.softmax(x);
    for r in 0..8 {
        let sum: f64 = g.value(s).row(r).iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }
    // Output variance is exactly v / (v + eps); it is within 1e-8 of 1 once the
    // input variance exceeds 1e3.
    let wide = g.constant(
        Tensor::new(
            [8, 16],
            (0..128).map(|_| rng.random_range(-300.0..300.0)).collect(),
        )
        .unwrap(),
    );
    for input in [x, wide] {
        let n = g.layer_norm(input, LAYER_NORM_EPS);
        for r in 0..8 {
            let raw = g.value(input).row(r);
            let raw_mean = raw.iter().sum::<f64>() / 16.0;
            let raw_var = raw
                .iter()
                .map(|v| (v - raw_mean) * (v - raw_mean))
                .sum::<f64>()
                / 16.0;
            let row = g.value(n).row(r);
            let mean = row.iter().sum::<f64>() / 16.0;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 16.0;
            assert!(mean.abs() < 1e-10);
            assert!((var - raw_var / (raw_var + LAYER_NORM_EPS)).abs() < 1e-12);
            if raw_var > 1e3 {
                assert!((var - 1.0).abs() < 1e-8, "{var}");
            }
        }
    }
}

#[test]
fn backward_is_bit_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut g = Graph::new();
        let a = g.param(rand_tensor(&[6, 5], &mut rng));
        let b = g.param(rand_tensor(&[5, 6], &mut rng));
        let c = g.matmul(a, b).unwrap();
        let s = g.softmax(c);
        let n = g.layer_norm(s, LAYER_NORM_EPS);
        let y = project(&mut g, n, 3).unwrap();
        let grads = g.backward_scalar(y).unwrap();
        (grads.get(a), grads.get(b))
    };
    let (a1, b1) = run();
    let (a2, b2) = run();
    assert_eq!(a1.data(), a2.data());
    assert_eq!(b1.data(), b2.data());
}

mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn attention_like_composite_gradients(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let q = rand_tensor(&[4, 3], &mut rng);
            let k = rand_tensor(&[4, 3], &mut rng);
            let v = rand_tensor(&[4, 3], &mut rng);
            let report = grad_check(
                |g, x| {
                    let kt = g.transpose(x[1])?;
                    let s = g.matmul(x[0], kt)?;
                    let s = g.scale(s, 0.5);
                    let a = g.softmax(s);
                    let o = g.matmul(a, x[2])?;
                    let o = g.gelu(o);
                    project(g, o, seed ^ 0xabc)
                },
                &[q, k, v],
                1e-5,
            ).unwrap();
            prop_assert!(report.max_rel_error < 1e-4, "{:?}", report);
        }
    }
}
