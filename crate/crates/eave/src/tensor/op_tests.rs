use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::check::{finite_diff_check, SampleSpec};
use super::graph::{Graph, NodeId};
use super::Tensor;
use crate::error::Error;

fn randn(rng: &mut ChaCha20Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn leaf(g: &mut Graph<f64>, data: &[f64], shape: &[usize]) -> NodeId {
    g.input(&Tensor::new(data.to_vec(), shape).unwrap().with_grad())
}

/// Checks one op against central finite differences. `build` receives leaves
/// for every `(shape, data)` input and returns the op output; the harness
/// turns it into a scalar by weighting with a fixed random tensor.
fn fd_check_op<F>(name: &str, inputs: &[(&[usize], Vec<f64>)], tol: f64, seed: u64, build: F)
where
    F: Fn(&mut Graph<f64>, &[NodeId]) -> NodeId,
{
    let sizes: Vec<usize> = inputs.iter().map(|(_, d)| d.len()).collect();
    let total: usize = sizes.iter().sum();
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x5eed);

    let run = |theta: &[f64], weights: &[f64]| -> (f64, Vec<f64>, Graph<f64>, Vec<NodeId>) {
        let mut g = Graph::<f64>::new();
        let mut ids = Vec::new();
        let mut off = 0;
        for (shape, _) in inputs {
            let n: usize = shape.iter().product();
            ids.push(leaf(&mut g, &theta[off..off + n], shape));
            off += n;
        }
        let out = build(&mut g, &ids);
        let w = g
            .constant(weights.to_vec(), g.shape(out).to_vec().as_slice())
            .unwrap();
        let prod = g.mul(out, w).unwrap();
        let loss = g.sum(prod);
        let v = g.data(loss)[0];
        (v, g.data(out).to_vec(), g, ids)
    };

    let theta: Vec<f64> = inputs.iter().flat_map(|(_, d)| d.iter().copied()).collect();
    // Probe output size once to size the weights.
    let probe = {
        let mut g = Graph::<f64>::new();
        let mut ids = Vec::new();
        let mut off = 0;
        for (shape, _) in inputs {
            let n: usize = shape.iter().product();
            ids.push(leaf(&mut g, &theta[off..off + n], shape));
            off += n;
        }
        let out = build(&mut g, &ids);
        g.value(out).numel()
    };
    let weights = randn(&mut rng, probe);

    let (_, _, mut g, ids) = run(&theta, &weights);
    let loss_id = NodeId(g.len() - 1);
    g.backward(loss_id).unwrap();
    let mut analytic = Vec::with_capacity(total);
    for id in &ids {
        analytic.extend_from_slice(g.grad(*id).unwrap());
    }

    let report = finite_diff_check(
        &theta,
        &analytic,
        |t| run(t, &weights).0,
        1e-4,
        SampleSpec::All,
    );
    assert!(
        report.max_rel < tol,
        "{name}: max relative error {} over {} coords",
        report.max_rel,
        report.coords
    );
}

// ── matmul ──────────────────────────────────────────────────────────────

#[test]
fn matmul_identity() {
    let mut g = Graph::<f32>::new();
    let a = g
        .constant(vec![1.0, 0.0, 0.0, 1.0], &[2, 2])
        .unwrap();
    let b = g
        .constant(vec![3.0, 4.0, 5.0, 6.0], &[2, 2])
        .unwrap();
    let c = g.matmul(a, b).unwrap();
    assert_eq!(g.data(c), &[3.0, 4.0, 5.0, 6.0]);
}

#[test]
fn matmul_zero() {
    let mut g = Graph::<f32>::new();
    let a = g.constant(vec![1.0, 2.0], &[1, 2]).unwrap();
    let b = g.constant(vec![0.0, 0.0], &[2, 1]).unwrap();
    let c = g.matmul(a, b).unwrap();
    assert_eq!(g.data(c), &[0.0]);
}

#[test]
fn matmul_matches_triple_loop_oracle() {
    let mut rng = ChaCha20Rng::seed_from_u64(11);
    let a = randn(&mut rng, 12);
    let b = randn(&mut rng, 8);
    // Independent brute-force oracle.
    let mut want = vec![0.0f64; 6];
    for i in 0..3 {
        for j in 0..2 {
            let mut s = 0.0;
            for p in 0..4 {
                s += a[i * 4 + p] * b[p * 2 + j];
            }
            want[i * 2 + j] = s;
        }
    }
    let mut g = Graph::<f32>::new();
    let an = g
        .constant(a.iter().map(|&v| v as f32).collect(), &[3, 4])
        .unwrap();
    let bn = g
        .constant(b.iter().map(|&v| v as f32).collect(), &[4, 2])
        .unwrap();
    let c = g.matmul(an, bn).unwrap();
    for (got, want) in g.data(c).iter().zip(&want) {
        assert!((*got as f64 - want).abs() < 1e-6);
    }
}

#[test]
fn matmul_shape_mismatch_names_both_shapes() {
    let mut g = Graph::<f32>::new();
    let a = g.constant(vec![0.0; 6], &[2, 3]).unwrap();
    let b = g.constant(vec![0.0; 8], &[4, 2]).unwrap();
    let err = g.matmul(a, b).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("[2, 3]") && msg.contains("[4, 2]"), "{msg}");
}

// ── softmax ─────────────────────────────────────────────────────────────

#[test]
fn softmax_uniform_row() {
    let mut g = Graph::<f32>::new();
    let x = g.constant(vec![0.0, 0.0, 0.0], &[1, 3]).unwrap();
    let y = g.softmax_rows(x, None).unwrap();
    for &v in g.data(y) {
        assert!((v - 1.0 / 3.0).abs() < 1e-7);
    }
}

#[test]
fn softmax_is_stable_for_huge_logits() {
    let mut g = Graph::<f32>::new();
    let x = g.constant(vec![1000.0, 0.0], &[1, 2]).unwrap();
    let y = g.softmax_rows(x, None).unwrap();
    let out = g.data(y);
    assert!(out[0].is_finite() && (out[0] - 1.0).abs() < 1e-6);
    assert!(out[1].abs() < 1e-6);
}

#[test]
fn softmax_masked_matches_direct_evaluation() {
    // 64-bit direct evaluation of softmax over the two live entries.
    let e1 = 1.0f64.exp();
    let e2 = 2.0f64.exp();
    let want = [e1 / (e1 + e2), e2 / (e1 + e2), 0.0];
    let mut g = Graph::<f64>::new();
    let x = g.constant(vec![1.0, 2.0, 3.0], &[1, 3]).unwrap();
    let y = g.softmax_rows(x, Some(&[true, true, false])).unwrap();
    for (got, want) in g.data(y).iter().zip(&want) {
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }
}

#[test]
fn softmax_fully_masked_row_reports_row_index() {
    let mut g = Graph::<f32>::new();
    let x = g.constant(vec![0.0; 6], &[2, 3]).unwrap();
    let err = g
        .softmax_rows(x, Some(&[true, true, true, false, false, false]))
        .unwrap_err();
    match err {
        Error::FullyMaskedRow { row } => assert_eq!(row, 1),
        other => panic!("unexpected error {other}"),
    }
}

#[test]
fn softmax_rows_sum_to_one() {
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    for _ in 0..50 {
        let data: Vec<f32> = (0..12).map(|_| rng.gen_range(-1e4..1e4)).collect();
        let mut g = Graph::<f32>::new();
        let x = g.constant(data, &[3, 4]).unwrap();
        let y = g.softmax_rows(x, None).unwrap();
        for row in g.data(y).chunks(4) {
            let s: f32 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }
}

// ── rms_norm ────────────────────────────────────────────────────────────

#[test]
fn rms_norm_zero_input_stays_zero() {
    let mut g = Graph::<f32>::new();
    let x = g.constant(vec![0.0; 8], &[2, 4]).unwrap();
    let gain = g.constant(vec![3.0; 4], &[4]).unwrap();
    let y = g.rms_norm(x, gain).unwrap();
    assert!(g.data(y).iter().all(|&v| v == 0.0));
}

#[test]
fn rms_norm_constant_row_is_unit_magnitude() {
    for c in [2.5f32, -0.7] {
        let mut g = Graph::<f32>::new();
        let x = g.constant(vec![c; 4], &[1, 4]).unwrap();
        let gain = g.constant(vec![1.0; 4], &[4]).unwrap();
        let y = g.rms_norm(x, gain).unwrap();
        for &v in g.data(y) {
            assert!((v - c.signum()).abs() < 1e-3, "{v}");
        }
    }
}

#[test]
fn rms_norm_matches_64bit_reference() {
    let mut rng = ChaCha20Rng::seed_from_u64(21);
    let x = randn(&mut rng, 6);
    let gain = randn(&mut rng, 6);
    let ms: f64 = x.iter().map(|v| v * v).sum::<f64>() / 6.0;
    let inv = 1.0 / (ms + 1e-6).sqrt();
    let want: Vec<f64> = x.iter().zip(&gain).map(|(&v, &g)| v * inv * g).collect();

    let mut g = Graph::<f32>::new();
    let xn = g
        .constant(x.iter().map(|&v| v as f32).collect(), &[1, 6])
        .unwrap();
    let gn = g
        .constant(gain.iter().map(|&v| v as f32).collect(), &[6])
        .unwrap();
    let y = g.rms_norm(xn, gn).unwrap();
    for (got, want) in g.data(y).iter().zip(&want) {
        assert!((*got as f64 - want).abs() < 1e-6);
    }
}

// ── backward basics ─────────────────────────────────────────────────────

#[test]
fn backward_of_sum_gives_ones() {
    let mut g = Graph::<f32>::new();
    let x = leaf32(&mut g, &[1.5, -2.0, 0.25], &[3]);
    let loss = g.sum(x);
    g.backward(loss).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[1.0, 1.0, 1.0]);
}

#[test]
fn backward_of_sum_of_squares_gives_two_x() {
    let mut g = Graph::<f32>::new();
    let x = leaf32(&mut g, &[1.5, -2.0, 0.25], &[3]);
    let sq = g.mul(x, x).unwrap();
    let loss = g.sum(sq);
    g.backward(loss).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[3.0, -4.0, 0.5]);
}

#[test]
fn backward_requires_scalar_loss() {
    let mut g = Graph::<f32>::new();
    let x = leaf32(&mut g, &[1.0, 2.0], &[2]);
    let err = g.backward(x).unwrap_err();
    assert!(matches!(err, Error::NonScalarLoss { .. }));
}

#[test]
fn graph_is_consumed_by_one_backward_pass() {
    let mut g = Graph::<f32>::new();
    let x = leaf32(&mut g, &[1.0], &[1]);
    let loss = g.sum(x);
    g.backward(loss).unwrap();
    assert!(matches!(g.backward(loss), Err(Error::GraphConsumed)));
}

#[test]
fn off_path_tensor_keeps_zero_grad() {
    let mut g = Graph::<f32>::new();
    let x = leaf32(&mut g, &[1.0, 2.0], &[2]);
    let unused = leaf32(&mut g, &[5.0], &[1]);
    let loss = g.sum(x);
    g.backward(loss).unwrap();
    assert_eq!(g.grad(unused).unwrap(), &[0.0]);
}

#[test]
fn fanout_accumulates_additively() {
    let mut g = Graph::<f32>::new();
    let x = leaf32(&mut g, &[2.0], &[1]);
    let a = g.add(x, x).unwrap(); // 2x
    let loss = g.sum(a);
    g.backward(loss).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[2.0]);
}

#[test]
fn backward_is_linear_in_the_loss() {
    // grad(a·f + b·g) == a·grad(f) + b·grad(g)
    let data = vec![0.3f32, -1.1, 2.0];
    let (a, b) = (0.7f32, -1.3f32);

    let grad_of = |scale_f: f32, scale_g: f32| -> Vec<f32> {
        let mut g = Graph::<f32>::new();
        let x = leaf32(&mut g, &data, &[3]);
        let f = {
            let sq = g.mul(x, x).unwrap();
            g.sum(sq)
        };
        let gg = g.sum(x);
        let sf = g.scale(f, scale_f);
        let sg = g.scale(gg, scale_g);
        let loss = g.add(sf, sg).unwrap();
        g.backward(loss).unwrap();
        g.grad(x).unwrap().to_vec()
    };

    let combined = grad_of(a, b);
    let gf = grad_of(1.0, 0.0);
    let gg = grad_of(0.0, 1.0);
    for i in 0..3 {
        let want = a * gf[i] + b * gg[i];
        assert!((combined[i] - want).abs() < 1e-6);
    }
}

#[test]
fn forward_is_deterministic_bit_for_bit() {
    let run = || -> Vec<f32> {
        let mut rng = ChaCha20Rng::seed_from_u64(99);
        let data: Vec<f32> = (0..24).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        let mut g = Graph::<f32>::new();
        let x = g.constant(data, &[4, 6]).unwrap();
        let gain = g.constant(vec![1.0; 6], &[6]).unwrap();
        let n = g.rms_norm(x, gain).unwrap();
        let s = g.softmax_rows(n, None).unwrap();
        let y = g.gelu(s);
        g.data(y).to_vec()
    };
    let a = run();
    let b = run();
    assert_eq!(
        a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
}

fn leaf32(g: &mut Graph<f32>, data: &[f32], shape: &[usize]) -> NodeId {
    g.input(&Tensor::new(data.to_vec(), shape).unwrap().with_grad())
}

// ── lerp endpoints ──────────────────────────────────────────────────────

#[test]
fn lerp_const_endpoints_return_the_inputs_themselves() {
    let mut g = Graph::<f32>::new();
    let a = g.constant(vec![1.0, 2.0], &[1, 2]).unwrap();
    let b = g.constant(vec![-3.0, 4.0], &[1, 2]).unwrap();
    assert_eq!(g.lerp_const(a, b, 0.0).unwrap(), a);
    assert_eq!(g.lerp_const(a, b, 1.0).unwrap(), b);
    let mid = g.lerp_const(a, b, 0.25).unwrap();
    assert_eq!(g.data(mid), &[0.0, 2.5]);
}

#[test]
fn lerp_node_at_zero_copies_a_but_still_routes_gradient_to_alpha() {
    let mut g = Graph::<f64>::new();
    let a = g.constant(vec![1.0, 2.0], &[1, 2]).unwrap();
    let b = g.constant(vec![5.0, -2.0], &[1, 2]).unwrap();
    let alpha = leaf(&mut g, &[0.0], &[1]);
    let y = g.lerp_node(a, b, alpha).unwrap();
    assert_eq!(g.data(y), &[1.0, 2.0]);
    let loss = g.sum(y);
    g.backward(loss).unwrap();
    // dL/dα = Σ (b - a) = (5-1) + (-2-2) = 0 here; use distinct sums below.
    assert_eq!(g.grad(alpha).unwrap(), &[0.0]);

    let mut g = Graph::<f64>::new();
    let a = g.constant(vec![1.0, 2.0], &[1, 2]).unwrap();
    let b = g.constant(vec![5.0, 1.0], &[1, 2]).unwrap();
    let alpha = leaf(&mut g, &[0.0], &[1]);
    let y = g.lerp_node(a, b, alpha).unwrap();
    let loss = g.sum(y);
    g.backward(loss).unwrap();
    assert_eq!(g.grad(alpha).unwrap(), &[3.0]);
}

// ── masked cross entropy ────────────────────────────────────────────────

#[test]
fn cross_entropy_peaked_logits_give_near_zero_loss() {
    let mut g = Graph::<f32>::new();
    let logits = g
        .constant(vec![20.0, 0.0, 0.0, 0.0, 20.0, 0.0], &[2, 3])
        .unwrap();
    let loss = g
        .masked_cross_entropy(logits, &[0, 1], &[true, true])
        .unwrap();
    assert!(g.data(loss)[0] < 1e-8);
}

#[test]
fn cross_entropy_uniform_logits_is_ln_classes() {
    let mut g = Graph::<f32>::new();
    let logits = g.constant(vec![0.0; 6], &[2, 3]).unwrap();
    let loss = g
        .masked_cross_entropy(logits, &[2, 0], &[true, true])
        .unwrap();
    assert!((g.data(loss)[0] - 3.0f32.ln()).abs() < 1e-6);
}

#[test]
fn cross_entropy_matches_hand_computation() {
    let logits = [0.2f64, -1.0, 0.5, 1.5, 0.0, -0.5];
    let gold = [2usize, 0];
    let valid = [true, false];
    // 64-bit hand computation over the single valid row.
    let row = &logits[0..3];
    let maxv = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = row.iter().map(|v| (v - maxv).exp()).sum();
    let want = sum.ln() - (row[gold[0]] - maxv);

    let mut g = Graph::<f64>::new();
    let l = g.constant(logits.to_vec(), &[2, 3]).unwrap();
    let loss = g.masked_cross_entropy(l, &gold, &valid).unwrap();
    assert!((g.data(loss)[0] - want).abs() < 1e-12);
}

#[test]
fn cross_entropy_rejects_all_masked() {
    let mut g = Graph::<f32>::new();
    let l = g.constant(vec![0.0; 6], &[2, 3]).unwrap();
    let err = g
        .masked_cross_entropy(l, &[0, 0], &[false, false])
        .unwrap_err();
    assert!(err.to_string().contains("masked"));
}

// ── finite differences across every op ──────────────────────────────────

#[test]
fn fd_matmul() {
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let a = randn(&mut rng, 6);
    let b = randn(&mut rng, 12);
    fd_check_op("matmul", &[(&[2, 3], a), (&[3, 4], b)], 1e-6, 1, |g, ids| {
        g.matmul(ids[0], ids[1]).unwrap()
    });
}

#[test]
fn fd_matmul_nt() {
    let mut rng = ChaCha20Rng::seed_from_u64(2);
    let a = randn(&mut rng, 6);
    let b = randn(&mut rng, 12);
    fd_check_op(
        "matmul_nt",
        &[(&[2, 3], a), (&[4, 3], b)],
        1e-6,
        2,
        |g, ids| g.matmul_nt(ids[0], ids[1]).unwrap(),
    );
}

#[test]
fn fd_add_and_bias_and_mul_and_scale() {
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let a = randn(&mut rng, 6);
    let b = randn(&mut rng, 6);
    fd_check_op("add", &[(&[2, 3], a), (&[2, 3], b)], 1e-6, 3, |g, ids| {
        g.add(ids[0], ids[1]).unwrap()
    });

    let x = randn(&mut rng, 6);
    let bias = randn(&mut rng, 3);
    fd_check_op(
        "add_bias",
        &[(&[2, 3], x), (&[3], bias)],
        1e-6,
        4,
        |g, ids| g.add_bias(ids[0], ids[1]).unwrap(),
    );

    let a = randn(&mut rng, 6);
    let b = randn(&mut rng, 6);
    fd_check_op("mul", &[(&[2, 3], a), (&[2, 3], b)], 1e-6, 5, |g, ids| {
        g.mul(ids[0], ids[1]).unwrap()
    });

    let x = randn(&mut rng, 6);
    fd_check_op("scale", &[(&[2, 3], x)], 1e-6, 6, |g, ids| {
        g.scale(ids[0], -1.7)
    });
}

#[test]
fn fd_gelu_rms_norm_softmax() {
    let mut rng = ChaCha20Rng::seed_from_u64(7);
    let x = randn(&mut rng, 8);
    fd_check_op("gelu", &[(&[2, 4], x)], 1e-5, 7, |g, ids| g.gelu(ids[0]));

    let x = randn(&mut rng, 8);
    let gain = randn(&mut rng, 4);
    fd_check_op(
        "rms_norm",
        &[(&[2, 4], x), (&[4], gain)],
        1e-5,
        8,
        |g, ids| g.rms_norm(ids[0], ids[1]).unwrap(),
    );

    let x = randn(&mut rng, 8);
    fd_check_op("softmax", &[(&[2, 4], x)], 1e-5, 9, |g, ids| {
        g.softmax_rows(ids[0], None).unwrap()
    });

    let x = randn(&mut rng, 8);
    let mask = [true, true, false, true, false, true, true, true];
    fd_check_op("softmax_masked", &[(&[2, 4], x)], 1e-5, 10, move |g, ids| {
        g.softmax_rows(ids[0], Some(&mask)).unwrap()
    });
}

#[test]
fn fd_structure_ops() {
    let mut rng = ChaCha20Rng::seed_from_u64(13);
    let table = randn(&mut rng, 12);
    fd_check_op("embedding", &[(&[4, 3], table)], 1e-6, 11, |g, ids| {
        g.embedding(ids[0], &[1, 0, 3, 1]).unwrap()
    });

    let a = randn(&mut rng, 6);
    let b = randn(&mut rng, 3);
    fd_check_op(
        "concat_rows",
        &[(&[2, 3], a), (&[1, 3], b)],
        1e-6,
        12,
        |g, ids| g.concat_rows(ids[0], ids[1]).unwrap(),
    );

    let x = randn(&mut rng, 12);
    fd_check_op("slice_rows", &[(&[4, 3], x)], 1e-6, 13, |g, ids| {
        g.slice_rows(ids[0], 1, 2).unwrap()
    });

    let x = randn(&mut rng, 12);
    fd_check_op("slice_cols", &[(&[3, 4], x)], 1e-6, 14, |g, ids| {
        g.slice_cols(ids[0], 1, 2).unwrap()
    });

    let a = randn(&mut rng, 6);
    let b = randn(&mut rng, 9);
    fd_check_op(
        "concat_cols",
        &[(&[3, 2], a), (&[3, 3], b)],
        1e-6,
        15,
        |g, ids| g.concat_cols(&[ids[0], ids[1]]).unwrap(),
    );
}

#[test]
fn fd_lerp_mask_dropout_ce() {
    let mut rng = ChaCha20Rng::seed_from_u64(17);
    let a = randn(&mut rng, 6);
    let b = randn(&mut rng, 6);
    fd_check_op(
        "lerp_const",
        &[(&[2, 3], a), (&[2, 3], b)],
        1e-6,
        16,
        |g, ids| g.lerp_const(ids[0], ids[1], 0.35).unwrap(),
    );

    let a = randn(&mut rng, 6);
    let b = randn(&mut rng, 6);
    fd_check_op(
        "lerp_node",
        &[(&[2, 3], a), (&[2, 3], b), (&[1], vec![0.4])],
        1e-6,
        17,
        |g, ids| g.lerp_node(ids[0], ids[1], ids[2]).unwrap(),
    );

    let x = randn(&mut rng, 6);
    fd_check_op("mask_rows", &[(&[3, 2], x)], 1e-6, 18, |g, ids| {
        g.mask_rows(ids[0], &[true, false, true]).unwrap()
    });

    let x = randn(&mut rng, 6);
    fd_check_op("dropout", &[(&[3, 2], x)], 1e-6, 19, |g, ids| {
        g.dropout(ids[0], &[true, false, true, true, false, true], 0.3)
            .unwrap()
    });

    let logits = randn(&mut rng, 9);
    fd_check_op("masked_ce", &[(&[3, 3], logits)], 1e-5, 20, |g, ids| {
        g.masked_cross_entropy(ids[0], &[1, 0, 2], &[true, false, true])
            .unwrap()
    });
}
