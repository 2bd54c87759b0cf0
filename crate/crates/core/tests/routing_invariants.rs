//! Routing and squash contracts: an independent 64-bit straight-line
//! transcription of the routing loop as the oracle, coupling normalization
//! at every iteration, degenerate single-output routing, permutation
//! equivariance, and prediction-transform arithmetic.

#![allow(clippy::identity_op)] // dims spelled out as shapes

use capsbench_core::capsule::{dynamic_routing, squash};
use capsbench_core::tensor::Tensor;
use capsbench_core::Graph;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Independent reference: the routing loop written as plain nested loops in
/// f64, never touching the engine.
fn reference_routing(u_hat: &[f64], b: usize, n: usize, m: usize, d: usize, iters: usize) -> Vec<f64> {
    let mut logits = vec![0.0f64; b * n * m];
    let mut v = vec![0.0f64; b * m * d];
    for it in 0..iters {
        let mut couplings = vec![0.0f64; b * n * m];
        for bi in 0..b {
            for i in 0..n {
                let row = &logits[(bi * n + i) * m..(bi * n + i + 1) * m];
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = row.iter().map(|&x| (x - max).exp()).collect();
                let sum: f64 = exps.iter().sum();
                for j in 0..m {
                    couplings[(bi * n + i) * m + j] = exps[j] / sum;
                }
            }
        }
        let mut pooled = vec![0.0f64; b * m * d];
        for bi in 0..b {
            for i in 0..n {
                for j in 0..m {
                    let c = couplings[(bi * n + i) * m + j];
                    for dd in 0..d {
                        pooled[(bi * m + j) * d + dd] += c * u_hat[((bi * n + i) * m + j) * d + dd];
                    }
                }
            }
        }
        for bi in 0..b {
            for j in 0..m {
                let row = &pooled[(bi * m + j) * d..(bi * m + j + 1) * d];
                let norm_sq: f64 = row.iter().map(|x| x * x).sum();
                let factor = norm_sq / ((1.0 + norm_sq) * (norm_sq + 1e-8).sqrt());
                for dd in 0..d {
                    v[(bi * m + j) * d + dd] = row[dd] * factor;
                }
            }
        }
        if it + 1 < iters {
            for bi in 0..b {
                for i in 0..n {
                    for j in 0..m {
                        let mut dot = 0.0;
                        for dd in 0..d {
                            dot += u_hat[((bi * n + i) * m + j) * d + dd] * v[(bi * m + j) * d + dd];
                        }
                        logits[(bi * n + i) * m + j] += dot;
                    }
                }
            }
        }
    }
    v
}

#[test]
fn engine_matches_straight_line_transcription() {
    let (b, n, m, d) = (1usize, 2usize, 2usize, 16usize);
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let data_f32: Vec<f32> = (0..b * n * m * d).map(|_| rng.gen_range(-0.5f32..0.5)).collect();
    let data_f64: Vec<f64> = data_f32.iter().map(|&v| v as f64).collect();

    let want = reference_routing(&data_f64, b, n, m, d, 3);

    let mut g = Graph::<f32>::new();
    let u_hat = g.leaf(Tensor::from_vec(&[b, n, m, d], data_f32).unwrap(), false);
    let (out, _) = dynamic_routing(&mut g, u_hat, 3).unwrap();
    let got = g.value(out).data();

    assert_eq!(got.len(), want.len());
    for (a, w) in got.iter().zip(&want) {
        assert!((*a as f64 - w).abs() < 1e-5, "{a} vs {w}");
    }
}

#[test]
fn couplings_normalized_at_every_iteration() {
    let (b, n, m, d) = (2usize, 5usize, 4usize, 8usize);
    let mut rng = ChaCha8Rng::seed_from_u64(78);
    // Large predictions push the logits far from zero across iterations.
    let data: Vec<f32> = (0..b * n * m * d).map(|_| rng.gen_range(-4.0f32..4.0)).collect();

    let mut g = Graph::<f32>::new();
    let u_hat = g.leaf(Tensor::from_vec(&[b, n, m, d], data).unwrap(), false);
    let (_, state) = dynamic_routing(&mut g, u_hat, 4).unwrap();
    assert_eq!(state.couplings.len(), 4);
    for (iter, &c_var) in state.couplings.iter().enumerate() {
        let c = g.value(c_var);
        for bi in 0..b {
            for i in 0..n {
                let row = &c.data()[(bi * n + i) * m..(bi * n + i + 1) * m];
                let sum: f32 = row.iter().sum();
                assert!(
                    (sum - 1.0).abs() < 1e-6,
                    "iteration {iter}: coupling slice sums to {sum}"
                );
                assert!(row.iter().all(|&v| v > 0.0));
            }
        }
    }
}

#[test]
fn logits_start_at_zero_each_pass() {
    let mut g = Graph::<f32>::new();
    let u = g.leaf(Tensor::filled(&[1, 2, 3, 4], 0.3f32), false);
    let (_, state) = dynamic_routing(&mut g, u, 2).unwrap();
    assert!(g.value(state.logits[0]).data().iter().all(|&v| v == 0.0));
}

#[test]
fn single_output_routing_equals_squashed_sum() {
    // M=1: softmax over a singleton pins every coupling to exactly 1, so
    // routing must reproduce squash(sum_i u_hat_i) bit for bit.
    let (b, n, d) = (2usize, 7usize, 8usize);
    let mut rng = ChaCha8Rng::seed_from_u64(79);
    let data: Vec<f32> = (0..b * n * d).map(|_| rng.gen_range(-1.0f32..1.0)).collect();

    let mut g = Graph::<f32>::new();
    let u_hat = g.leaf(Tensor::from_vec(&[b, n, 1, d], data.clone()).unwrap(), false);
    let (routed, state) = dynamic_routing(&mut g, u_hat, 3).unwrap();
    for &c_var in &state.couplings {
        assert!(g.value(c_var).data().iter().all(|&c| c == 1.0));
    }

    let u = g.leaf(Tensor::from_vec(&[b, n, d], data).unwrap(), false);
    let summed = g.reduce_sum(u, 1).unwrap();
    let caps = g.reshape(summed, &[b, 1, d]).unwrap();
    let direct = squash(&mut g, caps).unwrap();

    assert_eq!(g.value(routed).data(), g.value(direct).data());
}

#[test]
fn uniform_couplings_after_single_iteration() {
    let mut g = Graph::<f32>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(80);
    let data: Vec<f32> = (0..1 * 4 * 5 * 8).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
    let u_hat = g.leaf(Tensor::from_vec(&[1, 4, 5, 8], data).unwrap(), false);
    let (_, state) = dynamic_routing(&mut g, u_hat, 1).unwrap();
    for &c in g.value(state.couplings[0]).data() {
        assert!((c - 0.2).abs() < 1e-7);
    }
}

#[test]
fn routing_is_equivariant_under_input_permutation() {
    let (b, n, m, d_in, d_out) = (1usize, 5usize, 3usize, 4usize, 6usize);
    let mut rng = ChaCha8Rng::seed_from_u64(81);
    let u_data: Vec<f32> = (0..b * n * d_in).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
    let w_data: Vec<f32> = (0..n * m * d_in * d_out).map(|_| rng.gen_range(-0.5f32..0.5)).collect();

    let perm = [3usize, 0, 4, 1, 2];
    let mut u_perm = vec![0.0f32; u_data.len()];
    let mut w_perm = vec![0.0f32; w_data.len()];
    let u_stride = d_in;
    let w_stride = m * d_in * d_out;
    for (dst, &src) in perm.iter().enumerate() {
        u_perm[dst * u_stride..(dst + 1) * u_stride]
            .copy_from_slice(&u_data[src * u_stride..(src + 1) * u_stride]);
        w_perm[dst * w_stride..(dst + 1) * w_stride]
            .copy_from_slice(&w_data[src * w_stride..(src + 1) * w_stride]);
    }

    let route = |u_data: &[f32], w_data: &[f32]| -> Vec<f32> {
        let mut g = Graph::<f32>::new();
        let u = g.leaf(Tensor::from_vec(&[b, n, d_in], u_data.to_vec()).unwrap(), false);
        let w = g.leaf(Tensor::from_vec(&[n, m, d_in, d_out], w_data.to_vec()).unwrap(), false);
        let u_hat = g.caps_predict(u, w).unwrap();
        let (out, _) = dynamic_routing(&mut g, u_hat, 3).unwrap();
        g.value(out).data().to_vec()
    };

    let base = route(&u_data, &w_data);
    let permuted = route(&u_perm, &w_perm);
    for (a, p) in base.iter().zip(&permuted) {
        assert!((a - p).abs() < 1e-5, "{a} vs {p}");
    }
}

#[test]
fn squash_norm_is_monotone_in_input_norm() {
    let mut rng = ChaCha8Rng::seed_from_u64(82);
    let mut norms = Vec::new();
    for _ in 0..50 {
        let data: Vec<f32> = (0..6).map(|_| rng.gen_range(-3.0f32..3.0)).collect();
        let in_norm: f32 = data.iter().map(|v| v * v).sum::<f32>().sqrt();
        let mut g = Graph::<f32>::new();
        let x = g.leaf(Tensor::from_vec(&[1, 1, 6], data).unwrap(), false);
        let y = squash(&mut g, x).unwrap();
        let out_norm: f32 = g.value(y).data().iter().map(|v| v * v).sum::<f32>().sqrt();
        assert!(out_norm < 1.0, "squash norm must stay below one, got {out_norm}");
        norms.push((in_norm, out_norm));
    }
    norms.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    for pair in norms.windows(2) {
        assert!(
            pair[0].1 <= pair[1].1,
            "monotonicity violated: {:?} then {:?}",
            pair[0],
            pair[1]
        );
    }
}

#[test]
fn prediction_transform_arithmetic() {
    // Identity-extended transform embeds each capsule in the first dims.
    let mut w = vec![0.0f32; 1 * 1 * 4 * 8];
    for i in 0..4 {
        w[i * 8 + i] = 1.0;
    }
    let mut g = Graph::<f32>::new();
    let u = g.leaf(Tensor::from_vec(&[1, 1, 4], vec![0.1, -0.2, 0.3, -0.4]).unwrap(), false);
    let bank = g.leaf(Tensor::from_vec(&[1, 1, 4, 8], w).unwrap(), false);
    let pred = g.caps_predict(u, bank).unwrap();
    assert_eq!(
        g.value(pred).data(),
        &[0.1, -0.2, 0.3, -0.4, 0.0, 0.0, 0.0, 0.0]
    );

    // Hand matrix-vector product for a single pair.
    let w_hand: Vec<f32> = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // [2 in, 3 out]
    let mut g2 = Graph::<f32>::new();
    let u2 = g2.leaf(Tensor::from_vec(&[1, 1, 2], vec![2.0, -1.0]).unwrap(), false);
    let bank2 = g2.leaf(Tensor::from_vec(&[1, 1, 2, 3], w_hand).unwrap(), false);
    let pred2 = g2.caps_predict(u2, bank2).unwrap();
    // u^T W = [2*1 - 1*4, 2*2 - 1*5, 2*3 - 1*6]
    assert_eq!(g2.value(pred2).data(), &[-2.0, -1.0, 0.0]);

    // Linearity: doubling u doubles the predictions exactly.
    let mut g3 = Graph::<f32>::new();
    let u3 = g3.leaf(Tensor::from_vec(&[1, 1, 2], vec![4.0, -2.0]).unwrap(), false);
    let bank3 = g3.leaf(
        Tensor::from_vec(&[1, 1, 2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap(),
        false,
    );
    let pred3 = g3.caps_predict(u3, bank3).unwrap();
    let doubled: Vec<f32> = g2.value(pred2).data().iter().map(|v| v * 2.0).collect();
    assert_eq!(g3.value(pred3).data(), doubled.as_slice());
}

#[test]
fn conv_primary_caps_geometry_and_zero_features() {
    use capsbench_core::capsule::{conv_primary_caps, fc_primary_caps};

    // 20x20 features, stride-2 9x9 kernel -> 6x6 grid; 2 types of dim 8.
    let mut g = Graph::<f32>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(83);
    let feats_data: Vec<f32> = (0..8 * 20 * 20).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
    let feats = g.leaf(Tensor::from_vec(&[1, 8, 20, 20], feats_data).unwrap(), false);
    let kernel = g.leaf(Tensor::filled(&[16, 8, 9, 9], 0.01f32), false);
    let bias = g.leaf(Tensor::zeros(&[16]), false);
    let caps = conv_primary_caps(&mut g, feats, kernel, bias, 2).unwrap();
    assert_eq!(g.value(caps).shape(), &[1, 2 * 6 * 6, 8]);

    // Too-small spatial extent is a geometry error.
    let tiny = g.leaf(Tensor::zeros(&[1, 8, 5, 5]), false);
    let k2 = g.leaf(Tensor::zeros(&[16, 8, 9, 9]), false);
    let b2 = g.leaf(Tensor::zeros(&[16]), false);
    let err = conv_primary_caps(&mut g, tiny, k2, b2, 2).unwrap_err();
    assert!(matches!(err, capsbench_core::Error::Geometry { .. }), "{err:?}");

    // FC primary capsules: shape contract and all-zero features.
    let feats0 = g.leaf(Tensor::zeros(&[2, 4, 5, 5]), false);
    let w = g.leaf(Tensor::filled(&[100, 48], 0.3f32), false);
    let b3 = g.leaf(Tensor::zeros(&[48]), false);
    let caps6 = fc_primary_caps(&mut g, feats0, w, b3, 6).unwrap();
    assert_eq!(g.value(caps6).shape(), &[2, 6, 8]);
    assert!(g.value(caps6).data().iter().all(|&v| v == 0.0));
}
