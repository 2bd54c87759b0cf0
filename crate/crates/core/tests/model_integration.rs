//! Model-level contracts: forward shapes per variant, loss composition,
//! decoder output ranges, and checkpoint round trips through the codec.

use capsbench_core::checkpoint;
use capsbench_core::loss::{total_loss, MarginLossParams};
use capsbench_core::model::{build, classify, MaskSelect, ModelConfig, Variant};
use capsbench_core::tensor::Tensor;
use capsbench_core::Graph;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_images(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f32> {
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(0.0f32..1.0)).collect()).unwrap()
}

#[test]
fn baseline_forward_shapes() {
    let cfg = ModelConfig { pc_types: 2, ..ModelConfig::baseline((1, 28, 28), 10) };
    let model = build(&cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let images = random_images(&mut rng, &[2, 1, 28, 28]);
    let mut g = Graph::<f32>::new();
    let fwd = model.forward(&mut g, &images, MaskSelect::Labels(&[3, 7])).unwrap();
    assert_eq!(g.value(fwd.digit_caps).shape(), &[2, 10, 16]);
    assert_eq!(g.value(fwd.lengths).shape(), &[2, 10]);
    assert_eq!(g.value(fwd.reconstruction).shape(), &[2, 784]);
    // Sigmoid output range.
    assert!(g.value(fwd.reconstruction).data().iter().all(|&v| v > 0.0 && v < 1.0));
    assert_eq!(fwd.targets, vec![3, 7]);
}

#[test]
fn qcn_plus_reconstructs_cifar_shape() {
    let cfg = ModelConfig::qcn_plus((3, 32, 32), 10, 8);
    let model = build(&cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let images = random_images(&mut rng, &[2, 3, 32, 32]);
    let mut g = Graph::<f32>::new();
    let fwd = model.forward(&mut g, &images, MaskSelect::Largest).unwrap();
    assert_eq!(g.value(fwd.reconstruction).shape(), &[2, 3, 32, 32]);
    assert_eq!(model.config().variant, Variant::QcnPlus);
}

#[test]
fn qcn_plus_supports_40x40_and_rejects_unknown_shapes() {
    assert!(build(&ModelConfig::qcn_plus((1, 40, 40), 10, 4)).is_ok());
    let err = build(&ModelConfig::qcn_plus((3, 40, 40), 10, 4)).unwrap_err();
    assert!(matches!(err, capsbench_core::Error::Config { .. }), "{err:?}");
}

#[test]
fn variant_decoder_pairing_enforced() {
    use capsbench_core::model::DecoderKind;
    let bad = ModelConfig { decoder: DecoderKind::Deconv, ..ModelConfig::qcn((1, 28, 28), 10, 4) };
    assert!(build(&bad).is_err());
    let bad2 = ModelConfig { decoder: DecoderKind::Fc, ..ModelConfig::qcn_plus((1, 28, 28), 10, 4) };
    assert!(build(&bad2).is_err());
}

#[test]
fn model_loss_equals_margin_when_reconstruction_free() {
    let cfg = ModelConfig { recon_weight: 0.0, ..ModelConfig::qcn((1, 20, 20), 4, 2) };
    let model = build(&cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let images = random_images(&mut rng, &[3, 1, 20, 20]);
    let labels = [0usize, 2, 1];
    let one_hot = capsbench_core::data::one_hot(&[0, 2, 1], 4);

    let mut g = Graph::<f32>::new();
    let fwd = model.forward(&mut g, &images, MaskSelect::Labels(&labels)).unwrap();
    let loss = model.loss(&mut g, &fwd, &one_hot, &MarginLossParams::default()).unwrap();
    let margin_only =
        capsbench_core::loss::margin_loss(&mut g, fwd.lengths, &one_hot, &MarginLossParams::default())
            .unwrap();
    assert_eq!(g.value(loss).item(), g.value(margin_only).item());
}

#[test]
fn total_loss_composes_hand_terms() {
    // One sample, two classes: margin term 0.36 (weak true class at 0.3)
    // plus weighted SSE reconstruction term.
    let mut g = Graph::<f32>::new();
    let lengths = g.leaf(Tensor::from_vec(&[1, 2], vec![0.3, 0.1]).unwrap(), false);
    let labels = Tensor::from_vec(&[1, 2], vec![1.0f32, 0.0]).unwrap();
    let recon = g.leaf(Tensor::from_vec(&[1, 4], vec![0.5, 0.5, 0.5, 0.5]).unwrap(), false);
    let target = g.leaf(Tensor::from_vec(&[1, 4], vec![0.0, 1.0, 0.0, 1.0]).unwrap(), false);
    let loss = total_loss(
        &mut g,
        lengths,
        &labels,
        &MarginLossParams::default(),
        recon,
        target,
        0.5,
    )
    .unwrap();
    // margin = (0.9-0.3)^2 = 0.36; recon = 0.5 * 4 * 0.25 = 0.5
    assert!((g.value(loss).item() - 0.86).abs() < 1e-6);

    // Perfect lengths and perfect reconstruction cost nothing.
    let perfect_len = g.leaf(Tensor::from_vec(&[1, 2], vec![0.95, 0.05]).unwrap(), false);
    let same = g.leaf(Tensor::filled(&[1, 4], 0.25f32), false);
    let same2 = g.leaf(Tensor::filled(&[1, 4], 0.25f32), false);
    let zero = total_loss(
        &mut g,
        perfect_len,
        &labels,
        &MarginLossParams::default(),
        same,
        same2,
        0.5,
    )
    .unwrap();
    assert_eq!(g.value(zero).item(), 0.0);
}

#[test]
fn eval_masking_uses_largest_capsule() {
    let cfg = ModelConfig { seed: 11, ..ModelConfig::qcn((1, 20, 20), 4, 2) };
    let model = build(&cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let images = random_images(&mut rng, &[2, 1, 20, 20]);
    let mut g = Graph::<f32>::new();
    let fwd = model.forward(&mut g, &images, MaskSelect::Largest).unwrap();
    let predicted = classify(g.value(fwd.digit_caps));
    assert_eq!(fwd.targets, predicted);
}

#[test]
fn checkpoint_round_trip_is_bit_exact_and_preserves_outputs() {
    let cfg = ModelConfig { seed: 21, ..ModelConfig::qcn((1, 20, 20), 4, 3) };
    let model = build(&cfg).unwrap();
    let bytes = checkpoint::encode(model.params());

    let mut restored = build(&ModelConfig { seed: 99, ..cfg.clone() }).unwrap();
    let loaded = checkpoint::decode(&bytes).unwrap();
    restored.load_params(&loaded).unwrap();

    for (a, b) in model.params().iter().zip(restored.params()) {
        assert_eq!(a.name, b.name);
        for (x, y) in a.value.data().iter().zip(b.value.data()) {
            assert_eq!(x.to_bits(), y.to_bits(), "parameter {}", a.name);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let images = random_images(&mut rng, &[2, 1, 20, 20]);
    let mut ga = Graph::<f32>::new();
    let fa = model.forward(&mut ga, &images, MaskSelect::Largest).unwrap();
    let mut gb = Graph::<f32>::new();
    let fb = restored.forward(&mut gb, &images, MaskSelect::Largest).unwrap();
    assert_eq!(ga.value(fa.lengths).data(), gb.value(fb.lengths).data());
}

#[test]
fn checkpoint_rejects_mismatched_model() {
    let model = build(&ModelConfig::qcn((1, 20, 20), 4, 3)).unwrap();
    let bytes = checkpoint::encode(model.params());
    let loaded = checkpoint::decode(&bytes).unwrap();
    let mut other = build(&ModelConfig::qcn((1, 20, 20), 4, 2)).unwrap();
    assert!(other.load_params(&loaded).is_err());
}
