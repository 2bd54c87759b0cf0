//! Manual perf probe: times one training step per config.
use capsbench_core::loss::MarginLossParams;
use capsbench_core::model::{build, MaskSelect, ModelConfig};
use capsbench_core::optim::Adam;
use capsbench_core::tensor::Tensor;
use capsbench_core::Graph;
use std::time::Instant;

#[test]
#[ignore]
fn probe_step_times() {
    for (name, cfg, batch) in [
        ("baseline-mnist", ModelConfig::baseline((1, 28, 28), 10), 128usize),
        ("qcn6-mnist", ModelConfig::qcn((1, 28, 28), 10, 6), 128),
        ("qcn6-mnist-b32", ModelConfig::qcn((1, 28, 28), 10, 6), 32),
        ("baseline-cifar-t32-b32", ModelConfig::baseline((3, 32, 32), 10), 32),
    ] {
        let mut model = build(&cfg).unwrap();
        let (c, h, w) = cfg.input_shape;
        let n = batch * c * h * w;
        let images = Tensor::from_vec(&[batch, c, h, w], (0..n).map(|i| (i % 251) as f32 / 251.0).collect()).unwrap();
        let labels: Vec<usize> = (0..batch).map(|i| i % 10).collect();
        let labels_u32: Vec<u32> = labels.iter().map(|&l| l as u32).collect();
        let one_hot = capsbench_core::data::one_hot(&labels_u32, 10);
        let mut adam = Adam::new(0.001);

        // inference timing
        let t0 = Instant::now();
        {
            let mut g = Graph::<f32>::new();
            let _ = model.forward(&mut g, &images, MaskSelect::Largest).unwrap();
        }
        let infer = t0.elapsed();

        let t1 = Instant::now();
        {
            let mut g = Graph::<f32>::new();
            let fwd = model.forward(&mut g, &images, MaskSelect::Labels(&labels)).unwrap();
            let loss = model.loss(&mut g, &fwd, &one_hot, &MarginLossParams::default()).unwrap();
            g.backward(loss).unwrap();
            let grads: Vec<&[f32]> = fwd.param_vars.iter().map(|&v| g.grad(v).unwrap()).collect();
            adam.step(model.params_mut(), &grads).unwrap();
        }
        let train = t1.elapsed();
        println!("{name}: batch {batch}: infer {:.3}s train {:.3}s", infer.as_secs_f64(), train.as_secs_f64());
    }
}
