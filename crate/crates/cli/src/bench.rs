//! Step-time benchmarking: median wall time of a full training step
//! (forward + backward + update) and of an inference step (forward only),
//! measured on seeded synthetic batches of the configured geometry. Warm-up
//! steps run first and never enter the medians; the clock is monotonic.

use std::path::Path;
use std::time::Instant;

use capsbench_core::data::one_hot;
use capsbench_core::loss::MarginLossParams;
use capsbench_core::model::{build, count_parameters, MaskSelect};
use capsbench_core::optim::Adam;
use capsbench_core::Graph;

use serde_json::json;

use crate::config::RunConfig;
use crate::metrics::{MetricsRecord, MetricsWriter};
use crate::runmeta::write_run_meta;
use crate::{synth, CliResult};

#[derive(Debug, Clone)]
pub struct BenchRow {
    pub name: String,
    pub batch_size: usize,
    pub param_count: usize,
    pub train_median_s: f64,
    pub infer_median_s: f64,
    /// Raw timed samples (warm-ups excluded).
    pub train_times: Vec<f64>,
    pub infer_times: Vec<f64>,
}

fn median(samples: &mut [f64]) -> f64 {
    samples.sort_by(|a, b| a.partial_cmp(b).expect("finite timings"));
    let n = samples.len();
    if n % 2 == 1 {
        samples[n / 2]
    } else {
        0.5 * (samples[n / 2 - 1] + samples[n / 2])
    }
}

/// Times one configuration. `timed` is the number of measured steps per
/// phase; at least one warm-up per phase is excluded from the medians.
pub fn bench_config(cfg: &RunConfig, timed: usize, warmups: usize) -> CliResult<BenchRow> {
    assert!(timed >= 1, "need at least one timed batch");
    let warmups = warmups.max(1);
    let mut model = build(&cfg.model)?;
    let params = count_parameters(&model);
    let margin = MarginLossParams::default();
    let mut adam = Adam::new(cfg.learning_rate);

    let data = synth::noise(
        cfg.batch_size,
        cfg.model.input_shape,
        cfg.model.num_classes,
        cfg.seed ^ 0xbe7c_0001,
    );
    let images = data.images().clone();
    let labels: Vec<usize> = data.labels().iter().map(|&l| l as usize).collect();
    let labels_oh = one_hot(data.labels(), cfg.model.num_classes);

    let mut train_step = |model: &mut capsbench_core::model::Model| -> CliResult<()> {
        let mut g = Graph::<f32>::new();
        let fwd = model.forward(&mut g, &images, MaskSelect::Labels(&labels))?;
        let loss = model.loss(&mut g, &fwd, &labels_oh, &margin)?;
        g.backward(loss)?;
        let grads: Vec<&[f32]> = fwd
            .param_vars
            .iter()
            .map(|&v| g.grad(v).expect("gradient populated"))
            .collect();
        adam.step(model.params_mut(), &grads)?;
        Ok(())
    };

    let mut train_times = Vec::with_capacity(timed);
    for i in 0..warmups + timed {
        let t0 = Instant::now();
        train_step(&mut model)?;
        let dt = t0.elapsed().as_secs_f64();
        if i >= warmups {
            train_times.push(dt);
        }
    }

    let infer_step = |model: &capsbench_core::model::Model| -> CliResult<()> {
        let mut g = Graph::<f32>::new();
        let _ = model.forward(&mut g, &images, MaskSelect::Largest)?;
        Ok(())
    };
    let mut infer_times = Vec::with_capacity(timed);
    for i in 0..warmups + timed {
        let t0 = Instant::now();
        infer_step(&model)?;
        let dt = t0.elapsed().as_secs_f64();
        if i >= warmups {
            infer_times.push(dt);
        }
    }

    let train_median_s = median(&mut train_times);
    let infer_median_s = median(&mut infer_times);
    Ok(BenchRow {
        name: cfg.name.clone(),
        batch_size: cfg.batch_size,
        param_count: params,
        train_median_s,
        infer_median_s,
        train_times,
        infer_times,
    })
}

/// Benchmarks every config, persists paired records, and prints speed
/// ratios relative to the first config.
pub fn cmd_bench(
    cfgs: &[RunConfig],
    timed: usize,
    warmups: usize,
    out_dir: &Path,
) -> CliResult<Vec<BenchRow>> {
    let mut writer = MetricsWriter::open(out_dir)?;
    let mut rows = Vec::with_capacity(cfgs.len());
    for cfg in cfgs {
        let row = bench_config(cfg, timed, warmups)?;
        println!(
            "{}: train step {:.4}s, inference step {:.4}s (batch {}, {} params)",
            row.name, row.train_median_s, row.infer_median_s, row.batch_size, row.param_count
        );
        for (phase_tag, seconds) in
            [("train-step", row.train_median_s), ("infer-step", row.infer_median_s)]
        {
            let record = MetricsRecord::new(
                format!("{}-{phase_tag}", cfg.run_id()),
                "bench",
                0,
                f64::NAN,
                f64::NAN,
                seconds,
                row.param_count,
            );
            writer.append(&record)?;
        }
        write_run_meta(
            &out_dir.join(format!("bench-{}", cfg.name)),
            "bench",
            cfg,
            &[],
            json!({ "timed_batches": timed, "warmups": warmups }),
        )?;
        rows.push(row);
    }
    if rows.len() > 1 {
        let base = &rows[0];
        for row in &rows[1..] {
            println!(
                "{} vs {}: train {:.2}x, inference {:.2}x",
                base.name,
                row.name,
                base.train_median_s / row.train_median_s,
                base.infer_median_s / row.infer_median_s
            );
        }
    }
    Ok(rows)
}
