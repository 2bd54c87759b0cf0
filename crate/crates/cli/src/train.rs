//! Training and evaluation loops.
//!
//! Training is single-threaded and bit-reproducible given the seed: model
//! init, epoch shuffles, and every kernel are deterministic. Evaluation may
//! fan batches out across threads (`CAPSBENCH_THREADS`); the aggregate is
//! identical regardless of thread count because per-batch results are
//! folded in batch order.

use std::path::{Path, PathBuf};
use std::time::Instant;

use capsbench_core::checkpoint;
use capsbench_core::data::{batches, one_hot, Dataset};
use capsbench_core::loss::MarginLossParams;
use capsbench_core::model::{build, classify_lengths, count_parameters, MaskSelect, Model};
use capsbench_core::optim::Adam;
use capsbench_core::Graph;

use serde_json::json;

use crate::config::RunConfig;
use crate::datasets::{load_split, Split};
use crate::metrics::{MetricsRecord, MetricsWriter};
use crate::runmeta::write_run_meta;
use crate::{CliError, CliResult};

#[derive(Debug)]
pub struct TrainOutcome {
    pub final_test: MetricsRecord,
    pub checkpoint_path: PathBuf,
    pub epoch_train_loss: Vec<f64>,
    pub mean_train_step_s: f64,
}

/// One gradient step over a batch; returns (loss, correct-count).
fn train_step(
    model: &mut Model,
    adam: &mut Adam,
    images: &capsbench_core::Tensor<f32>,
    labels: &[u32],
    one_hot_labels: &capsbench_core::Tensor<f32>,
    margin: &MarginLossParams,
) -> CliResult<(f64, usize)> {
    let label_ix: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
    let mut g = Graph::<f32>::new();
    let fwd = model.forward(&mut g, images, MaskSelect::Labels(&label_ix))?;
    let loss = model.loss(&mut g, &fwd, one_hot_labels, margin)?;
    let loss_value = g.value(loss).item() as f64;
    let predicted = classify_lengths(g.value(fwd.lengths));
    let correct = predicted.iter().zip(&label_ix).filter(|(p, l)| p == l).count();
    g.backward(loss)?;
    let grads: Vec<&[f32]> = fwd
        .param_vars
        .iter()
        .map(|&v| g.grad(v).expect("parameter gradient populated"))
        .collect();
    adam.step(model.params_mut(), &grads)?;
    Ok((loss_value, correct))
}

/// Full training run driven by the config's datasets. Emits one train
/// record per epoch plus a final test record, and writes the checkpoint.
pub fn cmd_train(cfg: &RunConfig, out_dir: &Path) -> CliResult<TrainOutcome> {
    let train = load_split(cfg, Split::Train)?;
    let test = load_split(cfg, Split::Test)?;
    train_on(cfg, &train.dataset, &test.dataset, out_dir, &train.files, "train")
}

/// Training loop over already-loaded datasets (the affine protocol pads its
/// own data before calling this).
pub fn train_on(
    cfg: &RunConfig,
    train_set: &Dataset,
    test_set: &Dataset,
    out_dir: &Path,
    dataset_files: &[(PathBuf, String)],
    command: &str,
) -> CliResult<TrainOutcome> {
    if train_set.geometry() != cfg.model.input_shape {
        return Err(CliError::Config(format!(
            "dataset geometry {:?} does not match model input {:?}",
            train_set.geometry(),
            cfg.model.input_shape
        )));
    }
    let mut model = build(&cfg.model)?;
    let params = count_parameters(&model);
    let mut adam = Adam::new(cfg.learning_rate);
    let margin = MarginLossParams::default();
    let mut writer = MetricsWriter::open(out_dir)?;
    write_run_meta(
        out_dir,
        command,
        cfg,
        dataset_files,
        json!({ "train_samples": train_set.n(), "test_samples": test_set.n() }),
    )?;

    let run_id = cfg.run_id();
    let mut epoch_train_loss = Vec::with_capacity(cfg.epochs);
    let mut steps = 0usize;
    let mut step_seconds = 0.0f64;

    for epoch in 1..=cfg.epochs {
        let epoch_start = Instant::now();
        let mut loss_sum = 0.0f64;
        let mut sample_count = 0usize;
        let mut correct = 0usize;
        let shuffle = cfg.seed.wrapping_add(epoch as u64);
        for batch in batches(train_set, cfg.batch_size, Some(shuffle)) {
            let t0 = Instant::now();
            let (loss, batch_correct) =
                train_step(&mut model, &mut adam, &batch.images, &batch.labels, &batch.one_hot, &margin)?;
            step_seconds += t0.elapsed().as_secs_f64();
            steps += 1;
            let bs = batch.labels.len();
            loss_sum += loss * bs as f64;
            sample_count += bs;
            correct += batch_correct;
        }
        let mean_loss = loss_sum / sample_count.max(1) as f64;
        let accuracy = correct as f64 / sample_count.max(1) as f64;
        epoch_train_loss.push(mean_loss);
        let record = MetricsRecord::new(
            &run_id,
            "train",
            epoch,
            mean_loss,
            accuracy,
            epoch_start.elapsed().as_secs_f64(),
            params,
        );
        writer.append(&record)?;
        println!(
            "epoch {epoch}/{}: train loss {mean_loss:.6} acc {accuracy:.4} ({:.1}s)",
            cfg.epochs,
            epoch_start.elapsed().as_secs_f64()
        );
    }

    let eval = evaluate(&model, test_set, cfg.batch_size, crate::eval_threads_from_env())?;
    let final_test = MetricsRecord::new(
        &run_id,
        "test",
        cfg.epochs,
        eval.mean_loss,
        eval.accuracy,
        eval.wall_time_s,
        params,
    );
    writer.append(&final_test)?;
    println!("test: loss {:.6} acc {:.4}", eval.mean_loss, eval.accuracy);

    let checkpoint_path = out_dir.join("checkpoint.qcn");
    std::fs::write(&checkpoint_path, checkpoint::encode(model.params()))?;

    Ok(TrainOutcome {
        final_test,
        checkpoint_path,
        epoch_train_loss,
        mean_train_step_s: step_seconds / steps.max(1) as f64,
    })
}

/// Repeated training with seeds seed, seed+1, ...; reports mean and spread
/// of the final test accuracy.
pub fn cmd_train_repeat(cfg: &RunConfig, out_dir: &Path, repeats: usize) -> CliResult<Vec<TrainOutcome>> {
    let mut outcomes = Vec::with_capacity(repeats);
    for r in 0..repeats {
        let mut run = cfg.clone();
        run.seed = cfg.seed + r as u64;
        run.model.seed = run.seed;
        let sub = out_dir.join(format!("repeat-{r}"));
        outcomes.push(cmd_train(&run, &sub)?);
    }
    if repeats > 1 {
        let accs: Vec<f64> = outcomes.iter().map(|o| o.final_test.accuracy).collect();
        let mean = accs.iter().sum::<f64>() / accs.len() as f64;
        let min = accs.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = accs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let summary = json!({ "repeats": repeats, "accuracy_mean": mean, "accuracy_min": min, "accuracy_max": max });
        std::fs::write(
            out_dir.join("repeat_summary.json"),
            serde_json::to_string_pretty(&summary).expect("summary serializes"),
        )?;
        println!("repeat summary: mean acc {mean:.4} (min {min:.4}, max {max:.4})");
    }
    Ok(outcomes)
}

#[derive(Debug, Clone, Copy)]
pub struct EvalResult {
    pub accuracy: f64,
    pub mean_loss: f64,
    pub wall_time_s: f64,
    pub samples: usize,
}

/// Frozen-model evaluation. `threads` > 1 evaluates batch chunks
/// concurrently; results fold in batch order either way.
pub fn evaluate(
    model: &Model,
    dataset: &Dataset,
    batch_size: usize,
    threads: usize,
) -> CliResult<EvalResult> {
    let margin = MarginLossParams::default();
    let n = dataset.n();
    if n == 0 {
        return Err(CliError::Config("cannot evaluate an empty dataset".into()));
    }
    let num_batches = n.div_ceil(batch_size);
    let started = Instant::now();

    let eval_batch = |batch_ix: usize| -> CliResult<(f64, usize, usize)> {
        let lo = batch_ix * batch_size;
        let hi = (lo + batch_size).min(n);
        let indices: Vec<usize> = (lo..hi).collect();
        let sub = dataset.select(&indices);
        let labels_oh = one_hot(sub.labels(), dataset.num_classes());
        let mut g = Graph::<f32>::new();
        let fwd = model.forward(&mut g, sub.images(), MaskSelect::Largest)?;
        let loss = model.loss(&mut g, &fwd, &labels_oh, &margin)?;
        let loss_value = g.value(loss).item() as f64 * sub.n() as f64;
        let predicted = classify_lengths(g.value(fwd.lengths));
        let correct = predicted
            .iter()
            .zip(sub.labels())
            .filter(|(p, l)| **p == **l as usize)
            .count();
        Ok((loss_value, correct, sub.n()))
    };

    let mut per_batch: Vec<(f64, usize, usize)> = Vec::with_capacity(num_batches);
    if threads <= 1 {
        for b in 0..num_batches {
            per_batch.push(eval_batch(b)?);
        }
    } else {
        let mut slots: Vec<Option<CliResult<(f64, usize, usize)>>> =
            (0..num_batches).map(|_| None).collect();
        std::thread::scope(|scope| {
            let mut handles = Vec::new();
            for t in 0..threads.min(num_batches) {
                let eval_batch = &eval_batch;
                handles.push((
                    t,
                    scope.spawn(move || {
                        let mut mine = Vec::new();
                        let mut b = t;
                        while b < num_batches {
                            mine.push((b, eval_batch(b)));
                            b += threads;
                        }
                        mine
                    }),
                ));
            }
            for (_, h) in handles {
                for (b, res) in h.join().expect("eval worker panicked") {
                    slots[b] = Some(res);
                }
            }
        });
        for slot in slots {
            per_batch.push(slot.expect("all batches evaluated")?);
        }
    }

    let mut loss_sum = 0.0f64;
    let mut correct = 0usize;
    let mut count = 0usize;
    for (l, c, s) in per_batch {
        loss_sum += l;
        correct += c;
        count += s;
    }
    Ok(EvalResult {
        accuracy: correct as f64 / count as f64,
        mean_loss: loss_sum / count as f64,
        wall_time_s: started.elapsed().as_secs_f64(),
        samples: count,
    })
}

/// Loads a checkpoint into the configured model and evaluates the test
/// split.
pub fn cmd_eval(cfg: &RunConfig, checkpoint_path: &Path, out_dir: &Path) -> CliResult<MetricsRecord> {
    let test = load_split(cfg, Split::Test)?;
    let mut model = build(&cfg.model)?;
    let bytes = std::fs::read(checkpoint_path)?;
    let loaded = checkpoint::decode(&bytes).map_err(CliError::from)?;
    model.load_params(&loaded).map_err(CliError::from)?;

    let eval = evaluate(&model, &test.dataset, cfg.batch_size, crate::eval_threads_from_env())?;
    let record = MetricsRecord::new(
        cfg.run_id(),
        "test",
        0,
        eval.mean_loss,
        eval.accuracy,
        eval.wall_time_s,
        count_parameters(&model),
    );
    let mut writer = MetricsWriter::open(out_dir)?;
    writer.append(&record)?;
    write_run_meta(
        out_dir,
        "eval",
        cfg,
        &test.files,
        json!({ "checkpoint": checkpoint_path.display().to_string(), "samples": eval.samples }),
    )?;
    println!("eval: loss {:.6} acc {:.4}", eval.mean_loss, eval.accuracy);
    Ok(record)
}
