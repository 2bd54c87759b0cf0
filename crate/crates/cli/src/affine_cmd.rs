//! Transformation-robustness protocol: train on images centered on a 40x40
//! grid, then evaluate on both the clean test set and a seeded
//! affine-transformed copy (persisted as IDX for reuse). With several
//! configs, speed ratios against the first one are reported.

use std::path::Path;

use capsbench_core::checkpoint;
use capsbench_core::data::{affine_transform, pad_center};
use capsbench_core::model::build;

use crate::config::RunConfig;
use crate::datasets::{load_split, Split};
use crate::metrics::{MetricsRecord, MetricsWriter};
use crate::train::{evaluate, train_on};
use crate::{idx, CliError, CliResult};

const GRID: (usize, usize) = (40, 40);

#[derive(Debug)]
pub struct AffineOutcome {
    pub name: String,
    pub clean: MetricsRecord,
    pub affine: MetricsRecord,
    pub mean_train_step_s: f64,
    pub eval_wall_s: f64,
}

/// Runs the protocol for one config.
pub fn affine_run(cfg: &RunConfig, out_dir: &Path) -> CliResult<AffineOutcome> {
    let (c, _, _) = cfg.dataset.kind.geometry();
    if c != 1 {
        return Err(CliError::Config(
            "the affine protocol needs a single-channel 28x28 dataset".into(),
        ));
    }
    let train = load_split(cfg, Split::Train)?;
    let test = load_split(cfg, Split::Test)?;
    let train_padded = pad_center(&train.dataset, GRID)?;
    let test_padded = pad_center(&test.dataset, GRID)?;

    let mut padded_cfg = cfg.clone();
    padded_cfg.model.input_shape = (1, GRID.0, GRID.1);
    padded_cfg.model.validate().map_err(CliError::from)?;

    let run_dir = out_dir.join(&cfg.name);
    let outcome = train_on(&padded_cfg, &train_padded, &test_padded, &run_dir, &train.files, "affine")?;

    // Reload the trained parameters for the paired evaluations.
    let mut model = build(&padded_cfg.model)?;
    let bytes = std::fs::read(&outcome.checkpoint_path)?;
    model.load_params(&checkpoint::decode(&bytes).map_err(CliError::from)?).map_err(CliError::from)?;

    let clean_eval = evaluate(&model, &test_padded, cfg.batch_size, crate::eval_threads_from_env())?;

    let transformed = affine_transform(&test_padded, &cfg.affine).map_err(CliError::from)?;
    let images_path = run_dir.join("affine-test-images-idx3-ubyte");
    let labels_path = run_dir.join("affine-test-labels-idx1-ubyte");
    idx::write_idx(&transformed, &images_path, &labels_path)?;

    let affine_eval = evaluate(&model, &transformed, cfg.batch_size, crate::eval_threads_from_env())?;

    let params = capsbench_core::model::count_parameters(&model);
    let run_id = cfg.run_id();
    let clean = MetricsRecord::new(
        format!("{run_id}-clean"),
        "test",
        cfg.epochs,
        clean_eval.mean_loss,
        clean_eval.accuracy,
        clean_eval.wall_time_s,
        params,
    );
    let affine = MetricsRecord::new(
        format!("{run_id}-affine"),
        "test",
        cfg.epochs,
        affine_eval.mean_loss,
        affine_eval.accuracy,
        affine_eval.wall_time_s,
        params,
    );
    let mut writer = MetricsWriter::open(&run_dir)?;
    writer.append(&clean)?;
    writer.append(&affine)?;
    println!(
        "{}: clean acc {:.4}, affine acc {:.4}",
        cfg.name, clean_eval.accuracy, affine_eval.accuracy
    );

    Ok(AffineOutcome {
        name: cfg.name.clone(),
        clean,
        affine,
        mean_train_step_s: outcome.mean_train_step_s,
        eval_wall_s: clean_eval.wall_time_s,
    })
}

/// Protocol over several configs; prints training/testing speed ratios
/// against the first config when more than one is given.
pub fn cmd_affine(cfgs: &[RunConfig], out_dir: &Path) -> CliResult<Vec<AffineOutcome>> {
    let mut outcomes = Vec::with_capacity(cfgs.len());
    for cfg in cfgs {
        outcomes.push(affine_run(cfg, out_dir)?);
    }
    if outcomes.len() > 1 {
        let base = &outcomes[0];
        for other in &outcomes[1..] {
            println!(
                "{} vs {}: train {:.2}x, test {:.2}x",
                base.name,
                other.name,
                base.mean_train_step_s / other.mean_train_step_s,
                base.eval_wall_s / other.eval_wall_s
            );
        }
    }
    Ok(outcomes)
}
