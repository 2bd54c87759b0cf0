//! Reproducibility metadata persisted beside the metrics: the full resolved
//! config, seeds, and dataset checksums.

use std::path::{Path, PathBuf};

use serde_json::json;

use crate::config::RunConfig;
use crate::metrics::unix_now;
use crate::CliResult;

pub fn write_run_meta(
    dir: &Path,
    command: &str,
    cfg: &RunConfig,
    dataset_files: &[(PathBuf, String)],
    extra: serde_json::Value,
) -> CliResult<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let files: Vec<serde_json::Value> = dataset_files
        .iter()
        .map(|(p, sum)| json!({ "path": p.display().to_string(), "sha256": sum }))
        .collect();
    let model = &cfg.model;
    let meta = json!({
        "command": command,
        "run_id": cfg.run_id(),
        "timestamp": unix_now(),
        "config": {
            "name": cfg.name,
            "variant": model.variant.as_str(),
            "dataset": cfg.dataset.kind.as_str(),
            "input_shape": [model.input_shape.0, model.input_shape.1, model.input_shape.2],
            "num_classes": model.num_classes,
            "pc_count": model.pc_count,
            "pc_types": model.pc_types,
            "routing_iterations": model.routing_iterations,
            "recon_weight": model.recon_weight,
            "w_init_sigma": model.w_init_sigma,
            "epochs": cfg.epochs,
            "batch_size": cfg.batch_size,
            "learning_rate": cfg.learning_rate,
            "seed": cfg.seed,
            "subset": cfg.subset,
            "paper_split": cfg.paper_split,
            "affine": {
                "rotation_deg": cfg.affine.rotation_deg,
                "scale": [cfg.affine.scale.0, cfg.affine.scale.1],
                "shear_deg": cfg.affine.shear_deg,
                "translate_px": cfg.affine.translate_px,
                "seed": cfg.affine.seed,
            },
        },
        "dataset_files": files,
        "extra": extra,
    });
    let path = dir.join("run_meta.json");
    std::fs::write(&path, serde_json::to_string_pretty(&meta).expect("meta serializes"))?;
    Ok(path)
}
