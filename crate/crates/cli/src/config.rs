//! Run configuration: a flat `key = value` file (one entry per line, `#`
//! comments) merged with CLI overrides. No structured-config dependency;
//! the format stays trivially diffable.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use capsbench_core::data::AffineSpec;
use capsbench_core::model::{DecoderKind, ModelConfig, Variant};

use crate::datasets::{DatasetKind, DatasetSpec};
use crate::{CliError, CliResult};

/// Everything one command run needs.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub name: String,
    pub model: ModelConfig,
    pub dataset: DatasetSpec,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub seed: u64,
    pub subset: Option<usize>,
    pub paper_split: bool,
    pub affine: AffineSpec,
}

/// Flag-level overrides applied on top of the file.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub subset: Option<usize>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
}

const KNOWN_KEYS: &[&str] = &[
    "name",
    "variant",
    "dataset",
    "data_dir",
    "train_images",
    "train_labels",
    "test_images",
    "test_labels",
    "train_files",
    "test_files",
    "synth_train",
    "synth_test",
    "num_classes",
    "pc_count",
    "pc_types",
    "routing_iterations",
    "recon_weight",
    "w_init_sigma",
    "epochs",
    "batch_size",
    "learning_rate",
    "seed",
    "subset",
    "paper_split",
    "affine_rotation_deg",
    "affine_scale_min",
    "affine_scale_max",
    "affine_shear_deg",
    "affine_translate_px",
    "affine_seed",
];

/// Parses `key = value` lines; `#` starts a comment anywhere on a line.
pub fn parse_kv(text: &str) -> CliResult<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(ix) => &raw[..ix],
            None => raw,
        };
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let Some(eq) = line.find('=') else {
            return Err(CliError::Config(format!(
                "line {}: expected 'key = value', got '{raw}'",
                lineno + 1
            )));
        };
        let key = line[..eq].trim().to_string();
        let value = line[eq + 1..].trim().to_string();
        if key.is_empty() {
            return Err(CliError::Config(format!("line {}: empty key", lineno + 1)));
        }
        if map.insert(key.clone(), value).is_some() {
            return Err(CliError::Config(format!("duplicate key '{key}'")));
        }
    }
    Ok(map)
}

struct Keys {
    map: BTreeMap<String, String>,
}

impl Keys {
    fn get(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(String::as_str)
    }

    fn parse<T: std::str::FromStr>(&self, key: &str, default: T) -> CliResult<T> {
        match self.get(key) {
            None => Ok(default),
            Some(raw) => raw
                .parse()
                .map_err(|_| CliError::Config(format!("key '{key}': cannot parse '{raw}'"))),
        }
    }

    fn parse_opt<T: std::str::FromStr>(&self, key: &str) -> CliResult<Option<T>> {
        match self.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|_| CliError::Config(format!("key '{key}': cannot parse '{raw}'"))),
        }
    }

    fn required(&self, key: &str) -> CliResult<&str> {
        self.get(key)
            .ok_or_else(|| CliError::Config(format!("missing required key '{key}'")))
    }

    fn paths(&self, key: &str) -> Vec<PathBuf> {
        self.get(key)
            .map(|raw| raw.split(',').map(|p| PathBuf::from(p.trim())).collect())
            .unwrap_or_default()
    }
}

impl RunConfig {
    pub fn from_file(path: &Path, overrides: Overrides) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        Self::from_text(&text, overrides)
    }

    pub fn from_text(text: &str, overrides: Overrides) -> CliResult<Self> {
        let map = parse_kv(text)?;
        for key in map.keys() {
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(CliError::Config(format!("unknown key '{key}'")));
            }
        }
        let keys = Keys { map };

        let variant: Variant = keys
            .required("variant")?
            .parse()
            .map_err(|e: capsbench_core::Error| CliError::Config(e.to_string()))?;
        let kind: DatasetKind = keys.required("dataset")?.parse()?;
        let num_classes: usize = keys.parse("num_classes", 10)?;
        let input_shape = kind.geometry();

        let seed = overrides.seed.unwrap_or(keys.parse("seed", 0u64)?);

        let mut model = match variant {
            Variant::Baseline => ModelConfig::baseline(input_shape, num_classes),
            Variant::Qcn => {
                let pc: usize = keys
                    .parse_opt("pc_count")?
                    .ok_or_else(|| CliError::Config("qcn requires pc_count".into()))?;
                ModelConfig::qcn(input_shape, num_classes, pc)
            }
            Variant::QcnPlus => {
                let pc: usize = keys
                    .parse_opt("pc_count")?
                    .ok_or_else(|| CliError::Config("qcn_plus requires pc_count".into()))?;
                ModelConfig::qcn_plus(input_shape, num_classes, pc)
            }
        };
        if let Some(types) = keys.parse_opt::<usize>("pc_types")? {
            if variant != Variant::Baseline {
                return Err(CliError::Config("pc_types only applies to the baseline".into()));
            }
            model.pc_types = types;
        }
        model.routing_iterations = keys.parse("routing_iterations", model.routing_iterations)?;
        model.recon_weight = keys.parse("recon_weight", model.recon_weight)?;
        model.w_init_sigma = keys.parse("w_init_sigma", model.w_init_sigma)?;
        model.seed = seed;
        model.validate().map_err(CliError::from)?;

        let dataset = DatasetSpec {
            kind,
            data_dir: keys.get("data_dir").map(PathBuf::from),
            train_images: keys.get("train_images").map(PathBuf::from),
            train_labels: keys.get("train_labels").map(PathBuf::from),
            test_images: keys.get("test_images").map(PathBuf::from),
            test_labels: keys.get("test_labels").map(PathBuf::from),
            train_files: keys.paths("train_files"),
            test_files: keys.paths("test_files"),
            synth_train: keys.parse("synth_train", 2000)?,
            synth_test: keys.parse("synth_test", 1000)?,
            num_classes,
        };

        let epochs = overrides.epochs.unwrap_or(keys.parse("epochs", 50)?);
        if epochs == 0 {
            return Err(CliError::Config("epochs must be >= 1".into()));
        }
        let batch_size = overrides.batch_size.unwrap_or(keys.parse("batch_size", 128)?);
        if batch_size == 0 {
            return Err(CliError::Config("batch_size must be >= 1".into()));
        }
        let subset = match overrides.subset {
            Some(s) => Some(s),
            None => keys.parse_opt("subset")?,
        };
        if subset == Some(0) {
            return Err(CliError::Config("subset must be >= 1 when given".into()));
        }

        let affine = AffineSpec {
            rotation_deg: keys.parse("affine_rotation_deg", AffineSpec::default().rotation_deg)?,
            scale: (
                keys.parse("affine_scale_min", AffineSpec::default().scale.0)?,
                keys.parse("affine_scale_max", AffineSpec::default().scale.1)?,
            ),
            shear_deg: keys.parse("affine_shear_deg", AffineSpec::default().shear_deg)?,
            translate_px: keys.parse("affine_translate_px", AffineSpec::default().translate_px)?,
            seed: keys.parse("affine_seed", seed)?,
        };
        affine.validate().map_err(CliError::from)?;

        let name = keys
            .get("name")
            .map(str::to_string)
            .unwrap_or_else(|| default_name(&model, kind));

        Ok(RunConfig {
            name,
            model,
            dataset,
            epochs,
            batch_size,
            learning_rate: keys.parse("learning_rate", 0.001f32)?,
            seed,
            subset,
            paper_split: keys.parse("paper_split", true)?,
            affine,
        })
    }

    /// Stable identifier used in metrics rows.
    pub fn run_id(&self) -> String {
        format!("{}-seed{}", self.name, self.seed)
    }
}

fn default_name(model: &ModelConfig, kind: DatasetKind) -> String {
    let detail = match model.variant {
        Variant::Baseline => format!("t{}", model.pc_types),
        Variant::Qcn | Variant::QcnPlus => format!("pc{}", model.pc_count),
    };
    format!("{}-{}-{}", model.variant.as_str(), kind.as_str(), detail)
}

/// Decoder sanity used by a few call sites.
pub fn decoder_name(kind: DecoderKind) -> &'static str {
    match kind {
        DecoderKind::Fc => "fc",
        DecoderKind::Deconv => "deconv",
    }
}
