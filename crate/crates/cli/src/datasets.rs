//! Dataset resolution: maps a config's dataset kind to loaders, applies the
//! training-split convention, stratified subsetting, and records file
//! checksums for run metadata.

use std::path::PathBuf;

use capsbench_core::data::{stratified_subset, Dataset};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::{cifar, idx, synth, CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Mnist,
    Fmnist,
    Svhn,
    Cifar10,
    /// Generated digit glyphs at MNIST geometry; no files needed.
    SyntheticMnist,
    /// Seeded noise at CIFAR geometry; timing runs only.
    SyntheticCifar,
}

impl DatasetKind {
    pub fn geometry(&self) -> (usize, usize, usize) {
        match self {
            DatasetKind::Mnist | DatasetKind::Fmnist | DatasetKind::SyntheticMnist => (1, 28, 28),
            DatasetKind::Svhn | DatasetKind::Cifar10 | DatasetKind::SyntheticCifar => (3, 32, 32),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            DatasetKind::Mnist => "mnist",
            DatasetKind::Fmnist => "fmnist",
            DatasetKind::Svhn => "svhn",
            DatasetKind::Cifar10 => "cifar10",
            DatasetKind::SyntheticMnist => "synthetic-mnist",
            DatasetKind::SyntheticCifar => "synthetic-cifar",
        }
    }

    pub fn is_synthetic(&self) -> bool {
        matches!(self, DatasetKind::SyntheticMnist | DatasetKind::SyntheticCifar)
    }
}

impl std::str::FromStr for DatasetKind {
    type Err = CliError;
    fn from_str(s: &str) -> CliResult<Self> {
        match s {
            "mnist" => Ok(DatasetKind::Mnist),
            "fmnist" | "fashion-mnist" => Ok(DatasetKind::Fmnist),
            "svhn" => Ok(DatasetKind::Svhn),
            "cifar10" | "cifar-10" => Ok(DatasetKind::Cifar10),
            "synthetic-mnist" | "synthetic" => Ok(DatasetKind::SyntheticMnist),
            "synthetic-cifar" => Ok(DatasetKind::SyntheticCifar),
            other => Err(CliError::Config(format!("unknown dataset '{other}'"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    pub data_dir: Option<PathBuf>,
    pub train_images: Option<PathBuf>,
    pub train_labels: Option<PathBuf>,
    pub test_images: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
    pub train_files: Vec<PathBuf>,
    pub test_files: Vec<PathBuf>,
    pub synth_train: usize,
    pub synth_test: usize,
    pub num_classes: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// A loaded split plus the checksums of every file it came from.
#[derive(Debug)]
pub struct LoadedSplit {
    pub dataset: Dataset,
    pub files: Vec<(PathBuf, String)>,
}

fn sha256_file(path: &PathBuf) -> CliResult<String> {
    let bytes = std::fs::read(path)?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(format!("{:x}", hasher.finalize()))
}

impl DatasetSpec {
    fn dir_join(&self, file: &str) -> CliResult<PathBuf> {
        let dir = self.data_dir.as_ref().ok_or_else(|| {
            CliError::Config(format!(
                "dataset '{}' needs data_dir or explicit file paths",
                self.kind.as_str()
            ))
        })?;
        Ok(dir.join(file))
    }

    fn idx_pair(&self, split: Split) -> CliResult<(PathBuf, PathBuf)> {
        let (images, labels) = match split {
            Split::Train => (&self.train_images, &self.train_labels),
            Split::Test => (&self.test_images, &self.test_labels),
        };
        if let (Some(i), Some(l)) = (images, labels) {
            return Ok((i.clone(), l.clone()));
        }
        let (img_name, lbl_name) = match split {
            Split::Train => ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
            Split::Test => ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
        };
        Ok((self.dir_join(img_name)?, self.dir_join(lbl_name)?))
    }

    fn cifar_files(&self, split: Split) -> CliResult<Vec<PathBuf>> {
        let explicit = match split {
            Split::Train => &self.train_files,
            Split::Test => &self.test_files,
        };
        if !explicit.is_empty() {
            return Ok(explicit.clone());
        }
        match split {
            Split::Train => (1..=5).map(|i| self.dir_join(&format!("data_batch_{i}.bin"))).collect(),
            Split::Test => Ok(vec![self.dir_join("test_batch.bin")?]),
        }
    }
}

/// Loads one split according to the run config, applying the 50k training
/// convention for 60k IDX sets (when `paper_split` is on) and the stratified
/// subset when requested.
pub fn load_split(cfg: &RunConfig, split: Split) -> CliResult<LoadedSplit> {
    let spec = &cfg.dataset;
    let (mut dataset, files) = match spec.kind {
        DatasetKind::SyntheticMnist => {
            let (n, salt) = match split {
                Split::Train => (spec.synth_train, 0x5eed_0001u64),
                Split::Test => (spec.synth_test, 0x5eed_0002u64),
            };
            (synth::digits(n, cfg.seed ^ salt), Vec::new())
        }
        DatasetKind::SyntheticCifar => {
            let (n, salt) = match split {
                Split::Train => (spec.synth_train, 0x5eed_0003u64),
                Split::Test => (spec.synth_test, 0x5eed_0004u64),
            };
            (
                synth::noise(n, spec.kind.geometry(), spec.num_classes, cfg.seed ^ salt),
                Vec::new(),
            )
        }
        DatasetKind::Mnist | DatasetKind::Fmnist | DatasetKind::Svhn => {
            let (images, labels) = spec.idx_pair(split)?;
            let ds = idx::load_idx(&images, &labels, spec.num_classes)?;
            let files = vec![
                (images.clone(), sha256_file(&images)?),
                (labels.clone(), sha256_file(&labels)?),
            ];
            (ds, files)
        }
        DatasetKind::Cifar10 => {
            let paths = spec.cifar_files(split)?;
            let ds = cifar::load_cifar10(&paths, spec.num_classes)?;
            let mut files = Vec::new();
            for p in paths {
                let sum = sha256_file(&p)?;
                files.push((p, sum));
            }
            (ds, files)
        }
    };

    // Published-split convention: official 60k IDX training sets are
    // truncated to their first 50,000 samples.
    if split == Split::Train && cfg.paper_split && !spec.kind.is_synthetic() && dataset.n() == 60_000
    {
        dataset = dataset.truncate(50_000);
    }

    if let Some(n) = cfg.subset {
        dataset = stratified_subset(&dataset, n);
    }

    let want = spec.kind.geometry();
    if dataset.geometry() != want {
        return Err(CliError::Config(format!(
            "dataset geometry {:?} does not match the configured kind {:?}",
            dataset.geometry(),
            want
        )));
    }

    Ok(LoadedSplit { dataset, files })
}
