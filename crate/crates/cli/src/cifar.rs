//! CIFAR-10 binary batch loading: 3073-byte records, one label byte
//! followed by 3x32x32 pixel planes (already channels-first).

use std::fs;
use std::path::Path;

use capsbench_core::data::Dataset;
use capsbench_core::tensor::Tensor;

use crate::{CliError, CliResult};

pub const RECORD_BYTES: usize = 3073;
const PLANE: usize = 32 * 32;

/// Concatenates any number of batch files into one dataset. An empty file
/// contributes zero records.
pub fn load_cifar10(paths: &[impl AsRef<Path>], num_classes: usize) -> CliResult<Dataset> {
    let mut pixels: Vec<f32> = Vec::new();
    let mut labels: Vec<u32> = Vec::new();
    for path in paths {
        let path = path.as_ref();
        let bytes = fs::read(path)?;
        if !bytes.len().is_multiple_of(RECORD_BYTES) {
            return Err(CliError::DataFormat(format!(
                "{}: {} bytes is not a whole number of {RECORD_BYTES}-byte records",
                path.display(),
                bytes.len()
            )));
        }
        for record in bytes.chunks_exact(RECORD_BYTES) {
            labels.push(record[0] as u32);
            pixels.extend(record[1..].iter().map(|&b| b as f32 / 255.0));
        }
    }
    let n = labels.len();
    debug_assert_eq!(pixels.len(), n * 3 * PLANE);
    let images = Tensor::from_vec(&[n, 3, 32, 32], pixels)
        .map_err(|e| CliError::DataFormat(e.to_string()))?;
    Dataset::new(images, labels, num_classes, "cifar10")
        .map_err(|e| CliError::DataFormat(e.to_string()))
}
