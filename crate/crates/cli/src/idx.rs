//! IDX file parsing and writing (the MNIST distribution format). Headers
//! are big-endian; images use magic 0x00000803 with [n, rows, cols] extents,
//! labels use 0x00000801 with [n]. SVHN is accepted through the same format
//! after external conversion.

use std::fs;
use std::path::Path;

use capsbench_core::data::Dataset;
use capsbench_core::tensor::Tensor;

use crate::{CliError, CliResult};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

fn read_be_u32(bytes: &[u8], pos: usize, what: &str, path: &Path) -> CliResult<u32> {
    if pos + 4 > bytes.len() {
        return Err(CliError::DataFormat(format!(
            "{}: truncated header while reading {what}",
            path.display()
        )));
    }
    Ok(u32::from_be_bytes([bytes[pos], bytes[pos + 1], bytes[pos + 2], bytes[pos + 3]]))
}

/// Loads an images/labels IDX pair into a dataset with pixels scaled by
/// 1/255. The two files must agree on the sample count.
pub fn load_idx(images_path: &Path, labels_path: &Path, num_classes: usize) -> CliResult<Dataset> {
    let image_bytes = fs::read(images_path)?;
    let label_bytes = fs::read(labels_path)?;

    let magic = read_be_u32(&image_bytes, 0, "magic", images_path)?;
    if magic != IMAGE_MAGIC {
        return Err(CliError::DataFormat(format!(
            "{}: bad image magic {magic:#010x}, expected {IMAGE_MAGIC:#010x}",
            images_path.display()
        )));
    }
    let n = read_be_u32(&image_bytes, 4, "count", images_path)? as usize;
    let rows = read_be_u32(&image_bytes, 8, "rows", images_path)? as usize;
    let cols = read_be_u32(&image_bytes, 12, "cols", images_path)? as usize;
    let expected = 16 + n * rows * cols;
    if image_bytes.len() != expected {
        return Err(CliError::DataFormat(format!(
            "{}: length error: {} bytes for {n} images of {rows}x{cols} (expected {expected})",
            images_path.display(),
            image_bytes.len()
        )));
    }

    let lmagic = read_be_u32(&label_bytes, 0, "magic", labels_path)?;
    if lmagic != LABEL_MAGIC {
        return Err(CliError::DataFormat(format!(
            "{}: bad label magic {lmagic:#010x}, expected {LABEL_MAGIC:#010x}",
            labels_path.display()
        )));
    }
    let ln = read_be_u32(&label_bytes, 4, "count", labels_path)? as usize;
    if label_bytes.len() != 8 + ln {
        return Err(CliError::DataFormat(format!(
            "{}: length error: {} bytes for {ln} labels",
            labels_path.display(),
            label_bytes.len()
        )));
    }
    if n != ln {
        return Err(CliError::DataFormat(format!(
            "consistency error: {} images in {} but {} labels in {}",
            n,
            images_path.display(),
            ln,
            labels_path.display()
        )));
    }

    let pixels: Vec<f32> = image_bytes[16..].iter().map(|&b| b as f32 / 255.0).collect();
    let labels: Vec<u32> = label_bytes[8..].iter().map(|&b| b as u32).collect();
    let images = Tensor::from_vec(&[n, 1, rows, cols], pixels)
        .map_err(|e| CliError::DataFormat(e.to_string()))?;
    let name = images_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "idx".into());
    Dataset::new(images, labels, num_classes, name).map_err(|e| CliError::DataFormat(e.to_string()))
}

/// Writes a single-channel dataset back out as an IDX pair (pixels rounded
/// to bytes). Used to persist generated test sets for reuse.
pub fn write_idx(dataset: &Dataset, images_path: &Path, labels_path: &Path) -> CliResult<()> {
    let (c, h, w) = dataset.geometry();
    if c != 1 {
        return Err(CliError::Internal(format!(
            "idx export supports single-channel images, got {c} channels"
        )));
    }
    let n = dataset.n();
    let mut image_bytes = Vec::with_capacity(16 + n * h * w);
    image_bytes.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
    image_bytes.extend_from_slice(&(n as u32).to_be_bytes());
    image_bytes.extend_from_slice(&(h as u32).to_be_bytes());
    image_bytes.extend_from_slice(&(w as u32).to_be_bytes());
    for &v in dataset.images().data() {
        image_bytes.push((v * 255.0).round().clamp(0.0, 255.0) as u8);
    }

    let mut label_bytes = Vec::with_capacity(8 + n);
    label_bytes.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    label_bytes.extend_from_slice(&(n as u32).to_be_bytes());
    label_bytes.extend(dataset.labels().iter().map(|&l| l as u8));

    fs::write(images_path, image_bytes)?;
    fs::write(labels_path, label_bytes)?;
    Ok(())
}
