use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::training::Dataset;

const IMAGE_MAGIC: u32 = 2051;
const LABEL_MAGIC: u32 = 2049;

/// Train images, train labels, test images, test labels.
pub const FILES: [&str; 4] = [
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
];

#[derive(Clone, Debug, PartialEq)]
pub struct MnistData {
    pub train: Dataset,
    pub test: Dataset,
}

/// `$LASER_MNIST_DIR`, else `data/mnist` at the workspace root.
pub fn default_dir() -> PathBuf {
    match std::env::var_os("LASER_MNIST_DIR") {
        Some(dir) if !dir.is_empty() => PathBuf::from(dir),
        _ => Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"),
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn header(path: &Path, bytes: &[u8], magic: u32, dims: usize) -> Result<Vec<usize>> {
    let need = 4 * (1 + dims);
    if bytes.len() < need {
        return Err(Error::format(path, format!("truncated header ({} bytes)", bytes.len())));
    }
    let word = |i: usize| u32::from_be_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap());
    if word(0) != magic {
        return Err(Error::format(path, format!("magic {} (expected {magic})", word(0))));
    }
    Ok((1..=dims).map(|i| word(i) as usize).collect())
}

/// Images scaled to `[0, 1]`; returns the flat pixels and the per-image size.
pub fn load_idx_images(path: &Path) -> Result<(Vec<f32>, usize, usize)> {
    let bytes = read(path)?;
    let dims = header(path, &bytes, IMAGE_MAGIC, 3)?;
    let (count, dim) = (dims[0], dims[1] * dims[2]);
    let body = &bytes[16..];
    if body.len() != count * dim {
        return Err(Error::format(path, format!("expected {} pixel bytes, found {}", count * dim, body.len())));
    }
    Ok((body.iter().map(|&b| b as f32 / 255.0).collect(), count, dim))
}

pub fn load_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes = read(path)?;
    let count = header(path, &bytes, LABEL_MAGIC, 1)?[0];
    let body = &bytes[8..];
    if body.len() != count {
        return Err(Error::format(path, format!("expected {count} labels, found {}", body.len())));
    }
    Ok(body.to_vec())
}

fn load_pair(dir: &Path, images: &str, labels: &str) -> Result<Dataset> {
    let (pixels, count, dim) = load_idx_images(&dir.join(images))?;
    let labels_path = dir.join(labels);
    let labels = load_idx_labels(&labels_path)?;
    if labels.len() != count {
        return Err(Error::format(
            labels_path,
            format!("{} labels for {count} images", labels.len()),
        ));
    }
    Dataset::new(pixels, labels, dim)
}

/// Reads the four MNIST IDX files from `dir`.
pub fn load_mnist(dir: &Path) -> Result<MnistData> {
    Ok(MnistData {
        train: load_pair(dir, FILES[0], FILES[1])?,
        test: load_pair(dir, FILES[2], FILES[3])?,
    })
}
