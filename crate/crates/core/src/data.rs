//! MNIST IDX loading, byte normalization and synthetic datasets.
//!
//! IDX headers are big-endian regardless of host. Files starting with the
//! gzip magic are decompressed transparently.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::tensor::{Scalar, Tensor};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad IDX magic: expected {expected:#010x}, found {found:#010x}")]
    BadMagic { expected: u32, found: u32 },
    #[error("truncated IDX data: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("label {label} at index {index} is out of range for {classes} classes")]
    LabelOutOfRange { index: usize, label: usize, classes: usize },
    #[error("pixel value {value} at index {index} is outside [0, 1]")]
    PixelOutOfRange { index: usize, value: f64 },
    #[error("invalid dataset: {0}")]
    Invalid(String),
}

/// Raw IDX image batch: `count x rows x cols` bytes, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

impl RawImages {
    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.rows * self.cols;
        &self.pixels[i * n..(i + 1) * n]
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>, DataError> {
    let io = |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    };
    let bytes = fs::read(path).map_err(io)?;
    if bytes.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(bytes.as_slice()).read_to_end(&mut out).map_err(io)?;
        Ok(out)
    } else {
        Ok(bytes)
    }
}

fn be_u32(bytes: &[u8], at: usize) -> Result<u32, DataError> {
    let b = bytes.get(at..at + 4).ok_or(DataError::Truncated {
        expected: at + 4,
        actual: bytes.len(),
    })?;
    Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
}

/// Parses an in-memory IDX image file (magic `0x00000803`).
pub fn parse_idx_images(bytes: &[u8]) -> Result<RawImages, DataError> {
    let magic = be_u32(bytes, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(DataError::BadMagic {
            expected: IDX_IMAGES_MAGIC,
            found: magic,
        });
    }
    let count = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let expected = count
        .checked_mul(rows)
        .and_then(|n| n.checked_mul(cols))
        .and_then(|n| n.checked_add(16))
        .unwrap_or(usize::MAX);
    if bytes.len() != expected {
        return Err(DataError::Truncated {
            expected,
            actual: bytes.len(),
        });
    }
    Ok(RawImages {
        count,
        rows,
        cols,
        pixels: bytes[16..].to_vec(),
    })
}

/// Parses an in-memory IDX label file (magic `0x00000801`).
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>, DataError> {
    let magic = be_u32(bytes, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(DataError::BadMagic {
            expected: IDX_LABELS_MAGIC,
            found: magic,
        });
    }
    let count = be_u32(bytes, 4)? as usize;
    let expected = 8 + count;
    if bytes.len() != expected {
        return Err(DataError::Truncated {
            expected,
            actual: bytes.len(),
        });
    }
    Ok(bytes[8..].to_vec())
}

pub fn load_idx_images(path: impl AsRef<Path>) -> Result<RawImages, DataError> {
    parse_idx_images(&read_file(path.as_ref())?)
}

pub fn load_idx_labels(path: impl AsRef<Path>) -> Result<Vec<u8>, DataError> {
    parse_idx_labels(&read_file(path.as_ref())?)
}

/// `v / 255`, exactly.
pub fn normalize(v: u8) -> f32 {
    f32::from(v) / 255.0
}

/// Inverse of [`normalize`] up to rounding.
pub fn denormalize(v: f32) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Images scaled into `[0, 1]` with their class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    sample_shape: Vec<usize>,
    pixels: Vec<f32>,
    labels: Vec<usize>,
    classes: usize,
}

impl LabeledDataset {
    /// `pixels` holds `labels.len()` samples of `sample_shape` back to back.
    pub fn new(
        sample_shape: Vec<usize>,
        pixels: Vec<f32>,
        labels: Vec<usize>,
        classes: usize,
    ) -> Result<Self, DataError> {
        let per: usize = sample_shape.iter().product();
        if per == 0 || classes < 2 {
            return Err(DataError::Invalid(format!(
                "sample shape {sample_shape:?} with {classes} classes"
            )));
        }
        if pixels.len() != per * labels.len() {
            return Err(DataError::CountMismatch {
                images: pixels.len() / per,
                labels: labels.len(),
            });
        }
        if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
            return Err(DataError::LabelOutOfRange { index, label, classes });
        }
        if let Some((index, &value)) = pixels.iter().enumerate().find(|(_, &v)| !(0.0..=1.0).contains(&v)) {
            return Err(DataError::PixelOutOfRange {
                index,
                value: value as f64,
            });
        }
        Ok(Self {
            sample_shape,
            pixels,
            labels,
            classes,
        })
    }

    /// Assembles an `H x W x 1` dataset from IDX images and labels.
    pub fn from_idx(images: &RawImages, labels: &[u8], classes: usize) -> Result<Self, DataError> {
        if images.count != labels.len() {
            return Err(DataError::CountMismatch {
                images: images.count,
                labels: labels.len(),
            });
        }
        Self::new(
            vec![images.rows, images.cols, 1],
            images.pixels.iter().map(|&b| normalize(b)).collect(),
            labels.iter().map(|&l| l as usize).collect(),
            classes,
        )
    }

    /// Loads an IDX image/label pair, keeping at most `limit` leading examples.
    pub fn load_mnist(images: impl AsRef<Path>, labels: impl AsRef<Path>, limit: Option<usize>) -> Result<Self, DataError> {
        let ds = Self::from_idx(&load_idx_images(images)?, &load_idx_labels(labels)?, 10)?;
        Ok(match limit {
            Some(n) => ds.head(n),
            None => ds,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.sample_shape
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    fn sample_len(&self) -> usize {
        self.sample_shape.iter().product()
    }

    pub fn image<T: Scalar>(&self, i: usize) -> Tensor<T> {
        let n = self.sample_len();
        let data = self.pixels[i * n..(i + 1) * n].iter().map(|&v| T::of(v as f64)).collect();
        Tensor::from_parts(self.sample_shape.clone(), data)
    }

    /// The whole batch as one `count x sample_shape` tensor.
    pub fn images(&self) -> Tensor<f32> {
        let mut shape = vec![self.len()];
        shape.extend_from_slice(&self.sample_shape);
        Tensor::from_parts(shape, self.pixels.clone())
    }

    /// First `n` examples (or all, if fewer).
    pub fn head(&self, n: usize) -> Self {
        self.select(&(0..n.min(self.len())).collect::<Vec<_>>())
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        let n = self.sample_len();
        let mut pixels = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            pixels.extend_from_slice(&self.pixels[i * n..(i + 1) * n]);
        }
        Self {
            sample_shape: self.sample_shape.clone(),
            pixels,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
        }
    }
}

/// Locations of the four MNIST IDX files.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MnistFiles {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
}

impl MnistFiles {
    /// The standard file names in `dir`, preferring uncompressed files and
    /// falling back to `.gz`.
    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref();
        let pick = |name: &str| {
            let plain = dir.join(name);
            if plain.exists() {
                plain
            } else {
                dir.join(format!("{name}.gz"))
            }
        };
        Self {
            train_images: pick("train-images-idx3-ubyte"),
            train_labels: pick("train-labels-idx1-ubyte"),
            test_images: pick("t10k-images-idx3-ubyte"),
            test_labels: pick("t10k-labels-idx1-ubyte"),
        }
    }

    /// The 10k/1k subset shipped in the repository's `data/` directory.
    pub fn bundled() -> Self {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data");
        Self {
            train_images: dir.join("train-images-10k-idx3-ubyte.gz"),
            train_labels: dir.join("train-labels-10k-idx1-ubyte.gz"),
            test_images: dir.join("t10k-images-1k-idx3-ubyte.gz"),
            test_labels: dir.join("t10k-labels-1k-idx1-ubyte.gz"),
        }
    }

    /// `$MNIST_DIR` if set, otherwise the bundled subset.
    pub fn from_env() -> Self {
        match std::env::var_os("MNIST_DIR") {
            Some(dir) => Self::in_dir(dir),
            None => Self::bundled(),
        }
    }

    pub fn train(&self, limit: Option<usize>) -> Result<LabeledDataset, DataError> {
        LabeledDataset::load_mnist(&self.train_images, &self.train_labels, limit)
    }

    pub fn test(&self, limit: Option<usize>) -> Result<LabeledDataset, DataError> {
        LabeledDataset::load_mnist(&self.test_images, &self.test_labels, limit)
    }
}

/// Mean of class `k` in every coordinate: evenly spaced on `[0.2, 0.8]`.
pub fn blob_center(class: usize, classes: usize) -> f64 {
    0.2 + 0.6 * class as f64 / (classes - 1) as f64
}

/// Isotropic Gaussian blobs (std 0.05) centred on the diagonal of the
/// unit cube, labels assigned round-robin, clipped into `[0, 1]`.
pub fn synthetic_blobs(classes: usize, dims: usize, count: usize, seed: u64) -> Result<LabeledDataset, DataError> {
    if classes < 2 || dims == 0 {
        return Err(DataError::Invalid(format!("{classes} classes in {dims} dimensions")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.05).expect("valid std");
    let mut pixels = Vec::with_capacity(count * dims);
    let labels: Vec<usize> = (0..count).map(|i| i % classes).collect();
    for &label in &labels {
        let center = blob_center(label, classes);
        pixels.extend((0..dims).map(|_| (center + noise.sample(&mut rng)).clamp(0.0, 1.0) as f32));
    }
    LabeledDataset::new(vec![dims], pixels, labels, classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn images_fixture(count: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        for v in [IDX_IMAGES_MAGIC, count, rows, cols] {
            b.extend_from_slice(&v.to_be_bytes());
        }
        b.extend_from_slice(pixels);
        b
    }

    fn labels_fixture(labels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
        b.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        b.extend_from_slice(labels);
        b
    }

    #[test]
    fn parses_hand_built_image_fixture() {
        let bytes = [0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 2, 0, 255];
        assert_eq!(images_fixture(1, 1, 2, &[0, 255]), bytes);
        let raw = parse_idx_images(&bytes).unwrap();
        assert_eq!((raw.count, raw.rows, raw.cols), (1, 1, 2));
        assert_eq!(raw.image(0), &[0, 255]);
    }

    #[test]
    fn rejects_label_magic_in_image_file() {
        let mut bytes = images_fixture(1, 1, 2, &[0, 255]);
        bytes[3] = 0x01;
        assert!(matches!(
            parse_idx_images(&bytes),
            Err(DataError::BadMagic { expected: 0x803, found: 0x801 })
        ));
    }

    #[test]
    fn reports_truncation_lengths() {
        let bytes = images_fixture(2, 2, 2, &[1; 8]);
        match parse_idx_images(&bytes[..bytes.len() - 1]) {
            Err(DataError::Truncated { expected, actual }) => assert_eq!((expected, actual), (24, 23)),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_idx_images(&bytes[..10]), Err(DataError::Truncated { .. })));
        let labels = labels_fixture(&[1, 2, 3]);
        assert!(matches!(
            parse_idx_labels(&labels[..labels.len() - 1]),
            Err(DataError::Truncated { expected: 11, actual: 10 })
        ));
    }

    #[test]
    fn parses_labels_including_empty() {
        assert_eq!(parse_idx_labels(&labels_fixture(&[3, 7])).unwrap(), vec![3, 7]);
        assert!(parse_idx_labels(&labels_fixture(&[])).unwrap().is_empty());
    }

    #[test]
    fn out_of_range_label_is_rejected_at_assembly() {
        let raw = parse_idx_images(&images_fixture(1, 1, 1, &[9])).unwrap();
        assert!(matches!(
            LabeledDataset::from_idx(&raw, &[10], 10),
            Err(DataError::LabelOutOfRange { label: 10, .. })
        ));
        assert!(matches!(LabeledDataset::from_idx(&raw, &[1, 2], 10), Err(DataError::CountMismatch { .. })));
    }

    #[test]
    fn reads_plain_and_gzipped_files() {
        use std::io::Write;
        let dir = tempfile::tempdir().unwrap();
        let bytes = images_fixture(1, 2, 2, &[0, 64, 128, 255]);
        let plain = dir.path().join("img");
        fs::write(&plain, &bytes).unwrap();
        let gz = dir.path().join("img.gz");
        let mut enc = flate2::write::GzEncoder::new(fs::File::create(&gz).unwrap(), flate2::Compression::default());
        enc.write_all(&bytes).unwrap();
        enc.finish().unwrap();
        assert_eq!(load_idx_images(&plain).unwrap(), load_idx_images(&gz).unwrap());
        assert!(matches!(load_idx_images(dir.path().join("missing")), Err(DataError::Io { .. })));
    }

    #[test]
    fn normalization_is_exact_division() {
        assert_eq!(normalize(0), 0.0);
        assert_eq!(normalize(255), 1.0);
        assert_eq!(normalize(128), 128.0 / 255.0);
        for v in 0..=255u8 {
            assert_eq!(denormalize(normalize(v)), v);
        }
    }

    #[test]
    fn blobs_are_deterministic_and_in_range() {
        let a = synthetic_blobs(3, 4, 90, 1).unwrap();
        assert_eq!(a, synthetic_blobs(3, 4, 90, 1).unwrap());
        assert_ne!(a, synthetic_blobs(3, 4, 90, 2).unwrap());
        assert!(a.images().data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(a.labels().iter().filter(|&&l| l == 2).count(), 30);
        assert!(synthetic_blobs(1, 4, 10, 0).is_err());
    }

    #[test]
    fn separating_hyperplane_from_means_classifies_two_blobs() {
        let ds = synthetic_blobs(2, 5, 400, 3).unwrap();
        let (m0, m1) = (blob_center(0, 2), blob_center(1, 2));
        // w = m1 - m0 (per coordinate), threshold at the midpoint.
        for i in 0..ds.len() {
            let x = ds.image::<f64>(i);
            let score: f64 = x.data().iter().map(|&v| (m1 - m0) * (v - 0.5 * (m0 + m1))).sum();
            assert_eq!((score > 0.0) as usize, ds.label(i));
        }
    }
}
