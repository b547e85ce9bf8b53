//! Datasets: a CIFAR-10 binary reader and a synthetic quadrant generator.

use crate::arch::Shape;
use crate::tensor::{TensorBuffer, TensorError};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};

pub const CIFAR_RECORD: usize = 3073;
pub const CIFAR_CLASSES: usize = 10;
const CIFAR_SIDE: usize = 32;
/// Environment variable naming the dataset directory.
pub const DATA_DIR_ENV: &str = "SPLITFORGE_DATA_DIR";

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("file length {len} is not a multiple of {CIFAR_RECORD}")]
    BadLength { len: usize },
    #[error("record {record} has label {label}, expected < {classes}")]
    LabelOutOfRange { record: usize, label: usize, classes: usize },
    #[error("split leaves an empty side ({train} train / {test} test)")]
    EmptySplit { train: usize, test: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: TensorBuffer<f32>,
    pub labels: Vec<usize>,
    pub class_count: usize,
}

impl Dataset {
    pub fn new(images: TensorBuffer<f32>, labels: Vec<usize>, class_count: usize) -> Result<Self, DataError> {
        if images.batch() != labels.len() {
            return Err(DataError::InvalidArgument(format!(
                "{} images but {} labels",
                images.batch(),
                labels.len()
            )));
        }
        if let Some((record, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= class_count) {
            return Err(DataError::LabelOutOfRange { record, label, classes: class_count });
        }
        Ok(Self { images, labels, class_count })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_shape(&self) -> Shape {
        self.images.sample_shape()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_count];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            images: self.images.gather(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_count: self.class_count,
        }
    }
}

/// `$SPLITFORGE_DATA_DIR`, or `./data` when unset.
pub fn data_dir() -> PathBuf {
    std::env::var_os(DATA_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("./data"))
}

pub fn parse_cifar10(bytes: &[u8], limit: Option<usize>) -> Result<Dataset, DataError> {
    if bytes.len() % CIFAR_RECORD != 0 {
        return Err(DataError::BadLength { len: bytes.len() });
    }
    let mut n = bytes.len() / CIFAR_RECORD;
    if let Some(limit) = limit {
        n = n.min(limit);
    }
    let mut labels = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(n * (CIFAR_RECORD - 1));
    for (record, chunk) in bytes.chunks_exact(CIFAR_RECORD).take(n).enumerate() {
        let label = chunk[0] as usize;
        if label >= CIFAR_CLASSES {
            return Err(DataError::LabelOutOfRange { record, label, classes: CIFAR_CLASSES });
        }
        labels.push(label);
        data.extend(chunk[1..].iter().map(|&b| b as f32 / 255.0));
    }
    let images = TensorBuffer::from_vec([n, 3, CIFAR_SIDE, CIFAR_SIDE], data)?;
    Dataset::new(images, labels, CIFAR_CLASSES)
}

/// Reads a CIFAR-10 binary batch file; `limit` caps the record count.
pub fn load_cifar10_binary(path: impl AsRef<Path>, limit: Option<usize>) -> Result<Dataset, DataError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| DataError::Io { path: path.to_path_buf(), source })?;
    parse_cifar10(&bytes, limit)
}

/// Inverse of [`parse_cifar10`] for 3x32x32 datasets with byte-valued
/// pixels.
pub fn write_cifar10_binary(ds: &Dataset) -> Result<Vec<u8>, DataError> {
    if ds.sample_shape() != Shape::new(3, CIFAR_SIDE, CIFAR_SIDE) || ds.class_count > 256 {
        return Err(DataError::InvalidArgument(format!("not a CIFAR-shaped dataset: {}", ds.sample_shape())));
    }
    let mut out = Vec::with_capacity(ds.len() * CIFAR_RECORD);
    for (i, &label) in ds.labels.iter().enumerate() {
        out.push(label as u8);
        out.extend(ds.images.sample(i).iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8));
    }
    Ok(out)
}

const NOISE_AMPLITUDE: f32 = 0.2;
const BLOB_INTENSITY: f32 = 0.7;
const QUADRANT_CHANNELS: usize = 3;

/// Images of low-amplitude noise with a bright square blob placed inside the
/// quadrant given by the label (0 top-left, 1 top-right, 2 bottom-left,
/// 3 bottom-right). Labels cycle so classes are balanced within one.
pub fn synth_quadrant_dataset(seed: u64, n: usize, size: usize, classes: usize) -> Result<Dataset, DataError> {
    if size < 8 || size % 2 != 0 {
        return Err(DataError::InvalidArgument(format!("size must be even and >= 8, got {size}")));
    }
    if classes == 0 || classes > 4 {
        return Err(DataError::InvalidArgument(format!("classes must be in 1..=4, got {classes}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = size / 2;
    let blob = (size / 4).max(2);
    let shape = Shape::new(QUADRANT_CHANNELS, size, size);
    let mut images = TensorBuffer::batch_of(n, shape);
    let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    for (i, &label) in labels.iter().enumerate() {
        let (qy, qx) = ((label / 2) * half, (label % 2) * half);
        let y0 = qy + rng.gen_range(0..=half - blob);
        let x0 = qx + rng.gen_range(0..=half - blob);
        let img = images.sample_mut(i);
        for c in 0..QUADRANT_CHANNELS {
            for y in 0..size {
                for x in 0..size {
                    let mut v = rng.gen_range(0.0..NOISE_AMPLITUDE);
                    if (y0..y0 + blob).contains(&y) && (x0..x0 + blob).contains(&x) {
                        v += BLOB_INTENSITY;
                    }
                    img[(c * size + y) * size + x] = v.min(1.0);
                }
            }
        }
    }
    Dataset::new(images, labels, classes)
}

/// Fraction of samples whose label equals the quadrant with the most energy
/// after a 3x3 mean filter.
pub fn quadrant_heuristic_accuracy(ds: &Dataset) -> f64 {
    if ds.is_empty() {
        return 0.0;
    }
    let s = ds.sample_shape();
    let (h, w) = (s.height, s.width);
    let mut correct = 0;
    for i in 0..ds.len() {
        let img = ds.images.sample(i);
        let mut energy = [0.0f64; 4];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0f64;
                let mut count = 0;
                for c in 0..s.channels {
                    for yy in y.saturating_sub(1)..(y + 2).min(h) {
                        for xx in x.saturating_sub(1)..(x + 2).min(w) {
                            acc += img[(c * h + yy) * w + xx] as f64;
                            count += 1;
                        }
                    }
                }
                let q = (y >= h / 2) as usize * 2 + (x >= w / 2) as usize;
                energy[q] += acc / count as f64;
            }
        }
        let best = (0..ds.class_count).max_by(|&a, &b| energy[a].total_cmp(&energy[b])).unwrap_or(0);
        correct += (best == ds.labels[i]) as usize;
    }
    correct as f64 / ds.len() as f64
}

/// Stratified shuffled split; `fraction` of each class goes to the first
/// (training) side.
pub fn split_train_test(ds: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset), DataError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(DataError::InvalidArgument(format!("fraction must be in (0, 1), got {fraction}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in 0..ds.class_count {
        let mut idx: Vec<usize> = (0..ds.len()).filter(|&i| ds.labels[i] == class).collect();
        idx.shuffle(&mut rng);
        let cut = (idx.len() as f64 * fraction).round() as usize;
        train.extend_from_slice(&idx[..cut]);
        test.extend_from_slice(&idx[cut..]);
    }
    if train.is_empty() || test.is_empty() {
        return Err(DataError::EmptySplit { train: train.len(), test: test.len() });
    }
    train.shuffle(&mut rng);
    test.shuffle(&mut rng);
    Ok((ds.subset(&train), ds.subset(&test)))
}
