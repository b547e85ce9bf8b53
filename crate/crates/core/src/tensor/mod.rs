//! Minimal dense tensor engine: forward and backward passes for every op the
//! architecture IR can express, softmax cross-entropy and plain SGD.

mod engine;
pub mod ops;
mod train;
mod weights;

use crate::arch::{ArchError, Shape};
use num_traits::Float;
use std::fmt::Debug;
use std::iter::Sum;

pub use engine::{backward, forward, Forward, Model};
pub use train::{evaluate, train, train_and_test, EpochRecord, TrainConfig, TrainOutcome};
pub use weights::{init_weights, warm_start, Param, WeightStore};

#[derive(Debug, thiserror::Error)]
pub enum TensorError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("missing parameter `{0}`")]
    MissingParam(String),
    #[error("loss diverged (non-finite) in epoch {epoch}")]
    DivergedLoss { epoch: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("weight file: {0}")]
    Format(String),
    #[error(transparent)]
    Arch(#[from] ArchError),
}

/// Scalar types the engine runs on (`f32` for training, `f64` for checks).
pub trait Element: Float + Send + Sync + Debug + Default + Sum + 'static {
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Element for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Element for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
}

/// Dense `(batch, channels, height, width)` array in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorBuffer<T = f32> {
    shape: [usize; 4],
    data: Vec<T>,
}

impl<T: Element> TensorBuffer<T> {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Self { shape, data: vec![T::zero(); shape.iter().product()] }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<T>) -> Result<Self, TensorError> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(TensorError::ShapeMismatch(format!(
                "{} elements for shape {shape:?} ({expected} expected)",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn batch_of(batch: usize, sample: Shape) -> Self {
        Self::zeros([batch, sample.channels, sample.height, sample.width])
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn sample_shape(&self) -> Shape {
        Shape::new(self.shape[1], self.shape[2], self.shape[3])
    }

    pub fn sample_len(&self) -> usize {
        self.shape[1] * self.shape[2] * self.shape[3]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn sample(&self, n: usize) -> &[T] {
        let len = self.sample_len();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn sample_mut(&mut self, n: usize) -> &mut [T] {
        let len = self.sample_len();
        &mut self.data[n * len..(n + 1) * len]
    }

    /// Copies samples `range` into a new buffer.
    pub fn slice_batch(&self, range: std::ops::Range<usize>) -> Self {
        let len = self.sample_len();
        let mut shape = self.shape;
        shape[0] = range.len();
        Self { shape, data: self.data[range.start * len..range.end * len].to_vec() }
    }

    /// Gathers the listed samples into a new buffer.
    pub fn gather(&self, indices: &[usize]) -> Self {
        let len = self.sample_len();
        let mut data = Vec::with_capacity(indices.len() * len);
        for &i in indices {
            data.extend_from_slice(self.sample(i));
        }
        let mut shape = self.shape;
        shape[0] = indices.len();
        Self { shape, data }
    }

    pub fn cast<U: Element>(&self) -> TensorBuffer<U> {
        TensorBuffer { shape: self.shape, data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect() }
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }

    /// Reinterprets the sample dimensions.
    pub fn reshaped(mut self, sample: Shape) -> Self {
        debug_assert_eq!(sample.elements(), self.sample_len());
        self.shape = [self.shape[0], sample.channels, sample.height, sample.width];
        self
    }
}
