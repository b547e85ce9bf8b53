//! Shared fixtures for the kernel benchmarks.

use splitforge::arch::{tiny_quadrant, vgg16_cifar};
use splitforge::data::{synth_quadrant_dataset, Dataset};
use splitforge::oracle::random_inputs;
use splitforge::transform::split_transform;
use splitforge::{Architecture, TensorBuffer};

/// The small quadrant net split 2-ways in both blocks.
pub fn tiny_split() -> Architecture {
    split_transform(&tiny_quadrant(), &[2, 2]).expect("widths divide by 2")
}

/// VGG16 with the 8,2,2,4,4 plan.
pub fn vgg16_split() -> Architecture {
    split_transform(&vgg16_cifar(), &[8, 2, 2, 4, 4]).expect("widths divide")
}

pub fn batch(arch: &Architecture, n: usize) -> TensorBuffer<f32> {
    random_inputs(arch, n, 0)
}

pub fn quadrants(n: usize) -> Dataset {
    synth_quadrant_dataset(0, n, 16, 4).expect("valid size")
}
