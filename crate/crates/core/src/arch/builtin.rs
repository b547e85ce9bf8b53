//! Reference architectures at CIFAR scale (3x32x32 input, 10 classes).

use super::{Architecture, Block, ClassifierSpec, ConvSpec, Layer, PoolSpec, Projection, Residual, Shape};
use std::collections::BTreeMap;

const CIFAR: Shape = Shape::new(3, 32, 32);

fn conv_relu(out: usize) -> [Layer; 2] {
    [Layer::Conv(ConvSpec::same3x3(out)), Layer::Relu]
}

/// VGG16 with 3x3 same-padded convs, a 2x2 max pool after each of the five
/// stages and a single dense layer on the 512x1x1 features.
pub fn vgg16_cifar() -> Architecture {
    let stages: [&[usize]; 5] = [&[64, 64], &[128, 128], &[256, 256, 256], &[512, 512, 512], &[512, 512, 512]];
    let blocks = stages
        .iter()
        .map(|widths| Block {
            layers: widths.iter().flat_map(|&w| conv_relu(w)).collect(),
            pool: Some(PoolSpec::max2()),
        })
        .collect();
    Architecture {
        name: "vgg16_cifar".into(),
        input_shape: CIFAR,
        blocks,
        classifier: ClassifierSpec::linear(10),
    }
}

/// Two basic residual blocks; the first downsamples with a strided conv and
/// a projected shortcut when `downsample` is set.
fn resnet_stage(width: usize, downsample: bool) -> Vec<Layer> {
    let first = if downsample { ConvSpec::same3x3(width).with_stride(2) } else { ConvSpec::same3x3(width) };
    let projection = downsample.then(|| Projection { out_channels: width, stride: [2, 2], bias: false });
    vec![
        Layer::Conv(first),
        Layer::Relu,
        Layer::Conv(ConvSpec::same3x3(width)),
        Layer::ResidualAdd(Residual { from: 0, projection }),
        Layer::Relu,
        Layer::Conv(ConvSpec::same3x3(width)),
        Layer::Relu,
        Layer::Conv(ConvSpec::same3x3(width)),
        Layer::ResidualAdd(Residual { from: 5, projection: None }),
        Layer::Relu,
    ]
}

/// ResNet18 for 32x32 inputs: 3x3 stem, stages of 64/128/256/512 channels.
/// Blocks follow resolution changes: the stem, then one block per stage;
/// the last block ends in a 4x4 average pool.
pub fn resnet18_cifar() -> Architecture {
    let mut blocks = vec![Block { layers: conv_relu(64).to_vec(), pool: None }];
    blocks.push(Block { layers: resnet_stage(64, false), pool: None });
    blocks.push(Block { layers: resnet_stage(128, true), pool: None });
    blocks.push(Block { layers: resnet_stage(256, true), pool: None });
    blocks.push(Block { layers: resnet_stage(512, true), pool: Some(PoolSpec::avg(4)) });
    Architecture {
        name: "resnet18_cifar".into(),
        input_shape: CIFAR,
        blocks,
        classifier: ClassifierSpec::linear(10),
    }
}

/// Two 3x3 conv layers `l0 -> l1 -> l2` on a 32x32 input, one pool.
pub fn two_layer_demo(l0: usize, l1: usize, l2: usize) -> Architecture {
    let mut layers = conv_relu(l1).to_vec();
    layers.extend(conv_relu(l2));
    Architecture {
        name: format!("two_layer_demo_{l0}_{l1}_{l2}"),
        input_shape: Shape::new(l0, 32, 32),
        blocks: vec![Block { layers, pool: Some(PoolSpec::max2()) }],
        classifier: ClassifierSpec::linear(10),
    }
}

/// Two conv stages of widths 8 and 16 on a 3x16x16 input with four
/// classes; sized for the synthetic quadrant dataset.
pub fn tiny_quadrant() -> Architecture {
    Architecture {
        name: "tiny_quadrant".into(),
        input_shape: Shape::new(3, 16, 16),
        blocks: [8, 16].iter().map(|&w| Block { layers: conv_relu(w).to_vec(), pool: Some(PoolSpec::max2()) }).collect(),
        classifier: ClassifierSpec::linear(4),
    }
}

pub fn builtin_architectures() -> BTreeMap<&'static str, Architecture> {
    BTreeMap::from([
        ("vgg16_cifar", vgg16_cifar()),
        ("resnet18_cifar", resnet18_cifar()),
        ("two_layer_demo", two_layer_demo(3, 64, 64)),
        ("tiny_quadrant", tiny_quadrant()),
    ])
}

pub fn builtin(name: &str) -> Option<Architecture> {
    builtin_architectures().remove(name)
}
