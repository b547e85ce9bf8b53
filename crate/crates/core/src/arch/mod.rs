//! Block-structured description of a convolutional network.
//!
//! An [`Architecture`] is an ordered list of [`Block`]s followed by a dense
//! classifier head. A block is a straight-line list of [`Layer`]s with an
//! optional trailing pool. Parallel branches are expressed with
//! [`Layer::Concat`], which runs every branch on the same input and
//! concatenates their outputs along the channel axis; this is the only
//! non-sequential construct, and it is what the split transforms emit.
//!
//! Layers are addressed by positional ids: `b{block}.l{index}` for block
//! layers, `{parent}.br{branch}.l{index}` inside a concat, `b{block}.pool`
//! for the block pool and `fc{index}` for classifier layers.

mod builtin;
mod config;
mod shape;

use serde::{Deserialize, Serialize};
use std::fmt;

pub use builtin::{builtin, builtin_architectures, resnet18_cifar, tiny_quadrant, two_layer_demo, vgg16_cifar};
pub use config::{parse_architecture, serialize_architecture};
pub use shape::{infer_shapes, validate, Issue, ShapeEntry, ShapeTable, ValidationReport};

/// Errors raised while reading or checking an architecture.
#[derive(Debug, thiserror::Error)]
pub enum ArchError {
    #[error("parse error at `{path}`: {message}")]
    Parse { path: String, message: String },
    #[error("validation error: {0}")]
    Validation(String),
}

/// Per-sample feature-map shape, `(channels, height, width)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[usize; 3]", into = "[usize; 3]")]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub const fn new(channels: usize, height: usize, width: usize) -> Self {
        Self { channels, height, width }
    }

    pub const fn elements(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub const fn spatial(&self) -> usize {
        self.height * self.width
    }

    pub const fn with_channels(self, channels: usize) -> Self {
        Self { channels, ..self }
    }
}

impl From<[usize; 3]> for Shape {
    fn from([channels, height, width]: [usize; 3]) -> Self {
        Self { channels, height, width }
    }
}

impl From<Shape> for [usize; 3] {
    fn from(s: Shape) -> Self {
        [s.channels, s.height, s.width]
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

fn one() -> usize {
    1
}

fn ones() -> [usize; 2] {
    [1, 1]
}

/// 2-D convolution. Weights are `out_channels x in_channels/groups x kh x kw`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvSpec {
    pub out_channels: usize,
    pub kernel: [usize; 2],
    #[serde(default = "ones")]
    pub stride: [usize; 2],
    #[serde(default)]
    pub padding: [usize; 2],
    #[serde(default = "one")]
    pub groups: usize,
    #[serde(default)]
    pub bias: bool,
    /// Marks the 1x1 convolution of a fusion block.
    #[serde(default)]
    pub fusion: bool,
}

impl ConvSpec {
    /// 3x3, stride 1, "same" padding.
    pub fn same3x3(out_channels: usize) -> Self {
        Self {
            out_channels,
            kernel: [3, 3],
            stride: [1, 1],
            padding: [1, 1],
            groups: 1,
            bias: false,
            fusion: false,
        }
    }

    pub fn pointwise(out_channels: usize) -> Self {
        Self {
            out_channels,
            kernel: [1, 1],
            stride: [1, 1],
            padding: [0, 0],
            groups: 1,
            bias: false,
            fusion: false,
        }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = [stride, stride];
        self
    }

    pub fn output_shape(&self, input: Shape) -> Option<Shape> {
        let h = conv_extent(input.height, self.kernel[0], self.stride[0], self.padding[0])?;
        let w = conv_extent(input.width, self.kernel[1], self.stride[1], self.padding[1])?;
        Some(Shape::new(self.out_channels, h, w))
    }

    pub fn weight_count(&self, in_channels: usize) -> usize {
        self.out_channels * (in_channels / self.groups) * self.kernel[0] * self.kernel[1]
    }
}

fn conv_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if padded < kernel || stride == 0 {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolMode {
    Max,
    Avg,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolSpec {
    pub mode: PoolMode,
    pub window: [usize; 2],
    pub stride: [usize; 2],
}

impl PoolSpec {
    pub fn max2() -> Self {
        Self { mode: PoolMode::Max, window: [2, 2], stride: [2, 2] }
    }

    pub fn avg(window: usize) -> Self {
        Self { mode: PoolMode::Avg, window: [window, window], stride: [window, window] }
    }

    /// `floor((in - window) / stride) + 1` per spatial axis.
    pub fn output_shape(&self, input: Shape) -> Option<Shape> {
        let h = conv_extent(input.height, self.window[0], self.stride[0], 0)?;
        let w = conv_extent(input.width, self.window[1], self.stride[1], 0)?;
        Some(Shape::new(input.channels, h, w))
    }
}

/// 1x1 strided projection applied to a residual shortcut.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Projection {
    pub out_channels: usize,
    #[serde(default = "ones")]
    pub stride: [usize; 2],
    #[serde(default)]
    pub bias: bool,
}

impl Projection {
    pub fn conv_spec(&self) -> ConvSpec {
        ConvSpec {
            out_channels: self.out_channels,
            kernel: [1, 1],
            stride: self.stride,
            padding: [0, 0],
            groups: 1,
            bias: self.bias,
            fusion: false,
        }
    }
}

/// Adds the input of layer `from` (same layer list) to the running value.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Residual {
    pub from: usize,
    #[serde(default)]
    pub projection: Option<Projection>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Branch {
    pub layers: Vec<Layer>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Layer {
    Conv(ConvSpec),
    Relu,
    Pool(PoolSpec),
    ChannelSlice { start: usize, len: usize },
    ResidualAdd(Residual),
    Concat { branches: Vec<Branch> },
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv(c) if c.fusion => "fusion_conv",
            Layer::Conv(_) => "conv",
            Layer::Relu => "relu",
            Layer::Pool(_) => "pool",
            Layer::ChannelSlice { .. } => "channel_slice",
            Layer::ResidualAdd(_) => "residual_add",
            Layer::Concat { .. } => "concat",
        }
    }

    pub fn conv(spec: ConvSpec) -> Self {
        Layer::Conv(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Block {
    pub layers: Vec<Layer>,
    /// `None` marks a pool-free block.
    #[serde(default)]
    pub pool: Option<PoolSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenseSpec {
    pub out_features: usize,
    #[serde(default)]
    pub bias: bool,
}

/// Flatten followed by dense layers with ReLU between consecutive layers.
/// With no dense layers the flattened features are the logits.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierSpec {
    #[serde(default)]
    pub dense: Vec<DenseSpec>,
}

impl ClassifierSpec {
    pub fn linear(classes: usize) -> Self {
        Self { dense: vec![DenseSpec { out_features: classes, bias: false }] }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub name: String,
    pub input_shape: Shape,
    pub blocks: Vec<Block>,
    pub classifier: ClassifierSpec,
}

impl Architecture {
    /// True when any block contains a concat, i.e. the network has already
    /// been through a split transform.
    pub fn is_split(&self) -> bool {
        self.blocks.iter().any(|b| contains_concat(&b.layers))
    }

    pub fn pool_count(&self) -> usize {
        fn count(layers: &[Layer]) -> usize {
            layers
                .iter()
                .map(|l| match l {
                    Layer::Pool(_) => 1,
                    Layer::Concat { branches } => {
                        branches.first().map(|b| count(&b.layers)).unwrap_or(0)
                    }
                    _ => 0,
                })
                .sum()
        }
        self.blocks.iter().map(|b| count(&b.layers) + usize::from(b.pool.is_some())).sum()
    }

    /// Number of top-level conv layers (projections and fusion convs excluded).
    pub fn conv_layer_count(&self) -> usize {
        self.blocks
            .iter()
            .flat_map(|b| &b.layers)
            .filter(|l| matches!(l, Layer::Conv(c) if !c.fusion))
            .count()
    }

    /// Number of fusion 1x1 convolutions anywhere in the network.
    pub fn fusion_count(&self) -> usize {
        fn count(layers: &[Layer]) -> usize {
            layers
                .iter()
                .map(|l| match l {
                    Layer::Conv(c) if c.fusion => 1,
                    Layer::Concat { branches } => branches.iter().map(|b| count(&b.layers)).sum(),
                    _ => 0,
                })
                .sum()
        }
        self.blocks.iter().map(|b| count(&b.layers)).sum()
    }
}

pub(crate) fn contains_concat(layers: &[Layer]) -> bool {
    layers.iter().any(|l| matches!(l, Layer::Concat { .. }))
}

pub(crate) fn layer_id(prefix: &str, index: usize) -> String {
    format!("{prefix}.l{index}")
}

pub(crate) fn branch_prefix(layer_id: &str, branch: usize) -> String {
    format!("{layer_id}.br{branch}")
}
