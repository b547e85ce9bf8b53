//! Random small networks for the randomized oracle suites.

use crate::arch::{Architecture, Block, ClassifierSpec, ConvSpec, DenseSpec, Layer, PoolMode, PoolSpec, Projection, Residual, Shape};
use crate::transform::{ideal_split, split_transform};
use rand::seq::SliceRandom;
use rand::Rng;

fn conv(rng: &mut impl Rng, out: usize) -> Layer {
    let mut c = ConvSpec::same3x3(out);
    if rng.gen_bool(0.3) {
        c = ConvSpec::pointwise(out);
    }
    c.bias = rng.gen_bool(0.5);
    Layer::Conv(c)
}

fn pool(rng: &mut impl Rng) -> PoolSpec {
    let mode = if rng.gen_bool(0.5) { PoolMode::Max } else { PoolMode::Avg };
    PoolSpec { mode, window: [2, 2], stride: [2, 2] }
}

/// One to three blocks of widths 8 or 16 on an 8x8 input, mixing 3x3 and
/// 1x1 convs, optional biases, plain and projected shortcuts and max or
/// average pools; the last block may be pool-free.
pub fn random_network(rng: &mut impl Rng) -> Architecture {
    let blocks_n = rng.gen_range(1..=3);
    let mut blocks = Vec::with_capacity(blocks_n);
    for i in 0..blocks_n {
        let width = *[8, 16].choose(rng).expect("non-empty");
        let layers = match rng.gen_range(0..3) {
            0 => vec![conv(rng, width), Layer::Relu],
            1 => vec![
                conv(rng, width),
                Layer::Relu,
                conv(rng, width),
                Layer::ResidualAdd(Residual { from: 2, projection: None }),
                Layer::Relu,
            ],
            _ => vec![
                conv(rng, width),
                Layer::Relu,
                conv(rng, width),
                Layer::ResidualAdd(Residual {
                    from: 0,
                    projection: Some(Projection { out_channels: width, stride: [1, 1], bias: rng.gen_bool(0.5) }),
                }),
                Layer::Relu,
            ],
        };
        let last = i + 1 == blocks_n;
        let pool = if i < 2 && !(last && rng.gen_bool(0.3)) { Some(pool(rng)) } else { None };
        blocks.push(Block { layers, pool });
    }
    let classes = rng.gen_range(2..=5);
    let classifier = if rng.gen_bool(0.5) {
        ClassifierSpec::linear(classes)
    } else {
        ClassifierSpec {
            dense: vec![DenseSpec { out_features: 6, bias: true }, DenseSpec { out_features: classes, bias: rng.gen_bool(0.5) }],
        }
    };
    Architecture {
        name: "random".into(),
        input_shape: Shape::new(rng.gen_range(2..=4), 8, 8),
        blocks,
        classifier,
    }
}

/// A random network split with random per-block factors from {1, 2, 4, 8}.
pub fn random_proposed(rng: &mut impl Rng) -> (Architecture, Architecture) {
    let arch = random_network(rng);
    let factors: Vec<usize> = arch.blocks.iter().map(|_| *[1, 2, 4, 8].choose(rng).expect("non-empty")).collect();
    let split = split_transform(&arch, &factors).expect("widths are multiples of 8");
    (arch, split)
}

/// A random two-conv network and an ideal split of it with `k1 | k2`.
pub fn random_ideal(rng: &mut impl Rng) -> (Architecture, Architecture) {
    let l0 = rng.gen_range(1..=4);
    let l1 = *[8, 16].choose(rng).expect("non-empty");
    let l2 = *[8, 16].choose(rng).expect("non-empty");
    let k1 = *[1, 2, 4, 8].choose(rng).expect("non-empty");
    // k1 = k2 = 1 would leave the network unsplit
    let k2 = if k1 == 1 || (l2 % (2 * k1) == 0 && rng.gen_bool(0.5)) { 2 * k1 } else { k1 };
    let pool = rng.gen_bool(0.7).then(|| pool(rng));
    let arch = Architecture {
        name: "random-two-layer".into(),
        input_shape: Shape::new(l0, 8, 8),
        blocks: vec![Block {
            layers: vec![Layer::Conv(ConvSpec::same3x3(l1)), Layer::Relu, Layer::Conv(ConvSpec::same3x3(l2)), Layer::Relu],
            pool,
        }],
        classifier: ClassifierSpec::linear(rng.gen_range(2..=5)),
    };
    let split = ideal_split(&arch, k1, k2).expect("k1 divides k2 and both divide the widths");
    (arch, split)
}

/// A net exercising every op kind on the gradient path: grouped, 1x1 and
/// fusion convs, max and average pools, ReLU, channel slices, concat,
/// plain and projected shortcuts and a two-layer dense head.
pub fn gradient_network() -> Architecture {
    let mut grouped = ConvSpec::same3x3(4);
    grouped.groups = 2;
    grouped.bias = true;
    let base = Architecture {
        name: "gradient-suite".into(),
        input_shape: Shape::new(2, 4, 4),
        blocks: vec![
            Block {
                layers: vec![
                    Layer::Conv(ConvSpec::same3x3(4)),
                    Layer::Relu,
                    Layer::Conv(grouped),
                    Layer::ResidualAdd(Residual { from: 2, projection: None }),
                    Layer::Relu,
                ],
                pool: Some(PoolSpec::max2()),
            },
            Block {
                layers: vec![
                    Layer::Conv(ConvSpec::pointwise(4)),
                    Layer::Relu,
                    Layer::ResidualAdd(Residual {
                        from: 0,
                        projection: Some(Projection { out_channels: 4, stride: [1, 1], bias: true }),
                    }),
                ],
                pool: Some(PoolSpec::avg(2)),
            },
        ],
        classifier: ClassifierSpec {
            dense: vec![DenseSpec { out_features: 5, bias: true }, DenseSpec { out_features: 3, bias: true }],
        },
    };
    split_transform(&base, &[2, 2]).expect("widths divisible by 2")
}
