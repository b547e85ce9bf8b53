//! Split transforms.
//!
//! * [`split_transform`] splits every block into `K_i` narrow parallel
//!   branches and joins them with a fusion block (per-branch pool, concat,
//!   1x1 conv back to the original width).
//! * [`ideal_split`] splits a two-conv network into fully disconnected
//!   sub-networks.
//! * [`naive_split`] makes `K` full-depth slim copies joined before the
//!   classifier.
//! * [`shared_split`] keeps the first `S` conv layers and splits the rest.
//!
//! All transforms refuse inputs that already contain a concat.

use crate::arch::{
    infer_shapes, validate, ArchError, Architecture, Block, Branch, ConvSpec, Layer, PoolSpec, Residual, Shape,
};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum TransformError {
    #[error("factor {factor} does not divide {channels} channels at {layer} (block {block})")]
    NonDivisible { block: usize, layer: String, factor: usize, channels: usize },
    #[error("plan has {got} factors but the architecture has {expected} blocks")]
    PlanLengthMismatch { expected: usize, got: usize },
    #[error("splitting factors must be at least 1")]
    ZeroFactor,
    #[error("architecture is already split; transforms do not nest")]
    AlreadySplit,
    #[error("ideal split with k1={k1}, k2={k2} has no branch wiring (k1 must divide k2)")]
    UnresolvableWiring { k1: usize, k2: usize },
    #[error("shared depth {depth} exceeds the {convs} conv layers of the network")]
    SharedDepthTooLarge { depth: usize, convs: usize },
    #[error("ideal split needs a single block with exactly two ungrouped conv layers and only relus besides")]
    NotTwoLayer,
    #[error("residual at {layer} crosses the shared/split boundary")]
    ResidualAcrossCut { layer: String },
    #[error("plan: {0}")]
    InvalidPlan(String),
    #[error("transformed architecture is invalid: {0}")]
    Invalid(String),
    #[error(transparent)]
    Arch(#[from] ArchError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    Proposed,
    Ideal,
    Naive,
    Shared,
}

fn is_false(b: &bool) -> bool {
    !*b
}

/// Splitting factors plus transform mode.
///
/// `factors` holds one factor per block for `proposed`, `[k1, k2]` for
/// `ideal`, and a single `K` for `naive` and `shared`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitPlan {
    pub mode: SplitMode,
    pub factors: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shared_depth: Option<usize>,
    /// Append a ReLU after each fusion 1x1 conv (proposed mode only).
    #[serde(default, skip_serializing_if = "is_false")]
    pub fusion_relu: bool,
}

impl SplitPlan {
    pub fn proposed(factors: impl Into<Vec<usize>>) -> Self {
        Self { mode: SplitMode::Proposed, factors: factors.into(), shared_depth: None, fusion_relu: false }
    }

    pub fn ideal(k1: usize, k2: usize) -> Self {
        Self { mode: SplitMode::Ideal, factors: vec![k1, k2], shared_depth: None, fusion_relu: false }
    }

    pub fn naive(k: usize) -> Self {
        Self { mode: SplitMode::Naive, factors: vec![k], shared_depth: None, fusion_relu: false }
    }

    pub fn shared(depth: usize, k: usize) -> Self {
        Self { mode: SplitMode::Shared, factors: vec![k], shared_depth: Some(depth), fusion_relu: false }
    }

    pub fn from_json(text: &str) -> Result<Self, TransformError> {
        serde_json::from_str(text).map_err(|e| TransformError::InvalidPlan(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("plan is serializable")
    }

    /// Applies the plan to `arch`.
    pub fn apply(&self, arch: &Architecture) -> Result<Architecture, TransformError> {
        let single = |what: &str| -> Result<usize, TransformError> {
            match self.factors.as_slice() {
                [k] => Ok(*k),
                _ => Err(TransformError::InvalidPlan(format!("{what} mode takes exactly one factor"))),
            }
        };
        match self.mode {
            SplitMode::Proposed => split_transform_with(arch, &self.factors, FusionOptions { relu: self.fusion_relu }),
            SplitMode::Ideal => match self.factors.as_slice() {
                [k1, k2] => ideal_split(arch, *k1, *k2),
                _ => Err(TransformError::InvalidPlan("ideal mode takes factors [k1, k2]".into())),
            },
            SplitMode::Naive => naive_split(arch, single("naive")?),
            SplitMode::Shared => {
                let depth = self
                    .shared_depth
                    .ok_or_else(|| TransformError::InvalidPlan("shared mode needs shared_depth".into()))?;
                shared_split(arch, depth, single("shared")?)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FusionOptions {
    pub relu: bool,
}

/// A fusion stage found in a split architecture.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FusionSpec {
    pub block: usize,
    pub branches: usize,
    /// Pool applied at the end of every branch, if any.
    pub pool: Option<PoolSpec>,
    pub fused_channels: usize,
}

/// Lists the fusion blocks of an architecture produced by [`split_transform`].
pub fn fusion_blocks(arch: &Architecture) -> Vec<FusionSpec> {
    let mut out = Vec::new();
    for (i, block) in arch.blocks.iter().enumerate() {
        if let [Layer::Concat { branches }, Layer::Conv(c), ..] = block.layers.as_slice() {
            if c.fusion {
                let pool = branches.first().and_then(|b| match b.layers.last() {
                    Some(Layer::Pool(p)) => Some(p.clone()),
                    _ => None,
                });
                out.push(FusionSpec { block: i, branches: branches.len(), pool, fused_channels: c.out_channels });
            }
        }
    }
    out
}

fn check_factor(k: usize) -> Result<(), TransformError> {
    if k == 0 {
        Err(TransformError::ZeroFactor)
    } else {
        Ok(())
    }
}

/// Divides the width of every conv and projection by `k`.
fn narrow(layers: &[Layer], k: usize, block: usize, prefix: &str) -> Result<Vec<Layer>, TransformError> {
    let nondiv = |idx: usize, channels: usize| TransformError::NonDivisible {
        block,
        layer: format!("{prefix}.l{idx}"),
        factor: k,
        channels,
    };
    layers
        .iter()
        .enumerate()
        .map(|(idx, layer)| match layer {
            Layer::Conv(c) => {
                if c.out_channels % k != 0 {
                    return Err(nondiv(idx, c.out_channels));
                }
                Ok(Layer::Conv(ConvSpec { out_channels: c.out_channels / k, ..c.clone() }))
            }
            Layer::ResidualAdd(r) => {
                let mut r = r.clone();
                if let Some(p) = r.projection.as_mut() {
                    if p.out_channels % k != 0 {
                        return Err(nondiv(idx, p.out_channels));
                    }
                    p.out_channels /= k;
                }
                Ok(Layer::ResidualAdd(r))
            }
            Layer::ChannelSlice { .. } | Layer::Concat { .. } => {
                Err(TransformError::InvalidPlan(format!("{prefix}.l{idx}: cannot narrow {}", layer.kind())))
            }
            other => Ok(other.clone()),
        })
        .collect()
}

/// Moves residual sources by `delta` positions (layers were inserted or
/// removed in front).
fn shift_residuals(layers: &mut [Layer], delta: isize) {
    for layer in layers {
        if let Layer::ResidualAdd(Residual { from, .. }) = layer {
            *from = (*from as isize + delta) as usize;
        }
    }
}

fn finish(arch: Architecture) -> Result<Architecture, TransformError> {
    let report = validate(&arch);
    match report.issues.first() {
        Some(issue) => Err(TransformError::Invalid(issue.to_string())),
        None => Ok(arch),
    }
}

fn block_inputs(arch: &Architecture) -> Result<Vec<Shape>, TransformError> {
    let table = infer_shapes(arch)?;
    let mut cur = arch.input_shape;
    let mut inputs = Vec::with_capacity(arch.blocks.len());
    for i in 0..arch.blocks.len() {
        inputs.push(cur);
        cur = table.block_output(i).unwrap_or(cur);
    }
    inputs.push(cur);
    Ok(inputs)
}

fn join(factors: &[usize]) -> String {
    factors.iter().map(usize::to_string).collect::<Vec<_>>().join("-")
}

/// Proposed per-block split with fusion blocks, no ReLU after fusion.
pub fn split_transform(arch: &Architecture, factors: &[usize]) -> Result<Architecture, TransformError> {
    split_transform_with(arch, factors, FusionOptions::default())
}

/// Proposed per-block split.
///
/// Block `i` with factor `K` becomes `K` branches of width `1/K`. Branches
/// of the first block all read the full network input; branch `j` of a later
/// block reads the `j`-th contiguous channel slice of the preceding fusion
/// output. Each branch ends with the block's pool; the branches are
/// concatenated and a 1x1 conv restores the original block output width.
/// With all factors 1 this yields the fused baseline.
pub fn split_transform_with(
    arch: &Architecture,
    factors: &[usize],
    opts: FusionOptions,
) -> Result<Architecture, TransformError> {
    if arch.is_split() {
        return Err(TransformError::AlreadySplit);
    }
    if factors.len() != arch.blocks.len() {
        return Err(TransformError::PlanLengthMismatch { expected: arch.blocks.len(), got: factors.len() });
    }
    factors.iter().try_for_each(|&k| check_factor(k))?;
    let shapes = block_inputs(arch)?;
    let mut blocks = Vec::with_capacity(arch.blocks.len());
    for (i, (block, &k)) in arch.blocks.iter().zip(factors).enumerate() {
        let prefix = format!("b{i}");
        let in_c = shapes[i].channels;
        let out_c = shapes[i + 1].channels;
        if i > 0 && in_c % k != 0 {
            return Err(TransformError::NonDivisible {
                block: i,
                layer: format!("{prefix} input"),
                factor: k,
                channels: in_c,
            });
        }
        let body = narrow(&block.layers, k, i, &prefix)?;
        let slice = in_c / k;
        let branches = (0..k)
            .map(|j| {
                let mut layers = Vec::with_capacity(body.len() + 2);
                if i > 0 {
                    layers.push(Layer::ChannelSlice { start: j * slice, len: slice });
                }
                let mut narrowed = body.clone();
                if i > 0 {
                    shift_residuals(&mut narrowed, 1);
                }
                layers.extend(narrowed);
                if let Some(pool) = &block.pool {
                    layers.push(Layer::Pool(pool.clone()));
                }
                Branch { layers }
            })
            .collect();
        let mut fusion = ConvSpec::pointwise(out_c);
        fusion.fusion = true;
        let mut layers = vec![Layer::Concat { branches }, Layer::Conv(fusion)];
        if opts.relu {
            layers.push(Layer::Relu);
        }
        blocks.push(Block { layers, pool: None });
    }
    finish(Architecture {
        name: format!("{}-split-{}", arch.name, join(factors)),
        input_shape: arch.input_shape,
        blocks,
        classifier: arch.classifier.clone(),
    })
}

/// Fully disconnected split of a two-conv network `L0 -> L1 -> L2`.
///
/// Layer 1 becomes `k1` branches of width `L1/k1`, each reading the full
/// input. Each of them feeds `k2/k1` layer-2 branches of width `L2/k2`, so
/// every layer-2 branch reads exactly one layer-1 branch. Requires `k1 | k2`.
pub fn ideal_split(arch: &Architecture, k1: usize, k2: usize) -> Result<Architecture, TransformError> {
    if arch.is_split() {
        return Err(TransformError::AlreadySplit);
    }
    check_factor(k1)?;
    check_factor(k2)?;
    let [block] = arch.blocks.as_slice() else {
        return Err(TransformError::NotTwoLayer);
    };
    let conv_at: Vec<usize> = block
        .layers
        .iter()
        .enumerate()
        .filter(|(_, l)| matches!(l, Layer::Conv(_)))
        .map(|(i, _)| i)
        .collect();
    let only_relu = block.layers.iter().all(|l| matches!(l, Layer::Conv(_) | Layer::Relu));
    let (first, second) = match (conv_at.as_slice(), only_relu) {
        ([0, b], true) => (0, *b),
        _ => return Err(TransformError::NotTwoLayer),
    };
    let (Layer::Conv(c1), Layer::Conv(c2)) = (&block.layers[first], &block.layers[second]) else {
        unreachable!()
    };
    if c1.groups != 1 || c2.groups != 1 {
        return Err(TransformError::NotTwoLayer);
    }
    for (layer, c, k) in [("b0.l0", c1, k1), (&*format!("b0.l{second}"), c2, k2)] {
        if c.out_channels % k != 0 {
            return Err(TransformError::NonDivisible {
                block: 0,
                layer: layer.to_string(),
                factor: k,
                channels: c.out_channels,
            });
        }
    }
    if k2 < k1 || k2 % k1 != 0 {
        return Err(TransformError::UnresolvableWiring { k1, k2 });
    }
    if k1 == 1 && k2 == 1 {
        return Ok(arch.clone());
    }
    let between: Vec<Layer> = block.layers[first + 1..second].to_vec();
    let after: Vec<Layer> = block.layers[second + 1..].to_vec();
    let narrow1 = Layer::Conv(ConvSpec { out_channels: c1.out_channels / k1, ..c1.clone() });
    let narrow2 = Layer::Conv(ConvSpec { out_channels: c2.out_channels / k2, ..c2.clone() });
    let fan = k2 / k1;
    let outer = Branch {
        layers: {
            let mut layers = vec![narrow1];
            layers.extend(between);
            if fan == 1 {
                layers.push(narrow2);
                layers.extend(after);
            } else {
                let mut inner = vec![narrow2];
                inner.extend(after);
                layers.push(Layer::Concat { branches: vec![Branch { layers: inner }; fan] });
            }
            layers
        },
    };
    finish(Architecture {
        name: format!("{}-ideal-{k1}x{k2}", arch.name),
        input_shape: arch.input_shape,
        blocks: vec![Block { layers: vec![Layer::Concat { branches: vec![outer; k1] }], pool: block.pool.clone() }],
        classifier: arch.classifier.clone(),
    })
}

/// Appends `blocks` to `out` as one straight layer list, pools inline.
fn flatten_blocks(blocks: &[Block], out: &mut Vec<Layer>) {
    for block in blocks {
        let mut layers = block.layers.clone();
        shift_residuals(&mut layers, out.len() as isize);
        out.extend(layers);
        if let Some(pool) = &block.pool {
            out.push(Layer::Pool(pool.clone()));
        }
    }
}

/// `K` full-depth slim copies of the network, concatenated once before the
/// classifier.
pub fn naive_split(arch: &Architecture, k: usize) -> Result<Architecture, TransformError> {
    if arch.is_split() {
        return Err(TransformError::AlreadySplit);
    }
    check_factor(k)?;
    validate_or_err(arch)?;
    let mut template = Vec::new();
    flatten_blocks(&arch.blocks, &mut template);
    let template = narrow(&template, k, 0, "b0.l0.br0")?;
    finish(Architecture {
        name: format!("{}-naive-{k}", arch.name),
        input_shape: arch.input_shape,
        blocks: vec![Block {
            layers: vec![Layer::Concat { branches: vec![Branch { layers: template }; k] }],
            pool: None,
        }],
        classifier: arch.classifier.clone(),
    })
}

/// Keeps the first `depth` conv layers (and the ReLUs right after them)
/// unchanged; the rest of the network becomes `k` slim branches, each
/// reading the full shared output, concatenated before the classifier.
pub fn shared_split(arch: &Architecture, depth: usize, k: usize) -> Result<Architecture, TransformError> {
    if arch.is_split() {
        return Err(TransformError::AlreadySplit);
    }
    check_factor(k)?;
    validate_or_err(arch)?;
    let convs = arch.conv_layer_count();
    if depth > convs {
        return Err(TransformError::SharedDepthTooLarge { depth, convs });
    }
    if depth == convs {
        return Ok(arch.clone());
    }
    // Locate the cut: block index and layer position just past the
    // `depth`-th conv and any ReLUs following it.
    let (cut_block, cut_at) = if depth == 0 {
        (0, 0)
    } else {
        let mut seen = 0;
        let mut found = None;
        'outer: for (i, block) in arch.blocks.iter().enumerate() {
            for (j, layer) in block.layers.iter().enumerate() {
                if matches!(layer, Layer::Conv(c) if !c.fusion) {
                    seen += 1;
                    if seen == depth {
                        let mut end = j + 1;
                        while matches!(block.layers.get(end), Some(Layer::Relu)) {
                            end += 1;
                        }
                        found = Some((i, end));
                        break 'outer;
                    }
                }
            }
        }
        found.expect("depth < conv count")
    };
    let block = &arch.blocks[cut_block];
    let (head, tail) = block.layers.split_at(cut_at);
    for (j, layer) in tail.iter().enumerate() {
        if let Layer::ResidualAdd(r) = layer {
            if r.from < cut_at {
                return Err(TransformError::ResidualAcrossCut { layer: format!("b{cut_block}.l{}", cut_at + j) });
            }
        }
    }
    let mut blocks: Vec<Block> = arch.blocks[..cut_block].to_vec();
    let pool_in_shared = tail.is_empty() && !head.is_empty();
    if !head.is_empty() {
        blocks.push(Block {
            layers: head.to_vec(),
            pool: if pool_in_shared { block.pool.clone() } else { None },
        });
    }
    let mut template = tail.to_vec();
    shift_residuals(&mut template, -(cut_at as isize));
    if !pool_in_shared {
        if let Some(pool) = &block.pool {
            template.push(Layer::Pool(pool.clone()));
        }
    }
    flatten_blocks(&arch.blocks[cut_block + 1..], &mut template);
    let split_index = blocks.len();
    let template = narrow(&template, k, split_index, &format!("b{split_index}.l0.br0"))?;
    blocks.push(Block {
        layers: vec![Layer::Concat { branches: vec![Branch { layers: template }; k] }],
        pool: None,
    });
    finish(Architecture {
        name: format!("{}-shared-{depth}-{k}", arch.name),
        input_shape: arch.input_shape,
        blocks,
        classifier: arch.classifier.clone(),
    })
}

fn validate_or_err(arch: &Architecture) -> Result<(), TransformError> {
    match validate(arch).issues.first() {
        Some(issue) => Err(ArchError::Validation(issue.to_string()).into()),
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{two_layer_demo, vgg16_cifar, ClassifierSpec};

    fn single_conv_block() -> Architecture {
        Architecture {
            name: "one".into(),
            input_shape: Shape::new(3, 32, 32),
            blocks: vec![Block { layers: vec![Layer::Conv(ConvSpec::same3x3(64))], pool: Some(PoolSpec::max2()) }],
            classifier: ClassifierSpec::linear(10),
        }
    }

    #[test]
    fn all_ones_is_fused_baseline() {
        let arch = vgg16_cifar();
        let fused = split_transform(&arch, &[1; 5]).unwrap();
        let fusions = fusion_blocks(&fused);
        assert_eq!(fusions.len(), 5);
        assert!(fusions.iter().all(|f| f.branches == 1));
        assert_eq!(fused.fusion_count(), 5);
        let a = infer_shapes(&arch).unwrap();
        let b = infer_shapes(&fused).unwrap();
        assert_eq!(a.features, b.features);
        for i in 0..5 {
            assert_eq!(a.block_output(i), b.block_output(i));
        }
    }

    #[test]
    fn vgg_proposed_i() {
        let arch = vgg16_cifar();
        let split = split_transform(&arch, &[8, 2, 2, 4, 4]).unwrap();
        assert!(validate(&split).is_valid());
        let t = infer_shapes(&split).unwrap();
        assert_eq!(t.get("b0.l0.br0.l0").unwrap().output.channels, 8);
        assert_eq!(t.get("b1.l0.br0.l1").unwrap().output.channels, 64);
        assert_eq!(t.get("b4.l0.br3.l1").unwrap().output.channels, 128);
        assert_eq!(t.classifier_input, infer_shapes(&arch).unwrap().classifier_input);
    }

    #[test]
    fn single_block_k2_structure() {
        let split = split_transform(&single_conv_block(), &[2]).unwrap();
        let t = infer_shapes(&split).unwrap();
        for j in 0..2 {
            let conv = t.get(&format!("b0.l0.br{j}.l0")).unwrap();
            assert_eq!(conv.input, Shape::new(3, 32, 32));
            assert_eq!(conv.output, Shape::new(32, 32, 32));
            assert_eq!(t.get(&format!("b0.l0.br{j}.l1")).unwrap().output, Shape::new(32, 16, 16));
        }
        assert_eq!(t.get("b0.l0").unwrap().output, Shape::new(64, 16, 16));
        let fusion = t.get("b0.l1").unwrap();
        assert_eq!((fusion.kind, fusion.input.channels, fusion.output.channels), ("fusion_conv", 64, 64));
    }

    #[test]
    fn later_blocks_slice_contiguously() {
        let split = split_transform(&vgg16_cifar(), &[1, 4, 1, 1, 1]).unwrap();
        let Layer::Concat { branches } = &split.blocks[1].layers[0] else { panic!() };
        for (j, b) in branches.iter().enumerate() {
            assert_eq!(b.layers[0], Layer::ChannelSlice { start: j * 16, len: 16 });
        }
    }

    #[test]
    fn errors() {
        let arch = vgg16_cifar();
        assert!(matches!(
            split_transform(&arch, &[1, 1, 1, 1]),
            Err(TransformError::PlanLengthMismatch { expected: 5, got: 4 })
        ));
        assert!(matches!(split_transform(&arch, &[3, 1, 1, 1, 1]), Err(TransformError::NonDivisible { .. })));
        let fused = split_transform(&arch, &[1; 5]).unwrap();
        assert!(matches!(split_transform(&fused, &[1; 5]), Err(TransformError::AlreadySplit)));
        assert!(matches!(split_transform(&arch, &[0, 1, 1, 1, 1]), Err(TransformError::ZeroFactor)));
    }

    #[test]
    fn ideal_identity_and_wiring() {
        let demo = two_layer_demo(3, 64, 64);
        assert_eq!(ideal_split(&demo, 1, 1).unwrap(), demo);
        assert!(matches!(ideal_split(&demo, 4, 2), Err(TransformError::UnresolvableWiring { k1: 4, k2: 2 })));
        assert!(matches!(ideal_split(&demo, 3, 3), Err(TransformError::NonDivisible { .. })));
        let s = ideal_split(&demo, 2, 8).unwrap();
        let t = infer_shapes(&s).unwrap();
        assert_eq!(t.get("b0.l0.br1.l2.br3.l0").unwrap().input.channels, 32);
        assert_eq!(t.get("b0.l0.br1.l2.br3.l0").unwrap().output.channels, 8);
        assert_eq!(t.features, Shape::new(64, 16, 16));
    }

    #[test]
    fn naive_and_shared_shapes() {
        let arch = vgg16_cifar();
        let features = infer_shapes(&arch).unwrap().features;
        let naive = naive_split(&arch, 4).unwrap();
        let Layer::Concat { branches } = &naive.blocks[0].layers[0] else { panic!() };
        assert_eq!(branches.len(), 4);
        assert_eq!(infer_shapes(&naive).unwrap().features, features);

        let shared = shared_split(&arch, 3, 4).unwrap();
        assert_eq!(shared.blocks.len(), 3);
        assert_eq!(shared.blocks[1].layers, vec![Layer::Conv(ConvSpec::same3x3(128)), Layer::Relu]);
        assert_eq!(shared.blocks[1].pool, None);
        assert_eq!(infer_shapes(&shared).unwrap().features, features);

        assert_eq!(shared_split(&arch, 13, 4).unwrap(), arch);
        assert!(matches!(shared_split(&arch, 14, 4), Err(TransformError::SharedDepthTooLarge { .. })));
    }

    #[test]
    fn plan_json() {
        let plan = SplitPlan::from_json(r#"{"mode":"proposed","factors":[8,2,2,4,4]}"#).unwrap();
        assert_eq!(plan, SplitPlan::proposed(vec![8, 2, 2, 4, 4]));
        assert_eq!(SplitPlan::from_json(&plan.to_json()).unwrap(), plan);
        let shared = SplitPlan::from_json(r#"{"mode":"shared","factors":[4],"shared_depth":3}"#).unwrap();
        assert_eq!(shared, SplitPlan::shared(3, 4));
        assert!(SplitPlan::from_json(r#"{"mode":"proposed","factors":[1],"bogus":1}"#).is_err());
    }
}
