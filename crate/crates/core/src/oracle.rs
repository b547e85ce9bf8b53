//! Semantic checks: block-diagonal embedding of a split network into its
//! full-width counterpart, logit equivalence on random inputs and
//! finite-difference gradient validation.

pub mod trials;

use crate::arch::{branch_prefix, layer_id, Architecture, Block, Branch, ConvSpec, Layer, Residual};
use crate::graph::{bias_name, Graph};
use crate::tensor::{Element, Model, TensorBuffer, TensorError, WeightStore};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::collections::BTreeMap;

#[derive(Debug, thiserror::Error)]
pub enum OracleError {
    #[error("not a split architecture: {0}")]
    NotASplitArchitecture(String),
    #[error("cannot embed {at}: {reason}")]
    Unembeddable { at: String, reason: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Where one split parameter lands inside the baseline.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EmbeddingPair {
    pub split: String,
    pub baseline: String,
    pub out_offset: usize,
    pub in_offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmbeddingReport {
    pub pairs: Vec<EmbeddingPair>,
    /// Baseline kernel elements not covered by any split kernel, per layer.
    pub zeros_per_layer: BTreeMap<String, usize>,
    pub zero_fraction: f64,
    pub max_abs_diff: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Embedding<T> {
    pub baseline: Architecture,
    pub weights: WeightStore<T>,
    pub report: EmbeddingReport,
}

/// Channel window of one arm inside a merged value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct View {
    offset: usize,
    width: usize,
}

/// A merged value: total channel count and one view per arm.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Merged {
    total: usize,
    views: Vec<View>,
}

impl Merged {
    fn tiled(&self) -> bool {
        let w = self.views[0].width;
        self.total == w * self.views.len()
            && self.views.iter().enumerate().all(|(a, v)| v.offset == a * w && v.width == w)
    }
}

struct Arm<'a> {
    prefix: String,
    layers: &'a [Layer],
}

struct Placement {
    split: String,
    baseline: String,
    out_offset: usize,
    in_offset: usize,
    bias: bool,
}

#[derive(Default)]
struct Merger {
    placements: Vec<Placement>,
}

impl Merger {
    fn unembeddable(at: &str, reason: impl Into<String>) -> OracleError {
        OracleError::Unembeddable { at: at.to_string(), reason: reason.into() }
    }

    /// Merges the identical layer lists of all `arms` into `out`, whose
    /// layers are named under `base`. `cur` describes the input value.
    fn merge(
        &mut self,
        arms: &[Arm<'_>],
        base: &str,
        mut cur: Merged,
        out: &mut Vec<Layer>,
        top: bool,
    ) -> Result<Merged, OracleError> {
        let a = arms.len();
        let layers = arms[0].layers;
        let mut inputs_at: Vec<(usize, Merged)> = Vec::with_capacity(layers.len());
        for (idx, layer) in layers.iter().enumerate() {
            inputs_at.push((out.len(), cur.clone()));
            let at = layer_id(&arms[0].prefix, idx);
            if arms.iter().any(|arm| arm.layers.len() != layers.len() || !same_shape(&arm.layers[idx], layer)) {
                return Err(Self::unembeddable(&at, "branches differ in structure"));
            }
            match layer {
                Layer::Conv(spec) => {
                    if a > 1 && spec.groups != 1 {
                        return Err(Self::unembeddable(&at, "grouped conv inside a branch"));
                    }
                    let id = layer_id(base, out.len());
                    for (arm, view) in arms.iter().zip(&cur.views) {
                        self.placements.push(Placement {
                            split: layer_id(&arm.prefix, idx),
                            baseline: id.clone(),
                            out_offset: 0,
                            in_offset: view.offset,
                            bias: spec.bias,
                        });
                    }
                    let n = self.placements.len();
                    for (j, p) in self.placements[n - a..].iter_mut().enumerate() {
                        p.out_offset = j * spec.out_channels;
                    }
                    out.push(Layer::Conv(ConvSpec { out_channels: a * spec.out_channels, ..spec.clone() }));
                    cur = tile(a, spec.out_channels);
                }
                Layer::Relu | Layer::Pool(_) => out.push(layer.clone()),
                Layer::ChannelSlice { len, .. } => {
                    let views: Vec<View> = arms
                        .iter()
                        .zip(&cur.views)
                        .map(|(arm, v)| match arm.layers[idx] {
                            Layer::ChannelSlice { start, .. } => View { offset: v.offset + start, width: *len },
                            _ => unreachable!("checked by same_shape"),
                        })
                        .collect();
                    let lo = views.iter().map(|v| v.offset).min().unwrap_or(0);
                    let hi = views.iter().map(|v| v.offset + v.width).max().unwrap_or(0);
                    out.push(Layer::ChannelSlice { start: lo, len: hi - lo });
                    cur = Merged {
                        total: hi - lo,
                        views: views.into_iter().map(|v| View { offset: v.offset - lo, width: v.width }).collect(),
                    };
                }
                Layer::ResidualAdd(r) => {
                    let (from_out, src) = inputs_at[r.from].clone();
                    let id = layer_id(base, out.len());
                    let projection = match &r.projection {
                        Some(p) => {
                            let proj_id = format!("{id}.proj");
                            for (j, (arm, view)) in arms.iter().zip(&src.views).enumerate() {
                                self.placements.push(Placement {
                                    split: format!("{}.proj", layer_id(&arm.prefix, idx)),
                                    baseline: proj_id.clone(),
                                    out_offset: j * p.out_channels,
                                    in_offset: view.offset,
                                    bias: p.bias,
                                });
                            }
                            let mut p = p.clone();
                            p.out_channels *= a;
                            Some(p)
                        }
                        None if src != cur => {
                            return Err(Self::unembeddable(&at, "shortcut and main path use different channel layouts"))
                        }
                        None => None,
                    };
                    if projection.is_some() && !cur.tiled() {
                        return Err(Self::unembeddable(&at, "projected shortcut onto an untiled value"));
                    }
                    out.push(Layer::ResidualAdd(Residual { from: from_out, projection }));
                }
                Layer::Concat { branches } => {
                    let fan = branches.len();
                    let mut sub_arms = Vec::with_capacity(a * fan);
                    for arm in arms {
                        let Layer::Concat { branches } = &arm.layers[idx] else { unreachable!("checked by same_shape") };
                        let id = layer_id(&arm.prefix, idx);
                        for (m, b) in branches.iter().enumerate() {
                            sub_arms.push(Arm { prefix: branch_prefix(&id, m), layers: &b.layers });
                        }
                    }
                    let sub_in = Merged {
                        total: cur.total,
                        views: cur.views.iter().flat_map(|v| std::iter::repeat(*v).take(fan)).collect(),
                    };
                    let keep_wrapper = top && idx == 0 && matches!(layers.get(1), Some(Layer::Conv(c)) if c.fusion);
                    let merged = if keep_wrapper {
                        let id = layer_id(base, out.len());
                        let mut inner = Vec::new();
                        let m = self.merge(&sub_arms, &branch_prefix(&id, 0), sub_in, &mut inner, false)?;
                        out.push(Layer::Concat { branches: vec![Branch { layers: inner }] });
                        m
                    } else {
                        self.merge(&sub_arms, base, sub_in, out, false)?
                    };
                    if !merged.tiled() {
                        return Err(Self::unembeddable(&at, "branch outputs do not tile the concatenation"));
                    }
                    let w = merged.views[0].width * fan;
                    cur = tile(a, w);
                }
            }
        }
        Ok(cur)
    }
}

/// Layers agree up to the start of a channel slice and the contents of
/// nested branches, which are compared when merged.
fn same_shape(a: &Layer, b: &Layer) -> bool {
    match (a, b) {
        (Layer::ChannelSlice { len: x, .. }, Layer::ChannelSlice { len: y, .. }) => x == y,
        (Layer::Concat { branches: x }, Layer::Concat { branches: y }) => x.len() == y.len(),
        _ => a == b,
    }
}

fn tile(arms: usize, width: usize) -> Merged {
    Merged { total: arms * width, views: (0..arms).map(|j| View { offset: j * width, width }).collect() }
}

/// Builds the full-width network equivalent to `split` together with weights
/// reproducing it exactly: branch kernels are placed at their output and
/// input channel offsets, with zeros between groups.
///
/// For fusion-block splits the baseline is the same network with all
/// factors 1; for the other split modes every concatenation is dissolved
/// into a single full-width path.
pub fn embed_block_diagonal<T: Element>(
    split: &Architecture,
    w: &WeightStore<T>,
) -> Result<Embedding<T>, OracleError> {
    if !split.is_split() {
        return Err(OracleError::NotASplitArchitecture(split.name.clone()));
    }
    let split_graph = Graph::lower(split).map_err(TensorError::from)?;
    w.check_against(&split_graph.params())?;

    let mut merger = Merger::default();
    let mut blocks = Vec::with_capacity(split.blocks.len());
    let mut channels = split.input_shape.channels;
    let shapes = crate::arch::infer_shapes(split).map_err(TensorError::from)?;
    for (i, block) in split.blocks.iter().enumerate() {
        let prefix = format!("b{i}");
        let cur = Merged { total: channels, views: vec![View { offset: 0, width: channels }] };
        let mut layers = Vec::new();
        merger.merge(&[Arm { prefix: prefix.clone(), layers: &block.layers }], &prefix, cur, &mut layers, true)?;
        blocks.push(Block { layers, pool: block.pool.clone() });
        channels = shapes.block_output(i).map_or(channels, |s| s.channels);
    }
    let mut dense_pairs = Vec::new();
    for j in 0..split.classifier.dense.len() {
        let id = format!("fc{j}");
        dense_pairs.push(Placement {
            split: id.clone(),
            baseline: id,
            out_offset: 0,
            in_offset: 0,
            bias: split.classifier.dense[j].bias,
        });
    }
    merger.placements.extend(dense_pairs);
    let baseline = Architecture {
        name: baseline_name(&split.name, split.blocks.len()),
        input_shape: split.input_shape,
        blocks,
        classifier: split.classifier.clone(),
    };
    let base_graph = Graph::lower(&baseline).map_err(TensorError::from)?;
    let base_specs = base_graph.params();
    let mut out = WeightStore::zeros_like(&base_specs);
    let mut covered: BTreeMap<String, usize> = BTreeMap::new();
    let mut pairs = Vec::with_capacity(merger.placements.len());
    for p in &merger.placements {
        let src = w.get(&p.split).ok_or_else(|| TensorError::MissingParam(p.split.clone()))?;
        let dst = out.get_mut(&p.baseline).ok_or_else(|| TensorError::MissingParam(p.baseline.clone()))?;
        place(&src.data, &src.dims, &mut dst.data, &dst.dims, p.out_offset, p.in_offset)
            .map_err(|reason| Merger::unembeddable(&p.split, reason))?;
        *covered.entry(p.baseline.clone()).or_default() += src.data.len();
        if p.bias {
            let bsrc = w.get(&bias_name(&p.split)).ok_or_else(|| TensorError::MissingParam(bias_name(&p.split)))?;
            let bdst = out.get_mut(&bias_name(&p.baseline)).expect("bias follows kernel");
            bdst.data[p.out_offset..p.out_offset + bsrc.data.len()].copy_from_slice(&bsrc.data);
        }
        pairs.push(EmbeddingPair {
            split: p.split.clone(),
            baseline: p.baseline.clone(),
            out_offset: p.out_offset,
            in_offset: p.in_offset,
        });
    }
    let mut zeros_per_layer = BTreeMap::new();
    let (mut zeros, mut total) = (0usize, 0usize);
    for spec in base_specs.iter().filter(|s| !s.is_bias) {
        let n: usize = spec.dims.iter().product();
        let z = n - covered.get(&spec.name).copied().unwrap_or(0);
        zeros_per_layer.insert(spec.name.clone(), z);
        zeros += z;
        total += n;
    }
    Ok(Embedding {
        baseline,
        weights: out,
        report: EmbeddingReport {
            pairs,
            zeros_per_layer,
            zero_fraction: if total == 0 { 0.0 } else { zeros as f64 / total as f64 },
            max_abs_diff: None,
        },
    })
}

fn baseline_name(split: &str, blocks: usize) -> String {
    if let Some(pos) = split.rfind("-split-") {
        return format!("{}-split-{}", &split[..pos], vec!["1"; blocks].join("-"));
    }
    if let Some(pos) = split.rfind("-ideal-") {
        return split[..pos].to_string();
    }
    for marker in ["-naive-", "-shared-"] {
        if let Some(pos) = split.rfind(marker) {
            return format!("{}-merged", &split[..pos]);
        }
    }
    format!("{split}-merged")
}

/// Copies kernel `src` (dims `[o, i, ...]`) into `dst` at the given channel
/// offsets.
fn place<T: Element>(
    src: &[T],
    sdims: &[usize],
    dst: &mut [T],
    ddims: &[usize],
    out_off: usize,
    in_off: usize,
) -> Result<(), String> {
    let inner: usize = sdims[2..].iter().product();
    if sdims[2..] != ddims[2..] || out_off + sdims[0] > ddims[0] || in_off + sdims[1] > ddims[1] {
        return Err(format!("kernel {sdims:?} does not fit {ddims:?} at ({out_off}, {in_off})"));
    }
    for o in 0..sdims[0] {
        for i in 0..sdims[1] {
            let s = (o * sdims[1] + i) * inner;
            let d = ((out_off + o) * ddims[1] + in_off + i) * inner;
            if dst[d..d + inner].iter().any(|v| *v != T::zero()) {
                return Err("two split kernels overlap".into());
            }
            dst[d..d + inner].copy_from_slice(&src[s..s + inner]);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquivalenceReport {
    pub inputs: usize,
    pub max_abs_diff: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Standard-uniform inputs in `[-1, 1)` for `arch`.
pub fn random_inputs<T: Element>(arch: &Architecture, n: usize, seed: u64) -> TensorBuffer<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = arch.input_shape;
    let data = (0..n * s.elements()).map(|_| T::from_f64(rng.gen_range(-1.0..1.0))).collect();
    TensorBuffer::from_vec([n, s.channels, s.height, s.width], data).expect("sized")
}

/// Every parameter of `arch` drawn uniformly from `[-0.5, 0.5)`, biases and
/// fusion convs included.
pub fn random_weights<T: Element>(arch: &Architecture, seed: u64) -> Result<WeightStore<T>, OracleError> {
    let graph = Graph::lower(arch).map_err(TensorError::from)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = WeightStore::zeros_like(&graph.params());
    for (_, p) in w.iter_mut() {
        for v in p.data.iter_mut() {
            *v = T::from_f64(rng.gen_range(-0.5..0.5));
        }
    }
    Ok(w)
}

/// Compares the logits of two networks on `n_inputs` random inputs.
pub fn check_equivalence<T: Element>(
    arch_a: &Architecture,
    w_a: &WeightStore<T>,
    arch_b: &Architecture,
    w_b: &WeightStore<T>,
    n_inputs: usize,
    seed: u64,
    tol: f64,
) -> Result<EquivalenceReport, OracleError> {
    if arch_a.input_shape != arch_b.input_shape {
        return Err(TensorError::ShapeMismatch(format!(
            "input shapes differ: {} vs {}",
            arch_a.input_shape, arch_b.input_shape
        ))
        .into());
    }
    let (ma, mb) = (Model::new(arch_a)?, Model::new(arch_b)?);
    if ma.classes() != mb.classes() {
        return Err(TensorError::ShapeMismatch(format!("{} vs {} classes", ma.classes(), mb.classes())).into());
    }
    let x = random_inputs::<T>(arch_a, n_inputs, seed);
    let diff = ma.logits(w_a, &x)?.max_abs_diff(&mb.logits(w_b, &x)?);
    Ok(EquivalenceReport { inputs: n_inputs, max_abs_diff: diff, tolerance: tol, pass: diff <= tol })
}

/// Embeds `split` and checks the baseline against it.
pub fn embed_and_check<T: Element>(
    split: &Architecture,
    w: &WeightStore<T>,
    n_inputs: usize,
    seed: u64,
    tol: f64,
) -> Result<(Embedding<T>, EquivalenceReport), OracleError> {
    let mut e = embed_block_diagonal(split, w)?;
    let eq = check_equivalence(split, w, &e.baseline, &e.weights, n_inputs, seed, tol)?;
    e.report.max_abs_diff = Some(eq.max_abs_diff);
    Ok((e, eq))
}

/// Absolute error below which analytic and numeric derivatives agree.
pub const FD_ABS_FLOOR: f64 = 1e-8;
/// Inputs whose ReLU pre-activations or max-pool runner-up gaps fall below
/// this are redrawn.
pub const KINK_MARGIN: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradientReport {
    pub checked: usize,
    pub worst_relative_error: f64,
    /// `name[index]` of the worst weight.
    pub offending: Option<String>,
    pub tolerance: f64,
    pub pass: bool,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff <= FD_ABS_FLOOR {
        0.0
    } else {
        diff / analytic.abs().max(numeric.abs())
    }
}

/// Draws a random input batch away from ReLU and max-pool kinks, trying up
/// to `attempts` seeds derived from `seed`.
pub fn smooth_inputs(
    arch: &Architecture,
    w: &WeightStore<f64>,
    batch: usize,
    seed: u64,
    attempts: usize,
) -> Result<TensorBuffer<f64>, OracleError> {
    smooth_inputs_with_margin(arch, w, batch, seed, attempts, KINK_MARGIN)
}

/// [`smooth_inputs`] with an explicit kink margin; wide nets have so many
/// ReLU units that a fixed margin is rarely met by chance.
pub fn smooth_inputs_with_margin(
    arch: &Architecture,
    w: &WeightStore<f64>,
    batch: usize,
    seed: u64,
    attempts: usize,
    margin: f64,
) -> Result<TensorBuffer<f64>, OracleError> {
    let model = Model::new(arch)?;
    for t in 0..attempts as u64 {
        let x = random_inputs::<f64>(arch, batch, seed.wrapping_add(t.wrapping_mul(0x9E37_79B9)));
        let fwd = model.forward(w, &x)?;
        if model.kink_margin(&fwd) >= margin {
            return Ok(x);
        }
    }
    Err(OracleError::InvalidArgument(format!("no input with kink margin {margin} found in {attempts} attempts")))
}

/// Central-difference check of the loss gradient on a random subset of at
/// least `min_weights` weights, covering every parameter tensor.
#[allow(clippy::too_many_arguments)]
pub fn finite_diff_check(
    arch: &Architecture,
    w: &WeightStore<f64>,
    x: &TensorBuffer<f64>,
    labels: &[usize],
    perturbation: f64,
    tol: f64,
    min_weights: usize,
    seed: u64,
) -> Result<GradientReport, OracleError> {
    if !(perturbation.is_finite() && perturbation > 0.0) {
        return Err(OracleError::InvalidArgument(format!("perturbation must be positive, got {perturbation}")));
    }
    let model = Model::new(arch)?;
    let (_, grads) = model.loss_and_grad(w, x, labels)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names: Vec<String> = w.iter().map(|(k, _)| k.clone()).collect();
    // Spread the sample evenly, topping up from larger tensors when small
    // ones (biases) run out.
    let lens: Vec<usize> = names.iter().map(|n| w.get(n).expect("listed").data.len()).collect();
    let per = min_weights.div_ceil(names.len().max(1)).max(1);
    let mut counts: Vec<usize> = lens.iter().map(|&l| l.min(per)).collect();
    let mut deficit = min_weights.saturating_sub(counts.iter().sum());
    for (c, &l) in counts.iter_mut().zip(&lens) {
        let extra = (l - *c).min(deficit);
        *c += extra;
        deficit -= extra;
    }
    let mut probe = w.clone();
    let mut report = GradientReport { checked: 0, worst_relative_error: 0.0, offending: None, tolerance: tol, pass: true };
    for ((name, &len), &count) in names.iter().zip(&lens).zip(&counts) {
        for idx in sample(&mut rng, len, count).into_iter() {
            let orig = w.get(name).expect("listed").data[idx];
            probe.get_mut(name).expect("cloned").data[idx] = orig + perturbation;
            let (up, _) = model.loss_and_grad(&probe, x, labels)?;
            probe.get_mut(name).expect("cloned").data[idx] = orig - perturbation;
            let (down, _) = model.loss_and_grad(&probe, x, labels)?;
            probe.get_mut(name).expect("cloned").data[idx] = orig;
            let numeric = (up - down) / (2.0 * perturbation);
            let analytic = grads.get(name).expect("same layout").data[idx];
            let err = relative_error(analytic, numeric);
            report.checked += 1;
            if err > report.worst_relative_error || report.offending.is_none() {
                report.worst_relative_error = err;
                report.offending = Some(format!("{name}[{idx}]"));
            }
        }
    }
    report.pass = report.worst_relative_error <= tol;
    Ok(report)
}
