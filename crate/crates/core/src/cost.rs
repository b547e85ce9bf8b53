//! Parameter, MAC and live-memory accounting.

use crate::arch::{ArchError, Architecture};
use crate::graph::{Graph, Node, OpKind, ValueId};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

#[derive(Debug, thiserror::Error)]
pub enum CostError {
    #[error("{factor} does not divide {channels} ({what})")]
    NonDivisible { what: &'static str, factor: usize, channels: usize },
    #[error("schedule cannot order the graph: {0}")]
    ScheduleInvalid(String),
    #[error(transparent)]
    Arch(#[from] ArchError),
}

/// Two 3x3 conv layers `l0 -> l1 -> l2`: `(l0*l1 + l1*l2) * 9` weights.
pub fn params_closed_form_original(l0: usize, l1: usize, l2: usize) -> usize {
    (l0 * l1 + l1 * l2) * 9
}

/// Same two layers split by `k1` and `k2`:
/// `((l0 * l1/k1) * k1 + (l1/k1 * l2/k2) * k2) * 9`.
pub fn params_closed_form_split(l0: usize, l1: usize, l2: usize, k1: usize, k2: usize) -> Result<usize, CostError> {
    if k1 == 0 || l1 % k1 != 0 {
        return Err(CostError::NonDivisible { what: "k1 into L1", factor: k1, channels: l1 });
    }
    if k2 == 0 || l2 % k2 != 0 {
        return Err(CostError::NonDivisible { what: "k2 into L2", factor: k2, channels: l2 });
    }
    Ok(((l0 * (l1 / k1)) * k1 + ((l1 / k1) * (l2 / k2)) * k2) * 9)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LayerCost {
    pub id: String,
    pub kind: &'static str,
    /// Weights plus bias elements.
    pub params: usize,
    pub macs: usize,
    /// Non-MAC elementwise work (pool window reads, relu, add).
    pub element_ops: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CostTotals {
    pub params: usize,
    /// Convolution weights only, fusion and projection convs included.
    pub conv_params: usize,
    pub params_fusion_only: usize,
    pub dense_params: usize,
    pub macs: usize,
    pub element_ops: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// Branches interleaved op by op.
    AllParallel,
    /// Each branch runs to completion before the next one starts.
    BranchSequential,
}

impl Schedule {
    pub const ALL: [Schedule; 2] = [Schedule::AllParallel, Schedule::BranchSequential];

    pub fn name(self) -> &'static str {
        match self {
            Schedule::AllParallel => "all_parallel",
            Schedule::BranchSequential => "branch_sequential",
        }
    }
}

impl std::str::FromStr for Schedule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "all_parallel" => Ok(Schedule::AllParallel),
            "branch_sequential" => Ok(Schedule::BranchSequential),
            other => Err(format!("unknown schedule `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MemoryOptions {
    /// Treat concat as writing its inputs in place instead of copying.
    pub concat_aliasing: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MemoryReport {
    pub schedule: Schedule,
    pub peak_elements: usize,
    pub peak_op: String,
    /// Weight storage, reported apart from feature maps.
    pub static_weight_elements: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CostReport {
    pub per_layer: Vec<LayerCost>,
    pub totals: CostTotals,
    pub memory: Vec<MemoryReport>,
}

impl CostReport {
    /// Per-layer rows as CSV: `id,kind,params,macs,element_ops`.
    pub fn layers_csv(&self) -> String {
        let mut out = String::from("id,kind,params,macs,element_ops\n");
        for l in &self.per_layer {
            let _ = writeln!(out, "{},{},{},{},{}", l.id, l.kind, l.params, l.macs, l.element_ops);
        }
        out
    }

    /// Memory rows as CSV: `schedule,peak_elements,peak_op`.
    pub fn memory_csv(&self) -> String {
        let mut out = String::from("schedule,peak_elements,peak_op\n");
        for m in &self.memory {
            let _ = writeln!(out, "{},{},{}", m.schedule.name(), m.peak_elements, m.peak_op);
        }
        out
    }
}

fn layer_costs(graph: &Graph) -> (Vec<LayerCost>, CostTotals) {
    let mut rows = Vec::new();
    let mut t = CostTotals::default();
    for op in &graph.ops {
        let out = op.out_shape;
        let (params, macs, element_ops) = match &op.kind {
            OpKind::Conv { spec, in_channels } => {
                let w = spec.weight_count(*in_channels);
                let bias = if spec.bias { spec.out_channels } else { 0 };
                t.conv_params += w;
                if spec.fusion {
                    t.params_fusion_only += w + bias;
                }
                let macs = out.spatial() * spec.out_channels * (in_channels / spec.groups) * spec.kernel[0] * spec.kernel[1];
                (w + bias, macs, 0)
            }
            OpKind::Dense { in_features, out_features, bias } => {
                let w = in_features * out_features + if *bias { *out_features } else { 0 };
                t.dense_params += w;
                (w, in_features * out_features, 0)
            }
            OpKind::Pool(p) => (0, 0, out.elements() * p.window[0] * p.window[1]),
            OpKind::Relu | OpKind::Add => (0, 0, out.elements()),
            OpKind::Slice { .. } | OpKind::Concat | OpKind::Flatten => (0, 0, 0),
        };
        t.params += params;
        t.macs += macs;
        t.element_ops += element_ops;
        rows.push(LayerCost { id: op.id.clone(), kind: op.kind.name(), params, macs, element_ops });
    }
    (rows, t)
}

/// Exact per-layer parameter and MAC enumeration.
pub fn analyze(arch: &Architecture) -> Result<CostReport, CostError> {
    let graph = Graph::lower(arch)?;
    let (per_layer, totals) = layer_costs(&graph);
    Ok(CostReport { per_layer, totals, memory: Vec::new() })
}

/// Parameter enumeration; see [`CostTotals::conv_params`] for the
/// convolution-only figure.
pub fn count_params(arch: &Architecture) -> Result<CostReport, CostError> {
    analyze(arch)
}

/// MAC enumeration: `out_h * out_w * out_c * in_c/groups * kh * kw` per conv,
/// `in * out` per dense layer, zero for everything else.
pub fn count_macs(arch: &Architecture) -> Result<CostReport, CostError> {
    analyze(arch)
}

/// Full report with one memory entry per requested schedule.
pub fn cost_report(arch: &Architecture, schedules: &[Schedule], opts: MemoryOptions) -> Result<CostReport, CostError> {
    let graph = Graph::lower(arch)?;
    let (per_layer, totals) = layer_costs(&graph);
    let memory = schedules
        .iter()
        .map(|&s| peak_memory_graph(&graph, s, opts))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(CostReport { per_layer, totals, memory })
}

/// Execution order of the graph's ops under `schedule`.
pub fn schedule_order(graph: &Graph, schedule: Schedule) -> Vec<usize> {
    fn flatten(nodes: &[Node], schedule: Schedule, out: &mut Vec<usize>) {
        for node in nodes {
            match node {
                Node::Op(i) => out.push(*i),
                Node::Fork { branches, concat } => {
                    let lists: Vec<Vec<usize>> = branches
                        .iter()
                        .map(|b| {
                            let mut v = Vec::new();
                            flatten(b, schedule, &mut v);
                            v
                        })
                        .collect();
                    match schedule {
                        Schedule::BranchSequential => lists.iter().for_each(|l| out.extend(l)),
                        Schedule::AllParallel => {
                            let longest = lists.iter().map(Vec::len).max().unwrap_or(0);
                            for step in 0..longest {
                                out.extend(lists.iter().filter_map(|l| l.get(step)));
                            }
                        }
                    }
                    out.push(*concat);
                }
            }
        }
    }
    let mut order = Vec::with_capacity(graph.ops.len());
    flatten(&graph.tree, schedule, &mut order);
    order
}

/// Peak live feature-map elements for one sample.
pub fn peak_memory(arch: &Architecture, schedule: Schedule) -> Result<MemoryReport, CostError> {
    let graph = Graph::lower(arch)?;
    peak_memory_graph(&graph, schedule, MemoryOptions::default())
}

/// Live-set simulation.
///
/// A buffer is live from the op that produces it until the last op reading
/// it has run; the peak is the largest total over all ops of the buffers
/// live while that op runs (its inputs and output included). ReLU runs in
/// place; channel slices and flatten are views; concat copies unless
/// `concat_aliasing` is set. Weights are not counted.
pub fn peak_memory_graph(graph: &Graph, schedule: Schedule, opts: MemoryOptions) -> Result<MemoryReport, CostError> {
    let order = schedule_order(graph, schedule);
    if order.len() != graph.ops.len() {
        return Err(CostError::ScheduleInvalid(format!(
            "order covers {} of {} ops",
            order.len(),
            graph.ops.len()
        )));
    }
    let mut sizes = vec![graph.input.elements()];
    let mut def = vec![0usize];
    let mut last = vec![0usize];
    let mut value_bufs: Vec<Option<Vec<usize>>> = vec![None; graph.ops.len() + 1];
    value_bufs[0] = Some(vec![0]);
    for (pos, &op_index) in order.iter().enumerate() {
        let op = &graph.ops[op_index];
        let mut read = Vec::new();
        for &v in &op.inputs {
            let bufs = value_bufs[v].as_ref().ok_or_else(|| {
                CostError::ScheduleInvalid(format!("{} runs before its input value {v} exists", op.id))
            })?;
            read.extend(bufs.iter().copied());
        }
        for &b in &read {
            last[b] = pos;
        }
        let aliases = match op.kind {
            OpKind::Relu | OpKind::Slice { .. } | OpKind::Flatten => true,
            OpKind::Concat => opts.concat_aliasing,
            _ => false,
        };
        let out: ValueId = op_index + 1;
        value_bufs[out] = Some(if aliases {
            if matches!(op.kind, OpKind::Concat) {
                read
            } else {
                value_bufs[op.inputs[0]].clone().unwrap_or_default()
            }
        } else {
            sizes.push(op.out_shape.elements());
            def.push(pos);
            last.push(pos);
            vec![sizes.len() - 1]
        });
    }
    let final_pos = order.len().saturating_sub(1);
    if let Some(bufs) = &value_bufs[graph.output()] {
        for &b in bufs {
            last[b] = final_pos;
        }
    }
    let mut peak = 0;
    let mut peak_pos = 0;
    for pos in 0..order.len().max(1) {
        let live: usize = (0..sizes.len()).filter(|&b| def[b] <= pos && pos <= last[b]).map(|b| sizes[b]).sum();
        if live > peak {
            peak = live;
            peak_pos = pos;
        }
    }
    let peak_op = order.get(peak_pos).map(|&i| graph.ops[i].id.clone()).unwrap_or_else(|| "input".into());
    let (_, totals) = layer_costs(graph);
    Ok(MemoryReport { schedule, peak_elements: peak, peak_op, static_weight_elements: totals.params })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SweepCell {
    pub k1: usize,
    pub k2: usize,
    /// `None` when a factor does not divide its layer width.
    pub params_split: Option<usize>,
    pub params_org: usize,
}

/// Closed-form split parameter counts over the `(k1, k2)` grid, sorted by
/// `(k1, k2)`.
pub fn sweep_params(l0: usize, l1: usize, l2: usize, grid: &[usize]) -> Vec<SweepCell> {
    let mut factors = grid.to_vec();
    factors.sort_unstable();
    factors.dedup();
    let params_org = params_closed_form_original(l0, l1, l2);
    factors
        .iter()
        .flat_map(|&k1| factors.iter().map(move |&k2| (k1, k2)))
        .map(|(k1, k2)| SweepCell {
            k1,
            k2,
            params_split: params_closed_form_split(l0, l1, l2, k1, k2).ok(),
            params_org,
        })
        .collect()
}

/// `k1,k2,params_split,params_org`; undividable cells carry `nondivisible`.
pub fn sweep_csv(cells: &[SweepCell]) -> String {
    let mut out = String::from("k1,k2,params_split,params_org\n");
    for c in cells {
        let split = c.params_split.map(|p| p.to_string()).unwrap_or_else(|| "nondivisible".into());
        let _ = writeln!(out, "{},{},{},{}", c.k1, c.k2, split, c.params_org);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{Block, ClassifierSpec, ConvSpec, Layer, PoolSpec, Shape};
    use crate::transform::split_transform;

    fn conv_pool(input: Shape, out: usize) -> Architecture {
        Architecture {
            name: "cp".into(),
            input_shape: input,
            blocks: vec![Block { layers: vec![Layer::Conv(ConvSpec::same3x3(out))], pool: Some(PoolSpec::max2()) }],
            classifier: ClassifierSpec::linear(10),
        }
    }

    #[test]
    fn closed_forms() {
        assert_eq!(params_closed_form_original(1, 1, 1), 18);
        assert_eq!(params_closed_form_original(3, 64, 64), 38_592);
        assert_eq!(params_closed_form_split(3, 64, 64, 1, 1).unwrap(), 38_592);
        assert_eq!(params_closed_form_split(3, 64, 64, 2, 2).unwrap(), 20_160);
        assert_eq!(params_closed_form_split(3, 64, 64, 4, 2).unwrap(), 10_944);
        assert_eq!(params_closed_form_split(3, 64, 64, 4, 8).unwrap(), 10_944);
        assert_eq!(params_closed_form_split(3, 64, 64, 8, 8).unwrap(), 6_336);
        assert!(params_closed_form_split(3, 64, 64, 3, 1).is_err());
    }

    #[test]
    fn macs_small_conv() {
        let a = Architecture {
            name: "m".into(),
            input_shape: Shape::new(3, 8, 8),
            blocks: vec![Block { layers: vec![Layer::Conv(ConvSpec::same3x3(4))], pool: None }],
            classifier: ClassifierSpec::default(),
        };
        let r = count_macs(&a).unwrap();
        assert_eq!(r.per_layer[0].macs, 6_912);
        assert_eq!(r.totals.macs, 6_912);
    }

    #[test]
    fn pointwise_macs_and_pool_zero() {
        let a = Architecture {
            name: "p".into(),
            input_shape: Shape::new(64, 16, 16),
            blocks: vec![Block { layers: vec![Layer::Conv(ConvSpec::pointwise(64))], pool: Some(PoolSpec::max2()) }],
            classifier: ClassifierSpec::default(),
        };
        let r = count_macs(&a).unwrap();
        assert_eq!(r.per_layer[0].macs, 1_048_576);
        let pool = r.per_layer.iter().find(|l| l.kind == "pool").unwrap();
        assert_eq!(pool.macs, 0);
    }

    #[test]
    fn fused_single_block_params() {
        let fused = split_transform(&conv_pool(Shape::new(3, 32, 32), 64), &[1]).unwrap();
        let r = count_params(&fused).unwrap();
        assert_eq!(r.totals.conv_params, 5_824);
        assert_eq!(r.totals.params_fusion_only, 4_096);
    }

    #[test]
    fn classifier_only_has_no_conv_weights() {
        let a = Architecture {
            name: "c".into(),
            input_shape: Shape::new(3, 4, 4),
            blocks: vec![Block { layers: vec![], pool: None }],
            classifier: ClassifierSpec::linear(10),
        };
        let r = count_params(&a).unwrap();
        assert_eq!(r.totals.conv_params, 0);
        assert_eq!(r.totals.dense_params, 480);
    }

    #[test]
    fn peak_memory_traces() {
        let base = conv_pool(Shape::new(3, 32, 32), 64);
        let m = peak_memory(&base, Schedule::AllParallel).unwrap();
        assert_eq!(m.peak_elements, 81_920);
        assert_eq!(m.peak_op, "b0.pool");
        let fused = split_transform(&base, &[1]).unwrap();
        assert_eq!(peak_memory(&fused, Schedule::AllParallel).unwrap().peak_elements, 81_920);
        let split = split_transform(&base, &[2]).unwrap();
        let seq = peak_memory(&split, Schedule::BranchSequential).unwrap();
        assert_eq!(seq.peak_elements, 49_152);
        assert_eq!(seq.peak_op, "b0.l0.br1.l1");
        let par = peak_memory(&split, Schedule::AllParallel).unwrap();
        assert_eq!(par.peak_elements, 73_728);
    }

    #[test]
    fn identity_net_peak_is_input() {
        let a = Architecture {
            name: "id".into(),
            input_shape: Shape::new(3, 5, 7),
            blocks: vec![Block { layers: vec![], pool: None }],
            classifier: ClassifierSpec::default(),
        };
        assert_eq!(peak_memory(&a, Schedule::BranchSequential).unwrap().peak_elements, 105);
    }

    #[test]
    fn concat_aliasing_never_increases_peak() {
        let split = split_transform(&conv_pool(Shape::new(3, 32, 32), 64), &[4]).unwrap();
        let g = Graph::lower(&split).unwrap();
        for s in Schedule::ALL {
            let copy = peak_memory_graph(&g, s, MemoryOptions::default()).unwrap();
            let alias = peak_memory_graph(&g, s, MemoryOptions { concat_aliasing: true }).unwrap();
            assert!(alias.peak_elements <= copy.peak_elements);
        }
    }

    #[test]
    fn sweep_grid() {
        let cells = sweep_params(3, 64, 64, &[1]);
        assert_eq!(cells.len(), 1);
        assert_eq!(cells[0].params_split, Some(38_592));
        let cells = sweep_params(3, 64, 64, &[8, 1, 4, 2]);
        assert_eq!(cells.len(), 16);
        assert_eq!((cells[0].k1, cells[0].k2), (1, 1));
        let c88 = cells.iter().find(|c| c.k1 == 8 && c.k2 == 8).unwrap();
        assert_eq!(c88.params_split, Some(6_336));
        let cells = sweep_params(3, 64, 64, &[3]);
        assert_eq!(cells[0].params_split, None);
        assert!(sweep_csv(&cells).contains("3,3,nondivisible,38592"));
    }
}
