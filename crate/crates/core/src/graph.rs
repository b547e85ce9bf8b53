//! Lowering of an [`Architecture`] into a flat list of primitive ops.
//!
//! Value `0` is the network input and op `i` produces value `i + 1`. Ops are
//! stored depth-first (each branch of a concat to completion, in branch
//! order), so index order is already the branch-sequential schedule. The
//! branch structure is kept alongside in [`Node`] form for schedulers that
//! need to interleave branches.

use crate::arch::{
    branch_prefix, layer_id, validate, ArchError, Architecture, ConvSpec, Layer, PoolSpec, Shape,
};

pub type ValueId = usize;

#[derive(Debug, Clone, PartialEq)]
pub enum OpKind {
    Conv { spec: ConvSpec, in_channels: usize },
    Relu,
    Pool(PoolSpec),
    Slice { start: usize, len: usize },
    Add,
    Concat,
    Flatten,
    Dense { in_features: usize, out_features: usize, bias: bool },
}

impl OpKind {
    pub fn name(&self) -> &'static str {
        match self {
            OpKind::Conv { spec, .. } if spec.fusion => "fusion_conv",
            OpKind::Conv { .. } => "conv",
            OpKind::Relu => "relu",
            OpKind::Pool(_) => "pool",
            OpKind::Slice { .. } => "channel_slice",
            OpKind::Add => "residual_add",
            OpKind::Concat => "concat",
            OpKind::Flatten => "flatten",
            OpKind::Dense { .. } => "dense",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Op {
    /// Layer id; also the parameter name for conv and dense ops.
    pub id: String,
    pub kind: OpKind,
    pub inputs: Vec<ValueId>,
    pub out_shape: Shape,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Op(usize),
    Fork { branches: Vec<Vec<Node>>, concat: usize },
}

/// Shape of one trainable tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub dims: Vec<usize>,
    pub fan_in: usize,
    pub fusion: bool,
    pub is_bias: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    pub input: Shape,
    pub ops: Vec<Op>,
    pub tree: Vec<Node>,
}

pub fn bias_name(param: &str) -> String {
    format!("{param}:bias")
}

impl Graph {
    pub fn lower(arch: &Architecture) -> Result<Self, ArchError> {
        let report = validate(arch);
        if let Some(issue) = report.issues.first() {
            return Err(ArchError::Validation(issue.to_string()));
        }
        let mut g = Graph { input: arch.input_shape, ops: Vec::new(), tree: Vec::new() };
        let mut cur: ValueId = 0;
        let mut tree = Vec::new();
        for (i, block) in arch.blocks.iter().enumerate() {
            let prefix = format!("b{i}");
            cur = g.seq(&block.layers, &prefix, cur, &mut tree);
            if let Some(pool) = &block.pool {
                cur = g.push(format!("{prefix}.pool"), OpKind::Pool(pool.clone()), vec![cur], &mut tree);
            }
        }
        let features = g.shape(cur).elements();
        cur = g.push("flatten".into(), OpKind::Flatten, vec![cur], &mut tree);
        let mut width = features;
        let n = arch.classifier.dense.len();
        for (j, d) in arch.classifier.dense.iter().enumerate() {
            let kind = OpKind::Dense { in_features: width, out_features: d.out_features, bias: d.bias };
            cur = g.push(format!("fc{j}"), kind, vec![cur], &mut tree);
            width = d.out_features;
            if j + 1 < n {
                cur = g.push(format!("fc{j}.relu"), OpKind::Relu, vec![cur], &mut tree);
            }
        }
        g.tree = tree;
        Ok(g)
    }

    pub fn shape(&self, value: ValueId) -> Shape {
        if value == 0 {
            self.input
        } else {
            self.ops[value - 1].out_shape
        }
    }

    pub fn output(&self) -> ValueId {
        self.ops.len()
    }

    pub fn classes(&self) -> usize {
        self.shape(self.output()).elements()
    }

    /// Trainable tensors in op order.
    pub fn params(&self) -> Vec<ParamSpec> {
        let mut out = Vec::new();
        for op in &self.ops {
            match &op.kind {
                OpKind::Conv { spec, in_channels } => {
                    let per_group = in_channels / spec.groups;
                    let fan_in = per_group * spec.kernel[0] * spec.kernel[1];
                    out.push(ParamSpec {
                        name: op.id.clone(),
                        dims: vec![spec.out_channels, per_group, spec.kernel[0], spec.kernel[1]],
                        fan_in,
                        fusion: spec.fusion,
                        is_bias: false,
                    });
                    if spec.bias {
                        out.push(ParamSpec {
                            name: bias_name(&op.id),
                            dims: vec![spec.out_channels],
                            fan_in,
                            fusion: spec.fusion,
                            is_bias: true,
                        });
                    }
                }
                OpKind::Dense { in_features, out_features, bias } => {
                    out.push(ParamSpec {
                        name: op.id.clone(),
                        dims: vec![*out_features, *in_features],
                        fan_in: *in_features,
                        fusion: false,
                        is_bias: false,
                    });
                    if *bias {
                        out.push(ParamSpec {
                            name: bias_name(&op.id),
                            dims: vec![*out_features],
                            fan_in: *in_features,
                            fusion: false,
                            is_bias: true,
                        });
                    }
                }
                _ => {}
            }
        }
        out
    }

    fn push(&mut self, id: String, kind: OpKind, inputs: Vec<ValueId>, tree: &mut Vec<Node>) -> ValueId {
        let in_shape = self.shape(inputs[0]);
        let out_shape = match &kind {
            OpKind::Conv { spec, .. } => spec.output_shape(in_shape).expect("validated"),
            OpKind::Relu | OpKind::Add => in_shape,
            OpKind::Pool(p) => p.output_shape(in_shape).expect("validated"),
            OpKind::Slice { len, .. } => in_shape.with_channels(*len),
            OpKind::Concat => in_shape.with_channels(inputs.iter().map(|&v| self.shape(v).channels).sum()),
            OpKind::Flatten => Shape::new(in_shape.elements(), 1, 1),
            OpKind::Dense { out_features, .. } => Shape::new(*out_features, 1, 1),
        };
        tree.push(Node::Op(self.ops.len()));
        self.ops.push(Op { id, kind, inputs, out_shape });
        self.ops.len()
    }

    fn conv(&mut self, id: String, spec: &ConvSpec, input: ValueId, tree: &mut Vec<Node>) -> ValueId {
        let in_channels = self.shape(input).channels;
        self.push(id, OpKind::Conv { spec: spec.clone(), in_channels }, vec![input], tree)
    }

    fn seq(&mut self, layers: &[Layer], prefix: &str, input: ValueId, tree: &mut Vec<Node>) -> ValueId {
        let mut cur = input;
        let mut inputs_at = Vec::with_capacity(layers.len());
        for (idx, layer) in layers.iter().enumerate() {
            let id = layer_id(prefix, idx);
            inputs_at.push(cur);
            cur = match layer {
                Layer::Conv(spec) => self.conv(id, spec, cur, tree),
                Layer::Relu => self.push(id, OpKind::Relu, vec![cur], tree),
                Layer::Pool(p) => self.push(id, OpKind::Pool(p.clone()), vec![cur], tree),
                Layer::ChannelSlice { start, len } => {
                    self.push(id, OpKind::Slice { start: *start, len: *len }, vec![cur], tree)
                }
                Layer::ResidualAdd(r) => {
                    let src = inputs_at[r.from];
                    let shortcut = match &r.projection {
                        Some(p) => self.conv(format!("{id}.proj"), &p.conv_spec(), src, tree),
                        None => src,
                    };
                    self.push(id, OpKind::Add, vec![cur, shortcut], tree)
                }
                Layer::Concat { branches } => {
                    let mut outs = Vec::with_capacity(branches.len());
                    let mut sub = Vec::with_capacity(branches.len());
                    for (b, branch) in branches.iter().enumerate() {
                        let mut nodes = Vec::new();
                        outs.push(self.seq(&branch.layers, &branch_prefix(&id, b), cur, &mut nodes));
                        sub.push(nodes);
                    }
                    let mut scratch = Vec::new();
                    let v = self.push(id, OpKind::Concat, outs, &mut scratch);
                    tree.push(Node::Fork { branches: sub, concat: v - 1 });
                    v
                }
            };
        }
        cur
    }
}
