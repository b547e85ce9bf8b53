use super::{branch_prefix, layer_id, ArchError, Architecture, Layer, Shape};
use serde::Serialize;
use std::fmt;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ShapeEntry {
    pub id: String,
    pub kind: &'static str,
    pub input: Shape,
    pub output: Shape,
}

/// Per-layer input/output shapes in execution order (branches depth-first).
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ShapeTable {
    pub entries: Vec<ShapeEntry>,
    /// Shape after the final block.
    pub features: Shape,
    /// `channels * height * width` of `features`.
    pub classifier_input: usize,
    pub classes: usize,
}

impl ShapeTable {
    pub fn get(&self, id: &str) -> Option<&ShapeEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    /// Output shape at the end of block `index` (after its pool, if any).
    pub fn block_output(&self, index: usize) -> Option<Shape> {
        let prefix = format!("b{index}.");
        self.entries
            .iter()
            .filter(|e| e.id.starts_with(&prefix) && !e.id[prefix.len()..].contains(".br"))
            .last()
            .map(|e| e.output)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Issue {
    pub at: String,
    pub message: String,
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.at, self.message)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub issues: Vec<Issue>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.issues.is_empty()
    }
}

/// Checks every structural invariant and collects all issues found.
pub fn validate(arch: &Architecture) -> ValidationReport {
    let (_, issues) = walk(arch);
    ValidationReport { issues }
}

/// Annotates every layer with its input and output shape.
pub fn infer_shapes(arch: &Architecture) -> Result<ShapeTable, ArchError> {
    match walk(arch) {
        (Some(table), issues) if issues.is_empty() => Ok(table),
        (_, issues) => Err(ArchError::Validation(
            issues.first().map(Issue::to_string).unwrap_or_else(|| "invalid architecture".into()),
        )),
    }
}

struct Walker {
    entries: Vec<ShapeEntry>,
    issues: Vec<Issue>,
}

/// Marker for an issue that makes downstream shapes meaningless.
struct Broken;

impl Walker {
    fn issue(&mut self, at: &str, message: impl Into<String>) {
        self.issues.push(Issue { at: at.to_string(), message: message.into() });
    }

    fn entry(&mut self, id: String, kind: &'static str, input: Shape, output: Shape) {
        self.entries.push(ShapeEntry { id, kind, input, output });
    }

    fn seq(&mut self, layers: &[Layer], prefix: &str, input: Shape, before: &str) -> Result<Shape, Broken> {
        let mut cur = input;
        let mut inputs_at = Vec::with_capacity(layers.len());
        let mut prev = before.to_string();
        for (idx, layer) in layers.iter().enumerate() {
            let id = layer_id(prefix, idx);
            inputs_at.push(cur);
            let out = match layer {
                Layer::Conv(c) => {
                    if c.groups == 0
                        || cur.channels % c.groups != 0
                        || c.out_channels % c.groups != 0
                    {
                        self.issue(
                            &id,
                            format!(
                                "groups must divide channels (groups {}, in {}, out {})",
                                c.groups, cur.channels, c.out_channels
                            ),
                        );
                    }
                    if c.out_channels == 0 {
                        self.issue(&id, "conv out_channels must be positive");
                    }
                    if c.fusion && c.kernel != [1, 1] {
                        self.issue(&id, "fusion conv must be 1x1");
                    }
                    match c.output_shape(cur) {
                        Some(s) => s,
                        None => {
                            self.issue(
                                &id,
                                format!("kernel {:?} does not fit input {cur} produced by {prev}", c.kernel),
                            );
                            return Err(Broken);
                        }
                    }
                }
                Layer::Relu => cur,
                Layer::Pool(p) => match p.output_shape(cur) {
                    Some(s) => s,
                    None => {
                        self.issue(&id, format!("pool window does not fit input {cur} produced by {prev}"));
                        return Err(Broken);
                    }
                },
                Layer::ChannelSlice { start, len } => {
                    if *len == 0 || start + len > cur.channels {
                        self.issue(
                            &id,
                            format!("channel slice {start}..{} out of range for {cur} produced by {prev}", start + len),
                        );
                        return Err(Broken);
                    }
                    cur.with_channels(*len)
                }
                Layer::ResidualAdd(r) => {
                    if r.from >= idx {
                        self.issue(&id, format!("residual source l{} must precede the add", r.from));
                        return Err(Broken);
                    }
                    let src = inputs_at[r.from];
                    let shortcut = match &r.projection {
                        Some(p) => p.conv_spec().output_shape(src),
                        None => Some(src),
                    };
                    if shortcut != Some(cur) {
                        let got = shortcut.map(|s| s.to_string()).unwrap_or_else(|| "nothing".into());
                        self.issue(
                            &id,
                            format!(
                                "shortcut shape mismatch: {} carries {got} but {prev} produces {cur}",
                                layer_id(prefix, r.from)
                            ),
                        );
                        return Err(Broken);
                    }
                    cur
                }
                Layer::Concat { branches } => {
                    if branches.is_empty() {
                        self.issue(&id, "concat needs at least one branch");
                        return Err(Broken);
                    }
                    let mut outs = Vec::with_capacity(branches.len());
                    for (b, branch) in branches.iter().enumerate() {
                        outs.push(self.seq(&branch.layers, &branch_prefix(&id, b), cur, &prev)?);
                    }
                    let first = outs[0];
                    if outs.iter().any(|s| s.spatial() != first.spatial() || s.height != first.height) {
                        self.issue(&id, "concat branches disagree on spatial size");
                        return Err(Broken);
                    }
                    first.with_channels(outs.iter().map(|s| s.channels).sum())
                }
            };
            self.entry(id.clone(), layer.kind(), cur, out);
            cur = out;
            prev = id;
        }
        Ok(cur)
    }
}

fn walk(arch: &Architecture) -> (Option<ShapeTable>, Vec<Issue>) {
    let mut w = Walker { entries: Vec::new(), issues: Vec::new() };
    let input = arch.input_shape;
    if input.elements() == 0 {
        w.issue("input_shape", "dimensions must be positive");
        return (None, w.issues);
    }
    if arch.blocks.is_empty() {
        w.issue("blocks", "architecture has no blocks");
        return (None, w.issues);
    }
    let mut cur = input;
    let mut prev = "input".to_string();
    for (i, block) in arch.blocks.iter().enumerate() {
        let prefix = format!("b{i}");
        match w.seq(&block.layers, &prefix, cur, &prev) {
            Ok(s) => cur = s,
            Err(Broken) => return (None, w.issues),
        }
        if !block.layers.is_empty() {
            prev = layer_id(&prefix, block.layers.len() - 1);
        }
        if let Some(pool) = &block.pool {
            let id = format!("{prefix}.pool");
            match pool.output_shape(cur) {
                Some(s) => {
                    w.entry(id.clone(), "pool", cur, s);
                    cur = s;
                    prev = id;
                }
                None => {
                    w.issue(&id, format!("pool window does not fit input {cur} produced by {prev}"));
                    return (None, w.issues);
                }
            }
        }
    }
    let features = cur;
    let mut width = features.elements();
    for (j, d) in arch.classifier.dense.iter().enumerate() {
        let id = format!("fc{j}");
        if d.out_features == 0 {
            w.issue(&id, "out_features must be positive");
            return (None, w.issues);
        }
        w.entry(id, "dense", Shape::new(width, 1, 1), Shape::new(d.out_features, 1, 1));
        width = d.out_features;
    }
    let table = ShapeTable {
        entries: w.entries,
        features,
        classifier_input: features.elements(),
        classes: width,
    };
    (Some(table), w.issues)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{Block, ClassifierSpec, ConvSpec, PoolSpec, Projection, Residual};

    fn one_block(layers: Vec<Layer>, pool: Option<PoolSpec>, input: Shape) -> Architecture {
        Architecture {
            name: "t".into(),
            input_shape: input,
            blocks: vec![Block { layers, pool }],
            classifier: ClassifierSpec::linear(10),
        }
    }

    #[test]
    fn same_padding_keeps_spatial() {
        let a = one_block(vec![Layer::Conv(ConvSpec::same3x3(64))], None, Shape::new(3, 32, 32));
        let t = infer_shapes(&a).unwrap();
        assert_eq!(t.get("b0.l0").unwrap().output, Shape::new(64, 32, 32));
    }

    #[test]
    fn pool_halves() {
        let a = one_block(vec![], Some(PoolSpec::max2()), Shape::new(64, 32, 32));
        let t = infer_shapes(&a).unwrap();
        assert_eq!(t.features, Shape::new(64, 16, 16));
        assert_eq!(t.classifier_input, 64 * 256);
    }

    #[test]
    fn five_pools_reach_one_by_one() {
        let blocks = (0..5).map(|_| Block { layers: vec![], pool: Some(PoolSpec::max2()) }).collect();
        let a = Architecture {
            name: "pools".into(),
            input_shape: Shape::new(3, 32, 32),
            blocks,
            classifier: ClassifierSpec::default(),
        };
        let t = infer_shapes(&a).unwrap();
        assert_eq!(t.features, Shape::new(3, 1, 1));
    }

    #[test]
    fn grouped_conv_must_divide() {
        let mut c = ConvSpec::same3x3(63);
        c.groups = 3;
        let a = one_block(vec![Layer::Conv(c)], None, Shape::new(64, 8, 8));
        let report = validate(&a);
        assert!(report.issues.iter().any(|i| i.message.contains("groups must divide channels")));
    }

    #[test]
    fn residual_without_projection_mismatch() {
        let layers = vec![
            Layer::Conv(ConvSpec::same3x3(128)),
            Layer::ResidualAdd(Residual { from: 0, projection: None }),
        ];
        let a = one_block(layers, None, Shape::new(64, 8, 8));
        let report = validate(&a);
        assert!(report.issues.iter().any(|i| i.message.contains("shortcut shape mismatch")), "{report:?}");
        let err = infer_shapes(&a).unwrap_err().to_string();
        assert!(err.contains("b0.l0") && err.contains("b0.l1"), "{err}");
    }

    #[test]
    fn residual_with_projection_ok() {
        let layers = vec![
            Layer::Conv(ConvSpec::same3x3(128).with_stride(2)),
            Layer::ResidualAdd(Residual {
                from: 0,
                projection: Some(Projection { out_channels: 128, stride: [2, 2], bias: false }),
            }),
        ];
        let a = one_block(layers, None, Shape::new(64, 8, 8));
        assert!(validate(&a).is_valid());
        assert_eq!(infer_shapes(&a).unwrap().features, Shape::new(128, 4, 4));
    }

    #[test]
    fn empty_block_list_rejected() {
        let a = Architecture {
            name: "e".into(),
            input_shape: Shape::new(1, 1, 1),
            blocks: vec![],
            classifier: ClassifierSpec::default(),
        };
        assert!(!validate(&a).is_valid());
    }
}
