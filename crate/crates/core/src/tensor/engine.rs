use super::ops;
use super::{Element, TensorBuffer, TensorError, WeightStore};
use crate::arch::Architecture;
use crate::graph::{bias_name, Graph, OpKind, ParamSpec};
use rayon::prelude::*;

/// Samples per work item in batched passes. Chunk results are reduced in
/// chunk order, so outputs do not depend on the thread count.
const CHUNK: usize = 8;

/// A lowered architecture ready to run.
#[derive(Debug, Clone)]
pub struct Model {
    graph: Graph,
    params: Vec<ParamSpec>,
}

/// Every intermediate value of one forward pass; index `0` is the input.
#[derive(Debug, Clone)]
pub struct Forward<T> {
    values: Vec<TensorBuffer<T>>,
}

impl<T: Element> Forward<T> {
    pub fn logits(&self) -> &TensorBuffer<T> {
        self.values.last().expect("at least the input")
    }

    pub fn value(&self, id: usize) -> &TensorBuffer<T> {
        &self.values[id]
    }

    pub fn values(&self) -> &[TensorBuffer<T>] {
        &self.values
    }
}

fn accumulate<T: Element>(slot: &mut Option<TensorBuffer<T>>, g: TensorBuffer<T>) {
    match slot {
        Some(existing) => existing.add_assign(&g),
        None => *slot = Some(g),
    }
}

impl Model {
    pub fn new(arch: &Architecture) -> Result<Self, TensorError> {
        Ok(Self::from_graph(Graph::lower(arch)?))
    }

    pub fn from_graph(graph: Graph) -> Self {
        let params = graph.params();
        Self { graph, params }
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn params(&self) -> &[ParamSpec] {
        &self.params
    }

    pub fn classes(&self) -> usize {
        self.graph.classes()
    }

    fn check_input<T: Element>(&self, w: &WeightStore<T>, x: &TensorBuffer<T>) -> Result<(), TensorError> {
        if x.sample_shape() != self.graph.input {
            return Err(TensorError::ShapeMismatch(format!(
                "input samples are {}, network expects {}",
                x.sample_shape(),
                self.graph.input
            )));
        }
        w.check_against(&self.params)
    }

    fn check_labels(&self, x_batch: usize, labels: &[usize]) -> Result<(), TensorError> {
        if labels.len() != x_batch {
            return Err(TensorError::ShapeMismatch(format!("{} labels for {x_batch} samples", labels.len())));
        }
        let classes = self.classes();
        match labels.iter().find(|&&l| l >= classes) {
            Some(&label) => Err(TensorError::LabelOutOfRange { label, classes }),
            None => Ok(()),
        }
    }

    /// Full forward pass keeping every intermediate value.
    pub fn forward<T: Element>(&self, w: &WeightStore<T>, x: &TensorBuffer<T>) -> Result<Forward<T>, TensorError> {
        self.check_input(w, x)?;
        Ok(self.run(w, x))
    }

    /// Logits only, computed in parallel chunks.
    pub fn logits<T: Element>(&self, w: &WeightStore<T>, x: &TensorBuffer<T>) -> Result<TensorBuffer<T>, TensorError> {
        self.check_input(w, x)?;
        let n = x.batch();
        let classes = self.classes();
        let parts: Vec<Vec<T>> = (0..n.div_ceil(CHUNK))
            .into_par_iter()
            .map(|c| {
                let sub = x.slice_batch(c * CHUNK..((c + 1) * CHUNK).min(n));
                self.run(w, &sub).values.pop().expect("output").into_vec()
            })
            .collect();
        TensorBuffer::from_vec([n, classes, 1, 1], parts.concat())
    }

    /// Mean softmax cross-entropy and its gradient with respect to every
    /// parameter.
    pub fn loss_and_grad<T: Element>(
        &self,
        w: &WeightStore<T>,
        x: &TensorBuffer<T>,
        labels: &[usize],
    ) -> Result<(T, WeightStore<T>), TensorError> {
        self.check_input(w, x)?;
        self.check_labels(x.batch(), labels)?;
        let n = x.batch();
        if n == 0 {
            return Err(TensorError::InvalidArgument("empty batch".into()));
        }
        let parts: Vec<(T, WeightStore<T>)> = (0..n.div_ceil(CHUNK))
            .into_par_iter()
            .map(|c| {
                let range = c * CHUNK..((c + 1) * CHUNK).min(n);
                let sub = x.slice_batch(range.clone());
                let fwd = self.run(w, &sub);
                self.backprop(w, &fwd, &labels[range])
            })
            .collect();
        let mut parts = parts.into_iter();
        let (mut loss, mut grads) = parts.next().expect("non-empty batch");
        for (l, g) in parts {
            loss = loss + l;
            grads.axpy(T::one(), &g);
        }
        let inv = T::one() / T::from_f64(n as f64);
        grads.scale(inv);
        Ok((loss * inv, grads))
    }

    /// Summed loss and gradients for the batch held in `fwd`.
    fn backprop<T: Element>(&self, w: &WeightStore<T>, fwd: &Forward<T>, labels: &[usize]) -> (T, WeightStore<T>) {
        let values = &fwd.values;
        let n = values[0].batch();
        let mut grads = WeightStore::zeros_like(&self.params);
        let mut vgrad: Vec<Option<TensorBuffer<T>>> = vec![None; values.len()];
        let logits = fwd.logits();
        let mut dlogits = TensorBuffer::zeros(logits.shape());
        let mut loss = T::zero();
        for (s, &label) in labels.iter().enumerate() {
            loss = loss + ops::softmax_cross_entropy(logits.sample(s), label, dlogits.sample_mut(s));
        }
        vgrad[values.len() - 1] = Some(dlogits);

        for (i, op) in self.graph.ops.iter().enumerate().rev() {
            let Some(gout) = vgrad[i + 1].take() else { continue };
            let input = op.inputs[0];
            let x = &values[input];
            let in_shape = x.sample_shape();
            let out_shape = op.out_shape;
            let need_gx = input != 0;
            match &op.kind {
                OpKind::Conv { spec, .. } => {
                    let weight = &w.get(&op.id).expect("checked").data;
                    let bname = bias_name(&op.id);
                    let mut gw = std::mem::take(&mut grads.get_mut(&op.id).expect("param").data);
                    let mut gb = spec.bias.then(|| std::mem::take(&mut grads.get_mut(&bname).expect("bias").data));
                    let mut gx = need_gx.then(|| TensorBuffer::zeros(x.shape()));
                    for s in 0..n {
                        ops::conv2d_backward(
                            x.sample(s),
                            in_shape,
                            weight,
                            spec,
                            out_shape,
                            gout.sample(s),
                            gx.as_mut().map(|g| g.sample_mut(s)),
                            &mut gw,
                            gb.as_deref_mut(),
                        );
                    }
                    grads.get_mut(&op.id).expect("param").data = gw;
                    if let Some(gb) = gb {
                        grads.get_mut(&bname).expect("bias").data = gb;
                    }
                    if let Some(gx) = gx {
                        accumulate(&mut vgrad[input], gx);
                    }
                }
                OpKind::Dense { bias, .. } => {
                    let weight = &w.get(&op.id).expect("checked").data;
                    let bname = bias_name(&op.id);
                    let mut gw = std::mem::take(&mut grads.get_mut(&op.id).expect("param").data);
                    let mut gb = bias.then(|| std::mem::take(&mut grads.get_mut(&bname).expect("bias").data));
                    let mut gx = need_gx.then(|| TensorBuffer::zeros(x.shape()));
                    for s in 0..n {
                        ops::dense_backward(
                            x.sample(s),
                            weight,
                            gout.sample(s),
                            gx.as_mut().map(|g| g.sample_mut(s)),
                            &mut gw,
                            gb.as_deref_mut(),
                        );
                    }
                    grads.get_mut(&op.id).expect("param").data = gw;
                    if let Some(gb) = gb {
                        grads.get_mut(&bname).expect("bias").data = gb;
                    }
                    if let Some(gx) = gx {
                        accumulate(&mut vgrad[input], gx);
                    }
                }
                _ if !need_gx && op.inputs.len() == 1 => {}
                OpKind::Relu => {
                    let mut gx = gout;
                    for (g, &v) in gx.data_mut().iter_mut().zip(x.data()) {
                        if v <= T::zero() {
                            *g = T::zero();
                        }
                    }
                    accumulate(&mut vgrad[input], gx);
                }
                OpKind::Pool(spec) => {
                    let mut gx = TensorBuffer::zeros(x.shape());
                    for s in 0..n {
                        ops::pool_backward(x.sample(s), in_shape, spec, out_shape, gout.sample(s), gx.sample_mut(s));
                    }
                    accumulate(&mut vgrad[input], gx);
                }
                OpKind::Slice { start, len } => {
                    let hw = in_shape.spatial();
                    let mut gx = TensorBuffer::zeros(x.shape());
                    for s in 0..n {
                        gx.sample_mut(s)[start * hw..(start + len) * hw].copy_from_slice(gout.sample(s));
                    }
                    accumulate(&mut vgrad[input], gx);
                }
                OpKind::Add => {
                    for &v in &op.inputs {
                        if v != 0 {
                            accumulate(&mut vgrad[v], gout.clone());
                        }
                    }
                }
                OpKind::Concat => {
                    let mut offset = 0;
                    for &v in &op.inputs {
                        let part = values[v].sample_len();
                        if v != 0 {
                            let mut gx = TensorBuffer::zeros(values[v].shape());
                            for s in 0..n {
                                gx.sample_mut(s).copy_from_slice(&gout.sample(s)[offset..offset + part]);
                            }
                            accumulate(&mut vgrad[v], gx);
                        }
                        offset += part;
                    }
                }
                OpKind::Flatten => accumulate(&mut vgrad[input], gout.reshaped(in_shape)),
            }
        }
        (loss, grads)
    }

    /// Forward pass without argument checks.
    fn run<T: Element>(&self, w: &WeightStore<T>, x: &TensorBuffer<T>) -> Forward<T> {
        let n = x.batch();
        let mut values: Vec<TensorBuffer<T>> = Vec::with_capacity(self.graph.ops.len() + 1);
        values.push(x.clone());
        for op in &self.graph.ops {
            let src = &values[op.inputs[0]];
            let in_shape = src.sample_shape();
            let out_shape = op.out_shape;
            let mut out = TensorBuffer::batch_of(n, out_shape);
            match &op.kind {
                OpKind::Conv { spec, .. } => {
                    let weight = &w.get(&op.id).expect("checked").data;
                    let bias = spec.bias.then(|| w.get(&bias_name(&op.id)).expect("checked").data.as_slice());
                    for s in 0..n {
                        ops::conv2d(src.sample(s), in_shape, weight, bias, spec, out_shape, out.sample_mut(s));
                    }
                }
                OpKind::Dense { bias, .. } => {
                    let weight = &w.get(&op.id).expect("checked").data;
                    let bias = bias.then(|| w.get(&bias_name(&op.id)).expect("checked").data.as_slice());
                    for s in 0..n {
                        ops::dense(src.sample(s), weight, bias, out.sample_mut(s));
                    }
                }
                OpKind::Relu => {
                    for (o, &v) in out.data_mut().iter_mut().zip(src.data()) {
                        *o = if v > T::zero() { v } else { T::zero() };
                    }
                }
                OpKind::Pool(spec) => {
                    for s in 0..n {
                        ops::pool(src.sample(s), in_shape, spec, out_shape, out.sample_mut(s));
                    }
                }
                OpKind::Slice { start, len } => {
                    let hw = in_shape.spatial();
                    for s in 0..n {
                        out.sample_mut(s).copy_from_slice(&src.sample(s)[start * hw..(start + len) * hw]);
                    }
                }
                OpKind::Add => {
                    let other = &values[op.inputs[1]];
                    for ((o, &a), &b) in out.data_mut().iter_mut().zip(src.data()).zip(other.data()) {
                        *o = a + b;
                    }
                }
                OpKind::Concat => {
                    for s in 0..n {
                        let mut offset = 0;
                        let dst = out.sample_mut(s);
                        for &v in &op.inputs {
                            let part = values[v].sample(s);
                            dst[offset..offset + part.len()].copy_from_slice(part);
                            offset += part.len();
                        }
                    }
                }
                OpKind::Flatten => out.data_mut().copy_from_slice(src.data()),
            }
            values.push(out);
        }
        Forward { values }
    }

    /// Distance of the pass from the non-differentiable points of ReLU and
    /// max pooling: the smallest |pre-activation| and the smallest gap
    /// between the two largest values of a max-pool window.
    pub fn kink_margin<T: Element>(&self, fwd: &Forward<T>) -> f64 {
        let mut margin = f64::INFINITY;
        for op in &self.graph.ops {
            let x = &fwd.values[op.inputs[0]];
            match &op.kind {
                OpKind::Relu => {
                    for &v in x.data() {
                        margin = margin.min(v.as_f64().abs());
                    }
                }
                OpKind::Pool(spec) => {
                    for s in 0..x.batch() {
                        margin = margin.min(ops::pool_margin(x.sample(s), x.sample_shape(), spec, op.out_shape));
                    }
                }
                _ => {}
            }
        }
        margin
    }
}

/// Runs `arch` on `x`, returning the logits and every intermediate value.
pub fn forward<T: Element>(
    arch: &Architecture,
    w: &WeightStore<T>,
    x: &TensorBuffer<T>,
) -> Result<(TensorBuffer<T>, Forward<T>), TensorError> {
    let fwd = Model::new(arch)?.forward(w, x)?;
    Ok((fwd.logits().clone(), fwd))
}

/// Mean cross-entropy loss and parameter gradients.
pub fn backward<T: Element>(
    arch: &Architecture,
    w: &WeightStore<T>,
    x: &TensorBuffer<T>,
    labels: &[usize],
) -> Result<(T, WeightStore<T>), TensorError> {
    Model::new(arch)?.loss_and_grad(w, x, labels)
}
