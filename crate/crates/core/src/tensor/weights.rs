use super::{Element, TensorError};
use crate::graph::{Graph, ParamSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

const MAGIC: &[u8; 4] = b"SFWS";
const VERSION: u32 = 1;
/// Amplitude of the noise added to the pass-through init of fusion convs.
const FUSION_NOISE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub dims: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Element> Param<T> {
    pub fn zeros(dims: Vec<usize>) -> Self {
        let n = dims.iter().product();
        Self { dims, data: vec![T::zero(); n] }
    }
}

/// Named parameter tensors. Conv and dense kernels are stored under their
/// layer id, biases under `<id>:bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightStore<T = f32> {
    params: BTreeMap<String, Param<T>>,
}

impl<T> Default for WeightStore<T> {
    fn default() -> Self {
        Self { params: BTreeMap::new() }
    }
}

impl<T: Element> WeightStore<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn zeros_like(specs: &[ParamSpec]) -> Self {
        let params = specs.iter().map(|s| (s.name.clone(), Param::zeros(s.dims.clone()))).collect();
        Self { params }
    }

    pub fn insert(&mut self, name: impl Into<String>, param: Param<T>) {
        self.params.insert(name.into(), param);
    }

    pub fn get(&self, name: &str) -> Option<&Param<T>> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param<T>> {
        self.params.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param<T>)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Param<T>)> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn element_count(&self) -> usize {
        self.params.values().map(|p| p.data.len()).sum()
    }

    pub fn cast<U: Element>(&self) -> WeightStore<U> {
        WeightStore {
            params: self
                .params
                .iter()
                .map(|(k, p)| {
                    (k.clone(), Param { dims: p.dims.clone(), data: p.data.iter().map(|v| U::from_f64(v.as_f64())).collect() })
                })
                .collect(),
        }
    }

    /// Checks that every parameter the graph needs is present with the
    /// right dimensions.
    pub fn check_against(&self, specs: &[ParamSpec]) -> Result<(), TensorError> {
        for spec in specs {
            match self.params.get(&spec.name) {
                None => return Err(TensorError::MissingParam(spec.name.clone())),
                Some(p) if p.dims != spec.dims => {
                    return Err(TensorError::ShapeMismatch(format!(
                        "parameter `{}` has dims {:?}, expected {:?}",
                        spec.name, p.dims, spec.dims
                    )))
                }
                Some(_) => {}
            }
        }
        Ok(())
    }

    /// `self += scale * other` for every shared parameter.
    pub fn axpy(&mut self, scale: T, other: &Self) {
        for (name, p) in self.params.iter_mut() {
            if let Some(o) = other.params.get(name) {
                for (a, &b) in p.data.iter_mut().zip(&o.data) {
                    *a = *a + scale * b;
                }
            }
        }
    }

    pub fn scale(&mut self, factor: T) {
        for p in self.params.values_mut() {
            for v in p.data.iter_mut() {
                *v = *v * factor;
            }
        }
    }
}

impl WeightStore<f32> {
    /// Binary container: magic, `u32` version, `u64` entry count, then per
    /// entry the `u64` id length, id bytes, `u64` rank, `u64` dims and raw
    /// `f32` elements, all little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.element_count() * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for (name, p) in &self.params {
            out.extend_from_slice(&(name.len() as u64).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(p.dims.len() as u64).to_le_bytes());
            for &d in &p.dims {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in &p.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TensorError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(TensorError::Format("bad magic".into()));
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
        if version != VERSION {
            return Err(TensorError::Format(format!("unsupported version {version}")));
        }
        let count = r.u64()?;
        let mut store = WeightStore::new();
        for _ in 0..count {
            let len = r.u64()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| TensorError::Format("parameter id is not UTF-8".into()))?
                .to_string();
            let rank = r.u64()? as usize;
            let dims = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
            let n: usize = dims.iter().product();
            let raw = r.take(n.checked_mul(4).ok_or_else(|| TensorError::Format("size overflow".into()))?)?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            store.params.insert(name, Param { dims, data });
        }
        if r.pos != bytes.len() {
            return Err(TensorError::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(store)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], TensorError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            TensorError::Format(format!("truncated at byte {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64, TensorError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn init_param(spec: &ParamSpec, rng: &mut ChaCha8Rng) -> Param<f32> {
    let mut p = Param::zeros(spec.dims.clone());
    if spec.is_bias {
        return p;
    }
    if spec.fusion {
        // pass-through: out channel o copies in channel o
        let (out_c, in_c) = (spec.dims[0], spec.dims[1]);
        for o in 0..out_c {
            for i in 0..in_c {
                let noise = rng.gen_range(-FUSION_NOISE..FUSION_NOISE);
                p.data[o * in_c + i] = (if o % in_c == i { 1.0 } else { 0.0 } + noise) as f32;
            }
        }
        return p;
    }
    // He-uniform: U(-a, a) with a = sqrt(6 / fan_in), std sqrt(2 / fan_in).
    let a = (6.0 / spec.fan_in.max(1) as f64).sqrt();
    for v in p.data.iter_mut() {
        *v = rng.gen_range(-a..a) as f32;
    }
    p
}

/// Fan-in scaled uniform initialization, deterministic per seed.
/// Fusion 1x1 convs start near a channel pass-through.
pub fn init_weights(graph: &Graph, seed: u64) -> WeightStore<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = WeightStore::new();
    for spec in graph.params() {
        let p = init_param(&spec, &mut rng);
        store.insert(spec.name, p);
    }
    store
}

/// Fresh initialization with every parameter whose name and dimensions
/// match one in `previous` copied over.
pub fn warm_start(graph: &Graph, seed: u64, previous: &WeightStore<f32>) -> WeightStore<f32> {
    let mut store = init_weights(graph, seed);
    for (name, p) in store.iter_mut() {
        if let Some(old) = previous.get(name) {
            if old.dims == p.dims {
                p.data.clone_from(&old.data);
            }
        }
    }
    store
}
