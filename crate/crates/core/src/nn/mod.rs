//! Small neural-network toolkit on top of candle: seeded parameter stores,
//! the layers the models need, optimizer helpers and a deterministic
//! parameter file format.

mod io;
mod layers;
mod optim;

use std::cell::RefCell;
use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use io::{read_container, write_container};
pub use layers::{
    instance_norm, masked_fill_bias, relu, sinusoid_positions, softmax_last, Conv1d, GruCell, LayerNorm, Linear,
};
pub use optim::{clip_grad_norm, warmup_cosine, Adam};

#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Ones,
    /// Uniform in `[-bound, bound]`.
    Uniform(f64),
    Normal(f64),
}

/// Where layers get their weights from.
pub trait ParamSource {
    fn param(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Tensor>;
    fn dtype(&self) -> DType;
}

/// Trainable parameters, created on first request from a seeded RNG so that
/// construction order alone fixes the initial values.
pub struct VarStore {
    vars: BTreeMap<String, Var>,
    rng: RefCell<ChaCha8Rng>,
    dtype: DType,
}

impl VarStore {
    pub fn new(seed: u64, dtype: DType) -> Self {
        VarStore {
            vars: BTreeMap::new(),
            rng: RefCell::new(ChaCha8Rng::seed_from_u64(seed)),
            dtype,
        }
    }

    /// All variables in name order.
    pub fn vars(&self) -> Vec<Var> {
        self.vars.values().cloned().collect()
    }

    pub fn named_vars(&self) -> impl Iterator<Item = (&str, &Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    /// Detached copies of the current values.
    pub fn snapshot(&self) -> Result<TensorMap> {
        let tensors = self
            .vars
            .iter()
            .map(|(k, v)| Ok((k.clone(), v.as_tensor().detach().copy()?)))
            .collect::<Result<_>>()?;
        Ok(TensorMap { tensors })
    }

    fn sample(&self, shape: &[usize], init: Init) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let mut rng = self.rng.borrow_mut();
        let data: Vec<f64> = match init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::Uniform(b) => {
                let dist = Uniform::new_inclusive(-b, b).map_err(|e| Error::InvalidConfig(e.to_string()))?;
                (0..n).map(|_| dist.sample(&mut *rng)).collect()
            }
            Init::Normal(std) => {
                let dist = Normal::new(0.0, std).map_err(|e| Error::InvalidConfig(e.to_string()))?;
                (0..n).map(|_| dist.sample(&mut *rng)).collect()
            }
        };
        // round through f32 so the same seed gives the same values in either dtype
        let data: Vec<f32> = data.into_iter().map(|v| v as f32).collect();
        Ok(Tensor::from_vec(data, shape, &Device::Cpu)?.to_dtype(self.dtype)?)
    }
}

impl ParamSource for VarStore {
    fn param(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        if let Some(v) = self.vars.get(name) {
            if v.dims() != shape {
                return Err(Error::Checkpoint(format!(
                    "parameter {name} requested with shape {shape:?} but exists as {:?}",
                    v.dims()
                )));
            }
            return Ok(v.as_tensor().clone());
        }
        let var = Var::from_tensor(&self.sample(shape, init)?)?;
        let t = var.as_tensor().clone();
        self.vars.insert(name.to_string(), var);
        Ok(t)
    }

    fn dtype(&self) -> DType {
        self.dtype
    }
}

/// Frozen, named parameter values.
#[derive(Debug, Clone, Default)]
pub struct TensorMap {
    tensors: BTreeMap<String, Tensor>,
}

impl TensorMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Entries whose name starts with `prefix`, with the prefix kept.
    pub fn with_prefix(&self, prefix: &str) -> TensorMap {
        TensorMap {
            tensors: self
                .tensors
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    pub fn to_dtype(&self, dtype: DType) -> Result<TensorMap> {
        let tensors = self
            .tensors
            .iter()
            .map(|(k, v)| Ok((k.clone(), v.to_dtype(dtype)?)))
            .collect::<Result<_>>()?;
        Ok(TensorMap { tensors })
    }

    /// Serialized form: for each entry in name order, name, rank, dims and
    /// little-endian f32 values.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.dims() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()? {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<(TensorMap, usize)> {
        let mut cur = io::Cursor::new(bytes);
        let n = cur.u32()? as usize;
        let mut tensors = BTreeMap::new();
        for _ in 0..n {
            let len = cur.u32()? as usize;
            let name = String::from_utf8(cur.take(len)?.to_vec())
                .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?;
            let rank = cur.u32()? as usize;
            let dims = (0..rank)
                .map(|_| cur.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let count: usize = dims.iter().product();
            let values: Vec<f32> = cur
                .take(4 * count)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.insert(name, Tensor::from_vec(values, dims, &Device::Cpu)?);
        }
        Ok((TensorMap { tensors }, cur.position()))
    }

    /// SHA-256 over the serialized values.
    pub fn checksum(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_bytes()?)))
    }
}

impl ParamSource for TensorMap {
    fn param(&mut self, name: &str, shape: &[usize], _init: Init) -> Result<Tensor> {
        let t = self
            .tensors
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
        if t.dims() != shape {
            return Err(Error::Checkpoint(format!(
                "parameter {name} has shape {:?}, expected {shape:?}",
                t.dims()
            )));
        }
        Ok(t.clone())
    }

    fn dtype(&self) -> DType {
        self.tensors.values().next().map(|t| t.dtype()).unwrap_or(DType::F32)
    }
}

/// A name prefix over a parameter source.
pub struct Scope<'a> {
    src: &'a mut dyn ParamSource,
    prefix: String,
}

impl<'a> Scope<'a> {
    pub fn root(src: &'a mut dyn ParamSource) -> Self {
        Scope {
            src,
            prefix: String::new(),
        }
    }

    pub fn sub(&mut self, name: &str) -> Scope<'_> {
        let prefix = self.path(name);
        Scope {
            src: &mut *self.src,
            prefix,
        }
    }

    fn path(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    pub fn param(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        let path = self.path(name);
        self.src.param(&path, shape, init)
    }

    pub fn dtype(&self) -> DType {
        self.src.dtype()
    }
}
