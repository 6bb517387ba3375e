use std::collections::BTreeMap;

use candle_core::{DType, Device, Result, Tensor, Var};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::checkpoint::NamedArray;

#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Ones,
    /// Normal with std `gain / sqrt(fan_in)`.
    Scaled { gain: f64, fan_in: usize },
    Normal(f64),
}

/// Named, ordered set of trainable variables.
#[derive(Debug, Clone)]
pub struct ParamStore {
    vars: BTreeMap<String, Var>,
    dtype: DType,
}

impl ParamStore {
    pub fn new(dtype: DType) -> Self {
        Self {
            vars: BTreeMap::new(),
            dtype,
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn from_arrays(arrays: &[NamedArray], dtype: DType) -> Result<Self> {
        let mut vars = BTreeMap::new();
        for a in arrays {
            let t = Tensor::from_vec(a.data.clone(), a.shape.as_slice(), &Device::Cpu)?.to_dtype(dtype)?;
            vars.insert(a.name.clone(), Var::from_tensor(&t)?);
        }
        Ok(Self { vars, dtype })
    }

    pub fn to_arrays(&self) -> Result<Vec<NamedArray>> {
        self.vars
            .iter()
            .map(|(name, v)| {
                Ok(NamedArray {
                    name: name.clone(),
                    shape: v.dims().to_vec(),
                    data: v.as_tensor().to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?,
                })
            })
            .collect()
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.vars.keys().map(String::as_str)
    }

    pub fn all_vars(&self) -> Vec<Var> {
        self.vars.values().cloned().collect()
    }

    pub fn vars_with_prefix(&self, prefix: &str) -> Vec<Var> {
        self.vars
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(_, v)| v.clone())
            .collect()
    }

    pub fn num_scalars(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    /// Deep copy with independent storage.
    pub fn duplicate(&self) -> Result<Self> {
        let mut vars = BTreeMap::new();
        for (k, v) in &self.vars {
            vars.insert(k.clone(), Var::from_tensor(&v.as_tensor().copy()?)?);
        }
        Ok(Self {
            vars,
            dtype: self.dtype,
        })
    }

    /// Overwrites every variable with the values held by `other`.
    pub fn assign_from(&self, other: &ParamStore) -> Result<()> {
        for (k, v) in &self.vars {
            match other.vars.get(k) {
                Some(src) => v.set(src.as_tensor())?,
                None => candle_core::bail!("parameter {k} missing from source store"),
            }
        }
        Ok(())
    }

    fn get_or_init<R: Rng>(&mut self, name: &str, shape: &[usize], init: Init, rng: &mut R) -> Result<Tensor> {
        if let Some(v) = self.vars.get(name) {
            if v.dims() != shape {
                candle_core::bail!(
                    "parameter {name}: stored shape {:?} but network expects {shape:?}",
                    v.dims()
                );
            }
            return Ok(v.as_tensor().clone());
        }
        let n: usize = shape.iter().product();
        let data: Vec<f64> = match init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::Normal(std) => (0..n)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(rng);
                    std * z
                })
                .collect(),
            Init::Scaled { gain, fan_in } => {
                let std = gain / (fan_in.max(1) as f64).sqrt();
                (0..n).map(|_| {
                    let z: f64 = StandardNormal.sample(rng);
                    std * z
                }).collect()
            }
        };
        let t = Tensor::from_vec(data, shape, &Device::Cpu)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        let out = var.as_tensor().clone();
        self.vars.insert(name.to_string(), var);
        Ok(out)
    }
}

/// Scoped view used while constructing a network: hands out parameters
/// under a dotted name prefix, initializing any that are not already present.
pub struct Builder<'a, R: Rng> {
    store: &'a mut ParamStore,
    rng: &'a mut R,
    prefix: String,
}

impl<'a, R: Rng> Builder<'a, R> {
    pub fn new(store: &'a mut ParamStore, rng: &'a mut R) -> Self {
        Self {
            store,
            rng,
            prefix: String::new(),
        }
    }

    pub fn push(&mut self, name: &str) -> Builder<'_, R> {
        Builder {
            prefix: self.full_name(name),
            store: self.store,
            rng: self.rng,
        }
    }

    fn full_name(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    pub fn param(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        let full = self.full_name(name);
        self.store.get_or_init(&full, shape, init, self.rng)
    }
}
