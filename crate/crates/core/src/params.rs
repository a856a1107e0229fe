//! Named parameter storage and binding of parameters onto a tape.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::tensor::{Element, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Init {
    /// Zero-mean normal with the model's init std.
    Normal,
    Ones,
    Zeros,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn new(name: impl Into<String>, shape: impl Into<Vec<usize>>, init: Init) -> Self {
        Self {
            name: name.into(),
            shape: shape.into(),
            init,
        }
    }
}

/// Parameter tensors keyed by a stable path such as `b1.enc0.blk1.attn.qkv.w`.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamSet<F: Element = f32> {
    map: BTreeMap<String, Tensor<F>>,
}

impl ParamSet<f32> {
    /// Draws every spec in order from one seeded stream.
    pub fn init(specs: &[ParamSpec], seed: u64, std: f64) -> Self {
        let mut rng = Stream::new(seed);
        let mut map = BTreeMap::new();
        for spec in specs {
            let t = match spec.init {
                Init::Normal => Tensor::from_fn(spec.shape.clone(), |_| (rng.normal() * std) as f32),
                Init::Ones => Tensor::full(spec.shape.clone(), 1.0),
                Init::Zeros => Tensor::zeros(spec.shape.clone()),
            };
            map.insert(spec.name.clone(), t);
        }
        Self { map }
    }
}

impl<F: Element> ParamSet<F> {
    pub fn new() -> Self {
        Self { map: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<F>) {
        self.map.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<F>> {
        self.map.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<F>> {
        self.map.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<F>)> {
        self.map.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<F>)> {
        self.map.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Total number of scalars across all tensors.
    pub fn scalar_count(&self) -> usize {
        self.map.values().map(Tensor::numel).sum()
    }

    pub fn contains_prefix(&self, prefix: &str) -> bool {
        self.map.keys().any(|k| k.starts_with(prefix))
    }

    pub fn cast<G: Element>(&self) -> ParamSet<G> {
        ParamSet {
            map: self.map.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    pub fn check_finite(&self) -> Result<()> {
        self.map.iter().try_for_each(|(k, v)| v.check_finite(k))
    }

    /// Errors unless names and shapes match `specs` exactly.
    pub fn validate(&self, specs: &[ParamSpec]) -> Result<()> {
        for spec in specs {
            match self.map.get(&spec.name) {
                None => {
                    return Err(Error::ShapeMismatch(format!("missing parameter {}", spec.name)))
                }
                Some(t) if t.shape() != spec.shape.as_slice() => {
                    return Err(Error::ShapeMismatch(format!(
                        "parameter {} has shape {:?}, expected {:?}",
                        spec.name,
                        t.shape(),
                        spec.shape
                    )))
                }
                Some(_) => {}
            }
        }
        if self.map.len() != specs.len() {
            let known: std::collections::BTreeSet<&str> = specs.iter().map(|s| s.name.as_str()).collect();
            let extra: Vec<&str> = self.map.keys().map(String::as_str).filter(|k| !known.contains(k)).collect();
            return Err(Error::ShapeMismatch(format!("unexpected parameters {extra:?}")));
        }
        Ok(())
    }
}

/// Lazily places parameters on a tape, each at most once per tape.
pub struct Binder<'p, F: Element = f32> {
    params: &'p ParamSet<F>,
    trainable: bool,
    bound: BTreeMap<String, Var>,
}

impl<'p, F: Element> Binder<'p, F> {
    pub fn new(params: &'p ParamSet<F>, trainable: bool) -> Self {
        Self {
            params,
            trainable,
            bound: BTreeMap::new(),
        }
    }

    pub fn params(&self) -> &'p ParamSet<F> {
        self.params
    }

    pub fn var(&mut self, tape: &mut Tape<F>, name: &str) -> Result<Var> {
        if let Some(&v) = self.bound.get(name) {
            return Ok(v);
        }
        let t = self
            .params
            .get(name)
            .ok_or_else(|| Error::ShapeMismatch(format!("missing parameter {name}")))?;
        let v = tape.leaf(t.clone(), self.trainable);
        self.bound.insert(name.to_string(), v);
        Ok(v)
    }

    /// Uses an existing tape variable for `name` instead of a fresh leaf.
    pub fn bind(&mut self, name: &str, v: Var) {
        self.bound.insert(name.to_string(), v);
    }

    pub fn bound(&self) -> impl Iterator<Item = (&str, Var)> {
        self.bound.iter().map(|(k, &v)| (k.as_str(), v))
    }

    /// Gradients of every parameter in the set (zeros where none flowed).
    pub fn grads(&self, tape: &Tape<F>) -> ParamSet<F> {
        let mut out = ParamSet::new();
        for (name, t) in self.params.iter() {
            let g = self
                .bound
                .get(name)
                .and_then(|&v| tape.grad(v))
                .unwrap_or_else(|| Tensor::zeros(t.shape().to_vec()));
            out.insert(name, g);
        }
        out
    }
}
