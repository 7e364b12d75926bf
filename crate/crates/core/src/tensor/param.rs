use std::collections::HashMap;

use rand::Rng as _;

use super::{Graph, Real, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

/// Index of a parameter inside its [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug)]
pub enum Init {
    Zeros,
    Ones,
    /// Uniform in `±1/sqrt(fan_in)`.
    FanIn(usize),
    Normal(f64),
}

/// Named learnable tensors in insertion order.
#[derive(Clone, Debug)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    index: HashMap<String, usize>,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self { names: Vec::new(), tensors: Vec::new(), index: HashMap::new() }
    }

    /// Registers a parameter. Names must be unique.
    pub fn add(&mut self, name: impl Into<String>, shape: Vec<usize>, init: Init, rng: &mut Rng) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter name {name}");
        let n: usize = shape.iter().product();
        let data: Vec<T> = match init {
            Init::Zeros => vec![T::zero(); n],
            Init::Ones => vec![T::one(); n],
            Init::FanIn(fan_in) => {
                let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                (0..n).map(|_| T::of(rng.gen_range(-bound..bound))).collect()
            }
            Init::Normal(std) => (0..n).map(|_| T::of(std * rng::normal(rng))).collect(),
        };
        let id = self.tensors.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(Tensor::new(shape, data).expect("parameter shape"));
        ParamId(id)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Replaces every parameter value from `(name, tensor)` pairs. Names and
    /// shapes must match exactly.
    pub fn load<'a, I>(&mut self, entries: I) -> Result<()>
    where
        I: IntoIterator<Item = (&'a str, Tensor<T>)>,
    {
        let mut seen = vec![false; self.len()];
        for (name, tensor) in entries {
            let id = self
                .index
                .get(name)
                .copied()
                .ok_or_else(|| Error::Format(format!("unknown parameter {name}")))?;
            if self.tensors[id].shape() != tensor.shape() {
                return Err(Error::ShapeMismatch {
                    op: "load",
                    lhs: self.tensors[id].shape().to_vec(),
                    rhs: tensor.shape().to_vec(),
                });
            }
            self.tensors[id] = tensor;
            seen[id] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::Format(format!("missing parameter {}", self.names[missing])));
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            index: self.index.clone(),
        }
    }
}

/// Location of a bound [`ParamStore`] inside a graph.
#[derive(Clone, Copy, Debug)]
pub struct Bound {
    pub(crate) offset: usize,
    pub(crate) len: usize,
}

impl Bound {
    #[inline]
    pub fn var(&self, id: ParamId) -> Var {
        debug_assert!(id.0 < self.len);
        Var(self.offset + id.0)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

impl<T: Real> Graph<T> {
    /// Copies every parameter of `store` into the graph as a differentiable leaf.
    pub fn bind(&mut self, store: &ParamStore<T>) -> Bound {
        let offset = self.len();
        for t in store.tensors() {
            self.leaf(t.clone(), true);
        }
        Bound { offset, len: store.len() }
    }

    /// Gradients of every bound parameter, zero-filled where no gradient flowed.
    pub fn param_grads(&self, bound: &Bound) -> Vec<Vec<T>> {
        (0..bound.len)
            .map(|i| {
                let v = Var(bound.offset + i);
                self.grad(v)
                    .map(<[T]>::to_vec)
                    .unwrap_or_else(|| vec![T::zero(); self.value(v).numel()])
            })
            .collect()
    }
}
