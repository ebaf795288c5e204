use std::collections::HashMap;
use std::ops::Index;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rvos_autodiff::{Graph, Real, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// Named parameter tensors in registration order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<F: Real> {
    names: Vec<String>,
    tensors: Vec<Tensor<F>>,
    index: HashMap<String, usize>,
}

impl<F: Real> Default for ParamStore<F> {
    fn default() -> Self {
        ParamStore { names: Vec::new(), tensors: Vec::new(), index: HashMap::new() }
    }
}

impl<F: Real> ParamStore<F> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, tensor: Tensor<F>) -> ParamId {
        assert!(!self.index.contains_key(name), "duplicate parameter {name}");
        self.index.insert(name.to_string(), self.names.len());
        self.names.push(name.to_string());
        self.tensors.push(tensor);
        ParamId(self.names.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.numel()).sum()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<F>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<F>] {
        &mut self.tensors
    }

    pub fn get(&self, id: ParamId) -> &Tensor<F> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        &mut self.tensors[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<F>> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Tensor<F>> {
        self.index.get(name).map(|&i| &mut self.tensors[i])
    }

    /// Zeroes every tensor whose name starts with `prefix`.
    pub fn zero_prefix(&mut self, prefix: &str) -> usize {
        let mut n = 0;
        for (name, t) in self.names.iter().zip(self.tensors.iter_mut()) {
            if name.starts_with(prefix) {
                t.data_mut().iter_mut().for_each(|v| *v = F::zero());
                n += 1;
            }
        }
        n
    }

    /// Adds every tensor to `g`, tracked when `trainable`.
    pub fn bind(&self, g: &mut Graph<F>, trainable: bool) -> Bound {
        Bound(self.tensors.iter().map(|t| if trainable { g.param(t.clone()) } else { g.constant(t.clone()) }).collect())
    }

    pub fn cast<G: Real>(&self) -> ParamStore<G> {
        ParamStore { names: self.names.clone(), tensors: self.tensors.iter().map(|t| t.cast()).collect(), index: self.index.clone() }
    }

    /// Rebuilds a store from names and tensors.
    pub fn from_parts(names: Vec<String>, tensors: Vec<Tensor<F>>) -> Self {
        let mut s = ParamStore::new();
        for (n, t) in names.iter().zip(tensors) {
            s.add(n, t);
        }
        s
    }
}

/// Graph variables for every parameter of a store.
pub struct Bound(pub Vec<Var>);

impl Index<ParamId> for Bound {
    type Output = Var;
    fn index(&self, id: ParamId) -> &Var {
        &self.0[id.0]
    }
}

/// Parameter registration: names are prefixed by the current scope.
pub struct Builder<'a> {
    pub store: &'a mut ParamStore<f64>,
    pub rng: &'a mut ChaCha8Rng,
    prefix: String,
}

impl<'a> Builder<'a> {
    pub fn new(store: &'a mut ParamStore<f64>, rng: &'a mut ChaCha8Rng) -> Self {
        Builder { store, rng, prefix: String::new() }
    }

    pub fn scoped<R>(&mut self, name: &str, f: impl FnOnce(&mut Builder) -> R) -> R {
        let prefix = format!("{}{name}.", self.prefix);
        let mut inner = Builder { store: &mut *self.store, rng: &mut *self.rng, prefix };
        f(&mut inner)
    }

    pub fn add(&mut self, name: &str, tensor: Tensor<f64>) -> ParamId {
        self.store.add(&format!("{}{name}", self.prefix), tensor)
    }

    pub fn uniform(&mut self, name: &str, shape: &[usize], bound: f64) -> ParamId {
        let t = Tensor::from_fn(shape.to_vec(), |_| self.rng.gen_range(-bound..=bound));
        self.add(name, t)
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> ParamId {
        self.add(name, Tensor::zeros(shape.to_vec()))
    }

    pub fn ones(&mut self, name: &str, shape: &[usize]) -> ParamId {
        self.add(name, Tensor::ones(shape.to_vec()))
    }
}
