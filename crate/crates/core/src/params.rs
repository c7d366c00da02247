//! Named parameter storage and initializers.
//!
//! Layers hold [`ParamId`]s into a [`ParamStore`]; a forward pass first
//! binds the store into a [`Graph`] and then looks up the resulting
//! [`Var`]s through [`ParamVars`].

use std::ops::Index;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::numerics::{Graph, Real, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T: Real = f32> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
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

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter_mut())
    }

    /// Number of trainable scalars.
    pub fn total_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Scalars held by parameters whose name starts with `prefix`.
    pub fn scalars_with_prefix(&self, prefix: &str) -> usize {
        self.iter()
            .filter(|(n, _)| n.starts_with(prefix))
            .map(|(_, t)| t.len())
            .sum()
    }

    /// Replaces a parameter's value, keeping its shape.
    pub fn set(&mut self, id: ParamId, value: Tensor<T>) -> Result<()> {
        if value.shape() != self.tensors[id.0].shape() {
            return Err(Error::dim(
                "param_set",
                format!("{}: {:?} vs {:?}", self.names[id.0], value.shape(), self.tensors[id.0].shape()),
            ));
        }
        self.tensors[id.0] = value;
        Ok(())
    }

    /// Records every parameter as a graph leaf.
    pub fn bind(&self, g: &mut Graph<T>, requires_grad: bool) -> ParamVars {
        ParamVars(
            self.tensors
                .iter()
                .map(|t| g.leaf(t.clone().with_requires_grad(requires_grad)))
                .collect(),
        )
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| t.cast()).collect(),
        }
    }
}

/// Graph handles for a bound [`ParamStore`], indexed by [`ParamId`].
#[derive(Clone, Debug)]
pub struct ParamVars(Vec<Var>);

impl ParamVars {
    /// Wraps handles listed in store order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        ParamVars(vars)
    }

    pub fn vars(&self) -> &[Var] {
        &self.0
    }
}

impl Index<ParamId> for ParamVars {
    type Output = Var;

    fn index(&self, id: ParamId) -> &Var {
        &self.0[id.0]
    }
}

/// Normal(0, std) truncated to ±2 std by resampling.
pub fn trunc_normal<T: Real, R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Result<Tensor<T>> {
    let n: usize = shape.iter().product();
    let mut v = Vec::with_capacity(n);
    while v.len() < n {
        let z: f64 = StandardNormal.sample(rng);
        if z.abs() <= 2.0 {
            v.push(T::from_f64_lossy(z * std));
        }
    }
    Tensor::new(shape, v)
}

pub fn uniform<T: Real, R: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> Result<Tensor<T>> {
    let n: usize = shape.iter().product();
    let v = (0..n)
        .map(|_| T::from_f64_lossy(rng.random_range(-bound..=bound)))
        .collect();
    Tensor::new(shape, v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn trunc_normal_is_bounded_and_seeded() {
        let a: Tensor<f32> = trunc_normal(&[1000], 0.02, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b: Tensor<f32> = trunc_normal(&[1000], 0.02, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
        assert!(a.max_abs() <= 0.04);
    }

    #[test]
    fn store_counts_and_binds() {
        let mut s = ParamStore::<f64>::new();
        let w = s.add("lin.w", Tensor::zeros(&[4, 8]).unwrap());
        s.add("lin.b", Tensor::zeros(&[8]).unwrap());
        s.add("other", Tensor::zeros(&[3]).unwrap());
        assert_eq!(s.total_scalars(), 43);
        assert_eq!(s.scalars_with_prefix("lin."), 40);
        let mut g = Graph::new();
        let pv = s.bind(&mut g, true);
        assert_eq!(g.shape(pv[w]), &[4, 8]);
        assert!(s.set(w, Tensor::zeros(&[8, 4]).unwrap()).is_err());
    }
}
