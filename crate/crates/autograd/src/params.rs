use std::collections::BTreeMap;

use crate::{Grads, Scalar, Tape, Tensor, Var};

/// Named parameter arrays of one network, ordered by name.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    params: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self { params: BTreeMap::new() }
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) {
        self.params.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.params.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<T>)> {
        self.params.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    pub fn convert<U: Scalar>(&self, f: impl Fn(T) -> U + Copy) -> ParamStore<U> {
        ParamStore { params: self.params.iter().map(|(k, v)| (k.clone(), v.convert(f))).collect() }
    }

    /// Put every parameter on the tape, trainable or frozen.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|(k, v)| {
                let var = if trainable { tape.param(v.clone()) } else { tape.constant(v.clone()) };
                (k.clone(), var)
            })
            .collect();
        Bound { vars }
    }

    /// Bind a subset: `select(name)` returns `None` to skip a parameter or
    /// `Some(trainable)`.
    pub fn bind_where(&self, tape: &mut Tape<T>, select: impl Fn(&str) -> Option<bool>) -> Bound {
        let mut vars = BTreeMap::new();
        for (k, v) in &self.params {
            if let Some(trainable) = select(k) {
                let var = if trainable { tape.param(v.clone()) } else { tape.constant(v.clone()) };
                vars.insert(k.clone(), var);
            }
        }
        Bound { vars }
    }

    /// Keep only parameters whose name starts with `prefix`.
    pub fn subset(&self, prefix: &str) -> Self {
        Self { params: self.params.iter().filter(|(k, _)| k.starts_with(prefix)).map(|(k, v)| (k.clone(), v.clone())).collect() }
    }

    /// Move every parameter of `other` into `self`, replacing equal names.
    pub fn merge(&mut self, other: Self) {
        self.params.extend(other.params);
    }
}

/// Name → tape variable map produced by [`ParamStore::bind`].
#[derive(Clone, Debug, Default)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn extend(&mut self, other: Bound) {
        self.vars.extend(other.vars);
    }

    /// Variable for a parameter. Panics on unknown names: the network
    /// definition and its parameter store are built from the same config.
    pub fn var(&self, name: &str) -> Var {
        match self.vars.get(name) {
            Some(v) => *v,
            None => panic!("parameter `{name}` is not bound"),
        }
    }

    pub fn try_var(&self, name: &str) -> Option<Var> {
        self.vars.get(name).copied()
    }

    /// Gradients for every bound parameter (zeros where nothing flowed).
    pub fn collect<T: Scalar>(&self, tape: &Tape<T>, grads: &Grads<T>) -> ParamStore<T> {
        let params = self
            .vars
            .iter()
            .map(|(k, &v)| {
                let g = grads.get(v).cloned().unwrap_or_else(|| Tensor::zeros(tape.shape(v).to_vec()));
                (k.clone(), g)
            })
            .collect();
        ParamStore { params }
    }
}
