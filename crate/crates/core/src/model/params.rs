use std::collections::HashMap;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Freezing unit a parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Group {
    /// Convolutional feature encoder and the feature projection.
    FrontEnd,
    /// Positional convolution and the layer norm that follows it.
    Positional,
    Layer(usize),
    Adapter(usize),
    Head,
}

impl Group {
    /// Derives the group from a parameter path.
    pub fn of_path(path: &str) -> Result<Self> {
        if path.starts_with("fe.") {
            return Ok(Group::FrontEnd);
        }
        if path.starts_with("pos.") {
            return Ok(Group::Positional);
        }
        if path.starts_with("head.") {
            return Ok(Group::Head);
        }
        if let Some(rest) = path.strip_prefix("encoder.layer.") {
            let (idx, tail) = rest
                .split_once('.')
                .ok_or_else(|| Error::Parameter(format!("malformed path {path}")))?;
            let i: usize = idx
                .parse()
                .map_err(|_| Error::Parameter(format!("malformed layer index in {path}")))?;
            return Ok(if tail.contains("lora_") {
                Group::Adapter(i)
            } else {
                Group::Layer(i)
            });
        }
        Err(Error::Parameter(format!("unknown parameter path {path}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub path: String,
    pub group: Group,
    pub tensor: Tensor<T>,
    pub trainable: bool,
}

/// Named parameters in a fixed, deterministic order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
    index: HashMap<String, usize>,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, path: impl Into<String>, tensor: Tensor<T>) -> Result<usize> {
        let path = path.into();
        if self.index.contains_key(&path) {
            return Err(Error::State(format!("duplicate parameter path {path}")));
        }
        let group = Group::of_path(&path)?;
        let idx = self.params.len();
        self.index.insert(path.clone(), idx);
        self.params.push(Param {
            path,
            group,
            tensor,
            trainable: false,
        });
        Ok(idx)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    pub fn paths(&self) -> Vec<&str> {
        self.params.iter().map(|p| p.path.as_str()).collect()
    }

    pub fn index_of(&self, path: &str) -> Option<usize> {
        self.index.get(path).copied()
    }

    pub fn get(&self, path: &str) -> Option<&Param<T>> {
        self.index_of(path).map(|i| &self.params[i])
    }

    pub fn get_mut(&mut self, path: &str) -> Option<&mut Param<T>> {
        self.index_of(path).map(move |i| &mut self.params[i])
    }

    pub fn by_index(&self, i: usize) -> &Param<T> {
        &self.params[i]
    }

    pub fn by_index_mut(&mut self, i: usize) -> &mut Param<T> {
        &mut self.params[i]
    }

    pub fn contains(&self, path: &str) -> bool {
        self.index.contains_key(path)
    }

    pub fn trainable_count(&self) -> usize {
        self.params.iter().filter(|p| p.trainable).map(|p| p.tensor.len()).sum()
    }

    pub fn total_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    path: p.path.clone(),
                    group: p.group,
                    tensor: p.tensor.cast(),
                    trainable: p.trainable,
                })
                .collect(),
            index: self.index.clone(),
        }
    }

    /// Copy with every tensor rounded onto the binary16 grid.
    pub fn to_half(&self) -> Self {
        let mut out = self.clone();
        for p in &mut out.params {
            p.tensor = p.tensor.to_half();
        }
        out
    }
}

/// Creates graph leaves for parameters on first use.
///
/// Leaves read their values from `store`, which may be a master copy or its
/// half-precision shadow. `requires_grad` follows the trainable flag.
pub struct Binder<'s, T: Real> {
    store: &'s ParamStore<T>,
    vars: Vec<Option<Var>>,
}

impl<'s, T: Real> Binder<'s, T> {
    pub fn new(store: &'s ParamStore<T>) -> Self {
        Self {
            store,
            vars: vec![None; store.len()],
        }
    }

    pub fn store(&self) -> &'s ParamStore<T> {
        self.store
    }

    pub fn get(&mut self, g: &mut Graph<T>, path: &str) -> Result<Var> {
        let idx = self
            .store
            .index_of(path)
            .ok_or_else(|| Error::Parameter(format!("no parameter named {path}")))?;
        if let Some(v) = self.vars[idx] {
            return Ok(v);
        }
        let p = self.store.by_index(idx);
        let v = g.param(p.tensor.clone(), p.trainable);
        self.vars[idx] = Some(v);
        Ok(v)
    }

    /// Parameters bound so far, as `(store index, leaf)`.
    pub fn bound(&self) -> impl Iterator<Item = (usize, Var)> + '_ {
        self.vars
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|v| (i, v)))
    }

    /// Gradients of every bound trainable parameter, keyed by store index.
    /// Trainable parameters the loss never touched get zeros.
    pub fn gradients(&self, g: &Graph<T>) -> Vec<(usize, Vec<T>)> {
        self.store
            .iter()
            .enumerate()
            .filter(|(_, p)| p.trainable)
            .map(|(i, p)| {
                let grad = self.vars[i]
                    .and_then(|v| g.grad(v))
                    .map(|s| s.to_vec())
                    .unwrap_or_else(|| vec![T::zero(); p.tensor.len()]);
                (i, grad)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn groups_from_paths() {
        assert_eq!(Group::of_path("fe.conv.0.weight").unwrap(), Group::FrontEnd);
        assert_eq!(Group::of_path("fe.proj.bias").unwrap(), Group::FrontEnd);
        assert_eq!(Group::of_path("pos.norm.weight").unwrap(), Group::Positional);
        assert_eq!(
            Group::of_path("encoder.layer.9.attn.q.weight").unwrap(),
            Group::Layer(9)
        );
        assert_eq!(
            Group::of_path("encoder.layer.3.attn.v.lora_b").unwrap(),
            Group::Adapter(3)
        );
        assert!(Group::of_path("decoder.x").is_err());
    }

    #[test]
    fn duplicate_paths_rejected() {
        let mut s = ParamStore::<f32>::new();
        s.insert("head.activation.bias", Tensor::zeros(vec![1])).unwrap();
        assert!(s.insert("head.activation.bias", Tensor::zeros(vec![1])).is_err());
    }
}
