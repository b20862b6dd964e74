//! Named parameter collections and their binding to a tape.

use std::collections::HashMap;
use std::sync::Arc;

use crate::tape::{Gradients, Tape, Var};
use crate::Tensor;

/// Index of a tensor inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub value: Arc<Tensor>,
    /// Buffers (running statistics, singular-vector estimates) are stored
    /// alongside weights but never optimised.
    pub trainable: bool,
}

/// Ordered collection of named tensors.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
    by_name: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    fn insert(&mut self, name: &str, value: Tensor, trainable: bool) -> ParamId {
        assert!(
            !self.by_name.contains_key(name),
            "duplicate parameter name {name}"
        );
        self.by_name.insert(name.to_string(), self.params.len());
        self.params.push(Parameter {
            name: name.to_string(),
            value: Arc::new(value),
            trainable,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn add_param(&mut self, name: &str, value: Tensor) -> ParamId {
        self.insert(name, value, true)
    }

    pub fn add_buffer(&mut self, name: &str, value: Tensor) -> ParamId {
        self.insert(name, value, false)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    /// Mutable access; clones the tensor first if a tape still shares it.
    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        Arc::make_mut(&mut self.params[id.0].value)
    }

    pub fn set(&mut self, id: ParamId, value: Tensor) {
        assert_eq!(
            self.params[id.0].value.shape(),
            value.shape(),
            "shape change for parameter {}",
            self.params[id.0].name
        );
        self.params[id.0].value = Arc::new(value);
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).map(|&i| ParamId(i))
    }

    pub fn param(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    /// Number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.value.numel())
            .sum()
    }

    /// Registers every tensor on `tape`. Trainable tensors become gradient
    /// leaves when `track` is set; buffers are always constants.
    pub fn bind<'t>(&self, tape: &'t Tape, track: bool) -> Bound<'t> {
        let vars = self
            .params
            .iter()
            .map(|p| tape.leaf_arc(p.value.clone(), track && p.trainable))
            .collect();
        Bound { vars }
    }
}

/// Tape variables for every entry of a [`ParamStore`].
pub struct Bound<'t> {
    vars: Vec<Var<'t>>,
}

impl<'t> Bound<'t> {
    pub fn var(&self, id: ParamId) -> Var<'t> {
        self.vars[id.0]
    }

    /// Gradients for each store entry, in store order.
    pub fn grads(&self, grads: &mut Gradients) -> Vec<Option<Tensor>> {
        self.vars.iter().map(|&v| grads.take(v)).collect()
    }
}
