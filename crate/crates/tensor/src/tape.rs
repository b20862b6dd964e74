//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every operation appends one node holding its output value and, when any
//! input requires a gradient, a [`Backward`] rule. Node ids are assigned in
//! creation order, so walking the tape backwards visits nodes in reverse
//! topological order.

use std::cell::RefCell;
use std::sync::Arc;

use crate::Tensor;

/// Gradient rule of one recorded operation.
pub trait Backward {
    /// Given the gradient of the output, returns one gradient per input.
    /// `needs[i]` is false when input `i` does not require a gradient; the
    /// rule may return `None` for it and skip the work.
    fn backward(&self, grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>>;
}

struct Node {
    value: Arc<Tensor>,
    parents: Vec<usize>,
    requires_grad: bool,
    rule: Option<Box<dyn Backward>>,
}

/// Operation tape. Create one per forward pass and drop it afterwards.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    recording: bool,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl<'t> std::fmt::Debug for Var<'t> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    /// A tape that records gradient rules.
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            recording: true,
        }
    }

    /// A tape that never records gradient rules (inference only).
    pub fn no_grad() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            recording: false,
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Input that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.leaf_arc(Arc::new(value), false)
    }

    /// Leaf that accumulates a gradient (when the tape records).
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.leaf_arc(Arc::new(value), true)
    }

    pub fn leaf_arc(&self, value: Arc<Tensor>, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            parents: Vec::new(),
            requires_grad: requires_grad && self.recording,
            rule: None,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Records the result of an operation. `rule` is only constructed when
    /// some parent requires a gradient.
    pub fn record<'a, F>(&'a self, value: Tensor, parents: &[Var<'a>], rule: F) -> Var<'a>
    where
        F: FnOnce() -> Box<dyn Backward>,
    {
        self.record_arc(Arc::new(value), parents, rule)
    }

    /// As [`Tape::record`], for a value already shared with the rule.
    pub fn record_arc<'a, F>(&'a self, value: Arc<Tensor>, parents: &[Var<'a>], rule: F) -> Var<'a>
    where
        F: FnOnce() -> Box<dyn Backward>,
    {
        for p in parents {
            assert!(std::ptr::eq(p.tape, self), "variable belongs to another tape");
        }
        let requires_grad =
            self.recording && parents.iter().any(|p| self.nodes.borrow()[p.id].requires_grad);
        let rule = if requires_grad { Some(rule()) } else { None };
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            parents: parents.iter().map(|p| p.id).collect(),
            requires_grad,
            rule,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Back-propagates from one or more seeds, each paired with the gradient
    /// of the objective with respect to that output.
    pub fn backward(&self, seeds: &[(Var<'_>, Tensor)]) -> Gradients {
        let mut nodes = self.nodes.borrow_mut();
        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        for (var, g) in seeds {
            assert!(std::ptr::eq(var.tape, self), "seed belongs to another tape");
            assert_eq!(
                g.shape(),
                nodes[var.id].value.shape(),
                "seed gradient shape mismatch"
            );
            accumulate(&mut grads[var.id], g.clone());
        }
        for id in (0..nodes.len()).rev() {
            let Some(grad) = grads[id].take() else {
                continue;
            };
            let node = &mut nodes[id];
            if let Some(rule) = node.rule.take() {
                let parents = node.parents.clone();
                let needs: Vec<bool> = parents
                    .iter()
                    .map(|&p| grads_needed(&nodes, p))
                    .collect();
                let parent_grads = rule.backward(&grad, &needs);
                debug_assert_eq!(parent_grads.len(), parents.len());
                for ((&p, pg), need) in parents.iter().zip(parent_grads).zip(&needs) {
                    if let (Some(pg), true) = (pg, need) {
                        accumulate(&mut grads[p], pg);
                    }
                }
            } else if nodes[id].requires_grad {
                // leaf: keep the gradient
                grads[id] = Some(grad);
            }
        }
        Gradients { grads }
    }
}

fn grads_needed(nodes: &[Node], id: usize) -> bool {
    nodes[id].requires_grad
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(existing) => existing.add_assign(&g),
        None => *slot = Some(g),
    }
}

/// Leaf gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, var: Var<'_>) -> Option<Tensor> {
        self.grads.get_mut(var.id).and_then(|g| g.take())
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Arc<Tensor> {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    /// Copies the value out.
    pub fn to_tensor(&self) -> Tensor {
        (*self.value()).clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Double;
    impl Backward for Double {
        fn backward(&self, grad: &Tensor, _needs: &[bool]) -> Vec<Option<Tensor>> {
            vec![Some(grad.scale(2.0))]
        }
    }

    #[test]
    fn no_grad_tape_skips_rules() {
        let tape = Tape::no_grad();
        let x = tape.leaf(Tensor::scalar(1.0));
        let y = tape.record(Tensor::scalar(2.0), &[x], || Box::new(Double));
        assert!(!y.requires_grad());
    }

    #[test]
    fn gradients_accumulate_over_fanout() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(1.0));
        let a = tape.record(Tensor::scalar(2.0), &[x], || Box::new(Double));
        let b = tape.record(Tensor::scalar(2.0), &[x], || Box::new(Double));
        let grads = tape.backward(&[(a, Tensor::scalar(1.0)), (b, Tensor::scalar(1.0))]);
        assert_eq!(grads.get(x).unwrap().data(), &[4.0]);
    }
}
