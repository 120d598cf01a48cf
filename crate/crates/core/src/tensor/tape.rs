use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use super::Tensor;
use crate::{Error, Result};

/// Backward rule of a recorded operation.
///
/// `inputs` are the forward input values in recording order, `output` the
/// forward result and `grad` the upstream gradient (same shape as
/// `output`). Return one entry per input; entries may be `None` when
/// `needs[i]` is false.
pub trait Operation {
    fn name(&self) -> &'static str;

    fn backward(
        &self,
        inputs: &[&Tensor],
        output: &Tensor,
        grad: &Tensor,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor>>>;
}

struct Node {
    value: Rc<Tensor>,
    inputs: Vec<usize>,
    op: Option<Box<dyn Operation>>,
    requires_grad: bool,
}

#[derive(Default)]
struct TapeInner {
    nodes: Vec<Node>,
    generation: u64,
}

/// Records operations during a forward pass. Cloning yields another
/// handle to the same tape.
#[derive(Clone, Default)]
pub struct Tape {
    inner: Rc<RefCell<TapeInner>>,
}

/// A tensor value recorded on a [`Tape`].
#[derive(Clone)]
pub struct Var {
    tape: Tape,
    id: usize,
    generation: u64,
    requires_grad: bool,
    value: Rc<Tensor>,
}

impl fmt::Debug for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.value.shape())
            .field("requires_grad", &self.requires_grad)
            .finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A trainable leaf; its gradient is reported by [`Tape::backward`].
    pub fn leaf(&self, value: Tensor) -> Var {
        self.push(Rc::new(value), Vec::new(), None, true)
    }

    /// A non-trainable input.
    pub fn constant(&self, value: Tensor) -> Var {
        self.push(Rc::new(value), Vec::new(), None, false)
    }

    fn push(
        &self,
        value: Rc<Tensor>,
        inputs: Vec<usize>,
        op: Option<Box<dyn Operation>>,
        requires_grad: bool,
    ) -> Var {
        let mut inner = self.inner.borrow_mut();
        let id = inner.nodes.len();
        inner.nodes.push(Node {
            value: value.clone(),
            inputs,
            op,
            requires_grad,
        });
        Var {
            tape: self.clone(),
            id,
            generation: inner.generation,
            requires_grad,
            value,
        }
    }

    fn check_member(&self, var: &Var) -> Result<()> {
        if !Rc::ptr_eq(&self.inner, &var.tape.inner) {
            return Err(Error::Contract(
                "variable belongs to a different tape".into(),
            ));
        }
        if var.generation != self.inner.borrow().generation {
            return Err(Error::Contract(
                "variable is stale: its tape was reset by backward()".into(),
            ));
        }
        Ok(())
    }

    /// Appends the result of `op` applied to `inputs`.
    ///
    /// Fails if any input lives on another tape (or a reset one) or the
    /// output holds NaN/Inf.
    pub fn record(
        &self,
        op: impl Operation + 'static,
        inputs: &[&Var],
        output: Tensor,
    ) -> Result<Var> {
        for v in inputs {
            self.check_member(v)?;
        }
        output.ensure_finite(op.name())?;
        let requires_grad = inputs.iter().any(|v| v.requires_grad);
        if !requires_grad {
            return Ok(self.push(Rc::new(output), Vec::new(), None, false));
        }
        let ids = inputs.iter().map(|v| v.id).collect();
        Ok(self.push(Rc::new(output), ids, Some(Box::new(op)), true))
    }

    /// Back-propagates from the scalar `loss` and returns the gradient of
    /// every trainable leaf. The tape is reset afterwards; every `Var`
    /// recorded before becomes stale.
    ///
    /// Nodes are visited in exact reverse recording order and each
    /// node's contributions are added to its inputs in input order, so
    /// repeated runs are bit-identical.
    pub fn backward(&self, loss: &Var) -> Result<Gradients> {
        self.check_member(loss)?;
        if loss.value.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward() needs a scalar loss, got shape {:?}",
                loss.value.shape()
            )));
        }
        let mut inner = self.inner.borrow_mut();
        let nodes = std::mem::take(&mut inner.nodes);
        inner.generation += 1;
        let generation = inner.generation;
        drop(inner);

        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        if loss.requires_grad {
            grads[loss.id] = Some(Tensor::ones(loss.value.shape()));
        }
        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            let Some(op) = node.op.as_ref() else {
                continue;
            };
            let Some(grad) = grads[id].take() else {
                continue;
            };
            let inputs: Vec<&Tensor> = node
                .inputs
                .iter()
                .map(|&i| nodes[i].value.as_ref())
                .collect();
            let needs: Vec<bool> = node
                .inputs
                .iter()
                .map(|&i| nodes[i].requires_grad)
                .collect();
            let input_grads = op.backward(&inputs, &node.value, &grad, &needs)?;
            if input_grads.len() != node.inputs.len() {
                return Err(Error::Contract(format!(
                    "{} returned {} gradients for {} inputs",
                    op.name(),
                    input_grads.len(),
                    node.inputs.len()
                )));
            }
            for ((&input, g), need) in node.inputs.iter().zip(input_grads).zip(needs) {
                let Some(g) = g else { continue };
                if !need {
                    continue;
                }
                if g.shape() != nodes[input].value.shape() {
                    return Err(Error::Contract(format!(
                        "{} produced gradient of shape {:?} for input of shape {:?}",
                        op.name(),
                        g.shape(),
                        nodes[input].value.shape()
                    )));
                }
                g.ensure_finite(op.name())?;
                match &mut grads[input] {
                    Some(acc) => acc.add_assign(&g)?,
                    slot @ None => *slot = Some(g),
                }
            }
        }

        let leaf_grads = nodes
            .iter()
            .zip(grads)
            .map(|(node, g)| {
                if node.requires_grad && node.op.is_none() {
                    Some(g.unwrap_or_else(|| Tensor::zeros(node.value.shape())))
                } else {
                    None
                }
            })
            .collect();
        Ok(Gradients {
            tape: Rc::downgrade(&self.inner),
            generation: generation - 1,
            grads: leaf_grads,
        })
    }
}

/// Leaf gradients produced by one [`Tape::backward`] call.
pub struct Gradients {
    tape: std::rc::Weak<RefCell<TapeInner>>,
    generation: u64,
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for a trainable leaf (zeros if the loss does not depend
    /// on it). `None` for constants, intermediates or foreign variables.
    pub fn get(&self, var: &Var) -> Option<&Tensor> {
        let same_tape = self
            .tape
            .upgrade()
            .is_some_and(|t| Rc::ptr_eq(&t, &var.tape.inner));
        if !same_tape || var.generation != self.generation {
            return None;
        }
        self.grads.get(var.id).and_then(Option::as_ref)
    }

    /// Removes and returns a leaf gradient.
    pub fn take(&mut self, var: &Var) -> Option<Tensor> {
        self.get(var)?;
        self.grads[var.id].take()
    }
}

impl Var {
    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn tape(&self) -> &Tape {
        &self.tape
    }

    /// Same value as a constant on the same tape; gradients stop here.
    pub fn detach(&self) -> Var {
        self.tape.push(self.value.clone(), Vec::new(), None, false)
    }

    /// The same value as a constant on another tape, without copying.
    pub fn constant_on(&self, tape: &Tape) -> Var {
        tape.push(self.value.clone(), Vec::new(), None, false)
    }
}
