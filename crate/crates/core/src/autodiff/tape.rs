use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Computes parent gradients from the output gradient, the parent values and
/// the output value. Returns one entry per parent; `None` means no
/// contribution.
pub type BackwardFn = Box<dyn Fn(&Tensor, &[&Tensor], &Tensor) -> Vec<Option<Tensor>>>;

struct Node {
    value: Tensor,
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
    requires_grad: bool,
}

/// Dynamic reverse-mode record. Build one per forward pass; call
/// [`Tape::backward`] once.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    visited: Vec<usize>,
    backward_done: bool,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records an input. Gradients are only accumulated for leaves with
    /// `requires_grad` and the values that depend on them.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            parents: Vec::new(),
            backward: None,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Records a primitive application. The backward function is dropped
    /// when no parent needs a gradient.
    pub fn record(&mut self, value: Tensor, parents: &[Var], backward: BackwardFn) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite("tape primitive"));
        }
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            parents: parents.iter().map(|p| p.0).collect(),
            backward: requires_grad.then_some(backward),
            requires_grad,
        });
        self.grads.push(None);
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient, zeros if nothing flowed to `v`.
    pub fn grad(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(self.nodes[v.0].value.shape()),
        }
    }

    pub fn zero_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    /// Node indices in the order the last backward pass visited them.
    pub fn backward_order(&self) -> &[usize] {
        &self.visited
    }

    /// Propagates `d loss / d ·` to every recorded value. The loss must be a
    /// single-element value; a tape can be differentiated only once.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::BackwardTwice);
        }
        let shape = self.nodes[loss.0].value.shape().to_vec();
        if shape.iter().product::<usize>() != 1 {
            return Err(Error::NonScalarLoss(shape));
        }
        self.backward_done = true;
        self.visited.clear();
        self.grads[loss.0] = Some(Tensor::full(&shape, 1.0));

        for idx in (0..=loss.0).rev() {
            self.visited.push(idx);
            let Some(g) = self.grads[idx].take() else {
                continue;
            };
            if let Some(backward) = &self.nodes[idx].backward {
                let node = &self.nodes[idx];
                let parent_values: Vec<&Tensor> =
                    node.parents.iter().map(|&p| &self.nodes[p].value).collect();
                let contributions = backward(&g, &parent_values, &node.value);
                debug_assert_eq!(contributions.len(), node.parents.len());
                let parents = node.parents.clone();
                for (p, c) in parents.into_iter().zip(contributions) {
                    let Some(c) = c else { continue };
                    if !self.nodes[p].requires_grad {
                        continue;
                    }
                    debug_assert_eq!(c.shape(), self.nodes[p].value.shape());
                    match &mut self.grads[p] {
                        Some(acc) => acc
                            .data_mut()
                            .iter_mut()
                            .zip(c.data())
                            .for_each(|(a, b)| *a += b),
                        slot @ None => *slot = Some(c),
                    }
                }
            }
            self.grads[idx] = Some(g);
        }
        if self.grads.iter().flatten().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("backward"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::ops;

    #[test]
    fn backward_only_once() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(2.0));
        let y = ops::mul(&mut tape, x, x).unwrap();
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(x).data(), &[4.0]);
        assert!(matches!(tape.backward(y), Err(Error::BackwardTwice)));
        tape.zero_grads();
        assert_eq!(tape.grad(x).data(), &[0.0]);
    }

    #[test]
    fn reverse_visit_order() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(1.0));
        let y = ops::scale(&mut tape, x, 3.0).unwrap();
        let z = ops::add(&mut tape, y, x).unwrap();
        tape.backward(z).unwrap();
        assert_eq!(tape.backward_order(), &[2, 1, 0]);
        assert_eq!(tape.grad(x).data(), &[4.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::zeros(&[2]));
        assert!(matches!(tape.backward(x), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut tape = Tape::new();
        let c = tape.constant(Tensor::scalar(5.0));
        let x = tape.param(Tensor::scalar(2.0));
        let y = ops::mul(&mut tape, c, x).unwrap();
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(x).data(), &[5.0]);
        assert_eq!(tape.grad(c).data(), &[0.0]);
    }
}
