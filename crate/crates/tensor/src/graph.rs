use std::collections::HashMap;

use crate::{ParamId, ParamKind, ParamStore, Result, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

/// Training mode uses batch statistics in normalization layers and records
/// running-statistic updates; evaluation mode is a pure function of weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

pub(crate) struct BackwardCtx<'a> {
    pub inputs: Vec<&'a Tensor>,
    pub output: &'a Tensor,
    pub grad: &'a Tensor,
    pub needs: Vec<bool>,
}

pub(crate) type BackwardFn = Box<dyn Fn(&BackwardCtx<'_>) -> Result<Vec<Option<Tensor>>>>;

struct Node {
    value: Tensor,
    inputs: Vec<NodeId>,
    backward: Option<BackwardFn>,
    requires_grad: bool,
}

/// Tape of one forward pass.
pub struct Graph {
    nodes: Vec<Node>,
    mode: Mode,
    params: HashMap<ParamId, NodeId>,
    buffer_updates: Vec<(ParamId, Tensor)>,
}

impl Graph {
    pub fn new(mode: Mode) -> Self {
        Self {
            nodes: Vec::new(),
            mode,
            params: HashMap::new(),
            buffer_updates: Vec::new(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn is_training(&self) -> bool {
        self.mode == Mode::Train
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.leaf(value, false)
    }

    /// Leaf whose gradient is kept by [`Graph::backward`] when `requires_grad`.
    pub fn input(&mut self, value: Tensor, requires_grad: bool) -> NodeId {
        self.leaf(value, requires_grad)
    }

    /// Leaf bound to a stored parameter; repeated calls in one pass return the
    /// same node so gradients accumulate in one place.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        if let Some(&node) = self.params.get(&id) {
            return node;
        }
        let entry = store.entry(id);
        let node = self.leaf(entry.value.clone(), entry.kind == ParamKind::Weight);
        self.params.insert(id, node);
        node
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    pub fn take_buffer_updates(&mut self) -> Vec<(ParamId, Tensor)> {
        std::mem::take(&mut self.buffer_updates)
    }

    pub(crate) fn record_buffer_update(&mut self, id: ParamId, value: Tensor) {
        self.buffer_updates.push((id, value));
    }

    fn leaf(&mut self, value: Tensor, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            inputs: Vec::new(),
            backward: None,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub(crate) fn last(&self) -> NodeId {
        NodeId(self.nodes.len() - 1)
    }

    pub(crate) fn push(&mut self, value: Tensor, inputs: Vec<NodeId>, backward: BackwardFn) -> NodeId {
        let requires_grad = inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        self.nodes.push(Node {
            value,
            inputs,
            backward: requires_grad.then_some(backward),
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Backpropagate `seed` (the gradient of some scalar objective with
    /// respect to `output`) through the tape.
    pub fn backward(&self, output: NodeId, seed: Tensor) -> Result<Gradients> {
        seed.expect_shape("backward seed", self.value(output).shape())?;
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(seed);
        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            let Some(backward) = &node.backward else {
                continue;
            };
            let Some(grad) = grads[i].take() else {
                continue;
            };
            let ctx = BackwardCtx {
                inputs: node.inputs.iter().map(|j| &self.nodes[j.0].value).collect(),
                output: &node.value,
                grad: &grad,
                needs: node
                    .inputs
                    .iter()
                    .map(|j| self.nodes[j.0].requires_grad)
                    .collect(),
            };
            let input_grads = backward(&ctx)?;
            for ((j, g), need) in node.inputs.iter().zip(input_grads).zip(&ctx.needs) {
                let Some(g) = g else { continue };
                if !need {
                    continue;
                }
                match &mut grads[j.0] {
                    Some(acc) => acc.add_assign(&g)?,
                    slot @ None => *slot = Some(g),
                }
            }
        }
        let params = self
            .params
            .iter()
            .map(|(&p, &n)| (p, n))
            .collect::<HashMap<_, _>>();
        Ok(Gradients { grads, params })
    }
}

/// Gradients of leaves after one backward pass.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: HashMap<ParamId, NodeId>,
}

impl Gradients {
    /// Gradient of a leaf created with `requires_grad`.
    pub fn get(&self, node: NodeId) -> Option<&Tensor> {
        self.grads[node.0].as_ref()
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.get(&id).and_then(|n| self.grads[n.0].as_ref())
    }

    /// `(parameter, gradient)` pairs sorted by parameter id.
    pub fn params(&self) -> Vec<(ParamId, &Tensor)> {
        let mut out: Vec<_> = self
            .params
            .iter()
            .filter_map(|(&p, n)| self.grads[n.0].as_ref().map(|g| (p, g)))
            .collect();
        out.sort_by_key(|(p, _)| *p);
        out
    }
}
