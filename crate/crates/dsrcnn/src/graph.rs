//! Tape-style op graph with reverse-mode differentiation.
//!
//! Ops execute eagerly as they are recorded, so a [`Graph`] is both the
//! forward trace and the structure the backward sweep replays. Ids only ever
//! reference earlier slots, which makes cycles unrepresentable and gives the
//! backward sweep a valid reverse-topological order for free.

use crate::error::{Error, Result};
use crate::ops::{self, Mode};
use crate::tensor::{Shape, Tensor};
use rand_chacha::ChaCha8Rng;

/// Handle to a value held by a [`Graph`].
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct TensorId(pub(crate) usize);

struct Slot {
    value: Tensor,
    grad: Option<Tensor>,
}

enum Node {
    Conv2d {
        input: TensorId,
        kernel: TensorId,
        bias: Option<TensorId>,
        stride: (usize, usize),
        padding: (usize, usize),
        out: TensorId,
    },
    ConvTranspose2d {
        input: TensorId,
        kernel: TensorId,
        bias: Option<TensorId>,
        stride: (usize, usize),
        out: TensorId,
    },
    MaxPool2d {
        input: TensorId,
        argmax: Vec<usize>,
        out: TensorId,
    },
    Sigmoid {
        input: TensorId,
        out: TensorId,
    },
    Relu {
        input: TensorId,
        out: TensorId,
    },
    Dropout {
        input: TensorId,
        mask: Option<Vec<f64>>,
        out: TensorId,
    },
    Concat {
        inputs: Vec<TensorId>,
        out: TensorId,
    },
    Add {
        lhs: TensorId,
        rhs: TensorId,
        out: TensorId,
    },
    Sum {
        input: TensorId,
        out: TensorId,
    },
    LogMix {
        pred: TensorId,
        coeff_pos: Tensor,
        coeff_neg: Tensor,
        out: TensorId,
    },
}

impl Node {
    fn out(&self) -> TensorId {
        match self {
            Node::Conv2d { out, .. }
            | Node::ConvTranspose2d { out, .. }
            | Node::MaxPool2d { out, .. }
            | Node::Sigmoid { out, .. }
            | Node::Relu { out, .. }
            | Node::Dropout { out, .. }
            | Node::Concat { out, .. }
            | Node::Add { out, .. }
            | Node::Sum { out, .. }
            | Node::LogMix { out, .. } => *out,
        }
    }
}

#[derive(Default)]
pub struct Graph {
    slots: Vec<Slot>,
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Graph {
        Graph::default()
    }

    /// Insert an externally owned tensor (input or parameter) as a leaf.
    pub fn leaf(&mut self, value: Tensor) -> TensorId {
        let id = TensorId(self.slots.len());
        self.slots.push(Slot { value, grad: None });
        id
    }

    fn push(&mut self, value: Tensor, make_node: impl FnOnce(TensorId) -> Node) -> TensorId {
        let id = TensorId(self.slots.len());
        self.slots.push(Slot { value, grad: None });
        self.nodes.push(make_node(id));
        id
    }

    pub fn value(&self, id: TensorId) -> &Tensor {
        &self.slots[id.0].value
    }

    pub fn grad(&self, id: TensorId) -> Option<&Tensor> {
        self.slots[id.0].grad.as_ref()
    }

    /// Gradient of the last backward pass; values unreachable from the loss
    /// report a zero gradient.
    pub fn grad_or_zeros(&self, id: TensorId) -> Tensor {
        match &self.slots[id.0].grad {
            Some(g) => g.clone(),
            None => Tensor::zeros(self.slots[id.0].value.shape()),
        }
    }

    pub fn conv2d(
        &mut self,
        input: TensorId,
        kernel: TensorId,
        bias: Option<TensorId>,
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Result<TensorId> {
        let out = ops::conv2d_parts(
            self.value(input),
            self.value(kernel),
            bias.map(|b| self.value(b)),
            stride,
            padding,
        )?;
        Ok(self.push(out, |out| Node::Conv2d {
            input,
            kernel,
            bias,
            stride,
            padding,
            out,
        }))
    }

    pub fn conv_transpose2d(
        &mut self,
        input: TensorId,
        kernel: TensorId,
        bias: Option<TensorId>,
        stride: (usize, usize),
        out_size: (usize, usize),
    ) -> Result<TensorId> {
        let out = ops::conv_transpose2d_parts(
            self.value(input),
            self.value(kernel),
            bias.map(|b| self.value(b)),
            stride,
            out_size,
        )?;
        Ok(self.push(out, |out| Node::ConvTranspose2d {
            input,
            kernel,
            bias,
            stride,
            out,
        }))
    }

    pub fn max_pool2d(&mut self, input: TensorId) -> TensorId {
        let (out, argmax) = ops::max_pool2d(self.value(input));
        self.push(out, |out| Node::MaxPool2d { input, argmax, out })
    }

    pub fn sigmoid(&mut self, input: TensorId) -> TensorId {
        let out = ops::sigmoid(self.value(input));
        self.push(out, |out| Node::Sigmoid { input, out })
    }

    pub fn relu(&mut self, input: TensorId) -> TensorId {
        let out = ops::relu(self.value(input));
        self.push(out, |out| Node::Relu { input, out })
    }

    pub fn dropout(
        &mut self,
        input: TensorId,
        ratio: f64,
        mode: Mode,
        rng: &mut ChaCha8Rng,
    ) -> Result<TensorId> {
        let (out, mask) = ops::dropout(self.value(input), ratio, mode, rng)?;
        Ok(self.push(out, |out| Node::Dropout { input, mask, out }))
    }

    pub fn concat_channels(&mut self, inputs: &[TensorId]) -> Result<TensorId> {
        let tensors: Vec<&Tensor> = inputs.iter().map(|&id| self.value(id)).collect();
        let out = ops::concat_channels(&tensors)?;
        let inputs = inputs.to_vec();
        Ok(self.push(out, |out| Node::Concat { inputs, out }))
    }

    pub fn add(&mut self, lhs: TensorId, rhs: TensorId) -> Result<TensorId> {
        let out = self.value(lhs).add(self.value(rhs))?;
        Ok(self.push(out, |out| Node::Add { lhs, rhs, out }))
    }

    /// Sum of all elements as a 1x1x1x1 scalar.
    pub fn sum(&mut self, input: TensorId) -> TensorId {
        let out = Tensor::scalar(self.value(input).sum());
        self.push(out, |out| Node::Sum { input, out })
    }

    /// Scalar weighted log loss over a prediction map; coefficient tensors
    /// are captured as constants (no gradient flows into them).
    pub fn log_mix(
        &mut self,
        pred: TensorId,
        coeff_pos: Tensor,
        coeff_neg: Tensor,
    ) -> Result<TensorId> {
        let v = ops::log_mix(self.value(pred), &coeff_pos, &coeff_neg)?;
        Ok(self.push(Tensor::scalar(v), |out| Node::LogMix {
            pred,
            coeff_pos,
            coeff_neg,
            out,
        }))
    }

    /// Reverse sweep seeding d(loss)/d(loss) = 1. The loss must be scalar.
    /// Each node is visited exactly once, in reverse recording order.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        if self.slots[loss.0].value.shape().count() != 1 {
            return Err(Error::shape(
                "backward loss",
                "1x1x1x1",
                self.slots[loss.0].value.shape(),
            ));
        }
        for slot in &mut self.slots {
            slot.grad = None;
        }
        self.slots[loss.0].grad = Some(Tensor::scalar(1.0));

        for i in (0..self.nodes.len()).rev() {
            let out = self.nodes[i].out();
            if self.slots[out.0].grad.is_none() {
                continue;
            }
            let contributions = self.node_backward(i)?;
            for (id, g) in contributions {
                self.accumulate_grad(id, g)?;
            }
        }
        Ok(())
    }

    fn accumulate_grad(&mut self, id: TensorId, g: Tensor) -> Result<()> {
        match &mut self.slots[id.0].grad {
            Some(existing) => existing.accumulate(&g)?,
            slot => *slot = Some(g),
        }
        Ok(())
    }

    fn node_backward(&self, index: usize) -> Result<Vec<(TensorId, Tensor)>> {
        let node = &self.nodes[index];
        let grad_out = self.slots[node.out().0]
            .grad
            .as_ref()
            .expect("caller checked grad presence");
        let mut contributions = Vec::new();
        match node {
            Node::Conv2d {
                input,
                kernel,
                bias,
                stride,
                padding,
                ..
            } => {
                let (gi, gk, gb) = ops::conv2d_backward_parts(
                    self.value(*input),
                    self.value(*kernel),
                    bias.is_some(),
                    *stride,
                    *padding,
                    grad_out,
                );
                contributions.push((*input, gi));
                contributions.push((*kernel, gk));
                if let (Some(b), Some(gb)) = (bias, gb) {
                    contributions.push((*b, gb));
                }
            }
            Node::ConvTranspose2d {
                input,
                kernel,
                bias,
                stride,
                ..
            } => {
                let (gi, gk, gb) = ops::conv_transpose2d_backward_parts(
                    self.value(*input),
                    self.value(*kernel),
                    bias.is_some(),
                    *stride,
                    grad_out,
                )?;
                contributions.push((*input, gi));
                contributions.push((*kernel, gk));
                if let (Some(b), Some(gb)) = (bias, gb) {
                    contributions.push((*b, gb));
                }
            }
            Node::MaxPool2d { input, argmax, .. } => {
                let gi =
                    ops::max_pool2d_backward(self.value(*input).shape(), argmax, grad_out);
                contributions.push((*input, gi));
            }
            Node::Sigmoid { input, out } => {
                let gi = ops::sigmoid_backward(self.value(*out), grad_out);
                contributions.push((*input, gi));
            }
            Node::Relu { input, .. } => {
                let gi = ops::relu_backward(self.value(*input), grad_out);
                contributions.push((*input, gi));
            }
            Node::Dropout { input, mask, .. } => {
                let gi = ops::dropout_backward(mask.as_ref(), grad_out);
                contributions.push((*input, gi));
            }
            Node::Concat { inputs, .. } => {
                let shapes: Vec<Shape> =
                    inputs.iter().map(|&id| self.value(id).shape()).collect();
                let grads = ops::concat_channels_backward(&shapes, grad_out);
                for (&id, g) in inputs.iter().zip(grads) {
                    contributions.push((id, g));
                }
            }
            Node::Add { lhs, rhs, .. } => {
                contributions.push((*lhs, grad_out.clone()));
                contributions.push((*rhs, grad_out.clone()));
            }
            Node::Sum { input, .. } => {
                let g = grad_out.as_scalar()?;
                contributions.push((*input, Tensor::filled(self.value(*input).shape(), g)));
            }
            Node::LogMix {
                pred,
                coeff_pos,
                coeff_neg,
                ..
            } => {
                let g = ops::log_mix_backward(
                    self.value(*pred),
                    coeff_pos,
                    coeff_neg,
                    grad_out.as_scalar()?,
                );
                contributions.push((*pred, g));
            }
        }
        Ok(contributions)
    }

    /// Longest chain of convolution nodes (either orientation) feeding `id`.
    /// Used to check the depth of unfolded recurrences.
    pub fn conv_depth(&self, id: TensorId) -> usize {
        let mut depth = vec![0usize; self.slots.len()];
        for node in &self.nodes {
            let (inputs, is_conv): (Vec<TensorId>, bool) = match node {
                Node::Conv2d { input, kernel, bias, .. }
                | Node::ConvTranspose2d { input, kernel, bias, .. } => {
                    let mut v = vec![*input, *kernel];
                    v.extend(bias.iter().copied());
                    (v, true)
                }
                Node::MaxPool2d { input, .. }
                | Node::Sigmoid { input, .. }
                | Node::Relu { input, .. }
                | Node::Dropout { input, .. }
                | Node::Sum { input, .. } => (vec![*input], false),
                Node::Concat { inputs, .. } => (inputs.clone(), false),
                Node::Add { lhs, rhs, .. } => (vec![*lhs, *rhs], false),
                Node::LogMix { pred, .. } => (vec![*pred], false),
            };
            let best = inputs.iter().map(|i| depth[i.0]).max().unwrap_or(0);
            depth[node.out().0] = best + usize::from(is_conv);
        }
        depth[id.0]
    }

    /// Total number of convolution nodes recorded so far.
    pub fn conv_node_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Conv2d { .. } | Node::ConvTranspose2d { .. }))
            .count()
    }
}
