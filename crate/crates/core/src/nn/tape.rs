//! Reverse-mode differentiation over a linear tape of tensor primitives.
//!
//! A tape records one forward pass. [`Tape::backward`] consumes it: further
//! recording or a second backward call is a state error until
//! [`Tape::reset`], which also invalidates every [`Var`] handed out before.

use super::ops::{self, LstmCache};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    id: usize,
    generation: u64,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv1d { input: usize, kernels: usize, bias: usize },
    Relu { input: usize },
    MaxPool { input: usize, argmax: Vec<usize> },
    Lstm { input: usize, w_ih: usize, w_hh: usize, bias: usize, reverse: bool, cache: LstmCache },
    Row { input: usize, row: usize },
    Concat { parts: Vec<usize> },
    Dense { input: usize, weights: usize, bias: usize },
    Scale { input: usize, mask: Vec<f64> },
    SoftmaxXent { logits: usize, target: usize, probs: Tensor },
    Mean { inputs: Vec<usize> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    generation: u64,
    consumed: bool,
}

/// Gradients of a scalar with respect to every node of a consumed tape.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
    generation: u64,
}

impl Gradients {
    /// Gradient for `var`; zeros when the loss does not depend on it.
    pub fn wrt(&self, var: Var) -> Result<Tensor> {
        if var.generation != self.generation || var.id >= self.grads.len() {
            return Err(Error::State("variable does not belong to this tape pass".into()));
        }
        Ok(self.grads[var.id]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[var.id])))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Clears all nodes so the tape can record a new pass.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.consumed = false;
        self.generation += 1;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn id(&self, var: Var) -> Result<usize> {
        if var.generation != self.generation || var.id >= self.nodes.len() {
            return Err(Error::State("variable was recorded before the last reset".into()));
        }
        Ok(var.id)
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Result<Var> {
        if self.consumed {
            return Err(Error::State("tape already consumed by backward; call reset".into()));
        }
        if !value.all_finite() {
            return Err(Error::NonFinite("produced while recording the tape".into()));
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var {
            id: self.nodes.len() - 1,
            generation: self.generation,
        })
    }

    fn grad_any(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.nodes[i].requires_grad)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Result<Var> {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, var: Var) -> Result<&Tensor> {
        Ok(&self.nodes[self.id(var)?].value)
    }

    pub fn conv1d(&mut self, input: Var, kernels: Var, bias: Var) -> Result<Var> {
        let (i, k, b) = (self.id(input)?, self.id(kernels)?, self.id(bias)?);
        let y = ops::conv1d(&self.nodes[i].value, &self.nodes[k].value, &self.nodes[b].value)?;
        let rg = self.grad_any(&[i, k, b]);
        self.push(y, Op::Conv1d { input: i, kernels: k, bias: b }, rg)
    }

    pub fn relu(&mut self, input: Var) -> Result<Var> {
        let i = self.id(input)?;
        let y = ops::relu(&self.nodes[i].value);
        let rg = self.nodes[i].requires_grad;
        self.push(y, Op::Relu { input: i }, rg)
    }

    pub fn maxpool1d(&mut self, input: Var, pool: usize) -> Result<Var> {
        let i = self.id(input)?;
        let (y, argmax) = ops::maxpool1d(&self.nodes[i].value, pool)?;
        let rg = self.nodes[i].requires_grad;
        self.push(y, Op::MaxPool { input: i, argmax }, rg)
    }

    pub fn lstm(&mut self, input: Var, w_ih: Var, w_hh: Var, bias: Var, reverse: bool) -> Result<Var> {
        let (i, wi, wh, b) = (self.id(input)?, self.id(w_ih)?, self.id(w_hh)?, self.id(bias)?);
        let (y, cache) = ops::lstm_forward(
            &self.nodes[i].value,
            &self.nodes[wi].value,
            &self.nodes[wh].value,
            &self.nodes[b].value,
            reverse,
        )?;
        let rg = self.grad_any(&[i, wi, wh, b]);
        self.push(
            y,
            Op::Lstm { input: i, w_ih: wi, w_hh: wh, bias: b, reverse, cache },
            rg,
        )
    }

    /// Row `row` of a rank-2 tensor as a vector.
    pub fn row(&mut self, input: Var, row: usize) -> Result<Var> {
        let i = self.id(input)?;
        let (rows, _) = self.nodes[i].value.dims2()?;
        if row >= rows {
            return Err(Error::Index { index: row, len: rows });
        }
        let y = Tensor::vector(self.nodes[i].value.row(row).to_vec());
        let rg = self.nodes[i].requires_grad;
        self.push(y, Op::Row { input: i, row }, rg)
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let ids = parts.iter().map(|&p| self.id(p)).collect::<Result<Vec<_>>>()?;
        let mut data = Vec::new();
        for &i in &ids {
            self.nodes[i].value.dims1()?;
            data.extend_from_slice(self.nodes[i].value.data());
        }
        let rg = self.grad_any(&ids);
        self.push(Tensor::vector(data), Op::Concat { parts: ids }, rg)
    }

    pub fn dense(&mut self, input: Var, weights: Var, bias: Var) -> Result<Var> {
        let (i, w, b) = (self.id(input)?, self.id(weights)?, self.id(bias)?);
        let y = ops::dense(&self.nodes[i].value, &self.nodes[w].value, &self.nodes[b].value)?;
        let rg = self.grad_any(&[i, w, b]);
        self.push(y, Op::Dense { input: i, weights: w, bias: b }, rg)
    }

    /// Inverted dropout. Eval mode and rate 0 return `input` unchanged.
    pub fn dropout(&mut self, input: Var, rate: f64, seed: u64, train: bool) -> Result<Var> {
        let i = self.id(input)?;
        if !train || rate == 0.0 {
            ops::dropout_mask(0, rate, seed)?;
            return Ok(input);
        }
        let mask = ops::dropout_mask(self.nodes[i].value.len(), rate, seed)?;
        let x = &self.nodes[i].value;
        let data = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let y = Tensor::new(x.shape().to_vec(), data)?;
        let rg = self.nodes[i].requires_grad;
        self.push(y, Op::Scale { input: i, mask }, rg)
    }

    /// Cross-entropy of `softmax(logits)` against `target`; returns the
    /// scalar loss node and the probabilities.
    pub fn softmax_cross_entropy(&mut self, logits: Var, target: usize) -> Result<(Var, Tensor)> {
        let l = self.id(logits)?;
        let (loss, probs) = ops::softmax_cross_entropy(&self.nodes[l].value, target)?;
        let rg = self.nodes[l].requires_grad;
        let v = self.push(
            Tensor::scalar(loss),
            Op::SoftmaxXent { logits: l, target, probs: probs.clone() },
            rg,
        )?;
        Ok((v, probs))
    }

    /// Mean of scalar nodes.
    pub fn mean(&mut self, inputs: &[Var]) -> Result<Var> {
        if inputs.is_empty() {
            return Err(Error::Shape("mean of zero scalars".into()));
        }
        let ids = inputs.iter().map(|&v| self.id(v)).collect::<Result<Vec<_>>>()?;
        let mut sum = 0.0;
        for &i in &ids {
            if self.nodes[i].value.len() != 1 {
                return Err(Error::Shape("mean expects scalar inputs".into()));
            }
            sum += self.nodes[i].value.data()[0];
        }
        let rg = self.grad_any(&ids);
        self.push(Tensor::scalar(sum / ids.len() as f64), Op::Mean { inputs: ids }, rg)
    }

    /// Propagates d`loss`/d(node) for every recorded node, in exact reverse
    /// recording order, and marks the tape consumed.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.nodes.is_empty() {
            return Err(Error::State("backward called before any forward pass".into()));
        }
        if self.consumed {
            return Err(Error::State("backward already ran on this pass; call reset".into()));
        }
        let root = self.id(loss)?;
        if self.nodes[root].value.len() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[root].value.shape()
            )));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root] = Some(Tensor::scalar(1.0));

        fn acc(grads: &mut [Option<Tensor>], id: usize, g: Tensor) {
            match &mut grads[id] {
                Some(existing) => existing.add_assign(&g),
                slot => *slot = Some(g),
            }
        }

        for id in (0..=root).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let rg = |i: usize| self.nodes[i].requires_grad;
            let val = |i: usize| &self.nodes[i].value;
            match &node.op {
                Op::Leaf => {
                    grads[id] = Some(g);
                    continue;
                }
                Op::Conv1d { input, kernels, bias } => {
                    let r = ops::conv1d_backward(val(*input), val(*kernels), val(*bias), &g, rg(*input))?;
                    if let Some(dx) = r.input {
                        acc(&mut grads, *input, dx);
                    }
                    acc(&mut grads, *kernels, r.kernels);
                    acc(&mut grads, *bias, r.bias);
                }
                Op::Relu { input } => acc(&mut grads, *input, ops::relu_backward(val(*input), &g)),
                Op::MaxPool { input, argmax } => {
                    acc(&mut grads, *input, ops::maxpool1d_backward(val(*input).shape(), argmax, &g))
                }
                Op::Lstm { input, w_ih, w_hh, bias, reverse, cache } => {
                    let r = ops::lstm_backward(
                        val(*input),
                        val(*w_ih),
                        val(*w_hh),
                        val(*bias),
                        *reverse,
                        &node.value,
                        cache,
                        &g,
                        rg(*input),
                    )?;
                    if let Some(dx) = r.input {
                        acc(&mut grads, *input, dx);
                    }
                    acc(&mut grads, *w_ih, r.w_ih);
                    acc(&mut grads, *w_hh, r.w_hh);
                    acc(&mut grads, *bias, r.bias);
                }
                Op::Row { input, row } => {
                    let mut dx = Tensor::zeros(val(*input).shape());
                    let cols = g.len();
                    dx.data_mut()[row * cols..(row + 1) * cols].copy_from_slice(g.data());
                    acc(&mut grads, *input, dx);
                }
                Op::Concat { parts } => {
                    let mut offset = 0;
                    for &p in parts {
                        let n = val(p).len();
                        acc(&mut grads, p, Tensor::vector(g.data()[offset..offset + n].to_vec()));
                        offset += n;
                    }
                }
                Op::Dense { input, weights, bias } => {
                    let r = ops::dense_backward(val(*input), val(*weights), val(*bias), &g)?;
                    acc(&mut grads, *input, r.input);
                    acc(&mut grads, *weights, r.weights);
                    acc(&mut grads, *bias, r.bias);
                }
                Op::Scale { input, mask } => {
                    let data = g.data().iter().zip(mask).map(|(a, m)| a * m).collect();
                    acc(&mut grads, *input, Tensor::new(g.shape().to_vec(), data)?);
                }
                Op::SoftmaxXent { logits, target, probs } => {
                    acc(
                        &mut grads,
                        *logits,
                        ops::softmax_cross_entropy_backward(probs, *target, g.data()[0]),
                    );
                }
                Op::Mean { inputs } => {
                    let share = g.data()[0] / inputs.len() as f64;
                    for &i in inputs {
                        acc(&mut grads, i, Tensor::scalar(share));
                    }
                }
            }
        }

        // only leaves keep their gradients
        for (slot, node) in grads.iter_mut().zip(&self.nodes) {
            if !matches!(node.op, Op::Leaf) || !node.requires_grad {
                *slot = None;
            }
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
            generation: self.generation,
        })
    }
}
