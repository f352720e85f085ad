//! Reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every op in execution order. [`Tape::backward`] walks the
//! records in exact reverse order and sums gradient contributions when a value
//! fans out to several consumers. A tape belongs to one thread and one graph.

use crate::error::{Error, Result};
use crate::ops;
use crate::ops::NormCache;
use crate::tensor::{Real, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Conv3d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    },
    InstanceNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        cache: NormCache<T>,
        detach_stats: bool,
    },
    Relu(Var),
    Add(Var, Var),
    Linear {
        input: Var,
        weight: Var,
        bias: Var,
    },
    GlobalAvgPool(Var),
    WeightedSum {
        input: Var,
        weights: Tensor<T>,
    },
    Sum(Var),
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Tensor<T>,
    },
    Mse {
        pred: Var,
        target: Var,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Tape<T: Real> {
    nodes: Vec<Node<T>>,
    consumed: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Leaf gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of a leaf. `None` when the leaf does not require gradients or
    /// is not connected to the root.
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn check(&self, var: Var) -> Result<()> {
        if var.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(Error::config(format!("variable {} is not on this tape", var.0)))
        }
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn conv3d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        self.check(input)?;
        self.check(weight)?;
        if let Some(b) = bias {
            self.check(b)?;
        }
        let value = ops::conv3d(
            self.value(input),
            self.value(weight),
            bias.map(|b| self.value(b)),
            stride,
            padding,
        )?;
        let mut parents = vec![input, weight];
        parents.extend(bias);
        let rg = self.any_grad(&parents);
        Ok(self.push(
            value,
            Op::Conv3d {
                input,
                weight,
                bias,
                stride,
                padding,
            },
            rg,
        ))
    }

    pub fn instance_norm3d(&mut self, input: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        self.instance_norm3d_with(input, gamma, beta, eps, false)
    }

    /// Instance norm whose backward optionally treats the per-instance
    /// statistics as constants (`detach_stats`); the forward value is the same.
    pub fn instance_norm3d_with(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
        detach_stats: bool,
    ) -> Result<Var> {
        for v in [input, gamma, beta] {
            self.check(v)?;
        }
        let (value, cache) =
            ops::instance_norm3d(self.value(input), self.value(gamma), self.value(beta), eps)?;
        let rg = self.any_grad(&[input, gamma, beta]);
        Ok(self.push(
            value,
            Op::InstanceNorm {
                input,
                gamma,
                beta,
                cache,
                detach_stats,
            },
            rg,
        ))
    }

    pub fn relu(&mut self, input: Var) -> Result<Var> {
        self.check(input)?;
        let value = ops::relu(self.value(input));
        let rg = self.any_grad(&[input]);
        Ok(self.push(value, Op::Relu(input), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let value = ops::add(self.value(a), self.value(b))?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        for v in [input, weight, bias] {
            self.check(v)?;
        }
        let value = ops::linear(self.value(input), self.value(weight), self.value(bias))?;
        let rg = self.any_grad(&[input, weight, bias]);
        Ok(self.push(
            value,
            Op::Linear {
                input,
                weight,
                bias,
            },
            rg,
        ))
    }

    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        self.check(input)?;
        let value = ops::global_avg_pool(self.value(input))?;
        let rg = self.any_grad(&[input]);
        Ok(self.push(value, Op::GlobalAvgPool(input), rg))
    }

    /// Contracts `input` against a constant weight tensor of the same shape.
    pub fn weighted_sum(&mut self, input: Var, weights: Tensor<T>) -> Result<Var> {
        self.check(input)?;
        let value = ops::weighted_sum(self.value(input), &weights)?;
        let rg = self.any_grad(&[input]);
        Ok(self.push(value, Op::WeightedSum { input, weights }, rg))
    }

    pub fn sum(&mut self, input: Var) -> Result<Var> {
        self.check(input)?;
        let value = ops::sum(self.value(input));
        let rg = self.any_grad(&[input]);
        Ok(self.push(value, Op::Sum(input), rg))
    }

    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        self.check(logits)?;
        let (value, probs) = ops::softmax_cross_entropy(self.value(logits), labels)?;
        let rg = self.any_grad(&[logits]);
        Ok(self.push(
            value,
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            rg,
        ))
    }

    pub fn mse_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.check(pred)?;
        self.check(target)?;
        let value = ops::mse_loss(self.value(pred), self.value(target))?;
        let rg = self.any_grad(&[pred, target]);
        Ok(self.push(value, Op::Mse { pred, target }, rg))
    }

    /// Backpropagates from a one-element `root`.
    ///
    /// A tape supports one backward pass; a second call fails until
    /// [`Tape::reset_backward`] is called.
    pub fn backward(&mut self, root: Var) -> Result<Gradients<T>> {
        self.check(root)?;
        let value = self.value(root);
        if value.len() != 1 {
            return Err(Error::config(format!(
                "backward root must be scalar, got shape {:?}",
                value.shape()
            )));
        }
        let seed = Tensor::from_parts_unchecked(value.shape().to_vec(), vec![T::one()]);
        self.backward_with(root, seed)
    }

    /// Backpropagates an explicit upstream gradient `seed` from `root`.
    pub fn backward_with(&mut self, root: Var, seed: Tensor<T>) -> Result<Gradients<T>> {
        self.check(root)?;
        if self.consumed {
            return Err(Error::config(
                "backward already ran on this tape; call reset_backward() first",
            ));
        }
        if seed.shape() != self.value(root).shape() {
            return Err(Error::shape(format!(
                "seed gradient {:?} does not match root {:?}",
                seed.shape(),
                self.value(root).shape()
            )));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Tensor<T>>> = (0..=root.0).map(|_| None).collect();
        grads[root.0] = Some(seed);
        for id in (0..=root.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(upstream) = grads[id].take() else {
                continue;
            };
            for (parent, g) in self.local_grads(id, &upstream)? {
                if !self.nodes[parent.0].requires_grad {
                    continue;
                }
                match &mut grads[parent.0] {
                    Some(acc) => *acc = ops::add(acc, &g)?,
                    slot => *slot = Some(g),
                }
            }
        }
        Ok(Gradients { grads })
    }

    /// Re-arms a tape for another backward pass.
    pub fn reset_backward(&mut self) {
        self.consumed = false;
    }

    fn local_grads(&self, id: usize, gy: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let rg = |v: Var| self.nodes[v.0].requires_grad;
        let node = &self.nodes[id];
        let out = match &node.op {
            Op::Leaf => Vec::new(),
            Op::Conv3d {
                input,
                weight,
                bias,
                stride,
                padding,
            } => {
                let need = [rg(*input), rg(*weight), bias.is_some_and(rg)];
                let g = ops::conv3d_backward(
                    self.value(*input),
                    self.value(*weight),
                    gy,
                    *stride,
                    *padding,
                    need,
                )?;
                let mut v = Vec::new();
                if let Some(gi) = g.input {
                    v.push((*input, gi));
                }
                if let Some(gw) = g.weight {
                    v.push((*weight, gw));
                }
                if let (Some(b), Some(gb)) = (bias, g.bias) {
                    v.push((*b, gb));
                }
                v
            }
            Op::InstanceNorm {
                input,
                gamma,
                beta,
                cache,
                detach_stats,
            } => {
                let g = ops::instance_norm3d_backward(
                    cache,
                    node.value.shape(),
                    self.value(*gamma),
                    gy,
                    *detach_stats,
                )?;
                vec![(*input, g.input), (*gamma, g.gamma), (*beta, g.beta)]
            }
            Op::Relu(input) => {
                let x = self.value(*input);
                let data = x
                    .data()
                    .iter()
                    .zip(gy.data())
                    .map(|(&xv, &g)| if xv > T::zero() { g } else { T::zero() })
                    .collect();
                vec![(*input, Tensor::from_parts_unchecked(x.shape().to_vec(), data))]
            }
            Op::Add(a, b) => vec![(*a, gy.clone()), (*b, gy.clone())],
            Op::Linear {
                input,
                weight,
                bias,
            } => {
                let (gx, gw, gb) = ops::basic::linear_backward(
                    self.value(*input),
                    self.value(*weight),
                    self.value(*bias),
                    gy,
                )?;
                vec![(*input, gx), (*weight, gw), (*bias, gb)]
            }
            Op::GlobalAvgPool(input) => {
                let x = self.value(*input);
                let m: usize = x.shape()[2..].iter().product();
                let inv = T::one() / T::from_usize(m);
                let mut data = Vec::with_capacity(x.len());
                for &g in gy.data() {
                    data.extend(std::iter::repeat_n(g * inv, m));
                }
                vec![(*input, Tensor::from_parts_unchecked(x.shape().to_vec(), data))]
            }
            Op::WeightedSum { input, weights } => {
                let g = gy.data()[0];
                vec![(*input, weights.map(|w| w * g))]
            }
            Op::Sum(input) => {
                let g = gy.data()[0];
                vec![(*input, Tensor::full(self.value(*input).shape().to_vec(), g))]
            }
            Op::SoftmaxCrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let k = probs.shape()[1];
                let scale = gy.data()[0] / T::from_usize(labels.len());
                let mut data = probs.data().to_vec();
                for (row, &label) in data.chunks_exact_mut(k).zip(labels) {
                    row[label] = row[label] - T::one();
                    for v in row.iter_mut() {
                        *v = *v * scale;
                    }
                }
                vec![(*logits, Tensor::from_parts_unchecked(probs.shape().to_vec(), data))]
            }
            Op::Mse { pred, target } => {
                let p = self.value(*pred);
                let t = self.value(*target);
                let scale = T::from_f64(2.0) * gy.data()[0] / T::from_usize(p.len());
                let gp: Vec<T> = p
                    .data()
                    .iter()
                    .zip(t.data())
                    .map(|(&a, &b)| (a - b) * scale)
                    .collect();
                let gt = gp.iter().map(|&v| -v).collect();
                vec![
                    (*pred, Tensor::from_parts_unchecked(p.shape().to_vec(), gp)),
                    (*target, Tensor::from_parts_unchecked(t.shape().to_vec(), gt)),
                ]
            }
        };
        Ok(out)
    }
}
