//! Tape-based reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so every node's inputs have a
//! smaller index than the node itself; iterating the tape backwards is a
//! valid reverse topological order and the graph cannot contain cycles.

use std::sync::Arc;

use super::kernels::{self, ConvGeometry, UpGeometry};
use super::norm::{self, BatchNormStats, BatchStats, Mode};
use super::{Real, Tensor, TensorError};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d { input: Var, weight: Var, bias: Var, geom: ConvGeometry },
    ConvTranspose2d { input: Var, weight: Var, bias: Var, geom: UpGeometry },
    MaxPool2x2 { input: Var, argmax: Vec<usize> },
    BatchNorm { input: Var, gamma: Var, beta: Var, normalized: Tensor<T>, inv_std: Vec<T>, batch_stats: bool },
    Relu { input: Var },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { input: Var, factor: T },
    Sum { input: Var },
    ConcatChannels { a: Var, b: Var, split: usize },
    SoftmaxChannels { input: Var },
    CrossEntropy { logits: Var, labels: Arc<Tensor<u8>>, probs: Tensor<T> },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::ConvTranspose2d { .. } => "conv_transpose2d",
            Op::MaxPool2x2 { .. } => "maxpool2x2",
            Op::BatchNorm { .. } => "batchnorm2d",
            Op::Relu { .. } => "relu",
            Op::Add { .. } => "add",
            Op::Mul { .. } => "mul",
            Op::Scale { .. } => "scale",
            Op::Sum { .. } => "sum",
            Op::ConcatChannels { .. } => "concat_channels",
            Op::SoftmaxChannels { .. } => "softmax_channels",
            Op::CrossEntropy { .. } => "cross_entropy",
        }
    }
}

#[derive(Debug)]
struct Node<T> {
    value: Arc<Tensor<T>>,
    grad: Option<Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

/// A recorded computation. Values are immutable once recorded.
#[derive(Debug)]
pub struct Graph<T: Real = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf whose gradient is tracked.
    pub fn param(&mut self, value: Arc<Tensor<T>>) -> Var {
        self.leaf(value, true)
    }

    /// Records a constant leaf (no gradient).
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.leaf(Arc::new(value), false)
    }

    pub fn leaf(&mut self, value: Arc<Tensor<T>>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, grad: None, op: Op::Leaf, requires_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Shared handle to a node's value; leaves return the exact storage they
    /// were recorded with.
    pub fn value_arc(&self, v: Var) -> &Arc<Tensor<T>> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    /// Gradient of `v`, or zeros of the right shape when none has flowed.
    pub fn grad_or_zeros(&self, v: Var) -> Tensor<T> {
        self.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(self.value(v).shape()))
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor<T>> {
        self.nodes[v.0].grad.take()
    }

    /// Resets every stored gradient.
    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value: Arc::new(value), grad: None, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), TensorError> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(TensorError::Shape { op, detail: format!("{sa:?} vs {sb:?}") });
        }
        Ok(())
    }

    /// Cross-correlation of `input [n, c_in, h, w]` with `weight [c_out, c_in, kh, kw]` plus bias.
    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        pad: usize,
    ) -> Result<Var, TensorError> {
        let (x, w, b) = (self.value(input), self.value(weight), self.value(bias));
        let geom = kernels::conv_geometry(x, w, b, stride, pad)?;
        let out = kernels::conv2d_forward(&geom, x, w, b);
        Ok(self.push(out, Op::Conv2d { input, weight, bias, geom }, &[input, weight, bias]))
    }

    /// 2x2, stride-2 transpose convolution; weight is `[c_out, c_in, 2, 2]`.
    pub fn conv_transpose2d(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var, TensorError> {
        let (x, w, b) = (self.value(input), self.value(weight), self.value(bias));
        let geom = kernels::up_geometry(x, w, b)?;
        let out = kernels::conv_transpose2d_forward(&geom, x, w, b);
        Ok(self.push(out, Op::ConvTranspose2d { input, weight, bias, geom }, &[input, weight, bias]))
    }

    pub fn maxpool2x2(&mut self, input: Var) -> Result<Var, TensorError> {
        let (out, argmax) = kernels::maxpool2x2_forward(self.value(input))?;
        Ok(self.push(out, Op::MaxPool2x2 { input, argmax }, &[input]))
    }

    /// Per-channel batch normalization.
    ///
    /// In [`Mode::Train`] the batch statistics are used and returned so the
    /// caller can fold them into `stats`; in [`Mode::Eval`] the running
    /// statistics are used and `None` is returned.
    pub fn batchnorm2d(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        stats: &BatchNormStats<T>,
        mode: Mode,
    ) -> Result<(Var, Option<BatchStats<T>>), TensorError> {
        let fwd = norm::forward(self.value(input), self.value(gamma), self.value(beta), stats, mode)?;
        let var = self.push(
            fwd.output,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                normalized: fwd.normalized,
                inv_std: fwd.inv_std,
                batch_stats: mode == Mode::Train,
            },
            &[input, gamma, beta],
        );
        Ok((var, fwd.batch))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let out = self.value(input).map(|v| if v > T::zero() { v } else { T::zero() });
        self.push(out, Op::Relu { input }, &[input])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("add", a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| x + y).collect();
        let out = Tensor::new(ta.shape(), data)?;
        Ok(self.push(out, Op::Add { a, b }, &[a, b]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("mul", a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| x * y).collect();
        let out = Tensor::new(ta.shape(), data)?;
        Ok(self.push(out, Op::Mul { a, b }, &[a, b]))
    }

    pub fn scale(&mut self, input: Var, factor: T) -> Var {
        let out = self.value(input).map(|v| v * factor);
        self.push(out, Op::Scale { input, factor }, &[input])
    }

    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum(&mut self, input: Var) -> Var {
        let out = Tensor::scalar(self.value(input).sum());
        self.push(out, Op::Sum { input }, &[input])
    }

    /// Concatenates along the channel axis, `a` first.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let [n, c1, h, w] = self.value(a).dims4("concat_channels")?;
        let [n2, c2, h2, w2] = self.value(b).dims4("concat_channels")?;
        if (n, h, w) != (n2, h2, w2) {
            return Err(TensorError::Shape {
                op: "concat_channels",
                detail: format!(
                    "{:?} vs {:?}: batch and spatial dims must match",
                    self.value(a).shape(),
                    self.value(b).shape()
                ),
            });
        }
        let plane = h * w;
        let mut data = Vec::with_capacity(n * (c1 + c2) * plane);
        let (da, db) = (self.value(a).data(), self.value(b).data());
        for s in 0..n {
            data.extend_from_slice(&da[s * c1 * plane..(s + 1) * c1 * plane]);
            data.extend_from_slice(&db[s * c2 * plane..(s + 1) * c2 * plane]);
        }
        let out = Tensor::new(&[n, c1 + c2, h, w], data)?;
        Ok(self.push(out, Op::ConcatChannels { a, b, split: c1 }, &[a, b]))
    }

    /// Per-pixel softmax over the channel axis.
    pub fn softmax_channels(&mut self, input: Var) -> Result<Var, TensorError> {
        let out = norm::softmax_channels(self.value(input))?;
        Ok(self.push(out, Op::SoftmaxChannels { input }, &[input]))
    }

    /// Mean over all pixels of `-log softmax(logits)[label]`.
    pub fn cross_entropy(&mut self, logits: Var, labels: Arc<Tensor<u8>>) -> Result<Var, TensorError> {
        let (loss, probs) = norm::cross_entropy(self.value(logits), &labels)?;
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropy { logits, labels, probs }, &[logits]))
    }

    /// Propagates d(loss)/d(node) to every reachable node that requires a
    /// gradient and adds the result into the stored leaf gradients. Repeated
    /// calls accumulate; use [`Graph::zero_grad`] to reset.
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(TensorError::Shape {
                op: "backward",
                detail: format!("loss must be a scalar, got shape {:?}", lv.shape()),
            });
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lv.shape(), T::one()));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            if matches!(self.nodes[idx].op, Op::Leaf) {
                let node = &mut self.nodes[idx];
                match node.grad.as_mut() {
                    Some(acc) => acc.add_assign(&g),
                    None => node.grad = Some(g),
                }
                continue;
            }
            for (var, contrib) in self.local_grads(idx, &g) {
                if !self.nodes[var.0].requires_grad {
                    continue;
                }
                match grads[var.0].as_mut() {
                    Some(acc) => acc.add_assign(&contrib),
                    None => grads[var.0] = Some(contrib),
                }
            }
        }
        Ok(())
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Vector-Jacobian products of node `idx` for upstream gradient `g`.
    fn local_grads(&self, idx: usize, g: &Tensor<T>) -> Vec<(Var, Tensor<T>)> {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => Vec::new(),
            Op::Conv2d { input, weight, bias, geom } => {
                let grads =
                    kernels::conv2d_backward(geom, self.value(*input), self.value(*weight), g, self.needs(*input));
                let mut out = vec![(*weight, grads.weight), (*bias, grads.bias)];
                out.extend(grads.input.map(|dx| (*input, dx)));
                out
            }
            Op::ConvTranspose2d { input, weight, bias, geom } => {
                let grads = kernels::conv_transpose2d_backward(
                    geom,
                    self.value(*input),
                    self.value(*weight),
                    g,
                    self.needs(*input),
                );
                let mut out = vec![(*weight, grads.weight), (*bias, grads.bias)];
                out.extend(grads.input.map(|dx| (*input, dx)));
                out
            }
            Op::MaxPool2x2 { input, argmax } => {
                let dx = kernels::maxpool2x2_backward(self.value(*input).shape(), argmax, g);
                vec![(*input, dx)]
            }
            Op::BatchNorm { input, gamma, beta, normalized, inv_std, batch_stats } => {
                let grads = norm::backward(normalized, inv_std, self.value(*gamma), g, *batch_stats);
                vec![(*input, grads.input), (*gamma, grads.gamma), (*beta, grads.beta)]
            }
            Op::Relu { input } => {
                let out = &node.value;
                let data =
                    out.data().iter().zip(g.data()).map(|(&y, &d)| if y > T::zero() { d } else { T::zero() }).collect();
                vec![(*input, Tensor::new(out.shape(), data).expect("relu grad"))]
            }
            Op::Add { a, b } => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Mul { a, b } => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let da = Tensor::new(ta.shape(), g.data().iter().zip(tb.data()).map(|(&d, &y)| d * y).collect())
                    .expect("mul grad");
                let db = Tensor::new(tb.shape(), g.data().iter().zip(ta.data()).map(|(&d, &x)| d * x).collect())
                    .expect("mul grad");
                vec![(*a, da), (*b, db)]
            }
            Op::Scale { input, factor } => vec![(*input, g.map(|d| d * *factor))],
            Op::Sum { input } => {
                let d = g.data()[0];
                vec![(*input, Tensor::full(self.value(*input).shape(), d))]
            }
            Op::ConcatChannels { a, b, split } => {
                let [n, c, h, w] = node.value.dims4("concat_channels").expect("rank 4");
                let plane = h * w;
                let (c1, c2) = (*split, c - *split);
                let mut da = Vec::with_capacity(n * c1 * plane);
                let mut db = Vec::with_capacity(n * c2 * plane);
                for s in 0..n {
                    let base = s * c * plane;
                    da.extend_from_slice(&g.data()[base..base + c1 * plane]);
                    db.extend_from_slice(&g.data()[base + c1 * plane..base + c * plane]);
                }
                vec![
                    (*a, Tensor::new(&[n, c1, h, w], da).expect("concat grad")),
                    (*b, Tensor::new(&[n, c2, h, w], db).expect("concat grad")),
                ]
            }
            Op::SoftmaxChannels { input } => {
                vec![(*input, norm::softmax_channels_backward(&node.value, g))]
            }
            Op::CrossEntropy { logits, labels, probs } => {
                vec![(*logits, norm::cross_entropy_backward(probs, labels, g.data()[0]))]
            }
        }
    }

    /// Name of the op that produced `v`.
    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.name()
    }

    /// The branch taken by every non-smooth op: ReLU input signs and
    /// max-pool winners, in recording order. Two evaluations with equal
    /// patterns lie on the same smooth piece of the function.
    pub fn piecewise_pattern(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for n in &self.nodes {
            match &n.op {
                Op::Relu { input } => {
                    out.extend(self.value(*input).data().iter().map(|&v| (v > T::zero()) as usize));
                }
                Op::MaxPool2x2 { argmax, .. } => out.extend_from_slice(argmax),
                _ => {}
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Arc::new(Tensor::from_fn(&[2, 3], |i| i as f64)));
        let s = g.sum(x);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[1.0; 6]);
    }

    #[test]
    fn square_sum_gradient_is_two_x() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Arc::new(Tensor::from_fn(&[4], |i| i as f64 - 1.5)));
        let sq = g.mul(x, x).unwrap();
        let s = g.sum(sq);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[-3.0, -1.0, 1.0, 3.0]);
    }

    #[test]
    fn backward_twice_accumulates_and_reset_clears() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Arc::new(Tensor::ones(&[3])));
        let s = g.sum(x);
        g.backward(s).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[2.0; 3]);
        g.zero_grad();
        assert!(g.grad(x).is_none());
        assert_eq!(g.grad_or_zeros(x).data(), &[0.0; 3]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Arc::new(Tensor::ones(&[3])));
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::ones(&[2]));
        let w = g.param(Arc::new(Tensor::full(&[2], 3.0)));
        let p = g.mul(x, w).unwrap();
        let s = g.sum(p);
        g.backward(s).unwrap();
        assert!(g.grad(x).is_none());
        assert_eq!(g.grad(w).unwrap().data(), &[1.0, 1.0]);
    }

    #[test]
    fn relu_examples() {
        let mut g = Graph::<f32>::new();
        let x = g.input(Tensor::new(&[3], vec![-1.0, 0.0, 2.0]).unwrap());
        let y = g.relu(x);
        assert_eq!(g.value(y).data(), &[0.0, 0.0, 2.0]);
        let yy = g.relu(y);
        assert_eq!(g.value(yy), g.value(y));
    }

    #[test]
    fn relu_gradient_at_zero_is_zero() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Arc::new(Tensor::new(&[3], vec![-1.0, 0.0, 2.0]).unwrap()));
        let y = g.relu(x);
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn add_laws() {
        let mut g = Graph::<f32>::new();
        let a = g.input(Tensor::from_fn(&[2, 2], |i| i as f32 * 0.3 - 0.4));
        let b = g.input(Tensor::from_fn(&[2, 2], |i| 1.0 / (1.0 + i as f32)));
        let z = g.input(Tensor::zeros(&[2, 2]));
        let az = g.add(a, z).unwrap();
        assert_eq!(g.value(az), g.value(a));
        let ab = g.add(a, b).unwrap();
        let ba = g.add(b, a).unwrap();
        assert_eq!(g.value(ab), g.value(ba));
        let aa = g.add(a, a).unwrap();
        let twice = g.scale(a, 2.0);
        assert_eq!(g.value(aa), g.value(twice));
        let bad = g.input(Tensor::zeros(&[4]));
        assert!(g.add(a, bad).is_err());
    }

    #[test]
    fn concat_then_slice_recovers_first_input() {
        let mut g = Graph::<f32>::new();
        let a = g.input(Tensor::from_fn(&[2, 1, 2, 2], |i| i as f32));
        let b = g.input(Tensor::from_fn(&[2, 1, 2, 2], |i| -(i as f32)));
        let c = g.concat_channels(a, b).unwrap();
        let out = g.value(c);
        assert_eq!(out.shape(), &[2, 2, 2, 2]);
        for s in 0..2 {
            for p in 0..4 {
                assert_eq!(out.data()[s * 8 + p], g.value(a).data()[s * 4 + p]);
            }
        }
        let mismatched = g.input(Tensor::zeros(&[2, 1, 4, 4]));
        assert!(g.concat_channels(a, mismatched).is_err());
    }
}
