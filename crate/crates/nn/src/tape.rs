//! Reverse-mode differentiation tape.
//!
//! Operations append nodes in creation order, which is already a topological
//! order: a node's inputs always precede it. [`Tape::backward`] walks the
//! nodes once in reverse.

use crate::error::{NnError, Result};
use crate::kernels::conv::{self, ConvGeom};
use crate::kernels::pool;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
    },
    Deconv2d {
        input: Var,
        weight: Var,
        bias: Var,
    },
    MaxPool2 {
        input: Var,
        argmax: Vec<u32>,
    },
    Unpool2 {
        input: Var,
    },
    Relu {
        input: Var,
    },
    Linear {
        input: Var,
        weight: Var,
        bias: Var,
    },
    Reshape {
        input: Var,
    },
    SoftmaxXent {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
    L2Recon {
        output: Var,
        target: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Scale {
        input: Var,
        factor: T,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros of `shape` when `v` did not influence the loss.
    pub fn take_or_zeros(&mut self, v: Var, shape: &[usize]) -> Tensor<T> {
        self.grads
            .get_mut(v.0)
            .and_then(Option::take)
            .unwrap_or_else(|| Tensor::zeros(shape))
    }
}

fn expect_rank<T: Scalar>(op: &'static str, t: &Tensor<T>, rank: usize) -> Result<()> {
    if t.shape().len() != rank {
        return Err(NnError::ShapeMismatch {
            op,
            expected: vec![0; rank],
            got: t.shape().to_vec(),
        });
    }
    Ok(())
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf whose gradient is tracked (a trainable parameter).
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf treated as a constant (input data, targets).
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Flat input offset of each window maximum, if `v` is a max-pooling node.
    pub fn pool_indices(&self, v: Var) -> Option<&[u32]> {
        match &self.nodes[v.0].op {
            Op::MaxPool2 { argmax, .. } => Some(argmax),
            _ => None,
        }
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Validates a (de)convolution and returns (batch, input geometry, output channels).
    fn conv_shapes(
        &self,
        op: &'static str,
        input: Var,
        weight: Var,
        bias: Var,
        transposed: bool,
    ) -> Result<(usize, ConvGeom, usize)> {
        let (x, w, b) = (self.value(input), self.value(weight), self.value(bias));
        expect_rank(op, x, 4)?;
        expect_rank(op, w, 4)?;
        let (n, cin, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (w0, w1, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
        if kh != kw || kh % 2 == 0 {
            return Err(NnError::ShapeMismatch {
                op,
                expected: vec![w0, w1, kh, kh],
                got: w.shape().to_vec(),
            });
        }
        // conv weights are out×in×k×k, deconv weights in×out×k×k
        let (w_in, cout) = if transposed { (w0, w1) } else { (w1, w0) };
        if w_in != cin {
            return Err(NnError::ChannelMismatch {
                op,
                input: cin,
                weights: w_in,
            });
        }
        if b.shape() != [cout] {
            return Err(NnError::ShapeMismatch {
                op,
                expected: vec![cout],
                got: b.shape().to_vec(),
            });
        }
        let geom = ConvGeom {
            channels: cin,
            height: h,
            width: wd,
            kernel: kh,
        };
        Ok((n, geom, cout))
    }

    fn conv_forward(&mut self, input: Var, weight: Var, bias: Var, transposed: bool) -> Result<Var> {
        let op = if transposed { "deconv2d" } else { "conv2d" };
        let (n, g, cout) = self.conv_shapes(op, input, weight, bias, transposed)?;
        let (x, w, b) = (self.value(input), self.value(weight), self.value(bias));
        let kernel = if transposed {
            conv::Kernel::Flipped(w.data())
        } else {
            conv::Kernel::Direct(w.data())
        };
        let mut plan = conv::ConvPlan::new(g, cout, kernel);
        let plane = g.plane();
        let mut out = Tensor::zeros(&[n, cout, g.height, g.width]);
        let in_stride = g.channels * plane;
        for (s, o) in out.data_mut().chunks_exact_mut(cout * plane).enumerate() {
            plan.run(&x.data()[s * in_stride..(s + 1) * in_stride], o);
            conv::add_bias(o, b.data(), plane);
        }
        let rg = self.rg(input) || self.rg(weight) || self.rg(bias);
        let op = if transposed {
            Op::Deconv2d { input, weight, bias }
        } else {
            Op::Conv2d { input, weight, bias }
        };
        Ok(self.push(out, op, rg))
    }

    /// Stride-1 cross-correlation with zero "same" padding.
    /// `input` is `N×C_in×H×W`, `weight` is `C_out×C_in×K×K`, `bias` is `C_out`.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        self.conv_forward(input, weight, bias, false)
    }

    /// Transpose of [`Tape::conv2d`]'s linear map (stride 1, same padding).
    /// `input` is `N×C_in×H×W`, `weight` is `C_in×C_out×K×K`, `bias` is `C_out`.
    pub fn deconv2d(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        self.conv_forward(input, weight, bias, true)
    }

    /// 2×2 max pooling with stride 2.
    pub fn maxpool2(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        expect_rank("maxpool2", x, 4)?;
        let [n, c, h, w] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
        if h % 2 != 0 || w % 2 != 0 {
            return Err(NnError::OddSpatial { height: h, width: w });
        }
        let mut out = Tensor::zeros(&[n, c, h / 2, w / 2]);
        let mut argmax = vec![0u32; out.len()];
        pool::maxpool2_forward(x.data(), n * c, h, w, out.data_mut(), &mut argmax);
        let rg = self.rg(input);
        Ok(self.push(out, Op::MaxPool2 { input, argmax }, rg))
    }

    /// Nearest-neighbour ×2 un-pooling.
    pub fn unpool2(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        expect_rank("unpool2", x, 4)?;
        let [n, c, h, w] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
        let mut out = Tensor::zeros(&[n, c, 2 * h, 2 * w]);
        pool::unpool2_forward(x.data(), n * c, h, w, out.data_mut());
        let rg = self.rg(input);
        Ok(self.push(out, Op::Unpool2 { input }, rg))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let out = self.value(input).map(|v| if v > T::zero() { v } else { T::zero() });
        let rg = self.rg(input);
        self.push(out, Op::Relu { input }, rg)
    }

    /// Affine map `x·W + b` with `x: N×D_in`, `W: D_in×D_out`, `b: D_out`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (x, w, b) = (self.value(input), self.value(weight), self.value(bias));
        expect_rank("linear", x, 2)?;
        expect_rank("linear", w, 2)?;
        let (n, din) = (x.shape()[0], x.shape()[1]);
        let dout = w.shape()[1];
        if w.shape()[0] != din || b.shape() != [dout] {
            return Err(NnError::ShapeMismatch {
                op: "linear",
                expected: vec![din, dout],
                got: w.shape().to_vec(),
            });
        }
        let mut data = Vec::with_capacity(n * dout);
        for _ in 0..n {
            data.extend_from_slice(b.data());
        }
        T::gemm(
            n,
            din,
            dout,
            x.data(),
            (din as isize, 1),
            w.data(),
            (dout as isize, 1),
            T::one(),
            &mut data,
            (dout as isize, 1),
        );
        let out = Tensor::from_vec(&[n, dout], data)?;
        let rg = self.rg(input) || self.rg(weight) || self.rg(bias);
        Ok(self.push(out, Op::Linear { input, weight, bias }, rg))
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(input).clone().reshape(shape)?;
        let rg = self.rg(input);
        Ok(self.push(out, Op::Reshape { input }, rg))
    }

    /// Mean softmax cross-entropy of `N×C` logits against class indices.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let z = self.value(logits);
        expect_rank("softmax_cross_entropy", z, 2)?;
        let (n, c) = (z.shape()[0], z.shape()[1]);
        if labels.len() != n {
            return Err(NnError::ShapeMismatch {
                op: "softmax_cross_entropy",
                expected: vec![n],
                got: vec![labels.len()],
            });
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= c) {
            return Err(NnError::LabelOutOfRange { label, classes: c });
        }
        let mut probs = vec![T::zero(); n * c];
        let mut total = T::zero();
        for (i, (row, p)) in z.data().chunks_exact(c).zip(probs.chunks_exact_mut(c)).enumerate() {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            for (pj, &zj) in p.iter_mut().zip(row) {
                *pj = (zj - max).exp();
                sum += *pj;
            }
            for pj in p.iter_mut() {
                *pj = *pj / sum;
            }
            // -log softmax = log(sum) - (z_label - max)
            total += sum.ln() - (row[labels[i]] - max);
        }
        let loss = total / T::from_usize(n).unwrap();
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxXent {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Mean over the batch of ‖output − target‖² divided by the per-sample
    /// element count, i.e. the mean squared error over all elements.
    pub fn l2_reconstruction(&mut self, output: Var, target: Var) -> Result<Var> {
        let (o, t) = (self.value(output), self.value(target));
        if o.shape() != t.shape() {
            return Err(NnError::ShapeMismatch {
                op: "l2_reconstruction",
                expected: t.shape().to_vec(),
                got: o.shape().to_vec(),
            });
        }
        let sum: T = o.data().iter().zip(t.data()).map(|(&a, &b)| (a - b) * (a - b)).sum();
        let loss = sum / T::from_usize(o.len().max(1)).unwrap();
        let rg = self.rg(output) || self.rg(target);
        Ok(self.push(Tensor::scalar(loss), Op::L2Recon { output, target }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(NnError::ShapeMismatch {
                op: "add",
                expected: x.shape().to_vec(),
                got: y.shape().to_vec(),
            });
        }
        let mut out = x.clone();
        out.add_assign(y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add { a, b }, rg))
    }

    pub fn scale(&mut self, input: Var, factor: T) -> Var {
        let out = self.value(input).map(|v| v * factor);
        let rg = self.rg(input);
        self.push(out, Op::Scale { input, factor }, rg)
    }

    /// Back-propagates from the scalar node `loss`. Every node that
    /// influences `loss` and requires a gradient is visited exactly once.
    pub fn backward(&self, loss: Var) -> Gradients<T> {
        assert_eq!(self.value(loss).len(), 1, "backward needs a scalar loss");
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), T::one()));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if self.nodes[idx].requires_grad {
                self.propagate(idx, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, idx: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { input, weight, bias } => self.conv_backward(*input, *weight, *bias, g, grads, false),
            Op::Deconv2d { input, weight, bias } => self.conv_backward(*input, *weight, *bias, g, grads, true),
            Op::MaxPool2 { input, argmax } => {
                let mut gi = Tensor::zeros(self.value(*input).shape());
                let d = gi.data_mut();
                for (&a, &gv) in argmax.iter().zip(g.data()) {
                    d[a as usize] += gv;
                }
                self.accumulate(grads, *input, gi);
            }
            Op::Unpool2 { input } => {
                let x = self.value(*input);
                let s = x.shape();
                let mut gi = Tensor::zeros(s);
                pool::unpool2_backward(g.data(), s[0] * s[1], s[2], s[3], gi.data_mut());
                self.accumulate(grads, *input, gi);
            }
            Op::Relu { input } => {
                let x = self.value(*input);
                let mut gi = g.clone();
                for (gv, &xv) in gi.data_mut().iter_mut().zip(x.data()) {
                    if xv <= T::zero() {
                        *gv = T::zero();
                    }
                }
                self.accumulate(grads, *input, gi);
            }
            Op::Linear { input, weight, bias } => {
                let (x, w) = (self.value(*input), self.value(*weight));
                let (n, din, dout) = (x.shape()[0], x.shape()[1], w.shape()[1]);
                if self.rg(*weight) {
                    let mut gw = Tensor::zeros(w.shape());
                    // xᵀ · g
                    T::gemm(
                        din,
                        n,
                        dout,
                        x.data(),
                        (1, din as isize),
                        g.data(),
                        (dout as isize, 1),
                        T::zero(),
                        gw.data_mut(),
                        (dout as isize, 1),
                    );
                    self.accumulate(grads, *weight, gw);
                }
                if self.rg(*bias) {
                    let mut gb = Tensor::zeros(&[dout]);
                    for row in g.data().chunks_exact(dout) {
                        for (b, &v) in gb.data_mut().iter_mut().zip(row) {
                            *b += v;
                        }
                    }
                    self.accumulate(grads, *bias, gb);
                }
                if self.rg(*input) {
                    let mut gi = Tensor::zeros(x.shape());
                    // g · Wᵀ
                    T::gemm(
                        n,
                        dout,
                        din,
                        g.data(),
                        (dout as isize, 1),
                        w.data(),
                        (1, dout as isize),
                        T::zero(),
                        gi.data_mut(),
                        (din as isize, 1),
                    );
                    self.accumulate(grads, *input, gi);
                }
            }
            Op::Reshape { input } => {
                let shape = self.value(*input).shape().to_vec();
                let gi = g.clone().reshape(&shape).expect("reshape preserves length");
                self.accumulate(grads, *input, gi);
            }
            Op::SoftmaxXent { logits, labels, probs } => {
                let shape = self.value(*logits).shape();
                let (n, c) = (shape[0], shape[1]);
                let scale = g.item() / T::from_usize(n).unwrap();
                let mut gi = probs.clone();
                for (i, &l) in labels.iter().enumerate() {
                    gi[i * c + l] -= T::one();
                }
                for v in gi.iter_mut() {
                    *v *= scale;
                }
                self.accumulate(grads, *logits, Tensor::from_vec(shape, gi).unwrap());
            }
            Op::L2Recon { output, target } => {
                let (o, t) = (self.value(*output), self.value(*target));
                let scale = T::lit(2.0) * g.item() / T::from_usize(o.len().max(1)).unwrap();
                let diff: Vec<T> = o.data().iter().zip(t.data()).map(|(&a, &b)| (a - b) * scale).collect();
                let go = Tensor::from_vec(o.shape(), diff).unwrap();
                if self.rg(*target) {
                    self.accumulate(grads, *target, go.map(|v| -v));
                }
                self.accumulate(grads, *output, go);
            }
            Op::Add { a, b } => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Scale { input, factor } => {
                let f = *factor;
                self.accumulate(grads, *input, g.map(|v| v * f));
            }
        }
    }

    fn conv_backward(
        &self,
        input: Var,
        weight: Var,
        bias: Var,
        g: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
        transposed: bool,
    ) {
        let op = if transposed { "deconv2d" } else { "conv2d" };
        let (n, geom, cout) = self
            .conv_shapes(op, input, weight, bias, transposed)
            .expect("shapes validated in forward");
        let (x, w) = (self.value(input), self.value(weight));
        let (cin, plane) = (geom.channels, geom.plane());
        let out_geom = geom.with_channels(cout);

        if self.rg(bias) {
            let mut gb = Tensor::zeros(&[cout]);
            for gs in g.data().chunks_exact(cout * plane) {
                conv::bias_grad(gs, gb.data_mut(), plane);
            }
            self.accumulate(grads, bias, gb);
        }
        if self.rg(weight) {
            // deconv weights are stored in the flipped layout of their effective kernel
            let gw = conv::kernel_grad(geom, cout, n, x.data(), g.data(), transposed);
            self.accumulate(grads, weight, Tensor::from_vec(w.shape(), gw).unwrap());
        }
        if self.rg(input) {
            // conv: dX = conv(dOut, flip(W)); deconv: dX = conv(dOut, W)
            let kernel = if transposed {
                conv::Kernel::Direct(w.data())
            } else {
                conv::Kernel::Flipped(w.data())
            };
            let mut plan = conv::ConvPlan::new(out_geom, cin, kernel);
            let mut gi = Tensor::zeros(x.shape());
            for (s, gis) in gi.data_mut().chunks_exact_mut(cin * plane).enumerate() {
                plan.run(&g.data()[s * cout * plane..(s + 1) * cout * plane], gis);
            }
            self.accumulate(grads, input, gi);
        }
    }
}
