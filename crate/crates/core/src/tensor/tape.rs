use super::kernels;
use super::{lit, Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Conv2d { input: Var, weight: Var, bias: Var },
    MaxPool { input: Var, argmax: Vec<usize> },
    Relu(Var),
    BatchNorm { input: Var, gamma: Var, beta: Var, normalized: Vec<T>, inv_std: Vec<T>, batch_stats: bool },
    Linear { input: Var, weight: Var, bias: Var },
    Reshape(Var),
    SliceRows { input: Var, start: usize },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Square(Var),
    SumLast(Var),
    Sum(Var),
    Mean(Var),
    AddScalar(Var),
    Scale(Var, T),
    ScalarAffine { x: Var, w: Var, b: Var },
    SigmoidBce { logits: Var, targets: Vec<T> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    grad: Option<Tensor<T>>,
}

/// Batch-norm statistics returned by a training-mode forward pass.
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
    pub count: usize,
}

/// Wengert list of primitive operations. Nodes are appended in execution
/// order, so inputs always precede the nodes that consume them.
pub struct Tape<T = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad, grad: None });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf; its gradient accumulates across `backward` calls.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: true, grad: None });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: false, grad: None });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Accumulated gradient of a trainable leaf, if `backward` reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn same_shape(&self, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::shape(format!("elementwise op on {sa:?} and {sb:?}")));
        }
        Ok(())
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let out = kernels::conv2d(self.value(input), self.value(weight), self.value(bias))?;
        Ok(self.push(out, Op::Conv2d { input, weight, bias }, &[input, weight, bias]))
    }

    pub fn maxpool2d_ceil(&mut self, input: Var) -> Result<Var> {
        let (out, argmax) = kernels::maxpool2d_ceil(self.value(input))?;
        Ok(self.push(out, Op::MaxPool { input, argmax }, &[input]))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let out = kernels::relu(self.value(input));
        self.push(out, Op::Relu(input), &[input])
    }

    /// Training-mode batch norm: normalizes by batch statistics and returns
    /// them so the caller can update its running averages.
    pub fn batchnorm_train(&mut self, input: Var, gamma: Var, beta: Var) -> Result<(Var, BatchStats<T>)> {
        let bn = kernels::batchnorm_train(self.value(input), self.value(gamma), self.value(beta))?;
        let shape = self.value(input).shape();
        let count = shape[0] * shape[2..].iter().product::<usize>();
        let stats = BatchStats { mean: bn.mean, var: bn.var, count };
        let op = Op::BatchNorm {
            input,
            gamma,
            beta,
            normalized: bn.normalized,
            inv_std: bn.inv_std,
            batch_stats: true,
        };
        Ok((self.push(bn.output, op, &[input, gamma, beta]), stats))
    }

    /// Batch norm with fixed statistics; still differentiable in input, gamma and beta.
    pub fn batchnorm_fixed(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        mean: &Tensor<T>,
        var: &Tensor<T>,
    ) -> Result<Var> {
        let (out, normalized, inv_std) =
            kernels::batchnorm_eval(self.value(input), self.value(gamma), self.value(beta), mean, var)?;
        let op = Op::BatchNorm { input, gamma, beta, normalized, inv_std, batch_stats: false };
        Ok(self.push(out, op, &[input, gamma, beta]))
    }

    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let out = kernels::linear(self.value(input), self.value(weight), self.value(bias))?;
        Ok(self.push(out, Op::Linear { input, weight, bias }, &[input, weight, bias]))
    }

    pub fn reshape(&mut self, input: Var, shape: Vec<usize>) -> Result<Var> {
        let out = self.value(input).clone().reshape(shape)?;
        Ok(self.push(out, Op::Reshape(input), &[input]))
    }

    /// Flattens `[N, ...]` into `[N, rest]`.
    pub fn flatten(&mut self, input: Var) -> Result<Var> {
        let shape = self.value(input).shape();
        let n = shape[0];
        let rest = shape[1..].iter().product();
        self.reshape(input, vec![n, rest])
    }

    pub fn slice_rows(&mut self, input: Var, start: usize, len: usize) -> Result<Var> {
        let src = self.value(input);
        let rows = src.shape()[0];
        if len == 0 || start + len > rows {
            return Err(Error::shape(format!("rows {start}..{} out of 0..{rows}", start + len)));
        }
        let stride = src.numel() / rows;
        let mut shape = src.shape().to_vec();
        shape[0] = len;
        let out = Tensor::new(shape, src.data()[start * stride..(start + len) * stride].to_vec())?;
        Ok(self.push(out, Op::SliceRows { input, start }, &[input]))
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        self.same_shape(a, b)?;
        let (x, y) = (self.value(a), self.value(b));
        Tensor::new(x.shape().to_vec(), x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with(a, b, |p, q| p + q)?;
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with(a, b, |p, q| p - q)?;
        Ok(self.push(out, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with(a, b, |p, q| p * q)?;
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| v * v);
        self.push(out, Op::Square(a), &[a])
    }

    /// Sums over the last axis: `[.., D] -> [..]`.
    pub fn sum_last(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let shape = x.shape();
        let d = *shape.last().unwrap_or(&1);
        let out_shape = shape[..shape.len().saturating_sub(1)].to_vec();
        let data = x.data().chunks(d).map(|c| c.iter().fold(T::zero(), |s, &v| s + v)).collect();
        let out = Tensor::new(out_shape, data).expect("consistent shape");
        self.push(out, Op::SumLast(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().fold(T::zero(), |s, &v| s + v);
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let s = x.data().iter().fold(T::zero(), |s, &v| s + v) / lit::<T>(x.numel() as f64);
        self.push(Tensor::scalar(s), Op::Mean(a), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Var {
        let out = self.value(a).map(|v| v + c);
        self.push(out, Op::AddScalar(a), &[a])
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let out = self.value(a).map(|v| v * c);
        self.push(out, Op::Scale(a, c), &[a])
    }

    /// `w * x + b` with single-element `w` and `b`.
    pub fn scalar_affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        if !self.value(w).is_scalar() || !self.value(b).is_scalar() {
            return Err(Error::shape("scalar affine expects single-element weight and bias"));
        }
        let (wv, bv) = (self.value(w).item(), self.value(b).item());
        let out = self.value(x).map(|v| wv * v + bv);
        Ok(self.push(out, Op::ScalarAffine { x, w, b }, &[x, w, b]))
    }

    /// Per-element binary cross-entropy of `sigmoid(logits)` against 0/1 targets.
    pub fn sigmoid_bce(&mut self, logits: Var, targets: &[T]) -> Result<Var> {
        let z = self.value(logits);
        if z.numel() != targets.len() {
            return Err(Error::shape(format!(
                "{} logits but {} targets",
                z.numel(),
                targets.len()
            )));
        }
        let data = z
            .data()
            .iter()
            .zip(targets)
            .map(|(&z, &y)| z.max(T::zero()) - y * z + (T::one() + (-z.abs()).exp()).ln())
            .collect();
        let out = Tensor::new(z.shape().to_vec(), data)?;
        Ok(self.push(out, Op::SigmoidBce { logits, targets: targets.to_vec() }, &[logits]))
    }

    /// Smallest distance of any recorded ReLU input from zero, or of any
    /// pooling window's maximum from its runner-up. Ties among zeros of a
    /// pooled ReLU output are not kinks and are ignored.
    pub fn kink_margin(&self) -> T {
        let mut m = T::infinity();
        for n in &self.nodes {
            match &n.op {
                Op::Relu(x) => {
                    for &v in self.value(*x).data() {
                        m = m.min(v.abs());
                    }
                }
                Op::MaxPool { input, .. } => {
                    let after_relu = matches!(self.nodes[input.0].op, Op::Relu(_));
                    m = m.min(kernels::maxpool_margin(self.value(*input), after_relu));
                }
                _ => {}
            }
        }
        m
    }

    /// Reverse-mode sweep from a single-element `loss`. Gradients of trainable
    /// leaves are added to whatever earlier calls accumulated.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        let mut leaf_grads = Vec::new();

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let nodes = &self.nodes;
            let mut send = |v: Var, contrib: Vec<T>| {
                if !nodes[v.0].requires_grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.iter_mut().zip(contrib).for_each(|(a, c)| *a = *a + c),
                    slot @ None => *slot = Some(contrib),
                }
            };
            match &node.op {
                Op::Leaf => leaf_grads.push((idx, g)),
                Op::Conv2d { input, weight, bias } => {
                    let go = Tensor::new(node.value.shape().to_vec(), g)?;
                    let cg = kernels::conv2d_backward(&nodes[input.0].value, &nodes[weight.0].value, &go)?;
                    send(*input, cg.input.into_data());
                    send(*weight, cg.weight.into_data());
                    send(*bias, cg.bias.into_data());
                }
                Op::MaxPool { input, argmax } => {
                    let go = Tensor::new(node.value.shape().to_vec(), g)?;
                    let d = kernels::maxpool2d_backward(nodes[input.0].value.shape(), argmax, &go)?;
                    send(*input, d.into_data());
                }
                Op::Relu(x) => {
                    let d = nodes[x.0]
                        .value
                        .data()
                        .iter()
                        .zip(&g)
                        .map(|(&v, &gv)| if v > T::zero() { gv } else { T::zero() })
                        .collect();
                    send(*x, d);
                }
                Op::BatchNorm { input, gamma, beta, normalized, inv_std, batch_stats } => {
                    let bg = kernels::batchnorm_backward(
                        node.value.shape(),
                        normalized,
                        inv_std,
                        nodes[gamma.0].value.data(),
                        &g,
                        *batch_stats,
                    );
                    send(*input, bg.input);
                    send(*gamma, bg.gamma);
                    send(*beta, bg.beta);
                }
                Op::Linear { input, weight, bias } => {
                    let lg = kernels::linear_backward(&nodes[input.0].value, &nodes[weight.0].value, &g);
                    send(*input, lg.input);
                    send(*weight, lg.weight);
                    send(*bias, lg.bias);
                }
                Op::Reshape(x) => send(*x, g),
                Op::SliceRows { input, start } => {
                    let src = &nodes[input.0].value;
                    let stride = src.numel() / src.shape()[0];
                    let mut d = vec![T::zero(); src.numel()];
                    d[start * stride..start * stride + g.len()].copy_from_slice(&g);
                    send(*input, d);
                }
                Op::Add(a, b) => {
                    send(*a, g.clone());
                    send(*b, g);
                }
                Op::Sub(a, b) => {
                    send(*b, g.iter().map(|&v| -v).collect());
                    send(*a, g);
                }
                Op::Mul(a, b) => {
                    let (x, y) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                    send(*a, g.iter().zip(y).map(|(&gv, &yv)| gv * yv).collect());
                    send(*b, g.iter().zip(x).map(|(&gv, &xv)| gv * xv).collect());
                }
                Op::Square(a) => {
                    let two = lit::<T>(2.0);
                    let x = nodes[a.0].value.data();
                    send(*a, g.iter().zip(x).map(|(&gv, &xv)| two * xv * gv).collect());
                }
                Op::SumLast(a) => {
                    let x = &nodes[a.0].value;
                    let d = *x.shape().last().unwrap_or(&1);
                    send(*a, g.iter().flat_map(|&gv| std::iter::repeat_n(gv, d)).collect());
                }
                Op::Sum(a) => send(*a, vec![g[0]; nodes[a.0].value.numel()]),
                Op::Mean(a) => {
                    let n = nodes[a.0].value.numel();
                    send(*a, vec![g[0] / lit::<T>(n as f64); n]);
                }
                Op::AddScalar(a) => send(*a, g),
                Op::Scale(a, c) => send(*a, g.iter().map(|&v| v * *c).collect()),
                Op::ScalarAffine { x, w, b } => {
                    let xv = nodes[x.0].value.data();
                    let wv = nodes[w.0].value.item();
                    let dw = g.iter().zip(xv).fold(T::zero(), |s, (&gv, &v)| s + gv * v);
                    let db = g.iter().fold(T::zero(), |s, &gv| s + gv);
                    send(*x, g.iter().map(|&gv| gv * wv).collect());
                    send(*w, vec![dw]);
                    send(*b, vec![db]);
                }
                Op::SigmoidBce { logits, targets } => {
                    let z = nodes[logits.0].value.data();
                    let d = z
                        .iter()
                        .zip(targets)
                        .zip(&g)
                        .map(|((&zv, &y), &gv)| (sigmoid(zv) - y) * gv)
                        .collect();
                    send(*logits, d);
                }
            }
        }

        for (idx, g) in leaf_grads {
            let node = &mut self.nodes[idx];
            match &mut node.grad {
                Some(acc) => acc.data_mut().iter_mut().zip(g).for_each(|(a, v)| *a = *a + v),
                None => node.grad = Some(Tensor::new(node.value.shape().to_vec(), g)?),
            }
        }
        Ok(())
    }
}

pub fn sigmoid<T: Real>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradient_of_sum_is_ones() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::new(vec![3], vec![0.5, -2.0, 7.0]).unwrap());
        let s = tape.sum(x);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn gradient_of_sum_of_squares() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
        let sq = tape.square(x);
        let s = tape.sum(sq);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn relu_gradient_is_indicator() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::new(vec![3], vec![2.0, -1.0, 0.0]).unwrap());
        let r = tape.relu(x);
        let s = tape.sum(r);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn all_negative_relu_has_zero_output_and_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::new(vec![3], vec![-3.0, -1.0, -0.5]).unwrap());
        let r = tape.relu(x);
        assert!(tape.value(r).data().iter().all(|&v| v == 0.0));
        let s = tape.sum(r);
        tape.backward(s).unwrap();
        assert!(tape.grad(x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn non_scalar_backward_is_rejected() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::zeros(vec![2]));
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
        let sq = tape.square(x);
        let s = tape.sum(sq);
        tape.backward(s).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[4.0, 8.0]);
        tape.zero_grad();
        assert!(tape.grad(x).is_none());
    }

    #[test]
    fn backward_is_linear_in_the_loss() {
        let build = |tape: &mut Tape<f64>, x: Var| {
            let sq = tape.square(x);
            let l1 = tape.sum(sq);
            let r = tape.relu(x);
            let l2 = tape.mean(r);
            (l1, l2)
        };
        let x0 = Tensor::new(vec![3], vec![0.3, -1.2, 2.5]).unwrap();
        let grad_of = |a: f64, b: f64| {
            let mut tape = Tape::new();
            let x = tape.param(x0.clone());
            let (l1, l2) = build(&mut tape, x);
            let s1 = tape.scale(l1, a);
            let s2 = tape.scale(l2, b);
            let l = tape.add(s1, s2).unwrap();
            tape.backward(l).unwrap();
            tape.grad(x).unwrap().data().to_vec()
        };
        let g1 = grad_of(1.0, 0.0);
        let g2 = grad_of(0.0, 1.0);
        let mix = grad_of(1.5, -0.5);
        for i in 0..3 {
            assert!((mix[i] - (1.5 * g1[i] - 0.5 * g2[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn sigmoid_bce_at_zero_logit_is_ln2() {
        let mut tape = Tape::<f64>::new();
        let z = tape.constant(Tensor::zeros(vec![2]));
        let l = tape.sigmoid_bce(z, &[1.0, 0.0]).unwrap();
        for &v in tape.value(l).data() {
            assert!((v - std::f64::consts::LN_2).abs() < 1e-15);
        }
    }
}
