use super::ops::{self, LossKind, NormKind, NormStats};
use super::{Real, Tensor};
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
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    MulConst(Var, Tensor<T>),
    Matmul(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    Gate(Var, Var),
    Gelu(Var),
    SoftmaxRows(Var),
    Conv2d(Var, Var, (usize, usize)),
    DwConv(Var, Var),
    Grouped(Var, Var, Option<Var>),
    Norm {
        x: Var,
        gain: Var,
        bias: Var,
        kind: NormKind,
        stats: NormStats<T>,
    },
    Permute(Var, Vec<usize>),
    Reshape(Var),
    Sum(Var),
    Loss {
        pred: Var,
        target: Tensor<T>,
        mask: Option<Tensor<T>>,
        kind: LossKind,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Records one forward pass. Values are appended in evaluation order, so
/// the reverse of insertion order is a valid reverse topological order.
pub struct Tape<T: Real = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of a scalar with respect to every recorded value that
/// depends on a parameter.
pub struct Gradients<T: Real = f32> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that receives no gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vs: &[Var]) -> bool {
        vs.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    fn unary(&mut self, value: Tensor<T>, op: Op<T>, x: Var) -> Var {
        let n = self.needs(&[x]);
        self.push(value, op, n)
    }

    fn binary(&mut self, value: Tensor<T>, op: Op<T>, a: Var, b: Var) -> Var {
        let n = self.needs(&[a, b]);
        self.push(value, op, n)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = ops::add(self.value(a), self.value(b))?;
        Ok(self.binary(v, Op::Add(a, b), a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = ops::sub(self.value(a), self.value(b))?;
        Ok(self.binary(v, Op::Sub(a, b), a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = ops::mul(self.value(a), self.value(b))?;
        Ok(self.binary(v, Op::Mul(a, b), a, b))
    }

    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let v = ops::add_bias(self.value(x), self.value(b))?;
        Ok(self.binary(v, Op::AddBias(x, b), x, b))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let st = T::from_f64c(s);
        let v = self.value(x).map(|e| e * st);
        self.unary(v, Op::Scale(x, s), x)
    }

    /// Elementwise product with a fixed tensor (dropout masks, selectors).
    pub fn mul_const(&mut self, x: Var, c: Tensor<T>) -> Result<Var> {
        let v = ops::mul(self.value(x), &c)?;
        Ok(self.unary(v, Op::MulConst(x, c), x))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = ops::matmul(self.value(a), self.value(b))?;
        Ok(self.binary(v, Op::Matmul(a, b), a, b))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = ops::relu(self.value(x));
        self.unary(v, Op::Relu(x), x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = ops::sigmoid(self.value(x));
        self.unary(v, Op::Sigmoid(x), x)
    }

    pub fn gate(&mut self, x: Var, z: Var) -> Result<Var> {
        let v = ops::gate(self.value(x), self.value(z))?;
        Ok(self.binary(v, Op::Gate(x, z), x, z))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let v = ops::gelu(self.value(x));
        self.unary(v, Op::Gelu(x), x)
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let v = ops::softmax_rows(self.value(x))?;
        Ok(self.unary(v, Op::SoftmaxRows(x), x))
    }

    pub fn conv2d(&mut self, x: Var, k: Var, stride: (usize, usize)) -> Result<Var> {
        let v = ops::conv2d(self.value(x), self.value(k), stride)?;
        Ok(self.binary(v, Op::Conv2d(x, k, stride), x, k))
    }

    pub fn dwconv1d(&mut self, x: Var, k: Var) -> Result<Var> {
        let v = ops::dwconv1d(self.value(x), self.value(k))?;
        Ok(self.binary(v, Op::DwConv(x, k), x, k))
    }

    pub fn grouped_pointwise(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let v = ops::grouped_pointwise(self.value(x), self.value(w), b.map(|b| self.value(b)))?;
        let mut deps = vec![x, w];
        deps.extend(b);
        let n = self.needs(&deps);
        Ok(self.push(v, Op::Grouped(x, w, b), n))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64, kind: NormKind) -> Result<Var> {
        let (v, stats) = ops::layer_norm_stats(self.value(x), self.value(gain), self.value(bias), eps, kind)?;
        let n = self.needs(&[x, gain, bias]);
        Ok(self.push(
            v,
            Op::Norm {
                x,
                gain,
                bias,
                kind,
                stats,
            },
            n,
        ))
    }

    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let v = ops::permute(self.value(x), axes)?;
        Ok(self.unary(v, Op::Permute(x, axes.to_vec()), x))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).clone().reshape(shape)?;
        Ok(self.unary(v, Op::Reshape(x), x))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let v = Tensor::scalar(T::from_f64c(self.value(x).sum_f64()));
        self.unary(v, Op::Sum(x), x)
    }

    /// Masked MAE or MSE as a one-element tensor.
    pub fn loss(
        &mut self,
        pred: Var,
        target: &Tensor<T>,
        mask: Option<&Tensor<T>>,
        kind: LossKind,
    ) -> Result<Var> {
        let l = ops::masked_loss(self.value(pred), target, mask, kind)?;
        let op = Op::Loss {
            pred,
            target: target.clone(),
            mask: mask.cloned(),
            kind,
        };
        Ok(self.unary(Tensor::scalar(T::from_f64c(l)), op, pred))
    }

    /// Reverse sweep from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), T::one()));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn acc(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(cur) => {
                for (a, b) in cur.data_mut().iter_mut().zip(g.data()) {
                    *a += *b;
                }
            }
            slot => *slot = Some(g),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn propagate(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, g.map(|v| -v));
            }
            Op::Gate(x, z) => {
                let (gx, gz) = ops::gate_backward(self.value(*x), self.value(*z), g);
                if self.wants(*x) {
                    self.acc(grads, *x, gx);
                }
                if self.wants(*z) {
                    self.acc(grads, *z, gz);
                }
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    self.acc(grads, *a, ops::mul(g, self.value(*b))?);
                }
                if self.wants(*b) {
                    self.acc(grads, *b, ops::mul(g, self.value(*a))?);
                }
            }
            Op::AddBias(x, b) => {
                self.acc(grads, *x, g.clone());
                if self.wants(*b) {
                    let n = self.value(*b).len();
                    let mut acc = vec![0f64; n];
                    for (i, v) in g.data().iter().enumerate() {
                        acc[i % n] += v.to_f64c();
                    }
                    let t = Tensor::new(
                        self.value(*b).shape(),
                        acc.into_iter().map(T::from_f64c).collect(),
                    )?;
                    self.acc(grads, *b, t);
                }
            }
            Op::Scale(x, s) => {
                let st = T::from_f64c(*s);
                self.acc(grads, *x, g.map(|v| v * st));
            }
            Op::MulConst(x, c) => self.acc(grads, *x, ops::mul(g, c)?),
            Op::Matmul(a, b) => {
                if self.wants(*a) {
                    self.acc(grads, *a, ops::matmul_nt(g, self.value(*b)));
                }
                if self.wants(*b) {
                    self.acc(grads, *b, ops::matmul_tn(self.value(*a), g));
                }
            }
            Op::Relu(x) => {
                let xv = self.value(*x);
                let d = xv
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&v, &gv)| if v > T::zero() { gv } else { T::zero() })
                    .collect();
                self.acc(grads, *x, Tensor::new(xv.shape(), d)?);
            }
            Op::Sigmoid(x) => {
                let y = &node.value;
                let d = y
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&s, &gv)| gv * s * (T::one() - s))
                    .collect();
                self.acc(grads, *x, Tensor::new(y.shape(), d)?);
            }
            Op::Gelu(x) => self.acc(grads, *x, ops::gelu_backward(self.value(*x), g)),
            Op::SoftmaxRows(x) => self.acc(grads, *x, ops::softmax_rows_backward(&node.value, g)),
            Op::Conv2d(x, k, stride) => {
                let (gx, gk) =
                    ops::conv2d_backward(self.value(*x), self.value(*k), *stride, g, self.wants(*x));
                if let Some(gx) = gx {
                    self.acc(grads, *x, gx);
                }
                self.acc(grads, *k, gk);
            }
            Op::DwConv(x, k) => {
                let (gx, gk) = ops::dwconv1d_backward(self.value(*x), self.value(*k), g, self.wants(*x));
                if let Some(gx) = gx {
                    self.acc(grads, *x, gx);
                }
                self.acc(grads, *k, gk);
            }
            Op::Grouped(x, w, b) => {
                let (gx, gw, gb) =
                    ops::grouped_pointwise_backward(self.value(*x), self.value(*w), g, self.wants(*x));
                if let Some(gx) = gx {
                    self.acc(grads, *x, gx);
                }
                self.acc(grads, *w, gw);
                if let Some(b) = b {
                    self.acc(grads, *b, gb);
                }
            }
            Op::Norm {
                x,
                gain,
                bias,
                kind,
                stats,
            } => {
                let (gx, gg, gb) = ops::layer_norm_backward(stats, self.value(*gain), g, *kind);
                self.acc(grads, *x, gx);
                self.acc(grads, *gain, gg);
                self.acc(grads, *bias, gb);
            }
            Op::Permute(x, axes) => {
                self.acc(grads, *x, ops::permute(g, &ops::inverse_axes(axes))?);
            }
            Op::Reshape(x) => {
                let shape = self.value(*x).shape().to_vec();
                self.acc(grads, *x, g.clone().reshape(&shape)?);
            }
            Op::Sum(x) => {
                let xv = self.value(*x);
                self.acc(grads, *x, Tensor::full(xv.shape(), g.data()[0]));
            }
            Op::Loss {
                pred,
                target,
                mask,
                kind,
            } => {
                let gp = ops::masked_loss_backward(
                    self.value(*pred),
                    target,
                    mask.as_ref(),
                    *kind,
                    g.data()[0].to_f64c(),
                );
                self.acc(grads, *pred, gp);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::from_fn(&[2, 3], |i| (i[0] + i[1]) as f64));
        let l = tape.sum(x);
        let g = tape.backward(l).unwrap();
        assert!(g.get(x).unwrap().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn sigmoid_gradient_at_zero() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::zeros(&[4]));
        let s = tape.sigmoid(x);
        let l = tape.sum(s);
        let g = tape.backward(l).unwrap();
        assert!(g.get(x).unwrap().data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn fan_out_accumulates() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::full(&[3], 2.0));
        let y = tape.mul(x, x).unwrap();
        let z = tape.add(y, x).unwrap();
        let l = tape.sum(z);
        let g = tape.backward(l).unwrap();
        assert!(g.get(x).unwrap().data().iter().all(|&v| v == 5.0));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::zeros(&[2]));
        assert!(matches!(tape.backward(x), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut tape = Tape::<f64>::new();
        let c = tape.constant(Tensor::full(&[2], 1.0));
        let x = tape.param(Tensor::full(&[2], 3.0));
        let y = tape.mul(c, x).unwrap();
        let l = tape.sum(y);
        let g = tape.backward(l).unwrap();
        assert!(g.get(c).is_none());
        assert_eq!(g.get(x).unwrap().data(), &[1.0, 1.0]);
    }
}
