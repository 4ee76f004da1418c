//! Reverse-mode automatic differentiation over exactly the operation set the
//! encoder-decoder network and its loss need.
//!
//! A [`Tape`] is an arena of nodes; building an operation records its inputs
//! and caches the forward value. [`Tape::backward`] walks the arena in
//! reverse creation order (which is a reverse topological order, since ops can
//! only reference existing nodes), visiting each node exactly once and
//! accumulating gradients in a fixed order, so repeated runs are bitwise
//! identical.

use crate::conv::{conv2d_backward, conv2d_forward};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    /// Differentiable leaf (a network parameter).
    Leaf,
    /// Non-differentiable input.
    Constant,
    Conv2d {
        x: NodeId,
        w: NodeId,
        b: NodeId,
        stride: usize,
        pad: usize,
    },
    LeakyRelu {
        x: NodeId,
        slope: T,
    },
    UpsampleNearest {
        x: NodeId,
        factor: usize,
    },
    ConcatChannels {
        a: NodeId,
        b: NodeId,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    Scale {
        x: NodeId,
        c: T,
    },
    Sum {
        x: NodeId,
    },
    SumSquares {
        x: NodeId,
    },
}

#[derive(Debug)]
struct Node<T> {
    op: Op<T>,
    value: Tensor<T>,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Per-node gradients produced by a backward pass.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient w.r.t. the given node, if it participated in the pass.
    pub fn wrt(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
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

    /// Forward value of a node.
    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    /// Register a differentiable leaf (an optimization variable).
    pub fn leaf(&mut self, value: Tensor<T>) -> NodeId {
        self.push(Op::Leaf, value, true)
    }

    /// Register a fixed input; no gradient is accumulated for it.
    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.push(Op::Constant, value, false)
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    pub fn conv2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: NodeId,
        stride: usize,
        pad: usize,
    ) -> Result<NodeId> {
        let value = conv2d_forward(self.value(x), self.value(w), self.value(b), stride, pad)?;
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(Op::Conv2d { x, w, b, stride, pad }, value, needs))
    }

    /// `y = x` for `x >= 0`, `slope * x` otherwise; `slope = 1` degenerates
    /// to the identity (network configs restrict to `[0, 1)`).
    pub fn leaky_relu(&mut self, x: NodeId, slope: T) -> Result<NodeId> {
        if slope < T::zero() || slope > T::one() {
            return Err(Error::Config(format!(
                "leaky_relu slope must be in [0, 1], got {slope}"
            )));
        }
        let value = self
            .value(x)
            .map(|v| if v >= T::zero() { v } else { slope * v });
        value.check_finite("leaky_relu")?;
        let needs = self.needs(x);
        Ok(self.push(Op::LeakyRelu { x, slope }, value, needs))
    }

    pub fn upsample_nearest(&mut self, x: NodeId, factor: usize) -> Result<NodeId> {
        if factor == 0 {
            return Err(Error::Config("upsample factor must be >= 1".into()));
        }
        let (c, h, w) = self.value(x).dims3()?;
        let src = self.value(x).data();
        let mut out = Tensor::zeros(&[c, h * factor, w * factor]);
        {
            let dst = out.data_mut();
            let (fh, fw) = (h * factor, w * factor);
            for ci in 0..c {
                for oy in 0..fh {
                    let sy = oy / factor;
                    let srow = &src[(ci * h + sy) * w..(ci * h + sy + 1) * w];
                    let drow = &mut dst[(ci * fh + oy) * fw..(ci * fh + oy + 1) * fw];
                    for (ox, dv) in drow.iter_mut().enumerate() {
                        *dv = srow[ox / factor];
                    }
                }
            }
        }
        let needs = self.needs(x);
        Ok(self.push(Op::UpsampleNearest { x, factor }, out, needs))
    }

    pub fn concat_channels(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ca, ha, wa) = self.value(a).dims3()?;
        let (cb, hb, wb) = self.value(b).dims3()?;
        if (ha, wa) != (hb, wb) {
            return Err(Error::Shape(format!(
                "concat_channels spatial mismatch: {ha}x{wa} vs {hb}x{wb}"
            )));
        }
        let mut data = Vec::with_capacity((ca + cb) * ha * wa);
        data.extend_from_slice(self.value(a).data());
        data.extend_from_slice(self.value(b).data());
        let value = Tensor::from_vec(&[ca + cb, ha, wa], data)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::ConcatChannels { a, b }, value, needs))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Shape(format!(
                "add of {:?} and {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b))?;
        value.check_finite("add")?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Add { a, b }, value, needs))
    }

    pub fn scale(&mut self, x: NodeId, c: T) -> Result<NodeId> {
        let value = self.value(x).scale(c);
        value.check_finite("scale")?;
        let needs = self.needs(x);
        Ok(self.push(Op::Scale { x, c }, value, needs))
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        let value = Tensor::scalar(self.value(x).sum());
        value.check_finite("sum")?;
        let needs = self.needs(x);
        Ok(self.push(Op::Sum { x }, value, needs))
    }

    pub fn sum_squares(&mut self, x: NodeId) -> Result<NodeId> {
        let value = Tensor::scalar(self.value(x).sum_squares());
        value.check_finite("sum_squares")?;
        let needs = self.needs(x);
        Ok(self.push(Op::SumSquares { x }, value, needs))
    }

    /// Backward pass from a scalar loss node; the seed gradient is 1.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<T>> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss node, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let seed = Tensor::from_vec(self.value(loss).shape(), vec![T::one()])?;
        self.backward_seeded(loss, seed)
    }

    /// Backward pass seeding the given node with an externally supplied
    /// upstream gradient (a vector-Jacobian product).
    pub fn backward_seeded(&self, node: NodeId, seed: Tensor<T>) -> Result<Gradients<T>> {
        if seed.shape() != self.value(node).shape() {
            return Err(Error::Shape(format!(
                "backward seed shape {:?} does not match node shape {:?}",
                seed.shape(),
                self.value(node).shape()
            )));
        }
        seed.check_finite("backward seed")?;
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[node.0] = Some(seed);

        for i in (0..=node.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Leaf | Op::Constant => {
                    grads[i] = Some(g); // keep leaf gradients for the caller
                }
                Op::Conv2d { x, w, b, stride, pad } => {
                    let (dx, dw, db) = conv2d_backward(
                        self.value(*x),
                        self.value(*w),
                        self.value(*b),
                        *stride,
                        *pad,
                        &g,
                    )?;
                    self.accumulate(&mut grads, *x, dx)?;
                    self.accumulate(&mut grads, *w, dw)?;
                    self.accumulate(&mut grads, *b, db)?;
                }
                Op::LeakyRelu { x, slope } => {
                    let xv = self.value(*x).data();
                    let mut dx = g.clone();
                    for (dv, &v) in dx.data_mut().iter_mut().zip(xv) {
                        if v <= T::zero() {
                            *dv *= *slope;
                        }
                    }
                    self.accumulate(&mut grads, *x, dx)?;
                }
                Op::UpsampleNearest { x, factor } => {
                    let (c, h, w) = self.value(*x).dims3()?;
                    let f = *factor;
                    let (fh, fw) = (h * f, w * f);
                    let mut dx = Tensor::zeros(&[c, h, w]);
                    let dst = dx.data_mut();
                    for ci in 0..c {
                        for oy in 0..fh {
                            let sy = oy / f;
                            let grow = &g.data()[(ci * fh + oy) * fw..(ci * fh + oy + 1) * fw];
                            let drow = &mut dst[(ci * h + sy) * w..(ci * h + sy + 1) * w];
                            for (ox, &gv) in grow.iter().enumerate() {
                                drow[ox / f] += gv;
                            }
                        }
                    }
                    self.accumulate(&mut grads, *x, dx)?;
                }
                Op::ConcatChannels { a, b } => {
                    let (ca, h, w) = self.value(*a).dims3()?;
                    let (cb, _, _) = self.value(*b).dims3()?;
                    let split = ca * h * w;
                    let da = Tensor::from_vec(&[ca, h, w], g.data()[..split].to_vec())?;
                    let db = Tensor::from_vec(&[cb, h, w], g.data()[split..].to_vec())?;
                    self.accumulate(&mut grads, *a, da)?;
                    self.accumulate(&mut grads, *b, db)?;
                }
                Op::Add { a, b } => {
                    self.accumulate(&mut grads, *a, g.clone())?;
                    self.accumulate(&mut grads, *b, g)?;
                }
                Op::Scale { x, c } => {
                    self.accumulate(&mut grads, *x, g.scale(*c))?;
                }
                Op::Sum { x } => {
                    let gs = g.scalar_value()?;
                    let dx = Tensor::full(self.value(*x).shape(), gs);
                    self.accumulate(&mut grads, *x, dx)?;
                }
                Op::SumSquares { x } => {
                    let gs = g.scalar_value()?;
                    let two = T::cast(2.0);
                    let dx = self.value(*x).map(|v| two * v * gs);
                    self.accumulate(&mut grads, *x, dx)?;
                }
            }
        }
        for (i, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                g.check_finite(&format!("gradient of node {i}"))?;
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(
        &self,
        grads: &mut [Option<Tensor<T>>],
        target: NodeId,
        delta: Tensor<T>,
    ) -> Result<()> {
        if !self.nodes[target.0].needs_grad {
            return Ok(());
        }
        match &mut grads[target.0] {
            slot @ None => *slot = Some(delta),
            Some(acc) => acc.add_assign(&delta)?,
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    fn rand_tensor(shape: &[usize], rng: &mut SeededRng) -> Tensor<f64> {
        let len = shape.iter().product();
        let data = (0..len).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        Tensor::from_vec(shape, data).unwrap()
    }

    #[test]
    fn sum_gradient_is_all_ones() {
        let mut rng = SeededRng::new(1);
        let mut tape = Tape::new();
        let x = tape.leaf(rand_tensor(&[2, 3, 3], &mut rng));
        let loss = tape.sum(x).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert!(grads.wrt(x).unwrap().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn sum_squares_gradient_is_two_x() {
        let mut rng = SeededRng::new(2);
        let xt = rand_tensor(&[7], &mut rng);
        let mut tape = Tape::new();
        let x = tape.leaf(xt.clone());
        let loss = tape.sum_squares(x).unwrap();
        let grads = tape.backward(loss).unwrap();
        for (g, v) in grads.wrt(x).unwrap().data().iter().zip(xt.data()) {
            assert!((g - 2.0 * v).abs() < 1e-15);
        }
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::<f64>::zeros(&[2, 2]));
        assert!(matches!(tape.backward(x), Err(Error::Shape(_))));
    }

    #[test]
    fn leaky_relu_values_and_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec(&[2], vec![1.0, -2.0]).unwrap());
        let y = tape.leaky_relu(x, 0.1).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, -0.2]);
        let loss = tape.sum(y).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.wrt(x).unwrap().data(), &[1.0, 0.1]);
    }

    #[test]
    fn leaky_relu_slope_one_is_identity() {
        let mut rng = SeededRng::new(20);
        let xt = rand_tensor(&[9], &mut rng);
        let mut tape = Tape::new();
        let x = tape.leaf(xt.clone());
        let y = tape.leaky_relu(x, 1.0).unwrap();
        assert_eq!(tape.value(y).data(), xt.data());
        let loss = tape.sum(y).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert!(grads.wrt(x).unwrap().data().iter().all(|&v| v == 1.0));
        // out-of-range slopes stay rejected
        assert!(tape.leaky_relu(x, 1.5).is_err());
        assert!(tape.leaky_relu(x, -0.1).is_err());
    }

    #[test]
    fn leaky_relu_gradient_matches_finite_differences() {
        let slope = 0.1;
        let xs = [3.0, -3.0];
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec(&[2], xs.to_vec()).unwrap());
        let y = tape.leaky_relu(x, slope).unwrap();
        let loss = tape.sum_squares(y).unwrap();
        let grads = tape.backward(loss).unwrap();
        let h = 1e-6;
        for i in 0..2 {
            let eval = |v: f64| {
                let mut tape = Tape::new();
                let mut data = xs.to_vec();
                data[i] = v;
                let x = tape.leaf(Tensor::from_vec(&[2], data).unwrap());
                let y = tape.leaky_relu(x, slope).unwrap();
                let loss = tape.sum_squares(y).unwrap();
                tape.value(loss).scalar_value().unwrap()
            };
            let fd = (eval(xs[i] + h) - eval(xs[i] - h)) / (2.0 * h);
            let ad = grads.wrt(x).unwrap().data()[i];
            assert!(((ad - fd) / fd).abs() < 1e-7, "ad={ad} fd={fd}");
        }
    }

    #[test]
    fn upsample_factor_one_is_identity() {
        let mut rng = SeededRng::new(3);
        let xt = rand_tensor(&[2, 4, 4], &mut rng);
        let mut tape = Tape::new();
        let x = tape.leaf(xt.clone());
        let y = tape.upsample_nearest(x, 1).unwrap();
        assert_eq!(tape.value(y).data(), xt.data());
    }

    #[test]
    fn upsample_replicates_blocks() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let y = tape.upsample_nearest(x, 2).unwrap();
        #[rustfmt::skip]
        let expected = vec![
            1.0, 1.0, 2.0, 2.0,
            1.0, 1.0, 2.0, 2.0,
            3.0, 3.0, 4.0, 4.0,
            3.0, 3.0, 4.0, 4.0,
        ];
        assert_eq!(tape.value(y).data(), expected.as_slice());
    }

    #[test]
    fn upsample_backward_counts_replications() {
        let mut rng = SeededRng::new(4);
        let mut tape = Tape::new();
        let x = tape.leaf(rand_tensor(&[3, 3, 2], &mut rng));
        let y = tape.upsample_nearest(x, 3).unwrap();
        let loss = tape.sum(y).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert!(grads.wrt(x).unwrap().data().iter().all(|&v| v == 9.0));
    }

    #[test]
    fn upsample_rejects_factor_zero() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::<f64>::zeros(&[1, 2, 2]));
        assert!(tape.upsample_nearest(x, 0).is_err());
    }

    #[test]
    fn concat_shapes_and_empty() {
        let mut rng = SeededRng::new(5);
        let at = rand_tensor(&[2, 4, 4], &mut rng);
        let mut tape = Tape::new();
        let a = tape.leaf(at.clone());
        let b = tape.leaf(rand_tensor(&[3, 4, 4], &mut rng));
        let y = tape.concat_channels(a, b).unwrap();
        assert_eq!(tape.value(y).shape(), &[5, 4, 4]);

        let empty = tape.leaf(Tensor::zeros(&[0, 4, 4]));
        let same = tape.concat_channels(a, empty).unwrap();
        assert_eq!(tape.value(same).data(), at.data());

        let bad = tape.leaf(Tensor::<f64>::zeros(&[1, 5, 4]));
        assert!(tape.concat_channels(a, bad).is_err());
    }

    #[test]
    fn concat_backward_splits_gradient() {
        let mut rng = SeededRng::new(6);
        let mut tape = Tape::new();
        let a = tape.leaf(rand_tensor(&[2, 3, 3], &mut rng));
        let b = tape.leaf(rand_tensor(&[1, 3, 3], &mut rng));
        let y = tape.concat_channels(a, b).unwrap();
        let seed = rand_tensor(&[3, 3, 3], &mut rng);
        let grads = tape.backward_seeded(y, seed.clone()).unwrap();
        // index bookkeeping oracle: channel c of the seed goes to a for c < 2
        assert_eq!(grads.wrt(a).unwrap().data(), &seed.data()[..18]);
        assert_eq!(grads.wrt(b).unwrap().data(), &seed.data()[18..]);
    }

    #[test]
    fn backward_is_linear_in_the_seed() {
        let mut rng = SeededRng::new(7);
        let xt = rand_tensor(&[1, 4, 4], &mut rng);
        let wt = rand_tensor(&[2, 1, 3, 3], &mut rng);
        let bt = rand_tensor(&[2], &mut rng);
        let (alpha, beta) = (0.7, -1.3);

        // two scalar losses from the same graph
        let build = |tape: &mut Tape<f64>| -> (NodeId, NodeId, NodeId) {
            let x = tape.leaf(xt.clone());
            let w = tape.leaf(wt.clone());
            let b = tape.leaf(bt.clone());
            let y = tape.conv2d(x, w, b, 1, 1).unwrap();
            let l1 = tape.sum(y).unwrap();
            let l2 = tape.sum_squares(y).unwrap();
            (x, l1, l2)
        };

        let mut tape = Tape::new();
        let (x, l1, l2) = build(&mut tape);
        let s1 = tape.scale(l1, alpha).unwrap();
        let s2 = tape.scale(l2, beta).unwrap();
        let combined = tape.add(s1, s2).unwrap();
        let g_combined = tape.backward(combined).unwrap();

        let g1 = tape.backward(l1).unwrap();
        let g2 = tape.backward(l2).unwrap();
        for ((gc, ga), gb) in g_combined
            .wrt(x)
            .unwrap()
            .data()
            .iter()
            .zip(g1.wrt(x).unwrap().data())
            .zip(g2.wrt(x).unwrap().data())
        {
            assert!((gc - (alpha * ga + beta * gb)).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_backward_is_bitwise_reproducible() {
        let run = || -> Vec<u64> {
            let mut rng = SeededRng::new(8);
            let mut tape = Tape::new();
            let x = tape.leaf(rand_tensor(&[2, 6, 6], &mut rng));
            let w = tape.leaf(rand_tensor(&[3, 2, 3, 3], &mut rng));
            let b = tape.leaf(rand_tensor(&[3], &mut rng));
            let y = tape.conv2d(x, w, b, 1, 1).unwrap();
            let a = tape.leaky_relu(y, 0.1).unwrap();
            let u = tape.upsample_nearest(a, 2).unwrap();
            let loss = tape.sum_squares(u).unwrap();
            let grads = tape.backward(loss).unwrap();
            grads
                .wrt(w)
                .unwrap()
                .data()
                .iter()
                .map(|v| v.to_bits())
                .collect()
        };
        assert_eq!(run(), run());
    }

    /// Finite differences through a graph exercising every differentiable
    /// op: conv -> leaky_relu -> upsample -> concat -> conv -> sum_squares.
    #[test]
    fn composite_graph_matches_finite_differences() {
        let mut rng = SeededRng::new(10);
        let xt = rand_tensor(&[2, 4, 4], &mut rng);
        let w1t = rand_tensor(&[2, 2, 3, 3], &mut rng);
        let b1t = rand_tensor(&[2], &mut rng);
        let w2t = rand_tensor(&[1, 4, 3, 3], &mut rng);
        let b2t = rand_tensor(&[1], &mut rng);

        let eval = |xt: &Tensor<f64>,
                    w1t: &Tensor<f64>,
                    b1t: &Tensor<f64>,
                    w2t: &Tensor<f64>,
                    b2t: &Tensor<f64>|
         -> (f64, Vec<Tensor<f64>>) {
            let mut tape = Tape::new();
            let x = tape.leaf(xt.clone());
            let w1 = tape.leaf(w1t.clone());
            let b1 = tape.leaf(b1t.clone());
            let w2 = tape.leaf(w2t.clone());
            let b2 = tape.leaf(b2t.clone());
            let c1 = tape.conv2d(x, w1, b1, 2, 1).unwrap(); // 2x2x2
            let a1 = tape.leaky_relu(c1, 0.1).unwrap();
            let up = tape.upsample_nearest(a1, 2).unwrap(); // 2x4x4
            let cat = tape.concat_channels(up, x).unwrap(); // 4x4x4
            let c2 = tape.conv2d(cat, w2, b2, 1, 1).unwrap();
            let loss = tape.sum_squares(c2).unwrap();
            let value = tape.value(loss).scalar_value().unwrap();
            let grads = tape.backward(loss).unwrap();
            let out = [x, w1, b1, w2, b2]
                .iter()
                .map(|&id| grads.wrt(id).unwrap().clone())
                .collect();
            (value, out)
        };

        let (_, analytic) = eval(&xt, &w1t, &b1t, &w2t, &b2t);
        let inputs = [&xt, &w1t, &b1t, &w2t, &b2t];
        let h = 1e-5;
        for (which, base) in inputs.iter().enumerate() {
            for i in 0..base.len() {
                let perturb = |sign: f64| {
                    let mut t = (*base).clone();
                    t.data_mut()[i] += sign * h;
                    let args: Vec<&Tensor<f64>> = inputs
                        .iter()
                        .enumerate()
                        .map(|(j, &orig)| if j == which { &t } else { orig })
                        .collect();
                    eval(args[0], args[1], args[2], args[3], args[4]).0
                };
                let fd = (perturb(1.0) - perturb(-1.0)) / (2.0 * h);
                let ad = analytic[which].data()[i];
                let rel = (ad - fd).abs() / fd.abs().max(1e-6);
                assert!(rel <= 1e-4, "input {which} element {i}: ad {ad} fd {fd}");
            }
        }
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut rng = SeededRng::new(9);
        let mut tape = Tape::new();
        let x = tape.constant(rand_tensor(&[1, 4, 4], &mut rng));
        let w = tape.leaf(rand_tensor(&[1, 1, 3, 3], &mut rng));
        let b = tape.leaf(rand_tensor(&[1], &mut rng));
        let y = tape.conv2d(x, w, b, 1, 1).unwrap();
        let loss = tape.sum(y).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert!(grads.wrt(x).is_none());
        assert!(grads.wrt(w).is_some());
    }
}
