//! Reverse-mode recording tape.
//!
//! Every op appends a node holding its value; `backward` walks the nodes in
//! reverse and accumulates gradients into every node that depends on a
//! parameter. Constants (`Tape::constant`) never receive gradients.

use super::kernels::{self, axis_split, Padding};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d { x: Var, w: Var, b: Var, pad: Padding },
    Selu(Var),
    Softmax { x: Var, axis: usize },
    Concat { parts: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
    Reshape(Var),
    Affine { x: Var, scale: f64 },
    Add(Var, Var),
    Mul(Var, Var),
    SumAxis { x: Var, axis: usize },
    SumAll(Var),
    L1 { x: Var, target: Var },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Gradient with respect to `v`; zeros for detached or unreached nodes.
    pub fn wrt(&self, v: Var) -> Tensor {
        self.grads[v.0]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }

    pub fn take(&mut self, v: Var) -> Tensor {
        self.grads[v.0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("cannot broadcast {a:?} with {b:?}")));
    }
    a.iter()
        .zip(b)
        .map(|(&x, &y)| match (x, y) {
            _ if x == y => Ok(x),
            (1, _) => Ok(y),
            (_, 1) => Ok(x),
            _ => Err(Error::Shape(format!("cannot broadcast {a:?} with {b:?}"))),
        })
        .collect()
}

/// Maps a flat output index to the flat index of a broadcast operand.
struct BroadcastIndex {
    out_strides: [usize; 4],
    in_strides: [usize; 4],
}

impl BroadcastIndex {
    fn new(out: &[usize], input: &[usize]) -> Self {
        let pad = |s: &[usize]| {
            let mut d = [1usize; 4];
            d[4 - s.len()..].copy_from_slice(s);
            d
        };
        let (o, i) = (pad(out), pad(input));
        let strides = |d: [usize; 4]| [d[1] * d[2] * d[3], d[2] * d[3], d[3], 1];
        let os = strides(o);
        let mut is = strides(i);
        for k in 0..4 {
            if i[k] == 1 {
                is[k] = 0;
            }
        }
        BroadcastIndex {
            out_strides: os,
            in_strides: is,
        }
    }

    #[inline]
    fn map(&self, mut flat: usize) -> usize {
        let mut idx = 0;
        for k in 0..4 {
            let q = flat / self.out_strides[k];
            flat -= q * self.out_strides[k];
            idx += q * self.in_strides[k];
        }
        idx
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        debug_assert!(value.all_finite(), "non-finite value produced by {op:?}");
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Detached leaf (data, frozen weights).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// True if `v` is an input of a SELU node and every such input; used by
    /// gradient checks to detect kink crossings.
    pub fn selu_inputs(&self) -> Vec<Var> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Selu(x) => Some(x),
                _ => None,
            })
            .collect()
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, pad: Padding) -> Result<Var> {
        let y = kernels::conv2d_forward(self.value(x), self.value(w), self.value(b), pad)?;
        let ng = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(y, Op::Conv2d { x, w, b, pad }, ng))
    }

    pub fn selu(&mut self, x: Var) -> Var {
        let y = kernels::selu(self.value(x));
        let ng = self.needs(x);
        self.push(y, Op::Selu(x), ng)
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let y = kernels::softmax(self.value(x), axis)?;
        let ng = self.needs(x);
        Ok(self.push(y, Op::Softmax { x, axis }, ng))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = self
            .shape(*parts.first().ok_or_else(|| Error::Shape("concat of nothing".into()))?)
            .to_vec();
        if axis >= first.len() {
            return Err(Error::Shape(format!("concat axis {axis} out of range for {first:?}")));
        }
        let mut out_shape = first.clone();
        out_shape[axis] = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == first.len()
                && s.iter().zip(&first).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::Shape(format!("concat shape {s:?} incompatible with {first:?}")));
            }
            out_shape[axis] += s[axis];
        }
        let (outer, total, inner) = axis_split(&out_shape, axis);
        let mut data = vec![0.0; outer * total * inner];
        let mut offset = 0;
        for &p in parts {
            let v = self.value(p);
            let len = v.shape()[axis];
            for o in 0..outer {
                let src = &v.data()[o * len * inner..(o + 1) * len * inner];
                let dst = (o * total + offset) * inner;
                data[dst..dst + len * inner].copy_from_slice(src);
            }
            offset += len;
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        let y = Tensor::from_vec(out_shape, data)?;
        Ok(self.push(y, Op::Concat { parts: parts.to_vec(), axis }, ng))
    }

    /// Entries `start..end` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || start >= end || end > s[axis] {
            return Err(Error::Shape(format!("slice {start}..{end} on axis {axis} of {s:?}")));
        }
        let (outer, len, inner) = axis_split(&s, axis);
        let n = end - start;
        let mut data = Vec::with_capacity(outer * n * inner);
        let v = self.value(x).data();
        for o in 0..outer {
            data.extend_from_slice(&v[(o * len + start) * inner..(o * len + end) * inner]);
        }
        let mut out_shape = s;
        out_shape[axis] = n;
        let ng = self.needs(x);
        let y = Tensor::from_vec(out_shape, data)?;
        Ok(self.push(y, Op::Slice { x, axis, start }, ng))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let y = self.value(x).clone().reshaped(shape)?;
        let ng = self.needs(x);
        Ok(self.push(y, Op::Reshape(x), ng))
    }

    /// `scale * x + shift` element-wise.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let mut y = self.value(x).clone();
        y.data_mut().iter_mut().for_each(|v| *v = scale * *v + shift);
        let ng = self.needs(x);
        self.push(y, Op::Affine { x, scale }, ng)
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let shape = broadcast_shape(&sa, &sb)?;
        let ia = BroadcastIndex::new(&shape, &sa);
        let ib = BroadcastIndex::new(&shape, &sb);
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let n: usize = shape.iter().product();
        let data = (0..n).map(|i| f(da[ia.map(i)], db[ib.map(i)])).collect();
        Tensor::from_vec(shape, data)
    }

    /// Elementwise sum with broadcasting over size-1 dimensions.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.binary(a, b, |x, y| x + y)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(y, Op::Add(a, b), ng))
    }

    /// Elementwise product with broadcasting over size-1 dimensions.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.binary(a, b, |x, y| x * y)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(y, Op::Mul(a, b), ng))
    }

    /// Sum along `axis`, keeping it with size 1.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() {
            return Err(Error::Shape(format!("sum axis {axis} out of range for {s:?}")));
        }
        let (outer, len, inner) = axis_split(&s, axis);
        let v = self.value(x).data();
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for a in 0..len {
                let src = &v[(o * len + a) * inner..(o * len + a + 1) * inner];
                for (d, s) in data[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        let mut out_shape = s;
        out_shape[axis] = 1;
        let ng = self.needs(x);
        let y = Tensor::from_vec(out_shape, data)?;
        Ok(self.push(y, Op::SumAxis { x, axis }, ng))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let y = Tensor::scalar(self.value(x).sum());
        let ng = self.needs(x);
        self.push(y, Op::SumAll(x), ng)
    }

    /// `sum |x - target|` as a scalar.
    pub fn l1(&mut self, x: Var, target: Var) -> Result<Var> {
        if self.shape(x) != self.shape(target) {
            return Err(Error::Shape(format!(
                "l1 operands differ: {:?} vs {:?}",
                self.shape(x),
                self.shape(target)
            )));
        }
        let s: f64 = self
            .value(x)
            .data()
            .iter()
            .zip(self.value(target).data())
            .map(|(a, b)| (a - b).abs())
            .sum();
        let ng = self.needs(x) || self.needs(target);
        Ok(self.push(Tensor::scalar(s), Op::L1 { x, target }, ng))
    }

    /// Reverse pass from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        if self.needs(loss) {
            grads[loss.0] = Some(Tensor::full(self.shape(loss), 1.0));
        }
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads, shapes })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.needs(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, pad } => {
                let (dx, dw, db) =
                    kernels::conv2d_backward(self.value(*x), self.value(*w), *pad, g, self.needs(*x))?;
                if let Some(dx) = dx {
                    self.accumulate(grads, *x, dx);
                }
                self.accumulate(grads, *w, dw);
                self.accumulate(grads, *b, db);
            }
            Op::Selu(x) => {
                let xv = self.value(*x);
                let data = xv
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&xi, &gi)| gi * kernels::selu_derivative(xi))
                    .collect();
                self.accumulate(grads, *x, Tensor::from_vec(xv.shape().to_vec(), data)?);
            }
            Op::Softmax { x, axis } => {
                self.accumulate(grads, *x, kernels::softmax_backward(&node.value, g, *axis));
            }
            Op::Concat { parts, axis } => {
                let (outer, total, inner) = axis_split(node.value.shape(), *axis);
                let mut offset = 0;
                for &p in parts {
                    let shape = self.shape(p).to_vec();
                    let len = shape[*axis];
                    if self.needs(p) {
                        let mut data = Vec::with_capacity(outer * len * inner);
                        for o in 0..outer {
                            let src = (o * total + offset) * inner;
                            data.extend_from_slice(&g.data()[src..src + len * inner]);
                        }
                        self.accumulate(grads, p, Tensor::from_vec(shape, data)?);
                    }
                    offset += len;
                }
            }
            Op::Slice { x, axis, start } => {
                let shape = self.shape(*x).to_vec();
                let (outer, len, inner) = axis_split(&shape, *axis);
                let n = node.value.shape()[*axis];
                let mut dx = Tensor::zeros(&shape);
                for o in 0..outer {
                    let dst = (o * len + start) * inner;
                    dx.data_mut()[dst..dst + n * inner]
                        .copy_from_slice(&g.data()[o * n * inner..(o + 1) * n * inner]);
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Reshape(x) => {
                self.accumulate(grads, *x, g.clone().reshaped(self.shape(*x))?);
            }
            Op::Affine { x, scale } => {
                let mut dx = g.clone();
                dx.data_mut().iter_mut().for_each(|v| *v *= scale);
                self.accumulate(grads, *x, dx);
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.needs(v) {
                        let r = reduce_to(g, node.value.shape(), self.shape(v), |_| 1.0);
                        self.accumulate(grads, v, r);
                    }
                }
            }
            Op::Mul(a, b) => {
                let out_shape = node.value.shape();
                for (v, other) in [(*a, *b), (*b, *a)] {
                    if self.needs(v) {
                        let os = self.shape(other);
                        let oi = BroadcastIndex::new(out_shape, os);
                        let od = self.value(other).data();
                        let r = reduce_to(g, out_shape, self.shape(v), |i| od[oi.map(i)]);
                        self.accumulate(grads, v, r);
                    }
                }
            }
            Op::SumAxis { x, axis } => {
                let shape = self.shape(*x).to_vec();
                let (outer, len, inner) = axis_split(&shape, *axis);
                let mut dx = Tensor::zeros(&shape);
                for o in 0..outer {
                    let src = &g.data()[o * inner..(o + 1) * inner];
                    for a in 0..len {
                        dx.data_mut()[(o * len + a) * inner..(o * len + a + 1) * inner].copy_from_slice(src);
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::SumAll(x) => {
                self.accumulate(grads, *x, Tensor::full(self.shape(*x), g.data()[0]));
            }
            Op::L1 { x, target } => {
                let g0 = g.data()[0];
                let signs: Vec<f64> = self
                    .value(*x)
                    .data()
                    .iter()
                    .zip(self.value(*target).data())
                    .map(|(a, b)| g0 * sign(a - b))
                    .collect();
                let shape = self.shape(*x).to_vec();
                if self.needs(*target) {
                    let neg = signs.iter().map(|s| -s).collect();
                    self.accumulate(grads, *target, Tensor::from_vec(shape.clone(), neg)?);
                }
                self.accumulate(grads, *x, Tensor::from_vec(shape, signs)?);
            }
        }
        Ok(())
    }
}

/// Subgradient of `|d|` with 0 at the kink.
#[inline]
fn sign(d: f64) -> f64 {
    if d > 0.0 {
        1.0
    } else if d < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Sums `g * factor(i)` over the dimensions along which `target` was broadcast.
fn reduce_to(g: &Tensor, out_shape: &[usize], target: &[usize], factor: impl Fn(usize) -> f64) -> Tensor {
    let idx = BroadcastIndex::new(out_shape, target);
    let mut r = Tensor::zeros(target);
    let rd = r.data_mut();
    for (i, gi) in g.data().iter().enumerate() {
        rd[idx.map(i)] += gi * factor(i);
    }
    r
}
