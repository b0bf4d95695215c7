use super::{Shape, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Softmax normalization axis for matrices. Vectors always normalize over
/// their single axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    /// Normalize down each column.
    Rows,
    /// Normalize across each row.
    Cols,
}

#[derive(Debug)]
enum Op<S> {
    Leaf,
    MatVec(Var, Var),
    Dot(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, Var),
    Concat(Vec<Var>),
    Slice(Var, usize),
    Tanh(Var),
    Sigmoid(Var),
    Softmax(Var, Axis),
    Sum(Var),
    Log(Var),
    WeightedBce { probs: Var, labels: Vec<S>, weights: Vec<S> },
}

#[derive(Debug)]
struct Node<S> {
    shape: Shape,
    value: Vec<S>,
    op: Op<S>,
    needs_grad: bool,
}

/// Records differentiable operations in evaluation order.
///
/// A tape is single-threaded and meant to be short-lived: build one per
/// forward pass, call [`Tape::backward`], read the gradients, drop it.
#[derive(Debug, Default)]
pub struct Tape<S> {
    nodes: Vec<Node<S>>,
}

/// Lower clamp for probabilities fed to a logarithm.
pub(crate) fn prob_floor<S: Scalar>() -> S {
    S::lit(1e-12).max(S::epsilon())
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A trainable leaf; gradients are accumulated for it.
    pub fn param(&mut self, tensor: &Tensor<S>) -> Var {
        self.leaf(tensor.shape(), tensor.values().to_vec(), true)
    }

    /// A constant leaf; no gradient flows into it.
    pub fn constant(&mut self, tensor: &Tensor<S>) -> Var {
        self.leaf(tensor.shape(), tensor.values().to_vec(), false)
    }

    pub fn constant_vector(&mut self, values: Vec<S>) -> Var {
        self.leaf(Shape::Vector(values.len()), values, false)
    }

    fn leaf(&mut self, shape: Shape, value: Vec<S>, needs_grad: bool) -> Var {
        self.nodes.push(Node { shape, value, op: Op::Leaf, needs_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, var: Var) -> &[S] {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> Shape {
        self.nodes[var.0].shape
    }

    /// The single value of a length-1 node.
    pub fn scalar(&self, var: Var) -> S {
        self.nodes[var.0].value[0]
    }

    fn needs(&self, var: Var) -> bool {
        self.nodes[var.0].needs_grad
    }

    fn push(&mut self, name: &'static str, shape: Shape, value: Vec<S>, op: Op<S>) -> Result<Var> {
        if value.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: name });
        }
        let needs_grad = match &op {
            Op::Leaf => false,
            Op::MatVec(a, b) | Op::Dot(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Scale(a, b) => {
                self.needs(*a) || self.needs(*b)
            }
            Op::Concat(parts) => parts.iter().any(|p| self.needs(*p)),
            Op::Slice(a, _) | Op::Tanh(a) | Op::Sigmoid(a) | Op::Softmax(a, _) | Op::Sum(a) | Op::Log(a) => {
                self.needs(*a)
            }
            Op::WeightedBce { probs, .. } => self.needs(*probs),
        };
        self.nodes.push(Node { shape, value, op, needs_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn vector_len(&self, op: &'static str, var: Var) -> Result<usize> {
        match self.shape(var) {
            Shape::Vector(n) => Ok(n),
            other => Err(Error::Shape { op, detail: format!("expected a vector, got {other:?}") }),
        }
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<Shape> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::Shape { op, detail: format!("{sa:?} vs {sb:?}") });
        }
        Ok(sa)
    }

    /// Matrix-vector product `m · x`.
    pub fn matvec(&mut self, m: Var, x: Var) -> Result<Var> {
        let (rows, cols) = match self.shape(m) {
            Shape::Matrix(r, c) => (r, c),
            other => return Err(Error::Shape { op: "matvec", detail: format!("left operand {other:?} is not a matrix") }),
        };
        let n = self.vector_len("matvec", x)?;
        if n != cols {
            return Err(Error::Shape { op: "matvec", detail: format!("matrix {rows}x{cols} times vector {n}") });
        }
        let (mv, xv) = (&self.nodes[m.0].value, &self.nodes[x.0].value);
        let out = mv
            .chunks_exact(cols)
            .map(|row| row.iter().zip(xv).fold(S::zero(), |acc, (&w, &v)| acc + w * v))
            .collect();
        self.push("matvec", Shape::Vector(rows), out, Op::MatVec(m, x))
    }

    /// Inner product of two vectors, as a length-1 vector.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.vector_len("dot", a)?;
        self.same_shape("dot", a, b)?;
        let out = self.value(a).iter().zip(self.value(b)).fold(S::zero(), |acc, (&x, &y)| acc + x * y);
        self.push("dot", Shape::Vector(1), vec![out], Op::Dot(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.same_shape("add", a, b)?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x + y).collect();
        self.push("add", shape, out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.same_shape("sub", a, b)?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x - y).collect();
        self.push("sub", shape, out, Op::Sub(a, b))
    }

    /// Element-wise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.same_shape("elementwise_mul", a, b)?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x * y).collect();
        self.push("elementwise_mul", shape, out, Op::Mul(a, b))
    }

    /// Multiplies every element of `a` by the length-1 node `k`.
    pub fn scale(&mut self, a: Var, k: Var) -> Result<Var> {
        if self.shape(k).len() != 1 {
            return Err(Error::Shape { op: "scale", detail: format!("factor has shape {:?}", self.shape(k)) });
        }
        let factor = self.scalar(k);
        let out = self.value(a).iter().map(|&x| x * factor).collect();
        self.push("scale", self.shape(a), out, Op::Scale(a, k))
    }

    /// Concatenates vectors end to end.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let mut out = Vec::new();
        for &p in parts {
            self.vector_len("concat", p)?;
            out.extend_from_slice(self.value(p));
        }
        self.push("concat", Shape::Vector(out.len()), out, Op::Concat(parts.to_vec()))
    }

    /// Contiguous sub-vector `a[start..start + len]`.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let n = self.vector_len("slice", a)?;
        if start + len > n {
            return Err(Error::Shape { op: "slice", detail: format!("range {start}..{} of vector {n}", start + len) });
        }
        let out = self.value(a)[start..start + len].to_vec();
        self.push("slice", Shape::Vector(len), out, Op::Slice(a, start))
    }

    /// Element `i` of a vector as a length-1 vector.
    pub fn pick(&mut self, a: Var, i: usize) -> Result<Var> {
        self.slice(a, i, 1)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).iter().map(|x| x.tanh()).collect();
        self.push("tanh", self.shape(a), out, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).iter().map(|&x| sigmoid(x)).collect();
        self.push("sigmoid", self.shape(a), out, Op::Sigmoid(a))
    }

    /// Softmax along `axis` (ignored for vectors).
    pub fn softmax(&mut self, a: Var, axis: Axis) -> Result<Var> {
        let shape = self.shape(a);
        let mut out = self.value(a).to_vec();
        for group in softmax_groups(shape, axis) {
            let max = group.iter().map(|&i| out[i]).fold(S::neg_infinity(), S::max);
            let mut total = S::zero();
            for &i in &group {
                out[i] = (out[i] - max).exp();
                total += out[i];
            }
            for &i in &group {
                out[i] /= total;
            }
        }
        self.push("softmax_over_axis", shape, out, Op::Softmax(a, axis))
    }

    /// Sum of all elements, as a length-1 vector.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let total = self.value(a).iter().copied().sum();
        self.push("sum", Shape::Vector(1), vec![total], Op::Sum(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).iter().map(|x| x.ln()).collect();
        self.push("log", self.shape(a), out, Op::Log(a))
    }

    /// Positive-class-weighted binary cross-entropy summed over labels:
    /// `-sum_l (w_l y_l ln p_l + (1 - y_l) ln(1 - p_l))`, with `p` clamped
    /// away from 0 and 1.
    pub fn weighted_bce(&mut self, probs: Var, labels: &[S], weights: &[S]) -> Result<Var> {
        let n = self.vector_len("weighted_bce", probs)?;
        if labels.len() != n || weights.len() != n {
            return Err(Error::Shape {
                op: "weighted_bce",
                detail: format!("{n} probabilities, {} labels, {} weights", labels.len(), weights.len()),
            });
        }
        let total = weighted_bce_value(self.value(probs), labels, weights);
        self.push(
            "weighted_bce",
            Shape::Vector(1),
            vec![total],
            Op::WeightedBce { probs, labels: labels.to_vec(), weights: weights.to_vec() },
        )
    }

    /// Reverse accumulation from the length-1 node `output`. Operations are
    /// visited in exact reverse order of recording.
    pub fn backward(&self, output: Var) -> Result<Gradients<S>> {
        if self.shape(output).len() != 1 {
            return Err(Error::Shape { op: "backward", detail: format!("output shape {:?} is not scalar", self.shape(output)) });
        }
        let mut grads: Vec<Option<Vec<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(vec![S::one()]);
        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.needs_grad {
                self.propagate(node, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node<S>, g: &[S], grads: &mut [Option<Vec<S>>]) {
        let mut acc = |var: Var, f: &mut dyn FnMut(&mut [S])| {
            if self.nodes[var.0].needs_grad {
                let slot = grads[var.0].get_or_insert_with(|| vec![S::zero(); self.nodes[var.0].value.len()]);
                f(slot);
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatVec(m, x) => {
                let (mv, xv) = (self.value(*m), self.value(*x));
                let cols = xv.len();
                acc(*m, &mut |gm| {
                    for (r, &gr) in g.iter().enumerate() {
                        if gr != S::zero() {
                            for (slot, &xj) in gm[r * cols..(r + 1) * cols].iter_mut().zip(xv) {
                                *slot += gr * xj;
                            }
                        }
                    }
                });
                acc(*x, &mut |gx| {
                    for (r, &gr) in g.iter().enumerate() {
                        for (slot, &w) in gx.iter_mut().zip(&mv[r * cols..(r + 1) * cols]) {
                            *slot += gr * w;
                        }
                    }
                });
            }
            Op::Dot(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                acc(*a, &mut |ga| ga.iter_mut().zip(bv).for_each(|(s, &y)| *s += g[0] * y));
                acc(*b, &mut |gb| gb.iter_mut().zip(av).for_each(|(s, &x)| *s += g[0] * x));
            }
            Op::Add(a, b) => {
                acc(*a, &mut |ga| ga.iter_mut().zip(g).for_each(|(s, &gi)| *s += gi));
                acc(*b, &mut |gb| gb.iter_mut().zip(g).for_each(|(s, &gi)| *s += gi));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |ga| ga.iter_mut().zip(g).for_each(|(s, &gi)| *s += gi));
                acc(*b, &mut |gb| gb.iter_mut().zip(g).for_each(|(s, &gi)| *s -= gi));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                acc(*a, &mut |ga| ga.iter_mut().zip(g.iter().zip(bv)).for_each(|(s, (&gi, &y))| *s += gi * y));
                acc(*b, &mut |gb| gb.iter_mut().zip(g.iter().zip(av)).for_each(|(s, (&gi, &x))| *s += gi * x));
            }
            Op::Scale(a, k) => {
                let (av, factor) = (self.value(*a), self.scalar(*k));
                acc(*a, &mut |ga| ga.iter_mut().zip(g).for_each(|(s, &gi)| *s += gi * factor));
                acc(*k, &mut |gk| gk[0] += g.iter().zip(av).fold(S::zero(), |t, (&gi, &x)| t + gi * x));
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.nodes[p.0].value.len();
                    acc(p, &mut |gp| gp.iter_mut().zip(&g[offset..offset + n]).for_each(|(s, &gi)| *s += gi));
                    offset += n;
                }
            }
            Op::Slice(a, start) => {
                let start = *start;
                acc(*a, &mut |ga| ga[start..start + g.len()].iter_mut().zip(g).for_each(|(s, &gi)| *s += gi));
            }
            Op::Tanh(a) => {
                let y = &node.value;
                acc(*a, &mut |ga| {
                    ga.iter_mut().zip(g.iter().zip(y)).for_each(|(s, (&gi, &yi))| *s += gi * (S::one() - yi * yi))
                });
            }
            Op::Sigmoid(a) => {
                let y = &node.value;
                acc(*a, &mut |ga| {
                    ga.iter_mut().zip(g.iter().zip(y)).for_each(|(s, (&gi, &yi))| *s += gi * yi * (S::one() - yi))
                });
            }
            Op::Softmax(a, axis) => {
                let y = &node.value;
                acc(*a, &mut |ga| {
                    for group in softmax_groups(node.shape, *axis) {
                        let inner = group.iter().fold(S::zero(), |t, &i| t + g[i] * y[i]);
                        for &i in &group {
                            ga[i] += y[i] * (g[i] - inner);
                        }
                    }
                });
            }
            Op::Sum(a) => acc(*a, &mut |ga| ga.iter_mut().for_each(|s| *s += g[0])),
            Op::Log(a) => {
                let av = self.value(*a);
                acc(*a, &mut |ga| ga.iter_mut().zip(g.iter().zip(av)).for_each(|(s, (&gi, &x))| *s += gi / x));
            }
            Op::WeightedBce { probs, labels, weights } => {
                let pv = self.value(*probs);
                let lo = prob_floor::<S>();
                let hi = S::one() - lo;
                acc(*probs, &mut |gp| {
                    for (l, slot) in gp.iter_mut().enumerate() {
                        let p = pv[l];
                        if p < lo || p > hi {
                            continue;
                        }
                        let d = -weights[l] * labels[l] / p + (S::one() - labels[l]) / (S::one() - p);
                        *slot += g[0] * d;
                    }
                });
            }
        }
    }
}

/// Value of the clamped weighted binary cross-entropy, summed over labels.
pub(crate) fn weighted_bce_value<S: Scalar>(probs: &[S], labels: &[S], weights: &[S]) -> S {
    let lo = prob_floor::<S>();
    let hi = S::one() - lo;
    let mut total = S::zero();
    for ((&p, &y), &w) in probs.iter().zip(labels).zip(weights) {
        let p = p.max(lo).min(hi);
        total -= w * y * p.ln() + (S::one() - y) * (S::one() - p).ln();
    }
    total
}

pub(crate) fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

fn softmax_groups(shape: Shape, axis: Axis) -> Vec<Vec<usize>> {
    match (shape, axis) {
        (Shape::Vector(n), _) => vec![(0..n).collect()],
        (Shape::Matrix(r, c), Axis::Cols) => (0..r).map(|i| (i * c..(i + 1) * c).collect()).collect(),
        (Shape::Matrix(r, c), Axis::Rows) => (0..c).map(|j| (0..r).map(|i| i * c + j).collect()).collect(),
    }
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients<S> {
    grads: Vec<Option<Vec<S>>>,
}

impl<S: Scalar> Gradients<S> {
    /// Gradient with respect to `var`, or `None` when nothing flowed into it.
    pub fn get(&self, var: Var) -> Option<&[S]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    /// Gradient with respect to `var`, zero-filled when absent.
    pub fn wrt(&self, tape: &Tape<S>, var: Var) -> Vec<S> {
        self.get(var).map(<[S]>::to_vec).unwrap_or_else(|| vec![S::zero(); tape.value(var).len()])
    }
}
