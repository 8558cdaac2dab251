//! Reverse-mode automatic differentiation on a linear tape.
//!
//! Every operation appends one node holding its output value; `backward`
//! consumes the tape, replaying nodes in reverse creation order (which is a
//! valid topological order by construction) and returns the gradients of all
//! reachable leaves.

use super::conv::{self, ConvDims};
use super::{checked_numel, strides_of, Element, Tensor};
use crate::error::{Error, Result};

/// Handle to a value on a [`Tape`]. Only meaningful for the tape that
/// created it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum EwKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy)]
enum ScalarKind<T> {
    AddC(T),
    MulC(T),
    /// max(x, c); gradient flows only where x > c
    ClampMin(T),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum ReduceKind {
    Sum,
    Mean,
    Max,
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Elementwise { kind: EwKind, a: usize, b: usize },
    Scalar { kind: ScalarKind<T>, a: usize },
    Matmul { a: usize, b: usize },
    Conv2d { x: usize, w: usize, dims: ConvDims },
    Reduce { kind: ReduceKind, x: usize, axes: Vec<usize>, keepdims: bool },
    Relu { x: usize },
    Gelu { x: usize },
    Softmax { x: usize, axis: usize },
    Sqrt { x: usize },
    Permute { x: usize, axes: Vec<usize> },
    Reshape { x: usize },
    Concat { parts: Vec<usize>, axis: usize },
}

struct Node<T: Element> {
    op: Op<T>,
    value: Tensor<T>,
    requires: bool,
}

/// Computation tape. Confined to one worker; independent tapes may run in
/// parallel.
pub struct Tape<T: Element> {
    nodes: Vec<Node<T>>,
}

/// Leaf gradients extracted by [`Tape::backward`].
pub struct Gradients<T: Element> {
    slots: Vec<Option<Tensor<T>>>,
}

impl<T: Element> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.slots.get(var.0).and_then(|s| s.as_ref())
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor<T>> {
        self.slots.get_mut(var.0).and_then(|s| s.take())
    }
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Register a leaf value. Gradients are produced for it iff
    /// `requires_grad`.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(Op::Leaf, value, requires_grad)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>, requires: bool) -> Var {
        self.nodes.push(Node { op, value, requires });
        Var(self.nodes.len() - 1)
    }

    fn check(&self, var: Var, op: &'static str) -> Result<()> {
        if var.0 >= self.nodes.len() {
            return Err(Error::arg(op, format!("var {} is not on this tape", var.0)));
        }
        Ok(())
    }

    // ── elementwise ─────────────────────────────────────────────────────

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(EwKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(EwKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(EwKind::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(EwKind::Div, a, b)
    }

    fn elementwise(&mut self, kind: EwKind, a: Var, b: Var) -> Result<Var> {
        self.check(a, "elementwise")?;
        self.check(b, "elementwise")?;
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let out_shape = broadcast_shape(av.shape(), bv.shape()).ok_or(Error::ShapeMismatch {
            op: "elementwise",
            lhs: av.shape().to_vec(),
            rhs: bv.shape().to_vec(),
        })?;
        let value = apply_elementwise(kind, av, bv, &out_shape);
        let requires = self.nodes[a.0].requires || self.nodes[b.0].requires;
        Ok(self.push(Op::Elementwise { kind, a: a.0, b: b.0 }, value, requires))
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Result<Var> {
        self.scalar_op(ScalarKind::AddC(c), a)
    }

    pub fn mul_scalar(&mut self, a: Var, c: T) -> Result<Var> {
        self.scalar_op(ScalarKind::MulC(c), a)
    }

    /// Elementwise max(x, c).
    pub fn clamp_min(&mut self, a: Var, c: T) -> Result<Var> {
        self.scalar_op(ScalarKind::ClampMin(c), a)
    }

    fn scalar_op(&mut self, kind: ScalarKind<T>, a: Var) -> Result<Var> {
        self.check(a, "scalar_op")?;
        let av = &self.nodes[a.0].value;
        let value = match kind {
            ScalarKind::AddC(c) => av.map(|x| x + c),
            ScalarKind::MulC(c) => av.map(|x| x * c),
            ScalarKind::ClampMin(c) => av.map(|x| x.max_val(c)),
        };
        let requires = self.nodes[a.0].requires;
        Ok(self.push(Op::Scalar { kind, a: a.0 }, value, requires))
    }

    // ── matmul ──────────────────────────────────────────────────────────

    /// Matrix product. Accepts 2D·2D, 3D·3D with equal leading group
    /// dimension, and 3D·2D (the right operand broadcast over groups).
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a, "matmul")?;
        self.check(b, "matmul")?;
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let (g, m, k, n) = matmul_dims(av.shape(), bv.shape())?;
        let value = matmul_forward(av, bv, g, m, k, n);
        let requires = self.nodes[a.0].requires || self.nodes[b.0].requires;
        Ok(self.push(Op::Matmul { a: a.0, b: b.0 }, value, requires))
    }

    // ── convolution ─────────────────────────────────────────────────────

    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, padding: usize) -> Result<Var> {
        self.check(x, "conv2d")?;
        self.check(w, "conv2d")?;
        let (xv, wv) = (&self.nodes[x.0].value, &self.nodes[w.0].value);
        let dims = conv::conv_dims(xv.shape(), wv.shape(), stride, padding)?;
        let data = conv::forward(xv.data(), wv.data(), &dims);
        let value = Tensor::new(
            vec![dims.batch, dims.out_ch, dims.out_h, dims.out_w],
            data,
        )?;
        let requires = self.nodes[x.0].requires || self.nodes[w.0].requires;
        Ok(self.push(Op::Conv2d { x: x.0, w: w.0, dims }, value, requires))
    }

    // ── reductions ──────────────────────────────────────────────────────

    pub fn sum(&mut self, x: Var, axes: &[usize], keepdims: bool) -> Result<Var> {
        self.reduce(ReduceKind::Sum, x, axes, keepdims)
    }

    pub fn mean(&mut self, x: Var, axes: &[usize], keepdims: bool) -> Result<Var> {
        self.reduce(ReduceKind::Mean, x, axes, keepdims)
    }

    pub fn max(&mut self, x: Var, axes: &[usize], keepdims: bool) -> Result<Var> {
        self.reduce(ReduceKind::Max, x, axes, keepdims)
    }

    /// Mean over every axis, producing a scalar.
    pub fn mean_all(&mut self, x: Var) -> Result<Var> {
        let axes: Vec<usize> = (0..self.nodes[x.0].value.ndim()).collect();
        self.mean(x, &axes, false)
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let axes: Vec<usize> = (0..self.nodes[x.0].value.ndim()).collect();
        self.sum(x, &axes, false)
    }

    fn reduce(&mut self, kind: ReduceKind, x: Var, axes: &[usize], keepdims: bool) -> Result<Var> {
        self.check(x, "reduce")?;
        let xv = &self.nodes[x.0].value;
        // An empty axis set is the identity.
        if axes.is_empty() {
            let value = xv.clone();
            let requires = self.nodes[x.0].requires;
            return Ok(self.push(Op::Reshape { x: x.0 }, value, requires));
        }
        let mut sorted = axes.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != axes.len() {
            return Err(Error::arg("reduce", format!("duplicate axes in {axes:?}")));
        }
        if let Some(&bad) = sorted.iter().find(|&&a| a >= xv.ndim()) {
            return Err(Error::arg(
                "reduce",
                format!("axis {bad} out of range for shape {:?}", xv.shape()),
            ));
        }
        let value = reduce_forward(kind, xv, &sorted, keepdims);
        let requires = self.nodes[x.0].requires;
        Ok(self.push(
            Op::Reduce { kind, x: x.0, axes: sorted, keepdims },
            value,
            requires,
        ))
    }

    // ── activations ─────────────────────────────────────────────────────

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.check(x, "relu")?;
        let value = self.nodes[x.0].value.map(|v| v.max_val(T::ZERO));
        let requires = self.nodes[x.0].requires;
        Ok(self.push(Op::Relu { x: x.0 }, value, requires))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        self.check(x, "gelu")?;
        let value = self.nodes[x.0].value.map(gelu_scalar);
        let requires = self.nodes[x.0].requires;
        Ok(self.push(Op::Gelu { x: x.0 }, value, requires))
    }

    /// Softmax along `axis`, computed with max subtraction.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check(x, "softmax")?;
        let xv = &self.nodes[x.0].value;
        if axis >= xv.ndim() {
            return Err(Error::arg(
                "softmax",
                format!("axis {axis} out of range for shape {:?}", xv.shape()),
            ));
        }
        let value = softmax_forward(xv, axis);
        let requires = self.nodes[x.0].requires;
        Ok(self.push(Op::Softmax { x: x.0, axis }, value, requires))
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        self.check(x, "sqrt")?;
        let value = self.nodes[x.0].value.map(|v| v.sqrt());
        let requires = self.nodes[x.0].requires;
        Ok(self.push(Op::Sqrt { x: x.0 }, value, requires))
    }

    // ── shape ───────────────────────────────────────────────────────────

    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        self.check(x, "permute")?;
        let xv = &self.nodes[x.0].value;
        let mut seen = vec![false; xv.ndim()];
        if axes.len() != xv.ndim()
            || axes.iter().any(|&a| a >= xv.ndim() || std::mem::replace(&mut seen[a], true))
        {
            return Err(Error::arg(
                "permute",
                format!("{axes:?} is not a permutation of axes of {:?}", xv.shape()),
            ));
        }
        let value = permute_tensor(xv, axes);
        let requires = self.nodes[x.0].requires;
        Ok(self.push(Op::Permute { x: x.0, axes: axes.to_vec() }, value, requires))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        self.check(x, "reshape")?;
        let xv = &self.nodes[x.0].value;
        let n = checked_numel(shape)?;
        if n != xv.numel() {
            return Err(Error::arg(
                "reshape",
                format!("cannot view {:?} as {shape:?}", xv.shape()),
            ));
        }
        let value = Tensor::new(shape.to_vec(), xv.data().to_vec())?;
        let requires = self.nodes[x.0].requires;
        Ok(self.push(Op::Reshape { x: x.0 }, value, requires))
    }

    /// Concatenate along `axis`; all other extents must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::arg("concat", "no inputs"));
        }
        for &p in parts {
            self.check(p, "concat")?;
        }
        let first = self.nodes[parts[0].0].value.shape().to_vec();
        if axis >= first.len() {
            return Err(Error::arg(
                "concat",
                format!("axis {axis} out of range for shape {first:?}"),
            ));
        }
        let mut out_shape = first.clone();
        out_shape[axis] = 0;
        for &p in parts {
            let s = self.nodes[p.0].value.shape();
            if s.len() != first.len()
                || s.iter()
                    .zip(&first)
                    .enumerate()
                    .any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: first.clone(),
                    rhs: s.to_vec(),
                });
            }
            out_shape[axis] += s[axis];
        }
        let tensors: Vec<&Tensor<T>> = parts.iter().map(|&p| &self.nodes[p.0].value).collect();
        let value = concat_forward(&tensors, axis, &out_shape);
        let requires = parts.iter().any(|&p| self.nodes[p.0].requires);
        Ok(self.push(
            Op::Concat { parts: parts.iter().map(|p| p.0).collect(), axis },
            value,
            requires,
        ))
    }

    // ── backward ────────────────────────────────────────────────────────

    /// Consume the tape, propagating gradients from the scalar `loss` back
    /// to every reachable leaf.
    pub fn backward(mut self, loss: Var) -> Result<Gradients<T>> {
        self.check(loss, "backward")?;
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::arg(
                "backward",
                format!(
                    "loss must be scalar, got shape {:?}",
                    self.nodes[loss.0].value.shape()
                ),
            ));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::new(
            self.nodes[loss.0].value.shape().to_vec(),
            vec![T::ONE],
        )?);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires {
                grads[i] = None;
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Leaf => {
                    grads[i] = Some(g); // keep leaf gradients
                }
                op => {
                    let op = op.clone();
                    self.backprop_node(&op, &g, &mut grads);
                }
            }
        }
        Ok(Gradients { slots: grads })
    }

    fn backprop_node(&self, op: &Op<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        match op {
            Op::Leaf => unreachable!("leaves have no inputs"),
            Op::Elementwise { kind, a, b } => {
                let (av, bv) = (&self.nodes[*a].value, &self.nodes[*b].value);
                if self.nodes[*a].requires {
                    let da_full = match kind {
                        EwKind::Add | EwKind::Sub => g.clone(),
                        EwKind::Mul => apply_elementwise(EwKind::Mul, g, bv, g.shape()),
                        EwKind::Div => apply_elementwise(EwKind::Div, g, bv, g.shape()),
                    };
                    accumulate(grads, *a, reduce_to_shape(&da_full, av.shape()));
                }
                if self.nodes[*b].requires {
                    let db_full = match kind {
                        EwKind::Add => g.clone(),
                        EwKind::Sub => g.map(|x| -x),
                        EwKind::Mul => apply_elementwise(EwKind::Mul, g, av, g.shape()),
                        EwKind::Div => {
                            // d(a/b)/db = -a / b^2
                            let a_over_b2 = {
                                let b2 = apply_elementwise(EwKind::Mul, bv, bv, bv.shape());
                                apply_elementwise(EwKind::Div, av, &b2, g.shape())
                            };
                            let t = apply_elementwise(EwKind::Mul, g, &a_over_b2, g.shape());
                            t.map(|x| -x)
                        }
                    };
                    accumulate(grads, *b, reduce_to_shape(&db_full, bv.shape()));
                }
            }
            Op::Scalar { kind, a } => {
                if self.nodes[*a].requires {
                    let da = match kind {
                        ScalarKind::AddC(_) => g.clone(),
                        ScalarKind::MulC(c) => g.map(|x| x * *c),
                        ScalarKind::ClampMin(c) => {
                            let xv = &self.nodes[*a].value;
                            let mut out = g.clone();
                            for (o, &x) in out.data_mut().iter_mut().zip(xv.data()) {
                                if !(x > *c) {
                                    *o = T::ZERO;
                                }
                            }
                            out
                        }
                    };
                    accumulate(grads, *a, da);
                }
            }
            Op::Matmul { a, b } => {
                let (av, bv) = (&self.nodes[*a].value, &self.nodes[*b].value);
                let (grp, m, k, n) = matmul_dims(av.shape(), bv.shape()).expect("checked");
                if self.nodes[*a].requires {
                    accumulate(grads, *a, matmul_grad_a(g, bv, av.shape(), grp, m, k, n));
                }
                if self.nodes[*b].requires {
                    accumulate(grads, *b, matmul_grad_b(g, av, bv.shape(), grp, m, k, n));
                }
            }
            Op::Conv2d { x, w, dims } => {
                let (xv, wv) = (&self.nodes[*x].value, &self.nodes[*w].value);
                if self.nodes[*x].requires {
                    let dx = conv::backward_dx(g.data(), wv.data(), dims);
                    accumulate(
                        grads,
                        *x,
                        Tensor::new(xv.shape().to_vec(), dx).expect("shape"),
                    );
                }
                if self.nodes[*w].requires {
                    let dw = conv::backward_dw(g.data(), xv.data(), dims);
                    accumulate(
                        grads,
                        *w,
                        Tensor::new(wv.shape().to_vec(), dw).expect("shape"),
                    );
                }
            }
            Op::Reduce { kind, x, axes, keepdims } => {
                if self.nodes[*x].requires {
                    let xv = &self.nodes[*x].value;
                    let dx = reduce_backward(*kind, xv, g, axes, *keepdims);
                    accumulate(grads, *x, dx);
                }
            }
            Op::Relu { x } => {
                if self.nodes[*x].requires {
                    let xv = &self.nodes[*x].value;
                    let mut dx = g.clone();
                    for (o, &v) in dx.data_mut().iter_mut().zip(xv.data()) {
                        if !(v > T::ZERO) {
                            *o = T::ZERO;
                        }
                    }
                    accumulate(grads, *x, dx);
                }
            }
            Op::Gelu { x } => {
                if self.nodes[*x].requires {
                    let xv = &self.nodes[*x].value;
                    let mut dx = g.clone();
                    for (o, &v) in dx.data_mut().iter_mut().zip(xv.data()) {
                        *o = *o * gelu_grad_scalar(v);
                    }
                    accumulate(grads, *x, dx);
                }
            }
            Op::Softmax { x, axis } => {
                if self.nodes[*x].requires {
                    // y is this node's output; find it by recomputing from x
                    let y = softmax_forward(&self.nodes[*x].value, *axis);
                    let dx = softmax_backward(&y, g, *axis);
                    accumulate(grads, *x, dx);
                }
            }
            Op::Sqrt { x } => {
                if self.nodes[*x].requires {
                    let xv = &self.nodes[*x].value;
                    let half = T::from_f64(0.5);
                    let mut dx = g.clone();
                    for (o, &v) in dx.data_mut().iter_mut().zip(xv.data()) {
                        *o = *o * half / v.sqrt();
                    }
                    accumulate(grads, *x, dx);
                }
            }
            Op::Permute { x, axes } => {
                if self.nodes[*x].requires {
                    let mut inverse = vec![0usize; axes.len()];
                    for (i, &a) in axes.iter().enumerate() {
                        inverse[a] = i;
                    }
                    accumulate(grads, *x, permute_tensor(g, &inverse));
                }
            }
            Op::Reshape { x } => {
                if self.nodes[*x].requires {
                    let target = self.nodes[*x].value.shape().to_vec();
                    let dx = Tensor::new(target, g.data().to_vec()).expect("same numel");
                    accumulate(grads, *x, dx);
                }
            }
            Op::Concat { parts, axis } => {
                let out_strides = strides_of(g.shape());
                let outer: usize = g.shape()[..*axis].iter().product();
                let inner = out_strides[*axis];
                let mut offset = 0;
                for &p in parts {
                    let pv = &self.nodes[p].value;
                    let extent = pv.shape()[*axis];
                    if self.nodes[p].requires {
                        let mut dx = Tensor::zeros(pv.shape());
                        for o in 0..outer {
                            let src_base = o * g.shape()[*axis] * inner + offset * inner;
                            let dst_base = o * extent * inner;
                            let len = extent * inner;
                            dx.data_mut()[dst_base..dst_base + len]
                                .copy_from_slice(&g.data()[src_base..src_base + len]);
                        }
                        accumulate(grads, p, dx);
                    }
                    offset += extent;
                }
            }
        }
    }
}

fn accumulate<T: Element>(grads: &mut [Option<Tensor<T>>], slot: usize, delta: Tensor<T>) {
    match &mut grads[slot] {
        Some(existing) => {
            for (a, &d) in existing.data_mut().iter_mut().zip(delta.data()) {
                *a = *a + d;
            }
        }
        empty => *empty = Some(delta),
    }
}

// ── broadcasting ────────────────────────────────────────────────────────

/// Output shape of a broadcast binary op, or None if incompatible. Shapes
/// are right-aligned; extents must match or be 1.
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let nd = a.len().max(b.len());
    let mut out = vec![0; nd];
    for i in 0..nd {
        let da = if i < nd - a.len() { 1 } else { a[i - (nd - a.len())] };
        let db = if i < nd - b.len() { 1 } else { b[i - (nd - b.len())] };
        if da != db && da != 1 && db != 1 {
            return None;
        }
        out[i] = da.max(db);
    }
    Some(out)
}

fn ew_apply<T: Element>(kind: EwKind, a: T, b: T) -> T {
    match kind {
        EwKind::Add => a + b,
        EwKind::Sub => a - b,
        EwKind::Mul => a * b,
        EwKind::Div => a / b,
    }
}

fn apply_elementwise<T: Element>(
    kind: EwKind,
    a: &Tensor<T>,
    b: &Tensor<T>,
    out_shape: &[usize],
) -> Tensor<T> {
    if a.shape() == b.shape() {
        let data = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| ew_apply(kind, x, y))
            .collect();
        return Tensor::new(out_shape.to_vec(), data).expect("same shape");
    }
    if b.numel() == 1 {
        let c = b.data()[0];
        return Tensor::new(
            out_shape.to_vec(),
            a.data().iter().map(|&x| ew_apply(kind, x, c)).collect(),
        )
        .expect("scalar rhs");
    }
    if a.numel() == 1 {
        let c = a.data()[0];
        return Tensor::new(
            out_shape.to_vec(),
            b.data().iter().map(|&y| ew_apply(kind, c, y)).collect(),
        )
        .expect("scalar lhs");
    }
    // hot path: [B,C,H,W] against per-channel [1,C,1,1]
    if a.ndim() == 4 && b.shape() == [1, a.shape()[1], 1, 1] {
        let (bs, cs, plane) = (a.shape()[0], a.shape()[1], a.shape()[2] * a.shape()[3]);
        let mut data = Vec::with_capacity(a.numel());
        for bi in 0..bs {
            for c in 0..cs {
                let cv = b.data()[c];
                let src = &a.data()[(bi * cs + c) * plane..(bi * cs + c + 1) * plane];
                data.extend(src.iter().map(|&x| ew_apply(kind, x, cv)));
            }
        }
        return Tensor::new(out_shape.to_vec(), data).expect("channel rhs");
    }
    // hot path: [.., N] against a length-N vector (bias rows)
    if b.ndim() == 1 && a.ndim() >= 1 && *a.shape().last().unwrap() == b.numel() {
        let n = b.numel();
        let mut data = Vec::with_capacity(a.numel());
        for row in a.data().chunks_exact(n) {
            data.extend(row.iter().zip(b.data()).map(|(&x, &y)| ew_apply(kind, x, y)));
        }
        return Tensor::new(out_shape.to_vec(), data).expect("row rhs");
    }
    // general case: odometer walk with broadcast-aware strides
    let nd = out_shape.len();
    let sa = broadcast_strides(a.shape(), nd, out_shape);
    let sb = broadcast_strides(b.shape(), nd, out_shape);
    let n: usize = out_shape.iter().product();
    let mut data = Vec::with_capacity(n);
    let mut coord = vec![0usize; nd];
    let (mut oa, mut ob) = (0usize, 0usize);
    for _ in 0..n {
        data.push(ew_apply(kind, a.data()[oa], b.data()[ob]));
        // increment odometer from the last axis
        for d in (0..nd).rev() {
            coord[d] += 1;
            oa += sa[d];
            ob += sb[d];
            if coord[d] < out_shape[d] {
                break;
            }
            coord[d] = 0;
            oa -= sa[d] * out_shape[d];
            ob -= sb[d] * out_shape[d];
        }
    }
    Tensor::new(out_shape.to_vec(), data).expect("broadcast shape")
}

/// Strides into `shape` when iterated as `out_shape`; broadcast axes get 0.
fn broadcast_strides(shape: &[usize], nd: usize, out_shape: &[usize]) -> Vec<usize> {
    let native = strides_of(shape);
    let offset = nd - shape.len();
    (0..nd)
        .map(|i| {
            if i < offset || shape[i - offset] == 1 {
                0
            } else {
                debug_assert_eq!(shape[i - offset], out_shape[i]);
                native[i - offset]
            }
        })
        .collect()
}

/// Sum `g` down to `target` shape (inverse of broadcasting).
fn reduce_to_shape<T: Element>(g: &Tensor<T>, target: &[usize]) -> Tensor<T> {
    if g.shape() == target {
        return g.clone();
    }
    if g.ndim() == 4 && target == [1, g.shape()[1], 1, 1] {
        let (bs, cs, plane) = (g.shape()[0], g.shape()[1], g.shape()[2] * g.shape()[3]);
        let mut out = Tensor::zeros(target);
        for bi in 0..bs {
            for c in 0..cs {
                let src = &g.data()[(bi * cs + c) * plane..(bi * cs + c + 1) * plane];
                let s: T = src.iter().copied().sum();
                out.data_mut()[c] = out.data_mut()[c] + s;
            }
        }
        return out;
    }
    if target.len() == 1 && *g.shape().last().unwrap() == target[0] {
        let n = target[0];
        let mut out = Tensor::zeros(target);
        for row in g.data().chunks_exact(n) {
            for (acc, &v) in out.data_mut().iter_mut().zip(row) {
                *acc = *acc + v;
            }
        }
        return out;
    }
    let nd = g.ndim();
    let strides_t = broadcast_strides(target, nd, g.shape());
    let n = g.numel();
    let mut out = Tensor::zeros(target);
    let mut coord = vec![0usize; nd];
    let mut ot = 0usize;
    let out_data = out.data_mut();
    for i in 0..n {
        out_data[ot] = out_data[ot] + g.data()[i];
        for d in (0..nd).rev() {
            coord[d] += 1;
            ot += strides_t[d];
            if coord[d] < g.shape()[d] {
                break;
            }
            coord[d] = 0;
            ot -= strides_t[d] * g.shape()[d];
        }
    }
    out
}

// ── matmul helpers ──────────────────────────────────────────────────────

/// Returns (groups, m, k, n); groups == 0 encodes plain 2D x 2D.
fn matmul_dims(a: &[usize], b: &[usize]) -> Result<(usize, usize, usize, usize)> {
    match (a.len(), b.len()) {
        (2, 2) => {
            if a[1] != b[0] {
                return Err(Error::ShapeMismatch { op: "matmul", lhs: a.to_vec(), rhs: b.to_vec() });
            }
            Ok((0, a[0], a[1], b[1]))
        }
        (3, 3) => {
            if a[0] != b[0] || a[2] != b[1] {
                return Err(Error::ShapeMismatch { op: "matmul", lhs: a.to_vec(), rhs: b.to_vec() });
            }
            Ok((a[0], a[1], a[2], b[2]))
        }
        (3, 2) => {
            if a[2] != b[0] {
                return Err(Error::ShapeMismatch { op: "matmul", lhs: a.to_vec(), rhs: b.to_vec() });
            }
            Ok((a[0], a[1], a[2], b[1]))
        }
        _ => Err(Error::arg(
            "matmul",
            format!("unsupported ranks {}x{}", a.len(), b.len()),
        )),
    }
}

fn matmul_forward<T: Element>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    g: usize,
    m: usize,
    k: usize,
    n: usize,
) -> Tensor<T> {
    let groups = g.max(1);
    let b_grouped = b.ndim() == 3;
    let mut out = vec![T::ZERO; groups * m * n];
    for gi in 0..groups {
        let a_off = gi * m * k;
        let b_off = if b_grouped { gi * k * n } else { 0 };
        mm(
            &a.data()[a_off..a_off + m * k],
            &b.data()[b_off..b_off + k * n],
            &mut out[gi * m * n..(gi + 1) * m * n],
            m,
            k,
            n,
        );
    }
    let shape = if g == 0 { vec![m, n] } else { vec![g, m, n] };
    Tensor::new(shape, out).expect("matmul shape")
}

/// dA = dC · B^T, per group.
fn matmul_grad_a<T: Element>(
    g: &Tensor<T>,
    b: &Tensor<T>,
    a_shape: &[usize],
    grp: usize,
    m: usize,
    k: usize,
    n: usize,
) -> Tensor<T> {
    let groups = grp.max(1);
    let b_grouped = b.ndim() == 3;
    let mut bt = vec![T::ZERO; k * n];
    let mut out = vec![T::ZERO; groups * m * k];
    for gi in 0..groups {
        let b_off = if b_grouped { gi * k * n } else { 0 };
        if gi == 0 || b_grouped {
            transpose_into(&b.data()[b_off..b_off + k * n], &mut bt, k, n);
        }
        mm(
            &g.data()[gi * m * n..(gi + 1) * m * n],
            &bt,
            &mut out[gi * m * k..(gi + 1) * m * k],
            m,
            n,
            k,
        );
    }
    Tensor::new(a_shape.to_vec(), out).expect("grad_a shape")
}

/// dB = A^T · dC; with a shared rhs the group contributions accumulate.
fn matmul_grad_b<T: Element>(
    g: &Tensor<T>,
    a: &Tensor<T>,
    b_shape: &[usize],
    grp: usize,
    m: usize,
    k: usize,
    n: usize,
) -> Tensor<T> {
    let groups = grp.max(1);
    let b_grouped = b_shape.len() == 3;
    let mut at = vec![T::ZERO; k * m];
    let mut out = vec![T::ZERO; if b_grouped { groups * k * n } else { k * n }];
    for gi in 0..groups {
        transpose_into(&a.data()[gi * m * k..(gi + 1) * m * k], &mut at, m, k);
        let dst = if b_grouped {
            &mut out[gi * k * n..(gi + 1) * k * n]
        } else {
            &mut out[..]
        };
        mm(&at, &g.data()[gi * m * n..(gi + 1) * m * n], dst, k, m, n);
    }
    Tensor::new(b_shape.to_vec(), out).expect("grad_b shape")
}

fn transpose_into<T: Element>(src: &[T], dst: &mut [T], rows: usize, cols: usize) {
    for r in 0..rows {
        for c in 0..cols {
            dst[c * rows + r] = src[r * cols + c];
        }
    }
}

const MM_MR: usize = 4;
const MM_NR: usize = 16;

/// C += A·B with a 4x16 register tile; accumulation order per output
/// element is a fixed sequential walk over k.
pub(crate) fn mm<T: Element>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    let mut jb = 0;
    while jb < n {
        let nr = MM_NR.min(n - jb);
        let mut i = 0;
        if nr == MM_NR {
            while i + MM_MR <= m {
                let mut acc = [[T::ZERO; MM_NR]; MM_MR];
                for p in 0..k {
                    let b_row = &b[p * n + jb..p * n + jb + MM_NR];
                    for r in 0..MM_MR {
                        let av = a[(i + r) * k + p];
                        let accr = &mut acc[r];
                        for t in 0..MM_NR {
                            accr[t] = accr[t] + av * b_row[t];
                        }
                    }
                }
                for r in 0..MM_MR {
                    let c_row = &mut c[(i + r) * n + jb..(i + r) * n + jb + MM_NR];
                    for t in 0..MM_NR {
                        c_row[t] = c_row[t] + acc[r][t];
                    }
                }
                i += MM_MR;
            }
        }
        while i < m {
            let a_row = &a[i * k..(i + 1) * k];
            for p in 0..k {
                let av = a_row[p];
                let b_row = &b[p * n + jb..p * n + jb + nr];
                let c_row = &mut c[i * n + jb..i * n + jb + nr];
                for t in 0..nr {
                    c_row[t] = c_row[t] + av * b_row[t];
                }
            }
            i += 1;
        }
        jb += MM_NR;
    }
}

// ── reductions ──────────────────────────────────────────────────────────

fn reduced_shape(shape: &[usize], axes: &[usize], keepdims: bool) -> Vec<usize> {
    let mut out = Vec::new();
    for (i, &d) in shape.iter().enumerate() {
        if axes.contains(&i) {
            if keepdims {
                out.push(1);
            }
        } else {
            out.push(d);
        }
    }
    out
}

fn reduce_forward<T: Element>(
    kind: ReduceKind,
    x: &Tensor<T>,
    axes: &[usize],
    keepdims: bool,
) -> Tensor<T> {
    let out_shape = reduced_shape(x.shape(), axes, keepdims);
    let out_numel: usize = out_shape.iter().product::<usize>().max(1);
    let nd = x.ndim();
    // hot path: per-channel statistics over batch and spatial axes
    if nd == 4 && axes == [0, 2, 3] && kind != ReduceKind::Max {
        let (bs, cs, plane) = (x.shape()[0], x.shape()[1], x.shape()[2] * x.shape()[3]);
        let mut out = vec![T::ZERO; cs];
        for bi in 0..bs {
            for c in 0..cs {
                let src = &x.data()[(bi * cs + c) * plane..(bi * cs + c + 1) * plane];
                let s: T = src.iter().copied().sum();
                out[c] = out[c] + s;
            }
        }
        if kind == ReduceKind::Mean {
            let inv = T::ONE / T::from_f64((bs * plane) as f64);
            out.iter_mut().for_each(|v| *v = *v * inv);
        }
        return Tensor::new(out_shape, out).expect("channel reduce");
    }
    // hot path: reduction along the last axis (row statistics)
    if axes == [nd - 1] && kind != ReduceKind::Max {
        let n = *x.shape().last().unwrap();
        let mut out = Vec::with_capacity(x.numel() / n);
        for row in x.data().chunks_exact(n) {
            let s: T = row.iter().copied().sum();
            out.push(if kind == ReduceKind::Mean {
                s / T::from_f64(n as f64)
            } else {
                s
            });
        }
        return Tensor::new(out_shape, out).expect("row reduce");
    }
    // stride into the output for each input axis (0 on reduced axes)
    let kept: Vec<usize> = (0..nd).filter(|i| !axes.contains(i)).collect();
    let kept_shape: Vec<usize> = kept.iter().map(|&i| x.shape()[i]).collect();
    let kept_strides = strides_of(&kept_shape);
    let mut out_stride = vec![0usize; nd];
    for (j, &i) in kept.iter().enumerate() {
        out_stride[i] = kept_strides[j];
    }

    let reduce_count: usize = axes.iter().map(|&a| x.shape()[a]).product();
    let init = match kind {
        ReduceKind::Sum | ReduceKind::Mean => T::ZERO,
        ReduceKind::Max => T::from_f64(f64::NEG_INFINITY),
    };
    let mut out = vec![init; out_numel];
    let mut coord = vec![0usize; nd];
    let mut ot = 0usize;
    for i in 0..x.numel() {
        let v = x.data()[i];
        match kind {
            ReduceKind::Sum | ReduceKind::Mean => out[ot] = out[ot] + v,
            ReduceKind::Max => {
                if v > out[ot] {
                    out[ot] = v;
                }
            }
        }
        for d in (0..nd).rev() {
            coord[d] += 1;
            ot += out_stride[d];
            if coord[d] < x.shape()[d] {
                break;
            }
            coord[d] = 0;
            ot -= out_stride[d] * x.shape()[d];
        }
    }
    if kind == ReduceKind::Mean {
        let inv = T::ONE / T::from_f64(reduce_count as f64);
        for o in out.iter_mut() {
            *o = *o * inv;
        }
    }
    Tensor::new(out_shape, out).expect("reduce shape")
}

fn reduce_backward<T: Element>(
    kind: ReduceKind,
    x: &Tensor<T>,
    g: &Tensor<T>,
    axes: &[usize],
    _keepdims: bool,
) -> Tensor<T> {
    let nd = x.ndim();
    let kept: Vec<usize> = (0..nd).filter(|i| !axes.contains(i)).collect();
    let kept_shape: Vec<usize> = kept.iter().map(|&i| x.shape()[i]).collect();
    let kept_strides = strides_of(&kept_shape);
    let mut out_stride = vec![0usize; nd];
    for (j, &i) in kept.iter().enumerate() {
        out_stride[i] = kept_strides[j];
    }
    let reduce_count: usize = axes.iter().map(|&a| x.shape()[a]).product();
    let mut dx = Tensor::zeros(x.shape());

    match kind {
        ReduceKind::Sum | ReduceKind::Mean => {
            let scale = if kind == ReduceKind::Mean {
                T::ONE / T::from_f64(reduce_count as f64)
            } else {
                T::ONE
            };
            if nd == 4 && axes == [0, 2, 3] {
                let (bs, cs, plane) =
                    (x.shape()[0], x.shape()[1], x.shape()[2] * x.shape()[3]);
                let data = dx.data_mut();
                for bi in 0..bs {
                    for c in 0..cs {
                        let v = g.data()[c] * scale;
                        data[(bi * cs + c) * plane..(bi * cs + c + 1) * plane].fill(v);
                    }
                }
                return dx;
            }
            if axes == [nd - 1] {
                let n = *x.shape().last().unwrap();
                for (row, &gv) in dx.data_mut().chunks_exact_mut(n).zip(g.data()) {
                    row.fill(gv * scale);
                }
                return dx;
            }
            let mut coord = vec![0usize; nd];
            let mut ot = 0usize;
            let data = dx.data_mut();
            for i in 0..x.numel() {
                data[i] = g.data()[ot] * scale;
                for d in (0..nd).rev() {
                    coord[d] += 1;
                    ot += out_stride[d];
                    if coord[d] < x.shape()[d] {
                        break;
                    }
                    coord[d] = 0;
                    ot -= out_stride[d] * x.shape()[d];
                }
            }
        }
        ReduceKind::Max => {
            // first-maximum-wins: scan in row-major order, route the whole
            // cell gradient to the first index attaining the max
            let out_numel = g.numel();
            let mut best: Vec<T> = vec![T::from_f64(f64::NEG_INFINITY); out_numel];
            let mut arg: Vec<usize> = vec![usize::MAX; out_numel];
            let mut coord = vec![0usize; nd];
            let mut ot = 0usize;
            for i in 0..x.numel() {
                let v = x.data()[i];
                if v > best[ot] {
                    best[ot] = v;
                    arg[ot] = i;
                }
                for d in (0..nd).rev() {
                    coord[d] += 1;
                    ot += out_stride[d];
                    if coord[d] < x.shape()[d] {
                        break;
                    }
                    coord[d] = 0;
                    ot -= out_stride[d] * x.shape()[d];
                }
            }
            let data = dx.data_mut();
            for (cell, &i) in arg.iter().enumerate() {
                if i != usize::MAX {
                    data[i] = data[i] + g.data()[cell];
                }
            }
        }
    }
    dx
}

// ── activations ─────────────────────────────────────────────────────────

fn gelu_scalar<T: Element>(x: T) -> T {
    let half = T::from_f64(0.5);
    let c = T::from_f64(0.7978845608028654); // sqrt(2/pi)
    let a = T::from_f64(0.044715);
    let u = c * (x + a * x * x * x);
    half * x * (T::ONE + u.tanh())
}

fn gelu_grad_scalar<T: Element>(x: T) -> T {
    let half = T::from_f64(0.5);
    let c = T::from_f64(0.7978845608028654);
    let a = T::from_f64(0.044715);
    let three = T::from_f64(3.0);
    let u = c * (x + a * x * x * x);
    let t = u.tanh();
    let sech2 = T::ONE - t * t;
    half * (T::ONE + t) + half * x * sech2 * c * (T::ONE + three * a * x * x)
}

fn softmax_forward<T: Element>(x: &Tensor<T>, axis: usize) -> Tensor<T> {
    let shape = x.shape();
    let axis_len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let mut out = vec![T::ZERO; x.numel()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * axis_len * inner + i;
            let mut mx = T::from_f64(f64::NEG_INFINITY);
            for j in 0..axis_len {
                let v = x.data()[base + j * inner];
                if v > mx {
                    mx = v;
                }
            }
            let mut denom = T::ZERO;
            for j in 0..axis_len {
                let e = (x.data()[base + j * inner] - mx).exp();
                out[base + j * inner] = e;
                denom = denom + e;
            }
            for j in 0..axis_len {
                out[base + j * inner] = out[base + j * inner] / denom;
            }
        }
    }
    Tensor::new(shape.to_vec(), out).expect("softmax shape")
}

fn softmax_backward<T: Element>(y: &Tensor<T>, g: &Tensor<T>, axis: usize) -> Tensor<T> {
    let shape = y.shape();
    let axis_len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let mut dx = vec![T::ZERO; y.numel()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * axis_len * inner + i;
            let mut dot = T::ZERO;
            for j in 0..axis_len {
                let idx = base + j * inner;
                dot = dot + g.data()[idx] * y.data()[idx];
            }
            for j in 0..axis_len {
                let idx = base + j * inner;
                dx[idx] = y.data()[idx] * (g.data()[idx] - dot);
            }
        }
    }
    Tensor::new(shape.to_vec(), dx).expect("softmax back shape")
}

// ── shape ops ───────────────────────────────────────────────────────────

fn permute_tensor<T: Element>(x: &Tensor<T>, axes: &[usize]) -> Tensor<T> {
    let in_shape = x.shape();
    let out_shape: Vec<usize> = axes.iter().map(|&a| in_shape[a]).collect();
    let in_strides = strides_of(in_shape);
    let perm_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let nd = out_shape.len();
    let n = x.numel();
    let mut data = Vec::with_capacity(n);
    let mut coord = vec![0usize; nd];
    let mut off = 0usize;
    for _ in 0..n {
        data.push(x.data()[off]);
        for d in (0..nd).rev() {
            coord[d] += 1;
            off += perm_strides[d];
            if coord[d] < out_shape[d] {
                break;
            }
            coord[d] = 0;
            off -= perm_strides[d] * out_shape[d];
        }
    }
    Tensor::new(out_shape, data).expect("permute shape")
}

fn concat_forward<T: Element>(parts: &[&Tensor<T>], axis: usize, out_shape: &[usize]) -> Tensor<T> {
    let inner: usize = out_shape[axis + 1..].iter().product();
    let outer: usize = out_shape[..axis].iter().product();
    let total_axis = out_shape[axis];
    let mut data = vec![T::ZERO; outer * total_axis * inner];
    let mut offset = 0;
    for t in parts {
        let extent = t.shape()[axis];
        for o in 0..outer {
            let src = &t.data()[o * extent * inner..(o + 1) * extent * inner];
            let dst_base = (o * total_axis + offset) * inner;
            data[dst_base..dst_base + extent * inner].copy_from_slice(src);
        }
        offset += extent;
    }
    Tensor::new(out_shape.to_vec(), data).expect("concat shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t32(shape: &[usize], data: &[f32]) -> Tensor<f32> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn add_basic() {
        let mut tape = Tape::new();
        let a = tape.leaf(t32(&[2], &[1.0, 2.0]), false);
        let b = tape.leaf(t32(&[2], &[3.0, 4.0]), false);
        let c = tape.add(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[4.0, 6.0]);
    }

    #[test]
    fn mul_by_zero_scalar_gives_zero_tensor() {
        let mut tape = Tape::new();
        let x = tape.leaf(t32(&[2, 2], &[1.0, -2.0, 3.0, 4.0]), false);
        let y = tape.mul_scalar(x, 0.0).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0; 4]);
        assert_eq!(tape.value(y).shape(), &[2, 2]);
    }

    #[test]
    fn incompatible_broadcast_names_both_shapes() {
        let mut tape = Tape::<f32>::new();
        let a = tape.leaf(Tensor::zeros(&[2, 3]), false);
        let b = tape.leaf(Tensor::zeros(&[4]), false);
        let err = tape.add(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("[4]"), "{err}");
    }

    #[test]
    fn matmul_identity_and_hand_case() {
        let mut tape = Tape::new();
        let eye = t32(&[3, 3], &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let x = t32(&[3, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let i = tape.leaf(eye, false);
        let xv = tape.leaf(x.clone(), false);
        let y = tape.matmul(i, xv).unwrap();
        assert_eq!(tape.value(y).data(), x.data());

        let a = tape.leaf(t32(&[2, 2], &[1.0, 2.0, 3.0, 4.0]), false);
        let b = tape.leaf(t32(&[2, 1], &[5.0, 6.0]), false);
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[17.0, 39.0]);
    }

    #[test]
    fn matmul_inner_mismatch_rejected() {
        let mut tape = Tape::<f32>::new();
        let a = tape.leaf(Tensor::zeros(&[2, 3]), false);
        let b = tape.leaf(Tensor::zeros(&[4, 5]), false);
        assert!(tape.matmul(a, b).is_err());
    }

    #[test]
    fn conv_1x1_doubling_kernel() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_fn(&[1, 1, 3, 3], |i| i as f32), false);
        let w = tape.leaf(t32(&[1, 1, 1, 1], &[2.0]), false);
        let y = tape.conv2d(x, w, 1, 0).unwrap();
        let expect: Vec<f32> = (0..9).map(|i| 2.0 * i as f32).collect();
        assert_eq!(tape.value(y).data(), &expect[..]);
    }

    #[test]
    fn conv_box_filter_keeps_constant_interior() {
        let mut tape = Tape::new();
        let c = 0.7f32;
        let x = tape.leaf(Tensor::filled(&[1, 1, 5, 5], c), false);
        let w = tape.leaf(Tensor::filled(&[1, 1, 3, 3], 1.0 / 9.0), false);
        let y = tape.conv2d(x, w, 1, 1).unwrap();
        // interior positions (away from the zero padding) keep the constant
        for iy in 1..4 {
            for ix in 1..4 {
                let v = tape.value(y).at(&[0, 0, iy, ix]);
                assert!((v - c).abs() < 1e-6, "{v} at ({iy},{ix})");
            }
        }
    }

    #[test]
    fn reduce_mean_and_sum() {
        let mut tape = Tape::new();
        let x = tape.leaf(t32(&[3], &[2.0, 4.0, 6.0]), false);
        let m = tape.mean_all(x).unwrap();
        assert_eq!(tape.value(m).item().unwrap(), 4.0);

        let ones = tape.leaf(Tensor::filled(&[2, 3], 1.0), false);
        let s = tape.sum_all(ones).unwrap();
        assert_eq!(tape.value(s).item().unwrap(), 6.0);
    }

    #[test]
    fn reduce_empty_axes_is_identity() {
        let mut tape = Tape::new();
        let x = tape.leaf(t32(&[2, 2], &[1.0, 2.0, 3.0, 4.0]), true);
        let y = tape.sum(x, &[], false).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 2.0, 3.0, 4.0]);
        assert!(tape.sum(y, &[5], false).is_err());
    }

    #[test]
    fn max_gradient_routes_to_first_tie() {
        let mut tape = Tape::new();
        let x = tape.leaf(t32(&[3], &[1.0, 5.0, 5.0]), true);
        let m = tape.max(x, &[0], false).unwrap();
        let grads = tape.backward(m).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn relu_and_softmax_basics() {
        let mut tape = Tape::new();
        let x = tape.leaf(t32(&[3], &[-1.0, 0.0, 2.0]), false);
        let r = tape.relu(x).unwrap();
        assert_eq!(tape.value(r).data(), &[0.0, 0.0, 2.0]);

        let z = tape.leaf(t32(&[3], &[0.0, 0.0, 0.0]), false);
        let s = tape.softmax(z, 0).unwrap();
        for &v in tape.value(s).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-7);
        }
    }

    #[test]
    fn softmax_shift_invariance() {
        let xs = [0.3f32, -1.2, 2.0, 0.7];
        let mut tape = Tape::new();
        let a = tape.leaf(t32(&[4], &xs), false);
        let sa = tape.softmax(a, 0).unwrap();
        let shifted: Vec<f32> = xs.iter().map(|v| v + 11.25).collect();
        let b = tape.leaf(t32(&[4], &shifted), false);
        let sb = tape.softmax(b, 0).unwrap();
        for (x, y) in tape.value(sa).data().iter().zip(tape.value(sb).data()) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn backward_of_sum_of_squares_is_2x() {
        let mut tape = Tape::new();
        let x = tape.leaf(t32(&[3], &[1.0, -2.0, 0.5]), true);
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum_all(sq).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[2.0, -4.0, 1.0]);
    }

    #[test]
    fn backward_of_relu_sum() {
        let mut tape = Tape::new();
        let x = tape.leaf(t32(&[2], &[-3.0, 2.0]), true);
        let r = tape.relu(x).unwrap();
        let loss = tape.sum_all(r).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[0.0, 1.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(t32(&[2], &[1.0, 2.0]), true);
        let y = tape.mul(x, x).unwrap();
        assert!(tape.backward(y).is_err());
    }

    #[test]
    fn broadcast_add_bias_and_backward_reduction() {
        let mut tape = Tape::new();
        let x = tape.leaf(t32(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]), true);
        let b = tape.leaf(t32(&[3], &[10.0, 20.0, 30.0]), true);
        let y = tape.add(x, b).unwrap();
        assert_eq!(tape.value(y).data(), &[11.0, 22.0, 33.0, 14.0, 25.0, 36.0]);
        let loss = tape.sum_all(y).unwrap();
        let grads = tape.backward(loss).unwrap();
        // bias gradient sums over the broadcast batch axis
        assert_eq!(grads.get(b).unwrap().data(), &[2.0, 2.0, 2.0]);
        assert_eq!(grads.get(x).unwrap().data(), &[1.0; 6]);
    }

    #[test]
    fn permute_roundtrip_and_concat_split_grad() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_fn(&[2, 3, 4], |i| i as f32), true);
        let p = tape.permute(x, &[2, 0, 1]).unwrap();
        assert_eq!(tape.value(p).shape(), &[4, 2, 3]);
        assert_eq!(tape.value(p).at(&[1, 0, 2]), tape.value(x).at(&[0, 2, 1]));

        let a = tape.leaf(Tensor::filled(&[2, 2], 1.0), true);
        let b = tape.leaf(Tensor::filled(&[2, 3], 2.0), true);
        let cat = tape.concat(&[a, b], 1).unwrap();
        assert_eq!(tape.value(cat).shape(), &[2, 5]);
        let w = tape.leaf(Tensor::from_fn(&[2, 5], |i| i as f32), false);
        let prod = tape.mul(cat, w).unwrap();
        let loss = tape.sum_all(prod).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(a).unwrap().data(), &[0.0, 1.0, 5.0, 6.0]);
        assert_eq!(grads.get(b).unwrap().data(), &[2.0, 3.0, 4.0, 7.0, 8.0, 9.0]);
    }
}
