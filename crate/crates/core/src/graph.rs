//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation in creation order, so the tape is
//! topologically sorted by construction. [`Graph::backward`] walks it once in
//! reverse and accumulates gradients into leaves created with
//! `requires_grad = true`. Calling `backward` again without
//! [`Graph::zero_grad`] adds to the stored leaf gradients.
//!
//! Broadcasting is limited to leading-dimension expansion: the smaller operand
//! of a binary op must have a shape equal to a suffix of the larger one.

use std::ops::Range;

use crate::tensor::{gemm, Tensor, TensorError};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Elementwise primitives.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Elementwise {
    Add,
    Sub,
    Mul,
    Tanh,
    Sigmoid,
    Exp,
    Log,
    Relu,
}

/// Reductions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduce {
    Sum,
    Mean,
    MaxOverAxis,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Unary {
    Tanh,
    Sigmoid,
    Exp,
    Log,
    Relu,
    Neg,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Binary {
    Add,
    Sub,
    Mul,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Binary(Binary, Var, Var),
    Unary(Unary, Var),
    Scale(Var, f64),
    AddScalar(Var),
    ClampMin(Var, f64),
    MatMul(Var, Var),
    Sum(Var),
    Mean(Var),
    SumAxis {
        input: Var,
        outer: usize,
        len: usize,
        inner: usize,
    },
    MaxAxis {
        input: Var,
        argmax: Vec<usize>,
    },
    Reshape(Var),
    ConcatCols(Vec<Var>),
    SliceCols {
        input: Var,
        start: usize,
    },
    GatherRows {
        input: Var,
        rows: Vec<Option<usize>>,
    },
    L2Norm(Var),
    SegmentL2Norm {
        input: Var,
        segments: Vec<Range<usize>>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

/// Computation graph owning all intermediate values.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Adds an input tensor.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf after [`Graph::backward`].
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    // ---- elementwise ----------------------------------------------------

    /// Dispatches an elementwise primitive; binary kinds require `b`.
    pub fn elementwise(
        &mut self,
        op: Elementwise,
        a: Var,
        b: Option<Var>,
    ) -> Result<Var, TensorError> {
        let need_b = |b: Option<Var>| {
            b.ok_or(TensorError::Invalid {
                op: "elementwise",
                detail: format!("{op:?} needs two operands"),
            })
        };
        match op {
            Elementwise::Add => self.add(a, need_b(b)?),
            Elementwise::Sub => self.sub(a, need_b(b)?),
            Elementwise::Mul => self.mul(a, need_b(b)?),
            Elementwise::Tanh => Ok(self.tanh(a)),
            Elementwise::Sigmoid => Ok(self.sigmoid(a)),
            Elementwise::Exp => Ok(self.exp(a)),
            Elementwise::Log => self.log(a),
            Elementwise::Relu => Ok(self.relu(a)),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(Binary::Mul, a, b)
    }

    fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let out_shape = broadcast_shape(sa, sb).ok_or_else(|| TensorError::ShapeMismatch {
            op: match kind {
                Binary::Add => "add",
                Binary::Sub => "sub",
                Binary::Mul => "mul",
            },
            lhs: sa.to_vec(),
            rhs: sb.to_vec(),
        })?;
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let n: usize = out_shape.iter().product();
        let (na, nb) = (da.len(), db.len());
        let f = match kind {
            Binary::Add => |x: f64, y: f64| x + y,
            Binary::Sub => |x: f64, y: f64| x - y,
            Binary::Mul => |x: f64, y: f64| x * y,
        };
        let data: Vec<f64> = if na == nb {
            da.iter().zip(db).map(|(&x, &y)| f(x, y)).collect()
        } else {
            (0..n).map(|i| f(da[i % na], db[i % nb])).collect()
        };
        let out = Tensor::new(out_shape, data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Binary(kind, a, b), rg))
    }

    fn unary(&mut self, kind: Unary, a: Var) -> Var {
        let x = self.value(a);
        let f: fn(f64) -> f64 = match kind {
            Unary::Tanh => f64::tanh,
            Unary::Sigmoid => sigmoid,
            Unary::Exp => f64::exp,
            Unary::Log => f64::ln,
            Unary::Relu => |v| if v > 0.0 { v } else { 0.0 },
            Unary::Neg => |v| -v,
        };
        let data = x.data().iter().map(|&v| f(v)).collect();
        let out = Tensor::new(x.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(&[a]);
        self.push(out, Op::Unary(kind, a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(Unary::Tanh, a)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(Unary::Sigmoid, a)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(Unary::Exp, a)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(Unary::Relu, a)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(Unary::Neg, a)
    }

    /// Natural log; every element must be strictly positive.
    pub fn log(&mut self, a: Var) -> Result<Var, TensorError> {
        if let Some(bad) = self.value(a).data().iter().find(|&&v| v <= 0.0 || v.is_nan()) {
            return Err(TensorError::Domain {
                op: "log",
                detail: format!("non-positive input {bad}"),
            });
        }
        Ok(self.unary(Unary::Log, a))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let x = self.value(a);
        let out = Tensor::new(x.shape().to_vec(), x.data().iter().map(|v| v * s).collect())
            .expect("same shape");
        let rg = self.rg(&[a]);
        self.push(out, Op::Scale(a, s), rg)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let x = self.value(a);
        let out = Tensor::new(x.shape().to_vec(), x.data().iter().map(|v| v + s).collect())
            .expect("same shape");
        let rg = self.rg(&[a]);
        self.push(out, Op::AddScalar(a), rg)
    }

    /// `max(a, floor)`; gradient passes only where `a > floor`.
    pub fn clamp_min(&mut self, a: Var, floor: f64) -> Var {
        let x = self.value(a);
        let out = Tensor::new(
            x.shape().to_vec(),
            x.data().iter().map(|&v| if v > floor { v } else { floor }).collect(),
        )
        .expect("same shape");
        let rg = self.rg(&[a]);
        self.push(out, Op::ClampMin(a, floor), rg)
    }

    // ---- linear algebra -------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut data = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            false,
            self.value(b).data(),
            false,
            &mut data,
            false,
        );
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(vec![m, n], data)?, Op::MatMul(a, b), rg))
    }

    // ---- reductions -----------------------------------------------------

    /// Dispatches a reduction. `Sum`/`Mean` ignore `axis` when it is `None`
    /// and reduce everything to a scalar.
    pub fn reduce(&mut self, op: Reduce, a: Var, axis: Option<usize>) -> Result<Var, TensorError> {
        match (op, axis) {
            (Reduce::Sum, None) => Ok(self.sum(a)),
            (Reduce::Sum, Some(ax)) => self.sum_axis(a, ax),
            (Reduce::Mean, None) => Ok(self.mean(a)),
            (Reduce::Mean, Some(ax)) => {
                let len = *self.shape(a).get(ax).ok_or(TensorError::AxisOutOfRange {
                    op: "mean",
                    axis: ax,
                    rank: self.shape(a).len(),
                })?;
                let s = self.sum_axis(a, ax)?;
                Ok(self.scale(s, 1.0 / len.max(1) as f64))
            }
            (Reduce::MaxOverAxis, ax) => self.max_axis(a, ax.unwrap_or(0)),
        }
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).data().iter().sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.value(a).data();
        let m = x.iter().sum::<f64>() / x.len().max(1) as f64;
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(m), Op::Mean(a), rg)
    }

    fn axis_split(&self, a: Var, axis: usize, op: &'static str) -> Result<(usize, usize, usize), TensorError> {
        let shape = self.shape(a);
        if axis >= shape.len() {
            return Err(TensorError::AxisOutOfRange {
                op,
                axis,
                rank: shape.len(),
            });
        }
        let outer = shape[..axis].iter().product();
        let inner = shape[axis + 1..].iter().product();
        Ok((outer, shape[axis], inner))
    }

    fn reduced_shape(&self, a: Var, axis: usize) -> Vec<usize> {
        let mut s = self.shape(a).to_vec();
        s.remove(axis);
        s
    }

    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var, TensorError> {
        let (outer, len, inner) = self.axis_split(a, axis, "sum_axis")?;
        let x = self.value(a).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for k in 0..len {
                let src = &x[(o * len + k) * inner..(o * len + k + 1) * inner];
                for (d, s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        let shape = self.reduced_shape(a, axis);
        let rg = self.rg(&[a]);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::SumAxis {
                input: a,
                outer,
                len,
                inner,
            },
            rg,
        ))
    }

    /// Maximum along `axis`. Ties resolve to the lowest index, which alone
    /// receives the gradient.
    pub fn max_axis(&mut self, a: Var, axis: usize) -> Result<Var, TensorError> {
        let (outer, len, inner) = self.axis_split(a, axis, "max_over_axis")?;
        if len == 0 {
            return Err(TensorError::Invalid {
                op: "max_over_axis",
                detail: "empty axis".into(),
            });
        }
        let x = self.value(a).data();
        let mut out = vec![0.0; outer * inner];
        let mut argmax = vec![0usize; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let mut best = o * len * inner + i;
                for k in 1..len {
                    let idx = (o * len + k) * inner + i;
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out[o * inner + i] = x[best];
                argmax[o * inner + i] = best;
            }
        }
        let shape = self.reduced_shape(a, axis);
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::new(shape, out)?, Op::MaxAxis { input: a, argmax }, rg))
    }

    // ---- structural -----------------------------------------------------

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var, TensorError> {
        let t = self.value(a).reshaped(shape)?;
        let rg = self.rg(&[a]);
        Ok(self.push(t, Op::Reshape(a), rg))
    }

    /// Concatenates rank-2 tensors with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = *parts.first().ok_or(TensorError::Invalid {
            op: "concat_cols",
            detail: "no inputs".into(),
        })?;
        let rows = self.shape(first)[0];
        let mut cols = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != 2 || s[0] != rows {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_cols",
                    lhs: self.shape(first).to_vec(),
                    rhs: s.to_vec(),
                });
            }
            cols += s[1];
        }
        let mut data = vec![0.0; rows * cols];
        let mut off = 0;
        for &p in parts {
            let t = self.value(p);
            let w = t.shape()[1];
            for r in 0..rows {
                data[r * cols + off..r * cols + off + w].copy_from_slice(&t.data()[r * w..(r + 1) * w]);
            }
            off += w;
        }
        let rg = self.rg(parts);
        Ok(self.push(Tensor::new(vec![rows, cols], data)?, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Columns `start..end` of a rank-2 tensor.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var, TensorError> {
        let s = self.shape(a);
        if s.len() != 2 || start > end || end > s[1] {
            return Err(TensorError::Invalid {
                op: "slice_cols",
                detail: format!("columns {start}..{end} of shape {s:?}"),
            });
        }
        let (rows, cols) = (s[0], s[1]);
        let w = end - start;
        let x = self.value(a).data();
        let mut data = Vec::with_capacity(rows * w);
        for r in 0..rows {
            data.extend_from_slice(&x[r * cols + start..r * cols + end]);
        }
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::new(vec![rows, w], data)?, Op::SliceCols { input: a, start }, rg))
    }

    /// Selects rows of a rank-2 tensor; `None` yields a zero row.
    pub fn gather_rows(&mut self, a: Var, rows: Vec<Option<usize>>) -> Result<Var, TensorError> {
        let s = self.shape(a);
        if s.len() != 2 {
            return Err(TensorError::Invalid {
                op: "gather_rows",
                detail: format!("expected rank 2, got {s:?}"),
            });
        }
        let (n, cols) = (s[0], s[1]);
        let x = self.value(a).data();
        let mut data = vec![0.0; rows.len() * cols];
        for (i, r) in rows.iter().enumerate() {
            if let Some(r) = *r {
                if r >= n {
                    return Err(TensorError::Invalid {
                        op: "gather_rows",
                        detail: format!("row {r} out of range for {n} rows"),
                    });
                }
                data[i * cols..(i + 1) * cols].copy_from_slice(&x[r * cols..(r + 1) * cols]);
            }
        }
        let shape = vec![rows.len(), cols];
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::new(shape, data)?, Op::GatherRows { input: a, rows }, rg))
    }

    /// Euclidean norm of all elements. The gradient at the origin is zero.
    pub fn l2_norm(&mut self, a: Var) -> Var {
        let n = self.value(a).data().iter().map(|v| v * v).sum::<f64>().sqrt();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(n), Op::L2Norm(a), rg)
    }

    /// Euclidean norm of each contiguous row segment of a rank-2 tensor,
    /// returned as a vector with one entry per segment.
    pub fn segment_l2_norm(&mut self, a: Var, segments: Vec<Range<usize>>) -> Result<Var, TensorError> {
        let s = self.shape(a);
        if s.len() != 2 {
            return Err(TensorError::Invalid {
                op: "segment_l2_norm",
                detail: format!("expected rank 2, got {s:?}"),
            });
        }
        let (rows, cols) = (s[0], s[1]);
        let x = self.value(a).data();
        let mut out = Vec::with_capacity(segments.len());
        for seg in &segments {
            if seg.end > rows || seg.start > seg.end {
                return Err(TensorError::Invalid {
                    op: "segment_l2_norm",
                    detail: format!("segment {seg:?} outside {rows} rows"),
                });
            }
            let sq: f64 = x[seg.start * cols..seg.end * cols].iter().map(|v| v * v).sum();
            out.push(sq.sqrt());
        }
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::vector(out), Op::SegmentL2Norm { input: a, segments }, rg))
    }

    // ---- backward -------------------------------------------------------

    /// Back-propagates from a single-element `loss`, accumulating into the
    /// gradients of every requires-grad leaf.
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(TensorError::NonScalarLoss(lv.shape().to_vec()));
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        let mut grads: Vec<Option<Vec<f64>>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            let Some(go) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                grads[id] = Some(go);
                continue;
            }
            self.propagate(id, &go, &mut grads);
        }

        for (id, g) in grads.into_iter().enumerate() {
            let Some(g) = g else { continue };
            let node = &mut self.nodes[id];
            if !matches!(node.op, Op::Leaf) {
                continue;
            }
            match &mut node.grad {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                None => node.grad = Some(g),
            }
        }
        Ok(())
    }

    fn propagate(&self, id: usize, go: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        let out = node.value.data();
        let want = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::Binary(kind, a, b) => {
                let (da, db) = (self.value(*a).data(), self.value(*b).data());
                let (na, nb) = (da.len(), db.len());
                if want(*a) {
                    let ga = slot(grads, *a, na);
                    for (i, &g) in go.iter().enumerate() {
                        ga[i % na] += match kind {
                            Binary::Add | Binary::Sub => g,
                            Binary::Mul => g * db[i % nb],
                        };
                    }
                }
                if want(*b) {
                    let gb = slot(grads, *b, nb);
                    for (i, &g) in go.iter().enumerate() {
                        gb[i % nb] += match kind {
                            Binary::Add => g,
                            Binary::Sub => -g,
                            Binary::Mul => g * da[i % na],
                        };
                    }
                }
            }
            Op::Unary(kind, a) => {
                let x = self.value(*a).data();
                let ga = slot(grads, *a, x.len());
                for i in 0..go.len() {
                    let d = match kind {
                        Unary::Tanh => 1.0 - out[i] * out[i],
                        Unary::Sigmoid => out[i] * (1.0 - out[i]),
                        Unary::Exp => out[i],
                        Unary::Log => 1.0 / x[i],
                        Unary::Relu => {
                            if x[i] > 0.0 {
                                1.0
                            } else {
                                0.0
                            }
                        }
                        Unary::Neg => -1.0,
                    };
                    ga[i] += go[i] * d;
                }
            }
            Op::Scale(a, s) => {
                let ga = slot(grads, *a, go.len());
                ga.iter_mut().zip(go).for_each(|(d, g)| *d += g * s);
            }
            Op::AddScalar(a) => {
                let ga = slot(grads, *a, go.len());
                ga.iter_mut().zip(go).for_each(|(d, g)| *d += g);
            }
            Op::ClampMin(a, floor) => {
                let x = self.value(*a).data();
                let ga = slot(grads, *a, go.len());
                for i in 0..go.len() {
                    if x[i] > *floor {
                        ga[i] += go[i];
                    }
                }
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                if want(*a) {
                    let ga = slot(grads, *a, m * k);
                    gemm(m, n, k, go, false, tb.data(), true, ga, true);
                }
                if want(*b) {
                    let gb = slot(grads, *b, k * n);
                    gemm(k, m, n, ta.data(), true, go, false, gb, true);
                }
            }
            Op::Sum(a) => {
                let n = self.value(*a).numel();
                let ga = slot(grads, *a, n);
                ga.iter_mut().for_each(|d| *d += go[0]);
            }
            Op::Mean(a) => {
                let n = self.value(*a).numel();
                let g = go[0] / n.max(1) as f64;
                let ga = slot(grads, *a, n);
                ga.iter_mut().for_each(|d| *d += g);
            }
            Op::SumAxis {
                input,
                outer,
                len,
                inner,
            } => {
                let ga = slot(grads, *input, outer * len * inner);
                for o in 0..*outer {
                    for k in 0..*len {
                        let base = (o * len + k) * inner;
                        for i in 0..*inner {
                            ga[base + i] += go[o * inner + i];
                        }
                    }
                }
            }
            Op::MaxAxis { input, argmax } => {
                let ga = slot(grads, *input, self.value(*input).numel());
                for (g, &idx) in go.iter().zip(argmax) {
                    ga[idx] += g;
                }
            }
            Op::Reshape(a) => {
                let ga = slot(grads, *a, go.len());
                ga.iter_mut().zip(go).for_each(|(d, g)| *d += g);
            }
            Op::ConcatCols(parts) => {
                let cols = node.value.shape()[1];
                let rows = node.value.shape()[0];
                let mut off = 0;
                for &p in parts {
                    let w = self.value(p).shape()[1];
                    if want(p) {
                        let gp = slot(grads, p, rows * w);
                        for r in 0..rows {
                            for c in 0..w {
                                gp[r * w + c] += go[r * cols + off + c];
                            }
                        }
                    }
                    off += w;
                }
            }
            Op::SliceCols { input, start } => {
                let t = self.value(*input);
                let (rows, cols) = (t.shape()[0], t.shape()[1]);
                let w = node.value.shape()[1];
                let ga = slot(grads, *input, rows * cols);
                for r in 0..rows {
                    for c in 0..w {
                        ga[r * cols + start + c] += go[r * w + c];
                    }
                }
            }
            Op::GatherRows { input, rows } => {
                let t = self.value(*input);
                let cols = t.shape()[1];
                let ga = slot(grads, *input, t.numel());
                for (i, r) in rows.iter().enumerate() {
                    if let Some(r) = *r {
                        for c in 0..cols {
                            ga[r * cols + c] += go[i * cols + c];
                        }
                    }
                }
            }
            Op::L2Norm(a) => {
                let x = self.value(*a).data();
                let norm = out[0];
                let ga = slot(grads, *a, x.len());
                if norm > 0.0 {
                    let s = go[0] / norm;
                    ga.iter_mut().zip(x).for_each(|(d, v)| *d += s * v);
                }
            }
            Op::SegmentL2Norm { input, segments } => {
                let t = self.value(*input);
                let cols = t.shape()[1];
                let x = t.data();
                let ga = slot(grads, *input, x.len());
                for (si, seg) in segments.iter().enumerate() {
                    let norm = out[si];
                    if norm > 0.0 {
                        let s = go[si] / norm;
                        for j in seg.start * cols..seg.end * cols {
                            ga[j] += s * x[j];
                        }
                    }
                }
            }
        }
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Output shape when one operand's shape is a suffix of the other's.
fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    if a == b {
        return Some(a.to_vec());
    }
    let (big, small) = if a.len() >= b.len() { (a, b) } else { (b, a) };
    if big.ends_with(small) {
        Some(big.to_vec())
    } else {
        None
    }
}
