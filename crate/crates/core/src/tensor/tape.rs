//! Recorded-operation reverse-mode differentiation over dense f64 tensors.
//!
//! A [`Tape`] is an append-only arena of [`Tensor`] nodes. Forward ops push a
//! node that remembers its inputs; [`Tape::backward`] sweeps the arena in
//! reverse, accumulating adjoints into every reachable node that requires a
//! gradient. Node ids are already in topological order because an op can only
//! reference earlier nodes.

use super::kernels::{self, numel};
use super::TensorError;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(pub(crate) usize);

/// A dense value with optional adjoint, owned by the tape.
#[derive(Debug, Clone)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    op: Op,
}

impl Tensor {
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum UnaryKind {
    Neg,
    Exp,
    Log,
    Sigmoid,
    Relu,
    Tanh,
    Softplus,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Binary { kind: BinaryKind, a: TensorId, b: TensorId },
    Unary { kind: UnaryKind, a: TensorId },
    Pow { a: TensorId, exponent: f64 },
    Sum { a: TensorId },
    Mean { a: TensorId },
    SumAxis { a: TensorId, axis: usize },
    MatMul { a: TensorId, b: TensorId },
    Conv1d { signal: TensorId, kernel: TensorId },
    Concat { parts: Vec<TensorId>, axis: usize },
    LogSumExp { a: TensorId, axis: usize },
    StraightThrough { probs: TensorId },
    DecayFilter { a: TensorId, coeff: f64 },
    Reshape { a: TensorId },
}

/// Append-only computation tape. Single-threaded; independent tapes may run
/// on separate threads.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Tensor>,
    backward_done: bool,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn tensor(&self, id: TensorId) -> &Tensor {
        &self.nodes[id.0]
    }

    pub fn values(&self, id: TensorId) -> &[f64] {
        &self.nodes[id.0].values
    }

    pub fn grad(&self, id: TensorId) -> Option<&[f64]> {
        self.nodes[id.0].grad.as_deref()
    }

    /// Value of a single-element tensor.
    pub fn scalar(&self, id: TensorId) -> Result<f64, TensorError> {
        let t = &self.nodes[id.0];
        if t.numel() != 1 {
            return Err(TensorError::NotScalar { op: "scalar", shape: t.shape.clone() });
        }
        Ok(t.values[0])
    }

    fn push(
        &mut self,
        shape: Vec<usize>,
        values: Vec<f64>,
        requires_grad: bool,
        op: Op,
    ) -> Result<TensorId, TensorError> {
        if self.backward_done {
            return Err(TensorError::BackwardConsumed);
        }
        debug_assert_eq!(values.len(), numel(&shape));
        self.nodes.push(Tensor { shape, values, grad: None, requires_grad, op });
        Ok(TensorId(self.nodes.len() - 1))
    }

    fn checked(
        &self,
        op: &'static str,
        values: &[f64],
        shape: &[usize],
    ) -> Result<(), TensorError> {
        if values.len() != numel(shape) {
            return Err(TensorError::LengthMismatch {
                op,
                expected: numel(shape),
                got: values.len(),
            });
        }
        Ok(())
    }

    /// Insert a node that does not receive gradients.
    pub fn constant(&mut self, values: &[f64], shape: &[usize]) -> Result<TensorId, TensorError> {
        self.checked("constant", values, shape)?;
        self.push(shape.to_vec(), values.to_vec(), false, Op::Leaf)
    }

    pub fn constant_scalar(&mut self, v: f64) -> Result<TensorId, TensorError> {
        self.push(vec![], vec![v], false, Op::Leaf)
    }

    /// Insert a differentiable leaf (a parameter or an input under test).
    pub fn leaf(&mut self, values: &[f64], shape: &[usize]) -> Result<TensorId, TensorError> {
        self.checked("leaf", values, shape)?;
        self.push(shape.to_vec(), values.to_vec(), true, Op::Leaf)
    }

    fn binary(
        &mut self,
        kind: BinaryKind,
        name: &'static str,
        a: TensorId,
        b: TensorId,
    ) -> Result<TensorId, TensorError> {
        let out_shape =
            kernels::broadcast_shape(name, &self.nodes[a.0].shape, &self.nodes[b.0].shape)?;
        if kind == BinaryKind::Div {
            if let Some(&z) = self.nodes[b.0].values.iter().find(|v| **v == 0.0) {
                return Err(TensorError::NumericDomain {
                    op: "div",
                    detail: format!("division by zero (denominator entry {z})"),
                });
            }
        }
        let mut out = vec![0.0; numel(&out_shape)];
        {
            let av = &self.nodes[a.0].values;
            let bv = &self.nodes[b.0].values;
            kernels::for_each_broadcast(
                &out_shape,
                &self.nodes[a.0].shape,
                &self.nodes[b.0].shape,
                |io, ia, ib| {
                    out[io] = match kind {
                        BinaryKind::Add => av[ia] + bv[ib],
                        BinaryKind::Sub => av[ia] - bv[ib],
                        BinaryKind::Mul => av[ia] * bv[ib],
                        BinaryKind::Div => av[ia] / bv[ib],
                    };
                },
            );
        }
        let rg = self.nodes[a.0].requires_grad || self.nodes[b.0].requires_grad;
        self.push(out_shape, out, rg, Op::Binary { kind, a, b })
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        self.binary(BinaryKind::Add, "add", a, b)
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        self.binary(BinaryKind::Sub, "sub", a, b)
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        self.binary(BinaryKind::Mul, "mul", a, b)
    }

    pub fn div(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        self.binary(BinaryKind::Div, "div", a, b)
    }

    fn unary(&mut self, kind: UnaryKind, a: TensorId) -> Result<TensorId, TensorError> {
        if kind == UnaryKind::Log {
            if let Some(&bad) = self.nodes[a.0].values.iter().find(|v| **v <= 0.0) {
                return Err(TensorError::NumericDomain {
                    op: "log",
                    detail: format!("log of non-positive value {bad}"),
                });
            }
        }
        let values: Vec<f64> = self.nodes[a.0]
            .values
            .iter()
            .map(|&x| match kind {
                UnaryKind::Neg => -x,
                UnaryKind::Exp => x.exp(),
                UnaryKind::Log => x.ln(),
                UnaryKind::Sigmoid => kernels::sigmoid(x),
                UnaryKind::Relu => x.max(0.0),
                UnaryKind::Tanh => x.tanh(),
                UnaryKind::Softplus => kernels::softplus(x),
            })
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.nodes[a.0].requires_grad;
        self.push(shape, values, rg, Op::Unary { kind, a })
    }

    pub fn neg(&mut self, a: TensorId) -> Result<TensorId, TensorError> {
        self.unary(UnaryKind::Neg, a)
    }

    pub fn exp(&mut self, a: TensorId) -> Result<TensorId, TensorError> {
        self.unary(UnaryKind::Exp, a)
    }

    pub fn log(&mut self, a: TensorId) -> Result<TensorId, TensorError> {
        self.unary(UnaryKind::Log, a)
    }

    pub fn sigmoid(&mut self, a: TensorId) -> Result<TensorId, TensorError> {
        self.unary(UnaryKind::Sigmoid, a)
    }

    pub fn relu(&mut self, a: TensorId) -> Result<TensorId, TensorError> {
        self.unary(UnaryKind::Relu, a)
    }

    pub fn tanh(&mut self, a: TensorId) -> Result<TensorId, TensorError> {
        self.unary(UnaryKind::Tanh, a)
    }

    pub fn softplus(&mut self, a: TensorId) -> Result<TensorId, TensorError> {
        self.unary(UnaryKind::Softplus, a)
    }

    /// Elementwise `x^p`. Non-integer exponents require non-negative inputs;
    /// inputs at exactly zero are rejected for `p < 1` where the derivative
    /// is unbounded.
    pub fn powf(&mut self, a: TensorId, exponent: f64) -> Result<TensorId, TensorError> {
        let integral = exponent.fract() == 0.0;
        for &x in &self.nodes[a.0].values {
            if !integral && x < 0.0 {
                return Err(TensorError::NumericDomain {
                    op: "pow",
                    detail: format!("negative base {x} with non-integer exponent {exponent}"),
                });
            }
            if x == 0.0 && exponent < 1.0 {
                return Err(TensorError::NumericDomain {
                    op: "pow",
                    detail: format!("zero base with exponent {exponent} < 1"),
                });
            }
        }
        let values: Vec<f64> = self.nodes[a.0].values.iter().map(|&x| x.powf(exponent)).collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.nodes[a.0].requires_grad;
        self.push(shape, values, rg, Op::Pow { a, exponent })
    }

    pub fn sum(&mut self, a: TensorId) -> Result<TensorId, TensorError> {
        let total: f64 = self.nodes[a.0].values.iter().sum();
        let rg = self.nodes[a.0].requires_grad;
        self.push(vec![], vec![total], rg, Op::Sum { a })
    }

    pub fn mean(&mut self, a: TensorId) -> Result<TensorId, TensorError> {
        let node = &self.nodes[a.0];
        if node.numel() == 0 {
            return Err(TensorError::EmptyInput { op: "mean" });
        }
        let total: f64 = node.values.iter().sum();
        let value = total / node.numel() as f64;
        let rg = node.requires_grad;
        self.push(vec![], vec![value], rg, Op::Mean { a })
    }

    fn axis_checked(
        &self,
        op: &'static str,
        a: TensorId,
        axis: usize,
    ) -> Result<(), TensorError> {
        let shape = &self.nodes[a.0].shape;
        if axis >= shape.len() {
            return Err(TensorError::AxisOutOfRange { axis, shape: shape.clone() });
        }
        if shape[axis] == 0 {
            return Err(TensorError::EmptyInput { op });
        }
        Ok(())
    }

    /// Sum over one axis; the axis is removed from the shape.
    pub fn sum_axis(&mut self, a: TensorId, axis: usize) -> Result<TensorId, TensorError> {
        self.axis_checked("sum_axis", a, axis)?;
        let shape = self.nodes[a.0].shape.clone();
        let (outer, len, inner) = split_axis(&shape, axis);
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        let mut out = vec![0.0; outer * inner];
        let v = &self.nodes[a.0].values;
        for oi in 0..outer {
            for l in 0..len {
                let base = (oi * len + l) * inner;
                let dst = &mut out[oi * inner..(oi + 1) * inner];
                for ii in 0..inner {
                    dst[ii] += v[base + ii];
                }
            }
        }
        let rg = self.nodes[a.0].requires_grad;
        self.push(out_shape, out, rg, Op::SumAxis { a, axis })
    }

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        let sa = self.nodes[a.0].shape.clone();
        let sb = self.nodes[b.0].shape.clone();
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::ShapeMismatch { op: "matmul", lhs: sa, rhs: sb });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = kernels::matmul(&self.nodes[a.0].values, &self.nodes[b.0].values, m, k, n);
        let rg = self.nodes[a.0].requires_grad || self.nodes[b.0].requires_grad;
        self.push(vec![m, n], out, rg, Op::MatMul { a, b })
    }

    /// 1-D convolution, stride 1, zero padding "same": signal `[c_in, t]`,
    /// kernel `[c_out, c_in, w]`, output `[c_out, t]`.
    pub fn conv1d_same(
        &mut self,
        signal: TensorId,
        kernel: TensorId,
    ) -> Result<TensorId, TensorError> {
        let ss = self.nodes[signal.0].shape.clone();
        let ks = self.nodes[kernel.0].shape.clone();
        if ss.len() != 2 || ks.len() != 3 || ss[0] != ks[1] || ks[2] == 0 || ss[1] == 0 {
            return Err(TensorError::ShapeMismatch { op: "conv1d_same", lhs: ss, rhs: ks });
        }
        let (c_in, t, c_out, w) = (ss[0], ss[1], ks[0], ks[2]);
        let out = kernels::conv1d_same(
            &self.nodes[signal.0].values,
            &self.nodes[kernel.0].values,
            c_in,
            t,
            c_out,
            w,
        );
        let rg = self.nodes[signal.0].requires_grad || self.nodes[kernel.0].requires_grad;
        self.push(vec![c_out, t], out, rg, Op::Conv1d { signal, kernel })
    }

    /// Concatenate along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, parts: &[TensorId], axis: usize) -> Result<TensorId, TensorError> {
        if parts.is_empty() {
            return Err(TensorError::EmptyInput { op: "concat" });
        }
        let first = self.nodes[parts[0].0].shape.clone();
        if axis >= first.len() {
            return Err(TensorError::AxisOutOfRange { axis, shape: first });
        }
        let mut axis_total = 0;
        for &p in parts {
            let s = &self.nodes[p.0].shape;
            if s.len() != first.len()
                || s.iter().enumerate().any(|(i, &d)| i != axis && d != first[i])
            {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: first.clone(),
                    rhs: s.clone(),
                });
            }
            axis_total += s[axis];
        }
        let mut out_shape = first.clone();
        out_shape[axis] = axis_total;
        let (outer, _, inner) = split_axis(&out_shape, axis);
        let mut out = vec![0.0; numel(&out_shape)];
        let mut offset = 0;
        for &p in parts {
            let plen = self.nodes[p.0].shape[axis];
            let v = &self.nodes[p.0].values;
            for oi in 0..outer {
                let src = &v[oi * plen * inner..(oi + 1) * plen * inner];
                let dst_base = (oi * axis_total + offset) * inner;
                out[dst_base..dst_base + plen * inner].copy_from_slice(src);
            }
            offset += plen;
        }
        let rg = parts.iter().any(|&p| self.nodes[p.0].requires_grad);
        self.push(out_shape, out, rg, Op::Concat { parts: parts.to_vec(), axis })
    }

    /// Stable `log(sum(exp(·)))` reduction over one axis (removed from the
    /// shape). Backward distributes softmax weights.
    pub fn logsumexp(&mut self, a: TensorId, axis: usize) -> Result<TensorId, TensorError> {
        self.axis_checked("logsumexp", a, axis)?;
        let shape = self.nodes[a.0].shape.clone();
        let (outer, len, inner) = split_axis(&shape, axis);
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        let mut out = vec![0.0; outer * inner];
        let v = &self.nodes[a.0].values;
        for oi in 0..outer {
            for ii in 0..inner {
                let mut m = f64::NEG_INFINITY;
                for l in 0..len {
                    m = m.max(v[(oi * len + l) * inner + ii]);
                }
                let s: f64 = (0..len).map(|l| (v[(oi * len + l) * inner + ii] - m).exp()).sum();
                out[oi * inner + ii] = m + s.ln();
            }
        }
        let rg = self.nodes[a.0].requires_grad;
        self.push(out_shape, out, rg, Op::LogSumExp { a, axis })
    }

    /// Straight-through estimator: the forward value is the supplied hard
    /// sample; the backward pass treats the output as the input probability.
    pub fn straight_through(
        &mut self,
        probs: TensorId,
        hard: &[f64],
    ) -> Result<TensorId, TensorError> {
        let shape = self.nodes[probs.0].shape.clone();
        if hard.len() != numel(&shape) {
            return Err(TensorError::LengthMismatch {
                op: "straight_through",
                expected: numel(&shape),
                got: hard.len(),
            });
        }
        let rg = self.nodes[probs.0].requires_grad;
        self.push(shape, hard.to_vec(), rg, Op::StraightThrough { probs })
    }

    /// Leaky integrator `c[t] = coeff * c[t-1] + x[t]` with `c[-1] = 0`,
    /// over a 1-D input. `coeff` is a fixed (non-differentiated) constant.
    pub fn decay_filter(&mut self, a: TensorId, coeff: f64) -> Result<TensorId, TensorError> {
        let shape = self.nodes[a.0].shape.clone();
        if shape.len() != 1 {
            return Err(TensorError::ShapeMismatch {
                op: "decay_filter",
                lhs: shape,
                rhs: vec![0],
            });
        }
        let v = &self.nodes[a.0].values;
        let mut out = Vec::with_capacity(v.len());
        let mut c = 0.0;
        for &x in v {
            c = coeff * c + x;
            out.push(c);
        }
        let rg = self.nodes[a.0].requires_grad;
        self.push(shape, out, rg, Op::DecayFilter { a, coeff })
    }

    pub fn reshape(&mut self, a: TensorId, new_shape: &[usize]) -> Result<TensorId, TensorError> {
        let node = &self.nodes[a.0];
        if numel(new_shape) != node.numel() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: node.shape.clone(),
                rhs: new_shape.to_vec(),
            });
        }
        let values = node.values.clone();
        let rg = node.requires_grad;
        self.push(new_shape.to_vec(), values, rg, Op::Reshape { a })
    }

    /// Reverse sweep from a scalar root. Populates `grad` on every reachable
    /// node with `requires_grad`. A tape can only be swept once.
    pub fn backward(&mut self, root: TensorId) -> Result<(), TensorError> {
        if self.backward_done {
            return Err(TensorError::BackwardConsumed);
        }
        let root_node = &self.nodes[root.0];
        if root_node.numel() != 1 {
            return Err(TensorError::NotScalar {
                op: "backward",
                shape: root_node.shape.clone(),
            });
        }
        self.backward_done = true;

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(vec![1.0]);

        for i in (0..=root.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }

        for (node, g) in self.nodes.iter_mut().zip(grads) {
            node.grad = g;
        }
        Ok(())
    }

    fn needs(&self, id: TensorId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn acc<'a>(
        &self,
        grads: &'a mut [Option<Vec<f64>>],
        id: TensorId,
    ) -> &'a mut Vec<f64> {
        let size = self.nodes[id.0].numel();
        grads[id.0].get_or_insert_with(|| vec![0.0; size])
    }

    /// Remove the accumulated adjoint for `id` (or a fresh zero buffer),
    /// leaving `None` behind; the caller writes the buffer back when done.
    fn take_grad(&self, grads: &mut [Option<Vec<f64>>], id: TensorId) -> Vec<f64> {
        grads[id.0].take().unwrap_or_else(|| vec![0.0; self.nodes[id.0].numel()])
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let op = self.nodes[i].op.clone();
        match op {
            Op::Leaf => {}
            Op::Binary { kind, a, b } => {
                let out_shape = &self.nodes[i].shape;
                let av = &self.nodes[a.0].values;
                let bv = &self.nodes[b.0].values;
                let aliased = a == b;
                let mut ga = if self.needs(a) { Some(self.take_grad(grads, a)) } else { None };
                let mut gb = if self.needs(b) && !aliased {
                    Some(self.take_grad(grads, b))
                } else {
                    None
                };
                kernels::for_each_broadcast(
                    out_shape,
                    &self.nodes[a.0].shape,
                    &self.nodes[b.0].shape,
                    |io, ia, ib| {
                        let go = g[io];
                        let (da, db) = match kind {
                            BinaryKind::Add => (go, go),
                            BinaryKind::Sub => (go, -go),
                            BinaryKind::Mul => (go * bv[ib], go * av[ia]),
                            BinaryKind::Div => {
                                (go / bv[ib], -go * av[ia] / (bv[ib] * bv[ib]))
                            }
                        };
                        if let Some(ga) = ga.as_mut() {
                            ga[ia] += da;
                            if aliased {
                                ga[ib] += db;
                            }
                        }
                        if let Some(gb) = gb.as_mut() {
                            gb[ib] += db;
                        }
                    },
                );
                if let Some(gv) = ga {
                    grads[a.0] = Some(gv);
                }
                if let Some(gv) = gb {
                    grads[b.0] = Some(gv);
                }
            }
            Op::Unary { kind, a } => {
                if !self.needs(a) {
                    return;
                }
                let av = &self.nodes[a.0].values;
                let ov = &self.nodes[i].values;
                let ga = self.acc(grads, a);
                for j in 0..av.len() {
                    let d = match kind {
                        UnaryKind::Neg => -1.0,
                        UnaryKind::Exp => ov[j],
                        UnaryKind::Log => 1.0 / av[j],
                        UnaryKind::Sigmoid => ov[j] * (1.0 - ov[j]),
                        UnaryKind::Relu => {
                            if av[j] > 0.0 {
                                1.0
                            } else {
                                0.0
                            }
                        }
                        UnaryKind::Tanh => 1.0 - ov[j] * ov[j],
                        UnaryKind::Softplus => kernels::sigmoid(av[j]),
                    };
                    ga[j] += g[j] * d;
                }
            }
            Op::Pow { a, exponent } => {
                if !self.needs(a) {
                    return;
                }
                let av = &self.nodes[a.0].values;
                let ga = self.acc(grads, a);
                for j in 0..av.len() {
                    ga[j] += g[j] * exponent * av[j].powf(exponent - 1.0);
                }
            }
            Op::Sum { a } => {
                if !self.needs(a) {
                    return;
                }
                let ga = self.acc(grads, a);
                for slot in ga.iter_mut() {
                    *slot += g[0];
                }
            }
            Op::Mean { a } => {
                if !self.needs(a) {
                    return;
                }
                let n = self.nodes[a.0].numel() as f64;
                let ga = self.acc(grads, a);
                for slot in ga.iter_mut() {
                    *slot += g[0] / n;
                }
            }
            Op::SumAxis { a, axis } => {
                if !self.needs(a) {
                    return;
                }
                let shape = self.nodes[a.0].shape.clone();
                let (outer, len, inner) = split_axis(&shape, axis);
                let ga = self.acc(grads, a);
                for oi in 0..outer {
                    for l in 0..len {
                        let base = (oi * len + l) * inner;
                        for ii in 0..inner {
                            ga[base + ii] += g[oi * inner + ii];
                        }
                    }
                }
            }
            Op::MatMul { a, b } => {
                let (m, k) = {
                    let s = &self.nodes[a.0].shape;
                    (s[0], s[1])
                };
                let n = self.nodes[b.0].shape[1];
                if self.needs(a) {
                    // dA = g . B^T
                    let bv = &self.nodes[b.0].values;
                    let ga = self.acc(grads, a);
                    for i2 in 0..m {
                        for l in 0..k {
                            let mut acc = 0.0;
                            for j in 0..n {
                                acc += g[i2 * n + j] * bv[l * n + j];
                            }
                            ga[i2 * k + l] += acc;
                        }
                    }
                }
                if self.needs(b) {
                    // dB = A^T . g
                    let av = &self.nodes[a.0].values;
                    let gb = self.acc(grads, b);
                    for l in 0..k {
                        for j in 0..n {
                            let mut acc = 0.0;
                            for i2 in 0..m {
                                acc += av[i2 * k + l] * g[i2 * n + j];
                            }
                            gb[l * n + j] += acc;
                        }
                    }
                }
            }
            Op::Conv1d { signal, kernel } => {
                let (c_in, t) = {
                    let s = &self.nodes[signal.0].shape;
                    (s[0], s[1])
                };
                let (c_out, w) = {
                    let s = &self.nodes[kernel.0].shape;
                    (s[0], s[2])
                };
                let sv = &self.nodes[signal.0].values;
                let kv = &self.nodes[kernel.0].values;
                let mut gs =
                    if self.needs(signal) { Some(self.take_grad(grads, signal)) } else { None };
                let mut gk =
                    if self.needs(kernel) { Some(self.take_grad(grads, kernel)) } else { None };
                kernels::conv1d_same_backward(
                    g,
                    sv,
                    kv,
                    c_in,
                    t,
                    c_out,
                    w,
                    gs.as_deref_mut(),
                    gk.as_deref_mut(),
                );
                if let Some(gv) = gs {
                    grads[signal.0] = Some(gv);
                }
                if let Some(gv) = gk {
                    grads[kernel.0] = Some(gv);
                }
            }
            Op::Concat { parts, axis } => {
                let out_shape = self.nodes[i].shape.clone();
                let (outer, axis_total, inner) = split_axis(&out_shape, axis);
                let mut offset = 0;
                for &p in &parts {
                    let plen = self.nodes[p.0].shape[axis];
                    if self.needs(p) {
                        let gp = self.acc(grads, p);
                        for oi in 0..outer {
                            let src_base = (oi * axis_total + offset) * inner;
                            let dst = &mut gp[oi * plen * inner..(oi + 1) * plen * inner];
                            for (d, s) in dst.iter_mut().zip(&g[src_base..src_base + plen * inner])
                            {
                                *d += s;
                            }
                        }
                    }
                    offset += plen;
                }
            }
            Op::LogSumExp { a, axis } => {
                if !self.needs(a) {
                    return;
                }
                let shape = &self.nodes[a.0].shape;
                let (outer, len, inner) = split_axis(shape, axis);
                let av = &self.nodes[a.0].values;
                let ov = &self.nodes[i].values;
                let ga = self.acc(grads, a);
                for oi in 0..outer {
                    for ii in 0..inner {
                        let lse = ov[oi * inner + ii];
                        let go = g[oi * inner + ii];
                        for l in 0..len {
                            let idx = (oi * len + l) * inner + ii;
                            ga[idx] += go * (av[idx] - lse).exp();
                        }
                    }
                }
            }
            Op::StraightThrough { probs } => {
                if !self.needs(probs) {
                    return;
                }
                let gp = self.acc(grads, probs);
                for (slot, &go) in gp.iter_mut().zip(g) {
                    *slot += go;
                }
            }
            Op::DecayFilter { a, coeff } => {
                if !self.needs(a) {
                    return;
                }
                let ga = self.acc(grads, a);
                let mut carry = 0.0;
                for t in (0..g.len()).rev() {
                    carry = coeff * carry + g[t];
                    ga[t] += carry;
                }
            }
            Op::Reshape { a } => {
                if !self.needs(a) {
                    return;
                }
                let ga = self.acc(grads, a);
                for (slot, &go) in ga.iter_mut().zip(g) {
                    *slot += go;
                }
            }
        }
    }
}

/// Decompose a shape around `axis` into (outer, axis_len, inner) extents.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}
