//! Tape-based reverse-mode differentiation.
//!
//! Every differentiable operation executed through a recording [`Tape`]
//! appends a node holding its inputs and whatever the vector-Jacobian product
//! needs. [`Tape::backward`] replays the nodes in strict reverse order, once.
//! A non-recording tape evaluates the same operations without keeping any
//! history, which is how inference runs.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use super::kernels::{self, Conv1dGeom, Conv2dGeom};
use super::real::MatRef;
use super::{Real, Tensor};
use crate::{Error, Result};

/// A value flowing through a tape. Cloning is cheap.
#[derive(Debug, Clone)]
pub struct Var<T> {
    id: Option<usize>,
    value: Arc<Tensor<T>>,
}

impl<T: Real> Var<T> {
    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn rows(&self) -> usize {
        self.value.rows()
    }

    /// Whether gradients flow back through this value.
    pub fn is_tracked(&self) -> bool {
        self.id.is_some()
    }

    pub fn to_tensor(&self) -> Tensor<T> {
        (*self.value).clone()
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Add(Var<T>, Var<T>),
    Scale(Var<T>, T),
    Mul(Var<T>, Var<T>),
    MulConst(Var<T>, Arc<Tensor<T>>),
    AddRow(Var<T>, Var<T>),
    MatMul(Var<T>, Var<T>),
    MatMulNt(Var<T>, Var<T>),
    LayerNorm {
        x: Var<T>,
        gain: Var<T>,
        bias: Var<T>,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Softmax(Var<T>),
    Swish(Var<T>),
    Relu(Var<T>),
    Glu(Var<T>),
    Conv1d {
        x: Var<T>,
        w: Var<T>,
        b: Var<T>,
        geom: Conv1dGeom,
        cols: Vec<T>,
    },
    Conv2d {
        x: Var<T>,
        w: Var<T>,
        b: Var<T>,
        geom: Conv2dGeom,
        cols: Vec<T>,
    },
    Depthwise {
        x: Var<T>,
        w: Var<T>,
        b: Var<T>,
    },
    Reshape(Var<T>),
    NarrowRows(Var<T>, usize),
    NarrowCols(Var<T>, usize),
    ConcatCols(Vec<Var<T>>),
    UpsampleRows(Var<T>),
    DecimateRows(Var<T>),
    MaskRows(Var<T>, usize),
    RelShift(Var<T>),
    Sum(Var<T>),
    /// Scalar function of `x` whose gradient was computed alongside its value.
    ScalarFn(Var<T>, Tensor<T>),
}

#[derive(Debug)]
struct Node<T> {
    op: Op<T>,
    out: Arc<Tensor<T>>,
}

/// Records differentiable operations for one forward pass.
#[derive(Debug)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    params: Vec<(usize, usize)>,
    recording: bool,
    consumed: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    /// A recording tape.
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: Vec::new(),
            recording: true,
            consumed: false,
        }
    }

    /// A tape that evaluates without recording history.
    pub fn inference() -> Self {
        Self {
            recording: false,
            ..Self::new()
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops all recorded history so the tape can be reused.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.params.clear();
        self.consumed = false;
    }

    /// An untracked value.
    pub fn constant(&self, value: Tensor<T>) -> Var<T> {
        Var {
            id: None,
            value: Arc::new(value),
        }
    }

    /// A tracked leaf whose gradient can be read back from [`Gradients::of`].
    pub fn input(&mut self, value: Tensor<T>) -> Var<T> {
        self.leaf(Arc::new(value))
    }

    /// A model parameter; its gradient is reported under `index`.
    pub fn param(&mut self, index: usize, value: &Arc<Tensor<T>>) -> Var<T> {
        let var = self.leaf(value.clone());
        if let Some(id) = var.id {
            self.params.push((id, index));
        }
        var
    }

    fn leaf(&mut self, value: Arc<Tensor<T>>) -> Var<T> {
        if !self.recording {
            return Var { id: None, value };
        }
        self.nodes.push(Node {
            op: Op::Leaf,
            out: value.clone(),
        });
        Var {
            id: Some(self.nodes.len() - 1),
            value,
        }
    }

    fn push(&mut self, op: Op<T>, out: Tensor<T>, inputs: &[&Var<T>]) -> Var<T> {
        debug_assert!(
            !inputs.iter().all(|v| v.value.all_finite()) || out.all_finite(),
            "non-finite output from finite inputs: {op:?}"
        );
        let out = Arc::new(out);
        if !self.recording || !inputs.iter().any(|v| v.id.is_some()) {
            return Var { id: None, value: out };
        }
        self.nodes.push(Node { op, out: out.clone() });
        Var {
            id: Some(self.nodes.len() - 1),
            value: out,
        }
    }

    pub fn add(&mut self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        same_shape("add", a, b)?;
        let out = zip_map(a.value(), b.value(), |x, y| x + y);
        Ok(self.push(Op::Add(a.clone(), b.clone()), out, &[a, b]))
    }

    pub fn scale(&mut self, a: &Var<T>, c: f64) -> Var<T> {
        let c = T::from_f64(c);
        let out = a.value().map(|v| v * c);
        self.push(Op::Scale(a.clone(), c), out, &[a])
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        same_shape("mul", a, b)?;
        let out = zip_map(a.value(), b.value(), |x, y| x * y);
        Ok(self.push(Op::Mul(a.clone(), b.clone()), out, &[a, b]))
    }

    /// Elementwise product with a constant (dropout masks).
    pub fn mul_const(&mut self, a: &Var<T>, c: Tensor<T>) -> Result<Var<T>> {
        if a.shape() != c.shape() {
            return Err(Error::Shape {
                op: "mul_const",
                lhs: a.shape().to_vec(),
                rhs: c.shape().to_vec(),
            });
        }
        let out = zip_map(a.value(), &c, |x, y| x * y);
        Ok(self.push(Op::MulConst(a.clone(), Arc::new(c)), out, &[a]))
    }

    /// Adds `b: [n]` to every last-axis row of `a`.
    pub fn add_row(&mut self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        let n = a.value().last_dim();
        if b.shape() != [n] {
            return Err(Error::Shape {
                op: "add_row",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let mut out = a.to_tensor();
        for row in out.data_mut().chunks_exact_mut(n) {
            for (o, &v) in row.iter_mut().zip(b.value().data()) {
                *o = *o + v;
            }
        }
        Ok(self.push(Op::AddRow(a.clone(), b.clone()), out, &[a, b]))
    }

    pub fn matmul(&mut self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        let out = kernels::matmul(a.value(), b.value())?;
        Ok(self.push(Op::MatMul(a.clone(), b.clone()), out, &[a, b]))
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        let out = kernels::matmul_nt(a.value(), b.value())?;
        Ok(self.push(Op::MatMulNt(a.clone(), b.clone()), out, &[a, b]))
    }

    /// `x · w + b` for `x: [T, in]`, `w: [in, out]`, `b: [out]`.
    pub fn linear(&mut self, x: &Var<T>, w: &Var<T>, b: Option<&Var<T>>) -> Result<Var<T>> {
        let y = self.matmul(x, w)?;
        match b {
            Some(b) => self.add_row(&y, b),
            None => Ok(y),
        }
    }

    pub fn layer_norm(&mut self, x: &Var<T>, gain: &Var<T>, bias: &Var<T>, eps: f64) -> Result<Var<T>> {
        let (out, cache) = kernels::layer_norm_cached(x.value(), gain.value(), bias.value(), eps)?;
        let op = Op::LayerNorm {
            x: x.clone(),
            gain: gain.clone(),
            bias: bias.clone(),
            xhat: if self.recording { cache.xhat } else { Vec::new() },
            rstd: cache.rstd,
        };
        Ok(self.push(op, out, &[x, gain, bias]))
    }

    pub fn softmax(&mut self, x: &Var<T>) -> Result<Var<T>> {
        let valid = x.value().last_dim();
        self.masked_softmax(x, valid)
    }

    /// Softmax over the first `valid` last-axis entries; the rest get weight 0.
    pub fn masked_softmax(&mut self, x: &Var<T>, valid: usize) -> Result<Var<T>> {
        let out = kernels::masked_softmax(x.value(), valid)?;
        Ok(self.push(Op::Softmax(x.clone()), out, &[x]))
    }

    pub fn swish(&mut self, x: &Var<T>) -> Var<T> {
        let out = kernels::swish(x.value());
        self.push(Op::Swish(x.clone()), out, &[x])
    }

    pub fn relu(&mut self, x: &Var<T>) -> Var<T> {
        let out = kernels::relu(x.value());
        self.push(Op::Relu(x.clone()), out, &[x])
    }

    pub fn glu(&mut self, x: &Var<T>) -> Result<Var<T>> {
        let out = kernels::glu_lastaxis(x.value())?;
        Ok(self.push(Op::Glu(x.clone()), out, &[x]))
    }

    pub fn conv1d(&mut self, x: &Var<T>, w: &Var<T>, b: &Var<T>, stride: usize, padding: usize) -> Result<Var<T>> {
        if !self.recording {
            let out = kernels::conv1d(x.value(), w.value(), b.value(), stride, padding)?;
            return Ok(self.push(Op::Leaf, out, &[x, w, b]));
        }
        let geom = Conv1dGeom::new(x.shape(), w.shape(), b.shape(), stride, padding)?;
        let cols = geom.im2col(x.value().data());
        let patch = geom.kernel * geom.cin;
        let mut out = vec![T::zero(); geom.out_len * geom.cout];
        T::gemm(
            geom.out_len,
            patch,
            geom.cout,
            MatRef::row_major(&cols, patch),
            MatRef::row_major(w.value().data(), geom.cout),
            T::zero(),
            &mut out,
        );
        for row in out.chunks_exact_mut(geom.cout) {
            for (o, &v) in row.iter_mut().zip(b.value().data()) {
                *o = *o + v;
            }
        }
        let out = Tensor::new(&[geom.out_len, geom.cout], out)?;
        let op = Op::Conv1d {
            x: x.clone(),
            w: w.clone(),
            b: b.clone(),
            geom,
            cols,
        };
        Ok(self.push(op, out, &[x, w, b]))
    }

    pub fn conv2d(&mut self, x: &Var<T>, w: &Var<T>, b: &Var<T>, stride: usize, padding: usize) -> Result<Var<T>> {
        let out = kernels::conv2d(x.value(), w.value(), b.value(), stride, padding)?;
        if !self.recording {
            return Ok(self.push(Op::Leaf, out, &[x, w, b]));
        }
        let geom = Conv2dGeom::new(x.shape(), w.shape(), b.shape(), stride, padding)?;
        let cols = geom.im2col(x.value().data());
        let op = Op::Conv2d {
            x: x.clone(),
            w: w.clone(),
            b: b.clone(),
            geom,
            cols,
        };
        Ok(self.push(op, out, &[x, w, b]))
    }

    pub fn depthwise_conv1d(&mut self, x: &Var<T>, w: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        let out = kernels::depthwise_conv1d(x.value(), w.value(), b.value())?;
        let op = Op::Depthwise {
            x: x.clone(),
            w: w.clone(),
            b: b.clone(),
        };
        Ok(self.push(op, out, &[x, w, b]))
    }

    pub fn reshape(&mut self, x: &Var<T>, shape: &[usize]) -> Result<Var<T>> {
        let out = x.to_tensor().reshape(shape)?;
        Ok(self.push(Op::Reshape(x.clone()), out, &[x]))
    }

    /// Leading-axis rows `[start, start + len)`.
    pub fn narrow_rows(&mut self, x: &Var<T>, start: usize, len: usize) -> Result<Var<T>> {
        if start == 0 && len == x.rows() {
            return Ok(x.clone());
        }
        let out = x.value().narrow_rows(start, len)?;
        Ok(self.push(Op::NarrowRows(x.clone(), start), out, &[x]))
    }

    /// Columns `[start, start + len)` of a matrix.
    pub fn narrow_cols(&mut self, x: &Var<T>, start: usize, len: usize) -> Result<Var<T>> {
        let shape = x.shape();
        if shape.len() != 2 || len == 0 || start + len > shape[1] {
            return Err(Error::InvalidShape {
                op: "narrow_cols",
                reason: alloc::format!("columns {start}..{} of {shape:?}", start + len),
            });
        }
        let cols = shape[1];
        let mut out = Vec::with_capacity(shape[0] * len);
        for row in x.value().data().chunks_exact(cols) {
            out.extend_from_slice(&row[start..start + len]);
        }
        let out = Tensor::new(&[shape[0], len], out)?;
        Ok(self.push(Op::NarrowCols(x.clone(), start), out, &[x]))
    }

    /// Concatenates matrices with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[Var<T>]) -> Result<Var<T>> {
        let rows = parts.first().map(|p| p.rows()).ok_or(Error::InvalidShape {
            op: "concat_cols",
            reason: "no inputs".into(),
        })?;
        for p in parts {
            if p.shape().len() != 2 || p.rows() != rows {
                return Err(Error::Shape {
                    op: "concat_cols",
                    lhs: parts[0].shape().to_vec(),
                    rhs: p.shape().to_vec(),
                });
            }
        }
        let total: usize = parts.iter().map(|p| p.shape()[1]).sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for p in parts {
                out.extend_from_slice(p.value().row(r));
            }
        }
        let out = Tensor::new(&[rows, total], out)?;
        let refs: Vec<&Var<T>> = parts.iter().collect();
        Ok(self.push(Op::ConcatCols(parts.to_vec()), out, &refs))
    }

    pub fn upsample_rows_x2(&mut self, x: &Var<T>) -> Var<T> {
        let out = kernels::upsample_rows_x2(x.value());
        self.push(Op::UpsampleRows(x.clone()), out, &[x])
    }

    pub fn decimate_rows_x2(&mut self, x: &Var<T>) -> Var<T> {
        let out = kernels::decimate_rows_x2(x.value());
        self.push(Op::DecimateRows(x.clone()), out, &[x])
    }

    /// Zeroes rows at index `>= valid`.
    pub fn mask_rows(&mut self, x: &Var<T>, valid: usize) -> Var<T> {
        if valid >= x.rows() {
            return x.clone();
        }
        let out = kernels::mask_rows(x.value(), valid);
        self.push(Op::MaskRows(x.clone(), valid), out, &[x])
    }

    pub fn rel_shift(&mut self, x: &Var<T>) -> Result<Var<T>> {
        let out = kernels::rel_shift(x.value())?;
        Ok(self.push(Op::RelShift(x.clone()), out, &[x]))
    }

    pub fn sum(&mut self, x: &Var<T>) -> Var<T> {
        let total = x.value().data().iter().copied().sum::<T>();
        self.push(Op::Sum(x.clone()), Tensor::scalar(total), &[x])
    }

    pub fn mean(&mut self, x: &Var<T>) -> Var<T> {
        let n = x.value().numel() as f64;
        let s = self.sum(x);
        self.scale(&s, 1.0 / n)
    }

    /// Records a scalar `value` of `x` whose gradient `grad` (shaped like `x`)
    /// was computed by the caller.
    pub fn scalar_fn(&mut self, x: &Var<T>, value: T, grad: Tensor<T>) -> Result<Var<T>> {
        if grad.shape() != x.shape() {
            return Err(Error::Shape {
                op: "scalar_fn",
                lhs: x.shape().to_vec(),
                rhs: grad.shape().to_vec(),
            });
        }
        let grad = if self.recording {
            grad
        } else {
            Tensor::scalar(T::zero())
        };
        Ok(self.push(Op::ScalarFn(x.clone(), grad), Tensor::scalar(value), &[x]))
    }

    /// Back-propagates from a scalar `loss`, visiting recorded operations in
    /// reverse order exactly once.
    pub fn backward(&mut self, loss: &Var<T>) -> Result<Gradients<T>> {
        if self.consumed {
            return Err(Error::TapeState("backward already ran on this tape; reset it first"));
        }
        if loss.value().numel() != 1 {
            return Err(Error::InvalidShape {
                op: "backward",
                reason: alloc::format!("loss must be a scalar, got {:?}", loss.shape()),
            });
        }
        let Some(root) = loss.id else {
            return Err(Error::TapeState("loss was not produced by a recording tape"));
        };
        self.consumed = true;
        let mut grads: Vec<Option<Tensor<T>>> = Vec::new();
        grads.resize_with(self.nodes.len(), || None);
        grads[root] = Some(Tensor::full(loss.shape(), T::one()));
        let mut leaves: Vec<Option<Tensor<T>>> = Vec::new();
        leaves.resize_with(self.nodes.len(), || None);

        for id in (0..=root).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            backprop(&node.op, &node.out, g, id, &mut grads, &mut leaves)?;
        }
        Ok(Gradients {
            leaves,
            params: core::mem::take(&mut self.params),
        })
    }
}

/// Gradients produced by one backward pass.
#[derive(Debug)]
pub struct Gradients<T> {
    leaves: Vec<Option<Tensor<T>>>,
    params: Vec<(usize, usize)>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of a tracked leaf, or `None` if the loss does not depend on it.
    pub fn of(&self, var: &Var<T>) -> Option<&Tensor<T>> {
        var.id.and_then(|id| self.leaves.get(id)?.as_ref())
    }

    /// `(parameter index, gradient)` for every reachable parameter.
    pub fn params(&self) -> impl Iterator<Item = (usize, &Tensor<T>)> + '_ {
        self.params
            .iter()
            .filter_map(|&(node, index)| self.leaves[node].as_ref().map(|g| (index, g)))
    }
}

fn same_shape<T: Real>(op: &'static str, a: &Var<T>, b: &Var<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

fn zip_map<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape(), data).expect("same shape")
}

fn accumulate<T: Real>(grads: &mut [Option<Tensor<T>>], var: &Var<T>, g: Tensor<T>) {
    let Some(id) = var.id else { return };
    match &mut grads[id] {
        Some(acc) => {
            for (a, &v) in acc.data_mut().iter_mut().zip(g.data()) {
                *a = *a + v;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

fn tensor<T: Real>(shape: &[usize], data: Vec<T>) -> Tensor<T> {
    Tensor::new(shape, data).expect("gradient shape")
}

fn backprop<T: Real>(
    op: &Op<T>,
    out: &Tensor<T>,
    g: Tensor<T>,
    id: usize,
    grads: &mut [Option<Tensor<T>>],
    leaves: &mut [Option<Tensor<T>>],
) -> Result<()> {
    match op {
        Op::Leaf => leaves[id] = Some(g),
        Op::Add(a, b) => {
            accumulate(grads, b, g.clone());
            accumulate(grads, a, g);
        }
        Op::Scale(a, c) => {
            let c = *c;
            accumulate(grads, a, g.map(|v| v * c));
        }
        Op::Mul(a, b) => {
            if a.is_tracked() {
                accumulate(grads, a, zip_map(&g, b.value(), |x, y| x * y));
            }
            if b.is_tracked() {
                accumulate(grads, b, zip_map(&g, a.value(), |x, y| x * y));
            }
        }
        Op::MulConst(a, c) => accumulate(grads, a, zip_map(&g, c, |x, y| x * y)),
        Op::AddRow(a, b) => {
            if b.is_tracked() {
                let n = b.value().numel();
                let mut gb = vec![T::zero(); n];
                for row in g.data().chunks_exact(n) {
                    for (s, &v) in gb.iter_mut().zip(row) {
                        *s = *s + v;
                    }
                }
                accumulate(grads, b, tensor(b.shape(), gb));
            }
            accumulate(grads, a, g);
        }
        Op::MatMul(a, b) => {
            let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
            if a.is_tracked() {
                let mut ga = vec![T::zero(); m * k];
                T::gemm(
                    m,
                    n,
                    k,
                    MatRef::row_major(g.data(), n),
                    MatRef::transposed(b.value().data(), n),
                    T::zero(),
                    &mut ga,
                );
                accumulate(grads, a, tensor(&[m, k], ga));
            }
            if b.is_tracked() {
                let mut gb = vec![T::zero(); k * n];
                T::gemm(
                    k,
                    m,
                    n,
                    MatRef::transposed(a.value().data(), k),
                    MatRef::row_major(g.data(), n),
                    T::zero(),
                    &mut gb,
                );
                accumulate(grads, b, tensor(&[k, n], gb));
            }
        }
        Op::MatMulNt(a, b) => {
            let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[0]);
            if a.is_tracked() {
                let mut ga = vec![T::zero(); m * k];
                T::gemm(
                    m,
                    n,
                    k,
                    MatRef::row_major(g.data(), n),
                    MatRef::row_major(b.value().data(), k),
                    T::zero(),
                    &mut ga,
                );
                accumulate(grads, a, tensor(&[m, k], ga));
            }
            if b.is_tracked() {
                let mut gb = vec![T::zero(); n * k];
                T::gemm(
                    n,
                    m,
                    k,
                    MatRef::transposed(g.data(), n),
                    MatRef::row_major(a.value().data(), k),
                    T::zero(),
                    &mut gb,
                );
                accumulate(grads, b, tensor(&[n, k], gb));
            }
        }
        Op::LayerNorm {
            x,
            gain,
            bias,
            xhat,
            rstd,
        } => {
            let d = gain.value().numel();
            let gd = g.data();
            if gain.is_tracked() || bias.is_tracked() {
                let mut gg = vec![T::zero(); d];
                let mut gbias = vec![T::zero(); d];
                for (grow, hrow) in gd.chunks_exact(d).zip(xhat.chunks_exact(d)) {
                    for i in 0..d {
                        gg[i] = gg[i] + grow[i] * hrow[i];
                        gbias[i] = gbias[i] + grow[i];
                    }
                }
                accumulate(grads, gain, tensor(&[d], gg));
                accumulate(grads, bias, tensor(&[d], gbias));
            }
            if x.is_tracked() {
                let inv_d = T::one() / T::from_f64(d as f64);
                let gain = gain.value().data();
                let mut gx = vec![T::zero(); gd.len()];
                for (r, &rs) in rstd.iter().enumerate() {
                    let (grow, hrow) = (&gd[r * d..(r + 1) * d], &xhat[r * d..(r + 1) * d]);
                    let mut mean_dh = T::zero();
                    let mut mean_dh_h = T::zero();
                    for i in 0..d {
                        let dh = grow[i] * gain[i];
                        mean_dh = mean_dh + dh;
                        mean_dh_h = mean_dh_h + dh * hrow[i];
                    }
                    mean_dh = mean_dh * inv_d;
                    mean_dh_h = mean_dh_h * inv_d;
                    for i in 0..d {
                        let dh = grow[i] * gain[i];
                        gx[r * d + i] = rs * (dh - mean_dh - hrow[i] * mean_dh_h);
                    }
                }
                accumulate(grads, x, tensor(x.shape(), gx));
            }
        }
        Op::Softmax(x) => {
            let d = out.last_dim();
            let mut gx = vec![T::zero(); g.numel()];
            for ((y, gr), dst) in out
                .data()
                .chunks_exact(d)
                .zip(g.data().chunks_exact(d))
                .zip(gx.chunks_exact_mut(d))
            {
                let dot = y.iter().zip(gr).map(|(&a, &b)| a * b).sum::<T>();
                for i in 0..d {
                    dst[i] = y[i] * (gr[i] - dot);
                }
            }
            accumulate(grads, x, tensor(x.shape(), gx));
        }
        Op::Swish(x) => {
            let gx = zip_map(&g, x.value(), |gv, xv| {
                let s = kernels::sigmoid(xv);
                gv * s * (T::one() + xv * (T::one() - s))
            });
            accumulate(grads, x, gx);
        }
        Op::Relu(x) => {
            let gx = zip_map(&g, x.value(), |gv, xv| if xv > T::zero() { gv } else { T::zero() });
            accumulate(grads, x, gx);
        }
        Op::Glu(x) => {
            let d = out.last_dim();
            let mut gx = vec![T::zero(); x.value().numel()];
            for ((src, gr), dst) in x
                .value()
                .data()
                .chunks_exact(2 * d)
                .zip(g.data().chunks_exact(d))
                .zip(gx.chunks_exact_mut(2 * d))
            {
                for i in 0..d {
                    let (a, b) = (src[i], src[d + i]);
                    let s = kernels::sigmoid(b);
                    dst[i] = gr[i] * s;
                    dst[d + i] = gr[i] * a * s * (T::one() - s);
                }
            }
            accumulate(grads, x, tensor(x.shape(), gx));
        }
        Op::Conv1d { x, w, b, geom, cols } => {
            let patch = geom.kernel * geom.cin;
            conv_backward(grads, &g, x, w, b, cols, geom.out_len, patch, geom.cout, |c| {
                geom.col2im(c)
            });
        }
        Op::Conv2d { x, w, b, geom, cols } => {
            let patch = geom.kernel * geom.kernel * geom.cin;
            let rows = geom.out_len * geom.out_freq;
            conv_backward(grads, &g, x, w, b, cols, rows, patch, geom.cout, |c| geom.col2im(c));
        }
        Op::Depthwise { x, w, b } => {
            let (len, c) = (x.shape()[0], x.shape()[1]);
            let k = w.shape()[0];
            let pad = (k - 1) / 2;
            let (xd, wd, gd) = (x.value().data(), w.value().data(), g.data());
            let mut gx = vec![T::zero(); len * c];
            let mut gw = vec![T::zero(); k * c];
            let mut gb = vec![T::zero(); c];
            for t in 0..len {
                for ch in 0..c {
                    gb[ch] = gb[ch] + gd[t * c + ch];
                }
                for j in 0..k {
                    let s = t as isize + j as isize - pad as isize;
                    if s < 0 || s as usize >= len {
                        continue;
                    }
                    let s = s as usize;
                    for ch in 0..c {
                        let gv = gd[t * c + ch];
                        gx[s * c + ch] = gx[s * c + ch] + gv * wd[j * c + ch];
                        gw[j * c + ch] = gw[j * c + ch] + gv * xd[s * c + ch];
                    }
                }
            }
            accumulate(grads, x, tensor(x.shape(), gx));
            accumulate(grads, w, tensor(w.shape(), gw));
            accumulate(grads, b, tensor(b.shape(), gb));
        }
        Op::Reshape(x) => accumulate(grads, x, g.reshape(x.shape())?),
        Op::NarrowRows(x, start) => {
            let w = x.value().row_len();
            let mut gx = vec![T::zero(); x.value().numel()];
            gx[start * w..start * w + g.numel()].copy_from_slice(g.data());
            accumulate(grads, x, tensor(x.shape(), gx));
        }
        Op::NarrowCols(x, start) => {
            let (rows, cols) = (x.shape()[0], x.shape()[1]);
            let len = g.shape()[1];
            let mut gx = vec![T::zero(); rows * cols];
            for r in 0..rows {
                gx[r * cols + start..r * cols + start + len].copy_from_slice(g.row(r));
            }
            accumulate(grads, x, tensor(x.shape(), gx));
        }
        Op::ConcatCols(parts) => {
            let total = g.shape()[1];
            let mut offset = 0;
            for p in parts {
                let w = p.shape()[1];
                if p.is_tracked() {
                    let mut gp = Vec::with_capacity(p.value().numel());
                    for row in g.data().chunks_exact(total) {
                        gp.extend_from_slice(&row[offset..offset + w]);
                    }
                    accumulate(grads, p, tensor(p.shape(), gp));
                }
                offset += w;
            }
        }
        Op::UpsampleRows(x) => {
            let w = x.value().row_len();
            let mut gx = Vec::with_capacity(x.value().numel());
            for pair in g.data().chunks_exact(2 * w) {
                gx.extend(pair[..w].iter().zip(&pair[w..]).map(|(&a, &b)| a + b));
            }
            accumulate(grads, x, tensor(x.shape(), gx));
        }
        Op::DecimateRows(x) => {
            let w = x.value().row_len();
            let mut gx = vec![T::zero(); x.value().numel()];
            for (r, row) in g.data().chunks_exact(w).enumerate() {
                gx[2 * r * w..(2 * r + 1) * w].copy_from_slice(row);
            }
            accumulate(grads, x, tensor(x.shape(), gx));
        }
        Op::MaskRows(x, valid) => accumulate(grads, x, kernels::mask_rows(&g, *valid)),
        Op::RelShift(x) => {
            let t = g.shape()[0];
            let w = 2 * t - 1;
            let mut gx = vec![T::zero(); t * w];
            for i in 0..t {
                let start = i * w + (t - 1 - i);
                gx[start..start + t].copy_from_slice(g.row(i));
            }
            accumulate(grads, x, tensor(x.shape(), gx));
        }
        Op::Sum(x) => accumulate(grads, x, Tensor::full(x.shape(), g.item())),
        Op::ScalarFn(x, grad) => {
            let s = g.item();
            accumulate(grads, x, grad.map(|v| v * s));
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn conv_backward<T: Real>(
    grads: &mut [Option<Tensor<T>>],
    g: &Tensor<T>,
    x: &Var<T>,
    w: &Var<T>,
    b: &Var<T>,
    cols: &[T],
    rows: usize,
    patch: usize,
    cout: usize,
    col2im: impl Fn(&[T]) -> Vec<T>,
) {
    let gd = g.data();
    if b.is_tracked() {
        let mut gb = vec![T::zero(); cout];
        for row in gd.chunks_exact(cout) {
            for (s, &v) in gb.iter_mut().zip(row) {
                *s = *s + v;
            }
        }
        accumulate(grads, b, tensor(b.shape(), gb));
    }
    if w.is_tracked() {
        let mut gw = vec![T::zero(); patch * cout];
        T::gemm(
            patch,
            rows,
            cout,
            MatRef::transposed(cols, patch),
            MatRef::row_major(gd, cout),
            T::zero(),
            &mut gw,
        );
        accumulate(grads, w, tensor(w.shape(), gw));
    }
    if x.is_tracked() {
        let mut gcols = vec![T::zero(); rows * patch];
        T::gemm(
            rows,
            cout,
            patch,
            MatRef::row_major(gd, cout),
            MatRef::transposed(w.value().data(), cout),
            T::zero(),
            &mut gcols,
        );
        accumulate(grads, x, tensor(x.shape(), col2im(&gcols)));
    }
}
