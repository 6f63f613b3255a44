use std::sync::Arc;

use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Index of a recorded node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

enum Op<T> {
    Leaf,
    Add,
    Sub,
    Mul,
    AddRow,
    MatMul,
    Exp,
    Ln,
    Sin,
    Cos,
    Relu,
    Sigmoid,
    Softplus,
    Neg,
    Square,
    Scale(T),
    AddScalar,
    MulScalar,
    Concat { axis: usize, widths: Vec<usize> },
    SliceCols { start: usize, end: usize },
    SliceRows { start: usize },
    GatherRows { index: Arc<Vec<usize>> },
    Sum,
    Mean,
    Reshape,
    SmoothStep,
    InterpRows { index: Arc<Vec<[u32; 4]>>, weight: Arc<Vec<[T; 4]>> },
    RenderWeights { delta: Arc<Vec<T>> },
    Composite,
}

struct Node<T> {
    op: Op<T>,
    inputs: Vec<Tensor<T>>,
}

/// Append-only tape of recorded operations.
///
/// One graph is built per forward pass; [`Graph::backward`] walks it in exact
/// reverse recording order. A graph created with [`Graph::no_grad`] records
/// nothing and every result is detached.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    recording: bool,
    checked: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradient buffers of the leaves reached by a backward pass.
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient with respect to `t`; zero when `t` is detached or unreachable.
    pub fn wrt(&self, t: &Tensor<T>) -> Tensor<T> {
        match t.node().and_then(|id| self.grads.get(id.index())).and_then(|g| g.as_ref()) {
            Some(g) => Tensor::from_parts(t.shape().to_vec(), Arc::new(g.clone()), None),
            None => Tensor::zeros(t.shape().to_vec()),
        }
    }

    /// Borrowed gradient buffer, `None` when no gradient reached `t`.
    pub fn get(&self, t: &Tensor<T>) -> Option<&[T]> {
        t.node()
            .and_then(|id| self.grads.get(id.index()))
            .and_then(|g| g.as_deref())
    }
}

fn shape_err<T>(op: &'static str, a: &[usize], b: &[usize]) -> Result<T> {
    Err(Error::Shape {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    })
}

fn dims2(op: &'static str, t: &[usize]) -> Result<(usize, usize)> {
    match t {
        [r, c] => Ok((*r, *c)),
        _ => shape_err(op, t, &[0, 0]),
    }
}

#[inline]
fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[inline]
fn softplus<T: Scalar>(x: T) -> T {
    // log(1 + e^x) without overflow for large |x|.
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

fn accumulate<T: Scalar>(grads: &mut [Option<Vec<T>>], t: &Tensor<T>, f: impl FnOnce(&mut [T])) {
    if let Some(id) = t.node() {
        let buf = grads[id.index()].get_or_insert_with(|| vec![T::zero(); t.len()]);
        f(buf);
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            recording: true,
            checked: false,
        }
    }

    /// Graph that evaluates ops without recording them.
    pub fn no_grad() -> Self {
        Self {
            nodes: Vec::new(),
            recording: false,
            checked: false,
        }
    }

    /// Builder form of [`Graph::set_checked`].
    pub fn with_checked(mut self, checked: bool) -> Self {
        self.checked = checked;
        self
    }

    /// In checked mode every op rejects non-finite inputs.
    pub fn set_checked(&mut self, checked: bool) {
        self.checked = checked;
    }

    pub fn is_checked(&self) -> bool {
        self.checked
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

    /// Attach `t` as a differentiable leaf.
    pub fn leaf(&mut self, t: &Tensor<T>) -> Tensor<T> {
        if !self.recording {
            return t.detach();
        }
        let id = self.push(Op::Leaf, Vec::new());
        Tensor::from_parts(t.shape().to_vec(), Arc::clone(t.shared()), Some(id))
    }

    fn push(&mut self, op: Op<T>, inputs: Vec<Tensor<T>>) -> NodeId {
        let id = NodeId(u32::try_from(self.nodes.len()).expect("graph node count fits u32"));
        self.nodes.push(Node { op, inputs });
        id
    }

    fn check(&self, op: &'static str, inputs: &[&Tensor<T>]) -> Result<()> {
        if self.checked && inputs.iter().any(|t| !t.all_finite()) {
            return Err(Error::NonFinite(op));
        }
        Ok(())
    }

    fn emit(&mut self, op: Op<T>, inputs: &[&Tensor<T>], shape: Vec<usize>, value: Vec<T>) -> Tensor<T> {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        let node = if self.recording && inputs.iter().any(|t| t.is_attached()) {
            Some(self.push(op, inputs.iter().map(|t| (*t).clone()).collect()))
        } else {
            None
        };
        Tensor::from_parts(shape, Arc::new(value), node)
    }

    fn unary(&mut self, name: &'static str, op: Op<T>, x: &Tensor<T>, f: impl Fn(T) -> T) -> Result<Tensor<T>> {
        self.check(name, &[x])?;
        let value = x.data().iter().map(|&v| f(v)).collect();
        Ok(self.emit(op, &[x], x.shape().to_vec(), value))
    }

    fn binary(
        &mut self,
        name: &'static str,
        op: Op<T>,
        a: &Tensor<T>,
        b: &Tensor<T>,
        f: impl Fn(T, T) -> T,
    ) -> Result<Tensor<T>> {
        if a.shape() != b.shape() {
            return shape_err(name, a.shape(), b.shape());
        }
        self.check(name, &[a, b])?;
        let value = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        Ok(self.emit(op, &[a, b], a.shape().to_vec(), value))
    }

    pub fn add(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary("add", Op::Add, a, b, |x, y| x + y)
    }

    pub fn sub(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary("subtract", Op::Sub, a, b, |x, y| x - y)
    }

    pub fn mul(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary("multiply", Op::Mul, a, b, |x, y| x * y)
    }

    /// `x (N×C) + b (1×C or C)`: bias row broadcast over rows.
    pub fn add_row(&mut self, x: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        let (n, c) = dims2("add_row", x.shape())?;
        if b.len() != c || b.rows() != 1 {
            return shape_err("add_row", x.shape(), b.shape());
        }
        self.check("add_row", &[x, b])?;
        let mut value = x.to_vec();
        for row in value.chunks_exact_mut(c.max(1)).take(n) {
            for (v, &bias) in row.iter_mut().zip(b.data()) {
                *v = *v + bias;
            }
        }
        Ok(self.emit(Op::AddRow, &[x, b], vec![n, c], value))
    }

    pub fn matmul(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        let (m, k) = dims2("matmul", a.shape())?;
        let (k2, n) = dims2("matmul", b.shape())?;
        if k != k2 {
            return shape_err("matmul", a.shape(), b.shape());
        }
        self.check("matmul", &[a, b])?;
        let mut value = vec![T::zero(); m * n];
        if k > 0 {
            T::gemm(
                m,
                k,
                n,
                T::one(),
                a.data(),
                k as isize,
                1,
                b.data(),
                n as isize,
                1,
                T::zero(),
                &mut value,
                n as isize,
                1,
            );
        }
        Ok(self.emit(Op::MatMul, &[a, b], vec![m, n], value))
    }

    pub fn exp(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.unary("exp", Op::Exp, x, |v| v.exp())
    }

    pub fn ln(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.unary("ln", Op::Ln, x, |v| v.ln())
    }

    pub fn sin(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.unary("sin", Op::Sin, x, |v| v.sin())
    }

    pub fn cos(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.unary("cos", Op::Cos, x, |v| v.cos())
    }

    pub fn relu(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.unary("relu", Op::Relu, x, |v| v.max(T::zero()))
    }

    pub fn sigmoid(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.unary("sigmoid", Op::Sigmoid, x, sigmoid)
    }

    pub fn softplus(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.unary("softplus", Op::Softplus, x, softplus)
    }

    pub fn neg(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.unary("neg", Op::Neg, x, |v| -v)
    }

    pub fn square(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.unary("square", Op::Square, x, |v| v * v)
    }

    /// `c · x` for a constant `c`.
    pub fn scale(&mut self, x: &Tensor<T>, c: T) -> Result<Tensor<T>> {
        self.unary("scale", Op::Scale(c), x, |v| v * c)
    }

    /// `x + c` for a constant `c`.
    pub fn add_scalar(&mut self, x: &Tensor<T>, c: T) -> Result<Tensor<T>> {
        self.unary("add_scalar", Op::AddScalar, x, |v| v + c)
    }

    /// `s · x` where `s` is a one-element tensor.
    pub fn mul_scalar(&mut self, x: &Tensor<T>, s: &Tensor<T>) -> Result<Tensor<T>> {
        if s.len() != 1 {
            return shape_err("mul_scalar", x.shape(), s.shape());
        }
        self.check("mul_scalar", &[x, s])?;
        let c = s.data()[0];
        let value = x.data().iter().map(|&v| v * c).collect();
        Ok(self.emit(Op::MulScalar, &[x, s], x.shape().to_vec(), value))
    }

    /// Concatenate 2-D tensors along `axis` (0 = rows, 1 = columns).
    pub fn concat(&mut self, parts: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>> {
        let first = parts.first().ok_or_else(|| Error::invalid("concat of zero tensors"))?;
        let (r0, c0) = dims2("concat", first.shape())?;
        self.check("concat", parts)?;
        match axis {
            0 => {
                let mut rows = 0;
                let mut widths = Vec::with_capacity(parts.len());
                let mut value = Vec::new();
                for p in parts {
                    let (r, c) = dims2("concat", p.shape())?;
                    if c != c0 {
                        return shape_err("concat", first.shape(), p.shape());
                    }
                    rows += r;
                    widths.push(r);
                    value.extend_from_slice(p.data());
                }
                Ok(self.emit(Op::Concat { axis, widths }, parts, vec![rows, c0], value))
            }
            1 => {
                let mut widths = Vec::with_capacity(parts.len());
                for p in parts {
                    let (r, c) = dims2("concat", p.shape())?;
                    if r != r0 {
                        return shape_err("concat", first.shape(), p.shape());
                    }
                    widths.push(c);
                }
                let total: usize = widths.iter().sum();
                let mut value = Vec::with_capacity(r0 * total);
                for r in 0..r0 {
                    for (p, &w) in parts.iter().zip(&widths) {
                        value.extend_from_slice(&p.data()[r * w..(r + 1) * w]);
                    }
                }
                Ok(self.emit(Op::Concat { axis, widths }, parts, vec![r0, total], value))
            }
            _ => Err(Error::invalid(format!("concat axis {axis} unsupported"))),
        }
    }

    /// Columns `start..end` of a 2-D tensor.
    pub fn slice_cols(&mut self, x: &Tensor<T>, start: usize, end: usize) -> Result<Tensor<T>> {
        let (r, c) = dims2("slice", x.shape())?;
        if start > end || end > c {
            return shape_err("slice", x.shape(), &[start, end]);
        }
        self.check("slice", &[x])?;
        let w = end - start;
        let mut value = Vec::with_capacity(r * w);
        for i in 0..r {
            value.extend_from_slice(&x.data()[i * c + start..i * c + end]);
        }
        Ok(self.emit(Op::SliceCols { start, end }, &[x], vec![r, w], value))
    }

    /// Rows `start..end` of a 2-D tensor.
    pub fn slice_rows(&mut self, x: &Tensor<T>, start: usize, end: usize) -> Result<Tensor<T>> {
        let (r, c) = dims2("slice", x.shape())?;
        if start > end || end > r {
            return shape_err("slice", x.shape(), &[start, end]);
        }
        self.check("slice", &[x])?;
        let value = x.data()[start * c..end * c].to_vec();
        Ok(self.emit(Op::SliceRows { start }, &[x], vec![end - start, c], value))
    }

    /// Rows of `table` selected by `index` (repeats allowed).
    pub fn gather_rows(&mut self, table: &Tensor<T>, index: Arc<Vec<usize>>) -> Result<Tensor<T>> {
        let (r, c) = dims2("gather_rows", table.shape())?;
        if let Some(&bad) = index.iter().find(|&&i| i >= r) {
            return shape_err("gather_rows", table.shape(), &[bad]);
        }
        self.check("gather_rows", &[table])?;
        let mut value = Vec::with_capacity(index.len() * c);
        for &i in index.iter() {
            value.extend_from_slice(&table.data()[i * c..(i + 1) * c]);
        }
        let n = index.len();
        Ok(self.emit(Op::GatherRows { index }, &[table], vec![n, c], value))
    }

    pub fn sum(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check("sum", &[x])?;
        let s = x.data().iter().copied().sum();
        Ok(self.emit(Op::Sum, &[x], vec![1], vec![s]))
    }

    pub fn mean(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        if x.is_empty() {
            return Err(Error::invalid("mean of empty tensor"));
        }
        self.check("mean", &[x])?;
        let s: T = x.data().iter().copied().sum();
        let m = s / T::lit(x.len() as f64);
        Ok(self.emit(Op::Mean, &[x], vec![1], vec![m]))
    }

    pub fn reshape(&mut self, x: &Tensor<T>, shape: impl Into<Vec<usize>>) -> Result<Tensor<T>> {
        let shape = shape.into();
        if shape.iter().product::<usize>() != x.len() {
            return shape_err("reshape", x.shape(), &shape);
        }
        let node = if self.recording && x.is_attached() {
            Some(self.push(Op::Reshape, vec![x.clone()]))
        } else {
            None
        };
        Ok(Tensor::from_parts(shape, Arc::clone(x.shared()), node))
    }

    /// Bank of smooth steps: `t (N×1)`, `u (1×M)`, `beta (1×M)` → `N×M`.
    ///
    /// Element `(n, m)` is `½·exp((t−u)/β)` for `t ≤ u` and
    /// `1 − ½·exp(−(t−u)/β)` otherwise.
    pub fn smooth_step(&mut self, t: &Tensor<T>, u: &Tensor<T>, beta: &Tensor<T>) -> Result<Tensor<T>> {
        if t.cols() != 1 && t.shape().len() == 2 {
            return shape_err("smooth_step", t.shape(), &[t.rows(), 1]);
        }
        let n = t.len();
        let m = u.len();
        if beta.len() != m {
            return shape_err("smooth_step", u.shape(), beta.shape());
        }
        self.check("smooth_step", &[t, u, beta])?;
        if beta.data().iter().any(|&b| !(b > T::zero())) {
            return Err(Error::invalid("smooth_step requires beta > 0"));
        }
        let half = T::lit(0.5);
        let mut value = Vec::with_capacity(n * m);
        for &tv in t.data() {
            for (&uv, &bv) in u.data().iter().zip(beta.data()) {
                let z = tv - uv;
                let e = half * (-z.abs() / bv).exp();
                value.push(if z <= T::zero() { e } else { T::one() - e });
            }
        }
        Ok(self.emit(Op::SmoothStep, &[t, u, beta], vec![n, m], value))
    }

    /// Weighted sum of four table rows per output row (bilinear lookup).
    pub fn interp_rows(
        &mut self,
        table: &Tensor<T>,
        index: Arc<Vec<[u32; 4]>>,
        weight: Arc<Vec<[T; 4]>>,
    ) -> Result<Tensor<T>> {
        let (r, c) = dims2("interp_rows", table.shape())?;
        if index.len() != weight.len() {
            return shape_err("interp_rows", &[index.len()], &[weight.len()]);
        }
        if index.iter().flatten().any(|&i| i as usize >= r) {
            return Err(Error::invalid("interp_rows index out of range"));
        }
        self.check("interp_rows", &[table])?;
        let data = table.data();
        let mut value = vec![T::zero(); index.len() * c];
        for ((out, idx), w) in value.chunks_exact_mut(c.max(1)).zip(index.iter()).zip(weight.iter()) {
            for q in 0..4 {
                let row = &data[idx[q] as usize * c..(idx[q] as usize + 1) * c];
                for (o, &v) in out.iter_mut().zip(row) {
                    *o = *o + w[q] * v;
                }
            }
        }
        let n = index.len();
        Ok(self.emit(Op::InterpRows { index, weight }, &[table], vec![n, c], value))
    }

    /// Emission–absorption weights `w_k = T_k (1 − exp(−σ_k δ_k))` per row
    /// of `sigma (R×K)`, with `T_1 = 1`.
    pub fn render_weights(&mut self, sigma: &Tensor<T>, delta: Arc<Vec<T>>) -> Result<Tensor<T>> {
        let (r, k) = dims2("render_weights", sigma.shape())?;
        if delta.len() != r * k {
            return shape_err("render_weights", sigma.shape(), &[delta.len()]);
        }
        if delta.iter().any(|&d| d < T::zero()) {
            return Err(Error::invalid("negative sample gap"));
        }
        self.check("render_weights", &[sigma])?;
        let mut value = vec![T::zero(); r * k];
        for ((w, s), d) in value
            .chunks_exact_mut(k.max(1))
            .zip(sigma.data().chunks_exact(k.max(1)))
            .zip(delta.chunks_exact(k.max(1)))
        {
            let mut optical = T::zero();
            for j in 0..k {
                let a = s[j] * d[j];
                let trans = (-optical).exp();
                w[j] = trans * -(-a).exp_m1();
                optical = optical + a;
            }
        }
        Ok(self.emit(Op::RenderWeights { delta }, &[sigma], vec![r, k], value))
    }

    /// `out[r] = Σ_k w[r,k] · colors[r·K + k]` for `w (R×K)`, `colors (R·K × C)`.
    pub fn composite(&mut self, weights: &Tensor<T>, colors: &Tensor<T>) -> Result<Tensor<T>> {
        let (r, k) = dims2("composite", weights.shape())?;
        let (rk, c) = dims2("composite", colors.shape())?;
        if rk != r * k {
            return shape_err("composite", weights.shape(), colors.shape());
        }
        self.check("composite", &[weights, colors])?;
        let mut value = vec![T::zero(); r * c];
        let w = weights.data();
        let col = colors.data();
        for ri in 0..r {
            let out = &mut value[ri * c..(ri + 1) * c];
            for j in 0..k {
                let wj = w[ri * k + j];
                let row = &col[(ri * k + j) * c..(ri * k + j + 1) * c];
                for (o, &v) in out.iter_mut().zip(row) {
                    *o = *o + wj * v;
                }
            }
        }
        Ok(self.emit(Op::Composite, &[weights, colors], vec![r, c], value))
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: &Tensor<T>) -> Result<Gradients<T>> {
        if root.len() != 1 {
            return shape_err("backward", root.shape(), &[1]);
        }
        let root_id = root
            .node()
            .ok_or_else(|| Error::invalid("backward root is not attached to the graph"))?;
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root_id.index()] = Some(vec![T::one()]);
        for i in (0..=root_id.index()).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if let Op::Leaf = node.op {
                grads[i] = Some(g);
                continue;
            }
            self.propagate(node, &g, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let inp = &node.inputs;
        match &node.op {
            Op::Leaf => {}
            Op::Add => {
                for x in &inp[..2] {
                    accumulate(grads, x, |b| b.iter_mut().zip(g).for_each(|(b, &g)| *b = *b + g));
                }
            }
            Op::Sub => {
                accumulate(grads, &inp[0], |b| b.iter_mut().zip(g).for_each(|(b, &g)| *b = *b + g));
                accumulate(grads, &inp[1], |b| b.iter_mut().zip(g).for_each(|(b, &g)| *b = *b - g));
            }
            Op::Mul => {
                let (x, y) = (&inp[0], &inp[1]);
                accumulate(grads, x, |b| {
                    for ((b, &g), &yv) in b.iter_mut().zip(g).zip(y.data()) {
                        *b = *b + g * yv;
                    }
                });
                accumulate(grads, y, |b| {
                    for ((b, &g), &xv) in b.iter_mut().zip(g).zip(x.data()) {
                        *b = *b + g * xv;
                    }
                });
            }
            Op::AddRow => {
                let c = inp[1].len();
                accumulate(grads, &inp[0], |b| b.iter_mut().zip(g).for_each(|(b, &g)| *b = *b + g));
                accumulate(grads, &inp[1], |b| {
                    for row in g.chunks_exact(c.max(1)) {
                        for (bv, &gv) in b.iter_mut().zip(row) {
                            *bv = *bv + gv;
                        }
                    }
                });
            }
            Op::MatMul => {
                let (a, bm) = (&inp[0], &inp[1]);
                let (m, k) = (a.shape()[0], a.shape()[1]);
                let n = bm.shape()[1];
                accumulate(grads, a, |ga| {
                    // ga (m×k) += g (m×n) · bᵀ (n×k)
                    T::gemm(m, n, k, T::one(), g, n as isize, 1, bm.data(), 1, n as isize, T::one(), ga, k as isize, 1);
                });
                accumulate(grads, bm, |gb| {
                    // gb (k×n) += aᵀ (k×m) · g (m×n)
                    T::gemm(k, m, n, T::one(), a.data(), 1, k as isize, g, n as isize, 1, T::one(), gb, n as isize, 1);
                });
            }
            Op::Exp => {
                let x = &inp[0];
                accumulate(grads, x, |b| {
                    for ((b, &g), &xv) in b.iter_mut().zip(g).zip(x.data()) {
                        *b = *b + g * xv.exp();
                    }
                });
            }
            Op::Ln => self.pointwise(grads, &inp[0], g, |x| x.recip()),
            Op::Sin => self.pointwise(grads, &inp[0], g, |x| x.cos()),
            Op::Cos => self.pointwise(grads, &inp[0], g, |x| -x.sin()),
            Op::Relu => self.pointwise(grads, &inp[0], g, |x| if x > T::zero() { T::one() } else { T::zero() }),
            Op::Sigmoid => self.pointwise(grads, &inp[0], g, |x| {
                let s = sigmoid(x);
                s * (T::one() - s)
            }),
            Op::Softplus => self.pointwise(grads, &inp[0], g, sigmoid),
            Op::Neg => accumulate(grads, &inp[0], |b| b.iter_mut().zip(g).for_each(|(b, &g)| *b = *b - g)),
            Op::Square => self.pointwise(grads, &inp[0], g, |x| x + x),
            Op::Scale(c) => {
                let c = *c;
                accumulate(grads, &inp[0], |b| b.iter_mut().zip(g).for_each(|(b, &g)| *b = *b + c * g));
            }
            Op::AddScalar | Op::Reshape => {
                accumulate(grads, &inp[0], |b| b.iter_mut().zip(g).for_each(|(b, &g)| *b = *b + g));
            }
            Op::MulScalar => {
                let (x, s) = (&inp[0], &inp[1]);
                let c = s.data()[0];
                accumulate(grads, x, |b| b.iter_mut().zip(g).for_each(|(b, &g)| *b = *b + c * g));
                accumulate(grads, s, |b| {
                    let dot: T = g.iter().zip(x.data()).map(|(&g, &x)| g * x).sum();
                    b[0] = b[0] + dot;
                });
            }
            Op::Concat { axis, widths } => {
                if *axis == 0 {
                    let mut offset = 0;
                    for p in inp {
                        let len = p.len();
                        accumulate(grads, p, |b| {
                            for (bv, &gv) in b.iter_mut().zip(&g[offset..offset + len]) {
                                *bv = *bv + gv;
                            }
                        });
                        offset += len;
                    }
                } else {
                    let total: usize = widths.iter().sum();
                    let mut col = 0;
                    for (p, &w) in inp.iter().zip(widths) {
                        accumulate(grads, p, |b| {
                            for (brow, grow) in b.chunks_exact_mut(w.max(1)).zip(g.chunks_exact(total.max(1))) {
                                for (bv, &gv) in brow.iter_mut().zip(&grow[col..col + w]) {
                                    *bv = *bv + gv;
                                }
                            }
                        });
                        col += w;
                    }
                }
            }
            Op::SliceCols { start, end } => {
                let c = inp[0].cols();
                let w = end - start;
                accumulate(grads, &inp[0], |b| {
                    for (brow, grow) in b.chunks_exact_mut(c.max(1)).zip(g.chunks_exact(w.max(1))) {
                        for (bv, &gv) in brow[*start..*end].iter_mut().zip(grow) {
                            *bv = *bv + gv;
                        }
                    }
                });
            }
            Op::SliceRows { start, .. } => {
                let c = inp[0].cols();
                accumulate(grads, &inp[0], |b| {
                    for (bv, &gv) in b[start * c..].iter_mut().zip(g) {
                        *bv = *bv + gv;
                    }
                });
            }
            Op::GatherRows { index } => {
                let c = inp[0].cols();
                accumulate(grads, &inp[0], |b| {
                    for (&i, grow) in index.iter().zip(g.chunks_exact(c.max(1))) {
                        for (bv, &gv) in b[i * c..(i + 1) * c].iter_mut().zip(grow) {
                            *bv = *bv + gv;
                        }
                    }
                });
            }
            Op::Sum => {
                let g0 = g[0];
                accumulate(grads, &inp[0], |b| b.iter_mut().for_each(|b| *b = *b + g0));
            }
            Op::Mean => {
                let g0 = g[0] / T::lit(inp[0].len() as f64);
                accumulate(grads, &inp[0], |b| b.iter_mut().for_each(|b| *b = *b + g0));
            }
            Op::SmoothStep => {
                let (t, u, beta) = (&inp[0], &inp[1], &inp[2]);
                let m = u.len();
                let half = T::lit(0.5);
                let mut gt = vec![T::zero(); t.len()];
                let mut gu = vec![T::zero(); m];
                let mut gb = vec![T::zero(); m];
                for (ni, &tv) in t.data().iter().enumerate() {
                    for j in 0..m {
                        let gv = g[ni * m + j];
                        if gv == T::zero() {
                            continue;
                        }
                        let b = beta.data()[j];
                        let z = tv - u.data()[j];
                        let e = half * (-z.abs() / b).exp();
                        let dt = e / b;
                        gt[ni] = gt[ni] + gv * dt;
                        gu[j] = gu[j] - gv * dt;
                        gb[j] = gb[j] - gv * z * e / (b * b);
                    }
                }
                for (x, gx) in [(t, gt), (u, gu), (beta, gb)] {
                    accumulate(grads, x, |b| b.iter_mut().zip(&gx).for_each(|(b, &g)| *b = *b + g));
                }
            }
            Op::InterpRows { index, weight } => {
                let c = inp[0].cols();
                accumulate(grads, &inp[0], |b| {
                    for ((idx, w), grow) in index.iter().zip(weight.iter()).zip(g.chunks_exact(c.max(1))) {
                        for q in 0..4 {
                            let i = idx[q] as usize;
                            if w[q] == T::zero() {
                                continue;
                            }
                            for (bv, &gv) in b[i * c..(i + 1) * c].iter_mut().zip(grow) {
                                *bv = *bv + w[q] * gv;
                            }
                        }
                    }
                });
            }
            Op::RenderWeights { delta } => {
                let sigma = &inp[0];
                let k = sigma.cols();
                accumulate(grads, sigma, |b| {
                    let mut trans_next = vec![T::zero(); k];
                    let mut w = vec![T::zero(); k];
                    for ((brow, (s, d)), grow) in b
                        .chunks_exact_mut(k.max(1))
                        .zip(sigma.data().chunks_exact(k.max(1)).zip(delta.chunks_exact(k.max(1))))
                        .zip(g.chunks_exact(k.max(1)))
                    {
                        let mut optical = T::zero();
                        for j in 0..k {
                            let a = s[j] * d[j];
                            let trans = (-optical).exp();
                            w[j] = trans * -(-a).exp_m1();
                            optical = optical + a;
                            trans_next[j] = (-optical).exp();
                        }
                        // dL/da_j = g_j T_{j+1} − Σ_{k>j} g_k w_k
                        let mut tail = T::zero();
                        for j in (0..k).rev() {
                            let da = grow[j] * trans_next[j] - tail;
                            brow[j] = brow[j] + da * d[j];
                            tail = tail + grow[j] * w[j];
                        }
                    }
                });
            }
            Op::Composite => {
                let (weights, colors) = (&inp[0], &inp[1]);
                let k = weights.cols();
                let c = colors.cols();
                let r = weights.rows();
                accumulate(grads, weights, |b| {
                    for ri in 0..r {
                        let grow = &g[ri * c..(ri + 1) * c];
                        for j in 0..k {
                            let crow = &colors.data()[(ri * k + j) * c..(ri * k + j + 1) * c];
                            let dot: T = grow.iter().zip(crow).map(|(&a, &b)| a * b).sum();
                            b[ri * k + j] = b[ri * k + j] + dot;
                        }
                    }
                });
                accumulate(grads, colors, |b| {
                    for ri in 0..r {
                        let grow = &g[ri * c..(ri + 1) * c];
                        for j in 0..k {
                            let wj = weights.data()[ri * k + j];
                            let brow = &mut b[(ri * k + j) * c..(ri * k + j + 1) * c];
                            for (bv, &gv) in brow.iter_mut().zip(grow) {
                                *bv = *bv + wj * gv;
                            }
                        }
                    }
                });
            }
        }
    }

    fn pointwise(&self, grads: &mut [Option<Vec<T>>], x: &Tensor<T>, g: &[T], d: impl Fn(T) -> T) {
        accumulate(grads, x, |b| {
            for ((b, &g), &xv) in b.iter_mut().zip(g).zip(x.data()) {
                *b = *b + g * d(xv);
            }
        });
    }
}
