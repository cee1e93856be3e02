use super::tensor::{gemm, Tensor};
use super::DiffError;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    Transpose(Var),
    Conv1d {
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
    },
    Softmax(Var),
    LogSoftmax(Var),
    LayerNorm {
        x: Var,
        inv_std: Vec<f64>,
    },
    Gelu(Var),
    Mean(Var),
    Sum(Var),
    SumLast(Var),
    Square(Var),
    Sqrt(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceCols {
        x: Var,
        start: usize,
    },
    GatherRows {
        x: Var,
        index: Vec<usize>,
    },
    Pick {
        x: Var,
        index: Vec<usize>,
    },
    Reshape(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only expression tape.
///
/// Nodes are pushed in evaluation order, so every parent has a smaller index
/// than its children and reverse index order is a valid reverse topological
/// order. A graph built with [`Graph::inference`] keeps values only and
/// cannot be differentiated.
#[derive(Debug)]
pub struct Graph {
    nodes: Vec<Node>,
    recording: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of one backward pass, indexed by leaf.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `var`; zeros when `var` is not on any path to the output.
    pub fn get(&self, var: Var) -> Tensor {
        match self.grads.get(var.0).and_then(|g| g.as_ref()) {
            Some(t) => t.clone(),
            None => Tensor::zeros(self.shapes[var.0].clone()),
        }
    }

    pub fn reached(&self, var: Var) -> bool {
        matches!(self.grads.get(var.0), Some(Some(_)))
    }
}

fn shape_err(op: &'static str, lhs: &Tensor, rhs: &Tensor) -> DiffError {
    DiffError::Shape {
        op,
        lhs: lhs.shape().to_vec(),
        rhs: rhs.shape().to_vec(),
    }
}

fn invalid(op: &'static str, msg: impl Into<String>) -> DiffError {
    DiffError::Invalid {
        op,
        msg: msg.into(),
    }
}

fn require_rank(op: &'static str, t: &Tensor, rank: usize) -> Result<(), DiffError> {
    if t.rank() != rank {
        return Err(invalid(
            op,
            format!("expected rank {rank}, got shape {:?}", t.shape()),
        ));
    }
    Ok(())
}

pub(crate) fn std_normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

pub(crate) fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Lays out strided windows of each row of `x: [b, t]` as rows of a
/// `[b * out_len, k]` matrix.
fn im2col(x: &Tensor, k: usize, stride: usize, out_len: usize) -> Vec<f64> {
    let (b, t) = (x.rows(), x.cols());
    let mut cols = Vec::with_capacity(b * out_len * k);
    for r in 0..b {
        let row = &x.data()[r * t..(r + 1) * t];
        for w in 0..out_len {
            cols.extend_from_slice(&row[w * stride..w * stride + k]);
        }
    }
    cols
}

impl Graph {
    /// A recording graph.
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            recording: true,
        }
    }

    /// A value-only graph for gradient-free evaluation.
    pub fn inference() -> Self {
        Self {
            nodes: Vec::new(),
            recording: false,
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, t: Tensor) -> Var {
        let rg = self.recording;
        self.push_raw(t, Op::Leaf, rg)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push_raw(t, Op::Leaf, false)
    }

    fn push_raw(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op, parents: &[Var]) -> Var {
        let rg = self.recording && parents.iter().any(|p| self.nodes[p.0].requires_grad);
        let op = if rg { op } else { Op::Leaf };
        self.push_raw(value, op, rg)
    }

    fn zip_same(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        make: fn(Var, Var) -> Op,
    ) -> Result<Var, DiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(op, ta, tb));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let out = Tensor::from_parts(ta.shape().to_vec(), data);
        Ok(self.push(out, make(a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.zip_same("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.zip_same("sub", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.zip_same("mul", a, b, |x, y| x * y, Op::Mul)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.zip_same("div", a, b, |x, y| x / y, Op::Div)
    }

    fn row_broadcast(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        make: fn(Var, Var) -> Op,
    ) -> Result<Var, DiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if tb.rank() != 1 || tb.len() != ta.last_dim() {
            return Err(shape_err(op, ta, tb));
        }
        let m = tb.len();
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(k, &x)| f(x, tb.data()[k % m]))
            .collect();
        let out = Tensor::from_parts(ta.shape().to_vec(), data);
        Ok(self.push(out, make(a, b), &[a, b]))
    }

    /// `a + b` with `b` (rank 1) broadcast over the leading axes of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.row_broadcast("add_row", a, b, |x, y| x + y, Op::AddRow)
    }

    /// `a * b` with `b` (rank 1) broadcast over the leading axes of `a`.
    pub fn mul_row(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.row_broadcast("mul_row", a, b, |x, y| x * y, Op::MulRow)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| c * x);
        self.push(out, Op::Scale(a, c), &[a])
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 2 || tb.rank() != 2 || ta.cols() != tb.rows() {
            return Err(shape_err("matmul", ta, tb));
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        let mut c = vec![0.0; m * n];
        gemm(m, k, n, ta.data(), false, tb.data(), false, &mut c, false);
        let out = Tensor::from_parts(vec![m, n], c);
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, DiffError> {
        let ta = self.value(a);
        require_rank("transpose", ta, 2)?;
        let (r, c) = (ta.rows(), ta.cols());
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = ta.data()[i * c + j];
            }
        }
        let out = Tensor::from_parts(vec![c, r], out);
        Ok(self.push(out, Op::Transpose(a), &[a]))
    }

    /// Strided 1-D convolution with one input channel.
    ///
    /// `input: [b, t]`, `weight: [d, k]`, `bias: [d]`; the result is
    /// `[b * out_len, d]` with `out_len = (t - k) / stride + 1`, row
    /// `r * out_len + w` holding window `w` of input row `r`.
    pub fn conv1d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
    ) -> Result<Var, DiffError> {
        let (tx, tw, tb) = (self.value(input), self.value(weight), self.value(bias));
        require_rank("conv1d", tx, 2)?;
        require_rank("conv1d", tw, 2)?;
        if stride == 0 {
            return Err(invalid("conv1d", "stride must be positive"));
        }
        let (d, k) = (tw.rows(), tw.cols());
        if tb.rank() != 1 || tb.len() != d {
            return Err(shape_err("conv1d", tw, tb));
        }
        if k > tx.cols() {
            return Err(invalid(
                "conv1d",
                format!("kernel {k} longer than signal {}", tx.cols()),
            ));
        }
        let out_len = (tx.cols() - k) / stride + 1;
        let rows = tx.rows() * out_len;
        let cols = im2col(tx, k, stride, out_len);
        let mut y = vec![0.0; rows * d];
        gemm(rows, k, d, &cols, false, tw.data(), true, &mut y, false);
        for r in 0..rows {
            for (o, &bv) in tb.data().iter().enumerate() {
                y[r * d + o] += bv;
            }
        }
        let out = Tensor::from_parts(vec![rows, d], y);
        Ok(self.push(
            out,
            Op::Conv1d {
                input,
                weight,
                bias,
                stride,
            },
            &[input, weight, bias],
        ))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let m = ta.last_dim();
        let mut out = ta.data().to_vec();
        for row in out.chunks_mut(m) {
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - mx).exp();
                s += *v;
            }
            for v in row.iter_mut() {
                *v /= s;
            }
        }
        let out = Tensor::from_parts(ta.shape().to_vec(), out);
        self.push(out, Op::Softmax(a), &[a])
    }

    /// Log-softmax over the last axis, evaluated with max subtraction.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let m = ta.last_dim();
        let mut out = ta.data().to_vec();
        for row in out.chunks_mut(m) {
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        let out = Tensor::from_parts(ta.shape().to_vec(), out);
        self.push(out, Op::LogSoftmax(a), &[a])
    }

    /// Layer normalization over the last axis without affine terms.
    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Var {
        let ta = self.value(a);
        let m = ta.last_dim();
        let mut out = ta.data().to_vec();
        let mut inv_std = Vec::with_capacity(ta.outer_len());
        for row in out.chunks_mut(m) {
            let mean = row.iter().sum::<f64>() / m as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m as f64;
            let r = 1.0 / (var + eps).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * r;
            }
            inv_std.push(r);
        }
        let out = Tensor::from_parts(ta.shape().to_vec(), out);
        self.push(out, Op::LayerNorm { x: a, inv_std }, &[a])
    }

    /// GELU in its exact Gaussian-CDF form.
    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x * std_normal_cdf(x));
        self.push(out, Op::Gelu(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let out = Tensor::scalar(ta.data().iter().sum::<f64>() / ta.len() as f64);
        self.push(out, Op::Mean(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).data().iter().sum());
        self.push(out, Op::Sum(a), &[a])
    }

    /// Sums the last axis away; a rank-1 input reduces to `[1]`.
    pub fn sum_last(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let m = ta.last_dim();
        let data: Vec<f64> = ta.data().chunks(m).map(|r| r.iter().sum()).collect();
        let shape = if ta.rank() == 1 {
            vec![1]
        } else {
            ta.shape()[..ta.rank() - 1].to_vec()
        };
        let out = Tensor::from_parts(shape, data);
        self.push(out, Op::SumLast(a), &[a])
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x * x);
        self.push(out, Op::Square(a), &[a])
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::sqrt);
        self.push(out, Op::Sqrt(a), &[a])
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, DiffError> {
        let first = parts
            .first()
            .ok_or_else(|| invalid("concat_rows", "no inputs"))?;
        let cols = self.value(*first).last_dim();
        let mut rows = 0;
        let mut data = Vec::new();
        for p in parts {
            let t = self.value(*p);
            if t.rank() != 2 || t.cols() != cols {
                return Err(shape_err("concat_rows", self.value(*first), t));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let out = Tensor::from_parts(vec![rows, cols], data);
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), parts))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, DiffError> {
        let first = parts
            .first()
            .ok_or_else(|| invalid("concat_cols", "no inputs"))?;
        let rows = self.value(*first).rows();
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let t = self.value(*p);
            if t.rank() != 2 || t.rows() != rows {
                return Err(shape_err("concat_cols", self.value(*first), t));
            }
            widths.push(t.cols());
        }
        let total: usize = widths.iter().sum();
        let mut data = vec![0.0; rows * total];
        let mut offset = 0;
        for (p, &w) in parts.iter().zip(&widths) {
            let t = self.value(*p);
            for r in 0..rows {
                data[r * total + offset..r * total + offset + w].copy_from_slice(t.row(r));
            }
            offset += w;
        }
        let out = Tensor::from_parts(vec![rows, total], data);
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), parts))
    }

    /// Columns `[start, end)` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var, DiffError> {
        let ta = self.value(a);
        require_rank("slice_cols", ta, 2)?;
        if start >= end || end > ta.cols() {
            return Err(invalid(
                "slice_cols",
                format!("range {start}..{end} outside {} columns", ta.cols()),
            ));
        }
        let w = end - start;
        let mut data = Vec::with_capacity(ta.rows() * w);
        for r in 0..ta.rows() {
            data.extend_from_slice(&ta.row(r)[start..end]);
        }
        let out = Tensor::from_parts(vec![ta.rows(), w], data);
        Ok(self.push(out, Op::SliceCols { x: a, start }, &[a]))
    }

    /// Rows of a matrix selected (with repetition allowed) by `index`.
    pub fn gather_rows(&mut self, a: Var, index: &[usize]) -> Result<Var, DiffError> {
        let ta = self.value(a);
        require_rank("gather_rows", ta, 2)?;
        if index.is_empty() {
            return Err(invalid("gather_rows", "empty index"));
        }
        if let Some(bad) = index.iter().find(|&&i| i >= ta.rows()) {
            return Err(invalid(
                "gather_rows",
                format!("row {bad} outside {} rows", ta.rows()),
            ));
        }
        let mut data = Vec::with_capacity(index.len() * ta.cols());
        for &i in index {
            data.extend_from_slice(ta.row(i));
        }
        let out = Tensor::from_parts(vec![index.len(), ta.cols()], data);
        Ok(self.push(
            out,
            Op::GatherRows {
                x: a,
                index: index.to_vec(),
            },
            &[a],
        ))
    }

    /// `out[r] = a[r, index[r]]`.
    pub fn pick(&mut self, a: Var, index: &[usize]) -> Result<Var, DiffError> {
        let ta = self.value(a);
        require_rank("pick", ta, 2)?;
        if index.len() != ta.rows() || index.iter().any(|&i| i >= ta.cols()) {
            return Err(invalid(
                "pick",
                format!(
                    "index of length {} does not fit shape {:?}",
                    index.len(),
                    ta.shape()
                ),
            ));
        }
        let data = index
            .iter()
            .enumerate()
            .map(|(r, &c)| ta.row(r)[c])
            .collect();
        let out = Tensor::from_parts(vec![index.len()], data);
        Ok(self.push(
            out,
            Op::Pick {
                x: a,
                index: index.to_vec(),
            },
            &[a],
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, DiffError> {
        let out = self.value(a).reshape(shape.to_vec())?;
        Ok(self.push(out, Op::Reshape(a), &[a]))
    }

    /// Reverse sweep from `output`, seeded with `seed` (same shape as the output).
    pub fn backward(&self, output: Var, seed: &Tensor) -> Result<Gradients, DiffError> {
        if !self.recording {
            return Err(DiffError::NotRecorded);
        }
        let out_shape = self.value(output).shape();
        if seed.shape() != out_shape {
            return Err(DiffError::SeedShape {
                seed: seed.shape().to_vec(),
                output: out_shape.to_vec(),
            });
        }
        let mut acc: Vec<Option<Vec<f64>>> = vec![None; output.0 + 1];
        let mut leaf_grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        if self.nodes[output.0].requires_grad {
            acc[output.0] = Some(seed.data().to_vec());
        }
        for idx in (0..=output.0).rev() {
            let Some(g) = acc[idx].take() else { continue };
            let node = &self.nodes[idx];
            if let Op::Leaf = node.op {
                leaf_grads[idx] = Some(Tensor::from_parts(node.value.shape().to_vec(), g));
                continue;
            }
            self.propagate(node, &g, &mut acc);
        }
        Ok(Gradients {
            grads: leaf_grads,
            shapes: self
                .nodes
                .iter()
                .map(|n| n.value.shape().to_vec())
                .collect(),
        })
    }

    /// Scalar convenience: seeds the backward pass with 1.
    pub fn backward_scalar(&self, output: Var) -> Result<Gradients, DiffError> {
        let t = self.value(output);
        if t.len() != 1 {
            return Err(DiffError::NonScalar(t.shape().to_vec()));
        }
        self.backward(output, &Tensor::full(t.shape().to_vec(), 1.0))
    }

    fn slot<'a>(&self, acc: &'a mut [Option<Vec<f64>>], v: Var) -> Option<&'a mut Vec<f64>> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let n = self.nodes[v.0].value.len();
        Some(acc[v.0].get_or_insert_with(|| vec![0.0; n]))
    }

    fn propagate(&self, node: &Node, g: &[f64], acc: &mut [Option<Vec<f64>>]) {
        let val = |v: Var| self.nodes[v.0].value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(s) = self.slot(acc, v) {
                        s.iter_mut().zip(g).for_each(|(s, g)| *s += g);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(s) = self.slot(acc, *a) {
                    s.iter_mut().zip(g).for_each(|(s, g)| *s += g);
                }
                if let Some(s) = self.slot(acc, *b) {
                    s.iter_mut().zip(g).for_each(|(s, g)| *s -= g);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                if let Some(s) = self.slot(acc, *a) {
                    for k in 0..g.len() {
                        s[k] += g[k] * bv[k];
                    }
                }
                if let Some(s) = self.slot(acc, *b) {
                    for k in 0..g.len() {
                        s[k] += g[k] * av[k];
                    }
                }
            }
            Op::Div(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                if let Some(s) = self.slot(acc, *a) {
                    for k in 0..g.len() {
                        s[k] += g[k] / bv[k];
                    }
                }
                if let Some(s) = self.slot(acc, *b) {
                    for k in 0..g.len() {
                        s[k] -= g[k] * av[k] / (bv[k] * bv[k]);
                    }
                }
            }
            Op::AddRow(a, b) => {
                let m = self.nodes[b.0].value.len();
                if let Some(s) = self.slot(acc, *a) {
                    s.iter_mut().zip(g).for_each(|(s, g)| *s += g);
                }
                if let Some(s) = self.slot(acc, *b) {
                    for row in g.chunks(m) {
                        s.iter_mut().zip(row).for_each(|(s, g)| *s += g);
                    }
                }
            }
            Op::MulRow(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let m = bv.len();
                if let Some(s) = self.slot(acc, *a) {
                    for k in 0..g.len() {
                        s[k] += g[k] * bv[k % m];
                    }
                }
                if let Some(s) = self.slot(acc, *b) {
                    for k in 0..g.len() {
                        s[k % m] += g[k] * av[k];
                    }
                }
            }
            Op::Scale(a, c) => {
                if let Some(s) = self.slot(acc, *a) {
                    s.iter_mut().zip(g).for_each(|(s, g)| *s += c * g);
                }
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                if let Some(s) = self.slot(acc, *a) {
                    gemm(m, n, k, g, false, tb.data(), true, s, true);
                }
                if let Some(s) = self.slot(acc, *b) {
                    gemm(k, m, n, ta.data(), true, g, false, s, true);
                }
            }
            Op::Transpose(a) => {
                let ta = &self.nodes[a.0].value;
                let (r, c) = (ta.rows(), ta.cols());
                if let Some(s) = self.slot(acc, *a) {
                    for i in 0..r {
                        for j in 0..c {
                            s[i * c + j] += g[j * r + i];
                        }
                    }
                }
            }
            Op::Conv1d {
                input,
                weight,
                bias,
                stride,
            } => {
                let (tx, tw) = (&self.nodes[input.0].value, &self.nodes[weight.0].value);
                let (d, k) = (tw.rows(), tw.cols());
                let (b, t) = (tx.rows(), tx.cols());
                let out_len = (t - k) / stride + 1;
                let rows = b * out_len;
                if let Some(s) = self.slot(acc, *weight) {
                    let cols = im2col(tx, k, *stride, out_len);
                    gemm(d, rows, k, g, true, &cols, false, s, true);
                }
                if let Some(s) = self.slot(acc, *bias) {
                    for row in g.chunks(d) {
                        s.iter_mut().zip(row).for_each(|(s, g)| *s += g);
                    }
                }
                if let Some(s) = self.slot(acc, *input) {
                    let mut dcols = vec![0.0; rows * k];
                    gemm(rows, d, k, g, false, tw.data(), false, &mut dcols, false);
                    for r in 0..b {
                        for w in 0..out_len {
                            let src = &dcols[(r * out_len + w) * k..(r * out_len + w + 1) * k];
                            let dst = &mut s[r * t + w * stride..r * t + w * stride + k];
                            dst.iter_mut().zip(src).for_each(|(d, v)| *d += v);
                        }
                    }
                }
            }
            Op::Softmax(a) => {
                if let Some(s) = self.slot(acc, *a) {
                    let y = node.value.data();
                    let m = node.value.last_dim();
                    for ((srow, grow), yrow) in s.chunks_mut(m).zip(g.chunks(m)).zip(y.chunks(m)) {
                        let dot: f64 = grow.iter().zip(yrow).map(|(g, y)| g * y).sum();
                        for j in 0..m {
                            srow[j] += yrow[j] * (grow[j] - dot);
                        }
                    }
                }
            }
            Op::LogSoftmax(a) => {
                if let Some(s) = self.slot(acc, *a) {
                    let y = node.value.data();
                    let m = node.value.last_dim();
                    for ((srow, grow), yrow) in s.chunks_mut(m).zip(g.chunks(m)).zip(y.chunks(m)) {
                        let gsum: f64 = grow.iter().sum();
                        for j in 0..m {
                            srow[j] += grow[j] - yrow[j].exp() * gsum;
                        }
                    }
                }
            }
            Op::LayerNorm { x, inv_std } => {
                if let Some(s) = self.slot(acc, *x) {
                    let y = node.value.data();
                    let m = node.value.last_dim();
                    let mf = m as f64;
                    for (r, ((srow, grow), yrow)) in s
                        .chunks_mut(m)
                        .zip(g.chunks(m))
                        .zip(y.chunks(m))
                        .enumerate()
                    {
                        let gmean = grow.iter().sum::<f64>() / mf;
                        let gy = grow.iter().zip(yrow).map(|(g, y)| g * y).sum::<f64>() / mf;
                        for j in 0..m {
                            srow[j] += inv_std[r] * (grow[j] - gmean - yrow[j] * gy);
                        }
                    }
                }
            }
            Op::Gelu(a) => {
                let av = val(*a);
                if let Some(s) = self.slot(acc, *a) {
                    for k in 0..g.len() {
                        let x = av[k];
                        s[k] += g[k] * (std_normal_cdf(x) + x * std_normal_pdf(x));
                    }
                }
            }
            Op::Mean(a) => {
                if let Some(s) = self.slot(acc, *a) {
                    let gn = g[0] / s.len() as f64;
                    s.iter_mut().for_each(|s| *s += gn);
                }
            }
            Op::Sum(a) => {
                if let Some(s) = self.slot(acc, *a) {
                    s.iter_mut().for_each(|s| *s += g[0]);
                }
            }
            Op::SumLast(a) => {
                let m = self.nodes[a.0].value.last_dim();
                if let Some(s) = self.slot(acc, *a) {
                    for (r, row) in s.chunks_mut(m).enumerate() {
                        row.iter_mut().for_each(|s| *s += g[r]);
                    }
                }
            }
            Op::Square(a) => {
                let av = val(*a);
                if let Some(s) = self.slot(acc, *a) {
                    for k in 0..g.len() {
                        s[k] += 2.0 * av[k] * g[k];
                    }
                }
            }
            Op::Sqrt(a) => {
                let y = node.value.data();
                if let Some(s) = self.slot(acc, *a) {
                    for k in 0..g.len() {
                        s[k] += g[k] / (2.0 * y[k]);
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = self.nodes[p.0].value.len();
                    if let Some(s) = self.slot(acc, *p) {
                        s.iter_mut()
                            .zip(&g[offset..offset + n])
                            .for_each(|(s, g)| *s += g);
                    }
                    offset += n;
                }
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let mut offset = 0;
                for p in parts {
                    let w = self.nodes[p.0].value.cols();
                    if let Some(s) = self.slot(acc, *p) {
                        for (r, row) in s.chunks_mut(w).enumerate() {
                            let src = &g[r * total + offset..r * total + offset + w];
                            row.iter_mut().zip(src).for_each(|(s, g)| *s += g);
                        }
                    }
                    offset += w;
                }
            }
            Op::SliceCols { x, start } => {
                let c = self.nodes[x.0].value.cols();
                let w = node.value.cols();
                if let Some(s) = self.slot(acc, *x) {
                    for (r, grow) in g.chunks(w).enumerate() {
                        let dst = &mut s[r * c + start..r * c + start + w];
                        dst.iter_mut().zip(grow).for_each(|(s, g)| *s += g);
                    }
                }
            }
            Op::GatherRows { x, index } => {
                let c = self.nodes[x.0].value.cols();
                if let Some(s) = self.slot(acc, *x) {
                    for (r, &i) in index.iter().enumerate() {
                        let dst = &mut s[i * c..(i + 1) * c];
                        dst.iter_mut()
                            .zip(&g[r * c..(r + 1) * c])
                            .for_each(|(s, g)| *s += g);
                    }
                }
            }
            Op::Pick { x, index } => {
                let c = self.nodes[x.0].value.cols();
                if let Some(s) = self.slot(acc, *x) {
                    for (r, &i) in index.iter().enumerate() {
                        s[r * c + i] += g[r];
                    }
                }
            }
            Op::Reshape(a) => {
                if let Some(s) = self.slot(acc, *a) {
                    s.iter_mut().zip(g).for_each(|(s, g)| *s += g);
                }
            }
        }
    }
}
