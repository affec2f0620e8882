use super::kernels::{gelu, gelu_grad, gemm, pseudo_huber};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
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
    MatMul { a: Var, b: Var, b_trans: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow { x: Var, row: Var },
    MulRow { x: Var, row: Var },
    Scale(Var, f64),
    AddScalar(Var),
    Softmax(Var),
    SoftmaxBiased { x: Var, bias: Var, scale: f64 },
    LayerNorm { x: Var, gain: Var, bias: Var, rstd: Vec<f64> },
    Gelu(Var),
    Tanh(Var),
    Sqrt(Var),
    Sum(Var),
    Mean(Var),
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Gather { table: Var, rows: Vec<usize> },
    Reshape(Var),
    PseudoHuber { pred: Var, target: Var, c: f64 },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records operations in execution order; the order is a topological order
/// of the computation graph.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients returned by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient of `v`, or zeros of length `len` if nothing flowed to it.
    pub fn get_or_zero(&self, v: Var, len: usize) -> Vec<f64> {
        self.get(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; len])
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

fn row_len_ok(x: &Tensor, row: &Tensor) -> bool {
    let (_, cols) = x.matrix_dims();
    row.len() == cols
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// A trainable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// A leaf that receives no gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// `a · b` (or `a · bᵀ` when `b_trans`) for 2-D operands.
    pub fn matmul_opt(&mut self, a: Var, b: Var, b_trans: bool) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 {
            return Err(shape_err("matmul", ta, tb));
        }
        let (m, k) = (ta.shape()[0], ta.shape()[1]);
        let (kb, n) = if b_trans {
            (tb.shape()[1], tb.shape()[0])
        } else {
            (tb.shape()[0], tb.shape()[1])
        };
        if k != kb {
            return Err(shape_err("matmul", ta, tb));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, ta.data(), false, tb.data(), b_trans, &mut out, false);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(&[m, n], out)?, Op::MatMul { a, b, b_trans }, rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_opt(a, b, false)
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_opt(a, b, true)
    }

    fn zip_same(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(name, ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same(a, b, "add", |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same(a, b, "sub", |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same(a, b, "mul", |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Mul(a, b), rg))
    }

    /// Adds a row vector to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (tx, tr) = (self.value(x), self.value(row));
        if !row_len_ok(tx, tr) {
            return Err(shape_err("add_row", tx, tr));
        }
        let cols = tr.len();
        let mut data = tx.data().to_vec();
        for chunk in data.chunks_mut(cols) {
            for (v, r) in chunk.iter_mut().zip(tr.data()) {
                *v += r;
            }
        }
        let t = Tensor::new(tx.shape(), data)?;
        let rg = self.rg(x) || self.rg(row);
        Ok(self.push(t, Op::AddRow { x, row }, rg))
    }

    /// Multiplies every row of `x` elementwise by a row vector.
    pub fn mul_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (tx, tr) = (self.value(x), self.value(row));
        if !row_len_ok(tx, tr) {
            return Err(shape_err("mul_row", tx, tr));
        }
        let cols = tr.len();
        let mut data = tx.data().to_vec();
        for chunk in data.chunks_mut(cols) {
            for (v, r) in chunk.iter_mut().zip(tr.data()) {
                *v *= r;
            }
        }
        let t = Tensor::new(tx.shape(), data)?;
        let rg = self.rg(x) || self.rg(row);
        Ok(self.push(t, Op::MulRow { x, row }, rg))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let tx = self.value(x);
        let t = Tensor {
            shape: tx.shape().to_vec(),
            data: tx.data().iter().map(|v| v * s).collect(),
        };
        let rg = self.rg(x);
        self.push(t, Op::Scale(x, s), rg)
    }

    pub fn add_scalar(&mut self, x: Var, s: f64) -> Var {
        let tx = self.value(x);
        let t = Tensor {
            shape: tx.shape().to_vec(),
            data: tx.data().iter().map(|v| v + s).collect(),
        };
        let rg = self.rg(x);
        self.push(t, Op::AddScalar(x), rg)
    }

    fn map(&mut self, x: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let tx = self.value(x);
        Tensor {
            shape: tx.shape().to_vec(),
            data: tx.data().iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let t = self.map(x, gelu);
        let rg = self.rg(x);
        self.push(t, Op::Gelu(x), rg)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let t = self.map(x, f64::tanh);
        let rg = self.rg(x);
        self.push(t, Op::Tanh(x), rg)
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        let t = self.map(x, f64::sqrt);
        let rg = self.rg(x);
        self.push(t, Op::Sqrt(x), rg)
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let (_, cols) = tx.matrix_dims();
        let mut data = tx.data().to_vec();
        for row in data.chunks_mut(cols.max(1)) {
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - mx).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        let t = Tensor {
            shape: tx.shape().to_vec(),
            data,
        };
        let rg = self.rg(x);
        self.push(t, Op::Softmax(x), rg)
    }

    /// `softmax(scale * x + bias)` over the last axis, fused to skip two
    /// intermediate tensors per attention head.
    pub fn softmax_biased(&mut self, x: Var, scale: f64, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        if tx.shape() != tb.shape() {
            return Err(shape_err("softmax_biased", tx, tb));
        }
        let (_, cols) = tx.matrix_dims();
        let mut data: Vec<f64> = tx.data().iter().zip(tb.data()).map(|(a, b)| scale * a + b).collect();
        for row in data.chunks_mut(cols.max(1)) {
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - mx).exp();
                sum += *v;
            }
            let inv = 1.0 / sum;
            for v in row.iter_mut() {
                *v *= inv;
            }
        }
        let t = Tensor {
            shape: tx.shape().to_vec(),
            data,
        };
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(t, Op::SoftmaxBiased { x, bias, scale }, rg))
    }

    /// Layer normalization over the last axis with elementwise gain and bias.
    pub fn layernorm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        const EPS: f64 = 1e-5;
        let (tx, tg, tb) = (self.value(x), self.value(gain), self.value(bias));
        if !row_len_ok(tx, tg) {
            return Err(shape_err("layernorm", tx, tg));
        }
        if !row_len_ok(tx, tb) {
            return Err(shape_err("layernorm", tx, tb));
        }
        let (rows, cols) = tx.matrix_dims();
        let mut data = vec![0.0; tx.len()];
        let mut rstd = Vec::with_capacity(rows);
        for (src, dst) in tx.data().chunks(cols).zip(data.chunks_mut(cols)) {
            let mean = src.iter().sum::<f64>() / cols as f64;
            let var = src.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let rs = 1.0 / (var + EPS).sqrt();
            rstd.push(rs);
            for j in 0..cols {
                dst[j] = (src[j] - mean) * rs * tg.data()[j] + tb.data()[j];
            }
        }
        let t = Tensor::new(tx.shape(), data)?;
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        Ok(self.push(t, Op::LayerNorm { x, gain, bias, rstd }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum::<f64>();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let s = tx.data().iter().sum::<f64>() / tx.len().max(1) as f64;
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Mean(x), rg)
    }

    /// Columns `[start, start + len)` of a 2-D value.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let tx = self.value(x);
        let (rows, cols) = tx.matrix_dims();
        if tx.shape().len() != 2 || start + len > cols {
            return Err(Error::Shape {
                op: "slice_cols",
                lhs: tx.shape().to_vec(),
                rhs: vec![start, len],
            });
        }
        let mut data = Vec::with_capacity(rows * len);
        for row in tx.data().chunks(cols) {
            data.extend_from_slice(&row[start..start + len]);
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(&[rows, len], data)?, Op::SliceCols { x, start }, rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::invalid("concat of nothing"))?;
        let rows = self.value(*first).shape()[0];
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let t = self.value(p);
            if t.shape().len() != 2 || t.shape()[0] != rows {
                return Err(shape_err("concat_cols", self.value(*first), t));
            }
            widths.push(t.shape()[1]);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::new(&[rows, total], data)?, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::invalid("concat of nothing"))?;
        let cols = self.value(*first).matrix_dims().1;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            let (r, c) = t.matrix_dims();
            if c != cols {
                return Err(shape_err("concat_rows", self.value(*first), t));
            }
            rows += r;
            data.extend_from_slice(t.data());
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::new(&[rows, cols], data)?, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Embedding lookup: output row `i` is row `rows[i]` of `table`.
    pub fn gather_rows(&mut self, table: Var, rows: &[usize]) -> Result<Var> {
        let tt = self.value(table);
        let (n, cols) = tt.matrix_dims();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for &r in rows {
            if r >= n {
                return Err(Error::Shape {
                    op: "gather_rows",
                    lhs: tt.shape().to_vec(),
                    rhs: vec![r],
                });
            }
            data.extend_from_slice(&tt.data()[r * cols..(r + 1) * cols]);
        }
        let rg = self.rg(table);
        Ok(self.push(
            Tensor::new(&[rows.len(), cols], data)?,
            Op::Gather {
                table,
                rows: rows.to_vec(),
            },
            rg,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::Reshape(x), rg))
    }

    /// Elementwise `sqrt((pred - target)^2 + c^2) - c`.
    pub fn pseudo_huber(&mut self, pred: Var, target: Var, c: f64) -> Result<Var> {
        if c <= 0.0 || !c.is_finite() {
            return Err(Error::invalid(format!("pseudo-Huber constant must be > 0, got {c}")));
        }
        let t = self.zip_same(pred, target, "pseudo_huber", |p, y| pseudo_huber(p - y, c))?;
        let rg = self.rg(pred) || self.rg(target);
        Ok(self.push(t, Op::PseudoHuber { pred, target, c }, rg))
    }

    /// Reverse pass from a scalar. Consumes the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        let n = self.nodes.len();
        if loss.0 >= n {
            return Err(Error::invalid("loss is not on this tape"));
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::Shape {
                op: "backward (loss must be scalar)",
                lhs: self.nodes[loss.0].value.shape().to_vec(),
                rhs: vec![1],
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[loss.0] = Some(vec![1.0]);
        let nodes = &self.nodes;

        fn acc(grads: &mut [Option<Vec<f64>>], nodes: &[Node], v: Var, f: impl FnOnce(&mut [f64])) {
            if !nodes[v.0].requires_grad {
                return;
            }
            let len = nodes[v.0].value.len();
            let g = grads[v.0].get_or_insert_with(|| vec![0.0; len]);
            f(g);
        }

        // Pass-through gradient: moved into an empty slot instead of added to zeros.
        fn give(grads: &mut [Option<Vec<f64>>], nodes: &[Node], v: Var, gy: Vec<f64>) {
            if !nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(g) => add_into(g, &gy),
                slot => *slot = Some(gy),
            }
        }

        for i in (0..=loss.0).rev() {
            let node = &nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(gy) = grads[i].take() else { continue };
            let y = &node.value;
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(gy);
                    continue;
                }
                Op::MatMul { a, b, b_trans } => {
                    let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
                    let (m, k) = (ta.shape()[0], ta.shape()[1]);
                    let n_out = y.shape()[1];
                    // dA = dY · op(B)ᵀ
                    acc(&mut grads, nodes, *a, |g| {
                        gemm(m, n_out, k, &gy, false, tb.data(), !*b_trans, g, true)
                    });
                    if *b_trans {
                        // B is n×k: dB = dYᵀ · A
                        acc(&mut grads, nodes, *b, |g| {
                            gemm(n_out, m, k, &gy, true, ta.data(), false, g, true)
                        });
                    } else {
                        // B is k×n: dB = Aᵀ · dY
                        acc(&mut grads, nodes, *b, |g| {
                            gemm(k, m, n_out, ta.data(), true, &gy, false, g, true)
                        });
                    }
                }
                Op::Add(a, b) => {
                    if nodes[b.0].requires_grad {
                        give(&mut grads, nodes, *a, gy.clone());
                        give(&mut grads, nodes, *b, gy);
                    } else {
                        give(&mut grads, nodes, *a, gy);
                    }
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, nodes, *a, |g| add_into(g, &gy));
                    acc(&mut grads, nodes, *b, |g| {
                        g.iter_mut().zip(&gy).for_each(|(g, d)| *g -= d)
                    });
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
                    acc(&mut grads, nodes, *a, |g| {
                        for j in 0..g.len() {
                            g[j] += gy[j] * tb.data()[j];
                        }
                    });
                    acc(&mut grads, nodes, *b, |g| {
                        for j in 0..g.len() {
                            g[j] += gy[j] * ta.data()[j];
                        }
                    });
                }
                Op::AddRow { x, row } => {
                    let cols = nodes[row.0].value.len();
                    acc(&mut grads, nodes, *row, |g| {
                        for chunk in gy.chunks(cols) {
                            add_into(g, chunk);
                        }
                    });
                    give(&mut grads, nodes, *x, gy);
                }
                Op::MulRow { x, row } => {
                    let (tx, tr) = (&nodes[x.0].value, &nodes[row.0].value);
                    let cols = tr.len();
                    acc(&mut grads, nodes, *x, |g| {
                        for (gc, dc) in g.chunks_mut(cols).zip(gy.chunks(cols)) {
                            for j in 0..cols {
                                gc[j] += dc[j] * tr.data()[j];
                            }
                        }
                    });
                    acc(&mut grads, nodes, *row, |g| {
                        for (xc, dc) in tx.data().chunks(cols).zip(gy.chunks(cols)) {
                            for j in 0..cols {
                                g[j] += dc[j] * xc[j];
                            }
                        }
                    });
                }
                Op::Scale(x, s) => {
                    acc(&mut grads, nodes, *x, |g| {
                        g.iter_mut().zip(&gy).for_each(|(g, d)| *g += d * s)
                    });
                }
                Op::AddScalar(x) | Op::Reshape(x) => {
                    give(&mut grads, nodes, *x, gy);
                }
                Op::Gelu(x) => {
                    let tx = &nodes[x.0].value;
                    acc(&mut grads, nodes, *x, |g| {
                        for j in 0..g.len() {
                            g[j] += gy[j] * gelu_grad(tx.data()[j]);
                        }
                    });
                }
                Op::Tanh(x) => {
                    acc(&mut grads, nodes, *x, |g| {
                        for j in 0..g.len() {
                            let t = y.data()[j];
                            g[j] += gy[j] * (1.0 - t * t);
                        }
                    });
                }
                Op::Sqrt(x) => {
                    acc(&mut grads, nodes, *x, |g| {
                        for j in 0..g.len() {
                            g[j] += gy[j] * 0.5 / y.data()[j];
                        }
                    });
                }
                Op::Softmax(x) => {
                    let cols = y.matrix_dims().1.max(1);
                    acc(&mut grads, nodes, *x, |g| {
                        for ((gc, yc), dc) in g.chunks_mut(cols).zip(y.data().chunks(cols)).zip(gy.chunks(cols)) {
                            let dot: f64 = yc.iter().zip(dc).map(|(a, b)| a * b).sum();
                            for j in 0..cols {
                                gc[j] += yc[j] * (dc[j] - dot);
                            }
                        }
                    });
                }
                Op::SoftmaxBiased { x, bias, scale } => {
                    let cols = y.matrix_dims().1.max(1);
                    let mut ds = gy;
                    for (dc, yc) in ds.chunks_mut(cols).zip(y.data().chunks(cols)) {
                        let dot: f64 = yc.iter().zip(dc.iter()).map(|(a, b)| a * b).sum();
                        for (d, yv) in dc.iter_mut().zip(yc) {
                            *d = yv * (*d - dot);
                        }
                    }
                    acc(&mut grads, nodes, *bias, |g| add_into(g, &ds));
                    acc(&mut grads, nodes, *x, |g| {
                        for (gv, d) in g.iter_mut().zip(&ds) {
                            *gv += scale * d;
                        }
                    });
                }
                Op::LayerNorm { x, gain, bias, rstd } => {
                    let tx = &nodes[x.0].value;
                    let tg = &nodes[gain.0].value;
                    let (rows, cols) = tx.matrix_dims();
                    // recompute normalized input
                    let mut xhat = vec![0.0; tx.len()];
                    for r in 0..rows {
                        let src = &tx.data()[r * cols..(r + 1) * cols];
                        let mean = src.iter().sum::<f64>() / cols as f64;
                        for j in 0..cols {
                            xhat[r * cols + j] = (src[j] - mean) * rstd[r];
                        }
                    }
                    acc(&mut grads, nodes, *gain, |g| {
                        for r in 0..rows {
                            for j in 0..cols {
                                g[j] += gy[r * cols + j] * xhat[r * cols + j];
                            }
                        }
                    });
                    acc(&mut grads, nodes, *bias, |g| {
                        for chunk in gy.chunks(cols) {
                            add_into(g, chunk);
                        }
                    });
                    acc(&mut grads, nodes, *x, |g| {
                        let mut dxhat = vec![0.0; cols];
                        for r in 0..rows {
                            let off = r * cols;
                            let mut m1 = 0.0;
                            let mut m2 = 0.0;
                            for j in 0..cols {
                                dxhat[j] = gy[off + j] * tg.data()[j];
                                m1 += dxhat[j];
                                m2 += dxhat[j] * xhat[off + j];
                            }
                            m1 /= cols as f64;
                            m2 /= cols as f64;
                            for j in 0..cols {
                                g[off + j] += rstd[r] * (dxhat[j] - m1 - xhat[off + j] * m2);
                            }
                        }
                    });
                }
                Op::Sum(x) => {
                    let d = gy[0];
                    acc(&mut grads, nodes, *x, |g| g.iter_mut().for_each(|g| *g += d));
                }
                Op::Mean(x) => {
                    let len = nodes[x.0].value.len().max(1) as f64;
                    let d = gy[0] / len;
                    acc(&mut grads, nodes, *x, |g| g.iter_mut().for_each(|g| *g += d));
                }
                Op::SliceCols { x, start } => {
                    let cols = nodes[x.0].value.matrix_dims().1;
                    let w = y.shape()[1];
                    acc(&mut grads, nodes, *x, |g| {
                        for (gc, dc) in g.chunks_mut(cols).zip(gy.chunks(w)) {
                            add_into(&mut gc[*start..*start + w], dc);
                        }
                    });
                }
                Op::ConcatCols(parts) => {
                    let total = y.shape()[1];
                    let mut off = 0;
                    for &p in parts {
                        let w = nodes[p.0].value.shape()[1];
                        acc(&mut grads, nodes, p, |g| {
                            for (gc, dc) in g.chunks_mut(w).zip(gy.chunks(total)) {
                                add_into(gc, &dc[off..off + w]);
                            }
                        });
                        off += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let len = nodes[p.0].value.len();
                        acc(&mut grads, nodes, p, |g| add_into(g, &gy[off..off + len]));
                        off += len;
                    }
                }
                Op::Gather { table, rows } => {
                    let cols = y.matrix_dims().1;
                    acc(&mut grads, nodes, *table, |g| {
                        for (i, &r) in rows.iter().enumerate() {
                            add_into(&mut g[r * cols..(r + 1) * cols], &gy[i * cols..(i + 1) * cols]);
                        }
                    });
                }
                Op::PseudoHuber { pred, target, c } => {
                    let (tp, tt) = (&nodes[pred.0].value, &nodes[target.0].value);
                    let dr: Vec<f64> = tp
                        .data()
                        .iter()
                        .zip(tt.data())
                        .zip(&gy)
                        .map(|((p, t), d)| {
                            let r = p - t;
                            d * r / (r * r + c * c).sqrt()
                        })
                        .collect();
                    acc(&mut grads, nodes, *pred, |g| add_into(g, &dr));
                    acc(&mut grads, nodes, *target, |g| {
                        g.iter_mut().zip(&dr).for_each(|(g, d)| *g -= d)
                    });
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}
