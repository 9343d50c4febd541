//! Tape-based reverse-mode differentiation.
//!
//! Every operation appends a node holding its value and the handles of its
//! inputs. Nodes are created in topological order, so the backward pass is a
//! single reverse sweep over the tape.

use super::{Activation, NnError, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Affine { x: Var, scale: f64 },
    SigmoidTau { x: Var, tau: f64 },
    Tanh(Var),
    Relu(Var),
    SoftmaxRows(Var),
    Diag(Var),
    Conv1d { x: Var, kernels: Var, bias: Var },
    MaxPool { x: Var, argmax: Vec<usize> },
    Concat(Vec<Var>),
    RepeatRows(Var),
    PadRows(Var),
    CrossEntropy { logits: Var, label: usize, probs: Vec<f64> },
    Sum(Var),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// A recording of one forward computation.
#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar output with respect to every node that needs one.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient for `var`, or `None` if it does not influence the output.
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    /// Gradient for `var`, zeros if it does not influence the output.
    pub fn get_or_zeros(&self, var: Var, len: usize) -> Vec<f64> {
        self.get(var).map_or_else(|| vec![0.0; len], <[f64]>::to_vec)
    }
}

fn shape_err(op: &str, detail: String) -> NnError {
    NnError::Shape(format!("{op}: {detail}"))
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `a (m x k) * b (k x n)` on raw slices.
fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            for (o, bv) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += aip * bv;
            }
        }
    }
    out
}

fn transpose_raw(a: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    row.iter_mut().for_each(|v| *v /= total);
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

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool, name: &'static str) -> Result<Var, NnError> {
        if !value.is_finite() {
            return Err(NnError::NonFinite(name));
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A differentiable leaf (parameter or input under test).
    pub fn input(&mut self, value: Tensor) -> Result<Var, NnError> {
        self.push(value, Op::Leaf, true, "input")
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Result<Var, NnError> {
        self.push(value, Op::Leaf, false, "constant")
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (m, k) = self.value(a).matrix_dims()?;
        let (k2, n) = self.value(b).matrix_dims()?;
        if self.value(b).rank() != 2 || k != k2 {
            return Err(shape_err(
                "matmul",
                format!("{:?} x {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let data = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        let shape = if self.value(a).rank() == 1 { vec![n] } else { vec![m, n] };
        let rg = self.needs(&[a, b]);
        self.push(Tensor::new(shape, data)?, Op::MatMul(a, b), rg, "matmul")
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var, NnError> {
        let t = self.value(x);
        if t.rank() != 2 {
            return Err(shape_err("transpose", format!("{:?}", t.shape())));
        }
        let (m, n) = (t.shape()[0], t.shape()[1]);
        let data = transpose_raw(t.data(), m, n);
        let rg = self.needs(&[x]);
        self.push(Tensor::new(vec![n, m], data)?, Op::Transpose(x), rg, "transpose")
    }

    fn zip_with(
        &mut self,
        a: Var,
        b: Var,
        op: Op,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var, NnError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(name, format!("{:?} vs {:?}", ta.shape(), tb.shape())));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.needs(&[a, b]);
        self.push(value, op, rg, name)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.zip_with(a, b, Op::Add(a, b), "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.zip_with(a, b, Op::Sub(a, b), "sub", |x, y| x - y)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.zip_with(a, b, Op::Mul(a, b), "mul", |x, y| x * y)
    }

    /// Adds a length-`n` bias to every row of a vector or `m x n` matrix.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var, NnError> {
        let (_, n) = self.value(x).matrix_dims()?;
        if self.shape(bias) != [n] {
            return Err(shape_err(
                "add_bias",
                format!("{:?} + {:?}", self.shape(x), self.shape(bias)),
            ));
        }
        let b = self.value(bias).data().to_vec();
        let tx = self.value(x);
        let data = tx
            .data()
            .chunks(n)
            .flat_map(|row| row.iter().zip(&b).map(|(v, c)| v + c))
            .collect();
        let value = Tensor::new(tx.shape().to_vec(), data)?;
        let rg = self.needs(&[x, bias]);
        self.push(value, Op::AddBias(x, bias), rg, "add_bias")
    }

    /// `x W + b` on a row vector or a batch of rows.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var, NnError> {
        let xw = self.matmul(x, weight)?;
        self.add_bias(xw, bias)
    }

    /// `scale * x + shift`.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Result<Var, NnError> {
        let tx = self.value(x);
        let data = tx.data().iter().map(|v| scale * v + shift).collect();
        let value = Tensor::new(tx.shape().to_vec(), data)?;
        let rg = self.needs(&[x]);
        self.push(value, Op::Affine { x, scale }, rg, "affine")
    }

    /// `1 / (1 + exp(-tau x))` elementwise.
    pub fn sigmoid_tau(&mut self, x: Var, tau: f64) -> Result<Var, NnError> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(NnError::Invalid(format!("sigmoid temperature {tau}")));
        }
        let tx = self.value(x);
        let data = tx.data().iter().map(|v| sigmoid(tau * v)).collect();
        let value = Tensor::new(tx.shape().to_vec(), data)?;
        let rg = self.needs(&[x]);
        self.push(value, Op::SigmoidTau { x, tau }, rg, "sigmoid")
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var, NnError> {
        self.sigmoid_tau(x, 1.0)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var, NnError> {
        let tx = self.value(x);
        let data = tx.data().iter().map(|v| v.tanh()).collect();
        let value = Tensor::new(tx.shape().to_vec(), data)?;
        let rg = self.needs(&[x]);
        self.push(value, Op::Tanh(x), rg, "tanh")
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, NnError> {
        let tx = self.value(x);
        let data = tx.data().iter().map(|v| v.max(0.0)).collect();
        let value = Tensor::new(tx.shape().to_vec(), data)?;
        let rg = self.needs(&[x]);
        self.push(value, Op::Relu(x), rg, "relu")
    }

    pub fn activate(&mut self, x: Var, activation: Activation) -> Result<Var, NnError> {
        match activation {
            Activation::Tanh => self.tanh(x),
            Activation::Relu => self.relu(x),
            Activation::Sigmoid => self.sigmoid(x),
            Activation::Identity => Ok(x),
        }
    }

    /// Row-wise softmax; a vector is treated as one row.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var, NnError> {
        let (_, n) = self.value(x).matrix_dims()?;
        if n == 0 {
            return Err(shape_err("softmax_rows", "empty rows".into()));
        }
        let mut value = self.value(x).clone();
        value.data_mut().chunks_mut(n).for_each(softmax_in_place);
        let rg = self.needs(&[x]);
        self.push(value, Op::SoftmaxRows(x), rg, "softmax_rows")
    }

    /// Main diagonal of a square matrix.
    pub fn diag(&mut self, x: Var) -> Result<Var, NnError> {
        let tx = self.value(x);
        match *tx.shape() {
            [m, n] if m == n => {
                let data = (0..n).map(|i| tx.data()[i * n + i]).collect();
                let rg = self.needs(&[x]);
                self.push(Tensor::vector(data), Op::Diag(x), rg, "diag")
            }
            _ => Err(shape_err("diag", format!("{:?}", tx.shape()))),
        }
    }

    /// Valid convolution over token windows: `x` is `p x d`, `kernels` is
    /// `F x h x d`, `bias` is `F`; the result is `(p - h + 1) x F` before
    /// activation.
    pub fn conv1d_linear(&mut self, x: Var, kernels: Var, bias: Var) -> Result<Var, NnError> {
        let (tx, tk, tb) = (self.value(x), self.value(kernels), self.value(bias));
        let (p, d, f, h) = match (tx.shape(), tk.shape(), tb.shape()) {
            (&[p, d], &[f, h, dk], &[fb]) if d == dk && f == fb && h >= 1 => (p, d, f, h),
            _ => {
                return Err(shape_err(
                    "conv1d",
                    format!("x {:?}, kernels {:?}, bias {:?}", tx.shape(), tk.shape(), tb.shape()),
                ))
            }
        };
        if p < h {
            return Err(NnError::SequenceTooShort { len: p, window: h });
        }
        let out_len = p - h + 1;
        let window = h * d;
        let mut out = vec![0.0; out_len * f];
        for i in 0..out_len {
            // Rows i..i+h are contiguous in row-major order.
            let patch = &tx.data()[i * d..i * d + window];
            for (fi, o) in out[i * f..(i + 1) * f].iter_mut().enumerate() {
                let k = &tk.data()[fi * window..(fi + 1) * window];
                *o = tb.data()[fi] + k.iter().zip(patch).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        let rg = self.needs(&[x, kernels, bias]);
        self.push(
            Tensor::new(vec![out_len, f], out)?,
            Op::Conv1d { x, kernels, bias },
            rg,
            "conv1d",
        )
    }

    pub fn conv1d(
        &mut self,
        x: Var,
        kernels: Var,
        bias: Var,
        activation: Activation,
    ) -> Result<Var, NnError> {
        let linear = self.conv1d_linear(x, kernels, bias)?;
        self.activate(linear, activation)
    }

    /// Column-wise maximum over all rows; ties go to the first row.
    pub fn maxpool_all(&mut self, x: Var) -> Result<Var, NnError> {
        let tx = self.value(x);
        let (l, f) = match *tx.shape() {
            [l, f] if l >= 1 => (l, f),
            _ => return Err(shape_err("maxpool_all", format!("{:?}", tx.shape()))),
        };
        let mut argmax = vec![0usize; f];
        let mut best: Vec<f64> = tx.row(0).to_vec();
        for i in 1..l {
            for (j, v) in tx.row(i).iter().enumerate() {
                if *v > best[j] {
                    best[j] = *v;
                    argmax[j] = i;
                }
            }
        }
        let rg = self.needs(&[x]);
        self.push(Tensor::vector(best), Op::MaxPool { x, argmax }, rg, "maxpool_all")
    }

    /// Concatenates vectors end to end, or matrices with equal row counts
    /// along the feature axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, NnError> {
        let first = *parts
            .first()
            .ok_or_else(|| shape_err("concat", "no inputs".into()))?;
        let rank = self.value(first).rank();
        let value = match rank {
            1 => {
                let mut data = Vec::new();
                for &p in parts {
                    if self.value(p).rank() != 1 {
                        return Err(shape_err("concat", "mixed ranks".into()));
                    }
                    data.extend_from_slice(self.value(p).data());
                }
                Tensor::vector(data)
            }
            2 => {
                let rows = self.shape(first)[0];
                if parts
                    .iter()
                    .any(|&p| self.value(p).rank() != 2 || self.shape(p)[0] != rows)
                {
                    return Err(shape_err("concat", "row counts differ".into()));
                }
                let width: usize = parts.iter().map(|&p| self.shape(p)[1]).sum();
                let mut data = Vec::with_capacity(rows * width);
                for i in 0..rows {
                    for &p in parts {
                        data.extend_from_slice(self.value(p).row(i));
                    }
                }
                Tensor::new(vec![rows, width], data)?
            }
            _ => return Err(shape_err("concat", format!("rank {rank}"))),
        };
        let rg = self.needs(parts);
        self.push(value, Op::Concat(parts.to_vec()), rg, "concat")
    }

    /// Tiles a vector into `rows` identical rows.
    pub fn repeat_rows(&mut self, v: Var, rows: usize) -> Result<Var, NnError> {
        let tv = self.value(v);
        if tv.rank() != 1 {
            return Err(shape_err("repeat_rows", format!("{:?}", tv.shape())));
        }
        let n = tv.len();
        let data = tv.data().repeat(rows);
        let rg = self.needs(&[v]);
        self.push(Tensor::new(vec![rows, n], data)?, Op::RepeatRows(v), rg, "repeat_rows")
    }

    /// Appends zero rows until the matrix has at least `rows` rows.
    pub fn pad_rows(&mut self, x: Var, rows: usize) -> Result<Var, NnError> {
        let tx = self.value(x);
        let (p, d) = match *tx.shape() {
            [p, d] => (p, d),
            _ => return Err(shape_err("pad_rows", format!("{:?}", tx.shape()))),
        };
        if p >= rows {
            return Ok(x);
        }
        let mut data = tx.data().to_vec();
        data.resize(rows * d, 0.0);
        let rg = self.needs(&[x]);
        self.push(Tensor::new(vec![rows, d], data)?, Op::PadRows(x), rg, "pad_rows")
    }

    /// `-log softmax(logits)[label]`.
    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var, NnError> {
        let tl = self.value(logits);
        if tl.rank() != 1 {
            return Err(shape_err("cross_entropy", format!("{:?}", tl.shape())));
        }
        if label >= tl.len() {
            return Err(NnError::LabelOutOfRange {
                label,
                classes: tl.len(),
            });
        }
        let mut probs = tl.data().to_vec();
        softmax_in_place(&mut probs);
        // log-sum-exp form keeps the loss finite when probs[label] underflows.
        let max = tl.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + tl.data().iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let loss = lse - tl.data()[label];
        let rg = self.needs(&[logits]);
        self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                label,
                probs,
            },
            rg,
            "cross_entropy",
        )
    }

    /// Sum of all elements.
    pub fn sum(&mut self, x: Var) -> Result<Var, NnError> {
        let total = self.value(x).data().iter().sum();
        let rg = self.needs(&[x]);
        self.push(Tensor::scalar(total), Op::Sum(x), rg, "sum")
    }

    /// Reverse sweep from a single-element output.
    pub fn backward(&self, output: Var) -> Result<Gradients, NnError> {
        let out = self.value(output);
        if out.len() != 1 {
            return Err(NnError::NotScalar(out.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(vec![1.0]);

        for idx in (0..=output.0).rev() {
            let Some(upstream) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if node.requires_grad {
                self.propagate(node, &upstream, &mut grads);
            }
            grads[idx] = Some(upstream);
        }
        for (g, node) in grads.iter_mut().zip(&self.nodes) {
            if !node.requires_grad {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], var: Var, delta: Vec<f64>) {
        if !self.nodes[var.0].requires_grad {
            return;
        }
        match &mut grads[var.0] {
            Some(g) => g.iter_mut().zip(&delta).for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(delta),
        }
    }

    fn propagate(&self, node: &Node, up: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = ta.matrix_dims().expect("checked in forward");
                let n = tb.shape()[1];
                if self.nodes[a.0].requires_grad {
                    let bt = transpose_raw(tb.data(), k, n);
                    self.accumulate(grads, *a, matmul_raw(up, &bt, m, n, k));
                }
                if self.nodes[b.0].requires_grad {
                    let at = transpose_raw(ta.data(), m, k);
                    self.accumulate(grads, *b, matmul_raw(&at, up, k, m, n));
                }
            }
            Op::Transpose(x) => {
                let (m, n) = (node.value.shape()[0], node.value.shape()[1]);
                self.accumulate(grads, *x, transpose_raw(up, m, n));
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, up.to_vec());
                self.accumulate(grads, *b, up.to_vec());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, up.to_vec());
                self.accumulate(grads, *b, up.iter().map(|g| -g).collect());
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate(grads, *a, up.iter().zip(tb).map(|(g, v)| g * v).collect());
                self.accumulate(grads, *b, up.iter().zip(ta).map(|(g, v)| g * v).collect());
            }
            Op::AddBias(x, bias) => {
                self.accumulate(grads, *x, up.to_vec());
                let n = self.value(*bias).len();
                let mut db = vec![0.0; n];
                for row in up.chunks(n) {
                    db.iter_mut().zip(row).for_each(|(d, g)| *d += g);
                }
                self.accumulate(grads, *bias, db);
            }
            Op::Affine { x, scale } => {
                self.accumulate(grads, *x, up.iter().map(|g| g * scale).collect());
            }
            Op::SigmoidTau { x, tau } => {
                let dx = up
                    .iter()
                    .zip(y)
                    .map(|(g, s)| g * tau * s * (1.0 - s))
                    .collect();
                self.accumulate(grads, *x, dx);
            }
            Op::Tanh(x) => {
                let dx = up.iter().zip(y).map(|(g, t)| g * (1.0 - t * t)).collect();
                self.accumulate(grads, *x, dx);
            }
            Op::Relu(x) => {
                let xs = self.value(*x).data();
                let dx = up
                    .iter()
                    .zip(xs)
                    .map(|(g, v)| if *v > 0.0 { *g } else { 0.0 })
                    .collect();
                self.accumulate(grads, *x, dx);
            }
            Op::SoftmaxRows(x) => {
                let (_, n) = node.value.matrix_dims().expect("checked in forward");
                let mut dx = Vec::with_capacity(up.len());
                for (g_row, y_row) in up.chunks(n).zip(y.chunks(n)) {
                    let dot: f64 = g_row.iter().zip(y_row).map(|(g, s)| g * s).sum();
                    dx.extend(g_row.iter().zip(y_row).map(|(g, s)| s * (g - dot)));
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Diag(x) => {
                let n = up.len();
                let mut dx = vec![0.0; n * n];
                for (i, g) in up.iter().enumerate() {
                    dx[i * n + i] = *g;
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Conv1d { x, kernels, bias } => {
                let (tx, tk) = (self.value(*x), self.value(*kernels));
                let (d, f, h) = (tx.shape()[1], tk.shape()[0], tk.shape()[1]);
                let out_len = node.value.shape()[0];
                let window = h * d;
                let mut dx = vec![0.0; tx.len()];
                let mut dk = vec![0.0; tk.len()];
                let mut db = vec![0.0; f];
                for i in 0..out_len {
                    let patch = &tx.data()[i * d..i * d + window];
                    for fi in 0..f {
                        let g = up[i * f + fi];
                        if g == 0.0 {
                            continue;
                        }
                        db[fi] += g;
                        let k = &tk.data()[fi * window..(fi + 1) * window];
                        dk[fi * window..(fi + 1) * window]
                            .iter_mut()
                            .zip(patch)
                            .for_each(|(a, b)| *a += g * b);
                        dx[i * d..i * d + window]
                            .iter_mut()
                            .zip(k)
                            .for_each(|(a, b)| *a += g * b);
                    }
                }
                self.accumulate(grads, *x, dx);
                self.accumulate(grads, *kernels, dk);
                self.accumulate(grads, *bias, db);
            }
            Op::MaxPool { x, argmax } => {
                let f = argmax.len();
                let mut dx = vec![0.0; self.value(*x).len()];
                for (j, &i) in argmax.iter().enumerate() {
                    dx[i * f + j] += up[j];
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Concat(parts) => {
                let rows = if node.value.rank() == 2 {
                    node.value.shape()[0]
                } else {
                    1
                };
                let width = node.value.len() / rows.max(1);
                let mut offset = 0;
                for &p in parts {
                    let pw = self.value(p).len() / rows.max(1);
                    let mut dp = Vec::with_capacity(self.value(p).len());
                    for r in 0..rows {
                        dp.extend_from_slice(&up[r * width + offset..r * width + offset + pw]);
                    }
                    offset += pw;
                    self.accumulate(grads, p, dp);
                }
            }
            Op::RepeatRows(v) => {
                let n = self.value(*v).len();
                let mut dv = vec![0.0; n];
                for row in up.chunks(n) {
                    dv.iter_mut().zip(row).for_each(|(d, g)| *d += g);
                }
                self.accumulate(grads, *v, dv);
            }
            Op::PadRows(x) => {
                let len = self.value(*x).len();
                self.accumulate(grads, *x, up[..len].to_vec());
            }
            Op::CrossEntropy {
                logits,
                label,
                probs,
            } => {
                let g = up[0];
                let mut dl: Vec<f64> = probs.iter().map(|p| g * p).collect();
                dl[*label] -= g;
                self.accumulate(grads, *logits, dl);
            }
            Op::Sum(x) => {
                let len = self.value(*x).len();
                self.accumulate(grads, *x, vec![up[0]; len]);
            }
        }
    }
}
