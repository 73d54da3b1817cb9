//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation in creation order, which is already a
//! topological order: an op can only reference nodes that existed before it.
//! [`Graph::backward`] walks that tape once in reverse.

use rand::Rng;

use super::{NumericError, Tensor};

/// Handle to a node in a [`Graph`].
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
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Concat(Vec<Var>),
    Slice {
        input: Var,
        axis: usize,
        start: usize,
    },
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Softmax(Var),
    Log(Var),
    Mean(Var),
    MeanRows(Var),
    Dropout {
        input: Var,
        mask: Vec<f64>,
    },
    LayerNorm {
        input: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    CrossEntropy {
        logits: Var,
        label: usize,
        probs: Vec<f64>,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Transpose(..) => "transpose",
            Op::Add(..) | Op::AddRow(..) => "add",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Concat(..) => "concat",
            Op::Slice { .. } => "slice",
            Op::Tanh(..) => "tanh",
            Op::Sigmoid(..) => "sigmoid",
            Op::Relu(..) => "relu",
            Op::Softmax(..) => "softmax",
            Op::Log(..) => "log",
            Op::Mean(..) => "mean",
            Op::MeanRows(..) => "mean_rows",
            Op::Dropout { .. } => "dropout",
            Op::LayerNorm { .. } => "layer_norm",
            Op::CrossEntropy { .. } => "cross_entropy",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Recorded computation. One graph per forward pass.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient with respect to `var`; zero when `var` is not on a path to the loss.
    pub fn get(&self, var: Var) -> Tensor {
        let shape = self.shapes[var.0].clone();
        match self.grads.get(var.0).and_then(Option::as_ref) {
            Some(g) => Tensor::from_parts(shape, g.clone()),
            None => {
                let n = shape.iter().product();
                Tensor::from_parts(shape, vec![0.0; n])
            }
        }
    }
}

/// Views `shape` as `[outer, shape[axis], inner]`.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let out_row = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let b_row = &b[p * m..(p + 1) * m];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

fn check_same_shape(op: &str, a: &Tensor, b: &Tensor) -> Result<(), NumericError> {
    if a.shape() != b.shape() {
        return Err(NumericError::Shape(format!(
            "{op}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
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

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op) -> Result<Var, NumericError> {
        if !value.is_finite() {
            return Err(NumericError::NonFinite { op: op.name() });
        }
        let needs_grad = self.inputs_need_grad(&op);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn inputs_need_grad(&self, op: &Op) -> bool {
        let ng = |v: &Var| self.nodes[v.0].needs_grad;
        match op {
            Op::Leaf => false,
            Op::MatMul(a, b) | Op::Add(a, b) | Op::AddRow(a, b) | Op::Mul(a, b) => ng(a) || ng(b),
            Op::Concat(vs) => vs.iter().any(ng),
            Op::LayerNorm {
                input, gain, bias, ..
            } => ng(input) || ng(gain) || ng(bias),
            Op::Transpose(x)
            | Op::Scale(x, _)
            | Op::Tanh(x)
            | Op::Sigmoid(x)
            | Op::Relu(x)
            | Op::Softmax(x)
            | Op::Log(x)
            | Op::Mean(x)
            | Op::MeanRows(x) => ng(x),
            Op::Slice { input, .. } | Op::Dropout { input, .. } => ng(input),
            Op::CrossEntropy { logits, .. } => ng(logits),
        }
    }

    /// `[n, k] × [k, m] → [n, m]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape().len() != 2 || bv.shape().len() != 2 || av.shape()[1] != bv.shape()[0] {
            return Err(NumericError::Shape(format!(
                "matmul: cannot multiply {:?} by {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let (n, k, m) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
        let mut out = vec![0.0; n * m];
        matmul_into(av.data(), bv.data(), &mut out, n, k, m);
        self.push(Tensor::from_parts(vec![n, m], out), Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var, NumericError> {
        let xv = self.value(x);
        if xv.shape().len() != 2 {
            return Err(NumericError::Shape(format!(
                "transpose: expected a matrix, got {:?}",
                xv.shape()
            )));
        }
        let (r, c) = (xv.shape()[0], xv.shape()[1]);
        let d = xv.data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = d[i * c + j];
            }
        }
        self.push(Tensor::from_parts(vec![c, r], out), Op::Transpose(x))
    }

    /// Elementwise sum. `b` may also be a single row broadcast over the rows of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() == bv.shape() {
            let out = av
                .data()
                .iter()
                .zip(bv.data())
                .map(|(x, y)| x + y)
                .collect();
            return self.push(Tensor::from_parts(av.shape().to_vec(), out), Op::Add(a, b));
        }
        let row_like = bv.len() == bv.last_dim();
        if row_like && bv.last_dim() == av.last_dim() {
            let w = av.last_dim();
            let bd = bv.data();
            let out = av
                .data()
                .iter()
                .enumerate()
                .map(|(i, x)| x + bd[i % w])
                .collect();
            return self.push(
                Tensor::from_parts(av.shape().to_vec(), out),
                Op::AddRow(a, b),
            );
        }
        Err(NumericError::Shape(format!(
            "add: cannot add {:?} and {:?}",
            av.shape(),
            bv.shape()
        )))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        let (av, bv) = (self.value(a), self.value(b));
        check_same_shape("mul", av, bv)?;
        let out = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(x, y)| x * y)
            .collect();
        self.push(Tensor::from_parts(av.shape().to_vec(), out), Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var, NumericError> {
        let xv = self.value(x);
        let out = xv.data().iter().map(|v| v * factor).collect();
        self.push(
            Tensor::from_parts(xv.shape().to_vec(), out),
            Op::Scale(x, factor),
        )
    }

    /// Concatenation along the last axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, NumericError> {
        let first = parts
            .first()
            .ok_or_else(|| NumericError::Shape("concat: no inputs".into()))?;
        let lead = {
            let s = self.value(*first).shape();
            s[..s.len() - 1].to_vec()
        };
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let s = self.value(*p).shape();
            if s[..s.len() - 1] != lead[..] {
                return Err(NumericError::Shape(format!(
                    "concat: leading shape {:?} does not match {:?}",
                    s,
                    self.value(*first).shape()
                )));
            }
            widths.push(s[s.len() - 1]);
        }
        let total: usize = widths.iter().sum();
        let rows: usize = lead.iter().product();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(*p).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        self.push(Tensor::from_parts(shape, out), Op::Concat(parts.to_vec()))
    }

    /// Half-open range `[start, end)` along `axis`.
    pub fn slice(
        &mut self,
        x: Var,
        axis: usize,
        start: usize,
        end: usize,
    ) -> Result<Var, NumericError> {
        let xv = self.value(x);
        if axis >= xv.shape().len() || start >= end || end > xv.shape()[axis] {
            return Err(NumericError::Shape(format!(
                "slice: range {start}..{end} on axis {axis} is invalid for {:?}",
                xv.shape()
            )));
        }
        let (outer, dim, inner) = axis_split(xv.shape(), axis);
        let len = end - start;
        let d = xv.data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * dim * inner;
            out.extend_from_slice(&d[base + start * inner..base + end * inner]);
        }
        let mut shape = xv.shape().to_vec();
        shape[axis] = len;
        self.push(
            Tensor::from_parts(shape, out),
            Op::Slice {
                input: x,
                axis,
                start,
            },
        )
    }

    fn map(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var, NumericError> {
        let xv = self.value(x);
        let out = xv.data().iter().map(|&v| f(v)).collect();
        self.push(Tensor::from_parts(xv.shape().to_vec(), out), op)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var, NumericError> {
        self.map(x, f64::tanh, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var, NumericError> {
        self.map(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, NumericError> {
        self.map(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn log(&mut self, x: Var) -> Result<Var, NumericError> {
        self.map(x, f64::ln, Op::Log(x))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var, NumericError> {
        let xv = self.value(x);
        let w = xv.last_dim();
        let mut out = xv.data().to_vec();
        for row in out.chunks_mut(w) {
            softmax_in_place(row);
        }
        self.push(Tensor::from_parts(xv.shape().to_vec(), out), Op::Softmax(x))
    }

    /// Mean of all entries, as a one-element tensor.
    pub fn mean(&mut self, x: Var) -> Result<Var, NumericError> {
        let xv = self.value(x);
        let m = xv.data().iter().sum::<f64>() / xv.len() as f64;
        self.push(Tensor::scalar(m), Op::Mean(x))
    }

    /// Mean over rows: `[r, c] → [1, c]`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var, NumericError> {
        let xv = self.value(x);
        let (rows, w) = (xv.rows(), xv.last_dim());
        let mut out = vec![0.0; w];
        for row in xv.data().chunks(w) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        for o in &mut out {
            *o /= rows as f64;
        }
        self.push(Tensor::from_parts(vec![1, w], out), Op::MeanRows(x))
    }

    /// Inverted dropout. Identity when `train` is false or `p` is zero.
    pub fn dropout<R: Rng>(
        &mut self,
        x: Var,
        p: f64,
        train: bool,
        rng: &mut R,
    ) -> Result<Var, NumericError> {
        if !(0.0..1.0).contains(&p) {
            return Err(NumericError::Invalid(format!(
                "dropout probability must lie in [0, 1), got {p}"
            )));
        }
        if !train || p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let xv = self.value(x);
        let mask: Vec<f64> = (0..xv.len())
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
            .collect();
        let out = xv.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let shape = xv.shape().to_vec();
        self.push(
            Tensor::from_parts(shape, out),
            Op::Dropout { input: x, mask },
        )
    }

    /// `x · w + b` with `b` broadcast over rows.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var, NumericError> {
        let xw = self.matmul(x, w)?;
        self.add(xw, b)
    }

    /// Layer normalisation over the last axis with learned `gain` and `bias`.
    pub fn layer_norm(
        &mut self,
        x: Var,
        gain: Var,
        bias: Var,
        eps: f64,
    ) -> Result<Var, NumericError> {
        let xv = self.value(x);
        let w = xv.last_dim();
        let (gv, bv) = (self.value(gain), self.value(bias));
        if gv.len() != w || bv.len() != w {
            return Err(NumericError::Shape(format!(
                "layer_norm: input {:?} with gain {:?} and bias {:?}",
                xv.shape(),
                gv.shape(),
                bv.shape()
            )));
        }
        let mut xhat = Vec::with_capacity(xv.len());
        let mut inv_std = Vec::with_capacity(xv.rows());
        let mut out = Vec::with_capacity(xv.len());
        for row in xv.data().chunks(w) {
            let mean = row.iter().sum::<f64>() / w as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / w as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std.push(is);
            for (j, v) in row.iter().enumerate() {
                let h = (v - mean) * is;
                xhat.push(h);
                out.push(h * gv.data()[j] + bv.data()[j]);
            }
        }
        let shape = xv.shape().to_vec();
        self.push(
            Tensor::from_parts(shape, out),
            Op::LayerNorm {
                input: x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        )
    }

    /// `-log softmax(logits)[label]`, stabilised by max-subtraction.
    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var, NumericError> {
        let lv = self.value(logits);
        let k = lv.last_dim();
        if lv.rows() != 1 || k < 2 {
            return Err(NumericError::Shape(format!(
                "cross_entropy: expected a single row of at least 2 logits, got {:?}",
                lv.shape()
            )));
        }
        if label >= k {
            return Err(NumericError::Invalid(format!(
                "cross_entropy: label {label} out of range for {k} classes"
            )));
        }
        let z = lv.data();
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let loss = lse - (z[label] - max);
        let probs = z.iter().map(|v| (v - max - lse).exp()).collect();
        self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                label,
                probs,
            },
        )
    }

    /// Reverse pass from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NumericError> {
        if self.value(loss).len() != 1 {
            return Err(NumericError::Shape(format!(
                "backward: loss must be a scalar, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.needs_grad {
                grads[id] = None;
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            if let Op::Leaf = node.op {
                grads[id] = Some(g);
                continue;
            }
            let contributions = self.vjp(node, &g);
            for (var, contrib) in contributions {
                if !self.nodes[var.0].needs_grad {
                    continue;
                }
                if contrib.iter().any(|v| !v.is_finite()) {
                    return Err(NumericError::NonFiniteGradient { op: node.op.name() });
                }
                match &mut grads[var.0] {
                    Some(acc) => {
                        for (a, c) in acc.iter_mut().zip(&contrib) {
                            *a += c;
                        }
                    }
                    slot @ None => *slot = Some(contrib),
                }
            }
        }
        // Only leaves keep their gradients; intermediate buffers were consumed above.
        let shapes = self
            .nodes
            .iter()
            .map(|n| n.value.shape().to_vec())
            .collect();
        Ok(Gradients { grads, shapes })
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Vector-Jacobian products for the inputs of `node` given its output gradient.
    fn vjp(&self, node: &Node, g: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let out = node.value.data();
        match &node.op {
            Op::Leaf => Vec::new(),
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (n, k, m) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                let mut res = Vec::with_capacity(2);
                if self.needs(*a) {
                    // dA = G · Bᵀ
                    let mut da = vec![0.0; n * k];
                    let bd = bv.data();
                    for i in 0..n {
                        let g_row = &g[i * m..(i + 1) * m];
                        for p in 0..k {
                            let b_row = &bd[p * m..(p + 1) * m];
                            da[i * k + p] = g_row.iter().zip(b_row).map(|(x, y)| x * y).sum();
                        }
                    }
                    res.push((*a, da));
                }
                if self.needs(*b) {
                    // dB = Aᵀ · G
                    let mut db = vec![0.0; k * m];
                    let ad = av.data();
                    for i in 0..n {
                        let g_row = &g[i * m..(i + 1) * m];
                        for p in 0..k {
                            let av_ip = ad[i * k + p];
                            if av_ip == 0.0 {
                                continue;
                            }
                            for (d, gv) in db[p * m..(p + 1) * m].iter_mut().zip(g_row) {
                                *d += av_ip * gv;
                            }
                        }
                    }
                    res.push((*b, db));
                }
                res
            }
            Op::Transpose(x) => {
                let (r, c) = (self.value(*x).shape()[0], self.value(*x).shape()[1]);
                let mut dx = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        dx[i * c + j] = g[j * r + i];
                    }
                }
                vec![(*x, dx)]
            }
            Op::Add(a, b) => vec![(*a, g.to_vec()), (*b, g.to_vec())],
            Op::AddRow(a, b) => {
                let w = self.value(*b).len();
                let mut db = vec![0.0; w];
                for row in g.chunks(w) {
                    for (d, v) in db.iter_mut().zip(row) {
                        *d += v;
                    }
                }
                vec![(*a, g.to_vec()), (*b, db)]
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                let da = g.iter().zip(bd).map(|(x, y)| x * y).collect();
                let db = g.iter().zip(ad).map(|(x, y)| x * y).collect();
                vec![(*a, da), (*b, db)]
            }
            Op::Scale(x, f) => vec![(*x, g.iter().map(|v| v * f).collect())],
            Op::Concat(parts) => {
                let widths: Vec<usize> = parts.iter().map(|p| self.value(*p).last_dim()).collect();
                let total: usize = widths.iter().sum();
                let rows = g.len() / total;
                let mut res: Vec<(Var, Vec<f64>)> = parts
                    .iter()
                    .zip(&widths)
                    .map(|(p, w)| (*p, Vec::with_capacity(rows * w)))
                    .collect();
                for r in 0..rows {
                    let mut off = r * total;
                    for ((_, buf), &w) in res.iter_mut().zip(&widths) {
                        buf.extend_from_slice(&g[off..off + w]);
                        off += w;
                    }
                }
                res
            }
            Op::Slice { input, axis, start } => {
                let xv = self.value(*input);
                let (outer, dim, inner) = axis_split(xv.shape(), *axis);
                let len = node.value.shape()[*axis];
                let mut dx = vec![0.0; xv.len()];
                for o in 0..outer {
                    let src = &g[o * len * inner..(o + 1) * len * inner];
                    let base = o * dim * inner + start * inner;
                    dx[base..base + len * inner].copy_from_slice(src);
                }
                vec![(*input, dx)]
            }
            Op::Tanh(x) => vec![(
                *x,
                g.iter().zip(out).map(|(g, y)| g * (1.0 - y * y)).collect(),
            )],
            Op::Sigmoid(x) => vec![(
                *x,
                g.iter().zip(out).map(|(g, y)| g * y * (1.0 - y)).collect(),
            )],
            Op::Relu(x) => {
                let xd = self.value(*x).data();
                vec![(
                    *x,
                    g.iter()
                        .zip(xd)
                        .map(|(g, v)| if *v > 0.0 { *g } else { 0.0 })
                        .collect(),
                )]
            }
            Op::Log(x) => {
                let xd = self.value(*x).data();
                vec![(*x, g.iter().zip(xd).map(|(g, v)| g / v).collect())]
            }
            Op::Softmax(x) => {
                let w = node.value.last_dim();
                let mut dx = Vec::with_capacity(g.len());
                for (gr, yr) in g.chunks(w).zip(out.chunks(w)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    dx.extend(gr.iter().zip(yr).map(|(gi, yi)| yi * (gi - dot)));
                }
                vec![(*x, dx)]
            }
            Op::Mean(x) => {
                let n = self.value(*x).len();
                vec![(*x, vec![g[0] / n as f64; n])]
            }
            Op::MeanRows(x) => {
                let xv = self.value(*x);
                let rows = xv.rows() as f64;
                let dx = (0..xv.len()).map(|i| g[i % g.len()] / rows).collect();
                vec![(*x, dx)]
            }
            Op::Dropout { input, mask } => {
                vec![(*input, g.iter().zip(mask).map(|(g, m)| g * m).collect())]
            }
            Op::LayerNorm {
                input,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let w = node.value.last_dim();
                let gd = self.value(*gain).data();
                let mut dx = Vec::with_capacity(g.len());
                let mut dgain = vec![0.0; w];
                let mut dbias = vec![0.0; w];
                for (r, (gr, hr)) in g.chunks(w).zip(xhat.chunks(w)).enumerate() {
                    let mut sum_d = 0.0;
                    let mut sum_dh = 0.0;
                    for j in 0..w {
                        let d = gr[j] * gd[j];
                        sum_d += d;
                        sum_dh += d * hr[j];
                        dgain[j] += gr[j] * hr[j];
                        dbias[j] += gr[j];
                    }
                    let scale = inv_std[r] / w as f64;
                    for j in 0..w {
                        let d = gr[j] * gd[j];
                        dx.push(scale * (w as f64 * d - sum_d - hr[j] * sum_dh));
                    }
                }
                vec![(*input, dx), (*gain, dgain), (*bias, dbias)]
            }
            Op::CrossEntropy {
                logits,
                label,
                probs,
            } => {
                let mut dz: Vec<f64> = probs.iter().map(|p| p * g[0]).collect();
                dz[*label] -= g[0];
                vec![(*logits, dz)]
            }
        }
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}
