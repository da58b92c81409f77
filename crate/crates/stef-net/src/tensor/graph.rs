//! Define-by-run computation graph with reverse-mode differentiation.

use crate::error::{Error, Result};

use super::{broadcast_shape, broadcast_to, reduce_grad_to_shape, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy)]
enum ReduceKind {
    Sum,
    Mean,
    Prod,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Square(Var),
    Relu(Var),
    ClampMin(Var, f64),
    MulScalar(Var, f64),
    MatMul(Var, Var),
    Conv2d {
        input: Var,
        kernels: Var,
        bias: Var,
    },
    Softmax {
        input: Var,
        axis: usize,
    },
    Reduce {
        kind: ReduceKind,
        input: Var,
        axis: Option<usize>,
    },
    Reshape(Var),
    ConcatLast(Var, Var),
    Stack(Vec<Var>),
}

struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    needs_grad: bool,
    op: Op,
}

/// Topologically ordered operation records. Nodes are appended as operations
/// run, so reverse creation order is exact reverse topological order.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    /// Register an input tensor. Gradients are tracked only when
    /// `requires_grad` is set.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    fn push(&mut self, value: Tensor, needs_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            needs_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient buffer of `v`, populated by [`Graph::backward`].
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drop all accumulated gradients. Gradients are never zeroed implicitly.
    pub fn reset_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn needs_any(&self, vars: &[Var]) -> bool {
        vars.iter().any(|&v| self.needs(v))
    }

    // ----- elementwise binary ops (broadcasting) -----

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x / y, Op::Div(a, b))
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let out_shape = broadcast_shape(self.value(a).shape(), self.value(b).shape())?;
        let av = broadcast_to(self.value(a), &out_shape);
        let bv = broadcast_to(self.value(b), &out_shape);
        let data: Vec<f64> = av.iter().zip(&bv).map(|(&x, &y)| f(x, y)).collect();
        let needs = self.needs_any(&[a, b]);
        Ok(self.push(Tensor { shape: out_shape, data }, needs, op))
    }

    // ----- elementwise unary ops -----

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(a, |x| -x, Op::Neg(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, |x| 1.0 / (1.0 + (-x).exp()), Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    /// Elementwise `max(x, floor)`.
    pub fn clamp_min(&mut self, a: Var, floor: f64) -> Var {
        self.unary(a, |x| x.max(floor), Op::ClampMin(a, floor))
    }

    pub fn mul_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x * c, Op::MulScalar(a, c))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = Tensor {
            shape: self.value(a).shape().to_vec(),
            data: self.value(a).data().iter().map(|&x| f(x)).collect(),
        };
        let needs = self.needs(a);
        self.push(value, needs, op)
    }

    // ----- matmul -----

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ash, bsh) = (self.value(a).shape(), self.value(b).shape());
        if ash.len() != 2 || bsh.len() != 2 {
            return Err(Error::dim(format!(
                "matmul needs 2-d operands, got {ash:?} and {bsh:?}"
            )));
        }
        let (m, k, k2, n) = (ash[0], ash[1], bsh[0], bsh[1]);
        if k != k2 {
            return Err(Error::dim(format!(
                "matmul inner dimensions differ: {ash:?} vs {bsh:?}"
            )));
        }
        let data = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        let needs = self.needs_any(&[a, b]);
        Ok(self.push(
            Tensor {
                shape: vec![m, n],
                data,
            },
            needs,
            Op::MatMul(a, b),
        ))
    }

    // ----- conv2d -----

    /// Same-padding 2-d cross-correlation with stride 1.
    ///
    /// `input` is `[W, H, Cin]`, `kernels` `[kw, kh, Cin, Cout]` with odd
    /// `kw`, `kh`, and `bias` `[Cout]`. Borders are zero-padded so the
    /// output keeps the `W×H` extent.
    pub fn conv2d(&mut self, input: Var, kernels: Var, bias: Var) -> Result<Var> {
        let ish = self.value(input).shape().to_vec();
        let ksh = self.value(kernels).shape().to_vec();
        let bsh = self.value(bias).shape().to_vec();
        if ish.len() != 3 || ksh.len() != 4 || bsh.len() != 1 {
            return Err(Error::dim(format!(
                "conv2d expects input [W,H,Cin], kernels [kw,kh,Cin,Cout], bias [Cout]; \
                 got {ish:?}, {ksh:?}, {bsh:?}"
            )));
        }
        let (w, h, cin) = (ish[0], ish[1], ish[2]);
        let (kw, kh, kcin, cout) = (ksh[0], ksh[1], ksh[2], ksh[3]);
        if kw % 2 == 0 || kh % 2 == 0 {
            return Err(Error::Config(format!(
                "conv2d kernel sizes must be odd for symmetric same-padding, got {kw}x{kh}"
            )));
        }
        if kw > w || kh > h {
            return Err(Error::dim(format!(
                "conv2d kernel {kw}x{kh} larger than input {w}x{h}"
            )));
        }
        if kcin != cin {
            return Err(Error::dim(format!(
                "conv2d kernel input channels {kcin} != input channels {cin}"
            )));
        }
        if bsh[0] != cout {
            return Err(Error::dim(format!(
                "conv2d bias length {} != output channels {cout}",
                bsh[0]
            )));
        }

        let x = self.value(input).data();
        let k = self.value(kernels).data();
        let b = self.value(bias).data();
        let (pw, ph) = (kw / 2, kh / 2);
        let mut out = vec![0.0; w * h * cout];
        for ox in 0..w {
            for oy in 0..h {
                let obase = (ox * h + oy) * cout;
                out[obase..obase + cout].copy_from_slice(b);
                for kx in 0..kw {
                    let ix = (ox + kx).wrapping_sub(pw);
                    if ix >= w {
                        continue;
                    }
                    for ky in 0..kh {
                        let iy = (oy + ky).wrapping_sub(ph);
                        if iy >= h {
                            continue;
                        }
                        let ibase = (ix * h + iy) * cin;
                        let kbase = (kx * kh + ky) * cin * cout;
                        for ci in 0..cin {
                            let xv = x[ibase + ci];
                            let krow = &k[kbase + ci * cout..kbase + (ci + 1) * cout];
                            let orow = &mut out[obase..obase + cout];
                            for (o, kv) in orow.iter_mut().zip(krow) {
                                *o += xv * kv;
                            }
                        }
                    }
                }
            }
        }
        let needs = self.needs_any(&[input, kernels, bias]);
        Ok(self.push(
            Tensor {
                shape: vec![w, h, cout],
                data: out,
            },
            needs,
            Op::Conv2d {
                input,
                kernels,
                bias,
            },
        ))
    }

    // ----- softmax -----

    /// Softmax along `axis`, computed with max-subtraction.
    pub fn softmax(&mut self, input: Var, axis: usize) -> Result<Var> {
        let shape = self.value(input).shape().to_vec();
        if axis >= shape.len() {
            return Err(Error::dim(format!(
                "softmax axis {axis} out of range for shape {shape:?}"
            )));
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let x = self.value(input).data();
        let mut out = vec![0.0; x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |a: usize| (o * len + a) * inner + i;
                let mut max = f64::NEG_INFINITY;
                for a in 0..len {
                    max = max.max(x[idx(a)]);
                }
                let mut sum = 0.0;
                for a in 0..len {
                    let e = (x[idx(a)] - max).exp();
                    out[idx(a)] = e;
                    sum += e;
                }
                for a in 0..len {
                    out[idx(a)] /= sum;
                }
            }
        }
        let needs = self.needs(input);
        Ok(self.push(
            Tensor { shape, data: out },
            needs,
            Op::Softmax { input, axis },
        ))
    }

    // ----- reductions -----

    pub fn reduce_sum(&mut self, input: Var, axis: Option<usize>) -> Result<Var> {
        self.reduce(ReduceKind::Sum, input, axis)
    }

    pub fn reduce_mean(&mut self, input: Var, axis: Option<usize>) -> Result<Var> {
        self.reduce(ReduceKind::Mean, input, axis)
    }

    pub fn reduce_prod(&mut self, input: Var, axis: Option<usize>) -> Result<Var> {
        self.reduce(ReduceKind::Prod, input, axis)
    }

    fn reduce(&mut self, kind: ReduceKind, input: Var, axis: Option<usize>) -> Result<Var> {
        let shape = self.value(input).shape().to_vec();
        if let Some(ax) = axis {
            if ax >= shape.len() {
                return Err(Error::dim(format!(
                    "reduce axis {ax} out of range for shape {shape:?}"
                )));
            }
        }
        let x = self.value(input).data();
        let (out_shape, data) = match axis {
            None => {
                let v = match kind {
                    ReduceKind::Sum => x.iter().sum(),
                    ReduceKind::Mean => x.iter().sum::<f64>() / x.len() as f64,
                    ReduceKind::Prod => x.iter().product(),
                };
                (vec![1], vec![v])
            }
            Some(ax) => {
                let (outer, len, inner) = split_axis(&shape, ax);
                let mut out_shape: Vec<usize> = shape.clone();
                out_shape.remove(ax);
                if out_shape.is_empty() {
                    out_shape.push(1);
                }
                let mut out = vec![0.0; outer * inner];
                for o in 0..outer {
                    for i in 0..inner {
                        let mut acc = match kind {
                            ReduceKind::Prod => 1.0,
                            _ => 0.0,
                        };
                        for a in 0..len {
                            let v = x[(o * len + a) * inner + i];
                            match kind {
                                ReduceKind::Prod => acc *= v,
                                _ => acc += v,
                            }
                        }
                        if matches!(kind, ReduceKind::Mean) {
                            acc /= len as f64;
                        }
                        out[o * inner + i] = acc;
                    }
                }
                (out_shape, out)
            }
        };
        let needs = self.needs(input);
        Ok(self.push(
            Tensor {
                shape: out_shape,
                data,
            },
            needs,
            Op::Reduce { kind, input, axis },
        ))
    }

    // ----- shape ops -----

    pub fn reshape(&mut self, input: Var, shape: Vec<usize>) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != self.value(input).numel() {
            return Err(Error::dim(format!(
                "cannot reshape {:?} to {:?}",
                self.value(input).shape(),
                shape
            )));
        }
        let value = Tensor {
            shape,
            data: self.value(input).data().to_vec(),
        };
        let needs = self.needs(input);
        Ok(self.push(value, needs, Op::Reshape(input)))
    }

    /// Concatenate along the last axis (channels). Leading dimensions must
    /// match exactly.
    pub fn concat_last(&mut self, a: Var, b: Var) -> Result<Var> {
        let ash = self.value(a).shape().to_vec();
        let bsh = self.value(b).shape().to_vec();
        if ash.len() != bsh.len() || ash.is_empty() || ash[..ash.len() - 1] != bsh[..bsh.len() - 1]
        {
            return Err(Error::dim(format!(
                "concat_last needs matching leading dims, got {ash:?} and {bsh:?}"
            )));
        }
        let (ca, cb) = (ash[ash.len() - 1], bsh[bsh.len() - 1]);
        let rows = self.value(a).numel() / ca;
        let mut data = Vec::with_capacity(rows * (ca + cb));
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        for r in 0..rows {
            data.extend_from_slice(&av[r * ca..(r + 1) * ca]);
            data.extend_from_slice(&bv[r * cb..(r + 1) * cb]);
        }
        let mut shape = ash;
        *shape.last_mut().unwrap() = ca + cb;
        let needs = self.needs_any(&[a, b]);
        Ok(self.push(Tensor { shape, data }, needs, Op::ConcatLast(a, b)))
    }

    /// Stack equally shaped tensors along a new leading axis.
    pub fn stack(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Usage("stack of zero tensors".into()));
        }
        let first = self.value(parts[0]).shape().to_vec();
        let mut data = Vec::with_capacity(parts.len() * self.value(parts[0]).numel());
        for &p in parts {
            if self.value(p).shape() != first.as_slice() {
                return Err(Error::dim(format!(
                    "stack parts disagree: {:?} vs {:?}",
                    first,
                    self.value(p).shape()
                )));
            }
            data.extend_from_slice(self.value(p).data());
        }
        let mut shape = vec![parts.len()];
        shape.extend_from_slice(&first);
        let needs = self.needs_any(parts);
        Ok(self.push(Tensor { shape, data }, needs, Op::Stack(parts.to_vec())))
    }

    // ----- backward -----

    /// Reverse-mode sweep from a scalar `loss`. Gradients accumulate with
    /// `+=` into every reachable node that needs one; call
    /// [`Graph::reset_grads`] before reusing a graph for another backward.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Usage(format!(
                "backward requires a scalar, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        self.accumulate(loss, &[1.0]);
        for i in (0..self.nodes.len()).rev() {
            if !self.nodes[i].needs_grad || matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            // Intermediate gradients are transient: they are consumed here and
            // dropped, so only leaf gradients persist and accumulate across
            // backward passes.
            let Some(grad) = self.nodes[i].grad.take() else {
                continue;
            };
            let op = self.nodes[i].op.clone();
            self.backprop_node(i, &grad, &op);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, contribution: &[f64]) {
        let node = &mut self.nodes[v.0];
        let buf = node
            .grad
            .get_or_insert_with(|| vec![0.0; node.value.numel()]);
        for (g, c) in buf.iter_mut().zip(contribution) {
            *g += c;
        }
    }

    fn backprop_node(&mut self, node_idx: usize, grad: &[f64], op: &Op) {
        match *op {
            Op::Leaf => {}

            Op::Add(a, b) => {
                let out_shape = self.nodes[node_idx].value.shape().to_vec();
                for v in [a, b] {
                    if self.needs(v) {
                        let dv =
                            reduce_grad_to_shape(grad, &out_shape, self.value(v).shape());
                        self.accumulate(v, &dv);
                    }
                }
            }

            Op::Sub(a, b) => {
                let out_shape = self.nodes[node_idx].value.shape().to_vec();
                if self.needs(a) {
                    let da = reduce_grad_to_shape(grad, &out_shape, self.value(a).shape());
                    self.accumulate(a, &da);
                }
                if self.needs(b) {
                    let neg: Vec<f64> = grad.iter().map(|g| -g).collect();
                    let db = reduce_grad_to_shape(&neg, &out_shape, self.value(b).shape());
                    self.accumulate(b, &db);
                }
            }

            Op::Mul(a, b) => {
                let out_shape = self.nodes[node_idx].value.shape().to_vec();
                if self.needs(a) {
                    let bv = broadcast_to(self.value(b), &out_shape);
                    let da: Vec<f64> = grad.iter().zip(&bv).map(|(g, y)| g * y).collect();
                    let da = reduce_grad_to_shape(&da, &out_shape, self.value(a).shape());
                    self.accumulate(a, &da);
                }
                if self.needs(b) {
                    let av = broadcast_to(self.value(a), &out_shape);
                    let db: Vec<f64> = grad.iter().zip(&av).map(|(g, x)| g * x).collect();
                    let db = reduce_grad_to_shape(&db, &out_shape, self.value(b).shape());
                    self.accumulate(b, &db);
                }
            }

            Op::Div(a, b) => {
                let out_shape = self.nodes[node_idx].value.shape().to_vec();
                let bv = broadcast_to(self.value(b), &out_shape);
                if self.needs(a) {
                    let da: Vec<f64> = grad.iter().zip(&bv).map(|(g, y)| g / y).collect();
                    let da = reduce_grad_to_shape(&da, &out_shape, self.value(a).shape());
                    self.accumulate(a, &da);
                }
                if self.needs(b) {
                    let av = broadcast_to(self.value(a), &out_shape);
                    let db: Vec<f64> = grad
                        .iter()
                        .zip(av.iter().zip(&bv))
                        .map(|(g, (x, y))| -g * x / (y * y))
                        .collect();
                    let db = reduce_grad_to_shape(&db, &out_shape, self.value(b).shape());
                    self.accumulate(b, &db);
                }
            }

            Op::Neg(a) => {
                if self.needs(a) {
                    let da: Vec<f64> = grad.iter().map(|g| -g).collect();
                    self.accumulate(a, &da);
                }
            }

            Op::Sigmoid(a) => {
                if self.needs(a) {
                    let out = self.nodes[node_idx].value.data();
                    let da: Vec<f64> = grad
                        .iter()
                        .zip(out)
                        .map(|(g, &s)| g * s * (1.0 - s))
                        .collect();
                    self.accumulate(a, &da);
                }
            }

            Op::Tanh(a) => {
                if self.needs(a) {
                    let out = self.nodes[node_idx].value.data();
                    let da: Vec<f64> = grad
                        .iter()
                        .zip(out)
                        .map(|(g, &t)| g * (1.0 - t * t))
                        .collect();
                    self.accumulate(a, &da);
                }
            }

            Op::Exp(a) => {
                if self.needs(a) {
                    let out = self.nodes[node_idx].value.data();
                    let da: Vec<f64> = grad.iter().zip(out).map(|(g, &e)| g * e).collect();
                    self.accumulate(a, &da);
                }
            }

            Op::Square(a) => {
                if self.needs(a) {
                    let x = self.value(a).data();
                    let da: Vec<f64> = grad.iter().zip(x).map(|(g, &v)| g * 2.0 * v).collect();
                    self.accumulate(a, &da);
                }
            }

            Op::Relu(a) => {
                if self.needs(a) {
                    let x = self.value(a).data();
                    let da: Vec<f64> = grad
                        .iter()
                        .zip(x)
                        .map(|(g, &v)| if v > 0.0 { *g } else { 0.0 })
                        .collect();
                    self.accumulate(a, &da);
                }
            }

            Op::ClampMin(a, floor) => {
                if self.needs(a) {
                    let x = self.value(a).data();
                    let da: Vec<f64> = grad
                        .iter()
                        .zip(x)
                        .map(|(g, &v)| if v > floor { *g } else { 0.0 })
                        .collect();
                    self.accumulate(a, &da);
                }
            }

            Op::MulScalar(a, c) => {
                if self.needs(a) {
                    let da: Vec<f64> = grad.iter().map(|g| g * c).collect();
                    self.accumulate(a, &da);
                }
            }

            Op::MatMul(a, b) => {
                let (m, k) = {
                    let s = self.value(a).shape();
                    (s[0], s[1])
                };
                let n = self.value(b).shape()[1];
                if self.needs(a) {
                    // dA = dC · Bᵀ
                    let bv = self.value(b).data();
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        for p in 0..k {
                            let mut s = 0.0;
                            for j in 0..n {
                                s += grad[i * n + j] * bv[p * n + j];
                            }
                            da[i * k + p] = s;
                        }
                    }
                    self.accumulate(a, &da);
                }
                if self.needs(b) {
                    // dB = Aᵀ · dC
                    let av = self.value(a).data();
                    let mut db = vec![0.0; k * n];
                    for i in 0..m {
                        for p in 0..k {
                            let x = av[i * k + p];
                            let row = &grad[i * n..(i + 1) * n];
                            let drow = &mut db[p * n..(p + 1) * n];
                            for (d, g) in drow.iter_mut().zip(row) {
                                *d += x * g;
                            }
                        }
                    }
                    self.accumulate(b, &db);
                }
            }

            Op::Conv2d {
                input,
                kernels,
                bias,
            } => {
                let ish = self.value(input).shape().to_vec();
                let ksh = self.value(kernels).shape().to_vec();
                let (w, h, cin) = (ish[0], ish[1], ish[2]);
                let (kw, kh, cout) = (ksh[0], ksh[1], ksh[3]);
                let (pw, ph) = (kw / 2, kh / 2);
                let need_in = self.needs(input);
                let need_k = self.needs(kernels);
                let need_b = self.needs(bias);

                let x = self.value(input).data().to_vec();
                let kv = self.value(kernels).data().to_vec();
                let mut dx = vec![0.0; if need_in { w * h * cin } else { 0 }];
                let mut dk = vec![0.0; if need_k { kv.len() } else { 0 }];
                let mut db = vec![0.0; if need_b { cout } else { 0 }];

                for ox in 0..w {
                    for oy in 0..h {
                        let obase = (ox * h + oy) * cout;
                        let grow = &grad[obase..obase + cout];
                        if need_b {
                            for (d, g) in db.iter_mut().zip(grow) {
                                *d += g;
                            }
                        }
                        for kx in 0..kw {
                            let ix = (ox + kx).wrapping_sub(pw);
                            if ix >= w {
                                continue;
                            }
                            for ky in 0..kh {
                                let iy = (oy + ky).wrapping_sub(ph);
                                if iy >= h {
                                    continue;
                                }
                                let ibase = (ix * h + iy) * cin;
                                let kbase = (kx * kh + ky) * cin * cout;
                                for ci in 0..cin {
                                    let krow = &kv[kbase + ci * cout..kbase + (ci + 1) * cout];
                                    if need_in {
                                        let mut s = 0.0;
                                        for (g, kvv) in grow.iter().zip(krow) {
                                            s += g * kvv;
                                        }
                                        dx[ibase + ci] += s;
                                    }
                                    if need_k {
                                        let xv = x[ibase + ci];
                                        let drow =
                                            &mut dk[kbase + ci * cout..kbase + (ci + 1) * cout];
                                        for (d, g) in drow.iter_mut().zip(grow) {
                                            *d += xv * g;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                if need_in {
                    self.accumulate(input, &dx);
                }
                if need_k {
                    self.accumulate(kernels, &dk);
                }
                if need_b {
                    self.accumulate(bias, &db);
                }
            }

            Op::Softmax { input, axis } => {
                if self.needs(input) {
                    let out = self.nodes[node_idx].value.data();
                    let shape = self.nodes[node_idx].value.shape();
                    let (outer, len, inner) = split_axis(shape, axis);
                    let mut dx = vec![0.0; out.len()];
                    for o in 0..outer {
                        for i in 0..inner {
                            let idx = |a: usize| (o * len + a) * inner + i;
                            let mut dot = 0.0;
                            for a in 0..len {
                                dot += grad[idx(a)] * out[idx(a)];
                            }
                            for a in 0..len {
                                dx[idx(a)] = out[idx(a)] * (grad[idx(a)] - dot);
                            }
                        }
                    }
                    self.accumulate(input, &dx);
                }
            }

            Op::Reduce { kind, input, axis } => {
                if self.needs(input) {
                    let in_shape = self.value(input).shape().to_vec();
                    let numel: usize = in_shape.iter().product();
                    let dx = match axis {
                        None => match kind {
                            ReduceKind::Sum => vec![grad[0]; numel],
                            ReduceKind::Mean => vec![grad[0] / numel as f64; numel],
                            ReduceKind::Prod => {
                                let x = self.value(input).data();
                                leave_one_out_products(x)
                                    .into_iter()
                                    .map(|p| p * grad[0])
                                    .collect()
                            }
                        },
                        Some(ax) => {
                            let (outer, len, inner) = split_axis(&in_shape, ax);
                            let mut dx = vec![0.0; numel];
                            match kind {
                                ReduceKind::Sum | ReduceKind::Mean => {
                                    let scale = match kind {
                                        ReduceKind::Mean => 1.0 / len as f64,
                                        _ => 1.0,
                                    };
                                    for o in 0..outer {
                                        for i in 0..inner {
                                            let g = grad[o * inner + i] * scale;
                                            for a in 0..len {
                                                dx[(o * len + a) * inner + i] = g;
                                            }
                                        }
                                    }
                                }
                                ReduceKind::Prod => {
                                    let x = self.value(input).data();
                                    let mut slice = vec![0.0; len];
                                    for o in 0..outer {
                                        for i in 0..inner {
                                            for a in 0..len {
                                                slice[a] = x[(o * len + a) * inner + i];
                                            }
                                            let loo = leave_one_out_products(&slice);
                                            let g = grad[o * inner + i];
                                            for a in 0..len {
                                                dx[(o * len + a) * inner + i] = loo[a] * g;
                                            }
                                        }
                                    }
                                }
                            }
                            dx
                        }
                    };
                    self.accumulate(input, &dx);
                }
            }

            Op::Reshape(input) => {
                if self.needs(input) {
                    self.accumulate(input, grad);
                }
            }

            Op::ConcatLast(a, b) => {
                let ca = *self.value(a).shape().last().unwrap();
                let cb = *self.value(b).shape().last().unwrap();
                let rows = self.value(a).numel() / ca;
                if self.needs(a) {
                    let mut da = vec![0.0; rows * ca];
                    for r in 0..rows {
                        da[r * ca..(r + 1) * ca]
                            .copy_from_slice(&grad[r * (ca + cb)..r * (ca + cb) + ca]);
                    }
                    self.accumulate(a, &da);
                }
                if self.needs(b) {
                    let mut db = vec![0.0; rows * cb];
                    for r in 0..rows {
                        db[r * cb..(r + 1) * cb]
                            .copy_from_slice(&grad[r * (ca + cb) + ca..(r + 1) * (ca + cb)]);
                    }
                    self.accumulate(b, &db);
                }
            }

            Op::Stack(ref parts) => {
                let chunk = self.value(parts[0]).numel();
                for (idx, &p) in parts.iter().enumerate() {
                    if self.needs(p) {
                        let dp = grad[idx * chunk..(idx + 1) * chunk].to_vec();
                        self.accumulate(p, &dp);
                    }
                }
            }
        }
    }
}

/// Decompose `shape` around `axis` into (outer, axis length, inner) extents.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// For each position, the product of all *other* elements. Computed with
/// prefix/suffix products so zeros are handled exactly: with a single zero
/// factor only that position keeps a nonzero product.
fn leave_one_out_products(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut out = vec![1.0; n];
    let mut prefix = 1.0;
    for i in 0..n {
        out[i] = prefix;
        prefix *= x[i];
    }
    let mut suffix = 1.0;
    for i in (0..n).rev() {
        out[i] *= suffix;
        suffix *= x[i];
    }
    out
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let x = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            let crow = &mut c[i * n..(i + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += x * bv;
            }
        }
    }
    c
}
