use super::gemm;
use super::Tensor;
use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Running statistics of one batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BnRunning {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl BnRunning {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BatchNormMode {
    /// Normalize by batch statistics and update the running statistics.
    Train,
    /// Normalize by the running statistics.
    Eval,
}

/// Operation kinds, exposed for diagnostics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpKind {
    Leaf,
    MatMul,
    Add,
    Sub,
    Scale,
    Relu,
    Concat,
    SliceCols,
    SliceRows,
    RepeatRows,
    MaxPool,
    BatchNorm,
    Reshape,
    AffinePoints,
    Sum,
    SumSquares,
    SmoothL1,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Concat(Vec<Var>),
    SliceCols { input: Var, start: usize },
    SliceRows { input: Var, start: usize },
    RepeatRows { input: Var, times: usize },
    MaxPool { input: Var, argmax: Vec<usize> },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        mode: BatchNormMode,
    },
    Reshape(Var),
    AffinePoints { points: Var, affine: Var, group: usize },
    Sum(Var),
    SumSquares(Var),
    SmoothL1(Var),
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::MatMul(..) => OpKind::MatMul,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Scale(..) => OpKind::Scale,
            Op::Relu(_) => OpKind::Relu,
            Op::Concat(_) => OpKind::Concat,
            Op::SliceCols { .. } => OpKind::SliceCols,
            Op::SliceRows { .. } => OpKind::SliceRows,
            Op::RepeatRows { .. } => OpKind::RepeatRows,
            Op::MaxPool { .. } => OpKind::MaxPool,
            Op::BatchNorm { .. } => OpKind::BatchNorm,
            Op::Reshape(_) => OpKind::Reshape,
            Op::AffinePoints { .. } => OpKind::AffinePoints,
            Op::Sum(_) => OpKind::Sum,
            Op::SumSquares(_) => OpKind::SumSquares,
            Op::SmoothL1(_) => OpKind::SmoothL1,
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    op: Op,
    label: Option<String>,
}

/// A single-owner tape of tensor operations.
///
/// Nodes are appended in execution order, so the node list is already a
/// topological order and [`Graph::backward`] is a single reverse sweep.
/// Leaf gradients accumulate across `backward` calls until
/// [`Graph::zero_grad`]; gradients of interior nodes are overwritten.
#[derive(Debug, Default)]
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

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    /// A leaf carrying a name that shows up in non-finite diagnostics.
    pub fn named_leaf(&mut self, name: &str, value: Tensor, requires_grad: bool) -> Var {
        let v = self.leaf(value, requires_grad);
        self.nodes[v.0].label = Some(name.to_string());
        v
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn op_kind(&self, v: Var) -> OpKind {
        self.nodes[v.0].op.kind()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    /// First node (in execution order) holding a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<String> {
        self.nodes.iter().enumerate().find_map(|(i, n)| {
            if n.value.is_finite() {
                return None;
            }
            Some(match &n.label {
                Some(l) => format!("node {i} ({:?} '{l}', shape {:?})", n.op.kind(), n.value.shape()),
                None => format!("node {i} ({:?}, shape {:?})", n.op.kind(), n.value.shape()),
            })
        })
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
            label: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let t = &self.nodes[v.0].value;
        (t.rows(), t.cols())
    }

    fn shape_of(&self, v: Var) -> Vec<usize> {
        self.nodes[v.0].value.shape().to_vec()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 {
            return Err(Error::Shape {
                op: "matmul",
                left: self.shape_of(a),
                right: self.shape_of(b),
            });
        }
        let mut out = vec![0.0; m * n];
        gemm::gemm_nn(m, k, n, self.value(a).data(), self.value(b).data(), 0.0, &mut out);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::matrix(m, n, out)?, rg, Op::MatMul(a, b)))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Shape {
                op,
                left: self.shape_of(a),
                right: self.shape_of(b),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x + y).collect();
        let t = Tensor::new(self.shape_of(a), data)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(t, rg, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x - y).collect();
        let t = Tensor::new(self.shape_of(a), data)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(t, rg, Op::Sub(a, b)))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let data = self.value(a).data().iter().map(|x| x * factor).collect();
        let t = Tensor::new(self.shape_of(a), data).expect("same shape");
        let rg = self.any_grad(&[a]);
        self.push(t, rg, Op::Scale(a, factor))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let data = self.value(a).data().iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect();
        let t = Tensor::new(self.shape_of(a), data).expect("same shape");
        let rg = self.any_grad(&[a]);
        self.push(t, rg, Op::Relu(a))
    }

    /// Concatenates matrices with equal row counts along the column axis.
    pub fn concat_last_dim(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::domain("concat of zero tensors"))?;
        let rows = self.dims(first).0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.dims(p);
            if r != rows {
                return Err(Error::Shape {
                    op: "concat_last_dim",
                    left: self.shape_of(first),
                    right: self.shape_of(p),
                });
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let rg = self.any_grad(parts);
        Ok(self.push(Tensor::matrix(rows, total, data)?, rg, Op::Concat(parts.to_vec())))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = self.dims(a);
        if len == 0 || start + len > cols {
            return Err(Error::contract(format!(
                "slice_cols [{start}, {}) out of range for {cols} columns",
                start + len
            )));
        }
        let src = self.value(a);
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&src.row(r)[start..start + len]);
        }
        let rg = self.any_grad(&[a]);
        Ok(self.push(Tensor::matrix(rows, len, data)?, rg, Op::SliceCols { input: a, start }))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = self.dims(a);
        if len == 0 || start + len > rows {
            return Err(Error::contract(format!(
                "slice_rows [{start}, {}) out of range for {rows} rows",
                start + len
            )));
        }
        let data = self.value(a).data()[start * cols..(start + len) * cols].to_vec();
        let rg = self.any_grad(&[a]);
        Ok(self.push(Tensor::matrix(len, cols, data)?, rg, Op::SliceRows { input: a, start }))
    }

    /// Repeats every row `times` times consecutively: `[G×d] → [G·times × d]`.
    ///
    /// With a single input row this is the plain "repeat a vector N times".
    pub fn repeat_rows(&mut self, a: Var, times: usize) -> Result<Var> {
        if times == 0 {
            return Err(Error::domain("repeat_rows with zero repetitions"));
        }
        let (rows, cols) = self.dims(a);
        let src = self.value(a);
        let mut data = Vec::with_capacity(rows * times * cols);
        for r in 0..rows {
            for _ in 0..times {
                data.extend_from_slice(src.row(r));
            }
        }
        let rg = self.any_grad(&[a]);
        Ok(self.push(Tensor::matrix(rows * times, cols, data)?, rg, Op::RepeatRows { input: a, times }))
    }

    /// Channel-wise max over all rows: `[N×d] → [1×d]`.
    pub fn max_pool_points(&mut self, a: Var) -> Result<Var> {
        let rows = self.dims(a).0;
        self.max_pool_groups(a, rows)
    }

    /// Channel-wise max over consecutive blocks of `group` rows:
    /// `[G·group × d] → [G × d]`. Ties resolve to the lowest row index.
    pub fn max_pool_groups(&mut self, a: Var, group: usize) -> Result<Var> {
        let (rows, cols) = self.dims(a);
        if group == 0 || rows == 0 {
            return Err(Error::domain("max pooling over an empty point set"));
        }
        if rows % group != 0 {
            return Err(Error::contract(format!(
                "max_pool_groups: {rows} rows not divisible into groups of {group}"
            )));
        }
        let groups = rows / group;
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(groups * cols);
        let mut argmax = Vec::with_capacity(groups * cols);
        for g in 0..groups {
            let base = g * group;
            for c in 0..cols {
                let mut best = base;
                let mut best_v = src[base * cols + c];
                for r in base + 1..base + group {
                    let v = src[r * cols + c];
                    if v > best_v {
                        best_v = v;
                        best = r;
                    }
                }
                out.push(best_v);
                argmax.push(best);
            }
        }
        let rg = self.any_grad(&[a]);
        Ok(self.push(Tensor::matrix(groups, cols, out)?, rg, Op::MaxPool { input: a, argmax }))
    }

    /// Per-channel batch normalization of an `[N×d]` input.
    ///
    /// `gamma` and `beta` are `[1×d]`. In training mode the running
    /// statistics are updated in place with momentum [`BN_MOMENTUM`]
    /// (unbiased batch variance, as in the usual framework convention).
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: &mut BnRunning,
        mode: BatchNormMode,
    ) -> Result<Var> {
        let (n, d) = self.dims(x);
        for p in [gamma, beta] {
            if self.dims(p) != (1, d) {
                return Err(Error::Shape {
                    op: "batch_norm",
                    left: self.shape_of(x),
                    right: self.shape_of(p),
                });
            }
        }
        if running.mean.len() != d || running.var.len() != d {
            return Err(Error::Shape {
                op: "batch_norm",
                left: self.shape_of(x),
                right: vec![running.mean.len()],
            });
        }
        if mode == BatchNormMode::Train && n < 2 {
            return Err(Error::domain(
                "batch_norm in training mode needs at least 2 rows for a variance",
            ));
        }
        let xs = self.value(x).data();
        let (mean, var) = match mode {
            BatchNormMode::Train => {
                let mut mean = vec![0.0; d];
                for r in 0..n {
                    for c in 0..d {
                        mean[c] += xs[r * d + c];
                    }
                }
                mean.iter_mut().for_each(|m| *m /= n as f64);
                let mut var = vec![0.0; d];
                for r in 0..n {
                    for c in 0..d {
                        let e = xs[r * d + c] - mean[c];
                        var[c] += e * e;
                    }
                }
                var.iter_mut().for_each(|v| *v /= n as f64);
                (mean, var)
            }
            BatchNormMode::Eval => (running.mean.clone(), running.var.clone()),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = vec![0.0; n * d];
        let mut out = vec![0.0; n * d];
        for r in 0..n {
            for c in 0..d {
                let i = r * d + c;
                xhat[i] = (xs[i] - mean[c]) * inv_std[c];
                out[i] = g[c] * xhat[i] + b[c];
            }
        }
        if mode == BatchNormMode::Train {
            let unbias = n as f64 / (n as f64 - 1.0);
            for c in 0..d {
                running.mean[c] = (1.0 - BN_MOMENTUM) * running.mean[c] + BN_MOMENTUM * mean[c];
                running.var[c] = (1.0 - BN_MOMENTUM) * running.var[c] + BN_MOMENTUM * var[c] * unbias;
            }
        }
        let rg = self.any_grad(&[x, gamma, beta]);
        Ok(self.push(
            Tensor::matrix(n, d, out)?,
            rg,
            Op::BatchNorm {
                input: x,
                gamma,
                beta,
                xhat,
                inv_std,
                mode,
            },
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(a).clone().reshaped(shape)?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(t, rg, Op::Reshape(a)))
    }

    /// Applies a per-group 3×4 affine map to 3D points.
    ///
    /// `points` is `[G·group × 3]`, `affine` is `[G × 12]` holding a row-major
    /// `[A | t]` per group; row `i` of the output is `A·pᵢ + t` of its group.
    pub fn affine_points(&mut self, points: Var, affine: Var, group: usize) -> Result<Var> {
        let (n, c) = self.dims(points);
        let (g, k) = self.dims(affine);
        if c != 3 || k != 12 || group == 0 || g * group != n {
            return Err(Error::Shape {
                op: "affine_points",
                left: self.shape_of(points),
                right: self.shape_of(affine),
            });
        }
        let p = self.value(points).data();
        let a = self.value(affine).data();
        let mut out = vec![0.0; n * 3];
        for i in 0..n {
            let m = &a[(i / group) * 12..(i / group + 1) * 12];
            for r in 0..3 {
                out[i * 3 + r] =
                    m[r * 4] * p[i * 3] + m[r * 4 + 1] * p[i * 3 + 1] + m[r * 4 + 2] * p[i * 3 + 2] + m[r * 4 + 3];
            }
        }
        let rg = self.any_grad(&[points, affine]);
        Ok(self.push(Tensor::matrix(n, 3, out)?, rg, Op::AffinePoints { points, affine, group }))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.any_grad(&[a]);
        self.push(Tensor::scalar(s), rg, Op::Sum(a))
    }

    pub fn sum_squares(&mut self, a: Var) -> Var {
        let s = self.value(a).norm_sq();
        let rg = self.any_grad(&[a]);
        self.push(Tensor::scalar(s), rg, Op::SumSquares(a))
    }

    /// Sum of element-wise smooth-L1 (threshold 1): `0.5x²` if `|x| < 1`, else `|x| − 0.5`.
    pub fn smooth_l1_sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().map(|&x| smooth_l1(x)).sum();
        let rg = self.any_grad(&[a]);
        self.push(Tensor::scalar(s), rg, Op::SmoothL1(a))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            self.propagate(idx, &g, &mut grads);
            let node = &mut self.nodes[idx];
            match (&node.op, node.grad.as_mut()) {
                (Op::Leaf, Some(acc)) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                _ => node.grad = Some(g),
            }
        }
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.dims(*a);
                let n = self.dims(*b).1;
                if wants(*a) {
                    let ga = slot(grads, *a, m * k);
                    gemm::gemm_nt_acc(m, n, k, g, self.value(*b).data(), ga);
                }
                if wants(*b) {
                    let gb = slot(grads, *b, k * n);
                    gemm::gemm_tn_acc(k, m, n, self.value(*a).data(), g, gb);
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if wants(v) {
                        axpy(slot(grads, v, g.len()), 1.0, g);
                    }
                }
            }
            Op::Sub(a, b) => {
                if wants(*a) {
                    axpy(slot(grads, *a, g.len()), 1.0, g);
                }
                if wants(*b) {
                    axpy(slot(grads, *b, g.len()), -1.0, g);
                }
            }
            Op::Scale(a, f) => {
                if wants(*a) {
                    axpy(slot(grads, *a, g.len()), *f, g);
                }
            }
            Op::Relu(a) => {
                if wants(*a) {
                    let x = self.value(*a).data();
                    let ga = slot(grads, *a, g.len());
                    for i in 0..g.len() {
                        if x[i] > 0.0 {
                            ga[i] += g[i];
                        }
                    }
                }
            }
            Op::Concat(parts) => {
                let total = node.value.cols();
                let rows = node.value.rows();
                let mut offset = 0;
                for &p in parts {
                    let w = self.dims(p).1;
                    if wants(p) {
                        let gp = slot(grads, p, rows * w);
                        for r in 0..rows {
                            let src = &g[r * total + offset..r * total + offset + w];
                            axpy(&mut gp[r * w..(r + 1) * w], 1.0, src);
                        }
                    }
                    offset += w;
                }
            }
            Op::SliceCols { input, start } => {
                if wants(*input) {
                    let (rows, cols) = self.dims(*input);
                    let w = node.value.cols();
                    let gi = slot(grads, *input, rows * cols);
                    for r in 0..rows {
                        axpy(&mut gi[r * cols + start..r * cols + start + w], 1.0, &g[r * w..(r + 1) * w]);
                    }
                }
            }
            Op::SliceRows { input, start } => {
                if wants(*input) {
                    let (rows, cols) = self.dims(*input);
                    let gi = slot(grads, *input, rows * cols);
                    axpy(&mut gi[start * cols..start * cols + g.len()], 1.0, g);
                }
            }
            Op::RepeatRows { input, times } => {
                if wants(*input) {
                    let (rows, cols) = self.dims(*input);
                    let gi = slot(grads, *input, rows * cols);
                    for r in 0..rows {
                        for t in 0..*times {
                            let src = (r * times + t) * cols;
                            axpy(&mut gi[r * cols..(r + 1) * cols], 1.0, &g[src..src + cols]);
                        }
                    }
                }
            }
            Op::MaxPool { input, argmax } => {
                if wants(*input) {
                    let (rows, cols) = self.dims(*input);
                    let gi = slot(grads, *input, rows * cols);
                    for (o, &r) in argmax.iter().enumerate() {
                        gi[r * cols + o % cols] += g[o];
                    }
                }
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                mode,
            } => {
                let (n, d) = self.dims(*input);
                let gam = self.value(*gamma).data();
                let mut sum_g = vec![0.0; d];
                let mut sum_gx = vec![0.0; d];
                for r in 0..n {
                    for c in 0..d {
                        sum_g[c] += g[r * d + c];
                        sum_gx[c] += g[r * d + c] * xhat[r * d + c];
                    }
                }
                if wants(*gamma) {
                    axpy(slot(grads, *gamma, d), 1.0, &sum_gx);
                }
                if wants(*beta) {
                    axpy(slot(grads, *beta, d), 1.0, &sum_g);
                }
                if wants(*input) {
                    let gi = slot(grads, *input, n * d);
                    match mode {
                        BatchNormMode::Train => {
                            let nf = n as f64;
                            for r in 0..n {
                                for c in 0..d {
                                    let i = r * d + c;
                                    gi[i] += gam[c] * inv_std[c] / nf
                                        * (nf * g[i] - sum_g[c] - xhat[i] * sum_gx[c]);
                                }
                            }
                        }
                        BatchNormMode::Eval => {
                            for r in 0..n {
                                for c in 0..d {
                                    gi[r * d + c] += g[r * d + c] * gam[c] * inv_std[c];
                                }
                            }
                        }
                    }
                }
            }
            Op::Reshape(a) => {
                if wants(*a) {
                    axpy(slot(grads, *a, g.len()), 1.0, g);
                }
            }
            Op::AffinePoints { points, affine, group } => {
                let n = self.dims(*points).0;
                let p = self.value(*points).data();
                let a = self.value(*affine).data();
                if wants(*points) {
                    let gp = slot(grads, *points, n * 3);
                    for i in 0..n {
                        let m = &a[(i / group) * 12..(i / group + 1) * 12];
                        for c in 0..3 {
                            gp[i * 3 + c] += (0..3).map(|r| m[r * 4 + c] * g[i * 3 + r]).sum::<f64>();
                        }
                    }
                }
                if wants(*affine) {
                    let ga = slot(grads, *affine, (n / group) * 12);
                    for i in 0..n {
                        let m = &mut ga[(i / group) * 12..(i / group + 1) * 12];
                        for r in 0..3 {
                            let gr = g[i * 3 + r];
                            m[r * 4] += gr * p[i * 3];
                            m[r * 4 + 1] += gr * p[i * 3 + 1];
                            m[r * 4 + 2] += gr * p[i * 3 + 2];
                            m[r * 4 + 3] += gr;
                        }
                    }
                }
            }
            Op::Sum(a) => {
                if wants(*a) {
                    let len = self.value(*a).len();
                    slot(grads, *a, len).iter_mut().for_each(|x| *x += g[0]);
                }
            }
            Op::SumSquares(a) => {
                if wants(*a) {
                    let x = self.value(*a).data();
                    let ga = slot(grads, *a, x.len());
                    for i in 0..x.len() {
                        ga[i] += 2.0 * x[i] * g[0];
                    }
                }
            }
            Op::SmoothL1(a) => {
                if wants(*a) {
                    let x = self.value(*a).data();
                    let ga = slot(grads, *a, x.len());
                    for i in 0..x.len() {
                        let d = if x[i].abs() < 1.0 { x[i] } else { x[i].signum() };
                        ga[i] += d * g[0];
                    }
                }
            }
        }
    }
}

pub(crate) fn smooth_l1(x: f64) -> f64 {
    let a = x.abs();
    if a < 1.0 {
        0.5 * x * x
    } else {
        a - 0.5
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}
