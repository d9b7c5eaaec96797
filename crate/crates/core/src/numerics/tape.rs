//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! Every primitive appends one node holding its forward value. Nodes are
//! appended after their operands, so the tape order is a topological order and
//! [`Tape::backward`] is a single reverse sweep. Gradients accumulate into a
//! node that is used more than once, which is what makes a tied embedding
//! table receive contributions from both the input lookup and the output
//! scores.

use std::sync::Arc;

use super::stable::{logsumexp, logsumexp_at, sigmoid};
use super::tensor::{gemm_acc, gemm_at_acc, gemm_bt_acc, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Mapping from classes to groups, used to turn class logits into a
/// distribution over groups by summing class probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct Grouping {
    class_group: Vec<usize>,
    members: Vec<Vec<usize>>,
}

impl Grouping {
    pub fn new(class_group: Vec<usize>, num_groups: usize) -> Result<Self> {
        let mut members = vec![Vec::new(); num_groups];
        for (c, &g) in class_group.iter().enumerate() {
            if g >= num_groups {
                return Err(Error::argument(format!("class {c} mapped to group {g} >= {num_groups}")));
            }
            members[g].push(c);
        }
        Ok(Self { class_group, members })
    }

    pub fn identity(n: usize) -> Self {
        Self { class_group: (0..n).collect(), members: (0..n).map(|i| vec![i]).collect() }
    }

    pub fn num_classes(&self) -> usize {
        self.class_group.len()
    }

    pub fn num_groups(&self) -> usize {
        self.members.len()
    }

    pub fn group_of(&self, class: usize) -> usize {
        self.class_group[class]
    }

    pub fn members(&self, group: usize) -> &[usize] {
        &self.members[group]
    }
}

/// Negative log-probability of each row's target group under a softmax over
/// the row's class logits.
pub fn nll_rows(logits: &Tensor, targets: &[usize], grouping: &Grouping) -> Vec<f64> {
    targets
        .iter()
        .enumerate()
        .map(|(b, &t)| {
            let row = logits.row(b);
            logsumexp(row) - logsumexp_at(row, grouping.members(t))
        })
        .collect()
}

/// A fused primitive whose forward value is computed by the caller.
pub trait CustomOp {
    fn name(&self) -> &'static str;

    /// Gradients with respect to each input, given the upstream gradient of
    /// the output. `None` means no contribution.
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad_output: &Tensor) -> Vec<Option<Tensor>>;
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    MatVec(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Concat(Vec<Var>),
    SliceCols { input: Var, start: usize },
    Gather { table: Var, indices: Vec<usize> },
    ScatterAdd { source: Var, indices: Vec<usize> },
    SoftmaxRows(Var),
    LogSumExpRows(Var),
    Sum(Var),
    Nll { logits: Var, targets: Vec<usize>, grouping: Arc<Grouping>, lse_all: Vec<f64>, lse_group: Vec<f64> },
    Custom { inputs: Vec<Var>, op: Box<dyn CustomOp> },
}

struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Gradient of `var`, or exact zeros when the loss does not depend on it.
    pub fn get_or_zeros(&self, var: Var) -> Tensor {
        self.get(var).cloned().unwrap_or_else(|| Tensor::zeros(&self.shapes[var.0]))
    }

    pub fn take(&mut self, var: Var) -> Tensor {
        self.grads[var.0].take().unwrap_or_else(|| Tensor::zeros(&self.shapes[var.0]))
    }
}

fn check_same_shape(op: &str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::argument(format!("{op}: shapes {:?} and {:?} differ", a.shape(), b.shape())));
    }
    Ok(())
}

fn accumulate(slot: &mut Option<Tensor>, grad: Tensor) {
    match slot {
        Some(existing) => existing.add_assign(&grad),
        None => *slot = Some(grad),
    }
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

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, name: &'static str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records an input. Non-finite input is a contract violation.
    pub fn leaf(&mut self, value: Tensor) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::contract("non-finite value entered the tape"));
        }
        self.nodes.push(Node { value, op: Op::Leaf });
        Ok(Var(self.nodes.len() - 1))
    }

    fn dims2(&self, var: Var, op: &str) -> Result<(usize, usize)> {
        let t = self.value(var);
        if t.ndim() != 2 {
            return Err(Error::argument(format!("{op}: expected a matrix, got shape {:?}", t.shape())));
        }
        Ok((t.shape()[0], t.shape()[1]))
    }

    /// `a[m×k] · b[k×n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a, "matmul")?;
        let (k2, n) = self.dims2(b, "matmul")?;
        if k != k2 {
            return Err(Error::argument(format!("matmul: inner dimensions {k} and {k2} differ")));
        }
        let mut out = vec![0.0; m * n];
        gemm_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b), "matmul")
    }

    /// `a[m×k] · b[n×k]ᵀ`
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a, "matmul_bt")?;
        let (n, k2) = self.dims2(b, "matmul_bt")?;
        if k != k2 {
            return Err(Error::argument(format!("matmul_bt: inner dimensions {k} and {k2} differ")));
        }
        let mut out = vec![0.0; m * n];
        gemm_bt_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        self.push(Tensor::matrix(m, n, out)?, Op::MatMulBt(a, b), "matmul_bt")
    }

    /// `a[m×n] · x[n]`
    pub fn matvec(&mut self, a: Var, x: Var) -> Result<Var> {
        let (m, n) = self.dims2(a, "matvec")?;
        let xv = self.value(x);
        if xv.ndim() != 1 || xv.len() != n {
            return Err(Error::argument(format!("matvec: vector of shape {:?} against {m}x{n}", xv.shape())));
        }
        let mut out = vec![0.0; m];
        gemm_bt_acc(xv.data(), self.value(a).data(), &mut out, 1, n, m);
        self.push(Tensor::vector(out), Op::MatVec(a, x), "matvec")
    }

    /// Elementwise sum. `b` may also be a vector broadcast over the rows of a
    /// matrix `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let broadcast = av.ndim() == 2 && bv.ndim() == 1 && bv.len() == av.cols();
        if !broadcast {
            check_same_shape("add", av, bv)?;
        }
        let mut out = av.clone();
        if broadcast {
            let cols = av.cols();
            for (i, o) in out.data_mut().iter_mut().enumerate() {
                *o += bv.data()[i % cols];
            }
        } else {
            out.add_assign(bv);
        }
        self.push(out, Op::Add(a, b), "add")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        check_same_shape("mul", av, bv)?;
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::new(av.shape(), data)?;
        self.push(out, Op::Mul(a, b), "mul")
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let mut out = self.value(a).clone();
        out.scale_in_place(factor);
        self.push(out, Op::Scale(a, factor), "scale")
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let out = Tensor::new(av.shape(), av.data().iter().map(|&v| sigmoid(v)).collect())?;
        self.push(out, Op::Sigmoid(a), "sigmoid")
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let out = Tensor::new(av.shape(), av.data().iter().map(|v| v.tanh()).collect())?;
        self.push(out, Op::Tanh(a), "tanh")
    }

    /// Concatenates along the last axis. Operands must agree on row count.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::argument("concat of nothing"))?;
        let rows = self.value(first).rows();
        let ndim = self.value(first).ndim().max(1);
        let mut total = 0;
        for &p in parts {
            let t = self.value(p);
            if t.rows() != rows || t.ndim().max(1) != ndim {
                return Err(Error::argument("concat: operands disagree on rows"));
            }
            total += t.cols();
        }
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let shape = if ndim == 1 { vec![total] } else { vec![rows, total] };
        self.push(Tensor::new(&shape, data)?, Op::Concat(parts.to_vec()), "concat")
    }

    /// Columns `start..end` of a matrix (or entries of a vector).
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let av = self.value(a);
        if start > end || end > av.cols() {
            return Err(Error::argument(format!("slice {start}..{end} of {} columns", av.cols())));
        }
        let rows = av.rows();
        let mut data = Vec::with_capacity(rows * (end - start));
        for r in 0..rows {
            data.extend_from_slice(&av.row(r)[start..end]);
        }
        let shape = if av.ndim() == 1 { vec![end - start] } else { vec![rows, end - start] };
        self.push(Tensor::new(&shape, data)?, Op::SliceCols { input: a, start }, "slice_cols")
    }

    /// Rows `indices` of `table`, as a `[len × cols]` matrix.
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let (n, d) = self.dims2(table, "gather_rows")?;
        let tv = self.value(table);
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            if i >= n {
                return Err(Error::argument(format!("gather_rows: row {i} out of {n}")));
            }
            data.extend_from_slice(tv.row(i));
        }
        let out = Tensor::matrix(indices.len(), d, data)?;
        self.push(out, Op::Gather { table, indices: indices.to_vec() }, "gather_rows")
    }

    /// Adds row `j` of `source` into row `indices[j]` of a zero `[rows × cols]`
    /// matrix; the adjoint of [`Tape::gather_rows`].
    pub fn scatter_add_rows(&mut self, source: Var, indices: &[usize], rows: usize) -> Result<Var> {
        let (m, d) = self.dims2(source, "scatter_add_rows")?;
        if m != indices.len() {
            return Err(Error::argument("scatter_add_rows: one index per source row required"));
        }
        let sv = self.value(source);
        let mut out = Tensor::zeros(&[rows, d]);
        for (j, &i) in indices.iter().enumerate() {
            if i >= rows {
                return Err(Error::argument(format!("scatter_add_rows: row {i} out of {rows}")));
            }
            for (o, v) in out.row_mut(i).iter_mut().zip(sv.row(j)) {
                *o += v;
            }
        }
        self.push(out, Op::ScatterAdd { source, indices: indices.to_vec() }, "scatter_add_rows")
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let mut out = self.value(a).clone();
        for r in 0..out.rows() {
            super::stable::softmax_in_place(out.row_mut(r));
        }
        self.push(out, Op::SoftmaxRows(a), "softmax_rows")
    }

    /// Row-wise log-sum-exp: `[m×n] → [m]`, `[n] → scalar`.
    pub fn logsumexp_rows(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let values: Vec<f64> = (0..av.rows()).map(|r| logsumexp(av.row(r))).collect();
        let out = if av.ndim() <= 1 { Tensor::scalar(values[0]) } else { Tensor::vector(values) };
        self.push(out, Op::LogSumExpRows(a), "logsumexp")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let total = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(total), Op::Sum(a), "sum")
    }

    /// Mean over rows of `-ln P(target group)` where class probabilities are
    /// the row softmax of `logits` and a group's probability is the sum over
    /// its member classes.
    pub fn nll_from_logits(&mut self, logits: Var, targets: &[usize], grouping: Arc<Grouping>) -> Result<Var> {
        let (rows, classes) = self.dims2(logits, "nll_from_logits")?;
        if rows != targets.len() || rows == 0 {
            return Err(Error::argument("nll_from_logits: one target per row required"));
        }
        if classes != grouping.num_classes() {
            return Err(Error::argument("nll_from_logits: grouping does not match logits"));
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= grouping.num_groups()) {
            return Err(Error::argument(format!("nll_from_logits: target {t} out of range")));
        }
        let lv = self.value(logits);
        let mut lse_all = Vec::with_capacity(rows);
        let mut lse_group = Vec::with_capacity(rows);
        let mut total = 0.0;
        for (b, &t) in targets.iter().enumerate() {
            let row = lv.row(b);
            let all = logsumexp(row);
            let group = logsumexp_at(row, grouping.members(t));
            total += all - group;
            lse_all.push(all);
            lse_group.push(group);
        }
        let out = Tensor::scalar(total / rows as f64);
        let op = Op::Nll { logits, targets: targets.to_vec(), grouping, lse_all, lse_group };
        self.push(out, op, "nll_from_logits")
    }

    /// Records the output of a fused primitive computed outside the tape.
    pub fn custom(&mut self, inputs: &[Var], output: Tensor, op: Box<dyn CustomOp>) -> Result<Var> {
        let name = op.name();
        self.push(output, Op::Custom { inputs: inputs.to_vec(), op }, name)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::argument(format!("backward from non-scalar of shape {:?}", lv.shape())));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(lv.shape(), 1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let out = &node.value;
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                    let mut ga = vec![0.0; m * k];
                    gemm_bt_acc(g.data(), bv.data(), &mut ga, m, n, k);
                    let mut gb = vec![0.0; k * n];
                    gemm_at_acc(av.data(), g.data(), &mut gb, m, k, n);
                    accumulate(&mut grads[a.0], Tensor::matrix(m, k, ga)?);
                    accumulate(&mut grads[b.0], Tensor::matrix(k, n, gb)?);
                }
                Op::MatMulBt(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[0]);
                    let mut ga = vec![0.0; m * k];
                    gemm_acc(g.data(), bv.data(), &mut ga, m, n, k);
                    let mut gb = vec![0.0; n * k];
                    gemm_at_acc(g.data(), av.data(), &mut gb, m, n, k);
                    accumulate(&mut grads[a.0], Tensor::matrix(m, k, ga)?);
                    accumulate(&mut grads[b.0], Tensor::matrix(n, k, gb)?);
                }
                Op::MatVec(a, x) => {
                    let (av, xv) = (self.value(*a), self.value(*x));
                    let (m, n) = (av.shape()[0], av.shape()[1]);
                    let mut ga = vec![0.0; m * n];
                    gemm_acc(g.data(), xv.data(), &mut ga, m, 1, n);
                    let mut gx = vec![0.0; n];
                    gemm_acc(g.data(), av.data(), &mut gx, 1, m, n);
                    accumulate(&mut grads[a.0], Tensor::matrix(m, n, ga)?);
                    accumulate(&mut grads[x.0], Tensor::vector(gx));
                }
                Op::Add(a, b) => {
                    let bv = self.value(*b);
                    if bv.shape() == g.shape() {
                        accumulate(&mut grads[b.0], g.clone());
                    } else {
                        let cols = bv.len();
                        let mut gb = vec![0.0; cols];
                        for (j, v) in g.data().iter().enumerate() {
                            gb[j % cols] += v;
                        }
                        accumulate(&mut grads[b.0], Tensor::new(bv.shape(), gb)?);
                    }
                    accumulate(&mut grads[a.0], g);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let ga = g.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
                    let gb = g.data().iter().zip(av.data()).map(|(x, y)| x * y).collect();
                    accumulate(&mut grads[a.0], Tensor::new(av.shape(), ga)?);
                    accumulate(&mut grads[b.0], Tensor::new(bv.shape(), gb)?);
                }
                Op::Scale(a, factor) => {
                    let mut ga = g;
                    ga.scale_in_place(*factor);
                    accumulate(&mut grads[a.0], ga);
                }
                Op::Sigmoid(a) => {
                    let ga = g.data().iter().zip(out.data()).map(|(d, y)| d * y * (1.0 - y)).collect();
                    accumulate(&mut grads[a.0], Tensor::new(out.shape(), ga)?);
                }
                Op::Tanh(a) => {
                    let ga = g.data().iter().zip(out.data()).map(|(d, y)| d * (1.0 - y * y)).collect();
                    accumulate(&mut grads[a.0], Tensor::new(out.shape(), ga)?);
                }
                Op::Concat(parts) => {
                    let rows = out.rows();
                    let mut offset = 0;
                    for p in parts {
                        let pv = self.value(*p);
                        let c = pv.cols();
                        let mut gp = Vec::with_capacity(rows * c);
                        for r in 0..rows {
                            gp.extend_from_slice(&g.row(r)[offset..offset + c]);
                        }
                        accumulate(&mut grads[p.0], Tensor::new(pv.shape(), gp)?);
                        offset += c;
                    }
                }
                Op::SliceCols { input, start } => {
                    let iv = self.value(*input);
                    let mut gi = Tensor::zeros(iv.shape());
                    let width = out.cols();
                    for r in 0..iv.rows() {
                        gi.row_mut(r)[*start..*start + width].copy_from_slice(g.row(r));
                    }
                    accumulate(&mut grads[input.0], gi);
                }
                Op::Gather { table, indices } => {
                    let tv = self.value(*table);
                    let mut gt = Tensor::zeros(tv.shape());
                    for (j, &row) in indices.iter().enumerate() {
                        for (o, v) in gt.row_mut(row).iter_mut().zip(g.row(j)) {
                            *o += v;
                        }
                    }
                    accumulate(&mut grads[table.0], gt);
                }
                Op::ScatterAdd { source, indices } => {
                    let sv = self.value(*source);
                    let d = sv.cols();
                    let mut gs = Vec::with_capacity(indices.len() * d);
                    for &row in indices {
                        gs.extend_from_slice(g.row(row));
                    }
                    accumulate(&mut grads[source.0], Tensor::new(sv.shape(), gs)?);
                }
                Op::SoftmaxRows(a) => {
                    let mut ga = Tensor::zeros(out.shape());
                    for r in 0..out.rows() {
                        let (y, d) = (out.row(r), g.row(r));
                        let inner: f64 = y.iter().zip(d).map(|(a, b)| a * b).sum();
                        for ((o, &yv), &dv) in ga.row_mut(r).iter_mut().zip(y).zip(d) {
                            *o = yv * (dv - inner);
                        }
                    }
                    accumulate(&mut grads[a.0], ga);
                }
                Op::LogSumExpRows(a) => {
                    let av = self.value(*a);
                    let mut ga = Tensor::zeros(av.shape());
                    for r in 0..av.rows() {
                        let (lse, d) = (out.data()[r], g.data()[r]);
                        for (o, &x) in ga.row_mut(r).iter_mut().zip(av.row(r)) {
                            *o = d * (x - lse).exp();
                        }
                    }
                    accumulate(&mut grads[a.0], ga);
                }
                Op::Sum(a) => {
                    let av = self.value(*a);
                    accumulate(&mut grads[a.0], Tensor::filled(av.shape(), g.item()));
                }
                Op::Nll { logits, targets, grouping, lse_all, lse_group } => {
                    let lv = self.value(*logits);
                    let scale = g.item() / targets.len() as f64;
                    let mut gl = Tensor::zeros(lv.shape());
                    for (b, &t) in targets.iter().enumerate() {
                        let row = lv.row(b);
                        let grow = gl.row_mut(b);
                        for (o, &x) in grow.iter_mut().zip(row) {
                            *o = scale * (x - lse_all[b]).exp();
                        }
                        for &c in grouping.members(t) {
                            grow[c] -= scale * (row[c] - lse_group[b]).exp();
                        }
                    }
                    accumulate(&mut grads[logits.0], gl);
                }
                Op::Custom { inputs, op } => {
                    let values: Vec<&Tensor> = inputs.iter().map(|v| self.value(*v)).collect();
                    let input_grads = op.backward(&values, out, &g);
                    for (v, gi) in inputs.iter().zip(input_grads) {
                        if let Some(gi) = gi {
                            accumulate(&mut grads[v.0], gi);
                        }
                    }
                }
            }
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }
}
