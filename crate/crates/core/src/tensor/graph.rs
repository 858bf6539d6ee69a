use super::gemm::gemm;
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`]. Only meaningful for the graph that made it.
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
    MatMul(Var, Var),
    /// `a * b^T`
    MatMulNt(Var, Var),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Transpose(Var),
    ConcatCols(Vec<Var>),
    MaxOverRows {
        x: Var,
        argmax: Vec<usize>,
    },
    MeanOverRows(Var),
    SoftmaxRows(Var),
    Sum(Var),
    GatherRows {
        x: Var,
        index: Vec<usize>,
    },
    GroupMax {
        x: Var,
        argmax: Vec<usize>,
    },
    WeightedGather {
        x: Var,
        k: usize,
        index: Vec<usize>,
        weight: Vec<f64>,
    },
    MaskMul {
        x: Var,
        mask: Vec<f64>,
    },
    StandardizeCols {
        x: Var,
        inv_std: Vec<f64>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
        scale: f64,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// A dynamic tape of tensor operations.
///
/// Nodes are appended in creation order, so every node's inputs precede it
/// and [`Graph::backward`] walks the tape in exact reverse.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    marks: Option<Vec<(String, Var)>>,
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, contribution: Vec<f64>) {
    match slot {
        Some(existing) => {
            for (e, c) in existing.iter_mut().zip(contribution) {
                *e += c;
            }
        }
        None => *slot = Some(contribution),
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Adds a constant input. No gradient is tracked for it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Adds a trainable input whose gradient is populated by `backward`.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last `backward` loss with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Starts recording labelled intermediate values (see [`Graph::mark`]).
    pub fn enable_marks(&mut self) {
        self.marks.get_or_insert_with(Vec::new);
    }

    /// Records `v` under `label` when marks are enabled; a no-op otherwise.
    pub fn mark(&mut self, label: impl FnOnce() -> String, v: Var) {
        if let Some(marks) = &mut self.marks {
            marks.push((label(), v));
        }
    }

    pub fn marks(&self) -> &[(String, Var)] {
        self.marks.as_deref().unwrap_or(&[])
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = ta.expect_matrix("matmul")?;
        let (k2, n) = tb.expect_matrix("matmul")?;
        if k != k2 {
            return Err(shape_err("matmul", ta, tb));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, ta.data(), false, tb.data(), false, 0.0, &mut out);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b), rg))
    }

    /// `a * b^T` without materialising the transpose.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = ta.expect_matrix("matmul_nt")?;
        let (n, k2) = tb.expect_matrix("matmul_nt")?;
        if k != k2 {
            return Err(shape_err("matmul_nt", ta, tb));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, ta.data(), false, tb.data(), true, 0.0, &mut out);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMulNt(a, b), rg))
    }

    /// `x * w (+ b)`, the bias broadcast over rows.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (tx, tw) = (self.value(x), self.value(w));
        let (m, k) = tx.expect_matrix("linear")?;
        let (k2, n) = tw.expect_matrix("linear")?;
        if k != k2 {
            return Err(shape_err("linear", tx, tw));
        }
        let mut out = vec![0.0; m * n];
        if let Some(b) = b {
            let tb = self.value(b);
            if tb.len() != n || tb.rows() != 1 {
                return Err(shape_err("linear(bias)", tw, tb));
            }
            for row in out.chunks_exact_mut(n) {
                row.copy_from_slice(tb.data());
            }
        }
        let beta = if b.is_some() { 1.0 } else { 0.0 };
        gemm(m, k, n, tx.data(), false, tw.data(), false, beta, &mut out);
        let mut inputs = vec![x, w];
        inputs.extend(b);
        let rg = self.any_grad(&inputs);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::Linear { x, w, b }, rg))
    }

    fn zip_same(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(op, ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same("add", a, b, |x, y| x + y)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(t, Op::Add(a, b), rg))
    }

    /// Sums any non-empty list of same-shaped tensors, left to right.
    pub fn add_all(&mut self, terms: &[Var]) -> Result<Var> {
        let (&first, rest) = terms
            .split_first()
            .ok_or_else(|| Error::contract("add_all needs at least one term"))?;
        rest.iter().try_fold(first, |acc, &t| self.add(acc, t))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same("mul", a, b, |x, y| x * y)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(t, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let ta = self.value(a);
        let t = Tensor {
            shape: ta.shape().to_vec(),
            data: ta.data().iter().map(|x| x * s).collect(),
        };
        let rg = self.any_grad(&[a]);
        self.push(t, Op::Scale(a, s), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let t = Tensor {
            shape: ta.shape().to_vec(),
            data: ta.data().iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect(),
        };
        let rg = self.any_grad(&[a]);
        self.push(t, Op::Relu(a), rg)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        let (m, n) = ta.expect_matrix("transpose")?;
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = ta.data()[i * n + j];
            }
        }
        let rg = self.any_grad(&[a]);
        Ok(self.push(Tensor::matrix(n, m, data)?, Op::Transpose(a), rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::contract("concat_cols needs at least one input"))?;
        let rows = self.value(first).expect_matrix("concat_cols")?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let tp = self.value(p);
            let (r, c) = tp.expect_matrix("concat_cols")?;
            if r != rows {
                return Err(shape_err("concat_cols", self.value(first), tp));
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
        Ok(self.push(
            Tensor::matrix(rows, total, data)?,
            Op::ConcatCols(parts.to_vec()),
            rg,
        ))
    }

    /// Column-wise maximum, `m x n -> 1 x n`. Ties go to the first row.
    pub fn max_over_rows(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        let (m, n) = ta.expect_matrix("max_over_rows")?;
        let d = ta.data();
        let mut argmax = vec![0usize; n];
        let mut out = d[..n].to_vec();
        for r in 1..m {
            for c in 0..n {
                let v = d[r * n + c];
                if v > out[c] {
                    out[c] = v;
                    argmax[c] = r;
                }
            }
        }
        let rg = self.any_grad(&[a]);
        Ok(self.push(
            Tensor::matrix(1, n, out)?,
            Op::MaxOverRows { x: a, argmax },
            rg,
        ))
    }

    /// Column-wise mean, `m x n -> 1 x n`.
    pub fn mean_over_rows(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        let (m, n) = ta.expect_matrix("mean_over_rows")?;
        let mut out = vec![0.0; n];
        for row in ta.data().chunks_exact(n) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        let inv = 1.0 / m as f64;
        out.iter_mut().for_each(|o| *o *= inv);
        let rg = self.any_grad(&[a]);
        Ok(self.push(Tensor::matrix(1, n, out)?, Op::MeanOverRows(a), rg))
    }

    /// Row-wise softmax with per-row max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        let (m, n) = ta.expect_matrix("softmax_rows")?;
        let mut out = ta.data().to_vec();
        for row in out.chunks_exact_mut(n) {
            softmax_in_place(row);
        }
        let rg = self.any_grad(&[a]);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::SoftmaxRows(a), rg))
    }

    /// Sum of every element, shape `[1]`.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.any_grad(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    /// Row gather: output row `i` is input row `index[i]`.
    pub fn gather_rows(&mut self, a: Var, index: &[usize]) -> Result<Var> {
        let ta = self.value(a);
        let (m, _) = ta.expect_matrix("gather_rows")?;
        if let Some(&bad) = index.iter().find(|&&i| i >= m) {
            return Err(Error::contract(format!(
                "gather_rows index {bad} out of range for {m} rows"
            )));
        }
        if index.is_empty() {
            return Err(Error::contract("gather_rows needs at least one index"));
        }
        let t = ta.select_rows(index);
        let rg = self.any_grad(&[a]);
        Ok(self.push(
            t,
            Op::GatherRows {
                x: a,
                index: index.to_vec(),
            },
            rg,
        ))
    }

    /// Max-pools consecutive blocks of `group` rows: `(g*group) x n -> g x n`.
    /// Ties go to the first row of the block.
    pub fn group_max(&mut self, a: Var, group: usize) -> Result<Var> {
        let ta = self.value(a);
        let (m, n) = ta.expect_matrix("group_max")?;
        if group == 0 || m % group != 0 {
            return Err(Error::contract(format!(
                "group_max: {m} rows do not split into groups of {group}"
            )));
        }
        let groups = m / group;
        let d = ta.data();
        let mut out = vec![0.0; groups * n];
        let mut argmax = vec![0usize; groups * n];
        for gi in 0..groups {
            let base = gi * group;
            let o = &mut out[gi * n..(gi + 1) * n];
            let am = &mut argmax[gi * n..(gi + 1) * n];
            o.copy_from_slice(&d[base * n..(base + 1) * n]);
            am.iter_mut().for_each(|x| *x = base);
            for r in base + 1..base + group {
                let row = &d[r * n..(r + 1) * n];
                for c in 0..n {
                    if row[c] > o[c] {
                        o[c] = row[c];
                        am[c] = r;
                    }
                }
            }
        }
        let rg = self.any_grad(&[a]);
        Ok(self.push(
            Tensor::matrix(groups, n, out)?,
            Op::GroupMax { x: a, argmax },
            rg,
        ))
    }

    /// Output row `q` is `sum_j weight[q*k+j] * a[index[q*k+j]]`.
    ///
    /// Indices and weights are constants; the gradient flows to `a` only.
    pub fn weighted_gather(
        &mut self,
        a: Var,
        k: usize,
        index: Vec<usize>,
        weight: Vec<f64>,
    ) -> Result<Var> {
        let ta = self.value(a);
        let (m, n) = ta.expect_matrix("weighted_gather")?;
        if k == 0 || index.len() != weight.len() || index.len() % k != 0 || index.is_empty() {
            return Err(Error::contract(format!(
                "weighted_gather: {} indices / {} weights do not form rows of {k}",
                index.len(),
                weight.len()
            )));
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= m) {
            return Err(Error::contract(format!(
                "weighted_gather index {bad} out of range for {m} rows"
            )));
        }
        let q = index.len() / k;
        let d = ta.data();
        let mut out = vec![0.0; q * n];
        for qi in 0..q {
            let o = &mut out[qi * n..(qi + 1) * n];
            for j in 0..k {
                let (src, w) = (index[qi * k + j], weight[qi * k + j]);
                for (ov, sv) in o.iter_mut().zip(&d[src * n..(src + 1) * n]) {
                    *ov += w * sv;
                }
            }
        }
        let rg = self.any_grad(&[a]);
        Ok(self.push(
            Tensor::matrix(q, n, out)?,
            Op::WeightedGather {
                x: a,
                k,
                index,
                weight,
            },
            rg,
        ))
    }

    /// Elementwise product with a constant mask (dropout).
    pub fn mask_mul(&mut self, a: Var, mask: Vec<f64>) -> Result<Var> {
        let ta = self.value(a);
        if mask.len() != ta.len() {
            return Err(Error::Shape {
                op: "mask_mul",
                lhs: ta.shape().to_vec(),
                rhs: vec![mask.len()],
            });
        }
        let t = Tensor {
            shape: ta.shape().to_vec(),
            data: ta.data().iter().zip(&mask).map(|(x, m)| x * m).collect(),
        };
        let rg = self.any_grad(&[a]);
        Ok(self.push(t, Op::MaskMul { x: a, mask }, rg))
    }

    /// Standardises every column over the rows: `(x - mean) / sqrt(var + eps)`
    /// with the biased variance.
    pub fn standardize_cols(&mut self, a: Var, eps: f64) -> Result<Var> {
        let ta = self.value(a);
        let (m, n) = ta.expect_matrix("standardize_cols")?;
        if m == 0 {
            return Err(Error::contract("standardize_cols needs at least one row"));
        }
        // Mean taken relative to row 0 so a constant column centres to exact zeros.
        let first = ta.row(0).to_vec();
        let mut mean = vec![0.0; n];
        for r in 1..m {
            for ((acc, v), f) in mean.iter_mut().zip(ta.row(r)).zip(&first) {
                *acc += v - f;
            }
        }
        mean.iter_mut().zip(&first).for_each(|(v, f)| *v = f + *v / m as f64);
        let mut var = vec![0.0; n];
        for r in 0..m {
            for ((acc, v), mu) in var.iter_mut().zip(ta.row(r)).zip(&mean) {
                *acc += (v - mu) * (v - mu);
            }
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v / m as f64 + eps).sqrt()).collect();
        let mut data = ta.data().to_vec();
        for row in data.chunks_exact_mut(n) {
            for ((v, mu), s) in row.iter_mut().zip(&mean).zip(&inv_std) {
                *v = (*v - mu) * s;
            }
        }
        let t = Tensor { shape: vec![m, n], data };
        let rg = self.any_grad(&[a]);
        Ok(self.push(t, Op::StandardizeCols { x: a, inv_std }, rg))
    }

    /// Softmax cross-entropy of each logit row against its target class.
    ///
    /// Returns `-sum_r log p[r, target_r]`, averaged over rows when `mean`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], mean: bool) -> Result<Var> {
        let tl = self.value(logits);
        let (m, n) = tl.expect_matrix("cross_entropy")?;
        if targets.len() != m {
            return Err(Error::Shape {
                op: "cross_entropy",
                lhs: tl.shape().to_vec(),
                rhs: vec![targets.len()],
            });
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= n) {
            return Err(Error::contract(format!(
                "target class {bad} out of range for {n} classes"
            )));
        }
        let mut probs = tl.data().to_vec();
        let mut loss = 0.0;
        for (row, &t) in tl.data().chunks_exact(n).zip(targets) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
            loss -= row[t] - lse;
        }
        for row in probs.chunks_exact_mut(n) {
            softmax_in_place(row);
        }
        let scale = if mean { 1.0 / m as f64 } else { 1.0 };
        let rg = self.any_grad(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss * scale),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
                scale,
            },
            rg,
        ))
    }

    /// Populates gradients of `loss` with respect to every node that
    /// requires them. Previous gradients are discarded.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.value(loss).shape();
        if shape != [1] {
            return Err(Error::contract(format!(
                "backward needs a scalar loss of shape [1], got {shape:?}"
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            if !self.nodes[id].requires_grad {
                continue;
            }
            let Some(gy) = grads[id].take() else { continue };
            self.propagate(id, &gy, &mut grads);
            grads[id] = Some(gy);
        }
        self.grads = grads;
        Ok(())
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, id: usize, gy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                if self.wants(*a) {
                    let mut ga = vec![0.0; m * k];
                    gemm(m, n, k, gy, false, tb.data(), true, 0.0, &mut ga);
                    accumulate(&mut grads[a.0], ga);
                }
                if self.wants(*b) {
                    let mut gb = vec![0.0; k * n];
                    gemm(k, m, n, ta.data(), true, gy, false, 0.0, &mut gb);
                    accumulate(&mut grads[b.0], gb);
                }
            }
            Op::MatMulNt(a, b) => {
                // y = a b^T with a: m x k, b: n x k
                let (ta, tb) = (val(*a), val(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.rows());
                if self.wants(*a) {
                    let mut ga = vec![0.0; m * k];
                    gemm(m, n, k, gy, false, tb.data(), false, 0.0, &mut ga);
                    accumulate(&mut grads[a.0], ga);
                }
                if self.wants(*b) {
                    let mut gb = vec![0.0; n * k];
                    gemm(n, m, k, gy, true, ta.data(), false, 0.0, &mut gb);
                    accumulate(&mut grads[b.0], gb);
                }
            }
            Op::Linear { x, w, b } => {
                let (tx, tw) = (val(*x), val(*w));
                let (m, k, n) = (tx.rows(), tx.cols(), tw.cols());
                if self.wants(*x) {
                    let mut gx = vec![0.0; m * k];
                    gemm(m, n, k, gy, false, tw.data(), true, 0.0, &mut gx);
                    accumulate(&mut grads[x.0], gx);
                }
                if self.wants(*w) {
                    let mut gw = vec![0.0; k * n];
                    gemm(k, m, n, tx.data(), true, gy, false, 0.0, &mut gw);
                    accumulate(&mut grads[w.0], gw);
                }
                if let Some(b) = b.filter(|b| self.wants(*b)) {
                    let mut gb = vec![0.0; n];
                    for row in gy.chunks_exact(n) {
                        for (g, r) in gb.iter_mut().zip(row) {
                            *g += r;
                        }
                    }
                    accumulate(&mut grads[b.0], gb);
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if self.wants(*v) {
                        accumulate(&mut grads[v.0], gy.to_vec());
                    }
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                if self.wants(*a) {
                    let g = gy.iter().zip(tb.data()).map(|(g, y)| g * y).collect();
                    accumulate(&mut grads[a.0], g);
                }
                if self.wants(*b) {
                    let g = gy.iter().zip(ta.data()).map(|(g, x)| g * x).collect();
                    accumulate(&mut grads[b.0], g);
                }
            }
            Op::Scale(a, s) => {
                if self.wants(*a) {
                    accumulate(&mut grads[a.0], gy.iter().map(|g| g * s).collect());
                }
            }
            Op::Relu(a) => {
                if self.wants(*a) {
                    let g = gy
                        .iter()
                        .zip(val(*a).data())
                        .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                        .collect();
                    accumulate(&mut grads[a.0], g);
                }
            }
            Op::Transpose(a) => {
                if self.wants(*a) {
                    let (m, n) = (val(*a).rows(), val(*a).cols());
                    let mut g = vec![0.0; m * n];
                    for i in 0..m {
                        for j in 0..n {
                            g[i * n + j] = gy[j * m + i];
                        }
                    }
                    accumulate(&mut grads[a.0], g);
                }
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let rows = node.value.rows();
                let mut offset = 0;
                for p in parts {
                    let w = val(*p).cols();
                    if self.wants(*p) {
                        let mut g = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            g.extend_from_slice(&gy[r * total + offset..r * total + offset + w]);
                        }
                        accumulate(&mut grads[p.0], g);
                    }
                    offset += w;
                }
            }
            Op::MaxOverRows { x, argmax } => {
                if self.wants(*x) {
                    let tx = val(*x);
                    let n = tx.cols();
                    let mut g = vec![0.0; tx.len()];
                    for (c, &r) in argmax.iter().enumerate() {
                        g[r * n + c] += gy[c];
                    }
                    accumulate(&mut grads[x.0], g);
                }
            }
            Op::MeanOverRows(a) => {
                if self.wants(*a) {
                    let ta = val(*a);
                    let inv = 1.0 / ta.rows() as f64;
                    let mut g = Vec::with_capacity(ta.len());
                    for _ in 0..ta.rows() {
                        g.extend(gy.iter().map(|v| v * inv));
                    }
                    accumulate(&mut grads[a.0], g);
                }
            }
            Op::SoftmaxRows(a) => {
                if self.wants(*a) {
                    let n = node.value.cols();
                    let mut g = vec![0.0; node.value.len()];
                    for ((gr, yr), dy) in g
                        .chunks_exact_mut(n)
                        .zip(node.value.data().chunks_exact(n))
                        .zip(gy.chunks_exact(n))
                    {
                        let dot: f64 = yr.iter().zip(dy).map(|(y, d)| y * d).sum();
                        for ((o, y), d) in gr.iter_mut().zip(yr).zip(dy) {
                            *o = y * (d - dot);
                        }
                    }
                    accumulate(&mut grads[a.0], g);
                }
            }
            Op::Sum(a) => {
                if self.wants(*a) {
                    accumulate(&mut grads[a.0], vec![gy[0]; val(*a).len()]);
                }
            }
            Op::GatherRows { x, index } => {
                if self.wants(*x) {
                    let tx = val(*x);
                    let n = tx.cols();
                    let mut g = vec![0.0; tx.len()];
                    for (r, &src) in index.iter().enumerate() {
                        for (o, v) in g[src * n..(src + 1) * n].iter_mut().zip(&gy[r * n..(r + 1) * n]) {
                            *o += v;
                        }
                    }
                    accumulate(&mut grads[x.0], g);
                }
            }
            Op::GroupMax { x, argmax } => {
                if self.wants(*x) {
                    let tx = val(*x);
                    let n = tx.cols();
                    let mut g = vec![0.0; tx.len()];
                    for (i, &r) in argmax.iter().enumerate() {
                        g[r * n + i % n] += gy[i];
                    }
                    accumulate(&mut grads[x.0], g);
                }
            }
            Op::WeightedGather {
                x,
                k,
                index,
                weight,
            } => {
                if self.wants(*x) {
                    let tx = val(*x);
                    let n = tx.cols();
                    let mut g = vec![0.0; tx.len()];
                    for (slot, (&src, &w)) in index.iter().zip(weight).enumerate() {
                        let q = slot / k;
                        for (o, v) in g[src * n..(src + 1) * n].iter_mut().zip(&gy[q * n..(q + 1) * n]) {
                            *o += w * v;
                        }
                    }
                    accumulate(&mut grads[x.0], g);
                }
            }
            Op::MaskMul { x, mask } => {
                if self.wants(*x) {
                    accumulate(&mut grads[x.0], gy.iter().zip(mask).map(|(g, m)| g * m).collect());
                }
            }
            Op::StandardizeCols { x, inv_std } => {
                // dx = s * (gy - mean(gy) - y * mean(gy * y)) per column
                if self.wants(*x) {
                    let y = &node.value;
                    let (m, n) = (y.rows(), y.cols());
                    let mut mean_g = vec![0.0; n];
                    let mut mean_gy = vec![0.0; n];
                    for r in 0..m {
                        for c in 0..n {
                            let g = gy[r * n + c];
                            mean_g[c] += g;
                            mean_gy[c] += g * y.data()[r * n + c];
                        }
                    }
                    let inv_m = 1.0 / m as f64;
                    let mut g = vec![0.0; m * n];
                    for r in 0..m {
                        for c in 0..n {
                            let i = r * n + c;
                            g[i] = inv_std[c] * (gy[i] - mean_g[c] * inv_m - y.data()[i] * mean_gy[c] * inv_m);
                        }
                    }
                    accumulate(&mut grads[x.0], g);
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
                scale,
            } => {
                if self.wants(*logits) {
                    let n = val(*logits).cols();
                    let s = gy[0] * scale;
                    let mut g: Vec<f64> = probs.iter().map(|p| p * s).collect();
                    for (r, &t) in targets.iter().enumerate() {
                        g[r * n + t] -= s;
                    }
                    accumulate(&mut grads[logits.0], g);
                }
            }
        }
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    let inv = 1.0 / total;
    row.iter_mut().for_each(|v| *v *= inv);
}
