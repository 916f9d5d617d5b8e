//! Reverse-mode differentiation over a flat tape.
//!
//! Every operation appends a node holding its value and whatever it needs for
//! the backward pass. [`Tape::backward`] walks the tape once in reverse. All
//! tensors are viewed as `[rows, cols]` matrices where `cols` is the last
//! axis.

use std::sync::Arc;

use super::Tensor;
use crate::error::{Error, Result};
use crate::geometry::Mat3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// One term of a sparse neighborhood aggregation:
/// `out[dst, kernel * F + c] += weight * x[src, c]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregationTerm {
    pub dst: u32,
    pub src: u32,
    pub kernel: u32,
    pub weight: f64,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    MaxSub {
        x: Var,
        lambda: Var,
        group: usize,
        /// `[groups, cols]` source row of each maximum.
        argmax: Vec<usize>,
        maxes: Vec<f64>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    ChannelAffine {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    SegmentMax {
        x: Var,
        argmax: Vec<usize>,
    },
    Aggregate {
        x: Var,
        terms: Arc<[AggregationTerm]>,
        kernels: usize,
    },
    RowScale {
        x: Var,
        scale: Vec<f64>,
    },
    RowTransform {
        x: Var,
        mats: Vec<Mat3>,
    },
    AddConst(Var),
    MeanRowSqNorm(Var),
    SelectRows {
        x: Var,
        rows: Vec<usize>,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
    Dot {
        x: Var,
        weights: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Batch statistics produced by a training-mode batch norm.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Unbiased (n - 1) variance.
    pub var: Vec<f64>,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

fn mismatch(op: &'static str, detail: String) -> Error {
    Error::ShapeMismatch { op, detail }
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf; gradients are tracked when `requires_grad` is set.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (n, k, m) = (av.rows(), av.cols(), bv.cols());
        if bv.rows() != k {
            return Err(mismatch("matmul", format!("[{n},{k}] x {:?}", bv.shape())));
        }
        let (ad, bd) = (av.data(), bv.data());
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let row = &mut out[i * m..(i + 1) * m];
            for p in 0..k {
                let a_ip = ad[i * k + p];
                if a_ip == 0.0 {
                    continue;
                }
                for (o, &b) in row.iter_mut().zip(&bd[p * m..(p + 1) * m]) {
                    *o += a_ip * b;
                }
            }
        }
        Ok(self.push(Tensor::new(vec![n, m], out)?, Op::MatMul(a, b), &[a, b]))
    }

    /// Adds a `[cols]` row vector to every row of `x`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(b));
        let c = xv.cols();
        if bv.len() != c {
            return Err(mismatch(
                "add_row",
                format!("{:?} + {:?}", xv.shape(), bv.shape()),
            ));
        }
        let mut out = xv.clone();
        for row in out.data_mut().chunks_mut(c) {
            for (o, &bb) in row.iter_mut().zip(bv.data()) {
                *o += bb;
            }
        }
        Ok(self.push(out, Op::AddRow(x, b), &[x, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.len() != bv.len() {
            return Err(mismatch(
                "add",
                format!("{:?} + {:?}", av.shape(), bv.shape()),
            ));
        }
        let mut out = av.clone();
        for (o, &v) in out.data_mut().iter_mut().zip(bv.data()) {
            *o += v;
        }
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().for_each(|v| *v *= factor);
        self.push(out, Op::Scale(x, factor), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        self.push(out, Op::Relu(x), &[x])
    }

    /// `x - lambda * max_group(x)`, with the maximum taken per column over
    /// consecutive blocks of `group` rows.
    pub fn max_subtract(&mut self, x: Var, lambda: Var, group: usize) -> Result<Var> {
        let xv = self.value(x);
        let (rows, cols) = (xv.rows(), xv.cols());
        if group == 0 || !rows.is_multiple_of(group) || self.value(lambda).len() != 1 {
            return Err(mismatch(
                "max_subtract",
                format!("{:?} in groups of {group}", xv.shape()),
            ));
        }
        let lam = self.value(lambda).item();
        let groups = rows / group;
        let d = xv.data();
        let mut argmax = vec![0; groups * cols];
        let mut maxes = vec![f64::NEG_INFINITY; groups * cols];
        for g in 0..groups {
            for r in g * group..(g + 1) * group {
                for c in 0..cols {
                    let v = d[r * cols + c];
                    if v > maxes[g * cols + c] {
                        maxes[g * cols + c] = v;
                        argmax[g * cols + c] = r;
                    }
                }
            }
        }
        let mut out = xv.clone();
        for (r, row) in out.data_mut().chunks_mut(cols).enumerate() {
            let g = r / group;
            for (c, o) in row.iter_mut().enumerate() {
                *o -= lam * maxes[g * cols + c];
            }
        }
        Ok(self.push(
            out,
            Op::MaxSub {
                x,
                lambda,
                group,
                argmax,
                maxes,
            },
            &[x, lambda],
        ))
    }

    /// Training-mode batch normalization over rows; returns batch statistics
    /// for the running averages.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<(Var, BatchStats)> {
        let xv = self.value(x);
        let (n, c) = (xv.rows(), xv.cols());
        if n < 2 {
            return Err(Error::BatchTooSmall(n));
        }
        if self.value(gamma).len() != c || self.value(beta).len() != c {
            return Err(mismatch("batch_norm", format!("{c} channels")));
        }
        let d = xv.data();
        let mut mean = vec![0.0; c];
        for row in d.chunks(c) {
            for (m, &v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; c];
        for row in d.chunks(c) {
            for ((s, &v), &m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        var.iter_mut().for_each(|s| *s /= n as f64);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let (out, xhat) = self.channel_affine_values(x, gamma, beta, &mean, &inv_std);
        let stats = BatchStats {
            mean,
            var: var.iter().map(|v| v * n as f64 / (n - 1) as f64).collect(),
        };
        let node = self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            &[x, gamma, beta],
        );
        Ok((node, stats))
    }

    /// Inference-mode batch normalization with fixed statistics.
    pub fn batch_norm_inference(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[f64],
        running_var: &[f64],
        eps: f64,
    ) -> Result<Var> {
        let c = self.value(x).cols();
        if [
            self.value(gamma).len(),
            self.value(beta).len(),
            running_mean.len(),
            running_var.len(),
        ]
        .iter()
        .any(|&l| l != c)
        {
            return Err(mismatch("batch_norm_inference", format!("{c} channels")));
        }
        let inv_std: Vec<f64> = running_var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let (out, xhat) = self.channel_affine_values(x, gamma, beta, running_mean, &inv_std);
        Ok(self.push(
            out,
            Op::ChannelAffine {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            &[x, gamma, beta],
        ))
    }

    fn channel_affine_values(
        &self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        inv_std: &[f64],
    ) -> (Tensor, Vec<f64>) {
        let xv = self.value(x);
        let c = xv.cols();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = xv.data().to_vec();
        let mut out = xv.clone();
        for (hrow, orow) in xhat.chunks_mut(c).zip(out.data_mut().chunks_mut(c)) {
            for j in 0..c {
                hrow[j] = (hrow[j] - mean[j]) * inv_std[j];
                orow[j] = g[j] * hrow[j] + b[j];
            }
        }
        (out, xhat)
    }

    /// Column-wise maximum over each listed row group: `[groups.len(), cols]`.
    pub fn segment_max(&mut self, x: Var, groups: &[Vec<usize>]) -> Result<Var> {
        let xv = self.value(x);
        let (rows, cols) = (xv.rows(), xv.cols());
        let d = xv.data();
        let mut out = vec![f64::NEG_INFINITY; groups.len() * cols];
        let mut argmax = vec![0; groups.len() * cols];
        for (g, members) in groups.iter().enumerate() {
            if members.is_empty() {
                return Err(Error::EmptyCluster(g));
            }
            for &r in members {
                if r >= rows {
                    return Err(mismatch("segment_max", format!("row {r} of {rows}")));
                }
                for c in 0..cols {
                    let v = d[r * cols + c];
                    if v > out[g * cols + c] {
                        out[g * cols + c] = v;
                        argmax[g * cols + c] = r;
                    }
                }
            }
        }
        let t = Tensor::new(vec![groups.len(), cols], out)?;
        Ok(self.push(t, Op::SegmentMax { x, argmax }, &[x]))
    }

    /// Max over consecutive blocks of `group` rows.
    pub fn group_max(&mut self, x: Var, group: usize) -> Result<Var> {
        let rows = self.value(x).rows();
        if group == 0 || !rows.is_multiple_of(group) {
            return Err(mismatch(
                "group_max",
                format!("{rows} rows in groups of {group}"),
            ));
        }
        let groups: Vec<Vec<usize>> = (0..rows / group)
            .map(|g| (g * group..(g + 1) * group).collect())
            .collect();
        self.segment_max(x, &groups)
    }

    /// Sparse weighted aggregation into `kernels` column blocks:
    /// `out[dst, k * F + c] = sum weight * x[src, c]` over matching terms.
    pub fn aggregate(
        &mut self,
        x: Var,
        terms: Arc<[AggregationTerm]>,
        kernels: usize,
    ) -> Result<Var> {
        let xv = self.value(x);
        let (n, f) = (xv.rows(), xv.cols());
        let width = kernels * f;
        let d = xv.data();
        let mut out = vec![0.0; n * width];
        for t in terms.iter() {
            let (dst, src, k) = (t.dst as usize, t.src as usize, t.kernel as usize);
            if dst >= n || src >= n || k >= kernels {
                return Err(mismatch(
                    "aggregate",
                    format!("term {t:?} outside {n} nodes / {kernels} kernels"),
                ));
            }
            let o = &mut out[dst * width + k * f..dst * width + (k + 1) * f];
            for (o, &v) in o.iter_mut().zip(&d[src * f..(src + 1) * f]) {
                *o += t.weight * v;
            }
        }
        let value = Tensor::new(vec![n, width], out)?;
        Ok(self.push(value, Op::Aggregate { x, terms, kernels }, &[x]))
    }

    /// Multiplies row `i` by the constant `scale[i]`.
    pub fn row_scale(&mut self, x: Var, scale: Vec<f64>) -> Result<Var> {
        let xv = self.value(x);
        if xv.rows() != scale.len() {
            return Err(mismatch(
                "row_scale",
                format!("{} rows, {} scales", xv.rows(), scale.len()),
            ));
        }
        let c = xv.cols();
        let mut out = xv.clone();
        for (row, s) in out.data_mut().chunks_mut(c).zip(&scale) {
            row.iter_mut().for_each(|v| *v *= s);
        }
        Ok(self.push(out, Op::RowScale { x, scale }, &[x]))
    }

    /// `out_i = M_i x_i` for `[N, 3]` inputs and constant matrices.
    pub fn row_transform(&mut self, x: Var, mats: Vec<Mat3>) -> Result<Var> {
        let xv = self.value(x);
        if xv.cols() != 3 || xv.rows() != mats.len() {
            return Err(mismatch(
                "row_transform",
                format!("{:?} with {} matrices", xv.shape(), mats.len()),
            ));
        }
        let mut out = xv.clone();
        for (row, m) in out.data_mut().chunks_mut(3).zip(&mats) {
            let v = m * nalgebra::Vector3::new(row[0], row[1], row[2]);
            row.copy_from_slice(v.as_slice());
        }
        Ok(self.push(out, Op::RowTransform { x, mats }, &[x]))
    }

    pub fn add_const(&mut self, x: Var, c: &Tensor) -> Result<Var> {
        let xv = self.value(x);
        if xv.len() != c.len() {
            return Err(mismatch(
                "add_const",
                format!("{:?} + {:?}", xv.shape(), c.shape()),
            ));
        }
        let mut out = xv.clone();
        for (o, &v) in out.data_mut().iter_mut().zip(c.data()) {
            *o += v;
        }
        Ok(self.push(out, Op::AddConst(x), &[x]))
    }

    /// Mean over rows of the squared row norm; a scalar.
    pub fn mean_row_sq_norm(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let rows = xv.rows().max(1) as f64;
        let s = xv.data().iter().map(|v| v * v).sum::<f64>() / rows;
        self.push(Tensor::scalar(s), Op::MeanRowSqNorm(x), &[x])
    }

    pub fn select_rows(&mut self, x: Var, rows: Vec<usize>) -> Result<Var> {
        let xv = self.value(x);
        let (n, c) = (xv.rows(), xv.cols());
        let mut out = Vec::with_capacity(rows.len() * c);
        for &r in &rows {
            if r >= n {
                return Err(mismatch("select_rows", format!("row {r} of {n}")));
            }
            out.extend_from_slice(xv.row(r));
        }
        let t = Tensor::new(vec![rows.len(), c], out)?;
        Ok(self.push(t, Op::SelectRows { x, rows }, &[x]))
    }

    /// Mean negative log-softmax probability of the labels, computed with a
    /// max shift per row.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        let (b, c) = (lv.rows(), lv.cols());
        if labels.len() != b {
            return Err(mismatch(
                "softmax_cross_entropy",
                format!("{b} rows, {} labels", labels.len()),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                classes: c,
            });
        }
        let probs = softmax_rows(lv);
        let loss = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| {
                let row = lv.row(i);
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                lse - row[l]
            })
            .sum::<f64>()
            / b as f64;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            &[logits],
        ))
    }

    /// `sum(x * weights)` with constant weights; a scalar.
    pub fn dot_const(&mut self, x: Var, weights: Vec<f64>) -> Result<Var> {
        let xv = self.value(x);
        if xv.len() != weights.len() {
            return Err(mismatch(
                "dot_const",
                format!("{} values, {} weights", xv.len(), weights.len()),
            ));
        }
        let s = xv.data().iter().zip(&weights).map(|(a, b)| a * b).sum();
        Ok(self.push(Tensor::scalar(s), Op::Dot { x, weights }, &[x]))
    }

    /// Gradients of the scalar `loss` with respect to every tracked node.
    pub fn backward(&self, loss: Var) -> Gradients {
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].needs_grad {
            grads[loss.0] = Some(vec![1.0; self.nodes[loss.0].value.len()]);
        }
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.backward_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn acc<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut Vec<f64>> {
        if !self.nodes[v.0].needs_grad {
            return None;
        }
        let len = self.nodes[v.0].value.len();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; len]))
    }

    fn backward_node(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (n, k, m) = (av.rows(), av.cols(), bv.cols());
                if let Some(ga) = self.acc(grads, *a) {
                    let bd = bv.data();
                    for i in 0..n {
                        let gi = &g[i * m..(i + 1) * m];
                        for p in 0..k {
                            ga[i * k + p] += gi
                                .iter()
                                .zip(&bd[p * m..(p + 1) * m])
                                .map(|(x, y)| x * y)
                                .sum::<f64>();
                        }
                    }
                }
                if let Some(gb) = self.acc(grads, *b) {
                    let ad = av.data();
                    for i in 0..n {
                        let gi = &g[i * m..(i + 1) * m];
                        for p in 0..k {
                            let a_ip = ad[i * k + p];
                            if a_ip == 0.0 {
                                continue;
                            }
                            for (o, &gv) in gb[p * m..(p + 1) * m].iter_mut().zip(gi) {
                                *o += a_ip * gv;
                            }
                        }
                    }
                }
            }
            Op::AddRow(x, b) => {
                let c = self.value(*b).len();
                if let Some(gx) = self.acc(grads, *x) {
                    gx.iter_mut().zip(g).for_each(|(o, v)| *o += v);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    for row in g.chunks(c) {
                        gb.iter_mut().zip(row).for_each(|(o, v)| *o += v);
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if let Some(gv) = self.acc(grads, *v) {
                        gv.iter_mut().zip(g).for_each(|(o, v)| *o += v);
                    }
                }
            }
            Op::Scale(x, f) => {
                if let Some(gx) = self.acc(grads, *x) {
                    gx.iter_mut().zip(g).for_each(|(o, v)| *o += f * v);
                }
            }
            Op::Relu(x) => {
                let out = node.value.data();
                if let Some(gx) = self.acc(grads, *x) {
                    for ((o, v), y) in gx.iter_mut().zip(g).zip(out) {
                        if *y > 0.0 {
                            *o += v;
                        }
                    }
                }
            }
            Op::MaxSub {
                x,
                lambda,
                group,
                argmax,
                maxes,
            } => {
                let cols = node.value.cols();
                let groups = node.value.rows() / group;
                // Column sums of the upstream gradient within each group.
                let mut gsum = vec![0.0; groups * cols];
                for (r, row) in g.chunks(cols).enumerate() {
                    let base = (r / group) * cols;
                    for (c, v) in row.iter().enumerate() {
                        gsum[base + c] += v;
                    }
                }
                let lam = self.value(*lambda).item();
                if let Some(gx) = self.acc(grads, *x) {
                    gx.iter_mut().zip(g).for_each(|(o, v)| *o += v);
                    for gi in 0..groups {
                        for c in 0..cols {
                            gx[argmax[gi * cols + c] * cols + c] -= lam * gsum[gi * cols + c];
                        }
                    }
                }
                if let Some(gl) = self.acc(grads, *lambda) {
                    gl[0] -= maxes.iter().zip(&gsum).map(|(m, s)| m * s).sum::<f64>();
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let c = inv_std.len();
                let n = g.len() / c;
                let gam = self.value(*gamma).data().to_vec();
                let mut sum_g = vec![0.0; c];
                let mut sum_gx = vec![0.0; c];
                for (grow, hrow) in g.chunks(c).zip(xhat.chunks(c)) {
                    for j in 0..c {
                        sum_g[j] += grow[j];
                        sum_gx[j] += grow[j] * hrow[j];
                    }
                }
                if let Some(gx) = self.acc(grads, *x) {
                    let nf = n as f64;
                    for ((orow, grow), hrow) in
                        gx.chunks_mut(c).zip(g.chunks(c)).zip(xhat.chunks(c))
                    {
                        for j in 0..c {
                            orow[j] += gam[j] * inv_std[j] / nf
                                * (nf * grow[j] - sum_g[j] - hrow[j] * sum_gx[j]);
                        }
                    }
                }
                if let Some(gg) = self.acc(grads, *gamma) {
                    gg.iter_mut().zip(&sum_gx).for_each(|(o, v)| *o += v);
                }
                if let Some(gb) = self.acc(grads, *beta) {
                    gb.iter_mut().zip(&sum_g).for_each(|(o, v)| *o += v);
                }
            }
            Op::ChannelAffine {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let c = inv_std.len();
                let gam = self.value(*gamma).data().to_vec();
                if let Some(gx) = self.acc(grads, *x) {
                    for (orow, grow) in gx.chunks_mut(c).zip(g.chunks(c)) {
                        for j in 0..c {
                            orow[j] += grow[j] * gam[j] * inv_std[j];
                        }
                    }
                }
                if let Some(gg) = self.acc(grads, *gamma) {
                    for (grow, hrow) in g.chunks(c).zip(xhat.chunks(c)) {
                        for j in 0..c {
                            gg[j] += grow[j] * hrow[j];
                        }
                    }
                }
                if let Some(gb) = self.acc(grads, *beta) {
                    for grow in g.chunks(c) {
                        gb.iter_mut().zip(grow).for_each(|(o, v)| *o += v);
                    }
                }
            }
            Op::SegmentMax { x, argmax } => {
                let cols = node.value.cols();
                if let Some(gx) = self.acc(grads, *x) {
                    for (i, (&src, v)) in argmax.iter().zip(g).enumerate() {
                        gx[src * cols + i % cols] += v;
                    }
                }
            }
            Op::Aggregate { x, terms, kernels } => {
                let f = self.value(*x).cols();
                let width = kernels * f;
                if let Some(gx) = self.acc(grads, *x) {
                    for t in terms.iter() {
                        let (dst, src, k) = (t.dst as usize, t.src as usize, t.kernel as usize);
                        let gsrc = &g[dst * width + k * f..dst * width + (k + 1) * f];
                        for (o, &v) in gx[src * f..(src + 1) * f].iter_mut().zip(gsrc) {
                            *o += t.weight * v;
                        }
                    }
                }
            }
            Op::RowScale { x, scale } => {
                let c = node.value.cols();
                if let Some(gx) = self.acc(grads, *x) {
                    for ((orow, grow), s) in gx.chunks_mut(c).zip(g.chunks(c)).zip(scale) {
                        orow.iter_mut().zip(grow).for_each(|(o, v)| *o += s * v);
                    }
                }
            }
            Op::RowTransform { x, mats } => {
                if let Some(gx) = self.acc(grads, *x) {
                    for ((orow, grow), m) in gx.chunks_mut(3).zip(g.chunks(3)).zip(mats) {
                        let v = m.transpose() * nalgebra::Vector3::new(grow[0], grow[1], grow[2]);
                        for j in 0..3 {
                            orow[j] += v[j];
                        }
                    }
                }
            }
            Op::AddConst(x) => {
                if let Some(gx) = self.acc(grads, *x) {
                    gx.iter_mut().zip(g).for_each(|(o, v)| *o += v);
                }
            }
            Op::MeanRowSqNorm(x) => {
                let xv = self.value(*x);
                let scale = 2.0 * g[0] / xv.rows().max(1) as f64;
                if let Some(gx) = self.acc(grads, *x) {
                    gx.iter_mut()
                        .zip(xv.data())
                        .for_each(|(o, v)| *o += scale * v);
                }
            }
            Op::SelectRows { x, rows } => {
                let c = node.value.cols();
                if let Some(gx) = self.acc(grads, *x) {
                    for (i, &r) in rows.iter().enumerate() {
                        for j in 0..c {
                            gx[r * c + j] += g[i * c + j];
                        }
                    }
                }
            }
            Op::SoftmaxCrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let c = self.value(*logits).cols();
                let b = labels.len() as f64;
                if let Some(gl) = self.acc(grads, *logits) {
                    for (i, &l) in labels.iter().enumerate() {
                        for j in 0..c {
                            let target = if j == l { 1.0 } else { 0.0 };
                            gl[i * c + j] += g[0] * (probs[i * c + j] - target) / b;
                        }
                    }
                }
            }
            Op::Dot { x, weights } => {
                if let Some(gx) = self.acc(grads, *x) {
                    gx.iter_mut().zip(weights).for_each(|(o, w)| *o += g[0] * w);
                }
            }
        }
    }
}

/// Row-wise softmax of a `[rows, cols]` tensor.
pub fn softmax_rows(t: &Tensor) -> Vec<f64> {
    let c = t.cols();
    let mut out = Vec::with_capacity(t.len());
    for row in t.data().chunks(c) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        out.extend(exps.iter().map(|e| e / sum));
    }
    out
}
