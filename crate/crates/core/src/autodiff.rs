//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation of one forward pass. Nodes are appended
//! in evaluation order, so parents always have smaller indices than their
//! children and the tape is acyclic by construction. [`Tape::backward`] walks
//! the nodes once in reverse index order, which is a reverse topological
//! order, and accumulates gradients into each parent.
//!
//! Sparse structure (graph adjacency, edge index lists) enters the tape only
//! as constants: [`SparseMatrix`] for neighbor aggregation and index slices for
//! gather/scatter. No gradient flows into them.

use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Compressed sparse row matrix used as a constant left operand.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds a CSR matrix from `(row, col, value)` triplets. Duplicate
    /// coordinates are summed.
    pub fn from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut sorted = triplets.to_vec();
        sorted.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; rows + 1];
        let mut col_idx = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for &(r, c, v) in &sorted {
            assert!(r < rows && c < cols, "triplet ({r}, {c}) out of bounds");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            col_idx.push(c);
            values.push(v);
            row_ptr[r + 1] += 1;
            last = Some((r, c));
        }
        for r in 0..rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Self {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_entries(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn to_dense(&self) -> Tensor {
        let mut t = Tensor::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            for (c, v) in self.row_entries(r) {
                t.set(r, c, t.get(r, c) + v);
            }
        }
        t
    }

    pub fn matmul(&self, dense: &Tensor) -> Result<Tensor> {
        if self.cols != dense.rows() {
            return Err(Error::shape(
                "sparse_matmul",
                &[self.rows, self.cols],
                &dense.shape(),
            ));
        }
        let f = dense.cols();
        let mut out = Tensor::zeros(self.rows, f);
        for r in 0..self.rows {
            for (c, w) in self.row_entries(r) {
                let src = dense.row_slice(c);
                for (o, &x) in out.row_slice_mut(r).iter_mut().zip(src) {
                    *o += w * x;
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ · dense`.
    pub fn transpose_matmul(&self, dense: &Tensor) -> Tensor {
        let f = dense.cols();
        let mut out = Tensor::zeros(self.cols, f);
        for r in 0..self.rows {
            let g = dense.row_slice(r).to_vec();
            for (c, w) in self.row_entries(r) {
                for (o, &x) in out.row_slice_mut(c).iter_mut().zip(&g) {
                    *o += w * x;
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug)]
enum Op {
    Constant,
    Param,
    MatMul(Var, Var),
    /// `b` is either the same shape as `a`, a `1 × cols` row, or `1 × 1`.
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `a: n × f` scaled row-wise by `b: n × 1`.
    MulColumn(Var, Var),
    /// `a` scaled by the `1 × 1` value `b`.
    MulScalar(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    ConcatCols(Var, Var),
    ConcatRows(Var, Var),
    GatherRows(Var, Arc<[usize]>),
    ScatterAddRows(Var, Arc<[usize]>),
    SegmentSoftmax(Var, Arc<[usize]>, usize),
    SparseMatMul(Arc<SparseMatrix>, Var),
    SumAll(Var),
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Arc<[usize]>,
        probs: Tensor,
    },
    Mse(Var, Var),
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Recording of one forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
}

/// Gradients of a scalar with respect to every node that reaches it.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Gradient for a parameter; zero-shaped `None` when the loss does not depend on it.
    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params
            .iter()
            .find(|(p, _)| *p == id)
            .and_then(|(_, v)| self.grads[v.0].as_ref())
    }

    /// Writes gradients into `store`. Parameters that were recorded but are
    /// unreachable from the loss receive an explicit zero gradient.
    pub fn write_to(&self, store: &mut ParamStore) {
        for &(id, var) in &self.params {
            let p = store.get_mut(id);
            let g = match &self.grads[var.0] {
                Some(g) => g.clone(),
                None => Tensor::zeros(p.value.rows(), p.value.cols()),
            };
            p.grad = Some(g);
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
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

    /// Bytes held by recorded values; a proxy for peak training memory.
    pub fn value_bytes(&self) -> usize {
        self.nodes.iter().map(|n| n.value.len() * 8).sum()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].value.shape()
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant)
    }

    /// Records a parameter leaf. Repeated calls for the same id return the same var.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let v = self.push(store.value(id).clone(), Op::Param);
        self.param_vars.insert(id, v);
        v
    }

    /// A constant copy of `v`; gradients stop here.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let value = if va.shape() == vb.shape() {
            va.zip_map(vb, |x, y| x + y)
        } else if vb.rows() == 1 && vb.cols() == va.cols() {
            Tensor::from_fn(va.rows(), va.cols(), |r, c| va.get(r, c) + vb.get(0, c))
        } else if vb.shape() == [1, 1] {
            let s = vb.item();
            va.map(|x| x + s)
        } else {
            return Err(Error::shape("add", &va.shape(), &vb.shape()));
        };
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::shape("sub", &va.shape(), &vb.shape()));
        }
        let value = va.zip_map(vb, |x, y| x - y);
        Ok(self.push(value, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::shape("mul", &va.shape(), &vb.shape()));
        }
        let value = va.zip_map(vb, |x, y| x * y);
        Ok(self.push(value, Op::Mul(a, b)))
    }

    pub fn mul_column(&mut self, a: Var, col: Var) -> Result<Var> {
        let (va, vc) = (self.value(a), self.value(col));
        if vc.cols() != 1 || vc.rows() != va.rows() {
            return Err(Error::shape("mul_column", &va.shape(), &vc.shape()));
        }
        let value = Tensor::from_fn(va.rows(), va.cols(), |r, c| va.get(r, c) * vc.get(r, 0));
        Ok(self.push(value, Op::MulColumn(a, col)))
    }

    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        let vs = self.value(s);
        if vs.shape() != [1, 1] {
            return Err(Error::shape("mul_scalar", &self.value(a).shape(), &vs.shape()));
        }
        let k = vs.item();
        let value = self.value(a).map(|x| x * k);
        Ok(self.push(value, Op::MulScalar(a, s)))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a).map(|x| x * k);
        self.push(value, Op::Scale(a, k))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.max(0.0));
        self.push(value, Op::Relu(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let value = self.value(a).map(|x| if x > 0.0 { x } else { slope * x });
        self.push(value, Op::LeakyRelu(a, slope))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        self.push(value, Op::Sigmoid(a))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.rows() != vb.rows() {
            return Err(Error::shape("concat_cols", &va.shape(), &vb.shape()));
        }
        let (ca, cb) = (va.cols(), vb.cols());
        let value = Tensor::from_fn(va.rows(), ca + cb, |r, c| {
            if c < ca {
                va.get(r, c)
            } else {
                vb.get(r, c - ca)
            }
        });
        Ok(self.push(value, Op::ConcatCols(a, b)))
    }

    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.cols() != vb.cols() {
            return Err(Error::shape("concat_rows", &va.shape(), &vb.shape()));
        }
        let mut data = va.data().to_vec();
        data.extend_from_slice(vb.data());
        let value = Tensor::new(va.rows() + vb.rows(), va.cols(), data)?;
        Ok(self.push(value, Op::ConcatRows(a, b)))
    }

    /// Row `i` of the output is row `idx[i]` of `a`.
    pub fn gather_rows(&mut self, a: Var, idx: Arc<[usize]>) -> Result<Var> {
        let va = self.value(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= va.rows()) {
            return Err(Error::shape("gather_rows", &va.shape(), &[bad]));
        }
        let value = va.select_rows(&idx);
        Ok(self.push(value, Op::GatherRows(a, idx)))
    }

    /// Output has `n_out` rows; row `dst[i]` accumulates row `i` of `a`.
    pub fn scatter_add_rows(&mut self, a: Var, dst: Arc<[usize]>, n_out: usize) -> Result<Var> {
        let va = self.value(a);
        if dst.len() != va.rows() || dst.iter().any(|&d| d >= n_out) {
            return Err(Error::shape("scatter_add_rows", &va.shape(), &[dst.len(), n_out]));
        }
        let mut value = Tensor::zeros(n_out, va.cols());
        for (i, &d) in dst.iter().enumerate() {
            let src = va.row_slice(i).to_vec();
            for (o, x) in value.row_slice_mut(d).iter_mut().zip(src) {
                *o += x;
            }
        }
        Ok(self.push(value, Op::ScatterAddRows(a, dst)))
    }

    /// Softmax of an `E × 1` column within groups given by `segment[e]`.
    pub fn segment_softmax(&mut self, a: Var, segment: Arc<[usize]>, n_segments: usize) -> Result<Var> {
        let va = self.value(a);
        if va.cols() != 1 || segment.len() != va.rows() || segment.iter().any(|&s| s >= n_segments) {
            return Err(Error::shape("segment_softmax", &va.shape(), &[segment.len(), n_segments]));
        }
        let mut max = vec![f64::NEG_INFINITY; n_segments];
        for (e, &s) in segment.iter().enumerate() {
            max[s] = max[s].max(va.get(e, 0));
        }
        let mut denom = vec![0.0; n_segments];
        let mut exps = Vec::with_capacity(segment.len());
        for (e, &s) in segment.iter().enumerate() {
            let x = (va.get(e, 0) - max[s]).exp();
            denom[s] += x;
            exps.push(x);
        }
        let data = exps
            .iter()
            .zip(segment.iter())
            .map(|(x, &s)| x / denom[s])
            .collect();
        let value = Tensor::new(segment.len(), 1, data)?;
        Ok(self.push(value, Op::SegmentSoftmax(a, segment, n_segments)))
    }

    /// `adj · a` with a constant sparse left operand.
    pub fn sparse_matmul(&mut self, adj: Arc<SparseMatrix>, a: Var) -> Result<Var> {
        let value = adj.matmul(self.value(a))?;
        Ok(self.push(value, Op::SparseMatMul(adj, a)))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        self.push(value, Op::SumAll(a))
    }

    /// Mean over rows of `-log softmax(logits)[label]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: Arc<[usize]>) -> Result<Var> {
        let vl = self.value(logits);
        let (n, k) = (vl.rows(), vl.cols());
        if labels.len() != n {
            return Err(Error::shape("softmax_cross_entropy", &vl.shape(), &[labels.len()]));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
            return Err(Error::LabelOutOfRange { label: bad, classes: k });
        }
        let mut probs = Tensor::zeros(n, k);
        let mut loss = 0.0;
        for r in 0..n {
            let row = vl.row_slice(r);
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|x| (x - m).exp()).sum();
            let log_z = m + z.ln();
            loss += log_z - row[labels[r]];
            for (p, &x) in probs.row_slice_mut(r).iter_mut().zip(row) {
                *p = (x - log_z).exp();
            }
        }
        let value = Tensor::scalar(if n == 0 { 0.0 } else { loss / n as f64 });
        Ok(self.push(
            value,
            Op::SoftmaxCrossEntropy {
                logits,
                labels,
                probs,
            },
        ))
    }

    /// Sum of squared differences per row, averaged over rows.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::shape("mse", &va.shape(), &vb.shape()));
        }
        let n = va.rows().max(1) as f64;
        let s: f64 = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        Ok(self.push(Tensor::scalar(s / n), Op::Mse(a, b)))
    }

    /// Reverse pass from a `1 × 1` loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let shape = self.shape(loss);
        if shape != [1, 1] {
            return Err(Error::NonScalarLoss(shape.to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }

        let mut params: Vec<(ParamId, Var)> = self.param_vars.iter().map(|(&p, &v)| (p, v)).collect();
        params.sort();
        Ok(Gradients { grads, params })
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let mut acc = |v: Var, delta: Tensor| match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        };
        match &node.op {
            Op::Constant | Op::Param => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                acc(*a, g.matmul(&vb.transpose()).expect("matmul grad"));
                acc(*b, va.transpose().matmul(g).expect("matmul grad"));
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                let vb = self.value(*b);
                let gb = if vb.shape() == g.shape() {
                    g.clone()
                } else if vb.rows() == 1 && vb.cols() == g.cols() {
                    Tensor::from_fn(1, g.cols(), |_, c| (0..g.rows()).map(|r| g.get(r, c)).sum())
                } else {
                    Tensor::scalar(g.sum())
                };
                acc(*b, gb);
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                acc(*a, g.zip_map(vb, |x, y| x * y));
                acc(*b, g.zip_map(va, |x, y| x * y));
            }
            Op::MulColumn(a, col) => {
                let (va, vc) = (self.value(*a), self.value(*col));
                acc(*a, Tensor::from_fn(g.rows(), g.cols(), |r, c| g.get(r, c) * vc.get(r, 0)));
                let gc = Tensor::from_fn(g.rows(), 1, |r, _| {
                    g.row_slice(r).iter().zip(va.row_slice(r)).map(|(x, y)| x * y).sum()
                });
                acc(*col, gc);
            }
            Op::MulScalar(a, s) => {
                let (va, k) = (self.value(*a), self.value(*s).item());
                acc(*a, g.map(|x| x * k));
                let gs: f64 = g.data().iter().zip(va.data()).map(|(x, y)| x * y).sum();
                acc(*s, Tensor::scalar(gs));
            }
            Op::Scale(a, k) => acc(*a, g.map(|x| x * k)),
            Op::Relu(a) => {
                let va = self.value(*a);
                acc(*a, g.zip_map(va, |x, y| if y > 0.0 { x } else { 0.0 }));
            }
            Op::LeakyRelu(a, slope) => {
                let va = self.value(*a);
                acc(*a, g.zip_map(va, |x, y| if y > 0.0 { x } else { slope * x }));
            }
            Op::Sigmoid(a) => {
                acc(*a, g.zip_map(&node.value, |x, s| x * s * (1.0 - s)));
            }
            Op::ConcatCols(a, b) => {
                let ca = self.value(*a).cols();
                let cb = self.value(*b).cols();
                acc(*a, Tensor::from_fn(g.rows(), ca, |r, c| g.get(r, c)));
                acc(*b, Tensor::from_fn(g.rows(), cb, |r, c| g.get(r, ca + c)));
            }
            Op::ConcatRows(a, b) => {
                let ra = self.value(*a).rows();
                let rb = self.value(*b).rows();
                acc(*a, Tensor::from_fn(ra, g.cols(), |r, c| g.get(r, c)));
                acc(*b, Tensor::from_fn(rb, g.cols(), |r, c| g.get(ra + r, c)));
            }
            Op::GatherRows(a, idx) => {
                let va = self.value(*a);
                let mut ga = Tensor::zeros(va.rows(), va.cols());
                for (i, &src) in idx.iter().enumerate() {
                    for (o, &x) in ga.row_slice_mut(src).iter_mut().zip(g.row_slice(i)) {
                        *o += x;
                    }
                }
                acc(*a, ga);
            }
            Op::ScatterAddRows(a, dst) => {
                acc(*a, g.select_rows(dst));
            }
            Op::SegmentSoftmax(a, segment, n_segments) => {
                let y = &node.value;
                let mut dot = vec![0.0; *n_segments];
                for (e, &s) in segment.iter().enumerate() {
                    dot[s] += g.get(e, 0) * y.get(e, 0);
                }
                let ga = Tensor::from_fn(y.rows(), 1, |e, _| {
                    y.get(e, 0) * (g.get(e, 0) - dot[segment[e]])
                });
                acc(*a, ga);
            }
            Op::SparseMatMul(adj, a) => acc(*a, adj.transpose_matmul(g)),
            Op::SumAll(a) => {
                let va = self.value(*a);
                acc(*a, Tensor::filled(va.rows(), va.cols(), g.item()));
            }
            Op::SoftmaxCrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let n = probs.rows().max(1) as f64;
                let scale = g.item() / n;
                let mut gl = probs.map(|p| p * scale);
                for (r, &y) in labels.iter().enumerate() {
                    gl.set(r, y, gl.get(r, y) - scale);
                }
                acc(*logits, gl);
            }
            Op::Mse(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let k = 2.0 * g.item() / va.rows().max(1) as f64;
                let ga = va.zip_map(vb, |x, y| k * (x - y));
                acc(*b, ga.map(|x| -x));
                acc(*a, ga);
            }
        }
    }
}
