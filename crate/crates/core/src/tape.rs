//! Reverse-mode differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records every operation of a forward pass as a node holding
//! its value. [`Tape::backward`] walks the nodes in reverse and accumulates
//! the gradient of a scalar (1×1) output with respect to every node that
//! depends on a leaf created with [`Tape::param`].
//!
//! All values are 2-D; vectors are `1×n` rows or `m×1` columns and scalars
//! are `1×1`.

use std::rc::Rc;

use ndarray::{s, Array2, Axis, Zip};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Sparsity pattern of a square-ish matrix in compressed-row form.
///
/// Entries are stored row-major; the value of entry `e` is supplied
/// separately as row `e` of an `nnz×1` matrix so that edge weights can be
/// differentiable.
#[derive(Debug, Clone, PartialEq)]
pub struct SparsePattern {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
}

impl SparsePattern {
    /// Builds a pattern from `(row, col)` entries. Entries are sorted; the
    /// returned permutation maps pattern position to input position.
    pub fn from_entries(rows: usize, cols: usize, entries: &[(usize, usize)]) -> (Self, Vec<usize>) {
        let mut order: Vec<usize> = (0..entries.len()).collect();
        order.sort_by_key(|&e| entries[e]);
        let mut row_ptr = vec![0usize; rows + 1];
        let mut col_idx = Vec::with_capacity(entries.len());
        for &e in &order {
            let (r, c) = entries[e];
            assert!(r < rows && c < cols, "sparse entry ({r},{c}) outside {rows}x{cols}");
            row_ptr[r + 1] += 1;
            col_idx.push(c);
        }
        for r in 0..rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        (
            SparsePattern {
                rows,
                cols,
                row_ptr,
                col_idx,
            },
            order,
        )
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    /// Iterates `(entry, row, col)` in storage order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        (0..self.rows).flat_map(move |r| {
            (self.row_ptr[r]..self.row_ptr[r + 1]).map(move |e| (e, r, self.col_idx[e]))
        })
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    MulCol(Var, Var),
    MulScalar(Var, Var),
    MulConst(Var, Rc<Array2<f64>>),
    Scale(Var, f64),
    AddScalar(Var),
    Sigmoid(Var),
    Tanh(Var),
    LogSigmoid(Var),
    LogClamped(Var, f64),
    Sqrt(Var),
    Powf(Var, f64),
    SoftmaxRows(Var),
    SegmentSoftmax(Var, Rc<Vec<usize>>),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Rc<Vec<usize>>),
    ScatterAddRows(Var, Rc<Vec<usize>>),
    RowDot(Var, Var),
    NormalizeRows(Var),
    Sum(Var),
    SpMM(Var, Rc<SparsePattern>, Var),
    PairwiseDist(Var),
    DoubleCenter(Var),
}

struct Node {
    value: Array2<f64>,
    op: Op,
    needs_grad: bool,
}

/// Records a forward computation for later differentiation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    /// Gradient with respect to `v`, or `None` when `v` does not influence
    /// the output through any differentiable path.
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient with respect to `v`, zero-filled to `shape` when absent.
    pub fn get_or_zeros(&self, v: Var, shape: (usize, usize)) -> Array2<f64> {
        self.get(v).cloned().unwrap_or_else(|| Array2::zeros(shape))
    }

    pub fn take(&mut self, v: Var) -> Option<Array2<f64>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
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

fn log_sigmoid(x: f64) -> f64 {
    x.min(0.0) - (-x.abs()).exp().ln_1p()
}

fn dims(a: &Array2<f64>) -> (usize, usize) {
    (a.nrows(), a.ncols())
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

    /// A differentiable leaf.
    pub fn param(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Array2::from_elem((1, 1), value))
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        dims(self.value(v))
    }

    /// Value of a 1×1 node.
    pub fn scalar_value(&self, v: Var) -> f64 {
        let a = self.value(v);
        assert_eq!(dims(a), (1, 1), "scalar_value on non-scalar node");
        a[[0, 0]]
    }

    fn push(&mut self, value: Array2<f64>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn unary(&mut self, a: Var, value: Array2<f64>, op: Op) -> Var {
        let g = self.ng(a);
        self.push(value, op, g)
    }

    fn binary(&mut self, a: Var, b: Var, value: Array2<f64>, op: Op) -> Var {
        let g = self.ng(a) || self.ng(b);
        self.push(value, op, g)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.ncols(), vb.nrows(), "matmul {:?} x {:?}", dims(va), dims(vb));
        let v = va.dot(vb);
        self.binary(a, b, v, Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).t().to_owned();
        self.unary(a, v, Op::Transpose(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add shape");
        let v = self.value(a) + self.value(b);
        self.binary(a, b, v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "sub shape");
        let v = self.value(a) - self.value(b);
        self.binary(a, b, v, Op::Sub(a, b))
    }

    /// `a` (m×n) plus the row vector `b` (1×n) on every row.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!((1, va.ncols()), dims(vb), "add_row shape");
        let v = va + vb;
        self.binary(a, b, v, Op::AddRow(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mul shape");
        let v = self.value(a) * self.value(b);
        self.binary(a, b, v, Op::Mul(a, b))
    }

    /// `a` (m×n) with row `i` scaled by `b[i]` (b is m×1).
    pub fn mul_col(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!((va.nrows(), 1), dims(vb), "mul_col shape");
        let v = va * vb;
        self.binary(a, b, v, Op::MulCol(a, b))
    }

    /// `a` times the 1×1 node `s`.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Var {
        let k = self.scalar_value(s);
        let v = self.value(a) * k;
        self.binary(a, s, v, Op::MulScalar(a, s))
    }

    pub fn mul_const(&mut self, a: Var, c: Rc<Array2<f64>>) -> Var {
        assert_eq!(self.shape(a), dims(&c), "mul_const shape");
        let v = self.value(a) * c.as_ref();
        self.unary(a, v, Op::MulConst(a, c))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a) * k;
        self.unary(a, v, Op::Scale(a, k))
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a) + k;
        self.unary(a, v, Op::AddScalar(a))
    }

    /// `1 - a`, elementwise.
    pub fn one_minus(&mut self, a: Var) -> Var {
        let neg = self.scale(a, -1.0);
        self.add_scalar(neg, 1.0)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(sigmoid);
        self.unary(a, v, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::tanh);
        self.unary(a, v, Op::Tanh(a))
    }

    /// `ln σ(a)`, computed without overflow for large `|a|`.
    pub fn log_sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(log_sigmoid);
        self.unary(a, v, Op::LogSigmoid(a))
    }

    /// `ln max(a, eps)`.
    pub fn log_clamped(&mut self, a: Var, eps: f64) -> Var {
        let v = self.value(a).mapv(|x| x.max(eps).ln());
        self.unary(a, v, Op::LogClamped(a, eps))
    }

    /// `sqrt(max(a, 0))`; the derivative at zero is taken as zero.
    pub fn sqrt(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.max(0.0).sqrt());
        self.unary(a, v, Op::Sqrt(a))
    }

    /// `a^p` for positive entries; non-positive entries map to zero.
    pub fn powf(&mut self, a: Var, p: f64) -> Var {
        let v = self.value(a).mapv(|x| if x > 0.0 { x.powf(p) } else { 0.0 });
        self.unary(a, v, Op::Powf(a, p))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for mut row in v.rows_mut() {
            let m = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            row.mapv_inplace(|x| (x - m).exp());
            let z = row.sum();
            row.mapv_inplace(|x| x / z);
        }
        self.unary(a, v, Op::SoftmaxRows(a))
    }

    /// Softmax of an `m×1` column taken independently within each segment;
    /// `segment[i]` names the segment of row `i`.
    pub fn segment_softmax(&mut self, a: Var, segment: Rc<Vec<usize>>) -> Var {
        let va = self.value(a);
        assert_eq!((segment.len(), 1), dims(va), "segment_softmax shape");
        let nseg = segment.iter().copied().max().map_or(0, |m| m + 1);
        let mut max = vec![f64::NEG_INFINITY; nseg];
        for (i, &g) in segment.iter().enumerate() {
            max[g] = max[g].max(va[[i, 0]]);
        }
        let mut v = va.clone();
        let mut z = vec![0.0; nseg];
        for (i, &g) in segment.iter().enumerate() {
            v[[i, 0]] = (v[[i, 0]] - max[g]).exp();
            z[g] += v[[i, 0]];
        }
        for (i, &g) in segment.iter().enumerate() {
            v[[i, 0]] /= z[g];
        }
        self.unary(a, v, Op::SegmentSoftmax(a, segment))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols of nothing");
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("concat_cols row mismatch");
        let g = parts.iter().any(|&p| self.ng(p));
        self.push(v, Op::ConcatCols(parts.to_vec()), g)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_rows of nothing");
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(0), &views).expect("concat_rows column mismatch");
        let g = parts.iter().any(|&p| self.ng(p));
        self.push(v, Op::ConcatRows(parts.to_vec()), g)
    }

    /// Columns `start..end` of `a`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let v = self.value(a).slice(s![.., start..end]).to_owned();
        self.unary(a, v, Op::SliceCols(a, start))
    }

    /// Rows of `a` selected by `idx` (repeats allowed).
    pub fn gather_rows(&mut self, a: Var, idx: Rc<Vec<usize>>) -> Var {
        let v = self.value(a).select(Axis(0), &idx);
        self.unary(a, v, Op::GatherRows(a, idx))
    }

    /// Output of `rows` rows where row `idx[i]` accumulates row `i` of `a`.
    pub fn scatter_add_rows(&mut self, a: Var, idx: Rc<Vec<usize>>, rows: usize) -> Var {
        let va = self.value(a);
        assert_eq!(idx.len(), va.nrows(), "scatter_add_rows index length");
        let mut v = Array2::zeros((rows, va.ncols()));
        for (i, &r) in idx.iter().enumerate() {
            let mut dst = v.row_mut(r);
            dst += &va.row(i);
        }
        self.unary(a, v, Op::ScatterAddRows(a, idx))
    }

    /// Row-wise inner products, `m×1`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "row_dot shape");
        let prod = self.value(a) * self.value(b);
        let v = prod.sum_axis(Axis(1)).insert_axis(Axis(1));
        self.binary(a, b, v, Op::RowDot(a, b))
    }

    /// Each row scaled to unit norm; all-zero rows stay zero.
    pub fn normalize_rows(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for mut row in v.rows_mut() {
            let n = row.dot(&row).sqrt();
            if n > 0.0 {
                row.mapv_inplace(|x| x / n);
            }
        }
        self.unary(a, v, Op::NormalizeRows(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Array2::from_elem((1, 1), self.value(a).sum());
        self.unary(a, v, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1) as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Sparse-times-dense product. `values` is `nnz×1` in pattern order.
    ///
    /// Each output row sums only the stored entries of its pattern row, in
    /// column order, so rows and columns absent from the pattern never
    /// touch the result.
    pub fn spmm(&mut self, values: Var, pattern: Rc<SparsePattern>, x: Var) -> Var {
        let (vv, vx) = (self.value(values), self.value(x));
        assert_eq!((pattern.nnz(), 1), dims(vv), "spmm values shape");
        assert_eq!(pattern.cols(), vx.nrows(), "spmm inner dimension");
        let mut out = Array2::zeros((pattern.rows(), vx.ncols()));
        for (e, r, c) in pattern.iter() {
            let w = vv[[e, 0]];
            let mut dst = out.row_mut(r);
            dst.scaled_add(w, &vx.row(c));
        }
        self.binary(values, x, out, Op::SpMM(values, pattern, x))
    }

    /// Euclidean distances between all pairs of rows, `m×m`.
    pub fn pairwise_dist(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let m = va.nrows();
        let mut v = Array2::zeros((m, m));
        for i in 0..m {
            for j in (i + 1)..m {
                let d = Zip::from(va.row(i))
                    .and(va.row(j))
                    .fold(0.0, |acc, &x, &y| acc + (x - y) * (x - y))
                    .sqrt();
                v[[i, j]] = d;
                v[[j, i]] = d;
            }
        }
        self.unary(a, v, Op::PairwiseDist(a))
    }

    /// Subtracts row and column means and adds back the grand mean.
    pub fn double_center(&mut self, a: Var) -> Var {
        let v = double_center(self.value(a));
        self.unary(a, v, Op::DoubleCenter(a))
    }

    /// Gradients of the 1×1 node `out` with respect to every node.
    pub fn backward(&self, out: Var) -> Gradients {
        assert_eq!(self.shape(out), (1, 1), "backward from a non-scalar node");
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[out.0] = Some(Array2::ones((1, 1)));
        for i in (0..=out.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn propagate(&self, i: usize, g: &Array2<f64>, grads: &mut [Option<Array2<f64>>]) {
        let node = &self.nodes[i];
        let y = &node.value;
        let mut acc = |v: Var, d: Array2<f64>| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => *existing += &d,
                slot @ None => *slot = Some(d),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.ng(*a) {
                    acc(*a, g.dot(&vb.t()));
                }
                if self.ng(*b) {
                    acc(*b, va.t().dot(g));
                }
            }
            Op::Transpose(a) => acc(*a, g.t().to_owned()),
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, -g);
            }
            Op::AddRow(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                acc(*a, g * vb);
                acc(*b, g * va);
            }
            Op::MulCol(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                acc(*a, g * vb);
                if self.ng(*b) {
                    acc(*b, (g * va).sum_axis(Axis(1)).insert_axis(Axis(1)));
                }
            }
            Op::MulScalar(a, s) => {
                let k = self.value(*s)[[0, 0]];
                acc(*a, g * k);
                if self.ng(*s) {
                    let d = (g * self.value(*a)).sum();
                    acc(*s, Array2::from_elem((1, 1), d));
                }
            }
            Op::MulConst(a, c) => acc(*a, g * c.as_ref()),
            Op::Scale(a, k) => acc(*a, g * *k),
            Op::AddScalar(a) => acc(*a, g.clone()),
            Op::Sigmoid(a) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(y).for_each(|d, &y| *d *= y * (1.0 - y));
                acc(*a, d);
            }
            Op::Tanh(a) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(y).for_each(|d, &y| *d *= 1.0 - y * y);
                acc(*a, d);
            }
            Op::LogSigmoid(a) => {
                let mut d = g.clone();
                Zip::from(&mut d)
                    .and(self.value(*a))
                    .for_each(|d, &x| *d *= sigmoid(-x));
                acc(*a, d);
            }
            Op::LogClamped(a, eps) => {
                let mut d = g.clone();
                Zip::from(&mut d)
                    .and(self.value(*a))
                    .for_each(|d, &x| *d = if x > *eps { *d / x } else { 0.0 });
                acc(*a, d);
            }
            Op::Sqrt(a) => {
                let mut d = g.clone();
                Zip::from(&mut d)
                    .and(y)
                    .for_each(|d, &y| *d = if y > 0.0 { *d / (2.0 * y) } else { 0.0 });
                acc(*a, d);
            }
            Op::Powf(a, p) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(self.value(*a)).for_each(|d, &x| {
                    *d = if x > 0.0 { *d * p * x.powf(p - 1.0) } else { 0.0 }
                });
                acc(*a, d);
            }
            Op::SoftmaxRows(a) => {
                let gy = g * y;
                let s = gy.sum_axis(Axis(1)).insert_axis(Axis(1));
                acc(*a, gy - y * &s);
            }
            Op::SegmentSoftmax(a, segment) => {
                let nseg = segment.iter().copied().max().map_or(0, |m| m + 1);
                let mut s = vec![0.0; nseg];
                for (r, &seg) in segment.iter().enumerate() {
                    s[seg] += g[[r, 0]] * y[[r, 0]];
                }
                let mut d = Array2::zeros(y.raw_dim());
                for (r, &seg) in segment.iter().enumerate() {
                    d[[r, 0]] = y[[r, 0]] * (g[[r, 0]] - s[seg]);
                }
                acc(*a, d);
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for &p in parts {
                    let w = self.value(p).ncols();
                    acc(p, g.slice(s![.., start..start + w]).to_owned());
                    start += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for &p in parts {
                    let h = self.value(p).nrows();
                    acc(p, g.slice(s![start..start + h, ..]).to_owned());
                    start += h;
                }
            }
            Op::SliceCols(a, start) => {
                let mut d = Array2::zeros(self.value(*a).raw_dim());
                d.slice_mut(s![.., *start..*start + g.ncols()]).assign(g);
                acc(*a, d);
            }
            Op::GatherRows(a, idx) => {
                let mut d = Array2::zeros(self.value(*a).raw_dim());
                for (r, &src) in idx.iter().enumerate() {
                    let mut row = d.row_mut(src);
                    row += &g.row(r);
                }
                acc(*a, d);
            }
            Op::ScatterAddRows(a, idx) => acc(*a, g.select(Axis(0), idx)),
            Op::RowDot(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                acc(*a, vb * g);
                acc(*b, va * g);
            }
            Op::NormalizeRows(a) => {
                let va = self.value(*a);
                let mut d = Array2::zeros(va.raw_dim());
                for r in 0..va.nrows() {
                    let n = va.row(r).dot(&va.row(r)).sqrt();
                    if n > 0.0 {
                        let gy = g.row(r).dot(&y.row(r));
                        let mut dr = d.row_mut(r);
                        dr.assign(&g.row(r));
                        dr.scaled_add(-gy, &y.row(r));
                        dr.mapv_inplace(|x| x / n);
                    }
                }
                acc(*a, d);
            }
            Op::Sum(a) => acc(*a, Array2::from_elem(self.value(*a).raw_dim(), g[[0, 0]])),
            Op::SpMM(values, pattern, x) => {
                let (vv, vx) = (self.value(*values), self.value(*x));
                if self.ng(*values) {
                    let mut dv = Array2::zeros((pattern.nnz(), 1));
                    for (e, r, c) in pattern.iter() {
                        dv[[e, 0]] = g.row(r).dot(&vx.row(c));
                    }
                    acc(*values, dv);
                }
                if self.ng(*x) {
                    let mut dx = Array2::zeros(vx.raw_dim());
                    for (e, r, c) in pattern.iter() {
                        let mut row = dx.row_mut(c);
                        row.scaled_add(vv[[e, 0]], &g.row(r));
                    }
                    acc(*x, dx);
                }
            }
            Op::PairwiseDist(a) => {
                let va = self.value(*a);
                let m = va.nrows();
                let mut d = Array2::zeros(va.raw_dim());
                for i in 0..m {
                    for j in 0..m {
                        let dist = y[[i, j]];
                        if i == j || dist <= 0.0 {
                            continue;
                        }
                        let w = (g[[i, j]] + g[[j, i]]) / dist;
                        if w == 0.0 {
                            continue;
                        }
                        let diff = &va.row(i) - &va.row(j);
                        let mut row = d.row_mut(i);
                        row.scaled_add(w, &diff);
                    }
                }
                acc(*a, d);
            }
            // Double centering is linear and self-adjoint.
            Op::DoubleCenter(a) => acc(*a, double_center(g)),
        }
    }
}

pub(crate) fn double_center(a: &Array2<f64>) -> Array2<f64> {
    let row_mean = a.mean_axis(Axis(1)).expect("non-empty matrix");
    let col_mean = a.mean_axis(Axis(0)).expect("non-empty matrix");
    let grand = a.mean().expect("non-empty matrix");
    let mut out = a.clone();
    for ((i, j), x) in out.indexed_iter_mut() {
        *x = *x - row_mean[i] - col_mean[j] + grand;
    }
    out
}
