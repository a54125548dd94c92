use crate::error::{Error, Result};

use super::kernels::{gemm, gemm_nt, gemm_tn};
use super::{Real, Tensor};

const LAYER_NORM_EPS: f64 = 1e-5;
const GELU_COEF: f64 = 0.044_715;

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, T),
    Sum(Var),
    MeanRows(Var),
    RepeatRows(Var),
    ConcatCols(Var, Var),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    Softmax(Var),
    LayerNorm { x: Var, xhat: Vec<T>, rstd: Vec<T> },
    Gelu(Var),
    Embedding { table: Var, ids: Vec<usize> },
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Vec<T> },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Ordered record of executed ops. Nodes are appended in execution order, so
/// walking the node list backwards is a valid reverse topological traversal.
#[derive(Debug, Default)]
pub struct Tape<T: Real = f32> {
    nodes: Vec<Node<T>>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

/// Visibility pattern of a causal mask for `s` positions: `true` where the key
/// index is at or before the query index.
pub fn causal_visibility(s: usize) -> Vec<bool> {
    let mut v = vec![false; s * s];
    for q in 0..s {
        for k in 0..=q {
            v[q * s + k] = true;
        }
    }
    v
}

fn dim_err<T: Real>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Error {
    Error::Dimension {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a trainable input.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    /// Records a constant input.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, op_name: &'static str, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Result<Var> {
        value.check_finite(op_name)?;
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn mat(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        self.nodes[v.0].value.expect_matrix(op)
    }

    /// `a[m×k] · b[k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.mat(a, "matmul")?;
        let (k2, n) = self.mat(b, "matmul")?;
        if k != k2 {
            return Err(dim_err("matmul", self.value(a), self.value(b)));
        }
        let mut out = vec![T::zero(); m * n];
        gemm(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let t = Tensor::matrix(m, n, out)?;
        self.push("matmul", t, Op::MatMul(a, b), &[a, b])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.mat(a, "transpose")?;
        let src = self.value(a).data();
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        let t = Tensor::matrix(n, m, out)?;
        self.push("transpose", t, Op::Transpose(a), &[a])
    }

    fn zip_same(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(dim_err(name, ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        self.push(name, t, op, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn row_broadcast(&mut self, name: &'static str, x: Var, row: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var> {
        let (m, n) = self.mat(x, name)?;
        let (r, c) = self.mat(row, name)?;
        if r != 1 || c != n {
            return Err(dim_err(name, self.value(x), self.value(row)));
        }
        let rv = self.value(row).data();
        let mut data = self.value(x).data().to_vec();
        for i in 0..m {
            for (d, &b) in data[i * n..(i + 1) * n].iter_mut().zip(rv) {
                *d = f(*d, b);
            }
        }
        let t = Tensor::matrix(m, n, data)?;
        self.push(name, t, op, &[x, row])
    }

    /// Adds a `1×n` row to every row of `x[m×n]`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        self.row_broadcast("add_row", x, row, |a, b| a + b, Op::AddRow(x, row))
    }

    /// Multiplies every row of `x[m×n]` elementwise by a `1×n` row.
    pub fn mul_row(&mut self, x: Var, row: Var) -> Result<Var> {
        self.row_broadcast("mul_row", x, row, |a, b| a * b, Op::MulRow(x, row))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Result<Var> {
        let ta = self.value(a);
        let data = ta.data().iter().map(|&x| x * s).collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        self.push("scale", t, Op::Scale(a, s), &[a])
    }

    /// Sum of all entries as a `1×1` tensor.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().copied().sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(a), &[a])
    }

    /// Column-wise mean of `a[m×n]`, producing `1×n`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.mat(a, "mean_rows")?;
        if m == 0 {
            return Err(Error::EmptyReduction("mean_rows"));
        }
        let src = self.value(a).data();
        let mut out = vec![T::zero(); n];
        for i in 0..m {
            for (o, &x) in out.iter_mut().zip(&src[i * n..(i + 1) * n]) {
                *o = *o + x;
            }
        }
        let inv = T::one() / T::from_usize(m).unwrap();
        out.iter_mut().for_each(|o| *o = *o * inv);
        let t = Tensor::matrix(1, n, out)?;
        self.push("mean_rows", t, Op::MeanRows(a), &[a])
    }

    /// Stacks `times` copies of the `1×n` row `a`.
    pub fn repeat_rows(&mut self, a: Var, times: usize) -> Result<Var> {
        let (r, n) = self.mat(a, "repeat_rows")?;
        if r != 1 {
            return Err(Error::Dimension {
                op: "repeat_rows",
                lhs: self.value(a).shape().to_vec(),
                rhs: vec![1, n],
            });
        }
        let row = self.value(a).data();
        let data = (0..times).flat_map(|_| row.iter().copied()).collect();
        let t = Tensor::matrix(times, n, data)?;
        self.push("repeat_rows", t, Op::RepeatRows(a), &[a])
    }

    /// Feature-wise concatenation: each output row is `a`'s row followed by `b`'s.
    pub fn concat_features(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, p) = self.mat(a, "concat_features")?;
        let (m2, q) = self.mat(b, "concat_features")?;
        if m != m2 {
            return Err(dim_err("concat_features", self.value(a), self.value(b)));
        }
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut data = Vec::with_capacity(m * (p + q));
        for i in 0..m {
            data.extend_from_slice(&da[i * p..(i + 1) * p]);
            data.extend_from_slice(&db[i * q..(i + 1) * q]);
        }
        let t = Tensor::matrix(m, p + q, data)?;
        self.push("concat_features", t, Op::ConcatCols(a, b), &[a, b])
    }

    /// Vertical concatenation of matrices sharing a column count. Empty
    /// (zero-row) parts are allowed.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::EmptyReduction("concat_rows"));
        };
        let (_, n) = self.mat(first, "concat_rows")?;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (r, c) = self.mat(p, "concat_rows")?;
            if c != n {
                return Err(dim_err("concat_rows", self.value(first), self.value(p)));
            }
            rows += r;
            data.extend_from_slice(self.value(p).data());
        }
        let t = Tensor::matrix(rows, n, data)?;
        self.push("concat_rows", t, Op::ConcatRows(parts.to_vec()), parts)
    }

    /// Selects rows of `a` by index (rows may repeat).
    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let (m, n) = self.mat(a, "gather_rows")?;
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(rows.len() * n);
        for &r in rows {
            if r >= m {
                return Err(Error::Index {
                    what: "gather_rows",
                    index: r,
                    bound: m,
                });
            }
            data.extend_from_slice(&src[r * n..(r + 1) * n]);
        }
        let t = Tensor::matrix(rows.len(), n, data)?;
        self.push("gather_rows", t, Op::GatherRows(a, rows.to_vec()), &[a])
    }

    /// Contiguous row range `[start, end)` of `a`.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let idx: Vec<usize> = (start..end).collect();
        self.gather_rows(a, &idx)
    }

    /// Row-wise softmax. `visible`, when given, is an `m×n` pattern where
    /// `false` entries are excluded from normalization and come out exactly 0.
    pub fn softmax_rows(&mut self, a: Var, visible: Option<&[bool]>) -> Result<Var> {
        let (m, n) = self.mat(a, "softmax_rows")?;
        if let Some(vis) = visible {
            if vis.len() != m * n {
                return Err(Error::Dimension {
                    op: "softmax_rows",
                    lhs: vec![m, n],
                    rhs: vec![vis.len()],
                });
            }
        }
        let src = self.value(a).data();
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let row = &src[i * n..(i + 1) * n];
            let keep = |j: usize| visible.is_none_or(|v| v[i * n + j]);
            let mut max = T::neg_infinity();
            for (j, &x) in row.iter().enumerate() {
                if keep(j) && x > max {
                    max = x;
                }
            }
            if max == T::neg_infinity() {
                return Err(Error::FullyMasked { row: i });
            }
            let orow = &mut out[i * n..(i + 1) * n];
            let mut total = T::zero();
            for (j, &x) in row.iter().enumerate() {
                if keep(j) {
                    let e = (x - max).exp();
                    orow[j] = e;
                    total = total + e;
                }
            }
            let inv = T::one() / total;
            orow.iter_mut().for_each(|o| *o = *o * inv);
        }
        let t = Tensor::matrix(m, n, out)?;
        self.push("softmax_rows", t, Op::Softmax(a), &[a])
    }

    /// Per-row standardization `(x − mean) / sqrt(var + 1e-5)` with no affine part.
    pub fn layer_norm_rows(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.mat(a, "layer_norm_rows")?;
        if n == 0 {
            return Err(Error::EmptyReduction("layer_norm_rows"));
        }
        let src = self.value(a).data();
        let nf = T::from_usize(n).unwrap();
        let eps = T::lit(LAYER_NORM_EPS);
        let mut xhat = vec![T::zero(); m * n];
        let mut rstd = vec![T::zero(); m];
        for i in 0..m {
            let row = &src[i * n..(i + 1) * n];
            let mean = row.iter().copied().sum::<T>() / nf;
            let var = row.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() / nf;
            let r = T::one() / (var + eps).sqrt();
            rstd[i] = r;
            for (o, &x) in xhat[i * n..(i + 1) * n].iter_mut().zip(row) {
                *o = (x - mean) * r;
            }
        }
        let t = Tensor::matrix(m, n, xhat.clone())?;
        self.push("layer_norm_rows", t, Op::LayerNorm { x: a, xhat, rstd }, &[a])
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        let c = T::lit((2.0 / std::f64::consts::PI).sqrt());
        let k = T::lit(GELU_COEF);
        let half = T::lit(0.5);
        let data = ta
            .data()
            .iter()
            .map(|&x| half * x * (T::one() + (c * (x + k * x * x * x)).tanh()))
            .collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        self.push("gelu", t, Op::Gelu(a), &[a])
    }

    /// Looks up rows of `table[V×d]`, producing `n×d`.
    pub fn embedding_lookup(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (v, d) = self.mat(table, "embedding_lookup")?;
        let src = self.value(table).data();
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(Error::Index {
                    what: "embedding table",
                    index: id,
                    bound: v,
                });
            }
            data.extend_from_slice(&src[id * d..(id + 1) * d]);
        }
        let t = Tensor::matrix(ids.len(), d, data)?;
        self.push(
            "embedding_lookup",
            t,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        )
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of
    /// `logits[m×V]`. Returns a `1×1` tensor.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (m, v) = self.mat(logits, "cross_entropy")?;
        if targets.len() != m {
            return Err(Error::Dimension {
                op: "cross_entropy",
                lhs: vec![m, v],
                rhs: vec![targets.len()],
            });
        }
        if m == 0 {
            return Err(Error::EmptyReduction("cross_entropy"));
        }
        let src = self.value(logits).data();
        let mut probs = vec![T::zero(); m * v];
        let mut total = T::zero();
        for (i, &t) in targets.iter().enumerate() {
            if t >= v {
                return Err(Error::Index {
                    what: "cross_entropy target",
                    index: t,
                    bound: v,
                });
            }
            let row = &src[i * v..(i + 1) * v];
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let prow = &mut probs[i * v..(i + 1) * v];
            let mut z = T::zero();
            for (p, &x) in prow.iter_mut().zip(row) {
                *p = (x - max).exp();
                z = z + *p;
            }
            prow.iter_mut().for_each(|p| *p = *p / z);
            total = total + (max + z.ln() - row[t]);
        }
        let loss = total / T::from_usize(m).unwrap();
        self.push(
            "cross_entropy",
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            &[logits],
        )
    }

    /// Reverse pass from `output`, seeded with ones (the gradient of the sum
    /// of `output`'s entries). Each recorded node is visited once.
    pub fn backward(&self, output: Var) -> Result<Gradients<T>> {
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(vec![T::one(); self.nodes[output.0].value.len()]);

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.requires_grad {
                self.propagate(node, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }

        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, n)| g.map(|d| Tensor::new(n.value.shape().to_vec(), d).expect("grad shape")))
            .collect();
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        // Accumulates into the gradient buffer of `v`, if `v` needs one.
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [T])| {
            let n = &self.nodes[v.0];
            if !n.requires_grad {
                return;
            }
            let buf = grads[v.0].get_or_insert_with(|| vec![T::zero(); n.value.len()]);
            f(buf);
        };

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let ta = self.value(*a);
                let tb = self.value(*b);
                let (m, k) = (ta.rows(), ta.cols());
                let n = tb.cols();
                acc(*a, &mut |buf| gemm_nt(g, tb.data(), buf, m, n, k));
                acc(*b, &mut |buf| gemm_tn(ta.data(), g, buf, m, k, n));
            }
            Op::Transpose(a) => {
                let (m, n) = (self.value(*a).rows(), self.value(*a).cols());
                acc(*a, &mut |buf| {
                    for i in 0..m {
                        for j in 0..n {
                            buf[i * n + j] = buf[i * n + j] + g[j * m + i];
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |buf| add_into(buf, g));
                acc(*b, &mut |buf| add_into(buf, g));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &mut |buf| {
                    for ((o, &gi), &y) in buf.iter_mut().zip(g).zip(tb) {
                        *o = *o + gi * y;
                    }
                });
                acc(*b, &mut |buf| {
                    for ((o, &gi), &x) in buf.iter_mut().zip(g).zip(ta) {
                        *o = *o + gi * x;
                    }
                });
            }
            Op::AddRow(x, row) => {
                let n = self.value(*row).cols();
                acc(*x, &mut |buf| add_into(buf, g));
                acc(*row, &mut |buf| {
                    for chunk in g.chunks(n) {
                        add_into(buf, chunk);
                    }
                });
            }
            Op::MulRow(x, row) => {
                let n = self.value(*row).cols();
                let (tx, tr) = (self.value(*x).data(), self.value(*row).data());
                acc(*x, &mut |buf| {
                    for (i, (o, &gi)) in buf.iter_mut().zip(g).enumerate() {
                        *o = *o + gi * tr[i % n];
                    }
                });
                acc(*row, &mut |buf| {
                    for (i, (&gi, &xi)) in g.iter().zip(tx).enumerate() {
                        buf[i % n] = buf[i % n] + gi * xi;
                    }
                });
            }
            Op::Scale(a, s) => acc(*a, &mut |buf| {
                for (o, &gi) in buf.iter_mut().zip(g) {
                    *o = *o + gi * *s;
                }
            }),
            Op::Sum(a) => acc(*a, &mut |buf| buf.iter_mut().for_each(|o| *o = *o + g[0])),
            Op::MeanRows(a) => {
                let m = self.value(*a).rows();
                let inv = T::one() / T::from_usize(m).unwrap();
                acc(*a, &mut |buf| {
                    for chunk in buf.chunks_mut(g.len()) {
                        for (o, &gi) in chunk.iter_mut().zip(g) {
                            *o = *o + gi * inv;
                        }
                    }
                });
            }
            Op::RepeatRows(a) => {
                let n = self.value(*a).cols();
                acc(*a, &mut |buf| {
                    for chunk in g.chunks(n.max(1)) {
                        add_into(buf, chunk);
                    }
                });
            }
            Op::ConcatCols(a, b) => {
                let p = self.value(*a).cols();
                let q = self.value(*b).cols();
                let w = p + q;
                acc(*a, &mut |buf| {
                    for (dst, src) in buf.chunks_mut(p.max(1)).zip(g.chunks(w.max(1))) {
                        add_into(dst, &src[..p]);
                    }
                });
                acc(*b, &mut |buf| {
                    for (dst, src) in buf.chunks_mut(q.max(1)).zip(g.chunks(w.max(1))) {
                        add_into(dst, &src[p..]);
                    }
                });
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    let slice = &g[offset..offset + len];
                    acc(p, &mut |buf| add_into(buf, slice));
                    offset += len;
                }
            }
            Op::GatherRows(a, rows) => {
                let n = self.value(*a).cols();
                acc(*a, &mut |buf| {
                    for (k, &r) in rows.iter().enumerate() {
                        add_into(&mut buf[r * n..(r + 1) * n], &g[k * n..(k + 1) * n]);
                    }
                });
            }
            Op::Softmax(a) => {
                let y = node.value.data();
                let n = node.value.cols();
                acc(*a, &mut |buf| {
                    for ((brow, yrow), grow) in buf.chunks_mut(n).zip(y.chunks(n)).zip(g.chunks(n)) {
                        let dot: T = yrow.iter().zip(grow).map(|(&yi, &gi)| yi * gi).sum();
                        for ((o, &yi), &gi) in brow.iter_mut().zip(yrow).zip(grow) {
                            *o = *o + yi * (gi - dot);
                        }
                    }
                });
            }
            Op::LayerNorm { x, xhat, rstd } => {
                let n = node.value.cols();
                let nf = T::from_usize(n).unwrap();
                acc(*x, &mut |buf| {
                    for (i, brow) in buf.chunks_mut(n).enumerate() {
                        let grow = &g[i * n..(i + 1) * n];
                        let hrow = &xhat[i * n..(i + 1) * n];
                        let mean_g = grow.iter().copied().sum::<T>() / nf;
                        let mean_gh = grow.iter().zip(hrow).map(|(&a, &b)| a * b).sum::<T>() / nf;
                        for ((o, &gi), &hi) in brow.iter_mut().zip(grow).zip(hrow) {
                            *o = *o + rstd[i] * (gi - mean_g - hi * mean_gh);
                        }
                    }
                });
            }
            Op::Gelu(a) => {
                let xs = self.value(*a).data();
                let c = T::lit((2.0 / std::f64::consts::PI).sqrt());
                let k = T::lit(GELU_COEF);
                let half = T::lit(0.5);
                let three = T::lit(3.0);
                acc(*a, &mut |buf| {
                    for ((o, &gi), &x) in buf.iter_mut().zip(g).zip(xs) {
                        let th = (c * (x + k * x * x * x)).tanh();
                        let d = half * (T::one() + th)
                            + half * x * (T::one() - th * th) * c * (T::one() + three * k * x * x);
                        *o = *o + gi * d;
                    }
                });
            }
            Op::Embedding { table, ids } => {
                let d = self.value(*table).cols();
                acc(*table, &mut |buf| {
                    for (k, &id) in ids.iter().enumerate() {
                        add_into(&mut buf[id * d..(id + 1) * d], &g[k * d..(k + 1) * d]);
                    }
                });
            }
            Op::CrossEntropy { logits, targets, probs } => {
                let v = self.value(*logits).cols();
                let scale = g[0] / T::from_usize(targets.len()).unwrap();
                acc(*logits, &mut |buf| {
                    for (i, &t) in targets.iter().enumerate() {
                        let prow = &probs[i * v..(i + 1) * v];
                        let brow = &mut buf[i * v..(i + 1) * v];
                        for (j, (o, &p)) in brow.iter_mut().zip(prow).enumerate() {
                            let onehot = if j == t { T::one() } else { T::zero() };
                            *o = *o + scale * (p - onehot);
                        }
                    }
                });
            }
        }
    }
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + s;
    }
}
