//! Tape-based reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so the tape is already a topological
//! order and `backward` walks it once in reverse. Parameters are read from a
//! borrowed [`ParamStore`]; their gradients are accumulated into a caller-owned
//! [`Gradients`].

use crate::error::{Error, Result};
use crate::numerics::{Gradients, ParamId, ParamStore, Tensor};

const LAYER_NORM_EPS: f64 = 1e-5;
const DEGENERATE_STD: f64 = 1e-12;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Param(ParamId),
    Const,
    MatMul(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    Sigmoid(Var),
    LogSigmoid(Var),
    Log(Var),
    SoftmaxRows(Var),
    LogSoftmax(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<f64>, rstd: Vec<f64> },
    Standardize { x: Var, alpha: f64, std: f64 },
    Cosine { query: Var, keys: Var },
    Transpose(Var),
    Reshape(Var),
    SliceCols { x: Var, start: usize },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    GatherRows { x: Var, rows: Vec<usize> },
    Pick { x: Var, index: usize },
    Sum(Var),
    Dot(Var, Var),
}

impl Op {
    fn tag(&self) -> &'static str {
        match self {
            Op::Param(_) => "param",
            Op::Const => "const",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::AddBias(..) => "add_bias",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Gelu(_) => "gelu",
            Op::Sigmoid(_) => "sigmoid",
            Op::LogSigmoid(_) => "log_sigmoid",
            Op::Log(_) => "log",
            Op::SoftmaxRows(_) => "softmax",
            Op::LogSoftmax(_) => "log_softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Standardize { .. } => "standardize",
            Op::Cosine { .. } => "cosine",
            Op::Transpose(_) => "transpose",
            Op::Reshape(_) => "reshape",
            Op::SliceCols { .. } => "slice_cols",
            Op::ConcatRows(_) => "concat_rows",
            Op::ConcatCols(_) => "concat_cols",
            Op::GatherRows { .. } => "gather_rows",
            Op::Pick { .. } => "pick",
            Op::Sum(_) => "sum",
            Op::Dot(..) => "dot",
        }
    }
}

#[derive(Debug)]
struct Node {
    op: Op,
    // `None` for parameter leaves, which are read from the store.
    value: Option<Tensor>,
}

/// A single-use computation graph over a read-only parameter snapshot.
pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

fn finite(op: &'static str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
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
    // -softplus(-x)
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_K * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * x * x)
}

fn softmax_in_place(row: &mut [f64]) {
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

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Graph { params, nodes: Vec::with_capacity(256) }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match &self.nodes[v.0] {
            Node { op: Op::Param(id), .. } => self.params.get(*id),
            Node { value: Some(t), .. } => t,
            Node { value: None, .. } => unreachable!("non-parameter node without value"),
        }
    }

    /// Value of a scalar node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).values()[0]
    }

    /// Op tag of a node, for diagnostics.
    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.tag()
    }

    fn push(&mut self, op: Op, value: Tensor) -> Result<Var> {
        finite(op.tag(), value.values())?;
        self.nodes.push(Node { op, value: Some(value) });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node { op: Op::Param(id), value: None });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.push(Op::Const, value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 {
            return Err(Error::Dimension(format!(
                "matmul expects matrices, got {:?} and {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let (m, k) = ta.dims2();
        let (k2, n) = tb.dims2();
        if k != k2 {
            return Err(Error::Dimension(format!("matmul inner dimensions {k} != {k2}")));
        }
        let (av, bv) = (ta.values(), tb.values());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let aip = av[i * k + p];
                if aip == 0.0 {
                    continue;
                }
                let brow = &bv[p * n..(p + 1) * n];
                for (o, b) in orow.iter_mut().zip(brow) {
                    *o += aip * b;
                }
            }
        }
        self.push(Op::MatMul(a, b), Tensor::from_parts_unchecked(vec![m, n], out))
    }

    fn same_shape(&self, a: Var, b: Var, op: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Dimension(format!(
                "{op} shape mismatch {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    fn map2(&mut self, op: Op, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        self.same_shape(a, b, op.tag())?;
        let ta = self.value(a);
        let out = ta.values().iter().zip(self.value(b).values()).map(|(x, y)| f(*x, *y)).collect();
        let shape = ta.shape().to_vec();
        self.push(op, Tensor::from_parts_unchecked(shape, out))
    }

    fn map1(&mut self, op: Op, x: Var, f: impl Fn(f64) -> f64) -> Result<Var> {
        let t = self.value(x);
        let out = t.values().iter().map(|v| f(*v)).collect();
        let shape = t.shape().to_vec();
        self.push(op, Tensor::from_parts_unchecked(shape, out))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.map2(Op::Add(a, b), a, b, |x, y| x + y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.map2(Op::Mul(a, b), a, b, |x, y| x * y)
    }

    /// Adds a length-`n` bias to every row of an `m × n` input.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.value(x).dims2();
        let tb = self.value(bias);
        if tb.len() != n {
            return Err(Error::Dimension(format!("bias length {} != columns {n}", tb.len())));
        }
        let bv = tb.values();
        let mut out = self.value(x).values().to_vec();
        for i in 0..m {
            for (o, b) in out[i * n..(i + 1) * n].iter_mut().zip(bv) {
                *o += b;
            }
        }
        let shape = self.value(x).shape().to_vec();
        self.push(Op::AddBias(x, bias), Tensor::from_parts_unchecked(shape, out))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        self.map1(Op::Scale(x, factor), x, |v| v * factor)
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        self.map1(Op::Gelu(x), x, gelu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.map1(Op::Sigmoid(x), x, sigmoid)
    }

    pub fn log_sigmoid(&mut self, x: Var) -> Result<Var> {
        self.map1(Op::LogSigmoid(x), x, log_sigmoid)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        if self.value(x).values().iter().any(|v| *v <= 0.0) {
            return Err(Error::Contract("log of a non-positive value".into()));
        }
        self.map1(Op::Log(x), x, f64::ln)
    }

    /// Row-wise softmax; a vector is treated as one row.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.is_empty() {
            return Err(Error::Dimension("softmax of empty input".into()));
        }
        let (m, n) = t.dims2();
        let mut out = t.values().to_vec();
        for i in 0..m {
            softmax_in_place(&mut out[i * n..(i + 1) * n]);
        }
        let shape = t.shape().to_vec();
        self.push(Op::SoftmaxRows(x), Tensor::from_parts_unchecked(shape, out))
    }

    /// Log-softmax of a vector.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let max = t.values().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + t.values().iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let out = t.values().iter().map(|v| v - lse).collect();
        let shape = t.shape().to_vec();
        self.push(Op::LogSoftmax(x), Tensor::from_parts_unchecked(shape, out))
    }

    /// Row-wise layer normalization with affine gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let t = self.value(x);
        let (m, n) = t.dims2();
        if n < 2 {
            return Err(Error::Dimension(format!("layer_norm needs width >= 2, got {n}")));
        }
        let (g, b) = (self.value(gain).values(), self.value(bias).values());
        if g.len() != n || b.len() != n {
            return Err(Error::Dimension("layer_norm gain/bias width mismatch".into()));
        }
        let mut xhat = vec![0.0; m * n];
        let mut rstd = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = t.row(i);
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let r = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            rstd[i] = r;
            for j in 0..n {
                let h = (row[j] - mean) * r;
                xhat[i * n + j] = h;
                out[i * n + j] = h * g[j] + b[j];
            }
        }
        let shape = t.shape().to_vec();
        self.push(Op::LayerNorm { x, gain, bias, xhat, rstd }, Tensor::from_parts_unchecked(shape, out))
    }

    /// Rescales a vector to zero mean and population standard deviation
    /// `alpha`. Returns the output and whether the input was degenerate
    /// (all entries equal), in which case the output is all zeros.
    pub fn standardize(&mut self, x: Var, alpha: f64) -> Result<(Var, bool)> {
        let t = self.value(x);
        let n = t.len() as f64;
        let mean = t.values().iter().sum::<f64>() / n;
        let std = (t.values().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
        let degenerate = std <= DEGENERATE_STD * (1.0 + mean.abs());
        let out =
            if degenerate { vec![0.0; t.len()] } else { t.values().iter().map(|v| alpha * (v - mean) / std).collect() };
        let shape = t.shape().to_vec();
        let std = if degenerate { 0.0 } else { std };
        let v = self.push(Op::Standardize { x, alpha, std }, Tensor::from_parts_unchecked(shape, out))?;
        Ok((v, degenerate))
    }

    /// Cosine similarity between a query vector and every row of `keys`.
    pub fn cosine(&mut self, query: Var, keys: Var) -> Result<Var> {
        let tq = self.value(query);
        let tk = self.value(keys);
        let (m, n) = tk.dims2();
        if tq.len() != n {
            return Err(Error::Dimension(format!("cosine query width {} != key width {n}", tq.len())));
        }
        let qn = tq.l2_norm();
        if qn == 0.0 {
            return Err(Error::Contract("cosine of a zero-norm query".into()));
        }
        let mut out = Vec::with_capacity(m);
        for i in 0..m {
            let row = tk.row(i);
            let kn = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if kn == 0.0 {
                return Err(Error::Contract(format!("cosine of zero-norm key row {i}")));
            }
            let dot: f64 = row.iter().zip(tq.values()).map(|(a, b)| a * b).sum();
            out.push((dot / (qn * kn)).clamp(-1.0, 1.0));
        }
        self.push(Op::Cosine { query, keys }, Tensor::from_parts_unchecked(vec![m], out))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let (m, n) = t.dims2();
        let v = t.values();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = v[i * n + j];
            }
        }
        self.push(Op::Transpose(x), Tensor::from_parts_unchecked(vec![n, m], out))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x);
        let out = Tensor::new(shape.to_vec(), t.values().to_vec())?;
        self.push(Op::Reshape(x), out)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        let (m, n) = t.dims2();
        if start + len > n || len == 0 {
            return Err(Error::Dimension(format!("column slice {start}..{} of width {n}", start + len)));
        }
        let mut out = Vec::with_capacity(m * len);
        for i in 0..m {
            out.extend_from_slice(&t.row(i)[start..start + len]);
        }
        self.push(Op::SliceCols { x, start }, Tensor::from_parts_unchecked(vec![m, len], out))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::Dimension("concat_rows of nothing".into()));
        };
        let n = self.value(first).dims2().1;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (m, pn) = self.value(p).dims2();
            if pn != n {
                return Err(Error::Dimension(format!("concat_rows width {pn} != {n}")));
            }
            rows += m;
            out.extend_from_slice(self.value(p).values());
        }
        self.push(Op::ConcatRows(parts.to_vec()), Tensor::from_parts_unchecked(vec![rows, n], out))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::Dimension("concat_cols of nothing".into()));
        };
        let m = self.value(first).dims2().0;
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).dims2().1).collect();
        if parts.iter().any(|&p| self.value(p).dims2().0 != m) {
            return Err(Error::Dimension("concat_cols row mismatch".into()));
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * total);
        for i in 0..m {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(i));
            }
        }
        self.push(Op::ConcatCols(parts.to_vec()), Tensor::from_parts_unchecked(vec![m, total], out))
    }

    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let t = self.value(x);
        let (m, n) = t.dims2();
        if rows.is_empty() || rows.iter().any(|&r| r >= m) {
            return Err(Error::Dimension(format!("row gather {rows:?} out of {m} rows")));
        }
        let mut out = Vec::with_capacity(rows.len() * n);
        for &r in rows {
            out.extend_from_slice(t.row(r));
        }
        self.push(Op::GatherRows { x, rows: rows.to_vec() }, Tensor::from_parts_unchecked(vec![rows.len(), n], out))
    }

    pub fn pick(&mut self, x: Var, index: usize) -> Result<Var> {
        let t = self.value(x);
        if index >= t.len() {
            return Err(Error::Dimension(format!("pick {index} of {}", t.len())));
        }
        let v = t.values()[index];
        self.push(Op::Pick { x, index }, Tensor::scalar(v))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).values().iter().sum();
        self.push(Op::Sum(x), Tensor::scalar(v))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.len() != tb.len() {
            return Err(Error::Dimension(format!("dot length {} != {}", ta.len(), tb.len())));
        }
        let v = ta.values().iter().zip(tb.values()).map(|(x, y)| x * y).sum();
        self.push(Op::Dot(a, b), Tensor::scalar(v))
    }

    /// Sum of scalar nodes; `None` for an empty list.
    pub fn add_all(&mut self, terms: &[Var]) -> Result<Option<Var>> {
        let mut it = terms.iter().copied();
        let Some(mut acc) = it.next() else {
            return Ok(None);
        };
        for t in it {
            acc = self.add(acc, t)?;
        }
        Ok(Some(acc))
    }

    /// Reverse pass from a scalar root, accumulating parameter gradients.
    /// Repeated calls add into `grads`; zeroing is the caller's job.
    pub fn backward(&self, root: Var, grads: &mut Gradients) -> Result<()> {
        if !self.value(root).is_scalar() {
            return Err(Error::Contract(format!(
                "backward root must be scalar, got shape {:?}",
                self.value(root).shape()
            )));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        adj[root.0] = Some(vec![1.0]);

        for idx in (0..=root.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            let out = |s: &Self| s.value(Var(idx)).values().to_vec();
            match &node.op {
                Op::Param(id) => grads.accumulate(*id, &g),
                Op::Const => {}
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let (m, k) = ta.dims2();
                    let n = tb.dims2().1;
                    let (av, bv) = (ta.values(), tb.values());
                    let mut da = vec![0.0; m * k];
                    let mut db = vec![0.0; k * n];
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &bv[p * n..(p + 1) * n];
                            da[i * k + p] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                            let aip = av[i * k + p];
                            if aip != 0.0 {
                                for (d, gv) in db[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                    *d += aip * gv;
                                }
                            }
                        }
                    }
                    add_into(&mut adj, *a, da);
                    add_into(&mut adj, *b, db);
                }
                Op::Add(a, b) => {
                    add_into(&mut adj, *a, g.clone());
                    add_into(&mut adj, *b, g);
                }
                Op::AddBias(x, b) => {
                    let n = self.value(*b).len();
                    let mut db = vec![0.0; n];
                    for row in g.chunks(n) {
                        for (d, v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    add_into(&mut adj, *x, g);
                    add_into(&mut adj, *b, db);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a).values(), self.value(*b).values());
                    let da = g.iter().zip(bv).map(|(x, y)| x * y).collect();
                    let db = g.iter().zip(av).map(|(x, y)| x * y).collect();
                    add_into(&mut adj, *a, da);
                    add_into(&mut adj, *b, db);
                }
                Op::Scale(x, c) => add_into(&mut adj, *x, g.iter().map(|v| v * c).collect()),
                Op::Gelu(x) => {
                    let xv = self.value(*x).values();
                    add_into(&mut adj, *x, g.iter().zip(xv).map(|(gv, v)| gv * gelu_grad(*v)).collect());
                }
                Op::Sigmoid(x) => {
                    let y = out(self);
                    add_into(&mut adj, *x, g.iter().zip(&y).map(|(gv, s)| gv * s * (1.0 - s)).collect());
                }
                Op::LogSigmoid(x) => {
                    let xv = self.value(*x).values();
                    add_into(&mut adj, *x, g.iter().zip(xv).map(|(gv, v)| gv * sigmoid(-v)).collect());
                }
                Op::Log(x) => {
                    let xv = self.value(*x).values();
                    add_into(&mut adj, *x, g.iter().zip(xv).map(|(gv, v)| gv / v).collect());
                }
                Op::SoftmaxRows(x) => {
                    let y = out(self);
                    let (_, n) = self.value(*x).dims2();
                    let mut dx = vec![0.0; y.len()];
                    for ((yr, gr), dr) in y.chunks(n).zip(g.chunks(n)).zip(dx.chunks_mut(n)) {
                        let s: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for ((d, yv), gv) in dr.iter_mut().zip(yr).zip(gr) {
                            *d = yv * (gv - s);
                        }
                    }
                    add_into(&mut adj, *x, dx);
                }
                Op::LogSoftmax(x) => {
                    let y = out(self);
                    let gs: f64 = g.iter().sum();
                    add_into(&mut adj, *x, g.iter().zip(&y).map(|(gv, l)| gv - l.exp() * gs).collect());
                }
                Op::LayerNorm { x, gain, bias, xhat, rstd } => {
                    let gv = self.value(*gain).values();
                    let n = gv.len();
                    let mut dx = vec![0.0; xhat.len()];
                    let mut dgain = vec![0.0; n];
                    let mut dbias = vec![0.0; n];
                    for (i, r) in rstd.iter().enumerate() {
                        let gr = &g[i * n..(i + 1) * n];
                        let hr = &xhat[i * n..(i + 1) * n];
                        let mut mean_dh = 0.0;
                        let mut mean_dh_h = 0.0;
                        for j in 0..n {
                            dgain[j] += gr[j] * hr[j];
                            dbias[j] += gr[j];
                            let dh = gr[j] * gv[j];
                            mean_dh += dh;
                            mean_dh_h += dh * hr[j];
                        }
                        mean_dh /= n as f64;
                        mean_dh_h /= n as f64;
                        for j in 0..n {
                            let dh = gr[j] * gv[j];
                            dx[i * n + j] = r * (dh - mean_dh - hr[j] * mean_dh_h);
                        }
                    }
                    add_into(&mut adj, *x, dx);
                    add_into(&mut adj, *gain, dgain);
                    add_into(&mut adj, *bias, dbias);
                }
                Op::Standardize { x, alpha, std } => {
                    if *std > 0.0 {
                        let y = out(self);
                        let n = y.len() as f64;
                        let z: Vec<f64> = y.iter().map(|v| v / alpha).collect();
                        let mean_g = g.iter().sum::<f64>() / n;
                        let mean_gz = g.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>() / n;
                        let k = alpha / std;
                        let dx = g.iter().zip(&z).map(|(gv, zv)| k * (gv - mean_g - zv * mean_gz)).collect();
                        add_into(&mut adj, *x, dx);
                    }
                }
                Op::Cosine { query, keys } => {
                    let tq = self.value(*query).values();
                    let tk = self.value(*keys);
                    let (m, n) = tk.dims2();
                    let c = out(self);
                    let qn = tq.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let mut dq = vec![0.0; n];
                    let mut dk = vec![0.0; m * n];
                    for i in 0..m {
                        let row = tk.row(i);
                        let kn = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                        for j in 0..n {
                            dq[j] += g[i] * (row[j] / (qn * kn) - c[i] * tq[j] / (qn * qn));
                            dk[i * n + j] = g[i] * (tq[j] / (qn * kn) - c[i] * row[j] / (kn * kn));
                        }
                    }
                    add_into(&mut adj, *query, dq);
                    add_into(&mut adj, *keys, dk);
                }
                Op::Transpose(x) => {
                    let (m, n) = self.value(*x).dims2();
                    let mut dx = vec![0.0; m * n];
                    for i in 0..m {
                        for j in 0..n {
                            dx[i * n + j] = g[j * m + i];
                        }
                    }
                    add_into(&mut adj, *x, dx);
                }
                Op::Reshape(x) => add_into(&mut adj, *x, g),
                Op::SliceCols { x, start } => {
                    let (m, n) = self.value(*x).dims2();
                    let len = g.len() / m;
                    let mut dx = vec![0.0; m * n];
                    for i in 0..m {
                        dx[i * n + start..i * n + start + len].copy_from_slice(&g[i * len..(i + 1) * len]);
                    }
                    add_into(&mut adj, *x, dx);
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let len = self.value(p).len();
                        add_into(&mut adj, p, g[offset..offset + len].to_vec());
                        offset += len;
                    }
                }
                Op::ConcatCols(parts) => {
                    let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).dims2().1).collect();
                    let total: usize = widths.iter().sum();
                    let m = g.len() / total;
                    let mut col = 0;
                    for (&p, &w) in parts.iter().zip(&widths) {
                        let mut dp = Vec::with_capacity(m * w);
                        for i in 0..m {
                            dp.extend_from_slice(&g[i * total + col..i * total + col + w]);
                        }
                        add_into(&mut adj, p, dp);
                        col += w;
                    }
                }
                Op::GatherRows { x, rows } => {
                    let (m, n) = self.value(*x).dims2();
                    let mut dx = vec![0.0; m * n];
                    for (k, &r) in rows.iter().enumerate() {
                        for j in 0..n {
                            dx[r * n + j] += g[k * n + j];
                        }
                    }
                    add_into(&mut adj, *x, dx);
                }
                Op::Pick { x, index } => {
                    let mut dx = vec![0.0; self.value(*x).len()];
                    dx[*index] = g[0];
                    add_into(&mut adj, *x, dx);
                }
                Op::Sum(x) => add_into(&mut adj, *x, vec![g[0]; self.value(*x).len()]),
                Op::Dot(a, b) => {
                    let (av, bv) = (self.value(*a).values(), self.value(*b).values());
                    add_into(&mut adj, *a, bv.iter().map(|v| v * g[0]).collect());
                    add_into(&mut adj, *b, av.iter().map(|v| v * g[0]).collect());
                }
            }
        }
        Ok(())
    }
}

fn add_into(adj: &mut [Option<Vec<f64>>], v: Var, g: Vec<f64>) {
    match &mut adj[v.0] {
        Some(acc) => {
            for (a, b) in acc.iter_mut().zip(&g) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(g),
    }
}
