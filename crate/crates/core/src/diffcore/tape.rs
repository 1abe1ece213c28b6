//! Define-by-run tape for reverse-mode differentiation over [`RealArray`]s.
//!
//! Nodes are appended in evaluation order, so the node list is already a
//! topological order. [`Tape::backward`] walks it in reverse exactly once,
//! which also fixes the order in which gradient contributions are summed.

use std::collections::HashMap;

use super::{Gradients, ParamStore, RealArray};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Shift(Var),
    Tanh(Var),
    Relu(Var),
    Sigmoid(Var),
    LogSigmoid(Var),
    Affine { x: Var, w: Var, b: Option<Var> },
    MatMul(Var, Var),
    Embed { table: Var, ids: Vec<usize> },
    LogSumExpRows(Var),
    SoftmaxCe { logits: Var, targets: Vec<usize> },
    Sum(Var),
    Mean(Var),
    Concat(Vec<Var>),
    SliceCols { x: Var, start: usize },
    RowDot(Var, Var),
    Select { x: Var, flat: Vec<usize> },
    WeightedSum { x: Var, weights: Vec<f64> },
    LogMatExp { alpha: Var, edge: Var },
    AddRow { x: Var, row: Var },
    Reshape(Var),
}

#[derive(Clone, Debug)]
struct Node {
    value: RealArray,
    op: Op,
}

/// Recording of one forward evaluation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<String, Var>,
    nonfinite: Option<&'static str>,
}

fn softmax_into(row: &[f64], out: &mut [f64]) -> f64 {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for (o, &v) in out.iter_mut().zip(row) {
        *o = (v - m).exp();
        s += *o;
    }
    for o in out.iter_mut() {
        *o /= s;
    }
    m + s.ln()
}

fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
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

    fn push(&mut self, value: RealArray, op: Op, name: &'static str) -> Var {
        if self.nonfinite.is_none() && !value.is_finite() {
            self.nonfinite = Some(name);
        }
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &RealArray {
        &self.nodes[v.0].value
    }

    /// Value of a single-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    fn dims2(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        self.value(v)
            .dims2()
            .ok_or_else(|| Error::shape(op, "expected at most two dimensions"))
    }

    /// Fails if any recorded value was non-finite.
    pub fn check_finite(&self) -> Result<()> {
        match self.nonfinite {
            Some(op) => Err(Error::NonFinite(op)),
            None => Ok(()),
        }
    }

    /// Records a constant or input. Non-finite inputs are rejected.
    pub fn input(&mut self, value: RealArray) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite("input"));
        }
        Ok(self.push(value, Op::Leaf, "input"))
    }

    pub fn constant(&mut self, value: RealArray) -> Result<Var> {
        self.input(value)
    }

    /// Leaf bound to a named parameter; repeated lookups share one node.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let value = store.value(name)?.clone();
        if !value.is_finite() {
            return Err(Error::NonFinite("param"));
        }
        let v = self.push(value, Op::Param, "param");
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    fn zip_map(&mut self, a: Var, b: Var, op: Op, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        self.same_shape(a, b, name)?;
        let data = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| f(x, y)).collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(RealArray::from_raw(shape, data), op, name))
    }

    fn map(&mut self, a: Var, op: Op, name: &'static str, f: impl Fn(f64) -> f64) -> Var {
        let data = self.data(a).iter().map(|&x| f(x)).collect();
        let shape = self.shape(a).to_vec();
        self.push(RealArray::from_raw(shape, data), op, name)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map(a, b, Op::Add(a, b), "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map(a, b, Op::Sub(a, b), "sub", |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map(a, b, Op::Mul(a, b), "mul", |x, y| x * y)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.map(a, Op::Scale(a, c), "scale", |x| c * x)
    }

    /// `a + c` elementwise.
    pub fn shift(&mut self, a: Var, c: f64) -> Var {
        self.map(a, Op::Shift(a), "shift", |x| x + c)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, Op::Tanh(a), "tanh", f64::tanh)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, Op::Relu(a), "relu", |x| x.max(0.0))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, Op::Sigmoid(a), "sigmoid", sigmoid)
    }

    /// `log σ(a)`, computed without overflow.
    pub fn log_sigmoid(&mut self, a: Var) -> Var {
        self.map(a, Op::LogSigmoid(a), "log_sigmoid", log_sigmoid)
    }

    /// `x Wᵀ + b` with `W: [out, in]`; `x` is `[in]` or `[n, in]`.
    pub fn affine(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (n, input) = self.dims2(x, "affine")?;
        let (out, win) = match self.shape(w) {
            [o, i] => (*o, *i),
            s => return Err(Error::shape("affine", format!("weight shape {s:?}"))),
        };
        if win != input || self.value(x).ndims() == 0 {
            return Err(Error::shape(
                "affine",
                format!("input {:?} vs weight {:?}", self.shape(x), self.shape(w)),
            ));
        }
        if let Some(b) = b {
            if self.shape(b) != [out] {
                return Err(Error::shape("affine", format!("bias {:?}", self.shape(b))));
            }
        }
        let xd = self.data(x);
        let wd = self.data(w);
        let mut data = vec![0.0; n * out];
        for r in 0..n {
            let xr = &xd[r * input..(r + 1) * input];
            for o in 0..out {
                let wr = &wd[o * input..(o + 1) * input];
                data[r * out + o] = xr.iter().zip(wr).map(|(a, b)| a * b).sum();
            }
        }
        if let Some(b) = b {
            let bd = self.data(b);
            for r in 0..n {
                for o in 0..out {
                    data[r * out + o] += bd[o];
                }
            }
        }
        let shape = if self.value(x).ndims() == 1 {
            vec![out]
        } else {
            vec![n, out]
        };
        Ok(self.push(RealArray::from_raw(shape, data), Op::Affine { x, w, b }, "affine"))
    }

    /// `[n, k] × [k, m] → [n, m]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, k) = match self.shape(a) {
            [n, k] => (*n, *k),
            s => return Err(Error::shape("matmul", format!("lhs {s:?}"))),
        };
        let m = match self.shape(b) {
            [k2, m] if *k2 == k => *m,
            s => return Err(Error::shape("matmul", format!("rhs {s:?}"))),
        };
        let ad = self.data(a);
        let bd = self.data(b);
        let mut data = vec![0.0; n * m];
        for i in 0..n {
            for t in 0..k {
                let av = ad[i * k + t];
                for j in 0..m {
                    data[i * m + j] += av * bd[t * m + j];
                }
            }
        }
        Ok(self.push(RealArray::from_raw(vec![n, m], data), Op::MatMul(a, b), "matmul"))
    }

    /// Rows `ids` of a `[V, E]` table, giving `[ids.len(), E]`.
    pub fn embed(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (v, e) = match self.shape(table) {
            [v, e] => (*v, *e),
            s => return Err(Error::shape("embed", format!("table {s:?}"))),
        };
        if ids.is_empty() {
            return Err(Error::Empty("embedding ids"));
        }
        let td = self.data(table);
        let mut data = Vec::with_capacity(ids.len() * e);
        for &id in ids {
            if id >= v {
                return Err(Error::OutOfRange {
                    what: "vocabulary",
                    index: id,
                    size: v,
                });
            }
            data.extend_from_slice(&td[id * e..(id + 1) * e]);
        }
        Ok(self.push(
            RealArray::from_raw(vec![ids.len(), e], data),
            Op::Embed {
                table,
                ids: ids.to_vec(),
            },
            "embed",
        ))
    }

    /// Row-wise log-sum-exp: `[n, k] → [n]`, `[k] → []`.
    pub fn logsumexp_rows(&mut self, a: Var) -> Result<Var> {
        let (n, k) = self.dims2(a, "logsumexp")?;
        let mut buf = vec![0.0; k];
        let d = self.data(a);
        let data: Vec<f64> = (0..n).map(|r| softmax_into(&d[r * k..(r + 1) * k], &mut buf)).collect();
        let shape = if self.value(a).ndims() == 2 { vec![n] } else { vec![] };
        Ok(self.push(RealArray::from_raw(shape, data), Op::LogSumExpRows(a), "logsumexp"))
    }

    /// Mean softmax cross-entropy of `[n, k]` logits against `n` targets.
    pub fn softmax_ce(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (n, k) = self.dims2(logits, "softmax_ce")?;
        if targets.len() != n {
            return Err(Error::shape(
                "softmax_ce",
                format!("{} targets for {n} rows", targets.len()),
            ));
        }
        let d = self.data(logits);
        let mut buf = vec![0.0; k];
        let mut total = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            if t >= k {
                return Err(Error::OutOfRange {
                    what: "classes",
                    index: t,
                    size: k,
                });
            }
            let row = &d[r * k..(r + 1) * k];
            total += softmax_into(row, &mut buf) - row[t];
        }
        Ok(self.push(
            RealArray::scalar(total / n as f64),
            Op::SoftmaxCe {
                logits,
                targets: targets.to_vec(),
            },
            "softmax_ce",
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.data(a).iter().sum();
        self.push(RealArray::scalar(s), Op::Sum(a), "sum")
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let d = self.data(a);
        let s = d.iter().sum::<f64>() / d.len() as f64;
        self.push(RealArray::scalar(s), Op::Mean(a), "mean")
    }

    /// Concatenation along the last axis. Vectors concatenate end to end;
    /// matrices must agree on row count. Scalars count as length-1 vectors.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(Error::Empty("concat parts"))?;
        let matrix = self.value(first).ndims() == 2;
        let rows = self.dims2(first, "concat")?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (n, k) = self.dims2(p, "concat")?;
            if (self.value(p).ndims() == 2) != matrix || n != rows {
                return Err(Error::shape("concat", "incompatible parts"));
            }
            widths.push(k);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &k) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.data(p)[r * k..(r + 1) * k]);
            }
        }
        let shape = if matrix { vec![rows, total] } else { vec![total] };
        Ok(self.push(RealArray::from_raw(shape, data), Op::Concat(parts.to_vec()), "concat"))
    }

    /// Columns `start..start+len` along the last axis.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (n, k) = self.dims2(x, "slice")?;
        if len == 0 || start + len > k || self.value(x).ndims() == 0 {
            return Err(Error::shape("slice", format!("{start}+{len} of {k}")));
        }
        let d = self.data(x);
        let mut data = Vec::with_capacity(n * len);
        for r in 0..n {
            data.extend_from_slice(&d[r * k + start..r * k + start + len]);
        }
        let shape = if self.value(x).ndims() == 2 {
            vec![n, len]
        } else {
            vec![len]
        };
        Ok(self.push(RealArray::from_raw(shape, data), Op::SliceCols { x, start }, "slice"))
    }

    /// Row-wise dot product: `[n, d] · [n, d] → [n]`, `[d] · [d] → []`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "row_dot")?;
        let (n, k) = self.dims2(a, "row_dot")?;
        let (ad, bd) = (self.data(a), self.data(b));
        let data = (0..n)
            .map(|r| {
                ad[r * k..(r + 1) * k]
                    .iter()
                    .zip(&bd[r * k..(r + 1) * k])
                    .map(|(x, y)| x * y)
                    .sum()
            })
            .collect();
        let shape = if self.value(a).ndims() == 2 { vec![n] } else { vec![] };
        Ok(self.push(RealArray::from_raw(shape, data), Op::RowDot(a, b), "row_dot"))
    }

    /// Elements at the given flat indices, as a vector.
    pub fn select(&mut self, x: Var, flat: &[usize]) -> Result<Var> {
        if flat.is_empty() {
            return Err(Error::Empty("selection"));
        }
        let d = self.data(x);
        let mut data = Vec::with_capacity(flat.len());
        for &i in flat {
            data.push(*d.get(i).ok_or(Error::OutOfRange {
                what: "select",
                index: i,
                size: d.len(),
            })?);
        }
        Ok(self.push(
            RealArray::from_raw(vec![flat.len()], data),
            Op::Select { x, flat: flat.to_vec() },
            "select",
        ))
    }

    /// One entry per row of a `[n, k]` matrix: `out[r] = x[r, cols[r]]`.
    pub fn pick(&mut self, x: Var, cols: &[usize]) -> Result<Var> {
        let (n, k) = self.dims2(x, "pick")?;
        if cols.len() != n {
            return Err(Error::shape("pick", format!("{} indices for {n} rows", cols.len())));
        }
        let mut flat = Vec::with_capacity(n);
        for (r, &c) in cols.iter().enumerate() {
            if c >= k {
                return Err(Error::OutOfRange {
                    what: "pick",
                    index: c,
                    size: k,
                });
            }
            flat.push(r * k + c);
        }
        self.select(x, &flat)
    }

    /// `Σ_i w_i x_i` over all elements with constant weights.
    pub fn weighted_sum(&mut self, x: Var, weights: &[f64]) -> Result<Var> {
        let d = self.data(x);
        if d.len() != weights.len() {
            return Err(Error::shape(
                "weighted_sum",
                format!("{} weights for {} values", weights.len(), d.len()),
            ));
        }
        let s = d.iter().zip(weights).map(|(a, b)| a * b).sum();
        Ok(self.push(
            RealArray::scalar(s),
            Op::WeightedSum {
                x,
                weights: weights.to_vec(),
            },
            "weighted_sum",
        ))
    }

    /// `out[b, k] = log Σ_j exp(alpha[b, j] + edge[j, k])`.
    pub fn log_mat_exp(&mut self, alpha: Var, edge: Var) -> Result<Var> {
        let (n, k) = self.dims2(alpha, "log_mat_exp")?;
        if self.shape(edge) != [k, k] {
            return Err(Error::shape(
                "log_mat_exp",
                format!("edge {:?} for {k} labels", self.shape(edge)),
            ));
        }
        let (ad, ed) = (self.data(alpha), self.data(edge));
        let mut data = vec![0.0; n * k];
        let mut col = vec![0.0; k];
        let mut buf = vec![0.0; k];
        for b in 0..n {
            for kk in 0..k {
                for j in 0..k {
                    col[j] = ad[b * k + j] + ed[j * k + kk];
                }
                data[b * k + kk] = softmax_into(&col, &mut buf);
            }
        }
        let shape = self.shape(alpha).to_vec();
        Ok(self.push(
            RealArray::from_raw(shape, data),
            Op::LogMatExp { alpha, edge },
            "log_mat_exp",
        ))
    }

    /// Adds a `[k]` row to every row of a `[n, k]` matrix.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (n, k) = self.dims2(x, "add_row")?;
        if self.shape(row) != [k] {
            return Err(Error::shape("add_row", format!("row {:?}", self.shape(row))));
        }
        let (xd, rd) = (self.data(x), self.data(row));
        let data = (0..n * k).map(|i| xd[i] + rd[i % k]).collect();
        let shape = self.shape(x).to_vec();
        Ok(self.push(RealArray::from_raw(shape, data), Op::AddRow { x, row }, "add_row"))
    }

    /// Same data under a new shape with equal element count.
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != self.value(x).len() || shape.contains(&0) {
            return Err(Error::shape("reshape", format!("{:?} to {shape:?}", self.shape(x))));
        }
        let data = self.data(x).to_vec();
        Ok(self.push(RealArray::from_raw(shape.to_vec(), data), Op::Reshape(x), "reshape"))
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(&self, out: Var) -> Result<Backward<'_>> {
        self.check_finite()?;
        let ov = self.value(out);
        if ov.len() != 1 {
            return Err(Error::NonScalar(ov.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; out.0 + 1];
        grads[out.0] = Some(vec![1.0]);

        fn slot<'a>(grads: &'a mut [Option<Vec<f64>>], v: Var, len: usize) -> &'a mut Vec<f64> {
            grads[v.0].get_or_insert_with(|| vec![0.0; len])
        }

        for idx in (0..=out.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let y = node.value.data();
            match &node.op {
                Op::Leaf | Op::Param => {}
                Op::Add(a, b) => {
                    for (s, gi) in slot(&mut grads, *a, g.len()).iter_mut().zip(&g) {
                        *s += gi;
                    }
                    for (s, gi) in slot(&mut grads, *b, g.len()).iter_mut().zip(&g) {
                        *s += gi;
                    }
                }
                Op::Sub(a, b) => {
                    for (s, gi) in slot(&mut grads, *a, g.len()).iter_mut().zip(&g) {
                        *s += gi;
                    }
                    for (s, gi) in slot(&mut grads, *b, g.len()).iter_mut().zip(&g) {
                        *s -= gi;
                    }
                }
                Op::Mul(a, b) => {
                    let (ad, bd) = (self.data(*a), self.data(*b));
                    let ga = slot(&mut grads, *a, g.len());
                    for i in 0..g.len() {
                        ga[i] += g[i] * bd[i];
                    }
                    let gb = slot(&mut grads, *b, g.len());
                    for i in 0..g.len() {
                        gb[i] += g[i] * ad[i];
                    }
                }
                Op::Scale(a, c) => {
                    for (s, gi) in slot(&mut grads, *a, g.len()).iter_mut().zip(&g) {
                        *s += c * gi;
                    }
                }
                Op::Shift(a) => {
                    for (s, gi) in slot(&mut grads, *a, g.len()).iter_mut().zip(&g) {
                        *s += gi;
                    }
                }
                Op::Tanh(a) => {
                    let ga = slot(&mut grads, *a, g.len());
                    for i in 0..g.len() {
                        ga[i] += g[i] * (1.0 - y[i] * y[i]);
                    }
                }
                Op::Relu(a) => {
                    let ad = self.data(*a);
                    let ga = slot(&mut grads, *a, g.len());
                    for i in 0..g.len() {
                        if ad[i] > 0.0 {
                            ga[i] += g[i];
                        }
                    }
                }
                Op::Sigmoid(a) => {
                    let ga = slot(&mut grads, *a, g.len());
                    for i in 0..g.len() {
                        ga[i] += g[i] * y[i] * (1.0 - y[i]);
                    }
                }
                Op::LogSigmoid(a) => {
                    let ad = self.data(*a);
                    let ga = slot(&mut grads, *a, g.len());
                    for i in 0..g.len() {
                        ga[i] += g[i] * sigmoid(-ad[i]);
                    }
                }
                Op::Affine { x, w, b } => {
                    let (n, input) = self.value(*x).dims2().unwrap();
                    let out_dim = self.shape(*w)[0];
                    let (xd, wd) = (self.data(*x), self.data(*w));
                    let gx = slot(&mut grads, *x, n * input);
                    for r in 0..n {
                        for o in 0..out_dim {
                            let go = g[r * out_dim + o];
                            if go == 0.0 {
                                continue;
                            }
                            let wr = &wd[o * input..(o + 1) * input];
                            let gxr = &mut gx[r * input..(r + 1) * input];
                            for (s, wv) in gxr.iter_mut().zip(wr) {
                                *s += go * wv;
                            }
                        }
                    }
                    let gw = slot(&mut grads, *w, out_dim * input);
                    for r in 0..n {
                        let xr = &xd[r * input..(r + 1) * input];
                        for o in 0..out_dim {
                            let go = g[r * out_dim + o];
                            if go == 0.0 {
                                continue;
                            }
                            let gwr = &mut gw[o * input..(o + 1) * input];
                            for (s, xv) in gwr.iter_mut().zip(xr) {
                                *s += go * xv;
                            }
                        }
                    }
                    if let Some(b) = b {
                        let gb = slot(&mut grads, *b, out_dim);
                        for r in 0..n {
                            for o in 0..out_dim {
                                gb[o] += g[r * out_dim + o];
                            }
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    let (n, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                    let m = self.shape(*b)[1];
                    let (ad, bd) = (self.data(*a), self.data(*b));
                    let ga = slot(&mut grads, *a, n * k);
                    for i in 0..n {
                        for t in 0..k {
                            let mut s = 0.0;
                            for j in 0..m {
                                s += g[i * m + j] * bd[t * m + j];
                            }
                            ga[i * k + t] += s;
                        }
                    }
                    let gb = slot(&mut grads, *b, k * m);
                    for i in 0..n {
                        for t in 0..k {
                            let av = ad[i * k + t];
                            for j in 0..m {
                                gb[t * m + j] += av * g[i * m + j];
                            }
                        }
                    }
                }
                Op::Embed { table, ids } => {
                    let e = self.shape(*table)[1];
                    let len = self.value(*table).len();
                    let gt = slot(&mut grads, *table, len);
                    for (r, &id) in ids.iter().enumerate() {
                        for c in 0..e {
                            gt[id * e + c] += g[r * e + c];
                        }
                    }
                }
                Op::LogSumExpRows(a) => {
                    let (n, k) = self.value(*a).dims2().unwrap();
                    let ad = self.data(*a);
                    let ga = slot(&mut grads, *a, n * k);
                    for r in 0..n {
                        for j in 0..k {
                            ga[r * k + j] += g[r] * (ad[r * k + j] - y[r]).exp();
                        }
                    }
                }
                Op::SoftmaxCe { logits, targets } => {
                    let (n, k) = self.value(*logits).dims2().unwrap();
                    let ld = self.data(*logits);
                    let mut p = vec![0.0; k];
                    let gl = slot(&mut grads, *logits, n * k);
                    let scale = g[0] / n as f64;
                    for (r, &t) in targets.iter().enumerate() {
                        softmax_into(&ld[r * k..(r + 1) * k], &mut p);
                        p[t] -= 1.0;
                        for j in 0..k {
                            gl[r * k + j] += scale * p[j];
                        }
                    }
                }
                Op::Sum(a) => {
                    let len = self.value(*a).len();
                    slot(&mut grads, *a, len).iter_mut().for_each(|s| *s += g[0]);
                }
                Op::Mean(a) => {
                    let len = self.value(*a).len();
                    let c = g[0] / len as f64;
                    slot(&mut grads, *a, len).iter_mut().for_each(|s| *s += c);
                }
                Op::Concat(parts) => {
                    let rows = self.value(parts[0]).dims2().unwrap().0;
                    let total = g.len() / rows;
                    let mut offset = 0;
                    for &p in parts {
                        let (_, k) = self.value(p).dims2().unwrap();
                        let gp = slot(&mut grads, p, rows * k);
                        for r in 0..rows {
                            for c in 0..k {
                                gp[r * k + c] += g[r * total + offset + c];
                            }
                        }
                        offset += k;
                    }
                }
                Op::SliceCols { x, start } => {
                    let (n, k) = self.value(*x).dims2().unwrap();
                    let len = g.len() / n;
                    let gx = slot(&mut grads, *x, n * k);
                    for r in 0..n {
                        for c in 0..len {
                            gx[r * k + start + c] += g[r * len + c];
                        }
                    }
                }
                Op::RowDot(a, b) => {
                    let (n, k) = self.value(*a).dims2().unwrap();
                    let (ad, bd) = (self.data(*a), self.data(*b));
                    let ga = slot(&mut grads, *a, n * k);
                    for r in 0..n {
                        for c in 0..k {
                            ga[r * k + c] += g[r] * bd[r * k + c];
                        }
                    }
                    let gb = slot(&mut grads, *b, n * k);
                    for r in 0..n {
                        for c in 0..k {
                            gb[r * k + c] += g[r] * ad[r * k + c];
                        }
                    }
                }
                Op::Select { x, flat } => {
                    let len = self.value(*x).len();
                    let gx = slot(&mut grads, *x, len);
                    for (gi, &i) in g.iter().zip(flat) {
                        gx[i] += gi;
                    }
                }
                Op::WeightedSum { x, weights } => {
                    let gx = slot(&mut grads, *x, weights.len());
                    for (s, w) in gx.iter_mut().zip(weights) {
                        *s += g[0] * w;
                    }
                }
                Op::LogMatExp { alpha, edge } => {
                    let (n, k) = self.value(*alpha).dims2().unwrap();
                    let (ad, ed) = (self.data(*alpha), self.data(*edge));
                    let mut wts = vec![0.0; n * k * k];
                    for b in 0..n {
                        for kk in 0..k {
                            let go = g[b * k + kk];
                            let yo = y[b * k + kk];
                            for j in 0..k {
                                wts[(b * k + j) * k + kk] = go * (ad[b * k + j] + ed[j * k + kk] - yo).exp();
                            }
                        }
                    }
                    let ga = slot(&mut grads, *alpha, n * k);
                    for b in 0..n {
                        for j in 0..k {
                            ga[b * k + j] += wts[(b * k + j) * k..(b * k + j + 1) * k].iter().sum::<f64>();
                        }
                    }
                    let ge = slot(&mut grads, *edge, k * k);
                    for b in 0..n {
                        for j in 0..k {
                            for kk in 0..k {
                                ge[j * k + kk] += wts[(b * k + j) * k + kk];
                            }
                        }
                    }
                }
                Op::AddRow { x, row } => {
                    let k = self.shape(*row)[0];
                    for (s, gi) in slot(&mut grads, *x, g.len()).iter_mut().zip(&g) {
                        *s += gi;
                    }
                    let gr = slot(&mut grads, *row, k);
                    for (i, gi) in g.iter().enumerate() {
                        gr[i % k] += gi;
                    }
                }
                Op::Reshape(x) => {
                    for (s, gi) in slot(&mut grads, *x, g.len()).iter_mut().zip(&g) {
                        *s += gi;
                    }
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Backward { grads, tape: self })
    }
}

/// Gradients of one scalar with respect to every node upstream of it.
pub struct Backward<'t> {
    grads: Vec<Option<Vec<f64>>>,
    tape: &'t Tape,
}

impl Backward<'_> {
    /// Gradient with respect to a node, or zeros if it does not influence the output.
    pub fn wrt(&self, v: Var) -> RealArray {
        let shape = self.tape.shape(v).to_vec();
        match self.grads.get(v.0).and_then(|g| g.as_ref()) {
            Some(g) => RealArray::from_raw(shape, g.clone()),
            None => RealArray::zeros(&shape),
        }
    }

    /// Gradients of every parameter leaf on the tape, zeros for unused ones.
    pub fn params(&self) -> Gradients {
        let mut out = Gradients::default();
        let mut entries: Vec<_> = self.tape.params.iter().collect();
        entries.sort_by(|a, b| a.0.cmp(b.0));
        for (name, &v) in entries {
            out.insert(name.clone(), self.wrt(v));
        }
        out
    }
}
