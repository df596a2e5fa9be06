//! Minimal reverse-mode automatic differentiation over dense row-major
//! matrices of `f64`.
//!
//! A [`Graph`] records operations on [`Var`] handles; [`Graph::backward`]
//! walks the tape once in reverse and returns gradients for every parameter
//! in the [`ParamStore`] the graph was built against.

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Tensor { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "tensor shape mismatch");
        Tensor { rows, cols, data }
    }

    pub fn row_vector(data: Vec<f64>) -> Self {
        Tensor { rows: 1, cols: data.len(), data }
    }

    /// Uniform initialization in `[-limit, limit]` with the Glorot limit.
    pub fn glorot<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.gen_range(-limit..=limit)).collect();
        Tensor { rows, cols, data }
    }

    pub fn uniform<R: Rng>(rows: usize, cols: usize, limit: f64, rng: &mut R) -> Self {
        let data = (0..rows * cols).map(|_| rng.gen_range(-limit..=limit)).collect();
        Tensor { rows, cols, data }
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
}

/// Named, ordered collection of trainable tensors.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.params.push(Param { name: name.into(), value });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zeros_like(&self) -> Vec<Tensor> {
        self.params.iter().map(|p| Tensor::zeros(p.value.rows, p.value.cols)).collect()
    }

    pub fn fill(&mut self, value: f64) {
        for p in &mut self.params {
            p.value.data.iter_mut().for_each(|x| *x = value);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Const,
    Param(ParamId),
    Lookup { param: ParamId, rows: Vec<usize> },
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    AddCol(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols { input: Var, start: usize },
    GatherRows { input: Var, rows: Vec<usize> },
    Reshape(Var),
    MaxOverRows { input: Var, argmax: Vec<usize> },
    SpanAttention { scores: Var, values: Var, spans: Vec<(usize, usize)>, weights: Vec<Vec<f64>> },
    LogSoftmaxRows(Var),
    Scatter { src: Var, positions: Vec<(usize, usize)> },
    Pick { input: Var, positions: Vec<(usize, usize)> },
    LogSumExpSelect { input: Var, selections: Vec<(usize, Vec<usize>)> },
    Sum(Var),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// A tape of operations over the parameters of one [`ParamStore`].
pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

fn logsumexp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Graph { params, nodes: Vec::new() }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let t = self.value(v);
        assert_eq!(t.len(), 1, "not a scalar");
        t.data[0]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).shape()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Const)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        let value = self.params.get(id).clone();
        self.push(value, Op::Param(id))
    }

    /// Rows of a parameter table, without materializing the whole table.
    pub fn lookup(&mut self, id: ParamId, rows: &[usize]) -> Var {
        let table = self.params.get(id);
        let mut data = Vec::with_capacity(rows.len() * table.cols);
        for &r in rows {
            data.extend_from_slice(table.row(r));
        }
        let value = Tensor::from_vec(rows.len(), table.cols, data);
        self.push(value, Op::Lookup { param: id, rows: rows.to_vec() })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.cols, y.rows, "matmul shape mismatch {:?} x {:?}", x.shape(), y.shape());
        let mut out = Tensor::zeros(x.rows, y.cols);
        for i in 0..x.rows {
            let orow = &mut out.data[i * y.cols..(i + 1) * y.cols];
            for k in 0..x.cols {
                let xv = x.data[i * x.cols + k];
                if xv == 0.0 {
                    continue;
                }
                let yrow = &y.data[k * y.cols..(k + 1) * y.cols];
                for (o, yv) in orow.iter_mut().zip(yrow) {
                    *o += xv * yv;
                }
            }
        }
        self.push(out, Op::MatMul(a, b))
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape(), y.shape(), "elementwise shape mismatch");
        let data = x.data.iter().zip(&y.data).map(|(&p, &q)| f(p, q)).collect();
        let out = Tensor::from_vec(x.rows, x.cols, data);
        self.push(out, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |p, q| p + q, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |p, q| p * q, Op::Mul(a, b))
    }

    /// Adds a `1 x c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (x, r) = (self.value(a), self.value(row));
        assert_eq!((1, x.cols), r.shape(), "add_row shape mismatch");
        let mut out = x.clone();
        for chunk in out.data.chunks_mut(x.cols.max(1)) {
            for (o, b) in chunk.iter_mut().zip(&r.data) {
                *o += b;
            }
        }
        self.push(out, Op::AddRow(a, row))
    }

    /// Adds an `r x 1` column to every column of `a`.
    pub fn add_col(&mut self, a: Var, col: Var) -> Var {
        let (x, c) = (self.value(a), self.value(col));
        assert_eq!((x.rows, 1), c.shape(), "add_col shape mismatch");
        let mut out = x.clone();
        for i in 0..x.rows {
            for o in &mut out.data[i * x.cols..(i + 1) * x.cols] {
                *o += c.data[i];
            }
        }
        self.push(out, Op::AddCol(a, col))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let mut out = self.value(a).clone();
        out.data.iter_mut().for_each(|x| *x *= k);
        self.push(out, Op::Scale(a, k))
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let mut out = self.value(a).clone();
        out.data.iter_mut().for_each(|x| *x = f(*x));
        self.push(out, op)
    }

    /// Which side of every non-differentiable point the tape is on: the sign
    /// of each ReLU input and each max-pool argmax. Two evaluations with the
    /// same pattern lie in the same smooth piece of the function.
    pub fn activation_pattern(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu(a) => out.extend(self.value(*a).data.iter().map(|&x| usize::from(x > 0.0))),
                Op::MaxOverRows { argmax, .. } => out.extend(argmax),
                _ => {}
            }
        }
        out
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, |x| if x > 0.0 { x } else { 0.0 }, Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, |x| 1.0 / (1.0 + (-x).exp()), Op::Sigmoid(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut out = Tensor::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let t = self.value(p);
            assert_eq!(t.rows, rows, "concat_cols row mismatch");
            for i in 0..rows {
                out.data[i * cols + offset..i * cols + offset + t.cols].copy_from_slice(t.row(i));
            }
            offset += t.cols;
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            assert_eq!(t.cols, cols, "concat_rows column mismatch");
            data.extend_from_slice(&t.data);
            rows += t.rows;
        }
        self.push(Tensor::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let x = self.value(a);
        assert!(start + len <= x.cols, "slice_cols out of range");
        let mut data = Vec::with_capacity(x.rows * len);
        for i in 0..x.rows {
            data.extend_from_slice(&x.row(i)[start..start + len]);
        }
        let out = Tensor::from_vec(x.rows, len, data);
        self.push(out, Op::SliceCols { input: a, start })
    }

    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Var {
        let x = self.value(a);
        let mut data = Vec::with_capacity(rows.len() * x.cols);
        for &r in rows {
            data.extend_from_slice(x.row(r));
        }
        let out = Tensor::from_vec(rows.len(), x.cols, data);
        self.push(out, Op::GatherRows { input: a, rows: rows.to_vec() })
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let x = self.value(a);
        let out = Tensor::from_vec(rows, cols, x.data.clone());
        self.push(out, Op::Reshape(a))
    }

    /// Column-wise maximum, giving a `1 x cols` row.
    pub fn max_over_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        assert!(x.rows > 0, "max over zero rows");
        let mut argmax = vec![0; x.cols];
        let mut out = Tensor::row_vector(x.row(0).to_vec());
        for i in 1..x.rows {
            for (c, (best, arg)) in out.data.iter_mut().zip(argmax.iter_mut()).enumerate() {
                let v = x.get(i, c);
                if v > *best {
                    *best = v;
                    *arg = i;
                }
            }
        }
        self.push(out, Op::MaxOverRows { input: a, argmax })
    }

    /// For each inclusive row range `(start, end)`, the softmax-weighted sum of
    /// `values` rows using the `scores` column (`T x 1`) restricted to the range.
    pub fn span_attention(&mut self, scores: Var, values: Var, spans: &[(usize, usize)]) -> Var {
        let (s, v) = (self.value(scores), self.value(values));
        assert_eq!(s.cols, 1, "attention scores must be a column");
        assert_eq!(s.rows, v.rows, "attention score/value length mismatch");
        let mut out = Tensor::zeros(spans.len(), v.cols);
        let mut weights = Vec::with_capacity(spans.len());
        for (k, &(a, b)) in spans.iter().enumerate() {
            let lse = logsumexp((a..=b).map(|t| s.data[t]));
            let w: Vec<f64> = (a..=b).map(|t| (s.data[t] - lse).exp()).collect();
            let orow = &mut out.data[k * v.cols..(k + 1) * v.cols];
            for (t, wt) in (a..=b).zip(&w) {
                for (o, x) in orow.iter_mut().zip(v.row(t)) {
                    *o += wt * x;
                }
            }
            weights.push(w);
        }
        self.push(out, Op::SpanAttention { scores, values, spans: spans.to_vec(), weights })
    }

    /// Attention weights computed by a [`span_attention`](Self::span_attention) node.
    pub fn attention_weights(&self, v: Var) -> Option<&[Vec<f64>]> {
        match &self.nodes[v.0].op {
            Op::SpanAttention { weights, .. } => Some(weights),
            _ => None,
        }
    }

    /// Row-wise log-softmax. Entries equal to `-inf` get probability zero.
    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        let cols = out.cols;
        for chunk in out.data.chunks_mut(cols.max(1)) {
            let lse = logsumexp(chunk.iter().copied());
            chunk.iter_mut().for_each(|x| *x -= lse);
        }
        self.push(out, Op::LogSoftmaxRows(a))
    }

    /// Copies `base` and overwrites `positions[k]` with the k-th element of `src`.
    pub fn scatter(&mut self, base: Tensor, src: Var, positions: &[(usize, usize)]) -> Var {
        let s = self.value(src);
        assert_eq!(s.len(), positions.len(), "scatter source length mismatch");
        let mut out = base;
        for (k, &(r, c)) in positions.iter().enumerate() {
            out.data[r * out.cols + c] = s.data[k];
        }
        self.push(out, Op::Scatter { src, positions: positions.to_vec() })
    }

    /// Elements at `positions`, as a column.
    pub fn pick(&mut self, a: Var, positions: &[(usize, usize)]) -> Var {
        let x = self.value(a);
        let data = positions.iter().map(|&(r, c)| x.get(r, c)).collect::<Vec<_>>();
        let out = Tensor::from_vec(positions.len(), 1, data);
        self.push(out, Op::Pick { input: a, positions: positions.to_vec() })
    }

    /// For each `(row, cols)`, `log(sum(exp(a[row, c]) for c in cols))`, as a column.
    pub fn log_sum_exp_select(&mut self, a: Var, selections: &[(usize, Vec<usize>)]) -> Var {
        let x = self.value(a);
        let data = selections
            .iter()
            .map(|(r, cs)| logsumexp(cs.iter().map(|&c| x.get(*r, c))))
            .collect::<Vec<_>>();
        let out = Tensor::from_vec(selections.len(), 1, data);
        self.push(out, Op::LogSumExpSelect { input: a, selections: selections.to_vec() })
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().sum();
        self.push(Tensor::from_vec(1, 1, vec![s]), Op::Sum(a))
    }

    /// Gradients of the scalar `output` with respect to every parameter.
    pub fn backward(&self, output: Var) -> Vec<Tensor> {
        let mut param_grads = self.params.zeros_like();
        assert_eq!(self.value(output).len(), 1, "backward needs a scalar output");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Tensor::filled(1, 1, 1.0));

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let acc = |v: Var, t: Tensor, grads: &mut Vec<Option<Tensor>>| match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&t),
                slot @ None => *slot = Some(t),
            };
            match &node.op {
                Op::Const => {}
                Op::Param(id) => param_grads[id.0].add_assign(&g),
                Op::Lookup { param, rows } => {
                    let pg = &mut param_grads[param.0];
                    for (k, &r) in rows.iter().enumerate() {
                        for (p, x) in pg.data[r * pg.cols..(r + 1) * pg.cols].iter_mut().zip(g.row(k)) {
                            *p += x;
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    let (x, y) = (self.value(*a), self.value(*b));
                    let mut ga = Tensor::zeros(x.rows, x.cols);
                    let mut gb = Tensor::zeros(y.rows, y.cols);
                    for i in 0..x.rows {
                        let grow = g.row(i);
                        for k in 0..x.cols {
                            let yrow = y.row(k);
                            let mut s = 0.0;
                            for (gv, yv) in grow.iter().zip(yrow) {
                                s += gv * yv;
                            }
                            ga.data[i * x.cols + k] = s;
                            let xv = x.data[i * x.cols + k];
                            if xv != 0.0 {
                                for (o, gv) in gb.data[k * y.cols..(k + 1) * y.cols].iter_mut().zip(grow) {
                                    *o += xv * gv;
                                }
                            }
                        }
                    }
                    acc(*a, ga, &mut grads);
                    acc(*b, gb, &mut grads);
                }
                Op::Add(a, b) => {
                    acc(*a, g.clone(), &mut grads);
                    acc(*b, g, &mut grads);
                }
                Op::AddRow(a, row) => {
                    let mut gr = Tensor::zeros(1, g.cols);
                    for chunk in g.data.chunks(g.cols.max(1)) {
                        for (o, x) in gr.data.iter_mut().zip(chunk) {
                            *o += x;
                        }
                    }
                    acc(*row, gr, &mut grads);
                    acc(*a, g, &mut grads);
                }
                Op::AddCol(a, col) => {
                    let gc = (0..g.rows).map(|i| g.row(i).iter().sum()).collect();
                    acc(*col, Tensor::from_vec(g.rows, 1, gc), &mut grads);
                    acc(*a, g, &mut grads);
                }
                Op::Mul(a, b) => {
                    let (x, y) = (self.value(*a), self.value(*b));
                    let ga = g.data.iter().zip(&y.data).map(|(p, q)| p * q).collect();
                    let gb = g.data.iter().zip(&x.data).map(|(p, q)| p * q).collect();
                    acc(*a, Tensor::from_vec(g.rows, g.cols, ga), &mut grads);
                    acc(*b, Tensor::from_vec(g.rows, g.cols, gb), &mut grads);
                }
                Op::Scale(a, k) => {
                    let mut ga = g;
                    ga.data.iter_mut().for_each(|x| *x *= k);
                    acc(*a, ga, &mut grads);
                }
                Op::Relu(a) => {
                    let x = self.value(*a);
                    let mut ga = g;
                    for (o, &xv) in ga.data.iter_mut().zip(&x.data) {
                        if xv <= 0.0 {
                            *o = 0.0;
                        }
                    }
                    acc(*a, ga, &mut grads);
                }
                Op::Tanh(a) => {
                    let mut ga = g;
                    for (o, y) in ga.data.iter_mut().zip(&node.value.data) {
                        *o *= 1.0 - y * y;
                    }
                    acc(*a, ga, &mut grads);
                }
                Op::Sigmoid(a) => {
                    let mut ga = g;
                    for (o, y) in ga.data.iter_mut().zip(&node.value.data) {
                        *o *= y * (1.0 - y);
                    }
                    acc(*a, ga, &mut grads);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let cols = self.value(p).cols;
                        let mut data = Vec::with_capacity(g.rows * cols);
                        for i in 0..g.rows {
                            data.extend_from_slice(&g.row(i)[offset..offset + cols]);
                        }
                        acc(p, Tensor::from_vec(g.rows, cols, data), &mut grads);
                        offset += cols;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let rows = self.value(p).rows;
                        let data = g.data[offset * g.cols..(offset + rows) * g.cols].to_vec();
                        acc(p, Tensor::from_vec(rows, g.cols, data), &mut grads);
                        offset += rows;
                    }
                }
                Op::SliceCols { input, start } => {
                    let x = self.value(*input);
                    let mut ga = Tensor::zeros(x.rows, x.cols);
                    for i in 0..x.rows {
                        ga.data[i * x.cols + start..i * x.cols + start + g.cols].copy_from_slice(g.row(i));
                    }
                    acc(*input, ga, &mut grads);
                }
                Op::GatherRows { input, rows } => {
                    let x = self.value(*input);
                    let mut ga = Tensor::zeros(x.rows, x.cols);
                    for (k, &r) in rows.iter().enumerate() {
                        for (o, v) in ga.data[r * x.cols..(r + 1) * x.cols].iter_mut().zip(g.row(k)) {
                            *o += v;
                        }
                    }
                    acc(*input, ga, &mut grads);
                }
                Op::Reshape(a) => {
                    let x = self.value(*a);
                    acc(*a, Tensor::from_vec(x.rows, x.cols, g.data), &mut grads);
                }
                Op::MaxOverRows { input, argmax } => {
                    let x = self.value(*input);
                    let mut ga = Tensor::zeros(x.rows, x.cols);
                    for (c, &r) in argmax.iter().enumerate() {
                        ga.data[r * x.cols + c] += g.data[c];
                    }
                    acc(*input, ga, &mut grads);
                }
                Op::SpanAttention { scores, values, spans, weights } => {
                    let v = self.value(*values);
                    let mut gs = Tensor::zeros(v.rows, 1);
                    let mut gv = Tensor::zeros(v.rows, v.cols);
                    for (k, (&(a, b), w)) in spans.iter().zip(weights).enumerate() {
                        let grow = g.row(k);
                        let out_row = node.value.row(k);
                        let go_dot_out: f64 = grow.iter().zip(out_row).map(|(p, q)| p * q).sum();
                        for (t, wt) in (a..=b).zip(w) {
                            let go_dot_v: f64 = grow.iter().zip(v.row(t)).map(|(p, q)| p * q).sum();
                            gs.data[t] += wt * (go_dot_v - go_dot_out);
                            for (o, gg) in gv.data[t * v.cols..(t + 1) * v.cols].iter_mut().zip(grow) {
                                *o += wt * gg;
                            }
                        }
                    }
                    acc(*scores, gs, &mut grads);
                    acc(*values, gv, &mut grads);
                }
                Op::LogSoftmaxRows(a) => {
                    let cols = g.cols;
                    let mut ga = g;
                    for (grow, yrow) in ga.data.chunks_mut(cols.max(1)).zip(node.value.data.chunks(cols.max(1))) {
                        let total: f64 = grow.iter().sum();
                        for (o, y) in grow.iter_mut().zip(yrow) {
                            *o -= y.exp() * total;
                        }
                    }
                    acc(*a, ga, &mut grads);
                }
                Op::Scatter { src, positions } => {
                    let data = positions.iter().map(|&(r, c)| g.get(r, c)).collect();
                    let s = self.value(*src);
                    acc(*src, Tensor::from_vec(s.rows, s.cols, data), &mut grads);
                }
                Op::Pick { input, positions } => {
                    let x = self.value(*input);
                    let mut ga = Tensor::zeros(x.rows, x.cols);
                    for (k, &(r, c)) in positions.iter().enumerate() {
                        ga.data[r * x.cols + c] += g.data[k];
                    }
                    acc(*input, ga, &mut grads);
                }
                Op::LogSumExpSelect { input, selections } => {
                    let x = self.value(*input);
                    let mut ga = Tensor::zeros(x.rows, x.cols);
                    for (k, (r, cs)) in selections.iter().enumerate() {
                        let lse = node.value.data[k];
                        for &c in cs {
                            ga.data[r * x.cols + c] += g.data[k] * (x.get(*r, c) - lse).exp();
                        }
                    }
                    acc(*input, ga, &mut grads);
                }
                Op::Sum(a) => {
                    let x = self.value(*a);
                    acc(*a, Tensor::filled(x.rows, x.cols, g.data[0]), &mut grads);
                }
            }
        }
        param_grads
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Central differences of `f` w.r.t. every parameter scalar.
    fn numeric_grad(store: &ParamStore, f: &dyn Fn(&ParamStore) -> f64) -> Vec<Tensor> {
        let mut work = store.clone();
        let mut out = store.zeros_like();
        let h = 1e-5;
        for id in store.ids() {
            for k in 0..store.get(id).len() {
                let orig = work.get(id).data[k];
                work.get_mut(id).data[k] = orig + h;
                let up = f(&work);
                work.get_mut(id).data[k] = orig - h;
                let down = f(&work);
                work.get_mut(id).data[k] = orig;
                out[id.0].data[k] = (up - down) / (2.0 * h);
            }
        }
        out
    }

    fn assert_close(a: &[Tensor], b: &[Tensor], tol: f64) {
        for (x, y) in a.iter().zip(b) {
            for (p, q) in x.data.iter().zip(&y.data) {
                assert!((p - q).abs() <= tol * (1.0 + p.abs().max(q.abs())), "{p} vs {q}");
            }
        }
    }

    #[test]
    fn every_op_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let table = store.add("table", Tensor::uniform(5, 3, 1.0, &mut rng));
        let w = store.add("w", Tensor::uniform(3, 4, 1.0, &mut rng));
        let b = store.add("b", Tensor::uniform(1, 4, 1.0, &mut rng));
        let c = store.add("c", Tensor::uniform(4, 1, 1.0, &mut rng));
        let a = store.add("a", Tensor::uniform(4, 1, 1.0, &mut rng));

        let f = |store: &ParamStore| -> (f64, Vec<Tensor>) {
            let mut g = Graph::new(store);
            let x = g.lookup(table, &[0, 2, 2, 4]);
            let wv = g.param(w);
            let bv = g.param(b);
            let h = g.matmul(x, wv);
            let h = g.add_row(h, bv);
            let t = g.tanh(h);
            let s = g.sigmoid(h);
            let m = g.mul(t, s);
            let r = g.relu(m);
            let cc = g.param(c);
            let r = g.add_col(r, cc);
            let left = g.slice_cols(r, 0, 2);
            let right = g.slice_cols(m, 2, 2);
            let both = g.concat_cols(&[left, right]);
            let stacked = g.concat_rows(&[both, m]);
            let gathered = g.gather_rows(stacked, &[1, 5, 7, 0]);
            let reshaped = g.reshape(gathered, 2, 8);
            let mx = g.max_over_rows(reshaped);
            let av = g.param(a);
            let att = g.span_attention(av, m, &[(0, 0), (1, 3), (0, 2)]);
            let ls = g.log_softmax_rows(att);
            let lse = g.log_sum_exp_select(ls, &[(0, vec![0, 1]), (2, vec![3])]);
            let picked = g.pick(mx, &[(0, 1), (0, 6)]);
            let sc = g.scatter(Tensor::filled(2, 2, f64::NEG_INFINITY), picked, &[(0, 0), (1, 1)]);
            let sc = g.log_softmax_rows(sc);
            let p1 = g.pick(sc, &[(0, 0), (1, 1)]);
            let s1 = g.sum(lse);
            let s2 = g.sum(p1);
            let s3 = g.scale(s2, 0.7);
            let total = g.add(s1, s3);
            (g.scalar(total), g.backward(total))
        };
        let (_, analytic) = f(&store);
        let numeric = numeric_grad(&store, &|s| f(s).0);
        assert_close(&analytic, &numeric, 1e-6);
    }

    #[test]
    fn attention_weights_sum_to_one() {
        let mut store = ParamStore::new();
        let s = store.add("s", Tensor::from_vec(3, 1, vec![0.5, -1.0, 2.0]));
        let v = store.add("v", Tensor::from_vec(3, 2, vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0]));
        let mut g = Graph::new(&store);
        let (sv, vv) = (g.param(s), g.param(v));
        let att = g.span_attention(sv, vv, &[(1, 1), (0, 2)]);
        let w = g.attention_weights(att).unwrap();
        assert_eq!(w[0], vec![1.0]);
        assert!((w[1].iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(w[1].iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn masked_log_softmax_is_finite() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let x = g.constant(Tensor::from_vec(1, 3, vec![0.0, f64::NEG_INFINITY, 1.0]));
        let y = g.log_softmax_rows(x);
        let probs: f64 = g.value(y).data.iter().map(|v| v.exp()).sum();
        assert!((probs - 1.0).abs() < 1e-12);
        assert_eq!(g.value(y).data[1], f64::NEG_INFINITY);
    }
}
