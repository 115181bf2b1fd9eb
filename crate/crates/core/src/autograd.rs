//! Reverse-mode automatic differentiation over a per-pass tape.
//!
//! A [`Tape`] records every operation of one forward pass. Trainable tensors
//! live in a [`ParamSet`] that the tape borrows; their values are read in
//! place rather than copied. [`Tape::backward`] walks the tape in reverse and
//! returns [`Gradients`], which the caller folds into the parameter set with
//! [`ParamSet::accumulate`] once the tape is dropped.

use crate::error::{Error, Result};
use crate::tensor::{self, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named, ordered collection of trainable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(tensor.with_grad());
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.tensors.iter_mut()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn zero_grads(&mut self) {
        for t in &mut self.tensors {
            t.zero_grad();
        }
    }

    /// Adds the gradients of one backward pass into each parameter's grad.
    pub fn accumulate(&mut self, grads: &Gradients) -> Result<()> {
        for (idx, g) in grads.params.iter().enumerate() {
            if let Some(g) = g {
                self.tensors[idx].accumulate_grad(g)?;
            }
        }
        Ok(())
    }

    /// Euclidean norm over every parameter gradient.
    pub fn grad_norm(&self) -> f64 {
        self.tensors
            .iter()
            .filter_map(Tensor::grad)
            .flat_map(|g| g.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Value {
    Owned(Tensor),
    Param(usize),
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize, usize),
    SliceRows(Var, usize),
    Gather(Var, Vec<usize>),
    Stack(Vec<Var>),
    Reshape(Var),
    BatchDot { keys: Var, query: Var },
    WeightedSum { weights: Var, values: Var },
    AddGroup { x: Var, y: Var },
    MaskedSoftmax(Var),
    CrossEntropy { logits: Var, probs: Vec<f64>, targets: Vec<usize>, counted: Vec<bool> },
    Sum(Var),
    MaskMul(Var, Vec<f64>),
    SelectRows { keep: Vec<bool>, a: Var, b: Var },
}

struct Node {
    value: Value,
    op: Op,
    needs_grad: bool,
}

/// Records one forward pass for reverse-mode differentiation.
pub struct Tape<'p> {
    params: Option<&'p ParamSet>,
    param_vars: Vec<Option<Var>>,
    nodes: Vec<Node>,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p> Tape<'p> {
    pub fn new() -> Self {
        Tape {
            params: None,
            param_vars: Vec::new(),
            nodes: Vec::new(),
        }
    }

    pub fn with_params(params: &'p ParamSet) -> Self {
        Tape {
            params: Some(params),
            param_vars: vec![None; params.len()],
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(i) => self
                .params
                .expect("param node without a bound parameter set")
                .get(ParamId(*i)),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    fn data(&self, v: Var) -> &[f64] {
        self.value(v).data()
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A value that takes no gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(t),
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Binds a parameter from the borrowed set. Repeated calls return the
    /// same handle.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars.get(id.0).copied().flatten() {
            return v;
        }
        assert!(
            self.params.is_some_and(|p| id.0 < p.len()),
            "parameter {id:?} is not in the tape's parameter set"
        );
        self.nodes.push(Node {
            value: Value::Param(id.0),
            op: Op::Leaf,
            needs_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dims(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| f(*x, *y))
            .collect();
        Tensor::new(self.shape(a).to_vec(), data).expect("shape preserved")
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let data = self.data(a).iter().map(|x| f(*x)).collect();
        Tensor::new(self.shape(a).to_vec(), data).expect("shape preserved")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.zip_with(a, b, |x, y| x + y);
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.zip_with(a, b, |x, y| x - y);
        Ok(self.push(out, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.zip_with(a, b, |x, y| x * y);
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    /// Adds a bias vector to every row of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let n = self.value(x).cols();
        if self.value(bias).len() != n {
            return Err(Error::dims("add_bias", self.shape(x), self.shape(bias)));
        }
        let b = self.data(bias);
        let data = self
            .data(x)
            .chunks(n)
            .flat_map(|row| row.iter().zip(b).map(|(r, bb)| r + bb))
            .collect();
        let out = Tensor::new(self.shape(x).to_vec(), data)?;
        Ok(self.push(out, Op::AddBias(x, bias), &[x, bias]))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out = self.map(a, |x| x * factor);
        self.push(out, Op::Scale(a, factor), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.map(a, sigmoid);
        self.push(out, Op::Sigmoid(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.map(a, f64::tanh);
        self.push(out, Op::Tanh(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(out, Op::Sum(a), &[a])
    }

    /// Multiplies elementwise by a fixed (non-differentiable) mask.
    pub fn mask_mul(&mut self, a: Var, mask: Vec<f64>) -> Result<Var> {
        if mask.len() != self.value(a).len() {
            return Err(Error::dims("mask_mul", self.shape(a), &[mask.len()]));
        }
        let data = self.data(a).iter().zip(&mask).map(|(x, m)| x * m).collect();
        let out = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(out, Op::MaskMul(a, mask), &[a]))
    }

    /// Concatenates 2-D values with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        let rows = self.shape(first)[0];
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.len() != 2 || s[0] != rows {
                return Err(Error::dims("concat_cols", self.shape(first), s));
            }
            widths.push(s[1]);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.data(p)[r * w..(r + 1) * w]);
            }
        }
        let out = Tensor::new(vec![rows, total], data)?;
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), parts))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 2 || start >= end || end > s[1] {
            return Err(Error::dims("slice_cols", s, &[start, end]));
        }
        let (rows, cols) = (s[0], s[1]);
        let src = self.data(a);
        let mut data = Vec::with_capacity(rows * (end - start));
        for r in 0..rows {
            data.extend_from_slice(&src[r * cols + start..r * cols + end]);
        }
        let out = Tensor::new(vec![rows, end - start], data)?;
        Ok(self.push(out, Op::SliceCols(a, start, end), &[a]))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 2 || start >= end || end > s[0] {
            return Err(Error::dims("slice_rows", s, &[start, end]));
        }
        let cols = s[1];
        let data = self.data(a)[start * cols..end * cols].to_vec();
        let out = Tensor::new(vec![end - start, cols], data)?;
        Ok(self.push(out, Op::SliceRows(a, start), &[a]))
    }

    /// Row gather from a 2-D table; the backward pass scatter-adds.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let s = self.shape(table);
        if s.len() != 2 {
            return Err(Error::dims("gather", s, &[0, 0]));
        }
        let (rows, cols) = (s[0], s[1]);
        let src = self.data(table);
        let mut data = Vec::with_capacity(ids.len() * cols);
        for &id in ids {
            if id >= rows {
                return Err(Error::Index {
                    what: "embedding table",
                    index: id,
                    size: rows,
                });
            }
            data.extend_from_slice(&src[id * cols..(id + 1) * cols]);
        }
        let out = Tensor::new(vec![ids.len(), cols], data)?;
        Ok(self.push(out, Op::Gather(table, ids.to_vec()), &[table]))
    }

    /// Stacks `T` values of shape `[B, H]` into one `[B, T, H]` value.
    pub fn stack(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Contract("stack of zero tensors".into()))?;
        let s = self.shape(first).to_vec();
        if s.len() != 2 {
            return Err(Error::dims("stack", &s, &[0, 0]));
        }
        for &p in parts {
            if self.shape(p) != s.as_slice() {
                return Err(Error::dims("stack", &s, self.shape(p)));
            }
        }
        let (b, h, t) = (s[0], s[1], parts.len());
        let mut data = vec![0.0; b * t * h];
        for (ti, &p) in parts.iter().enumerate() {
            let src = self.data(p);
            for bi in 0..b {
                data[(bi * t + ti) * h..(bi * t + ti + 1) * h]
                    .copy_from_slice(&src[bi * h..(bi + 1) * h]);
            }
        }
        let out = Tensor::new(vec![b, t, h], data)?;
        Ok(self.push(out, Op::Stack(parts.to_vec()), parts))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).clone().reshape(shape.to_vec())?;
        Ok(self.push(out, Op::Reshape(a), &[a]))
    }

    /// `out[b, t] = keys[b, t, :] · query[b, :]`
    pub fn batch_dot(&mut self, keys: Var, query: Var) -> Result<Var> {
        let (b, t, h) = dims3("batch_dot", self.shape(keys))?;
        if self.shape(query) != [b, h] {
            return Err(Error::dims("batch_dot", self.shape(keys), self.shape(query)));
        }
        let k = self.data(keys);
        let q = self.data(query);
        let mut data = vec![0.0; b * t];
        for bi in 0..b {
            let qr = &q[bi * h..(bi + 1) * h];
            for ti in 0..t {
                let kr = &k[(bi * t + ti) * h..(bi * t + ti + 1) * h];
                data[bi * t + ti] = kr.iter().zip(qr).map(|(x, y)| x * y).sum();
            }
        }
        let out = Tensor::new(vec![b, t], data)?;
        Ok(self.push(out, Op::BatchDot { keys, query }, &[keys, query]))
    }

    /// `out[b, :] = Σ_t weights[b, t] · values[b, t, :]`
    pub fn weighted_sum(&mut self, weights: Var, values: Var) -> Result<Var> {
        let (b, t, h) = dims3("weighted_sum", self.shape(values))?;
        if self.shape(weights) != [b, t] {
            return Err(Error::dims("weighted_sum", self.shape(weights), self.shape(values)));
        }
        let w = self.data(weights);
        let v = self.data(values);
        let mut data = vec![0.0; b * h];
        for bi in 0..b {
            let out = &mut data[bi * h..(bi + 1) * h];
            for ti in 0..t {
                let wv = w[bi * t + ti];
                let vr = &v[(bi * t + ti) * h..(bi * t + ti + 1) * h];
                for (o, x) in out.iter_mut().zip(vr) {
                    *o += wv * x;
                }
            }
        }
        let out = Tensor::new(vec![b, h], data)?;
        Ok(self.push(out, Op::WeightedSum { weights, values }, &[weights, values]))
    }

    /// Broadcast-adds `y[b, :]` to every `x[b, t, :]`.
    pub fn add_group(&mut self, x: Var, y: Var) -> Result<Var> {
        let (b, t, a) = dims3("add_group", self.shape(x))?;
        if self.shape(y) != [b, a] {
            return Err(Error::dims("add_group", self.shape(x), self.shape(y)));
        }
        let xd = self.data(x);
        let yd = self.data(y);
        let mut data = xd.to_vec();
        for bi in 0..b {
            let yr = &yd[bi * a..(bi + 1) * a];
            for ti in 0..t {
                for (o, yv) in data[(bi * t + ti) * a..(bi * t + ti + 1) * a]
                    .iter_mut()
                    .zip(yr)
                {
                    *o += yv;
                }
            }
        }
        let out = Tensor::new(vec![b, t, a], data)?;
        Ok(self.push(out, Op::AddGroup { x, y }, &[x, y]))
    }

    /// Row-wise softmax over the unmasked entries of a `[B, T]` value.
    /// `valid[b * T + t]` is false for padding; those entries come out as
    /// exactly 0 and receive no gradient.
    pub fn masked_softmax(&mut self, x: Var, valid: &[bool]) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 || valid.len() != s[0] * s[1] {
            return Err(Error::dims("masked_softmax", &s, &[valid.len()]));
        }
        let t = s[1];
        let mut data: Vec<f64> = self
            .data(x)
            .iter()
            .zip(valid)
            .map(|(v, ok)| if *ok { *v } else { f64::NEG_INFINITY })
            .collect();
        for (bi, row) in data.chunks_mut(t).enumerate() {
            if !valid[bi * t..(bi + 1) * t].iter().any(|v| *v) {
                return Err(Error::Domain(format!(
                    "attention row {bi} has every position masked"
                )));
            }
            tensor::softmax_in_place(row);
        }
        let out = Tensor::new(s, data)?;
        Ok(self.push(out, Op::MaskedSoftmax(x), &[x]))
    }

    /// Sum of sparse softmax cross-entropy over the rows of `logits [B, V]`
    /// whose `counted` flag is set.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], counted: &[bool]) -> Result<Var> {
        let s = self.shape(logits).to_vec();
        if s.len() != 2 || targets.len() != s[0] || counted.len() != s[0] {
            return Err(Error::dims("cross_entropy", &s, &[targets.len()]));
        }
        let v = s[1];
        let mut probs = self.data(logits).to_vec();
        let mut total = 0.0;
        for (r, row) in probs.chunks_mut(v).enumerate() {
            if targets[r] >= v {
                return Err(Error::Index {
                    what: "class logits",
                    index: targets[r],
                    size: v,
                });
            }
            if counted[r] {
                total += tensor::cross_entropy_slice(row, targets[r]);
            }
            tensor::softmax_in_place(row);
        }
        let op = Op::CrossEntropy {
            logits,
            probs,
            targets: targets.to_vec(),
            counted: counted.to_vec(),
        };
        Ok(self.push(Tensor::scalar(total), op, &[logits]))
    }

    /// Picks row `r` from `a` where `keep[r]`, else from `b`.
    pub fn select_rows(&mut self, keep: &[bool], a: Var, b: Var) -> Result<Var> {
        self.same_shape("select_rows", a, b)?;
        let rows = self.value(a).rows();
        if keep.len() != rows {
            return Err(Error::dims("select_rows", self.shape(a), &[keep.len()]));
        }
        let cols = self.value(a).cols();
        let (ad, bd) = (self.data(a), self.data(b));
        let mut data = Vec::with_capacity(rows * cols);
        for (r, &k) in keep.iter().enumerate() {
            let src = if k { ad } else { bd };
            data.extend_from_slice(&src[r * cols..(r + 1) * cols]);
        }
        let out = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(out, Op::SelectRows { keep: keep.to_vec(), a, b }, &[a, b]))
    }

    /// Reverse pass from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let out = self.data(Var(i));
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                    let n = self.shape(*b)[1];
                    if self.needs(*a) {
                        let da = slot(&mut grads, *a, m * k);
                        tensor::gemm_a_bt(&g, self.data(*b), m, k, n, da);
                    }
                    if self.needs(*b) {
                        let db = slot(&mut grads, *b, k * n);
                        tensor::gemm_at_b(self.data(*a), &g, m, k, n, db);
                    }
                }
                Op::Add(a, b) => {
                    self.accum(&mut grads, *a, &g);
                    self.accum(&mut grads, *b, &g);
                }
                Op::Sub(a, b) => {
                    self.accum(&mut grads, *a, &g);
                    if self.needs(*b) {
                        let db = slot(&mut grads, *b, g.len());
                        for (d, x) in db.iter_mut().zip(&g) {
                            *d -= x;
                        }
                    }
                }
                Op::Mul(a, b) => {
                    if self.needs(*a) {
                        let bd = self.data(*b);
                        let da = slot(&mut grads, *a, g.len());
                        for ((d, x), y) in da.iter_mut().zip(&g).zip(bd) {
                            *d += x * y;
                        }
                    }
                    if self.needs(*b) {
                        let ad = self.data(*a);
                        let db = slot(&mut grads, *b, g.len());
                        for ((d, x), y) in db.iter_mut().zip(&g).zip(ad) {
                            *d += x * y;
                        }
                    }
                }
                Op::AddBias(x, bias) => {
                    self.accum(&mut grads, *x, &g);
                    if self.needs(*bias) {
                        let n = self.value(*bias).len();
                        let db = slot(&mut grads, *bias, n);
                        for row in g.chunks(n) {
                            for (d, v) in db.iter_mut().zip(row) {
                                *d += v;
                            }
                        }
                    }
                }
                Op::Scale(a, f) => {
                    if self.needs(*a) {
                        let da = slot(&mut grads, *a, g.len());
                        for (d, x) in da.iter_mut().zip(&g) {
                            *d += x * f;
                        }
                    }
                }
                Op::Sigmoid(a) => {
                    if self.needs(*a) {
                        let da = slot(&mut grads, *a, g.len());
                        for ((d, x), y) in da.iter_mut().zip(&g).zip(out) {
                            *d += x * y * (1.0 - y);
                        }
                    }
                }
                Op::Tanh(a) => {
                    if self.needs(*a) {
                        let da = slot(&mut grads, *a, g.len());
                        for ((d, x), y) in da.iter_mut().zip(&g).zip(out) {
                            *d += x * (1.0 - y * y);
                        }
                    }
                }
                Op::Sum(a) => {
                    if self.needs(*a) {
                        let n = self.value(*a).len();
                        let da = slot(&mut grads, *a, n);
                        for d in da.iter_mut() {
                            *d += g[0];
                        }
                    }
                }
                Op::MaskMul(a, mask) => {
                    if self.needs(*a) {
                        let da = slot(&mut grads, *a, g.len());
                        for ((d, x), m) in da.iter_mut().zip(&g).zip(mask) {
                            *d += x * m;
                        }
                    }
                }
                Op::ConcatCols(parts) => {
                    let rows = self.shape(parts[0])[0];
                    let total = g.len() / rows;
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.shape(p)[1];
                        if self.needs(p) {
                            let dp = slot(&mut grads, p, rows * w);
                            for r in 0..rows {
                                let src = &g[r * total + offset..r * total + offset + w];
                                for (d, x) in dp[r * w..(r + 1) * w].iter_mut().zip(src) {
                                    *d += x;
                                }
                            }
                        }
                        offset += w;
                    }
                }
                Op::SliceCols(a, start, end) => {
                    if self.needs(*a) {
                        let (rows, cols) = (self.shape(*a)[0], self.shape(*a)[1]);
                        let w = end - start;
                        let da = slot(&mut grads, *a, rows * cols);
                        for r in 0..rows {
                            let dst = &mut da[r * cols + start..r * cols + end];
                            for (d, x) in dst.iter_mut().zip(&g[r * w..(r + 1) * w]) {
                                *d += x;
                            }
                        }
                    }
                }
                Op::SliceRows(a, start) => {
                    if self.needs(*a) {
                        let cols = self.shape(*a)[1];
                        let n = self.value(*a).len();
                        let da = slot(&mut grads, *a, n);
                        for (d, x) in da[start * cols..].iter_mut().zip(&g) {
                            *d += x;
                        }
                    }
                }
                Op::Gather(table, ids) => {
                    if self.needs(*table) {
                        let cols = self.shape(*table)[1];
                        let n = self.value(*table).len();
                        let dt = slot(&mut grads, *table, n);
                        for (r, &id) in ids.iter().enumerate() {
                            for (d, x) in dt[id * cols..(id + 1) * cols]
                                .iter_mut()
                                .zip(&g[r * cols..(r + 1) * cols])
                            {
                                *d += x;
                            }
                        }
                    }
                }
                Op::Stack(parts) => {
                    let (b, h) = (self.shape(parts[0])[0], self.shape(parts[0])[1]);
                    let t = parts.len();
                    for (ti, &p) in parts.iter().enumerate() {
                        if !self.needs(p) {
                            continue;
                        }
                        let dp = slot(&mut grads, p, b * h);
                        for bi in 0..b {
                            let src = &g[(bi * t + ti) * h..(bi * t + ti + 1) * h];
                            for (d, x) in dp[bi * h..(bi + 1) * h].iter_mut().zip(src) {
                                *d += x;
                            }
                        }
                    }
                }
                Op::Reshape(a) => self.accum(&mut grads, *a, &g),
                Op::BatchDot { keys, query } => {
                    let (b, t, h) = dims3("batch_dot", self.shape(*keys))?;
                    if self.needs(*keys) {
                        let q = self.data(*query);
                        let dk = slot(&mut grads, *keys, b * t * h);
                        for bi in 0..b {
                            for ti in 0..t {
                                let gv = g[bi * t + ti];
                                let row = &mut dk[(bi * t + ti) * h..(bi * t + ti + 1) * h];
                                for (d, qv) in row.iter_mut().zip(&q[bi * h..(bi + 1) * h]) {
                                    *d += gv * qv;
                                }
                            }
                        }
                    }
                    if self.needs(*query) {
                        let k = self.data(*keys);
                        let dq = slot(&mut grads, *query, b * h);
                        for bi in 0..b {
                            for ti in 0..t {
                                let gv = g[bi * t + ti];
                                let kr = &k[(bi * t + ti) * h..(bi * t + ti + 1) * h];
                                for (d, kv) in dq[bi * h..(bi + 1) * h].iter_mut().zip(kr) {
                                    *d += gv * kv;
                                }
                            }
                        }
                    }
                }
                Op::WeightedSum { weights, values } => {
                    let (b, t, h) = dims3("weighted_sum", self.shape(*values))?;
                    if self.needs(*weights) {
                        let v = self.data(*values);
                        let dw = slot(&mut grads, *weights, b * t);
                        for bi in 0..b {
                            let gr = &g[bi * h..(bi + 1) * h];
                            for ti in 0..t {
                                let vr = &v[(bi * t + ti) * h..(bi * t + ti + 1) * h];
                                dw[bi * t + ti] += gr.iter().zip(vr).map(|(x, y)| x * y).sum::<f64>();
                            }
                        }
                    }
                    if self.needs(*values) {
                        let w = self.data(*weights);
                        let dv = slot(&mut grads, *values, b * t * h);
                        for bi in 0..b {
                            let gr = &g[bi * h..(bi + 1) * h];
                            for ti in 0..t {
                                let wv = w[bi * t + ti];
                                let row = &mut dv[(bi * t + ti) * h..(bi * t + ti + 1) * h];
                                for (d, x) in row.iter_mut().zip(gr) {
                                    *d += wv * x;
                                }
                            }
                        }
                    }
                }
                Op::AddGroup { x, y } => {
                    let (b, t, a) = dims3("add_group", self.shape(*x))?;
                    self.accum(&mut grads, *x, &g);
                    if self.needs(*y) {
                        let dy = slot(&mut grads, *y, b * a);
                        for bi in 0..b {
                            for ti in 0..t {
                                let src = &g[(bi * t + ti) * a..(bi * t + ti + 1) * a];
                                for (d, v) in dy[bi * a..(bi + 1) * a].iter_mut().zip(src) {
                                    *d += v;
                                }
                            }
                        }
                    }
                }
                Op::MaskedSoftmax(x) => {
                    if self.needs(*x) {
                        let t = self.shape(*x)[1];
                        let dx = slot(&mut grads, *x, g.len());
                        for ((dr, gr), yr) in dx.chunks_mut(t).zip(g.chunks(t)).zip(out.chunks(t)) {
                            let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                            for ((d, gv), yv) in dr.iter_mut().zip(gr).zip(yr) {
                                *d += yv * (gv - dot);
                            }
                        }
                    }
                }
                Op::CrossEntropy {
                    logits,
                    probs,
                    targets,
                    counted,
                } => {
                    if self.needs(*logits) {
                        let v = self.shape(*logits)[1];
                        let dl = slot(&mut grads, *logits, probs.len());
                        for (r, (dr, pr)) in dl.chunks_mut(v).zip(probs.chunks(v)).enumerate() {
                            if !counted[r] {
                                continue;
                            }
                            for (d, p) in dr.iter_mut().zip(pr) {
                                *d += g[0] * p;
                            }
                            dr[targets[r]] -= g[0];
                        }
                    }
                }
                Op::SelectRows { keep, a, b } => {
                    let cols = self.value(*a).cols();
                    for (src, take) in [(*a, true), (*b, false)] {
                        if !self.needs(src) {
                            continue;
                        }
                        let ds = slot(&mut grads, src, g.len());
                        for (r, &k) in keep.iter().enumerate() {
                            if k == take {
                                for (d, x) in ds[r * cols..(r + 1) * cols]
                                    .iter_mut()
                                    .zip(&g[r * cols..(r + 1) * cols])
                                {
                                    *d += x;
                                }
                            }
                        }
                    }
                }
            }
        }

        let mut params = vec![None; self.param_vars.len()];
        for (idx, var) in self.param_vars.iter().enumerate() {
            if let Some(v) = var {
                params[idx] = grads[v.0].clone();
            }
        }
        Ok(Gradients { nodes: grads, params })
    }

    fn accum(&self, grads: &mut [Option<Vec<f64>>], v: Var, g: &[f64]) {
        if !self.needs(v) {
            return;
        }
        let d = slot(grads, v, g.len());
        for (x, y) in d.iter_mut().zip(g) {
            *x += y;
        }
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], v: Var, n: usize) -> &mut Vec<f64> {
    grads[v.0].get_or_insert_with(|| vec![0.0; n])
}

fn dims3(op: &'static str, s: &[usize]) -> Result<(usize, usize, usize)> {
    match s {
        [b, t, h] => Ok((*b, *t, *h)),
        _ => Err(Error::dims(op, s, &[0, 0, 0])),
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Result of a backward pass.
pub struct Gradients {
    nodes: Vec<Option<Vec<f64>>>,
    params: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the loss with respect to a leaf value, if it was reached.
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.nodes.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn param(&self, id: ParamId) -> Option<&[f64]> {
        self.params.get(id.0).and_then(|g| g.as_deref())
    }
}
