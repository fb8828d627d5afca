//! Matrix-valued reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation applied to its variables. Calling
//! [`Graph::backward`] on a scalar walks the record in reverse and returns
//! [`Gradients`] for every node that depends on a parameter. Graphs are cheap
//! and single-use: build one per forward/backward pair.

use std::collections::BTreeMap;

use ndarray::{s, Array2, Axis, Zip};

use crate::{Error, Result};

pub type Mat = Array2<f64>;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulTransB(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Broadcast(Var),
    Scale(Var, f64),
    AddScalar(Var),
    MulConst(Var, Mat),
    MatMulConst(Var, Mat),
    Silu(Var),
    Relu(Var),
    Softplus(Var),
    Square(Var),
    SoftmaxRows(Var),
    LayerNorm { x: Var, rstd: Vec<f64> },
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    ScatterRows(Var, Vec<usize>),
    RowDiff(Var),
    MeanRows(Var),
    Sum(Var),
    Mean(Var),
    RowMin(Var, Vec<usize>),
    RowNorm { x: Var, eps: f64 },
}

#[derive(Debug, Clone)]
struct Node {
    value: Mat,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
    params: BTreeMap<String, Var>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Mat, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn push_op(&mut self, value: Mat, op: Op, parents: &[Var]) -> Var {
        let rg = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.push(value, op, rg)
    }

    /// Constant input; no gradient flows into it.
    pub fn input(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn scalar_input(&mut self, value: f64) -> Var {
        self.input(Array2::from_elem((1, 1), value))
    }

    /// Differentiable leaf registered under `name`. Binding the same name twice
    /// returns the first binding.
    pub fn param(&mut self, name: &str, value: &Mat) -> Var {
        if let Some(&v) = self.params.get(name) {
            return v;
        }
        let v = self.push(value.clone(), Op::Leaf, true);
        self.params.insert(name.to_string(), v);
        v
    }

    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    /// Copy of `v` cut off from the gradient record.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.input(value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        self.push_op(value, Op::MatMul(a, b), &[a, b])
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(&self.value(b).t());
        self.push_op(value, Op::MatMulTransB(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        self.push_op(value, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) - self.value(b);
        self.push_op(value, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) * self.value(b);
        self.push_op(value, Op::Mul(a, b), &[a, b])
    }

    /// `a + 1·row`, broadcasting a `1 x m` row over every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let value = self.value(a) + self.value(row);
        self.push_op(value, Op::AddRow(a, row), &[a, row])
    }

    /// Repeats a `1 x m` row `n` times.
    pub fn broadcast_rows(&mut self, row: Var, n: usize) -> Var {
        let r = self.value(row);
        let value = r.broadcast((n, r.ncols())).expect("row vector").to_owned();
        self.push_op(value, Op::Broadcast(row), &[row])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a) * c;
        self.push_op(value, Op::Scale(a, c), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a) + c;
        self.push_op(value, Op::AddScalar(a), &[a])
    }

    /// Elementwise product with a constant.
    pub fn mul_const(&mut self, a: Var, k: Mat) -> Var {
        let value = self.value(a) * &k;
        self.push_op(value, Op::MulConst(a, k), &[a])
    }

    /// `a · K` for a constant matrix.
    pub fn matmul_const(&mut self, a: Var, k: Mat) -> Var {
        let value = self.value(a).dot(&k);
        self.push_op(value, Op::MatMulConst(a, k), &[a])
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| x * sigmoid(x));
        self.push_op(value, Op::Silu(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| x.max(0.0));
        self.push_op(value, Op::Relu(a), &[a])
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(softplus);
        self.push_op(value, Op::Softplus(a), &[a])
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| x * x);
        self.push_op(value, Op::Square(a), &[a])
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        for mut row in value.rows_mut() {
            let m = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            row.mapv_inplace(|v| (v - m).exp());
            let s = row.sum();
            row /= s;
        }
        self.push_op(value, Op::SoftmaxRows(a), &[a])
    }

    /// Row-wise standardisation without affine parameters.
    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Var {
        let x = self.value(a);
        let cols = x.ncols() as f64;
        let mut value = x.clone();
        let mut rstd = Vec::with_capacity(x.nrows());
        for mut row in value.rows_mut() {
            let mean = row.sum() / cols;
            row -= mean;
            let var = row.fold(0.0, |acc, v| acc + v * v) / cols;
            let r = 1.0 / (var + eps).sqrt();
            row *= r;
            rstd.push(r);
        }
        self.push_op(value, Op::LayerNorm { x: a, rstd }, &[a])
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let value = self.value(a).slice(s![.., start..start + len]).to_owned();
        self.push_op(value, Op::SliceCols { x: a, start }, &[a])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let value = ndarray::concatenate(Axis(1), &views).expect("equal row counts");
        self.push_op(value, Op::ConcatCols(parts.to_vec()), parts)
    }

    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Var {
        let value = self.value(a).select(Axis(0), rows);
        self.push_op(value, Op::GatherRows(a, rows.to_vec()), &[a])
    }

    /// Places row `k` of `a` at row `rows[k]` of an `n`-row zero matrix.
    pub fn scatter_rows(&mut self, a: Var, rows: &[usize], n: usize) -> Var {
        let src = self.value(a);
        let mut value = Array2::zeros((n, src.ncols()));
        for (k, &r) in rows.iter().enumerate() {
            let mut dst = value.row_mut(r);
            dst += &src.row(k);
        }
        self.push_op(value, Op::ScatterRows(a, rows.to_vec()), &[a])
    }

    /// Forward differences between consecutive rows (`n - 1` rows).
    pub fn row_diff(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let n = x.nrows();
        let value = &x.slice(s![1..n, ..]) - &x.slice(s![0..n - 1, ..]);
        self.push_op(value, Op::RowDiff(a), &[a])
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let value = self.value(a).mean_axis(Axis(0)).expect("non-empty").insert_axis(Axis(0));
        self.push_op(value, Op::MeanRows(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Array2::from_elem((1, 1), self.value(a).sum());
        self.push_op(value, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let value = Array2::from_elem((1, 1), x.sum() / x.len() as f64);
        self.push_op(value, Op::Mean(a), &[a])
    }

    /// Minimum of each row as an `n x 1` column.
    pub fn row_min(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut arg = Vec::with_capacity(x.nrows());
        let mut value = Array2::zeros((x.nrows(), 1));
        for (i, row) in x.rows().into_iter().enumerate() {
            let (k, m) = row
                .iter()
                .enumerate()
                .fold((0, f64::INFINITY), |(bk, bm), (k, &v)| if v < bm { (k, v) } else { (bk, bm) });
            arg.push(k);
            value[[i, 0]] = m;
        }
        self.push_op(value, Op::RowMin(a, arg), &[a])
    }

    /// Smoothed Euclidean norm of each row, `sqrt(|x|² + eps) - sqrt(eps)`, as an `n x 1` column.
    /// Exactly zero for zero rows and differentiable everywhere.
    pub fn row_norm(&mut self, a: Var, eps: f64) -> Var {
        let x = self.value(a);
        let base = eps.sqrt();
        let value = x
            .map_axis(Axis(1), |r| (r.fold(0.0, |acc, v| acc + v * v) + eps).sqrt() - base)
            .insert_axis(Axis(1));
        self.push_op(value, Op::RowNorm { x: a, eps }, &[a])
    }

    /// Reverse sweep from `root`, seeded with ones.
    pub fn backward(&self, root: Var) -> Gradients {
        let mut grads: Vec<Option<Mat>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Array2::ones(self.nodes[root.0].value.dim()));
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        let params = self
            .params
            .iter()
            .map(|(k, v)| (k.clone(), (*v, self.nodes[v.0].value.dim())))
            .collect();
        Gradients { grads, params }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, node: &Node, g: &Mat, grads: &mut [Option<Mat>]) {
        let mut acc = |v: Var, delta: Mat| {
            if !self.wants(v) {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => *existing += &delta,
                slot @ None => *slot = Some(delta),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.wants(*a) {
                    acc(*a, g.dot(&self.value(*b).t()));
                }
                if self.wants(*b) {
                    acc(*b, self.value(*a).t().dot(g));
                }
            }
            Op::MatMulTransB(a, b) => {
                if self.wants(*a) {
                    acc(*a, g.dot(self.value(*b)));
                }
                if self.wants(*b) {
                    acc(*b, g.t().dot(self.value(*a)));
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, -g);
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    acc(*a, g * self.value(*b));
                }
                if self.wants(*b) {
                    acc(*b, g * self.value(*a));
                }
            }
            Op::AddRow(a, row) => {
                acc(*a, g.clone());
                acc(*row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
            }
            Op::Broadcast(row) => acc(*row, g.sum_axis(Axis(0)).insert_axis(Axis(0))),
            Op::Scale(a, c) => acc(*a, g * *c),
            Op::AddScalar(a) => acc(*a, g.clone()),
            Op::MulConst(a, k) => acc(*a, g * k),
            Op::MatMulConst(a, k) => acc(*a, g.dot(&k.t())),
            Op::Silu(a) => {
                let mut d = self.value(*a).mapv(|x| {
                    let s = sigmoid(x);
                    s * (1.0 + x * (1.0 - s))
                });
                d *= g;
                acc(*a, d);
            }
            Op::Relu(a) => {
                let mut d = self.value(*a).mapv(|x| if x > 0.0 { 1.0 } else { 0.0 });
                d *= g;
                acc(*a, d);
            }
            Op::Softplus(a) => {
                let mut d = self.value(*a).mapv(sigmoid);
                d *= g;
                acc(*a, d);
            }
            Op::Square(a) => acc(*a, self.value(*a) * g * 2.0),
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                let mut d = y * g;
                let dots = d.sum_axis(Axis(1));
                Zip::from(d.rows_mut()).and(y.rows()).and(&dots).for_each(|mut dr, yr, &dot| {
                    dr.scaled_add(-dot, &yr);
                });
                acc(*a, d);
            }
            Op::LayerNorm { x, rstd } => {
                let xhat = &node.value;
                let cols = xhat.ncols() as f64;
                let mut d = g.clone();
                for (i, mut row) in d.rows_mut().into_iter().enumerate() {
                    let xr = xhat.row(i);
                    let mean_g = row.sum() / cols;
                    let mean_gx = row.iter().zip(xr.iter()).map(|(a, b)| a * b).sum::<f64>() / cols;
                    Zip::from(&mut row).and(&xr).for_each(|gv, &xv| {
                        *gv = rstd[i] * (*gv - mean_g - xv * mean_gx);
                    });
                }
                acc(*x, d);
            }
            Op::SliceCols { x, start } => {
                let mut d = Array2::zeros(self.value(*x).dim());
                d.slice_mut(s![.., *start..*start + g.ncols()]).assign(g);
                acc(*x, d);
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for p in parts {
                    let w = self.value(*p).ncols();
                    if self.wants(*p) {
                        acc(*p, g.slice(s![.., off..off + w]).to_owned());
                    }
                    off += w;
                }
            }
            Op::GatherRows(a, rows) => {
                let mut d = Array2::zeros(self.value(*a).dim());
                for (k, &r) in rows.iter().enumerate() {
                    let mut dst = d.row_mut(r);
                    dst += &g.row(k);
                }
                acc(*a, d);
            }
            Op::ScatterRows(a, rows) => acc(*a, g.select(Axis(0), rows)),
            Op::RowDiff(a) => {
                let n = g.nrows() + 1;
                let mut d = Array2::zeros((n, g.ncols()));
                {
                    let mut hi = d.slice_mut(s![1..n, ..]);
                    hi += g;
                }
                {
                    let mut lo = d.slice_mut(s![0..n - 1, ..]);
                    lo -= g;
                }
                acc(*a, d);
            }
            Op::MeanRows(a) => {
                let n = self.value(*a).nrows();
                let d = g.broadcast((n, g.ncols())).expect("row").to_owned() / n as f64;
                acc(*a, d);
            }
            Op::Sum(a) => acc(*a, Array2::from_elem(self.value(*a).dim(), g[[0, 0]])),
            Op::Mean(a) => {
                let x = self.value(*a);
                acc(*a, Array2::from_elem(x.dim(), g[[0, 0]] / x.len() as f64));
            }
            Op::RowMin(a, arg) => {
                let mut d = Array2::zeros(self.value(*a).dim());
                for (i, &k) in arg.iter().enumerate() {
                    d[[i, k]] = g[[i, 0]];
                }
                acc(*a, d);
            }
            Op::RowNorm { x, eps } => {
                let xv = self.value(*x);
                let mut d = xv.clone();
                for (i, mut row) in d.rows_mut().into_iter().enumerate() {
                    let denom = (row.fold(0.0, |acc, v| acc + v * v) + eps).sqrt();
                    row *= g[[i, 0]] / denom;
                }
                acc(*x, d);
            }
        }
    }
}

/// Result of a reverse sweep.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Mat>>,
    params: BTreeMap<String, (Var, (usize, usize))>,
}

impl Gradients {
    /// Gradient with respect to any node (`None` if it does not influence the root).
    pub fn wrt(&self, v: Var) -> Option<&Mat> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of a named parameter. Parameters recorded on the graph but not
    /// reached from the root have a zero gradient; names never recorded are an error.
    pub fn param(&self, name: &str) -> Result<Mat> {
        let (v, shape) = self
            .params
            .get(name)
            .ok_or_else(|| Error::MissingGradient(name.to_string()))?;
        Ok(self.wrt(*v).cloned().unwrap_or_else(|| Array2::zeros(*shape)))
    }

    /// Gradient for a parameter of known shape, zeros when it was not used.
    pub fn param_or_zeros(&self, name: &str, shape: (usize, usize)) -> Mat {
        self.params
            .get(name)
            .and_then(|(v, _)| self.wrt(*v))
            .cloned()
            .unwrap_or_else(|| Array2::zeros(shape))
    }

    pub fn recorded(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }
}
