//! Reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records every operation applied to its [`Var`]s. Calling
//! [`Tape::backward`] on a scalar (1×1) node walks the record in reverse and
//! returns the gradient of that scalar with respect to every node that
//! requires one. Nodes created by [`Tape::constant`] or
//! [`Tape::stop_gradient`] never receive or propagate gradient.

use nalgebra::DMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddRow(Var, Var),
    Relu(Var),
    NormalizeRows(Var),
    /// Holds the per-column inverse standard deviations.
    StandardizeColumns(Var, Vec<f64>),
    GatherRows(Var, Vec<usize>),
    RowDot(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine(Var, f64),
    Sum(Var),
    LoweWeight(Var, Var),
    /// Scalar function of one input with a precomputed Jacobian.
    Scalar(Var, DMatrix<f64>),
}

#[derive(Debug, Clone)]
struct Node {
    value: DMatrix<f64>,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients indexed by [`Var`]; `None` for nodes outside the graph.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<DMatrix<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&DMatrix<f64>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros of the given shape when nothing flowed in.
    pub fn get_or_zeros(&self, v: Var, rows: usize, cols: usize) -> DMatrix<f64> {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| DMatrix::zeros(rows, cols))
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

    fn push(&mut self, value: DMatrix<f64>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A differentiable input.
    pub fn param(&mut self, value: DMatrix<f64>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn constant(&mut self, value: DMatrix<f64>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &DMatrix<f64> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        assert_eq!(m.shape(), (1, 1), "node is not a scalar");
        m[(0, 0)]
    }

    /// Same value, but the gradient path through it is cut.
    pub fn stop_gradient(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) * self.value(b);
        let rg = self.needs(a) || self.needs(b);
        self.push(value, Op::MatMul(a, b), rg)
    }

    /// Adds the 1×m row `bias` to every row of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Var {
        let b = self.value(bias);
        assert_eq!(b.nrows(), 1, "bias must be a row vector");
        let mut value = self.value(x).clone();
        assert_eq!(value.ncols(), b.ncols(), "bias width mismatch");
        for (mut col, &bv) in value.column_iter_mut().zip(b.iter()) {
            col.add_scalar_mut(bv);
        }
        let rg = self.needs(x) || self.needs(bias);
        self.push(value, Op::AddRow(x, bias), rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(0.0));
        let rg = self.needs(x);
        self.push(value, Op::Relu(x), rg)
    }

    /// Scales each row to unit L2 norm; all-zero rows stay zero.
    pub fn normalize_rows(&mut self, x: Var) -> Var {
        let value = normalize_rows(self.value(x));
        let rg = self.needs(x);
        self.push(value, Op::NormalizeRows(x), rg)
    }

    /// Shifts and scales each column to zero mean and unit variance over
    /// the rows.
    pub fn standardize_columns(&mut self, x: Var) -> Var {
        let (value, inv_std) = standardize_columns(self.value(x));
        let rg = self.needs(x);
        self.push(value, Op::StandardizeColumns(x, inv_std), rg)
    }

    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Var {
        let value = self.value(x).select_rows(rows.iter());
        let rg = self.needs(x);
        self.push(value, Op::GatherRows(x, rows.to_vec()), rg)
    }

    /// Row-wise dot products of two equally shaped matrices, as an n×1 column.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "row_dot shape mismatch");
        let value = va.component_mul(vb).column_sum();
        let rg = self.needs(a) || self.needs(b);
        self.push(DMatrix::from_column_slice(value.len(), 1, value.as_slice()), Op::RowDot(a, b), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        let rg = self.needs(a) || self.needs(b);
        self.push(value, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) - self.value(b);
        let rg = self.needs(a) || self.needs(b);
        self.push(value, Op::Sub(a, b), rg)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).component_mul(self.value(b));
        let rg = self.needs(a) || self.needs(b);
        self.push(value, Op::Mul(a, b), rg)
    }

    /// `scale · x + shift`, elementwise.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let value = self.value(x).map(|v| scale * v + shift);
        let rg = self.needs(x);
        self.push(value, Op::Affine(x, scale), rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = DMatrix::from_element(1, 1, self.value(x).sum());
        let rg = self.needs(x);
        self.push(value, Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len().max(1) as f64;
        let s = self.sum(x);
        self.affine(s, 1.0 / n, 0.0)
    }

    /// Lowe ratio weight `1 − d1/d2`, clamped to `[0, 1]`; zero where
    /// `d2 ≤ 0`. Clamped entries carry no gradient.
    pub fn lowe_weight(&mut self, d1: Var, d2: Var) -> Var {
        let (a, b) = (self.value(d1), self.value(d2));
        assert_eq!(a.shape(), b.shape(), "lowe_weight shape mismatch");
        let value = a.zip_map(b, lowe_ratio_weight);
        let rg = self.needs(d1) || self.needs(d2);
        self.push(value, Op::LoweWeight(d1, d2), rg)
    }

    /// Records a scalar `value = f(input)` whose gradient `∂f/∂input` was
    /// computed by the caller.
    pub fn scalar_fn(&mut self, input: Var, value: f64, jacobian: DMatrix<f64>) -> Var {
        assert_eq!(
            jacobian.shape(),
            self.value(input).shape(),
            "jacobian shape must match input"
        );
        let rg = self.needs(input);
        self.push(DMatrix::from_element(1, 1, value), Op::Scalar(input, jacobian), rg)
    }

    /// Gradient of the scalar node `output` with respect to all nodes.
    pub fn backward(&self, output: Var) -> Gradients {
        assert_eq!(self.value(output).shape(), (1, 1), "backward needs a scalar output");
        let mut grads: Vec<Option<DMatrix<f64>>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(DMatrix::from_element(1, 1, 1.0));

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    if self.needs(*a) {
                        let da = &g * self.value(*b).transpose();
                        accumulate(&mut grads, *a, da);
                    }
                    if self.needs(*b) {
                        let db = self.value(*a).transpose() * &g;
                        accumulate(&mut grads, *b, db);
                    }
                }
                Op::AddRow(x, b) => {
                    if self.needs(*b) {
                        let db = g.row_sum();
                        accumulate(&mut grads, *b, DMatrix::from_row_slice(1, db.len(), db.as_slice()));
                    }
                    if self.needs(*x) {
                        accumulate(&mut grads, *x, g.clone());
                    }
                }
                Op::Relu(x) => {
                    let dx = g.zip_map(self.value(*x), |gv, xv| if xv > 0.0 { gv } else { 0.0 });
                    accumulate(&mut grads, *x, dx);
                }
                Op::NormalizeRows(x) => {
                    let xv = self.value(*x);
                    let y = &node.value;
                    let mut dx = DMatrix::zeros(xv.nrows(), xv.ncols());
                    for r in 0..xv.nrows() {
                        let norm = xv.row(r).norm();
                        if norm == 0.0 {
                            continue;
                        }
                        let yr = y.row(r);
                        let gr = g.row(r);
                        let proj = yr.dot(&gr);
                        let row = (gr - yr * proj) / norm;
                        dx.set_row(r, &row);
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::StandardizeColumns(x, inv_std) => {
                    let y = &node.value;
                    let n = y.nrows().max(1) as f64;
                    let mut dx = g.clone();
                    for (c, &s) in inv_std.iter().enumerate() {
                        let gc = g.column(c);
                        let yc = y.column(c);
                        let mg = gc.sum() / n;
                        let mgy = gc.dot(&yc) / n;
                        dx.set_column(c, &((gc - yc * mgy).add_scalar(-mg) * s));
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::GatherRows(x, rows) => {
                    let xv = self.value(*x);
                    let mut dx = DMatrix::zeros(xv.nrows(), xv.ncols());
                    for (i, &r) in rows.iter().enumerate() {
                        let mut dst = dx.row_mut(r);
                        dst += g.row(i);
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::RowDot(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    if self.needs(*a) {
                        let mut da = vb.clone();
                        for (r, mut row) in da.row_iter_mut().enumerate() {
                            row *= g[(r, 0)];
                        }
                        accumulate(&mut grads, *a, da);
                    }
                    if self.needs(*b) {
                        let mut db = va.clone();
                        for (r, mut row) in db.row_iter_mut().enumerate() {
                            row *= g[(r, 0)];
                        }
                        accumulate(&mut grads, *b, db);
                    }
                }
                Op::Add(a, b) => {
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, g.clone());
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, g.clone());
                    }
                }
                Op::Sub(a, b) => {
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, g.clone());
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, -&g);
                    }
                }
                Op::Mul(a, b) => {
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, g.component_mul(self.value(*b)));
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, g.component_mul(self.value(*a)));
                    }
                }
                Op::Affine(x, scale) => {
                    accumulate(&mut grads, *x, &g * *scale);
                }
                Op::Sum(x) => {
                    let xv = self.value(*x);
                    accumulate(&mut grads, *x, DMatrix::from_element(xv.nrows(), xv.ncols(), g[(0, 0)]));
                }
                Op::LoweWeight(d1, d2) => {
                    let (a, b) = (self.value(*d1), self.value(*d2));
                    let mut g1 = DMatrix::zeros(a.nrows(), a.ncols());
                    let mut g2 = DMatrix::zeros(a.nrows(), a.ncols());
                    for i in 0..a.len() {
                        let (x1, x2) = (a[i], b[i]);
                        if x2 <= 0.0 {
                            continue;
                        }
                        let raw = 1.0 - x1 / x2;
                        if !(0.0..=1.0).contains(&raw) {
                            continue;
                        }
                        g1[i] = -g[i] / x2;
                        g2[i] = g[i] * x1 / (x2 * x2);
                    }
                    if self.needs(*d1) {
                        accumulate(&mut grads, *d1, g1);
                    }
                    if self.needs(*d2) {
                        accumulate(&mut grads, *d2, g2);
                    }
                }
                Op::Scalar(x, jac) => {
                    accumulate(&mut grads, *x, jac * g[(0, 0)]);
                }
            }
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
            }
        }
        Gradients { grads }
    }
}

fn accumulate(grads: &mut [Option<DMatrix<f64>>], v: Var, g: DMatrix<f64>) {
    match &mut grads[v.0] {
        Some(existing) => *existing += g,
        slot @ None => *slot = Some(g),
    }
}

/// Row-wise L2 normalization; zero rows stay zero.
pub fn normalize_rows(x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = x.clone();
    for mut row in out.row_iter_mut() {
        let n = row.norm();
        if n > 0.0 {
            row /= n;
        }
    }
    out
}

/// Variance floor of [`standardize_columns`].
pub const STANDARDIZE_EPS: f64 = 1e-6;

/// Per-column `(x − mean) / sqrt(var + eps)` with the population variance;
/// also returns the scale applied to each column.
pub fn standardize_columns(x: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let n = x.nrows().max(1) as f64;
    let mut out = x.clone();
    let mut inv_std = Vec::with_capacity(x.ncols());
    for mut col in out.column_iter_mut() {
        let mean = col.sum() / n;
        col.add_scalar_mut(-mean);
        let var = col.norm_squared() / n;
        let s = 1.0 / (var + STANDARDIZE_EPS).sqrt();
        col *= s;
        inv_std.push(s);
    }
    (out, inv_std)
}

/// `1 − d1/d2` clamped to `[0, 1]`, defined as 0 when `d2 ≤ 0`.
pub fn lowe_ratio_weight(d1: f64, d2: f64) -> f64 {
    if d2 <= 0.0 {
        0.0
    } else {
        (1.0 - d1 / d2).clamp(0.0, 1.0)
    }
}
