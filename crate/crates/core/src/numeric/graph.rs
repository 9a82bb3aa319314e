//! Tape-based reverse-mode differentiation over [`Matrix`] values.
//!
//! Nodes are appended in evaluation order, so walking the tape backwards is a
//! reverse topological order and each node is visited exactly once.

use std::collections::BTreeMap;

use super::matrix::{self, Matrix, NORM_EPSILON};
use super::params::{ParamId, ParamStore};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    Gather { param: ParamId, rows: Vec<usize> },
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulScalarVar(Var, Var),
    DivScalarVar(Var, Var),
    Scale(Var, f64),
    MulConst(Var, Matrix),
    ScalarAffine { s: Var, coef: Matrix },
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Ln(Var),
    Relu(Var),
    SoftmaxRows(Var),
    Sum(Var),
    MeanRows(Var),
    SelectRows(Var, Vec<usize>),
    SliceCols(Var, usize, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    L2NormalizeRows { x: Var, norms: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
}

/// Gradients produced by one backward pass, keyed by parameter.
#[derive(Debug, Default)]
pub struct Gradients {
    grads: BTreeMap<ParamId, Matrix>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Matrix> {
        self.grads.get(&id)
    }

    /// Adds these gradients into the store's `grad` buffers.
    pub fn accumulate_into(&self, store: &mut ParamStore) {
        for (&id, g) in &self.grads {
            store.get_mut(id).grad.add_assign(g);
        }
    }
}

/// One forward computation recorded for differentiation.
pub struct Graph<'a> {
    store: &'a ParamStore,
    nodes: Vec<Node>,
    param_vars: BTreeMap<ParamId, Var>,
}

impl<'a> Graph<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            param_vars: BTreeMap::new(),
        }
    }

    pub fn store(&self) -> &'a ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Leaf bound to a parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let value = self.store.value(id).clone();
        let v = self.push(value, Op::Param(id));
        self.param_vars.insert(id, v);
        v
    }

    /// Rows of a parameter table, without copying the whole table.
    pub fn gather(&mut self, id: ParamId, rows: &[usize]) -> Result<Var> {
        let table = self.store.value(id);
        if let Some(&bad) = rows.iter().find(|&&r| r >= table.rows()) {
            return Err(Error::Dimension {
                op: "gather",
                left: table.shape(),
                right: (bad, 0),
            });
        }
        let cols = table.cols();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for &r in rows {
            data.extend_from_slice(table.row(r));
        }
        let value = Matrix::from_raw(rows.len(), cols, data);
        Ok(self.push(
            value,
            Op::Gather {
                param: id,
                rows: rows.to_vec(),
            },
        ))
    }

    fn dims(&self, op: &'static str, a: Var, b: Var) -> Error {
        Error::Dimension {
            op,
            left: self.shape(a),
            right: self.shape(b),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = matrix::matmul(self.value(a), self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = matrix::matmul_nt(self.value(a), self.value(b))?;
        Ok(self.push(value, Op::MatMulNt(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        self.push(value, Op::Transpose(a))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(self.dims(op, a, b));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        Ok(self.push(value, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        Ok(self.push(value, Op::Mul(a, b)))
    }

    /// Adds a `1 x d` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (r, c) = self.shape(a);
        if self.shape(row) != (1, c) {
            return Err(self.dims("add_row", a, row));
        }
        let b = self.value(row).data().to_vec();
        let mut value = self.value(a).clone();
        for i in 0..r {
            for (v, bv) in value.data_mut()[i * c..(i + 1) * c].iter_mut().zip(&b) {
                *v += bv;
            }
        }
        Ok(self.push(value, Op::AddRow(a, row)))
    }

    fn check_scalar(&self, op: &'static str, a: Var, s: Var) -> Result<f64> {
        if self.shape(s) != (1, 1) {
            return Err(self.dims(op, a, s));
        }
        Ok(self.scalar(s))
    }

    /// `a * s` for a `1 x 1` node `s`.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        let k = self.check_scalar("mul_scalar", a, s)?;
        let value = self.value(a).map(|x| x * k);
        Ok(self.push(value, Op::MulScalarVar(a, s)))
    }

    /// `a / s` for a `1 x 1` node `s`.
    pub fn div_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        let k = self.check_scalar("div_scalar", a, s)?;
        if k == 0.0 {
            return Err(Error::Domain("division by zero".into()));
        }
        let value = self.value(a).map(|x| x / k);
        Ok(self.push(value, Op::DivScalarVar(a, s)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|x| x * c);
        self.push(value, Op::Scale(a, c))
    }

    /// Elementwise product with a constant (dropout masks, fixed weights).
    pub fn mul_const(&mut self, a: Var, c: Matrix) -> Result<Var> {
        if self.shape(a) != c.shape() {
            return Err(Error::Dimension {
                op: "mul_const",
                left: self.shape(a),
                right: c.shape(),
            });
        }
        let value = self.value(a).zip_map(&c, |x, y| x * y);
        Ok(self.push(value, Op::MulConst(a, c)))
    }

    /// `coef * s + offset` for a `1 x 1` node `s` and constant matrices.
    pub fn scalar_affine(&mut self, s: Var, coef: Matrix, offset: &Matrix) -> Result<Var> {
        if self.shape(s) != (1, 1) || coef.shape() != offset.shape() {
            return Err(Error::Dimension {
                op: "scalar_affine",
                left: coef.shape(),
                right: offset.shape(),
            });
        }
        let k = self.scalar(s);
        let value = coef.zip_map(offset, |c, o| c * k + o);
        Ok(self.push(value, Op::ScalarAffine { s, coef }))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = matrix::sigmoid(self.value(a));
        self.push(value, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = matrix::tanh_activation(self.value(a));
        self.push(value, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::exp);
        self.push(value, Op::Exp(a))
    }

    pub fn ln(&mut self, a: Var) -> Result<Var> {
        if self.value(a).data().iter().any(|&x| x <= 0.0) {
            return Err(Error::Domain("log of a non-positive value".into()));
        }
        let value = self.value(a).map(f64::ln);
        Ok(self.push(value, Op::Ln(a)))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.max(0.0));
        self.push(value, Op::Relu(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let value = matrix::softmax_rows(self.value(a))?;
        Ok(self.push(value, Op::SoftmaxRows(a)))
    }

    /// Sum of all entries as a `1 x 1` node.
    pub fn sum(&mut self, a: Var) -> Var {
        let value = Matrix::scalar(self.value(a).sum());
        self.push(value, Op::Sum(a))
    }

    /// Column means as a `1 x d` node.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.shape(a);
        if r == 0 {
            return Err(Error::Domain("mean over zero rows".into()));
        }
        let src = self.value(a);
        let mut out = vec![0.0; c];
        for i in 0..r {
            for (o, v) in out.iter_mut().zip(src.row(i)) {
                *o += v;
            }
        }
        for o in &mut out {
            *o /= r as f64;
        }
        Ok(self.push(Matrix::from_raw(1, c, out), Op::MeanRows(a)))
    }

    pub fn select_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let src = self.value(a);
        if let Some(&bad) = rows.iter().find(|&&r| r >= src.rows()) {
            return Err(Error::Dimension {
                op: "select_rows",
                left: src.shape(),
                right: (bad, 0),
            });
        }
        let c = src.cols();
        let mut data = Vec::with_capacity(rows.len() * c);
        for &r in rows {
            data.extend_from_slice(src.row(r));
        }
        let value = Matrix::from_raw(rows.len(), c, data);
        Ok(self.push(value, Op::SelectRows(a, rows.to_vec())))
    }

    pub fn row(&mut self, a: Var, index: usize) -> Result<Var> {
        self.select_rows(a, &[index])
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let src = self.value(a);
        if start > end || end > src.cols() {
            return Err(Error::Dimension {
                op: "slice_cols",
                left: src.shape(),
                right: (start, end),
            });
        }
        let w = end - start;
        let mut data = Vec::with_capacity(src.rows() * w);
        for i in 0..src.rows() {
            data.extend_from_slice(&src.row(i)[start..end]);
        }
        let value = Matrix::from_raw(src.rows(), w, data);
        Ok(self.push(value, Op::SliceCols(a, start, end)))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts.first().map_or(0, |&p| self.shape(p).0);
        if let Some(&bad) = parts.iter().find(|&&p| self.shape(p).0 != rows) {
            return Err(self.dims("concat_cols", parts[0], bad));
        }
        let total: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut data = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let value = Matrix::from_raw(rows, total, data);
        Ok(self.push(value, Op::ConcatCols(parts.to_vec())))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = parts.first().map_or(0, |&p| self.shape(p).1);
        if let Some(&bad) = parts.iter().find(|&&p| self.shape(p).1 != cols) {
            return Err(self.dims("concat_rows", parts[0], bad));
        }
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
            rows += self.shape(p).0;
        }
        let value = Matrix::from_raw(rows, cols, data);
        Ok(self.push(value, Op::ConcatRows(parts.to_vec())))
    }

    /// Scales each row to unit Euclidean norm.
    pub fn l2_normalize_rows(&mut self, a: Var) -> Result<Var> {
        let src = self.value(a);
        let (r, c) = src.shape();
        let mut norms = Vec::with_capacity(r);
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            let row = src.row(i);
            let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n <= NORM_EPSILON {
                return Err(Error::Degenerate(format!(
                    "row {i} has norm {n:e}, cannot normalize"
                )));
            }
            norms.push(n);
            data.extend(row.iter().map(|x| x / n));
        }
        let value = Matrix::from_raw(r, c, data);
        Ok(self.push(value, Op::L2NormalizeRows { x: a, norms }))
    }

    /// Reverse pass from a `1 x 1` output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if self.shape(output) != (1, 1) {
            return Err(Error::Domain(format!(
                "backward needs a scalar output, got {:?}",
                self.shape(output)
            )));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; output.0 + 1];
        grads[output.0] = Some(Matrix::scalar(1.0));
        let mut out = Gradients::default();

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => {
                    accumulate_param(&mut out, *id, g);
                }
                Op::Gather { param, rows } => {
                    let table = self.store.value(*param);
                    let entry = out
                        .grads
                        .entry(*param)
                        .or_insert_with(|| Matrix::zeros(table.rows(), table.cols()));
                    let c = table.cols();
                    for (k, &r) in rows.iter().enumerate() {
                        let dst = &mut entry.data_mut()[r * c..(r + 1) * c];
                        for (d, s) in dst.iter_mut().zip(g.row(k)) {
                            *d += s;
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    let ga = matrix::matmul_nt(&g, self.value(*b))?;
                    let gb = matrix::matmul_tn(self.value(*a), &g)?;
                    add_grad(&mut grads, *a, ga);
                    add_grad(&mut grads, *b, gb);
                }
                Op::MatMulNt(a, b) => {
                    let ga = matrix::matmul(&g, self.value(*b))?;
                    let gb = matrix::matmul_tn(&g, self.value(*a))?;
                    add_grad(&mut grads, *a, ga);
                    add_grad(&mut grads, *b, gb);
                }
                Op::Transpose(a) => add_grad(&mut grads, *a, g.transpose()),
                Op::Add(a, b) => {
                    add_grad(&mut grads, *b, g.clone());
                    add_grad(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    add_grad(&mut grads, *b, g.map(|x| -x));
                    add_grad(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = g.zip_map(self.value(*b), |x, y| x * y);
                    let gb = g.zip_map(self.value(*a), |x, y| x * y);
                    add_grad(&mut grads, *a, ga);
                    add_grad(&mut grads, *b, gb);
                }
                Op::AddRow(a, row) => {
                    let (r, c) = g.shape();
                    let mut gr = vec![0.0; c];
                    for i in 0..r {
                        for (o, v) in gr.iter_mut().zip(g.row(i)) {
                            *o += v;
                        }
                    }
                    add_grad(&mut grads, *row, Matrix::from_raw(1, c, gr));
                    add_grad(&mut grads, *a, g);
                }
                Op::MulScalarVar(a, s) => {
                    let k = self.scalar(*s);
                    let gs = matrix::dot(g.data(), self.value(*a).data());
                    add_grad(&mut grads, *s, Matrix::scalar(gs));
                    add_grad(&mut grads, *a, g.map(|x| x * k));
                }
                Op::DivScalarVar(a, s) => {
                    let k = self.scalar(*s);
                    let gs = -matrix::dot(g.data(), self.value(*a).data()) / (k * k);
                    add_grad(&mut grads, *s, Matrix::scalar(gs));
                    add_grad(&mut grads, *a, g.map(|x| x / k));
                }
                Op::Scale(a, c) => add_grad(&mut grads, *a, g.map(|x| x * c)),
                Op::MulConst(a, c) => add_grad(&mut grads, *a, g.zip_map(c, |x, y| x * y)),
                Op::ScalarAffine { s, coef } => {
                    let gs = matrix::dot(g.data(), coef.data());
                    add_grad(&mut grads, *s, Matrix::scalar(gs));
                }
                Op::Sigmoid(a) => {
                    let ga = g.zip_map(&node.value, |x, y| x * y * (1.0 - y));
                    add_grad(&mut grads, *a, ga);
                }
                Op::Tanh(a) => {
                    let ga = g.zip_map(&node.value, |x, y| x * (1.0 - y * y));
                    add_grad(&mut grads, *a, ga);
                }
                Op::Exp(a) => {
                    let ga = g.zip_map(&node.value, |x, y| x * y);
                    add_grad(&mut grads, *a, ga);
                }
                Op::Ln(a) => {
                    let ga = g.zip_map(self.value(*a), |x, y| x / y);
                    add_grad(&mut grads, *a, ga);
                }
                Op::Relu(a) => {
                    let ga = g.zip_map(self.value(*a), |x, y| if y > 0.0 { x } else { 0.0 });
                    add_grad(&mut grads, *a, ga);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let (r, c) = y.shape();
                    let mut ga = vec![0.0; r * c];
                    for i in 0..r {
                        let yr = y.row(i);
                        let gr = g.row(i);
                        let inner = matrix::dot(yr, gr);
                        for j in 0..c {
                            ga[i * c + j] = yr[j] * (gr[j] - inner);
                        }
                    }
                    add_grad(&mut grads, *a, Matrix::from_raw(r, c, ga));
                }
                Op::Sum(a) => {
                    let (r, c) = self.shape(*a);
                    add_grad(&mut grads, *a, Matrix::filled(r, c, g.item()));
                }
                Op::MeanRows(a) => {
                    let (r, c) = self.shape(*a);
                    let mut ga = Vec::with_capacity(r * c);
                    for _ in 0..r {
                        ga.extend(g.data().iter().map(|x| x / r as f64));
                    }
                    add_grad(&mut grads, *a, Matrix::from_raw(r, c, ga));
                }
                Op::SelectRows(a, rows) => {
                    let (r, c) = self.shape(*a);
                    let mut ga = Matrix::zeros(r, c);
                    for (k, &src) in rows.iter().enumerate() {
                        let dst = &mut ga.data_mut()[src * c..(src + 1) * c];
                        for (d, s) in dst.iter_mut().zip(g.row(k)) {
                            *d += s;
                        }
                    }
                    add_grad(&mut grads, *a, ga);
                }
                Op::SliceCols(a, start, end) => {
                    let (r, c) = self.shape(*a);
                    let mut ga = Matrix::zeros(r, c);
                    for i in 0..r {
                        ga.data_mut()[i * c + start..i * c + end].copy_from_slice(g.row(i));
                    }
                    add_grad(&mut grads, *a, ga);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let (r, c) = self.shape(p);
                        let mut gp = Vec::with_capacity(r * c);
                        for i in 0..r {
                            gp.extend_from_slice(&g.row(i)[offset..offset + c]);
                        }
                        offset += c;
                        add_grad(&mut grads, p, Matrix::from_raw(r, c, gp));
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let (r, c) = self.shape(p);
                        let gp = g.data()[offset * c..(offset + r) * c].to_vec();
                        offset += r;
                        add_grad(&mut grads, p, Matrix::from_raw(r, c, gp));
                    }
                }
                Op::L2NormalizeRows { x, norms } => {
                    let y = &node.value;
                    let (r, c) = y.shape();
                    let mut ga = vec![0.0; r * c];
                    for i in 0..r {
                        let yr = y.row(i);
                        let gr = g.row(i);
                        let inner = matrix::dot(yr, gr);
                        for j in 0..c {
                            ga[i * c + j] = (gr[j] - yr[j] * inner) / norms[i];
                        }
                    }
                    add_grad(&mut grads, *x, Matrix::from_raw(r, c, ga));
                }
            }
        }
        Ok(out)
    }
}

fn add_grad(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot => *slot = Some(g),
    }
}

fn accumulate_param(out: &mut Gradients, id: ParamId, g: Matrix) {
    match out.grads.get_mut(&id) {
        Some(existing) => existing.add_assign(&g),
        None => {
            out.grads.insert(id, g);
        }
    }
}
