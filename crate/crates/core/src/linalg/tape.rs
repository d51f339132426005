//! Tape-based reverse-mode differentiation over [`Matrix`] values.
//!
//! Nodes are appended in creation order, which is a topological order, so the
//! backward pass is a single reverse sweep. Each node is visited once and its
//! gradient is accumulated into its parents' buffers.
//!
//! ```
//! use nmce::linalg::{Matrix, Tape};
//!
//! let mut tape = Tape::new();
//! let x = tape.param(Matrix::from_rows(&[vec![3.0, 4.0]]).unwrap());
//! let y = tape.row_normalize(x).unwrap();
//! assert!((tape.value(y).get(0, 0) - 0.6).abs() < 1e-15);
//! ```

use crate::error::{NmceError, Result};
use crate::linalg::decomp::{cholesky_with_jitter, inverse_from_cholesky, logdet_from_cholesky};
use crate::linalg::matrix::{gemm, Operand};
use crate::linalg::Matrix;

/// Rows with a norm below this cannot be projected onto the sphere.
pub const MIN_ROW_NORM: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "slope")]
pub enum Activation {
    /// ELU with α = 1.
    Elu,
    Relu,
    LeakyRelu(f64),
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Elu => {
                if x > 0.0 {
                    x
                } else {
                    x.exp() - 1.0
                }
            }
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu(s) => {
                if x > 0.0 {
                    x
                } else {
                    s * x
                }
            }
        }
    }

    /// Derivative given the input `x` and output `y`. ELU uses 1 at x = 0.
    #[inline]
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Elu => {
                if x >= 0.0 {
                    1.0
                } else {
                    y + 1.0
                }
            }
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu(s) => {
                if x > 0.0 {
                    1.0
                } else {
                    s
                }
            }
        }
    }
}

/// Deliberate gradient corruption used by negative-control checks.
#[doc(hidden)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradFault {
    /// Backward of `logdet` returns `2·M⁻¹` instead of `M⁻¹`.
    LogdetGradient,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulTn(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    ScaleBy(Var, Var),
    AddIdentity(Var),
    Activation(Var, Activation),
    RowNormalize(Var, Vec<f64>),
    SoftmaxRows(Var, f64),
    SecondMoment(Var),
    WeightedGram(Var, Var),
    LogdetSpd(Var, Matrix),
    Sum(Var),
    Reciprocal(Var),
    ConcatRows(Var, Var),
    SliceRows(Var, usize),
    Column(Var, usize),
    ScaleRows(Var, Var),
    RowCosine(Var, Var, Vec<f64>, Vec<f64>),
}

struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. `v`, or `None` if `v` does not influence it
    /// or does not require gradients.
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Like [`Gradients::get`] but yields zeros shaped like `like`.
    pub fn get_or_zeros(&self, v: Var, like: &Matrix) -> Matrix {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Matrix::zeros(like.rows(), like.cols()))
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    fault: Option<GradFault>,
}

fn shape_err(op: &'static str, a: &Matrix, b: &Matrix) -> NmceError {
    NmceError::ShapeMismatch {
        op,
        left: a.shape(),
        right: b.shape(),
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    #[doc(hidden)]
    pub fn with_fault(fault: GradFault) -> Self {
        Tape {
            nodes: Vec::new(),
            fault: Some(fault),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A leaf that receives a gradient.
    pub fn param(&mut self, value: Matrix) -> Var {
        self.push_raw(value, Op::Leaf, true)
    }

    /// A leaf that is treated as a constant.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push_raw(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    fn push_raw(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, value: Matrix, op: Op, parents: &[Var]) -> Result<Var> {
        value.ensure_finite(name)?;
        let rg = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        Ok(self.push_raw(value, op, rg))
    }

    fn val(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.val(a).matmul(self.val(b))?;
        self.push("matmul", out, Op::MatMul(a, b), &[a, b])
    }

    /// `aᵀ·b`.
    pub fn matmul_tn(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.val(a).matmul_tn(self.val(b))?;
        self.push("matmul_tn", out, Op::MatMulTn(a, b), &[a, b])
    }

    /// Adds the 1×n row `bias` to every row of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.val(x), self.val(bias));
        if bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(shape_err("add_bias", xv, bv));
        }
        let mut out = xv.clone();
        let b = bv.data().to_vec();
        for r in 0..out.rows() {
            for (o, bb) in out.row_mut(r).iter_mut().zip(&b) {
                *o += bb;
            }
        }
        self.push("add_bias", out, Op::AddBias(x, bias), &[x, bias])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.val(a).add(self.val(b))?;
        self.push("add", out, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.val(a).sub(self.val(b))?;
        self.push("sub", out, Op::Sub(a, b), &[a, b])
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.val(a).hadamard(self.val(b))?;
        self.push("mul", out, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let out = self.val(x).scale(c)?;
        self.push("scale", out, Op::Scale(x, c), &[x])
    }

    /// Adds a constant to every entry.
    pub fn offset(&mut self, x: Var, c: f64) -> Result<Var> {
        let out = self.val(x).map(|v| v + c);
        self.push("offset", out, Op::Offset(x), &[x])
    }

    /// `s·x` where `s` is a 1×1 node.
    pub fn scale_by(&mut self, x: Var, s: Var) -> Result<Var> {
        let sv = self.val(s);
        if sv.shape() != (1, 1) {
            return Err(shape_err("scale_by", self.val(x), sv));
        }
        let out = self.val(x).scale(sv.item())?;
        self.push("scale_by", out, Op::ScaleBy(x, s), &[x, s])
    }

    /// `I + x` for square `x`.
    pub fn add_identity(&mut self, x: Var) -> Result<Var> {
        let xv = self.val(x);
        if xv.rows() != xv.cols() {
            return Err(shape_err("add_identity", xv, xv));
        }
        let mut out = xv.clone();
        for i in 0..out.rows() {
            out.set(i, i, out.get(i, i) + 1.0);
        }
        self.push("add_identity", out, Op::AddIdentity(x), &[x])
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Result<Var> {
        let out = self.val(x).map(|v| kind.apply(v));
        self.push("activation", out, Op::Activation(x, kind), &[x])
    }

    /// Projects each row onto the unit sphere.
    pub fn row_normalize(&mut self, x: Var) -> Result<Var> {
        let xv = self.val(x);
        let norms = xv.row_norms();
        if let Some((row, &norm)) = norms.iter().enumerate().find(|(_, n)| !(**n >= MIN_ROW_NORM)) {
            return Err(NmceError::ZeroRow { row, norm });
        }
        let mut out = xv.clone();
        for (r, n) in norms.iter().enumerate() {
            for v in out.row_mut(r) {
                *v /= n;
            }
        }
        self.push("row_normalize", out, Op::RowNormalize(x, norms), &[x])
    }

    /// Row-wise `softmax(x / temperature)`.
    pub fn softmax_rows(&mut self, x: Var, temperature: f64) -> Result<Var> {
        if !(temperature > 0.0) {
            return Err(NmceError::invalid("softmax temperature must be > 0"));
        }
        let xv = self.val(x);
        let mut out = Matrix::zeros(xv.rows(), xv.cols());
        for r in 0..xv.rows() {
            let row = xv.row(r);
            let mx = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v));
            let o = out.row_mut(r);
            let mut total = 0.0;
            for (oi, xi) in o.iter_mut().zip(row) {
                *oi = ((xi - mx) / temperature).exp();
                total += *oi;
            }
            for oi in o.iter_mut() {
                *oi /= total;
            }
        }
        self.push("softmax_rows", out, Op::SoftmaxRows(x, temperature), &[x])
    }

    /// Uncentered second moment `(1/m)·ZᵀZ`, exactly symmetric.
    pub fn second_moment(&mut self, z: Var) -> Result<Var> {
        let zv = self.val(z);
        if zv.rows() == 0 {
            return Err(NmceError::invalid("second_moment of an empty batch"));
        }
        let mut out = symmetric_gram(zv, None);
        let inv_m = 1.0 / zv.rows() as f64;
        for v in out.data_mut() {
            *v *= inv_m;
        }
        self.push("second_moment", out, Op::SecondMoment(z), &[z])
    }

    /// `Zᵀ·diag(w)·Z` for an m×1 weight column `w`, exactly symmetric.
    pub fn weighted_gram(&mut self, z: Var, w: Var) -> Result<Var> {
        let (zv, wv) = (self.val(z), self.val(w));
        if wv.cols() != 1 || wv.rows() != zv.rows() {
            return Err(shape_err("weighted_gram", zv, wv));
        }
        let out = symmetric_gram(zv, Some(wv.data()));
        self.push("weighted_gram", out, Op::WeightedGram(z, w), &[z, w])
    }

    /// Log-determinant of the symmetric part of an SPD matrix, via Cholesky.
    pub fn logdet_spd(&mut self, m: Var) -> Result<Var> {
        let mv = self.val(m);
        if mv.rows() != mv.cols() {
            return Err(shape_err("logdet_spd", mv, mv));
        }
        let n = mv.rows();
        let sym = Matrix::from_fn(n, n, |i, j| 0.5 * (mv.get(i, j) + mv.get(j, i)));
        let l = cholesky_with_jitter(&sym)?;
        let ld = logdet_from_cholesky(&l);
        let inv = inverse_from_cholesky(&l);
        self.push("logdet_spd", Matrix::scalar(ld), Op::LogdetSpd(m, inv), &[m])
    }

    /// Sum of all entries, as a 1×1 node.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.val(x).sum();
        self.push("sum", Matrix::scalar(s), Op::Sum(x), &[x])
    }

    pub fn reciprocal(&mut self, x: Var) -> Result<Var> {
        let out = self.val(x).map(|v| 1.0 / v);
        self.push("reciprocal", out, Op::Reciprocal(x), &[x])
    }

    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.val(a).concat_rows(self.val(b))?;
        self.push("concat_rows", out, Op::ConcatRows(a, b), &[a, b])
    }

    /// Rows `start..end` of `x`.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let xv = self.val(x);
        if start > end || end > xv.rows() {
            return Err(NmceError::invalid(format!(
                "slice_rows {start}..{end} out of range for {} rows",
                xv.rows()
            )));
        }
        let out = xv.slice_rows(start, end);
        self.push("slice_rows", out, Op::SliceRows(x, start), &[x])
    }

    /// Column `j` as an m×1 node.
    pub fn column(&mut self, x: Var, j: usize) -> Result<Var> {
        let xv = self.val(x);
        if j >= xv.cols() {
            return Err(NmceError::invalid(format!(
                "column {j} out of range for {} columns",
                xv.cols()
            )));
        }
        let out = Matrix::column_vector(&xv.column(j));
        self.push("column", out, Op::Column(x, j), &[x])
    }

    /// `diag(w)·x` for an m×1 column `w`.
    pub fn scale_rows(&mut self, x: Var, w: Var) -> Result<Var> {
        let (xv, wv) = (self.val(x), self.val(w));
        if wv.cols() != 1 || wv.rows() != xv.rows() {
            return Err(shape_err("scale_rows", xv, wv));
        }
        let mut out = xv.clone();
        for r in 0..out.rows() {
            let s = wv.get(r, 0);
            for v in out.row_mut(r) {
                *v *= s;
            }
        }
        self.push("scale_rows", out, Op::ScaleRows(x, w), &[x, w])
    }

    /// Cosine similarity between matching rows of `a` and `b`, as an m×1 column.
    pub fn row_cosine(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.val(a), self.val(b));
        if av.shape() != bv.shape() {
            return Err(shape_err("row_cosine", av, bv));
        }
        let na = av.row_norms();
        let nb = bv.row_norms();
        for (row, n) in na.iter().chain(&nb).enumerate() {
            if !(*n >= MIN_ROW_NORM) {
                return Err(NmceError::ZeroRow {
                    row: row % av.rows().max(1),
                    norm: *n,
                });
            }
        }
        let cos: Vec<f64> = (0..av.rows())
            .map(|r| dot(av.row(r), bv.row(r)) / (na[r] * nb[r]))
            .collect();
        let out = Matrix::column_vector(&cos);
        self.push("row_cosine", out, Op::RowCosine(a, b, na, nb), &[a, b])
    }

    /// Reverse sweep from the 1×1 node `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.val(loss);
        if lv.shape() != (1, 1) {
            return Err(NmceError::invalid(format!(
                "backward needs a scalar loss, got {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::scalar(1.0));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.requires_grad {
                self.propagate(idx, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }
        for g in grads.iter().flatten() {
            g.ensure_finite("backward")?;
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, idx: usize, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.val(*a), self.val(*b));
                if self.wants(*a) {
                    let buf = slot(grads, *a, av);
                    gemm(1.0, Operand::plain(g), Operand::transposed(bv), 1.0, buf);
                }
                if self.wants(*b) {
                    let buf = slot(grads, *b, bv);
                    gemm(1.0, Operand::transposed(av), Operand::plain(g), 1.0, buf);
                }
            }
            Op::MatMulTn(a, b) => {
                // out = aᵀb: da = b·gᵀ, db = a·g
                let (av, bv) = (self.val(*a), self.val(*b));
                if self.wants(*a) {
                    let buf = slot(grads, *a, av);
                    gemm(1.0, Operand::plain(bv), Operand::transposed(g), 1.0, buf);
                }
                if self.wants(*b) {
                    let buf = slot(grads, *b, bv);
                    gemm(1.0, Operand::plain(av), Operand::plain(g), 1.0, buf);
                }
            }
            Op::AddBias(x, b) => {
                if self.wants(*x) {
                    slot(grads, *x, g).add_assign_unchecked(g);
                }
                if self.wants(*b) {
                    let bv = self.val(*b);
                    let buf = slot(grads, *b, bv);
                    for r in 0..g.rows() {
                        for (o, gi) in buf.data_mut().iter_mut().zip(g.row(r)) {
                            *o += gi;
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                if self.wants(*a) {
                    slot(grads, *a, g).add_assign_unchecked(g);
                }
                if self.wants(*b) {
                    slot(grads, *b, g).add_assign_unchecked(g);
                }
            }
            Op::Sub(a, b) => {
                if self.wants(*a) {
                    slot(grads, *a, g).add_assign_unchecked(g);
                }
                if self.wants(*b) {
                    axpy(slot(grads, *b, g), -1.0, g);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.val(*a), self.val(*b));
                if self.wants(*a) {
                    let buf = slot(grads, *a, av);
                    for ((o, gi), bi) in buf.data_mut().iter_mut().zip(g.data()).zip(bv.data()) {
                        *o += gi * bi;
                    }
                }
                if self.wants(*b) {
                    let buf = slot(grads, *b, bv);
                    for ((o, gi), ai) in buf.data_mut().iter_mut().zip(g.data()).zip(av.data()) {
                        *o += gi * ai;
                    }
                }
            }
            Op::Scale(x, c) => {
                if self.wants(*x) {
                    axpy(slot(grads, *x, g), *c, g);
                }
            }
            Op::Offset(x) => {
                if self.wants(*x) {
                    slot(grads, *x, g).add_assign_unchecked(g);
                }
            }
            Op::ScaleBy(x, s) => {
                let (xv, sv) = (self.val(*x), self.val(*s));
                if self.wants(*x) {
                    axpy(slot(grads, *x, g), sv.item(), g);
                }
                if self.wants(*s) {
                    let d = dot(xv.data(), g.data());
                    slot(grads, *s, sv).data_mut()[0] += d;
                }
            }
            Op::AddIdentity(x) => {
                if self.wants(*x) {
                    slot(grads, *x, g).add_assign_unchecked(g);
                }
            }
            Op::Activation(x, kind) => {
                if self.wants(*x) {
                    let xv = self.val(*x);
                    let y = &node.value;
                    let buf = slot(grads, *x, xv);
                    for (((o, gi), xi), yi) in buf
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(xv.data())
                        .zip(y.data())
                    {
                        *o += gi * kind.derivative(*xi, *yi);
                    }
                }
            }
            Op::RowNormalize(x, norms) => {
                if self.wants(*x) {
                    // dx = (g − y·(y·g)) / ‖x‖
                    let y = &node.value;
                    let buf = slot(grads, *x, y);
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let gr = g.row(r);
                        let yg = dot(yr, gr);
                        let n = norms[r];
                        for ((o, yi), gi) in buf.row_mut(r).iter_mut().zip(yr).zip(gr) {
                            *o += (gi - yi * yg) / n;
                        }
                    }
                }
            }
            Op::SoftmaxRows(x, t) => {
                if self.wants(*x) {
                    let y = &node.value;
                    let buf = slot(grads, *x, y);
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let gr = g.row(r);
                        let yg = dot(yr, gr);
                        for ((o, yi), gi) in buf.row_mut(r).iter_mut().zip(yr).zip(gr) {
                            *o += yi * (gi - yg) / t;
                        }
                    }
                }
            }
            Op::SecondMoment(z) => {
                if self.wants(*z) {
                    // dZ = (1/m)·Z·(G + Gᵀ)
                    let zv = self.val(*z);
                    let gs = symmetrized(g);
                    let buf = slot(grads, *z, zv);
                    gemm(
                        1.0 / zv.rows() as f64,
                        Operand::plain(zv),
                        Operand::plain(&gs),
                        1.0,
                        buf,
                    );
                }
            }
            Op::WeightedGram(z, w) => {
                let (zv, wv) = (self.val(*z), self.val(*w));
                let gs = symmetrized(g);
                // Z·(G + Gᵀ), row i then carries the factor w_i
                let mut zg = Matrix::zeros(zv.rows(), zv.cols());
                gemm(1.0, Operand::plain(zv), Operand::plain(&gs), 0.0, &mut zg);
                if self.wants(*z) {
                    let buf = slot(grads, *z, zv);
                    for r in 0..zv.rows() {
                        let s = wv.get(r, 0);
                        for (o, v) in buf.row_mut(r).iter_mut().zip(zg.row(r)) {
                            *o += s * v;
                        }
                    }
                }
                if self.wants(*w) {
                    // dw_i = z_iᵀ G z_i = ½ z_i·(Z(G+Gᵀ))_i
                    let buf = slot(grads, *w, wv);
                    for r in 0..zv.rows() {
                        buf.data_mut()[r] += 0.5 * dot(zv.row(r), zg.row(r));
                    }
                }
            }
            Op::LogdetSpd(m, inv) => {
                if self.wants(*m) {
                    let mut c = g.item();
                    if self.fault == Some(GradFault::LogdetGradient) {
                        c *= 2.0;
                    }
                    axpy(slot(grads, *m, inv), c, inv);
                }
            }
            Op::Sum(x) => {
                if self.wants(*x) {
                    let c = g.item();
                    for o in slot(grads, *x, self.val(*x)).data_mut() {
                        *o += c;
                    }
                }
            }
            Op::Reciprocal(x) => {
                if self.wants(*x) {
                    let y = &node.value;
                    let buf = slot(grads, *x, y);
                    for ((o, gi), yi) in buf.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                        *o -= gi * yi * yi;
                    }
                }
            }
            Op::ConcatRows(a, b) => {
                let ra = self.val(*a).rows();
                if self.wants(*a) {
                    let top = g.slice_rows(0, ra);
                    slot(grads, *a, &top).add_assign_unchecked(&top);
                }
                if self.wants(*b) {
                    let bottom = g.slice_rows(ra, g.rows());
                    slot(grads, *b, &bottom).add_assign_unchecked(&bottom);
                }
            }
            Op::SliceRows(x, start) => {
                if self.wants(*x) {
                    let xv = self.val(*x);
                    let cols = xv.cols();
                    let buf = slot(grads, *x, xv);
                    let dst = &mut buf.data_mut()[start * cols..start * cols + g.len()];
                    for (o, gi) in dst.iter_mut().zip(g.data()) {
                        *o += gi;
                    }
                }
            }
            Op::Column(x, j) => {
                if self.wants(*x) {
                    let xv = self.val(*x);
                    let buf = slot(grads, *x, xv);
                    for r in 0..g.rows() {
                        let v = buf.get(r, *j) + g.get(r, 0);
                        buf.set(r, *j, v);
                    }
                }
            }
            Op::ScaleRows(x, w) => {
                let (xv, wv) = (self.val(*x), self.val(*w));
                if self.wants(*x) {
                    let buf = slot(grads, *x, xv);
                    for r in 0..xv.rows() {
                        let s = wv.get(r, 0);
                        for (o, gi) in buf.row_mut(r).iter_mut().zip(g.row(r)) {
                            *o += s * gi;
                        }
                    }
                }
                if self.wants(*w) {
                    let buf = slot(grads, *w, wv);
                    for r in 0..xv.rows() {
                        buf.data_mut()[r] += dot(xv.row(r), g.row(r));
                    }
                }
            }
            Op::RowCosine(a, b, na, nb) => {
                // dc/da = b/(|a||b|) − c·a/|a|²
                let (av, bv) = (self.val(*a), self.val(*b));
                let cos = &node.value;
                for (target, this, other, nt, no) in [(*a, av, bv, na, nb), (*b, bv, av, nb, na)] {
                    if !self.wants(target) {
                        continue;
                    }
                    let buf = slot(grads, target, this);
                    for r in 0..this.rows() {
                        let gr = g.get(r, 0);
                        let c = cos.get(r, 0);
                        let inv_prod = 1.0 / (nt[r] * no[r]);
                        let inv_sq = 1.0 / (nt[r] * nt[r]);
                        for ((o, ti), oi) in buf.row_mut(r).iter_mut().zip(this.row(r)).zip(other.row(r)) {
                            *o += gr * (oi * inv_prod - c * ti * inv_sq);
                        }
                    }
                }
            }
        }
    }
}

fn slot<'g>(grads: &'g mut [Option<Matrix>], v: Var, like: &Matrix) -> &'g mut Matrix {
    grads[v.0].get_or_insert_with(|| Matrix::zeros(like.rows(), like.cols()))
}

fn axpy(dst: &mut Matrix, a: f64, x: &Matrix) {
    for (d, v) in dst.data_mut().iter_mut().zip(x.data()) {
        *d += a * v;
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn symmetrized(g: &Matrix) -> Matrix {
    Matrix::from_fn(g.rows(), g.cols(), |i, j| g.get(i, j) + g.get(j, i))
}

/// `Zᵀ·diag(w)·Z`, computed on the upper triangle and mirrored.
fn symmetric_gram(z: &Matrix, w: Option<&[f64]>) -> Matrix {
    let d = z.cols();
    let mut out = Matrix::zeros(d, d);
    let acc = out.data_mut();
    for r in 0..z.rows() {
        let row = z.row(r);
        let s = w.map_or(1.0, |w| w[r]);
        for i in 0..d {
            let zi = s * row[i];
            for j in i..d {
                acc[i * d + j] += zi * row[j];
            }
        }
    }
    for i in 0..d {
        for j in 0..i {
            acc[i * d + j] = acc[j * d + i];
        }
    }
    out
}
