//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! Forward evaluation records one node per operation onto a tape; `backward`
//! walks the tape in reverse and accumulates adjoints into every node that
//! (transitively) depends on a leaf. The filter pipeline records transition,
//! state update, weighting, the soft-resampling ratio, readout and the
//! classification loss on a single tape, so one backward pass yields exact
//! gradients for all model parameters.
//!
//! Scalars are 1×1 matrices and row vectors are 1×d; nothing here is
//! generic over shape beyond that.

use ndarray::Array2;

use crate::error::{Error, Result};

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    /// Constant or parameter leaf; no inputs.
    Value,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    /// Elementwise product.
    Mul(usize, usize),
    /// Elementwise quotient.
    Div(usize, usize),
    /// (n×d) + broadcast (1×d) row.
    AddRow(usize, usize),
    /// Tensor scaled by a 1×1 tape scalar.
    MulScalar(usize, usize),
    /// Tensor divided by a 1×1 tape scalar.
    DivScalar(usize, usize),
    /// Tensor scaled by an untracked constant.
    Scale(usize, f64),
    /// Tensor shifted by an untracked constant; the shift itself is not
    /// needed in the backward pass.
    Offset(usize),
    Relu(usize),
    Exp(usize),
    Ln(usize),
    /// max(x, c) with constant c.
    ClampMin(usize, f64),
    /// Column means over rows: (n×d) → (1×d).
    RowMean(usize),
    /// Column maxima over rows: (n×d) → (1×d); records argmax rows.
    RowMax(usize, Vec<usize>),
    /// Horizontal concatenation of two row blocks with equal row count.
    ConcatCols(usize, usize),
    /// Sum of all entries → (1×1).
    SumAll(usize),
    /// Row-wise softmax of a (1×c) vector.
    Softmax(usize),
    /// Extract column j of a (1×c) vector → (1×1).
    TakeCol(usize, usize),
}

struct Node {
    value: Array2<f64>,
    op: Op,
    needs_grad: bool,
}

/// Recorded computation graph.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Array2<f64>>>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<f64>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Record a constant; no gradient flows into it.
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Value, false)
    }

    /// Record a 1×1 constant.
    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Array2::from_elem((1, 1), value))
    }

    /// Record a differentiable leaf (a model parameter).
    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Value, true)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    /// Scalar payload of a 1×1 node.
    pub fn scalar_value(&self, v: Var) -> f64 {
        debug_assert_eq!(self.nodes[v.0].value.dim(), (1, 1));
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        let needs = self.needs(a) || self.needs(b);
        self.push(value, Op::MatMul(a.0, b.0), needs)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        debug_assert_eq!(self.value(a).dim(), self.value(b).dim());
        let value = self.value(a) + self.value(b);
        let needs = self.needs(a) || self.needs(b);
        self.push(value, Op::Add(a.0, b.0), needs)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        debug_assert_eq!(self.value(a).dim(), self.value(b).dim());
        let value = self.value(a) - self.value(b);
        let needs = self.needs(a) || self.needs(b);
        self.push(value, Op::Sub(a.0, b.0), needs)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        debug_assert_eq!(self.value(a).dim(), self.value(b).dim());
        let value = self.value(a) * self.value(b);
        let needs = self.needs(a) || self.needs(b);
        self.push(value, Op::Mul(a.0, b.0), needs)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        debug_assert_eq!(self.value(a).dim(), self.value(b).dim());
        let value = self.value(a) / self.value(b);
        let needs = self.needs(a) || self.needs(b);
        self.push(value, Op::Div(a.0, b.0), needs)
    }

    /// Broadcast-add a (1×d) row to every row of an (n×d) matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let mut value = self.value(a).clone();
        let r = self.value(row).clone();
        for mut out in value.rows_mut() {
            out += &r.row(0);
        }
        let needs = self.needs(a) || self.needs(row);
        self.push(value, Op::AddRow(a.0, row.0), needs)
    }

    /// Scale a tensor by a 1×1 tape scalar.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Var {
        let sv = self.scalar_value(s);
        let value = self.value(a) * sv;
        let needs = self.needs(a) || self.needs(s);
        self.push(value, Op::MulScalar(a.0, s.0), needs)
    }

    /// Divide a tensor by a 1×1 tape scalar.
    pub fn div_scalar(&mut self, a: Var, s: Var) -> Var {
        let sv = self.scalar_value(s);
        let value = self.value(a) / sv;
        let needs = self.needs(a) || self.needs(s);
        self.push(value, Op::DivScalar(a.0, s.0), needs)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a) * c;
        let needs = self.needs(a);
        self.push(value, Op::Scale(a.0, c), needs)
    }

    pub fn offset(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a) + c;
        let needs = self.needs(a);
        self.push(value, Op::Offset(a.0), needs)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| x.max(0.0));
        let needs = self.needs(a);
        self.push(value, Op::Relu(a.0), needs)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::exp);
        let needs = self.needs(a);
        self.push(value, Op::Exp(a.0), needs)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::ln);
        let needs = self.needs(a);
        self.push(value, Op::Ln(a.0), needs)
    }

    pub fn clamp_min(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).mapv(|x| x.max(c));
        let needs = self.needs(a);
        self.push(value, Op::ClampMin(a.0, c), needs)
    }

    pub fn row_mean(&mut self, a: Var) -> Var {
        let src = self.value(a);
        let n = src.nrows() as f64;
        let mut value = Array2::<f64>::zeros((1, src.ncols()));
        for j in 0..src.ncols() {
            value[[0, j]] = src.column(j).sum() / n;
        }
        let needs = self.needs(a);
        self.push(value, Op::RowMean(a.0), needs)
    }

    pub fn row_max(&mut self, a: Var) -> Var {
        let src = self.value(a);
        let mut value = Array2::<f64>::zeros((1, src.ncols()));
        let mut argmax = vec![0usize; src.ncols()];
        for j in 0..src.ncols() {
            let mut best = src[[0, j]];
            let mut best_i = 0usize;
            for i in 1..src.nrows() {
                if src[[i, j]] > best {
                    best = src[[i, j]];
                    best_i = i;
                }
            }
            value[[0, j]] = best;
            argmax[j] = best_i;
        }
        let needs = self.needs(a);
        self.push(value, Op::RowMax(a.0, argmax), needs)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let left = self.value(a);
        let right = self.value(b);
        let rows = left.nrows();
        let mut value = Array2::<f64>::zeros((rows, left.ncols() + right.ncols()));
        for i in 0..rows {
            for j in 0..left.ncols() {
                value[[i, j]] = left[[i, j]];
            }
            for j in 0..right.ncols() {
                value[[i, left.ncols() + j]] = right[[i, j]];
            }
        }
        let needs = self.needs(a) || self.needs(b);
        self.push(value, Op::ConcatCols(a.0, b.0), needs)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let value = Array2::from_elem((1, 1), self.value(a).sum());
        let needs = self.needs(a);
        self.push(value, Op::SumAll(a.0), needs)
    }

    /// Numerically stable softmax of a (1×c) row.
    pub fn softmax(&mut self, a: Var) -> Var {
        let src = self.value(a);
        let max = src.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps = src.mapv(|x| (x - max).exp());
        let total: f64 = exps.sum();
        let value = exps / total;
        let needs = self.needs(a);
        self.push(value, Op::Softmax(a.0), needs)
    }

    pub fn take_col(&mut self, a: Var, j: usize) -> Var {
        let value = Array2::from_elem((1, 1), self.value(a)[[0, j]]);
        let needs = self.needs(a);
        self.push(value, Op::TakeCol(a.0, j), needs)
    }

    /// Accumulate adjoints for every differentiable node reachable from
    /// `loss`, which must be a 1×1 node.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::invariant("no recorded computation"));
        }
        if loss.0 >= self.nodes.len() {
            return Err(Error::invariant("loss node is not on the tape"));
        }
        if self.nodes[loss.0].value.dim() != (1, 1) {
            return Err(Error::invariant("backward requires a scalar loss"));
        }
        self.grads.clear();
        self.grads.resize_with(self.nodes.len(), || None);
        self.grads[loss.0] = Some(Array2::from_elem((1, 1), 1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            // keep the adjoint available for callers
            let op = self.nodes[i].op.clone();
            self.grads[i] = Some(g);
            let g = self.grads[i].as_ref().unwrap().clone();
            match op {
                Op::Value => {}
                Op::MatMul(a, b) => {
                    if self.nodes[a].needs_grad {
                        let gb = g.dot(&self.nodes[b].value.t());
                        self.accumulate(a, gb);
                    }
                    if self.nodes[b].needs_grad {
                        let ga = self.nodes[a].value.t().dot(&g);
                        self.accumulate(b, ga);
                    }
                }
                Op::Add(a, b) => {
                    if self.nodes[a].needs_grad {
                        self.accumulate(a, g.clone());
                    }
                    if self.nodes[b].needs_grad {
                        self.accumulate(b, g);
                    }
                }
                Op::Sub(a, b) => {
                    if self.nodes[a].needs_grad {
                        self.accumulate(a, g.clone());
                    }
                    if self.nodes[b].needs_grad {
                        self.accumulate(b, -&g);
                    }
                }
                Op::Mul(a, b) => {
                    if self.nodes[a].needs_grad {
                        let da = &g * &self.nodes[b].value;
                        self.accumulate(a, da);
                    }
                    if self.nodes[b].needs_grad {
                        let db = &g * &self.nodes[a].value;
                        self.accumulate(b, db);
                    }
                }
                Op::Div(a, b) => {
                    if self.nodes[a].needs_grad {
                        let da = &g / &self.nodes[b].value;
                        self.accumulate(a, da);
                    }
                    if self.nodes[b].needs_grad {
                        let bv = &self.nodes[b].value;
                        let db = -&g * &self.nodes[a].value / (bv * bv);
                        self.accumulate(b, db);
                    }
                }
                Op::AddRow(a, row) => {
                    if self.nodes[a].needs_grad {
                        self.accumulate(a, g.clone());
                    }
                    if self.nodes[row].needs_grad {
                        let mut dr = Array2::<f64>::zeros((1, g.ncols()));
                        for r in g.rows() {
                            for j in 0..g.ncols() {
                                dr[[0, j]] += r[j];
                            }
                        }
                        self.accumulate(row, dr);
                    }
                }
                Op::MulScalar(a, s) => {
                    let sv = self.nodes[s].value[[0, 0]];
                    if self.nodes[a].needs_grad {
                        self.accumulate(a, &g * sv);
                    }
                    if self.nodes[s].needs_grad {
                        let ds = (&g * &self.nodes[a].value).sum();
                        self.accumulate(s, Array2::from_elem((1, 1), ds));
                    }
                }
                Op::DivScalar(a, s) => {
                    let sv = self.nodes[s].value[[0, 0]];
                    if self.nodes[a].needs_grad {
                        self.accumulate(a, &g / sv);
                    }
                    if self.nodes[s].needs_grad {
                        let ds = -(&g * &self.nodes[a].value).sum() / (sv * sv);
                        self.accumulate(s, Array2::from_elem((1, 1), ds));
                    }
                }
                Op::Scale(a, c) => {
                    if self.nodes[a].needs_grad {
                        self.accumulate(a, &g * c);
                    }
                }
                Op::Offset(a) => {
                    if self.nodes[a].needs_grad {
                        self.accumulate(a, g);
                    }
                }
                Op::Relu(a) => {
                    if self.nodes[a].needs_grad {
                        let mask = self.nodes[a].value.mapv(|x| if x > 0.0 { 1.0 } else { 0.0 });
                        self.accumulate(a, &g * &mask);
                    }
                }
                Op::Exp(a) => {
                    if self.nodes[a].needs_grad {
                        let da = &g * &self.nodes[i].value;
                        self.accumulate(a, da);
                    }
                }
                Op::Ln(a) => {
                    if self.nodes[a].needs_grad {
                        let da = &g / &self.nodes[a].value;
                        self.accumulate(a, da);
                    }
                }
                Op::ClampMin(a, c) => {
                    if self.nodes[a].needs_grad {
                        let mask = self.nodes[a].value.mapv(|x| if x > c { 1.0 } else { 0.0 });
                        self.accumulate(a, &g * &mask);
                    }
                }
                Op::RowMean(a) => {
                    if self.nodes[a].needs_grad {
                        let (n, d) = self.nodes[a].value.dim();
                        let mut da = Array2::<f64>::zeros((n, d));
                        for i2 in 0..n {
                            for j in 0..d {
                                da[[i2, j]] = g[[0, j]] / n as f64;
                            }
                        }
                        self.accumulate(a, da);
                    }
                }
                Op::RowMax(a, ref argmax) => {
                    if self.nodes[a].needs_grad {
                        let (n, d) = self.nodes[a].value.dim();
                        let mut da = Array2::<f64>::zeros((n, d));
                        for j in 0..d {
                            da[[argmax[j], j]] = g[[0, j]];
                        }
                        self.accumulate(a, da);
                    }
                }
                Op::ConcatCols(a, b) => {
                    let ca = self.nodes[a].value.ncols();
                    if self.nodes[a].needs_grad {
                        let da = g.slice(ndarray::s![.., ..ca]).to_owned();
                        self.accumulate(a, da);
                    }
                    if self.nodes[b].needs_grad {
                        let db = g.slice(ndarray::s![.., ca..]).to_owned();
                        self.accumulate(b, db);
                    }
                }
                Op::SumAll(a) => {
                    if self.nodes[a].needs_grad {
                        let da = Array2::from_elem(self.nodes[a].value.dim(), g[[0, 0]]);
                        self.accumulate(a, da);
                    }
                }
                Op::Softmax(a) => {
                    if self.nodes[a].needs_grad {
                        let s = &self.nodes[i].value;
                        let dot: f64 = (&g * s).sum();
                        let da = s * &(&g - dot);
                        self.accumulate(a, da);
                    }
                }
                Op::TakeCol(a, j) => {
                    if self.nodes[a].needs_grad {
                        let mut da = Array2::<f64>::zeros(self.nodes[a].value.dim());
                        da[[0, j]] = g[[0, 0]];
                        self.accumulate(a, da);
                    }
                }
            }
        }
        Ok(())
    }

    fn accumulate(&mut self, idx: usize, delta: Array2<f64>) {
        match &mut self.grads[idx] {
            Some(g) => *g += &delta,
            slot @ None => *slot = Some(delta),
        }
    }

    /// Adjoint of a node after `backward`; `None` when no gradient reached it.
    pub fn grad(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}
