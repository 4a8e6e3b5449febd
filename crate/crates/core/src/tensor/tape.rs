//! Reverse-mode differentiation over a recorded list of operations.
//!
//! Nodes are appended in evaluation order, so a node's inputs always have
//! smaller indices than the node itself. [`Tape::backward`] walks the list
//! once in reverse.

use std::fmt;
use std::rc::Rc;

use crate::error::{Error, Result};

use super::kernels::{self, MatRef};
use super::special::{digamma, lgamma, sigmoid, softplus};
use super::{SparseMatrix, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Elementwise kinds. `Log`, `Lgamma` and `Recip` clamp their argument from
/// below at `floor`; the clamped region has zero derivative.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Elementwise {
    Relu,
    Sigmoid,
    Exp,
    Log { floor: f64 },
    Lgamma { floor: f64 },
    Softplus,
    Square,
    Negate,
    AddConst(f64),
    MulConst(f64),
    Recip { floor: f64 },
    Clamp { lo: f64, hi: f64 },
}

/// Default lower clamp for log and division arguments.
pub const ARG_FLOOR: f64 = 1e-10;

impl Elementwise {
    pub const LOG: Elementwise = Elementwise::Log { floor: ARG_FLOOR };
    pub const LGAMMA: Elementwise = Elementwise::Lgamma { floor: ARG_FLOOR };

    fn apply(self, x: f64) -> f64 {
        match self {
            Elementwise::Relu => x.max(0.0),
            Elementwise::Sigmoid => sigmoid(x),
            Elementwise::Exp => x.exp(),
            Elementwise::Log { floor } => x.max(floor).ln(),
            Elementwise::Lgamma { floor } => lgamma(x.max(floor)),
            Elementwise::Softplus => softplus(x),
            Elementwise::Square => x * x,
            Elementwise::Negate => -x,
            Elementwise::AddConst(c) => x + c,
            Elementwise::MulConst(c) => x * c,
            Elementwise::Recip { floor } => 1.0 / x.max(floor),
            Elementwise::Clamp { lo, hi } => x.clamp(lo, hi),
        }
    }

    /// Derivative given input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Elementwise::Relu => f64::from(u8::from(x > 0.0)),
            Elementwise::Sigmoid => y * (1.0 - y),
            Elementwise::Exp => y,
            Elementwise::Log { floor } => {
                if x >= floor {
                    1.0 / x
                } else {
                    0.0
                }
            }
            Elementwise::Lgamma { floor } => {
                if x >= floor {
                    digamma(x)
                } else {
                    0.0
                }
            }
            Elementwise::Softplus => sigmoid(x),
            Elementwise::Square => 2.0 * x,
            Elementwise::Negate => -1.0,
            Elementwise::AddConst(_) => 1.0,
            Elementwise::MulConst(c) => c,
            Elementwise::Recip { floor } => {
                if x >= floor {
                    -y * y
                } else {
                    0.0
                }
            }
            Elementwise::Clamp { lo, hi } => f64::from(u8::from(x >= lo && x <= hi)),
        }
    }

    fn name(self) -> &'static str {
        match self {
            Elementwise::Relu => "relu",
            Elementwise::Sigmoid => "sigmoid",
            Elementwise::Exp => "exp",
            Elementwise::Log { .. } => "log",
            Elementwise::Lgamma { .. } => "lgamma",
            Elementwise::Softplus => "softplus",
            Elementwise::Square => "square",
            Elementwise::Negate => "negate",
            Elementwise::AddConst(_) => "add_const",
            Elementwise::MulConst(_) => "mul_const",
            Elementwise::Recip { .. } => "recip",
            Elementwise::Clamp { .. } => "clamp",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binary {
    Add,
    Sub,
    Mul,
    /// Divisor clamped from below at [`ARG_FLOOR`].
    Div,
}

/// A fused operation with a hand-written backward pass.
pub trait CustomOp {
    fn name(&self) -> &'static str;

    /// Gradients for each input given the upstream gradient `g` of the
    /// output. `None` means "no contribution".
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, g: &Tensor) -> Vec<Option<Tensor>>;
}

enum Op {
    Leaf,
    Matmul { a: Var, b: Var, trans_b: bool },
    Spmm { sparse: Rc<SparseMatrix>, b: Var, values: Option<Var> },
    Unary { kind: Elementwise, a: Var },
    Binary { kind: Binary, a: Var, b: Var },
    Sum(Var),
    Mean(Var),
    RowSum(Var),
    RowSoftmax { a: Var, temperature: f64 },
    RowLogSumExp(Var),
    RowNormalize { a: Var, floor: f64 },
    StraightThrough { soft: Var },
    Transpose(Var),
    Diag(Var),
    Custom { inputs: Vec<Var>, op: Box<dyn CustomOp> },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    trainable: bool,
}

/// Ordered record of operations for one forward/backward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape").field("nodes", &self.nodes.len()).finish()
    }
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `var`; zeros when the loss does not depend on it.
    pub fn get(&self, var: Var) -> Tensor {
        match &self.grads[var.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[var.0]),
        }
    }

    pub fn take(&mut self, var: Var) -> Tensor {
        self.grads[var.0].take().unwrap_or_else(|| Tensor::zeros(&self.shapes[var.0]))
    }

    pub fn contains(&self, var: Var) -> bool {
        self.grads[var.0].is_some()
    }
}

fn broadcast_dims(a: (usize, usize), b: (usize, usize)) -> Option<(usize, usize)> {
    let dim = |x: usize, y: usize| match (x, y) {
        _ if x == y => Some(x),
        (1, y) => Some(y),
        (x, 1) => Some(x),
        _ => None,
    };
    Some((dim(a.0, b.0)?, dim(a.1, b.1)?))
}

/// Sum `g` (shape `out`) down to shape `target` over broadcast axes.
fn reduce_to(g: &Tensor, target: &[usize], target_dims: (usize, usize)) -> Tensor {
    let (gr, gc) = g.dims2();
    if (gr, gc) == target_dims {
        return Tensor::new(target.to_vec(), g.data().to_vec()).expect("same size");
    }
    let (tr, tc) = target_dims;
    let mut out = vec![0.0; tr * tc];
    for i in 0..gr {
        let oi = if tr == 1 { 0 } else { i };
        for j in 0..gc {
            let oj = if tc == 1 { 0 } else { j };
            out[oi * tc + oj] += g.data()[i * gc + j];
        }
    }
    Tensor::new(target.to_vec(), out).expect("target size")
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad, trainable: false });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dims2()
    }

    /// Records a trainable leaf.
    pub fn parameter(&mut self, value: Tensor) -> Var {
        let v = self.push(value, Op::Leaf, true);
        self.nodes[v.0].trainable = true;
        v
    }

    /// Records a constant leaf; no gradient flows into it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn leaf(&mut self, value: Tensor, trainable: bool) -> Var {
        if trainable {
            self.parameter(value)
        } else {
            self.constant(value)
        }
    }

    /// `a * b`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `a * bᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (ar, ac) = self.dims(a);
        let (br, bc) = self.dims(b);
        let bref = MatRef::new(self.value(b).data(), br, bc);
        let bref = if trans_b { bref.t() } else { bref };
        if ac != bref.rows {
            return Err(Error::shape(
                "matmul",
                format!("{ar}x{ac} * {}x{}", bref.rows, bref.cols),
            ));
        }
        let out_cols = bref.cols;
        let data = kernels::matmul(MatRef::new(self.value(a).data(), ar, ac), bref);
        let value = Tensor::from_rows(ar, out_cols, data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Matmul { a, b, trans_b }, rg))
    }

    /// Sparse-dense product with a constant sparse operand.
    pub fn spmm(&mut self, sparse: Rc<SparseMatrix>, b: Var) -> Result<Var> {
        self.spmm_impl(sparse, b, None)
    }

    /// Sparse-dense product where the sparse entry values come from `values`
    /// (a vector of length `nnz`, in CSR order) and may be trainable.
    pub fn spmm_with_values(&mut self, pattern: Rc<SparseMatrix>, values: Var, b: Var) -> Result<Var> {
        if self.value(values).len() != pattern.nnz() {
            return Err(Error::shape(
                "spmm",
                format!("{} values for {} entries", self.value(values).len(), pattern.nnz()),
            ));
        }
        self.spmm_impl(pattern, b, Some(values))
    }

    fn spmm_impl(&mut self, sparse: Rc<SparseMatrix>, b: Var, values: Option<Var>) -> Result<Var> {
        let (br, bc) = self.dims(b);
        if sparse.cols() != br {
            return Err(Error::shape(
                "spmm",
                format!("{}x{} * {br}x{bc}", sparse.rows(), sparse.cols()),
            ));
        }
        let vals = match values {
            Some(v) => self.value(v).data(),
            None => sparse.values(),
        };
        let mut out = vec![0.0; sparse.rows() * bc];
        sparse.matmul_into(vals, self.value(b).data(), bc, &mut out);
        let value = Tensor::from_rows(sparse.rows(), bc, out)?;
        let rg = self.rg(b) || values.is_some_and(|v| self.rg(v));
        Ok(self.push(value, Op::Spmm { sparse, b, values }, rg))
    }

    pub fn elementwise(&mut self, kind: Elementwise, a: Var) -> Result<Var> {
        let input = self.value(a);
        if matches!(kind, Elementwise::Log { .. } | Elementwise::Lgamma { .. } | Elementwise::Recip { .. })
            && input.data().iter().any(|v| v.is_nan())
        {
            return Err(Error::NumericDomain { op: kind.name(), detail: "NaN argument".into() });
        }
        let value = input.map(|x| kind.apply(x));
        let rg = self.rg(a);
        Ok(self.push(value, Op::Unary { kind, a }, rg))
    }

    fn unary(&mut self, kind: Elementwise, a: Var) -> Var {
        let value = self.value(a).map(|x| kind.apply(x));
        let rg = self.rg(a);
        self.push(value, Op::Unary { kind, a }, rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(Elementwise::Relu, a)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(Elementwise::Sigmoid, a)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(Elementwise::Exp, a)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.elementwise(Elementwise::LOG, a)
    }

    pub fn log_floor(&mut self, a: Var, floor: f64) -> Result<Var> {
        self.elementwise(Elementwise::Log { floor }, a)
    }

    pub fn lgamma(&mut self, a: Var) -> Result<Var> {
        self.elementwise(Elementwise::LGAMMA, a)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(Elementwise::Softplus, a)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(Elementwise::Square, a)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(Elementwise::Negate, a)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(Elementwise::AddConst(c), a)
    }

    pub fn mul_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(Elementwise::MulConst(c), a)
    }

    pub fn recip(&mut self, a: Var) -> Result<Var> {
        self.elementwise(Elementwise::Recip { floor: ARG_FLOOR }, a)
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(Elementwise::Clamp { lo, hi }, a)
    }

    /// Broadcasting binary op over rank <= 2 operands.
    pub fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var> {
        let da = self.dims(a);
        let db = self.dims(b);
        let (r, c) = broadcast_dims(da, db).ok_or_else(|| {
            Error::shape("binary", format!("cannot broadcast {da:?} with {db:?}"))
        })?;
        let f = |x: f64, y: f64| match kind {
            Binary::Add => x + y,
            Binary::Sub => x - y,
            Binary::Mul => x * y,
            Binary::Div => x / y.max(ARG_FLOOR),
        };
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let data: Vec<f64> = if da == db {
            av.iter().zip(bv).map(|(&x, &y)| f(x, y)).collect()
        } else {
            let mut out = Vec::with_capacity(r * c);
            for i in 0..r {
                let ia = if da.0 == 1 { 0 } else { i };
                let ib = if db.0 == 1 { 0 } else { i };
                for j in 0..c {
                    let ja = if da.1 == 1 { 0 } else { j };
                    let jb = if db.1 == 1 { 0 } else { j };
                    out.push(f(av[ia * da.1 + ja], bv[ib * db.1 + jb]));
                }
            }
            out
        };
        let shape = if da == db { self.shape(a).to_vec() } else { vec![r, c] };
        let value = Tensor::new(shape, data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Binary { kind, a, b }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Div, a, b)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(a);
        self.push(value, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let value = Tensor::scalar(t.sum() / t.len().max(1) as f64);
        let rg = self.rg(a);
        self.push(value, Op::Mean(a), rg)
    }

    /// Row sums as an `n x 1` column.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let (r, _) = t.dims2();
        let data = (0..r).map(|i| t.row(i).iter().sum()).collect();
        let value = Tensor::from_rows(r, 1, data).expect("column");
        let rg = self.rg(a);
        self.push(value, Op::RowSum(a), rg)
    }

    /// Softmax of each row of `a / temperature`.
    pub fn row_softmax(&mut self, a: Var, temperature: f64) -> Result<Var> {
        if !(temperature > 0.0) {
            return Err(Error::invalid("temperature", format!("must be > 0, got {temperature}")));
        }
        let t = self.value(a);
        let (r, c) = t.dims2();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            kernels::softmax_row(t.row(i), temperature, &mut out[i * c..(i + 1) * c]);
        }
        let value = Tensor::new(t.shape().to_vec(), out)?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::RowSoftmax { a, temperature }, rg))
    }

    /// `ln Σ_j exp(a_ij)` per row, as an `n x 1` column.
    pub fn row_logsumexp(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let (r, _) = t.dims2();
        let data = (0..r).map(|i| kernels::logsumexp(t.row(i))).collect();
        let value = Tensor::from_rows(r, 1, data).expect("column");
        let rg = self.rg(a);
        self.push(value, Op::RowLogSumExp(a), rg)
    }

    /// Scales every row to unit Euclidean length; norms below `floor` are
    /// replaced by `floor`.
    pub fn row_normalize(&mut self, a: Var, floor: f64) -> Var {
        let t = self.value(a);
        let (r, c) = t.dims2();
        let mut out = t.data().to_vec();
        for i in 0..r {
            let row = &mut out[i * c..(i + 1) * c];
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(floor);
            row.iter_mut().for_each(|v| *v /= norm);
        }
        let value = Tensor::new(t.shape().to_vec(), out).expect("same size");
        let rg = self.rg(a);
        self.push(value, Op::RowNormalize { a, floor }, rg)
    }

    /// Forward value equals `a`; no gradient flows back.
    pub fn stop_gradient(&mut self, a: Var) -> Var {
        let value = self.value(a).clone();
        self.push(value, Op::Leaf, false)
    }

    /// `stop_gradient(hard - soft) + soft`, with the forward value taken as
    /// `hard` exactly (no rounding from the subtract-then-add).
    pub fn straight_through(&mut self, hard: Tensor, soft: Var) -> Result<Var> {
        if hard.shape() != self.shape(soft) {
            return Err(Error::shape(
                "straight_through",
                format!("{:?} vs {:?}", hard.shape(), self.shape(soft)),
            ));
        }
        let rg = self.rg(soft);
        Ok(self.push(hard, Op::StraightThrough { soft }, rg))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        let rg = self.rg(a);
        self.push(value, Op::Transpose(a), rg)
    }

    /// Diagonal of a square matrix as an `n x 1` column.
    pub fn diag(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let (r, c) = t.dims2();
        if r != c {
            return Err(Error::shape("diag", format!("{r}x{c} is not square")));
        }
        let data = (0..r).map(|i| t.get(i, i)).collect();
        let value = Tensor::from_rows(r, 1, data)?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::Diag(a), rg))
    }

    /// Records a fused operation whose forward value was computed by the
    /// caller.
    pub fn custom(&mut self, inputs: Vec<Var>, value: Tensor, op: Box<dyn CustomOp>) -> Var {
        let rg = inputs.iter().any(|&v| self.rg(v));
        self.push(value, Op::Custom { inputs, op }, rg)
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(lv.shape()));

        for idx in (0..n).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            if node.trainable {
                grads[idx] = Some(g);
                continue;
            }
            self.propagate(node, &g, &mut grads)?;
        }

        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        for (i, node) in self.nodes.iter().enumerate() {
            if !node.trainable {
                grads[i] = None;
            }
        }
        Ok(Gradients { grads, shapes })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            Op::Matmul { a, b, trans_b } => {
                let (ar, ac) = self.dims(*a);
                let (br, bc) = self.dims(*b);
                let (gr, gc) = g.dims2();
                let gref = MatRef::new(g.data(), gr, gc);
                let aref = MatRef::new(self.value(*a).data(), ar, ac);
                let bref = MatRef::new(self.value(*b).data(), br, bc);
                if self.rg(*a) {
                    // out = a * b'  where b' = b or bᵀ; da = g * b'ᵀ
                    let bt = if *trans_b { bref } else { bref.t() };
                    let da = kernels::matmul(gref, bt);
                    self.accumulate(grads, *a, Tensor::new(self.shape(*a).to_vec(), da)?);
                }
                if self.rg(*b) {
                    // db' = aᵀ g; for trans_b, db = (aᵀ g)ᵀ = gᵀ a
                    let db = if *trans_b {
                        kernels::matmul(gref.t(), aref)
                    } else {
                        kernels::matmul(aref.t(), gref)
                    };
                    self.accumulate(grads, *b, Tensor::new(self.shape(*b).to_vec(), db)?);
                }
            }
            Op::Spmm { sparse, b, values } => {
                let (_, m) = g.dims2();
                let vals = match values {
                    Some(v) => self.value(*v).data(),
                    None => sparse.values(),
                };
                if self.rg(*b) {
                    let mut db = vec![0.0; sparse.cols() * m];
                    sparse.t_matmul_acc(vals, g.data(), m, &mut db);
                    self.accumulate(grads, *b, Tensor::new(self.shape(*b).to_vec(), db)?);
                }
                if let Some(v) = values {
                    if self.rg(*v) {
                        let dv = sparse.value_grad(self.value(*b).data(), g.data(), m);
                        self.accumulate(grads, *v, Tensor::new(self.shape(*v).to_vec(), dv)?);
                    }
                }
            }
            Op::Unary { kind, a } => {
                let x = self.value(*a).data();
                let y = node.value.data();
                let data = x
                    .iter()
                    .zip(y)
                    .zip(g.data())
                    .map(|((&x, &y), &g)| g * kind.derivative(x, y))
                    .collect();
                self.accumulate(grads, *a, Tensor::new(self.shape(*a).to_vec(), data)?);
            }
            Op::Binary { kind, a, b } => {
                let da = self.dims(*a);
                let db = self.dims(*b);
                let (r, c) = g.dims2();
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                let at = |i: usize, j: usize| av[(if da.0 == 1 { 0 } else { i }) * da.1 + if da.1 == 1 { 0 } else { j }];
                let bt = |i: usize, j: usize| bv[(if db.0 == 1 { 0 } else { i }) * db.1 + if db.1 == 1 { 0 } else { j }];
                let mut ga = Vec::with_capacity(r * c);
                let mut gb = Vec::with_capacity(r * c);
                for i in 0..r {
                    for j in 0..c {
                        let gij = g.data()[i * c + j];
                        let (x, y) = (at(i, j), bt(i, j));
                        let (pa, pb) = match kind {
                            Binary::Add => (gij, gij),
                            Binary::Sub => (gij, -gij),
                            Binary::Mul => (gij * y, gij * x),
                            Binary::Div => {
                                if y >= ARG_FLOOR {
                                    (gij / y, -gij * x / (y * y))
                                } else {
                                    (gij / ARG_FLOOR, 0.0)
                                }
                            }
                        };
                        ga.push(pa);
                        gb.push(pb);
                    }
                }
                let full = Tensor::from_rows(r, c, ga)?;
                if self.rg(*a) {
                    self.accumulate(grads, *a, reduce_to(&full, self.shape(*a), da));
                }
                if self.rg(*b) {
                    let full = Tensor::from_rows(r, c, gb)?;
                    self.accumulate(grads, *b, reduce_to(&full, self.shape(*b), db));
                }
            }
            Op::Sum(a) => {
                let gv = g.item();
                self.accumulate(grads, *a, Tensor::full(self.shape(*a), gv));
            }
            Op::Mean(a) => {
                let n = self.value(*a).len().max(1) as f64;
                self.accumulate(grads, *a, Tensor::full(self.shape(*a), g.item() / n));
            }
            Op::RowSum(a) => {
                let (r, c) = self.dims(*a);
                let mut data = Vec::with_capacity(r * c);
                for i in 0..r {
                    data.extend(std::iter::repeat_n(g.data()[i], c));
                }
                self.accumulate(grads, *a, Tensor::new(self.shape(*a).to_vec(), data)?);
            }
            Op::RowSoftmax { a, temperature } => {
                let y = &node.value;
                let (r, c) = y.dims2();
                let mut data = vec![0.0; r * c];
                for i in 0..r {
                    let yr = y.row(i);
                    let gr = &g.data()[i * c..(i + 1) * c];
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        data[i * c + j] = yr[j] * (gr[j] - dot) / temperature;
                    }
                }
                self.accumulate(grads, *a, Tensor::new(self.shape(*a).to_vec(), data)?);
            }
            Op::RowLogSumExp(a) => {
                let x = self.value(*a);
                let (r, c) = x.dims2();
                let mut data = vec![0.0; r * c];
                for i in 0..r {
                    kernels::softmax_row(x.row(i), 1.0, &mut data[i * c..(i + 1) * c]);
                    let gi = g.data()[i];
                    data[i * c..(i + 1) * c].iter_mut().for_each(|v| *v *= gi);
                }
                self.accumulate(grads, *a, Tensor::new(self.shape(*a).to_vec(), data)?);
            }
            Op::RowNormalize { a, floor } => {
                let x = self.value(*a);
                let nrm = &node.value;
                let (r, c) = x.dims2();
                let mut data = vec![0.0; r * c];
                for i in 0..r {
                    let norm = x.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
                    let gr = &g.data()[i * c..(i + 1) * c];
                    let out = &mut data[i * c..(i + 1) * c];
                    if norm > *floor {
                        let nr = nrm.row(i);
                        let dot: f64 = nr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            out[j] = (gr[j] - nr[j] * dot) / norm;
                        }
                    } else {
                        for j in 0..c {
                            out[j] = gr[j] / floor;
                        }
                    }
                }
                self.accumulate(grads, *a, Tensor::new(self.shape(*a).to_vec(), data)?);
            }
            Op::StraightThrough { soft } => {
                self.accumulate(grads, *soft, g.clone());
            }
            Op::Transpose(a) => {
                let gt = g.transpose();
                self.accumulate(grads, *a, Tensor::new(self.shape(*a).to_vec(), gt.into_data())?);
            }
            Op::Diag(a) => {
                let (n, _) = self.dims(*a);
                let mut t = Tensor::zeros(&[n, n]);
                for i in 0..n {
                    t.set(i, i, g.data()[i]);
                }
                self.accumulate(grads, *a, t);
            }
            Op::Custom { inputs, op } => {
                let values: Vec<&Tensor> = inputs.iter().map(|v| self.value(*v)).collect();
                let parts = op.backward(&values, &node.value, g);
                for (v, part) in inputs.iter().zip(parts) {
                    if let Some(part) = part {
                        self.accumulate(grads, *v, part);
                    }
                }
            }
        }
        Ok(())
    }
}
