//! Matrix-valued reverse-mode differentiation.
//!
//! Every value is a dense `rows × cols` matrix of `f64`. Operations record
//! themselves on a [`Tape`]; [`Tape::grad`] walks the record backwards.
//!
//! Two backward paths exist:
//!
//! * a value path that produces plain matrices and never touches the tape
//!   (used for ordinary first-order training), and
//! * a recording path (`create_graph = true`) whose vector-Jacobian products
//!   are themselves built from recorded operations. Gradients obtained this
//!   way are differentiable, which is what unrolled inner-loop updates need.
//!
//! Both paths implement the same rules and are cross-checked in tests.

use std::cell::{Cell, RefCell};
use std::collections::HashMap;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};
use std::rc::Rc;

use ndarray::{Array2, Axis, Zip};

use crate::error::{Error, Result};

pub type Mat = Array2<f64>;

#[derive(Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    /// `a · b`
    MatMul(usize, usize),
    /// `a · bᵀ`
    MatMulNT(usize, usize),
    /// `aᵀ · b`
    MatMulTN(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Exp(usize),
    Log(usize),
    Sigmoid(usize),
    /// Elementwise op whose Jacobian is the fixed diagonal `mask`
    /// (relu, clamp, dropout).
    Diag(usize, Rc<Mat>),
    /// `x[i, :] * w[i, 0]`
    ScaleRows(usize, usize),
    Sum(usize),
    BroadcastScalar(usize),
    SumRows(usize),
    BroadcastRows(usize),
    SumCols(usize),
    BroadcastCols(usize),
    GatherRows(usize, Rc<Vec<usize>>),
    ScatterAddRows(usize, Rc<Vec<usize>>),
    /// Forward value supplied externally, backward is the identity.
    StraightThrough(usize),
}

impl Op {
    fn inputs(&self) -> [Option<usize>; 2] {
        use Op::*;
        match *self {
            Leaf => [None, None],
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) | MatMul(a, b) | MatMulNT(a, b)
            | MatMulTN(a, b) | ScaleRows(a, b) => [Some(a), Some(b)],
            Scale(a, _) | AddScalar(a) | Exp(a) | Log(a) | Sigmoid(a) | Diag(a, _) | Sum(a)
            | BroadcastScalar(a) | SumRows(a) | BroadcastRows(a) | SumCols(a)
            | BroadcastCols(a) | GatherRows(a, _) | ScatterAddRows(a, _)
            | StraightThrough(a) => [Some(a), None],
        }
    }
}

struct Node {
    value: Rc<Mat>,
    op: Op,
    tracked: bool,
}

/// Record of operations. Nodes are appended in evaluation order, so node ids
/// are a topological order of the computation.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    recording: Cell<bool>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape").field("len", &self.len()).finish()
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (r, c) = self.shape();
        write!(f, "Var#{}[{}x{}]", self.id, r, c)
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::with_capacity(256)),
            recording: Cell::new(true),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A differentiable leaf.
    pub fn leaf(&self, value: Mat) -> Var<'_> {
        self.push_raw(value, Op::Leaf, true)
    }

    /// A value that never receives a gradient.
    pub fn constant(&self, value: Mat) -> Var<'_> {
        self.push_raw(value, Op::Leaf, false)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(Mat::from_elem((1, 1), value))
    }

    fn push_raw(&self, value: Mat, op: Op, tracked: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            tracked,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn push(&self, value: Mat, op: Op) -> Var<'_> {
        let tracked = self.recording.get() && {
            let nodes = self.nodes.borrow();
            op.inputs().iter().flatten().any(|&i| nodes[i].tracked)
        };
        if tracked {
            self.push_raw(value, op, true)
        } else {
            self.push_raw(value, Op::Leaf, false)
        }
    }

    fn value_of(&self, id: usize) -> Rc<Mat> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    /// Marks nodes that lie downstream of any `wrt` node, up to `end`.
    fn reach(&self, wrt: &[Var<'_>], end: usize) -> Vec<bool> {
        let nodes = self.nodes.borrow();
        let mut reach = vec![false; end + 1];
        let mut start = end + 1;
        for w in wrt {
            if w.id <= end && nodes[w.id].tracked {
                reach[w.id] = true;
                start = start.min(w.id);
            }
        }
        for i in start..=end {
            if reach[i] || !nodes[i].tracked {
                continue;
            }
            reach[i] = nodes[i].op.inputs().iter().flatten().any(|&j| reach[j]);
        }
        reach
    }

    /// Gradients of `output` (summed over its entries) with respect to each
    /// of `wrt`. `None` marks a variable the output does not depend on.
    ///
    /// With `create_graph` the returned gradients are recorded expressions,
    /// so they can be differentiated again. Without it they are constants.
    pub fn grad<'t>(
        &'t self,
        output: Var<'t>,
        wrt: &[Var<'t>],
        create_graph: bool,
    ) -> Vec<Option<Var<'t>>> {
        if create_graph {
            self.grad_recorded(output, wrt)
        } else {
            self.grad_values(output, wrt)
                .into_iter()
                .map(|g| g.map(|m| self.constant(m)))
                .collect()
        }
    }

    /// First-order gradients as plain matrices.
    pub fn grad_values(&self, output: Var<'_>, wrt: &[Var<'_>]) -> Vec<Option<Mat>> {
        let end = output.id;
        let reach = self.reach(wrt, end);
        if !reach[end] {
            return vec![None; wrt.len()];
        }
        let mut grads: Vec<Option<Mat>> = vec![None; end + 1];
        grads[end] = Some(Mat::ones(output.shape()));
        let wanted: Vec<bool> = {
            let mut w = vec![false; end + 1];
            for v in wrt {
                if v.id <= end {
                    w[v.id] = true;
                }
            }
            w
        };
        for i in (0..=end).rev() {
            if !reach[i] {
                continue;
            }
            let g = if wanted[i] {
                match &grads[i] {
                    Some(g) => g.clone(),
                    None => continue,
                }
            } else {
                match grads[i].take() {
                    Some(g) => g,
                    None => continue,
                }
            };
            let (op, out) = {
                let nodes = self.nodes.borrow();
                (nodes[i].op.clone(), Rc::clone(&nodes[i].value))
            };
            for (j, gj) in self.vjp_values(&op, &g, &out) {
                if !reach[j] {
                    continue;
                }
                match &mut grads[j] {
                    Some(acc) => *acc += &gj,
                    slot @ None => *slot = Some(gj),
                }
            }
        }
        wrt.iter()
            .map(|v| if v.id <= end { grads[v.id].clone() } else { None })
            .collect()
    }

    fn vjp_values(&self, op: &Op, g: &Mat, out: &Mat) -> Vec<(usize, Mat)> {
        use Op::*;
        let val = |id| self.value_of(id);
        match op {
            Leaf => vec![],
            Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Sub(a, b) => vec![(*a, g.clone()), (*b, -g)],
            Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                vec![(*a, g * &*vb), (*b, g * &*va)]
            }
            Div(a, b) => {
                let vb = val(*b);
                let ga = g / &*vb;
                let gb = -(&ga * out);
                vec![(*a, ga), (*b, gb)]
            }
            MatMul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                vec![(*a, g.dot(&vb.t())), (*b, va.t().dot(g))]
            }
            MatMulNT(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                vec![(*a, g.dot(&*vb)), (*b, g.t().dot(&*va))]
            }
            MatMulTN(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                vec![(*a, vb.dot(&g.t())), (*b, va.dot(g))]
            }
            Scale(a, c) => vec![(*a, g * *c)],
            AddScalar(a) | StraightThrough(a) => vec![(*a, g.clone())],
            Exp(a) => vec![(*a, g * out)],
            Log(a) => vec![(*a, g / &*val(*a))],
            Sigmoid(a) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(out).for_each(|d, &s| *d *= s * (1.0 - s));
                vec![(*a, d)]
            }
            Diag(a, mask) => vec![(*a, g * &**mask)],
            ScaleRows(x, w) => {
                let (vx, vw) = (val(*x), val(*w));
                let gx = scale_rows(g, &vw);
                let gw = (g * &*vx).sum_axis(Axis(1)).insert_axis(Axis(1));
                vec![(*x, gx), (*w, gw)]
            }
            Sum(a) => {
                let shape = val(*a).dim();
                vec![(*a, Mat::from_elem(shape, g[[0, 0]]))]
            }
            BroadcastScalar(a) => vec![(*a, Mat::from_elem((1, 1), g.sum()))],
            SumRows(a) => {
                let n = val(*a).nrows();
                vec![(*a, broadcast_rows(g, n))]
            }
            BroadcastRows(a) => vec![(*a, g.sum_axis(Axis(0)).insert_axis(Axis(0)))],
            SumCols(a) => {
                let d = val(*a).ncols();
                vec![(*a, broadcast_cols(g, d))]
            }
            BroadcastCols(a) => vec![(*a, g.sum_axis(Axis(1)).insert_axis(Axis(1)))],
            GatherRows(a, idx) => {
                let n = val(*a).nrows();
                vec![(*a, scatter_add_rows(g, idx, n))]
            }
            ScatterAddRows(a, idx) => vec![(*a, gather_rows(g, idx))],
        }
    }

    fn grad_recorded<'t>(&'t self, output: Var<'t>, wrt: &[Var<'t>]) -> Vec<Option<Var<'t>>> {
        let end = output.id;
        let reach = self.reach(wrt, end);
        if !reach[end] {
            return vec![None; wrt.len()];
        }
        let mut grads: Vec<Option<Var<'t>>> = vec![None; end + 1];
        grads[end] = Some(self.constant(Mat::ones(output.shape())));
        for i in (0..=end).rev() {
            if !reach[i] {
                continue;
            }
            let Some(g) = grads[i] else { continue };
            let op = self.nodes.borrow()[i].op.clone();
            let out = Var { tape: self, id: i };
            for (j, gj) in self.vjp_recorded(&op, g, out) {
                if !reach[j] {
                    continue;
                }
                grads[j] = Some(match grads[j] {
                    Some(acc) => acc + gj,
                    None => gj,
                });
            }
        }
        wrt.iter()
            .map(|v| if v.id <= end { grads[v.id] } else { None })
            .collect()
    }

    fn vjp_recorded<'t>(&'t self, op: &Op, g: Var<'t>, out: Var<'t>) -> Vec<(usize, Var<'t>)> {
        use Op::*;
        let var = |id| Var { tape: self, id };
        match op {
            Leaf => vec![],
            Add(a, b) => vec![(*a, g), (*b, g)],
            Sub(a, b) => vec![(*a, g), (*b, -g)],
            Mul(a, b) => vec![(*a, g * var(*b)), (*b, g * var(*a))],
            Div(a, b) => {
                let ga = g / var(*b);
                vec![(*a, ga), (*b, -(ga * out))]
            }
            MatMul(a, b) => vec![(*a, g.matmul_nt(var(*b))), (*b, var(*a).matmul_tn(g))],
            MatMulNT(a, b) => vec![(*a, g.matmul(var(*b))), (*b, g.matmul_tn(var(*a)))],
            MatMulTN(a, b) => vec![(*a, var(*b).matmul_nt(g)), (*b, var(*a).matmul(g))],
            Scale(a, c) => vec![(*a, g.scale(*c))],
            AddScalar(a) | StraightThrough(a) => vec![(*a, g)],
            Exp(a) => vec![(*a, g * out)],
            Log(a) => vec![(*a, g / var(*a))],
            Sigmoid(a) => vec![(*a, g * out * out.one_minus())],
            Diag(a, mask) => vec![(*a, g.diag_mul(Rc::clone(mask)))],
            ScaleRows(x, w) => vec![
                (*x, g.scale_rows(var(*w))),
                (*w, (g * var(*x)).sum_cols()),
            ],
            Sum(a) => {
                let shape = var(*a).shape();
                vec![(*a, g.broadcast_scalar(shape))]
            }
            BroadcastScalar(a) => vec![(*a, g.sum())],
            SumRows(a) => {
                let n = var(*a).shape().0;
                vec![(*a, g.broadcast_rows(n))]
            }
            BroadcastRows(a) => vec![(*a, g.sum_rows())],
            SumCols(a) => {
                let d = var(*a).shape().1;
                vec![(*a, g.broadcast_cols(d))]
            }
            BroadcastCols(a) => vec![(*a, g.sum_cols())],
            GatherRows(a, idx) => {
                let n = var(*a).shape().0;
                vec![(*a, g.scatter_add_rows(Rc::clone(idx), n))]
            }
            ScatterAddRows(a, idx) => vec![(*a, g.gather_rows(Rc::clone(idx)))],
        }
    }

    /// First-order gradients of a scalar with respect to every tracked leaf
    /// it depends on.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        if loss.shape() != (1, 1) {
            let (r, c) = loss.shape();
            return Err(Error::input(format!(
                "backward needs a scalar loss, got {r}x{c}"
            )));
        }
        let leaves: Vec<Var<'_>> = {
            let nodes = self.nodes.borrow();
            (0..=loss.id)
                .filter(|&i| nodes[i].tracked && matches!(nodes[i].op, Op::Leaf))
                .map(|id| Var { tape: self, id })
                .collect()
        };
        let grads = self.grad_values(loss, &leaves);
        let map = leaves
            .iter()
            .zip(grads)
            .filter_map(|(v, g)| g.map(|g| (v.id, g)))
            .collect();
        Ok(Gradients { map })
    }
}

/// Result of [`Tape::backward`], keyed by leaf.
#[derive(Debug, Default)]
pub struct Gradients {
    map: HashMap<usize, Mat>,
}

impl Gradients {
    pub fn get(&self, v: Var<'_>) -> Option<&Mat> {
        self.map.get(&v.id)
    }
}

fn scale_rows(x: &Mat, w: &Mat) -> Mat {
    let mut out = x.clone();
    for (mut row, &s) in out.rows_mut().into_iter().zip(w.column(0)) {
        row *= s;
    }
    out
}

fn broadcast_rows(x: &Mat, n: usize) -> Mat {
    x.broadcast((n, x.ncols())).expect("1xd row").to_owned()
}

fn broadcast_cols(x: &Mat, d: usize) -> Mat {
    x.broadcast((x.nrows(), d)).expect("nx1 column").to_owned()
}

fn gather_rows(x: &Mat, idx: &[usize]) -> Mat {
    x.select(Axis(0), idx)
}

fn scatter_add_rows(x: &Mat, idx: &[usize], n: usize) -> Mat {
    let mut out = Mat::zeros((n, x.ncols()));
    for (row, &t) in x.rows().into_iter().zip(idx) {
        let mut dst = out.row_mut(t);
        dst += &row;
    }
    out
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Mat> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.tape.nodes.borrow()[self.id].value.dim()
    }

    /// Value of a 1x1 variable.
    pub fn item(&self) -> f64 {
        let v = self.value();
        debug_assert_eq!(v.dim(), (1, 1));
        v[[0, 0]]
    }

    pub fn is_tracked(&self) -> bool {
        self.tape.nodes.borrow()[self.id].tracked
    }

    /// Same value, cut off from the record.
    pub fn detach(&self) -> Var<'t> {
        self.tape.constant((*self.value()).clone())
    }

    fn unary(self, value: Mat, op: Op) -> Var<'t> {
        self.tape.push(value, op)
    }

    fn assert_same_shape(self, other: Var<'t>, what: &str) {
        assert_eq!(
            self.shape(),
            other.shape(),
            "{what}: shape mismatch {self:?} vs {other:?}"
        );
    }

    pub fn matmul(self, rhs: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), rhs.value());
        assert_eq!(a.ncols(), b.nrows(), "matmul: {self:?} x {rhs:?}");
        self.unary(a.dot(&*b), Op::MatMul(self.id, rhs.id))
    }

    pub fn matmul_nt(self, rhs: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), rhs.value());
        assert_eq!(a.ncols(), b.ncols(), "matmul_nt: {self:?} x {rhs:?}ᵀ");
        self.unary(a.dot(&b.t()), Op::MatMulNT(self.id, rhs.id))
    }

    pub fn matmul_tn(self, rhs: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), rhs.value());
        assert_eq!(a.nrows(), b.nrows(), "matmul_tn: {self:?}ᵀ x {rhs:?}");
        self.unary(a.t().dot(&*b), Op::MatMulTN(self.id, rhs.id))
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        let v = &*self.value() * c;
        self.unary(v, Op::Scale(self.id, c))
    }

    pub fn add_scalar(self, c: f64) -> Var<'t> {
        let v = &*self.value() + c;
        self.unary(v, Op::AddScalar(self.id))
    }

    /// `1 - x`
    pub fn one_minus(self) -> Var<'t> {
        self.scale(-1.0).add_scalar(1.0)
    }

    pub fn exp(self) -> Var<'t> {
        let v = self.value().mapv(f64::exp);
        self.unary(v, Op::Exp(self.id))
    }

    pub fn ln(self) -> Var<'t> {
        let v = self.value().mapv(f64::ln);
        self.unary(v, Op::Log(self.id))
    }

    pub fn sigmoid(self) -> Var<'t> {
        let v = self.value().mapv(sigmoid);
        self.unary(v, Op::Sigmoid(self.id))
    }

    pub fn relu(self) -> Var<'t> {
        let x = self.value();
        let mask = x.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
        let v = x.mapv(|v| v.max(0.0));
        self.unary(v, Op::Diag(self.id, Rc::new(mask)))
    }

    /// Clamp into `[lo, hi]`; the gradient is zero where clamping is active.
    pub fn clamp(self, lo: f64, hi: f64) -> Var<'t> {
        let x = self.value();
        let mask = x.mapv(|v| if v >= lo && v <= hi { 1.0 } else { 0.0 });
        let v = x.mapv(|v| v.clamp(lo, hi));
        self.unary(v, Op::Diag(self.id, Rc::new(mask)))
    }

    /// Multiply elementwise by a constant matrix.
    pub fn diag_mul(self, mask: Rc<Mat>) -> Var<'t> {
        let v = &*self.value() * &*mask;
        self.unary(v, Op::Diag(self.id, mask))
    }

    /// Row `i` multiplied by `w[i, 0]`, where `w` is `n × 1`.
    pub fn scale_rows(self, w: Var<'t>) -> Var<'t> {
        let (x, wv) = (self.value(), w.value());
        assert_eq!((x.nrows(), 1), wv.dim(), "scale_rows: {self:?} by {w:?}");
        self.unary(scale_rows(&x, &wv), Op::ScaleRows(self.id, w.id))
    }

    pub fn sum(self) -> Var<'t> {
        let v = Mat::from_elem((1, 1), self.value().sum());
        self.unary(v, Op::Sum(self.id))
    }

    pub fn mean(self) -> Var<'t> {
        let (r, c) = self.shape();
        self.sum().scale(1.0 / (r * c) as f64)
    }

    pub fn broadcast_scalar(self, shape: (usize, usize)) -> Var<'t> {
        let v = Mat::from_elem(shape, self.item());
        self.unary(v, Op::BroadcastScalar(self.id))
    }

    /// `n × d → 1 × d`
    pub fn sum_rows(self) -> Var<'t> {
        let v = self.value().sum_axis(Axis(0)).insert_axis(Axis(0));
        self.unary(v, Op::SumRows(self.id))
    }

    /// `1 × d → n × d`
    pub fn broadcast_rows(self, n: usize) -> Var<'t> {
        let x = self.value();
        assert_eq!(x.nrows(), 1, "broadcast_rows needs a row vector");
        self.unary(broadcast_rows(&x, n), Op::BroadcastRows(self.id))
    }

    /// `n × d → n × 1`
    pub fn sum_cols(self) -> Var<'t> {
        let v = self.value().sum_axis(Axis(1)).insert_axis(Axis(1));
        self.unary(v, Op::SumCols(self.id))
    }

    /// `n × 1 → n × d`
    pub fn broadcast_cols(self, d: usize) -> Var<'t> {
        let x = self.value();
        assert_eq!(x.ncols(), 1, "broadcast_cols needs a column vector");
        self.unary(broadcast_cols(&x, d), Op::BroadcastCols(self.id))
    }

    /// Adds a `1 × d` bias to every row.
    pub fn add_row(self, bias: Var<'t>) -> Var<'t> {
        let n = self.shape().0;
        self + bias.broadcast_rows(n)
    }

    pub fn gather_rows(self, idx: Rc<Vec<usize>>) -> Var<'t> {
        let x = self.value();
        let n = x.nrows();
        assert!(idx.iter().all(|&i| i < n), "gather_rows: index out of range");
        self.unary(gather_rows(&x, &idx), Op::GatherRows(self.id, idx))
    }

    /// Output row `idx[i]` accumulates input row `i`; output has `n` rows.
    pub fn scatter_add_rows(self, idx: Rc<Vec<usize>>, n: usize) -> Var<'t> {
        let x = self.value();
        assert_eq!(x.nrows(), idx.len(), "scatter_add_rows: index length");
        assert!(idx.iter().all(|&i| i < n), "scatter_add_rows: index out of range");
        self.unary(scatter_add_rows(&x, &idx, n), Op::ScatterAddRows(self.id, idx))
    }

    /// Takes `value` as the forward result while passing gradients straight
    /// through to `self`.
    pub fn straight_through(self, value: Mat) -> Var<'t> {
        assert_eq!(self.shape(), value.dim(), "straight_through: shape");
        self.unary(value, Op::StraightThrough(self.id))
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        self.assert_same_shape(rhs, "add");
        let v = &*self.value() + &*rhs.value();
        self.unary(v, Op::Add(self.id, rhs.id))
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        self.assert_same_shape(rhs, "sub");
        let v = &*self.value() - &*rhs.value();
        self.unary(v, Op::Sub(self.id, rhs.id))
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        self.assert_same_shape(rhs, "mul");
        let v = &*self.value() * &*rhs.value();
        self.unary(v, Op::Mul(self.id, rhs.id))
    }
}

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: Var<'t>) -> Var<'t> {
        self.assert_same_shape(rhs, "div");
        let v = &*self.value() / &*rhs.value();
        self.unary(v, Op::Div(self.id, rhs.id))
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.scale(-1.0)
    }
}
