//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] is rebuilt for every forward pass. Operations append nodes whose
//! inputs are always earlier nodes, so a single reverse sweep in index order
//! is a valid topological traversal.

use std::cell::{Ref, RefCell};
use std::rc::Rc;

use super::tensor::{matmul_a_bt, matmul_at_b, matmul_raw, Tensor};
use super::DiffError;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf { trainable: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Relu(Var),
    MatMul(Var, Var),
    AddRow(Var, Var),
    Gather(Var, Rc<[usize]>),
    ScatterAdd(Var, Rc<[usize]>),
    SegmentMean(Var, Rc<[usize]>, Rc<[f64]>),
    ConcatCols(Var, Var),
    Mse(Var, Var),
    L2Norm(Var),
    RowNorms(Var),
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Gradients of a scalar root with respect to every trainable leaf.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `v` if the root depends on it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Whether `v` was reached by the backward sweep.
    pub fn touched(&self, v: Var) -> bool {
        self.get(v).is_some()
    }

    /// Gradient for `v`, zero when the root does not depend on it.
    pub fn wrt(&self, v: Var) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }
}

fn check_same(op: &'static str, a: &Tensor, b: &Tensor) -> Result<(), DiffError> {
    if a.shape() != b.shape() {
        return Err(DiffError::Shape { op, lhs: a.shape().to_vec(), rhs: b.shape().to_vec() });
    }
    Ok(())
}

fn check_matrix(op: &'static str, t: &Tensor) -> Result<(), DiffError> {
    if t.shape().len() != 2 {
        return Err(DiffError::NotMatrix { op, shape: t.shape().to_vec() });
    }
    Ok(())
}

fn check_indices(op: &'static str, idx: &[usize], bound: usize) -> Result<(), DiffError> {
    match idx.iter().find(|&&i| i >= bound) {
        Some(&index) => Err(DiffError::IndexOutOfRange { op, index, bound }),
        None => Ok(()),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn value(&self, v: Var) -> Ref<'_, Tensor> {
        Ref::map(self.nodes.borrow(), |n| &n[v.0].value)
    }

    /// Smallest non-zero `|x|` over the inputs of every recorded ReLU, or
    /// `None` when there are none. Exact zeros are skipped: they arise from
    /// dead units fed zero messages and stay zero under small perturbations.
    pub fn relu_margin(&self) -> Option<f64> {
        let nodes = self.nodes.borrow();
        nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Relu(a) => Some(&nodes[a.0].value),
                _ => None,
            })
            .flat_map(|t| t.data().iter().filter(|x| **x != 0.0).map(|x| x.abs()))
            .reduce(f64::min)
    }

    fn push(&self, op_name: &'static str, value: Tensor, op: Op) -> Result<Var, DiffError> {
        if !value.is_finite() {
            return Err(DiffError::NonFinite { op: op_name });
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op });
        Ok(Var(nodes.len() - 1))
    }

    /// A trainable leaf; [`Tape::backward`] reports its gradient.
    pub fn param(&self, value: Tensor) -> Result<Var, DiffError> {
        self.push("param", value, Op::Leaf { trainable: true })
    }

    /// A constant leaf.
    pub fn constant(&self, value: Tensor) -> Result<Var, DiffError> {
        self.push("constant", value, Op::Leaf { trainable: false })
    }

    fn unary(&self, name: &'static str, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var, DiffError> {
        let value = self.value(a).map(f);
        self.push(name, value, op)
    }

    fn binary(&self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var, DiffError> {
        let value = {
            let (x, y) = (self.value(a), self.value(b));
            check_same(name, &x, &y)?;
            x.zip(&y, f)
        };
        self.push(name, value, op)
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&self, a: Var, c: f64) -> Result<Var, DiffError> {
        self.unary("scale", a, |x| c * x, Op::Scale(a, c))
    }

    pub fn tanh(&self, a: Var) -> Result<Var, DiffError> {
        self.unary("tanh", a, f64::tanh, Op::Tanh(a))
    }

    pub fn relu(&self, a: Var) -> Result<Var, DiffError> {
        self.unary("relu", a, |x| if x > 0.0 { x } else { 0.0 }, Op::Relu(a))
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var, DiffError> {
        let value = {
            let (x, y) = (self.value(a), self.value(b));
            check_matrix("matmul", &x)?;
            check_matrix("matmul", &y)?;
            if x.cols() != y.rows() {
                return Err(DiffError::Shape { op: "matmul", lhs: x.shape().to_vec(), rhs: y.shape().to_vec() });
            }
            let (m, k, n) = (x.rows(), x.cols(), y.cols());
            Tensor::matrix(m, n, matmul_raw(x.data(), y.data(), m, k, n))
        };
        self.push("matmul", value, Op::MatMul(a, b))
    }

    /// `x[n×m] + bias[m]`, broadcasting the bias over rows.
    pub fn add_row(&self, x: Var, bias: Var) -> Result<Var, DiffError> {
        let value = {
            let (xv, bv) = (self.value(x), self.value(bias));
            check_matrix("add_row", &xv)?;
            if bv.len() != xv.cols() {
                return Err(DiffError::Shape { op: "add_row", lhs: xv.shape().to_vec(), rhs: bv.shape().to_vec() });
            }
            let cols = xv.cols();
            let mut out = xv.clone();
            for (i, v) in out.data_mut().iter_mut().enumerate() {
                *v += bv.data()[i % cols];
            }
            out
        };
        self.push("add_row", value, Op::AddRow(x, bias))
    }

    /// Row selection: output row `r` is input row `indices[r]`.
    pub fn gather_rows(&self, x: Var, indices: &[usize]) -> Result<Var, DiffError> {
        let value = {
            let xv = self.value(x);
            check_matrix("gather_rows", &xv)?;
            check_indices("gather_rows", indices, xv.rows())?;
            let cols = xv.cols();
            let mut data = Vec::with_capacity(indices.len() * cols);
            for &i in indices {
                data.extend_from_slice(xv.row(i));
            }
            Tensor::matrix(indices.len(), cols, data)
        };
        self.push("gather_rows", value, Op::Gather(x, indices.into()))
    }

    /// Sums input row `r` into output row `indices[r]` of an `[rows × cols]` result.
    pub fn scatter_add_rows(&self, x: Var, indices: &[usize], rows: usize) -> Result<Var, DiffError> {
        let value = {
            let xv = self.value(x);
            check_matrix("scatter_add_rows", &xv)?;
            if indices.len() != xv.rows() {
                return Err(DiffError::Shape { op: "scatter_add_rows", lhs: xv.shape().to_vec(), rhs: vec![indices.len()] });
            }
            check_indices("scatter_add_rows", indices, rows)?;
            let cols = xv.cols();
            let mut out = Tensor::zeros(&[rows, cols]);
            for (r, &i) in indices.iter().enumerate() {
                for (o, v) in out.data_mut()[i * cols..(i + 1) * cols].iter_mut().zip(xv.row(r)) {
                    *o += v;
                }
            }
            out
        };
        self.push("scatter_add_rows", value, Op::ScatterAdd(x, indices.into()))
    }

    /// Mean of the rows belonging to each segment; every segment must be non-empty.
    pub fn segment_mean(&self, x: Var, segments: &[usize], count: usize) -> Result<Var, DiffError> {
        let mut sizes = vec![0usize; count];
        check_indices("segment_mean", segments, count)?;
        for &s in segments {
            sizes[s] += 1;
        }
        if let Some(segment) = sizes.iter().position(|&c| c == 0) {
            return Err(DiffError::EmptySegment { segment });
        }
        let inv: Rc<[f64]> = sizes.iter().map(|&c| 1.0 / c as f64).collect();
        let value = {
            let xv = self.value(x);
            check_matrix("segment_mean", &xv)?;
            if segments.len() != xv.rows() {
                return Err(DiffError::Shape { op: "segment_mean", lhs: xv.shape().to_vec(), rhs: vec![segments.len()] });
            }
            let cols = xv.cols();
            let mut out = Tensor::zeros(&[count, cols]);
            for (r, &s) in segments.iter().enumerate() {
                for (o, v) in out.data_mut()[s * cols..(s + 1) * cols].iter_mut().zip(xv.row(r)) {
                    *o += v;
                }
            }
            for (i, v) in out.data_mut().iter_mut().enumerate() {
                *v *= inv[i / cols];
            }
            out
        };
        self.push("segment_mean", value, Op::SegmentMean(x, segments.into(), inv))
    }

    /// `[a | b]` along columns.
    pub fn concat_cols(&self, a: Var, b: Var) -> Result<Var, DiffError> {
        let value = {
            let (x, y) = (self.value(a), self.value(b));
            check_matrix("concat_cols", &x)?;
            check_matrix("concat_cols", &y)?;
            if x.rows() != y.rows() {
                return Err(DiffError::Shape { op: "concat_cols", lhs: x.shape().to_vec(), rhs: y.shape().to_vec() });
            }
            let mut data = Vec::with_capacity(x.len() + y.len());
            for r in 0..x.rows() {
                data.extend_from_slice(x.row(r));
                data.extend_from_slice(y.row(r));
            }
            Tensor::matrix(x.rows(), x.cols() + y.cols(), data)
        };
        self.push("concat_cols", value, Op::ConcatCols(a, b))
    }

    /// Mean squared difference over all elements.
    pub fn mse(&self, a: Var, b: Var) -> Result<Var, DiffError> {
        let value = {
            let (x, y) = (self.value(a), self.value(b));
            check_same("mse", &x, &y)?;
            if x.is_empty() {
                return Err(DiffError::Empty { op: "mse" });
            }
            let sum: f64 = x.data().iter().zip(y.data()).map(|(p, q)| (p - q) * (p - q)).sum();
            Tensor::scalar(sum / x.len() as f64)
        };
        self.push("mse", value, Op::Mse(a, b))
    }

    /// Euclidean norm of all elements. The gradient at the zero vector is zero.
    pub fn l2_norm(&self, a: Var) -> Result<Var, DiffError> {
        let value = Tensor::scalar(self.value(a).data().iter().map(|v| v * v).sum::<f64>().sqrt());
        self.push("l2_norm", value, Op::L2Norm(a))
    }

    /// Per-row Euclidean norms of a matrix, as an `[rows × 1]` column.
    pub fn row_norms(&self, a: Var) -> Result<Var, DiffError> {
        let value = {
            let x = self.value(a);
            check_matrix("row_norms", &x)?;
            let data = (0..x.rows()).map(|r| x.row(r).iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
            Tensor::matrix(x.rows(), 1, data)
        };
        self.push("row_norms", value, Op::RowNorms(a))
    }

    pub fn sum(&self, a: Var) -> Result<Var, DiffError> {
        let value = Tensor::scalar(self.value(a).data().iter().sum());
        self.push("sum", value, Op::Sum(a))
    }

    /// Reverse sweep from a scalar `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients, DiffError> {
        let nodes = self.nodes.borrow();
        let root_shape = nodes[root.0].value.shape().to_vec();
        if nodes[root.0].value.len() != 1 {
            return Err(DiffError::NonScalarRoot { shape: root_shape });
        }
        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::full(&root_shape, 1.0));

        fn acc(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot => *slot = Some(g),
            }
        }

        for idx in (0..=root.0).rev() {
            let node = &nodes[idx];
            if matches!(node.op, Op::Leaf { .. }) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let val = |v: Var| &nodes[v.0].value;
            match &node.op {
                Op::Leaf { .. } => unreachable!(),
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, g.map(|x| -x));
                    acc(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    acc(&mut grads, *a, g.zip(val(*b), |x, y| x * y));
                    acc(&mut grads, *b, g.zip(val(*a), |x, y| x * y));
                }
                Op::Scale(a, c) => acc(&mut grads, *a, g.map(|x| c * x)),
                Op::Tanh(a) => acc(&mut grads, *a, g.zip(&node.value, |x, y| x * (1.0 - y * y))),
                Op::Relu(a) => acc(&mut grads, *a, g.zip(val(*a), |x, y| if y > 0.0 { x } else { 0.0 })),
                Op::MatMul(a, b) => {
                    let (x, y) = (val(*a), val(*b));
                    let (m, k, n) = (x.rows(), x.cols(), y.cols());
                    acc(&mut grads, *a, Tensor::matrix(m, k, matmul_a_bt(g.data(), y.data(), m, n, k)));
                    acc(&mut grads, *b, Tensor::matrix(k, n, matmul_at_b(x.data(), g.data(), m, k, n)));
                }
                Op::AddRow(x, bias) => {
                    let b = val(*bias);
                    let cols = b.len();
                    let mut gb = vec![0.0; cols];
                    for (i, v) in g.data().iter().enumerate() {
                        gb[i % cols] += v;
                    }
                    acc(&mut grads, *bias, Tensor::new(b.shape().to_vec(), gb)?);
                    acc(&mut grads, *x, g);
                }
                Op::Gather(x, indices) => {
                    let xv = val(*x);
                    let cols = xv.cols();
                    let mut gx = Tensor::zeros(xv.shape());
                    for (r, &i) in indices.iter().enumerate() {
                        for (o, v) in gx.data_mut()[i * cols..(i + 1) * cols].iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::ScatterAdd(x, indices) => {
                    let cols = g.cols();
                    let mut data = Vec::with_capacity(indices.len() * cols);
                    for &i in indices.iter() {
                        data.extend_from_slice(g.row(i));
                    }
                    acc(&mut grads, *x, Tensor::matrix(indices.len(), cols, data));
                }
                Op::SegmentMean(x, segments, inv) => {
                    let cols = g.cols();
                    let mut data = Vec::with_capacity(segments.len() * cols);
                    for &s in segments.iter() {
                        data.extend(g.row(s).iter().map(|v| v * inv[s]));
                    }
                    acc(&mut grads, *x, Tensor::matrix(segments.len(), cols, data));
                }
                Op::ConcatCols(a, b) => {
                    let (ca, cb) = (val(*a).cols(), val(*b).cols());
                    let rows = g.rows();
                    let mut ga = Vec::with_capacity(rows * ca);
                    let mut gb = Vec::with_capacity(rows * cb);
                    for r in 0..rows {
                        let row = g.row(r);
                        ga.extend_from_slice(&row[..ca]);
                        gb.extend_from_slice(&row[ca..]);
                    }
                    acc(&mut grads, *a, Tensor::matrix(rows, ca, ga));
                    acc(&mut grads, *b, Tensor::matrix(rows, cb, gb));
                }
                Op::Mse(a, b) => {
                    let (x, y) = (val(*a), val(*b));
                    let c = 2.0 * g.item() / x.len() as f64;
                    let ga = x.zip(y, |p, q| c * (p - q));
                    acc(&mut grads, *b, ga.map(|v| -v));
                    acc(&mut grads, *a, ga);
                }
                Op::L2Norm(a) => {
                    let norm = node.value.item();
                    let c = if norm > 0.0 { g.item() / norm } else { 0.0 };
                    acc(&mut grads, *a, val(*a).map(|v| c * v));
                }
                Op::RowNorms(a) => {
                    let x = val(*a);
                    let cols = x.cols();
                    let mut gx = x.clone();
                    for (i, v) in gx.data_mut().iter_mut().enumerate() {
                        let r = i / cols;
                        let norm = node.value.data()[r];
                        *v = if norm > 0.0 { g.data()[r] * *v / norm } else { 0.0 };
                    }
                    acc(&mut grads, *a, gx);
                }
                Op::Sum(a) => acc(&mut grads, *a, Tensor::full(val(*a).shape(), g.item())),
            }
        }

        let shapes = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        for (idx, node) in nodes.iter().enumerate() {
            if !matches!(node.op, Op::Leaf { trainable: true }) {
                grads[idx] = None;
            }
        }
        Ok(Gradients { grads, shapes })
    }
}
