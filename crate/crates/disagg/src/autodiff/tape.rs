use std::cell::RefCell;
use std::sync::Arc;

use ndarray::{Array2, Axis};

use crate::error::{Error, Result};
use crate::geo::AggregationMatrix;

/// Handle to a node on a [`Tape`]. Valid only for the tape that created it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    /// x (m×n) + b (1×n), broadcast over rows.
    AddBias(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    /// Elementwise product.
    Mul(usize, usize),
    Relu(usize),
    Sigmoid(usize),
    Tanh(usize),
    Abs(usize),
    /// Column-wise concatenation.
    Concat(usize, usize),
    /// Columns `start..end` of the input.
    SliceCols(usize, usize, usize),
    ScalarMul(usize, f64),
    Sum(usize),
    Mean(usize),
    /// Differentiable fine→coarse re-aggregation, rows are batch entries.
    Aggregate(usize, Arc<AggregationMatrix>),
}

struct Node {
    value: Array2<f64>,
    op: Op,
    requires_grad: bool,
    /// Persistent gradient accumulator; populated by `backward` for
    /// grad-requiring leaves (and interior nodes, for inspection).
    grad: Option<Array2<f64>>,
}

/// Reverse-mode tape over dense 64-bit matrices.
///
/// Every value is a 2-D matrix; vectors are 1×n rows and scalars 1×1. A tape
/// and its [`Var`]s belong to one training step in one thread; a fresh tape is
/// created per step, which is what clears it.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    backwarded: RefCell<Vec<usize>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            backwarded: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Inserts an input; `requires_grad` marks it as a trainable parameter.
    pub fn leaf(&self, value: Array2<f64>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn scalar(&self, value: f64) -> Var {
        self.leaf(Array2::from_elem((1, 1), value), false)
    }

    pub fn value(&self, v: Var) -> Array2<f64> {
        self.nodes.borrow()[v.0].value.clone()
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.nodes.borrow()[v.0].value[(0, 0)]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let nodes = self.nodes.borrow();
        let d = nodes[v.0].value.dim();
        d
    }

    /// Accumulated gradient of a leaf (zeros if backward never reached it).
    pub fn grad(&self, v: Var) -> Array2<f64> {
        let nodes = self.nodes.borrow();
        match &nodes[v.0].grad {
            Some(g) => g.clone(),
            None => Array2::zeros(nodes[v.0].value.dim()),
        }
    }

    fn push(&self, value: Array2<f64>, op: Op, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(nodes.len() - 1)
    }

    fn requires(&self, i: usize) -> bool {
        self.nodes.borrow()[i].requires_grad
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = {
            let nodes = self.nodes.borrow();
            (nodes[a.0].value.dim(), nodes[b.0].value.dim())
        };
        if va.1 != vb.0 {
            return Err(Error::Shape(format!(
                "matmul: ({}, {}) × ({}, {})",
                va.0, va.1, vb.0, vb.1
            )));
        }
        let value = {
            let nodes = self.nodes.borrow();
            nodes[a.0].value.dot(&nodes[b.0].value)
        };
        let rg = self.requires(a.0) || self.requires(b.0);
        Ok(self.push(value, Op::MatMul(a.0, b.0), rg))
    }

    pub fn add_bias(&self, x: Var, bias: Var) -> Result<Var> {
        let (vx, vb) = {
            let nodes = self.nodes.borrow();
            (nodes[x.0].value.dim(), nodes[bias.0].value.dim())
        };
        if vb.0 != 1 || vb.1 != vx.1 {
            return Err(Error::Shape(format!(
                "add_bias: input ({}, {}) with bias ({}, {})",
                vx.0, vx.1, vb.0, vb.1
            )));
        }
        let value = {
            let nodes = self.nodes.borrow();
            &nodes[x.0].value + &nodes[bias.0].value
        };
        let rg = self.requires(x.0) || self.requires(bias.0);
        Ok(self.push(value, Op::AddBias(x.0, bias.0), rg))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let nodes = self.nodes.borrow();
        let (va, vb) = (nodes[a.0].value.dim(), nodes[b.0].value.dim());
        if va != vb {
            return Err(Error::Shape(format!(
                "{what}: ({}, {}) vs ({}, {})",
                va.0, va.1, vb.0, vb.1
            )));
        }
        Ok(())
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let value = {
            let nodes = self.nodes.borrow();
            &nodes[a.0].value + &nodes[b.0].value
        };
        let rg = self.requires(a.0) || self.requires(b.0);
        Ok(self.push(value, Op::Add(a.0, b.0), rg))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let value = {
            let nodes = self.nodes.borrow();
            &nodes[a.0].value - &nodes[b.0].value
        };
        let rg = self.requires(a.0) || self.requires(b.0);
        Ok(self.push(value, Op::Sub(a.0, b.0), rg))
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let value = {
            let nodes = self.nodes.borrow();
            &nodes[a.0].value * &nodes[b.0].value
        };
        let rg = self.requires(a.0) || self.requires(b.0);
        Ok(self.push(value, Op::Mul(a.0, b.0), rg))
    }

    pub fn relu(&self, x: Var) -> Var {
        let value = self.nodes.borrow()[x.0].value.mapv(|v| v.max(0.0));
        let rg = self.requires(x.0);
        self.push(value, Op::Relu(x.0), rg)
    }

    pub fn sigmoid(&self, x: Var) -> Var {
        let value = self.nodes.borrow()[x.0].value.mapv(|v| 1.0 / (1.0 + (-v).exp()));
        let rg = self.requires(x.0);
        self.push(value, Op::Sigmoid(x.0), rg)
    }

    pub fn tanh(&self, x: Var) -> Var {
        let value = self.nodes.borrow()[x.0].value.mapv(f64::tanh);
        let rg = self.requires(x.0);
        self.push(value, Op::Tanh(x.0), rg)
    }

    pub fn abs(&self, x: Var) -> Var {
        let value = self.nodes.borrow()[x.0].value.mapv(f64::abs);
        let rg = self.requires(x.0);
        self.push(value, Op::Abs(x.0), rg)
    }

    pub fn concat(&self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = {
            let nodes = self.nodes.borrow();
            (nodes[a.0].value.dim(), nodes[b.0].value.dim())
        };
        if va.0 != vb.0 {
            return Err(Error::Shape(format!(
                "concat: ({}, {}) vs ({}, {})",
                va.0, va.1, vb.0, vb.1
            )));
        }
        let value = {
            let nodes = self.nodes.borrow();
            ndarray::concatenate(Axis(1), &[nodes[a.0].value.view(), nodes[b.0].value.view()])
                .map_err(|e| Error::Shape(e.to_string()))?
        };
        let rg = self.requires(a.0) || self.requires(b.0);
        Ok(self.push(value, Op::Concat(a.0, b.0), rg))
    }

    pub fn slice_cols(&self, x: Var, start: usize, end: usize) -> Result<Var> {
        let dim = self.nodes.borrow()[x.0].value.dim();
        if start >= end || end > dim.1 {
            return Err(Error::Shape(format!(
                "slice_cols: [{start}, {end}) of ({}, {})",
                dim.0, dim.1
            )));
        }
        let value = {
            let nodes = self.nodes.borrow();
            nodes[x.0].value.slice(ndarray::s![.., start..end]).to_owned()
        };
        let rg = self.requires(x.0);
        Ok(self.push(value, Op::SliceCols(x.0, start, end), rg))
    }

    pub fn scalar_mul(&self, x: Var, c: f64) -> Var {
        let value = self.nodes.borrow()[x.0].value.mapv(|v| v * c);
        let rg = self.requires(x.0);
        self.push(value, Op::ScalarMul(x.0, c), rg)
    }

    pub fn sum(&self, x: Var) -> Var {
        let total = self.nodes.borrow()[x.0].value.sum();
        let rg = self.requires(x.0);
        self.push(Array2::from_elem((1, 1), total), Op::Sum(x.0), rg)
    }

    pub fn mean(&self, x: Var) -> Var {
        let nodes = self.nodes.borrow();
        let n = nodes[x.0].value.len();
        let total = nodes[x.0].value.sum();
        drop(nodes);
        let rg = self.requires(x.0);
        self.push(
            Array2::from_elem((1, 1), total / n as f64),
            Op::Mean(x.0),
            rg,
        )
    }

    /// Re-aggregates each row from the matrix's fine level to its coarse
    /// level; gradient flows back through the summation.
    pub fn aggregate(&self, x: Var, matrix: &Arc<AggregationMatrix>) -> Result<Var> {
        let dim = self.nodes.borrow()[x.0].value.dim();
        if dim.1 != matrix.fine_dim() {
            return Err(Error::Shape(format!(
                "aggregate: ({}, {}) through a matrix with {} fine units",
                dim.0,
                dim.1,
                matrix.fine_dim()
            )));
        }
        let value = {
            let nodes = self.nodes.borrow();
            matrix.apply(nodes[x.0].value.view())?
        };
        let rg = self.requires(x.0);
        Ok(self.push(value, Op::Aggregate(x.0, Arc::clone(matrix)), rg))
    }

    /// Mean over all entries of `|pred − target|`, as a 1×1 node.
    ///
    /// The L1 subgradient uses sign(0) = 0.
    pub fn l1_loss(&self, pred: Var, target: Var) -> Result<Var> {
        let diff = self.sub(pred, target)?;
        let absdiff = self.abs(diff);
        Ok(self.mean(absdiff))
    }

    /// Propagates gradients from a scalar node into every grad-requiring
    /// leaf, adding to any gradients already accumulated. Calling backward
    /// twice from the same node is rejected; use a fresh tape per step.
    pub fn backward(&self, root: Var) -> Result<()> {
        {
            let nodes = self.nodes.borrow();
            if nodes.is_empty() {
                return Err(Error::Numeric("backward on an empty tape".into()));
            }
            let dim = nodes[root.0].value.dim();
            if dim != (1, 1) {
                return Err(Error::Shape(format!(
                    "backward requires a scalar loss, got ({}, {})",
                    dim.0, dim.1
                )));
            }
        }
        {
            let mut done = self.backwarded.borrow_mut();
            if done.contains(&root.0) {
                return Err(Error::Numeric(
                    "backward called twice on the same loss without reset".into(),
                ));
            }
            done.push(root.0);
        }

        let mut nodes = self.nodes.borrow_mut();
        // Per-pass adjoints keep repeated backward calls additive.
        let mut adjoint: Vec<Option<Array2<f64>>> = (0..=root.0).map(|_| None).collect();
        adjoint[root.0] = Some(Array2::ones((1, 1)));

        for i in (0..=root.0).rev() {
            let Some(d) = adjoint[i].take() else { continue };
            if !nodes[i].requires_grad {
                continue;
            }
            match &nodes[i].op {
                Op::Leaf => {
                    let slot = &mut nodes[i].grad;
                    match slot {
                        Some(g) => *g += &d,
                        None => *slot = Some(d),
                    }
                    continue;
                }
                _ => {}
            }
            // Enum data is copied out so `nodes` can be indexed mutably below.
            enum Back {
                Into(usize, Array2<f64>),
            }
            let mut pushes: Vec<Back> = Vec::new();
            match &nodes[i].op {
                Op::Leaf => unreachable!(),
                Op::MatMul(a, b) => {
                    if nodes[*a].requires_grad {
                        pushes.push(Back::Into(*a, d.dot(&nodes[*b].value.t())));
                    }
                    if nodes[*b].requires_grad {
                        pushes.push(Back::Into(*b, nodes[*a].value.t().dot(&d)));
                    }
                }
                Op::AddBias(x, b) => {
                    if nodes[*x].requires_grad {
                        pushes.push(Back::Into(*x, d.clone()));
                    }
                    if nodes[*b].requires_grad {
                        let db = d.sum_axis(Axis(0)).insert_axis(Axis(0));
                        pushes.push(Back::Into(*b, db));
                    }
                }
                Op::Add(a, b) => {
                    if nodes[*a].requires_grad {
                        pushes.push(Back::Into(*a, d.clone()));
                    }
                    if nodes[*b].requires_grad {
                        pushes.push(Back::Into(*b, d.clone()));
                    }
                }
                Op::Sub(a, b) => {
                    if nodes[*a].requires_grad {
                        pushes.push(Back::Into(*a, d.clone()));
                    }
                    if nodes[*b].requires_grad {
                        pushes.push(Back::Into(*b, d.mapv(|v| -v)));
                    }
                }
                Op::Mul(a, b) => {
                    if nodes[*a].requires_grad {
                        pushes.push(Back::Into(*a, &d * &nodes[*b].value));
                    }
                    if nodes[*b].requires_grad {
                        pushes.push(Back::Into(*b, &d * &nodes[*a].value));
                    }
                }
                Op::Relu(x) => {
                    if nodes[*x].requires_grad {
                        let mask = nodes[*x].value.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
                        pushes.push(Back::Into(*x, &d * &mask));
                    }
                }
                Op::Sigmoid(x) => {
                    if nodes[*x].requires_grad {
                        let y = &nodes[i].value;
                        pushes.push(Back::Into(*x, &d * &(y * &y.mapv(|v| 1.0 - v))));
                    }
                }
                Op::Tanh(x) => {
                    if nodes[*x].requires_grad {
                        let dy = nodes[i].value.mapv(|v| 1.0 - v * v);
                        pushes.push(Back::Into(*x, &d * &dy));
                    }
                }
                Op::Abs(x) => {
                    if nodes[*x].requires_grad {
                        let sign = nodes[*x].value.mapv(|v| {
                            if v > 0.0 {
                                1.0
                            } else if v < 0.0 {
                                -1.0
                            } else {
                                0.0
                            }
                        });
                        pushes.push(Back::Into(*x, &d * &sign));
                    }
                }
                Op::Concat(a, b) => {
                    let na = nodes[*a].value.ncols();
                    if nodes[*a].requires_grad {
                        pushes.push(Back::Into(*a, d.slice(ndarray::s![.., ..na]).to_owned()));
                    }
                    if nodes[*b].requires_grad {
                        pushes.push(Back::Into(*b, d.slice(ndarray::s![.., na..]).to_owned()));
                    }
                }
                Op::SliceCols(x, start, end) => {
                    if nodes[*x].requires_grad {
                        let mut dx = Array2::zeros(nodes[*x].value.dim());
                        dx.slice_mut(ndarray::s![.., *start..*end]).assign(&d);
                        pushes.push(Back::Into(*x, dx));
                    }
                }
                Op::ScalarMul(x, c) => {
                    if nodes[*x].requires_grad {
                        pushes.push(Back::Into(*x, d.mapv(|v| v * c)));
                    }
                }
                Op::Sum(x) => {
                    if nodes[*x].requires_grad {
                        let dx = Array2::from_elem(nodes[*x].value.dim(), d[(0, 0)]);
                        pushes.push(Back::Into(*x, dx));
                    }
                }
                Op::Mean(x) => {
                    if nodes[*x].requires_grad {
                        let n = nodes[*x].value.len() as f64;
                        let dx = Array2::from_elem(nodes[*x].value.dim(), d[(0, 0)] / n);
                        pushes.push(Back::Into(*x, dx));
                    }
                }
                Op::Aggregate(x, m) => {
                    if nodes[*x].requires_grad {
                        let mut dx = Array2::zeros(nodes[*x].value.dim());
                        for (c, &p) in m.parents().iter().enumerate() {
                            for t in 0..dx.nrows() {
                                dx[(t, c)] = d[(t, p)];
                            }
                        }
                        pushes.push(Back::Into(*x, dx));
                    }
                }
            }
            for Back::Into(j, dj) in pushes {
                match &mut adjoint[j] {
                    Some(g) => *g += &dj,
                    slot @ None => *slot = Some(dj),
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn primitives_match_definitions() {
        let tape = Tape::new();
        let x = tape.leaf(array![[-1.0, 0.0, 2.0]], false);
        assert_eq!(tape.value(tape.relu(x)), array![[0.0, 0.0, 2.0]]);
        let i3 = tape.leaf(Array2::eye(3), false);
        let a = tape.leaf(array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0], [7.0, 8.0, 9.0]], false);
        assert_eq!(tape.value(tape.matmul(i3, a).unwrap()), tape.value(a));
        let v = tape.leaf(array![[1.0, -3.0]], false);
        assert_eq!(tape.scalar_value(tape.mean(tape.abs(v))), 2.0);
    }

    #[test]
    fn shape_errors_name_both_shapes() {
        let tape = Tape::new();
        let a = tape.leaf(Array2::zeros((2, 3)), false);
        let b = tape.leaf(Array2::zeros((2, 3)), false);
        let err = tape.matmul(a, b).unwrap_err();
        assert!(err.to_string().contains("(2, 3)"), "{err}");
    }

    #[test]
    fn linear_loss_gradient_is_input() {
        let tape = Tape::new();
        let w = tape.leaf(array![[1.0, 2.0, 3.0]], true);
        let x = tape.leaf(array![[4.0, 5.0, 6.0]], false);
        let loss = tape.sum(tape.mul(w, x).unwrap());
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(w), array![[4.0, 5.0, 6.0]]);
    }

    #[test]
    fn l1_loss_value_and_subgradient() {
        let tape = Tape::new();
        let pred = tape.leaf(array![[0.0, 0.0]], true);
        let target = tape.leaf(array![[2.0, 4.0]], false);
        let loss = tape.l1_loss(pred, target).unwrap();
        assert_eq!(tape.scalar_value(loss), 3.0);
        tape.backward(loss).unwrap();
        // d/dpred = sign(pred − target)/count.
        assert_eq!(tape.grad(pred), array![[-0.5, -0.5]]);

        // Equal pred/target: zero loss, sign(0) = 0 gradient.
        let tape = Tape::new();
        let pred = tape.leaf(array![[1.0, 2.0]], true);
        let target = tape.leaf(array![[1.0, 2.0]], false);
        let loss = tape.l1_loss(pred, target).unwrap();
        assert_eq!(tape.scalar_value(loss), 0.0);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(pred), array![[0.0, 0.0]]);
    }

    #[test]
    fn sequential_backwards_accumulate_like_a_sum() {
        let build = |tape: &Tape, w: Var| {
            let x = tape.leaf(array![[2.0], [3.0]], false);
            let y = tape.matmul(x, w).unwrap();
            let t = tape.leaf(array![[1.0], [5.0]], false);
            let l1 = tape.l1_loss(y, t).unwrap();
            let s = tape.sum(y);
            (l1, s)
        };
        let w0 = array![[0.5]];

        let tape_a = Tape::new();
        let wa = tape_a.leaf(w0.clone(), true);
        let (l1, l2) = build(&tape_a, wa);
        tape_a.backward(l1).unwrap();
        tape_a.backward(l2).unwrap();

        let tape_b = Tape::new();
        let wb = tape_b.leaf(w0, true);
        let (l1, l2) = build(&tape_b, wb);
        let total = tape_b.add(l1, l2).unwrap();
        tape_b.backward(total).unwrap();

        let ga = tape_a.grad(wa);
        let gb = tape_b.grad(wb);
        assert!((ga[(0, 0)] - gb[(0, 0)]).abs() < 1e-12);
    }

    #[test]
    fn backward_guards() {
        let tape = Tape::new();
        let x = tape.leaf(array![[1.0, 2.0]], true);
        assert!(tape.backward(x).is_err()); // non-scalar
        let s = tape.sum(x);
        tape.backward(s).unwrap();
        assert!(tape.backward(s).is_err()); // twice on the same loss
    }

    #[test]
    fn aggregate_routes_gradients_to_children() {
        use crate::geo::{CellGrid, GeoHierarchy};
        let h = GeoHierarchy::regular(
            CellGrid { rows: 2, cols: 4, cell_size_m: 1.0 },
            &[("p", 1, 2), ("c", 1, 4)],
        )
        .unwrap();
        let m = Arc::new(h.aggregation_matrix("c", "p").unwrap());
        let tape = Tape::new();
        let x = tape.leaf(array![[1.0, 2.0, 3.0, 4.0]], true);
        let y = tape.aggregate(x, &m).unwrap();
        assert_eq!(tape.value(y), array![[3.0, 7.0]]);
        let w = tape.leaf(array![[10.0, 1.0]], false);
        let loss = tape.sum(tape.mul(y, w).unwrap());
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x), array![[10.0, 10.0, 1.0, 1.0]]);
    }

    #[test]
    fn slice_and_concat_round_trip_gradients() {
        let tape = Tape::new();
        let a = tape.leaf(array![[1.0, 2.0]], true);
        let b = tape.leaf(array![[3.0]], true);
        let joined = tape.concat(a, b).unwrap();
        let left = tape.slice_cols(joined, 0, 2).unwrap();
        let right = tape.slice_cols(joined, 2, 3).unwrap();
        let l = tape.add(tape.sum(left), tape.scalar_mul(tape.sum(right), 2.0)).unwrap();
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(a), array![[1.0, 1.0]]);
        assert_eq!(tape.grad(b), array![[2.0]]);
    }
}
