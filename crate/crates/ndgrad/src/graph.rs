use std::cell::RefCell;

use crate::tensor::{Real, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

enum Op<T: Real> {
    Leaf,
    Matmul { a: usize, b: usize },
    Add { a: usize, b: usize },
    AddBias { a: usize, bias: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Neg { a: usize },
    AddScalar { a: usize },
    MulScalar { a: usize, c: T },
    RsubScalar { a: usize },
    Relu { a: usize },
    Tanh { a: usize },
    Exp { a: usize },
    Ln { a: usize },
    Clamp { a: usize, lo: T, hi: T },
    Minimum { a: usize, b: usize },
    ConcatCols { parts: Vec<usize> },
    SliceCols { a: usize, start: usize, len: usize },
    RowSum { a: usize },
    SumAll { a: usize },
    MeanAll { a: usize },
    Reshape { a: usize },
}

struct Node<T: Real> {
    shape: Vec<usize>,
    data: Vec<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Operation tape recorded during a forward pass. Nodes are appended in
/// topological order, so one reverse sweep visits each node exactly once.
///
/// A graph is single-threaded; independent graphs may live on different
/// threads with no shared state.
pub struct Graph<T: Real> {
    nodes: RefCell<Vec<Node<T>>>,
    grads: RefCell<Vec<Option<Vec<T>>>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: RefCell::new(Vec::new()), grads: RefCell::new(Vec::new()) }
    }

    fn push(&self, shape: Vec<usize>, data: Vec<T>, op: Op<T>, needs_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { shape, data, op, needs_grad });
        Var(nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].needs_grad
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn shape_of(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].shape.clone()
    }

    /// Copy of the forward value at `v`.
    pub fn value(&self, v: Var) -> Tensor<T> {
        let nodes = self.nodes.borrow();
        Tensor::new(nodes[v.0].shape.clone(), nodes[v.0].data.clone())
    }

    pub fn value_data(&self, v: Var) -> Vec<T> {
        self.nodes.borrow()[v.0].data.clone()
    }

    pub fn scalar_value(&self, v: Var) -> T {
        let nodes = self.nodes.borrow();
        assert_eq!(nodes[v.0].data.len(), 1, "scalar_value on non-scalar node");
        nodes[v.0].data[0]
    }

    // ---- leaves -------------------------------------------------------

    pub fn leaf(&self, shape: Vec<usize>, data: Vec<T>, requires_grad: bool) -> Var {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "leaf data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        self.push(shape, data, Op::Leaf, requires_grad)
    }

    /// Leaf carrying the tensor's value; `requires_grad` is taken from the
    /// tensor unless overridden with [`Graph::input_const`].
    pub fn input(&self, t: &Tensor<T>) -> Var {
        self.leaf(t.shape().to_vec(), t.data().to_vec(), t.requires_grad())
    }

    pub fn input_const(&self, t: &Tensor<T>) -> Var {
        self.leaf(t.shape().to_vec(), t.data().to_vec(), false)
    }

    pub fn constant(&self, shape: Vec<usize>, data: Vec<T>) -> Var {
        self.leaf(shape, data, false)
    }

    pub fn constant_scalar(&self, v: T) -> Var {
        self.leaf(vec![], vec![v], false)
    }

    // ---- ops ----------------------------------------------------------

    fn rows_cols(&self, v: Var, what: &str) -> (usize, usize) {
        let nodes = self.nodes.borrow();
        let shape = &nodes[v.0].shape;
        assert_eq!(shape.len(), 2, "{what} expects a 2-d operand, got shape {shape:?}");
        (shape[0], shape[1])
    }

    /// `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&self, a: Var, b: Var) -> Var {
        let (m, ka) = self.rows_cols(a, "matmul lhs");
        let (kb, n) = self.rows_cols(b, "matmul rhs");
        assert_eq!(ka, kb, "matmul inner dims differ: [{m},{ka}] x [{kb},{n}]");
        let mut out = vec![T::ZERO; m * n];
        {
            let nodes = self.nodes.borrow();
            unsafe {
                T::gemm(
                    m,
                    ka,
                    n,
                    T::ONE,
                    nodes[a.0].data.as_ptr(),
                    ka as isize,
                    1,
                    nodes[b.0].data.as_ptr(),
                    n as isize,
                    1,
                    T::ZERO,
                    out.as_mut_ptr(),
                    n as isize,
                    1,
                );
            }
        }
        let needs = self.needs(a) || self.needs(b);
        self.push(vec![m, n], out, Op::Matmul { a: a.0, b: b.0 }, needs)
    }

    fn zip_elementwise(&self, a: Var, b: Var, what: &str, f: impl Fn(T, T) -> T) -> (Vec<usize>, Vec<T>) {
        let nodes = self.nodes.borrow();
        let (na, nb) = (&nodes[a.0], &nodes[b.0]);
        assert_eq!(na.shape, nb.shape, "{what} shape mismatch: {:?} vs {:?}", na.shape, nb.shape);
        let data = na.data.iter().zip(&nb.data).map(|(&x, &y)| f(x, y)).collect();
        (na.shape.clone(), data)
    }

    pub fn add(&self, a: Var, b: Var) -> Var {
        let (shape, data) = self.zip_elementwise(a, b, "add", |x, y| x + y);
        let needs = self.needs(a) || self.needs(b);
        self.push(shape, data, Op::Add { a: a.0, b: b.0 }, needs)
    }

    /// `[B,n] + [n]`, broadcasting the bias over rows.
    pub fn add_bias(&self, a: Var, bias: Var) -> Var {
        let (rows, cols) = self.rows_cols(a, "add_bias lhs");
        let (shape, data) = {
            let nodes = self.nodes.borrow();
            let nb = &nodes[bias.0];
            assert_eq!(nb.shape, vec![cols], "add_bias: bias shape {:?} does not match row width {cols}", nb.shape);
            let na = &nodes[a.0];
            let mut out = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                for c in 0..cols {
                    out.push(na.data[r * cols + c] + nb.data[c]);
                }
            }
            (na.shape.clone(), out)
        };
        let needs = self.needs(a) || self.needs(bias);
        self.push(shape, data, Op::AddBias { a: a.0, bias: bias.0 }, needs)
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        let (shape, data) = self.zip_elementwise(a, b, "sub", |x, y| x - y);
        let needs = self.needs(a) || self.needs(b);
        self.push(shape, data, Op::Sub { a: a.0, b: b.0 }, needs)
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        let (shape, data) = self.zip_elementwise(a, b, "mul", |x, y| x * y);
        let needs = self.needs(a) || self.needs(b);
        self.push(shape, data, Op::Mul { a: a.0, b: b.0 }, needs)
    }

    pub fn neg(&self, a: Var) -> Var {
        let (shape, data) = self.map_elementwise(a, |x| -x);
        self.push(shape, data, Op::Neg { a: a.0 }, self.needs(a))
    }

    fn map_elementwise(&self, a: Var, f: impl Fn(T) -> T) -> (Vec<usize>, Vec<T>) {
        let nodes = self.nodes.borrow();
        let na = &nodes[a.0];
        (na.shape.clone(), na.data.iter().map(|&x| f(x)).collect())
    }

    pub fn add_scalar(&self, a: Var, c: T) -> Var {
        let (shape, data) = self.map_elementwise(a, |x| x + c);
        self.push(shape, data, Op::AddScalar { a: a.0 }, self.needs(a))
    }

    pub fn mul_scalar(&self, a: Var, c: T) -> Var {
        let (shape, data) = self.map_elementwise(a, |x| x * c);
        self.push(shape, data, Op::MulScalar { a: a.0, c }, self.needs(a))
    }

    /// `c - a`.
    pub fn rsub_scalar(&self, a: Var, c: T) -> Var {
        let (shape, data) = self.map_elementwise(a, |x| c - x);
        self.push(shape, data, Op::RsubScalar { a: a.0 }, self.needs(a))
    }

    pub fn relu(&self, a: Var) -> Var {
        let (shape, data) = self.map_elementwise(a, |x| if x > T::ZERO { x } else { T::ZERO });
        self.push(shape, data, Op::Relu { a: a.0 }, self.needs(a))
    }

    pub fn tanh(&self, a: Var) -> Var {
        let (shape, data) = self.map_elementwise(a, |x| x.tanh());
        self.push(shape, data, Op::Tanh { a: a.0 }, self.needs(a))
    }

    pub fn exp(&self, a: Var) -> Var {
        let (shape, data) = self.map_elementwise(a, |x| x.exp());
        self.push(shape, data, Op::Exp { a: a.0 }, self.needs(a))
    }

    pub fn ln(&self, a: Var) -> Var {
        let (shape, data) = self.map_elementwise(a, |x| x.ln());
        self.push(shape, data, Op::Ln { a: a.0 }, self.needs(a))
    }

    /// Element-wise clamp. Gradient passes through strictly inside the
    /// interval and is zero where the value was clipped.
    pub fn clamp(&self, a: Var, lo: T, hi: T) -> Var {
        assert!(lo < hi, "clamp interval is empty");
        let (shape, data) = self.map_elementwise(a, |x| {
            if x < lo {
                lo
            } else if x > hi {
                hi
            } else {
                x
            }
        });
        self.push(shape, data, Op::Clamp { a: a.0, lo, hi }, self.needs(a))
    }

    /// Element-wise minimum; ties route the gradient to the first operand.
    pub fn minimum(&self, a: Var, b: Var) -> Var {
        let (shape, data) = self.zip_elementwise(a, b, "minimum", |x, y| if x <= y { x } else { y });
        let needs = self.needs(a) || self.needs(b);
        self.push(shape, data, Op::Minimum { a: a.0, b: b.0 }, needs)
    }

    /// Concatenate 2-d operands with equal row counts along columns.
    pub fn concat_cols(&self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols needs at least one part");
        let rows = self.rows_cols(parts[0], "concat_cols").0;
        let (shape, data) = {
            let nodes = self.nodes.borrow();
            let mut total = 0usize;
            for p in parts {
                let s = &nodes[p.0].shape;
                assert_eq!(s.len(), 2, "concat_cols expects 2-d parts, got {s:?}");
                assert_eq!(s[0], rows, "concat_cols row mismatch: {} vs {rows}", s[0]);
                total += s[1];
            }
            let mut out = Vec::with_capacity(rows * total);
            for r in 0..rows {
                for p in parts {
                    let n = &nodes[p.0];
                    let w = n.shape[1];
                    out.extend_from_slice(&n.data[r * w..(r + 1) * w]);
                }
            }
            (vec![rows, total], out)
        };
        let needs = parts.iter().any(|&p| self.needs(p));
        self.push(shape, data, Op::ConcatCols { parts: parts.iter().map(|p| p.0).collect() }, needs)
    }

    /// Columns `[start, start+len)` of a 2-d operand.
    pub fn slice_cols(&self, a: Var, start: usize, len: usize) -> Var {
        let (rows, cols) = self.rows_cols(a, "slice_cols");
        assert!(start + len <= cols, "slice_cols [{start}, {}) out of width {cols}", start + len);
        let data = {
            let nodes = self.nodes.borrow();
            let na = &nodes[a.0];
            let mut out = Vec::with_capacity(rows * len);
            for r in 0..rows {
                out.extend_from_slice(&na.data[r * cols + start..r * cols + start + len]);
            }
            out
        };
        self.push(vec![rows, len], data, Op::SliceCols { a: a.0, start, len }, self.needs(a))
    }

    /// `[B,n] -> [B]` sum over each row.
    pub fn row_sum(&self, a: Var) -> Var {
        let (rows, cols) = self.rows_cols(a, "row_sum");
        let data = {
            let nodes = self.nodes.borrow();
            let na = &nodes[a.0];
            (0..rows)
                .map(|r| {
                    let mut s = T::ZERO;
                    for c in 0..cols {
                        s = s + na.data[r * cols + c];
                    }
                    s
                })
                .collect()
        };
        self.push(vec![rows], data, Op::RowSum { a: a.0 }, self.needs(a))
    }

    pub fn sum_all(&self, a: Var) -> Var {
        let data = {
            let nodes = self.nodes.borrow();
            let mut s = T::ZERO;
            for &x in &nodes[a.0].data {
                s = s + x;
            }
            vec![s]
        };
        self.push(vec![], data, Op::SumAll { a: a.0 }, self.needs(a))
    }

    pub fn mean_all(&self, a: Var) -> Var {
        let (n, data) = {
            let nodes = self.nodes.borrow();
            let d = &nodes[a.0].data;
            assert!(!d.is_empty(), "mean_all of empty tensor");
            let mut s = T::ZERO;
            for &x in d {
                s = s + x;
            }
            (d.len(), vec![s / T::from_f64(d.len() as f64)])
        };
        let _ = n;
        self.push(vec![], data, Op::MeanAll { a: a.0 }, self.needs(a))
    }

    /// Reinterpret the buffer under a new shape with the same element count.
    pub fn reshape(&self, a: Var, shape: Vec<usize>) -> Var {
        let data = self.nodes.borrow()[a.0].data.clone();
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "reshape to {shape:?} does not preserve element count {}",
            data.len()
        );
        self.push(shape, data, Op::Reshape { a: a.0 }, self.needs(a))
    }

    // ---- backward -----------------------------------------------------

    /// Reverse sweep from a scalar loss. Populates gradients for every
    /// gradient-requiring leaf reachable from `loss`; read them back with
    /// [`Graph::grad`].
    pub fn backward(&self, loss: Var) {
        let nodes = self.nodes.borrow();
        assert_eq!(
            nodes[loss.0].data.len(),
            1,
            "backward requires a scalar loss, got shape {:?}",
            nodes[loss.0].shape
        );
        let mut grads: Vec<Option<Vec<T>>> = vec![None; nodes.len()];
        grads[loss.0] = Some(vec![T::ONE]);

        for i in (0..=loss.0).rev() {
            if !nodes[i].needs_grad {
                continue;
            }
            if matches!(nodes[i].op, Op::Leaf) {
                continue; // keep the accumulated gradient for readout
            }
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];

            macro_rules! acc {
                ($idx:expr, $len:expr) => {
                    grads[$idx].get_or_insert_with(|| vec![T::ZERO; $len])
                };
            }

            match &node.op {
                Op::Leaf => unreachable!(),
                Op::Matmul { a, b } => {
                    let (m, k) = (nodes[*a].shape[0], nodes[*a].shape[1]);
                    let n = nodes[*b].shape[1];
                    if nodes[*a].needs_grad {
                        let ga = acc!(*a, m * k);
                        // dA += dC * B^T
                        unsafe {
                            T::gemm(
                                m,
                                n,
                                k,
                                T::ONE,
                                g.as_ptr(),
                                n as isize,
                                1,
                                nodes[*b].data.as_ptr(),
                                1,
                                n as isize,
                                T::ONE,
                                ga.as_mut_ptr(),
                                k as isize,
                                1,
                            );
                        }
                    }
                    if nodes[*b].needs_grad {
                        let gb = acc!(*b, k * n);
                        // dB += A^T * dC
                        unsafe {
                            T::gemm(
                                k,
                                m,
                                n,
                                T::ONE,
                                nodes[*a].data.as_ptr(),
                                1,
                                k as isize,
                                g.as_ptr(),
                                n as isize,
                                1,
                                T::ONE,
                                gb.as_mut_ptr(),
                                n as isize,
                                1,
                            );
                        }
                    }
                }
                Op::Add { a, b } => {
                    for &p in [a, b].iter() {
                        if nodes[*p].needs_grad {
                            let gp = acc!(*p, g.len());
                            for (o, &gi) in gp.iter_mut().zip(&g) {
                                *o = *o + gi;
                            }
                        }
                    }
                }
                Op::AddBias { a, bias } => {
                    if nodes[*a].needs_grad {
                        let gp = acc!(*a, g.len());
                        for (o, &gi) in gp.iter_mut().zip(&g) {
                            *o = *o + gi;
                        }
                    }
                    if nodes[*bias].needs_grad {
                        let cols = nodes[*bias].data.len();
                        let gp = acc!(*bias, cols);
                        for (j, &gi) in g.iter().enumerate() {
                            gp[j % cols] = gp[j % cols] + gi;
                        }
                    }
                }
                Op::Sub { a, b } => {
                    if nodes[*a].needs_grad {
                        let gp = acc!(*a, g.len());
                        for (o, &gi) in gp.iter_mut().zip(&g) {
                            *o = *o + gi;
                        }
                    }
                    if nodes[*b].needs_grad {
                        let gp = acc!(*b, g.len());
                        for (o, &gi) in gp.iter_mut().zip(&g) {
                            *o = *o - gi;
                        }
                    }
                }
                Op::Mul { a, b } => {
                    if nodes[*a].needs_grad {
                        let gp = acc!(*a, g.len());
                        for ((o, &gi), &bv) in gp.iter_mut().zip(&g).zip(&nodes[*b].data) {
                            *o = *o + gi * bv;
                        }
                    }
                    if nodes[*b].needs_grad {
                        let gp = acc!(*b, g.len());
                        for ((o, &gi), &av) in gp.iter_mut().zip(&g).zip(&nodes[*a].data) {
                            *o = *o + gi * av;
                        }
                    }
                }
                Op::Neg { a } | Op::RsubScalar { a } => {
                    if nodes[*a].needs_grad {
                        let gp = acc!(*a, g.len());
                        for (o, &gi) in gp.iter_mut().zip(&g) {
                            *o = *o - gi;
                        }
                    }
                }
                Op::AddScalar { a } | Op::Reshape { a } => {
                    if nodes[*a].needs_grad {
                        let gp = acc!(*a, g.len());
                        for (o, &gi) in gp.iter_mut().zip(&g) {
                            *o = *o + gi;
                        }
                    }
                }
                Op::MulScalar { a, c } => {
                    if nodes[*a].needs_grad {
                        let gp = acc!(*a, g.len());
                        for (o, &gi) in gp.iter_mut().zip(&g) {
                            *o = *o + gi * *c;
                        }
                    }
                }
                Op::Relu { a } => {
                    if nodes[*a].needs_grad {
                        let gp = acc!(*a, g.len());
                        for ((o, &gi), &x) in gp.iter_mut().zip(&g).zip(&nodes[*a].data) {
                            if x > T::ZERO {
                                *o = *o + gi;
                            }
                        }
                    }
                }
                Op::Tanh { a } => {
                    if nodes[*a].needs_grad {
                        let gp = acc!(*a, g.len());
                        for ((o, &gi), &y) in gp.iter_mut().zip(&g).zip(&node.data) {
                            *o = *o + gi * (T::ONE - y * y);
                        }
                    }
                }
                Op::Exp { a } => {
                    if nodes[*a].needs_grad {
                        let gp = acc!(*a, g.len());
                        for ((o, &gi), &y) in gp.iter_mut().zip(&g).zip(&node.data) {
                            *o = *o + gi * y;
                        }
                    }
                }
                Op::Ln { a } => {
                    if nodes[*a].needs_grad {
                        let gp = acc!(*a, g.len());
                        for ((o, &gi), &x) in gp.iter_mut().zip(&g).zip(&nodes[*a].data) {
                            *o = *o + gi / x;
                        }
                    }
                }
                Op::Clamp { a, lo, hi } => {
                    if nodes[*a].needs_grad {
                        let gp = acc!(*a, g.len());
                        for ((o, &gi), &x) in gp.iter_mut().zip(&g).zip(&nodes[*a].data) {
                            if x >= *lo && x <= *hi {
                                *o = *o + gi;
                            }
                        }
                    }
                }
                Op::Minimum { a, b } => {
                    let (da, db) = (&nodes[*a].data, &nodes[*b].data);
                    if nodes[*a].needs_grad {
                        let gp = acc!(*a, g.len());
                        for j in 0..g.len() {
                            if da[j] <= db[j] {
                                gp[j] = gp[j] + g[j];
                            }
                        }
                    }
                    if nodes[*b].needs_grad {
                        let gp = acc!(*b, g.len());
                        for j in 0..g.len() {
                            if da[j] > db[j] {
                                gp[j] = gp[j] + g[j];
                            }
                        }
                    }
                }
                Op::ConcatCols { parts } => {
                    let rows = node.shape[0];
                    let total = node.shape[1];
                    let mut offset = 0usize;
                    for &p in parts {
                        let w = nodes[p].shape[1];
                        if nodes[p].needs_grad {
                            let gp = acc!(p, rows * w);
                            for r in 0..rows {
                                for c in 0..w {
                                    gp[r * w + c] = gp[r * w + c] + g[r * total + offset + c];
                                }
                            }
                        }
                        offset += w;
                    }
                }
                Op::SliceCols { a, start, len } => {
                    if nodes[*a].needs_grad {
                        let cols = nodes[*a].shape[1];
                        let rows = nodes[*a].shape[0];
                        let gp = acc!(*a, rows * cols);
                        for r in 0..rows {
                            for c in 0..*len {
                                gp[r * cols + start + c] = gp[r * cols + start + c] + g[r * len + c];
                            }
                        }
                    }
                }
                Op::RowSum { a } => {
                    if nodes[*a].needs_grad {
                        let cols = nodes[*a].shape[1];
                        let gp = acc!(*a, nodes[*a].data.len());
                        for (j, o) in gp.iter_mut().enumerate() {
                            *o = *o + g[j / cols];
                        }
                    }
                }
                Op::SumAll { a } => {
                    if nodes[*a].needs_grad {
                        let gp = acc!(*a, nodes[*a].data.len());
                        for o in gp.iter_mut() {
                            *o = *o + g[0];
                        }
                    }
                }
                Op::MeanAll { a } => {
                    if nodes[*a].needs_grad {
                        let n = nodes[*a].data.len();
                        let scale = g[0] / T::from_f64(n as f64);
                        let gp = acc!(*a, n);
                        for o in gp.iter_mut() {
                            *o = *o + scale;
                        }
                    }
                }
            }
        }
        *self.grads.borrow_mut() = grads;
    }

    /// Gradient of the last `backward` pass w.r.t. the leaf at `v`, if any.
    pub fn grad(&self, v: Var) -> Option<Vec<T>> {
        self.grads.borrow().get(v.0).and_then(|g| g.clone())
    }
}
