//! Reverse-mode automatic differentiation over a fixed op set.
//!
//! Operations are recorded eagerly on a tape; [`Tape::backward`] replays them
//! in reverse, accumulating gradients into per-node buffers. The op set is
//! exactly what the dense-network training objectives need: matmul, add (with
//! a row-broadcast variant for biases), relu, constant scale, full sum,
//! rank-1 softmax with component selection, and a fused cross-entropy over
//! batch rows against fixed target distributions. Target distributions are
//! stored as constants, so no gradient ever flows through a label assignment.

use crate::numerics::stable;
use crate::numerics::Tensor;
use crate::{Error, Result};
use std::cell::RefCell;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    grad: Vec<f64>,
    op: Op,
}

enum Op {
    Leaf,
    /// Elementwise sum of two same-shape nodes.
    Add(Var, Var),
    /// Row vector broadcast-added to every row of a matrix.
    AddRow(Var, Var),
    /// Elementwise scale by a constant.
    Scale(Var, f64),
    /// `[n,k] x [k,m] -> [n,m]`.
    MatMul(Var, Var),
    Relu(Var),
    /// Sum of all entries, scalar out.
    SumAll(Var),
    /// Rank-1 softmax (max-subtracted).
    Softmax(Var),
    /// Single component of a rank-1 node, scalar out.
    Select(Var, usize),
    /// `scale * Σ_i w_i · (logsumexp(row_i[..active]) − Σ_j t_ij · row_i[j])`,
    /// scalar out. `targets` is row-major `n × active`; `probs` caches the
    /// row softmax over the active columns for the backward pass.
    CrossEntropyRows {
        logits: Var,
        targets: Vec<f64>,
        weights: Vec<f64>,
        active: usize,
        scale: f64,
        probs: Vec<f64>,
    },
}

/// Computation tape. Create leaves with [`Tape::leaf`], combine them with the
/// op methods, then call [`Tape::backward`] on a scalar output.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
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
        }
    }

    fn push(&self, shape: Vec<usize>, value: Vec<f64>, op: Op) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        let grad = vec![0.0; value.len()];
        nodes.push(Node {
            shape,
            value,
            grad,
            op,
        });
        Var(nodes.len() - 1)
    }

    pub fn leaf(&self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf)
    }

    pub fn leaf_from(&self, shape: Vec<usize>, data: Vec<f64>) -> Var {
        assert_eq!(shape.iter().product::<usize>(), data.len());
        self.push(shape, data, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> Vec<f64> {
        self.nodes.borrow()[v.0].value.clone()
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].shape.clone()
    }

    /// Value of a scalar node.
    pub fn scalar(&self, v: Var) -> f64 {
        let nodes = self.nodes.borrow();
        assert_eq!(nodes[v.0].value.len(), 1, "scalar() on non-scalar node");
        nodes[v.0].value[0]
    }

    pub fn grad(&self, v: Var) -> Vec<f64> {
        self.nodes.borrow()[v.0].grad.clone()
    }

    /// The node's value as a tensor with the gradient buffer attached.
    pub fn extract(&self, v: Var) -> Tensor {
        let nodes = self.nodes.borrow();
        let n = &nodes[v.0];
        let mut t = Tensor::new(n.shape.clone(), n.value.clone()).expect("node shape is valid");
        t.set_grad(n.grad.clone()).expect("grad matches shape");
        t
    }

    pub fn add(&self, a: Var, b: Var) -> Var {
        let (shape, value) = {
            let nodes = self.nodes.borrow();
            let (na, nb) = (&nodes[a.0], &nodes[b.0]);
            assert_eq!(na.shape, nb.shape, "add: shape mismatch");
            let value = na.value.iter().zip(&nb.value).map(|(x, y)| x + y).collect();
            (na.shape.clone(), value)
        };
        self.push(shape, value, Op::Add(a, b))
    }

    pub fn add_row(&self, m: Var, row: Var) -> Var {
        let (shape, value) = {
            let nodes = self.nodes.borrow();
            let (nm, nr) = (&nodes[m.0], &nodes[row.0]);
            assert_eq!(nm.shape.len(), 2, "add_row: matrix must be rank 2");
            let cols = nm.shape[1];
            assert_eq!(nr.value.len(), cols, "add_row: row length mismatch");
            let mut value = nm.value.clone();
            for r in value.chunks_mut(cols) {
                for (x, y) in r.iter_mut().zip(&nr.value) {
                    *x += y;
                }
            }
            (nm.shape.clone(), value)
        };
        self.push(shape, value, Op::AddRow(m, row))
    }

    pub fn scale(&self, x: Var, c: f64) -> Var {
        let (shape, value) = {
            let nodes = self.nodes.borrow();
            let n = &nodes[x.0];
            (n.shape.clone(), n.value.iter().map(|v| v * c).collect())
        };
        self.push(shape, value, Op::Scale(x, c))
    }

    pub fn matmul(&self, a: Var, b: Var) -> Var {
        let (shape, value) = {
            let nodes = self.nodes.borrow();
            let (na, nb) = (&nodes[a.0], &nodes[b.0]);
            assert_eq!(na.shape.len(), 2, "matmul: lhs must be rank 2");
            assert_eq!(nb.shape.len(), 2, "matmul: rhs must be rank 2");
            let (n, k) = (na.shape[0], na.shape[1]);
            let (k2, m) = (nb.shape[0], nb.shape[1]);
            assert_eq!(k, k2, "matmul: inner dimensions differ");
            let mut out = vec![0.0; n * m];
            for i in 0..n {
                for p in 0..k {
                    let aip = na.value[i * k + p];
                    if aip == 0.0 {
                        continue;
                    }
                    let brow = &nb.value[p * m..(p + 1) * m];
                    let orow = &mut out[i * m..(i + 1) * m];
                    for (o, &bv) in orow.iter_mut().zip(brow) {
                        *o += aip * bv;
                    }
                }
            }
            (vec![n, m], out)
        };
        self.push(shape, value, Op::MatMul(a, b))
    }

    pub fn relu(&self, x: Var) -> Var {
        let (shape, value) = {
            let nodes = self.nodes.borrow();
            let n = &nodes[x.0];
            (
                n.shape.clone(),
                n.value
                    .iter()
                    .map(|&v| if v > 0.0 { v } else { 0.0 })
                    .collect(),
            )
        };
        self.push(shape, value, Op::Relu(x))
    }

    pub fn sum_all(&self, x: Var) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            vec![nodes[x.0].value.iter().sum()]
        };
        self.push(vec![1], value, Op::SumAll(x))
    }

    /// Softmax over a flat logit vector (rank-1 node or single-row matrix).
    /// Errors on non-finite input.
    pub fn softmax(&self, x: Var) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let n = &nodes[x.0];
            assert!(
                n.shape.len() == 1 || (n.shape.len() == 2 && n.shape[0] == 1),
                "softmax: input must be a single logit vector"
            );
            if let Some(i) = n.value.iter().position(|v| !v.is_finite()) {
                return Err(Error::Numeric {
                    op: "softmax",
                    detail: format!("non-finite logit at index {i}"),
                });
            }
            stable::softmax_slice(&n.value)
        };
        let shape = vec![value.len()];
        Ok(self.push(shape, value, Op::Softmax(x)))
    }

    /// Scalar select of one component of a flat vector node.
    pub fn select(&self, x: Var, idx: usize) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            let n = &nodes[x.0];
            assert!(idx < n.value.len(), "select: index out of range");
            vec![n.value[idx]]
        };
        self.push(vec![1], value, Op::Select(x, idx))
    }

    /// Fused weighted cross-entropy over the rows of a logits matrix against
    /// fixed per-row target distributions, restricted to the first `active`
    /// columns. Returns a scalar node with value
    /// `scale · Σ_i w_i · (logsumexp(row_i[..active]) − Σ_{j<active} t_ij · x_ij)`.
    pub fn cross_entropy_rows(
        &self,
        logits: Var,
        targets: Vec<f64>,
        weights: Vec<f64>,
        active: usize,
        scale: f64,
    ) -> Result<Var> {
        let (value, probs) = {
            let nodes = self.nodes.borrow();
            let n = &nodes[logits.0];
            let (rows, cols) = match n.shape.len() {
                1 => (1, n.shape[0]),
                2 => (n.shape[0], n.shape[1]),
                r => panic!("cross_entropy_rows: rank-{r} logits"),
            };
            assert!(
                active >= 1 && active <= cols,
                "cross_entropy_rows: bad active count"
            );
            assert_eq!(
                targets.len(),
                rows * active,
                "cross_entropy_rows: target size"
            );
            assert_eq!(weights.len(), rows, "cross_entropy_rows: weight count");
            if let Some(i) = n.value.iter().position(|v| !v.is_finite()) {
                return Err(Error::Numeric {
                    op: "cross_entropy",
                    detail: format!("non-finite logit at flat index {i}"),
                });
            }
            let mut total = 0.0;
            let mut probs = vec![0.0; rows * active];
            for i in 0..rows {
                let row = &n.value[i * cols..i * cols + active];
                let t = &targets[i * active..(i + 1) * active];
                let lse = stable::logsumexp(row);
                let dot: f64 = row.iter().zip(t).map(|(x, y)| x * y).sum();
                total += weights[i] * (lse - dot);
                let p = stable::softmax_slice(row);
                probs[i * active..(i + 1) * active].copy_from_slice(&p);
            }
            (vec![scale * total], probs)
        };
        Ok(self.push(
            vec![1],
            value,
            Op::CrossEntropyRows {
                logits,
                targets,
                weights,
                active,
                scale,
                probs,
            },
        ))
    }

    /// Backpropagate from a scalar node. Gradients are zeroed first, then
    /// accumulated; leaf gradients are read back with [`Tape::grad`].
    pub fn backward(&self, out: Var) {
        let mut nodes = self.nodes.borrow_mut();
        assert_eq!(
            nodes[out.0].value.len(),
            1,
            "backward: output must be scalar"
        );
        for n in nodes.iter_mut() {
            for g in &mut n.grad {
                *g = 0.0;
            }
        }
        nodes[out.0].grad[0] = 1.0;

        for i in (0..nodes.len()).rev() {
            // Split off the current node so parent grads can be written.
            let (head, tail) = nodes.split_at_mut(i);
            let node = &tail[0];
            match &node.op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    let g = node.grad.clone();
                    for (x, gv) in head[a.0].grad.iter_mut().zip(&g) {
                        *x += gv;
                    }
                    for (x, gv) in head[b.0].grad.iter_mut().zip(&g) {
                        *x += gv;
                    }
                }
                Op::AddRow(m, row) => {
                    let cols = head[m.0].shape[1];
                    for (x, gv) in head[m.0].grad.iter_mut().zip(&node.grad) {
                        *x += gv;
                    }
                    for (r, chunk) in node.grad.chunks(cols).enumerate() {
                        let _ = r;
                        for (x, gv) in head[row.0].grad.iter_mut().zip(chunk) {
                            *x += gv;
                        }
                    }
                }
                Op::Scale(x, c) => {
                    for (xg, gv) in head[x.0].grad.iter_mut().zip(&node.grad) {
                        *xg += c * gv;
                    }
                }
                Op::MatMul(a, b) => {
                    let (n, k) = (head[a.0].shape[0], head[a.0].shape[1]);
                    let m = head[b.0].shape[1];
                    let g = &node.grad;
                    // dA = G · Bᵀ
                    {
                        let bval = head[b.0].value.clone();
                        let ag = &mut head[a.0].grad;
                        for i in 0..n {
                            for p in 0..k {
                                let mut acc = 0.0;
                                let grow = &g[i * m..(i + 1) * m];
                                let brow = &bval[p * m..(p + 1) * m];
                                for (gv, bv) in grow.iter().zip(brow) {
                                    acc += gv * bv;
                                }
                                ag[i * k + p] += acc;
                            }
                        }
                    }
                    // dB = Aᵀ · G
                    {
                        let aval = head[a.0].value.clone();
                        let bg = &mut head[b.0].grad;
                        for p in 0..k {
                            for i in 0..n {
                                let aip = aval[i * k + p];
                                if aip == 0.0 {
                                    continue;
                                }
                                let grow = &g[i * m..(i + 1) * m];
                                let bgrow = &mut bg[p * m..(p + 1) * m];
                                for (bgv, gv) in bgrow.iter_mut().zip(grow) {
                                    *bgv += aip * gv;
                                }
                            }
                        }
                    }
                }
                Op::Relu(x) => {
                    let xs = head[x.0].value.clone();
                    for ((xg, gv), xv) in head[x.0].grad.iter_mut().zip(&node.grad).zip(&xs) {
                        if *xv > 0.0 {
                            *xg += gv;
                        }
                    }
                }
                Op::SumAll(x) => {
                    let g = node.grad[0];
                    for xg in head[x.0].grad.iter_mut() {
                        *xg += g;
                    }
                }
                Op::Softmax(x) => {
                    // dx_i = z_i (g_i − Σ_j g_j z_j)
                    let z = &node.value;
                    let g = &node.grad;
                    let dot: f64 = g.iter().zip(z).map(|(gv, zv)| gv * zv).sum();
                    for ((xg, gv), zv) in head[x.0].grad.iter_mut().zip(g).zip(z) {
                        *xg += zv * (gv - dot);
                    }
                }
                Op::Select(x, idx) => {
                    head[x.0].grad[*idx] += node.grad[0];
                }
                Op::CrossEntropyRows {
                    logits,
                    targets,
                    weights,
                    active,
                    scale,
                    probs,
                } => {
                    let g = node.grad[0];
                    let cols = match head[logits.0].shape.len() {
                        1 => head[logits.0].shape[0],
                        _ => head[logits.0].shape[1],
                    };
                    let lg = &mut head[logits.0].grad;
                    for (i, &w) in weights.iter().enumerate() {
                        let coef = g * scale * w;
                        if coef == 0.0 {
                            continue;
                        }
                        let p = &probs[i * active..(i + 1) * active];
                        let t = &targets[i * active..(i + 1) * active];
                        let row = &mut lg[i * cols..i * cols + active];
                        for ((rg, pv), tv) in row.iter_mut().zip(p).zip(t) {
                            *rg += coef * (pv - tv);
                        }
                    }
                }
            }
        }
    }
}
