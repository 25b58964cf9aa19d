//! Tape-based reverse-mode automatic differentiation over vectors.
//!
//! Values are recorded eagerly as `f64` vectors (a scalar is a vector of
//! length one). Each recorded node keeps the information needed to push an
//! adjoint back to its operands, and [`Tape::backward`] walks the tape once
//! from a scalar root towards the leaves.
//!
//! Operations are vector-wide on purpose: one SRS fiber step over 83
//! channels is three nodes, so a 300 km link at 100 m steps stays at a
//! few thousand nodes.
//!
//! ```
//! use wdm_cascade::autodiff::Tape;
//!
//! let mut tape = Tape::new();
//! let x = tape.input(vec![3.0]);
//! let y = tape.mul(x, x);
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(tape.scalar(y), 9.0);
//! assert_eq!(grads.wrt(x), &[6.0]);
//! ```

use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Arc;

use thiserror::Error;

use crate::linalg::{gemm, Matrix};

static NEXT_TAPE_ID: AtomicU32 = AtomicU32::new(1);

#[derive(Debug, Clone, Error, PartialEq)]
pub enum AdError {
    #[error("non-finite value produced by `{op}` at node {node}")]
    NonFinite { node: usize, op: &'static str },

    #[error("invalid use: {0}")]
    InvalidUse(String),
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u32,
    idx: usize,
}

impl Var {
    pub fn index(&self) -> usize {
        self.idx
    }
}

#[derive(Debug, Clone)]
enum Op {
    Input,
    Constant,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Offset(usize, f64),
    Broadcast(usize),
    Affine {
        m: Arc<Matrix>,
        x: usize,
    },
    Linear {
        w: usize,
        b: usize,
        x: usize,
        in_dim: usize,
        out_dim: usize,
    },
    Relu(usize),
    Exp(usize),
    Ln(usize),
    Powi(usize, i32),
    Sum(usize),
    Min(usize, usize),
    Max(usize, usize),
    Concat(Vec<usize>),
    Slice(usize, usize),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Constant => "constant",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Offset(..) => "offset",
            Op::Broadcast(..) => "broadcast",
            Op::Affine { .. } => "affine",
            Op::Linear { .. } => "linear",
            Op::Relu(..) => "relu",
            Op::Exp(..) => "exp",
            Op::Ln(..) => "ln",
            Op::Powi(..) => "powi",
            Op::Sum(..) => "sum",
            Op::Min(..) => "min",
            Op::Max(..) => "max",
            Op::Concat(..) => "concat",
            Op::Slice(..) => "slice",
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    value: Vec<f64>,
    op: Op,
    needs_grad: bool,
}

/// Single-writer record of a computation.
pub struct Tape {
    id: u32,
    nodes: Vec<Node>,
    first_non_finite: Option<(usize, &'static str)>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            first_non_finite: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf whose gradient is reported by [`Tape::backward`].
    pub fn input(&mut self, value: Vec<f64>) -> Var {
        self.push(value, Op::Input, true)
    }

    pub fn constant(&mut self, value: Vec<f64>) -> Var {
        self.push(value, Op::Constant, false)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[self.idx(v)].value
    }

    /// Value of a length-one variable.
    pub fn scalar(&self, v: Var) -> f64 {
        let val = self.value(v);
        assert_eq!(val.len(), 1, "scalar() on a vector of length {}", val.len());
        val[0]
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (ia, ib) = (self.idx(a), self.idx(b));
        let value = self.zip(ia, ib, "add", |x, y| x + y);
        self.push_op(value, Op::Add(ia, ib))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let (ia, ib) = (self.idx(a), self.idx(b));
        let value = self.zip(ia, ib, "sub", |x, y| x - y);
        self.push_op(value, Op::Sub(ia, ib))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (ia, ib) = (self.idx(a), self.idx(b));
        let value = self.zip(ia, ib, "mul", |x, y| x * y);
        self.push_op(value, Op::Mul(ia, ib))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let ia = self.idx(a);
        let value = self.nodes[ia].value.iter().map(|x| x * c).collect();
        self.push_op(value, Op::Scale(ia, c))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    /// Adds the same constant to every element.
    pub fn offset(&mut self, a: Var, c: f64) -> Var {
        let ia = self.idx(a);
        let value = self.nodes[ia].value.iter().map(|x| x + c).collect();
        self.push_op(value, Op::Offset(ia, c))
    }

    /// Repeats a scalar `len` times.
    pub fn broadcast(&mut self, a: Var, len: usize) -> Var {
        let ia = self.idx(a);
        assert_eq!(self.nodes[ia].value.len(), 1, "broadcast expects a scalar");
        let value = vec![self.nodes[ia].value[0]; len];
        self.push_op(value, Op::Broadcast(ia))
    }

    /// Adds a scalar variable to every element of `a`.
    pub fn add_scalar(&mut self, a: Var, s: Var) -> Var {
        let n = self.value(a).len();
        let sb = self.broadcast(s, n);
        self.add(a, sb)
    }

    /// `m·x` for a constant matrix.
    pub fn affine(&mut self, m: Arc<Matrix>, x: Var) -> Var {
        let ix = self.idx(x);
        assert_eq!(
            m.cols(),
            self.nodes[ix].value.len(),
            "affine: matrix has {} columns, vector has {} entries",
            m.cols(),
            self.nodes[ix].value.len()
        );
        let value = m.matvec(&self.nodes[ix].value);
        self.push_op(value, Op::Affine { m, x: ix })
    }

    /// Batched dense layer `Y = X·Wᵀ + b` with differentiable weights.
    ///
    /// `x` holds `batch × in_dim` row-major, `w` holds `out_dim × in_dim`
    /// row-major, `b` holds `out_dim`; the result is `batch × out_dim`.
    pub fn linear(&mut self, w: Var, b: Var, x: Var, in_dim: usize, out_dim: usize) -> Var {
        let (iw, ib, ix) = (self.idx(w), self.idx(b), self.idx(x));
        let xv = &self.nodes[ix].value;
        assert_eq!(self.nodes[iw].value.len(), in_dim * out_dim, "linear: weight shape");
        assert_eq!(self.nodes[ib].value.len(), out_dim, "linear: bias shape");
        assert_eq!(xv.len() % in_dim, 0, "linear: input is not a multiple of in_dim");
        let batch = xv.len() / in_dim;
        let bias = &self.nodes[ib].value;
        let mut y = Vec::with_capacity(batch * out_dim);
        for _ in 0..batch {
            y.extend_from_slice(bias);
        }
        gemm(
            batch,
            in_dim,
            out_dim,
            xv,
            false,
            &self.nodes[iw].value,
            true,
            &mut y,
            true,
        );
        self.push_op(
            y,
            Op::Linear {
                w: iw,
                b: ib,
                x: ix,
                in_dim,
                out_dim,
            },
        )
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let ia = self.idx(a);
        let value = self.nodes[ia].value.iter().map(|&x| x.max(0.0)).collect();
        self.push_op(value, Op::Relu(ia))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let ia = self.idx(a);
        let value = self.nodes[ia].value.iter().map(|x| x.exp()).collect();
        self.push_op(value, Op::Exp(ia))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let ia = self.idx(a);
        let value = self.nodes[ia].value.iter().map(|x| x.ln()).collect();
        self.push_op(value, Op::Ln(ia))
    }

    pub fn powi(&mut self, a: Var, k: i32) -> Var {
        let ia = self.idx(a);
        let value = self.nodes[ia].value.iter().map(|x| x.powi(k)).collect();
        self.push_op(value, Op::Powi(ia, k))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let ia = self.idx(a);
        let value = vec![self.nodes[ia].value.iter().sum()];
        self.push_op(value, Op::Sum(ia))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Minimum element; ties resolve to the lowest index.
    pub fn min(&mut self, a: Var) -> Var {
        let ia = self.idx(a);
        let (k, v) = arg_extreme(&self.nodes[ia].value, |x, best| x < best);
        self.push_op(vec![v], Op::Min(ia, k))
    }

    /// Maximum element; ties resolve to the lowest index.
    pub fn max(&mut self, a: Var) -> Var {
        let ia = self.idx(a);
        let (k, v) = arg_extreme(&self.nodes[ia].value, |x, best| x > best);
        self.push_op(vec![v], Op::Max(ia, k))
    }

    /// Index selected by a recorded `min`/`max` node.
    pub fn arg_index(&self, v: Var) -> Option<usize> {
        match self.nodes[self.idx(v)].op {
            Op::Min(_, k) | Op::Max(_, k) => Some(k),
            _ => None,
        }
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let idxs: Vec<usize> = parts.iter().map(|&p| self.idx(p)).collect();
        let mut value = Vec::new();
        for &i in &idxs {
            value.extend_from_slice(&self.nodes[i].value);
        }
        self.push_op(value, Op::Concat(idxs))
    }

    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Var {
        let ia = self.idx(a);
        let value = self.nodes[ia].value[start..start + len].to_vec();
        self.push_op(value, Op::Slice(ia, start))
    }

    /// `−τ·ln(mean(exp(−x/τ)))`, a smooth lower bound on the mean that
    /// approaches `min(x)` as `τ → 0`.
    pub fn softmin(&mut self, a: Var, tau: f64) -> Var {
        assert!(tau > 0.0, "softmin temperature must be positive");
        // Shift by the (constant) minimum so the exponentials stay in range.
        let m = self
            .value(a)
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        let z = self.offset(a, -m);
        let z = self.scale(z, -1.0 / tau);
        let e = self.exp(z);
        let mean = self.mean(e);
        let l = self.ln(mean);
        let s = self.scale(l, -tau);
        self.offset(s, m)
    }

    /// Error describing the first non-finite value recorded, if any.
    pub fn check_finite(&self) -> Result<(), AdError> {
        match self.first_non_finite {
            Some((node, op)) => Err(AdError::NonFinite { node, op }),
            None => Ok(()),
        }
    }

    /// Hash of every branch decision taken while recording: relu masks and
    /// the indices picked by `min`/`max`. Two evaluations with equal
    /// signatures lie on the same smooth piece of the function.
    pub fn branch_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for (i, node) in self.nodes.iter().enumerate() {
            match node.op {
                Op::Relu(a) => {
                    i.hash(&mut h);
                    for &x in &self.nodes[a].value {
                        (x > 0.0).hash(&mut h);
                    }
                }
                Op::Min(_, k) | Op::Max(_, k) => {
                    i.hash(&mut h);
                    k.hash(&mut h);
                }
                _ => {}
            }
        }
        h.finish()
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients, AdError> {
        let r = self.idx(root);
        if self.nodes[r].value.len() != 1 {
            return Err(AdError::InvalidUse(format!(
                "backward needs a scalar root, node {r} has length {}",
                self.nodes[r].value.len()
            )));
        }
        self.check_finite()?;

        let mut adj: Vec<Option<Vec<f64>>> = vec![None; r + 1];
        adj[r] = Some(vec![1.0]);
        let mut grads = HashMap::new();

        for i in (0..=r).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Input => {
                    grads.insert(i, g);
                }
                Op::Constant => {}
                Op::Add(a, b) => {
                    self.acc(&mut adj, *a, |d| axpy(d, 1.0, &g));
                    self.acc(&mut adj, *b, |d| axpy(d, 1.0, &g));
                }
                Op::Sub(a, b) => {
                    self.acc(&mut adj, *a, |d| axpy(d, 1.0, &g));
                    self.acc(&mut adj, *b, |d| axpy(d, -1.0, &g));
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    self.acc(&mut adj, *a, |d| {
                        for ((d, g), y) in d.iter_mut().zip(&g).zip(vb) {
                            *d += g * y;
                        }
                    });
                    self.acc(&mut adj, *b, |d| {
                        for ((d, g), x) in d.iter_mut().zip(&g).zip(va) {
                            *d += g * x;
                        }
                    });
                }
                Op::Scale(a, c) => self.acc(&mut adj, *a, |d| axpy(d, *c, &g)),
                Op::Offset(a, _) => self.acc(&mut adj, *a, |d| axpy(d, 1.0, &g)),
                Op::Broadcast(a) => {
                    let s: f64 = g.iter().sum();
                    self.acc(&mut adj, *a, |d| d[0] += s);
                }
                Op::Affine { m, x } => {
                    self.acc(&mut adj, *x, |d| m.matvec_transpose_acc(&g, d));
                }
                Op::Linear {
                    w,
                    b,
                    x,
                    in_dim,
                    out_dim,
                } => {
                    let (in_dim, out_dim) = (*in_dim, *out_dim);
                    let xv = &self.nodes[*x].value;
                    let wv = &self.nodes[*w].value;
                    let batch = xv.len() / in_dim;
                    // dX = G·W
                    self.acc(&mut adj, *x, |d| {
                        gemm(batch, out_dim, in_dim, &g, false, wv, false, d, true)
                    });
                    // dW = Gᵀ·X
                    self.acc(&mut adj, *w, |d| {
                        gemm(out_dim, batch, in_dim, &g, true, xv, false, d, true)
                    });
                    self.acc(&mut adj, *b, |d| {
                        for row in g.chunks_exact(out_dim) {
                            axpy(d, 1.0, row);
                        }
                    });
                }
                Op::Relu(a) => {
                    let va = &self.nodes[*a].value;
                    self.acc(&mut adj, *a, |d| {
                        for ((d, g), x) in d.iter_mut().zip(&g).zip(va) {
                            if *x > 0.0 {
                                *d += g;
                            }
                        }
                    });
                }
                Op::Exp(a) => {
                    let y = &node.value;
                    self.acc(&mut adj, *a, |d| {
                        for ((d, g), y) in d.iter_mut().zip(&g).zip(y) {
                            *d += g * y;
                        }
                    });
                }
                Op::Ln(a) => {
                    let va = &self.nodes[*a].value;
                    self.acc(&mut adj, *a, |d| {
                        for ((d, g), x) in d.iter_mut().zip(&g).zip(va) {
                            *d += g / x;
                        }
                    });
                }
                Op::Powi(a, k) => {
                    let va = &self.nodes[*a].value;
                    let k = *k;
                    self.acc(&mut adj, *a, |d| {
                        for ((d, g), x) in d.iter_mut().zip(&g).zip(va) {
                            *d += g * k as f64 * x.powi(k - 1);
                        }
                    });
                }
                Op::Sum(a) => self.acc(&mut adj, *a, |d| {
                    for d in d.iter_mut() {
                        *d += g[0];
                    }
                }),
                Op::Min(a, k) | Op::Max(a, k) => self.acc(&mut adj, *a, |d| d[*k] += g[0]),
                Op::Concat(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let n = self.nodes[p].value.len();
                        self.acc(&mut adj, p, |d| axpy(d, 1.0, &g[off..off + n]));
                        off += n;
                    }
                }
                Op::Slice(a, start) => {
                    let start = *start;
                    self.acc(&mut adj, *a, |d| axpy(&mut d[start..start + g.len()], 1.0, &g));
                }
            }
        }

        for (i, node) in self.nodes.iter().enumerate().take(r + 1) {
            if matches!(node.op, Op::Input) {
                grads
                    .entry(i)
                    .or_insert_with(|| vec![0.0; node.value.len()]);
            }
        }
        Ok(Gradients {
            tape: self.id,
            grads,
        })
    }

    fn acc(&self, adj: &mut [Option<Vec<f64>>], idx: usize, f: impl FnOnce(&mut [f64])) {
        let node = &self.nodes[idx];
        if !node.needs_grad {
            return;
        }
        let d = adj[idx].get_or_insert_with(|| vec![0.0; node.value.len()]);
        f(d);
    }

    fn idx(&self, v: Var) -> usize {
        assert_eq!(v.tape, self.id, "variable belongs to a different tape");
        v.idx
    }

    fn zip(&self, a: usize, b: usize, op: &str, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        let (va, vb) = (&self.nodes[a].value, &self.nodes[b].value);
        assert_eq!(
            va.len(),
            vb.len(),
            "{op}: operand lengths differ ({} vs {})",
            va.len(),
            vb.len()
        );
        va.iter().zip(vb).map(|(&x, &y)| f(x, y)).collect()
    }

    fn operands(op: &Op) -> Vec<usize> {
        match op {
            Op::Input | Op::Constant => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::Offset(a, _)
            | Op::Broadcast(a)
            | Op::Relu(a)
            | Op::Exp(a)
            | Op::Ln(a)
            | Op::Powi(a, _)
            | Op::Sum(a)
            | Op::Min(a, _)
            | Op::Max(a, _)
            | Op::Slice(a, _) => vec![*a],
            Op::Affine { x, .. } => vec![*x],
            Op::Linear { w, b, x, .. } => vec![*w, *b, *x],
            Op::Concat(parts) => parts.clone(),
        }
    }

    fn push_op(&mut self, value: Vec<f64>, op: Op) -> Var {
        let needs_grad = Self::operands(&op)
            .into_iter()
            .any(|i| self.nodes[i].needs_grad);
        self.push(value, op, needs_grad)
    }

    fn push(&mut self, value: Vec<f64>, op: Op, needs_grad: bool) -> Var {
        let idx = self.nodes.len();
        if self.first_non_finite.is_none() && value.iter().any(|v| !v.is_finite()) {
            self.first_non_finite = Some((idx, op.name()));
        }
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var { tape: self.id, idx }
    }
}

impl Op {
    fn param(&self) -> String {
        match self {
            Op::Scale(_, c) | Op::Offset(_, c) => format!(" c={c}"),
            Op::Powi(_, k) => format!(" k={k}"),
            Op::Min(_, k) | Op::Max(_, k) => format!(" at={k}"),
            _ => String::new(),
        }
    }
}

impl fmt::Display for Tape {
    /// One line per node: index, op, operands, length and leading values.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, node) in self.nodes.iter().enumerate() {
            let head: Vec<String> = node.value.iter().take(3).map(|v| format!("{v:.6e}")).collect();
            let more = if node.value.len() > 3 { ", …" } else { "" };
            writeln!(
                f,
                "%{i} = {}{:?}{} len={} [{}{}]",
                node.op.name(),
                Self::operands(&node.op),
                node.op.param(),
                node.value.len(),
                head.join(", "),
                more
            )?;
        }
        Ok(())
    }
}

/// Gradients of a scalar root with respect to every input leaf.
#[derive(Debug, Clone)]
pub struct Gradients {
    tape: u32,
    grads: HashMap<usize, Vec<f64>>,
}

impl Gradients {
    /// Panics if `v` is not an input leaf of the tape that produced these gradients.
    pub fn wrt(&self, v: Var) -> &[f64] {
        assert_eq!(v.tape, self.tape, "variable belongs to a different tape");
        self.grads
            .get(&v.idx)
            .map(Vec::as_slice)
            .expect("gradient requested for a node that is not an input")
    }

    pub fn get(&self, v: Var) -> Option<&[f64]> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get(&v.idx).map(Vec::as_slice)
    }
}

fn axpy(d: &mut [f64], a: f64, x: &[f64]) {
    for (d, x) in d.iter_mut().zip(x) {
        *d += a * x;
    }
}

fn arg_extreme(v: &[f64], better: impl Fn(f64, f64) -> bool) -> (usize, f64) {
    assert!(!v.is_empty(), "min/max of an empty vector");
    let mut best = (0, v[0]);
    for (i, &x) in v.iter().enumerate().skip(1) {
        if better(x, best.1) {
            best = (i, x);
        }
    }
    best
}
