//! Reverse-mode automatic differentiation over dense f64 tensors.
//!
//! The graph is define-by-run: every operation allocates a fresh node that
//! holds its result and references to its parents, and [`backward`] walks the
//! graph in reverse topological order. Leaves created with [`Tensor::leaf`]
//! are the only nodes gradients are reported for; everything else is
//! intermediate. Graphs are rebuilt from scratch on every forward pass and
//! are confined to a single thread.
//!
//! Tensors are rank 1 (`[n]`) or rank 2 (`[rows, cols]`, row-major). There is
//! no implicit broadcasting: binary elementwise ops require equal shapes, and
//! the only shape-changing ops are `matmul`, the reductions, `repeat_cols`
//! and `pairwise_sqdist`.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use thiserror::Error;

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

fn fresh_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Error)]
pub enum AdError {
    #[error("{op}: shape mismatch between {lhs} and {rhs}")]
    ShapeMismatch {
        op: &'static str,
        lhs: String,
        rhs: String,
    },
    #[error("{op}: expected rank-{expected} operand, got shape {shape}")]
    BadRank {
        op: &'static str,
        expected: usize,
        shape: String,
    },
    #[error("{op}: empty tensor")]
    Empty { op: &'static str },
    #[error("backward: loss must be a scalar, got shape {shape}")]
    NonScalarLoss { shape: String },
    #[error("non-finite value detected in {context}")]
    NonFinite { context: String },
    #[error("finite differences: eps must be > 0, got {0}")]
    BadEps(f64),
}

pub type Result<T> = std::result::Result<T, AdError>;

fn shape_str(shape: &[usize]) -> String {
    format!("{shape:?}")
}

#[derive(Debug)]
enum Op {
    Leaf,
    Matmul(Tensor, Tensor),
    Add(Tensor, Tensor),
    Sub(Tensor, Tensor),
    Mul(Tensor, Tensor),
    Relu(Tensor),
    Tanh(Tensor),
    Exp(Tensor),
    Square(Tensor),
    Scale(Tensor, f64),
    Sum(Tensor),
    Mean(Tensor),
    /// `[n]` -> `[n, cols]`, every column a copy of the input.
    RepeatCols(Tensor, usize),
    /// `([d, n], [d, m])` -> `[n, m]` of squared column distances.
    PairwiseSqDist(Tensor, Tensor),
}

impl Op {
    fn parents(&self) -> Vec<&Tensor> {
        match self {
            Op::Leaf => vec![],
            Op::Matmul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::PairwiseSqDist(a, b) => vec![a, b],
            Op::Relu(a)
            | Op::Tanh(a)
            | Op::Exp(a)
            | Op::Square(a)
            | Op::Scale(a, _)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::RepeatCols(a, _) => vec![a],
        }
    }
}

struct Node {
    id: u64,
    shape: Vec<usize>,
    data: Vec<f64>,
    op: Op,
}

/// Dense tensor handle. Cloning is cheap (shared node).
#[derive(Clone)]
pub struct Tensor {
    node: Rc<Node>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.node.id)
            .field("shape", &self.node.shape)
            .finish()
    }
}

impl Tensor {
    fn new(shape: Vec<usize>, data: Vec<f64>, op: Op) -> Tensor {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor {
            node: Rc::new(Node {
                id: fresh_id(),
                shape,
                data,
                op,
            }),
        }
    }

    /// Leaf node: a parameter or input with no parents.
    pub fn leaf(shape: Vec<usize>, data: Vec<f64>) -> Tensor {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "leaf: shape {shape:?} does not match data length {}",
            data.len()
        );
        Tensor::new(shape, data, Op::Leaf)
    }

    pub fn vector(data: &[f64]) -> Tensor {
        Tensor::leaf(vec![data.len()], data.to_vec())
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Tensor {
        Tensor::leaf(vec![rows, cols], data)
    }

    pub fn scalar(x: f64) -> Tensor {
        Tensor::leaf(vec![1], vec![x])
    }

    pub fn id(&self) -> u64 {
        self.node.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.node.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.node.data
    }

    pub fn len(&self) -> usize {
        self.node.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node.data.is_empty()
    }

    /// Value of a scalar (single-element) tensor.
    pub fn value(&self) -> f64 {
        assert_eq!(self.len(), 1, "value() on non-scalar tensor");
        self.node.data[0]
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self.node.op, Op::Leaf)
    }

    fn rank2(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape() {
            [r, c] => Ok((*r, *c)),
            s => Err(AdError::BadRank {
                op,
                expected: 2,
                shape: shape_str(s),
            }),
        }
    }

    /// Matrix product. `[m,k] x [k,n] -> [m,n]`, or `[m,k] x [k] -> [m]`.
    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        let (m, k) = self.rank2("matmul")?;
        match rhs.shape() {
            [k2, n] => {
                if *k2 != k {
                    return Err(AdError::ShapeMismatch {
                        op: "matmul",
                        lhs: shape_str(self.shape()),
                        rhs: shape_str(rhs.shape()),
                    });
                }
                let n = *n;
                let data = matmul_raw(self.data(), rhs.data(), m, k, n);
                Ok(Tensor::new(
                    vec![m, n],
                    data,
                    Op::Matmul(self.clone(), rhs.clone()),
                ))
            }
            [k2] => {
                if *k2 != k {
                    return Err(AdError::ShapeMismatch {
                        op: "matmul",
                        lhs: shape_str(self.shape()),
                        rhs: shape_str(rhs.shape()),
                    });
                }
                let a = self.data();
                let x = rhs.data();
                let mut out = vec![0.0; m];
                for i in 0..m {
                    let row = &a[i * k..(i + 1) * k];
                    let mut acc = 0.0;
                    for (w, v) in row.iter().zip(x.iter()) {
                        acc += w * v;
                    }
                    out[i] = acc;
                }
                Ok(Tensor::new(
                    vec![m],
                    out,
                    Op::Matmul(self.clone(), rhs.clone()),
                ))
            }
            s => Err(AdError::BadRank {
                op: "matmul",
                expected: 2,
                shape: shape_str(s),
            }),
        }
    }

    fn binary(
        &self,
        rhs: &Tensor,
        op_name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        mk: impl FnOnce(Tensor, Tensor) -> Op,
    ) -> Result<Tensor> {
        if self.shape() != rhs.shape() {
            return Err(AdError::ShapeMismatch {
                op: op_name,
                lhs: shape_str(self.shape()),
                rhs: shape_str(rhs.shape()),
            });
        }
        let data = self
            .data()
            .iter()
            .zip(rhs.data())
            .map(|(a, b)| f(*a, *b))
            .collect();
        Ok(Tensor::new(
            self.shape().to_vec(),
            data,
            mk(self.clone(), rhs.clone()),
        ))
    }

    pub fn add(&self, rhs: &Tensor) -> Result<Tensor> {
        self.binary(rhs, "add", |a, b| a + b, Op::Add)
    }

    pub fn sub(&self, rhs: &Tensor) -> Result<Tensor> {
        self.binary(rhs, "sub", |a, b| a - b, Op::Sub)
    }

    pub fn mul(&self, rhs: &Tensor) -> Result<Tensor> {
        self.binary(rhs, "mul", |a, b| a * b, Op::Mul)
    }

    fn unary(&self, f: impl Fn(f64) -> f64, mk: impl FnOnce(Tensor) -> Op) -> Tensor {
        let data = self.data().iter().map(|a| f(*a)).collect();
        Tensor::new(self.shape().to_vec(), data, mk(self.clone()))
    }

    pub fn relu(&self) -> Tensor {
        self.unary(|a| if a > 0.0 { a } else { 0.0 }, Op::Relu)
    }

    pub fn tanh(&self) -> Tensor {
        self.unary(f64::tanh, Op::Tanh)
    }

    pub fn exp(&self) -> Tensor {
        self.unary(f64::exp, Op::Exp)
    }

    pub fn square(&self) -> Tensor {
        self.unary(|a| a * a, Op::Square)
    }

    pub fn scale(&self, c: f64) -> Tensor {
        let data = self.data().iter().map(|a| c * a).collect();
        Tensor::new(self.shape().to_vec(), data, Op::Scale(self.clone(), c))
    }

    pub fn sum(&self) -> Result<Tensor> {
        if self.is_empty() {
            return Err(AdError::Empty { op: "sum" });
        }
        let s = self.data().iter().sum();
        Ok(Tensor::new(vec![1], vec![s], Op::Sum(self.clone())))
    }

    pub fn mean(&self) -> Result<Tensor> {
        if self.is_empty() {
            return Err(AdError::Empty { op: "mean" });
        }
        let s: f64 = self.data().iter().sum();
        let m = s / self.len() as f64;
        Ok(Tensor::new(vec![1], vec![m], Op::Mean(self.clone())))
    }

    /// Tile a vector `[n]` into a matrix `[n, cols]`.
    pub fn repeat_cols(&self, cols: usize) -> Result<Tensor> {
        let n = match self.shape() {
            [n] => *n,
            s => {
                return Err(AdError::BadRank {
                    op: "repeat_cols",
                    expected: 1,
                    shape: shape_str(s),
                })
            }
        };
        let src = self.data();
        let mut data = vec![0.0; n * cols];
        for i in 0..n {
            for j in 0..cols {
                data[i * cols + j] = src[i];
            }
        }
        Ok(Tensor::new(
            vec![n, cols],
            data,
            Op::RepeatCols(self.clone(), cols),
        ))
    }

    /// Squared Euclidean distances between all column pairs of two matrices
    /// with a shared row dimension: `out[i][j] = || a[:,i] - b[:,j] ||^2`.
    pub fn pairwise_sqdist(&self, rhs: &Tensor) -> Result<Tensor> {
        let (d, n) = self.rank2("pairwise_sqdist")?;
        let (d2, m) = rhs.rank2("pairwise_sqdist")?;
        if d != d2 {
            return Err(AdError::ShapeMismatch {
                op: "pairwise_sqdist",
                lhs: shape_str(self.shape()),
                rhs: shape_str(rhs.shape()),
            });
        }
        let a = self.data();
        let b = rhs.data();
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                let mut acc = 0.0;
                for r in 0..d {
                    let diff = a[r * n + i] - b[r * m + j];
                    acc += diff * diff;
                }
                out[i * m + j] = acc;
            }
        }
        Ok(Tensor::new(
            vec![n, m],
            out,
            Op::PairwiseSqDist(self.clone(), rhs.clone()),
        ))
    }

    /// Error if any element is NaN or infinite.
    pub fn check_finite(&self, context: &str) -> Result<()> {
        if self.data().iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(AdError::NonFinite {
                context: context.to_string(),
            })
        }
    }
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let a_ip = a[i * k + p];
            if a_ip == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, bv) in out_row.iter_mut().zip(b_row.iter()) {
                *o += a_ip * bv;
            }
        }
    }
    out
}

/// Gradients of a scalar loss with respect to a set of leaf tensors, keyed by
/// leaf identity. Leaves the loss does not depend on get zero gradients.
pub struct Gradients {
    grads: HashMap<u64, Vec<f64>>,
}

impl Gradients {
    /// Gradient buffer for a leaf, same layout as the leaf's data.
    pub fn get(&self, leaf: &Tensor) -> &[f64] {
        self.grads
            .get(&leaf.id())
            .map(|v| v.as_slice())
            .unwrap_or_else(|| panic!("no gradient entry for tensor id {}", leaf.id()))
    }

    pub fn check_finite(&self, name_of: impl Fn(u64) -> String) -> Result<()> {
        for (id, g) in &self.grads {
            if !g.iter().all(|v| v.is_finite()) {
                return Err(AdError::NonFinite {
                    context: format!("gradient of {}", name_of(*id)),
                });
            }
        }
        Ok(())
    }
}

/// Reverse-mode gradients of a scalar `loss` with respect to `params`.
///
/// Parameters the loss is not connected to receive zero gradients. The walk
/// order is fixed by graph structure, so repeated calls on the same graph
/// produce bitwise-identical results.
pub fn backward(loss: &Tensor, params: &[&Tensor]) -> Result<Gradients> {
    if loss.shape() != [1] {
        return Err(AdError::NonScalarLoss {
            shape: shape_str(loss.shape()),
        });
    }

    // Iterative post-order DFS: children before parents in `order`.
    let mut order: Vec<Tensor> = Vec::new();
    let mut visited: HashSet<u64> = HashSet::new();
    let mut stack: Vec<(Tensor, bool)> = vec![(loss.clone(), false)];
    while let Some((t, expanded)) = stack.pop() {
        if expanded {
            order.push(t);
            continue;
        }
        if !visited.insert(t.id()) {
            continue;
        }
        let parents: Vec<Tensor> = t.node.op.parents().into_iter().cloned().collect();
        stack.push((t, true));
        for p in parents {
            if !visited.contains(&p.id()) {
                stack.push((p, false));
            }
        }
    }

    let mut grad: HashMap<u64, Vec<f64>> = HashMap::new();
    grad.insert(loss.id(), vec![1.0]);

    // Process in reverse topological order (outputs before inputs).
    for t in order.iter().rev() {
        let Some(g_out) = grad.get(&t.id()).cloned() else {
            continue;
        };
        accumulate(t, &g_out, &mut grad);
    }

    let mut grads = HashMap::new();
    for p in params {
        let g = grad
            .remove(&p.id())
            .unwrap_or_else(|| vec![0.0; p.len()]);
        grads.insert(p.id(), g);
    }
    Ok(Gradients { grads })
}

fn add_into(grad: &mut HashMap<u64, Vec<f64>>, target: &Tensor, delta: &[f64]) {
    let entry = grad
        .entry(target.id())
        .or_insert_with(|| vec![0.0; target.len()]);
    for (e, d) in entry.iter_mut().zip(delta) {
        *e += d;
    }
}

fn accumulate(t: &Tensor, g_out: &[f64], grad: &mut HashMap<u64, Vec<f64>>) {
    match &t.node.op {
        Op::Leaf => {}
        Op::Matmul(a, b) => {
            let (m, k) = (a.shape()[0], a.shape()[1]);
            match b.shape() {
                [_, n] => {
                    let n = *n;
                    // dA = G * B^T
                    let bd = b.data();
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        for p in 0..k {
                            let mut acc = 0.0;
                            for j in 0..n {
                                acc += g_out[i * n + j] * bd[p * n + j];
                            }
                            da[i * k + p] = acc;
                        }
                    }
                    add_into(grad, a, &da);
                    // dB = A^T * G
                    let ad = a.data();
                    let mut db = vec![0.0; k * n];
                    for p in 0..k {
                        for i in 0..m {
                            let a_ip = ad[i * k + p];
                            if a_ip == 0.0 {
                                continue;
                            }
                            let g_row = &g_out[i * n..(i + 1) * n];
                            let db_row = &mut db[p * n..(p + 1) * n];
                            for (o, gv) in db_row.iter_mut().zip(g_row.iter()) {
                                *o += a_ip * gv;
                            }
                        }
                    }
                    add_into(grad, b, &db);
                }
                [_] => {
                    // y = A x: dA = g x^T, dx = A^T g
                    let xd = b.data();
                    let ad = a.data();
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        let gi = g_out[i];
                        if gi != 0.0 {
                            for p in 0..k {
                                da[i * k + p] = gi * xd[p];
                            }
                        }
                    }
                    add_into(grad, a, &da);
                    let mut dx = vec![0.0; k];
                    for i in 0..m {
                        let gi = g_out[i];
                        if gi == 0.0 {
                            continue;
                        }
                        let row = &ad[i * k..(i + 1) * k];
                        for (o, w) in dx.iter_mut().zip(row.iter()) {
                            *o += gi * w;
                        }
                    }
                    add_into(grad, b, &dx);
                }
                _ => unreachable!("matmul rhs rank checked at construction"),
            }
        }
        Op::Add(a, b) => {
            add_into(grad, a, g_out);
            add_into(grad, b, g_out);
        }
        Op::Sub(a, b) => {
            add_into(grad, a, g_out);
            let neg: Vec<f64> = g_out.iter().map(|g| -g).collect();
            add_into(grad, b, &neg);
        }
        Op::Mul(a, b) => {
            let da: Vec<f64> = g_out.iter().zip(b.data()).map(|(g, bv)| g * bv).collect();
            add_into(grad, a, &da);
            let db: Vec<f64> = g_out.iter().zip(a.data()).map(|(g, av)| g * av).collect();
            add_into(grad, b, &db);
        }
        Op::Relu(a) => {
            let da: Vec<f64> = g_out
                .iter()
                .zip(a.data())
                .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                .collect();
            add_into(grad, a, &da);
        }
        Op::Tanh(a) => {
            let da: Vec<f64> = g_out
                .iter()
                .zip(t.data())
                .map(|(g, y)| g * (1.0 - y * y))
                .collect();
            add_into(grad, a, &da);
        }
        Op::Exp(a) => {
            let da: Vec<f64> = g_out.iter().zip(t.data()).map(|(g, y)| g * y).collect();
            add_into(grad, a, &da);
        }
        Op::Square(a) => {
            let da: Vec<f64> = g_out
                .iter()
                .zip(a.data())
                .map(|(g, x)| g * 2.0 * x)
                .collect();
            add_into(grad, a, &da);
        }
        Op::Scale(a, c) => {
            let da: Vec<f64> = g_out.iter().map(|g| g * c).collect();
            add_into(grad, a, &da);
        }
        Op::Sum(a) => {
            let da = vec![g_out[0]; a.len()];
            add_into(grad, a, &da);
        }
        Op::Mean(a) => {
            let da = vec![g_out[0] / a.len() as f64; a.len()];
            add_into(grad, a, &da);
        }
        Op::RepeatCols(a, cols) => {
            let n = a.len();
            let mut da = vec![0.0; n];
            for i in 0..n {
                let mut acc = 0.0;
                for j in 0..*cols {
                    acc += g_out[i * cols + j];
                }
                da[i] = acc;
            }
            add_into(grad, a, &da);
        }
        Op::PairwiseSqDist(a, b) => {
            let (d, n) = (a.shape()[0], a.shape()[1]);
            let m = b.shape()[1];
            let ad = a.data();
            let bd = b.data();
            let mut da = vec![0.0; d * n];
            let mut db = vec![0.0; d * m];
            for i in 0..n {
                for j in 0..m {
                    let g = g_out[i * m + j];
                    if g == 0.0 {
                        continue;
                    }
                    for r in 0..d {
                        let diff = ad[r * n + i] - bd[r * m + j];
                        da[r * n + i] += 2.0 * g * diff;
                        db[r * m + j] -= 2.0 * g * diff;
                    }
                }
            }
            add_into(grad, a, &da);
            add_into(grad, b, &db);
        }
    }
}

/// Smallest |input| feeding any relu in the graph under `root`, or None when
/// the graph contains no relu. Finite-difference checks use this to skip
/// coordinates evaluated within float-noise of a relu kink.
pub fn relu_min_abs_input(root: &Tensor) -> Option<f64> {
    let mut min: Option<f64> = None;
    let mut visited: HashSet<u64> = HashSet::new();
    let mut stack = vec![root.clone()];
    while let Some(t) = stack.pop() {
        if !visited.insert(t.id()) {
            continue;
        }
        if let Op::Relu(a) = &t.node.op {
            for v in a.data() {
                let abs = v.abs();
                if min.is_none_or(|m| abs < m) {
                    min = Some(abs);
                }
            }
        }
        for p in t.node.op.parents() {
            stack.push(p.clone());
        }
    }
    min
}

/// Central finite differences of a scalar function of flat parameter vectors:
/// `(f(p + eps e) - f(p - eps e)) / (2 eps)` per coordinate. The verification
/// oracle for [`backward`]; deliberately independent of the graph machinery.
pub fn finite_difference_grad<F>(f: F, params: &[Vec<f64>], eps: f64) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&[Vec<f64>]) -> f64,
{
    if eps <= 0.0 {
        return Err(AdError::BadEps(eps));
    }
    let mut work: Vec<Vec<f64>> = params.to_vec();
    let mut out = Vec::with_capacity(params.len());
    for pi in 0..params.len() {
        let mut g = vec![0.0; params[pi].len()];
        for ci in 0..params[pi].len() {
            let orig = work[pi][ci];
            work[pi][ci] = orig + eps;
            let up = f(&work);
            work[pi][ci] = orig - eps;
            let down = f(&work);
            work[pi][ci] = orig;
            g[ci] = (up - down) / (2.0 * eps);
        }
        out.push(g);
    }
    Ok(out)
}

/// One coordinate of the central-difference gradient; used where the full
/// sweep is too expensive and coordinates are spot-checked instead.
pub fn finite_difference_coord<F>(
    f: F,
    params: &mut [Vec<f64>],
    which: (usize, usize),
    eps: f64,
) -> Result<f64>
where
    F: Fn(&[Vec<f64>]) -> f64,
{
    if eps <= 0.0 {
        return Err(AdError::BadEps(eps));
    }
    let (pi, ci) = which;
    let orig = params[pi][ci];
    params[pi][ci] = orig + eps;
    let up = f(params);
    params[pi][ci] = orig - eps;
    let down = f(params);
    params[pi][ci] = orig;
    Ok((up - down) / (2.0 * eps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn randu(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn matmul_identity() {
        let i = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
        let b = Tensor::matrix(2, 2, vec![3.0, 4.0, 5.0, 6.0]);
        let c = i.matmul(&b).unwrap();
        assert_eq!(c.data(), &[3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn matmul_row_by_column() {
        let a = Tensor::matrix(1, 2, vec![1.0, 2.0]);
        let b = Tensor::matrix(2, 1, vec![3.0, 4.0]);
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.shape(), &[1, 1]);
        assert_eq!(c.data(), &[11.0]);
    }

    #[test]
    fn matmul_matches_triple_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (m, k, n) = (3, 4, 2);
        let a = randu(&mut rng, m * k);
        let b = randu(&mut rng, k * n);
        let got = Tensor::matrix(m, k, a.clone())
            .matmul(&Tensor::matrix(k, n, b.clone()))
            .unwrap();
        // Independent triple-loop oracle.
        let mut want = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0;
                for p in 0..k {
                    acc += a[i * k + p] * b[p * n + j];
                }
                want[i * n + j] = acc;
            }
        }
        for (g, w) in got.data().iter().zip(&want) {
            assert!((g - w).abs() <= 1e-12, "got {g}, want {w}");
        }
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let a = Tensor::matrix(2, 3, vec![0.0; 6]);
        let b = Tensor::matrix(2, 2, vec![0.0; 4]);
        let err = a.matmul(&b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[2, 2]"), "{msg}");
    }

    #[test]
    fn elementwise_basics() {
        let x = Tensor::vector(&[-1.0, 0.0, 2.0]);
        assert_eq!(x.relu().data(), &[0.0, 0.0, 2.0]);

        let zeros = Tensor::vector(&[0.0, 0.0, 0.0]);
        assert_eq!(x.add(&zeros).unwrap().data(), x.data());

        assert_eq!(Tensor::vector(&[0.0]).tanh().data(), &[0.0]);

        let bad = Tensor::vector(&[1.0, 2.0]);
        assert!(x.add(&bad).is_err());
    }

    #[test]
    fn reduce_basics() {
        assert_eq!(Tensor::vector(&[1.0, 2.0, 3.0]).sum().unwrap().value(), 6.0);
        assert_eq!(Tensor::vector(&[2.0, 4.0]).mean().unwrap().value(), 3.0);
        assert!(Tensor::vector(&[]).sum().is_err());
        assert!(Tensor::vector(&[]).mean().is_err());
    }

    #[test]
    fn sum_matches_sequential_accumulation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let xs = randu(&mut rng, 10);
        let got = Tensor::vector(&xs).sum().unwrap().value();
        let mut want = 0.0;
        for x in &xs {
            want += x;
        }
        assert!((got - want).abs() <= 1e-12);
    }

    #[test]
    fn backward_square_sum() {
        let x = Tensor::vector(&[3.0]);
        let loss = x.square().sum().unwrap();
        let grads = backward(&loss, &[&x]).unwrap();
        assert_eq!(grads.get(&x), &[6.0]);
    }

    #[test]
    fn backward_matmul_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a_data = randu(&mut rng, 6);
        let b_data = randu(&mut rng, 8);
        let a = Tensor::matrix(3, 2, a_data.clone());
        let b = Tensor::matrix(2, 4, b_data.clone());
        let loss = a.matmul(&b).unwrap().sum().unwrap();
        let grads = backward(&loss, &[&a]).unwrap();

        let fd = finite_difference_grad(
            |p| {
                let ta = Tensor::matrix(3, 2, p[0].clone());
                let tb = Tensor::matrix(2, 4, b_data.clone());
                ta.matmul(&tb).unwrap().sum().unwrap().value()
            },
            &[a_data],
            1e-5,
        )
        .unwrap();
        for (g, f) in grads.get(&a).iter().zip(&fd[0]) {
            assert!((g - f).abs() <= 1e-7, "ad {g} vs fd {f}");
        }
    }

    #[test]
    fn backward_unreachable_param_is_zero() {
        let x = Tensor::vector(&[1.0, 2.0]);
        let p = Tensor::vector(&[5.0]);
        let loss = x.square().sum().unwrap();
        let grads = backward(&loss, &[&p]).unwrap();
        assert_eq!(grads.get(&p), &[0.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let x = Tensor::vector(&[1.0, 2.0]);
        let y = x.square();
        assert!(matches!(
            backward(&y, &[&x]),
            Err(AdError::NonScalarLoss { .. })
        ));
    }

    #[test]
    fn backward_is_linear_in_the_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::vector(&randu(&mut rng, 6));
        let w = Tensor::matrix(4, 6, randu(&mut rng, 24));
        let h = w.matmul(&x).unwrap().tanh();
        let l1 = h.square().sum().unwrap();
        let l2 = h.sum().unwrap();
        let (a, b) = (2.5, -0.75);
        let combined = l1.scale(a).add(&l2.scale(b)).unwrap();

        let g1 = backward(&l1, &[&w]).unwrap();
        let g2 = backward(&l2, &[&w]).unwrap();
        let gc = backward(&combined, &[&w]).unwrap();
        for ((gc, g1), g2) in gc.get(&w).iter().zip(g1.get(&w)).zip(g2.get(&w)) {
            assert!((gc - (a * g1 + b * g2)).abs() <= 1e-10);
        }
    }

    #[test]
    fn backward_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Tensor::vector(&randu(&mut rng, 8));
        let w = Tensor::matrix(8, 8, randu(&mut rng, 64));
        let g1 = {
            let loss = w.matmul(&x).unwrap().relu().square().sum().unwrap();
            backward(&loss, &[&w]).unwrap().get(&w).to_vec()
        };
        let g2 = {
            let loss = w.matmul(&x).unwrap().relu().square().sum().unwrap();
            backward(&loss, &[&w]).unwrap().get(&w).to_vec()
        };
        assert_eq!(g1, g2, "same graph and inputs must give identical bits");
    }

    #[test]
    fn fd_oracle_on_square() {
        let g = finite_difference_grad(|p| p[0][0] * p[0][0], &[vec![3.0]], 1e-5).unwrap();
        assert!((g[0][0] - 6.0).abs() <= 1e-6);
    }

    #[test]
    fn fd_oracle_on_constant_is_zero() {
        let g = finite_difference_grad(|_| 42.0, &[vec![1.0, 2.0, 3.0]], 1e-5).unwrap();
        assert!(g[0].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn fd_rejects_bad_eps() {
        assert!(finite_difference_grad(|_| 0.0, &[vec![1.0]], 0.0).is_err());
    }

    #[test]
    fn two_layer_network_gradient_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let w1_data = randu(&mut rng, 5 * 4);
        let w2_data = randu(&mut rng, 3 * 5);
        let x_data = randu(&mut rng, 4);

        let eval = |p: &[Vec<f64>]| {
            let w1 = Tensor::matrix(5, 4, p[0].clone());
            let w2 = Tensor::matrix(3, 5, p[1].clone());
            let x = Tensor::vector(&x_data);
            let h = w1.matmul(&x).unwrap().tanh();
            let y = w2.matmul(&h).unwrap();
            y.square().sum().unwrap().value()
        };

        let w1 = Tensor::matrix(5, 4, w1_data.clone());
        let w2 = Tensor::matrix(3, 5, w2_data.clone());
        let x = Tensor::vector(&x_data);
        let h = w1.matmul(&x).unwrap().tanh();
        let loss = w2.matmul(&h).unwrap().square().sum().unwrap();
        let grads = backward(&loss, &[&w1, &w2]).unwrap();

        let fd = finite_difference_grad(eval, &[w1_data, w2_data], 1e-5).unwrap();
        for (ad, f) in grads.get(&w1).iter().zip(&fd[0]) {
            let denom = f.abs().max(ad.abs()).max(1e-8);
            assert!((ad - f).abs() / denom <= 1e-4, "w1: ad {ad} vs fd {f}");
        }
        for (ad, f) in grads.get(&w2).iter().zip(&fd[1]) {
            let denom = f.abs().max(ad.abs()).max(1e-8);
            assert!((ad - f).abs() / denom <= 1e-4, "w2: ad {ad} vs fd {f}");
        }
    }

    #[test]
    fn relu_network_gradient_matches_fd_away_from_kinks() {
        // Full-gradient check on small relu networks, excluding coordinates
        // whose finite-difference evaluations sit within 1e-6 of a kink.
        let mut excluded = 0usize;
        let mut checked = 0usize;
        for seed in 0..5u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let w1_data = randu(&mut rng, 12 * 6);
            let w2_data = randu(&mut rng, 4 * 12);
            let x_data = randu(&mut rng, 6);

            let build = |p: &[Vec<f64>]| {
                let w1 = Tensor::matrix(12, 6, p[0].clone());
                let w2 = Tensor::matrix(4, 12, p[1].clone());
                let x = Tensor::vector(&x_data);
                let h = w1.matmul(&x).unwrap().relu();
                w2.matmul(&h).unwrap().square().sum().unwrap()
            };
            let params = vec![w1_data, w2_data];
            let w1 = Tensor::matrix(12, 6, params[0].clone());
            let w2 = Tensor::matrix(4, 12, params[1].clone());
            let x = Tensor::vector(&x_data);
            let h = w1.matmul(&x).unwrap().relu();
            let loss = w2.matmul(&h).unwrap().square().sum().unwrap();
            let grads = backward(&loss, &[&w1, &w2]).unwrap();

            let eps = 1e-5;
            let mut work = params.clone();
            for pi in 0..2 {
                let ad = if pi == 0 { grads.get(&w1) } else { grads.get(&w2) };
                for ci in 0..work[pi].len() {
                    let orig = work[pi][ci];
                    work[pi][ci] = orig + eps;
                    let up_graph = build(&work);
                    work[pi][ci] = orig - eps;
                    let down_graph = build(&work);
                    work[pi][ci] = orig;
                    let near_kink = [&up_graph, &down_graph, &loss].iter().any(|g| {
                        relu_min_abs_input(g).is_some_and(|m| m < 1e-6)
                    });
                    if near_kink {
                        excluded += 1;
                        continue;
                    }
                    let fd = (up_graph.value() - down_graph.value()) / (2.0 * eps);
                    let denom = fd.abs().max(ad[ci].abs()).max(1e-8);
                    assert!(
                        (ad[ci] - fd).abs() / denom <= 1e-4,
                        "seed {seed} p{pi}[{ci}]: ad {} vs fd {fd}",
                        ad[ci]
                    );
                    checked += 1;
                }
            }
        }
        assert!(checked > 200, "too few coordinates checked ({checked})");
        // Exclusions should be rare for random weights.
        assert!(excluded < checked / 10, "excluded {excluded} of {checked}");
    }

    #[test]
    fn repeat_cols_forward_and_backward() {
        let b = Tensor::vector(&[1.0, 2.0]);
        let r = b.repeat_cols(3).unwrap();
        assert_eq!(r.shape(), &[2, 3]);
        assert_eq!(r.data(), &[1.0, 1.0, 1.0, 2.0, 2.0, 2.0]);

        // d(sum)/db_i = number of columns.
        let loss = r.sum().unwrap();
        let grads = backward(&loss, &[&b]).unwrap();
        assert_eq!(grads.get(&b), &[3.0, 3.0]);
    }

    #[test]
    fn pairwise_sqdist_matches_naive_and_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let (d, n, m) = (3, 4, 2);
        let a_data = randu(&mut rng, d * n);
        let b_data = randu(&mut rng, d * m);
        let a = Tensor::matrix(d, n, a_data.clone());
        let b = Tensor::matrix(d, m, b_data.clone());
        let out = a.pairwise_sqdist(&b).unwrap();
        for i in 0..n {
            for j in 0..m {
                let mut want = 0.0;
                for r in 0..d {
                    let diff = a_data[r * n + i] - b_data[r * m + j];
                    want += diff * diff;
                }
                assert!((out.data()[i * m + j] - want).abs() <= 1e-12);
            }
        }

        let loss = out.exp().sum().unwrap();
        let grads = backward(&loss, &[&a, &b]).unwrap();
        let fd = finite_difference_grad(
            |p| {
                let ta = Tensor::matrix(d, n, p[0].clone());
                let tb = Tensor::matrix(d, m, p[1].clone());
                ta.pairwise_sqdist(&tb).unwrap().exp().sum().unwrap().value()
            },
            &[a_data, b_data],
            1e-6,
        )
        .unwrap();
        for (ad, f) in grads.get(&a).iter().zip(&fd[0]) {
            assert!((ad - f).abs() <= 1e-6, "a: ad {ad} vs fd {f}");
        }
        for (ad, f) in grads.get(&b).iter().zip(&fd[1]) {
            assert!((ad - f).abs() <= 1e-6, "b: ad {ad} vs fd {f}");
        }
    }

    #[test]
    fn check_finite_flags_nan() {
        let x = Tensor::vector(&[1.0, f64::NAN]);
        assert!(x.check_finite("test tensor").is_err());
        assert!(Tensor::vector(&[1.0]).check_finite("ok").is_ok());
    }
}
