//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every operation appends one node; creation order is the topological order,
//! so the backward pass is a single reverse sweep. The primitive set is the
//! minimum needed by the encoders, additive attention, the decoder, the
//! training loss and the attention-search objective.
//!
//! Reductions across the token axis (`vecmat`, masked softmax normalization,
//! `sum`/`mean`) use exactly rounded summation so that forward values are
//! bit-identical under joint permutations of the token positions.

use super::fsum::fsum;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    /// Matrix-style product; see [`Tape::matmul`] for the accepted ranks.
    Matmul(Var, Var),
    /// Elementwise add, or `[r,c] + [c]` with the vector broadcast over rows.
    Add(Var, Var),
    Hadamard(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Ln(Var),
    Clamp(Var, f64, f64),
    /// Masked softmax over a rank-1 input. Masked positions get exactly 0.
    SoftmaxMasked(Var, Option<Vec<bool>>),
    /// Concatenation along the last dimension.
    ConcatLast(Vec<Var>),
    /// Stack rank-1 rows into a rank-2 matrix (concatenation along dim 0).
    StackRows(Vec<Var>),
    /// Same-padded 1-D convolution: signal `[T,Cin]`, kernel `[k,Cin,Cout]`.
    Conv1dSame(Var, Var),
    Sum(Var),
    Mean(Var),
    /// Contiguous range of a rank-1 tensor.
    SliceRange { input: Var, start: usize, len: usize },
    /// Single row of a rank-2 tensor, returned as rank-1.
    SliceRow { input: Var, row: usize },
    /// Gather rows of `table` (`[V,E]`) by token id, producing `[T,E]`.
    EmbeddingLookup { table: Var, ids: Vec<usize> },
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Gradients of one scalar output with respect to every tape node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient with respect to `var`, if any path reached it.
    pub fn wrt(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }
}

/// A recording of one forward computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn push(&mut self, op: Op, value: Tensor, name: &'static str) -> Result<Var> {
        value.ensure_finite(name)?;
        self.nodes.push(Node { op, value });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records an input tensor. Leaves receive gradients but have no inputs.
    pub fn leaf(&mut self, value: Tensor) -> Result<Var> {
        self.push(Op::Leaf, value, "leaf")
    }

    fn shape_err(op: &'static str, a: &[usize], b: &[usize]) -> Error {
        Error::ShapeMismatch {
            op,
            detail: format!("{a:?} vs {b:?}"),
        }
    }

    /// Product of two tensors:
    /// `[m,k]·[k,n] -> [m,n]`, `[m,k]·[k] -> [m]`, or `[k]·[k,n] -> [n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let value = match (ta.rank(), tb.rank()) {
            (2, 2) => {
                let (m, k) = (ta.shape()[0], ta.shape()[1]);
                let (k2, n) = (tb.shape()[0], tb.shape()[1]);
                if k != k2 {
                    return Err(Self::shape_err("matmul", ta.shape(), tb.shape()));
                }
                let mut out = vec![0.0; m * n];
                let (av, bv) = (ta.values(), tb.values());
                for i in 0..m {
                    for p in 0..k {
                        let aip = av[i * k + p];
                        let brow = &bv[p * n..(p + 1) * n];
                        let orow = &mut out[i * n..(i + 1) * n];
                        for (o, &bb) in orow.iter_mut().zip(brow) {
                            *o += aip * bb;
                        }
                    }
                }
                Tensor::matrix(m, n, out)?
            }
            (2, 1) => {
                let (m, k) = (ta.shape()[0], ta.shape()[1]);
                if k != tb.shape()[0] {
                    return Err(Self::shape_err("matmul", ta.shape(), tb.shape()));
                }
                let xv = tb.values();
                let out = (0..m)
                    .map(|i| {
                        ta.row(i)
                            .iter()
                            .zip(xv)
                            .map(|(&a, &x)| a * x)
                            .sum::<f64>()
                    })
                    .collect();
                Tensor::vector(out)
            }
            (1, 2) => {
                let k = ta.shape()[0];
                let (k2, n) = (tb.shape()[0], tb.shape()[1]);
                if k != k2 {
                    return Err(Self::shape_err("matmul", ta.shape(), tb.shape()));
                }
                // Contraction runs over the leading axis of `b` (the token
                // axis in attention aggregation): exact summation keeps the
                // result independent of row order.
                let (xv, bv) = (ta.values(), tb.values());
                let out = (0..n)
                    .map(|j| fsum((0..k).map(|p| xv[p] * bv[p * n + j])))
                    .collect();
                Tensor::vector(out)
            }
            _ => return Err(Self::shape_err("matmul", ta.shape(), tb.shape())),
        };
        self.push(Op::Matmul(a, b), value, "matmul")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let value = if ta.shape() == tb.shape() {
            let vals = ta
                .values()
                .iter()
                .zip(tb.values())
                .map(|(x, y)| x + y)
                .collect();
            Tensor::new(ta.shape().to_vec(), vals)?
        } else if ta.rank() == 2 && tb.rank() == 1 && ta.shape()[1] == tb.shape()[0] {
            let (r, c) = (ta.shape()[0], ta.shape()[1]);
            let mut vals = ta.values().to_vec();
            for i in 0..r {
                for (v, &bias) in vals[i * c..(i + 1) * c].iter_mut().zip(tb.values()) {
                    *v += bias;
                }
            }
            Tensor::matrix(r, c, vals)?
        } else {
            return Err(Self::shape_err("add", ta.shape(), tb.shape()));
        };
        self.push(Op::Add(a, b), value, "add")
    }

    /// `a - b`, recorded as `a + (-1)·b`.
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let neg = self.scale(b, -1.0)?;
        self.add(a, neg)
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Self::shape_err("hadamard", ta.shape(), tb.shape()));
        }
        let vals = ta
            .values()
            .iter()
            .zip(tb.values())
            .map(|(x, y)| x * y)
            .collect();
        let value = Tensor::new(ta.shape().to_vec(), vals)?;
        self.push(Op::Hadamard(a, b), value, "hadamard")
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let ta = self.value(a);
        let value = Tensor::new(
            ta.shape().to_vec(),
            ta.values().iter().map(|x| x * c).collect(),
        )?;
        self.push(Op::Scale(a, c), value, "scale")
    }

    fn unary<F: Fn(f64) -> f64, O: FnOnce(Var) -> Op>(
        &mut self,
        a: Var,
        f: F,
        op: O,
        name: &'static str,
    ) -> Result<Var> {
        let ta = self.value(a);
        let value = Tensor::new(ta.shape().to_vec(), ta.values().iter().map(|&x| f(x)).collect())?;
        self.push(op(a), value, name)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(a, f64::tanh, Op::Tanh, "tanh")
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(a, sigmoid, Op::Sigmoid, "sigmoid")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, |x| x.max(0.0), Op::Relu, "relu")
    }

    pub fn ln(&mut self, a: Var) -> Result<Var> {
        self.unary(a, f64::ln, Op::Ln, "ln")
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        self.unary(a, |x| x.clamp(lo, hi), |v| Op::Clamp(v, lo, hi), "clamp")
    }

    /// Masked softmax over a rank-1 input. Masked positions receive exactly
    /// zero probability and block gradient flow; the distribution renormalizes
    /// over the unmasked ones. Errors when every position is masked.
    pub fn softmax_masked(&mut self, a: Var, mask: Option<&[bool]>) -> Result<Var> {
        let ta = self.value(a);
        if ta.rank() != 1 {
            return Err(Error::ShapeMismatch {
                op: "softmax",
                detail: format!("rank-1 required, got {:?}", ta.shape()),
            });
        }
        if let Some(m) = mask {
            if m.len() != ta.len() {
                return Err(Self::shape_err("softmax-mask", ta.shape(), &[m.len()]));
            }
        }
        let value = Tensor::vector(masked_softmax(ta.values(), mask)?);
        self.push(
            Op::SoftmaxMasked(a, mask.map(|m| m.to_vec())),
            value,
            "softmax",
        )
    }

    /// Concatenate along the last dimension. Rank-1 inputs concatenate into a
    /// longer vector; rank-2 inputs must share their row count.
    pub fn concat_last(&mut self, inputs: &[Var]) -> Result<Var> {
        if inputs.is_empty() {
            return Err(Error::InvalidInput("concat of zero tensors".into()));
        }
        let rank = self.value(inputs[0]).rank();
        let value = match rank {
            1 => {
                let mut vals = Vec::new();
                for &v in inputs {
                    let t = self.value(v);
                    if t.rank() != 1 {
                        return Err(Self::shape_err("concat", &[1], t.shape()));
                    }
                    vals.extend_from_slice(t.values());
                }
                Tensor::vector(vals)
            }
            2 => {
                let rows = self.value(inputs[0]).shape()[0];
                let total: usize = inputs
                    .iter()
                    .map(|&v| self.value(v).shape().get(1).copied().unwrap_or(0))
                    .sum();
                for &v in inputs {
                    let t = self.value(v);
                    if t.rank() != 2 || t.shape()[0] != rows {
                        return Err(Self::shape_err(
                            "concat",
                            self.value(inputs[0]).shape(),
                            t.shape(),
                        ));
                    }
                }
                let mut vals = Vec::with_capacity(rows * total);
                for r in 0..rows {
                    for &v in inputs {
                        vals.extend_from_slice(self.value(v).row(r));
                    }
                }
                Tensor::matrix(rows, total, vals)?
            }
            _ => {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    detail: "rank must be 1 or 2".into(),
                })
            }
        };
        self.push(Op::ConcatLast(inputs.to_vec()), value, "concat")
    }

    /// Stack rank-1 vectors of equal length into a `[n, len]` matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var> {
        if rows.is_empty() {
            return Err(Error::InvalidInput("stack of zero rows".into()));
        }
        let cols = self.value(rows[0]).len();
        let mut vals = Vec::with_capacity(rows.len() * cols);
        for &v in rows {
            let t = self.value(v);
            if t.rank() != 1 || t.len() != cols {
                return Err(Self::shape_err("stack", &[cols], t.shape()));
            }
            vals.extend_from_slice(t.values());
        }
        let value = Tensor::matrix(rows.len(), cols, vals)?;
        self.push(Op::StackRows(rows.to_vec()), value, "stack")
    }

    /// Same-padded 1-D convolution over the leading (position) axis.
    /// `signal` is `[T, Cin]`, `kernel` is `[k, Cin, Cout]` with odd `k`;
    /// the output is `[T, Cout]` under zero padding of `(k-1)/2`.
    pub fn conv1d_same(&mut self, signal: Var, kernel: Var) -> Result<Var> {
        let (ts, tk) = (self.value(signal), self.value(kernel));
        if ts.rank() != 2 || tk.rank() != 3 {
            return Err(Self::shape_err("conv1d", ts.shape(), tk.shape()));
        }
        let (t_len, c_in) = (ts.shape()[0], ts.shape()[1]);
        let (k, kc_in, c_out) = (tk.shape()[0], tk.shape()[1], tk.shape()[2]);
        if kc_in != c_in {
            return Err(Self::shape_err("conv1d", ts.shape(), tk.shape()));
        }
        if k % 2 == 0 {
            return Err(Error::InvalidConfig(format!(
                "conv1d kernel width {k} must be odd"
            )));
        }
        let pad = (k - 1) / 2;
        let (sv, kv) = (ts.values(), tk.values());
        let mut out = vec![0.0; t_len * c_out];
        for t in 0..t_len {
            for d in 0..k {
                let s = t + d;
                if s < pad || s - pad >= t_len {
                    continue;
                }
                let srow = &sv[(s - pad) * c_in..(s - pad + 1) * c_in];
                for (c, &sval) in srow.iter().enumerate() {
                    let krow = &kv[(d * c_in + c) * c_out..(d * c_in + c + 1) * c_out];
                    let orow = &mut out[t * c_out..(t + 1) * c_out];
                    for (o, &kval) in orow.iter_mut().zip(krow) {
                        *o += sval * kval;
                    }
                }
            }
        }
        let value = Tensor::matrix(t_len, c_out, out)?;
        self.push(Op::Conv1dSame(signal, kernel), value, "conv1d")
    }

    /// Sum of all entries, as a scalar-shaped tensor.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = fsum(self.value(a).values().iter().copied());
        self.push(Op::Sum(a), Tensor::scalar(s), "sum")
    }

    /// Mean of all entries, as a scalar-shaped tensor.
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len() as f64;
        let s = fsum(self.value(a).values().iter().copied()) / n;
        self.push(Op::Mean(a), Tensor::scalar(s), "mean")
    }

    /// Contiguous range `[start, start+len)` of a rank-1 tensor.
    pub fn slice(&mut self, input: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(input);
        if t.rank() != 1 || start + len > t.len() {
            return Err(Error::ShapeMismatch {
                op: "slice",
                detail: format!("[{start},{}) of {:?}", start + len, t.shape()),
            });
        }
        let value = Tensor::vector(t.values()[start..start + len].to_vec());
        self.push(Op::SliceRange { input, start, len }, value, "slice")
    }

    /// Row `row` of a rank-2 tensor, as a rank-1 vector.
    pub fn slice_row(&mut self, input: Var, row: usize) -> Result<Var> {
        let t = self.value(input);
        if t.rank() != 2 || row >= t.shape()[0] {
            return Err(Error::ShapeMismatch {
                op: "slice-row",
                detail: format!("row {row} of {:?}", t.shape()),
            });
        }
        let value = Tensor::vector(t.row(row).to_vec());
        self.push(Op::SliceRow { input, row }, value, "slice-row")
    }

    /// Gather embedding rows for a token sequence: `[V,E]` table and `T` ids
    /// produce `[T,E]`. Gradients accumulate back into the gathered rows.
    pub fn embedding_lookup(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        if t.rank() != 2 {
            return Err(Error::ShapeMismatch {
                op: "embedding-lookup",
                detail: format!("table must be rank 2, got {:?}", t.shape()),
            });
        }
        let (vocab, dim) = (t.shape()[0], t.shape()[1]);
        if ids.is_empty() {
            return Err(Error::InvalidInput("embedding lookup of zero ids".into()));
        }
        let mut vals = Vec::with_capacity(ids.len() * dim);
        for &id in ids {
            if id >= vocab {
                return Err(Error::InvalidInput(format!(
                    "token index {id} out of vocabulary (size {vocab})"
                )));
            }
            vals.extend_from_slice(t.row(id));
        }
        let value = Tensor::matrix(ids.len(), dim, vals)?;
        self.push(
            Op::EmbeddingLookup {
                table,
                ids: ids.to_vec(),
            },
            value,
            "embedding-lookup",
        )
    }

    /// Reverse sweep from a scalar output. Returns the gradient of `output`
    /// with respect to every node reached by the sweep; fan-out accumulates
    /// additively.
    pub fn backward(&mut self, output: Var) -> Result<Gradients> {
        if self.value(output).len() != 1 {
            return Err(Error::ShapeMismatch {
                op: "backward",
                detail: format!("output shape {:?} is not scalar", self.value(output).shape()),
            });
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Tensor::new(
            self.value(output).shape().to_vec(),
            vec![1.0],
        )?);

        for idx in (0..=output.0).rev() {
            let Some(grad) = grads[idx].take() else {
                continue;
            };
            self.backprop_node(idx, &grad, &mut grads);
            grads[idx] = Some(grad);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(grads: &mut [Option<Tensor>], var: Var, shape: &[usize], update: &[f64]) {
        let slot = grads[var.0].get_or_insert_with(|| Tensor::zeros(shape.to_vec()));
        for (g, u) in slot.values_mut().iter_mut().zip(update) {
            *g += u;
        }
    }

    fn backprop_node(&self, idx: usize, grad: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let g = grad.values();
        match &node.op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                match (ta.rank(), tb.rank()) {
                    (2, 2) => {
                        let (m, k) = (ta.shape()[0], ta.shape()[1]);
                        let n = tb.shape()[1];
                        let (av, bv) = (ta.values(), tb.values());
                        let mut da = vec![0.0; m * k];
                        let mut db = vec![0.0; k * n];
                        for i in 0..m {
                            for p in 0..k {
                                let mut acc = 0.0;
                                for j in 0..n {
                                    acc += g[i * n + j] * bv[p * n + j];
                                    db[p * n + j] += av[i * k + p] * g[i * n + j];
                                }
                                da[i * k + p] = acc;
                            }
                        }
                        Self::accumulate(grads, *a, ta.shape(), &da);
                        Self::accumulate(grads, *b, tb.shape(), &db);
                    }
                    (2, 1) => {
                        let (m, k) = (ta.shape()[0], ta.shape()[1]);
                        let (av, xv) = (ta.values(), tb.values());
                        let mut da = vec![0.0; m * k];
                        let mut dx = vec![0.0; k];
                        for i in 0..m {
                            for j in 0..k {
                                da[i * k + j] = g[i] * xv[j];
                                dx[j] += av[i * k + j] * g[i];
                            }
                        }
                        Self::accumulate(grads, *a, ta.shape(), &da);
                        Self::accumulate(grads, *b, tb.shape(), &dx);
                    }
                    (1, 2) => {
                        let k = ta.shape()[0];
                        let n = tb.shape()[1];
                        let (xv, bv) = (ta.values(), tb.values());
                        let mut dx = vec![0.0; k];
                        let mut db = vec![0.0; k * n];
                        for p in 0..k {
                            let mut acc = 0.0;
                            for j in 0..n {
                                acc += bv[p * n + j] * g[j];
                                db[p * n + j] = xv[p] * g[j];
                            }
                            dx[p] = acc;
                        }
                        Self::accumulate(grads, *a, ta.shape(), &dx);
                        Self::accumulate(grads, *b, tb.shape(), &db);
                    }
                    _ => unreachable!("matmul forward validated ranks"),
                }
            }
            Op::Add(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                Self::accumulate(grads, *a, ta.shape(), g);
                if ta.shape() == tb.shape() {
                    Self::accumulate(grads, *b, tb.shape(), g);
                } else {
                    // Bias broadcast over rows: column sums.
                    let (r, c) = (ta.shape()[0], ta.shape()[1]);
                    let mut db = vec![0.0; c];
                    for i in 0..r {
                        for j in 0..c {
                            db[j] += g[i * c + j];
                        }
                    }
                    Self::accumulate(grads, *b, tb.shape(), &db);
                }
            }
            Op::Hadamard(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let da: Vec<f64> = g.iter().zip(tb.values()).map(|(g, y)| g * y).collect();
                let db: Vec<f64> = g.iter().zip(ta.values()).map(|(g, x)| g * x).collect();
                Self::accumulate(grads, *a, ta.shape(), &da);
                Self::accumulate(grads, *b, tb.shape(), &db);
            }
            Op::Scale(a, c) => {
                let da: Vec<f64> = g.iter().map(|g| g * c).collect();
                Self::accumulate(grads, *a, self.value(*a).shape(), &da);
            }
            Op::Tanh(a) => {
                let y = node.value.values();
                let da: Vec<f64> = g.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect();
                Self::accumulate(grads, *a, self.value(*a).shape(), &da);
            }
            Op::Sigmoid(a) => {
                let y = node.value.values();
                let da: Vec<f64> = g.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect();
                Self::accumulate(grads, *a, self.value(*a).shape(), &da);
            }
            Op::Relu(a) => {
                let x = self.value(*a).values();
                let da: Vec<f64> = g
                    .iter()
                    .zip(x)
                    .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                    .collect();
                Self::accumulate(grads, *a, self.value(*a).shape(), &da);
            }
            Op::Ln(a) => {
                let x = self.value(*a).values();
                let da: Vec<f64> = g.iter().zip(x).map(|(g, x)| g / x).collect();
                Self::accumulate(grads, *a, self.value(*a).shape(), &da);
            }
            Op::Clamp(a, lo, hi) => {
                let x = self.value(*a).values();
                let da: Vec<f64> = g
                    .iter()
                    .zip(x)
                    .map(|(g, &x)| if x >= *lo && x <= *hi { *g } else { 0.0 })
                    .collect();
                Self::accumulate(grads, *a, self.value(*a).shape(), &da);
            }
            Op::SoftmaxMasked(a, mask) => {
                let y = node.value.values();
                let unmasked = |i: usize| mask.as_ref().map_or(true, |m| m[i]);
                let inner = fsum(
                    y.iter()
                        .zip(g)
                        .enumerate()
                        .filter(|(i, _)| unmasked(*i))
                        .map(|(_, (y, g))| y * g),
                );
                let da: Vec<f64> = y
                    .iter()
                    .zip(g)
                    .enumerate()
                    .map(|(i, (y, g))| if unmasked(i) { y * (g - inner) } else { 0.0 })
                    .collect();
                Self::accumulate(grads, *a, self.value(*a).shape(), &da);
            }
            Op::ConcatLast(inputs) => {
                if node.value.rank() == 1 {
                    let mut offset = 0;
                    for &v in inputs {
                        let len = self.value(v).len();
                        Self::accumulate(
                            grads,
                            v,
                            self.value(v).shape(),
                            &g[offset..offset + len],
                        );
                        offset += len;
                    }
                } else {
                    let rows = node.value.shape()[0];
                    let total = node.value.shape()[1];
                    let mut offset = 0;
                    for &v in inputs {
                        let c = self.value(v).shape()[1];
                        let mut dv = vec![0.0; rows * c];
                        for r in 0..rows {
                            dv[r * c..(r + 1) * c]
                                .copy_from_slice(&g[r * total + offset..r * total + offset + c]);
                        }
                        Self::accumulate(grads, v, self.value(v).shape(), &dv);
                        offset += c;
                    }
                }
            }
            Op::StackRows(rows) => {
                let cols = node.value.shape()[1];
                for (r, &v) in rows.iter().enumerate() {
                    Self::accumulate(
                        grads,
                        v,
                        self.value(v).shape(),
                        &g[r * cols..(r + 1) * cols],
                    );
                }
            }
            Op::Conv1dSame(signal, kernel) => {
                let (ts, tk) = (self.value(*signal), self.value(*kernel));
                let (t_len, c_in) = (ts.shape()[0], ts.shape()[1]);
                let (k, _, c_out) = (tk.shape()[0], tk.shape()[1], tk.shape()[2]);
                let pad = (k - 1) / 2;
                let (sv, kv) = (ts.values(), tk.values());
                let mut ds = vec![0.0; t_len * c_in];
                let mut dk = vec![0.0; k * c_in * c_out];
                for t in 0..t_len {
                    for d in 0..k {
                        let s = t + d;
                        if s < pad || s - pad >= t_len {
                            continue;
                        }
                        let src = s - pad;
                        for c in 0..c_in {
                            let sval = sv[src * c_in + c];
                            let kbase = (d * c_in + c) * c_out;
                            let mut acc = 0.0;
                            for o in 0..c_out {
                                let go = g[t * c_out + o];
                                acc += kv[kbase + o] * go;
                                dk[kbase + o] += sval * go;
                            }
                            ds[src * c_in + c] += acc;
                        }
                    }
                }
                Self::accumulate(grads, *signal, ts.shape(), &ds);
                Self::accumulate(grads, *kernel, tk.shape(), &dk);
            }
            Op::Sum(a) => {
                let da = vec![g[0]; self.value(*a).len()];
                Self::accumulate(grads, *a, self.value(*a).shape(), &da);
            }
            Op::Mean(a) => {
                let n = self.value(*a).len();
                let da = vec![g[0] / n as f64; n];
                Self::accumulate(grads, *a, self.value(*a).shape(), &da);
            }
            Op::SliceRange { input, start, len } => {
                let mut da = vec![0.0; self.value(*input).len()];
                da[*start..start + len].copy_from_slice(g);
                Self::accumulate(grads, *input, self.value(*input).shape(), &da);
            }
            Op::SliceRow { input, row } => {
                let t = self.value(*input);
                let c = t.shape()[1];
                let mut da = vec![0.0; t.len()];
                da[row * c..(row + 1) * c].copy_from_slice(g);
                Self::accumulate(grads, *input, t.shape(), &da);
            }
            Op::EmbeddingLookup { table, ids } => {
                let t = self.value(*table);
                let dim = t.shape()[1];
                let mut dt = vec![0.0; t.len()];
                for (pos, &id) in ids.iter().enumerate() {
                    for j in 0..dim {
                        dt[id * dim + j] += g[pos * dim + j];
                    }
                }
                Self::accumulate(grads, *table, t.shape(), &dt);
            }
        }
    }
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Masked softmax on a plain slice; shared by the tape op and callers that
/// need the distribution without recording.
pub fn masked_softmax(scores: &[f64], mask: Option<&[bool]>) -> Result<Vec<f64>> {
    let unmasked = |i: usize| mask.map_or(true, |m| m[i]);
    let max = scores
        .iter()
        .enumerate()
        .filter(|(i, _)| unmasked(*i))
        .map(|(_, &s)| s)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::AllMasked);
    }
    let exps: Vec<f64> = scores
        .iter()
        .enumerate()
        .map(|(i, &s)| if unmasked(i) { (s - max).exp() } else { 0.0 })
        .collect();
    let z = fsum(exps.iter().copied());
    Ok(exps.into_iter().map(|e| e / z).collect())
}
