//! Tape-based reverse-mode differentiation over dense matrices.
//!
//! Every forward computation in the crate (text encoder, graph encoder,
//! contrastive losses, classifier head) records its operations on a
//! [`Tape`]. [`Tape::backward`] then walks the tape once in reverse and
//! returns the gradient of a scalar node with respect to every leaf that
//! was registered with [`Tape::param`].

use crate::tensor::{dot, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    ScaleBy(Var, Var),
    Gelu(Var),
    Tanh(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Matrix,
        inv_std: Vec<f64>,
    },
    GatherRows(Var, Vec<usize>),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    MeanRows(Var),
    /// Source row of each output column.
    MaxRows(Var, Vec<usize>),
    L2NormalizeRows(Var, Vec<f64>),
    Select(Var, Vec<(usize, usize)>),
    LogSumExp(Var),
    Sum(Var),
}

struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads[v.0].as_ref()
    }

    /// Gradient of `v`, or zeros of its shape if nothing flowed into it.
    pub fn take_or_zeros(&mut self, v: Var, rows: usize, cols: usize) -> Matrix {
        self.grads[v.0]
            .take()
            .unwrap_or_else(|| Matrix::zeros(rows, cols))
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.shape(), (1, 1));
        m.data[0]
    }

    /// A differentiable leaf.
    pub fn param(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::MatMul(a, b), ng)
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul_t(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::MatMulT(a, b), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut v = self.value(a).clone();
        v.add_assign(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape(), y.shape(), "sub shape mismatch");
        let data = x.data.iter().zip(&y.data).map(|(p, q)| p - q).collect();
        let v = Matrix::from_vec(x.rows, x.cols, data);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Sub(a, b), ng)
    }

    /// Adds a `1 × c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let r = self.value(row);
        assert_eq!(r.rows, 1, "add_row expects a row vector");
        let mut v = self.value(a).clone();
        assert_eq!(v.cols, r.cols, "add_row width mismatch");
        for i in 0..v.rows {
            for (o, b) in v.row_mut(i).iter_mut().zip(&r.data) {
                *o += b;
            }
        }
        let ng = self.ng(a) || self.ng(row);
        self.push(v, Op::AddRow(a, row), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape(), y.shape(), "mul shape mismatch");
        let data = x.data.iter().zip(&y.data).map(|(p, q)| p * q).collect();
        let v = Matrix::from_vec(x.rows, x.cols, data);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Mul(a, b), ng)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).scale(c);
        let ng = self.ng(a);
        self.push(v, Op::Scale(a, c), ng)
    }

    /// Multiplies `a` by the `1 × 1` node `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Var {
        let c = self.scalar(s);
        let v = self.value(a).scale(c);
        let ng = self.ng(a) || self.ng(s);
        self.push(v, Op::ScaleBy(a, s), ng)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| {
            let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
            0.5 * x * (1.0 + t)
        });
        let ng = self.ng(a);
        self.push(v, Op::Gelu(a), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        let ng = self.ng(a);
        self.push(v, Op::Tanh(a), ng)
    }

    /// Row-wise softmax. Columns with `allowed[c] == false` get probability
    /// exactly 0; a row with no allowed column is all zeros.
    pub fn softmax_rows(&mut self, a: Var, allowed: Option<&[bool]>) -> Var {
        let x = self.value(a);
        let mut v = Matrix::zeros(x.rows, x.cols);
        for r in 0..x.rows {
            let row = x.row(r);
            let ok = |c: usize| allowed.is_none_or(|m| m[c]);
            let max = (0..x.cols)
                .filter(|&c| ok(c))
                .map(|c| row[c])
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                continue;
            }
            let out = v.row_mut(r);
            let mut z = 0.0;
            for c in 0..x.cols {
                if ok(c) {
                    out[c] = (row[c] - max).exp();
                    z += out[c];
                }
            }
            for o in out.iter_mut() {
                *o /= z;
            }
        }
        let ng = self.ng(a);
        self.push(v, Op::Softmax(a), ng)
    }

    /// Row-wise layer normalization with `1 × c` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let xm = self.value(x);
        let (g, b) = (self.value(gain), self.value(bias));
        let n = xm.cols as f64;
        let mut xhat = Matrix::zeros(xm.rows, xm.cols);
        let mut inv_std = Vec::with_capacity(xm.rows);
        let mut out = Matrix::zeros(xm.rows, xm.cols);
        for r in 0..xm.rows {
            let row = xm.row(r);
            let mu = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            inv_std.push(inv);
            for c in 0..xm.cols {
                let h = (row[c] - mu) * inv;
                xhat.set(r, c, h);
                out.set(r, c, h * g.data[c] + b.data[c]);
            }
        }
        let ng = self.ng(x) || self.ng(gain) || self.ng(bias);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            ng,
        )
    }

    pub fn gather_rows(&mut self, table: Var, idx: &[usize]) -> Var {
        let t = self.value(table);
        let mut v = Matrix::zeros(idx.len(), t.cols);
        for (i, &r) in idx.iter().enumerate() {
            v.row_mut(i).copy_from_slice(t.row(r));
        }
        let ng = self.ng(table);
        self.push(v, Op::GatherRows(table, idx.to_vec()), ng)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Var {
        let x = self.value(a);
        assert!(start + width <= x.cols, "slice out of range");
        let mut v = Matrix::zeros(x.rows, width);
        for r in 0..x.rows {
            v.row_mut(r).copy_from_slice(&x.row(r)[start..start + width]);
        }
        let ng = self.ng(a);
        self.push(v, Op::SliceCols(a, start), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut v = Matrix::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let x = self.value(p);
            assert_eq!(x.rows, rows, "concat_cols row mismatch");
            for r in 0..rows {
                v.row_mut(r)[off..off + x.cols].copy_from_slice(x.row(r));
            }
            off += x.cols;
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(v, Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let x = self.value(p);
            assert_eq!(x.cols, cols, "concat_rows col mismatch");
            data.extend_from_slice(&x.data);
            rows += x.rows;
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(
            Matrix::from_vec(rows, cols, data),
            Op::ConcatRows(parts.to_vec()),
            ng,
        )
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut v = Matrix::zeros(1, x.cols);
        for r in 0..x.rows {
            for (o, b) in v.data.iter_mut().zip(x.row(r)) {
                *o += b;
            }
        }
        let n = x.rows as f64;
        for o in &mut v.data {
            *o /= n;
        }
        let ng = self.ng(a);
        self.push(v, Op::MeanRows(a), ng)
    }

    /// Column-wise maximum over the listed rows, `1 × cols`. Ties go to the
    /// earliest listed row.
    pub fn max_rows(&mut self, a: Var, rows: &[usize]) -> Var {
        assert!(!rows.is_empty(), "max_rows over no rows");
        let x = self.value(a);
        let mut v = Matrix::zeros(1, x.cols);
        let mut src = vec![rows[0]; x.cols];
        for c in 0..x.cols {
            let mut best = x.get(rows[0], c);
            for &r in &rows[1..] {
                if x.get(r, c) > best {
                    best = x.get(r, c);
                    src[c] = r;
                }
            }
            v.data[c] = best;
        }
        let ng = self.ng(a);
        self.push(v, Op::MaxRows(a, src), ng)
    }

    /// Scales each row to unit L2 norm; all-zero rows stay zero.
    pub fn l2_normalize_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut v = x.clone();
        let mut norms = Vec::with_capacity(x.rows);
        for r in 0..x.rows {
            let n = dot(x.row(r), x.row(r)).sqrt();
            norms.push(n);
            if n > 0.0 {
                for o in v.row_mut(r) {
                    *o /= n;
                }
            }
        }
        let ng = self.ng(a);
        self.push(v, Op::L2NormalizeRows(a, norms), ng)
    }

    /// Picks entries `(row, col)` into a `1 × k` row.
    pub fn select(&mut self, a: Var, idx: &[(usize, usize)]) -> Var {
        let x = self.value(a);
        let data = idx.iter().map(|&(r, c)| x.get(r, c)).collect();
        let ng = self.ng(a);
        self.push(Matrix::row_vector(data), Op::Select(a, idx.to_vec()), ng)
    }

    /// Max-shifted log-sum-exp over all entries, as a `1 × 1` node.
    pub fn log_sum_exp(&mut self, a: Var) -> Var {
        let v = crate::tensor::log_sum_exp(&self.value(a).data);
        let ng = self.ng(a);
        self.push(Matrix::scalar(v), Op::LogSumExp(a), ng)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = self.value(a).data.iter().sum();
        let ng = self.ng(a);
        self.push(Matrix::scalar(v), Op::Sum(a), ng)
    }

    /// Sums a list of `1 × 1` nodes; an empty list yields a constant 0.
    pub fn add_all(&mut self, terms: &[Var]) -> Var {
        match terms.split_first() {
            None => self.constant(Matrix::scalar(0.0)),
            Some((&first, rest)) => rest.iter().fold(first, |acc, &t| self.add(acc, t)),
        }
    }

    /// Reverse sweep from the `1 × 1` node `out`.
    pub fn backward(&self, out: Var) -> Gradients {
        assert_eq!(self.value(out).shape(), (1, 1), "backward needs a scalar");
        self.backward_seeded(out, Matrix::scalar(1.0))
    }

    /// Reverse sweep from `out` with upstream gradient `seed` (same shape as
    /// `out`). Used when the loss is formed outside this tape.
    pub fn backward_seeded(&self, out: Var, seed: Matrix) -> Gradients {
        let n = self.nodes.len();
        let mut grads: Vec<Option<Matrix>> = (0..n).map(|_| None).collect();
        assert_eq!(self.value(out).shape(), seed.shape(), "seed shape mismatch");
        grads[out.0] = Some(seed);

        for i in (0..=out.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn propagate(&self, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let mut acc = |v: Var, d: Matrix| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(m) => m.add_assign(&d),
                slot @ None => *slot = Some(d),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.ng(*a) {
                    acc(*a, g.matmul_t(self.value(*b)));
                }
                if self.ng(*b) {
                    acc(*b, self.value(*a).t_matmul(g));
                }
            }
            Op::MatMulT(a, b) => {
                if self.ng(*a) {
                    acc(*a, g.matmul(self.value(*b)));
                }
                if self.ng(*b) {
                    acc(*b, g.t_matmul(self.value(*a)));
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.scale(-1.0));
            }
            Op::AddRow(a, row) => {
                acc(*a, g.clone());
                if self.ng(*row) {
                    let mut d = Matrix::zeros(1, g.cols);
                    for r in 0..g.rows {
                        for (o, v) in d.data.iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    acc(*row, d);
                }
            }
            Op::Mul(a, b) => {
                let (x, y) = (self.value(*a), self.value(*b));
                if self.ng(*a) {
                    let d = g.data.iter().zip(&y.data).map(|(p, q)| p * q).collect();
                    acc(*a, Matrix::from_vec(g.rows, g.cols, d));
                }
                if self.ng(*b) {
                    let d = g.data.iter().zip(&x.data).map(|(p, q)| p * q).collect();
                    acc(*b, Matrix::from_vec(g.rows, g.cols, d));
                }
            }
            Op::Scale(a, c) => acc(*a, g.scale(*c)),
            Op::ScaleBy(a, s) => {
                let c = self.scalar(*s);
                if self.ng(*a) {
                    acc(*a, g.scale(c));
                }
                if self.ng(*s) {
                    acc(*s, Matrix::scalar(dot(&g.data, &self.value(*a).data)));
                }
            }
            Op::Gelu(a) => {
                let x = self.value(*a);
                let d = x
                    .data
                    .iter()
                    .zip(&g.data)
                    .map(|(&x, &gv)| {
                        let u = GELU_C * (x + GELU_A * x * x * x);
                        let t = u.tanh();
                        let du = GELU_C * (1.0 + 3.0 * GELU_A * x * x);
                        gv * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)
                    })
                    .collect();
                acc(*a, Matrix::from_vec(g.rows, g.cols, d));
            }
            Op::Tanh(a) => {
                let d = node
                    .value
                    .data
                    .iter()
                    .zip(&g.data)
                    .map(|(y, gv)| gv * (1.0 - y * y))
                    .collect();
                acc(*a, Matrix::from_vec(g.rows, g.cols, d));
            }
            Op::Softmax(a) => {
                let y = &node.value;
                let mut d = Matrix::zeros(y.rows, y.cols);
                for r in 0..y.rows {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let s = dot(yr, gr);
                    for (c, o) in d.row_mut(r).iter_mut().enumerate() {
                        *o = yr[c] * (gr[c] - s);
                    }
                }
                acc(*a, d);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let gm = self.value(*gain);
                if self.ng(*gain) {
                    let mut d = Matrix::zeros(1, g.cols);
                    for r in 0..g.rows {
                        for c in 0..g.cols {
                            d.data[c] += g.get(r, c) * xhat.get(r, c);
                        }
                    }
                    acc(*gain, d);
                }
                if self.ng(*bias) {
                    let mut d = Matrix::zeros(1, g.cols);
                    for r in 0..g.rows {
                        for (o, v) in d.data.iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    acc(*bias, d);
                }
                if self.ng(*x) {
                    let n = g.cols as f64;
                    let mut d = Matrix::zeros(g.rows, g.cols);
                    for r in 0..g.rows {
                        let dxhat: Vec<f64> =
                            (0..g.cols).map(|c| g.get(r, c) * gm.data[c]).collect();
                        let s1: f64 = dxhat.iter().sum();
                        let s2: f64 = dot(&dxhat, xhat.row(r));
                        for c in 0..g.cols {
                            let v = inv_std[r] / n * (n * dxhat[c] - s1 - xhat.get(r, c) * s2);
                            d.set(r, c, v);
                        }
                    }
                    acc(*x, d);
                }
            }
            Op::GatherRows(t, idx) => {
                let tv = self.value(*t);
                let mut d = Matrix::zeros(tv.rows, tv.cols);
                for (i, &r) in idx.iter().enumerate() {
                    for (o, v) in d.row_mut(r).iter_mut().zip(g.row(i)) {
                        *o += v;
                    }
                }
                acc(*t, d);
            }
            Op::SliceCols(a, start) => {
                let x = self.value(*a);
                let mut d = Matrix::zeros(x.rows, x.cols);
                for r in 0..x.rows {
                    d.row_mut(r)[*start..*start + g.cols].copy_from_slice(g.row(r));
                }
                acc(*a, d);
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let w = self.value(p).cols;
                    if self.ng(p) {
                        let mut d = Matrix::zeros(g.rows, w);
                        for r in 0..g.rows {
                            d.row_mut(r).copy_from_slice(&g.row(r)[off..off + w]);
                        }
                        acc(p, d);
                    }
                    off += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let x = self.value(p);
                    let len = x.rows * x.cols;
                    if self.ng(p) {
                        acc(
                            p,
                            Matrix::from_vec(x.rows, x.cols, g.data[off..off + len].to_vec()),
                        );
                    }
                    off += len;
                }
            }
            Op::MeanRows(a) => {
                let x = self.value(*a);
                let n = x.rows as f64;
                let mut d = Matrix::zeros(x.rows, x.cols);
                for r in 0..x.rows {
                    for (o, v) in d.row_mut(r).iter_mut().zip(&g.data) {
                        *o = v / n;
                    }
                }
                acc(*a, d);
            }
            Op::MaxRows(a, src) => {
                let x = self.value(*a);
                let mut d = Matrix::zeros(x.rows, x.cols);
                for (c, &r) in src.iter().enumerate() {
                    d.data[r * x.cols + c] = g.data[c];
                }
                acc(*a, d);
            }
            Op::L2NormalizeRows(a, norms) => {
                let y = &node.value;
                let mut d = Matrix::zeros(y.rows, y.cols);
                for r in 0..y.rows {
                    if norms[r] == 0.0 {
                        continue;
                    }
                    let s = dot(y.row(r), g.row(r));
                    let (yr, gr) = (y.row(r), g.row(r));
                    for (c, o) in d.row_mut(r).iter_mut().enumerate() {
                        *o = (gr[c] - yr[c] * s) / norms[r];
                    }
                }
                acc(*a, d);
            }
            Op::Select(a, idx) => {
                let x = self.value(*a);
                let mut d = Matrix::zeros(x.rows, x.cols);
                for (k, &(r, c)) in idx.iter().enumerate() {
                    d.data[r * x.cols + c] += g.data[k];
                }
                acc(*a, d);
            }
            Op::LogSumExp(a) => {
                let x = self.value(*a);
                let l = node.value.data[0];
                let gv = g.data[0];
                acc(*a, x.map(|v| gv * (v - l).exp()));
            }
            Op::Sum(a) => {
                let x = self.value(*a);
                acc(*a, Matrix::from_vec(x.rows, x.cols, vec![g.data[0]; x.len()]));
            }
        }
    }
}


#[cfg(test)]
mod tests {
    use super::gradcheck::{numeric, rel_err};
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Builds a scalar through every op and checks each input gradient.
    fn composite(t: &mut Tape, a: Var, b: Var, g: Var, bias: Var) -> Var {
        let ab = t.matmul(a, b); // 3x4
        let ln = t.layer_norm(ab, g, bias);
        let ge = t.gelu(ln);
        let th = t.tanh(ge);
        let mask = [true, false, true, true];
        let sm = t.softmax_rows(th, Some(&mask));
        let abt = t.matmul_t(sm, ab); // 3x3
        let gathered = t.gather_rows(abt, &[2, 0, 2]);
        let sl = t.slice_cols(gathered, 1, 2);
        let cc = t.concat_cols(&[sl, gathered]);
        let cr = t.concat_rows(&[cc, cc]);
        let mean = t.mean_rows(cr);
        let nrm = t.l2_normalize_rows(cr);
        let sc = t.scale(nrm, 1.7);
        let s0 = t.sum(mean);
        let mx = t.max_rows(cr, &[0, 2, 3]);
        let smx = t.sum(mx);
        let s = t.add(s0, smx);
        let by = t.scale_by(sc, s);
        let m = t.mul(by, cr);
        let sel = t.select(m, &[(0, 0), (1, 3), (5, 4)]);
        let lse = t.log_sum_exp(sel);
        let diff = t.sub(lse, s);
        let row = t.slice_cols(bias, 0, 1);
        let r2 = t.add_row(diff, row);
        t.add(r2, lse)
    }

    #[test]
    fn seeded_backward_matches_weighted_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Matrix::randn(2, 3, 1.0, &mut rng);
        let w = Matrix::randn(2, 3, 1.0, &mut rng);
        let mut t = Tape::new();
        let v = t.param(x.clone());
        let y = t.gelu(v);
        let seeded = t.backward_seeded(y, w.clone());
        let c = t.constant(w);
        let m = t.mul(y, c);
        let s = t.sum(m);
        let plain = t.backward(s);
        assert!(rel_err(seeded.get(v).unwrap(), plain.get(v).unwrap()) < 1e-15);
    }

    #[test]
    fn every_op_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let inputs = [
            Matrix::randn(3, 5, 1.0, &mut rng),
            Matrix::randn(5, 4, 1.0, &mut rng),
            Matrix::randn(1, 4, 1.0, &mut rng),
            Matrix::randn(1, 4, 1.0, &mut rng),
        ];
        let eval = |ins: &[Matrix]| {
            let mut t = Tape::new();
            let v: Vec<Var> = ins.iter().map(|m| t.param(m.clone())).collect();
            let out = composite(&mut t, v[0], v[1], v[2], v[3]);
            (t, v, out)
        };
        let (t, vars, out) = eval(&inputs);
        let grads = t.backward(out);
        for k in 0..inputs.len() {
            let analytic = grads.get(vars[k]).unwrap().clone();
            let num = numeric(&inputs[k], 1e-5, |p| {
                let mut ins = inputs.clone();
                ins[k] = p.clone();
                let (t, _, o) = eval(&ins);
                t.scalar(o)
            });
            let e = rel_err(&analytic, &num);
            assert!(e < 1e-6, "input {k}: rel err {e}");
        }
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut t = Tape::new();
        let c = t.constant(Matrix::scalar(2.0));
        let p = t.param(Matrix::scalar(3.0));
        let m = t.mul(c, p);
        let g = t.backward(m);
        assert!(g.get(c).is_none());
        assert_eq!(g.get(p).unwrap().data, vec![2.0]);
    }

    #[test]
    fn masked_softmax_zeroes_disallowed_columns() {
        let mut t = Tape::new();
        let a = t.param(Matrix::from_rows(&[vec![1.0, 50.0, 2.0]]));
        let s = t.softmax_rows(a, Some(&[true, false, true]));
        let v = t.value(s);
        assert_eq!(v.data[1], 0.0);
        assert!((v.data[0] + v.data[2] - 1.0).abs() < 1e-12);
    }
}
