//! A small reverse-mode autodiff tape over dense row-major matrices.
//!
//! Only the operators the score network needs are provided. Every value on
//! the tape is a [`Matrix`]; scalars are `1 x 1`.

use std::rc::Rc;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data has the wrong length");
        Self { rows, cols, data }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    fn add_assign(&mut self, other: &Matrix) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// `A · B`.
pub fn matmul(a: &Matrix, b: &Matrix) -> Matrix {
    assert_eq!(a.cols, b.rows, "matmul shape mismatch");
    let mut out = Matrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let orow = &mut out.data[i * b.cols..(i + 1) * b.cols];
        for (k, &av) in a.row(i).iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            for (o, bv) in orow.iter_mut().zip(b.row(k)) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `A · Bᵀ`.
pub fn matmul_bt(a: &Matrix, b: &Matrix) -> Matrix {
    assert_eq!(a.cols, b.cols, "matmul_bt shape mismatch");
    let mut out = Matrix::zeros(a.rows, b.rows);
    for i in 0..a.rows {
        let ar = a.row(i);
        for j in 0..b.rows {
            out.data[i * b.rows + j] = ar.iter().zip(b.row(j)).map(|(x, y)| x * y).sum();
        }
    }
    out
}

/// `Aᵀ · B`.
pub fn matmul_at(a: &Matrix, b: &Matrix) -> Matrix {
    assert_eq!(a.rows, b.rows, "matmul_at shape mismatch");
    let mut out = Matrix::zeros(a.cols, b.cols);
    for k in 0..a.rows {
        let br = b.row(k);
        for (i, &av) in a.row(k).iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let orow = &mut out.data[i * b.cols..(i + 1) * b.cols];
            for (o, bv) in orow.iter_mut().zip(br) {
                *o += av * bv;
            }
        }
    }
    out
}

/// Constant sparse matrix in CSR layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Csr {
    pub rows: usize,
    pub cols: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl Csr {
    /// Builds from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(rows: usize, cols: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_by_key(|&(r, c, _)| (r, c));
        let mut indptr = vec![0usize; rows + 1];
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            assert!(r < rows && c < cols, "triplet outside the matrix");
            if last == Some((r, c)) {
                *values.last_mut().expect("previous entry exists") += v;
                continue;
            }
            indices.push(c);
            values.push(v);
            indptr[r + 1] += 1;
            last = Some((r, c));
        }
        for r in 0..rows {
            indptr[r + 1] += indptr[r];
        }
        Self {
            rows,
            cols,
            indptr,
            indices,
            values,
        }
    }

    pub fn mul(&self, a: &Matrix) -> Matrix {
        assert_eq!(self.cols, a.rows, "spmm shape mismatch");
        let mut out = Matrix::zeros(self.rows, a.cols);
        for r in 0..self.rows {
            let orow = &mut out.data[r * a.cols..(r + 1) * a.cols];
            for k in self.indptr[r]..self.indptr[r + 1] {
                let v = self.values[k];
                for (o, x) in orow.iter_mut().zip(a.row(self.indices[k])) {
                    *o += v * x;
                }
            }
        }
        out
    }

    /// `selfᵀ · g`.
    pub fn mul_t(&self, g: &Matrix) -> Matrix {
        assert_eq!(self.rows, g.rows, "spmm transpose shape mismatch");
        let mut out = Matrix::zeros(self.cols, g.cols);
        for r in 0..self.rows {
            let grow = g.row(r);
            for k in self.indptr[r]..self.indptr[r + 1] {
                let v = self.values[k];
                let c = self.indices[k];
                let orow = &mut out.data[c * g.cols..(c + 1) * g.cols];
                for (o, x) in orow.iter_mut().zip(grow) {
                    *o += v * x;
                }
            }
        }
        out
    }
}

/// Handle to a value on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    Param(usize),
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Silu(Var),
    LayerNorm { x: Var, inv_std: Vec<f64> },
    SpMM(Rc<Csr>, Var),
    SoftmaxRows(Var),
    SumSquares(Var),
    MseConst(Var, Rc<Matrix>),
    DotConst(Var, Rc<Matrix>),
}

struct Node {
    value: Matrix,
    op: Op,
}

const LN_EPS: f64 = 1e-5;

/// Records a forward computation for one backward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
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

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// A constant input; receives no gradient.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    /// A trainable parameter whose gradient is routed to slot `index`.
    pub fn param(&mut self, index: usize, value: &Matrix) -> Var {
        self.push(value.clone(), Op::Param(index))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = matmul(self.value(a), self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    /// `a · bᵀ`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Var {
        let v = matmul_bt(self.value(a), self.value(b));
        self.push(v, Op::MatMulBt(a, b))
    }

    fn zip(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Matrix {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!((x.rows, x.cols), (y.rows, y.cols), "elementwise shape mismatch");
        Matrix::from_vec(
            x.rows,
            x.cols,
            x.data.iter().zip(&y.data).map(|(p, q)| f(*p, *q)).collect(),
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip(a, b, |p, q| p + q);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip(a, b, |p, q| p - q);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip(a, b, |p, q| p * q);
        self.push(v, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let x = self.value(a);
        let v = Matrix::from_vec(x.rows, x.cols, x.data.iter().map(|p| p * s).collect());
        self.push(v, Op::Scale(a, s))
    }

    fn row_op(&self, a: Var, row: Var, f: impl Fn(f64, f64) -> f64) -> Matrix {
        let (x, r) = (self.value(a), self.value(row));
        assert!(r.rows == 1 && r.cols == x.cols, "row broadcast shape mismatch");
        let mut out = x.clone();
        for i in 0..x.rows {
            for (o, q) in out.row_mut(i).iter_mut().zip(&r.data) {
                *o = f(*o, *q);
            }
        }
        out
    }

    /// Adds a `1 x cols` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let v = self.row_op(a, row, |p, q| p + q);
        self.push(v, Op::AddRow(a, row))
    }

    /// Multiplies every row of `a` elementwise by a `1 x cols` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let v = self.row_op(a, row, |p, q| p * q);
        self.push(v, Op::MulRow(a, row))
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let v = Matrix::from_vec(x.rows, x.cols, x.data.iter().map(|&p| p * sigmoid(p)).collect());
        self.push(v, Op::Silu(a))
    }

    /// Per-row standardization without affine terms.
    pub fn layer_norm(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut out = x.clone();
        let mut inv_std = Vec::with_capacity(x.rows);
        for i in 0..x.rows {
            let row = out.row_mut(i);
            let n = row.len() as f64;
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let s = 1.0 / (var + LN_EPS).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * s;
            }
            inv_std.push(s);
        }
        self.push(out, Op::LayerNorm { x: a, inv_std })
    }

    pub fn spmm(&mut self, s: &Rc<Csr>, a: Var) -> Var {
        let v = s.mul(self.value(a));
        self.push(v, Op::SpMM(Rc::clone(s), a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for i in 0..out.rows {
            let row = out.row_mut(i);
            let top = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in row.iter_mut() {
                *v = (*v - top).exp();
                z += *v;
            }
            for v in row.iter_mut() {
                *v /= z;
            }
        }
        self.push(out, Op::SoftmaxRows(a))
    }

    /// Sum of squared entries, as a `1 x 1` value.
    pub fn sum_squares(&mut self, a: Var) -> Var {
        let v = Matrix::from_vec(1, 1, vec![self.value(a).norm_sq()]);
        self.push(v, Op::SumSquares(a))
    }

    /// Mean squared difference to a constant target, as a `1 x 1` value.
    pub fn mse(&mut self, a: Var, target: Rc<Matrix>) -> Var {
        let x = self.value(a);
        assert_eq!(x.data.len(), target.data.len(), "mse shape mismatch");
        let n = x.data.len().max(1) as f64;
        let s = x
            .data
            .iter()
            .zip(&target.data)
            .map(|(p, q)| (p - q).powi(2))
            .sum::<f64>()
            / n;
        self.push(Matrix::from_vec(1, 1, vec![s]), Op::MseConst(a, target))
    }

    /// `Σ a ⊙ c` against a constant `c`, as a `1 x 1` value.
    pub fn dot_const(&mut self, a: Var, c: Rc<Matrix>) -> Var {
        let x = self.value(a);
        assert_eq!(x.data.len(), c.data.len(), "dot shape mismatch");
        let s = x.data.iter().zip(&c.data).map(|(p, q)| p * q).sum();
        self.push(Matrix::from_vec(1, 1, vec![s]), Op::DotConst(a, c))
    }

    /// Back-propagates from the scalar `loss`. Returns gradients for every
    /// parameter slot below `num_params` that took part in the computation.
    pub fn backward(&self, loss: Var, num_params: usize) -> Vec<Option<Matrix>> {
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        let l = self.value(loss);
        grads[loss.0] = Some(Matrix::from_vec(l.rows, l.cols, vec![1.0; l.len()]));
        let mut params: Vec<Option<Matrix>> = (0..num_params).map(|_| None).collect();

        fn acc(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot => *slot = Some(g),
            }
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::Param(p) => match &mut params[*p] {
                    Some(existing) => existing.add_assign(&g),
                    slot => *slot = Some(g),
                },
                Op::MatMul(a, b) => {
                    let ga = matmul_bt(&g, self.value(*b));
                    let gb = matmul_at(self.value(*a), &g);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::MatMulBt(a, b) => {
                    let ga = matmul(&g, self.value(*b));
                    let gb = matmul_at(&g, self.value(*a));
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *b, g.clone());
                    acc(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    let neg = Matrix::from_vec(g.rows, g.cols, g.data.iter().map(|v| -v).collect());
                    acc(&mut grads, *b, neg);
                    acc(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let (x, y) = (self.value(*a), self.value(*b));
                    let ga = Matrix::from_vec(
                        g.rows,
                        g.cols,
                        g.data.iter().zip(&y.data).map(|(p, q)| p * q).collect(),
                    );
                    let gb = Matrix::from_vec(
                        g.rows,
                        g.cols,
                        g.data.iter().zip(&x.data).map(|(p, q)| p * q).collect(),
                    );
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Scale(a, s) => {
                    let ga = Matrix::from_vec(g.rows, g.cols, g.data.iter().map(|v| v * s).collect());
                    acc(&mut grads, *a, ga);
                }
                Op::AddRow(a, row) => {
                    let mut gr = Matrix::zeros(1, g.cols);
                    for i in 0..g.rows {
                        for (o, v) in gr.data.iter_mut().zip(g.row(i)) {
                            *o += v;
                        }
                    }
                    acc(&mut grads, *row, gr);
                    acc(&mut grads, *a, g);
                }
                Op::MulRow(a, row) => {
                    let (x, r) = (self.value(*a), self.value(*row));
                    let mut gr = Matrix::zeros(1, g.cols);
                    let mut ga = g.clone();
                    for i in 0..g.rows {
                        for (j, o) in gr.data.iter_mut().enumerate() {
                            *o += g.data[i * g.cols + j] * x.data[i * g.cols + j];
                        }
                        for (o, q) in ga.row_mut(i).iter_mut().zip(&r.data) {
                            *o *= q;
                        }
                    }
                    acc(&mut grads, *row, gr);
                    acc(&mut grads, *a, ga);
                }
                Op::Silu(a) => {
                    let x = self.value(*a);
                    let ga = Matrix::from_vec(
                        g.rows,
                        g.cols,
                        g.data
                            .iter()
                            .zip(&x.data)
                            .map(|(gv, &p)| {
                                let s = sigmoid(p);
                                gv * s * (1.0 + p * (1.0 - s))
                            })
                            .collect(),
                    );
                    acc(&mut grads, *a, ga);
                }
                Op::LayerNorm { x, inv_std } => {
                    let y = &node.value;
                    let mut ga = Matrix::zeros(g.rows, g.cols);
                    let n = g.cols as f64;
                    for i in 0..g.rows {
                        let (gy, yy) = (g.row(i), y.row(i));
                        let mean_g = gy.iter().sum::<f64>() / n;
                        let mean_gy = gy.iter().zip(yy).map(|(p, q)| p * q).sum::<f64>() / n;
                        for (j, o) in ga.row_mut(i).iter_mut().enumerate() {
                            *o = inv_std[i] * (gy[j] - mean_g - yy[j] * mean_gy);
                        }
                    }
                    acc(&mut grads, *x, ga);
                }
                Op::SpMM(s, a) => {
                    let ga = s.mul_t(&g);
                    acc(&mut grads, *a, ga);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut ga = Matrix::zeros(g.rows, g.cols);
                    for i in 0..g.rows {
                        let (gy, yy) = (g.row(i), y.row(i));
                        let dot: f64 = gy.iter().zip(yy).map(|(p, q)| p * q).sum();
                        for (j, o) in ga.row_mut(i).iter_mut().enumerate() {
                            *o = yy[j] * (gy[j] - dot);
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::SumSquares(a) => {
                    let x = self.value(*a);
                    let s = 2.0 * g.data[0];
                    let ga = Matrix::from_vec(x.rows, x.cols, x.data.iter().map(|v| s * v).collect());
                    acc(&mut grads, *a, ga);
                }
                Op::MseConst(a, target) => {
                    let x = self.value(*a);
                    let s = 2.0 * g.data[0] / x.data.len().max(1) as f64;
                    let ga = Matrix::from_vec(
                        x.rows,
                        x.cols,
                        x.data
                            .iter()
                            .zip(&target.data)
                            .map(|(p, q)| s * (p - q))
                            .collect(),
                    );
                    acc(&mut grads, *a, ga);
                }
                Op::DotConst(a, c) => {
                    let x = self.value(*a);
                    let ga = Matrix::from_vec(x.rows, x.cols, c.data.iter().map(|q| g.data[0] * q).collect());
                    acc(&mut grads, *a, ga);
                }
            }
        }
        params
    }
}
