//! A small reverse-mode autodiff tape over dense `f64` matrices.
//!
//! Feature blocks are `channels × tokens` matrices throughout, so the op set
//! is the handful needed by transformer blocks, attention, the frequency
//! prompters and the convolutional decoder. Every op records its inputs; the
//! backward sweep walks the tape in reverse and only materializes gradients
//! for nodes that depend on a tracked leaf.

use std::sync::Arc;

use ndarray::{s, Array2, Axis, Zip};

pub type Matrix = Array2<f64>;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Norms below this make a cosine similarity exactly zero.
pub const COSINE_EPS: f64 = 1e-8;

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C: f64 = 0.044_715;

enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulConst(Var, Arc<Matrix>),
    Add(Var, Var),
    Mul(Var, Var),
    AddColumn(Var, Var),
    MulColumn(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    SoftmaxRows(Var),
    NormalizeCols(Var, f64),
    Transpose(Var),
    SliceRows(Var, usize, usize),
    SliceCols(Var, usize, usize),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    CosineCols(Var, Var),
    Im2Col3x3 { x: Var, height: usize, width: usize },
}

struct Node {
    value: Matrix,
    op: Op,
    tracked: bool,
    param: Option<usize>,
}

pub struct Tape {
    nodes: Vec<Node>,
    grad_enabled: bool,
}

/// Result of a backward sweep: gradients of tracked leaves.
pub struct Gradients {
    leaves: Vec<Option<Matrix>>,
    params: Vec<(usize, usize)>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Matrix> {
        self.leaves.get(v.0).and_then(Option::as_ref)
    }

    /// `(parameter index, gradient)` for every tracked parameter leaf.
    pub fn params(&self) -> impl Iterator<Item = (usize, &Matrix)> + '_ {
        self.params
            .iter()
            .filter_map(|&(node, id)| self.leaves[node].as_ref().map(|g| (id, g)))
    }
}

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_K * (x + GELU_C * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_K * (x + GELU_C * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_K * (1.0 + 3.0 * GELU_C * x * x)
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    /// A tape that tracks gradients.
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grad_enabled: true,
        }
    }

    /// A tape for evaluation: nothing is tracked.
    pub fn inference() -> Self {
        Self {
            nodes: Vec::new(),
            grad_enabled: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    fn push(&mut self, value: Matrix, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            tracked: tracked && self.grad_enabled,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Untracked input.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Tracked input whose gradient is reported by [`Gradients::wrt`].
    pub fn variable(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Parameter leaf; tracked only when `trainable`.
    pub fn param(&mut self, id: usize, value: Matrix, trainable: bool) -> Var {
        let v = self.push(value, Op::Leaf, trainable);
        self.nodes[v.0].param = Some(id);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        let t = self.tracked(a) || self.tracked(b);
        self.push(value, Op::MatMul(a, b), t)
    }

    /// `x · m` for a fixed matrix `m`.
    pub fn matmul_const(&mut self, x: Var, m: Arc<Matrix>) -> Var {
        let value = self.value(x).dot(m.as_ref());
        let t = self.tracked(x);
        self.push(value, Op::MatMulConst(x, m), t)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add: shape mismatch");
        let value = self.value(a) + self.value(b);
        let t = self.tracked(a) || self.tracked(b);
        self.push(value, Op::Add(a, b), t)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mul: shape mismatch");
        let value = self.value(a) * self.value(b);
        let t = self.tracked(a) || self.tracked(b);
        self.push(value, Op::Mul(a, b), t)
    }

    /// Adds an `r × 1` column to every column of `x`.
    pub fn add_column(&mut self, x: Var, col: Var) -> Var {
        let (r, _) = self.shape(x);
        assert_eq!(self.shape(col), (r, 1), "add_column: shape mismatch");
        let value = self.value(x) + self.value(col);
        let t = self.tracked(x) || self.tracked(col);
        self.push(value, Op::AddColumn(x, col), t)
    }

    /// Scales each row of `x` by the matching entry of an `r × 1` column.
    pub fn mul_column(&mut self, x: Var, col: Var) -> Var {
        let (r, _) = self.shape(x);
        assert_eq!(self.shape(col), (r, 1), "mul_column: shape mismatch");
        let value = self.value(x) * self.value(col);
        let t = self.tracked(x) || self.tracked(col);
        self.push(value, Op::MulColumn(x, col), t)
    }

    /// Scales each column of `x` by the matching entry of a `1 × c` row.
    pub fn mul_row(&mut self, x: Var, row: Var) -> Var {
        let (_, c) = self.shape(x);
        assert_eq!(self.shape(row), (1, c), "mul_row: shape mismatch");
        let value = self.value(x) * self.value(row);
        let t = self.tracked(x) || self.tracked(row);
        self.push(value, Op::MulRow(x, row), t)
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let value = self.value(x) * k;
        let t = self.tracked(x);
        self.push(value, Op::Scale(x, k), t)
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let value = self.value(x).mapv(gelu);
        let t = self.tracked(x);
        self.push(value, Op::Gelu(x), t)
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let mut value = self.value(x).clone();
        for mut row in value.rows_mut() {
            let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            row.mapv_inplace(|v| (v - max).exp());
            let sum = row.sum();
            row.mapv_inplace(|v| v / sum);
        }
        let t = self.tracked(x);
        self.push(value, Op::SoftmaxRows(x), t)
    }

    /// Zero-mean, unit-variance normalization of every column.
    pub fn normalize_cols(&mut self, x: Var, eps: f64) -> Var {
        let mut value = self.value(x).clone();
        for mut col in value.columns_mut() {
            let n = col.len() as f64;
            let mean = col.sum() / n;
            let var = col.fold(0.0, |a, &v| a + (v - mean) * (v - mean)) / n;
            let inv = 1.0 / (var + eps).sqrt();
            col.mapv_inplace(|v| (v - mean) * inv);
        }
        let t = self.tracked(x);
        self.push(value, Op::NormalizeCols(x, eps), t)
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let value = self.value(x).t().to_owned();
        let t = self.tracked(x);
        self.push(value, Op::Transpose(x), t)
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Var {
        let value = self.value(x).slice(s![start..end, ..]).to_owned();
        let t = self.tracked(x);
        self.push(value, Op::SliceRows(x, start, end), t)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Var {
        let value = self.value(x).slice(s![.., start..end]).to_owned();
        let t = self.tracked(x);
        self.push(value, Op::SliceCols(x, start, end), t)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        if parts.len() == 1 {
            return parts[0];
        }
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = ndarray::concatenate(Axis(0), &views).expect("concat_rows: column mismatch");
        let t = parts.iter().any(|&p| self.tracked(p));
        self.push(value, Op::ConcatRows(parts.to_vec()), t)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        if parts.len() == 1 {
            return parts[0];
        }
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = ndarray::concatenate(Axis(1), &views).expect("concat_cols: row mismatch");
        let t = parts.iter().any(|&p| self.tracked(p));
        self.push(value, Op::ConcatCols(parts.to_vec()), t)
    }

    /// Cosine similarity of every column of `x` with the `r × 1` column `t`,
    /// as a `1 × c` row. Columns (or `t`) with norm below [`COSINE_EPS`]
    /// give exactly zero.
    pub fn cosine_cols(&mut self, x: Var, t: Var) -> Var {
        let (r, c) = self.shape(x);
        assert_eq!(self.shape(t), (r, 1), "cosine_cols: shape mismatch");
        let xv = self.value(x);
        let tv = self.value(t).column(0);
        let nt = tv.dot(&tv).sqrt();
        let mut value = Matrix::zeros((1, c));
        for (l, col) in xv.columns().into_iter().enumerate() {
            let nx = col.dot(&col).sqrt();
            if nx >= COSINE_EPS && nt >= COSINE_EPS {
                value[[0, l]] = col.dot(&tv) / (nx * nt);
            }
        }
        let tr = self.tracked(x) || self.tracked(t);
        self.push(value, Op::CosineCols(x, t), tr)
    }

    /// Gathers the 3×3 zero-padded neighbourhood of every pixel of a
    /// `channels × (height·width)` map into a `(9·channels) × (height·width)`
    /// matrix; row `k·channels + c` holds offset `k = (dy+1)·3 + (dx+1)`.
    pub fn im2col_3x3(&mut self, x: Var, height: usize, width: usize) -> Var {
        let (ch, n) = self.shape(x);
        assert_eq!(n, height * width, "im2col_3x3: token count mismatch");
        let xv = self.value(x);
        let mut value = Matrix::zeros((9 * ch, n));
        for_each_tap(height, width, |k, dst, src| {
            for c in 0..ch {
                value[[k * ch + c, dst]] = xv[[c, src]];
            }
        });
        let t = self.tracked(x);
        self.push(value, Op::Im2Col3x3 { x, height, width }, t)
    }

    /// Reverse sweep from `root`, seeded with `d(loss)/d(root)`.
    pub fn backward(&self, root: Var, seed: Matrix) -> Gradients {
        assert_eq!(seed.dim(), self.shape(root), "backward: seed shape mismatch");
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut leaves: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.tracked(root) {
            grads[root.0] = Some(seed);
        }
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let mut send = |v: Var, d: Matrix| {
                if !self.tracked(v) {
                    return;
                }
                match &mut grads[v.0] {
                    Some(acc) => *acc += &d,
                    slot => *slot = Some(d),
                }
            };
            match &node.op {
                Op::Leaf => leaves[i] = Some(g),
                Op::MatMul(a, b) => {
                    if self.tracked(*a) {
                        send(*a, g.dot(&self.value(*b).t()));
                    }
                    if self.tracked(*b) {
                        send(*b, self.value(*a).t().dot(&g));
                    }
                }
                Op::MatMulConst(x, m) => send(*x, g.dot(&m.t())),
                Op::Add(a, b) => {
                    if self.tracked(*b) {
                        send(*b, g.clone());
                    }
                    send(*a, g);
                }
                Op::Mul(a, b) => {
                    if self.tracked(*a) {
                        send(*a, &g * self.value(*b));
                    }
                    if self.tracked(*b) {
                        send(*b, &g * self.value(*a));
                    }
                }
                Op::AddColumn(x, col) => {
                    if self.tracked(*col) {
                        send(*col, g.sum_axis(Axis(1)).insert_axis(Axis(1)));
                    }
                    send(*x, g);
                }
                Op::MulColumn(x, col) => {
                    if self.tracked(*col) {
                        let d = (&g * self.value(*x)).sum_axis(Axis(1)).insert_axis(Axis(1));
                        send(*col, d);
                    }
                    if self.tracked(*x) {
                        send(*x, &g * self.value(*col));
                    }
                }
                Op::MulRow(x, row) => {
                    if self.tracked(*row) {
                        let d = (&g * self.value(*x)).sum_axis(Axis(0)).insert_axis(Axis(0));
                        send(*row, d);
                    }
                    if self.tracked(*x) {
                        send(*x, &g * self.value(*row));
                    }
                }
                Op::Scale(x, k) => send(*x, g * *k),
                Op::Gelu(x) => {
                    let mut d = g;
                    Zip::from(&mut d)
                        .and(self.value(*x))
                        .for_each(|d, &x| *d *= gelu_grad(x));
                    send(*x, d);
                }
                Op::SoftmaxRows(x) => {
                    let y = &node.value;
                    let mut d = &g * y;
                    for (mut drow, yrow) in d.rows_mut().into_iter().zip(y.rows()) {
                        let s = drow.sum();
                        Zip::from(&mut drow).and(&yrow).for_each(|d, &y| *d -= y * s);
                    }
                    send(*x, d);
                }
                Op::NormalizeCols(x, eps) => {
                    let xv = self.value(*x);
                    let y = &node.value;
                    let mut d = Matrix::zeros(g.dim());
                    let n = xv.nrows() as f64;
                    for l in 0..xv.ncols() {
                        let col = xv.column(l);
                        let mean = col.sum() / n;
                        let var = col.fold(0.0, |a, &v| a + (v - mean) * (v - mean)) / n;
                        let inv = 1.0 / (var + eps).sqrt();
                        let gc = g.column(l);
                        let yc = y.column(l);
                        let gm = gc.sum() / n;
                        let gym = gc.dot(&yc) / n;
                        for r in 0..xv.nrows() {
                            d[[r, l]] = inv * (gc[r] - gm - yc[r] * gym);
                        }
                    }
                    send(*x, d);
                }
                Op::Transpose(x) => send(*x, g.t().to_owned()),
                Op::SliceRows(x, a, b) => {
                    let mut d = Matrix::zeros(self.shape(*x));
                    d.slice_mut(s![*a..*b, ..]).assign(&g);
                    send(*x, d);
                }
                Op::SliceCols(x, a, b) => {
                    let mut d = Matrix::zeros(self.shape(*x));
                    d.slice_mut(s![.., *a..*b]).assign(&g);
                    send(*x, d);
                }
                Op::ConcatRows(parts) => {
                    let mut at = 0;
                    for &p in parts {
                        let r = self.shape(p).0;
                        if self.tracked(p) {
                            send(p, g.slice(s![at..at + r, ..]).to_owned());
                        }
                        at += r;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut at = 0;
                    for &p in parts {
                        let c = self.shape(p).1;
                        if self.tracked(p) {
                            send(p, g.slice(s![.., at..at + c]).to_owned());
                        }
                        at += c;
                    }
                }
                Op::CosineCols(x, t) => {
                    let xv = self.value(*x);
                    let tv = self.value(*t).column(0);
                    let nt = tv.dot(&tv).sqrt();
                    let mut dx = Matrix::zeros(xv.dim());
                    let mut dt = Matrix::zeros((xv.nrows(), 1));
                    for l in 0..xv.ncols() {
                        let col = xv.column(l);
                        let nx = col.dot(&col).sqrt();
                        if nx < COSINE_EPS || nt < COSINE_EPS {
                            continue;
                        }
                        let s = node.value[[0, l]];
                        let gl = g[[0, l]];
                        for r in 0..xv.nrows() {
                            dx[[r, l]] = gl * (tv[r] / (nx * nt) - s * col[r] / (nx * nx));
                            dt[[r, 0]] += gl * (col[r] / (nx * nt) - s * tv[r] / (nt * nt));
                        }
                    }
                    if self.tracked(*t) {
                        send(*t, dt);
                    }
                    send(*x, dx);
                }
                Op::Im2Col3x3 { x, height, width } => {
                    let (ch, n) = self.shape(*x);
                    let mut d = Matrix::zeros((ch, n));
                    for_each_tap(*height, *width, |k, dst, src| {
                        for c in 0..ch {
                            d[[c, src]] += g[[k * ch + c, dst]];
                        }
                    });
                    send(*x, d);
                }
            }
        }
        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| n.param.map(|id| (i, id)))
            .collect();
        Gradients { leaves, params }
    }
}

/// Calls `f(tap, dst_pixel, src_pixel)` for every in-bounds 3×3 neighbour.
fn for_each_tap(height: usize, width: usize, mut f: impl FnMut(usize, usize, usize)) {
    for y in 0..height {
        for x in 0..width {
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let sy = y as i64 + dy;
                    let sx = x as i64 + dx;
                    if sy < 0 || sx < 0 || sy >= height as i64 || sx >= width as i64 {
                        continue;
                    }
                    let k = ((dy + 1) * 3 + (dx + 1)) as usize;
                    f(k, y * width + x, sy as usize * width + sx as usize);
                }
            }
        }
    }
}
