//! Dense reverse-mode autodiff, multilayer perceptrons and Adam.
//!
//! A [`Tape`] records every operation of one forward pass as a node holding
//! its value. [`Tape::backward`] walks the nodes in reverse creation order,
//! so gradient accumulation order is fixed and runs are bit-reproducible.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Negative-side slope of the leaky ReLU.
pub const LEAKY_SLOPE: f64 = 0.01;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"LBLM";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
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

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            rows: 1,
            cols: 1,
            data: vec![v],
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    fn zip(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    fn add_assign(&mut self, other: &Matrix) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// `op(a) * op(b)` where `op` optionally transposes.
    pub fn gemm(a: &Matrix, trans_a: bool, b: &Matrix, trans_b: bool) -> Result<Matrix> {
        let (m, k) = if trans_a {
            (a.cols, a.rows)
        } else {
            (a.rows, a.cols)
        };
        let (k2, n) = if trans_b {
            (b.cols, b.rows)
        } else {
            (b.rows, b.cols)
        };
        if k != k2 {
            return Err(Error::Shape(format!(
                "matmul inner dimensions {k} and {k2} differ"
            )));
        }
        let mut c = Matrix::zeros(m, n);
        if m == 0 || n == 0 || k == 0 {
            return Ok(c);
        }
        let (rsa, csa) = if trans_a {
            (1, a.cols as isize)
        } else {
            (a.cols as isize, 1)
        };
        let (rsb, csb) = if trans_b {
            (1, b.cols as isize)
        } else {
            (b.cols as isize, 1)
        };
        // SAFETY: strides describe the row-major buffers of a and b under the
        // requested transposition, and c is an m x n row-major buffer.
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                1.0,
                a.data.as_ptr(),
                rsa,
                csa,
                b.data.as_ptr(),
                rsb,
                csb,
                0.0,
                c.data.as_mut_ptr(),
                n as isize,
                1,
            );
        }
        Ok(c)
    }
}

/// Handle to a node of a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Recip(Var),
    Square(Var),
    LeakyRelu(Var, f64),
    RowScale(Var, Vec<f64>),
    RowSum(Var),
    Sum(Var),
    Mean(Var),
    SliceRows(Var, usize),
    ConcatRows(Vec<Var>),
}

struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

/// Recording of one forward computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar root with respect to every node that requires them.
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, zeros of the node shape when nothing flowed into it.
    pub fn get_or_zeros(&self, tape: &Tape, v: Var) -> Matrix {
        self.get(v).cloned().unwrap_or_else(|| {
            let (r, c) = tape.value(v).shape();
            Matrix::zeros(r, c)
        })
    }
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

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, m: Matrix) -> Var {
        self.push(m, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, m: Matrix) -> Var {
        self.push(m, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data[0]
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::Shape(format!("{what}: {sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = Matrix::gemm(self.value(a), false, self.value(b), false)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::MatMul(a, b), rg))
    }

    /// Adds the `1 x k` row `b` to every row of `x`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(b));
        if bv.rows != 1 || bv.cols != xv.cols {
            return Err(Error::Shape(format!(
                "bias {:?} for input {:?}",
                bv.shape(),
                xv.shape()
            )));
        }
        let mut v = xv.clone();
        for row in v.data.chunks_exact_mut(bv.cols) {
            for (o, bb) in row.iter_mut().zip(&bv.data) {
                *o += bb;
            }
        }
        let rg = self.rg(x) || self.rg(b);
        Ok(self.push(v, Op::AddBias(x, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let v = self.value(a).zip(self.value(b), |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let v = self.value(a).zip(self.value(b), |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::Sub(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let v = self.value(a).zip(self.value(b), |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| c * x);
        let rg = self.rg(a);
        self.push(v, Op::Scale(a, c), rg)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x + c);
        let rg = self.rg(a);
        self.push(v, Op::AddScalar(a), rg)
    }

    pub fn recip(&mut self, a: Var) -> Result<Var> {
        if self.value(a).data.contains(&0.0) {
            return Err(Error::DivisionByZero("reciprocal of zero entry".into()));
        }
        let v = self.value(a).map(|x| 1.0 / x);
        let rg = self.rg(a);
        Ok(self.push(v, Op::Recip(a), rg))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x * x);
        let rg = self.rg(a);
        self.push(v, Op::Square(a), rg)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let v = self.value(a).map(|x| if x > 0.0 { x } else { slope * x });
        let rg = self.rg(a);
        self.push(v, Op::LeakyRelu(a, slope), rg)
    }

    /// Multiplies row `i` by the constant `factors[i]`.
    pub fn row_scale(&mut self, a: Var, factors: Vec<f64>) -> Result<Var> {
        let av = self.value(a);
        if factors.len() != av.rows {
            return Err(Error::Shape(format!(
                "{} row factors for {} rows",
                factors.len(),
                av.rows
            )));
        }
        let mut v = av.clone();
        for (row, f) in v.data.chunks_exact_mut(av.cols.max(1)).zip(&factors) {
            row.iter_mut().for_each(|x| *x *= f);
        }
        let rg = self.rg(a);
        Ok(self.push(v, Op::RowScale(a, factors), rg))
    }

    /// `n x k -> n x 1` row sums.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let data = (0..av.rows).map(|r| av.row(r).iter().sum()).collect();
        let v = Matrix {
            rows: av.rows,
            cols: 1,
            data,
        };
        let rg = self.rg(a);
        self.push(v, Op::RowSum(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Matrix::scalar(self.value(a).data.iter().sum());
        let rg = self.rg(a);
        self.push(v, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        if av.data.is_empty() {
            return Err(Error::Shape("mean of an empty tensor".into()));
        }
        let v = Matrix::scalar(av.data.iter().sum::<f64>() / av.data.len() as f64);
        let rg = self.rg(a);
        Ok(self.push(v, Op::Mean(a), rg))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let av = self.value(a);
        if start + len > av.rows {
            return Err(Error::Shape(format!(
                "rows {start}..{} of {}",
                start + len,
                av.rows
            )));
        }
        let v = Matrix {
            rows: len,
            cols: av.cols,
            data: av.data[start * av.cols..(start + len) * av.cols].to_vec(),
        };
        let rg = self.rg(a);
        Ok(self.push(v, Op::SliceRows(a, start), rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = parts
            .first()
            .map(|&p| self.value(p).cols)
            .ok_or_else(|| Error::Shape("concat of nothing".into()))?;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let pv = self.value(p);
            if pv.cols != cols {
                return Err(Error::Shape("concat of differing widths".into()));
            }
            data.extend_from_slice(&pv.data);
            rows += pv.rows;
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            Matrix { rows, cols, data },
            Op::ConcatRows(parts.to_vec()),
            rg,
        ))
    }

    /// Reverse sweep from a `1 x 1` root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let rv = self.value(root);
        if rv.shape() != (1, 1) {
            return Err(Error::NonScalarRoot {
                rows: rv.rows,
                cols: rv.cols,
            });
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Matrix::scalar(1.0));
        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let mut send = |v: Var, contrib: Matrix| {
                if !self.nodes[v.0].requires_grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.add_assign(&contrib),
                    slot @ None => *slot = Some(contrib),
                }
            };
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    if self.rg(*a) {
                        send(*a, Matrix::gemm(&g, false, self.value(*b), true)?);
                    }
                    if self.rg(*b) {
                        send(*b, Matrix::gemm(self.value(*a), true, &g, false)?);
                    }
                }
                Op::AddBias(x, b) => {
                    if self.rg(*b) {
                        let mut gb = Matrix::zeros(1, g.cols);
                        for row in g.data.chunks_exact(g.cols) {
                            for (o, v) in gb.data.iter_mut().zip(row) {
                                *o += v;
                            }
                        }
                        send(*b, gb);
                    }
                    send(*x, g.clone());
                }
                Op::Add(a, b) => {
                    send(*a, g.clone());
                    send(*b, g.clone());
                }
                Op::Sub(a, b) => {
                    send(*b, g.map(|v| -v));
                    send(*a, g.clone());
                }
                Op::Mul(a, b) => {
                    send(*a, g.zip(self.value(*b), |u, y| u * y));
                    send(*b, g.zip(self.value(*a), |u, x| u * x));
                }
                Op::Scale(a, c) => send(*a, g.map(|v| c * v)),
                Op::AddScalar(a) => send(*a, g.clone()),
                Op::Recip(a) => send(*a, g.zip(self.value(*a), |u, x| -u / (x * x))),
                Op::Square(a) => send(*a, g.zip(self.value(*a), |u, x| 2.0 * x * u)),
                Op::LeakyRelu(a, s) => send(
                    *a,
                    g.zip(self.value(*a), |u, x| if x > 0.0 { u } else { s * u }),
                ),
                Op::RowScale(a, f) => {
                    let mut out = g.clone();
                    for (row, ff) in out.data.chunks_exact_mut(g.cols.max(1)).zip(f) {
                        row.iter_mut().for_each(|x| *x *= ff);
                    }
                    send(*a, out);
                }
                Op::RowSum(a) => {
                    let cols = self.value(*a).cols;
                    let mut out = Matrix::zeros(g.rows, cols);
                    for (row, gv) in out.data.chunks_exact_mut(cols.max(1)).zip(&g.data) {
                        row.fill(*gv);
                    }
                    send(*a, out);
                }
                Op::Sum(a) => {
                    let (r, c) = self.value(*a).shape();
                    send(*a, Matrix::from_vec(r, c, vec![g.data[0]; r * c])?);
                }
                Op::Mean(a) => {
                    let (r, c) = self.value(*a).shape();
                    let v = g.data[0] / (r * c) as f64;
                    send(*a, Matrix::from_vec(r, c, vec![v; r * c])?);
                }
                Op::SliceRows(a, start) => {
                    let (r, c) = self.value(*a).shape();
                    let mut out = Matrix::zeros(r, c);
                    out.data[start * c..start * c + g.data.len()].copy_from_slice(&g.data);
                    send(*a, out);
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let (r, c) = self.value(*p).shape();
                        let piece = g.data[off..off + r * c].to_vec();
                        off += r * c;
                        send(*p, Matrix::from_vec(r, c, piece)?);
                    }
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

/// Layer widths of a perceptron. Every layer but the last is followed by a
/// leaky ReLU.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "perceptron needs >= 2 positive widths, got {widths:?}"
            )));
        }
        Ok(Self { widths })
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().unwrap()
    }

    /// Same layers in reverse order.
    pub fn mirrored(&self) -> Self {
        Self {
            widths: self.widths.iter().rev().copied().collect(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }
}

/// `y = x W + b` with `W: in x out` and `b: 1 x out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Matrix,
    pub bias: Matrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub layers: Vec<Linear>,
}

/// Standard deviation of Kaiming initialization for leaky ReLU.
pub fn kaiming_std(fan_in: usize) -> f64 {
    (2.0 / (fan_in as f64 * (1.0 + LEAKY_SLOPE * LEAKY_SLOPE))).sqrt()
}

impl Mlp {
    pub fn zeros(spec: MlpSpec) -> Self {
        let layers = spec
            .widths
            .windows(2)
            .map(|w| Linear {
                weight: Matrix::zeros(w[0], w[1]),
                bias: Matrix::zeros(1, w[1]),
            })
            .collect();
        Self { spec, layers }
    }

    /// Kaiming initialization: zero-mean Gaussian weights with
    /// `kaiming_std(fan_in)`, zero biases.
    pub fn kaiming<R: Rng + ?Sized>(spec: MlpSpec, rng: &mut R) -> Self {
        let mut mlp = Self::zeros(spec);
        for layer in &mut mlp.layers {
            let normal = Normal::new(0.0, kaiming_std(layer.weight.rows)).unwrap();
            for w in &mut layer.weight.data {
                *w = normal.sample(rng);
            }
        }
        mlp
    }

    /// Parameters in a fixed order: weight then bias of each layer.
    pub fn params(&self) -> Vec<&Matrix> {
        self.layers
            .iter()
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    /// Puts the parameters on the tape, trainable or frozen.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundMlp {
        let vars = self
            .params()
            .into_iter()
            .map(|p| {
                if trainable {
                    tape.param(p.clone())
                } else {
                    tape.constant(p.clone())
                }
            })
            .collect();
        BoundMlp { vars }
    }

    /// Tape-free forward pass over the rows of `x`.
    pub fn forward_values(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols != self.spec.input_width() {
            return Err(Error::Shape(format!(
                "input width {} for a {}-input perceptron",
                x.cols,
                self.spec.input_width()
            )));
        }
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = Matrix::gemm(&h, false, &l.weight, false)?;
            for row in z.data.chunks_exact_mut(l.bias.cols) {
                for (o, b) in row.iter_mut().zip(&l.bias.data) {
                    *o += b;
                }
            }
            if i != last {
                z.data
                    .iter_mut()
                    .for_each(|v| *v = if *v > 0.0 { *v } else { LEAKY_SLOPE * *v });
            }
            h = z;
        }
        Ok(h)
    }
}

/// Tape handles of a perceptron's parameters.
pub struct BoundMlp {
    pub vars: Vec<Var>,
}

impl BoundMlp {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let mut h = x;
        let n = self.vars.len() / 2;
        for i in 0..n {
            let z = tape.matmul(h, self.vars[2 * i])?;
            let z = tape.add_bias(z, self.vars[2 * i + 1])?;
            h = if i + 1 < n {
                tape.leaky_relu(z, LEAKY_SLOPE)
            } else {
                z
            };
        }
        Ok(h)
    }

    pub fn grads(&self, tape: &Tape, g: &Gradients) -> Vec<Matrix> {
        self.vars.iter().map(|&v| g.get_or_zeros(tape, v)).collect()
    }
}

/// Adam with bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(sizes: &[usize], lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn for_mlp(mlp: &Mlp, lr: f64) -> Self {
        let sizes: Vec<usize> = mlp.params().iter().map(|p| p.data.len()).collect();
        Self::new(&sizes, lr)
    }

    /// One update. A non-finite gradient aborts before any parameter moves.
    pub fn update(&mut self, params: Vec<&mut [f64]>, grads: &[&[f64]]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape(
                "parameter groups differ from optimizer state".into(),
            ));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != self.m[i].len() || g.len() != p.len() {
                return Err(Error::Shape(format!("parameter group {i} changed size")));
            }
            if let Some(pos) = g.iter().position(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "gradient entry {pos} of parameter group {i} is {}",
                    g[pos]
                )));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (i, (p, g)) in params.into_iter().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for k in 0..p.len() {
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g[k];
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g[k] * g[k];
                let mh = m[k] / bc1;
                let vh = v[k] / bc2;
                p[k] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
        Ok(())
    }

    pub fn step_mlp(&mut self, mlp: &mut Mlp, grads: &[Matrix]) -> Result<()> {
        let gs: Vec<&[f64]> = grads.iter().map(|g| g.data.as_slice()).collect();
        let ps: Vec<&mut [f64]> = mlp
            .params_mut()
            .into_iter()
            .map(|p| p.data.as_mut_slice())
            .collect();
        self.update(ps, &gs)
    }
}

/// Encoder, decoder and their optimizer states.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub encoder: Mlp,
    pub decoder: Mlp,
    pub encoder_opt: Adam,
    pub decoder_opt: Adam,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }

    /// `LBLM`, version, both width lists, parameters, then both Adam states.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        for mlp in [&self.encoder, &self.decoder] {
            w.write_all(&(mlp.spec.widths.len() as u32).to_le_bytes())?;
            for &wd in &mlp.spec.widths {
                w.write_all(&(wd as u32).to_le_bytes())?;
            }
        }
        for mlp in [&self.encoder, &self.decoder] {
            for p in mlp.params() {
                write_f64s(w, &p.data)?;
            }
        }
        for opt in [&self.encoder_opt, &self.decoder_opt] {
            for v in [opt.lr, opt.beta1, opt.beta2, opt.eps] {
                w.write_all(&v.to_le_bytes())?;
            }
            w.write_all(&opt.step.to_le_bytes())?;
            for m in opt.m.iter().chain(&opt.v) {
                write_f64s(w, m)?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Format("not an LBLM checkpoint".into()));
        }
        let version = read_u32(r)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let mut specs = Vec::new();
        for _ in 0..2 {
            let n = read_u32(r)? as usize;
            if n > 64 {
                return Err(Error::Format(format!("{n} layers is not plausible")));
            }
            let widths = (0..n)
                .map(|_| read_u32(r).map(|v| v as usize))
                .collect::<Result<Vec<_>>>()?;
            specs.push(MlpSpec::new(widths).map_err(|e| Error::Format(e.to_string()))?);
        }
        let mut mlps = Vec::new();
        for spec in specs {
            let mut mlp = Mlp::zeros(spec);
            for p in mlp.params_mut() {
                read_f64s(r, &mut p.data)?;
            }
            mlps.push(mlp);
        }
        let mut opts = Vec::new();
        for mlp in &mlps {
            let mut head = [0.0; 4];
            read_f64s(r, &mut head)?;
            let mut opt = Adam::for_mlp(mlp, head[0]);
            opt.beta1 = head[1];
            opt.beta2 = head[2];
            opt.eps = head[3];
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            opt.step = u64::from_le_bytes(b);
            for m in opt.m.iter_mut().chain(opt.v.iter_mut()) {
                read_f64s(r, m)?;
            }
            opts.push(opt);
        }
        let decoder_opt = opts.pop().unwrap();
        let encoder_opt = opts.pop().unwrap();
        let decoder = mlps.pop().unwrap();
        let encoder = mlps.pop().unwrap();
        Ok(Self {
            encoder,
            decoder,
            encoder_opt,
            decoder_opt,
        })
    }
}

fn write_f64s<W: Write>(w: &mut W, xs: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(xs.len() * 8);
    for x in xs {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn read_f64s<R: Read>(r: &mut R, out: &mut [f64]) -> Result<()> {
    let mut buf = vec![0u8; out.len() * 8];
    r.read_exact(&mut buf)?;
    for (o, c) in out.iter_mut().zip(buf.chunks_exact(8)) {
        *o = f64::from_le_bytes(c.try_into().unwrap());
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}
