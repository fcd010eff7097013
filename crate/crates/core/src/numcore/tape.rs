//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every operation appends a node holding its forward value and whatever it
//! needs for the vector-Jacobian product. `backward` walks the tape once, from
//! the root down to index 0, so each node is visited at most once. Gradients are
//! only materialised for nodes that (transitively) depend on a leaf created with
//! `requires_grad = true`.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numcore::tensor::Tensor;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Vector-Jacobian product for a user-supplied operation: maps the output
/// adjoint to one adjoint per input.
pub type Vjp = Box<dyn Fn(&[f64]) -> Vec<Vec<f64>>>;

enum Op {
    Leaf,
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    BatchMatMul { a: Var, b: Var, ta: bool, tb: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddRow { x: Var, row: Var },
    MulRow { x: Var, row: Var },
    ScaleGroups { x: Var, g: Var },
    Scale { x: Var, c: f64 },
    AddScalar(Var),
    Sigmoid(Var),
    Silu(Var),
    Gelu(Var),
    Log(Var),
    Clamp { x: Var, lo: f64, hi: f64 },
    Softmax(Var),
    LayerNorm { x: Var, inv_std: Vec<f64> },
    SumAll(Var),
    MeanAll(Var),
    MeanRows(Var),
    Reshape(Var),
    SplitHeads { x: Var, heads: usize },
    MergeHeads(Var),
    ConcatRows(Var, Var),
    ConcatCols(Var, Var),
    SliceRows { x: Var, start: usize },
    SliceCols { x: Var, start: usize },
    Gather { table: Var, ids: Vec<usize> },
    StopGradient,
    Custom { inputs: Vec<Var>, vjp: Vjp },
}

struct Node {
    value: Arc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// The computation tape. Confined to one thread; rebuilt for every forward pass.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
    visited: usize,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<Tensor> {
        self.grads[v.0]
            .as_ref()
            .map(|g| Tensor::from_parts(self.shapes[v.0].clone(), g.clone()))
    }

    pub fn data(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    /// Gradient of `v`, or zeros when nothing flowed into it.
    pub fn get_or_zeros(&self, v: Var) -> Tensor {
        self.get(v)
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }

    /// Number of tape nodes whose backward rule ran.
    pub fn visited(&self) -> usize {
        self.visited
    }
}

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_C: f64 = 0.044_715;

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Clone, Copy)]
struct View<'a> {
    data: &'a [f64],
    rows: usize,
    cols: usize,
    rs: isize,
    cs: isize,
}

impl<'a> View<'a> {
    fn new(data: &'a [f64], rows: usize, cols: usize) -> Self {
        debug_assert!(data.len() >= rows * cols);
        Self {
            data,
            rows,
            cols,
            rs: cols as isize,
            cs: 1,
        }
    }

    /// View of a stored matrix, transposed when `t`.
    fn stored(data: &'a [f64], rows: usize, cols: usize, t: bool) -> Self {
        let v = Self::new(data, rows, cols);
        if t {
            v.t()
        } else {
            v
        }
    }

    fn t(self) -> Self {
        Self {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
        }
    }
}

/// `c = alpha * a * b + beta * c` with `c` row-major `a.rows x b.cols`.
fn gemm(alpha: f64, a: View<'_>, b: View<'_>, beta: f64, c: &mut [f64]) {
    assert_eq!(a.cols, b.rows);
    assert!(c.len() >= a.rows * b.cols);
    let (m, k, n) = (a.rows, a.cols, b.cols);
    // SAFETY: the views index within their slices (checked by construction and the
    // asserts above) and `c` holds at least m*n elements with row stride n.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            a.rs,
            a.cs,
            b.data.as_ptr(),
            b.rs,
            b.cs,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn shape_str(s: &[usize]) -> String {
    format!("{s:?}")
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Arc::new(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Leaf sharing storage with a parameter store.
    pub fn leaf_shared(&mut self, value: Arc<Tensor>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    fn check_finite(&self, v: Var, what: &str) -> Result<()> {
        if self.value(v).all_finite() {
            Ok(())
        } else {
            Err(Error::Numeric(format!("{what}: non-finite input")))
        }
    }

    fn matrix_dims(&self, v: Var, t: bool) -> Result<(usize, usize)> {
        let s = self.shape(v);
        if s.len() != 2 {
            return Err(Error::dim(format!("matmul operand must be 2-D, got {}", shape_str(s))));
        }
        Ok(if t { (s[1], s[0]) } else { (s[0], s[1]) })
    }

    /// `op(a) · op(b)` where `op` transposes when the flag is set.
    pub fn matmul_ex(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let (m, k) = self.matrix_dims(a, ta)?;
        let (k2, n) = self.matrix_dims(b, tb)?;
        if k != k2 {
            return Err(Error::dim(format!(
                "matmul inner dimensions differ: {} vs {}",
                shape_str(self.shape(a)),
                shape_str(self.shape(b))
            )));
        }
        let av = self.value(a);
        let bv = self.value(b);
        let mut out = vec![0.0; m * n];
        gemm(
            1.0,
            View::stored(av.data(), av.shape()[0], av.shape()[1], ta),
            View::stored(bv.data(), bv.shape()[0], bv.shape()[1], tb),
            0.0,
            &mut out,
        );
        let rg = self.rg(&[a, b]);
        Ok(self.push(
            Tensor::from_parts(vec![m, n], out),
            Op::MatMul { a, b, ta, tb },
            rg,
        ))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_ex(a, b, false, false)
    }

    fn batch_dims(&self, v: Var, t: bool) -> Result<(usize, usize, usize)> {
        let s = self.shape(v);
        if s.len() != 3 {
            return Err(Error::dim(format!(
                "batched matmul operand must be 3-D, got {}",
                shape_str(s)
            )));
        }
        Ok(if t { (s[0], s[2], s[1]) } else { (s[0], s[1], s[2]) })
    }

    /// Batched `op(a[i]) · op(b[i])` over the leading axis.
    pub fn batch_matmul(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let (ba, m, k) = self.batch_dims(a, ta)?;
        let (bb, k2, n) = self.batch_dims(b, tb)?;
        if ba != bb || k != k2 {
            return Err(Error::dim(format!(
                "batched matmul shapes incompatible: {} vs {}",
                shape_str(self.shape(a)),
                shape_str(self.shape(b))
            )));
        }
        let av = self.value(a);
        let bv = self.value(b);
        let (sa, sb) = (m * k, k * n);
        let (ar, ac) = (av.shape()[1], av.shape()[2]);
        let (br, bc) = (bv.shape()[1], bv.shape()[2]);
        let mut out = vec![0.0; ba * m * n];
        for i in 0..ba {
            gemm(
                1.0,
                View::stored(&av.data()[i * sa..(i + 1) * sa], ar, ac, ta),
                View::stored(&bv.data()[i * sb..(i + 1) * sb], br, bc, tb),
                0.0,
                &mut out[i * m * n..(i + 1) * m * n],
            );
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(
            Tensor::from_parts(vec![ba, m, n], out),
            Op::BatchMatMul { a, b, ta, tb },
            rg,
        ))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(format!(
                "{what}: shapes differ: {} vs {}",
                shape_str(self.shape(a)),
                shape_str(self.shape(b))
            )));
        }
        Ok(())
    }

    fn zip(&mut self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        self.same_shape(a, b, what)?;
        let av = self.value(a);
        let bv = self.value(b);
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor::from_parts(av.shape().to_vec(), data);
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "div", |x, y| x / y, Op::Div(a, b))
    }

    fn row_len_check(&self, x: Var, row: Var, what: &str) -> Result<usize> {
        let xs = self.shape(x);
        let rs = self.shape(row);
        let n = *xs.last().unwrap();
        if rs.len() != 1 || rs[0] != n {
            return Err(Error::dim(format!(
                "{what}: row {} does not match last axis of {}",
                shape_str(rs),
                shape_str(xs)
            )));
        }
        Ok(n)
    }

    /// `x + row`, broadcasting `row` over every leading index.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let n = self.row_len_check(x, row, "add_row")?;
        let xv = self.value(x);
        let rv = self.value(row).data();
        let data = xv
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + rv[i % n])
            .collect();
        let t = Tensor::from_parts(xv.shape().to_vec(), data);
        let rg = self.rg(&[x, row]);
        Ok(self.push(t, Op::AddRow { x, row }, rg))
    }

    /// `x ⊙ row`, broadcasting `row` over every leading index.
    pub fn mul_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let n = self.row_len_check(x, row, "mul_row")?;
        let xv = self.value(x);
        let rv = self.value(row).data();
        let data = xv
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v * rv[i % n])
            .collect();
        let t = Tensor::from_parts(xv.shape().to_vec(), data);
        let rg = self.rg(&[x, row]);
        Ok(self.push(t, Op::MulRow { x, row }, rg))
    }

    /// Scales slice `x[i, ...]` by `g[i]`.
    pub fn scale_groups(&mut self, x: Var, g: Var) -> Result<Var> {
        let xs = self.shape(x);
        let gs = self.shape(g);
        if gs.len() != 1 || gs[0] != xs[0] {
            return Err(Error::dim(format!(
                "scale_groups: gate {} does not match leading axis of {}",
                shape_str(gs),
                shape_str(xs)
            )));
        }
        let xv = self.value(x);
        let gv = self.value(g).data();
        let per = xv.len() / xs[0];
        let data = xv
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v * gv[i / per])
            .collect();
        let t = Tensor::from_parts(xv.shape().to_vec(), data);
        let rg = self.rg(&[x, g]);
        Ok(self.push(t, Op::ScaleGroups { x, g }, rg))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = self.value(x).map(f);
        let rg = self.rg(&[x]);
        self.push(t, op, rg)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| v * c, Op::Scale { x, c })
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| v + c, Op::AddScalar(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.check_finite(x, "sigmoid")?;
        Ok(self.unary(x, sigmoid, Op::Sigmoid(x)))
    }

    pub fn silu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * sigmoid(v), Op::Silu(x))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        self.unary(
            x,
            |v| 0.5 * v * (1.0 + (SQRT_2_OVER_PI * (v + GELU_C * v * v * v)).tanh()),
            Op::Gelu(x),
        )
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, f64::ln, Op::Log(x))
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        self.unary(x, |v| v.clamp(lo, hi), Op::Clamp { x, lo, hi })
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        self.check_finite(x, "softmax")?;
        let xv = self.value(x);
        let n = xv.cols();
        let mut data = xv.data().to_vec();
        for row in data.chunks_mut(n) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            let inv = 1.0 / sum;
            for v in row.iter_mut() {
                *v *= inv;
            }
        }
        let t = Tensor::from_parts(xv.shape().to_vec(), data);
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::Softmax(x), rg))
    }

    /// Normalises the last axis to zero mean and unit variance (no affine part).
    pub fn layer_norm(&mut self, x: Var, eps: f64) -> Result<Var> {
        self.check_finite(x, "layer_norm")?;
        let xv = self.value(x);
        let n = xv.cols();
        let mut data = xv.data().to_vec();
        let mut inv_std = Vec::with_capacity(data.len() / n);
        for row in data.chunks_mut(n) {
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let s = 1.0 / (var + eps).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * s;
            }
            inv_std.push(s);
        }
        let t = Tensor::from_parts(xv.shape().to_vec(), data);
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::LayerNorm { x, inv_std }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::SumAll(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let s = xv.data().iter().sum::<f64>() / xv.len() as f64;
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::MeanAll(x), rg)
    }

    /// Mean over the leading axis of a 2-D tensor: `[m, n] -> [n]`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() != 2 {
            return Err(Error::dim(format!("mean_rows of {}", shape_str(xv.shape()))));
        }
        let (m, n) = (xv.shape()[0], xv.shape()[1]);
        let mut out = vec![0.0; n];
        for row in xv.data().chunks(n) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        let inv = 1.0 / m as f64;
        out.iter_mut().for_each(|v| *v *= inv);
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::from_parts(vec![n], out), Op::MeanRows(x), rg))
    }

    /// Mean squared error between same-shaped tensors.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_finite(a, "mse")?;
        self.check_finite(b, "mse")?;
        let d = self.sub(a, b)?;
        let sq = self.mul(d, d)?;
        Ok(self.mean(sq))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).reshape(shape)?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::Reshape(x), rg))
    }

    /// `[n, h*d] -> [h, n, d]`.
    pub fn split_heads(&mut self, x: Var, heads: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 2 || heads == 0 || !xs[1].is_multiple_of(heads) {
            return Err(Error::dim(format!(
                "split_heads: {} not divisible into {heads} heads",
                shape_str(&xs)
            )));
        }
        let (n, d) = (xs[0], xs[1] / heads);
        let src = self.value(x).data();
        let mut out = vec![0.0; src.len()];
        for t in 0..n {
            for h in 0..heads {
                let s = t * heads * d + h * d;
                let o = h * n * d + t * d;
                out[o..o + d].copy_from_slice(&src[s..s + d]);
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(
            Tensor::from_parts(vec![heads, n, d], out),
            Op::SplitHeads { x, heads },
            rg,
        ))
    }

    /// `[h, n, d] -> [n, h*d]`.
    pub fn merge_heads(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 3 {
            return Err(Error::dim(format!("merge_heads of {}", shape_str(&xs))));
        }
        let (heads, n, d) = (xs[0], xs[1], xs[2]);
        let src = self.value(x).data();
        let mut out = vec![0.0; src.len()];
        for h in 0..heads {
            for t in 0..n {
                let s = h * n * d + t * d;
                let o = t * heads * d + h * d;
                out[o..o + d].copy_from_slice(&src[s..s + d]);
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(
            Tensor::from_parts(vec![n, heads * d], out),
            Op::MergeHeads(x),
            rg,
        ))
    }

    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
            return Err(Error::dim(format!(
                "concat_rows: {} vs {}",
                shape_str(sa),
                shape_str(sb)
            )));
        }
        let rows = sa[0] + sb[0];
        let cols = sa[1];
        let mut data = self.value(a).data().to_vec();
        data.extend_from_slice(self.value(b).data());
        let rg = self.rg(&[a, b]);
        Ok(self.push(
            Tensor::from_parts(vec![rows, cols], data),
            Op::ConcatRows(a, b),
            rg,
        ))
    }

    /// Concatenates along the last axis; both operands must agree on leading axes.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != sb.len() || sa.len() > 2 || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
            return Err(Error::dim(format!(
                "concat_cols: {} vs {}",
                shape_str(&sa),
                shape_str(&sb)
            )));
        }
        let (ca, cb) = (*sa.last().unwrap(), *sb.last().unwrap());
        let rows = self.value(a).len() / ca;
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let mut data = Vec::with_capacity(ad.len() + bd.len());
        for r in 0..rows {
            data.extend_from_slice(&ad[r * ca..(r + 1) * ca]);
            data.extend_from_slice(&bd[r * cb..(r + 1) * cb]);
        }
        let mut shape = sa.clone();
        *shape.last_mut().unwrap() = ca + cb;
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::from_parts(shape, data), Op::ConcatCols(a, b), rg))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 || len == 0 || start + len > s[0] {
            return Err(Error::dim(format!(
                "slice_rows [{start}, {}) of {}",
                start + len,
                shape_str(&s)
            )));
        }
        let c = s[1];
        let data = self.value(x).data()[start * c..(start + len) * c].to_vec();
        let rg = self.rg(&[x]);
        Ok(self.push(
            Tensor::from_parts(vec![len, c], data),
            Op::SliceRows { x, start },
            rg,
        ))
    }

    /// Slices the last axis of a rank-1 or rank-2 tensor.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let c = *s.last().unwrap();
        if s.len() > 2 || len == 0 || start + len > c {
            return Err(Error::dim(format!(
                "slice_cols [{start}, {}) of {}",
                start + len,
                shape_str(&s)
            )));
        }
        let rows = self.value(x).len() / c;
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&src[r * c + start..r * c + start + len]);
        }
        let mut shape = s.clone();
        *shape.last_mut().unwrap() = len;
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::from_parts(shape, data), Op::SliceCols { x, start }, rg))
    }

    /// Row lookup: `table[ids[i], :]` stacked into `[ids.len(), cols]`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let s = self.shape(table).to_vec();
        if s.len() != 2 || ids.is_empty() {
            return Err(Error::dim(format!("gather_rows from {}", shape_str(&s))));
        }
        if let Some(bad) = ids.iter().find(|&&i| i >= s[0]) {
            return Err(Error::dim(format!("gather_rows index {bad} out of {} rows", s[0])));
        }
        let c = s[1];
        let src = self.value(table).data();
        let mut data = Vec::with_capacity(ids.len() * c);
        for &i in ids {
            data.extend_from_slice(&src[i * c..(i + 1) * c]);
        }
        let rg = self.rg(&[table]);
        Ok(self.push(
            Tensor::from_parts(vec![ids.len(), c], data),
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    /// Value-identical copy that passes no adjoint back to `x`.
    pub fn stop_gradient(&mut self, x: Var) -> Var {
        let v = Arc::clone(&self.nodes[x.0].value);
        self.nodes.push(Node {
            value: v,
            op: Op::StopGradient,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records an operation with a caller-supplied value and backward rule.
    pub fn custom(&mut self, inputs: &[Var], value: Tensor, vjp: Vjp) -> Var {
        let rg = self.rg(inputs);
        self.push(
            value,
            Op::Custom {
                inputs: inputs.to_vec(),
                vjp,
            },
            rg,
        )
    }

    /// Backpropagates from a single-element root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.value(root).len() != 1 {
            return Err(Error::dim(format!(
                "backward root must be a scalar, got {}",
                shape_str(self.shape(root))
            )));
        }
        self.backward_with_seed(root, vec![1.0])
    }

    pub fn backward_with_seed(&self, root: Var, seed: Vec<f64>) -> Result<Gradients> {
        if seed.len() != self.value(root).len() {
            return Err(Error::dim("backward seed length differs from root".to_string()));
        }
        let n = root.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        let mut visited = 0;
        if self.nodes[root.0].requires_grad {
            grads[root.0] = Some(seed);
        }
        for i in (0..n).rev() {
            let Some(gy) = grads[i].take() else { continue };
            if self.nodes[i].requires_grad {
                visited += 1;
                self.backprop_node(i, &gy, &mut grads);
            }
            grads[i] = Some(gy);
        }
        let shapes = self.nodes[..n].iter().map(|nd| nd.value.shape().to_vec()).collect();
        Ok(Gradients {
            grads,
            shapes,
            visited,
        })
    }

    fn buf<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut Vec<f64>> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let len = self.nodes[v.0].value.len();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; len]))
    }

    fn acc_map(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl Fn(usize) -> f64) {
        if let Some(g) = self.buf(grads, v) {
            for (i, gi) in g.iter_mut().enumerate() {
                *gi += f(i);
            }
        }
    }

    fn backprop_node(&self, i: usize, gy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let y = self.nodes[i].value.data();
        match &self.nodes[i].op {
            Op::Leaf | Op::StopGradient => {}
            Op::MatMul { a, b, ta, tb } => {
                let (a, b, ta, tb) = (*a, *b, *ta, *tb);
                let av = self.value(a);
                let bv = self.value(b);
                let (m, _) = self.matrix_dims(a, ta).unwrap();
                let (_, n) = self.matrix_dims(b, tb).unwrap();
                let dy = View::new(gy, m, n);
                let opa = View::stored(av.data(), av.shape()[0], av.shape()[1], ta);
                let opb = View::stored(bv.data(), bv.shape()[0], bv.shape()[1], tb);
                if let Some(ga) = self.buf(grads, a) {
                    if ta {
                        gemm(1.0, opb, dy.t(), 1.0, ga);
                    } else {
                        gemm(1.0, dy, opb.t(), 1.0, ga);
                    }
                }
                if let Some(gb) = self.buf(grads, b) {
                    if tb {
                        gemm(1.0, dy.t(), opa, 1.0, gb);
                    } else {
                        gemm(1.0, opa.t(), dy, 1.0, gb);
                    }
                }
            }
            Op::BatchMatMul { a, b, ta, tb } => {
                let (a, b, ta, tb) = (*a, *b, *ta, *tb);
                let av = self.value(a);
                let bv = self.value(b);
                let (batch, m, k) = self.batch_dims(a, ta).unwrap();
                let (_, _, n) = self.batch_dims(b, tb).unwrap();
                let (ar, ac) = (av.shape()[1], av.shape()[2]);
                let (br, bc) = (bv.shape()[1], bv.shape()[2]);
                let (sa, sb, sy) = (m * k, k * n, m * n);
                for bi in 0..batch {
                    let dy = View::new(&gy[bi * sy..(bi + 1) * sy], m, n);
                    let opa = View::stored(&av.data()[bi * sa..(bi + 1) * sa], ar, ac, ta);
                    let opb = View::stored(&bv.data()[bi * sb..(bi + 1) * sb], br, bc, tb);
                    if let Some(ga) = self.buf(grads, a) {
                        let ga = &mut ga[bi * sa..(bi + 1) * sa];
                        if ta {
                            gemm(1.0, opb, dy.t(), 1.0, ga);
                        } else {
                            gemm(1.0, dy, opb.t(), 1.0, ga);
                        }
                    }
                    if let Some(gb) = self.buf(grads, b) {
                        let gb = &mut gb[bi * sb..(bi + 1) * sb];
                        if tb {
                            gemm(1.0, dy.t(), opa, 1.0, gb);
                        } else {
                            gemm(1.0, opa.t(), dy, 1.0, gb);
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                self.acc_map(grads, *a, |j| gy[j]);
                self.acc_map(grads, *b, |j| gy[j]);
            }
            Op::Sub(a, b) => {
                self.acc_map(grads, *a, |j| gy[j]);
                self.acc_map(grads, *b, |j| -gy[j]);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                self.acc_map(grads, *a, |j| gy[j] * bv[j]);
                self.acc_map(grads, *b, |j| gy[j] * av[j]);
            }
            Op::Div(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                self.acc_map(grads, *a, |j| gy[j] / bv[j]);
                self.acc_map(grads, *b, |j| -gy[j] * av[j] / (bv[j] * bv[j]));
            }
            Op::AddRow { x, row } => {
                self.acc_map(grads, *x, |j| gy[j]);
                if let Some(g) = self.buf(grads, *row) {
                    let n = g.len();
                    for (j, v) in gy.iter().enumerate() {
                        g[j % n] += v;
                    }
                }
            }
            Op::MulRow { x, row } => {
                let rv = self.value(*row).data();
                let n = rv.len();
                self.acc_map(grads, *x, |j| gy[j] * rv[j % n]);
                let xv = self.value(*x).data();
                if let Some(g) = self.buf(grads, *row) {
                    for (j, v) in gy.iter().enumerate() {
                        g[j % n] += v * xv[j];
                    }
                }
            }
            Op::ScaleGroups { x, g } => {
                let gv = self.value(*g).data();
                let per = gy.len() / gv.len();
                self.acc_map(grads, *x, |j| gy[j] * gv[j / per]);
                let xv = self.value(*x).data();
                if let Some(gg) = self.buf(grads, *g) {
                    for (j, v) in gy.iter().enumerate() {
                        gg[j / per] += v * xv[j];
                    }
                }
            }
            Op::Scale { x, c } => {
                let c = *c;
                self.acc_map(grads, *x, |j| gy[j] * c);
            }
            Op::AddScalar(x) | Op::Reshape(x) => self.acc_map(grads, *x, |j| gy[j]),
            Op::Sigmoid(x) => self.acc_map(grads, *x, |j| gy[j] * y[j] * (1.0 - y[j])),
            Op::Silu(x) => {
                let xv = self.value(*x).data();
                self.acc_map(grads, *x, |j| {
                    let s = sigmoid(xv[j]);
                    gy[j] * (s + xv[j] * s * (1.0 - s))
                });
            }
            Op::Gelu(x) => {
                let xv = self.value(*x).data();
                self.acc_map(grads, *x, |j| {
                    let v = xv[j];
                    let u = SQRT_2_OVER_PI * (v + GELU_C * v * v * v);
                    let th = u.tanh();
                    let du = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_C * v * v);
                    gy[j] * (0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * du)
                });
            }
            Op::Log(x) => {
                let xv = self.value(*x).data();
                self.acc_map(grads, *x, |j| gy[j] / xv[j]);
            }
            Op::Clamp { x, lo, hi } => {
                let xv = self.value(*x).data();
                let (lo, hi) = (*lo, *hi);
                self.acc_map(grads, *x, |j| {
                    if xv[j] >= lo && xv[j] <= hi {
                        gy[j]
                    } else {
                        0.0
                    }
                });
            }
            Op::Softmax(x) => {
                if let Some(g) = self.buf(grads, *x) {
                    let n = self.nodes[i].value.cols();
                    for ((gr, yr), dyr) in g.chunks_mut(n).zip(y.chunks(n)).zip(gy.chunks(n)) {
                        let dot: f64 = yr.iter().zip(dyr).map(|(a, b)| a * b).sum();
                        for k in 0..n {
                            gr[k] += yr[k] * (dyr[k] - dot);
                        }
                    }
                }
            }
            Op::LayerNorm { x, inv_std } => {
                if let Some(g) = self.buf(grads, *x) {
                    let n = self.nodes[i].value.cols();
                    let nf = n as f64;
                    for (r, ((gr, yr), dyr)) in
                        g.chunks_mut(n).zip(y.chunks(n)).zip(gy.chunks(n)).enumerate()
                    {
                        let mean_dy = dyr.iter().sum::<f64>() / nf;
                        let mean_dyy = dyr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / nf;
                        let s = inv_std[r];
                        for k in 0..n {
                            gr[k] += s * (dyr[k] - mean_dy - yr[k] * mean_dyy);
                        }
                    }
                }
            }
            Op::SumAll(x) => self.acc_map(grads, *x, |_| gy[0]),
            Op::MeanAll(x) => {
                let inv = 1.0 / self.value(*x).len() as f64;
                self.acc_map(grads, *x, |_| gy[0] * inv);
            }
            Op::MeanRows(x) => {
                let n = gy.len();
                let inv = 1.0 / (self.value(*x).len() / n) as f64;
                self.acc_map(grads, *x, |j| gy[j % n] * inv);
            }
            Op::SplitHeads { x, heads } => {
                if let Some(g) = self.buf(grads, *x) {
                    let s = self.nodes[i].value.shape();
                    let (n, d) = (s[1], s[2]);
                    for t in 0..n {
                        for h in 0..*heads {
                            let src = h * n * d + t * d;
                            let dst = t * heads * d + h * d;
                            for k in 0..d {
                                g[dst + k] += gy[src + k];
                            }
                        }
                    }
                }
            }
            Op::MergeHeads(x) => {
                if let Some(g) = self.buf(grads, *x) {
                    let s = self.value(*x).shape();
                    let (heads, n, d) = (s[0], s[1], s[2]);
                    for h in 0..heads {
                        for t in 0..n {
                            let dst = h * n * d + t * d;
                            let src = t * heads * d + h * d;
                            for k in 0..d {
                                g[dst + k] += gy[src + k];
                            }
                        }
                    }
                }
            }
            Op::ConcatRows(a, b) => {
                let la = self.value(*a).len();
                self.acc_map(grads, *a, |j| gy[j]);
                self.acc_map(grads, *b, |j| gy[la + j]);
            }
            Op::ConcatCols(a, b) => {
                let ca = self.value(*a).cols();
                let cb = self.value(*b).cols();
                let c = ca + cb;
                self.acc_map(grads, *a, |j| gy[(j / ca) * c + j % ca]);
                self.acc_map(grads, *b, |j| gy[(j / cb) * c + ca + j % cb]);
            }
            Op::SliceRows { x, start } => {
                let off = start * self.value(*x).cols();
                if let Some(g) = self.buf(grads, *x) {
                    for (k, v) in gy.iter().enumerate() {
                        g[off + k] += v;
                    }
                }
            }
            Op::SliceCols { x, start } => {
                let c = self.value(*x).cols();
                let len = self.nodes[i].value.cols();
                if let Some(g) = self.buf(grads, *x) {
                    for (k, v) in gy.iter().enumerate() {
                        g[(k / len) * c + start + k % len] += v;
                    }
                }
            }
            Op::Gather { table, ids } => {
                let c = self.value(*table).cols();
                if let Some(g) = self.buf(grads, *table) {
                    for (r, &id) in ids.iter().enumerate() {
                        for k in 0..c {
                            g[id * c + k] += gy[r * c + k];
                        }
                    }
                }
            }
            Op::Custom { inputs, vjp } => {
                let adj = vjp(gy);
                for (v, a) in inputs.iter().zip(adj) {
                    self.acc_map(grads, *v, |j| a[j]);
                }
            }
        }
    }
}
