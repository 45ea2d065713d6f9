//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every executed operation in order. Each node owns its
//! forward value; [`Graph::backward`] sweeps the tape once in reverse and
//! accumulates gradients into leaves that were created with
//! `requires_grad = true`.

use super::kernels::{gemm, gemm_nt, gemm_tn, softmax_rows};
use super::{Rng64, Tensor, TensorError};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
    },
    BatchMatMul {
        a: Var,
        b: Var,
        trans_b: bool,
    },
    Transpose {
        x: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    AddBias {
        x: Var,
        bias: Var,
    },
    AddTiled {
        x: Var,
        tile: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        factor: f64,
    },
    Sigmoid {
        x: Var,
    },
    SoftmaxRows {
        x: Var,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
    Unfold {
        x: Var,
        patch: usize,
        block: usize,
        bands: usize,
    },
    DiffCols {
        x: Var,
    },
    SplitHeads {
        x: Var,
        batch: usize,
        heads: usize,
    },
    MergeHeads {
        x: Var,
        batch: usize,
        heads: usize,
    },
    AppendToken {
        x: Var,
        token: Var,
        batch: usize,
    },
    LastRows {
        x: Var,
        batch: usize,
    },
    ConcatRows {
        parts: Vec<Var>,
    },
    SliceRows {
        x: Var,
        start: usize,
    },
    Reshape {
        x: Var,
    },
    Sum {
        x: Var,
    },
    Mean {
        x: Var,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul { .. } => "matmul",
            Op::BatchMatMul { .. } => "batch_matmul",
            Op::Transpose { .. } => "transpose",
            Op::Add { .. } => "add",
            Op::AddBias { .. } => "add_bias",
            Op::AddTiled { .. } => "add_tiled",
            Op::Mul { .. } => "mul",
            Op::Scale { .. } => "scale",
            Op::Sigmoid { .. } => "sigmoid",
            Op::SoftmaxRows { .. } => "softmax_rows",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Dropout { .. } => "dropout",
            Op::Unfold { .. } => "unfold_patches_3d",
            Op::DiffCols { .. } => "diff_cols",
            Op::SplitHeads { .. } => "split_heads",
            Op::MergeHeads { .. } => "merge_heads",
            Op::AppendToken { .. } => "append_token",
            Op::LastRows { .. } => "last_rows",
            Op::ConcatRows { .. } => "concat_rows",
            Op::SliceRows { .. } => "slice_rows",
            Op::Reshape { .. } => "reshape",
            Op::Sum { .. } => "sum",
            Op::Mean { .. } => "mean",
            Op::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Tensor>,
}

/// Names of every differentiable operation, in the order the self-test visits them.
pub const DIFFERENTIABLE_OPS: &[&str] = &[
    "matmul",
    "batch_matmul",
    "transpose",
    "add",
    "add_bias",
    "add_tiled",
    "mul",
    "scale",
    "sigmoid",
    "softmax_rows",
    "layer_norm",
    "dropout",
    "unfold_patches_3d",
    "diff_cols",
    "split_heads",
    "merge_heads",
    "append_token",
    "last_rows",
    "concat_rows",
    "slice_rows",
    "reshape",
    "sum",
    "mean",
    "softmax_cross_entropy",
];

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    check_finite: bool,
    fault: Option<String>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// When enabled every op output is scanned for NaN/Inf.
    pub fn set_check_finite(&mut self, on: bool) {
        self.check_finite = on;
    }

    /// Corrupts the backward rule of the named op (gradients scaled by 1.5).
    /// Only used to prove that the gradient self-test catches broken rules.
    #[doc(hidden)]
    pub fn inject_backward_fault(&mut self, op: &str) {
        self.fault = Some(op.to_string());
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
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

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var, TensorError> {
        if self.check_finite && !value.is_finite() {
            return Err(TensorError::NonFinite { op: op.name() });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn shape_err(&self, op: &'static str, a: Var, b: Var) -> TensorError {
        TensorError::Shape {
            op,
            left: self.shape(a).to_vec(),
            right: self.shape(b).to_vec(),
        }
    }

    fn dims2(&self, op: &'static str, v: Var) -> Result<(usize, usize), TensorError> {
        match *self.shape(v) {
            [r, c] => Ok((r, c)),
            ref s => Err(TensorError::Rank {
                op,
                expected: 2,
                shape: s.to_vec(),
            }),
        }
    }

    fn dims3(&self, op: &'static str, v: Var) -> Result<(usize, usize, usize), TensorError> {
        match *self.shape(v) {
            [g, r, c] => Ok((g, r, c)),
            ref s => Err(TensorError::Rank {
                op,
                expected: 3,
                shape: s.to_vec(),
            }),
        }
    }

    // ---------------------------------------------------------------------
    // forward operations
    // ---------------------------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (m, k) = self.dims2("matmul", a)?;
        let (k2, n) = self.dims2("matmul", b)?;
        if k != k2 {
            return Err(self.shape_err("matmul", a, b));
        }
        let mut out = vec![0.0; m * n];
        gemm(self.value(a).data(), self.value(b).data(), m, k, n, &mut out);
        self.push(Tensor::new(&[m, n], out)?, Op::MatMul { a, b }, &[a, b])
    }

    /// Batched product over the leading axis: `[g,m,k]·[g,k,n]`, or
    /// `[g,m,k]·[g,n,k]ᵀ` when `trans_b` is set.
    pub fn batch_matmul(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var, TensorError> {
        let (g, m, k) = self.dims3("batch_matmul", a)?;
        let (g2, b1, b2) = self.dims3("batch_matmul", b)?;
        let (kb, n) = if trans_b { (b2, b1) } else { (b1, b2) };
        if g != g2 || k != kb {
            return Err(self.shape_err("batch_matmul", a, b));
        }
        let mut out = vec![0.0; g * m * n];
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        for i in 0..g {
            let ai = &ad[i * m * k..(i + 1) * m * k];
            let bi = &bd[i * k * n..(i + 1) * k * n];
            let oi = &mut out[i * m * n..(i + 1) * m * n];
            if trans_b {
                gemm_nt(ai, bi, m, k, n, oi);
            } else {
                gemm(ai, bi, m, k, n, oi);
            }
        }
        self.push(
            Tensor::new(&[g, m, n], out)?,
            Op::BatchMatMul { a, b, trans_b },
            &[a, b],
        )
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var, TensorError> {
        let (r, c) = self.dims2("transpose", x)?;
        let src = self.value(x).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        self.push(Tensor::new(&[c, r], out)?, Op::Transpose { x }, &[x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        if self.shape(a) != self.shape(b) {
            return Err(self.shape_err("add", a, b));
        }
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x + y);
        let t = Tensor::new(self.shape(a), data)?;
        self.push(t, Op::Add { a, b }, &[a, b])
    }

    /// `x[..., n] + bias[n]`, broadcast over all leading axes.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var, TensorError> {
        let n = self.value(x).last_dim();
        if self.shape(bias) != [n] {
            return Err(self.shape_err("add_bias", x, bias));
        }
        let b = self.value(bias).data();
        let mut data = self.value(x).data().to_vec();
        for row in data.chunks_exact_mut(n) {
            row.iter_mut().zip(b).for_each(|(v, &bv)| *v += bv);
        }
        let t = Tensor::new(self.shape(x), data)?;
        self.push(t, Op::AddBias { x, bias }, &[x, bias])
    }

    /// `x[r, n] + tile[t, n]` where row `i` of `x` receives row `i mod t`.
    pub fn add_tiled(&mut self, x: Var, tile: Var) -> Result<Var, TensorError> {
        let (r, n) = self.dims2("add_tiled", x)?;
        let (t, n2) = self.dims2("add_tiled", tile)?;
        if n != n2 || t == 0 || r % t != 0 {
            return Err(self.shape_err("add_tiled", x, tile));
        }
        let tv = self.value(tile).data();
        let mut data = self.value(x).data().to_vec();
        for (i, row) in data.chunks_exact_mut(n).enumerate() {
            let off = (i % t) * n;
            row.iter_mut().zip(&tv[off..off + n]).for_each(|(v, &p)| *v += p);
        }
        self.push(Tensor::new(&[r, n], data)?, Op::AddTiled { x, tile }, &[x, tile])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        if self.shape(a) != self.shape(b) {
            return Err(self.shape_err("mul", a, b));
        }
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x * y);
        let t = Tensor::new(self.shape(a), data)?;
        self.push(t, Op::Mul { a, b }, &[a, b])
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var, TensorError> {
        let data = self.value(x).data().iter().map(|v| v * factor).collect();
        let t = Tensor::new(self.shape(x), data)?;
        self.push(t, Op::Scale { x, factor }, &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var, TensorError> {
        let data = self.value(x).data().iter().map(|&v| sigmoid(v)).collect();
        let t = Tensor::new(self.shape(x), data)?;
        self.push(t, Op::Sigmoid { x }, &[x])
    }

    /// Softmax over the last axis.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var, TensorError> {
        let src = self.value(x);
        if !src.is_finite() {
            return Err(TensorError::NonFinite { op: "softmax_rows" });
        }
        let n = src.last_dim();
        let mut out = vec![0.0; src.len()];
        if n > 0 {
            softmax_rows(src.data(), n, &mut out);
        }
        let t = Tensor::new(src.shape(), out)?;
        self.push(t, Op::SoftmaxRows { x }, &[x])
    }

    /// Normalizes the last axis to zero mean and unit variance (population
    /// variance plus `eps`) then applies `gamma`/`beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var, TensorError> {
        let d = self.value(x).last_dim();
        if d == 0 {
            return Err(TensorError::Config("layer_norm needs a non-empty last axis".into()));
        }
        if self.shape(gamma) != [d] {
            return Err(self.shape_err("layer_norm", x, gamma));
        }
        if self.shape(beta) != [d] {
            return Err(self.shape_err("layer_norm", x, beta));
        }
        let src = self.value(x).data();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let rows = src.len() / d;
        let mut xhat = vec![0.0; src.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; src.len()];
        for r in 0..rows {
            let row = &src[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std[r] = inv;
            for j in 0..d {
                let h = (row[j] - mean) * inv;
                xhat[r * d + j] = h;
                out[r * d + j] = g[j] * h + b[j];
            }
        }
        let t = Tensor::new(self.shape(x), out)?;
        self.push(
            t,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            &[x, gamma, beta],
        )
    }

    /// Inverted dropout. With `rng = None` (eval mode) or `rate == 0` the
    /// input handle is returned untouched.
    pub fn dropout(&mut self, x: Var, rate: f64, rng: Option<&mut Rng64>) -> Result<Var, TensorError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(TensorError::Config(format!("dropout rate {rate} outside [0, 1)")));
        }
        let Some(rng) = rng else { return Ok(x) };
        if rate == 0.0 {
            return Ok(x);
        }
        let keep_scale = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..self.value(x).len())
            .map(|_| if rng.uniform() < rate { 0.0 } else { keep_scale })
            .collect();
        let data = zip_map(self.value(x).data(), &mask, |v, m| v * m);
        let t = Tensor::new(self.shape(x), data)?;
        self.push(t, Op::Dropout { x, mask }, &[x])
    }

    /// Splits each `P×P×B` patch into non-overlapping `p×p` spatial blocks.
    ///
    /// Accepts `[P, P, B]` or a batch `[n, P, P, B]`; returns
    /// `[n·(P/p)², p·p·B]`. Blocks are enumerated in row-major block order and
    /// each row is flattened in (row, col, band) order.
    pub fn unfold_patches_3d(&mut self, x: Var, block: usize) -> Result<Var, TensorError> {
        let (n, patch, patch2, bands) = match *self.shape(x) {
            [p1, p2, b] => (1, p1, p2, b),
            [n, p1, p2, b] => (n, p1, p2, b),
            ref s => {
                return Err(TensorError::Rank {
                    op: "unfold_patches_3d",
                    expected: 4,
                    shape: s.to_vec(),
                })
            }
        };
        if patch != patch2 {
            return Err(TensorError::Config(format!(
                "unfold_patches_3d needs square patches, got {patch}x{patch2}"
            )));
        }
        if block == 0 || patch % block != 0 {
            return Err(TensorError::Config(format!(
                "patch size {patch} is not divisible by token block {block}"
            )));
        }
        let src = self.value(x).data();
        let per = patch / block;
        let row_len = block * block * bands;
        let mut out = Vec::with_capacity(src.len());
        for s in 0..n {
            let base = s * patch * patch * bands;
            for bi in 0..per {
                for bj in 0..per {
                    for r in 0..block {
                        let row = bi * block + r;
                        let start = base + (row * patch + bj * block) * bands;
                        out.extend_from_slice(&src[start..start + block * bands]);
                    }
                }
            }
        }
        let t = Tensor::new(&[n * per * per, row_len], out)?;
        self.push(t, Op::Unfold { x, patch, block, bands }, &[x])
    }

    /// Anchored first difference along the last axis:
    /// `y[..,0] = x[..,0]`, `y[..,j] = x[..,j] - x[..,j-1]`.
    pub fn diff_cols(&mut self, x: Var) -> Result<Var, TensorError> {
        let n = self.value(x).last_dim();
        let src = self.value(x).data();
        let mut out = vec![0.0; src.len()];
        if n > 0 {
            for (row, dst) in src.chunks_exact(n).zip(out.chunks_exact_mut(n)) {
                dst[0] = row[0];
                for j in 1..n {
                    dst[j] = row[j] - row[j - 1];
                }
            }
        }
        let t = Tensor::new(self.shape(x), out)?;
        self.push(t, Op::DiffCols { x }, &[x])
    }

    /// `[batch·T, h·dh] -> [batch·h, T, dh]`
    pub fn split_heads(&mut self, x: Var, batch: usize, heads: usize) -> Result<Var, TensorError> {
        let (rows, d) = self.dims2("split_heads", x)?;
        if batch == 0 || heads == 0 || rows % batch != 0 || d % heads != 0 {
            return Err(TensorError::Config(format!(
                "split_heads: [{rows}, {d}] not divisible into {batch} samples x {heads} heads"
            )));
        }
        let (t, dh) = (rows / batch, d / heads);
        let src = self.value(x).data();
        let mut out = vec![0.0; src.len()];
        for b in 0..batch {
            for h in 0..heads {
                for i in 0..t {
                    let s = (b * t + i) * d + h * dh;
                    let o = ((b * heads + h) * t + i) * dh;
                    out[o..o + dh].copy_from_slice(&src[s..s + dh]);
                }
            }
        }
        let tensor = Tensor::new(&[batch * heads, t, dh], out)?;
        self.push(tensor, Op::SplitHeads { x, batch, heads }, &[x])
    }

    /// Inverse of [`Graph::split_heads`].
    pub fn merge_heads(&mut self, x: Var, batch: usize, heads: usize) -> Result<Var, TensorError> {
        let (g, t, dh) = self.dims3("merge_heads", x)?;
        if batch == 0 || heads == 0 || g != batch * heads {
            return Err(TensorError::Config(format!(
                "merge_heads: {g} groups is not {batch} samples x {heads} heads"
            )));
        }
        let d = heads * dh;
        let src = self.value(x).data();
        let mut out = vec![0.0; src.len()];
        for b in 0..batch {
            for h in 0..heads {
                for i in 0..t {
                    let s = ((b * heads + h) * t + i) * dh;
                    let o = (b * t + i) * d + h * dh;
                    out[o..o + dh].copy_from_slice(&src[s..s + dh]);
                }
            }
        }
        let tensor = Tensor::new(&[batch * t, d], out)?;
        self.push(tensor, Op::MergeHeads { x, batch, heads }, &[x])
    }

    /// Appends `token[d]` after each sample's rows of `x[batch·N, d]`,
    /// producing `[batch·(N+1), d]` with the token in the last row of every
    /// sample.
    pub fn append_token(&mut self, x: Var, token: Var, batch: usize) -> Result<Var, TensorError> {
        let (rows, d) = self.dims2("append_token", x)?;
        if self.shape(token) != [d] {
            return Err(self.shape_err("append_token", x, token));
        }
        if batch == 0 || rows % batch != 0 {
            return Err(TensorError::Config(format!(
                "append_token: {rows} rows do not split into {batch} samples"
            )));
        }
        let n = rows / batch;
        let (src, tok) = (self.value(x).data(), self.value(token).data());
        let mut out = Vec::with_capacity((rows + batch) * d);
        for b in 0..batch {
            out.extend_from_slice(&src[b * n * d..(b + 1) * n * d]);
            out.extend_from_slice(tok);
        }
        let t = Tensor::new(&[rows + batch, d], out)?;
        self.push(t, Op::AppendToken { x, token, batch }, &[x, token])
    }

    /// Last row of each sample in `x[batch·T, d]` -> `[batch, d]`.
    pub fn last_rows(&mut self, x: Var, batch: usize) -> Result<Var, TensorError> {
        let (rows, d) = self.dims2("last_rows", x)?;
        if batch == 0 || rows % batch != 0 || rows == 0 {
            return Err(TensorError::Config(format!(
                "last_rows: {rows} rows do not split into {batch} samples"
            )));
        }
        let t = rows / batch;
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(batch * d);
        for b in 0..batch {
            let r = b * t + t - 1;
            out.extend_from_slice(&src[r * d..(r + 1) * d]);
        }
        let tensor = Tensor::new(&[batch, d], out)?;
        self.push(tensor, Op::LastRows { x, batch }, &[x])
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let Some(&first) = parts.first() else {
            return Err(TensorError::Config("concat_rows needs at least one input".into()));
        };
        let (_, d) = self.dims2("concat_rows", first)?;
        let mut rows = 0;
        for &p in parts {
            let (r, c) = self.dims2("concat_rows", p)?;
            if c != d {
                return Err(self.shape_err("concat_rows", first, p));
            }
            rows += r;
        }
        let mut out = Vec::with_capacity(rows * d);
        for &p in parts {
            out.extend_from_slice(self.value(p).data());
        }
        let t = Tensor::new(&[rows, d], out)?;
        self.push(t, Op::ConcatRows { parts: parts.to_vec() }, parts)
    }

    /// Rows `start..end` of a 2-D tensor.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var, TensorError> {
        let (r, d) = self.dims2("slice_rows", x)?;
        if start > end || end > r {
            return Err(TensorError::Config(format!(
                "slice_rows {start}..{end} out of bounds for {r} rows"
            )));
        }
        let data = self.value(x).data()[start * d..end * d].to_vec();
        let t = Tensor::new(&[end - start, d], data)?;
        self.push(t, Op::SliceRows { x, start }, &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let t = self.value(x).clone().reshape(shape)?;
        self.push(t, Op::Reshape { x }, &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, TensorError> {
        let s = self.value(x).sum();
        self.push(Tensor::scalar(s), Op::Sum { x }, &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var, TensorError> {
        let t = self.value(x);
        if t.is_empty() {
            return Err(TensorError::Config("mean of an empty tensor".into()));
        }
        let m = t.sum() / t.len() as f64;
        self.push(Tensor::scalar(m), Op::Mean { x }, &[x])
    }

    /// Mean negative log-likelihood of 0-based `targets` under row softmax
    /// of `logits[B, n]`, using log-sum-exp.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var, TensorError> {
        let (b, n) = self.dims2("softmax_cross_entropy", logits)?;
        if targets.len() != b || b == 0 {
            return Err(TensorError::Config(format!(
                "softmax_cross_entropy: {} targets for {b} rows",
                targets.len()
            )));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= n) {
            return Err(TensorError::Config(format!(
                "target class index {bad} out of range for {n} classes"
            )));
        }
        let src = self.value(logits).data();
        let mut probs = vec![0.0; b * n];
        let mut total = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            let row = &src[i * n..(i + 1) * n];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total += lse - row[t];
            for j in 0..n {
                probs[i * n + j] = (row[j] - lse).exp();
            }
        }
        let loss = Tensor::scalar(total / b as f64);
        self.push(
            loss,
            Op::SoftmaxCrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            &[logits],
        )
    }

    // ---------------------------------------------------------------------
    // backward
    // ---------------------------------------------------------------------

    /// Accumulates `d loss / d leaf` into every leaf with `requires_grad`.
    ///
    /// Calling this twice without [`Graph::zero_grad`] adds the gradients
    /// of both sweeps.
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        if self.value(loss).len() != 1 {
            return Err(TensorError::NotScalar {
                shape: self.shape(loss).to_vec(),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(upstream) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                let shape = self.nodes[idx].value.shape().to_vec();
                let acc = self.nodes[idx].grad.get_or_insert_with(|| Tensor::zeros(&shape));
                acc.data_mut().iter_mut().zip(&upstream).for_each(|(a, g)| *a += g);
                continue;
            }
            let mut contributions = self.backward_rule(idx, &upstream);
            if self.fault.as_deref() == Some(node.op.name()) {
                for (_, g) in &mut contributions {
                    g.iter_mut().for_each(|v| *v *= 1.5);
                }
            }
            for (input, g) in contributions {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, v)| *a += v),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(())
    }

    /// Vector-Jacobian products of node `idx` for each of its inputs.
    fn backward_rule(&self, idx: usize, dy: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let node = &self.nodes[idx];
        let val = |v: Var| self.nodes[v.0].value.data();
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul { a, b } => {
                let (m, k) = (self.shape(a)[0], self.shape(a)[1]);
                let n = self.shape(b)[1];
                if needs(a) {
                    let mut da = vec![0.0; m * k];
                    gemm_nt(dy, val(b), m, n, k, &mut da);
                    out.push((a, da));
                }
                if needs(b) {
                    let mut db = vec![0.0; k * n];
                    gemm_tn(val(a), dy, m, k, n, &mut db);
                    out.push((b, db));
                }
            }
            &Op::BatchMatMul { a, b, trans_b } => {
                let (g, m, k) = (self.shape(a)[0], self.shape(a)[1], self.shape(a)[2]);
                let n = node.value.shape()[2];
                let (ad, bd) = (val(a), val(b));
                let mut da = vec![0.0; g * m * k];
                let mut db = vec![0.0; g * k * n];
                for i in 0..g {
                    let ai = &ad[i * m * k..(i + 1) * m * k];
                    let bi = &bd[i * k * n..(i + 1) * k * n];
                    let dyi = &dy[i * m * n..(i + 1) * m * n];
                    let dai = &mut da[i * m * k..(i + 1) * m * k];
                    let dbi = &mut db[i * k * n..(i + 1) * k * n];
                    if trans_b {
                        // C = A·Bᵀ with B stored [n, k]
                        gemm(dyi, bi, m, n, k, dai);
                        gemm_tn(dyi, ai, m, n, k, dbi);
                    } else {
                        gemm_nt(dyi, bi, m, n, k, dai);
                        gemm_tn(ai, dyi, m, k, n, dbi);
                    }
                }
                if needs(a) {
                    out.push((a, da));
                }
                if needs(b) {
                    out.push((b, db));
                }
            }
            &Op::Transpose { x } => {
                let (r, c) = (self.shape(x)[0], self.shape(x)[1]);
                let mut dx = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        dx[i * c + j] = dy[j * r + i];
                    }
                }
                out.push((x, dx));
            }
            &Op::Add { a, b } => {
                out.push((a, dy.to_vec()));
                out.push((b, dy.to_vec()));
            }
            &Op::AddBias { x, bias } => {
                let n = self.shape(bias)[0];
                let mut db = vec![0.0; n];
                for row in dy.chunks_exact(n) {
                    db.iter_mut().zip(row).for_each(|(d, &g)| *d += g);
                }
                out.push((x, dy.to_vec()));
                out.push((bias, db));
            }
            &Op::AddTiled { x, tile } => {
                let (t, n) = (self.shape(tile)[0], self.shape(tile)[1]);
                let mut dt = vec![0.0; t * n];
                for (i, row) in dy.chunks_exact(n).enumerate() {
                    let off = (i % t) * n;
                    dt[off..off + n].iter_mut().zip(row).for_each(|(d, &g)| *d += g);
                }
                out.push((x, dy.to_vec()));
                out.push((tile, dt));
            }
            &Op::Mul { a, b } => {
                out.push((a, zip_map(dy, val(b), |g, v| g * v)));
                out.push((b, zip_map(dy, val(a), |g, v| g * v)));
            }
            &Op::Scale { x, factor } => {
                out.push((x, dy.iter().map(|g| g * factor).collect()));
            }
            &Op::Sigmoid { x } => {
                let y = node.value.data();
                out.push((x, zip_map(dy, y, |g, s| g * s * (1.0 - s))));
            }
            &Op::SoftmaxRows { x } => {
                let y = node.value.data();
                let n = node.value.last_dim();
                let mut dx = vec![0.0; y.len()];
                if n > 0 {
                    for ((yr, gr), dr) in y.chunks_exact(n).zip(dy.chunks_exact(n)).zip(dx.chunks_exact_mut(n)) {
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..n {
                            dr[j] = yr[j] * (gr[j] - dot);
                        }
                    }
                }
                out.push((x, dx));
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let d = node.value.last_dim();
                let g = val(*gamma);
                let mut dx = vec![0.0; xhat.len()];
                let mut dgamma = vec![0.0; d];
                let mut dbeta = vec![0.0; d];
                for (r, &inv) in inv_std.iter().enumerate() {
                    let h = &xhat[r * d..(r + 1) * d];
                    let gr = &dy[r * d..(r + 1) * d];
                    let mut mean_dh = 0.0;
                    let mut mean_dh_h = 0.0;
                    for j in 0..d {
                        dgamma[j] += gr[j] * h[j];
                        dbeta[j] += gr[j];
                        let dh = gr[j] * g[j];
                        mean_dh += dh;
                        mean_dh_h += dh * h[j];
                    }
                    mean_dh /= d as f64;
                    mean_dh_h /= d as f64;
                    for j in 0..d {
                        let dh = gr[j] * g[j];
                        dx[r * d + j] = inv * (dh - mean_dh - h[j] * mean_dh_h);
                    }
                }
                out.push((*x, dx));
                out.push((*gamma, dgamma));
                out.push((*beta, dbeta));
            }
            Op::Dropout { x, mask } => {
                out.push((*x, zip_map(dy, mask, |g, m| g * m)));
            }
            &Op::Unfold { x, patch, block, bands } => {
                let n = self.value(x).len() / (patch * patch * bands);
                let per = patch / block;
                let mut dx = vec![0.0; self.value(x).len()];
                let mut cursor = 0;
                for s in 0..n {
                    let base = s * patch * patch * bands;
                    for bi in 0..per {
                        for bj in 0..per {
                            for r in 0..block {
                                let row = bi * block + r;
                                let start = base + (row * patch + bj * block) * bands;
                                let len = block * bands;
                                dx[start..start + len]
                                    .iter_mut()
                                    .zip(&dy[cursor..cursor + len])
                                    .for_each(|(d, &g)| *d += g);
                                cursor += len;
                            }
                        }
                    }
                }
                out.push((x, dx));
            }
            &Op::DiffCols { x } => {
                let n = node.value.last_dim();
                let mut dx = vec![0.0; dy.len()];
                if n > 0 {
                    for (gr, dr) in dy.chunks_exact(n).zip(dx.chunks_exact_mut(n)) {
                        for j in 0..n - 1 {
                            dr[j] = gr[j] - gr[j + 1];
                        }
                        dr[n - 1] = gr[n - 1];
                    }
                }
                out.push((x, dx));
            }
            &Op::SplitHeads { x, batch, heads } => {
                let (rows, d) = (self.shape(x)[0], self.shape(x)[1]);
                let (t, dh) = (rows / batch, d / heads);
                let mut dx = vec![0.0; dy.len()];
                for b in 0..batch {
                    for h in 0..heads {
                        for i in 0..t {
                            let s = (b * t + i) * d + h * dh;
                            let o = ((b * heads + h) * t + i) * dh;
                            dx[s..s + dh].copy_from_slice(&dy[o..o + dh]);
                        }
                    }
                }
                out.push((x, dx));
            }
            &Op::MergeHeads { x, batch, heads } => {
                let (t, dh) = (self.shape(x)[1], self.shape(x)[2]);
                let d = heads * dh;
                let mut dx = vec![0.0; dy.len()];
                for b in 0..batch {
                    for h in 0..heads {
                        for i in 0..t {
                            let s = ((b * heads + h) * t + i) * dh;
                            let o = (b * t + i) * d + h * dh;
                            dx[s..s + dh].copy_from_slice(&dy[o..o + dh]);
                        }
                    }
                }
                out.push((x, dx));
            }
            &Op::AppendToken { x, token, batch } => {
                let (rows, d) = (self.shape(x)[0], self.shape(x)[1]);
                let n = rows / batch;
                let mut dx = Vec::with_capacity(rows * d);
                let mut dt = vec![0.0; d];
                for b in 0..batch {
                    let base = b * (n + 1) * d;
                    dx.extend_from_slice(&dy[base..base + n * d]);
                    dt.iter_mut()
                        .zip(&dy[base + n * d..base + (n + 1) * d])
                        .for_each(|(a, &g)| *a += g);
                }
                out.push((x, dx));
                out.push((token, dt));
            }
            &Op::LastRows { x, batch } => {
                let (rows, d) = (self.shape(x)[0], self.shape(x)[1]);
                let t = rows / batch;
                let mut dx = vec![0.0; rows * d];
                for b in 0..batch {
                    let r = b * t + t - 1;
                    dx[r * d..(r + 1) * d].copy_from_slice(&dy[b * d..(b + 1) * d]);
                }
                out.push((x, dx));
            }
            Op::ConcatRows { parts } => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    out.push((p, dy[offset..offset + len].to_vec()));
                    offset += len;
                }
            }
            &Op::SliceRows { x, start } => {
                let d = self.shape(x)[1];
                let mut dx = vec![0.0; self.value(x).len()];
                dx[start * d..start * d + dy.len()].copy_from_slice(dy);
                out.push((x, dx));
            }
            &Op::Reshape { x } => out.push((x, dy.to_vec())),
            &Op::Sum { x } => out.push((x, vec![dy[0]; self.value(x).len()])),
            &Op::Mean { x } => {
                let n = self.value(x).len();
                out.push((x, vec![dy[0] / n as f64; n]));
            }
            Op::SoftmaxCrossEntropy { logits, targets, probs } => {
                let n = self.shape(*logits)[1];
                let scale = dy[0] / targets.len() as f64;
                let mut dx: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                for (i, &t) in targets.iter().enumerate() {
                    dx[i * n + t] -= scale;
                }
                out.push((*logits, dx));
            }
        }
        out
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}
