//! Tape-based reverse-mode differentiation.
//!
//! Every op appends a node holding its forward value plus whatever it needs for
//! the backward pass. Nodes are created in topological order, so [`Graph::backward`]
//! is a single reverse sweep over the tape.

use rand::Rng;

use super::kernels::{self, ConvGeom};
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

/// Train mode enables dropout and batch statistics; eval mode is deterministic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-channel statistics of a batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    MatMul {
        a: Var,
        b: Var,
        ta: bool,
        tb: bool,
        m: usize,
        k: usize,
        n: usize,
    },
    Transpose(Var),
    Reshape(Var),
    Relu(Var),
    Gelu(Var),
    SliceRows {
        x: Var,
        start: usize,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    Norm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        kind: NormKind,
    },
    Conv1d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
        cols: Vec<T>,
    },
    Dropout {
        x: Var,
        mask: Vec<T>,
    },
    Sum(Var),
    Mean(Var),
    L2NormalizeRows {
        x: Var,
        inv_norm: Vec<T>,
    },
    GatherCols {
        x: Var,
        idx: Vec<usize>,
        k: usize,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<T>,
    },
    Ctc {
        log_probs: Var,
        grad: Vec<T>,
    },
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum NormKind {
    /// Normalizes each row over its last axis.
    Layer,
    /// Normalizes each column over the rows with batch statistics.
    BatchTrain,
    /// Fixed per-column statistics.
    BatchEval,
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

#[derive(Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A leaf that receives a gradient.
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// A leaf held constant for differentiation.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vs: &[Var]) -> bool {
        vs.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn dims2(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        self.value(v)
            .dims2()
            .map_err(|_| Error::shape(op, format!("expected rank 2, got {:?}", self.shape(v))))
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    fn zip(&mut self, a: Var, b: Var, op: Op<T>, name: &'static str, f: impl Fn(T, T) -> T) -> Result<Var> {
        self.same_shape(a, b, name)?;
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        let t = Tensor::new(x.shape().to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Add(a, b), "add", |p, q| p + q)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Sub(a, b), "sub", |p, q| p - q)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Mul(a, b), "mul", |p, q| p * q)
    }

    /// Broadcasts `row: [D]` over every vector of `x: [..., D]`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (_, d) = self.value(x).last_dim();
        if self.shape(row) != [d] {
            return Err(Error::shape(
                "add_row",
                format!("{:?} + {:?}", self.shape(x), self.shape(row)),
            ));
        }
        let mut t = self.value(x).clone();
        let r = self.value(row).data().to_vec();
        for chunk in t.data_mut().chunks_mut(d) {
            for (v, &b) in chunk.iter_mut().zip(&r) {
                *v += b;
            }
        }
        let rg = self.rg(&[x, row]);
        Ok(self.push(t, Op::AddRow(x, row), rg))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let t = self.value(x).map(|v| v * s);
        let rg = self.rg(&[x]);
        self.push(t, Op::Scale(x, s), rg)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let (ar, ac) = self.dims2(a, "matmul")?;
        let (br, bc) = self.dims2(b, "matmul")?;
        let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
        let (k2, n) = if tb { (bc, br) } else { (br, bc) };
        if k != k2 {
            return Err(Error::shape(
                "matmul",
                format!("inner dims {k} vs {k2} ({:?} x {:?})", self.shape(a), self.shape(b)),
            ));
        }
        let mut out = vec![T::zero(); m * n];
        kernels::gemm(self.value(a).data(), self.value(b).data(), &mut out, m, k, n, ta, tb);
        let rg = self.rg(&[a, b]);
        Ok(self.push(
            Tensor::new(vec![m, n], out)?,
            Op::MatMul { a, b, ta, tb, m, k, n },
            rg,
        ))
    }

    /// `a: [M, K] · b: [K, N]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false, false)
    }

    /// `a: [M, K] · bᵀ` with `b: [N, K]`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false, true)
    }

    /// `x · w + b` for `x: [N, I]`, `w: [I, O]`, `b: [O]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add_row(y, b)
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x).transpose2()?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::Transpose(x), rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::Reshape(x), rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        let rg = self.rg(&[x]);
        self.push(t, Op::Relu(x), rg)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let t = self.value(x).map(|v| gelu(v).0);
        let rg = self.rg(&[x]);
        self.push(t, Op::Gelu(x), rg)
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x).slice_rows(start, len)?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::SliceRows { x, start }, rg))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.dims2(x, "slice_cols")?;
        if start + len > c {
            return Err(Error::shape("slice_cols", format!("cols {start}..{} of {c}", start + len)));
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&src[i * c + start..i * c + start + len]);
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(vec![r, len], out)?, Op::SliceCols { x, start }, rg))
    }

    pub fn concat_rows(&mut self, xs: &[Var]) -> Result<Var> {
        let c = self.dims2(xs[0], "concat_rows")?.1;
        let mut out = Vec::new();
        let mut rows = 0;
        for &x in xs {
            let (r, cc) = self.dims2(x, "concat_rows")?;
            if cc != c {
                return Err(Error::shape("concat_rows", format!("{cc} vs {c} columns")));
            }
            out.extend_from_slice(self.value(x).data());
            rows += r;
        }
        let rg = self.rg(xs);
        Ok(self.push(Tensor::new(vec![rows, c], out)?, Op::ConcatRows(xs.to_vec()), rg))
    }

    pub fn concat_cols(&mut self, xs: &[Var]) -> Result<Var> {
        let r = self.dims2(xs[0], "concat_cols")?.0;
        let mut widths = Vec::with_capacity(xs.len());
        for &x in xs {
            let (rr, c) = self.dims2(x, "concat_cols")?;
            if rr != r {
                return Err(Error::shape("concat_cols", format!("{rr} vs {r} rows")));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for (&x, &w) in xs.iter().zip(&widths) {
                out.extend_from_slice(&self.value(x).data()[i * w..(i + 1) * w]);
            }
        }
        let rg = self.rg(xs);
        Ok(self.push(Tensor::new(vec![r, total], out)?, Op::ConcatCols(xs.to_vec()), rg))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let mut t = self.value(x).clone();
        let (_, d) = t.last_dim();
        for row in t.data_mut().chunks_mut(d) {
            softmax_in_place(row);
        }
        let rg = self.rg(&[x]);
        self.push(t, Op::SoftmaxRows(x), rg)
    }

    pub fn log_softmax_rows(&mut self, x: Var) -> Var {
        let mut t = self.value(x).clone();
        let (_, d) = t.last_dim();
        for row in t.data_mut().chunks_mut(d) {
            let lse = kernels::log_sum_exp(row);
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        let rg = self.rg(&[x]);
        self.push(t, Op::LogSoftmaxRows(x), rg)
    }

    /// Layer normalization over the last axis.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (n, d) = self.value(x).last_dim();
        self.check_affine(gamma, beta, d, "layer_norm")?;
        let eps = T::of(eps);
        let src = self.value(x).data();
        let mut xhat = vec![T::zero(); n * d];
        let mut inv_std = vec![T::zero(); n];
        let dn = T::of(d as f64);
        for i in 0..n {
            let row = &src[i * d..(i + 1) * d];
            let mean = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
            let inv = T::one() / (var + eps).sqrt();
            inv_std[i] = inv;
            for j in 0..d {
                xhat[i * d + j] = (row[j] - mean) * inv;
            }
        }
        let out = self.affine(&xhat, gamma, beta, d);
        let t = Tensor::new(self.shape(x).to_vec(), out)?;
        let rg = self.rg(&[x, gamma, beta]);
        Ok(self.push(
            t,
            Op::Norm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                kind: NormKind::Layer,
            },
            rg,
        ))
    }

    /// Batch normalization of `x: [N, C]` over its rows.
    ///
    /// Train mode normalizes with the batch statistics and returns them (variance
    /// unbiased) so the caller can update running averages; eval mode uses `running`.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: &NormStats<T>,
        mode: Mode,
        eps: f64,
    ) -> Result<(Var, Option<NormStats<T>>)> {
        let (n, c) = self.dims2(x, "batch_norm")?;
        self.check_affine(gamma, beta, c, "batch_norm")?;
        let eps = T::of(eps);
        let src = self.value(x).data();
        let mut xhat = vec![T::zero(); n * c];
        let mut inv_std = vec![T::zero(); c];
        let (kind, stats) = match mode {
            Mode::Train => {
                if n < 2 {
                    return Err(Error::invalid("batch_norm", "train mode needs a batch of at least 2"));
                }
                let nn = T::of(n as f64);
                let mut mean = vec![T::zero(); c];
                let mut var = vec![T::zero(); c];
                for i in 0..n {
                    for j in 0..c {
                        mean[j] += src[i * c + j];
                    }
                }
                mean.iter_mut().for_each(|m| *m /= nn);
                for i in 0..n {
                    for j in 0..c {
                        let d = src[i * c + j] - mean[j];
                        var[j] += d * d;
                    }
                }
                let unbiased = var.iter().map(|&v| v / T::of((n - 1) as f64)).collect();
                var.iter_mut().for_each(|v| *v /= nn);
                for j in 0..c {
                    inv_std[j] = T::one() / (var[j] + eps).sqrt();
                }
                for i in 0..n {
                    for j in 0..c {
                        xhat[i * c + j] = (src[i * c + j] - mean[j]) * inv_std[j];
                    }
                }
                (
                    NormKind::BatchTrain,
                    Some(NormStats {
                        mean,
                        var: unbiased,
                    }),
                )
            }
            Mode::Eval => {
                if running.mean.len() != c || running.var.len() != c {
                    return Err(Error::shape("batch_norm", "running statistics size"));
                }
                for j in 0..c {
                    inv_std[j] = T::one() / (running.var[j] + eps).sqrt();
                }
                for i in 0..n {
                    for j in 0..c {
                        xhat[i * c + j] = (src[i * c + j] - running.mean[j]) * inv_std[j];
                    }
                }
                (NormKind::BatchEval, None)
            }
        };
        let out = self.affine(&xhat, gamma, beta, c);
        let t = Tensor::new(vec![n, c], out)?;
        let rg = self.rg(&[x, gamma, beta]);
        let v = self.push(
            t,
            Op::Norm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                kind,
            },
            rg,
        );
        Ok((v, stats))
    }

    fn check_affine(&self, gamma: Var, beta: Var, d: usize, op: &'static str) -> Result<()> {
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(Error::shape(
                op,
                format!("affine {:?}/{:?} for width {d}", self.shape(gamma), self.shape(beta)),
            ));
        }
        Ok(())
    }

    fn affine(&self, xhat: &[T], gamma: Var, beta: Var, d: usize) -> Vec<T> {
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        xhat.chunks(d)
            .flat_map(|row| row.iter().zip(g.iter().zip(b)).map(|(&v, (&gg, &bb))| v * gg + bb))
            .collect()
    }

    /// Grouped 1-D convolution of `x: [C_in, T]` with `w: [C_out, C_in / groups, K]`.
    ///
    /// Output length is `floor((T + 2·padding − K) / stride) + 1`.
    pub fn conv1d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        padding: usize,
        groups: usize,
    ) -> Result<Var> {
        let (c_in, t_in) = self.dims2(x, "conv1d")?;
        let ws = self.shape(w).to_vec();
        let [c_out, gin, kernel] = ws[..] else {
            return Err(Error::shape("conv1d", format!("weight must be rank 3, got {ws:?}")));
        };
        if kernel == 0 || stride == 0 || groups == 0 {
            return Err(Error::invalid("conv1d", "kernel, stride and groups must be positive"));
        }
        if c_in % groups != 0 || c_out % groups != 0 || gin != c_in / groups {
            return Err(Error::shape(
                "conv1d",
                format!("input {c_in} channels, weight {ws:?}, groups {groups}"),
            ));
        }
        if let Some(b) = b {
            if self.shape(b) != [c_out] {
                return Err(Error::shape("conv1d", "bias size"));
            }
        }
        let span = t_in + 2 * padding;
        if span < kernel {
            return Err(Error::invalid(
                "conv1d",
                format!("input length {t_in} with padding {padding} is shorter than kernel {kernel}"),
            ));
        }
        let t_out = (span - kernel) / stride + 1;
        let geom = ConvGeom {
            c_in,
            c_out,
            kernel,
            stride,
            padding,
            groups,
            t_in,
            t_out,
        };
        let cols = kernels::im2col(self.value(x).data(), &geom);
        let mut out = vec![T::zero(); c_out * t_out];
        let wd = self.value(w).data();
        let (rows, go) = (geom.col_rows(), geom.group_out());
        for g in 0..groups {
            kernels::gemm(
                &wd[g * go * rows..(g + 1) * go * rows],
                &cols[g * rows * t_out..(g + 1) * rows * t_out],
                &mut out[g * go * t_out..(g + 1) * go * t_out],
                go,
                rows,
                t_out,
                false,
                false,
            );
        }
        if let Some(b) = b {
            let bd = self.value(b).data();
            for (o, row) in out.chunks_mut(t_out).enumerate() {
                row.iter_mut().for_each(|v| *v += bd[o]);
            }
        }
        let mut ins = vec![x, w];
        ins.extend(b);
        let rg = self.rg(&ins);
        Ok(self.push(
            Tensor::new(vec![c_out, t_out], out)?,
            Op::Conv1d { x, w, b, geom, cols },
            rg,
        ))
    }

    /// Inverted dropout: survivors are scaled by `1 / (1 − rate)`. Identity in eval mode.
    pub fn dropout(&mut self, x: Var, rate: f64, mode: Mode, rng: &mut impl Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::invalid("dropout", format!("rate {rate} not in [0, 1)")));
        }
        if mode == Mode::Eval || rate == 0.0 {
            return Ok(x);
        }
        let keep = T::of(1.0 / (1.0 - rate));
        let mask: Vec<T> = (0..self.value(x).numel())
            .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
            .collect();
        let src = self.value(x);
        let data = src.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let t = Tensor::new(src.shape().to_vec(), data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::Dropout { x, mask }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let t = Tensor::scalar(self.value(x).sum());
        let rg = self.rg(&[x]);
        self.push(t, Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let t = Tensor::scalar(v.sum() / T::of(v.numel() as f64));
        let rg = self.rg(&[x]);
        self.push(t, Op::Mean(x), rg)
    }

    /// Scales each row to unit L2 norm; all-zero rows stay zero.
    pub fn l2_normalize_rows(&mut self, x: Var) -> Result<Var> {
        let (n, d) = self.dims2(x, "l2_normalize_rows")?;
        let src = self.value(x).data();
        let mut out = vec![T::zero(); n * d];
        let mut inv_norm = vec![T::zero(); n];
        for i in 0..n {
            let row = &src[i * d..(i + 1) * d];
            let norm = row.iter().map(|&v| v * v).sum::<T>().sqrt();
            if norm > T::zero() {
                let inv = T::one() / norm;
                inv_norm[i] = inv;
                for j in 0..d {
                    out[i * d + j] = row[j] * inv;
                }
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(vec![n, d], out)?, Op::L2NormalizeRows { x, inv_norm }, rg))
    }

    /// `y[i, j] = x[i, idx[i·k + j]]` for `x: [N, M]`, giving `[N, k]`.
    pub fn gather_cols(&mut self, x: Var, idx: Vec<usize>, k: usize) -> Result<Var> {
        let (n, m) = self.dims2(x, "gather_cols")?;
        if idx.len() != n * k || idx.iter().any(|&j| j >= m) {
            return Err(Error::shape("gather_cols", format!("{} indices for [{n}, {m}] x {k}", idx.len())));
        }
        let src = self.value(x).data();
        let out = idx.iter().enumerate().map(|(p, &j)| src[(p / k.max(1)) * m + j]).collect();
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(vec![n, k], out)?, Op::GatherCols { x, idx, k }, rg))
    }

    /// Mean over rows of `−log softmax(logits[i])[targets[i]]`, in log-sum-exp form.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (n, c) = self.dims2(logits, "cross_entropy")?;
        if targets.len() != n {
            return Err(Error::shape("cross_entropy", format!("{} targets for {n} rows", targets.len())));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
            return Err(Error::invalid("cross_entropy", format!("target {bad} out of range for {c} classes")));
        }
        let src = self.value(logits).data();
        let mut probs = vec![T::zero(); n * c];
        let mut total = T::zero();
        for i in 0..n {
            let row = &src[i * c..(i + 1) * c];
            let lse = kernels::log_sum_exp(row);
            total += lse - row[targets[i]];
            for j in 0..c {
                probs[i * c + j] = (row[j] - lse).exp();
            }
        }
        let loss = total / T::of(n as f64);
        let rg = self.rg(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Records a scalar whose gradient w.r.t. `log_probs` was computed alongside it.
    pub(crate) fn custom_scalar(&mut self, log_probs: Var, value: T, grad: Vec<T>) -> Var {
        debug_assert_eq!(grad.len(), self.value(log_probs).numel());
        let rg = self.rg(&[log_probs]);
        self.push(Tensor::scalar(value), Op::Ctc { log_probs, grad }, rg)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if !self.value(loss).is_scalar() {
            return Err(Error::invalid(
                "backward",
                format!("loss must be a scalar, got shape {:?}", self.shape(loss)),
            ));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(gout) = grads[idx].take() else { continue };
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(gout);
                continue;
            }
            self.backprop(node, &gout, &mut grads);
        }
        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| match (&self.nodes[i].op, g) {
                (Op::Leaf, Some(g)) => Tensor::new(self.nodes[i].value.shape().to_vec(), g).ok(),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn backprop(&self, node: &Node<T>, gout: &[T], grads: &mut [Option<Vec<T>>]) {
        let val = |v: Var| self.nodes[v.0].value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.acc(grads, *a, |g| add_into(g, gout));
                self.acc(grads, *b, |g| add_into(g, gout));
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, |g| add_into(g, gout));
                self.acc(grads, *b, |g| g.iter_mut().zip(gout).for_each(|(x, &y)| *x -= y));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                self.acc(grads, *a, |g| {
                    for ((x, &y), &o) in g.iter_mut().zip(gout).zip(bv) {
                        *x += y * o;
                    }
                });
                self.acc(grads, *b, |g| {
                    for ((x, &y), &o) in g.iter_mut().zip(gout).zip(av) {
                        *x += y * o;
                    }
                });
            }
            Op::AddRow(x, row) => {
                self.acc(grads, *x, |g| add_into(g, gout));
                let d = self.nodes[row.0].value.numel();
                self.acc(grads, *row, |g| {
                    for chunk in gout.chunks(d) {
                        add_into(g, chunk);
                    }
                });
            }
            Op::Scale(x, s) => self.acc(grads, *x, |g| {
                g.iter_mut().zip(gout).for_each(|(x, &y)| *x += y * *s);
            }),
            Op::MatMul { a, b, ta, tb, m, k, n } => {
                let (m, k, n, ta, tb) = (*m, *k, *n, *ta, *tb);
                let (av, bv) = (val(*a), val(*b));
                self.acc(grads, *a, |g| {
                    if ta {
                        kernels::gemm(bv, gout, g, k, n, m, tb, true);
                    } else {
                        kernels::gemm(gout, bv, g, m, n, k, false, !tb);
                    }
                });
                self.acc(grads, *b, |g| {
                    if tb {
                        kernels::gemm(gout, av, g, n, m, k, true, ta);
                    } else {
                        kernels::gemm(av, gout, g, k, m, n, !ta, false);
                    }
                });
            }
            Op::Transpose(x) => {
                let (r, c) = (node.value.shape()[0], node.value.shape()[1]);
                let t = kernels::transpose(gout, r, c);
                self.acc(grads, *x, |g| add_into(g, &t));
            }
            Op::Reshape(x) => self.acc(grads, *x, |g| add_into(g, gout)),
            Op::Relu(x) => {
                let xv = val(*x);
                self.acc(grads, *x, |g| {
                    for ((gv, &y), &xi) in g.iter_mut().zip(gout).zip(xv) {
                        if xi > T::zero() {
                            *gv += y;
                        }
                    }
                });
            }
            Op::Gelu(x) => {
                let xv = val(*x);
                self.acc(grads, *x, |g| {
                    for ((gv, &y), &xi) in g.iter_mut().zip(gout).zip(xv) {
                        *gv += y * gelu(xi).1;
                    }
                });
            }
            Op::SliceRows { x, start } => {
                let c = node.value.shape()[1];
                self.acc(grads, *x, |g| add_into(&mut g[start * c..start * c + gout.len()], gout));
            }
            Op::SliceCols { x, start } => {
                let (r, w) = (node.value.shape()[0], node.value.shape()[1]);
                let c = self.nodes[x.0].value.shape()[1];
                self.acc(grads, *x, |g| {
                    for i in 0..r {
                        add_into(&mut g[i * c + start..i * c + start + w], &gout[i * w..(i + 1) * w]);
                    }
                });
            }
            Op::ConcatRows(xs) => {
                let mut off = 0;
                for x in xs {
                    let len = self.nodes[x.0].value.numel();
                    self.acc(grads, *x, |g| add_into(g, &gout[off..off + len]));
                    off += len;
                }
            }
            Op::ConcatCols(xs) => {
                let (r, total) = (node.value.shape()[0], node.value.shape()[1]);
                let mut off = 0;
                for x in xs {
                    let w = self.nodes[x.0].value.shape()[1];
                    self.acc(grads, *x, |g| {
                        for i in 0..r {
                            add_into(&mut g[i * w..(i + 1) * w], &gout[i * total + off..i * total + off + w]);
                        }
                    });
                    off += w;
                }
            }
            Op::SoftmaxRows(x) => {
                let (_, d) = node.value.last_dim();
                let y = node.value.data();
                self.acc(grads, *x, |g| {
                    for ((gr, yr), dy) in g.chunks_mut(d).zip(y.chunks(d)).zip(gout.chunks(d)) {
                        let dot: T = yr.iter().zip(dy).map(|(&a, &b)| a * b).sum();
                        for j in 0..d {
                            gr[j] += yr[j] * (dy[j] - dot);
                        }
                    }
                });
            }
            Op::LogSoftmaxRows(x) => {
                let (_, d) = node.value.last_dim();
                let y = node.value.data();
                self.acc(grads, *x, |g| {
                    for ((gr, yr), dy) in g.chunks_mut(d).zip(y.chunks(d)).zip(gout.chunks(d)) {
                        let s: T = dy.iter().copied().sum();
                        for j in 0..d {
                            gr[j] += dy[j] - yr[j].exp() * s;
                        }
                    }
                });
            }
            Op::Norm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                kind,
            } => {
                let d = self.nodes[gamma.0].value.numel();
                let gv = val(*gamma);
                self.acc(grads, *beta, |g| {
                    for chunk in gout.chunks(d) {
                        add_into(g, chunk);
                    }
                });
                self.acc(grads, *gamma, |g| {
                    for (dy, xh) in gout.chunks(d).zip(xhat.chunks(d)) {
                        for j in 0..d {
                            g[j] += dy[j] * xh[j];
                        }
                    }
                });
                self.acc(grads, *x, |g| match kind {
                    NormKind::Layer => {
                        let dn = T::of(d as f64);
                        for (i, ((gr, dy), xh)) in
                            g.chunks_mut(d).zip(gout.chunks(d)).zip(xhat.chunks(d)).enumerate()
                        {
                            let mut s1 = T::zero();
                            let mut s2 = T::zero();
                            for j in 0..d {
                                let dxh = dy[j] * gv[j];
                                s1 += dxh;
                                s2 += dxh * xh[j];
                            }
                            let k = inv_std[i] / dn;
                            for j in 0..d {
                                gr[j] += k * (dn * dy[j] * gv[j] - s1 - xh[j] * s2);
                            }
                        }
                    }
                    NormKind::BatchTrain => {
                        let n = gout.len() / d;
                        let nn = T::of(n as f64);
                        let mut s1 = vec![T::zero(); d];
                        let mut s2 = vec![T::zero(); d];
                        for i in 0..n {
                            for j in 0..d {
                                let dxh = gout[i * d + j] * gv[j];
                                s1[j] += dxh;
                                s2[j] += dxh * xhat[i * d + j];
                            }
                        }
                        for i in 0..n {
                            for j in 0..d {
                                let dxh = gout[i * d + j] * gv[j];
                                g[i * d + j] +=
                                    inv_std[j] / nn * (nn * dxh - s1[j] - xhat[i * d + j] * s2[j]);
                            }
                        }
                    }
                    NormKind::BatchEval => {
                        for (i, gv_i) in g.iter_mut().enumerate() {
                            let j = i % d;
                            *gv_i += gout[i] * gv[j] * inv_std[j];
                        }
                    }
                });
            }
            Op::Conv1d { x, w, b, geom, cols } => {
                let (rows, go, t_out) = (geom.col_rows(), geom.group_out(), geom.t_out);
                if let Some(b) = b {
                    self.acc(grads, *b, |g| {
                        for (o, row) in gout.chunks(t_out).enumerate() {
                            g[o] += row.iter().copied().sum();
                        }
                    });
                }
                self.acc(grads, *w, |g| {
                    for gi in 0..geom.groups {
                        kernels::gemm(
                            &gout[gi * go * t_out..(gi + 1) * go * t_out],
                            &cols[gi * rows * t_out..(gi + 1) * rows * t_out],
                            &mut g[gi * go * rows..(gi + 1) * go * rows],
                            go,
                            t_out,
                            rows,
                            false,
                            true,
                        );
                    }
                });
                let wd = val(*w);
                self.acc(grads, *x, |g| {
                    let mut dcols = vec![T::zero(); cols.len()];
                    for gi in 0..geom.groups {
                        kernels::gemm(
                            &wd[gi * go * rows..(gi + 1) * go * rows],
                            &gout[gi * go * t_out..(gi + 1) * go * t_out],
                            &mut dcols[gi * rows * t_out..(gi + 1) * rows * t_out],
                            rows,
                            go,
                            t_out,
                            true,
                            false,
                        );
                    }
                    kernels::col2im(&dcols, geom, g);
                });
            }
            Op::Dropout { x, mask } => self.acc(grads, *x, |g| {
                for ((gv, &y), &m) in g.iter_mut().zip(gout).zip(mask) {
                    *gv += y * m;
                }
            }),
            Op::Sum(x) => self.acc(grads, *x, |g| g.iter_mut().for_each(|v| *v += gout[0])),
            Op::Mean(x) => {
                let s = gout[0] / T::of(self.nodes[x.0].value.numel() as f64);
                self.acc(grads, *x, |g| g.iter_mut().for_each(|v| *v += s));
            }
            Op::L2NormalizeRows { x, inv_norm } => {
                let (_, d) = node.value.last_dim();
                let y = node.value.data();
                self.acc(grads, *x, |g| {
                    for (i, ((gr, yr), dy)) in g.chunks_mut(d).zip(y.chunks(d)).zip(gout.chunks(d)).enumerate() {
                        let inv = inv_norm[i];
                        if inv == T::zero() {
                            continue;
                        }
                        let dot: T = yr.iter().zip(dy).map(|(&a, &b)| a * b).sum();
                        for j in 0..d {
                            gr[j] += inv * (dy[j] - yr[j] * dot);
                        }
                    }
                });
            }
            Op::GatherCols { x, idx, k } => {
                let m = self.nodes[x.0].value.shape()[1];
                self.acc(grads, *x, |g| {
                    for (p, &j) in idx.iter().enumerate() {
                        g[(p / k) * m + j] += gout[p];
                    }
                });
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let n = targets.len();
                let c = probs.len() / n;
                let s = gout[0] / T::of(n as f64);
                self.acc(grads, *logits, |g| {
                    for i in 0..n {
                        for j in 0..c {
                            let onehot = if j == targets[i] { T::one() } else { T::zero() };
                            g[i * c + j] += s * (probs[i * c + j] - onehot);
                        }
                    }
                });
            }
            Op::Ctc { log_probs, grad } => self.acc(grads, *log_probs, |g| {
                for (gv, &d) in g.iter_mut().zip(grad) {
                    *gv += gout[0] * d;
                }
            }),
        }
    }

    fn acc(&self, grads: &mut [Option<Vec<T>>], v: Var, f: impl FnOnce(&mut [T])) {
        let node = &self.nodes[v.0];
        if !node.requires_grad {
            return;
        }
        let buf = grads[v.0].get_or_insert_with(|| vec![T::zero(); node.value.numel()]);
        f(buf);
    }
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn softmax_in_place<T: Real>(row: &mut [T]) {
    let m = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut s = T::zero();
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in row.iter_mut() {
        *v /= s;
    }
}

/// GELU value and derivative.
fn gelu<T: Real>(x: T) -> (T, T) {
    let c = T::of((2.0 / std::f64::consts::PI).sqrt());
    let a = T::of(0.044715);
    let half = T::of(0.5);
    let u = c * (x + a * x * x * x);
    let th = u.tanh();
    let y = half * x * (T::one() + th);
    let dy = half * (T::one() + th) + half * x * (T::one() - th * th) * c * (T::one() + T::of(3.0) * a * x * x);
    (y, dy)
}
