use std::cell::Cell;

use rand::Rng as _;

use super::kernels::{self, ConvGeom};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Real, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-thread invocation counters for the expensive primitives.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpCounts {
    pub conv1d: u64,
    pub attention: u64,
    pub matmul: u64,
}

thread_local! {
    static COUNTS: Cell<OpCounts> = Cell::new(OpCounts::default());
}

pub fn op_counts() -> OpCounts {
    COUNTS.with(|c| c.get())
}

pub fn reset_op_counts() {
    COUNTS.with(|c| c.set(OpCounts::default()));
}

fn bump(f: impl FnOnce(&mut OpCounts)) {
    COUNTS.with(|c| {
        let mut v = c.get();
        f(&mut v);
        c.set(v);
    });
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddBias(Var, Var),
    Sum(Var),
    Gelu(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        rstd: Vec<T>,
    },
    Conv1d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
        batch: usize,
    },
    Dropout(Var, Vec<T>),
    MeanTime {
        x: Var,
        time: usize,
        dim: usize,
    },
    SwapLast2 {
        x: Var,
        batch: usize,
        rows: usize,
        cols: usize,
    },
    NarrowLast {
        x: Var,
        keep: usize,
        full: usize,
    },
    Reshape(Var),
    Attention {
        q: Var,
        k: Var,
        v: Var,
        batch: usize,
        time: usize,
        heads: usize,
        probs: Vec<T>,
    },
    Column {
        x: Var,
        col: usize,
        cols: usize,
    },
    ConcatCols(Vec<Var>),
    Ccc {
        pred: Var,
        label: Vec<T>,
        eps: T,
    },
}

struct Node<T> {
    value: Tensor<T>,
    requires_grad: bool,
    half: bool,
    op: Op<T>,
    grad: Option<Vec<T>>,
}

/// A reverse-mode differentiation tape.
///
/// Nodes are appended in evaluation order, so the arena order is a valid
/// topological order and backward is a single reverse sweep. A node records a
/// backward rule only if one of its inputs requires a gradient; frozen
/// sub-graphs cost nothing on the way back.
///
/// With half emulation enabled, every value produced (and every gradient
/// flowing back through nodes created in that state) is rounded onto the
/// binary16 grid. Arithmetic inside each kernel still accumulates at full
/// width.
pub struct Graph<T: Real = f32> {
    nodes: Vec<Node<T>>,
    half: bool,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn gelu_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

fn gelu_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            half: false,
        }
    }

    pub fn set_half(&mut self, on: bool) {
        self.half = on;
    }

    pub fn is_half(&self) -> bool {
        self.half
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, mut value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        if self.half {
            for v in value.data_mut() {
                *v = v.round_half();
            }
        }
        let op = if requires_grad || matches!(op, Op::Leaf) {
            op
        } else {
            // Nothing upstream needs a gradient; drop saved state.
            Op::Leaf
        };
        self.nodes.push(Node {
            value,
            requires_grad,
            half: self.half,
            op,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A constant input; never receives a gradient.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf parameter. Gradients accumulate into it when `requires_grad`.
    pub fn param(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Accumulated gradient of a leaf, absent for frozen tensors or before backward.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].grad.as_deref()
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn data(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Dimension {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        kernels::gemm_nn(m, k, n, self.data(a), self.data(b), &mut out);
        bump(|c| c.matmul += 1);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Dimension {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out: Vec<T> = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| x + y)
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(shape, out)?, Op::Add(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out: Vec<T> = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| x * y)
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(shape, out)?, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let value = self.value(a).map(|v| v * c);
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, c), rg)
    }

    /// `x[..×n] + b[n]`, broadcasting over rows.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let n = self.shape(b).iter().product::<usize>();
        let sx = self.shape(x);
        if sx.last().copied() != Some(n) {
            return Err(Error::Dimension {
                op: "add_bias",
                lhs: sx.to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let bias = self.data(b);
        let out: Vec<T> = self
            .data(x)
            .chunks(n)
            .flat_map(|row| row.iter().zip(bias).map(|(&v, &bb)| v + bb))
            .collect();
        let shape = sx.to_vec();
        let rg = self.rg(x) || self.rg(b);
        Ok(self.push(Tensor::new(shape, out)?, Op::AddBias(x, b), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: T = self.data(a).iter().copied().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    /// `x·Φ(x)` with the exact Gaussian CDF.
    pub fn gelu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| {
            let x = v.as_f64();
            T::from_f64(x * gelu_cdf(x))
        });
        let rg = self.rg(a);
        self.push(value, Op::Gelu(a), rg)
    }

    /// Softmax over the last dimension with max-subtraction.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let n = *self
            .shape(a)
            .last()
            .ok_or(Error::EmptyDimension { op: "softmax" })?;
        if n == 0 {
            return Err(Error::EmptyDimension { op: "softmax" });
        }
        let mut value = self.value(a).clone();
        for row in value.data_mut().chunks_mut(n) {
            softmax_row(row);
        }
        let rg = self.rg(a);
        Ok(self.push(value, Op::Softmax(a), rg))
    }

    /// Normalizes each row over the last dimension with population statistics.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let d = self.shape(x).last().copied().unwrap_or(0);
        if d == 0 {
            return Err(Error::EmptyDimension { op: "layer_norm" });
        }
        if self.shape(gamma).iter().product::<usize>() != d
            || self.shape(beta).iter().product::<usize>() != d
        {
            return Err(Error::Dimension {
                op: "layer_norm",
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(gamma).to_vec(),
            });
        }
        let g = self.data(gamma);
        let bt = self.data(beta);
        let rows = self.value(x).len() / d;
        let mut out = Vec::with_capacity(rows * d);
        let mut rstds = Vec::with_capacity(rows);
        let dn = T::from_f64(d as f64);
        let eps = T::from_f64(eps);
        for row in self.data(x).chunks(d) {
            let mean = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
            let rstd = T::one() / (var + eps).sqrt();
            rstds.push(rstd);
            out.extend(
                row.iter()
                    .zip(g.iter().zip(bt))
                    .map(|(&v, (&gg, &bb))| (v - mean) * rstd * gg + bb),
            );
        }
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                rstd: rstds,
            },
            rg,
        ))
    }

    /// Grouped 1-D cross-correlation.
    ///
    /// `x` is `[C_in×T]` or `[B×C_in×T]`; `w` is `[C_out×(C_in/groups)×K]`.
    pub fn conv1d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        groups: usize,
        padding: usize,
    ) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sw = self.shape(w).to_vec();
        let (batch, c_in, t_in) = match sx.len() {
            2 => (1, sx[0], sx[1]),
            3 => (sx[0], sx[1], sx[2]),
            _ => {
                return Err(Error::Dimension {
                    op: "conv1d",
                    lhs: sx,
                    rhs: sw,
                })
            }
        };
        if sw.len() != 3 || groups == 0 || c_in % groups != 0 || sw[0] % groups != 0 || sw[1] * groups != c_in
        {
            return Err(Error::Dimension {
                op: "conv1d",
                lhs: sx,
                rhs: sw,
            });
        }
        if x == w || b == Some(x) || b == Some(w) {
            return Err(Error::Contract("conv1d input, weight and bias must be distinct nodes".into()));
        }
        if stride == 0 {
            return Err(Error::Parameter("conv1d stride must be ≥ 1".into()));
        }
        let (c_out, kernel) = (sw[0], sw[2]);
        if let Some(b) = b {
            if self.value(b).len() != c_out {
                return Err(Error::Dimension {
                    op: "conv1d bias",
                    lhs: sw,
                    rhs: self.shape(b).to_vec(),
                });
            }
        }
        let t_out = kernels::conv_out_len(t_in, kernel, stride, padding).ok_or(
            Error::InputTooShort {
                op: "conv1d",
                len: t_in,
                min: kernel.saturating_sub(2 * padding).max(1),
            },
        )?;
        let geom = ConvGeom {
            c_in,
            c_out,
            kernel,
            stride,
            groups,
            padding,
            t_in,
            t_out,
        };
        let mut out = vec![T::zero(); batch * c_out * t_out];
        {
            let xd = self.data(x);
            let wd = self.data(w);
            let bd = b.map(|b| self.data(b));
            for bi in 0..batch {
                kernels::conv1d_forward(
                    &geom,
                    &xd[bi * c_in * t_in..(bi + 1) * c_in * t_in],
                    wd,
                    bd,
                    &mut out[bi * c_out * t_out..(bi + 1) * c_out * t_out],
                );
            }
        }
        bump(|c| c.conv1d += 1);
        let shape = if sx.len() == 2 {
            vec![c_out, t_out]
        } else {
            vec![batch, c_out, t_out]
        };
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::Conv1d {
                x,
                w,
                b,
                geom,
                batch,
            },
            rg,
        ))
    }

    /// Inverted dropout: survivors are scaled by `1/(1-p)`; eval mode is the identity.
    pub fn dropout(&mut self, x: Var, p: f64, mode: Mode, rng: &mut Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Parameter(format!("dropout p={p} must lie in [0, 1)")));
        }
        if mode == Mode::Eval || p == 0.0 {
            return Ok(x);
        }
        let keep = T::from_f64(1.0 / (1.0 - p));
        let mask: Vec<T> = (0..self.value(x).len())
            .map(|_| {
                if rng.gen::<f64>() < p {
                    T::zero()
                } else {
                    keep
                }
            })
            .collect();
        let out: Vec<T> = self.data(x).iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(shape, out)?, Op::Dropout(x, mask), rg))
    }

    /// Mean over the time axis: `[T×d] → [d]` or `[B×T×d] → [B×d]`. All frames count.
    pub fn mean_over_time(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let (batch, time, dim, out_shape) = match s.len() {
            2 => (1, s[0], s[1], vec![s[1]]),
            3 => (s[0], s[1], s[2], vec![s[0], s[2]]),
            _ => {
                return Err(Error::Dimension {
                    op: "mean_over_time",
                    lhs: s,
                    rhs: vec![],
                })
            }
        };
        if time == 0 {
            return Err(Error::EmptyDimension {
                op: "mean_over_time",
            });
        }
        let inv = T::from_f64(1.0 / time as f64);
        let xd = self.data(x);
        let mut out = vec![T::zero(); batch * dim];
        for b in 0..batch {
            let acc = &mut out[b * dim..(b + 1) * dim];
            for t in 0..time {
                let row = &xd[(b * time + t) * dim..(b * time + t + 1) * dim];
                for (a, &v) in acc.iter_mut().zip(row) {
                    *a += v;
                }
            }
            for a in acc.iter_mut() {
                *a *= inv;
            }
        }
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::new(out_shape, out)?,
            Op::MeanTime { x, time, dim },
            rg,
        ))
    }

    /// `[B×R×C] → [B×C×R]`.
    pub fn swap_last2(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 {
            return Err(Error::Dimension {
                op: "swap_last2",
                lhs: s,
                rhs: vec![],
            });
        }
        let (batch, rows, cols) = (s[0], s[1], s[2]);
        let xd = self.data(x);
        let mut out = Vec::with_capacity(xd.len());
        for b in 0..batch {
            out.extend(kernels::transpose(rows, cols, &xd[b * rows * cols..(b + 1) * rows * cols]));
        }
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::new(vec![batch, cols, rows], out)?,
            Op::SwapLast2 {
                x,
                batch,
                rows,
                cols,
            },
            rg,
        ))
    }

    /// Keeps the first `keep` entries of the last axis.
    pub fn narrow_last(&mut self, x: Var, keep: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let full = *s.last().ok_or(Error::EmptyDimension { op: "narrow_last" })?;
        if keep > full {
            return Err(Error::Parameter(format!("narrow_last: keep {keep} > {full}")));
        }
        if keep == full {
            return Ok(x);
        }
        let out: Vec<T> = self
            .data(x)
            .chunks(full)
            .flat_map(|r| r[..keep].iter().copied())
            .collect();
        let mut shape = s;
        *shape.last_mut().unwrap() = keep;
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(shape, out)?, Op::NarrowLast { x, keep, full }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape.to_vec())?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    /// Multi-head scaled dot-product self-attention without masking.
    ///
    /// `q`, `k`, `v` are `[B·T×d]` with rows grouped by batch element; heads
    /// split `d` into contiguous slices.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, batch: usize, time: usize, heads: usize) -> Result<Var> {
        self.same_shape("attention", q, k)?;
        self.same_shape("attention", q, v)?;
        let s = self.shape(q).to_vec();
        if s.len() != 2 || s[0] != batch * time || heads == 0 || s[1] % heads != 0 {
            return Err(Error::Dimension {
                op: "attention",
                lhs: s,
                rhs: vec![batch, time, heads],
            });
        }
        let d = s[1];
        let dh = d / heads;
        let scale = T::from_f64(1.0 / (dh as f64).sqrt());
        let mut out = vec![T::zero(); batch * time * d];
        let mut probs = vec![T::zero(); batch * heads * time * time];
        let (qd, kd, vd) = (self.data(q), self.data(k), self.data(v));
        for b in 0..batch {
            for h in 0..heads {
                let qh = gather_head(qd, b, h, time, d, dh);
                let kh = gather_head(kd, b, h, time, d, dh);
                let vh = gather_head(vd, b, h, time, d, dh);
                let p = &mut probs[(b * heads + h) * time * time..(b * heads + h + 1) * time * time];
                kernels::gemm_nt(time, dh, time, &qh, &kh, p);
                for row in p.chunks_mut(time) {
                    for v in row.iter_mut() {
                        *v *= scale;
                    }
                    softmax_row(row);
                }
                let mut oh = vec![T::zero(); time * dh];
                kernels::gemm_nn(time, time, dh, p, &vh, &mut oh);
                scatter_head(&mut out, &oh, b, h, time, d, dh, false);
            }
        }
        bump(|c| c.attention += 1);
        let rg = self.rg(q) || self.rg(k) || self.rg(v);
        Ok(self.push(
            Tensor::new(vec![batch * time, d], out)?,
            Op::Attention {
                q,
                k,
                v,
                batch,
                time,
                heads,
                probs,
            },
            rg,
        ))
    }

    /// Column `col` of a `[B×k]` tensor, as `[B]`.
    pub fn column(&mut self, x: Var, col: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 || col >= s[1] {
            return Err(Error::Dimension {
                op: "column",
                lhs: s,
                rhs: vec![col],
            });
        }
        let cols = s[1];
        let out: Vec<T> = self.data(x).chunks(cols).map(|r| r[col]).collect();
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(vec![s[0]], out)?, Op::Column { x, col, cols }, rg))
    }

    /// Stacks `[B]` or `[B×1]` tensors as the columns of a `[B×k]` tensor.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let b = self.value(parts[0]).len();
        for &p in parts {
            if self.value(p).len() != b {
                return Err(Error::Dimension {
                    op: "concat_cols",
                    lhs: self.shape(parts[0]).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
        }
        let k = parts.len();
        let mut out = vec![T::zero(); b * k];
        for (j, &p) in parts.iter().enumerate() {
            for (i, &v) in self.data(p).iter().enumerate() {
                out[i * k + j] = v;
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::new(vec![b, k], out)?, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// `1 − CCC(pred, label)` over a batch; `label` is a constant.
    pub fn ccc_loss(&mut self, pred: Var, label: &[T], eps: f64) -> Result<Var> {
        let x = self.data(pred);
        if x.len() != label.len() {
            return Err(Error::Dimension {
                op: "ccc_loss",
                lhs: self.shape(pred).to_vec(),
                rhs: vec![label.len()],
            });
        }
        if x.len() < 2 {
            return Err(Error::BatchSize(x.len()));
        }
        let eps = T::from_f64(eps);
        let stats = CccStats::compute(x, label, eps);
        let rg = self.rg(pred);
        Ok(self.push(
            Tensor::scalar(T::one() - stats.ccc()),
            Op::Ccc {
                pred,
                label: label.to_vec(),
                eps,
            },
            rg,
        ))
    }

    /// Reverse sweep from a scalar; gradients accumulate into leaf buffers.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        self.backward_seeded(loss, T::one())
    }

    /// As [`Graph::backward`] but with the seed gradient set to `seed`
    /// (used to apply a loss scale).
    pub fn backward_seeded(&mut self, loss: Var, seed: T) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        if !self.rg(loss) {
            return Ok(());
        }
        let mut adj: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        adj[loss.0] = Some(vec![seed]);
        let mut leaf_grads = Vec::new();
        for i in (0..=loss.0).rev() {
            let Some(mut g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if node.half {
                for v in g.iter_mut() {
                    *v = v.round_half();
                }
            }
            if matches!(node.op, Op::Leaf) {
                leaf_grads.push((i, g));
            } else {
                self.backward_node(i, &g, &mut adj);
            }
        }
        for (i, g) in leaf_grads {
            let slot = &mut self.nodes[i].grad;
            match slot {
                Some(buf) => {
                    for (b, v) in buf.iter_mut().zip(g) {
                        *b += v;
                    }
                }
                None => *slot = Some(g),
            }
        }
        Ok(())
    }

    /// Clears accumulated leaf gradients.
    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn backward_node(&self, i: usize, g: &[T], adj: &mut [Option<Vec<T>>]) {
        let nodes = &self.nodes;
        // Moves the adjoint buffer of `v` out of `adj` (zero-filled on first
        // use); None when `v` needs no gradient. Callers put it back.
        let take = |adj: &mut [Option<Vec<T>>], v: Var| -> Option<Vec<T>> {
            if !nodes[v.0].requires_grad {
                return None;
            }
            Some(
                adj[v.0]
                    .take()
                    .unwrap_or_else(|| vec![T::zero(); nodes[v.0].value.len()]),
            )
        };
        macro_rules! with_slot {
            ($v:expr, |$buf:ident| $body:block) => {
                let v: Var = $v;
                if let Some(mut owned) = take(adj, v) {
                    {
                        let $buf: &mut Vec<T> = &mut owned;
                        $body
                    }
                    adj[v.0] = Some(owned);
                }
            };
        }
        let val = |v: Var| nodes[v.0].value.data();
        match &nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (nodes[a.0].value.shape(), nodes[b.0].value.shape());
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                with_slot!(*a, |da| {
                    kernels::gemm_nt(m, n, k, g, val(*b), da);
                });
                with_slot!(*b, |db| {
                    kernels::gemm_tn(k, m, n, val(*a), g, db);
                });
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    with_slot!(v, |d| {
                        for (x, &y) in d.iter_mut().zip(g) {
                            *x += y;
                        }
                    });
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                with_slot!(*a, |d| {
                    for ((x, &gg), &o) in d.iter_mut().zip(g).zip(bv) {
                        *x += gg * o;
                    }
                });
                with_slot!(*b, |d| {
                    for ((x, &gg), &o) in d.iter_mut().zip(g).zip(av) {
                        *x += gg * o;
                    }
                });
            }
            Op::Scale(a, c) => {
                with_slot!(*a, |d| {
                    for (x, &gg) in d.iter_mut().zip(g) {
                        *x += gg * *c;
                    }
                });
            }
            Op::AddBias(x, b) => {
                with_slot!(*x, |d| {
                    for (a, &gg) in d.iter_mut().zip(g) {
                        *a += gg;
                    }
                });
                with_slot!(*b, |d| {
                    let n = d.len();
                    for row in g.chunks(n) {
                        for (a, &gg) in d.iter_mut().zip(row) {
                            *a += gg;
                        }
                    }
                });
            }
            Op::Sum(a) => {
                with_slot!(*a, |d| {
                    for x in d.iter_mut() {
                        *x += g[0];
                    }
                });
            }
            Op::Gelu(a) => {
                with_slot!(*a, |d| {
                    for ((x, &gg), &v) in d.iter_mut().zip(g).zip(val(*a)) {
                        let z = v.as_f64();
                        *x += gg * T::from_f64(gelu_cdf(z) + z * gelu_pdf(z));
                    }
                });
            }
            Op::Softmax(a) => {
                let y = nodes[i].value.data();
                let n = *nodes[i].value.shape().last().unwrap();
                with_slot!(*a, |d| {
                    for ((dr, gr), yr) in d.chunks_mut(n).zip(g.chunks(n)).zip(y.chunks(n)) {
                        softmax_row_backward(yr, gr, dr);
                    }
                });
            }
            Op::LayerNorm { x, gamma, beta, rstd } => {
                let d = *nodes[i].value.shape().last().unwrap();
                let xv = val(*x);
                let gm = val(*gamma);
                let dn = T::from_f64(d as f64);
                let xhat_row = |r: usize, out: &mut Vec<T>| {
                    let row = &xv[r * d..(r + 1) * d];
                    let mean = row.iter().copied().sum::<T>() / dn;
                    out.clear();
                    out.extend(row.iter().map(|&v| (v - mean) * rstd[r]));
                };
                let mut xhat = Vec::with_capacity(d);
                with_slot!(*gamma, |dg| {
                    for r in 0..rstd.len() {
                        xhat_row(r, &mut xhat);
                        for ((a, &gg), &xh) in dg.iter_mut().zip(&g[r * d..(r + 1) * d]).zip(&xhat) {
                            *a += gg * xh;
                        }
                    }
                });
                with_slot!(*beta, |db| {
                    for row in g.chunks(d) {
                        for (a, &gg) in db.iter_mut().zip(row) {
                            *a += gg;
                        }
                    }
                });
                with_slot!(*x, |dx| {
                    let mut dxhat = vec![T::zero(); d];
                    for r in 0..rstd.len() {
                        xhat_row(r, &mut xhat);
                        let gr = &g[r * d..(r + 1) * d];
                        for ((o, &gg), &gmv) in dxhat.iter_mut().zip(gr).zip(gm) {
                            *o = gg * gmv;
                        }
                        let s1: T = dxhat.iter().copied().sum();
                        let s2: T = dxhat.iter().zip(&xhat).map(|(&a, &b)| a * b).sum();
                        let k = rstd[r] / dn;
                        for ((o, &dh), &xh) in dx[r * d..(r + 1) * d].iter_mut().zip(&dxhat).zip(&xhat) {
                            *o += k * (dn * dh - s1 - xh * s2);
                        }
                    }
                });
            }
            Op::Conv1d { x, w, b, geom, batch } => {
                let (xin, win) = (val(*x), val(*w));
                let xs = geom.c_in * geom.t_in;
                let os = geom.c_out * geom.t_out;
                let mut dx = take(adj, *x);
                let mut dw = take(adj, *w);
                let mut db = b.and_then(|b| take(adj, b));
                for bi in 0..*batch {
                    kernels::conv1d_backward(
                        geom,
                        &xin[bi * xs..(bi + 1) * xs],
                        win,
                        &g[bi * os..(bi + 1) * os],
                        dx.as_deref_mut().map(|d| &mut d[bi * xs..(bi + 1) * xs]),
                        dw.as_deref_mut(),
                        db.as_deref_mut(),
                    );
                }
                if let (Some(b), Some(buf)) = (b, db) {
                    adj[b.0] = Some(buf);
                }
                if let Some(buf) = dw {
                    adj[w.0] = Some(buf);
                }
                if let Some(buf) = dx {
                    adj[x.0] = Some(buf);
                }
            }
            Op::Dropout(x, mask) => {
                with_slot!(*x, |d| {
                    for ((a, &gg), &m) in d.iter_mut().zip(g).zip(mask) {
                        *a += gg * m;
                    }
                });
            }
            Op::MeanTime { x, time, dim } => {
                let inv = T::from_f64(1.0 / *time as f64);
                with_slot!(*x, |d| {
                    for (r, row) in d.chunks_mut(*dim).enumerate() {
                        let b = r / time;
                        for (a, &gg) in row.iter_mut().zip(&g[b * dim..(b + 1) * dim]) {
                            *a += gg * inv;
                        }
                    }
                });
            }
            Op::SwapLast2 { x, batch, rows, cols } => {
                with_slot!(*x, |d| {
                    let n = rows * cols;
                    for b in 0..*batch {
                        let gt = kernels::transpose(*cols, *rows, &g[b * n..(b + 1) * n]);
                        for (a, v) in d[b * n..(b + 1) * n].iter_mut().zip(gt) {
                            *a += v;
                        }
                    }
                });
            }
            Op::NarrowLast { x, keep, full } => {
                with_slot!(*x, |d| {
                    for (dr, gr) in d.chunks_mut(*full).zip(g.chunks(*keep)) {
                        for (a, &gg) in dr.iter_mut().zip(gr) {
                            *a += gg;
                        }
                    }
                });
            }
            Op::Reshape(x) => {
                with_slot!(*x, |d| {
                    for (a, &gg) in d.iter_mut().zip(g) {
                        *a += gg;
                    }
                });
            }
            Op::Attention {
                q,
                k,
                v,
                batch,
                time,
                heads,
                probs,
            } => {
                let d = nodes[q.0].value.shape()[1];
                let dh = d / heads;
                let t = *time;
                let scale = T::from_f64(1.0 / (dh as f64).sqrt());
                let (qd, kd, vd) = (val(*q), val(*k), val(*v));
                let (need_q, need_k) = (nodes[q.0].requires_grad, nodes[k.0].requires_grad);
                for b in 0..*batch {
                    for h in 0..*heads {
                        let p = &probs[(b * heads + h) * t * t..(b * heads + h + 1) * t * t];
                        let go = gather_head(g, b, h, t, d, dh);
                        let vh = gather_head(vd, b, h, t, d, dh);
                        with_slot!(*v, |sv| {
                            let mut dv = vec![T::zero(); t * dh];
                            kernels::gemm_tn(t, t, dh, p, &go, &mut dv);
                            scatter_head(sv, &dv, b, h, t, d, dh, true);
                        });
                        if !need_q && !need_k {
                            continue;
                        }
                        let mut dp = vec![T::zero(); t * t];
                        kernels::gemm_nt(t, dh, t, &go, &vh, &mut dp);
                        let mut ds = vec![T::zero(); t * t];
                        for ((dsr, dpr), pr) in ds.chunks_mut(t).zip(dp.chunks(t)).zip(p.chunks(t)) {
                            softmax_row_backward(pr, dpr, dsr);
                            for x in dsr.iter_mut() {
                                *x *= scale;
                            }
                        }
                        with_slot!(*q, |sq| {
                            let kh = gather_head(kd, b, h, t, d, dh);
                            let mut dq = vec![T::zero(); t * dh];
                            kernels::gemm_nn(t, t, dh, &ds, &kh, &mut dq);
                            scatter_head(sq, &dq, b, h, t, d, dh, true);
                        });
                        with_slot!(*k, |sk| {
                            let qh = gather_head(qd, b, h, t, d, dh);
                            let mut dk = vec![T::zero(); t * dh];
                            kernels::gemm_tn(t, t, dh, &ds, &qh, &mut dk);
                            scatter_head(sk, &dk, b, h, t, d, dh, true);
                        });
                    }
                }
            }
            Op::Column { x, col, cols } => {
                with_slot!(*x, |d| {
                    for (r, &gg) in g.iter().enumerate() {
                        d[r * cols + col] += gg;
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let k = parts.len();
                for (j, &p) in parts.iter().enumerate() {
                    with_slot!(p, |d| {
                        for (r, a) in d.iter_mut().enumerate() {
                            *a += g[r * k + j];
                        }
                    });
                }
            }
            Op::Ccc { pred, label, eps } => {
                let x = val(*pred);
                let st = CccStats::compute(x, label, *eps);
                with_slot!(*pred, |d| {
                    let n = T::from_f64(x.len() as f64);
                    let num = st.cov + st.cov;
                    let den = st.den();
                    let two = T::one() + T::one();
                    let dmean = two * (st.mean_x - st.mean_y) / n;
                    for ((a, &xi), &yi) in d.iter_mut().zip(x).zip(label) {
                        let dnum = two * (yi - st.mean_y) / n;
                        let dden = two * (xi - st.mean_x) / n + dmean;
                        let dccc = (dnum * den - num * dden) / (den * den);
                        *a -= g[0] * dccc;
                    }
                });
            }
        }
    }
}

fn softmax_row<T: Real>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v = *v / total;
    }
}

fn softmax_row_backward<T: Real>(y: &[T], g: &[T], out: &mut [T]) {
    let dot: T = y.iter().zip(g).map(|(&a, &b)| a * b).sum();
    for ((o, &yy), &gg) in out.iter_mut().zip(y).zip(g) {
        *o += yy * (gg - dot);
    }
}

fn gather_head<T: Real>(x: &[T], b: usize, h: usize, time: usize, d: usize, dh: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(time * dh);
    for t in 0..time {
        let start = (b * time + t) * d + h * dh;
        out.extend_from_slice(&x[start..start + dh]);
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn scatter_head<T: Real>(out: &mut [T], src: &[T], b: usize, h: usize, time: usize, d: usize, dh: usize, acc: bool) {
    for t in 0..time {
        let start = (b * time + t) * d + h * dh;
        let dst = &mut out[start..start + dh];
        let s = &src[t * dh..(t + 1) * dh];
        if acc {
            for (a, &v) in dst.iter_mut().zip(s) {
                *a += v;
            }
        } else {
            dst.copy_from_slice(s);
        }
    }
}

/// Population moments behind the concordance correlation coefficient.
#[derive(Debug, Clone, Copy)]
pub(crate) struct CccStats<T> {
    pub mean_x: T,
    pub mean_y: T,
    pub var_x: T,
    pub var_y: T,
    pub cov: T,
    pub eps: T,
}

impl<T: Real> CccStats<T> {
    pub fn compute(x: &[T], y: &[T], eps: T) -> Self {
        let n = T::from_f64(x.len() as f64);
        let mean_x = x.iter().copied().sum::<T>() / n;
        let mean_y = y.iter().copied().sum::<T>() / n;
        let mut var_x = T::zero();
        let mut var_y = T::zero();
        let mut cov = T::zero();
        for (&a, &b) in x.iter().zip(y) {
            let (dx, dy) = (a - mean_x, b - mean_y);
            var_x += dx * dx;
            var_y += dy * dy;
            cov += dx * dy;
        }
        Self {
            mean_x,
            mean_y,
            var_x: var_x / n,
            var_y: var_y / n,
            cov: cov / n,
            eps,
        }
    }

    pub fn den(&self) -> T {
        let dm = self.mean_x - self.mean_y;
        self.var_x + self.var_y + dm * dm + self.eps
    }

    pub fn ccc(&self) -> T {
        (self.cov + self.cov) / self.den()
    }
}
