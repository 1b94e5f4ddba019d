//! Tensor reverse-mode differentiation.
//!
//! A [`Tape`] records one forward computation as a topologically ordered list
//! of op nodes; [`Tape::backward`] replays it once in reverse, accumulating
//! gradients additively across fan-out. The op set is exactly what the
//! encoder/head architectures and losses in this crate need.

mod adam;
mod gradcheck;
pub(crate) mod kernels;

pub use adam::{AdamConfig, AdamError, AdamState};
pub use gradcheck::{grad_check, grad_check_sampled, GradCheckEntry, GradCheckReport};

use crate::scalar::Scalar;
use crate::tensor::Tensor;
use kernels::{col2im, gemm_nn, gemm_nt, gemm_tn, gemm_tn_acc, im2col, ConvGeom};

#[derive(Debug, thiserror::Error)]
pub enum AutodiffError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: expected {expected}, got shape {got:?}")]
    BadShape {
        op: &'static str,
        expected: String,
        got: Vec<usize>,
    },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("backward already ran on this tape; reset it before reusing")]
    BackwardTwice,
    #[error("backward on an empty tape")]
    EmptyTape,
    #[error("{op}: label {label} out of range for {classes} classes")]
    LabelOutOfRange {
        op: &'static str,
        label: usize,
        classes: usize,
    },
    #[error("{op}: row {row} has zero norm")]
    ZeroNorm { op: &'static str, row: usize },
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

struct Slot<S> {
    value: Tensor<S>,
    requires_grad: bool,
    grad: Option<Tensor<S>>,
}

/// Reduction axis for 2-d ops.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

enum Node {
    Matmul { a: usize, b: usize, out: usize, transpose_b: bool },
    Conv2d { x: usize, w: usize, out: usize, geom: ConvGeom },
    BiasAdd { x: usize, b: usize, out: usize },
    Relu { x: usize, out: usize },
    Add { a: usize, b: usize, out: usize },
    Sub { a: usize, b: usize, out: usize },
    Mul { a: usize, b: usize, out: usize },
    MulScalar { x: usize, out: usize, c: f64 },
    MeanAll { x: usize, out: usize },
    SumAxis { x: usize, out: usize, axis: Axis },
    Gap { x: usize, out: usize },
    L2NormalizeRows { x: usize, out: usize },
    LogSumExp { x: usize, out: usize, axis: Axis },
    SoftmaxXent { logits: usize, out: usize, targets: Vec<usize> },
    Mse { a: usize, b: usize, out: usize },
}

/// Records ops over [`Tensor`] values and differentiates a scalar loss.
pub struct Tape<S> {
    slots: Vec<Slot<S>>,
    nodes: Vec<Node>,
    back_done: bool,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Self {
            slots: Vec::new(),
            nodes: Vec::new(),
            back_done: false,
        }
    }

    /// Clears all recorded values, nodes and gradients.
    pub fn reset(&mut self) {
        self.slots.clear();
        self.nodes.clear();
        self.back_done = false;
    }

    /// Records a constant (no gradient will flow into it).
    pub fn input(&mut self, value: Tensor<S>) -> Var {
        self.push_unchecked(value, false)
    }

    /// Records a trainable value; `backward` populates its gradient.
    pub fn param(&mut self, value: Tensor<S>) -> Var {
        self.push_unchecked(value, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.slots[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor<S>> {
        self.slots[v.0].grad.as_ref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.slots[v.0].requires_grad
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    fn push_unchecked(&mut self, value: Tensor<S>, requires_grad: bool) -> Var {
        let id = self.slots.len();
        self.slots.push(Slot {
            value,
            requires_grad,
            grad: None,
        });
        Var(id)
    }

    /// Pushes an op output; the node is recorded only when gradient can flow.
    fn push_op(
        &mut self,
        op: &'static str,
        value: Tensor<S>,
        requires_grad: bool,
        node: impl FnOnce(usize) -> Node,
    ) -> Result<Var, AutodiffError> {
        if !value.all_finite() {
            return Err(AutodiffError::NonFinite { op });
        }
        let id = self.slots.len();
        if requires_grad {
            self.nodes.push(node(id));
        }
        self.slots.push(Slot {
            value,
            requires_grad,
            grad: None,
        });
        Ok(Var(id))
    }

    fn shape2(&self, op: &'static str, v: Var) -> Result<(usize, usize), AutodiffError> {
        match self.value(v).shape() {
            [m, n] => Ok((*m, *n)),
            other => Err(AutodiffError::BadShape {
                op,
                expected: "2-d tensor".into(),
                got: other.to_vec(),
            }),
        }
    }

    // ---- forward ops ----

    /// `a[m,k] · b[k,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (m, k) = self.shape2("matmul", a)?;
        let (k2, n) = self.shape2("matmul", b)?;
        if k != k2 {
            return Err(AutodiffError::ShapeMismatch {
                op: "matmul",
                lhs: vec![m, k],
                rhs: vec![k2, n],
            });
        }
        let mut out = Tensor::zeros(&[m, n]);
        gemm_nn(m, k, n, self.value(a).data(), self.value(b).data(), out.data_mut());
        let req = self.requires_grad(a) || self.requires_grad(b);
        self.push_op("matmul", out, req, |id| Node::Matmul {
            a: a.0,
            b: b.0,
            out: id,
            transpose_b: false,
        })
    }

    /// `a[m,k] · b[n,k]ᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (m, k) = self.shape2("matmul_nt", a)?;
        let (n, k2) = self.shape2("matmul_nt", b)?;
        if k != k2 {
            return Err(AutodiffError::ShapeMismatch {
                op: "matmul_nt",
                lhs: vec![m, k],
                rhs: vec![n, k2],
            });
        }
        let mut out = Tensor::zeros(&[m, n]);
        gemm_nt(m, k, n, self.value(a).data(), self.value(b).data(), out.data_mut());
        let req = self.requires_grad(a) || self.requires_grad(b);
        self.push_op("matmul_nt", out, req, |id| Node::Matmul {
            a: a.0,
            b: b.0,
            out: id,
            transpose_b: true,
        })
    }

    /// 2-d convolution with zero padding: x[n,cin,h,w] * w[cout,cin,kh,kw].
    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var, AutodiffError> {
        let xs = self.value(x).shape().to_vec();
        let ws = self.value(w).shape().to_vec();
        let (&[n, cin, h, wid], &[cout, cin_w, kh, kw]) = match (xs.as_slice(), ws.as_slice()) {
            (x4 @ [_, _, _, _], w4 @ [_, _, _, _]) => {
                (x4.try_into().unwrap(), w4.try_into().unwrap())
            }
            _ => {
                return Err(AutodiffError::BadShape {
                    op: "conv2d",
                    expected: "4-d input and 4-d weight".into(),
                    got: if xs.len() == 4 { ws } else { xs },
                })
            }
        };
        if cin != cin_w {
            return Err(AutodiffError::ShapeMismatch {
                op: "conv2d",
                lhs: xs,
                rhs: ws,
            });
        }
        if stride == 0 {
            return Err(AutodiffError::BadShape {
                op: "conv2d",
                expected: "stride >= 1".into(),
                got: vec![stride],
            });
        }
        if h + 2 * pad < kh || wid + 2 * pad < kw {
            return Err(AutodiffError::ShapeMismatch {
                op: "conv2d",
                lhs: xs,
                rhs: ws,
            });
        }
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (wid + 2 * pad - kw) / stride + 1;
        let geom = ConvGeom {
            cin,
            h,
            w: wid,
            cout,
            kh,
            kw,
            stride,
            pad,
            ho,
            wo,
        };
        let patch = geom.patch_len();
        let pos = geom.out_positions();
        let mut out = Tensor::zeros(&[n, cout, ho, wo]);
        let mut col = vec![S::zero(); pos * patch];
        let mut tmp = vec![S::zero(); pos * cout];
        let xdata = self.value(x).data();
        let wdata = self.value(w).data();
        for img in 0..n {
            im2col(&xdata[img * cin * h * wid..(img + 1) * cin * h * wid], &geom, &mut col);
            gemm_nt(pos, patch, cout, &col, wdata, &mut tmp);
            let obase = img * cout * pos;
            for p in 0..pos {
                for co in 0..cout {
                    out.data_mut()[obase + co * pos + p] = tmp[p * cout + co];
                }
            }
        }
        let req = self.requires_grad(x) || self.requires_grad(w);
        self.push_op("conv2d", out, req, |id| Node::Conv2d {
            x: x.0,
            w: w.0,
            out: id,
            geom,
        })
    }

    /// Adds a per-channel bias to `[n,c]` or `[n,c,h,w]`.
    pub fn bias_add(&mut self, x: Var, b: Var) -> Result<Var, AutodiffError> {
        let xs = self.value(x).shape().to_vec();
        let bs = self.value(b).shape().to_vec();
        let c = match xs.as_slice() {
            [_, c] | [_, c, _, _] => *c,
            _ => {
                return Err(AutodiffError::BadShape {
                    op: "bias_add",
                    expected: "2-d or 4-d input".into(),
                    got: xs,
                })
            }
        };
        if bs != [c] {
            return Err(AutodiffError::ShapeMismatch {
                op: "bias_add",
                lhs: xs,
                rhs: bs,
            });
        }
        let inner: usize = xs[2..].iter().product::<usize>().max(1);
        let mut out = self.value(x).clone();
        let bdata = self.value(b).data().to_vec();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            let ch = (i / inner) % c;
            *v = *v + bdata[ch];
        }
        let req = self.requires_grad(x) || self.requires_grad(b);
        self.push_op("bias_add", out, req, |id| Node::BiasAdd {
            x: x.0,
            b: b.0,
            out: id,
        })
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let out = self.value(x).map(|v| if v > S::zero() { v } else { S::zero() });
        let req = self.requires_grad(x);
        self.push_op("relu", out, req, |id| Node::Relu { x: x.0, out: id })
    }

    fn elementwise(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(S, S) -> S,
        node: impl FnOnce(usize) -> Node,
    ) -> Result<Var, AutodiffError> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(AutodiffError::ShapeMismatch {
                op,
                lhs: self.value(a).shape().to_vec(),
                rhs: self.value(b).shape().to_vec(),
            });
        }
        let data: Vec<S> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let out = Tensor::from_vec(self.value(a).shape(), data).expect("same shape");
        let req = self.requires_grad(a) || self.requires_grad(b);
        self.push_op(op, out, req, node)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.elementwise("add", a, b, |x, y| x + y, |id| Node::Add { a: a.0, b: b.0, out: id })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.elementwise("sub", a, b, |x, y| x - y, |id| Node::Sub { a: a.0, b: b.0, out: id })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.elementwise("mul", a, b, |x, y| x * y, |id| Node::Mul { a: a.0, b: b.0, out: id })
    }

    pub fn mul_scalar(&mut self, x: Var, c: f64) -> Result<Var, AutodiffError> {
        let out = self.value(x).map(|v| S::from_acc(v.to_acc() * c));
        let req = self.requires_grad(x);
        self.push_op("mul_scalar", out, req, |id| Node::MulScalar { x: x.0, out: id, c })
    }

    /// Mean over every element, yielding a scalar.
    pub fn mean_all(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let t = self.value(x);
        let sum: f64 = t.data().iter().map(|v| v.to_acc()).sum();
        let out = Tensor::scalar(S::from_acc(sum / t.numel() as f64));
        let req = self.requires_grad(x);
        self.push_op("mean_all", out, req, |id| Node::MeanAll { x: x.0, out: id })
    }

    /// Sums a 2-d tensor along one axis.
    pub fn sum_axis(&mut self, x: Var, axis: Axis) -> Result<Var, AutodiffError> {
        let (m, n) = self.shape2("sum_axis", x)?;
        let data = self.value(x).data();
        let out = match axis {
            Axis::Cols => {
                // sum over columns -> one value per row
                let v: Vec<S> = (0..m)
                    .map(|i| {
                        let s: f64 = data[i * n..(i + 1) * n].iter().map(|v| v.to_acc()).sum();
                        S::from_acc(s)
                    })
                    .collect();
                Tensor::from_vec(&[m], v).expect("len m")
            }
            Axis::Rows => {
                let mut acc = vec![0.0f64; n];
                for i in 0..m {
                    for j in 0..n {
                        acc[j] += data[i * n + j].to_acc();
                    }
                }
                Tensor::from_vec(&[n], acc.into_iter().map(S::from_acc).collect()).expect("len n")
            }
        };
        let req = self.requires_grad(x);
        self.push_op("sum_axis", out, req, |id| Node::SumAxis { x: x.0, out: id, axis })
    }

    /// Mean along one axis of a 2-d tensor.
    pub fn mean_axis(&mut self, x: Var, axis: Axis) -> Result<Var, AutodiffError> {
        let (m, n) = self.shape2("mean_axis", x)?;
        let s = self.sum_axis(x, axis)?;
        let len = match axis {
            Axis::Cols => n,
            Axis::Rows => m,
        };
        self.mul_scalar(s, 1.0 / len as f64)
    }

    /// Global average pool: `[n,c,h,w]` -> `[n,c]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let xs = self.value(x).shape().to_vec();
        let (n, c, h, w) = match xs.as_slice() {
            [n, c, h, w] => (*n, *c, *h, *w),
            _ => {
                return Err(AutodiffError::BadShape {
                    op: "global_avg_pool",
                    expected: "4-d input".into(),
                    got: xs,
                })
            }
        };
        let hw = h * w;
        let data = self.value(x).data();
        let mut out = Tensor::zeros(&[n, c]);
        for i in 0..n * c {
            let s: f64 = data[i * hw..(i + 1) * hw].iter().map(|v| v.to_acc()).sum();
            out.data_mut()[i] = S::from_acc(s / hw as f64);
        }
        let req = self.requires_grad(x);
        self.push_op("global_avg_pool", out, req, |id| Node::Gap { x: x.0, out: id })
    }

    /// L2-normalizes each row of a 2-d tensor. Errors on a zero row.
    pub fn l2_normalize_rows(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let (m, n) = self.shape2("l2_normalize_rows", x)?;
        let data = self.value(x).data();
        let mut out = Tensor::zeros(&[m, n]);
        for i in 0..m {
            let row = &data[i * n..(i + 1) * n];
            let norm = row.iter().map(|v| v.to_acc() * v.to_acc()).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(AutodiffError::ZeroNorm {
                    op: "l2_normalize_rows",
                    row: i,
                });
            }
            for j in 0..n {
                out.data_mut()[i * n + j] = S::from_acc(row[j].to_acc() / norm);
            }
        }
        let req = self.requires_grad(x);
        self.push_op("l2_normalize_rows", out, req, |id| Node::L2NormalizeRows { x: x.0, out: id })
    }

    /// log(Σ exp) along an axis of a 2-d tensor, computed stably.
    pub fn logsumexp(&mut self, x: Var, axis: Axis) -> Result<Var, AutodiffError> {
        let (m, n) = self.shape2("logsumexp", x)?;
        let data = self.value(x).data();
        let out = match axis {
            Axis::Cols => {
                let v: Vec<S> = (0..m)
                    .map(|i| {
                        let row = &data[i * n..(i + 1) * n];
                        S::from_acc(lse_f64(row.iter().map(|v| v.to_acc())))
                    })
                    .collect();
                Tensor::from_vec(&[m], v).expect("len m")
            }
            Axis::Rows => {
                let v: Vec<S> = (0..n)
                    .map(|j| S::from_acc(lse_f64((0..m).map(|i| data[i * n + j].to_acc()))))
                    .collect();
                Tensor::from_vec(&[n], v).expect("len n")
            }
        };
        let req = self.requires_grad(x);
        self.push_op("logsumexp", out, req, |id| Node::LogSumExp { x: x.0, out: id, axis })
    }

    /// Mean softmax cross-entropy of `[n,k]` logits against class indices.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var, AutodiffError> {
        let (n, k) = self.shape2("softmax_cross_entropy", logits)?;
        if targets.len() != n {
            return Err(AutodiffError::BadShape {
                op: "softmax_cross_entropy",
                expected: format!("{n} targets"),
                got: vec![targets.len()],
            });
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= k) {
            return Err(AutodiffError::LabelOutOfRange {
                op: "softmax_cross_entropy",
                label: bad,
                classes: k,
            });
        }
        let data = self.value(logits).data();
        let mut total = 0.0f64;
        for (i, &t) in targets.iter().enumerate() {
            let row = &data[i * k..(i + 1) * k];
            let lse = lse_f64(row.iter().map(|v| v.to_acc()));
            total += lse - row[t].to_acc();
        }
        let out = Tensor::scalar(S::from_acc(total / n as f64));
        let req = self.requires_grad(logits);
        let targets = targets.to_vec();
        self.push_op("softmax_cross_entropy", out, req, move |id| Node::SoftmaxXent {
            logits: logits.0,
            out: id,
            targets,
        })
    }

    /// Mean squared error over all elements of two same-shaped tensors.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(AutodiffError::ShapeMismatch {
                op: "mse",
                lhs: self.value(a).shape().to_vec(),
                rhs: self.value(b).shape().to_vec(),
            });
        }
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let total: f64 = ad
            .iter()
            .zip(bd)
            .map(|(&x, &y)| {
                let d = x.to_acc() - y.to_acc();
                d * d
            })
            .sum();
        let out = Tensor::scalar(S::from_acc(total / ad.len() as f64));
        let req = self.requires_grad(a) || self.requires_grad(b);
        self.push_op("mse", out, req, |id| Node::Mse { a: a.0, b: b.0, out: id })
    }

    // ---- backward ----

    /// Populates gradients for every recorded value reachable from `loss`.
    /// Calling it twice without [`Tape::reset`] is an error.
    pub fn backward(&mut self, loss: Var) -> Result<(), AutodiffError> {
        if self.back_done {
            return Err(AutodiffError::BackwardTwice);
        }
        if !self.slots[loss.0].value.is_scalar() {
            return Err(AutodiffError::NonScalarLoss(
                self.slots[loss.0].value.shape().to_vec(),
            ));
        }
        if self.nodes.is_empty() {
            return Err(AutodiffError::EmptyTape);
        }
        self.back_done = true;
        self.slots[loss.0].grad = Some(Tensor::scalar(S::one()));
        for idx in (0..self.nodes.len()).rev() {
            let out = node_out(&self.nodes[idx]);
            if self.slots[out].grad.is_none() {
                continue;
            }
            let contributions = self.node_backward(idx);
            for (target, grad) in contributions {
                match &mut self.slots[target].grad {
                    Some(existing) => existing.add_assign(&grad),
                    slot @ None => *slot = Some(grad),
                }
            }
        }
        Ok(())
    }

    fn node_backward(&self, idx: usize) -> Vec<(usize, Tensor<S>)> {
        let node = &self.nodes[idx];
        let g = self.slots[node_out(node)].grad.as_ref().expect("checked");
        let mut outp: Vec<(usize, Tensor<S>)> = Vec::new();
        let needs = |id: usize| self.slots[id].requires_grad;
        match node {
            Node::Matmul { a, b, out: _, transpose_b } => {
                let av = &self.slots[*a].value;
                let bv = &self.slots[*b].value;
                let (m, k) = (av.shape()[0], av.shape()[1]);
                let n = if *transpose_b { bv.shape()[0] } else { bv.shape()[1] };
                if !*transpose_b {
                    if needs(*a) {
                        let mut da = Tensor::zeros(&[m, k]);
                        gemm_nt(m, n, k, g.data(), bv.data(), da.data_mut());
                        outp.push((*a, da));
                    }
                    if needs(*b) {
                        let mut db = Tensor::zeros(&[k, n]);
                        gemm_tn(k, m, n, av.data(), g.data(), db.data_mut());
                        outp.push((*b, db));
                    }
                } else {
                    // C = A · Bᵀ with B stored as [n, k]
                    if needs(*a) {
                        let mut da = Tensor::zeros(&[m, k]);
                        gemm_nn(m, n, k, g.data(), bv.data(), da.data_mut());
                        outp.push((*a, da));
                    }
                    if needs(*b) {
                        let mut db = Tensor::zeros(&[n, k]);
                        gemm_tn(n, m, k, g.data(), av.data(), db.data_mut());
                        outp.push((*b, db));
                    }
                }
            }
            Node::Conv2d { x, w, out: _, geom } => {
                let xv = &self.slots[*x].value;
                let wv = &self.slots[*w].value;
                let n = xv.shape()[0];
                let (pos, patch, chw) = (geom.out_positions(), geom.patch_len(), geom.cin * geom.h * geom.w);
                let mut col = vec![S::zero(); pos * patch];
                let mut dout_pc = vec![S::zero(); pos * geom.cout];
                let gdata = g.data();
                let mut dx = if needs(*x) { Some(Tensor::zeros(xv.shape())) } else { None };
                let mut dw_acc = if needs(*w) { Some(vec![0.0f64; geom.cout * patch]) } else { None };
                let mut dcol = vec![S::zero(); pos * patch];
                for img in 0..n {
                    let gbase = img * geom.cout * pos;
                    for p in 0..pos {
                        for co in 0..geom.cout {
                            dout_pc[p * geom.cout + co] = gdata[gbase + co * pos + p];
                        }
                    }
                    if let Some(dx) = dx.as_mut() {
                        gemm_nn(pos, geom.cout, patch, &dout_pc, wv.data(), &mut dcol);
                        col2im(&dcol, geom, &mut dx.data_mut()[img * chw..(img + 1) * chw]);
                    }
                    if let Some(acc) = dw_acc.as_mut() {
                        im2col(&xv.data()[img * chw..(img + 1) * chw], geom, &mut col);
                        gemm_tn_acc(geom.cout, pos, patch, &dout_pc, &col, acc);
                    }
                }
                if let Some(dx) = dx {
                    outp.push((*x, dx));
                }
                if let Some(acc) = dw_acc {
                    let dw = Tensor::from_vec(wv.shape(), acc.into_iter().map(S::from_acc).collect())
                        .expect("weight shape");
                    outp.push((*w, dw));
                }
            }
            Node::BiasAdd { x, b, out: _ } => {
                if needs(*x) {
                    outp.push((*x, g.clone()));
                }
                if needs(*b) {
                    let xs = self.slots[*x].value.shape();
                    let c = self.slots[*b].value.numel();
                    let inner: usize = xs[2..].iter().product::<usize>().max(1);
                    let mut acc = vec![0.0f64; c];
                    for (i, v) in g.data().iter().enumerate() {
                        acc[(i / inner) % c] += v.to_acc();
                    }
                    let db = Tensor::from_vec(&[c], acc.into_iter().map(S::from_acc).collect())
                        .expect("len c");
                    outp.push((*b, db));
                }
            }
            Node::Relu { x, out: _ } => {
                if needs(*x) {
                    let xv = &self.slots[*x].value;
                    let data: Vec<S> = xv
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(&x, &gv)| if x > S::zero() { gv } else { S::zero() })
                        .collect();
                    outp.push((*x, Tensor::from_vec(xv.shape(), data).expect("same shape")));
                }
            }
            Node::Add { a, b, out: _ } => {
                if needs(*a) {
                    outp.push((*a, g.clone()));
                }
                if needs(*b) {
                    outp.push((*b, g.clone()));
                }
            }
            Node::Sub { a, b, out: _ } => {
                if needs(*a) {
                    outp.push((*a, g.clone()));
                }
                if needs(*b) {
                    outp.push((*b, g.map(|v| -v)));
                }
            }
            Node::Mul { a, b, out: _ } => {
                let av = &self.slots[*a].value;
                let bv = &self.slots[*b].value;
                if needs(*a) {
                    let data: Vec<S> = g.data().iter().zip(bv.data()).map(|(&gv, &y)| gv * y).collect();
                    outp.push((*a, Tensor::from_vec(av.shape(), data).expect("same shape")));
                }
                if needs(*b) {
                    let data: Vec<S> = g.data().iter().zip(av.data()).map(|(&gv, &x)| gv * x).collect();
                    outp.push((*b, Tensor::from_vec(bv.shape(), data).expect("same shape")));
                }
            }
            Node::MulScalar { x, out: _, c } => {
                if needs(*x) {
                    outp.push((*x, g.map(|v| S::from_acc(v.to_acc() * c))));
                }
            }
            Node::MeanAll { x, out: _ } => {
                if needs(*x) {
                    let xv = &self.slots[*x].value;
                    let gv = g.scalar_value().to_acc() / xv.numel() as f64;
                    outp.push((*x, Tensor::filled(xv.shape(), S::from_acc(gv))));
                }
            }
            Node::SumAxis { x, out: _, axis } => {
                if needs(*x) {
                    let xv = &self.slots[*x].value;
                    let (m, n) = (xv.shape()[0], xv.shape()[1]);
                    let mut dx = Tensor::zeros(&[m, n]);
                    let gd = g.data();
                    for i in 0..m {
                        for j in 0..n {
                            dx.data_mut()[i * n + j] = match axis {
                                Axis::Cols => gd[i],
                                Axis::Rows => gd[j],
                            };
                        }
                    }
                    outp.push((*x, dx));
                }
            }
            Node::Gap { x, out: _ } => {
                if needs(*x) {
                    let xv = &self.slots[*x].value;
                    let hw: usize = xv.shape()[2] * xv.shape()[3];
                    let mut dx = Tensor::zeros(xv.shape());
                    for (i, v) in dx.data_mut().iter_mut().enumerate() {
                        *v = S::from_acc(g.data()[i / hw].to_acc() / hw as f64);
                    }
                    outp.push((*x, dx));
                }
            }
            Node::L2NormalizeRows { x, out } => {
                if needs(*x) {
                    let xv = &self.slots[*x].value;
                    let yv = &self.slots[*out].value;
                    let (m, n) = (xv.shape()[0], xv.shape()[1]);
                    let mut dx = Tensor::zeros(&[m, n]);
                    for i in 0..m {
                        let xrow = &xv.data()[i * n..(i + 1) * n];
                        let yrow = &yv.data()[i * n..(i + 1) * n];
                        let grow = &g.data()[i * n..(i + 1) * n];
                        let norm = xrow.iter().map(|v| v.to_acc() * v.to_acc()).sum::<f64>().sqrt();
                        let dot: f64 = yrow.iter().zip(grow).map(|(&y, &gv)| y.to_acc() * gv.to_acc()).sum();
                        for j in 0..n {
                            let v = (grow[j].to_acc() - yrow[j].to_acc() * dot) / norm;
                            dx.data_mut()[i * n + j] = S::from_acc(v);
                        }
                    }
                    outp.push((*x, dx));
                }
            }
            Node::LogSumExp { x, out, axis } => {
                if needs(*x) {
                    let xv = &self.slots[*x].value;
                    let lse = &self.slots[*out].value;
                    let (m, n) = (xv.shape()[0], xv.shape()[1]);
                    let mut dx = Tensor::zeros(&[m, n]);
                    for i in 0..m {
                        for j in 0..n {
                            let (li, gi) = match axis {
                                Axis::Cols => (lse.data()[i], g.data()[i]),
                                Axis::Rows => (lse.data()[j], g.data()[j]),
                            };
                            let soft = (xv.data()[i * n + j].to_acc() - li.to_acc()).exp();
                            dx.data_mut()[i * n + j] = S::from_acc(soft * gi.to_acc());
                        }
                    }
                    outp.push((*x, dx));
                }
            }
            Node::SoftmaxXent { logits, out: _, targets } => {
                if needs(*logits) {
                    let lv = &self.slots[*logits].value;
                    let (n, k) = (lv.shape()[0], lv.shape()[1]);
                    let gs = g.scalar_value().to_acc() / n as f64;
                    let mut dx = Tensor::zeros(&[n, k]);
                    for i in 0..n {
                        let row = &lv.data()[i * k..(i + 1) * k];
                        let lse = lse_f64(row.iter().map(|v| v.to_acc()));
                        for j in 0..k {
                            let soft = (row[j].to_acc() - lse).exp();
                            let ind = if targets[i] == j { 1.0 } else { 0.0 };
                            dx.data_mut()[i * k + j] = S::from_acc((soft - ind) * gs);
                        }
                    }
                    outp.push((*logits, dx));
                }
            }
            Node::Mse { a, b, out: _ } => {
                let av = &self.slots[*a].value;
                let bv = &self.slots[*b].value;
                let scale = 2.0 * g.scalar_value().to_acc() / av.numel() as f64;
                if needs(*a) {
                    let data: Vec<S> = av
                        .data()
                        .iter()
                        .zip(bv.data())
                        .map(|(&x, &y)| S::from_acc((x.to_acc() - y.to_acc()) * scale))
                        .collect();
                    outp.push((*a, Tensor::from_vec(av.shape(), data).expect("same shape")));
                }
                if needs(*b) {
                    let data: Vec<S> = av
                        .data()
                        .iter()
                        .zip(bv.data())
                        .map(|(&x, &y)| S::from_acc((y.to_acc() - x.to_acc()) * scale))
                        .collect();
                    outp.push((*b, Tensor::from_vec(bv.shape(), data).expect("same shape")));
                }
            }
        }
        outp
    }
}

fn node_out(node: &Node) -> usize {
    match node {
        Node::Matmul { out, .. }
        | Node::Conv2d { out, .. }
        | Node::BiasAdd { out, .. }
        | Node::Relu { out, .. }
        | Node::Add { out, .. }
        | Node::Sub { out, .. }
        | Node::Mul { out, .. }
        | Node::MulScalar { out, .. }
        | Node::MeanAll { out, .. }
        | Node::SumAxis { out, .. }
        | Node::Gap { out, .. }
        | Node::L2NormalizeRows { out, .. }
        | Node::LogSumExp { out, .. }
        | Node::SoftmaxXent { out, .. }
        | Node::Mse { out, .. } => *out,
    }
}

/// Stable log-sum-exp of an iterator of f64 values.
pub(crate) fn lse_f64(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = values.map(|v| (v - max).exp()).sum();
    max + sum.ln()
}
