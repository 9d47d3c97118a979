//! Reverse-mode automatic differentiation over a recorded tape.
//!
//! Every operation appends a node holding its value and enough context for
//! the backward pass. Nodes that do not depend on any gradient-requiring leaf
//! are skipped during backpropagation, so constant inputs (observations,
//! actions, targets) cost nothing on the way back.
//!
//! Shape errors are programming errors and panic; validated entry points
//! live in the policy layer.

use std::borrow::Cow;

use super::tensor::{gemm, Real, Tensor};
use super::NetError;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Normalization statistics used by a batch-norm node.
#[derive(Debug, Clone, Copy)]
pub enum BnMode<'a, F> {
    /// Per-channel batch statistics.
    Train,
    /// Frozen running statistics.
    Eval { mean: &'a [F], var: &'a [F] },
}

/// Batch statistics produced by a train-mode batch-norm node, for updating
/// running averages. `var` is the unbiased estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct BnBatchStats<F> {
    pub mean: Vec<F>,
    pub var: Vec<F>,
}

/// Variance epsilon inside the batch-norm square root.
pub const BN_EPS: f64 = 1e-5;

const HALF_LOG_TAU: f64 = 0.918_938_533_204_672_7; // ½·ln(2π)

#[derive(Debug)]
enum Op<F> {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        pad: usize,
        stride: usize,
    },
    BatchNorm2d {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<F>,
        inv_std: Vec<F>,
        train: bool,
    },
    Relu(Var),
    Tanh(Var),
    MaxPool2d {
        x: Var,
        argmax: Vec<usize>,
    },
    Reshape(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Minimum(Var, Var),
    Scale(Var, F),
    AddScalar(Var),
    Exp(Var),
    Square(Var),
    Clamp {
        x: Var,
        lo: F,
        hi: F,
    },
    Sum(Var),
    Mean(Var),
    GaussianLogProb {
        mean: Var,
        log_std: Var,
        actions: Vec<F>,
    },
    GaussianEntropy(Var),
}

#[derive(Debug)]
struct Node<'p, F: Real> {
    value: Cow<'p, Tensor<F>>,
    op: Op<F>,
    needs_grad: bool,
}

/// Recorded computation. Leaves may borrow parameter tensors for `'p`.
#[derive(Debug, Default)]
pub struct Tape<'p, F: Real> {
    nodes: Vec<Node<'p, F>>,
}

/// Gradients of a scalar with respect to every node that needed one.
#[derive(Debug)]
pub struct Gradients<F> {
    grads: Vec<Option<Vec<F>>>,
}

impl<F: Real> Gradients<F> {
    pub fn get(&self, v: Var) -> Option<&[F]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

/// `Σ_d −½((a_d − μ_d)/σ_d)² − log σ_d − ½ log 2π` with `σ = exp(log_std)`.
pub fn gaussian_log_density(mean: &[f64], log_std: &[f64], action: &[f64]) -> f64 {
    let mut lp = 0.0;
    for ((m, ls), a) in mean.iter().zip(log_std).zip(action) {
        let z = (a - m) / ls.exp();
        lp += -0.5 * z * z - ls - HALF_LOG_TAU;
    }
    lp
}

fn conv_out(size: usize, k: usize, pad: usize, stride: usize) -> usize {
    (size + 2 * pad - k) / stride + 1
}

/// Unfolds one `C×H×W` image into `(C·KH·KW) × (HO·WO)` columns.
#[allow(clippy::too_many_arguments)]
fn im2col<F: Real>(
    x: &[F],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    pad: usize,
    stride: usize,
    cols: &mut [F],
) {
    let ho = conv_out(h, kh, pad, stride);
    let wo = conv_out(w, kw, pad, stride);
    let plane = ho * wo;
    for ci in 0..c {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ci * kh + ki) * kw + kj;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oh in 0..ho {
                    let ih = (oh * stride + ki) as isize - pad as isize;
                    let out_row = &mut dst[oh * wo..(oh + 1) * wo];
                    if ih < 0 || ih >= h as isize {
                        out_row.fill(F::zero());
                        continue;
                    }
                    let src = &x[(ci * h + ih as usize) * w..(ci * h + ih as usize + 1) * w];
                    if stride == 1 {
                        let lo = pad.saturating_sub(kj).min(wo);
                        let hi = (w + pad).saturating_sub(kj).clamp(lo, wo);
                        out_row[..lo].fill(F::zero());
                        out_row[lo..hi].copy_from_slice(&src[lo + kj - pad..hi + kj - pad]);
                        out_row[hi..].fill(F::zero());
                        continue;
                    }
                    for (ow, o) in out_row.iter_mut().enumerate() {
                        let iw = (ow * stride + kj) as isize - pad as isize;
                        *o = if iw < 0 || iw >= w as isize {
                            F::zero()
                        } else {
                            src[iw as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates columns back into the image.
#[allow(clippy::too_many_arguments)]
fn col2im<F: Real>(
    cols: &[F],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    pad: usize,
    stride: usize,
    x: &mut [F],
) {
    let ho = conv_out(h, kh, pad, stride);
    let wo = conv_out(w, kw, pad, stride);
    let plane = ho * wo;
    for ci in 0..c {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ci * kh + ki) * kw + kj;
                let src = &cols[row * plane..(row + 1) * plane];
                for oh in 0..ho {
                    let ih = (oh * stride + ki) as isize - pad as isize;
                    if ih < 0 || ih >= h as isize {
                        continue;
                    }
                    let dst = &mut x[(ci * h + ih as usize) * w..(ci * h + ih as usize + 1) * w];
                    let src_row = &src[oh * wo..(oh + 1) * wo];
                    if stride == 1 {
                        let lo = pad.saturating_sub(kj).min(wo);
                        let hi = (w + pad).saturating_sub(kj).clamp(lo, wo);
                        add_into(&mut dst[lo + kj - pad..hi + kj - pad], &src_row[lo..hi]);
                        continue;
                    }
                    for ow in 0..wo {
                        let iw = (ow * stride + kj) as isize - pad as isize;
                        if iw >= 0 && iw < w as isize {
                            dst[iw as usize] = dst[iw as usize] + src[oh * wo + ow];
                        }
                    }
                }
            }
        }
    }
}

fn add_into<F: Real>(dst: &mut [F], src: &[F]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d = *d + *s;
    }
}

impl<'p, F: Real> Tape<'p, F> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient-carrying leaf borrowing `t`.
    pub fn param(&mut self, t: &'p Tensor<F>) -> Var {
        self.nodes.push(Node {
            value: Cow::Borrowed(t),
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Gradient-carrying leaf owning `t`.
    pub fn variable(&mut self, t: Tensor<F>) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(t),
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<F>) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(t),
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Copy of `x` cut off from the gradient path.
    pub fn detach(&mut self, x: Var) -> Var {
        let t = self.value(x).clone();
        self.constant(t)
    }

    /// `[m,k] · [k,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (sa, sb) = (self.shape(a), self.shape(b));
        assert!(
            sa.len() == 2 && sb.len() == 2 && sa[1] == sb[0],
            "matmul {sa:?} x {sb:?}"
        );
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![F::zero(); m * n];
        gemm(
            false,
            false,
            m,
            n,
            k,
            F::one(),
            self.value(a).data(),
            self.value(b).data(),
            F::zero(),
            &mut out,
        );
        self.push(Tensor::new(vec![m, n], out), Op::MatMul(a, b), &[a, b])
    }

    /// Adds a vector along the last axis.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Var {
        let n = *self.shape(x).last().expect("rank >= 1");
        assert_eq!(self.shape(b), &[n], "bias shape");
        let bias = self.value(b).data().to_vec();
        let mut out = self.value(x).clone();
        for row in out.data_mut().chunks_mut(n) {
            add_into(row, &bias);
        }
        self.push(out, Op::AddBias(x, b), &[x, b])
    }

    /// 2-D convolution of `x: [N,C,H,W]` with `w: [O,C,KH,KW]` and bias `[O]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, pad: usize, stride: usize) -> Var {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        assert!(
            xs.len() == 4 && ws.len() == 4 && xs[1] == ws[1],
            "conv2d {xs:?} * {ws:?}"
        );
        assert_eq!(self.shape(b), &[ws[0]], "conv bias shape");
        assert!(stride >= 1 && xs[2] + 2 * pad >= ws[2] && xs[3] + 2 * pad >= ws[3]);
        let (n, c, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let (o, kh, kw) = (ws[0], ws[2], ws[3]);
        let (ho, wo) = (conv_out(h, kh, pad, stride), conv_out(wd, kw, pad, stride));
        let ckk = c * kh * kw;
        let plane = ho * wo;
        let mut cols = vec![F::zero(); ckk * plane];
        let mut out = vec![F::zero(); n * o * plane];
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let bv = self.value(b).data();
        for i in 0..n {
            im2col(
                &xv[i * c * h * wd..(i + 1) * c * h * wd],
                c,
                h,
                wd,
                kh,
                kw,
                pad,
                stride,
                &mut cols,
            );
            let dst = &mut out[i * o * plane..(i + 1) * o * plane];
            for (oc, row) in dst.chunks_mut(plane).enumerate() {
                row.fill(bv[oc]);
            }
            gemm(
                false,
                false,
                o,
                plane,
                ckk,
                F::one(),
                wv,
                &cols,
                F::one(),
                dst,
            );
        }
        self.push(
            Tensor::new(vec![n, o, ho, wo], out),
            Op::Conv2d {
                x,
                w,
                b,
                pad,
                stride,
            },
            &[x, w, b],
        )
    }

    /// Per-channel batch normalization of `x: [N,C,H,W]`.
    ///
    /// In train mode the second return value carries the batch statistics.
    pub fn batchnorm2d(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: BnMode<'_, F>,
    ) -> (Var, Option<BnBatchStats<F>>) {
        let xs = self.shape(x).to_vec();
        assert_eq!(xs.len(), 4, "batchnorm2d expects [N,C,H,W]");
        let (n, c, hw) = (xs[0], xs[1], xs[2] * xs[3]);
        assert_eq!(self.shape(gamma), &[c]);
        assert_eq!(self.shape(beta), &[c]);
        let m = n * hw;
        let eps = F::of(BN_EPS);
        let xv = self.value(x).data();
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut xhat = vec![F::zero(); xv.len()];
        let mut out = vec![F::zero(); xv.len()];
        let mut inv_std = vec![F::zero(); c];
        let mut stats = None;
        let train = matches!(mode, BnMode::Train);
        match mode {
            BnMode::Train => {
                assert!(
                    m >= 2,
                    "train-mode batch norm needs at least two values per channel"
                );
                let mut means = vec![F::zero(); c];
                let mut vars = vec![F::zero(); c];
                for ch in 0..c {
                    let mut s = F::zero();
                    for i in 0..n {
                        let base = (i * c + ch) * hw;
                        s = s + xv[base..base + hw].iter().copied().sum::<F>();
                    }
                    let mean = s / F::of(m as f64);
                    let mut sq = F::zero();
                    for i in 0..n {
                        let base = (i * c + ch) * hw;
                        sq = sq
                            + xv[base..base + hw]
                                .iter()
                                .map(|v| (*v - mean) * (*v - mean))
                                .sum::<F>();
                    }
                    let var = sq / F::of(m as f64);
                    means[ch] = mean;
                    vars[ch] = sq / F::of((m - 1) as f64);
                    inv_std[ch] = F::one() / (var + eps).sqrt();
                }
                stats = Some(BnBatchStats {
                    mean: means.clone(),
                    var: vars,
                });
                for i in 0..n {
                    for ch in 0..c {
                        let base = (i * c + ch) * hw;
                        for j in base..base + hw {
                            xhat[j] = (xv[j] - means[ch]) * inv_std[ch];
                            out[j] = g[ch] * xhat[j] + bt[ch];
                        }
                    }
                }
            }
            BnMode::Eval { mean, var } => {
                assert!(mean.len() == c && var.len() == c, "running stats shape");
                for ch in 0..c {
                    inv_std[ch] = F::one() / (var[ch] + eps).sqrt();
                }
                for i in 0..n {
                    for ch in 0..c {
                        let base = (i * c + ch) * hw;
                        for j in base..base + hw {
                            xhat[j] = (xv[j] - mean[ch]) * inv_std[ch];
                            out[j] = g[ch] * xhat[j] + bt[ch];
                        }
                    }
                }
            }
        }
        let v = self.push(
            Tensor::new(xs, out),
            Op::BatchNorm2d {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            },
            &[x, gamma, beta],
        );
        (v, stats)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        out.data_mut()
            .iter_mut()
            .for_each(|v| *v = v.max(F::zero()));
        self.push(out, Op::Relu(x), &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().for_each(|v| *v = v.tanh());
        self.push(out, Op::Tanh(x), &[x])
    }

    /// Non-overlapping `k×k` max pooling; trailing rows/columns are dropped.
    pub fn maxpool2d(&mut self, x: Var, k: usize) -> Var {
        let xs = self.shape(x).to_vec();
        assert!(
            xs.len() == 4 && k >= 1 && xs[2] >= k && xs[3] >= k,
            "maxpool2d {xs:?} k={k}"
        );
        let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (ho, wo) = (h / k, w / k);
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(n * c * ho * wo);
        let mut argmax = Vec::with_capacity(n * c * ho * wo);
        for plane in 0..n * c {
            let base = plane * h * w;
            for oh in 0..ho {
                for ow in 0..wo {
                    let mut best = base + oh * k * w + ow * k;
                    for di in 0..k {
                        for dj in 0..k {
                            let j = base + (oh * k + di) * w + ow * k + dj;
                            if xv[j] > xv[best] {
                                best = j;
                            }
                        }
                    }
                    out.push(xv[best]);
                    argmax.push(best);
                }
            }
        }
        self.push(
            Tensor::new(vec![n, c, ho, wo], out),
            Op::MaxPool2d { x, argmax },
            &[x],
        )
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let out = self.value(x).clone().reshape(shape);
        self.push(out, Op::Reshape(x), &[x])
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(F, F) -> F) -> Tensor<F> {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.shape(), tb.shape(), "elementwise shape mismatch");
        Tensor::new(
            ta.shape().to_vec(),
            ta.data()
                .iter()
                .zip(tb.data())
                .map(|(x, y)| f(*x, *y))
                .collect(),
        )
    }

    fn map(&self, x: Var, f: impl Fn(F) -> F) -> Tensor<F> {
        let t = self.value(x);
        Tensor::new(t.shape().to_vec(), t.data().iter().map(|v| f(*v)).collect())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_with(a, b, |x, y| x + y);
        self.push(out, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_with(a, b, |x, y| x - y);
        self.push(out, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_with(a, b, |x, y| x * y);
        self.push(out, Op::Mul(a, b), &[a, b])
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn minimum(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_with(a, b, |x, y| if x <= y { x } else { y });
        self.push(out, Op::Minimum(a, b), &[a, b])
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let c = F::of(c);
        let out = self.map(x, |v| v * c);
        self.push(out, Op::Scale(x, c), &[x])
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let c = F::of(c);
        let out = self.map(x, |v| v + c);
        self.push(out, Op::AddScalar(x), &[x])
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let out = self.map(x, |v| v.exp());
        self.push(out, Op::Exp(x), &[x])
    }

    pub fn square(&mut self, x: Var) -> Var {
        let out = self.map(x, |v| v * v);
        self.push(out, Op::Square(x), &[x])
    }

    /// Clamp into `[lo, hi]`; the gradient passes only inside the interval
    /// (boundaries included).
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let (lo, hi) = (F::of(lo), F::of(hi));
        let out = self.map(x, |v| v.max(lo).min(hi));
        self.push(out, Op::Clamp { x, lo, hi }, &[x])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum::<F>();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.data().iter().copied().sum::<F>() / F::of(t.len() as f64);
        self.push(Tensor::scalar(s), Op::Mean(x), &[x])
    }

    /// Diagonal-Gaussian log-density of `actions: [N,A]` under `mean: [N,A]`
    /// and `log_std: [A]`, minus an optional per-sample `baseline`.
    ///
    /// Accumulates in `f64` so that the difference of two nearly equal
    /// log-densities keeps its precision in an `f32` tape.
    pub fn gaussian_log_prob(
        &mut self,
        mean: Var,
        log_std: Var,
        actions: &[f64],
        baseline: Option<&[f64]>,
    ) -> Var {
        let ms = self.shape(mean).to_vec();
        assert_eq!(ms.len(), 2, "mean must be [N,A]");
        let (n, a) = (ms[0], ms[1]);
        assert_eq!(self.shape(log_std), &[a]);
        assert_eq!(actions.len(), n * a);
        if let Some(b) = baseline {
            assert_eq!(b.len(), n);
        }
        let mu = self.value(mean).data();
        let ls = self.value(log_std).data();
        let ls64: Vec<f64> = ls.iter().map(|v| v.as_f64()).collect();
        let out: Vec<F> = (0..n)
            .map(|i| {
                let mu64: Vec<f64> = mu[i * a..(i + 1) * a].iter().map(|v| v.as_f64()).collect();
                let lp = gaussian_log_density(&mu64, &ls64, &actions[i * a..(i + 1) * a]);
                F::of(lp - baseline.map_or(0.0, |b| b[i]))
            })
            .collect();
        let acts = actions.iter().map(|x| F::of(*x)).collect();
        self.push(
            Tensor::new(vec![n], out),
            Op::GaussianLogProb {
                mean,
                log_std,
                actions: acts,
            },
            &[mean, log_std],
        )
    }

    /// Entropy of a diagonal Gaussian with `log_std: [A]`.
    pub fn gaussian_entropy(&mut self, log_std: Var) -> Var {
        let h = self
            .value(log_std)
            .data()
            .iter()
            .map(|l| F::of(0.5 + HALF_LOG_TAU) + *l)
            .sum::<F>();
        self.push(Tensor::scalar(h), Op::GaussianEntropy(log_std), &[log_std])
    }

    /// Backpropagates from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<F>, NetError> {
        if self.value(loss).len() != 1 {
            return Err(NetError::NotScalar(self.shape(loss).to_vec()));
        }
        let mut grads: Vec<Option<Vec<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![F::one()]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn backprop_node(&self, i: usize, g: &[F], grads: &mut [Option<Vec<F>>]) {
        let mut acc = |v: Var, delta: Vec<F>| match &mut grads[v.0] {
            Some(existing) => add_into(existing, &delta),
            slot @ None => *slot = Some(delta),
        };
        let node = &self.nodes[i];
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if self.wants(*a) {
                    let mut da = vec![F::zero(); m * k];
                    gemm(
                        false,
                        true,
                        m,
                        k,
                        n,
                        F::one(),
                        g,
                        self.value(*b).data(),
                        F::zero(),
                        &mut da,
                    );
                    acc(*a, da);
                }
                if self.wants(*b) {
                    let mut db = vec![F::zero(); k * n];
                    gemm(
                        true,
                        false,
                        k,
                        n,
                        m,
                        F::one(),
                        self.value(*a).data(),
                        g,
                        F::zero(),
                        &mut db,
                    );
                    acc(*b, db);
                }
            }
            Op::AddBias(x, b) => {
                if self.wants(*x) {
                    acc(*x, g.to_vec());
                }
                if self.wants(*b) {
                    let n = self.shape(*b)[0];
                    let mut db = vec![F::zero(); n];
                    for row in g.chunks(n) {
                        add_into(&mut db, row);
                    }
                    acc(*b, db);
                }
            }
            Op::Conv2d {
                x,
                w,
                b,
                pad,
                stride,
            } => {
                let xs = self.shape(*x);
                let ws = self.shape(*w);
                let (n, c, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
                let (o, kh, kw) = (ws[0], ws[2], ws[3]);
                let plane = node.value.shape()[2] * node.value.shape()[3];
                let ckk = c * kh * kw;
                let img = c * h * wd;
                if self.wants(*b) {
                    let mut db = vec![F::zero(); o];
                    for gi in g.chunks(o * plane) {
                        for (oc, row) in gi.chunks(plane).enumerate() {
                            db[oc] = db[oc] + row.iter().copied().sum::<F>();
                        }
                    }
                    acc(*b, db);
                }
                let xv = self.value(*x).data();
                let wv = self.value(*w).data();
                let want_w = self.wants(*w);
                let want_x = self.wants(*x);
                let mut dw = vec![F::zero(); if want_w { o * ckk } else { 0 }];
                let mut dx = vec![F::zero(); if want_x { n * img } else { 0 }];
                let mut cols = vec![F::zero(); ckk * plane];
                for s in 0..n {
                    let gs = &g[s * o * plane..(s + 1) * o * plane];
                    if want_w {
                        im2col(
                            &xv[s * img..(s + 1) * img],
                            c,
                            h,
                            wd,
                            kh,
                            kw,
                            *pad,
                            *stride,
                            &mut cols,
                        );
                        gemm(
                            false,
                            true,
                            o,
                            ckk,
                            plane,
                            F::one(),
                            gs,
                            &cols,
                            F::one(),
                            &mut dw,
                        );
                    }
                    if want_x {
                        gemm(
                            true,
                            false,
                            ckk,
                            plane,
                            o,
                            F::one(),
                            wv,
                            gs,
                            F::zero(),
                            &mut cols,
                        );
                        col2im(
                            &cols,
                            c,
                            h,
                            wd,
                            kh,
                            kw,
                            *pad,
                            *stride,
                            &mut dx[s * img..(s + 1) * img],
                        );
                    }
                }
                if want_w {
                    acc(*w, dw);
                }
                if want_x {
                    acc(*x, dx);
                }
            }
            Op::BatchNorm2d {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let xs = self.shape(*x);
                let (n, c, hw) = (xs[0], xs[1], xs[2] * xs[3]);
                let gam = self.value(*gamma).data();
                let mut dgamma = vec![F::zero(); c];
                let mut dbeta = vec![F::zero(); c];
                for s in 0..n {
                    for ch in 0..c {
                        let base = (s * c + ch) * hw;
                        for j in base..base + hw {
                            dgamma[ch] = dgamma[ch] + g[j] * xhat[j];
                            dbeta[ch] = dbeta[ch] + g[j];
                        }
                    }
                }
                if self.wants(*x) {
                    let mut dx = vec![F::zero(); g.len()];
                    let m = F::of((n * hw) as f64);
                    for ch in 0..c {
                        let k = gam[ch] * inv_std[ch];
                        for s in 0..n {
                            let base = (s * c + ch) * hw;
                            for j in base..base + hw {
                                dx[j] = if *train {
                                    // dxhat = g·γ;  dx = inv_std/m · (m·dxhat − Σdxhat − xhat·Σ dxhat·xhat)
                                    k * (g[j] - dbeta[ch] / m - xhat[j] * dgamma[ch] / m)
                                } else {
                                    k * g[j]
                                };
                            }
                        }
                    }
                    acc(*x, dx);
                }
                if self.wants(*gamma) {
                    acc(*gamma, dgamma);
                }
                if self.wants(*beta) {
                    acc(*beta, dbeta);
                }
            }
            Op::Relu(x) => {
                let d = g
                    .iter()
                    .zip(out)
                    .map(|(g, y)| if *y > F::zero() { *g } else { F::zero() })
                    .collect();
                acc(*x, d);
            }
            Op::Tanh(x) => {
                let d = g
                    .iter()
                    .zip(out)
                    .map(|(g, y)| *g * (F::one() - *y * *y))
                    .collect();
                acc(*x, d);
            }
            Op::MaxPool2d { x, argmax } => {
                let mut dx = vec![F::zero(); self.value(*x).len()];
                for (gv, j) in g.iter().zip(argmax) {
                    dx[*j] = dx[*j] + *gv;
                }
                acc(*x, dx);
            }
            Op::Reshape(x) => acc(*x, g.to_vec()),
            Op::Add(a, b) => {
                if self.wants(*a) {
                    acc(*a, g.to_vec());
                }
                if self.wants(*b) {
                    acc(*b, g.to_vec());
                }
            }
            Op::Sub(a, b) => {
                if self.wants(*a) {
                    acc(*a, g.to_vec());
                }
                if self.wants(*b) {
                    acc(*b, g.iter().map(|v| -*v).collect());
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if self.wants(*a) {
                    acc(*a, g.iter().zip(bv).map(|(g, y)| *g * *y).collect());
                }
                if self.wants(*b) {
                    acc(*b, g.iter().zip(av).map(|(g, x)| *g * *x).collect());
                }
            }
            Op::Minimum(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if self.wants(*a) {
                    acc(
                        *a,
                        (0..g.len())
                            .map(|j| if av[j] <= bv[j] { g[j] } else { F::zero() })
                            .collect(),
                    );
                }
                if self.wants(*b) {
                    acc(
                        *b,
                        (0..g.len())
                            .map(|j| if av[j] <= bv[j] { F::zero() } else { g[j] })
                            .collect(),
                    );
                }
            }
            Op::Scale(x, c) => acc(*x, g.iter().map(|v| *v * *c).collect()),
            Op::AddScalar(x) => acc(*x, g.to_vec()),
            Op::Exp(x) => acc(*x, g.iter().zip(out).map(|(g, y)| *g * *y).collect()),
            Op::Square(x) => {
                let xv = self.value(*x).data();
                acc(
                    *x,
                    g.iter()
                        .zip(xv)
                        .map(|(g, x)| *g * F::of(2.0) * *x)
                        .collect(),
                );
            }
            Op::Clamp { x, lo, hi } => {
                let xv = self.value(*x).data();
                acc(
                    *x,
                    g.iter()
                        .zip(xv)
                        .map(|(g, v)| {
                            if *v >= *lo && *v <= *hi {
                                *g
                            } else {
                                F::zero()
                            }
                        })
                        .collect(),
                );
            }
            Op::Sum(x) => acc(*x, vec![g[0]; self.value(*x).len()]),
            Op::Mean(x) => {
                let n = self.value(*x).len();
                acc(*x, vec![g[0] / F::of(n as f64); n]);
            }
            Op::GaussianLogProb {
                mean,
                log_std,
                actions,
            } => {
                let mu = self.value(*mean).data();
                let ls = self.value(*log_std).data();
                let a = ls.len();
                let mut dmu = vec![F::zero(); mu.len()];
                let mut dls = vec![F::zero(); a];
                for (i, gi) in g.iter().enumerate() {
                    for j in 0..a {
                        let inv_var = (F::of(-2.0) * ls[j]).exp();
                        let dev = actions[i * a + j] - mu[i * a + j];
                        dmu[i * a + j] = *gi * dev * inv_var;
                        dls[j] = dls[j] + *gi * (dev * dev * inv_var - F::one());
                    }
                }
                if self.wants(*mean) {
                    acc(*mean, dmu);
                }
                if self.wants(*log_std) {
                    acc(*log_std, dls);
                }
            }
            Op::GaussianEntropy(x) => acc(*x, vec![g[0]; self.value(*x).len()]),
        }
    }
}
