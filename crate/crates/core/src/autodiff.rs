//! Reverse-mode automatic differentiation on a dynamic tape.
//!
//! Every forward pass builds a fresh [`Tape`]. Values are recorded as nodes,
//! identified by a [`Var`] handle; each recorded operation keeps whatever it
//! needs for its backward rule. [`Tape::backward`] replays the operations in
//! exact reverse recording order.
//!
//! Sparse operators enter only as constants: there is no gradient with
//! respect to the entries of a [`CsrMatrix`].

use rand::Rng;

use crate::error::{shape_check, Error, Result};
use crate::graph::{spmm_transpose_into, CsrMatrix};
use crate::tensor::{gemm_nt, gemm_tn, ParamId, ParamStore, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    requires_grad: bool,
    param: Option<ParamId>,
}

#[derive(Debug)]
enum Op<'g> {
    MatMul {
        a: Var,
        b: Var,
        out: Var,
    },
    Spmm {
        s: &'g CsrMatrix,
        x: Var,
        out: Var,
    },
    AxpyScalar {
        alpha: Var,
        x: Var,
        y: Var,
        out: Var,
    },
    LayerNorm {
        x: Var,
        affine: Option<(Var, Var)>,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        out: Var,
    },
    Relu {
        x: Var,
        out: Var,
    },
    Dropout {
        x: Var,
        scale: Vec<f64>,
        out: Var,
    },
    SoftmaxXent {
        logits: Var,
        /// `(row, label)` for each selected node.
        targets: Vec<(usize, usize)>,
        /// Softmax probabilities of the selected rows, in `targets` order.
        probs: Vec<f64>,
        out: Var,
    },
    AddRowBias {
        x: Var,
        bias: Var,
        out: Var,
    },
    ConcatCols {
        parts: Vec<Var>,
        out: Var,
    },
    Add {
        a: Var,
        b: Var,
        out: Var,
    },
    Sub {
        a: Var,
        b: Var,
        out: Var,
    },
    Mul {
        a: Var,
        b: Var,
        out: Var,
    },
    Div {
        a: Var,
        b: Var,
        out: Var,
    },
    Scale {
        x: Var,
        factor: f64,
        out: Var,
    },
    AddConst {
        x: Var,
        out: Var,
    },
    Softplus {
        x: Var,
        out: Var,
    },
    Sigmoid {
        x: Var,
        out: Var,
    },
    Clamp {
        x: Var,
        lo: f64,
        hi: f64,
        out: Var,
    },
}

/// Recording of one forward computation.
#[derive(Debug, Default)]
pub struct Tape<'g> {
    nodes: Vec<Node>,
    ops: Vec<Op<'g>>,
}

/// Gradients of a scalar loss with respect to every node of a tape.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    params: Vec<(Var, ParamId)>,
}

impl Gradients {
    /// Gradient with respect to the leaf `v`, if it participates in the loss
    /// and requires a gradient. Gradients of intermediate values are consumed
    /// during the sweep and not retained.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    /// Adds the parameter gradients into the store's gradient buffers.
    pub fn accumulate_into(&self, store: &mut ParamStore) {
        for &(v, id) in &self.params {
            if let Some(g) = &self.grads[v.0] {
                store.get_mut(id).accumulate_grad(g);
            }
        }
    }
}

impl<'g> Tape<'g> {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a constant or user-supplied leaf. Gradient flows to it only if
    /// the tensor has `requires_grad` set.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let rg = t.requires_grad();
        self.push(t, rg)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t.with_requires_grad(false), false)
    }

    /// Records a store parameter as a leaf; [`Gradients::accumulate_into`]
    /// routes its gradient back to the store.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let t = store.get(id);
        let rg = t.requires_grad();
        let mut value = t.clone();
        value.zero_grad();
        let v = self.push(value, rg);
        self.nodes[v.0].param = Some(id);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let out = av.matmul(bv)?;
        let rg = self.rg(&[a, b]);
        let out = self.push(out, rg);
        self.ops.push(Op::MatMul { a, b, out });
        Ok(out)
    }

    pub fn spmm(&mut self, s: &'g CsrMatrix, x: Var) -> Result<Var> {
        let out = s.spmm(self.value(x))?;
        let rg = self.rg(&[x]);
        let out = self.push(out, rg);
        self.ops.push(Op::Spmm { s, x, out });
        Ok(out)
    }

    /// `alpha·x + y` with a 1x1 `alpha`.
    pub fn axpy_scalar(&mut self, alpha: Var, x: Var, y: Var) -> Result<Var> {
        let (xs, ys) = (self.shape(x), self.shape(y));
        shape_check("axpy_scalar", xs == ys, xs, ys)?;
        shape_check(
            "axpy_scalar alpha",
            self.shape(alpha) == (1, 1),
            self.shape(alpha),
            (1, 1),
        )?;
        let a = self.value(alpha).item();
        let data: Vec<f64> = self
            .value(x)
            .data()
            .iter()
            .zip(self.value(y).data())
            .map(|(&xv, &yv)| a * xv + yv)
            .collect();
        let out = Tensor::from_vec(xs.0, xs.1, data)?;
        let rg = self.rg(&[alpha, x, y]);
        let out = self.push(out, rg);
        self.ops.push(Op::AxpyScalar { alpha, x, y, out });
        Ok(out)
    }

    /// Row-wise layer normalization with population variance, optionally
    /// followed by a per-feature affine map (`gain`, `bias` are `1×f`).
    pub fn layer_norm(&mut self, x: Var, affine: Option<(Var, Var)>, eps: f64) -> Result<Var> {
        if !(eps > 0.0) {
            return Err(Error::InvalidArgument(format!("layer_norm eps must be > 0, got {eps}")));
        }
        let (n, f) = self.shape(x);
        if f == 0 {
            return Err(Error::InvalidArgument("layer_norm over zero features".into()));
        }
        if let Some((g, b)) = affine {
            shape_check("layer_norm gain", self.shape(g) == (1, f), self.shape(g), (1, f))?;
            shape_check("layer_norm bias", self.shape(b) == (1, f), self.shape(b), (1, f))?;
        }
        let xv = self.value(x);
        let mut xhat = vec![0.0; n * f];
        let mut inv_std = vec![0.0; n];
        for r in 0..n {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / f as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / f as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std[r] = inv;
            for (h, &v) in xhat[r * f..(r + 1) * f].iter_mut().zip(row) {
                *h = (v - mean) * inv;
            }
        }
        let mut y = xhat.clone();
        if let Some((g, b)) = affine {
            let (gv, bv) = (self.value(g).data(), self.value(b).data());
            for row in y.chunks_mut(f) {
                for ((o, &gg), &bb) in row.iter_mut().zip(gv).zip(bv) {
                    *o = *o * gg + bb;
                }
            }
        }
        let out = Tensor::from_vec(n, f, y)?;
        let mut deps = vec![x];
        if let Some((g, b)) = affine {
            deps.extend([g, b]);
        }
        let rg = self.rg(&deps);
        let out = self.push(out, rg);
        self.ops.push(Op::LayerNorm {
            x,
            affine,
            xhat,
            inv_std,
            out,
        });
        Ok(out)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let mut t = self.value(x).clone();
        t.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        let rg = self.rg(&[x]);
        let out = self.push(t, rg);
        self.ops.push(Op::Relu { x, out });
        out
    }

    /// Inverted dropout: kept entries are scaled by `1/(1-p)`. Identity when
    /// `training` is false, in which case `rng` is not touched.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, training: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!("dropout p must be in [0, 1), got {p}")));
        }
        if !training || p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let scale: Vec<f64> = (0..self.value(x).len())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let mut t = self.value(x).clone();
        t.data_mut().iter_mut().zip(&scale).for_each(|(v, s)| *v *= s);
        let rg = self.rg(&[x]);
        let out = self.push(t, rg);
        self.ops.push(Op::Dropout { x, scale, out });
        Ok(out)
    }

    /// Mean negative log-softmax of the true class over the nodes in `mask`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize], mask: &[usize]) -> Result<Var> {
        if mask.is_empty() {
            return Err(Error::EmptyMask);
        }
        let (n, c) = self.shape(logits);
        shape_check(
            "softmax_cross_entropy labels",
            labels.len() == n,
            (n, c),
            (labels.len(), 1),
        )?;
        let lv = self.value(logits);
        let mut targets = Vec::with_capacity(mask.len());
        let mut probs = Vec::with_capacity(mask.len() * c);
        let mut total = 0.0;
        for &i in mask {
            if i >= n {
                return Err(Error::InvalidArgument(format!("mask index {i} >= {n} rows")));
            }
            let label = labels[i];
            if label >= c {
                return Err(Error::InvalidArgument(format!("label {label} >= {c} classes")));
            }
            let row = lv.row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let log_z = max + sum.ln();
            total += log_z - row[label];
            probs.extend(row.iter().map(|v| (v - log_z).exp()));
            targets.push((i, label));
        }
        let loss = Tensor::scalar(total / mask.len() as f64);
        let rg = self.rg(&[logits]);
        let out = self.push(loss, rg);
        self.ops.push(Op::SoftmaxXent {
            logits,
            targets,
            probs,
            out,
        });
        Ok(out)
    }

    /// `x + bias` with `bias` broadcast over rows.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (n, f) = self.shape(x);
        shape_check("add_row_bias", self.shape(bias) == (1, f), (n, f), self.shape(bias))?;
        let mut t = self.value(x).clone();
        let b = self.value(bias).data().to_vec();
        for row in t.data_mut().chunks_mut(f) {
            row.iter_mut().zip(&b).for_each(|(v, bb)| *v += bb);
        }
        let rg = self.rg(&[x, bias]);
        let out = self.push(t, rg);
        self.ops.push(Op::AddRowBias { x, bias, out });
        Ok(out)
    }

    /// Concatenates along the feature axis, blocks in the given order.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of zero tensors".into()))?;
        let n = self.shape(first).0;
        for &p in parts {
            shape_check("concat_cols", self.shape(p).0 == n, self.shape(first), self.shape(p))?;
        }
        let total: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut data = Vec::with_capacity(n * total);
        for r in 0..n {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let out = Tensor::from_vec(n, total, data)?;
        let rg = self.rg(parts);
        let out = self.push(out, rg);
        self.ops.push(Op::ConcatCols {
            parts: parts.to_vec(),
            out,
        });
        Ok(out)
    }

    fn binary(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<(Tensor, bool)> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        shape_check(name, sa == sb, sa, sb)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Ok((Tensor::from_vec(sa.0, sa.1, data)?, self.rg(&[a, b])))
    }

    fn unary(&self, x: Var, f: impl Fn(f64) -> f64) -> (Tensor, bool) {
        let mut t = self.value(x).clone();
        t.data_mut().iter_mut().for_each(|v| *v = f(*v));
        (t, self.rg(&[x]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, rg) = self.binary("add", a, b, |x, y| x + y)?;
        let out = self.push(t, rg);
        self.ops.push(Op::Add { a, b, out });
        Ok(out)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, rg) = self.binary("sub", a, b, |x, y| x - y)?;
        let out = self.push(t, rg);
        self.ops.push(Op::Sub { a, b, out });
        Ok(out)
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, rg) = self.binary("mul", a, b, |x, y| x * y)?;
        let out = self.push(t, rg);
        self.ops.push(Op::Mul { a, b, out });
        Ok(out)
    }

    /// Element-wise quotient.
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, rg) = self.binary("div", a, b, |x, y| x / y)?;
        let out = self.push(t, rg);
        self.ops.push(Op::Div { a, b, out });
        Ok(out)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let (t, rg) = self.unary(x, |v| v * factor);
        let out = self.push(t, rg);
        self.ops.push(Op::Scale { x, factor, out });
        out
    }

    pub fn add_const(&mut self, x: Var, c: f64) -> Var {
        let (t, rg) = self.unary(x, |v| v + c);
        let out = self.push(t, rg);
        self.ops.push(Op::AddConst { x, out });
        out
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        let (t, rg) = self.unary(x, softplus);
        let out = self.push(t, rg);
        self.ops.push(Op::Softplus { x, out });
        out
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let (t, rg) = self.unary(x, sigmoid);
        let out = self.push(t, rg);
        self.ops.push(Op::Sigmoid { x, out });
        out
    }

    /// Clamps into `[lo, hi]`; gradient is zero where the clamp is active.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let (t, rg) = self.unary(x, |v| v.clamp(lo, hi));
        let out = self.push(t, rg);
        self.ops.push(Op::Clamp { x, lo, hi, out });
        out
    }

    /// Reverse sweep from a 1x1 `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.shape(loss) != (1, 1) {
            return Err(Error::NonScalarLoss(self.shape(loss)));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for op in self.ops.iter().rev() {
            self.backward_op(op, &mut grads);
        }

        for (g, node) in grads.iter_mut().zip(&self.nodes) {
            if !node.requires_grad {
                *g = None;
            }
        }
        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| n.param.map(|id| (Var(i), id)))
            .collect();
        Ok(Gradients { grads, params })
    }

    /// Runs [`Tape::backward`] and accumulates into `store`.
    pub fn backward_into(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        self.backward(loss)?.accumulate_into(store);
        Ok(())
    }

    fn backward_op(&self, op: &Op<'g>, grads: &mut [Option<Vec<f64>>]) {
        let out = op_output(op);
        let Some(dy) = grads[out.0].take() else {
            return;
        };
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        let len = |v: Var| self.nodes[v.0].value.len();

        // Accumulate into a node's gradient buffer.
        fn acc(grads: &mut [Option<Vec<f64>>], v: Var, n: usize, f: impl FnOnce(&mut [f64])) {
            let buf = grads[v.0].get_or_insert_with(|| vec![0.0; n]);
            f(buf);
        }

        match op {
            Op::MatMul { a, b, .. } => {
                let (m, k) = self.shape(*a);
                let n = self.shape(*b).1;
                if wants(*a) {
                    let bv = self.value(*b).data();
                    acc(grads, *a, m * k, |g| gemm_nt(&dy, bv, g, m, n, k));
                }
                if wants(*b) {
                    let av = self.value(*a).data();
                    acc(grads, *b, k * n, |g| gemm_tn(av, &dy, g, m, k, n));
                }
            }
            Op::Spmm { s, x, .. } => {
                if wants(*x) {
                    let f = self.shape(*x).1;
                    acc(grads, *x, len(*x), |g| spmm_transpose_into(s, &dy, g, f));
                }
            }
            Op::AxpyScalar { alpha, x, y, .. } => {
                let a = self.value(*alpha).item();
                if wants(*alpha) {
                    let xv = self.value(*x).data();
                    let d: f64 = xv.iter().zip(&dy).map(|(p, q)| p * q).sum();
                    acc(grads, *alpha, 1, |g| g[0] += d);
                }
                if wants(*x) {
                    acc(grads, *x, dy.len(), |g| {
                        g.iter_mut().zip(&dy).for_each(|(gi, d)| *gi += a * d)
                    });
                }
                if wants(*y) {
                    acc(grads, *y, dy.len(), |g| add_assign(g, &dy));
                }
            }
            Op::LayerNorm {
                x,
                affine,
                xhat,
                inv_std,
                ..
            } => {
                let (n, f) = self.shape(*x);
                let gain = affine.map(|(g, _)| self.value(g).data().to_vec());
                if let Some((g, b)) = affine {
                    if wants(*g) {
                        acc(grads, *g, f, |gg| {
                            for (dy_row, xh_row) in dy.chunks(f).zip(xhat.chunks(f)) {
                                for j in 0..f {
                                    gg[j] += dy_row[j] * xh_row[j];
                                }
                            }
                        });
                    }
                    if wants(*b) {
                        acc(grads, *b, f, |gb| {
                            for dy_row in dy.chunks(f) {
                                add_assign(gb, dy_row);
                            }
                        });
                    }
                }
                if wants(*x) {
                    acc(grads, *x, n * f, |gx| {
                        let mut dxhat = vec![0.0; f];
                        for r in 0..n {
                            let dy_row = &dy[r * f..(r + 1) * f];
                            let xh = &xhat[r * f..(r + 1) * f];
                            for j in 0..f {
                                dxhat[j] = dy_row[j] * gain.as_ref().map_or(1.0, |g| g[j]);
                            }
                            let sum_d: f64 = dxhat.iter().sum();
                            let sum_dx: f64 = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum();
                            let k = inv_std[r] / f as f64;
                            for j in 0..f {
                                gx[r * f + j] += k * (f as f64 * dxhat[j] - sum_d - xh[j] * sum_dx);
                            }
                        }
                    });
                }
            }
            Op::Relu { x, .. } => {
                if wants(*x) {
                    let xv = self.value(*x).data();
                    acc(grads, *x, dy.len(), |g| {
                        for ((gi, d), &v) in g.iter_mut().zip(&dy).zip(xv) {
                            if v > 0.0 {
                                *gi += d;
                            }
                        }
                    });
                }
            }
            Op::Dropout { x, scale, .. } => {
                if wants(*x) {
                    acc(grads, *x, dy.len(), |g| {
                        for ((gi, d), s) in g.iter_mut().zip(&dy).zip(scale) {
                            *gi += d * s;
                        }
                    });
                }
            }
            Op::SoftmaxXent {
                logits, targets, probs, ..
            } => {
                if wants(*logits) {
                    let c = self.shape(*logits).1;
                    let w = dy[0] / targets.len() as f64;
                    acc(grads, *logits, len(*logits), |g| {
                        for (t, &(row, label)) in targets.iter().enumerate() {
                            let p = &probs[t * c..(t + 1) * c];
                            let gr = &mut g[row * c..(row + 1) * c];
                            for j in 0..c {
                                gr[j] += w * p[j];
                            }
                            gr[label] -= w;
                        }
                    });
                }
            }
            Op::AddRowBias { x, bias, .. } => {
                let f = self.shape(*x).1;
                if wants(*x) {
                    acc(grads, *x, dy.len(), |g| add_assign(g, &dy));
                }
                if wants(*bias) {
                    acc(grads, *bias, f, |g| {
                        for row in dy.chunks(f) {
                            add_assign(g, row);
                        }
                    });
                }
            }
            Op::ConcatCols { parts, .. } => {
                let n = self.shape(parts[0]).0;
                let total: usize = parts.iter().map(|&p| self.shape(p).1).sum();
                let mut offset = 0;
                for &p in parts {
                    let f = self.shape(p).1;
                    if wants(p) {
                        acc(grads, p, n * f, |g| {
                            for r in 0..n {
                                let src = &dy[r * total + offset..r * total + offset + f];
                                add_assign(&mut g[r * f..(r + 1) * f], src);
                            }
                        });
                    }
                    offset += f;
                }
            }
            Op::Add { a, b, .. } => {
                if wants(*a) {
                    acc(grads, *a, dy.len(), |g| add_assign(g, &dy));
                }
                if wants(*b) {
                    acc(grads, *b, dy.len(), |g| add_assign(g, &dy));
                }
            }
            Op::Sub { a, b, .. } => {
                if wants(*a) {
                    acc(grads, *a, dy.len(), |g| add_assign(g, &dy));
                }
                if wants(*b) {
                    acc(grads, *b, dy.len(), |g| {
                        g.iter_mut().zip(&dy).for_each(|(gi, d)| *gi -= d)
                    });
                }
            }
            Op::Mul { a, b, .. } => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if wants(*a) {
                    acc(grads, *a, dy.len(), |g| {
                        for i in 0..g.len() {
                            g[i] += dy[i] * bv[i];
                        }
                    });
                }
                if wants(*b) {
                    acc(grads, *b, dy.len(), |g| {
                        for i in 0..g.len() {
                            g[i] += dy[i] * av[i];
                        }
                    });
                }
            }
            Op::Div { a, b, .. } => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if wants(*a) {
                    acc(grads, *a, dy.len(), |g| {
                        for i in 0..g.len() {
                            g[i] += dy[i] / bv[i];
                        }
                    });
                }
                if wants(*b) {
                    acc(grads, *b, dy.len(), |g| {
                        for i in 0..g.len() {
                            g[i] -= dy[i] * av[i] / (bv[i] * bv[i]);
                        }
                    });
                }
            }
            Op::Scale { x, factor, .. } => {
                if wants(*x) {
                    acc(grads, *x, dy.len(), |g| {
                        g.iter_mut().zip(&dy).for_each(|(gi, d)| *gi += factor * d)
                    });
                }
            }
            Op::AddConst { x, .. } => {
                if wants(*x) {
                    acc(grads, *x, dy.len(), |g| add_assign(g, &dy));
                }
            }
            Op::Softplus { x, .. } => {
                if wants(*x) {
                    let xv = self.value(*x).data();
                    acc(grads, *x, dy.len(), |g| {
                        for i in 0..g.len() {
                            g[i] += dy[i] * sigmoid(xv[i]);
                        }
                    });
                }
            }
            Op::Sigmoid { x, out } => {
                if wants(*x) {
                    let yv = self.value(*out).data();
                    acc(grads, *x, dy.len(), |g| {
                        for i in 0..g.len() {
                            g[i] += dy[i] * yv[i] * (1.0 - yv[i]);
                        }
                    });
                }
            }
            Op::Clamp { x, lo, hi, .. } => {
                if wants(*x) {
                    let xv = self.value(*x).data();
                    acc(grads, *x, dy.len(), |g| {
                        for i in 0..g.len() {
                            if xv[i] >= *lo && xv[i] <= *hi {
                                g[i] += dy[i];
                            }
                        }
                    });
                }
            }
        }
    }
}

fn op_output(op: &Op<'_>) -> Var {
    match op {
        Op::MatMul { out, .. }
        | Op::Spmm { out, .. }
        | Op::AxpyScalar { out, .. }
        | Op::LayerNorm { out, .. }
        | Op::Relu { out, .. }
        | Op::Dropout { out, .. }
        | Op::SoftmaxXent { out, .. }
        | Op::AddRowBias { out, .. }
        | Op::ConcatCols { out, .. }
        | Op::Add { out, .. }
        | Op::Sub { out, .. }
        | Op::Mul { out, .. }
        | Op::Div { out, .. }
        | Op::Scale { out, .. }
        | Op::AddConst { out, .. }
        | Op::Softplus { out, .. }
        | Op::Sigmoid { out, .. }
        | Op::Clamp { out, .. } => *out,
    }
}

fn add_assign(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

/// `ln(1 + e^x)`, overflow-safe.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Inverse of [`softplus`] for `y > 0`.
pub fn softplus_inv(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
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
