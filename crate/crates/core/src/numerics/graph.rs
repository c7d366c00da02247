//! Record-and-replay reverse-mode differentiation over a fixed operator set.
//!
//! A [`Graph`] owns every value produced during a forward pass. Operations
//! append a node and return a [`Var`] handle; [`Graph::backward`] walks the
//! nodes in reverse and accumulates gradients into leaves that require them.
//! Node `k` only ever references nodes `< k`, so the recording order is a
//! topological order.

use std::sync::Arc;

use super::kernels;
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EwiseKind {
    Add,
    Mul,
}

/// Operator with a hand-written backward rule, recorded as an opaque node.
pub trait CustomOp<T: Real>: Send + Sync {
    fn name(&self) -> &'static str;

    /// Gradients for each input given the upstream gradient of the output.
    /// `None` means the input receives no gradient.
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad_out: &[T],
    ) -> Vec<Option<Vec<T>>>;
}

enum Op<T: Real> {
    Leaf,
    Linear { x: Var, w: Var, b: Option<Var> },
    DwConv { x: Var, k: Var, b: Option<Var> },
    Conv2d { x: Var, k: Var, b: Option<Var> },
    LayerNorm { x: Var, gamma: Var, beta: Var, stats: Vec<(T, T)> },
    Silu { x: Var },
    Sigmoid { x: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, factor: T },
    Gather { x: Var, index: Arc<Vec<usize>> },
    Concat { parts: Vec<Var> },
    Slice { x: Var, start: usize },
    ChannelMean { x: Var },
    ScaleChannels { x: Var, s: Var },
    Sum { x: Var },
    MeanAbsDiff { a: Var, b: Var },
    Custom { inputs: Vec<Var>, op: Box<dyn CustomOp<T>> },
}

struct Node<T: Real> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Recorded computation; see the module docs.
pub struct Graph<T: Real = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn add_into<T: Real>(slot: &mut Option<Vec<T>>, g: Vec<T>) {
    match slot {
        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
        None => *slot = Some(g),
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient accumulated on a leaf by [`Graph::backward`].
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad()
    }

    /// Records an input. Gradients flow to it iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        let needs_grad = t.requires_grad();
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a constant input that never receives gradients.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.leaf(t.with_requires_grad(false))
    }

    fn push(&mut self, name: &'static str, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Result<Var> {
        value.ensure_finite(name)?;
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    /// `y[..., j] = Σ_i x[..., i] · w[i, j] + b[j]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let cin = *xs.last().unwrap();
        if ws.len() != 2 || ws[0] != cin {
            return Err(Error::dim("linear", format!("x {xs:?} with weight {ws:?}")));
        }
        let cout = ws[1];
        if let Some(b) = b {
            if self.shape(b) != [cout] {
                return Err(Error::dim("linear", format!("bias {:?} for {cout} outputs", self.shape(b))));
            }
        }
        let rows = self.value(x).len() / cin;
        let y = kernels::linear_fwd(
            self.value(x).data(),
            rows,
            cin,
            self.value(w).data(),
            cout,
            b.map(|b| self.value(b).data()),
        );
        let mut shape = xs;
        *shape.last_mut().unwrap() = cout;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push("linear", Tensor::new(&shape, y)?, Op::Linear { x, w, b }, &inputs)
    }

    fn image_dims(&self, op: &'static str, x: Var) -> Result<(usize, usize, usize)> {
        match *self.shape(x) {
            [h, w, c] => Ok((h, w, c)),
            ref s => Err(Error::dim(op, format!("expected H×W×C, got {s:?}"))),
        }
    }

    /// Depth-wise same-padded convolution with an odd `K×K×C` kernel.
    pub fn dwconv2d(&mut self, x: Var, k: Var, b: Option<Var>) -> Result<Var> {
        let (h, w, c) = self.image_dims("dwconv2d", x)?;
        let ks = match *self.shape(k) {
            [k0, k1, kc] if k0 == k1 && kc == c => k0,
            ref s => return Err(Error::dim("dwconv2d", format!("kernel {s:?} for {c} channels"))),
        };
        if ks % 2 == 0 {
            return Err(Error::config(format!("dwconv2d kernel size {ks} must be odd")));
        }
        if let Some(b) = b {
            if self.shape(b) != [c] {
                return Err(Error::dim("dwconv2d", "bias length"));
            }
        }
        let y = kernels::dwconv_fwd(
            self.value(x).data(),
            h,
            w,
            c,
            self.value(k).data(),
            ks,
            b.map(|b| self.value(b).data()),
        );
        let mut inputs = vec![x, k];
        inputs.extend(b);
        self.push("dwconv2d", Tensor::new(&[h, w, c], y)?, Op::DwConv { x, k, b }, &inputs)
    }

    /// Dense same-padded convolution with a `K×K×Cin×Cout` kernel.
    pub fn conv2d(&mut self, x: Var, k: Var, b: Option<Var>) -> Result<Var> {
        let (h, w, cin) = self.image_dims("conv2d", x)?;
        let (ks, cout) = match *self.shape(k) {
            [k0, k1, ci, co] if k0 == k1 && ci == cin => (k0, co),
            ref s => return Err(Error::dim("conv2d", format!("kernel {s:?} for {cin} channels"))),
        };
        if ks % 2 == 0 {
            return Err(Error::config(format!("conv2d kernel size {ks} must be odd")));
        }
        if let Some(b) = b {
            if self.shape(b) != [cout] {
                return Err(Error::dim("conv2d", "bias length"));
            }
        }
        let y = kernels::conv2d_fwd(
            self.value(x).data(),
            h,
            w,
            cin,
            self.value(k).data(),
            ks,
            cout,
            b.map(|b| self.value(b).data()),
        );
        let mut inputs = vec![x, k];
        inputs.extend(b);
        self.push("conv2d", Tensor::new(&[h, w, cout], y)?, Op::Conv2d { x, k, b }, &inputs)
    }

    /// Normalizes over the last axis, then applies `gamma`/`beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        if eps <= 0.0 || eps.is_nan() {
            return Err(Error::config(format!("layer_norm eps must be > 0, got {eps}")));
        }
        let c = self.value(x).last_dim();
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(Error::dim("layer_norm", format!("affine params for {c} channels")));
        }
        let (y, stats) = kernels::layer_norm_fwd(
            self.value(x).data(),
            c,
            self.value(gamma).data(),
            self.value(beta).data(),
            T::from_f64_lossy(eps),
        );
        let shape = self.shape(x).to_vec();
        self.push(
            "layer_norm",
            Tensor::new(&shape, y)?,
            Op::LayerNorm { x, gamma, beta, stats },
            &[x, gamma, beta],
        )
    }

    pub fn silu(&mut self, x: Var) -> Result<Var> {
        let y = self.value(x).map(|v| v * kernels::sigmoid(v));
        self.push("silu", y, Op::Silu { x }, &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let y = self.value(x).map(kernels::sigmoid);
        self.push("sigmoid", y, Op::Sigmoid { x }, &[x])
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(self.shape(a), data)
    }

    pub fn ewise(&mut self, a: Var, b: Var, kind: EwiseKind) -> Result<Var> {
        match kind {
            EwiseKind::Add => self.add(a, b),
            EwiseKind::Mul => self.mul(a, b),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let y = self.zip_with(a, b, |x, y| x + y)?;
        self.push("add", y, Op::Add { a, b }, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let y = self.zip_with(a, b, |x, y| x - y)?;
        self.push("sub", y, Op::Sub { a, b }, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let y = self.zip_with(a, b, |x, y| x * y)?;
        self.push("mul", y, Op::Mul { a, b }, &[a, b])
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let factor = T::from_f64_lossy(factor);
        let y = self.value(x).map(|v| v * factor);
        self.push("scale", y, Op::Scale { x, factor }, &[x])
    }

    /// `out[i] = x[index[i]]` over flat storage, reshaped to `shape`.
    ///
    /// Indices may repeat (gradients are summed) or skip elements
    /// (those receive zero gradient).
    pub fn gather(&mut self, x: Var, index: Arc<Vec<usize>>, shape: &[usize]) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != index.len() {
            return Err(Error::dim("gather", format!("{} indices for shape {shape:?}", index.len())));
        }
        let src = self.value(x).data();
        if let Some(&bad) = index.iter().find(|&&i| i >= src.len()) {
            return Err(Error::dim("gather", format!("index {bad} out of {}", src.len())));
        }
        let data = index.iter().map(|&i| src[i]).collect();
        self.push("gather", Tensor::new(shape, data)?, Op::Gather { x, index }, &[x])
    }

    /// Concatenates along the last axis; leading axes must agree.
    pub fn concat_last(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        let lead = &self.shape(first)[..self.shape(first).len() - 1];
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            if &s[..s.len() - 1] != lead {
                return Err(Error::dim("concat", format!("{s:?} vs leading {lead:?}")));
            }
            total += s[s.len() - 1];
        }
        let rows: usize = lead.iter().product();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                let c = self.value(p).last_dim();
                data.extend_from_slice(&self.value(p).data()[r * c..(r + 1) * c]);
            }
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        self.push("concat", Tensor::new(&shape, data)?, Op::Concat { parts: parts.to_vec() }, parts)
    }

    /// Channels `start..start + len` of the last axis.
    pub fn slice_last(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let c = self.value(x).last_dim();
        if len == 0 || start + len > c {
            return Err(Error::dim("slice", format!("{start}+{len} of {c} channels")));
        }
        let data = self
            .value(x)
            .data()
            .chunks_exact(c)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        let mut shape = self.shape(x).to_vec();
        *shape.last_mut().unwrap() = len;
        self.push("slice", Tensor::new(&shape, data)?, Op::Slice { x, start }, &[x])
    }

    /// Mean over all leading axes: `[..., C] -> [C]`.
    pub fn channel_mean(&mut self, x: Var) -> Result<Var> {
        let c = self.value(x).last_dim();
        let rows = self.value(x).len() / c;
        let mut acc = vec![T::zero(); c];
        for row in self.value(x).data().chunks_exact(c) {
            acc.iter_mut().zip(row).for_each(|(a, &v)| *a += v);
        }
        let inv = T::from_usize(rows).unwrap().recip();
        acc.iter_mut().for_each(|a| *a *= inv);
        self.push("channel_mean", Tensor::new(&[c], acc)?, Op::ChannelMean { x }, &[x])
    }

    /// `y[..., c] = x[..., c] · s[c]`.
    pub fn scale_channels(&mut self, x: Var, s: Var) -> Result<Var> {
        let c = self.value(x).last_dim();
        if self.shape(s) != [c] {
            return Err(Error::dim("scale_channels", format!("{:?} for {c} channels", self.shape(s))));
        }
        let sv = self.value(s).data();
        let data = self
            .value(x)
            .data()
            .chunks_exact(c)
            .flat_map(|row| row.iter().zip(sv).map(|(&v, &k)| v * k))
            .collect();
        let shape = self.shape(x).to_vec();
        self.push("scale_channels", Tensor::new(&shape, data)?, Op::ScaleChannels { x, s }, &[x, s])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).sum();
        self.push("sum", Tensor::scalar(s), Op::Sum { x }, &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len() as f64;
        let s = self.sum(x)?;
        self.scale(s, 1.0 / n)
    }

    /// Mean absolute difference (L1 loss) as a scalar.
    pub fn l1_loss(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("l1_loss", a, b)?;
        let n = T::from_usize(self.value(a).len()).unwrap();
        let s: T = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| (x - y).abs())
            .sum();
        self.push("l1_loss", Tensor::scalar(s / n), Op::MeanAbsDiff { a, b }, &[a, b])
    }

    /// Records a custom operator whose forward value was computed by the caller.
    pub fn custom(&mut self, inputs: &[Var], output: Tensor<T>, op: Box<dyn CustomOp<T>>) -> Result<Var> {
        let name = op.name();
        self.push(
            name,
            output,
            Op::Custom {
                inputs: inputs.to_vec(),
                op,
            },
            inputs,
        )
    }

    /// Clears gradient accumulators on every leaf.
    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.value.zero_grad();
        }
    }

    /// Propagates `d output / d leaf` into every leaf that requires gradients.
    ///
    /// `output` must be a single-element tensor. Repeated calls accumulate.
    pub fn backward(&mut self, output: Var) -> Result<()> {
        if self.value(output).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar output, got shape {:?}",
                self.shape(output)
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = Vec::new();
        grads.resize_with(output.0 + 1, || None);
        grads[output.0] = Some(vec![T::one()]);

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].needs_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[idx].op {
                self.nodes[idx].value.accumulate_grad(&g);
                continue;
            }
            for (input, gi) in self.local_backward(idx, &g) {
                if self.nodes[input.0].needs_grad {
                    add_into(&mut grads[input.0], gi);
                }
            }
        }
        Ok(())
    }

    fn local_backward(&self, idx: usize, g: &[T]) -> Vec<(Var, Vec<T>)> {
        let node = &self.nodes[idx];
        let val = |v: Var| &self.nodes[v.0].value;
        let needs = |v: Var| self.nodes[v.0].needs_grad;
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            &Op::Linear { x, w, b } => {
                let cin = val(x).last_dim();
                let cout = val(w).shape()[1];
                let rows = val(x).len() / cin;
                let lg = kernels::linear_bwd(val(x).data(), rows, cin, val(w).data(), cout, g);
                out.push((x, lg.x));
                out.push((w, lg.w));
                if let Some(b) = b {
                    out.push((b, lg.b));
                }
            }
            &Op::DwConv { x, k, b } => {
                let s = val(x).shape();
                let ks = val(k).shape()[0];
                let cg = kernels::dwconv_bwd(val(x).data(), s[0], s[1], s[2], val(k).data(), ks, g);
                out.push((x, cg.x));
                out.push((k, cg.k));
                if let Some(b) = b {
                    out.push((b, cg.b));
                }
            }
            &Op::Conv2d { x, k, b } => {
                let s = val(x).shape();
                let ks = val(k).shape();
                let cg = kernels::conv2d_bwd(
                    val(x).data(),
                    s[0],
                    s[1],
                    s[2],
                    val(k).data(),
                    ks[0],
                    ks[3],
                    g,
                );
                out.push((x, cg.x));
                out.push((k, cg.k));
                if let Some(b) = b {
                    out.push((b, cg.b));
                }
            }
            Op::LayerNorm { x, gamma, beta, stats } => {
                let c = val(*x).last_dim();
                let ng = kernels::layer_norm_bwd(val(*x).data(), c, val(*gamma).data(), stats, g);
                out.push((*x, ng.x));
                out.push((*gamma, ng.gamma));
                out.push((*beta, ng.beta));
            }
            &Op::Silu { x } => {
                let gx = val(x)
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&v, &gy)| {
                        let s = kernels::sigmoid(v);
                        gy * s * (T::one() + v * (T::one() - s))
                    })
                    .collect();
                out.push((x, gx));
            }
            &Op::Sigmoid { x } => {
                let gx = node
                    .value
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&s, &gy)| gy * s * (T::one() - s))
                    .collect();
                out.push((x, gx));
            }
            &Op::Add { a, b } => {
                out.push((a, g.to_vec()));
                out.push((b, g.to_vec()));
            }
            &Op::Sub { a, b } => {
                out.push((a, g.to_vec()));
                out.push((b, g.iter().map(|&v| -v).collect()));
            }
            &Op::Mul { a, b } => {
                if needs(a) {
                    out.push((a, g.iter().zip(val(b).data()).map(|(&gy, &y)| gy * y).collect()));
                }
                if needs(b) {
                    out.push((b, g.iter().zip(val(a).data()).map(|(&gy, &x)| gy * x).collect()));
                }
            }
            &Op::Scale { x, factor } => {
                out.push((x, g.iter().map(|&v| v * factor).collect()));
            }
            Op::Gather { x, index } => {
                let mut gx = vec![T::zero(); val(*x).len()];
                for (&i, &gy) in index.iter().zip(g) {
                    gx[i] += gy;
                }
                out.push((*x, gx));
            }
            Op::Concat { parts } => {
                let total = node.value.last_dim();
                let rows = node.value.len() / total;
                let mut offset = 0;
                for &p in parts {
                    let c = val(p).last_dim();
                    if needs(p) {
                        let mut gp = Vec::with_capacity(rows * c);
                        for r in 0..rows {
                            gp.extend_from_slice(&g[r * total + offset..r * total + offset + c]);
                        }
                        out.push((p, gp));
                    }
                    offset += c;
                }
            }
            &Op::Slice { x, start } => {
                let c = val(x).last_dim();
                let len = node.value.last_dim();
                let mut gx = vec![T::zero(); val(x).len()];
                for (row, gr) in gx.chunks_exact_mut(c).zip(g.chunks_exact(len)) {
                    row[start..start + len].copy_from_slice(gr);
                }
                out.push((x, gx));
            }
            &Op::ChannelMean { x } => {
                let c = val(x).last_dim();
                let rows = val(x).len() / c;
                let inv = T::from_usize(rows).unwrap().recip();
                let gx = (0..rows)
                    .flat_map(|_| g.iter().map(move |&v| v * inv))
                    .collect();
                out.push((x, gx));
            }
            &Op::ScaleChannels { x, s } => {
                let c = val(x).last_dim();
                let sv = val(s).data();
                if needs(x) {
                    let gx = g
                        .chunks_exact(c)
                        .flat_map(|row| row.iter().zip(sv).map(|(&gy, &k)| gy * k))
                        .collect();
                    out.push((x, gx));
                }
                if needs(s) {
                    let mut gs = vec![T::zero(); c];
                    for (row, xr) in g.chunks_exact(c).zip(val(x).data().chunks_exact(c)) {
                        for ((a, &gy), &xv) in gs.iter_mut().zip(row).zip(xr) {
                            *a += gy * xv;
                        }
                    }
                    out.push((s, gs));
                }
            }
            &Op::Sum { x } => {
                out.push((x, vec![g[0]; val(x).len()]));
            }
            &Op::MeanAbsDiff { a, b } => {
                let n = T::from_usize(val(a).len()).unwrap();
                let scale = g[0] / n;
                let ga: Vec<T> = val(a)
                    .data()
                    .iter()
                    .zip(val(b).data())
                    .map(|(&x, &y)| {
                        let d = x - y;
                        if d > T::zero() {
                            scale
                        } else if d < T::zero() {
                            -scale
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                out.push((b, ga.iter().map(|&v| -v).collect()));
                out.push((a, ga));
            }
            Op::Custom { inputs, op } => {
                let ins: Vec<&Tensor<T>> = inputs.iter().map(|&v| val(v)).collect();
                for (&v, gi) in inputs.iter().zip(op.backward(&ins, &node.value, g)) {
                    if let Some(gi) = gi {
                        out.push((v, gi));
                    }
                }
            }
        }
        out
    }
}
