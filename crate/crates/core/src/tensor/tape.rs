//! Wengert tape: records ops during the forward pass, replays them in
//! reverse for gradients.
//!
//! Nodes are append-only, so parents always precede children and a single
//! reverse scan implements the chain rule. Gradients accumulate into
//! per-node buffers until [`Tape::zero_grads`] is called; a second
//! `backward` therefore doubles leaf gradients (accumulator semantics).

use super::kernels::{self, ConvGeom};
use super::{Tensor, TensorError};

/// Handle linking a value to its node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorId(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElemKind {
    Add,
    Sub,
    Mul,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    LeakyRelu,
    Tanh,
    Sigmoid,
}

/// Slope of the leaky branch, fixed by convention.
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    AddScalar { a: usize },
    MulScalar { a: usize, s: f64 },
    Abs { a: usize },
    LogClamped { a: usize, eps: f64 },
    Act { a: usize, kind: Activation },
    Sum { a: usize },
    Mean { a: usize },
    Conv2d { input: usize, weight: usize, bias: Option<usize>, geom: ConvGeom },
    ConvTranspose2d { input: usize, weight: usize, bias: Option<usize>, geom: ConvGeom },
    MaxPool2 { a: usize, argmax: Vec<usize> },
    UpsampleNearest { a: usize, r: usize },
    PixelShuffle { a: usize, perm: Vec<usize> },
    InstanceNorm { x: usize, gamma: usize, beta: usize, eps: f64, stats: Vec<(f64, f64)> },
    ConcatChannels { parts: Vec<usize> },
    SliceChannels { a: usize, from: usize, to: usize },
}

struct Node {
    value: Tensor,
    op: Op,
    requires: bool,
    grad: Option<Vec<f64>>,
}

/// Recorded computation graph plus gradient accumulators.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Insert a leaf value. Only leaves with `requires_grad` (and nodes
    /// computed from them) receive gradients.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> TensorId {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> TensorId {
        self.leaf(value, false)
    }

    /// Copy of a node's value, cut off from the graph.
    pub fn detach(&mut self, id: TensorId) -> TensorId {
        let v = self.nodes[id.0].value.clone();
        self.leaf(v, false)
    }

    pub fn value(&self, id: TensorId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: TensorId) -> Option<&[f64]> {
        self.nodes[id.0].grad.as_deref()
    }

    pub fn grad_tensor(&self, id: TensorId) -> Option<Tensor> {
        let node = &self.nodes[id.0];
        node.grad
            .as_ref()
            .map(|g| Tensor::new(node.value.shape().to_vec(), g.clone()).expect("grad shape"))
    }

    pub fn zero_grads(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    fn push(&mut self, value: Tensor, op: Op, requires: bool) -> TensorId {
        debug_assert!(value.is_finite(), "non-finite forward value");
        let id = self.nodes.len();
        self.nodes.push(Node { value, op, requires, grad: None });
        TensorId(id)
    }

    fn any_requires(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.nodes[i].requires)
    }

    // ── elementwise ─────────────────────────────────────────────────

    pub fn elementwise(&mut self, a: TensorId, b: TensorId, kind: ElemKind) -> Result<TensorId, TensorError> {
        match kind {
            ElemKind::Add => self.add(a, b),
            ElemKind::Sub => self.sub(a, b),
            ElemKind::Mul => self.mul(a, b),
        }
    }

    fn binary_shapes(&self, a: TensorId, b: TensorId) -> Result<(), TensorError> {
        let sa = self.nodes[a.0].value.shape();
        let sb = self.nodes[b.0].value.shape();
        if sa == sb || self.nodes[b.0].value.numel() == 1 {
            Ok(())
        } else {
            Err(TensorError::ShapeMismatch { lhs: sa.to_vec(), rhs: sb.to_vec() })
        }
    }

    /// rhs may be a one-element tensor (scalar broadcast).
    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        self.binary_shapes(a, b)?;
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let out = if vb.numel() == 1 {
            va.map(|x| x + vb.data()[0])
        } else {
            Tensor::new(
                va.shape().to_vec(),
                va.data().iter().zip(vb.data()).map(|(x, y)| x + y).collect(),
            )?
        };
        let req = self.any_requires(&[a.0, b.0]);
        Ok(self.push(out, Op::Add { a: a.0, b: b.0 }, req))
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        self.binary_shapes(a, b)?;
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let out = if vb.numel() == 1 {
            va.map(|x| x - vb.data()[0])
        } else {
            Tensor::new(
                va.shape().to_vec(),
                va.data().iter().zip(vb.data()).map(|(x, y)| x - y).collect(),
            )?
        };
        let req = self.any_requires(&[a.0, b.0]);
        Ok(self.push(out, Op::Sub { a: a.0, b: b.0 }, req))
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        self.binary_shapes(a, b)?;
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let out = if vb.numel() == 1 {
            va.map(|x| x * vb.data()[0])
        } else {
            Tensor::new(
                va.shape().to_vec(),
                va.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect(),
            )?
        };
        let req = self.any_requires(&[a.0, b.0]);
        Ok(self.push(out, Op::Mul { a: a.0, b: b.0 }, req))
    }

    pub fn add_scalar(&mut self, a: TensorId, s: f64) -> TensorId {
        let out = self.nodes[a.0].value.map(|x| x + s);
        let req = self.nodes[a.0].requires;
        self.push(out, Op::AddScalar { a: a.0 }, req)
    }

    pub fn mul_scalar(&mut self, a: TensorId, s: f64) -> TensorId {
        let out = self.nodes[a.0].value.map(|x| x * s);
        let req = self.nodes[a.0].requires;
        self.push(out, Op::MulScalar { a: a.0, s }, req)
    }

    pub fn abs(&mut self, a: TensorId) -> TensorId {
        let out = self.nodes[a.0].value.map(f64::abs);
        let req = self.nodes[a.0].requires;
        self.push(out, Op::Abs { a: a.0 }, req)
    }

    /// ln(max(x, eps)); the clamp keeps adversarial losses finite at scores 0/1.
    pub fn log_clamped(&mut self, a: TensorId, eps: f64) -> TensorId {
        let out = self.nodes[a.0].value.map(|x| x.max(eps).ln());
        let req = self.nodes[a.0].requires;
        self.push(out, Op::LogClamped { a: a.0, eps }, req)
    }

    pub fn activation(&mut self, a: TensorId, kind: Activation) -> TensorId {
        let out = match kind {
            Activation::Relu => self.nodes[a.0].value.map(|x| x.max(0.0)),
            Activation::LeakyRelu => self.nodes[a.0].value.map(|x| if x > 0.0 { x } else { LEAKY_SLOPE * x }),
            Activation::Tanh => self.nodes[a.0].value.map(f64::tanh),
            Activation::Sigmoid => self.nodes[a.0].value.map(|x| 1.0 / (1.0 + (-x).exp())),
        };
        let req = self.nodes[a.0].requires;
        self.push(out, Op::Act { a: a.0, kind }, req)
    }

    // ── reductions ──────────────────────────────────────────────────

    pub fn sum(&mut self, a: TensorId) -> TensorId {
        let s: f64 = self.nodes[a.0].value.data().iter().sum();
        let req = self.nodes[a.0].requires;
        self.push(Tensor::scalar(s), Op::Sum { a: a.0 }, req)
    }

    pub fn mean(&mut self, a: TensorId) -> TensorId {
        let v = &self.nodes[a.0].value;
        let s: f64 = v.data().iter().sum();
        let m = s / v.numel() as f64;
        let req = self.nodes[a.0].requires;
        self.push(Tensor::scalar(m), Op::Mean { a: a.0 }, req)
    }

    // ── convolution family ──────────────────────────────────────────

    pub fn conv2d(
        &mut self,
        input: TensorId,
        weight: TensorId,
        bias: Option<TensorId>,
        stride: usize,
        padding: usize,
        dilation: usize,
    ) -> Result<TensorId, TensorError> {
        if stride == 0 || dilation == 0 {
            return Err(TensorError::InvalidGeometry("stride and dilation must be >= 1".into()));
        }
        let (n, c_in, h, w) = self.nodes[input.0].value.dims4()?;
        let (c_out, wc_in, kh, kw) = self.nodes[weight.0].value.dims4()?;
        if wc_in != c_in {
            return Err(TensorError::ShapeMismatch {
                lhs: self.nodes[input.0].value.shape().to_vec(),
                rhs: self.nodes[weight.0].value.shape().to_vec(),
            });
        }
        if let Some(b) = bias {
            if self.nodes[b.0].value.numel() != c_out {
                return Err(TensorError::ShapeMismatch {
                    lhs: vec![c_out],
                    rhs: self.nodes[b.0].value.shape().to_vec(),
                });
            }
        }
        let h_out = ConvGeom::out_extent(h, kh, stride, padding, dilation);
        let w_out = ConvGeom::out_extent(w, kw, stride, padding, dilation);
        let (Some(h_out), Some(w_out)) = (h_out, w_out) else {
            return Err(TensorError::KernelTooLarge {
                kernel: dilation * (kh - 1) + 1,
                kernel2: dilation * (kw - 1) + 1,
                padded: h + 2 * padding,
                padded2: w + 2 * padding,
            });
        };
        let geom = ConvGeom {
            batch: n,
            c_in,
            c_out,
            h_in: h,
            w_in: w,
            h_out,
            w_out,
            kh,
            kw,
            stride,
            padding,
            dilation,
        };
        let mut out = kernels::conv_gather(self.nodes[input.0].value.data(), self.nodes[weight.0].value.data(), &geom);
        if let Some(b) = bias {
            let bdata = self.nodes[b.0].value.data();
            let plane = h_out * w_out;
            for ni in 0..n {
                for co in 0..c_out {
                    let base = (ni * c_out + co) * plane;
                    let bv = bdata[co];
                    for v in &mut out[base..base + plane] {
                        *v += bv;
                    }
                }
            }
        }
        let value = Tensor::new(vec![n, c_out, h_out, w_out], out)?;
        let mut deps = vec![input.0, weight.0];
        if let Some(b) = bias {
            deps.push(b.0);
        }
        let req = self.any_requires(&deps);
        Ok(self.push(
            value,
            Op::Conv2d { input: input.0, weight: weight.0, bias: bias.map(|b| b.0), geom },
            req,
        ))
    }

    /// Adjoint of [`Tape::conv2d`] with the same `[C_from, C_to, kh, kw]`
    /// weight layout: forward here equals conv2d's backward-input.
    pub fn conv_transpose2d(
        &mut self,
        input: TensorId,
        weight: TensorId,
        bias: Option<TensorId>,
        stride: usize,
        padding: usize,
    ) -> Result<TensorId, TensorError> {
        if stride == 0 {
            return Err(TensorError::InvalidGeometry("stride must be >= 1".into()));
        }
        let (n, c_from, h_in, w_in) = self.nodes[input.0].value.dims4()?;
        let (wc_from, c_to, kh, kw) = self.nodes[weight.0].value.dims4()?;
        if wc_from != c_from {
            return Err(TensorError::ShapeMismatch {
                lhs: self.nodes[input.0].value.shape().to_vec(),
                rhs: self.nodes[weight.0].value.shape().to_vec(),
            });
        }
        let h_full = (h_in - 1) * stride + kh;
        let w_full = (w_in - 1) * stride + kw;
        if h_full < 2 * padding + 1 || w_full < 2 * padding + 1 {
            return Err(TensorError::InvalidGeometry(format!(
                "transposed conv output {}x{} not positive after padding {}",
                h_full as isize - 2 * padding as isize,
                w_full as isize - 2 * padding as isize,
                padding
            )));
        }
        let h_out = h_full - 2 * padding;
        let w_out = w_full - 2 * padding;
        if let Some(b) = bias {
            if self.nodes[b.0].value.numel() != c_to {
                return Err(TensorError::ShapeMismatch {
                    lhs: vec![c_to],
                    rhs: self.nodes[b.0].value.shape().to_vec(),
                });
            }
        }
        // Same geometry as the conv this op is adjoint to.
        let geom = ConvGeom {
            batch: n,
            c_in: c_to,
            c_out: c_from,
            h_in: h_out,
            w_in: w_out,
            h_out: h_in,
            w_out: w_in,
            kh,
            kw,
            stride,
            padding,
            dilation: 1,
        };
        let mut out = kernels::conv_scatter(self.nodes[input.0].value.data(), self.nodes[weight.0].value.data(), &geom);
        if let Some(b) = bias {
            let bdata = self.nodes[b.0].value.data();
            let plane = h_out * w_out;
            for ni in 0..n {
                for ct in 0..c_to {
                    let base = (ni * c_to + ct) * plane;
                    let bv = bdata[ct];
                    for v in &mut out[base..base + plane] {
                        *v += bv;
                    }
                }
            }
        }
        let value = Tensor::new(vec![n, c_to, h_out, w_out], out)?;
        let mut deps = vec![input.0, weight.0];
        if let Some(b) = bias {
            deps.push(b.0);
        }
        let req = self.any_requires(&deps);
        Ok(self.push(
            value,
            Op::ConvTranspose2d { input: input.0, weight: weight.0, bias: bias.map(|b| b.0), geom },
            req,
        ))
    }

    pub fn maxpool2(&mut self, a: TensorId) -> Result<TensorId, TensorError> {
        let (n, c, h, w) = self.nodes[a.0].value.dims4()?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(TensorError::OddSpatial { h, w });
        }
        let (out, argmax) = kernels::maxpool2(self.nodes[a.0].value.data(), n, c, h, w);
        let value = Tensor::new(vec![n, c, h / 2, w / 2], out)?;
        let req = self.nodes[a.0].requires;
        Ok(self.push(value, Op::MaxPool2 { a: a.0, argmax }, req))
    }

    pub fn upsample_nearest(&mut self, a: TensorId, r: usize) -> Result<TensorId, TensorError> {
        if r == 0 {
            return Err(TensorError::InvalidGeometry("upsample factor must be >= 1".into()));
        }
        let (n, c, h, w) = self.nodes[a.0].value.dims4()?;
        let out = kernels::upsample_nearest(self.nodes[a.0].value.data(), n, c, h, w, r);
        let value = Tensor::new(vec![n, c, h * r, w * r], out)?;
        let req = self.nodes[a.0].requires;
        Ok(self.push(value, Op::UpsampleNearest { a: a.0, r }, req))
    }

    pub fn pixel_shuffle(&mut self, a: TensorId, r: usize) -> Result<TensorId, TensorError> {
        if r == 0 {
            return Err(TensorError::InvalidGeometry("shuffle factor must be >= 1".into()));
        }
        let (n, c, h, w) = self.nodes[a.0].value.dims4()?;
        if c % (r * r) != 0 {
            return Err(TensorError::ChannelsNotDivisible { channels: c, rsq: r * r });
        }
        let c_out = c / (r * r);
        let perm = kernels::pixel_shuffle_perm(c_out, h, w, r);
        let src = self.nodes[a.0].value.data();
        let plane = c * h * w;
        let mut out = vec![0.0; src.len()];
        for ni in 0..n {
            let sp = &src[ni * plane..(ni + 1) * plane];
            let op = &mut out[ni * plane..(ni + 1) * plane];
            for (o, &pi) in op.iter_mut().zip(perm.iter()) {
                *o = sp[pi];
            }
        }
        let value = Tensor::new(vec![n, c_out, h * r, w * r], out)?;
        let req = self.nodes[a.0].requires;
        Ok(self.push(value, Op::PixelShuffle { a: a.0, perm }, req))
    }

    /// Per-(sample, channel) standardisation followed by a `gamma, beta`
    /// affine map.
    pub fn instance_norm(
        &mut self,
        x: TensorId,
        gamma: TensorId,
        beta: TensorId,
        eps: f64,
    ) -> Result<TensorId, TensorError> {
        let (n, c, h, w) = self.nodes[x.0].value.dims4()?;
        if self.nodes[gamma.0].value.numel() != c || self.nodes[beta.0].value.numel() != c {
            return Err(TensorError::ShapeMismatch {
                lhs: vec![c],
                rhs: self.nodes[gamma.0].value.shape().to_vec(),
            });
        }
        let src = self.nodes[x.0].value.data();
        let gdata = self.nodes[gamma.0].value.data();
        let bdata = self.nodes[beta.0].value.data();
        let plane = h * w;
        let mut out = vec![0.0; src.len()];
        let mut stats = Vec::with_capacity(n * c);
        for nc in 0..n * c {
            let ch = nc % c;
            let s = &src[nc * plane..(nc + 1) * plane];
            let mean = s.iter().sum::<f64>() / plane as f64;
            let var = s.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / plane as f64;
            let inv_std = 1.0 / (var + eps).sqrt();
            stats.push((mean, inv_std));
            let o = &mut out[nc * plane..(nc + 1) * plane];
            for (ov, &sv) in o.iter_mut().zip(s.iter()) {
                *ov = (sv - mean) * inv_std * gdata[ch] + bdata[ch];
            }
        }
        let value = Tensor::new(vec![n, c, h, w], out)?;
        let req = self.any_requires(&[x.0, gamma.0, beta.0]);
        Ok(self.push(
            value,
            Op::InstanceNorm { x: x.0, gamma: gamma.0, beta: beta.0, eps, stats },
            req,
        ))
    }

    pub fn concat_channels(&mut self, parts: &[TensorId]) -> Result<TensorId, TensorError> {
        if parts.is_empty() {
            return Err(TensorError::InvalidGeometry("concat of zero tensors".into()));
        }
        let (n, _, h, w) = self.nodes[parts[0].0].value.dims4()?;
        let mut c_total = 0;
        for p in parts {
            let (pn, pc, ph, pw) = self.nodes[p.0].value.dims4()?;
            if pn != n || ph != h || pw != w {
                return Err(TensorError::ShapeMismatch {
                    lhs: self.nodes[parts[0].0].value.shape().to_vec(),
                    rhs: self.nodes[p.0].value.shape().to_vec(),
                });
            }
            c_total += pc;
        }
        let plane = h * w;
        let mut out = vec![0.0; n * c_total * plane];
        for ni in 0..n {
            let mut c_off = 0;
            for p in parts {
                let pc = self.nodes[p.0].value.shape()[1];
                let src = self.nodes[p.0].value.data();
                let src_n = &src[ni * pc * plane..(ni + 1) * pc * plane];
                let dst = &mut out[(ni * c_total + c_off) * plane..(ni * c_total + c_off + pc) * plane];
                dst.copy_from_slice(src_n);
                c_off += pc;
            }
        }
        let value = Tensor::new(vec![n, c_total, h, w], out)?;
        let idx: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let req = self.any_requires(&idx);
        Ok(self.push(value, Op::ConcatChannels { parts: idx }, req))
    }

    /// Channels `[from, to)` of an `[N, C, H, W]` tensor.
    pub fn slice_channels(&mut self, a: TensorId, from: usize, to: usize) -> Result<TensorId, TensorError> {
        let (n, c, h, w) = self.nodes[a.0].value.dims4()?;
        if from >= to || to > c {
            return Err(TensorError::InvalidGeometry(format!(
                "channel slice {from}..{to} out of range for {c} channels"
            )));
        }
        let plane = h * w;
        let ck = to - from;
        let src = self.nodes[a.0].value.data();
        let mut out = vec![0.0; n * ck * plane];
        for ni in 0..n {
            let src_n = &src[(ni * c + from) * plane..(ni * c + to) * plane];
            out[ni * ck * plane..(ni + 1) * ck * plane].copy_from_slice(src_n);
        }
        let value = Tensor::new(vec![n, ck, h, w], out)?;
        let req = self.nodes[a.0].requires;
        Ok(self.push(value, Op::SliceChannels { a: a.0, from, to }, req))
    }

    // ── backward ────────────────────────────────────────────────────

    /// Reverse pass from a scalar root; gradients accumulate into every
    /// tracked ancestor. Untouched nodes keep a zero (absent) gradient.
    pub fn backward(&mut self, root: TensorId) -> Result<(), TensorError> {
        let numel = self.nodes[root.0].value.numel();
        if numel != 1 {
            return Err(TensorError::NonScalarRoot { numel });
        }
        let mut cot: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        cot[root.0] = Some(vec![1.0; numel]);

        for i in (0..=root.0).rev() {
            let Some(g) = cot[i].take() else { continue };
            // Accumulate into the persistent buffer.
            match &mut self.nodes[i].grad {
                Some(acc) => {
                    for (a, b) in acc.iter_mut().zip(g.iter()) {
                        *a += b;
                    }
                }
                slot @ None => *slot = Some(g.clone()),
            }
            let op = &self.nodes[i].op;
            match op {
                Op::Leaf => {}
                Op::Add { a, b } => {
                    let (a, b) = (*a, *b);
                    self.flow(&mut cot, a, &g);
                    if self.nodes[b].value.numel() == 1 {
                        self.flow_scalar(&mut cot, b, g.iter().sum());
                    } else {
                        self.flow(&mut cot, b, &g);
                    }
                }
                Op::Sub { a, b } => {
                    let (a, b) = (*a, *b);
                    self.flow(&mut cot, a, &g);
                    if self.nodes[b].value.numel() == 1 {
                        self.flow_scalar(&mut cot, b, -g.iter().sum::<f64>());
                    } else {
                        let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                        self.flow(&mut cot, b, &neg);
                    }
                }
                Op::Mul { a, b } => {
                    let (a, b) = (*a, *b);
                    let vb = self.nodes[b].value.data();
                    let va = self.nodes[a].value.data();
                    if self.nodes[b].value.numel() == 1 {
                        let s = vb[0];
                        let da: Vec<f64> = g.iter().map(|v| v * s).collect();
                        let db: f64 = g.iter().zip(va).map(|(gv, av)| gv * av).sum();
                        self.flow(&mut cot, a, &da);
                        self.flow_scalar(&mut cot, b, db);
                    } else {
                        let da: Vec<f64> = g.iter().zip(vb).map(|(gv, bv)| gv * bv).collect();
                        let db: Vec<f64> = g.iter().zip(va).map(|(gv, av)| gv * av).collect();
                        self.flow(&mut cot, a, &da);
                        self.flow(&mut cot, b, &db);
                    }
                }
                Op::AddScalar { a } => {
                    let a = *a;
                    self.flow(&mut cot, a, &g);
                }
                Op::MulScalar { a, s } => {
                    let (a, s) = (*a, *s);
                    let da: Vec<f64> = g.iter().map(|v| v * s).collect();
                    self.flow(&mut cot, a, &da);
                }
                Op::Abs { a } => {
                    let a = *a;
                    let va = self.nodes[a].value.data();
                    let da: Vec<f64> = g
                        .iter()
                        .zip(va)
                        .map(|(gv, &xv)| {
                            if xv > 0.0 {
                                *gv
                            } else if xv < 0.0 {
                                -*gv
                            } else {
                                0.0
                            }
                        })
                        .collect();
                    self.flow(&mut cot, a, &da);
                }
                Op::LogClamped { a, eps } => {
                    let (a, eps) = (*a, *eps);
                    let va = self.nodes[a].value.data();
                    let da: Vec<f64> = g
                        .iter()
                        .zip(va)
                        .map(|(gv, &xv)| if xv > eps { gv / xv } else { 0.0 })
                        .collect();
                    self.flow(&mut cot, a, &da);
                }
                Op::Act { a, kind } => {
                    let (a, kind) = (*a, *kind);
                    let da: Vec<f64> = match kind {
                        Activation::Relu => {
                            let va = self.nodes[a].value.data();
                            g.iter().zip(va).map(|(gv, &xv)| if xv > 0.0 { *gv } else { 0.0 }).collect()
                        }
                        Activation::LeakyRelu => {
                            let va = self.nodes[a].value.data();
                            g.iter()
                                .zip(va)
                                .map(|(gv, &xv)| if xv > 0.0 { *gv } else { LEAKY_SLOPE * gv })
                                .collect()
                        }
                        Activation::Tanh => {
                            let out = self.nodes[i].value.data();
                            g.iter().zip(out).map(|(gv, &t)| gv * (1.0 - t * t)).collect()
                        }
                        Activation::Sigmoid => {
                            let out = self.nodes[i].value.data();
                            g.iter().zip(out).map(|(gv, &s)| gv * s * (1.0 - s)).collect()
                        }
                    };
                    self.flow(&mut cot, a, &da);
                }
                Op::Sum { a } => {
                    let a = *a;
                    let n = self.nodes[a].value.numel();
                    self.flow_broadcast(&mut cot, a, g[0], n);
                }
                Op::Mean { a } => {
                    let a = *a;
                    let n = self.nodes[a].value.numel();
                    self.flow_broadcast(&mut cot, a, g[0] / n as f64, n);
                }
                Op::Conv2d { input, weight, bias, geom } => {
                    let (input, weight, bias, geom) = (*input, *weight, *bias, *geom);
                    if self.nodes[input].requires {
                        let dinput = kernels::conv_scatter(&g, self.nodes[weight].value.data(), &geom);
                        self.flow(&mut cot, input, &dinput);
                    }
                    if self.nodes[weight].requires {
                        let dw = kernels::conv_weight_grad(self.nodes[input].value.data(), &g, &geom);
                        self.flow(&mut cot, weight, &dw);
                    }
                    if let Some(b) = bias {
                        if self.nodes[b].requires {
                            let db = channel_sums(&g, geom.batch, geom.c_out, geom.h_out * geom.w_out);
                            self.flow(&mut cot, b, &db);
                        }
                    }
                }
                Op::ConvTranspose2d { input, weight, bias, geom } => {
                    let (input, weight, bias, geom) = (*input, *weight, *bias, *geom);
                    if self.nodes[input].requires {
                        let dinput = kernels::conv_gather(&g, self.nodes[weight].value.data(), &geom);
                        self.flow(&mut cot, input, &dinput);
                    }
                    if self.nodes[weight].requires {
                        let dw = kernels::conv_weight_grad(&g, self.nodes[input].value.data(), &geom);
                        self.flow(&mut cot, weight, &dw);
                    }
                    if let Some(b) = bias {
                        if self.nodes[b].requires {
                            let db = channel_sums(&g, geom.batch, geom.c_in, geom.h_in * geom.w_in);
                            self.flow(&mut cot, b, &db);
                        }
                    }
                }
                Op::MaxPool2 { a, argmax } => {
                    let a = *a;
                    let mut da = vec![0.0; self.nodes[a].value.numel()];
                    for (gv, &src_idx) in g.iter().zip(argmax.iter()) {
                        da[src_idx] += gv;
                    }
                    self.flow(&mut cot, a, &da);
                }
                Op::UpsampleNearest { a, r } => {
                    let (a, r) = (*a, *r);
                    let (n, c, h, w) = self.nodes[a].value.dims4().expect("recorded shape");
                    let wo = w * r;
                    let mut da = vec![0.0; n * c * h * w];
                    for nc in 0..n * c {
                        let gp = &g[nc * h * r * wo..(nc + 1) * h * r * wo];
                        let dp = &mut da[nc * h * w..(nc + 1) * h * w];
                        for y in 0..h * r {
                            let drow = &mut dp[(y / r) * w..(y / r + 1) * w];
                            let grow = &gp[y * wo..(y + 1) * wo];
                            for x in 0..wo {
                                drow[x / r] += grow[x];
                            }
                        }
                    }
                    self.flow(&mut cot, a, &da);
                }
                Op::PixelShuffle { a, perm } => {
                    let a = *a;
                    let plane = perm.len();
                    let n = self.nodes[a].value.shape()[0];
                    let mut da = vec![0.0; self.nodes[a].value.numel()];
                    for ni in 0..n {
                        let gp = &g[ni * plane..(ni + 1) * plane];
                        let dp = &mut da[ni * plane..(ni + 1) * plane];
                        for (gv, &pi) in gp.iter().zip(perm.iter()) {
                            dp[pi] += gv;
                        }
                    }
                    self.flow(&mut cot, a, &da);
                }
                Op::InstanceNorm { x, gamma, beta, eps: _, stats } => {
                    let (x, gamma, beta) = (*x, *gamma, *beta);
                    let (n, c, h, w) = self.nodes[x].value.dims4().expect("recorded shape");
                    let plane = h * w;
                    let xv = self.nodes[x].value.data();
                    let gv = self.nodes[gamma].value.data();
                    let mut dx = vec![0.0; xv.len()];
                    let mut dgamma = vec![0.0; c];
                    let mut dbeta = vec![0.0; c];
                    for nc in 0..n * c {
                        let ch = nc % c;
                        let (mean, inv_std) = stats[nc];
                        let xs = &xv[nc * plane..(nc + 1) * plane];
                        let gs = &g[nc * plane..(nc + 1) * plane];
                        let mut sum_g = 0.0;
                        let mut sum_gx = 0.0;
                        for (gi, &xi) in gs.iter().zip(xs.iter()) {
                            let xhat = (xi - mean) * inv_std;
                            sum_g += gi;
                            sum_gx += gi * xhat;
                        }
                        dbeta[ch] += sum_g;
                        dgamma[ch] += sum_gx;
                        let m = plane as f64;
                        let ds = &mut dx[nc * plane..(nc + 1) * plane];
                        for ((di, gi), &xi) in ds.iter_mut().zip(gs.iter()).zip(xs.iter()) {
                            let xhat = (xi - mean) * inv_std;
                            *di = gv[ch] * inv_std * (gi - sum_g / m - xhat * sum_gx / m);
                        }
                    }
                    self.flow(&mut cot, x, &dx);
                    self.flow(&mut cot, gamma, &dgamma);
                    self.flow(&mut cot, beta, &dbeta);
                }
                Op::ConcatChannels { parts } => {
                    let parts = parts.clone();
                    let c_total: usize = parts.iter().map(|&p| self.nodes[p].value.shape()[1]).sum();
                    let (n, _, h, w) = self.nodes[i].value.dims4().expect("recorded shape");
                    let plane = h * w;
                    let mut c_off = 0;
                    for p in parts {
                        let pc = self.nodes[p].value.shape()[1];
                        if self.nodes[p].requires {
                            let mut dp = vec![0.0; n * pc * plane];
                            for ni in 0..n {
                                let src = &g[(ni * c_total + c_off) * plane..(ni * c_total + c_off + pc) * plane];
                                dp[ni * pc * plane..(ni + 1) * pc * plane].copy_from_slice(src);
                            }
                            self.flow(&mut cot, p, &dp);
                        }
                        c_off += pc;
                    }
                }
                Op::SliceChannels { a, from, to } => {
                    let (a, from, to) = (*a, *from, *to);
                    let (n, c, h, w) = self.nodes[a].value.dims4().expect("recorded shape");
                    let plane = h * w;
                    let ck = to - from;
                    let mut da = vec![0.0; n * c * plane];
                    for ni in 0..n {
                        let dst = &mut da[(ni * c + from) * plane..(ni * c + to) * plane];
                        let src = &g[ni * ck * plane..(ni + 1) * ck * plane];
                        for (d, s) in dst.iter_mut().zip(src.iter()) {
                            *d += s;
                        }
                    }
                    self.flow(&mut cot, a, &da);
                }
            }
        }
        Ok(())
    }

    fn flow(&self, cot: &mut [Option<Vec<f64>>], target: usize, contribution: &[f64]) {
        if !self.nodes[target].requires {
            return;
        }
        match &mut cot[target] {
            Some(buf) => {
                for (b, c) in buf.iter_mut().zip(contribution.iter()) {
                    *b += c;
                }
            }
            slot @ None => *slot = Some(contribution.to_vec()),
        }
    }

    fn flow_scalar(&self, cot: &mut [Option<Vec<f64>>], target: usize, contribution: f64) {
        self.flow(cot, target, &[contribution]);
    }

    fn flow_broadcast(&self, cot: &mut [Option<Vec<f64>>], target: usize, value: f64, numel: usize) {
        if !self.nodes[target].requires {
            return;
        }
        match &mut cot[target] {
            Some(buf) => {
                for b in buf.iter_mut() {
                    *b += value;
                }
            }
            slot @ None => *slot = Some(vec![value; numel]),
        }
    }
}

fn channel_sums(g: &[f64], batch: usize, channels: usize, plane: usize) -> Vec<f64> {
    let mut sums = vec![0.0; channels];
    for n in 0..batch {
        for c in 0..channels {
            let base = (n * channels + c) * plane;
            sums[c] += g[base..base + plane].iter().sum::<f64>();
        }
    }
    sums
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{grad_check, SmallRng};

    #[test]
    fn add_matches_arithmetic() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap(), false);
        let b = t.leaf(Tensor::new(vec![2], vec![3.0, 4.0]).unwrap(), false);
        let c = t.elementwise(a, b, ElemKind::Add).unwrap();
        assert_eq!(t.value(c).data(), &[4.0, 6.0]);
    }

    #[test]
    fn shape_mismatch_reports_both_shapes() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::zeros(vec![2, 3]), false);
        let b = t.leaf(Tensor::zeros(vec![4]), false);
        let err = t.add(a, b).unwrap_err();
        assert_eq!(
            err,
            TensorError::ShapeMismatch { lhs: vec![2, 3], rhs: vec![4] }
        );
    }

    #[test]
    fn mul_by_zero_annihilates_value_and_gradient() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::new(vec![3], vec![1.5, -2.0, 0.3]).unwrap(), true);
        let zero = t.constant(Tensor::scalar(0.0));
        let y = t.mul(x, zero).unwrap();
        assert_eq!(t.value(y).data(), &[0.0, 0.0, 0.0]);
        let s = t.sum(y);
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn mul_gradient_is_other_factor() {
        let mut rng = SmallRng::new(7);
        let a_data: Vec<f64> = (0..6).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let b_data: Vec<f64> = (0..6).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let mut t = Tape::new();
        let a = t.leaf(Tensor::new(vec![2, 3], a_data).unwrap(), true);
        let b = t.leaf(Tensor::new(vec![2, 3], b_data.clone()).unwrap(), false);
        let y = t.mul(a, b).unwrap();
        let s = t.sum(y);
        t.backward(s).unwrap();
        for (g, bv) in t.grad(a).unwrap().iter().zip(b_data.iter()) {
            assert!((g - bv).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_of_sum_is_ones_and_accumulates() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::zeros(vec![4]), true);
        let s = t.sum(x);
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[1.0; 4]);
        assert_eq!(t.grad(s).unwrap(), &[1.0]);
        // Second backward without reset doubles the accumulator.
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[2.0; 4]);
    }

    #[test]
    fn backward_rejects_non_scalar_root() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::zeros(vec![3]), true);
        assert_eq!(t.backward(x).unwrap_err(), TensorError::NonScalarRoot { numel: 3 });
    }

    #[test]
    fn untracked_leaf_never_receives_gradient() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::zeros(vec![2]), true);
        let c = t.leaf(Tensor::new(vec![2], vec![5.0, 6.0]).unwrap(), false);
        let y = t.add(x, c).unwrap();
        let s = t.sum(y);
        t.backward(s).unwrap();
        assert!(t.grad(c).is_none());
    }

    #[test]
    fn conv2d_ones_sum() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::full(vec![1, 1, 3, 3], 1.0), false);
        let w = t.leaf(Tensor::full(vec![1, 1, 3, 3], 1.0), false);
        let y = t.conv2d(x, w, None, 1, 0, 1).unwrap();
        assert_eq!(t.value(y).shape(), &[1, 1, 1, 1]);
        assert_eq!(t.value(y).item(), 9.0);
    }

    #[test]
    fn conv2d_dilated_taps() {
        // 5x5 ones, 3x3 ones kernel, dilation 2: nine taps over the full extent.
        let mut t = Tape::new();
        let x = t.leaf(Tensor::full(vec![1, 1, 5, 5], 1.0), false);
        let w = t.leaf(Tensor::full(vec![1, 1, 3, 3], 1.0), false);
        let y = t.conv2d(x, w, None, 1, 0, 2).unwrap();
        assert_eq!(t.value(y).shape(), &[1, 1, 1, 1]);
        assert_eq!(t.value(y).item(), 9.0);
    }

    #[test]
    fn conv2d_rejects_oversized_kernel() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::zeros(vec![1, 1, 4, 4]), false);
        let w = t.leaf(Tensor::zeros(vec![1, 1, 3, 3]), false);
        let err = t.conv2d(x, w, None, 1, 0, 2).unwrap_err();
        assert!(matches!(err, TensorError::KernelTooLarge { .. }));
    }

    #[test]
    fn conv2d_output_extent_formula() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::zeros(vec![2, 3, 8, 8]), false);
        let w = t.leaf(Tensor::zeros(vec![4, 3, 3, 3]), false);
        let y = t.conv2d(x, w, None, 2, 1, 1).unwrap();
        assert_eq!(t.value(y).shape(), &[2, 4, 4, 4]);
    }

    #[test]
    fn conv_transpose_copy_expansion() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::full(vec![1, 1, 1, 1], 2.5), false);
        let w = t.leaf(Tensor::full(vec![1, 1, 2, 2], 1.0), false);
        let y = t.conv_transpose2d(x, w, None, 2, 0).unwrap();
        assert_eq!(t.value(y).shape(), &[1, 1, 2, 2]);
        assert_eq!(t.value(y).data(), &[2.5; 4]);
    }

    #[test]
    fn conv_transpose_is_adjoint_of_conv() {
        // <conv(x, w), y> == <x, conv_t(y, w)> for random tensors. Sizes are
        // chosen so the correlation covers the padded input exactly; only
        // then are the two maps transposes of one another.
        let mut rng = SmallRng::new(11);
        for &(stride, padding) in &[(1usize, 0usize), (2, 1), (2, 0)] {
            let x_data: Vec<f64> = (0..2 * 3 * 7 * 7).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let w_data: Vec<f64> = (0..4 * 3 * 3 * 3).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let mut t = Tape::new();
            let x = t.leaf(Tensor::new(vec![2, 3, 7, 7], x_data.clone()).unwrap(), false);
            let w = t.leaf(Tensor::new(vec![4, 3, 3, 3], w_data).unwrap(), false);
            let cx = t.conv2d(x, w, None, stride, padding, 1).unwrap();
            let y_data: Vec<f64> = (0..t.value(cx).numel()).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let y = t.leaf(Tensor::new(t.value(cx).shape().to_vec(), y_data.clone()).unwrap(), false);
            let ty = t.conv_transpose2d(y, w, None, stride, padding).unwrap();
            let lhs: f64 = t.value(cx).data().iter().zip(y_data.iter()).map(|(a, b)| a * b).sum();
            let rhs: f64 = t.value(ty).data().iter().zip(x_data.iter()).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-9, "adjoint identity broke: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn maxpool_basics() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap(), false);
        let y = t.maxpool2(x).unwrap();
        assert_eq!(t.value(y).item(), 4.0);

        let odd = t.leaf(Tensor::zeros(vec![1, 1, 3, 4]), false);
        assert_eq!(t.maxpool2(odd).unwrap_err(), TensorError::OddSpatial { h: 3, w: 4 });
    }

    #[test]
    fn maxpool_tie_routes_to_first_occurrence() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::full(vec![1, 1, 2, 2], 7.0), true);
        let y = t.maxpool2(x).unwrap();
        assert_eq!(t.value(y).item(), 7.0);
        let s = t.sum(y);
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn upsample_replicates_and_inverts() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::new(vec![1, 1, 1, 1], vec![1.0]).unwrap(), false);
        let y = t.upsample_nearest(x, 2).unwrap();
        assert_eq!(t.value(y).data(), &[1.0; 4]);

        // Stride-r top-left sampling recovers the input exactly.
        let data: Vec<f64> = (0..12).map(|v| v as f64).collect();
        let x = t.leaf(Tensor::new(vec![1, 1, 3, 4], data.clone()).unwrap(), false);
        let up = t.upsample_nearest(x, 3).unwrap();
        let upv = t.value(up);
        for y in 0..3 {
            for xx in 0..4 {
                assert_eq!(upv.data()[(y * 3) * 12 + xx * 3], data[y * 4 + xx]);
            }
        }
    }

    #[test]
    fn pixel_shuffle_r1_is_identity() {
        let mut t = Tape::new();
        let data: Vec<f64> = (0..2 * 3 * 2 * 2).map(|v| v as f64).collect();
        let x = t.leaf(Tensor::new(vec![2, 3, 2, 2], data.clone()).unwrap(), false);
        let y = t.pixel_shuffle(x, 1).unwrap();
        assert_eq!(t.value(y).data(), &data[..]);
    }

    #[test]
    fn pixel_shuffle_r2_placement_matches_loop_oracle() {
        // Brute-force oracle over the index formula:
        // out(n,c,h,w) = in(n, C*r*(h%r) + C*(w%r) + c, h/r, w/r)
        let (n, c_out, h, w, r) = (2usize, 3usize, 2usize, 3usize, 2usize);
        let c_in = c_out * r * r;
        let mut rng = SmallRng::new(3);
        let data: Vec<f64> = (0..n * c_in * h * w).map(|_| rng.uniform(0.0, 1.0)).collect();
        let mut t = Tape::new();
        let x = t.leaf(Tensor::new(vec![n, c_in, h, w], data.clone()).unwrap(), false);
        let y = t.pixel_shuffle(x, r).unwrap();
        let out = t.value(y);
        assert_eq!(out.shape(), &[n, c_out, h * r, w * r]);
        for ni in 0..n {
            for c in 0..c_out {
                for yy in 0..h * r {
                    for xx in 0..w * r {
                        let ci = c_out * r * (yy % r) + c_out * (xx % r) + c;
                        let expect = data[((ni * c_in + ci) * h + yy / r) * w + xx / r];
                        let got = out.data()[((ni * c_out + c) * h * r + yy) * w * r + xx];
                        assert_eq!(got, expect);
                    }
                }
            }
        }
        // Bijection: sorted multisets agree.
        let mut a = data;
        let mut b = out.data().to_vec();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        assert_eq!(a, b);
    }

    #[test]
    fn pixel_shuffle_rejects_bad_channel_count() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::zeros(vec![1, 6, 2, 2]), false);
        assert_eq!(
            t.pixel_shuffle(x, 2).unwrap_err(),
            TensorError::ChannelsNotDivisible { channels: 6, rsq: 4 }
        );
    }

    #[test]
    fn activation_values() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap(), false);
        let r = t.activation(x, Activation::Relu);
        assert_eq!(t.value(r).data(), &[0.0, 0.0, 2.0]);
        let th = t.activation(x, Activation::Tanh);
        assert_eq!(t.value(th).data()[1], 0.0);
        let lk = t.activation(x, Activation::LeakyRelu);
        assert_eq!(t.value(lk).data(), &[-0.2, 0.0, 2.0]);
    }

    #[test]
    fn instance_norm_constant_channel_yields_beta() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::full(vec![1, 2, 2, 2], 3.0), false);
        let gamma = t.leaf(Tensor::full(vec![2], 1.5), false);
        let beta = t.leaf(Tensor::new(vec![2], vec![0.25, -0.5]).unwrap(), false);
        let y = t.instance_norm(x, gamma, beta, 1e-5).unwrap();
        let out = t.value(y).data();
        for v in &out[..4] {
            assert!((v - 0.25).abs() < 1e-9);
        }
        for v in &out[4..] {
            assert!((v + 0.5).abs() < 1e-9);
        }
    }

    #[test]
    fn instance_norm_moments_match_affine_params() {
        let mut rng = SmallRng::new(5);
        let data: Vec<f64> = (0..2 * 3 * 4 * 4).map(|_| rng.uniform(-2.0, 2.0)).collect();
        let mut t = Tape::new();
        let x = t.leaf(Tensor::new(vec![2, 3, 4, 4], data).unwrap(), false);
        let gamma = t.leaf(Tensor::new(vec![3], vec![0.5, -1.25, 2.0]).unwrap(), false);
        let beta = t.leaf(Tensor::new(vec![3], vec![0.1, 0.2, 0.3]).unwrap(), false);
        let y = t.instance_norm(x, gamma, beta, 1e-5).unwrap();
        let out = t.value(y).data();
        let gammas: [f64; 3] = [0.5, -1.25, 2.0];
        let betas: [f64; 3] = [0.1, 0.2, 0.3];
        for nc in 0..6 {
            let ch = nc % 3;
            let s = &out[nc * 16..(nc + 1) * 16];
            let mean = s.iter().sum::<f64>() / 16.0;
            let std = (s.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 16.0).sqrt();
            assert!((mean - betas[ch]).abs() < 1e-6);
            assert!((std - gammas[ch].abs()).abs() < 1e-3);
        }
    }

    #[test]
    fn concat_preserves_parts_and_counts_channels() {
        let mut t = Tape::new();
        let a_data: Vec<f64> = (0..8).map(|v| v as f64).collect();
        let a = t.leaf(Tensor::new(vec![1, 2, 2, 2], a_data.clone()).unwrap(), false);
        let b = t.leaf(Tensor::full(vec![1, 3, 2, 2], -1.0), false);
        let single = t.concat_channels(&[a]).unwrap();
        assert_eq!(t.value(single).data(), &a_data[..]);
        let cat = t.concat_channels(&[a, b]).unwrap();
        assert_eq!(t.value(cat).shape(), &[1, 5, 2, 2]);
        let sliced = t.slice_channels(cat, 0, 2).unwrap();
        assert_eq!(t.value(sliced).data(), &a_data[..]);
    }

    // ── finite-difference oracles ───────────────────────────────────

    #[test]
    fn grad_mul_sum_matches_finite_differences() {
        let mut rng = SmallRng::new(21);
        let a: Vec<f64> = (0..6).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let b: Vec<f64> = (0..6).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let rel = grad_check(&[(vec![2, 3], a), (vec![2, 3], b)], |t, xs| {
            let y = t.mul(xs[0], xs[1]).unwrap();
            t.sum(y)
        });
        assert!(rel < 1e-6, "rel err {rel}");
    }

    #[test]
    fn grad_conv2d_matches_finite_differences() {
        let mut rng = SmallRng::new(22);
        let x: Vec<f64> = (0..2 * 3 * 8 * 8).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let w: Vec<f64> = (0..4 * 3 * 3 * 3).map(|_| rng.uniform(-0.5, 0.5)).collect();
        let b: Vec<f64> = (0..4).map(|_| rng.uniform(-0.5, 0.5)).collect();
        let rel = grad_check(
            &[(vec![2, 3, 8, 8], x), (vec![4, 3, 3, 3], w), (vec![4], b)],
            |t, xs| {
                let y = t.conv2d(xs[0], xs[1], Some(xs[2]), 2, 1, 1).unwrap();
                t.sum(y)
            },
        );
        assert!(rel < 1e-4, "rel err {rel}");
    }

    #[test]
    fn grad_conv2d_dilated_matches_finite_differences() {
        let mut rng = SmallRng::new(23);
        let x: Vec<f64> = (0..1 * 2 * 9 * 9).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let w: Vec<f64> = (0..3 * 2 * 3 * 3).map(|_| rng.uniform(-0.5, 0.5)).collect();
        let rel = grad_check(&[(vec![1, 2, 9, 9], x), (vec![3, 2, 3, 3], w)], |t, xs| {
            let y = t.conv2d(xs[0], xs[1], None, 1, 3, 3).unwrap();
            t.sum(y)
        });
        assert!(rel < 1e-4, "rel err {rel}");
    }

    #[test]
    fn grad_conv_transpose_matches_finite_differences() {
        let mut rng = SmallRng::new(24);
        let x: Vec<f64> = (0..1 * 3 * 4 * 4).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let w: Vec<f64> = (0..3 * 2 * 4 * 4).map(|_| rng.uniform(-0.5, 0.5)).collect();
        let b: Vec<f64> = (0..2).map(|_| rng.uniform(-0.5, 0.5)).collect();
        let rel = grad_check(
            &[(vec![1, 3, 4, 4], x), (vec![3, 2, 4, 4], w), (vec![2], b)],
            |t, xs| {
                let y = t.conv_transpose2d(xs[0], xs[1], Some(xs[2]), 2, 1).unwrap();
                t.sum(y)
            },
        );
        assert!(rel < 1e-4, "rel err {rel}");
    }

    #[test]
    fn grad_pool_upsample_shuffle_match_finite_differences() {
        let mut rng = SmallRng::new(25);
        // Distinct values keep the pooling argmax stable under perturbation.
        let mut x: Vec<f64> = (0..1 * 2 * 4 * 4).map(|v| v as f64 * 0.37).collect();
        for v in x.iter_mut() {
            *v += rng.uniform(0.0, 0.1);
        }
        let rel = grad_check(&[(vec![1, 2, 4, 4], x.clone())], |t, xs| {
            let y = t.maxpool2(xs[0]).unwrap();
            t.sum(y)
        });
        assert!(rel < 1e-4, "maxpool rel err {rel}");

        let rel = grad_check(&[(vec![1, 2, 4, 4], x.clone())], |t, xs| {
            let y = t.upsample_nearest(xs[0], 2).unwrap();
            let sq = t.mul(y, y).unwrap();
            t.sum(sq)
        });
        assert!(rel < 1e-4, "upsample rel err {rel}");

        let rel = grad_check(&[(vec![1, 8, 2, 2], x)], |t, xs| {
            let y = t.pixel_shuffle(xs[0], 2).unwrap();
            let sq = t.mul(y, y).unwrap();
            t.sum(sq)
        });
        assert!(rel < 1e-4, "pixel shuffle rel err {rel}");
    }

    #[test]
    fn grad_activations_match_finite_differences_away_from_kinks() {
        let mut rng = SmallRng::new(26);
        // Keep samples away from the relu/leaky kink at zero.
        let x: Vec<f64> = (0..16)
            .map(|_| {
                let v = rng.uniform(0.1, 1.5);
                if rng.uniform(0.0, 1.0) < 0.5 {
                    v
                } else {
                    -v
                }
            })
            .collect();
        for kind in [Activation::Relu, Activation::LeakyRelu, Activation::Tanh, Activation::Sigmoid] {
            let rel = grad_check(&[(vec![16], x.clone())], |t, xs| {
                let y = t.activation(xs[0], kind);
                let sq = t.mul(y, y).unwrap();
                t.sum(sq)
            });
            assert!(rel < 1e-4, "{kind:?} rel err {rel}");
        }
    }

    #[test]
    fn grad_instance_norm_matches_finite_differences() {
        let mut rng = SmallRng::new(27);
        let x: Vec<f64> = (0..1 * 2 * 4 * 4).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let g: Vec<f64> = (0..2).map(|_| rng.uniform(0.5, 1.5)).collect();
        let b: Vec<f64> = (0..2).map(|_| rng.uniform(-0.5, 0.5)).collect();
        let rel = grad_check(
            &[(vec![1, 2, 4, 4], x), (vec![2], g), (vec![2], b)],
            |t, xs| {
                let y = t.instance_norm(xs[0], xs[1], xs[2], 1e-5).unwrap();
                let sq = t.mul(y, y).unwrap();
                t.sum(sq)
            },
        );
        assert!(rel < 1e-3, "rel err {rel}");
    }

    #[test]
    fn grad_composite_net_matches_finite_differences() {
        // conv -> instance norm -> relu -> conv, reduced to a scalar.
        let mut rng = SmallRng::new(28);
        let x: Vec<f64> = (0..1 * 2 * 6 * 6).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let w1: Vec<f64> = (0..3 * 2 * 3 * 3).map(|_| rng.uniform(-0.4, 0.4)).collect();
        let g: Vec<f64> = (0..3).map(|_| rng.uniform(0.5, 1.5)).collect();
        let b: Vec<f64> = (0..3).map(|_| rng.uniform(-0.2, 0.2)).collect();
        let w2: Vec<f64> = (0..1 * 3 * 3 * 3).map(|_| rng.uniform(-0.4, 0.4)).collect();
        let rel = grad_check(
            &[
                (vec![1, 2, 6, 6], x),
                (vec![3, 2, 3, 3], w1),
                (vec![3], g),
                (vec![3], b),
                (vec![1, 3, 3, 3], w2),
            ],
            |t, xs| {
                let c1 = t.conv2d(xs[0], xs[1], None, 1, 1, 1).unwrap();
                let n1 = t.instance_norm(c1, xs[2], xs[3], 1e-5).unwrap();
                let a1 = t.activation(n1, Activation::Relu);
                let c2 = t.conv2d(a1, xs[4], None, 1, 1, 1).unwrap();
                t.sum(c2)
            },
        );
        assert!(rel < 1e-4, "rel err {rel}");
    }
}
