//! Minimal reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Tape`] records every operation of one forward evaluation; calling
//! [`Tape::backward`] on a scalar output walks the records in reverse and
//! returns the gradient of every node that depends on a parameter leaf.
//! All arithmetic is `f64` and single-threaded, so two evaluations with the
//! same inputs are bit-identical.

pub mod fourier;
pub mod kernels;

use std::fmt;

use crate::tensor::Tensor;
pub use kernels::ConvSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Softplus,
    Sigmoid,
    Gelu,
    Exp,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
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

/// Tanh approximation of GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

impl Unary {
    fn apply(self, x: f64) -> f64 {
        match self {
            Unary::Softplus => softplus(x),
            Unary::Sigmoid => sigmoid(x),
            Unary::Gelu => gelu(x),
            Unary::Exp => x.exp(),
        }
    }

    fn grad(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::Softplus => sigmoid(x),
            Unary::Sigmoid => y * (1.0 - y),
            Unary::Gelu => gelu_grad(x),
            Unary::Exp => y,
        }
    }
}

/// An operation whose forward value is computed by the caller and whose
/// vector-Jacobian product is supplied here.
pub trait CustomOp {
    fn name(&self) -> &'static str;

    /// Gradients with respect to each input, in input order.
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>>;
}

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MulScalar(Var, Var),
    Unary(Var, Unary),
    BroadcastPlanes(Var),
    Concat(Vec<Var>),
    SliceChannels(Var, usize),
    Reshape(Var),
    Transpose(Var),
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        spec: ConvSpec,
    },
    ConvConstant {
        e: Var,
        w: Var,
        valid: std::rc::Rc<Vec<f64>>,
    },
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    MeanSpatial(Var),
    NormRows(Var, f64),
    MulChannels(Var, Var),
    Rfft2(Var),
    Irfft2(Var),
    Upsample(Var, usize),
    L1Mean(Var, Tensor),
    WeightedSum(Var, Tensor),
    Custom(Vec<Var>, Box<dyn CustomOp>),
}

impl Op {
    fn label(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::MulScalar(..) => "mul_scalar",
            Op::Unary(_, u) => match u {
                Unary::Softplus => "softplus",
                Unary::Sigmoid => "sigmoid",
                Unary::Gelu => "gelu",
                Unary::Exp => "exp",
            },
            Op::BroadcastPlanes(_) => "broadcast_planes",
            Op::Concat(_) => "concat",
            Op::SliceChannels(..) => "slice",
            Op::Reshape(_) => "reshape",
            Op::Transpose(_) => "transpose",
            Op::Conv2d { .. } => "conv2d",
            Op::ConvConstant { .. } => "conv_constant_planes",
            Op::Linear { .. } => "linear",
            Op::MeanSpatial(_) => "mean_spatial",
            Op::NormRows(..) => "norm_rows",
            Op::MulChannels(..) => "mul_channels",
            Op::Rfft2(_) => "rfft2",
            Op::Irfft2(_) => "irfft2",
            Op::Upsample(..) => "upsample",
            Op::L1Mean(..) => "l1_mean",
            Op::WeightedSum(..) => "weighted_sum",
            Op::Custom(_, op) => op.name(),
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    tracked: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape").field("nodes", &self.nodes.len()).finish()
    }
}

pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
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

    fn push(&mut self, value: Tensor, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    /// Index and operation of the earliest recorded non-finite value.
    pub fn first_non_finite(&self) -> Option<(usize, &'static str)> {
        self.nodes
            .iter()
            .position(|n| !n.value.is_finite())
            .map(|i| (i, self.nodes[i].op.label()))
    }

    /// Whether gradients can reach `v` from any parameter.
    pub fn requires_grad(&self, v: Var) -> bool {
        self.tracked(v)
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    fn any_tracked(&self, vs: &[Var]) -> bool {
        vs.iter().any(|&v| self.tracked(v))
    }

    /// A value that gradients do not flow into.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A leaf whose gradient is reported by [`Tape::backward`].
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let t = self.any_tracked(&[a, b]);
        self.push(v, Op::Add(a, b), t)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let t = self.any_tracked(&[a, b]);
        self.push(v, Op::Sub(a, b), t)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let t = self.any_tracked(&[a, b]);
        self.push(v, Op::Mul(a, b), t)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a).map(|x| x * k);
        let t = self.tracked(a);
        self.push(v, Op::Scale(a, k), t)
    }

    /// `x * s` for a single-element `s`.
    pub fn mul_scalar(&mut self, x: Var, s: Var) -> Var {
        let k = self.value(s).item();
        let v = self.value(x).map(|a| a * k);
        let t = self.any_tracked(&[x, s]);
        self.push(v, Op::MulScalar(x, s), t)
    }

    pub fn unary(&mut self, x: Var, f: Unary) -> Var {
        let v = self.value(x).map(|a| f.apply(a));
        let t = self.tracked(x);
        self.push(v, Op::Unary(x, f), t)
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Softplus)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Sigmoid)
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Gelu)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Exp)
    }

    /// `[D] -> [D][H][W]`, each channel constant.
    pub fn broadcast_planes(&mut self, v: Var, h: usize, w: usize) -> Var {
        let src = self.value(v);
        let mut data = Vec::with_capacity(src.len() * h * w);
        for &x in src.data() {
            data.extend(std::iter::repeat_n(x, h * w));
        }
        let out = Tensor::from_parts(vec![src.len(), h, w], data);
        let t = self.tracked(v);
        self.push(out, Op::BroadcastPlanes(v), t)
    }

    /// Concatenation along the leading axis; trailing dims must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let tail = self.shape(parts[0])[1..].to_vec();
        let mut lead = 0;
        let mut data = Vec::new();
        for &p in parts {
            let val = self.value(p);
            assert_eq!(&val.shape()[1..], &tail[..], "concat trailing dims differ");
            lead += val.shape()[0];
            data.extend_from_slice(val.data());
        }
        let mut shape = vec![lead];
        shape.extend(tail);
        let t = self.any_tracked(parts);
        self.push(Tensor::from_parts(shape, data), Op::Concat(parts.to_vec()), t)
    }

    /// Rows `start..start+len` of the leading axis.
    pub fn slice_leading(&mut self, x: Var, start: usize, len: usize) -> Var {
        let val = self.value(x);
        let inner: usize = val.shape()[1..].iter().product();
        assert!(start + len <= val.shape()[0]);
        let data = val.data()[start * inner..(start + len) * inner].to_vec();
        let mut shape = val.shape().to_vec();
        shape[0] = len;
        let t = self.tracked(x);
        self.push(Tensor::from_parts(shape, data), Op::SliceChannels(x, start), t)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let val = self.value(x).clone().reshape(shape).expect("reshape size mismatch");
        let t = self.tracked(x);
        self.push(val, Op::Reshape(x), t)
    }

    /// `[a][b] -> [b][a]`.
    pub fn transpose(&mut self, x: Var) -> Var {
        let val = transpose2(self.value(x));
        let t = self.tracked(x);
        self.push(val, Op::Transpose(x), t)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, spec: ConvSpec) -> Var {
        let val = kernels::conv2d(self.value(x), self.value(w), b.map(|b| self.value(b)), spec);
        let t = self.any_tracked(&[x, w]) || b.is_some_and(|b| self.tracked(b));
        self.push(val, Op::Conv2d { x, w, b, spec }, t)
    }

    /// 3×3 zero-padded convolution of `[D][H][W]` planes that are constant
    /// per channel, given only the constants `e: [D]`. Equal to
    /// `conv2d(broadcast_planes(e), w)` at a fraction of the cost.
    pub fn conv_constant_planes(&mut self, e: Var, w: Var, h: usize, wd: usize) -> Var {
        let ws = self.shape(w).to_vec();
        assert_eq!(ws.len(), 4);
        assert_eq!((ws[2], ws[3]), (3, 3), "conv_constant_planes is 3x3 only");
        assert_eq!(ws[1], self.value(e).len());
        let valid = std::rc::Rc::new(kernels::tap_validity(h, wd));
        let out = constant_planes_with(self.value(e), self.value(w), &valid, h, wd);
        let t = self.any_tracked(&[e, w]);
        self.push(out, Op::ConvConstant { e, w, valid }, t)
    }

    /// Row-wise affine map: `x: [L][in]`, `w: [out][in]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let val = linear_forward(self.value(x), self.value(w), b.map(|b| self.value(b)));
        let t = self.any_tracked(&[x, w]) || b.is_some_and(|b| self.tracked(b));
        self.push(val, Op::Linear { x, w, b }, t)
    }

    /// `[C][H][W] -> [C]` spatial mean.
    pub fn mean_spatial(&mut self, x: Var) -> Var {
        let val = self.value(x);
        let (c, h, w) = val.dims3();
        let n = (h * w) as f64;
        let data = (0..c).map(|ch| val.channel(ch).iter().sum::<f64>() / n).collect();
        let t = self.tracked(x);
        self.push(Tensor::from_parts(vec![c], data), Op::MeanSpatial(x), t)
    }

    /// Zero-mean, unit-variance rows: `x: [L][d]`, variance floored by `eps`.
    pub fn norm_rows(&mut self, x: Var, eps: f64) -> Var {
        let xv = self.value(x);
        let d = xv.shape()[1];
        let mut data = xv.data().to_vec();
        for row in data.chunks_mut(d) {
            let (mean, inv) = row_stats(row, eps);
            for v in row {
                *v = (*v - mean) * inv;
            }
        }
        let out = Tensor::from_parts(xv.shape().to_vec(), data);
        let t = self.tracked(x);
        self.push(out, Op::NormRows(x, eps), t)
    }

    /// `x[c] * g[c]` for `x: [C][H][W]`, `g: [C]`.
    pub fn mul_channels(&mut self, x: Var, g: Var) -> Var {
        let xv = self.value(x);
        let gv = self.value(g);
        let (c, h, w) = xv.dims3();
        assert_eq!(gv.len(), c);
        let mut data = xv.data().to_vec();
        for ch in 0..c {
            let k = gv.data()[ch];
            for v in &mut data[ch * h * w..(ch + 1) * h * w] {
                *v *= k;
            }
        }
        let t = self.any_tracked(&[x, g]);
        self.push(Tensor::from_parts(vec![c, h, w], data), Op::MulChannels(x, g), t)
    }

    pub fn rfft2(&mut self, x: Var) -> Var {
        let val = fourier::rfft2(self.value(x));
        let t = self.tracked(x);
        self.push(val, Op::Rfft2(x), t)
    }

    pub fn irfft2(&mut self, z: Var, w: usize) -> Var {
        let val = fourier::irfft2(self.value(z), w);
        let t = self.tracked(z);
        self.push(val, Op::Irfft2(z), t)
    }

    pub fn upsample_bilinear(&mut self, x: Var, factor: usize) -> Var {
        let val = kernels::upsample_bilinear(self.value(x), factor);
        let t = self.tracked(x);
        self.push(val, Op::Upsample(x, factor), t)
    }

    /// Mean absolute difference against a fixed target; scalar output.
    pub fn l1_mean(&mut self, x: Var, target: &Tensor) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.shape(), target.shape(), "l1 target shape mismatch");
        let m = xv.data().iter().zip(target.data()).map(|(a, b)| (a - b).abs()).sum::<f64>()
            / xv.len() as f64;
        let t = self.tracked(x);
        self.push(Tensor::scalar(m), Op::L1Mean(x, target.clone()), t)
    }

    /// `sum(x ⊙ weights)`; scalar output.
    pub fn weighted_sum(&mut self, x: Var, weights: &Tensor) -> Var {
        let s = self.value(x).dot(weights);
        let t = self.tracked(x);
        self.push(Tensor::scalar(s), Op::WeightedSum(x, weights.clone()), t)
    }

    pub fn custom(&mut self, inputs: &[Var], value: Tensor, op: Box<dyn CustomOp>) -> Var {
        let t = self.any_tracked(inputs);
        self.push(value, Op::Custom(inputs.to_vec(), op), t)
    }

    /// Reverse sweep from a single-element output.
    pub fn backward(&self, out: Var) -> Gradients {
        assert_eq!(self.value(out).len(), 1, "backward needs a scalar output");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(Tensor::scalar(1.0));
        for idx in (0..=out.0).rev() {
            let node = &self.nodes[idx];
            if !node.tracked {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.tracked(v) {
            return;
        }
        debug_assert_eq!(g.shape(), self.shape(v), "gradient shape mismatch");
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                if self.tracked(*a) {
                    self.accumulate(grads, *a, g.zip_map(self.value(*b), |x, y| x * y));
                }
                if self.tracked(*b) {
                    self.accumulate(grads, *b, g.zip_map(self.value(*a), |x, y| x * y));
                }
            }
            Op::Scale(a, k) => self.accumulate(grads, *a, g.map(|v| v * k)),
            Op::MulScalar(x, s) => {
                let k = self.value(*s).item();
                if self.tracked(*x) {
                    self.accumulate(grads, *x, g.map(|v| v * k));
                }
                if self.tracked(*s) {
                    self.accumulate(grads, *s, Tensor::scalar(g.dot(self.value(*x))));
                }
            }
            Op::Unary(x, f) => {
                let xv = self.value(*x);
                let data = g
                    .data()
                    .iter()
                    .zip(xv.data().iter().zip(node.value.data()))
                    .map(|(gv, (&a, &y))| gv * f.grad(a, y))
                    .collect();
                self.accumulate(grads, *x, Tensor::from_parts(xv.shape().to_vec(), data));
            }
            Op::BroadcastPlanes(v) => {
                let d = self.value(*v).len();
                let plane = g.len() / d;
                let data = (0..d).map(|c| g.data()[c * plane..(c + 1) * plane].iter().sum()).collect();
                self.accumulate(grads, *v, Tensor::from_parts(self.shape(*v).to_vec(), data));
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    if self.tracked(p) {
                        let gp = Tensor::from_parts(self.shape(p).to_vec(), g.data()[off..off + n].to_vec());
                        self.accumulate(grads, p, gp);
                    }
                    off += n;
                }
            }
            Op::SliceChannels(x, start) => {
                let xs = self.shape(*x).to_vec();
                let inner: usize = xs[1..].iter().product();
                let mut full = Tensor::zeros(&xs);
                full.data_mut()[start * inner..start * inner + g.len()].copy_from_slice(g.data());
                self.accumulate(grads, *x, full);
            }
            Op::Reshape(x) => {
                let gx = g.clone().reshape(self.shape(*x)).expect("reshape grad");
                self.accumulate(grads, *x, gx);
            }
            Op::Transpose(x) => self.accumulate(grads, *x, transpose2(g)),
            Op::Conv2d { x, w, b, spec } => {
                let need = (
                    self.tracked(*x),
                    self.tracked(*w),
                    b.is_some_and(|b| self.tracked(b)),
                );
                let cg = kernels::conv2d_backward(self.value(*x), self.value(*w), g, *spec, need);
                if let Some(gx) = cg.x {
                    self.accumulate(grads, *x, gx);
                }
                if let Some(gw) = cg.w {
                    self.accumulate(grads, *w, gw);
                }
                if let (Some(b), Some(gb)) = (b, cg.b) {
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::ConvConstant { e, w, valid } => {
                let ws = self.shape(*w).to_vec();
                let (o, d) = (ws[0], ws[1]);
                let npix = g.len() / o;
                // g_taps[o][tap] = sum_p g[o][p] * valid[tap][p]
                let mut g_taps = vec![0.0; o * 9];
                kernels::gemm(o, npix, 9, g.data(), false, valid, true, &mut g_taps, 0.0);
                let ev = self.value(*e).data();
                let wv = self.value(*w).data();
                if self.tracked(*w) {
                    let mut gw = vec![0.0; wv.len()];
                    for oo in 0..o {
                        for c in 0..d {
                            for tap in 0..9 {
                                gw[(oo * d + c) * 9 + tap] = g_taps[oo * 9 + tap] * ev[c];
                            }
                        }
                    }
                    self.accumulate(grads, *w, Tensor::from_parts(ws.clone(), gw));
                }
                if self.tracked(*e) {
                    let mut ge = vec![0.0; d];
                    for oo in 0..o {
                        for (c, gec) in ge.iter_mut().enumerate() {
                            for tap in 0..9 {
                                *gec += g_taps[oo * 9 + tap] * wv[(oo * d + c) * 9 + tap];
                            }
                        }
                    }
                    self.accumulate(grads, *e, Tensor::from_parts(self.shape(*e).to_vec(), ge));
                }
            }
            Op::Linear { x, w, b } => {
                let xv = self.value(*x);
                let wv = self.value(*w);
                let (l, nin) = (xv.shape()[0], xv.shape()[1]);
                let nout = wv.shape()[0];
                if self.tracked(*x) {
                    let mut gx = vec![0.0; l * nin];
                    kernels::gemm(l, nout, nin, g.data(), false, wv.data(), false, &mut gx, 0.0);
                    self.accumulate(grads, *x, Tensor::from_parts(vec![l, nin], gx));
                }
                if self.tracked(*w) {
                    let mut gw = vec![0.0; nout * nin];
                    kernels::gemm(nout, l, nin, g.data(), true, xv.data(), false, &mut gw, 0.0);
                    self.accumulate(grads, *w, Tensor::from_parts(vec![nout, nin], gw));
                }
                if let Some(b) = b {
                    if self.tracked(*b) {
                        let mut gb = vec![0.0; nout];
                        for row in g.data().chunks(nout) {
                            for (a, v) in gb.iter_mut().zip(row) {
                                *a += v;
                            }
                        }
                        self.accumulate(grads, *b, Tensor::from_parts(vec![nout], gb));
                    }
                }
            }
            Op::MeanSpatial(x) => {
                let (c, h, w) = self.value(*x).dims3();
                let n = (h * w) as f64;
                let mut data = Vec::with_capacity(c * h * w);
                for ch in 0..c {
                    data.extend(std::iter::repeat_n(g.data()[ch] / n, h * w));
                }
                self.accumulate(grads, *x, Tensor::from_parts(vec![c, h, w], data));
            }
            Op::NormRows(x, eps) => {
                let xv = self.value(*x);
                let d = xv.shape()[1];
                let yv = &node.value;
                let mut out = Vec::with_capacity(xv.len());
                for ((row, yr), gr) in xv.data().chunks(d).zip(yv.data().chunks(d)).zip(g.data().chunks(d)) {
                    let (_, inv) = row_stats(row, *eps);
                    let gm = gr.iter().sum::<f64>() / d as f64;
                    let gy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                    out.extend(gr.iter().zip(yr).map(|(gi, yi)| inv * (gi - gm - yi * gy)));
                }
                self.accumulate(grads, *x, Tensor::from_parts(xv.shape().to_vec(), out));
            }
            Op::MulChannels(x, gate) => {
                let xv = self.value(*x);
                let gv = self.value(*gate);
                let (c, h, w) = xv.dims3();
                if self.tracked(*x) {
                    let mut data = g.data().to_vec();
                    for ch in 0..c {
                        let k = gv.data()[ch];
                        for v in &mut data[ch * h * w..(ch + 1) * h * w] {
                            *v *= k;
                        }
                    }
                    self.accumulate(grads, *x, Tensor::from_parts(vec![c, h, w], data));
                }
                if self.tracked(*gate) {
                    let data = (0..c)
                        .map(|ch| {
                            g.channel(ch).iter().zip(xv.channel(ch)).map(|(a, b)| a * b).sum()
                        })
                        .collect();
                    self.accumulate(grads, *gate, Tensor::from_parts(vec![c], data));
                }
            }
            Op::Rfft2(x) => {
                let w = self.shape(*x)[2];
                self.accumulate(grads, *x, fourier::rfft2_adjoint(g, w));
            }
            Op::Irfft2(z) => self.accumulate(grads, *z, fourier::irfft2_adjoint(g)),
            Op::Upsample(x, f) => {
                let gx = kernels::upsample_bilinear_backward(g, *f, self.shape(*x));
                self.accumulate(grads, *x, gx);
            }
            Op::L1Mean(x, target) => {
                let k = g.item() / target.len() as f64;
                let gx = self.value(*x).zip_map(target, |a, b| {
                    if a > b {
                        k
                    } else if a < b {
                        -k
                    } else {
                        0.0
                    }
                });
                self.accumulate(grads, *x, gx);
            }
            Op::WeightedSum(x, wts) => {
                let k = g.item();
                self.accumulate(grads, *x, wts.map(|v| v * k));
            }
            Op::Custom(inputs, op) => {
                let ins: Vec<&Tensor> = inputs.iter().map(|&v| self.value(v)).collect();
                let outs = op.backward(&ins, &node.value, g);
                assert_eq!(outs.len(), inputs.len(), "{} returned wrong gradient count", op.name());
                for (&v, gv) in inputs.iter().zip(outs) {
                    if let Some(gv) = gv {
                        self.accumulate(grads, v, gv);
                    }
                }
            }
        }
    }
}

/// Value of [`Tape::conv_constant_planes`] without recording anything.
pub fn conv_constant_forward(e: &Tensor, w: &Tensor, h: usize, wd: usize) -> Tensor {
    constant_planes_with(e, w, &kernels::tap_validity(h, wd), h, wd)
}

fn constant_planes_with(e: &Tensor, w: &Tensor, valid: &[f64], h: usize, wd: usize) -> Tensor {
    let o = w.shape()[0];
    let taps = tap_sums(e, w);
    let mut out = vec![0.0; o * h * wd];
    kernels::gemm(o, 9, h * wd, &taps, false, valid, false, &mut out, 0.0);
    Tensor::from_parts(vec![o, h, wd], out)
}

/// Mean and `1/sqrt(var + eps)` of one row.
fn row_stats(row: &[f64], eps: f64) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, 1.0 / (var + eps).sqrt())
}

/// `taps[o][tap] = sum_c w[o][c][tap] * e[c]`.
fn tap_sums(e: &Tensor, w: &Tensor) -> Vec<f64> {
    let s = w.shape();
    let (o, d) = (s[0], s[1]);
    let mut taps = vec![0.0; o * 9];
    for oo in 0..o {
        for c in 0..d {
            let ec = e.data()[c];
            for tap in 0..9 {
                taps[oo * 9 + tap] += w.data()[(oo * d + c) * 9 + tap] * ec;
            }
        }
    }
    taps
}

pub fn linear_forward(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Tensor {
    let (l, nin) = (x.shape()[0], x.shape()[1]);
    let nout = w.shape()[0];
    assert_eq!(w.shape()[1], nin, "linear in-features mismatch");
    let mut out = vec![0.0; l * nout];
    if let Some(b) = b {
        for row in out.chunks_mut(nout) {
            row.copy_from_slice(b.data());
        }
    }
    kernels::gemm(l, nin, nout, x.data(), false, w.data(), true, &mut out, if b.is_some() { 1.0 } else { 0.0 });
    Tensor::from_parts(vec![l, nout], out)
}

pub fn transpose2(x: &Tensor) -> Tensor {
    let (a, b) = (x.shape()[0], x.shape()[1]);
    let mut out = vec![0.0; a * b];
    for i in 0..a {
        for j in 0..b {
            out[j * a + i] = x.data()[i * b + j];
        }
    }
    Tensor::from_parts(vec![b, a], out)
}
