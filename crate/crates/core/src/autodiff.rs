//! Reverse-mode automatic differentiation on a flat tape.
//!
//! A `Graph` owns an append-only arena of nodes; `Var` is an index into it.
//! Parents always precede children, so the creation order is already a
//! topological order and `backward` is a single reverse sweep. A graph is
//! built per training step and dropped afterwards; it is deliberately not
//! `Sync` and stays confined to one thread.
//!
//! Graphs built with `Graph::with_shadow` additionally carry an f64 copy of
//! every value computed by the same kernels. The gradient checker uses that
//! copy for finite differences, so it never has to loosen tolerances to
//! cover f32 cancellation in the forward pass.

use crate::error::{Error, Result};
use crate::kernels::{self, BinKind, ConvGeom, NormMode, ReduceKind, UnaryKind};
use crate::tensor::Tensor;

/// Handle to a node in one specific `Graph`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone)]
enum Op {
    Leaf,
    Detach,
    Unary(UnaryKind, Var),
    Binary(BinKind, Var, Var),
    AddScalar(Var),
    MulScalar(Var, f32),
    Conv2d { x: Var, k: Var, geom: ConvGeom },
    ConvT2d { x: Var, k: Var, geom: ConvGeom },
    BiasAdd { x: Var, b: Var },
    ConcatCh { a: Var, b: Var },
    Normalize { x: Var, gamma: Var, beta: Var, mode: NormMode, eps: f32 },
    Reduce { x: Var, kind: ReduceKind, mask: Vec<bool> },
}

struct Node {
    value: Tensor,
    value64: Option<Vec<f64>>,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f32>>,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    shadow: bool,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), shadow: false }
    }

    /// Graph that mirrors every forward value in f64. Used by the gradient
    /// checker; roughly doubles forward cost.
    pub fn with_shadow() -> Self {
        Graph { nodes: Vec::new(), shadow: true }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Installs a tensor as a leaf. Whether gradients accumulate on it is
    /// taken from the tensor's own flag.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push_leaf(t.clone(), t.requires_grad())
    }

    /// Installs a tensor as a trainable leaf regardless of its flag.
    pub fn param(&mut self, t: &Tensor) -> Var {
        self.push_leaf(t.clone(), true)
    }

    /// Installs a tensor as a non-trainable leaf regardless of its flag.
    pub fn constant(&mut self, t: &Tensor) -> Var {
        self.push_leaf(t.clone(), false)
    }

    fn push_leaf(&mut self, t: Tensor, requires_grad: bool) -> Var {
        let value64 = self.shadow.then(|| t.data().iter().map(|&v| f64::from(v)).collect());
        self.nodes.push(Node { value: t, value64, op: Op::Leaf, requires_grad, grad: None });
        Var(self.nodes.len() - 1)
    }

    /// Copies a node's value into a fresh non-gradient leaf, cutting the
    /// backward path. The discriminator step runs generator outputs through
    /// this before scoring them.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.node(v).value.clone();
        let value64 = self.node(v).value64.clone();
        self.nodes.push(Node { value, value64, op: Op::Detach, requires_grad: false, grad: None });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.node(v).value
    }

    pub fn scalar_value(&self, v: Var) -> Result<f32> {
        let t = &self.node(v).value;
        if t.numel() != 1 {
            return Err(Error::Usage(format!(
                "expected a scalar node, found shape {:?}",
                t.shape()
            )));
        }
        Ok(t.data()[0])
    }

    /// Scalar read at the graph's best available precision.
    pub fn scalar_f64(&self, v: Var) -> Result<f64> {
        let n = self.node(v);
        if n.value.numel() != 1 {
            return Err(Error::Usage(format!(
                "expected a scalar node, found shape {:?}",
                n.value.shape()
            )));
        }
        Ok(match &n.value64 {
            Some(d) => d[0],
            None => f64::from(n.value.data()[0]),
        })
    }

    /// Gradient accumulated on `v` by the latest `backward`, if any.
    pub fn grad(&self, v: Var) -> Option<&[f32]> {
        self.node(v).grad.as_deref()
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    fn d32(&self, v: Var) -> &[f32] {
        self.node(v).value.data()
    }

    fn d64(&self, v: Var) -> &[f64] {
        self.node(v).value64.as_deref().expect("shadow buffer present in shadow graphs")
    }

    fn push_op(
        &mut self,
        opname: &str,
        shape: Vec<usize>,
        data: Vec<f32>,
        data64: Option<Vec<f64>>,
        op: Op,
        requires_grad: bool,
    ) -> Result<Var> {
        if !kernels::all_finite(&data) {
            return Err(Error::Numeric(format!("{opname} produced a non-finite value")));
        }
        debug_assert_eq!(self.shadow, data64.is_some());
        let value = Tensor::new(&shape, data)?;
        self.nodes.push(Node { value, value64: data64, op, requires_grad, grad: None });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, v: Var) -> bool {
        self.node(v).requires_grad
    }

    // ---- elementwise ----------------------------------------------------

    fn unary_op(&mut self, name: &str, kind: UnaryKind, x: Var) -> Result<Var> {
        let out = kernels::unary(kind, self.d32(x));
        let out64 = self.shadow.then(|| kernels::unary(kind, self.d64(x)));
        let shape = self.node(x).value.shape().to_vec();
        let rg = self.rg(x);
        self.push_op(name, shape, out, out64, Op::Unary(kind, x), rg)
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.unary_op("neg", UnaryKind::Neg, x)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary_op("tanh", UnaryKind::Tanh, x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary_op("sigmoid", UnaryKind::Sigmoid, x)
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        self.unary_op("abs", UnaryKind::Abs, x)
    }

    /// max(x, slope * x) with negative-side subgradient `slope`; slope must
    /// lie strictly inside (0, 1).
    pub fn leaky_relu(&mut self, x: Var, slope: f32) -> Result<Var> {
        if !(slope > 0.0 && slope < 1.0) {
            return Err(Error::Usage(format!("leaky_relu slope must be in (0, 1), got {slope}")));
        }
        self.unary_op("leaky_relu", UnaryKind::LeakyRelu(slope), x)
    }

    /// Natural log of max(x, 1e-12); the clamp keeps adversarial losses
    /// finite when a sigmoid saturates.
    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary_op("log", UnaryKind::Log, x)
    }

    pub fn clamp(&mut self, x: Var, lo: f32, hi: f32) -> Result<Var> {
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::Usage(format!("invalid clamp range [{lo}, {hi}]")));
        }
        self.unary_op("clamp", UnaryKind::Clamp(lo, hi), x)
    }

    fn binary_op(&mut self, name: &str, kind: BinKind, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.node(a).value.shape(), self.node(b).value.shape());
        let (na, nb) = (self.node(a).value.numel(), self.node(b).value.numel());
        let out_shape;
        let out;
        let out64;
        if sa == sb {
            out_shape = sa.to_vec();
            out = kernels::binary_ew(kind, self.d32(a), self.d32(b));
            out64 = self.shadow.then(|| kernels::binary_ew(kind, self.d64(a), self.d64(b)));
        } else if nb == 1 {
            out_shape = sa.to_vec();
            out = kernels::binary_scalar_rhs(kind, self.d32(a), self.d32(b)[0]);
            out64 =
                self.shadow.then(|| kernels::binary_scalar_rhs(kind, self.d64(a), self.d64(b)[0]));
        } else if na == 1 {
            out_shape = sb.to_vec();
            out = kernels::binary_scalar_lhs(kind, self.d32(a)[0], self.d32(b));
            out64 =
                self.shadow.then(|| kernels::binary_scalar_lhs(kind, self.d64(a)[0], self.d64(b)));
        } else {
            return Err(Error::Dim(format!(
                "{name}: shapes {sa:?} and {sb:?} differ and neither is a scalar"
            )));
        }
        let rg = self.rg(a) || self.rg(b);
        self.push_op(name, out_shape, out, out64, Op::Binary(kind, a, b), rg)
    }

    /// Elementwise sum; one operand may be a single-element scalar, which
    /// broadcasts. No other broadcasting exists anywhere in the graph.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_op("add", BinKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_op("sub", BinKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_op("mul", BinKind::Mul, a, b)
    }

    pub fn add_scalar(&mut self, x: Var, c: f32) -> Result<Var> {
        if !c.is_finite() {
            return Err(Error::Usage(format!("add_scalar constant must be finite, got {c}")));
        }
        let out = kernels::binary_scalar_rhs(BinKind::Add, self.d32(x), c);
        let out64 = self
            .shadow
            .then(|| kernels::binary_scalar_rhs(BinKind::Add, self.d64(x), f64::from(c)));
        let shape = self.node(x).value.shape().to_vec();
        let rg = self.rg(x);
        self.push_op("add_scalar", shape, out, out64, Op::AddScalar(x), rg)
    }

    pub fn mul_scalar(&mut self, x: Var, c: f32) -> Result<Var> {
        if !c.is_finite() {
            return Err(Error::Usage(format!("mul_scalar constant must be finite, got {c}")));
        }
        let out = kernels::binary_scalar_rhs(BinKind::Mul, self.d32(x), c);
        let out64 = self
            .shadow
            .then(|| kernels::binary_scalar_rhs(BinKind::Mul, self.d64(x), f64::from(c)));
        let shape = self.node(x).value.shape().to_vec();
        let rg = self.rg(x);
        self.push_op("mul_scalar", shape, out, out64, Op::MulScalar(x, c), rg)
    }

    // ---- convolution ----------------------------------------------------

    /// Strided cross-correlation of an NCHW input with an OIHW kernel.
    /// Output spatial extent is floor((in + 2*pad - k)/stride) + 1.
    pub fn conv2d(&mut self, x: Var, k: Var, stride: usize, pad: usize) -> Result<Var> {
        let xs = self.node(x).value.shape().to_vec();
        let ks = self.node(k).value.shape().to_vec();
        if xs.len() != 4 || ks.len() != 4 {
            return Err(Error::Dim(format!(
                "conv2d expects NCHW input and OIHW kernel, got {xs:?} and {ks:?}"
            )));
        }
        if xs[1] != ks[1] {
            return Err(Error::Dim(format!(
                "conv2d channel mismatch: input has {} channels, kernel expects {}",
                xs[1], ks[1]
            )));
        }
        if stride == 0 {
            return Err(Error::Usage("conv2d stride must be at least 1".into()));
        }
        let oh = kernels::conv_out_dim(xs[2], ks[2], stride, pad);
        let ow = kernels::conv_out_dim(xs[3], ks[3], stride, pad);
        let (oh, ow) = match (oh, ow) {
            (Some(a), Some(b)) if a > 0 && b > 0 => (a, b),
            _ => {
                return Err(Error::Dim(format!(
                    "conv2d kernel {}x{} does not fit input {}x{} with stride {stride} pad {pad}",
                    ks[2], ks[3], xs[2], xs[3]
                )))
            }
        };
        let geom = ConvGeom {
            n: xs[0],
            c: xs[1],
            h: xs[2],
            w: xs[3],
            o: ks[0],
            kh: ks[2],
            kw: ks[3],
            stride,
            pad,
            oh,
            ow,
        };
        let out = kernels::conv2d(self.d32(x), self.d32(k), &geom);
        let out64 = self.shadow.then(|| kernels::conv2d(self.d64(x), self.d64(k), &geom));
        let rg = self.rg(x) || self.rg(k);
        self.push_op(
            "conv2d",
            vec![geom.n, geom.o, oh, ow],
            out,
            out64,
            Op::Conv2d { x, k, geom },
            rg,
        )
    }

    /// Transposed convolution, defined as the exact adjoint of `conv2d`
    /// with the same OIHW kernel: input channels match the kernel's O axis
    /// and the output gets its I axis. Output spatial extent is
    /// (in - 1)*stride - 2*pad + k.
    pub fn conv_transpose2d(&mut self, x: Var, k: Var, stride: usize, pad: usize) -> Result<Var> {
        let xs = self.node(x).value.shape().to_vec();
        let ks = self.node(k).value.shape().to_vec();
        if xs.len() != 4 || ks.len() != 4 {
            return Err(Error::Dim(format!(
                "conv_transpose2d expects NCHW input and OIHW kernel, got {xs:?} and {ks:?}"
            )));
        }
        if xs[1] != ks[0] {
            return Err(Error::Dim(format!(
                "conv_transpose2d channel mismatch: input has {} channels, kernel O axis is {}",
                xs[1], ks[0]
            )));
        }
        if stride == 0 {
            return Err(Error::Usage("conv_transpose2d stride must be at least 1".into()));
        }
        let h = kernels::convt_out_dim(xs[2], ks[2], stride, pad);
        let w = kernels::convt_out_dim(xs[3], ks[3], stride, pad);
        let (h, w) = match (h, w) {
            (Some(a), Some(b)) if a > 0 && b > 0 => (a, b),
            _ => {
                return Err(Error::Dim(format!(
                    "conv_transpose2d output extent is empty for input {}x{} kernel {}x{} \
                     stride {stride} pad {pad}",
                    xs[2], xs[3], ks[2], ks[3]
                )))
            }
        };
        // The geometry describes the equivalent forward convolution from the
        // transposed output back to the transposed input.
        let geom = ConvGeom {
            n: xs[0],
            c: ks[1],
            h,
            w,
            o: ks[0],
            kh: ks[2],
            kw: ks[3],
            stride,
            pad,
            oh: xs[2],
            ow: xs[3],
        };
        let out = kernels::conv2d_input_grad(self.d32(x), self.d32(k), &geom);
        let out64 =
            self.shadow.then(|| kernels::conv2d_input_grad(self.d64(x), self.d64(k), &geom));
        let rg = self.rg(x) || self.rg(k);
        self.push_op(
            "conv_transpose2d",
            vec![geom.n, geom.c, h, w],
            out,
            out64,
            Op::ConvT2d { x, k, geom },
            rg,
        )
    }

    /// Adds a per-channel bias vector over an NCHW tensor.
    pub fn bias_add(&mut self, x: Var, b: Var) -> Result<Var> {
        let xs = self.node(x).value.shape().to_vec();
        let bs = self.node(b).value.shape().to_vec();
        if xs.len() != 4 || bs.len() != 1 || bs[0] != xs[1] {
            return Err(Error::Dim(format!(
                "bias_add expects NCHW input and a [C] bias, got {xs:?} and {bs:?}"
            )));
        }
        let hw = xs[2] * xs[3];
        let out = kernels::bias_add(self.d32(x), self.d32(b), xs[0], xs[1], hw);
        let out64 = self.shadow.then(|| kernels::bias_add(self.d64(x), self.d64(b), xs[0], xs[1], hw));
        let rg = self.rg(x) || self.rg(b);
        self.push_op("bias_add", xs, out, out64, Op::BiasAdd { x, b }, rg)
    }

    /// Concatenates two NCHW tensors along the channel axis.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.node(a).value.shape().to_vec();
        let sb = self.node(b).value.shape().to_vec();
        if sa.len() != 4 || sb.len() != 4 || sa[0] != sb[0] || sa[2] != sb[2] || sa[3] != sb[3] {
            return Err(Error::Dim(format!(
                "concat_channels expects NCHW tensors agreeing outside the channel axis, \
                 got {sa:?} and {sb:?}"
            )));
        }
        let (n, ca, cb, hw) = (sa[0], sa[1], sb[1], sa[2] * sa[3]);
        let mut out = Vec::with_capacity((ca + cb) * n * hw);
        let mut out64 = self.shadow.then(|| Vec::with_capacity((ca + cb) * n * hw));
        {
            let da = self.d32(a);
            let db = self.d32(b);
            for nn in 0..n {
                out.extend_from_slice(&da[nn * ca * hw..(nn + 1) * ca * hw]);
                out.extend_from_slice(&db[nn * cb * hw..(nn + 1) * cb * hw]);
            }
        }
        if let Some(buf) = out64.as_mut() {
            let da = self.d64(a);
            let db = self.d64(b);
            for nn in 0..n {
                buf.extend_from_slice(&da[nn * ca * hw..(nn + 1) * ca * hw]);
                buf.extend_from_slice(&db[nn * cb * hw..(nn + 1) * cb * hw]);
            }
        }
        let rg = self.rg(a) || self.rg(b);
        self.push_op(
            "concat_channels",
            vec![n, ca + cb, sa[2], sa[3]],
            out,
            out64,
            Op::ConcatCh { a, b },
            rg,
        )
    }

    /// Channel normalization with affine rescale. Batch mode pools
    /// statistics over (N, H, W); instance mode over (H, W) per sample.
    pub fn normalize(
        &mut self,
        x: Var,
        mode: NormMode,
        gamma: Var,
        beta: Var,
        eps: f32,
    ) -> Result<Var> {
        let xs = self.node(x).value.shape().to_vec();
        if xs.len() != 4 {
            return Err(Error::Dim(format!("normalize expects an NCHW input, got {xs:?}")));
        }
        let gs = self.node(gamma).value.shape().to_vec();
        let bs = self.node(beta).value.shape().to_vec();
        if gs != [xs[1]] || bs != [xs[1]] {
            return Err(Error::Dim(format!(
                "normalize expects gamma and beta of shape [{}], got {gs:?} and {bs:?}",
                xs[1]
            )));
        }
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::Usage(format!("normalize epsilon must be positive, got {eps}")));
        }
        let hw = xs[2] * xs[3];
        let out = kernels::normalize(
            self.d32(x),
            xs[0],
            xs[1],
            hw,
            self.d32(gamma),
            self.d32(beta),
            mode,
            eps,
        );
        let out64 = self.shadow.then(|| {
            kernels::normalize(
                self.d64(x),
                xs[0],
                xs[1],
                hw,
                self.d64(gamma),
                self.d64(beta),
                mode,
                eps,
            )
        });
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        self.push_op("normalize", xs, out, out64, Op::Normalize { x, gamma, beta, mode, eps }, rg)
    }

    // ---- reductions ------------------------------------------------------

    /// Sum or mean over the listed axes; reduced axes keep extent 1. An
    /// empty axis list is the identity.
    pub fn reduce(&mut self, x: Var, kind: ReduceKind, axes: &[usize]) -> Result<Var> {
        let shape = self.node(x).value.shape().to_vec();
        let mut mask = vec![false; shape.len()];
        for &a in axes {
            if a >= shape.len() {
                return Err(Error::Dim(format!(
                    "reduce axis {a} out of range for shape {shape:?}"
                )));
            }
            if mask[a] {
                return Err(Error::Usage(format!("reduce axis {a} listed twice")));
            }
            mask[a] = true;
        }
        let (out, out_shape) = kernels::reduce(self.d32(x), &shape, kind, &mask);
        let out64 = self.shadow.then(|| kernels::reduce(self.d64(x), &shape, kind, &mask).0);
        let rg = self.rg(x);
        self.push_op("reduce", out_shape, out, out64, Op::Reduce { x, kind, mask }, rg)
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let axes: Vec<usize> = (0..self.node(x).value.rank()).collect();
        self.reduce(x, ReduceKind::Sum, &axes)
    }

    pub fn mean_all(&mut self, x: Var) -> Result<Var> {
        let axes: Vec<usize> = (0..self.node(x).value.rank()).collect();
        self.reduce(x, ReduceKind::Mean, &axes)
    }

    // ---- backward ---------------------------------------------------------

    /// Reverse sweep from a scalar root. Gradient accumulators are zeroed
    /// first; every leaf with `requires_grad` reachable from the root ends
    /// up holding its total derivative.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        self.backward_inner(root, false)
    }

    /// Like `backward`, but existing leaf gradients are kept and the new
    /// contribution is added onto them.
    pub fn backward_accumulate(&mut self, root: Var) -> Result<()> {
        self.backward_inner(root, true)
    }

    fn backward_inner(&mut self, root: Var, accumulate: bool) -> Result<()> {
        if self.node(root).value.numel() != 1 {
            return Err(Error::Usage(format!(
                "backward root must hold exactly one element, found shape {:?}",
                self.node(root).value.shape()
            )));
        }
        // Leaf totals from earlier passes survive accumulation; transient
        // gradients on interior nodes never do.
        let stash: Vec<(usize, Vec<f32>)> = if accumulate {
            self.nodes
                .iter()
                .enumerate()
                .filter(|(_, n)| matches!(n.op, Op::Leaf) && n.grad.is_some())
                .map(|(i, n)| (i, n.grad.clone().expect("filtered on presence")))
                .collect()
        } else {
            Vec::new()
        };
        for n in self.nodes.iter_mut() {
            n.grad = None;
        }
        self.nodes[root.0].grad = Some(vec![1.0]);

        for id in (0..=root.0).rev() {
            if self.nodes[id].grad.is_none() {
                continue;
            }
            let op = self.nodes[id].op.clone();
            let grad = self.nodes[id].grad.clone().expect("checked above");
            match op {
                Op::Leaf | Op::Detach => {}
                Op::Unary(kind, x) => {
                    let xd = self.node(x).value.clone();
                    let yd = self.nodes[id].value.clone();
                    let dx = kernels::unary_backward(kind, xd.data(), yd.data(), &grad);
                    self.accum(x, dx);
                }
                Op::Binary(kind, a, b) => {
                    let (da, db) = self.binary_backward(kind, a, b, &grad);
                    self.accum(a, da);
                    self.accum(b, db);
                }
                Op::AddScalar(x) => {
                    self.accum(x, grad.clone());
                }
                Op::MulScalar(x, c) => {
                    self.accum(x, grad.iter().map(|&g| g * c).collect());
                }
                Op::Conv2d { x, k, geom } => {
                    if self.rg(x) {
                        let kd = self.node(k).value.clone();
                        self.accum(x, kernels::conv2d_input_grad(&grad, kd.data(), &geom));
                    }
                    if self.rg(k) {
                        let xd = self.node(x).value.clone();
                        self.accum(k, kernels::conv2d_kernel_grad(&grad, xd.data(), &geom));
                    }
                }
                Op::ConvT2d { x, k, geom } => {
                    if self.rg(x) {
                        let kd = self.node(k).value.clone();
                        self.accum(x, kernels::conv2d(&grad, kd.data(), &geom));
                    }
                    if self.rg(k) {
                        let xd = self.node(x).value.clone();
                        self.accum(k, kernels::conv2d_kernel_grad(xd.data(), &grad, &geom));
                    }
                }
                Op::BiasAdd { x, b } => {
                    let xs = self.node(x).value.shape().to_vec();
                    let hw = xs[2] * xs[3];
                    if self.rg(b) {
                        self.accum(b, kernels::bias_grad(&grad, xs[0], xs[1], hw));
                    }
                    self.accum(x, grad.clone());
                }
                Op::ConcatCh { a, b } => {
                    let sa = self.node(a).value.shape().to_vec();
                    let sb = self.node(b).value.shape().to_vec();
                    let (n, ca, cb, hw) = (sa[0], sa[1], sb[1], sa[2] * sa[3]);
                    let mut da = Vec::with_capacity(n * ca * hw);
                    let mut db = Vec::with_capacity(n * cb * hw);
                    for nn in 0..n {
                        let base = nn * (ca + cb) * hw;
                        da.extend_from_slice(&grad[base..base + ca * hw]);
                        db.extend_from_slice(&grad[base + ca * hw..base + (ca + cb) * hw]);
                    }
                    self.accum(a, da);
                    self.accum(b, db);
                }
                Op::Normalize { x, gamma, beta, mode, eps } => {
                    let xs = self.node(x).value.shape().to_vec();
                    let hw = xs[2] * xs[3];
                    let xd = self.node(x).value.clone();
                    let gd = self.node(gamma).value.clone();
                    let (dx, dgamma, dbeta) = kernels::normalize_backward(
                        xd.data(),
                        xs[0],
                        xs[1],
                        hw,
                        gd.data(),
                        mode,
                        eps,
                        &grad,
                    );
                    self.accum(x, dx);
                    self.accum(gamma, dgamma);
                    self.accum(beta, dbeta);
                }
                Op::Reduce { x, kind, ref mask } => {
                    let shape = self.node(x).value.shape().to_vec();
                    self.accum(x, kernels::reduce_backward(&grad, &shape, kind, mask));
                }
            }
        }

        for (i, g) in stash {
            match &mut self.nodes[i].grad {
                Some(acc) => {
                    for (a, b) in acc.iter_mut().zip(&g) {
                        *a += b;
                    }
                }
                None => self.nodes[i].grad = Some(g),
            }
        }
        Ok(())
    }

    fn binary_backward(&self, kind: BinKind, a: Var, b: Var, grad: &[f32]) -> (Vec<f32>, Vec<f32>) {
        let na = self.node(a).value.numel();
        let nb = self.node(b).value.numel();
        let ad = self.d32(a);
        let bd = self.d32(b);
        let full_a: Vec<f32>;
        let full_b: Vec<f32>;
        match kind {
            BinKind::Add => {
                full_a = grad.to_vec();
                full_b = grad.to_vec();
            }
            BinKind::Sub => {
                full_a = grad.to_vec();
                full_b = grad.iter().map(|&g| -g).collect();
            }
            BinKind::Mul => {
                if na == nb {
                    full_a = grad.iter().zip(bd).map(|(&g, &v)| g * v).collect();
                    full_b = grad.iter().zip(ad).map(|(&g, &v)| g * v).collect();
                } else if nb == 1 {
                    full_a = grad.iter().map(|&g| g * bd[0]).collect();
                    full_b = grad.iter().zip(ad).map(|(&g, &v)| g * v).collect();
                } else {
                    full_a = grad.iter().zip(bd).map(|(&g, &v)| g * v).collect();
                    full_b = grad.iter().map(|&g| g * ad[0]).collect();
                }
            }
        }
        // A broadcast scalar operand receives the sum of its expanded grads.
        let da = if na == 1 && full_a.len() > 1 { vec![full_a.iter().sum()] } else { full_a };
        let db = if nb == 1 && full_b.len() > 1 { vec![full_b.iter().sum()] } else { full_b };
        (da, db)
    }

    fn accum(&mut self, v: Var, delta: Vec<f32>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        debug_assert_eq!(delta.len(), self.nodes[v.0].value.numel());
        match &mut self.nodes[v.0].grad {
            Some(acc) => {
                for (a, d) in acc.iter_mut().zip(&delta) {
                    *a += d;
                }
            }
            None => self.nodes[v.0].grad = Some(delta),
        }
    }
}

pub use crate::kernels::{NormMode as Norm, ReduceKind as Reduce};
