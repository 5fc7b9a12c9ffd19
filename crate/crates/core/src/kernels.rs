//! Low-level compute kernels behind the autodiff graph.
//!
//! Kernels are generic over the element type so that the gradient checker
//! can replay a forward pass in f64 while the trained path stays f32.
//! Every loop runs in a fixed order independent of input values, which is
//! what makes repeated runs bitwise identical.

use num_traits::Float;

/// Element type of a kernel. `fl` lifts an f32 constant into the type.
pub(crate) trait Real: Float {
    fn fl(v: f32) -> Self;
}

impl Real for f32 {
    fn fl(v: f32) -> f32 {
        v
    }
}

impl Real for f64 {
    fn fl(v: f32) -> f64 {
        f64::from(v)
    }
}

/// Inputs to `log` are clamped to this floor before taking the logarithm,
/// so adversarial losses saturate instead of producing -inf.
pub const LOG_EPSILON: f32 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum UnaryKind {
    Neg,
    Tanh,
    Sigmoid,
    Abs,
    LeakyRelu(f32),
    Log,
    Clamp(f32, f32),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum BinKind {
    Add,
    Sub,
    Mul,
}

/// Normalization statistics scope: `Batch` pools over (N, H, W) per channel,
/// `Instance` over (H, W) per sample and channel.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormMode {
    Batch,
    Instance,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
}

pub(crate) fn all_finite(xs: &[f32]) -> bool {
    xs.iter().all(|v| v.is_finite())
}

pub(crate) fn unary<T: Real>(kind: UnaryKind, x: &[T]) -> Vec<T> {
    let one = T::one();
    match kind {
        UnaryKind::Neg => x.iter().map(|&v| -v).collect(),
        UnaryKind::Tanh => x.iter().map(|&v| v.tanh()).collect(),
        UnaryKind::Sigmoid => x.iter().map(|&v| one / (one + (-v).exp())).collect(),
        UnaryKind::Abs => x.iter().map(|&v| v.abs()).collect(),
        UnaryKind::LeakyRelu(slope) => {
            let s = T::fl(slope);
            x.iter().map(|&v| if v >= T::zero() { v } else { s * v }).collect()
        }
        UnaryKind::Log => {
            let eps = T::fl(LOG_EPSILON);
            // max() would silently swallow a NaN input, so propagate it
            // explicitly and let the finiteness check report it.
            x.iter().map(|&v| if v.is_nan() { v } else { v.max(eps).ln() }).collect()
        }
        UnaryKind::Clamp(lo, hi) => {
            let lo = T::fl(lo);
            let hi = T::fl(hi);
            x.iter().map(|&v| if v.is_nan() { v } else { v.max(lo).min(hi) }).collect()
        }
    }
}

/// Per-element backward for unary ops: returns upstream * d(out)/d(in).
/// `x` is the op input, `y` its forward output.
pub(crate) fn unary_backward(kind: UnaryKind, x: &[f32], y: &[f32], up: &[f32]) -> Vec<f32> {
    match kind {
        UnaryKind::Neg => up.iter().map(|&u| -u).collect(),
        UnaryKind::Tanh => y.iter().zip(up).map(|(&t, &u)| u * (1.0 - t * t)).collect(),
        UnaryKind::Sigmoid => y.iter().zip(up).map(|(&s, &u)| u * s * (1.0 - s)).collect(),
        UnaryKind::Abs => x
            .iter()
            .zip(up)
            .map(|(&v, &u)| if v > 0.0 { u } else if v < 0.0 { -u } else { 0.0 })
            .collect(),
        UnaryKind::LeakyRelu(slope) => x
            .iter()
            .zip(up)
            .map(|(&v, &u)| if v >= 0.0 { u } else { slope * u })
            .collect(),
        UnaryKind::Log => x
            .iter()
            .zip(up)
            .map(|(&v, &u)| if v > LOG_EPSILON { u / v } else { 0.0 })
            .collect(),
        UnaryKind::Clamp(lo, hi) => x
            .iter()
            .zip(up)
            .map(|(&v, &u)| if v >= lo && v <= hi { u } else { 0.0 })
            .collect(),
    }
}

pub(crate) fn binary_ew<T: Real>(kind: BinKind, a: &[T], b: &[T]) -> Vec<T> {
    match kind {
        BinKind::Add => a.iter().zip(b).map(|(&x, &y)| x + y).collect(),
        BinKind::Sub => a.iter().zip(b).map(|(&x, &y)| x - y).collect(),
        BinKind::Mul => a.iter().zip(b).map(|(&x, &y)| x * y).collect(),
    }
}

pub(crate) fn binary_scalar_rhs<T: Real>(kind: BinKind, a: &[T], b: T) -> Vec<T> {
    match kind {
        BinKind::Add => a.iter().map(|&x| x + b).collect(),
        BinKind::Sub => a.iter().map(|&x| x - b).collect(),
        BinKind::Mul => a.iter().map(|&x| x * b).collect(),
    }
}

pub(crate) fn binary_scalar_lhs<T: Real>(kind: BinKind, a: T, b: &[T]) -> Vec<T> {
    match kind {
        BinKind::Add => b.iter().map(|&y| a + y).collect(),
        BinKind::Sub => b.iter().map(|&y| a - y).collect(),
        BinKind::Mul => b.iter().map(|&y| a * y).collect(),
    }
}

/// Output extent of a stride/pad convolution: floor((in + 2p - k)/s) + 1.
/// `None` when the kernel does not fit even once.
pub(crate) fn conv_out_dim(input: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if padded < k || stride == 0 {
        return None;
    }
    Some((padded - k) / stride + 1)
}

/// Output extent of the transposed convolution: (in - 1)*s - 2p + k.
pub(crate) fn convt_out_dim(input: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    if stride == 0 {
        return None;
    }
    let grown = (input - 1) * stride + k;
    if grown <= 2 * pad {
        return None;
    }
    Some(grown - 2 * pad)
}

/// Dot product with a fixed eight-lane accumulation tree. The lane
/// structure is data-independent, so results are deterministic while the
/// loop still vectorizes.
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let chunks = a.len() / 8;
    for i in 0..chunks {
        let pa = &a[i * 8..i * 8 + 8];
        let pb = &b[i * 8..i * 8 + 8];
        for l in 0..8 {
            acc[l] = acc[l] + pa[l] * pb[l];
        }
    }
    let mut rem = T::zero();
    for i in chunks * 8..a.len() {
        rem = rem + a[i] * b[i];
    }
    (((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]))) + rem
}

fn axpy<T: Real>(out: &mut [T], s: T, src: &[T]) {
    debug_assert_eq!(out.len(), src.len());
    for (o, &v) in out.iter_mut().zip(src) {
        *o = *o + s * v;
    }
}

/// Geometry shared by the convolution kernels. All shape validation happens
/// in the graph layer; these structs carry already-checked numbers.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub o: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    fn patch(&self) -> usize {
        self.c * self.kh * self.kw
    }
    fn positions(&self) -> usize {
        self.oh * self.ow
    }
}

/// Unrolls one sample's receptive fields into `col`, laid out as
/// [oh*ow positions][c*kh*kw patch elements]. Out-of-image taps are zero.
fn im2col<T: Real>(x: &[T], g: &ConvGeom, col: &mut [T]) {
    let k = g.patch();
    for v in col.iter_mut() {
        *v = T::zero();
    }
    for oy in 0..g.oh {
        for ox in 0..g.ow {
            let row = (oy * g.ow + ox) * k;
            for c in 0..g.c {
                let plane = c * g.h * g.w;
                for u in 0..g.kh {
                    let iy = (oy * g.stride + u) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src_row = plane + iy as usize * g.w;
                    let dst = row + (c * g.kh + u) * g.kw;
                    for v in 0..g.kw {
                        let ix = (ox * g.stride + v) as isize - g.pad as isize;
                        if ix < 0 || ix >= g.w as isize {
                            continue;
                        }
                        col[dst + v] = x[src_row + ix as usize];
                    }
                }
            }
        }
    }
}

/// Scatter-adds a column buffer back onto an image plane; the exact adjoint
/// of `im2col`.
fn col2im_add<T: Real>(col: &[T], g: &ConvGeom, x: &mut [T]) {
    let k = g.patch();
    for oy in 0..g.oh {
        for ox in 0..g.ow {
            let row = (oy * g.ow + ox) * k;
            for c in 0..g.c {
                let plane = c * g.h * g.w;
                for u in 0..g.kh {
                    let iy = (oy * g.stride + u) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst_row = plane + iy as usize * g.w;
                    let src = row + (c * g.kh + u) * g.kw;
                    for v in 0..g.kw {
                        let ix = (ox * g.stride + v) as isize - g.pad as isize;
                        if ix < 0 || ix >= g.w as isize {
                            continue;
                        }
                        x[dst_row + ix as usize] = x[dst_row + ix as usize] + col[src + v];
                    }
                }
            }
        }
    }
}

/// Cross-correlation of NCHW input with an OIHW kernel.
/// out[n,o,i,j] = sum_{c,u,v} x[n,c,i*s-p+u,j*s-p+v] * k[o,c,u,v].
pub(crate) fn conv2d<T: Real>(x: &[T], kern: &[T], g: &ConvGeom) -> Vec<T> {
    let kdim = g.patch();
    let p = g.positions();
    let mut col = vec![T::zero(); p * kdim];
    let mut out = vec![T::zero(); g.n * g.o * p];
    for n in 0..g.n {
        im2col(&x[n * g.c * g.h * g.w..(n + 1) * g.c * g.h * g.w], g, &mut col);
        for o in 0..g.o {
            let krow = &kern[o * kdim..(o + 1) * kdim];
            let base = (n * g.o + o) * p;
            for pos in 0..p {
                out[base + pos] = dot(krow, &col[pos * kdim..(pos + 1) * kdim]);
            }
        }
    }
    out
}

/// Gradient of `conv2d` with respect to its input: scatters
/// upstream[n,o,·]*k[o,·] back over the input extent. Also the forward pass
/// of the transposed convolution, which is defined as this exact adjoint.
pub(crate) fn conv2d_input_grad<T: Real>(up: &[T], kern: &[T], g: &ConvGeom) -> Vec<T> {
    let kdim = g.patch();
    let p = g.positions();
    let mut col = vec![T::zero(); p * kdim];
    let mut out = vec![T::zero(); g.n * g.c * g.h * g.w];
    for n in 0..g.n {
        for v in col.iter_mut() {
            *v = T::zero();
        }
        for o in 0..g.o {
            let krow = &kern[o * kdim..(o + 1) * kdim];
            let base = (n * g.o + o) * p;
            for pos in 0..p {
                axpy(&mut col[pos * kdim..(pos + 1) * kdim], up[base + pos], krow);
            }
        }
        col2im_add(&col, g, &mut out[n * g.c * g.h * g.w..(n + 1) * g.c * g.h * g.w]);
    }
    out
}

/// Gradient of `conv2d` with respect to its kernel:
/// dk[o,c,u,v] = sum_{n,i,j} up[n,o,i,j] * x[n,c,i*s-p+u,j*s-p+v].
pub(crate) fn conv2d_kernel_grad(up: &[f32], x: &[f32], g: &ConvGeom) -> Vec<f32> {
    let kdim = g.patch();
    let p = g.positions();
    let mut col = vec![0.0f32; p * kdim];
    let mut dk = vec![0.0f32; g.o * kdim];
    for n in 0..g.n {
        im2col(&x[n * g.c * g.h * g.w..(n + 1) * g.c * g.h * g.w], g, &mut col);
        for pos in 0..p {
            let crow = &col[pos * kdim..(pos + 1) * kdim];
            for o in 0..g.o {
                axpy(&mut dk[o * kdim..(o + 1) * kdim], up[(n * g.o + o) * p + pos], crow);
            }
        }
    }
    dk
}

/// Per-channel bias over NCHW.
pub(crate) fn bias_add<T: Real>(x: &[T], b: &[T], n: usize, c: usize, hw: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(x.len());
    for nn in 0..n {
        for ch in 0..c {
            let base = (nn * c + ch) * hw;
            let bv = b[ch];
            out.extend(x[base..base + hw].iter().map(|&v| v + bv));
        }
    }
    out
}

pub(crate) fn bias_grad(up: &[f32], n: usize, c: usize, hw: usize) -> Vec<f32> {
    let mut db = vec![0.0f32; c];
    for nn in 0..n {
        for ch in 0..c {
            let base = (nn * c + ch) * hw;
            let mut s = 0.0f32;
            for &u in &up[base..base + hw] {
                s += u;
            }
            db[ch] += s;
        }
    }
    db
}

/// Normalization with affine rescale. Returns the output only; backward
/// recomputes the per-group statistics, which keeps nodes small.
pub(crate) fn normalize<T: Real>(
    x: &[T],
    n: usize,
    c: usize,
    hw: usize,
    gamma: &[T],
    beta: &[T],
    mode: NormMode,
    eps: f32,
) -> Vec<T> {
    let eps = T::fl(eps);
    let mut out = vec![T::zero(); x.len()];
    for_each_norm_group(n, c, mode, |ch, group| {
        let m = T::fl((group.len() * hw) as f32);
        let mut mean = T::zero();
        for &plane in group {
            let base = plane * hw;
            for &v in &x[base..base + hw] {
                mean = mean + v;
            }
        }
        mean = mean / m;
        let mut var = T::zero();
        for &plane in group {
            let base = plane * hw;
            for &v in &x[base..base + hw] {
                let d = v - mean;
                var = var + d * d;
            }
        }
        var = var / m;
        let inv = T::one() / (var + eps).sqrt();
        let g = gamma[ch];
        let b = beta[ch];
        for &plane in group {
            let base = plane * hw;
            for i in base..base + hw {
                out[i] = (x[i] - mean) * inv * g + b;
            }
        }
    });
    out
}

pub(crate) fn normalize_backward(
    x: &[f32],
    n: usize,
    c: usize,
    hw: usize,
    gamma: &[f32],
    mode: NormMode,
    eps: f32,
    up: &[f32],
) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
    let mut dx = vec![0.0f32; x.len()];
    let mut dgamma = vec![0.0f32; c];
    let mut dbeta = vec![0.0f32; c];
    for_each_norm_group(n, c, mode, |ch, group| {
        let m = (group.len() * hw) as f32;
        let mut mean = 0.0f32;
        for &plane in group {
            let base = plane * hw;
            for &v in &x[base..base + hw] {
                mean += v;
            }
        }
        mean /= m;
        let mut var = 0.0f32;
        for &plane in group {
            let base = plane * hw;
            for &v in &x[base..base + hw] {
                let d = v - mean;
                var += d * d;
            }
        }
        var /= m;
        let inv = 1.0 / (var + eps).sqrt();

        // Accumulate the per-group sums the input gradient needs.
        let mut sum_g = 0.0f32;
        let mut sum_gx = 0.0f32;
        for &plane in group {
            let base = plane * hw;
            for i in base..base + hw {
                let xh = (x[i] - mean) * inv;
                let u = up[i];
                sum_g += u;
                sum_gx += u * xh;
            }
        }
        dbeta[ch] += sum_g;
        dgamma[ch] += sum_gx;
        let g = gamma[ch];
        let mg = sum_g / m;
        let mgx = sum_gx / m;
        for &plane in group {
            let base = plane * hw;
            for i in base..base + hw {
                let xh = (x[i] - mean) * inv;
                dx[i] = g * inv * (up[i] - mg - xh * mgx);
            }
        }
    });
    (dx, dgamma, dbeta)
}

/// Visits normalization groups in a fixed order. A group is the list of
/// element base offsets of the (sample, channel) planes pooled together,
/// tagged with the channel index that owns gamma/beta.
fn for_each_norm_group(n: usize, c: usize, mode: NormMode, mut f: impl FnMut(usize, &[usize])) {
    match mode {
        NormMode::Batch => {
            let mut bases = Vec::with_capacity(n);
            for ch in 0..c {
                bases.clear();
                for nn in 0..n {
                    bases.push(nn * c + ch);
                }
                f(ch, &bases);
            }
        }
        NormMode::Instance => {
            for nn in 0..n {
                for ch in 0..c {
                    f(ch, &[nn * c + ch]);
                }
            }
        }
    }
}

/// Reduction over a subset of axes; reduced axes keep extent 1.
pub(crate) fn reduce<T: Real>(
    x: &[T],
    shape: &[usize],
    kind: ReduceKind,
    reduced: &[bool],
) -> (Vec<T>, Vec<usize>) {
    let out_shape: Vec<usize> =
        shape.iter().zip(reduced).map(|(&d, &r)| if r { 1 } else { d }).collect();
    let out_numel: usize = out_shape.iter().product();
    let mut out = vec![T::zero(); out_numel];

    let out_strides = strides(&out_shape);
    let rank = shape.len();
    let mut coords = vec![0usize; rank];
    let mut out_idx = 0usize;
    for &v in x {
        out[out_idx] = out[out_idx] + v;
        // Odometer increment, updating the output index incrementally.
        for d in (0..rank).rev() {
            coords[d] += 1;
            if !reduced[d] {
                out_idx += out_strides[d];
            }
            if coords[d] < shape[d] {
                break;
            }
            coords[d] = 0;
            if !reduced[d] {
                out_idx -= out_strides[d] * shape[d];
            }
        }
    }
    if kind == ReduceKind::Mean {
        let count: usize = shape.iter().zip(reduced).filter(|(_, &r)| r).map(|(&d, _)| d).product();
        let scale = T::one() / T::fl(count as f32);
        for v in out.iter_mut() {
            *v = *v * scale;
        }
    }
    (out, out_shape)
}

pub(crate) fn reduce_backward(
    up: &[f32],
    shape: &[usize],
    kind: ReduceKind,
    reduced: &[bool],
) -> Vec<f32> {
    let out_shape: Vec<usize> =
        shape.iter().zip(reduced).map(|(&d, &r)| if r { 1 } else { d }).collect();
    let out_strides = strides(&out_shape);
    let count: usize = shape.iter().zip(reduced).filter(|(_, &r)| r).map(|(&d, _)| d).product();
    let scale = match kind {
        ReduceKind::Sum => 1.0f32,
        ReduceKind::Mean => 1.0 / count as f32,
    };
    let numel: usize = shape.iter().product();
    let rank = shape.len();
    let mut coords = vec![0usize; rank];
    let mut out_idx = 0usize;
    let mut dx = Vec::with_capacity(numel);
    for _ in 0..numel {
        dx.push(up[out_idx] * scale);
        for d in (0..rank).rev() {
            coords[d] += 1;
            if !reduced[d] {
                out_idx += out_strides[d];
            }
            if coords[d] < shape[d] {
                break;
            }
            coords[d] = 0;
            if !reduced[d] {
                out_idx -= out_strides[d] * shape[d];
            }
        }
    }
    dx
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; shape.len()];
    for d in (0..shape.len().saturating_sub(1)).rev() {
        s[d] = s[d + 1] * shape[d + 1];
    }
    s
}
