//! Dense 4-D tensors with reverse-mode automatic differentiation.
//!
//! Everything is NCHW. A [`Tape`] owns every tensor created on it; ops
//! append nodes and return [`TensorId`] handles. Input ids always point
//! backwards, so the tape is topologically ordered by construction and
//! [`Tape::backward`] is a single reverse sweep.
//!
//! Broadcasting is limited to what the model needs: two operands agree on
//! every axis or one of them has extent 1 there (scalar and per-channel
//! gating are the common cases).

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::elem::Elem;
#[allow(unused_imports)]
use num_traits::Float;

/// NCHW extents. Weight tensors use the same layout as (out, in, kh, kw).
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    pub const fn scalar() -> Self {
        Shape::new(1, 1, 1, 1)
    }

    pub fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }
}

impl core::fmt::Display for Shape {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

/// Handle to a tensor on a tape.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct TensorId(pub(crate) usize);

impl TensorId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorError {
    ShapeMismatch {
        op: &'static str,
        lhs: Shape,
        rhs: Shape,
    },
    BadArg {
        op: &'static str,
        msg: String,
    },
    NonScalarLoss {
        shape: Shape,
    },
}

impl core::fmt::Display for TensorError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            TensorError::ShapeMismatch { op, lhs, rhs } => {
                write!(f, "{op}: incompatible shapes {lhs} and {rhs}")
            }
            TensorError::BadArg { op, msg } => write!(f, "{op}: {msg}"),
            TensorError::NonScalarLoss { shape } => {
                write!(f, "backward requires a scalar loss, got shape {shape}")
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for TensorError {}

fn bad_arg(op: &'static str, msg: String) -> TensorError {
    TensorError::BadArg { op, msg }
}

/// Per-channel statistics saved by batchnorm for the backward pass.
#[derive(Debug, Clone)]
struct BnSaved<T> {
    mean: Vec<T>,
    invstd: Vec<T>,
    train: bool,
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Add(TensorId, TensorId),
    Sub(TensorId, TensorId),
    Mul(TensorId, TensorId),
    EltMax(TensorId, TensorId),
    Scale(TensorId, T),
    Elu(TensorId),
    Sigmoid(TensorId),
    Conv2d {
        x: TensorId,
        w: TensorId,
        bias: Option<TensorId>,
        stride: usize,
        padding: usize,
    },
    MaxPool2x2 {
        x: TensorId,
        argmax: Vec<u32>,
    },
    GlobalAvgPool(TensorId),
    UpsampleBilinear2x(TensorId),
    BatchNorm {
        x: TensorId,
        gamma: TensorId,
        beta: TensorId,
        saved: BnSaved<T>,
    },
    ConcatChannels(TensorId, TensorId),
    SoftmaxChannels(TensorId),
    SumAll(TensorId),
    MeanAll(TensorId),
    /// Scalar-valued function of one tensor with a precomputed gradient,
    /// used by the loss implementations.
    ScalarFn {
        x: TensorId,
        dx: Vec<T>,
    },
}

struct Node<T> {
    shape: Shape,
    data: Vec<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Append-only computation record. Confined to one thread; independent
/// tapes may run in parallel.
pub struct Tape<T: Elem> {
    nodes: Vec<Node<T>>,
}

/// Gradients from one backward sweep, indexed by tensor id.
pub struct Gradients<T> {
    by_node: Vec<Option<Vec<T>>>,
}

impl<T: Elem> Gradients<T> {
    /// Gradient buffer for `id`, if one was produced.
    pub fn get(&self, id: TensorId) -> Option<&[T]> {
        self.by_node.get(id.0).and_then(|g| g.as_deref())
    }
}

impl<T: Elem> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Elem> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: TensorId) -> &[T] {
        &self.nodes[id.0].data
    }

    pub fn shape(&self, id: TensorId) -> Shape {
        self.nodes[id.0].shape
    }

    fn push(&mut self, shape: Shape, data: Vec<T>, op: Op<T>, needs_grad: bool) -> TensorId {
        debug_assert_eq!(data.len(), shape.numel());
        let id = TensorId(self.nodes.len());
        self.nodes.push(Node {
            shape,
            data,
            op,
            needs_grad,
        });
        id
    }

    fn needs(&self, id: TensorId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// New leaf tensor. `requires_grad` marks it as a parameter for backward.
    pub fn leaf(
        &mut self,
        data: Vec<T>,
        shape: Shape,
        requires_grad: bool,
    ) -> Result<TensorId, TensorError> {
        if data.len() != shape.numel() {
            return Err(bad_arg(
                "leaf",
                format!(
                    "data length {} does not match shape {} (numel {})",
                    data.len(),
                    shape,
                    shape.numel()
                ),
            ));
        }
        Ok(self.push(shape, data, Op::Leaf, requires_grad))
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, data: Vec<T>, shape: Shape) -> Result<TensorId, TensorError> {
        self.leaf(data, shape, false)
    }

    pub fn scalar(&mut self, v: T) -> TensorId {
        self.push(Shape::scalar(), vec![v], Op::Leaf, false)
    }

    // ── elementwise ──────────────────────────────────────────────────

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Elementwise maximum; shapes must match exactly. Ties route the
    /// gradient to the first operand.
    pub fn elt_max(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(TensorError::ShapeMismatch {
                op: "elt_max",
                lhs: sa,
                rhs: sb,
            });
        }
        let data: Vec<T> = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(&x, &y)| if x >= y { x } else { y })
            .collect();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(sa, data, Op::EltMax(a, b), needs))
    }

    pub fn scale(&mut self, a: TensorId, k: T) -> TensorId {
        let data: Vec<T> = self.nodes[a.0].data.iter().map(|&x| x * k).collect();
        let shape = self.shape(a);
        let needs = self.needs(a);
        self.push(shape, data, Op::Scale(a, k), needs)
    }

    /// ELU with alpha = 1: `x` for `x > 0`, `e^x - 1` otherwise.
    pub fn elu(&mut self, a: TensorId) -> TensorId {
        let data: Vec<T> = self.nodes[a.0]
            .data
            .iter()
            .map(|&x| if x > T::zero() { x } else { x.exp() - T::one() })
            .collect();
        let shape = self.shape(a);
        let needs = self.needs(a);
        self.push(shape, data, Op::Elu(a), needs)
    }

    pub fn sigmoid(&mut self, a: TensorId) -> TensorId {
        let data: Vec<T> = self.nodes[a.0]
            .data
            .iter()
            .map(|&x| T::one() / (T::one() + (-x).exp()))
            .collect();
        let shape = self.shape(a);
        let needs = self.needs(a);
        self.push(shape, data, Op::Sigmoid(a), needs)
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: TensorId,
        b: TensorId,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<TensorId, TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let out = broadcast_shape(name, sa, sb)?;
        let mut data = vec![T::zero(); out.numel()];
        {
            let da = &self.nodes[a.0].data;
            let db = &self.nodes[b.0].data;
            if sa == sb {
                for (o, (&x, &y)) in data.iter_mut().zip(da.iter().zip(db.iter())) {
                    *o = f(x, y);
                }
            } else {
                let stra = broadcast_strides(sa, out);
                let strb = broadcast_strides(sb, out);
                let mut idx = 0;
                for n in 0..out.n {
                    for c in 0..out.c {
                        for h in 0..out.h {
                            for w in 0..out.w {
                                let ia = n * stra[0] + c * stra[1] + h * stra[2] + w * stra[3];
                                let ib = n * strb[0] + c * strb[1] + h * strb[2] + w * strb[3];
                                data[idx] = f(da[ia], db[ib]);
                                idx += 1;
                            }
                        }
                    }
                }
            }
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, data, op, needs))
    }

    // ── convolution ──────────────────────────────────────────────────

    /// 2-D convolution, square kernel, symmetric zero padding. `w` is
    /// (out_channels, in_channels, k, k); optional per-channel bias has
    /// shape (1, out_channels, 1, 1).
    pub fn conv2d(
        &mut self,
        x: TensorId,
        w: TensorId,
        bias: Option<TensorId>,
        stride: usize,
        padding: usize,
    ) -> Result<TensorId, TensorError> {
        let sx = self.shape(x);
        let sw = self.shape(w);
        if stride == 0 {
            return Err(bad_arg("conv2d", String::from("stride must be positive")));
        }
        if sx.c != sw.c {
            return Err(bad_arg(
                "conv2d",
                format!("input has {} channels but kernel expects {} (input {sx}, kernel {sw})", sx.c, sw.c),
            ));
        }
        if sw.h != sw.w {
            return Err(bad_arg("conv2d", format!("kernel must be square, got {sw}")));
        }
        let k = sw.h;
        if sx.h + 2 * padding < k || sx.w + 2 * padding < k {
            return Err(bad_arg(
                "conv2d",
                format!("kernel {k}x{k} does not fit input {sx} with padding {padding}"),
            ));
        }
        if let Some(b) = bias {
            let sb = self.shape(b);
            if sb != Shape::new(1, sw.n, 1, 1) {
                return Err(bad_arg(
                    "conv2d",
                    format!("bias shape {sb} does not match {} output channels", sw.n),
                ));
            }
        }
        let oh = (sx.h + 2 * padding - k) / stride + 1;
        let ow = (sx.w + 2 * padding - k) / stride + 1;
        let out_shape = Shape::new(sx.n, sw.n, oh, ow);
        let ikk = sx.c * k * k;
        let cols_len = ikk * oh * ow;
        let mut cols = vec![T::zero(); cols_len];
        let mut data = vec![T::zero(); out_shape.numel()];
        let plane = sx.h * sx.w;
        for n in 0..sx.n {
            let xn = &self.nodes[x.0].data[n * sx.c * plane..(n + 1) * sx.c * plane];
            im2col(xn, sx.c, sx.h, sx.w, k, stride, padding, oh, ow, &mut cols);
            let yn = &mut data[n * sw.n * oh * ow..(n + 1) * sw.n * oh * ow];
            T::gemm(
                sw.n,
                ikk,
                oh * ow,
                T::one(),
                &self.nodes[w.0].data,
                ikk as isize,
                1,
                &cols,
                (oh * ow) as isize,
                1,
                T::zero(),
                yn,
                (oh * ow) as isize,
                1,
            );
        }
        if let Some(b) = bias {
            let bd = &self.nodes[b.0].data;
            let hw = oh * ow;
            for n in 0..sx.n {
                for c in 0..sw.n {
                    let base = (n * sw.n + c) * hw;
                    let bv = bd[c];
                    for v in &mut data[base..base + hw] {
                        *v = *v + bv;
                    }
                }
            }
        }
        let needs =
            self.needs(x) || self.needs(w) || bias.map(|b| self.needs(b)).unwrap_or(false);
        Ok(self.push(
            out_shape,
            data,
            Op::Conv2d {
                x,
                w,
                bias,
                stride,
                padding,
            },
            needs,
        ))
    }

    // ── pooling and resampling ───────────────────────────────────────

    /// 2x2 max pooling with stride 2. Requires even spatial extents.
    pub fn maxpool2x2(&mut self, x: TensorId) -> Result<TensorId, TensorError> {
        let s = self.shape(x);
        if s.h % 2 != 0 || s.w % 2 != 0 {
            return Err(bad_arg(
                "maxpool2x2",
                format!("spatial size must be even, got {s}"),
            ));
        }
        let (oh, ow) = (s.h / 2, s.w / 2);
        let out_shape = Shape::new(s.n, s.c, oh, ow);
        let mut data = vec![T::zero(); out_shape.numel()];
        let mut argmax = vec![0u32; out_shape.numel()];
        let xd = &self.nodes[x.0].data;
        debug_assert!(xd.len() < u32::MAX as usize);
        let mut o = 0;
        for n in 0..s.n {
            for c in 0..s.c {
                let base = (n * s.c + c) * s.h * s.w;
                for oy in 0..oh {
                    for ox in 0..ow {
                        // fixed visit order (tl, tr, bl, br) keeps ties deterministic
                        let mut best_idx = base + (2 * oy) * s.w + 2 * ox;
                        let mut best = xd[best_idx];
                        for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                            let idx = base + (2 * oy + dy) * s.w + 2 * ox + dx;
                            if xd[idx] > best {
                                best = xd[idx];
                                best_idx = idx;
                            }
                        }
                        data[o] = best;
                        argmax[o] = best_idx as u32;
                        o += 1;
                    }
                }
            }
        }
        let needs = self.needs(x);
        Ok(self.push(out_shape, data, Op::MaxPool2x2 { x, argmax }, needs))
    }

    /// Mean over the spatial extent, producing (N, C, 1, 1).
    pub fn global_avg_pool(&mut self, x: TensorId) -> Result<TensorId, TensorError> {
        let s = self.shape(x);
        if s.h == 0 || s.w == 0 {
            return Err(bad_arg("global_avg_pool", format!("empty spatial size {s}")));
        }
        let out_shape = Shape::new(s.n, s.c, 1, 1);
        let hw = T::from_f64((s.h * s.w) as f64);
        let xd = &self.nodes[x.0].data;
        let mut data = vec![T::zero(); out_shape.numel()];
        for (i, slot) in data.iter_mut().enumerate() {
            let base = i * s.h * s.w;
            let mut acc = T::zero();
            for &v in &xd[base..base + s.h * s.w] {
                acc = acc + v;
            }
            *slot = acc / hw;
        }
        let needs = self.needs(x);
        Ok(self.push(out_shape, data, Op::GlobalAvgPool(x), needs))
    }

    /// Doubles H and W with bilinear interpolation, half-pixel (align
    /// corners = false) convention.
    pub fn upsample_bilinear_2x(&mut self, x: TensorId) -> Result<TensorId, TensorError> {
        let s = self.shape(x);
        if s.h == 0 || s.w == 0 {
            return Err(bad_arg(
                "upsample_bilinear_2x",
                format!("empty spatial size {s}"),
            ));
        }
        let out_shape = Shape::new(s.n, s.c, s.h * 2, s.w * 2);
        let ytab = bilinear_axis_2x::<T>(s.h);
        let xtab = bilinear_axis_2x::<T>(s.w);
        let xd = &self.nodes[x.0].data;
        let mut data = vec![T::zero(); out_shape.numel()];
        let mut o = 0;
        for plane in 0..s.n * s.c {
            let base = plane * s.h * s.w;
            for &(y0, y1, wy) in &ytab {
                for &(x0, x1, wx) in &xtab {
                    let one = T::one();
                    let v00 = xd[base + y0 * s.w + x0];
                    let v01 = xd[base + y0 * s.w + x1];
                    let v10 = xd[base + y1 * s.w + x0];
                    let v11 = xd[base + y1 * s.w + x1];
                    let top = v00 * (one - wx) + v01 * wx;
                    let bot = v10 * (one - wx) + v11 * wx;
                    data[o] = top * (one - wy) + bot * wy;
                    o += 1;
                }
            }
        }
        let needs = self.needs(x);
        Ok(self.push(out_shape, data, Op::UpsampleBilinear2x(x), needs))
    }

    // ── normalization ────────────────────────────────────────────────

    /// Batchnorm in training mode: normalizes by batch statistics
    /// (epsilon baked into invstd) and updates `running_mean`/`running_var`
    /// in place with the given momentum.
    #[allow(clippy::too_many_arguments)]
    pub fn batchnorm_train(
        &mut self,
        x: TensorId,
        gamma: TensorId,
        beta: TensorId,
        running_mean: &mut [T],
        running_var: &mut [T],
        momentum: T,
        eps: T,
    ) -> Result<TensorId, TensorError> {
        let s = self.shape(x);
        self.check_bn_args(s, gamma, beta)?;
        if s.n == 0 || s.numel() == 0 {
            return Err(bad_arg("batchnorm", format!("zero-size batch {s}")));
        }
        if running_mean.len() != s.c || running_var.len() != s.c {
            return Err(bad_arg(
                "batchnorm",
                format!("running stats have {} channels, input has {}", running_mean.len(), s.c),
            ));
        }
        let m = s.n * s.h * s.w;
        let mf = T::from_f64(m as f64);
        let mut mean = vec![T::zero(); s.c];
        let mut var = vec![T::zero(); s.c];
        {
            let xd = &self.nodes[x.0].data;
            for c in 0..s.c {
                let mut acc = T::zero();
                for n in 0..s.n {
                    let base = (n * s.c + c) * s.h * s.w;
                    for &v in &xd[base..base + s.h * s.w] {
                        acc = acc + v;
                    }
                }
                let mu = acc / mf;
                let mut vacc = T::zero();
                for n in 0..s.n {
                    let base = (n * s.c + c) * s.h * s.w;
                    for &v in &xd[base..base + s.h * s.w] {
                        let d = v - mu;
                        vacc = vacc + d * d;
                    }
                }
                mean[c] = mu;
                var[c] = vacc / mf;
            }
        }
        for c in 0..s.c {
            running_mean[c] = (T::one() - momentum) * running_mean[c] + momentum * mean[c];
            running_var[c] = (T::one() - momentum) * running_var[c] + momentum * var[c];
        }
        let invstd: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        self.bn_apply(x, gamma, beta, mean, invstd, true)
    }

    /// Batchnorm in eval mode: normalizes by the provided running stats.
    pub fn batchnorm_eval(
        &mut self,
        x: TensorId,
        gamma: TensorId,
        beta: TensorId,
        running_mean: &[T],
        running_var: &[T],
        eps: T,
    ) -> Result<TensorId, TensorError> {
        let s = self.shape(x);
        self.check_bn_args(s, gamma, beta)?;
        if s.numel() == 0 {
            return Err(bad_arg("batchnorm", format!("zero-size batch {s}")));
        }
        if running_mean.len() != s.c || running_var.len() != s.c {
            return Err(bad_arg(
                "batchnorm",
                format!("running stats have {} channels, input has {}", running_mean.len(), s.c),
            ));
        }
        let mean = running_mean.to_vec();
        let invstd: Vec<T> = running_var
            .iter()
            .map(|&v| T::one() / (v + eps).sqrt())
            .collect();
        self.bn_apply(x, gamma, beta, mean, invstd, false)
    }

    fn check_bn_args(&self, s: Shape, gamma: TensorId, beta: TensorId) -> Result<(), TensorError> {
        let expect = Shape::new(1, s.c, 1, 1);
        for (name, id) in [("gamma", gamma), ("beta", beta)] {
            let sp = self.shape(id);
            if sp != expect {
                return Err(bad_arg(
                    "batchnorm",
                    format!("{name} shape {sp} does not match input channels ({} expected)", expect),
                ));
            }
        }
        Ok(())
    }

    fn bn_apply(
        &mut self,
        x: TensorId,
        gamma: TensorId,
        beta: TensorId,
        mean: Vec<T>,
        invstd: Vec<T>,
        train: bool,
    ) -> Result<TensorId, TensorError> {
        let s = self.shape(x);
        let mut data = vec![T::zero(); s.numel()];
        {
            let xd = &self.nodes[x.0].data;
            let g = &self.nodes[gamma.0].data;
            let b = &self.nodes[beta.0].data;
            let hw = s.h * s.w;
            for n in 0..s.n {
                for c in 0..s.c {
                    let base = (n * s.c + c) * hw;
                    let (mu, is, gc, bc) = (mean[c], invstd[c], g[c], b[c]);
                    for i in base..base + hw {
                        data[i] = (xd[i] - mu) * is * gc + bc;
                    }
                }
            }
        }
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(
            s,
            data,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                saved: BnSaved { mean, invstd, train },
            },
            needs,
        ))
    }

    // ── shape ops and reductions ─────────────────────────────────────

    /// Concatenates along the channel axis. Spatial and batch extents
    /// must agree; either operand may have zero channels.
    pub fn concat_channels(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.n != sb.n || sa.h != sb.h || sa.w != sb.w {
            return Err(TensorError::ShapeMismatch {
                op: "concat_channels",
                lhs: sa,
                rhs: sb,
            });
        }
        let out_shape = Shape::new(sa.n, sa.c + sb.c, sa.h, sa.w);
        let hw = sa.h * sa.w;
        let mut data = vec![T::zero(); out_shape.numel()];
        for n in 0..sa.n {
            let dst = n * out_shape.c * hw;
            let src_a = n * sa.c * hw;
            data[dst..dst + sa.c * hw]
                .copy_from_slice(&self.nodes[a.0].data[src_a..src_a + sa.c * hw]);
            let src_b = n * sb.c * hw;
            data[dst + sa.c * hw..dst + out_shape.c * hw]
                .copy_from_slice(&self.nodes[b.0].data[src_b..src_b + sb.c * hw]);
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out_shape, data, Op::ConcatChannels(a, b), needs))
    }

    /// Softmax over the channel axis, per pixel.
    pub fn softmax_channels(&mut self, x: TensorId) -> Result<TensorId, TensorError> {
        let s = self.shape(x);
        if s.c == 0 {
            return Err(bad_arg("softmax_channels", String::from("zero channels")));
        }
        let hw = s.h * s.w;
        let xd = &self.nodes[x.0].data;
        let mut data = vec![T::zero(); s.numel()];
        for n in 0..s.n {
            for p in 0..hw {
                let mut mx = T::neg_infinity();
                for c in 0..s.c {
                    mx = mx.max(xd[(n * s.c + c) * hw + p]);
                }
                let mut denom = T::zero();
                for c in 0..s.c {
                    let e = (xd[(n * s.c + c) * hw + p] - mx).exp();
                    data[(n * s.c + c) * hw + p] = e;
                    denom = denom + e;
                }
                for c in 0..s.c {
                    let i = (n * s.c + c) * hw + p;
                    data[i] = data[i] / denom;
                }
            }
        }
        let needs = self.needs(x);
        Ok(self.push(s, data, Op::SoftmaxChannels(x), needs))
    }

    pub fn sum_all(&mut self, x: TensorId) -> TensorId {
        let mut acc = T::zero();
        for &v in &self.nodes[x.0].data {
            acc = acc + v;
        }
        let needs = self.needs(x);
        self.push(Shape::scalar(), vec![acc], Op::SumAll(x), needs)
    }

    pub fn mean_all(&mut self, x: TensorId) -> TensorId {
        let numel = self.shape(x).numel().max(1);
        let mut acc = T::zero();
        for &v in &self.nodes[x.0].data {
            acc = acc + v;
        }
        let needs = self.needs(x);
        self.push(
            Shape::scalar(),
            vec![acc / T::from_f64(numel as f64)],
            Op::MeanAll(x),
            needs,
        )
    }

    /// Scalar node with value `value` and precomputed gradient `dx` with
    /// respect to `x`. The loss functions use this to attach exact
    /// analytic gradients.
    pub fn scalar_fn(
        &mut self,
        x: TensorId,
        value: T,
        dx: Vec<T>,
    ) -> Result<TensorId, TensorError> {
        if dx.len() != self.shape(x).numel() {
            return Err(bad_arg(
                "scalar_fn",
                format!(
                    "gradient length {} does not match input numel {}",
                    dx.len(),
                    self.shape(x).numel()
                ),
            ));
        }
        let needs = self.needs(x);
        Ok(self.push(Shape::scalar(), vec![value], Op::ScalarFn { x, dx }, needs))
    }

    // ── backward ─────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Does not mutate the tape, so
    /// calling it twice yields identical gradients.
    pub fn backward(&mut self, loss: TensorId) -> Result<Gradients<T>, TensorError> {
        let ls = self.shape(loss);
        if ls.numel() != 1 {
            return Err(TensorError::NonScalarLoss { shape: ls });
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            if grads[i].is_none() || !self.nodes[i].needs_grad {
                continue;
            }
            let g = grads[i].take().expect("grad present");
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { by_node: grads })
    }

    fn accumulate(grads: &mut [Option<Vec<T>>], id: TensorId, numel: usize, add: impl Fn(&mut [T])) {
        let slot = grads[id.0].get_or_insert_with(|| vec![T::zero(); numel]);
        add(slot);
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut Vec<Option<Vec<T>>>) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.bcast_binary_backward(*a, *b, node.shape, g, grads, |ga, gv| *ga = *ga + gv, |gb, gv| {
                    *gb = *gb + gv
                });
            }
            Op::Sub(a, b) => {
                self.bcast_binary_backward(*a, *b, node.shape, g, grads, |ga, gv| *ga = *ga + gv, |gb, gv| {
                    *gb = *gb - gv
                });
            }
            Op::Mul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let out = node.shape;
                let stra = broadcast_strides(sa, out);
                let strb = broadcast_strides(sb, out);
                let da = &self.nodes[a.0].data;
                let db = &self.nodes[b.0].data;
                if self.needs(*a) {
                    Self::accumulate(grads, *a, sa.numel(), |ga| {
                        let mut idx = 0;
                        for n in 0..out.n {
                            for c in 0..out.c {
                                for h in 0..out.h {
                                    for w in 0..out.w {
                                        let ia = n * stra[0] + c * stra[1] + h * stra[2] + w * stra[3];
                                        let ib = n * strb[0] + c * strb[1] + h * strb[2] + w * strb[3];
                                        ga[ia] = ga[ia] + g[idx] * db[ib];
                                        idx += 1;
                                    }
                                }
                            }
                        }
                    });
                }
                if self.needs(*b) {
                    Self::accumulate(grads, *b, sb.numel(), |gb| {
                        let mut idx = 0;
                        for n in 0..out.n {
                            for c in 0..out.c {
                                for h in 0..out.h {
                                    for w in 0..out.w {
                                        let ia = n * stra[0] + c * stra[1] + h * stra[2] + w * stra[3];
                                        let ib = n * strb[0] + c * strb[1] + h * strb[2] + w * strb[3];
                                        gb[ib] = gb[ib] + g[idx] * da[ia];
                                        idx += 1;
                                    }
                                }
                            }
                        }
                    });
                }
            }
            Op::EltMax(a, b) => {
                let da = &self.nodes[a.0].data;
                let db = &self.nodes[b.0].data;
                if self.needs(*a) {
                    Self::accumulate(grads, *a, da.len(), |ga| {
                        for (i, gv) in g.iter().enumerate() {
                            if da[i] >= db[i] {
                                ga[i] = ga[i] + *gv;
                            }
                        }
                    });
                }
                if self.needs(*b) {
                    Self::accumulate(grads, *b, db.len(), |gb| {
                        for (i, gv) in g.iter().enumerate() {
                            if da[i] < db[i] {
                                gb[i] = gb[i] + *gv;
                            }
                        }
                    });
                }
            }
            Op::Scale(a, k) => {
                if self.needs(*a) {
                    let k = *k;
                    Self::accumulate(grads, *a, g.len(), |ga| {
                        for (ga, gv) in ga.iter_mut().zip(g) {
                            *ga = *ga + *gv * k;
                        }
                    });
                }
            }
            Op::Elu(a) => {
                if self.needs(*a) {
                    let y = &node.data;
                    Self::accumulate(grads, *a, y.len(), |ga| {
                        for i in 0..y.len() {
                            // slope is 1 on the positive side, y + 1 = e^x otherwise
                            let slope = if y[i] > T::zero() { T::one() } else { y[i] + T::one() };
                            ga[i] = ga[i] + g[i] * slope;
                        }
                    });
                }
            }
            Op::Sigmoid(a) => {
                if self.needs(*a) {
                    let y = &node.data;
                    Self::accumulate(grads, *a, y.len(), |ga| {
                        for i in 0..y.len() {
                            ga[i] = ga[i] + g[i] * y[i] * (T::one() - y[i]);
                        }
                    });
                }
            }
            Op::Conv2d {
                x,
                w,
                bias,
                stride,
                padding,
            } => self.conv2d_backward(*x, *w, *bias, *stride, *padding, node.shape, g, grads),
            Op::MaxPool2x2 { x, argmax } => {
                if self.needs(*x) {
                    let numel = self.shape(*x).numel();
                    Self::accumulate(grads, *x, numel, |gx| {
                        for (o, &src) in argmax.iter().enumerate() {
                            gx[src as usize] = gx[src as usize] + g[o];
                        }
                    });
                }
            }
            Op::GlobalAvgPool(x) => {
                if self.needs(*x) {
                    let s = self.shape(*x);
                    let hw = s.h * s.w;
                    let inv = T::one() / T::from_f64(hw as f64);
                    Self::accumulate(grads, *x, s.numel(), |gx| {
                        for (i, &gv) in g.iter().enumerate() {
                            let base = i * hw;
                            let add = gv * inv;
                            for slot in &mut gx[base..base + hw] {
                                *slot = *slot + add;
                            }
                        }
                    });
                }
            }
            Op::UpsampleBilinear2x(x) => {
                if self.needs(*x) {
                    let s = self.shape(*x);
                    let ytab = bilinear_axis_2x::<T>(s.h);
                    let xtab = bilinear_axis_2x::<T>(s.w);
                    Self::accumulate(grads, *x, s.numel(), |gx| {
                        let one = T::one();
                        let mut o = 0;
                        for plane in 0..s.n * s.c {
                            let base = plane * s.h * s.w;
                            for &(y0, y1, wy) in &ytab {
                                for &(x0, x1, wx) in &xtab {
                                    let gv = g[o];
                                    o += 1;
                                    gx[base + y0 * s.w + x0] =
                                        gx[base + y0 * s.w + x0] + gv * (one - wy) * (one - wx);
                                    gx[base + y0 * s.w + x1] =
                                        gx[base + y0 * s.w + x1] + gv * (one - wy) * wx;
                                    gx[base + y1 * s.w + x0] =
                                        gx[base + y1 * s.w + x0] + gv * wy * (one - wx);
                                    gx[base + y1 * s.w + x1] =
                                        gx[base + y1 * s.w + x1] + gv * wy * wx;
                                }
                            }
                        }
                    });
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                saved,
            } => self.batchnorm_backward(*x, *gamma, *beta, saved, node.shape, g, grads),
            Op::ConcatChannels(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let hw = sa.h * sa.w;
                let out_c = sa.c + sb.c;
                if self.needs(*a) {
                    Self::accumulate(grads, *a, sa.numel(), |ga| {
                        for n in 0..sa.n {
                            let src = n * out_c * hw;
                            let dst = n * sa.c * hw;
                            for i in 0..sa.c * hw {
                                ga[dst + i] = ga[dst + i] + g[src + i];
                            }
                        }
                    });
                }
                if self.needs(*b) {
                    Self::accumulate(grads, *b, sb.numel(), |gb| {
                        for n in 0..sb.n {
                            let src = n * out_c * hw + sa.c * hw;
                            let dst = n * sb.c * hw;
                            for i in 0..sb.c * hw {
                                gb[dst + i] = gb[dst + i] + g[src + i];
                            }
                        }
                    });
                }
            }
            Op::SoftmaxChannels(x) => {
                if self.needs(*x) {
                    let s = node.shape;
                    let y = &node.data;
                    let hw = s.h * s.w;
                    Self::accumulate(grads, *x, s.numel(), |gx| {
                        for n in 0..s.n {
                            for p in 0..hw {
                                let mut dot = T::zero();
                                for c in 0..s.c {
                                    let i = (n * s.c + c) * hw + p;
                                    dot = dot + g[i] * y[i];
                                }
                                for c in 0..s.c {
                                    let i = (n * s.c + c) * hw + p;
                                    gx[i] = gx[i] + y[i] * (g[i] - dot);
                                }
                            }
                        }
                    });
                }
            }
            Op::SumAll(x) => {
                if self.needs(*x) {
                    let numel = self.shape(*x).numel();
                    let gv = g[0];
                    Self::accumulate(grads, *x, numel, |gx| {
                        for slot in gx.iter_mut() {
                            *slot = *slot + gv;
                        }
                    });
                }
            }
            Op::MeanAll(x) => {
                if self.needs(*x) {
                    let numel = self.shape(*x).numel();
                    let gv = g[0] / T::from_f64(numel.max(1) as f64);
                    Self::accumulate(grads, *x, numel, |gx| {
                        for slot in gx.iter_mut() {
                            *slot = *slot + gv;
                        }
                    });
                }
            }
            Op::ScalarFn { x, dx } => {
                if self.needs(*x) {
                    let gv = g[0];
                    Self::accumulate(grads, *x, dx.len(), |gx| {
                        for (slot, &d) in gx.iter_mut().zip(dx) {
                            *slot = *slot + gv * d;
                        }
                    });
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn bcast_binary_backward(
        &self,
        a: TensorId,
        b: TensorId,
        out: Shape,
        g: &[T],
        grads: &mut [Option<Vec<T>>],
        fa: impl Fn(&mut T, T),
        fb: impl Fn(&mut T, T),
    ) {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let stra = broadcast_strides(sa, out);
        let strb = broadcast_strides(sb, out);
        if self.needs(a) {
            Self::accumulate(grads, a, sa.numel(), |ga| {
                let mut idx = 0;
                for n in 0..out.n {
                    for c in 0..out.c {
                        for h in 0..out.h {
                            for w in 0..out.w {
                                let ia = n * stra[0] + c * stra[1] + h * stra[2] + w * stra[3];
                                fa(&mut ga[ia], g[idx]);
                                idx += 1;
                            }
                        }
                    }
                }
            });
        }
        if self.needs(b) {
            Self::accumulate(grads, b, sb.numel(), |gb| {
                let mut idx = 0;
                for n in 0..out.n {
                    for c in 0..out.c {
                        for h in 0..out.h {
                            for w in 0..out.w {
                                let ib = n * strb[0] + c * strb[1] + h * strb[2] + w * strb[3];
                                fb(&mut gb[ib], g[idx]);
                                idx += 1;
                            }
                        }
                    }
                }
            });
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn conv2d_backward(
        &self,
        x: TensorId,
        w: TensorId,
        bias: Option<TensorId>,
        stride: usize,
        padding: usize,
        out_shape: Shape,
        g: &[T],
        grads: &mut [Option<Vec<T>>],
    ) {
        let sx = self.shape(x);
        let sw = self.shape(w);
        let k = sw.h;
        let (oh, ow) = (out_shape.h, out_shape.w);
        let ikk = sx.c * k * k;
        let hw_out = oh * ow;
        let plane = sx.h * sx.w;
        let need_x = self.needs(x);
        let need_w = self.needs(w);

        if need_w {
            let mut dw = vec![T::zero(); sw.numel()];
            let mut cols = vec![T::zero(); ikk * hw_out];
            for n in 0..sx.n {
                let xn = &self.nodes[x.0].data[n * sx.c * plane..(n + 1) * sx.c * plane];
                im2col(xn, sx.c, sx.h, sx.w, k, stride, padding, oh, ow, &mut cols);
                let gy = &g[n * sw.n * hw_out..(n + 1) * sw.n * hw_out];
                // dW(O x IKK) += gy(O x HW) @ cols(IKK x HW)^T
                T::gemm(
                    sw.n,
                    hw_out,
                    ikk,
                    T::one(),
                    gy,
                    hw_out as isize,
                    1,
                    &cols,
                    1,
                    hw_out as isize,
                    T::one(),
                    &mut dw,
                    ikk as isize,
                    1,
                );
            }
            Self::accumulate(grads, w, sw.numel(), |gw| {
                for (slot, &d) in gw.iter_mut().zip(&dw) {
                    *slot = *slot + d;
                }
            });
        }

        if need_x {
            let mut dx = vec![T::zero(); sx.numel()];
            let mut dcols = vec![T::zero(); ikk * hw_out];
            for n in 0..sx.n {
                let gy = &g[n * sw.n * hw_out..(n + 1) * sw.n * hw_out];
                // dcols(IKK x HW) = W(O x IKK)^T @ gy(O x HW)
                T::gemm(
                    ikk,
                    sw.n,
                    hw_out,
                    T::one(),
                    &self.nodes[w.0].data,
                    1,
                    ikk as isize,
                    gy,
                    hw_out as isize,
                    1,
                    T::zero(),
                    &mut dcols,
                    hw_out as isize,
                    1,
                );
                col2im_add(
                    &dcols,
                    sx.c,
                    sx.h,
                    sx.w,
                    k,
                    stride,
                    padding,
                    oh,
                    ow,
                    &mut dx[n * sx.c * plane..(n + 1) * sx.c * plane],
                );
            }
            Self::accumulate(grads, x, sx.numel(), |gx| {
                for (slot, &d) in gx.iter_mut().zip(&dx) {
                    *slot = *slot + d;
                }
            });
        }

        if let Some(b) = bias {
            if self.needs(b) {
                let mut db = vec![T::zero(); sw.n];
                for n in 0..sx.n {
                    for c in 0..sw.n {
                        let base = (n * sw.n + c) * hw_out;
                        for &gv in &g[base..base + hw_out] {
                            db[c] = db[c] + gv;
                        }
                    }
                }
                Self::accumulate(grads, b, sw.n, |gb| {
                    for (slot, &d) in gb.iter_mut().zip(&db) {
                        *slot = *slot + d;
                    }
                });
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn batchnorm_backward(
        &self,
        x: TensorId,
        gamma: TensorId,
        beta: TensorId,
        saved: &BnSaved<T>,
        shape: Shape,
        g: &[T],
        grads: &mut [Option<Vec<T>>],
    ) {
        let s = shape;
        let hw = s.h * s.w;
        let m = s.n * hw;
        let mf = T::from_f64(m as f64);
        let xd = &self.nodes[x.0].data;
        let gd = &self.nodes[gamma.0].data;

        // per-channel sums shared by all three gradients
        let mut sum_g = vec![T::zero(); s.c];
        let mut sum_g_xhat = vec![T::zero(); s.c];
        for n in 0..s.n {
            for c in 0..s.c {
                let base = (n * s.c + c) * hw;
                let (mu, is) = (saved.mean[c], saved.invstd[c]);
                for i in base..base + hw {
                    let xhat = (xd[i] - mu) * is;
                    sum_g[c] = sum_g[c] + g[i];
                    sum_g_xhat[c] = sum_g_xhat[c] + g[i] * xhat;
                }
            }
        }

        if self.needs(gamma) {
            Self::accumulate(grads, gamma, s.c, |gg| {
                for c in 0..s.c {
                    gg[c] = gg[c] + sum_g_xhat[c];
                }
            });
        }
        if self.needs(beta) {
            Self::accumulate(grads, beta, s.c, |gb| {
                for c in 0..s.c {
                    gb[c] = gb[c] + sum_g[c];
                }
            });
        }
        if self.needs(x) {
            Self::accumulate(grads, x, s.numel(), |gx| {
                for n in 0..s.n {
                    for c in 0..s.c {
                        let base = (n * s.c + c) * hw;
                        let (mu, is, gc) = (saved.mean[c], saved.invstd[c], gd[c]);
                        if saved.train {
                            let k = gc * is / mf;
                            for i in base..base + hw {
                                let xhat = (xd[i] - mu) * is;
                                gx[i] = gx[i] + k * (mf * g[i] - sum_g[c] - xhat * sum_g_xhat[c]);
                            }
                        } else {
                            // running stats are constants in eval mode
                            for i in base..base + hw {
                                gx[i] = gx[i] + g[i] * gc * is;
                            }
                        }
                    }
                }
            });
        }
    }
}

fn broadcast_shape(op: &'static str, a: Shape, b: Shape) -> Result<Shape, TensorError> {
    let mut out = [0usize; 4];
    let da = a.dims();
    let db = b.dims();
    for i in 0..4 {
        out[i] = if da[i] == db[i] {
            da[i]
        } else if da[i] == 1 {
            db[i]
        } else if db[i] == 1 {
            da[i]
        } else {
            return Err(TensorError::ShapeMismatch { op, lhs: a, rhs: b });
        };
    }
    Ok(Shape::new(out[0], out[1], out[2], out[3]))
}

/// Strides of `s` viewed at broadcast shape `out` (0 on broadcast axes).
fn broadcast_strides(s: Shape, out: Shape) -> [usize; 4] {
    let d = s.dims();
    let natural = [d[1] * d[2] * d[3], d[2] * d[3], d[3], 1];
    let o = out.dims();
    let mut strides = [0usize; 4];
    for i in 0..4 {
        strides[i] = if d[i] == o[i] && d[i] != 1 {
            natural[i]
        } else if d[i] == 1 {
            0
        } else {
            natural[i]
        };
    }
    strides
}

/// (lo, hi, weight of hi) per output coordinate for a x2 bilinear
/// upsample with the half-pixel convention.
fn bilinear_axis_2x<T: Elem>(in_len: usize) -> Vec<(usize, usize, T)> {
    let mut tab = Vec::with_capacity(in_len * 2);
    for o in 0..in_len * 2 {
        let src = (o as f64 + 0.5) / 2.0 - 0.5;
        let floor = src.floor();
        let frac = src - floor;
        let lo = floor.max(0.0) as usize;
        let hi = if floor < 0.0 {
            0
        } else {
            (floor as usize + 1).min(in_len - 1)
        };
        let w = if floor < 0.0 { T::zero() } else { T::from_f64(frac) };
        tab.push((lo.min(in_len - 1), hi, w));
    }
    tab
}

#[allow(clippy::too_many_arguments)]
fn im2col<T: Elem>(
    x: &[T],
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    cols: &mut [T],
) {
    debug_assert_eq!(cols.len(), cin * k * k * oh * ow);
    let mut row = 0;
    for ic in 0..cin {
        let src_plane = &x[ic * h * w..(ic + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let dst = &mut cols[row * oh * ow..(row + 1) * oh * ow];
                row += 1;
                let mut o = 0;
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        for slot in &mut dst[o..o + ow] {
                            *slot = T::zero();
                        }
                        o += ow;
                        continue;
                    }
                    let src_row = &src_plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..ow {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        dst[o] = if ix < 0 || ix >= w as isize {
                            T::zero()
                        } else {
                            src_row[ix as usize]
                        };
                        o += 1;
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn col2im_add<T: Elem>(
    cols: &[T],
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    x: &mut [T],
) {
    let mut row = 0;
    for ic in 0..cin {
        let dst_plane = &mut x[ic * h * w..(ic + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let src = &cols[row * oh * ow..(row + 1) * oh * ow];
                row += 1;
                let mut o = 0;
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        o += ow;
                        continue;
                    }
                    let base = iy as usize * w;
                    for ox in 0..ow {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            let idx = base + ix as usize;
                            dst_plane[idx] = dst_plane[idx] + src[o];
                        }
                        o += 1;
                    }
                }
            }
        }
    }
}
