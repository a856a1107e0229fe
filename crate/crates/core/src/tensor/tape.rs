use super::gemm::{gemm, MatRef};
use super::kernels::{self, ConvGeom};
use super::{numel, Element, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

/// Elementwise operation kinds. Binary kinds accept same-shaped operands or
/// a rank-0 scalar on either side; nothing else broadcasts.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Elementwise {
    Add,
    Sub,
    Mul,
    /// Gradient goes to the first argument on exact ties.
    Max,
    Tanh,
    /// Tanh approximation: `0.5·x·(1 + tanh(√(2/π)·(x + 0.044715·x³)))`.
    Gelu,
    Relu,
    LeakyRelu(f64),
    Square,
    Abs,
}

impl Elementwise {
    pub fn is_binary(self) -> bool {
        matches!(self, Self::Add | Self::Sub | Self::Mul | Self::Max)
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

#[derive(Debug)]
enum Op {
    Leaf,
    Unary(Elementwise, Var),
    Binary(Elementwise, Var, Var),
    AddScalar(Var),
    MulScalar(Var, f64),
    MatMul { a: Var, b: Var, trans_b: bool },
    Conv2d { x: Var, w: Var, bias: Option<Var>, geom: ConvGeom },
    Depthwise { x: Var, w: Var, k: usize },
    Softmax { x: Var, axis: usize },
    Concat { parts: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
    Reshape(Var),
    Transpose(Var),
    Sum(Var),
    Mean(Var),
    ScaleAxis { x: Var, v: Var, axis: usize },
    ChannelNorm { x: Var, w: Var },
    L2Normalize(Var),
    Upsample2(Var),
    Pad2d { x: Var, pad: usize },
}

struct Node<F: Element> {
    value: Tensor<F>,
    op: Op,
    requires_grad: bool,
}

/// Define-by-run computation graph. Nodes are appended in creation order,
/// so reverse creation order is a valid topological order for backward.
///
/// Leaf gradients persist across [`Tape::backward`] calls and accumulate
/// until [`Tape::zero_grads`]; intermediate gradients are freed per pass.
pub struct Tape<F: Element = f32> {
    nodes: Vec<Node<F>>,
    leaf_grads: Vec<Option<Vec<F>>>,
}

impl<F: Element> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

const NORM_EPS: f64 = 1e-5;
const L2_EPS: f64 = 1e-12;

fn mismatch(msg: String) -> Error {
    Error::ShapeMismatch(msg)
}

impl<F: Element> Tape<F> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            leaf_grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<F>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.leaf_grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor<F>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        self.leaf(value, false)
    }

    pub fn param(&mut self, value: Tensor<F>) -> Var {
        self.leaf(value, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Accumulated gradient of a leaf, if backward reached it.
    pub fn grad(&self, v: Var) -> Option<Tensor<F>> {
        self.leaf_grads[v.0]
            .as_ref()
            .map(|g| Tensor::from_parts(self.nodes[v.0].value.shape().to_vec(), g.clone()))
    }

    pub fn zero_grads(&mut self) {
        self.leaf_grads.iter_mut().for_each(|g| *g = None);
    }

    // ---- elementwise -------------------------------------------------

    pub fn elementwise(&mut self, kind: Elementwise, a: Var, b: Option<Var>) -> Result<Var> {
        match (kind.is_binary(), b) {
            (true, Some(b)) => self.binary(kind, a, b),
            (false, None) => Ok(self.unary(kind, a)),
            (true, None) => Err(mismatch(format!("{kind:?} needs two operands"))),
            (false, Some(_)) => Err(mismatch(format!("{kind:?} takes one operand"))),
        }
    }

    fn unary(&mut self, kind: Elementwise, x: Var) -> Var {
        let xv = self.value(x);
        let out = match kind {
            Elementwise::Tanh => xv.map(|v| v.tanh_act()),
            Elementwise::Gelu => xv.map(|v| {
                let (c, a) = (F::of(GELU_C), F::of(GELU_A));
                let half = F::of(0.5);
                half * v * (F::one() + (c * (v + a * v * v * v)).tanh_act())
            }),
            Elementwise::Relu => xv.map(|v| v.max(F::zero())),
            Elementwise::LeakyRelu(s) => {
                let s = F::of(s);
                xv.map(|v| if v > F::zero() { v } else { s * v })
            }
            Elementwise::Square => xv.map(|v| v * v),
            Elementwise::Abs => xv.map(|v| v.abs()),
            _ => unreachable!("binary kind in unary"),
        };
        let rg = self.rg(x);
        self.push(out, Op::Unary(kind, x), rg)
    }

    fn binary(&mut self, kind: Elementwise, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let f = |x: F, y: F| match kind {
            Elementwise::Add => x + y,
            Elementwise::Sub => x - y,
            Elementwise::Mul => x * y,
            Elementwise::Max => {
                if x >= y {
                    x
                } else {
                    y
                }
            }
            _ => unreachable!(),
        };
        let out = if av.shape() == bv.shape() {
            let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
            Tensor::from_parts(av.shape().to_vec(), data)
        } else if bv.rank() == 0 {
            let s = bv.data()[0];
            av.map(|x| f(x, s))
        } else if av.rank() == 0 {
            let s = av.data()[0];
            bv.map(|y| f(s, y))
        } else {
            return Err(mismatch(format!(
                "{kind:?} of {:?} and {:?}",
                av.shape(),
                bv.shape()
            )));
        };
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Binary(kind, a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Elementwise::Add, a, b)
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Elementwise::Sub, a, b)
    }
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Elementwise::Mul, a, b)
    }
    pub fn maximum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Elementwise::Max, a, b)
    }
    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(Elementwise::Tanh, x)
    }
    pub fn gelu(&mut self, x: Var) -> Var {
        self.unary(Elementwise::Gelu, x)
    }
    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(Elementwise::Relu, x)
    }
    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        self.unary(Elementwise::LeakyRelu(slope), x)
    }
    pub fn square(&mut self, x: Var) -> Var {
        self.unary(Elementwise::Square, x)
    }
    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(Elementwise::Abs, x)
    }

    pub fn add_scalar(&mut self, x: Var, s: f64) -> Var {
        let s = F::of(s);
        let out = self.value(x).map(|v| v + s);
        let rg = self.rg(x);
        self.push(out, Op::AddScalar(x), rg)
    }

    pub fn mul_scalar(&mut self, x: Var, s: f64) -> Var {
        let sf = F::of(s);
        let out = self.value(x).map(|v| v * sf);
        let rg = self.rg(x);
        self.push(out, Op::MulScalar(x, s), rg)
    }

    // ---- linear algebra ----------------------------------------------

    /// Batched `a · b` over identical leading extents.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// Batched `a · bᵀ` (transpose of the last two axes of `b`).
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (sa, sb) = (av.shape(), bv.shape());
        if sa.len() < 2 || sa.len() != sb.len() || sa[..sa.len() - 2] != sb[..sb.len() - 2] {
            return Err(mismatch(format!("matmul of {sa:?} and {sb:?}")));
        }
        let r = sa.len();
        let (m, k) = (sa[r - 2], sa[r - 1]);
        let (kb, n) = if trans_b {
            (sb[r - 1], sb[r - 2])
        } else {
            (sb[r - 2], sb[r - 1])
        };
        if k != kb {
            return Err(mismatch(format!(
                "matmul inner extents {k} vs {kb} ({sa:?}, {sb:?}, trans_b={trans_b})"
            )));
        }
        let batch = numel(&sa[..r - 2]);
        let mut out = vec![F::zero(); batch * m * n];
        for i in 0..batch {
            let am = MatRef::new(&av.data()[i * m * k..(i + 1) * m * k], m, k);
            let bd = &bv.data()[i * k * n..(i + 1) * k * n];
            let bm = if trans_b { MatRef::t(bd, n, k) } else { MatRef::new(bd, k, n) };
            gemm(am, bm, &mut out[i * m * n..(i + 1) * m * n], false);
        }
        let mut shape = sa[..r - 2].to_vec();
        shape.extend([m, n]);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::from_parts(shape, out), Op::MatMul { a, b, trans_b }, rg))
    }

    /// 2-D cross-correlation of `x: [B, Cin, H, W]` with `w: [Cout, Cin, kh, kw]`.
    pub fn conv2d(&mut self, x: Var, w: Var, bias: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let [b, cin, h, wd] = self.value(x).dims4("conv2d input")?;
        let [cout, wcin, kh, kw] = self.value(w).dims4("conv2d weight")?;
        if wcin != cin {
            return Err(mismatch(format!(
                "conv2d weight expects {wcin} input channels, got {cin}"
            )));
        }
        if stride == 0 {
            return Err(mismatch("conv2d stride must be positive".into()));
        }
        if let Some(bias) = bias {
            if self.shape(bias) != [cout] {
                return Err(mismatch(format!(
                    "conv2d bias shape {:?}, expected [{cout}]",
                    self.shape(bias)
                )));
            }
        }
        let (hp, wp) = (h + 2 * pad, wd + 2 * pad);
        if hp < kh || wp < kw {
            return Err(Error::EmptyOutput(format!(
                "{h}x{wd} input with padding {pad} is smaller than {kh}x{kw} kernel"
            )));
        }
        let geom = ConvGeom {
            batch: b,
            cin,
            h,
            w: wd,
            cout,
            kh,
            kw,
            stride,
            pad,
            ho: (hp - kh) / stride + 1,
            wo: (wp - kw) / stride + 1,
        };
        let out = kernels::conv2d_forward(
            self.value(x).data(),
            self.value(w).data(),
            bias.map(|bv| self.value(bv).data()),
            &geom,
        );
        let rg = self.rg(x) || self.rg(w) || bias.is_some_and(|bv| self.rg(bv));
        let t = Tensor::from_parts(vec![b, cout, geom.ho, geom.wo], out);
        Ok(self.push(t, Op::Conv2d { x, w, bias, geom }, rg))
    }

    /// Per-channel `k×k` correlation (stride 1, same padding) with
    /// `w: [C, 1, k, k]`, `k` odd.
    pub fn depthwise_conv2d(&mut self, x: Var, w: Var) -> Result<Var> {
        let dims = self.value(x).dims4("depthwise input")?;
        let [c, one, k, k2] = self.value(w).dims4("depthwise weight")?;
        if c != dims[1] || one != 1 || k != k2 || k % 2 == 0 {
            return Err(mismatch(format!(
                "depthwise weight {:?} for input {:?}",
                self.shape(w),
                dims
            )));
        }
        let out = kernels::depthwise_forward(self.value(x).data(), self.value(w).data(), dims, k);
        let rg = self.rg(x) || self.rg(w);
        Ok(self.push(Tensor::from_parts(dims.to_vec(), out), Op::Depthwise { x, w, k }, rg))
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(mismatch(format!("softmax axis {axis} for shape {shape:?}")));
        }
        let out = kernels::softmax_forward(self.value(x).data(), &shape, axis);
        let rg = self.rg(x);
        Ok(self.push(Tensor::from_parts(shape, out), Op::Softmax { x, axis }, rg))
    }

    // ---- structural --------------------------------------------------

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| mismatch("concat of zero tensors".into()))?;
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(mismatch(format!("concat axis {axis} for shape {base:?}")));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let ok = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(mismatch(format!("concat {base:?} with {s:?} on axis {axis}")));
            }
            total += s[axis];
        }
        let (outer, _, inner) = kernels::split_axis(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let len = self.shape(p)[axis] * inner;
                out.extend_from_slice(&self.value(p).data()[o * len..(o + 1) * len]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            rg,
        ))
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(mismatch(format!(
                "slice [{start}, {}) on axis {axis} of {shape:?}",
                start + len
            )));
        }
        let (outer, full, inner) = kernels::split_axis(&shape, axis);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let at = (o * full + start) * inner;
            out.extend_from_slice(&src[at..at + len * inner]);
        }
        let mut oshape = shape;
        oshape[axis] = len;
        let rg = self.rg(x);
        Ok(self.push(Tensor::from_parts(oshape, out), Op::Slice { x, axis, start }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let t = self.value(x).reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::Reshape(x), rg))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let r = shape.len();
        if r < 2 {
            return Err(mismatch(format!("transpose needs rank >= 2, got {shape:?}")));
        }
        let out = transpose_last2(self.value(x).data(), &shape);
        let mut oshape = shape;
        oshape.swap(r - 2, r - 1);
        let rg = self.rg(x);
        Ok(self.push(Tensor::from_parts(oshape, out), Op::Transpose(x), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let mut s = F::zero();
        for &v in self.value(x).data() {
            s += v;
        }
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let mut s = F::zero();
        for &v in self.value(x).data() {
            s += v;
        }
        let n = F::of(self.value(x).numel() as f64);
        let rg = self.rg(x);
        self.push(Tensor::scalar(s / n), Op::Mean(x), rg)
    }

    /// Multiplies `x` by the rank-1 `v` broadcast along `axis`.
    pub fn scale_axis(&mut self, x: Var, v: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || self.shape(v) != [shape[axis]] {
            return Err(mismatch(format!(
                "scale_axis of {shape:?} by {:?} on axis {axis}",
                self.shape(v)
            )));
        }
        let (outer, len, inner) = kernels::split_axis(&shape, axis);
        let (xd, vd) = (self.value(x).data(), self.value(v).data());
        let mut out = vec![F::zero(); xd.len()];
        for o in 0..outer {
            for j in 0..len {
                let at = (o * len + j) * inner;
                for i in 0..inner {
                    out[at + i] = xd[at + i] * vd[j];
                }
            }
        }
        let rg = self.rg(x) || self.rg(v);
        Ok(self.push(Tensor::from_parts(shape, out), Op::ScaleAxis { x, v, axis }, rg))
    }

    /// Bias-free layer norm over the channel axis of `[B, C, H, W]`.
    pub fn channel_norm(&mut self, x: Var, w: Var) -> Result<Var> {
        let dims = self.value(x).dims4("channel_norm input")?;
        if self.shape(w) != [dims[1]] {
            return Err(mismatch(format!(
                "channel_norm weight {:?} for {dims:?}",
                self.shape(w)
            )));
        }
        let out = kernels::channel_norm_forward(
            self.value(x).data(),
            self.value(w).data(),
            dims,
            F::of(NORM_EPS),
        );
        let rg = self.rg(x) || self.rg(w);
        Ok(self.push(Tensor::from_parts(dims.to_vec(), out), Op::ChannelNorm { x, w }, rg))
    }

    /// L2-normalizes along the last axis.
    pub fn l2_normalize(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let row = *shape
            .last()
            .ok_or_else(|| mismatch("l2_normalize of a rank-0 tensor".into()))?;
        let out = kernels::l2_normalize_forward(self.value(x).data(), row, F::of(L2_EPS));
        let rg = self.rg(x);
        Ok(self.push(Tensor::from_parts(shape, out), Op::L2Normalize(x), rg))
    }

    /// Nearest-neighbour ×2 upsampling of `[B, C, H, W]`.
    pub fn upsample2(&mut self, x: Var) -> Result<Var> {
        let dims = self.value(x).dims4("upsample input")?;
        let out = kernels::upsample2_forward(self.value(x).data(), dims);
        let rg = self.rg(x);
        let shape = vec![dims[0], dims[1], 2 * dims[2], 2 * dims[3]];
        Ok(self.push(Tensor::from_parts(shape, out), Op::Upsample2(x), rg))
    }

    /// Zero-pads the last two axes by `pad` on each side.
    pub fn pad2d(&mut self, x: Var, pad: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let r = shape.len();
        if r < 2 {
            return Err(mismatch(format!("pad2d needs rank >= 2, got {shape:?}")));
        }
        let (h, w) = (shape[r - 2], shape[r - 1]);
        let planes = numel(&shape[..r - 2]);
        let out = kernels::pad2d_forward(self.value(x).data(), planes, h, w, pad);
        let mut oshape = shape;
        oshape[r - 2] += 2 * pad;
        oshape[r - 1] += 2 * pad;
        let rg = self.rg(x);
        Ok(self.push(Tensor::from_parts(oshape, out), Op::Pad2d { x, pad }, rg))
    }

    /// Removes `pad` rows and columns from each border of the last two axes.
    pub fn crop2d(&mut self, x: Var, pad: usize) -> Result<Var> {
        let r = self.shape(x).len();
        if r < 2 {
            return Err(mismatch("crop2d needs rank >= 2".into()));
        }
        let (h, w) = (self.shape(x)[r - 2], self.shape(x)[r - 1]);
        if 2 * pad >= h || 2 * pad >= w {
            return Err(mismatch(format!("crop {pad} from {h}x{w}")));
        }
        let rows = self.slice(x, r - 2, pad, h - 2 * pad)?;
        self.slice(rows, r - 1, pad, w - 2 * pad)
    }

    /// Fingerprint of every piecewise branch taken so far (max selections
    /// and the signs seen by relu, leaky relu and abs). Two evaluations of
    /// the same graph with equal fingerprints lie on the same smooth piece.
    pub fn branch_fingerprint(&self) -> u64 {
        let mut h = 0x9e37_79b9_7f4a_7c15u64;
        let mut fold = |bit: bool| h = crate::rng::mix(h ^ bit as u64);
        for node in &self.nodes {
            match &node.op {
                Op::Unary(Elementwise::Relu | Elementwise::LeakyRelu(_) | Elementwise::Abs, x) => {
                    self.value(*x).data().iter().for_each(|&v| fold(v > F::zero()));
                }
                Op::Binary(Elementwise::Max, a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let n = node.value.numel();
                    let at = |t: &Tensor<F>, j: usize| if t.numel() == n { t.data()[j] } else { t.data()[0] };
                    (0..n).for_each(|j| fold(at(av, j) >= at(bv, j)));
                }
                _ => {}
            }
        }
        h
    }

    // ---- backward ----------------------------------------------------

    /// Reverse-mode sweep from a scalar `loss`, accumulating into leaf grads.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::NotScalar(lv.shape().to_vec()));
        }
        if !self.rg(loss) {
            return Err(Error::NoGradient);
        }
        let mut grads: Vec<Option<Vec<F>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![F::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[i].op {
                accumulate(&mut self.leaf_grads[i], g);
                continue;
            }
            self.backprop_node(i, &g, &mut grads);
        }
        Ok(())
    }

    fn backprop_node(&self, i: usize, g: &[F], grads: &mut [Option<Vec<F>>]) {
        let node = &self.nodes[i];
        let mut send = |v: Var, contrib: Vec<F>| {
            if self.rg(v) {
                accumulate(&mut grads[v.0], contrib);
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Unary(kind, x) => {
                let xv = self.value(*x).data();
                let y = node.value.data();
                let dx: Vec<F> = match kind {
                    Elementwise::Tanh => y.iter().zip(g).map(|(&t, &gv)| gv * (F::one() - t * t)).collect(),
                    Elementwise::Gelu => xv
                        .iter()
                        .zip(g)
                        .map(|(&v, &gv)| {
                            let (c, a, half) = (F::of(GELU_C), F::of(GELU_A), F::of(0.5));
                            let t = (c * (v + a * v * v * v)).tanh_act();
                            let dinner = c * (F::one() + F::of(3.0) * a * v * v);
                            gv * (half * (F::one() + t) + half * v * (F::one() - t * t) * dinner)
                        })
                        .collect(),
                    Elementwise::Relu => xv
                        .iter()
                        .zip(g)
                        .map(|(&v, &gv)| if v > F::zero() { gv } else { F::zero() })
                        .collect(),
                    Elementwise::LeakyRelu(s) => {
                        let s = F::of(*s);
                        xv.iter()
                            .zip(g)
                            .map(|(&v, &gv)| if v > F::zero() { gv } else { s * gv })
                            .collect()
                    }
                    Elementwise::Square => xv.iter().zip(g).map(|(&v, &gv)| F::of(2.0) * v * gv).collect(),
                    Elementwise::Abs => xv
                        .iter()
                        .zip(g)
                        .map(|(&v, &gv)| {
                            if v > F::zero() {
                                gv
                            } else if v < F::zero() {
                                -gv
                            } else {
                                F::zero()
                            }
                        })
                        .collect(),
                    _ => unreachable!(),
                };
                send(*x, dx);
            }
            Op::Binary(kind, a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let n = node.value.numel();
                // operands widened to n elements; rank-0 sides are repeated
fn wide<F: Element>(t: &Tensor<F>, n: usize) -> std::borrow::Cow<'_, [F]> {
                    if t.numel() == n {
                        std::borrow::Cow::Borrowed(t.data())
                    } else {
                        std::borrow::Cow::Owned(vec![t.data()[0]; n])
                    }
                }
                let (need_a, need_b) = (self.rg(*a), self.rg(*b));
                let (da, db): (Vec<F>, Vec<F>) = match kind {
                    Elementwise::Add => (g.to_vec(), g.to_vec()),
                    Elementwise::Sub => (g.to_vec(), g.iter().map(|&v| -v).collect()),
                    Elementwise::Mul => {
                        let (x, y) = (wide(av, n), wide(bv, n));
                        let da = if need_a { y.iter().zip(g).map(|(&y, &gv)| y * gv).collect() } else { Vec::new() };
                        let db = if need_b { x.iter().zip(g).map(|(&x, &gv)| x * gv).collect() } else { Vec::new() };
                        (da, db)
                    }
                    Elementwise::Max => {
                        let (x, y) = (wide(av, n), wide(bv, n));
                        let mut da = vec![F::zero(); n];
                        let mut db = vec![F::zero(); n];
                        for j in 0..n {
                            if x[j] >= y[j] {
                                da[j] = g[j];
                            } else {
                                db[j] = g[j];
                            }
                        }
                        (da, db)
                    }
                    _ => unreachable!(),
                };
                let reduce = |t: &Tensor<F>, d: Vec<F>| {
                    if t.numel() != d.len() {
                        let mut s = F::zero();
                        for v in d {
                            s += v;
                        }
                        vec![s]
                    } else {
                        d
                    }
                };
                if need_a {
                    send(*a, reduce(av, da));
                }
                if need_b {
                    send(*b, reduce(bv, db));
                }
            }
            Op::AddScalar(x) => send(*x, g.to_vec()),
            Op::MulScalar(x, s) => {
                let s = F::of(*s);
                send(*x, g.iter().map(|&v| v * s).collect());
            }
            Op::MatMul { a, b, trans_b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let sa = av.shape();
                let r = sa.len();
                let (m, k) = (sa[r - 2], sa[r - 1]);
                let n = node.value.shape()[r - 1];
                let batch = numel(&sa[..r - 2]);
                if self.rg(*a) {
                    let mut da = vec![F::zero(); av.numel()];
                    for i in 0..batch {
                        let gm = MatRef::new(&g[i * m * n..(i + 1) * m * n], m, n);
                        let bd = &bv.data()[i * k * n..(i + 1) * k * n];
                        let bm = if *trans_b { MatRef::new(bd, n, k) } else { MatRef::t(bd, k, n) };
                        gemm(gm, bm, &mut da[i * m * k..(i + 1) * m * k], false);
                    }
                    send(*a, da);
                }
                if self.rg(*b) {
                    let mut db = vec![F::zero(); bv.numel()];
                    for i in 0..batch {
                        let ad = &av.data()[i * m * k..(i + 1) * m * k];
                        let gd = &g[i * m * n..(i + 1) * m * n];
                        let out = &mut db[i * k * n..(i + 1) * k * n];
                        if *trans_b {
                            gemm(MatRef::t(gd, m, n), MatRef::new(ad, m, k), out, false);
                        } else {
                            gemm(MatRef::t(ad, m, k), MatRef::new(gd, m, n), out, false);
                        }
                    }
                    send(*b, db);
                }
            }
            Op::Conv2d { x, w, bias, geom } => {
                let need_db = bias.is_some_and(|bv| self.rg(bv));
                let (dx, dw, db) = kernels::conv2d_backward(
                    self.value(*x).data(),
                    self.value(*w).data(),
                    g,
                    geom,
                    self.rg(*x),
                    self.rg(*w),
                    need_db,
                );
                if let Some(dx) = dx {
                    send(*x, dx);
                }
                if let Some(dw) = dw {
                    send(*w, dw);
                }
                if let (Some(db), Some(bv)) = (db, bias) {
                    send(*bv, db);
                }
            }
            Op::Depthwise { x, w, k } => {
                let dims = self.value(*x).dims4("depthwise").expect("validated at record time");
                let (dx, dw) =
                    kernels::depthwise_backward(self.value(*x).data(), self.value(*w).data(), g, dims, *k);
                send(*x, dx);
                send(*w, dw);
            }
            Op::Softmax { x, axis } => {
                let dx = kernels::softmax_backward(node.value.data(), g, node.value.shape(), *axis);
                send(*x, dx);
            }
            Op::Concat { parts, axis } => {
                let (outer, total, inner) = kernels::split_axis(node.value.shape(), *axis);
                let mut offset = 0;
                for &p in parts {
                    let len = self.shape(p)[*axis];
                    if self.rg(p) {
                        let mut dp = Vec::with_capacity(outer * len * inner);
                        for o in 0..outer {
                            let at = (o * total + offset) * inner;
                            dp.extend_from_slice(&g[at..at + len * inner]);
                        }
                        send(p, dp);
                    }
                    offset += len;
                }
            }
            Op::Slice { x, axis, start } => {
                let xshape = self.shape(*x);
                let (outer, full, inner) = kernels::split_axis(xshape, *axis);
                let len = node.value.shape()[*axis];
                let mut dx = vec![F::zero(); numel(xshape)];
                for o in 0..outer {
                    let at = (o * full + start) * inner;
                    dx[at..at + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                send(*x, dx);
            }
            Op::Reshape(x) => send(*x, g.to_vec()),
            Op::Transpose(x) => send(*x, transpose_last2(g, node.value.shape())),
            Op::Sum(x) => send(*x, vec![g[0]; self.value(*x).numel()]),
            Op::Mean(x) => {
                let n = self.value(*x).numel();
                send(*x, vec![g[0] / F::of(n as f64); n]);
            }
            Op::ScaleAxis { x, v, axis } => {
                let shape = node.value.shape();
                let (outer, len, inner) = kernels::split_axis(shape, *axis);
                let (xd, vd) = (self.value(*x).data(), self.value(*v).data());
                let mut dx = vec![F::zero(); xd.len()];
                let mut dv = vec![F::zero(); len];
                for o in 0..outer {
                    for j in 0..len {
                        let at = (o * len + j) * inner;
                        let mut acc = F::zero();
                        for i in 0..inner {
                            dx[at + i] = g[at + i] * vd[j];
                            acc += g[at + i] * xd[at + i];
                        }
                        dv[j] += acc;
                    }
                }
                send(*x, dx);
                send(*v, dv);
            }
            Op::ChannelNorm { x, w } => {
                let dims = self.value(*x).dims4("channel_norm").expect("validated at record time");
                let (dx, dw) = kernels::channel_norm_backward(
                    self.value(*x).data(),
                    self.value(*w).data(),
                    g,
                    dims,
                    F::of(NORM_EPS),
                );
                send(*x, dx);
                send(*w, dw);
            }
            Op::L2Normalize(x) => {
                let row = *node.value.shape().last().expect("rank >= 1");
                send(*x, kernels::l2_normalize_backward(self.value(*x).data(), g, row, F::of(L2_EPS)));
            }
            Op::Upsample2(x) => {
                let dims = self.value(*x).dims4("upsample").expect("validated at record time");
                send(*x, kernels::upsample2_backward(g, dims));
            }
            Op::Pad2d { x, pad } => {
                let s = self.shape(*x);
                let r = s.len();
                let planes = numel(&s[..r - 2]);
                send(*x, kernels::pad2d_backward(g, planes, s[r - 2], s[r - 1], *pad));
            }
        }
    }
}

fn accumulate<F: Element>(slot: &mut Option<Vec<F>>, contrib: Vec<F>) {
    match slot {
        None => *slot = Some(contrib),
        Some(acc) => acc.iter_mut().zip(contrib).for_each(|(a, c)| *a += c),
    }
}

fn transpose_last2<F: Element>(data: &[F], shape: &[usize]) -> Vec<F> {
    let r = shape.len();
    let (rows, cols) = (shape[r - 2], shape[r - 1]);
    let mut out = vec![F::zero(); data.len()];
    for (src, dst) in data.chunks_exact(rows * cols).zip(out.chunks_exact_mut(rows * cols)) {
        for i in 0..rows {
            for j in 0..cols {
                dst[j * rows + i] = src[i * cols + j];
            }
        }
    }
    out
}
