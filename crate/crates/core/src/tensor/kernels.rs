//! Forward and backward kernels on flat buffers. Shapes are validated by the
//! tape before these are called.

use super::gemm::{gemm, MatRef};
use super::Element;

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
    fn k(&self) -> usize {
        self.cin * self.kh * self.kw
    }
    fn p(&self) -> usize {
        self.ho * self.wo
    }
}

fn im2col<F: Element>(x: &[F], g: &ConvGeom, cols: &mut [F]) {
    let p = g.p();
    for c in 0..g.cin {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(F::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, d) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        *d = if ix < 0 || ix >= g.w as isize {
                            F::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im<F: Element>(cols: &[F], g: &ConvGeom, dx: &mut [F]) {
    let p = g.p();
    for c in 0..g.cin {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let line = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            line[ix as usize] += src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward<F: Element>(x: &[F], w: &[F], bias: Option<&[F]>, g: &ConvGeom) -> Vec<F> {
    let (k, p) = (g.k(), g.p());
    let in_len = g.cin * g.h * g.w;
    let out_len = g.cout * p;
    let mut out = vec![F::zero(); g.batch * out_len];
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![F::zero(); k * p] };
    for b in 0..g.batch {
        let xb = &x[b * in_len..(b + 1) * in_len];
        let colref = if g.is_pointwise() {
            xb
        } else {
            im2col(xb, g, &mut cols);
            &cols
        };
        let ob = &mut out[b * out_len..(b + 1) * out_len];
        gemm(MatRef::new(w, g.cout, k), MatRef::new(colref, k, p), ob, false);
        if let Some(bias) = bias {
            for (co, chunk) in ob.chunks_exact_mut(p).enumerate() {
                let bv = bias[co];
                chunk.iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    out
}

/// Returns (dx, dw, dbias) for the requested inputs.
pub(crate) fn conv2d_backward<F: Element>(
    x: &[F],
    w: &[F],
    grad: &[F],
    g: &ConvGeom,
    need_dx: bool,
    need_dw: bool,
    need_db: bool,
) -> (Option<Vec<F>>, Option<Vec<F>>, Option<Vec<F>>) {
    let (k, p) = (g.k(), g.p());
    let in_len = g.cin * g.h * g.w;
    let out_len = g.cout * p;
    let mut dx = need_dx.then(|| vec![F::zero(); x.len()]);
    let mut dw = need_dw.then(|| vec![F::zero(); w.len()]);
    let mut db = need_db.then(|| vec![F::zero(); g.cout]);
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![F::zero(); k * p] };
    let mut dcols = if need_dx && !g.is_pointwise() { vec![F::zero(); k * p] } else { Vec::new() };
    for b in 0..g.batch {
        let xb = &x[b * in_len..(b + 1) * in_len];
        let gb = &grad[b * out_len..(b + 1) * out_len];
        if let Some(db) = db.as_mut() {
            for (co, chunk) in gb.chunks_exact(p).enumerate() {
                let mut s = F::zero();
                for &v in chunk {
                    s += v;
                }
                db[co] += s;
            }
        }
        if let Some(dw) = dw.as_mut() {
            let colref = if g.is_pointwise() {
                xb
            } else {
                im2col(xb, g, &mut cols);
                &cols
            };
            gemm(MatRef::new(gb, g.cout, p), MatRef::t(colref, k, p), dw, true);
        }
        if let Some(dx) = dx.as_mut() {
            let dxb = &mut dx[b * in_len..(b + 1) * in_len];
            if g.is_pointwise() {
                gemm(MatRef::t(w, g.cout, k), MatRef::new(gb, g.cout, p), dxb, false);
            } else {
                gemm(MatRef::t(w, g.cout, k), MatRef::new(gb, g.cout, p), &mut dcols, false);
                col2im(&dcols, g, dxb);
            }
        }
    }
    (dx, dw, db)
}

/// Column span `[lo, hi)` of output pixels whose tap at offset `d` lands
/// inside a row of width `w`.
fn tap_span(d: isize, w: usize) -> (usize, usize) {
    ((-d).max(0) as usize, (w as isize - d.max(0)) as usize)
}

/// Dot product with eight independent partial sums.
fn dot<F: Element>(a: &[F], b: &[F]) -> F {
    let mut lanes = [F::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            lanes[l] += x[l] * y[l];
        }
    }
    let mut acc = F::zero();
    for (x, y) in ra.iter().zip(rb) {
        acc += *x * *y;
    }
    for l in lanes {
        acc += l;
    }
    acc
}

fn axpy<F: Element>(alpha: F, x: &[F], y: &mut [F]) {
    for (d, &s) in y.iter_mut().zip(x) {
        *d += alpha * s;
    }
}

/// Depthwise convolution, stride 1, "same" zero padding, odd square kernel.
pub(crate) fn depthwise_forward<F: Element>(x: &[F], w: &[F], dims: [usize; 4], k: usize) -> Vec<F> {
    let [b, c, h, wd] = dims;
    let pad = (k / 2) as isize;
    let plane = h * wd;
    let mut out = vec![F::zero(); x.len()];
    for bi in 0..b {
        for ci in 0..c {
            let base = (bi * c + ci) * plane;
            let src = &x[base..base + plane];
            let dst = &mut out[base..base + plane];
            let kern = &w[ci * k * k..(ci + 1) * k * k];
            for y in 0..h {
                let drow = &mut dst[y * wd..(y + 1) * wd];
                for ki in 0..k {
                    let iy = y as isize + ki as isize - pad;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let srow = &src[iy as usize * wd..(iy as usize + 1) * wd];
                    for kj in 0..k {
                        let dx = kj as isize - pad;
                        let (lo, hi) = tap_span(dx, wd);
                        let s_lo = (lo as isize + dx) as usize;
                        axpy(kern[ki * k + kj], &srow[s_lo..s_lo + hi - lo], &mut drow[lo..hi]);
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn depthwise_backward<F: Element>(
    x: &[F],
    w: &[F],
    grad: &[F],
    dims: [usize; 4],
    k: usize,
) -> (Vec<F>, Vec<F>) {
    let [b, c, h, wd] = dims;
    let pad = (k / 2) as isize;
    let plane = h * wd;
    let mut dxv = vec![F::zero(); x.len()];
    let mut dw = vec![F::zero(); w.len()];
    for bi in 0..b {
        for ci in 0..c {
            let base = (bi * c + ci) * plane;
            let src = &x[base..base + plane];
            let g = &grad[base..base + plane];
            let dsrc = &mut dxv[base..base + plane];
            let kern = &w[ci * k * k..(ci + 1) * k * k];
            let dkern = &mut dw[ci * k * k..(ci + 1) * k * k];
            for y in 0..h {
                let grow = &g[y * wd..(y + 1) * wd];
                for ki in 0..k {
                    let iy = y as isize + ki as isize - pad;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let row = iy as usize * wd..(iy as usize + 1) * wd;
                    for kj in 0..k {
                        let dx = kj as isize - pad;
                        let (lo, hi) = tap_span(dx, wd);
                        let s_lo = (lo as isize + dx) as usize;
                        let span = s_lo..s_lo + hi - lo;
                        dkern[ki * k + kj] += dot(&grow[lo..hi], &src[row.clone()][span.clone()]);
                        axpy(kern[ki * k + kj], &grow[lo..hi], &mut dsrc[row.clone()][span]);
                    }
                }
            }
        }
    }
    (dxv, dw)
}

/// (outer, len, inner) blocking of `shape` around `axis`.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn softmax_forward<F: Element>(x: &[F], shape: &[usize], axis: usize) -> Vec<F> {
    let (outer, len, inner) = split_axis(shape, axis);
    let mut out = vec![F::zero(); x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| (o * len + j) * inner + i;
            let mut m = F::neg_infinity();
            for j in 0..len {
                m = m.max(x[at(j)]);
            }
            let mut s = F::zero();
            for j in 0..len {
                let e = (x[at(j)] - m).exp();
                out[at(j)] = e;
                s += e;
            }
            for j in 0..len {
                out[at(j)] = out[at(j)] / s;
            }
        }
    }
    out
}

pub(crate) fn softmax_backward<F: Element>(y: &[F], grad: &[F], shape: &[usize], axis: usize) -> Vec<F> {
    let (outer, len, inner) = split_axis(shape, axis);
    let mut dx = vec![F::zero(); y.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| (o * len + j) * inner + i;
            let mut dot = F::zero();
            for j in 0..len {
                dot += y[at(j)] * grad[at(j)];
            }
            for j in 0..len {
                dx[at(j)] = y[at(j)] * (grad[at(j)] - dot);
            }
        }
    }
    dx
}

/// Bias-free layer norm across the channel axis of `[B, C, H, W]`:
/// `y = x / sqrt(var_c(x) + eps) * w`.
pub(crate) fn channel_norm_forward<F: Element>(x: &[F], w: &[F], dims: [usize; 4], eps: F) -> Vec<F> {
    let [b, c, h, wd] = dims;
    let p = h * wd;
    let cf = F::of(c as f64);
    let mut out = vec![F::zero(); x.len()];
    let mut mu = vec![F::zero(); p];
    let mut inv = vec![F::zero(); p];
    for bi in 0..b {
        let xb = &x[bi * c * p..(bi + 1) * c * p];
        let ob = &mut out[bi * c * p..(bi + 1) * c * p];
        channel_stats(xb, c, p, cf, eps, &mut mu, &mut inv);
        for ci in 0..c {
            let wv = w[ci];
            for pi in 0..p {
                ob[ci * p + pi] = xb[ci * p + pi] * inv[pi] * wv;
            }
        }
    }
    out
}

/// Fills `mu` with channel means and `inv` with `1/sqrt(var + eps)`.
fn channel_stats<F: Element>(xb: &[F], c: usize, p: usize, cf: F, eps: F, mu: &mut [F], inv: &mut [F]) {
    mu.fill(F::zero());
    inv.fill(F::zero());
    for ci in 0..c {
        for pi in 0..p {
            mu[pi] += xb[ci * p + pi];
        }
    }
    mu.iter_mut().for_each(|m| *m = *m / cf);
    for ci in 0..c {
        for pi in 0..p {
            let d = xb[ci * p + pi] - mu[pi];
            inv[pi] += d * d;
        }
    }
    inv.iter_mut().for_each(|v| *v = F::one() / (*v / cf + eps).sqrt());
}

pub(crate) fn channel_norm_backward<F: Element>(
    x: &[F],
    w: &[F],
    grad: &[F],
    dims: [usize; 4],
    eps: F,
) -> (Vec<F>, Vec<F>) {
    let [b, c, h, wd] = dims;
    let p = h * wd;
    let cf = F::of(c as f64);
    let mut dx = vec![F::zero(); x.len()];
    let mut dw = vec![F::zero(); c];
    let mut mu = vec![F::zero(); p];
    let mut inv = vec![F::zero(); p];
    let mut acc = vec![F::zero(); p];
    for bi in 0..b {
        let xb = &x[bi * c * p..(bi + 1) * c * p];
        let gb = &grad[bi * c * p..(bi + 1) * c * p];
        let db = &mut dx[bi * c * p..(bi + 1) * c * p];
        channel_stats(xb, c, p, cf, eps, &mut mu, &mut inv);
        acc.fill(F::zero());
        for ci in 0..c {
            let wv = w[ci];
            let mut dwc = F::zero();
            for pi in 0..p {
                let gx = gb[ci * p + pi] * xb[ci * p + pi];
                acc[pi] += gx * wv;
                dwc += gx * inv[pi];
            }
            dw[ci] += dwc;
        }
        for ci in 0..c {
            let wv = w[ci];
            for pi in 0..p {
                let s = inv[pi];
                db[ci * p + pi] =
                    s * wv * gb[ci * p + pi] - s * s * s * (xb[ci * p + pi] - mu[pi]) * acc[pi] / cf;
            }
        }
    }
    (dx, dw)
}

pub(crate) fn l2_normalize_forward<F: Element>(x: &[F], row: usize, eps: F) -> Vec<F> {
    let mut out = vec![F::zero(); x.len()];
    for (src, dst) in x.chunks_exact(row).zip(out.chunks_exact_mut(row)) {
        let mut ss = F::zero();
        for &v in src {
            ss += v * v;
        }
        let n = ss.sqrt().max(eps);
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = s / n;
        }
    }
    out
}

pub(crate) fn l2_normalize_backward<F: Element>(x: &[F], grad: &[F], row: usize, eps: F) -> Vec<F> {
    let mut dx = vec![F::zero(); x.len()];
    for ((src, g), dst) in x.chunks_exact(row).zip(grad.chunks_exact(row)).zip(dx.chunks_exact_mut(row)) {
        let mut ss = F::zero();
        for &v in src {
            ss += v * v;
        }
        let norm = ss.sqrt();
        if norm <= eps {
            for (d, &gv) in dst.iter_mut().zip(g) {
                *d = gv / eps;
            }
            continue;
        }
        let mut dot = F::zero();
        for (&s, &gv) in src.iter().zip(g) {
            dot += s * gv;
        }
        let n3 = norm * norm * norm;
        for ((d, &s), &gv) in dst.iter_mut().zip(src).zip(g) {
            *d = gv / norm - s * dot / n3;
        }
    }
    dx
}

pub(crate) fn upsample2_forward<F: Element>(x: &[F], dims: [usize; 4]) -> Vec<F> {
    let [b, c, h, w] = dims;
    let (h2, w2) = (2 * h, 2 * w);
    let mut out = vec![F::zero(); b * c * h2 * w2];
    for plane in 0..b * c {
        let src = &x[plane * h * w..(plane + 1) * h * w];
        let dst = &mut out[plane * h2 * w2..(plane + 1) * h2 * w2];
        for y in 0..h2 {
            for xo in 0..w2 {
                dst[y * w2 + xo] = src[(y / 2) * w + xo / 2];
            }
        }
    }
    out
}

pub(crate) fn upsample2_backward<F: Element>(grad: &[F], dims: [usize; 4]) -> Vec<F> {
    let [b, c, h, w] = dims;
    let (h2, w2) = (2 * h, 2 * w);
    let mut dx = vec![F::zero(); b * c * h * w];
    for plane in 0..b * c {
        let g = &grad[plane * h2 * w2..(plane + 1) * h2 * w2];
        let d = &mut dx[plane * h * w..(plane + 1) * h * w];
        for y in 0..h2 {
            for xo in 0..w2 {
                d[(y / 2) * w + xo / 2] += g[y * w2 + xo];
            }
        }
    }
    dx
}

/// Zero-pads the two trailing axes by `pad` on every side.
pub(crate) fn pad2d_forward<F: Element>(x: &[F], planes: usize, h: usize, w: usize, pad: usize) -> Vec<F> {
    let (hp, wp) = (h + 2 * pad, w + 2 * pad);
    let mut out = vec![F::zero(); planes * hp * wp];
    for pl in 0..planes {
        for y in 0..h {
            let src = &x[(pl * h + y) * w..(pl * h + y + 1) * w];
            let start = (pl * hp + y + pad) * wp + pad;
            out[start..start + w].copy_from_slice(src);
        }
    }
    out
}

pub(crate) fn pad2d_backward<F: Element>(grad: &[F], planes: usize, h: usize, w: usize, pad: usize) -> Vec<F> {
    let (hp, wp) = (h + 2 * pad, w + 2 * pad);
    let mut dx = vec![F::zero(); planes * h * w];
    for pl in 0..planes {
        for y in 0..h {
            let start = (pl * hp + y + pad) * wp + pad;
            dx[(pl * h + y) * w..(pl * h + y + 1) * w].copy_from_slice(&grad[start..start + w]);
        }
    }
    dx
}
