//! Same-size stride-1 convolutions as im2col + matrix multiply.
//!
//! candle's CPU convolution backward runs through direct loops that are far
//! slower than its GEMM. Expressing a training-time convolution as an
//! unfold followed by a matmul keeps every backward step on GEMM; the unfold
//! and its adjoint (fold) are each other's gradient.

use candle_core::backend::BackendStorage;
use candle_core::{CpuStorage, CustomOp1, Layout, Result, Shape, Tensor};

#[derive(Debug, Clone, Copy)]
struct Geometry {
    k: usize,
    dilation: usize,
    pad: usize,
    h: usize,
    w: usize,
}

impl Geometry {
    /// Output positions `[lo, hi)` whose tap at kernel offset `off` falls
    /// inside an axis of length `extent`.
    fn span(&self, off: usize, extent: usize) -> (usize, usize) {
        let shift = off * self.dilation;
        let lo = self.pad.saturating_sub(shift).min(extent);
        let hi = (extent + self.pad).saturating_sub(shift).min(extent);
        (lo, hi.max(lo))
    }

    fn src(&self, out: usize, off: usize) -> usize {
        out + off * self.dilation - self.pad
    }
}

fn unfold<T: Copy + Default>(x: &[T], b: usize, c: usize, g: Geometry) -> Vec<T> {
    let (h, w, k) = (g.h, g.w, g.k);
    let hw = h * w;
    let mut out = vec![T::default(); b * c * k * k * hw];
    for bc in 0..b * c {
        let plane = &x[bc * hw..(bc + 1) * hw];
        for ky in 0..k {
            let (y0, y1) = g.span(ky, h);
            for kx in 0..k {
                let (x0, x1) = g.span(kx, w);
                if x0 == x1 {
                    continue;
                }
                let row = (bc * k + ky) * k + kx;
                let dst = &mut out[row * hw..(row + 1) * hw];
                for y in y0..y1 {
                    let sy = g.src(y, ky);
                    let sx = g.src(x0, kx);
                    dst[y * w + x0..y * w + x1].copy_from_slice(&plane[sy * w + sx..sy * w + sx + (x1 - x0)]);
                }
            }
        }
    }
    out
}

fn fold<T: Copy + Default + std::ops::AddAssign>(cols: &[T], b: usize, c: usize, g: Geometry) -> Vec<T> {
    let (h, w, k) = (g.h, g.w, g.k);
    let hw = h * w;
    let mut out = vec![T::default(); b * c * hw];
    for bc in 0..b * c {
        let plane = &mut out[bc * hw..(bc + 1) * hw];
        for ky in 0..k {
            let (y0, y1) = g.span(ky, h);
            for kx in 0..k {
                let (x0, x1) = g.span(kx, w);
                if x0 == x1 {
                    continue;
                }
                let row = (bc * k + ky) * k + kx;
                let src = &cols[row * hw..(row + 1) * hw];
                for y in y0..y1 {
                    let sy = g.src(y, ky);
                    let sx = g.src(x0, kx);
                    let dst = &mut plane[sy * w + sx..sy * w + sx + (x1 - x0)];
                    for (d, s) in dst.iter_mut().zip(&src[y * w + x0..y * w + x1]) {
                        *d += *s;
                    }
                }
            }
        }
    }
    out
}

fn contiguous<'a, T>(data: &'a [T], layout: &Layout) -> Result<&'a [T]> {
    match layout.contiguous_offsets() {
        Some((start, end)) => Ok(&data[start..end]),
        None => candle_core::bail!("im2col expects a contiguous tensor"),
    }
}

struct Unfold(Geometry);
struct Fold(Geometry);

impl CustomOp1 for Unfold {
    fn name(&self) -> &'static str {
        "unfold"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> Result<(CpuStorage, Shape)> {
        let (b, c, h, w) = layout.shape().dims4()?;
        let g = self.0;
        if (h, w) != (g.h, g.w) {
            candle_core::bail!("unfold geometry {}x{} does not match input {h}x{w}", g.h, g.w);
        }
        let shape = Shape::from((b, c * g.k * g.k, h * w));
        let out = match storage {
            CpuStorage::F32(v) => CpuStorage::F32(unfold(contiguous(v, layout)?, b, c, g)),
            CpuStorage::F64(v) => CpuStorage::F64(unfold(contiguous(v, layout)?, b, c, g)),
            other => candle_core::bail!("unfold does not support {:?}", other.dtype()),
        };
        Ok((out, shape))
    }

    fn bwd(&self, _arg: &Tensor, _res: &Tensor, grad: &Tensor) -> Result<Option<Tensor>> {
        Ok(Some(grad.contiguous()?.apply_op1(Fold(self.0))?))
    }
}

impl CustomOp1 for Fold {
    fn name(&self) -> &'static str {
        "fold"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> Result<(CpuStorage, Shape)> {
        let (b, ckk, hw) = layout.shape().dims3()?;
        let g = self.0;
        if ckk % (g.k * g.k) != 0 || hw != g.h * g.w {
            candle_core::bail!("fold input {:?} does not match its geometry", layout.shape());
        }
        let c = ckk / (g.k * g.k);
        let shape = Shape::from((b, c, g.h, g.w));
        let out = match storage {
            CpuStorage::F32(v) => CpuStorage::F32(fold(contiguous(v, layout)?, b, c, g)),
            CpuStorage::F64(v) => CpuStorage::F64(fold(contiguous(v, layout)?, b, c, g)),
            other => candle_core::bail!("fold does not support {:?}", other.dtype()),
        };
        Ok((out, shape))
    }

    fn bwd(&self, _arg: &Tensor, _res: &Tensor, grad: &Tensor) -> Result<Option<Tensor>> {
        Ok(Some(grad.contiguous()?.apply_op1(Unfold(self.0))?))
    }
}

/// Stride-1 convolution with zero padding `dilation * (k / 2)` and no bias;
/// `weight` is `(cout, cin, k, k)` with odd `k`.
pub fn conv2d_same(x: &Tensor, weight: &Tensor, dilation: usize) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    let (cout, cin, k, k2) = weight.dims4()?;
    if cin != c || k != k2 || k % 2 == 0 {
        candle_core::bail!("conv2d_same: input {:?} and kernel {:?} are incompatible", x.dims(), weight.dims());
    }
    let wm = weight.reshape((cout, cin * k * k))?;
    let cols = if k == 1 {
        x.reshape((b, c, h * w))?
    } else {
        let g = Geometry {
            k,
            dilation,
            pad: dilation * (k / 2),
            h,
            w,
        };
        x.contiguous()?.apply_op1(Unfold(g))?
    };
    wm.broadcast_matmul(&cols)?.reshape((b, cout, h, w))
}

/// Unfolded buffers above this many elements go to candle's native kernel.
const EVAL_UNFOLD_LIMIT: usize = 1 << 26;

/// Inference-time variant of [`conv2d_same`].
///
/// candle's native CPU convolution returns wrong values for dilated kernels
/// on some small maps (8x8 with dilation 2, 4 or 8 among them), which are
/// exactly the deep levels of a small canvas. The unfolded form is used there
/// and the native kernel only for large maps, where an unfolded copy would
/// cost gigabytes.
pub fn conv2d_same_eval(x: &Tensor, weight: &Tensor, dilation: usize) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    let k = weight.dim(2)?;
    if b * c * k * k * h * w <= EVAL_UNFOLD_LIMIT {
        conv2d_same(x, weight, dilation)
    } else {
        x.conv2d(weight, dilation * (k / 2), 1, dilation, 1)
    }
}

/// Transposed convolution with kernel = stride = `f` and no bias; `weight`
/// is `(cin, cout, f, f)`. Output windows do not overlap, so this is one
/// matmul followed by a pixel shuffle.
pub fn conv_transpose_disjoint(x: &Tensor, weight: &Tensor) -> Result<Tensor> {
    let (b, cin, h, w) = x.dims4()?;
    let (wcin, cout, f, f2) = weight.dims4()?;
    if wcin != cin || f != f2 {
        candle_core::bail!("conv_transpose_disjoint: input {:?} and kernel {:?} are incompatible", x.dims(), weight.dims());
    }
    let wm = weight.reshape((cin, cout * f * f))?.t()?;
    let y = wm.broadcast_matmul(&x.reshape((b, cin, h * w))?)?;
    y.reshape((b, cout, f, f, h, w))?
        .permute((0, 1, 4, 2, 5, 3))?
        .reshape((b, cout, h * f, w * f))
}
