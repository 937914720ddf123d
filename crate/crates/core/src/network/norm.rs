//! Batch normalisation over `(B, C, H, W)` with fused CPU kernels.
//!
//! Variable names and update rules match `candle_nn::BatchNorm` (momentum
//! 0.1, unbiased running variance, eps 1e-5), so checkpoints are
//! interchangeable.

use candle_core::backend::BackendStorage;
use candle_core::{CpuStorage, CustomOp1, CustomOp3, Layout, Result, Shape, Tensor, Var, WithDType};
use candle_nn::{Init, VarBuilder};

const EPS: f64 = 1e-5;
const MOMENTUM: f64 = 0.1;

fn contiguous<'a, T>(data: &'a [T], layout: &Layout) -> Result<&'a [T]> {
    match layout.contiguous_offsets() {
        Some((start, end)) => Ok(&data[start..end]),
        None => candle_core::bail!("batch norm expects contiguous tensors"),
    }
}

/// Per-channel mean and biased variance of a `(B, C, HW)` buffer.
fn moments<T: WithDType>(x: &[T], b: usize, c: usize, hw: usize) -> Vec<(f64, f64)> {
    let n = (b * hw) as f64;
    (0..c)
        .map(|ch| {
            let planes = (0..b).map(|i| &x[(i * c + ch) * hw..(i * c + ch + 1) * hw]);
            let mean = planes.clone().flatten().map(|v| v.to_f64()).sum::<f64>() / n;
            let var = planes.flatten().map(|v| (v.to_f64() - mean).powi(2)).sum::<f64>() / n;
            (mean, var)
        })
        .collect()
}

fn forward<T: WithDType>(x: &[T], w: &[T], bias: &[T], dims: (usize, usize, usize)) -> Vec<T> {
    let (b, c, hw) = dims;
    let stats = moments(x, b, c, hw);
    let mut out = Vec::with_capacity(x.len());
    for i in 0..b {
        for (ch, &(mean, var)) in stats.iter().enumerate() {
            let scale = w[ch].to_f64() / (var + EPS).sqrt();
            let shift = bias[ch].to_f64() - mean * scale;
            let plane = &x[(i * c + ch) * hw..(i * c + ch + 1) * hw];
            out.extend(plane.iter().map(|v| T::from_f64(v.to_f64() * scale + shift)));
        }
    }
    out
}

/// Packs `[dx (B*C*HW), dweight (C), dbias (C)]`.
fn backward<T: WithDType>(x: &[T], w: &[T], g: &[T], dims: (usize, usize, usize)) -> Vec<T> {
    let (b, c, hw) = dims;
    let n = (b * hw) as f64;
    let stats = moments(x, b, c, hw);
    let mut dw = vec![0f64; c];
    let mut db = vec![0f64; c];
    for i in 0..b {
        for (ch, &(mean, var)) in stats.iter().enumerate() {
            let inv = 1.0 / (var + EPS).sqrt();
            let r = (i * c + ch) * hw..(i * c + ch + 1) * hw;
            for (xv, gv) in x[r.clone()].iter().zip(&g[r]) {
                let gv = gv.to_f64();
                db[ch] += gv;
                dw[ch] += gv * (xv.to_f64() - mean) * inv;
            }
        }
    }
    let mut out = vec![T::zero(); x.len() + 2 * c];
    for i in 0..b {
        for (ch, &(mean, var)) in stats.iter().enumerate() {
            let inv = 1.0 / (var + EPS).sqrt();
            let k = w[ch].to_f64() * inv / n;
            let r = (i * c + ch) * hw..(i * c + ch + 1) * hw;
            for ((o, xv), gv) in out[r.clone()].iter_mut().zip(&x[r.clone()]).zip(&g[r]) {
                let xhat = (xv.to_f64() - mean) * inv;
                *o = T::from_f64(k * (n * gv.to_f64() - db[ch] - xhat * dw[ch]));
            }
        }
    }
    for ch in 0..c {
        out[x.len() + ch] = T::from_f64(dw[ch]);
        out[x.len() + c + ch] = T::from_f64(db[ch]);
    }
    out
}

fn dims3(l: &Layout) -> Result<(usize, usize, usize)> {
    let d = l.shape().dims();
    if d.len() < 2 {
        candle_core::bail!("batch norm needs at least (B, C), got {d:?}");
    }
    Ok((d[0], d[1], d[2..].iter().product()))
}

struct TrainNorm;
struct TrainNormGrad;
/// Per-channel `[mean; biased variance]` as a `(2, C)` tensor.
struct Moments;

impl CustomOp1 for Moments {
    fn name(&self) -> &'static str {
        "batch-norm-moments"
    }

    fn cpu_fwd(&self, s: &CpuStorage, l: &Layout) -> Result<(CpuStorage, Shape)> {
        let (b, c, hw) = dims3(l)?;
        fn pack<T: WithDType>(m: Vec<(f64, f64)>) -> Vec<T> {
            let (mean, var): (Vec<f64>, Vec<f64>) = m.into_iter().unzip();
            mean.into_iter().chain(var).map(T::from_f64).collect()
        }
        let out = match s {
            CpuStorage::F32(x) => CpuStorage::F32(pack(moments(contiguous(x, l)?, b, c, hw))),
            CpuStorage::F64(x) => CpuStorage::F64(pack(moments(contiguous(x, l)?, b, c, hw))),
            other => candle_core::bail!("batch norm does not support {:?}", other.dtype()),
        };
        Ok((out, Shape::from((2, c))))
    }
}

impl CustomOp3 for TrainNorm {
    fn name(&self) -> &'static str {
        "batch-norm-train"
    }

    fn cpu_fwd(
        &self,
        s1: &CpuStorage,
        l1: &Layout,
        s2: &CpuStorage,
        l2: &Layout,
        s3: &CpuStorage,
        l3: &Layout,
    ) -> Result<(CpuStorage, Shape)> {
        let dims = dims3(l1)?;
        let out = match (s1, s2, s3) {
            (CpuStorage::F32(x), CpuStorage::F32(w), CpuStorage::F32(b)) => {
                CpuStorage::F32(forward(contiguous(x, l1)?, contiguous(w, l2)?, contiguous(b, l3)?, dims))
            }
            (CpuStorage::F64(x), CpuStorage::F64(w), CpuStorage::F64(b)) => {
                CpuStorage::F64(forward(contiguous(x, l1)?, contiguous(w, l2)?, contiguous(b, l3)?, dims))
            }
            _ => candle_core::bail!("batch norm needs matching f32 or f64 inputs, got {:?}", s1.dtype()),
        };
        Ok((out, l1.shape().clone()))
    }

    fn bwd(
        &self,
        x: &Tensor,
        w: &Tensor,
        _b: &Tensor,
        _res: &Tensor,
        grad: &Tensor,
    ) -> Result<(Option<Tensor>, Option<Tensor>, Option<Tensor>)> {
        let packed = x.apply_op3_no_bwd(w, &grad.contiguous()?, &TrainNormGrad)?;
        let (n, c) = (x.elem_count(), w.elem_count());
        let dx = packed.narrow(0, 0, n)?.reshape(x.shape())?;
        let dw = packed.narrow(0, n, c)?;
        let db = packed.narrow(0, n + c, c)?;
        Ok((Some(dx), Some(dw), Some(db)))
    }
}

impl CustomOp3 for TrainNormGrad {
    fn name(&self) -> &'static str {
        "batch-norm-train-grad"
    }

    fn cpu_fwd(
        &self,
        s1: &CpuStorage,
        l1: &Layout,
        s2: &CpuStorage,
        l2: &Layout,
        s3: &CpuStorage,
        l3: &Layout,
    ) -> Result<(CpuStorage, Shape)> {
        let dims = dims3(l1)?;
        let out = match (s1, s2, s3) {
            (CpuStorage::F32(x), CpuStorage::F32(w), CpuStorage::F32(g)) => {
                CpuStorage::F32(backward(contiguous(x, l1)?, contiguous(w, l2)?, contiguous(g, l3)?, dims))
            }
            (CpuStorage::F64(x), CpuStorage::F64(w), CpuStorage::F64(g)) => {
                CpuStorage::F64(backward(contiguous(x, l1)?, contiguous(w, l2)?, contiguous(g, l3)?, dims))
            }
            _ => candle_core::bail!("batch norm gradient needs matching f32 or f64 inputs"),
        };
        let len = l1.shape().elem_count() + 2 * dims.1;
        Ok((out, Shape::from(len)))
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    weight: Tensor,
    bias: Tensor,
    running_mean: Var,
    running_var: Var,
}

impl BatchNorm2d {
    pub fn new(channels: usize, vb: VarBuilder) -> Result<Self> {
        let running_mean = vb.get_with_hints(channels, "running_mean", Init::Const(0.))?;
        let running_var = vb.get_with_hints(channels, "running_var", Init::Const(1.))?;
        Ok(Self {
            weight: vb.get_with_hints(channels, "weight", Init::Const(1.))?,
            bias: vb.get_with_hints(channels, "bias", Init::Const(0.))?,
            running_mean: Var::from_tensor(&running_mean)?,
            running_var: Var::from_tensor(&running_var)?,
        })
    }

    pub fn running_mean(&self) -> &Tensor {
        self.running_mean.as_tensor()
    }

    pub fn running_var(&self) -> &Tensor {
        self.running_var.as_tensor()
    }

    /// Batch statistics (and a running-average update) in training mode,
    /// running statistics otherwise.
    pub fn forward_t(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let c = x.dim(1)?;
        let bshape: Vec<usize> = (0..x.rank()).map(|i| if i == 1 { c } else { 1 }).collect();
        if !train {
            let scale = (&self.weight / (self.running_var.as_tensor() + EPS)?.sqrt()?)?;
            let shift = (&self.bias - (self.running_mean.as_tensor() * &scale)?)?;
            return x
                .broadcast_mul(&scale.reshape(bshape.as_slice())?)?
                .broadcast_add(&shift.reshape(bshape.as_slice())?);
        }
        let x = x.contiguous()?;
        let n = x.elem_count() / c;
        let stats = x.apply_op1_no_bwd(&Moments)?;
        let (mean, var) = (stats.get(0)?, stats.get(1)?);
        let unbiased = if n > 1 { n as f64 / (n as f64 - 1.0) } else { 1.0 };
        self.running_mean
            .set(&((self.running_mean.as_tensor() * (1.0 - MOMENTUM))? + (mean * MOMENTUM)?)?)?;
        self.running_var
            .set(&((self.running_var.as_tensor() * (1.0 - MOMENTUM))? + (var * (MOMENTUM * unbiased))?)?)?;
        x.apply_op3(&self.weight, &self.bias, TrainNorm)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device, ModuleT};
    use candle_nn::VarMap;

    fn field(shape: (usize, usize, usize, usize)) -> Tensor {
        let n = shape.0 * shape.1 * shape.2 * shape.3;
        let v: Vec<f64> = (0..n).map(|i| ((i * 7919 % 113) as f64 / 37.0).sin() * 2.0 + 0.3).collect();
        Tensor::from_vec(v, shape, &Device::Cpu).unwrap()
    }

    fn max_diff(a: &Tensor, b: &Tensor) -> f64 {
        (a - b).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f64>().unwrap()
    }

    #[test]
    fn agrees_with_candle_batch_norm() {
        let shape = (3, 4, 5, 6);
        let (vm1, vm2) = (VarMap::new(), VarMap::new());
        let ours = BatchNorm2d::new(4, VarBuilder::from_varmap(&vm1, DType::F64, &Device::Cpu)).unwrap();
        let theirs = candle_nn::batch_norm(4, 1e-5, VarBuilder::from_varmap(&vm2, DType::F64, &Device::Cpu)).unwrap();
        let w = Tensor::new(&[0.5f64, 1.5, -1.0, 2.0], &Device::Cpu).unwrap();
        for vm in [&vm1, &vm2] {
            vm.data().lock().unwrap()["weight"].set(&w).unwrap();
        }
        let x = Var::from_tensor(&field(shape)).unwrap();
        let probe = field(shape).affine(0.7, -0.1).unwrap().sin().unwrap();

        let a = ours.forward_t(&x, true).unwrap();
        let b = theirs.forward_t(&x, true).unwrap();
        assert!(max_diff(&a, &b) < 1e-9);
        assert!(max_diff(ours.running_mean(), theirs.running_mean()).abs() < 1e-12);
        assert!(max_diff(ours.running_var(), theirs.running_var()).abs() < 1e-12);

        let ga = (&a * &probe).unwrap().sum_all().unwrap().backward().unwrap();
        let gb = (&b * &probe).unwrap().sum_all().unwrap().backward().unwrap();
        assert!(max_diff(ga.get(&x).unwrap(), gb.get(&x).unwrap()) < 1e-9);
        for name in ["weight", "bias"] {
            let va = vm1.data().lock().unwrap()[name].clone();
            let vb = vm2.data().lock().unwrap()[name].clone();
            assert!(max_diff(ga.get(&va).unwrap(), gb.get(&vb).unwrap()) < 1e-9, "{name}");
        }

        let ea = ours.forward_t(&x, false).unwrap();
        let eb = theirs.forward_t(&x, false).unwrap();
        assert!(max_diff(&ea, &eb) < 1e-9);
    }
}
