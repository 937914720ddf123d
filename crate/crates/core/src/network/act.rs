//! Leaky ReLU as a single fused kernel with a fused backward.

use candle_core::backend::BackendStorage;
use candle_core::{CpuStorage, CustomOp1, CustomOp2, Layout, Result, Shape, Tensor};

fn contiguous<'a, T>(data: &'a [T], layout: &Layout) -> Result<&'a [T]> {
    match layout.contiguous_offsets() {
        Some((start, end)) => Ok(&data[start..end]),
        None => candle_core::bail!("leaky relu expects a contiguous tensor"),
    }
}

struct LeakyRelu(f64);

/// Gradient of leaky ReLU: `grad` where the input is positive, `slope * grad`
/// elsewhere.
struct LeakyReluGrad(f64);

impl CustomOp1 for LeakyRelu {
    fn name(&self) -> &'static str {
        "leaky-relu"
    }

    fn cpu_fwd(&self, s: &CpuStorage, l: &Layout) -> Result<(CpuStorage, Shape)> {
        let a = self.0;
        let out = match s {
            CpuStorage::F32(v) => {
                let a = a as f32;
                CpuStorage::F32(contiguous(v, l)?.iter().map(|&x| if x > 0.0 { x } else { a * x }).collect())
            }
            CpuStorage::F64(v) => CpuStorage::F64(contiguous(v, l)?.iter().map(|&x| if x > 0.0 { x } else { a * x }).collect()),
            other => candle_core::bail!("leaky relu does not support {:?}", other.dtype()),
        };
        Ok((out, l.shape().clone()))
    }

    fn bwd(&self, arg: &Tensor, _res: &Tensor, grad: &Tensor) -> Result<Option<Tensor>> {
        Ok(Some(arg.apply_op2_no_bwd(&grad.contiguous()?, &LeakyReluGrad(self.0))?))
    }
}

impl CustomOp2 for LeakyReluGrad {
    fn name(&self) -> &'static str {
        "leaky-relu-grad"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> Result<(CpuStorage, Shape)> {
        let a = self.0;
        let out = match (s1, s2) {
            (CpuStorage::F32(x), CpuStorage::F32(g)) => {
                let a = a as f32;
                let (x, g) = (contiguous(x, l1)?, contiguous(g, l2)?);
                CpuStorage::F32(x.iter().zip(g).map(|(&x, &g)| if x > 0.0 { g } else { a * g }).collect())
            }
            (CpuStorage::F64(x), CpuStorage::F64(g)) => {
                let (x, g) = (contiguous(x, l1)?, contiguous(g, l2)?);
                CpuStorage::F64(x.iter().zip(g).map(|(&x, &g)| if x > 0.0 { g } else { a * g }).collect())
            }
            _ => candle_core::bail!("leaky relu gradient needs matching float dtypes"),
        };
        Ok((out, l1.shape().clone()))
    }
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> Result<Tensor> {
    x.contiguous()?.apply_op1(LeakyRelu(slope))
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{Device, Var};

    #[test]
    fn matches_reference_and_gradient() {
        let v = vec![-2.0f64, -0.5, 0.0, 0.25, 3.0];
        let x = Var::from_tensor(&Tensor::new(v.as_slice(), &Device::Cpu).unwrap()).unwrap();
        let y = leaky_relu(&x, 0.1).unwrap();
        assert_eq!(y.to_vec1::<f64>().unwrap(), vec![-0.2, -0.05, 0.0, 0.25, 3.0]);
        let g = (&y * 2.0).unwrap().sum_all().unwrap().backward().unwrap();
        assert_eq!(g.get(&x).unwrap().to_vec1::<f64>().unwrap(), vec![0.2, 0.2, 0.2, 2.0, 2.0]);
    }
}
