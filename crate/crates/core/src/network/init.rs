use candle_core::{Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;

/// Deterministic initialisation: He-normal convolution kernels (fan-in over
/// dim 1 and the spatial extent), zero biases. Batch-norm affine parameters
/// and running statistics keep their constant defaults.
pub(super) fn reinitialize(vars: &[(String, Var)], seed: u64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (name, var) in vars {
        let dims = var.dims().to_vec();
        if dims.len() == 4 {
            let fan_in = (dims[1] * dims[2] * dims[3]).max(1);
            let normal = Normal::new(0.0f64, (2.0 / fan_in as f64).sqrt()).expect("valid std");
            let values: Vec<f64> = (0..var.elem_count()).map(|_| normal.sample(&mut rng)).collect();
            let t = Tensor::from_vec(values, dims, var.device())?.to_dtype(var.dtype())?;
            var.set(&t)?;
        } else if name.ends_with(".bias") {
            var.set(&var.zeros_like()?)?;
        }
    }
    Ok(())
}
