use candle_core::Tensor;
use candle_nn::VarBuilder;

use super::blocks::{ConvBnAct, UpConv};
use super::config::NetworkConfig;
use super::FeaturePyramid;
use crate::error::{config_err, shape_err, Result};

/// High-resolution fusion block feeding decoder level `i` (1, 2 or 3).
///
/// Stage 1 brings every encoding `j >= i` to the size of encoding `i`
/// (deeper ones through transposed convolutions with kernel and stride
/// `2^(j-i)`), concatenates and fuses them with a 3x3 convolution. For
/// `i >= 2`, stage 2 average-pools every shallower encoding `j < i` by
/// `2^(i-j)`, projects it with a 1x1 convolution, concatenates it with the
/// stage-1 result and fuses again with a 3x3 convolution.
#[derive(Debug, Clone)]
pub struct Hfb {
    level: usize,
    ups: Vec<UpConv>,
    fuse1: ConvBnAct,
    downs: Vec<(usize, ConvBnAct)>,
    fuse2: Option<ConvBnAct>,
}

impl Hfb {
    pub fn new(level: usize, cfg: &NetworkConfig, vb: VarBuilder) -> Result<Self> {
        if !(1..=3).contains(&level) {
            return Err(config_err!("fusion blocks exist for levels 1-3, not {level}"));
        }
        let slope = cfg.leaky_slope;
        let target = cfg.channels(level);
        let ups = (level + 1..=4)
            .map(|j| {
                let factor = 1 << (j - level);
                UpConv::new(cfg.channels(j), target, factor, slope, vb.pp(format!("up{j}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let fuse1 = ConvBnAct::new((5 - level) * target, target, 3, 1, slope, vb.pp("fuse1"))?;
        let downs = (1..level)
            .map(|j| {
                let factor = 1 << (level - j);
                let proj = ConvBnAct::new(cfg.channels(j), target, 1, 1, slope, vb.pp(format!("down{j}")))?;
                Ok((factor, proj))
            })
            .collect::<Result<Vec<_>>>()?;
        let fuse2 = if level >= 2 {
            Some(ConvBnAct::new(level * target, target, 3, 1, slope, vb.pp("fuse2"))?)
        } else {
            None
        };
        Ok(Self {
            level,
            ups,
            fuse1,
            downs,
            fuse2,
        })
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn forward_t(&self, pyramid: &FeaturePyramid, train: bool) -> Result<Tensor> {
        if pyramid.encodings.len() != 4 {
            return Err(shape_err!("pyramid has {} encodings, expected 4", pyramid.encodings.len()));
        }
        let i = self.level - 1;
        let mut stage1 = vec![pyramid.encodings[i].clone()];
        for (up, enc) in self.ups.iter().zip(&pyramid.encodings[i + 1..]) {
            stage1.push(up.forward_t(enc, train)?);
        }
        let fused = self.fuse1.forward_t(&Tensor::cat(&stage1, 1)?, train)?;
        let Some(fuse2) = &self.fuse2 else {
            return Ok(fused);
        };
        let mut stage2 = vec![fused];
        for ((factor, proj), enc) in self.downs.iter().zip(&pyramid.encodings[..i]) {
            let pooled = enc.avg_pool2d(*factor)?;
            stage2.push(proj.forward_t(&pooled, train)?);
        }
        fuse2.forward_t(&Tensor::cat(&stage2, 1)?, train)
    }
}
