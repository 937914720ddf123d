use candle_core::Tensor;
use candle_nn::{
    conv2d_no_bias, conv_transpose2d_no_bias, Conv2d, Conv2dConfig, ConvTranspose2d, ConvTranspose2dConfig, VarBuilder,
};

use super::act::leaky_relu;
use super::im2col::{conv2d_same, conv2d_same_eval, conv_transpose_disjoint};
use super::norm::BatchNorm2d;
use crate::error::{config_err, Result};

/// Convolution, batch normalisation and leaky ReLU.
#[derive(Debug, Clone)]
pub struct ConvBnAct {
    conv: Conv2d,
    bn: BatchNorm2d,
    dilation: usize,
    slope: f64,
}

impl ConvBnAct {
    pub fn new(
        cin: usize,
        cout: usize,
        kernel: usize,
        dilation: usize,
        slope: f64,
        vb: VarBuilder,
    ) -> Result<Self> {
        let cfg = Conv2dConfig {
            padding: dilation * (kernel / 2),
            dilation,
            ..Default::default()
        };
        Ok(Self {
            conv: conv2d_no_bias(cin, cout, kernel, cfg, vb.pp("conv"))?,
            bn: BatchNorm2d::new(cout, vb.pp("bn"))?,
            dilation,
            slope,
        })
    }

    pub fn conv(&self) -> &Conv2d {
        &self.conv
    }

    pub fn forward_t(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let y = if train {
            conv2d_same(x, self.conv.weight(), self.dilation)?
        } else {
            conv2d_same_eval(x, self.conv.weight(), self.dilation)?
        };
        let y = self.bn.forward_t(&y, train)?;
        Ok(leaky_relu(&y, self.slope)?)
    }
}

/// Transposed convolution with `kernel = stride = factor`, then batch norm
/// and leaky ReLU. Enlarges the feature map by `factor`.
#[derive(Debug, Clone)]
pub struct UpConv {
    conv: ConvTranspose2d,
    bn: BatchNorm2d,
    slope: f64,
}

impl UpConv {
    pub fn new(cin: usize, cout: usize, factor: usize, slope: f64, vb: VarBuilder) -> Result<Self> {
        let cfg = ConvTranspose2dConfig {
            stride: factor,
            ..Default::default()
        };
        Ok(Self {
            conv: conv_transpose2d_no_bias(cin, cout, factor, cfg, vb.pp("conv"))?,
            bn: BatchNorm2d::new(cout, vb.pp("bn"))?,
            slope,
        })
    }

    pub fn forward_t(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let y = self.bn.forward_t(&conv_transpose_disjoint(x, self.conv.weight())?, train)?;
        Ok(leaky_relu(&y, self.slope)?)
    }
}

/// Two 3x3 convolutions: the plain U-Net level block.
#[derive(Debug, Clone)]
pub struct DoubleConv {
    first: ConvBnAct,
    second: ConvBnAct,
}

impl DoubleConv {
    pub fn new(cin: usize, cout: usize, slope: f64, vb: VarBuilder) -> Result<Self> {
        Ok(Self {
            first: ConvBnAct::new(cin, cout, 3, 1, slope, vb.pp("conv1"))?,
            second: ConvBnAct::new(cout, cout, 3, 1, slope, vb.pp("conv2"))?,
        })
    }

    pub fn forward_t(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        self.second.forward_t(&self.first.forward_t(x, train)?, train)
    }
}

/// Multi-level convolution block.
///
/// Four parallel 3x3 dilated convolutions (`cout / 4` channels each) are
/// concatenated and added to a skip branch (identity, or 1x1 conv + BN when
/// the channel count changes); a leaky ReLU follows the sum.
#[derive(Debug, Clone)]
pub struct Mlb {
    branches: Vec<ConvBnAct>,
    skip: Option<(Conv2d, BatchNorm2d)>,
    slope: f64,
}

impl Mlb {
    pub fn new(
        cin: usize,
        cout: usize,
        dilations: &[usize; 4],
        slope: f64,
        vb: VarBuilder,
    ) -> Result<Self> {
        if cout % 4 != 0 {
            return Err(config_err!("multi-level block output {cout} not divisible by 4"));
        }
        let branches = dilations
            .iter()
            .enumerate()
            .map(|(i, &d)| ConvBnAct::new(cin, cout / 4, 3, d, slope, vb.pp(format!("branch{i}"))))
            .collect::<Result<Vec<_>>>()?;
        let skip = if cin == cout {
            None
        } else {
            let conv = conv2d_no_bias(cin, cout, 1, Conv2dConfig::default(), vb.pp("skip.conv"))?;
            let bn = BatchNorm2d::new(cout, vb.pp("skip.bn"))?;
            Some((conv, bn))
        };
        Ok(Self {
            branches,
            skip,
            slope,
        })
    }

    pub fn branch(&self, i: usize) -> &ConvBnAct {
        &self.branches[i]
    }

    pub fn skip_t(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        Ok(match &self.skip {
            None => x.clone(),
            Some((conv, bn)) if train => bn.forward_t(&conv2d_same(x, conv.weight(), 1)?, true)?,
            Some((conv, bn)) => bn.forward_t(&conv2d_same_eval(x, conv.weight(), 1)?, false)?,
        })
    }

    pub fn forward_t(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let outs = self
            .branches
            .iter()
            .map(|b| b.forward_t(x, train))
            .collect::<Result<Vec<_>>>()?;
        let fused = Tensor::cat(&outs, 1)?;
        Ok(leaky_relu(&(fused + self.skip_t(x, train)?)?, self.slope)?)
    }
}

/// Level block of the backbone: plain double convolution or multi-level block.
#[derive(Debug, Clone)]
pub enum LevelBlock {
    Plain(DoubleConv),
    Mlb(Mlb),
}

impl LevelBlock {
    pub fn forward_t(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        match self {
            LevelBlock::Plain(b) => b.forward_t(x, train),
            LevelBlock::Mlb(b) => b.forward_t(x, train),
        }
    }

    pub fn as_mlb(&self) -> Option<&Mlb> {
        match self {
            LevelBlock::Mlb(b) => Some(b),
            LevelBlock::Plain(_) => None,
        }
    }
}
