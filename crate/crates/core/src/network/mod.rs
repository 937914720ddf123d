//! The U-shaped high-resolution network and its ablation variants.
//!
//! Four encoder levels (level block, then 2x2 max pooling) lead to a
//! bottleneck block; four decoder levels upsample with a stride-2 transposed
//! convolution, concatenate a lateral input and apply a level block. Lateral
//! inputs of levels 1-3 come from high-resolution fusion blocks when enabled,
//! level 4 always uses the raw encoder skip. A 1x1 convolution maps the last
//! decoder output to the output channels.

mod act;
mod blocks;
mod config;
mod hfb;
mod im2col;
mod init;
mod norm;

pub use blocks::{ConvBnAct, DoubleConv, LevelBlock, Mlb, UpConv};
pub use config::{NetworkConfig, Variant};
pub use hfb::Hfb;
pub use im2col::{conv2d_same, conv_transpose_disjoint};
pub use norm::BatchNorm2d;

use std::path::Path;

use candle_core::{DType, Device, Module, Tensor, Var};
use candle_nn::{conv2d, Conv2d, Conv2dConfig, VarBuilder, VarMap};
use ndarray::Array2;

use crate::error::{shape_err, Error, Result};

/// Encoder outputs at scales 1, 1/2, 1/4, 1/8 and the 1/16 bottleneck.
#[derive(Debug, Clone)]
pub struct FeaturePyramid {
    pub encodings: Vec<Tensor>,
    pub bottleneck: Tensor,
}

struct Model {
    encoders: Vec<LevelBlock>,
    bottleneck: LevelBlock,
    ups: Vec<UpConv>,
    decoders: Vec<LevelBlock>,
    hfbs: Vec<Hfb>,
    head: Conv2d,
}

fn level_block(cfg: &NetworkConfig, cin: usize, cout: usize, vb: VarBuilder) -> Result<LevelBlock> {
    Ok(if cfg.use_mlb {
        LevelBlock::Mlb(Mlb::new(cin, cout, &cfg.dilation_rates, cfg.leaky_slope, vb)?)
    } else {
        LevelBlock::Plain(DoubleConv::new(cin, cout, cfg.leaky_slope, vb)?)
    })
}

impl Model {
    fn new(cfg: &NetworkConfig, vb: VarBuilder) -> Result<Self> {
        let ch = |l: usize| cfg.channels(l);
        let mut encoders = Vec::with_capacity(4);
        for level in 1..=4 {
            let cin = if level == 1 { cfg.in_channels } else { ch(level - 1) };
            encoders.push(level_block(cfg, cin, ch(level), vb.pp(format!("enc{level}")))?);
        }
        let bottleneck = level_block(cfg, ch(4), ch(5), vb.pp("bottleneck"))?;
        let mut ups = Vec::with_capacity(4);
        let mut decoders = Vec::with_capacity(4);
        for level in 1..=4 {
            ups.push(UpConv::new(ch(level + 1), ch(level), 2, cfg.leaky_slope, vb.pp(format!("up{level}")))?);
            decoders.push(level_block(cfg, 2 * ch(level), ch(level), vb.pp(format!("dec{level}")))?);
        }
        let hfbs = if cfg.use_hfb {
            (1..=3)
                .map(|l| Hfb::new(l, cfg, vb.pp(format!("hfb{l}"))))
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        let head = conv2d(ch(1), cfg.out_channels, 1, Conv2dConfig::default(), vb.pp("head"))?;
        Ok(Self {
            encoders,
            bottleneck,
            ups,
            decoders,
            hfbs,
            head,
        })
    }

    fn encode(&self, x: &Tensor, train: bool, detach: bool) -> Result<FeaturePyramid> {
        let cut = |t: Tensor| if detach { t.detach() } else { t };
        let mut encodings = Vec::with_capacity(4);
        let mut y = x.clone();
        for (level, block) in self.encoders.iter().enumerate() {
            let input = if level == 0 { y } else { y.max_pool2d(2)? };
            y = cut(block.forward_t(&input, train)?);
            encodings.push(y.clone());
        }
        let bottleneck = cut(self.bottleneck.forward_t(&y.max_pool2d(2)?, train)?);
        Ok(FeaturePyramid {
            encodings,
            bottleneck,
        })
    }

    fn forward(&self, x: &Tensor, train: bool, detach: bool) -> Result<Tensor> {
        let cut = |t: Tensor| if detach { t.detach() } else { t };
        let pyramid = self.encode(x, train, detach)?;
        let mut laterals = Vec::with_capacity(4);
        for level in 0..4 {
            laterals.push(match self.hfbs.get(level) {
                Some(hfb) => cut(hfb.forward_t(&pyramid, train)?),
                None => pyramid.encodings[level].clone(),
            });
        }
        let mut y = pyramid.bottleneck.clone();
        drop(pyramid);
        for level in (0..4).rev() {
            let up = self.ups[level].forward_t(&y, train)?;
            let joined = Tensor::cat(&[&up, &laterals[level]], 1)?;
            y = cut(self.decoders[level].forward_t(&joined, train)?);
            laterals.truncate(level);
        }
        Ok(self.head.forward(&y)?)
    }
}

/// A built network with its variables.
pub struct Network {
    cfg: NetworkConfig,
    varmap: VarMap,
    model: Model,
    device: Device,
}

impl std::fmt::Debug for Network {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Network")
            .field("cfg", &self.cfg)
            .field("parameters", &self.count_parameters())
            .finish()
    }
}

/// Builds a network on the CPU with deterministic weights drawn from `seed`.
pub fn build_network(cfg: &NetworkConfig, seed: u64) -> Result<Network> {
    Network::new(cfg, seed)
}

/// Number of trainable scalars.
pub fn count_parameters(net: &Network) -> usize {
    net.count_parameters()
}

fn is_running_stat(name: &str) -> bool {
    name.ends_with("running_mean") || name.ends_with("running_var")
}

impl Network {
    pub fn new(cfg: &NetworkConfig, seed: u64) -> Result<Self> {
        Self::with_dtype(cfg, seed, DType::F32)
    }

    pub fn with_dtype(cfg: &NetworkConfig, seed: u64, dtype: DType) -> Result<Self> {
        cfg.validate()?;
        let device = Device::Cpu;
        let varmap = VarMap::new();
        let vb = VarBuilder::from_varmap(&varmap, dtype, &device);
        let model = Model::new(cfg, vb)?;
        let net = Self {
            cfg: cfg.clone(),
            varmap,
            model,
            device,
        };
        init::reinitialize(&net.named_vars(), seed)?;
        Ok(net)
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.cfg
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn varmap(&self) -> &VarMap {
        &self.varmap
    }

    /// All variables sorted by name, including batch-norm running statistics.
    pub fn named_vars(&self) -> Vec<(String, Var)> {
        let data = self.varmap.data().lock().expect("var map lock poisoned");
        let mut vars: Vec<(String, Var)> = data.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        vars.sort_by(|a, b| a.0.cmp(&b.0));
        vars
    }

    /// Trainable variables sorted by name.
    pub fn trainable_vars(&self) -> Vec<(String, Var)> {
        self.named_vars()
            .into_iter()
            .filter(|(name, _)| !is_running_stat(name))
            .collect()
    }

    pub fn count_parameters(&self) -> usize {
        self.trainable_vars().iter().map(|(_, v)| v.elem_count()).sum()
    }

    pub fn encoder_block(&self, level: usize) -> Option<&LevelBlock> {
        self.model.encoders.get(level.checked_sub(1)?)
    }

    pub fn hfb(&self, level: usize) -> Option<&Hfb> {
        self.model.hfbs.get(level.checked_sub(1)?)
    }

    /// Rejects inputs that are not `(B, in_channels, H, W)` with `H` and `W`
    /// divisible by 16.
    pub fn check_input(&self, x: &Tensor) -> Result<()> {
        let dims = x.dims();
        if dims.len() != 4 {
            return Err(shape_err!("expected a (B, C, H, W) input, got {dims:?}"));
        }
        let (b, c, h, w) = (dims[0], dims[1], dims[2], dims[3]);
        if b == 0 || c != self.cfg.in_channels {
            return Err(shape_err!(
                "input {dims:?} needs a non-empty batch of {} channel(s)",
                self.cfg.in_channels
            ));
        }
        if h == 0 || w == 0 || h % 16 != 0 || w % 16 != 0 {
            return Err(shape_err!("input size {h}x{w} is not divisible by 16"));
        }
        Ok(())
    }

    pub fn pyramid(&self, x: &Tensor, train: bool) -> Result<FeaturePyramid> {
        self.check_input(x)?;
        self.model.encode(x, train, false)
    }

    /// Forward pass keeping the autograd graph. In training mode batch norm
    /// uses batch statistics and updates its running averages.
    pub fn forward_t(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        self.check_input(x)?;
        self.model.forward(x, train, false)
    }

    /// Evaluation-mode forward pass that releases intermediate activations
    /// block by block; the result carries no gradient.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        Ok(self.model.forward(x, false, true)?.detach())
    }

    /// Predicts a normalised height map from one fringe image.
    pub fn predict(&self, fringe: &Array2<f32>) -> Result<Array2<f32>> {
        let (h, w) = fringe.dim();
        let data: Vec<f32> = fringe.iter().copied().collect();
        let x = Tensor::from_vec(data, (1, 1, h, w), &self.device)?.to_dtype(self.dtype())?;
        let y = self.infer(&x)?;
        let out = y.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
        Array2::from_shape_vec((h, w), out[..h * w].to_vec()).map_err(|e| shape_err!("{e}"))
    }

    pub fn dtype(&self) -> DType {
        self.named_vars().first().map_or(DType::F32, |(_, v)| v.dtype())
    }

    /// Writes all variables (weights and running statistics) as safetensors.
    pub fn save_weights(&self, path: &Path) -> Result<()> {
        self.varmap.save(path).map_err(Error::from)
    }

    pub fn load_weights(&mut self, path: &Path) -> Result<()> {
        if !path.is_file() {
            return Err(Error::io(
                path,
                std::io::Error::new(std::io::ErrorKind::NotFound, "weights file not found"),
            ));
        }
        self.varmap.load(path).map_err(Error::from)
    }

    /// Copies every variable value from `other`, which must share the config.
    pub fn copy_weights_from(&self, other: &Network) -> Result<()> {
        if self.cfg != other.cfg {
            return Err(Error::Config("cannot copy weights across configs".into()));
        }
        for ((_, dst), (_, src)) in self.named_vars().iter().zip(other.named_vars()) {
            dst.set(&src.as_tensor().copy()?)?;
        }
        Ok(())
    }
}
