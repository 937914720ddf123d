use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};

/// Ablation variants: A is a plain U-Net, B swaps every level block for a
/// multi-level block, C adds the high-resolution fusion blocks, and D is C
/// trained with the fusion loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    A,
    B,
    C,
    D,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::A, Variant::B, Variant::C, Variant::D];

    /// `(use_mlb, use_hfb)` implied by the variant.
    pub fn toggles(self) -> (bool, bool) {
        match self {
            Variant::A => (false, false),
            Variant::B => (true, false),
            Variant::C | Variant::D => (true, true),
        }
    }

    /// Whether the variant trains with the compound loss rather than MSE.
    pub fn uses_fusion_loss(self) -> bool {
        self == Variant::D
    }
}

impl std::str::FromStr for Variant {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "A" => Ok(Variant::A),
            "B" => Ok(Variant::B),
            "C" => Ok(Variant::C),
            "D" => Ok(Variant::D),
            other => Err(config_err!("unknown variant `{other}`")),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{self:?}")
    }
}

/// Deserialisation accepts any subset of the fields: missing ones come from
/// the preset of `variant` (default D), and an optional `width_divisor`
/// narrows the result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NetworkSpec")]
pub struct NetworkConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    /// Channels of the first encoder level; level `k` has `base << (k - 1)`.
    pub base_channels: usize,
    /// Encoder levels below the bottleneck. Only 4 is supported.
    pub depth: usize,
    pub dilation_rates: [usize; 4],
    pub leaky_slope: f64,
    pub use_mlb: bool,
    pub use_hfb: bool,
    pub variant: Variant,
}

#[derive(Deserialize)]
struct NetworkSpec {
    variant: Option<Variant>,
    in_channels: Option<usize>,
    out_channels: Option<usize>,
    base_channels: Option<usize>,
    depth: Option<usize>,
    dilation_rates: Option<[usize; 4]>,
    leaky_slope: Option<f64>,
    use_mlb: Option<bool>,
    use_hfb: Option<bool>,
    width_divisor: Option<usize>,
}

impl TryFrom<NetworkSpec> for NetworkConfig {
    type Error = crate::error::Error;

    fn try_from(s: NetworkSpec) -> Result<Self> {
        let preset = Self::for_variant(s.variant.unwrap_or(Variant::D));
        let cfg = Self {
            in_channels: s.in_channels.unwrap_or(preset.in_channels),
            out_channels: s.out_channels.unwrap_or(preset.out_channels),
            base_channels: s.base_channels.unwrap_or(preset.base_channels),
            depth: s.depth.unwrap_or(preset.depth),
            dilation_rates: s.dilation_rates.unwrap_or(preset.dilation_rates),
            leaky_slope: s.leaky_slope.unwrap_or(preset.leaky_slope),
            use_mlb: s.use_mlb.unwrap_or(preset.use_mlb),
            use_hfb: s.use_hfb.unwrap_or(preset.use_hfb),
            variant: preset.variant,
        };
        match s.width_divisor {
            Some(d) => cfg.narrowed(d),
            None => Ok(cfg),
        }
    }
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self::for_variant(Variant::D)
    }
}

impl NetworkConfig {
    /// Full-size preset of an ablation variant. Variant A is the half-width
    /// (32-channel) U-Net; the others start from 64 channels.
    pub fn for_variant(variant: Variant) -> Self {
        let (use_mlb, use_hfb) = variant.toggles();
        Self {
            in_channels: 1,
            out_channels: 1,
            base_channels: if variant == Variant::A { 32 } else { 64 },
            depth: 4,
            dilation_rates: [1, 2, 4, 8],
            leaky_slope: 0.01,
            use_mlb,
            use_hfb,
            variant,
        }
    }

    /// Same topology with every channel count divided by `divisor`.
    pub fn narrowed(mut self, divisor: usize) -> Result<Self> {
        if divisor == 0 || self.base_channels % divisor != 0 {
            return Err(config_err!(
                "base_channels {} not divisible by {divisor}",
                self.base_channels
            ));
        }
        self.base_channels /= divisor;
        self.validate()?;
        Ok(self)
    }

    /// Channels of encoder level `level` (1-based); level 5 is the bottleneck.
    pub fn channels(&self, level: usize) -> usize {
        self.base_channels << (level - 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth != 4 {
            return Err(config_err!("depth {} unsupported; only 4 levels", self.depth));
        }
        if self.in_channels == 0 || self.out_channels == 0 || self.base_channels == 0 {
            return Err(config_err!("channel counts must be positive"));
        }
        if self.use_mlb && self.base_channels % 4 != 0 {
            return Err(config_err!(
                "base_channels {} must be divisible by 4 for the multi-level block",
                self.base_channels
            ));
        }
        if self.dilation_rates.iter().any(|&r| r == 0) {
            return Err(config_err!("dilation rates must be positive"));
        }
        if !(self.leaky_slope.is_finite() && self.leaky_slope >= 0.0) {
            return Err(config_err!("leaky slope must be finite and nonnegative"));
        }
        if (self.use_mlb, self.use_hfb) != self.variant.toggles() {
            return Err(config_err!(
                "variant {} requires use_mlb={}, use_hfb={}",
                self.variant,
                self.variant.toggles().0,
                self.variant.toggles().1
            ));
        }
        Ok(())
    }
}
