use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::str::FromStr;

use crate::autodiff::{ScanAxis, Var};
use crate::blocks::{
    normal_init, Activation, KvMap, ParamStore, PerceiverBlock, PerceiverConfig, Session, SpectralConvLayer,
    SsmBlock,
};
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Architecture {
    Fno,
    MambaFno,
    PerceiverNo,
}

impl Architecture {
    pub fn tag(self) -> &'static str {
        match self {
            Architecture::Fno => "fno",
            Architecture::MambaFno => "mamba_fno",
            Architecture::PerceiverNo => "perceiver_no",
        }
    }

    /// Row label used in reports.
    pub fn label(self) -> &'static str {
        match self {
            Architecture::Fno => "FNO",
            Architecture::MambaFno => "Mamba FNO",
            Architecture::PerceiverNo => "Perc.",
        }
    }
}

impl core::fmt::Display for Architecture {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Architecture::Fno, Architecture::MambaFno, Architecture::PerceiverNo]
            .into_iter()
            .find(|a| a.tag() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown architecture `{s}`")))
    }
}

/// Shape of the shared operator core.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CoreConfig {
    pub architecture: Architecture,
    pub width: usize,
    pub layers: usize,
    /// Retained Fourier modes per spatial axis.
    pub modes: Vec<usize>,
    /// Kernel length of the post-lifting SSM block (`mamba_fno` only).
    pub ssm_taps: usize,
    /// `None` scans the row-major flattened grid.
    pub ssm_axis: Option<usize>,
    pub latents: usize,
    pub self_layers: usize,
    pub heads: usize,
}

impl CoreConfig {
    pub fn new(architecture: Architecture, width: usize, layers: usize, modes: &[usize]) -> Self {
        Self {
            architecture,
            width,
            layers,
            modes: modes.to_vec(),
            ssm_taps: 16,
            ssm_axis: None,
            latents: 64,
            self_layers: 2,
            heads: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Layer {
    Fourier(SpectralConvLayer),
    Perceiver {
        prefix: String,
        block: PerceiverBlock,
        activation: Activation,
        width: usize,
    },
}

/// The task-independent operator `F`: a stack of Fourier layers (optionally
/// preceded by an SSM block) or of Perceiver layers
/// `σ(A v + b + Perceiver(v))`. GELU follows every layer but the last.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorCore {
    pub config: CoreConfig,
    ssm: Option<SsmBlock>,
    layers: Vec<Layer>,
}

impl OperatorCore {
    pub fn new(config: CoreConfig) -> Result<Self> {
        if config.width == 0 || config.layers == 0 {
            return Err(Error::InvalidArgument("core needs positive width and layer count".into()));
        }
        let ssm = match config.architecture {
            Architecture::MambaFno => {
                let axis = config.ssm_axis.map_or(ScanAxis::Flattened, ScanAxis::Axis);
                if let Some(a) = config.ssm_axis {
                    if a >= config.modes.len() {
                        return Err(Error::InvalidArgument(format!("ssm axis {a} out of range")));
                    }
                }
                Some(SsmBlock::new("core/ssm", config.width, config.ssm_taps, axis)?)
            }
            _ => None,
        };
        let mut layers = Vec::with_capacity(config.layers);
        for t in 0..config.layers {
            let activation = if t + 1 == config.layers {
                Activation::Identity
            } else {
                Activation::Gelu
            };
            let prefix = format!("core/layer{t}");
            layers.push(match config.architecture {
                Architecture::Fno | Architecture::MambaFno => Layer::Fourier(SpectralConvLayer::new(
                    prefix,
                    config.width,
                    config.width,
                    &config.modes,
                    activation,
                )?),
                Architecture::PerceiverNo => {
                    let block = PerceiverBlock::new(
                        format!("{prefix}/perceiver"),
                        PerceiverConfig {
                            width: config.width,
                            latents: config.latents,
                            self_layers: config.self_layers,
                            heads: config.heads,
                            kv_map: KvMap::Spectral {
                                modes: config.modes.clone(),
                            },
                        },
                    )?;
                    Layer::Perceiver {
                        prefix,
                        block,
                        activation,
                        width: config.width,
                    }
                }
            });
        }
        Ok(Self { config, ssm, layers })
    }

    pub fn dims(&self) -> usize {
        self.config.modes.len()
    }

    pub fn architecture(&self) -> Architecture {
        self.config.architecture
    }

    pub fn validate_grid(&self, grid: &[usize]) -> Result<()> {
        for layer in &self.layers {
            match layer {
                Layer::Fourier(l) => l.validate_grid(grid)?,
                Layer::Perceiver { block, .. } => block.validate_grid(grid)?,
            }
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        let ssm = self.ssm.as_ref().map_or(0, SsmBlock::param_count);
        ssm + self
            .layers
            .iter()
            .map(|l| match l {
                Layer::Fourier(l) => l.param_count(),
                Layer::Perceiver { block, width, .. } => block.param_count() + width * width + width,
            })
            .sum::<usize>()
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut SeededRng) {
        if let Some(ssm) = &self.ssm {
            ssm.init(store, rng);
        }
        for layer in &self.layers {
            match layer {
                Layer::Fourier(l) => l.init(store, rng),
                Layer::Perceiver { prefix, block, width, .. } => {
                    let std = libm::sqrt(1.0 / *width as f64);
                    store.insert(format!("{prefix}/pointwise/w"), normal_init(&[*width, *width], std, rng));
                    store.insert(format!("{prefix}/pointwise/b"), Tensor::zeros(&[*width]));
                    block.init(store, rng);
                }
            }
        }
    }

    /// `v` is `(B, width, *grid)`.
    pub fn forward(&self, s: &mut Session, v: Var) -> Result<Var> {
        let grid = s.tape.value(v).shape()[2..].to_vec();
        self.validate_grid(&grid)?;
        let mut v = match &self.ssm {
            Some(ssm) => ssm.forward(s, v)?,
            None => v,
        };
        for layer in &self.layers {
            v = match layer {
                Layer::Fourier(l) => l.forward(s, v)?,
                Layer::Perceiver {
                    prefix,
                    block,
                    activation,
                    ..
                } => {
                    let w = s.param(&format!("{prefix}/pointwise/w"))?;
                    let b = s.param(&format!("{prefix}/pointwise/b"))?;
                    let local = s.tape.linear(v, w)?;
                    let local = s.tape.add_bias(local, b)?;
                    let global = block.forward(s, v)?;
                    let sum = s.tape.add(local, global)?;
                    activation.apply(s.tape, sum)?
                }
            };
        }
        Ok(v)
    }
}
