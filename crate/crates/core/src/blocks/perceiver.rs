use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::{multi_head_attention, normal_init, Activation, ParamStore, Session, SpectralConvLayer};
use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

/// How keys and values for the input cross-attention are computed from the
/// field.
#[derive(Debug, Clone, PartialEq)]
pub enum KvMap {
    /// A Fourier layer without activation (`A v + K v + b`).
    Spectral { modes: Vec<usize> },
    /// Pointwise `A v + b` only; keeps the block permutation-equivariant.
    Pointwise,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerceiverConfig {
    pub width: usize,
    pub latents: usize,
    pub self_layers: usize,
    pub heads: usize,
    pub kv_map: KvMap,
}

impl PerceiverConfig {
    pub fn new(width: usize, modes: &[usize]) -> Self {
        Self {
            width,
            latents: 64,
            self_layers: 2,
            heads: 1,
            kv_map: KvMap::Spectral {
                modes: modes.to_vec(),
            },
        }
    }
}

/// Latent-bottleneck attention block.
///
/// 1. latents (queries) attend to keys/values mapped from the field;
/// 2. `self_layers` rounds of latent self-attention, each followed by a
///    pointwise MLP, both residual;
/// 3. field tokens (queries) attend to the latents, producing a field of
///    the input's grid shape.
///
/// The latent array has a fixed size, so parameter count does not depend on
/// the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PerceiverBlock {
    pub prefix: String,
    pub config: PerceiverConfig,
    to_k: KvLayer,
    to_v: KvLayer,
}

#[derive(Debug, Clone, PartialEq)]
enum KvLayer {
    Spectral(SpectralConvLayer),
    Pointwise { prefix: String, width: usize },
}

impl KvLayer {
    fn new(prefix: String, width: usize, map: &KvMap) -> Result<Self> {
        Ok(match map {
            KvMap::Spectral { modes } => KvLayer::Spectral(SpectralConvLayer::new(
                prefix,
                width,
                width,
                modes,
                Activation::Identity,
            )?),
            KvMap::Pointwise => KvLayer::Pointwise { prefix, width },
        })
    }

    fn param_count(&self) -> usize {
        match self {
            KvLayer::Spectral(l) => l.param_count(),
            KvLayer::Pointwise { width, .. } => width * width + width,
        }
    }

    fn init(&self, store: &mut ParamStore, rng: &mut SeededRng) {
        match self {
            KvLayer::Spectral(l) => l.init(store, rng),
            KvLayer::Pointwise { prefix, width } => {
                let std = libm::sqrt(1.0 / *width as f64);
                store.insert(format!("{prefix}/pointwise/w"), normal_init(&[*width, *width], std, rng));
                store.insert(format!("{prefix}/pointwise/b"), Tensor::zeros(&[*width]));
            }
        }
    }

    fn forward(&self, s: &mut Session, v: Var) -> Result<Var> {
        match self {
            KvLayer::Spectral(l) => l.forward(s, v),
            KvLayer::Pointwise { prefix, .. } => {
                let w = s.param(&format!("{prefix}/pointwise/w"))?;
                let b = s.param(&format!("{prefix}/pointwise/b"))?;
                let y = s.tape.linear(v, w)?;
                s.tape.add_bias(y, b)
            }
        }
    }

    fn validate_grid(&self, grid: &[usize]) -> Result<()> {
        match self {
            KvLayer::Spectral(l) => l.validate_grid(grid),
            KvLayer::Pointwise { .. } => Ok(()),
        }
    }
}

impl PerceiverBlock {
    pub fn new(prefix: impl Into<String>, config: PerceiverConfig) -> Result<Self> {
        let prefix = prefix.into();
        if config.latents == 0 || config.width == 0 {
            return Err(Error::InvalidArgument("perceiver needs latents and width".into()));
        }
        if config.heads == 0 || config.width % config.heads != 0 {
            return Err(Error::InvalidArgument(format!(
                "width {} not divisible by {} heads",
                config.width, config.heads
            )));
        }
        let to_k = KvLayer::new(format!("{prefix}/to_k"), config.width, &config.kv_map)?;
        let to_v = KvLayer::new(format!("{prefix}/to_v"), config.width, &config.kv_map)?;
        Ok(Self {
            prefix,
            config,
            to_k,
            to_v,
        })
    }

    fn name(&self, leaf: &str) -> String {
        format!("{}/{}", self.prefix, leaf)
    }

    pub fn validate_grid(&self, grid: &[usize]) -> Result<()> {
        self.to_k.validate_grid(grid)?;
        self.to_v.validate_grid(grid)
    }

    pub fn param_count(&self) -> usize {
        let d = self.config.width;
        let per_self = 4 * d * d + (d * d + d) * 2;
        self.config.latents * d
            + self.to_k.param_count()
            + self.to_v.param_count()
            + self.config.self_layers * per_self
            + 3 * d * d
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut SeededRng) {
        let d = self.config.width;
        let std = libm::sqrt(1.0 / d as f64);
        store.insert(self.name("latents"), normal_init(&[self.config.latents, d], 1.0, rng));
        self.to_k.init(store, rng);
        self.to_v.init(store, rng);
        for l in 0..self.config.self_layers {
            for w in ["wq", "wk", "wv"] {
                store.insert(self.name(&format!("self{l}/{w}")), normal_init(&[d, d], std, rng));
            }
            // residual branches start small
            store.insert(self.name(&format!("self{l}/wo")), normal_init(&[d, d], 0.1 * std, rng));
            store.insert(self.name(&format!("self{l}/mlp/w1")), normal_init(&[d, d], std, rng));
            store.insert(self.name(&format!("self{l}/mlp/b1")), Tensor::zeros(&[d]));
            store.insert(self.name(&format!("self{l}/mlp/w2")), normal_init(&[d, d], 0.1 * std, rng));
            store.insert(self.name(&format!("self{l}/mlp/b2")), Tensor::zeros(&[d]));
        }
        for w in ["wq", "wk", "wv"] {
            store.insert(self.name(&format!("out/{w}")), normal_init(&[d, d], std, rng));
        }
    }

    fn tokens(s: &mut Session, field: Var) -> Result<Var> {
        let shape = s.tape.value(field).shape().to_vec();
        let points: usize = shape[2..].iter().product();
        let flat = s.tape.reshape(field, &[shape[0], shape[1], points])?;
        s.tape.transpose(flat)
    }

    fn right(&self, s: &mut Session, x: Var, leaf: &str) -> Result<Var> {
        let w = s.param(&self.name(leaf))?;
        s.tape.matmul(x, w)
    }

    pub fn forward(&self, s: &mut Session, v: Var) -> Result<Var> {
        let shape = s.tape.value(v).shape().to_vec();
        if shape.len() < 3 || shape[1] != self.config.width {
            return Err(Error::invalid_shape(
                "perceiver",
                format!("expected (B, {}, *grid), got {:?}", self.config.width, shape),
            ));
        }
        self.validate_grid(&shape[2..])?;
        let heads = self.config.heads;

        let kf = self.to_k.forward(s, v)?;
        let vf = self.to_v.forward(s, v)?;
        let keys = Self::tokens(s, kf)?;
        let values = Self::tokens(s, vf)?;
        let latents = s.param(&self.name("latents"))?;
        let read = multi_head_attention(s.tape, latents, keys, values, heads)?;
        let mut z = s.tape.add(read, latents)?;

        for l in 0..self.config.self_layers {
            let q = self.right(s, z, &format!("self{l}/wq"))?;
            let k = self.right(s, z, &format!("self{l}/wk"))?;
            let val = self.right(s, z, &format!("self{l}/wv"))?;
            let a = multi_head_attention(s.tape, q, k, val, heads)?;
            let a = self.right(s, a, &format!("self{l}/wo"))?;
            z = s.tape.add(z, a)?;
            let h = self.right(s, z, &format!("self{l}/mlp/w1"))?;
            let b1 = s.param(&self.name(&format!("self{l}/mlp/b1")))?;
            let h = s.tape.add(h, b1)?;
            let h = s.tape.gelu(h)?;
            let h = self.right(s, h, &format!("self{l}/mlp/w2"))?;
            let b2 = s.param(&self.name(&format!("self{l}/mlp/b2")))?;
            let h = s.tape.add(h, b2)?;
            z = s.tape.add(z, h)?;
        }

        let x_tokens = Self::tokens(s, v)?;
        let q = self.right(s, x_tokens, "out/wq")?;
        let k = self.right(s, z, "out/wk")?;
        let val = self.right(s, z, "out/wv")?;
        let written = multi_head_attention(s.tape, q, k, val, heads)?;
        let fields = s.tape.transpose(written)?;
        s.tape.reshape(fields, &shape)
    }
}
