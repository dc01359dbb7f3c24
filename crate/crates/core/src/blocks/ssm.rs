use alloc::format;
use alloc::string::String;

use super::{normal_init, ParamStore, Session};
use crate::autodiff::{ScanAxis, Var};
use crate::error::{Error, Result};
use crate::rng::SeededRng;

pub const MAX_SSM_TAPS: usize = 64;

/// Causal learned-kernel convolution `ṽ(t) = Σ_{τ ≤ t} K_τ v(t − τ)` per
/// channel, applied right after lifting.
///
/// Kernels start at the identity (`K_0 = 1`) with small noise on the
/// remaining taps.
#[derive(Debug, Clone, PartialEq)]
pub struct SsmBlock {
    pub prefix: String,
    pub channels: usize,
    pub taps: usize,
    pub axis: ScanAxis,
}

impl SsmBlock {
    pub fn new(prefix: impl Into<String>, channels: usize, taps: usize, axis: ScanAxis) -> Result<Self> {
        if taps == 0 || taps > MAX_SSM_TAPS {
            return Err(Error::KernelLength {
                len: taps,
                max: MAX_SSM_TAPS,
            });
        }
        Ok(Self {
            prefix: prefix.into(),
            channels,
            taps,
            axis,
        })
    }

    pub fn kernel_name(&self) -> String {
        format!("{}/kernel", self.prefix)
    }

    pub fn param_count(&self) -> usize {
        self.channels * self.taps
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut SeededRng) {
        let mut k = normal_init(&[self.channels, self.taps], 0.02, rng);
        for c in 0..self.channels {
            k.data_mut()[c * self.taps] = 1.0;
        }
        store.insert(self.kernel_name(), k);
    }

    pub fn forward(&self, s: &mut Session, v: Var) -> Result<Var> {
        let k = s.param(&self.kernel_name())?;
        s.tape.causal_conv(v, k, self.axis)
    }
}
