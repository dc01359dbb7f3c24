use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::{normal_init, Activation, ParamStore, Session};
use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

/// Fourier layer `σ(A v + K v + b)` where `K` multiplies the lowest
/// retained wavenumbers by learned complex channel-mixing matrices.
///
/// Retained modes: along the halved last axis the wavenumbers `0..m`; along
/// a leading full axis both `0..m0` and `-m0..0`. The spectrum uses the
/// unnormalized forward / `1/N` inverse convention of [`crate::fft`], so a
/// unit weight on a retained mode passes that mode through unchanged.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralConvLayer {
    pub prefix: String,
    pub width_in: usize,
    pub width_out: usize,
    pub modes: Vec<usize>,
    pub activation: Activation,
}

impl SpectralConvLayer {
    pub fn new(
        prefix: impl Into<String>,
        width_in: usize,
        width_out: usize,
        modes: &[usize],
        activation: Activation,
    ) -> Result<Self> {
        if !(modes.len() == 1 || modes.len() == 2) || modes.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "spectral layer needs 1 or 2 positive mode counts, got {:?}",
                modes
            )));
        }
        Ok(Self {
            prefix: prefix.into(),
            width_in,
            width_out,
            modes: modes.to_vec(),
            activation,
        })
    }

    /// Rejects grids that cannot hold the retained modes below Nyquist.
    pub fn validate_grid(&self, grid: &[usize]) -> Result<()> {
        if grid.len() != self.modes.len() {
            return Err(Error::invalid_shape(
                "spectral_conv",
                format!("{}-D layer applied to grid {:?}", self.modes.len(), grid),
            ));
        }
        for (axis, (&m, &n)) in self.modes.iter().zip(grid).enumerate() {
            if n < 2 * m {
                return Err(Error::ModesExceedNyquist {
                    axis,
                    modes: m,
                    points: n,
                });
            }
        }
        Ok(())
    }

    pub fn weight_shape(&self) -> Vec<usize> {
        let mut s = alloc::vec![self.width_out, self.width_in];
        match self.modes.as_slice() {
            [m] => s.push(*m),
            [m0, m1] => s.extend([2 * m0, *m1]),
            _ => unreachable!("validated in new"),
        }
        s
    }

    pub fn param_count(&self) -> usize {
        let spectral: usize = self.weight_shape().iter().product();
        2 * spectral + self.width_in * self.width_out + self.width_out
    }

    pub fn name(&self, leaf: &str) -> String {
        format!("{}/{}", self.prefix, leaf)
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut SeededRng) {
        let std = libm::sqrt(1.0 / (2.0 * self.width_in as f64));
        let shape = self.weight_shape();
        store.insert(self.name("spectral/w_re"), normal_init(&shape, std, rng));
        store.insert(self.name("spectral/w_im"), normal_init(&shape, std, rng));
        store.insert(
            self.name("pointwise/w"),
            normal_init(&[self.width_out, self.width_in], std, rng),
        );
        store.insert(self.name("pointwise/b"), Tensor::zeros(&[self.width_out]));
    }

    /// Integral term only: `irfft(W · truncate(rfft(v)))`.
    pub fn spectral_conv(&self, s: &mut Session, v: Var) -> Result<Var> {
        let grid = s.tape.value(v).shape()[2..].to_vec();
        self.validate_grid(&grid)?;
        let (wr, wi) = (s.param(&self.name("spectral/w_re"))?, s.param(&self.name("spectral/w_im"))?);
        let spec = s.tape.rfft(v, grid.len())?;
        let mixed = s.tape.spectral_mix(spec, wr, wi)?;
        s.tape.irfft(mixed, &grid)
    }

    /// Full block `σ(A v + b + K v)`.
    pub fn forward(&self, s: &mut Session, v: Var) -> Result<Var> {
        let (w, b) = (s.param(&self.name("pointwise/w"))?, s.param(&self.name("pointwise/b"))?);
        let local = s.tape.linear(v, w)?;
        let local = s.tape.add_bias(local, b)?;
        let integral = self.spectral_conv(s, v)?;
        let sum = s.tape.add(local, integral)?;
        self.activation.apply(s.tape, sum)
    }
}
