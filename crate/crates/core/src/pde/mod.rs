//! Periodic PDE solvers and dataset generation.
//!
//! All tasks live on periodic 1-D or 2-D boxes. Linear parts are advanced
//! exactly in Fourier space; nonlinear terms are evaluated pointwise.

mod dataset;
mod solvers;
mod spectral;

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

pub(crate) use dataset::gather;
pub use dataset::{make_dataset, ChannelStats, Dataset, GeneratorConfig, TaskKind};
pub use solvers::{
    solve_advection, solve_burgers, solve_gray_scott, solve_heat, solve_heat_convection, solve_rd_advection,
    ReactionParams,
};

use crate::error::{Error, Result};
use crate::fft::C64;
use crate::rng::{self, SeededRng};
use crate::tensor::Tensor;
use spectral::SpectralGrid;

/// Discretization of a periodic box plus a fixed-step time integration.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GridSpec {
    pub points: Vec<usize>,
    pub lengths: Vec<f64>,
    pub dt: f64,
    pub steps: usize,
    /// Keep every `save_every`-th step in the trajectory (the initial and
    /// final states are always kept).
    pub save_every: usize,
}

impl GridSpec {
    pub fn new(points: &[usize], lengths: &[f64], dt: f64, steps: usize) -> Result<Self> {
        let spec = Self {
            points: points.to_vec(),
            lengths: lengths.to_vec(),
            dt,
            steps,
            save_every: steps.max(1),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let dims = self.points.len();
        if !(dims == 1 || dims == 2) || self.lengths.len() != dims {
            return Err(Error::InvalidArgument(format!(
                "grid needs 1 or 2 axes with one length each, got {:?} / {:?}",
                self.points, self.lengths
            )));
        }
        if self.points.iter().any(|&n| n < 2) {
            return Err(Error::InvalidArgument(format!("too few grid points: {:?}", self.points)));
        }
        if self.lengths.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return Err(Error::InvalidArgument("domain lengths must be positive".into()));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("time step {} must be positive", self.dt)));
        }
        if self.save_every == 0 {
            return Err(Error::InvalidArgument("save_every must be at least 1".into()));
        }
        Ok(())
    }

    pub fn dims(&self) -> usize {
        self.points.len()
    }

    pub fn cells(&self) -> usize {
        self.points.iter().product()
    }

    pub fn horizon(&self) -> f64 {
        self.dt * self.steps as f64
    }

    pub fn dx(&self, axis: usize) -> f64 {
        self.lengths[axis] / self.points[axis] as f64
    }

    /// Shape `(channels, *points)`.
    pub fn field_shape(&self, channels: usize) -> Vec<usize> {
        let mut s = vec![channels];
        s.extend_from_slice(&self.points);
        s
    }
}

/// Saved states of one solver run, each `(channels, *grid)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub frames: Vec<Tensor>,
}

impl Trajectory {
    pub(crate) fn start(u0: Tensor) -> Self {
        Self {
            times: vec![0.0],
            frames: vec![u0],
        }
    }

    pub(crate) fn record(&mut self, spec: &GridSpec, step: usize, frame: impl FnOnce() -> Tensor) {
        if step % spec.save_every == 0 || step == spec.steps {
            self.times.push(step as f64 * spec.dt);
            self.frames.push(frame());
        }
    }

    pub fn last(&self) -> &Tensor {
        self.frames.last().expect("trajectory holds the initial state")
    }

    pub fn into_last(mut self) -> Tensor {
        self.frames.pop().expect("trajectory holds the initial state")
    }
}

/// Zero-mean Gaussian random field on the grid of `spec`, shape `points`.
///
/// White noise is filtered by `exp(-|k|² ℓ² / 2)` in Fourier space, the
/// mean mode is removed and the result is scaled to RMS `amplitude`.
pub fn random_field(spec: &GridSpec, length_scale: f64, amplitude: f64, seed: u64) -> Result<Tensor> {
    let mut rng = rng::seeded(seed);
    random_field_with(spec, length_scale, amplitude, &mut rng)
}

pub(crate) fn random_field_with(
    spec: &GridSpec,
    length_scale: f64,
    amplitude: f64,
    rng: &mut SeededRng,
) -> Result<Tensor> {
    if !(length_scale > 0.0) {
        return Err(Error::InvalidArgument(format!("length scale {length_scale} must be positive")));
    }
    spec.validate()?;
    let grid = SpectralGrid::new(spec)?;
    let noise: Vec<f64> = (0..spec.cells()).map(|_| rng::normal(rng)).collect();
    let mut hat = grid.forward(&noise);
    let l2 = length_scale * length_scale;
    for (i, h) in hat.iter_mut().enumerate() {
        *h *= libm::exp(-0.5 * grid.k_squared(i) * l2);
    }
    hat[0] = C64::new(0.0, 0.0);
    let mut field = grid.inverse(&hat);
    let rms = libm::sqrt(field.iter().map(|v| v * v).sum::<f64>() / field.len() as f64);
    if rms > 0.0 {
        let s = amplitude / rms;
        field.iter_mut().for_each(|v| *v *= s);
    }
    Tensor::new(&spec.points, field)
}
