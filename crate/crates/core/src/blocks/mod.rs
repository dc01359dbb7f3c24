//! Differentiable operator building blocks.
//!
//! Every block is a small configuration struct naming its parameters under
//! a prefix. Parameters live in a [`ParamStore`]; a forward pass pulls them
//! onto a tape through a [`Session`]. Tensors flowing between blocks use
//! the batched field layout `(batch, channels, *grid)`.

mod attention;
mod params;
mod perceiver;
mod pointwise;
mod spectral;
mod ssm;

use alloc::vec::Vec;

pub use attention::{attention, attention_weights, multi_head_attention};
pub use params::{normal_init, ParamStore, Session, Trainable};
pub use perceiver::{KvMap, PerceiverBlock, PerceiverConfig};
pub use pointwise::{LiftingMap, PointwiseMlp, ProjectionMap};
pub use spectral::SpectralConvLayer;
pub use ssm::{SsmBlock, MAX_SSM_TAPS};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Gelu,
    Identity,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: Var) -> Result<Var> {
        match self {
            Activation::Gelu => tape.gelu(x),
            Activation::Identity => Ok(x),
        }
    }
}

/// Scalar fields sampled on a uniform periodic 1-D or 2-D grid.
///
/// `values` has shape `(channels, *grid)`; `lengths` are the physical
/// extents of the periodic domain per axis.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    values: Tensor,
    lengths: Vec<f64>,
}

impl GridField {
    pub fn new(values: Tensor, lengths: &[f64]) -> Result<Self> {
        let dims = values.rank().saturating_sub(1);
        if !(dims == 1 || dims == 2) || lengths.len() != dims || values.shape()[0] == 0 {
            return Err(Error::invalid_shape(
                "grid_field",
                alloc::format!(
                    "values {:?} need (channels, *grid) with {} domain lengths",
                    values.shape(),
                    lengths.len()
                ),
            ));
        }
        if lengths.iter().any(|&l| !(l > 0.0)) {
            return Err(Error::InvalidArgument("domain lengths must be positive".into()));
        }
        Ok(Self {
            values,
            lengths: lengths.to_vec(),
        })
    }

    /// Unit-length domain on every axis.
    pub fn unit(values: Tensor) -> Result<Self> {
        let dims = values.rank().saturating_sub(1);
        Self::new(values, &alloc::vec![1.0; dims])
    }

    pub fn channels(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn grid(&self) -> &[usize] {
        &self.values.shape()[1..]
    }

    pub fn dims(&self) -> usize {
        self.lengths.len()
    }

    pub fn lengths(&self) -> &[f64] {
        &self.lengths
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn into_values(self) -> Tensor {
        self.values
    }

    /// The field as a batch of one, `(1, channels, *grid)`.
    pub fn batched(&self) -> Tensor {
        let mut shape = alloc::vec![1];
        shape.extend_from_slice(self.values.shape());
        self.values.clone().reshape(&shape).expect("same element count")
    }

    /// Periodic shift by whole grid cells: `out[i] = in[i - shift]`.
    pub fn roll(&self, shift: &[isize]) -> GridField {
        let grid = self.grid().to_vec();
        let plane: usize = grid.iter().product();
        let mut out = alloc::vec![0.0; self.values.len()];
        for c in 0..self.channels() {
            for idx in 0..plane {
                let mut src = 0;
                let mut rem = idx;
                let mut stride = plane;
                for (a, &n) in grid.iter().enumerate() {
                    stride /= n;
                    let pos = rem / stride;
                    rem %= stride;
                    let s = shift.get(a).copied().unwrap_or(0);
                    let from = (pos as isize - s).rem_euclid(n as isize) as usize;
                    src += from * stride;
                }
                out[c * plane + idx] = self.values.data()[c * plane + src];
            }
        }
        GridField {
            values: Tensor::new(self.values.shape(), out).expect("same shape"),
            lengths: self.lengths.clone(),
        }
    }
}

/// Normalized grid coordinates `x_i / L_i ∈ [0, 1)` as `(dims, *grid)`.
pub fn coordinate_channels(grid: &[usize]) -> Tensor {
    let plane: usize = grid.iter().product();
    let mut data = Vec::with_capacity(grid.len() * plane);
    for axis in 0..grid.len() {
        let inner: usize = grid[axis + 1..].iter().product();
        for idx in 0..plane {
            let pos = (idx / inner) % grid[axis];
            data.push(pos as f64 / grid[axis] as f64);
        }
    }
    let mut shape = alloc::vec![grid.len()];
    shape.extend_from_slice(grid);
    Tensor::new(&shape, data).expect("coordinate shape")
}

/// Runs `f` on a single field through a fresh tape with frozen parameters.
pub fn apply_to_field<F>(params: &ParamStore, field: &GridField, f: F) -> Result<GridField>
where
    F: FnOnce(&mut Session, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let x = tape.constant(field.batched());
    let mut session = Session::new(&mut tape, params, Trainable::Nothing);
    let y = f(&mut session, x)?;
    let out = tape.value(y).clone();
    let shape = out.shape()[1..].to_vec();
    GridField::new(out.reshape(&shape)?, field.lengths())
}
