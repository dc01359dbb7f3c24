use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use super::GridSpec;
use crate::error::Result;
use crate::fft::{SpectralPlan, C64};

/// Real FFT on a periodic grid with the physical wavevector of every
/// half-spectrum bin.
pub(crate) struct SpectralGrid {
    plan: SpectralPlan,
    /// Wavevector per bin, `dims` entries each.
    k: Vec<f64>,
    dims: usize,
    /// Bins kept by the two-thirds rule.
    keep: Vec<bool>,
}

impl SpectralGrid {
    pub fn new(spec: &GridSpec) -> Result<Self> {
        let plan = SpectralPlan::new(&spec.points)?;
        let half = plan.half_shape();
        let dims = spec.dims();
        let mut k = Vec::with_capacity(plan.spectral_len() * dims);
        let mut keep = Vec::with_capacity(plan.spectral_len());
        let signed = |i: usize, n: usize| if i <= n / 2 { i as f64 } else { i as f64 - n as f64 };
        match dims {
            1 => {
                for i in 0..half[0] {
                    k.push(2.0 * PI * i as f64 / spec.lengths[0]);
                    keep.push(3 * i < spec.points[0]);
                }
            }
            _ => {
                for r in 0..half[0] {
                    let sr = signed(r, spec.points[0]);
                    for c in 0..half[1] {
                        k.push(2.0 * PI * sr / spec.lengths[0]);
                        k.push(2.0 * PI * c as f64 / spec.lengths[1]);
                        keep.push(3.0 * libm::fabs(sr) < spec.points[0] as f64 && 3 * c < spec.points[1]);
                    }
                }
            }
        }
        Ok(Self { plan, k, dims, keep })
    }

    pub fn len(&self) -> usize {
        self.keep.len()
    }

    pub fn wavevector(&self, bin: usize) -> &[f64] {
        &self.k[bin * self.dims..(bin + 1) * self.dims]
    }

    pub fn k_squared(&self, bin: usize) -> f64 {
        self.wavevector(bin).iter().map(|k| k * k).sum()
    }

    /// Largest wavenumber magnitude among bins kept by dealiasing.
    pub fn dealiased_k_max(&self) -> f64 {
        (0..self.len())
            .filter(|&b| self.keep[b])
            .map(|b| libm::sqrt(self.k_squared(b)))
            .fold(0.0, f64::max)
    }

    pub fn dealias(&self, hat: &mut [C64]) {
        for (h, &keep) in hat.iter_mut().zip(&self.keep) {
            if !keep {
                *h = C64::new(0.0, 0.0);
            }
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<C64> {
        let mut out = vec![C64::new(0.0, 0.0); self.plan.spectral_len()];
        self.plan.forward(x, &mut out);
        out
    }

    pub fn inverse(&self, hat: &[C64]) -> Vec<f64> {
        let mut out = vec![0.0; self.plan.real_len()];
        self.plan.inverse(hat, &mut out);
        out
    }

    /// `exp(-(i k·c + D |k|²) dt)` per bin: one exact step of
    /// advection with velocity `c` and diffusion with coefficient `d`.
    pub fn transport_factor(&self, velocity: &[f64], diffusion: f64, dt: f64) -> Vec<C64> {
        (0..self.len())
            .map(|b| {
                let kc: f64 = self.wavevector(b).iter().zip(velocity).map(|(k, c)| k * c).sum();
                let decay = libm::exp(-diffusion * self.k_squared(b) * dt);
                C64::new(decay * libm::cos(kc * dt), -decay * libm::sin(kc * dt))
            })
            .collect()
    }
}
