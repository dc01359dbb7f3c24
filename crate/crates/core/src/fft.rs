//! Complex and real-input FFTs.
//!
//! Convention used everywhere in the crate: the forward transform is
//! unnormalized, `X_k = Σ_n x_n e^{-2πi kn/N}`, and the inverse carries the
//! `1/N` factor. Real transforms keep only the non-redundant half spectrum
//! (`N/2 + 1` bins) along the last spatial axis.
//!
//! Power-of-two lengths use an iterative radix-2 kernel; any other length
//! goes through Bluestein's chirp-z reformulation on a padded power of two.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub type C64 = Complex64;

fn cis(theta: f64) -> C64 {
    C64::new(libm::cos(theta), libm::sin(theta))
}

/// Precomputed complex FFT of a fixed length.
#[derive(Debug, Clone)]
pub struct FftPlan {
    n: usize,
    kind: PlanKind,
}

#[derive(Debug, Clone)]
enum PlanKind {
    Trivial,
    Radix2 {
        twiddles: Vec<C64>,
        bitrev: Vec<usize>,
    },
    Bluestein {
        chirp: Vec<C64>,
        filter_hat: Vec<C64>,
        inner: Box<FftPlan>,
    },
}

impl FftPlan {
    pub fn new(n: usize) -> Self {
        assert!(n > 0, "fft length must be positive");
        let kind = if n == 1 {
            PlanKind::Trivial
        } else if n.is_power_of_two() {
            let bits = n.trailing_zeros();
            let bitrev = (0..n)
                .map(|i| i.reverse_bits() >> (usize::BITS - bits))
                .collect();
            let twiddles = (0..n / 2)
                .map(|k| cis(-2.0 * PI * k as f64 / n as f64))
                .collect();
            PlanKind::Radix2 { twiddles, bitrev }
        } else {
            let m = (2 * n - 1).next_power_of_two();
            // n² mod 2n keeps the chirp phase argument small
            let chirp: Vec<C64> = (0..n)
                .map(|k| {
                    let q = (k as u128 * k as u128 % (2 * n as u128)) as f64;
                    cis(-PI * q / n as f64)
                })
                .collect();
            let mut filter = vec![C64::new(0.0, 0.0); m];
            filter[0] = chirp[0].conj();
            for k in 1..n {
                filter[k] = chirp[k].conj();
                filter[m - k] = chirp[k].conj();
            }
            let inner = FftPlan::new(m);
            inner.forward(&mut filter);
            PlanKind::Bluestein {
                chirp,
                filter_hat: filter,
                inner: Box::new(inner),
            }
        };
        Self { n, kind }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// In-place unnormalized forward transform.
    pub fn forward(&self, buf: &mut [C64]) {
        debug_assert_eq!(buf.len(), self.n);
        match &self.kind {
            PlanKind::Trivial => {}
            PlanKind::Radix2 { twiddles, bitrev } => radix2(buf, twiddles, bitrev),
            PlanKind::Bluestein {
                chirp,
                filter_hat,
                inner,
            } => {
                let m = filter_hat.len();
                let mut work = vec![C64::new(0.0, 0.0); m];
                for (w, (x, c)) in work.iter_mut().zip(buf.iter().zip(chirp)) {
                    *w = x * c;
                }
                inner.forward(&mut work);
                for (w, f) in work.iter_mut().zip(filter_hat) {
                    *w *= f;
                }
                inner.inverse(&mut work);
                let scale = 1.0 / m as f64;
                for (k, x) in buf.iter_mut().enumerate() {
                    *x = work[k] * chirp[k] * scale;
                }
            }
        }
    }

    /// In-place unnormalized inverse transform (`e^{+2πi kn/N}`, no `1/N`).
    pub fn inverse(&self, buf: &mut [C64]) {
        buf.iter_mut().for_each(|x| *x = x.conj());
        self.forward(buf);
        buf.iter_mut().for_each(|x| *x = x.conj());
    }
}

fn radix2(buf: &mut [C64], twiddles: &[C64], bitrev: &[usize]) {
    let n = buf.len();
    for i in 0..n {
        let j = bitrev[i];
        if i < j {
            buf.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        let step = n / len;
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let w = twiddles[k * step];
                let a = buf[start + k];
                let b = buf[start + k + half] * w;
                buf[start + k] = a + b;
                buf[start + k + half] = a - b;
            }
        }
        len <<= 1;
    }
}

/// Real-input transform over one or two trailing spatial axes.
///
/// Half-spectrum layout is `[N/2+1]` in 1-D and `[N0, N1/2+1]` in 2-D
/// (row-major), i.e. the full axis comes first.
#[derive(Debug, Clone)]
pub struct SpectralPlan {
    shape: Vec<usize>,
    row: FftPlan,
    col: Option<FftPlan>,
}

impl SpectralPlan {
    pub fn new(shape: &[usize]) -> Result<Self> {
        match shape {
            [n] if *n > 0 => Ok(Self {
                shape: shape.to_vec(),
                row: FftPlan::new(*n),
                col: None,
            }),
            [n0, n1] if *n0 > 0 && *n1 > 0 => Ok(Self {
                shape: shape.to_vec(),
                row: FftPlan::new(*n1),
                col: Some(FftPlan::new(*n0)),
            }),
            _ => Err(Error::invalid_shape(
                "fft",
                alloc::format!("spatial shape {:?} must be 1-D or 2-D and nonempty", shape),
            )),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn half_shape(&self) -> Vec<usize> {
        let mut h = self.shape.clone();
        let last = h.len() - 1;
        h[last] = h[last] / 2 + 1;
        h
    }

    pub fn real_len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn spectral_len(&self) -> usize {
        self.half_shape().iter().product()
    }

    /// Unnormalized forward real transform of one field.
    pub fn forward(&self, x: &[f64], out: &mut [C64]) {
        let n1 = *self.shape.last().unwrap();
        let h = n1 / 2 + 1;
        let rows = self.real_len() / n1;
        let mut buf = vec![C64::new(0.0, 0.0); n1];
        for r in 0..rows {
            for (b, &v) in buf.iter_mut().zip(&x[r * n1..(r + 1) * n1]) {
                *b = C64::new(v, 0.0);
            }
            self.row.forward(&mut buf);
            out[r * h..(r + 1) * h].copy_from_slice(&buf[..h]);
        }
        if let Some(col) = &self.col {
            self.columns(out, rows, h, |b| col.forward(b));
        }
    }

    /// Normalized inverse of [`SpectralPlan::forward`]. Imaginary parts of
    /// the self-conjugate bins (DC and Nyquist of the last axis) are ignored.
    pub fn inverse(&self, spec: &[C64], out: &mut [f64]) {
        let n1 = *self.shape.last().unwrap();
        let h = n1 / 2 + 1;
        let rows = self.real_len() / n1;
        let mut work = spec[..rows * h].to_vec();
        if let Some(col) = &self.col {
            self.columns(&mut work, rows, h, |b| col.inverse(b));
        }
        let scale = 1.0 / self.real_len() as f64;
        let mut buf = vec![C64::new(0.0, 0.0); n1];
        for r in 0..rows {
            let half = &work[r * h..(r + 1) * h];
            buf[0] = C64::new(half[0].re, 0.0);
            for k in 1..h {
                buf[k] = half[k];
                if n1 - k != k {
                    buf[n1 - k] = half[k].conj();
                }
            }
            if n1 % 2 == 0 {
                buf[n1 / 2] = C64::new(half[n1 / 2].re, 0.0);
            }
            self.row.inverse(&mut buf);
            for (o, b) in out[r * n1..(r + 1) * n1].iter_mut().zip(&buf) {
                *o = b.re * scale;
            }
        }
    }

    fn columns(&self, data: &mut [C64], rows: usize, h: usize, f: impl Fn(&mut [C64])) {
        let mut buf = vec![C64::new(0.0, 0.0); rows];
        for c in 0..h {
            for r in 0..rows {
                buf[r] = data[r * h + c];
            }
            f(&mut buf);
            for r in 0..rows {
                data[r * h + c] = buf[r];
            }
        }
    }
}

/// Complex array stored as separate real and imaginary tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexTensor {
    pub real: Tensor,
    pub imag: Tensor,
}

impl ComplexTensor {
    pub fn new(real: Tensor, imag: Tensor) -> Result<Self> {
        if real.shape() != imag.shape() {
            return Err(Error::shape("complex", real.shape(), imag.shape()));
        }
        Ok(Self { real, imag })
    }

    pub fn shape(&self) -> &[usize] {
        self.real.shape()
    }

    pub fn get(&self, flat: usize) -> C64 {
        C64::new(self.real.data()[flat], self.imag.data()[flat])
    }
}

/// Forward real transform over the trailing `spatial_dims` axes of `x`;
/// leading axes are batched.
pub fn rfft(x: &Tensor, spatial_dims: usize) -> Result<ComplexTensor> {
    if spatial_dims == 0 || spatial_dims > 2 || x.rank() < spatial_dims {
        return Err(Error::invalid_shape(
            "rfft",
            alloc::format!("cannot take {}-D transform of shape {:?}", spatial_dims, x.shape()),
        ));
    }
    let split = x.rank() - spatial_dims;
    let plan = SpectralPlan::new(&x.shape()[split..])?;
    let batch: usize = x.shape()[..split].iter().product();
    let (rl, sl) = (plan.real_len(), plan.spectral_len());
    let mut spec = vec![C64::new(0.0, 0.0); batch * sl];
    for b in 0..batch {
        plan.forward(&x.data()[b * rl..(b + 1) * rl], &mut spec[b * sl..(b + 1) * sl]);
    }
    let mut shape = x.shape()[..split].to_vec();
    shape.extend(plan.half_shape());
    ComplexTensor::new(
        Tensor::new(&shape, spec.iter().map(|c| c.re).collect())?,
        Tensor::new(&shape, spec.iter().map(|c| c.im).collect())?,
    )
}

/// Inverse of [`rfft`] for the requested spatial shape.
pub fn irfft(c: &ComplexTensor, spatial: &[usize]) -> Result<Tensor> {
    let plan = SpectralPlan::new(spatial)?;
    let half = plan.half_shape();
    let rank = c.shape().len();
    if rank < half.len() || c.shape()[rank - half.len()..] != half[..] {
        return Err(Error::ShapeMismatch {
            op: "irfft",
            left: c.shape().to_vec(),
            right: half,
        });
    }
    let split = rank - half.len();
    let batch: usize = c.shape()[..split].iter().product();
    let (rl, sl) = (plan.real_len(), plan.spectral_len());
    let mut out = vec![0.0; batch * rl];
    let mut spec = vec![C64::new(0.0, 0.0); sl];
    for b in 0..batch {
        for (k, s) in spec.iter_mut().enumerate() {
            *s = c.get(b * sl + k);
        }
        plan.inverse(&spec, &mut out[b * rl..(b + 1) * rl]);
    }
    let mut shape = c.shape()[..split].to_vec();
    shape.extend_from_slice(spatial);
    Tensor::new(&shape, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn naive_dft(x: &[C64]) -> Vec<C64> {
        let n = x.len();
        (0..n)
            .map(|k| {
                x.iter()
                    .enumerate()
                    .map(|(j, v)| v * cis(-2.0 * PI * ((k * j) % n) as f64 / n as f64))
                    .sum()
            })
            .collect()
    }

    fn random_complex(n: usize, seed: u64) -> Vec<C64> {
        let mut r = rng::seeded(seed);
        (0..n)
            .map(|_| C64::new(rng::normal(&mut r), rng::normal(&mut r)))
            .collect()
    }

    #[test]
    fn matches_direct_summation_for_assorted_lengths() {
        for &n in &[1usize, 2, 3, 5, 8, 12, 16, 17, 30, 64] {
            let x = random_complex(n, n as u64);
            let want = naive_dft(&x);
            let mut got = x.clone();
            FftPlan::new(n).forward(&mut got);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).norm() < 1e-10 * n as f64, "n={n}");
            }
            FftPlan::new(n).inverse(&mut got);
            for (g, w) in got.iter().zip(&x) {
                assert!((g / n as f64 - w).norm() < 1e-12, "n={n}");
            }
        }
    }

    #[test]
    fn constant_field_lands_in_mode_zero() {
        let x = Tensor::full(&[16], 2.5);
        let c = rfft(&x, 1).unwrap();
        assert_eq!(c.real.data()[0], 2.5 * 16.0);
        for k in 1..9 {
            assert_eq!(c.get(k), C64::new(0.0, 0.0));
        }
    }

    #[test]
    fn cosine_occupies_mode_one() {
        let n = 16;
        let x = Tensor::from_vec(
            (0..n)
                .map(|j| libm::cos(2.0 * PI * j as f64 / n as f64))
                .collect(),
        );
        let c = rfft(&x, 1).unwrap();
        let direct = naive_dft(&x.data().iter().map(|&v| C64::new(v, 0.0)).collect::<Vec<_>>());
        for k in 0..=n / 2 {
            assert!((c.get(k) - direct[k]).norm() < 1e-12);
            let expected = if k == 1 { 8.0 } else { 0.0 };
            assert!((c.real.data()[k] - expected).abs() < 1e-12, "k={k}");
            assert!(c.imag.data()[k].abs() < 1e-12);
        }
    }

    #[test]
    fn two_dimensional_matches_separable_direct_sum() {
        let (n0, n1) = (6, 8);
        let mut r = rng::seeded(3);
        let x: Vec<f64> = (0..n0 * n1).map(|_| rng::normal(&mut r)).collect();
        let t = Tensor::new(&[n0, n1], x.clone()).unwrap();
        let c = rfft(&t, 2).unwrap();
        assert_eq!(c.shape(), &[n0, n1 / 2 + 1]);
        for k0 in 0..n0 {
            for k1 in 0..=n1 / 2 {
                let mut s = C64::new(0.0, 0.0);
                for j0 in 0..n0 {
                    for j1 in 0..n1 {
                        let phase = (k0 * j0) as f64 / n0 as f64 + (k1 * j1) as f64 / n1 as f64;
                        s += x[j0 * n1 + j1] * cis(-2.0 * PI * phase);
                    }
                }
                assert!((c.get(k0 * (n1 / 2 + 1) + k1) - s).norm() < 1e-10);
            }
        }
        let back = irfft(&c, &[n0, n1]).unwrap();
        for (a, b) in back.data().iter().zip(&x) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn irfft_checks_spectrum_shape() {
        let c = rfft(&Tensor::zeros(&[2, 8]), 1).unwrap();
        assert!(matches!(
            irfft(&c, &[10]),
            Err(Error::ShapeMismatch { op: "irfft", .. })
        ));
    }
}
