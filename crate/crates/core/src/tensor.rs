//! Dense row-major `f64` tensors.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Reductions supported by [`Tensor::reduce`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
    Mean,
    Max,
    Min,
}

/// A contiguous row-major array of `f64`.
///
/// Rank-0 tensors (empty shape) hold a single value.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::invalid_shape(
                "tensor",
                alloc::format!(
                    "shape {:?} holds {} values, got {}",
                    shape,
                    expected,
                    data.len()
                ),
            ));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> Option<f64> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::shape("reshape", &self.shape, shape));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_with(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::shape("zip_with", &self.shape, &other.shape));
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Plain 2-D product, used outside of the tape.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.rank() != 2 || other.rank() != 2 || self.shape[1] != other.shape[0] {
            return Err(Error::shape("matmul", &self.shape, &other.shape));
        }
        let (m, k, n) = (self.shape[0], self.shape[1], other.shape[1]);
        let mut out = vec![0.0; m * n];
        matmul_into(&self.data, &other.data, &mut out, m, k, n);
        Tensor::new(&[m, n], out)
    }

    /// Reduce over `axes` (dropped from the result shape).
    pub fn reduce(&self, op: ReduceOp, axes: &[usize]) -> Result<Tensor> {
        if self.is_empty() {
            return Err(Error::EmptyTensor { op: "reduce" });
        }
        let mut reduced = vec![false; self.rank()];
        for &a in axes {
            if a >= self.rank() || reduced[a] {
                return Err(Error::invalid_shape(
                    "reduce",
                    alloc::format!("invalid axis {} for shape {:?}", a, self.shape),
                ));
            }
            reduced[a] = true;
        }
        let out_shape: Vec<usize> = self
            .shape
            .iter()
            .zip(&reduced)
            .filter(|(_, &r)| !r)
            .map(|(&s, _)| s)
            .collect();
        let out_len: usize = out_shape.iter().product();
        let init = match op {
            ReduceOp::Sum | ReduceOp::Mean => 0.0,
            ReduceOp::Max => f64::NEG_INFINITY,
            ReduceOp::Min => f64::INFINITY,
        };
        let mut out = vec![init; out_len];
        let map = ReduceIndex::new(&self.shape, &reduced);
        for (flat, &v) in self.data.iter().enumerate() {
            let o = map.target(flat);
            out[o] = match op {
                ReduceOp::Sum | ReduceOp::Mean => out[o] + v,
                ReduceOp::Max => out[o].max(v),
                ReduceOp::Min => out[o].min(v),
            };
        }
        if op == ReduceOp::Mean {
            let count = (self.len() / out_len.max(1)) as f64;
            out.iter_mut().for_each(|v| *v /= count);
        }
        Tensor::new(&out_shape, out)
    }

    /// Max-stabilised softmax along `axis`.
    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        if axis >= self.rank() {
            return Err(Error::invalid_shape("softmax", "axis out of range"));
        }
        let (outer, len, inner) = split_axis(&self.shape, axis);
        let mut out = self.data.clone();
        softmax_strided(&mut out, outer, len, inner);
        Tensor::new(&self.shape, out)
    }
}

/// Maps a flat input index to the flat index of its reduction bucket.
pub(crate) struct ReduceIndex {
    // (input stride, output stride, extent) for every axis
    axes: Vec<(usize, usize, usize)>,
}

impl ReduceIndex {
    pub(crate) fn new(shape: &[usize], reduced: &[bool]) -> Self {
        let rank = shape.len();
        let mut axes = vec![(0, 0, 0); rank];
        let mut in_stride = 1;
        let mut out_stride = 1;
        for i in (0..rank).rev() {
            axes[i] = (in_stride, if reduced[i] { 0 } else { out_stride }, shape[i]);
            in_stride *= shape[i];
            if !reduced[i] {
                out_stride *= shape[i];
            }
        }
        Self { axes }
    }

    pub(crate) fn target(&self, flat: usize) -> usize {
        self.axes
            .iter()
            .map(|&(is, os, n)| ((flat / is) % n) * os)
            .sum()
    }
}

/// `(outer, len, inner)` extents around `axis`.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn softmax_strided(data: &mut [f64], outer: usize, len: usize, inner: usize) {
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let mut max = f64::NEG_INFINITY;
            for t in 0..len {
                max = max.max(data[base + t * inner]);
            }
            let mut total = 0.0;
            for t in 0..len {
                let e = libm::exp(data[base + t * inner] - max);
                data[base + t * inner] = e;
                total += e;
            }
            for t in 0..len {
                data[base + t * inner] /= total;
            }
        }
    }
}

/// `out += a (m×k) · b (k×n)`.
pub(crate) fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_must_match_data() {
        assert!(Tensor::new(&[2, 2], vec![1.0; 3]).is_err());
        assert_eq!(Tensor::new(&[2, 2], vec![1.0; 4]).unwrap().len(), 4);
    }

    #[test]
    fn reductions() {
        let t = Tensor::from_vec(vec![1.0, 2.0, 3.0]);
        assert_eq!(t.reduce(ReduceOp::Sum, &[0]).unwrap().item(), Some(6.0));
        let m = Tensor::from_vec(vec![0.1, 0.9, 0.4]);
        assert_eq!(m.reduce(ReduceOp::Max, &[0]).unwrap().item(), Some(0.9));
        assert_eq!(m.reduce(ReduceOp::Min, &[0]).unwrap().item(), Some(0.1));
        let c = Tensor::full(&[3, 4], 2.5);
        assert_eq!(c.reduce(ReduceOp::Mean, &[0, 1]).unwrap().item(), Some(2.5));
        let rows = Tensor::new(&[2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        assert_eq!(rows.reduce(ReduceOp::Sum, &[1]).unwrap().data(), &[6.0, 15.0]);
        assert_eq!(rows.reduce(ReduceOp::Sum, &[0]).unwrap().data(), &[5.0, 7.0, 9.0]);
    }

    #[test]
    fn reduce_rejects_empty_and_bad_axes() {
        let e = Tensor::zeros(&[0]);
        assert_eq!(
            e.reduce(ReduceOp::Sum, &[0]),
            Err(Error::EmptyTensor { op: "reduce" })
        );
        assert!(Tensor::zeros(&[2]).reduce(ReduceOp::Sum, &[1]).is_err());
    }

    #[test]
    fn softmax_values() {
        let s = Tensor::from_vec(vec![0.0, 0.0]).softmax(0).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
        // direct exponential evaluation: e^k / (e + e^2 + e^3)
        let z = libm::exp(1.0) + libm::exp(2.0) + libm::exp(3.0);
        let want = [libm::exp(1.0) / z, libm::exp(2.0) / z, libm::exp(3.0) / z];
        let got = Tensor::from_vec(vec![1.0, 2.0, 3.0]).softmax(0).unwrap();
        for (g, w) in got.data().iter().zip(want) {
            assert!((g - w).abs() < 1e-15);
        }
        for (g, w) in got.data().iter().zip([0.09003, 0.24473, 0.66524]) {
            assert!((g - w).abs() < 1e-5);
        }
        let shifted = Tensor::from_vec(vec![101.0, 102.0, 103.0]).softmax(0).unwrap();
        for (a, b) in got.data().iter().zip(shifted.data()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn plain_matmul() {
        let a = Tensor::new(&[2, 2], vec![1., 2., 3., 4.]).unwrap();
        let b = Tensor::new(&[2, 1], vec![5., 6.]).unwrap();
        assert_eq!(a.matmul(&b).unwrap().data(), &[17.0, 39.0]);
    }
}
