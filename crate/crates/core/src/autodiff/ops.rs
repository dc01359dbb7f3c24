use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::{FRAC_1_SQRT_2, PI};

use super::{BinaryKind, Broadcast, MixGeometry, Op, ScanGeometry, Tape, UnaryKind, Var};
use crate::error::{Error, Result};
use crate::fft::{SpectralPlan, C64};
use crate::tensor::{matmul_into, softmax_strided, split_axis, ReduceIndex, Tensor};

/// Axis along which [`Tape::causal_conv`] scans.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScanAxis {
    /// Row-major flattening of all spatial axes.
    #[default]
    Flattened,
    /// A single spatial axis (0-based, excluding batch and channel axes).
    Axis(usize),
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2));
    let pdf = libm::exp(-0.5 * x * x) / libm::sqrt(2.0 * PI);
    cdf + x * pdf
}

/// `out[i,p] += Σ_j a[i,j] b[p,j]`  (a: m×n, b: k×n, out: m×k)
fn matmul_nt(a: &[f64], b: &[f64], out: &mut [f64], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let ar = &a[i * n..(i + 1) * n];
        for p in 0..k {
            let br = &b[p * n..(p + 1) * n];
            out[i * k + p] += ar.iter().zip(br).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// `out[p,j] += Σ_i a[i,p] b[i,j]`  (a: m×k, b: m×n, out: k×n)
fn matmul_tn(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let br = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(br) {
                *o += av * bv;
            }
        }
    }
}

fn complex_at(data: &[f64], idx: usize) -> C64 {
    C64::new(data[2 * idx], data[2 * idx + 1])
}

fn interleave(spec: &[C64]) -> Vec<f64> {
    spec.iter().flat_map(|c| [c.re, c.im]).collect()
}

/// Spatial shape and batch count of a complex-interleaved spectrum.
fn spectrum_layout(shape: &[usize], half: &[usize]) -> Option<usize> {
    let rank = shape.len();
    let tail = half.len() + 1;
    if rank < tail || shape[rank - 1] != 2 || shape[rank - tail..rank - 1] != *half {
        return None;
    }
    Some(shape[..rank - tail].iter().product())
}

impl Tape {
    fn binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.check(a)?, self.check(b)?);
        let mode = if ta.shape() == tb.shape() {
            Broadcast::Same
        } else if tb.len() == 1 {
            Broadcast::ScalarRight
        } else if ta.len() == 1 {
            Broadcast::ScalarLeft
        } else if ta.rank() > tb.rank() && ta.shape().ends_with(tb.shape()) {
            Broadcast::Suffix
        } else {
            let op = match kind {
                BinaryKind::Add => "add",
                BinaryKind::Sub => "sub",
                BinaryKind::Mul => "mul",
            };
            return Err(Error::shape(op, ta.shape(), tb.shape()));
        };
        let out_shape = if mode == Broadcast::ScalarLeft {
            tb.shape().to_vec()
        } else {
            ta.shape().to_vec()
        };
        let (da, db) = (ta.data(), tb.data());
        let n = da.len().max(db.len());
        let out: Vec<f64> = (0..n)
            .map(|i| {
                let x = da[index_a(mode, i)];
                let y = db[index_b(mode, i, db.len())];
                match kind {
                    BinaryKind::Add => x + y,
                    BinaryKind::Sub => x - y,
                    BinaryKind::Mul => x * y,
                }
            })
            .collect();
        let value = Tensor::new(&out_shape, out)?;
        Ok(self.push(value, Op::Binary(kind, a, b, mode), &[a, b]))
    }

    /// Elementwise sum; `b` may be a scalar or match the trailing axes of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Mul, a, b)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let value = self.check(x)?.map(|v| v * factor);
        Ok(self.push(value, Op::Scale(x, factor), &[x]))
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let value = self.check(x)?.map(gelu);
        Ok(self.push(value, Op::Unary(UnaryKind::Gelu, x), &[x]))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let value = self.check(x)?.map(|v| v.max(0.0));
        Ok(self.push(value, Op::Unary(UnaryKind::Relu, x), &[x]))
    }

    /// Natural logarithm; inputs must be positive.
    pub fn ln(&mut self, x: Var) -> Result<Var> {
        let t = self.check(x)?;
        if t.data().iter().any(|&v| v <= 0.0) {
            return Err(Error::InvalidArgument("ln of a non-positive value".into()));
        }
        let value = t.map(libm::log);
        Ok(self.push(value, Op::Unary(UnaryKind::Ln, x), &[x]))
    }

    #[cfg(test)]
    pub(crate) fn broken_gelu(&mut self, x: Var) -> Result<Var> {
        let value = self.check(x)?.map(gelu);
        Ok(self.push(value, Op::Unary(UnaryKind::BrokenGelu, x), &[x]))
    }

    /// Matrix product over the last two axes. Either operand may carry one
    /// leading batch axis; a 2-D operand is shared across the batch.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.check(a)?, self.check(b)?);
        let (sa, sb) = (ta.shape(), tb.shape());
        let ok_rank = |s: &[usize]| s.len() == 2 || s.len() == 3;
        if !ok_rank(sa) || !ok_rank(sb) || sa[sa.len() - 1] != sb[sb.len() - 2] {
            return Err(Error::shape("matmul", sa, sb));
        }
        let (a_batched, b_batched) = (sa.len() == 3, sb.len() == 3);
        if a_batched && b_batched && sa[0] != sb[0] {
            return Err(Error::shape("matmul", sa, sb));
        }
        let batch = if a_batched {
            sa[0]
        } else if b_batched {
            sb[0]
        } else {
            1
        };
        let (m, k, n) = (sa[sa.len() - 2], sa[sa.len() - 1], sb[sb.len() - 1]);
        let mut out = vec![0.0; batch * m * n];
        for bi in 0..batch {
            let ao = if a_batched { bi * m * k } else { 0 };
            let bo = if b_batched { bi * k * n } else { 0 };
            matmul_into(
                &ta.data()[ao..ao + m * k],
                &tb.data()[bo..bo + k * n],
                &mut out[bi * m * n..(bi + 1) * m * n],
                m,
                k,
                n,
            );
        }
        let shape: Vec<usize> = if a_batched || b_batched {
            vec![batch, m, n]
        } else {
            vec![m, n]
        };
        let value = Tensor::new(&shape, out)?;
        let op = Op::MatMul {
            a,
            b,
            batch,
            m,
            k,
            n,
            a_batched,
            b_batched,
        };
        Ok(self.push(value, op, &[a, b]))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let t = self.check(x)?;
        if t.rank() < 2 {
            return Err(Error::invalid_shape("transpose", "needs rank >= 2"));
        }
        let r = t.rank();
        let (rows, cols) = (t.shape()[r - 2], t.shape()[r - 1]);
        let batch = t.len() / (rows * cols).max(1);
        let out = transpose_data(t.data(), batch, rows, cols);
        let mut shape = t.shape().to_vec();
        shape.swap(r - 2, r - 1);
        let value = Tensor::new(&shape, out)?;
        Ok(self.push(value, Op::Transpose { x, batch, rows, cols }, &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.check(x)?.clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape(x), &[x]))
    }

    /// Pointwise channel mixing: `x (B, Cin, ...)`, `w (Cout, Cin)` →
    /// `(B, Cout, ...)`.
    pub fn linear(&mut self, x: Var, w: Var) -> Result<Var> {
        let (tx, tw) = (self.check(x)?, self.check(w)?);
        if tx.rank() < 2 || tw.rank() != 2 || tx.shape()[1] != tw.shape()[1] {
            return Err(Error::shape("linear", tx.shape(), tw.shape()));
        }
        let (batch, cin, cout) = (tx.shape()[0], tx.shape()[1], tw.shape()[0]);
        let spatial: usize = tx.shape()[2..].iter().product();
        let mut out = vec![0.0; batch * cout * spatial];
        let (xd, wd) = (tx.data(), tw.data());
        for b in 0..batch {
            for o in 0..cout {
                let orow = &mut out[(b * cout + o) * spatial..(b * cout + o + 1) * spatial];
                for i in 0..cin {
                    let wv = wd[o * cin + i];
                    let xrow = &xd[(b * cin + i) * spatial..(b * cin + i + 1) * spatial];
                    for (ov, &xv) in orow.iter_mut().zip(xrow) {
                        *ov += wv * xv;
                    }
                }
            }
        }
        let mut shape = tx.shape().to_vec();
        shape[1] = cout;
        let value = Tensor::new(&shape, out)?;
        let op = Op::Linear {
            x,
            w,
            batch,
            cin,
            cout,
            spatial,
        };
        Ok(self.push(value, op, &[x, w]))
    }

    /// Adds a per-channel bias `b (C)` to `x (B, C, ...)`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (tx, tb) = (self.check(x)?, self.check(b)?);
        if tx.rank() < 2 || tb.rank() != 1 || tx.shape()[1] != tb.shape()[0] {
            return Err(Error::shape("add_bias", tx.shape(), tb.shape()));
        }
        let (batch, channels) = (tx.shape()[0], tx.shape()[1]);
        let spatial: usize = tx.shape()[2..].iter().product();
        let mut out = tx.data().to_vec();
        for bi in 0..batch {
            for c in 0..channels {
                let bv = tb.data()[c];
                out[(bi * channels + c) * spatial..(bi * channels + c + 1) * spatial]
                    .iter_mut()
                    .for_each(|v| *v += bv);
            }
        }
        let value = Tensor::new(tx.shape(), out)?;
        let op = Op::AddBias {
            x,
            b,
            batch,
            channels,
            spatial,
        };
        Ok(self.push(value, op, &[x, b]))
    }

    fn reduce(&mut self, x: Var, axes: &[usize], mean: bool) -> Result<Var> {
        let t = self.check(x)?;
        let op = if mean {
            crate::tensor::ReduceOp::Mean
        } else {
            crate::tensor::ReduceOp::Sum
        };
        let value = t.reduce(op, axes)?;
        let mut mask = vec![false; t.rank()];
        axes.iter().for_each(|&a| mask[a] = true);
        Ok(self.push(value, Op::Reduce { x, mean, mask }, &[x]))
    }

    pub fn sum(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        self.reduce(x, axes, false)
    }

    pub fn mean(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        self.reduce(x, axes, true)
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let axes: Vec<usize> = (0..self.check(x)?.rank()).collect();
        self.reduce(x, &axes, false)
    }

    pub fn mean_all(&mut self, x: Var) -> Result<Var> {
        let axes: Vec<usize> = (0..self.check(x)?.rank()).collect();
        self.reduce(x, &axes, true)
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = self.check(x)?;
        if axis >= t.rank() {
            return Err(Error::invalid_shape("softmax", "axis out of range"));
        }
        let (outer, len, inner) = split_axis(t.shape(), axis);
        let mut out = t.data().to_vec();
        softmax_strided(&mut out, outer, len, inner);
        let value = Tensor::new(t.shape(), out)?;
        Ok(self.push(value, Op::Softmax { x, outer, len, inner }, &[x]))
    }

    /// Real FFT over the trailing `spatial_dims` axes. The result stores
    /// the half spectrum with real/imag interleaved on a new last axis of
    /// length 2.
    pub fn rfft(&mut self, x: Var, spatial_dims: usize) -> Result<Var> {
        let t = self.check(x)?;
        if spatial_dims == 0 || spatial_dims > 2 || t.rank() < spatial_dims {
            return Err(Error::invalid_shape("rfft", "1-D or 2-D spatial axes expected"));
        }
        let split = t.rank() - spatial_dims;
        let spatial = t.shape()[split..].to_vec();
        let plan = SpectralPlan::new(&spatial)?;
        let batch: usize = t.shape()[..split].iter().product();
        let (rl, sl) = (plan.real_len(), plan.spectral_len());
        let mut spec = vec![C64::new(0.0, 0.0); batch * sl];
        for b in 0..batch {
            plan.forward(&t.data()[b * rl..(b + 1) * rl], &mut spec[b * sl..(b + 1) * sl]);
        }
        let mut shape = t.shape()[..split].to_vec();
        shape.extend(plan.half_shape());
        shape.push(2);
        let value = Tensor::new(&shape, interleave(&spec))?;
        Ok(self.push(value, Op::Rfft { x, spatial }, &[x]))
    }

    /// Inverse of [`Tape::rfft`] onto the given spatial shape.
    pub fn irfft(&mut self, x: Var, spatial: &[usize]) -> Result<Var> {
        let plan = SpectralPlan::new(spatial)?;
        let t = self.check(x)?;
        let half = plan.half_shape();
        let Some(batch) = spectrum_layout(t.shape(), &half) else {
            let mut want = half.clone();
            want.push(2);
            return Err(Error::shape("irfft", t.shape(), &want));
        };
        let (rl, sl) = (plan.real_len(), plan.spectral_len());
        let mut out = vec![0.0; batch * rl];
        let mut spec = vec![C64::new(0.0, 0.0); sl];
        for b in 0..batch {
            for (k, s) in spec.iter_mut().enumerate() {
                *s = complex_at(t.data(), b * sl + k);
            }
            plan.inverse(&spec, &mut out[b * rl..(b + 1) * rl]);
        }
        let rank = t.rank();
        let mut shape = t.shape()[..rank - half.len() - 1].to_vec();
        shape.extend_from_slice(spatial);
        let value = Tensor::new(&shape, out)?;
        let op = Op::Irfft {
            x,
            spatial: spatial.to_vec(),
        };
        Ok(self.push(value, op, &[x]))
    }

    /// Per-mode complex channel mixing of a half spectrum.
    ///
    /// `x` is `(B, Cin, [N0,] H, 2)` as produced by [`Tape::rfft`]. Weights
    /// are `(Cout, Cin, m)` in 1-D and `(Cout, Cin, 2·m0, m1)` in 2-D, where
    /// the first `m0` weight rows act on wavenumbers `0..m0` and the rest on
    /// `-m0..0`. Bins outside the retained block are zero in the output.
    pub fn spectral_mix(&mut self, x: Var, w_re: Var, w_im: Var) -> Result<Var> {
        let (tx, tr, ti) = (self.check(x)?, self.check(w_re)?, self.check(w_im)?);
        if tr.shape() != ti.shape() {
            return Err(Error::shape("spectral_mix", tr.shape(), ti.shape()));
        }
        let ws = tr.shape();
        let xs = tx.shape();
        let dims = ws.len().saturating_sub(2);
        if !(dims == 1 || dims == 2) || xs.len() != dims + 3 || xs[xs.len() - 1] != 2 || xs[1] != ws[1]
        {
            return Err(Error::shape("spectral_mix", xs, ws));
        }
        let (batch, cin, cout) = (xs[0], ws[1], ws[0]);
        let half = xs[xs.len() - 2];
        let kept_cols = ws[ws.len() - 1];
        if kept_cols + 1 > half {
            return Err(Error::ModesExceedNyquist {
                axis: dims - 1,
                modes: kept_cols,
                points: 2 * half - 2,
            });
        }
        let (rows, kept_rows) = if dims == 1 {
            (1, vec![0])
        } else {
            let n0 = xs[2];
            let wr = ws[2];
            if wr % 2 != 0 || wr > n0 {
                return Err(Error::ModesExceedNyquist {
                    axis: 0,
                    modes: wr / 2,
                    points: n0,
                });
            }
            let m0 = wr / 2;
            let kept = (0..wr).map(|j| if j < m0 { j } else { n0 - wr + j }).collect();
            (n0, kept)
        };
        let geo = MixGeometry {
            batch,
            cin,
            cout,
            rows,
            half,
            kept_rows,
            kept_cols,
        };
        let mut out = vec![0.0; batch * cout * rows * half * 2];
        let plane = rows * half;
        let wplane = geo.kept_rows.len() * kept_cols;
        let (xd, wr, wi) = (tx.data(), tr.data(), ti.data());
        for b in 0..batch {
            for o in 0..cout {
                let ob = (b * cout + o) * plane;
                for i in 0..cin {
                    let xb = (b * cin + i) * plane;
                    let wb = (o * cin + i) * wplane;
                    for (j, &r) in geo.kept_rows.iter().enumerate() {
                        for c in 0..kept_cols {
                            let w = C64::new(wr[wb + j * kept_cols + c], wi[wb + j * kept_cols + c]);
                            let idx = r * half + c;
                            let v = w * complex_at(xd, xb + idx);
                            out[2 * (ob + idx)] += v.re;
                            out[2 * (ob + idx) + 1] += v.im;
                        }
                    }
                }
            }
        }
        let mut shape = xs.to_vec();
        shape[1] = cout;
        let value = Tensor::new(&shape, out)?;
        Ok(self.push(value, Op::SpectralMix { x, w_re, w_im, geo }, &[x, w_re, w_im]))
    }

    /// Causal per-channel convolution `y[t] = Σ_{τ ≤ t} k[c, τ] · x[t − τ]`
    /// along `axis` of `x (B, C, spatial...)` with `kernel (C, T)`. History
    /// before the first position is zero.
    pub fn causal_conv(&mut self, x: Var, kernel: Var, axis: ScanAxis) -> Result<Var> {
        let (tx, tk) = (self.check(x)?, self.check(kernel)?);
        if tx.rank() < 3 || tk.rank() != 2 || tk.shape()[0] != tx.shape()[1] || tk.shape()[1] == 0 {
            return Err(Error::shape("causal_conv", tx.shape(), tk.shape()));
        }
        let spatial = &tx.shape()[2..];
        let (outer, len, inner) = match axis {
            ScanAxis::Flattened => (1, spatial.iter().product(), 1),
            ScanAxis::Axis(a) if a < spatial.len() => split_axis(spatial, a),
            ScanAxis::Axis(a) => {
                return Err(Error::invalid_shape(
                    "causal_conv",
                    alloc::format!("scan axis {} out of range for {:?}", a, spatial),
                ))
            }
        };
        let geo = ScanGeometry {
            batch: tx.shape()[0],
            channels: tx.shape()[1],
            outer,
            len,
            inner,
            taps: tk.shape()[1],
        };
        let mut out = vec![0.0; tx.len()];
        scan_lines(&geo, |c, line| {
            let k = &tk.data()[c * geo.taps..(c + 1) * geo.taps];
            for t in 0..geo.len {
                let mut acc = 0.0;
                for (tau, &kv) in k.iter().enumerate().take(t + 1) {
                    acc += kv * tx.data()[line(t - tau)];
                }
                out[line(t)] = acc;
            }
        });
        let value = Tensor::new(tx.shape(), out)?;
        Ok(self.push(value, Op::CausalConv { x, kernel, geo }, &[x, kernel]))
    }

    /// Columns `start..start + width` of the last axis.
    pub fn slice_last(&mut self, x: Var, start: usize, width: usize) -> Result<Var> {
        let t = self.check(x)?;
        let last = *t.shape().last().ok_or(Error::EmptyTensor { op: "slice_last" })?;
        if start + width > last || width == 0 {
            return Err(Error::invalid_shape(
                "slice_last",
                alloc::format!("columns {}..{} of {}", start, start + width, last),
            ));
        }
        let rows = t.len() / last;
        let mut out = Vec::with_capacity(rows * width);
        for r in 0..rows {
            out.extend_from_slice(&t.data()[r * last + start..r * last + start + width]);
        }
        let mut shape = t.shape().to_vec();
        *shape.last_mut().unwrap() = width;
        let value = Tensor::new(&shape, out)?;
        Ok(self.push(value, Op::SliceLast { x, start, width }, &[x]))
    }

    /// Concatenates along the last axis; leading axes must agree.
    pub fn concat_last(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self.check(*parts.first().ok_or(Error::EmptyTensor { op: "concat_last" })?)?;
        let lead = first.shape()[..first.rank() - 1].to_vec();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let t = self.check(p)?;
            if t.rank() != lead.len() + 1 || t.shape()[..lead.len()] != lead[..] {
                return Err(Error::shape("concat_last", first.shape(), t.shape()));
            }
            widths.push(t.shape()[lead.len()]);
        }
        let total: usize = widths.iter().sum();
        let rows: usize = lead.iter().product();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let value = Tensor::new(&shape, out)?;
        Ok(self.push(value, Op::ConcatLast { parts: parts.to_vec() }, parts))
    }

    /// Mean squared error over all elements.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (p, t) = (self.check(pred)?, self.check(target)?);
        if p.shape() != t.shape() {
            return Err(Error::shape("mse", p.shape(), t.shape()));
        }
        let diff = self.sub(pred, target)?;
        let sq = self.mul(diff, diff)?;
        self.mean_all(sq)
    }

    pub(super) fn node_backward(&self, id: usize, g: &Tensor) -> Result<Vec<(Var, Tensor)>> {
        let node = &self.nodes[id];
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        let gd = g.data();
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Binary(kind, a, b, mode) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if wants(*a) {
                    let mut ga = vec![0.0; ta.len()];
                    for (i, &gv) in gd.iter().enumerate() {
                        let d = match kind {
                            BinaryKind::Add | BinaryKind::Sub => gv,
                            BinaryKind::Mul => gv * tb.data()[index_b(*mode, i, tb.len())],
                        };
                        ga[index_a(*mode, i)] += d;
                    }
                    out.push((*a, Tensor::new(ta.shape(), ga)?));
                }
                if wants(*b) {
                    let mut gb = vec![0.0; tb.len()];
                    for (i, &gv) in gd.iter().enumerate() {
                        let d = match kind {
                            BinaryKind::Add => gv,
                            BinaryKind::Sub => -gv,
                            BinaryKind::Mul => gv * ta.data()[index_a(*mode, i)],
                        };
                        gb[index_b(*mode, i, tb.len())] += d;
                    }
                    out.push((*b, Tensor::new(tb.shape(), gb)?));
                }
            }
            Op::Scale(x, f) => out.push((*x, g.map(|v| v * f))),
            Op::Unary(kind, x) => {
                let tx = self.value(*x);
                let gx = match kind {
                    UnaryKind::Gelu => tx.zip_with(g, |v, gv| gv * gelu_grad(v))?,
                    UnaryKind::Relu => tx.zip_with(g, |v, gv| if v > 0.0 { gv } else { 0.0 })?,
                    UnaryKind::Ln => tx.zip_with(g, |v, gv| gv / v)?,
                    #[cfg(test)]
                    UnaryKind::BrokenGelu => tx.zip_with(g, |v, gv| gv * (gelu_grad(v) + 0.01))?,
                };
                out.push((*x, gx));
            }
            Op::MatMul {
                a,
                b,
                batch,
                m,
                k,
                n,
                a_batched,
                b_batched,
            } => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (*m, *k, *n);
                if wants(*a) {
                    let mut ga = vec![0.0; ta.len()];
                    for bi in 0..*batch {
                        let ao = if *a_batched { bi * m * k } else { 0 };
                        let bo = if *b_batched { bi * k * n } else { 0 };
                        matmul_nt(
                            &gd[bi * m * n..(bi + 1) * m * n],
                            &tb.data()[bo..bo + k * n],
                            &mut ga[ao..ao + m * k],
                            m,
                            n,
                            k,
                        );
                    }
                    out.push((*a, Tensor::new(ta.shape(), ga)?));
                }
                if wants(*b) {
                    let mut gb = vec![0.0; tb.len()];
                    for bi in 0..*batch {
                        let ao = if *a_batched { bi * m * k } else { 0 };
                        let bo = if *b_batched { bi * k * n } else { 0 };
                        matmul_tn(
                            &ta.data()[ao..ao + m * k],
                            &gd[bi * m * n..(bi + 1) * m * n],
                            &mut gb[bo..bo + k * n],
                            m,
                            k,
                            n,
                        );
                    }
                    out.push((*b, Tensor::new(tb.shape(), gb)?));
                }
            }
            Op::Transpose { x, batch, rows, cols } => {
                let gx = transpose_data(gd, *batch, *cols, *rows);
                out.push((*x, Tensor::new(self.value(*x).shape(), gx)?));
            }
            Op::Reshape(x) => {
                out.push((*x, g.clone().reshape(self.value(*x).shape())?));
            }
            Op::Linear {
                x,
                w,
                batch,
                cin,
                cout,
                spatial,
            } => {
                let (tx, tw) = (self.value(*x), self.value(*w));
                let (cin, cout, s) = (*cin, *cout, *spatial);
                if wants(*x) {
                    let mut gx = vec![0.0; tx.len()];
                    for b in 0..*batch {
                        for o in 0..cout {
                            let grow = &gd[(b * cout + o) * s..(b * cout + o + 1) * s];
                            for i in 0..cin {
                                let wv = tw.data()[o * cin + i];
                                let xrow = &mut gx[(b * cin + i) * s..(b * cin + i + 1) * s];
                                for (xv, &gv) in xrow.iter_mut().zip(grow) {
                                    *xv += wv * gv;
                                }
                            }
                        }
                    }
                    out.push((*x, Tensor::new(tx.shape(), gx)?));
                }
                if wants(*w) {
                    let mut gw = vec![0.0; tw.len()];
                    for b in 0..*batch {
                        for o in 0..cout {
                            let grow = &gd[(b * cout + o) * s..(b * cout + o + 1) * s];
                            for i in 0..cin {
                                let xrow = &tx.data()[(b * cin + i) * s..(b * cin + i + 1) * s];
                                gw[o * cin + i] +=
                                    grow.iter().zip(xrow).map(|(p, q)| p * q).sum::<f64>();
                            }
                        }
                    }
                    out.push((*w, Tensor::new(tw.shape(), gw)?));
                }
            }
            Op::AddBias {
                x,
                b,
                batch,
                channels,
                spatial,
            } => {
                if wants(*x) {
                    out.push((*x, g.clone()));
                }
                if wants(*b) {
                    let mut gb = vec![0.0; *channels];
                    for bi in 0..*batch {
                        for (c, acc) in gb.iter_mut().enumerate() {
                            let start = (bi * channels + c) * spatial;
                            *acc += gd[start..start + spatial].iter().sum::<f64>();
                        }
                    }
                    out.push((*b, Tensor::from_vec(gb)));
                }
            }
            Op::Reduce { x, mean, mask } => {
                let tx = self.value(*x);
                let map = ReduceIndex::new(tx.shape(), mask);
                let scale = if *mean {
                    gd.len() as f64 / tx.len() as f64
                } else {
                    1.0
                };
                let gx = (0..tx.len()).map(|i| gd[map.target(i)] * scale).collect();
                out.push((*x, Tensor::new(tx.shape(), gx)?));
            }
            Op::Softmax { x, outer, len, inner } => {
                let y = node.value.data();
                let mut gx = vec![0.0; y.len()];
                for o in 0..*outer {
                    for i in 0..*inner {
                        let base = o * len * inner + i;
                        let dot: f64 = (0..*len)
                            .map(|t| gd[base + t * inner] * y[base + t * inner])
                            .sum();
                        for t in 0..*len {
                            let idx = base + t * inner;
                            gx[idx] = y[idx] * (gd[idx] - dot);
                        }
                    }
                }
                out.push((*x, Tensor::new(node.value.shape(), gx)?));
            }
            Op::Rfft { x, spatial } => {
                // adjoint of the unnormalized half-spectrum transform:
                // N · irfft(S ⊙ g), S halving interior bins of the last axis
                let plan = SpectralPlan::new(spatial)?;
                let n1 = *spatial.last().unwrap();
                let h = n1 / 2 + 1;
                let (rl, sl) = (plan.real_len(), plan.spectral_len());
                let batch = self.value(*x).len() / rl;
                let total = rl as f64;
                let mut gx = vec![0.0; batch * rl];
                let mut spec = vec![C64::new(0.0, 0.0); sl];
                for b in 0..batch {
                    for (k, s) in spec.iter_mut().enumerate() {
                        let col = k % h;
                        let self_conjugate = col == 0 || (n1 % 2 == 0 && col == n1 / 2);
                        let w = if self_conjugate { total } else { 0.5 * total };
                        *s = complex_at(gd, b * sl + k) * w;
                    }
                    plan.inverse(&spec, &mut gx[b * rl..(b + 1) * rl]);
                }
                out.push((*x, Tensor::new(self.value(*x).shape(), gx)?));
            }
            Op::Irfft { x, spatial } => {
                // adjoint of the normalized inverse: (1/N) S' ⊙ rfft(g),
                // S' doubling interior bins of the last axis
                let plan = SpectralPlan::new(spatial)?;
                let n1 = *spatial.last().unwrap();
                let h = n1 / 2 + 1;
                let (rl, sl) = (plan.real_len(), plan.spectral_len());
                let batch = gd.len() / rl;
                let inv = 1.0 / rl as f64;
                let mut spec = vec![C64::new(0.0, 0.0); batch * sl];
                for b in 0..batch {
                    plan.forward(&gd[b * rl..(b + 1) * rl], &mut spec[b * sl..(b + 1) * sl]);
                }
                for (k, s) in spec.iter_mut().enumerate() {
                    let col = (k % sl) % h;
                    let self_conjugate = col == 0 || (n1 % 2 == 0 && col == n1 / 2);
                    *s *= if self_conjugate { inv } else { 2.0 * inv };
                }
                out.push((*x, Tensor::new(self.value(*x).shape(), interleave(&spec))?));
            }
            Op::SpectralMix { x, w_re, w_im, geo } => {
                let (tx, tr, ti) = (self.value(*x), self.value(*w_re), self.value(*w_im));
                let plane = geo.rows * geo.half;
                let wplane = geo.kept_rows.len() * geo.kept_cols;
                let need_x = wants(*x);
                let need_w = wants(*w_re) || wants(*w_im);
                let mut gx = vec![0.0; if need_x { tx.len() } else { 0 }];
                let mut gwr = vec![0.0; if need_w { tr.len() } else { 0 }];
                let mut gwi = vec![0.0; if need_w { ti.len() } else { 0 }];
                for b in 0..geo.batch {
                    for o in 0..geo.cout {
                        let ob = (b * geo.cout + o) * plane;
                        for i in 0..geo.cin {
                            let xb = (b * geo.cin + i) * plane;
                            let wb = (o * geo.cin + i) * wplane;
                            for (j, &r) in geo.kept_rows.iter().enumerate() {
                                for c in 0..geo.kept_cols {
                                    let widx = wb + j * geo.kept_cols + c;
                                    let idx = r * geo.half + c;
                                    let gv = complex_at(gd, ob + idx);
                                    if need_x {
                                        let w = C64::new(tr.data()[widx], ti.data()[widx]);
                                        let d = w.conj() * gv;
                                        gx[2 * (xb + idx)] += d.re;
                                        gx[2 * (xb + idx) + 1] += d.im;
                                    }
                                    if need_w {
                                        let d = gv * complex_at(tx.data(), xb + idx).conj();
                                        gwr[widx] += d.re;
                                        gwi[widx] += d.im;
                                    }
                                }
                            }
                        }
                    }
                }
                if need_x {
                    out.push((*x, Tensor::new(tx.shape(), gx)?));
                }
                if wants(*w_re) {
                    out.push((*w_re, Tensor::new(tr.shape(), gwr)?));
                }
                if wants(*w_im) {
                    out.push((*w_im, Tensor::new(ti.shape(), gwi)?));
                }
            }
            Op::CausalConv { x, kernel, geo } => {
                let (tx, tk) = (self.value(*x), self.value(*kernel));
                let taps = geo.taps;
                if wants(*x) {
                    let mut gx = vec![0.0; tx.len()];
                    scan_lines(geo, |c, line| {
                        let k = &tk.data()[c * taps..(c + 1) * taps];
                        for t in 0..geo.len {
                            let gv = gd[line(t)];
                            for (tau, &kv) in k.iter().enumerate().take(t + 1) {
                                gx[line(t - tau)] += kv * gv;
                            }
                        }
                    });
                    out.push((*x, Tensor::new(tx.shape(), gx)?));
                }
                if wants(*kernel) {
                    let mut gk = vec![0.0; tk.len()];
                    scan_lines(geo, |c, line| {
                        for t in 0..geo.len {
                            let gv = gd[line(t)];
                            for tau in 0..taps.min(t + 1) {
                                gk[c * taps + tau] += gv * tx.data()[line(t - tau)];
                            }
                        }
                    });
                    out.push((*kernel, Tensor::new(tk.shape(), gk)?));
                }
            }
            Op::SliceLast { x, start, width } => {
                let tx = self.value(*x);
                let last = *tx.shape().last().unwrap();
                let mut gx = vec![0.0; tx.len()];
                for r in 0..tx.len() / last {
                    gx[r * last + start..r * last + start + width]
                        .copy_from_slice(&gd[r * width..(r + 1) * width]);
                }
                out.push((*x, Tensor::new(tx.shape(), gx)?));
            }
            Op::ConcatLast { parts } => {
                let total = *g.shape().last().unwrap();
                let rows = g.len() / total;
                let mut offset = 0;
                for &p in parts {
                    let tp = self.value(p);
                    let w = *tp.shape().last().unwrap();
                    if wants(p) {
                        let mut gp = Vec::with_capacity(tp.len());
                        for r in 0..rows {
                            gp.extend_from_slice(&gd[r * total + offset..r * total + offset + w]);
                        }
                        out.push((p, Tensor::new(tp.shape(), gp)?));
                    }
                    offset += w;
                }
            }
        }
        Ok(out)
    }
}

fn index_a(mode: Broadcast, i: usize) -> usize {
    if mode == Broadcast::ScalarLeft {
        0
    } else {
        i
    }
}

fn index_b(mode: Broadcast, i: usize, b_len: usize) -> usize {
    match mode {
        Broadcast::Same | Broadcast::ScalarLeft => i,
        Broadcast::ScalarRight => 0,
        Broadcast::Suffix => i % b_len,
    }
}

fn transpose_data(data: &[f64], batch: usize, rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for b in 0..batch {
        let base = b * rows * cols;
        for r in 0..rows {
            for c in 0..cols {
                out[base + c * rows + r] = data[base + r * cols + c];
            }
        }
    }
    out
}

/// Calls `f(channel, index_of)` once per scan line, where `index_of(t)`
/// is the flat index of position `t` on that line.
fn scan_lines(geo: &ScanGeometry, mut f: impl FnMut(usize, &dyn Fn(usize) -> usize)) {
    let block = geo.outer * geo.len * geo.inner;
    for b in 0..geo.batch {
        for c in 0..geo.channels {
            let base = (b * geo.channels + c) * block;
            for o in 0..geo.outer {
                for i in 0..geo.inner {
                    let start = base + o * geo.len * geo.inner + i;
                    let inner = geo.inner;
                    f(c, &move |t| start + t * inner);
                }
            }
        }
    }
}
