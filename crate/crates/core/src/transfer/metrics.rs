use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::pde::Dataset;
use crate::tensor::Tensor;

/// Denominator guard for range-normalized errors.
pub const NMAE_EPS: f64 = 1e-8;

fn check_pair(op: &'static str, pred: &Tensor, target: &Tensor) -> Result<()> {
    if pred.shape() != target.shape() {
        return Err(Error::shape(op, pred.shape(), target.shape()));
    }
    if target.is_empty() {
        return Err(Error::EmptyTensor { op });
    }
    Ok(())
}

pub fn mse(pred: &Tensor, target: &Tensor) -> Result<f64> {
    check_pair("mse", pred, target)?;
    let sum: f64 = pred.data().iter().zip(target.data()).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(sum / pred.len() as f64)
}

/// Range-normalized mean absolute error, as a fraction.
///
/// The leading axis indexes samples. Per sample, the mean absolute error
/// over all remaining entries is divided by `max(target) − min(target) + eps`;
/// the result is the mean over samples.
pub fn nmae(pred: &Tensor, target: &Tensor, eps: f64) -> Result<f64> {
    check_pair("nmae", pred, target)?;
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("nmae eps {eps} must be positive")));
    }
    let samples = if target.rank() == 0 { 1 } else { target.shape()[0] };
    let per = target.len() / samples;
    let mut total = 0.0;
    for s in 0..samples {
        let p = &pred.data()[s * per..(s + 1) * per];
        let t = &target.data()[s * per..(s + 1) * per];
        let mae = p.iter().zip(t).map(|(a, b)| libm::fabs(a - b)).sum::<f64>() / per as f64;
        let (lo, hi) = t.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        total += mae / (hi - lo + eps);
    }
    Ok(total / samples as f64)
}

/// Anything that maps a batch of physical inputs to physical outputs.
pub trait Predictor {
    fn predict(&self, inputs: &Tensor) -> Result<Tensor>;
}

/// A lookup table returning the stored target of any input sample it has
/// seen; a perfect model for harness self-tests.
#[derive(Debug, Clone)]
pub struct StoredTargets {
    inputs: Tensor,
    targets: Tensor,
}

impl StoredTargets {
    pub fn new(dataset: &Dataset) -> Self {
        Self {
            inputs: dataset.inputs.clone(),
            targets: dataset.targets.clone(),
        }
    }
}

impl Predictor for StoredTargets {
    fn predict(&self, inputs: &Tensor) -> Result<Tensor> {
        let n = self.inputs.shape()[0];
        let per_in = if n == 0 { 0 } else { self.inputs.len() / n };
        let per_out = if n == 0 { 0 } else { self.targets.len() / n };
        let b = inputs.shape()[0];
        let mut out = Vec::with_capacity(b * per_out);
        for i in 0..b {
            let row = &inputs.data()[i * per_in..(i + 1) * per_in];
            let hit = (0..n)
                .find(|&j| &self.inputs.data()[j * per_in..(j + 1) * per_in] == row)
                .ok_or_else(|| Error::InvalidArgument(format!("sample {i} is not in the stored table")))?;
            out.extend_from_slice(&self.targets.data()[hit * per_out..(hit + 1) * per_out]);
        }
        let mut shape = self.targets.shape().to_vec();
        shape[0] = b;
        Tensor::new(&shape, out)
    }
}

impl Predictor for (&super::NeuralOperatorModel, &str) {
    fn predict(&self, inputs: &Tensor) -> Result<Tensor> {
        self.0.predict(self.1, inputs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalMetrics {
    pub mse: f64,
    /// Fraction, not percent.
    pub nmae: f64,
    pub samples: usize,
}

impl EvalMetrics {
    pub fn nmae_percent(&self) -> f64 {
        100.0 * self.nmae
    }
}

/// Error metrics of `model` over a whole dataset split, in physical units,
/// predicting `batch` samples at a time.
pub fn evaluate<P: Predictor + ?Sized>(model: &P, data: &Dataset, batch: usize) -> Result<EvalMetrics> {
    if data.is_empty() {
        return Err(Error::EmptyDataset(data.task.clone()));
    }
    let batch = batch.max(1);
    let (mut sq, mut abs_norm) = (0.0, 0.0);
    let indices: Vec<usize> = (0..data.len()).collect();
    for chunk in indices.chunks(batch) {
        let (x, y) = data.batch(chunk);
        let p = model.predict(&x)?;
        sq += mse(&p, &y)? * y.len() as f64;
        abs_norm += nmae(&p, &y, NMAE_EPS)? * chunk.len() as f64;
    }
    Ok(EvalMetrics {
        mse: sq / data.targets.len() as f64,
        nmae: abs_norm / data.len() as f64,
        samples: data.len(),
    })
}

/// One row of a results table.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MetricRecord {
    pub label: String,
    pub task: String,
    pub mse: f64,
    pub nmae_percent: f64,
    pub epoch_seconds: f64,
    pub params: usize,
}

impl MetricRecord {
    fn cells(&self) -> [String; 5] {
        [
            self.label.clone(),
            format!("{:.3e}", self.mse),
            format!("{:.4}", self.nmae_percent),
            format!("{:.2}", self.epoch_seconds),
            self.params.to_string(),
        ]
    }

    /// `label | mse | nmae% | seconds | params`.
    pub fn row(&self) -> String {
        self.cells().join(" | ")
    }
}

/// Model comparison table with columns label, MSE, NMAE (%), average
/// epoch seconds and parameter count.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReportTable {
    pub rows: Vec<MetricRecord>,
}

impl ReportTable {
    pub const HEADER: [&'static str; 5] = ["Model", "MSE", "NMAE (%)", "Avg. epoch (s)", "Param."];

    pub fn new(rows: Vec<MetricRecord>) -> Self {
        Self { rows }
    }

    /// Ascending NMAE; ties keep their order.
    pub fn sort_by_nmae(&mut self) {
        self.rows.sort_by(|a, b| a.nmae_percent.total_cmp(&b.nmae_percent));
    }

    /// Plain-text table with a header and separator line. Labels are
    /// padded so the first bar lines up; numeric cells are left as
    /// formatted.
    pub fn to_text(&self) -> String {
        let label_width = self
            .rows
            .iter()
            .map(|r| r.label.chars().count())
            .chain([Self::HEADER[0].len()])
            .max()
            .unwrap_or(0);
        let line = |cells: &[String]| {
            let mut s = format!("{:<label_width$} | {}", cells[0], cells[1..].join(" | "));
            s.truncate(s.trim_end().len());
            s.push('\n');
            s
        };
        let header: Vec<String> = Self::HEADER.iter().map(|h| h.to_string()).collect();
        let mut out = line(&header);
        let sep_len = out.trim_end().chars().count();
        out.push_str(&"-".repeat(sep_len));
        out.push('\n');
        for r in &self.rows {
            out.push_str(&line(&r.cells()));
        }
        out
    }

    /// Comma-separated rows with a fixed header; numbers use the same
    /// formatting as the text table.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("model,task,mse,nmae_percent,avg_epoch_seconds,params\n");
        for r in &self.rows {
            let c = r.cells();
            let label = if r.label.contains(',') {
                format!("\"{}\"", r.label)
            } else {
                r.label.clone()
            };
            out.push_str(&format!("{},{},{},{},{},{}\n", label, r.task, c[1], c[2], c[3], c[4]));
        }
        out
    }
}
