use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::str::FromStr;

use super::solvers::{
    solve_advection, solve_burgers, solve_heat, solve_heat_convection, solve_rd_advection, ReactionParams,
};
use super::{random_field_with, GridSpec};
use crate::error::{Error, Result};
use crate::rng::{self, SeededRng};
use crate::tensor::Tensor;

/// The physics behind a task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum TaskKind {
    Advection,
    Heat,
    HeatConvection,
    Burgers,
    GrayScott,
    RdAdvection,
}

impl TaskKind {
    pub const ALL: [TaskKind; 6] = [
        TaskKind::Advection,
        TaskKind::Heat,
        TaskKind::HeatConvection,
        TaskKind::Burgers,
        TaskKind::GrayScott,
        TaskKind::RdAdvection,
    ];

    pub fn id(self) -> &'static str {
        match self {
            TaskKind::Advection => "advection",
            TaskKind::Heat => "heat",
            TaskKind::HeatConvection => "heat_convection",
            TaskKind::Burgers => "burgers",
            TaskKind::GrayScott => "gray_scott",
            TaskKind::RdAdvection => "rd_advection",
        }
    }

    /// Input function names for a `dims`-dimensional grid. Coefficients
    /// enter as constant channels; velocities have one channel per axis.
    pub fn input_names(self, dims: usize) -> Vec<String> {
        let axes = ["x", "y"];
        let velocity = || (0..dims).map(|a| format!("c_{}", axes[a]));
        let mut names: Vec<String> = match self {
            TaskKind::GrayScott | TaskKind::RdAdvection => vec!["u0".into(), "v0".into()],
            _ => vec!["u0".into()],
        };
        match self {
            TaskKind::Advection => names.extend(velocity()),
            TaskKind::Heat | TaskKind::Burgers => names.push("nu".into()),
            TaskKind::HeatConvection => {
                names.push("nu".into());
                names.extend(velocity());
            }
            TaskKind::GrayScott => names.extend(["F".to_string(), "k".to_string()]),
            TaskKind::RdAdvection => {
                names.extend(["F".to_string(), "k".to_string()]);
                names.extend(velocity());
            }
        }
        names
    }

    pub fn output_names(self) -> Vec<String> {
        match self {
            TaskKind::GrayScott | TaskKind::RdAdvection => vec!["u".into(), "v".into()],
            _ => vec!["u".into()],
        }
    }

    pub fn in_channels(self, dims: usize) -> usize {
        self.input_names(dims).len()
    }

    pub fn out_channels(self) -> usize {
        self.output_names().len()
    }
}

impl core::fmt::Display for TaskKind {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TaskKind::ALL
            .into_iter()
            .find(|k| k.id() == s)
            .ok_or_else(|| Error::UnknownTask(s.to_string()))
    }
}

/// Sampling ranges and discretization for one task's dataset.
///
/// Initial conditions are random fields with correlation length
/// `length_scale` and RMS `amplitude`; coefficients are drawn uniformly
/// from their `[lo, hi]` ranges (velocity components independently).
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GeneratorConfig {
    pub kind: TaskKind,
    pub grid: GridSpec,
    pub length_scale: f64,
    pub amplitude: f64,
    pub nu: [f64; 2],
    pub velocity: [f64; 2],
    pub feed: [f64; 2],
    pub kill: [f64; 2],
    pub du: f64,
    pub dv: f64,
    pub max_retries: usize,
}

impl GeneratorConfig {
    /// Desk-scale defaults. 1-D tasks use 128 points on a unit interval;
    /// heat tasks default to a 32×32 unit square.
    pub fn default_for(kind: TaskKind) -> Self {
        let line = |dt, steps| GridSpec::new(&[128], &[1.0], dt, steps).expect("valid default grid");
        let square = |dt, steps| GridSpec::new(&[32, 32], &[1.0, 1.0], dt, steps).expect("valid default grid");
        let base = GeneratorConfig {
            kind,
            grid: line(0.0025, 200),
            length_scale: 0.1,
            amplitude: 0.5,
            nu: [0.01, 0.02],
            velocity: [-1.0, 1.0],
            feed: [0.02, 0.05],
            kill: [0.05, 0.065],
            du: 2e-5,
            dv: 1e-5,
            max_retries: 8,
        };
        match kind {
            TaskKind::Advection => GeneratorConfig {
                grid: line(0.01, 50),
                ..base
            },
            TaskKind::Burgers => base,
            TaskKind::Heat | TaskKind::HeatConvection => GeneratorConfig {
                grid: square(0.05, 20),
                length_scale: 0.15,
                nu: [0.002, 0.01],
                velocity: [-0.5, 0.5],
                ..base
            },
            TaskKind::GrayScott | TaskKind::RdAdvection => GeneratorConfig {
                grid: line(1.0, 200),
                amplitude: 1.0,
                velocity: [-1e-3, 1e-3],
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        let range = |name: &str, r: [f64; 2], positive: bool| {
            let ok = r[0].is_finite() && r[1].is_finite() && r[0] <= r[1] && (!positive || r[0] > 0.0);
            if ok {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("{name} range {:?} is invalid", r)))
            }
        };
        range("nu", self.nu, true)?;
        range("velocity", self.velocity, false)?;
        range("feed", self.feed, false)?;
        range("kill", self.kill, false)?;
        if !(self.length_scale > 0.0 && self.amplitude >= 0.0) {
            return Err(Error::InvalidArgument("length_scale and amplitude must be positive".into()));
        }
        if self.kind == TaskKind::Burgers && self.grid.dims() != 1 {
            return Err(Error::InvalidArgument("burgers datasets are 1-D".into()));
        }
        if self.feed[0] < 0.0 || self.kill[0] < 0.0 {
            return Err(Error::InvalidArgument("feed and kill must be non-negative".into()));
        }
        Ok(())
    }

    pub fn in_channels(&self) -> usize {
        self.kind.in_channels(self.grid.dims())
    }

    pub fn out_channels(&self) -> usize {
        self.kind.out_channels()
    }

    /// Input and target channel data of one sample, channel-major.
    fn sample(&self, rng: &mut SeededRng) -> Result<(Vec<f64>, Vec<f64>)> {
        let g = &self.grid;
        let cells = g.cells();
        let draw = |rng: &mut SeededRng, r: [f64; 2]| rng::uniform(rng, r[0], r[1]);
        let mut inputs = Vec::with_capacity(self.in_channels() * cells);
        let constant = |inputs: &mut Vec<f64>, v: f64| inputs.extend(core::iter::repeat_n(v, cells));

        let target = match self.kind {
            TaskKind::Advection | TaskKind::Heat | TaskKind::HeatConvection | TaskKind::Burgers => {
                let nu = draw(rng, self.nu);
                let c: Vec<f64> = (0..g.dims()).map(|_| draw(rng, self.velocity)).collect();
                let u0 = random_field_with(g, self.length_scale, self.amplitude, rng)?;
                inputs.extend_from_slice(u0.data());
                let traj = match self.kind {
                    TaskKind::Advection => {
                        c.iter().for_each(|&v| constant(&mut inputs, v));
                        solve_advection(&u0, &c, g)?
                    }
                    TaskKind::Heat => {
                        constant(&mut inputs, nu);
                        solve_heat(&u0, nu, g)?
                    }
                    TaskKind::HeatConvection => {
                        constant(&mut inputs, nu);
                        c.iter().for_each(|&v| constant(&mut inputs, v));
                        solve_heat_convection(&u0, nu, &c, g)?
                    }
                    _ => {
                        constant(&mut inputs, nu);
                        solve_burgers(&u0, nu, g)?
                    }
                };
                traj.into_last()
            }
            TaskKind::GrayScott | TaskKind::RdAdvection => {
                let params = ReactionParams {
                    du: self.du,
                    dv: self.dv,
                    feed: draw(rng, self.feed),
                    kill: draw(rng, self.kill),
                };
                let c: Vec<f64> = match self.kind {
                    TaskKind::RdAdvection => (0..g.dims()).map(|_| draw(rng, self.velocity)).collect(),
                    _ => vec![0.0; g.dims()],
                };
                let seed = random_field_with(g, self.length_scale, self.amplitude, rng)?;
                // a smooth patchy v seeded into the u = 1 rest state
                let v0 = seed.map(|s| 0.25 * (1.0 + libm::tanh(2.0 * s)));
                let u0 = v0.map(|v| 1.0 - v);
                inputs.extend_from_slice(u0.data());
                inputs.extend_from_slice(v0.data());
                constant(&mut inputs, params.feed);
                constant(&mut inputs, params.kill);
                c.iter()
                    .take(if self.kind == TaskKind::RdAdvection { g.dims() } else { 0 })
                    .for_each(|&v| constant(&mut inputs, v));
                solve_rd_advection(&u0, &v0, params, &c, g)?.into_last()
            }
        };
        if !target.is_finite() {
            return Err(Error::Diverged {
                solver: "dataset",
                detail: "non-finite target".into(),
            });
        }
        Ok((inputs, target.into_data()))
    }
}

/// Input/target pairs of one task, `(N, channels, *grid)` each.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub task: String,
    pub kind: TaskKind,
    pub grid: GridSpec,
    pub inputs: Tensor,
    pub targets: Tensor,
    /// Seed actually used for each sample.
    pub seeds: Vec<u64>,
}

impl Dataset {
    pub fn new(task: impl Into<String>, kind: TaskKind, grid: GridSpec, inputs: Tensor, targets: Tensor, seeds: Vec<u64>) -> Result<Self> {
        let n = seeds.len();
        let want_in = {
            let mut s = vec![n];
            s.extend(grid.field_shape(kind.in_channels(grid.dims())));
            s
        };
        let want_out = {
            let mut s = vec![n];
            s.extend(grid.field_shape(kind.out_channels()));
            s
        };
        if inputs.shape() != want_in.as_slice() {
            return Err(Error::shape("dataset inputs", inputs.shape(), &want_in));
        }
        if targets.shape() != want_out.as_slice() {
            return Err(Error::shape("dataset targets", targets.shape(), &want_out));
        }
        Ok(Self {
            task: task.into(),
            kind,
            grid,
            inputs,
            targets,
            seeds,
        })
    }

    pub fn len(&self) -> usize {
        self.seeds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seeds.is_empty()
    }

    pub fn input_names(&self) -> Vec<String> {
        self.kind.input_names(self.grid.dims())
    }

    pub fn output_names(&self) -> Vec<String> {
        self.kind.output_names()
    }

    /// Stacks the samples at `indices` into `(inputs, targets)` batches.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Tensor) {
        (gather(&self.inputs, indices), gather(&self.targets, indices))
    }
}

pub(crate) fn gather(t: &Tensor, indices: &[usize]) -> Tensor {
    let per: usize = t.shape()[1..].iter().product();
    let mut data = Vec::with_capacity(per * indices.len());
    for &i in indices {
        data.extend_from_slice(&t.data()[i * per..(i + 1) * per]);
    }
    let mut shape = t.shape().to_vec();
    shape[0] = indices.len();
    Tensor::new(&shape, data).expect("gathered rows")
}

/// Generates `n` samples. Sample `i` first uses seed `derive(derive(master, i), 0)`;
/// if the solver rejects it, attempts `1, 2, …` follow up to `max_retries`.
pub fn make_dataset(task: &str, config: &GeneratorConfig, n: usize, master_seed: u64) -> Result<Dataset> {
    config.validate()?;
    let cells = config.grid.cells();
    let mut inputs = Vec::with_capacity(n * config.in_channels() * cells);
    let mut targets = Vec::with_capacity(n * config.out_channels() * cells);
    let mut seeds = Vec::with_capacity(n);
    for index in 0..n {
        let base = rng::derive(master_seed, index as u64);
        let attempts = config.max_retries.max(1);
        let mut last = String::new();
        let mut done = false;
        for attempt in 0..attempts {
            let seed = rng::derive(base, attempt as u64);
            match config.sample(&mut rng::seeded(seed)) {
                Ok((a, u)) => {
                    inputs.extend(a);
                    targets.extend(u);
                    seeds.push(seed);
                    done = true;
                    break;
                }
                Err(e @ (Error::Unstable { .. } | Error::Diverged { .. })) => last = e.to_string(),
                Err(e) => return Err(e),
            }
        }
        if !done {
            return Err(Error::SampleRejected { index, attempts, last });
        }
    }
    let g = &config.grid;
    let mut in_shape = vec![n];
    in_shape.extend(g.field_shape(config.in_channels()));
    let mut out_shape = vec![n];
    out_shape.extend(g.field_shape(config.out_channels()));
    Dataset::new(
        task,
        config.kind,
        g.clone(),
        Tensor::new(&in_shape, inputs)?,
        Tensor::new(&out_shape, targets)?,
        seeds,
    )
}

/// Per-channel mean and standard deviation over samples and grid points.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelStats {
    /// Statistics of a `(N, C, *grid)` tensor. Channels with no spread get
    /// unit scale so they pass through centred.
    pub fn fit(t: &Tensor) -> Result<Self> {
        if t.rank() < 2 || t.shape()[0] == 0 {
            return Err(Error::EmptyDataset("normalization statistics".into()));
        }
        let (n, c) = (t.shape()[0], t.shape()[1]);
        let plane: usize = t.shape()[2..].iter().product();
        let count = (n * plane) as f64;
        let mut mean = vec![0.0; c];
        let mut std = vec![0.0; c];
        for ch in 0..c {
            let values = || (0..n).flat_map(move |s| t.data()[(s * c + ch) * plane..(s * c + ch + 1) * plane].iter());
            let m = values().sum::<f64>() / count;
            let var = values().map(|v| (v - m) * (v - m)).sum::<f64>() / count;
            let sd = libm::sqrt(var);
            mean[ch] = m;
            std[ch] = if sd > 1e-12 * m.abs().max(1.0) { sd } else { 1.0 };
        }
        Ok(Self { mean, std })
    }

    pub fn identity(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    fn apply(&self, t: &Tensor, f: impl Fn(f64, f64, f64) -> f64) -> Result<Tensor> {
        if t.rank() < 2 || t.shape()[1] != self.channels() {
            return Err(Error::invalid_shape(
                "normalize",
                format!("{:?} does not have {} channels on axis 1", t.shape(), self.channels()),
            ));
        }
        let c = t.shape()[1];
        let plane: usize = t.shape()[2..].iter().product();
        let mut out = t.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            let ch = (i / plane) % c;
            *v = f(*v, self.mean[ch], self.std[ch]);
        }
        Ok(out)
    }

    pub fn normalize(&self, t: &Tensor) -> Result<Tensor> {
        self.apply(t, |v, m, s| (v - m) / s)
    }

    pub fn denormalize(&self, t: &Tensor) -> Result<Tensor> {
        self.apply(t, |v, m, s| v * s + m)
    }
}
