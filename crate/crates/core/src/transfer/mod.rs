//! Model composition `P ∘ F ∘ L`, per-task adapters, training phases and
//! evaluation metrics.

mod core_net;
mod metrics;

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

pub use core_net::{Architecture, CoreConfig, OperatorCore};
pub use metrics::{evaluate, mse, nmae, EvalMetrics, MetricRecord, Predictor, ReportTable, StoredTargets, NMAE_EPS};

use crate::autodiff::{Tape, Var};
use crate::blocks::{coordinate_channels, LiftingMap, ParamStore, ProjectionMap, Session, Trainable};
use crate::error::{Error, Result};
use crate::pde::{ChannelStats, GeneratorConfig};
use crate::rng;
use crate::tensor::Tensor;

/// A physical process with its own input and output function sets.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PhysicsTask {
    pub id: String,
    pub generator: GeneratorConfig,
}

impl PhysicsTask {
    pub fn new(id: impl Into<String>, generator: GeneratorConfig) -> Result<Self> {
        let id = id.into();
        if id.is_empty() || id.contains('/') || id.chars().any(char::is_whitespace) {
            return Err(Error::InvalidArgument(format!("task id `{id}` must be a non-empty word")));
        }
        generator.validate()?;
        Ok(Self { id, generator })
    }

    pub fn dims(&self) -> usize {
        self.generator.grid.dims()
    }

    /// Input functions, not counting coordinate channels.
    pub fn in_channels(&self) -> usize {
        self.generator.in_channels()
    }

    pub fn out_channels(&self) -> usize {
        self.generator.out_channels()
    }

    pub fn input_names(&self) -> Vec<String> {
        self.generator.kind.input_names(self.dims())
    }

    pub fn output_names(&self) -> Vec<String> {
        self.generator.kind.output_names()
    }
}

/// Lifting and projection for one task.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskAdapter {
    pub lift: LiftingMap,
    pub proj: ProjectionMap,
}

impl TaskAdapter {
    fn new(task: &PhysicsTask, width: usize) -> Self {
        let prefix = adapter_prefix(&task.id);
        Self {
            lift: LiftingMap::new(format!("{prefix}lift"), &task.id, task.in_channels() + task.dims(), width),
            proj: ProjectionMap::new(format!("{prefix}proj"), &task.id, width, task.out_channels()),
        }
    }

    pub fn param_count(&self) -> usize {
        self.lift.param_count() + self.proj.param_count()
    }
}

pub fn adapter_prefix(task: &str) -> String {
    format!("adapter/{task}/")
}

pub const CORE_PREFIX: &str = "core/";

/// Adapters by task id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdapterSet {
    adapters: BTreeMap<String, TaskAdapter>,
}

impl AdapterSet {
    pub fn get(&self, task: &str) -> Result<&TaskAdapter> {
        self.adapters
            .get(task)
            .ok_or_else(|| Error::MissingAdapter(task.to_string()))
    }

    pub fn contains(&self, task: &str) -> bool {
        self.adapters.contains_key(task)
    }

    pub fn tasks(&self) -> impl Iterator<Item = &String> {
        self.adapters.keys()
    }

    pub fn len(&self) -> usize {
        self.adapters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adapters.is_empty()
    }
}

/// Per-task normalization of inputs and outputs, fitted on training data.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TaskNormalization {
    pub input: ChannelStats,
    pub output: ChannelStats,
}

/// A shared core plus any number of task adapters and their parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuralOperatorModel {
    pub core: OperatorCore,
    pub params: ParamStore,
    adapters: AdapterSet,
    tasks: BTreeMap<String, PhysicsTask>,
    norms: BTreeMap<String, TaskNormalization>,
}

impl NeuralOperatorModel {
    /// Fresh core initialized from `seed`, no adapters.
    pub fn new(config: CoreConfig, seed: u64) -> Result<Self> {
        let core = OperatorCore::new(config)?;
        let mut params = ParamStore::new();
        core.init(&mut params, &mut rng::seeded(rng::derive(seed, 0)));
        Ok(Self {
            core,
            params,
            adapters: AdapterSet::default(),
            tasks: BTreeMap::new(),
            norms: BTreeMap::new(),
        })
    }

    /// Rebuilds a model around existing parameters, checking that every
    /// expected parameter is present with the right size.
    pub fn from_parts(
        config: CoreConfig,
        tasks: Vec<PhysicsTask>,
        params: ParamStore,
        norms: BTreeMap<String, TaskNormalization>,
    ) -> Result<Self> {
        let core = OperatorCore::new(config)?;
        let mut model = Self {
            core,
            params,
            adapters: AdapterSet::default(),
            tasks: BTreeMap::new(),
            norms,
        };
        for task in tasks {
            model.check_task(&task)?;
            let adapter = TaskAdapter::new(&task, model.core.config.width);
            model.adapters.adapters.insert(task.id.clone(), adapter);
            model.tasks.insert(task.id.clone(), task);
        }
        let mut expected = ParamStore::new();
        let mut scratch = rng::seeded(0);
        model.core.init(&mut expected, &mut scratch);
        for a in model.adapters.adapters.values() {
            a.lift.init(&mut expected, &mut scratch);
            a.proj.init(&mut expected, &mut scratch);
        }
        for (name, t) in expected.iter() {
            match model.params.get(name) {
                Some(p) if p.shape() == t.shape() => {}
                Some(p) => return Err(Error::shape("parameter", p.shape(), t.shape())),
                None => return Err(Error::UnknownParameter(name.clone())),
            }
        }
        if model.params.len() != expected.len() {
            let extra = model.params.names().find(|n| !expected.contains(n)).cloned().unwrap_or_default();
            return Err(Error::UnknownParameter(extra));
        }
        Ok(model)
    }

    fn check_task(&self, task: &PhysicsTask) -> Result<()> {
        if task.dims() != self.core.dims() {
            return Err(Error::InvalidArgument(format!(
                "task `{}` is {}-D but the core is {}-D",
                task.id,
                task.dims(),
                self.core.dims()
            )));
        }
        self.core.validate_grid(&task.generator.grid.points)
    }

    /// Adds freshly initialized lifting and projection maps for `task`.
    /// The core parameters are not touched.
    pub fn attach_adapter(&mut self, task: PhysicsTask, seed: u64, replace: bool) -> Result<()> {
        if self.adapters.contains(&task.id) && !replace {
            return Err(Error::DuplicateAdapter(task.id));
        }
        self.check_task(&task)?;
        let prefix = adapter_prefix(&task.id);
        self.params.remove_prefix(&prefix);
        self.norms.remove(&task.id);
        let adapter = TaskAdapter::new(&task, self.core.config.width);
        let mut r = rng::seeded(rng::derive(seed, 1));
        adapter.lift.init(&mut self.params, &mut r);
        adapter.proj.init(&mut self.params, &mut r);
        self.adapters.adapters.insert(task.id.clone(), adapter);
        self.tasks.insert(task.id.clone(), task);
        Ok(())
    }

    pub fn adapters(&self) -> &AdapterSet {
        &self.adapters
    }

    pub fn task(&self, id: &str) -> Result<&PhysicsTask> {
        self.tasks.get(id).ok_or_else(|| Error::UnknownTask(id.to_string()))
    }

    pub fn tasks(&self) -> impl Iterator<Item = &PhysicsTask> {
        self.tasks.values()
    }

    pub fn set_normalization(&mut self, task: &str, norm: TaskNormalization) -> Result<()> {
        let t = self.task(task)?;
        if norm.input.channels() != t.in_channels() || norm.output.channels() != t.out_channels() {
            return Err(Error::ChannelMismatch {
                task: task.to_string(),
                expected: t.in_channels(),
                found: norm.input.channels(),
            });
        }
        self.norms.insert(task.to_string(), norm);
        Ok(())
    }

    /// Identity statistics if none were set.
    pub fn normalization(&self, task: &str) -> Result<TaskNormalization> {
        let t = self.task(task)?;
        Ok(self.norms.get(task).cloned().unwrap_or_else(|| TaskNormalization {
            input: ChannelStats::identity(t.in_channels()),
            output: ChannelStats::identity(t.out_channels()),
        }))
    }

    pub fn normalizations(&self) -> &BTreeMap<String, TaskNormalization> {
        &self.norms
    }

    pub fn core_param_count(&self) -> usize {
        self.params.count(CORE_PREFIX)
    }

    pub fn adapter_param_count(&self, task: &str) -> Result<usize> {
        self.adapters.get(task)?;
        Ok(self.params.count(&adapter_prefix(task)))
    }

    /// `|θ_F| + |θ_L| + |θ_P|` for one task.
    pub fn composed_param_count(&self, task: &str) -> Result<usize> {
        Ok(self.core_param_count() + self.adapter_param_count(task)?)
    }

    pub fn total_param_count(&self) -> usize {
        self.params.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn core_fingerprint(&self) -> [u8; 32] {
        self.params.fingerprint(CORE_PREFIX)
    }

    pub fn compose(&self, task: &str) -> Result<ComposedModel<'_>> {
        let adapter = self.adapters.get(task)?;
        Ok(ComposedModel {
            core: &self.core,
            adapter,
            dims: self.core.dims(),
        })
    }

    /// Physical-unit prediction for `(N, n_in, *grid)` inputs.
    pub fn predict(&self, task: &str, inputs: &Tensor) -> Result<Tensor> {
        let composed = self.compose(task)?;
        let expected = self.task(task)?.in_channels();
        if inputs.rank() < 2 || inputs.shape()[1] != expected {
            return Err(Error::ChannelMismatch {
                task: task.to_string(),
                expected,
                found: inputs.shape().get(1).copied().unwrap_or(0),
            });
        }
        let norm = self.normalization(task)?;
        let x = norm.input.normalize(inputs)?;
        let mut tape = Tape::new();
        let mut s = Session::new(&mut tape, &self.params, Trainable::Nothing);
        let y = composed.forward(&mut s, &x)?;
        let out = tape.value(y).clone();
        norm.output.denormalize(&out)
    }
}

/// `project(core(lift([a, x])))` for one task.
#[derive(Debug, Clone, Copy)]
pub struct ComposedModel<'m> {
    core: &'m OperatorCore,
    adapter: &'m TaskAdapter,
    dims: usize,
}

impl ComposedModel<'_> {
    /// `inputs` is `(B, n_in, *grid)`; coordinate channels are appended here.
    pub fn forward(&self, s: &mut Session, inputs: &Tensor) -> Result<Var> {
        let shape = inputs.shape();
        if shape.len() != self.dims + 2 {
            return Err(Error::invalid_shape(
                "compose",
                format!("inputs {:?} are not (batch, channels, {}-D grid)", shape, self.dims),
            ));
        }
        let expected = self.adapter.lift.in_channels() - self.dims;
        if shape[1] != expected {
            return Err(Error::ChannelMismatch {
                task: self.adapter.lift.task.clone(),
                expected,
                found: shape[1],
            });
        }
        let a = s.tape.constant(with_coordinates(inputs));
        let v = self.adapter.lift.forward(s, a)?;
        let v = self.core.forward(s, v)?;
        self.adapter.proj.forward(s, v)
    }
}

/// Appends normalized grid coordinates to every sample of a
/// `(B, C, *grid)` batch.
pub fn with_coordinates(inputs: &Tensor) -> Tensor {
    let shape = inputs.shape();
    let (b, c) = (shape[0], shape[1]);
    let grid = &shape[2..];
    let plane: usize = grid.iter().product();
    let coords = coordinate_channels(grid);
    let dims = grid.len();
    let mut data = Vec::with_capacity(b * (c + dims) * plane);
    for i in 0..b {
        data.extend_from_slice(&inputs.data()[i * c * plane..(i + 1) * c * plane]);
        data.extend_from_slice(coords.data());
    }
    let mut out_shape = vec![b, c + dims];
    out_shape.extend_from_slice(grid);
    Tensor::new(&out_shape, data).expect("coordinate concat")
}

/// Which stage of the transfer protocol a training run belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Phase {
    Pretrain,
    Finetune,
    Scratch,
}

impl Phase {
    pub fn id(self) -> &'static str {
        match self {
            Phase::Pretrain => "pretrain",
            Phase::Finetune => "finetune",
            Phase::Scratch => "scratch",
        }
    }
}

impl core::fmt::Display for Phase {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.id())
    }
}

/// A phase together with the tasks it trains on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainPhase {
    pub phase: Phase,
    pub tasks: Vec<String>,
}

impl TrainPhase {
    pub fn pretrain(tasks: &[&str]) -> Self {
        Self {
            phase: Phase::Pretrain,
            tasks: tasks.iter().map(|t| t.to_string()).collect(),
        }
    }

    pub fn finetune(task: &str) -> Self {
        Self {
            phase: Phase::Finetune,
            tasks: vec![task.to_string()],
        }
    }

    pub fn scratch(task: &str) -> Self {
        Self {
            phase: Phase::Scratch,
            tasks: vec![task.to_string()],
        }
    }
}

/// Parameter names updated in `phase`: the core and the active tasks'
/// adapters for pretraining and scratch runs, only the fine-tuning task's
/// adapter otherwise.
pub fn trainable_parameters(phase: &TrainPhase, model: &NeuralOperatorModel) -> Result<BTreeSet<String>> {
    if phase.tasks.is_empty() {
        return Err(Error::InvalidArgument(format!("{} phase without tasks", phase.phase)));
    }
    if phase.phase != Phase::Pretrain && phase.tasks.len() != 1 {
        return Err(Error::InvalidArgument(format!("{} phase takes exactly one task", phase.phase)));
    }
    let mut names = BTreeSet::new();
    for task in &phase.tasks {
        model.adapters.get(task)?;
        let prefix = adapter_prefix(task);
        names.extend(model.params.with_prefix(&prefix).map(|(n, _)| n.clone()));
    }
    if phase.phase != Phase::Finetune {
        names.extend(model.params.with_prefix(CORE_PREFIX).map(|(n, _)| n.clone()));
    }
    Ok(names)
}
