//! TOML experiment configuration.
//!
//! Relative paths are resolved against the directory that holds the
//! config file. Task sections only need a `kind`; every other generator
//! field falls back to the defaults of that kind.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use neurop_core::pde::{GeneratorConfig, GridSpec, TaskKind};
use neurop_core::train::TrainConfig;
use neurop_core::transfer::{Architecture, CoreConfig, OperatorCore, PhysicsTask};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// The three kinds of transfer experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// Same equation, coefficients drawn from a disjoint range.
    OosParams,
    /// The fine-tune task takes more input functions than any pretraining task.
    InputExtension,
    /// Fine-tune on an equation that was not seen in pretraining.
    Multiphysics,
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scenario::OosParams => "oos_params",
            Scenario::InputExtension => "input_extension",
            Scenario::Multiphysics => "multiphysics",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoreSection {
    #[serde(default = "default_width")]
    pub width: usize,
    #[serde(default = "default_layers")]
    pub layers: usize,
    pub modes: Vec<usize>,
    pub ssm_taps: Option<usize>,
    pub ssm_axis: Option<usize>,
    pub latents: Option<usize>,
    pub self_layers: Option<usize>,
    pub heads: Option<usize>,
}

fn default_width() -> usize {
    32
}

fn default_layers() -> usize {
    4
}

impl CoreSection {
    pub fn core_config(&self, architecture: Architecture) -> CoreConfig {
        let mut c = CoreConfig::new(architecture, self.width, self.layers, &self.modes);
        c.ssm_taps = self.ssm_taps.unwrap_or(c.ssm_taps);
        c.ssm_axis = self.ssm_axis.or(c.ssm_axis);
        c.latents = self.latents.unwrap_or(c.latents);
        c.self_layers = self.self_layers.unwrap_or(c.self_layers);
        c.heads = self.heads.unwrap_or(c.heads);
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub train_samples: usize,
    pub val_samples: usize,
}

/// Generator overrides for one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSection {
    pub kind: TaskKind,
    pub points: Option<Vec<usize>>,
    pub lengths: Option<Vec<f64>>,
    pub dt: Option<f64>,
    pub steps: Option<usize>,
    pub length_scale: Option<f64>,
    pub amplitude: Option<f64>,
    pub nu: Option<[f64; 2]>,
    pub velocity: Option<[f64; 2]>,
    pub feed: Option<[f64; 2]>,
    pub kill: Option<[f64; 2]>,
    pub du: Option<f64>,
    pub dv: Option<f64>,
    pub max_retries: Option<usize>,
}

impl TaskSection {
    pub fn generator(&self) -> std::result::Result<GeneratorConfig, String> {
        let mut g = GeneratorConfig::default_for(self.kind);
        if self.points.is_some() || self.lengths.is_some() || self.dt.is_some() || self.steps.is_some() {
            let points = self.points.clone().unwrap_or_else(|| g.grid.points.clone());
            let lengths = self.lengths.clone().unwrap_or_else(|| vec![1.0; points.len()]);
            g.grid = GridSpec::new(
                &points,
                &lengths,
                self.dt.unwrap_or(g.grid.dt),
                self.steps.unwrap_or(g.grid.steps),
            )
            .map_err(|e| e.to_string())?;
        }
        g.length_scale = self.length_scale.unwrap_or(g.length_scale);
        g.amplitude = self.amplitude.unwrap_or(g.amplitude);
        g.nu = self.nu.unwrap_or(g.nu);
        g.velocity = self.velocity.unwrap_or(g.velocity);
        g.feed = self.feed.unwrap_or(g.feed);
        g.kill = self.kill.unwrap_or(g.kill);
        g.du = self.du.unwrap_or(g.du);
        g.dv = self.dv.unwrap_or(g.dv);
        g.max_retries = self.max_retries.unwrap_or(g.max_retries);
        g.validate().map_err(|e| e.to_string())?;
        Ok(g)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub pretrain: TrainConfig,
    pub finetune: TrainConfig,
    pub scratch: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub scenario: Scenario,
    pub architectures: Vec<Architecture>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    pub pretrain_tasks: Vec<String>,
    /// Optional so that a config can describe pretraining (or just data
    /// generation) alone.
    pub finetune_task: Option<String>,
    pub core: CoreSection,
    pub data: DataSection,
    #[serde(default)]
    pub train: TrainSection,
    pub tasks: BTreeMap<String, TaskSection>,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

impl FromStr for ExperimentConfig {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        let config: ExperimentConfig = toml::from_str(s).map_err(|e| CliError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }
}

impl ExperimentConfig {
    /// Parses and validates `path`, resolving `out_dir` against its
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => CliError::Config(format!("{}: no such config file", path.display())),
            _ => CliError::io(path)(e),
        })?;
        let mut config: ExperimentConfig = text
            .parse()
            .map_err(|e: CliError| CliError::Config(format!("{}: {}", path.display(), e.to_string().trim_start_matches("config: "))))?;
        let base = path.parent().unwrap_or(Path::new(""));
        if config.out_dir.is_relative() {
            config.out_dir = base.join(&config.out_dir);
        }
        Ok(config)
    }

    pub fn physics_task(&self, id: &str) -> Result<PhysicsTask> {
        let section = self
            .tasks
            .get(id)
            .ok_or_else(|| CliError::Config(format!("task `{id}` is referenced but has no [tasks.{id}] section")))?;
        let generator = section.generator().map_err(|e| CliError::Config(format!("tasks.{id}: {e}")))?;
        PhysicsTask::new(id, generator).map_err(|e| CliError::Config(format!("tasks.{id}: {e}")))
    }

    /// Pretraining tasks followed by the fine-tune task.
    pub fn referenced_tasks(&self) -> Vec<&str> {
        let mut out: Vec<&str> = self.pretrain_tasks.iter().map(String::as_str).collect();
        out.extend(self.finetune_task.as_deref());
        out
    }

    pub fn finetune_task(&self) -> Result<&str> {
        self.finetune_task
            .as_deref()
            .ok_or_else(|| CliError::Config("finetune_task: not set in this config".into()))
    }

    pub fn validate(&self) -> Result<()> {
        let err = |field: &str, msg: String| Err(CliError::Config(format!("{field}: {msg}")));
        if self.name.trim().is_empty() {
            return err("name", "must not be empty".into());
        }
        if self.architectures.is_empty() {
            return err("architectures", "list at least one architecture".into());
        }
        if self.pretrain_tasks.is_empty() {
            return err("pretrain_tasks", "list at least one task".into());
        }
        if let Some(ft) = self.finetune_task.as_ref().filter(|t| self.pretrain_tasks.contains(t)) {
            return err("finetune_task", format!("`{ft}` is also a pretraining task"));
        }
        let mut seen = std::collections::BTreeSet::new();
        for t in &self.pretrain_tasks {
            if !seen.insert(t) {
                return err("pretrain_tasks", format!("`{t}` listed twice"));
            }
        }
        if self.data.train_samples == 0 {
            return err("data.train_samples", "must be at least 1".into());
        }
        for (phase, c) in [("pretrain", &self.train.pretrain), ("finetune", &self.train.finetune), ("scratch", &self.train.scratch)] {
            if let Err(e) = c.validate() {
                return err(&format!("train.{phase}"), e.to_string());
            }
        }

        let all: Vec<PhysicsTask> = self.referenced_tasks().into_iter().map(|t| self.physics_task(t)).collect::<Result<_>>()?;
        let dims = all[0].dims();
        if let Some(t) = all.iter().find(|t| t.dims() != dims) {
            return err(
                "tasks",
                format!("`{}` is {}-D but `{}` is {}-D; one core serves one dimensionality", t.id, t.dims(), all[0].id, dims),
            );
        }
        if self.core.modes.len() != dims {
            return err("core.modes", format!("give one mode count per axis ({dims})"));
        }
        for arch in &self.architectures {
            let core = OperatorCore::new(self.core.core_config(*arch)).map_err(|e| CliError::Config(format!("core: {e}")))?;
            for t in &all {
                core.validate_grid(&t.generator.grid.points)
                    .map_err(|e| CliError::Config(format!("tasks.{}: {e}", t.id)))?;
            }
        }
        match self.finetune_task {
            Some(_) => {
                let (ft, pre) = all.split_last().expect("at least one task");
                self.check_scenario(pre, ft)
            }
            None => Ok(()),
        }
    }

    fn check_scenario(&self, pre: &[PhysicsTask], ft: &PhysicsTask) -> Result<()> {
        let fail = |msg: String| Err(CliError::Config(format!("scenario {}: {msg}", self.scenario)));
        match self.scenario {
            Scenario::OosParams => {
                for p in pre {
                    if p.generator.kind != ft.generator.kind {
                        return fail(format!("`{}` is {} but `{}` is {}", p.id, p.generator.kind, ft.id, ft.generator.kind));
                    }
                    if !coefficients_disjoint(&p.generator, &ft.generator) {
                        return fail(format!("no coefficient range of `{}` is disjoint from `{}`", ft.id, p.id));
                    }
                }
            }
            Scenario::InputExtension => {
                if let Some(p) = pre.iter().find(|p| p.in_channels() >= ft.in_channels()) {
                    return fail(format!(
                        "`{}` needs more input functions ({}) than `{}` ({})",
                        ft.id,
                        ft.in_channels(),
                        p.id,
                        p.in_channels()
                    ));
                }
            }
            Scenario::Multiphysics => {
                if let Some(p) = pre.iter().find(|p| p.generator.kind == ft.generator.kind) {
                    return fail(format!("`{}` and `{}` are the same equation ({})", p.id, ft.id, ft.generator.kind));
                }
            }
        }
        Ok(())
    }
}

/// True if at least one coefficient the equation actually uses has
/// non-overlapping ranges in `a` and `b`.
fn coefficients_disjoint(a: &GeneratorConfig, b: &GeneratorConfig) -> bool {
    let disjoint = |x: [f64; 2], y: [f64; 2]| x[1] < y[0] || y[1] < x[0];
    let names = a.kind.input_names(a.grid.dims());
    let uses = |n: &str| names.iter().any(|c| c == n);
    (uses("nu") && disjoint(a.nu, b.nu))
        || (uses("c_x") && disjoint(a.velocity, b.velocity))
        || (uses("F") && disjoint(a.feed, b.feed))
        || (uses("k") && disjoint(a.kill, b.kill))
}
