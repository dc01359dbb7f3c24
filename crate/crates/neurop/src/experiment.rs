//! The experiment pipeline behind the command line: data generation,
//! pretraining, fine-tuning, scratch baselines, evaluation and reports.
//!
//! Everything lives under the output directory:
//!
//! ```text
//! data/<task>.{train,val}.nopd      datasets (+ .manifest.json)
//! <arch>/<phase>.nock               final checkpoint of a phase
//! <arch>/<phase>.best.nock          best-validation checkpoint
//! <arch>/<phase>.metrics.csv        per-epoch log
//! records/<arch>-<phase>.json       evaluation records
//! report.txt, report.csv
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::{debug, info};
use neurop_core::pde::{make_dataset, ChannelStats, Dataset};
use neurop_core::rng::derive;
use neurop_core::train::{train, Clock, TaskData, TrainConfig, TrainOutcome};
use neurop_core::transfer::{
    evaluate, Architecture, MetricRecord, NeuralOperatorModel, Phase, PhysicsTask, ReportTable, StoredTargets,
    TaskNormalization, TrainPhase,
};
use sha2::{Digest, Sha256};

use crate::checkpoint::{Checkpoint, PhaseRecord};
use crate::config::ExperimentConfig;
use crate::dataset_file::{self, DatasetHeader};
use crate::error::{CliError, Result};

const EVAL_BATCH: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn id(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GenStatus {
    Written,
    UpToDate,
}

/// What a training command produced.
#[derive(Debug, Clone)]
pub struct PhaseSummary {
    pub architecture: Architecture,
    pub record: PhaseRecord,
    pub checkpoint: PathBuf,
    pub best_checkpoint: PathBuf,
    pub log: PathBuf,
}

#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub out: PathBuf,
    pub seed: u64,
}

impl Experiment {
    /// `seed` and `out` override the config file.
    pub fn load(config: &Path, seed: Option<u64>, out: Option<&Path>) -> Result<Self> {
        let config = ExperimentConfig::load(config)?;
        Ok(Self::new(config, seed, out.map(Path::to_path_buf)))
    }

    pub fn new(config: ExperimentConfig, seed: Option<u64>, out: Option<PathBuf>) -> Self {
        Self {
            seed: seed.unwrap_or(config.seed),
            out: out.unwrap_or_else(|| config.out_dir.clone()),
            config,
        }
    }

    pub fn dataset_path(&self, task: &str, split: Split) -> PathBuf {
        self.out.join("data").join(format!("{task}.{}.nopd", split.id()))
    }

    pub fn checkpoint_path(&self, arch: Architecture, phase: Phase, best: bool) -> PathBuf {
        let suffix = if best { ".best" } else { "" };
        self.out.join(arch.tag()).join(format!("{}{suffix}.nock", phase.id()))
    }

    pub fn log_path(&self, arch: Architecture, phase: Phase) -> PathBuf {
        self.out.join(arch.tag()).join(format!("{}.metrics.csv", phase.id()))
    }

    pub fn record_path(&self, arch: Architecture, phase: Phase) -> PathBuf {
        self.out.join("records").join(format!("{}-{}.json", arch.tag(), phase.id()))
    }

    /// The configured architectures, or just `only` if it is one of them.
    pub fn architectures(&self, only: Option<Architecture>) -> Result<Vec<Architecture>> {
        match only {
            None => Ok(self.config.architectures.clone()),
            Some(a) if self.config.architectures.contains(&a) => Ok(vec![a]),
            Some(a) => Err(CliError::Config(format!(
                "architecture `{a}` is not listed in the config ({})",
                tags(&self.config.architectures)
            ))),
        }
    }

    fn data_seed(&self, task: &str, split: Split) -> u64 {
        let digest = Sha256::digest(task.as_bytes());
        let key = u64::from_le_bytes(digest[..8].try_into().unwrap());
        derive(derive(self.seed, key), split as u64)
    }

    fn phase_seed(&self, phase: Phase, what: u64) -> u64 {
        derive(derive(self.seed, 1000 + phase as u64), what)
    }

    fn samples(&self, split: Split) -> usize {
        match split {
            Split::Train => self.config.data.train_samples,
            Split::Val => self.config.data.val_samples,
        }
    }

    /// Generates every train and validation split that is missing or was
    /// produced from different settings. Splits are generated in parallel.
    pub fn gen_data(&self) -> Result<Vec<(PathBuf, GenStatus)>> {
        let mut jobs = Vec::new();
        for id in self.config.referenced_tasks() {
            let task = self.config.physics_task(id)?;
            for split in [Split::Train, Split::Val] {
                jobs.push((task.clone(), split));
            }
        }
        let results: Vec<Result<(PathBuf, GenStatus)>> = std::thread::scope(|s| {
            let handles: Vec<_> = jobs.iter().map(|(task, split)| s.spawn(move || self.gen_split(task, *split))).collect();
            handles.into_iter().map(|h| h.join().expect("generation thread panicked")).collect()
        });
        results.into_iter().collect()
    }

    fn gen_split(&self, task: &PhysicsTask, split: Split) -> Result<(PathBuf, GenStatus)> {
        let path = self.dataset_path(&task.id, split);
        let n = self.samples(split);
        let seed = self.data_seed(&task.id, split);
        let fp = dataset_file::fingerprint(&task.id, &task.generator, n, seed);
        if dataset_file::is_up_to_date(&path, &fp) {
            debug!("{}: up to date", path.display());
            return Ok((path, GenStatus::UpToDate));
        }
        let data = make_dataset(&task.id, &task.generator, n, seed)?;
        let mut header = DatasetHeader::new(&data, &task.generator, seed);
        if split == Split::Train && !data.is_empty() {
            header.normalization = Some(TaskNormalization {
                input: ChannelStats::fit(&data.inputs)?,
                output: ChannelStats::fit(&data.targets)?,
            });
        }
        dataset_file::write(&path, &header, &data, fp)?;
        info!("{}: wrote {} samples", path.display(), n);
        Ok((path, GenStatus::Written))
    }

    /// Loads a split, refusing files generated from other settings.
    pub fn load_split(&self, task: &str, split: Split) -> Result<Dataset> {
        let path = self.dataset_path(task, split);
        let t = self.config.physics_task(task)?;
        let fp = dataset_file::fingerprint(task, &t.generator, self.samples(split), self.data_seed(task, split));
        if path.exists() {
            match dataset_file::read_manifest(&path) {
                Some(m) if m.fingerprint == fp => {}
                _ => {
                    return Err(CliError::Data(format!(
                        "{} does not match the current config; rerun gen-data",
                        path.display()
                    )))
                }
            }
        }
        Ok(dataset_file::read(&path)?.1)
    }

    fn load_task_data(&self, tasks: &[&str]) -> Result<BTreeMap<String, (Dataset, Dataset)>> {
        tasks
            .iter()
            .map(|&t| Ok((t.to_string(), (self.load_split(t, Split::Train)?, self.load_split(t, Split::Val)?))))
            .collect()
    }

    fn train_config(&self, phase: Phase) -> TrainConfig {
        let mut c = match phase {
            Phase::Pretrain => self.config.train.pretrain.clone(),
            Phase::Finetune => self.config.train.finetune.clone(),
            Phase::Scratch => self.config.train.scratch.clone(),
        };
        c.seed = self.phase_seed(phase, 0);
        c
    }

    fn seeds(&self, extra: &[(&str, u64)]) -> BTreeMap<String, u64> {
        let mut m = BTreeMap::from([("master".to_string(), self.seed)]);
        m.extend(extra.iter().map(|(k, v)| (k.to_string(), *v)));
        m
    }

    fn run_phase(
        &self,
        mut model: NeuralOperatorModel,
        phase: TrainPhase,
        mut history: Vec<PhaseRecord>,
        mut seeds: BTreeMap<String, u64>,
        clock: &dyn Clock,
    ) -> Result<PhaseSummary> {
        let arch = model.core.architecture();
        let tasks: Vec<&str> = phase.tasks.iter().map(String::as_str).collect();
        let data = self.load_task_data(&tasks)?;
        let views: BTreeMap<String, TaskData<'_>> =
            data.iter().map(|(k, (tr, va))| (k.clone(), TaskData { train: tr, val: va })).collect();
        let config = self.train_config(phase.phase);
        info!("{arch} {}: {} epochs on {}", phase.phase, config.epochs, tasks.join(", "));
        let outcome: TrainOutcome = train(&mut model, &phase, &views, &config, clock)?;

        let log_path = self.log_path(arch, phase.phase);
        write_text(&log_path, &outcome.log.to_csv())?;
        let best = outcome.log.best().expect("at least one epoch");
        let record = PhaseRecord {
            phase: phase.phase,
            tasks: phase.tasks.clone(),
            epochs: config.epochs,
            best_epoch: outcome.best_epoch,
            best_val_nmae_percent: best.val_nmae_percent,
            avg_epoch_seconds: outcome.log.avg_epoch_seconds(),
            trainable_params: best.trainable_params,
            seed: config.seed,
        };
        info!(
            "{arch} {}: best val NMAE {:.4}% at epoch {}, {:.2} s/epoch",
            phase.phase, record.best_val_nmae_percent, record.best_epoch, record.avg_epoch_seconds
        );
        history.push(record.clone());
        seeds.insert(format!("{}_train", phase.phase), config.seed);

        let checkpoint = self.checkpoint_path(arch, phase.phase, false);
        Checkpoint::from_model(&model, history.clone(), seeds.clone()).save(&checkpoint)?;
        outcome.restore_best(&mut model);
        let best_checkpoint = self.checkpoint_path(arch, phase.phase, true);
        Checkpoint::from_model(&model, history, seeds).save(&best_checkpoint)?;
        Ok(PhaseSummary {
            architecture: arch,
            record,
            checkpoint,
            best_checkpoint,
            log: log_path,
        })
    }

    /// Trains a fresh core and one adapter per pretraining task.
    pub fn pretrain(&self, arch: Architecture, clock: &dyn Clock) -> Result<PhaseSummary> {
        let init = self.phase_seed(Phase::Pretrain, 1);
        let mut model = NeuralOperatorModel::new(self.config.core.core_config(arch), init)?;
        for (i, id) in self.config.pretrain_tasks.iter().enumerate() {
            model.attach_adapter(self.config.physics_task(id)?, derive(init, 1 + i as u64), false)?;
        }
        let tasks: Vec<&str> = self.config.pretrain_tasks.iter().map(String::as_str).collect();
        let seeds = self.seeds(&[("pretrain_init", init)]);
        self.run_phase(model, TrainPhase::pretrain(&tasks), Vec::new(), seeds, clock)
    }

    /// Loads a pretrained checkpoint (by default this experiment's best
    /// pretraining checkpoint), attaches a fresh adapter for the fine-tune
    /// task and trains only that adapter.
    pub fn finetune(&self, arch: Architecture, checkpoint: Option<&Path>, clock: &dyn Clock) -> Result<PhaseSummary> {
        let path = checkpoint
            .map(Path::to_path_buf)
            .unwrap_or_else(|| self.checkpoint_path(arch, Phase::Pretrain, true));
        let ckpt = Checkpoint::load(&path)?;
        if ckpt.meta.architecture != arch {
            return Err(CliError::Config(format!(
                "{} holds a `{}` core but `{}` was requested",
                path.display(),
                ckpt.meta.architecture,
                arch
            )));
        }
        let mut model = ckpt.to_model()?;
        let seed = self.adapter_seed();
        let task = self.config.finetune_task()?;
        model.attach_adapter(self.config.physics_task(task)?, seed, true)?;
        let mut seeds = ckpt.meta.seeds.clone();
        seeds.insert("finetune_adapter".into(), seed);
        let phase = TrainPhase::finetune(task);
        self.run_phase(model, phase, ckpt.meta.history, seeds, clock)
    }

    /// Trains the same architecture from scratch on the fine-tune task.
    pub fn scratch(&self, arch: Architecture, clock: &dyn Clock) -> Result<PhaseSummary> {
        let init = self.phase_seed(Phase::Scratch, 1);
        let mut model = NeuralOperatorModel::new(self.config.core.core_config(arch), init)?;
        let seed = self.adapter_seed();
        let task = self.config.finetune_task()?;
        model.attach_adapter(self.config.physics_task(task)?, seed, false)?;
        let seeds = self.seeds(&[("scratch_init", init), ("scratch_adapter", seed)]);
        self.run_phase(model, TrainPhase::scratch(task), Vec::new(), seeds, clock)
    }

    /// Fine-tuned and scratch adapters start from the same draw.
    fn adapter_seed(&self) -> u64 {
        self.phase_seed(Phase::Finetune, 1)
    }

    /// Evaluates the best checkpoint of `phase` on the fine-tune task's
    /// validation split and stores the record.
    pub fn evaluate(&self, arch: Architecture, phase: Phase) -> Result<MetricRecord> {
        let ckpt = self.checkpoint_path(arch, phase, true);
        let task = self.config.finetune_task()?;
        let data = self.dataset_path(task, Split::Val);
        self.load_split(task, Split::Val)?;
        let record = eval_checkpoint(&ckpt, &data, Some(task))?;
        write_record(&self.record_path(arch, phase), &record)?;
        Ok(record)
    }

    /// Table of every stored record for the configured architectures,
    /// fine-tuned rows first. Writes `report.txt` and `report.csv`.
    pub fn report(&self, sort: bool) -> Result<ReportTable> {
        let mut paths = Vec::new();
        for &arch in &self.config.architectures {
            for phase in [Phase::Finetune, Phase::Scratch] {
                let p = self.record_path(arch, phase);
                if p.exists() {
                    paths.push(p);
                }
            }
        }
        if paths.is_empty() {
            return Err(CliError::Missing { what: "evaluation records", path: self.out.join("records") });
        }
        let records = paths.iter().map(|p| read_record(p)).collect::<Result<Vec<_>>>()?;
        let table = build_report(records, sort);
        write_report(&self.out, &table)?;
        Ok(table)
    }

    /// The whole pipeline for every configured architecture (or `only`).
    pub fn run(&self, only: Option<Architecture>, sort: bool, clock: &dyn Clock) -> Result<ReportTable> {
        self.gen_data()?;
        for arch in self.architectures(only)? {
            self.pretrain(arch, clock)?;
            self.finetune(arch, None, clock)?;
            self.scratch(arch, clock)?;
            self.evaluate(arch, Phase::Finetune)?;
            self.evaluate(arch, Phase::Scratch)?;
        }
        self.report(sort)
    }
}

fn tags(archs: &[Architecture]) -> String {
    archs.iter().map(|a| a.tag()).collect::<Vec<_>>().join(", ")
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    }
    fs::write(path, text).map_err(CliError::io(path))
}

/// Evaluates a checkpoint on a dataset file. `task` defaults to the
/// dataset's task and must be one the checkpoint has an adapter for.
pub fn eval_checkpoint(checkpoint: &Path, dataset: &Path, task: Option<&str>) -> Result<MetricRecord> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let (_, data) = dataset_file::read(dataset)?;
    let task = task.unwrap_or(&data.task);
    if task != data.task {
        return Err(CliError::Config(format!("{} holds task `{}`, not `{task}`", dataset.display(), data.task)));
    }
    let model = ckpt.to_model()?;
    let known = model.task(task).map_err(|_| {
        let have: Vec<&str> = ckpt.meta.tasks.iter().map(|t| t.id.as_str()).collect();
        CliError::Config(format!("checkpoint has no adapter for task `{task}` (has {})", have.join(", ")))
    })?;
    if known.generator.kind != data.kind {
        return Err(CliError::Config(format!(
            "task `{task}` is {} in the checkpoint but {} in the dataset",
            known.generator.kind, data.kind
        )));
    }
    let m = evaluate(&(&model, task), &data, EVAL_BATCH)?;
    let last = ckpt.last_phase();
    Ok(MetricRecord {
        label: ckpt.label(),
        task: task.to_string(),
        mse: m.mse,
        nmae_percent: m.nmae_percent(),
        epoch_seconds: last.map_or(0.0, |p| p.avg_epoch_seconds),
        params: last.map_or(model.total_param_count(), |p| p.trainable_params),
    })
}

/// Scores a dataset against its own stored targets.
pub fn eval_stored_targets(dataset: &Path) -> Result<MetricRecord> {
    let (_, data) = dataset_file::read(dataset)?;
    let m = evaluate(&StoredTargets::new(&data), &data, EVAL_BATCH)?;
    Ok(MetricRecord {
        label: "stored targets".into(),
        task: data.task.clone(),
        mse: m.mse,
        nmae_percent: m.nmae_percent(),
        epoch_seconds: 0.0,
        params: 0,
    })
}

pub fn write_record(path: &Path, record: &MetricRecord) -> Result<()> {
    let text = serde_json::to_string_pretty(record).map_err(|e| CliError::Data(e.to_string()))?;
    write_text(path, &(text + "\n"))
}

pub fn read_record(path: &Path) -> Result<MetricRecord> {
    if !path.exists() {
        return Err(CliError::Missing { what: "metrics record", path: path.to_path_buf() });
    }
    let text = fs::read_to_string(path).map_err(CliError::io(path))?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn build_report(records: Vec<MetricRecord>, sort: bool) -> ReportTable {
    let mut table = ReportTable::new(records);
    if sort {
        table.sort_by_nmae();
    }
    table
}

pub fn write_report(dir: &Path, table: &ReportTable) -> Result<()> {
    write_text(&dir.join("report.txt"), &table.to_text())?;
    write_text(&dir.join("report.csv"), &table.to_csv())
}
