use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use neurop::experiment::{self, Experiment, GenStatus};
use neurop::{CliError, Result, WallClock};
use neurop_core::transfer::{Architecture, Phase};

/// Neural-operator transfer experiments on periodic PDE data.
///
/// Exit codes: 0 success, 2 config error, 3 missing artifact, 4 data error,
/// 5 numerical divergence, 1 anything else.
#[derive(Parser, Debug)]
#[command(name = "neurop", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
struct Common {
    /// Experiment config (TOML). Relative paths inside it are resolved
    /// against its directory.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    /// Output directory, overriding the config.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default)]
struct ArchFilter {
    /// Restrict to one of the configured architectures (fno, mamba_fno,
    /// perceiver_no).
    #[arg(long, value_name = "TAG")]
    arch: Option<Architecture>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate train and validation datasets for every referenced task.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Train a fresh core and adapters on the pretraining tasks.
    Pretrain {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        filter: ArchFilter,
    },
    /// Train a new adapter for the fine-tune task on a frozen pretrained core.
    Finetune {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        filter: ArchFilter,
        /// Pretrained checkpoint; defaults to the experiment's best
        /// pretraining checkpoint.
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
    },
    /// Train the same architecture from scratch on the fine-tune task.
    Scratch {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        filter: ArchFilter,
    },
    /// Evaluate checkpoints and write metrics records.
    ///
    /// With --checkpoint and --dataset a single checkpoint is scored;
    /// with only --config every fine-tuned and scratch checkpoint of the
    /// experiment is scored on the fine-tune validation split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        filter: ArchFilter,
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
        /// Dataset file (.nopd).
        #[arg(long, value_name = "PATH")]
        dataset: Option<PathBuf>,
        /// Task id; defaults to the dataset's task.
        #[arg(long, value_name = "ID")]
        task: Option<String>,
        /// Score the dataset's own targets instead of a model.
        #[arg(long, conflicts_with = "checkpoint")]
        stored_targets: bool,
        /// Where to write the record; printed as JSON when omitted.
        #[arg(long, value_name = "PATH")]
        record: Option<PathBuf>,
    },
    /// Render metrics records as a text table and CSV.
    Report {
        #[command(flatten)]
        common: Common,
        /// Sort rows by NMAE, lowest first.
        #[arg(long)]
        sort: bool,
        /// Record files; defaults to the experiment's records.
        records: Vec<PathBuf>,
    },
    /// gen-data, pretrain, finetune, scratch, eval and report in one go.
    Run {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        filter: ArchFilter,
        #[arg(long)]
        sort: bool,
    },
}

fn experiment(common: &Common) -> Result<Experiment> {
    let path = common
        .config
        .as_deref()
        .ok_or_else(|| CliError::Config("--config is required for this command".into()))?;
    Experiment::load(path, common.seed, common.out.as_deref())
}

fn print_report(table: &neurop_core::transfer::ReportTable) {
    print!("{}", table.to_text());
}

fn execute(cli: Cli) -> Result<()> {
    let clock = WallClock::new();
    match cli.command {
        Command::GenData { common } => {
            for (path, status) in experiment(&common)?.gen_data()? {
                let what = match status {
                    GenStatus::Written => "written",
                    GenStatus::UpToDate => "up to date",
                };
                println!("{}: {what}", path.display());
            }
        }
        Command::Pretrain { common, filter } => {
            let exp = experiment(&common)?;
            for arch in exp.architectures(filter.arch)? {
                summary(&exp.pretrain(arch, &clock)?);
            }
        }
        Command::Finetune { common, filter, checkpoint } => {
            let exp = experiment(&common)?;
            let archs = exp.architectures(filter.arch)?;
            if checkpoint.is_some() && archs.len() > 1 {
                return Err(CliError::Config("--checkpoint needs --arch when several architectures are configured".into()));
            }
            for arch in archs {
                summary(&exp.finetune(arch, checkpoint.as_deref(), &clock)?);
            }
        }
        Command::Scratch { common, filter } => {
            let exp = experiment(&common)?;
            for arch in exp.architectures(filter.arch)? {
                summary(&exp.scratch(arch, &clock)?);
            }
        }
        Command::Eval { common, filter, checkpoint, dataset, task, stored_targets, record } => {
            if stored_targets || checkpoint.is_some() {
                let dataset = match (dataset, common.config.is_some()) {
                    (Some(d), _) => d,
                    (None, true) => {
                        let exp = experiment(&common)?;
                        exp.dataset_path(exp.config.finetune_task()?, experiment::Split::Val)
                    }
                    (None, false) => return Err(CliError::Config("--dataset is required".into())),
                };
                let rec = match checkpoint {
                    Some(ckpt) => experiment::eval_checkpoint(&ckpt, &dataset, task.as_deref())?,
                    None => experiment::eval_stored_targets(&dataset)?,
                };
                match record {
                    Some(path) => {
                        experiment::write_record(&path, &rec)?;
                        println!("{}", rec.row());
                    }
                    None => println!("{}", serde_json::to_string_pretty(&rec).expect("record serializes")),
                }
            } else {
                let exp = experiment(&common)?;
                let mut any = false;
                for arch in exp.architectures(filter.arch)? {
                    for phase in [Phase::Finetune, Phase::Scratch] {
                        if exp.checkpoint_path(arch, phase, true).exists() {
                            println!("{}", exp.evaluate(arch, phase)?.row());
                            any = true;
                        }
                    }
                }
                if !any {
                    return Err(CliError::Missing {
                        what: "fine-tuned or scratch checkpoints",
                        path: exp.out.clone(),
                    });
                }
            }
        }
        Command::Report { common, sort, records } => {
            if records.is_empty() {
                print_report(&experiment(&common)?.report(sort)?);
            } else {
                let rows = records.iter().map(|p| experiment::read_record(p)).collect::<Result<Vec<_>>>()?;
                let table = experiment::build_report(rows, sort);
                let out = match (&common.out, &common.config) {
                    (Some(o), _) => Some(o.clone()),
                    (None, Some(_)) => Some(experiment(&common)?.out),
                    (None, None) => None,
                };
                if let Some(dir) = out {
                    experiment::write_report(&dir, &table)?;
                }
                print_report(&table);
            }
        }
        Command::Run { common, filter, sort } => {
            print_report(&experiment(&common)?.run(filter.arch, sort, &clock)?);
        }
    }
    Ok(())
}

fn summary(s: &experiment::PhaseSummary) {
    let r = &s.record;
    println!(
        "{} {}: best val NMAE {:.4}% (epoch {}/{}), {:.2} s/epoch, {} trainable params -> {}",
        s.architecture,
        r.phase,
        r.best_val_nmae_percent,
        r.best_epoch,
        r.epochs,
        r.avg_epoch_seconds,
        r.trainable_params,
        display(&s.best_checkpoint)
    );
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
