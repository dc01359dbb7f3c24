use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use neurop::experiment::{read_record, Experiment};
use neurop_core::transfer::{MetricRecord, Phase};

const TINY: &str = r#"
name = "tiny"
scenario = "oos_params"
architectures = ["fno"]
out_dir = "out"
pretrain_tasks = ["lo"]
finetune_task = "hi"

[core]
width = 8
layers = 2
modes = [8]

[data]
train_samples = 12
val_samples = 6

[tasks.lo]
kind = "burgers"
points = [64]
steps = 100
dt = 0.005
nu = [0.02, 0.03]

[tasks.hi]
kind = "burgers"
points = [64]
steps = 100
dt = 0.005
nu = [0.04, 0.05]

[train.pretrain]
epochs = 2
batch_size = 4

[train.finetune]
epochs = 2
batch_size = 4

[train.scratch]
epochs = 2
batch_size = 4
"#;

fn neurop(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_neurop"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn setup(config: &str) -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("exp.toml");
    fs::write(&path, config).unwrap();
    (dir, path)
}

fn ok(o: &Output) {
    assert!(o.status.success(), "exit {:?}\nstdout:\n{}\nstderr:\n{}", o.status.code(), stdout(o), stderr(o));
}

#[test]
fn help_lists_every_command_and_flag() {
    let dir = tempfile::tempdir().unwrap();
    let top = stdout(&neurop(dir.path(), &["--help"]));
    for cmd in ["gen-data", "pretrain", "finetune", "scratch", "eval", "report"] {
        assert!(top.contains(cmd), "{cmd} missing from help");
        let sub = stdout(&neurop(dir.path(), &[cmd, "--help"]));
        for flag in ["--config", "--seed", "--out"] {
            assert!(sub.contains(flag), "{cmd} --help lacks {flag}");
        }
    }
}

#[test]
fn one_task_config_writes_dataset_and_manifest_then_is_up_to_date() {
    let config = r#"
name = "one"
scenario = "oos_params"
architectures = ["fno"]
pretrain_tasks = ["adv"]
[core]
modes = [8]
[data]
train_samples = 4
val_samples = 2
[tasks.adv]
kind = "advection"
"#;
    let (dir, path) = setup(config);
    let first = neurop(dir.path(), &["gen-data", "--config", path.to_str().unwrap()]);
    ok(&first);
    let data = dir.path().join("out/data/adv.train.nopd");
    assert!(data.exists());
    let manifest = dir.path().join("out/data/adv.train.nopd.manifest.json");
    let text = fs::read_to_string(&manifest).unwrap();
    for key in ["\"task\": \"adv\"", "\"samples\": 4", "\"master_seed\"", "\"sha256\"", "\"grid\""] {
        assert!(text.contains(key), "manifest lacks {key}");
    }
    let before = fs::metadata(&data).unwrap().modified().unwrap();
    let bytes = fs::read(&data).unwrap();

    let second = neurop(dir.path(), &["gen-data", "--config", path.to_str().unwrap()]);
    ok(&second);
    assert!(stdout(&second).contains("up to date"), "{}", stdout(&second));
    assert_eq!(fs::metadata(&data).unwrap().modified().unwrap(), before);

    // Deleting the file regenerates identical bytes.
    fs::remove_file(&data).unwrap();
    ok(&neurop(dir.path(), &["gen-data", "--config", path.to_str().unwrap()]));
    assert_eq!(fs::read(&data).unwrap(), bytes);

    // A different seed is a different dataset.
    ok(&neurop(dir.path(), &["gen-data", "--config", path.to_str().unwrap(), "--seed", "99"]));
    assert_ne!(fs::read(&data).unwrap(), bytes);
}

#[test]
fn malformed_field_exits_2_and_names_it() {
    let (dir, path) = setup(&TINY.replace("width = 8", "width = \"wide\""));
    let o = neurop(dir.path(), &["gen-data", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("width"), "{}", stderr(&o));

    let (dir, path) = setup(&TINY.replace("[train.scratch]", "[train.scratch]\nmomentum = 0.9"));
    let o = neurop(dir.path(), &["gen-data", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("momentum"), "{}", stderr(&o));
}

#[test]
fn scenario_checks_reject_incompatible_tasks() {
    // Overlapping viscosity ranges are not out-of-sample.
    let (dir, path) = setup(&TINY.replace("nu = [0.04, 0.05]", "nu = [0.025, 0.05]"));
    let o = neurop(dir.path(), &["gen-data", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("disjoint"), "{}", stderr(&o));

    let (dir, path) = setup(&TINY.replace("scenario = \"oos_params\"", "scenario = \"input_extension\""));
    let o = neurop(dir.path(), &["gen-data", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));

    let (dir, path) = setup(&TINY.replace("finetune_task = \"hi\"", "finetune_task = \"missing\""));
    let o = neurop(dir.path(), &["gen-data", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("missing"), "{}", stderr(&o));
}

#[test]
fn missing_config_file_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = neurop(dir.path(), &["gen-data", "--config", "nope.toml"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn finetune_without_checkpoint_exits_3() {
    let (dir, path) = setup(TINY);
    let c = path.to_str().unwrap();
    ok(&neurop(dir.path(), &["gen-data", "--config", c]));
    let o = neurop(dir.path(), &["finetune", "--config", c]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let o = neurop(dir.path(), &["finetune", "--config", c, "--checkpoint", "elsewhere.nock"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn pretrain_without_data_exits_3() {
    let (dir, path) = setup(TINY);
    let o = neurop(dir.path(), &["pretrain", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn unstable_generator_exits_5() {
    let (dir, path) = setup(&TINY.replace("dt = 0.005\nnu = [0.02, 0.03]", "dt = 0.5\nnu = [0.02, 0.03]"));
    let o = neurop(dir.path(), &["gen-data", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(5), "{}", stderr(&o));
}

#[test]
fn stored_targets_score_zero_and_empty_split_exits_4() {
    let (dir, path) = setup(TINY);
    ok(&neurop(dir.path(), &["gen-data", "--config", path.to_str().unwrap()]));
    let o = neurop(dir.path(), &["eval", "--stored-targets", "--dataset", "out/data/hi.val.nopd"]);
    ok(&o);
    let rec: MetricRecord = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(rec.mse, 0.0);
    assert_eq!(rec.nmae_percent, 0.0);

    let (dir, path) = setup(&TINY.replace("val_samples = 6", "val_samples = 0"));
    ok(&neurop(dir.path(), &["gen-data", "--config", path.to_str().unwrap()]));
    let o = neurop(dir.path(), &["eval", "--stored-targets", "--dataset", "out/data/hi.val.nopd"]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn corrupt_dataset_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.nopd"), b"NOPE....").unwrap();
    let o = neurop(dir.path(), &["eval", "--stored-targets", "--dataset", "bad.nopd"]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn full_pipeline_eval_and_report() {
    let (dir, path) = setup(TINY);
    let c = path.to_str().unwrap();
    for cmd in ["gen-data", "pretrain", "finetune", "scratch"] {
        ok(&neurop(dir.path(), &[cmd, "--config", c]));
    }
    let out = dir.path().join("out");
    for f in ["fno/pretrain.nock", "fno/pretrain.best.nock", "fno/finetune.best.nock", "fno/scratch.metrics.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }

    // Fine-tune trains only the adapter, scratch trains everything.
    let trainable = |phase: &str| -> usize {
        let csv = fs::read_to_string(out.join(format!("fno/{phase}.metrics.csv"))).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "epoch,train_loss,val_mse,val_nmae_percent,seconds,trainable_params");
        lines.last().unwrap().rsplit(',').next().unwrap().parse().unwrap()
    };
    assert!(trainable("finetune") < trainable("scratch"));

    ok(&neurop(dir.path(), &["eval", "--config", c]));
    let first = fs::read(out.join("records/fno-finetune.json")).unwrap();
    ok(&neurop(dir.path(), &["eval", "--config", c]));
    assert_eq!(fs::read(out.join("records/fno-finetune.json")).unwrap(), first);

    let rec = read_record(&out.join("records/fno-finetune.json")).unwrap();
    assert_eq!(rec.label, "FNO (pretr.)");
    assert_eq!(rec.params, trainable("finetune"));

    // Single checkpoint, explicit dataset and record path.
    let o = neurop(
        dir.path(),
        &["eval", "--checkpoint", "out/fno/scratch.best.nock", "--dataset", "out/data/hi.val.nopd", "--record", "one.json"],
    );
    ok(&o);
    assert!(stdout(&o).starts_with("FNO (scratch) | "), "{}", stdout(&o));

    // A task the checkpoint has no adapter for.
    let o = neurop(
        dir.path(),
        &["eval", "--checkpoint", "out/fno/pretrain.best.nock", "--dataset", "out/data/hi.val.nopd"],
    );
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("hi"));
    // Dataset and task disagree.
    let o = neurop(
        dir.path(),
        &["eval", "--checkpoint", "out/fno/finetune.best.nock", "--dataset", "out/data/hi.val.nopd", "--task", "lo"],
    );
    assert_eq!(o.status.code(), Some(2));

    let o = neurop(dir.path(), &["report", "--config", c, "--sort"]);
    ok(&o);
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 4, "{text}");
    assert!(lines[0].starts_with("Model"));
    let nmae = |l: &str| l.split('|').nth(2).unwrap().trim().parse::<f64>().unwrap();
    assert!(nmae(lines[2]) <= nmae(lines[3]));
    assert!(out.join("report.csv").exists());
    assert_eq!(fs::read_to_string(out.join("report.txt")).unwrap(), text);
}

#[test]
fn checkpoint_architecture_mismatch_names_both() {
    let (dir, path) = setup(&TINY.replace("architectures = [\"fno\"]", "architectures = [\"fno\", \"mamba_fno\"]"));
    let c = path.to_str().unwrap();
    ok(&neurop(dir.path(), &["gen-data", "--config", c]));
    ok(&neurop(dir.path(), &["pretrain", "--config", c, "--arch", "fno"]));
    let o = neurop(
        dir.path(),
        &["finetune", "--config", c, "--arch", "mamba_fno", "--checkpoint", "out/fno/pretrain.best.nock"],
    );
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("fno") && err.contains("mamba_fno"), "{err}");
}

#[test]
fn report_from_record_files() {
    let dir = tempfile::tempdir().unwrap();
    let rec = MetricRecord {
        label: "FNO (scratch)".into(),
        task: "burgers".into(),
        mse: 1.774e-7,
        nmae_percent: 0.0204,
        epoch_seconds: 7.44,
        params: 1_000_000,
    };
    neurop::experiment::write_record(&dir.path().join("a.json"), &rec).unwrap();
    let o = neurop(dir.path(), &["report", "a.json", "--out", "rep"]);
    ok(&o);
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 3);
    assert!(text.lines().nth(2).unwrap().starts_with("FNO (scratch) | 1.774e-7 | 0.0204 | "), "{text}");
    let csv = fs::read_to_string(dir.path().join("rep/report.csv")).unwrap();
    assert_eq!(csv.lines().nth(1).unwrap(), "FNO (scratch),burgers,1.774e-7,0.0204,7.44,1000000");

    let o = neurop(dir.path(), &["report"]);
    assert_eq!(o.status.code(), Some(2));
    let o = neurop(dir.path(), &["report", "missing.json"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn seed_and_out_overrides() {
    let (dir, path) = setup(TINY);
    let exp = Experiment::load(&path, Some(5), Some(Path::new("/tmp/elsewhere"))).unwrap();
    assert_eq!(exp.seed, 5);
    assert_eq!(exp.out, PathBuf::from("/tmp/elsewhere"));
    let exp = Experiment::load(&path, None, None).unwrap();
    assert_eq!(exp.out, dir.path().join("out"));
    assert_eq!(exp.checkpoint_path(neurop_core::transfer::Architecture::Fno, Phase::Finetune, true), dir.path().join("out/fno/finetune.best.nock"));
}
