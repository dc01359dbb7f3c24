//! End-to-end acceptance checks. Each test prints one
//! `criterion N: PASS|FAIL ...` line and then asserts.
//!
//! Tests share one lock so the wall-clock comparisons are not skewed by
//! each other on small machines.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;
use std::sync::Mutex;
use std::time::Instant;

use neurop::config::ExperimentConfig;
use neurop::experiment::{read_record, Experiment};
use neurop::WallClock;
use neurop_core::autodiff::{grad_check, projection_loss, ScanAxis, Tape, Var};
use neurop_core::blocks::{
    apply_to_field, attention, Activation, GridField, KvMap, LiftingMap, ParamStore, PerceiverBlock,
    PerceiverConfig, ProjectionMap, Session, SpectralConvLayer, SsmBlock, Trainable,
};
use neurop_core::fft::{irfft, rfft};
use neurop_core::pde::*;
use neurop_core::rng::{normal, seeded};
use neurop_core::train::{train, NoClock, TaskData, TrainConfig};
use neurop_core::transfer::*;
use neurop_core::Tensor;

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn verdict(n: usize, pass: bool, detail: &str) {
    println!("criterion {n}: {} {detail}", if pass { "PASS" } else { "FAIL" });
}

fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = seeded(seed);
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| normal(&mut rng)).collect()).unwrap()
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

// ---------------------------------------------------------------- 1

const GRAD_TOL: f64 = 1e-4;
const INSTANCES: u64 = 3;

type Forward<'a> = &'a dyn Fn(&mut Session, Var) -> neurop_core::Result<Var>;

/// Worst relative error over the input and every named parameter.
fn block_error(store: &ParamStore, x: &Tensor, params: &[&str], forward: Forward) -> f64 {
    let step = 1e-5;
    let mut worst = grad_check(
        |tape: &mut Tape, v| {
            let mut s = Session::new(tape, store, Trainable::Nothing);
            let y = forward(&mut s, v)?;
            projection_loss(s.tape, y, 99)
        },
        x,
        step,
        GRAD_TOL,
    )
    .unwrap()
    .max_rel_error;
    for &name in params {
        let r = grad_check(
            |tape: &mut Tape, p| {
                let input = tape.constant(x.clone());
                let mut s = Session::new(tape, store, Trainable::Nothing);
                s.bind(name, p);
                let y = forward(&mut s, input)?;
                projection_loss(s.tape, y, 7)
            },
            store.get(name).unwrap(),
            step,
            GRAD_TOL,
        )
        .unwrap();
        worst = worst.max(r.max_rel_error);
    }
    worst
}

fn init(seed: u64, f: impl Fn(&mut ParamStore, &mut neurop_core::rng::SeededRng)) -> ParamStore {
    let mut store = ParamStore::new();
    f(&mut store, &mut seeded(seed));
    store
}

fn grad_errors(seed: u64) -> Vec<(&'static str, f64)> {
    let mut out = Vec::new();

    let lift = LiftingMap::new("lift", "t", 3, 8);
    let store = init(seed, |s, r| lift.init(s, r));
    let x = random(&[1, 3, 8, 8], seed + 10);
    out.push(("lift", block_error(&store, &x, &["lift/w1", "lift/b1", "lift/w2", "lift/b2"], &|s, v| lift.forward(s, v))));

    let layer = SpectralConvLayer::new("fno", 3, 3, &[3, 3], Activation::Gelu).unwrap();
    let store = init(seed, |s, r| layer.init(s, r));
    let x = random(&[1, 3, 8, 8], seed + 20);
    let weights = ["fno/spectral/w_re", "fno/spectral/w_im"];
    out.push(("spectral conv", block_error(&store, &x, &weights, &|s, v| layer.spectral_conv(s, v))));
    let all = ["fno/spectral/w_re", "fno/spectral/w_im", "fno/pointwise/w", "fno/pointwise/b"];
    out.push(("fno block", block_error(&store, &x, &all, &|s, v| layer.forward(s, v))));

    let ssm = SsmBlock::new("ssm", 3, 5, ScanAxis::Flattened).unwrap();
    let store = init(seed, |s, r| ssm.init(s, r));
    let x = random(&[2, 3, 6, 6], seed + 30);
    out.push(("ssm", block_error(&store, &x, &["ssm/kernel"], &|s, v| ssm.forward(s, v))));

    // attention: differentiate through q, k and v in turn
    let (q, k, v) = (random(&[5, 4], seed + 40), random(&[7, 4], seed + 41), random(&[7, 3], seed + 42));
    let mut worst: f64 = 0.0;
    for which in 0..3 {
        let leaf = [&q, &k, &v][which];
        let r = grad_check(
            |tape: &mut Tape, x| {
                let mut args = [tape.constant(q.clone()), tape.constant(k.clone()), tape.constant(v.clone())];
                args[which] = x;
                let y = attention(tape, args[0], args[1], args[2])?;
                projection_loss(tape, y, 3)
            },
            leaf,
            1e-5,
            GRAD_TOL,
        )
        .unwrap();
        worst = worst.max(r.max_rel_error);
    }
    out.push(("attention", worst));

    let config = PerceiverConfig {
        width: 4,
        latents: 6,
        self_layers: 1,
        heads: 2,
        kv_map: KvMap::Spectral { modes: vec![3, 3] },
    };
    let perceiver = PerceiverBlock::new("perc", config).unwrap();
    let store = init(seed, |s, r| perceiver.init(s, r));
    let x = random(&[1, 4, 8, 8], seed + 50);
    let names = ["perc/latents", "perc/to_k/spectral/w_re", "perc/self0/wo", "perc/out/wq"];
    out.push(("perceiver", block_error(&store, &x, &names, &|s, v| perceiver.forward(s, v))));

    let proj = ProjectionMap::new("proj", "t", 6, 2);
    let store = init(seed, |s, r| proj.init(s, r));
    let x = random(&[2, 6, 8, 8], seed + 60);
    out.push(("projection", block_error(&store, &x, &["proj/w1", "proj/b1", "proj/w2", "proj/b2"], &|s, v| proj.forward(s, v))));

    let target = random(&[2, 1, 8, 8], seed + 70);
    let pred = random(&[2, 1, 8, 8], seed + 71);
    let r = grad_check(
        |tape: &mut Tape, p| {
            let t = tape.constant(target.clone());
            tape.mse(p, t)
        },
        &pred,
        1e-5,
        GRAD_TOL,
    )
    .unwrap();
    out.push(("mse", r.max_rel_error));
    out
}

#[test]
fn criterion_1_gradient_soundness() {
    let _guard = serial();
    let start = Instant::now();
    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();
    for seed in 0..INSTANCES {
        for (block, err) in grad_errors(100 * seed + 1) {
            let w = worst.entry(block).or_insert(0.0);
            *w = w.max(err);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst.values().all(|&e| e < GRAD_TOL) && worst.len() == 8 && secs < 60.0;
    let detail: Vec<String> = worst.iter().map(|(b, e)| format!("{b} {e:.1e}")).collect();
    verdict(1, pass, &format!("({}; {secs:.1} s)", detail.join(", ")));
    assert!(pass);
}

// ---------------------------------------------------------------- 2

#[test]
fn criterion_2_spectral_correctness() {
    let _guard = serial();
    let mut round_trip: f64 = 0.0;
    for (shape, seed) in [(vec![2, 16], 1), (vec![1, 12, 10], 2), (vec![3, 8, 9], 3)] {
        let x = random(&shape, seed);
        let spatial = &shape[1..];
        let back = irfft(&rfft(&x, spatial.len()).unwrap(), spatial).unwrap();
        round_trip = round_trip.max(max_diff(back.data(), x.data()));
    }

    // a cosine at wavenumber k, kept when k < modes and removed otherwise
    let cosine = |n: usize, k: usize| {
        let data = (0..n).map(|i| (2.0 * PI * (k * i) as f64 / n as f64 + 0.3).cos()).collect();
        GridField::unit(Tensor::new(&[1, n], data).unwrap()).unwrap()
    };
    let layer = SpectralConvLayer::new("fno", 1, 1, &[4], Activation::Identity).unwrap();
    let mut store = init(1, |s, r| layer.init(s, r));
    let mut w = Tensor::zeros(&[1, 1, 4]);
    w.data_mut()[3] = 1.0;
    *store.get_mut("fno/spectral/w_re").unwrap() = w;
    *store.get_mut("fno/spectral/w_im").unwrap() = Tensor::zeros(&[1, 1, 4]);
    let kept = cosine(16, 3);
    let out = apply_to_field(&store, &kept, |s, x| layer.spectral_conv(s, x)).unwrap();
    let pass_err = max_diff(out.values().data(), kept.values().data());
    let out = apply_to_field(&store, &cosine(16, 5), |s, x| layer.spectral_conv(s, x)).unwrap();
    let block_err = out.values().max_abs();

    let layer = SpectralConvLayer::new("fno", 3, 3, &[4, 3], Activation::Gelu).unwrap();
    let store = init(2, |s, r| layer.init(s, r));
    let f = GridField::unit(random(&[3, 16, 12], 4)).unwrap();
    let shift = [3, -5];
    let a = apply_to_field(&store, &f.roll(&shift), |s, x| layer.forward(s, x)).unwrap();
    let b = apply_to_field(&store, &f, |s, x| layer.forward(s, x)).unwrap().roll(&shift);
    let translation = max_diff(a.values().data(), b.values().data());

    let pass = round_trip < 1e-10 && pass_err < 1e-10 && block_err < 1e-10 && translation < 1e-9;
    verdict(
        2,
        pass,
        &format!(
            "(round trip {round_trip:.1e}, retained mode {pass_err:.1e}, truncated mode {block_err:.1e}, translation {translation:.1e})"
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 3

fn refine(u: &Tensor) -> Tensor {
    // spectral interpolation onto twice the points
    let n = u.len();
    let hat = rfft(u, 1).unwrap();
    let mut re = vec![0.0; n + 1];
    let mut im = vec![0.0; n + 1];
    for k in 0..n / 2 {
        re[k] = 2.0 * hat.real.data()[k];
        im[k] = 2.0 * hat.imag.data()[k];
    }
    re[n / 2] = hat.real.data()[n / 2];
    let fine = neurop_core::fft::ComplexTensor::new(Tensor::from_vec(re), Tensor::from_vec(im)).unwrap();
    irfft(&fine, &[2 * n]).unwrap()
}

#[test]
fn criterion_3_solver_oracles() {
    let _guard = serial();
    let start = Instant::now();

    let (nu, len) = (0.01, 2.0);
    let spec = GridSpec::new(&[64], &[len], 0.01, 150).unwrap();
    let u0 = Tensor::new(&[64], (0..64).map(|i| (2.0 * PI * i as f64 * spec.dx(0) / len).sin()).collect()).unwrap();
    let out = solve_heat(&u0, nu, &spec).unwrap();
    let expected = (-nu * (2.0 * PI / len).powi(2) * spec.horizon()).exp();
    let heat = (out.last().data()[16] / u0.data()[16] / expected - 1.0).abs();

    let spec = GridSpec::new(&[64], &[1.0], 1.0 / 16.0, 16).unwrap();
    let u0 = random_field(&spec, 0.08, 1.0, 2).unwrap();
    let out = solve_advection(&u0, &[3.0 / 64.0], &spec).unwrap();
    let shifted: Vec<f64> = (0..64).map(|i| u0.data()[(i + 61) % 64]).collect();
    let advection = max_diff(out.last().data(), &shifted);

    let coarse = GridSpec::new(&[128], &[1.0], 0.0025, 200).unwrap();
    let fine = GridSpec::new(&[256], &[1.0], 0.00125, 400).unwrap();
    let mut burgers: f64 = 0.0;
    for seed in 0..3 {
        let u0 = random_field(&coarse, 0.1, 0.5, seed).unwrap();
        let a = solve_burgers(&u0, 0.01, &coarse).unwrap().into_last();
        let b = solve_burgers(&refine(&u0), 0.01, &fine).unwrap().into_last();
        let diff: f64 = (0..128).map(|i| (a.data()[i] - b.data()[2 * i]).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = a.data().iter().map(|x| x * x).sum::<f64>().sqrt();
        burgers = burgers.max(diff / norm);
    }

    let spec = GridSpec::new(&[32, 32], &[1.0, 1.0], 1.0, 1000).unwrap();
    let u = Tensor::full(&[32, 32], 1.0);
    let v = Tensor::zeros(&[32, 32]);
    let out = solve_gray_scott(&u, &v, ReactionParams::STANDARD, &spec).unwrap();
    let last = out.last().data();
    let drift = max_diff(&last[..1024], u.data()).max(max_diff(&last[1024..], v.data()));

    let secs = start.elapsed().as_secs_f64();
    let pass = heat < 1e-6 && advection < 1e-10 && burgers < 1e-4 && drift < 1e-12 && secs < 300.0;
    verdict(
        3,
        pass,
        &format!(
            "(heat decay {heat:.1e}, advection shift {advection:.1e}, burgers refinement {burgers:.1e}, gray-scott drift {drift:.1e}; {secs:.1} s)"
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 4

fn burgers_task(id: &str, nu: [f64; 2], n: usize) -> PhysicsTask {
    let mut g = GeneratorConfig::default_for(TaskKind::Burgers);
    g.grid = GridSpec::new(&[n], &[1.0], 0.005, 20).unwrap();
    g.nu = nu;
    PhysicsTask::new(id, g).unwrap()
}

#[test]
fn criterion_4_adapter_protocol() {
    let _guard = serial();
    // θ_F through a whole fine-tuning run
    let pre = burgers_task("lo", [0.01, 0.02], 32);
    let ft = burgers_task("hi", [0.03, 0.04], 32);
    let ds = |t: &PhysicsTask, n, seed| make_dataset(&t.id, &t.generator, n, seed).unwrap();
    let (ptr, pva, ftr, fva) = (ds(&pre, 16, 1), ds(&pre, 8, 2), ds(&ft, 16, 3), ds(&ft, 8, 4));
    let mut model = NeuralOperatorModel::new(CoreConfig::new(Architecture::MambaFno, 8, 2, &[8]), 3).unwrap();
    model.attach_adapter(pre.clone(), 1, false).unwrap();
    let cfg = TrainConfig { epochs: 3, batch_size: 4, ..TrainConfig::default() };
    let pdata: BTreeMap<_, _> = [("lo".to_string(), TaskData { train: &ptr, val: &pva })].into();
    train(&mut model, &TrainPhase::pretrain(&["lo"]), &pdata, &cfg, &NoClock).unwrap();
    model.attach_adapter(ft.clone(), 2, false).unwrap();
    let before = model.core_fingerprint();
    let adapter_before = model.params.fingerprint("adapter/hi/");
    let fdata: BTreeMap<_, _> = [("hi".to_string(), TaskData { train: &ftr, val: &fva })].into();
    let cfg = TrainConfig { epochs: 5, ..cfg };
    let out = train(&mut model, &TrainPhase::finetune("hi"), &fdata, &cfg, &NoClock).unwrap();
    let frozen = model.core_fingerprint() == before && model.params.fingerprint("adapter/hi/") != adapter_before;
    let adapter = model.adapter_param_count("hi").unwrap();
    let logged = out.log.records().iter().all(|r| r.trainable_params == adapter);

    // trainable share at reference widths, for every architecture
    let mut share: f64 = 0.0;
    for arch in [Architecture::Fno, Architecture::MambaFno, Architecture::PerceiverNo] {
        let mut m = NeuralOperatorModel::new(CoreConfig::new(arch, 32, 4, &[16]), 1).unwrap();
        m.attach_adapter(burgers_task("b", [0.01, 0.02], 128), 1, false).unwrap();
        m.attach_adapter(burgers_task("c", [0.03, 0.04], 128), 2, false).unwrap();
        let s = m.adapter_param_count("c").unwrap() as f64 / m.total_param_count() as f64;
        share = share.max(s);
    }

    // one core, inputs of different cardinality
    let mut m = NeuralOperatorModel::new(CoreConfig::new(Architecture::Fno, 8, 2, &[6]), 4).unwrap();
    let kinds = [TaskKind::Burgers, TaskKind::Advection, TaskKind::GrayScott, TaskKind::RdAdvection];
    let mut cardinalities = Vec::new();
    let mut composed = true;
    for (i, kind) in kinds.into_iter().enumerate() {
        let mut g = GeneratorConfig::default_for(kind);
        g.grid = GridSpec::new(&[32], &[1.0], g.grid.dt, 2).unwrap();
        let t = PhysicsTask::new(kind.id(), g).unwrap();
        let n_in = t.input_names().len();
        cardinalities.push(n_in);
        m.attach_adapter(t.clone(), i as u64, false).unwrap();
        let y = m.predict(kind.id(), &Tensor::full(&[2, n_in, 32], 0.1)).unwrap();
        composed &= y.shape() == [2, t.generator.out_channels(), 32] && y.is_finite();
    }
    cardinalities.sort();
    cardinalities.dedup();

    let pass = frozen && logged && share < 0.1 && composed && cardinalities.len() >= 2;
    verdict(
        4,
        pass,
        &format!(
            "(core hash constant {frozen}, log shows adapter-only {logged}, largest adapter share {:.2}%, input cardinalities {cardinalities:?} on one core)",
            100.0 * share
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 8

#[test]
fn criterion_8_metric_fidelity() {
    let _guard = serial();
    let target = Tensor::new(&[3, 1, 5], (0..15).map(|i| ((i * 7) % 11) as f64 * 0.3 - 1.0).collect()).unwrap();
    let mut worst: f64 = 0.0;
    for delta in [1e-3, 0.25, -0.7, 4.0] {
        let pred = target.map(|v| v + delta);
        let got = nmae(&pred, &target, NMAE_EPS).unwrap();
        // per sample: |δ| / (range + ε), then averaged
        let oracle: f64 = target
            .data()
            .chunks(5)
            .map(|s| {
                let range = s.iter().cloned().fold(f64::MIN, f64::max) - s.iter().cloned().fold(f64::MAX, f64::min);
                delta.abs() / (range + NMAE_EPS)
            })
            .sum::<f64>()
            / 3.0;
        worst = worst.max((got - oracle).abs());
    }

    let record = MetricRecord {
        label: "FNO (scratch)".into(),
        task: "burgers".into(),
        mse: 1.774e-7,
        nmae_percent: 0.0204,
        epoch_seconds: 7.44,
        params: 1_000_000,
    };
    let table = ReportTable::new(vec![record.clone()]).to_text();
    let row = table.lines().nth(2).unwrap_or_default().to_string();
    let expected = "FNO (scratch) | 1.774e-7 | 0.0204 | ";
    let pass = worst < 1e-12 && row.starts_with(expected) && record.row().starts_with(expected);
    verdict(8, pass, &format!("(nmae oracle gap {worst:.1e}, row `{row}`)"));
    assert!(pass);
}

// ---------------------------------------------------------------- 5-7

fn experiment(config: &str, seed: Option<u64>, out: &Path) -> Experiment {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(config);
    let config = ExperimentConfig::load(&path).unwrap();
    Experiment::new(config, seed, Some(out.to_path_buf()))
}

#[test]
fn criterion_5_out_of_sample_coefficients() {
    let _guard = serial();
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let exp = experiment("oos_params.toml", None, dir.path());
    let table = exp.run(None, false, &WallClock::new()).unwrap();
    let secs = start.elapsed().as_secs_f64();
    print!("{}", table.to_text());

    let mut better = Vec::new();
    let mut faster = true;
    let mut detail = Vec::new();
    for &arch in &exp.config.architectures {
        let ft = read_record(&exp.record_path(arch, Phase::Finetune)).unwrap();
        let sc = read_record(&exp.record_path(arch, Phase::Scratch)).unwrap();
        if ft.nmae_percent <= sc.nmae_percent {
            better.push(arch);
        }
        faster &= ft.epoch_seconds < sc.epoch_seconds;
        detail.push(format!(
            "{arch}: fine-tune {:.4}% vs scratch {:.4}%, {:.2} s vs {:.2} s per epoch",
            ft.nmae_percent, sc.nmae_percent, ft.epoch_seconds, sc.epoch_seconds
        ));
    }
    let budgets = exp.config.train.finetune.epochs == exp.config.train.scratch.epochs;
    let pass = !better.is_empty() && faster && budgets && secs < 20.0 * 60.0;
    verdict(5, pass, &format!("({}; {secs:.0} s)", detail.join("; ")));
    assert!(pass);
}

#[test]
fn criterion_6_input_extension() {
    let _guard = serial();
    let start = Instant::now();
    let clock = WallClock::new();
    let mut wins = 0;
    let mut within = true;
    let mut detail = Vec::new();
    for seed in [11, 12, 13] {
        let dir = tempfile::tempdir().unwrap();
        let exp = experiment("input_extension.toml", Some(seed), dir.path());
        exp.gen_data().unwrap();
        let arch = exp.config.architectures[0];
        let pre = exp.pretrain(arch, &clock).unwrap();
        exp.finetune(arch, None, &clock).unwrap();
        exp.scratch(arch, &clock).unwrap();
        let ft = exp.evaluate(arch, Phase::Finetune).unwrap();
        let sc = exp.evaluate(arch, Phase::Scratch).unwrap();
        let own_task = &exp.config.pretrain_tasks[0];
        let own = neurop::experiment::eval_checkpoint(
            &pre.best_checkpoint,
            &exp.dataset_path(own_task, neurop::experiment::Split::Val),
            None,
        )
        .unwrap();
        within &= ft.nmae_percent < 2.0 * own.nmae_percent;
        if ft.nmae_percent < sc.nmae_percent {
            wins += 1;
        }
        detail.push(format!(
            "seed {seed}: pretrain {:.4}%, fine-tune {:.4}%, scratch {:.4}%",
            own.nmae_percent, ft.nmae_percent, sc.nmae_percent
        ));
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = within && wins >= 2 && secs < 30.0 * 60.0;
    verdict(6, pass, &format!("({}; fine-tune wins {wins}/3; {secs:.0} s)", detail.join("; ")));
    assert!(pass);
}

/// Report text with the seconds column blanked.
fn without_seconds(text: &str) -> String {
    text.lines()
        .map(|l| {
            let mut cells: Vec<&str> = l.split(" | ").collect();
            if cells.len() == 5 {
                cells[3] = "";
            }
            cells.join(" | ")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn criterion_7_multiphysics() {
    let _guard = serial();
    let start = Instant::now();
    let mut reports = Vec::new();
    let mut complete = true;
    for _ in 0..2 {
        let dir = tempfile::tempdir().unwrap();
        let exp = experiment("multiphysics.toml", None, dir.path());
        let table = exp.run(None, false, &WallClock::new()).unwrap();
        let text = std::fs::read_to_string(dir.path().join("report.txt")).unwrap();
        let header: Vec<&str> = text.lines().next().unwrap().split(" | ").map(str::trim).collect();
        complete &= text == table.to_text() && header == ReportTable::HEADER;
        complete &= table.rows.len() == 2 * exp.config.architectures.len()
            && table.rows.iter().all(|r| {
                r.mse.is_finite() && r.nmae_percent.is_finite() && r.epoch_seconds > 0.0 && r.params > 0
            })
            && text.lines().skip(2).all(|l| l.split(" | ").count() == 5);
        reports.push((text, table));
    }
    print!("{}", reports[0].0);
    let same = without_seconds(&reports[0].0) == without_seconds(&reports[1].0)
        && reports[0].1.rows.iter().zip(&reports[1].1.rows).all(|(a, b)| {
            (a.mse, a.nmae_percent, a.params, &a.label) == (b.mse, b.nmae_percent, b.params, &b.label)
        });
    let secs = start.elapsed().as_secs_f64();
    let pass = complete && same;
    verdict(7, pass, &format!("(all columns present {complete}, identical reruns {same}; {secs:.0} s)"));
    assert!(pass);
}
