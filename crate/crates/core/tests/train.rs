use std::collections::BTreeMap;

use neurop_core::autodiff::Tape;
use neurop_core::blocks::ParamStore;
use neurop_core::pde::{make_dataset, Dataset, GeneratorConfig, GridSpec, TaskKind};
use neurop_core::rng::{normal, seeded};
use neurop_core::train::*;
use neurop_core::transfer::*;
use neurop_core::{Error, Tensor};

fn small_task(id: &str, kind: TaskKind, nu: [f64; 2]) -> PhysicsTask {
    let mut g = GeneratorConfig::default_for(kind);
    g.grid = GridSpec::new(&[32], &[1.0], 0.01, 10).unwrap();
    g.nu = nu;
    PhysicsTask::new(id, g).unwrap()
}

fn splits(t: &PhysicsTask, n: usize, seed: u64) -> (Dataset, Dataset) {
    (
        make_dataset(&t.id, &t.generator, n, seed).unwrap(),
        make_dataset(&t.id, &t.generator, n / 2, seed + 1000).unwrap(),
    )
}

fn model(arch: Architecture) -> NeuralOperatorModel {
    NeuralOperatorModel::new(CoreConfig::new(arch, 6, 2, &[6]), 11).unwrap()
}

fn config(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 4,
        lr: 3e-3,
        seed: 5,
        ..TrainConfig::default()
    }
}

fn data<'a>(entries: &[(&str, &'a Dataset, &'a Dataset)]) -> BTreeMap<String, TaskData<'a>> {
    entries
        .iter()
        .map(|(id, train, val)| (id.to_string(), TaskData { train, val }))
        .collect()
}

#[test]
fn zero_gradient_changes_nothing() {
    let mut params = ParamStore::new();
    params.insert("w", Tensor::from_vec(vec![1.0, -2.0]));
    let mut opt = OptimizerState::new(&TrainConfig::default());
    let grads = BTreeMap::from([("w".to_string(), Tensor::zeros(&[2]))]);
    opt.step(&mut params, &grads, 1e-3).unwrap();
    assert_eq!(params.get("w").unwrap().data(), &[1.0, -2.0]);
    let st = &opt.moments["w"];
    assert!(st.m.data().iter().chain(st.v.data()).all(|&x| x == 0.0));
}

#[test]
fn first_adam_step_is_about_lr_times_sign() {
    let lr = 1e-3;
    for g in [0.37, -4.2, 1e-3] {
        let mut params = ParamStore::new();
        params.insert("p", Tensor::scalar(0.5));
        let mut opt = OptimizerState::new(&TrainConfig::default());
        opt.step(&mut params, &BTreeMap::from([("p".to_string(), Tensor::scalar(g))]), lr).unwrap();
        let delta = params.get("p").unwrap().data()[0] - 0.5;
        let expected = -lr * g / (g.abs() + 1e-8);
        assert!((delta - expected).abs() < 1e-15);
        assert!((delta.abs() - lr).abs() < 1e-7 * lr / g.abs().min(1.0));
    }
}

#[test]
fn adam_rejects_bad_gradients() {
    let mut params = ParamStore::new();
    params.insert("p", Tensor::from_vec(vec![1.0, 2.0]));
    let mut opt = OptimizerState::new(&TrainConfig::default());
    let nan = BTreeMap::from([("p".to_string(), Tensor::from_vec(vec![0.1, f64::NAN]))]);
    assert_eq!(opt.step(&mut params, &nan, 1e-3).unwrap_err(), Error::NonFiniteGradient("p".into()));
    assert_eq!(params.get("p").unwrap().data(), &[1.0, 2.0]);
    let unknown = BTreeMap::from([("q".to_string(), Tensor::scalar(1.0))]);
    assert!(opt.step(&mut params, &unknown, 1e-3).is_err());
}

#[test]
fn clipping_bounds_the_joint_norm() {
    let mut g = BTreeMap::from([
        ("a".to_string(), Tensor::from_vec(vec![3.0])),
        ("b".to_string(), Tensor::from_vec(vec![4.0])),
    ]);
    assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
    assert!((g["a"].data()[0] - 0.6).abs() < 1e-15);
    assert!((g["b"].data()[0] - 0.8).abs() < 1e-15);
    assert_eq!(clip_global_norm(&mut g, 2.0), 1.0);
    assert!((g["a"].data()[0] - 0.6).abs() < 1e-15);
}

/// Least squares `y = W x` with an identity target: Adam on the tape finds
/// the closed-form optimum `W = I`.
#[test]
fn linear_toy_reaches_the_optimum() {
    let (n, d) = (64, 4);
    let mut rng = seeded(3);
    let x = Tensor::new(&[n, d], (0..n * d).map(|_| normal(&mut rng)).collect()).unwrap();
    let mut params = ParamStore::new();
    params.insert("w", Tensor::new(&[d, d], (0..d * d).map(|_| 0.3 * normal(&mut rng)).collect()).unwrap());
    let cfg = TrainConfig {
        lr: 0.05,
        clip_norm: None,
        ..TrainConfig::default()
    };
    let mut opt = OptimizerState::new(&cfg);
    let mut loss_value = f64::INFINITY;
    for _epoch in 0..200 {
        let mut tape = Tape::new();
        let w = tape.leaf(params.get("w").unwrap().clone(), true);
        let xv = tape.constant(x.clone());
        let pred = tape.matmul(xv, w).unwrap();
        let target = tape.constant(x.clone());
        let loss = tape.mse(pred, target).unwrap();
        loss_value = tape.value(loss).data()[0];
        if loss_value < 1e-6 {
            break;
        }
        let grads = tape.backward(loss).unwrap();
        let named = BTreeMap::from([("w".to_string(), grads.get(w).unwrap().clone())]);
        opt.step(&mut params, &named, cfg.lr_at(1)).unwrap();
    }
    assert!(loss_value < 1e-6, "{loss_value}");
}

#[test]
fn training_reduces_loss_and_logs_every_epoch() {
    let t = small_task("adv", TaskKind::Advection, [0.01, 0.02]);
    let (train_set, val) = splits(&t, 16, 1);
    let mut m = model(Architecture::Fno);
    m.attach_adapter(t.clone(), 1, false).unwrap();
    let out = train(&mut m, &TrainPhase::scratch("adv"), &data(&[("adv", &train_set, &val)]), &config(12), &NoClock).unwrap();
    let r = out.log.records();
    assert_eq!(r.len(), 12);
    assert!(r.last().unwrap().train_loss < 0.5 * r[0].train_loss);
    assert_eq!(r[0].trainable_params, m.total_param_count());
    assert!(out.best_epoch >= 1);
    assert_eq!(out.log.best().unwrap().epoch, out.best_epoch);
    assert!(m.normalizations().contains_key("adv"));
    let csv = out.log.to_csv();
    assert!(csv.starts_with(MetricsLog::HEADER));
    assert_eq!(csv.lines().count(), 13);
}

#[test]
fn runs_are_bitwise_reproducible() {
    let t = small_task("b", TaskKind::Burgers, [0.02, 0.04]);
    let (train_set, val) = splits(&t, 12, 2);
    let run = || {
        let mut m = model(Architecture::MambaFno);
        m.attach_adapter(t.clone(), 4, false).unwrap();
        let out = train(&mut m, &TrainPhase::scratch("b"), &data(&[("b", &train_set, &val)]), &config(3), &NoClock).unwrap();
        (m.params, out.log)
    };
    let (a, la) = run();
    let (b, lb) = run();
    assert_eq!(a.fingerprint(""), b.fingerprint(""));
    assert_eq!(la, lb);
}

#[test]
fn fine_tuning_only_moves_the_new_adapter() {
    let pre = small_task("lo", TaskKind::Burgers, [0.02, 0.03]);
    let ft = small_task("hi", TaskKind::Burgers, [0.03, 0.04]);
    let (ptrain, pval) = splits(&pre, 12, 3);
    let (ftrain, fval) = splits(&ft, 12, 4);
    let mut m = model(Architecture::Fno);
    m.attach_adapter(pre.clone(), 1, false).unwrap();
    train(&mut m, &TrainPhase::pretrain(&["lo"]), &data(&[("lo", &ptrain, &pval)]), &config(2), &NoClock).unwrap();

    m.attach_adapter(ft.clone(), 2, false).unwrap();
    let core = m.core_fingerprint();
    let old_adapter = m.params.fingerprint("adapter/lo/");
    let new_adapter = m.params.fingerprint("adapter/hi/");
    let out = train(&mut m, &TrainPhase::finetune("hi"), &data(&[("hi", &ftrain, &fval)]), &config(3), &NoClock).unwrap();
    assert_eq!(m.core_fingerprint(), core);
    assert_eq!(m.params.fingerprint("adapter/lo/"), old_adapter);
    assert_ne!(m.params.fingerprint("adapter/hi/"), new_adapter);
    let adapter = m.adapter_param_count("hi").unwrap();
    assert!(out.log.records().iter().all(|r| r.trainable_params == adapter));
    assert!(out.optimizer.moments.keys().all(|k| k.starts_with("adapter/hi/")));
}

#[test]
fn multi_task_rounds_touch_only_active_adapters() {
    let a = small_task("adv", TaskKind::Advection, [0.01, 0.02]);
    let b = small_task("bur", TaskKind::Burgers, [0.02, 0.04]);
    let idle = small_task("idle", TaskKind::Heat, [0.01, 0.02]);
    let (at, av) = splits(&a, 8, 5);
    let (bt, bv) = splits(&b, 12, 6);
    let mut m = model(Architecture::Fno);
    for (i, t) in [&a, &b, &idle].into_iter().enumerate() {
        m.attach_adapter(t.clone(), i as u64, false).unwrap();
    }
    let idle_fp = m.params.fingerprint("adapter/idle/");
    let core = m.core_fingerprint();
    let out = train(
        &mut m,
        &TrainPhase::pretrain(&["adv", "bur"]),
        &data(&[("adv", &at, &av), ("bur", &bt, &bv)]),
        &config(1),
        &NoClock,
    )
    .unwrap();
    assert_eq!(m.params.fingerprint("adapter/idle/"), idle_fp);
    assert_ne!(m.core_fingerprint(), core);
    // 2 batches of adv and 3 of bur: core steps 5 times, adapters 2 and 3
    let moments = &out.optimizer.moments;
    assert_eq!(moments["core/layer0/pointwise/w"].step, 5);
    assert_eq!(moments["adapter/adv/lift/w1"].step, 2);
    assert_eq!(moments["adapter/bur/lift/w1"].step, 3);
}

#[test]
fn divergence_reports_the_last_good_epoch() {
    let t = small_task("b", TaskKind::Burgers, [0.02, 0.04]);
    let (train_set, val) = splits(&t, 8, 7);
    let mut m = model(Architecture::Fno);
    m.attach_adapter(t, 1, false).unwrap();
    let w = m.params.get_mut("adapter/b/proj/b2").unwrap();
    w.data_mut()[0] = f64::NAN;
    let err = train(&mut m, &TrainPhase::scratch("b"), &data(&[("b", &train_set, &val)]), &config(2), &NoClock)
        .unwrap_err();
    assert_eq!(err, Error::NonFiniteLoss { epoch: 1, last_good: None });
}

#[test]
fn empty_splits_are_rejected() {
    let t = small_task("b", TaskKind::Burgers, [0.02, 0.04]);
    let (train_set, _) = splits(&t, 4, 8);
    let empty = make_dataset("b", &t.generator, 0, 1).unwrap();
    let mut m = model(Architecture::Fno);
    m.attach_adapter(t, 1, false).unwrap();
    let err = train(&mut m, &TrainPhase::scratch("b"), &data(&[("b", &train_set, &empty)]), &config(1), &NoClock);
    assert!(matches!(err, Err(Error::EmptyDataset(_))));
}

#[test]
fn config_validation_and_decay() {
    assert!(TrainConfig { lr: 0.0, ..TrainConfig::default() }.validate().is_err());
    assert!(TrainConfig { batch_size: 0, ..TrainConfig::default() }.validate().is_err());
    let c = TrainConfig {
        lr: 1.0,
        lr_decay: Some(StepDecay { every: 2, factor: 0.5 }),
        ..TrainConfig::default()
    };
    assert_eq!([c.lr_at(1), c.lr_at(2), c.lr_at(3), c.lr_at(5)], [1.0, 1.0, 0.5, 0.25]);
}
