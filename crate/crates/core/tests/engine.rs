//! Training loop determinism, the all-real reduction to FixMatch, and
//! checkpoint round trips.

mod common;

use rsmatch::config::{Method, TrainConfig};
use rsmatch::engine::{run_training, Checkpoint, RunOptions, TrainData, Trainer};
use rsmatch::exec;
use rsmatch::nets::ModelBundle;
use rsmatch::tensor::Tensor;

fn bits(m: &ModelBundle, classifier_only: bool) -> Vec<u64> {
    let mut ps = m.classifier.params();
    if !classifier_only {
        ps.extend(m.detector.params());
    }
    ps.iter().flat_map(|p| p.value.iter().map(|v| v.to_bits())).collect()
}

fn train(cfg: &TrainConfig, data: &TrainData, steps: usize) -> Trainer {
    let mut t = Trainer::new(cfg.clone(), data).unwrap();
    for _ in 0..steps {
        t.step(data).unwrap();
    }
    t
}

#[test]
fn all_real_gate_reduces_to_fixmatch_bit_for_bit() {
    for seed in [0, 1] {
        if let Err(e) = common::all_real_matches_fixmatch(seed) {
            panic!("seed {seed}: {e}");
        }
    }
}

#[test]
fn routing_changes_training_without_the_override() {
    let d = common::data();
    let a = train(&common::tiny_config(Method::FixMatch, 0), &d, 20);
    let b = train(&common::tiny_config(Method::RsMatch, 0), &d, 20);
    assert_ne!(common::served_bits(&a.models), common::served_bits(&b.models));
}

#[test]
fn same_seed_same_run() {
    let d = common::data();
    let cfg = common::tiny_config(Method::RsMatch, 3);
    let mut a = Trainer::new(cfg.clone(), &d).unwrap();
    let mut b = Trainer::new(cfg, &d).unwrap();
    for _ in 0..50 {
        assert_eq!(a.step(&d).unwrap(), b.step(&d).unwrap());
    }
    assert_eq!(bits(&a.models, false), bits(&b.models, false));
    assert_eq!(a.queue, b.queue);
}

#[test]
fn seeds_differ() {
    let d = common::data();
    let a = train(&common::tiny_config(Method::RsMatch, 0), &d, 5);
    let b = train(&common::tiny_config(Method::RsMatch, 1), &d, 5);
    assert_ne!(bits(&a.models, false), bits(&b.models, false));
}

#[test]
fn sequential_and_parallel_agree() {
    let d = common::data();
    let cfg = common::tiny_config(Method::RsMatch, 2);
    let a = train(&cfg, &d, 10);
    exec::set_parallel(false);
    let b = train(&cfg, &d, 10);
    exec::set_parallel(true);
    assert_eq!(bits(&a.models, false), bits(&b.models, false));
}

#[test]
fn resume_continues_the_same_trajectory() {
    let d = common::data();
    let cfg = common::tiny_config(Method::RsMatch, 4);
    let straight = train(&cfg, &d, 20);
    let half = train(&cfg, &d, 10);
    let bytes = Checkpoint::from_trainer(&half).to_bytes().unwrap();
    let mut resumed = Trainer::resume(&Checkpoint::from_bytes(&bytes).unwrap(), &d).unwrap();
    assert_eq!(resumed.iteration(), 10);
    for _ in 0..10 {
        resumed.step(&d).unwrap();
    }
    assert_eq!(bits(&straight.models, false), bits(&resumed.models, false));
    assert_eq!(straight.queue, resumed.queue);
}

#[test]
fn corrupted_checkpoints_are_rejected() {
    let d = common::data();
    let t = train(&common::tiny_config(Method::RsMatch, 0), &d, 2);
    let bytes = Checkpoint::from_trainer(&t).to_bytes().unwrap();
    for at in [0, 9, 15, bytes.len() / 2, bytes.len() - 1] {
        let mut bad = bytes.clone();
        bad[at] ^= 0x40;
        assert!(Checkpoint::from_bytes(&bad).is_err(), "flip at byte {at} accepted");
    }
    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    assert!(Checkpoint::from_bytes(&[]).is_err());
}

#[test]
fn inference_model_matches_the_classifier() {
    let d = common::data();
    let t = train(&common::tiny_config(Method::RsMatch, 0), &d, 5);
    let ck = Checkpoint::from_trainer(&t).strip_for_inference();
    let stripped = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
    assert!(stripped.load_models().is_err());
    let inf = stripped.load_inference().unwrap();
    let imgs: Vec<&rsmatch::imaging::Image> = d.unlabeled.iter().collect();
    let x: Tensor = rsmatch::engine::data::to_tensor(&imgs);
    let want = t.models.classifier.real_logits_eval(&x);
    let got = inf.real_logits_eval(&x);
    assert_eq!(
        want.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        got.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
    assert!(stripped.tensor("classifier.dummy_head.weight").is_none());
    assert!(stripped.tensor("detector.head.weight").is_none());
}

#[test]
fn zero_iterations_writes_an_untrained_checkpoint() {
    let (d, test) = common::toy_data(3, 8, 4, 8, 5);
    let cfg = TrainConfig {
        total_iterations: 0,
        ..common::tiny_config(Method::RsMatch, 0)
    };
    let dir = tempfile::tempdir().unwrap();
    let out = run_training(
        &cfg,
        &d,
        &test,
        RunOptions {
            out_dir: Some(dir.path()),
            detector_probe: None,
        },
    )
    .unwrap();
    assert!(out.reports.is_empty() && out.evals.is_empty() && out.best.is_none());
    let ck = Checkpoint::read(&dir.path().join(rsmatch::engine::run::LAST_CHECKPOINT)).unwrap();
    assert_eq!(ck.header.iteration, 0);
    let fresh = Trainer::new(cfg, &d).unwrap();
    assert_eq!(bits(&ck.load_models().unwrap(), false), bits(&fresh.models, false));
}

#[test]
fn short_run_logs_every_step_and_evaluation() {
    let (d, test) = common::toy_data(3, 8, 4, 8, 5);
    let cfg = common::tiny_config(Method::RsMatch, 0);
    let dir = tempfile::tempdir().unwrap();
    let out = run_training(
        &cfg,
        &d,
        &test,
        RunOptions {
            out_dir: Some(dir.path()),
            detector_probe: None,
        },
    )
    .unwrap();
    assert_eq!(out.reports.len(), 50);
    assert_eq!(out.evals.iter().map(|e| e.iteration).collect::<Vec<_>>(), vec![25, 50]);
    let steps = std::fs::read_to_string(dir.path().join(rsmatch::engine::run::STEPS_FILE)).unwrap();
    assert_eq!(steps.lines().count(), 50);
    let best = out.best.unwrap();
    assert!(best.header.iteration == 25 || best.header.iteration == 50);
}
