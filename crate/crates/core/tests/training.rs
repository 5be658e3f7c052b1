mod common;

use trace_core::clickstream::Task;
use trace_core::encoding::TimeFeatures;
use trace_core::models::{JourneyEmbedder, LstmModel, MiniGpt, Network, TraceModel};
use trace_core::training::{
    load_checkpoint, train_minigpt, train_multitask, AnyModel, ClassWeights, EncodedSplit, SaveTo, TrainConfig,
    CHECKPOINT_FILE,
};
use trace_core::TraceError;

struct Setup {
    enc: trace_core::encoding::JourneyEncoder,
    train: EncodedSplit,
    val: EncodedSplit,
    weights: ClassWeights,
}

fn setup(n_train: usize, seed: u64) -> Setup {
    let ex = common::examples(n_train + 40, seed);
    let enc = common::encoder(&ex[..n_train], 20, TimeFeatures::All);
    let all = EncodedSplit::encode(&ex, &enc).unwrap();
    let train = all.subset(&(0..n_train).collect::<Vec<_>>());
    let val = all.subset(&(n_train..n_train + 40).collect::<Vec<_>>());
    let weights = ClassWeights::compute(&all.labels, &Task::TRAINING).unwrap();
    Setup {
        enc,
        train,
        val,
        weights,
    }
}

fn tmp(name: &str) -> std::path::PathBuf {
    std::env::temp_dir().join(format!("trace-train-{name}-{}", std::process::id()))
}

#[test]
fn one_epoch_on_ten_journeys_reloads_bitwise() {
    let s = setup(10, 1);
    let cfg = TrainConfig {
        epochs: 1,
        batch_size: 4,
        ..TrainConfig::default()
    };
    let dir = tmp("reload");
    let save = SaveTo {
        dir: dir.clone(),
        extra: serde_json::json!({"note": "test"}),
    };
    let mut model = TraceModel::new(common::tiny_trace(&s.enc), 1).unwrap();
    let rep = train_multitask(&mut model, &s.train, &s.val, &s.weights, &cfg, Some(&save)).unwrap();
    assert_eq!(rep.epochs.len(), 1);
    assert_eq!(rep.checkpoint.as_deref(), Some(dir.join(CHECKPOINT_FILE).as_path()));

    let ck = load_checkpoint(dir.join(CHECKPOINT_FILE)).unwrap();
    assert_eq!(ck.extra["note"], "test");
    let back = AnyModel::from_checkpoint(&ck).unwrap();
    let AnyModel::Trace(back) = back else { panic!("wrong kind") };
    assert_eq!(back.store.checksum(), model.store.checksum());
    assert_eq!(back.store.checksum(), rep.param_checksum);
    let a = model.embed(&s.val.refs()).unwrap();
    let b = back.embed(&s.val.refs()).unwrap();
    assert!(a.iter().flatten().zip(b.iter().flatten()).all(|(x, y)| x.to_bits() == y.to_bits()));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn missing_checkpoint_names_train() {
    let err = load_checkpoint(tmp("absent").join(CHECKPOINT_FILE)).unwrap_err();
    assert!(matches!(&err, TraceError::Missing { hint, .. } if hint == "train"), "{err}");
}

#[test]
fn training_is_deterministic_per_seed() {
    let s = setup(40, 2);
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 8,
        seed: 9,
        ..TrainConfig::default()
    };
    let run = |seed| {
        let mut m = LstmModel::new(common::tiny_lstm(&s.enc), 3).unwrap();
        let cfg = TrainConfig { seed, ..cfg.clone() };
        let r = train_multitask(&mut m, &s.train, &s.val, &s.weights, &cfg, None).unwrap();
        (m.store().checksum(), r.epochs.iter().map(|e| e.train_loss).collect::<Vec<_>>())
    };
    let a = run(9);
    assert_eq!(a, run(9));
    assert_ne!(a.0, run(10).0);
}

#[test]
fn training_lowers_the_loss() {
    let s = setup(300, 4);
    let cfg = TrainConfig {
        epochs: 5,
        batch_size: 32,
        lr: 3e-3,
        ..TrainConfig::default()
    };
    let mut m = TraceModel::new(common::tiny_trace(&s.enc), 4).unwrap();
    let r = train_multitask(&mut m, &s.train, &s.val, &s.weights, &cfg, None).unwrap();
    assert!(r.final_train_loss() < r.initial_train_loss, "{} -> {}", r.initial_train_loss, r.final_train_loss());
    assert!(r.best_val_loss <= r.initial_val_loss);

    let mut g = MiniGpt::new(common::tiny_gpt(&s.enc), 4).unwrap();
    let r = train_minigpt(&mut g, &s.train, &s.val, &cfg, None).unwrap();
    assert!(r.final_train_loss() < r.initial_train_loss);
}

#[test]
fn head_count_must_match_the_weights() {
    let s = setup(20, 5);
    let mut m = TraceModel::new(
        trace_core::models::TraceConfig::single_task(common::tiny_input(&s.enc), Task::Pw2),
        5,
    )
    .unwrap();
    let r = train_multitask(&mut m, &s.train, &s.val, &s.weights, &TrainConfig::default(), None);
    assert!(matches!(r, Err(TraceError::Config(_))));
}
