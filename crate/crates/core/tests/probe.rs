mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use trace_core::clickstream::{Task, TaskLabelSet};
use trace_core::probe::gbdt::{fit_gbdt, log_loss, FeatureMatrix, GbdtConfig, Node};
use trace_core::probe::metrics::{auprc, auroc, f1_acc};
use trace_core::probe::{kfold_cv_select, stratified_folds, ProbeGrid};
use trace_core::tensor::{Tape, Tensor};
use trace_core::training::{multitask_loss, ClassWeights};

fn random_instance(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<bool>) {
    let n = rng.gen_range(2..=100);
    // coarse grid of scores so ties are common
    let levels = rng.gen_range(2..12);
    let mut y: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.3)).collect();
    y[0] = true;
    y[1] = false;
    let s = (0..n).map(|_| rng.gen_range(0..levels) as f64 / levels as f64).collect();
    (s, y)
}

#[test]
fn auroc_and_auprc_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100 {
        let (s, y) = random_instance(&mut rng);
        let a = auroc(&s, &y).unwrap();
        let p = auprc(&s, &y).unwrap();
        assert!((a - common::brute_auroc(&s, &y)).abs() < 1e-12);
        assert!((p - common::brute_auprc(&s, &y)).abs() < 1e-12);
        let (f1, acc) = f1_acc(&s, &y);
        let (bf1, bacc) = common::confusion_f1_acc(&s, &y, 0.5);
        assert!((f1 - bf1).abs() < 1e-15 && (acc - bacc).abs() < 1e-15);
    }
}

#[test]
fn metric_edge_cases() {
    let y = [true, false, true, false];
    assert_eq!(auroc(&[0.9, 0.1, 0.8, 0.2], &y).unwrap(), 1.0);
    assert_eq!(auroc(&[0.1, 0.9, 0.2, 0.8], &y).unwrap(), 0.0);
    assert_eq!(auroc(&[0.5; 4], &y).unwrap(), 0.5);
    assert_eq!(auprc(&[0.9, 0.1, 0.8, 0.2], &y).unwrap(), 1.0);
    assert!(auroc(&[0.1, 0.2], &[true, true]).is_err());
    assert!(auprc(&[0.1, 0.2], &[false, false]).is_err());
    assert!(auroc(&[f64::NAN, 0.2], &[true, false]).is_err());
    let (f1, acc) = f1_acc(&[0.9, 0.6, 0.4, 0.1], &y);
    // tp 1, fp 1, fn 1, tn 1
    assert!((f1 - 0.5).abs() < 1e-12 && (acc - 0.5).abs() < 1e-12);
}

#[test]
fn multitask_loss_matches_scalar_definition() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..1000 {
        let k = Task::TRAINING.len();
        let z: Vec<f64> = (0..k).map(|_| rng.gen_range(-40.0..40.0)).collect();
        let y: Vec<bool> = (0..k).map(|_| rng.gen_bool(0.5)).collect();
        let w = ClassWeights {
            tasks: Task::TRAINING.to_vec(),
            weights: (0..k).map(|_| rng.gen_range(1.0..50.0)).collect(),
        };
        let got = multitask_loss(&z, &y, &w).unwrap();
        let want: f64 = (0..k).map(|i| common::scalar_bce(z[i], y[i], w.weights[i])).sum();
        assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0), "{got} vs {want}");

        let mut tape = Tape::new();
        let logits = tape.constant(Tensor::matrix(1, k, z.clone()).unwrap());
        let labels: Vec<f64> = y.iter().map(|&b| f64::from(b as u8)).collect();
        let l = tape.weighted_bce(logits, &labels, &w.weights).unwrap();
        assert!((tape.value(l).item() - want).abs() <= 1e-12 * want.abs().max(1.0));
    }
}

#[test]
fn extreme_logits_stay_finite() {
    let w = ClassWeights {
        tasks: vec![Task::Pw2, Task::Bn5],
        weights: vec![4.0, 2.0],
    };
    let l = multitask_loss(&[-800.0, 800.0], &[true, false], &w).unwrap();
    assert!((l - (4.0 * 800.0 + 800.0)).abs() < 1e-9);
    assert_eq!(multitask_loss(&[800.0, -800.0], &[true, false], &w).unwrap(), 0.0);
}

#[test]
fn class_weights_are_inverse_prevalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let labels: Vec<TaskLabelSet> = (0..500)
        .map(|_| TaskLabelSet::from_array(std::array::from_fn(|_| rng.gen_bool(0.2))))
        .collect();
    let w = ClassWeights::compute(&labels, &Task::TRAINING).unwrap();
    for t in Task::TRAINING {
        let pos = labels.iter().filter(|l| l.get(t)).count() as f64;
        assert!((w.get(t).unwrap() - 500.0 / pos).abs() < 1e-12);
    }
    let none = vec![TaskLabelSet::default(); 10];
    assert!(ClassWeights::compute(&none, &Task::TRAINING).is_err());
}

fn features(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()
}

#[test]
fn first_split_is_the_exhaustive_best() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..30 {
        let n = rng.gen_range(20..80);
        let x = features(&mut rng, n, 3);
        let mut y: Vec<bool> = x.iter().map(|r| r[1] + 0.5 * rng.gen_range(-1.0..1.0) > 0.2).collect();
        y[0] = true;
        y[1] = false;
        let cfg = GbdtConfig {
            n_trees: 1,
            max_depth: 1,
            learning_rate: 0.1,
            min_leaf: 3,
        };
        let m = fit_gbdt(&FeatureMatrix::from_rows(&x).unwrap(), &y, &cfg).unwrap();
        let p0 = y.iter().filter(|&&b| b).count() as f64 / n as f64;
        let r: Vec<f64> = y.iter().map(|&b| f64::from(b as u8) - p0).collect();
        let (f, t, gain) = common::best_split(&x, &r, 3).unwrap();
        let Node::Split { feature, threshold, .. } = m.trees[0].nodes[0] else {
            assert!(gain <= 1e-12);
            continue;
        };
        if (feature, threshold) != (f, t) {
            // only acceptable as an exact tie in gain
            let left: Vec<usize> = (0..n).filter(|&i| x[i][feature] <= threshold).collect();
            let sl: f64 = left.iter().map(|&i| r[i]).sum();
            let s: f64 = r.iter().sum();
            let nl = left.len() as f64;
            let g = sl * sl / nl + (s - sl).powi(2) / (n as f64 - nl) - s * s / n as f64;
            assert!((g - gain).abs() < 1e-9, "split ({feature},{threshold}) gain {g} vs best ({f},{t}) {gain}");
        }
    }
}

#[test]
fn training_loss_is_monotone_at_small_rates() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = features(&mut rng, 300, 4);
    let y: Vec<bool> = x.iter().map(|r| r[0] * r[1] + 0.3 * rng.gen_range(-1.0..1.0) > 0.0).collect();
    let m = FeatureMatrix::from_rows(&x).unwrap();
    for lr in [0.01, 0.05, 0.1] {
        let cfg = GbdtConfig {
            n_trees: 60,
            max_depth: 3,
            learning_rate: lr,
            min_leaf: 5,
        };
        let model = fit_gbdt(&m, &y, &cfg).unwrap();
        let stages: Vec<usize> = (0..=60).collect();
        let losses: Vec<f64> = model.predict_staged(&m, &stages).iter().map(|p| log_loss(p, &y)).collect();
        for w in losses.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "lr {lr}: {} -> {}", w[0], w[1]);
        }
    }
}

#[test]
fn separable_data_is_learned() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = features(&mut rng, 400, 3);
    let y: Vec<bool> = x.iter().map(|r| r[2] > 0.1).collect();
    let m = FeatureMatrix::from_rows(&x).unwrap();
    let model = fit_gbdt(&m, &y, &GbdtConfig::default()).unwrap();
    let test = features(&mut rng, 400, 3);
    let ty: Vec<bool> = test.iter().map(|r| r[2] > 0.1).collect();
    let p = model.predict_all(&FeatureMatrix::from_rows(&test).unwrap());
    let (_, acc) = f1_acc(&p, &ty);
    assert!(acc >= 0.95, "accuracy {acc}");
}

#[test]
fn zero_trees_predict_the_prior() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = features(&mut rng, 50, 2);
    let y: Vec<bool> = (0..50).map(|i| i % 5 == 0).collect();
    let cfg = GbdtConfig {
        n_trees: 0,
        ..GbdtConfig::default()
    };
    let model = fit_gbdt(&FeatureMatrix::from_rows(&x).unwrap(), &y, &cfg).unwrap();
    for r in &x {
        assert!((model.predict_proba(r) - 0.2).abs() < 1e-12);
    }
}

#[test]
fn cross_validation_prefers_shallow_trees_when_deep_ones_overfit_noise() {
    // graded signal in one feature, nine pure-noise features
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = features(&mut rng, 300, 10);
    let y: Vec<bool> = x.iter().map(|r| rng.gen_bool(1.0 / (1.0 + (-3.0 * r[0]).exp()))).collect();
    let grid = ProbeGrid {
        max_depth: vec![1, 6],
        learning_rate: vec![0.3],
        n_trees: vec![100],
        min_leaf: 2,
        folds: 5,
    };
    let cv = kfold_cv_select(&FeatureMatrix::from_rows(&x).unwrap(), &y, &grid, 8).unwrap();
    assert_eq!(cv.best.max_depth, 1, "{:?}", cv.scores);
    assert_eq!(cv.oof.len(), 300);
}

#[test]
fn folds_are_stratified() {
    let y: Vec<bool> = (0..103).map(|i| i % 4 == 0).collect();
    let f = stratified_folds(&y, 5, 1).unwrap();
    for k in 0..5 {
        let pos = (0..y.len()).filter(|&i| f[i] == k && y[i]).count();
        let all = f.iter().filter(|&&v| v == k).count();
        assert!((5..=6).contains(&pos), "fold {k}: {pos} positives");
        assert!((20..=21).contains(&all));
    }
    assert!(stratified_folds(&y, 1, 1).is_err());
}
