//! Finite-difference checks for every tape primitive and the full model losses.

use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use trace_core::clickstream::Task;
use trace_core::encoding::TimeFeatures;
use trace_core::models::{LstmModel, MiniGpt, PackedBatch, TraceModel};
use trace_core::tensor::gradcheck::{check_inputs, check_params, GradCheckReport};
use trace_core::tensor::{SegmentLayout, Tape, Tensor, Var};
use trace_core::training::{multitask_batch_loss, ClassWeights, EncodedSplit};
use trace_core::Result;

pub const EPS: f64 = 1e-6;
/// Losses summed over many terms carry more round-off, so a wider step.
pub const MODEL_EPS: f64 = 1e-5;
pub const TOL: f64 = 1e-4;

/// Contracts `v` with fixed pseudo-random weights so every output entry matters.
fn project(tape: &mut Tape, v: Var, seed: u64) -> Result<Var> {
    let shape = tape.value(v).shape().to_vec();
    let w = Tensor::randn(&shape, 1.0, &mut ChaCha8Rng::seed_from_u64(seed ^ 0xABCD));
    let c = tape.constant(w);
    let m = tape.mul(v, c)?;
    Ok(tape.sum(m))
}

fn randn(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::randn(&[rows, cols], 1.0, rng)
}

type Case = (&'static str, Vec<Tensor>, Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>);

pub fn primitive_cases(seed: u64) -> Vec<Case> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = &mut rng;
    let layout = Rc::new(SegmentLayout::with_mask(vec![(0, 3), (3, 2)], vec![true, true, false, true, true]).unwrap());
    let (l1, l2, l3) = (layout.clone(), layout.clone(), layout.clone());
    let labels: Vec<f64> = (0..8).map(|_| f64::from(r.gen_bool(0.4) as u8)).collect();
    let weights = vec![2.5, 1.0];
    let targets = vec![Some(2), None, Some(0), Some(3)];
    let dropout_seed: u64 = r.gen();
    let positive = Tensor::uniform(&[3, 4], 0.3, 2.0, r);
    vec![
        ("matmul", vec![randn(3, 4, r), randn(4, 2, r)], Box::new(move |t, v| {
            let o = t.matmul(v[0], v[1])?;
            project(t, o, seed)
        })),
        ("add", vec![randn(3, 4, r), randn(3, 4, r)], Box::new(move |t, v| {
            let o = t.add(v[0], v[1])?;
            project(t, o, seed)
        })),
        ("sub", vec![randn(3, 4, r), randn(3, 4, r)], Box::new(move |t, v| {
            let o = t.sub(v[0], v[1])?;
            project(t, o, seed)
        })),
        ("mul", vec![randn(3, 4, r), randn(3, 4, r)], Box::new(move |t, v| {
            let o = t.mul(v[0], v[1])?;
            project(t, o, seed)
        })),
        ("add_row", vec![randn(3, 4, r), randn(1, 4, r)], Box::new(move |t, v| {
            let o = t.add_row(v[0], v[1])?;
            project(t, o, seed)
        })),
        ("scale", vec![randn(3, 4, r)], Box::new(move |t, v| {
            let o = t.scale(v[0], -1.7);
            project(t, o, seed)
        })),
        ("relu", vec![randn(3, 4, r)], Box::new(move |t, v| {
            let o = t.relu(v[0]);
            project(t, o, seed)
        })),
        ("sigmoid", vec![randn(3, 4, r)], Box::new(move |t, v| {
            let o = t.sigmoid(v[0]);
            project(t, o, seed)
        })),
        ("tanh", vec![randn(3, 4, r)], Box::new(move |t, v| {
            let o = t.tanh(v[0]);
            project(t, o, seed)
        })),
        ("log", vec![positive], Box::new(move |t, v| {
            let o = t.log(v[0])?;
            project(t, o, seed)
        })),
        ("softmax", vec![randn(3, 4, r)], Box::new(move |t, v| {
            let o = t.softmax(v[0], Some(&[true, false, true, true]))?;
            project(t, o, seed)
        })),
        ("layer_norm", vec![randn(3, 4, r), randn(1, 4, r), randn(1, 4, r)], Box::new(move |t, v| {
            let o = t.layer_norm(v[0], v[1], v[2], 1e-5)?;
            project(t, o, seed)
        })),
        ("dropout", vec![randn(3, 4, r)], Box::new(move |t, v| {
            let o = t.dropout(v[0], 0.3, true, &mut ChaCha8Rng::seed_from_u64(dropout_seed))?;
            project(t, o, seed)
        })),
        ("gather", vec![randn(5, 3, r)], Box::new(move |t, v| {
            let o = t.gather(v[0], &[Some(1), None, Some(4), Some(1), Some(0)], None)?;
            project(t, o, seed)
        })),
        ("concat_cols", vec![randn(3, 2, r), randn(3, 3, r)], Box::new(move |t, v| {
            let o = t.concat_cols(&[v[0], v[1]])?;
            project(t, o, seed)
        })),
        ("slice_cols", vec![randn(3, 5, r)], Box::new(move |t, v| {
            let o = t.slice_cols(v[0], 1, 3)?;
            project(t, o, seed)
        })),
        ("attention", vec![randn(5, 4, r), randn(5, 4, r), randn(5, 4, r)], Box::new(move |t, v| {
            let o = t.attention(v[0], v[1], v[2], l1.clone(), 2, false)?;
            project(t, o, seed)
        })),
        ("attention_causal", vec![randn(5, 4, r), randn(5, 4, r), randn(5, 4, r)], Box::new(move |t, v| {
            let o = t.attention(v[0], v[1], v[2], l2.clone(), 2, true)?;
            project(t, o, seed)
        })),
        ("max_pool", vec![randn(5, 3, r)], Box::new(move |t, v| {
            let o = t.max_pool(v[0], &layout)?;
            project(t, o, seed)
        })),
        ("mean_pool", vec![randn(5, 3, r)], Box::new(move |t, v| {
            let o = t.mean_pool(v[0], l3.clone())?;
            project(t, o, seed)
        })),
        ("weighted_bce", vec![randn(4, 2, r)], Box::new(move |t, v| t.weighted_bce(v[0], &labels, &weights))),
        ("softmax_xent", vec![randn(4, 5, r)], Box::new(move |t, v| t.softmax_xent(v[0], &targets))),
        ("sum", vec![randn(3, 4, r)], Box::new(move |t, v| {
            let m = t.mul(v[0], v[0])?;
            Ok(t.sum(m))
        })),
    ]
}

pub fn check_primitives(seed: u64) -> Vec<(String, GradCheckReport)> {
    primitive_cases(seed)
        .into_iter()
        .map(|(name, inputs, f)| (name.to_string(), check_inputs(f, &inputs, EPS).unwrap()))
        .collect()
}

/// Full training losses of tiny TRACE, LSTM and Mini-GPT models w.r.t. every parameter.
pub fn check_models(seed: u64) -> Vec<(String, GradCheckReport)> {
    let ex = super::examples(16, seed);
    let enc = super::encoder(&ex, 5, TimeFeatures::All);
    let all = EncodedSplit::encode(&ex, &enc).unwrap();
    let weights = ClassWeights::compute(&all.labels, &Task::TRAINING);
    let batch_idx = [0, 1, 2];
    let split = all.subset(&batch_idx);
    let js = split.refs();
    let ls: Vec<_> = split.labels.iter().collect();
    let mut out = Vec::new();

    // tiny batches may miss a task's positives; the loss is still defined
    let weights = weights.unwrap_or_else(|_| ClassWeights {
        tasks: Task::TRAINING.to_vec(),
        weights: vec![3.0; 5],
    });

    let cfg = super::tiny_trace(&enc);
    let m = TraceModel::new(cfg.clone(), seed).unwrap();
    let rep = check_params(
        &m.store,
        |s, tape| {
            let m = TraceModel::from_store(cfg.clone(), s)?;
            multitask_batch_loss(&m, tape, &js, &ls, &weights, true, &mut ChaCha8Rng::seed_from_u64(seed))
        },
        MODEL_EPS,
    )
    .unwrap();
    out.push(("trace".to_string(), rep));

    let cfg = super::tiny_lstm(&enc);
    let m = LstmModel::new(cfg.clone(), seed).unwrap();
    let rep = check_params(
        &m.store,
        |s, tape| {
            let m = LstmModel::from_store(cfg.clone(), s)?;
            multitask_batch_loss(&m, tape, &js, &ls, &weights, true, &mut ChaCha8Rng::seed_from_u64(seed))
        },
        MODEL_EPS,
    )
    .unwrap();
    out.push(("lstm".to_string(), rep));

    let cfg = super::tiny_gpt(&enc);
    let m = MiniGpt::new(cfg.clone(), seed).unwrap();
    let packed = PackedBatch::pack(&js).unwrap();
    let rep = check_params(
        &m.store,
        |s, tape| {
            let m = MiniGpt::from_store(cfg.clone(), s)?;
            m.lm_loss(tape, &packed, true, &mut ChaCha8Rng::seed_from_u64(seed))
        },
        MODEL_EPS,
    )
    .unwrap();
    out.push(("mini-gpt".to_string(), rep));
    out
}
