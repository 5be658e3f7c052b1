mod common;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use trace_core::encoding::{EncodedJourney, TimeFeatures};
use trace_core::models::{
    GptConfig, JourneyEmbedder, LstmModel, MiniGpt, MultiTaskNet, PackedBatch, TraceConfig, TraceModel,
};
use trace_core::tensor::Tape;
use trace_core::training::EncodedSplit;

fn split(n: usize, seed: u64, max_len: usize) -> (trace_core::encoding::JourneyEncoder, EncodedSplit) {
    let ex = common::examples(n, seed);
    let enc = common::encoder(&ex, max_len, TimeFeatures::All);
    let s = EncodedSplit::encode(&ex, &enc).unwrap();
    (enc, s)
}

fn max_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[test]
fn embeddings_lie_strictly_inside_the_unit_interval() {
    let (enc, s) = split(60, 1, 20);
    let trace = TraceModel::new(common::tiny_trace(&enc), 1).unwrap();
    let lstm = LstmModel::new(common::tiny_lstm(&enc), 1).unwrap();
    for e in [trace.embed(&s.refs()).unwrap(), lstm.embed(&s.refs()).unwrap()] {
        assert_eq!(e.len(), 60);
        assert!(e.iter().flatten().all(|&v| v > 0.0 && v < 1.0));
    }
}

#[test]
fn padding_and_batch_composition_do_not_change_embeddings() {
    let (enc, s) = split(40, 2, 30);
    let model = TraceModel::new(common::tiny_trace(&enc), 2).unwrap();
    let refs = s.refs();
    let packed = model.embed_packed(&PackedBatch::pack(&refs).unwrap()).unwrap();
    let padded = model.embed_packed(&PackedBatch::pack_padded(&refs).unwrap()).unwrap();
    let single: Vec<Vec<f64>> = refs.iter().map(|j| model.embed_one(j).unwrap()).collect();
    assert!(max_diff(&packed, &padded) < 1e-9);
    assert!(max_diff(&packed, &single) < 1e-9);

    let lstm = LstmModel::new(common::tiny_lstm(&enc), 2).unwrap();
    let packed = lstm.embed_packed(&PackedBatch::pack(&refs).unwrap()).unwrap();
    let padded = lstm.embed_packed(&PackedBatch::pack_padded(&refs).unwrap()).unwrap();
    assert!(max_diff(&packed, &padded) < 1e-9);
}

/// Reorders event content; position indices stay with their row slots.
fn permute_rows(j: &EncodedJourney, order: &[usize]) -> EncodedJourney {
    let mut out = j.clone();
    let (c, k) = (j.n_cat(), j.n_numeric);
    for (dst, &src) in order.iter().enumerate() {
        out.cat_indices[dst * c..(dst + 1) * c].copy_from_slice(j.cat_row(src));
        out.num_features[dst * k..(dst + 1) * k].copy_from_slice(j.num_row(src));
    }
    out
}

#[test]
fn without_position_tables_the_encoder_is_permutation_invariant() {
    let (enc, s) = split(30, 3, 25);
    let mut model = TraceModel::new(common::tiny_trace(&enc), 3).unwrap();
    for name in ["embed.event_pos", "embed.session_pos"] {
        let id = model.store.id(name).unwrap();
        model.store.get_mut(id).data_mut().fill(0.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut moved = 0;
    for j in s.journeys.iter().filter(|j| j.true_length > 2) {
        let mut order: Vec<usize> = (0..j.true_length).collect();
        order.shuffle(&mut rng);
        let p = permute_rows(j, &order);
        let a = model.embed_one(j).unwrap();
        let b = model.embed_one(&p).unwrap();
        assert!(max_diff(&[a], &[b]) < 1e-12);
        moved += 1;
    }
    assert!(moved > 10);

    // with the position table restored, order matters again
    let fresh = TraceModel::new(common::tiny_trace(&enc), 3).unwrap();
    let j = s.journeys.iter().find(|j| j.true_length > 3).unwrap();
    let mut order: Vec<usize> = (0..j.true_length).collect();
    order.reverse();
    let a = fresh.embed_one(j).unwrap();
    let b = fresh.embed_one(&permute_rows(j, &order)).unwrap();
    assert!(max_diff(&[a], &[b]) > 1e-9);
}

#[test]
fn mini_gpt_is_causal() {
    let (enc, s) = split(30, 4, 20);
    let gpt = MiniGpt::new(common::tiny_gpt(&enc), 4).unwrap();
    let v = enc.vocabs.pages().size();
    for j in s.journeys.iter().filter(|j| j.true_length >= 4).take(10) {
        let tokens = j.page_tokens();
        let mask = vec![true; tokens.len()];
        let base = gpt.logits(&tokens, &mask).unwrap();
        for t in 1..tokens.len() {
            let mut changed = tokens.clone();
            changed[t] = if changed[t] == 2 { 3 } else { 2 };
            let z = gpt.logits(&changed, &mask).unwrap();
            let (a, b) = (base.data(), z.data());
            for r in 0..tokens.len() {
                let d = (0..v).map(|c| (a[r * v + c] - b[r * v + c]).abs()).fold(0.0, f64::max);
                if r < t {
                    assert_eq!(d, 0.0, "row {r} saw token {t}");
                } else if r == t {
                    assert!(d > 0.0);
                }
            }
        }
    }
}

#[test]
fn mini_gpt_initial_cross_entropy_is_near_uniform() {
    let (enc, s) = split(200, 5, 100);
    let gpt = MiniGpt::new(GptConfig::new(enc.vocabs.pages().size(), enc.max_len), 5).unwrap();
    let mut tape = Tape::new();
    let batch = PackedBatch::pack(&s.refs()).unwrap();
    let l = gpt.lm_loss(&mut tape, &batch, false, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let ce = tape.value(l).item();
    let uniform = (enc.vocabs.pages().size() as f64).ln();
    assert!((ce - uniform).abs() <= 0.05 * uniform, "CE {ce} vs log V {uniform}");
}

#[test]
fn forward_shapes_follow_the_config() {
    let (enc, s) = split(12, 6, 15);
    let cfg = TraceConfig {
        n_encoders: 2,
        ..common::tiny_trace(&enc)
    };
    let model = TraceModel::new(cfg, 6).unwrap();
    let batch = PackedBatch::pack(&s.refs()).unwrap();
    let mut tape = Tape::new();
    let (e, z) = model.forward(&mut tape, &batch, false, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(tape.value(e).shape(), &[12, 4]);
    assert_eq!(tape.value(z).shape(), &[12, 5]);
    assert_eq!(model.n_tasks(), 5);

    let bad = TraceConfig {
        n_heads: 3,
        ..common::tiny_trace(&enc)
    };
    assert!(TraceModel::new(bad, 0).is_err());
}
