mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use trace_core::catalog::PageCatalog;
use trace_core::clickstream::{
    compute_labels, sessionize, LabelConfig, PageViewEvent, SplitExample, Task, DEFAULT_SESSION_TIMEOUT,
};
use trace_core::dataset::label_prevalence;
use trace_core::synth::{
    generate_corpus, generate_examples, generate_journey, load_corpus_dir, resessionize, write_corpus_dir,
    GeneratorConfig, SplitSizes,
};

fn events(gaps: &[f64]) -> Vec<PageViewEvent> {
    let mut t = 1_000.0;
    let mut out = vec![PageViewEvent::new("home", t)];
    for &g in gaps {
        t += g;
        out.push(PageViewEvent::new("home", t));
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn sessions_partition_events_and_respect_timeout(
        gaps in prop::collection::vec(prop_oneof![0.0..100.0f64, 90.0..110.0f64, 100.0..10_000.0f64], 0..40),
    ) {
        let timeout = 100.0;
        let ev = events(&gaps);
        let j = sessionize("u", ev.clone(), timeout).unwrap();
        prop_assert_eq!(j.flatten(), ev);
        prop_assert!(j.sessions.iter().all(|s| !s.events.is_empty()));
        for s in &j.sessions {
            for w in s.events.windows(2) {
                prop_assert!(w[1].timestamp - w[0].timestamp <= timeout);
            }
        }
        for w in j.sessions.windows(2) {
            prop_assert!(w[1].start() - w[0].end() > timeout);
        }
        let breaks = gaps.iter().filter(|&&g| g > timeout).count();
        prop_assert_eq!(j.sessions.len(), breaks + 1);
    }
}

#[test]
fn gap_equal_to_timeout_stays_in_session() {
    let j = sessionize("u", events(&[100.0, 100.000001]), 100.0).unwrap();
    let sizes: Vec<_> = j.sessions.iter().map(|s| s.events.len()).collect();
    assert_eq!(sizes, [2, 1]);
}

#[test]
fn unordered_or_invalid_input_is_rejected() {
    assert!(sessionize("u", events(&[-1.0]), 100.0).is_err());
    assert!(sessionize("u", events(&[1.0]), 0.0).is_err());
    assert!(sessionize("u", vec![PageViewEvent::new("home", f64::NAN)], 100.0).is_err());
    assert!(sessionize("u", vec![], 100.0).unwrap().sessions.is_empty());
}

#[test]
fn labels_match_event_walk_on_generated_journeys() {
    let cfg = GeneratorConfig::travel_default(11);
    let label_cfg = LabelConfig::default();
    let ex = generate_examples(&cfg, 0..1000).unwrap();
    let mut disagreements = 0;
    for e in &ex {
        let split = e.record.split_index.unwrap();
        let oracle = common::walk_labels(&e.record.events, split, cfg.session_timeout, &cfg.catalog, &label_cfg);
        if oracle != e.labeled.labels {
            disagreements += 1;
            eprintln!("{}: {:?} vs {:?}", e.record.user_id, oracle, e.labeled.labels);
        }
    }
    assert_eq!(disagreements, 0);
}

#[test]
fn hand_built_labels() {
    let cat = PageCatalog::travel_default();
    let h = 3600.0;
    let day = 24.0 * h;
    let ev = vec![
        PageViewEvent::new("home", 0.0),
        PageViewEvent::new("search_hotels", 60.0),
        // split here
        PageViewEvent::new("hotel_details", 120.0),
        PageViewEvent::new("trips_upcoming", 180.0),
        PageViewEvent::new("home", 3.0 * day),
        PageViewEvent::new("booking_confirmation", 3.0 * day + 60.0).purchase(),
    ];
    let j = sessionize("u", ev, DEFAULT_SESSION_TIMEOUT).unwrap();
    let ex = SplitExample::at(&j, 2).unwrap();
    assert_eq!(ex.remaining_in_session, 2);
    let l = compute_labels(&ex, &cat, &LabelConfig::default());
    assert!(l.pw2 && l.bn5 && l.pdp && l.vuo && l.re7);
    assert!(!l.srp && !l.hom && !l.pws);

    // split at the very end of a session: nothing left in it
    let ex = SplitExample::at(&j, 4).unwrap();
    assert_eq!(ex.remaining_in_session, 0);
    let l = compute_labels(&ex, &cat, &LabelConfig::default());
    assert!(l.bn5 && !l.pdp && !l.vuo && l.re7 && l.pw2);

    // purchase just beyond the horizon
    let short = LabelConfig {
        purchase_horizon: 3.0 * day + 60.0 - 180.0 - 1.0,
        ..LabelConfig::default()
    };
    assert!(!compute_labels(&ex, &cat, &short).pw2);
}

#[test]
fn generator_sessions_survive_resessionization() {
    let cfg = GeneratorConfig::travel_default(3);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for i in 0..300 {
        let g = generate_journey(&cfg, &format!("u{i}"), &mut rng).unwrap();
        assert_eq!(resessionize(&g.journey, cfg.session_timeout).unwrap(), g.journey);
    }
}

#[test]
fn purchase_rate_matches_configured_expectation() {
    let cfg = GeneratorConfig::travel_default(5);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut sessions, mut buying) = (0usize, 0usize);
    for i in 0..5000 {
        let g = generate_journey(&cfg, &format!("u{i}"), &mut rng).unwrap();
        sessions += g.journey.sessions.len();
        buying += g.journey.sessions.iter().filter(|s| s.events.iter().any(|e| e.is_purchase)).count();
    }
    let observed = buying as f64 / sessions as f64;
    let expected = cfg.expected_purchase_rate();
    assert!(
        (observed - expected).abs() <= 0.2 * expected,
        "observed {observed:.4} expected {expected:.4}"
    );
}

#[test]
fn every_task_has_usable_prevalence() {
    let cfg = GeneratorConfig::travel_default(7);
    let ex: Vec<_> = generate_examples(&cfg, 0..3000).unwrap().into_iter().map(|e| e.labeled).collect();
    let p = label_prevalence(&ex);
    for t in Task::ALL {
        let v = p[t.index()];
        assert!(v > 0.01 && v < 0.6, "{} prevalence {v}", t.name());
    }
}

#[test]
fn corpus_generation_is_deterministic() {
    let dir = std::env::temp_dir().join(format!("trace-det-{}", std::process::id()));
    let cfg = GeneratorConfig::travel_default(21);
    let sizes = SplitSizes {
        train: 60,
        val: 20,
        test: 20,
    };
    let a = write_corpus_dir(&cfg, sizes, dir.join("a")).unwrap();
    let b = write_corpus_dir(&cfg, sizes, dir.join("b")).unwrap();
    assert_eq!(a, b);
    assert_eq!(
        std::fs::read(dir.join("a/train.jsonl")).unwrap(),
        std::fs::read(dir.join("b/train.jsonl")).unwrap()
    );
    let other = write_corpus_dir(&GeneratorConfig::travel_default(22), sizes, dir.join("c")).unwrap();
    assert_ne!(a.data_hash(), other.data_hash());

    let (m, _, [train, val, test]) = load_corpus_dir(dir.join("a")).unwrap();
    assert_eq!(m, a);
    assert_eq!((train.len(), val.len(), test.len()), (60, 20, 20));
    let direct = generate_examples(&cfg, 0..60).unwrap();
    for (l, d) in train.iter().zip(&direct) {
        assert_eq!(l, &d.labeled);
    }
    let mut users: Vec<_> = train.iter().chain(&val).chain(&test).map(|e| e.user_id.clone()).collect();
    users.sort();
    users.dedup();
    assert_eq!(users.len(), 100);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn single_user_corpus_has_one_line() {
    let dir = std::env::temp_dir().join(format!("trace-one-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("one.jsonl");
    let m = generate_corpus(&GeneratorConfig::travel_default(1), 1, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 1);
    assert_eq!(m.files["one"].journeys, 1);
    assert!(generate_corpus(&GeneratorConfig::travel_default(1), 0, &path).is_err());
    std::fs::remove_dir_all(&dir).ok();
}
