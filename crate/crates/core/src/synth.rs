//! Hidden-Markov journey generator.
//!
//! Each session carries a latent intent state. States evolve across sessions
//! through `state_transition`; inside a session pages follow the state's own
//! page-level Markov chain. Session lengths, gaps and purchase odds all depend
//! on the state, which gives downstream models something to recover.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::distributions::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Poisson};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::catalog::{PageCatalog, PageCategory};
use crate::clickstream::{
    sample_split_index, sessionize, Journey, LabelConfig, PageViewEvent, DAY,
    DEFAULT_SESSION_TIMEOUT,
};
use crate::dataset::{
    file_sha256, prevalence_map, write_jsonl, JourneyRecord, LabeledExample,
};
use crate::error::{Result, TraceError};
use crate::tensor::hex;

const ROW_SUM_TOL: f64 = 1e-9;

/// Log-normal duration given by its median (seconds) and log-scale sigma.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapSpec {
    pub median: f64,
    pub sigma: f64,
}

impl GapSpec {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.sigma == 0.0 {
            return self.median;
        }
        LogNormal::new(self.median.ln(), self.sigma)
            .expect("validated gap spec")
            .sample(rng)
    }
}

/// `min + Poisson(extra_mean)` events per session.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LengthSpec {
    pub min: usize,
    pub extra_mean: f64,
}

impl LengthSpec {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.min + poisson(self.extra_mean, rng)
    }
}

fn poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> usize {
    if mean <= 0.0 {
        0
    } else {
        Poisson::new(mean).expect("validated mean").sample(rng) as usize
    }
}

/// Weighted categorical prior over string tokens.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prior {
    pub values: Vec<String>,
    pub probs: Vec<f64>,
}

impl Prior {
    fn new(pairs: &[(&str, f64)]) -> Self {
        Prior {
            values: pairs.iter().map(|(v, _)| v.to_string()).collect(),
            probs: pairs.iter().map(|(_, p)| *p).collect(),
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> &str {
        &self.values[sample_index(&self.probs, rng)]
    }
}

fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    WeightedIndex::new(probs)
        .expect("validated distribution")
        .sample(rng)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub catalog: PageCatalog,
    /// Session timeout `T`, seconds.
    pub session_timeout: f64,
    pub states: Vec<String>,
    pub initial_state: Vec<f64>,
    /// Row-stochastic `[states × states]`, applied between sessions.
    pub state_transition: Vec<Vec<f64>>,
    /// Per state: distribution of a session's first page.
    pub initial_page: Vec<Vec<f64>>,
    /// Per state: row-stochastic `[pages × pages]` within a session.
    pub page_transition: Vec<Vec<Vec<f64>>>,
    pub session_length: Vec<LengthSpec>,
    /// Per state probability that a session ends in a purchase.
    pub purchase_prob: Vec<f64>,
    /// Pages appended to a purchasing session.
    pub purchase_flow: PurchaseFlow,
    /// Sessions per journey are `1 + Poisson(extra_sessions_mean)`, capped at `max_sessions`.
    pub extra_sessions_mean: f64,
    pub max_sessions: usize,
    /// Within-session gaps, clamped to `[1 s, T]`.
    pub intra_gap: GapSpec,
    /// Per state: excess over `T` of the gap before the next session.
    pub inter_gap: Vec<GapSpec>,
    pub device: Prior,
    pub platform: Prior,
    pub locale: Prior,
    /// Journeys start uniformly in `[start_time, start_time + start_window]`.
    pub start_time: f64,
    pub start_window: f64,
    /// Split bounds: at least this many input and future events.
    pub min_input: usize,
    pub min_future: usize,
}

/// Checkout page, payment page, then the confirmation page carrying the
/// purchase flag, optionally followed by trip-management pages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PurchaseFlow {
    pub checkout_pages: Vec<String>,
    pub payment_page: String,
    pub confirmation_page: String,
    /// Pages that may follow the confirmation within the same session.
    pub follow_up_pages: Vec<String>,
    pub follow_up_mean: f64,
}

impl GeneratorConfig {
    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn state_index(&self, name: &str) -> Option<usize> {
        self.states.iter().position(|s| s == name)
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.n_states();
        let p = self.catalog.len();
        if s == 0 || p == 0 {
            return Err(TraceError::config("generator needs states and pages"));
        }
        check_dist("initial_state", &self.initial_state, s)?;
        check_square("state_transition", &self.state_transition, s)?;
        let per_state = |name: &str, n: usize| -> Result<()> {
            if n != s {
                return Err(TraceError::config(format!(
                    "{name} has {n} entries for {s} states"
                )));
            }
            Ok(())
        };
        per_state("initial_page", self.initial_page.len())?;
        per_state("page_transition", self.page_transition.len())?;
        per_state("session_length", self.session_length.len())?;
        per_state("purchase_prob", self.purchase_prob.len())?;
        per_state("inter_gap", self.inter_gap.len())?;
        for k in 0..s {
            check_dist(&format!("initial_page[{k}]"), &self.initial_page[k], p)?;
            check_square(&format!("page_transition[{k}]"), &self.page_transition[k], p)?;
            let pr = self.purchase_prob[k];
            if !(0.0..=1.0).contains(&pr) {
                return Err(TraceError::config(format!(
                    "purchase_prob[{k}] = {pr} outside [0, 1]"
                )));
            }
            if self.session_length[k].min == 0 || self.session_length[k].extra_mean < 0.0 {
                return Err(TraceError::config(format!("session_length[{k}] invalid")));
            }
            check_gap(&format!("inter_gap[{k}]"), &self.inter_gap[k])?;
        }
        check_gap("intra_gap", &self.intra_gap)?;
        for prior in [&self.device, &self.platform, &self.locale] {
            check_dist("attribute prior", &prior.probs, prior.values.len())?;
        }
        if !(self.session_timeout > 0.0) || self.max_sessions == 0 || self.extra_sessions_mean < 0.0
        {
            return Err(TraceError::config("invalid timeout or session count"));
        }
        let flow = &self.purchase_flow;
        for page in flow
            .checkout_pages
            .iter()
            .chain(&flow.follow_up_pages)
            .chain([&flow.payment_page])
        {
            if !self.catalog.contains(page) {
                return Err(TraceError::config(format!("purchase page `{page}` not in catalog")));
            }
        }
        if self.catalog.category(&flow.confirmation_page) != Some(PageCategory::OrderConfirmation) {
            return Err(TraceError::config(
                "confirmation_page must be an order-confirmation page",
            ));
        }
        if flow
            .checkout_pages
            .iter()
            .chain([&flow.payment_page])
            .any(|p| self.catalog.category(p) != Some(PageCategory::Checkout))
        {
            return Err(TraceError::config("checkout/payment pages must be checkout pages"));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex(&Sha256::digest(json))
    }

    /// One state that always visits the homepage; single sessions of `pages` events.
    pub fn degenerate(pages: usize) -> Self {
        let mut cfg = GeneratorConfig::travel_default(0);
        let p = cfg.catalog.len();
        let home = cfg.catalog.position("home").unwrap();
        let mut onehot = vec![0.0; p];
        onehot[home] = 1.0;
        cfg.states = vec!["only".into()];
        cfg.initial_state = vec![1.0];
        cfg.state_transition = vec![vec![1.0]];
        cfg.initial_page = vec![onehot.clone()];
        cfg.page_transition = vec![vec![onehot; p]];
        cfg.session_length = vec![LengthSpec {
            min: pages,
            extra_mean: 0.0,
        }];
        cfg.purchase_prob = vec![0.0];
        cfg.inter_gap = vec![cfg.inter_gap[0]];
        cfg.extra_sessions_mean = 0.0;
        cfg
    }

    /// Five-state travel-intent model over the default 50-page catalog.
    pub fn travel_default(seed: u64) -> Self {
        let catalog = PageCatalog::travel_default();
        let states = ["explore", "research", "compare", "purchase_ready", "booked"];

        // Category preference per state, in PageCategory::ALL order:
        // home, search, product, checkout, confirmation, upcoming, account, content, support
        let pref: [[f64; 9]; 5] = [
            [1.6, 0.4, 0.15, 0.01, 0.0, 0.04, 0.45, 3.6, 0.3],
            [0.6, 1.3, 0.55, 0.05, 0.0, 0.04, 0.5, 1.1, 0.25],
            [0.5, 0.7, 1.3, 0.45, 0.0, 0.05, 0.8, 0.4, 0.25],
            [0.4, 0.35, 1.2, 2.2, 0.0, 0.15, 1.0, 0.25, 0.25],
            [0.8, 0.35, 0.2, 0.03, 0.0, 3.0, 0.9, 0.7, 1.3],
        ];
        // Navigation affinity between categories (row = from).
        let flow: [[f64; 9]; 9] = [
            [0.3, 3.0, 1.0, 0.1, 0.0, 1.0, 1.0, 2.0, 0.5],
            [0.5, 1.5, 3.0, 0.2, 0.0, 0.1, 0.3, 0.4, 0.2],
            [0.4, 1.5, 2.0, 1.5, 0.0, 0.1, 0.6, 0.3, 0.3],
            [0.5, 0.3, 1.5, 2.0, 0.0, 0.2, 0.8, 0.1, 0.4],
            [1.0, 0.3, 0.3, 0.1, 0.0, 3.0, 1.0, 0.5, 0.5],
            [1.0, 0.2, 0.3, 0.1, 0.0, 3.0, 0.8, 0.3, 1.5],
            [1.5, 0.6, 0.6, 0.3, 0.0, 1.2, 1.5, 0.5, 0.5],
            [1.0, 1.5, 0.8, 0.05, 0.0, 0.1, 0.3, 3.0, 0.3],
            [1.2, 0.3, 0.3, 0.1, 0.0, 1.5, 0.8, 0.3, 2.0],
        ];
        let start: [f64; 9] = [3.0, 1.5, 0.8, 0.05, 0.0, 1.0, 0.6, 1.2, 0.4];

        let pages = catalog.pages();
        let cat = |i: usize| pages[i].category.index();
        let normalize = |v: Vec<f64>| {
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect::<Vec<_>>()
        };
        let mut initial_page = Vec::new();
        let mut page_transition = Vec::new();
        for pr in &pref {
            initial_page.push(normalize(
                (0..pages.len())
                    .map(|j| start[cat(j)] * pr[cat(j)] * pages[j].weight)
                    .collect(),
            ));
            let mut m = Vec::with_capacity(pages.len());
            for i in 0..pages.len() {
                let row = (0..pages.len())
                    .map(|j| {
                        let w = flow[cat(i)][cat(j)] * pr[cat(j)] * pages[j].weight;
                        if i == j {
                            0.25 * w
                        } else {
                            w
                        }
                    })
                    .collect::<Vec<_>>();
                // Rows whose successors all have zero weight fall back to the start distribution.
                if row.iter().sum::<f64>() > 0.0 {
                    m.push(normalize(row));
                } else {
                    m.push(normalize(
                        (0..pages.len())
                            .map(|j| start[cat(j)] * pr[cat(j)] * pages[j].weight)
                            .collect(),
                    ));
                }
            }
            page_transition.push(m);
        }

        let len = |extra_mean| LengthSpec { min: 3, extra_mean };
        let gap = |days: f64, sigma| GapSpec {
            median: days * DAY,
            sigma,
        };
        GeneratorConfig {
            seed,
            catalog,
            session_timeout: DEFAULT_SESSION_TIMEOUT,
            states: states.iter().map(|s| s.to_string()).collect(),
            initial_state: vec![0.45, 0.25, 0.15, 0.07, 0.08],
            state_transition: vec![
                vec![0.50, 0.30, 0.12, 0.05, 0.03],
                vec![0.15, 0.40, 0.30, 0.12, 0.03],
                vec![0.08, 0.17, 0.40, 0.32, 0.03],
                vec![0.05, 0.08, 0.20, 0.47, 0.20],
                vec![0.25, 0.10, 0.05, 0.05, 0.55],
            ],
            initial_page,
            page_transition,
            session_length: vec![len(8.0), len(10.0), len(12.0), len(10.0), len(5.0)],
            purchase_prob: vec![0.003, 0.02, 0.08, 0.35, 0.03],
            purchase_flow: PurchaseFlow {
                checkout_pages: vec![
                    "checkout_hotel".into(),
                    "checkout_flight".into(),
                    "checkout_package".into(),
                ],
                payment_page: "payment".into(),
                confirmation_page: "booking_confirmation".into(),
                follow_up_pages: vec!["trip_details".into(), "itinerary".into()],
                follow_up_mean: 0.7,
            },
            extra_sessions_mean: 1.8,
            max_sessions: 12,
            intra_gap: GapSpec {
                median: 45.0,
                sigma: 1.0,
            },
            inter_gap: vec![
                gap(6.0, 1.0),
                gap(3.0, 1.0),
                gap(1.5, 1.0),
                gap(0.5, 1.0),
                gap(8.0, 0.8),
            ],
            device: Prior::new(&[("desktop", 0.45), ("mobile", 0.45), ("tablet", 0.10)]),
            platform: Prior::new(&[("web", 0.6), ("ios", 0.22), ("android", 0.18)]),
            locale: Prior::new(&[
                ("en_US", 0.4),
                ("en_GB", 0.2),
                ("de_DE", 0.15),
                ("fr_FR", 0.15),
                ("es_ES", 0.10),
            ]),
            start_time: 1_704_067_200.0,
            start_window: 60.0 * DAY,
            min_input: 2,
            min_future: 1,
        }
    }

    /// Expected share of sessions ending in a purchase, from the state
    /// marginals at each session index and the session-count distribution.
    pub fn expected_purchase_rate(&self) -> f64 {
        let s = self.n_states();
        // P(K >= k) for K = 1 + min(Poisson(λ), max_sessions - 1)
        let lambda = self.extra_sessions_mean;
        let mut pmf = Vec::with_capacity(self.max_sessions);
        let mut term = (-lambda).exp();
        for n in 0..self.max_sessions {
            if n > 0 {
                term *= lambda / n as f64;
            }
            pmf.push(term);
        }
        let tail: f64 = 1.0 - pmf[..self.max_sessions - 1].iter().sum::<f64>();
        pmf[self.max_sessions - 1] = tail;
        let mut survive = Vec::with_capacity(self.max_sessions);
        let mut acc = 1.0;
        for k in 0..self.max_sessions {
            survive.push(acc);
            acc -= pmf[k];
        }
        let mut dist = self.initial_state.clone();
        let (mut purchases, mut sessions) = (0.0, 0.0);
        for &p_alive in &survive {
            let rate: f64 = (0..s).map(|k| dist[k] * self.purchase_prob[k]).sum();
            purchases += p_alive * rate;
            sessions += p_alive;
            dist = (0..s)
                .map(|j| (0..s).map(|i| dist[i] * self.state_transition[i][j]).sum())
                .collect();
        }
        purchases / sessions
    }
}

fn check_dist(name: &str, v: &[f64], n: usize) -> Result<()> {
    if v.len() != n {
        return Err(TraceError::config(format!(
            "{name} has {} entries, expected {n}",
            v.len()
        )));
    }
    if v.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
        return Err(TraceError::config(format!("{name} has entries outside [0, 1]")));
    }
    let sum: f64 = v.iter().sum();
    if (sum - 1.0).abs() > ROW_SUM_TOL {
        return Err(TraceError::config(format!("{name} sums to {sum}, not 1")));
    }
    Ok(())
}

fn check_square(name: &str, m: &[Vec<f64>], n: usize) -> Result<()> {
    if m.len() != n {
        return Err(TraceError::config(format!("{name} has {} rows, expected {n}", m.len())));
    }
    for (i, row) in m.iter().enumerate() {
        check_dist(&format!("{name} row {i}"), row, n)?;
    }
    Ok(())
}

fn check_gap(name: &str, g: &GapSpec) -> Result<()> {
    if !(g.median > 0.0 && g.median.is_finite() && g.sigma >= 0.0 && g.sigma.is_finite()) {
        return Err(TraceError::config(format!("{name} is not a valid log-normal")));
    }
    Ok(())
}

/// Mixes a master seed with an index (splitmix64 finalizer).
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A generated journey plus the latent state of every session.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedJourney {
    pub journey: Journey,
    pub session_states: Vec<usize>,
}

impl GeneratedJourney {
    /// Latent state of each event, in event order.
    pub fn event_states(&self) -> Vec<usize> {
        self.journey
            .sessions
            .iter()
            .zip(&self.session_states)
            .flat_map(|(s, &k)| std::iter::repeat(k).take(s.events.len()))
            .collect()
    }
}

pub fn generate_journey<R: Rng + ?Sized>(
    cfg: &GeneratorConfig,
    user_id: &str,
    rng: &mut R,
) -> Result<GeneratedJourney> {
    cfg.validate()?;
    Ok(generate_unchecked(cfg, user_id, rng))
}

fn generate_unchecked<R: Rng + ?Sized>(cfg: &GeneratorConfig, user_id: &str, rng: &mut R) -> GeneratedJourney {
    let pages = cfg.catalog.pages();
    let page_id = |name: &str| cfg.catalog.position(name).expect("validated page");
    let n_sessions = (1 + poisson(cfg.extra_sessions_mean, rng)).min(cfg.max_sessions);
    let locale = cfg.locale.sample(rng).to_string();
    let platform = cfg.platform.sample(rng).to_string();
    let home_device = cfg.device.sample(rng).to_string();

    let mut t = cfg.start_time + rng.gen::<f64>() * cfg.start_window;
    let mut state = sample_index(&cfg.initial_state, rng);
    let mut sessions = Vec::with_capacity(n_sessions);
    let mut session_states = Vec::with_capacity(n_sessions);
    for si in 0..n_sessions {
        if si > 0 {
            state = sample_index(&cfg.state_transition[state], rng);
            t += cfg.session_timeout + cfg.inter_gap[state].sample(rng).max(1.0);
        }
        let device = if rng.gen::<f64>() < 0.75 {
            home_device.clone()
        } else {
            cfg.device.sample(rng).to_string()
        };
        let mut page_seq = Vec::new();
        let len = cfg.session_length[state].sample(rng);
        let mut page = sample_index(&cfg.initial_page[state], rng);
        page_seq.push((page, false));
        while page_seq.len() < len {
            page = sample_index(&cfg.page_transition[state][page], rng);
            page_seq.push((page, false));
        }
        if rng.gen::<f64>() < cfg.purchase_prob[state] {
            let flow = &cfg.purchase_flow;
            let checkout = &flow.checkout_pages[rng.gen_range(0..flow.checkout_pages.len())];
            page_seq.push((page_id(checkout), false));
            page_seq.push((page_id(&flow.payment_page), false));
            page_seq.push((page_id(&flow.confirmation_page), true));
            for _ in 0..poisson(flow.follow_up_mean, rng) {
                let f = &flow.follow_up_pages[rng.gen_range(0..flow.follow_up_pages.len())];
                page_seq.push((page_id(f), false));
            }
        }
        let mut events = Vec::with_capacity(page_seq.len());
        for (k, (p, purchase)) in page_seq.into_iter().enumerate() {
            if k > 0 {
                t += cfg.intra_gap.sample(rng).clamp(1.0, cfg.session_timeout);
            }
            events.push(PageViewEvent {
                page_name: pages[p].name.clone(),
                timestamp: t,
                device_type: device.clone(),
                platform: platform.clone(),
                locale: locale.clone(),
                is_purchase: purchase,
            });
        }
        sessions.push(crate::clickstream::Session { events });
        session_states.push(state);
    }
    GeneratedJourney {
        journey: Journey {
            user_id: user_id.to_string(),
            sessions,
        },
        session_states,
    }
}

/// A labeled synthetic example that remembers its latent states.
#[derive(Clone, Debug)]
pub struct SyntheticExample {
    pub labeled: LabeledExample,
    pub record: JourneyRecord,
    /// Latent state of the session that contains the split point.
    pub split_state: usize,
}

pub fn user_id(index: usize) -> String {
    format!("u{index:07}")
}

/// Generates user `index` and splits it, fully determined by `(cfg, index)`.
pub fn generate_example(cfg: &GeneratorConfig, index: usize) -> Result<SyntheticExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, index as u64));
    let uid = user_id(index);
    let g = generate_unchecked(cfg, &uid, &mut rng);
    let events = g.journey.flatten();
    let split = sample_split_index(events.len(), &mut rng, cfg.min_input, cfg.min_future)
        .ok_or_else(|| {
            TraceError::config(format!(
                "journey of {} events cannot be split with min_input {} / min_future {}",
                events.len(),
                cfg.min_input,
                cfg.min_future
            ))
        })?;
    let split_state = g.event_states()[split - 1];
    let record = JourneyRecord::new(uid, events, Some(split));
    let labeled =
        LabeledExample::from_record(&record, cfg.session_timeout, &cfg.catalog, &LabelConfig::default())?;
    Ok(SyntheticExample {
        labeled,
        record,
        split_state,
    })
}

pub fn generate_examples(cfg: &GeneratorConfig, range: std::ops::Range<usize>) -> Result<Vec<SyntheticExample>> {
    cfg.validate()?;
    range.map(|i| generate_example(cfg, i)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub journeys: usize,
    pub label_prevalence: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub seed: u64,
    pub config_hash: String,
    pub session_timeout: f64,
    pub label_config: LabelConfig,
    pub files: BTreeMap<String, FileEntry>,
}

impl CorpusManifest {
    /// Combined digest of the data files, in name order.
    pub fn data_hash(&self) -> String {
        let mut h = Sha256::new();
        for (name, f) in &self.files {
            h.update(name.as_bytes());
            h.update(f.sha256.as_bytes());
        }
        hex(&h.finalize())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|_| TraceError::Missing {
            artifact: "corpus manifest".into(),
            path: path.to_path_buf(),
            hint: "generate".into(),
        })?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn manifest_entry(path: &Path, examples: &[SyntheticExample]) -> Result<FileEntry> {
    let labeled: Vec<_> = examples.iter().map(|e| e.labeled.clone()).collect();
    Ok(FileEntry {
        path: path.file_name().unwrap().to_string_lossy().into_owned(),
        sha256: file_sha256(path)?,
        journeys: examples.len(),
        label_prevalence: prevalence_map(&labeled),
    })
}

/// Writes `n_users` journeys to `out_path` and a manifest next to it
/// (`<out_path>.manifest.json`).
pub fn generate_corpus(cfg: &GeneratorConfig, n_users: usize, out_path: impl AsRef<Path>) -> Result<CorpusManifest> {
    if n_users == 0 {
        return Err(TraceError::config("n_users must be at least 1"));
    }
    let out_path = out_path.as_ref();
    let examples = generate_examples(cfg, 0..n_users)?;
    let records: Vec<_> = examples.iter().map(|e| e.record.clone()).collect();
    write_jsonl(out_path, &records)?;
    let name = out_path.file_stem().unwrap().to_string_lossy().into_owned();
    let manifest = CorpusManifest {
        seed: cfg.seed,
        config_hash: cfg.hash(),
        session_timeout: cfg.session_timeout,
        label_config: LabelConfig::default(),
        files: BTreeMap::from([(name, manifest_entry(out_path, &examples)?)]),
    };
    let mpath = PathBuf::from(format!("{}.manifest.json", out_path.display()));
    std::fs::write(mpath, serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Default for SplitSizes {
    fn default() -> Self {
        SplitSizes {
            train: 20_000,
            val: 5_000,
            test: 5_000,
        }
    }
}

/// In-memory train/val/test splits; users are disjoint across splits.
#[derive(Clone, Debug)]
pub struct SyntheticCorpus {
    pub train: Vec<SyntheticExample>,
    pub val: Vec<SyntheticExample>,
    pub test: Vec<SyntheticExample>,
}

impl SyntheticCorpus {
    pub fn generate(cfg: &GeneratorConfig, sizes: SplitSizes) -> Result<Self> {
        let a = sizes.train;
        let b = a + sizes.val;
        let c = b + sizes.test;
        Ok(SyntheticCorpus {
            train: generate_examples(cfg, 0..a)?,
            val: generate_examples(cfg, a..b)?,
            test: generate_examples(cfg, b..c)?,
        })
    }
}

pub const CORPUS_MANIFEST: &str = "manifest.json";
pub const GENERATOR_CONFIG: &str = "generator_config.json";

/// Writes `train/val/test.jsonl`, the generator config and a manifest into `dir`.
pub fn write_corpus_dir(cfg: &GeneratorConfig, sizes: SplitSizes, dir: impl AsRef<Path>) -> Result<CorpusManifest> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let corpus = SyntheticCorpus::generate(cfg, sizes)?;
    let mut files = BTreeMap::new();
    for (name, part) in [("train", &corpus.train), ("val", &corpus.val), ("test", &corpus.test)] {
        let path = dir.join(format!("{name}.jsonl"));
        let records: Vec<_> = part.iter().map(|e| e.record.clone()).collect();
        write_jsonl(&path, &records)?;
        files.insert(name.to_string(), manifest_entry(&path, part)?);
    }
    std::fs::write(dir.join(GENERATOR_CONFIG), serde_json::to_string(cfg)?)?;
    let manifest = CorpusManifest {
        seed: cfg.seed,
        config_hash: cfg.hash(),
        session_timeout: cfg.session_timeout,
        label_config: LabelConfig::default(),
        files,
    };
    std::fs::write(dir.join(CORPUS_MANIFEST), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

/// Reads a directory written by [`write_corpus_dir`] back into labeled splits.
pub fn load_corpus_dir(dir: impl AsRef<Path>) -> Result<(CorpusManifest, GeneratorConfig, [Vec<LabeledExample>; 3])> {
    let dir = dir.as_ref();
    let manifest = CorpusManifest::load(dir.join(CORPUS_MANIFEST))?;
    let cfg: GeneratorConfig = serde_json::from_str(&std::fs::read_to_string(dir.join(GENERATOR_CONFIG))?)?;
    let load = |name: &str| -> Result<Vec<LabeledExample>> {
        crate::dataset::read_jsonl(dir.join(format!("{name}.jsonl")))?
            .iter()
            .map(|r| {
                LabeledExample::from_record(r, manifest.session_timeout, &cfg.catalog, &manifest.label_config)
            })
            .collect()
    };
    let splits = [load("train")?, load("val")?, load("test")?];
    Ok((manifest, cfg, splits))
}

/// Re-partitions a flattened journey with the configured timeout.
pub fn resessionize(j: &Journey, timeout: f64) -> Result<Journey> {
    sessionize(j.user_id.clone(), j.flatten(), timeout)
}
