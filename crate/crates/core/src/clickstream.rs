//! Page-view events, timeout sessionization, journey splitting and the
//! eight binary engagement labels.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::{PageCatalog, PageCategory};
use crate::error::{Result, TraceError};

pub const MINUTE: f64 = 60.0;
pub const HOUR: f64 = 3600.0;
pub const DAY: f64 = 86_400.0;

/// Default session timeout `T`.
pub const DEFAULT_SESSION_TIMEOUT: f64 = 2.0 * HOUR;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PageViewEvent {
    pub page_name: String,
    /// Seconds since the epoch.
    pub timestamp: f64,
    pub device_type: String,
    pub platform: String,
    pub locale: String,
    #[serde(default)]
    pub is_purchase: bool,
}

impl PageViewEvent {
    pub fn new(page_name: impl Into<String>, timestamp: f64) -> Self {
        PageViewEvent {
            page_name: page_name.into(),
            timestamp,
            device_type: "desktop".into(),
            platform: "web".into(),
            locale: "en_US".into(),
            is_purchase: false,
        }
    }

    pub fn purchase(mut self) -> Self {
        self.is_purchase = true;
        self
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub events: Vec<PageViewEvent>,
}

impl Session {
    pub fn start(&self) -> f64 {
        self.events[0].timestamp
    }

    pub fn end(&self) -> f64 {
        self.events.last().unwrap().timestamp
    }
}

/// A user's sessions in chronological order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Journey {
    pub user_id: String,
    pub sessions: Vec<Session>,
}

impl Journey {
    pub fn num_events(&self) -> usize {
        self.sessions.iter().map(|s| s.events.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.num_events() == 0
    }

    pub fn events(&self) -> impl DoubleEndedIterator<Item = &PageViewEvent> + '_ {
        self.sessions.iter().flat_map(|s| s.events.iter())
    }

    /// Events paired with their session's recency rank (1 = most recent session).
    pub fn events_with_session_rank(&self) -> impl Iterator<Item = (usize, &PageViewEvent)> + '_ {
        let n = self.sessions.len();
        self.sessions
            .iter()
            .enumerate()
            .flat_map(move |(i, s)| s.events.iter().map(move |e| (n - i, e)))
    }

    pub fn flatten(&self) -> Vec<PageViewEvent> {
        self.events().cloned().collect()
    }

    pub fn last_event(&self) -> Option<&PageViewEvent> {
        self.events().next_back()
    }
}

fn check_timestamp(e: &PageViewEvent, i: usize) -> Result<()> {
    if !e.timestamp.is_finite() || e.timestamp < 0.0 {
        return Err(TraceError::data(format!(
            "event {i} has invalid timestamp {}",
            e.timestamp
        )));
    }
    Ok(())
}

/// Partitions a time-ordered event stream into sessions: a gap strictly
/// greater than `timeout` starts a new session.
pub fn sessionize(
    user_id: impl Into<String>,
    events: Vec<PageViewEvent>,
    timeout: f64,
) -> Result<Journey> {
    if !(timeout > 0.0 && timeout.is_finite()) {
        return Err(TraceError::config(format!(
            "session timeout must be positive, got {timeout}"
        )));
    }
    let mut sessions: Vec<Session> = Vec::new();
    let mut prev: Option<f64> = None;
    for (i, e) in events.into_iter().enumerate() {
        check_timestamp(&e, i)?;
        match prev {
            Some(p) if e.timestamp < p => {
                return Err(TraceError::data(format!(
                    "events out of order at index {i}: {} < {p}",
                    e.timestamp
                )));
            }
            Some(p) if e.timestamp - p <= timeout => {
                prev = Some(e.timestamp);
                sessions.last_mut().unwrap().events.push(e);
            }
            _ => {
                prev = Some(e.timestamp);
                sessions.push(Session { events: vec![e] });
            }
        }
    }
    Ok(Journey {
        user_id: user_id.into(),
        sessions,
    })
}

/// A journey cut into model input (before the split) and future events
/// used only for labels.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitExample {
    pub input: Journey,
    pub future: Vec<PageViewEvent>,
    /// Global index of the first future event; equals the input length.
    pub split_index: usize,
    /// How many leading future events belong to the session that was cut.
    pub remaining_in_session: usize,
}

impl SplitExample {
    /// Splits before global event `split_index` (`1 ≤ split_index ≤ total`).
    pub fn at(journey: &Journey, split_index: usize) -> Result<Self> {
        let total = journey.num_events();
        if split_index == 0 || split_index > total {
            return Err(TraceError::data(format!(
                "split index {split_index} outside 1..={total}"
            )));
        }
        let mut input = Journey {
            user_id: journey.user_id.clone(),
            sessions: Vec::new(),
        };
        let mut future = Vec::with_capacity(total - split_index);
        let mut remaining_in_session = 0;
        let mut seen = 0;
        for s in &journey.sessions {
            let n = s.events.len();
            if seen + n <= split_index {
                input.sessions.push(s.clone());
            } else if seen < split_index {
                let cut = split_index - seen;
                input.sessions.push(Session {
                    events: s.events[..cut].to_vec(),
                });
                future.extend_from_slice(&s.events[cut..]);
                remaining_in_session = n - cut;
            } else {
                future.extend_from_slice(&s.events);
            }
            seen += n;
        }
        Ok(SplitExample {
            input,
            future,
            split_index,
            remaining_in_session,
        })
    }

    /// Timestamp of the last input event.
    pub fn split_time(&self) -> f64 {
        self.input.last_event().map_or(0.0, |e| e.timestamp)
    }

    pub fn next_page(&self) -> Option<&str> {
        self.future.first().map(|e| e.page_name.as_str())
    }
}

/// Picks a split index uniformly from `min_input ..= total − min_future`.
/// Returns `None` when the journey is too short.
pub fn sample_split_index<R: Rng + ?Sized>(
    total: usize,
    rng: &mut R,
    min_input: usize,
    min_future: usize,
) -> Option<usize> {
    let min_input = min_input.max(1);
    if total < min_input + min_future {
        return None;
    }
    Some(rng.gen_range(min_input..=total - min_future))
}

pub fn split_journey<R: Rng + ?Sized>(
    journey: &Journey,
    rng: &mut R,
    min_input: usize,
    min_future: usize,
) -> Option<SplitExample> {
    let idx = sample_split_index(journey.num_events(), rng, min_input, min_future)?;
    SplitExample::at(journey, idx).ok()
}

/// The eight binary targets. The first five are training tasks, the last
/// three are evaluation-only.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskLabelSet {
    pub pw2: bool,
    pub bn5: bool,
    pub srp: bool,
    pub pdp: bool,
    pub vuo: bool,
    pub hom: bool,
    pub pws: bool,
    pub re7: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Task {
    Pw2,
    Bn5,
    Srp,
    Pdp,
    Vuo,
    Hom,
    Pws,
    Re7,
}

impl Task {
    pub const ALL: [Task; 8] = [
        Task::Pw2,
        Task::Bn5,
        Task::Srp,
        Task::Pdp,
        Task::Vuo,
        Task::Hom,
        Task::Pws,
        Task::Re7,
    ];
    pub const TRAINING: [Task; 5] = [Task::Pw2, Task::Bn5, Task::Srp, Task::Pdp, Task::Vuo];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Task::Pw2 => "PW2",
            Task::Bn5 => "BN5",
            Task::Srp => "SRP",
            Task::Pdp => "PDP",
            Task::Vuo => "VUO",
            Task::Hom => "HOM",
            Task::Pws => "PWS",
            Task::Re7 => "RE7",
        }
    }

    pub fn parse(s: &str) -> Result<Task> {
        Task::ALL
            .into_iter()
            .find(|t| t.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| TraceError::config(format!("unknown task `{s}`")))
    }
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl TaskLabelSet {
    pub fn get(&self, t: Task) -> bool {
        self.as_array()[t.index()]
    }

    pub fn as_array(&self) -> [bool; 8] {
        [
            self.pw2, self.bn5, self.srp, self.pdp, self.vuo, self.hom, self.pws, self.re7,
        ]
    }

    pub fn from_array(a: [bool; 8]) -> Self {
        TaskLabelSet {
            pw2: a[0],
            bn5: a[1],
            srp: a[2],
            pdp: a[3],
            vuo: a[4],
            hom: a[5],
            pws: a[6],
            re7: a[7],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelConfig {
    /// Purchase horizon after the split, seconds.
    pub purchase_horizon: f64,
    /// A bounce is fewer than this many further events in the current session.
    pub bounce_events: usize,
    /// Return window after the current session ends, seconds.
    pub return_window: f64,
}

impl Default for LabelConfig {
    fn default() -> Self {
        LabelConfig {
            purchase_horizon: 14.0 * DAY,
            bounce_events: 5,
            return_window: 7.0 * DAY,
        }
    }
}

/// Builds labels from the future events and the identity of the session
/// that was cut; the input history is consulted only for the split time.
pub fn compute_labels(ex: &SplitExample, catalog: &PageCatalog, cfg: &LabelConfig) -> TaskLabelSet {
    let split_time = ex.split_time();
    let current = &ex.future[..ex.remaining_in_session];
    let later = &ex.future[ex.remaining_in_session..];
    let in_current = |cat: PageCategory| {
        current
            .iter()
            .any(|e| catalog.category(&e.page_name) == Some(cat))
    };
    let session_end = current.last().map_or(split_time, |e| e.timestamp);
    TaskLabelSet {
        pw2: ex
            .future
            .iter()
            .any(|e| e.is_purchase && e.timestamp <= split_time + cfg.purchase_horizon),
        bn5: current.len() < cfg.bounce_events,
        srp: in_current(PageCategory::SearchResults),
        pdp: in_current(PageCategory::ProductDetail),
        vuo: in_current(PageCategory::UpcomingOrder),
        hom: in_current(PageCategory::Homepage),
        pws: current.iter().any(|e| e.is_purchase),
        re7: later.iter().any(|e| {
            e.timestamp > session_end && e.timestamp <= session_end + cfg.return_window
        }),
    }
}

/// The `len` most recent events, oldest first.
pub fn crop_recent(journey: &Journey, len: usize) -> Vec<&PageViewEvent> {
    let total = journey.num_events();
    journey.events().skip(total.saturating_sub(len)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn at(times: &[f64]) -> Vec<PageViewEvent> {
        times.iter().map(|&t| PageViewEvent::new("home", t)).collect()
    }

    #[test]
    fn task_serializes_by_name() {
        for t in Task::ALL {
            let json = serde_json::to_string(&t).unwrap();
            assert_eq!(json, format!("\"{}\"", t.name()));
            assert_eq!(serde_json::from_str::<Task>(&json).unwrap(), t);
        }
    }

    #[test]
    fn sessionize_examples() {
        let j = sessionize("u", at(&[100.0]), 2.0 * HOUR).unwrap();
        assert_eq!(j.sessions.len(), 1);

        let j = sessionize("u", at(&[0.0, 600.0, 1200.0]), 2.0 * HOUR).unwrap();
        assert_eq!(j.sessions.len(), 1);
        assert_eq!(j.num_events(), 3);

        let j = sessionize("u", at(&[0.0, 600.0, 600.0 + 3.0 * HOUR]), 2.0 * HOUR).unwrap();
        let sizes: Vec<_> = j.sessions.iter().map(|s| s.events.len()).collect();
        assert_eq!(sizes, [2, 1]);

        // a gap of exactly T stays within the session
        let j = sessionize("u", at(&[0.0, 2.0 * HOUR]), 2.0 * HOUR).unwrap();
        assert_eq!(j.sessions.len(), 1);
    }

    #[test]
    fn sessionize_errors() {
        assert!(matches!(
            sessionize("u", at(&[10.0, 5.0]), HOUR),
            Err(TraceError::Data(_))
        ));
        assert!(sessionize("u", at(&[-1.0]), HOUR).is_err());
        assert!(sessionize("u", at(&[1.0]), 0.0).is_err());
    }

    #[test]
    fn split_three_events_is_forced() {
        let j = sessionize("u", at(&[0.0, 1.0, 2.0]), HOUR).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        for _ in 0..20 {
            let ex = split_journey(&j, &mut rng, 2, 1).unwrap();
            assert_eq!(ex.split_index, 2);
            assert_eq!(ex.remaining_in_session, 1);
        }
        let short = sessionize("u", at(&[0.0, 1.0]), HOUR).unwrap();
        assert!(split_journey(&short, &mut rng, 2, 1).is_none());
    }

    #[test]
    fn split_reconstructs_original() {
        let j = sessionize("u", at(&[0.0, 10.0, 5000.0, 5010.0, 20000.0]), HOUR).unwrap();
        for idx in 1..=5 {
            let ex = SplitExample::at(&j, idx).unwrap();
            let mut all = ex.input.flatten();
            all.extend(ex.future.clone());
            assert_eq!(all, j.flatten());
            assert_eq!(ex.input.num_events(), idx);
        }
        let ex = SplitExample::at(&j, 3).unwrap();
        assert_eq!(ex.remaining_in_session, 1);
        assert_eq!(ex.input.sessions.len(), 2);
    }

    #[test]
    fn empty_future_labels() {
        let cat = PageCatalog::travel_default();
        let j = sessionize("u", at(&[0.0, 1.0]), HOUR).unwrap();
        let ex = SplitExample::at(&j, 2).unwrap();
        let y = compute_labels(&ex, &cat, &LabelConfig::default());
        assert_eq!(
            y.as_array(),
            [false, true, false, false, false, false, false, false]
        );
    }

    #[test]
    fn crop_keeps_suffix() {
        let j = sessionize("u", at(&(0..150).map(f64::from).collect::<Vec<_>>()), HOUR).unwrap();
        let c = crop_recent(&j, 100);
        assert_eq!(c.len(), 100);
        assert_eq!(c[0].timestamp, 50.0);
        assert_eq!(crop_recent(&j, 1000).len(), 150);
    }

    #[test]
    fn task_names_parse() {
        for t in Task::ALL {
            assert_eq!(Task::parse(&t.name().to_lowercase()).unwrap(), t);
        }
        assert!(Task::parse("xyz").is_err());
    }
}
