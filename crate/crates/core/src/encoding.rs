//! Fixed-shape model inputs built from cropped journeys.
//!
//! Row convention: rows run oldest → newest, the most recent retained event
//! sits in row `true_length − 1`, and rows `true_length..L` are padding.
//! Event position `m` (1 = most recent) and session position `n`
//! (1 = most recent session) are 1-based; 0 is reserved for padding.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::clickstream::{Journey, PageViewEvent};
use crate::error::{Result, TraceError};

pub const PAD_INDEX: usize = 0;
pub const UNK_INDEX: usize = 1;
/// Lower bound applied to fitted standard deviations.
pub const STD_FLOOR: f64 = 1e-8;
pub const DEFAULT_MAX_LEN: usize = 100;

/// Names of the categorical attributes, in column order.
pub const CAT_ATTRIBUTES: [&str; 4] = ["page_name", "device_type", "platform", "locale"];

fn attribute(e: &PageViewEvent, k: usize) -> &str {
    match k {
        0 => &e.page_name,
        1 => &e.device_type,
        2 => &e.platform,
        _ => &e.locale,
    }
}

/// Token → index map with reserved padding (0) and unknown (1) slots.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct TokenMap {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for TokenMap {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i + 2))
            .collect();
        TokenMap { tokens, index }
    }
}

impl From<TokenMap> for Vec<String> {
    fn from(m: TokenMap) -> Self {
        m.tokens
    }
}

impl TokenMap {
    pub fn index(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_INDEX)
    }

    /// Table size including the reserved rows.
    pub fn size(&self) -> usize {
        self.tokens.len() + 2
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        index.checked_sub(2).and_then(|i| self.tokens.get(i)).map(String::as_str)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VocabMaps {
    pub attributes: Vec<TokenMap>,
}

impl VocabMaps {
    /// Sorted token sets from the training journeys, so rebuilding is stable.
    pub fn build<'a>(journeys: impl IntoIterator<Item = &'a Journey>) -> Result<Self> {
        let mut sets: Vec<BTreeSet<String>> = vec![BTreeSet::new(); CAT_ATTRIBUTES.len()];
        let mut any = false;
        for j in journeys {
            for e in j.events() {
                any = true;
                for (k, set) in sets.iter_mut().enumerate() {
                    set.insert(attribute(e, k).to_string());
                }
            }
        }
        if !any {
            return Err(TraceError::data("cannot build vocabularies from an empty corpus"));
        }
        Ok(VocabMaps {
            attributes: sets
                .into_iter()
                .map(|s| TokenMap::from(s.into_iter().collect::<Vec<_>>()))
                .collect(),
        })
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.attributes.iter().map(TokenMap::size).collect()
    }

    pub fn pages(&self) -> &TokenMap {
        &self.attributes[0]
    }
}

/// Which timestamp-derived signals reach the model.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TimeFeatures {
    /// Gap, elapsed time and session index.
    #[default]
    All,
    /// Gap and elapsed time only; no session information at all.
    NoSession,
    /// Event order only.
    NoTime,
}

impl TimeFeatures {
    pub fn n_numeric(self) -> usize {
        match self {
            TimeFeatures::All => 3,
            TimeFeatures::NoSession => 2,
            TimeFeatures::NoTime => 0,
        }
    }

    pub fn uses_session(self) -> bool {
        self == TimeFeatures::All
    }

    pub fn numeric_names(self) -> &'static [&'static str] {
        &["log_gap", "log_elapsed", "session_index"][..self.n_numeric()]
    }
}

/// Raw (pre-standardization) numeric features of the cropped events:
/// `[log1p(gap), log1p(elapsed), session rank]` per event, oldest first.
fn raw_numeric(journey: &Journey, max_len: usize) -> Vec<[f64; 3]> {
    let all: Vec<(usize, &PageViewEvent)> = journey.events_with_session_rank().collect();
    let kept = &all[all.len().saturating_sub(max_len)..];
    let latest = kept.last().map_or(0.0, |(_, e)| e.timestamp);
    kept.iter()
        .enumerate()
        .map(|(i, (n, e))| {
            let gap = if i == 0 { 0.0 } else { e.timestamp - kept[i - 1].1.timestamp };
            [gap.ln_1p(), (latest - e.timestamp).ln_1p(), *n as f64]
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    pub mean: [f64; 3],
    pub std: [f64; 3],
    #[serde(skip)]
    pub warnings: Vec<String>,
}

impl FeatureScaler {
    /// Fits on every retained event of the training journeys.
    pub fn fit<'a>(journeys: impl IntoIterator<Item = &'a Journey>, max_len: usize) -> Result<Self> {
        let rows: Vec<[f64; 3]> = journeys
            .into_iter()
            .flat_map(|j| raw_numeric(j, max_len))
            .collect();
        if rows.len() < 2 {
            return Err(TraceError::data("scaler needs at least two events"));
        }
        let n = rows.len() as f64;
        let mut mean = [0.0; 3];
        let mut std = [0.0; 3];
        let mut warnings = Vec::new();
        for k in 0..3 {
            mean[k] = rows.iter().map(|r| r[k]).sum::<f64>() / n;
            let var = rows.iter().map(|r| (r[k] - mean[k]).powi(2)).sum::<f64>() / n;
            std[k] = var.sqrt();
            if std[k] < STD_FLOOR {
                warnings.push(format!(
                    "feature `{}` is constant; std floored at {STD_FLOOR}",
                    TimeFeatures::All.numeric_names()[k]
                ));
                std[k] = STD_FLOOR;
            }
        }
        Ok(FeatureScaler { mean, std, warnings })
    }

    pub fn apply(&self, raw: &[f64; 3]) -> [f64; 3] {
        std::array::from_fn(|k| (raw[k] - self.mean[k]) / self.std[k])
    }
}

/// One journey as index/feature matrices of `max_len` rows.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedJourney {
    pub max_len: usize,
    /// `[max_len × CAT_ATTRIBUTES.len()]`, row-major.
    pub cat_indices: Vec<usize>,
    pub n_numeric: usize,
    /// `[max_len × n_numeric]`, row-major.
    pub num_features: Vec<f64>,
    pub event_pos: Vec<usize>,
    pub session_pos: Vec<usize>,
    pub mask: Vec<bool>,
    pub true_length: usize,
}

impl EncodedJourney {
    pub fn n_cat(&self) -> usize {
        CAT_ATTRIBUTES.len()
    }

    pub fn cat_row(&self, r: usize) -> &[usize] {
        let c = self.n_cat();
        &self.cat_indices[r * c..(r + 1) * c]
    }

    pub fn num_row(&self, r: usize) -> &[f64] {
        &self.num_features[r * self.n_numeric..(r + 1) * self.n_numeric]
    }

    /// Page tokens of the real rows, oldest first.
    pub fn page_tokens(&self) -> Vec<usize> {
        (0..self.true_length).map(|r| self.cat_row(r)[0]).collect()
    }
}

/// Vocabularies, scaler and crop length: everything needed to encode a journey.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JourneyEncoder {
    pub vocabs: VocabMaps,
    pub scaler: FeatureScaler,
    pub max_len: usize,
    #[serde(default)]
    pub time_features: TimeFeatures,
}

impl JourneyEncoder {
    pub fn fit<'a, I>(train: I, max_len: usize, time_features: TimeFeatures) -> Result<Self>
    where
        I: IntoIterator<Item = &'a Journey> + Clone,
    {
        if max_len == 0 {
            return Err(TraceError::config("max_len must be at least 1"));
        }
        Ok(JourneyEncoder {
            vocabs: VocabMaps::build(train.clone())?,
            scaler: FeatureScaler::fit(train, max_len)?,
            max_len,
            time_features,
        })
    }

    pub fn n_numeric(&self) -> usize {
        self.time_features.n_numeric()
    }

    pub fn encode(&self, journey: &Journey) -> Result<EncodedJourney> {
        encode_journey(journey, self)
    }

    pub fn with_max_len(&self, max_len: usize) -> Self {
        JourneyEncoder {
            max_len,
            ..self.clone()
        }
    }
}

pub fn encode_journey(journey: &Journey, enc: &JourneyEncoder) -> Result<EncodedJourney> {
    if journey.is_empty() {
        return Err(TraceError::data(format!(
            "journey `{}` has no events",
            journey.user_id
        )));
    }
    let l = enc.max_len;
    let n_cat = CAT_ATTRIBUTES.len();
    let n_num = enc.n_numeric();
    let uses_session = enc.time_features.uses_session();

    let all: Vec<(usize, &PageViewEvent)> = journey.events_with_session_rank().collect();
    let kept = &all[all.len().saturating_sub(l)..];
    let raw = raw_numeric(journey, l);
    let len = kept.len();

    let mut out = EncodedJourney {
        max_len: l,
        cat_indices: vec![PAD_INDEX; l * n_cat],
        n_numeric: n_num,
        num_features: vec![0.0; l * n_num],
        event_pos: vec![0; l],
        session_pos: vec![0; l],
        mask: vec![false; l],
        true_length: len,
    };
    for (r, ((session_rank, e), raw)) in kept.iter().zip(&raw).enumerate() {
        for k in 0..n_cat {
            out.cat_indices[r * n_cat + k] = enc.vocabs.attributes[k].index(attribute(e, k));
        }
        let scaled = enc.scaler.apply(raw);
        out.num_features[r * n_num..(r + 1) * n_num].copy_from_slice(&scaled[..n_num]);
        out.event_pos[r] = len - r;
        out.session_pos[r] = if uses_session { *session_rank } else { 0 };
        out.mask[r] = true;
    }
    Ok(out)
}
