//! Experiment orchestration: model comparisons, ablations, latency
//! benchmarks and t-SNE exports, driven by one JSON config and recorded in
//! run manifests.

pub mod latency;
pub mod pipeline;
pub mod report;
pub mod tsne;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::clickstream::Task;
use crate::dataset::file_sha256;
use crate::encoding::{TimeFeatures, DEFAULT_MAX_LEN};
use crate::error::{Result, TraceError};
use crate::probe::ProbeGrid;
use crate::synth::SplitSizes;
use crate::training::{config_hash, TrainConfig};

pub use latency::{latency_bench, BenchConfig, LatencyReport};
pub use pipeline::{
    ablation_specs, ablation_suite, bench_journey, load_trained, run_comparison, timestamp_invariance,
    tsne_sample, AblationResult, AblationRow, Comparison, Corpus, ModelSpec, Runner, Trained,
};
pub use tsne::{tsne_project, TsneConfig, TsneResult};

/// Embedding sources compared against the myopic baseline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Trace,
    StCohort,
    StAggregated,
    Lstm,
    MiniGpt,
    Myopic,
}

impl Variant {
    /// Comparison-table order.
    pub const ALL: [Variant; 6] = [
        Variant::Trace,
        Variant::StCohort,
        Variant::StAggregated,
        Variant::Lstm,
        Variant::MiniGpt,
        Variant::Myopic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Trace => "trace",
            Variant::StCohort => "st-cohort",
            Variant::StAggregated => "st-aggregated",
            Variant::Lstm => "lstm",
            Variant::MiniGpt => "mini-gpt",
            Variant::Myopic => "myopic",
        }
    }

    pub fn display(self) -> &'static str {
        match self {
            Variant::Trace => "TRACE",
            Variant::StCohort => "ST Cohort",
            Variant::StAggregated => "ST Aggregated",
            Variant::Lstm => "MT LSTM",
            Variant::MiniGpt => "Mini-GPT",
            Variant::Myopic => "Myopic",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = TraceError;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Variant::ALL.iter().map(|v| v.name()).collect();
                TraceError::config(format!("unknown variant `{s}` (expected one of {})", names.join(", ")))
            })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationConfig {
    pub trig_position: bool,
    pub encoders: Vec<usize>,
    pub time_features: Vec<TimeFeatures>,
    /// Train/val/test prefix of the base corpus used for every variant; `None` = all of it.
    pub sizes: Option<SplitSizes>,
    /// Overrides `train.epochs` for ablation variants.
    pub epochs: Option<usize>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            trig_position: true,
            encoders: vec![1, 2, 3, 4],
            time_features: vec![TimeFeatures::NoSession, TimeFeatures::NoTime],
            sizes: None,
            epochs: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Corpus directory; defaults to `<out_dir>/data`.
    pub data_dir: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub sizes: SplitSizes,
    pub max_len: usize,
    pub train: TrainConfig,
    pub probe: ProbeGrid,
    /// Tasks scored by the probes.
    pub tasks: Vec<Task>,
    pub variants: Vec<Variant>,
    /// The variant the comparison is about; must be listed in `variants`.
    pub primary: Variant,
    pub ablation: AblationConfig,
    pub bench: BenchConfig,
    pub tsne: TsneConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 7,
            data_dir: None,
            out_dir: PathBuf::from("runs"),
            sizes: SplitSizes::default(),
            max_len: DEFAULT_MAX_LEN,
            train: TrainConfig::default(),
            probe: ProbeGrid::default(),
            tasks: Task::ALL.to_vec(),
            variants: Variant::ALL.to_vec(),
            primary: Variant::Trace,
            ablation: AblationConfig::default(),
            bench: BenchConfig::default(),
            tsne: TsneConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| TraceError::config(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if !self.variants.contains(&self.primary) {
            return Err(TraceError::config(format!(
                "primary variant `{}` is not in the variant list",
                self.primary
            )));
        }
        if self.primary == Variant::Myopic {
            return Err(TraceError::config("the myopic baseline cannot be the primary variant"));
        }
        if self.tasks.is_empty() {
            return Err(TraceError::config("no probe tasks selected"));
        }
        if self.max_len == 0 {
            return Err(TraceError::config("max_len must be positive"));
        }
        if self.probe.points().is_empty() {
            return Err(TraceError::config("probe grid is empty"));
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        config_hash(&serde_json::to_value(self).expect("config serializes"))
    }

    pub fn data_dir(&self) -> PathBuf {
        self.data_dir.clone().unwrap_or_else(|| self.out_dir.join("data"))
    }

    pub fn models_dir(&self) -> PathBuf {
        self.out_dir.join("models")
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.out_dir.join("reports")
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: PathBuf,
    pub sha256: String,
}

/// Record of one command invocation: inputs, seeds and every produced file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub data_hash: Option<String>,
    pub seed: u64,
    pub checkpoints: Vec<PathBuf>,
    pub reports: Vec<PathBuf>,
    pub wall_clock_secs: f64,
    pub artifacts: Vec<Artifact>,
}

impl RunManifest {
    pub fn new(command: &str, cfg: &ExperimentConfig, data_hash: Option<String>) -> Self {
        RunManifest {
            command: command.to_string(),
            config_hash: cfg.hash(),
            data_hash,
            seed: cfg.seed,
            checkpoints: vec![],
            reports: vec![],
            wall_clock_secs: 0.0,
            artifacts: vec![],
        }
    }

    pub fn add_checkpoint(&mut self, path: impl Into<PathBuf>) {
        self.checkpoints.push(path.into());
    }

    pub fn add_report(&mut self, path: impl Into<PathBuf>) {
        self.reports.push(path.into());
    }

    /// Hashes every listed checkpoint and report and writes `manifests/<command>.json`.
    pub fn finish(mut self, out_dir: &Path, secs: f64) -> Result<PathBuf> {
        self.wall_clock_secs = secs;
        let mut files: Vec<PathBuf> = self.checkpoints.iter().chain(&self.reports).cloned().collect();
        files.sort();
        files.dedup();
        self.artifacts = files
            .into_iter()
            .map(|p| Ok(Artifact { sha256: file_sha256(&p)?, path: p }))
            .collect::<Result<_>>()?;
        let dir = out_dir.join("manifests");
        std::fs::create_dir_all(&dir)?;
        let path = dir.join(format!("{}.json", self.command));
        std::fs::write(&path, serde_json::to_string_pretty(&self)?)?;
        Ok(path)
    }
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips_and_validates() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let back: ExperimentConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
        let partial: ExperimentConfig = serde_json::from_str(r#"{"seed": 3}"#).unwrap();
        assert_eq!(partial.seed, 3);
        assert_eq!(partial.sizes, SplitSizes::default());
    }

    #[test]
    fn primary_must_be_listed() {
        let cfg = ExperimentConfig {
            variants: vec![Variant::Lstm, Variant::Myopic],
            ..ExperimentConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(TraceError::Config(_))));
    }

    #[test]
    fn variant_names_parse() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert!("gpt".parse::<Variant>().is_err());
    }
}
