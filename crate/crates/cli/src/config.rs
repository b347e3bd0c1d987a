//! TOML configuration with per-command flag overrides.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use navcot::export::ExportOptions;
use navcot::http::HttpConfig;
use navcot::prompting::{HistoryMode, InContextExample};
use navcot::runtime::{FallbackPolicy, HttpBackendConfig, RunConfig};
use navcot::util::{config_hash, Provenance};
use navcot::vision::DirectionConfig;
use serde::{Deserialize, Serialize};

pub const TOKEN_ENV: &str = "NAVCOT_API_TOKEN";

pub fn version() -> String {
    format!(
        "navcot {} ({})",
        env!("CARGO_PKG_VERSION"),
        env!("NAVCOT_GIT_REV")
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub seed: u64,
    pub out: PathBuf,
    pub paths: Paths,
    pub directions: DirectionConfig,
    pub example: InContextExample,
    pub gen: GenSection,
    pub label: LabelSection,
    pub export: ExportSection,
    pub run: RunSection,
    /// Chat-completion endpoint for `--backend http`.
    pub backend: HttpBackendConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("out"),
            paths: Paths::default(),
            directions: DirectionConfig::default(),
            example: InContextExample::default(),
            gen: GenSection::default(),
            label: LabelSection::default(),
            export: ExportSection::default(),
            run: RunSection::default(),
            backend: HttpBackendConfig::default(),
        }
    }
}

/// Artifact locations; unset entries default to files under `out`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    /// Directory of `<scan>.json` graphs, or a single graph file.
    pub graphs: Option<PathBuf>,
    pub captions: Option<PathBuf>,
    pub episodes: Option<PathBuf>,
    pub landmarks: Option<PathBuf>,
    pub similarity: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub traces: Option<PathBuf>,
    /// JSON Lines of completion strings for `--backend scripted`.
    pub script: Option<PathBuf>,
}

/// Fully resolved artifact paths.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub out: PathBuf,
    pub graphs: PathBuf,
    pub captions: PathBuf,
    pub episodes: PathBuf,
    pub landmarks: PathBuf,
    pub similarity: PathBuf,
    pub labels: PathBuf,
    pub traces: PathBuf,
    pub script: PathBuf,
}

impl Resolved {
    pub fn dataset(&self, task: navcot::export::Task) -> PathBuf {
        self.out
            .join(format!("dataset_{}.jsonl", task.to_string().to_lowercase()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenSection {
    pub n_viewpoints: usize,
    pub branching: usize,
    pub n_episodes: usize,
    pub max_path_moves: usize,
}

impl Default for GenSection {
    fn default() -> Self {
        Self {
            n_viewpoints: 36,
            branching: 3,
            n_episodes: 50,
            max_path_moves: 6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilaritySource {
    /// Precomputed JSON Lines table at `paths.similarity`.
    #[default]
    Table,
    /// Caption contains the landmark text.
    CaptionMatch,
    /// Remote scorer at `label.similarity_endpoint`.
    Endpoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LabelSection {
    pub similarity: SimilaritySource,
    pub similarity_endpoint: HttpConfig,
    /// Text-completion endpoint for landmark extraction; an empty url means
    /// every instruction must already be in the landmark cache.
    pub extraction: HttpBackendConfig,
    pub parallelism: usize,
}

impl Default for LabelSection {
    fn default() -> Self {
        Self {
            similarity: SimilaritySource::Table,
            similarity_endpoint: HttpConfig::default(),
            extraction: HttpBackendConfig::default(),
            parallelism: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExportSection {
    pub history_mode: HistoryMode,
    pub include_example: bool,
    /// Input character budget; 0 disables it.
    pub char_budget: usize,
    pub aug_n: Option<usize>,
    pub aug_seed: Option<u64>,
}

impl Default for ExportSection {
    fn default() -> Self {
        let opts = ExportOptions::default();
        Self {
            history_mode: opts.history_mode,
            include_example: opts.include_example,
            char_budget: opts.char_budget.unwrap_or(0),
            aug_n: None,
            aug_seed: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Http,
    #[default]
    Oracle,
    Scripted,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunSection {
    pub backend: BackendKind,
    pub parallelism: usize,
    pub max_steps: usize,
    pub history_mode: HistoryMode,
    pub temperature: f64,
    pub fallback: FallbackPolicy,
}

impl Default for RunSection {
    fn default() -> Self {
        let rc = RunConfig::default();
        Self {
            backend: BackendKind::Oracle,
            parallelism: 1,
            max_steps: rc.max_steps,
            history_mode: rc.history_mode,
            temperature: rc.temperature,
            fallback: rc.fallback,
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn provenance(&self) -> Provenance {
        Provenance {
            version: version(),
            config_hash: config_hash(self),
        }
    }

    pub fn resolve(&self) -> Resolved {
        let out = self.out.clone();
        let pick =
            |p: &Option<PathBuf>, default: &str| p.clone().unwrap_or_else(|| out.join(default));
        Resolved {
            graphs: pick(&self.paths.graphs, "graphs"),
            captions: pick(&self.paths.captions, "captions.jsonl"),
            episodes: pick(&self.paths.episodes, "episodes.jsonl"),
            landmarks: pick(&self.paths.landmarks, "landmarks.jsonl"),
            similarity: pick(&self.paths.similarity, "similarity.jsonl"),
            labels: pick(&self.paths.labels, "labels.jsonl"),
            traces: pick(&self.paths.traces, "traces.jsonl"),
            script: pick(&self.paths.script, "script.jsonl"),
            out,
        }
    }

    pub fn run_config(&self) -> RunConfig {
        RunConfig {
            max_steps: self.run.max_steps,
            history_mode: self.run.history_mode,
            temperature: self.run.temperature,
            seed: self.seed,
            fallback: self.run.fallback,
            directions: self.directions,
            example: self.example.clone(),
        }
    }

    pub fn export_options(&self) -> ExportOptions {
        ExportOptions {
            history_mode: self.export.history_mode,
            include_example: self.export.include_example,
            char_budget: (self.export.char_budget > 0).then_some(self.export.char_budget),
            directions: self.directions,
            example: self.example.clone(),
        }
    }
}

/// Fails unless every listed input exists.
pub fn require_inputs(inputs: &[(&str, &Path)]) -> Result<()> {
    let missing: Vec<String> = inputs
        .iter()
        .filter(|(_, p)| !p.exists())
        .map(|(what, p)| format!("{what} ({})", p.display()))
        .collect();
    anyhow::ensure!(missing.is_empty(), "missing inputs: {}", missing.join(", "));
    Ok(())
}

pub fn api_token() -> Option<String> {
    std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty())
}
