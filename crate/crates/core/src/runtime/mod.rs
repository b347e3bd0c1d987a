//! Closed-loop episode execution.
//!
//! Each step builds the observation options, renders the prompt, queries the
//! backend (with one retry on malformed output), applies the action and
//! extends the history. An episode ends on the stop option, on the step
//! budget, or when the backend fails.

mod backend;

pub use backend::{
    BackendDescriptor, BackendError, Completion, HttpBackend, HttpBackendConfig, OracleBackend,
    Query, RandomBackend, ReasonerBackend, ScriptedBackend, TextCompletion,
};

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::env::{self, EnvError, Episode, Pose, Trajectory, World};
use crate::prompting::{
    parse_cot, render_history, render_prompt, CoTOutput, HistoryMode, InContextExample, NavInput,
    ParseMode,
};
use crate::util::{parallel_map, Provenance};
use crate::vision::{build_observation_set, DirectionConfig, VisionError};

#[derive(Debug, thiserror::Error)]
pub enum RuntimeError {
    #[error("episode '{episode}': environment gap: {source}")]
    EnvironmentGap {
        episode: String,
        #[source]
        source: VisionError,
    },
    #[error("episode '{episode}': {source}")]
    Env {
        episode: String,
        #[source]
        source: EnvError,
    },
    #[error("invalid run config: {0}")]
    InvalidConfig(String),
}

/// What to do when the backend's output fails to parse twice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FallbackPolicy {
    /// Take the first non-stop option (or stop if there is none).
    #[default]
    FirstNonstop,
    Stop,
}

impl fmt::Display for FallbackPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::FirstNonstop => "first_nonstop",
            Self::Stop => "stop",
        })
    }
}

impl FromStr for FallbackPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "first_nonstop" => Ok(Self::FirstNonstop),
            "stop" => Ok(Self::Stop),
            other => Err(format!("unknown fallback '{other}' (first_nonstop|stop)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub max_steps: usize,
    pub history_mode: HistoryMode,
    pub temperature: f64,
    pub seed: u64,
    pub fallback: FallbackPolicy,
    pub directions: DirectionConfig,
    pub example: InContextExample,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            max_steps: 15,
            history_mode: HistoryMode::Last,
            temperature: 0.0,
            seed: 0,
            fallback: FallbackPolicy::FirstNonstop,
            directions: DirectionConfig::default(),
            example: InContextExample::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), RuntimeError> {
        if self.max_steps == 0 {
            return Err(RuntimeError::InvalidConfig(
                "max_steps must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Settings echoed into every result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub max_steps: usize,
    pub history_mode: HistoryMode,
    pub fallback: FallbackPolicy,
    pub temperature: f64,
    pub seed: u64,
    /// Re-queries allowed after malformed output.
    pub malformed_retries: u32,
    pub backend: BackendDescriptor,
    /// Filled in by the caller that owns the configuration file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

const MALFORMED_RETRIES: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub viewpoint: String,
    pub history: String,
    pub prompt: String,
    /// Raw completions, one per request.
    pub completions: Vec<String>,
    pub parsed: Option<CoTOutput>,
    pub parse_error: Option<String>,
    pub backend_error: Option<String>,
    pub transport_retries: u32,
    pub fallback_used: bool,
    /// Option applied; absent when the backend failed.
    pub action: Option<char>,
    /// Viewpoint moved to; absent on stop or failure.
    pub moved_to: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    StopAction,
    StepBudget,
    BackendFailure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub episode: String,
    pub scan: String,
    pub trajectory: Trajectory,
    pub steps: Vec<StepRecord>,
    pub stop_reason: StopReason,
    pub run: RunMeta,
}

fn fallback_action(policy: FallbackPolicy, options: &[char]) -> char {
    match policy {
        FallbackPolicy::FirstNonstop => options.iter().copied().find(|&c| c != 'A').unwrap_or('A'),
        FallbackPolicy::Stop => 'A',
    }
}

pub fn run_episode(
    world: &World,
    episode: &Episode,
    backend: &dyn ReasonerBackend,
    cfg: &RunConfig,
) -> Result<EpisodeResult, RuntimeError> {
    cfg.validate()?;
    let env_err = |source: EnvError| RuntimeError::Env {
        episode: episode.id.clone(),
        source,
    };
    let graph = world.graph(&episode.scan).map_err(env_err)?;
    let start = episode.gt_path.first().ok_or_else(|| {
        env_err(EnvError::InvalidEpisode {
            id: episode.id.clone(),
            message: "gt_path is empty".into(),
        })
    })?;
    graph.viewpoint(start).map_err(env_err)?;

    let mut pose = episode.initial_pose();
    let mut trajectory = Trajectory::start_at(start.clone());
    let mut history: Vec<String> = Vec::new();
    let mut steps = Vec::new();
    let mut stop_reason = StopReason::StepBudget;
    let mut calls = 0;

    for t in 0..cfg.max_steps {
        let here = trajectory.last().to_owned();
        let options = build_observation_set(
            graph,
            &world.captions,
            &episode.scan,
            &here,
            &pose,
            &cfg.directions,
        )
        .map_err(|source| RuntimeError::EnvironmentGap {
            episode: episode.id.clone(),
            source,
        })?;
        let valid = options.labels();
        let history_text = render_history(&history, cfg.history_mode);
        let prompt = render_prompt(
            &cfg.example,
            &NavInput {
                instruction: episode.instruction.clone(),
                observation: options.render(),
                history: history_text.clone(),
            },
        );

        let mut record = StepRecord {
            t,
            viewpoint: here.clone(),
            history: history_text,
            prompt,
            completions: Vec::new(),
            parsed: None,
            parse_error: None,
            backend_error: None,
            transport_retries: 0,
            fallback_used: false,
            action: None,
            moved_to: None,
        };

        for attempt in 0..=MALFORMED_RETRIES {
            let query = Query {
                episode: &episode.id,
                t,
                attempt,
                call_index: calls,
                prompt: &record.prompt,
                options: &valid,
            };
            calls += 1;
            match backend.generate(&query) {
                Err(e) => {
                    tracing::warn!(episode = %episode.id, t, error = %e, "backend failure");
                    record.backend_error = Some(e.to_string());
                    break;
                }
                Ok(completion) => {
                    record.transport_retries += completion.retries;
                    let parsed = parse_cot(&completion.text, &valid, ParseMode::Lenient);
                    record.completions.push(completion.text);
                    match parsed {
                        Ok(p) => {
                            record.parsed = Some(p);
                            record.parse_error = None;
                            break;
                        }
                        Err(e) => record.parse_error = Some(e.reason),
                    }
                }
            }
        }

        if record.backend_error.is_some() {
            steps.push(record);
            stop_reason = StopReason::BackendFailure;
            break;
        }
        let action = match &record.parsed {
            Some(p) => p.action,
            None => {
                record.fallback_used = true;
                fallback_action(cfg.fallback, &valid)
            }
        };
        record.action = Some(action);
        let chosen = options
            .get(action)
            .expect("action validated against options");
        match &chosen.target {
            None => {
                steps.push(record);
                trajectory.stopped = true;
                stop_reason = StopReason::StopAction;
                break;
            }
            Some(next) => {
                pose = Pose::after_move(
                    graph.position(&here).map_err(env_err)?,
                    graph.position(next).map_err(env_err)?,
                );
                history.push(chosen.text.clone());
                trajectory.visited.push(next.clone());
                record.moved_to = Some(next.clone());
                steps.push(record);
            }
        }
    }

    Ok(EpisodeResult {
        episode: episode.id.clone(),
        scan: episode.scan.clone(),
        trajectory,
        steps,
        stop_reason,
        run: RunMeta {
            max_steps: cfg.max_steps,
            history_mode: cfg.history_mode,
            fallback: cfg.fallback,
            temperature: cfg.temperature,
            seed: cfg.seed,
            malformed_retries: MALFORMED_RETRIES,
            backend: backend.descriptor(),
            provenance: None,
        },
    })
}

/// Runs episodes on up to `parallelism` threads. Results come back ordered
/// by episode id; a failing episode occupies its slot without stopping the
/// rest.
pub fn run_batch(
    world: &World,
    episodes: &[Episode],
    backend: &dyn ReasonerBackend,
    cfg: &RunConfig,
    parallelism: usize,
) -> Result<Vec<Result<EpisodeResult, RuntimeError>>, RuntimeError> {
    if parallelism == 0 {
        return Err(RuntimeError::InvalidConfig(
            "parallelism must be at least 1".into(),
        ));
    }
    cfg.validate()?;
    let mut ordered: Vec<&Episode> = episodes.iter().collect();
    ordered.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(parallel_map(&ordered, parallelism, |ep| {
        run_episode(world, ep, backend, cfg)
    }))
}

pub fn write_results(path: &Path, results: &[EpisodeResult]) -> Result<(), EnvError> {
    env::write_jsonl(path, results)
}

pub fn load_results(path: &Path) -> Result<Vec<EpisodeResult>, EnvError> {
    env::read_jsonl(path)
}
