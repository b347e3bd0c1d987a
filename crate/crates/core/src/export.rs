//! Instruction-tuning datasets built from ground-truth labels.
//!
//! Pretraining splits the reasoning into its three single-step tasks
//! (imagination, filtered observation, action); finetuning targets the
//! whole reasoning string. Every record's input is the same navigation
//! prompt the agent sees at inference, with history taken from the expert
//! trajectory.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::LazyLock;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::env::{self, EnvError, Episode, World};
use crate::labels::{expert_rollout, CoTLabel, ExpertStep, LabelError};
use crate::prompting::{
    action_clause, filter_clause, format_cot, imagination_clause, parse_cot, render_prompt,
    CoTOutput, HistoryMode, InContextExample, NavInput, ParseMode,
};
use crate::vision::DirectionConfig;

/// Characters per token used to turn token limits into character budgets.
pub const CHARS_PER_TOKEN: usize = 4;
/// Training-time token limit.
pub const TRAIN_TOKEN_LIMIT: usize = 400;

#[derive(Debug, thiserror::Error)]
pub enum ExportError {
    #[error("no label for episode '{episode}' step {t}")]
    LabelGap { episode: String, t: usize },
    #[error("label for episode '{episode}' step {t} says {label} but the expert takes {expert}")]
    LabelMismatch {
        episode: String,
        t: usize,
        label: char,
        expert: char,
    },
    #[error("pool has {pool} episodes, cannot sample {requested}")]
    PoolTooSmall { pool: usize, requested: usize },
    #[error("record {index} ({episode} step {t}, {task}) failed validation: {reason}")]
    Validation {
        index: usize,
        episode: String,
        t: usize,
        task: Task,
        reason: String,
    },
    #[error(transparent)]
    Label(#[from] LabelError),
    #[error(transparent)]
    Env(#[from] EnvError),
}

pub type Result<T, E = ExportError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Task {
    /// Future imagination.
    #[serde(rename = "FI")]
    Fi,
    /// Visual information filter.
    #[serde(rename = "VIF")]
    Vif,
    /// Action prediction.
    #[serde(rename = "AP")]
    Ap,
    /// Full reasoning.
    #[serde(rename = "COT")]
    Cot,
}

impl Task {
    pub const PRETRAIN: [Task; 3] = [Task::Fi, Task::Vif, Task::Ap];

    pub fn target(self, out: &CoTOutput) -> String {
        match self {
            Task::Fi => imagination_clause(&out.imagination),
            Task::Vif => filter_clause(out.filtered),
            Task::Ap => action_clause(out.action),
            Task::Cot => format_cot(out),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Fi => "FI",
            Task::Vif => "VIF",
            Task::Ap => "AP",
            Task::Cot => "COT",
        })
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "fi" => Ok(Task::Fi),
            "vif" => Ok(Task::Vif),
            "ap" => Ok(Task::Ap),
            "cot" => Ok(Task::Cot),
            other => Err(format!("unknown task '{other}' (fi|vif|ap|cot)")),
        }
    }
}

/// One JSON Lines row: `{"input","output","task","episode","t"}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub input: String,
    pub output: String,
    pub task: Task,
    pub episode: String,
    pub t: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExportOptions {
    pub history_mode: HistoryMode,
    /// Prefix each input with the in-context example.
    pub include_example: bool,
    /// Maximum input length in characters; `None` disables the check.
    pub char_budget: Option<usize>,
    pub directions: DirectionConfig,
    pub example: InContextExample,
}

impl Default for ExportOptions {
    fn default() -> Self {
        Self {
            history_mode: HistoryMode::Last,
            include_example: true,
            char_budget: Some(TRAIN_TOKEN_LIMIT * CHARS_PER_TOKEN),
            directions: DirectionConfig::default(),
            example: InContextExample::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExportReport {
    pub records: Vec<TrainingRecord>,
    /// Steps whose history was shortened to fit the budget.
    pub truncated: Vec<(String, usize)>,
    /// Steps left out because they exceed the budget even without history.
    pub over_budget: Vec<(String, usize)>,
}

/// History body with steps numbered from `first + 1`.
fn history_window(steps: &[&str], first: usize) -> String {
    if first >= steps.len() {
        return "none".to_owned();
    }
    steps[first..]
        .iter()
        .enumerate()
        .map(|(k, s)| format!("Step {}. {s}", first + k + 1))
        .collect::<Vec<_>>()
        .join("\n")
}

fn render_input(
    episode: &Episode,
    step: &ExpertStep,
    history: String,
    opts: &ExportOptions,
) -> String {
    let nav = NavInput {
        instruction: episode.instruction.clone(),
        observation: step.options.render(),
        history,
    };
    if opts.include_example {
        render_prompt(&opts.example, &nav)
    } else {
        format!("Input: {}\nOutput:", nav.render())
    }
}

enum Fitted {
    Input { text: String, truncated: bool },
    OverBudget,
}

/// Renders the step input, dropping the oldest history until it fits.
fn fit_input(episode: &Episode, step: &ExpertStep, prior: &[&str], opts: &ExportOptions) -> Fitted {
    let first = match opts.history_mode {
        HistoryMode::None => prior.len(),
        HistoryMode::Last => prior.len().saturating_sub(1),
        HistoryMode::All => 0,
    };
    for drop_from in first..=prior.len() {
        let text = render_input(episode, step, history_window(prior, drop_from), opts);
        if opts.char_budget.is_none_or(|b| text.chars().count() <= b) {
            return Fitted::Input {
                text,
                truncated: drop_from > first,
            };
        }
    }
    Fitted::OverBudget
}

fn build_records(
    labels: &[CoTLabel],
    episodes: &[Episode],
    world: &World,
    tasks: &[Task],
    opts: &ExportOptions,
) -> Result<ExportReport> {
    let by_step: HashMap<(&str, usize), &CoTLabel> = labels
        .iter()
        .map(|l| ((l.episode.as_str(), l.t), l))
        .collect();
    let mut ordered: Vec<&Episode> = episodes.iter().collect();
    ordered.sort_by(|a, b| a.id.cmp(&b.id));

    let mut report = ExportReport::default();
    for episode in ordered {
        let steps = expert_rollout(world, episode, &opts.directions)?;
        for step in &steps {
            let label = by_step.get(&(episode.id.as_str(), step.t)).ok_or_else(|| {
                ExportError::LabelGap {
                    episode: episode.id.clone(),
                    t: step.t,
                }
            })?;
            if label.action != step.gt_action {
                return Err(ExportError::LabelMismatch {
                    episode: episode.id.clone(),
                    t: step.t,
                    label: label.action,
                    expert: step.gt_action,
                });
            }
            let prior: Vec<&str> = steps[..step.t]
                .iter()
                .map(ExpertStep::chosen_text)
                .collect();
            let input = match fit_input(episode, step, &prior, opts) {
                Fitted::Input { text, truncated } => {
                    if truncated {
                        report.truncated.push((episode.id.clone(), step.t));
                    }
                    text
                }
                Fitted::OverBudget => {
                    tracing::warn!(episode = %episode.id, t = step.t, "input over budget");
                    report.over_budget.push((episode.id.clone(), step.t));
                    continue;
                }
            };
            let out = label.output();
            for &task in tasks {
                report.records.push(TrainingRecord {
                    input: input.clone(),
                    output: task.target(&out),
                    task,
                    episode: episode.id.clone(),
                    t: step.t,
                });
            }
        }
    }
    Ok(report)
}

/// Single-task pretraining records, one per ground-truth step.
pub fn export_pretrain(
    labels: &[CoTLabel],
    episodes: &[Episode],
    world: &World,
    task: Task,
    opts: &ExportOptions,
) -> Result<ExportReport> {
    build_records(labels, episodes, world, &[task], opts)
}

/// Full-reasoning records along each expert trajectory (teacher forcing).
pub fn export_finetune(
    labels: &[CoTLabel],
    episodes: &[Episode],
    world: &World,
    opts: &ExportOptions,
) -> Result<ExportReport> {
    build_records(labels, episodes, world, &[Task::Cot], opts)
}

static QUERY_OPTIONS: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?:^|, {1,2})([A-Z])\. ").expect("valid regex"));
static FI_TARGET: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^Imagination: (.+)\.$").expect("valid regex"));
static VIF_TARGET: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^Filtered observation: ([A-Z]) matches the imagination\.$").expect("valid regex")
});
static AP_TARGET: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^Action: ([A-Z])\.$").expect("valid regex"));

/// Option letters offered in the query (last) observation of a prompt.
pub fn query_options(input: &str) -> Vec<char> {
    let Some(start) = input.rfind("Observation: [") else {
        return Vec::new();
    };
    let rest = &input[start + "Observation: [".len()..];
    let end = rest.rfind("]. History:").unwrap_or(rest.len());
    QUERY_OPTIONS
        .captures_iter(&rest[..end])
        .filter_map(|c| c[1].chars().next())
        .collect()
}

fn check_record(r: &TrainingRecord) -> std::result::Result<(), String> {
    let valid = query_options(&r.input);
    if valid.is_empty() {
        return Err("input has no observation options".into());
    }
    let letter_ok = |re: &Regex| -> std::result::Result<(), String> {
        let caps = re
            .captures(&r.output)
            .ok_or_else(|| format!("output {:?} does not match the {} format", r.output, r.task))?;
        let letter = caps[1].chars().next().expect("one letter");
        if valid.contains(&letter) {
            Ok(())
        } else {
            Err(format!("option {letter} is not offered"))
        }
    };
    match r.task {
        Task::Cot => parse_cot(&r.output, &valid, ParseMode::Strict)
            .map(|_| ())
            .map_err(|e| e.reason),
        Task::Fi => {
            let caps = FI_TARGET
                .captures(&r.output)
                .ok_or_else(|| format!("output {:?} does not match the FI format", r.output))?;
            if CoTOutput::new(&caps[1], 'A', 'A').is_canonical() {
                Ok(())
            } else {
                Err("imagination is not canonical".into())
            }
        }
        Task::Vif => letter_ok(&VIF_TARGET),
        Task::Ap => letter_ok(&AP_TARGET),
    }
}

/// Checks every record's output against its task grammar and options.
pub fn validate_records(records: &[TrainingRecord]) -> Result<()> {
    for (index, r) in records.iter().enumerate() {
        check_record(r).map_err(|reason| ExportError::Validation {
            index,
            episode: r.episode.clone(),
            t: r.t,
            task: r.task,
            reason,
        })?;
    }
    Ok(())
}

/// Uniform sample of `n` episodes without replacement, returned in pool order.
pub fn sample_augmentation(pool: &[Episode], n: usize, seed: u64) -> Result<Vec<Episode>> {
    if n > pool.len() {
        return Err(ExportError::PoolTooSmall {
            pool: pool.len(),
            requested: n,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, pool.len(), n).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| pool[i].clone()).collect())
}

pub fn write_records(path: &Path, records: &[TrainingRecord]) -> Result<()> {
    Ok(env::write_jsonl(path, records)?)
}

pub fn load_records(path: &Path) -> Result<Vec<TrainingRecord>> {
    Ok(env::read_jsonl(path)?)
}
