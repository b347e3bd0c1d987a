//! Prompt rendering and the three-part chain-of-thought grammar.
//!
//! Canonical reasoning output:
//!
//! ```text
//! Imagination: {U}. Filtered observation: {V} matches the imagination. Action: {a}.
//! ```
//!
//! See `docs/grammar.md` for the EBNF of prompts and outputs.

use std::fmt;
use std::str::FromStr;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

/// How much of the navigation history goes into the prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HistoryMode {
    None,
    All,
    #[default]
    Last,
}

impl HistoryMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::All => "all",
            Self::Last => "last",
        }
    }
}

impl fmt::Display for HistoryMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for HistoryMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(Self::None),
            "all" => Ok(Self::All),
            "last" => Ok(Self::Last),
            other => Err(format!("unknown history mode '{other}' (none|all|last)")),
        }
    }
}

/// Renders the history body that follows `History: `.
///
/// `steps` holds the descriptions of the options chosen so far, oldest
/// first. Steps are numbered from 1; mode `last` keeps the final step's
/// original number. Multiple steps are newline-separated.
pub fn render_history<S: AsRef<str>>(steps: &[S], mode: HistoryMode) -> String {
    let numbered = |k: usize, s: &S| format!("Step {}. {}", k + 1, s.as_ref());
    match (mode, steps) {
        (HistoryMode::None, _) | (_, []) => "none".to_owned(),
        (HistoryMode::Last, [.., last]) => numbered(steps.len() - 1, last),
        (HistoryMode::All, _) => steps
            .iter()
            .enumerate()
            .map(|(k, s)| numbered(k, s))
            .collect::<Vec<_>>()
            .join("\n"),
    }
}

/// The navigation input of one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NavInput {
    pub instruction: String,
    /// Rendered option list, without brackets.
    pub observation: String,
    /// Rendered history body.
    pub history: String,
}

impl NavInput {
    pub fn render(&self) -> String {
        format!(
            "Instruction: {} Observation: [{}]. History: {}.",
            self.instruction, self.observation, self.history
        )
    }
}

/// A worked example placed ahead of the query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InContextExample {
    /// Navigation input, rendered as after `Input: `.
    pub input_block: String,
    /// Reasoning output, rendered as after `Output: `.
    pub output_block: String,
}

impl Default for InContextExample {
    fn default() -> Self {
        Self {
            input_block: "Instruction: Walk towards the mirror and walk through the open door. \
                Observation: [A. stop,  B. go forward to <a bedroom with a bed>, C. turn right to \
                <an open door leading to a hallway>]. History: Step 1. go forward to <a wall with \
                a mirror>."
                .to_owned(),
            output_block:
                "Imagination: open door. Filtered observation: C matches the imagination. Action: C."
                    .to_owned(),
        }
    }
}

/// Example block, then the query input, then the open `Output:` slot.
pub fn render_prompt(example: &InContextExample, nav: &NavInput) -> String {
    format!(
        "Input: {}\nOutput: {}\nInput: {}\nOutput:",
        example.input_block,
        example.output_block,
        nav.render()
    )
}

/// Parsed reasoning: imagination `U`, filtered option `V`, action `a`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoTOutput {
    /// Empty when the model omitted the imagination clause.
    pub imagination: String,
    pub filtered: char,
    pub action: char,
}

impl CoTOutput {
    pub fn new(imagination: impl Into<String>, filtered: char, action: char) -> Self {
        Self {
            imagination: imagination.into(),
            filtered,
            action,
        }
    }

    /// Whether `format_cot` followed by `parse_cot` reproduces this value.
    pub fn is_canonical(&self) -> bool {
        let u = self.imagination.as_str();
        !u.is_empty()
            && u.trim() == u
            && !u.ends_with('.')
            && !u.chars().any(char::is_control)
            && !IMAGINATION.is_match(u)
            && !FILTERED.is_match(u)
            && !ACTION.is_match(u)
            && self.filtered.is_ascii_uppercase()
            && self.action.is_ascii_uppercase()
    }
}

pub fn imagination_clause(imagination: &str) -> String {
    format!("Imagination: {imagination}.")
}

pub fn filter_clause(option: char) -> String {
    format!("Filtered observation: {option} matches the imagination.")
}

pub fn action_clause(option: char) -> String {
    format!("Action: {option}.")
}

pub fn format_cot(c: &CoTOutput) -> String {
    format!(
        "{} {} {}",
        imagination_clause(&c.imagination),
        filter_clause(c.filtered),
        action_clause(c.action)
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParseMode {
    /// Exact canonical grammar; used to validate labels and exports.
    Strict,
    /// Tolerates keyword case, stray whitespace, missing periods and a
    /// missing filter clause; used for live inference.
    #[default]
    Lenient,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed output ({reason}): {raw:?}")]
pub struct MalformedOutput {
    pub reason: String,
    pub raw: String,
}

static IMAGINATION: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\bimagination\s*:").expect("valid regex"));
static FILTERED: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)\bfiltered\s+observation\s*:\s*[\[(]?([a-z])\b").expect("valid regex")
});
static ACTION: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\baction\s*:\s*[\[(]?([a-z])\b").expect("valid regex"));
static STRICT: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"^Imagination: (.+)\. Filtered observation: ([A-Z]) matches the imagination\. Action: ([A-Z])\.$",
    )
    .expect("valid regex")
});

pub fn parse_cot(raw: &str, valid: &[char], mode: ParseMode) -> Result<CoTOutput, MalformedOutput> {
    let fail = |reason: String| MalformedOutput {
        reason,
        raw: raw.to_owned(),
    };
    let check = |letter: char, what: &str| {
        if valid.contains(&letter) {
            Ok(letter)
        } else {
            Err(fail(format!("{what} option {letter} is not offered")))
        }
    };
    let letter = |m: regex::Match<'_>| m.as_str().chars().next().map(|c| c.to_ascii_uppercase());

    match mode {
        ParseMode::Strict => {
            let caps = STRICT
                .captures(raw.trim())
                .ok_or_else(|| fail("does not match the canonical grammar".into()))?;
            let imagination = caps[1].to_owned();
            let parsed = CoTOutput {
                filtered: check(caps[2].chars().next().expect("one letter"), "filtered")?,
                action: check(caps[3].chars().next().expect("one letter"), "action")?,
                imagination,
            };
            if !parsed.is_canonical() {
                return Err(fail("imagination is not canonical".into()));
            }
            Ok(parsed)
        }
        ParseMode::Lenient => {
            let text = raw.trim();
            let action_caps = ACTION
                .captures(text)
                .ok_or_else(|| fail("no action clause".into()))?;
            let action_match = action_caps.get(1).expect("group 1");
            let action = check(letter(action_match).expect("one letter"), "action")?;

            let filter_caps = FILTERED.captures(text);
            let filtered = filter_caps
                .as_ref()
                .and_then(|c| letter(c.get(1).expect("group 1")))
                .filter(|l| valid.contains(l))
                .unwrap_or(action);

            let imagination = match IMAGINATION.find(text) {
                Some(head) => {
                    let start = head.end();
                    let mut end = text.len();
                    for boundary in [
                        filter_caps
                            .as_ref()
                            .map(|c| c.get(0).expect("group 0").start()),
                        Some(action_caps.get(0).expect("group 0").start()),
                    ]
                    .into_iter()
                    .flatten()
                    {
                        if boundary >= start {
                            end = end.min(boundary);
                        }
                    }
                    let body = text[start..end].trim();
                    body.strip_suffix('.').unwrap_or(body).trim_end().to_owned()
                }
                None => String::new(),
            };
            Ok(CoTOutput {
                imagination,
                filtered,
                action,
            })
        }
    }
}
