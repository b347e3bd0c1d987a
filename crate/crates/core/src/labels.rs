//! Ground-truth reasoning labels.
//!
//! For every step of an expert trajectory the imagination label is the
//! instruction landmark that scores highest against the ground-truth next
//! view, the filtered option and the action are both the ground-truth
//! option, and the three are rendered in the canonical reasoning format.
//! The stop step takes the instruction's last landmark.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{LazyLock, Mutex};

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::env::{self, EnvError, Episode, Pose, World};
use crate::http::{HttpConfig, HttpError, JsonClient};
use crate::prompting::{format_cot, parse_cot, CoTOutput, ParseMode};
use crate::runtime::{BackendError, TextCompletion};
use crate::util::parallel_map;
use crate::vision::{build_observation_set, DirectionConfig, ObservationSet, VisionError};

/// Imagination used when an instruction yields no landmarks.
pub const NO_LANDMARK_SENTINEL: &str = "forward";

#[derive(Debug, thiserror::Error)]
pub enum LabelError {
    #[error("no landmarks to select from")]
    EmptyLandmarks,
    #[error("could not parse a landmark list from {0:?}")]
    MalformedLandmarks(String),
    #[error("no landmarks cached for episode '{0}'")]
    MissingLandmarks(String),
    #[error("no similarity row for episode '{episode}' step {t}{}", source_name.as_ref().map(|p| format!(" in {p}")).unwrap_or_default())]
    ProviderGap {
        episode: String,
        t: usize,
        source_name: Option<String>,
    },
    #[error(
        "similarity row for episode '{episode}' step {t} has {got} scores, expected {expected}"
    )]
    ScoreCount {
        episode: String,
        t: usize,
        got: usize,
        expected: usize,
    },
    #[error("similarity row for episode '{episode}' step {t} has a non-finite score")]
    NonFiniteScore { episode: String, t: usize },
    #[error("ground-truth action {action} is not an option at episode '{episode}' step {t}")]
    InvalidGtAction {
        episode: String,
        t: usize,
        action: char,
    },
    #[error("label for episode '{episode}' step {t} does not strict-parse: {reason}")]
    InvalidLabel {
        episode: String,
        t: usize,
        reason: String,
    },
    #[error("extraction failed: {0}")]
    Extraction(#[from] BackendError),
    #[error("similarity endpoint failed: {0}")]
    Endpoint(#[from] HttpError),
    #[error(transparent)]
    Vision(#[from] VisionError),
    #[error(transparent)]
    Env(#[from] EnvError),
}

pub type Result<T, E = LabelError> = std::result::Result<T, E>;

// ---------------------------------------------------------------------------
// Landmark extraction

const EXTRACTION_EXAMPLE_INSTRUCTION: &str =
    "Walk along the rug past the statue on the wooden table.";
const EXTRACTION_EXAMPLE_LANDMARKS: [&str; 3] = ["rug", "statue", "wooden table"];

fn numbered_list(items: &[&str]) -> String {
    let last = items.len().saturating_sub(1);
    items
        .iter()
        .enumerate()
        .map(|(i, item)| format!("{}.{item}{}", i + 1, if i == last { "." } else { ";" }))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Few-shot prompt asking a text model to list the landmarks of `instruction`.
pub fn build_landmark_prompt(instruction: &str) -> String {
    format!(
        "Extract the objects and scenes mentioned in the navigation instruction as a numbered list.\n\
         Instruction: {EXTRACTION_EXAMPLE_INSTRUCTION}\n\
         Landmarks:\n{}\n\
         Instruction: {}\n\
         Landmarks:",
        numbered_list(&EXTRACTION_EXAMPLE_LANDMARKS),
        instruction.trim()
    )
}

static NUMBERED_ITEM: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\s*\d+\s*[.)]\s*(.*)$").expect("valid regex"));

/// Parses `1.rug; 2.statue; 3.wooden table.` (any mix of `;` and newline
/// separators). Items are trimmed, lowercased and deduplicated.
pub fn parse_landmark_list(completion: &str) -> Result<Vec<String>> {
    let body = completion.trim();
    let body = body
        .strip_prefix("Landmarks:")
        .or_else(|| body.strip_prefix("landmarks:"))
        .unwrap_or(body);
    if body.trim().is_empty() {
        return Ok(Vec::new());
    }
    let mut items: Vec<String> = Vec::new();
    for piece in body.split([';', '\n']) {
        let Some(caps) = NUMBERED_ITEM.captures(piece) else {
            continue;
        };
        let item = caps[1].trim().trim_end_matches('.').trim().to_lowercase();
        if !item.is_empty() && !items.contains(&item) {
            items.push(item);
        }
    }
    if items.is_empty() {
        return Err(LabelError::MalformedLandmarks(completion.to_owned()));
    }
    Ok(items)
}

/// Ordered, normalized landmarks of one instruction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LandmarkList {
    pub episode: String,
    pub landmarks: Vec<String>,
}

impl LandmarkList {
    /// Normalizes (trim, lowercase, drop empties, dedup keeping first).
    pub fn new(episode: impl Into<String>, raw: impl IntoIterator<Item = String>) -> Self {
        let mut landmarks: Vec<String> = Vec::new();
        for item in raw {
            let item = item.trim().to_lowercase();
            if !item.is_empty() && !landmarks.contains(&item) {
                landmarks.push(item);
            }
        }
        Self {
            episode: episode.into(),
            landmarks,
        }
    }
}

pub trait LandmarkSource: Sync {
    fn landmarks(&self, episode: &Episode) -> Result<LandmarkList>;
}

/// Landmark lists keyed by episode id; JSON Lines `{"episode","landmarks"}`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LandmarkCache {
    entries: BTreeMap<String, Vec<String>>,
}

impl LandmarkCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let rows: Vec<LandmarkList> = env::read_jsonl(path)?;
        let mut cache = Self::new();
        for row in rows {
            cache.insert(LandmarkList::new(row.episode, row.landmarks));
        }
        Ok(cache)
    }

    /// Loads `path` if it exists, else starts empty.
    pub fn load_or_default(path: &Path) -> Result<Self> {
        if path.exists() {
            Self::load(path)
        } else {
            Ok(Self::new())
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        env::write_jsonl(path, &self.lists())?;
        Ok(())
    }

    pub fn insert(&mut self, list: LandmarkList) {
        self.entries.insert(list.episode, list.landmarks);
    }

    pub fn get(&self, episode: &str) -> Option<&[String]> {
        self.entries.get(episode).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn lists(&self) -> Vec<LandmarkList> {
        self.entries
            .iter()
            .map(|(episode, landmarks)| LandmarkList {
                episode: episode.clone(),
                landmarks: landmarks.clone(),
            })
            .collect()
    }
}

impl LandmarkSource for LandmarkCache {
    fn landmarks(&self, episode: &Episode) -> Result<LandmarkList> {
        self.get(&episode.id)
            .map(|items| LandmarkList {
                episode: episode.id.clone(),
                landmarks: items.to_vec(),
            })
            .ok_or_else(|| LabelError::MissingLandmarks(episode.id.clone()))
    }
}

/// Consults a cache first and asks a text model only for uncached
/// instructions, recording the result.
pub struct ExtractingLandmarkSource<C> {
    cache: Mutex<LandmarkCache>,
    completer: C,
    calls: AtomicUsize,
}

impl<C: TextCompletion> ExtractingLandmarkSource<C> {
    pub fn new(cache: LandmarkCache, completer: C) -> Self {
        Self {
            cache: Mutex::new(cache),
            completer,
            calls: AtomicUsize::new(0),
        }
    }

    /// Number of extraction requests issued.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn into_cache(self) -> LandmarkCache {
        self.cache.into_inner().expect("cache poisoned")
    }
}

impl<C: TextCompletion> LandmarkSource for ExtractingLandmarkSource<C> {
    fn landmarks(&self, episode: &Episode) -> Result<LandmarkList> {
        if let Ok(list) = self
            .cache
            .lock()
            .expect("cache poisoned")
            .landmarks(episode)
        {
            return Ok(list);
        }
        self.calls.fetch_add(1, Ordering::Relaxed);
        let completion = self
            .completer
            .complete(&build_landmark_prompt(&episode.instruction))?;
        let list = LandmarkList::new(episode.id.clone(), parse_landmark_list(&completion)?);
        self.cache
            .lock()
            .expect("cache poisoned")
            .insert(list.clone());
        Ok(list)
    }
}

// ---------------------------------------------------------------------------
// Similarity

/// Scores of every landmark against the ground-truth view of one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityRow {
    pub episode: String,
    pub t: usize,
    pub scores: Vec<f64>,
}

/// What a provider is asked to score: each landmark against the view from
/// `from` towards the next ground-truth viewpoint `to`.
#[derive(Debug, Clone, Copy)]
pub struct SimilarityQuery<'a> {
    pub episode: &'a Episode,
    pub t: usize,
    pub landmarks: &'a [String],
    pub from: &'a str,
    pub to: &'a str,
    pub caption: &'a str,
}

pub trait SimilarityProvider: Sync {
    fn scores(&self, query: &SimilarityQuery<'_>) -> Result<Vec<f64>>;
}

/// Precomputed rows; JSON Lines `{"episode","t","scores":[...]}`.
#[derive(Debug, Clone, Default)]
pub struct SimilarityTable {
    rows: HashMap<(String, usize), Vec<f64>>,
    source_name: Option<String>,
}

impl SimilarityTable {
    pub fn from_rows(rows: impl IntoIterator<Item = SimilarityRow>) -> Self {
        Self {
            rows: rows
                .into_iter()
                .map(|r| ((r.episode, r.t), r.scores))
                .collect(),
            source_name: None,
        }
    }

    /// Loads a table. A missing file loads as empty, so the first lookup
    /// reports a provider gap naming `path`.
    pub fn load(path: &Path) -> Result<Self> {
        let mut table = if path.exists() {
            Self::from_rows(env::read_jsonl::<SimilarityRow>(path)?)
        } else {
            tracing::warn!(path = %path.display(), "similarity table not found");
            Self::default()
        };
        table.source_name = Some(path.display().to_string());
        Ok(table)
    }

    pub fn save(path: &Path, rows: &[SimilarityRow]) -> Result<()> {
        env::write_jsonl(path, rows)?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

impl SimilarityProvider for SimilarityTable {
    fn scores(&self, q: &SimilarityQuery<'_>) -> Result<Vec<f64>> {
        self.rows
            .get(&(q.episode.id.clone(), q.t))
            .cloned()
            .ok_or_else(|| LabelError::ProviderGap {
                episode: q.episode.id.clone(),
                t: q.t,
                source_name: self.source_name.clone(),
            })
    }
}

/// Text-text scoring: 1 when the view caption contains the landmark, else 0.
#[derive(Debug, Clone, Copy, Default)]
pub struct CaptionMatchSimilarity;

impl SimilarityProvider for CaptionMatchSimilarity {
    fn scores(&self, q: &SimilarityQuery<'_>) -> Result<Vec<f64>> {
        let caption = q.caption.to_lowercase();
        Ok(q.landmarks
            .iter()
            .map(|lm| {
                if caption.contains(lm.as_str()) {
                    1.0
                } else {
                    0.0
                }
            })
            .collect())
    }
}

/// Remote scorer. POSTs `{"episode","t","scan","from_viewpoint",
/// "to_viewpoint","caption","landmarks"}` and expects `{"scores":[...]}`.
#[derive(Debug)]
pub struct EndpointSimilarity {
    client: JsonClient,
}

impl EndpointSimilarity {
    pub fn new(cfg: HttpConfig, token: Option<String>) -> Result<Self> {
        Ok(Self {
            client: JsonClient::new(cfg, token)?,
        })
    }
}

impl SimilarityProvider for EndpointSimilarity {
    fn scores(&self, q: &SimilarityQuery<'_>) -> Result<Vec<f64>> {
        let resp = self.client.post_json(&json!({
            "episode": q.episode.id,
            "t": q.t,
            "scan": q.episode.scan,
            "from_viewpoint": q.from,
            "to_viewpoint": q.to,
            "caption": q.caption,
            "landmarks": q.landmarks,
        }))?;
        let scores = resp
            .body
            .get("scores")
            .and_then(|s| s.as_array())
            .ok_or_else(|| HttpError::BadResponse(format!("no scores array in {}", resp.body)))?;
        scores
            .iter()
            .map(|v| {
                v.as_f64()
                    .ok_or_else(|| HttpError::BadResponse(format!("non-numeric score {v}")).into())
            })
            .collect()
    }
}

/// Index and text of the highest-scoring landmark; the earliest wins ties.
pub fn select_imagination<'a>(landmarks: &'a [String], scores: &[f64]) -> Result<(usize, &'a str)> {
    if landmarks.is_empty() {
        return Err(LabelError::EmptyLandmarks);
    }
    assert_eq!(landmarks.len(), scores.len(), "one score per landmark");
    let mut best = 0;
    for (k, s) in scores.iter().enumerate().skip(1) {
        if *s > scores[best] {
            best = k;
        }
    }
    Ok((best, &landmarks[best]))
}

// ---------------------------------------------------------------------------
// Expert rollout and labels

/// One teacher-forced step along a ground-truth path.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertStep {
    pub t: usize,
    pub viewpoint: String,
    pub pose: Pose,
    pub options: ObservationSet,
    /// Ground-truth option: the next path viewpoint, or `A` at the goal.
    pub gt_action: char,
    pub next: Option<String>,
}

impl ExpertStep {
    pub fn chosen_text(&self) -> &str {
        &self
            .options
            .get(self.gt_action)
            .expect("gt option exists")
            .text
    }
}

/// Replays the ground-truth path with the runtime's pose rules.
pub fn expert_rollout(
    world: &World,
    episode: &Episode,
    directions: &DirectionConfig,
) -> Result<Vec<ExpertStep>> {
    let graph = world.graph(&episode.scan)?;
    episode.validate(graph)?;
    let mut pose = episode.initial_pose();
    let mut steps = Vec::with_capacity(episode.gt_path.len());
    for (t, here) in episode.gt_path.iter().enumerate() {
        let options = build_observation_set(
            graph,
            &world.captions,
            &episode.scan,
            here,
            &pose,
            directions,
        )?;
        let next = episode.gt_path.get(t + 1).cloned();
        let gt_action = match &next {
            Some(n) => options
                .label_for(n)
                .expect("adjacent viewpoint is an option"),
            None => 'A',
        };
        steps.push(ExpertStep {
            t,
            viewpoint: here.clone(),
            pose,
            options,
            gt_action,
            next: next.clone(),
        });
        if let Some(n) = &next {
            pose = Pose::after_move(graph.position(here)?, graph.position(n)?);
        }
    }
    Ok(steps)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoTLabel {
    pub episode: String,
    pub t: usize,
    pub imagination: String,
    pub action: char,
    pub cot: String,
}

impl CoTLabel {
    pub fn output(&self) -> CoTOutput {
        CoTOutput::new(self.imagination.clone(), self.action, self.action)
    }
}

pub fn build_cot_label(
    episode: &str,
    t: usize,
    imagination: &str,
    gt_action: char,
    options: &ObservationSet,
) -> Result<CoTLabel> {
    let valid = options.labels();
    if !valid.contains(&gt_action) {
        return Err(LabelError::InvalidGtAction {
            episode: episode.to_owned(),
            t,
            action: gt_action,
        });
    }
    let out = CoTOutput::new(imagination, gt_action, gt_action);
    let cot = format_cot(&out);
    let parsed =
        parse_cot(&cot, &valid, ParseMode::Strict).map_err(|e| LabelError::InvalidLabel {
            episode: episode.to_owned(),
            t,
            reason: e.reason,
        })?;
    debug_assert_eq!(parsed, out);
    Ok(CoTLabel {
        episode: episode.to_owned(),
        t,
        imagination: out.imagination,
        action: gt_action,
        cot,
    })
}

pub fn load_labels(path: &Path) -> Result<Vec<CoTLabel>> {
    Ok(env::read_jsonl(path)?)
}

pub fn write_labels(path: &Path, labels: &[CoTLabel]) -> Result<()> {
    env::write_jsonl(path, labels)?;
    Ok(())
}

/// Labels plus the statistics worth reporting.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LabelReport {
    pub labels: Vec<CoTLabel>,
    pub episodes: usize,
    /// Move steps whose top score was shared by several landmarks.
    pub tied_steps: usize,
    /// Episodes labeled with the no-landmark sentinel.
    pub zero_landmark_episodes: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelOptions {
    pub directions: DirectionConfig,
    pub parallelism: usize,
}

impl Default for LabelOptions {
    fn default() -> Self {
        Self {
            directions: DirectionConfig::default(),
            parallelism: 1,
        }
    }
}

struct EpisodeLabels {
    labels: Vec<CoTLabel>,
    ties: usize,
    zero_landmarks: bool,
}

fn label_episode(
    world: &World,
    episode: &Episode,
    source: &dyn LandmarkSource,
    provider: &dyn SimilarityProvider,
    opts: &LabelOptions,
) -> Result<EpisodeLabels> {
    let steps = expert_rollout(world, episode, &opts.directions)?;
    let landmarks = source.landmarks(episode)?.landmarks;
    let mut ties = 0;
    let mut labels = Vec::with_capacity(steps.len());
    for step in &steps {
        let imagination = match (&step.next, landmarks.last()) {
            (_, None) => NO_LANDMARK_SENTINEL.to_owned(),
            (None, Some(last)) => last.clone(),
            (Some(next), Some(_)) => {
                let caption = world
                    .captions
                    .get(&episode.scan, &step.viewpoint, next)
                    .expect("rollout verified captions");
                let scores = provider.scores(&SimilarityQuery {
                    episode,
                    t: step.t,
                    landmarks: &landmarks,
                    from: &step.viewpoint,
                    to: next,
                    caption,
                })?;
                if scores.len() != landmarks.len() {
                    return Err(LabelError::ScoreCount {
                        episode: episode.id.clone(),
                        t: step.t,
                        got: scores.len(),
                        expected: landmarks.len(),
                    });
                }
                if scores.iter().any(|s| !s.is_finite()) {
                    return Err(LabelError::NonFiniteScore {
                        episode: episode.id.clone(),
                        t: step.t,
                    });
                }
                let (k, text) = select_imagination(&landmarks, &scores)?;
                if scores.iter().filter(|s| **s == scores[k]).count() > 1 {
                    ties += 1;
                }
                text.to_owned()
            }
        };
        labels.push(build_cot_label(
            &episode.id,
            step.t,
            &imagination,
            step.gt_action,
            &step.options,
        )?);
    }
    Ok(EpisodeLabels {
        labels,
        ties,
        zero_landmarks: landmarks.is_empty(),
    })
}

/// One label per ground-truth step (every move plus the final stop), sorted
/// by episode id then step.
pub fn label_dataset(
    episodes: &[Episode],
    world: &World,
    source: &dyn LandmarkSource,
    provider: &dyn SimilarityProvider,
    opts: &LabelOptions,
) -> Result<LabelReport> {
    let per_episode = parallel_map(episodes, opts.parallelism, |ep| {
        label_episode(world, ep, source, provider, opts)
    });
    let mut report = LabelReport {
        episodes: episodes.len(),
        ..LabelReport::default()
    };
    for (ep, result) in episodes.iter().zip(per_episode) {
        let done = result?;
        report.tied_steps += done.ties;
        if done.zero_landmarks {
            report.zero_landmark_episodes.push(ep.id.clone());
        }
        report.labels.extend(done.labels);
    }
    report
        .labels
        .sort_by(|a, b| (&a.episode, a.t).cmp(&(&b.episode, b.t)));
    report.zero_landmark_episodes.sort();
    Ok(report)
}
