//! Vision-to-text: turns each navigable candidate into a labeled textual
//! option, "<direction> to <<caption>>", with option A reserved for stop.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::env::{relative_pose, CaptionTable, EnvError, NavGraph, Pose, RelativePose};

#[derive(Debug, thiserror::Error)]
pub enum VisionError {
    #[error("caption is empty")]
    EmptyCaption,
    #[error("missing caption for edge {scan}:{from}->{to}")]
    MissingCaption {
        scan: String,
        from: String,
        to: String,
    },
    #[error("viewpoint '{0}' has {1} neighbors; at most 25 options fit after stop")]
    TooManyNeighbors(String, usize),
    #[error(transparent)]
    Env(#[from] EnvError),
}

/// The six coarse directions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectionPhrase {
    GoForward,
    TurnLeft,
    TurnRight,
    TurnAround,
    GoUp,
    GoDown,
}

impl DirectionPhrase {
    pub const ALL: [DirectionPhrase; 6] = [
        Self::GoForward,
        Self::TurnLeft,
        Self::TurnRight,
        Self::TurnAround,
        Self::GoUp,
        Self::GoDown,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::GoForward => "go forward",
            Self::TurnLeft => "turn left",
            Self::TurnRight => "turn right",
            Self::TurnAround => "turn around",
            Self::GoUp => "go up",
            Self::GoDown => "go down",
        }
    }
}

impl fmt::Display for DirectionPhrase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Bin edges for [`map_direction`], in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirectionConfig {
    /// `|Δψ|` at or below this is "go forward".
    pub forward_limit: f64,
    /// `|Δψ|` above this is "turn around".
    pub side_limit: f64,
    /// `|Δθ|` above this is "go up"/"go down".
    pub elevation_limit: f64,
    /// Append numeric angles to each direction phrase.
    pub fine: bool,
}

impl Default for DirectionConfig {
    fn default() -> Self {
        Self {
            forward_limit: 45.0,
            side_limit: 135.0,
            elevation_limit: 30.0,
            fine: false,
        }
    }
}

/// Maps a relative heading in `(-180, 180]` and an elevation change to one
/// of the six phrases. Elevation takes precedence over heading.
pub fn map_direction(heading: f64, elevation: f64, cfg: &DirectionConfig) -> DirectionPhrase {
    if elevation > cfg.elevation_limit {
        DirectionPhrase::GoUp
    } else if elevation < -cfg.elevation_limit {
        DirectionPhrase::GoDown
    } else if heading.abs() <= cfg.forward_limit {
        DirectionPhrase::GoForward
    } else if heading > cfg.forward_limit && heading <= cfg.side_limit {
        DirectionPhrase::TurnRight
    } else if heading < -cfg.forward_limit && heading >= -cfg.side_limit {
        DirectionPhrase::TurnLeft
    } else {
        DirectionPhrase::TurnAround
    }
}

pub fn describe_observation(direction: &str, caption: &str) -> Result<String, VisionError> {
    if caption.trim().is_empty() {
        return Err(VisionError::EmptyCaption);
    }
    Ok(format!("{direction} to <{caption}>"))
}

fn direction_text(rel: RelativePose, cfg: &DirectionConfig) -> String {
    let phrase = map_direction(rel.heading, rel.elevation, cfg);
    if cfg.fine {
        format!(
            "{phrase} (heading {:.0}, elevation {:.0})",
            rel.heading, rel.elevation
        )
    } else {
        phrase.as_str().to_owned()
    }
}

/// One labeled option in an observation set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationDescription {
    pub label: char,
    /// Neighbor this option moves to; `None` for stop.
    pub target: Option<String>,
    /// Option text without its label, e.g. `go forward to <a bedroom>`.
    pub text: String,
}

impl ObservationDescription {
    pub fn stop() -> Self {
        Self {
            label: 'A',
            target: None,
            text: "stop".to_owned(),
        }
    }

    pub fn is_stop(&self) -> bool {
        self.target.is_none()
    }
}

/// The per-step action space: stop followed by one option per neighbor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSet {
    pub viewpoint: String,
    pub options: Vec<ObservationDescription>,
}

impl ObservationSet {
    pub fn get(&self, label: char) -> Option<&ObservationDescription> {
        self.options.iter().find(|o| o.label == label)
    }

    pub fn labels(&self) -> Vec<char> {
        self.options.iter().map(|o| o.label).collect()
    }

    pub fn label_for(&self, target: &str) -> Option<char> {
        self.options
            .iter()
            .find(|o| o.target.as_deref() == Some(target))
            .map(|o| o.label)
    }

    /// `A. stop, B. go forward to <...>, ...`
    pub fn render(&self) -> String {
        self.options
            .iter()
            .map(|o| format!("{}. {}", o.label, o.text))
            .collect::<Vec<_>>()
            .join(", ")
    }
}

pub fn build_observation_set(
    graph: &NavGraph,
    captions: &CaptionTable,
    scan: &str,
    current: &str,
    pose: &Pose,
    cfg: &DirectionConfig,
) -> Result<ObservationSet, VisionError> {
    let here = graph.viewpoint(current)?;
    let mut candidates = Vec::new();
    for neighbor in graph.neighbors(current)? {
        let rel = relative_pose(here, pose, neighbor)?;
        candidates.push((rel, neighbor.id.as_str()));
    }
    if candidates.len() > 25 {
        return Err(VisionError::TooManyNeighbors(
            current.to_owned(),
            candidates.len(),
        ));
    }
    candidates.sort_by(|a, b| a.0.heading.total_cmp(&b.0.heading).then(a.1.cmp(b.1)));

    let mut options = vec![ObservationDescription::stop()];
    for ((rel, id), label) in candidates.into_iter().zip('B'..='Z') {
        let caption =
            captions
                .get(scan, current, id)
                .ok_or_else(|| VisionError::MissingCaption {
                    scan: scan.to_owned(),
                    from: current.to_owned(),
                    to: id.to_owned(),
                })?;
        options.push(ObservationDescription {
            label,
            target: Some(id.to_owned()),
            text: describe_observation(&direction_text(rel, cfg), caption)?,
        });
    }
    Ok(ObservationSet {
        viewpoint: current.to_owned(),
        options,
    })
}
