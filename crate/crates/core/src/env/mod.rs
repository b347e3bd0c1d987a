//! Navigation environments: viewpoint graphs, episodes, trajectories and the
//! geometry every other module relies on.
//!
//! Frame convention: positions are meters in a right-handed frame with +z up.
//! Heading 0 points along +y and increases clockwise when viewed from above,
//! so +x sits at heading 90.

mod geometry;
mod graph;
mod io;
pub mod synth;

pub use geometry::{
    euclidean_distance, heading_towards, relative_pose, wrap_heading, RelativePose,
};
pub use graph::NavGraph;
pub use io::{
    load_captions, load_episodes, load_graph, load_graph_dir, parse_graph, read_jsonl,
    write_captions, write_episodes, write_graph, write_jsonl, CaptionRow, GraphFile,
};

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

/// Errors raised while loading or querying an environment.
#[derive(Debug, thiserror::Error)]
pub enum EnvError {
    #[error("parse error in {source_name}: {message}")]
    Parse {
        source_name: String,
        message: String,
    },
    #[error("graph invariant violated: {0}")]
    GraphInvariant(String),
    #[error("unknown viewpoint '{0}'")]
    UnknownViewpoint(String),
    #[error("unknown scan '{0}'")]
    UnknownScan(String),
    #[error("degenerate positions: '{0}' and '{1}' coincide")]
    DegeneratePositions(String, String),
    #[error("invalid episode '{id}': {message}")]
    InvalidEpisode { id: String, message: String },
    #[error("conflicting captions for edge {scan}:{from}->{to}")]
    DuplicateCaption {
        scan: String,
        from: String,
        to: String,
    },
    #[error("invalid synthetic world config: {0}")]
    InvalidConfig(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = EnvError> = std::result::Result<T, E>;

/// A point in the world frame, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Position {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Viewpoint {
    pub id: String,
    pub position: Position,
}

/// Agent orientation. Heading in `[0, 360)`, elevation in `[-90, 90]`, degrees.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    pub heading: f64,
    pub elevation: f64,
}

impl Pose {
    pub fn new(heading: f64, elevation: f64) -> Self {
        Self {
            heading: heading.rem_euclid(360.0),
            elevation: elevation.clamp(-90.0, 90.0),
        }
    }

    /// Pose after travelling from `from` to `to`: facing the direction of
    /// travel, level gaze.
    pub fn after_move(from: &Position, to: &Position) -> Self {
        Self::new(heading_towards(from, to), 0.0)
    }
}

/// One instruction-trajectory pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub id: String,
    pub scan: String,
    pub instruction: String,
    pub gt_path: Vec<String>,
    /// Starting heading in degrees; 0 when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_heading: Option<f64>,
}

impl Episode {
    pub fn start(&self) -> &str {
        &self.gt_path[0]
    }

    pub fn goal(&self) -> &str {
        self.gt_path.last().expect("gt_path is non-empty")
    }

    pub fn initial_pose(&self) -> Pose {
        Pose::new(self.initial_heading.unwrap_or(0.0), 0.0)
    }

    /// Checks the episode against its graph: non-empty path of adjacent
    /// viewpoints.
    pub fn validate(&self, graph: &NavGraph) -> Result<()> {
        let invalid = |message: String| EnvError::InvalidEpisode {
            id: self.id.clone(),
            message,
        };
        if self.gt_path.is_empty() {
            return Err(invalid("gt_path is empty".into()));
        }
        for id in &self.gt_path {
            if !graph.contains(id) {
                return Err(invalid(format!("unknown viewpoint '{id}'")));
            }
        }
        for pair in self.gt_path.windows(2) {
            if !graph.are_adjacent(&pair[0], &pair[1])? {
                return Err(invalid(format!(
                    "'{}' and '{}' are not adjacent",
                    pair[0], pair[1]
                )));
            }
        }
        Ok(())
    }
}

/// The viewpoints an agent visited, in order, and whether it chose to stop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub visited: Vec<String>,
    pub stopped: bool,
}

impl Trajectory {
    pub fn start_at(start: impl Into<String>) -> Self {
        Self {
            visited: vec![start.into()],
            stopped: false,
        }
    }

    pub fn last(&self) -> &str {
        self.visited.last().map(String::as_str).unwrap_or_default()
    }

    /// Number of moves taken.
    pub fn moves(&self) -> usize {
        self.visited.len().saturating_sub(1)
    }
}

/// Captions keyed by directed edge: the view seen from `from` when facing `to`.
#[derive(Debug, Clone, Default)]
pub struct CaptionTable {
    rows: HashMap<(String, String, String), String>,
}

impl CaptionTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_rows(rows: impl IntoIterator<Item = CaptionRow>) -> Result<Self> {
        let mut table = Self::new();
        for row in rows {
            table.insert(row)?;
        }
        Ok(table)
    }

    /// Adds a caption; identical duplicates are accepted, conflicting ones are not.
    pub fn insert(&mut self, row: CaptionRow) -> Result<()> {
        let key = (row.scan, row.from_viewpoint, row.to_viewpoint);
        match self.rows.get(&key) {
            Some(existing) if *existing != row.caption => Err(EnvError::DuplicateCaption {
                scan: key.0,
                from: key.1,
                to: key.2,
            }),
            Some(_) => Ok(()),
            None => {
                self.rows.insert(key, row.caption);
                Ok(())
            }
        }
    }

    pub fn get(&self, scan: &str, from: &str, to: &str) -> Option<&str> {
        // Tuple-of-String keys can't be borrowed as (&str, &str, &str).
        self.rows
            .get(&(scan.to_owned(), from.to_owned(), to.to_owned()))
            .map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Rows in canonical (scan, from, to) order.
    pub fn rows(&self) -> Vec<CaptionRow> {
        let mut rows: Vec<CaptionRow> = self
            .rows
            .iter()
            .map(|((scan, from, to), caption)| CaptionRow {
                scan: scan.clone(),
                from_viewpoint: from.clone(),
                to_viewpoint: to.clone(),
                caption: caption.clone(),
            })
            .collect();
        rows.sort_by(|a, b| {
            (&a.scan, &a.from_viewpoint, &a.to_viewpoint).cmp(&(
                &b.scan,
                &b.from_viewpoint,
                &b.to_viewpoint,
            ))
        });
        rows
    }
}

/// Everything an agent needs to move around: graphs by scan plus captions.
#[derive(Debug, Clone, Default)]
pub struct World {
    pub graphs: BTreeMap<String, NavGraph>,
    pub captions: CaptionTable,
}

impl World {
    pub fn new(graphs: BTreeMap<String, NavGraph>, captions: CaptionTable) -> Self {
        Self { graphs, captions }
    }

    pub fn graph(&self, scan: &str) -> Result<&NavGraph> {
        self.graphs
            .get(scan)
            .ok_or_else(|| EnvError::UnknownScan(scan.to_owned()))
    }
}
