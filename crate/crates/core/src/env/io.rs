//! File formats for graphs, episodes and captions.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{CaptionTable, EnvError, Episode, NavGraph, Position, Result, Viewpoint};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphFile {
    pub viewpoints: Vec<ViewpointRecord>,
    pub edges: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewpointRecord {
    pub id: String,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl GraphFile {
    pub fn from_graph(graph: &NavGraph) -> Self {
        Self {
            viewpoints: graph
                .viewpoints()
                .iter()
                .map(|vp| ViewpointRecord {
                    id: vp.id.clone(),
                    x: vp.position.x,
                    y: vp.position.y,
                    z: vp.position.z,
                })
                .collect(),
            edges: graph
                .edges()
                .into_iter()
                .map(|(a, b, _)| (a.to_owned(), b.to_owned()))
                .collect(),
        }
    }

    pub fn into_graph(self) -> Result<NavGraph> {
        let viewpoints = self
            .viewpoints
            .into_iter()
            .map(|r| Viewpoint {
                id: r.id,
                position: Position::new(r.x, r.y, r.z),
            })
            .collect();
        NavGraph::new(viewpoints, &self.edges)
    }
}

/// One caption per directed navigable edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionRow {
    pub scan: String,
    pub from_viewpoint: String,
    pub to_viewpoint: String,
    pub caption: String,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EnvError + '_ {
    move |source| EnvError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn parse_graph(text: &str, source_name: &str) -> Result<NavGraph> {
    let file: GraphFile = serde_json::from_str(text).map_err(|e| EnvError::Parse {
        source_name: source_name.to_owned(),
        message: e.to_string(),
    })?;
    file.into_graph()
}

pub fn load_graph(path: &Path) -> Result<NavGraph> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_graph(&text, &path.display().to_string())
}

/// Loads every `<scan>.json` in a directory, keyed by scan (file stem). A
/// plain file path loads as a single scan.
pub fn load_graph_dir(path: &Path) -> Result<BTreeMap<String, NavGraph>> {
    let mut graphs = BTreeMap::new();
    if path.is_file() {
        graphs.insert(scan_name(path), load_graph(path)?);
        return Ok(graphs);
    }
    let mut entries: Vec<_> = fs::read_dir(path)
        .map_err(io_err(path))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "json"))
        .collect();
    entries.sort();
    for p in entries {
        graphs.insert(scan_name(&p), load_graph(&p)?);
    }
    Ok(graphs)
}

fn scan_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

pub fn write_graph(path: &Path, graph: &NavGraph) -> Result<()> {
    let text =
        serde_json::to_string_pretty(&GraphFile::from_graph(graph)).expect("graph file serializes");
    fs::write(path, text + "\n").map_err(io_err(path))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_jsonl(&text, &path.display().to_string())
}

pub(crate) fn parse_jsonl<T: DeserializeOwned>(text: &str, source_name: &str) -> Result<Vec<T>> {
    text.lines()
        .enumerate()
        .filter(|(_, line)| !line.trim().is_empty())
        .map(|(n, line)| {
            serde_json::from_str(line).map_err(|e| EnvError::Parse {
                source_name: format!("{source_name}:{}", n + 1),
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut out = String::new();
    for row in rows {
        out.push_str(&serde_json::to_string(row).expect("row serializes"));
        out.push('\n');
    }
    fs::write(path, out).map_err(io_err(path))
}

pub fn load_episodes(path: &Path) -> Result<Vec<Episode>> {
    read_jsonl(path)
}

pub fn write_episodes(path: &Path, episodes: &[Episode]) -> Result<()> {
    write_jsonl(path, episodes)
}

pub fn load_captions(path: &Path) -> Result<CaptionTable> {
    CaptionTable::from_rows(read_jsonl::<CaptionRow>(path)?)
}

pub fn write_captions(path: &Path, captions: &CaptionTable) -> Result<()> {
    write_jsonl(path, &captions.rows())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_graph() {
        let g = parse_graph(
            r#"{"viewpoints":[{"id":"a","x":0,"y":0,"z":0},{"id":"b","x":1,"y":0,"z":0}],
                "edges":[["a","b"]]}"#,
            "inline",
        )
        .unwrap();
        assert_eq!(g.len(), 2);
        assert_eq!(g.edge_count(), 1);
    }

    #[test]
    fn unknown_edge_endpoint() {
        let err = parse_graph(
            r#"{"viewpoints":[{"id":"a","x":0,"y":0,"z":0}],"edges":[["a","zz"]]}"#,
            "inline",
        )
        .unwrap_err();
        assert!(matches!(err, EnvError::GraphInvariant(_)), "{err}");
    }

    #[test]
    fn malformed_json() {
        assert!(matches!(
            parse_graph("{\"viewpoints\": [", "inline"),
            Err(EnvError::Parse { .. })
        ));
    }

    #[test]
    fn jsonl_error_names_line() {
        let err = parse_jsonl::<Episode>("\n{\"bad\":1}\n", "eps").unwrap_err();
        assert!(err.to_string().contains("eps:2"), "{err}");
    }

    #[test]
    fn conflicting_caption_rows() {
        let row = |c: &str| CaptionRow {
            scan: "s".into(),
            from_viewpoint: "a".into(),
            to_viewpoint: "b".into(),
            caption: c.into(),
        };
        assert!(CaptionTable::from_rows([row("x"), row("x")]).is_ok());
        assert!(matches!(
            CaptionTable::from_rows([row("x"), row("y")]),
            Err(EnvError::DuplicateCaption { .. })
        ));
    }
}
