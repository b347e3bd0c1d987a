//! Trajectory metrics: TL, NE, SR, OSR, SPL, nDTW, SDTW and CLS.
//!
//! All point-to-point distances are geodesic (shortest path over the
//! graph) and one threshold, 3 m by default, serves success, oracle success,
//! nDTW and CLS.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::env::{EnvError, Episode, NavGraph};
use crate::prompting::HistoryMode;
use crate::runtime::{BackendDescriptor, EpisodeResult};
use crate::util::Provenance;

pub const SUCCESS_THRESHOLD_M: f64 = 3.0;

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("no episode '{0}' for result")]
    MissingEpisode(String),
    #[error("empty path")]
    EmptyPath,
    #[error("'{0}' and '{1}' are not adjacent")]
    NotAdjacent(String, String),
    #[error(transparent)]
    Env(#[from] EnvError),
}

pub type Result<T, E = MetricsError> = std::result::Result<T, E>;

/// Sum of edge weights along `path`.
pub fn traj_length<S: AsRef<str>>(path: &[S], g: &NavGraph) -> Result<f64> {
    let mut total = 0.0;
    for pair in path.windows(2) {
        let (a, b) = (pair[0].as_ref(), pair[1].as_ref());
        total += g
            .edge_weight(a, b)?
            .ok_or_else(|| MetricsError::NotAdjacent(a.to_owned(), b.to_owned()))?;
    }
    Ok(total)
}

pub fn nav_error<S: AsRef<str>>(path: &[S], goal: &str, g: &NavGraph) -> Result<f64> {
    let last = path.last().ok_or(MetricsError::EmptyPath)?;
    Ok(g.geodesic_distance(last.as_ref(), goal)?)
}

/// 1 when the final viewpoint is within `d_th` of the goal (inclusive).
pub fn success<S: AsRef<str>>(path: &[S], goal: &str, g: &NavGraph, d_th: f64) -> Result<f64> {
    Ok(if nav_error(path, goal, g)? <= d_th {
        1.0
    } else {
        0.0
    })
}

/// 1 when any visited viewpoint is within `d_th` of the goal.
pub fn oracle_success<S: AsRef<str>>(
    path: &[S],
    goal: &str,
    g: &NavGraph,
    d_th: f64,
) -> Result<f64> {
    let mut best = f64::INFINITY;
    for p in path {
        best = best.min(g.geodesic_distance(p.as_ref(), goal)?);
    }
    if path.is_empty() {
        return Err(MetricsError::EmptyPath);
    }
    Ok(if best <= d_th { 1.0 } else { 0.0 })
}

/// Success weighted by shortest over taken path length.
pub fn spl(success: f64, shortest: f64, taken: f64) -> f64 {
    if success == 0.0 {
        return 0.0;
    }
    let denom = shortest.max(taken);
    if denom == 0.0 {
        success
    } else {
        success * shortest / denom
    }
}

/// Minimum cumulative cost over monotone alignments of an `n`-sequence with
/// an `m`-sequence, using match, insertion and deletion moves.
pub fn dtw(n: usize, m: usize, cost: impl Fn(usize, usize) -> f64) -> f64 {
    if n == 0 || m == 0 {
        return if n == m { 0.0 } else { f64::INFINITY };
    }
    let mut prev = vec![f64::INFINITY; m + 1];
    let mut cur = vec![f64::INFINITY; m + 1];
    prev[0] = 0.0;
    for i in 1..=n {
        cur[0] = f64::INFINITY;
        for j in 1..=m {
            let best = prev[j].min(cur[j - 1]).min(prev[j - 1]);
            cur[j] = cost(i - 1, j - 1) + best;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[m]
}

fn geodesic_matrix<S: AsRef<str>, T: AsRef<str>>(
    a: &[S],
    b: &[T],
    g: &NavGraph,
) -> Result<Vec<Vec<f64>>> {
    a.iter()
        .map(|p| {
            b.iter()
                .map(|r| Ok(g.geodesic_distance(p.as_ref(), r.as_ref())?))
                .collect()
        })
        .collect()
}

pub fn dtw_distance<S: AsRef<str>, T: AsRef<str>>(
    path: &[S],
    reference: &[T],
    g: &NavGraph,
) -> Result<f64> {
    let d = geodesic_matrix(path, reference, g)?;
    Ok(dtw(path.len(), reference.len(), |i, j| d[i][j]))
}

/// `exp(-DTW(P, R) / (|R| * d_th))`.
pub fn ndtw<S: AsRef<str>, T: AsRef<str>>(
    path: &[S],
    reference: &[T],
    g: &NavGraph,
    d_th: f64,
) -> Result<f64> {
    if path.is_empty() || reference.is_empty() {
        return Err(MetricsError::EmptyPath);
    }
    let cost = dtw_distance(path, reference, g)?;
    Ok((-cost / (reference.len() as f64 * d_th)).exp())
}

/// Coverage of the reference times a length-fidelity score.
pub fn cls<S: AsRef<str>, T: AsRef<str>>(
    path: &[S],
    reference: &[T],
    g: &NavGraph,
    d_th: f64,
) -> Result<f64> {
    if path.is_empty() || reference.is_empty() {
        return Err(MetricsError::EmptyPath);
    }
    let d = geodesic_matrix(reference, path, g)?;
    let coverage = d
        .iter()
        .map(|row| (-row.iter().copied().fold(f64::INFINITY, f64::min) / d_th).exp())
        .sum::<f64>()
        / reference.len() as f64;
    let ref_len = traj_length(reference, g)?;
    if ref_len == 0.0 {
        return Ok(coverage);
    }
    let expected = coverage * ref_len;
    let length_score = expected / (expected + (expected - traj_length(path, g)?).abs());
    Ok(coverage * length_score)
}

pub fn sdtw(success: f64, ndtw: f64) -> f64 {
    success * ndtw
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub episode: String,
    pub steps: usize,
    pub tl: f64,
    pub ne: f64,
    pub sr: f64,
    pub osr: f64,
    pub spl: f64,
    pub ndtw: f64,
    pub sdtw: f64,
    pub cls: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MeanMetrics {
    pub tl: f64,
    pub ne: f64,
    pub sr: f64,
    pub osr: f64,
    pub spl: f64,
    pub ndtw: f64,
    pub sdtw: f64,
    pub cls: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub success_threshold_m: f64,
    pub max_steps: Option<usize>,
    pub history_mode: Option<HistoryMode>,
    pub backend: Option<BackendDescriptor>,
    /// Provenance of the evaluated traces, taken from the first result.
    #[serde(default)]
    pub traces: Option<Provenance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub config: ReportConfig,
    pub count: usize,
    pub stopped: usize,
    /// `None` when there are no episodes.
    pub mean: Option<MeanMetrics>,
    pub episodes: Vec<EpisodeMetrics>,
    /// Provenance of the evaluation itself; set by the caller.
    #[serde(default)]
    pub provenance: Option<Provenance>,
}

pub fn episode_metrics(
    result: &EpisodeResult,
    episode: &Episode,
    g: &NavGraph,
    d_th: f64,
) -> Result<EpisodeMetrics> {
    let path = &result.trajectory.visited;
    let reference = &episode.gt_path;
    let goal = episode.goal();
    let tl = traj_length(path, g)?;
    let ne = nav_error(path, goal, g)?;
    let sr = if ne <= d_th { 1.0 } else { 0.0 };
    let osr = oracle_success(path, goal, g, d_th)?;
    let shortest = g.geodesic_distance(episode.start(), goal)?;
    let n = ndtw(path, reference, g, d_th)?;
    Ok(EpisodeMetrics {
        episode: episode.id.clone(),
        steps: result.trajectory.moves(),
        tl,
        ne,
        sr,
        osr,
        spl: spl(sr, shortest, tl),
        ndtw: n,
        sdtw: sdtw(sr, n),
        cls: cls(path, reference, g, d_th)?,
    })
}

/// Scores every result against its episode. Per-episode rows are ordered
/// by episode id; means are plain arithmetic means.
pub fn evaluate(
    results: &[EpisodeResult],
    episodes: &[Episode],
    graphs: &BTreeMap<String, NavGraph>,
    d_th: f64,
) -> Result<MetricReport> {
    let by_id: HashMap<&str, &Episode> = episodes.iter().map(|e| (e.id.as_str(), e)).collect();
    let mut ordered: Vec<&EpisodeResult> = results.iter().collect();
    ordered.sort_by(|a, b| a.episode.cmp(&b.episode));

    let mut rows = Vec::with_capacity(ordered.len());
    for r in &ordered {
        let ep = by_id
            .get(r.episode.as_str())
            .ok_or_else(|| MetricsError::MissingEpisode(r.episode.clone()))?;
        let g = graphs
            .get(&ep.scan)
            .ok_or_else(|| EnvError::UnknownScan(ep.scan.clone()))?;
        rows.push(episode_metrics(r, ep, g, d_th)?);
    }

    let mean = (!rows.is_empty()).then(|| {
        let n = rows.len() as f64;
        let avg = |f: fn(&EpisodeMetrics) -> f64| rows.iter().map(f).sum::<f64>() / n;
        MeanMetrics {
            tl: avg(|m| m.tl),
            ne: avg(|m| m.ne),
            sr: avg(|m| m.sr),
            osr: avg(|m| m.osr),
            spl: avg(|m| m.spl),
            ndtw: avg(|m| m.ndtw),
            sdtw: avg(|m| m.sdtw),
            cls: avg(|m| m.cls),
        }
    });
    let first = ordered.first().map(|r| &r.run);
    Ok(MetricReport {
        config: ReportConfig {
            success_threshold_m: d_th,
            max_steps: first.map(|r| r.max_steps),
            history_mode: first.map(|r| r.history_mode),
            backend: first.map(|r| r.backend.clone()),
            traces: first.and_then(|r| r.provenance.clone()),
        },
        count: rows.len(),
        stopped: ordered.iter().filter(|r| r.trajectory.stopped).count(),
        mean,
        episodes: rows,
        provenance: None,
    })
}

impl MetricReport {
    /// Aligned-column table: one row per episode, then the mean.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ =
            writeln!(
            out,
            "episodes: {}  stopped: {}  threshold: {} m  max_steps: {}  history: {}  backend: {}",
            self.count,
            self.stopped,
            self.config.success_threshold_m,
            self.config
                .max_steps
                .map_or("-".to_owned(), |m| m.to_string()),
            self.config
                .history_mode
                .map_or("-".to_owned(), |h| h.to_string()),
            self.config
                .backend
                .as_ref()
                .map_or("-".to_owned(), |b| format!("{} ({})", b.name, b.config_hash)),
        );
        let width = self
            .episodes
            .iter()
            .map(|e| e.episode.len())
            .max()
            .unwrap_or(0)
            .max("episode".len());
        let _ = writeln!(
            out,
            "{:<width$} {:>5} {:>8} {:>8} {:>6} {:>6} {:>6} {:>6} {:>6} {:>6}",
            "episode", "steps", "TL", "NE", "SR", "OSR", "SPL", "nDTW", "SDTW", "CLS"
        );
        for e in &self.episodes {
            let _ = writeln!(
                out,
                "{:<width$} {:>5} {:>8.2} {:>8.2} {:>6.3} {:>6.3} {:>6.3} {:>6.3} {:>6.3} {:>6.3}",
                e.episode, e.steps, e.tl, e.ne, e.sr, e.osr, e.spl, e.ndtw, e.sdtw, e.cls
            );
        }
        if let Some(m) = &self.mean {
            let _ = writeln!(
                out,
                "{:<width$} {:>5} {:>8.2} {:>8.2} {:>6.3} {:>6.3} {:>6.3} {:>6.3} {:>6.3} {:>6.3}",
                "mean", "", m.tl, m.ne, m.sr, m.osr, m.spl, m.ndtw, m.sdtw, m.cls
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{Position, Viewpoint};

    fn line() -> NavGraph {
        // A(0) - B(2) - C(5) - D(7.5) on the x axis.
        let vp = |id: &str, x: f64| Viewpoint {
            id: id.into(),
            position: Position::new(x, 0.0, 0.0),
        };
        NavGraph::new(
            vec![vp("A", 0.0), vp("B", 2.0), vp("C", 5.0), vp("D", 7.5)],
            &[
                ("A".into(), "B".into()),
                ("B".into(), "C".into()),
                ("C".into(), "D".into()),
            ],
        )
        .unwrap()
    }

    #[test]
    fn lengths_and_errors() {
        let g = line();
        assert_eq!(traj_length(&["A"], &g).unwrap(), 0.0);
        assert_eq!(traj_length(&["A", "B", "C"], &g).unwrap(), 5.0);
        assert!(traj_length(&["A", "C"], &g).is_err());
        assert_eq!(nav_error(&["A", "B", "C"], "C", &g).unwrap(), 0.0);
        assert_eq!(nav_error(&["A", "B", "C"], "D", &g).unwrap(), 2.5);
    }

    #[test]
    fn success_threshold_is_closed() {
        let g = line();
        assert_eq!(success(&["C"], "C", &g, 3.0).unwrap(), 1.0);
        // B to C is exactly 3 m.
        assert_eq!(success(&["B"], "C", &g, 3.0).unwrap(), 1.0);
        assert_eq!(success(&["B"], "C", &g, 2.9999).unwrap(), 0.0);
        assert_eq!(success(&["A"], "D", &g, 3.0).unwrap(), 0.0);
    }

    #[test]
    fn oracle_success_passes_through() {
        let g = line();
        assert_eq!(
            oracle_success(&["A", "B", "C", "D"], "B", &g, 3.0).unwrap(),
            1.0
        );
        assert_eq!(oracle_success(&["A", "B"], "D", &g, 3.0).unwrap(), 0.0);
    }

    #[test]
    fn spl_cases() {
        assert_eq!(spl(1.0, 5.0, 5.0), 1.0);
        assert_eq!(spl(1.0, 5.0, 10.0), 0.5);
        assert_eq!(spl(0.0, 5.0, 5.0), 0.0);
        assert_eq!(spl(1.0, 0.0, 0.0), 1.0);
    }

    #[test]
    fn identical_paths_score_one() {
        let g = line();
        let p = ["A", "B", "C"];
        assert_eq!(ndtw(&p, &p, &g, 3.0).unwrap(), 1.0);
        assert_eq!(cls(&p, &p, &g, 3.0).unwrap(), 1.0);
        assert_eq!(sdtw(0.0, 0.7), 0.0);
        assert_eq!(sdtw(1.0, 0.7), 0.7);
    }

    #[test]
    fn dtw_small_case() {
        // P = [0, 2], R = [0, 1, 2] on scalars: align 0-0, 0-1 or 2-1, 2-2 -> cost 1.
        let p = [0.0f64, 2.0];
        let r = [0.0f64, 1.0, 2.0];
        assert_eq!(dtw(2, 3, |i, j| (p[i] - r[j]).abs()), 1.0);
        assert_eq!(dtw(0, 0, |_, _| 1.0), 0.0);
        assert!(dtw(0, 2, |_, _| 1.0).is_infinite());
    }
}
