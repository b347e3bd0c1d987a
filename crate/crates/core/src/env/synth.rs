//! Seeded synthetic worlds for desk-scale testing.
//!
//! Every viewpoint carries one unique landmark ("<color> <object>"). The
//! caption of a directed edge `u -> v` mentions the landmark at `v`, and
//! each instruction names the landmarks along its ground-truth path in order,
//! so the correct imagination label of every step is known by construction.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{CaptionRow, CaptionTable, EnvError, Episode, NavGraph, Position, Result, Viewpoint};

const COLORS: [&str; 10] = [
    "red", "blue", "green", "yellow", "white", "black", "brown", "gray", "orange", "purple",
];

const OBJECTS: [&str; 20] = [
    "sofa",
    "lamp",
    "table",
    "chair",
    "mirror",
    "painting",
    "plant",
    "bookshelf",
    "piano",
    "staircase",
    "fireplace",
    "rug",
    "statue",
    "door",
    "window",
    "bed",
    "desk",
    "cabinet",
    "clock",
    "vase",
];

const SCENES: [&str; 8] = [
    "a hallway",
    "a living room",
    "a kitchen",
    "a bedroom",
    "a bathroom",
    "an office",
    "a dining room",
    "a lobby",
];

const OPENERS: [&str; 3] = ["Walk towards the", "Head to the", "Go toward the"];
const MIDDLES: [&str; 3] = ["pass the", "continue past the", "walk by the"];
const CLOSERS: [&str; 3] = ["stop at the", "wait by the", "stop next to the"];

/// Grid spacing in meters. With the jitter below, any two viewpoints are
/// more than 3 m apart.
const SPACING: f64 = 5.0;
const JITTER: f64 = 0.9;
const FLOOR_HEIGHT: f64 = 3.5;
const ROWS_PER_FLOOR: usize = 3;

/// Largest world the landmark vocabulary can cover.
pub const MAX_VIEWPOINTS: usize = COLORS.len() * OBJECTS.len();

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub n_viewpoints: usize,
    /// Each viewpoint links to at least this many nearest neighbors.
    pub branching: usize,
    pub n_episodes: usize,
    /// Upper bound on moves per ground-truth path.
    pub max_path_moves: usize,
}

impl SyntheticConfig {
    pub fn new(seed: u64, n_viewpoints: usize, branching: usize) -> Self {
        Self {
            seed,
            n_viewpoints,
            branching,
            n_episodes: 50,
            max_path_moves: 6,
        }
    }

    pub fn with_episodes(mut self, n_episodes: usize) -> Self {
        self.n_episodes = n_episodes;
        self
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    pub scan: String,
    pub graph: NavGraph,
    pub captions: CaptionTable,
    pub episodes: Vec<Episode>,
    /// Landmark planted at each viewpoint.
    pub viewpoint_landmarks: BTreeMap<String, String>,
    /// Landmarks each instruction mentions, in order, keyed by episode id.
    pub episode_landmarks: BTreeMap<String, Vec<String>>,
}

pub fn gen_synthetic_world(cfg: &SyntheticConfig) -> Result<SyntheticWorld> {
    if cfg.n_viewpoints < 2 {
        return Err(EnvError::InvalidConfig(
            "n_viewpoints must be at least 2".into(),
        ));
    }
    if cfg.n_viewpoints > MAX_VIEWPOINTS {
        return Err(EnvError::InvalidConfig(format!(
            "n_viewpoints must be at most {MAX_VIEWPOINTS}"
        )));
    }
    if cfg.branching == 0 {
        return Err(EnvError::InvalidConfig(
            "branching must be at least 1".into(),
        ));
    }
    if cfg.max_path_moves == 0 {
        return Err(EnvError::InvalidConfig(
            "max_path_moves must be at least 1".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let scan = format!("synth-{}", cfg.seed);
    let n = cfg.n_viewpoints;

    let cols = (n as f64).sqrt().ceil() as usize;
    let viewpoints: Vec<Viewpoint> = (0..n)
        .map(|i| {
            let (row, col) = (i / cols, i % cols);
            let x = col as f64 * SPACING + rng.gen_range(-JITTER..JITTER);
            let y = row as f64 * SPACING + rng.gen_range(-JITTER..JITTER);
            let z = (row / ROWS_PER_FLOOR) as f64 * FLOOR_HEIGHT;
            Viewpoint {
                id: format!("vp{i:03}"),
                position: Position::new(x, y, z),
            }
        })
        .collect();

    let edges = link_nearest(&viewpoints, cfg.branching);
    let graph = NavGraph::new(viewpoints, &edges)?;

    let mut vocabulary: Vec<String> = COLORS
        .iter()
        .flat_map(|c| OBJECTS.iter().map(move |o| format!("{c} {o}")))
        .collect();
    vocabulary.shuffle(&mut rng);
    let viewpoint_landmarks: BTreeMap<String, String> = graph
        .viewpoints()
        .iter()
        .zip(vocabulary)
        .map(|(vp, lm)| (vp.id.clone(), lm))
        .collect();
    let scenes: BTreeMap<&str, &str> = graph
        .viewpoints()
        .iter()
        .map(|vp| (vp.id.as_str(), *SCENES.choose(&mut rng).expect("non-empty")))
        .collect();

    let mut captions = CaptionTable::new();
    for (a, b, _) in graph.edges() {
        for (from, to) in [(a, b), (b, a)] {
            captions.insert(CaptionRow {
                scan: scan.clone(),
                from_viewpoint: from.to_owned(),
                to_viewpoint: to.to_owned(),
                caption: format!("{} with a {}", scenes[to], viewpoint_landmarks[to]),
            })?;
        }
    }

    let ids: Vec<&str> = graph.viewpoints().iter().map(|vp| vp.id.as_str()).collect();
    let mut episodes = Vec::with_capacity(cfg.n_episodes);
    let mut episode_landmarks = BTreeMap::new();
    for e in 0..cfg.n_episodes {
        let gt_path = sample_path(&graph, &ids, cfg.max_path_moves, &mut rng)?;
        let landmarks: Vec<String> = gt_path[1..]
            .iter()
            .map(|id| viewpoint_landmarks[id].clone())
            .collect();
        let instruction = compose_instruction(&landmarks, &mut rng);
        let heading = (rng.gen_range(0.0..360.0f64) * 10.0).round() / 10.0 % 360.0;
        let id = format!("{scan}-ep{e:03}");
        episode_landmarks.insert(id.clone(), landmarks);
        episodes.push(Episode {
            id,
            scan: scan.clone(),
            instruction,
            gt_path,
            initial_heading: Some(heading),
        });
    }

    Ok(SyntheticWorld {
        scan,
        graph,
        captions,
        episodes,
        viewpoint_landmarks,
        episode_landmarks,
    })
}

/// k-nearest-neighbor linking, then bridging of any remaining components.
fn link_nearest(viewpoints: &[Viewpoint], k: usize) -> Vec<(String, String)> {
    let n = viewpoints.len();
    let dist = |i: usize, j: usize| {
        super::euclidean_distance(&viewpoints[i].position, &viewpoints[j].position)
    };
    let mut pairs = std::collections::BTreeSet::new();
    for i in 0..n {
        let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        others.sort_by(|&a, &b| dist(i, a).total_cmp(&dist(i, b)).then(a.cmp(&b)));
        for &j in others.iter().take(k) {
            pairs.insert((i.min(j), i.max(j)));
        }
    }

    // Union-find over the kNN edges, then join components greedily.
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for &(a, b) in &pairs {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        parent[ra] = rb;
    }
    loop {
        let root0 = find(&mut parent, 0);
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..n {
            if find(&mut parent, i) != root0 {
                continue;
            }
            for j in 0..n {
                if find(&mut parent, j) == root0 {
                    continue;
                }
                let d = dist(i, j);
                if best.is_none_or(|(bd, _, _)| d < bd) {
                    best = Some((d, i, j));
                }
            }
        }
        match best {
            Some((_, i, j)) => {
                pairs.insert((i.min(j), i.max(j)));
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                parent[rj] = ri;
            }
            None => break,
        }
    }

    pairs
        .into_iter()
        .map(|(a, b)| (viewpoints[a].id.clone(), viewpoints[b].id.clone()))
        .collect()
}

fn sample_path(
    graph: &NavGraph,
    ids: &[&str],
    max_moves: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<String>> {
    // Rejection sampling; the fallback below keeps generation total.
    for _ in 0..64 {
        let start = *ids.choose(rng).expect("non-empty");
        let goal = *ids.choose(rng).expect("non-empty");
        if start == goal {
            continue;
        }
        let path = graph.shortest_path(start, goal)?;
        if path.len() - 1 <= max_moves {
            return Ok(path);
        }
    }
    let start = *ids.choose(rng).expect("non-empty");
    let next = graph
        .neighbors(start)?
        .next()
        .expect("connected graph with two or more viewpoints");
    Ok(vec![start.to_owned(), next.id.clone()])
}

fn compose_instruction(landmarks: &[String], rng: &mut ChaCha8Rng) -> String {
    let opener = OPENERS.choose(rng).expect("non-empty");
    match landmarks {
        [] => "Stop here.".to_owned(),
        [only] => format!("{opener} {only} and stop there."),
        [first, middle @ .., last] => {
            let mut parts = vec![format!("{opener} {first}")];
            for lm in middle {
                parts.push(format!("{} {lm}", MIDDLES.choose(rng).expect("non-empty")));
            }
            let closer = CLOSERS.choose(rng).expect("non-empty");
            format!("{}, and {closer} {last}.", parts.join(", "))
        }
    }
}

/// All vocabulary landmarks, for checks that scan generated text.
pub fn landmark_vocabulary() -> Vec<String> {
    COLORS
        .iter()
        .flat_map(|c| OBJECTS.iter().map(move |o| format!("{c} {o}")))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_viewpoints_give_one_step_episodes() {
        let world = gen_synthetic_world(&SyntheticConfig::new(3, 2, 1).with_episodes(10)).unwrap();
        assert_eq!(world.graph.edge_count(), 1);
        for ep in &world.episodes {
            assert_eq!(ep.gt_path.len(), 2);
        }
    }

    #[test]
    fn rejects_bad_config() {
        assert!(gen_synthetic_world(&SyntheticConfig::new(1, 1, 3)).is_err());
        assert!(gen_synthetic_world(&SyntheticConfig::new(1, 5, 0)).is_err());
        assert!(gen_synthetic_world(&SyntheticConfig::new(1, MAX_VIEWPOINTS + 1, 2)).is_err());
    }

    #[test]
    fn min_spacing_exceeds_success_radius() {
        let world = gen_synthetic_world(&SyntheticConfig::new(9, 40, 3)).unwrap();
        let vps = world.graph.viewpoints();
        for (i, a) in vps.iter().enumerate() {
            for b in &vps[i + 1..] {
                assert!(super::super::euclidean_distance(&a.position, &b.position) > 3.0);
            }
        }
    }

    #[test]
    fn each_caption_names_exactly_one_landmark() {
        let vocab = landmark_vocabulary();
        let world = gen_synthetic_world(&SyntheticConfig::new(4, 30, 3)).unwrap();
        for row in world.captions.rows() {
            let hits: Vec<_> = vocab
                .iter()
                .filter(|lm| row.caption.contains(lm.as_str()))
                .collect();
            assert_eq!(hits, [&world.viewpoint_landmarks[&row.to_viewpoint]]);
        }
    }

    #[test]
    fn instructions_mention_landmarks_in_order() {
        let world = gen_synthetic_world(&SyntheticConfig::new(5, 25, 3)).unwrap();
        for ep in &world.episodes {
            let mut cursor = 0;
            for lm in &world.episode_landmarks[&ep.id] {
                let at = ep.instruction[cursor..]
                    .find(lm.as_str())
                    .expect("landmark in order");
                cursor += at + lm.len();
            }
        }
    }
}
