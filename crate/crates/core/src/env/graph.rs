use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

use super::{euclidean_distance, EnvError, Position, Result, Viewpoint};

/// Undirected viewpoint graph with Euclidean edge weights.
///
/// Immutable once built. All-pairs geodesic distances are computed at
/// construction, which also verifies connectivity.
#[derive(Debug, Clone)]
pub struct NavGraph {
    viewpoints: Vec<Viewpoint>,
    index: HashMap<String, usize>,
    /// Neighbors per node, sorted by id.
    adjacency: Vec<Vec<(usize, f64)>>,
    edge_count: usize,
    distances: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Frontier {
    cost: f64,
    node: usize,
}

impl Eq for Frontier {}

impl Ord for Frontier {
    fn cmp(&self, other: &Self) -> Ordering {
        // Min-heap on cost, then node index for determinism.
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl NavGraph {
    /// Builds a graph. Edge weights are recomputed from positions.
    pub fn new(viewpoints: Vec<Viewpoint>, edges: &[(String, String)]) -> Result<Self> {
        if viewpoints.is_empty() {
            return Err(EnvError::GraphInvariant("graph has no viewpoints".into()));
        }
        let mut index = HashMap::with_capacity(viewpoints.len());
        for (i, vp) in viewpoints.iter().enumerate() {
            if !vp.position.is_finite() {
                return Err(EnvError::GraphInvariant(format!(
                    "viewpoint '{}' has a non-finite position",
                    vp.id
                )));
            }
            if index.insert(vp.id.clone(), i).is_some() {
                return Err(EnvError::GraphInvariant(format!(
                    "duplicate viewpoint id '{}'",
                    vp.id
                )));
            }
        }

        let mut adjacency: Vec<Vec<(usize, f64)>> = vec![Vec::new(); viewpoints.len()];
        let mut edge_count = 0;
        for (a, b) in edges {
            let lookup = |id: &String| {
                index.get(id).copied().ok_or_else(|| {
                    EnvError::GraphInvariant(format!("edge {a}-{b} references unknown id '{id}'"))
                })
            };
            let (ia, ib) = (lookup(a)?, lookup(b)?);
            if ia == ib {
                return Err(EnvError::GraphInvariant(format!("self-loop on '{a}'")));
            }
            if adjacency[ia].iter().any(|&(n, _)| n == ib) {
                continue;
            }
            let w = euclidean_distance(&viewpoints[ia].position, &viewpoints[ib].position);
            adjacency[ia].push((ib, w));
            adjacency[ib].push((ia, w));
            edge_count += 1;
        }
        for list in &mut adjacency {
            list.sort_by(|x, y| viewpoints[x.0].id.cmp(&viewpoints[y.0].id));
        }

        let mut graph = Self {
            viewpoints,
            index,
            adjacency,
            edge_count,
            distances: Vec::new(),
        };
        let n = graph.viewpoints.len();
        let mut distances = Vec::with_capacity(n * n);
        for source in 0..n {
            let (dist, _) = graph.dijkstra(source);
            distances.extend(dist);
        }
        if let Some(pos) = distances.iter().position(|d| d.is_infinite()) {
            return Err(EnvError::GraphInvariant(format!(
                "graph is disconnected: no path from '{}' to '{}'",
                graph.viewpoints[pos / n].id,
                graph.viewpoints[pos % n].id
            )));
        }
        graph.distances = distances;
        Ok(graph)
    }

    fn dijkstra(&self, source: usize) -> (Vec<f64>, Vec<Option<usize>>) {
        let n = self.viewpoints.len();
        let mut dist = vec![f64::INFINITY; n];
        let mut prev = vec![None; n];
        let mut heap = BinaryHeap::new();
        dist[source] = 0.0;
        heap.push(Frontier {
            cost: 0.0,
            node: source,
        });
        while let Some(Frontier { cost, node }) = heap.pop() {
            if cost > dist[node] {
                continue;
            }
            for &(next, w) in &self.adjacency[node] {
                let candidate = cost + w;
                if candidate < dist[next] {
                    dist[next] = candidate;
                    prev[next] = Some(node);
                    heap.push(Frontier {
                        cost: candidate,
                        node: next,
                    });
                }
            }
        }
        (dist, prev)
    }

    fn idx(&self, id: &str) -> Result<usize> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| EnvError::UnknownViewpoint(id.to_owned()))
    }

    pub fn len(&self) -> usize {
        self.viewpoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.viewpoints.is_empty()
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn viewpoints(&self) -> &[Viewpoint] {
        &self.viewpoints
    }

    pub fn viewpoint(&self, id: &str) -> Result<&Viewpoint> {
        Ok(&self.viewpoints[self.idx(id)?])
    }

    pub fn position(&self, id: &str) -> Result<&Position> {
        Ok(&self.viewpoint(id)?.position)
    }

    /// Navigable neighbors of `id`, ordered by id.
    pub fn neighbors(&self, id: &str) -> Result<impl Iterator<Item = &Viewpoint> + '_> {
        let i = self.idx(id)?;
        Ok(self.adjacency[i].iter().map(|&(n, _)| &self.viewpoints[n]))
    }

    /// Edges as `(a, b, weight)` with `a < b` by id, sorted.
    pub fn edges(&self) -> Vec<(&str, &str, f64)> {
        let mut out = Vec::with_capacity(self.edge_count);
        for (i, list) in self.adjacency.iter().enumerate() {
            for &(j, w) in list {
                let (a, b) = (&self.viewpoints[i].id, &self.viewpoints[j].id);
                if a < b {
                    out.push((a.as_str(), b.as_str(), w));
                }
            }
        }
        out.sort_by(|x, y| (x.0, x.1).cmp(&(y.0, y.1)));
        out
    }

    pub fn edge_weight(&self, a: &str, b: &str) -> Result<Option<f64>> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        Ok(self.adjacency[ia]
            .iter()
            .find(|&&(n, _)| n == ib)
            .map(|&(_, w)| w))
    }

    pub fn are_adjacent(&self, a: &str, b: &str) -> Result<bool> {
        Ok(self.edge_weight(a, b)?.is_some())
    }

    /// Shortest-path length over edge weights.
    pub fn geodesic_distance(&self, a: &str, b: &str) -> Result<f64> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        Ok(self.distances[ia * self.viewpoints.len() + ib])
    }

    /// One shortest path from `a` to `b`, endpoints included.
    pub fn shortest_path(&self, a: &str, b: &str) -> Result<Vec<String>> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (_, prev) = self.dijkstra(ia);
        let mut path = vec![ib];
        let mut cur = ib;
        while let Some(p) = prev[cur] {
            path.push(p);
            cur = p;
        }
        path.reverse();
        Ok(path
            .into_iter()
            .map(|i| self.viewpoints[i].id.clone())
            .collect())
    }
}
