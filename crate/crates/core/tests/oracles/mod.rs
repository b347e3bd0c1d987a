#![allow(dead_code)]
//! Slow, direct reimplementations to check the library against.

use std::collections::HashMap;

use navcot::env::{NavGraph, Position};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Exhaustive minimum over every monotone alignment from (0,0) to (n-1,m-1).
pub fn brute_dtw(n: usize, m: usize, cost: &dyn Fn(usize, usize) -> f64) -> f64 {
    fn walk(i: usize, j: usize, n: usize, m: usize, cost: &dyn Fn(usize, usize) -> f64) -> f64 {
        let here = cost(i, j);
        if i == n - 1 && j == m - 1 {
            return here;
        }
        let mut best = f64::INFINITY;
        if i + 1 < n {
            best = best.min(walk(i + 1, j, n, m, cost));
        }
        if j + 1 < m {
            best = best.min(walk(i, j + 1, n, m, cost));
        }
        if i + 1 < n && j + 1 < m {
            best = best.min(walk(i + 1, j + 1, n, m, cost));
        }
        here + best
    }
    walk(0, 0, n, m, cost)
}

/// All-pairs shortest paths by Floyd-Warshall over the graph's edge list.
pub struct Apsp {
    index: HashMap<String, usize>,
    d: Vec<Vec<f64>>,
}

impl Apsp {
    pub fn new(g: &NavGraph) -> Self {
        let index: HashMap<String, usize> = g
            .viewpoints()
            .iter()
            .enumerate()
            .map(|(i, v)| (v.id.clone(), i))
            .collect();
        let n = index.len();
        let mut d = vec![vec![f64::INFINITY; n]; n];
        for (i, row) in d.iter_mut().enumerate() {
            row[i] = 0.0;
        }
        for (a, b, _) in g.edges() {
            let (pa, pb) = (g.position(a).unwrap(), g.position(b).unwrap());
            let w = dist(pa, pb);
            d[index[a]][index[b]] = w;
            d[index[b]][index[a]] = w;
        }
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    let via = d[i][k] + d[k][j];
                    if via < d[i][j] {
                        d[i][j] = via;
                    }
                }
            }
        }
        Self { index, d }
    }

    pub fn get(&self, a: &str, b: &str) -> f64 {
        self.d[self.index[a]][self.index[b]]
    }
}

pub fn dist(a: &Position, b: &Position) -> f64 {
    ((a.x - b.x).powi(2) + (a.y - b.y).powi(2) + (a.z - b.z).powi(2)).sqrt()
}

pub fn path_length(path: &[String], g: &NavGraph) -> f64 {
    path.windows(2)
        .map(|w| dist(g.position(&w[0]).unwrap(), g.position(&w[1]).unwrap()))
        .sum()
}

/// Coverage-weighted length score written straight from its definition.
pub fn cls_direct(
    path: &[String],
    reference: &[String],
    g: &NavGraph,
    apsp: &Apsp,
    d_th: f64,
) -> f64 {
    let mut pc = 0.0;
    for r in reference {
        let nearest = path
            .iter()
            .map(|p| apsp.get(p, r))
            .fold(f64::INFINITY, f64::min);
        pc += (-nearest / d_th).exp();
    }
    pc /= reference.len() as f64;
    let pl = path_length(path, g);
    let rl = path_length(reference, g);
    if rl == 0.0 {
        return pc;
    }
    let epl = pc * rl;
    let ls = epl / (epl + (epl - pl).abs());
    pc * ls
}

pub fn spl_direct(
    path: &[String],
    goal: &str,
    start: &str,
    g: &NavGraph,
    apsp: &Apsp,
    d_th: f64,
) -> f64 {
    let s = if apsp.get(path.last().unwrap(), goal) <= d_th {
        1.0
    } else {
        0.0
    };
    let l = apsp.get(start, goal);
    let p = path_length(path, g);
    if s == 0.0 {
        0.0
    } else if l == 0.0 && p == 0.0 {
        1.0
    } else {
        l / p.max(l)
    }
}

/// Shortest simple-path length by exhaustive depth-first search.
pub fn brute_geodesic(g: &NavGraph, a: &str, b: &str) -> f64 {
    fn dfs(g: &NavGraph, here: &str, goal: &str, seen: &mut Vec<String>, acc: f64, best: &mut f64) {
        if acc >= *best {
            return;
        }
        if here == goal {
            *best = acc;
            return;
        }
        let next: Vec<String> = g.neighbors(here).unwrap().map(|v| v.id.clone()).collect();
        for n in next {
            if seen.contains(&n) {
                continue;
            }
            let w = dist(g.position(here).unwrap(), g.position(&n).unwrap());
            seen.push(n.clone());
            dfs(g, &n, goal, seen, acc + w, best);
            seen.pop();
        }
    }
    let mut best = f64::INFINITY;
    dfs(g, a, b, &mut vec![a.to_owned()], 0.0, &mut best);
    best
}

/// Relative heading and elevation by rotating the offset into the agent frame.
pub fn trig_relative(from: &Position, heading: f64, elevation: f64, to: &Position) -> (f64, f64) {
    let (dx, dy, dz) = (to.x - from.x, to.y - from.y, to.z - from.z);
    let h = heading.to_radians();
    // Agent frame: forward along (sin h, cos h), right along (cos h, -sin h).
    let forward = dx * h.sin() + dy * h.cos();
    let right = dx * h.cos() - dy * h.sin();
    let mut rel_h = right.atan2(forward).to_degrees();
    if rel_h <= -180.0 {
        rel_h += 360.0;
    }
    let rel_e = dz.atan2(dx.hypot(dy)).to_degrees() - elevation;
    (rel_h, rel_e)
}

/// Phrase for a relative pose, from the bin table.
pub fn direction_oracle(h: f64, e: f64) -> &'static str {
    if e > 30.0 {
        "go up"
    } else if e < -30.0 {
        "go down"
    } else if (-45.0..=45.0).contains(&h) {
        "go forward"
    } else if h > 45.0 && h <= 135.0 {
        "turn right"
    } else if (-135.0..-45.0).contains(&h) {
        "turn left"
    } else {
        "turn around"
    }
}

/// Uniform random walk over stop plus neighbors; returns whether it ends at
/// the goal (distinct synthetic viewpoints are always farther apart than the
/// success radius).
pub fn random_walk_success(
    g: &NavGraph,
    start: &str,
    goal: &str,
    max_steps: usize,
    rng: &mut ChaCha8Rng,
) -> bool {
    let mut here = start.to_owned();
    for _ in 0..max_steps {
        let next: Vec<String> = g.neighbors(&here).unwrap().map(|v| v.id.clone()).collect();
        let pick = rng.gen_range(0..=next.len());
        if pick == 0 {
            break;
        }
        here = next[pick - 1].clone();
    }
    here == goal
}
