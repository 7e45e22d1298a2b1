//! Trajectories on a Delaunay complex with two holes.

use std::collections::BTreeMap;

use delaunator::{triangulate, Point};
use petgraph::algo::astar;
use petgraph::graph::{NodeIndex, UnGraph};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::complex::{build_complex, SimplicialComplex};
use crate::dense::Mat;
use crate::error::{GsanError, Result};
use crate::filters::CochainBundle;
use crate::operators::betti_number;

use super::{invalid, DatasetParams, Labels, Split, TaskDataset};

/// Hole centers: bottom-left and top-right.
pub const HOLE_CENTERS: [[f64; 2]; 2] = [[0.25, 0.25], [0.75, 0.75]];
const ATTEMPTS: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowParams {
    pub n_points: usize,
    pub n_holes: usize,
    pub n_traj: usize,
    pub hole_radius: f64,
}

impl Default for FlowParams {
    fn default() -> Self {
        FlowParams {
            n_points: 200,
            n_holes: 2,
            n_traj: 1000,
            hole_radius: 0.1,
        }
    }
}

impl FlowParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_points < 50 {
            return Err(invalid("dataset.n_points", "must be at least 50"));
        }
        if self.n_holes != 2 {
            return Err(invalid("dataset.n_holes", "only two holes are supported"));
        }
        if self.n_traj < 2 {
            return Err(invalid("dataset.n_traj", "must be at least 2"));
        }
        if !(self.hole_radius > 0.0 && self.hole_radius < 0.2) {
            return Err(invalid("dataset.hole_radius", "must lie in (0, 0.2)"));
        }
        Ok(())
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
    };
    dist(p, [a[0] + t * dx, a[1] + t * dy])
}

fn contains(p: [f64; 2], t: [[f64; 2]; 3]) -> bool {
    let cross = |a: [f64; 2], b: [f64; 2]| (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
    let d = [cross(t[0], t[1]), cross(t[1], t[2]), cross(t[2], t[0])];
    d.iter().all(|&x| x >= 0.0) || d.iter().all(|&x| x <= 0.0)
}

fn intersects_disc(t: [[f64; 2]; 3], c: [f64; 2], r: f64) -> bool {
    contains(c, t) || (0..3).any(|i| segment_distance(c, t[i], t[(i + 1) % 3]) < r)
}

/// A holed Delaunay complex and the positions of its (dense) vertices.
pub(crate) struct HoledComplex {
    pub complex: SimplicialComplex,
    pub positions: Vec<[f64; 2]>,
}

fn carve(points: &[[f64; 2]], radius: f64) -> Option<HoledComplex> {
    let pts: Vec<Point> = points.iter().map(|p| Point { x: p[0], y: p[1] }).collect();
    let tri = triangulate(&pts);
    if tri.triangles.is_empty() {
        return None;
    }
    let kept: Vec<Vec<usize>> = tri
        .triangles
        .chunks_exact(3)
        .filter(|t| {
            let corners = [points[t[0]], points[t[1]], points[t[2]]];
            HOLE_CENTERS.iter().all(|&c| !intersects_disc(corners, c, radius))
        })
        .map(|t| t.to_vec())
        .collect();
    let complex = build_complex(&kept, 2).ok()?;
    let positions = complex.vertex_labels().iter().map(|&v| points[v]).collect();
    Some(HoledComplex { complex, positions })
}

pub(crate) fn holed_delaunay(rng: &mut ChaCha8Rng, n_points: usize, radius: f64) -> Result<HoledComplex> {
    for _ in 0..ATTEMPTS {
        let points: Vec<[f64; 2]> = (0..n_points).map(|_| [rng.gen::<f64>(), rng.gen::<f64>()]).collect();
        let Some(h) = carve(&points, radius) else {
            continue;
        };
        if betti_number(&h.complex, 0)? == 1 && betti_number(&h.complex, 1)? == 2 {
            return Ok(h);
        }
    }
    Err(GsanError::DegenerateGeometry(format!(
        "no connected two-hole complex from {n_points} points in {ATTEMPTS} attempts"
    )))
}

fn nearest(positions: &[[f64; 2]], target: [f64; 2], count: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..positions.len()).collect();
    idx.sort_by(|&a, &b| {
        dist(positions[a], target)
            .total_cmp(&dist(positions[b], target))
            .then(a.cmp(&b))
    });
    idx.truncate(count);
    idx
}

/// Shortest path by jittered Euclidean edge length.
fn route(x: &SimplicialComplex, positions: &[[f64; 2]], from: usize, to: usize, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
    let mut g: UnGraph<(), f64> = UnGraph::with_capacity(positions.len(), x.num_simplices(1));
    for _ in 0..positions.len() {
        g.add_node(());
    }
    for e in x.simplices(1) {
        let w = dist(positions[e[0]], positions[e[1]]) * rng.gen_range(0.8..1.2);
        g.add_edge(NodeIndex::new(e[0]), NodeIndex::new(e[1]), w);
    }
    let goal = NodeIndex::new(to);
    astar(&g, NodeIndex::new(from), |n| n == goal, |e| *e.weight(), |_| 0.0)
        .map(|(_, path)| path.into_iter().map(|n| n.index()).collect())
        .ok_or_else(|| GsanError::DegenerateGeometry(format!("no path from {from} to {to}")))
}

/// Edge flow of a vertex path: `+1` when an edge is walked from its lower to
/// its higher vertex, `-1` otherwise, summed over repeated traversals.
pub fn path_flow(x: &SimplicialComplex, path: &[usize]) -> Result<Vec<f64>> {
    let mut flow = vec![0.0; x.num_simplices(1)];
    for w in path.windows(2) {
        let (a, b) = (w[0].min(w[1]), w[0].max(w[1]));
        let e = x
            .index_of(&[a, b])
            .ok_or_else(|| GsanError::MissingFace(vec![a, b]))?;
        flow[e] += if w[0] < w[1] { 1.0 } else { -1.0 };
    }
    Ok(flow)
}

pub fn generate_synthetic_flow(params: &FlowParams, seed: u64) -> Result<TaskDataset> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let HoledComplex { complex, positions } = holed_delaunay(&mut rng, params.n_points, params.hole_radius)?;
    let starts = nearest(&positions, [0.0, 1.0], 5);
    let ends = nearest(&positions, [1.0, 0.0], 5);
    // Waypoints sit on the side of each hole facing away from the diagonal.
    let sectors = [(std::f64::consts::PI, 1.5 * std::f64::consts::PI), (0.0, 0.5 * std::f64::consts::PI)];
    let sizes = complex.sizes();
    let mut inputs = Vec::with_capacity(params.n_traj);
    let mut labels = Vec::with_capacity(params.n_traj);
    for _ in 0..params.n_traj {
        let hole = rng.gen_range(0..2);
        let start = starts[rng.gen_range(0..starts.len())];
        let end = ends[rng.gen_range(0..ends.len())];
        let phi = rng.gen_range(sectors[hole].0..sectors[hole].1);
        let d = rng.gen_range(params.hole_radius..2.0 * params.hole_radius);
        let c = HOLE_CENTERS[hole];
        let way = nearest(&positions, [c[0] + d * phi.cos(), c[1] + d * phi.sin()], 1)[0];
        let mut path = route(&complex, &positions, start, way, &mut rng)?;
        path.extend(route(&complex, &positions, way, end, &mut rng)?.into_iter().skip(1));
        let flow = path_flow(&complex, &path)?;
        inputs.push(CochainBundle::new(vec![
            Mat::zeros(sizes[0], 1),
            Mat::col_vec(&flow),
            Mat::zeros(sizes[2], 1),
        ])?);
        labels.push(hole);
    }
    let split = Split::shuffled(params.n_traj, 0.8, 0.1, &mut rng);
    Ok(TaskDataset {
        params: DatasetParams::Trajectory(params.clone()),
        seed,
        complex,
        inputs,
        labels: Labels::Classes { labels },
        mask: None,
        orientations: BTreeMap::new(),
        split,
    })
}
