//! Clockwise versus counter-clockwise flows around the hole of an annulus.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::complex::{build_complex, SimplicialComplex};
use crate::dense::Mat;
use crate::error::Result;
use crate::filters::CochainBundle;

use super::{invalid, DatasetParams, Labels, Split, TaskDataset};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CyclicParams {
    /// Triangle strips between consecutive vertex rings.
    pub n_rings: usize,
    pub per_ring: usize,
    pub n_traj: usize,
    /// Standard deviation of the per-edge Gaussian noise.
    pub noise: f64,
    /// Re-orient the edges of every test sample at random.
    pub flip_test: bool,
}

impl Default for CyclicParams {
    fn default() -> Self {
        CyclicParams {
            n_rings: 2,
            per_ring: 16,
            n_traj: 400,
            noise: 0.5,
            flip_test: true,
        }
    }
}

impl CyclicParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_rings < 1 {
            return Err(invalid("dataset.n_rings", "must be at least 1"));
        }
        if self.per_ring < 3 {
            return Err(invalid("dataset.per_ring", "must be at least 3"));
        }
        if self.n_traj < 2 {
            return Err(invalid("dataset.n_traj", "must be at least 2"));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(invalid("dataset.noise", "must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Annulus with `n_rings + 1` vertex rings of `per_ring` vertices, each
/// ring rotated half a step from the previous one. Vertex labels are
/// shuffled so the reference orientation has no relation to the angle.
/// Returns the complex and the angle of every dense vertex.
pub(crate) fn annulus(n_rings: usize, per_ring: usize, rng: &mut impl Rng) -> Result<(SimplicialComplex, Vec<f64>)> {
    let m = per_ring;
    let n = (n_rings + 1) * m;
    let mut labels: Vec<usize> = (0..n).collect();
    labels.shuffle(rng);
    let id = |r: usize, i: usize| labels[r * m + i % m];
    let angle = |r: usize, i: usize| 2.0 * PI * (i as f64 + 0.5 * (r % 2) as f64) / m as f64;
    let mut tris = Vec::with_capacity(2 * n_rings * m);
    for r in 0..n_rings {
        let s = r % 2;
        for i in 0..m {
            tris.push(vec![id(r, i), id(r, i + 1), id(r + 1, i + s)]);
            tris.push(vec![id(r + 1, i + s), id(r + 1, i + s + 1), id(r, i + 1)]);
        }
    }
    let x = build_complex(&tris, 2)?;
    let mut theta_by_label = vec![0.0; n];
    for r in 0..=n_rings {
        for i in 0..m {
            theta_by_label[id(r, i)] = angle(r, i);
        }
    }
    let theta = x.vertex_labels().iter().map(|&l| theta_by_label[l]).collect();
    Ok((x, theta))
}

fn wrap(a: f64) -> f64 {
    let t = a.rem_euclid(2.0 * PI);
    if t > PI {
        t - 2.0 * PI
    } else {
        t
    }
}

/// Noiseless counter-clockwise flow: the wrapped angular increment along
/// each edge's reference orientation, in units of one ring step.
pub fn loop_flow(x: &SimplicialComplex, theta: &[f64], per_ring: usize) -> Vec<f64> {
    let step = 2.0 * PI / per_ring as f64;
    x.simplices(1)
        .iter()
        .map(|e| wrap(theta[e[1]] - theta[e[0]]) / step)
        .collect()
}

pub fn generate_cyclic_flow(params: &CyclicParams, seed: u64) -> Result<TaskDataset> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (complex, theta) = annulus(params.n_rings, params.per_ring, &mut rng)?;
    let base = loop_flow(&complex, &theta, params.per_ring);
    let noise = Normal::new(0.0, params.noise).expect("validated");
    let sizes = complex.sizes();
    let nodes = Mat::from_fn(sizes[0], 2, |i, j| if j == 1 { theta[i] / PI - 1.0 } else { 0.0 });
    let mut inputs = Vec::with_capacity(params.n_traj);
    let mut labels = Vec::with_capacity(params.n_traj);
    for _ in 0..params.n_traj {
        let label = rng.gen_range(0..2);
        let dir = if label == 0 { 1.0 } else { -1.0 };
        let amp = rng.gen_range(0.5..1.5);
        let flow: Vec<f64> = base.iter().map(|&b| dir * amp * b + noise.sample(&mut rng)).collect();
        let edges = Mat::from_fn(sizes[1], 2, |i, j| if j == 0 { flow[i] } else { 0.0 });
        inputs.push(CochainBundle::new(vec![nodes.clone(), edges, Mat::zeros(sizes[2], 2)])?);
        labels.push(label);
    }
    let split = Split::shuffled(params.n_traj, 0.8, 0.1, &mut rng);
    let mut orientations = BTreeMap::new();
    if params.flip_test {
        for &s in &split.test {
            let signs: Vec<f64> = (0..sizes[1])
                .map(|_| if rng.gen_bool(0.5) { -1.0 } else { 1.0 })
                .collect();
            let e = inputs[s].order_mut(1);
            for (i, &sg) in signs.iter().enumerate() {
                for v in e.row_mut(i) {
                    *v *= sg;
                }
            }
            orientations.insert(s, signs);
        }
    }
    Ok(TaskDataset {
        params: DatasetParams::Cyclic(params.clone()),
        seed,
        complex,
        inputs,
        labels: Labels::Classes { labels },
        mask: None,
        orientations,
        split,
    })
}
