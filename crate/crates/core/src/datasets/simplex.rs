//! Open versus closed simplex prediction on a random geometric complex.
//!
//! A smooth latent field lives on the vertices; a `k`-clique is filled iff
//! the mean latent value of its vertices is positive. Inputs are noisy
//! observations of the field on every simplex of order below `k`.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::complex::build_complex;
use crate::dense::Mat;
use crate::error::{GsanError, Result};
use crate::filters::CochainBundle;

use super::{clique_lift, enumerate_simplex_candidates, invalid, DatasetParams, Labels, Split, TaskDataset};

pub const MIN_PER_CLASS: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimplexParams {
    pub n_nodes: usize,
    /// Connection radius of the geometric graph in the unit square.
    pub radius: f64,
    /// Order of the predicted simplices.
    pub order: usize,
    /// Spatial frequency of the latent field.
    pub frequency: f64,
    pub noise: f64,
}

impl Default for SimplexParams {
    fn default() -> Self {
        SimplexParams {
            n_nodes: 150,
            radius: 0.15,
            order: 2,
            frequency: 1.0,
            noise: 1.0,
        }
    }
}

impl SimplexParams {
    pub fn validate(&self) -> Result<()> {
        if !(2..=3).contains(&self.order) {
            return Err(invalid("dataset.order", "must be 2 or 3"));
        }
        if self.n_nodes < 4 {
            return Err(invalid("dataset.n_nodes", "must be at least 4"));
        }
        if !(self.radius > 0.0 && self.radius <= 1.5) {
            return Err(invalid("dataset.radius", "must lie in (0, 1.5]"));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(invalid("dataset.noise", "must be finite and non-negative"));
        }
        if !self.frequency.is_finite() {
            return Err(invalid("dataset.frequency", "must be finite"));
        }
        Ok(())
    }
}

pub fn generate_simplex_prediction_task(params: &SimplexParams, seed: u64) -> Result<TaskDataset> {
    params.validate()?;
    let k = params.order;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts: Vec<[f64; 2]> = (0..params.n_nodes).map(|_| [rng.gen(), rng.gen()]).collect();
    let phase: f64 = rng.gen_range(0.0..2.0 * PI);
    let w = 2.0 * PI * params.frequency;
    let latent_at = |p: [f64; 2]| (w * p[0] + phase).sin() + (w * p[1]).cos();
    let mut edges = Vec::new();
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            let d = ((pts[i][0] - pts[j][0]).powi(2) + (pts[i][1] - pts[j][1]).powi(2)).sqrt();
            if d < params.radius {
                edges.push((i, j));
            }
        }
    }
    let lifted = clique_lift(&edges, k)?;
    let latent: Vec<f64> = lifted.vertex_labels().iter().map(|&l| latent_at(pts[l])).collect();
    let mean_latent = |s: &[usize]| s.iter().map(|&v| latent[v]).sum::<f64>() / s.len() as f64;

    // Full complex: every lower-order clique plus the filled k-cliques.
    let mut simplices: Vec<Vec<usize>> = (0..k).flat_map(|j| lifted.simplices(j).to_vec()).collect();
    simplices.extend(lifted.simplices(k).iter().filter(|s| mean_latent(s) > 0.0).cloned());
    let full = build_complex(&simplices, k)?;
    let (closed, open) = enumerate_simplex_candidates(&full, k)?;
    for (class, found) in [(1, closed.len()), (0, open.len())] {
        if found < MIN_PER_CLASS {
            return Err(GsanError::InsufficientCandidates {
                class,
                found,
                needed: MIN_PER_CLASS,
            });
        }
    }
    let n = closed.len().min(open.len());
    let mut cands: Vec<(Vec<usize>, usize)> = closed
        .choose_multiple(&mut rng, n)
        .map(|s| (s.clone(), 1))
        .chain(open.choose_multiple(&mut rng, n).map(|s| (s.clone(), 0)))
        .collect();
    cands.sort();

    // Features live on the complex with the k-simplices removed.
    let lower: Vec<Vec<usize>> = (0..k).flat_map(|j| full.simplices(j).to_vec()).collect();
    let complex = build_complex(&lower, k - 1)?;
    let noise = Normal::new(0.0, params.noise).expect("validated");
    let orders = (0..k)
        .map(|j| {
            let col: Vec<f64> = complex
                .simplices(j)
                .iter()
                .map(|s| mean_latent(s) + noise.sample(&mut rng))
                .collect();
            Mat::col_vec(&col)
        })
        .collect();
    let input = CochainBundle::new(orders)?;
    let split = Split::shuffled(cands.len(), 0.6, 0.2, &mut rng);
    let (simplices, labels) = cands.into_iter().unzip();
    Ok(TaskDataset {
        params: DatasetParams::SimplexPrediction(params.clone()),
        seed,
        complex,
        inputs: vec![input],
        labels: Labels::Candidates {
            order: k,
            simplices,
            labels,
        },
        mask: None,
        orientations: BTreeMap::new(),
        split,
    })
}
