//! Missing-data imputation on a collaboration complex.
//!
//! Papers are random author sets; every subset of a paper's authors (up to
//! `max_order + 1` of them) is a simplex whose value is the summed citation
//! count of the papers containing it. Citations are rounded log-normal draws.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use crate::complex::build_complex;
use crate::dense::Mat;
use crate::error::{GsanError, Result};
use crate::filters::CochainBundle;

use super::{invalid, DatasetParams, Labels, Split, TaskDataset};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MdiParams {
    pub n_authors: usize,
    pub n_papers: usize,
    pub min_authors: usize,
    pub max_authors: usize,
    pub max_order: usize,
    /// Order of the simplices carrying the signal.
    pub order: usize,
    pub miss_fraction: f64,
    /// Parameters of the log-normal citation draws.
    pub log_mean: f64,
    pub log_std: f64,
}

impl Default for MdiParams {
    fn default() -> Self {
        MdiParams {
            n_authors: 600,
            n_papers: 200,
            min_authors: 3,
            max_authors: 5,
            max_order: 2,
            order: 1,
            miss_fraction: 0.1,
            log_mean: 3.0,
            log_std: 1.0,
        }
    }
}

impl MdiParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.miss_fraction) {
            return Err(invalid("dataset.miss_fraction", "must lie in [0, 1)"));
        }
        if self.min_authors < 1 || self.min_authors > self.max_authors {
            return Err(invalid("dataset.min_authors", "must lie in 1..=max_authors"));
        }
        if self.max_authors > self.n_authors {
            return Err(invalid("dataset.max_authors", "must not exceed n_authors"));
        }
        if self.n_papers < 1 {
            return Err(invalid("dataset.n_papers", "must be at least 1"));
        }
        if !(self.log_std > 0.0 && self.log_mean.is_finite() && self.log_std.is_finite()) {
            return Err(invalid("dataset.log_std", "log-normal parameters must be finite, std positive"));
        }
        if self.order > self.max_order {
            return Err(GsanError::OrderOutOfRange {
                order: self.order,
                min: 0,
                max: self.max_order,
            });
        }
        Ok(())
    }
}

fn subsets(set: &[usize], max_len: usize, out: &mut BTreeSet<Vec<usize>>) {
    let n = set.len();
    for mask in 1u64..(1u64 << n) {
        if (mask.count_ones() as usize) <= max_len {
            out.insert((0..n).filter(|b| mask >> b & 1 == 1).map(|b| set[b]).collect());
        }
    }
}

pub fn generate_mdi_task(params: &MdiParams, seed: u64) -> Result<TaskDataset> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cite = LogNormal::new(params.log_mean, params.log_std).expect("validated");
    let mut papers: Vec<(Vec<usize>, f64)> = Vec::with_capacity(params.n_papers);
    for _ in 0..params.n_papers {
        let size = rng.gen_range(params.min_authors..=params.max_authors);
        let mut authors = index::sample(&mut rng, params.n_authors, size).into_vec();
        authors.sort_unstable();
        let c = cite.sample(&mut rng).round().max(1.0);
        papers.push((authors, c));
    }
    let mut all = BTreeSet::new();
    let mut value: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
    for (authors, c) in &papers {
        let mut mine = BTreeSet::new();
        subsets(authors, params.max_order + 1, &mut mine);
        for s in mine {
            *value.entry(s.clone()).or_insert(0.0) += c;
            all.insert(s);
        }
    }
    let tuples: Vec<Vec<usize>> = all.into_iter().collect();
    let complex = build_complex(&tuples, params.max_order)?;
    let k = params.order;
    let values: Vec<f64> = (0..complex.num_simplices(k))
        .map(|i| value[&complex.labeled(k, i)])
        .collect();
    let n = values.len();
    let n_missing = (params.miss_fraction * n as f64).round() as usize;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    let n_val = ((n - n_missing) as f64 * 0.1).round() as usize;
    let mut split = Split {
        test: idx[..n_missing].to_vec(),
        val: idx[n_missing..n_missing + n_val].to_vec(),
        train: idx[n_missing + n_val..].to_vec(),
    };
    split.train.sort_unstable();
    split.val.sort_unstable();
    split.test.sort_unstable();
    let mut mask = vec![true; n];
    for &i in &split.test {
        mask[i] = false;
    }
    let input = imputation_input(&complex.sizes(), k, &values, &mask)?;
    Ok(TaskDataset {
        params: DatasetParams::Mdi(params.clone()),
        seed,
        complex,
        inputs: vec![input],
        labels: Labels::Values { order: k, values },
        mask: Some(mask),
        orientations: BTreeMap::new(),
        split,
    })
}

/// Mean and standard deviation of `ln(value)` over the observed entries.
pub fn log_stats(values: &[f64], observed: &[bool]) -> (f64, f64) {
    let logs: Vec<f64> = values
        .iter()
        .zip(observed)
        .filter(|(_, &o)| o)
        .map(|(v, _)| v.ln())
        .collect();
    if logs.is_empty() {
        return (0.0, 1.0);
    }
    let mean = logs.iter().sum::<f64>() / logs.len() as f64;
    let var = logs.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / logs.len() as f64;
    (mean, var.sqrt().max(1e-12))
}

/// Two columns at `order`: the standardized log value (0 when hidden) and
/// a hidden flag. Other orders are zero. Statistics come from `visible`.
pub fn imputation_input(sizes: &[usize], order: usize, values: &[f64], visible: &[bool]) -> Result<CochainBundle> {
    let (mean, std) = log_stats(values, visible);
    let orders = sizes
        .iter()
        .enumerate()
        .map(|(k, &n)| {
            if k != order {
                return Mat::zeros(n, 2);
            }
            Mat::from_fn(n, 2, |i, j| match (j, visible[i]) {
                (0, true) => (values[i].ln() - mean) / std,
                (1, false) => 1.0,
                _ => 0.0,
            })
        })
        .collect();
    CochainBundle::new(orders)
}
