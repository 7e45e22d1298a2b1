//! Parameter layout of a layer inside a [`ParamStore`].

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParamStore};
use crate::dense::Mat;
use crate::error::Result;

use super::config::{GsanLayerConfig, ModelFamily};
use super::context::Adjacency;

/// Identifies one attention vector: order, adjacency and variant
/// (1 = same-order features, 2 = incidence-mapped features).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AttnKey {
    pub order: usize,
    pub adjacency: Adjacency,
    pub variant: u8,
}

impl AttnKey {
    pub fn new(order: usize, adjacency: Adjacency, variant: u8) -> Self {
        AttnKey {
            order,
            adjacency,
            variant,
        }
    }

    pub fn label(&self) -> String {
        format!("{}{}.{}", self.adjacency.tag(), self.variant, self.order)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum FilterIds {
    /// `W_down[p]`, `W_up[p]` for `p = 1..J` (index `p - 1`) and `W_h`.
    Split {
        down: Vec<ParamId>,
        up: Vec<ParamId>,
        harmonic: ParamId,
    },
    /// One stack `W[p]`, `p = 1..J`.
    Joint { shared: Vec<ParamId> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadLayout {
    pub filters: FilterIds,
    /// Each vector stored as an `(m F_out) x 2` matrix: column 0 scores the
    /// receiving simplex, column 1 the neighbor.
    pub attention: BTreeMap<AttnKey, ParamId>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerLayout {
    pub family: ModelFamily,
    pub heads: Vec<HeadLayout>,
}

impl LayerLayout {
    /// Entries held by the filter stacks (`W_down`/`W_up` or the joint `W`), without `W_h`.
    pub fn filter_stack_size(&self, store: &ParamStore) -> usize {
        self.heads
            .iter()
            .map(|h| match &h.filters {
                FilterIds::Split { down, up, .. } => down.iter().chain(up).map(|&id| store.get(id).len()).sum(),
                FilterIds::Joint { shared } => shared.iter().map(|&id| store.get(id).len()).sum::<usize>(),
            })
            .sum()
    }

    /// Every parameter entry owned by the layer.
    pub fn size(&self, store: &ParamStore) -> usize {
        self.ids().iter().map(|&id| store.get(id).len()).sum()
    }

    pub fn ids(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        for h in &self.heads {
            match &h.filters {
                FilterIds::Split { down, up, harmonic } => {
                    ids.extend(down);
                    ids.extend(up);
                    ids.push(*harmonic);
                }
                FilterIds::Joint { shared } => ids.extend(shared),
            }
            ids.extend(h.attention.values());
        }
        ids
    }
}

/// Attention vectors a layer needs, with their half-length `m F_out`.
pub fn attention_keys(family: ModelFamily, max_order: usize, config: &GsanLayerConfig) -> Vec<(AttnKey, usize)> {
    let (ne, no, f) = (config.n_even(), config.n_odd(), config.f_out);
    let mut keys = Vec::new();
    for k in 0..=max_order {
        let mut split = Vec::new();
        if k > 0 {
            split.push(Adjacency::Lower);
        }
        if k < max_order {
            split.push(Adjacency::Upper);
        }
        match family {
            ModelFamily::Gsccn => {}
            ModelFamily::Gsan => {
                for adj in split {
                    if ne > 0 {
                        keys.push((AttnKey::new(k, adj, 1), ne * f));
                    }
                    keys.push((AttnKey::new(k, adj, 2), no * f));
                }
            }
            ModelFamily::GsanJoint => {
                if ne > 0 {
                    keys.push((AttnKey::new(k, Adjacency::Full, 1), ne * f));
                }
                for adj in split {
                    keys.push((AttnKey::new(k, adj, 2), no * f));
                }
            }
        }
    }
    keys
}

fn glorot(rng: &mut impl Rng, rows: usize, cols: usize, fan: usize) -> Mat {
    let limit = (6.0 / fan.max(1) as f64).sqrt();
    Mat::from_fn(rows, cols, |_, _| rng.gen_range(-limit..limit))
}

/// Registers a freshly initialized layer in `store`; parameter names start with `prefix`.
pub fn init_layer(
    store: &mut ParamStore,
    prefix: &str,
    config: &GsanLayerConfig,
    family: ModelFamily,
    max_order: usize,
    rng: &mut impl Rng,
) -> Result<LayerLayout> {
    config.validate()?;
    let (fi, fo) = (config.f_in, config.f_out);
    let mut heads = Vec::with_capacity(config.heads);
    for h in 0..config.heads {
        let stack = |name: &str, store: &mut ParamStore, rng: &mut _| -> Vec<ParamId> {
            (1..=config.j)
                .map(|p| store.push(format!("{prefix}.h{h}.{name}.{p}"), glorot(rng, fi, fo, fi + fo)))
                .collect()
        };
        let filters = match family {
            ModelFamily::GsanJoint => FilterIds::Joint {
                shared: stack("W", store, rng),
            },
            _ => {
                let down = stack("W_down", store, rng);
                let up = stack("W_up", store, rng);
                let harmonic = store.push(format!("{prefix}.h{h}.W_h"), glorot(rng, fi, fo, fi + fo));
                FilterIds::Split { down, up, harmonic }
            }
        };
        let mut attention = BTreeMap::new();
        for (key, m) in attention_keys(family, max_order, config) {
            let id = store.push(format!("{prefix}.h{h}.a.{}", key.label()), glorot(rng, m, 2, 2 * m + 1));
            attention.insert(key, id);
        }
        heads.push(HeadLayout { filters, attention });
    }
    Ok(LayerLayout { family, heads })
}

/// A standalone layer: its own store plus layout.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub store: ParamStore,
    pub layout: LayerLayout,
}

impl LayerParams {
    pub fn init(config: &GsanLayerConfig, family: ModelFamily, max_order: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let layout = init_layer(&mut store, "layer", config, family, max_order, &mut rng)?;
        Ok(LayerParams { store, layout })
    }

    /// Materialized parameter entries.
    pub fn size(&self) -> usize {
        self.store.total_size()
    }

    pub fn filter_stack_size(&self) -> usize {
        self.layout.filter_stack_size(&self.store)
    }

    /// Sets every attention vector to zero.
    pub fn zero_attention(&mut self) {
        for h in &self.layout.heads {
            for &id in h.attention.values() {
                let m = self.store.get_mut(id);
                *m = Mat::zeros(m.rows(), m.cols());
            }
        }
    }
}
