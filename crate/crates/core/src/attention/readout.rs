//! Prediction heads on top of the layer stack.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Activation, ParamId, ParamStore, Tape, Var};
use crate::complex::SimplicialComplex;
use crate::dense::Mat;
use crate::error::{shape_err, GsanError, Result};
use crate::filters::CochainBundle;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    #[default]
    Mean,
    /// Mean of absolute values; blind to orientation.
    AbsMean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ReadoutConfig {
    /// An affine map per order to `out` columns.
    PerSimplex { out: usize },
    /// Per-order pooling, concatenation, then an MLP to class logits.
    ComplexLevel {
        #[serde(default)]
        pooling: Pooling,
        hidden: usize,
        classes: usize,
        /// Orders to pool; all of them when absent.
        #[serde(default)]
        orders: Option<Vec<usize>>,
    },
    /// Features of the faces of a candidate `order`-simplex, concatenated in
    /// sorted face order, through an MLP to one logit.
    SimplexPrediction { order: usize, hidden: usize },
}

impl ReadoutConfig {
    pub fn validate(&self, max_order: usize) -> Result<()> {
        let bad = |field: &str, reason: String| {
            Err(GsanError::InvalidConfig {
                field: field.into(),
                reason,
            })
        };
        match self {
            ReadoutConfig::PerSimplex { out } if *out == 0 => bad("readout.out", "must be at least 1".into()),
            ReadoutConfig::ComplexLevel {
                hidden,
                classes,
                orders,
                ..
            } => {
                if *hidden == 0 || *classes == 0 {
                    return bad("readout.hidden/classes", "must be at least 1".into());
                }
                if let Some(o) = orders {
                    if o.is_empty() || o.iter().any(|&k| k > max_order) {
                        return bad("readout.orders", format!("must name orders in 0..={max_order}"));
                    }
                }
                Ok(())
            }
            ReadoutConfig::SimplexPrediction { order, hidden } => {
                if *order == 0 || *order > max_order + 1 {
                    return bad("readout.order", format!("must lie in 1..={}", max_order + 1));
                }
                if *hidden == 0 {
                    return bad("readout.hidden", "must be at least 1".into());
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// Weight and bias of one affine map.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Affine {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Affine {
    pub fn init(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let limit = (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
        let w = Mat::from_fn(fan_in, fan_out, |_, _| rng.gen_range(-limit..limit));
        Affine {
            weight: store.push(format!("{name}.W"), w),
            bias: store.push(format!("{name}.b"), Mat::zeros(1, fan_out)),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(self.weight, store);
        let b = tape.param(self.bias, store);
        let y = tape.matmul(x, w)?;
        tape.add_row(y, b)
    }
}

/// Two affine maps with a ReLU between them.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mlp {
    pub hidden: Affine,
    pub output: Affine,
}

impl Mlp {
    pub fn init(store: &mut ParamStore, name: &str, dims: (usize, usize, usize), rng: &mut impl Rng) -> Self {
        Mlp {
            hidden: Affine::init(store, &format!("{name}.0"), dims.0, dims.1, rng),
            output: Affine::init(store, &format!("{name}.1"), dims.1, dims.2, rng),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let h = self.hidden.forward(tape, store, x)?;
        let h = tape.act(h, Activation::Relu)?;
        self.output.forward(tape, store, h)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ReadoutLayout {
    PerSimplex(Vec<Affine>),
    ComplexLevel {
        pooling: Pooling,
        orders: Vec<usize>,
        mlp: Mlp,
    },
    SimplexPrediction {
        order: usize,
        mlp: Mlp,
    },
}

/// Extra input a readout needs besides the final bundle.
#[derive(Clone, Debug, Default)]
pub enum ReadoutInput {
    #[default]
    None,
    /// For each candidate, the ids of its faces in sorted order.
    Candidates(Arc<Vec<Vec<usize>>>),
}

impl ReadoutLayout {
    pub fn init(
        store: &mut ParamStore,
        config: &ReadoutConfig,
        width: usize,
        max_order: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        config.validate(max_order)?;
        Ok(match config {
            ReadoutConfig::PerSimplex { out } => ReadoutLayout::PerSimplex(
                (0..=max_order)
                    .map(|k| Affine::init(store, &format!("readout.{k}"), width, *out, rng))
                    .collect(),
            ),
            ReadoutConfig::ComplexLevel {
                pooling,
                hidden,
                classes,
                orders,
            } => {
                let orders = orders.clone().unwrap_or_else(|| (0..=max_order).collect());
                let mlp = Mlp::init(store, "readout", (orders.len() * width, *hidden, *classes), rng);
                ReadoutLayout::ComplexLevel {
                    pooling: *pooling,
                    orders,
                    mlp,
                }
            }
            ReadoutConfig::SimplexPrediction { order, hidden } => ReadoutLayout::SimplexPrediction {
                order: *order,
                mlp: Mlp::init(store, "readout", ((order + 1) * width, *hidden, 1), rng),
            },
        })
    }

    /// Per-simplex: rows of all orders stacked. Complex-level: `1 x classes`.
    /// Simplex prediction: `n_candidates x 1`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, z: &[Var], input: &ReadoutInput) -> Result<Var> {
        match self {
            ReadoutLayout::PerSimplex(maps) => {
                if maps.len() != z.len() {
                    return shape_err("readout orders differ from the bundle");
                }
                let outs = maps
                    .iter()
                    .zip(z)
                    .map(|(m, &v)| m.forward(tape, store, v))
                    .collect::<Result<Vec<_>>>()?;
                vstack(tape, &outs)
            }
            ReadoutLayout::ComplexLevel { pooling, orders, mlp } => {
                let mut pooled = Vec::with_capacity(orders.len());
                for &k in orders {
                    let v = *z.get(k).ok_or_else(|| GsanError::ShapeError(format!("no order {k}")))?;
                    let v = match pooling {
                        Pooling::Mean => v,
                        Pooling::AbsMean => tape.act(v, Activation::Abs)?,
                    };
                    pooled.push(tape.mean_rows(v)?);
                }
                let x = tape.hcat(&pooled)?;
                mlp.forward(tape, store, x)
            }
            ReadoutLayout::SimplexPrediction { order, mlp } => {
                let ReadoutInput::Candidates(cands) = input else {
                    return shape_err("simplex prediction needs candidate faces");
                };
                let faces = z[order - 1];
                let mut cols = Vec::with_capacity(order + 1);
                for r in 0..=*order {
                    let idx: Vec<usize> = cands
                        .iter()
                        .map(|c| {
                            c.get(r)
                                .copied()
                                .ok_or_else(|| GsanError::ShapeError("candidate with too few faces".into()))
                        })
                        .collect::<Result<_>>()?;
                    cols.push(tape.gather_rows(faces, Arc::new(idx))?);
                }
                let x = tape.hcat(&cols)?;
                mlp.forward(tape, store, x)
            }
        }
    }
}

/// Row-stacks nodes: each part is placed into its row block by a 0/1
/// selector and the blocks are summed.
fn vstack(tape: &mut Tape, parts: &[Var]) -> Result<Var> {
    if parts.len() == 1 {
        return Ok(parts[0]);
    }
    let total: usize = parts.iter().map(|&p| tape.value(p).rows()).sum();
    let mut offset = 0;
    let mut acc = Vec::with_capacity(parts.len());
    for &p in parts {
        let n = tape.value(p).rows();
        let sel = crate::sparse::SparseOperator::from_triplets(total, n, (0..n).map(|i| (offset + i, i, 1.0)))?;
        acc.push(tape.sparse(&Arc::new(sel), p)?);
        offset += n;
    }
    tape.sum_all(&acc)
}

/// Order-wise pooling of a bundle, concatenated into one row.
pub fn pool_bundle(bundle: &CochainBundle, pooling: Pooling) -> Mat {
    let rows: Vec<Mat> = bundle
        .orders()
        .iter()
        .map(|m| match pooling {
            Pooling::Mean => m.mean_rows(),
            Pooling::AbsMean => m.map(f64::abs).mean_rows(),
        })
        .collect();
    let refs: Vec<&Mat> = rows.iter().collect();
    Mat::hcat(&refs).expect("single rows")
}

/// Face ids (sorted face order) of candidate simplices given as sorted
/// vertex tuples of dense vertex ids.
pub fn candidate_faces(x: &SimplicialComplex, candidates: &[Vec<usize>]) -> Result<Vec<Vec<usize>>> {
    candidates
        .iter()
        .map(|c| {
            if c.len() < 2 || c.windows(2).any(|w| w[0] >= w[1]) {
                return Err(GsanError::InvalidSimplex {
                    simplex: c.clone(),
                    reason: "candidate must be a sorted tuple of at least two vertices".into(),
                });
            }
            let mut faces: Vec<Vec<usize>> = (0..c.len())
                .map(|j| {
                    let mut f = c.clone();
                    f.remove(j);
                    f
                })
                .collect();
            faces.sort();
            faces
                .into_iter()
                .map(|f| x.index_of(&f).ok_or(GsanError::MissingFace(f)))
                .collect()
        })
        .collect()
}

/// Face features of each candidate concatenated in sorted face order.
pub fn gather_candidate_features(faces: &Mat, candidate_faces: &[Vec<usize>]) -> Result<Mat> {
    let rows: Vec<Vec<f64>> = candidate_faces
        .iter()
        .map(|ids| {
            let mut r = Vec::with_capacity(ids.len() * faces.cols());
            for &i in ids {
                if i >= faces.rows() {
                    return shape_err(format!("face id {i} out of range"));
                }
                r.extend_from_slice(faces.row(i));
            }
            Ok(r)
        })
        .collect::<Result<_>>()?;
    if rows.is_empty() {
        return Ok(Mat::zeros(0, 0));
    }
    Mat::from_rows(&rows)
}
