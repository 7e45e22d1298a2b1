//! Training and evaluation of the synthetic tasks, shared by the CLI and
//! the acceptance suite.

use std::sync::Arc;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attention::{
    candidate_faces, gather_candidate_features, GsanLayerConfig, Mlp, Model, ModelConfig, ModelFamily,
    Pooling, ReadoutConfig, ReadoutInput, SimplicialContext,
};
use crate::autodiff::{Activation, Gradients, LossTarget, Optimizer, ParamStore, Tape};
use crate::datasets::{DatasetParams, Labels, TaskDataset, TaskKind};
use crate::dense::Mat;
use crate::error::{GsanError, Result};
use crate::filters::CochainBundle;
use crate::metrics::{accuracy, rank_auc, within_five_percent};
use crate::training::{fit, mean_gradients, History, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub dataset: DatasetParams,
    pub model: ModelConfig,
    #[serde(default)]
    pub training: TrainConfig,
}

impl RunConfig {
    pub fn default_for(task: TaskKind) -> Self {
        let layer = |j: usize, f_in: usize, f_out: usize| GsanLayerConfig::new(j, f_in, f_out);
        let (model, training) = match task {
            TaskKind::Trajectory => {
                let mut l0 = layer(2, 1, 16);
                l0.nonlinearity = Activation::Tanh;
                l0.harmonic_j = Some(200);
                let mut l1 = layer(2, 16, 16);
                l1.nonlinearity = Activation::Tanh;
                l1.use_harmonic = false;
                (
                    ModelConfig {
                        family: ModelFamily::Gsan,
                        diffusion: None,
                        layers: vec![l0, l1],
                        readout: ReadoutConfig::ComplexLevel {
                            pooling: Pooling::AbsMean,
                            hidden: 16,
                            classes: 2,
                            orders: None,
                        },
                    },
                    TrainConfig {
                        optimizer: Optimizer::adam(0.01),
                        epochs: 60,
                        patience: 20,
                        batch_size: 32,
                    },
                )
            }
            TaskKind::Cyclic => {
                let mut l0 = layer(2, 2, 8);
                l0.nonlinearity = Activation::Tanh;
                l0.signed_masking = true;
                let mut l1 = layer(2, 8, 8);
                l1.nonlinearity = Activation::Tanh;
                l1.signed_masking = true;
                (
                    ModelConfig {
                        family: ModelFamily::Gsan,
                        diffusion: None,
                        layers: vec![l0, l1],
                        readout: ReadoutConfig::ComplexLevel {
                            pooling: Pooling::AbsMean,
                            hidden: 16,
                            classes: 2,
                            orders: Some(vec![0, 1]),
                        },
                    },
                    TrainConfig {
                        optimizer: Optimizer::adam(0.01),
                        epochs: 60,
                        patience: 20,
                        batch_size: 32,
                    },
                )
            }
            TaskKind::Mdi => {
                let mut l0 = layer(2, 2, 8);
                l0.nonlinearity = Activation::Identity;
                l0.use_harmonic = false;
                (
                    ModelConfig {
                        family: ModelFamily::Gsan,
                        diffusion: None,
                        layers: vec![l0],
                        readout: ReadoutConfig::PerSimplex { out: 1 },
                    },
                    TrainConfig {
                        optimizer: Optimizer::adam(0.01),
                        epochs: 1000,
                        patience: 200,
                        batch_size: 1,
                    },
                )
            }
            TaskKind::SimplexPrediction => {
                let mut l0 = layer(2, 1, 16);
                l0.use_harmonic = false;
                let mut l1 = layer(2, 16, 16);
                l1.use_harmonic = false;
                (
                    ModelConfig {
                        family: ModelFamily::Gsan,
                        diffusion: None,
                        layers: vec![l0, l1],
                        readout: ReadoutConfig::SimplexPrediction { order: 2, hidden: 32 },
                    },
                    TrainConfig {
                        optimizer: Optimizer::adam(0.01),
                        epochs: 300,
                        patience: 50,
                        batch_size: 1,
                    },
                )
            }
        };
        RunConfig {
            seed: 0,
            dataset: DatasetParams::default_for(task),
            model,
            training,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.training.validate()
    }
}

/// Name of the reported test metric.
pub fn metric_name(task: TaskKind) -> &'static str {
    match task {
        TaskKind::Trajectory | TaskKind::Cyclic => "accuracy",
        TaskKind::Mdi => "within_5pct_accuracy",
        TaskKind::SimplexPrediction => "auc",
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Part {
    Train,
    Val,
    Test,
}

fn part(d: &TaskDataset, p: Part) -> &[usize] {
    match p {
        Part::Train => &d.split.train,
        Part::Val => &d.split.val,
        Part::Test => &d.split.test,
    }
}

/// Dataset-dependent state shared by training and evaluation.
pub struct Prepared {
    /// One context per sample (re-oriented samples get their own).
    pub contexts: Vec<Arc<SimplicialContext>>,
    pub readout: ReadoutInput,
    /// Face ids of every candidate (simplex prediction only).
    pub faces: Vec<Vec<usize>>,
}

pub fn prepare(model: &ModelConfig, d: &TaskDataset) -> Result<Prepared> {
    d.check()?;
    let max_order = d.complex.max_order();
    model.validate(max_order)?;
    let width = d.inputs.first().map_or(0, |b| b.width());
    if model.input_width() != width {
        return Err(GsanError::InvalidConfig {
            field: "layers[0].f_in".into(),
            reason: format!("the dataset has input width {width}"),
        });
    }
    let base = Arc::new(SimplicialContext::from_complex(&d.complex, model.harmonic_eps())?);
    let sizes = d.complex.sizes();
    let mut contexts = vec![base.clone(); d.inputs.len()];
    for (&i, flips) in &d.orientations {
        let signs: Vec<Vec<f64>> = sizes
            .iter()
            .enumerate()
            .map(|(k, &n)| if k == 1 { flips.clone() } else { vec![1.0; n] })
            .collect();
        let slot = contexts
            .get_mut(i)
            .ok_or_else(|| GsanError::ShapeError(format!("orientation for missing sample {i}")))?;
        *slot = Arc::new(base.reoriented(&signs)?);
    }
    let mut faces = Vec::new();
    if let Labels::Candidates { simplices, .. } = &d.labels {
        faces = candidate_faces(&d.complex, simplices)?;
    }
    Ok(Prepared {
        contexts,
        readout: ReadoutInput::None,
        faces,
    })
}

fn class_labels(d: &TaskDataset) -> Result<&[usize]> {
    match &d.labels {
        Labels::Classes { labels } => Ok(labels),
        _ => Err(GsanError::ShapeError("task has no per-sample classes".into())),
    }
}

fn subset<T: Clone>(v: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| v[i].clone()).collect()
}

/// Score of `model` on one part of the split (higher is better).
pub fn evaluate_with(model: &Model, store: &ParamStore, d: &TaskDataset, prep: &Prepared, p: Part) -> Result<f64> {
    let idx = part(d, p);
    match d.task() {
        TaskKind::Trajectory | TaskKind::Cyclic => {
            let labels = class_labels(d)?;
            let rows: Vec<Mat> = idx
                .par_iter()
                .map(|&i| {
                    let mut tape = Tape::new();
                    let f = model.forward_tape(&mut tape, store, &prep.contexts[i], &d.inputs[i], &prep.readout)?;
                    Ok(tape.value(f.prediction).clone())
                })
                .collect::<Result<_>>()?;
            let refs: Vec<&Mat> = rows.iter().collect();
            accuracy(&Mat::vcat(&refs)?, &subset(labels, idx))
        }
        TaskKind::Mdi => {
            let m = MdiView::new(d)?;
            let visible: Vec<bool> = match p {
                Part::Test => m.observed.clone(),
                _ => hide(&m.observed, idx),
            };
            let pred = m.predict(model, store, d, prep, &visible)?;
            within_five_percent(&pred, m.values, idx)
        }
        TaskKind::SimplexPrediction => {
            let Labels::Candidates { labels, .. } = &d.labels else {
                return Err(GsanError::ShapeError("task has no candidates".into()));
            };
            let scores = candidate_scores(model, store, d, prep, idx)?;
            rank_auc(&scores, &subset(labels, idx))
        }
    }
}

pub fn evaluate(model: &Model, d: &TaskDataset, p: Part) -> Result<f64> {
    let prep = prepare(&model.config, d)?;
    evaluate_with(model, &model.store, d, &prep, p)
}

fn candidate_scores(model: &Model, store: &ParamStore, d: &TaskDataset, prep: &Prepared, idx: &[usize]) -> Result<Vec<f64>> {
    let rin = ReadoutInput::Candidates(Arc::new(subset(&prep.faces, idx)));
    let mut tape = Tape::new();
    let f = model.forward_tape(&mut tape, store, &prep.contexts[0], &d.inputs[0], &rin)?;
    Ok(tape.value(f.prediction).column(0))
}

fn hide(observed: &[bool], idx: &[usize]) -> Vec<bool> {
    let mut v = observed.to_vec();
    for &i in idx {
        v[i] = false;
    }
    v
}

/// Imputation targets live in standardized log space with statistics of
/// all observed entries.
struct MdiView<'a> {
    order: usize,
    values: &'a [f64],
    observed: Vec<bool>,
    mean: f64,
    std: f64,
    offset: usize,
}

impl<'a> MdiView<'a> {
    fn new(d: &'a TaskDataset) -> Result<Self> {
        let Labels::Values { order, values } = &d.labels else {
            return Err(GsanError::ShapeError("task has no per-simplex values".into()));
        };
        let observed = d.mask.clone().unwrap_or_else(|| vec![true; values.len()]);
        let (mean, std) = crate::datasets::log_stats(values, &observed);
        let offset = d.complex.sizes()[..*order].iter().sum();
        Ok(MdiView {
            order: *order,
            values,
            observed,
            mean,
            std,
            offset,
        })
    }

    fn input(&self, d: &TaskDataset, visible: &[bool]) -> Result<CochainBundle> {
        crate::datasets::imputation_input(&d.complex.sizes(), self.order, self.values, visible)
    }

    fn predict(&self, model: &Model, store: &ParamStore, d: &TaskDataset, prep: &Prepared, visible: &[bool]) -> Result<Vec<f64>> {
        let input = self.input(d, visible)?;
        let mut tape = Tape::new();
        let f = model.forward_tape(&mut tape, store, &prep.contexts[0], &input, &prep.readout)?;
        let out = tape.value(f.prediction);
        Ok((0..self.values.len())
            .map(|i| (out[(self.offset + i, 0)] * self.std + self.mean).exp())
            .collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub task: TaskKind,
    pub metric: String,
    pub test: f64,
    /// Baseline score on the same test part, when the task has one.
    pub baseline: Option<f64>,
    pub parameter_count: usize,
    pub history: History,
}

/// Trains on an existing dataset and reports the test score.
pub fn train(config: &RunConfig, d: &TaskDataset) -> Result<(Model, RunSummary)> {
    config.validate()?;
    let prep = prepare(&config.model, d)?;
    let mut model = Model::init(&config.model, d.complex.max_order(), config.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut store = model.store.clone();
    let tc = &config.training;
    let history = match d.task() {
        TaskKind::Trajectory | TaskKind::Cyclic => {
            let labels = class_labels(d)?;
            let train = d.split.train.clone();
            let targets: Vec<Arc<LossTarget>> = labels
                .iter()
                .map(|&l| Arc::new(LossTarget::CrossEntropy(vec![l])))
                .collect();
            fit(
                &mut store,
                tc,
                train.len(),
                &mut rng,
                |s, batch, _| {
                    let items: Vec<usize> = batch.iter().map(|&b| train[b]).collect();
                    mean_gradients(s, &items, |i| {
                        sample_loss(&model, s, &prep.contexts[i], &d.inputs[i], &prep.readout, &targets[i])
                    })
                },
                |s| evaluate_with(&model, s, d, &prep, Part::Val),
            )?
        }
        TaskKind::Mdi => {
            let m = MdiView::new(d)?;
            let DatasetParams::Mdi(params) = &d.params else {
                return Err(GsanError::ShapeError("dataset parameters differ from the labels".into()));
            };
            let n_hide = ((params.miss_fraction * d.split.train.len() as f64).round() as usize).max(1);
            let total: usize = d.complex.sizes().iter().sum();
            let mut target = Mat::zeros(total, 1);
            for (i, v) in m.values.iter().enumerate() {
                target[(m.offset + i, 0)] = (v.ln() - m.mean) / m.std;
            }
            fit(
                &mut store,
                tc,
                1,
                &mut rng,
                |s, _, rng| {
                    let picked: Vec<usize> = index::sample(rng, d.split.train.len(), n_hide.min(d.split.train.len()))
                        .into_iter()
                        .map(|j| d.split.train[j])
                        .collect();
                    let visible = hide(&m.observed, &picked);
                    let input = m.input(d, &visible)?;
                    let mut mask = vec![false; total];
                    for &i in &picked {
                        mask[m.offset + i] = true;
                    }
                    let t = Arc::new(LossTarget::masked_mse(target.clone(), mask)?);
                    sample_loss(&model, s, &prep.contexts[0], &input, &prep.readout, &t)
                },
                |s| evaluate_with(&model, s, d, &prep, Part::Val),
            )?
        }
        TaskKind::SimplexPrediction => {
            let Labels::Candidates { labels, .. } = &d.labels else {
                return Err(GsanError::ShapeError("task has no candidates".into()));
            };
            let train = &d.split.train;
            let rin = ReadoutInput::Candidates(Arc::new(subset(&prep.faces, train)));
            let t = Arc::new(LossTarget::CrossEntropy(subset(labels, train)));
            fit(
                &mut store,
                tc,
                1,
                &mut rng,
                |s, _, _| sample_loss(&model, s, &prep.contexts[0], &d.inputs[0], &rin, &t),
                |s| evaluate_with(&model, s, d, &prep, Part::Val),
            )?
        }
    };
    model.store = store;
    let test = evaluate_with(&model, &model.store, d, &prep, Part::Test)?;
    let baseline = match d.task() {
        TaskKind::Mdi => Some(mean_imputation_baseline(d)?),
        TaskKind::SimplexPrediction => Some(mlp_baseline(config, d, &prep)?),
        _ => None,
    };
    let parameter_count = model.store.total_size();
    Ok((
        model,
        RunSummary {
            task: d.task(),
            metric: metric_name(d.task()).into(),
            test,
            baseline,
            parameter_count,
            history,
        },
    ))
}

fn sample_loss(
    model: &Model,
    store: &ParamStore,
    ctx: &SimplicialContext,
    input: &CochainBundle,
    rin: &ReadoutInput,
    target: &Arc<LossTarget>,
) -> Result<(f64, Gradients)> {
    let mut tape = Tape::new();
    let f = model.forward_tape(&mut tape, store, ctx, input, rin)?;
    let loss = tape.loss(f.prediction, target.clone())?;
    let g = tape.backward(loss, store)?;
    Ok((tape.value(loss)[(0, 0)], g))
}

/// Every hidden entry imputed with the mean of the observed values.
pub fn mean_imputation_baseline(d: &TaskDataset) -> Result<f64> {
    let m = MdiView::new(d)?;
    let obs: Vec<f64> = m
        .values
        .iter()
        .zip(&m.observed)
        .filter(|(_, &o)| o)
        .map(|(v, _)| *v)
        .collect();
    if obs.is_empty() {
        return Err(GsanError::EmptyMask);
    }
    let mean = obs.iter().sum::<f64>() / obs.len() as f64;
    within_five_percent(&vec![mean; m.values.len()], m.values, &d.split.test)
}

/// A two-layer perceptron on the raw input features of each candidate's
/// faces, trained with the run's optimizer and early stopping.
fn mlp_baseline(config: &RunConfig, d: &TaskDataset, prep: &Prepared) -> Result<f64> {
    let Labels::Candidates { order, labels, .. } = &d.labels else {
        return Err(GsanError::ShapeError("task has no candidates".into()));
    };
    let ReadoutConfig::SimplexPrediction { hidden, .. } = config.model.readout else {
        return Err(GsanError::InvalidConfig {
            field: "readout.kind".into(),
            reason: "the simplex task needs a simplex_prediction readout".into(),
        });
    };
    let feats = gather_candidate_features(d.inputs[0].order(order - 1), &prep.faces)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(2));
    let mut store = ParamStore::new();
    let mlp = Mlp::init(&mut store, "baseline", (feats.cols(), hidden, 1), &mut rng);
    let scores = |s: &ParamStore, idx: &[usize]| -> Result<Mat> {
        let mut tape = Tape::new();
        let x = tape.constant(feats.gather_rows(idx));
        let y = mlp.forward(&mut tape, s, x)?;
        Ok(tape.value(y).clone())
    };
    let train = &d.split.train;
    let t = Arc::new(LossTarget::CrossEntropy(subset(labels, train)));
    let x_train = feats.gather_rows(train);
    fit(
        &mut store,
        &config.training,
        1,
        &mut rng,
        |s, _, _| {
            let mut tape = Tape::new();
            let x = tape.constant(x_train.clone());
            let y = mlp.forward(&mut tape, s, x)?;
            let loss = tape.loss(y, t.clone())?;
            let g = tape.backward(loss, s)?;
            Ok((tape.value(loss)[(0, 0)], g))
        },
        |s| rank_auc(&scores(s, &d.split.val)?.column(0), &subset(labels, &d.split.val)),
    )?;
    rank_auc(&scores(&store, &d.split.test)?.column(0), &subset(labels, &d.split.test))
}

/// Generates the dataset of `config` and trains on it.
pub fn run(config: &RunConfig) -> Result<(TaskDataset, Model, RunSummary)> {
    config.validate()?;
    let d = config.dataset.generate(config.seed)?;
    let (model, summary) = train(config, &d)?;
    Ok((d, model, summary))
}

/// Attention coefficients of one forward pass on the first test item:
/// `(layer, head, key label, values)`.
pub fn attention_snapshot(model: &Model, d: &TaskDataset) -> Result<Vec<(usize, usize, String, Vec<f64>)>> {
    let prep = prepare(&model.config, d)?;
    let sample = match d.task() {
        TaskKind::Trajectory | TaskKind::Cyclic => d.split.test.first().copied().unwrap_or(0),
        _ => 0,
    };
    let rin = match d.task() {
        TaskKind::SimplexPrediction => ReadoutInput::Candidates(Arc::new(subset(&prep.faces, &d.split.test))),
        _ => ReadoutInput::None,
    };
    let mut tape = Tape::new();
    let f = model.forward_tape(&mut tape, &model.store, &prep.contexts[sample], &d.inputs[sample], &rin)?;
    Ok(f.attention
        .iter()
        .map(|(layer, n)| (*layer, n.head, n.key.label(), tape.value(n.values).as_slice().to_vec()))
        .collect())
}
