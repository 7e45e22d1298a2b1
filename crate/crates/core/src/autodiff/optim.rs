use serde::{Deserialize, Serialize};

use crate::dense::Mat;
use crate::error::{shape_err, Result};

use super::{Gradients, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "algo", rename_all = "snake_case", deny_unknown_fields)]
pub enum Optimizer {
    Sgd {
        lr: f64,
        #[serde(default)]
        momentum: f64,
    },
    Adam {
        lr: f64,
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_adam_eps")]
        eps: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}

fn default_beta2() -> f64 {
    0.999
}

fn default_adam_eps() -> f64 {
    1e-8
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::adam(1e-3)
    }
}

impl Optimizer {
    pub fn adam(lr: f64) -> Self {
        Optimizer::Adam {
            lr,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_adam_eps(),
        }
    }

    pub fn sgd(lr: f64) -> Self {
        Optimizer::Sgd { lr, momentum: 0.0 }
    }
}

/// Moment buffers mirroring the parameter shapes.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub algo: Optimizer,
    pub step: u64,
    first: Vec<Mat>,
    second: Vec<Mat>,
}

impl OptimizerState {
    pub fn new(algo: Optimizer, params: &ParamStore) -> Self {
        let zeros = || -> Vec<Mat> { params.iter().map(|(_, m)| Mat::zeros(m.rows(), m.cols())).collect() };
        OptimizerState {
            algo,
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }
}

/// One update. A non-finite gradient refuses the step and leaves both the
/// parameters and the state untouched.
pub fn optimizer_step(params: &mut ParamStore, grads: &Gradients, state: &mut OptimizerState) -> Result<()> {
    if grads.len() != params.len() || state.first.len() != params.len() {
        return shape_err("gradients, parameters and optimizer state differ in length");
    }
    for id in params.ids() {
        if grads.get(id).shape() != params.get(id).shape() {
            return shape_err(format!("gradient shape for `{}`", params.name(id)));
        }
    }
    grads.check_finite(params)?;
    state.step += 1;
    let t = state.step as f64;
    for id in params.ids() {
        let g = grads.get(id).as_slice();
        let i = id.index();
        let p = params.get_mut(id).as_mut_slice();
        match state.algo {
            Optimizer::Sgd { lr, momentum } => {
                let vel = state.first[i].as_mut_slice();
                for ((p, &g), v) in p.iter_mut().zip(g).zip(vel) {
                    *v = momentum * *v + g;
                    *p -= lr * *v;
                }
            }
            Optimizer::Adam { lr, beta1, beta2, eps } => {
                let c1 = 1.0 - beta1.powf(t);
                let c2 = 1.0 - beta2.powf(t);
                let m = state.first[i].as_mut_slice();
                let v = state.second[i].as_mut_slice();
                for (((p, &g), m), v) in p.iter_mut().zip(g).zip(m).zip(v) {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                }
            }
        }
    }
    Ok(())
}
