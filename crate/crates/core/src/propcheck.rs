//! Invariant suite over random complexes, with an optional injected fault
//! as a negative control.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{
    attentional_laplacians, gsan_layer_forward, GsanLayerConfig, LayerParams, Model, ModelConfig, ModelFamily,
    Pooling, ReadoutConfig, ReadoutInput, SimplicialContext,
};
use crate::autodiff::{finite_difference_check, Activation, LossTarget, Tape};
use crate::complex::{build_complex, random_complex, SimplicialComplex};
use crate::dense::Mat;
use crate::error::Result;
use crate::filters::CochainBundle;
use crate::operators::{
    boundaries, exact_harmonic_projector, hodge_decompose, DiracSet, LaplacianSet, StepSize,
};
use crate::sparse::SparseOperator;

pub const REPORT_VERSION: u32 = 1;

/// Deliberate bugs the suite must catch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fault {
    /// Flips the sign of one entry of `B_2`.
    B2Sign,
}

impl std::str::FromStr for Fault {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "b2-sign" => Ok(Fault::B2Sign),
            other => Err(format!("unknown fault `{other}` (known: b2-sign)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub trials: usize,
    pub failures: usize,
    /// Largest error seen (for awareness: smallest separation).
    pub worst: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropcheckReport {
    pub format_version: u32,
    pub seed: u64,
    pub n_trials: usize,
    pub fault: Option<Fault>,
    pub checks: Vec<CheckResult>,
    pub total_trials: usize,
    pub passed: bool,
}

impl PropcheckReport {
    pub fn is_vacuous(&self) -> bool {
        self.total_trials == 0
    }

    /// 0 when every check passed, 1 on any failure, 2 when nothing ran.
    pub fn exit_code(&self) -> i32 {
        if self.is_vacuous() {
            2
        } else if self.passed {
            0
        } else {
            1
        }
    }

    pub fn failing(&self) -> Vec<&str> {
        self.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect()
    }
}

/// A random complex of order at most 2 with at most `max_total` simplices.
pub fn small_random_complex(rng: &mut ChaCha8Rng, max_total: usize) -> SimplicialComplex {
    loop {
        let n_vertices = rng.gen_range(4..=8);
        let n_top = rng.gen_range(2..=6);
        let x = random_complex(rng, n_vertices, n_top, 2);
        if x.total_simplices() <= max_total && x.num_simplices(1) > 0 {
            return x;
        }
    }
}

fn random_mat(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat {
    Mat::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

pub fn random_bundle(rng: &mut ChaCha8Rng, sizes: &[usize], width: usize) -> CochainBundle {
    CochainBundle::new(sizes.iter().map(|&n| random_mat(rng, n, width)).collect()).expect("consistent widths")
}

fn block_diagonal(sizes: &[usize], blocks: &[&SparseOperator]) -> Result<SparseOperator> {
    let n = sizes.len();
    let mut grid: Vec<Vec<Option<&SparseOperator>>> = vec![vec![None; n]; n];
    for (k, b) in blocks.iter().enumerate() {
        grid[k][k] = Some(b);
    }
    SparseOperator::from_blocks(sizes, sizes, &grid)
}

/// Largest entry of `|D² - blockdiag(L_0..L_K)|`; zero when the identity
/// holds exactly. `fault` corrupts `B_2` before `D` is assembled.
pub fn dirac_identity_error(x: &SimplicialComplex, fault: Option<Fault>) -> Result<f64> {
    let sizes = x.sizes();
    let mut bounds = boundaries(x);
    if fault == Some(Fault::B2Sign) && bounds.len() >= 2 && bounds[1].nnz() > 0 {
        let first = bounds[1].triplets().next().expect("non-empty");
        bounds[1] = bounds[1].map_values(|i, j, v| if (i, j) == (first.0, first.1) { -v } else { v });
    }
    let d = DiracSet::from_boundaries(&sizes, &bounds)?;
    let d2 = d.d.matmul(&d.d)?;
    let lap = LaplacianSet::from_boundaries(&sizes, &boundaries(x))?;
    let fulls: Vec<&SparseOperator> = (0..sizes.len()).map(|k| lap.full(k)).collect();
    let expected = block_diagonal(&sizes, &fulls)?;
    Ok(d2.sub(&expected)?.values().iter().fold(0.0, |m, v| m.max(v.abs())))
}

/// Worst pairwise inner product and reconstruction error of the Hodge
/// components of a random signal at each order.
pub fn hodge_error(x: &SimplicialComplex, rng: &mut ChaCha8Rng) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for k in 0..=x.max_order() {
        let n = x.num_simplices(k);
        if n == 0 {
            continue;
        }
        let s: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let h = hodge_decompose(x, k, &s)?;
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>().abs();
        worst = worst
            .max(dot(&h.irrotational, &h.solenoidal))
            .max(dot(&h.irrotational, &h.harmonic))
            .max(dot(&h.solenoidal, &h.harmonic));
        for i in 0..n {
            worst = worst.max((h.irrotational[i] + h.solenoidal[i] + h.harmonic[i] - s[i]).abs());
        }
    }
    Ok(worst)
}

/// Largest eigenvalue of a symmetric operator (dense solver).
pub fn lambda_max(m: &SparseOperator) -> f64 {
    if m.rows() == 0 {
        return 0.0;
    }
    let d = m.to_dense();
    let dm = DMatrix::from_row_slice(d.rows(), d.cols(), d.as_slice());
    dm.symmetric_eigenvalues().iter().copied().fold(0.0, f64::max)
}

/// `‖(I - L/λ_max)^J - Q‖_F` for `J = 1..=steps` at every order with a
/// nonzero Laplacian.
pub fn projector_errors(x: &SimplicialComplex, steps: usize) -> Result<Vec<Vec<f64>>> {
    let lap = LaplacianSet::from_boundaries(&x.sizes(), &boundaries(x))?;
    let mut out = Vec::new();
    for k in 0..=x.max_order() {
        let l = lap.full(k);
        let lmax = lambda_max(l);
        if lmax <= 0.0 {
            continue;
        }
        let n = l.rows();
        let step = SparseOperator::identity(n).lincomb(1.0, l, -1.0 / lmax)?.to_dense();
        let q = exact_harmonic_projector(l);
        let mut p = Mat::identity(n);
        let mut errs = Vec::with_capacity(steps);
        for _ in 0..steps {
            p = step.matmul(&p)?;
            errs.push(p.sub(&q)?.frobenius_norm());
        }
        out.push(errs);
    }
    Ok(out)
}

fn equivariance_layer() -> GsanLayerConfig {
    let mut c = GsanLayerConfig::new(2, 3, 4);
    c.heads = 2;
    c.nonlinearity = Activation::Tanh;
    c
}

/// Output difference between the layer on relabeled inputs and the
/// relabeled output, for random relabelings of every order.
pub fn permutation_error(x: &SimplicialComplex, rng: &mut ChaCha8Rng) -> Result<f64> {
    let cfg = equivariance_layer();
    let params = LayerParams::init(&cfg, ModelFamily::Gsan, x.max_order(), rng.gen())?;
    let ctx = SimplicialContext::from_complex(x, StepSize::Auto)?;
    let sizes = x.sizes();
    let z = random_bundle(rng, &sizes, cfg.f_in);
    let perms: Vec<Vec<usize>> = sizes
        .iter()
        .map(|&n| {
            let mut p: Vec<usize> = (0..n).collect();
            p.shuffle(rng);
            p
        })
        .collect();
    let out = gsan_layer_forward(&ctx, &cfg, &params, &z)?;
    let pctx = ctx.permuted(&perms)?;
    let pout = gsan_layer_forward(&pctx, &cfg, &params, &z.permuted(&perms))?;
    Ok(pout.max_abs_diff(&out.permuted(&perms)))
}

/// Output difference between the layer on re-oriented edges and the
/// sign-conjugated output, with signed masking and an odd nonlinearity.
pub fn orientation_error(x: &SimplicialComplex, rng: &mut ChaCha8Rng) -> Result<f64> {
    let mut cfg = equivariance_layer();
    cfg.signed_masking = true;
    let params = LayerParams::init(&cfg, ModelFamily::Gsan, x.max_order(), rng.gen())?;
    let ctx = SimplicialContext::from_complex(x, StepSize::Auto)?;
    let sizes = x.sizes();
    let z = random_bundle(rng, &sizes, cfg.f_in);
    let signs: Vec<Vec<f64>> = sizes
        .iter()
        .enumerate()
        .map(|(k, &n)| {
            (0..n)
                .map(|_| if k == 1 && rng.gen_bool(0.5) { -1.0 } else { 1.0 })
                .collect()
        })
        .collect();
    let out = gsan_layer_forward(&ctx, &cfg, &params, &z)?;
    let fctx = ctx.reoriented(&signs)?;
    let fout = gsan_layer_forward(&fctx, &cfg, &params, &z.reoriented(&signs))?;
    Ok(fout.max_abs_diff(&out.reoriented(&signs)))
}

/// Largest order-1 output difference between the filled and the hollow
/// triangle over `draws` weight draws, with identical node and edge inputs.
pub fn awareness_separation(seed: u64, draws: usize) -> Result<f64> {
    let filled = build_complex(&[vec![0, 1, 2]], 2)?;
    let hollow = build_complex(&[vec![0, 1], vec![1, 2], vec![0, 2]], 2)?;
    let cfg = equivariance_layer();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: f64 = 0.0;
    for _ in 0..draws {
        let params = LayerParams::init(&cfg, ModelFamily::Gsan, 2, rng.gen())?;
        let lower = [random_mat(&mut rng, 3, cfg.f_in), random_mat(&mut rng, 3, cfg.f_in)];
        let zf = CochainBundle::new(vec![lower[0].clone(), lower[1].clone(), random_mat(&mut rng, 1, cfg.f_in)])?;
        let zh = CochainBundle::new(vec![lower[0].clone(), lower[1].clone(), Mat::zeros(0, cfg.f_in)])?;
        let of = gsan_layer_forward(&SimplicialContext::from_complex(&filled, StepSize::Auto)?, &cfg, &params, &zf)?;
        let oh = gsan_layer_forward(&SimplicialContext::from_complex(&hollow, StepSize::Auto)?, &cfg, &params, &zh)?;
        best = best.max(of.order(1).sub(oh.order(1))?.frobenius_norm());
    }
    Ok(best)
}

/// Two-layer, two-head model used by the gradient check.
pub fn gradient_check_model() -> ModelConfig {
    let mut l0 = GsanLayerConfig::new(2, 2, 3);
    l0.heads = 2;
    l0.nonlinearity = Activation::Tanh;
    let mut l1 = GsanLayerConfig::new(2, 6, 3);
    l1.heads = 2;
    l1.nonlinearity = Activation::Tanh;
    ModelConfig {
        family: ModelFamily::Gsan,
        diffusion: None,
        layers: vec![l0, l1],
        readout: ReadoutConfig::ComplexLevel {
            pooling: Pooling::Mean,
            hidden: 4,
            classes: 2,
            orders: None,
        },
    }
}

/// Worst relative error of the tape gradients against central differences.
pub fn gradient_error(x: &SimplicialComplex, seed: u64, rtol: f64) -> Result<f64> {
    gradient_error_with_step(x, seed, 1e-4, rtol)
}

/// As [`gradient_error`] with difference step `h`. The attention logits pass
/// through a LeakyReLU, so a kink inside the `±2h` stencil spoils the
/// difference quotient; a smaller step separates that from a wrong gradient.
pub fn gradient_error_with_step(x: &SimplicialComplex, seed: u64, h: f64, rtol: f64) -> Result<f64> {
    let cfg = gradient_check_model();
    let model = Model::init(&cfg, x.max_order(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let ctx = SimplicialContext::from_complex(x, StepSize::Auto)?;
    let input = random_bundle(&mut rng, &x.sizes(), cfg.input_width());
    let target = Arc::new(LossTarget::CrossEntropy(vec![rng.gen_range(0..2)]));
    let rin = ReadoutInput::None;
    let (_, grads) = model.loss_and_gradients(&ctx, &input, &rin, &target)?;
    let report = finite_difference_check(
        |store| {
            let mut tape = Tape::new();
            let f = model.forward_tape(&mut tape, store, &ctx, &input, &rin)?;
            let loss = tape.loss(f.prediction, target.clone())?;
            Ok(tape.value(loss)[(0, 0)])
        },
        &model.store,
        &grads,
        h,
        rtol,
    )?;
    Ok(report.worst())
}

/// Largest `|row sum - 1|` over every unsigned attentional Laplacian.
pub fn row_stochastic_error(x: &SimplicialComplex, rng: &mut ChaCha8Rng) -> Result<f64> {
    let cfg = equivariance_layer();
    let params = LayerParams::init(&cfg, ModelFamily::Gsan, x.max_order(), rng.gen())?;
    let ctx = SimplicialContext::from_complex(x, StepSize::Auto)?;
    let z = random_bundle(rng, &x.sizes(), cfg.f_in);
    let mut worst: f64 = 0.0;
    for a in attentional_laplacians(&ctx, &cfg, &params, &z)? {
        for s in a.row_sums() {
            worst = worst.max((s - 1.0).abs());
        }
    }
    Ok(worst)
}

struct Tally {
    name: &'static str,
    tolerance: f64,
    trials: usize,
    failures: usize,
    worst: f64,
    /// True when larger values are good (a separation, not an error).
    lower_bound: bool,
}

impl Tally {
    fn new(name: &'static str, tolerance: f64) -> Self {
        Tally {
            name,
            tolerance,
            trials: 0,
            failures: 0,
            worst: 0.0,
            lower_bound: false,
        }
    }

    fn record(&mut self, value: f64, ok: bool) {
        if self.lower_bound {
            self.worst = if self.trials == 0 { value } else { self.worst.min(value) };
        } else if value.is_nan() {
            self.worst = f64::NAN;
        } else if !self.worst.is_nan() {
            self.worst = self.worst.max(value);
        }
        self.trials += 1;
        if !ok {
            self.failures += 1;
        }
    }

    fn error(&mut self, value: f64) {
        let ok = value <= self.tolerance;
        self.record(value, ok);
    }

    fn finish(self) -> CheckResult {
        CheckResult {
            name: self.name.into(),
            trials: self.trials,
            failures: self.failures,
            worst: self.worst,
            tolerance: self.tolerance,
            passed: self.failures == 0,
        }
    }
}

/// Runs every check `n_trials` times on fresh random complexes.
pub fn run_propcheck(seed: u64, n_trials: usize, fault: Option<Fault>) -> Result<PropcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dirac = Tally::new("dirac_identity", 0.0);
    let mut hodge = Tally::new("hodge_orthogonality", 1e-10);
    let mut projector = Tally::new("projector_convergence", 1e-3);
    let mut perm = Tally::new("permutation_equivariance", 1e-9);
    let mut orient = Tally::new("orientation_equivariance", 1e-9);
    let mut aware = Tally::new("simplicial_awareness", 1e-6);
    aware.lower_bound = true;
    let mut grad = Tally::new("gradient", 1e-4);
    let mut rows = Tally::new("row_stochastic", 1e-12);
    for _ in 0..n_trials {
        let x = small_random_complex(&mut rng, 40);
        dirac.error(dirac_identity_error(&x, fault)?);
        hodge.error(hodge_error(&x, &mut rng)?);
        for errs in projector_errors(&x, 200)? {
            let monotone = errs.windows(2).all(|w| w[1] <= w[0] + 1e-12);
            let last = *errs.last().expect("200 steps");
            projector.record(last, monotone && last < projector.tolerance);
        }
        perm.error(permutation_error(&x, &mut rng)?);
        orient.error(orientation_error(&x, &mut rng)?);
        let sep = awareness_separation(rng.gen(), 10)?;
        aware.record(sep, sep > aware.tolerance);
        grad.error(gradient_error(&small_random_complex(&mut rng, 20), rng.gen(), 1e-4)?);
        rows.error(row_stochastic_error(&x, &mut rng)?);
    }
    let checks: Vec<CheckResult> = [dirac, hodge, projector, perm, orient, aware, grad, rows]
        .into_iter()
        .map(Tally::finish)
        .collect();
    let total_trials = checks.iter().map(|c| c.trials).sum();
    let passed = checks.iter().all(|c| c.passed);
    Ok(PropcheckReport {
        format_version: REPORT_VERSION,
        seed,
        n_trials,
        fault,
        checks,
        total_trials,
        passed,
    })
}
