//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gsan::attention::{parameter_count, GsanLayerConfig, LayerParams, ModelFamily};
use gsan::complex::{build_complex, random_complex, SimplicialComplex};
use gsan::datasets::TaskKind;
use gsan::dense::Mat;
use gsan::operators::{
    dirac_operator, exact_harmonic_projector, hodge_decompose, hodge_laplacians, HarmonicProjector,
};
use gsan::propcheck::{
    awareness_separation, gradient_error, lambda_max, orientation_error, permutation_error, projector_errors,
    small_random_complex,
};
use gsan::tasks::{run, RunConfig};
use gsan::Result;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Result<Outcome> {
    Ok(Outcome { passed, detail })
}

fn timed(limit: Option<Duration>, f: impl FnOnce() -> Result<Outcome>) -> (bool, String) {
    let start = Instant::now();
    let r = f();
    let elapsed = start.elapsed();
    let in_time = limit.is_none_or(|l| elapsed < l);
    let limit_text = limit.map(|l| format!(" (limit {}s)", l.as_secs())).unwrap_or_default();
    match r {
        Ok(o) => (
            o.passed && in_time,
            format!("{}; {:.2}s{}", o.detail, elapsed.as_secs_f64(), limit_text),
        ),
        Err(e) => (false, format!("error: {e}")),
    }
}

/// Random complex up to order 3 with at most `max_total` simplices.
fn bounded_complex(rng: &mut ChaCha8Rng, max_total: usize) -> SimplicialComplex {
    loop {
        let n_vertices = rng.gen_range(3..=9);
        let n_top = rng.gen_range(1..=7);
        let x = random_complex(rng, n_vertices, n_top, 3);
        if x.total_simplices() <= max_total && x.max_order() >= 1 {
            return x;
        }
    }
}

/// Dense integer incidence matrix built straight from the vertex lists: the
/// face dropping vertex `j` gets `(-1)^j`.
fn integer_incidence(x: &SimplicialComplex, k: usize) -> Vec<Vec<i64>> {
    let faces = x.simplices(k - 1);
    let cofaces = x.simplices(k);
    let mut b = vec![vec![0i64; cofaces.len()]; faces.len()];
    for (c, s) in cofaces.iter().enumerate() {
        for j in 0..s.len() {
            let mut f = s.clone();
            f.remove(j);
            let r = faces.iter().position(|g| *g == f).expect("closed complex");
            b[r][c] = if j % 2 == 0 { 1 } else { -1 };
        }
    }
    b
}

fn dirac_identity() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut mismatches = 0;
    let mut largest = 0;
    for _ in 0..50 {
        let x = bounded_complex(&mut rng, 40);
        let sizes = x.sizes();
        let n: usize = sizes.iter().sum();
        largest = largest.max(n);
        let off: Vec<usize> = sizes.iter().scan(0, |a, &s| {
            let o = *a;
            *a += s;
            Some(o)
        }).collect();
        let mut d = vec![vec![0i64; n]; n];
        for k in 1..sizes.len() {
            let b = integer_incidence(&x, k);
            for (r, row) in b.iter().enumerate() {
                for (c, &v) in row.iter().enumerate() {
                    d[off[k - 1] + r][off[k] + c] = v;
                    d[off[k] + c][off[k - 1] + r] = v;
                }
            }
        }
        let d2: Vec<Vec<i64>> = (0..n)
            .map(|i| (0..n).map(|j| (0..n).map(|m| d[i][m] * d[m][j]).sum()).collect())
            .collect();
        // Library D must equal the oracle, and D² must be block-diagonal
        // with the library Laplacians on the diagonal.
        let dirac = dirac_operator(&x)?.d;
        let lib_d = dirac.to_dense();
        let lib_d2 = dirac.matmul(&dirac)?.to_dense();
        let lap = hodge_laplacians(&x)?;
        let mut expected = vec![vec![0i64; n]; n];
        for k in 0..sizes.len() {
            let l = lap.full(k).to_dense();
            for i in 0..sizes[k] {
                for j in 0..sizes[k] {
                    let v = l[(i, j)];
                    if v.fract() != 0.0 {
                        mismatches += 1;
                    }
                    expected[off[k] + i][off[k] + j] = v as i64;
                }
            }
        }
        let exact = (0..n).all(|i| {
            (0..n).all(|j| {
                d2[i][j] == expected[i][j] && lib_d[(i, j)] == d[i][j] as f64 && lib_d2[(i, j)] == d2[i][j] as f64
            })
        });
        if !exact {
            mismatches += 1;
        }
    }
    outcome(
        mismatches == 0,
        format!("50 complexes up to {largest} simplices, {mismatches} mismatching"),
    )
}

fn hodge() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let x = bounded_complex(&mut rng, 40);
        let k = rng.gen_range(0..=x.max_order());
        let s: Vec<f64> = (0..x.num_simplices(k)).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let h = hodge_decompose(&x, k, &s)?;
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>().abs();
        worst = worst
            .max(dot(&h.irrotational, &h.solenoidal))
            .max(dot(&h.irrotational, &h.harmonic))
            .max(dot(&h.solenoidal, &h.harmonic));
        for i in 0..s.len() {
            worst = worst.max((h.irrotational[i] + h.solenoidal[i] + h.harmonic[i] - s[i]).abs());
        }
    }
    let hollow = build_complex(&[vec![0, 1], vec![1, 2], vec![0, 2]], 2)?;
    let cycle = [1.0, -1.0, 1.0];
    let h = hodge_decompose(&hollow, 1, &cycle)?;
    let cycle_err = h.harmonic.iter().zip(&cycle).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    outcome(
        worst <= 1e-10 && cycle_err <= 1e-12,
        format!("100 signals worst {worst:.2e} (tol 1e-10); hollow triangle harmonic error {cycle_err:.2e} (tol 1e-12)"),
    )
}

fn projector() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut monotone = true;
    let mut worst_at_200: f64 = 0.0;
    let mut cross: f64 = 0.0;
    for _ in 0..20 {
        let x = bounded_complex(&mut rng, 40);
        for errs in projector_errors(&x, 200)? {
            monotone &= errs.windows(2).all(|w| w[1] <= w[0] + 1e-12);
            worst_at_200 = worst_at_200.max(errs[199]);
        }
        // The library projector at J = 200 against the dense oracle.
        let lap = hodge_laplacians(&x)?;
        for k in 0..=x.max_order() {
            let l = lap.full(k);
            let lmax = lambda_max(l);
            if lmax <= 0.0 {
                continue;
            }
            let p = HarmonicProjector::with_eps(k, l, 200, 1.0 / lmax)?;
            let q = exact_harmonic_projector(l);
            cross = cross.max(p.q_hat().to_dense().sub(&q)?.frobenius_norm());
        }
    }
    let hollow = build_complex(&[vec![0, 1], vec![1, 2], vec![0, 2]], 2)?;
    let l1 = hodge_laplacians(&hollow)?.full(1).clone();
    let one_step = HarmonicProjector::with_eps(1, &l1, 1, 1.0 / lambda_max(&l1))?;
    let third = 1.0 / 3.0;
    let expected = Mat::from_fn(3, 3, |i, j| if (i + j) % 2 == 0 { third } else { -third });
    let hollow_err = one_step.q_hat().to_dense().sub(&expected)?.frobenius_norm();
    let ok = monotone && worst_at_200 < 1e-3 && cross < 1e-3 && hollow_err <= 1e-12;
    outcome(
        ok,
        format!(
            "monotone {monotone}; dense error at J=200 {worst_at_200:.2e}, sparse {cross:.2e} (tol 1e-3); hollow triangle J=1 {hollow_err:.2e} (tol 1e-12)"
        ),
    )
}

fn permutation() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let x = small_random_complex(&mut rng, 40);
        worst = worst.max(permutation_error(&x, &mut rng)?);
    }
    outcome(worst <= 1e-9, format!("50 triples worst {worst:.2e} (tol 1e-9)"))
}

fn awareness() -> Result<Outcome> {
    let sep = awareness_separation(15, 10)?;
    outcome(sep > 1e-6, format!("largest difference over 10 draws {sep:.3e} (needs > 1e-6)"))
}

fn orientation() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let x = small_random_complex(&mut rng, 40);
        worst = worst.max(orientation_error(&x, &mut rng)?);
    }
    outcome(worst <= 1e-9, format!("20 flips worst {worst:.2e} (tol 1e-9)"))
}

fn gradients() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut worst: f64 = 0.0;
    for seed in 0..5 {
        let x = small_random_complex(&mut rng, 20);
        worst = worst.max(gradient_error(&x, seed, 1e-4)?);
    }
    outcome(worst <= 1e-4, format!("5 seeds worst relative error {worst:.2e} (rtol 1e-4)"))
}

fn parameters() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let mut mismatches = Vec::new();
    let mut halves = true;
    for i in 0..10 {
        let mut cfg = GsanLayerConfig::new(rng.gen_range(1..=4), rng.gen_range(1..=6), rng.gen_range(1..=6));
        cfg.heads = rng.gen_range(1..=3);
        let store = LayerParams::init(&cfg, ModelFamily::Gsan, 2, i)?;
        let formula = parameter_count(&cfg);
        if store.size() != formula {
            mismatches.push(format!(
                "J={} F_in={} F_out={} H={}: store {} vs formula {}",
                cfg.j,
                cfg.f_in,
                cfg.f_out,
                cfg.heads,
                store.size(),
                formula
            ));
        }
        let joint = LayerParams::init(&cfg, ModelFamily::GsanJoint, 2, i)?;
        halves &= 2 * joint.filter_stack_size() == store.filter_stack_size();
    }
    let first = mismatches.first().map(|m| format!(", e.g. {m}")).unwrap_or_default();
    outcome(
        mismatches.is_empty() && halves,
        format!(
            "{}/10 configs match the closed form{first}; joint stack is half: {halves}",
            10 - mismatches.len()
        ),
    )
}

fn trajectory() -> Result<Outcome> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().expect("thread pool");
    let cfg = RunConfig::default_for(TaskKind::Trajectory);
    let (d, _, summary) = pool.install(|| run(&cfg))?;
    outcome(
        summary.test >= 0.95,
        format!(
            "{} vertices after carving, {} trajectories, single thread: test accuracy {:.3} (needs >= 0.95)",
            d.complex.num_simplices(0),
            d.inputs.len(),
            summary.test
        ),
    )
}

fn cyclic() -> Result<Outcome> {
    let cfg = RunConfig::default_for(TaskKind::Cyclic);
    let harmonic = cfg.model.layers.iter().all(|l| l.use_harmonic);
    let (_, _, summary) = run(&cfg)?;
    outcome(
        harmonic && summary.test >= 0.95,
        format!("harmonic branch {harmonic}: test accuracy {:.3} (needs >= 0.95)", summary.test),
    )
}

fn seeds(task: TaskKind) -> Result<Vec<(f64, f64)>> {
    (0..5)
        .map(|seed| {
            let mut cfg = RunConfig::default_for(task);
            cfg.seed = seed;
            let (_, _, s) = run(&cfg)?;
            Ok((s.test, s.baseline.expect("task reports a baseline")))
        })
        .collect()
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let all: Vec<f64> = v.collect();
    all.iter().sum::<f64>() / all.len() as f64
}

fn fmt_list(v: impl Iterator<Item = f64>) -> String {
    v.map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(", ")
}

fn mdi() -> Result<Outcome> {
    let cfg = RunConfig::default_for(TaskKind::Mdi);
    let skip = cfg.model.layers.iter().all(|l| !l.use_harmonic);
    let r = seeds(TaskKind::Mdi)?;
    let acc = mean(r.iter().map(|p| p.0));
    let margin = mean(r.iter().map(|p| p.0 - p.1));
    outcome(
        skip && acc >= 0.80 && margin >= 0.10,
        format!(
            "accuracy [{}] mean {acc:.3} (needs >= 0.80); baseline [{}]; mean margin {margin:.3} (needs >= 0.10)",
            fmt_list(r.iter().map(|p| p.0)),
            fmt_list(r.iter().map(|p| p.1))
        ),
    )
}

fn simplex() -> Result<Outcome> {
    let r = seeds(TaskKind::SimplexPrediction)?;
    let auc = mean(r.iter().map(|p| p.0));
    let margin = mean(r.iter().map(|p| p.0 - p.1));
    outcome(
        auc >= 0.9 && margin >= 0.05,
        format!(
            "AUC [{}] mean {auc:.3} (needs >= 0.9); MLP [{}]; mean margin {margin:.3} (needs >= 0.05)",
            fmt_list(r.iter().map(|p| p.0)),
            fmt_list(r.iter().map(|p| p.1))
        ),
    )
}

type Criterion = (&'static str, Option<u64>, fn() -> Result<Outcome>);

fn main() -> ExitCode {
    let criteria: [Criterion; 12] = [
        ("dirac_identity", Some(5), dirac_identity),
        ("hodge_decomposition", Some(5), hodge),
        ("projector_convergence", Some(30), projector),
        ("permutation_equivariance", Some(60), permutation),
        ("simplicial_awareness", Some(10), awareness),
        ("orientation_equivariance", Some(30), orientation),
        ("gradient_correctness", Some(120), gradients),
        ("parameter_accounting", Some(1), parameters),
        ("trajectory_classification", Some(600), trajectory),
        ("cyclic_flow_orientation", Some(300), cyclic),
        ("mdi_protocol", None, mdi),
        ("simplex_prediction", None, simplex),
    ];
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        for (name, _, _) in criteria {
            println!("{name}: test");
        }
        return ExitCode::SUCCESS;
    }
    let filter: Vec<&String> = args.iter().filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    let mut ran = 0;
    for (name, limit, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|p| name.contains(p.as_str())) {
            continue;
        }
        ran += 1;
        let (ok, detail) = timed(limit.map(Duration::from_secs), f);
        println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
        if !ok {
            failed += 1;
        }
    }
    println!("{} of {ran} criteria passed", ran - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
