use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gsan::complex::{build_complex, SimplicialComplex};
use gsan::dense::Mat;
use gsan::filters::{sc_filter_apply, CochainBundle, ScFilterWeights};
use gsan::operators::{
    betti_number, dirac_operator, harmonic_projector, hodge_decompose, hodge_laplacians, kernel_dimension,
    HarmonicProjector, StepSize,
};
use gsan::propcheck::{dirac_identity_error, projector_errors, random_bundle};
use gsan::sparse::SparseOperator;
use gsan::GsanError;

/// Up to seven top simplices over eight vertices, each of 1 to 4 vertices.
fn tops() -> impl Strategy<Value = Vec<Vec<usize>>> {
    prop::collection::vec(prop::collection::btree_set(0..8usize, 1..=4), 1..7)
        .prop_map(|v| v.into_iter().map(|s| s.into_iter().collect()).collect())
}

fn complex() -> impl Strategy<Value = SimplicialComplex> {
    tops().prop_map(|t| build_complex(&t, 3).unwrap())
}

/// Auto step size where `L_k` is nonzero; `eps = 1` (the identity) where it
/// vanishes, since auto selection rejects a zero spectrum.
fn projectors(x: &SimplicialComplex, steps: usize) -> Vec<HarmonicProjector> {
    let lap = hodge_laplacians(x).unwrap();
    (0..=x.max_order())
        .map(|k| match harmonic_projector(x, k, steps, StepSize::Auto) {
            Ok(p) => p,
            Err(GsanError::InvalidStepSize { .. }) => HarmonicProjector::with_eps(k, lap.full(k), steps, 1.0).unwrap(),
            Err(e) => panic!("{e}"),
        })
        .collect()
}

fn dense_pow(m: &Mat, p: usize) -> Mat {
    let mut r = Mat::identity(m.rows());
    for _ in 0..p {
        r = r.matmul(m).unwrap();
    }
    r
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn boundary_of_boundary_vanishes(x in complex()) {
        for k in 1..x.max_order() {
            let bb = x.boundary(k).unwrap().matmul(&x.boundary(k + 1).unwrap()).unwrap();
            prop_assert!(bb.values().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn top_simplex_order_is_irrelevant(t in tops(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut shuffled = t.clone();
        shuffled.shuffle(&mut rng);
        for s in &mut shuffled {
            s.shuffle(&mut rng);
        }
        prop_assert_eq!(build_complex(&t, 3).unwrap(), build_complex(&shuffled, 3).unwrap());
    }

    #[test]
    fn neighborhoods_are_laplacian_supports(x in complex()) {
        let lap = hodge_laplacians(&x).unwrap();
        for k in 0..=x.max_order() {
            let (lower, upper) = x.neighborhoods(k).unwrap();
            for i in 0..x.num_simplices(k) {
                let support = |l: Option<&SparseOperator>| {
                    let mut row: Vec<usize> = l
                        .map(|l| l.row(i).0.iter().zip(l.row(i).1).filter(|(_, &v)| v != 0.0).map(|(&c, _)| c).collect())
                        .unwrap_or_default();
                    row.push(i);
                    row.sort_unstable();
                    row.dedup();
                    row
                };
                prop_assert_eq!(&lower[i], &support(lap.down(k)));
                prop_assert_eq!(&upper[i], &support(lap.up(k)));
            }
        }
    }

    #[test]
    fn dirac_square_is_block_diagonal(x in complex()) {
        prop_assert_eq!(dirac_identity_error(&x, None).unwrap(), 0.0);
    }

    #[test]
    fn dirac_kernel_is_sum_of_betti_numbers(x in complex()) {
        let d = dirac_operator(&x).unwrap();
        let total: usize = (0..=x.max_order())
            .filter(|&k| x.num_simplices(k) > 0)
            .map(|k| betti_number(&x, k).unwrap())
            .sum();
        prop_assert_eq!(kernel_dimension(&d.d), total);
    }

    #[test]
    fn hodge_components_are_orthogonal(x in complex(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for k in 0..=x.max_order() {
            let s: Vec<f64> = (0..x.num_simplices(k)).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let h = hodge_decompose(&x, k, &s).unwrap();
            let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
            prop_assert!(dot(&h.irrotational, &h.solenoidal).abs() < 1e-10);
            prop_assert!(dot(&h.irrotational, &h.harmonic).abs() < 1e-10);
            prop_assert!(dot(&h.solenoidal, &h.harmonic).abs() < 1e-10);
            for i in 0..s.len() {
                prop_assert!((h.irrotational[i] + h.solenoidal[i] + h.harmonic[i] - s[i]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn projector_error_never_grows(x in complex()) {
        for errs in projector_errors(&x, 40).unwrap() {
            prop_assert!(errs.windows(2).all(|w| w[1] <= w[0] + 1e-12), "{:?}", errs);
        }
    }

    #[test]
    fn filter_is_linear(
        x in complex(),
        seed in any::<u64>(),
        j in 1usize..5,
        alpha in -2.0f64..2.0,
        beta in -2.0f64..2.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut coeffs = || (0..j).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
        let w = ScFilterWeights::new(coeffs(), coeffs(), 0.7).unwrap();
        let proj = projectors(&x, 3);
        let sizes = x.sizes();
        let a = random_bundle(&mut rng, &sizes, 2);
        let b = random_bundle(&mut rng, &sizes, 2);
        let mixed = a.scale(alpha).add(&b.scale(beta)).unwrap();
        let lhs = sc_filter_apply(&x, &w, &mixed, &proj).unwrap();
        let fa = sc_filter_apply(&x, &w, &a, &proj).unwrap();
        let fb = sc_filter_apply(&x, &w, &b, &proj).unwrap();
        let rhs = fa.scale(alpha).add(&fb.scale(beta)).unwrap();
        prop_assert!(lhs.max_abs_diff(&rhs) < 1e-10);
    }

    /// The per-order expansion against the dense operator
    /// `Σ w_down_j D_down^j + Σ w_up_j D_up^j + w_h blockdiag(Q̂_k)`.
    #[test]
    fn filter_matches_dense_operator(x in complex(), seed in any::<u64>(), j in 1usize..5) {
        prop_assume!(x.total_simplices() <= 50);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut coeffs = || (0..j).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
        let (wd, wu) = (coeffs(), coeffs());
        let wh = -0.4;
        let w = ScFilterWeights::new(wd.clone(), wu.clone(), wh).unwrap();
        let proj = projectors(&x, 4);
        let sizes = x.sizes();
        let n: usize = sizes.iter().sum();
        let signal = random_bundle(&mut rng, &sizes, 3);

        let d = dirac_operator(&x).unwrap();
        let (down, up) = (d.d_down.to_dense(), d.d_up.to_dense());
        let mut h = Mat::zeros(n, n);
        for p in 1..=j {
            h.axpy(wd[p - 1], &dense_pow(&down, p)).unwrap();
            h.axpy(wu[p - 1], &dense_pow(&up, p)).unwrap();
        }
        let mut start = 0;
        for (k, q) in proj.iter().enumerate() {
            let q = q.q_hat().to_dense();
            for r in 0..sizes[k] {
                for c in 0..sizes[k] {
                    h.as_mut_slice()[(start + r) * n + start + c] += wh * q[(r, c)];
                }
            }
            start += sizes[k];
        }
        let expected = CochainBundle::from_stacked(&sizes, &h.matmul(&signal.stacked()).unwrap()).unwrap();
        let got = sc_filter_apply(&x, &w, &signal, &proj).unwrap();
        prop_assert!(got.max_abs_diff(&expected) < 1e-9, "{}", got.max_abs_diff(&expected));
    }
}

/// Scaling only the down coefficients changes exactly the terms that walk
/// the down family, on every order at once.
#[test]
fn coefficients_are_shared_across_orders() {
    let x = build_complex(&[vec![0, 1, 2, 3], vec![3, 4], vec![4, 5, 6]], 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let sizes = x.sizes();
    let signal = random_bundle(&mut rng, &sizes, 1);
    let proj = projectors(&x, 2);
    let only_down = ScFilterWeights::new(vec![0.5, -0.3], vec![0.0, 0.0], 0.0).unwrap();
    let d = dirac_operator(&x).unwrap();
    let down = d.d_down.to_dense();
    let dense = dense_pow(&down, 1).scale(0.5).add(&dense_pow(&down, 2).scale(-0.3)).unwrap();
    let expected = CochainBundle::from_stacked(&sizes, &dense.matmul(&signal.stacked()).unwrap()).unwrap();
    let got = sc_filter_apply(&x, &only_down, &signal, &proj).unwrap();
    assert!(got.max_abs_diff(&expected) < 1e-12);
    // Every order is touched by the down family on this complex.
    for k in 0..=3 {
        assert!(got.order(k).max_abs() > 0.0, "order {k}");
    }
}
