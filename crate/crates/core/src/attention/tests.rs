use std::sync::Arc;

use super::*;
use crate::autodiff::{Activation, Pattern, Tape};
use crate::complex::{build_complex, SimplicialComplex};
use crate::dense::Mat;
use crate::error::GsanError;
use crate::filters::{sc_filter_apply, CochainBundle, ScFilterWeights};
use crate::operators::{harmonic_projector, StepSize};

fn filled() -> SimplicialComplex {
    build_complex(&[vec![0, 1, 2]], 2).unwrap()
}

fn hollow() -> SimplicialComplex {
    build_complex(&[vec![0, 1], vec![1, 2], vec![0, 2]], 2).unwrap()
}

fn ctx(x: &SimplicialComplex) -> SimplicialContext {
    SimplicialContext::from_complex(x, StepSize::Auto).unwrap()
}

fn split_ids(p: &LayerParams, h: usize) -> (Vec<crate::autodiff::ParamId>, Vec<crate::autodiff::ParamId>, crate::autodiff::ParamId) {
    match &p.layout.heads[h].filters {
        FilterIds::Split { down, up, harmonic } => (down.clone(), up.clone(), *harmonic),
        _ => panic!("split layout expected"),
    }
}

fn zero_all(p: &mut LayerParams) {
    for id in p.store.ids().collect::<Vec<_>>() {
        let m = p.store.get_mut(id);
        *m = Mat::zeros(m.rows(), m.cols());
    }
}

fn random_bundle(sizes: &[usize], width: usize, seed: u64) -> CochainBundle {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    CochainBundle::new(
        sizes
            .iter()
            .map(|&n| Mat::from_fn(n, width, |_, _| rng.gen_range(-1.0..1.0)))
            .collect(),
    )
    .unwrap()
}

#[test]
fn singleton_neighborhood_gets_full_weight() {
    let p = Pattern::from_lists(1, &[vec![0]]).unwrap();
    let a = attention_coefficients(&Mat::col_vec(&[3.0]), &[0.7, -0.2], &p, 0.2, false).unwrap();
    assert_eq!(a, vec![1.0]);
}

#[test]
fn zero_vector_gives_uniform_rows() {
    let p = Pattern::from_lists(3, &[vec![0, 1, 2], vec![1], vec![0, 2]]).unwrap();
    let h = Mat::from_fn(3, 2, |i, j| (i * 2 + j) as f64);
    let a = attention_coefficients(&h, &[0.0; 4], &p, 0.2, false).unwrap();
    let want = [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 1.0, 0.5, 0.5];
    for (x, y) in a.iter().zip(want) {
        assert!((x - y).abs() < 1e-15);
    }
}

#[test]
fn identical_edge_features_on_hollow_triangle_are_uniform() {
    let c = ctx(&hollow());
    let s = c.support(1, Adjacency::Lower).unwrap();
    let h = Mat::filled(3, 2, 0.4);
    let a = attention_coefficients(&h, &[0.3, -1.0, 2.0, 0.5], &s.pattern, 0.2, false).unwrap();
    assert_eq!(a.len(), 9);
    for x in a {
        assert!((x - 1.0 / 3.0).abs() < 1e-15);
    }
}

#[test]
fn attention_vector_length_is_checked() {
    let p = Pattern::from_lists(2, &[vec![0, 1], vec![1]]).unwrap();
    let r = attention_coefficients(&Mat::zeros(2, 2), &[0.0; 3], &p, 0.2, false);
    assert!(matches!(r, Err(GsanError::ShapeError(_))));
}

#[test]
fn assembled_uniform_upper_rows_sum_to_one() {
    let c = ctx(&filled());
    let s = c.support(1, Adjacency::Upper).unwrap();
    let p = &s.pattern;
    let trip: Vec<_> = (0..p.nnz())
        .map(|e| (p.entry_rows()[e], p.cols()[e], s.uniform[(e, 0)]))
        .collect();
    let l = assemble_attentional_laplacian(s, &trip, false).unwrap().to_dense();
    for i in 0..3 {
        assert!((l.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }
    let signed = assemble_attentional_laplacian(s, &trip, true).unwrap().to_dense();
    let lu = s.laplacian.to_dense();
    for i in 0..3 {
        for j in 0..3 {
            if i != j {
                assert_eq!(signed[(i, j)].signum(), lu[(i, j)].signum());
            }
        }
    }
}

#[test]
fn empty_upper_support_is_identity() {
    let c = ctx(&hollow());
    let s = c.support(1, Adjacency::Upper).unwrap();
    assert_eq!(s.neighborhoods(), vec![vec![0], vec![1], vec![2]]);
    let l = assemble_attentional_laplacian(s, &[(0, 0, 1.0), (1, 1, 1.0), (2, 2, 1.0)], false).unwrap();
    assert_eq!(l.to_dense(), Mat::identity(3));
    assert_eq!(
        assemble_attentional_laplacian(s, &[(0, 1, 0.5)], false),
        Err(GsanError::SupportViolation { row: 0, col: 1 })
    );
}

#[test]
fn gsccn_zero_weights_give_zero() {
    let x = filled();
    let mut cfg = GsanLayerConfig::new(3, 2, 2);
    cfg.nonlinearity = Activation::Identity;
    let mut p = LayerParams::init(&cfg, ModelFamily::Gsccn, 2, 1).unwrap();
    zero_all(&mut p);
    let y = gsccn_layer_forward(&ctx(&x), &cfg, &p, LaplacianKind::Hodge, &random_bundle(&x.sizes(), 2, 3)).unwrap();
    assert_eq!(y.norm(), 0.0);
}

#[test]
fn gsccn_first_order_maps_nodes_to_gradient() {
    let x = hollow();
    let mut cfg = GsanLayerConfig::new(1, 1, 1);
    cfg.nonlinearity = Activation::Identity;
    let mut p = LayerParams::init(&cfg, ModelFamily::Gsccn, 2, 1).unwrap();
    zero_all(&mut p);
    let (down, _, _) = split_ids(&p, 0);
    *p.store.get_mut(down[0]) = Mat::identity(1);
    let x0 = vec![1.0, -2.0, 0.5];
    let z = CochainBundle::from_vectors(&[x0.clone(), vec![0.0; 3], vec![]]);
    let y = gsccn_layer_forward(&ctx(&x), &cfg, &p, LaplacianKind::Hodge, &z).unwrap();
    let grad = x.boundary(1).unwrap().apply_transpose(&Mat::col_vec(&x0)).unwrap();
    assert_eq!(y.order(1), &grad);
    assert_eq!(y.order(0).max_abs(), 0.0);
}

#[test]
fn gsccn_matches_scalar_filter() {
    let x = build_complex(&[vec![0, 1, 2], vec![1, 2, 3], vec![3, 4], vec![2, 4]], 2).unwrap();
    let c = ctx(&x);
    let mut cfg = GsanLayerConfig::new(4, 1, 1);
    cfg.nonlinearity = Activation::Identity;
    let p = LayerParams::init(&cfg, ModelFamily::Gsccn, 2, 9).unwrap();
    let (down, up, wh) = split_ids(&p, 0);
    let scalars = |ids: &[crate::autodiff::ParamId]| ids.iter().map(|&id| p.store.get(id)[(0, 0)]).collect::<Vec<_>>();
    let w = ScFilterWeights::new(scalars(&down), scalars(&up), p.store.get(wh)[(0, 0)]).unwrap();
    let projs: Vec<_> = (0..=2)
        .map(|k| harmonic_projector(&x, k, 4, StepSize::Fixed(c.harmonic_eps(k))).unwrap())
        .collect();
    let z = random_bundle(&x.sizes(), 1, 5);
    let want = sc_filter_apply(&x, &w, &z, &projs).unwrap();
    let got = gsccn_layer_forward(&c, &cfg, &p, LaplacianKind::Hodge, &z).unwrap();
    assert!(got.max_abs_diff(&want) < 1e-12, "{}", got.max_abs_diff(&want));
}

#[test]
fn zero_attention_reduces_to_row_normalized_gsccn() {
    for signed in [false, true] {
        let x = build_complex(&[vec![0, 1, 2], vec![1, 2, 3], vec![3, 4], vec![0, 4]], 2).unwrap();
        let c = ctx(&x);
        let mut cfg = GsanLayerConfig::new(3, 2, 3);
        cfg.signed_masking = signed;
        cfg.nonlinearity = Activation::Tanh;
        let mut p = LayerParams::init(&cfg, ModelFamily::Gsan, 2, 4).unwrap();
        p.zero_attention();
        let z = random_bundle(&x.sizes(), 2, 8);
        let a = gsan_layer_forward(&c, &cfg, &p, &z).unwrap();
        let b = gsccn_layer_forward(&c, &cfg, &p, LaplacianKind::RowNormalized, &z).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-9);
    }
}

#[test]
fn first_order_layer_ignores_attention() {
    let x = filled();
    let c = ctx(&x);
    let cfg = GsanLayerConfig::new(1, 2, 2);
    let p = LayerParams::init(&cfg, ModelFamily::Gsan, 2, 4).unwrap();
    let mut q = p.clone();
    q.zero_attention();
    let z = random_bundle(&x.sizes(), 2, 1);
    let a = gsan_layer_forward(&c, &cfg, &p, &z).unwrap();
    let b = gsan_layer_forward(&c, &cfg, &q, &z).unwrap();
    assert_eq!(a, b);
    let built = attentional_laplacians(&c, &cfg, &p, &z).unwrap();
    assert!(built.iter().all(|l| l.key.variant == 2));
    assert_eq!(built.len(), 4);
}

#[test]
fn unsigned_attention_rows_are_stochastic() {
    let x = build_complex(&[vec![0, 1, 2], vec![1, 2, 3], vec![3, 4]], 2).unwrap();
    let c = ctx(&x);
    let mut cfg = GsanLayerConfig::new(4, 2, 2);
    cfg.heads = 2;
    let p = LayerParams::init(&cfg, ModelFamily::Gsan, 2, 2).unwrap();
    let ls = attentional_laplacians(&c, &cfg, &p, &random_bundle(&x.sizes(), 2, 3)).unwrap();
    assert_eq!(ls.len(), 2 * 8);
    for l in ls {
        for s in l.row_sums() {
            assert!((s - 1.0).abs() < 1e-10);
        }
    }
}

#[test]
fn multi_head_examples() {
    let a = random_bundle(&[3, 2], 3, 1);
    let b = random_bundle(&[3, 2], 3, 2);
    for mode in [HeadCombine::Concat, HeadCombine::Average] {
        let one = multi_head_combine(std::slice::from_ref(&a), mode, Activation::Identity).unwrap();
        assert_eq!(one, a);
    }
    let avg = multi_head_combine(&[a.clone(), a.clone()], HeadCombine::Average, Activation::Identity).unwrap();
    assert!(avg.max_abs_diff(&a) < 1e-15);
    let cat = multi_head_combine(&[a.clone(), b.clone()], HeadCombine::Concat, Activation::Identity).unwrap();
    assert_eq!(cat.width(), 6);
    assert_eq!(cat.order(0).col_block(0, 3), *a.order(0));
    assert_eq!(cat.order(1).col_block(3, 6), *b.order(1));
    let bad = random_bundle(&[3, 2], 2, 1);
    assert!(multi_head_combine(&[a, bad], HeadCombine::Concat, Activation::Identity).is_err());
}

#[test]
fn joint_stack_is_half() {
    let cfg = GsanLayerConfig::new(3, 4, 5);
    let g = LayerParams::init(&cfg, ModelFamily::Gsan, 2, 0).unwrap();
    let j = LayerParams::init(&cfg, ModelFamily::GsanJoint, 2, 0).unwrap();
    assert_eq!(2 * j.filter_stack_size(), g.filter_stack_size());
}

#[test]
fn joint_equals_gsccn_at_extreme_orders() {
    let x = build_complex(&[vec![0, 1, 2], vec![1, 2, 3], vec![3, 4]], 2).unwrap();
    let c = ctx(&x);
    let mut cfg = GsanLayerConfig::new(3, 2, 2);
    cfg.nonlinearity = Activation::Identity;
    let joint = LayerParams::init(&cfg, ModelFamily::GsanJoint, 2, 3).unwrap();
    let FilterIds::Joint { shared } = &joint.layout.heads[0].filters else {
        panic!()
    };
    let mut conv = LayerParams::init(&cfg, ModelFamily::Gsccn, 2, 5).unwrap();
    let (down, up, wh) = split_ids(&conv, 0);
    for p in 0..3 {
        *conv.store.get_mut(down[p]) = joint.store.get(shared[p]).clone();
        *conv.store.get_mut(up[p]) = joint.store.get(shared[p]).clone();
    }
    *conv.store.get_mut(wh) = Mat::zeros(2, 2);
    let z = random_bundle(&x.sizes(), 2, 6);
    let a = gsan_joint_layer_forward(&c, &cfg, &joint, Diffusion::Fixed(LaplacianKind::Hodge), &z).unwrap();
    let b = gsccn_layer_forward(&c, &cfg, &conv, LaplacianKind::Hodge, &z).unwrap();
    for k in [0, 2] {
        assert!(a.order(k).max_abs_diff(b.order(k)) < 1e-12);
    }
    let mut zero = joint.clone();
    zero_all(&mut zero);
    let y = gsan_joint_layer_forward(&c, &cfg, &zero, Diffusion::Attention, &z).unwrap();
    assert_eq!(y.norm(), 0.0);
}

#[test]
fn parameter_count_examples() {
    assert_eq!(parameter_count(&GsanLayerConfig::new(1, 1, 1)), 16);
    assert_eq!(parameter_count(&GsanLayerConfig::new(2, 4, 8)), 352);
    let mut h = GsanLayerConfig::new(2, 4, 8);
    h.heads = 3;
    assert_eq!(parameter_count(&h), 3 * 352);
}

#[test]
fn readout_examples() {
    let mut store = crate::autodiff::ParamStore::new();
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
    let lin = Affine::init(&mut store, "lin", 3, 2, &mut rng);
    *store.get_mut(lin.weight) = Mat::zeros(3, 2);
    *store.get_mut(lin.bias) = Mat::from_rows(&[vec![0.5, -1.0]]).unwrap();
    let mut tape = Tape::new();
    let x = tape.constant(Mat::from_fn(4, 3, |i, j| (i + j) as f64));
    let y = lin.forward(&mut tape, &store, x).unwrap();
    for i in 0..4 {
        assert_eq!(tape.value(y).row(i), &[0.5, -1.0]);
    }

    let b = CochainBundle::new(vec![Mat::filled(3, 2, 1.5), Mat::filled(5, 2, 1.5)]).unwrap();
    assert_eq!(pool_bundle(&b, Pooling::Mean), Mat::filled(1, 4, 1.5));

    let x = filled();
    let faces = candidate_faces(&x, &[vec![0, 1, 2]]).unwrap();
    assert_eq!(faces, vec![vec![0, 1, 2]]);
    let edges = Mat::from_fn(3, 2, |i, j| (10 * i + j) as f64);
    let g = gather_candidate_features(&edges, &faces).unwrap();
    assert_eq!(g.row(0), &[0.0, 1.0, 10.0, 11.0, 20.0, 21.0]);
    let h = hollow();
    assert!(matches!(
        candidate_faces(&h, &[vec![0, 1, 3]]),
        Err(GsanError::MissingFace(_))
    ));
}

#[test]
fn checkpoint_round_trip() {
    let cfg = ModelConfig {
        family: ModelFamily::Gsan,
        diffusion: None,
        layers: vec![GsanLayerConfig::new(2, 2, 3)],
        readout: ReadoutConfig::ComplexLevel {
            pooling: Pooling::Mean,
            hidden: 4,
            classes: 2,
            orders: None,
        },
    };
    let m = Model::init(&cfg, 2, 11).unwrap();
    let dir = std::env::temp_dir().join(format!("gsan-ckpt-{}", std::process::id()));
    save_checkpoint(&dir, &m, 11).unwrap();
    let (back, manifest) = load_checkpoint(&dir).unwrap();
    assert_eq!(back, m);
    assert_eq!(manifest.seed, 11);
    std::fs::write(dir.join("params.bin"), [0u8; 8]).unwrap();
    assert!(matches!(load_checkpoint(&dir), Err(GsanError::IncompatibleCheckpoint(_))));
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn model_forward_shapes() {
    let x = filled();
    let c = ctx(&x);
    let mut l1 = GsanLayerConfig::new(2, 2, 3);
    l1.heads = 2;
    let l2 = GsanLayerConfig::new(2, 6, 2);
    let cfg = ModelConfig {
        family: ModelFamily::Gsan,
        diffusion: None,
        layers: vec![l1, l2],
        readout: ReadoutConfig::PerSimplex { out: 1 },
    };
    let m = Model::init(&cfg, 2, 1).unwrap();
    let y = m.predict(&c, &random_bundle(&x.sizes(), 2, 2), &ReadoutInput::None).unwrap();
    assert_eq!(y.shape(), (7, 1));
    let sp = ReadoutConfig::SimplexPrediction { order: 2, hidden: 4 };
    let m = Model::init(&ModelConfig { readout: sp, ..cfg.clone() }, 2, 1).unwrap();
    let cands = Arc::new(candidate_faces(&x, &[vec![0, 1, 2]]).unwrap());
    let y = m
        .predict(&c, &random_bundle(&x.sizes(), 2, 2), &ReadoutInput::Candidates(cands))
        .unwrap();
    assert_eq!(y.shape(), (1, 1));
    let mut bad = cfg.clone();
    bad.layers[1].f_in = 5;
    assert!(matches!(
        Model::init(&bad, 2, 1),
        Err(GsanError::InvalidConfig { field, .. }) if field == "layers[1].f_in"
    ));
}
