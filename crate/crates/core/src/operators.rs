//! Hodge Laplacians, the Dirac operator, harmonic projectors and the Hodge
//! decomposition.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::complex::SimplicialComplex;
use crate::dense::Mat;
use crate::error::{shape_err, GsanError, Result};
use crate::sparse::{offsets, SparseOperator};

/// Eigenvalues below this magnitude count as zero.
pub const KERNEL_THRESHOLD: f64 = 1e-8;

const POWER_ITERATIONS: usize = 200;
const POWER_SEED: u64 = 0x005E_ED0F_D1AC;

/// All incidence matrices `B_1..B_K` of a complex, empty blocks included.
pub fn boundaries(x: &SimplicialComplex) -> Vec<SparseOperator> {
    (1..=x.max_order())
        .map(|k| x.boundary(k).expect("order in range"))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct LaplacianSet {
    full: Vec<SparseOperator>,
    down: Vec<Option<SparseOperator>>,
    up: Vec<Option<SparseOperator>>,
}

impl LaplacianSet {
    /// `bounds[k - 1]` is `B_k`; `sizes` holds `N_0..N_K`.
    pub fn from_boundaries(sizes: &[usize], bounds: &[SparseOperator]) -> Result<Self> {
        check_boundaries(sizes, bounds)?;
        let order = sizes.len() - 1;
        let mut full = Vec::with_capacity(order + 1);
        let mut down = Vec::with_capacity(order + 1);
        let mut up = Vec::with_capacity(order + 1);
        for k in 0..=order {
            let d = if k > 0 {
                let b = &bounds[k - 1];
                Some(b.transpose().matmul(b)?)
            } else {
                None
            };
            let u = if k < order {
                let b = &bounds[k];
                Some(b.matmul(&b.transpose())?)
            } else {
                None
            };
            let l = match (&d, &u) {
                (Some(d), Some(u)) => d.add(u)?,
                (Some(d), None) => d.clone(),
                (None, Some(u)) => u.clone(),
                (None, None) => SparseOperator::zeros(sizes[k], sizes[k]),
            };
            full.push(l);
            down.push(d);
            up.push(u);
        }
        Ok(LaplacianSet { full, down, up })
    }

    pub fn max_order(&self) -> usize {
        self.full.len() - 1
    }

    /// `L_k`.
    pub fn full(&self, k: usize) -> &SparseOperator {
        &self.full[k]
    }

    /// `L_k^(d) = B_kᵀ B_k`, absent at order 0.
    pub fn down(&self, k: usize) -> Option<&SparseOperator> {
        self.down[k].as_ref()
    }

    /// `L_k^(u) = B_{k+1} B_{k+1}ᵀ`, absent at order K.
    pub fn up(&self, k: usize) -> Option<&SparseOperator> {
        self.up[k].as_ref()
    }
}

fn check_boundaries(sizes: &[usize], bounds: &[SparseOperator]) -> Result<()> {
    if sizes.is_empty() || bounds.len() + 1 != sizes.len() {
        return shape_err(format!(
            "{} boundary matrices for {} orders",
            bounds.len(),
            sizes.len()
        ));
    }
    for (i, b) in bounds.iter().enumerate() {
        if b.shape() != (sizes[i], sizes[i + 1]) {
            return shape_err(format!(
                "B_{} is {}x{}, expected {}x{}",
                i + 1,
                b.rows(),
                b.cols(),
                sizes[i],
                sizes[i + 1]
            ));
        }
    }
    Ok(())
}

pub fn hodge_laplacians(x: &SimplicialComplex) -> Result<LaplacianSet> {
    LaplacianSet::from_boundaries(&x.sizes(), &boundaries(x))
}

/// Which half of the Dirac split incidence block `B_k` belongs to. Odd `k`
/// goes to the lower (gradient-like) part and even `k` to the upper part,
/// which reproduces the usual split at K = 2 and keeps the two halves
/// mutually annihilating for any K.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DiracFamily {
    Down,
    Up,
}

pub fn dirac_family(k: usize) -> DiracFamily {
    if k % 2 == 1 {
        DiracFamily::Down
    } else {
        DiracFamily::Up
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiracSet {
    pub d: SparseOperator,
    pub d_down: SparseOperator,
    pub d_up: SparseOperator,
    /// Row/column offset of each order's block; the last entry is the total size.
    pub offsets: Vec<usize>,
}

impl DiracSet {
    pub fn from_boundaries(sizes: &[usize], bounds: &[SparseOperator]) -> Result<Self> {
        check_boundaries(sizes, bounds)?;
        if bounds.is_empty() {
            return Err(GsanError::OrderOutOfRange {
                order: 0,
                min: 1,
                max: usize::MAX,
            });
        }
        let transposes: Vec<SparseOperator> = bounds.iter().map(|b| b.transpose()).collect();
        let n = sizes.len();
        let assemble = |keep: &dyn Fn(usize) -> bool| -> Result<SparseOperator> {
            let mut grid: Vec<Vec<Option<&SparseOperator>>> = vec![vec![None; n]; n];
            for k in 1..n {
                if keep(k) {
                    grid[k - 1][k] = Some(&bounds[k - 1]);
                    grid[k][k - 1] = Some(&transposes[k - 1]);
                }
            }
            SparseOperator::from_blocks(sizes, sizes, &grid)
        };
        let d_down = assemble(&|k| dirac_family(k) == DiracFamily::Down)?;
        let d_up = assemble(&|k| dirac_family(k) == DiracFamily::Up)?;
        let d = assemble(&|_| true)?;
        Ok(DiracSet {
            d,
            d_down,
            d_up,
            offsets: offsets(sizes),
        })
    }

    /// Splits a stacked vector/matrix into per-order blocks.
    pub fn split(&self, stacked: &Mat) -> Vec<Mat> {
        self.offsets
            .windows(2)
            .map(|w| stacked.row_block(w[0], w[1]))
            .collect()
    }
}

pub fn dirac_operator(x: &SimplicialComplex) -> Result<DiracSet> {
    if x.max_order() == 0 {
        return Err(GsanError::OrderOutOfRange {
            order: 0,
            min: 1,
            max: usize::MAX,
        });
    }
    DiracSet::from_boundaries(&x.sizes(), &boundaries(x))
}

/// Gershgorin bound `max_i Σ_j |m_ij|`.
pub fn gershgorin_bound(m: &SparseOperator) -> f64 {
    (0..m.rows())
        .map(|i| m.row(i).1.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Upper bound on the largest eigenvalue of a symmetric positive
/// semidefinite operator: fixed-seed power iteration, returning the Rayleigh
/// quotient plus its residual norm, capped by the Gershgorin bound.
pub fn spectral_upper_bound(m: &SparseOperator) -> Result<f64> {
    m.check_symmetric()?;
    let n = m.rows();
    let gersh = gershgorin_bound(m);
    if n == 0 || m.nnz() == 0 {
        return Ok(gersh);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(POWER_SEED);
    let mut v = Mat::from_fn(n, 1, |_, _| rng.gen_range(-1.0..1.0));
    let norm = v.frobenius_norm();
    v = v.scale(1.0 / norm);
    for _ in 0..POWER_ITERATIONS {
        let w = m.apply(&v)?;
        let norm = w.frobenius_norm();
        if norm == 0.0 || !norm.is_finite() {
            return Ok(gersh);
        }
        v = w.scale(1.0 / norm);
    }
    let mv = m.apply(&v)?;
    let rho = v.dot(&mv);
    let mut resid = mv;
    resid.axpy(-rho, &v)?;
    let bound = rho + resid.frobenius_norm();
    if bound.is_nan() || bound <= 0.0 {
        return Ok(gersh);
    }
    Ok(bound.min(gersh))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepSize {
    /// `1 / spectral_upper_bound(L_k)`.
    Auto,
    Fixed(f64),
}

/// `Q̂_k = (I - eps L_k)^J`, applied as `J` sparse steps.
#[derive(Debug)]
pub struct HarmonicProjector {
    order: usize,
    steps: usize,
    eps: f64,
    step_op: SparseOperator,
    materialized: OnceLock<SparseOperator>,
}

impl Clone for HarmonicProjector {
    fn clone(&self) -> Self {
        let materialized = OnceLock::new();
        if let Some(q) = self.materialized.get() {
            let _ = materialized.set(q.clone());
        }
        HarmonicProjector {
            order: self.order,
            steps: self.steps,
            eps: self.eps,
            step_op: self.step_op.clone(),
            materialized,
        }
    }
}

impl HarmonicProjector {
    /// Builds the projector from a Laplacian with an already validated step size.
    pub fn with_eps(order: usize, laplacian: &SparseOperator, steps: usize, eps: f64) -> Result<Self> {
        if steps == 0 {
            return Err(GsanError::InvalidConfig {
                field: "harmonic_J".into(),
                reason: "must be at least 1".into(),
            });
        }
        let n = laplacian.rows();
        let step_op = SparseOperator::identity(n).lincomb(1.0, laplacian, -eps)?;
        Ok(HarmonicProjector {
            order,
            steps,
            eps,
            step_op,
            materialized: OnceLock::new(),
        })
    }

    /// Validates `eps` against the spectrum of `laplacian` (or picks it) and builds the projector.
    pub fn from_laplacian(order: usize, laplacian: &SparseOperator, steps: usize, eps: StepSize) -> Result<Self> {
        let bound = spectral_upper_bound(laplacian)?;
        let eps = match eps {
            StepSize::Auto => {
                if bound <= 0.0 {
                    return Err(GsanError::InvalidStepSize {
                        eps: f64::INFINITY,
                        upper: f64::INFINITY,
                    });
                }
                1.0 / bound
            }
            StepSize::Fixed(e) => {
                let upper = 2.0 / bound;
                if !(e > 0.0 && e < upper) {
                    return Err(GsanError::InvalidStepSize { eps: e, upper });
                }
                e
            }
        };
        HarmonicProjector::with_eps(order, laplacian, steps, eps)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn dim(&self) -> usize {
        self.step_op.rows()
    }

    /// `I - eps L_k`.
    pub fn step_operator(&self) -> &SparseOperator {
        &self.step_op
    }

    pub fn apply(&self, x: &Mat) -> Result<Mat> {
        let mut y = self.step_op.apply(x)?;
        for _ in 1..self.steps {
            y = self.step_op.apply(&y)?;
        }
        Ok(y)
    }

    /// The projector as an explicit sparse matrix, computed on first use by
    /// repeated sparse products.
    pub fn q_hat(&self) -> &SparseOperator {
        self.materialized.get_or_init(|| {
            let mut q = self.step_op.clone();
            for _ in 1..self.steps {
                q = q.matmul(&self.step_op).expect("square");
            }
            q
        })
    }
}

pub fn harmonic_projector(x: &SimplicialComplex, k: usize, steps: usize, eps: StepSize) -> Result<HarmonicProjector> {
    if k > x.max_order() {
        return Err(GsanError::OrderOutOfRange {
            order: k,
            min: 0,
            max: x.max_order(),
        });
    }
    let lap = hodge_laplacians(x)?;
    HarmonicProjector::from_laplacian(k, lap.full(k), steps, eps)
}

fn to_nalgebra(m: &Mat) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

fn from_nalgebra(m: &DMatrix<f64>) -> Mat {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

/// Dense orthogonal projector onto `ker(L)`, from a full eigendecomposition.
/// Desk-scale reference only.
pub fn exact_harmonic_projector(laplacian: &SparseOperator) -> Mat {
    let n = laplacian.rows();
    if n == 0 {
        return Mat::zeros(0, 0);
    }
    let eig = SymmetricEigen::new(to_nalgebra(&laplacian.to_dense()));
    let mut q = DMatrix::<f64>::zeros(n, n);
    for (i, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda.abs() < KERNEL_THRESHOLD {
            let u = eig.eigenvectors.column(i);
            q += u * u.transpose();
        }
    }
    from_nalgebra(&q)
}

/// `dim ker(L_k)` from a dense eigendecomposition.
pub fn betti_number(x: &SimplicialComplex, k: usize) -> Result<usize> {
    if k > x.max_order() {
        return Err(GsanError::OrderOutOfRange {
            order: k,
            min: 0,
            max: x.max_order(),
        });
    }
    if x.num_simplices(k) == 0 {
        return Err(GsanError::EmptyOrder(k));
    }
    let lap = hodge_laplacians(x)?;
    Ok(kernel_dimension(lap.full(k)))
}

pub fn kernel_dimension(m: &SparseOperator) -> usize {
    if m.rows() == 0 {
        return 0;
    }
    SymmetricEigen::new(to_nalgebra(&m.to_dense()))
        .eigenvalues
        .iter()
        .filter(|l| l.abs() < KERNEL_THRESHOLD)
        .count()
}

#[derive(Clone, Debug, PartialEq)]
pub struct HodgeComponents {
    pub irrotational: Vec<f64>,
    pub solenoidal: Vec<f64>,
    pub harmonic: Vec<f64>,
}

/// Orthogonal projection of `x` onto the column space of `a`, from the
/// eigenvectors of `a aᵀ` above the kernel threshold. (A Golub-Kahan SVD
/// lost about 1e-5 of accuracy on some incidence matrices.)
fn project_onto_range(a: &Mat, x: &DVector<f64>) -> DVector<f64> {
    if a.cols() == 0 || a.rows() == 0 {
        return DVector::zeros(x.len());
    }
    let m = to_nalgebra(a);
    let eig = SymmetricEigen::new(&m * m.transpose());
    let mut p = DVector::zeros(x.len());
    for (i, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda > KERNEL_THRESHOLD {
            let col = eig.eigenvectors.column(i);
            p += col * col.dot(x);
        }
    }
    p
}

/// Splits a k-signal into its components in `im(B_kᵀ)`, `im(B_{k+1})` and `ker(L_k)`.
pub fn hodge_decompose(x: &SimplicialComplex, k: usize, signal: &[f64]) -> Result<HodgeComponents> {
    if k > x.max_order() {
        return Err(GsanError::OrderOutOfRange {
            order: k,
            min: 0,
            max: x.max_order(),
        });
    }
    if signal.len() != x.num_simplices(k) {
        return shape_err(format!(
            "signal of length {} for {} simplices of order {k}",
            signal.len(),
            x.num_simplices(k)
        ));
    }
    let v = DVector::from_column_slice(signal);
    let irr = if k > 0 {
        project_onto_range(&x.boundary(k)?.transpose().to_dense(), &v)
    } else {
        DVector::zeros(v.len())
    };
    let sol = if k < x.max_order() {
        project_onto_range(&x.boundary(k + 1)?.to_dense(), &v)
    } else {
        DVector::zeros(v.len())
    };
    let harm = &v - &irr - &sol;
    Ok(HodgeComponents {
        irrotational: irr.iter().copied().collect(),
        solenoidal: sol.iter().copied().collect(),
        harmonic: harm.iter().copied().collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::complex::build_complex;

    fn filled() -> SimplicialComplex {
        build_complex(&[vec![0, 1, 2]], 2).unwrap()
    }

    fn hollow() -> SimplicialComplex {
        build_complex(&[vec![0, 1], vec![1, 2], vec![0, 2]], 2).unwrap()
    }

    #[test]
    fn laplacian_examples() {
        let l = hodge_laplacians(&filled()).unwrap();
        assert_eq!(l.full(1).to_dense(), Mat::identity(3).scale(3.0));
        let l0 = l.full(0).to_dense();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(l0[(i, j)], if i == j { 2.0 } else { -1.0 });
            }
        }
        let h = hodge_laplacians(&hollow()).unwrap();
        let expected =
            Mat::from_rows(&[vec![2.0, 1.0, -1.0], vec![1.0, 2.0, 1.0], vec![-1.0, 1.0, 2.0]]).unwrap();
        assert_eq!(h.full(1).to_dense(), expected);
        assert!(l.down(0).is_none() && l.up(2).is_none());
        assert!(l.full(1).is_integer_exact());
    }

    #[test]
    fn dirac_examples() {
        let d = dirac_operator(&filled()).unwrap();
        assert_eq!(d.d.shape(), (7, 7));
        let sq = d.d.matmul(&d.d).unwrap();
        let l = hodge_laplacians(&filled()).unwrap();
        let blocks: Vec<Vec<Option<&SparseOperator>>> = (0..3)
            .map(|r| (0..3).map(|c| if r == c { Some(l.full(r)) } else { None }).collect())
            .collect();
        let expected = SparseOperator::from_blocks(&[3, 3, 1], &[3, 3, 1], &blocks).unwrap();
        assert_eq!(sq, expected);
        assert_eq!(d.d, d.d_down.add(&d.d_up).unwrap());
        assert!(d.d_down.is_symmetric() && d.d_up.is_symmetric());

        let h = dirac_operator(&hollow()).unwrap();
        assert_eq!(h.d.shape(), (6, 6));
        assert_eq!(h.d_up.nnz(), 0);

        let point = build_complex(&[vec![0]], 0).unwrap();
        assert!(matches!(dirac_operator(&point), Err(GsanError::OrderOutOfRange { .. })));
    }

    #[test]
    fn spectral_bound_examples() {
        let l = hodge_laplacians(&filled()).unwrap();
        let b = spectral_upper_bound(l.full(1)).unwrap();
        assert!((b - 3.0).abs() <= 0.03 && b >= 3.0 - 1e-12);
        let h = hodge_laplacians(&hollow()).unwrap();
        let b = spectral_upper_bound(h.full(1)).unwrap();
        assert!((b - 3.0).abs() <= 0.03 && b >= 3.0 - 1e-12);
        assert_eq!(spectral_upper_bound(&SparseOperator::zeros(4, 4)).unwrap(), 0.0);
        let asym = SparseOperator::from_triplets(2, 2, [(0, 1, 1.0)]).unwrap();
        assert!(matches!(spectral_upper_bound(&asym), Err(GsanError::NotSymmetric { .. })));
    }

    #[test]
    fn projector_examples() {
        let q = harmonic_projector(&hollow(), 1, 1, StepSize::Fixed(1.0 / 3.0)).unwrap();
        let expected = Mat::from_rows(&[
            vec![1.0, -1.0, 1.0],
            vec![-1.0, 1.0, -1.0],
            vec![1.0, -1.0, 1.0],
        ])
        .unwrap()
        .scale(1.0 / 3.0);
        assert!(q.q_hat().to_dense().max_abs_diff(&expected) < 1e-12);
        let exact = exact_harmonic_projector(hodge_laplacians(&hollow()).unwrap().full(1));
        assert!(exact.max_abs_diff(&expected) < 1e-12);

        let q = harmonic_projector(&filled(), 1, 1, StepSize::Fixed(1.0 / 3.0)).unwrap();
        assert!(q.q_hat().to_dense().max_abs() < 1e-15);

        assert!(matches!(
            harmonic_projector(&hollow(), 1, 1, StepSize::Fixed(0.7)),
            Err(GsanError::InvalidStepSize { .. })
        ));
        assert!(matches!(
            harmonic_projector(&hollow(), 1, 1, StepSize::Fixed(0.0)),
            Err(GsanError::InvalidStepSize { .. })
        ));
    }

    #[test]
    fn projector_apply_matches_materialized() {
        let x = build_complex(&[vec![0, 1, 2], vec![2, 3], vec![3, 4], vec![4, 0]], 2).unwrap();
        let q = harmonic_projector(&x, 1, 7, StepSize::Auto).unwrap();
        let v = Mat::from_fn(x.num_simplices(1), 2, |i, j| (i as f64 * 0.3 - j as f64).sin());
        let a = q.apply(&v).unwrap();
        let b = q.q_hat().apply(&v).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-12);
    }

    #[test]
    fn hodge_examples() {
        let h = hodge_decompose(&hollow(), 1, &[1.0, -1.0, 1.0]).unwrap();
        assert!(h.irrotational.iter().all(|v| v.abs() < 1e-12));
        assert!(h.solenoidal.iter().all(|v| v.abs() < 1e-12));
        for (a, b) in h.harmonic.iter().zip([1.0, -1.0, 1.0]) {
            assert!((a - b).abs() < 1e-12);
        }
        let grad = hollow().boundary(1).unwrap().apply_transpose(&Mat::col_vec(&[1.0, 0.0, 0.0])).unwrap();
        let h = hodge_decompose(&hollow(), 1, grad.as_slice()).unwrap();
        assert!(h.harmonic.iter().all(|v| v.abs() < 1e-12));
        let h = hodge_decompose(&filled(), 1, &[0.3, -2.0, 5.0]).unwrap();
        assert!(h.harmonic.iter().all(|v| v.abs() < 1e-12));
        assert!(matches!(hodge_decompose(&filled(), 1, &[1.0]), Err(GsanError::ShapeError(_))));
    }

    #[test]
    fn betti_examples() {
        assert_eq!(betti_number(&hollow(), 1).unwrap(), 1);
        assert_eq!(betti_number(&filled(), 1).unwrap(), 0);
        assert_eq!(betti_number(&filled(), 0).unwrap(), 1);
        assert_eq!(betti_number(&hollow(), 2), Err(GsanError::EmptyOrder(2)));
    }
}
