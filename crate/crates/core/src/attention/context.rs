//! Operators shared by every layer evaluated on one complex.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::Pattern;
use crate::complex::SimplicialComplex;
use crate::dense::Mat;
use crate::error::{GsanError, Result};
use crate::operators::{boundaries, dirac_family, spectral_upper_bound, DiracFamily, LaplacianSet, StepSize};
use crate::sparse::SparseOperator;

/// Which Laplacian term an attention matrix lives on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Adjacency {
    /// `L_k^(d)`.
    Lower,
    /// `L_k^(u)`.
    Upper,
    /// `L_k` (joint layers).
    Full,
}

impl Adjacency {
    pub fn tag(self) -> &'static str {
        match self {
            Adjacency::Lower => "d",
            Adjacency::Upper => "u",
            Adjacency::Full => "f",
        }
    }
}

/// Neighborhood structure of one Laplacian term: the support pattern with
/// the diagonal added, the relative-orientation sign of every entry (+1 on
/// the diagonal) and the uniform row weights `1/|N_i|`.
#[derive(Clone, Debug, PartialEq)]
pub struct Support {
    pub pattern: Arc<Pattern>,
    pub signs: Arc<Mat>,
    pub uniform: Arc<Mat>,
    pub laplacian: Arc<SparseOperator>,
}

impl Support {
    pub fn from_laplacian(l: &SparseOperator) -> Self {
        let pattern = Pattern::from_support(l, true);
        let signs: Vec<f64> = (0..pattern.nnz())
            .map(|e| {
                let (i, j) = (pattern.entry_rows()[e], pattern.cols()[e]);
                if i == j {
                    1.0
                } else {
                    l.get(i, j).signum()
                }
            })
            .collect();
        let uniform: Vec<f64> = (0..pattern.nnz())
            .map(|e| 1.0 / pattern.row(pattern.entry_rows()[e]).len() as f64)
            .collect();
        let n = pattern.nnz();
        Support {
            pattern: Arc::new(pattern),
            signs: Arc::new(Mat::from_vec(n, 1, signs).expect("length nnz")),
            uniform: Arc::new(Mat::from_vec(n, 1, uniform).expect("length nnz")),
            laplacian: Arc::new(l.clone()),
        }
    }

    /// Neighborhood lists (sorted, self included).
    pub fn neighborhoods(&self) -> Vec<Vec<usize>> {
        (0..self.pattern.n_rows()).map(|i| self.pattern.row(i).to_vec()).collect()
    }
}

#[derive(Clone, Debug)]
struct OrderOps {
    full: Support,
    lower: Option<Support>,
    upper: Option<Support>,
    eps: f64,
    step: Arc<SparseOperator>,
}

/// Incidence matrices, Laplacians, neighborhoods and harmonic step operators
/// of one complex, computed once and shared by all layers and heads.
#[derive(Clone, Debug)]
pub struct SimplicialContext {
    sizes: Vec<usize>,
    bounds: Vec<Arc<SparseOperator>>,
    orders: Vec<OrderOps>,
}

impl SimplicialContext {
    pub fn from_complex(x: &SimplicialComplex, eps: StepSize) -> Result<Self> {
        SimplicialContext::from_boundaries(&x.sizes(), boundaries(x), eps)
    }

    /// `bounds[k - 1] = B_k`. Each order's harmonic step size is resolved
    /// here; orders with a zero Laplacian get `eps = 1`, for which the
    /// sparse projector is exactly the identity (and exactly the true
    /// projector).
    pub fn from_boundaries(sizes: &[usize], bounds: Vec<SparseOperator>, eps: StepSize) -> Result<Self> {
        let laps = LaplacianSet::from_boundaries(sizes, &bounds)?;
        let mut eps_vec = Vec::with_capacity(sizes.len());
        for k in 0..sizes.len() {
            let l = laps.full(k);
            let e = if l.nnz() == 0 {
                1.0
            } else {
                let bound = spectral_upper_bound(l)?;
                match eps {
                    StepSize::Auto => 1.0 / bound,
                    StepSize::Fixed(e) => {
                        let upper = 2.0 / bound;
                        if !(e > 0.0 && e < upper) {
                            return Err(GsanError::InvalidStepSize { eps: e, upper });
                        }
                        e
                    }
                }
            };
            eps_vec.push(e);
        }
        SimplicialContext::with_eps(sizes, bounds, &laps, &eps_vec)
    }

    fn with_eps(sizes: &[usize], bounds: Vec<SparseOperator>, laps: &LaplacianSet, eps: &[f64]) -> Result<Self> {
        let mut orders = Vec::with_capacity(sizes.len());
        for k in 0..sizes.len() {
            let step = SparseOperator::identity(sizes[k]).lincomb(1.0, laps.full(k), -eps[k])?;
            orders.push(OrderOps {
                full: Support::from_laplacian(laps.full(k)),
                lower: laps.down(k).map(Support::from_laplacian),
                upper: laps.up(k).map(Support::from_laplacian),
                eps: eps[k],
                step: Arc::new(step),
            });
        }
        Ok(SimplicialContext {
            sizes: sizes.to_vec(),
            bounds: bounds.into_iter().map(Arc::new).collect(),
            orders,
        })
    }

    pub fn max_order(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    /// `B_k` for `1 <= k <= K`.
    pub fn boundary(&self, k: usize) -> &Arc<SparseOperator> {
        &self.bounds[k - 1]
    }

    pub fn support(&self, k: usize, adj: Adjacency) -> Option<&Support> {
        let o = &self.orders[k];
        match adj {
            Adjacency::Lower => o.lower.as_ref(),
            Adjacency::Upper => o.upper.as_ref(),
            Adjacency::Full => Some(&o.full),
        }
    }

    /// The adjacencies a split (non-joint) layer uses at order `k`.
    pub fn adjacencies(&self, k: usize) -> Vec<Adjacency> {
        let mut v = Vec::with_capacity(2);
        if k > 0 {
            v.push(Adjacency::Lower);
        }
        if k < self.max_order() {
            v.push(Adjacency::Upper);
        }
        v
    }

    /// Weight family of an adjacency: set by the incidence block it comes from.
    pub fn family(k: usize, adj: Adjacency) -> DiracFamily {
        match adj {
            Adjacency::Lower => dirac_family(k),
            Adjacency::Upper => dirac_family(k + 1),
            Adjacency::Full => panic!("joint adjacency has no family"),
        }
    }

    pub fn harmonic_eps(&self, k: usize) -> f64 {
        self.orders[k].eps
    }

    /// `I - eps_k L_k`.
    pub fn harmonic_step(&self, k: usize) -> &Arc<SparseOperator> {
        &self.orders[k].step
    }

    fn eps_vec(&self) -> Vec<f64> {
        self.orders.iter().map(|o| o.eps).collect()
    }

    fn rebuild(&self, bounds: Vec<SparseOperator>) -> Result<Self> {
        let laps = LaplacianSet::from_boundaries(&self.sizes, &bounds)?;
        SimplicialContext::with_eps(&self.sizes, bounds, &laps, &self.eps_vec())
    }

    /// Relabels the simplices of order `k` by `perms[k]` (row `i` moves to
    /// `perms[k][i]`), keeping every step size.
    pub fn permuted(&self, perms: &[Vec<usize>]) -> Result<Self> {
        let bounds = (1..=self.max_order())
            .map(|k| self.boundary(k).permuted(&perms[k - 1], &perms[k]))
            .collect();
        self.rebuild(bounds)
    }

    /// Flips the reference orientation of simplex `i` of order `k` when
    /// `signs[k][i] = -1`, keeping every step size.
    pub fn reoriented(&self, signs: &[Vec<f64>]) -> Result<Self> {
        let bounds = (1..=self.max_order())
            .map(|k| self.boundary(k).scaled(&signs[k - 1], &signs[k]))
            .collect();
        self.rebuild(bounds)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::complex::build_complex;

    #[test]
    fn supports_match_complex_neighborhoods() {
        let x = build_complex(&[vec![0, 1, 2], vec![1, 2, 3], vec![3, 4]], 2).unwrap();
        let ctx = SimplicialContext::from_complex(&x, StepSize::Auto).unwrap();
        for k in 0..=2 {
            let (lower, upper) = x.neighborhoods(k).unwrap();
            let l = ctx.support(k, Adjacency::Lower).map(|s| s.neighborhoods());
            let u = ctx.support(k, Adjacency::Upper).map(|s| s.neighborhoods());
            if k > 0 {
                assert_eq!(l.unwrap(), lower);
            }
            if k < 2 {
                assert_eq!(u.unwrap(), upper);
            }
        }
    }

    #[test]
    fn signs_follow_upper_laplacian() {
        let x = build_complex(&[vec![0, 1, 2]], 2).unwrap();
        let ctx = SimplicialContext::from_complex(&x, StepSize::Auto).unwrap();
        let s = ctx.support(1, Adjacency::Upper).unwrap();
        let lu = s.laplacian.to_dense();
        for e in 0..s.pattern.nnz() {
            let (i, j) = (s.pattern.entry_rows()[e], s.pattern.cols()[e]);
            assert_eq!(s.signs[(e, 0)], lu[(i, j)].signum());
        }
    }

    #[test]
    fn zero_laplacian_gets_identity_projector() {
        let x = build_complex(&[vec![0], vec![1]], 0).unwrap();
        let ctx = SimplicialContext::from_complex(&x, StepSize::Auto).unwrap();
        assert_eq!(ctx.harmonic_eps(0), 1.0);
        assert_eq!(**ctx.harmonic_step(0), SparseOperator::identity(2));
    }
}
