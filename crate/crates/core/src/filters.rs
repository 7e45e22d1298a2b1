//! Fixed (non-learned) simplicial complex filters.

use crate::complex::SimplicialComplex;
use crate::dense::Mat;
use crate::error::{shape_err, GsanError, Result};
use crate::operators::{boundaries, dirac_family, dirac_operator, DiracFamily, HarmonicProjector, LaplacianSet};
use crate::sparse::SparseOperator;

/// Per-order signal matrices `Z_k` (`N_k x F`) sharing one feature width.
#[derive(Clone, Debug, PartialEq)]
pub struct CochainBundle {
    orders: Vec<Mat>,
}

impl CochainBundle {
    pub fn new(orders: Vec<Mat>) -> Result<Self> {
        if orders.is_empty() {
            return shape_err("bundle needs at least order 0");
        }
        let width = orders[0].cols();
        if orders.iter().any(|m| m.cols() != width) {
            return shape_err("bundle orders have different widths");
        }
        Ok(CochainBundle { orders })
    }

    pub fn zeros(sizes: &[usize], width: usize) -> Self {
        CochainBundle {
            orders: sizes.iter().map(|&n| Mat::zeros(n, width)).collect(),
        }
    }

    /// Single-column bundle from per-order vectors.
    pub fn from_vectors(orders: &[Vec<f64>]) -> Self {
        CochainBundle {
            orders: orders.iter().map(|v| Mat::col_vec(v)).collect(),
        }
    }

    pub fn width(&self) -> usize {
        self.orders[0].cols()
    }

    pub fn max_order(&self) -> usize {
        self.orders.len() - 1
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.orders.iter().map(|m| m.rows()).collect()
    }

    pub fn order(&self, k: usize) -> &Mat {
        &self.orders[k]
    }

    pub fn order_mut(&mut self, k: usize) -> &mut Mat {
        &mut self.orders[k]
    }

    pub fn orders(&self) -> &[Mat] {
        &self.orders
    }

    pub fn into_orders(self) -> Vec<Mat> {
        self.orders
    }

    pub fn check_sizes(&self, sizes: &[usize]) -> Result<()> {
        if self.sizes() != sizes {
            return shape_err(format!(
                "bundle sizes {:?} do not match complex sizes {sizes:?}",
                self.sizes()
            ));
        }
        Ok(())
    }

    /// All orders stacked vertically, order 0 on top.
    pub fn stacked(&self) -> Mat {
        let refs: Vec<&Mat> = self.orders.iter().collect();
        Mat::vcat(&refs).expect("equal widths")
    }

    pub fn from_stacked(sizes: &[usize], stacked: &Mat) -> Result<Self> {
        if stacked.rows() != sizes.iter().sum::<usize>() {
            return shape_err("stacked rows do not match sizes");
        }
        let mut start = 0;
        let mut orders = Vec::with_capacity(sizes.len());
        for &n in sizes {
            orders.push(stacked.row_block(start, start + n));
            start += n;
        }
        Ok(CochainBundle { orders })
    }

    pub fn add(&self, other: &CochainBundle) -> Result<Self> {
        self.zip(other, |a, b| a.add(b))
    }

    pub fn sub(&self, other: &CochainBundle) -> Result<Self> {
        self.zip(other, |a, b| a.sub(b))
    }

    fn zip(&self, other: &CochainBundle, f: impl Fn(&Mat, &Mat) -> Result<Mat>) -> Result<Self> {
        if self.orders.len() != other.orders.len() {
            return shape_err("bundles with different numbers of orders");
        }
        let orders = self
            .orders
            .iter()
            .zip(&other.orders)
            .map(|(a, b)| f(a, b))
            .collect::<Result<_>>()?;
        Ok(CochainBundle { orders })
    }

    pub fn scale(&self, alpha: f64) -> Self {
        CochainBundle {
            orders: self.orders.iter().map(|m| m.scale(alpha)).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64 + Copy) -> Self {
        CochainBundle {
            orders: self.orders.iter().map(|m| m.map(f)).collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &CochainBundle) -> f64 {
        if self.orders.len() != other.orders.len() {
            return f64::INFINITY;
        }
        self.orders
            .iter()
            .zip(&other.orders)
            .fold(0.0, |m, (a, b)| m.max(a.max_abs_diff(b)))
    }

    pub fn norm(&self) -> f64 {
        self.orders
            .iter()
            .map(|m| m.frobenius_norm().powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Moves row `i` of order `k` to row `perms[k][i]`.
    pub fn permuted(&self, perms: &[Vec<usize>]) -> Self {
        CochainBundle {
            orders: self
                .orders
                .iter()
                .zip(perms)
                .map(|(m, p)| m.permute_rows(p))
                .collect(),
        }
    }

    /// Multiplies row `i` of order `k` by `signs[k][i]`.
    pub fn reoriented(&self, signs: &[Vec<f64>]) -> Self {
        CochainBundle {
            orders: self
                .orders
                .iter()
                .zip(signs)
                .map(|(m, s)| m.scale_rows(s))
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScFilterWeights {
    pub w_down: Vec<f64>,
    pub w_up: Vec<f64>,
    pub w_h: f64,
}

impl ScFilterWeights {
    pub fn new(w_down: Vec<f64>, w_up: Vec<f64>, w_h: f64) -> Result<Self> {
        if w_down.len() != w_up.len() || w_down.is_empty() {
            return shape_err("w_down and w_up must share a nonzero length J");
        }
        if !w_down.iter().chain(&w_up).all(|w| w.is_finite()) || !w_h.is_finite() {
            return Err(GsanError::InvalidConfig {
                field: "weights".into(),
                reason: "non-finite filter weight".into(),
            });
        }
        Ok(ScFilterWeights { w_down, w_up, w_h })
    }

    pub fn order(&self) -> usize {
        self.w_down.len()
    }

    fn family(&self, fam: DiracFamily) -> &[f64] {
        match fam {
            DiracFamily::Down => &self.w_down,
            DiracFamily::Up => &self.w_up,
        }
    }
}

/// Σ_{p=1}^{n} L^p (c_p x), evaluated from the highest power down.
pub(crate) fn horner_from_one(l: &SparseOperator, terms: &[Mat]) -> Result<Option<Mat>> {
    let Some(mut acc) = terms.last().cloned() else {
        return Ok(None);
    };
    for t in terms[..terms.len() - 1].iter().rev() {
        acc = l.apply(&acc)?;
        acc.add_assign(t)?;
    }
    Ok(Some(l.apply(&acc)?))
}

/// Σ_{p=0}^{n-1} L^p t_p.
pub(crate) fn horner_from_zero(l: &SparseOperator, terms: &[Mat]) -> Result<Option<Mat>> {
    let Some(mut acc) = terms.last().cloned() else {
        return Ok(None);
    };
    for t in terms[..terms.len() - 1].iter().rev() {
        acc = l.apply(&acc)?;
        acc.add_assign(t)?;
    }
    Ok(Some(acc))
}

/// Applies Σ_j w_down_j D_down^j + Σ_j w_up_j D_up^j + w_h Q̃ order by order:
/// even powers act through same-order Laplacians, odd powers through the
/// incidence-mapped neighbor orders.
pub fn sc_filter_apply(
    x: &SimplicialComplex,
    w: &ScFilterWeights,
    signal: &CochainBundle,
    harmonic: &[HarmonicProjector],
) -> Result<CochainBundle> {
    let sizes = x.sizes();
    signal.check_sizes(&sizes)?;
    let bounds = boundaries(x);
    let laps = LaplacianSet::from_boundaries(&sizes, &bounds)?;
    let j = w.order();
    let n_even = j / 2;
    let n_odd = j.div_ceil(2);
    let kmax = x.max_order();
    let mut out = Vec::with_capacity(kmax + 1);
    for k in 0..=kmax {
        let proj = harmonic
            .get(k)
            .filter(|p| p.order() == k)
            .ok_or(GsanError::MissingProjector(k))?;
        let z = signal.order(k);
        let mut y = proj.apply(z)?.scale(w.w_h);
        let mut adjacencies: Vec<(&SparseOperator, Mat, DiracFamily)> = Vec::new();
        if k > 0 {
            let c = bounds[k - 1].apply_transpose(signal.order(k - 1))?;
            adjacencies.push((laps.down(k).expect("k > 0"), c, dirac_family(k)));
        }
        if k < kmax {
            let c = bounds[k].apply(signal.order(k + 1))?;
            adjacencies.push((laps.up(k).expect("k < K"), c, dirac_family(k + 1)));
        }
        for (l, c, fam) in adjacencies {
            let ws = w.family(fam);
            let even: Vec<Mat> = (1..=n_even).map(|p| z.scale(ws[2 * p - 1])).collect();
            let odd: Vec<Mat> = (0..n_odd).map(|p| c.scale(ws[2 * p])).collect();
            if let Some(e) = horner_from_one(l, &even)? {
                y.add_assign(&e)?;
            }
            if let Some(o) = horner_from_zero(l, &odd)? {
                y.add_assign(&o)?;
            }
        }
        out.push(y);
    }
    CochainBundle::new(out)
}

/// Σ_{j=1}^{J} coeffs_j D^j x by repeated sparse applications of D.
pub fn dirac_polynomial_apply(
    x: &SimplicialComplex,
    coeffs: &[f64],
    signal: &CochainBundle,
) -> Result<CochainBundle> {
    let sizes = x.sizes();
    signal.check_sizes(&sizes)?;
    if coeffs.is_empty() {
        return shape_err("empty coefficient list");
    }
    let dirac = dirac_operator(x)?;
    let v = signal.stacked();
    let mut acc = v.scale(coeffs[coeffs.len() - 1]);
    for &c in coeffs[..coeffs.len() - 1].iter().rev() {
        acc = dirac.d.apply(&acc)?;
        acc.axpy(c, &v)?;
    }
    let y = dirac.d.apply(&acc)?;
    CochainBundle::from_stacked(&sizes, &y)
}

/// The per-order expansion of a Dirac polynomial with one shared coefficient
/// list: even powers on `L_k`, odd powers on both incidence-mapped neighbors.
pub fn joint_filter_apply(
    x: &SimplicialComplex,
    coeffs: &[f64],
    signal: &CochainBundle,
) -> Result<CochainBundle> {
    let sizes = x.sizes();
    signal.check_sizes(&sizes)?;
    let bounds = boundaries(x);
    let laps = LaplacianSet::from_boundaries(&sizes, &bounds)?;
    let kmax = x.max_order();
    let n_even = coeffs.len() / 2;
    let n_odd = coeffs.len().div_ceil(2);
    let mut out = Vec::with_capacity(kmax + 1);
    for k in 0..=kmax {
        let z = signal.order(k);
        let mut y = Mat::zeros(z.rows(), z.cols());
        let even: Vec<Mat> = (1..=n_even).map(|p| z.scale(coeffs[2 * p - 1])).collect();
        if let Some(e) = horner_from_one(laps.full(k), &even)? {
            y.add_assign(&e)?;
        }
        if k > 0 {
            let c = bounds[k - 1].apply_transpose(signal.order(k - 1))?;
            let odd: Vec<Mat> = (0..n_odd).map(|p| c.scale(coeffs[2 * p])).collect();
            if let Some(o) = horner_from_zero(laps.down(k).expect("k > 0"), &odd)? {
                y.add_assign(&o)?;
            }
        }
        if k < kmax {
            let c = bounds[k].apply(signal.order(k + 1))?;
            let odd: Vec<Mat> = (0..n_odd).map(|p| c.scale(coeffs[2 * p])).collect();
            if let Some(o) = horner_from_zero(laps.up(k).expect("k < K"), &odd)? {
                y.add_assign(&o)?;
            }
        }
        out.push(y);
    }
    CochainBundle::new(out)
}
