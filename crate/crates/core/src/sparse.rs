//! Immutable compressed-row sparse matrices.
//!
//! Entries are kept sorted row-major with no duplicates and no stored zeros,
//! so the triplet view is canonical and two operators compare equal exactly
//! when they represent the same matrix.

use std::fmt::Write as _;

use crate::dense::Mat;
use crate::error::{shape_err, GsanError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SparseOperator {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
    integer_exact: bool,
}

impl SparseOperator {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        SparseOperator {
            rows,
            cols,
            row_ptr: vec![0; rows + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
            integer_exact: true,
        }
    }

    pub fn identity(n: usize) -> Self {
        SparseOperator {
            rows: n,
            cols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
            integer_exact: true,
        }
    }

    /// Builds an operator from triplets in any order. Repeated coordinates are
    /// summed and entries that end up zero are dropped.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self> {
        let mut t: Vec<(usize, usize, f64)> = triplets.into_iter().collect();
        for &(i, j, _) in &t {
            if i >= rows || j >= cols {
                return shape_err(format!("entry ({i}, {j}) outside {rows}x{cols}"));
            }
        }
        t.sort_by_key(|a| (a.0, a.1));
        let mut row_ptr = vec![0usize; rows + 1];
        let mut col_idx = Vec::with_capacity(t.len());
        let mut values = Vec::with_capacity(t.len());
        let mut k = 0;
        while k < t.len() {
            let (i, j, mut v) = t[k];
            k += 1;
            while k < t.len() && t[k].0 == i && t[k].1 == j {
                v += t[k].2;
                k += 1;
            }
            if v != 0.0 {
                col_idx.push(j);
                values.push(v);
                row_ptr[i + 1] += 1;
            }
        }
        for i in 0..rows {
            row_ptr[i + 1] += row_ptr[i];
        }
        let integer_exact = values.iter().all(|v| v.fract() == 0.0);
        Ok(SparseOperator {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
            integer_exact,
        })
    }

    pub fn from_dense(m: &Mat) -> Self {
        let mut t = Vec::new();
        for i in 0..m.rows() {
            for (j, &v) in m.row(i).iter().enumerate() {
                if v != 0.0 {
                    t.push((i, j, v));
                }
            }
        }
        SparseOperator::from_triplets(m.rows(), m.cols(), t).expect("in-bounds by construction")
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn is_integer_exact(&self) -> bool {
        self.integer_exact
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[r.clone()], &self.values[r])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(p) => vals[p],
            Err(_) => 0.0,
        }
    }

    /// Row-major triplets.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.rows).flat_map(move |i| {
            let (c, v) = self.row(i);
            c.iter().zip(v).map(move |(&j, &x)| (i, j, x))
        })
    }

    pub fn transpose(&self) -> SparseOperator {
        let mut counts = vec![0usize; self.cols + 1];
        for &j in &self.col_idx {
            counts[j + 1] += 1;
        }
        for j in 0..self.cols {
            counts[j + 1] += counts[j];
        }
        let row_ptr = counts.clone();
        let mut next = counts;
        let mut col_idx = vec![0; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for (i, j, v) in self.triplets() {
            let p = next[j];
            col_idx[p] = i;
            values[p] = v;
            next[j] += 1;
        }
        SparseOperator {
            rows: self.cols,
            cols: self.rows,
            row_ptr,
            col_idx,
            values,
            integer_exact: self.integer_exact,
        }
    }

    /// Sparse-sparse product.
    pub fn matmul(&self, other: &SparseOperator) -> Result<SparseOperator> {
        if self.cols != other.rows {
            return shape_err(format!(
                "sparse matmul {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            ));
        }
        let mut acc = vec![0.0; other.cols];
        let mut touched = vec![false; other.cols];
        let mut pattern: Vec<usize> = Vec::new();
        let mut t = Vec::new();
        for i in 0..self.rows {
            let (ac, av) = self.row(i);
            for (&k, &a) in ac.iter().zip(av) {
                let (bc, bv) = other.row(k);
                for (&j, &b) in bc.iter().zip(bv) {
                    if !touched[j] {
                        touched[j] = true;
                        pattern.push(j);
                    }
                    acc[j] += a * b;
                }
            }
            for &j in &pattern {
                t.push((i, j, acc[j]));
                acc[j] = 0.0;
                touched[j] = false;
            }
            pattern.clear();
        }
        SparseOperator::from_triplets(self.rows, other.cols, t)
    }

    pub fn add(&self, other: &SparseOperator) -> Result<SparseOperator> {
        self.lincomb(1.0, other, 1.0)
    }

    pub fn sub(&self, other: &SparseOperator) -> Result<SparseOperator> {
        self.lincomb(1.0, other, -1.0)
    }

    /// `alpha * self + beta * other`.
    pub fn lincomb(&self, alpha: f64, other: &SparseOperator, beta: f64) -> Result<SparseOperator> {
        if self.shape() != other.shape() {
            return shape_err(format!(
                "sparse add {}x{} and {}x{}",
                self.rows, self.cols, other.rows, other.cols
            ));
        }
        let t = self
            .triplets()
            .map(|(i, j, v)| (i, j, alpha * v))
            .chain(other.triplets().map(|(i, j, v)| (i, j, beta * v)));
        SparseOperator::from_triplets(self.rows, self.cols, t)
    }

    pub fn scale(&self, alpha: f64) -> SparseOperator {
        let t = self.triplets().map(|(i, j, v)| (i, j, alpha * v));
        SparseOperator::from_triplets(self.rows, self.cols, t).expect("same shape")
    }

    /// `self · x` for a dense right-hand side.
    pub fn apply(&self, x: &Mat) -> Result<Mat> {
        if self.cols != x.rows() {
            return shape_err(format!(
                "apply {}x{} to {}x{}",
                self.rows,
                self.cols,
                x.rows(),
                x.cols()
            ));
        }
        let f = x.cols();
        let mut out = Mat::zeros(self.rows, f);
        for i in 0..self.rows {
            let (c, v) = self.row(i);
            let orow = out.row_mut(i);
            for (&j, &a) in c.iter().zip(v) {
                for (o, &b) in orow.iter_mut().zip(x.row(j)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ · x` without building the transpose.
    pub fn apply_transpose(&self, x: &Mat) -> Result<Mat> {
        if self.rows != x.rows() {
            return shape_err(format!(
                "apply_transpose {}x{} to {}x{}",
                self.cols,
                self.rows,
                x.rows(),
                x.cols()
            ));
        }
        let f = x.cols();
        let mut out = Mat::zeros(self.cols, f);
        for i in 0..self.rows {
            let (c, v) = self.row(i);
            let xrow = x.row(i);
            for (&j, &a) in c.iter().zip(v) {
                for (o, &b) in out.row_mut(j).iter_mut().zip(xrow) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn to_dense(&self) -> Mat {
        let mut m = Mat::zeros(self.rows, self.cols);
        for (i, j, v) in self.triplets() {
            m[(i, j)] = v;
        }
        m
    }

    /// Returns the first asymmetric coordinate, if any.
    pub fn asymmetry(&self) -> Option<(usize, usize)> {
        if self.rows != self.cols {
            return Some((self.rows, self.cols));
        }
        self.triplets().find(|&(i, j, v)| self.get(j, i) != v).map(|(i, j, _)| (i, j))
    }

    pub fn is_symmetric(&self) -> bool {
        self.asymmetry().is_none()
    }

    pub fn check_symmetric(&self) -> Result<()> {
        match self.asymmetry() {
            None => Ok(()),
            Some((row, col)) => Err(GsanError::NotSymmetric { row, col }),
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).collect()
    }

    /// Relabels rows and columns: entry `(i, j)` moves to `(row_perm[i], col_perm[j])`.
    pub fn permuted(&self, row_perm: &[usize], col_perm: &[usize]) -> SparseOperator {
        let t = self.triplets().map(|(i, j, v)| (row_perm[i], col_perm[j], v));
        SparseOperator::from_triplets(self.rows, self.cols, t).expect("permutation keeps bounds")
    }

    /// `diag(row_scale) · self · diag(col_scale)`.
    pub fn scaled(&self, row_scale: &[f64], col_scale: &[f64]) -> SparseOperator {
        let t = self
            .triplets()
            .map(|(i, j, v)| (i, j, row_scale[i] * v * col_scale[j]));
        SparseOperator::from_triplets(self.rows, self.cols, t).expect("same shape")
    }

    /// Same operator with `f` applied to every stored value.
    pub fn map_values(&self, f: impl Fn(usize, usize, f64) -> f64) -> SparseOperator {
        let t = self.triplets().map(|(i, j, v)| (i, j, f(i, j, v)));
        SparseOperator::from_triplets(self.rows, self.cols, t).expect("same shape")
    }

    /// Assembles a block matrix. `blocks[r][c]` may be `None` for a zero block;
    /// row heights and column widths are given explicitly so empty blocks are
    /// unambiguous.
    pub fn from_blocks(
        heights: &[usize],
        widths: &[usize],
        blocks: &[Vec<Option<&SparseOperator>>],
    ) -> Result<SparseOperator> {
        let row_off = offsets(heights);
        let col_off = offsets(widths);
        let mut t = Vec::new();
        for (r, brow) in blocks.iter().enumerate() {
            for (c, b) in brow.iter().enumerate() {
                if let Some(b) = b {
                    if b.shape() != (heights[r], widths[c]) {
                        return shape_err(format!(
                            "block ({r}, {c}) is {}x{}, expected {}x{}",
                            b.rows, b.cols, heights[r], widths[c]
                        ));
                    }
                    t.extend(b.triplets().map(|(i, j, v)| (row_off[r] + i, col_off[c] + j, v)));
                }
            }
        }
        SparseOperator::from_triplets(row_off[heights.len()], col_off[widths.len()], t)
    }

    /// Extracts rows `r0..r1`, columns `c0..c1`.
    pub fn block(&self, r0: usize, r1: usize, c0: usize, c1: usize) -> SparseOperator {
        let t = self
            .triplets()
            .filter(|&(i, j, _)| i >= r0 && i < r1 && j >= c0 && j < c1)
            .map(|(i, j, v)| (i - r0, j - c0, v));
        SparseOperator::from_triplets(r1 - r0, c1 - c0, t).expect("in bounds")
    }

    /// Coordinate-format text: header `rows cols nnz`, then one `i j value` line per entry.
    pub fn to_coo_text(&self) -> String {
        let mut s = format!("{} {} {}\n", self.rows, self.cols, self.nnz());
        for (i, j, v) in self.triplets() {
            writeln!(s, "{i} {j} {v:?}").expect("write to string");
        }
        s
    }

    pub fn from_coo_text(text: &str) -> Result<SparseOperator> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| GsanError::Parse("missing header".into()))?;
        let h: Vec<usize> = parse_fields(header)?;
        if h.len() != 3 {
            return Err(GsanError::Parse(format!("bad header `{header}`")));
        }
        let mut t = Vec::with_capacity(h[2]);
        for line in lines {
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 3 {
                return Err(GsanError::Parse(format!("bad entry line `{line}`")));
            }
            let p = |s: &str| s.parse::<usize>().map_err(|e| GsanError::Parse(e.to_string()));
            let v = f[2]
                .parse::<f64>()
                .map_err(|e| GsanError::Parse(e.to_string()))?;
            t.push((p(f[0])?, p(f[1])?, v));
        }
        if t.len() != h[2] {
            return Err(GsanError::Parse(format!(
                "header declares {} entries, found {}",
                h[2],
                t.len()
            )));
        }
        SparseOperator::from_triplets(h[0], h[1], t)
    }
}

fn parse_fields(line: &str) -> Result<Vec<usize>> {
    line.split_whitespace()
        .map(|s| s.parse::<usize>().map_err(|e| GsanError::Parse(e.to_string())))
        .collect()
}

pub(crate) fn offsets(sizes: &[usize]) -> Vec<usize> {
    let mut off = Vec::with_capacity(sizes.len() + 1);
    off.push(0);
    for s in sizes {
        off.push(off.last().unwrap() + s);
    }
    off
}
