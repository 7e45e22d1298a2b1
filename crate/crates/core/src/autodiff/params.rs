use crate::dense::Mat;
use crate::error::{shape_err, GsanError, Result};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named parameter tensors in registration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Mat>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn push(&mut self, name: impl Into<String>, value: Mat) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Mat {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Mat)> {
        self.names.iter().map(|s| s.as_str()).zip(&self.values)
    }

    /// Total number of scalar entries.
    pub fn total_size(&self) -> usize {
        self.values.iter().map(|m| m.len()).sum()
    }

    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.values.iter().map(|m| m.shape()).collect()
    }

    /// All entries concatenated in registration order (row-major within each tensor).
    pub fn flatten(&self) -> Vec<f64> {
        self.values.iter().flat_map(|m| m.as_slice().iter().copied()).collect()
    }

    /// Overwrites every tensor from a flat buffer produced by [`ParamStore::flatten`].
    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.total_size() {
            return shape_err(format!(
                "flat buffer of {} values for {} parameters",
                flat.len(),
                self.total_size()
            ));
        }
        let mut start = 0;
        for m in &mut self.values {
            let n = m.len();
            m.as_mut_slice().copy_from_slice(&flat[start..start + n]);
            start += n;
        }
        Ok(())
    }
}

/// One gradient tensor per parameter, aligned with a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    values: Vec<Mat>,
}

impl Gradients {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Gradients {
            values: store.values.iter().map(|m| Mat::zeros(m.rows(), m.cols())).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &Mat {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.values[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub(crate) fn accumulate(&mut self, id: ParamId, g: &Mat) -> Result<()> {
        self.values[id.0].add_assign(g)
    }

    /// Adds another gradient set entry by entry.
    pub fn add_assign(&mut self, other: &Gradients) -> Result<()> {
        if self.values.len() != other.values.len() {
            return shape_err("gradient sets of different length");
        }
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            a.add_assign(b)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: f64) {
        for m in &mut self.values {
            *m = m.scale(alpha);
        }
    }

    /// Errors with the name of the first parameter holding a non-finite gradient.
    pub fn check_finite(&self, store: &ParamStore) -> Result<()> {
        for (i, g) in self.values.iter().enumerate() {
            if !g.is_finite() {
                return Err(GsanError::NonFiniteGradient(store.names[i].clone()));
            }
        }
        Ok(())
    }

    pub fn norm(&self) -> f64 {
        self.values
            .iter()
            .map(|m| m.frobenius_norm().powi(2))
            .sum::<f64>()
            .sqrt()
    }
}
