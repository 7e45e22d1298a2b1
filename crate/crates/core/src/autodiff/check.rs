use serde::Serialize;

use crate::error::{GsanError, Result};

use super::{Gradients, ParamStore};

/// Entries whose analytic and numeric magnitudes both stay below this are skipped.
const MAGNITUDE_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ParamFdResult {
    pub name: String,
    pub max_rel_error: f64,
    pub checked: usize,
    pub skipped: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FdReport {
    pub params: Vec<ParamFdResult>,
    pub rtol: f64,
    pub h: f64,
    pub passed: bool,
}

impl FdReport {
    pub fn worst(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    /// Names of parameters over tolerance.
    pub fn failing(&self) -> Vec<&str> {
        self.params
            .iter()
            .filter(|p| p.max_rel_error > self.rtol)
            .map(|p| p.name.as_str())
            .collect()
    }
}

/// Compares `analytic` with five-point central differences of `f` entry by entry.
pub fn finite_difference_check(
    mut f: impl FnMut(&ParamStore) -> Result<f64>,
    params: &ParamStore,
    analytic: &Gradients,
    h: f64,
    rtol: f64,
) -> Result<FdReport> {
    let first = f(params)?;
    let second = f(params)?;
    if first.to_bits() != second.to_bits() {
        return Err(GsanError::NonDeterministic { first, second });
    }
    let mut probe = params.clone();
    let mut results = Vec::with_capacity(params.len());
    for id in params.ids() {
        let mut worst: f64 = 0.0;
        let (mut checked, mut skipped) = (0, 0);
        for e in 0..params.get(id).len() {
            let base = params.get(id).as_slice()[e];
            let mut at = |offset: f64| -> Result<f64> {
                probe.get_mut(id).as_mut_slice()[e] = base + offset;
                f(&probe)
            };
            let (p1, m1, p2, m2) = (at(h)?, at(-h)?, at(2.0 * h)?, at(-2.0 * h)?);
            probe.get_mut(id).as_mut_slice()[e] = base;
            let numeric = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h);
            let a = analytic.get(id).as_slice()[e];
            let scale = a.abs().max(numeric.abs());
            if scale <= MAGNITUDE_FLOOR {
                skipped += 1;
                continue;
            }
            checked += 1;
            worst = worst.max((a - numeric).abs() / scale);
        }
        results.push(ParamFdResult {
            name: params.name(id).to_string(),
            max_rel_error: worst,
            checked,
            skipped,
        });
    }
    let passed = results.iter().all(|r| r.max_rel_error <= rtol);
    Ok(FdReport {
        params: results,
        rtol,
        h,
        passed,
    })
}
