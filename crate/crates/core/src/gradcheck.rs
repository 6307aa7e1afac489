//! Finite-difference verification of analytic gradients.
//!
//! The checker re-runs a caller-supplied forward pass with each
//! parameter element displaced by a central-difference step and compares
//! the numeric slope against a previously captured analytic gradient.
//! Relative error uses a floored denominator: for gradients smaller than
//! the floor the comparison degrades to a scaled absolute error, which
//! keeps near-zero gradients from producing spurious blow-ups.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::param::ParamStore;

/// Central-difference step.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Denominator floor for the relative error.
pub const DEFAULT_FLOOR: f64 = 1e-4;

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Outcome of a full check over every parameter element.
#[derive(Debug, Clone)]
pub struct GradReport {
    /// Worst relative error per parameter, in name order.
    pub per_param: BTreeMap<String, f64>,
    /// Parameter holding the overall worst element.
    pub worst_param: String,
    /// Flat index of the worst element inside its parameter.
    pub worst_index: usize,
    /// Analytic and numeric values at the worst element.
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    /// Overall worst relative error.
    pub max_rel_err: f64,
    /// Number of forward evaluations spent.
    pub evaluations: usize,
}

impl GradReport {
    pub fn passes(&self, threshold: f64) -> bool {
        self.max_rel_err < threshold
    }
}

/// Compares `analytic` gradients against central differences of `f`.
///
/// `f` must rebuild its graph from the store's current values on every
/// call and return the scalar loss. The function first evaluates `f`
/// twice and fails if the results differ at all, since a non-repeatable
/// forward pass makes slopes meaningless. Parameters are restored to
/// their exact original bytes after probing.
pub fn check_gradients(
    store: &ParamStore,
    analytic: &BTreeMap<String, Vec<f64>>,
    mut f: impl FnMut() -> Result<f64>,
    step: f64,
    floor: f64,
) -> Result<GradReport> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::contract("step must be finite and positive"));
    }
    let first = f()?;
    let second = f()?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::Numeric(format!(
            "forward pass is not deterministic: {first} then {second}"
        )));
    }
    let mut evaluations = 2;
    let mut per_param = BTreeMap::new();
    let mut worst = GradReport {
        per_param: BTreeMap::new(),
        worst_param: String::new(),
        worst_index: 0,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
        max_rel_err: 0.0,
        evaluations: 0,
    };
    for (name, tensor) in store.iter() {
        let grads = analytic.get(name).ok_or_else(|| {
            Error::contract(format!("no analytic gradient captured for {name}"))
        })?;
        if grads.len() != tensor.len() {
            return Err(Error::contract(format!(
                "analytic gradient for {name} has {} values, parameter has {}",
                grads.len(),
                tensor.len()
            )));
        }
        let mut param_worst = 0.0f64;
        for (i, &analytic_grad) in grads.iter().enumerate() {
            let original = tensor.data()[i];
            tensor.set_element(i, original + step)?;
            let up = f()?;
            tensor.set_element(i, original - step)?;
            let down = f()?;
            tensor.set_element(i, original)?;
            evaluations += 2;
            let numeric = (up - down) / (2.0 * step);
            let rel = relative_error(analytic_grad, numeric, floor);
            if rel > param_worst {
                param_worst = rel;
            }
            if rel > worst.max_rel_err {
                worst.max_rel_err = rel;
                worst.worst_param = name.clone();
                worst.worst_index = i;
                worst.worst_analytic = analytic_grad;
                worst.worst_numeric = numeric;
            }
        }
        per_param.insert(name.clone(), param_worst);
    }
    worst.per_param = per_param;
    worst.evaluations = evaluations;
    Ok(worst)
}
