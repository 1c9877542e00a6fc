//! Central finite-difference oracle for the reverse-mode engine.

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::Result;

/// Compares the reverse-mode gradient of `f` at `x` with central differences.
///
/// `f` receives a graph and the leaf holding `x` and must return a scalar.
/// Returns the maximum over coordinates of
/// `|analytic − numeric| / max(1, |analytic|, |numeric|)`.
pub fn finite_difference_check<'a, F>(f: F, x: &Tensor, step: f64) -> Result<f64>
where
    F: Fn(&mut Graph<'a>, Var) -> Result<Var>,
{
    let analytic = {
        let mut g = Graph::new();
        let xv = g.leaf(x.clone(), true);
        let loss = f(&mut g, xv)?;
        let mut grads = g.backward(loss)?;
        grads.take(xv).unwrap_or_else(|| vec![0.0; x.len()])
    };
    let eval = |t: Tensor| -> Result<f64> {
        let mut g = Graph::new();
        let xv = g.constant(t);
        let loss = f(&mut g, xv)?;
        Ok(g.value(loss).item())
    };
    let mut worst = 0.0f64;
    for (i, &a) in analytic.iter().enumerate() {
        let mut plus = x.detached();
        plus.data_mut()[i] += step;
        let mut minus = x.detached();
        minus.data_mut()[i] -= step;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * step);
        let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
        if err.is_nan() {
            return Ok(f64::INFINITY);
        }
        worst = worst.max(err);
    }
    Ok(worst)
}

/// A named gradient check returning its maximum relative error.
pub struct GradCheck {
    pub name: String,
    pub run: Box<dyn Fn() -> Result<f64> + Send + Sync>,
}

impl GradCheck {
    pub fn new(name: impl Into<String>, run: impl Fn() -> Result<f64> + Send + Sync + 'static) -> Self {
        GradCheck {
            name: name.into(),
            run: Box::new(run),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    /// `Err` carries the failure message when the check itself errored.
    pub max_rel_error: std::result::Result<f64, String>,
    pub passed: bool,
}

pub fn run_checks(checks: &[GradCheck], tolerance: f64) -> Vec<CheckOutcome> {
    checks
        .iter()
        .map(|c| {
            let r = (c.run)().map_err(|e| e.to_string());
            let passed = matches!(r, Ok(e) if e <= tolerance);
            CheckOutcome {
                name: c.name.clone(),
                max_rel_error: r,
                passed,
            }
        })
        .collect()
}
