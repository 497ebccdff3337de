//! Central finite-difference verification of tape gradients.

use serde::Serialize;

use crate::error::Result;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Denominator floor for the relative error, so that near-zero gradients are
/// judged on absolute error instead of amplified round-off.
pub const REL_ERROR_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, Serialize)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub step: f64,
    pub tolerance: f64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.params
            .iter()
            .map(|p| p.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ParamCheck> {
        self.params.iter().filter(|p| !p.passed)
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares tape gradients of the scalar built by `f` against central differences.
///
/// `f` receives a fresh tape and one leaf per entry of `params` (same order)
/// and must be deterministic. Every scalar of every parameter is perturbed.
pub fn gradient_check<F>(
    f: F,
    params: &[(String, Tensor)],
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    assert!(step > 0.0, "finite-difference step must be positive");
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|(_, t)| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(params)
        .map(|(&v, (_, t))| grads.get_or_zeros(v, t))
        .collect();

    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).data()[0])
    };

    let mut values: Vec<Tensor> = params.iter().map(|(_, t)| t.clone()).collect();
    let mut checks = Vec::with_capacity(params.len());
    for (pi, (name, _)) in params.iter().enumerate() {
        let mut worst = (0.0, 0usize, 0.0, 0.0);
        for j in 0..values[pi].len() {
            let orig = values[pi].data()[j];
            values[pi].data_mut()[j] = orig + step;
            let plus = eval(&values)?;
            values[pi].data_mut()[j] = orig - step;
            let minus = eval(&values)?;
            values[pi].data_mut()[j] = orig;

            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic[pi].data()[j];
            let err = relative_error(a, numeric);
            if err > worst.0 || err.is_nan() {
                worst = (err, j, a, numeric);
            }
        }
        checks.push(ParamCheck {
            name: name.clone(),
            max_rel_error: worst.0,
            worst_index: worst.1,
            analytic: worst.2,
            numeric: worst.3,
            passed: worst.0 < tolerance,
        });
    }
    Ok(GradCheckReport {
        step,
        tolerance,
        params: checks,
    })
}
