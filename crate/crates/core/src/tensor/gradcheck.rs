//! Central finite-difference checks in 64-bit.

use super::{Matrix, Param};

/// Step for central differences.
pub const STEP: f64 = 1e-5;

/// Denominator floor so that gradients that are exactly zero compare on an absolute scale.
pub const REL_FLOOR: f64 = 1e-5;

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares `analytic` against `d loss / d input` estimated by central differences.
pub fn max_rel_error(
    analytic: &Matrix<f64>,
    input: &Matrix<f64>,
    loss: impl Fn(&Matrix<f64>) -> f64,
) -> f64 {
    assert_eq!(analytic.shape(), input.shape());
    let mut x = input.clone();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let orig = x.as_slice()[i];
        x.as_mut_slice()[i] = orig + STEP;
        let plus = loss(&x);
        x.as_mut_slice()[i] = orig - STEP;
        let minus = loss(&x);
        x.as_mut_slice()[i] = orig;
        let numeric = (plus - minus) / (2.0 * STEP);
        worst = worst.max(rel_error(analytic.as_slice()[i], numeric));
    }
    worst
}

/// Perturbs every element of the parameter picked by `select` in place and
/// compares the central-difference slope of `loss` with `analytic`.
pub fn check_param<M>(
    model: &mut M,
    select: impl for<'a> Fn(&'a mut M) -> &'a mut Param<f64>,
    analytic: &Matrix<f64>,
    loss: impl Fn(&M) -> f64,
) -> f64 {
    let n = select(model).value.len();
    assert_eq!(analytic.len(), n);
    let mut worst = 0.0f64;
    for i in 0..n {
        let orig = select(model).value.as_slice()[i];
        select(model).value.as_mut_slice()[i] = orig + STEP;
        let plus = loss(model);
        select(model).value.as_mut_slice()[i] = orig - STEP;
        let minus = loss(model);
        select(model).value.as_mut_slice()[i] = orig;
        let numeric = (plus - minus) / (2.0 * STEP);
        worst = worst.max(rel_error(analytic.as_slice()[i], numeric));
    }
    worst
}
