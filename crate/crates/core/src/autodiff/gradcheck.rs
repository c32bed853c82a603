//! Central finite-difference gradient checking.

use super::params::{ParamId, ParamStore};
use crate::error::Result;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst: Option<(String, usize, f64, f64)>,
}

/// Relative error with a floor on the denominator so that entries whose true
/// gradient is essentially zero are judged on absolute error.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares `analytic` gradients (already in `store`) with central finite
/// differences of `loss` over the scalars of `params`.
///
/// `loss` is evaluated with perturbed parameter values and must not touch the
/// gradient buffers.
pub fn check_store_gradients<F>(
    store: &mut ParamStore,
    params: &[ParamId],
    eps: f64,
    floor: f64,
    mut loss: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore) -> Result<f64>,
{
    let mut report = GradCheckReport {
        checked: 0,
        max_rel_error: 0.0,
        worst: None,
    };
    for &id in params {
        let n = store.value(id).len();
        for i in 0..n {
            let orig = store.value(id).data()[i];
            store.value_mut(id).data_mut()[i] = orig + eps;
            let plus = loss(store)?;
            store.value_mut(id).data_mut()[i] = orig - eps;
            let minus = loss(store)?;
            store.value_mut(id).data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let analytic = store.grad(id)[i];
            let err = relative_error(analytic, numeric, floor);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err;
                report.worst = Some((store.get(id).name.clone(), i, analytic, numeric));
            }
        }
    }
    Ok(report)
}
