//! Central finite-difference gradient checking.

use super::{Gradients, ParamId, ParamStore};

/// Denominator floor for the relative error, so coordinates whose true
/// gradient is ~0 are judged on absolute error instead.
pub const REL_ERROR_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: Option<String>,
    pub worst_index: usize,
    pub coordinates: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares the analytic gradient returned by `loss` against
/// `(f(θ+δ) − f(θ−δ)) / 2δ` for every coordinate of every parameter.
pub fn grad_check<F>(loss: F, store: &mut ParamStore, delta: f64) -> GradCheckReport
where
    F: Fn(&ParamStore) -> (f64, Gradients),
{
    let ids: Vec<ParamId> = store.ids().collect();
    grad_check_subset(loss, store, &ids, delta)
}

pub fn grad_check_subset<F>(
    loss: F,
    store: &mut ParamStore,
    ids: &[ParamId],
    delta: f64,
) -> GradCheckReport
where
    F: Fn(&ParamStore) -> (f64, Gradients),
{
    let (_, analytic) = loss(store);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: None,
        worst_index: 0,
        coordinates: 0,
    };
    for &id in ids {
        let grad = analytic.dense(id);
        for (k, &a) in grad.iter().enumerate() {
            let orig = store.value(id)[k];
            store.value_mut(id)[k] = orig + delta;
            let plus = loss(store).0;
            store.value_mut(id)[k] = orig - delta;
            let minus = loss(store).0;
            store.value_mut(id)[k] = orig;
            let numeric = (plus - minus) / (2.0 * delta);
            let err = relative_error(a, numeric);
            report.coordinates += 1;
            if report.worst_param.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst_param = Some(store.get(id).name.clone());
                report.worst_index = k;
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;

    #[test]
    fn square_at_three() {
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::vector(vec![3.0]));
        let loss = |s: &ParamStore| {
            let v = s.value(x)[0];
            let mut g = s.gradients();
            g.slot(x)[0] = 2.0 * v;
            (v * v, g)
        };
        let (_, g) = loss(&store);
        assert_eq!(g.dense(x), vec![6.0]);
        let report = grad_check(loss, &mut store, 1e-5);
        assert!(report.max_rel_error < 1e-9);
        assert_eq!(report.coordinates, 1);
    }

    #[test]
    fn detects_wrong_gradient() {
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::vector(vec![3.0]));
        let loss = |s: &ParamStore| {
            let v = s.value(x)[0];
            let mut g = s.gradients();
            g.slot(x)[0] = 3.0 * v;
            (v * v, g)
        };
        let report = grad_check(loss, &mut store, 1e-5);
        assert!(report.max_rel_error > 0.3);
        assert_eq!(report.worst_param.as_deref(), Some("x"));
    }
}
