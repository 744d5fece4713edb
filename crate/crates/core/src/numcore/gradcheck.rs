//! Central finite-difference gradient oracle.

use rand::seq::index::sample;

use super::graph::{Graph, Var};
use super::param::{ParamId, ParamSet};
use super::rng::rng_from;
use super::NumError;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// `max |analytic − numeric| / max(|analytic|, |numeric|, floor)` over checked
    /// coordinates, with `floor = max(1e-8, 1e-6 · max |analytic|)` taken over the
    /// whole gradient. Coordinates far below the gradient's scale are judged
    /// against that scale rather than their own size.
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub checked: usize,
    /// Largest |analytic gradient| seen, so callers can confirm gradient actually flows.
    pub max_abs_grad: f64,
}

fn loss_value<F>(params: &ParamSet<f64>, loss_fn: &F) -> f64
where
    F: Fn(&mut Graph<'_, f64>) -> Var,
{
    let mut g = Graph::with_params(params);
    let l = loss_fn(&mut g);
    g.value(l).item()
}

/// Compares reverse-mode gradients to `(f(p+eps) − f(p−eps)) / 2eps`.
///
/// At most `per_param` coordinates are sampled from each parameter (all of
/// them when the tensor is smaller). Parameters listed in `skip` are ignored.
pub fn grad_check<F>(
    params: &mut ParamSet<f64>,
    loss_fn: F,
    eps: f64,
    per_param: usize,
    seed: u64,
    skip: &[&str],
) -> Result<GradCheckReport, NumError>
where
    F: Fn(&mut Graph<'_, f64>) -> Var,
{
    let base = loss_value(params, &loss_fn);
    if !base.is_finite() {
        return Err(NumError::NonFiniteLoss { param: "<base>".into(), index: 0 });
    }
    let analytic: Vec<Option<Vec<f64>>> = {
        let mut g = Graph::with_params(params);
        let l = loss_fn(&mut g);
        let grads = g.backward(l);
        (0..params.len()).map(|i| grads.param(ParamId(i)).map(|t| t.data().to_vec())).collect()
    };
    let scale = analytic.iter().flatten().flatten().fold(0.0f64, |m, g| m.max(g.abs()));
    let floor = (1e-6 * scale).max(1e-8);
    let mut rng = rng_from(seed);
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        checked: 0,
        max_abs_grad: 0.0,
    };
    for pi in 0..params.len() {
        let id = ParamId(pi);
        let name = params.get(id).name.clone();
        if skip.iter().any(|s| name.starts_with(s)) {
            continue;
        }
        let n = params.value(id).len();
        let coords: Vec<usize> = if n <= per_param {
            (0..n).collect()
        } else {
            let mut c = sample(&mut rng, n, per_param).into_vec();
            c.sort_unstable();
            c
        };
        for j in coords {
            let orig = params.value(id).data()[j];
            params.value_mut(id).data_mut()[j] = orig + eps;
            let plus = loss_value(params, &loss_fn);
            params.value_mut(id).data_mut()[j] = orig - eps;
            let minus = loss_value(params, &loss_fn);
            params.value_mut(id).data_mut()[j] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(NumError::NonFiniteLoss { param: name, index: j });
            }
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[pi].as_ref().map(|g| g[j]).unwrap_or(0.0);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            report.max_abs_err = report.max_abs_err.max((a - numeric).abs());
            report.checked += 1;
            report.max_abs_grad = report.max_abs_grad.max(a.abs());
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst_param = name.clone();
                report.worst_index = j;
            }
        }
    }
    Ok(report)
}
