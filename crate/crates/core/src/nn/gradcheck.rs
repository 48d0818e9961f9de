use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{Grads, ParamSet};
use crate::error::Result;

/// Denominator floor for the relative error, so coordinates whose true
/// gradient is ~0 are judged by absolute error instead.
pub const REL_ERR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
    pub tol: f64,
    pub passed: bool,
}

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_ERR_FLOOR)
}

/// Compares analytic gradients with central differences
/// `(L(θ+h) − L(θ−h)) / 2h`, on at most `per_param` seeded coordinates of
/// every trainable param. Params are restored bit-exactly afterwards.
pub fn grad_check<F>(
    ps: &mut ParamSet,
    loss_and_grads: F,
    h: f64,
    tol: f64,
    per_param: usize,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: Fn(&ParamSet) -> Result<(f64, Grads)>,
{
    let (_, grads) = loss_and_grads(ps)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
        tol,
        passed: true,
    };
    let ids: Vec<_> = ps.iter().filter(|(_, p)| p.trainable).map(|(id, _)| id).collect();
    for id in ids {
        let n = ps.get(id).len();
        let coords: Vec<usize> = if n <= per_param {
            (0..n).collect()
        } else {
            let mut c = sample(&mut rng, n, per_param).into_vec();
            c.sort_unstable();
            c
        };
        for i in coords {
            let original = ps.get(id).value[i];
            ps.get_mut(id).value[i] = original + h;
            let plus = loss_and_grads(ps)?.0;
            ps.get_mut(id).value[i] = original - h;
            let minus = loss_and_grads(ps)?.0;
            ps.get_mut(id).value[i] = original;

            let numeric = (plus - minus) / (2.0 * h);
            let analytic = grads.get(id).map_or(0.0, |g| g[i]);
            let err = rel_err(analytic, numeric);
            report.checked += 1;
            if err > report.max_rel_err || !err.is_finite() {
                report.max_rel_err = err;
                report.worst_param = ps.get(id).name.clone();
                report.worst_index = i;
                report.analytic = analytic;
                report.numeric = numeric;
            }
        }
    }
    report.passed = report.max_rel_err < tol;
    Ok(report)
}
