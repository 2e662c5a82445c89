//! Central finite-difference gradient checking (used by tests).
//!
//! The loss closure must be deterministic: any sampling noise has to be drawn
//! once outside and captured, so repeated evaluations at perturbed parameters
//! see identical noise.

use ndarray::Array2;
use rand::Rng;

use super::blocks::Module;

/// Result of one finite-difference comparison.
#[derive(Debug)]
pub struct GradMismatch {
    pub param: usize,
    pub index: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

/// Compares analytic parameter gradients against central finite differences.
///
/// `loss` evaluates the (deterministic) scalar loss at the module's current
/// parameters and returns the analytic gradients in canonical parameter
/// order. Every element is checked unless `max_per_param` limits the count,
/// in which case a deterministic random subset is used. Parameter indices in
/// `skip` are not checked — used for parameters whose gradient is severed on
/// purpose (a detached path), where finite differences see the true
/// derivative but the tape correctly reports zero. Returns the worst
/// mismatch exceeding `tol`, if any.
pub fn check_module<M: Module<f64>>(
    module: &mut M,
    mut loss: impl FnMut(&M) -> (f64, Vec<Array2<f64>>),
    step: f64,
    tol: f64,
    max_per_param: Option<usize>,
    skip: &[usize],
    rng: &mut impl Rng,
) -> Option<GradMismatch> {
    let (_, grads) = loss(module);
    assert_eq!(grads.len(), module.n_params(), "gradient count mismatch");
    let mut worst: Option<GradMismatch> = None;

    for (p, grad) in grads.iter().enumerate() {
        if skip.contains(&p) {
            continue;
        }
        let (rows, cols) = grad.dim();
        let total = rows * cols;
        let picks: Vec<usize> = match max_per_param {
            Some(k) if k < total => (0..k).map(|_| rng.gen_range(0..total)).collect(),
            _ => (0..total).collect(),
        };
        for flat in picks {
            let idx = (flat / cols, flat % cols);
            let orig = module.params_mut()[p][idx];
            module.params_mut()[p][idx] = orig + step;
            let (lp, _) = loss(module);
            module.params_mut()[p][idx] = orig - step;
            let (lm, _) = loss(module);
            module.params_mut()[p][idx] = orig;

            let numeric = (lp - lm) / (2.0 * step);
            let analytic = grad[idx];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
            if rel > tol && worst.as_ref().is_none_or(|w| rel > w.rel_err) {
                worst = Some(GradMismatch {
                    param: p,
                    index: idx,
                    analytic,
                    numeric,
                    rel_err: rel,
                });
            }
        }
    }
    worst
}

/// Panics with a readable report if any checked gradient disagrees.
pub fn assert_grads_match<M: Module<f64>>(
    module: &mut M,
    loss: impl FnMut(&M) -> (f64, Vec<Array2<f64>>),
    max_per_param: Option<usize>,
    skip: &[usize],
    rng: &mut impl Rng,
) {
    if let Some(m) = check_module(module, loss, 1e-5, 1e-4, max_per_param, skip, rng) {
        panic!(
            "gradient mismatch at param {} index {:?}: analytic {} vs numeric {} (rel err {:.3e})",
            m.param, m.index, m.analytic, m.numeric, m.rel_err
        );
    }
}
