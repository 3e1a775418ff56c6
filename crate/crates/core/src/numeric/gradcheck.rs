//! Central finite-difference oracle for tape gradients.

use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Outcome of [`finite_diff_check`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub entries_checked: usize,
}

fn eval<F>(loss_fn: &mut F, store: &ParamStore) -> Result<f64>
where
    F: FnMut(&ParamStore, &mut Tape) -> Result<Var>,
{
    let mut tape = Tape::new();
    let root = loss_fn(store, &mut tape)?;
    Ok(tape.scalar_value(root))
}

/// Relative error with a `1e-8` floor on the denominator.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Compares tape gradients of `loss_fn` against central differences
/// `(f(θ+ε) − f(θ−ε)) / 2ε` for every entry of `params`.
///
/// `loss_fn` builds the scalar loss on a fresh tape; it must be deterministic,
/// so any sampling noise has to come from a fixed seed. Store gradients of
/// `params` are overwritten.
pub fn finite_diff_check<F>(
    store: &mut ParamStore,
    params: &[ParamId],
    eps: f64,
    mut loss_fn: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore, &mut Tape) -> Result<Var>,
{
    if eps <= 0.0 || !eps.is_finite() {
        return Err(Error::usage(format!("finite-difference step must be > 0, got {eps}")));
    }
    for &p in params {
        store.get_mut(p).zero_grad();
    }
    let base = eval(&mut loss_fn, store)?;
    if base.to_bits() != eval(&mut loss_fn, store)?.to_bits() {
        return Err(Error::UnreliableCheck(
            "loss differs between identical evaluations; fix the random seeds".into(),
        ));
    }
    {
        let mut tape = Tape::new();
        let root = loss_fn(store, &mut tape)?;
        tape.backward(root, store)?;
    }

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        entries_checked: 0,
    };
    for &p in params {
        if !store.get(p).requires_grad() {
            continue;
        }
        for j in 0..store.get(p).len() {
            let original = store.get(p).values()[j];
            store.get_mut(p).values_mut()[j] = original + eps;
            let plus = eval(&mut loss_fn, store)?;
            store.get_mut(p).values_mut()[j] = original - eps;
            let minus = eval(&mut loss_fn, store)?;
            store.get_mut(p).values_mut()[j] = original;
            let numeric = (plus - minus) / (2.0 * eps);
            let analytic = store.get(p).grad()[j];
            let err = relative_error(analytic, numeric);
            report.entries_checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err;
                report.worst = Some((store.name(p).to_string(), j));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::tensor::Tensor;

    #[test]
    fn quadratic_form() {
        let mut store = ParamStore::new();
        let theta = store.add("theta", Tensor::param(vec![1, 2], vec![1.0, 2.0]).unwrap());
        let report = finite_diff_check(&mut store, &[theta], 1e-5, |s, tape| {
            let t = tape.param(s, theta);
            let sq = tape.square(t);
            Ok(tape.sum(sq))
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-8, "{report:?}");
        assert_eq!(report.entries_checked, 2);
        assert_eq!(store.get(theta).grad(), &[2.0, 4.0]);
    }

    #[test]
    fn constant_function_reports_zero() {
        let mut store = ParamStore::new();
        let theta = store.add("theta", Tensor::param(vec![3], vec![0.1, 0.2, 0.3]).unwrap());
        let report = finite_diff_check(&mut store, &[theta], 1e-5, |_, tape| Ok(tape.scalar(4.0))).unwrap();
        assert_eq!(report.max_rel_error, 0.0);
    }

    #[test]
    fn nondeterministic_loss_is_flagged() {
        let mut store = ParamStore::new();
        let theta = store.add("theta", Tensor::param(vec![1], vec![1.0]).unwrap());
        let mut calls = 0.0;
        let err = finite_diff_check(&mut store, &[theta], 1e-5, |s, tape| {
            calls += 1.0;
            let t = tape.param(s, theta);
            Ok(tape.add_scalar(t, calls))
        })
        .unwrap_err();
        assert!(matches!(err, Error::UnreliableCheck(_)));
    }
}
