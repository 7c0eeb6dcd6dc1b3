//! Central finite-difference verification of tape gradients.

use crate::error::Result;
use crate::params::ParameterStore;
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};

/// Denominator floor of the relative error: gradients smaller than this are
/// compared in absolute terms, where difference noise would dominate.
pub const REL_ERR_FLOOR: f64 = 1e-4;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub checked: usize,
    /// Entries where the one-sided slopes disagree, i.e. the loss has a kink
    /// (relu, max) within `h` of the evaluation point.
    pub skipped_nonsmooth: usize,
    /// Parameter name and flat offset of the worst entry.
    pub worst: Option<(String, usize)>,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Compares tape gradients of the scalar `loss` against central differences
/// with step `h`, over every entry of every parameter (or at most
/// `max_per_param` evenly strided entries per parameter).
pub fn finite_diff_check<T, F>(store: &ParameterStore<T>, loss: F, h: f64, max_per_param: Option<usize>) -> Result<GradCheckReport>
where
    T: Scalar,
    F: for<'t> Fn(&'t Tape<T>, &ParameterStore<T>) -> Result<Var<'t, T>>,
{
    let eval = |s: &ParameterStore<T>| -> Result<f64> {
        let tape = Tape::new();
        Ok(loss(&tape, s)?.value().item().as_f64())
    };
    let analytic = {
        let tape = Tape::new();
        let l = loss(&tape, store)?;
        tape.backward(l)?.into_params()
    };
    let f0 = eval(store)?;
    let mut work = store.clone();
    let mut report = GradCheckReport::default();
    for (id, name, value) in store.iter() {
        let n = value.len();
        let stride = max_per_param.map_or(1, |m| n.div_ceil(m.max(1)).max(1));
        for k in (0..n).step_by(stride) {
            let orig = value.data()[k];
            work.get_mut(id).data_mut()[k] = orig + T::of(h);
            let fp = eval(&work)?;
            work.get_mut(id).data_mut()[k] = orig - T::of(h);
            let fm = eval(&work)?;
            work.get_mut(id).data_mut()[k] = orig;

            let numeric = (fp - fm) / (2.0 * h);
            let fwd = (fp - f0) / h;
            let bwd = (f0 - fm) / h;
            if (fwd - bwd).abs() > 1e-3 * numeric.abs().max(1.0) {
                report.skipped_nonsmooth += 1;
                continue;
            }
            let a = analytic.get(id).map_or(0.0, |g| g.data()[k].as_f64());
            let err = relative_error(a, numeric);
            report.checked += 1;
            if err > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = report.max_rel_err.max(err);
                if err >= report.max_rel_err {
                    report.worst = Some((name.to_string(), k));
                }
            }
        }
    }
    Ok(report)
}
