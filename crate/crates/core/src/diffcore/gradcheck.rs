use rayon::prelude::*;

use super::ParamStore;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Parameter name and flat index of the worst scalar.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
    pub pass: bool,
}

/// Compare the analytic gradients stored in `store` against central
/// differences `(f(p+h) - f(p-h)) / 2h` for every trainable scalar.
///
/// The relative error is `|a - n| / max(1e-8, |a| + |n|)`; the check passes
/// when the maximum over all scalars is at most `tol`. Evaluations of `f`
/// are spread over the rayon pool, but each scalar's error is computed in
/// isolation so the report does not depend on the worker count.
pub fn fd_gradient_check<F>(f: F, store: &ParamStore, h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore) -> Result<f64> + Sync,
{
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("step h must be > 0, got {h}")));
    }
    let coords: Vec<(String, usize)> = store
        .iter()
        .filter(|(_, p)| p.trainable)
        .flat_map(|(name, p)| (0..p.value.len()).map(move |i| (name.to_string(), i)))
        .collect();

    let errs: Vec<f64> = coords
        .par_iter()
        .map(|(name, i)| -> Result<f64> {
            let mut probe = store.clone();
            let base = probe.value(name)?.data()[*i];
            probe.value_mut(name)?.data_mut()[*i] = base + h;
            let fp = f(&probe)?;
            probe.value_mut(name)?.data_mut()[*i] = base - h;
            let fm = f(&probe)?;
            if !fp.is_finite() || !fm.is_finite() {
                return Err(Error::NonFinite(format!("f near {name}[{i}]")));
            }
            let numeric = (fp - fm) / (2.0 * h);
            let analytic = store.grad(name)?.data()[*i];
            Ok((analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8))
        })
        .collect::<Result<_>>()?;

    let mut max_rel_err = 0.0;
    let mut worst = None;
    for (c, e) in coords.iter().zip(&errs) {
        if *e > max_rel_err || worst.is_none() {
            max_rel_err = *e;
            worst = Some(c.clone());
        }
    }
    Ok(GradCheckReport {
        max_rel_err,
        worst,
        checked: coords.len(),
        pass: max_rel_err <= tol,
    })
}
