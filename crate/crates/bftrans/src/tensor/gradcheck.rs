//! Central-difference verification of the analytic gradients.
//!
//! Runs entirely in f64: the same generic forward code is evaluated twice per
//! parameter scalar and compared against the recorded backward pass.

use super::{Graph, ParamStore, Var};
use crate::error::{contract_err, Error, Result};

#[derive(Clone, Debug)]
pub struct GradcheckReport {
    pub max_rel_err: f64,
    /// (parameter name, flat index, analytic, numeric) of the worst entry.
    pub worst: Option<(String, usize, f64, f64)>,
    pub scalars_checked: usize,
    pub tol: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tol
    }
}

/// Compare analytic gradients of `f` against central differences over every
/// scalar in `store`. `f` must evaluate a scalar loss from the store's
/// current values.
pub fn gradcheck<F>(mut f: F, store: &mut ParamStore<f64>, eps: f64, tol: f64) -> Result<GradcheckReport>
where
    F: FnMut(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>,
{
    if !(1e-4..=1e-2).contains(&eps) {
        return contract_err(format!("gradcheck eps {eps} outside [1e-4, 1e-2]"));
    }

    // Analytic pass.
    store.zero_grads();
    let mut g = Graph::new();
    let loss = f(&mut g, store)?;
    if g.value(loss).len() != 1 {
        return contract_err(format!(
            "gradcheck function must produce a scalar, got {:?}",
            g.value(loss).shape()
        ));
    }
    let loss_val = g.value(loss).data()[0];
    if !loss_val.is_finite() {
        return Err(Error::Gradcheck(format!("non-finite loss {loss_val} in analytic pass")));
    }
    g.backward(loss)?;
    g.accumulate_param_grads(store)?;
    let analytic: Vec<Vec<f64>> = (0..store.len())
        .map(|i| store.entry(i).grad.data().to_vec())
        .collect();

    let eval = |store: &ParamStore<f64>, f: &mut F| -> Result<f64> {
        let mut g = Graph::new();
        let loss = f(&mut g, store)?;
        Ok(g.value(loss).data()[0])
    };

    let mut max_rel_err = 0.0f64;
    let mut worst = None;
    let mut scalars_checked = 0;
    for ei in 0..store.len() {
        let n = store.entry(ei).value.len();
        for k in 0..n {
            let orig = store.entry(ei).value.data()[k];
            store.entry_mut(ei).value.data_mut()[k] = orig + eps;
            let up = eval(store, &mut f)?;
            store.entry_mut(ei).value.data_mut()[k] = orig - eps;
            let down = eval(store, &mut f)?;
            store.entry_mut(ei).value.data_mut()[k] = orig;
            if !up.is_finite() || !down.is_finite() {
                let name = store.entry(ei).name.clone();
                return Err(Error::Gradcheck(format!(
                    "non-finite evaluation perturbing '{name}'[{k}]: f+ = {up}, f- = {down}"
                )));
            }
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic[ei][k];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            scalars_checked += 1;
            if rel > max_rel_err {
                max_rel_err = rel;
                worst = Some((store.entry(ei).name.clone(), k, a, numeric));
            }
        }
    }

    Ok(GradcheckReport {
        max_rel_err,
        worst,
        scalars_checked,
        tol,
    })
}
