use super::graph::{Graph, Var};
use super::params::{ParamId, ParamStore};
use crate::error::{Error, Result};

fn evaluate<F>(f: &mut F, store: &ParamStore) -> Result<f64>
where
    F: FnMut(&mut Graph, &ParamStore) -> Result<Var>,
{
    let mut g = Graph::new();
    let out = f(&mut g, store)?;
    let v = g.value(out);
    if v.numel() != 1 {
        return Err(Error::contract(format!(
            "grad_check needs a scalar function, got shape {:?}",
            v.shape()
        )));
    }
    Ok(v.item())
}

/// Compares reverse-mode gradients of `f` with central differences for every
/// coordinate of `params` and returns
/// `max |analytic - numeric| / max(1, |analytic|)`.
pub fn grad_check<F>(store: &mut ParamStore, params: &[ParamId], eps: f64, mut f: F) -> Result<f64>
where
    F: FnMut(&mut Graph, &ParamStore) -> Result<Var>,
{
    if !(eps > 0.0) {
        return Err(Error::contract(format!("grad_check step must be positive, got {eps}")));
    }
    let a = evaluate(&mut f, store)?;
    let b = evaluate(&mut f, store)?;
    if a.to_bits() != b.to_bits() {
        return Err(Error::contract(format!(
            "function is not deterministic: two evaluations gave {a} and {b}"
        )));
    }
    let grads = {
        let mut g = Graph::new();
        let out = f(&mut g, store)?;
        g.backward(out)?
    };
    let mut worst: f64 = 0.0;
    for &id in params {
        let analytic = grads
            .get(id)
            .ok_or_else(|| Error::contract(format!("no gradient for {}", store.name(id))))?
            .clone();
        for j in 0..analytic.numel() {
            let orig = store.get(id).data()[j];
            store.get_mut(id).data_mut()[j] = orig + eps;
            let plus = evaluate(&mut f, store);
            store.get_mut(id).data_mut()[j] = orig - eps;
            let minus = evaluate(&mut f, store);
            store.get_mut(id).data_mut()[j] = orig;
            let numeric = (plus? - minus?) / (2.0 * eps);
            let an = analytic.data()[j];
            worst = worst.max((an - numeric).abs() / an.abs().max(1.0));
        }
    }
    Ok(worst)
}
