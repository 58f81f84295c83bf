//! Gradient-check harness for parameterized modules.

use rand::Rng;

use crate::error::Result;
use crate::numerics::gradcheck::{self, CheckResult, Probe};
use crate::numerics::Tensor;
use crate::params::{Ctx, ParamId, ParamStore};

/// Finite-difference check of `f` w.r.t. every tensor in `inputs` and every
/// parameter in `ids`.
pub fn check_with_params<R, G>(
    store: &ParamStore<f64>,
    ids: &[ParamId],
    inputs: &[Tensor<f64>],
    rng: &mut R,
    probe: Probe,
    f: G,
) -> Result<CheckResult>
where
    R: Rng + ?Sized,
    G: Fn(&Ctx<'_, f64>, &[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    let n_in = inputs.len();
    let mut all = inputs.to_vec();
    all.extend(ids.iter().map(|&id| store.get(id).clone()));
    let wrt: Vec<usize> = (0..all.len()).collect();
    gradcheck::check(&all, &wrt, probe, rng, |tape, v| {
        let mut s = store.clone();
        for (k, &id) in ids.iter().enumerate() {
            s.attach(id, v[n_in + k].clone())?;
        }
        let ctx = Ctx::eval(tape, &s);
        f(&ctx, &v[..n_in])
    })
}
