use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Float, Tensor};
use crate::params::ParamStore;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LambConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// When false the per-tensor trust ratio is fixed at 1 (Adam with
    /// decoupled weight decay).
    pub trust_ratio: bool,
}

impl Default for LambConfig {
    fn default() -> Self {
        LambConfig {
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-8,
            weight_decay: 1e-6,
            trust_ratio: true,
        }
    }
}

/// Per-parameter first and second moments and the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimState<F: Float> {
    pub m: Vec<Vec<F>>,
    pub v: Vec<Vec<F>>,
    pub step: u64,
}

impl<F: Float> OptimState<F> {
    pub fn zeros(store: &ParamStore<F>) -> Self {
        let m: Vec<Vec<F>> = store.iter().map(|(_, _, t)| vec![F::zero(); t.numel()]).collect();
        OptimState {
            v: m.clone(),
            m,
            step: 0,
        }
    }
}

/// Layer-wise adaptive moments optimizer.
#[derive(Clone, Debug)]
pub struct Lamb<F: Float> {
    pub cfg: LambConfig,
    pub state: OptimState<F>,
}

impl<F: Float> Lamb<F> {
    pub fn new(cfg: LambConfig, store: &ParamStore<F>) -> Self {
        Lamb {
            cfg,
            state: OptimState::zeros(store),
        }
    }

    /// One update of every parameter. Missing gradients count as zero.
    pub fn step(&mut self, store: &mut ParamStore<F>, grads: &[Option<Tensor<F>>], lr: f64) -> Result<()> {
        let n = store.len();
        if grads.len() != n || self.state.m.len() != n {
            return Err(Error::invalid(
                "lamb_step",
                format!(
                    "{} gradients and {} moment slots for {n} parameters",
                    grads.len(),
                    self.state.m.len()
                ),
            ));
        }
        let c = &self.cfg;
        self.state.step += 1;
        let t = self.state.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let ids: Vec<_> = store.ids().collect();
        for (k, id) in ids.into_iter().enumerate() {
            let w = store.get(id);
            let numel = w.numel();
            if self.state.m[k].len() != numel {
                return Err(Error::invalid(
                    "lamb_step",
                    format!("moment shape mismatch for {}", store.name(id)),
                ));
            }
            if let Some(g) = &grads[k] {
                if g.numel() != numel {
                    return Err(Error::shape("lamb_step", w.shape(), g.shape()));
                }
            }
            let (m, v) = (&mut self.state.m[k], &mut self.state.v[k]);
            let mut r = Vec::with_capacity(numel);
            for i in 0..numel {
                let gi = grads[k].as_ref().map_or(0.0, |g| g.data()[i].as_f64());
                let mi = c.beta1 * m[i].as_f64() + (1.0 - c.beta1) * gi;
                let vi = c.beta2 * v[i].as_f64() + (1.0 - c.beta2) * gi * gi;
                m[i] = F::from_f64_lossy(mi);
                v[i] = F::from_f64_lossy(vi);
                let wi = w.data()[i].as_f64();
                r.push((mi / bc1) / ((vi / bc2).sqrt() + c.eps) + c.weight_decay * wi);
            }
            let phi = if c.trust_ratio {
                let w_norm = w.data().iter().map(|x| x.as_f64().powi(2)).sum::<f64>().sqrt();
                let r_norm = r.iter().map(|x| x * x).sum::<f64>().sqrt();
                if w_norm > 0.0 && r_norm > 0.0 {
                    w_norm / r_norm
                } else {
                    1.0
                }
            } else {
                1.0
            };
            let updated: Vec<F> = w
                .data()
                .iter()
                .zip(&r)
                .map(|(&wi, ri)| F::from_f64_lossy(wi.as_f64() - lr * phi * ri))
                .collect();
            let shape = w.shape().to_vec();
            store.set(id, Tensor::new(&shape, updated)?)?;
        }
        Ok(())
    }
}

/// Linear warmup to `base_lr` at `warmup`, then inverse square-root decay.
pub fn noam_lr(step: u64, base_lr: f64, warmup: u64) -> Result<f64> {
    if step == 0 {
        return Err(Error::invalid("noam_lr", "steps are counted from 1"));
    }
    if warmup == 0 {
        return Err(Error::invalid("noam_lr", "warmup must be positive"));
    }
    let (s, w) = (step as f64, warmup as f64);
    Ok(base_lr * (s / w).min((w / s).sqrt()))
}

/// Global L2 norm over all gradients.
pub fn global_norm<F: Float>(grads: &[Option<Tensor<F>>]) -> f64 {
    grads
        .iter()
        .flatten()
        .flat_map(|g| g.data().iter())
        .map(|v| v.as_f64().powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Rescales all gradients so their global norm is at most `max_norm`.
/// Returns the factor applied (1 when no clipping happened).
pub fn clip_gradients<F: Float>(grads: &mut [Option<Tensor<F>>], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm <= max_norm || norm == 0.0 {
        return 1.0;
    }
    let scale = max_norm / norm;
    for g in grads.iter_mut().flatten() {
        *g = g
            .map(|v| F::from_f64_lossy(v.as_f64() * scale))
            .expect("scaling keeps gradients finite");
    }
    scale
}
