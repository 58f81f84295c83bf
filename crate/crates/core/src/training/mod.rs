//! Optimization: LAMB, the Noam schedule, gradient clipping and
//! accumulation, the step loop, metrics and checkpoints.

mod checkpoint;
mod optim;
mod trainer;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use checkpoint::Checkpoint;
pub use optim::{clip_gradients, global_norm, noam_lr, Lamb, LambConfig, OptimState};
pub use trainer::{group_gradients, GroupLosses, StepReport, Trainer, METRICS_HEADER};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    /// Micro-batches accumulated per optimizer step.
    pub accum: usize,
    pub seed: u64,
    pub base_lr: f64,
    pub warmup: u64,
    pub grad_clip: f64,
    /// Checkpoint period in steps; 0 writes only the final checkpoint.
    pub checkpoint_every: u64,
    pub optimizer: LambConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 1000,
            batch_size: 8,
            accum: 2,
            seed: 0,
            base_lr: 0.1,
            warmup: 1000,
            grad_clip: 1000.0,
            checkpoint_every: 500,
            optimizer: LambConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.accum == 0 {
            return Err(Error::Config("batch_size and accum must be positive".into()));
        }
        if self.warmup == 0 {
            return Err(Error::Config("warmup must be positive".into()));
        }
        if !(self.base_lr > 0.0 && self.grad_clip > 0.0) {
            return Err(Error::Config("base_lr and grad_clip must be positive".into()));
        }
        let o = &self.optimizer;
        if !((0.0..1.0).contains(&o.beta1) && (0.0..1.0).contains(&o.beta2) && o.eps > 0.0 && o.weight_decay >= 0.0) {
            return Err(Error::Config("optimizer hyperparameters out of range".into()));
        }
        Ok(())
    }
}
