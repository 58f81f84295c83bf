use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::adaptors::PitchStats;
use crate::audio_text::Example;
use crate::config::Config;
use crate::error::{Error, Result};
use crate::model::{Batch, LossNorm, Model};
use crate::numerics::{Float, Tape, Tensor};
use crate::params::{Ctx, ParamStore};

use super::checkpoint::Checkpoint;
use super::optim::{clip_gradients, global_norm, noam_lr, Lamb};

pub const METRICS_HEADER: &str = "step,lr,loss,l_mel,l_aligner,l_durs,l_pitch";

/// Loss components summed over an accumulation group.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GroupLosses {
    pub total: f64,
    pub mel: f64,
    pub aligner: f64,
    pub durations: f64,
    pub pitch: f64,
}

/// Gradients of the group loss: every micro-batch is normalized by the
/// group totals and the per-batch gradients are summed. `rngs` supplies
/// one dropout stream per micro-batch; `None` runs without dropout.
/// Also returns the aligner durations of every example, batch by batch.
pub fn group_gradients<F: Float>(
    model: &Model,
    params: &ParamStore<F>,
    batches: &[Batch<F>],
    stats: &PitchStats,
    rngs: Option<Vec<ChaCha8Rng>>,
) -> Result<(Vec<Option<Tensor<F>>>, GroupLosses, Vec<Vec<Vec<usize>>>)> {
    let refs: Vec<&Batch<F>> = batches.iter().collect();
    let norm = LossNorm::of(&refs, model.cfg.n_mels);
    let mut sums: Vec<Option<Vec<f64>>> = vec![None; params.len()];
    let mut losses = GroupLosses::default();
    let mut durations = Vec::with_capacity(batches.len());
    let mut rngs = rngs.map(Vec::into_iter);
    for batch in batches {
        let tape = Tape::new();
        let ctx = match rngs.as_mut().and_then(Iterator::next) {
            Some(rng) => Ctx::train(&tape, params, rng),
            None => Ctx::eval(&tape, params),
        };
        let out = model.forward_train(&ctx, batch, stats)?;
        let l = model.total_loss(&tape, &out, batch, &norm)?;
        let total = l.total.item()?.as_f64();
        if !total.is_finite() {
            log::error!(
                "non-finite loss: mel {} aligner {} durations {} pitch {}",
                l.mel,
                l.aligner,
                l.durations,
                l.pitch
            );
            return Err(Error::NonFinite { op: "training loss" });
        }
        tape.backward(&l.total)?;
        for (slot, g) in sums.iter_mut().zip(ctx.param_grads()) {
            if let Some(g) = g {
                let acc = slot.get_or_insert_with(|| vec![0.0; g.numel()]);
                for (a, v) in acc.iter_mut().zip(g.data()) {
                    *a += v.as_f64();
                }
            }
        }
        losses.total += total;
        losses.mel += l.mel;
        losses.aligner += l.aligner;
        losses.durations += l.durations;
        losses.pitch += l.pitch;
        durations.push(out.durations);
    }
    let grads = sums
        .into_iter()
        .zip(params.iter())
        .map(|(s, (_, _, p))| s.map(|v| Tensor::from_f64(p.shape(), &v)).transpose())
        .collect::<Result<Vec<_>>>()?;
    Ok((grads, losses, durations))
}

/// What one optimizer step did.
#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    pub step: u64,
    pub lr: f64,
    pub losses: GroupLosses,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
    pub clip_scale: f64,
    /// Aligner durations, keyed by example index.
    pub durations: Vec<(usize, Vec<usize>)>,
}

impl StepReport {
    pub fn csv_row(&self) -> String {
        let l = &self.losses;
        format!(
            "{},{:e},{},{},{},{},{}",
            self.step, self.lr, l.total, l.mel, l.aligner, l.durations, l.pitch
        )
    }
}

/// Deterministic training loop over an in-memory dataset.
///
/// Micro-batch `k` takes positions `[k*bs, (k+1)*bs)` of an endless stream
/// made of per-epoch shuffles, so the schedule depends only on the seed
/// and the step counter.
pub struct Trainer {
    pub config: Config,
    pub model: Model,
    pub params: ParamStore<f32>,
    pub opt: Lamb<f32>,
    pub stats: PitchStats,
    pub step: u64,
    examples: Vec<Example>,
}

impl Trainer {
    pub fn new(config: Config, examples: Vec<Example>) -> Result<Self> {
        config.validate()?;
        if examples.is_empty() {
            return Err(Error::invalid("Trainer::new", "no training examples"));
        }
        let stats = PitchStats::from_contours(examples.iter().map(|e| &e.pitch));
        let (model, params) = Model::from_config::<f32>(&config.model, config.train.seed)?;
        let opt = Lamb::new(config.train.optimizer.clone(), &params);
        Ok(Trainer {
            config,
            model,
            params,
            opt,
            stats,
            step: 0,
            examples,
        })
    }

    /// Continues from a checkpoint with the same dataset.
    pub fn resume(ckpt: &Checkpoint, examples: Vec<Example>) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::invalid("Trainer::resume", "no training examples"));
        }
        let (model, params, opt) = ckpt.restore_training()?;
        Ok(Trainer {
            config: ckpt.config.clone(),
            model,
            params,
            opt,
            stats: ckpt.pitch_stats,
            step: ckpt.step,
            examples,
        })
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.train.seed);
        rng.set_stream(stream);
        rng
    }

    fn epoch_order(&self, epoch: u64) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.examples.len()).collect();
        order.shuffle(&mut self.rng(2 * epoch));
        order
    }

    /// Example indices of micro-batch `k`.
    pub fn micro_batch(&self, k: u64) -> Vec<usize> {
        let n = self.examples.len() as u64;
        let bs = self.config.train.batch_size as u64;
        let mut cached: Option<(u64, Vec<usize>)> = None;
        (k * bs..(k + 1) * bs)
            .map(|pos| {
                let epoch = pos / n;
                if cached.as_ref().is_none_or(|(e, _)| *e != epoch) {
                    cached = Some((epoch, self.epoch_order(epoch)));
                }
                cached.as_ref().expect("filled above").1[(pos % n) as usize]
            })
            .collect()
    }

    /// One optimizer step over `accum` micro-batches.
    pub fn train_step(&mut self) -> Result<StepReport> {
        let tc = &self.config.train;
        let accum = tc.accum as u64;
        let next = self.step + 1;
        let mut batches = Vec::with_capacity(tc.accum);
        let mut members = Vec::with_capacity(tc.accum);
        let mut rngs = Vec::with_capacity(tc.accum);
        for j in 0..accum {
            let k = self.step * accum + j;
            let idx = self.micro_batch(k);
            let exs: Vec<&Example> = idx.iter().map(|&i| &self.examples[i]).collect();
            batches.push(self.model.batch::<f32>(&exs)?);
            members.push(idx);
            rngs.push(self.rng(2 * k + 1));
        }
        let (mut grads, losses, durs) = group_gradients(&self.model, &self.params, &batches, &self.stats, Some(rngs))
            .map_err(|e| {
            if matches!(e, Error::NonFinite { .. }) {
                log::error!("training diverged at step {next}");
            }
            e
        })?;
        let grad_norm = global_norm(&grads);
        if !grad_norm.is_finite() {
            log::error!("non-finite gradient norm at step {next}");
            return Err(Error::NonFinite { op: "gradient" });
        }
        let clip_scale = clip_gradients(&mut grads, tc.grad_clip);
        let lr = noam_lr(next, tc.base_lr, tc.warmup)?;
        self.opt.step(&mut self.params, &grads, lr)?;
        self.step = next;
        let durations = members
            .into_iter()
            .zip(durs)
            .flat_map(|(idx, d)| idx.into_iter().zip(d))
            .collect();
        Ok(StepReport {
            step: next,
            lr,
            losses,
            grad_norm,
            clip_scale,
            durations,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::capture(self.step, &self.config, self.stats, &self.params, &self.opt)
    }

    /// Trains until `config.train.steps`, appending to `metrics.csv` in
    /// `out_dir` and writing `step_NNNNNN.mtck` checkpoints plus
    /// `last.mtck` at the end.
    pub fn run(&mut self, out_dir: &Path, mut on_step: impl FnMut(&StepReport)) -> Result<()> {
        std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
        let metrics = out_dir.join("metrics.csv");
        let fresh = self.step == 0 || !metrics.exists();
        let mut file = OpenOptions::new()
            .create(true)
            .append(!fresh)
            .write(true)
            .truncate(fresh)
            .open(&metrics)
            .map_err(|e| Error::io(&metrics, e))?;
        if fresh {
            writeln!(file, "{METRICS_HEADER}").map_err(|e| Error::io(&metrics, e))?;
        }
        while self.step < self.config.train.steps {
            let report = self.train_step()?;
            writeln!(file, "{}", report.csv_row()).map_err(|e| Error::io(&metrics, e))?;
            on_step(&report);
            let every = self.config.train.checkpoint_every;
            if every > 0 && self.step % every == 0 {
                let path = out_dir.join(format!("step_{:06}.mtck", self.step));
                self.checkpoint().save(&path)?;
            }
        }
        file.flush().map_err(|e| Error::io(&metrics, e))?;
        self.checkpoint().save(&out_dir.join("last.mtck"))
    }
}
