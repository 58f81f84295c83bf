//! Mixer-TTS blocks: a time-mix sub-block (depthwise convolutions along the
//! sequence) followed by a channel-mix sub-block (two position-wise linear
//! layers with an expansion factor), each with pre-LayerNorm, sequence
//! masking and a residual connection.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Float, Tensor};
use crate::params::{Ctx, Init, ParamId, ParamStore};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixerBlockConfig {
    pub feature_dim: usize,
    pub kernel_size: usize,
    pub expansion_factor: usize,
    pub dropout: f64,
}

impl MixerBlockConfig {
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 {
            return Err(Error::Config("feature_dim must be positive".into()));
        }
        if self.kernel_size % 2 == 0 {
            return Err(Error::Config(format!(
                "time-mix kernel size must be odd, got {}",
                self.kernel_size
            )));
        }
        if self.expansion_factor == 0 {
            return Err(Error::Config("expansion_factor must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }

    pub fn hidden_dim(&self) -> usize {
        self.feature_dim * self.expansion_factor
    }
}

/// Geometry of a stack: block `i` uses kernel `kernel_start + i * kernel_step`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StackConfig {
    pub n_blocks: usize,
    pub kernel_start: usize,
    pub kernel_end: usize,
    pub kernel_step: usize,
}

impl StackConfig {
    pub fn encoder() -> Self {
        StackConfig {
            n_blocks: 6,
            kernel_start: 11,
            kernel_end: 21,
            kernel_step: 2,
        }
    }

    pub fn decoder() -> Self {
        StackConfig {
            n_blocks: 9,
            kernel_start: 15,
            kernel_end: 31,
            kernel_step: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_blocks == 0 {
            return Ok(());
        }
        if self.kernel_start + (self.n_blocks - 1) * self.kernel_step != self.kernel_end {
            return Err(Error::Config(format!(
                "stack kernels {} + ({} - 1) * {} do not end at {}",
                self.kernel_start, self.n_blocks, self.kernel_step, self.kernel_end
            )));
        }
        if let Some(k) = self.kernels().into_iter().find(|k| k % 2 == 0) {
            return Err(Error::Config(format!("stack kernel {k} is even")));
        }
        Ok(())
    }

    pub fn kernels(&self) -> Vec<usize> {
        (0..self.n_blocks)
            .map(|i| self.kernel_start + i * self.kernel_step)
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct TimeMixParams {
    pub norm_gamma: ParamId,
    pub norm_beta: ParamId,
    pub conv1_kernel: ParamId,
    pub conv1_bias: ParamId,
    pub conv2_kernel: ParamId,
    pub conv2_bias: ParamId,
}

#[derive(Clone, Debug)]
pub struct ChannelMixParams {
    pub norm_gamma: ParamId,
    pub norm_beta: ParamId,
    pub fc1_weight: ParamId,
    pub fc1_bias: ParamId,
    pub fc2_weight: ParamId,
    pub fc2_bias: ParamId,
}

#[derive(Clone, Debug)]
pub struct MixerBlock {
    pub cfg: MixerBlockConfig,
    pub time: TimeMixParams,
    pub channel: ChannelMixParams,
}

fn check_channels<F: Float>(x: &Tensor<F>, cfg: &MixerBlockConfig) -> Result<()> {
    if x.rank() != 3 || x.last_dim() != cfg.feature_dim {
        return Err(Error::shape("mixer", x.shape(), &[cfg.feature_dim]));
    }
    Ok(())
}

impl MixerBlock {
    pub(crate) fn new<F: Float, R: Rng>(
        prefix: &str,
        cfg: MixerBlockConfig,
        store: &mut ParamStore<F>,
        init: &mut Init<'_, R>,
    ) -> Result<Self> {
        cfg.validate()?;
        let (c, k, h) = (cfg.feature_dim, cfg.kernel_size, cfg.hidden_dim());
        let time = TimeMixParams {
            norm_gamma: store.add(format!("{prefix}.time.norm.gamma"), Tensor::full(&[c], F::one()))?,
            norm_beta: store.add(format!("{prefix}.time.norm.beta"), Tensor::zeros(&[c]))?,
            conv1_kernel: store.add(format!("{prefix}.time.conv1.kernel"), init.fan_in(&[c, k], k))?,
            conv1_bias: store.add(format!("{prefix}.time.conv1.bias"), init.fan_in(&[c], k))?,
            conv2_kernel: store.add(format!("{prefix}.time.conv2.kernel"), init.fan_in(&[c, k], k))?,
            conv2_bias: store.add(format!("{prefix}.time.conv2.bias"), init.fan_in(&[c], k))?,
        };
        let channel = ChannelMixParams {
            norm_gamma: store.add(format!("{prefix}.channel.norm.gamma"), Tensor::full(&[c], F::one()))?,
            norm_beta: store.add(format!("{prefix}.channel.norm.beta"), Tensor::zeros(&[c]))?,
            fc1_weight: store.add(format!("{prefix}.channel.fc1.weight"), init.fan_in(&[c, h], c))?,
            fc1_bias: store.add(format!("{prefix}.channel.fc1.bias"), init.fan_in(&[h], c))?,
            fc2_weight: store.add(format!("{prefix}.channel.fc2.weight"), init.fan_in(&[h, c], h))?,
            fc2_bias: store.add(format!("{prefix}.channel.fc2.bias"), init.fan_in(&[c], h))?,
        };
        Ok(MixerBlock { cfg, time, channel })
    }

    /// `x + Dropout(Mask(DW2(GELU(Mask(DW1(Mask(LN(x))))))))`, re-masked.
    pub fn time_mix<F: Float>(&self, ctx: &Ctx<'_, F>, x: &Tensor<F>, lengths: &[usize]) -> Result<Tensor<F>> {
        check_channels(x, &self.cfg)?;
        let tape = ctx.tape;
        let p = &self.time;
        let h = tape.layer_norm(x, &ctx.p(p.norm_gamma), &ctx.p(p.norm_beta), LAYER_NORM_EPS)?;
        // padded rows must be zero before the convolution reads them
        let h = tape.apply_sequence_mask(&h, lengths)?;
        let h = tape.depthwise_conv1d(&h, &ctx.p(p.conv1_kernel), &ctx.p(p.conv1_bias))?;
        let h = tape.apply_sequence_mask(&h, lengths)?;
        let h = tape.gelu(&h)?;
        let h = tape.depthwise_conv1d(&h, &ctx.p(p.conv2_kernel), &ctx.p(p.conv2_bias))?;
        let h = tape.apply_sequence_mask(&h, lengths)?;
        let h = ctx.dropout(&h, self.cfg.dropout)?;
        let y = tape.add(x, &h)?;
        tape.apply_sequence_mask(&y, lengths)
    }

    /// `x + Dropout(Mask(FC2(GELU(Mask(FC1(LN(x)))))))`, re-masked.
    pub fn channel_mix<F: Float>(&self, ctx: &Ctx<'_, F>, x: &Tensor<F>, lengths: &[usize]) -> Result<Tensor<F>> {
        check_channels(x, &self.cfg)?;
        let tape = ctx.tape;
        let p = &self.channel;
        let h = tape.layer_norm(x, &ctx.p(p.norm_gamma), &ctx.p(p.norm_beta), LAYER_NORM_EPS)?;
        let h = tape.linear(&h, &ctx.p(p.fc1_weight), Some(&ctx.p(p.fc1_bias)))?;
        let h = tape.apply_sequence_mask(&h, lengths)?;
        let h = tape.gelu(&h)?;
        let h = tape.linear(&h, &ctx.p(p.fc2_weight), Some(&ctx.p(p.fc2_bias)))?;
        let h = tape.apply_sequence_mask(&h, lengths)?;
        let h = ctx.dropout(&h, self.cfg.dropout)?;
        let y = tape.add(x, &h)?;
        tape.apply_sequence_mask(&y, lengths)
    }

    /// Time-mix, then channel-mix.
    pub fn forward<F: Float>(&self, ctx: &Ctx<'_, F>, x: &Tensor<F>, lengths: &[usize]) -> Result<Tensor<F>> {
        let y = self.time_mix(ctx, x, lengths)?;
        self.channel_mix(ctx, &y, lengths)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let t = &self.time;
        let c = &self.channel;
        vec![
            t.norm_gamma,
            t.norm_beta,
            t.conv1_kernel,
            t.conv1_bias,
            t.conv2_kernel,
            t.conv2_bias,
            c.norm_gamma,
            c.norm_beta,
            c.fc1_weight,
            c.fc1_bias,
            c.fc2_weight,
            c.fc2_bias,
        ]
    }

    /// Zeroes both residual branches, turning the block into the identity on
    /// masked inputs.
    pub fn zero_branches<F: Float>(&self, store: &mut ParamStore<F>) {
        let t = &self.time;
        let c = &self.channel;
        for id in [
            t.conv1_kernel,
            t.conv1_bias,
            t.conv2_kernel,
            t.conv2_bias,
            c.fc1_weight,
            c.fc1_bias,
            c.fc2_weight,
            c.fc2_bias,
        ] {
            store.zero(id);
        }
    }

    /// Closed-form scalar count of one block.
    pub fn count(cfg: &MixerBlockConfig) -> usize {
        let (c, k, h) = (cfg.feature_dim, cfg.kernel_size, cfg.hidden_dim());
        let time = 2 * c + 2 * (c * k + c);
        let channel = 2 * c + (c * h + h) + (h * c + c);
        time + channel
    }
}

/// Ordered blocks of an encoder or decoder.
#[derive(Clone, Debug)]
pub struct MixerStack {
    pub blocks: Vec<MixerBlock>,
}

/// Builds the blocks of a stack; every block shares `template` except for
/// its kernel size.
pub(crate) fn build_stack<F: Float, R: Rng>(
    prefix: &str,
    stack: &StackConfig,
    template: &MixerBlockConfig,
    store: &mut ParamStore<F>,
    init: &mut Init<'_, R>,
) -> Result<MixerStack> {
    stack.validate()?;
    let blocks = stack
        .kernels()
        .into_iter()
        .enumerate()
        .map(|(i, kernel_size)| {
            let cfg = MixerBlockConfig {
                kernel_size,
                ..template.clone()
            };
            MixerBlock::new(&format!("{prefix}.{i}"), cfg, store, init)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MixerStack { blocks })
}

impl MixerStack {
    pub fn run<F: Float>(&self, ctx: &Ctx<'_, F>, x: &Tensor<F>, lengths: &[usize]) -> Result<Tensor<F>> {
        let mut h = x.clone();
        for block in &self.blocks {
            h = block.forward(ctx, &h, lengths)?;
        }
        Ok(h)
    }

    pub fn kernels(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.cfg.kernel_size).collect()
    }

    pub fn count(stack: &StackConfig, template: &MixerBlockConfig) -> usize {
        stack
            .kernels()
            .into_iter()
            .map(|kernel_size| {
                MixerBlock::count(&MixerBlockConfig {
                    kernel_size,
                    ..template.clone()
                })
            })
            .sum()
    }
}
