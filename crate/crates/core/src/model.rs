//! The full Mixer-TTS graph: symbol embedding, encoder, optional LM
//! conditioning, aligner, predictors, pitch embedding, length regulation,
//! decoder and mel projection, plus the composite training loss.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adaptors::{
    average_pitch, decode_durations, encode_duration, length_regulate_batch, PitchContour, PitchEmbedding, PitchStats,
    Predictor, PredictorConfig,
};
use crate::aligner::{forward_sum_loss, viterbi_durations, Aligner, AlignerConfig, AlignmentLattice};
use crate::audio_text::{Example, SymbolVocab};
use crate::error::{Error, Result};
use crate::lm_cond::{lm_tokenize, FrozenEmbeddingTable, LmAttention, LmConfig};
use crate::mixer::{build_stack, MixerBlockConfig, MixerStack, StackConfig};
use crate::numerics::{lit, Float, Tape, Tensor};
use crate::params::{Ctx, Init, ParamId, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub aligner: f64,
    pub mel: f64,
    pub durations: f64,
    pub pitch: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            aligner: 1.0,
            mel: 1.0,
            durations: 0.1,
            pitch: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub feature_dim: usize,
    pub encoder: StackConfig,
    pub decoder: StackConfig,
    pub expansion_factor: usize,
    pub dropout: f64,
    pub n_mels: usize,
    pub aligner: AlignerConfig,
    pub duration_predictor: PredictorConfig,
    pub pitch_predictor: PredictorConfig,
    pub extended: bool,
    pub lm: LmConfig,
    pub loss_weights: LossWeights,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::full_basic()
    }
}

impl ModelConfig {
    /// Full-size basic model: 384 channels, 6 + 9 blocks, 80 mel bins.
    pub fn full_basic() -> Self {
        ModelConfig {
            vocab_size: SymbolVocab::default().len(),
            feature_dim: 384,
            encoder: StackConfig::encoder(),
            decoder: StackConfig::decoder(),
            expansion_factor: 4,
            dropout: 0.15,
            n_mels: 80,
            aligner: AlignerConfig::default(),
            duration_predictor: PredictorConfig::default(),
            pitch_predictor: PredictorConfig::default(),
            extended: false,
            lm: LmConfig::default(),
            loss_weights: LossWeights::default(),
        }
    }

    /// [`ModelConfig::full_basic`] plus LM token conditioning.
    pub fn full_extended() -> Self {
        ModelConfig {
            extended: true,
            ..Self::full_basic()
        }
    }

    /// Reduced geometry: `feature_dim` everywhere, `enc + dec` blocks with
    /// the full-size kernel progression truncated.
    pub fn reduced(feature_dim: usize, enc_blocks: usize, dec_blocks: usize) -> Self {
        let stack = |n: usize, start: usize| StackConfig {
            n_blocks: n,
            kernel_start: start,
            kernel_end: start + 2 * n.saturating_sub(1),
            kernel_step: 2,
        };
        let pred = PredictorConfig {
            in_dim: feature_dim,
            hidden: feature_dim,
            ..PredictorConfig::default()
        };
        ModelConfig {
            feature_dim,
            encoder: stack(enc_blocks, 11),
            decoder: stack(dec_blocks, 15),
            aligner: AlignerConfig {
                dim: feature_dim,
                use_prior: false,
            },
            duration_predictor: pred.clone(),
            pitch_predictor: pred,
            ..Self::full_basic()
        }
    }

    /// Tiny model for tests: 32 channels, 2 + 2 blocks, 8 mel bins.
    pub fn toy() -> Self {
        let mut c = Self::reduced(32, 2, 2);
        c.encoder.kernel_start = 3;
        c.encoder.kernel_end = 5;
        c.decoder.kernel_start = 3;
        c.decoder.kernel_end = 5;
        c.n_mels = 8;
        c.aligner.dim = 16;
        c.duration_predictor.hidden = 16;
        c.pitch_predictor.hidden = 16;
        c.lm = LmConfig {
            table: None,
            lm_dim: 32,
            max_positions: 256,
        };
        c
    }

    pub fn block_template(&self) -> MixerBlockConfig {
        MixerBlockConfig {
            feature_dim: self.feature_dim,
            kernel_size: 1,
            expansion_factor: self.expansion_factor,
            dropout: self.dropout,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.vocab_size < 2 {
            return fail("vocab_size must be at least 2".into());
        }
        if self.n_mels == 0 {
            return fail("n_mels must be positive".into());
        }
        self.block_template().validate()?;
        self.encoder.validate()?;
        self.decoder.validate()?;
        for (name, p) in [("duration", &self.duration_predictor), ("pitch", &self.pitch_predictor)] {
            p.validate()?;
            if p.in_dim != self.feature_dim {
                return fail(format!(
                    "{name} predictor in_dim {} differs from feature_dim {}",
                    p.in_dim, self.feature_dim
                ));
            }
        }
        if self.aligner.dim == 0 {
            return fail("aligner dim must be positive".into());
        }
        if self.extended && (self.lm.lm_dim == 0 || self.lm.max_positions == 0) {
            return fail("lm_dim and max_positions must be positive".into());
        }
        for w in [
            self.loss_weights.aligner,
            self.loss_weights.mel,
            self.loss_weights.durations,
            self.loss_weights.pitch,
        ] {
            if !(w.is_finite() && w >= 0.0) {
                return fail(format!("loss weights must be finite and non-negative, got {w}"));
            }
        }
        Ok(())
    }
}

/// Trainable scalar counts per module.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ParamCounts {
    pub embedding: usize,
    pub encoder: usize,
    pub aligner: usize,
    pub duration_predictor: usize,
    pub pitch_predictor: usize,
    pub pitch_embedding: usize,
    pub decoder: usize,
    pub mel_projection: usize,
    pub lm_attention: usize,
}

impl ParamCounts {
    pub fn total(&self) -> usize {
        self.rows().iter().map(|(_, n)| n).sum()
    }

    pub fn rows(&self) -> [(&'static str, usize); 9] {
        [
            ("embedding", self.embedding),
            ("encoder", self.encoder),
            ("aligner", self.aligner),
            ("duration_predictor", self.duration_predictor),
            ("pitch_predictor", self.pitch_predictor),
            ("pitch_embedding", self.pitch_embedding),
            ("decoder", self.decoder),
            ("mel_projection", self.mel_projection),
            ("lm_attention", self.lm_attention),
        ]
    }
}

/// Trainable parameter counts in closed form; the frozen LM table is
/// excluded.
pub fn count_parameters(cfg: &ModelConfig) -> ParamCounts {
    let c = cfg.feature_dim;
    let template = cfg.block_template();
    ParamCounts {
        embedding: cfg.vocab_size * c,
        encoder: MixerStack::count(&cfg.encoder, &template),
        aligner: Aligner::count(&cfg.aligner, c, cfg.n_mels),
        duration_predictor: Predictor::count(&cfg.duration_predictor),
        pitch_predictor: Predictor::count(&cfg.pitch_predictor),
        pitch_embedding: PitchEmbedding::count(c),
        decoder: MixerStack::count(&cfg.decoder, &template),
        mel_projection: c * cfg.n_mels + cfg.n_mels,
        lm_attention: if cfg.extended {
            LmAttention::count(c, &cfg.lm)
        } else {
            0
        },
    }
}

/// The LM table named by the config, or the built-in demo table.
pub fn load_lm_table(cfg: &LmConfig) -> Result<FrozenEmbeddingTable> {
    match &cfg.table {
        Some(path) => FrozenEmbeddingTable::load(std::path::Path::new(path)),
        None => Ok(FrozenEmbeddingTable::demo()),
    }
}

/// Parameter handles of every submodule. Values live in a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Model {
    pub cfg: ModelConfig,
    pub embedding: ParamId,
    pub encoder: MixerStack,
    pub aligner: Aligner,
    pub duration_predictor: Predictor,
    pub pitch_predictor: Predictor,
    pub pitch_embedding: PitchEmbedding,
    pub decoder: MixerStack,
    pub mel_proj: (ParamId, ParamId),
    pub lm: Option<LmAttention>,
    pub lm_table: Option<Arc<FrozenEmbeddingTable>>,
}

/// Inputs of one training micro-batch, padded to the longest item.
#[derive(Clone, Debug)]
pub struct Batch<F: Float> {
    pub symbols: Vec<Vec<usize>>,
    pub mel: Tensor<F>,
    pub mel_lengths: Vec<usize>,
    pub pitch: Vec<PitchContour>,
    pub lm_embeddings: Option<Vec<Tensor<F>>>,
}

impl<F: Float> Batch<F> {
    pub fn text_lengths(&self) -> Vec<usize> {
        self.symbols.iter().map(Vec::len).collect()
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn max_text_len(&self) -> usize {
        self.symbols.iter().map(Vec::len).max().unwrap_or(0)
    }
}

/// Everything the forward pass produced.
#[derive(Clone, Debug)]
pub struct ForwardOutput<F: Float> {
    /// `[B, T, n_mels]`, zero past each item's length.
    pub mel: Tensor<F>,
    /// `[B, N]` predicted `ln(1 + d)`.
    pub log_durations: Tensor<F>,
    /// `[B, N]` predicted normalized pitch.
    pub pitch: Tensor<F>,
    /// One lattice per item (training only).
    pub lattices: Vec<AlignmentLattice<F>>,
    /// Durations that drove length regulation.
    pub durations: Vec<Vec<usize>>,
    /// Normalized symbol pitch that drove the pitch embedding.
    pub used_pitch: Vec<Vec<f64>>,
    pub mel_lengths: Vec<usize>,
}

/// Scalar loss components, already weighted into `total`.
#[derive(Clone, Debug)]
pub struct Losses<F: Float> {
    pub total: Tensor<F>,
    pub mel: f64,
    pub aligner: f64,
    pub durations: f64,
    pub pitch: f64,
}

/// Reduction denominators. Using the totals of a whole accumulation group
/// makes the summed micro-batch gradients equal those of one large batch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossNorm {
    pub mel_values: f64,
    pub frames: f64,
    pub tokens: f64,
}

impl LossNorm {
    pub fn of<F: Float>(batches: &[&Batch<F>], n_mels: usize) -> Self {
        let frames: usize = batches.iter().flat_map(|b| b.mel_lengths.iter()).sum();
        let tokens: usize = batches.iter().flat_map(|b| b.symbols.iter().map(Vec::len)).sum();
        LossNorm {
            mel_values: (frames * n_mels) as f64,
            frames: frames as f64,
            tokens: tokens as f64,
        }
    }
}

fn padded<F: Float>(rows: &[Vec<f64>], width: usize) -> Result<Tensor<F>> {
    let mut data = Vec::with_capacity(rows.len() * width);
    for r in rows {
        data.extend(r.iter().map(|&v| lit::<F>(v)));
        data.extend(std::iter::repeat_n(F::zero(), width - r.len()));
    }
    Tensor::new(&[rows.len(), width], data)
}

fn length_weights<F: Float>(lengths: &[usize], width: usize, inner: usize) -> Arc<Vec<F>> {
    let mut w = vec![F::zero(); lengths.len() * width * inner];
    for (b, &len) in lengths.iter().enumerate() {
        w[b * width * inner..(b * width + len) * inner].fill(F::one());
    }
    Arc::new(w)
}

impl Model {
    /// Builds the model and its initial parameters from `seed`. Parameters
    /// shared with the basic model are drawn first, so a basic and an
    /// extended model with the same seed agree on them.
    pub fn new<F: Float>(
        cfg: &ModelConfig,
        lm_table: Option<FrozenEmbeddingTable>,
        seed: u64,
    ) -> Result<(Model, ParamStore<F>)> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = Init { rng: &mut rng };
        let mut store = ParamStore::new();
        let c = cfg.feature_dim;
        let template = cfg.block_template();
        let embedding = store.add("embedding", init.embedding(&[cfg.vocab_size, c]))?;
        let encoder = build_stack("encoder", &cfg.encoder, &template, &mut store, &mut init)?;
        let aligner = Aligner::new(cfg.aligner.clone(), c, cfg.n_mels, &mut store, &mut init)?;
        let duration_predictor = Predictor::new(
            "duration_predictor",
            cfg.duration_predictor.clone(),
            &mut store,
            &mut init,
        )?;
        let pitch_predictor = Predictor::new("pitch_predictor", cfg.pitch_predictor.clone(), &mut store, &mut init)?;
        let pitch_embedding = PitchEmbedding::new(c, &mut store, &mut init)?;
        let decoder = build_stack("decoder", &cfg.decoder, &template, &mut store, &mut init)?;
        let mel_proj = (
            store.add("mel_proj.weight", init.fan_in(&[c, cfg.n_mels], c))?,
            store.add("mel_proj.bias", init.fan_in(&[cfg.n_mels], c))?,
        );
        let (lm, lm_table) = if cfg.extended {
            let table = lm_table.ok_or_else(|| Error::Config("extended model needs an LM embedding table".into()))?;
            if table.dim() != cfg.lm.lm_dim {
                return Err(Error::Config(format!(
                    "LM table has dimension {} but lm_dim is {}",
                    table.dim(),
                    cfg.lm.lm_dim
                )));
            }
            (
                Some(LmAttention::new(c, &cfg.lm, &mut store, &mut init)?),
                Some(Arc::new(table)),
            )
        } else {
            (None, None)
        };
        Ok((
            Model {
                cfg: cfg.clone(),
                embedding,
                encoder,
                aligner,
                duration_predictor,
                pitch_predictor,
                pitch_embedding,
                decoder,
                mel_proj,
                lm,
                lm_table,
            },
            store,
        ))
    }

    /// Builds the model, loading the configured LM table when extended.
    pub fn from_config<F: Float>(cfg: &ModelConfig, seed: u64) -> Result<(Model, ParamStore<F>)> {
        let table = if cfg.extended {
            Some(load_lm_table(&cfg.lm)?)
        } else {
            None
        };
        Self::new(cfg, table, seed)
    }

    /// Frozen LM embeddings for `text` (extended model only).
    pub fn lm_embedding<F: Float>(&self, text: &str) -> Result<Option<Tensor<F>>> {
        match &self.lm_table {
            Some(table) => Ok(Some(table.embed(&lm_tokenize(text, table)?)?)),
            None => Ok(None),
        }
    }

    /// Pads examples into a batch.
    pub fn batch<F: Float>(&self, examples: &[&Example]) -> Result<Batch<F>> {
        if examples.is_empty() {
            return Err(Error::invalid("batch", "no examples"));
        }
        let n_mels = self.cfg.n_mels;
        for ex in examples {
            if ex.mel.n_mels != n_mels {
                return Err(Error::Format(format!(
                    "utterance {} has {} mel bins, model expects {n_mels}",
                    ex.id, ex.mel.n_mels
                )));
            }
            if let Some(&bad) = ex.symbols.iter().find(|&&s| s >= self.cfg.vocab_size) {
                return Err(Error::Format(format!(
                    "utterance {} has symbol id {bad} outside vocabulary of {}",
                    ex.id, self.cfg.vocab_size
                )));
            }
            if ex.symbols.len() > ex.mel.frames {
                return Err(Error::AlignmentInfeasible {
                    tokens: ex.symbols.len(),
                    frames: ex.mel.frames,
                });
            }
        }
        let t_max = examples.iter().map(|e| e.mel.frames).max().unwrap_or(0);
        let mut mel = vec![F::zero(); examples.len() * t_max * n_mels];
        for (b, ex) in examples.iter().enumerate() {
            let dst = &mut mel[b * t_max * n_mels..];
            for (d, &s) in dst.iter_mut().zip(&ex.mel.data) {
                *d = lit(s as f64);
            }
        }
        let lm_embeddings = if self.lm_table.is_some() {
            Some(
                examples
                    .iter()
                    .map(|e| self.lm_embedding(&e.transcript).map(|t| t.expect("table present")))
                    .collect::<Result<Vec<_>>>()?,
            )
        } else {
            None
        };
        Ok(Batch {
            symbols: examples.iter().map(|e| e.symbols.clone()).collect(),
            mel: Tensor::new(&[examples.len(), t_max, n_mels], mel)?,
            mel_lengths: examples.iter().map(|e| e.mel.frames).collect(),
            pitch: examples.iter().map(|e| e.pitch.clone()).collect(),
            lm_embeddings,
        })
    }

    fn embed<F: Float>(&self, ctx: &Ctx<'_, F>, symbols: &[Vec<usize>]) -> Result<Tensor<F>> {
        let n_max = symbols.iter().map(Vec::len).max().unwrap_or(0);
        if n_max == 0 {
            return Err(Error::invalid("embed", "empty symbol sequence"));
        }
        let mut idx = Vec::with_capacity(symbols.len() * n_max);
        for s in symbols {
            if let Some(&bad) = s.iter().find(|&&i| i >= self.cfg.vocab_size) {
                return Err(Error::invalid("embed", format!("symbol id {bad} out of range")));
            }
            idx.extend(s.iter().map(|&i| Some(i)));
            idx.extend(std::iter::repeat_n(None, n_max - s.len()));
        }
        let x = ctx.tape.gather_rows(&ctx.p(self.embedding), &idx)?;
        x.reshape(&[symbols.len(), n_max, self.cfg.feature_dim])
    }

    /// Symbol embedding, encoder and (extended) LM conditioning.
    pub fn encode<F: Float>(
        &self,
        ctx: &Ctx<'_, F>,
        symbols: &[Vec<usize>],
        lm_embeddings: Option<&[Tensor<F>]>,
    ) -> Result<Tensor<F>> {
        let lengths: Vec<usize> = symbols.iter().map(Vec::len).collect();
        let x = self.embed(ctx, symbols)?;
        let enc = self.encoder.run(ctx, &x, &lengths)?;
        match (&self.lm, lm_embeddings) {
            (Some(lm), Some(embs)) => lm.forward(ctx, &enc, &lengths, embs),
            (Some(_), None) => Err(Error::invalid("encode", "extended model needs LM embeddings")),
            (None, _) => Ok(enc),
        }
    }

    fn decode<F: Float>(&self, ctx: &Ctx<'_, F>, frames: &Tensor<F>, lengths: &[usize]) -> Result<Tensor<F>> {
        let h = self.decoder.run(ctx, frames, lengths)?;
        let y = ctx
            .tape
            .linear(&h, &ctx.p(self.mel_proj.0), Some(&ctx.p(self.mel_proj.1)))?;
        ctx.tape.apply_sequence_mask(&y, lengths)
    }

    fn predict<F: Float>(
        &self,
        ctx: &Ctx<'_, F>,
        enc: &Tensor<F>,
        lengths: &[usize],
    ) -> Result<(Tensor<F>, Tensor<F>)> {
        let detached = enc.detach();
        Ok((
            self.duration_predictor.forward(ctx, &detached, lengths)?,
            self.pitch_predictor.forward(ctx, &detached, lengths)?,
        ))
    }

    /// Training graph: aligner durations and ground-truth symbol pitch drive
    /// the decoder; predictors see the detached encoder output.
    pub fn forward_train<F: Float>(
        &self,
        ctx: &Ctx<'_, F>,
        batch: &Batch<F>,
        stats: &PitchStats,
    ) -> Result<ForwardOutput<F>> {
        let text_lengths = batch.text_lengths();
        let enc = self.encode(ctx, &batch.symbols, batch.lm_embeddings.as_deref())?;
        let lattices = self
            .aligner
            .lattices(ctx, &enc, &text_lengths, &batch.mel, &batch.mel_lengths)?;
        let durations = lattices
            .iter()
            .map(|l| viterbi_durations(l).map(|(_, d)| d))
            .collect::<Result<Vec<_>>>()?;
        let used_pitch = batch
            .pitch
            .iter()
            .zip(&durations)
            .map(|(c, d)| average_pitch(c, d).map(|hz| hz.into_iter().map(|v| stats.normalize(v)).collect::<Vec<_>>()))
            .collect::<Result<Vec<_>>>()?;
        let n_max = enc.dim(1);
        let pitch_in = padded::<F>(&used_pitch, n_max)?;
        let pe = self.pitch_embedding.forward(ctx, &pitch_in, &text_lengths)?;
        let h = ctx.tape.add(&enc, &pe)?;
        let (frames, mel_lengths) = length_regulate_batch(ctx.tape, &h, &durations, batch.mel.dim(1))?;
        let mel = self.decode(ctx, &frames, &mel_lengths)?;
        let (log_durations, pitch) = self.predict(ctx, &enc, &text_lengths)?;
        Ok(ForwardOutput {
            mel,
            log_durations,
            pitch,
            lattices,
            durations,
            used_pitch,
            mel_lengths,
        })
    }

    /// Inference graph for one utterance: predicted durations (scaled by
    /// `pace`) and predicted pitch replace the aligner and ground truth.
    pub fn forward_infer<F: Float>(
        &self,
        ctx: &Ctx<'_, F>,
        symbols: &[usize],
        lm_embedding: Option<&Tensor<F>>,
        pace: f64,
    ) -> Result<ForwardOutput<F>> {
        let symbols = vec![symbols.to_vec()];
        let lengths = [symbols[0].len()];
        let lm = lm_embedding.map(|t| vec![t.clone()]);
        let enc = self.encode(ctx, &symbols, lm.as_deref())?;
        let (log_durations, pitch) = self.predict(ctx, &enc, &lengths)?;
        let logd: Vec<f64> = log_durations.data().iter().map(|v| v.as_f64()).collect();
        let durations = vec![decode_durations(&logd, pace)?];
        let pe = self.pitch_embedding.forward(ctx, &pitch, &lengths)?;
        let h = ctx.tape.add(&enc, &pe)?;
        let (frames, mel_lengths) = length_regulate_batch(ctx.tape, &h, &durations, 0)?;
        let mel = self.decode(ctx, &frames, &mel_lengths)?;
        let used_pitch = vec![pitch.data().iter().map(|v| v.as_f64()).collect()];
        Ok(ForwardOutput {
            mel,
            log_durations,
            pitch,
            lattices: Vec::new(),
            durations,
            used_pitch,
            mel_lengths,
        })
    }

    /// `w_al * L_aligner + w_mel * L_mel + w_d * L_durs + w_p * L_pitch`,
    /// each a sum over valid entries divided by the matching count in
    /// `norm`.
    pub fn total_loss<F: Float>(
        &self,
        tape: &Tape<F>,
        out: &ForwardOutput<F>,
        batch: &Batch<F>,
        norm: &LossNorm,
    ) -> Result<Losses<F>> {
        let w = &self.cfg.loss_weights;
        if out.mel.shape() != batch.mel.shape() {
            return Err(Error::shape("total_loss", out.mel.shape(), batch.mel.shape()));
        }
        let n_mels = self.cfg.n_mels;
        let t_max = batch.mel.dim(1);
        let mel_w = length_weights::<F>(&batch.mel_lengths, t_max, n_mels);
        let l_mel = tape.masked_sq_error(&out.mel, &batch.mel, mel_w, norm.mel_values)?;

        let mut l_al: Option<Tensor<F>> = None;
        for l in &out.lattices {
            let v = forward_sum_loss(tape, l)?;
            l_al = Some(match l_al {
                Some(acc) => tape.add(&acc, &v)?,
                None => v,
            });
        }
        let l_al = l_al.ok_or_else(|| Error::invalid("total_loss", "no alignment lattices (inference output?)"))?;
        let l_al = tape.scale(&l_al, lit(1.0 / norm.frames))?;

        let lengths = batch.text_lengths();
        let n_max = out.log_durations.dim(1);
        let tok_w = length_weights::<F>(&lengths, n_max, 1);
        let dur_target: Vec<Vec<f64>> = out
            .durations
            .iter()
            .map(|d| d.iter().map(|&x| encode_duration(x)).collect())
            .collect();
        let dur_target = padded::<F>(&dur_target, n_max)?;
        let l_dur = tape.masked_sq_error(&out.log_durations, &dur_target, Arc::clone(&tok_w), norm.tokens)?;
        let pitch_target = padded::<F>(&out.used_pitch, n_max)?;
        let l_pitch = tape.masked_sq_error(&out.pitch, &pitch_target, tok_w, norm.tokens)?;

        let parts = [
            (&l_al, w.aligner),
            (&l_mel, w.mel),
            (&l_dur, w.durations),
            (&l_pitch, w.pitch),
        ];
        let mut total: Option<Tensor<F>> = None;
        for (t, wt) in parts {
            let term = tape.scale(t, lit(wt))?;
            total = Some(match total {
                Some(acc) => tape.add(&acc, &term)?,
                None => term,
            });
        }
        let value = |t: &Tensor<F>| t.item().map(|v| v.as_f64());
        Ok(Losses {
            total: total.expect("four terms"),
            mel: value(&l_mel)?,
            aligner: value(&l_al)?,
            durations: value(&l_dur)?,
            pitch: value(&l_pitch)?,
        })
    }

    /// Zeroes the LM attention output projection, reducing the extended
    /// model to the basic one.
    pub fn zero_lm_output<F: Float>(&self, store: &mut ParamStore<F>) {
        if let Some(lm) = &self.lm {
            lm.zero_output(store);
        }
    }
}
