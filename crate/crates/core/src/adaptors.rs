//! Duration and pitch predictors, the pitch embedding, symbol-level pitch
//! averaging and the length regulator.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixer::LAYER_NORM_EPS;
use crate::numerics::{Float, Tape, Tensor};
use crate::params::{Ctx, Init, ParamId, ParamStore};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredictorConfig {
    pub in_dim: usize,
    pub hidden: usize,
    pub kernel: usize,
    pub n_layers: usize,
    pub dropout: f64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        PredictorConfig {
            in_dim: 384,
            hidden: 256,
            kernel: 3,
            n_layers: 2,
            dropout: 0.1,
        }
    }
}

impl PredictorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_dim == 0 || self.hidden == 0 || self.n_layers == 0 {
            return Err(Error::Config("predictor dims and layer count must be positive".into()));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::Config(format!(
                "predictor kernel must be odd, got {}",
                self.kernel
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct PredictorLayer {
    conv_w: ParamId,
    conv_b: ParamId,
    gamma: ParamId,
    beta: ParamId,
}

/// `n_layers x [conv -> ReLU -> LayerNorm -> dropout]`, then a linear map to
/// one scalar per token.
#[derive(Clone, Debug)]
pub struct Predictor {
    pub cfg: PredictorConfig,
    layers: Vec<PredictorLayer>,
    pub out_w: ParamId,
    pub out_b: ParamId,
}

impl Predictor {
    pub(crate) fn new<F: Float, R: Rng>(
        prefix: &str,
        cfg: PredictorConfig,
        store: &mut ParamStore<F>,
        init: &mut Init<'_, R>,
    ) -> Result<Self> {
        cfg.validate()?;
        let mut layers = Vec::with_capacity(cfg.n_layers);
        let mut cin = cfg.in_dim;
        for i in 0..cfg.n_layers {
            let p = format!("{prefix}.layers.{i}");
            let fan = cin * cfg.kernel;
            layers.push(PredictorLayer {
                conv_w: store.add(
                    format!("{p}.conv.weight"),
                    init.fan_in(&[cfg.kernel, cin, cfg.hidden], fan),
                )?,
                conv_b: store.add(format!("{p}.conv.bias"), init.fan_in(&[cfg.hidden], fan))?,
                gamma: store.add(format!("{p}.norm.gamma"), Tensor::full(&[cfg.hidden], F::one()))?,
                beta: store.add(format!("{p}.norm.beta"), Tensor::zeros(&[cfg.hidden]))?,
            });
            cin = cfg.hidden;
        }
        Ok(Predictor {
            out_w: store.add(
                format!("{prefix}.out.weight"),
                init.fan_in(&[cfg.hidden, 1], cfg.hidden),
            )?,
            out_b: store.add(format!("{prefix}.out.bias"), init.fan_in(&[1], cfg.hidden))?,
            layers,
            cfg,
        })
    }

    pub fn count(cfg: &PredictorConfig) -> usize {
        let mut n = 0;
        let mut cin = cfg.in_dim;
        for _ in 0..cfg.n_layers {
            n += cfg.kernel * cin * cfg.hidden + 3 * cfg.hidden;
            cin = cfg.hidden;
        }
        n + cfg.hidden + 1
    }

    /// `[B, N, C]` features to `[B, N]` predictions, zero at padded positions.
    pub fn forward<F: Float>(&self, ctx: &Ctx<'_, F>, x: &Tensor<F>, lengths: &[usize]) -> Result<Tensor<F>> {
        let tape = ctx.tape;
        let mut h = x.clone();
        for l in &self.layers {
            h = tape.apply_sequence_mask(&h, lengths)?;
            h = tape.conv1d(&h, &ctx.p(l.conv_w), Some(&ctx.p(l.conv_b)))?;
            h = tape.relu(&h)?;
            h = tape.layer_norm(&h, &ctx.p(l.gamma), &ctx.p(l.beta), LAYER_NORM_EPS)?;
            h = ctx.dropout(&h, self.cfg.dropout)?;
        }
        let y = tape.linear(&h, &ctx.p(self.out_w), Some(&ctx.p(self.out_b)))?;
        let y = tape.apply_sequence_mask(&y, lengths)?;
        y.reshape(&x.shape()[..x.rank() - 1])
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids: Vec<ParamId> = self
            .layers
            .iter()
            .flat_map(|l| [l.conv_w, l.conv_b, l.gamma, l.beta])
            .collect();
        ids.extend([self.out_w, self.out_b]);
        ids
    }

    pub fn zero_output<F: Float>(&self, store: &mut ParamStore<F>) {
        store.zero(self.out_w);
        store.zero(self.out_b);
    }
}

/// Lifts one scalar pitch per token to `C` channels with a width-3 conv.
#[derive(Clone, Debug)]
pub struct PitchEmbedding {
    pub weight: ParamId,
    pub bias: ParamId,
    pub dim: usize,
}

pub const PITCH_EMBED_KERNEL: usize = 3;

impl PitchEmbedding {
    pub(crate) fn new<F: Float, R: Rng>(dim: usize, store: &mut ParamStore<F>, init: &mut Init<'_, R>) -> Result<Self> {
        let k = PITCH_EMBED_KERNEL;
        Ok(PitchEmbedding {
            weight: store.add("pitch_embed.weight", init.fan_in(&[k, 1, dim], k))?,
            bias: store.add("pitch_embed.bias", init.fan_in(&[dim], k))?,
            dim,
        })
    }

    pub fn count(dim: usize) -> usize {
        PITCH_EMBED_KERNEL * dim + dim
    }

    /// `[B, N]` pitch to `[B, N, C]`, zero at padded positions.
    pub fn forward<F: Float>(&self, ctx: &Ctx<'_, F>, pitch: &Tensor<F>, lengths: &[usize]) -> Result<Tensor<F>> {
        let mut shape = pitch.shape().to_vec();
        shape.push(1);
        let x = pitch.reshape(&shape)?;
        let y = ctx.tape.conv1d(&x, &ctx.p(self.weight), Some(&ctx.p(self.bias)))?;
        ctx.tape.apply_sequence_mask(&y, lengths)
    }
}

/// Per-frame fundamental frequency in Hz; 0 marks unvoiced frames.
#[derive(Clone, Debug, PartialEq)]
pub struct PitchContour {
    pub frame_f0: Vec<f64>,
}

impl PitchContour {
    pub fn new(frame_f0: Vec<f64>) -> Result<Self> {
        if let Some(v) = frame_f0.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::invalid("PitchContour", format!("invalid frequency {v}")));
        }
        Ok(PitchContour { frame_f0 })
    }

    pub fn len(&self) -> usize {
        self.frame_f0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frame_f0.is_empty()
    }
}

/// Dataset pitch statistics over voiced frames, used for z-scoring.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PitchStats {
    pub mean: f64,
    pub std: f64,
}

impl Default for PitchStats {
    fn default() -> Self {
        PitchStats { mean: 0.0, std: 1.0 }
    }
}

impl PitchStats {
    pub fn from_contours<'a>(contours: impl IntoIterator<Item = &'a PitchContour>) -> Self {
        let voiced: Vec<f64> = contours
            .into_iter()
            .flat_map(|c| c.frame_f0.iter().copied())
            .filter(|&v| v > 0.0)
            .collect();
        if voiced.is_empty() {
            return PitchStats::default();
        }
        let n = voiced.len() as f64;
        let mean = voiced.iter().sum::<f64>() / n;
        let var = voiced.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let std = if var > 0.0 { var.sqrt() } else { 1.0 };
        PitchStats { mean, std }
    }

    /// Hz to z-score; unvoiced (0) stays 0.
    pub fn normalize(&self, hz: f64) -> f64 {
        if hz > 0.0 {
            (hz - self.mean) / self.std
        } else {
            0.0
        }
    }

    pub fn denormalize(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

/// Mean of the voiced frames inside each token's span; 0 for fully
/// unvoiced spans.
pub fn average_pitch(contour: &PitchContour, durations: &[usize]) -> Result<Vec<f64>> {
    let total: usize = durations.iter().sum();
    if total != contour.len() {
        return Err(Error::invalid(
            "average_pitch",
            format!("durations sum to {total} but the contour has {} frames", contour.len()),
        ));
    }
    let mut start = 0;
    Ok(durations
        .iter()
        .map(|&d| {
            let span = &contour.frame_f0[start..start + d];
            start += d;
            let (sum, count) = span
                .iter()
                .filter(|&&v| v > 0.0)
                .fold((0.0, 0usize), |(s, c), &v| (s + v, c + 1));
            if count == 0 {
                0.0
            } else {
                sum / count as f64
            }
        })
        .collect())
}

/// Training target for a duration: `ln(1 + d)`.
pub fn encode_duration(d: usize) -> f64 {
    (d as f64).ln_1p()
}

/// Inverse of [`encode_duration`] with rounding and clamping at 0.
pub fn decode_duration(p: f64) -> usize {
    let d = p.exp_m1().round();
    if d.is_nan() || d <= 0.0 {
        0
    } else {
        d as usize
    }
}

/// Decodes log-durations, scales by `pace` and re-rounds. If every token
/// decodes to zero the token with the largest prediction gets one frame.
pub fn decode_durations(log_durations: &[f64], pace: f64) -> Result<Vec<usize>> {
    if !(pace.is_finite() && pace > 0.0) {
        return Err(Error::invalid(
            "decode_durations",
            format!("pace must be positive, got {pace}"),
        ));
    }
    if log_durations.is_empty() {
        return Err(Error::invalid("decode_durations", "no tokens"));
    }
    let mut d: Vec<usize> = log_durations
        .iter()
        .map(|&p| (decode_duration(p) as f64 * pace).round() as usize)
        .collect();
    if d.iter().all(|&x| x == 0) {
        let best = (0..log_durations.len())
            .max_by(|&a, &b| log_durations[a].total_cmp(&log_durations[b]))
            .unwrap_or(0);
        d[best] = 1;
    }
    Ok(d)
}

fn check_durations(op: &'static str, durations: &[usize], tokens: usize) -> Result<usize> {
    if durations.len() > tokens {
        return Err(Error::invalid(
            op,
            format!("{} durations for {tokens} tokens", durations.len()),
        ));
    }
    let total: usize = durations.iter().sum();
    if total == 0 {
        return Err(Error::invalid(op, "all durations are zero"));
    }
    Ok(total)
}

/// Repeats row `n` of `[N, C]` features `durations[n]` times.
pub fn length_regulate<F: Float>(tape: &Tape<F>, enc: &Tensor<F>, durations: &[usize]) -> Result<Tensor<F>> {
    if enc.rank() != 2 || durations.len() != enc.dim(0) {
        return Err(Error::shape(
            "length_regulate",
            enc.shape(),
            &[durations.len(), enc.last_dim()],
        ));
    }
    check_durations("length_regulate", durations, enc.dim(0))?;
    let idx: Vec<Option<usize>> = durations
        .iter()
        .enumerate()
        .flat_map(|(n, &d)| std::iter::repeat_n(Some(n), d))
        .collect();
    tape.gather_rows(enc, &idx)
}

/// Batched [`length_regulate`] over `[B, N, C]`, padding each item to the
/// longest output (or `min_frames`, if larger). Returns the `[B, T, C]`
/// tensor and per-item frame counts.
pub fn length_regulate_batch<F: Float>(
    tape: &Tape<F>,
    enc: &Tensor<F>,
    durations: &[Vec<usize>],
    min_frames: usize,
) -> Result<(Tensor<F>, Vec<usize>)> {
    if enc.rank() != 3 || durations.len() != enc.dim(0) {
        return Err(Error::shape(
            "length_regulate_batch",
            enc.shape(),
            &[durations.len(), 0, 0],
        ));
    }
    let (n_max, ch) = (enc.dim(1), enc.dim(2));
    let totals = durations
        .iter()
        .map(|d| check_durations("length_regulate_batch", d, n_max))
        .collect::<Result<Vec<_>>>()?;
    let t_max = totals.iter().copied().max().unwrap_or(0).max(min_frames);
    let mut idx = Vec::with_capacity(durations.len() * t_max);
    for (b, d) in durations.iter().enumerate() {
        let start = idx.len();
        for (n, &k) in d.iter().enumerate() {
            idx.extend(std::iter::repeat_n(Some(b * n_max + n), k));
        }
        idx.resize(start + t_max, None);
    }
    let out = tape.gather_rows(enc, &idx)?;
    Ok((out.reshape(&[durations.len(), t_max, ch])?, totals))
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::numerics::gradcheck::{project, random_tensor, Probe};
    use crate::verify::check_with_params;

    fn contour(v: &[f64]) -> PitchContour {
        PitchContour::new(v.to_vec()).unwrap()
    }

    fn small_predictor(seed: u64, dropout: f64) -> (Predictor, ParamStore<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let cfg = PredictorConfig {
            in_dim: 4,
            hidden: 6,
            kernel: 3,
            n_layers: 2,
            dropout,
        };
        let p = Predictor::new("dur", cfg, &mut store, &mut Init { rng: &mut rng }).unwrap();
        (p, store)
    }

    #[test]
    fn average_pitch_examples() {
        assert_eq!(
            average_pitch(&contour(&[100.0, 100.0, 200.0]), &[2, 1]).unwrap(),
            vec![100.0, 200.0]
        );
        assert_eq!(
            average_pitch(&contour(&[0.0, 0.0, 220.0]), &[2, 1]).unwrap(),
            vec![0.0, 220.0]
        );
        assert_eq!(
            average_pitch(&contour(&[0.0, 120.0, 220.0]), &[2, 1]).unwrap(),
            vec![120.0, 220.0]
        );
        assert!(average_pitch(&contour(&[1.0, 2.0]), &[2, 1]).is_err());
    }

    #[test]
    fn negative_pitch_rejected() {
        assert!(PitchContour::new(vec![100.0, -1.0]).is_err());
    }

    #[test]
    fn duration_codec_examples() {
        assert_eq!(decode_duration(0.0), 0);
        assert_eq!(decode_duration(3f64.ln()), 2);
        assert_eq!(decode_duration(-5.0), 0);
        assert_abs_diff_eq!(encode_duration(2), 3f64.ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(encode_duration(5), 6f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn decode_forces_one_frame() {
        assert_eq!(decode_durations(&[-1.0, 0.1, -3.0], 1.0).unwrap(), vec![0, 1, 0]);
        assert_eq!(decode_durations(&[3f64.ln(), 0.0], 2.0).unwrap(), vec![4, 0]);
        assert!(decode_durations(&[0.0], 0.0).is_err());
    }

    #[test]
    fn pitch_stats_zscore_voiced_only() {
        let s = PitchStats::from_contours([&contour(&[0.0, 100.0, 200.0, 0.0])]);
        assert_abs_diff_eq!(s.mean, 150.0);
        assert_abs_diff_eq!(s.std, 50.0);
        assert_eq!(s.normalize(0.0), 0.0);
        assert_abs_diff_eq!(s.normalize(200.0), 1.0);
        assert_abs_diff_eq!(s.denormalize(-1.0), 100.0);
    }

    #[test]
    fn length_regulate_examples() {
        let tape = Tape::new();
        let enc = tape.leaf(&Tensor::<f64>::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let y = length_regulate(&tape, &enc, &[2, 3]).unwrap();
        assert_eq!(y.shape(), &[5, 2]);
        assert_eq!(y.data(), &[1.0, 2.0, 1.0, 2.0, 3.0, 4.0, 3.0, 4.0, 3.0, 4.0]);
        let ident = length_regulate(&tape, &enc, &[1, 1]).unwrap();
        assert_eq!(ident.data(), enc.data());
        let s = tape.sum(&y).unwrap();
        tape.backward(&s).unwrap();
        assert_eq!(tape.grad(&enc).unwrap().data(), &[2.0, 2.0, 3.0, 3.0]);
        assert!(length_regulate(&tape, &enc, &[0, 0]).is_err());
        assert!(length_regulate(&tape, &enc, &[1]).is_err());
    }

    #[test]
    fn length_regulate_batch_pads() {
        let tape = Tape::no_grad();
        let enc = Tensor::<f64>::from_f64(&[2, 2, 1], &[1.0, 2.0, 3.0, 9.0]).unwrap();
        let (y, lens) = length_regulate_batch(&tape, &enc, &[vec![1, 2], vec![2]], 0).unwrap();
        assert_eq!(lens, vec![3, 2]);
        assert_eq!(y.shape(), &[2, 3, 1]);
        assert_eq!(y.data(), &[1.0, 2.0, 2.0, 3.0, 3.0, 0.0]);
        let (y, _) = length_regulate_batch(&tape, &enc, &[vec![1, 2], vec![2]], 5).unwrap();
        assert_eq!(y.shape(), &[2, 5, 1]);
    }

    #[test]
    fn zero_output_layer_gives_zero_predictions() {
        let (p, mut store) = small_predictor(1, 0.0);
        p.zero_output(&mut store);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = random_tensor(&mut rng, &[2, 5, 4], 1.0);
        let tape = Tape::no_grad();
        let y = p.forward(&Ctx::eval(&tape, &store), &x, &[5, 2]).unwrap();
        assert_eq!(y.shape(), &[2, 5]);
        assert!(y.data().iter().all(|&v| v == 0.0));
        assert_eq!(Predictor::count(&p.cfg), store.num_scalars());
    }

    #[test]
    fn predictor_padding_invariant() {
        let (p, store) = small_predictor(2, 0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let short = random_tensor(&mut rng, &[1, 4, 4], 1.0);
        let mut padded = short.to_vec();
        padded.extend(random_tensor(&mut rng, &[1, 5, 4], 9.0).to_vec());
        let padded = Tensor::new(&[1, 9, 4], padded).unwrap();
        let tape = Tape::no_grad();
        let ctx = Ctx::eval(&tape, &store);
        let a = p.forward(&ctx, &short, &[4]).unwrap();
        let b = p.forward(&ctx, &padded, &[4]).unwrap();
        for i in 0..4 {
            assert!((a.data()[i] - b.data()[i]).abs() <= 1e-5);
        }
        assert!(b.data()[4..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn predictor_gradcheck() {
        for seed in 0..3 {
            let (p, store) = small_predictor(10 + seed, 0.0);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random_tensor(&mut rng, &[2, 5, 4], 1.0);
            let res = check_with_params(&store, &p.param_ids(), &[x], &mut rng, Probe::Sample(40), |ctx, v| {
                let y = p.forward(ctx, &v[0], &[5, 3])?;
                project(ctx.tape, &y, seed)
            })
            .unwrap();
            assert!(res.max_rel_err <= 1e-4, "{res:?}");
        }
    }

    #[test]
    fn pitch_embedding_shapes_and_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::<f64>::new();
        let e = PitchEmbedding::new(6, &mut store, &mut Init { rng: &mut rng }).unwrap();
        let tape = Tape::no_grad();
        let pitch = Tensor::<f64>::zeros(&[1, 4]);
        let y = e.forward(&Ctx::eval(&tape, &store), &pitch, &[4]).unwrap();
        assert_eq!(y.shape(), &[1, 4, 6]);
        store.zero(e.bias);
        let y = e.forward(&Ctx::eval(&tape, &store), &pitch, &[4]).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
        assert_eq!(PitchEmbedding::count(6), store.num_scalars());
    }

    #[test]
    fn pitch_embedding_gradcheck() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::<f64>::new();
        let e = PitchEmbedding::new(3, &mut store, &mut Init { rng: &mut rng }).unwrap();
        let pitch = random_tensor(&mut rng, &[2, 4], 1.0);
        let res = check_with_params(&store, &[e.weight, e.bias], &[pitch], &mut rng, Probe::All, |ctx, v| {
            let y = e.forward(ctx, &v[0], &[4, 2])?;
            project(ctx.tape, &y, 5)
        })
        .unwrap();
        assert!(res.max_rel_err <= 1e-4, "{res:?}");
    }

    proptest! {
        #[test]
        fn length_regulate_total(durs in proptest::collection::vec(0usize..6, 1..8)) {
            prop_assume!(durs.iter().sum::<usize>() > 0);
            let tape = Tape::<f64>::no_grad();
            let enc = Tensor::full(&[durs.len(), 3], 1.0);
            let y = length_regulate(&tape, &enc, &durs).unwrap();
            prop_assert_eq!(y.dim(0), durs.iter().sum::<usize>());
        }

        #[test]
        fn duration_round_trip(d in 0usize..100_000) {
            prop_assert_eq!(decode_duration(encode_duration(d)), d);
        }

        #[test]
        fn average_pitch_conserves_voiced_mass(
            f0 in proptest::collection::vec(prop_oneof![Just(0.0), 50.0f64..400.0], 1..40),
            cuts in proptest::collection::vec(0usize..40, 0..6),
        ) {
            let t = f0.len();
            let mut bounds: Vec<usize> = cuts.into_iter().map(|c| c % (t + 1)).collect();
            bounds.push(0);
            bounds.push(t);
            bounds.sort_unstable();
            let durs: Vec<usize> = bounds.windows(2).map(|w| w[1] - w[0]).collect();
            let avg = average_pitch(&contour(&f0), &durs).unwrap();
            let mut start = 0;
            let mut recon = 0.0;
            for (a, &d) in avg.iter().zip(&durs) {
                recon += a * f0[start..start + d].iter().filter(|&&v| v > 0.0).count() as f64;
                start += d;
            }
            let voiced: f64 = f0.iter().sum();
            prop_assert!((recon - voiced).abs() <= 1e-9 * voiced.max(1.0));
        }
    }
}
