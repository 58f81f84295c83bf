//! Unsupervised speech-to-text alignment.
//!
//! Text and mel frames are encoded into a shared space; the negated pairwise
//! L2 distance, normalized over tokens, gives a per-frame log-distribution
//! over tokens (the lattice). The forward-sum loss marginalizes over all
//! monotonic frame-to-token paths that visit every token, and Viterbi picks
//! the single best path whose token occupancy counts become durations.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{lit, CustomBackward, Float, Tape, Tensor};
use crate::params::{Ctx, Init, ParamId, ParamStore};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlignerConfig {
    /// Shared embedding dimension of both encoders.
    pub dim: usize,
    /// Add a static beta-binomial monotonic prior to the distance logits.
    pub use_prior: bool,
}

impl Default for AlignerConfig {
    fn default() -> Self {
        AlignerConfig {
            dim: 384,
            use_prior: false,
        }
    }
}

/// Per-frame log-probabilities over tokens, `[T, N]`.
#[derive(Clone, Debug)]
pub struct AlignmentLattice<F: Float> {
    pub log_probs: Tensor<F>,
}

impl<F: Float> AlignmentLattice<F> {
    pub fn new(log_probs: Tensor<F>) -> Result<Self> {
        if log_probs.rank() != 2 {
            return Err(Error::shape("AlignmentLattice", log_probs.shape(), &[0, 0]));
        }
        let n = log_probs.dim(1);
        for (t, row) in log_probs.data().chunks(n).enumerate() {
            let m = row.iter().fold(f64::NEG_INFINITY, |a, v| a.max(v.as_f64()));
            let lse = m + row.iter().map(|v| (v.as_f64() - m).exp()).sum::<f64>().ln();
            let scale = row.iter().fold(1.0f64, |a, v| a.max(v.as_f64().abs()));
            let tol = (F::epsilon().as_f64() * 64.0 * scale).max(1e-5);
            if lse.abs() > tol || !lse.is_finite() {
                return Err(Error::invalid(
                    "AlignmentLattice",
                    format!("row {t} is not normalized (logsumexp {lse})"),
                ));
            }
        }
        Ok(AlignmentLattice { log_probs })
    }

    pub fn frames(&self) -> usize {
        self.log_probs.dim(0)
    }

    pub fn tokens(&self) -> usize {
        self.log_probs.dim(1)
    }

    fn check_feasible(&self) -> Result<()> {
        if self.tokens() > self.frames() {
            return Err(Error::AlignmentInfeasible {
                tokens: self.tokens(),
                frames: self.frames(),
            });
        }
        Ok(())
    }
}

/// Token index per frame of a monotonic alignment.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MonotonicPath {
    pub assignment: Vec<usize>,
}

impl MonotonicPath {
    /// Checks start/end tokens and unit steps.
    pub fn validate(&self, tokens: usize) -> Result<()> {
        let a = &self.assignment;
        let ok = !a.is_empty()
            && a[0] == 0
            && a[a.len() - 1] + 1 == tokens
            && a.windows(2).all(|w| w[1] == w[0] || w[1] == w[0] + 1);
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(
                "MonotonicPath",
                format!("not a full monotonic path: {a:?}"),
            ))
        }
    }

    pub fn durations(&self, tokens: usize) -> Vec<usize> {
        let mut d = vec![0; tokens];
        for &n in &self.assignment {
            d[n] += 1;
        }
        d
    }

    pub fn score<F: Float>(&self, lattice: &AlignmentLattice<F>) -> F {
        let n = lattice.tokens();
        let lp = lattice.log_probs.data();
        self.assignment.iter().enumerate().map(|(t, &s)| lp[t * n + s]).sum()
    }
}

fn logaddexp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Log-domain forward variables `alpha[t * n + k]` (include `lp[t, k]`).
fn forward_vars(lp: &[f64], t_len: usize, n: usize) -> Vec<f64> {
    let mut alpha = vec![f64::NEG_INFINITY; t_len * n];
    alpha[0] = lp[0];
    for t in 1..t_len {
        for k in 0..n {
            let stay = alpha[(t - 1) * n + k];
            let advance = if k > 0 {
                alpha[(t - 1) * n + k - 1]
            } else {
                f64::NEG_INFINITY
            };
            let prev = logaddexp(stay, advance);
            if prev != f64::NEG_INFINITY {
                alpha[t * n + k] = lp[t * n + k] + prev;
            }
        }
    }
    alpha
}

/// Log-domain backward variables `beta[t * n + k]` (exclude `lp[t, k]`).
fn backward_vars(lp: &[f64], t_len: usize, n: usize) -> Vec<f64> {
    let mut beta = vec![f64::NEG_INFINITY; t_len * n];
    beta[(t_len - 1) * n + n - 1] = 0.0;
    for t in (0..t_len - 1).rev() {
        for k in 0..n {
            let stay = lp[(t + 1) * n + k] + beta[(t + 1) * n + k];
            let advance = if k + 1 < n {
                lp[(t + 1) * n + k + 1] + beta[(t + 1) * n + k + 1]
            } else {
                f64::NEG_INFINITY
            };
            beta[t * n + k] = logaddexp(stay, advance);
        }
    }
    beta
}

struct ForwardSumRule {
    lp: Vec<f64>,
    frames: usize,
    tokens: usize,
    log_z: f64,
}

impl<F: Float> CustomBackward<F> for ForwardSumRule {
    fn name(&self) -> &'static str {
        "forward_sum_loss"
    }

    fn backward(&self, g: &[F], _needs: &[bool]) -> Vec<Option<Vec<F>>> {
        let (t_len, n) = (self.frames, self.tokens);
        let alpha = forward_vars(&self.lp, t_len, n);
        let beta = backward_vars(&self.lp, t_len, n);
        let scale = g[0].as_f64();
        // d(-log Z)/d lp[t, k] = -posterior occupancy of (t, k)
        let grad = alpha
            .iter()
            .zip(&beta)
            .map(|(&a, &b)| {
                let post = if a == f64::NEG_INFINITY || b == f64::NEG_INFINITY {
                    0.0
                } else {
                    (a + b - self.log_z).exp()
                };
                F::from_f64_lossy(-post * scale)
            })
            .collect();
        vec![Some(grad)]
    }
}

/// `-log` of the summed probability of all monotonic paths through the
/// lattice that start on the first token, end on the last, and advance by at
/// most one token per frame.
pub fn forward_sum_loss<F: Float>(tape: &Tape<F>, lattice: &AlignmentLattice<F>) -> Result<Tensor<F>> {
    lattice.check_feasible()?;
    let (t_len, n) = (lattice.frames(), lattice.tokens());
    let lp: Vec<f64> = lattice.log_probs.data().iter().map(|v| v.as_f64()).collect();
    let alpha = forward_vars(&lp, t_len, n);
    let log_z = alpha[t_len * n - 1];
    let rule = ForwardSumRule {
        lp,
        frames: t_len,
        tokens: n,
        log_z,
    };
    tape.custom(
        &[&lattice.log_probs],
        Vec::new(),
        vec![F::from_f64_lossy(-log_z)],
        Box::new(rule),
    )
}

/// Most probable monotonic path and its per-token durations. Ties prefer
/// staying on the current token.
pub fn viterbi_durations<F: Float>(lattice: &AlignmentLattice<F>) -> Result<(MonotonicPath, Vec<usize>)> {
    lattice.check_feasible()?;
    let (t_len, n) = (lattice.frames(), lattice.tokens());
    let lp = lattice.log_probs.data();
    let mut score = vec![f64::NEG_INFINITY; t_len * n];
    // true when the best predecessor of (t, k) is (t-1, k-1)
    let mut advanced = vec![false; t_len * n];
    score[0] = lp[0].as_f64();
    for t in 1..t_len {
        for k in 0..n {
            let stay = score[(t - 1) * n + k];
            let adv = if k > 0 {
                score[(t - 1) * n + k - 1]
            } else {
                f64::NEG_INFINITY
            };
            let (best, from_adv) = if stay >= adv { (stay, false) } else { (adv, true) };
            if best != f64::NEG_INFINITY {
                score[t * n + k] = best + lp[t * n + k].as_f64();
                advanced[t * n + k] = from_adv;
            }
        }
    }
    let mut assignment = vec![0; t_len];
    let mut k = n - 1;
    for t in (0..t_len).rev() {
        assignment[t] = k;
        if t > 0 && advanced[t * n + k] {
            k -= 1;
        }
    }
    let path = MonotonicPath { assignment };
    path.validate(n)?;
    let durations = path.durations(n);
    Ok((path, durations))
}

struct NegDistRule {
    text: Vec<f64>,
    mel: Vec<f64>,
    dist: Vec<f64>,
    tokens: usize,
    frames: usize,
    dim: usize,
}

impl<F: Float> CustomBackward<F> for NegDistRule {
    fn name(&self) -> &'static str {
        "neg_pairwise_distance"
    }

    fn backward(&self, g: &[F], needs: &[bool]) -> Vec<Option<Vec<F>>> {
        let (n, t_len, d) = (self.tokens, self.frames, self.dim);
        let mut gt = vec![0.0; n * d];
        let mut gm = vec![0.0; t_len * d];
        for t in 0..t_len {
            for k in 0..n {
                let dist = self.dist[t * n + k];
                if dist == 0.0 {
                    continue;
                }
                let w = g[t * n + k].as_f64() / dist;
                for j in 0..d {
                    let diff = self.text[k * d + j] - self.mel[t * d + j];
                    gt[k * d + j] -= w * diff;
                    gm[t * d + j] += w * diff;
                }
            }
        }
        let cast = |v: Vec<f64>| v.into_iter().map(F::from_f64_lossy).collect();
        vec![needs[0].then(|| cast(gt)), needs[1].then(|| cast(gm))]
    }
}

/// `-||text[n] - mel[t]||_2` as a `[T, N]` tensor.
pub fn neg_pairwise_distance<F: Float>(tape: &Tape<F>, text: &Tensor<F>, mel: &Tensor<F>) -> Result<Tensor<F>> {
    if text.rank() != 2 || mel.rank() != 2 || text.dim(1) != mel.dim(1) {
        return Err(Error::shape("neg_pairwise_distance", text.shape(), mel.shape()));
    }
    let (n, t_len, d) = (text.dim(0), mel.dim(0), text.dim(1));
    let tv: Vec<f64> = text.data().iter().map(|v| v.as_f64()).collect();
    let mv: Vec<f64> = mel.data().iter().map(|v| v.as_f64()).collect();
    let mut dist = vec![0.0; t_len * n];
    for t in 0..t_len {
        for k in 0..n {
            let s: f64 = (0..d)
                .map(|j| {
                    let diff = tv[k * d + j] - mv[t * d + j];
                    diff * diff
                })
                .sum();
            dist[t * n + k] = s.sqrt();
        }
    }
    let out = dist.iter().map(|&v| F::from_f64_lossy(-v)).collect();
    let rule = NegDistRule {
        text: tv,
        mel: mv,
        dist,
        tokens: n,
        frames: t_len,
        dim: d,
    };
    tape.custom(&[text, mel], vec![t_len, n], out, Box::new(rule))
}

/// Log-probabilities `log_softmax_n(-||text[n] - mel[t]|| + prior[t, n])`.
pub fn soft_alignment<F: Float>(
    tape: &Tape<F>,
    text_enc: &Tensor<F>,
    mel_enc: &Tensor<F>,
    prior: Option<&Tensor<F>>,
) -> Result<AlignmentLattice<F>> {
    let mut logits = neg_pairwise_distance(tape, text_enc, mel_enc)?;
    if let Some(prior) = prior {
        logits = tape.add(&logits, prior)?;
    }
    AlignmentLattice::new(tape.log_softmax(&logits, 1)?)
}

/// Static log-prior favouring the diagonal: for frame `t` of `T`, a
/// beta-binomial distribution over the `N` tokens with
/// `alpha = t + 1`, `beta = T - t`.
pub fn beta_binomial_log_prior<F: Float>(frames: usize, tokens: usize) -> Result<Tensor<F>> {
    let n = (tokens - 1) as f64;
    let ln_beta = |a: f64, b: f64| libm::lgamma(a) + libm::lgamma(b) - libm::lgamma(a + b);
    let ln_choose = |k: f64| libm::lgamma(n + 1.0) - libm::lgamma(k + 1.0) - libm::lgamma(n - k + 1.0);
    let mut data = Vec::with_capacity(frames * tokens);
    for t in 0..frames {
        let a = (t + 1) as f64;
        let b = (frames - t) as f64;
        for k in 0..tokens {
            let k = k as f64;
            data.push(lit::<F>(ln_choose(k) + ln_beta(k + a, n - k + b) - ln_beta(a, b)));
        }
    }
    Tensor::new(&[frames, tokens], data)
}

/// Two conv layers per modality projecting text and mel into a shared space.
#[derive(Clone, Debug)]
pub struct Aligner {
    pub cfg: AlignerConfig,
    pub text_conv1: (ParamId, ParamId),
    pub text_conv2: (ParamId, ParamId),
    pub mel_conv1: (ParamId, ParamId),
    pub mel_conv2: (ParamId, ParamId),
}

const ALIGNER_KERNEL: usize = 3;

fn conv_params<F: Float, R: Rng>(
    store: &mut ParamStore<F>,
    init: &mut Init<'_, R>,
    name: &str,
    cin: usize,
    cout: usize,
) -> Result<(ParamId, ParamId)> {
    let fan = cin * ALIGNER_KERNEL;
    Ok((
        store.add(format!("{name}.weight"), init.fan_in(&[ALIGNER_KERNEL, cin, cout], fan))?,
        store.add(format!("{name}.bias"), init.fan_in(&[cout], fan))?,
    ))
}

impl Aligner {
    pub(crate) fn new<F: Float, R: Rng>(
        cfg: AlignerConfig,
        text_dim: usize,
        n_mels: usize,
        store: &mut ParamStore<F>,
        init: &mut Init<'_, R>,
    ) -> Result<Self> {
        let d = cfg.dim;
        if d == 0 {
            return Err(Error::Config("aligner dim must be positive".into()));
        }
        Ok(Aligner {
            text_conv1: conv_params(store, init, "aligner.text.conv1", text_dim, d)?,
            text_conv2: conv_params(store, init, "aligner.text.conv2", d, d)?,
            mel_conv1: conv_params(store, init, "aligner.mel.conv1", n_mels, d)?,
            mel_conv2: conv_params(store, init, "aligner.mel.conv2", d, d)?,
            cfg,
        })
    }

    pub fn count(cfg: &AlignerConfig, text_dim: usize, n_mels: usize) -> usize {
        let conv = |cin: usize, cout: usize| ALIGNER_KERNEL * cin * cout + cout;
        conv(text_dim, cfg.dim) + conv(cfg.dim, cfg.dim) + conv(n_mels, cfg.dim) + conv(cfg.dim, cfg.dim)
    }

    fn branch<F: Float>(
        &self,
        ctx: &Ctx<'_, F>,
        x: &Tensor<F>,
        lengths: &[usize],
        l1: (ParamId, ParamId),
        l2: (ParamId, ParamId),
    ) -> Result<Tensor<F>> {
        let tape = ctx.tape;
        let h = tape.apply_sequence_mask(x, lengths)?;
        let h = tape.conv1d(&h, &ctx.p(l1.0), Some(&ctx.p(l1.1)))?;
        let h = tape.relu(&h)?;
        let h = tape.apply_sequence_mask(&h, lengths)?;
        let h = tape.conv1d(&h, &ctx.p(l2.0), Some(&ctx.p(l2.1)))?;
        tape.apply_sequence_mask(&h, lengths)
    }

    /// Encodes `[B, N, C]` text features and `[B, T, M]` mel frames into
    /// `[B, N, D]` and `[B, T, D]`.
    pub fn encode_for_alignment<F: Float>(
        &self,
        ctx: &Ctx<'_, F>,
        text: &Tensor<F>,
        text_lengths: &[usize],
        mel: &Tensor<F>,
        mel_lengths: &[usize],
    ) -> Result<(Tensor<F>, Tensor<F>)> {
        let t = self.branch(ctx, text, text_lengths, self.text_conv1, self.text_conv2)?;
        let m = self.branch(ctx, mel, mel_lengths, self.mel_conv1, self.mel_conv2)?;
        Ok((t, m))
    }

    /// One lattice per batch item, computed on its unpadded region.
    pub fn lattices<F: Float>(
        &self,
        ctx: &Ctx<'_, F>,
        text: &Tensor<F>,
        text_lengths: &[usize],
        mel: &Tensor<F>,
        mel_lengths: &[usize],
    ) -> Result<Vec<AlignmentLattice<F>>> {
        let (te, me) = self.encode_for_alignment(ctx, text, text_lengths, mel, mel_lengths)?;
        let (n_max, t_max) = (te.dim(1), me.dim(1));
        text_lengths
            .iter()
            .zip(mel_lengths)
            .enumerate()
            .map(|(b, (&n, &t))| {
                if n > t {
                    return Err(Error::AlignmentInfeasible { tokens: n, frames: t });
                }
                let ti: Vec<Option<usize>> = (0..n).map(|i| Some(b * n_max + i)).collect();
                let mi: Vec<Option<usize>> = (0..t).map(|i| Some(b * t_max + i)).collect();
                let text_b = ctx.tape.gather_rows(&te, &ti)?;
                let mel_b = ctx.tape.gather_rows(&me, &mi)?;
                let prior = if self.cfg.use_prior {
                    Some(beta_binomial_log_prior(t, n)?)
                } else {
                    None
                };
                soft_alignment(ctx.tape, &text_b, &mel_b, prior.as_ref())
            })
            .collect()
    }
}

#[cfg(test)]
mod tests;
