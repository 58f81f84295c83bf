//! Seeded finite-difference suites over every differentiable operation and
//! every parameterized module, evaluated at `f64`.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::adaptors::{length_regulate, PitchEmbedding, PitchStats, Predictor, PredictorConfig};
use crate::aligner::{
    beta_binomial_log_prior, forward_sum_loss, neg_pairwise_distance, soft_alignment, Aligner, AlignerConfig,
    AlignmentLattice,
};
use crate::audio_text::Example;
use crate::error::{Error, Result};
use crate::lm_cond::{LmAttention, LmConfig};
use crate::mixer::{build_stack, MixerBlock, MixerBlockConfig, StackConfig};
use crate::model::{LossNorm, Model, ModelConfig};
use crate::numerics::gradcheck::{self, project, random_tensor, CheckResult, Probe, TOLERANCE};
use crate::numerics::{par, Tape, Tensor};
use crate::params::{Init, ParamId, ParamStore};
use crate::synthetic::random_example;
use crate::verify::check_with_params;

/// Minimum number of random instances per case.
pub const MIN_INSTANCES: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SuiteGroup {
    /// Tensor operations of the autodiff core.
    Numerics,
    /// Alignment operations and the aligner module.
    Aligner,
    /// Mixer blocks, adaptors, LM attention and the full model graphs.
    Model,
}

impl SuiteGroup {
    pub const ALL: [SuiteGroup; 3] = [SuiteGroup::Numerics, SuiteGroup::Aligner, SuiteGroup::Model];

    pub fn name(self) -> &'static str {
        match self {
            SuiteGroup::Numerics => "numerics",
            SuiteGroup::Aligner => "aligner",
            SuiteGroup::Model => "model",
        }
    }
}

/// Result of one case over all its instances.
#[derive(Clone, Debug)]
pub struct CaseReport {
    pub name: &'static str,
    pub group: SuiteGroup,
    pub instances: usize,
    pub coords: usize,
    pub max_rel_err: f64,
}

impl CaseReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= TOLERANCE
    }
}

type CaseFn = fn(&mut ChaCha8Rng) -> Result<CheckResult>;

struct Case {
    name: &'static str,
    group: SuiteGroup,
    run: CaseFn,
}

const fn case(name: &'static str, group: SuiteGroup, run: CaseFn) -> Case {
    Case { name, group, run }
}

use SuiteGroup::{Aligner as Al, Model as Mo, Numerics as Nu};

static CASES: &[Case] = &[
    case("linear", Nu, op_linear),
    case("matmul", Nu, op_matmul),
    case("depthwise_conv1d", Nu, op_depthwise),
    case("unfold_time", Nu, op_unfold),
    case("conv1d", Nu, op_conv1d),
    case("layer_norm", Nu, op_layer_norm),
    case("gelu", Nu, op_gelu),
    case("relu", Nu, op_relu),
    case("exp", Nu, op_exp),
    case("log_softmax", Nu, op_log_softmax),
    case("mul_const", Nu, op_mul_const),
    case("dropout", Nu, op_dropout),
    case("apply_sequence_mask", Nu, op_sequence_mask),
    case("add", Nu, op_add),
    case("sub", Nu, op_sub),
    case("mul", Nu, op_mul),
    case("scale", Nu, op_scale),
    case("sum", Nu, op_sum),
    case("gather_rows", Nu, op_gather),
    case("concat", Nu, op_concat),
    case("masked_sq_error", Nu, op_masked_sq_error),
    case("neg_pairwise_distance", Al, op_pairwise),
    case("soft_alignment", Al, op_soft_alignment),
    case("forward_sum_loss", Al, op_forward_sum),
    case("aligner", Al, mod_aligner),
    case("length_regulate", Mo, op_length_regulate),
    case("mixer_block", Mo, mod_mixer_block),
    case("mixer_stack", Mo, mod_mixer_stack),
    case("predictor", Mo, mod_predictor),
    case("pitch_embedding", Mo, mod_pitch_embedding),
    case("lm_attention", Mo, mod_lm_attention),
    case("model_basic", Mo, mod_model_basic),
    case("model_extended", Mo, mod_model_extended),
];

/// Names of every case, in report order.
pub fn case_names() -> Vec<&'static str> {
    CASES.iter().map(|c| c.name).collect()
}

/// Runs every case of the selected groups for `instances` seeded instances
/// each. Cases run concurrently; each instance draws its own RNG stream.
pub fn run(groups: &[SuiteGroup], seed: u64, instances: usize) -> Result<Vec<CaseReport>> {
    if instances == 0 {
        return Err(Error::invalid("gradcheck", "need at least one instance"));
    }
    let selected: Vec<(usize, &Case)> = CASES
        .iter()
        .enumerate()
        .filter(|(_, c)| groups.contains(&c.group))
        .collect();
    par::map(&selected, |&(k, c)| {
        let mut total = CheckResult::default();
        for i in 0..instances {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream((k * 10_000 + i) as u64);
            let res =
                (c.run)(&mut rng).map_err(|e| Error::invalid("gradcheck", format!("{} instance {i}: {e}", c.name)))?;
            total.merge(&res);
        }
        Ok(CaseReport {
            name: c.name,
            group: c.group,
            instances,
            coords: total.coords,
            max_rel_err: total.max_rel_err,
        })
    })
    .into_iter()
    .collect()
}

fn dims(rng: &mut ChaCha8Rng) -> (usize, usize, usize) {
    (rng.random_range(1..3), rng.random_range(2..6), rng.random_range(1..5))
}

fn odd(rng: &mut ChaCha8Rng, max: usize) -> usize {
    2 * rng.random_range(0..=max / 2) + 1
}

fn lengths(rng: &mut ChaCha8Rng, batch: usize, time: usize) -> Vec<usize> {
    let mut l: Vec<usize> = (0..batch).map(|_| rng.random_range(1..=time)).collect();
    l[0] = time;
    l
}

fn mask(rng: &mut ChaCha8Rng, n: usize) -> Arc<Vec<f64>> {
    Arc::new(
        (0..n)
            .map(|_| {
                if rng.random_bool(0.3) {
                    0.0
                } else {
                    rng.random_range(0.5..2.0)
                }
            })
            .collect(),
    )
}

/// Checks `f(inputs)` projected to a scalar against every input.
fn simple<G>(rng: &mut ChaCha8Rng, inputs: Vec<Tensor<f64>>, f: G) -> Result<CheckResult>
where
    G: Fn(&Tape<f64>, &[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    let wrt: Vec<usize> = (0..inputs.len()).collect();
    let seed = rng.random();
    gradcheck::check(&inputs, &wrt, Probe::All, rng, |tape, v| {
        let y = f(tape, v)?;
        if y.numel() == 1 {
            Ok(y)
        } else {
            project(tape, &y, seed)
        }
    })
}

fn op_linear(rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let (r, i, o) = dims(rng);
    let x = random_tensor(rng, &[r, i + 1], 1.0);
    let w = random_tensor(rng, &[i + 1, o], 1.0);
    let b = random_tensor(rng, &[o], 1.0);
    simple(rng, vec![x, w, b], |t, v| t.linear(&v[0], &v[1], Some(&v[2])))
}

fn op_matmul(rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let (m, k, n) = dims(rng);
    let trans = rng.random_bool(0.5);
    let a = random_tensor(rng, &[m, k], 1.0);
    let b = if trans {
        random_tensor(rng, &[n, k], 1.0)
    } else {
        random_tensor(rng, &[k, n], 1.0)
    };
    simple(rng, vec![a, b], move |t, v| t.matmul(&v[0], &v[1], trans))
}

fn op_depthwise(rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let (b, time, c) = dims(rng);
    let k = odd(rng, 7);
    let x = random_tensor(rng, &[b, time, c], 1.0);
    let w = random_tensor(rng, &[c, k], 1.0);
    let bias = random_tensor(rng, &[c], 1.0);
    simple(rng, vec![x, w, bias], |t, v| t.depthwise_conv1d(&v[0], &v[1], &v[2]))
}

fn op_unfold(rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let (b, time, c) = dims(rng);
    let k = odd(rng, 5);
    let x = random_tensor(rng, &[b, time, c], 1.0);
    simple(rng, vec![x], move |t, v| t.unfold_time(&v[0], k))
}

fn op_conv1d(rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let (b, time, c) = dims(rng);
    let k = odd(rng, 5);
    let cout = rng.random_range(1..4);
    let x = random_tensor(rng, &[b, time, c], 1.0);
    let w = random_tensor(rng, &[k, c, cout], 1.0);
    let bias = random_tensor(rng, &[cout], 1.0);
    simple(rng, vec![x, w, bias], |t, v| t.conv1d(&v[0], &v[1], Some(&v[2])))
}

fn op_layer_norm(rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let (r, _, c) = dims(rng);
    let x = random_tensor(rng, &[r, c + 1], 2.0);
    let g = random_tensor(rng, &[c + 1], 1.0);
    let b = random_tensor(rng, &[c + 1], 1.0);
    simple(rng, vec![x, g, b], |t, v| t.layer_norm(&v[0], &v[1], &v[2], 1e-5))
}

fn op_gelu(rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let (r, c, _) = dims(rng);
    let x = random_tensor(rng, &[r, c], 3.0);
    simple(rng, vec![x], |t, v| t.gelu(&v[0]))
}

fn op_relu(rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let (r, c, _) = dims(rng);
    // keep inputs away from the kink
    let data = (0..r * c)
        .map(|_| rng.random_range(0.1..2.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 })
        .collect();
    let x = Tensor::new(&[r, c], data)?;
    simple(rng, vec![x], |t, v| t.relu(&v[0]))
}

fn op_exp(rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let (r, c, _) = dims(rng);
    let x = random_tensor(rng, &[r, c], 2.0);
    simple(rng, vec![x], |t, v| t.exp(&v[0]))
}

fn op_log_softmax(rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let (a, b, c) = dims(rng);
    let axis = rng.random_range(0..3);
    let x = random_tensor(rng, &[a, b, c], 3.0);
    simple(rng, vec![x], move |t, v| t.log_softmax(&v[0], axis))
}

fn op_mul_const(rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let (r, c, _) = dims(rng);
    let m = mask(rng, r * c);
    let x = random_tensor(rng, &[r, c], 1.0);
    simple(rng, vec![x], move |t, v| t.mul_const(&v[0], Arc::clone(&m)))
}

fn op_dropout(rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let (r, c, _) = dims(rng);
    let p = rng.random_range(0.1..0.6);
    let seed: u64 = rng.random();
    let x = random_tensor(rng, &[r, c], 1.0);
    simple(rng, vec![x], move |t, v| {
        let mut mask_rng = ChaCha8Rng::seed_from_u64(seed);
        t.dropout(&v[0], p, Some(&mut mask_rng))
    })
}

fn op_sequence_mask(rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let (b, time, c) = dims(rng);
    let lens = lengths(rng, b, time);
    let x = random_tensor(rng, &[b, time, c], 1.0);
    simple(rng, vec![x], move |t, v| t.apply_sequence_mask(&v[0], &lens))
}

fn pair(rng: &mut ChaCha8Rng) -> Vec<Tensor<f64>> {
    let (r, c, _) = dims(rng);
    vec![random_tensor(rng, &[r, c], 1.0), random_tensor(rng, &[r, c], 1.0)]
}

fn op_add(rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let v = pair(rng);
    simple(rng, v, |t, v| t.add(&v[0], &v[1]))
}

fn op_sub(rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let v = pair(rng);
    simple(rng, v, |t, v| t.sub(&v[0], &v[1]))
}

fn op_mul(rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let v = pair(rng);
    simple(rng, v, |t, v| t.mul(&v[0], &v[1]))
}

fn op_scale(rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let (r, c, _) = dims(rng);
    let k = rng.random_range(-3.0..3.0);
    let x = random_tensor(rng, &[r, c], 1.0);
    simple(rng, vec![x], move |t, v| t.scale(&v[0], k))
}

fn op_sum(rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let (a, b, c) = dims(rng);
    let x = random_tensor(rng, &[a, b, c], 1.0);
    simple(rng, vec![x], |t, v| t.sum(&v[0]))
}

fn op_gather(rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let (rows, c, out) = dims(rng);
    let idx: Vec<Option<usize>> = (0..out + 2)
        .map(|_| rng.random_bool(0.8).then(|| rng.random_range(0..rows)))
        .collect();
    let x = random_tensor(rng, &[rows, c], 1.0);
    simple(rng, vec![x], move |t, v| t.gather_rows(&v[0], &idx))
}

fn op_concat(rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let (_, c, _) = dims(rng);
    let parts: Vec<Tensor<f64>> = (0..rng.random_range(1..4))
        .map(|_| {
            let n = rng.random_range(1..4);
            random_tensor(rng, &[n, c], 1.0)
        })
        .collect();
    simple(rng, parts, |t, v| t.concat(&v.iter().collect::<Vec<_>>()))
}

fn op_masked_sq_error(rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let (r, c, _) = dims(rng);
    let w = mask(rng, r * c);
    let denom = rng.random_range(1.0..10.0);
    let target = random_tensor(rng, &[r, c], 1.0);
    let pred = random_tensor(rng, &[r, c], 1.0);
    simple(rng, vec![pred], move |t, v| {
        t.masked_sq_error(&v[0], &target, Arc::clone(&w), denom)
    })
}

fn op_pairwise(rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let (n, t, d) = dims(rng);
    let text = random_tensor(rng, &[n, d], 1.0);
    let mel = random_tensor(rng, &[t, d], 1.0);
    simple(rng, vec![text, mel], |tape, v| {
        neg_pairwise_distance(tape, &v[0], &v[1])
    })
}

fn op_soft_alignment(rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let (n, extra, d) = dims(rng);
    let t = n + extra;
    let text = random_tensor(rng, &[n, d], 1.0);
    let mel = random_tensor(rng, &[t, d], 1.0);
    let prior = rng
        .random_bool(0.5)
        .then(|| beta_binomial_log_prior::<f64>(t, n))
        .transpose()?;
    simple(rng, vec![text, mel], move |tape, v| {
        Ok(soft_alignment(tape, &v[0], &v[1], prior.as_ref())?.log_probs)
    })
}

fn op_forward_sum(rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let n = rng.random_range(1..5);
    let t = n + rng.random_range(0..5);
    let logits = random_tensor(rng, &[t, n], 2.0);
    simple(rng, vec![logits], |tape, v| {
        let lp = tape.log_softmax(&v[0], 1)?;
        forward_sum_loss(tape, &AlignmentLattice::new(lp)?)
    })
}

fn op_length_regulate(rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let (_, n, c) = dims(rng);
    let mut durs: Vec<usize> = (0..n).map(|_| rng.random_range(0..4)).collect();
    durs[0] = durs[0].max(1);
    let enc = random_tensor(rng, &[n, c], 1.0);
    simple(rng, vec![enc], move |t, v| length_regulate(t, &v[0], &durs))
}

fn with_store<T>(
    rng: &mut ChaCha8Rng,
    build: impl FnOnce(&mut ParamStore<f64>, &mut Init<'_, ChaCha8Rng>) -> Result<T>,
) -> Result<(T, ParamStore<f64>)> {
    let mut init_rng = ChaCha8Rng::seed_from_u64(rng.random());
    let mut store = ParamStore::new();
    let m = build(&mut store, &mut Init { rng: &mut init_rng })?;
    // move gains and biases off their trivial initial values
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        let t = store.get(id);
        let jittered = Tensor::new(
            t.shape(),
            t.data().iter().map(|v| v + rng.random_range(-0.3..0.3)).collect(),
        )?;
        store.set(id, jittered)?;
    }
    Ok((m, store))
}

fn mod_aligner(rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let (b, n, c) = dims(rng);
    let t = n + rng.random_range(0..4);
    let m = rng.random_range(1..4);
    let cfg = AlignerConfig {
        dim: rng.random_range(2..5),
        use_prior: rng.random_bool(0.5),
    };
    let (a, store) = with_store(rng, |s, i| Aligner::new(cfg, c, m, s, i))?;
    let text = random_tensor(rng, &[b, n, c], 1.0);
    let mel = random_tensor(rng, &[b, t, m], 1.0);
    let text_lens = lengths(rng, b, n);
    let mel_lens: Vec<usize> = text_lens
        .iter()
        .enumerate()
        .map(|(i, &l)| if i == 0 { t } else { l + rng.random_range(0..=t - n) })
        .collect();
    let ids: Vec<ParamId> = store.ids().collect();
    check_with_params(&store, &ids, &[text, mel], rng, Probe::Sample(12), |ctx, v| {
        let mut total: Option<Tensor<f64>> = None;
        for l in a.lattices(ctx, &v[0], &text_lens, &v[1], &mel_lens)? {
            let x = forward_sum_loss(ctx.tape, &l)?;
            total = Some(match total {
                Some(acc) => ctx.tape.add(&acc, &x)?,
                None => x,
            });
        }
        total.ok_or_else(|| Error::invalid("aligner", "empty batch"))
    })
}

fn block_cfg(rng: &mut ChaCha8Rng, c: usize) -> MixerBlockConfig {
    MixerBlockConfig {
        feature_dim: c,
        kernel_size: odd(rng, 5),
        expansion_factor: rng.random_range(1..3),
        dropout: 0.0,
    }
}

fn mod_mixer_block(rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let (b, time, c) = dims(rng);
    let cfg = block_cfg(rng, c + 1);
    let (blk, store) = with_store(rng, |s, i| MixerBlock::new("block", cfg, s, i))?;
    let lens = lengths(rng, b, time);
    let x = random_tensor(rng, &[b, time, c + 1], 1.0);
    let seed = rng.random();
    check_with_params(&store, &blk.param_ids(), &[x], rng, Probe::Sample(10), |ctx, v| {
        project(ctx.tape, &blk.forward(ctx, &v[0], &lens)?, seed)
    })
}

fn mod_mixer_stack(rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let (b, time, c) = dims(rng);
    let template = block_cfg(rng, c + 1);
    let stack = StackConfig {
        n_blocks: 2,
        kernel_start: 1,
        kernel_end: 3,
        kernel_step: 2,
    };
    let (st, store) = with_store(rng, |s, i| build_stack("stack", &stack, &template, s, i))?;
    let lens = lengths(rng, b, time);
    let x = random_tensor(rng, &[b, time, c + 1], 1.0);
    let seed = rng.random();
    let ids: Vec<ParamId> = store.ids().collect();
    check_with_params(&store, &ids, &[x], rng, Probe::Sample(6), |ctx, v| {
        project(ctx.tape, &st.run(ctx, &v[0], &lens)?, seed)
    })
}

fn mod_predictor(rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let (b, n, c) = dims(rng);
    let cfg = PredictorConfig {
        in_dim: c,
        hidden: rng.random_range(2..5),
        kernel: 3,
        n_layers: 2,
        dropout: 0.0,
    };
    let (p, store) = with_store(rng, |s, i| Predictor::new("pred", cfg, s, i))?;
    let lens = lengths(rng, b, n);
    let x = random_tensor(rng, &[b, n, c], 1.0);
    let seed = rng.random();
    check_with_params(&store, &p.param_ids(), &[x], rng, Probe::Sample(10), |ctx, v| {
        project(ctx.tape, &p.forward(ctx, &v[0], &lens)?, seed)
    })
}

fn mod_pitch_embedding(rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let (b, n, c) = dims(rng);
    let (e, store) = with_store(rng, |s, i| PitchEmbedding::new(c, s, i))?;
    let lens = lengths(rng, b, n);
    let pitch = random_tensor(rng, &[b, n], 1.0);
    let seed = rng.random();
    check_with_params(&store, &[e.weight, e.bias], &[pitch], rng, Probe::All, |ctx, v| {
        project(ctx.tape, &e.forward(ctx, &v[0], &lens)?, seed)
    })
}

fn mod_lm_attention(rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let (b, n, c) = dims(rng);
    let cfg = LmConfig {
        table: None,
        lm_dim: rng.random_range(1..4),
        max_positions: 8,
    };
    let (a, store) = with_store(rng, |s, i| LmAttention::new(c, &cfg, s, i))?;
    let lens = lengths(rng, b, n);
    let te = random_tensor(rng, &[b, n, c], 1.0);
    let lm: Vec<Tensor<f64>> = (0..b)
        .map(|_| {
            let m = rng.random_range(1..5);
            random_tensor(rng, &[m, cfg.lm_dim], 1.0)
        })
        .collect();
    let seed = rng.random();
    let ids: Vec<ParamId> = store.ids().collect();
    check_with_params(&store, &ids, &[te], rng, Probe::Sample(8), |ctx, v| {
        project(ctx.tape, &a.forward(ctx, &v[0], &lens, &lm)?, seed)
    })
}

/// A tiny model geometry for full-graph checks.
pub fn tiny_model_config(extended: bool) -> ModelConfig {
    let mut cfg = ModelConfig::toy();
    cfg.feature_dim = 8;
    cfg.expansion_factor = 2;
    for p in [&mut cfg.duration_predictor, &mut cfg.pitch_predictor] {
        p.in_dim = 8;
        p.hidden = 6;
        p.dropout = 0.0;
    }
    cfg.dropout = 0.0;
    cfg.aligner.dim = 6;
    cfg.n_mels = 4;
    cfg.lm.max_positions = 16;
    cfg.extended = extended;
    cfg
}

fn full_graph(rng: &mut ChaCha8Rng, extended: bool) -> Result<CheckResult> {
    let cfg = tiny_model_config(extended);
    let (model, store) = Model::from_config::<f64>(&cfg, rng.random())?;
    let b = rng.random_range(1..3);
    let ex: Vec<Example> = (0..b)
        .map(|i| {
            let n = rng.random_range(1..4);
            let t = n + rng.random_range(0..4);
            random_example(&format!("g{i}"), rng, n, t, cfg.n_mels)
        })
        .collect();
    let refs: Vec<&Example> = ex.iter().collect();
    let batch = model.batch::<f64>(&refs)?;
    let norm = LossNorm::of(&[&batch], cfg.n_mels);
    let stats = PitchStats::from_contours(ex.iter().map(|e| &e.pitch));
    // Predictors read a detached encoder output, so finite differences on
    // upstream parameters see the predictor terms while backward does not.
    // Upstream parameters are checked with those terms switched off.
    let upstream = |n: &str| n == "embedding" || n.starts_with("encoder.") || n.starts_with("lm.");
    let mut total = CheckResult::default();
    for upstream_pass in [false, true] {
        let mut m = model.clone();
        if upstream_pass {
            m.cfg.loss_weights.durations = 0.0;
            m.cfg.loss_weights.pitch = 0.0;
        }
        let ids: Vec<ParamId> = store
            .iter()
            .filter(|(_, n, _)| upstream(n) == upstream_pass)
            .map(|(id, _, _)| id)
            .collect();
        let res = check_with_params(&store, &ids, &[], rng, Probe::Sample(4), |ctx, _| {
            let out = m.forward_train(ctx, &batch, &stats)?;
            Ok(m.total_loss(ctx.tape, &out, &batch, &norm)?.total)
        })?;
        total.merge(&res);
    }
    Ok(total)
}

fn mod_model_basic(rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    full_graph(rng, false)
}

fn mod_model_extended(rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    full_graph(rng, true)
}
