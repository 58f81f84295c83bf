use std::fmt::Write as _;
use std::path::Path;
use std::sync::atomic::Ordering;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mixer_tts::aligner::viterbi_durations;
use mixer_tts::audio_text::{
    load_dataset, load_manifest, mel_spectrogram, read_wav, write_melf, DatasetOptions, MelSpectrogram, SymbolVocab,
};
use mixer_tts::config::Config;
use mixer_tts::model::{count_parameters, Model, ModelConfig};
use mixer_tts::numerics::{par, GELU_BACKWARD_SIGN_FLIP};
use mixer_tts::params::{Ctx, ParamStore};
use mixer_tts::suites::{self, SuiteGroup};
use mixer_tts::training::{Checkpoint, Trainer};
use mixer_tts::{Error, Tape, Tensor};

use crate::{
    AlignArgs, BenchArgs, Cli, CmdResult, Command, Failure, Fault, GradArgs, Module, ParamsArgs, Preset, SynthArgs,
    TrainArgs,
};

pub fn dispatch(cli: Cli) -> CmdResult {
    let mut config = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        config.train.seed = seed;
    }
    if cli.dump_config {
        print!("{}", config.to_toml());
        return Ok(());
    }
    let seed = config.train.seed;
    match cli.command {
        Some(Command::Train(a)) => train(config, a),
        Some(Command::Synthesize(a)) => synthesize(a),
        Some(Command::Align(a)) => align(a),
        Some(Command::Gradcheck(a)) => gradcheck(a, seed),
        Some(Command::Bench(a)) => bench(config, a, seed),
        Some(Command::Params(a)) => params(&config, a),
        None => Err(Failure::usage("no command given (try --help)")),
    }
}

fn require_file(path: &Path) -> CmdResult {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::usage(format!("{}: no such file", path.display())))
    }
}

fn train(mut config: Config, a: TrainArgs) -> CmdResult {
    require_file(&a.manifest)?;
    let utterances = load_manifest(&a.manifest)?;
    let resumed = match &a.resume {
        Some(p) => {
            require_file(p)?;
            Some(Checkpoint::load(p)?)
        }
        None => None,
    };
    if let Some(ckpt) = &resumed {
        config = ckpt.config.clone();
    }
    if let Some(steps) = a.steps {
        config.train.steps = steps;
    }
    config.validate()?;
    let opts = DatasetOptions {
        mel: config.data.mel.clone(),
        f0: config.data.f0.clone(),
        text_mode: config.data.text_mode,
    };
    let examples = load_dataset(&utterances, &SymbolVocab::default(), &opts)?;
    log::info!("loaded {} utterances from {}", examples.len(), a.manifest.display());
    let mut trainer = match resumed {
        Some(mut ckpt) => {
            ckpt.config.train.steps = config.train.steps;
            Trainer::resume(&ckpt, examples)?
        }
        None => Trainer::new(config, examples)?,
    };
    let every = a.log_every.max(1);
    trainer.run(&a.out_dir, |r| {
        if r.step % every == 0 {
            let l = &r.losses;
            log::info!(
                "step {} lr {:.2e} loss {:.4} mel {:.4} aligner {:.4} durs {:.4} pitch {:.4}",
                r.step,
                r.lr,
                l.total,
                l.mel,
                l.aligner,
                l.durations,
                l.pitch
            );
        }
    })?;
    println!("trained to step {}; outputs in {}", trainer.step, a.out_dir.display());
    Ok(())
}

fn load_model(path: &Path) -> Result<(Checkpoint, Model, ParamStore<f32>), Failure> {
    require_file(path)?;
    let ckpt = Checkpoint::load(path)?;
    let (model, params) = ckpt.restore_model()?;
    Ok((ckpt, model, params))
}

fn symbols_for(text: &str) -> Result<Vec<usize>, Failure> {
    Ok(SymbolVocab::default().tokenize(text)?.ids)
}

fn synthesize(a: SynthArgs) -> CmdResult {
    if !(a.pace > 0.0 && a.pace.is_finite()) {
        return Err(Failure::usage("--pace must be positive"));
    }
    let (_, model, params) = load_model(&a.checkpoint)?;
    let symbols = symbols_for(&a.text)?;
    let start = Instant::now();
    let tape = Tape::no_grad();
    let ctx = Ctx::eval(&tape, &params);
    let lm = model.lm_embedding::<f32>(&a.text)?;
    let out = model.forward_infer(&ctx, &symbols, lm.as_ref(), a.pace)?;
    let wall = start.elapsed();
    let frames = out.mel.dim(1);
    let mel = MelSpectrogram::new(frames, out.mel.dim(2), out.mel.to_vec())?;
    write_melf(&a.out, &mel)?;
    println!("T={frames} N={} wall={:.1}ms", symbols.len(), wall.as_secs_f64() * 1e3);
    Ok(())
}

fn align(a: AlignArgs) -> CmdResult {
    let (ckpt, model, params) = load_model(&a.checkpoint)?;
    require_file(&a.audio)?;
    let symbols = symbols_for(&a.text)?;
    let (samples, sr) = read_wav(&a.audio)?;
    let mel = mel_spectrogram(&samples, sr, &ckpt.config.data.mel)?;
    let (n, t) = (symbols.len(), mel.frames);
    if n > t {
        return Err(Error::AlignmentInfeasible { tokens: n, frames: t }.into());
    }
    let tape = Tape::no_grad();
    let ctx = Ctx::eval(&tape, &params);
    let lm = model.lm_embedding::<f32>(&a.text)?.map(|e| vec![e]);
    let enc = model.encode(&ctx, &[symbols], lm.as_deref())?;
    let mel_t = Tensor::new(&[1, t, mel.n_mels], mel.data.clone())?;
    let lattices = model.aligner.lattices(&ctx, &enc, &[n], &mel_t, &[t])?;
    let (path, durations) = viterbi_durations(&lattices[0])?;

    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let mut dur_text = String::new();
    for d in &durations {
        writeln!(dur_text, "{d}").expect("write to string");
    }
    let mut grid = String::new();
    for &tok in &path.assignment {
        let row: Vec<&str> = (0..n).map(|k| if k == tok { "1" } else { "0" }).collect();
        writeln!(grid, "{}", row.join(" ")).expect("write to string");
    }
    for (name, body) in [("durations.txt", dur_text), ("path.txt", grid)] {
        let p = a.out.join(name);
        std::fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
    }
    println!("T={t} N={n} durations={durations:?}");
    Ok(())
}

fn gradcheck(a: GradArgs, seed: u64) -> CmdResult {
    if a.instances == 0 {
        return Err(Failure::usage("--instances must be positive"));
    }
    let groups: Vec<SuiteGroup> = match a.module {
        Module::All => SuiteGroup::ALL.to_vec(),
        Module::Numerics => vec![SuiteGroup::Numerics],
        Module::Aligner => vec![SuiteGroup::Aligner],
        Module::Model => vec![SuiteGroup::Model],
    };
    if a.inject_fault == Some(Fault::GeluSign) {
        GELU_BACKWARD_SIGN_FLIP.store(true, Ordering::SeqCst);
    }
    let start = Instant::now();
    let reports = suites::run(&groups, seed, a.instances)?;
    println!(
        "{:<24} {:<9} {:>9} {:>8} {:>12}  status",
        "case", "group", "instances", "coords", "max_rel_err"
    );
    let mut failed = 0;
    for r in &reports {
        println!(
            "{:<24} {:<9} {:>9} {:>8} {:>12.3e}  {}",
            r.name,
            r.group.name(),
            r.instances,
            r.coords,
            r.max_rel_err,
            if r.passed() { "ok" } else { "FAIL" }
        );
        failed += usize::from(!r.passed());
    }
    println!(
        "{} cases, {} failed, tolerance {:.0e}, {:.1}s",
        reports.len(),
        failed,
        mixer_tts::numerics::gradcheck::TOLERANCE,
        start.elapsed().as_secs_f64()
    );
    if failed > 0 {
        return Err(Failure::numerical(format!(
            "{failed} gradient case(s) exceed tolerance"
        )));
    }
    Ok(())
}

fn bench(config: Config, a: BenchArgs, seed: u64) -> CmdResult {
    if a.runs == 0 || a.lengths.is_empty() || a.lengths.contains(&0) {
        return Err(Failure::usage("--runs and every --lengths entry must be positive"));
    }
    let (cfg, model, params) = match &a.checkpoint {
        Some(p) => {
            let (ckpt, model, params) = load_model(p)?;
            (ckpt.config, model, params)
        }
        None => {
            let (model, params) = Model::from_config::<f32>(&config.model, seed)?;
            (config, model, params)
        }
    };
    let vocab = SymbolVocab::default();
    let letters: Vec<usize> = ('a'..='z').filter_map(|c| vocab.id(c)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hop_seconds = cfg.data.mel.frame_seconds();
    let mut csv = String::from("length,frames,runs,mean_ms,median_ms,audio_s,rtf\n");
    for &len in &a.lengths {
        let symbols: Vec<usize> = (0..len).map(|_| letters[rng.random_range(0..letters.len())]).collect();
        let text = vocab.detokenize(&symbols);
        let (times, frames) = par::single_worker(|| time_inference(&model, &params, &symbols, &text, &a))?;
        let mean = times.iter().sum::<f64>() / times.len() as f64;
        let mut sorted = times.clone();
        sorted.sort_by(f64::total_cmp);
        let median = sorted[sorted.len() / 2];
        let audio = frames as f64 * hop_seconds;
        writeln!(
            csv,
            "{len},{frames},{},{:.3},{:.3},{audio:.3},{:.2}",
            times.len(),
            mean * 1e3,
            median * 1e3,
            audio / mean
        )
        .expect("write to string");
    }
    print!("{csv}");
    if let Some(p) = &a.csv {
        std::fs::write(p, &csv).map_err(|e| Error::io(p, e))?;
    }
    Ok(())
}

/// Wall times of the timed runs (warmup excluded) and the frame count.
fn time_inference(
    model: &Model,
    params: &ParamStore<f32>,
    symbols: &[usize],
    text: &str,
    a: &BenchArgs,
) -> Result<(Vec<f64>, usize), Failure> {
    let mut times = Vec::with_capacity(a.runs);
    let mut frames = 0;
    for i in 0..a.warmup + a.runs {
        let start = Instant::now();
        let tape = Tape::no_grad();
        let ctx = Ctx::eval(&tape, params);
        let lm = model.lm_embedding::<f32>(text)?;
        let out = model.forward_infer(&ctx, symbols, lm.as_ref(), a.pace)?;
        let dt = start.elapsed().as_secs_f64();
        frames = out.mel.dim(1);
        if i >= a.warmup {
            times.push(dt);
        }
    }
    Ok((times, frames))
}

fn params(config: &Config, a: ParamsArgs) -> CmdResult {
    let cfg = match a.preset {
        Some(Preset::Basic) => ModelConfig::full_basic(),
        Some(Preset::Extended) => ModelConfig::full_extended(),
        Some(Preset::Toy) => ModelConfig::toy(),
        None => config.model.clone(),
    };
    let counts = count_parameters(&cfg);
    for (name, n) in counts.rows() {
        if n > 0 {
            println!("{name:<20} {n:>12}");
        }
    }
    println!("{:<20} {:>12}", "total", counts.total());
    Ok(())
}
