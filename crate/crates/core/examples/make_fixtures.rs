//! Regenerates the bundled fixture set: three short synthetic utterances,
//! their manifest, the demo LM embedding table and a desk-scale config
//! tuned to overfit them in 500 steps.
//!
//! Each character of a transcript becomes its own acoustic segment: vowels
//! are voiced glides, consonants pure tones at a letter-specific frequency,
//! and spaces and punctuation short pauses.
//!
//! Usage: `cargo run -p mixer-tts --example make_fixtures -- fixtures`

use std::path::PathBuf;

use mixer_tts::audio_text::write_wav;
use mixer_tts::config::Config;
use mixer_tts::lm_cond::FrozenEmbeddingTable;
use mixer_tts::synthetic::{tone, voiced_glide};

const SR: u32 = 22050;

fn silence(seconds: f64) -> Vec<f64> {
    vec![0.0; (seconds * SR as f64).round() as usize]
}

fn segment(c: char) -> Vec<f64> {
    let k = (c as u32).saturating_sub('a' as u32) as f64;
    match c {
        'a' | 'e' | 'i' | 'o' | 'u' => voiced_glide(110.0 + 12.0 * k, 130.0 + 9.0 * k, 0.12, SR),
        'a'..='z' => tone(400.0 + 90.0 * k, 0.07, SR, 0.25),
        ' ' => silence(0.05),
        _ => silence(0.1),
    }
}

fn main() -> mixer_tts::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "fixtures".into()));
    std::fs::create_dir_all(&dir).map_err(|e| mixer_tts::Error::io(&dir, e))?;

    let clips = [("hi_there", "hi there."), ("oh_no", "oh, no!"), ("see_me", "see me")];
    let mut manifest = String::from("# id|audio|transcript\n");
    for (id, text) in clips {
        let samples: Vec<f64> = text.chars().flat_map(segment).collect();
        let name = format!("{id}.wav");
        write_wav(&dir.join(&name), &samples, SR)?;
        manifest.push_str(&format!("{id}|{name}|{text}\n"));
    }
    let path = dir.join("manifest.txt");
    std::fs::write(&path, manifest).map_err(|e| mixer_tts::Error::io(&path, e))?;

    FrozenEmbeddingTable::demo().save(&dir.join("lm_table.txt"))?;

    let mut cfg = Config::desk(192, 3, 4);
    cfg.model.dropout = 0.0;
    cfg.model.duration_predictor.dropout = 0.0;
    cfg.model.pitch_predictor.dropout = 0.0;
    cfg.model.aligner.use_prior = true;
    cfg.train.steps = 500;
    cfg.train.batch_size = 3;
    cfg.train.accum = 1;
    cfg.train.base_lr = 0.003;
    cfg.train.warmup = 100;
    cfg.train.checkpoint_every = 250;
    let path = dir.join("desk.toml");
    std::fs::write(&path, cfg.to_toml()).map_err(|e| mixer_tts::Error::io(&path, e))?;
    println!("wrote fixtures to {}", dir.display());
    Ok(())
}
