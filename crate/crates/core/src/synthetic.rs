//! Deterministic synthetic audio and training examples for tests, fixtures
//! and benchmarks.

use rand::Rng;

use crate::adaptors::PitchContour;
use crate::audio_text::Example;
use crate::audio_text::{MelSpectrogram, SymbolVocab};

/// A pure tone.
pub fn tone(freq: f64, seconds: f64, sample_rate: u32, amplitude: f64) -> Vec<f64> {
    let n = (seconds * sample_rate as f64).round() as usize;
    (0..n)
        .map(|i| amplitude * (2.0 * std::f64::consts::PI * freq * i as f64 / sample_rate as f64).sin())
        .collect()
}

/// A voiced, vowel-like clip: a harmonic series whose fundamental glides
/// from `f0_start` to `f0_end`, with a few spectral peaks and smooth onset
/// and offset.
pub fn voiced_glide(f0_start: f64, f0_end: f64, seconds: f64, sample_rate: u32) -> Vec<f64> {
    let sr = sample_rate as f64;
    let n = (seconds * sr).round() as usize;
    let formants = [(700.0, 1.0), (1200.0, 0.6), (2600.0, 0.25)];
    let mut phase = 0.0;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let pos = i as f64 / n.max(1) as f64;
        let f0 = f0_start + (f0_end - f0_start) * pos;
        phase += 2.0 * std::f64::consts::PI * f0 / sr;
        let mut s = 0.0;
        for h in 1..=20 {
            let fh = f0 * h as f64;
            if fh > sr / 2.0 {
                break;
            }
            let gain: f64 = formants
                .iter()
                .map(|&(fc, g)| g / (1.0 + ((fh - fc) / 150.0).powi(2)))
                .sum();
            s += gain * (h as f64 * phase).sin();
        }
        let envelope = (pos * 20.0).min(1.0) * ((1.0 - pos) * 20.0).min(1.0);
        out.push(0.2 * envelope * s);
    }
    out
}

/// A random featurized example with `tokens` letter symbols and `frames` mel
/// frames; the transcript spells the symbols.
pub fn random_example<R: Rng>(id: &str, rng: &mut R, tokens: usize, frames: usize, n_mels: usize) -> Example {
    let vocab = SymbolVocab::default();
    let letters: Vec<usize> = ('a'..='z').filter_map(|c| vocab.id(c)).collect();
    let symbols: Vec<usize> = (0..tokens)
        .map(|_| letters[rng.random_range(0..letters.len())])
        .collect();
    let data = (0..frames * n_mels).map(|_| rng.random_range(-4.0f32..0.0)).collect();
    let f0 = (0..frames)
        .map(|_| {
            if rng.random_bool(0.8) {
                rng.random_range(90.0..250.0)
            } else {
                0.0
            }
        })
        .collect();
    Example {
        id: id.to_string(),
        transcript: vocab.detokenize(&symbols),
        symbols,
        mel: MelSpectrogram::new(frames, n_mels, data).expect("consistent mel"),
        pitch: PitchContour::new(f0).expect("non-negative pitch"),
    }
}
