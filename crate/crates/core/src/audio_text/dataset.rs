use serde::{Deserialize, Serialize};

use crate::adaptors::PitchContour;
use crate::error::{Error, Result};
use crate::numerics::par;

use super::features::{estimate_f0, mel_spectrogram, F0Config, MelConfig, MelSpectrogram};
use super::files::{read_phoneme_ids, read_pitch_file, read_wav, Utterance};
use super::vocab::SymbolVocab;

/// Where symbol ids come from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TextMode {
    /// Characters of the transcript through [`SymbolVocab`].
    #[default]
    Characters,
    /// Pre-tokenized id files named in the manifest.
    Phonemes,
}

#[derive(Clone, Debug, Default)]
pub struct DatasetOptions {
    pub mel: MelConfig,
    pub f0: F0Config,
    pub text_mode: TextMode,
}

/// A featurized training utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub id: String,
    pub transcript: String,
    pub symbols: Vec<usize>,
    pub mel: MelSpectrogram,
    pub pitch: PitchContour,
}

fn featurize(u: &Utterance, vocab: &SymbolVocab, opts: &DatasetOptions) -> Result<Example> {
    let (samples, sr) = read_wav(&u.audio)?;
    let mel = mel_spectrogram(&samples, sr, &opts.mel)?;
    let pitch = match &u.pitch {
        Some(p) => {
            let c = read_pitch_file(p)?;
            if c.len() != mel.frames {
                return Err(Error::Format(format!(
                    "{}: {} pitch values for {} mel frames",
                    p.display(),
                    c.len(),
                    mel.frames
                )));
            }
            c
        }
        None => estimate_f0(&samples, sr, &opts.mel, &opts.f0)?,
    };
    let symbols = match opts.text_mode {
        TextMode::Characters => vocab.tokenize(&u.transcript)?.ids,
        TextMode::Phonemes => {
            let p = u
                .phonemes
                .as_ref()
                .ok_or_else(|| Error::Format(format!("utterance {} has no phoneme file", u.id)))?;
            read_phoneme_ids(p)?
        }
    };
    Ok(Example {
        id: u.id.clone(),
        transcript: u.transcript.clone(),
        symbols,
        mel,
        pitch,
    })
}

/// Reads audio and extracts features for every utterance, concurrently when
/// the parallel backend is enabled. Output order matches the manifest.
pub fn load_dataset(utterances: &[Utterance], vocab: &SymbolVocab, opts: &DatasetOptions) -> Result<Vec<Example>> {
    if utterances.is_empty() {
        return Err(Error::Format("dataset is empty".into()));
    }
    par::map(utterances, |u| featurize(u, vocab, opts))
        .into_iter()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio_text::{parse_manifest, write_pitch_file, write_wav};

    #[test]
    fn loads_features_in_manifest_order() {
        let dir = tempfile::tempdir().unwrap();
        let tone: Vec<f64> = (0..5000).map(|i| 0.4 * (i as f64 * 0.06).sin()).collect();
        write_wav(&dir.path().join("a.wav"), &tone, 22050).unwrap();
        write_wav(&dir.path().join("b.wav"), &tone[..3000], 22050).unwrap();
        let frames_b = 3000usize.div_ceil(275);
        write_pitch_file(
            &dir.path().join("b.f0"),
            &PitchContour::new(vec![150.0; frames_b]).unwrap(),
        )
        .unwrap();
        let text = "a|a.wav|Hello.\nb|b.wav|World|b.f0\n";
        let utts = parse_manifest(text, &dir.path().join("m"), dir.path()).unwrap();
        let ex = load_dataset(&utts, &SymbolVocab::default(), &DatasetOptions::default()).unwrap();
        assert_eq!(ex[0].id, "a");
        assert_eq!(ex[0].mel.frames, 5000usize.div_ceil(275));
        assert_eq!(ex[0].pitch.len(), ex[0].mel.frames);
        assert_eq!(ex[0].symbols.len(), 6);
        assert_eq!(ex[1].pitch.frame_f0, vec![150.0; frames_b]);
    }

    #[test]
    fn pitch_length_mismatch_and_missing_phonemes() {
        let dir = tempfile::tempdir().unwrap();
        write_wav(&dir.path().join("a.wav"), &[0.1; 1000], 22050).unwrap();
        write_pitch_file(&dir.path().join("a.f0"), &PitchContour::new(vec![1.0; 2]).unwrap()).unwrap();
        let utts = parse_manifest("a|a.wav|x|a.f0\n", &dir.path().join("m"), dir.path()).unwrap();
        let v = SymbolVocab::default();
        assert!(matches!(
            load_dataset(&utts, &v, &DatasetOptions::default()),
            Err(Error::Format(_))
        ));
        let utts = parse_manifest("a|a.wav|x\n", &dir.path().join("m"), dir.path()).unwrap();
        let opts = DatasetOptions {
            text_mode: TextMode::Phonemes,
            ..Default::default()
        };
        assert!(load_dataset(&utts, &v, &opts).is_err());
        assert!(load_dataset(&[], &v, &DatasetOptions::default()).is_err());
    }
}
