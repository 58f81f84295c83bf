//! Data frontend: symbol tokenization, log-mel features, F0 estimation, and
//! the file formats around them.

mod dataset;
mod features;
mod files;
mod vocab;

pub use dataset::{load_dataset, DatasetOptions, Example, TextMode};
pub use features::{estimate_f0, mel_filterbank, mel_spectrogram, F0Config, MelConfig, MelSpectrogram};
pub use files::{
    load_manifest, parse_manifest, read_melf, read_phoneme_ids, read_pitch_file, read_wav, write_melf,
    write_pitch_file, write_wav, Utterance,
};
pub use vocab::{SymbolSequence, SymbolVocab};
