use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use crate::adaptors::PitchContour;
use crate::error::{Error, Result};

use super::features::MelSpectrogram;

/// One manifest record.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Utterance {
    pub id: String,
    pub audio: PathBuf,
    pub transcript: String,
    pub pitch: Option<PathBuf>,
    pub phonemes: Option<PathBuf>,
}

/// Parses `id|audio_path|transcript[|pitch_path][|phoneme_path]` lines.
/// Blank lines and `#` comments are skipped; relative paths resolve against
/// `base`. Empty optional fields count as absent.
pub fn parse_manifest(text: &str, path: &Path, base: &Path) -> Result<Vec<Utterance>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let err = |msg: &str| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: msg.to_string(),
        };
        let fields: Vec<&str> = line.split('|').collect();
        if fields.len() < 3 {
            return Err(err("expected `id|audio|transcript[|pitch][|phonemes]`"));
        }
        if fields.len() > 5 {
            return Err(err("too many fields"));
        }
        let (id, audio, transcript) = (fields[0].trim(), fields[1].trim(), fields[2].trim());
        if id.is_empty() {
            return Err(err("empty id"));
        }
        if audio.is_empty() {
            return Err(err("empty audio path"));
        }
        if transcript.is_empty() {
            return Err(err("empty transcript"));
        }
        let opt = |k: usize| {
            fields
                .get(k)
                .map(|s| s.trim())
                .filter(|s| !s.is_empty())
                .map(|s| base.join(s))
        };
        out.push(Utterance {
            id: id.to_string(),
            audio: base.join(audio),
            transcript: transcript.to_string(),
            pitch: opt(3),
            phonemes: opt(4),
        });
    }
    Ok(out)
}

pub fn load_manifest(path: &Path) -> Result<Vec<Utterance>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_manifest(&text, path, base)
}

/// Reads 16-bit mono PCM as samples in `[-1, 1)` plus the sample rate.
pub fn read_wav(path: &Path) -> Result<(Vec<f64>, u32)> {
    let reader = hound::WavReader::open(path).map_err(|e| Error::Audio(format!("{}: {e}", path.display())))?;
    let spec = reader.spec();
    if spec.channels != 1 || spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
        return Err(Error::Audio(format!(
            "{}: expected 16-bit mono PCM, found {} channel(s) at {} bits",
            path.display(),
            spec.channels,
            spec.bits_per_sample
        )));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::Audio(format!("{}: {e}", path.display())))?;
    Ok((samples, spec.sample_rate))
}

/// Writes samples (clipped to `[-1, 1]`) as 16-bit mono PCM.
pub fn write_wav(path: &Path, samples: &[f64], sample_rate: u32) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let audio_err = |e: hound::Error| Error::Audio(format!("{}: {e}", path.display()));
    let mut w = hound::WavWriter::create(path, spec).map_err(audio_err)?;
    for &s in samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        w.write_sample(v).map_err(audio_err)?;
    }
    w.finalize().map_err(audio_err)
}

const MELF_MAGIC: &[u8; 4] = b"MELF";

/// 16-byte header (`MELF`, u32 frames, u32 mels, u32 reserved) then
/// little-endian f32 values, row-major.
pub fn write_melf(path: &Path, mel: &MelSpectrogram) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + 4 * mel.data.len());
    buf.extend_from_slice(MELF_MAGIC);
    buf.extend_from_slice(&(mel.frames as u32).to_le_bytes());
    buf.extend_from_slice(&(mel.n_mels as u32).to_le_bytes());
    buf.extend_from_slice(&0u32.to_le_bytes());
    for v in &mel.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&buf))
        .map_err(|e| Error::io(path, e))
}

pub fn read_melf(path: &Path) -> Result<MelSpectrogram> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 || &bytes[..4] != MELF_MAGIC {
        return Err(Error::Format(format!("{}: bad mel file magic", path.display())));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes")) as usize;
    let (frames, n_mels) = (word(4), word(8));
    let payload = &bytes[16..];
    if payload.len() != 4 * frames * n_mels {
        return Err(Error::Format(format!(
            "{}: header declares {frames} x {n_mels} values but payload has {} bytes",
            path.display(),
            payload.len()
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    MelSpectrogram::new(frames, n_mels, data)
}

/// One Hz value per line; blank lines ignored.
pub fn read_pitch_file(path: &Path) -> Result<PitchContour> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut values = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let s = line.trim();
        if s.is_empty() {
            continue;
        }
        let v: f64 = s.parse().map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: format!("bad pitch value {s:?}: {e}"),
        })?;
        values.push(v);
    }
    PitchContour::new(values)
}

pub fn write_pitch_file(path: &Path, contour: &PitchContour) -> Result<()> {
    let text: String = contour.frame_f0.iter().map(|v| format!("{v}\n")).collect();
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Whitespace-separated non-negative integer symbol ids.
pub fn read_phoneme_ids(path: &Path) -> Result<Vec<usize>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut ids = Vec::new();
    for (i, line) in text.lines().enumerate() {
        for tok in line.split_whitespace() {
            ids.push(tok.parse().map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: format!("bad phoneme id {tok:?}: {e}"),
            })?);
        }
    }
    if ids.is_empty() {
        return Err(Error::Format(format!("{}: no phoneme ids", path.display())));
    }
    Ok(ids)
}
