use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::adaptors::PitchContour;
use crate::error::{Error, Result};
use crate::numerics::par;

/// STFT and mel filterbank settings. Window and hop are in samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MelConfig {
    pub sample_rate: u32,
    pub win_length: usize,
    pub hop_length: usize,
    pub n_fft: usize,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub log_floor: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        // 50 ms window and 12.5 ms hop at 22.05 kHz, truncated to whole samples
        MelConfig::from_ms(22050, 50.0, 12.5)
    }
}

impl MelConfig {
    /// Window and hop given in milliseconds, truncated to whole samples.
    pub fn from_ms(sample_rate: u32, win_ms: f64, hop_ms: f64) -> Self {
        let samples = |ms: f64| (ms * sample_rate as f64 / 1000.0).floor() as usize;
        MelConfig {
            sample_rate,
            win_length: samples(win_ms),
            hop_length: samples(hop_ms),
            n_fft: 2048,
            n_mels: 80,
            fmin: 0.0,
            fmax: 8000.0,
            log_floor: 1e-5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.hop_length == 0 || self.hop_length >= self.win_length {
            return fail(format!(
                "hop {} must be in (0, win {})",
                self.hop_length, self.win_length
            ));
        }
        if self.n_fft < self.win_length {
            return fail(format!("n_fft {} shorter than window {}", self.n_fft, self.win_length));
        }
        if self.n_mels == 0 {
            return fail("n_mels must be positive".into());
        }
        let nyquist = self.sample_rate as f64 / 2.0;
        if !(0.0 <= self.fmin && self.fmin < self.fmax && self.fmax <= nyquist) {
            return fail(format!("need 0 <= fmin < fmax <= {nyquist}"));
        }
        if !(self.log_floor > 0.0) {
            return fail("log_floor must be positive".into());
        }
        Ok(())
    }

    /// Frames produced for `samples` input samples.
    pub fn num_frames(&self, samples: usize) -> usize {
        samples.div_ceil(self.hop_length).max(1)
    }

    pub fn frame_seconds(&self) -> f64 {
        self.hop_length as f64 / self.sample_rate as f64
    }
}

/// Log-mel spectrogram, row-major `[frames, n_mels]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MelSpectrogram {
    pub frames: usize,
    pub n_mels: usize,
    pub data: Vec<f32>,
}

impl MelSpectrogram {
    pub fn new(frames: usize, n_mels: usize, data: Vec<f32>) -> Result<Self> {
        if frames * n_mels != data.len() || frames == 0 || n_mels == 0 {
            return Err(Error::Format(format!(
                "mel of {frames} x {n_mels} cannot hold {} values",
                data.len()
            )));
        }
        Ok(MelSpectrogram { frames, n_mels, data })
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        &self.data[t * self.n_mels..(t + 1) * self.n_mels]
    }
}

fn hz_to_mel(f: f64) -> f64 {
    const F_SP: f64 = 200.0 / 3.0;
    const MIN_LOG_HZ: f64 = 1000.0;
    let min_log_mel = MIN_LOG_HZ / F_SP;
    let logstep = 6.4f64.ln() / 27.0;
    if f >= MIN_LOG_HZ {
        min_log_mel + (f / MIN_LOG_HZ).ln() / logstep
    } else {
        f / F_SP
    }
}

fn mel_to_hz(m: f64) -> f64 {
    const F_SP: f64 = 200.0 / 3.0;
    let min_log_mel = 1000.0 / F_SP;
    let logstep = 6.4f64.ln() / 27.0;
    if m >= min_log_mel {
        1000.0 * ((m - min_log_mel) * logstep).exp()
    } else {
        m * F_SP
    }
}

/// Area-normalized triangular filters on the Slaney mel scale,
/// `[n_mels, n_fft / 2 + 1]`.
pub fn mel_filterbank(cfg: &MelConfig) -> Vec<Vec<f64>> {
    let bins = cfg.n_fft / 2 + 1;
    let bin_hz: Vec<f64> = (0..bins)
        .map(|k| k as f64 * cfg.sample_rate as f64 / cfg.n_fft as f64)
        .collect();
    let (lo, hi) = (hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax));
    let edges: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect();
    (0..cfg.n_mels)
        .map(|m| {
            let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
            let norm = 2.0 / (r - l);
            bin_hz
                .iter()
                .map(|&f| {
                    let up = (f - l) / (c - l);
                    let down = (r - f) / (r - c);
                    up.min(down).max(0.0) * norm
                })
                .collect()
        })
        .collect()
}

fn reflect(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let m = i.rem_euclid(period);
    (if m < len as isize { m } else { period - m }) as usize
}

/// `width` samples centered on `center`, reflected at the signal edges.
fn centered_frame(samples: &[f64], center: usize, width: usize) -> impl Iterator<Item = f64> + '_ {
    let start = center as isize - (width / 2) as isize;
    (0..width).map(move |j| samples[reflect(start + j as isize, samples.len())])
}

fn hann_periodic(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / len as f64).cos())
        .collect()
}

fn check_audio(samples: &[f64], sample_rate: u32, expected: u32) -> Result<()> {
    if sample_rate != expected {
        return Err(Error::Audio(format!(
            "sample rate {sample_rate} Hz does not match the configured {expected} Hz"
        )));
    }
    if samples.is_empty() {
        return Err(Error::Audio("no samples".into()));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::Audio("non-finite sample".into()));
    }
    Ok(())
}

/// Centered STFT magnitude through the mel filterbank, then natural log
/// with a floor. Frame `t` is centered on sample `t * hop`.
pub fn mel_spectrogram(samples: &[f64], sample_rate: u32, cfg: &MelConfig) -> Result<MelSpectrogram> {
    cfg.validate()?;
    check_audio(samples, sample_rate, cfg.sample_rate)?;
    let frames = cfg.num_frames(samples.len());
    let bank = mel_filterbank(cfg);
    let n_fft = cfg.n_fft;
    let mut window = vec![0.0; n_fft];
    let off = (n_fft - cfg.win_length) / 2;
    window[off..off + cfg.win_length].copy_from_slice(&hann_periodic(cfg.win_length));
    let fft: Arc<dyn Fft<f64>> = FftPlanner::new().plan_fft_forward(n_fft);
    let bins = n_fft / 2 + 1;
    let rows = par::map_range(frames, |t| {
        let mut buf: Vec<Complex<f64>> = centered_frame(samples, t * cfg.hop_length, n_fft)
            .zip(&window)
            .map(|(x, w)| Complex::new(x * w, 0.0))
            .collect();
        fft.process(&mut buf);
        let mag: Vec<f64> = buf[..bins].iter().map(|c| c.norm()).collect();
        bank.iter()
            .map(|filt| {
                let e: f64 = filt.iter().zip(&mag).map(|(a, b)| a * b).sum();
                e.max(cfg.log_floor).ln() as f32
            })
            .collect::<Vec<f32>>()
    });
    MelSpectrogram::new(frames, cfg.n_mels, rows.concat())
}

/// Autocorrelation pitch tracker settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct F0Config {
    pub fmin: f64,
    pub fmax: f64,
    /// Analysis window in samples, centered on each mel frame.
    pub frame_length: usize,
    /// Minimum normalized autocorrelation peak for a voiced frame.
    pub voicing_threshold: f64,
    /// Minimum RMS amplitude for a voiced frame.
    pub min_rms: f64,
}

impl Default for F0Config {
    fn default() -> Self {
        F0Config {
            fmin: 65.0,
            fmax: 500.0,
            frame_length: 1024,
            voicing_threshold: 0.6,
            min_rms: 1e-3,
        }
    }
}

fn frame_f0(frame: &[f64], sr: f64, cfg: &F0Config, fft: &dyn Fft<f64>, ifft: &dyn Fft<f64>) -> f64 {
    let w = frame.len();
    let energy: Vec<f64> = std::iter::once(0.0)
        .chain(frame.iter().scan(0.0, |s, x| {
            *s += x * x;
            Some(*s)
        }))
        .collect();
    let total = energy[w];
    if (total / w as f64).sqrt() < cfg.min_rms {
        return 0.0;
    }
    let mut buf: Vec<Complex<f64>> = frame.iter().map(|&x| Complex::new(x, 0.0)).collect();
    buf.resize(fft.len(), Complex::new(0.0, 0.0));
    fft.process(&mut buf);
    buf.iter_mut().for_each(|c| *c = Complex::new(c.norm_sqr(), 0.0));
    ifft.process(&mut buf);
    let scale = 1.0 / fft.len() as f64;
    let lag_min = (sr / cfg.fmax).floor().max(1.0) as usize;
    let lag_max = ((sr / cfg.fmin).ceil() as usize).min(w / 2);
    if lag_max <= lag_min + 1 {
        return 0.0;
    }
    let r: Vec<f64> = (lag_min - 1..=lag_max + 1)
        .map(|lag| {
            let e1 = energy[w - lag];
            let e2 = total - energy[lag];
            let denom = (e1 * e2).sqrt();
            if denom > 0.0 {
                buf[lag].re * scale / denom
            } else {
                0.0
            }
        })
        .collect();
    // r[i] is the normalized autocorrelation at lag (lag_min - 1 + i)
    let inner = 1..r.len() - 1;
    let best = inner.clone().map(|i| r[i]).fold(f64::NEG_INFINITY, f64::max);
    if best < cfg.voicing_threshold {
        return 0.0;
    }
    let Some(i) = inner
        .clone()
        .find(|&i| r[i] >= 0.9 * best && r[i] >= r[i - 1] && r[i] >= r[i + 1])
    else {
        return 0.0;
    };
    let (a, b, c) = (r[i - 1], r[i], r[i + 1]);
    let curvature = a - 2.0 * b + c;
    let shift = if curvature < 0.0 {
        0.5 * (a - c) / curvature
    } else {
        0.0
    };
    let lag = (lag_min - 1 + i) as f64 + shift.clamp(-0.5, 0.5);
    sr / lag
}

/// Per-mel-frame F0 in Hz by normalized autocorrelation, 0 for unvoiced
/// frames. Always yields exactly as many values as [`mel_spectrogram`] has
/// frames.
pub fn estimate_f0(samples: &[f64], sample_rate: u32, mel: &MelConfig, cfg: &F0Config) -> Result<PitchContour> {
    mel.validate()?;
    check_audio(samples, sample_rate, mel.sample_rate)?;
    if !(0.0 < cfg.fmin && cfg.fmin < cfg.fmax) || cfg.frame_length < 4 {
        return Err(Error::Config("pitch range or frame length invalid".into()));
    }
    let frames = mel.num_frames(samples.len());
    let sr = sample_rate as f64;
    let n = (2 * cfg.frame_length).next_power_of_two();
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(n);
    let ifft = planner.plan_fft_inverse(n);
    let f0 = par::map_range(frames, |t| {
        let frame: Vec<f64> = centered_frame(samples, t * mel.hop_length, cfg.frame_length).collect();
        frame_f0(&frame, sr, cfg, fft.as_ref(), ifft.as_ref())
    });
    PitchContour::new(f0)
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn sine(freq: f64, amp: f64, n: usize, sr: f64) -> Vec<f64> {
        (0..n)
            .map(|i| amp * (2.0 * std::f64::consts::PI * freq * i as f64 / sr).sin())
            .collect()
    }

    #[test]
    fn default_geometry() {
        let c = MelConfig::default();
        assert_eq!((c.win_length, c.hop_length, c.n_fft, c.n_mels), (1102, 275, 2048, 80));
        c.validate().unwrap();
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut c = MelConfig::default();
        c.hop_length = c.win_length;
        assert!(c.validate().is_err());
        let mut c = MelConfig::default();
        c.n_fft = 1000;
        assert!(c.validate().is_err());
    }

    #[test]
    fn silence_is_floor() {
        let c = MelConfig::default();
        let m = mel_spectrogram(&vec![0.0; 5000], 22050, &c).unwrap();
        assert_eq!(m.frames, 5000usize.div_ceil(275));
        let floor = (c.log_floor.ln()) as f32;
        assert!(m.data.iter().all(|&v| v == floor));
    }

    #[test]
    fn wrong_rate_and_empty_audio_rejected() {
        let c = MelConfig::default();
        assert!(matches!(mel_spectrogram(&[0.0; 100], 16000, &c), Err(Error::Audio(_))));
        assert!(mel_spectrogram(&[], 22050, &c).is_err());
    }

    #[test]
    fn short_audio_gives_one_frame() {
        let c = MelConfig::default();
        let m = mel_spectrogram(&sine(300.0, 0.5, 100, 22050.0), 22050, &c).unwrap();
        assert_eq!(m.frames, 1);
    }

    #[test]
    fn filterbank_rows_cover_their_band() {
        let c = MelConfig::default();
        let bank = mel_filterbank(&c);
        assert_eq!(bank.len(), 80);
        assert!(bank.iter().all(|row| row.len() == 1025 && row.iter().any(|&v| v > 0.0)));
        assert!(bank.iter().flatten().all(|&v| v >= 0.0));
    }

    #[test]
    fn sine_peaks_at_its_mel_bin() {
        let c = MelConfig::default();
        let m = mel_spectrogram(&sine(440.0, 0.5, 22050, 22050.0), 22050, &c).unwrap();
        let bank = mel_filterbank(&c);
        // filter with the largest response at the bin nearest 440 Hz
        let k = (440.0 * c.n_fft as f64 / 22050.0).round() as usize;
        let expect = (0..80).max_by(|&a, &b| bank[a][k].total_cmp(&bank[b][k])).unwrap();
        for t in 4..m.frames - 4 {
            let row = m.frame(t);
            let arg = (0..80).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
            assert_eq!(arg, expect, "frame {t}");
        }
    }

    #[test]
    fn doubling_amplitude_adds_ln2() {
        let c = MelConfig::default();
        let x = sine(440.0, 0.25, 8000, 22050.0);
        let x2: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let a = mel_spectrogram(&x, 22050, &c).unwrap();
        let b = mel_spectrogram(&x2, 22050, &c).unwrap();
        let floor = c.log_floor.ln() as f32;
        let mut checked = 0;
        for (u, v) in a.data.iter().zip(&b.data) {
            if *u > floor + 1.0 {
                assert_abs_diff_eq!((v - u) as f64, 2f64.ln(), epsilon = 1e-4);
                checked += 1;
            }
        }
        assert!(checked > 100);
    }

    #[test]
    fn tone_f0_within_three_percent() {
        let c = MelConfig::default();
        for freq in [110.0, 220.0, 330.0] {
            let x = sine(freq, 0.5, 22050, 22050.0);
            let f0 = estimate_f0(&x, 22050, &c, &F0Config::default()).unwrap();
            assert_eq!(f0.len(), c.num_frames(x.len()));
            for &v in &f0.frame_f0[4..f0.len() - 4] {
                assert!((v - freq).abs() <= 0.03 * freq, "{freq}: {v}");
            }
        }
    }

    #[test]
    fn noise_mostly_unvoiced_and_silence_unvoiced() {
        let c = MelConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let x: Vec<f64> = (0..22050).map(|_| rng.random_range(-0.5..0.5)).collect();
        let f0 = estimate_f0(&x, 22050, &c, &F0Config::default()).unwrap();
        let unvoiced = f0.frame_f0.iter().filter(|&&v| v == 0.0).count();
        assert!(unvoiced * 2 > f0.len(), "{unvoiced}/{}", f0.len());
        let s = estimate_f0(&vec![0.0; 3000], 22050, &c, &F0Config::default()).unwrap();
        assert!(s.frame_f0.iter().all(|&v| v == 0.0));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn frame_counts_agree(n in 1usize..6000) {
            let c = MelConfig::default();
            let x: Vec<f64> = (0..n).map(|i| ((i * 7919) % 113) as f64 / 200.0 - 0.25).collect();
            let m = mel_spectrogram(&x, 22050, &c).unwrap();
            let f = estimate_f0(&x, 22050, &c, &F0Config::default()).unwrap();
            prop_assert_eq!(m.frames, n.div_ceil(275));
            prop_assert_eq!(f.len(), m.frames);
        }
    }
}
