//! Acoustic front end: WAV input, log-mel filterbank energies, and frame
//! splicing/subsampling down to the model's T×345 input at 100 ms per frame.

use crate::container::{Container, NamedArray};
use crate::{Error, Real, Result};
use rustfft::{num_complex::Complex, FftPlanner};
use std::path::Path;

pub const DEFAULT_N_MELS: usize = 23;
pub const DEFAULT_CONTEXT: usize = 7;
pub const DEFAULT_SUBSAMPLE: usize = 10;
pub const DEFAULT_WIN_S: Real = 0.025;
pub const DEFAULT_HOP_S: Real = 0.010;
/// Energy floor added before the log so silence stays finite.
pub const ENERGY_FLOOR: Real = 1e-10;

/// Mono audio samples at a fixed rate.
#[derive(Clone, Debug)]
pub struct Waveform {
    pub samples: Vec<Real>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<Real>, sample_rate: u32) -> Result<Self> {
        if sample_rate != 8000 && sample_rate != 16000 {
            return Err(Error::input(format!(
                "sample rate must be 8000 or 16000 Hz, got {sample_rate}"
            )));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::input("waveform contains non-finite samples"));
        }
        Ok(Waveform { samples, sample_rate })
    }

    /// Read a mono 16-bit PCM WAV file.
    pub fn read_wav(path: &Path) -> Result<Self> {
        let reader = hound::WavReader::open(path)
            .map_err(|e| Error::format(format!("wav open {}: {e}", path.display())))?;
        let spec = reader.spec();
        if spec.channels != 1 {
            return Err(Error::input(format!("wav must be mono, got {} channels", spec.channels)));
        }
        if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
            return Err(Error::input("wav must be 16-bit PCM"));
        }
        let samples: std::result::Result<Vec<i16>, _> = reader.into_samples().collect();
        let samples =
            samples.map_err(|e| Error::format(format!("wav decode: {e}")))?;
        Waveform::new(
            samples.into_iter().map(|s| s as Real / 32768.0).collect(),
            spec.sample_rate,
        )
    }

    pub fn write_wav(&self, path: &Path) -> Result<()> {
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: self.sample_rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut writer = hound::WavWriter::create(path, spec)
            .map_err(|e| Error::format(format!("wav create: {e}")))?;
        for &s in &self.samples {
            let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
            writer.write_sample(v).map_err(|e| Error::format(format!("wav write: {e}")))?;
        }
        writer.finalize().map_err(|e| Error::format(format!("wav finalize: {e}")))?;
        Ok(())
    }
}

/// The model-facing feature matrix: T frames of F values at `frame_shift_s`
/// seconds per frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    /// Row-major T×F.
    pub frames: Vec<Real>,
    pub t: usize,
    pub f: usize,
    pub frame_shift_s: Real,
}

impl FeatureSequence {
    pub fn new(frames: Vec<Real>, t: usize, f: usize, frame_shift_s: Real) -> Result<Self> {
        if frames.len() != t * f {
            return Err(Error::shape(format!(
                "feature buffer has {} values, expected {t}x{f}",
                frames.len()
            )));
        }
        if frame_shift_s <= 0.0 {
            return Err(Error::contract("frame_shift_s must be positive"));
        }
        if frames.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("features contain non-finite values"));
        }
        Ok(FeatureSequence { frames, t, f, frame_shift_s })
    }

    pub fn row(&self, t: usize) -> &[Real] {
        &self.frames[t * self.f..(t + 1) * self.f]
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new(serde_json::json!({
            "kind": "features",
            "frame_shift_s": self.frame_shift_s,
        }));
        c.push(NamedArray::from_reals("features", vec![self.t, self.f], &self.frames));
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let arr = c.get("features")?;
        if arr.shape.len() != 2 {
            return Err(Error::format("features array must be 2-d"));
        }
        let frame_shift_s = c.meta["frame_shift_s"].as_f64().unwrap_or(0.1) as Real;
        FeatureSequence::new(arr.to_reals(), arr.shape[0], arr.shape[1], frame_shift_s)
    }
}

/// Log mel-filterbank energies: Hann window, power spectrum over a radix-2
/// FFT (zero-padded to the next power of two), triangular mel filters, then
/// `ln(energy + floor)`. Frames that would overrun the signal are dropped.
pub fn log_mel(
    w: &Waveform,
    n_mels: usize,
    win_s: Real,
    hop_s: Real,
) -> Result<(Vec<Real>, usize)> {
    let sr = w.sample_rate as Real;
    let win = (win_s * sr).round() as usize;
    let hop = (hop_s * sr).round() as usize;
    if w.samples.is_empty() || w.samples.len() < win {
        return Err(Error::input(format!(
            "waveform too short: {} samples for a {win}-sample window",
            w.samples.len()
        )));
    }
    let n_fft = win.next_power_of_two();
    let n_bins = n_fft / 2 + 1;
    let t0 = (w.samples.len() - win) / hop + 1;

    let hann: Vec<Real> =
        (0..win).map(|n| 0.5 - 0.5 * (2.0 * PI * n as Real / (win - 1) as Real).cos()).collect();
    let filters = mel_filterbank(n_mels, n_fft, sr);

    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(n_fft);
    let mut out = vec![0.0; t0 * n_mels];
    let mut buf = vec![Complex::new(0.0f64, 0.0f64); n_fft];
    for frame in 0..t0 {
        let start = frame * hop;
        for (i, c) in buf.iter_mut().enumerate() {
            *c = if i < win {
                Complex::new((w.samples[start + i] * hann[i]) as f64, 0.0)
            } else {
                Complex::new(0.0, 0.0)
            };
        }
        fft.process(&mut buf);
        let power: Vec<Real> =
            buf[..n_bins].iter().map(|c| (c.norm_sqr()) as Real).collect();
        for (m, filter) in filters.iter().enumerate() {
            let energy: Real = filter.iter().map(|&(bin, wgt)| wgt * power[bin]).sum();
            out[frame * n_mels + m] = (energy + ENERGY_FLOOR).ln();
        }
    }
    Ok((out, t0))
}

const PI: Real = std::f64::consts::PI as Real;

fn hz_to_mel(f: Real) -> Real {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: Real) -> Real {
    700.0 * ((10.0 as Real).powf(m / 2595.0) - 1.0)
}

/// Triangular mel filters as sparse (bin, weight) lists over FFT bins.
fn mel_filterbank(n_mels: usize, n_fft: usize, sr: Real) -> Vec<Vec<(usize, Real)>> {
    let n_bins = n_fft / 2 + 1;
    let mel_lo = hz_to_mel(0.0);
    let mel_hi = hz_to_mel(sr / 2.0);
    let points: Vec<Real> = (0..n_mels + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as Real / (n_mels + 1) as Real))
        .collect();
    let bin_hz = |b: usize| b as Real * sr / n_fft as Real;
    let mut filters = Vec::with_capacity(n_mels);
    for m in 0..n_mels {
        let (lo, center, hi) = (points[m], points[m + 1], points[m + 2]);
        let mut taps = Vec::new();
        for b in 0..n_bins {
            let f = bin_hz(b);
            let w = if f >= lo && f <= center && center > lo {
                (f - lo) / (center - lo)
            } else if f > center && f <= hi && hi > center {
                (hi - f) / (hi - center)
            } else {
                0.0
            };
            if w > 0.0 {
                taps.push((b, w));
            }
        }
        filters.push(taps);
    }
    filters
}

/// Concatenate each frame with ±`context` neighbors (edges replicated), then
/// keep every `factor`-th frame. Output width is `n_mels * (2*context + 1)`
/// and the frame shift becomes `factor` times the input hop.
pub fn splice_subsample(
    mel: &[Real],
    t0: usize,
    n_mels: usize,
    context: usize,
    factor: usize,
    hop_s: Real,
) -> Result<FeatureSequence> {
    if t0 == 0 {
        return Err(Error::input("splice_subsample needs at least one frame"));
    }
    if factor == 0 {
        return Err(Error::contract("subsample factor must be >= 1"));
    }
    let width = n_mels * (2 * context + 1);
    let t_out = t0.div_ceil(factor);
    let mut frames = Vec::with_capacity(t_out * width);
    for out_idx in 0..t_out {
        let t = out_idx * factor;
        for offset in -(context as isize)..=(context as isize) {
            let src = (t as isize + offset).clamp(0, t0 as isize - 1) as usize;
            frames.extend_from_slice(&mel[src * n_mels..(src + 1) * n_mels]);
        }
    }
    FeatureSequence::new(frames, t_out, width, hop_s * factor as Real)
}

/// Full default pipeline: 23 log-mel bins at 25 ms / 10 ms framing, ±7 frame
/// splicing, ×10 subsampling → T×345 at 100 ms per frame.
pub fn extract_features(w: &Waveform) -> Result<FeatureSequence> {
    extract_features_with(w, DEFAULT_N_MELS, DEFAULT_CONTEXT, DEFAULT_SUBSAMPLE, false)
}

pub fn extract_features_with(
    w: &Waveform,
    n_mels: usize,
    context: usize,
    factor: usize,
    cmvn: bool,
) -> Result<FeatureSequence> {
    let (mel, t0) = log_mel(w, n_mels, DEFAULT_WIN_S, DEFAULT_HOP_S)?;
    let mut feats = splice_subsample(&mel, t0, n_mels, context, factor, DEFAULT_HOP_S)?;
    if cmvn {
        apply_cmvn(&mut feats);
    }
    Ok(feats)
}

/// Per-utterance cepstral mean/variance normalization, off by default.
pub fn apply_cmvn(feats: &mut FeatureSequence) {
    let (t, f) = (feats.t, feats.f);
    for j in 0..f {
        let mut mean = 0.0;
        for i in 0..t {
            mean += feats.frames[i * f + j];
        }
        mean /= t as Real;
        let mut var = 0.0;
        for i in 0..t {
            let d = feats.frames[i * f + j] - mean;
            var += d * d;
        }
        var /= t as Real;
        let inv = 1.0 / (var + 1e-10).sqrt();
        for i in 0..t {
            feats.frames[i * f + j] = (feats.frames[i * f + j] - mean) * inv;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn silence_gives_constant_log_floor() {
        let w = Waveform::new(vec![0.0; 8000], 8000).unwrap();
        let (mel, t0) = log_mel(&w, 23, DEFAULT_WIN_S, DEFAULT_HOP_S).unwrap();
        assert!(t0 > 0);
        let expect = ENERGY_FLOOR.ln();
        for v in &mel {
            assert_eq!(*v, expect);
        }
    }

    #[test]
    fn one_second_frame_count() {
        let w = Waveform::new(vec![0.1; 8000], 8000).unwrap();
        let (_, t0) = log_mel(&w, 23, DEFAULT_WIN_S, DEFAULT_HOP_S).unwrap();
        // (8000 - 200)/80 + 1 frames under the drop-overrun rule.
        assert_eq!(t0, 98);
    }

    #[test]
    fn sine_energy_lands_in_matching_mel_bin() {
        // 1 kHz tone at 8 kHz; compare argmax bin with a direct DFT oracle.
        let sr = 8000u32;
        let samples: Vec<Real> =
            (0..8000).map(|n| (2.0 * PI * 1000.0 * n as Real / sr as Real).sin() * 0.5).collect();
        let w = Waveform::new(samples.clone(), sr).unwrap();
        let (mel, _) = log_mel(&w, 23, DEFAULT_WIN_S, DEFAULT_HOP_S).unwrap();
        let argmax_impl = mel[..23]
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;

        // Oracle: naive DFT power of the first windowed frame, same filters.
        let win = 200;
        let n_fft = 256;
        let hann: Vec<Real> = (0..win)
            .map(|n| 0.5 - 0.5 * (2.0 * PI * n as Real / (win - 1) as Real).cos())
            .collect();
        let mut power = vec![0.0; n_fft / 2 + 1];
        for (k, p) in power.iter_mut().enumerate() {
            let (mut re, mut im) = (0.0, 0.0);
            for n in 0..n_fft {
                let x = if n < win { samples[n] * hann[n] } else { 0.0 };
                let ang = -2.0 * PI * (k * n) as Real / n_fft as Real;
                re += x * ang.cos();
                im += x * ang.sin();
            }
            *p = re * re + im * im;
        }
        let filters = mel_filterbank(23, n_fft, sr as Real);
        let oracle: Vec<Real> = filters
            .iter()
            .map(|f| f.iter().map(|&(b, w)| w * power[b]).sum::<Real>())
            .collect();
        let argmax_oracle = oracle
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(argmax_impl, argmax_oracle);
        // And the bin actually covers 1 kHz.
        let center = mel_to_hz(hz_to_mel(0.0) + (hz_to_mel(4000.0)) * (argmax_impl + 1) as Real / 24.0);
        assert!((center - 1000.0).abs() < 300.0, "bin center {center} Hz");
    }

    #[test]
    fn splice_counts_and_constant_rows() {
        let mel = vec![1.5; 10 * 23];
        let fs = splice_subsample(&mel, 10, 23, 7, 10, 0.01).unwrap();
        assert_eq!(fs.t, 1);
        assert_eq!(fs.f, 345);
        assert!((fs.frame_shift_s - 0.1).abs() < 1e-12);
        for v in &fs.frames {
            assert_eq!(*v, 1.5);
        }
    }

    #[test]
    fn splice_matches_index_oracle() {
        let mut r = ChaCha8Rng::seed_from_u64(11);
        let t0 = 50;
        let mel: Vec<Real> = (0..t0 * 23).map(|_| r.gen_range(-2.0..2.0)).collect();
        let fs = splice_subsample(&mel, t0, 23, 7, 10, 0.01).unwrap();
        assert_eq!(fs.t, 5);
        for out_idx in 0..fs.t {
            let t = out_idx * 10;
            let mut expect = Vec::new();
            for off in -7i64..=7 {
                let src = (t as i64 + off).clamp(0, t0 as i64 - 1) as usize;
                expect.extend_from_slice(&mel[src * 23..(src + 1) * 23]);
            }
            assert_eq!(fs.row(out_idx), expect.as_slice());
        }
    }

    #[test]
    fn output_frame_arithmetic_invariant() {
        for t0 in [1usize, 9, 10, 11, 99, 100, 101] {
            let mel = vec![0.0; t0 * 23];
            let fs = splice_subsample(&mel, t0, 23, 7, 10, 0.01).unwrap();
            assert_eq!(fs.t, t0.div_ceil(10));
            assert_eq!(fs.f, 23 * 15);
        }
    }

    #[test]
    fn deterministic_and_scaling_shift() {
        let mut r = ChaCha8Rng::seed_from_u64(12);
        let samples: Vec<Real> = (0..4000).map(|_| r.gen_range(-0.5..0.5)).collect();
        let w1 = Waveform::new(samples.clone(), 8000).unwrap();
        let w2 = Waveform::new(samples.iter().map(|s| s * 2.0).collect(), 8000).unwrap();
        let (m1a, _) = log_mel(&w1, 23, DEFAULT_WIN_S, DEFAULT_HOP_S).unwrap();
        let (m1b, _) = log_mel(&w1, 23, DEFAULT_WIN_S, DEFAULT_HOP_S).unwrap();
        assert_eq!(m1a, m1b);
        let (m2, _) = log_mel(&w2, 23, DEFAULT_WIN_S, DEFAULT_HOP_S).unwrap();
        let shift = 2.0 * (2.0 as Real).ln();
        for (a, b) in m1a.iter().zip(&m2) {
            // Exact once the energy clears the floor.
            if *a > ENERGY_FLOOR.ln() + 5.0 {
                assert!((b - a - shift).abs() < 1e-9, "a={a} b={b}");
            }
        }
    }

    #[test]
    fn empty_waveform_is_input_error() {
        let w = Waveform::new(vec![], 8000).unwrap();
        assert!(matches!(
            log_mel(&w, 23, DEFAULT_WIN_S, DEFAULT_HOP_S),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn wav_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.wav");
        let samples: Vec<Real> = (0..800)
            .map(|n| (2.0 * PI * 440.0 * n as Real / 8000.0).sin() * 0.25)
            .collect();
        let w = Waveform::new(samples, 8000).unwrap();
        w.write_wav(&path).unwrap();
        let back = Waveform::read_wav(&path).unwrap();
        assert_eq!(back.sample_rate, 8000);
        assert_eq!(back.samples.len(), 800);
        for (a, b) in w.samples.iter().zip(&back.samples) {
            assert!((a - b).abs() < 1.0 / 16384.0);
        }
    }

    #[test]
    fn feature_container_round_trip() {
        let fs = FeatureSequence::new(vec![0.25; 3 * 4], 3, 4, 0.1).unwrap();
        let c = fs.to_container();
        let back = FeatureSequence::from_container(&c).unwrap();
        assert_eq!(fs, back);
    }
}
