//! Analysis/synthesis DSP: windowing, STFT, inverse STFT with overlap-add,
//! mel filterbank, and log-mel extraction.
//!
//! Analysis center-pads the waveform by reflection with `frame_len / 2`
//! samples per side and produces `T = floor(N / hop) + 1` frames, so mel
//! frames align one-to-one with target spectra. Synthesis applies the same
//! periodic Hann window and divides the overlap-add sum by the accumulated
//! squared-window envelope (clamped at 1e-8 near the sequence edges).

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

use crate::error::{invalid, Result};
use crate::nn::FrameTensor;
use crate::par;

/// Floor applied to the squared-window envelope before the OLA division.
pub(crate) const ENVELOPE_FLOOR: f32 = 1e-8;

/// STFT/mel configuration. Defaults: 16 kHz, frame length 320, hop 80,
/// FFT size 1024, 80 mel bands over 0-8000 Hz.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralConfig {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub frame_len: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub fmin: f32,
    pub fmax: f32,
    pub log_floor: f32,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            n_fft: 1024,
            frame_len: 320,
            hop: 80,
            n_mels: 80,
            fmin: 0.0,
            fmax: 8_000.0,
            log_floor: 1e-5,
        }
    }
}

impl SpectralConfig {
    /// Number of non-redundant FFT bins (`n_fft / 2 + 1`; 513 at defaults).
    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 {
            return Err(invalid("sample_rate must be positive"));
        }
        if self.hop == 0 || self.hop > self.frame_len || self.frame_len > self.n_fft {
            return Err(invalid(format!(
                "need 1 <= hop <= frame_len <= n_fft, got hop={} frame_len={} n_fft={}",
                self.hop, self.frame_len, self.n_fft
            )));
        }
        if self.frame_len % self.hop != 0 {
            return Err(invalid(format!(
                "frame_len {} must be a multiple of hop {} (streaming emitter contract)",
                self.frame_len, self.hop
            )));
        }
        if self.n_mels == 0 {
            return Err(invalid("n_mels must be >= 1"));
        }
        if self.fmin < 0.0 || self.fmax <= self.fmin {
            return Err(invalid(format!(
                "need 0 <= fmin < fmax, got fmin={} fmax={}",
                self.fmin, self.fmax
            )));
        }
        if self.fmax > self.sample_rate as f32 / 2.0 {
            return Err(invalid(format!(
                "fmax {} exceeds Nyquist {}",
                self.fmax,
                self.sample_rate as f32 / 2.0
            )));
        }
        if !(self.log_floor > 0.0) {
            return Err(invalid("log_floor must be positive"));
        }
        Ok(())
    }
}

/// Magnitude/phase spectrogram, both `[T x n_bins]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    pub amplitude: FrameTensor,
    pub phase: FrameTensor,
}

impl ComplexSpectrogram {
    pub fn new(amplitude: FrameTensor, phase: FrameTensor) -> Result<Self> {
        if amplitude.channels() != phase.channels() || amplitude.frames() != phase.frames() {
            return Err(invalid(format!(
                "amplitude/phase shape mismatch: [{} x {}] vs [{} x {}]",
                amplitude.frames(),
                amplitude.channels(),
                phase.frames(),
                phase.channels()
            )));
        }
        Ok(Self { amplitude, phase })
    }

    pub fn frames(&self) -> usize {
        self.amplitude.frames()
    }
}

/// Natural-log mel energies, `[T x n_mels]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub values: FrameTensor,
}

impl MelSpectrogram {
    pub fn frames(&self) -> usize {
        self.values.frames()
    }

    pub fn n_mels(&self) -> usize {
        self.values.channels()
    }
}

/// Periodic Hann window, `w[n] = 0.5 * (1 - cos(2 pi n / length))`.
pub fn make_window(length: usize) -> Result<Vec<f32>> {
    if length == 0 {
        return Err(invalid("window length must be >= 1"));
    }
    Ok((0..length)
        .map(|n| {
            let x = 2.0 * std::f64::consts::PI * n as f64 / length as f64;
            (0.5 * (1.0 - x.cos())) as f32
        })
        .collect())
}

/// Index into a length-`n` signal under reflection padding (no edge
/// duplication), defined for any integer offset.
fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = (2 * n - 2) as isize;
    let m = i.rem_euclid(period);
    if (m as usize) < n {
        m as usize
    } else {
        (period - m) as usize
    }
}

fn fold_phase(p: f32) -> f32 {
    if p <= -std::f32::consts::PI {
        std::f32::consts::PI
    } else {
        p
    }
}

/// Short-time Fourier transform of a waveform.
pub fn stft(wave: &[f32], cfg: &SpectralConfig) -> Result<ComplexSpectrogram> {
    cfg.validate()?;
    let n = wave.len();
    if n == 0 {
        return Err(invalid("stft input must contain at least one sample"));
    }
    let pad = cfg.frame_len / 2;
    let frames = n / cfg.hop + 1;
    let nb = cfg.n_bins();
    let window = make_window(cfg.frame_len)?;
    let fft = FftPlanner::<f32>::new().plan_fft_forward(cfg.n_fft);

    let mut amplitude = FrameTensor::zeros(frames, nb);
    let mut phase = FrameTensor::zeros(frames, nb);
    par::for_each_chunk_pair_mut(amplitude.data_mut(), phase.data_mut(), nb, |t, arow, prow| {
        let mut buf = vec![Complex::new(0.0f32, 0.0f32); cfg.n_fft];
        let start = (t * cfg.hop) as isize - pad as isize;
        for (i, w) in window.iter().enumerate() {
            let s = wave[reflect_index(start + i as isize, n)];
            buf[i] = Complex::new(s * w, 0.0);
        }
        fft.process(&mut buf);
        for b in 0..nb {
            arow[b] = buf[b].norm();
            prow[b] = fold_phase(buf[b].im.atan2(buf[b].re));
        }
    });
    ComplexSpectrogram::new(amplitude, phase)
}

/// Synthesize one windowed time-domain frame from a magnitude/phase row.
/// Shared by the batch iSTFT and the streaming emitter.
pub(crate) fn synth_frame(
    fft: &Arc<dyn Fft<f32>>,
    buf: &mut [Complex<f32>],
    scratch: &mut [Complex<f32>],
    amp_row: &[f32],
    phase_row: &[f32],
    window: &[f32],
    out: &mut [f32],
) {
    let n_fft = buf.len();
    let nb = n_fft / 2 + 1;
    for b in 0..nb {
        let (s, c) = phase_row[b].sin_cos();
        buf[b] = Complex::new(amp_row[b] * c, amp_row[b] * s);
    }
    for b in 1..nb - 1 {
        buf[n_fft - b] = buf[b].conj();
    }
    fft.process_with_scratch(buf, scratch);
    let scale = 1.0 / n_fft as f32;
    for (i, y) in out.iter_mut().enumerate() {
        *y = buf[i].re * scale * window[i];
    }
}

fn check_spec_dims(spec: &ComplexSpectrogram, cfg: &SpectralConfig) -> Result<()> {
    if spec.amplitude.channels() != cfg.n_bins() {
        return Err(invalid(format!(
            "spectrogram has {} bins, config expects {}",
            spec.amplitude.channels(),
            cfg.n_bins()
        )));
    }
    Ok(())
}

/// Full overlap-add resynthesis without center trimming: returns
/// `(T-1)*hop + frame_len` envelope-normalized samples. This is the raw
/// timeline the streaming emitter produces.
pub fn istft_raw(spec: &ComplexSpectrogram, cfg: &SpectralConfig) -> Result<Vec<f32>> {
    cfg.validate()?;
    check_spec_dims(spec, cfg)?;
    let frames = spec.frames();
    if frames == 0 {
        return Ok(Vec::new());
    }
    let nb = cfg.n_bins();
    let window = make_window(cfg.frame_len)?;
    let fft = FftPlanner::<f32>::new().plan_fft_inverse(cfg.n_fft);
    let scratch_len = fft.get_inplace_scratch_len();

    // synthesize every frame independently, then overlap-add in frame order
    let mut synth = vec![0.0f32; frames * cfg.frame_len];
    par::for_each_chunk_mut(&mut synth, cfg.frame_len, |t, out| {
        let mut buf = vec![Complex::new(0.0f32, 0.0f32); cfg.n_fft];
        let mut scratch = vec![Complex::new(0.0f32, 0.0f32); scratch_len];
        synth_frame(&fft, &mut buf, &mut scratch, spec.amplitude.frame(t), spec.phase.frame(t), &window, out);
    });

    let out_len = (frames - 1) * cfg.hop + cfg.frame_len;
    let mut acc = vec![0.0f32; out_len];
    let mut env = vec![0.0f32; out_len];
    for t in 0..frames {
        let base = t * cfg.hop;
        let frame = &synth[t * cfg.frame_len..(t + 1) * cfg.frame_len];
        for (i, s) in frame.iter().enumerate() {
            acc[base + i] += s;
            env[base + i] += window[i] * window[i];
        }
    }
    for (a, e) in acc.iter_mut().zip(&env) {
        *a /= e.max(ENVELOPE_FLOOR);
    }
    Ok(acc)
}

/// Inverse STFT: overlap-add resynthesis with the analysis center padding
/// removed, truncated to `out_len` samples.
pub fn istft_batch(spec: &ComplexSpectrogram, cfg: &SpectralConfig, out_len: usize) -> Result<Vec<f32>> {
    let raw = istft_raw(spec, cfg)?;
    let start = cfg.frame_len / 2;
    if start + out_len > raw.len() {
        return Err(invalid(format!(
            "out_len {} exceeds the {} samples available after center trim",
            out_len,
            raw.len().saturating_sub(start)
        )));
    }
    Ok(raw[start..start + out_len].to_vec())
}

fn hz_to_mel(f: f64) -> f64 {
    // Slaney scale: linear below 1 kHz, logarithmic above
    let f_sp = 200.0 / 3.0;
    let min_log_hz = 1000.0;
    let min_log_mel = min_log_hz / f_sp;
    let logstep = (6.4f64).ln() / 27.0;
    if f >= min_log_hz {
        min_log_mel + (f / min_log_hz).ln() / logstep
    } else {
        f / f_sp
    }
}

fn mel_to_hz(m: f64) -> f64 {
    let f_sp = 200.0 / 3.0;
    let min_log_hz = 1000.0;
    let min_log_mel = min_log_hz / f_sp;
    let logstep = (6.4f64).ln() / 27.0;
    if m >= min_log_mel {
        min_log_hz * (logstep * (m - min_log_mel)).exp()
    } else {
        f_sp * m
    }
}

/// Triangular Slaney-scale filterbank, area-normalized, returned as an
/// `[n_mels x n_bins]` row-major matrix.
pub fn mel_filterbank(cfg: &SpectralConfig) -> Result<Vec<f32>> {
    cfg.validate()?;
    let nb = cfg.n_bins();
    let mel_lo = hz_to_mel(cfg.fmin as f64);
    let mel_hi = hz_to_mel(cfg.fmax as f64);
    let band_edges: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect();
    let bin_hz: Vec<f64> =
        (0..nb).map(|b| b as f64 * cfg.sample_rate as f64 / cfg.n_fft as f64).collect();

    let mut fb = vec![0.0f32; cfg.n_mels * nb];
    for m in 0..cfg.n_mels {
        let (lo, center, hi) = (band_edges[m], band_edges[m + 1], band_edges[m + 2]);
        let norm = 2.0 / (hi - lo);
        for b in 0..nb {
            let f = bin_hz[b];
            let up = (f - lo) / (center - lo);
            let down = (hi - f) / (hi - center);
            let w = up.min(down).max(0.0);
            fb[m * nb + b] = (w * norm) as f32;
        }
    }
    Ok(fb)
}

/// Band center frequencies (Hz) of the filterbank rows, strictly increasing.
pub fn mel_band_centers(cfg: &SpectralConfig) -> Result<Vec<f32>> {
    cfg.validate()?;
    let mel_lo = hz_to_mel(cfg.fmin as f64);
    let mel_hi = hz_to_mel(cfg.fmax as f64);
    Ok((1..=cfg.n_mels)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (cfg.n_mels + 1) as f64) as f32)
        .collect())
}

/// Log-mel spectrogram: `ln(max(melfb * |STFT|, log_floor))`.
pub fn extract_mel(wave: &[f32], cfg: &SpectralConfig) -> Result<MelSpectrogram> {
    let spec = stft(wave, cfg)?;
    let fb = mel_filterbank(cfg)?;
    let nb = cfg.n_bins();
    let mut values = FrameTensor::zeros(spec.frames(), cfg.n_mels);
    let amp = &spec.amplitude;
    par::for_each_chunk_mut(values.data_mut(), cfg.n_mels, |t, row| {
        let arow = amp.frame(t);
        for (m, y) in row.iter_mut().enumerate() {
            let mut e = 0.0f32;
            for (w, a) in fb[m * nb..(m + 1) * nb].iter().zip(arow) {
                e += w * a;
            }
            *y = e.max(cfg.log_floor).ln();
        }
    });
    Ok(MelSpectrogram { values })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn snr_db(reference: &[f32], degraded: &[f32]) -> f64 {
        let mut sig = 0.0f64;
        let mut err = 0.0f64;
        for (r, d) in reference.iter().zip(degraded) {
            sig += (*r as f64) * (*r as f64);
            err += (*r as f64 - *d as f64) * (*r as f64 - *d as f64);
        }
        10.0 * (sig / err.max(1e-300)).log10()
    }

    fn lcg_wave(n: usize, seed: u64) -> Vec<f32> {
        let mut state = seed.wrapping_mul(0x9E3779B97F4A7C15).wrapping_add(1);
        (0..n)
            .map(|_| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((state >> 40) as f32 / (1u64 << 24) as f32) - 0.5
            })
            .collect()
    }

    #[test]
    fn window_closed_forms() {
        assert_eq!(make_window(4).unwrap(), vec![0.0, 0.5, 1.0, 0.5]);
        assert_eq!(make_window(1).unwrap(), vec![0.0]);
        let w = make_window(320).unwrap();
        assert_eq!(w[0], 0.0);
        assert!((w[160] - 1.0).abs() < 1e-7);
        assert!(make_window(0).is_err());
    }

    #[test]
    fn stft_zero_wave_shape_and_values() {
        let cfg = SpectralConfig::default();
        let spec = stft(&vec![0.0; 800], &cfg).unwrap();
        assert_eq!(spec.frames(), 11);
        assert_eq!(spec.amplitude.channels(), 513);
        assert!(spec.amplitude.data().iter().all(|&a| a == 0.0));
    }

    #[test]
    fn stft_tone_peaks_at_expected_bin() {
        let cfg = SpectralConfig::default();
        let n = 16_000usize;
        let wave: Vec<f32> = (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * 1000.0 * i as f64 / 16_000.0).cos() as f32)
            .collect();
        let spec = stft(&wave, &cfg).unwrap();

        // interior frames: argmax at bin 1000 * 1024 / 16000 = 64
        for t in [10usize, 50, 100, 150] {
            let row = spec.amplitude.frame(t);
            let argmax = row.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
            assert_eq!(argmax, 64, "frame {t}");
        }

        // brute-force DFT oracle for one interior frame (no padding involved)
        let t = 50usize;
        let start = t * cfg.hop - cfg.frame_len / 2;
        let window = make_window(cfg.frame_len).unwrap();
        let mut oracle = vec![0.0f64; cfg.n_bins()];
        for (b, o) in oracle.iter_mut().enumerate() {
            let mut re = 0.0f64;
            let mut im = 0.0f64;
            for i in 0..cfg.frame_len {
                let s = wave[start + i] as f64 * window[i] as f64;
                let ang = -2.0 * std::f64::consts::PI * b as f64 * i as f64 / cfg.n_fft as f64;
                re += s * ang.cos();
                im += s * ang.sin();
            }
            *o = (re * re + im * im).sqrt();
        }
        let row = spec.amplitude.frame(t);
        for b in 0..cfg.n_bins() {
            assert!(
                (row[b] as f64 - oracle[b]).abs() < 1e-3 * oracle[64].max(1.0),
                "bin {b}: {} vs oracle {}",
                row[b],
                oracle[b]
            );
        }
    }

    #[test]
    fn stft_impulse_has_flat_magnitude() {
        let cfg = SpectralConfig::default();
        let mut wave = vec![0.0f32; 800];
        wave[0] = 1.0;
        let spec = stft(&wave, &cfg).unwrap();
        // impulse sits at offset 160 of frame 0, where the window peaks at 1
        let row = spec.amplitude.frame(0);
        for (b, a) in row.iter().enumerate() {
            assert!((a - 1.0).abs() < 1e-4, "bin {b}: {a}");
        }
    }

    #[test]
    fn stft_phase_in_half_open_range() {
        let cfg = SpectralConfig::default();
        let wave = lcg_wave(4000, 3);
        let spec = stft(&wave, &cfg).unwrap();
        for &p in spec.phase.data() {
            assert!(p > -std::f32::consts::PI && p <= std::f32::consts::PI);
        }
    }

    #[test]
    fn istft_roundtrip_exceeds_60_db() {
        let cfg = SpectralConfig::default();
        let wave = lcg_wave(16_000, 7);
        let spec = stft(&wave, &cfg).unwrap();
        let back = istft_batch(&spec, &cfg, wave.len()).unwrap();
        assert_eq!(back.len(), wave.len());
        let snr = snr_db(&wave, &back);
        assert!(snr >= 60.0, "roundtrip SNR {snr:.1} dB");
    }

    #[test]
    fn istft_zero_spectrogram_is_silence() {
        let cfg = SpectralConfig::default();
        let spec = ComplexSpectrogram::new(FrameTensor::zeros(6, 513), FrameTensor::zeros(6, 513))
            .unwrap();
        let wave = istft_batch(&spec, &cfg, 400).unwrap();
        assert!(wave.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn istft_scales_linearly_with_amplitude() {
        let cfg = SpectralConfig::default();
        let wave = lcg_wave(2000, 11);
        let spec = stft(&wave, &cfg).unwrap();
        let mut doubled = spec.clone();
        for a in doubled.amplitude.data_mut() {
            *a *= 2.0;
        }
        let y1 = istft_batch(&spec, &cfg, 2000).unwrap();
        let y2 = istft_batch(&doubled, &cfg, 2000).unwrap();
        for (a, b) in y1.iter().zip(&y2) {
            assert!((b - 2.0 * a).abs() <= 1e-7 * a.abs().max(1.0));
        }
    }

    #[test]
    fn istft_rejects_dim_mismatch() {
        let cfg = SpectralConfig::default();
        let spec =
            ComplexSpectrogram::new(FrameTensor::zeros(4, 100), FrameTensor::zeros(4, 100)).unwrap();
        assert!(istft_batch(&spec, &cfg, 10).is_err());
    }

    #[test]
    fn istft_rejects_excessive_out_len() {
        let cfg = SpectralConfig::default();
        let spec =
            ComplexSpectrogram::new(FrameTensor::zeros(2, 513), FrameTensor::zeros(2, 513)).unwrap();
        // raw length = hop + frame_len = 400; after 160-sample trim only 240 remain
        assert!(istft_batch(&spec, &cfg, 240).is_ok());
        assert!(istft_batch(&spec, &cfg, 241).is_err());
    }

    #[test]
    fn filterbank_nonnegative_with_positive_rows() {
        let cfg = SpectralConfig::default();
        let fb = mel_filterbank(&cfg).unwrap();
        let nb = cfg.n_bins();
        assert!(fb.iter().all(|&w| w >= 0.0));
        for m in 0..cfg.n_mels {
            let row_sum: f32 = fb[m * nb..(m + 1) * nb].iter().sum();
            assert!(row_sum > 0.0, "band {m} has no positive entry");
        }
    }

    #[test]
    fn filterbank_centers_strictly_increasing() {
        let centers = mel_band_centers(&SpectralConfig::default()).unwrap();
        for w in centers.windows(2) {
            assert!(w[1] > w[0]);
        }
    }

    #[test]
    fn filterbank_on_flat_spectrum_is_positive() {
        let cfg = SpectralConfig::default();
        let fb = mel_filterbank(&cfg).unwrap();
        let nb = cfg.n_bins();
        let flat = vec![1.0f32; nb];
        for m in 0..cfg.n_mels {
            // matrix-vector product oracle
            let mut acc = 0.0f32;
            for (w, a) in fb[m * nb..(m + 1) * nb].iter().zip(&flat) {
                acc += w * a;
            }
            assert!(acc > 0.0, "band {m}");
        }
    }

    #[test]
    fn filterbank_rejects_bad_band_limits() {
        let cfg = SpectralConfig { fmax: 0.0, ..Default::default() };
        assert!(mel_filterbank(&cfg).is_err());
    }

    #[test]
    fn extract_mel_floor_and_shape() {
        let cfg = SpectralConfig::default();
        let mel = extract_mel(&vec![0.0; 800], &cfg).unwrap();
        let floor = (1e-5f32).ln();
        assert!(mel.values.data().iter().all(|&v| (v - floor).abs() < 1e-6));

        let mel_1s = extract_mel(&lcg_wave(16_000, 5), &cfg).unwrap();
        assert_eq!(mel_1s.frames(), 201);
    }

    #[test]
    fn extract_mel_monotone_under_gain() {
        let cfg = SpectralConfig::default();
        let wave = lcg_wave(2000, 9);
        let louder: Vec<f32> = wave.iter().map(|s| 2.0 * s).collect();
        let a = extract_mel(&wave, &cfg).unwrap();
        let b = extract_mel(&louder, &cfg).unwrap();
        for (x, y) in a.values.data().iter().zip(b.values.data()) {
            assert!(y >= x);
        }
    }
}
