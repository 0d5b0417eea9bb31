//! Objective metrics for time-aligned reference/degraded waveform pairs:
//! SNR, log-amplitude-spectrum RMSE, mel-cepstral distortion, F0 RMSE in
//! cents, and voiced/unvoiced decision error.

use crate::error::{invalid, Result};
use crate::spectral::{extract_mel, stft, MelSpectrogram, SpectralConfig};

/// Voicing decision threshold on the normalized autocorrelation peak.
const VOICING_THRESHOLD: f64 = 0.3;
/// F0 search range in Hz.
const F0_MIN: f64 = 65.0;
const F0_MAX: f64 = 400.0;
/// Analysis window / hop for F0 tracking, in seconds.
const F0_WINDOW_S: f64 = 0.040;
const F0_HOP_S: f64 = 0.010;
/// Number of mel-cepstral coefficients compared (c1..c12; c0 carries gain).
const MCD_COEFFS: usize = 12;

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub snr_db: f64,
    pub las_rmse_db: f64,
    pub mcd_db: f64,
    pub f0_rmse_cents: f64,
    pub vuv_error_pct: f64,
}

/// All five metrics over an aligned pair.
pub fn compute_all(reference: &[f32], degraded: &[f32], cfg: &SpectralConfig) -> Result<MetricReport> {
    Ok(MetricReport {
        snr_db: snr_db(reference, degraded)?,
        las_rmse_db: las_rmse_db(reference, degraded, cfg)?,
        mcd_db: mcd_db(reference, degraded, cfg)?,
        f0_rmse_cents: f0_rmse_cents(reference, degraded, cfg)?,
        vuv_error_pct: vuv_error_pct(reference, degraded, cfg)?,
    })
}

fn check_pair(reference: &[f32], degraded: &[f32]) -> Result<()> {
    if reference.len() != degraded.len() {
        return Err(invalid(format!(
            "length mismatch: reference {} vs degraded {}",
            reference.len(),
            degraded.len()
        )));
    }
    if reference.is_empty() {
        return Err(invalid("empty input"));
    }
    Ok(())
}

/// `10 log10(sum ref^2 / sum (ref-deg)^2)`, capped at 100 dB when the error
/// energy drops below 1e-10 of the signal energy.
pub fn snr_db(reference: &[f32], degraded: &[f32]) -> Result<f64> {
    check_pair(reference, degraded)?;
    let mut sig = 0.0f64;
    let mut err = 0.0f64;
    for (r, d) in reference.iter().zip(degraded) {
        let rf = *r as f64;
        sig += rf * rf;
        let e = rf - *d as f64;
        err += e * e;
    }
    if sig == 0.0 {
        return Err(invalid("snr_db reference is all zero"));
    }
    if err < 1e-10 * sig {
        return Ok(100.0);
    }
    Ok((10.0 * (sig / err).log10()).min(100.0))
}

/// RMSE of `20 log10(amplitude + 1e-5)` over all STFT bins.
pub fn las_rmse_db(reference: &[f32], degraded: &[f32], cfg: &SpectralConfig) -> Result<f64> {
    check_pair(reference, degraded)?;
    let a = stft(reference, cfg)?;
    let b = stft(degraded, cfg)?;
    let mut acc = 0.0f64;
    let n = a.amplitude.data().len();
    for (x, y) in a.amplitude.data().iter().zip(b.amplitude.data()) {
        let d = 20.0 * ((*x as f64 + 1e-5).log10() - (*y as f64 + 1e-5).log10());
        acc += d * d;
    }
    Ok((acc / n as f64).sqrt())
}

/// Orthonormal DCT-II coefficients 1..=n of one log-mel frame.
fn mel_cepstrum(frame: &[f32], n: usize) -> Vec<f64> {
    let m = frame.len();
    let scale = (2.0 / m as f64).sqrt();
    (1..=n)
        .map(|k| {
            let mut acc = 0.0f64;
            for (i, v) in frame.iter().enumerate() {
                acc += *v as f64
                    * (std::f64::consts::PI * (i as f64 + 0.5) * k as f64 / m as f64).cos();
            }
            scale * acc
        })
        .collect()
}

/// Mel-cepstral distortion in dB over coefficients 1..=12 (gain excluded),
/// `(10 sqrt(2) / ln 10) * mean_t ||c_t - c'_t||_2`; no time warping.
pub fn mcd_db(reference: &[f32], degraded: &[f32], cfg: &SpectralConfig) -> Result<f64> {
    check_pair(reference, degraded)?;
    let a = extract_mel(reference, cfg)?;
    let b = extract_mel(degraded, cfg)?;
    Ok(mcd_from_mel(&a, &b))
}

pub(crate) fn mcd_from_mel(a: &MelSpectrogram, b: &MelSpectrogram) -> f64 {
    let frames = a.frames();
    let constant = 10.0 * std::f64::consts::SQRT_2 / std::f64::consts::LN_10;
    let mut acc = 0.0f64;
    for t in 0..frames {
        let ca = mel_cepstrum(a.values.frame(t), MCD_COEFFS);
        let cb = mel_cepstrum(b.values.frame(t), MCD_COEFFS);
        let d2: f64 = ca.iter().zip(&cb).map(|(x, y)| (x - y) * (x - y)).sum();
        acc += d2.sqrt();
    }
    constant * acc / frames as f64
}

/// Per-frame F0 estimate (`None` = unvoiced): normalized autocorrelation
/// over 40 ms windows at 10 ms hop, 65-400 Hz search, voiced when the peak
/// reaches 0.3, with parabolic peak interpolation.
pub fn f0_track(wave: &[f32], cfg: &SpectralConfig) -> Vec<Option<f64>> {
    let sr = cfg.sample_rate as f64;
    let win = (F0_WINDOW_S * sr).round() as usize;
    let hop = (F0_HOP_S * sr).round() as usize;
    let lag_min = (sr / F0_MAX).floor() as usize;
    let lag_max = (sr / F0_MIN).ceil() as usize;
    let mut out = Vec::new();
    if wave.len() < win || lag_max + 1 >= win {
        return out;
    }
    let mut t = 0usize;
    while t + win <= wave.len() {
        let x = &wave[t..t + win];
        out.push(frame_f0(x, sr, lag_min, lag_max));
        t += hop;
    }
    out
}

fn frame_f0(x: &[f32], sr: f64, lag_min: usize, lag_max: usize) -> Option<f64> {
    let win = x.len();
    let energy: f64 = x.iter().map(|&v| (v as f64) * (v as f64)).sum();
    if energy < 1e-9 {
        return None;
    }
    let nccf = |lag: usize| -> f64 {
        let n = win - lag;
        let mut cross = 0.0f64;
        let mut e0 = 0.0f64;
        let mut e1 = 0.0f64;
        for i in 0..n {
            let a = x[i] as f64;
            let b = x[i + lag] as f64;
            cross += a * b;
            e0 += a * a;
            e1 += b * b;
        }
        if e0 <= 0.0 || e1 <= 0.0 {
            return 0.0;
        }
        cross / (e0 * e1).sqrt()
    };

    let mut best_lag = 0usize;
    let mut best = f64::NEG_INFINITY;
    let mut values = vec![0.0f64; lag_max + 2];
    for lag in lag_min..=lag_max {
        let v = nccf(lag);
        values[lag] = v;
        if v > best {
            best = v;
            best_lag = lag;
        }
    }
    if best < VOICING_THRESHOLD {
        return None;
    }
    // parabolic interpolation around the integer peak
    let mut lag = best_lag as f64;
    if best_lag > lag_min && best_lag < lag_max {
        let (l, c, r) = (values[best_lag - 1], values[best_lag], values[best_lag + 1]);
        let denom = l - 2.0 * c + r;
        if denom.abs() > 1e-12 {
            let delta = 0.5 * (l - r) / denom;
            if delta.abs() <= 1.0 {
                lag += delta;
            }
        }
    }
    Some(sr / lag)
}

/// RMS of `1200 log2(f0_deg / f0_ref)` over frames voiced in both tracks
/// (0 when no frame is voiced in both).
pub fn f0_rmse_cents(reference: &[f32], degraded: &[f32], cfg: &SpectralConfig) -> Result<f64> {
    check_pair(reference, degraded)?;
    let fr = f0_track(reference, cfg);
    let fd = f0_track(degraded, cfg);
    let mut acc = 0.0f64;
    let mut n = 0usize;
    for (a, b) in fr.iter().zip(&fd) {
        if let (Some(fa), Some(fb)) = (a, b) {
            let cents = 1200.0 * (fb / fa).log2();
            acc += cents * cents;
            n += 1;
        }
    }
    if n == 0 {
        return Ok(0.0);
    }
    Ok((acc / n as f64).sqrt())
}

/// Percentage of frames whose voicing decision differs.
pub fn vuv_error_pct(reference: &[f32], degraded: &[f32], cfg: &SpectralConfig) -> Result<f64> {
    check_pair(reference, degraded)?;
    let fr = f0_track(reference, cfg);
    let fd = f0_track(degraded, cfg);
    if fr.is_empty() {
        return Ok(0.0);
    }
    let differing = fr.iter().zip(&fd).filter(|(a, b)| a.is_some() != b.is_some()).count();
    Ok(100.0 * differing as f64 / fr.len() as f64)
}
