//! Self-check properties over randomly initialized weights: analysis/
//! synthesis round trip, emitted-sample causality, and streaming/batch
//! agreement. The CLI's `verify` subcommand prints one line per property
//! and fails when any of them does.

use crate::error::Result;
use crate::io::{random_init, SplitMix64};
use crate::model::{forward_batch, synthesize_from_pair_raw, FeatureTrace, ModelConfig, ModelParams};
use crate::nn::FrameTensor;
use crate::spectral::{istft_batch, stft, MelSpectrogram};
use crate::stream::StreamState;

#[derive(Debug, Clone)]
pub struct PropertyResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Deterministic synthetic mel input with values in a speech-like log range.
pub fn random_mel(frames: usize, n_mels: usize, seed: u64) -> MelSpectrogram {
    let mut rng = SplitMix64::new(seed);
    let data: Vec<f32> = (0..frames * n_mels).map(|_| rng.next_unit_f32() * 12.0 - 11.5).collect();
    MelSpectrogram {
        values: FrameTensor::from_vec(n_mels, data).expect("consistent dims"),
    }
}

/// Deterministic test waveform in `[-0.5, 0.5)`.
pub fn random_wave(samples: usize, seed: u64) -> Vec<f32> {
    let mut rng = SplitMix64::new(seed);
    (0..samples).map(|_| rng.next_symmetric_f32(0.5)).collect()
}

/// Run every property applicable to `cfg` with `random_init(cfg, seed)`
/// weights on `frames`-frame inputs.
pub fn run_all(cfg: &ModelConfig, seed: u64, frames: usize) -> Result<Vec<PropertyResult>> {
    let mut results = vec![roundtrip_property(cfg, seed)?];
    if cfg.causal {
        results.push(causality_property(cfg, seed, frames)?);
        results.push(streaming_matches_batch_property(cfg, seed, frames)?);
    } else {
        results.push(noncausal_propagation_property(cfg, seed, frames)?);
    }
    Ok(results)
}

/// `istft(stft(x))` recovers one second of random audio to at least 60 dB.
pub fn roundtrip_property(cfg: &ModelConfig, seed: u64) -> Result<PropertyResult> {
    let sc = &cfg.spectral;
    let wave = random_wave(sc.sample_rate as usize, seed ^ 0xA5A5);
    let spec = stft(&wave, sc)?;
    let back = istft_batch(&spec, sc, wave.len())?;
    let mut sig = 0.0f64;
    let mut err = 0.0f64;
    for (a, b) in wave.iter().zip(&back) {
        sig += (*a as f64) * (*a as f64);
        err += (*a as f64 - *b as f64) * (*a as f64 - *b as f64);
    }
    let snr = 10.0 * (sig / err.max(1e-300)).log10();
    Ok(PropertyResult {
        name: "roundtrip",
        passed: snr >= 60.0,
        detail: format!("snr_db={snr:.1} (threshold 60.0)"),
    })
}

/// Perturbing mel frames beyond `t` must not change any sample emitted
/// before `(t+1) * hop`, bit-exactly.
pub fn causality_property(cfg: &ModelConfig, seed: u64, frames: usize) -> Result<PropertyResult> {
    let archive = random_init(cfg, seed)?;
    let params = ModelParams::new(&archive, cfg)?;
    let mel = random_mel(frames, cfg.n_mels(), seed ^ 0x5A5A);

    let run = |m: &MelSpectrogram| -> Result<Vec<f32>> {
        let mut s = StreamState::new(&params)?;
        let mut out = Vec::new();
        for t in 0..m.frames() {
            out.extend(s.push_frame(m.values.frame(t))?);
        }
        out.extend(s.flush()?);
        Ok(out)
    };
    let base = run(&mel)?;

    let mut rng = SplitMix64::new(seed ^ 0xC3C3);
    let probes = 3.min(frames.saturating_sub(2)).max(1);
    for _ in 0..probes {
        let t = (rng.next_u64() as usize) % (frames - 1);
        let mut perturbed = mel.clone();
        for tau in t + 1..frames {
            for v in perturbed.values.frame_mut(tau) {
                *v += rng.next_symmetric_f32(2.0) + 0.5;
            }
        }
        let other = run(&perturbed)?;
        let boundary = (t + 1) * cfg.spectral.hop;
        if base[..boundary] != other[..boundary] {
            return Ok(PropertyResult {
                name: "causality",
                passed: false,
                detail: format!("emitted samples before {boundary} changed after perturbing frames > {t}"),
            });
        }
    }
    Ok(PropertyResult {
        name: "causality",
        passed: true,
        detail: format!("{probes} probes on {frames}-frame input, prefixes bit-exact"),
    })
}

/// For a non-causal graph the same perturbation must propagate backwards.
pub fn noncausal_propagation_property(
    cfg: &ModelConfig,
    seed: u64,
    frames: usize,
) -> Result<PropertyResult> {
    let archive = random_init(cfg, seed)?;
    let mel = random_mel(frames, cfg.n_mels(), seed ^ 0x5A5A);
    let (pair, _) = forward_batch(&mel, &archive, cfg)?;

    let t = frames / 2;
    let mut perturbed = mel.clone();
    for v in perturbed.values.frame_mut(t + 1) {
        *v += 1.0;
    }
    let (pair2, _) = forward_batch(&perturbed, &archive, cfg)?;
    let changed = (0..=t).any(|tau| pair.log_amplitude.frame(tau) != pair2.log_amplitude.frame(tau));
    Ok(PropertyResult {
        name: "noncausal_propagation",
        passed: changed,
        detail: if changed {
            format!("perturbing frame {} changed output at or before frame {t}", t + 1)
        } else {
            "perturbation did not propagate backwards (unexpected for a non-causal graph)".into()
        },
    })
}

/// Streamed pushes plus flush match the batch raw timeline within 1e-4 on
/// samples and 1e-5 on intermediate features.
pub fn streaming_matches_batch_property(
    cfg: &ModelConfig,
    seed: u64,
    frames: usize,
) -> Result<PropertyResult> {
    let archive = random_init(cfg, seed)?;
    let params = ModelParams::new(&archive, cfg)?;
    let mel = random_mel(frames, cfg.n_mels(), seed ^ 0x7777);

    let (pair, batch_trace) = forward_batch(&mel, &archive, cfg)?;
    let batch_wave = synthesize_from_pair_raw(&pair, &cfg.spectral)?;

    let mut s = StreamState::new(&params)?;
    let mut trace = FeatureTrace::empty(cfg);
    let mut wave = Vec::new();
    for t in 0..frames {
        wave.extend(s.push_frame_traced(mel.values.frame(t), &mut trace)?);
    }
    wave.extend(s.flush()?);

    let sample_diff = wave
        .iter()
        .zip(&batch_wave)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f32, f32::max);
    let trace_diff = trace.max_abs_diff(&batch_trace);
    let passed = wave.len() == batch_wave.len() && sample_diff <= 1e-4 && trace_diff <= 1e-5;
    Ok(PropertyResult {
        name: "streaming_matches_batch",
        passed,
        detail: format!(
            "max_sample_diff={sample_diff:.2e} (tol 1e-4), max_feature_diff={trace_diff:.2e} (tol 1e-5)"
        ),
    })
}
