//! Forward-only evaluation of the training criteria: amplitude, phase,
//! reconstructed-STFT, waveform, and feature-distillation losses, plus the
//! weighted total. Nothing here computes gradients; the evaluators exist to
//! compare checkpoints and probe the distillation mechanism.

use crate::error::{invalid, Result};
use crate::model::{FeatureTrace, SpectralPair};
use crate::nn::FrameTensor;
use crate::spectral::{extract_mel, stft, SpectralConfig};

/// Weights of the combined criterion. Defaults: amplitude 45, phase 100,
/// STFT 1, waveform 1, distillation 5.
#[derive(Debug, Clone, PartialEq)]
pub struct LossWeights {
    pub lambda_a: f64,
    pub lambda_p: f64,
    pub lambda_s: f64,
    pub lambda_w: f64,
    pub lambda_kd: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda_a: 45.0, lambda_p: 100.0, lambda_s: 1.0, lambda_w: 1.0, lambda_kd: 5.0 }
    }
}

/// Unweighted loss terms.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossTerms {
    pub l_a: f64,
    pub l_p: f64,
    pub l_s: f64,
    pub l_w: f64,
    pub l_kd: f64,
}

/// Terms plus their weighted sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub l_a: f64,
    pub l_p: f64,
    pub l_s: f64,
    pub l_w: f64,
    pub l_kd: f64,
    pub total: f64,
}

/// Distance to the nearest multiple of 2 pi:
/// `|x - 2 pi round(x / 2 pi)|`, in `[0, pi]`.
pub fn anti_wrap(x: f64) -> f64 {
    let tau = std::f64::consts::TAU;
    (x - tau * (x / tau).round()).abs()
}

fn check_same_shape(a: &FrameTensor, b: &FrameTensor, what: &str) -> Result<()> {
    if a.channels() != b.channels() || a.frames() != b.frames() {
        return Err(invalid(format!(
            "{what} shapes differ: [{} x {}] vs [{} x {}]",
            a.frames(),
            a.channels(),
            b.frames(),
            b.channels()
        )));
    }
    Ok(())
}

/// Mean squared error between log-amplitude spectra.
pub fn amplitude_loss(pred: &FrameTensor, target: &FrameTensor) -> Result<f64> {
    check_same_shape(pred, target, "amplitude_loss")?;
    let n = pred.data().len();
    if n == 0 {
        return Ok(0.0);
    }
    let mut acc = 0.0f64;
    for (p, t) in pred.data().iter().zip(target.data()) {
        let d = *p as f64 - *t as f64;
        acc += d * d;
    }
    Ok(acc / n as f64)
}

/// Anti-wrapped phase loss: instantaneous phase + group delay (frequency
/// difference) + instantaneous angular frequency (time difference), each the
/// mean anti-wrapped error of `pred - target` or its first difference.
pub fn phase_loss(pred: &FrameTensor, target: &FrameTensor) -> Result<f64> {
    check_same_shape(pred, target, "phase_loss")?;
    let frames = pred.frames();
    let bins = pred.channels();
    if frames == 0 {
        return Ok(0.0);
    }

    let delta = |t: usize, b: usize| -> f64 {
        pred.frame(t)[b] as f64 - target.frame(t)[b] as f64
    };

    let mut ip = 0.0f64;
    for t in 0..frames {
        for b in 0..bins {
            ip += anti_wrap(delta(t, b));
        }
    }
    ip /= (frames * bins) as f64;

    // first differences drop one element along the differenced axis
    let mut gd = 0.0f64;
    if bins > 1 {
        for t in 0..frames {
            for b in 0..bins - 1 {
                gd += anti_wrap(delta(t, b + 1) - delta(t, b));
            }
        }
        gd /= (frames * (bins - 1)) as f64;
    }

    let mut iaf = 0.0f64;
    if frames > 1 {
        for t in 0..frames - 1 {
            for b in 0..bins {
                iaf += anti_wrap(delta(t + 1, b) - delta(t, b));
            }
        }
        iaf /= ((frames - 1) * bins) as f64;
    }

    Ok(ip + gd + iaf)
}

/// MSE between the predicted complex spectrum (`exp(logA) * e^{i phi}`) and
/// the analysis spectrum of the target waveform, real and imaginary parts.
pub fn stft_loss(pred: &SpectralPair, target_wave: &[f32], cfg: &SpectralConfig) -> Result<f64> {
    let target = stft(target_wave, cfg)?;
    check_same_shape(&pred.log_amplitude, &target.amplitude, "stft_loss")?;
    let frames = target.frames();
    let bins = target.amplitude.channels();
    let mut acc = 0.0f64;
    for t in 0..frames {
        let (pl, pp) = (pred.log_amplitude.frame(t), pred.phase.frame(t));
        let (ta, tp) = (target.amplitude.frame(t), target.phase.frame(t));
        for b in 0..bins {
            let pa = (pl[b] as f64).exp();
            let (ps, pc) = (pp[b] as f64).sin_cos();
            let (ts, tc) = (tp[b] as f64).sin_cos();
            let dre = pa * pc - ta[b] as f64 * tc;
            let dim = pa * ps - ta[b] as f64 * ts;
            acc += dre * dre + dim * dim;
        }
    }
    Ok(acc / (frames * bins) as f64)
}

/// Mel-reconstruction waveform loss: mean absolute difference between the
/// log-mel spectrograms of the two waveforms, truncated to the shorter one.
pub fn waveform_loss(pred_wave: &[f32], target_wave: &[f32], cfg: &SpectralConfig) -> Result<f64> {
    let n = pred_wave.len().min(target_wave.len());
    if n == 0 {
        return Err(invalid("waveform_loss requires non-empty waveforms"));
    }
    let a = extract_mel(&pred_wave[..n], cfg)?;
    let b = extract_mel(&target_wave[..n], cfg)?;
    let mut acc = 0.0f64;
    for (x, y) in a.values.data().iter().zip(b.values.data()) {
        acc += (*x as f64 - *y as f64).abs();
    }
    Ok(acc / a.values.data().len() as f64)
}

/// Feature-distillation loss: mean absolute difference of the input-conv
/// features plus each active block's features, summed over both branches.
/// `active_blocks` holds 1-based block indices; the full set `1..=K`
/// reproduces the standard criterion, the empty set keeps only the
/// input-conv term.
pub fn kd_loss(teacher: &FeatureTrace, student: &FeatureTrace, active_blocks: &[usize]) -> Result<f64> {
    if teacher.amp.blocks.len() != student.amp.blocks.len()
        || teacher.phase.blocks.len() != student.phase.blocks.len()
    {
        return Err(invalid(format!(
            "kd_loss traces have {} vs {} blocks",
            teacher.amp.blocks.len(),
            student.amp.blocks.len()
        )));
    }
    let k = teacher.amp.blocks.len();
    let mut active: Vec<usize> = active_blocks.to_vec();
    active.sort_unstable();
    active.dedup();
    if let Some(&bad) = active.iter().find(|&&b| b == 0 || b > k) {
        return Err(invalid(format!("kd_loss block index {bad} out of range 1..={k}")));
    }

    let l1_mean = |a: &FrameTensor, b: &FrameTensor, layer: &str| -> Result<f64> {
        check_same_shape(a, b, &format!("kd_loss at {layer}"))?;
        if a.data().is_empty() {
            return Ok(0.0);
        }
        let mut acc = 0.0f64;
        for (x, y) in a.data().iter().zip(b.data()) {
            acc += (*x as f64 - *y as f64).abs();
        }
        Ok(acc / a.data().len() as f64)
    };

    let mut total = 0.0f64;
    for (name, t_branch, s_branch) in [
        ("amp", &teacher.amp, &student.amp),
        ("phase", &teacher.phase, &student.phase),
    ] {
        total += l1_mean(&t_branch.input_conv, &s_branch.input_conv, &format!("{name}.input_conv"))?;
        for &b in &active {
            total += l1_mean(
                &t_branch.blocks[b - 1],
                &s_branch.blocks[b - 1],
                &format!("{name}.block{b}"),
            )?;
        }
    }
    Ok(total)
}

/// Weighted combination of the loss terms.
pub fn total_loss(parts: &LossTerms, w: &LossWeights) -> Result<LossBreakdown> {
    for (name, v) in [
        ("l_a", parts.l_a),
        ("l_p", parts.l_p),
        ("l_s", parts.l_s),
        ("l_w", parts.l_w),
        ("l_kd", parts.l_kd),
    ] {
        if !(v >= 0.0) {
            return Err(invalid(format!("loss term {name} = {v} must be non-negative")));
        }
    }
    Ok(LossBreakdown {
        l_a: parts.l_a,
        l_p: parts.l_p,
        l_s: parts.l_s,
        l_w: parts.l_w,
        l_kd: parts.l_kd,
        total: w.lambda_a * parts.l_a
            + w.lambda_p * parts.l_p
            + w.lambda_s * parts.l_s
            + w.lambda_w * parts.l_w
            + w.lambda_kd * parts.l_kd,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::BranchTrace;
    use std::f64::consts::PI;

    fn tensor_from(channels: usize, values: &[f32]) -> FrameTensor {
        FrameTensor::from_vec(channels, values.to_vec()).unwrap()
    }

    fn random_tensor(frames: usize, channels: usize, seed: u64) -> FrameTensor {
        let mut rng = crate::io::SplitMix64::new(seed);
        FrameTensor::from_vec(
            channels,
            (0..frames * channels).map(|_| rng.next_symmetric_f32(2.0)).collect(),
        )
        .unwrap()
    }

    fn trace_of(frames: usize, hidden: usize, blocks: usize, seed: u64) -> FeatureTrace {
        FeatureTrace {
            amp: BranchTrace {
                input_conv: random_tensor(frames, hidden, seed),
                blocks: (0..blocks).map(|i| random_tensor(frames, hidden, seed + 1 + i as u64)).collect(),
            },
            phase: BranchTrace {
                input_conv: random_tensor(frames, hidden, seed + 100),
                blocks: (0..blocks)
                    .map(|i| random_tensor(frames, hidden, seed + 101 + i as u64))
                    .collect(),
            },
        }
    }

    fn offset_trace(t: &FeatureTrace, c: f32) -> FeatureTrace {
        let shift = |x: &FrameTensor| {
            let mut y = x.clone();
            for v in y.data_mut() {
                *v += c;
            }
            y
        };
        FeatureTrace {
            amp: BranchTrace {
                input_conv: shift(&t.amp.input_conv),
                blocks: t.amp.blocks.iter().map(&shift).collect(),
            },
            phase: BranchTrace {
                input_conv: shift(&t.phase.input_conv),
                blocks: t.phase.blocks.iter().map(&shift).collect(),
            },
        }
    }

    #[test]
    fn anti_wrap_reference_points() {
        assert_eq!(anti_wrap(0.0), 0.0);
        assert!(anti_wrap(2.0 * PI) < 1e-12);
        assert!((anti_wrap(3.0 * PI) - PI).abs() < 1e-12);
    }

    #[test]
    fn anti_wrap_periodic_and_bounded() {
        for i in 0..2000 {
            let x = -10.0 * PI + i as f64 * (20.0 * PI / 2000.0);
            let y = anti_wrap(x);
            assert!((0.0..=PI + 1e-12).contains(&y));
            for n in [-3i32, -1, 1, 4] {
                assert!((anti_wrap(x + 2.0 * PI * n as f64) - y).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn amplitude_loss_constant_offset() {
        let t = random_tensor(2, 3, 5);
        assert_eq!(amplitude_loss(&t, &t).unwrap(), 0.0);
        let mut p = t.clone();
        for v in p.data_mut() {
            *v += 1.0;
        }
        assert!((amplitude_loss(&p, &t).unwrap() - 1.0).abs() < 1e-6);

        // loop oracle on a random 2x3 case
        let q = random_tensor(2, 3, 6);
        let mut want = 0.0f64;
        for (a, b) in q.data().iter().zip(t.data()) {
            want += ((*a - *b) as f64).powi(2);
        }
        want /= 6.0;
        assert!((amplitude_loss(&q, &t).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn phase_loss_reference_cases() {
        let t = random_tensor(3, 4, 7);
        assert_eq!(phase_loss(&t, &t).unwrap(), 0.0);

        let mut plus_tau = t.clone();
        for v in plus_tau.data_mut() {
            *v += std::f32::consts::TAU;
        }
        assert!(phase_loss(&plus_tau, &t).unwrap() < 1e-5);

        let mut plus_quarter = t.clone();
        for v in plus_quarter.data_mut() {
            *v += std::f32::consts::FRAC_PI_2;
        }
        let l = phase_loss(&plus_quarter, &t).unwrap();
        assert!((l - PI / 2.0).abs() < 1e-5, "constant offset: IP only, got {l}");
    }

    #[test]
    fn stft_loss_of_own_analysis_is_zero() {
        let cfg = SpectralConfig::default();
        let mut rng = crate::io::SplitMix64::new(8);
        let wave: Vec<f32> = (0..1600).map(|_| rng.next_symmetric_f32(0.5)).collect();
        let spec = stft(&wave, &cfg).unwrap();
        let mut log_amp = spec.amplitude.clone();
        for v in log_amp.data_mut() {
            *v = v.max(1e-10).ln();
        }
        let pred = SpectralPair { log_amplitude: log_amp, phase: spec.phase.clone() };
        assert!(stft_loss(&pred, &wave, &cfg).unwrap() < 1e-10);
    }

    #[test]
    fn stft_loss_is_quadratic_in_amplitude() {
        let cfg = SpectralConfig::default();
        let zeros = vec![0.0f32; 800];
        let frames = zeros.len() / cfg.hop + 1;
        let log_amp = tensor_from(513, &vec![0.5f32; frames * 513]);
        let phase = FrameTensor::zeros(frames, 513);
        let pred = SpectralPair { log_amplitude: log_amp.clone(), phase: phase.clone() };
        let l1 = stft_loss(&pred, &zeros, &cfg).unwrap();
        let mut doubled = log_amp;
        for v in doubled.data_mut() {
            *v += std::f32::consts::LN_2;
        }
        let l2 = stft_loss(&SpectralPair { log_amplitude: doubled, phase }, &zeros, &cfg).unwrap();
        assert!((l2 / l1 - 4.0).abs() < 1e-4, "ratio {}", l2 / l1);
    }

    #[test]
    fn waveform_loss_cases() {
        let cfg = SpectralConfig::default();
        let mut rng = crate::io::SplitMix64::new(9);
        let target: Vec<f32> = (0..400).map(|_| rng.next_symmetric_f32(0.5)).collect();
        assert_eq!(waveform_loss(&target, &target, &cfg).unwrap(), 0.0);

        // hand computation for pred = 0
        let zeros = vec![0.0f32; 400];
        let got = waveform_loss(&zeros, &target, &cfg).unwrap();
        let ma = extract_mel(&zeros, &cfg).unwrap();
        let mb = extract_mel(&target, &cfg).unwrap();
        let mut want = 0.0f64;
        for (x, y) in ma.values.data().iter().zip(mb.values.data()) {
            want += ((*x - *y) as f64).abs();
        }
        want /= ma.values.data().len() as f64;
        assert!(got > 0.0 && (got - want).abs() < 1e-9);

        // sensitive to reordering non-silent content
        let mut swapped = target.clone();
        swapped.rotate_left(200);
        let l = waveform_loss(&swapped, &target, &cfg).unwrap();
        assert!(l > 0.0);
    }

    #[test]
    fn kd_loss_reference_cases() {
        let k = 4;
        let teacher = trace_of(3, 5, k, 21);
        assert_eq!(kd_loss(&teacher, &teacher, &[1, 2, 3, 4]).unwrap(), 0.0);

        let c = 0.75f32;
        let student = offset_trace(&teacher, c);
        let all: Vec<usize> = (1..=k).collect();
        let got = kd_loss(&teacher, &student, &all).unwrap();
        let want = (1 + k) as f64 * 2.0 * c as f64;
        assert!((got - want).abs() < 1e-5, "{got} vs {want}");

        // empty set keeps the input-conv term only
        let got0 = kd_loss(&teacher, &student, &[]).unwrap();
        assert!((got0 - 2.0 * c as f64).abs() < 1e-5);

        assert!(kd_loss(&teacher, &student, &[5]).is_err());
        let smaller = trace_of(2, 5, k, 22);
        let err = kd_loss(&teacher, &smaller, &all).unwrap_err().to_string();
        assert!(err.contains("input_conv"), "{err}");
    }

    #[test]
    fn kd_loss_symmetric_with_triangle_inequality() {
        let a = trace_of(2, 3, 2, 31);
        let b = trace_of(2, 3, 2, 32);
        let c = trace_of(2, 3, 2, 33);
        let blocks = [1, 2];
        let ab = kd_loss(&a, &b, &blocks).unwrap();
        let ba = kd_loss(&b, &a, &blocks).unwrap();
        assert!((ab - ba).abs() < 1e-12);
        let ac = kd_loss(&a, &c, &blocks).unwrap();
        let cb = kd_loss(&c, &b, &blocks).unwrap();
        assert!(ab <= ac + cb + 1e-12);
    }

    #[test]
    fn total_loss_reference_values() {
        let w = LossWeights::default();
        let zero = total_loss(&LossTerms::default(), &w).unwrap();
        assert_eq!(zero.total, 0.0);

        let ones = LossTerms { l_a: 1.0, l_p: 1.0, l_s: 1.0, l_w: 1.0, l_kd: 1.0 };
        assert_eq!(total_loss(&ones, &w).unwrap().total, 152.0);

        // lambda_kd = 0 removes distillation from the criterion
        let no_kd = LossWeights { lambda_kd: 0.0, ..Default::default() };
        assert_eq!(total_loss(&ones, &no_kd).unwrap().total, 147.0);

        assert!(total_loss(&LossTerms { l_a: -1.0, ..Default::default() }, &w).is_err());
    }
}
