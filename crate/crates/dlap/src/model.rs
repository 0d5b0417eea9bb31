//! The two-branch prediction graph.
//!
//! Each branch runs `input conv -> K ConvNeXt v2 blocks -> head conv(s)`
//! over the mel sequence at frame rate. The amplitude branch's head predicts
//! natural-log magnitudes; the phase branch ends in two parallel heads whose
//! outputs are combined by `atan2` into a wrapped phase. A block is
//! `x + pw2(grn(gelu(pw1(layer_norm(dwconv(x))))))`; only the depthwise and
//! the input/head convolutions carry taps over time, so the `causal` flag
//! controls exactly those.

use crate::error::{invalid, Result};
use crate::io::WeightArchive;
use crate::nn::{
    self, conv_apply, dwconv_apply, DepthwiseParams, FrameTensor, GrnMode,
};
use crate::par;
use crate::spectral::{istft_batch, MelSpectrogram, SpectralConfig};

pub(crate) const LN_EPS: f32 = 1e-6;
pub(crate) const GRN_EPS: f32 = 1e-6;

/// Layer-graph hyperparameters. Defaults: hidden 512, intermediate 1536,
/// 8 blocks, kernel 7 everywhere, dilation 1, causal with cumulative GRN.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub spectral: SpectralConfig,
    pub hidden: usize,
    pub intermediate: usize,
    pub num_blocks: usize,
    pub kernel_io: usize,
    pub kernel_dw: usize,
    pub dilation: usize,
    pub causal: bool,
    pub grn_mode: GrnMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            spectral: SpectralConfig::default(),
            hidden: 512,
            intermediate: 1536,
            num_blocks: 8,
            kernel_io: 7,
            kernel_dw: 7,
            dilation: 1,
            causal: true,
            grn_mode: GrnMode::CausalCumulative,
        }
    }
}

impl ModelConfig {
    pub fn n_mels(&self) -> usize {
        self.spectral.n_mels
    }

    pub fn n_bins(&self) -> usize {
        self.spectral.n_bins()
    }

    pub fn validate(&self) -> Result<()> {
        self.spectral.validate()?;
        if self.hidden == 0 || self.kernel_io == 0 || self.kernel_dw == 0 || self.dilation == 0 {
            return Err(invalid("hidden, kernels, and dilation must be >= 1"));
        }
        if self.intermediate < self.hidden {
            return Err(invalid(format!(
                "intermediate {} must be >= hidden {}",
                self.intermediate, self.hidden
            )));
        }
        if self.causal && self.grn_mode != GrnMode::CausalCumulative {
            return Err(invalid(
                "causal=true requires grn_mode=causal_cumulative (global GRN reads future frames)",
            ));
        }
        Ok(())
    }
}

/// Predicted spectra: natural-log amplitude and wrapped phase, `[T x n_bins]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralPair {
    pub log_amplitude: FrameTensor,
    pub phase: FrameTensor,
}

/// Intermediate features of one branch: the input-conv output plus each
/// block's output, all `[T x hidden]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchTrace {
    pub input_conv: FrameTensor,
    pub blocks: Vec<FrameTensor>,
}

impl BranchTrace {
    pub(crate) fn empty(hidden: usize, num_blocks: usize) -> Self {
        Self {
            input_conv: FrameTensor::zeros(0, hidden),
            blocks: (0..num_blocks).map(|_| FrameTensor::zeros(0, hidden)).collect(),
        }
    }
}

/// Distillation trace for both branches.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTrace {
    pub amp: BranchTrace,
    pub phase: BranchTrace,
}

impl FeatureTrace {
    /// Zero-frame trace with the right channel counts, ready to receive
    /// frames from the streaming engine.
    pub fn empty(cfg: &ModelConfig) -> Self {
        Self {
            amp: BranchTrace::empty(cfg.hidden, cfg.num_blocks),
            phase: BranchTrace::empty(cfg.hidden, cfg.num_blocks),
        }
    }

    /// Largest absolute difference over every traced tensor.
    pub fn max_abs_diff(&self, other: &FeatureTrace) -> f32 {
        let mut m = self.amp.input_conv.max_abs_diff(&other.amp.input_conv);
        m = m.max(self.phase.input_conv.max_abs_diff(&other.phase.input_conv));
        for (a, b) in self.amp.blocks.iter().zip(&other.amp.blocks) {
            m = m.max(a.max_abs_diff(b));
        }
        for (a, b) in self.phase.blocks.iter().zip(&other.phase.blocks) {
            m = m.max(a.max_abs_diff(b));
        }
        m
    }
}

// --- canonical tensor enumeration ---

pub(crate) struct TensorSpec {
    pub(crate) name: String,
    pub(crate) shape: Vec<usize>,
    pub(crate) fan_in: usize,
}

fn push_pair(out: &mut Vec<TensorSpec>, base: &str, w_shape: Vec<usize>, b_len: usize, fan_in: usize) {
    out.push(TensorSpec { name: format!("{base}.weight"), shape: w_shape, fan_in });
    out.push(TensorSpec { name: format!("{base}.bias"), shape: vec![b_len], fan_in });
}

fn push_affine(out: &mut Vec<TensorSpec>, base: &str, len: usize) {
    out.push(TensorSpec { name: format!("{base}.gamma"), shape: vec![len], fan_in: len });
    out.push(TensorSpec { name: format!("{base}.beta"), shape: vec![len], fan_in: len });
}

/// Every tensor of the model in canonical order, with shapes and fan-in.
pub(crate) fn tensor_specs(cfg: &ModelConfig) -> Vec<TensorSpec> {
    let (h, im) = (cfg.hidden, cfg.intermediate);
    let mut out = Vec::new();
    for branch in ["amp", "phase"] {
        push_pair(
            &mut out,
            &format!("{branch}.input_conv"),
            vec![h, cfg.n_mels(), cfg.kernel_io],
            h,
            cfg.n_mels() * cfg.kernel_io,
        );
        for i in 1..=cfg.num_blocks {
            let base = format!("{branch}.block{i}");
            push_pair(&mut out, &format!("{base}.dwconv"), vec![h, cfg.kernel_dw], h, cfg.kernel_dw);
            push_affine(&mut out, &format!("{base}.norm"), h);
            push_pair(&mut out, &format!("{base}.pw1"), vec![im, h], im, h);
            push_affine(&mut out, &format!("{base}.grn"), im);
            push_pair(&mut out, &format!("{base}.pw2"), vec![h, im], h, im);
        }
        let head_shape = vec![cfg.n_bins(), h, cfg.kernel_io];
        if branch == "amp" {
            push_pair(&mut out, "amp.head", head_shape, cfg.n_bins(), h * cfg.kernel_io);
        } else {
            push_pair(&mut out, "phase.head_r", head_shape.clone(), cfg.n_bins(), h * cfg.kernel_io);
            push_pair(&mut out, "phase.head_i", head_shape, cfg.n_bins(), h * cfg.kernel_io);
        }
    }
    out
}

// --- parameter views over an archive ---

#[derive(Clone, Copy)]
pub(crate) struct ConvView<'a> {
    pub(crate) weight: &'a [f32],
    pub(crate) bias: &'a [f32],
    pub(crate) in_ch: usize,
    pub(crate) out_ch: usize,
    pub(crate) kernel: usize,
    pub(crate) dilation: usize,
}

#[derive(Clone, Copy)]
pub(crate) struct PwView<'a> {
    pub(crate) weight: &'a [f32],
    pub(crate) bias: &'a [f32],
    pub(crate) in_ch: usize,
    pub(crate) out_ch: usize,
}

#[derive(Clone, Copy)]
pub(crate) struct AffineView<'a> {
    pub(crate) gamma: &'a [f32],
    pub(crate) beta: &'a [f32],
}

pub(crate) struct BlockView<'a> {
    pub(crate) dw_weight: &'a [f32],
    pub(crate) dw_bias: &'a [f32],
    pub(crate) norm: AffineView<'a>,
    pub(crate) pw1: PwView<'a>,
    pub(crate) grn: AffineView<'a>,
    pub(crate) pw2: PwView<'a>,
}

pub(crate) struct BranchParams<'a> {
    pub(crate) input: ConvView<'a>,
    pub(crate) blocks: Vec<BlockView<'a>>,
    /// One head for the amplitude branch, two (real, imaginary) for phase.
    pub(crate) heads: Vec<ConvView<'a>>,
}

/// Validated, zero-copy views of one model's weights inside an archive.
pub struct ModelParams<'a> {
    pub(crate) cfg: ModelConfig,
    pub(crate) amp: BranchParams<'a>,
    pub(crate) phase: BranchParams<'a>,
}

fn tensor<'a>(archive: &'a WeightArchive, name: &str, shape: &[usize]) -> Result<&'a [f32]> {
    let rec = archive.require(name)?;
    if rec.shape != shape {
        return Err(invalid(format!(
            "tensor '{name}' has shape {:?}, expected {:?}",
            rec.shape, shape
        )));
    }
    Ok(&rec.data)
}

impl<'a> ModelParams<'a> {
    pub fn new(archive: &'a WeightArchive, cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let (h, im, nb) = (cfg.hidden, cfg.intermediate, cfg.n_bins());
        let branch = |name: &str, heads: &[&str]| -> Result<BranchParams<'a>> {
            let input = ConvView {
                weight: tensor(
                    archive,
                    &format!("{name}.input_conv.weight"),
                    &[h, cfg.n_mels(), cfg.kernel_io],
                )?,
                bias: tensor(archive, &format!("{name}.input_conv.bias"), &[h])?,
                in_ch: cfg.n_mels(),
                out_ch: h,
                kernel: cfg.kernel_io,
                dilation: 1,
            };
            let mut blocks = Vec::with_capacity(cfg.num_blocks);
            for i in 1..=cfg.num_blocks {
                let base = format!("{name}.block{i}");
                blocks.push(BlockView {
                    dw_weight: tensor(archive, &format!("{base}.dwconv.weight"), &[h, cfg.kernel_dw])?,
                    dw_bias: tensor(archive, &format!("{base}.dwconv.bias"), &[h])?,
                    norm: AffineView {
                        gamma: tensor(archive, &format!("{base}.norm.gamma"), &[h])?,
                        beta: tensor(archive, &format!("{base}.norm.beta"), &[h])?,
                    },
                    pw1: PwView {
                        weight: tensor(archive, &format!("{base}.pw1.weight"), &[im, h])?,
                        bias: tensor(archive, &format!("{base}.pw1.bias"), &[im])?,
                        in_ch: h,
                        out_ch: im,
                    },
                    grn: AffineView {
                        gamma: tensor(archive, &format!("{base}.grn.gamma"), &[im])?,
                        beta: tensor(archive, &format!("{base}.grn.beta"), &[im])?,
                    },
                    pw2: PwView {
                        weight: tensor(archive, &format!("{base}.pw2.weight"), &[h, im])?,
                        bias: tensor(archive, &format!("{base}.pw2.bias"), &[h])?,
                        in_ch: im,
                        out_ch: h,
                    },
                });
            }
            let heads = heads
                .iter()
                .map(|head| {
                    Ok(ConvView {
                        weight: tensor(
                            archive,
                            &format!("{name}.{head}.weight"),
                            &[nb, h, cfg.kernel_io],
                        )?,
                        bias: tensor(archive, &format!("{name}.{head}.bias"), &[nb])?,
                        in_ch: h,
                        out_ch: nb,
                        kernel: cfg.kernel_io,
                        dilation: 1,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(BranchParams { input, blocks, heads })
        };
        Ok(Self {
            cfg: cfg.clone(),
            amp: branch("amp", &["head"])?,
            phase: branch("phase", &["head_r", "head_i"])?,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    /// Run the full graph over a mel sequence, returning the predicted
    /// spectra and the per-layer feature trace.
    pub fn forward(&self, mel: &MelSpectrogram) -> Result<(SpectralPair, FeatureTrace)> {
        if mel.n_mels() != self.cfg.n_mels() {
            return Err(invalid(format!(
                "mel input has {} bands, model expects {}",
                mel.n_mels(),
                self.cfg.n_mels()
            )));
        }
        let cfg = &self.cfg;
        let mut trace = FeatureTrace::empty(cfg);

        let amp_feat = branch_backbone(&mel.values, &self.amp, cfg, &mut trace.amp);
        let log_amplitude = conv_view_apply(&amp_feat, self.amp.heads[0], cfg.causal);

        let phase_feat = branch_backbone(&mel.values, &self.phase, cfg, &mut trace.phase);
        let re = conv_view_apply(&phase_feat, self.phase.heads[0], cfg.causal);
        let im = conv_view_apply(&phase_feat, self.phase.heads[1], cfg.causal);
        let phase = nn::phase_activate(&re, &im)?;

        Ok((SpectralPair { log_amplitude, phase }, trace))
    }
}

fn conv_view_apply(x: &FrameTensor, v: ConvView<'_>, causal: bool) -> FrameTensor {
    conv_apply(x, v.weight, v.bias, v.in_ch, v.out_ch, v.kernel, v.dilation, causal)
}

fn pointwise_apply(x: &FrameTensor, v: PwView<'_>) -> FrameTensor {
    let mut out = FrameTensor::zeros(x.frames(), v.out_ch);
    par::for_each_chunk_mut(out.data_mut(), v.out_ch, |t, row| {
        nn::linear_rows(v.weight, v.bias, v.in_ch, x.frame(t), 0..v.out_ch, row);
    });
    out
}

fn gelu_inplace(x: &mut FrameTensor) {
    let c = x.channels();
    par::for_each_chunk_mut(x.data_mut(), c, |_, row| nn::gelu_frame(row));
}

fn add_residual(y: &mut FrameTensor, x: &FrameTensor) {
    let c = y.channels();
    par::for_each_chunk_mut(y.data_mut(), c, |t, row| {
        for (a, b) in row.iter_mut().zip(x.frame(t)) {
            *a += b;
        }
    });
}

pub(crate) fn block_apply(x: &FrameTensor, b: &BlockView<'_>, cfg: &ModelConfig) -> FrameTensor {
    let h = dwconv_apply(x, b.dw_weight, b.dw_bias, x.channels(), cfg.kernel_dw, cfg.dilation, cfg.causal);
    let h = nn::layer_norm_channels(&h, b.norm.gamma, b.norm.beta, LN_EPS).expect("validated dims");
    let mut h = pointwise_apply(&h, b.pw1);
    gelu_inplace(&mut h);
    let h = nn::grn(&h, b.grn.gamma, b.grn.beta, cfg.grn_mode, GRN_EPS).expect("validated dims");
    let mut y = pointwise_apply(&h, b.pw2);
    add_residual(&mut y, x);
    y
}

fn branch_backbone(
    mel: &FrameTensor,
    branch: &BranchParams<'_>,
    cfg: &ModelConfig,
    trace: &mut BranchTrace,
) -> FrameTensor {
    let mut h = conv_view_apply(mel, branch.input, cfg.causal);
    trace.input_conv = h.clone();
    for (i, block) in branch.blocks.iter().enumerate() {
        h = block_apply(&h, block, cfg);
        trace.blocks[i] = h.clone();
    }
    h
}

/// Owned parameters of a single ConvNeXt v2 block, for standalone use.
#[derive(Debug, Clone)]
pub struct ConvNextBlockParams {
    pub dwconv: DepthwiseParams,
    pub norm_gamma: Vec<f32>,
    pub norm_beta: Vec<f32>,
    pub pw1_weight: Vec<f32>,
    pub pw1_bias: Vec<f32>,
    pub grn_gamma: Vec<f32>,
    pub grn_beta: Vec<f32>,
    pub pw2_weight: Vec<f32>,
    pub pw2_bias: Vec<f32>,
}

/// `y = x + pw2(grn(gelu(pw1(layer_norm(dwconv(x))))))`.
pub fn convnext_v2_block(
    x: &FrameTensor,
    p: &ConvNextBlockParams,
    grn_mode: GrnMode,
) -> Result<FrameTensor> {
    let hidden = p.dwconv.channels;
    if x.channels() != hidden {
        return Err(invalid(format!(
            "block input has {} channels, expected {}",
            x.channels(),
            hidden
        )));
    }
    let intermediate = p.grn_gamma.len();
    if p.norm_gamma.len() != hidden
        || p.norm_beta.len() != hidden
        || p.pw1_weight.len() != intermediate * hidden
        || p.pw1_bias.len() != intermediate
        || p.grn_beta.len() != intermediate
        || p.pw2_weight.len() != hidden * intermediate
        || p.pw2_bias.len() != hidden
    {
        return Err(invalid("block parameter shapes are inconsistent"));
    }
    let cfg = ModelConfig {
        hidden,
        intermediate,
        kernel_dw: p.dwconv.kernel,
        dilation: p.dwconv.dilation,
        causal: p.dwconv.causal,
        grn_mode,
        num_blocks: 1,
        ..Default::default()
    };
    let view = BlockView {
        dw_weight: &p.dwconv.weight,
        dw_bias: &p.dwconv.bias,
        norm: AffineView { gamma: &p.norm_gamma, beta: &p.norm_beta },
        pw1: PwView { weight: &p.pw1_weight, bias: &p.pw1_bias, in_ch: hidden, out_ch: intermediate },
        grn: AffineView { gamma: &p.grn_gamma, beta: &p.grn_beta },
        pw2: PwView { weight: &p.pw2_weight, bias: &p.pw2_bias, in_ch: intermediate, out_ch: hidden },
    };
    Ok(block_apply(x, &view, &cfg))
}

/// Convenience wrapper: build [`ModelParams`] and run [`ModelParams::forward`].
pub fn forward_batch(
    mel: &MelSpectrogram,
    weights: &WeightArchive,
    cfg: &ModelConfig,
) -> Result<(SpectralPair, FeatureTrace)> {
    ModelParams::new(weights, cfg)?.forward(mel)
}

/// Full batch synthesis: forward pass, exponentiate the log amplitudes, and
/// reconstruct `(T-1) * hop` samples via the inverse STFT (center-trimmed).
pub fn synthesize_batch(
    mel: &MelSpectrogram,
    weights: &WeightArchive,
    cfg: &ModelConfig,
) -> Result<Vec<f32>> {
    let (pair, _) = forward_batch(mel, weights, cfg)?;
    synthesize_from_pair(&pair, &cfg.spectral)
}

/// Exponentiate a predicted log-amplitude/phase pair and run the inverse STFT.
pub fn synthesize_from_pair(pair: &SpectralPair, cfg: &SpectralConfig) -> Result<Vec<f32>> {
    let frames = pair.log_amplitude.frames();
    if frames == 0 {
        return Ok(Vec::new());
    }
    istft_batch(&to_complex(pair)?, cfg, (frames - 1) * cfg.hop)
}

/// As [`synthesize_from_pair`] but on the raw overlap-add timeline (no
/// center trim): `(T-1)*hop + frame_len` samples, sample-aligned with the
/// streaming emitter's output.
pub fn synthesize_from_pair_raw(pair: &SpectralPair, cfg: &SpectralConfig) -> Result<Vec<f32>> {
    if pair.log_amplitude.frames() == 0 {
        return Ok(Vec::new());
    }
    crate::spectral::istft_raw(&to_complex(pair)?, cfg)
}

fn to_complex(pair: &SpectralPair) -> Result<crate::spectral::ComplexSpectrogram> {
    let mut amp = pair.log_amplitude.clone();
    for v in amp.data_mut() {
        *v = v.exp();
    }
    crate::spectral::ComplexSpectrogram::new(amp, pair.phase.clone())
}

// --- FLOPs accounting ---

/// Per-layer multiply-accumulate counts for one frame of output, and the
/// implied per-second total. Conventions (1 MAC = 1 FLOP):
/// full conv `out*in*k`, depthwise `ch*k`, pointwise `out*in`,
/// layer norm `4*ch`, GRN `5*ch`; parameter-free activations count zero.
#[derive(Debug, Clone)]
pub struct FlopsReport {
    pub per_layer: Vec<(String, u64)>,
    pub macs_per_frame: u64,
    pub frames_per_second: f64,
    pub flops_per_second: f64,
}

pub fn count_flops(cfg: &ModelConfig) -> Result<FlopsReport> {
    cfg.validate()?;
    let (h, im, nb) = (cfg.hidden as u64, cfg.intermediate as u64, cfg.n_bins() as u64);
    let (k_io, k_dw) = (cfg.kernel_io as u64, cfg.kernel_dw as u64);
    let mels = cfg.n_mels() as u64;

    let mut per_layer = Vec::new();
    for branch in ["amp", "phase"] {
        per_layer.push((format!("{branch}.input_conv"), h * mels * k_io));
        for i in 1..=cfg.num_blocks {
            let base = format!("{branch}.block{i}");
            per_layer.push((format!("{base}.dwconv"), h * k_dw));
            per_layer.push((format!("{base}.norm"), 4 * h));
            per_layer.push((format!("{base}.pw1"), im * h));
            per_layer.push((format!("{base}.grn"), 5 * im));
            per_layer.push((format!("{base}.pw2"), h * im));
        }
        if branch == "amp" {
            per_layer.push(("amp.head".into(), nb * h * k_io));
        } else {
            per_layer.push(("phase.head_r".into(), nb * h * k_io));
            per_layer.push(("phase.head_i".into(), nb * h * k_io));
        }
    }
    let macs_per_frame: u64 = per_layer.iter().map(|(_, m)| m).sum();
    let frames_per_second = cfg.spectral.sample_rate as f64 / cfg.spectral.hop as f64;
    Ok(FlopsReport {
        per_layer,
        macs_per_frame,
        frames_per_second,
        flops_per_second: macs_per_frame as f64 * frames_per_second,
    })
}
