//! Primitive neural operations over frame-major sequences.
//!
//! All operations work on [`FrameTensor`] values laid out `[T x C]` with the
//! frame (time) index outermost. Convolutions run along the frame axis with
//! stride 1; everything else is frame-local. The per-frame kernels at the
//! bottom of this module are shared between the batch operations here and
//! the ring-buffer streaming engine, which is what makes streaming output
//! bit-identical to batch output.

use crate::error::{invalid, Result};
use crate::par;

/// Frame-major `[T x C]` buffer of `f32` values.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameTensor {
    channels: usize,
    data: Vec<f32>,
}

impl FrameTensor {
    pub fn zeros(frames: usize, channels: usize) -> Self {
        assert!(channels >= 1, "FrameTensor requires at least one channel");
        Self { channels, data: vec![0.0; frames * channels] }
    }

    /// Wrap an existing frame-major buffer; `data.len()` must be a multiple
    /// of `channels`.
    pub fn from_vec(channels: usize, data: Vec<f32>) -> Result<Self> {
        if channels == 0 {
            return Err(invalid("FrameTensor channel count must be >= 1"));
        }
        if data.len() % channels != 0 {
            return Err(invalid(format!(
                "FrameTensor data length {} is not a multiple of {} channels",
                data.len(),
                channels
            )));
        }
        Ok(Self { channels, data })
    }

    pub fn frames(&self) -> usize {
        self.data.len() / self.channels
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        &self.data[t * self.channels..(t + 1) * self.channels]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [f32] {
        &mut self.data[t * self.channels..(t + 1) * self.channels]
    }

    pub fn push_frame(&mut self, frame: &[f32]) {
        assert_eq!(frame.len(), self.channels);
        self.data.extend_from_slice(frame);
    }

    pub fn iter_frames(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.channels)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    /// Largest elementwise absolute difference; tensors must have equal shape.
    pub fn max_abs_diff(&self, other: &FrameTensor) -> f32 {
        assert_eq!(self.channels, other.channels);
        assert_eq!(self.data.len(), other.data.len());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }
}

/// Parameters of a 1-D convolution along the frame axis (stride fixed at 1).
///
/// `weight` is `[out_ch x in_ch x kernel]` row-major; tap `kernel - 1` is the
/// newest frame. In causal mode the input is left-padded with `(kernel-1) *
/// dilation` zero frames, so output frame `t` depends only on inputs `<= t`.
/// In non-causal mode padding is split so that output frame `t` looks ahead
/// exactly `zeta(k, d) = floor((k-1)*d / 2)` frames (left pad
/// `ceil((k-1)*d / 2)`, right pad `floor((k-1)*d / 2)`).
#[derive(Debug, Clone)]
pub struct ConvParams {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub dilation: usize,
    pub causal: bool,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl ConvParams {
    pub fn new(
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        dilation: usize,
        causal: bool,
        weight: Vec<f32>,
        bias: Vec<f32>,
    ) -> Result<Self> {
        if kernel < 1 || dilation < 1 || in_ch < 1 || out_ch < 1 {
            return Err(invalid("conv dims and kernel/dilation must be >= 1"));
        }
        if weight.len() != out_ch * in_ch * kernel {
            return Err(invalid(format!(
                "conv weight length {} != out*in*kernel = {}",
                weight.len(),
                out_ch * in_ch * kernel
            )));
        }
        if bias.len() != out_ch {
            return Err(invalid(format!("conv bias length {} != out_ch {}", bias.len(), out_ch)));
        }
        Ok(Self { in_ch, out_ch, kernel, dilation, causal, weight, bias })
    }

}

/// Zero frames implied on the left of the input: the full tap span in causal
/// mode, `ceil(span / 2)` otherwise (leaving `floor(span / 2)` of lookahead).
pub(crate) fn left_pad(kernel: usize, dilation: usize, causal: bool) -> usize {
    let span = (kernel - 1) * dilation;
    if causal {
        span
    } else {
        span - span / 2
    }
}

pub fn conv1d(x: &FrameTensor, p: &ConvParams) -> Result<FrameTensor> {
    if x.channels() != p.in_ch {
        return Err(invalid(format!(
            "conv1d input has {} channels, expected {}",
            x.channels(),
            p.in_ch
        )));
    }
    Ok(conv_apply(
        x, &p.weight, &p.bias, p.in_ch, p.out_ch, p.kernel, p.dilation, p.causal,
    ))
}

/// Full convolution over borrowed parameter slices. Caller guarantees the
/// slice lengths match the stated dimensions.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_apply(
    x: &FrameTensor,
    weight: &[f32],
    bias: &[f32],
    in_ch: usize,
    out_ch: usize,
    kernel: usize,
    dilation: usize,
    causal: bool,
) -> FrameTensor {
    let frames = x.frames();
    let mut out = FrameTensor::zeros(frames, out_ch);
    let zeros = vec![0.0f32; in_ch];
    let left = left_pad(kernel, dilation, causal) as isize;
    par::for_each_chunk_mut(out.data_mut(), out_ch, |t, row| {
        let mut taps: Vec<&[f32]> = Vec::with_capacity(kernel);
        for j in 0..kernel {
            let src = t as isize + (j * dilation) as isize - left;
            if src >= 0 && (src as usize) < frames {
                taps.push(x.frame(src as usize));
            } else {
                taps.push(&zeros);
            }
        }
        conv_frame(weight, bias, in_ch, kernel, &taps, 0..out_ch, row);
    });
    out
}

/// Depthwise convolution: one length-`kernel` filter per channel.
///
/// `weight` is `[channels x kernel]` row-major; padding follows the same
/// causal/non-causal rule as [`ConvParams`].
#[derive(Debug, Clone)]
pub struct DepthwiseParams {
    pub channels: usize,
    pub kernel: usize,
    pub dilation: usize,
    pub causal: bool,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl DepthwiseParams {
    pub fn new(
        channels: usize,
        kernel: usize,
        dilation: usize,
        causal: bool,
        weight: Vec<f32>,
        bias: Vec<f32>,
    ) -> Result<Self> {
        if kernel < 1 || dilation < 1 || channels < 1 {
            return Err(invalid("depthwise dims and kernel/dilation must be >= 1"));
        }
        if weight.len() != channels * kernel {
            return Err(invalid(format!(
                "depthwise weight length {} != channels*kernel = {}",
                weight.len(),
                channels * kernel
            )));
        }
        if bias.len() != channels {
            return Err(invalid(format!(
                "depthwise bias length {} != channels {}",
                bias.len(),
                channels
            )));
        }
        Ok(Self { channels, kernel, dilation, causal, weight, bias })
    }
}

pub fn depthwise_conv1d(x: &FrameTensor, p: &DepthwiseParams) -> Result<FrameTensor> {
    if x.channels() != p.channels {
        return Err(invalid(format!(
            "depthwise_conv1d input has {} channels, expected {}",
            x.channels(),
            p.channels
        )));
    }
    Ok(dwconv_apply(x, &p.weight, &p.bias, p.channels, p.kernel, p.dilation, p.causal))
}

/// Depthwise convolution over borrowed parameter slices.
pub(crate) fn dwconv_apply(
    x: &FrameTensor,
    weight: &[f32],
    bias: &[f32],
    channels: usize,
    kernel: usize,
    dilation: usize,
    causal: bool,
) -> FrameTensor {
    let frames = x.frames();
    let mut out = FrameTensor::zeros(frames, channels);
    let zeros = vec![0.0f32; channels];
    let left = left_pad(kernel, dilation, causal) as isize;
    par::for_each_chunk_mut(out.data_mut(), channels, |t, row| {
        let mut taps: Vec<&[f32]> = Vec::with_capacity(kernel);
        for j in 0..kernel {
            let src = t as isize + (j * dilation) as isize - left;
            if src >= 0 && (src as usize) < frames {
                taps.push(x.frame(src as usize));
            } else {
                taps.push(&zeros);
            }
        }
        dwconv_frame(weight, bias, channels, kernel, &taps, row);
    });
    out
}

/// Per-frame layer normalization over the channel axis.
pub fn layer_norm_channels(
    x: &FrameTensor,
    gamma: &[f32],
    beta: &[f32],
    eps: f32,
) -> Result<FrameTensor> {
    let c = x.channels();
    if gamma.len() != c || beta.len() != c {
        return Err(invalid(format!(
            "layer_norm gamma/beta lengths {}/{} != {} channels",
            gamma.len(),
            beta.len(),
            c
        )));
    }
    if c == 1 && eps == 0.0 {
        return Err(invalid("layer_norm over a single channel requires eps > 0"));
    }
    let mut out = FrameTensor::zeros(x.frames(), c);
    par::for_each_chunk_mut(out.data_mut(), c, |t, row| {
        layer_norm_frame(x.frame(t), gamma, beta, eps, row);
    });
    Ok(out)
}

/// Exact Gaussian-error GELU, `0.5 * x * (1 + erf(x / sqrt(2)))`.
pub fn gelu(x: f32) -> f32 {
    0.5 * x * (1.0 + libm::erff(x * std::f32::consts::FRAC_1_SQRT_2))
}

/// Statistics mode for [`grn`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GrnMode {
    /// Per-channel L2 norm over the whole sequence (looks at every frame).
    Global,
    /// Per-channel L2 norm over frames `<= t` — causal, streamable with a
    /// running sum of squares.
    CausalCumulative,
}

/// Global response normalization with residual:
/// `y = gamma * (x * n) + beta + x` where `n_c = g_c / (mean_c g + eps)` and
/// `g` is the per-channel L2 norm chosen by `mode`.
pub fn grn(
    x: &FrameTensor,
    gamma: &[f32],
    beta: &[f32],
    mode: GrnMode,
    eps: f32,
) -> Result<FrameTensor> {
    let c = x.channels();
    if gamma.len() != c || beta.len() != c {
        return Err(invalid(format!(
            "grn gamma/beta lengths {}/{} != {} channels",
            gamma.len(),
            beta.len(),
            c
        )));
    }
    let frames = x.frames();
    let mut out = FrameTensor::zeros(frames, c);
    match mode {
        GrnMode::Global => {
            let mut sumsq = vec![0.0f32; c];
            for t in 0..frames {
                accumulate_sumsq(x.frame(t), &mut sumsq);
            }
            let g: Vec<f32> = sumsq.iter().map(|s| s.sqrt()).collect();
            par::for_each_chunk_mut(out.data_mut(), c, |t, row| {
                grn_apply_frame(x.frame(t), &g, gamma, beta, eps, row);
            });
        }
        GrnMode::CausalCumulative => {
            // Running statistics force a sequential scan over frames.
            let mut sumsq = vec![0.0f32; c];
            let mut g = vec![0.0f32; c];
            for t in 0..frames {
                accumulate_sumsq(x.frame(t), &mut sumsq);
                for (gc, s) in g.iter_mut().zip(&sumsq) {
                    *gc = s.sqrt();
                }
                grn_apply_frame(x.frame(t), &g, gamma, beta, eps, out.frame_mut(t));
            }
        }
    }
    Ok(out)
}

/// Two-argument arctangent activation: `phi = atan2(i, r)`, with
/// `atan2(0, 0)` defined as 0 and the result folded into `(-pi, pi]`.
pub fn phase_activate(r: &FrameTensor, i: &FrameTensor) -> Result<FrameTensor> {
    if r.channels() != i.channels() || r.frames() != i.frames() {
        return Err(invalid(format!(
            "phase_activate operands differ in shape: [{} x {}] vs [{} x {}]",
            r.frames(),
            r.channels(),
            i.frames(),
            i.channels()
        )));
    }
    let c = r.channels();
    let mut out = FrameTensor::zeros(r.frames(), c);
    par::for_each_chunk_mut(out.data_mut(), c, |t, row| {
        phase_activate_frame(r.frame(t), i.frame(t), row);
    });
    Ok(out)
}

// --- per-frame kernels (shared by batch ops and the streaming engine) ---

/// Dot product with eight independent accumulators; the fixed lane-combine
/// order keeps results identical across call sites and thread counts.
#[inline]
pub(crate) fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f32; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let ra = ca.remainder();
    let rb = cb.remainder();
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut s = ((acc[0] + acc[4]) + (acc[2] + acc[6])) + ((acc[1] + acc[5]) + (acc[3] + acc[7]));
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

/// One output frame of a full convolution. `taps[j]` is the input frame read
/// by kernel tap `j` (callers pass a zero frame for padding); `rows` selects
/// the output channels to fill, and `out` holds exactly those rows.
#[inline]
pub(crate) fn conv_frame(
    weight: &[f32],
    bias: &[f32],
    in_ch: usize,
    kernel: usize,
    taps: &[&[f32]],
    rows: std::ops::Range<usize>,
    out: &mut [f32],
) {
    debug_assert_eq!(taps.len(), kernel);
    debug_assert_eq!(out.len(), rows.len());
    for (o, y) in rows.zip(out.iter_mut()) {
        let wrow = &weight[o * in_ch * kernel..(o + 1) * in_ch * kernel];
        let mut acc = bias[o];
        for (c, wtap) in wrow.chunks_exact(kernel).enumerate() {
            for (j, w) in wtap.iter().enumerate() {
                acc += w * taps[j][c];
            }
        }
        *y = acc;
    }
}

/// One output frame of a depthwise convolution.
#[inline]
pub(crate) fn dwconv_frame(
    weight: &[f32],
    bias: &[f32],
    channels: usize,
    kernel: usize,
    taps: &[&[f32]],
    out: &mut [f32],
) {
    debug_assert_eq!(taps.len(), kernel);
    debug_assert_eq!(out.len(), channels);
    for c in 0..channels {
        let w = &weight[c * kernel..(c + 1) * kernel];
        let mut acc = bias[c];
        for (j, wj) in w.iter().enumerate() {
            acc += wj * taps[j][c];
        }
        out[c] = acc;
    }
}

/// One output block of a frame-local linear map (pointwise convolution):
/// `out[o] = bias[o] + w[o] . x` for `o` in `rows`.
#[inline]
pub(crate) fn linear_rows(
    weight: &[f32],
    bias: &[f32],
    in_ch: usize,
    x: &[f32],
    rows: std::ops::Range<usize>,
    out: &mut [f32],
) {
    debug_assert_eq!(out.len(), rows.len());
    for (o, y) in rows.zip(out.iter_mut()) {
        *y = bias[o] + dot(&weight[o * in_ch..(o + 1) * in_ch], x);
    }
}

#[inline]
pub(crate) fn layer_norm_frame(x: &[f32], gamma: &[f32], beta: &[f32], eps: f32, out: &mut [f32]) {
    let c = x.len();
    let mut mean = 0.0f32;
    for v in x {
        mean += v;
    }
    mean /= c as f32;
    let mut var = 0.0f32;
    for v in x {
        let d = v - mean;
        var += d * d;
    }
    var /= c as f32;
    let inv = 1.0 / (var + eps).sqrt();
    for i in 0..c {
        out[i] = gamma[i] * ((x[i] - mean) * inv) + beta[i];
    }
}

#[inline]
pub(crate) fn gelu_frame(x: &mut [f32]) {
    for v in x.iter_mut() {
        *v = gelu(*v);
    }
}

#[inline]
pub(crate) fn accumulate_sumsq(x: &[f32], sumsq: &mut [f32]) {
    for (s, v) in sumsq.iter_mut().zip(x) {
        *s += v * v;
    }
}

/// Apply GRN given the per-channel norms `g` in effect for this frame.
#[inline]
pub(crate) fn grn_apply_frame(
    x: &[f32],
    g: &[f32],
    gamma: &[f32],
    beta: &[f32],
    eps: f32,
    out: &mut [f32],
) {
    let c = x.len();
    let mut mean = 0.0f32;
    for v in g {
        mean += v;
    }
    mean /= c as f32;
    let denom = mean + eps;
    for i in 0..c {
        let n = g[i] / denom;
        out[i] = gamma[i] * (x[i] * n) + beta[i] + x[i];
    }
}

#[inline]
pub(crate) fn phase_activate_frame(r: &[f32], i: &[f32], out: &mut [f32]) {
    for ((y, re), im) in out.iter_mut().zip(r).zip(i) {
        *y = if *re == 0.0 && *im == 0.0 {
            0.0
        } else {
            let p = im.atan2(*re);
            if p <= -std::f32::consts::PI {
                std::f32::consts::PI
            } else {
                p
            }
        };
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tensor(channels: usize, rows: &[&[f32]]) -> FrameTensor {
        let mut t = FrameTensor::zeros(0, channels);
        for r in rows {
            t.push_frame(r);
        }
        t
    }

    #[test]
    fn conv_identity_tap_is_identity() {
        // k=3 causal, only the newest tap set: y_t = x_t
        let p = ConvParams::new(1, 1, 3, 1, true, vec![0.0, 0.0, 1.0], vec![0.0]).unwrap();
        let x = tensor(1, &[&[1.0], &[2.0], &[3.0]]);
        let y = conv1d(&x, &p).unwrap();
        assert_eq!(y.data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn conv_delay_tap_reads_zero_padding() {
        let p = ConvParams::new(1, 1, 3, 1, true, vec![1.0, 0.0, 0.0], vec![0.0]).unwrap();
        let x = tensor(1, &[&[1.0], &[2.0], &[3.0]]);
        let y = conv1d(&x, &p).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn noncausal_newest_tap_reads_one_frame_ahead() {
        let p = ConvParams::new(1, 1, 3, 1, false, vec![0.0, 0.0, 1.0], vec![0.0]).unwrap();
        let x = tensor(1, &[&[1.0], &[2.0], &[3.0]]);
        let y = conv1d(&x, &p).unwrap();
        assert_eq!(y.data(), &[2.0, 3.0, 0.0]);
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let p = ConvParams::new(2, 1, 1, 1, true, vec![1.0, 1.0], vec![0.0]).unwrap();
        let x = tensor(1, &[&[1.0]]);
        assert!(conv1d(&x, &p).is_err());
    }

    #[test]
    fn causal_conv_prefix_is_bit_stable() {
        let k = 5;
        let in_ch = 3;
        let out_ch = 4;
        let weight: Vec<f32> =
            (0..out_ch * in_ch * k).map(|i| ((i * 37 % 19) as f32 - 9.0) * 0.07).collect();
        let bias: Vec<f32> = (0..out_ch).map(|i| i as f32 * 0.1).collect();
        let p = ConvParams::new(in_ch, out_ch, k, 2, true, weight, bias).unwrap();
        let mut x = FrameTensor::zeros(12, in_ch);
        for (i, v) in x.data_mut().iter_mut().enumerate() {
            *v = ((i * 13 % 23) as f32 - 11.0) * 0.3;
        }
        let y = conv1d(&x, &p).unwrap();
        let cut = 7;
        let mut x2 = x.clone();
        for t in cut + 1..12 {
            for v in x2.frame_mut(t) {
                *v += 5.0;
            }
        }
        let y2 = conv1d(&x2, &p).unwrap();
        for t in 0..=cut {
            assert_eq!(y.frame(t), y2.frame(t), "frame {t} changed");
        }
        assert_ne!(y.frame(cut + 1), y2.frame(cut + 1));
    }

    #[test]
    fn depthwise_identity_and_bias() {
        let p = DepthwiseParams::new(2, 3, 1, true, vec![0.0, 0.0, 1.0, 0.0, 0.0, 1.0], vec![0.0; 2])
            .unwrap();
        let x = tensor(2, &[&[1.0, -1.0], &[2.0, -2.0]]);
        assert_eq!(depthwise_conv1d(&x, &p).unwrap(), x);

        let p0 = DepthwiseParams::new(2, 3, 1, true, vec![0.0; 6], vec![0.5, -0.5]).unwrap();
        let y = depthwise_conv1d(&x, &p0).unwrap();
        assert_eq!(y.data(), &[0.5, -0.5, 0.5, -0.5]);
    }

    #[test]
    fn depthwise_matches_per_channel_conv1d() {
        // oracle: run each channel through a 1-channel full conv
        let k = 3;
        let w = vec![0.3, -0.2, 0.9, 0.1, 0.4, -0.7];
        let b = vec![0.25, -0.5];
        let p = DepthwiseParams::new(2, k, 1, true, w.clone(), b.clone()).unwrap();
        let x = tensor(2, &[&[1.0, 4.0], &[2.0, 5.0], &[3.0, 6.0], &[-1.0, 0.5]]);
        let y = depthwise_conv1d(&x, &p).unwrap();

        for c in 0..2 {
            let xc = FrameTensor::from_vec(1, x.iter_frames().map(|f| f[c]).collect()).unwrap();
            let pc = ConvParams::new(1, 1, k, 1, true, w[c * k..(c + 1) * k].to_vec(), vec![b[c]])
                .unwrap();
            let yc = conv1d(&xc, &pc).unwrap();
            for t in 0..x.frames() {
                assert!((y.frame(t)[c] - yc.frame(t)[0]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn layer_norm_zero_centers_constants() {
        let x = tensor(3, &[&[5.0, 5.0, 5.0]]);
        let y = layer_norm_channels(&x, &[1.0; 3], &[0.0; 3], 1e-6).unwrap();
        for v in y.data() {
            assert!(v.abs() < 1e-6);
        }
    }

    #[test]
    fn layer_norm_unit_variance_input() {
        let x = tensor(2, &[&[1.0, -1.0]]);
        let y = layer_norm_channels(&x, &[1.0; 2], &[0.0; 2], 1e-6).unwrap();
        assert!((y.frame(0)[0] - 1.0).abs() < 1e-5);
        assert!((y.frame(0)[1] + 1.0).abs() < 1e-5);
    }

    #[test]
    fn layer_norm_output_mean_is_beta_mean() {
        let x = tensor(4, &[&[0.3, -2.0, 7.5, 1.1], &[9.0, 0.0, -3.0, 2.5]]);
        let beta = [0.5, 1.5, -1.0, 2.0];
        let y = layer_norm_channels(&x, &[2.0; 4], &beta, 1e-6).unwrap();
        let beta_mean = beta.iter().sum::<f32>() / 4.0;
        for t in 0..2 {
            let m = y.frame(t).iter().sum::<f32>() / 4.0;
            assert!((m - beta_mean).abs() < 1e-4);
        }
    }

    #[test]
    fn layer_norm_single_channel_needs_eps() {
        let x = tensor(1, &[&[1.0]]);
        assert!(layer_norm_channels(&x, &[1.0], &[0.0], 0.0).is_err());
        assert!(layer_norm_channels(&x, &[1.0], &[0.0], 1e-6).is_ok());
    }

    #[test]
    fn gelu_values() {
        assert_eq!(gelu(0.0), 0.0);
        // identity of the exact form: gelu(x) + gelu(-x) = x
        assert!((gelu(1.5) + gelu(-1.5) - 1.5).abs() < 1e-6);
        // high-precision erf oracle: 0.5*(1+erf(1/sqrt(2))) = 0.8413447460685429
        assert!((gelu(1.0) - 0.841_344_7).abs() < 1e-6);
    }

    #[test]
    fn grn_zero_gamma_beta_is_residual_only() {
        let x = tensor(2, &[&[1.0, 2.0], &[3.0, -4.0]]);
        for mode in [GrnMode::Global, GrnMode::CausalCumulative] {
            let y = grn(&x, &[0.0; 2], &[0.0; 2], mode, 1e-6).unwrap();
            assert_eq!(y, x);
        }
    }

    #[test]
    fn grn_modes_agree_on_single_frame() {
        let x = tensor(3, &[&[0.5, -1.5, 2.0]]);
        let gamma = [0.7, -0.3, 1.1];
        let beta = [0.1, 0.2, -0.4];
        let yg = grn(&x, &gamma, &beta, GrnMode::Global, 1e-6).unwrap();
        let yc = grn(&x, &gamma, &beta, GrnMode::CausalCumulative, 1e-6).unwrap();
        assert_eq!(yg, yc);
    }

    #[test]
    fn grn_cumulative_matches_loop_oracle() {
        let x = tensor(2, &[&[1.0, 2.0], &[-3.0, 0.5]]);
        let gamma = [0.9, 1.2];
        let beta = [-0.1, 0.3];
        let eps = 1e-6;
        let y = grn(&x, &gamma, &beta, GrnMode::CausalCumulative, eps).unwrap();

        // brute-force recomputation, one frame at a time
        for t in 0..2 {
            let mut g = [0.0f64; 2];
            for tau in 0..=t {
                for c in 0..2 {
                    g[c] += (x.frame(tau)[c] as f64).powi(2);
                }
            }
            let g = [g[0].sqrt(), g[1].sqrt()];
            let mean = (g[0] + g[1]) / 2.0;
            for c in 0..2 {
                let n = g[c] / (mean + eps as f64);
                let want = gamma[c] as f64 * (x.frame(t)[c] as f64 * n)
                    + beta[c] as f64
                    + x.frame(t)[c] as f64;
                assert!(
                    (y.frame(t)[c] as f64 - want).abs() < 1e-5,
                    "t={t} c={c}: got {} want {want}",
                    y.frame(t)[c]
                );
            }
        }
        // causal: frame 0 ignores frame 1
        let x2 = tensor(2, &[&[1.0, 2.0], &[100.0, -7.0]]);
        let y2 = grn(&x2, &gamma, &beta, GrnMode::CausalCumulative, eps).unwrap();
        assert_eq!(y.frame(0), y2.frame(0));
    }

    #[test]
    fn grn_global_is_not_causal() {
        let x = tensor(2, &[&[1.0, 2.0], &[3.0, -4.0], &[0.2, 0.7]]);
        let mut x2 = x.clone();
        x2.frame_mut(2)[0] = 50.0;
        let gamma = [1.0, 1.0];
        let beta = [0.0, 0.0];
        let a = grn(&x, &gamma, &beta, GrnMode::Global, 1e-6).unwrap();
        let b = grn(&x2, &gamma, &beta, GrnMode::Global, 1e-6).unwrap();
        assert_ne!(a.frame(0), b.frame(0));
    }

    #[test]
    fn phase_activate_reference_points() {
        use std::f32::consts::{FRAC_PI_2, FRAC_PI_4};
        let r = tensor(4, &[&[1.0, 0.0, 1.0, 0.0]]);
        let i = tensor(4, &[&[0.0, 1.0, -1.0, 0.0]]);
        let y = phase_activate(&r, &i).unwrap();
        assert_eq!(y.frame(0)[0], 0.0);
        assert!((y.frame(0)[1] - FRAC_PI_2).abs() < 1e-7);
        assert!((y.frame(0)[2] + FRAC_PI_4).abs() < 1e-7);
        assert_eq!(y.frame(0)[3], 0.0, "atan2(0,0) must be defined as 0");
    }

    #[test]
    fn phase_activate_range_is_half_open() {
        // atan2(-0.0, -1.0) would be -pi; must fold to +pi
        let r = tensor(1, &[&[-1.0]]);
        let i = tensor(1, &[&[-0.0]]);
        let y = phase_activate(&r, &i).unwrap();
        assert_eq!(y.frame(0)[0], std::f32::consts::PI);
    }
}
