//! Frame-by-frame inference and algorithmic latency analysis.
//!
//! [`StreamState`] holds, per causal conv layer, a ring buffer of the last
//! `(kernel-1) * dilation` input frames (zero-initialized, matching the
//! batch zero padding), one running sum of squares per GRN, and the
//! overlap-add carry. Each [`StreamState::push_frame`] runs one mel frame
//! through both branches with the same per-frame kernels as the batch path
//! and emits exactly `hop` finalized samples — samples whose every
//! overlapping synthesis frame has arrived — so the concatenated emissions
//! are bit-identical to the batch raw timeline.
//!
//! Latency accounting: the delay between the newest input frame and the
//! newest finalized output sample is `lookahead * hop` samples of model
//! latency plus `frame_len - hop` samples held back by overlap-add.

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

use crate::error::{invalid, Error, Result};
use crate::model::{BranchParams, BranchTrace, FeatureTrace, ModelConfig, ModelParams, GRN_EPS, LN_EPS};
use crate::nn::{self, GrnMode};
use crate::par;
use crate::spectral::{make_window, synth_frame, ENVELOPE_FLOOR};

/// Future frames a non-causal convolution needs: `floor((k-1) * d / 2)`.
pub fn zeta(kernel: usize, dilation: usize) -> usize {
    assert!(kernel >= 1 && dilation >= 1, "kernel and dilation must be >= 1");
    (kernel - 1) * dilation / 2
}

/// Model lookahead in input frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Lookahead {
    Frames(usize),
    /// A sequence-global statistic (global GRN) depends on the entire input.
    Unbounded,
}

impl std::fmt::Display for Lookahead {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Lookahead::Frames(n) => write!(f, "{n}"),
            Lookahead::Unbounded => write!(f, "unbounded"),
        }
    }
}

/// Future frames required by the full graph: zeta summed over the serial
/// convolutions of a branch (frame-local ops contribute nothing), maximum
/// over branches and parallel heads.
pub fn lookahead_frames(cfg: &ModelConfig) -> Lookahead {
    if cfg.grn_mode == GrnMode::Global {
        return Lookahead::Unbounded;
    }
    if cfg.causal {
        return Lookahead::Frames(0);
    }
    // both branches stack the same serial conv shapes; parallel heads share
    // the same zeta, so the maximum equals one branch's sum
    let branch = zeta(cfg.kernel_io, 1)
        + cfg.num_blocks * zeta(cfg.kernel_dw, cfg.dilation)
        + zeta(cfg.kernel_io, 1);
    Lookahead::Frames(branch)
}

/// Algorithmic latency breakdown. `total_ms = model + ola` when bounded.
#[derive(Debug, Clone, PartialEq)]
pub struct LatencyReport {
    pub lookahead_frames: Lookahead,
    pub model_latency_ms: Option<f64>,
    pub ola_latency_ms: f64,
    pub total_ms: Option<f64>,
}

pub fn total_latency(cfg: &ModelConfig) -> LatencyReport {
    let sc = &cfg.spectral;
    let ms = |samples: usize| samples as f64 * 1000.0 / sc.sample_rate as f64;
    let ola_samples = sc.frame_len - sc.hop;
    match lookahead_frames(cfg) {
        Lookahead::Frames(frames) => {
            let model_samples = frames * sc.hop;
            LatencyReport {
                lookahead_frames: Lookahead::Frames(frames),
                model_latency_ms: Some(ms(model_samples)),
                ola_latency_ms: ms(ola_samples),
                total_ms: Some(ms(model_samples + ola_samples)),
            }
        }
        Lookahead::Unbounded => LatencyReport {
            lookahead_frames: Lookahead::Unbounded,
            model_latency_ms: None,
            ola_latency_ms: ms(ola_samples),
            total_ms: None,
        },
    }
}

// --- per-layer streaming state ---

/// Ring buffer of the last `depth` input frames, zero-initialized.
#[derive(Debug, Clone, PartialEq)]
struct ConvHistory {
    ch: usize,
    depth: usize,
    buf: Vec<f32>,
    pos: usize,
}

impl ConvHistory {
    fn new(ch: usize, depth: usize) -> Self {
        Self { ch, depth, buf: vec![0.0; ch * depth], pos: 0 }
    }

    /// Frame pushed `age` pushes ago (1 = newest); zeros before the start.
    fn tap(&self, age: usize) -> &[f32] {
        debug_assert!(age >= 1 && age <= self.depth);
        let slot = (self.pos + self.depth - age) % self.depth;
        &self.buf[slot * self.ch..(slot + 1) * self.ch]
    }

    fn push(&mut self, frame: &[f32]) {
        if self.depth == 0 {
            return;
        }
        debug_assert_eq!(frame.len(), self.ch);
        self.buf[self.pos * self.ch..(self.pos + 1) * self.ch].copy_from_slice(frame);
        self.pos = (self.pos + 1) % self.depth;
    }

    fn reset(&mut self) {
        self.buf.fill(0.0);
        self.pos = 0;
    }
}

#[derive(Debug, Clone, PartialEq)]
struct BlockState {
    dw_hist: ConvHistory,
    grn_sumsq: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
struct BranchState {
    input_hist: ConvHistory,
    blocks: Vec<BlockState>,
    head_hist: ConvHistory,
}

impl BranchState {
    fn new(cfg: &ModelConfig) -> Self {
        Self {
            input_hist: ConvHistory::new(cfg.n_mels(), cfg.kernel_io - 1),
            blocks: (0..cfg.num_blocks)
                .map(|_| BlockState {
                    dw_hist: ConvHistory::new(cfg.hidden, (cfg.kernel_dw - 1) * cfg.dilation),
                    grn_sumsq: vec![0.0; cfg.intermediate],
                })
                .collect(),
            head_hist: ConvHistory::new(cfg.hidden, cfg.kernel_io - 1),
        }
    }

    fn reset(&mut self) {
        self.input_hist.reset();
        for b in &mut self.blocks {
            b.dw_hist.reset();
            b.grn_sumsq.fill(0.0);
        }
        self.head_hist.reset();
    }
}

/// Overlap-add carry: accumulated samples and squared-window envelope for
/// the `frame_len` positions still open.
#[derive(Debug, Clone, PartialEq)]
struct OlaEmitter {
    acc: Vec<f32>,
    env: Vec<f32>,
    hop: usize,
}

impl OlaEmitter {
    fn new(frame_len: usize, hop: usize) -> Self {
        Self { acc: vec![0.0; frame_len], env: vec![0.0; frame_len], hop }
    }

    fn push(&mut self, frame: &[f32], wsq: &[f32], out: &mut Vec<f32>) {
        for i in 0..frame.len() {
            self.acc[i] += frame[i];
            self.env[i] += wsq[i];
        }
        for i in 0..self.hop {
            out.push(self.acc[i] / self.env[i].max(ENVELOPE_FLOOR));
        }
        let n = self.acc.len();
        self.acc.copy_within(self.hop.., 0);
        self.acc[n - self.hop..].fill(0.0);
        self.env.copy_within(self.hop.., 0);
        self.env[n - self.hop..].fill(0.0);
    }

    fn tail(&self) -> Vec<f32> {
        let n = self.acc.len() - self.hop;
        (0..n).map(|i| self.acc[i] / self.env[i].max(ENVELOPE_FLOOR)).collect()
    }

    fn reset(&mut self) {
        self.acc.fill(0.0);
        self.env.fill(0.0);
    }
}

/// Reusable per-frame activation buffers.
#[derive(Debug)]
struct ActScratch {
    h: Vec<f32>,
    next: Vec<f32>,
    dw: Vec<f32>,
    ln: Vec<f32>,
    mid: Vec<f32>,
    mid2: Vec<f32>,
    g: Vec<f32>,
}

impl ActScratch {
    fn new(cfg: &ModelConfig) -> Self {
        Self {
            h: vec![0.0; cfg.hidden],
            next: vec![0.0; cfg.hidden],
            dw: vec![0.0; cfg.hidden],
            ln: vec![0.0; cfg.hidden],
            mid: vec![0.0; cfg.intermediate],
            mid2: vec![0.0; cfg.intermediate],
            g: vec![0.0; cfg.intermediate],
        }
    }
}

struct SynthScratch {
    fft: Arc<dyn Fft<f32>>,
    buf: Vec<Complex<f32>>,
    fft_scratch: Vec<Complex<f32>>,
    window: Vec<f32>,
    wsq: Vec<f32>,
    frame: Vec<f32>,
    log_amp: Vec<f32>,
    re: Vec<f32>,
    im: Vec<f32>,
    phase: Vec<f32>,
}

impl SynthScratch {
    fn new(cfg: &ModelConfig) -> Result<Self> {
        let sc = &cfg.spectral;
        let window = make_window(sc.frame_len)?;
        let wsq: Vec<f32> = window.iter().map(|w| w * w).collect();
        let fft = FftPlanner::<f32>::new().plan_fft_inverse(sc.n_fft);
        let scratch_len = fft.get_inplace_scratch_len();
        Ok(Self {
            fft,
            buf: vec![Complex::new(0.0, 0.0); sc.n_fft],
            fft_scratch: vec![Complex::new(0.0, 0.0); scratch_len],
            window,
            wsq,
            frame: vec![0.0; sc.frame_len],
            log_amp: vec![0.0; sc.n_bins()],
            re: vec![0.0; sc.n_bins()],
            im: vec![0.0; sc.n_bins()],
            phase: vec![0.0; sc.n_bins()],
        })
    }
}

/// Rows per dispatch chunk when fanning matvec rows across threads.
const ROW_CHUNK: usize = 128;

/// Streaming synthesis state over shared immutable weights.
///
/// Single-owner: one `push_frame`/`flush` at a time; distinct states may run
/// concurrently over the same [`ModelParams`].
pub struct StreamState<'a> {
    params: &'a ModelParams<'a>,
    amp: BranchState,
    phase: BranchState,
    ola: OlaEmitter,
    synth: SynthScratch,
    scratch: ActScratch,
    frames_pushed: u64,
    finished: bool,
}

impl PartialEq for StreamState<'_> {
    fn eq(&self, other: &Self) -> bool {
        // dynamic state only; scratch contents do not affect behavior
        self.amp == other.amp
            && self.phase == other.phase
            && self.ola == other.ola
            && self.frames_pushed == other.frames_pushed
            && self.finished == other.finished
    }
}

impl<'a> StreamState<'a> {
    /// Build a zero-history state. Fails with the offending layer for any
    /// configuration that needs future frames.
    pub fn new(params: &'a ModelParams<'a>) -> Result<Self> {
        let cfg = params.config();
        if cfg.grn_mode == GrnMode::Global {
            return Err(Error::UnsupportedConfig(
                "grn_mode=global depends on the whole sequence and cannot stream".into(),
            ));
        }
        if !cfg.causal {
            let offender = if zeta(cfg.kernel_io, 1) > 0 {
                format!("amp.input_conv (non-causal, kernel {})", cfg.kernel_io)
            } else if zeta(cfg.kernel_dw, cfg.dilation) > 0 {
                format!("amp.block1.dwconv (non-causal, kernel {})", cfg.kernel_dw)
            } else {
                "causal=false".into()
            };
            return Err(Error::UnsupportedConfig(format!(
                "streaming requires a causal graph; first non-causal layer: {offender}"
            )));
        }
        Ok(Self {
            amp: BranchState::new(cfg),
            phase: BranchState::new(cfg),
            ola: OlaEmitter::new(cfg.spectral.frame_len, cfg.spectral.hop),
            synth: SynthScratch::new(cfg)?,
            scratch: ActScratch::new(cfg),
            params,
            frames_pushed: 0,
            finished: false,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        self.params.config()
    }

    pub fn frames_pushed(&self) -> u64 {
        self.frames_pushed
    }

    /// Return to the zero-history state without reallocating.
    pub fn reset(&mut self) {
        self.amp.reset();
        self.phase.reset();
        self.ola.reset();
        self.frames_pushed = 0;
        self.finished = false;
    }

    /// Total bytes held in state and scratch buffers; constant over the
    /// stream's lifetime.
    pub fn state_size_bytes(&self) -> usize {
        let hist = |h: &ConvHistory| h.buf.capacity() * 4;
        let branch = |b: &BranchState| {
            hist(&b.input_hist)
                + hist(&b.head_hist)
                + b.blocks
                    .iter()
                    .map(|bl| hist(&bl.dw_hist) + bl.grn_sumsq.capacity() * 4)
                    .sum::<usize>()
        };
        let s = &self.scratch;
        let act = [&s.h, &s.next, &s.dw, &s.ln, &s.mid, &s.mid2, &s.g]
            .iter()
            .map(|v| v.capacity() * 4)
            .sum::<usize>();
        let sy = &self.synth;
        let synth = sy.buf.capacity() * 8
            + sy.fft_scratch.capacity() * 8
            + [&sy.window, &sy.wsq, &sy.frame, &sy.log_amp, &sy.re, &sy.im, &sy.phase]
                .iter()
                .map(|v| v.capacity() * 4)
                .sum::<usize>();
        branch(&self.amp)
            + branch(&self.phase)
            + self.ola.acc.capacity() * 4
            + self.ola.env.capacity() * 4
            + act
            + synth
    }

    /// Feed one mel frame; returns the `hop` samples it finalizes.
    pub fn push_frame(&mut self, mel_frame: &[f32]) -> Result<Vec<f32>> {
        self.push_internal(mel_frame, None)
    }

    /// As [`push_frame`](Self::push_frame), also appending this frame's
    /// intermediate features to `trace`.
    pub fn push_frame_traced(
        &mut self,
        mel_frame: &[f32],
        trace: &mut FeatureTrace,
    ) -> Result<Vec<f32>> {
        self.push_internal(mel_frame, Some(trace))
    }

    fn push_internal(
        &mut self,
        mel_frame: &[f32],
        mut trace: Option<&mut FeatureTrace>,
    ) -> Result<Vec<f32>> {
        if self.finished {
            return Err(Error::InvalidState("push_frame after flush".into()));
        }
        let cfg = self.params.config();
        if mel_frame.len() != cfg.n_mels() {
            return Err(invalid(format!(
                "mel frame has {} values, expected {}",
                mel_frame.len(),
                cfg.n_mels()
            )));
        }

        let sy = &mut self.synth;
        run_branch_frame(
            &self.params.amp,
            &mut self.amp,
            &mut self.scratch,
            cfg,
            mel_frame,
            std::slice::from_mut(&mut sy.log_amp),
            trace.as_deref_mut().map(|t| &mut t.amp),
        );
        let mut phase_heads = [std::mem::take(&mut sy.re), std::mem::take(&mut sy.im)];
        run_branch_frame(
            &self.params.phase,
            &mut self.phase,
            &mut self.scratch,
            cfg,
            mel_frame,
            &mut phase_heads,
            trace.as_deref_mut().map(|t| &mut t.phase),
        );
        let [re, im] = phase_heads;
        sy.re = re;
        sy.im = im;

        // log-amplitude -> magnitude, pseudo real/imag -> wrapped phase
        for v in sy.log_amp.iter_mut() {
            *v = v.exp();
        }
        nn::phase_activate_frame(&sy.re, &sy.im, &mut sy.phase);

        synth_frame(&sy.fft, &mut sy.buf, &mut sy.fft_scratch, &sy.log_amp, &sy.phase, &sy.window, &mut sy.frame);
        let mut out = Vec::with_capacity(cfg.spectral.hop);
        self.ola.push(&sy.frame, &sy.wsq, &mut out);
        self.frames_pushed += 1;
        Ok(out)
    }

    /// Emit the remaining overlap-add tail (`frame_len - hop` samples after
    /// at least one push) and retire the state.
    pub fn flush(&mut self) -> Result<Vec<f32>> {
        if self.finished {
            return Err(Error::InvalidState("flush after flush".into()));
        }
        self.finished = true;
        if self.frames_pushed == 0 {
            return Ok(Vec::new());
        }
        Ok(self.ola.tail())
    }
}

/// One frame through `input conv -> blocks -> head(s)`, writing each head's
/// output row into `heads_out`.
fn run_branch_frame(
    params: &BranchParams<'_>,
    state: &mut BranchState,
    scratch: &mut ActScratch,
    cfg: &ModelConfig,
    mel_frame: &[f32],
    heads_out: &mut [Vec<f32>],
    mut trace: Option<&mut BranchTrace>,
) {
    debug_assert_eq!(heads_out.len(), params.heads.len());
    let ActScratch { h, next, dw, ln, mid, mid2, g } = scratch;

    // input conv
    {
        let input = &params.input;
        let taps = gather_taps(&state.input_hist, mel_frame, input.kernel, 1);
        par::for_each_row_block(h, 1, ROW_CHUNK, |row0, chunk| {
            nn::conv_frame(
                input.weight,
                input.bias,
                input.in_ch,
                input.kernel,
                &taps,
                row0..row0 + chunk.len(),
                chunk,
            );
        });
    }
    state.input_hist.push(mel_frame);
    if let Some(t) = trace.as_deref_mut() {
        t.input_conv.push_frame(h);
    }

    // blocks
    for (bi, (block, bs)) in params.blocks.iter().zip(&mut state.blocks).enumerate() {
        {
            let taps = gather_taps(&bs.dw_hist, h, cfg.kernel_dw, cfg.dilation);
            nn::dwconv_frame(block.dw_weight, block.dw_bias, cfg.hidden, cfg.kernel_dw, &taps, dw);
        }
        bs.dw_hist.push(h);

        nn::layer_norm_frame(dw, block.norm.gamma, block.norm.beta, LN_EPS, ln);

        let pw1 = block.pw1;
        par::for_each_row_block(mid, 1, ROW_CHUNK, |row0, chunk| {
            nn::linear_rows(pw1.weight, pw1.bias, pw1.in_ch, ln, row0..row0 + chunk.len(), chunk);
        });
        nn::gelu_frame(mid);

        nn::accumulate_sumsq(mid, &mut bs.grn_sumsq);
        for (gc, s) in g.iter_mut().zip(&bs.grn_sumsq) {
            *gc = s.sqrt();
        }
        nn::grn_apply_frame(mid, g, block.grn.gamma, block.grn.beta, GRN_EPS, mid2);

        let pw2 = block.pw2;
        par::for_each_row_block(next, 1, ROW_CHUNK, |row0, chunk| {
            nn::linear_rows(pw2.weight, pw2.bias, pw2.in_ch, mid2, row0..row0 + chunk.len(), chunk);
        });
        for (y, x) in next.iter_mut().zip(h.iter()) {
            *y += x;
        }
        std::mem::swap(h, next);
        if let Some(t) = trace.as_deref_mut() {
            t.blocks[bi].push_frame(h);
        }
    }

    // heads share the backbone output history
    {
        let taps = gather_taps(&state.head_hist, h, params.heads[0].kernel, 1);
        for (head, out_row) in params.heads.iter().zip(heads_out.iter_mut()) {
            par::for_each_row_block(out_row, 1, ROW_CHUNK, |row0, chunk| {
                nn::conv_frame(
                    head.weight,
                    head.bias,
                    head.in_ch,
                    head.kernel,
                    &taps,
                    row0..row0 + chunk.len(),
                    chunk,
                );
            });
        }
    }
    state.head_hist.push(h);
}

/// Assemble kernel taps for the current frame: history frames at dilated
/// ages, the live frame last.
fn gather_taps<'t>(
    hist: &'t ConvHistory,
    current: &'t [f32],
    kernel: usize,
    dilation: usize,
) -> Vec<&'t [f32]> {
    let mut taps = Vec::with_capacity(kernel);
    for j in 0..kernel - 1 {
        taps.push(hist.tap((kernel - 1 - j) * dilation));
    }
    taps.push(current);
    taps
}
