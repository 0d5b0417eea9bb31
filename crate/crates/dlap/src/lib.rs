//! Low-latency streaming vocoder engine.
//!
//! Predicts log-amplitude and wrapped-phase spectra from an 80-band mel
//! spectrogram through two parallel causal convolutional branches, then
//! reconstructs the waveform with an inverse STFT. Because every layer is
//! causal, synthesis can run frame by frame with a fixed algorithmic delay
//! (15 ms at the default 16 kHz / 80-sample-hop configuration).
//!
//! The crate is organized around the inference path:
//!
//! - [`spectral`] — windowing, STFT/iSTFT, mel filterbank, mel extraction
//! - [`nn`] — causal/non-causal conv1d, layer norm, GELU, GRN, atan2 phase
//!   activation
//! - [`model`] — the two-branch layer graph, feature tracing, FLOPs counter
//! - [`stream`] — frame-by-frame engine with ring-buffer layer state and a
//!   streaming overlap-add emitter, plus the lookahead/latency analyzer
//! - [`loss`] — forward-only evaluation of the training criteria, including
//!   the teacher/student feature-distillation loss
//! - [`metrics`] — SNR, LAS-RMSE, MCD, F0-RMSE, V/UV error
//! - [`io`] — `DLAP` weight archives, 16 kHz PCM WAV, mel tensors, config
//!   files, deterministic random initialization
//! - [`verify`] — self-check properties exposed through the CLI
//!
//! With the default `parallel` feature the batch operations fan out over
//! rayon; disabling it yields a dependency-free sequential build that
//! produces bit-identical results.

pub mod error;
pub mod io;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod nn;
mod par;
pub mod spectral;
pub mod stream;
pub mod verify;

pub use error::{Error, Result};
