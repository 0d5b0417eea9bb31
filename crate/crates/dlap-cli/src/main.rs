//! File-in/file-out driver for the vocoder engine.
//!
//! Exit codes: 0 on success, 1 when `verify` finds a failing property,
//! 2 on usage, file, or format errors. All subcommands print
//! machine-parseable `key=value` lines unless `--pretty` is given.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use dlap::io;
use dlap::loss::{self, LossTerms, LossWeights};
use dlap::metrics;
use dlap::model::{self, ModelConfig, ModelParams};
use dlap::stream::{self, StreamState};
use dlap::verify;

#[derive(Parser)]
#[command(name = "dlap", version, about = "Low-latency streaming vocoder engine")]
struct Cli {
    /// Human-readable tables instead of key=value lines
    #[arg(long, global = true)]
    pretty: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SynthMode {
    Batch,
    Streaming,
}

#[derive(Subcommand)]
enum Command {
    /// Extract a log-mel spectrogram from a 16 kHz mono WAV
    Mel {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long = "out")]
        output: PathBuf,
        /// Config path, or "default" for the built-in configuration
        #[arg(long, default_value = "default")]
        config: String,
    },
    /// Synthesize a waveform from a mel file with a weight archive
    Synth {
        #[arg(long, default_value = "default")]
        config: String,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long = "out")]
        output: PathBuf,
        #[arg(long, value_enum, default_value = "batch")]
        mode: SynthMode,
    },
    /// Analysis amplitude/phase straight back through the inverse STFT
    CopySynth {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long = "out")]
        output: PathBuf,
        #[arg(long, default_value = "default")]
        config: String,
    },
    /// Print the algorithmic latency report
    Latency {
        #[arg(long, default_value = "default")]
        config: String,
    },
    /// Print total and per-layer multiply-accumulate counts
    Flops {
        #[arg(long, default_value = "default")]
        config: String,
    },
    /// Run the self-check property suite on random weights
    Verify {
        #[arg(long, default_value = "default")]
        config: String,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 50)]
        frames: usize,
    },
    /// Evaluate the loss breakdown of a student against a teacher on a WAV
    Loss {
        #[arg(long, default_value = "default")]
        config: String,
        #[arg(long)]
        teacher: PathBuf,
        #[arg(long)]
        student: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        /// Number of leading blocks included in the distillation loss
        #[arg(long)]
        blocks: Option<usize>,
        /// Override the distillation weight
        #[arg(long)]
        lkd: Option<f64>,
    },
    /// Objective metrics for a reference/degraded WAV pair
    Metrics {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long = "deg")]
        degraded: PathBuf,
        #[arg(long, default_value = "default")]
        config: String,
    },
    /// Write a deterministic randomly initialized weight archive
    InitWeights {
        #[arg(long, default_value = "default")]
        config: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long = "out")]
        output: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn load_config(spec: &str) -> dlap::Result<ModelConfig> {
    if spec == "default" {
        Ok(ModelConfig::default())
    } else {
        io::load_config(Path::new(spec))
    }
}

fn run(cli: Cli) -> dlap::Result<ExitCode> {
    let pretty = cli.pretty;
    match cli.command {
        Command::Mel { input, output, config } => {
            let cfg = load_config(&config)?;
            let wave = io::load_wav(&input)?;
            let mel = dlap::spectral::extract_mel(&wave, &cfg.spectral)?;
            io::save_mel(&mel, &output)?;
            println!("frames={}", mel.frames());
        }
        Command::Synth { config, weights, input, output, mode } => {
            let cfg = load_config(&config)?;
            let archive = io::WeightArchive::load(&weights)?;
            let mel = io::load_mel(&input, cfg.n_mels())?;
            let wave = match mode {
                SynthMode::Batch => model::synthesize_batch(&mel, &archive, &cfg)?,
                SynthMode::Streaming => {
                    let params = ModelParams::new(&archive, &cfg)?;
                    let mut state = StreamState::new(&params)?;
                    let mut wave = Vec::new();
                    for t in 0..mel.frames() {
                        wave.extend(state.push_frame(mel.values.frame(t))?);
                    }
                    wave.extend(state.flush()?);
                    wave
                }
            };
            io::save_wav(&wave, &output)?;
            println!("samples={}", wave.len());
        }
        Command::CopySynth { input, output, config } => {
            let cfg = load_config(&config)?;
            let wave = io::load_wav(&input)?;
            let spec = dlap::spectral::stft(&wave, &cfg.spectral)?;
            let back = dlap::spectral::istft_batch(&spec, &cfg.spectral, wave.len())?;
            io::save_wav(&back, &output)?;
            println!("samples={}", back.len());
        }
        Command::Latency { config } => {
            let cfg = load_config(&config)?;
            let report = stream::total_latency(&cfg);
            if pretty {
                println!("lookahead        : {} frames", report.lookahead_frames);
                println!("model latency    : {}", fmt_opt_ms(report.model_latency_ms));
                println!("overlap-add hold : {:.3} ms", report.ola_latency_ms);
                println!("total            : {}", fmt_opt_ms(report.total_ms));
            } else {
                println!("lookahead_frames={}", report.lookahead_frames);
                println!("model_latency_ms={}", fmt_opt_val(report.model_latency_ms));
                println!("ola_latency_ms={:.3}", report.ola_latency_ms);
                println!("total_ms={}", fmt_opt_val(report.total_ms));
            }
        }
        Command::Flops { config } => {
            let cfg = load_config(&config)?;
            let report = model::count_flops(&cfg)?;
            if pretty {
                println!("{:<22} {:>14}", "layer", "MACs/frame");
                for (name, macs) in &report.per_layer {
                    println!("{name:<22} {macs:>14}");
                }
                println!("{:<22} {:>14}", "total/frame", report.macs_per_frame);
                println!("frames/second: {}", report.frames_per_second);
                println!("FLOPs for 1 s of audio: {:.3e}", report.flops_per_second);
            } else {
                println!("macs_per_frame={}", report.macs_per_frame);
                println!("frames_per_second={}", report.frames_per_second);
                println!("flops_per_second={}", report.flops_per_second);
                for (name, macs) in &report.per_layer {
                    println!("layer.{name}={macs}");
                }
            }
        }
        Command::Verify { config, seed, frames } => {
            let cfg = load_config(&config)?;
            let results = verify::run_all(&cfg, seed, frames)?;
            let mut all_passed = true;
            for r in &results {
                all_passed &= r.passed;
                println!("{}={}", r.name, if r.passed { "pass" } else { "fail" });
                println!("{}.detail={}", r.name, r.detail);
            }
            println!("result={}", if all_passed { "pass" } else { "fail" });
            if !all_passed {
                return Ok(ExitCode::from(1));
            }
        }
        Command::Loss { config, teacher, student, input, blocks, lkd } => {
            let cfg = load_config(&config)?;
            let teacher_archive = io::WeightArchive::load(&teacher)?;
            let student_archive = io::WeightArchive::load(&student)?;
            let wave = io::load_wav(&input)?;
            let breakdown =
                evaluate_losses(&cfg, &teacher_archive, &student_archive, &wave, blocks, lkd)?;
            println!("l_a={:.6}", breakdown.l_a);
            println!("l_p={:.6}", breakdown.l_p);
            println!("l_s={:.6}", breakdown.l_s);
            println!("l_w={:.6}", breakdown.l_w);
            println!("l_kd={:.6}", breakdown.l_kd);
            println!("total={:.6}", breakdown.total);
        }
        Command::Metrics { reference, degraded, config } => {
            let cfg = load_config(&config)?;
            let mut a = io::load_wav(&reference)?;
            let mut b = io::load_wav(&degraded)?;
            let n = a.len().min(b.len());
            a.truncate(n);
            b.truncate(n);
            let report = metrics::compute_all(&a, &b, &cfg.spectral)?;
            println!("snr_db={:.6}", report.snr_db);
            println!("las_rmse_db={:.6}", report.las_rmse_db);
            println!("mcd_db={:.6}", report.mcd_db);
            println!("f0_rmse_cents={:.6}", report.f0_rmse_cents);
            println!("vuv_error_pct={:.6}", report.vuv_error_pct);
        }
        Command::InitWeights { config, seed, output } => {
            let cfg = load_config(&config)?;
            let archive = io::random_init(&cfg, seed)?;
            archive.save(&output)?;
            println!("tensors={}", archive.len());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn fmt_opt_val(v: Option<f64>) -> String {
    match v {
        Some(ms) => format!("{ms:.3}"),
        None => "unbounded".into(),
    }
}

fn fmt_opt_ms(v: Option<f64>) -> String {
    match v {
        Some(ms) => format!("{ms:.3} ms"),
        None => "unbounded".into(),
    }
}

/// Forward both archives over the mel of `wave`, then evaluate every loss
/// term with `wave` as the natural-speech target.
fn evaluate_losses(
    cfg: &ModelConfig,
    teacher: &io::WeightArchive,
    student: &io::WeightArchive,
    wave: &[f32],
    blocks: Option<usize>,
    lkd: Option<f64>,
) -> dlap::Result<loss::LossBreakdown> {
    let sc = &cfg.spectral;
    let mel = dlap::spectral::extract_mel(wave, sc)?;
    let (student_pair, student_trace) = model::forward_batch(&mel, student, cfg)?;
    let (_, teacher_trace) = model::forward_batch(&mel, teacher, cfg)?;

    // analysis targets from the input waveform
    let target = dlap::spectral::stft(wave, sc)?;
    let mut target_log_amp = target.amplitude.clone();
    for v in target_log_amp.data_mut() {
        *v = v.max(sc.log_floor).ln();
    }

    let n_blocks = blocks.unwrap_or(cfg.num_blocks);
    if n_blocks > cfg.num_blocks {
        return Err(dlap::Error::InvalidArgument(format!(
            "--blocks {n_blocks} exceeds the model's {} blocks",
            cfg.num_blocks
        )));
    }
    let active: Vec<usize> = (1..=n_blocks).collect();

    let pred_wave = model::synthesize_from_pair(&student_pair, sc)?;
    let terms = LossTerms {
        l_a: loss::amplitude_loss(&student_pair.log_amplitude, &target_log_amp)?,
        l_p: loss::phase_loss(&student_pair.phase, &target.phase)?,
        l_s: loss::stft_loss(&student_pair, wave, sc)?,
        l_w: loss::waveform_loss(&pred_wave, wave, sc)?,
        l_kd: loss::kd_loss(&teacher_trace, &student_trace, &active)?,
    };
    let weights = LossWeights { lambda_kd: lkd.unwrap_or(5.0), ..Default::default() };
    loss::total_loss(&terms, &weights)
}
