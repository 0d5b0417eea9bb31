//! Bit-exact persistence: `DLAP` named-tensor archives, 16 kHz mono PCM WAV,
//! mel tensor files, `key: value` config files, and deterministic random
//! weight initialization.
//!
//! Archive layout (all integers and floats little-endian):
//!
//! ```text
//! "DLAP"  magic, 4 bytes
//! u32     format version (currently 1)
//! u32     record count
//! per record:
//!   u16       name length, then that many UTF-8 bytes
//!   u8        rank, then rank x u32 dimensions
//!   f32 x n   row-major data, n = product of dimensions
//! ```

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{format_err, invalid, Error, Result};
use crate::model::{tensor_specs, ModelConfig};
use crate::nn::{FrameTensor, GrnMode};
use crate::spectral::MelSpectrogram;

const MAGIC: &[u8; 4] = b"DLAP";
const VERSION: u32 = 1;

/// One named tensor: shape plus row-major `f32` data.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

/// Ordered collection of uniquely named tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightArchive {
    records: Vec<TensorRecord>,
    index: HashMap<String, usize>,
}

impl WeightArchive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, shape: Vec<usize>, data: Vec<f32>) -> Result<()> {
        if self.index.contains_key(name) {
            return Err(invalid(format!("duplicate tensor name '{name}'")));
        }
        if name.len() > u16::MAX as usize {
            return Err(invalid(format!("tensor name '{name}' exceeds 65535 bytes")));
        }
        if shape.len() > u8::MAX as usize {
            return Err(invalid(format!("tensor '{name}' rank {} exceeds 255", shape.len())));
        }
        let expect: usize = shape.iter().product();
        if data.len() != expect {
            return Err(invalid(format!(
                "tensor '{name}' has {} values but shape {:?} implies {}",
                data.len(),
                shape,
                expect
            )));
        }
        self.index.insert(name.to_string(), self.records.len());
        self.records.push(TensorRecord { name: name.to_string(), shape, data });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&TensorRecord> {
        self.index.get(name).map(|&i| &self.records[i])
    }

    pub fn require(&self, name: &str) -> Result<&TensorRecord> {
        self.get(name).ok_or_else(|| Error::TensorNotFound(name.to_string()))
    }

    pub fn records(&self) -> &[TensorRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.records.len() as u32).to_le_bytes());
        for rec in &self.records {
            out.extend_from_slice(&(rec.name.len() as u16).to_le_bytes());
            out.extend_from_slice(rec.name.as_bytes());
            out.push(rec.shape.len() as u8);
            for &d in &rec.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in &rec.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor { bytes, pos: 0 };
        let magic = r.take(4)?;
        if magic != MAGIC {
            return Err(format_err(format!(
                "bad magic {:?}, expected \"DLAP\"",
                String::from_utf8_lossy(magic)
            )));
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
        if version != VERSION {
            return Err(format_err(format!("unsupported DLAP version {version}, expected {VERSION}")));
        }
        let count = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
        let mut archive = WeightArchive::new();
        for i in 0..count {
            let name_len = u16::from_le_bytes(r.take(2)?.try_into().unwrap()) as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| format_err(format!("record {i} name is not valid UTF-8")))?
                .to_string();
            let rank = r.take(1)?[0] as usize;
            let mut shape = Vec::with_capacity(rank);
            let mut product: u64 = 1;
            for _ in 0..rank {
                let d = u32::from_le_bytes(r.take(4)?.try_into().unwrap()) as usize;
                product = product.saturating_mul(d as u64);
                shape.push(d);
            }
            // declared length must fit in the remaining bytes before we read
            let need = product
                .checked_mul(4)
                .filter(|&n| n <= r.remaining() as u64)
                .ok_or_else(|| {
                    format_err(format!(
                        "tensor '{name}' declares {product} values but only {} bytes remain",
                        r.remaining()
                    ))
                })?;
            let raw = r.take(need as usize)?;
            let data: Vec<f32> =
                raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            archive.insert(&name, shape, data)?;
        }
        if r.remaining() != 0 {
            return Err(format_err(format!("{} trailing bytes after last record", r.remaining())));
        }
        Ok(archive)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = fs::read(path)?;
        Self::from_bytes(&bytes)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(format_err(format!(
                "truncated archive: wanted {n} bytes at offset {}, file has {}",
                self.pos,
                self.bytes.len()
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

// --- WAV ---

const WAV_RATE: u32 = 16_000;

/// Read a mono 16-bit PCM WAV at 16 kHz into `[-1, 1)` floats.
pub fn load_wav(path: impl AsRef<Path>) -> Result<Vec<f32>> {
    let reader = hound::WavReader::open(path.as_ref())
        .map_err(|e| format_err(format!("{}: {e}", path.as_ref().display())))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::UnsupportedFormat(format!(
            "{} channels (expected mono)",
            spec.channels
        )));
    }
    if spec.sample_rate != WAV_RATE {
        return Err(Error::UnsupportedFormat(format!(
            "sample rate {} Hz (expected {WAV_RATE} Hz)",
            spec.sample_rate
        )));
    }
    if spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
        return Err(Error::UnsupportedFormat(format!(
            "{}-bit {} samples (expected 16-bit PCM)",
            spec.bits_per_sample,
            match spec.sample_format {
                hound::SampleFormat::Int => "integer",
                hound::SampleFormat::Float => "float",
            }
        )));
    }
    let mut out = Vec::with_capacity(reader.len() as usize);
    for s in reader.into_samples::<i16>() {
        let s = s.map_err(|e| format_err(e.to_string()))?;
        out.push(s as f32 / 32_768.0);
    }
    Ok(out)
}

/// Write samples as mono 16-bit PCM at 16 kHz, rounding to nearest with
/// clipping.
pub fn save_wav(samples: &[f32], path: impl AsRef<Path>) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: WAV_RATE,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path.as_ref(), spec)
        .map_err(|e| format_err(format!("{}: {e}", path.as_ref().display())))?;
    for &s in samples {
        let q = (s * 32_768.0).round().clamp(-32_768.0, 32_767.0) as i16;
        writer.write_sample(q).map_err(|e| format_err(e.to_string()))?;
    }
    writer.finalize().map_err(|e| format_err(e.to_string()))?;
    Ok(())
}

// --- mel tensor files ---

/// Store a mel spectrogram as a one-record archive named `mel`, shape `[T, n_mels]`.
pub fn save_mel(mel: &MelSpectrogram, path: impl AsRef<Path>) -> Result<()> {
    let mut archive = WeightArchive::new();
    archive.insert(
        "mel",
        vec![mel.frames(), mel.n_mels()],
        mel.values.data().to_vec(),
    )?;
    archive.save(path)
}

pub fn load_mel(path: impl AsRef<Path>, expected_mels: usize) -> Result<MelSpectrogram> {
    let archive = WeightArchive::load(path)?;
    let rec = archive
        .records()
        .first()
        .filter(|r| r.name == "mel" && archive.len() == 1)
        .ok_or_else(|| format_err("mel file must contain exactly one record named 'mel'"))?;
    if rec.shape.len() != 2 {
        return Err(format_err(format!("mel record has rank {}, expected 2", rec.shape.len())));
    }
    if rec.shape[1] != expected_mels {
        return Err(invalid(format!(
            "mel record has {} bands, expected {expected_mels}",
            rec.shape[1]
        )));
    }
    Ok(MelSpectrogram { values: FrameTensor::from_vec(expected_mels, rec.data.clone())? })
}

// --- config files ---

/// Parse a `key: value` model config. Absent keys take the defaults,
/// unknown keys are rejected; `#` starts a comment.
pub fn parse_config(text: &str) -> Result<ModelConfig> {
    let mut cfg = ModelConfig::default();
    let mut intermediate: Option<usize> = None;
    let mut seen = std::collections::HashSet::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once(':')
            .ok_or_else(|| format_err(format!("line {}: expected 'key: value'", lineno + 1)))?;
        let key = key.trim();
        let value = value.trim();
        if !seen.insert(key.to_string()) {
            return Err(format_err(format!("line {}: duplicate key '{key}'", lineno + 1)));
        }
        let bad = |what: &str| format_err(format!("line {}: bad {what} value '{value}'", lineno + 1));
        match key {
            "sample_rate" => cfg.spectral.sample_rate = value.parse().map_err(|_| bad("integer"))?,
            "n_fft" => cfg.spectral.n_fft = value.parse().map_err(|_| bad("integer"))?,
            "frame_len" => cfg.spectral.frame_len = value.parse().map_err(|_| bad("integer"))?,
            "hop" => cfg.spectral.hop = value.parse().map_err(|_| bad("integer"))?,
            "n_mels" => cfg.spectral.n_mels = value.parse().map_err(|_| bad("integer"))?,
            "fmin" => cfg.spectral.fmin = value.parse().map_err(|_| bad("number"))?,
            "fmax" => cfg.spectral.fmax = value.parse().map_err(|_| bad("number"))?,
            "log_floor" => cfg.spectral.log_floor = value.parse().map_err(|_| bad("number"))?,
            "hidden" => cfg.hidden = value.parse().map_err(|_| bad("integer"))?,
            "intermediate" => intermediate = Some(value.parse().map_err(|_| bad("integer"))?),
            "num_blocks" => cfg.num_blocks = value.parse().map_err(|_| bad("integer"))?,
            "kernel_io" => cfg.kernel_io = value.parse().map_err(|_| bad("integer"))?,
            "kernel_dw" => cfg.kernel_dw = value.parse().map_err(|_| bad("integer"))?,
            "dilation" => cfg.dilation = value.parse().map_err(|_| bad("integer"))?,
            "causal" => cfg.causal = value.parse().map_err(|_| bad("boolean"))?,
            "grn_mode" => {
                cfg.grn_mode = match value {
                    "global" => GrnMode::Global,
                    "causal_cumulative" => GrnMode::CausalCumulative,
                    _ => return Err(bad("grn_mode (global|causal_cumulative)")),
                }
            }
            _ => return Err(format_err(format!("line {}: unknown config key '{key}'", lineno + 1))),
        }
    }
    // absent intermediate follows the 3x expansion of the hidden width
    cfg.intermediate = intermediate.unwrap_or(3 * cfg.hidden);
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: impl AsRef<Path>) -> Result<ModelConfig> {
    let text = fs::read_to_string(path.as_ref())
        .map_err(|e| format_err(format!("{}: {e}", path.as_ref().display())))?;
    parse_config(&text)
}

// --- deterministic initialization ---

/// SplitMix64: the counter-based generator used for weight initialization.
/// Integer-only state transitions keep archives bit-identical across
/// platforms for the same `(config, seed)`.
pub(crate) struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub(crate) fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub(crate) fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)` from the top 24 bits; exact in `f32`.
    pub(crate) fn next_unit_f32(&mut self) -> f32 {
        (self.next_u64() >> 40) as f32 / 16_777_216.0
    }

    /// Uniform in `[-bound, bound)`.
    pub(crate) fn next_symmetric_f32(&mut self, bound: f32) -> f32 {
        (2.0 * self.next_unit_f32() - 1.0) * bound
    }
}

/// Fill a complete weight archive for `cfg` with values uniform in
/// `[-1/sqrt(fan_in), 1/sqrt(fan_in))`. One SplitMix64 stream seeded with
/// `seed` fills the tensors in their canonical order, so the same
/// `(cfg, seed)` always produces a bit-identical archive.
pub fn random_init(cfg: &ModelConfig, seed: u64) -> Result<WeightArchive> {
    cfg.validate()?;
    let mut rng = SplitMix64::new(seed);
    let mut archive = WeightArchive::new();
    for spec in tensor_specs(cfg) {
        let bound = 1.0 / (spec.fan_in as f32).sqrt();
        let n: usize = spec.shape.iter().product();
        let data: Vec<f32> = (0..n).map(|_| rng.next_symmetric_f32(bound)).collect();
        archive.insert(&spec.name, spec.shape, data)?;
    }
    Ok(archive)
}
