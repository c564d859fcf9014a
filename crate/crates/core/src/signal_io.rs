//! Audio containers, WAV input/output and the synthetic convolutive mixer.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Multichannel real-valued audio with a common sample rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    channels: Vec<Vec<f64>>,
    sample_rate: u32,
}

impl TimeSeries {
    /// Builds a series, checking that there is at least one channel, that all
    /// channels have the same length and that the sample rate is positive.
    pub fn new(channels: Vec<Vec<f64>>, sample_rate: u32) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::InvalidInput("time series needs at least one channel".into()));
        }
        if sample_rate == 0 {
            return Err(Error::InvalidInput("sample rate must be positive".into()));
        }
        let len = channels[0].len();
        if let Some((i, c)) = channels.iter().enumerate().find(|(_, c)| c.len() != len) {
            return Err(Error::DimensionMismatch(format!(
                "channel {i} has {} samples, channel 0 has {len}",
                c.len()
            )));
        }
        Ok(Self {
            channels,
            sample_rate,
        })
    }

    pub fn zeros(num_channels: usize, len: usize, sample_rate: u32) -> Result<Self> {
        Self::new(vec![vec![0.0; len]; num_channels], sample_rate)
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.channels
    }

    pub fn channel(&self, i: usize) -> &[f64] {
        &self.channels[i]
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    /// Samples per channel.
    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn into_channels(self) -> Vec<Vec<f64>> {
        self.channels
    }

    /// Copy of samples `[start, end)` of every channel.
    pub fn slice(&self, start: usize, end: usize) -> TimeSeries {
        TimeSeries {
            channels: self.channels.iter().map(|c| c[start..end].to_vec()).collect(),
            sample_rate: self.sample_rate,
        }
    }

    pub fn truncate(&mut self, len: usize) {
        for c in &mut self.channels {
            c.truncate(len);
        }
    }

    /// Appends per-channel blocks, which must all have the same length.
    pub fn append(&mut self, blocks: &[Vec<f64>]) -> Result<()> {
        if blocks.len() != self.channels.len() {
            return Err(Error::DimensionMismatch(format!(
                "appending {} channels to a {}-channel series",
                blocks.len(),
                self.channels.len()
            )));
        }
        let len = blocks[0].len();
        if blocks.iter().any(|b| b.len() != len) {
            return Err(Error::DimensionMismatch("appended blocks differ in length".into()));
        }
        for (c, b) in self.channels.iter_mut().zip(blocks) {
            c.extend_from_slice(b);
        }
        Ok(())
    }

    pub fn scaled(&self, factor: f64) -> TimeSeries {
        TimeSeries {
            channels: self
                .channels
                .iter()
                .map(|c| c.iter().map(|v| v * factor).collect())
                .collect(),
            sample_rate: self.sample_rate,
        }
    }

    pub fn check_finite(&self) -> Result<()> {
        for (ch, c) in self.channels.iter().enumerate() {
            if let Some(index) = c.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite { channel: ch, index });
            }
        }
        Ok(())
    }
}

/// Reads a PCM WAV file (16-bit integer or 32-bit float) into samples in
/// `[-1, 1]`. Integer samples are scaled by `1/32768`.
pub fn read_wav(path: impl AsRef<Path>) -> Result<TimeSeries> {
    let path = path.as_ref();
    let wav_err = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        hound::Error::Unsupported => {
            Error::UnsupportedEncoding(format!("{}: unsupported wav layout", path.display()))
        }
        other => Error::Wav {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    };
    let mut reader = hound::WavReader::open(path).map_err(wav_err)?;
    let spec = reader.spec();
    let n = spec.channels as usize;
    if n == 0 {
        return Err(Error::UnsupportedEncoding("wav file declares zero channels".into()));
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| f64::from(v) / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(wav_err)?,
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(wav_err)?,
        (fmt, bits) => {
            return Err(Error::UnsupportedEncoding(format!(
                "{}: {bits}-bit {fmt:?} samples (need 16-bit int or 32-bit float)",
                path.display()
            )))
        }
    };
    let frames = interleaved.len() / n;
    let mut channels = vec![Vec::with_capacity(frames); n];
    for frame in interleaved.chunks_exact(n) {
        for (c, v) in channels.iter_mut().zip(frame) {
            c.push(*v);
        }
    }
    TimeSeries::new(channels, spec.sample_rate)
}

/// Sample format of written WAV files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WavEncoding {
    /// 16-bit PCM, clipped to `[-1, 1]`.
    #[default]
    Pcm16,
    /// 32-bit IEEE float, written without clipping.
    Float32,
}

/// Writes 16-bit PCM. Samples outside `[-1, 1]` are clipped with a warning;
/// non-finite samples are rejected before anything is written.
///
/// The file is first written next to `path` with a `.partial` suffix and
/// renamed once complete.
pub fn write_wav(path: impl AsRef<Path>, series: &TimeSeries) -> Result<()> {
    write_wav_as(path, series, WavEncoding::Pcm16)
}

/// [`write_wav`] with an explicit sample format.
pub fn write_wav_as(path: impl AsRef<Path>, series: &TimeSeries, encoding: WavEncoding) -> Result<()> {
    let path = path.as_ref();
    if series.is_empty() {
        return Err(Error::InvalidInput("refusing to write an empty time series".into()));
    }
    if series.num_channels() > usize::from(u16::MAX) {
        return Err(Error::InvalidInput("too many channels for wav".into()));
    }
    series.check_finite()?;

    let clipped = series
        .channels()
        .iter()
        .flatten()
        .filter(|v| v.abs() > 1.0)
        .count();
    if clipped > 0 && encoding == WavEncoding::Pcm16 {
        log::warn!(
            "{}: clipping {clipped} samples to [-1, 1]",
            path.display()
        );
    }

    let (bits_per_sample, sample_format) = match encoding {
        WavEncoding::Pcm16 => (16, hound::SampleFormat::Int),
        WavEncoding::Float32 => (32, hound::SampleFormat::Float),
    };
    let spec = hound::WavSpec {
        channels: series.num_channels() as u16,
        sample_rate: series.sample_rate(),
        bits_per_sample,
        sample_format,
    };
    let partial = partial_path(path);
    let wav_err = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::io(&partial, io),
        other => Error::Wav {
            path: partial.clone(),
            message: other.to_string(),
        },
    };
    let mut writer = hound::WavWriter::create(&partial, spec).map_err(wav_err)?;
    for k in 0..series.len() {
        for c in series.channels() {
            match encoding {
                WavEncoding::Pcm16 => writer.write_sample(quantize(c[k])),
                WavEncoding::Float32 => writer.write_sample(c[k] as f32),
            }
            .map_err(wav_err)?;
        }
    }
    writer.finalize().map_err(wav_err)?;
    fs::rename(&partial, path).map_err(|e| Error::io(path, e))
}

fn quantize(v: f64) -> i16 {
    (v.clamp(-1.0, 1.0) * 32768.0)
        .round()
        .clamp(f64::from(i16::MIN), f64::from(i16::MAX)) as i16
}

pub(crate) fn partial_path(path: &Path) -> std::path::PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".partial");
    name.into()
}

/// An `n x n` matrix of FIR filters `a_ij(p)`, `p in [0, P)`, mapping source
/// `j` to receiver `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingFilters {
    taps: Vec<Vec<Vec<f64>>>,
}

impl MixingFilters {
    /// `taps[i][j]` is the filter from source `j` to receiver `i`.
    pub fn new(taps: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let n = taps.len();
        if n == 0 {
            return Err(Error::InvalidInput("mixing filters need n >= 1".into()));
        }
        let p = taps[0].first().map_or(0, Vec::len);
        if p == 0 {
            return Err(Error::InvalidInput("mixing filters need P >= 1".into()));
        }
        for (i, row) in taps.iter().enumerate() {
            if row.len() != n {
                return Err(Error::DimensionMismatch(format!(
                    "row {i} has {} filters, expected {n}",
                    row.len()
                )));
            }
            if let Some(j) = row.iter().position(|f| f.len() != p) {
                return Err(Error::DimensionMismatch(format!(
                    "filter ({i},{j}) has {} taps, expected {p}",
                    row[j].len()
                )));
            }
            if row.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!("row {i} has non-finite taps")));
            }
        }
        Ok(Self { taps })
    }

    pub fn identity(n: usize) -> Self {
        let taps = (0..n)
            .map(|i| (0..n).map(|j| vec![if i == j { 1.0 } else { 0.0 }]).collect())
            .collect();
        Self { taps }
    }

    /// Demo room: `n = 2`, `P = 48`. Direct paths are a unit impulse followed
    /// by three decaying echoes; cross paths are a delayed echo train starting
    /// at -6 dB. These are illustrative filters, not measured responses.
    pub fn default_demo() -> Self {
        const P: usize = 48;
        let train = |taps: &[(usize, f64)]| {
            let mut f = vec![0.0; P];
            for &(p, g) in taps {
                f[p] = g;
            }
            f
        };
        let a11 = train(&[(0, 1.0), (9, 0.35), (21, -0.2), (38, 0.1)]);
        let a22 = train(&[(0, 1.0), (13, -0.3), (27, 0.18), (43, -0.08)]);
        let a12 = train(&[(3, 0.5), (11, 0.3), (24, -0.16), (40, 0.08)]);
        let a21 = train(&[(5, 0.5), (16, -0.28), (30, 0.14), (45, 0.07)]);
        Self {
            taps: vec![vec![a11, a12], vec![a21, a22]],
        }
    }

    pub fn n(&self) -> usize {
        self.taps.len()
    }

    /// Filter length `P`.
    pub fn len(&self) -> usize {
        self.taps[0][0].len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn tap(&self, i: usize, j: usize) -> &[f64] {
        &self.taps[i][j]
    }
}

/// JSON document describing a mixing run:
/// `{"n":2,"P":48,"taps":[[..],[..],[..],[..]],"noise_snr_db":null,"seed":1234}`
/// with `taps` listing the `n^2` filters row-major (`a_11, a_12, a_21, a_22`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixConfig {
    pub n: usize,
    #[serde(rename = "P")]
    pub p: usize,
    pub taps: Vec<Vec<f64>>,
    #[serde(default)]
    pub noise_snr_db: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

impl MixConfig {
    pub fn from_filters(filters: &MixingFilters, noise_snr_db: Option<f64>, seed: u64) -> Self {
        let n = filters.n();
        Self {
            n,
            p: filters.len(),
            taps: (0..n)
                .flat_map(|i| (0..n).map(move |j| (i, j)))
                .map(|(i, j)| filters.tap(i, j).to_vec())
                .collect(),
            noise_snr_db,
            seed,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn filters(&self) -> Result<MixingFilters> {
        if self.taps.len() != self.n * self.n {
            return Err(Error::DimensionMismatch(format!(
                "n = {} needs {} tap sequences, got {}",
                self.n,
                self.n * self.n,
                self.taps.len()
            )));
        }
        if let Some(k) = self.taps.iter().position(|t| t.len() != self.p) {
            return Err(Error::DimensionMismatch(format!(
                "tap sequence {k} has {} coefficients, P = {}",
                self.taps[k].len(),
                self.p
            )));
        }
        let rows = self
            .taps
            .chunks(self.n)
            .map(|row| row.to_vec())
            .collect();
        MixingFilters::new(rows)
    }

    pub fn noise(&self) -> Option<AdditiveNoise> {
        self.noise_snr_db.map(|snr_db| AdditiveNoise {
            snr_db,
            seed: self.seed,
        })
    }
}

/// White Gaussian noise added to each mixture channel at a given SNR
/// relative to that channel's clean power.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdditiveNoise {
    pub snr_db: f64,
    pub seed: u64,
}

/// Causal convolutive mixing `x_i(k) = sum_j sum_p a_ij(p) s_j(k - p)` with
/// sources taken as zero before `k = 0`. Output length equals input length.
pub fn convolve_mix(
    sources: &TimeSeries,
    filters: &MixingFilters,
    noise: Option<AdditiveNoise>,
) -> Result<TimeSeries> {
    let n = filters.n();
    if sources.num_channels() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} source channels for {n}x{n} mixing filters",
            sources.num_channels()
        )));
    }
    let len = sources.len();
    let p_len = filters.len();
    if p_len > len {
        return Err(Error::TooShort {
            needed: p_len,
            got: len,
        });
    }

    let mut out = vec![vec![0.0; len]; n];
    for (i, x) in out.iter_mut().enumerate() {
        for j in 0..n {
            let a = filters.tap(i, j);
            let s = sources.channel(j);
            for (p, &coef) in a.iter().enumerate() {
                if coef == 0.0 {
                    continue;
                }
                for (xk, sk) in x[p..].iter_mut().zip(s) {
                    *xk += coef * sk;
                }
            }
        }
    }

    if let Some(noise) = noise {
        if !noise.snr_db.is_finite() {
            return Err(Error::InvalidInput("noise SNR must be finite".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
        for x in &mut out {
            let power = x.iter().map(|v| v * v).sum::<f64>() / len as f64;
            let sigma = (power / 10f64.powf(noise.snr_db / 10.0)).sqrt();
            if sigma > 0.0 {
                let normal = Normal::new(0.0, sigma)
                    .map_err(|e| Error::InvalidInput(format!("noise level: {e}")))?;
                for v in x.iter_mut() {
                    *v += normal.sample(&mut rng);
                }
            }
        }
    }

    TimeSeries::new(out, sources.sample_rate())
}
