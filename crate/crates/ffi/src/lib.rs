//! C interface to the `unmix` separator.
//!
//! Signals and streaming separators are opaque handles owned by the caller
//! and released with the matching `*_free` function. Every fallible call
//! returns an [`UnmixStatus`]; on failure the message is available through
//! [`unmix_last_error`] on the same thread. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use unmix::align::ReferenceMode;
use unmix::pipeline::{separate_batch, separate_dynamic, Preset, SeparationConfig, StreamingSeparator};
use unmix::signal_io::{read_wav, write_wav_as, WavEncoding};
use unmix::stats::LagAggregation;
use unmix::{Error, TimeSeries};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnmixStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// Arguments or configuration rejected.
    InvalidArgument = 2,
    /// File could not be read or written, or has an unsupported layout.
    Io = 3,
    /// Not enough samples or frames for the requested operation.
    InsufficientData = 4,
    /// Statistics were degenerate or the data were not finite.
    Numerical = 5,
    /// The caller's buffer is too small; the required size was reported.
    BufferTooSmall = 6,
    /// Internal failure (a caught panic).
    Internal = 7,
}

/// Separation parameters. Obtain defaults from [`unmix_config_preset`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnmixConfig {
    /// Frame length `T`.
    pub frame_len: u32,
    /// Fraction of a frame shared by consecutive frames, in `[0, 1)`.
    pub overlap: f64,
    /// Frames in the statistics window.
    pub window_frames: u32,
    /// Frames the window advances per update.
    pub stride_frames: u32,
    /// Frames used for order/sign alignment between updates.
    pub align_frames: u32,
    /// Minimum frame count for batch processing.
    pub batch_frames: u32,
    pub k0: u32,
    pub k1: u32,
    pub k2: u32,
    pub beta: f64,
    pub q: u32,
    /// 0: search the whole band for the reference bin, 1: use bin 4.
    pub reference: u32,
    /// 0: maximum over lags, 1: sum over lags.
    pub lag_sum: u32,
}

/// Multichannel signal (opaque).
pub struct UnmixSignal(TimeSeries);

/// Incremental dynamic separator (opaque).
pub struct UnmixSeparator(StreamingSeparator);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(err: &Error) -> UnmixStatus {
    match err {
        Error::Io { .. } | Error::Wav { .. } | Error::UnsupportedEncoding(_) | Error::Json(_) | Error::Csv(_) => {
            UnmixStatus::Io
        }
        Error::InvalidInput(_) | Error::DimensionMismatch(_) => UnmixStatus::InvalidArgument,
        Error::TooShort { .. } | Error::InsufficientData(_) => UnmixStatus::InsufficientData,
        Error::NonFinite { .. } | Error::Asymmetric { .. } | Error::RankDeficient { .. } | Error::Degenerate(_) => {
            UnmixStatus::Numerical
        }
    }
}

enum Failure {
    Status(UnmixStatus, String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn fail<T>(status: UnmixStatus, msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure::Status(status, msg.into()))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> UnmixStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => UnmixStatus::Ok,
        Ok(Err(Failure::Status(status, msg))) => {
            set_error(msg);
            status
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal error: {msg}"));
            UnmixStatus::Internal
        }
    }
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), Failure> {
    if p.is_null() {
        fail(UnmixStatus::NullPointer, format!("{name} is null"))
    } else {
        Ok(())
    }
}

unsafe fn path_arg(path: *const c_char) -> Result<String, Failure> {
    non_null(path, "path")?;
    match CStr::from_ptr(path).to_str() {
        Ok(s) => Ok(s.to_owned()),
        Err(_) => fail(UnmixStatus::InvalidArgument, "path is not valid UTF-8"),
    }
}

fn to_u32(v: usize, name: &str) -> u32 {
    u32::try_from(v).unwrap_or_else(|_| panic!("{name} does not fit in 32 bits"))
}

impl From<&SeparationConfig> for UnmixConfig {
    fn from(c: &SeparationConfig) -> Self {
        UnmixConfig {
            frame_len: to_u32(c.frame_len, "frame_len"),
            overlap: c.overlap,
            window_frames: to_u32(c.window_frames, "window_frames"),
            stride_frames: to_u32(c.stride_frames, "stride_frames"),
            align_frames: to_u32(c.align_frames, "align_frames"),
            batch_frames: to_u32(c.batch_frames, "batch_frames"),
            k0: to_u32(c.k0, "k0"),
            k1: to_u32(c.k1, "k1"),
            k2: to_u32(c.k2, "k2"),
            beta: c.beta,
            q: to_u32(c.q, "q"),
            reference: match c.reference {
                ReferenceMode::A => 0,
                ReferenceMode::B => 1,
            },
            lag_sum: match c.lag_mode {
                LagAggregation::Max => 0,
                LagAggregation::Sum => 1,
            },
        }
    }
}

impl UnmixConfig {
    fn to_config(self) -> Result<SeparationConfig, Failure> {
        let reference = match self.reference {
            0 => ReferenceMode::A,
            1 => ReferenceMode::B,
            r => return fail(UnmixStatus::InvalidArgument, format!("reference must be 0 or 1, got {r}")),
        };
        let lag_mode = match self.lag_sum {
            0 => LagAggregation::Max,
            1 => LagAggregation::Sum,
            r => return fail(UnmixStatus::InvalidArgument, format!("lag_sum must be 0 or 1, got {r}")),
        };
        let cfg = SeparationConfig {
            frame_len: self.frame_len as usize,
            overlap: self.overlap,
            window_frames: self.window_frames as usize,
            stride_frames: self.stride_frames as usize,
            align_frames: self.align_frames as usize,
            batch_frames: self.batch_frames as usize,
            k0: self.k0 as usize,
            k1: self.k1 as usize,
            k2: self.k2 as usize,
            beta: self.beta,
            q: self.q as usize,
            reference,
            lag_mode,
            ..SeparationConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn unmix_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn unmix_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Fills `out` with parameter row 1, 2 or 3.
///
/// # Safety
/// `out` must point to writable memory for one `UnmixConfig`.
#[no_mangle]
pub unsafe extern "C" fn unmix_config_preset(case_index: u32, out: *mut UnmixConfig) -> UnmixStatus {
    guard(|| {
        non_null(out, "out")?;
        let preset = match case_index {
            1 => Preset::Case1,
            2 => Preset::Case2,
            3 => Preset::Case3,
            c => return fail(UnmixStatus::InvalidArgument, format!("no parameter row {c}")),
        };
        out.write(UnmixConfig::from(&SeparationConfig::preset(preset)));
        Ok(())
    })
}

/// Creates a signal from `frames * channels` interleaved samples.
///
/// # Safety
/// `samples` must point to `frames * channels` readable doubles and `out`
/// to a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn unmix_signal_new(
    samples: *const f64,
    frames: usize,
    channels: usize,
    sample_rate: u32,
    out: *mut *mut UnmixSignal,
) -> UnmixStatus {
    guard(|| {
        non_null(out, "out")?;
        out.write(ptr::null_mut());
        if frames > 0 {
            non_null(samples, "samples")?;
        }
        if channels == 0 {
            return fail(UnmixStatus::InvalidArgument, "channels must be positive");
        }
        let Some(total) = frames.checked_mul(channels) else {
            return fail(UnmixStatus::InvalidArgument, "frames * channels overflows");
        };
        let data: &[f64] = if total == 0 { &[] } else { std::slice::from_raw_parts(samples, total) };
        let mut chans = vec![Vec::with_capacity(frames); channels];
        for frame in data.chunks_exact(channels) {
            for (c, v) in chans.iter_mut().zip(frame) {
                c.push(*v);
            }
        }
        let series = TimeSeries::new(chans, sample_rate)?;
        out.write(Box::into_raw(Box::new(UnmixSignal(series))));
        Ok(())
    })
}

/// Reads a 16-bit PCM or 32-bit float WAV file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn unmix_signal_read_wav(path: *const c_char, out: *mut *mut UnmixSignal) -> UnmixStatus {
    guard(|| {
        non_null(out, "out")?;
        out.write(ptr::null_mut());
        let path = path_arg(path)?;
        let series = read_wav(path)?;
        out.write(Box::into_raw(Box::new(UnmixSignal(series))));
        Ok(())
    })
}

/// Writes a WAV file: 16-bit PCM when `float32` is 0, else 32-bit float.
///
/// # Safety
/// `signal` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn unmix_signal_write_wav(
    signal: *const UnmixSignal,
    path: *const c_char,
    float32: u32,
) -> UnmixStatus {
    guard(|| {
        non_null(signal, "signal")?;
        let path = path_arg(path)?;
        let encoding = if float32 == 0 { WavEncoding::Pcm16 } else { WavEncoding::Float32 };
        write_wav_as(path, &(*signal).0, encoding)?;
        Ok(())
    })
}

/// Samples per channel (0 for a null handle).
///
/// # Safety
/// `signal` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn unmix_signal_len(signal: *const UnmixSignal) -> usize {
    signal.as_ref().map_or(0, |s| s.0.len())
}

/// Number of channels (0 for a null handle).
///
/// # Safety
/// `signal` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn unmix_signal_channels(signal: *const UnmixSignal) -> usize {
    signal.as_ref().map_or(0, |s| s.0.num_channels())
}

/// Sample rate in Hz (0 for a null handle).
///
/// # Safety
/// `signal` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn unmix_signal_sample_rate(signal: *const UnmixSignal) -> u32 {
    signal.as_ref().map_or(0, |s| s.0.sample_rate())
}

/// Copies channel `channel` into `buffer`. `*written` receives the channel
/// length; if `capacity` is smaller, nothing is copied and
/// `UNMIX_STATUS_BUFFER_TOO_SMALL` is returned.
///
/// # Safety
/// `signal` must be a live handle, `buffer` writable for `capacity`
/// doubles (may be null when `capacity` is 0) and `written` writable.
#[no_mangle]
pub unsafe extern "C" fn unmix_signal_copy_channel(
    signal: *const UnmixSignal,
    channel: usize,
    buffer: *mut f64,
    capacity: usize,
    written: *mut usize,
) -> UnmixStatus {
    guard(|| {
        non_null(signal, "signal")?;
        non_null(written, "written")?;
        let s = &(*signal).0;
        if channel >= s.num_channels() {
            return fail(
                UnmixStatus::InvalidArgument,
                format!("channel {channel} out of range (signal has {})", s.num_channels()),
            );
        }
        let data = s.channel(channel);
        written.write(data.len());
        if capacity < data.len() {
            return fail(
                UnmixStatus::BufferTooSmall,
                format!("buffer holds {capacity} samples, channel has {}", data.len()),
            );
        }
        if !data.is_empty() {
            non_null(buffer, "buffer")?;
            ptr::copy_nonoverlapping(data.as_ptr(), buffer, data.len());
        }
        Ok(())
    })
}

/// Releases a signal. Null is ignored.
///
/// # Safety
/// `signal` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn unmix_signal_free(signal: *mut UnmixSignal) {
    if !signal.is_null() {
        drop(Box::from_raw(signal));
    }
}

/// Separates a stereo mixture in one call: dynamic (sliding window) when
/// `batch` is 0, else batch. `*out` receives a new stereo signal.
///
/// # Safety
/// `mix` must be a live handle, `config` readable and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn unmix_separate(
    mix: *const UnmixSignal,
    config: *const UnmixConfig,
    batch: u32,
    out: *mut *mut UnmixSignal,
) -> UnmixStatus {
    guard(|| {
        non_null(out, "out")?;
        out.write(ptr::null_mut());
        non_null(mix, "mix")?;
        non_null(config, "config")?;
        let cfg = config.read().to_config()?;
        let result = if batch == 0 {
            separate_dynamic(&(*mix).0, &cfg)?
        } else {
            separate_batch(&(*mix).0, &cfg)?
        };
        out.write(Box::into_raw(Box::new(UnmixSignal(result.output))));
        Ok(())
    })
}

/// Creates a streaming separator for stereo input at `sample_rate`.
///
/// # Safety
/// `config` must be readable and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn unmix_separator_new(
    config: *const UnmixConfig,
    sample_rate: u32,
    out: *mut *mut UnmixSeparator,
) -> UnmixStatus {
    guard(|| {
        non_null(out, "out")?;
        out.write(ptr::null_mut());
        non_null(config, "config")?;
        let cfg = config.read().to_config()?;
        let sep = StreamingSeparator::new(cfg, sample_rate)?;
        out.write(Box::into_raw(Box::new(UnmixSeparator(sep))));
        Ok(())
    })
}

/// Feeds `frames` samples per channel and returns the output samples that
/// became final as a new stereo signal in `*out` (possibly of length 0).
///
/// # Safety
/// `separator` must be a live handle, `left`/`right` readable for `frames`
/// doubles and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn unmix_separator_push(
    separator: *mut UnmixSeparator,
    left: *const f64,
    right: *const f64,
    frames: usize,
    out: *mut *mut UnmixSignal,
) -> UnmixStatus {
    guard(|| {
        non_null(out, "out")?;
        out.write(ptr::null_mut());
        non_null(separator, "separator")?;
        let block = if frames == 0 {
            vec![Vec::new(), Vec::new()]
        } else {
            non_null(left, "left")?;
            non_null(right, "right")?;
            vec![
                std::slice::from_raw_parts(left, frames).to_vec(),
                std::slice::from_raw_parts(right, frames).to_vec(),
            ]
        };
        let sep = &mut (*separator).0;
        let emitted = sep.push(&block)?;
        let rate = sep.sample_rate();
        out.write(Box::into_raw(Box::new(UnmixSignal(TimeSeries::new(emitted, rate)?))));
        Ok(())
    })
}

/// Output samples per channel delivered so far (0 for a null handle).
///
/// # Safety
/// `separator` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn unmix_separator_emitted(separator: *const UnmixSeparator) -> usize {
    separator.as_ref().map_or(0, |s| s.0.emitted_len())
}

/// Releases a separator. Null is ignored.
///
/// # Safety
/// `separator` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn unmix_separator_free(separator: *mut UnmixSeparator) {
    if !separator.is_null() {
        drop(Box::from_raw(separator));
    }
}
