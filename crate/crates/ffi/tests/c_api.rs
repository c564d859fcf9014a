use std::ffi::{CStr, CString};
use std::ptr;

use unmix::signal_io::{convolve_mix, MixingFilters};
use unmix::synth::{source_pair, SourcePair};
use unmix_ffi::*;

fn last_error() -> String {
    let p = unmix_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn preset(case_index: u32) -> UnmixConfig {
    let mut cfg = std::mem::MaybeUninit::<UnmixConfig>::uninit();
    assert_eq!(unsafe { unmix_config_preset(case_index, cfg.as_mut_ptr()) }, UnmixStatus::Ok);
    unsafe { cfg.assume_init() }
}

fn signal(channels: &[Vec<f64>], rate: u32) -> *mut UnmixSignal {
    let frames = channels[0].len();
    let interleaved: Vec<f64> = (0..frames).flat_map(|k| channels.iter().map(move |c| c[k])).collect();
    let mut out = ptr::null_mut();
    let status = unsafe { unmix_signal_new(interleaved.as_ptr(), frames, channels.len(), rate, &mut out) };
    assert_eq!(status, UnmixStatus::Ok);
    out
}

fn channel(s: *const UnmixSignal, i: usize) -> Vec<f64> {
    let len = unsafe { unmix_signal_len(s) };
    let mut buf = vec![0.0; len];
    let mut written = 0;
    let status = unsafe { unmix_signal_copy_channel(s, i, buf.as_mut_ptr(), buf.len(), &mut written) };
    assert_eq!(status, UnmixStatus::Ok);
    assert_eq!(written, len);
    buf
}

fn test_mixture(seconds: f64) -> Vec<Vec<f64>> {
    let src = source_pair(SourcePair::SpeechMusic, seconds, 16_000, 7).unwrap();
    convolve_mix(&src, &MixingFilters::default_demo(), None).unwrap().into_channels()
}

#[test]
fn presets_match_library() {
    let c2 = preset(2);
    assert_eq!((c2.frame_len, c2.window_frames, c2.stride_frames, c2.align_frames), (256, 100, 20, 40));
    assert_eq!((c2.k0, c2.k1, c2.k2, c2.q, c2.batch_frames), (15, 20, 20, 2, 160));
    assert_eq!(c2.beta, 1.04);
    assert_eq!(preset(3).k0, 10);
    assert_eq!(preset(1).frame_len, 512);

    let mut cfg = c2;
    assert_eq!(unsafe { unmix_config_preset(4, &mut cfg) }, UnmixStatus::InvalidArgument);
    assert!(last_error().contains("parameter row 4"));
    assert_eq!(unsafe { unmix_config_preset(2, ptr::null_mut()) }, UnmixStatus::NullPointer);
}

#[test]
fn signal_round_trip() {
    let chans = vec![vec![0.1, 0.2, 0.3], vec![-0.5, 0.0, 0.5]];
    let s = signal(&chans, 8000);
    unsafe {
        assert_eq!(unmix_signal_channels(s), 2);
        assert_eq!(unmix_signal_sample_rate(s), 8000);
    }
    assert_eq!(channel(s, 0), chans[0]);
    assert_eq!(channel(s, 1), chans[1]);

    let mut small = [0.0; 2];
    let mut written = 0;
    let status = unsafe { unmix_signal_copy_channel(s, 0, small.as_mut_ptr(), small.len(), &mut written) };
    assert_eq!(status, UnmixStatus::BufferTooSmall);
    assert_eq!(written, 3);
    let status = unsafe { unmix_signal_copy_channel(s, 2, small.as_mut_ptr(), small.len(), &mut written) };
    assert_eq!(status, UnmixStatus::InvalidArgument);
    unsafe { unmix_signal_free(s) };
}

#[test]
fn null_handles_are_safe() {
    unsafe {
        assert_eq!(unmix_signal_len(ptr::null()), 0);
        assert_eq!(unmix_signal_channels(ptr::null()), 0);
        assert_eq!(unmix_separator_emitted(ptr::null()), 0);
        unmix_signal_free(ptr::null_mut());
        unmix_separator_free(ptr::null_mut());
        let mut out = ptr::null_mut();
        let cfg = preset(2);
        assert_eq!(unmix_separate(ptr::null(), &cfg, 0, &mut out), UnmixStatus::NullPointer);
        assert!(out.is_null());
        assert_eq!(unmix_signal_new(ptr::null(), 4, 2, 8000, &mut out), UnmixStatus::NullPointer);
        assert_eq!(unmix_signal_new(ptr::null(), 0, 0, 8000, &mut out), UnmixStatus::InvalidArgument);
    }
    assert!(!unsafe { CStr::from_ptr(unmix_version()) }.to_bytes().is_empty());
}

#[test]
fn bad_config_rejected() {
    let mut cfg = preset(2);
    cfg.stride_frames = 200;
    let s = signal(&[vec![0.0; 10], vec![0.0; 10]], 16_000);
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { unmix_separate(s, &cfg, 0, &mut out) }, UnmixStatus::InvalidArgument);
    let mut cfg = preset(2);
    cfg.reference = 7;
    assert_eq!(unsafe { unmix_separate(s, &cfg, 0, &mut out) }, UnmixStatus::InvalidArgument);
    let cfg = preset(2);
    assert_eq!(unsafe { unmix_separate(s, &cfg, 1, &mut out) }, UnmixStatus::InsufficientData);
    assert!(last_error().contains("frames"));
    unsafe { unmix_signal_free(s) };
}

#[test]
fn streaming_matches_one_shot() {
    let mix = test_mixture(1.2);
    let cfg = preset(2);
    let s = signal(&mix, 16_000);
    let mut whole = ptr::null_mut();
    assert_eq!(unsafe { unmix_separate(s, &cfg, 0, &mut whole) }, UnmixStatus::Ok);
    let expected = [channel(whole, 0), channel(whole, 1)];

    let mut sep = ptr::null_mut();
    assert_eq!(unsafe { unmix_separator_new(&cfg, 16_000, &mut sep) }, UnmixStatus::Ok);
    let mut got = [Vec::new(), Vec::new()];
    for start in (0..mix[0].len()).step_by(1000) {
        let end = (start + 1000).min(mix[0].len());
        let mut block = ptr::null_mut();
        let status = unsafe {
            unmix_separator_push(sep, mix[0][start..].as_ptr(), mix[1][start..].as_ptr(), end - start, &mut block)
        };
        assert_eq!(status, UnmixStatus::Ok);
        got[0].extend(channel(block, 0));
        got[1].extend(channel(block, 1));
        unsafe { unmix_signal_free(block) };
    }
    assert_eq!(unsafe { unmix_separator_emitted(sep) }, got[0].len());
    assert_eq!(got, expected);
    unsafe {
        unmix_separator_free(sep);
        unmix_signal_free(whole);
        unmix_signal_free(s);
    }
}

#[test]
fn wav_files() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("x.wav").to_str().unwrap()).unwrap();
    let chans = vec![vec![0.25, -0.75, 2.0], vec![0.0, 0.5, -0.125]];
    let s = signal(&chans, 16_000);
    assert_eq!(unsafe { unmix_signal_write_wav(s, path.as_ptr(), 1) }, UnmixStatus::Ok);
    let mut back = ptr::null_mut();
    assert_eq!(unsafe { unmix_signal_read_wav(path.as_ptr(), &mut back) }, UnmixStatus::Ok);
    assert_eq!(channel(back, 0), chans[0]);
    assert_eq!(channel(back, 1), chans[1]);

    let missing = CString::new(dir.path().join("missing.wav").to_str().unwrap()).unwrap();
    let mut none = ptr::null_mut();
    assert_eq!(unsafe { unmix_signal_read_wav(missing.as_ptr(), &mut none) }, UnmixStatus::Io);
    assert!(none.is_null());
    assert!(last_error().contains("missing.wav"));
    unsafe {
        unmix_signal_free(back);
        unmix_signal_free(s);
    }
}

#[test]
fn header_declares_every_export() {
    let header = include_str!("../include/unmix.h");
    let source = include_str!("../src/lib.rs");
    let exports: Vec<&str> = source
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .filter_map(|rest| rest.split('(').next())
        .collect();
    assert!(exports.len() >= 14, "{exports:?}");
    for name in exports {
        assert!(header.contains(&format!("{name}(")), "{name} missing from header");
    }
    assert!(header.contains("UNMIX_STATUS_BUFFER_TOO_SMALL = 6"));
}
