//! Framing and T-point DFTs with the `e^{-2 pi J w tau}` forward convention.
//!
//! Bins are addressed by integer index `b`, with normalized frequency
//! `w = b / T`. Analysis uses a rectangular window: reconstruction happens by
//! time-domain filtering, so no synthesis window is needed.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::signal_io::TimeSeries;

/// Maximum tolerated conjugate asymmetry before an inverse transform refuses
/// to discard the imaginary part.
pub const SYMMETRY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameGrid {
    pub frame_len: usize,
    pub overlap: f64,
    pub hop: usize,
    pub num_frames: usize,
    /// Trailing samples that did not fill a whole frame.
    pub dropped_samples: usize,
}

impl FrameGrid {
    pub fn new(signal_len: usize, frame_len: usize, overlap: f64) -> Result<Self> {
        let hop = hop_for(frame_len, overlap)?;
        if frame_len > signal_len {
            return Err(Error::TooShort {
                needed: frame_len,
                got: signal_len,
            });
        }
        let num_frames = (signal_len - frame_len) / hop + 1;
        let covered = (num_frames - 1) * hop + frame_len;
        Ok(Self {
            frame_len,
            overlap,
            hop,
            num_frames,
            dropped_samples: signal_len - covered,
        })
    }

    /// First sample of frame `t`.
    pub fn frame_start(&self, t: usize) -> usize {
        t * self.hop
    }

    /// Number of samples spanned by `frames` consecutive frames.
    pub fn span(&self, frames: usize) -> usize {
        if frames == 0 {
            0
        } else {
            (frames - 1) * self.hop + self.frame_len
        }
    }

    /// Number of non-redundant bins, `T/2 + 1`.
    pub fn num_bins(&self) -> usize {
        self.frame_len / 2 + 1
    }
}

/// Hop size `T (1 - overlap)`, which must come out as a positive integer.
pub fn hop_for(frame_len: usize, overlap: f64) -> Result<usize> {
    if frame_len < 4 || !frame_len.is_power_of_two() {
        return Err(Error::InvalidInput(format!(
            "frame length {frame_len} must be a power of two >= 4"
        )));
    }
    if !(0.0..1.0).contains(&overlap) {
        return Err(Error::InvalidInput(format!("overlap {overlap} not in [0, 1)")));
    }
    let exact = frame_len as f64 * (1.0 - overlap);
    let hop = exact.round();
    if hop < 1.0 || (hop - exact).abs() > 1e-9 {
        return Err(Error::InvalidInput(format!(
            "overlap {overlap} does not give an integer hop for T = {frame_len}"
        )));
    }
    Ok(hop as usize)
}

/// Frames of one series: `frames[channel][t][tau]`.
pub type FramedSamples = Vec<Vec<Vec<f64>>>;

/// Cuts every channel into frames of `frame_len` samples, hopping by
/// `frame_len * (1 - overlap)`. Trailing samples are dropped and counted in
/// [`FrameGrid::dropped_samples`].
pub fn make_frames(
    series: &TimeSeries,
    frame_len: usize,
    overlap: f64,
) -> Result<(FrameGrid, FramedSamples)> {
    let grid = FrameGrid::new(series.len(), frame_len, overlap)?;
    let frames = series
        .channels()
        .iter()
        .map(|c| {
            (0..grid.num_frames)
                .map(|t| c[grid.frame_start(t)..grid.frame_start(t) + frame_len].to_vec())
                .collect()
        })
        .collect();
    Ok((grid, frames))
}

/// Forward and inverse T-point transforms with cached plans.
#[derive(Clone)]
pub struct SpectralTransform {
    len: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for SpectralTransform {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpectralTransform").field("len", &self.len).finish()
    }
}

impl SpectralTransform {
    pub fn new(len: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            len,
            forward: planner.plan_fft_forward(len),
            inverse: planner.plan_fft_inverse(len),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// `X(b) = sum_tau x(tau) e^{-2 pi J b tau / T}`.
    pub fn forward(&self, frame: &[f64]) -> Result<Vec<Complex64>> {
        if frame.len() != self.len {
            return Err(Error::DimensionMismatch(format!(
                "frame of {} samples for a {}-point transform",
                frame.len(),
                self.len
            )));
        }
        let mut buf: Vec<Complex64> = frame.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward.process(&mut buf);
        Ok(buf)
    }

    /// Bins `0..=T/2` of the forward transform.
    pub fn forward_half(&self, frame: &[f64]) -> Result<Vec<Complex64>> {
        let mut full = self.forward(frame)?;
        full.truncate(self.len / 2 + 1);
        Ok(full)
    }

    /// Inverse transform (with the `1/T` factor) of a spectrum that must be
    /// conjugate-symmetric; returns the real part together with the largest
    /// discarded imaginary magnitude.
    pub fn inverse_with_residue(&self, spectrum: &[Complex64]) -> Result<(Vec<f64>, f64)> {
        if spectrum.len() != self.len {
            return Err(Error::DimensionMismatch(format!(
                "spectrum of {} bins for a {}-point transform",
                spectrum.len(),
                self.len
            )));
        }
        let (bin, deviation) = worst_asymmetry(spectrum);
        if deviation > SYMMETRY_TOL {
            return Err(Error::Asymmetric { bin, deviation });
        }
        let mut buf = spectrum.to_vec();
        self.inverse.process(&mut buf);
        let scale = 1.0 / self.len as f64;
        let residue = buf.iter().fold(0.0f64, |m, z| m.max((z.im * scale).abs()));
        Ok((buf.iter().map(|z| z.re * scale).collect(), residue))
    }

    pub fn inverse(&self, spectrum: &[Complex64]) -> Result<Vec<f64>> {
        self.inverse_with_residue(spectrum).map(|(x, _)| x)
    }
}

/// Bin with the largest violation of `X(b) = X(T-b)*` (including the
/// imaginary parts of the DC and Nyquist bins) and the size of the violation.
pub fn worst_asymmetry(spectrum: &[Complex64]) -> (usize, f64) {
    let t = spectrum.len();
    let mut worst = (0, spectrum.first().map_or(0.0, |z| z.im.abs()));
    for b in 1..t {
        let d = (spectrum[b] - spectrum[t - b].conj()).norm();
        if d > worst.1 {
            worst = (b, d);
        }
    }
    worst
}

/// Rebuilds a full conjugate-symmetric spectrum from bins `0..=T/2`. The DC
/// and Nyquist bins keep only their real parts.
pub fn mirror_half(half: &[Complex64], len: usize) -> Vec<Complex64> {
    debug_assert_eq!(half.len(), len / 2 + 1);
    let mut full = vec![Complex64::new(0.0, 0.0); len];
    full[0] = Complex64::new(half[0].re, 0.0);
    full[len / 2] = Complex64::new(half[len / 2].re, 0.0);
    for b in 1..len / 2 {
        full[b] = half[b];
        full[len - b] = half[b].conj();
    }
    full
}

pub fn forward_spectrum(frame: &[f64]) -> Result<Vec<Complex64>> {
    SpectralTransform::new(frame.len()).forward(frame)
}

pub fn inverse_spectrum(spectrum: &[Complex64]) -> Result<Vec<f64>> {
    SpectralTransform::new(spectrum.len()).inverse(spectrum)
}

/// Half spectra of every frame: `data[channel][t][b]` for `b in 0..=T/2`.
#[derive(Debug, Clone)]
pub struct SpectralFrames {
    pub grid: FrameGrid,
    pub data: Vec<Vec<Vec<Complex64>>>,
}

impl SpectralFrames {
    pub fn analyze(series: &TimeSeries, frame_len: usize, overlap: f64) -> Result<Self> {
        let grid = FrameGrid::new(series.len(), frame_len, overlap)?;
        let transform = SpectralTransform::new(frame_len);
        let data = series
            .channels()
            .iter()
            .map(|c| {
                (0..grid.num_frames)
                    .map(|t| {
                        let s = grid.frame_start(t);
                        transform.forward_half(&c[s..s + frame_len])
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { grid, data })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn frame_counts() {
        let s = TimeSeries::new(vec![vec![0.0; 1024]], 16_000).unwrap();
        let (g, f) = make_frames(&s, 512, 0.0).unwrap();
        assert_eq!((g.num_frames, g.hop, g.dropped_samples), (2, 512, 0));
        assert_eq!(f[0].len(), 2);

        let (g, _) = make_frames(&s, 256, 0.5).unwrap();
        assert_eq!((g.num_frames, g.hop), (7, 128));

        let short = TimeSeries::new(vec![vec![0.0; 100]], 16_000).unwrap();
        assert!(make_frames(&short, 256, 0.0).is_err());
    }

    #[test]
    fn dropped_tail_is_reported() {
        let g = FrameGrid::new(1000, 256, 0.5).unwrap();
        assert_eq!(g.num_frames, 6);
        assert_eq!(g.span(g.num_frames) + g.dropped_samples, 1000);
    }

    #[test]
    fn rejects_bad_grid() {
        assert!(hop_for(300, 0.0).is_err());
        assert!(hop_for(256, 1.0).is_err());
        assert!(hop_for(256, 0.3).is_err());
    }

    #[test]
    fn frames_cover_signal_by_hop() {
        let x: Vec<f64> = (0..1000).map(f64::from).collect();
        let s = TimeSeries::new(vec![x], 8_000).unwrap();
        let (g, f) = make_frames(&s, 256, 0.5).unwrap();
        for t in 0..g.num_frames {
            assert_eq!(f[0][t][0], (t * g.hop) as f64);
            assert_eq!(f[0][t][255], (t * g.hop + 255) as f64);
        }
    }

    #[test]
    fn dft_identities() {
        let tr = SpectralTransform::new(256);
        assert!(tr.forward(&[0.0; 256]).unwrap().iter().all(|z| z.norm() == 0.0));

        let mut impulse = vec![0.0; 256];
        impulse[0] = 1.0;
        assert!(tr
            .forward(&impulse)
            .unwrap()
            .iter()
            .all(|z| (z - Complex64::new(1.0, 0.0)).norm() < 1e-12));

        let cos: Vec<f64> = (0..256).map(|k| (2.0 * PI * k as f64 / 256.0).cos()).collect();
        let x = tr.forward(&cos).unwrap();
        assert!((x[1].norm() - 128.0).abs() < 1e-9);
        assert!((x[255].norm() - 128.0).abs() < 1e-9);
        let rest: f64 = x
            .iter()
            .enumerate()
            .filter(|(b, _)| *b != 1 && *b != 255)
            .map(|(_, z)| z.norm())
            .fold(0.0, f64::max);
        assert!(rest < 1e-9);

        // sign convention: a one-sample delay rotates bin 1 by e^{-2 pi J / T}
        let mut delayed = vec![0.0; 256];
        delayed[1] = 1.0;
        let d = tr.forward(&delayed).unwrap();
        let expected = Complex64::from_polar(1.0, -2.0 * PI / 256.0);
        assert!((d[1] - expected).norm() < 1e-12);
    }

    #[test]
    fn wrong_length_rejected() {
        let tr = SpectralTransform::new(8);
        assert!(tr.forward(&[0.0; 7]).is_err());
        assert!(tr.inverse(&[Complex64::new(0.0, 0.0); 9]).is_err());
    }

    #[test]
    fn inverse_of_flat_is_impulse() {
        let x = inverse_spectrum(&vec![Complex64::new(1.0, 0.0); 64]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-12);
        assert!(x[1..].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn asymmetric_spectrum_rejected() {
        let tr = SpectralTransform::new(256);
        let mut s = tr.forward(&vec![0.25; 256]).unwrap();
        s[3] += Complex64::new(1e-3, 0.0);
        match tr.inverse(&s) {
            Err(Error::Asymmetric { bin, deviation }) => {
                assert!(bin == 3 || bin == 253);
                assert!((deviation - 1e-3).abs() < 1e-9);
            }
            other => panic!("expected asymmetry error, got {other:?}"),
        }
    }

    #[test]
    fn mirror_half_roundtrip() {
        let tr = SpectralTransform::new(16);
        let x: Vec<f64> = (0..16).map(|k| ((k * 7) % 5) as f64 - 2.0).collect();
        let half = tr.forward_half(&x).unwrap();
        let back = tr.inverse(&mirror_half(&half, 16)).unwrap();
        for (a, b) in x.iter().zip(&back) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
