//! Seeded synthetic test sources.
//!
//! These stand in for recorded speech and music: a syllable-modulated,
//! formant-filtered noise/pulse signal, a harmonic note sequence, and a
//! babble made of several speech-like voices. All generators return
//! unit-free signals scaled to a common RMS.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::signal_io::TimeSeries;

/// RMS of every generated source.
pub const SOURCE_RMS: f64 = 0.1;

/// Speech-to-babble power ratio (dB) of [`SourcePair::SpeechBabble`].
pub const BABBLE_SNR_DB: f64 = -3.8206;

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64).sqrt()
}

/// Scales `x` to RMS `target` (no-op on silence).
pub fn normalize_rms(x: &mut [f64], target: f64) {
    let r = rms(x);
    if r > 0.0 {
        x.iter_mut().for_each(|v| *v *= target / r);
    }
}

/// Two-pole resonator with unit peak gain.
struct Resonator {
    a1: f64,
    a2: f64,
    gain: f64,
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn new(freq: f64, bandwidth: f64, rate: f64) -> Self {
        let r = (-PI * bandwidth / rate).exp();
        let theta = 2.0 * PI * freq / rate;
        Resonator {
            a1: 2.0 * r * theta.cos(),
            a2: -r * r,
            gain: 1.0 - r,
            y1: 0.0,
            y2: 0.0,
        }
    }

    fn retune(&mut self, freq: f64, bandwidth: f64, rate: f64) {
        let next = Resonator::new(freq, bandwidth, rate);
        self.a1 = next.a1;
        self.a2 = next.a2;
        self.gain = next.gain;
    }

    fn step(&mut self, x: f64) -> f64 {
        let y = self.gain * x + self.a1 * self.y1 + self.a2 * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

fn raised_cosine(pos: f64) -> f64 {
    0.5 - 0.5 * (2.0 * PI * pos).cos()
}

/// Syllable-modulated speech stand-in of `len` samples.
///
/// Each syllable picks two formants, a pitch and a voicing mix; the
/// excitation is a blend of a glottal pulse train and white noise passed
/// through two narrow formant resonators, shaped by a raised-cosine
/// envelope. Syllables are separated by short gaps and occasional longer
/// pauses.
pub fn speech_like(len: usize, sample_rate: u32, seed: u64) -> Vec<f64> {
    let rate = sample_rate as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![0.0; len];
    let mut f1 = Resonator::new(500.0, 60.0, rate);
    let mut f2 = Resonator::new(1500.0, 80.0, rate);
    let mut k = (rng.gen_range(0.0..0.1) * rate) as usize;
    let mut phase = 0.0;
    while k < len {
        let dur = (rng.gen_range(0.06..0.25) * rate) as usize;
        let peak = rng.gen_range(0.4..1.0);
        let pitch = rng.gen_range(95.0..230.0);
        let voiced = rng.gen_range(0.6..1.0);
        f1.retune(rng.gen_range(280.0..850.0), 60.0, rate);
        f2.retune(rng.gen_range(850.0..2400.0), 80.0, rate);
        for i in 0..dur.min(len - k) {
            let env = peak * raised_cosine(i as f64 / dur as f64);
            phase += pitch / rate;
            let pulse = if phase >= 1.0 {
                phase -= 1.0;
                1.0
            } else {
                0.0
            };
            let noise: f64 = StandardNormal.sample(&mut rng);
            let excitation = voiced * 6.0 * pulse + (1.0 - voiced) * 0.5 * noise + 0.15 * noise;
            out[k + i] = env * (f1.step(excitation) + 0.6 * f2.step(excitation));
        }
        k += dur;
        let gap = if rng.gen_bool(0.1) {
            rng.gen_range(0.2..0.4)
        } else {
            rng.gen_range(0.02..0.1)
        };
        k += (gap * rate) as usize;
    }
    normalize_rms(&mut out, SOURCE_RMS);
    out
}

/// Plucked-string note sequence of `len` samples: notes (sometimes two at
/// once) of a pentatonic scale with up to forty slightly inharmonic
/// partials, a short noise burst at each onset and an exponential decay, so
/// that every partial follows the same rhythm.
pub fn music_like(len: usize, sample_rate: u32, seed: u64) -> Vec<f64> {
    const SCALE: [f64; 5] = [0.0, 2.0, 4.0, 7.0, 9.0];
    let rate = sample_rate as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![0.0; len];
    let mut k = 0usize;
    while k < len {
        let step = (rng.gen_range(0.12..0.32) * rate) as usize;
        let voices = if rng.gen_bool(0.4) { 2 } else { 1 };
        let decay = rng.gen_range(0.06..0.14) * rate;
        let ring = ((5.0 * decay) as usize).min(len - k);
        let attack = 0.004 * rate;
        let burst = (0.02 * rate) as usize;
        for _ in 0..voices {
            let degree = SCALE[rng.gen_range(0..SCALE.len())] + 12.0 * rng.gen_range(0..3) as f64;
            let f0 = 55.0 * 2f64.powf(degree / 12.0);
            let amp = rng.gen_range(0.6..1.0);
            let partials: Vec<(f64, f64)> = (1..=40)
                .map(|h| {
                    let h = h as f64;
                    (f0 * h * (1.0 + 0.0004 * h * h), rng.gen_range(0.5..1.0) / h.powf(0.7))
                })
                .filter(|(f, _)| *f < 0.45 * rate)
                .collect();
            for i in 0..ring {
                let t = i as f64;
                let env = amp * (t / attack).min(1.0) * (-t / decay).exp();
                let tone: f64 = partials
                    .iter()
                    .map(|(f, a)| a * (2.0 * PI * f * t / rate).sin())
                    .sum();
                out[k + i] += env * tone;
            }
        }
        for i in 0..burst.min(len - k) {
            let noise: f64 = StandardNormal.sample(&mut rng);
            out[k + i] += 0.5 * noise * (1.0 - i as f64 / burst as f64);
        }
        k += step;
    }
    normalize_rms(&mut out, SOURCE_RMS);
    out
}

/// Babble: the sum of `voices` independent speech-like signals, scaled to
/// [`SOURCE_RMS`].
pub fn babble(len: usize, sample_rate: u32, voices: usize, seed: u64) -> Vec<f64> {
    let mut out = vec![0.0; len];
    for v in 0..voices {
        let voice = speech_like(len, sample_rate, seed.wrapping_mul(31).wrapping_add(v as u64 + 1));
        out.iter_mut().zip(voice).for_each(|(o, x)| *o += x);
    }
    normalize_rms(&mut out, SOURCE_RMS);
    out
}

/// Which pair of sources to generate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourcePair {
    /// Speech-like and music-like.
    SpeechMusic,
    /// Speech-like and babble noise, the babble louder by
    /// [`BABBLE_SNR_DB`].
    SpeechBabble,
}

/// Two independent sources of `seconds` length at `sample_rate`.
pub fn source_pair(pair: SourcePair, seconds: f64, sample_rate: u32, seed: u64) -> Result<TimeSeries> {
    if !(seconds > 0.0) || sample_rate == 0 {
        return Err(Error::InvalidInput("duration and sample rate must be positive".into()));
    }
    let len = (seconds * sample_rate as f64).round() as usize;
    let s1 = speech_like(len, sample_rate, seed);
    let s2 = match pair {
        SourcePair::SpeechMusic => music_like(len, sample_rate, seed ^ 0x5eed_0001),
        SourcePair::SpeechBabble => {
            let gain = 10f64.powf(-BABBLE_SNR_DB / 20.0);
            babble(len, sample_rate, 6, seed ^ 0x5eed_0002)
                .into_iter()
                .map(|v| gain * v)
                .collect()
        }
    };
    TimeSeries::new(vec![s1, s2], sample_rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::rho_maxlag;

    #[test]
    fn deterministic_and_normalized() {
        let a = speech_like(16_000, 16_000, 3);
        assert_eq!(a, speech_like(16_000, 16_000, 3));
        assert_ne!(a, speech_like(16_000, 16_000, 4));
        assert!((rms(&a) - SOURCE_RMS).abs() < 1e-12);
        let m = music_like(16_000, 16_000, 3);
        assert!((rms(&m) - SOURCE_RMS).abs() < 1e-12);
        assert!(a.iter().chain(&m).all(|v| v.is_finite()));
    }

    #[test]
    fn sources_are_nearly_uncorrelated() {
        let p = source_pair(SourcePair::SpeechMusic, 2.0, 16_000, 9).unwrap();
        assert!(rho_maxlag(p.channel(0), p.channel(1), 20).unwrap() < 0.1);
        let b = source_pair(SourcePair::SpeechBabble, 2.0, 16_000, 9).unwrap();
        assert!(rho_maxlag(b.channel(0), b.channel(1), 20).unwrap() < 0.1);
    }

    #[test]
    fn babble_level() {
        let b = source_pair(SourcePair::SpeechBabble, 1.0, 16_000, 2).unwrap();
        let snr = 20.0 * (rms(b.channel(0)) / rms(b.channel(1))).log10();
        assert!((snr - BABBLE_SNR_DB).abs() < 1e-9, "{snr}");
    }

    #[test]
    fn speech_has_pauses() {
        // syllable gaps make the short-time energy strongly fluctuating
        let s = speech_like(32_000, 16_000, 5);
        let energies: Vec<f64> = s.chunks(320).map(rms).collect();
        let quiet = energies.iter().filter(|e| **e < 0.2 * SOURCE_RMS).count();
        assert!(quiet * 10 >= energies.len(), "{quiet} quiet blocks of {}", energies.len());
    }
}
