//! Second- and fourth-order statistics of two-channel complex streams,
//! correlation coefficients with time lags, and the display envelope.
//!
//! Cumulants are kept in the conjugation pattern `Cum(y_i, y_j*, y_k*, y_l)`
//! and indexed `Q(m)` with `m = 1 + 8i + 4j + 2k + l`. For two channels only
//! six of the sixteen values are independent; the rest follow from
//!
//! ```text
//! Q(2) = Q(3)* = Q(5)* = Q(9)
//! Q(4) = Q(6) = Q(11) = Q(13)
//! Q(7) = Q(10)*
//! Q(8) = Q(15) = Q(12)* = Q(14)*
//! ```
//!
//! and `Q(1)`, `Q(16)` are real.

use std::ops::Add;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One observation of the two-channel complex stream `(y_1, y_2)`.
pub type Sample = [Complex64; 2];

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Index of the product family `y_a y_b` (unordered) among
/// `y1 y1, y1 y2, y2 y2`.
fn pair_index(a: usize, b: usize) -> usize {
    a + b
}

/// Running sums over `N` samples from which every second- and fourth-order
/// moment of the stream can be reconstructed.
///
/// Besides the first moments it keeps the sums of the six product families
/// `y1y1, y1y2, y2y2, y1y1*, y1y2*, y2y2*` and the Gram matrix
/// `sum P_a P_b*` of the three non-conjugated families, which holds all the
/// fourth moments `E[y_i y_l y_j* y_k*]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MomentSums {
    n: usize,
    first: [Complex64; 2],
    pairs: [Complex64; 3],
    cross: [Complex64; 3],
    /// Upper triangle of the 3x3 Hermitian Gram matrix, row-major.
    gram: [Complex64; 6],
}

fn gram_slot(a: usize, b: usize) -> usize {
    match (a, b) {
        (0, 0) => 0,
        (0, 1) => 1,
        (0, 2) => 2,
        (1, 1) => 3,
        (1, 2) => 4,
        (2, 2) => 5,
        _ => unreachable!("gram slot ({a},{b}) is below the diagonal"),
    }
}

impl MomentSums {
    pub fn new() -> Self {
        Self::default()
    }

    /// Sums over a block of samples. Fails on an empty block.
    pub fn accumulate(samples: &[Sample]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidInput("cannot accumulate an empty block".into()));
        }
        let mut sums = Self::new();
        sums.add_block(samples);
        Ok(sums)
    }

    pub fn count(&self) -> usize {
        self.n
    }

    fn apply(&mut self, y: &Sample, sign: f64) {
        let [y1, y2] = *y;
        let p = [y1 * y1, y1 * y2, y2 * y2];
        self.first[0] += y1 * sign;
        self.first[1] += y2 * sign;
        for (s, v) in self.pairs.iter_mut().zip(p) {
            *s += v * sign;
        }
        self.cross[0] += Complex64::new(y1.norm_sqr() * sign, 0.0);
        self.cross[1] += y1 * y2.conj() * sign;
        self.cross[2] += Complex64::new(y2.norm_sqr() * sign, 0.0);
        self.gram[0] += Complex64::new(p[0].norm_sqr() * sign, 0.0);
        self.gram[1] += p[0] * p[1].conj() * sign;
        self.gram[2] += p[0] * p[2].conj() * sign;
        self.gram[3] += Complex64::new(p[1].norm_sqr() * sign, 0.0);
        self.gram[4] += p[1] * p[2].conj() * sign;
        self.gram[5] += Complex64::new(p[2].norm_sqr() * sign, 0.0);
    }

    pub fn add_block(&mut self, samples: &[Sample]) {
        for y in samples {
            self.apply(y, 1.0);
        }
        self.n += samples.len();
    }

    /// Subtracts the contribution of samples that were previously added.
    pub fn remove_block(&mut self, samples: &[Sample]) -> Result<()> {
        if samples.len() > self.n {
            return Err(Error::InvalidInput(format!(
                "removing {} samples from sums over {}",
                samples.len(),
                self.n
            )));
        }
        for y in samples {
            self.apply(y, -1.0);
        }
        self.n -= samples.len();
        Ok(())
    }

    /// Replaces `remove` (oldest samples of the window) by `add` (newest).
    /// Cost is linear in the block length and independent of `N`.
    pub fn slide_update(&mut self, remove: &[Sample], add: &[Sample]) -> Result<()> {
        if remove.len() != add.len() {
            return Err(Error::DimensionMismatch(format!(
                "sliding out {} samples but in {}",
                remove.len(),
                add.len()
            )));
        }
        if remove.len() >= self.n {
            return Err(Error::InvalidInput(format!(
                "slide of {} samples is not smaller than the window of {}",
                remove.len(),
                self.n
            )));
        }
        for y in remove {
            self.apply(y, -1.0);
        }
        for y in add {
            self.apply(y, 1.0);
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.first
            .iter()
            .chain(&self.pairs)
            .chain(&self.cross)
            .chain(&self.gram)
            .all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// Every stored sum, in a fixed order. Useful for comparing sums.
    pub fn raw(&self) -> [Complex64; 14] {
        let mut out = [ZERO; 14];
        out[..2].copy_from_slice(&self.first);
        out[2..5].copy_from_slice(&self.pairs);
        out[5..8].copy_from_slice(&self.cross);
        out[8..].copy_from_slice(&self.gram);
        out
    }

    /// `sum y_i y_j*`.
    pub fn cross_sum(&self, i: usize, j: usize) -> Complex64 {
        match (i, j) {
            (0, 0) => self.cross[0],
            (0, 1) => self.cross[1],
            (1, 0) => self.cross[1].conj(),
            (1, 1) => self.cross[2],
            _ => panic!("channel index out of range"),
        }
    }

    fn gram_sum(&self, a: usize, b: usize) -> Complex64 {
        if a <= b {
            self.gram[gram_slot(a, b)]
        } else {
            self.gram[gram_slot(b, a)].conj()
        }
    }

    /// Empirical covariance and fourth-order cumulants with `1/N`
    /// normalization.
    ///
    /// The fourth-order values follow the zero-mean cumulant formula applied to
    /// raw moments, e.g.
    /// `Q(1) = (1/N) sum|y1|^4 - (1/N^2) (2 (sum|y1|^2)^2 + |sum y1^2|^2)`.
    /// The covariance is centered with the first moments.
    pub fn cumulants(&self) -> Result<CumulantSet> {
        if self.n < 4 {
            return Err(Error::InsufficientData(format!(
                "cumulants need at least 4 samples, have {}",
                self.n
            )));
        }
        let inv_n = 1.0 / self.n as f64;
        let c = |i: usize, j: usize| self.cross_sum(i, j) * inv_n;
        let p = |i: usize, l: usize| self.pairs[pair_index(i, l)] * inv_n;
        let cum = |i: usize, j: usize, k: usize, l: usize| {
            let m4 = self.gram_sum(pair_index(i, l), pair_index(j, k)) * inv_n;
            m4 - c(i, j) * c(l, k) - c(i, k) * c(l, j) - p(i, l) * p(j, k).conj()
        };
        let mean = [self.first[0] * inv_n, self.first[1] * inv_n];
        let mut r = [[ZERO; 2]; 2];
        for (i, row) in r.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = c(i, j) - mean[i] * mean[j].conj();
            }
        }
        // exact Hermitian symmetry
        r[1][0] = r[0][1].conj();
        r[0][0].im = 0.0;
        r[1][1].im = 0.0;

        Ok(CumulantSet::from_independent(
            self.n,
            r,
            [
                cum(0, 0, 0, 0),
                cum(0, 0, 0, 1),
                cum(0, 0, 1, 1),
                cum(0, 1, 1, 0),
                cum(0, 1, 1, 1),
                cum(1, 1, 1, 1),
            ],
        ))
    }
}

impl Add for MomentSums {
    type Output = MomentSums;

    fn add(mut self, rhs: MomentSums) -> MomentSums {
        self.n += rhs.n;
        for (a, b) in self.first.iter_mut().zip(rhs.first) {
            *a += b;
        }
        for (a, b) in self.pairs.iter_mut().zip(rhs.pairs) {
            *a += b;
        }
        for (a, b) in self.cross.iter_mut().zip(rhs.cross) {
            *a += b;
        }
        for (a, b) in self.gram.iter_mut().zip(rhs.gram) {
            *a += b;
        }
        self
    }
}

/// Covariance and fourth-order cumulants of a two-channel stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CumulantSet {
    pub n_samples: usize,
    /// Hermitian covariance `E[(y - m)(y - m)']`.
    pub r: [[Complex64; 2]; 2],
    /// `Q(1), Q(2), Q(4), Q(7), Q(8), Q(16)`.
    independent: [Complex64; 6],
}

impl CumulantSet {
    /// Builds a set from the six independent cumulants; `Q(1)` and `Q(16)` are
    /// projected onto the reals.
    pub fn from_independent(
        n_samples: usize,
        r: [[Complex64; 2]; 2],
        mut independent: [Complex64; 6],
    ) -> Self {
        independent[0].im = 0.0;
        independent[5].im = 0.0;
        Self {
            n_samples,
            r,
            independent,
        }
    }

    /// Builds a set from a full tensor `t(i, j, k, l) = Cum(y_i, y_j*, y_k*, y_l)`
    /// by reading the independent entries.
    pub fn from_tensor(
        n_samples: usize,
        r: [[Complex64; 2]; 2],
        t: impl Fn(usize, usize, usize, usize) -> Complex64,
    ) -> Self {
        Self::from_independent(
            n_samples,
            r,
            [
                t(0, 0, 0, 0),
                t(0, 0, 0, 1),
                t(0, 0, 1, 1),
                t(0, 1, 1, 0),
                t(0, 1, 1, 1),
                t(1, 1, 1, 1),
            ],
        )
    }

    pub fn independent(&self) -> [Complex64; 6] {
        self.independent
    }

    /// `Q(m)` for `m` in `1..=16`.
    pub fn q(&self, m: usize) -> Complex64 {
        let [q1, q2, q4, q7, q8, q16] = self.independent;
        match m {
            1 => q1,
            2 | 9 => q2,
            3 | 5 => q2.conj(),
            4 | 6 | 11 | 13 => q4,
            7 => q7,
            10 => q7.conj(),
            8 | 15 => q8,
            12 | 14 => q8.conj(),
            16 => q16,
            _ => panic!("cumulant index {m} out of 1..=16"),
        }
    }

    /// `Cum(y_i, y_j*, y_k*, y_l)` for channel indices in `{0, 1}`.
    pub fn cum(&self, i: usize, j: usize, k: usize, l: usize) -> Complex64 {
        assert!(i < 2 && j < 2 && k < 2 && l < 2, "channel index out of range");
        self.q(1 + 8 * i + 4 * j + 2 * k + l)
    }
}

fn mean(a: &[f64]) -> f64 {
    a.iter().sum::<f64>() / a.len() as f64
}

/// `M^-1 sum a b - M^-2 (sum a)(sum b)` for real sequences, evaluated in
/// centered form.
pub fn cov(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!(
            "cov of sequences of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::InvalidInput("cov needs at least 2 samples".into()));
    }
    let (ma, mb) = (mean(a), mean(b));
    Ok(a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / a.len() as f64)
}

/// Complex form `M^-1 sum a b* - M^-2 (sum a)(sum b*)`.
pub fn cov_complex(a: &[Complex64], b: &[Complex64]) -> Result<Complex64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!(
            "cov of sequences of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::InvalidInput("cov needs at least 2 samples".into()));
    }
    let m = a.len() as f64;
    let ma = a.iter().sum::<Complex64>() / m;
    let mb = b.iter().sum::<Complex64>() / m;
    Ok(a.iter()
        .zip(b)
        .map(|(x, y)| (x - ma) * (y - mb).conj())
        .sum::<Complex64>()
        / m)
}

fn variance_checked(a: &[f64]) -> Result<f64> {
    let m = mean(a);
    let mean_sq = a.iter().map(|v| v * v).sum::<f64>() / a.len() as f64;
    let var = a.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / a.len() as f64;
    if !(var > 1e-20 * mean_sq) || var <= 0.0 {
        return Err(Error::Degenerate("sequence has zero variance".into()));
    }
    Ok(var)
}

/// Normalized correlation coefficient `cov(a,b) / sqrt(cov(a,a) cov(b,b))`.
/// Zero-variance inputs are an error rather than a silent zero.
pub fn rho(a: &[f64], b: &[f64]) -> Result<f64> {
    let c = cov(a, b)?;
    let va = variance_checked(a)?;
    let vb = variance_checked(b)?;
    Ok((c / (va * vb).sqrt()).clamp(-1.0, 1.0))
}

/// `rho(a(tau), b(tau + lag))` over the overlapping index range.
pub fn lagged_rho(a: &[f64], b: &[f64], lag: isize) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!(
            "lagged rho of sequences of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    let len = a.len();
    let shift = lag.unsigned_abs();
    if shift + 2 > len {
        return Err(Error::InvalidInput(format!("lag {lag} too large for length {len}")));
    }
    if lag >= 0 {
        rho(&a[..len - shift], &b[shift..])
    } else {
        rho(&a[shift..], &b[..len - shift])
    }
}

/// How correlation magnitudes over the lag range `-K..=K` are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LagAggregation {
    #[default]
    Max,
    Sum,
}

/// Lag with the largest `|rho|` and the signed coefficient there. Ties go to
/// the lag closest to `-K`.
pub fn best_lag(a: &[f64], b: &[f64], max_lag: usize) -> Result<(isize, f64)> {
    check_lag_range(a.len(), max_lag)?;
    let k = max_lag as isize;
    let mut best = (0isize, 0.0f64);
    let mut found = false;
    for lag in -k..=k {
        let r = lagged_rho(a, b, lag)?;
        if !found || r.abs() > best.1.abs() {
            best = (lag, r);
            found = true;
        }
    }
    Ok(best)
}

fn check_lag_range(len: usize, max_lag: usize) -> Result<()> {
    if len <= 2 * max_lag || len < 2 {
        return Err(Error::InvalidInput(format!(
            "max lag {max_lag} too large for sequences of length {len}"
        )));
    }
    Ok(())
}

/// `max_{|k| <= K} |rho(a(tau), b(tau + k))|`.
pub fn rho_maxlag(a: &[f64], b: &[f64], max_lag: usize) -> Result<f64> {
    lag_score(a, b, max_lag, LagAggregation::Max)
}

/// Either the max or the sum of `|rho|` over lags `-K..=K`.
pub fn lag_score(a: &[f64], b: &[f64], max_lag: usize, mode: LagAggregation) -> Result<f64> {
    check_lag_range(a.len(), max_lag)?;
    let k = max_lag as isize;
    let mut acc = 0.0f64;
    for lag in -k..=k {
        let r = lagged_rho(a, b, lag)?.abs();
        acc = match mode {
            LagAggregation::Max => acc.max(r),
            LagAggregation::Sum => acc + r,
        };
    }
    Ok(acc)
}

pub const ENVELOPE_TAPS: usize = 400;
pub const ENVELOPE_CUTOFF_HZ: f64 = 100.0;

/// Hamming-windowed sinc lowpass with unit DC gain.
pub fn envelope_filter(sample_rate: f64) -> Vec<f64> {
    let fc = ENVELOPE_CUTOFF_HZ / sample_rate;
    let n = ENVELOPE_TAPS;
    let center = (n - 1) as f64 / 2.0;
    let mut h: Vec<f64> = (0..n)
        .map(|i| {
            let x = i as f64 - center;
            let sinc = if x == 0.0 {
                2.0 * fc
            } else {
                (2.0 * std::f64::consts::PI * fc * x).sin() / (std::f64::consts::PI * x)
            };
            let w = 0.54
                - 0.46 * (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos();
            sinc * w
        })
        .collect();
    let sum: f64 = h.iter().sum();
    for v in &mut h {
        *v /= sum;
    }
    h
}

/// Amplitude envelope for display: rectify, lowpass with a 400-tap FIR at
/// 100 Hz (delay-compensated, edges renormalized by the overlapping tap
/// mass) and scale so the peak is 1. An all-zero input yields all zeros.
pub fn display_envelope(series: &[f64], sample_rate: f64) -> Result<Vec<f64>> {
    if !(sample_rate > 2.0 * ENVELOPE_CUTOFF_HZ) {
        return Err(Error::InvalidInput(format!(
            "sample rate {sample_rate} Hz too low for a {ENVELOPE_CUTOFF_HZ} Hz envelope"
        )));
    }
    let h = envelope_filter(sample_rate);
    let delay = h.len() / 2;
    let rect: Vec<f64> = series.iter().map(|v| v.abs()).collect();
    let len = rect.len();
    let mut env: Vec<f64> = (0..len)
        .map(|k| {
            // y[k] = sum_n h[n] r[k + delay - n]
            let lo = (k + delay + 1).saturating_sub(len);
            let hi = (k + delay).min(h.len() - 1);
            let mut acc = 0.0;
            let mut mass = 0.0;
            for (n, &hn) in h.iter().enumerate().take(hi + 1).skip(lo) {
                acc += hn * rect[k + delay - n];
                mass += hn;
            }
            if mass.abs() > 1e-12 {
                acc / mass
            } else {
                0.0
            }
        })
        .collect();
    let peak = env.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        for v in &mut env {
            *v /= peak;
        }
    }
    Ok(env)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;
    use std::f64::consts::PI;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_block(rng: &mut ChaCha8Rng, n: usize) -> Vec<Sample> {
        (0..n)
            .map(|_| {
                [
                    c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
                    c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
                ]
            })
            .collect()
    }

    fn max_rel(a: &[Complex64], b: &[Complex64]) -> f64 {
        let scale = a.iter().map(|z| z.norm()).fold(1e-300, f64::max);
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).norm() / scale)
            .fold(0.0, f64::max)
    }

    #[test]
    fn constant_stream_sums() {
        let block = vec![[c(1.0, 0.0), c(0.0, 0.0)]; 4];
        let s = MomentSums::accumulate(&block).unwrap();
        assert_eq!(s.cross_sum(0, 0), c(4.0, 0.0));
        assert_eq!(s.cross_sum(0, 1), c(0.0, 0.0));
        assert_eq!(s.count(), 4);
    }

    #[test]
    fn zero_block_and_empty_block() {
        let s = MomentSums::accumulate(&[[c(0.0, 0.0); 2]; 5]).unwrap();
        assert!(s.raw().iter().all(|z| *z == c(0.0, 0.0)));
        assert!(MomentSums::accumulate(&[]).is_err());
    }

    #[test]
    fn accumulate_is_additive() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_block(&mut rng, 37);
        let b = random_block(&mut rng, 53);
        let whole: Vec<Sample> = a.iter().chain(&b).copied().collect();
        let joined = MomentSums::accumulate(&a).unwrap() + MomentSums::accumulate(&b).unwrap();
        let direct = MomentSums::accumulate(&whole).unwrap();
        assert_eq!(joined.count(), direct.count());
        assert!(max_rel(&direct.raw(), &joined.raw()) < 1e-12);
    }

    #[test]
    fn slide_no_op_and_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w = random_block(&mut rng, 100);
        let mut s = MomentSums::accumulate(&w).unwrap();
        let before = s;
        s.slide_update(&w[..20], &w[..20]).unwrap();
        assert!(max_rel(&before.raw(), &s.raw()) < 1e-12);
        assert!(s.slide_update(&w[..], &w[..]).is_err());
        assert!(s.slide_update(&w[..3], &w[..4]).is_err());
    }

    #[test]
    fn slide_matches_from_scratch() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data = random_block(&mut rng, 120);
        let mut s = MomentSums::accumulate(&data[..100]).unwrap();
        s.slide_update(&data[..20], &data[100..120]).unwrap();
        let fresh = MomentSums::accumulate(&data[20..120]).unwrap();
        assert_eq!(s.count(), 100);
        assert!(max_rel(&fresh.raw(), &s.raw()) < 1e-9);
    }

    #[test]
    fn long_run_slide_drift() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (n, d, steps) = (100, 20, 50);
        let data = random_block(&mut rng, n + d * steps);
        let mut s = MomentSums::accumulate(&data[..n]).unwrap();
        for k in 0..steps {
            s.slide_update(&data[k * d..(k + 1) * d], &data[n + k * d..n + (k + 1) * d])
                .unwrap();
        }
        let fresh = MomentSums::accumulate(&data[d * steps..]).unwrap();
        assert!(max_rel(&fresh.raw(), &s.raw()) < 1e-7);
    }

    #[test]
    fn symmetry_map_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = MomentSums::accumulate(&random_block(&mut rng, 64)).unwrap();
        let q = s.cumulants().unwrap();
        assert_eq!(q.q(2), q.q(3).conj());
        assert_eq!(q.q(2), q.q(5).conj());
        assert_eq!(q.q(2), q.q(9));
        assert_eq!(q.q(4), q.q(6));
        assert_eq!(q.q(4), q.q(11));
        assert_eq!(q.q(4), q.q(13));
        assert_eq!(q.q(7), q.q(10).conj());
        assert_eq!(q.q(8), q.q(15));
        assert_eq!(q.q(8), q.q(12).conj());
        assert_eq!(q.q(8), q.q(14).conj());
        assert_eq!(q.q(1).im, 0.0);
        assert_eq!(q.q(16).im, 0.0);
        assert_eq!(q.r[0][1], q.r[1][0].conj());
    }

    /// Direct cumulant from the definition on raw samples.
    fn brute_cum(block: &[Sample], i: usize, j: usize, k: usize, l: usize) -> Complex64 {
        let n = block.len() as f64;
        let e = |f: &dyn Fn(&Sample) -> Complex64| block.iter().map(f).sum::<Complex64>() / n;
        let m4 = e(&|y| y[i] * y[j].conj() * y[k].conj() * y[l]);
        m4 - e(&|y| y[i] * y[j].conj()) * e(&|y| y[k].conj() * y[l])
            - e(&|y| y[i] * y[k].conj()) * e(&|y| y[j].conj() * y[l])
            - e(&|y| y[i] * y[l]) * e(&|y| y[j].conj() * y[k].conj())
    }

    #[test]
    fn all_sixteen_match_definition() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let block = random_block(&mut rng, 200);
        let q = MomentSums::accumulate(&block).unwrap().cumulants().unwrap();
        for m in 0..16 {
            let (i, j, k, l) = (m >> 3 & 1, m >> 2 & 1, m >> 1 & 1, m & 1);
            let expected = brute_cum(&block, i, j, k, l);
            assert!(
                (q.cum(i, j, k, l) - expected).norm() < 1e-12,
                "Q({}) mismatch",
                m + 1
            );
        }
    }

    #[test]
    fn gaussian_cumulants_vanish() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut g = || {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            c(re, im) * std::f64::consts::FRAC_1_SQRT_2
        };
        let block: Vec<Sample> = (0..20_000).map(|_| [g(), g()]).collect();
        let q = MomentSums::accumulate(&block).unwrap().cumulants().unwrap();
        for m in 1..=16 {
            assert!(q.q(m).norm() <= 0.05, "Q({m}) = {}", q.q(m));
        }
    }

    #[test]
    fn uniform_kurtosis() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let block: Vec<Sample> = (0..50_000)
            .map(|_| [c(rng.gen_range(-1.0..1.0), 0.0), c(rng.gen_range(-1.0..1.0), 0.0)])
            .collect();
        let q = MomentSums::accumulate(&block).unwrap().cumulants().unwrap();
        // E x^4 = 1/5, E x^2 = 1/3: kurt = 1/5 - 3/9
        assert!((q.q(1).re + 2.0 / 15.0).abs() < 0.01, "{}", q.q(1));
        assert!((q.q(16).re + 2.0 / 15.0).abs() < 0.01);
        assert!(q.q(4).norm() < 0.01);
    }

    #[test]
    fn fully_dependent_channels() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let block: Vec<Sample> = random_block(&mut rng, 300)
            .into_iter()
            .map(|y| [y[0], y[0]])
            .collect();
        let q = MomentSums::accumulate(&block).unwrap().cumulants().unwrap();
        assert!((q.q(4) - q.q(1)).norm() < 1e-12);
    }

    #[test]
    fn cumulants_need_four_samples() {
        let s = MomentSums::accumulate(&[[c(1.0, 0.0), c(0.0, 1.0)]; 3]).unwrap();
        assert!(s.cumulants().is_err());
    }

    #[test]
    fn cov_cases() {
        assert_eq!(cov(&[2.0; 5], &[3.0; 5]).unwrap(), 0.0);
        let a = [1.0, -1.0, 1.0, -1.0];
        assert!((cov(&a, &a).unwrap() - 1.0).abs() < 1e-15);
        assert!(cov(&a, &a[..3]).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x: Vec<f64> = (0..10_000).map(|_| rng.sample(StandardNormal)).collect();
        let y: Vec<f64> = (0..10_000).map(|_| rng.sample(StandardNormal)).collect();
        let bound = 0.05 * cov(&x, &x).unwrap().sqrt() * cov(&y, &y).unwrap().sqrt();
        assert!(cov(&x, &y).unwrap().abs() <= bound);
    }

    #[test]
    fn cov_complex_conjugates_second_argument() {
        let a = [c(1.0, 1.0), c(-1.0, 0.0), c(0.0, -1.0)];
        let b = [c(0.0, 1.0), c(2.0, 0.0), c(1.0, 1.0)];
        let ab = cov_complex(&a, &b).unwrap();
        let ba = cov_complex(&b, &a).unwrap();
        assert!((ab - ba.conj()).norm() < 1e-15);
    }

    #[test]
    fn rho_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a: Vec<f64> = (0..500).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let neg: Vec<f64> = a.iter().map(|v| -v).collect();
        assert!((rho(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert!((rho(&a, &neg).unwrap() + 1.0).abs() < 1e-12);

        let m = 1024;
        let s: Vec<f64> = (0..m).map(|t| (2.0 * PI * 8.0 * t as f64 / m as f64).sin()).collect();
        let co: Vec<f64> = (0..m).map(|t| (2.0 * PI * 8.0 * t as f64 / m as f64).cos()).collect();
        assert!(rho(&s, &co).unwrap().abs() <= 0.01);

        assert!(matches!(rho(&[0.5; 10], &a[..10]), Err(Error::Degenerate(_))));
        assert!(matches!(rho(&[0.0; 10], &a[..10]), Err(Error::Degenerate(_))));
    }

    #[test]
    fn maxlag_recovers_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let base: Vec<f64> = (0..600).map(|_| rng.sample(StandardNormal)).collect();
        let a = base[10..510].to_vec();
        for k0 in [-7isize, 0, 5, 20] {
            let start = (10 + k0) as usize;
            let b = base[start..start + 500].to_vec();
            // b(tau) = a(tau + k0), so rho(a(tau), b(tau - k0)) = 1
            let r = rho_maxlag(&a, &b, 20).unwrap();
            assert!((r - 1.0).abs() < 1e-9, "shift {k0}: {r}");
        }
        assert!(rho_maxlag(&a[..40], &a[..40], 20).is_err());
    }

    #[test]
    fn maxlag_independent_is_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let a: Vec<f64> = (0..20_000).map(|_| rng.sample(StandardNormal)).collect();
        let b: Vec<f64> = (0..20_000).map(|_| rng.sample(StandardNormal)).collect();
        assert!(rho_maxlag(&a, &b, 20).unwrap() <= 0.1);
    }

    #[test]
    fn best_lag_sign() {
        let a: Vec<f64> = (0..200).map(|t| ((t * 37 % 101) as f64).sin()).collect();
        let neg: Vec<f64> = a.iter().map(|v| -v).collect();
        let (lag, r) = best_lag(&a, &neg, 5).unwrap();
        assert_eq!(lag, 0);
        assert!((r + 1.0).abs() < 1e-12);
    }

    #[test]
    fn envelope_constant_and_zero() {
        let env = display_envelope(&vec![0.5; 4000], 16_000.0).unwrap();
        assert!(env.iter().all(|v| (v - 1.0).abs() < 1e-9));
        let zero = display_envelope(&vec![0.0; 1000], 16_000.0).unwrap();
        assert!(zero.iter().all(|v| *v == 0.0));
        assert!(display_envelope(&[1.0; 10], 150.0).is_err());
    }

    #[test]
    fn envelope_of_tone_is_flat() {
        let fs = 16_000.0;
        let x: Vec<f64> = (0..16_000).map(|k| (2.0 * PI * 1000.0 * k as f64 / fs).sin()).collect();
        let env = display_envelope(&x, fs).unwrap();
        let inner = &env[400..env.len() - 400];
        let (lo, hi) = inner
            .iter()
            .fold((f64::MAX, f64::MIN), |(l, h), v| (l.min(*v), h.max(*v)));
        assert!((hi - lo) / hi <= 0.05, "ripple {}", (hi - lo) / hi);
    }

    #[test]
    fn envelope_tracks_modulation() {
        let fs = 16_000.0;
        let truth: Vec<f64> = (0..32_000)
            .map(|k| 1.0 + 0.5 * (2.0 * PI * 5.0 * k as f64 / fs).sin())
            .collect();
        let x: Vec<f64> = truth
            .iter()
            .enumerate()
            .map(|(k, a)| a * (2.0 * PI * 1000.0 * k as f64 / fs).sin())
            .collect();
        let env = display_envelope(&x, fs).unwrap();
        assert!(rho(&env, &truth).unwrap() >= 0.95);
    }
}
