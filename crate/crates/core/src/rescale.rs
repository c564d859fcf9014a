//! Scaling of the demixing rows and construction of time-domain filters.
//!
//! Each separated component is only determined up to a complex gain per bin.
//! The gains `lambda_i(w)` are chosen by weighted least squares so that the
//! inverse transform of row `i` of `lambda_i(w) H^-1(w)` has little energy
//! at large lags; `lambda_i(0)` is fixed to 1 and `lambda_i(1/2)` is real.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jade::CMatrix;
use crate::signal_io::TimeSeries;
use crate::spectral::{mirror_half, SpectralTransform};

/// Relative Tikhonov weight used when the least-squares system is close to
/// singular.
pub const TIKHONOV_RELATIVE: f64 = 1e-10;
/// Condition-number bound of the normal system above which regularization
/// kicks in.
pub const CONDITION_LIMIT: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingOptions {
    pub beta: f64,
    pub q: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScalingSolution {
    /// `lambda(b)` for `b in 0..=T/2`; `lambda(0) = 1`, `lambda(T/2)` real.
    pub lambda: Vec<Complex64>,
    /// `sum_{tau >= q} (beta^tau h(tau))^2` summed over the row entries.
    pub objective: f64,
    /// Same objective with every gain equal to one.
    pub baseline_objective: f64,
    pub regularized: bool,
    /// Set when the solve did not improve on unit gains and was discarded.
    pub fell_back: bool,
}

struct Twiddles {
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl Twiddles {
    fn new(t: usize) -> Self {
        let step = 2.0 * std::f64::consts::PI / t as f64;
        Twiddles {
            cos: (0..t).map(|k| (step * k as f64).cos()).collect(),
            sin: (0..t).map(|k| (step * k as f64).sin()).collect(),
        }
    }

    /// `e^{+2 pi i b tau / T}`
    fn at(&self, b: usize, tau: usize) -> Complex64 {
        let k = (b * tau) % self.cos.len();
        Complex64::new(self.cos[k], self.sin[k])
    }
}

/// Time-domain value of the real sequence with half spectrum
/// `lambda(b) h(b)` at lag `tau`.
fn synthesize(row: &[Complex64], lambda: &[Complex64], tw: &Twiddles, tau: usize) -> f64 {
    let t = tw.cos.len();
    let nyq = t / 2;
    let mut v = (lambda[0] * row[0]).re;
    v += (lambda[nyq] * row[nyq]).re * if tau.is_multiple_of(2) { 1.0 } else { -1.0 };
    for b in 1..nyq {
        v += 2.0 * (lambda[b] * row[b] * tw.at(b, tau)).re;
    }
    v / t as f64
}

fn weighted_objective(rows: &[Vec<Complex64>], lambda: &[Complex64], tw: &Twiddles, opts: &ScalingOptions) -> f64 {
    let t = tw.cos.len();
    let mut total = 0.0;
    for row in rows {
        for tau in opts.q..t {
            let v = opts.beta.powi(tau as i32) * synthesize(row, lambda, tw, tau);
            total += v * v;
        }
    }
    total
}

/// Gains for one demixing row. `entries[j][b]` is `H^-1_ij` at bin `b` for
/// `b in 0..=T/2`; bins flagged in `fixed` keep `lambda = 1`.
pub fn solve_scaling(
    entries: &[Vec<Complex64>],
    fixed: &[bool],
    opts: &ScalingOptions,
) -> Result<ScalingSolution> {
    let half = entries
        .first()
        .map(Vec::len)
        .ok_or_else(|| Error::InvalidInput("empty demixing row".into()))?;
    if half < 3 || entries.iter().any(|e| e.len() != half) || fixed.len() != half {
        return Err(Error::DimensionMismatch(format!(
            "row entries and fixed flags must all cover {half} bins"
        )));
    }
    let t = 2 * (half - 1);
    if !(opts.beta > 1.0) || opts.q < 1 || opts.q >= t {
        return Err(Error::InvalidInput(format!(
            "need beta > 1 and 1 <= q < T (beta = {}, q = {}, T = {t})",
            opts.beta, opts.q
        )));
    }
    if entries.iter().flatten().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::InvalidInput("non-finite demixing entry".into()));
    }
    let nyq = t / 2;
    let tw = Twiddles::new(t);
    let ones = vec![Complex64::new(1.0, 0.0); half];
    let baseline_objective = weighted_objective(entries, &ones, &tw, opts);

    // unknown columns: (bin, is_imaginary_part)
    let mut columns: Vec<(usize, bool)> = Vec::with_capacity(t - 1);
    for b in 1..nyq {
        if !fixed[b] {
            columns.push((b, false));
            columns.push((b, true));
        }
    }
    if !fixed[nyq] {
        columns.push((nyq, false));
    }
    if columns.is_empty() {
        return Ok(ScalingSolution {
            lambda: ones,
            objective: baseline_objective,
            baseline_objective,
            regularized: false,
            fell_back: false,
        });
    }

    // Weights beta^tau are divided by beta^(T-1); this does not move the
    // minimizer and keeps the entries within floating-point range.
    let rows_per_entry = t - opts.q;
    let m = entries.len() * rows_per_entry;
    let mut a = DMatrix::<f64>::zeros(m, columns.len());
    let mut rhs = DVector::<f64>::zeros(m);
    let mut const_lambda = ones.clone();
    for (b, fixed) in fixed.iter().enumerate() {
        if !fixed && b > 0 {
            const_lambda[b] = Complex64::new(0.0, 0.0);
        }
    }
    let inv_t = 1.0 / t as f64;
    for (j, row) in entries.iter().enumerate() {
        for tau in opts.q..t {
            let r = j * rows_per_entry + (tau - opts.q);
            let w = opts.beta.powi(tau as i32 - (t as i32 - 1));
            rhs[r] = -w * synthesize(row, &const_lambda, &tw, tau);
            for (c, &(b, imag)) in columns.iter().enumerate() {
                let v = if b == nyq {
                    row[nyq].re * if tau % 2 == 0 { 1.0 } else { -1.0 } * inv_t
                } else {
                    let z = row[b] * tw.at(b, tau);
                    if imag {
                        -2.0 * z.im * inv_t
                    } else {
                        2.0 * z.re * inv_t
                    }
                };
                a[(r, c)] = w * v;
            }
        }
    }

    let (x, regularized) = least_squares(a, rhs);
    let mut lambda = ones.clone();
    for (c, &(b, imag)) in columns.iter().enumerate() {
        if imag {
            lambda[b].im = x[c];
        } else {
            lambda[b].re = x[c];
        }
    }
    if regularized {
        log::warn!("scaling system is ill-conditioned; using a regularized solve");
    }
    let objective = weighted_objective(entries, &lambda, &tw, opts);
    if !objective.is_finite() || objective > baseline_objective {
        log::warn!(
            "scaling solve did not improve on unit gains ({objective:e} > {baseline_objective:e}); keeping unit gains"
        );
        return Ok(ScalingSolution {
            lambda: ones,
            objective: baseline_objective,
            baseline_objective,
            regularized,
            fell_back: true,
        });
    }
    Ok(ScalingSolution {
        lambda,
        objective,
        baseline_objective,
        regularized,
        fell_back: false,
    })
}

/// Least squares by Householder QR on column-equilibrated data, with a
/// Tikhonov-augmented retry when the triangular factor is badly conditioned.
fn least_squares(mut a: DMatrix<f64>, rhs: DVector<f64>) -> (DVector<f64>, bool) {
    let cols = a.ncols();
    let mut scale = vec![1.0; cols];
    for (c, s) in scale.iter_mut().enumerate() {
        let norm = a.column(c).norm();
        if norm > 0.0 {
            *s = 1.0 / norm;
            a.column_mut(c).scale_mut(*s);
        }
    }
    let solve = |a: DMatrix<f64>, mut b: DVector<f64>| -> Option<(DVector<f64>, f64)> {
        let n = a.ncols();
        let qr = a.qr();
        qr.q_tr_mul(&mut b);
        let r = qr.r();
        let diag: Vec<f64> = (0..n).map(|i| r[(i, i)].abs()).collect();
        let hi = diag.iter().cloned().fold(0.0, f64::max);
        let lo = diag.iter().cloned().fold(f64::INFINITY, f64::min);
        let cond2 = if lo > 0.0 { (hi / lo).powi(2) } else { f64::INFINITY };
        let x = r.solve_upper_triangular(&b.rows(0, n).into_owned())?;
        Some((x, cond2))
    };

    let plain = if a.nrows() >= cols { solve(a.clone(), rhs.clone()) } else { None };
    let (mut x, regularized) = match plain {
        Some((x, cond2)) if cond2 <= CONDITION_LIMIT && x.iter().all(|v| v.is_finite()) => (x, false),
        _ => {
            // Columns have unit norm, so the largest squared singular value is
            // between 1 and the column count.
            let alpha = (TIKHONOV_RELATIVE * cols as f64).sqrt();
            let m = a.nrows();
            let mut aug = DMatrix::<f64>::zeros(m + cols, cols);
            aug.view_mut((0, 0), (m, cols)).copy_from(&a);
            for c in 0..cols {
                aug[(m + c, c)] = alpha;
            }
            let mut b = DVector::<f64>::zeros(m + cols);
            b.rows_mut(0, m).copy_from(&rhs);
            let x = solve(aug, b)
                .map(|(x, _)| x)
                .unwrap_or_else(|| DVector::zeros(cols));
            (x, true)
        }
    };
    for (c, s) in scale.iter().enumerate() {
        x[c] *= s;
    }
    (x, regularized)
}

/// Real FIR demixing filters `h[i][j]` of length `T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FilterBankDoc", into = "FilterBankDoc")]
pub struct DemixFilterBank {
    t: usize,
    h: Vec<Vec<Vec<f64>>>,
}

#[derive(Serialize, Deserialize)]
struct FilterBankDoc {
    #[serde(rename = "T")]
    t: usize,
    h: Vec<Vec<f64>>,
}

impl From<DemixFilterBank> for FilterBankDoc {
    fn from(bank: DemixFilterBank) -> Self {
        FilterBankDoc {
            t: bank.t,
            h: bank.h.into_iter().flatten().collect(),
        }
    }
}

impl TryFrom<FilterBankDoc> for DemixFilterBank {
    type Error = Error;

    fn try_from(doc: FilterBankDoc) -> Result<Self> {
        let n = (doc.h.len() as f64).sqrt().round() as usize;
        if n * n != doc.h.len() || n == 0 {
            return Err(Error::InvalidInput(format!(
                "{} filter sequences is not a square count",
                doc.h.len()
            )));
        }
        let mut it = doc.h.into_iter();
        let h = (0..n).map(|_| it.by_ref().take(n).collect()).collect();
        DemixFilterBank::new(h, doc.t)
    }
}

impl DemixFilterBank {
    pub fn new(h: Vec<Vec<Vec<f64>>>, t: usize) -> Result<Self> {
        let n = h.len();
        if n == 0 || h.iter().any(|row| row.len() != n) {
            return Err(Error::DimensionMismatch("filter bank must be n x n".into()));
        }
        if h.iter().flatten().any(|f| f.len() != t) {
            return Err(Error::DimensionMismatch(format!("every filter must have {t} taps")));
        }
        if h.iter().flatten().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite filter coefficient".into()));
        }
        Ok(DemixFilterBank { t, h })
    }

    /// `h_ii = delta`, `h_ij = 0`.
    pub fn identity(n: usize, t: usize) -> Self {
        let h = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        let mut f = vec![0.0; t];
                        if i == j {
                            f[0] = 1.0;
                        }
                        f
                    })
                    .collect()
            })
            .collect();
        DemixFilterBank { t, h }
    }

    pub fn n(&self) -> usize {
        self.h.len()
    }

    pub fn frame_len(&self) -> usize {
        self.t
    }

    pub fn filter(&self, i: usize, j: usize) -> &[f64] {
        &self.h[i][j]
    }

    pub fn filters(&self) -> &[Vec<Vec<f64>>] {
        &self.h
    }

    /// Fraction of row `i`'s energy at lags `tau >= T/2`.
    pub fn support_metric(&self, i: usize) -> f64 {
        let (mut tail, mut total) = (0.0, 0.0);
        for f in &self.h[i] {
            for (tau, v) in f.iter().enumerate() {
                total += v * v;
                if tau >= self.t / 2 {
                    tail += v * v;
                }
            }
        }
        if total > 0.0 {
            tail / total
        } else {
            0.0
        }
    }

    pub fn support_metrics(&self) -> Vec<f64> {
        (0..self.n()).map(|i| self.support_metric(i)).collect()
    }

    pub fn peak(&self, i: usize, j: usize) -> f64 {
        self.h[i][j].iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Row `i` of the result is `signs[i]` times row `sigma[i]` of `self`.
    pub fn permute_rows(&self, sigma: &[usize], signs: &[f64]) -> Result<Self> {
        let n = self.n();
        let mut seen = vec![false; n];
        if sigma.len() != n || signs.len() != n || sigma.iter().any(|&s| s >= n || std::mem::replace(&mut seen[s], true)) {
            return Err(Error::InvalidInput(format!("{sigma:?} is not a permutation of 0..{n}")));
        }
        let h = sigma
            .iter()
            .zip(signs)
            .map(|(&s, &g)| {
                self.h[s]
                    .iter()
                    .map(|f| f.iter().map(|v| g * v).collect())
                    .collect()
            })
            .collect();
        Ok(DemixFilterBank { t: self.t, h })
    }

    fn scale_rows(&self, gains: &[f64]) -> Self {
        let h = self
            .h
            .iter()
            .zip(gains)
            .map(|(row, &g)| row.iter().map(|f| f.iter().map(|v| g * v).collect()).collect())
            .collect();
        DemixFilterBank { t: self.t, h }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Time-domain filters `h_ij = ifft(lambda_i H^-1_ij)`. `h_inv[b]` is the
/// demixing matrix at bin `b in 0..=T/2`, `lambdas[i]` the gains of row `i`.
/// Returns the bank and the largest imaginary residue of the inverse
/// transforms.
pub fn build_filter_bank(h_inv: &[CMatrix], lambdas: &[Vec<Complex64>]) -> Result<(DemixFilterBank, f64)> {
    let half = h_inv.len();
    if half < 2 {
        return Err(Error::InvalidInput("need at least the DC and Nyquist bins".into()));
    }
    let t = 2 * (half - 1);
    let n = h_inv[0].nrows();
    if h_inv.iter().any(|m| m.nrows() != n || m.ncols() != n) || lambdas.len() != n || lambdas.iter().any(|l| l.len() != half) {
        return Err(Error::DimensionMismatch("demixing matrices and gains disagree in shape".into()));
    }
    for (b, m) in [(0, &h_inv[0]), (half - 1, &h_inv[half - 1])] {
        let worst = m.iter().fold(0.0f64, |w, z| w.max(z.im.abs()));
        if worst > crate::spectral::SYMMETRY_TOL {
            return Err(Error::Asymmetric { bin: b, deviation: worst });
        }
    }
    if lambdas.iter().any(|l| l[0].im.abs() > crate::spectral::SYMMETRY_TOL || l[half - 1].im.abs() > crate::spectral::SYMMETRY_TOL) {
        return Err(Error::InvalidInput("DC and Nyquist gains must be real".into()));
    }
    let fft = SpectralTransform::new(t);
    let mut residue = 0.0f64;
    let mut h = vec![vec![Vec::new(); n]; n];
    for i in 0..n {
        for j in 0..n {
            let spectrum: Vec<Complex64> = (0..half).map(|b| lambdas[i][b] * h_inv[b][(i, j)]).collect();
            let (taps, r) = fft.inverse_with_residue(&mirror_half(&spectrum, t))?;
            residue = residue.max(r);
            h[i][j] = taps;
        }
    }
    Ok((DemixFilterBank::new(h, t)?, residue))
}

/// Rescales each row of `new` by a positive `gamma_i` so that
/// `max |h_ii|` matches `prev`. Returns the bank and the gains.
pub fn continuity_normalize(new: &DemixFilterBank, prev: &DemixFilterBank) -> Result<(DemixFilterBank, Vec<f64>)> {
    if new.n() != prev.n() || new.t != prev.t {
        return Err(Error::DimensionMismatch("filter banks differ in shape".into()));
    }
    let gains = (0..new.n())
        .map(|i| {
            let peak = new.peak(i, i);
            if peak > 0.0 {
                Ok(prev.peak(i, i) / peak)
            } else {
                Err(Error::Degenerate(format!("diagonal filter h_{i}{i} is identically zero")))
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok((new.scale_rows(&gains), gains))
}

/// Like [`continuity_normalize`], after applying `sigma`/`signs` from the
/// time alignment.
pub fn align_and_normalize(
    new: &DemixFilterBank,
    prev: &DemixFilterBank,
    sigma: &[usize],
    signs: &[f64],
) -> Result<(DemixFilterBank, Vec<f64>)> {
    continuity_normalize(&new.permute_rows(sigma, signs)?, prev)
}

/// Outputs `s_i(k) = sum_j sum_tau h_ij(tau) x_j(k - tau)` for
/// `k in start..end`, with zeros before the start of `mix`.
pub fn apply_demix_range(mix: &TimeSeries, bank: &DemixFilterBank, start: usize, end: usize) -> Result<Vec<Vec<f64>>> {
    if mix.num_channels() != bank.n() {
        return Err(Error::DimensionMismatch(format!(
            "{} input channels for a {}-channel filter bank",
            mix.num_channels(),
            bank.n()
        )));
    }
    if start > end || end > mix.len() {
        return Err(Error::InvalidInput(format!(
            "range {start}..{end} outside a signal of {} samples",
            mix.len()
        )));
    }
    let out = (0..bank.n())
        .map(|i| {
            let mut y = vec![0.0; end - start];
            for (j, f) in bank.h[i].iter().enumerate() {
                let x = mix.channel(j);
                for (tau, &c) in f.iter().enumerate() {
                    if c == 0.0 {
                        continue;
                    }
                    let first = start.max(tau);
                    for k in first..end {
                        y[k - start] += c * x[k - tau];
                    }
                }
            }
            y
        })
        .collect();
    Ok(out)
}

/// Causal demixing of a whole recording, output trimmed to the input length.
pub fn apply_demix(mix: &TimeSeries, bank: &DemixFilterBank) -> Result<TimeSeries> {
    if mix.len() < bank.t {
        return Err(Error::TooShort { needed: bank.t, got: mix.len() });
    }
    let out = apply_demix_range(mix, bank, 0, mix.len())?;
    TimeSeries::new(out, mix.sample_rate())
}
